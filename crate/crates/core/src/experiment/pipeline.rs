//! Teachers → teacher-output cache → student → evaluation, per split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Resources};
use crate::audio::{build_audio_table, resolve_tts, train_audio_teacher, AudioTeacher};
use crate::checkpoint::{content_key, read_manifest};
use crate::corpus::{make_splits, Dataset, Split};
use crate::distill::{build_teacher_cache, train_student, DistillConfig, Student, TeacherCache};
use crate::emotion::{
    assign_emotions, build_graph, extract_emotion_embeddings, init_node_features, refine_with_encoder, train_emotion_gcn,
    train_emotion_teacher, EmotionFeatures, EmotionInput, EmotionTeacher,
};
use crate::error::{Error, Result};
use crate::metrics::{cross_validate, CvReport, MetricsReport};
use crate::teacher::{argmax, Modality, Teacher};
use crate::text_teacher::{build_text_teacher, dataset_vocab, evaluate_posts, finetune_teacher, TextTeacher};

const REPORT: &str = "report.json";

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path).map_err(|e| Error::io(path, e))?)?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Content-addressed directory of teacher checkpoints and output caches.
/// Teachers with identical inputs and configuration share one entry.
#[derive(Clone, Debug)]
pub struct TeacherStore {
    pub root: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub modality: Modality,
    pub key: String,
    pub checksum: String,
    /// Validation report from when the teacher was trained.
    pub report: MetricsReport,
}

pub enum LoadedTeacher {
    Text(TextTeacher),
    Emotion(EmotionTeacher),
    Audio(AudioTeacher),
}

impl LoadedTeacher {
    pub fn as_teacher(&self) -> &dyn Teacher {
        match self {
            LoadedTeacher::Text(t) => t,
            LoadedTeacher::Emotion(t) => t,
            LoadedTeacher::Audio(t) => t,
        }
    }
}

#[derive(Serialize)]
struct KeyInput<'a, C: Serialize> {
    modality: Modality,
    dataset: String,
    train: &'a [String],
    val: &'a [String],
    config: &'a C,
    extra: String,
}

impl TeacherStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, modality: Modality, key: &str) -> PathBuf {
        self.root.join(format!("{modality}-{key}"))
    }

    fn key<C: Serialize>(modality: Modality, dataset: &Dataset, split: &Split, config: &C, extra: String) -> Result<String> {
        content_key(&KeyInput { modality, dataset: dataset.fingerprint(), train: &split.train, val: &split.val, config, extra })
    }

    /// Loads the stored teacher for `modality`, training and saving it first
    /// when no entry exists. The returned teacher always comes from disk.
    pub fn obtain(
        &self,
        modality: Modality,
        cfg: &ExperimentConfig,
        res: &Resources,
        split: &Split,
    ) -> Result<(LoadedTeacher, TeacherSummary)> {
        let ds = &res.dataset;
        let key = match modality {
            Modality::Text => Self::key(modality, ds, split, &cfg.text_teacher, String::new()),
            Modality::Emotion => Self::key(modality, ds, split, &cfg.emotion, res.lexicon.to_tsv()),
            Modality::Audio => Self::key(modality, ds, split, &cfg.audio, String::new()),
        }?;
        let dir = self.dir(modality, &key);
        if !dir.join(REPORT).exists() {
            let report = match modality {
                Modality::Text => train_text(cfg, ds, split, &dir)?,
                Modality::Emotion => train_emotion(cfg, res, split, &dir)?,
                Modality::Audio => train_audio(cfg, ds, split, &dir)?,
            };
            // written last: its presence marks a complete entry
            write_json(&dir.join(REPORT), &report)?;
        }
        let teacher = match modality {
            Modality::Text => LoadedTeacher::Text(TextTeacher::load(&dir)?),
            Modality::Emotion => LoadedTeacher::Emotion(EmotionTeacher::load(&dir)?),
            Modality::Audio => LoadedTeacher::Audio(AudioTeacher::load(&dir)?),
        };
        let summary =
            TeacherSummary { modality, key, checksum: read_manifest(&dir)?.checksum, report: read_json(&dir.join(REPORT))? };
        Ok((teacher, summary))
    }

    /// Teacher outputs for every post, keyed by the teachers' checksums.
    pub fn cache(
        &self,
        dataset: &Dataset,
        teachers: &[(&dyn Teacher, &TeacherSummary)],
        with_embeddings: bool,
    ) -> Result<TeacherCache> {
        let sums: Vec<&str> = teachers.iter().map(|(_, s)| s.checksum.as_str()).collect();
        let key = content_key(&(dataset.fingerprint(), sums, with_embeddings))?;
        let path = self.root.join(format!("cache-{key}.json"));
        if !path.exists() {
            let live: Vec<&dyn Teacher> = teachers.iter().map(|(t, _)| *t).collect();
            build_teacher_cache(dataset, &live, with_embeddings)?.save(&path)?;
        }
        TeacherCache::load(&path)
    }
}

fn train_text(cfg: &ExperimentConfig, ds: &Dataset, split: &Split, dir: &Path) -> Result<MetricsReport> {
    let c = &cfg.text_teacher;
    let backend = c.backend()?;
    let teacher = build_text_teacher(&backend, &c.head, ds.num_classes(), dataset_vocab(&backend, ds), c.seed)?;
    let (teacher, report) = finetune_teacher(teacher, ds, split, c)?;
    teacher.save(dir, &ds.classes)?;
    Ok(report)
}

fn train_emotion(cfg: &ExperimentConfig, res: &Resources, split: &Split, dir: &Path) -> Result<MetricsReport> {
    let c = &cfg.emotion;
    let ds = &res.dataset;
    let backend = c.backend()?;
    let targets: Vec<_> = ds.posts.iter().map(|p| assign_emotions(p, &res.lexicon)).collect();
    let graph = build_graph(ds, c.window, |t| backend.tokenize(t))?;
    let features = init_node_features(&graph, ds, &backend);
    let graph = graph.with_features(features)?;
    let gcn = train_emotion_gcn(&graph, &targets, &c.gcn)?;
    let emb = extract_emotion_embeddings(&gcn, &graph);
    let features = match c.teacher.input {
        EmotionInput::Refined => EmotionFeatures::from_refined(refine_with_encoder(&emb, ds, &targets, &backend, &c.refine)?),
        EmotionInput::GcnStates => EmotionFeatures::from_gcn(&emb),
    };
    let teacher = train_emotion_teacher(features, ds, &split.train, &split.val, &c.teacher)?;
    teacher.save(dir, &ds.classes)?;
    report_on_val(ds, split, &teacher)
}

fn train_audio(cfg: &ExperimentConfig, ds: &Dataset, split: &Split, dir: &Path) -> Result<MetricsReport> {
    let c = &cfg.audio;
    let table = build_audio_table(ds, resolve_tts(&c.tts, c.tts_seed)?.as_ref())?;
    let teacher = train_audio_teacher(ds, &table, split, c)?;
    teacher.save(dir, &ds.classes)?;
    let ids = if split.val.is_empty() { &split.train } else { &split.val };
    evaluate_posts(&ds.select(ids), &ds.classes, |p| teacher.predict_spectrogram(&table[&p.id]))
}

fn report_on_val(ds: &Dataset, split: &Split, teacher: &dyn Teacher) -> Result<MetricsReport> {
    let ids = if split.val.is_empty() { &split.train } else { &split.val };
    evaluate_posts(&ds.select(ids), &ds.classes, |p| teacher.predict_proba(p))
}

/// Teachers a run needs: the distillation set plus whatever the student's
/// fusion mode reads embeddings from.
pub fn required_modalities(cfg: &ExperimentConfig) -> BTreeSet<Modality> {
    let mut m = cfg.teacher_set.clone();
    if cfg.distill.fusion.uses_emotion() {
        m.insert(Modality::Emotion);
    }
    if cfg.distill.fusion.uses_audio() {
        m.insert(Modality::Audio);
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub teachers: BTreeMap<Modality, TeacherSummary>,
    pub student_checksum: String,
    pub distill: DistillConfig,
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: Option<MetricsReport>,
    pub test_predictions: Vec<(String, usize)>,
}

impl SplitOutcome {
    /// Test report when the split has test posts, otherwise validation.
    pub fn headline(&self) -> &MetricsReport {
        self.test.as_ref().unwrap_or(&self.val)
    }
}

/// Teachers (from `store`), cache and a freshly distilled student.
pub fn prepare_teachers(
    cfg: &ExperimentConfig,
    res: &Resources,
    split: &Split,
    store: &TeacherStore,
) -> Result<(BTreeMap<Modality, TeacherSummary>, TeacherCache)> {
    let mut loaded = Vec::new();
    for m in required_modalities(cfg) {
        let stage = format!("{m}_teacher");
        loaded.push(store.obtain(m, cfg, res, split).map_err(|e| e.at_stage(stage))?);
    }
    let pairs: Vec<(&dyn Teacher, &TeacherSummary)> = loaded.iter().map(|(t, s)| (t.as_teacher(), s)).collect();
    let with_embeddings = cfg.distill.fusion != crate::classifier::FusionMode::TextOnly;
    let cache = store.cache(&res.dataset, &pairs, with_embeddings).map_err(|e| e.at_stage("teacher_cache"))?;
    Ok((loaded.into_iter().map(|(_, s)| (s.modality, s)).collect(), cache))
}

pub fn run_split(
    cfg: &ExperimentConfig,
    res: &Resources,
    split: &Split,
    out: &Path,
    store: &TeacherStore,
) -> Result<SplitOutcome> {
    let ds = &res.dataset;
    let (teachers, cache) = prepare_teachers(cfg, res, split, store)?;
    let (student, val) = train_student(ds, split, &cache, &cfg.distill).map_err(|e| e.at_stage("student"))?;
    let manifest = student.save(&out.join("student"), &ds.classes)?;
    write_json(&out.join("student_log.json"), &student.log)?;
    let outcome = evaluate_student(&student, ds, split, &cache, teachers, manifest.checksum, val)
        .map_err(|e| e.at_stage("evaluate"))?;
    write_json(&out.join("metrics.json"), &outcome)?;
    Ok(outcome)
}

fn evaluate_student(
    student: &Student,
    ds: &Dataset,
    split: &Split,
    cache: &TeacherCache,
    teachers: BTreeMap<Modality, TeacherSummary>,
    student_checksum: String,
    val: MetricsReport,
) -> Result<SplitOutcome> {
    let train = evaluate_posts(&ds.select(&split.train), &ds.classes, |p| student.predict_post(p, cache))?;
    let mut test_predictions = Vec::new();
    let test = if split.test.is_empty() {
        None
    } else {
        let posts = ds.select(&split.test);
        for p in &posts {
            test_predictions.push((p.id.clone(), argmax(&student.predict_post(p, cache)?)));
        }
        Some(evaluate_posts(&posts, &ds.classes, |p| student.predict_post(p, cache))?)
    };
    Ok(SplitOutcome { teachers, student_checksum, distill: student.config.clone(), train, val, test, test_predictions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunSummary {
    Holdout(SplitOutcome),
    CrossValidated(CvReport),
}

/// Full run. Writes under the config's output path:
/// `resolved_config.toml`, `splits.json`, `teachers/`, `student/`,
/// `metrics.json` (per fold under `fold-<k>/` when cross-validating).
pub fn run_experiment(config: &ExperimentConfig) -> Result<PathBuf> {
    let out = config.output_path();
    run_experiment_at(config, &out)?;
    Ok(out)
}

pub fn run_experiment_at(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let cfg = config.resolved();
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let res = Resources::load(&cfg)?;
    write_text(&out.join("resolved_config.toml"), &cfg.to_toml_string()?)?;
    let plan = make_splits(&res.dataset, cfg.seed).map_err(|e| e.at_stage("splits"))?;
    write_json(&out.join("splits.json"), &plan)?;
    let store = TeacherStore::new(out.join("teachers"));
    if !cfg.cross_validate {
        let outcome = run_split(&cfg, &res, &plan.splits[0], out, &store)?;
        return Ok(RunSummary::Holdout(outcome));
    }
    let report = cross_validate(&res.dataset, &plan, |k, split| {
        Ok(run_split(&cfg, &res, split, &out.join(format!("fold-{k}")), &store)?.test_predictions)
    })?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(RunSummary::CrossValidated(report))
}
