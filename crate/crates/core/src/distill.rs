//! Multi-teacher distillation into a text-only student.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use mmkd_autograd::{Forward, Graph, ParamStore, Var};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Manifest};
use crate::classifier::{ClassifierSpec, ExtraInputs, FusionMode, HeadConfig, SequenceClassifier};
use crate::corpus::{Dataset, Post, Split};
use crate::encoder::{BackboneInit, EncoderBackend, TOY_BACKEND};
use crate::error::{Error, Result};
use crate::hparams::{check_choice, check_range, DROPOUTS, STUDENT_EPOCHS, STUDENT_LRS, WEIGHT_DECAYS};
use crate::metrics::MetricsReport;
use crate::teacher::{softmax, Modality, Teacher, TeacherOutput};
use crate::text_teacher::{dataset_vocab, evaluate_posts};
use crate::train::{fit, ItemLoss, LoopConfig, TrainLog};

const KIND: &str = "student";
pub const PROB_FLOOR: f64 = 1e-12;

/// Component-wise mean of the teachers' distributions.
pub fn teacher_soft_targets<V: AsRef<[f64]>>(outputs: &[V]) -> Result<Vec<f64>> {
    let first = outputs.first().ok_or_else(|| Error::Config("soft targets need at least one teacher".into()))?;
    let c = first.as_ref().len();
    let mut acc = vec![0.0; c];
    for o in outputs {
        let o = o.as_ref();
        if o.len() != c {
            return Err(Error::ClassMismatch { expected: c, found: o.len() });
        }
        for (a, v) in acc.iter_mut().zip(o) {
            *a += v;
        }
    }
    let k = outputs.len() as f64;
    Ok(acc.into_iter().map(|a| a / k).collect())
}

/// Re-softens a distribution as if its logits were divided by `t`.
pub fn soften(probs: &[f64], t: f64) -> Vec<f64> {
    if t == 1.0 {
        return probs.to_vec();
    }
    softmax(&probs.iter().map(|p| p.max(PROB_FLOOR).ln() / t).collect::<Vec<_>>())
}

/// `KL(soft ‖ student)` in nats.
pub fn kd_loss(student: &[f64], soft: &[f64], temperature: f64) -> f64 {
    let (s, t) = (soften(student, temperature), soften(soft, temperature));
    t.iter().zip(&s).filter(|(pt, _)| **pt > 0.0).map(|(pt, ps)| pt * (pt / ps.max(PROB_FLOOR)).ln()).sum()
}

pub fn task_loss(student: &[f64], gold: usize) -> f64 {
    -student[gold].max(PROB_FLOOR).ln()
}

pub fn batch_task_loss(batch: &[(&[f64], usize)]) -> f64 {
    batch.iter().map(|(p, y)| task_loss(p, *y)).sum::<f64>() / batch.len() as f64
}

/// Graph form of [`task_loss`] on student logits `z` (1×C).
pub fn task_loss_var(g: &mut Graph, z: Var, gold: usize) -> Var {
    let lp = g.log_softmax_rows(z);
    let lp = g.clamp_min(lp, PROB_FLOOR.ln());
    let picked = g.pick(lp, &[(0, gold)]);
    g.scale(picked, -1.0)
}

/// Graph form of [`kd_loss`] on student logits `z` (1×C).
pub fn kd_loss_var(g: &mut Graph, z: Var, soft: &[f64], temperature: f64) -> Var {
    let t = soften(soft, temperature);
    let zt = g.scale(z, 1.0 / temperature);
    let lp = g.log_softmax_rows(zt);
    let lp = g.clamp_min(lp, PROB_FLOOR.ln());
    let weighted = g.mul_const(lp, Array2::from_shape_vec((1, t.len()), t.clone()).expect("row"));
    let cross = g.sum_all(weighted);
    let cross = g.scale(cross, -1.0);
    let neg_entropy: f64 = t.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum();
    let c = g.constant(Array2::from_elem((1, 1), neg_entropy));
    g.add(cross, c)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CachedPost {
    pub outputs: Vec<TeacherOutput>,
    #[serde(default)]
    pub embeddings: BTreeMap<Modality, Vec<f64>>,
}

/// Frozen-teacher predictions and embeddings per post id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherCache {
    pub classes: Vec<String>,
    pub posts: BTreeMap<String, CachedPost>,
}

impl TeacherCache {
    pub fn modalities(&self) -> BTreeSet<Modality> {
        self.posts.values().flat_map(|p| p.outputs.iter().map(|o| o.modality)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path).map_err(|e| Error::io(path, e))?)?)
    }

    fn entry(&self, post: &str, modality: Modality) -> Result<&CachedPost> {
        self.posts.get(post).ok_or_else(|| Error::MissingTeacherOutput { post: post.into(), modality: modality.name().into() })
    }

    pub fn output(&self, post: &str, modality: Modality) -> Result<&[f64]> {
        self.entry(post, modality)?
            .outputs
            .iter()
            .find(|o| o.modality == modality)
            .map(|o| o.probs.as_slice())
            .ok_or_else(|| Error::MissingTeacherOutput { post: post.into(), modality: modality.name().into() })
    }

    pub fn embedding(&self, post: &str, modality: Modality) -> Result<&[f64]> {
        self.entry(post, modality)?
            .embeddings
            .get(&modality)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingTeacherOutput { post: post.into(), modality: modality.name().into() })
    }

    /// Averaged targets over `teacher_set`, combined in modality order.
    pub fn soft_targets(&self, post: &str, teacher_set: &BTreeSet<Modality>) -> Result<Vec<f64>> {
        let outs = teacher_set.iter().map(|&m| self.output(post, m)).collect::<Result<Vec<_>>>()?;
        teacher_soft_targets(&outs)
    }
}

/// Runs every teacher over every post. Posts are scored in parallel.
pub fn build_teacher_cache(dataset: &Dataset, teachers: &[&dyn Teacher], with_embeddings: bool) -> Result<TeacherCache> {
    let c = dataset.num_classes();
    for t in teachers {
        if t.num_classes() != c {
            return Err(Error::ClassMismatch { expected: c, found: t.num_classes() });
        }
    }
    let score = |p: &Post| -> Result<(String, CachedPost)> {
        let mut entry = CachedPost::default();
        for t in teachers {
            let probs = t.predict_proba(p)?;
            if probs.len() != c {
                return Err(Error::ClassMismatch { expected: c, found: probs.len() });
            }
            entry.outputs.push(TeacherOutput { modality: t.modality(), probs });
            if with_embeddings {
                entry.embeddings.insert(t.modality(), t.embed(p)?);
            }
        }
        entry.outputs.sort_by_key(|o| o.modality);
        Ok((p.id.clone(), entry))
    };
    let posts = dataset.posts.par_iter().map(score).collect::<Result<Vec<_>>>()?;
    Ok(TeacherCache { classes: dataset.classes.clone(), posts: posts.into_iter().collect() })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentInit {
    #[default]
    Pretrained,
    /// Randomly initialised vanilla transformer.
    Vanilla,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub lambda_task: f64,
    pub lambda_kd: f64,
    pub temperature: f64,
    pub teacher_set: BTreeSet<Modality>,
    /// When false, fused students train on the task loss alone.
    pub kd_with_fusion: bool,
    pub fusion: FusionMode,
    pub init: StudentInit,
    pub backend: String,
    pub encoder_width: Option<usize>,
    pub head: HeadConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub override_ranges: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda_task: 1.0,
            lambda_kd: 1.0,
            temperature: 1.0,
            teacher_set: Modality::ALL.into_iter().collect(),
            kd_with_fusion: true,
            fusion: FusionMode::TextOnly,
            init: StudentInit::Pretrained,
            backend: TOY_BACKEND.into(),
            encoder_width: None,
            head: HeadConfig { n_layers: 2, n_heads: 2, dropout: 0.1, activation: mmkd_autograd::Activation::Gelu },
            lr: 5e-5,
            weight_decay: 0.0,
            epochs: 3,
            batch_size: 16,
            seed: 0,
            override_ranges: false,
        }
    }
}

impl DistillConfig {
    pub fn backend(&self) -> Result<EncoderBackend> {
        EncoderBackend::resolve(&self.backend, self.encoder_width)
    }

    pub fn kd_active(&self) -> bool {
        self.lambda_kd != 0.0 && (self.fusion == FusionMode::TextOnly || self.kd_with_fusion)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.teacher_set.is_empty() {
            return Err(Error::Config("teacher_set must not be empty".into()));
        }
        let o = self.override_ranges;
        check_choice("lr", self.lr, &STUDENT_LRS, o)?;
        check_choice("weight_decay", self.weight_decay, &WEIGHT_DECAYS, o)?;
        check_choice("dropout", self.head.dropout, &DROPOUTS, o)?;
        check_range("epochs", self.epochs, STUDENT_EPOCHS, o)?;
        self.head.validate(self.backend()?.width)
    }
}

#[derive(Clone, Debug)]
pub struct Student {
    pub model: SequenceClassifier,
    pub store: ParamStore,
    pub spec: ClassifierSpec,
    pub config: DistillConfig,
    pub log: TrainLog,
}

#[derive(Serialize, Deserialize)]
struct SavedStudent {
    spec: ClassifierSpec,
    distill: DistillConfig,
}

/// Extra fused inputs for one post, read from the cache.
pub fn extras_for<'a>(cache: &'a TeacherCache, post: &str, mode: FusionMode) -> Result<ExtraInputs<'a>> {
    Ok(ExtraInputs {
        emotion: if mode.uses_emotion() { Some(cache.embedding(post, Modality::Emotion)?) } else { None },
        audio: if mode.uses_audio() { Some(cache.embedding(post, Modality::Audio)?) } else { None },
    })
}

impl Student {
    pub fn build(dataset: &Dataset, cache: &TeacherCache, cfg: &DistillConfig) -> Result<Self> {
        cfg.validate()?;
        let backend = cfg.backend()?;
        let audio_width = if cfg.fusion.uses_audio() {
            cache.posts.values().find_map(|p| p.embeddings.get(&Modality::Audio)).map_or(0, Vec::len)
        } else {
            0
        };
        let spec = ClassifierSpec {
            vocab: dataset_vocab(&backend, dataset),
            backend,
            init: match cfg.init {
                StudentInit::Pretrained => BackboneInit::Pretrained,
                StudentInit::Vanilla => BackboneInit::Random { seed: cfg.seed },
            },
            head: cfg.head.clone(),
            num_classes: dataset.num_classes(),
            fusion: cfg.fusion,
            audio_width,
            seed: cfg.seed,
        };
        let mut store = ParamStore::new();
        let model = SequenceClassifier::build(&spec, &mut store, "student")?;
        Ok(Self { model, store, spec, config: cfg.clone(), log: TrainLog::default() })
    }

    pub fn predict(&self, text: &str, extras: ExtraInputs) -> Result<Vec<f64>> {
        Ok(softmax(&self.model.predict_logits(&self.store, text, extras)?))
    }

    pub fn predict_post(&self, post: &Post, cache: &TeacherCache) -> Result<Vec<f64>> {
        self.predict(&post.text, extras_for(cache, &post.id, self.config.fusion)?)
    }

    /// `(total, task, kd)` graph nodes for one post.
    pub fn loss_terms(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[String],
        label: usize,
        soft: Option<&[f64]>,
        extras: ExtraInputs,
        fwd: &mut Forward,
    ) -> Result<(Var, Var, Option<Var>)> {
        let z = self.model.logits(g, store, tokens, extras, fwd)?;
        let task = task_loss_var(g, z, label);
        let weighted_task = g.scale(task, self.config.lambda_task);
        match soft {
            Some(s) => {
                let kd = kd_loss_var(g, z, s, self.config.temperature);
                let weighted_kd = g.scale(kd, self.config.lambda_kd);
                Ok((g.add(weighted_task, weighted_kd), task, Some(kd)))
            }
            None => Ok((weighted_task, task, None)),
        }
    }

    pub fn save(&self, dir: &Path, classes: &[String]) -> Result<Manifest> {
        let saved = SavedStudent { spec: self.spec.clone(), distill: self.config.clone() };
        checkpoint::save(dir, Manifest::new(KIND, classes, self.config.seed, serde_json::to_value(saved)?), &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, loaded) = checkpoint::load(dir, KIND)?;
        let saved: SavedStudent = serde_json::from_value(manifest.config)?;
        let mut store = ParamStore::new();
        let model = SequenceClassifier::build(&saved.spec, &mut store, "student")?;
        checkpoint::restore_into(&mut store, &loaded)?;
        Ok(Self { model, store, spec: saved.spec, config: saved.distill, log: TrainLog::default() })
    }
}

/// Distils the cached teachers into a fresh student on `split.train`.
/// Step logs carry `parts = [task, kd]`, each a batch mean.
pub fn train_student(
    dataset: &Dataset,
    split: &Split,
    cache: &TeacherCache,
    cfg: &DistillConfig,
) -> Result<(Student, MetricsReport)> {
    let mut student = Student::build(dataset, cache, cfg)?;
    let train = dataset.select(&split.train);
    if train.is_empty() {
        return Err(Error::Config("student has no training posts".into()));
    }
    let kd = cfg.kd_active();
    let tokens: Vec<Vec<String>> = train.iter().map(|p| student.model.tokenize(&p.text)).collect();
    let soft: Vec<Option<Vec<f64>>> = train
        .iter()
        .map(|p| if kd { cache.soft_targets(&p.id, &cfg.teacher_set).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let extras: Vec<ExtraInputs> = train.iter().map(|p| extras_for(cache, &p.id, cfg.fusion)).collect::<Result<_>>()?;
    let val = dataset.select(&split.val);
    let val_tokens: Vec<Vec<String>> = val.iter().map(|p| student.model.tokenize(&p.text)).collect();
    let val_extras: Vec<ExtraInputs> = val.iter().map(|p| extras_for(cache, &p.id, cfg.fusion)).collect::<Result<_>>()?;
    let loop_cfg = LoopConfig::new(cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed);
    let loop_cfg = LoopConfig { weight_decay: cfg.weight_decay, ..loop_cfg };
    let mut store = student.store.clone();
    let s = &student;
    let log = fit(
        &mut store,
        train.len(),
        &loop_cfg,
        |st, i, fwd| {
            let mut g = Graph::new();
            let (total, task, kd) = s.loss_terms(&mut g, st, &tokens[i], train[i].label, soft[i].as_deref(), extras[i], fwd)?;
            let kd_value = kd.map_or(0.0, |k| g.scalar(k));
            Ok(ItemLoss { loss: g.scalar(total), parts: vec![g.scalar(task), kd_value], grads: g.backward(total, st) })
        },
        |st| {
            if val.is_empty() {
                return Ok(None);
            }
            let mut total = 0.0;
            for (i, p) in val.iter().enumerate() {
                let mut g = Graph::new();
                let z = s.model.logits(&mut g, st, &val_tokens[i], val_extras[i], &mut Forward::eval())?;
                let t = task_loss_var(&mut g, z, p.label);
                total += g.scalar(t);
            }
            Ok(Some(total / val.len() as f64))
        },
    )?;
    student.store = store;
    student.log = log;
    let report_on = if val.is_empty() { &train } else { &val };
    let report = evaluate_posts(report_on, &dataset.classes, |p| student.predict_post(p, cache))?;
    Ok((student, report))
}

/// Builds the cache from live teachers, then distils.
pub fn train_student_with_teachers(
    dataset: &Dataset,
    split: &Split,
    teachers: &[&dyn Teacher],
    cfg: &DistillConfig,
) -> Result<(Student, MetricsReport)> {
    let cache = build_teacher_cache(dataset, teachers, cfg.fusion != FusionMode::TextOnly)?;
    train_student(dataset, split, &cache, cfg)
}
