//! Spectrogram-patch transformer (AST-style) audio teacher.

use std::collections::BTreeMap;
use std::path::Path;

use mmkd_autograd::nn::{Linear, TransformerEncoder};
use mmkd_autograd::{Activation, Forward, Graph, ParamId, ParamStore, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{normalize_spectrogram, truncate_frames, MelExtractor, NormStats, Spectrogram, MEL_BINS};
use super::patches::{extract_patches, PatchGrid, PatchSequence};
use super::tts::{resolve_tts, synthesize_text, TtsBackend, TOY_TTS};
use crate::checkpoint::{self, Manifest};
use crate::corpus::{Dataset, Post, Split};
use crate::error::{Error, Result};
use crate::hparams::{check_choice, check_head, check_range, AUDIO_FACTORS, AUDIO_LRS, AUDIO_PATIENCE, DROPOUTS};
use crate::teacher::{Modality, Teacher};
use crate::train::{fit, ItemLoss, LoopConfig, Plateau, TrainLog};

const KIND: &str = "audio-teacher";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioTeacherConfig {
    pub tts: String,
    pub tts_seed: u64,
    pub patch_size: usize,
    pub width: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub batch_size: usize,
    pub max_frames: usize,
    pub seed: u64,
    pub override_ranges: bool,
}

impl Default for AudioTeacherConfig {
    fn default() -> Self {
        Self {
            tts: TOY_TTS.into(),
            tts_seed: 0,
            patch_size: 16,
            width: 24,
            n_layers: 8,
            n_heads: 4,
            activation: Activation::Gelu,
            dropout: 0.1,
            lr: 5e-5,
            weight_decay: 0.0,
            epochs: 25,
            patience: 5,
            plateau_patience: 4,
            plateau_factor: 0.5,
            batch_size: 32,
            max_frames: 1024,
            seed: 0,
            override_ranges: false,
        }
    }
}

impl AudioTeacherConfig {
    pub fn grid(&self) -> PatchGrid {
        PatchGrid::for_size(self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let o = self.override_ranges;
        check_head(self.n_layers, self.n_heads, self.width, self.dropout)?;
        check_choice("dropout", self.dropout, &DROPOUTS, o)?;
        check_choice("lr", self.lr, &AUDIO_LRS, o)?;
        check_range("plateau_patience", self.plateau_patience, AUDIO_PATIENCE, o)?;
        check_choice("plateau_factor", self.plateau_factor, &AUDIO_FACTORS, o)?;
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be positive".into()));
        }
        self.grid().validate(MEL_BINS)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AstModel {
    pub patch_embed: Linear,
    pub cls: ParamId,
    pub freq_pos: ParamId,
    pub time_pos: ParamId,
    pub encoder: TransformerEncoder,
    pub output: Linear,
    pub grid: PatchGrid,
    pub dropout: f64,
    pub max_frames: usize,
}

impl AstModel {
    pub fn build(cfg: &AudioTeacherConfig, num_classes: usize, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid();
        let d = cfg.width;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut table = |rows: usize| Array2::from_shape_simple_fn((rows, d), || normal.sample(&mut rng));
        let cls = store.add("ast.cls", table(1));
        let freq_pos = store.add("ast.freq_pos", table(grid.positions(MEL_BINS)));
        let time_pos = store.add("ast.time_pos", table(grid.positions(cfg.max_frames)));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa57);
        let patch_embed = Linear::new(store, "ast.patch_embed", grid.size * grid.size, d, &mut rng);
        let encoder =
            TransformerEncoder::new(store, "ast.encoder", cfg.n_layers, d, cfg.n_heads, 2 * d, cfg.activation, cfg.dropout, &mut rng)
                .map_err(|_| Error::IncompatibleHead { heads: cfg.n_heads, width: d })?;
        let output = Linear::new(store, "ast.output", d, num_classes, &mut rng);
        Ok(Self { patch_embed, cls, freq_pos, time_pos, encoder, output, grid, dropout: cfg.dropout, max_frames: cfg.max_frames })
    }

    /// Normalised spectrogram → patch sequence, truncated to the model's frame budget.
    pub fn patches(&self, spec: &Spectrogram) -> Result<PatchSequence> {
        extract_patches(&truncate_frames(spec, self.max_frames), self.grid)
    }

    /// Returns `(summary state 1×d, logits 1×C)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, seq: &PatchSequence, fwd: &mut Forward) -> (Var, Var) {
        let x = g.constant(seq.patches.clone());
        let x = self.patch_embed.forward(g, store, x);
        let f_ids: Vec<Option<usize>> = seq.positions.iter().map(|&(f, _)| Some(f)).collect();
        let t_ids: Vec<Option<usize>> = seq.positions.iter().map(|&(_, t)| Some(t)).collect();
        let fp = g.param_rows(store, self.freq_pos, &f_ids, |_| unreachable!("all rows are indexed"));
        let tp = g.param_rows(store, self.time_pos, &t_ids, |_| unreachable!("all rows are indexed"));
        let x = g.add(x, fp);
        let x = g.add(x, tp);
        let cls = g.param(store, self.cls);
        let seq = g.concat_rows(&[cls, x]);
        let seq = fwd.dropout(g, seq, self.dropout);
        let out = self.encoder.forward(g, store, seq, fwd);
        let h = g.slice_rows(out, 0, 1);
        let hd = fwd.dropout(g, h, self.dropout);
        (h, self.output.forward(g, store, hd))
    }
}

/// Sigmoid scores rescaled to sum to one.
pub fn renormalized_sigmoid(logits: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
    let total: f64 = s.iter().sum();
    s.into_iter().map(|v| v / total).collect()
}

/// Raw (unnormalised) log-mel spectrogram per post id.
pub type AudioTable = BTreeMap<String, Spectrogram>;

/// Synthesises and featurises every post, in parallel.
pub fn build_audio_table(dataset: &Dataset, tts: &dyn TtsBackend) -> Result<AudioTable> {
    let mel = MelExtractor::new();
    dataset
        .posts
        .par_iter()
        .map(|p| Ok((p.id.clone(), mel.log_mel(&synthesize_text(&p.text, tts)?))))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

pub struct AudioTeacher {
    pub model: AstModel,
    pub store: ParamStore,
    pub config: AudioTeacherConfig,
    pub norm: NormStats,
    pub num_classes: usize,
    pub log: TrainLog,
    tts: Box<dyn TtsBackend>,
    mel: MelExtractor,
}

#[derive(Serialize, Deserialize)]
struct SavedConfig {
    config: AudioTeacherConfig,
    norm: NormStats,
    num_classes: usize,
}

impl AudioTeacher {
    fn sequence_for(&self, post: &Post) -> Result<PatchSequence> {
        let spec = self.mel.log_mel(&synthesize_text(&post.text, self.tts.as_ref())?);
        self.model.patches(&normalize_spectrogram(&spec, &self.norm))
    }

    pub fn predict_spectrogram(&self, raw: &Spectrogram) -> Result<Vec<f64>> {
        let seq = self.model.patches(&normalize_spectrogram(raw, &self.norm))?;
        let mut g = Graph::new();
        let (_, z) = self.model.forward(&mut g, &self.store, &seq, &mut Forward::eval());
        Ok(renormalized_sigmoid(&g.value(z).row(0).to_vec()))
    }

    pub fn save(&self, dir: &Path, classes: &[String]) -> Result<Manifest> {
        let cfg = SavedConfig { config: self.config.clone(), norm: self.norm.clone(), num_classes: self.num_classes };
        checkpoint::save(dir, Manifest::new(KIND, classes, self.config.seed, serde_json::to_value(cfg)?), &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, loaded) = checkpoint::load(dir, KIND)?;
        let saved: SavedConfig = serde_json::from_value(manifest.config)?;
        let mut store = ParamStore::new();
        let model = AstModel::build(&saved.config, saved.num_classes, &mut store)?;
        checkpoint::restore_into(&mut store, &loaded)?;
        Ok(Self {
            tts: resolve_tts(&saved.config.tts, saved.config.tts_seed)?,
            model,
            store,
            norm: saved.norm,
            num_classes: saved.num_classes,
            config: saved.config,
            log: TrainLog::default(),
            mel: MelExtractor::new(),
        })
    }
}

impl Teacher for AudioTeacher {
    fn modality(&self) -> Modality {
        Modality::Audio
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, post: &Post) -> Result<Vec<f64>> {
        let seq = self.sequence_for(post)?;
        let mut g = Graph::new();
        let (_, z) = self.model.forward(&mut g, &self.store, &seq, &mut Forward::eval());
        Ok(renormalized_sigmoid(&g.value(z).row(0).to_vec()))
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>> {
        let seq = self.sequence_for(post)?;
        let mut g = Graph::new();
        let (h, _) = self.model.forward(&mut g, &self.store, &seq, &mut Forward::eval());
        Ok(g.value(h).row(0).to_vec())
    }
}

fn bce_item(model: &AstModel, store: &ParamStore, seq: &PatchSequence, label: usize, classes: usize, fwd: &mut Forward) -> ItemLoss {
    let mut g = Graph::new();
    let (_, z) = model.forward(&mut g, store, seq, fwd);
    let target = Array2::from_shape_fn((1, classes), |(_, c)| (c == label) as u8 as f64);
    let l = g.bce_with_logits(z, target);
    ItemLoss { loss: g.scalar(l), parts: Vec::new(), grads: g.backward(l, store) }
}

/// Trains on `split.train` with normalisation statistics from those posts
/// only; `split.val` drives early stopping and the plateau schedule.
pub fn train_audio_teacher(
    dataset: &Dataset,
    table: &AudioTable,
    split: &Split,
    cfg: &AudioTeacherConfig,
) -> Result<AudioTeacher> {
    cfg.validate()?;
    let classes = dataset.num_classes();
    let lookup = |ids: &[String]| -> Result<Vec<(&Spectrogram, usize)>> {
        dataset
            .select(ids)
            .into_iter()
            .map(|p| {
                table
                    .get(&p.id)
                    .map(|s| (s, p.label))
                    .ok_or_else(|| Error::MissingTeacherOutput { post: p.id.clone(), modality: "audio".into() })
            })
            .collect()
    };
    let train = lookup(&split.train)?;
    if train.is_empty() {
        return Err(Error::Config("audio teacher has no training posts".into()));
    }
    let val = lookup(&split.val)?;
    let norm = NormStats::compute(train.iter().map(|(s, _)| *s), "train")?;
    let mut store = ParamStore::new();
    let model = AstModel::build(cfg, classes, &mut store)?;
    let prep = |items: &[(&Spectrogram, usize)]| -> Result<Vec<(PatchSequence, usize)>> {
        items.iter().map(|(s, y)| Ok((model.patches(&normalize_spectrogram(s, &norm))?, *y))).collect()
    };
    let train_seq = prep(&train)?;
    let val_seq = prep(&val)?;
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        patience: Some(cfg.patience),
        plateau: Some(Plateau { factor: cfg.plateau_factor, patience: cfg.plateau_patience }),
    };
    let m = &model;
    let log = fit(
        &mut store,
        train_seq.len(),
        &loop_cfg,
        |s, i, fwd| Ok(bce_item(m, s, &train_seq[i].0, train_seq[i].1, classes, fwd)),
        |s| {
            if val_seq.is_empty() {
                return Ok(None);
            }
            let total: f64 = val_seq.iter().map(|(q, y)| bce_item(m, s, q, *y, classes, &mut Forward::eval()).loss).sum();
            Ok(Some(total / val_seq.len() as f64))
        },
    )?;
    Ok(AudioTeacher {
        tts: resolve_tts(&cfg.tts, cfg.tts_seed)?,
        model,
        store,
        config: cfg.clone(),
        norm,
        num_classes: classes,
        log,
        mel: MelExtractor::new(),
    })
}
