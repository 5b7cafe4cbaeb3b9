//! MLP emotion teacher over per-post emotion-aware embeddings.

use std::path::Path;

use mmkd_autograd::nn::{Linear, Mlp};
use mmkd_autograd::{Activation, Forward, Graph, ParamStore};
use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gcn::GcnEmbeddings;
use super::refine::RefinedEncoder;
use super::NUM_EMOTIONS;
use crate::checkpoint::{self, Manifest};
use crate::corpus::{Dataset, Post};
use crate::encoder::{Backbone, BackboneInit, EncoderBackend, Vocab};
use crate::error::{Error, Result};
use crate::hparams::{check_choice, check_range, check_usize_choice, DROPOUTS, EMOTION_DEPTHS, EMOTION_LRS, EMOTION_WIDTHS, WEIGHT_DECAYS};
use crate::teacher::{softmax, Modality, Teacher};
use crate::train::{fit, ItemLoss, LoopConfig, TrainLog};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionInput {
    /// Summaries from the GCN-initialised, fine-tuned encoder.
    #[default]
    Refined,
    /// Raw second-layer GCN post states.
    GcnStates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmotionTeacherConfig {
    pub input: EmotionInput,
    pub n_hidden: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub override_ranges: bool,
}

impl Default for EmotionTeacherConfig {
    fn default() -> Self {
        Self {
            input: EmotionInput::Refined,
            n_hidden: 2,
            hidden_dim: 400,
            dropout: 0.1,
            lr: 1e-3,
            weight_decay: 0.0,
            activation: Activation::Relu,
            epochs: 100,
            batch_size: 16,
            patience: 10,
            seed: 0,
            override_ranges: false,
        }
    }
}

impl EmotionTeacherConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("n_hidden", self.n_hidden, EMOTION_DEPTHS, false)?;
        check_usize_choice("hidden_dim", self.hidden_dim, &EMOTION_WIDTHS, self.override_ranges)?;
        check_choice("dropout", self.dropout, &DROPOUTS, self.override_ranges)?;
        check_choice("lr", self.lr, &EMOTION_LRS, self.override_ranges)?;
        check_choice("weight_decay", self.weight_decay, &WEIGHT_DECAYS, self.override_ranges)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::RangeError { param: "dropout".into(), value: self.dropout.to_string(), allowed: "[0, 1)".into() });
        }
        Ok(())
    }
}

/// Per-post classifier inputs and 7-dim emotion vectors.
#[derive(Clone, Debug)]
pub struct EmotionFeatures {
    pub post_ids: Vec<String>,
    pub inputs: Array2<f64>,
    pub emotion: Array2<f64>,
    /// Encoder for posts outside the table, when one is available.
    pub encoder: Option<RefinedEncoder>,
}

impl EmotionFeatures {
    pub fn from_gcn(emb: &GcnEmbeddings) -> Self {
        Self {
            post_ids: emb.post_ids.clone(),
            inputs: emb.post_states.clone(),
            emotion: emb.post_states.clone(),
            encoder: None,
        }
    }

    pub fn from_refined(enc: RefinedEncoder) -> Self {
        let mut emotion = Array2::zeros((enc.post_ids.len(), super::NUM_EMOTIONS));
        for (i, s) in enc.summaries.rows().into_iter().enumerate() {
            emotion.row_mut(i).assign(&head_logits(&enc, s));
        }
        Self { post_ids: enc.post_ids.clone(), inputs: enc.summaries.clone(), emotion, encoder: Some(enc) }
    }

    pub fn width(&self) -> usize {
        self.inputs.ncols()
    }

    /// `(classifier input, emotion vector)` for a post.
    pub fn lookup(&self, post: &Post) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(i) = self.post_ids.iter().position(|p| *p == post.id) {
            return Ok((self.inputs.row(i).to_vec(), self.emotion.row(i).to_vec()));
        }
        match &self.encoder {
            Some(enc) => {
                let s = enc.encode(&post.text).summary;
                let e = head_logits(enc, s.view());
                Ok((s.to_vec(), e.to_vec()))
            }
            None => Err(Error::MissingTeacherOutput { post: post.id.clone(), modality: "emotion".into() }),
        }
    }
}

fn head_logits(enc: &RefinedEncoder, s: ArrayView1<f64>) -> ndarray::Array1<f64> {
    let w = enc.store.get(enc.head.weight);
    let b = enc.store.get(enc.head.bias);
    s.dot(w) + b.row(0)
}

#[derive(Clone, Debug)]
pub struct EmotionTeacher {
    pub features: EmotionFeatures,
    pub mlp: Mlp,
    pub store: ParamStore,
    pub num_classes: usize,
    pub config: EmotionTeacherConfig,
    pub log: TrainLog,
}

impl EmotionTeacher {
    pub fn new(features: EmotionFeatures, num_classes: usize, cfg: &EmotionTeacherConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "emotion_mlp",
            features.width(),
            cfg.n_hidden,
            cfg.hidden_dim,
            num_classes,
            cfg.activation,
            cfg.dropout,
            &mut rng,
        );
        Self { features, mlp, store, num_classes, config: cfg.clone(), log: TrainLog::default() }
    }

    pub fn logits_of(&self, store: &ParamStore, input: &[f64], fwd: &mut Forward) -> (Graph, mmkd_autograd::Var) {
        let mut g = Graph::new();
        let x = g.constant(Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row"));
        let z = self.mlp.forward(&mut g, store, x, fwd);
        (g, z)
    }
}

const KIND: &str = "emotion-teacher";

#[derive(Serialize, Deserialize)]
struct SavedEncoder {
    backend: EncoderBackend,
    vocab: Vec<String>,
    f1_before: f64,
    f1_after: f64,
}

#[derive(Serialize, Deserialize)]
struct SavedEmotion {
    config: EmotionTeacherConfig,
    num_classes: usize,
    post_ids: Vec<String>,
    encoder: Option<SavedEncoder>,
}

impl EmotionTeacher {
    /// One weights file holds the MLP, the per-post tables and the refined
    /// encoder, if any.
    pub fn save(&self, dir: &Path, classes: &[String]) -> Result<Manifest> {
        let mut all = self.store.clone();
        all.add("features.inputs", self.features.inputs.clone());
        all.add("features.emotion", self.features.emotion.clone());
        if let Some(enc) = &self.features.encoder {
            for id in enc.store.ids() {
                all.add(enc.store.name(id), enc.store.get(id).clone());
            }
        }
        let saved = SavedEmotion {
            config: self.config.clone(),
            num_classes: self.num_classes,
            post_ids: self.features.post_ids.clone(),
            encoder: self.features.encoder.as_ref().map(|e| SavedEncoder {
                backend: e.backbone.backend.clone(),
                vocab: e.backbone.vocab.tokens().to_vec(),
                f1_before: e.f1_before,
                f1_after: e.f1_after,
            }),
        };
        checkpoint::save(dir, Manifest::new(KIND, classes, self.config.seed, serde_json::to_value(saved)?), &all)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, loaded) = checkpoint::load(dir, KIND)?;
        let saved: SavedEmotion = serde_json::from_value(manifest.config)?;
        let table = |name: &str| {
            loaded.find(name).map(|id| loaded.get(id).clone()).ok_or_else(|| Error::Config(format!("checkpoint lacks {name}")))
        };
        let inputs = table("features.inputs")?;
        let encoder = match saved.encoder {
            None => None,
            Some(se) => {
                let mut store = ParamStore::new();
                let width = se.backend.width;
                let backbone =
                    Backbone::new(&mut store, "emotion_encoder", se.backend, Vocab::from_tokens(se.vocab), BackboneInit::Pretrained);
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let head = Linear::new(&mut store, "emotion_encoder.head", width, NUM_EMOTIONS, &mut rng);
                checkpoint::restore_matching(&mut store, &loaded)?;
                Some(RefinedEncoder {
                    token_rows: store.get(backbone.table).clone(),
                    post_ids: saved.post_ids.clone(),
                    summaries: inputs.clone(),
                    f1_before: se.f1_before,
                    f1_after: se.f1_after,
                    log: TrainLog::default(),
                    store,
                    backbone,
                    head,
                })
            }
        };
        let features = EmotionFeatures { post_ids: saved.post_ids, inputs, emotion: table("features.emotion")?, encoder };
        let mut teacher = EmotionTeacher::new(features, saved.num_classes, &saved.config);
        checkpoint::restore_matching(&mut teacher.store, &loaded)?;
        Ok(teacher)
    }
}

impl Teacher for EmotionTeacher {
    fn modality(&self) -> Modality {
        Modality::Emotion
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, post: &Post) -> Result<Vec<f64>> {
        let (x, _) = self.features.lookup(post)?;
        let (g, z) = self.logits_of(&self.store, &x, &mut Forward::eval());
        Ok(softmax(g.value(z).row(0).as_slice().expect("contiguous")))
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>> {
        Ok(self.features.lookup(post)?.1)
    }
}

fn ce_item(t: &EmotionTeacher, store: &ParamStore, x: &[f64], label: usize, fwd: &mut Forward) -> ItemLoss {
    let (mut g, z) = t.logits_of(store, x, fwd);
    let lp = g.log_softmax_rows(z);
    let picked = g.pick(lp, &[(0, label)]);
    let loss = g.scale(picked, -1.0);
    let loss = g.sum_all(loss);
    ItemLoss { loss: g.scalar(loss), parts: Vec::new(), grads: g.backward(loss, store) }
}

/// Cross-entropy training over `train_ids`; `val_ids` (if any) drive early stopping.
pub fn train_emotion_teacher(
    features: EmotionFeatures,
    dataset: &Dataset,
    train_ids: &[String],
    val_ids: &[String],
    cfg: &EmotionTeacherConfig,
) -> Result<EmotionTeacher> {
    cfg.validate()?;
    let mut teacher = EmotionTeacher::new(features, dataset.num_classes(), cfg);
    let collect = |ids: &[String]| -> Result<Vec<(Vec<f64>, usize)>> {
        dataset.select(ids).into_iter().map(|p| Ok((teacher.features.lookup(p)?.0, p.label))).collect()
    };
    let train = collect(train_ids)?;
    let val = collect(val_ids)?;
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        patience: (!val.is_empty()).then_some(cfg.patience),
        plateau: None,
    };
    let mut store = teacher.store.clone();
    let t = &teacher;
    let log = fit(
        &mut store,
        train.len(),
        &loop_cfg,
        |s, i, fwd| Ok(ce_item(t, s, &train[i].0, train[i].1, fwd)),
        |s| {
            if val.is_empty() {
                return Ok(None);
            }
            let total: f64 = val.iter().map(|(x, y)| ce_item(t, s, x, *y, &mut Forward::eval()).loss).sum();
            Ok(Some(total / val.len() as f64))
        },
    )?;
    teacher.store = store;
    teacher.log = log;
    Ok(teacher)
}
