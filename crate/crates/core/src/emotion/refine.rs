//! Re-initialises an encoder's token table from GCN token states and
//! fine-tunes it on the multi-label emotion task.

use mmkd_autograd::nn::Linear;
use mmkd_autograd::{Forward, Graph, ParamStore};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gcn::{multilabel_micro_f1, GcnEmbeddings};
use super::lexicon::{EmotionLabelSet, NUM_EMOTIONS};
use crate::corpus::Dataset;
use crate::encoder::{Backbone, BackboneInit, EncoderBackend, Encoded, Vocab};
use crate::error::{Error, Result};
use crate::train::{fit, ItemLoss, LoopConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub projection_seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 8, lr: 1e-2, weight_decay: 0.0, seed: 0, projection_seed: 17 }
    }
}

/// Fixed `7 × width` projector from GCN states into encoder width.
pub fn projection(width: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (NUM_EMOTIONS as f64).sqrt();
    Array2::from_shape_simple_fn((NUM_EMOTIONS, width), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// The fine-tuned encoder plus per-post and per-token outputs.
#[derive(Clone, Debug)]
pub struct RefinedEncoder {
    pub store: ParamStore,
    pub backbone: Backbone,
    pub head: Linear,
    pub post_ids: Vec<String>,
    pub summaries: Array2<f64>,
    pub token_rows: Array2<f64>,
    pub f1_before: f64,
    pub f1_after: f64,
    pub log: TrainLog,
}

impl RefinedEncoder {
    pub fn encode(&self, text: &str) -> Encoded {
        self.backbone.encode(&self.store, text)
    }

    pub fn summary(&self, post_id: &str, text: &str) -> Vec<f64> {
        match self.post_ids.iter().position(|p| p == post_id) {
            Some(i) => self.summaries.row(i).to_vec(),
            None => self.encode(text).summary.to_vec(),
        }
    }
}

fn emotion_logits(bb: &Backbone, head: &Linear, store: &ParamStore, tokens: &[Vec<String>]) -> Array2<f64> {
    let mut out = Array2::zeros((tokens.len(), NUM_EMOTIONS));
    for (i, t) in tokens.iter().enumerate() {
        let mut g = Graph::new();
        let s = bb.token_states(&mut g, store, t);
        let s = bb.summary(&mut g, s);
        let z = head.forward(&mut g, store, s);
        out.row_mut(i).assign(&g.value(z).row(0));
    }
    out
}

pub fn refine_with_encoder(
    emb: &GcnEmbeddings,
    dataset: &Dataset,
    targets: &[EmotionLabelSet],
    backend: &EncoderBackend,
    cfg: &RefineConfig,
) -> Result<RefinedEncoder> {
    if targets.len() != dataset.posts.len() {
        return Err(Error::Config(format!("{} emotion targets for {} posts", targets.len(), dataset.posts.len())));
    }
    if emb.token_states.ncols() != NUM_EMOTIONS {
        return Err(Error::backend(&backend.id, "GCN token states must have one column per emotion"));
    }
    let mut store = ParamStore::new();
    let vocab = Vocab::from_tokens(emb.tokens.iter().cloned());
    let backbone = Backbone::new(&mut store, "emotion_encoder", backend.clone(), vocab, BackboneInit::Pretrained);
    let proj = projection(backend.width, cfg.projection_seed);
    for (i, tok) in backbone.vocab.tokens().iter().enumerate() {
        let state = emb.token(tok).expect("vocab built from the same tokens");
        store.get_mut(backbone.table).row_mut(i).assign(&state.dot(&proj));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = Linear::new(&mut store, "emotion_encoder.head", backend.width, NUM_EMOTIONS, &mut rng);

    let tokens: Vec<Vec<String>> = dataset.posts.iter().map(|p| backbone.tokenize(&p.text)).collect();
    let f1_before = multilabel_micro_f1(&emotion_logits(&backbone, &head, &store, &tokens), targets);

    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        patience: None,
        plateau: None,
    };
    let log = fit(
        &mut store,
        tokens.len(),
        &loop_cfg,
        |s, i, _: &mut Forward| {
            let mut g = Graph::new();
            let st = backbone.token_states(&mut g, s, &tokens[i]);
            let sum = backbone.summary(&mut g, st);
            let z = head.forward(&mut g, s, sum);
            let t = Array2::from_shape_vec((1, NUM_EMOTIONS), targets[i].as_f64().to_vec()).expect("7 targets");
            let l = g.bce_with_logits(z, t);
            Ok(ItemLoss { loss: g.scalar(l), parts: Vec::new(), grads: g.backward(l, s) })
        },
        |_| Ok(None),
    )?;

    let f1_after = multilabel_micro_f1(&emotion_logits(&backbone, &head, &store, &tokens), targets);
    let mut summaries = Array2::zeros((dataset.posts.len(), backend.width));
    for (i, p) in dataset.posts.iter().enumerate() {
        summaries.row_mut(i).assign(&backbone.encode(&store, &p.text).summary);
    }
    let token_rows = store.get(backbone.table).clone();
    Ok(RefinedEncoder {
        post_ids: dataset.posts.iter().map(|p| p.id.clone()).collect(),
        summaries,
        token_rows,
        f1_before,
        f1_after,
        log,
        store,
        backbone,
        head,
    })
}
