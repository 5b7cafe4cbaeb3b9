//! Two-layer GCN trained on the multi-label emotion task over post nodes.

use std::rc::Rc;

use mmkd_autograd::nn::Linear;
use mmkd_autograd::{Forward, Graph, ParamStore, SparseMatrix, Var};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::TextGraph;
use super::lexicon::{EmotionLabelSet, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::train::{fit, ItemLoss, LoopConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Fraction of post nodes held out to drive early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 100, patience: 10, lr: 0.01, weight_decay: 5e-4, dropout: 0.0, val_fraction: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GcnModel {
    pub store: ParamStore,
    pub layer1: Linear,
    pub layer2: Linear,
    pub adjacency: SparseMatrix,
    pub dropout: f64,
    pub log: TrainLog,
}

impl GcnModel {
    pub fn new(in_width: usize, hidden: usize, adjacency: SparseMatrix, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer1 = Linear::new(&mut store, "gcn.layer1", in_width, hidden, &mut rng);
        let layer2 = Linear::new(&mut store, "gcn.layer2", hidden, NUM_EMOTIONS, &mut rng);
        Self { store, layer1, layer2, adjacency, dropout: 0.0, log: TrainLog::default() }
    }

    /// Second-layer pre-activation states for every node.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: &Array2<f64>, fwd: &mut Forward) -> Var {
        let adj = Rc::new(self.adjacency.clone());
        let x = g.constant(features.clone());
        let x = fwd.dropout(g, x, self.dropout);
        let h = propagate(g, store, &self.layer1, adj.clone(), x);
        let h = g.relu(h);
        let h = fwd.dropout(g, h, self.dropout);
        propagate(g, store, &self.layer2, adj, h)
    }

    /// Mean BCE over the given post rows.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: &Array2<f64>,
        targets: &[EmotionLabelSet],
        rows: &[usize],
        fwd: &mut Forward,
    ) -> Var {
        let z = self.forward(g, store, features, fwd);
        let n = g.shape(z).0;
        let select = Rc::new(SparseMatrix::new(rows.len(), n, rows.iter().enumerate().map(|(k, &r)| (k, r, 1.0)).collect()));
        let picked = g.spmm(select, z);
        let t = Array2::from_shape_fn((rows.len(), NUM_EMOTIONS), |(k, e)| targets[rows[k]].bits[e] as f64);
        g.bce_with_logits(picked, t)
    }
}

fn propagate(g: &mut Graph, store: &ParamStore, layer: &Linear, adj: Rc<SparseMatrix>, x: Var) -> Var {
    let w = g.param(store, layer.weight);
    let b = g.param(store, layer.bias);
    let xw = g.matmul(x, w);
    let ax = g.spmm(adj, xw);
    g.add_row(ax, b)
}

/// Splits post rows into (train, held-out) for early stopping.
fn holdout_rows(n_posts: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..n_posts).collect();
    let n_val = (n_posts as f64 * fraction).floor() as usize;
    if n_posts < 10 || n_val == 0 {
        return (rows, Vec::new());
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9c_6e));
    let val = rows.split_off(n_posts - n_val);
    rows.sort_unstable();
    (rows, val)
}

pub fn train_emotion_gcn(graph: &TextGraph, targets: &[EmotionLabelSet], cfg: &GcnConfig) -> Result<GcnModel> {
    if targets.len() != graph.num_posts() {
        return Err(Error::Config(format!("{} emotion targets for {} posts", targets.len(), graph.num_posts())));
    }
    if graph.features.ncols() == 0 {
        return Err(Error::Config("graph has no node features".into()));
    }
    let mut model = GcnModel::new(graph.features.ncols(), cfg.hidden, graph.normalized_adjacency(), cfg.seed);
    model.dropout = cfg.dropout;
    let (train_rows, val_rows) = holdout_rows(graph.num_posts(), cfg.val_fraction, cfg.seed);
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: 1,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        patience: Some(cfg.patience),
        plateau: None,
    };
    let mut store = model.store.clone();
    let features = &graph.features;
    let m = &model;
    let log = fit(
        &mut store,
        1,
        &loop_cfg,
        |s, _, fwd| {
            let mut g = Graph::new();
            let l = m.loss(&mut g, s, features, targets, &train_rows, fwd);
            Ok(ItemLoss { loss: g.scalar(l), parts: Vec::new(), grads: g.backward(l, s) })
        },
        |s| {
            if val_rows.is_empty() {
                return Ok(None);
            }
            let mut g = Graph::new();
            let l = m.loss(&mut g, s, features, targets, &val_rows, &mut Forward::eval());
            Ok(Some(g.scalar(l)))
        },
    )?;
    model.store = store;
    model.log = log;
    Ok(model)
}

/// Second-layer states split by node type.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnEmbeddings {
    pub post_ids: Vec<String>,
    pub tokens: Vec<String>,
    pub post_states: Array2<f64>,
    pub token_states: Array2<f64>,
}

impl GcnEmbeddings {
    pub fn len(&self) -> usize {
        self.post_ids.len() + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn post(&self, id: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.post_ids.iter().position(|p| p == id).map(|i| self.post_states.row(i))
    }

    pub fn token(&self, t: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.tokens.binary_search_by(|x| x.as_str().cmp(t)).ok().map(|i| self.token_states.row(i))
    }
}

pub fn extract_emotion_embeddings(model: &GcnModel, graph: &TextGraph) -> GcnEmbeddings {
    let mut g = Graph::new();
    let z = model.forward(&mut g, &model.store, &graph.features, &mut Forward::eval());
    let z = g.value(z);
    let p = graph.num_posts();
    GcnEmbeddings {
        post_ids: graph.post_nodes.clone(),
        tokens: graph.token_nodes.clone(),
        post_states: z.slice(ndarray::s![..p, ..]).to_owned(),
        token_states: z.slice(ndarray::s![p.., ..]).to_owned(),
    }
}

/// Micro-averaged F1 of thresholded multi-label scores (threshold 0 on logits).
pub fn multilabel_micro_f1(logits: &Array2<f64>, targets: &[EmotionLabelSet]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (row, t) in logits.axis_iter(Axis(0)).zip(targets) {
        for (e, &z) in row.iter().enumerate() {
            match (z > 0.0, t.bits[e] == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}
