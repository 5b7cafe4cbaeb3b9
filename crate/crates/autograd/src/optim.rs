use ndarray::Array2;

use crate::params::{Grads, ParamStore};

/// AdamW with decoupled weight decay and optional global-norm clipping.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Option<Array2<f64>>>,
    v: Vec<Option<Array2<f64>>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm: Some(1.0),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.step += 1;
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let param = store.get_mut(id);
            let m = self.m[i].get_or_insert_with(|| Array2::zeros(param.dim()));
            let v = self.v[i].get_or_insert_with(|| Array2::zeros(param.dim()));
            let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
            ndarray::Zip::from(param).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (update + wd * *p);
            });
        }
    }
}

/// Reduce-on-plateau learning-rate schedule over a monitored loss.
#[derive(Clone, Debug)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, min_lr: 1e-8, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Records an epoch's metric; returns `true` when the rate was reduced.
    pub fn observe(&mut self, metric: f64, opt: &mut AdamW) -> bool {
        if metric < self.best {
            self.best = metric;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            opt.lr = (opt.lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// Early stopping over a loss to minimise.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0 }
    }

    /// Returns `(improved, should_stop)`.
    pub fn observe(&mut self, metric: f64) -> (bool, bool) {
        self.epoch += 1;
        if metric < self.best {
            self.best = metric;
            self.best_epoch = self.epoch;
            return (true, false);
        }
        (false, self.epoch - self.best_epoch >= self.patience)
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}
