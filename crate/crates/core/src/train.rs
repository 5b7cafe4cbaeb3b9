//! Mini-batch training loop shared by every model in the crate.
//!
//! Each item builds its own graph and hands back its gradients; the loop
//! averages them per batch, steps AdamW, and handles early stopping and the
//! plateau schedule.

use mmkd_autograd::{AdamW, EarlyStopping, Forward, Grads, ParamStore, ReduceOnPlateau};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Early-stopping patience in epochs; the best weights are restored.
    pub patience: Option<usize>,
    pub plateau: Option<Plateau>,
}

impl LoopConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self { epochs, batch_size, lr, weight_decay: 0.0, seed, patience: None, plateau: None }
    }
}

/// Loss of one item plus any named components it wants logged.
pub struct ItemLoss {
    pub loss: f64,
    pub parts: Vec<f64>,
    pub grads: Grads,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub parts: Vec<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epoch_loss: Vec<f64>,
    pub monitor: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Runs the loop. `monitor` returns a validation loss (lower is better);
/// `None` falls back to the epoch's mean training loss.
pub fn fit(
    store: &mut ParamStore,
    n_items: usize,
    cfg: &LoopConfig,
    mut item: impl FnMut(&ParamStore, usize, &mut Forward) -> Result<ItemLoss>,
    mut monitor: impl FnMut(&ParamStore) -> Result<Option<f64>>,
) -> Result<TrainLog> {
    if n_items == 0 {
        return Err(Error::Config("nothing to train on".into()));
    }
    let batch = cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut stopper = cfg.patience.map(EarlyStopping::new);
    let mut plateau = cfg.plateau.map(|p| ReduceOnPlateau::new(p.factor, p.patience));
    let mut best: Option<ParamStore> = None;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = Grads::zeros(store.len());
            let mut loss = 0.0;
            let mut parts: Vec<f64> = Vec::new();
            for &i in chunk {
                let out = {
                    let mut fwd = Forward::train(&mut rng);
                    item(store, i, &mut fwd)?
                };
                if !out.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                grads.merge(&out.grads);
                loss += out.loss;
                if parts.is_empty() {
                    parts = vec![0.0; out.parts.len()];
                }
                for (p, v) in parts.iter_mut().zip(&out.parts) {
                    *p += v;
                }
            }
            let k = 1.0 / chunk.len() as f64;
            grads.scale(k);
            opt.step(store, &grads);
            log.steps.push(StepRecord {
                epoch,
                step,
                loss: loss * k,
                parts: parts.iter().map(|p| p * k).collect(),
                lr: opt.lr,
            });
            epoch_total += loss;
            step += 1;
        }
        let epoch_loss = epoch_total / n_items as f64;
        log.epoch_loss.push(epoch_loss);
        let m = monitor(store)?.unwrap_or(epoch_loss);
        if !m.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log.monitor.push(m);
        if let Some(p) = plateau.as_mut() {
            p.observe(m, &mut opt);
        }
        if let Some(s) = stopper.as_mut() {
            let (improved, stop) = s.observe(m);
            if improved {
                best = Some(store.clone());
                log.best_epoch = epoch;
            }
            if stop {
                log.stopped_early = true;
                break;
            }
        } else {
            log.best_epoch = epoch;
        }
    }
    if let Some(b) = best {
        *store = b;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmkd_autograd::Graph;
    use ndarray::array;

    fn quadratic(store: &mut ParamStore, cfg: &LoopConfig) -> Result<TrainLog> {
        let id = store.ids().next().unwrap();
        let targets = [1.0, 3.0];
        fit(
            store,
            2,
            cfg,
            |s, i, _| {
                let mut g = Graph::new();
                let w = g.param(s, id);
                let t = g.constant(array![[targets[i]]]);
                let d = g.sub(w, t);
                let sq = g.mul(d, d);
                Ok(ItemLoss { loss: g.scalar(sq), parts: vec![g.scalar(sq)], grads: g.backward(sq, s) })
            },
            |_| Ok(None),
        )
    }

    #[test]
    fn converges_and_is_deterministic() {
        let cfg = LoopConfig::new(300, 2, 0.05, 3);
        let mut a = ParamStore::new();
        a.add("w", array![[0.0]]);
        let mut b = a.clone();
        let la = quadratic(&mut a, &cfg).unwrap();
        let lb = quadratic(&mut b, &cfg).unwrap();
        assert_eq!(la, lb);
        assert!((a.get(a.ids().next().unwrap())[[0, 0]] - 2.0).abs() < 0.05);
        assert!(la.steps.iter().all(|s| (s.loss - s.parts[0]).abs() < 1e-12));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut s = ParamStore::new();
        s.add("w", array![[0.0]]);
        let err = fit(
            &mut s,
            1,
            &LoopConfig::new(3, 1, 0.1, 0),
            |st, _, _| Ok(ItemLoss { loss: f64::NAN, parts: vec![], grads: Grads::zeros(st.len()) }),
            |_| Ok(None),
        );
        assert!(matches!(err, Err(Error::NonFiniteLoss { epoch: 0 })));
    }
}
