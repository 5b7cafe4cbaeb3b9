//! Budgeted hyperparameter search over discrete spaces.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use mmkd_autograd::Activation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Resources};
use super::pipeline::{prepare_teachers, read_json, write_json, write_text, TeacherStore};
use crate::corpus::{holdout_split, make_splits, Split};
use crate::distill::{train_student, DistillConfig};
use crate::error::{Error, Result};
use crate::hparams::{Assignment, SearchSpace};
use crate::metrics::MetricsReport;

pub trait Sampler {
    fn sample(&mut self, space: &SearchSpace) -> Assignment;
}

/// Independent uniform draws per parameter.
pub struct UniformSampler {
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Sampler for UniformSampler {
    fn sample(&mut self, space: &SearchSpace) -> Assignment {
        space.sample(&mut self.rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub assignment: Assignment,
    /// Absent when the trial failed.
    pub objective: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

impl Trial {
    /// Failed trials rank below every successful one.
    pub fn score(&self) -> f64 {
        self.objective.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Evaluates `budget` sampled assignments and keeps the highest objective
/// (earliest on ties). Each finished trial is appended to `journal` as one
/// JSON line. Errors inside `evaluate` are recorded, not raised.
pub fn run_search(
    space: &SearchSpace,
    budget: usize,
    sampler: &mut dyn Sampler,
    journal: Option<&Path>,
    mut evaluate: impl FnMut(&Assignment) -> Result<MetricsReport>,
) -> Result<SearchOutcome> {
    if space.is_empty() {
        return Err(Error::Config("search space is empty".into()));
    }
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut log = match journal {
        Some(p) => {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            Some(OpenOptions::new().create(true).write(true).truncate(true).open(p).map_err(|e| Error::io(p, e))?)
        }
        None => None,
    };
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for index in 0..budget {
        let assignment = sampler.sample(space);
        let trial = match evaluate(&assignment) {
            Ok(m) => Trial { index, objective: Some(m.weighted_f1), metrics: Some(m), error: None, assignment },
            Err(e) => {
                log::warn!("trial {index} failed: {e}");
                Trial { index, objective: None, metrics: None, error: Some(e.to_string()), assignment }
            }
        };
        if let (Some(f), Some(p)) = (log.as_mut(), journal) {
            let mut line = serde_json::to_vec(&trial)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(p, e))?;
        }
        trials.push(trial);
    }
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.score() > trials[best].score() {
            best = i;
        }
    }
    if trials[best].objective.is_none() {
        return Err(Error::Config(format!("all {budget} trials failed; last error: {}", trials[best].error.clone().unwrap_or_default())));
    }
    Ok(SearchOutcome { best: trials[best].clone(), trials })
}

/// Applies a student-space assignment on top of `base`.
pub fn apply_student_assignment(base: &DistillConfig, a: &Assignment) -> Result<DistillConfig> {
    let mut d = base.clone();
    for (k, v) in a {
        let bad = || Error::Config(format!("{k} = {v} has the wrong type"));
        match k.as_str() {
            "dropout" => d.head.dropout = v.as_f64().ok_or_else(bad)?,
            "lr" => d.lr = v.as_f64().ok_or_else(bad)?,
            "weight_decay" => d.weight_decay = v.as_f64().ok_or_else(bad)?,
            "n_layers" => d.head.n_layers = v.as_usize().ok_or_else(bad)?,
            "n_heads" => d.head.n_heads = v.as_usize().ok_or_else(bad)?,
            "epochs" => d.epochs = v.as_usize().ok_or_else(bad)?,
            "activation" => {
                d.head.activation = v.as_str().ok_or_else(bad)?.parse::<Activation>().map_err(|_| bad())?;
            }
            other => return Err(Error::Config(format!("unknown student parameter {other:?}"))),
        }
    }
    Ok(d)
}

/// The 90:10 train/validation split searches run on: drawn from the
/// training portion of the first planned split, so test posts stay unseen.
pub fn search_split(cfg: &ExperimentConfig, res: &Resources) -> Result<Split> {
    let plan = make_splits(&res.dataset, cfg.seed)?;
    let first = &plan.splits[0];
    let ids: Vec<String> = first.train.iter().chain(&first.val).cloned().collect();
    Ok(holdout_split(&res.dataset, &ids, cfg.seed))
}

/// Trains the configured student on the search split and reports on its
/// validation part. Teachers come from `store`.
pub fn evaluate_student_holdout(cfg: &ExperimentConfig, res: &Resources, store: &TeacherStore) -> Result<MetricsReport> {
    let split = search_split(cfg, res)?;
    let (_, cache) = prepare_teachers(cfg, res, &split, store)?;
    Ok(train_student(&res.dataset, &split, &cache, &cfg.distill)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSnapshot {
    pub budget: usize,
    pub best: Trial,
    /// Base config with the winning assignment applied.
    pub config: ExperimentConfig,
}

/// Student search. Writes `trials.jsonl`, `best.json` and
/// `best_config.toml` under `out`; teachers are shared in `out/teachers`.
pub fn search_student(base: &ExperimentConfig, budget: usize, out: &Path) -> Result<SearchOutcome> {
    let cfg = base.resolved();
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let res = Resources::load(&cfg)?;
    let store = TeacherStore::new(out.join("teachers"));
    let split = search_split(&cfg, &res).map_err(|e| e.at_stage("splits"))?;
    let (_, cache) = prepare_teachers(&cfg, &res, &split, &store)?;
    let space = SearchSpace::student();
    let mut sampler = UniformSampler::new(cfg.seed);
    let outcome = run_search(&space, budget, &mut sampler, Some(&out.join("trials.jsonl")), |a| {
        let mut d = apply_student_assignment(&cfg.distill, a)?;
        d.override_ranges = false;
        d.validate()?;
        Ok(train_student(&res.dataset, &split, &cache, &d)?.1)
    })?;
    let mut best_cfg = cfg.clone();
    best_cfg.distill = apply_student_assignment(&cfg.distill, &outcome.best.assignment)?;
    best_cfg.distill.override_ranges = false;
    let snapshot = SearchSnapshot { budget, best: outcome.best.clone(), config: best_cfg };
    write_json(&out.join("best.json"), &snapshot)?;
    write_text(&out.join("best_config.toml"), &snapshot.config.to_toml_string()?)?;
    Ok(outcome)
}

/// Re-runs the winning trial from a search directory.
pub fn replay_best(search_dir: &Path) -> Result<(SearchSnapshot, MetricsReport)> {
    let snapshot: SearchSnapshot = read_json(&search_dir.join("best.json"))?;
    let res = Resources::load(&snapshot.config)?;
    let report = evaluate_student_holdout(&snapshot.config, &res, &TeacherStore::new(search_dir.join("teachers")))?;
    Ok((snapshot, report))
}

pub fn default_search_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_path().join("search")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hparams::ParamValue;
    use crate::metrics::confusion_metrics;

    fn report(score: f64) -> MetricsReport {
        let mut r = confusion_metrics(&[0, 1], &[0, 1], &["a".into(), "b".into()]).unwrap();
        r.weighted_f1 = score;
        r
    }

    #[test]
    fn argmax_and_failures() {
        let space = SearchSpace::student();
        let mut n = 0;
        let out = run_search(&space, 6, &mut UniformSampler::new(1), None, |_| {
            n += 1;
            match n {
                2 => Err(Error::Config("boom".into())),
                4 => Ok(report(0.9)),
                _ => Ok(report(0.1 * n as f64)),
            }
        })
        .unwrap();
        assert_eq!(out.trials.len(), 6);
        assert_eq!(out.best.index, 3);
        assert!(out.trials.iter().all(|t| t.score() <= out.best.score()));
        assert_eq!(out.trials[1].score(), f64::NEG_INFINITY);
    }

    #[test]
    fn budget_one_and_all_failed() {
        let space = SearchSpace::student();
        let one = run_search(&space, 1, &mut UniformSampler::new(1), None, |_| Ok(report(0.3))).unwrap();
        assert_eq!(one.best, one.trials[0]);
        assert!(run_search(&space, 2, &mut UniformSampler::new(1), None, |_| Err(Error::Config("x".into()))).is_err());
    }

    #[test]
    fn assignment_application() {
        let a: Assignment = [
            ("dropout".to_string(), ParamValue::Float(0.5)),
            ("activation".to_string(), ParamValue::Str("relu".into())),
            ("n_heads".to_string(), ParamValue::Int(12)),
        ]
        .into();
        let d = apply_student_assignment(&DistillConfig::default(), &a).unwrap();
        assert_eq!(d.head.dropout, 0.5);
        assert_eq!(d.head.activation, Activation::Relu);
        assert_eq!(d.head.n_heads, 12);
        let bad: Assignment = [("bogus".to_string(), ParamValue::Int(1))].into();
        assert!(apply_student_assignment(&DistillConfig::default(), &bad).is_err());
    }

    #[test]
    fn journal_has_one_line_per_trial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        run_search(&SearchSpace::student(), 3, &mut UniformSampler::new(2), Some(&p), |_| Ok(report(0.5))).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 3);
    }
}
