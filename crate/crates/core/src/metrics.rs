//! Classification metrics and cross-validation orchestration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Split, SplitPlan};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
}

impl MetricsReport {
    pub fn f1(&self, class: &str) -> Option<f64> {
        self.per_class_f1.get(class).copied()
    }

    pub fn total(&self) -> usize {
        self.support.iter().sum()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_metrics(y_true: &[usize], y_pred: &[usize], classes: &[String]) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch { truth: y_true.len(), pred: y_pred.len() });
    }
    let c = classes.len();
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l >= c) {
        return Err(Error::Config(format!("label {bad} is outside the {c} declared classes")));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<usize> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let precision: Vec<f64> = (0..c).map(|k| ratio(confusion[k][k], predicted[k])).collect();
    let recall: Vec<f64> = (0..c).map(|k| ratio(confusion[k][k], support[k])).collect();
    let f1: Vec<f64> = (0..c)
        .map(|k| {
            let (p, r) = (precision[k], recall[k]);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect();
    let total = y_true.len();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / total as f64
    };
    Ok(MetricsReport {
        classes: classes.to_vec(),
        accuracy: ratio(correct, total),
        macro_f1: if c == 0 { 0.0 } else { f1.iter().sum::<f64>() / c as f64 },
        weighted_f1,
        per_class_f1: classes.iter().cloned().zip(f1.iter().copied()).collect(),
        precision,
        recall,
        confusion,
        support,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMean {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Metrics over all folds' test predictions pooled together.
    pub pooled: MetricsReport,
    pub folds: Vec<MetricsReport>,
    pub mean_of_folds: FoldMean,
    pub predictions: BTreeMap<String, usize>,
}

/// Runs `pipeline` once per split. It receives the fold index and split and
/// returns `(post id, predicted class)` for every test id.
pub fn cross_validate(
    dataset: &Dataset,
    plan: &SplitPlan,
    mut pipeline: impl FnMut(usize, &Split) -> Result<Vec<(String, usize)>>,
) -> Result<CvReport> {
    let index = dataset.index();
    let mut predictions = BTreeMap::new();
    let mut folds = Vec::with_capacity(plan.splits.len());
    for (k, split) in plan.splits.iter().enumerate() {
        let preds = pipeline(k, split).map_err(|e| e.in_fold(k))?;
        let by_id: BTreeMap<String, usize> = preds.into_iter().collect();
        let mut yt = Vec::new();
        let mut yp = Vec::new();
        for id in &split.test {
            let pred = *by_id
                .get(id)
                .ok_or_else(|| Error::Config(format!("no prediction for test post {id:?}")).in_fold(k))?;
            let post = index.get(id.as_str()).ok_or_else(|| Error::Config(format!("unknown post {id:?}")).in_fold(k))?;
            if predictions.insert(id.clone(), pred).is_some() {
                return Err(Error::Config(format!("post {id:?} predicted in more than one fold")).in_fold(k));
            }
            yt.push(post.label);
            yp.push(pred);
        }
        folds.push(confusion_metrics(&yt, &yp, &dataset.classes).map_err(|e| e.in_fold(k))?);
    }
    let (mut yt, mut yp) = (Vec::new(), Vec::new());
    for (id, &p) in &predictions {
        yt.push(index[id.as_str()].label);
        yp.push(p);
    }
    let pooled = confusion_metrics(&yt, &yp, &dataset.classes)?;
    let n = folds.len().max(1) as f64;
    let mean_of_folds = FoldMean {
        accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / n,
        macro_f1: folds.iter().map(|f| f.macro_f1).sum::<f64>() / n,
        weighted_f1: folds.iter().map(|f| f.weighted_f1).sum::<f64>() / n,
    };
    Ok(CvReport { pooled, folds, mean_of_folds, predictions })
}
