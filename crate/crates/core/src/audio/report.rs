//! Per-class synthesized clip durations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ast::AudioTable;
use crate::corpus::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationReport {
    pub per_class: BTreeMap<String, DurationStats>,
    pub overall: DurationStats,
}

fn stats(values: &[f64]) -> DurationStats {
    if values.is_empty() {
        return DurationStats { count: 0, min: 0.0, max: 0.0, mean: 0.0 };
    }
    DurationStats {
        count: values.len(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    }
}

/// Posts without an entry in `table` are skipped.
pub fn duration_report(dataset: &Dataset, table: &AudioTable) -> DurationReport {
    let mut by_class: BTreeMap<String, Vec<f64>> = dataset.classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    let mut all = Vec::new();
    for p in &dataset.posts {
        if let Some(s) = table.get(&p.id) {
            by_class.get_mut(&dataset.classes[p.label]).expect("label in range").push(s.seconds);
            all.push(s.seconds);
        }
    }
    DurationReport { per_class: by_class.iter().map(|(c, v)| (c.clone(), stats(v))).collect(), overall: stats(&all) }
}

impl DurationReport {
    pub fn render(&self) -> String {
        let mut out = format!("{:<24} {:>6} {:>8} {:>8} {:>8}\n", "class", "n", "min_s", "max_s", "avg_s");
        let rows = self.per_class.iter().map(|(c, s)| (c.as_str(), s)).chain([("all", &self.overall)]);
        for (c, s) in rows {
            let _ = writeln!(out, "{c:<24} {:>6} {:>8.2} {:>8.2} {:>8.2}", s.count, s.min, s.max, s.mean);
        }
        out
    }
}
