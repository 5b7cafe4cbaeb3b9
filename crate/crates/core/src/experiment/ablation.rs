//! Ablation suites: one metrics row per variant of a base configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Resources};
use super::pipeline::{run_split, write_json, write_text, TeacherStore};
use crate::audio::patches::SWEEP_SIZES;
use crate::classifier::FusionMode;
use crate::corpus::make_splits;
use crate::distill::StudentInit;
use crate::encoder::PLM_BACKENDS;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::tables::{emit_tables, TableRow};
use crate::teacher::Modality;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    TeacherCombos,
    PlmSwap,
    FusionModes,
    PatchSweep,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::TeacherCombos, Suite::PlmSwap, Suite::FusionModes, Suite::PatchSweep];

    pub fn name(self) -> &'static str {
        match self {
            Suite::TeacherCombos => "teacher-combos",
            Suite::PlmSwap => "plm-swap",
            Suite::FusionModes => "fusion-modes",
            Suite::PatchSweep => "patch-sweep",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}; expected one of teacher-combos, plm-swap, fusion-modes, patch-sweep")))
    }
}

#[derive(Clone, Debug)]
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
    pub flags: Vec<(String, bool)>,
    pub patch_size: Option<usize>,
}

const COMBOS: [&[Modality]; 4] = [
    &[Modality::Text],
    &[Modality::Text, Modality::Emotion],
    &[Modality::Text, Modality::Audio],
    &[Modality::Text, Modality::Emotion, Modality::Audio],
];

/// Every variant shares the base seed, so rows differ only in the varied factor.
pub fn variants(base: &ExperimentConfig, suite: Suite) -> Vec<Variant> {
    let v = |label: String, config: ExperimentConfig| Variant { label, config, flags: Vec::new(), patch_size: None };
    match suite {
        Suite::TeacherCombos => COMBOS
            .iter()
            .map(|set| {
                let set: BTreeSet<Modality> = set.iter().copied().collect();
                let label = set.iter().map(|m| m.name()).collect::<Vec<_>>().join("+");
                let mut row = v(label, ExperimentConfig { teacher_set: set.clone(), ..base.clone() });
                row.flags = Modality::ALL.iter().map(|m| (m.name().to_string(), set.contains(m))).collect();
                row
            })
            .collect(),
        Suite::PlmSwap => PLM_BACKENDS
            .iter()
            .map(|id| {
                let mut c = base.clone();
                c.text_teacher.backend = id.to_string();
                v(id.to_string(), c)
            })
            .collect(),
        Suite::FusionModes => {
            let mut rows: Vec<Variant> = FusionMode::ALL
                .iter()
                .map(|&m| {
                    let mut c = base.clone();
                    c.distill.fusion = m;
                    let label = if m == FusionMode::TextOnly { m.name().to_string() } else { format!("+{}", m.name()) };
                    v(label, c)
                })
                .collect();
            let mut vt = base.clone();
            vt.distill.fusion = FusionMode::TextOnly;
            vt.distill.init = StudentInit::Vanilla;
            rows.push(v("vanilla-transformer".into(), vt));
            rows
        }
        Suite::PatchSweep => SWEEP_SIZES
            .iter()
            .map(|&p| {
                let mut c = base.clone();
                c.audio.patch_size = p;
                let mut row = v(format!("patch-{p}"), c);
                row.patch_size = Some(p);
                row
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: Suite,
    pub variant: String,
    pub teacher_set: BTreeSet<Modality>,
    pub patch_size: Option<usize>,
    pub metrics: Option<MetricsReport>,
    pub teacher_checksums: BTreeMap<Modality, String>,
    pub student_checksum: Option<String>,
    pub error: Option<String>,
}

/// Runs every variant on the first planned split. Variants write to
/// `out/<label>/` and share teachers through `out/teachers/`; a failing
/// variant is recorded and the suite moves on. Emits `rows.json` and
/// `table.{txt,csv}` (plus `patch_sweep.svg` for the sweep).
pub fn ablation_suite(base: &ExperimentConfig, suite: Suite, out: &Path) -> Result<Vec<AblationRow>> {
    let base = base.resolved();
    base.validate().map_err(|e| e.at_stage("config"))?;
    let res = Resources::load(&base)?;
    let plan = make_splits(&res.dataset, base.seed).map_err(|e| e.at_stage("splits"))?;
    let split = &plan.splits[0];
    let store = TeacherStore::new(out.join("teachers"));
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for var in variants(&base, suite) {
        let cfg = var.config.resolved();
        let result = cfg.validate().and_then(|_| run_split(&cfg, &res, split, &out.join(&var.label), &store));
        let mut row = AblationRow {
            suite,
            variant: var.label.clone(),
            teacher_set: cfg.teacher_set.clone(),
            patch_size: var.patch_size,
            metrics: None,
            teacher_checksums: BTreeMap::new(),
            student_checksum: None,
            error: None,
        };
        match result {
            Ok(o) => {
                row.metrics = Some(o.headline().clone());
                row.teacher_checksums = o.teachers.iter().map(|(m, s)| (*m, s.checksum.clone())).collect();
                row.student_checksum = Some(o.student_checksum.clone());
                let mut t = TableRow::new(&var.label, o.headline().clone());
                t.flags = var.flags.clone();
                table.push(t);
            }
            Err(e) => {
                log::warn!("{suite} variant {} failed: {e}", var.label);
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    write_json(&out.join("rows.json"), &rows)?;
    if !table.is_empty() {
        emit_tables(&table, out, "table")?;
    }
    if suite == Suite::PatchSweep {
        let points: Vec<(usize, f64)> =
            rows.iter().filter_map(|r| Some((r.patch_size?, r.metrics.as_ref()?.weighted_f1))).collect();
        write_text(&out.join("patch_sweep.csv"), &sweep_csv(&points))?;
        plot_patch_sweep(&points, &out.join("patch_sweep.svg"))?;
    }
    Ok(rows)
}

fn sweep_csv(points: &[(usize, f64)]) -> String {
    let mut s = String::from("patch_size,weighted_f1\n");
    for (p, f) in points {
        s.push_str(&format!("{p},{f}\n"));
    }
    s
}

/// Weighted F1 against patch size on a log₂ axis.
pub fn plot_patch_sweep(points: &[(usize, f64)], path: &Path) -> Result<()> {
    let perr = |e: &dyn fmt::Display| Error::Plot(e.to_string());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| perr(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("weighted F1 by patch size", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.5f64..6.5f64, 0f64..100f64)
        .map_err(|e| perr(&e))?;
    chart
        .configure_mesh()
        .x_desc("patch size")
        .y_desc("F1w (%)")
        .x_labels(6)
        .x_label_formatter(&|x| format!("{}", 2f64.powf(x.round()) as usize))
        .draw()
        .map_err(|e| perr(&e))?;
    let xy: Vec<(f64, f64)> = points.iter().map(|&(p, f)| ((p as f64).log2(), 100.0 * f)).collect();
    chart.draw_series(LineSeries::new(xy.clone(), &BLUE)).map_err(|e| perr(&e))?;
    chart.draw_series(xy.iter().map(|&c| Circle::new(c, 4, BLUE.filled()))).map_err(|e| perr(&e))?;
    root.present().map_err(|e| perr(&e))?;
    Ok(())
}
