//! Two-component PCA of spectrogram groups, split by audio duration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use plotters::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioTable, Spectrogram};
use crate::corpus::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DurationBin {
    #[serde(rename = "<=10s")]
    Short,
    #[serde(rename = "10-25s")]
    Long,
}

impl DurationBin {
    pub const ALL: [DurationBin; 2] = [DurationBin::Short, DurationBin::Long];

    /// None past 25 s.
    pub fn of(seconds: f64) -> Option<Self> {
        if seconds <= 10.0 {
            Some(DurationBin::Short)
        } else if seconds <= 25.0 {
            Some(DurationBin::Long)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DurationBin::Short => "<=10s",
            DurationBin::Long => "10-25s",
        }
    }
}

impl fmt::Display for DurationBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct PcaSample {
    pub id: String,
    pub class: String,
    pub duration: f64,
    pub spectrogram: Spectrogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    pub bin: DurationBin,
    pub ids: Vec<String>,
    pub classes: Vec<String>,
    pub durations: Vec<f64>,
    /// One (pc1, pc2) pair per sample.
    pub coords: Vec<[f64; 2]>,
    /// 2 × (frames · mel bins), rows unit length and mutually orthogonal.
    pub components: Array2<f64>,
    pub explained_variance: [f64; 2],
    /// Common frame count after zero-padding.
    pub frames: usize,
}

impl PcaProjection {
    pub fn class_centroid(&self, class: &str) -> Option<[f64; 2]> {
        let pts: Vec<&[f64; 2]> = self.coords.iter().zip(&self.classes).filter(|(_, c)| *c == class).map(|(p, _)| p).collect();
        if pts.is_empty() {
            return None;
        }
        let n = pts.len() as f64;
        Some([pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n])
    }
}

/// Collects one sample per post that has audio, using the spectrogram's
/// own duration.
pub fn samples_from_table(dataset: &Dataset, table: &AudioTable) -> Vec<PcaSample> {
    dataset
        .posts
        .iter()
        .filter_map(|p| {
            let s = table.get(&p.id)?;
            Some(PcaSample { id: p.id.clone(), class: dataset.classes[p.label].clone(), duration: s.seconds, spectrogram: s.clone() })
        })
        .collect()
}

/// Draws `n_per_group` samples per class from every non-empty duration
/// bin and projects each bin onto its top two principal components.
/// Candidates are ordered by id before the seeded draw, so the result does
/// not depend on input order.
pub fn pca_spectrograms(samples: &[PcaSample], n_per_group: usize, seed: u64) -> Result<Vec<PcaProjection>> {
    if n_per_group == 0 {
        return Err(Error::Config("n_per_group must be at least 1".into()));
    }
    let mut classes: Vec<&str> = samples.iter().map(|s| s.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut groups: BTreeMap<(DurationBin, &str), Vec<&PcaSample>> = BTreeMap::new();
    for s in samples {
        if let Some(bin) = DurationBin::of(s.duration) {
            groups.entry((bin, s.class.as_str())).or_default().push(s);
        }
    }
    let mut out = Vec::new();
    for bin in DurationBin::ALL {
        if !groups.keys().any(|(b, _)| *b == bin) {
            continue;
        }
        let mut chosen: Vec<&PcaSample> = Vec::new();
        for (ci, class) in classes.iter().enumerate() {
            let mut pool = groups.get(&(bin, *class)).cloned().unwrap_or_default();
            if pool.len() < n_per_group {
                return Err(Error::InsufficientSamples {
                    bin: bin.name().into(),
                    class: class.to_string(),
                    found: pool.len(),
                    needed: n_per_group,
                });
            }
            pool.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((bin as u64) << 32) ^ ci as u64);
            pool.shuffle(&mut rng);
            pool.truncate(n_per_group);
            pool.sort_by(|a, b| a.id.cmp(&b.id));
            chosen.extend(pool);
        }
        out.push(project(bin, &chosen)?);
    }
    Ok(out)
}

fn project(bin: DurationBin, rows: &[&PcaSample]) -> Result<PcaProjection> {
    let mel = rows[0].spectrogram.bins();
    if let Some(bad) = rows.iter().find(|s| s.spectrogram.bins() != mel) {
        return Err(Error::Config(format!("{} has {} mel bins, expected {mel}", bad.id, bad.spectrogram.bins())));
    }
    let frames = rows.iter().map(|s| s.spectrogram.frames()).max().unwrap_or(0);
    let dim = frames * mel;
    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, dim);
    for (i, s) in rows.iter().enumerate() {
        for ((t, b), v) in s.spectrogram.values.indexed_iter() {
            x[(i, t * mel + b)] = *v;
        }
    }
    let mean = x.row_mean();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    let comps = top_two_components(&x);
    let mut components = Array2::<f64>::zeros((2, dim));
    let mut coords = vec![[0.0; 2]; n];
    let mut explained = [0.0; 2];
    for (k, v) in comps.iter().enumerate() {
        let proj = &x * v;
        for i in 0..n {
            coords[i][k] = proj[i];
        }
        explained[k] = proj.norm_squared() / (n.max(2) - 1) as f64;
        for j in 0..dim {
            components[[k, j]] = v[j];
        }
    }
    Ok(PcaProjection {
        bin,
        ids: rows.iter().map(|s| s.id.clone()).collect(),
        classes: rows.iter().map(|s| s.class.clone()).collect(),
        durations: rows.iter().map(|s| s.duration).collect(),
        coords,
        components,
        explained_variance: explained,
        frames,
    })
}

/// Exact eigendecomposition of the n × n Gram matrix of centred rows, which
/// shares its nonzero spectrum with the feature covariance. Directions
/// with no variance are completed by Gram-Schmidt against a basis vector.
fn top_two_components(x: &DMatrix<f64>) -> [DVector<f64>; 2] {
    let dim = x.ncols();
    let gram = x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0).max(0.0);
    let tol = 1e-10 * top.max(f64::MIN_POSITIVE);

    let mut found: Vec<DVector<f64>> = Vec::with_capacity(2);
    for &i in order.iter().take(2) {
        let lambda = eig.eigenvalues[i];
        if lambda <= tol || top == 0.0 {
            break;
        }
        let mut v = x.transpose() * eig.eigenvectors.column(i);
        for u in &found {
            let d = u.dot(&v);
            v.axpy(-d, u, 1.0);
        }
        let norm = v.norm();
        if norm <= 1e-12 {
            break;
        }
        found.push(v / norm);
    }
    while found.len() < 2 {
        found.push(complete_basis(&found, dim));
    }
    for v in &mut found {
        orient(v);
    }
    [found[0].clone(), found[1].clone()]
}

fn complete_basis(existing: &[DVector<f64>], dim: usize) -> DVector<f64> {
    for j in 0..dim {
        let mut v = DVector::<f64>::zeros(dim);
        v[j] = 1.0;
        for _ in 0..2 {
            for u in existing {
                let d = u.dot(&v);
                v.axpy(-d, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 0.5 {
            return v / norm;
        }
    }
    DVector::zeros(dim)
}

/// Largest-magnitude entry (first on ties) is made positive.
fn orient(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

const PALETTE: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

/// One scatter panel per bin with id labels, plus a CSV sidecar next to
/// the SVG (`id,x,y,class,duration,bin`).
pub fn write_pca_plot(projections: &[PcaProjection], svg: &Path) -> Result<()> {
    if projections.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let perr = |e: &dyn fmt::Display| Error::Plot(e.to_string());
    if let Some(parent) = svg.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut classes: Vec<&str> = projections.iter().flat_map(|p| p.classes.iter().map(String::as_str)).collect();
    classes.sort_unstable();
    classes.dedup();
    let colour = |c: &str| PALETTE[classes.iter().position(|x| *x == c).unwrap_or(0) % PALETTE.len()];

    let root = SVGBackend::new(svg, (520 * projections.len() as u32, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| perr(&e))?;
    let panels = root.split_evenly((1, projections.len()));
    for (panel, p) in panels.iter().zip(projections) {
        let span = |k: usize| {
            let lo = p.coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
            let hi = p.coords.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
            let pad = ((hi - lo) * 0.1).max(1e-6);
            (lo - pad)..(hi + pad)
        };
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("duration {}", p.bin), ("sans-serif", 16))
            .margin(10)
            .x_label_area_size(32)
            .y_label_area_size(48)
            .build_cartesian_2d(span(0), span(1))
            .map_err(|e| perr(&e))?;
        chart.configure_mesh().x_desc("PC1").y_desc("PC2").draw().map_err(|e| perr(&e))?;
        for class in &classes {
            let pts: Vec<(f64, f64, &str)> = p
                .coords
                .iter()
                .zip(&p.classes)
                .zip(&p.ids)
                .filter(|((_, c), _)| c == class)
                .map(|((xy, _), id)| (xy[0], xy[1], id.as_str()))
                .collect();
            let col = colour(class);
            chart
                .draw_series(pts.iter().map(|&(x, y, _)| Circle::new((x, y), 4, col.filled())))
                .map_err(|e| perr(&e))?
                .label(*class)
                .legend(move |(x, y)| Circle::new((x, y), 4, col.filled()));
            chart
                .draw_series(pts.iter().map(|&(x, y, id)| Text::new(id.to_string(), (x, y), ("sans-serif", 10))))
                .map_err(|e| perr(&e))?;
        }
        chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(|e| perr(&e))?;
    }
    root.present().map_err(|e| perr(&e))?;

    let mut csv = String::from("id,x,y,class,duration,bin\n");
    for p in projections {
        for i in 0..p.ids.len() {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.ids[i], p.coords[i][0], p.coords[i][1], p.classes[i], p.durations[i], p.bin
            ));
        }
    }
    let sidecar = svg.with_extension("csv");
    std::fs::write(&sidecar, csv).map_err(|e| Error::io(&sidecar, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(frames: usize, bins: usize, f: impl Fn(usize, usize) -> f64) -> Spectrogram {
        Spectrogram { values: Array2::from_shape_fn((frames, bins), |(t, b)| f(t, b)), seconds: frames as f64 / 100.0 }
    }

    fn sample(id: &str, class: &str, duration: f64, s: Spectrogram) -> PcaSample {
        PcaSample { id: id.into(), class: class.into(), duration, spectrogram: s }
    }

    #[test]
    fn bins_by_duration() {
        assert_eq!(DurationBin::of(10.0), Some(DurationBin::Short));
        assert_eq!(DurationBin::of(10.5), Some(DurationBin::Long));
        assert_eq!(DurationBin::of(25.1), None);
    }

    #[test]
    fn identical_rows_share_coordinates() {
        let mut v = Vec::new();
        for i in 0..4 {
            let off = if i < 2 { 0.0 } else { 1.0 };
            let class = if i % 2 == 0 { "a" } else { "b" };
            v.push(sample(&format!("p{i}"), class, 1.0, spec(3, 4, |t, b| off + (t * b) as f64)));
        }
        let p = &pca_spectrograms(&v, 2, 0).unwrap()[0];
        let at = |id: &str| p.coords[p.ids.iter().position(|x| x == id).unwrap()];
        assert_eq!(at("p0"), at("p1"));
        assert_ne!(at("p0"), at("p2"));
    }

    #[test]
    fn rank_one_has_no_second_variance() {
        let base = spec(5, 6, |t, b| ((t + 1) * (b + 2)) as f64 % 7.0);
        let v: Vec<PcaSample> = (0..6)
            .map(|i| {
                let mut s = base.clone();
                s.values *= 0.5 + i as f64;
                sample(&format!("r{i}"), if i % 2 == 0 { "a" } else { "b" }, 2.0, s)
            })
            .collect();
        let p = &pca_spectrograms(&v, 3, 1).unwrap()[0];
        assert!(p.explained_variance[1] <= 1e-9);
        assert!(p.explained_variance[0] > 0.0);
        let c = &p.components;
        assert!((c.row(0).dot(&c.row(1))).abs() <= 1e-9);
        assert!((c.row(1).dot(&c.row(1)) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn padding_and_insufficient_groups() {
        let v = vec![
            sample("a1", "a", 1.0, spec(3, 2, |_, _| 1.0)),
            sample("b1", "b", 1.0, spec(5, 2, |_, _| 2.0)),
        ];
        assert_eq!(pca_spectrograms(&v, 1, 0).unwrap()[0].frames, 5);
        assert!(matches!(pca_spectrograms(&v, 2, 0), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn plot_and_sidecar() {
        let v: Vec<PcaSample> =
            (0..4).map(|i| sample(&format!("s{i}"), ["a", "b"][i % 2], 3.0, spec(2, 3, |t, b| (i * t + b) as f64))).collect();
        let p = pca_spectrograms(&v, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("pca.svg");
        write_pca_plot(&p, &svg).unwrap();
        let csv = std::fs::read_to_string(svg.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(std::fs::read_to_string(&svg).unwrap().contains("s3"));
    }
}
