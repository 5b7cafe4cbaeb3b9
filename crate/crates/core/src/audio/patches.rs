//! Overlapping square patches over a (frequency × time) spectrogram.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::Spectrogram;
use crate::error::{Error, Result};

pub const DEFAULT_PATCH: usize = 16;
pub const DEFAULT_OVERLAP: usize = 6;
pub const SWEEP_SIZES: [usize; 6] = [2, 4, 8, 16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub size: usize,
    pub stride: usize,
}

impl PatchGrid {
    /// Overlap scales with the patch size, keeping 6/16 of each side shared.
    pub fn for_size(size: usize) -> Self {
        Self { size, stride: size - (DEFAULT_OVERLAP * size) / DEFAULT_PATCH }
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::InvalidPatchGrid(format!("size {} stride {} must be positive", self.size, self.stride)));
        }
        if self.size > bins {
            return Err(Error::InvalidPatchGrid(format!("patch size {} exceeds {bins} frequency bins", self.size)));
        }
        Ok(())
    }

    pub fn positions(&self, extent: usize) -> usize {
        (extent.max(self.size) - self.size) / self.stride + 1
    }

    /// `(n_freq, n_time)` for a spectrogram with `bins` and `frames`.
    pub fn shape(&self, bins: usize, frames: usize) -> (usize, usize) {
        (self.positions(bins), self.positions(frames))
    }
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self::for_size(DEFAULT_PATCH)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    /// `N × size²`, each patch flattened frequency-row by frequency-row.
    pub patches: Array2<f64>,
    /// `(freq_idx, time_idx)` per patch.
    pub positions: Vec<(usize, usize)>,
    pub n_freq: usize,
    pub n_time: usize,
    pub grid: PatchGrid,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Slides the grid over frequency (rows) and time (columns) in freq-major
/// order. The time axis is zero-padded up to one patch.
pub fn extract_patches(spec: &Spectrogram, grid: PatchGrid) -> Result<PatchSequence> {
    let bins = spec.bins();
    grid.validate(bins)?;
    let frames = spec.frames().max(grid.size);
    let p = grid.size;
    let (n_freq, n_time) = grid.shape(bins, frames);
    // freq × time view, zero-padded in time
    let mut ft = Array2::zeros((bins, frames));
    for (t, row) in spec.values.rows().into_iter().enumerate() {
        for (f, &v) in row.iter().enumerate() {
            ft[[f, t]] = v;
        }
    }
    let mut patches = Array2::zeros((n_freq * n_time, p * p));
    let mut positions = Vec::with_capacity(n_freq * n_time);
    for fi in 0..n_freq {
        for ti in 0..n_time {
            let k = positions.len();
            let (f0, t0) = (fi * grid.stride, ti * grid.stride);
            for a in 0..p {
                for b in 0..p {
                    patches[[k, a * p + b]] = ft[[f0 + a, t0 + b]];
                }
            }
            positions.push((fi, ti));
        }
    }
    Ok(PatchSequence { patches, positions, n_freq, n_time, grid })
}
