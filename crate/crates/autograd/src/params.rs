use ndarray::{Array2, ArrayView1};

use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices, addressed by [`ParamId`] in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

const MAGIC: &[u8; 8] = b"MMKDPAR1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Little-endian dump: magic, count, then per entry name length, name,
    /// rows, cols (all u64) and row-major f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for (name, value) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
            for v in value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8], Error> {
            if cur.len() < n {
                return Err(Error::Corrupt("truncated parameter blob".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(Error::Corrupt("bad parameter blob magic".into()));
        }
        let read_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
        let count = read_u64(take(8)?);
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u64(take(8)?);
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| Error::Corrupt("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = read_u64(take(8)?);
            let cols = read_u64(take(8)?);
            let raw = take(rows * cols * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Corrupt(e.to_string()))?;
            store.add(name, value);
        }
        Ok(store)
    }
}

/// Gradients indexed by parameter; untouched parameters stay `None`.
#[derive(Clone, Debug)]
pub struct Grads {
    values: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn zeros(n: usize) -> Self {
        Self { values: (0..n).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.values.get(id.0).and_then(|v| v.as_ref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        match &mut self.values[id.0] {
            Some(existing) => *existing += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn accumulate_row(&mut self, id: ParamId, shape: (usize, usize), row: usize, g: ArrayView1<f64>) {
        let existing = self.values[id.0].get_or_insert_with(|| Array2::zeros(shape));
        let mut r = existing.row_mut(row);
        r += &g;
    }

    /// Adds `other` into `self`, used to accumulate over micro-batches.
    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.values.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.values[i] {
                    Some(existing) => *existing += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.values.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flatten().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}
