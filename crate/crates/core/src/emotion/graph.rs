//! Heterogeneous post/token graph with PMI, TF-IDF and Jaccard edges.
//!
//! Node order is fixed: all posts first (dataset order), then tokens in
//! lexicographic order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use mmkd_autograd::SparseMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::encoder::EncoderBackend;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    TokenToken,
    TokenPost,
    PostPost,
}

/// Undirected edge between node indices, stored once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextGraph {
    pub post_nodes: Vec<String>,
    pub token_nodes: Vec<String>,
    pub edges: Vec<Edge>,
    /// Per-post token sequences the graph was built from.
    pub post_tokens: Vec<Vec<String>>,
    /// `nodes × d`; zero columns until features are attached.
    pub features: Array2<f64>,
}

impl TextGraph {
    pub fn num_nodes(&self) -> usize {
        self.post_nodes.len() + self.token_nodes.len()
    }

    pub fn num_posts(&self) -> usize {
        self.post_nodes.len()
    }

    pub fn token_node(&self, i: usize) -> usize {
        self.post_nodes.len() + i
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.token_nodes.binary_search_by(|t| t.as_str().cmp(token)).ok()
    }

    pub fn edge_weight(&self, a: usize, b: usize) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| (e.src == a && e.dst == b) || (e.src == b && e.dst == a))
            .map(|e| e.weight)
    }

    /// `D^-1/2 (A + I) D^-1/2`, with every edge applied in both directions.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let n = self.num_nodes();
        let mut degree = vec![1.0; n];
        for e in &self.edges {
            degree[e.src] += e.weight;
            degree[e.dst] += e.weight;
        }
        let inv: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, inv[i] * inv[i])).collect();
        for e in &self.edges {
            let w = e.weight * inv[e.src] * inv[e.dst];
            entries.push((e.src, e.dst, w));
            entries.push((e.dst, e.src, w));
        }
        SparseMatrix::new(n, n, entries)
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes() {
            return Err(Error::Config(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                self.num_nodes()
            )));
        }
        self.features = features;
        Ok(self)
    }
}

/// Windows of `window` tokens sliding by one; a shorter post is one window.
pub fn sliding_windows(tokens: &[String], window: usize) -> Vec<&[String]> {
    if tokens.is_empty() {
        return Vec::new();
    }
    if tokens.len() <= window {
        return vec![tokens];
    }
    tokens.windows(window).collect()
}

pub fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn build_graph(dataset: &Dataset, window: usize, tokenizer: impl Fn(&str) -> Vec<String>) -> Result<TextGraph> {
    if window < 2 {
        return Err(Error::RangeError { param: "window".into(), value: window.to_string(), allowed: ">= 2".into() });
    }
    if dataset.posts.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let post_tokens: Vec<Vec<String>> = dataset.posts.iter().map(|p| tokenizer(&p.text)).collect();
    let vocab: BTreeSet<&str> = post_tokens.iter().flatten().map(String::as_str).collect();
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let token_nodes: Vec<String> = vocab.iter().map(|t| t.to_string()).collect();
    let tid: HashMap<&str, usize> = token_nodes.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let n_posts = dataset.posts.len();
    let mut edges = Vec::new();

    // token-token: positive PMI over sliding windows
    let mut single = vec![0usize; token_nodes.len()];
    let mut pair: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut n_windows = 0usize;
    for toks in &post_tokens {
        for w in sliding_windows(toks, window) {
            n_windows += 1;
            let ids: BTreeSet<usize> = w.iter().map(|t| tid[t.as_str()]).collect();
            let ids: Vec<usize> = ids.into_iter().collect();
            for (k, &i) in ids.iter().enumerate() {
                single[i] += 1;
                for &j in &ids[k + 1..] {
                    *pair.entry((i, j)).or_default() += 1;
                }
            }
        }
    }
    let nw = n_windows as f64;
    for (&(i, j), &c) in &pair {
        let pmi = (c as f64 * nw / (single[i] as f64 * single[j] as f64)).ln();
        if pmi > 0.0 {
            edges.push(Edge { src: n_posts + i, dst: n_posts + j, weight: pmi, kind: EdgeKind::TokenToken });
        }
    }

    // token-post: raw count × ln(N / df)
    let mut df = vec![0usize; token_nodes.len()];
    let counts: Vec<BTreeMap<usize, usize>> = post_tokens
        .iter()
        .map(|toks| {
            let mut m = BTreeMap::new();
            for t in toks {
                *m.entry(tid[t.as_str()]).or_insert(0) += 1;
            }
            m
        })
        .collect();
    for m in &counts {
        for &t in m.keys() {
            df[t] += 1;
        }
    }
    let n = n_posts as f64;
    for (d, m) in counts.iter().enumerate() {
        for (&t, &tf) in m {
            let w = tf as f64 * (n / df[t] as f64).ln();
            if w > 0.0 {
                edges.push(Edge { src: n_posts + t, dst: d, weight: w, kind: EdgeKind::TokenPost });
            }
        }
    }

    // post-post: Jaccard over unique token sets
    let sets: Vec<BTreeSet<&str>> =
        post_tokens.iter().map(|toks| toks.iter().map(String::as_str).collect()).collect();
    for i in 0..n_posts {
        for j in i + 1..n_posts {
            let w = jaccard(&sets[i], &sets[j]);
            if w > 0.0 {
                edges.push(Edge { src: i, dst: j, weight: w, kind: EdgeKind::PostPost });
            }
        }
    }

    let n_nodes = n_posts + token_nodes.len();
    Ok(TextGraph {
        post_nodes: dataset.posts.iter().map(|p| p.id.clone()).collect(),
        token_nodes,
        edges,
        post_tokens,
        features: Array2::zeros((n_nodes, 0)),
    })
}

/// Post rows take the encoder summary; token rows take the element-wise
/// minimum of that token's contextual states across the corpus.
pub fn init_node_features(graph: &TextGraph, dataset: &Dataset, encoder: &EncoderBackend) -> Array2<f64> {
    let d = encoder.width;
    let mut out = Array2::zeros((graph.num_nodes(), d));
    let mut seen = vec![false; graph.token_nodes.len()];
    for (p, post) in dataset.posts.iter().enumerate() {
        let enc = encoder.encode(&post.text);
        out.row_mut(p).assign(&enc.summary);
        for (k, tok) in enc.tokens.iter().enumerate() {
            let Some(t) = graph.token_index(tok) else { continue };
            let mut row = out.row_mut(graph.token_node(t));
            if seen[t] {
                row.zip_mut_with(&enc.states.row(k), |a, &b| *a = a.min(b));
            } else {
                row.assign(&enc.states.row(k));
                seen[t] = true;
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    post_nodes: Vec<String>,
    token_nodes: Vec<String>,
    edges: Vec<Edge>,
    features: String,
}

/// Writes `graph.json` plus `features.bin` (u32 rows, u32 cols, f32 LE row-major).
pub fn export_graph(graph: &TextGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = GraphFile {
        post_nodes: graph.post_nodes.clone(),
        token_nodes: graph.token_nodes.clone(),
        edges: graph.edges.clone(),
        features: "features.bin".into(),
    };
    let path = dir.join("graph.json");
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("features.bin");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&matrix_to_f32_blob(&graph.features)).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn matrix_to_f32_blob(m: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * m.len());
    buf.write_u32::<LittleEndian>(m.nrows() as u32).expect("vec write");
    buf.write_u32::<LittleEndian>(m.ncols() as u32).expect("vec write");
    for &v in m.iter() {
        buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
    }
    buf
}

pub fn matrix_from_f32_blob(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut r = bytes;
    let bad = |_| Error::Config("truncated matrix blob".into());
    let rows = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    if r.len() != rows * cols * 4 {
        return Err(Error::Config(format!("matrix blob holds {} bytes, expected {}", r.len(), rows * cols * 4)));
    }
    let mut v = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        v.push(r.read_f32::<LittleEndian>().map_err(bad)? as f64);
    }
    Ok(Array2::from_shape_vec((rows, cols), v).expect("shape checked"))
}
