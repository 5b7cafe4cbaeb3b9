//! Text-encoder backends and the trainable backbone built from them.
//!
//! No pretrained weights ship with this crate. Every backend id resolves to a
//! hashed stand-in: each token maps to a fixed Gaussian vector seeded by
//! `(backend id, token)`, contextual states mix in the neighbouring tokens,
//! and the summary vector is the mean of the contextual states.

use std::collections::{BTreeSet, HashMap};

use mmkd_autograd::{Graph, ParamId, ParamStore, Var};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenize::tokenize_truncated;

pub const TOY_BACKEND: &str = "toy-deterministic";
pub const PLM_BACKENDS: [&str; 4] = ["bert-base-uncased", "roberta-base", "mentalbert", "clinicalbert"];
pub const DEFAULT_MAX_LENGTH: usize = 256;
pub const TOY_WIDTH: usize = 24;
const PLM_WIDTH: usize = 768;
const CONTEXT_MIX: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderBackend {
    pub id: String,
    pub width: usize,
    pub max_length: usize,
    pub context_mix: f64,
}

/// Output of [`EncoderBackend::encode`].
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub tokens: Vec<String>,
    /// `tokens × width` contextual states.
    pub states: Array2<f64>,
    pub summary: Array1<f64>,
}

/// Stable 64-bit seed derived from a label and a key.
pub(crate) fn stable_seed(label: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0xff]);
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl EncoderBackend {
    /// Resolves a backend id. An optional `@<width>` suffix or
    /// `width_override` replaces the registry width.
    pub fn resolve(id: &str, width_override: Option<usize>) -> Result<Self> {
        let (base, suffix_width) = match id.split_once('@') {
            Some((b, w)) => {
                let w = w.parse::<usize>().map_err(|_| Error::backend(id, "width suffix is not an integer"))?;
                (b, Some(w))
            }
            None => (id, None),
        };
        let registry_width = if base == TOY_BACKEND {
            TOY_WIDTH
        } else if PLM_BACKENDS.contains(&base) {
            PLM_WIDTH
        } else {
            return Err(Error::backend(id, "no such encoder backend"));
        };
        let width = suffix_width.or(width_override).unwrap_or(registry_width);
        if width == 0 {
            return Err(Error::backend(id, "width must be positive"));
        }
        Ok(Self { id: base.to_string(), width, max_length: DEFAULT_MAX_LENGTH, context_mix: CONTEXT_MIX })
    }

    pub fn toy(width: usize) -> Self {
        Self { id: TOY_BACKEND.into(), width, max_length: DEFAULT_MAX_LENGTH, context_mix: CONTEXT_MIX }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize_truncated(text, self.max_length)
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&self.id, token));
        Array1::from_shape_simple_fn(self.width, || StandardNormal.sample(&mut rng))
    }

    pub fn encode(&self, text: &str) -> Encoded {
        self.encode_tokens(self.tokenize(text))
    }

    pub fn encode_tokens(&self, tokens: Vec<String>) -> Encoded {
        let mut raw = Array2::zeros((tokens.len(), self.width));
        for (i, t) in tokens.iter().enumerate() {
            raw.row_mut(i).assign(&self.token_vector(t));
        }
        let states = context_matrix(tokens.len(), self.context_mix).dot(&raw);
        let summary = if tokens.is_empty() {
            Array1::zeros(self.width)
        } else {
            states.mean_axis(Axis(0)).expect("non-empty")
        };
        Encoded { tokens, states, summary }
    }
}

/// `I + mix/2 · (shift_up + shift_down)`: each state adds half-weighted neighbours.
pub fn context_matrix(n: usize, mix: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else if i.abs_diff(j) == 1 {
            mix / 2.0
        } else {
            0.0
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let unique: BTreeSet<String> = tokens.into_iter().collect();
        let tokens: Vec<String> = unique.into_iter().collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Vocabulary over every token of every text, truncated per backend.
    pub fn from_texts<'a>(backend: &EncoderBackend, texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_tokens(texts.into_iter().flat_map(|t| backend.tokenize(t)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneInit {
    /// Rows taken from the backend's token vectors.
    Pretrained,
    /// Seeded small Gaussian rows, no context mixing ("vanilla transformer").
    Random { seed: u64 },
}

/// Trainable token-embedding table plus the backend's contextual mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub backend: EncoderBackend,
    pub vocab: Vocab,
    pub table: ParamId,
    pub init: BackboneInit,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, name: &str, backend: EncoderBackend, vocab: Vocab, init: BackboneInit) -> Self {
        let mut table = Array2::zeros((vocab.len(), backend.width));
        match init {
            BackboneInit::Pretrained => {
                for (i, t) in vocab.tokens().iter().enumerate() {
                    table.row_mut(i).assign(&backend.token_vector(t));
                }
            }
            BackboneInit::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                table.mapv_inplace(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                });
            }
        }
        let table = store.add(format!("{name}.token_table"), table);
        Self { backend, vocab, table, init }
    }

    pub fn width(&self) -> usize {
        self.backend.width
    }

    fn mix(&self) -> f64 {
        match self.init {
            BackboneInit::Pretrained => self.backend.context_mix,
            BackboneInit::Random { .. } => 0.0,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.backend.tokenize(text)
    }

    /// Contextual states (`tokens × width`), or `None` for an empty sequence.
    pub fn token_states(&self, g: &mut Graph, store: &ParamStore, tokens: &[String]) -> Option<Var> {
        if tokens.is_empty() {
            return None;
        }
        let ids: Vec<Option<usize>> = tokens.iter().map(|t| self.vocab.get(t)).collect();
        let pretrained = matches!(self.init, BackboneInit::Pretrained);
        let width = self.width();
        let raw = g.param_rows(store, self.table, &ids, |i| {
            if pretrained {
                self.backend.token_vector(&tokens[i])
            } else {
                Array1::zeros(width)
            }
        });
        let mix = self.mix();
        if mix == 0.0 {
            return Some(raw);
        }
        let ctx = g.constant(context_matrix(tokens.len(), mix));
        Some(g.matmul(ctx, raw))
    }

    /// Mean-pooled summary row (`1 × width`); zeros for an empty sequence.
    pub fn summary(&self, g: &mut Graph, states: Option<Var>) -> Var {
        match states {
            Some(s) => g.mean_rows(s),
            None => g.constant(Array2::zeros((1, self.width()))),
        }
    }

    /// Encodes with the current table values, outside any training graph.
    pub fn encode(&self, store: &ParamStore, text: &str) -> Encoded {
        let tokens = self.tokenize(text);
        let mut g = Graph::new();
        let states = self.token_states(&mut g, store, &tokens);
        let summary = self.summary(&mut g, states);
        Encoded {
            states: states.map(|s| g.value(s).clone()).unwrap_or_else(|| Array2::zeros((0, self.width()))),
            summary: g.value(summary).row(0).to_owned(),
            tokens,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_known_ids() {
        assert_eq!(EncoderBackend::resolve("bert-base-uncased", None).unwrap().width, 768);
        assert_eq!(EncoderBackend::resolve("toy-deterministic", None).unwrap().width, TOY_WIDTH);
        assert_eq!(EncoderBackend::resolve("mentalbert@48", None).unwrap().width, 48);
        assert_eq!(EncoderBackend::resolve("roberta-base", Some(16)).unwrap().width, 16);
        assert!(matches!(EncoderBackend::resolve("gpt-17", None), Err(Error::BackendFailure { .. })));
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let b = EncoderBackend::toy(16);
        let a = b.encode("i feel so alone today");
        assert_eq!(a.states.dim(), (5, 16));
        assert_eq!(a.summary.len(), 16);
        assert_eq!(a, b.encode("i feel so alone today"));
        assert_eq!(a, b.encode("i feel so alone today   "));
        let other = EncoderBackend::resolve("bert-base-uncased@16", None).unwrap();
        assert_ne!(a.summary, other.encode("i feel so alone today").summary);
    }

    #[test]
    fn context_changes_token_state() {
        let b = EncoderBackend::toy(8);
        let x = b.encode("alone here");
        let y = b.encode("alone there");
        assert_ne!(x.states.row(0), y.states.row(0));
    }

    #[test]
    fn pretrained_backbone_matches_backend_encode() {
        let b = EncoderBackend::toy(8);
        let texts = ["a quiet day", "so tired :("];
        let vocab = Vocab::from_texts(&b, texts);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, "bb", b.clone(), vocab, BackboneInit::Pretrained);
        for t in texts.iter().chain(["unseen words here"].iter()) {
            let lhs = bb.encode(&store, t);
            let rhs = b.encode(t);
            assert!((lhs.summary - rhs.summary).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn truncates_to_max_length() {
        let mut b = EncoderBackend::toy(4);
        b.max_length = 3;
        assert_eq!(b.encode("a b c d e").tokens.len(), 3);
    }
}
