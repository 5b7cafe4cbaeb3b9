//! Layers built on [`Graph`]. Each layer owns only [`ParamId`]s; the values
//! live in a [`ParamStore`] so one store can be checkpointed as a unit.

use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Forward-pass mode. Training carries the RNG that draws dropout masks.
pub struct Forward<'a> {
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Forward<'a> {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let (r, c) = g.shape(x);
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        g.mul_const(x, mask)
    }
}

pub fn xavier(rng: &mut dyn RngCore, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, fan_out)));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Array2::ones((1, width)));
        let beta = store.add(format!("{name}.beta"), Array2::zeros((1, width)));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut dyn RngCore) -> Result<Self, Error> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Shape(format!("{heads} heads do not divide width {width}")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, width, rng),
            key: Linear::new(store, &format!("{name}.key"), width, width, rng),
            value: Linear::new(store, &format!("{name}.value"), width, width, rng),
            output: Linear::new(store, &format!("{name}.output"), width, width, rng),
            heads,
        })
    }

    /// Self-attention over the rows of `x` (`seq × width`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, fwd: &mut Forward, dropout: f64) -> Var {
        let width = g.shape(x).1;
        let head_dim = width / self.heads;
        let q = self.query.forward(g, store, x);
        let k = self.key.forward(g, store, x);
        let v = self.value.forward(g, store, x);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim);
            let kh = g.slice_cols(k, h * head_dim, head_dim);
            let vh = g.slice_cols(v, h * head_dim, head_dim);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            let attn = fwd.dropout(g, attn, dropout);
            outs.push(g.matmul(attn, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.output.forward(g, store, joined)
    }
}

/// Post-norm transformer encoder block (BERT layout).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
    pub activation: Activation,
    pub dropout: f64,
}

impl EncoderLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self, Error> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), width, heads, rng)?,
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), width),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), width, ff_width, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ff_width, width, rng),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), width),
            activation,
            dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, fwd: &mut Forward) -> Var {
        let a = self.attention.forward(g, store, x, fwd, self.dropout);
        let a = fwd.dropout(g, a, self.dropout);
        let h = g.add(x, a);
        let h = self.attn_norm.forward(g, store, h);
        let f = self.ff_in.forward(g, store, h);
        let f = self.activation.apply(g, f);
        let f = self.ff_out.forward(g, store, f);
        let f = fwd.dropout(g, f, self.dropout);
        let out = g.add(h, f);
        self.ff_norm.forward(g, store, out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_layers: usize,
        width: usize,
        heads: usize,
        ff_width: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self, Error> {
        let layers = (0..n_layers)
            .map(|i| {
                EncoderLayer::new(store, &format!("{name}.layer{i}"), width, heads, ff_width, activation, dropout, rng)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var, fwd: &mut Forward) -> Var {
        for layer in &self.layers {
            x = layer.forward(g, store, x, fwd);
        }
        x
    }
}

/// Dense stack: `hidden` layers with activation and dropout, then a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Vec<Linear>,
    pub output: Linear,
    pub activation: Activation,
    pub dropout: f64,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        n_hidden: usize,
        hidden_width: usize,
        output: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut fan_in = input;
        for i in 0..n_hidden {
            hidden.push(Linear::new(store, &format!("{name}.hidden{i}"), fan_in, hidden_width, rng));
            fan_in = hidden_width;
        }
        let output = Linear::new(store, &format!("{name}.output"), fan_in, output, rng);
        Self { hidden, output, activation, dropout }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var, fwd: &mut Forward) -> Var {
        for layer in &self.hidden {
            x = layer.forward(g, store, x);
            x = self.activation.apply(g, x);
            x = fwd.dropout(g, x, self.dropout);
        }
        self.output.forward(g, store, x)
    }
}

/// Fixed sinusoidal position table, `positions × width`.
pub fn sinusoidal_positions(positions: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((positions, width), |(p, i)| {
        let pair = (i / 2) as f64;
        let angle = p as f64 / 10_000f64.powf(2.0 * pair / width as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MultiHeadAttention::new(&mut store, "a", 768, 5, &mut rng).is_err());
        assert!(MultiHeadAttention::new(&mut store, "a", 768, 8, &mut rng).is_ok());
    }

    #[test]
    fn encoder_preserves_shape_and_is_deterministic_in_eval() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = TransformerEncoder::new(&mut store, "enc", 2, 8, 2, 16, Activation::Gelu, 0.1, &mut rng).unwrap();
        let input = Array2::from_shape_fn((5, 8), |(i, j)| ((i * 8 + j) as f64).sin());
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let y = enc.forward(&mut g, &store, x, &mut Forward::eval());
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a.dim(), (5, 8));
        assert_eq!(a, run());
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::new();
        let x = g.constant(Array2::ones((3, 3)));
        let y = Forward::eval().dropout(&mut g, x, 0.5);
        assert_eq!(x, y);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::new(&mut store, "mlp", 3, 2, 4, 2, Activation::Gelu, 0.0, &mut rng);
        let input = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let loss = |store: &ParamStore| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let y = mlp.forward(&mut g, store, x, &mut Forward::eval());
            let y = g.log_softmax_rows(y);
            let p = g.pick(y, &[(0, 0), (1, 1), (2, 0), (3, 1)]);
            let l = g.mean_all(p);
            let l = g.scale(l, -1.0);
            (g.scalar(l), g.backward(l, store))
        };
        let (_, grads) = loss(&store);
        let id = mlp.hidden[0].weight;
        let analytic = grads.get(id).unwrap().clone();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let orig = store.get(id)[[i, j]];
                store.get_mut(id)[[i, j]] = orig + h;
                let lp = loss(&store).0;
                store.get_mut(id)[[i, j]] = orig - h;
                let lm = loss(&store).0;
                store.get_mut(id)[[i, j]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - analytic[[i, j]]).abs() < 1e-7, "{fd} vs {}", analytic[[i, j]]);
            }
        }
    }
}
