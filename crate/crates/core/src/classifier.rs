//! Transformer classification block over encoder token states, shared by
//! the text teacher and the student.
//!
//! Input sequence: `[summary; token states]` plus sinusoidal positions.
//! The first output row goes through dropout and a linear layer to logits.

use std::fmt;
use std::str::FromStr;

use mmkd_autograd::nn::{sinusoidal_positions, Linear, TransformerEncoder};
use mmkd_autograd::{Activation, Forward, Graph, ParamStore, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emotion::NUM_EMOTIONS;
use crate::encoder::{Backbone, BackboneInit, EncoderBackend, Vocab};
use crate::error::{Error, Result};
use crate::hparams::check_head;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { n_layers: 2, n_heads: 2, dropout: 0.1, activation: Activation::Gelu }
    }
}

impl HeadConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        check_head(self.n_layers, self.n_heads, width, self.dropout)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    TextOnly,
    Emotion,
    Audio,
    Both,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::TextOnly, FusionMode::Emotion, FusionMode::Audio, FusionMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::TextOnly => "text-only",
            FusionMode::Emotion => "emotion",
            FusionMode::Audio => "audio",
            FusionMode::Both => "both",
        }
    }

    pub fn uses_emotion(self) -> bool {
        matches!(self, FusionMode::Emotion | FusionMode::Both)
    }

    pub fn uses_audio(self) -> bool {
        matches!(self, FusionMode::Audio | FusionMode::Both)
    }

    /// Projector input width for a text width `d`.
    pub fn input_width(self, d: usize, emotion: usize, audio: usize) -> usize {
        d + if self.uses_emotion() { emotion } else { 0 } + if self.uses_audio() { audio } else { 0 }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches('+') {
            "text-only" | "text" => Ok(FusionMode::TextOnly),
            "emotion" | "emo" => Ok(FusionMode::Emotion),
            "audio" | "aud" => Ok(FusionMode::Audio),
            "both" => Ok(FusionMode::Both),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Extra per-post vectors for fused student inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExtraInputs<'a> {
    pub emotion: Option<&'a [f64]>,
    pub audio: Option<&'a [f64]>,
}

/// Checks that the vectors `mode` needs are present and returns them in concat order.
pub fn required_extras<'a>(mode: FusionMode, extras: ExtraInputs<'a>) -> Result<Vec<&'a [f64]>> {
    let mut out = Vec::new();
    if mode.uses_emotion() {
        out.push(extras.emotion.ok_or_else(|| Error::MissingModality { mode: mode.name().into(), modality: "emotion".into() })?);
    }
    if mode.uses_audio() {
        out.push(extras.audio.ok_or_else(|| Error::MissingModality { mode: mode.name().into(), modality: "audio".into() })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub mode: FusionMode,
    pub audio_width: usize,
    pub projector: Linear,
}

/// Replaces the summary slot with `projector([summary, extras...])`.
/// Text-only returns `states` unchanged.
pub fn fuse_student_inputs(
    g: &mut Graph,
    store: &ParamStore,
    states: Var,
    fusion: Option<&Fusion>,
    extras: ExtraInputs,
) -> Result<Var> {
    let Some(f) = fusion.filter(|f| f.mode != FusionMode::TextOnly) else {
        return Ok(states);
    };
    let parts = required_extras(f.mode, extras)?;
    let (rows, _) = g.shape(states);
    let summary = g.slice_rows(states, 0, 1);
    let mut cat = vec![summary];
    for p in parts {
        cat.push(g.constant(Array2::from_shape_vec((1, p.len()), p.to_vec()).expect("row")));
    }
    let joined = g.concat_cols(&cat);
    let (_, w) = g.shape(joined);
    if w != f.projector.fan_in {
        return Err(Error::Config(format!("fused input width {w} does not match projector width {}", f.projector.fan_in)));
    }
    let fused = f.projector.forward(g, store, joined);
    if rows == 1 {
        return Ok(fused);
    }
    let rest = g.slice_rows(states, 1, rows - 1);
    Ok(g.concat_rows(&[fused, rest]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceClassifier {
    pub backbone: Backbone,
    pub encoder: TransformerEncoder,
    pub output: Linear,
    pub fusion: Option<Fusion>,
    pub dropout: f64,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub backend: EncoderBackend,
    pub vocab: Vec<String>,
    pub init: BackboneInit,
    pub head: HeadConfig,
    pub num_classes: usize,
    pub fusion: FusionMode,
    pub audio_width: usize,
    pub seed: u64,
}

impl SequenceClassifier {
    /// Builds the architecture and its parameters from a spec. The same spec
    /// always yields the same parameter layout and initial values.
    pub fn build(spec: &ClassifierSpec, store: &mut ParamStore, name: &str) -> Result<Self> {
        let d = spec.backend.width;
        spec.head.validate(d)?;
        if spec.num_classes < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let vocab = Vocab::from_tokens(spec.vocab.iter().cloned());
        let backbone = Backbone::new(store, &format!("{name}.backbone"), spec.backend.clone(), vocab, spec.init);
        let encoder = TransformerEncoder::new(
            store,
            &format!("{name}.encoder"),
            spec.head.n_layers,
            d,
            spec.head.n_heads,
            2 * d,
            spec.head.activation,
            spec.head.dropout,
            &mut rng,
        )
        .map_err(|_| Error::IncompatibleHead { heads: spec.head.n_heads, width: d })?;
        let output = Linear::new(store, &format!("{name}.output"), d, spec.num_classes, &mut rng);
        let fusion = (spec.fusion != FusionMode::TextOnly).then(|| Fusion {
            mode: spec.fusion,
            audio_width: spec.audio_width,
            projector: Linear::new(
                store,
                &format!("{name}.fusion"),
                spec.fusion.input_width(d, NUM_EMOTIONS, spec.audio_width),
                d,
                &mut rng,
            ),
        });
        Ok(Self { backbone, encoder, output, fusion, dropout: spec.head.dropout, num_classes: spec.num_classes })
    }

    pub fn width(&self) -> usize {
        self.backbone.width()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.backbone.tokenize(text)
    }

    /// Final hidden state of the summary slot (`1 × d`).
    pub fn summary_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[String],
        extras: ExtraInputs,
        fwd: &mut Forward,
    ) -> Result<Var> {
        let states = self.backbone.token_states(g, store, tokens);
        let summary = self.backbone.summary(g, states);
        let seq = match states {
            Some(s) => g.concat_rows(&[summary, s]),
            None => summary,
        };
        let seq = fuse_student_inputs(g, store, seq, self.fusion.as_ref(), extras)?;
        let (n, d) = g.shape(seq);
        let pos = g.constant(sinusoidal_positions(n, d));
        let seq = g.add(seq, pos);
        let out = self.encoder.forward(g, store, seq, fwd);
        Ok(g.slice_rows(out, 0, 1))
    }

    /// Class logits (`1 × C`).
    pub fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[String],
        extras: ExtraInputs,
        fwd: &mut Forward,
    ) -> Result<Var> {
        let h = self.summary_state(g, store, tokens, extras, fwd)?;
        let h = fwd.dropout(g, h, self.dropout);
        Ok(self.output.forward(g, store, h))
    }

    pub fn predict_logits(&self, store: &ParamStore, text: &str, extras: ExtraInputs) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let z = self.logits(&mut g, store, &self.tokenize(text), extras, &mut Forward::eval())?;
        Ok(g.value(z).row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(fusion: FusionMode) -> ClassifierSpec {
        ClassifierSpec {
            backend: EncoderBackend::toy(16),
            vocab: vec!["a".into(), "b".into()],
            init: BackboneInit::Pretrained,
            head: HeadConfig { n_layers: 2, n_heads: 2, dropout: 0.1, activation: Activation::Gelu },
            num_classes: 3,
            fusion,
            audio_width: 8,
            seed: 1,
        }
    }

    #[test]
    fn builds_and_predicts_class_width() {
        let mut store = ParamStore::new();
        let m = SequenceClassifier::build(&spec(FusionMode::TextOnly), &mut store, "m").unwrap();
        assert_eq!(m.predict_logits(&store, "a b c", ExtraInputs::default()).unwrap().len(), 3);
        assert_eq!(m.predict_logits(&store, "", ExtraInputs::default()).unwrap().len(), 3);
    }

    #[test]
    fn incompatible_heads_rejected() {
        let mut s = spec(FusionMode::TextOnly);
        s.backend = EncoderBackend::resolve("bert-base-uncased", None).unwrap();
        s.head.n_heads = 5;
        let err = SequenceClassifier::build(&s, &mut ParamStore::new(), "m").unwrap_err();
        assert!(matches!(err, Error::IncompatibleHead { heads: 5, width: 768 }));
    }

    #[test]
    fn text_only_fusion_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Array2::from_elem((3, 4), 0.5));
        let y = fuse_student_inputs(&mut g, &ParamStore::new(), x, None, ExtraInputs::default()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn fused_widths_and_missing_modality() {
        assert_eq!(FusionMode::Both.input_width(768, 7, 32), 807);
        let mut store = ParamStore::new();
        let m = SequenceClassifier::build(&spec(FusionMode::Both), &mut store, "m").unwrap();
        assert_eq!(m.fusion.as_ref().unwrap().projector.fan_in, 16 + 7 + 8);
        assert_eq!(m.fusion.as_ref().unwrap().projector.fan_out, 16);
        let emo = [0.0; 7];
        let aud = [0.0; 8];
        let ok = ExtraInputs { emotion: Some(&emo), audio: Some(&aud) };
        assert!(m.predict_logits(&store, "a", ok).is_ok());
        let missing = ExtraInputs { emotion: Some(&emo), audio: None };
        assert!(matches!(m.predict_logits(&store, "a", missing), Err(Error::MissingModality { .. })));
    }

    #[test]
    fn mode_parsing() {
        for m in FusionMode::ALL {
            assert_eq!(m.name().parse::<FusionMode>().unwrap(), m);
        }
        assert_eq!("+both".parse::<FusionMode>().unwrap(), FusionMode::Both);
    }
}
