use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Emotion,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Emotion, Modality::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Emotion => "emotion",
            Modality::Audio => "audio",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "emotion" | "emo" => Ok(Modality::Emotion),
            "audio" | "aud" => Ok(Modality::Audio),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// A frozen model that scores posts over the dataset classes.
pub trait Teacher: Send + Sync {
    fn modality(&self) -> Modality;

    fn num_classes(&self) -> usize;

    /// Class distribution for one post; non-negative, sums to 1.
    fn predict_proba(&self, post: &Post) -> Result<Vec<f64>>;

    /// The representation this teacher classifies from, used for input fusion.
    fn embed(&self, post: &Post) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherOutput {
    pub modality: Modality,
    pub probs: Vec<f64>,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stable softmax of a single row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
