//! Hyperparameter search spaces and range validation.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DROPOUTS: [f64; 4] = [0.01, 0.05, 0.1, 0.5];
pub const DEPTHS: [usize; 6] = [2, 4, 6, 8, 10, 12];
pub const HEADS: [usize; 5] = [2, 4, 6, 8, 12];
pub const WEIGHT_DECAYS: [f64; 3] = [0.0, 0.01, 0.1];
pub const TEXT_LRS: [f64; 6] = [1e-4, 1e-5, 2e-5, 3e-5, 4e-5, 5e-5];
pub const TEXT_EPOCHS: (usize, usize) = (2, 5);
pub const EMOTION_LRS: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const EMOTION_DEPTHS: (usize, usize) = (2, 5);
pub const EMOTION_WIDTHS: [usize; 5] = [100, 200, 300, 400, 500];
pub const AUDIO_LRS: [f64; 4] = [1e-3, 1e-4, 1e-5, 5e-5];
pub const AUDIO_PATIENCE: (usize, usize) = (2, 5);
pub const AUDIO_FACTORS: [f64; 2] = [0.1, 0.5];
pub const STUDENT_LRS: [f64; 6] = TEXT_LRS;
pub const STUDENT_EPOCHS: (usize, usize) = (3, 5);
pub const ACTIVATIONS: [&str; 2] = ["relu", "gelu"];

fn fmt_set<T: fmt::Display>(xs: &[T]) -> String {
    format!("{{{}}}", xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

/// Rejects `value` unless it is one of `allowed` or `override_ranges` is set.
pub fn check_choice(param: &str, value: f64, allowed: &[f64], override_ranges: bool) -> Result<()> {
    if override_ranges || allowed.iter().any(|a| (a - value).abs() <= 1e-12 * a.abs().max(1.0)) {
        return Ok(());
    }
    Err(Error::RangeError { param: param.into(), value: value.to_string(), allowed: fmt_set(allowed) })
}

pub fn check_range(param: &str, value: usize, (lo, hi): (usize, usize), override_ranges: bool) -> Result<()> {
    if override_ranges || (lo..=hi).contains(&value) {
        return Ok(());
    }
    Err(Error::RangeError { param: param.into(), value: value.to_string(), allowed: format!("[{lo}-{hi}]") })
}

pub fn check_usize_choice(param: &str, value: usize, allowed: &[usize], override_ranges: bool) -> Result<()> {
    if override_ranges || allowed.contains(&value) {
        return Ok(());
    }
    Err(Error::RangeError { param: param.into(), value: value.to_string(), allowed: fmt_set(allowed) })
}

/// Structural limits on a transformer block, enforced even with overrides.
pub fn check_head(n_layers: usize, n_heads: usize, width: usize, dropout: f64) -> Result<()> {
    if !(2..=12).contains(&n_layers) {
        return Err(Error::RangeError { param: "n_layers".into(), value: n_layers.to_string(), allowed: "[2-12]".into() });
    }
    if !(2..=12).contains(&n_heads) {
        return Err(Error::RangeError { param: "n_heads".into(), value: n_heads.to_string(), allowed: "[2-12]".into() });
    }
    if width % n_heads != 0 {
        return Err(Error::IncompatibleHead { heads: n_heads, width });
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::RangeError { param: "dropout".into(), value: dropout.to_string(), allowed: "[0, 1)".into() });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            ParamValue::Str(_) => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match self {
            ParamValue::Int(i) if *i >= 0 => Some(*i as usize),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Choice(Vec<ParamValue>),
    /// Inclusive integer range.
    IntRange { lo: i64, hi: i64 },
}

impl Domain {
    pub fn floats(xs: &[f64]) -> Self {
        Domain::Choice(xs.iter().map(|&x| ParamValue::Float(x)).collect())
    }

    pub fn ints(xs: &[usize]) -> Self {
        Domain::Choice(xs.iter().map(|&x| ParamValue::Int(x as i64)).collect())
    }

    pub fn strs(xs: &[&str]) -> Self {
        Domain::Choice(xs.iter().map(|&x| ParamValue::Str(x.into())).collect())
    }

    pub fn range((lo, hi): (usize, usize)) -> Self {
        Domain::IntRange { lo: lo as i64, hi: hi as i64 }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Domain::Choice(xs), v) => xs.contains(v),
            (Domain::IntRange { lo, hi }, ParamValue::Int(i)) => (lo..=hi).contains(&i),
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Domain::Choice(xs) => xs.is_empty(),
            Domain::IntRange { lo, hi } => lo > hi,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            Domain::Choice(xs) => xs[rng.random_range(0..xs.len())].clone(),
            Domain::IntRange { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
        }
    }
}

pub type Assignment = BTreeMap<String, ParamValue>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, Domain>,
}

impl SearchSpace {
    pub fn with(mut self, name: &str, domain: Domain) -> Self {
        self.params.insert(name.into(), domain);
        self
    }

    pub fn contains(&self, a: &Assignment) -> bool {
        a.len() == self.params.len() && self.params.iter().all(|(k, d)| a.get(k).is_some_and(|v| d.contains(v)))
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() || self.params.values().any(Domain::is_empty)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Assignment {
        self.params.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect()
    }

    pub fn text_teacher() -> Self {
        SearchSpace::default()
            .with("dropout", Domain::floats(&DROPOUTS))
            .with("n_layers", Domain::ints(&DEPTHS))
            .with("n_heads", Domain::ints(&HEADS))
            .with("lr", Domain::floats(&TEXT_LRS))
            .with("weight_decay", Domain::floats(&WEIGHT_DECAYS))
            .with("epochs", Domain::range(TEXT_EPOCHS))
    }

    pub fn emotion_teacher() -> Self {
        SearchSpace::default()
            .with("dropout", Domain::floats(&DROPOUTS))
            .with("n_hidden", Domain::range(EMOTION_DEPTHS))
            .with("hidden_dim", Domain::ints(&EMOTION_WIDTHS))
            .with("lr", Domain::floats(&EMOTION_LRS))
            .with("weight_decay", Domain::floats(&WEIGHT_DECAYS))
    }

    pub fn audio_teacher() -> Self {
        SearchSpace::default()
            .with("dropout", Domain::floats(&DROPOUTS))
            .with("n_layers", Domain::ints(&DEPTHS))
            .with("n_heads", Domain::ints(&HEADS))
            .with("lr", Domain::floats(&AUDIO_LRS))
            .with("plateau_patience", Domain::range(AUDIO_PATIENCE))
            .with("plateau_factor", Domain::floats(&AUDIO_FACTORS))
    }

    pub fn student() -> Self {
        SearchSpace::default()
            .with("dropout", Domain::floats(&DROPOUTS))
            .with("lr", Domain::floats(&STUDENT_LRS))
            .with("weight_decay", Domain::floats(&WEIGHT_DECAYS))
            .with("n_layers", Domain::ints(&DEPTHS))
            .with("n_heads", Domain::ints(&HEADS))
            .with("activation", Domain::strs(&ACTIVATIONS))
            .with("epochs", Domain::range(STUDENT_EPOCHS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_rules() {
        assert!(check_head(10, 8, 768, 0.01).is_ok());
        assert!(matches!(check_head(2, 5, 768, 0.1), Err(Error::IncompatibleHead { heads: 5, width: 768 })));
        assert!(check_head(1, 2, 8, 0.1).is_err());
        assert!(check_head(2, 2, 8, 1.0).is_err());
    }

    #[test]
    fn choice_checks() {
        assert!(check_choice("lr", 4e-5, &TEXT_LRS, false).is_ok());
        assert!(matches!(check_choice("lr", 0.1, &TEXT_LRS, false), Err(Error::RangeError { .. })));
        assert!(check_choice("lr", 0.1, &TEXT_LRS, true).is_ok());
        assert!(check_range("epochs", 6, TEXT_EPOCHS, false).is_err());
    }

    #[test]
    fn samples_stay_in_space() {
        let space = SearchSpace::student();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = space.sample(&mut rng);
            assert!(space.contains(&a));
        }
    }

    #[test]
    fn assignment_json_roundtrip() {
        let space = SearchSpace::audio_teacher();
        let a = space.sample(&mut ChaCha8Rng::seed_from_u64(4));
        let back: Assignment = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }
}
