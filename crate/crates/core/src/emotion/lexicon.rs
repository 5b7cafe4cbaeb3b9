//! Term → emotion-type lexicon and per-post multi-hot emotion targets.
//!
//! File format: UTF-8, one `term<TAB>emotion1,emotion2,...` entry per line.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

pub const NUM_EMOTIONS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Sadness,
    Surprise,
    Negative,
    Other,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Sadness,
        Emotion::Surprise,
        Emotion::Negative,
        Emotion::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
            Emotion::Negative => "negative",
            Emotion::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s.trim().to_lowercase())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLexicon {
    entries: BTreeMap<String, BTreeSet<Emotion>>,
}

impl EmotionLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or extends an entry. Terms are stored lower-cased.
    pub fn insert(&mut self, term: &str, emotions: impl IntoIterator<Item = Emotion>) -> Result<()> {
        let set: BTreeSet<Emotion> = emotions.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Config(format!("lexicon term {term:?} has no emotions")));
        }
        self.entries.entry(term.trim().to_lowercase()).or_default().extend(set);
        Ok(())
    }

    pub fn get(&self, term: &str) -> Option<&BTreeSet<Emotion>> {
        self.entries.get(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &BTreeSet<Emotion>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, emotions) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("lexicon line {}: expected term<TAB>emotions", i + 1)))?;
            let parsed = emotions
                .split(',')
                .filter(|e| !e.trim().is_empty())
                .map(|e| Emotion::parse(e).ok_or_else(|| Error::Config(format!("lexicon line {}: unknown emotion {e:?}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            lex.insert(term, parsed)?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(t, es)| format!("{t}\t{}\n", es.iter().map(|e| e.name()).collect::<Vec<_>>().join(",")))
            .collect()
    }
}

/// Multi-hot vector over the seven emotion types.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmotionLabelSet {
    pub bits: [u8; NUM_EMOTIONS],
}

impl EmotionLabelSet {
    pub fn contains(&self, e: Emotion) -> bool {
        self.bits[e.index()] == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn as_f64(&self) -> [f64; NUM_EMOTIONS] {
        self.bits.map(f64::from)
    }
}

/// Union of the lexicon emotions of every matching word in the post.
pub fn assign_emotions(post: &Post, lexicon: &EmotionLexicon) -> EmotionLabelSet {
    assign_emotions_text(&post.text, lexicon)
}

pub fn assign_emotions_text(text: &str, lexicon: &EmotionLexicon) -> EmotionLabelSet {
    let mut out = EmotionLabelSet::default();
    for tok in tokenize(text) {
        if let Some(es) = lexicon.get(&tok) {
            for e in es {
                out.bits[e.index()] = 1;
            }
        }
    }
    out
}

/// How many posts match exactly `m` emotion types, for `m = 0..=7`.
pub fn label_count_distribution(labels: &[EmotionLabelSet]) -> [usize; NUM_EMOTIONS + 1] {
    let mut hist = [0; NUM_EMOTIONS + 1];
    for l in labels {
        hist[l.count()] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> EmotionLexicon {
        EmotionLexicon::parse("cry\tsadness,negative\nalone\tsadness\n").unwrap()
    }

    fn bits(es: &[Emotion]) -> EmotionLabelSet {
        let mut s = EmotionLabelSet::default();
        for e in es {
            s.bits[e.index()] = 1;
        }
        s
    }

    #[test]
    fn union_of_matches() {
        let p = Post::new("1", "i cry alone", 0);
        assert_eq!(assign_emotions(&p, &lex()), bits(&[Emotion::Sadness, Emotion::Negative]));
    }

    #[test]
    fn no_match_is_all_zero() {
        let p = Post::new("1", "sunny picnic", 0);
        assert_eq!(assign_emotions(&p, &lex()), EmotionLabelSet::default());
    }

    #[test]
    fn case_and_repetition_do_not_matter() {
        let p = Post::new("1", "CRY cry", 0);
        assert_eq!(assign_emotions(&p, &lex()), bits(&[Emotion::Sadness, Emotion::Negative]));
        let q = Post::new("2", "alone cry", 0);
        let r = Post::new("3", "cry alone alone", 0);
        assert_eq!(assign_emotions(&q, &lex()), assign_emotions(&r, &lex()));
    }

    #[test]
    fn parse_rejects_unknown_emotion_and_roundtrips() {
        assert!(EmotionLexicon::parse("x\tjoy\n").is_err());
        assert!(EmotionLexicon::parse("x sadness\n").is_err());
        let l = lex();
        assert_eq!(EmotionLexicon::parse(&l.to_tsv()).unwrap(), l);
    }

    #[test]
    fn distribution_sums_to_post_count() {
        let l = lex();
        let labels: Vec<_> = ["cry", "sunny", "alone", "cry alone"]
            .iter()
            .map(|t| assign_emotions_text(t, &l))
            .collect();
        let hist = label_count_distribution(&labels);
        assert_eq!(hist.iter().sum::<usize>(), 4);
        assert_eq!(hist[0], 1);
        assert_eq!(hist[2], 2);
    }
}
