//! Small synthetic corpus and lexicon for smoke runs and tests.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Post, Protocol};
use crate::emotion::{Emotion, EmotionLexicon};

pub const TOY_CLASSES: [&str; 2] = ["control", "at-risk"];

const CALM: [&str; 10] = ["sunny", "walk", "friends", "happy", "coffee", "garden", "music", "laugh", "beach", "lunch"];
const HEAVY: [&str; 10] = ["hopeless", "alone", "afraid", "cry", "hate", "empty", "tired", "numb", "shocked", "disgusted"];
const FILLER: [&str; 6] = ["today", "again", "with", "the", "night", "really"];

/// `n_per_class` posts per class, seeded. At-risk posts trail off with an
/// ellipsis, so their synthesized audio carries longer pauses.
pub fn toy_dataset(n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = i % 2;
        let pool: &[&str] = if label == 0 { &CALM } else { &HEAVY };
        let mut words: Vec<&str> = pool.choose_multiple(&mut rng, 3).copied().collect();
        words.insert(1, FILLER.choose(&mut rng).expect("non-empty"));
        let mut text = words.join(" ");
        if label == 1 {
            text.push_str("...");
        }
        posts.push(Post::new(format!("t{i:02}"), text, label));
    }
    let classes = TOY_CLASSES.iter().map(|c| c.to_string()).collect();
    Dataset::new("toy", classes, posts, Protocol::FixedSplit { train: 0.8, val: None, test: 0.2 })
        .expect("fixture is well-formed")
}

/// The standard 40-post fixture.
pub fn toy_corpus() -> Dataset {
    toy_dataset(20, 7)
}

pub fn toy_lexicon() -> EmotionLexicon {
    use Emotion::*;
    let mut lex = EmotionLexicon::new();
    let entries: [(&str, &[Emotion]); 10] = [
        ("hopeless", &[Sadness, Negative]),
        ("alone", &[Sadness]),
        ("afraid", &[Fear, Negative]),
        ("cry", &[Sadness, Negative]),
        ("hate", &[Anger, Disgust, Negative]),
        ("shocked", &[Surprise]),
        ("disgusted", &[Disgust, Negative]),
        ("happy", &[Other]),
        ("friends", &[Other]),
        ("laugh", &[Other]),
    ];
    for (term, emotions) in entries {
        lex.insert(term, emotions.iter().copied()).expect("valid term");
    }
    lex
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let d = toy_corpus();
        assert_eq!(d.posts.len(), 40);
        assert_eq!(d.posts.iter().filter(|p| p.label == 1).count(), 20);
        assert_eq!(d, toy_corpus());
        assert!(toy_lexicon().len() >= 6);
    }
}
