use std::collections::BTreeSet;

use mmkd_core::audio::patches::{PatchGrid, SWEEP_SIZES};
use mmkd_core::audio::{extract_patches, Spectrogram};
use mmkd_core::corpus::{Dataset, Post, Protocol};
use mmkd_core::distill::{kd_loss, soften, teacher_soft_targets};
use mmkd_core::emotion::graph::jaccard;
use mmkd_core::emotion::lexicon::assign_emotions_text;
use mmkd_core::emotion::{build_graph, EdgeKind};
use mmkd_core::experiment::search::{Sampler, UniformSampler};
use mmkd_core::fixtures::toy_lexicon;
use mmkd_core::hparams::SearchSpace;
use mmkd_core::metrics::confusion_metrics;
use mmkd_core::pca::{pca_spectrograms, PcaSample};
use mmkd_core::tokenize::tokenize;
use ndarray::Array2;
use proptest::prelude::*;
use proptest::sample::subsequence;

fn labels(c: usize, n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (prop::collection::vec(0..c, n), prop::collection::vec(0..c, n))
}

fn distribution(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, c).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn class_names(c: usize) -> Vec<String> {
    (0..c).map(|k| format!("c{k}")).collect()
}

proptest! {
    #[test]
    fn confusion_rows_sum_to_support((t, p) in (1usize..30).prop_flat_map(|n| labels(4, n))) {
        let c = 4;
        let r = confusion_metrics(&t, &p, &class_names(c)).unwrap();
        for k in 0..c {
            prop_assert_eq!(r.confusion[k].iter().sum::<usize>(), r.support[k]);
        }
        let trace: usize = (0..c).map(|k| r.confusion[k][k]).sum();
        prop_assert!((r.accuracy - trace as f64 / t.len() as f64).abs() < 1e-15);
        prop_assert!(r.per_class_f1.values().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn metrics_survive_relabelling(
        (t, p) in labels(3, 24),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let classes = class_names(3);
        let base = confusion_metrics(&t, &p, &classes).unwrap();
        let mut renamed = vec![String::new(); 3];
        for k in 0..3 {
            renamed[perm[k]] = classes[k].clone();
        }
        let t2: Vec<usize> = t.iter().map(|&y| perm[y]).collect();
        let p2: Vec<usize> = p.iter().map(|&y| perm[y]).collect();
        let moved = confusion_metrics(&t2, &p2, &renamed).unwrap();
        prop_assert!((base.accuracy - moved.accuracy).abs() < 1e-12);
        prop_assert!((base.macro_f1 - moved.macro_f1).abs() < 1e-12);
        prop_assert!((base.weighted_f1 - moved.weighted_f1).abs() < 1e-12);
        for c in &classes {
            prop_assert!((base.per_class_f1[c] - moved.per_class_f1[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_supports_make_weighted_equal_macro(per_class in 1usize..8, p in prop::collection::vec(0usize..3, 24)) {
        let t: Vec<usize> = (0..3 * per_class).map(|i| i % 3).collect();
        let p = &p[..t.len()];
        let r = confusion_metrics(&t, p, &class_names(3)).unwrap();
        prop_assert!((r.weighted_f1 - r.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn kd_is_nonnegative_and_zero_on_equality(p in distribution(4), q in distribution(4), temp in 1.0f64..4.0) {
        prop_assert!(kd_loss(&p, &q, temp) >= 0.0);
        prop_assert!(kd_loss(&p, &p, temp).abs() < 1e-12);
        let s = soften(&p, temp);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_targets_are_distributions_and_order_free(ts in prop::collection::vec(distribution(3), 1..4)) {
        let avg = teacher_soft_targets(&ts).unwrap();
        prop_assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(avg.iter().all(|x| *x >= 0.0));
        let mut rev = ts.clone();
        rev.reverse();
        let back = teacher_soft_targets(&rev).unwrap();
        prop_assert!(avg.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn patch_counts_and_tiling(frames in 1usize..260, size_idx in 0usize..6) {
        let size = SWEEP_SIZES[size_idx];
        let spec = Spectrogram {
            values: Array2::from_shape_fn((frames, 128), |(t, b)| (t * 128 + b + 1) as f64),
            seconds: 0.0,
        };
        let grid = PatchGrid::for_size(size);
        let seq = extract_patches(&spec, grid).unwrap();
        let padded = frames.max(size);
        let per_axis = |extent: usize| (0..).map(|k| k * grid.stride).take_while(|s| s + size <= extent).count();
        prop_assert_eq!(seq.len(), per_axis(128) * per_axis(padded));

        // non-overlapping grid: each covered cell appears exactly once
        let tiles = extract_patches(&spec, PatchGrid { size, stride: size }).unwrap();
        let mut seen = std::collections::BTreeMap::new();
        for row in tiles.patches.rows() {
            for v in row.iter().filter(|v| **v != 0.0) {
                *seen.entry(*v as i64).or_insert(0) += 1;
            }
        }
        prop_assert!(seen.values().all(|n| *n == 1));
        let covered_t = (padded / size) * size;
        prop_assert_eq!(seen.len(), (128 / size) * size * covered_t.min(frames));
    }

    #[test]
    fn search_never_leaves_the_space(seed in 0u64..10_000) {
        let space = SearchSpace::student();
        let mut s = UniformSampler::new(seed);
        for _ in 0..10 {
            prop_assert!(space.contains(&s.sample(&space)));
        }
    }

    #[test]
    fn graph_edges_are_well_formed(docs in prop::collection::vec(subsequence(vec!["a", "b", "c", "d", "e", "f"], 1..5), 2..7)) {
        let posts: Vec<Post> = docs.iter().enumerate().map(|(i, w)| Post::new(format!("p{i}"), w.join(" "), i % 2)).collect();
        let ds = Dataset::new("g", vec!["x".into(), "y".into()], posts, Protocol::Kfold { k: 2 }).unwrap();
        let g = build_graph(&ds, 2, tokenize).unwrap();
        for e in &g.edges {
            prop_assert!(e.weight.is_finite() && e.src != e.dst);
            match e.kind {
                EdgeKind::TokenToken => prop_assert!(e.weight > 0.0),
                EdgeKind::TokenPost => prop_assert!(e.weight >= 0.0),
                EdgeKind::PostPost => prop_assert!(e.weight > 0.0 && e.weight <= 1.0),
            }
        }
        let sets: Vec<BTreeSet<&str>> = docs.iter().map(|d| d.iter().copied().collect()).collect();
        for a in &sets {
            prop_assert_eq!(jaccard(a, a), 1.0);
            for b in &sets {
                prop_assert_eq!(jaccard(a, b), jaccard(b, a));
            }
        }
    }

    #[test]
    fn emotions_ignore_order_and_repetition(words in subsequence(vec!["hopeless", "alone", "sunny", "hate", "laugh", "the"], 0..6), seed in 0u64..100) {
        let lex = toy_lexicon();
        let base = assign_emotions_text(&words.join(" "), &lex);
        let mut shuffled: Vec<&str> = words.iter().chain(words.iter()).copied().collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(assign_emotions_text(&shuffled.join(" "), &lex), base);
    }

    #[test]
    fn pca_is_row_order_invariant(seed in 0u64..200) {
        use rand::{Rng, SeedableRng, seq::SliceRandom};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<PcaSample> = (0..8)
            .map(|i| PcaSample {
                id: format!("s{i}"),
                class: ["a", "b"][i % 2].into(),
                duration: 3.0,
                spectrogram: Spectrogram {
                    values: Array2::from_shape_fn((4 + i % 3, 5), |_| rng.random_range(-1.0..1.0)),
                    seconds: 3.0,
                },
            })
            .collect();
        let a = pca_spectrograms(&samples, 4, 0).unwrap();
        samples.shuffle(&mut rng);
        let b = pca_spectrograms(&samples, 4, 0).unwrap();
        prop_assert_eq!(&a[0].ids, &b[0].ids);
        for (p, q) in a[0].coords.iter().zip(&b[0].coords) {
            prop_assert!((p[0].abs() - q[0].abs()).abs() < 1e-9 && (p[1].abs() - q[1].abs()).abs() < 1e-9);
        }
    }
}

#[test]
fn five_hundred_search_samples_stay_in_space() {
    let space = SearchSpace::student();
    let mut s = UniformSampler::new(42);
    let draws: Vec<_> = (0..500).map(|_| s.sample(&space)).collect();
    assert!(draws.iter().all(|a| space.contains(a)));
    let dropouts: BTreeSet<String> = draws.iter().map(|a| a["dropout"].to_string()).collect();
    assert_eq!(dropouts.len(), 4, "{dropouts:?}");
}
