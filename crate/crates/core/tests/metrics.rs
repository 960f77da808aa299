mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tmmf::metrics::*;
use tmmf::model::{ModelConfig, TmmfModel};
use tmmf::tensor::Tensor;

#[test]
fn jaccard_matches_set_reference() {
    let mut r = rng(14);
    for case in 0..200 {
        let frames = r.random_range(1..=50);
        let classes = r.random_range(1..=5);
        let gt = random_labels(&mut r, frames, classes);
        let pred = if case % 4 == 0 {
            gt.clone()
        } else {
            random_labels(&mut r, frames, classes)
        };
        for bg in [false, true] {
            let got = sequence_jaccard(&gt, &pred, bg).unwrap();
            assert!(
                (got - jaccard_reference(&gt, &pred, bg)).abs() < 1e-12,
                "case {case}"
            );
        }
    }
}

#[test]
fn jaccard_examples() {
    // AAABB vs AABBB
    let j = sequence_jaccard(&[1, 1, 1, 2, 2], &[1, 1, 2, 2, 2], false).unwrap();
    assert!((j - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(
        sequence_jaccard(&[1, 1, 2], &[3, 3, 4], false).unwrap(),
        0.0
    );
    let r =
        mean_jaccard_index(&[vec![1, 2], vec![0, 3]], &[vec![1, 2], vec![0, 3]], false).unwrap();
    assert_eq!(r.mean_jaccard, 1.0);
    assert!(mean_jaccard_index(&[vec![1, 2]], &[vec![1]], false).is_err());
    assert!(mean_jaccard_index(&[vec![1, 2]], &[], false).is_err());
}

#[test]
fn edit_distance_matches_recursion_exhaustively() {
    // every pair with both strings of length <= 4, naive recursion
    let short = all_strings(4);
    for a in &short {
        for b in &short {
            assert_eq!(levenshtein(a, b), edit_naive(a, b), "{a:?} {b:?}");
        }
    }
    // every string of length <= 8 against every string of length <= 3 and a
    // spread of long strings, memoised recursion
    let long = all_strings(8);
    let mut r = rng(17);
    let mut partners = all_strings(3);
    partners.extend((0..40).map(|_| {
        (0..r.random_range(4..=8))
            .map(|_| r.random_range(0..3u8))
            .collect::<Vec<_>>()
    }));
    for a in &long {
        for b in &partners {
            assert_eq!(levenshtein(a, b), edit_memo(a, b), "{a:?} {b:?}");
            assert_eq!(levenshtein(b, a), edit_memo(a, b));
        }
    }
}

#[test]
fn levenshtein_accuracy_examples() {
    let seg = |classes: &[usize]| -> Vec<Segment> {
        classes
            .iter()
            .enumerate()
            .map(|(i, &c)| Segment {
                class: c,
                start: 2 * i + 1,
                end: 2 * i + 1,
            })
            .collect()
    };
    let abc = seg(&[1, 2, 3]);
    assert_eq!(levenshtein_accuracy(&abc, &abc).unwrap(), 100.0);
    let la = levenshtein_accuracy(&abc, &seg(&[1, 3])).unwrap();
    assert!((la - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(levenshtein_accuracy(&abc, &[]).unwrap(), 0.0);
    // clamped: distance 5 against 1 true instance
    assert_eq!(
        levenshtein_accuracy(&seg(&[1]), &seg(&[2, 2, 2, 2, 2])).unwrap(),
        0.0
    );
    assert!(matches!(
        levenshtein_accuracy(&[], &abc),
        Err(tmmf::Error::Data(_))
    ));
}

#[test]
fn collapse_examples() {
    assert!(collapse_to_segments(&[0; 7], 1).is_empty());
    let labels = [0, 1, 1, 0, 2];
    assert_eq!(
        collapse_to_segments(&labels, 1),
        vec![
            Segment {
                class: 1,
                start: 2,
                end: 3
            },
            Segment {
                class: 2,
                start: 5,
                end: 5
            }
        ]
    );
    assert_eq!(
        collapse_to_segments(&labels, 2),
        vec![Segment {
            class: 1,
            start: 2,
            end: 3
        }]
    );
}

#[test]
fn report_aggregates() {
    let gt = vec![vec![0, 1, 1, 0], vec![0, 0, 0, 0], vec![2, 2, 3, 3]];
    let pred = vec![vec![0, 1, 0, 0], vec![0, 0, 0, 0], vec![2, 2, 2, 3]];
    let r = mean_jaccard_index(&gt, &pred, false).unwrap();
    // per sequence: 1/2, 1 (no gestures either side), (2/3 + 1/2) / 2
    let want = (0.5 + 1.0 + (2.0 / 3.0 + 0.5) / 2.0) / 3.0;
    assert!((r.mean_jaccard - want).abs() < 1e-15);
    assert_eq!(r.frame_accuracy, 10.0 / 12.0);
    // LA only over sequences with gestures: 100 and 100
    assert_eq!(r.levenshtein_accuracy, 100.0);
    assert!(r.sequences[1].levenshtein_accuracy.is_none());
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(r.to_key_values().contains("mean_jaccard"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn relabelling_both_sides_keeps_the_score(
        gt in prop::collection::vec(0usize..5, 1..50),
        pred in prop::collection::vec(0usize..5, 1..50),
        perm in Just((1usize..5).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let n = gt.len().min(pred.len());
        let (gt, pred) = (&gt[..n], &pred[..n]);
        // background stays background; gesture classes are permuted
        let map = |c: usize| if c == 0 { 0 } else { perm[c - 1] };
        let g2: Vec<usize> = gt.iter().map(|&c| map(c)).collect();
        let p2: Vec<usize> = pred.iter().map(|&c| map(c)).collect();
        let a = sequence_jaccard(gt, pred, false).unwrap();
        let b = sequence_jaccard(&g2, &p2, false).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn levenshtein_accuracy_bounds(
        gt in prop::collection::vec(1usize..4, 1..10),
        pred in prop::collection::vec(1usize..4, 0..10),
    ) {
        let seg = |c: &[usize]| -> Vec<Segment> {
            c.iter().enumerate().map(|(i, &class)| Segment { class, start: i + 1, end: i + 1 }).collect()
        };
        let la = levenshtein_accuracy(&seg(&gt), &seg(&pred)).unwrap();
        prop_assert!(la <= 100.0 && la >= 0.0);
        prop_assert_eq!(la == 100.0, gt == pred);
    }
}

fn tiny_model(seed: u64) -> TmmfModel<f64> {
    let cfg = ModelConfig {
        input_dims: vec![3, 3],
        channels: 4,
        ufm_layers: 2,
        mfm_layers: 2,
        classes: 4,
        attention: 4,
        reduction: 2,
        ..ModelConfig::default()
    };
    TmmfModel::new(cfg, seed).unwrap()
}

#[test]
fn non_overlapping_windows_concatenate_window_predictions() {
    let model = tiny_model(1);
    let mut r = rng(3);
    let x = vec![random(&[48, 3], &mut r), random(&[48, 3], &mut r)];
    let (labels, scores) = sliding_window_predict(&model, &x, 16, 16).unwrap();
    let mut want = Vec::new();
    for start in [0, 16, 32] {
        let part: Vec<Tensor<f64>> = x
            .iter()
            .map(|s| s.slice_rows(start, start + 16).unwrap())
            .collect();
        want.extend(model.predict(&part).unwrap().labels);
    }
    assert_eq!(labels, want);
    for t in 0..48 {
        assert!((scores.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn overlapping_windows_sum_scores() {
    let model = tiny_model(2);
    let mut r = rng(4);
    let x = vec![random(&[30, 3], &mut r), random(&[30, 3], &mut r)];
    assert_eq!(window_starts(30, 16, 8), vec![0, 8, 14]);
    let (labels, scores) = sliding_window_predict(&model, &x, 16, 8).unwrap();
    let mut want = vec![vec![0.0; 4]; 30];
    for start in [0, 8, 14] {
        let part: Vec<Tensor<f64>> = x
            .iter()
            .map(|s| s.slice_rows(start, start + 16).unwrap())
            .collect();
        let p = model.predict(&part).unwrap().probs();
        for t in 0..16 {
            for c in 0..4 {
                want[start + t][c] += p.at(&[t, c]);
            }
        }
    }
    assert!(max_abs_diff(scores.data(), &flatten(&want)) < 1e-12);
    for t in 0..30 {
        let best = (0..4).fold(0, |b, c| if want[t][c] > want[t][b] { c } else { b });
        assert_eq!(labels[t], best);
    }
    // frames 0..8 are covered by one window only
    let first = model
        .predict(
            &x.iter()
                .map(|s| s.slice_rows(0, 16).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
    assert_eq!(&labels[..8], &first.labels[..8]);
}

#[test]
fn constant_output_model_matches_full_pass() {
    let mut model = tiny_model(5);
    let (kernel, bias) = model.head();
    let store = model.params_mut();
    store.assign(kernel, Tensor::zeros(&[4, 4, 1])).unwrap();
    store
        .assign(
            bias,
            Tensor::new(vec![4], vec![0.1, -0.3, 0.7, 0.2]).unwrap(),
        )
        .unwrap();
    let mut r = rng(6);
    let x = vec![random(&[53, 3], &mut r), random(&[53, 3], &mut r)];
    let full = model.predict(&x).unwrap().labels;
    assert!(full.iter().all(|&c| c == 2));
    for (l, s) in [(16, 8), (16, 16), (10, 3)] {
        assert_eq!(sliding_window_predict(&model, &x, l, s).unwrap().0, full);
    }
}

#[test]
fn short_sequences_take_one_pass() {
    let model = tiny_model(7);
    let mut r = rng(8);
    let x = vec![random(&[12, 3], &mut r), random(&[12, 3], &mut r)];
    let (labels, _) = sliding_window_predict(&model, &x, 16, 8).unwrap();
    assert_eq!(labels, model.predict(&x).unwrap().labels);
    assert!(sliding_window_predict(&model, &x, 8, 9).is_err());
    assert!(sliding_window_predict(&model, &x, 0, 0).is_err());
}
