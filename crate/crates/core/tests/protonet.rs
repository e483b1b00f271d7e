mod common;

use common::{naive_prototypes, naive_sq_dist, Lcg};
use fskws_core::nets::{EmbeddingBatch, ArchKind};
use fskws_core::protonet::{
    classify, compute_prototypes, episode_accuracy, episode_log_probs, episode_loss, prototypes_from,
    squared_euclidean,
};
use fskws_core::tensor::{grad_check, ParamId, ParamSet, Tape, Tensor};
use proptest::prelude::*;

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

/// Loss of an episode given raw support/query embeddings.
fn loss_of(support: &[f64], s_labels: &[usize], query: &[f64], q_labels: &[usize], way: usize, dim: usize) -> f64 {
    let mut tape = Tape::new();
    let s = tape.constant(t64(&[s_labels.len(), dim], support));
    let q = tape.constant(t64(&[q_labels.len(), dim], query));
    let p = compute_prototypes(&mut tape, s, s_labels, way).unwrap();
    let d = squared_euclidean(&mut tape, q, p).unwrap();
    let lp = episode_log_probs(&mut tape, d).unwrap();
    let loss = episode_loss(&mut tape, lp, q_labels).unwrap();
    tape.value(loss).data()[0]
}

#[test]
fn distances_match_double_loop() {
    let mut rng = Lcg(1);
    let q = rng.vec(5 * 7, -2.0, 2.0);
    let p = rng.vec(4 * 7, -2.0, 2.0);
    let mut tape = Tape::new();
    let qv = tape.constant(t64(&[5, 7], &q));
    let pv = tape.constant(t64(&[4, 7], &p));
    let d = squared_euclidean(&mut tape, qv, pv).unwrap();
    for (a, b) in tape.value(d).data().iter().zip(naive_sq_dist(&q, &p, 7)) {
        assert!((a - b).abs() < 1e-6);
        assert!(*a >= 0.0);
    }
    let same = squared_euclidean(&mut tape, qv, qv).unwrap();
    for m in 0..5 {
        assert_eq!(tape.value(same).data()[m * 5 + m], 0.0);
    }
}

#[test]
fn prototypes_match_oracle_and_ignore_support_order() {
    let mut rng = Lcg(2);
    let (way, k, dim) = (3, 4, 6);
    let x = rng.vec(way * k * dim, -1.0, 1.0);
    let labels: Vec<usize> = (0..way * k).map(|i| (i * 7) % way).collect();
    let mut tape = Tape::new();
    let s = tape.constant(t64(&[way * k, dim], &x));
    let p = compute_prototypes(&mut tape, s, &labels, way).unwrap();
    let oracle = naive_prototypes(&x, &labels, way, dim);
    for (a, b) in tape.value(p).data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }

    let order: Vec<usize> = (0..way * k).rev().collect();
    let xr: Vec<f64> = order.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].to_vec()).collect();
    let lr: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let s = tape.constant(t64(&[way * k, dim], &xr));
    let pr = compute_prototypes(&mut tape, s, &lr, way).unwrap();
    for (a, b) in tape.value(pr).data().iter().zip(tape.value(p).data()) {
        assert!((a - b).abs() < 1e-12);
    }

    let emb = EmbeddingBatch {
        values: x.iter().map(|&v| v as f32).collect(),
        batch: way * k,
        dim,
        kind: ArchKind::TdResnet7,
    };
    let set = prototypes_from(&emb, &labels, way).unwrap();
    for c in 0..way {
        for (a, b) in set.row(c).iter().zip(&oracle[c * dim..]) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let d = tape.constant(t64(&[2, 2], &[0.0, 0.0, 0.0, 3f64.ln()]));
    let lp = episode_log_probs(&mut tape, d).unwrap();
    let probs: Vec<f64> = tape.value(lp).data().iter().map(|v| v.exp()).collect();
    for (a, b) in probs.iter().zip([0.5, 0.5, 0.75, 0.25]) {
        assert!((a - b).abs() < 1e-12);
    }
    let loss = episode_loss(&mut tape, lp, &[0, 1]).unwrap();
    assert!((tape.value(loss).data()[0] - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);

    let eq = tape.constant(t64(&[1, 4], &[2.0; 4]));
    let lp = episode_log_probs(&mut tape, eq).unwrap();
    let loss = episode_loss(&mut tape, lp, &[3]).unwrap();
    assert!((tape.value(loss).data()[0] - 1.3863).abs() < 1e-4);

    let sure = tape.constant(t64(&[1, 2], &[0.0, 1e4]));
    let lp = episode_log_probs(&mut tape, sure).unwrap();
    let loss = episode_loss(&mut tape, lp, &[0]).unwrap();
    assert_eq!(tape.value(loss).data()[0], 0.0);
}

#[test]
fn classify_examples() {
    assert_eq!(classify(&t64(&[1, 2], &[-0.1, -2.3])), vec![0]);
    assert_eq!(classify(&t64(&[1, 3], &[-1.0, -1.0, -1.0])), vec![0]);
    assert_eq!(episode_accuracy(&[0, 1, 2], &[0, 1, 2]), 1.0);
    assert_eq!(episode_accuracy(&[0, 1, 2, 0], &[0, 1, 0, 1]), 0.5);
}

#[test]
fn loss_gradient_wrt_embeddings_matches_finite_differences() {
    let mut rng = Lcg(5);
    let (way, k, nq, dim) = (3, 2, 2, 5);
    let mut ps = ParamSet::new();
    ps.add("support", t64(&[way * k, dim], &rng.vec(way * k * dim, -1.0, 1.0))).unwrap();
    ps.add("query", t64(&[way * nq, dim], &rng.vec(way * nq * dim, -1.0, 1.0))).unwrap();
    let s_labels: Vec<usize> = (0..way * k).map(|i| i % way).collect();
    let q_labels: Vec<usize> = (0..way * nq).map(|i| (i + 1) % way).collect();
    let report = grad_check(
        &ps,
        |ps| {
            let mut tape = Tape::new();
            let s = tape.param(ps, ParamId(0));
            let q = tape.param(ps, ParamId(1));
            let p = compute_prototypes(&mut tape, s, &s_labels, way)?;
            let d = squared_euclidean(&mut tape, q, p)?;
            let lp = episode_log_probs(&mut tape, d)?;
            let loss = episode_loss(&mut tape, lp, &q_labels)?;
            Ok((tape, loss))
        },
        1e-4,
        usize::MAX,
        0,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn episode_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (2usize..5).prop_flat_map(|way| {
        let dim = 3;
        (
            prop::collection::vec(-3.0f64..3.0, way * 2 * dim),
            prop::collection::vec(-3.0f64..3.0, way * dim),
            Just(way),
        )
    })
}

proptest! {
    #[test]
    fn log_prob_rows_normalize(d in prop::collection::vec(0.0f64..200.0, 12)) {
        let mut tape = Tape::new();
        let dv = tape.constant(t64(&[3, 4], &d));
        let lp = episode_log_probs(&mut tape, dv).unwrap();
        for row in tape.value(lp).data().chunks(4) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shifting_a_row_keeps_probabilities(d in prop::collection::vec(0.0f64..50.0, 4), c in 0.0f64..100.0) {
        let mut tape = Tape::new();
        let a = tape.constant(t64(&[1, 4], &d));
        let shifted: Vec<f64> = d.iter().map(|v| v + c).collect();
        let b = tape.constant(t64(&[1, 4], &shifted));
        let la = episode_log_probs(&mut tape, a).unwrap();
        let lb = episode_log_probs(&mut tape, b).unwrap();
        for (x, y) in tape.value(la).data().iter().zip(tape.value(lb).data()) {
            prop_assert!((x.exp() - y.exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_invariant_under_relabeling((support, query, way) in episode_strategy(), shift in 1usize..4) {
        let dim = 3;
        let s_labels: Vec<usize> = (0..way * 2).map(|i| i % way).collect();
        let q_labels: Vec<usize> = (0..way).collect();
        let perm = |l: &usize| (l + shift) % way;
        let a = loss_of(&support, &s_labels, &query, &q_labels, way, dim);
        let b = loss_of(
            &support,
            &s_labels.iter().map(perm).collect::<Vec<_>>(),
            &query,
            &q_labels.iter().map(perm).collect::<Vec<_>>(),
            way,
            dim,
        );
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn argmax_log_prob_is_argmin_distance_and_survives_scaling(
        (support, query, way) in episode_strategy(),
        scale in 0.1f64..10.0,
    ) {
        let dim = 3;
        let s_labels: Vec<usize> = (0..way * 2).map(|i| i % way).collect();
        let predict = |factor: f64| {
            let mut tape = Tape::new();
            let s: Vec<f64> = support.iter().map(|v| v * factor).collect();
            let q: Vec<f64> = query.iter().map(|v| v * factor).collect();
            let sv = tape.constant(t64(&[way * 2, dim], &s));
            let qv = tape.constant(t64(&[way, dim], &q));
            let p = compute_prototypes(&mut tape, sv, &s_labels, way).unwrap();
            let d = squared_euclidean(&mut tape, qv, p).unwrap();
            let lp = episode_log_probs(&mut tape, d).unwrap();
            let dist = tape.value(d).data().to_vec();
            (classify(tape.value(lp)), dist)
        };
        let (preds, dist) = predict(1.0);
        for (m, &pred) in preds.iter().enumerate() {
            let row = &dist[m * way..(m + 1) * way];
            let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(row[pred] <= min + 1e-9);
        }
        let (scaled, _) = predict(scale);
        prop_assert_eq!(scaled, preds);
    }
}
