use proptest::prelude::*;

use tcconf::consistency::{minmax_normalize, minmax_normalize_groups, ConsistencyLog, SurrogateKind};
use tcconf::data::{make_blobs, make_moons, split_semi};
use tcconf::losses::{consistency_ranking_loss_full, cyclic_pair_loss};
use tcconf::metrics::{self, EvaluatedSet};
use tcconf::theory::{certify_bound, random_instance, theorem_quantities};

/// Scores on a coarse grid so that ties occur and strictly increasing maps
/// never merge distinct values.
fn grid_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..200).prop_map(|v| v as f64 / 200.0), 1..max)
}

fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    grid_scores(max).prop_flat_map(|k| {
        let n = k.len();
        (Just(k), prop::collection::vec(any::<bool>(), n))
    })
}

fn pairs(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..max).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![Just(0.5), 0.0..1.0f64], n),
            prop::collection::vec(0.0..1.0f64, n),
        )
    })
}

/// Full-loss hinge term for the unordered pair {a, b}, zero when tied.
fn full_pair_term(c: &[f64], kappa: &[f64], a: usize, b: usize) -> f64 {
    let (lo, hi) = if c[a] < c[b] { (a, b) } else { (b, a) };
    if c[lo] == c[hi] {
        return 0.0;
    }
    ((c[hi] - c[lo]) - (kappa[hi] - kappa[lo])).max(0.0)
}

proptest! {
    #[test]
    fn ranking_losses_ignore_kappa_offset((c, kappa) in pairs(12), shift in -5.0..5.0f64) {
        let moved: Vec<f64> = kappa.iter().map(|k| k + shift).collect();
        let (a, _) = consistency_ranking_loss_full(&c, &kappa).unwrap();
        let (b, _) = consistency_ranking_loss_full(&c, &moved).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        let (a, _) = cyclic_pair_loss(&c, &kappa).unwrap();
        let (b, _) = cyclic_pair_loss(&c, &moved).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ranking_loss_zero_iff_pairs_satisfied((c, kappa) in pairs(10)) {
        let (loss, _) = consistency_ranking_loss_full(&c, &kappa).unwrap();
        prop_assert!(loss >= 0.0);
        let n = c.len();
        let satisfied = (0..n).all(|s| (0..n).all(|i| c[i] >= c[s] || kappa[s] - kappa[i] >= c[s] - c[i]));
        prop_assert_eq!(loss == 0.0, satisfied);
    }

    #[test]
    fn cyclic_loss_is_full_loss_on_cyclic_pairs((c, kappa) in pairs(12)) {
        let n = c.len();
        let restricted: f64 = (0..n).map(|s| full_pair_term(&c, &kappa, s, (s + 1) % n)).sum();
        let (batch, _) = cyclic_pair_loss(&c, &kappa).unwrap();
        prop_assert!((batch - restricted).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_depend_only_on_order((kappa, err) in scored(40)) {
        let warped: Vec<f64> = kappa.iter().map(|&k| (3.0 * k).exp() - 7.0).collect();
        let a = EvaluatedSet::from_scores(kappa.clone(), err.clone()).unwrap();
        let b = EvaluatedSet::from_scores(warped.clone(), err.clone()).unwrap();
        prop_assert_eq!(metrics::aurc(&a).unwrap().0, metrics::aurc(&b).unwrap().0);
        prop_assert_eq!(metrics::e_aurc(&a).unwrap(), metrics::e_aurc(&b).unwrap());
        prop_assert_eq!(metrics::fpr_at_95_tpr(&a).ok(), metrics::fpr_at_95_tpr(&b).ok());

        let ins: Vec<f64> = kappa.iter().zip(&err).filter(|p| !*p.1).map(|p| *p.0).collect();
        let outs: Vec<f64> = kappa.iter().zip(&err).filter(|p| *p.1).map(|p| *p.0).collect();
        let wins: Vec<f64> = warped.iter().zip(&err).filter(|p| !*p.1).map(|p| *p.0).collect();
        let wouts: Vec<f64> = warped.iter().zip(&err).filter(|p| *p.1).map(|p| *p.0).collect();
        if !ins.is_empty() && !outs.is_empty() {
            prop_assert_eq!(metrics::ood_metrics(&ins, &outs).unwrap(), metrics::ood_metrics(&wins, &wouts).unwrap());
        }
    }

    #[test]
    fn e_aurc_zero_exactly_for_separating_rankings((kappa, err) in scored(40)) {
        let set = EvaluatedSet::from_scores(kappa.clone(), err.clone()).unwrap();
        let e = metrics::e_aurc(&set).unwrap();
        prop_assert!(e >= 0.0);
        let order = metrics::descending_order(&kappa);
        let first_error = order.iter().position(|&i| err[i]).unwrap_or(order.len());
        let separating = order[first_error..].iter().all(|&i| err[i]);
        prop_assert_eq!(e == 0.0, separating);
    }

    #[test]
    fn aurc_matches_threshold_sweep(kappa in prop::collection::btree_set(0u32..10_000, 1..40), seed in any::<u64>()) {
        let kappa: Vec<f64> = kappa.into_iter().map(|v| v as f64 / 10_000.0).rev().collect();
        let err: Vec<bool> = (0..kappa.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        // one threshold per distinct score: accept everything at or above it
        let m = kappa.len() as f64;
        let sweep: f64 = kappa
            .iter()
            .map(|&theta| {
                let accepted: Vec<usize> = (0..kappa.len()).filter(|&i| kappa[i] >= theta).collect();
                accepted.iter().filter(|&&i| err[i]).count() as f64 / accepted.len() as f64
            })
            .sum::<f64>()
            / m;
        let set = EvaluatedSet::from_scores(kappa, err).unwrap();
        prop_assert!((metrics::aurc(&set).unwrap().0 - sweep).abs() < 1e-12);
    }

    #[test]
    fn normalization_ignores_affine_maps(v in prop::collection::vec(-10.0..10.0f64, 2..20), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let a = minmax_normalize(&v);
        let b = minmax_normalize(&v.iter().map(|x| scale * x + shift).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(x));
        }
        let mask: Vec<bool> = (0..v.len()).map(|i| i % 2 == 0).collect();
        let g = minmax_normalize_groups(&v, &mask).unwrap();
        let even: Vec<f64> = v.iter().step_by(2).copied().collect();
        prop_assert_eq!(g.iter().step_by(2).copied().collect::<Vec<_>>(), minmax_normalize(&even));
    }

    #[test]
    fn surrogates_stay_in_unit_interval(
        preds in prop::collection::vec(prop::collection::vec(0usize..3, 6), 2..8),
        labels in prop::collection::vec(prop::option::of(0usize..3), 6),
    ) {
        let mut log = ConsistencyLog::new(3, labels).unwrap();
        for p in &preds {
            log.record_epoch(p).unwrap();
        }
        for kind in SurrogateKind::ALL {
            if let Ok(values) = log.surrogate(kind) {
                for v in values.into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v), "{kind:?} gave {v}");
                }
            }
        }
        let c = log.consistency().unwrap().values;
        for i in 0..6 {
            if preds.iter().all(|p| p[i] == preds[0][i]) {
                prop_assert_eq!(c[i], 1.0);
            }
        }
    }

    #[test]
    fn bound_quantities_are_coherent(index in 0usize..10_000, seed in 0u64..4) {
        let inst = random_instance(index, 7, 3, seed);
        let cert = certify_bound(&inst.kappa, &inst.consistency, &inst.errors, 8).unwrap();
        prop_assert!(cert.holds);
        prop_assert_eq!(cert.lhs, cert.lhs_e_aurc);
        let q = theorem_quantities(&inst.kappa, &inst.consistency, &inst.errors, 8).unwrap();
        if q.h_c == 0 {
            prop_assert_eq!(cert.aurc_kappa, cert.aurc_c);
        }
    }

    #[test]
    fn splits_keep_class_proportions(per_class in 4usize..40, lf in 0.05..1.0f64, tf in 0.0..0.6f64, seed in any::<u64>()) {
        let set = make_blobs(3, per_class, 2, 2.0, seed).unwrap();
        let (train, test) = split_semi(&set, lf, tf, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), set.len());
        let want_test = tf * per_class as f64;
        for k in 0..3 {
            let n_test = test.labels.iter().filter(|&&y| y == Some(k)).count() as f64;
            prop_assert!((n_test - want_test).abs() <= 1.0);
        }
    }
}

#[test]
fn generators_are_pure() {
    assert_eq!(make_blobs(4, 30, 3, 2.5, 11).unwrap(), make_blobs(4, 30, 3, 2.5, 11).unwrap());
    assert_ne!(make_blobs(4, 30, 3, 2.5, 11).unwrap(), make_blobs(4, 30, 3, 2.5, 12).unwrap());
    assert_eq!(make_moons(101, 0.2, 5).unwrap(), make_moons(101, 0.2, 5).unwrap());
}
