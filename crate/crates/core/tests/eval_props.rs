use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvnet_core::eval::{compute_macro_metrics, compute_metrics, match_detections, MetricsReport};

/// Largest number of disjoint within-radius pairs, by enumerating every
/// injective assignment of predictions to truths or to nothing.
fn brute_force_tp(p: &[(f64, f64)], t: &[(f64, f64)], radius: f64) -> usize {
    fn go(i: usize, p: &[(f64, f64)], t: &[(f64, f64)], r: f64, used: &mut Vec<bool>) -> usize {
        if i == p.len() {
            return 0;
        }
        let mut best = go(i + 1, p, t, r, used);
        for j in 0..t.len() {
            let d = ((p[i].0 - t[j].0).powi(2) + (p[i].1 - t[j].1).powi(2)).sqrt();
            if !used[j] && d <= r {
                used[j] = true;
                best = best.max(1 + go(i + 1, p, t, r, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, p, t, radius, &mut vec![false; t.len()])
}

fn points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)))
        .collect()
}

#[test]
fn matching_reaches_brute_force_tp_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..20_000 {
        let (np, nt) = (rng.gen_range(0..=3), rng.gen_range(0..=3));
        let extent = [10.0, 30.0, 60.0][case % 3];
        let (p, t) = (points(&mut rng, np, extent), points(&mut rng, nt, extent));
        let m = match_detections(&p, &t, 8.0);
        assert_eq!(
            m.tp(),
            brute_force_tp(&p, &t, 8.0),
            "case {case}: {p:?} {t:?}"
        );
    }
}

#[test]
fn collinear_instance_that_defeats_plain_greedy() {
    let p = [(0.0, 0.0), (3.5, 0.0)];
    let t = [(1.5, 0.0), (-2.5, 0.0)];
    assert_eq!(brute_force_tp(&p, &t, 3.0), 2);
    assert_eq!(match_detections(&p, &t, 3.0).tp(), 2);
}

#[test]
fn matching_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p, t) = (points(&mut rng, 40, 64.0), points(&mut rng, 35, 64.0));
    assert_eq!(match_detections(&p, &t, 8.0), match_detections(&p, &t, 8.0));
}

#[test]
fn micro_report_over_many_images_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let matches: Vec<_> = (0..50)
        .map(|_| {
            let (np, nt) = (rng.gen_range(0..8), rng.gen_range(0..8));
            match_detections(
                &points(&mut rng, np, 64.0),
                &points(&mut rng, nt, 64.0),
                8.0,
            )
        })
        .collect();
    let r = compute_metrics(&matches);
    assert!(r.is_consistent(1e-12));
    assert_eq!(r.tp, matches.iter().map(|m| m.tp()).sum::<usize>());
    let mac = compute_macro_metrics(&matches);
    assert_eq!(mac.images, 50);
    assert!((0.0..=1.0).contains(&mac.f1));
}

proptest! {
    #[test]
    fn count_invariants(
        p in prop::collection::vec((0.0f64..64.0, 0.0f64..64.0), 0..12),
        t in prop::collection::vec((0.0f64..64.0, 0.0f64..64.0), 0..12),
        radius in 0.5f64..30.0,
    ) {
        let m = match_detections(&p, &t, radius);
        prop_assert_eq!(m.tp() + m.fp(), p.len());
        prop_assert_eq!(m.tp() + m.fn_(), t.len());
        prop_assert!(m.tp() <= p.len().min(t.len()));
        let mut seen_p = vec![false; p.len()];
        let mut seen_t = vec![false; t.len()];
        for &(i, j, d) in &m.pairs {
            prop_assert!(!seen_p[i] && !seen_t[j]);
            seen_p[i] = true;
            seen_t[j] = true;
            prop_assert!(d <= radius);
        }
    }

    #[test]
    fn report_formulas_hold(tp in 0usize..500, fp in 0usize..500, fn_ in 0usize..500) {
        let r = MetricsReport::from_counts(tp, fp, fn_);
        for v in [r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if r.precision + r.recall > 0.0 {
            let h = 2.0 * r.precision * r.recall / (r.precision + r.recall);
            prop_assert!((r.f1 - h).abs() < 1e-12);
        } else {
            prop_assert_eq!(r.f1, 0.0);
        }
    }
}
