use bessplan::conformal::{calibrate, coverage_of_scores, quantile_index, QuantileRule};
use bessplan::robust::{dominant_set, normalize_box, BoxSet};
use bessplan::solver::{solve, verify_kkt, StandardLp};
use proptest::prelude::*;

fn budgeted_point() -> impl Strategy<Value = (usize, f64, Vec<f64>)> {
    (1usize..8).prop_flat_map(|m| {
        (Just(m), 0.05..=m as f64, prop::collection::vec(0.0..=1.0f64, m)).prop_map(|(m, k, h)| {
            let total: f64 = h.iter().sum();
            let shrink = if total > k { k / total } else { 1.0 };
            (m, k, h.into_iter().map(|v| v * shrink).collect())
        })
    })
}

proptest! {
    #[test]
    fn certificate_weights_dominate_budgeted_points((m, k, h) in budgeted_point()) {
        let set = dominant_set(m, k).unwrap();
        let alpha = set.certificate(&h);
        prop_assert!(alpha.iter().all(|a| *a >= 0.0));
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let point = set.combine(&alpha);
        for i in 0..m {
            prop_assert!(point[i] >= h[i] - 1e-12, "component {i}: {} < {}", point[i], h[i]);
        }
    }

    #[test]
    fn box_map_sends_unit_corners_to_box_corners(
        rows in prop::collection::vec((prop::array::uniform3(-50.0..50.0f64), prop::array::uniform3(0.0..20.0f64)), 1..6)
    ) {
        let lower: Vec<[f64; 3]> = rows.iter().map(|r| r.0).collect();
        let upper: Vec<[f64; 3]> = rows.iter().map(|r| std::array::from_fn(|p| r.0[p] + r.1[p])).collect();
        let b = BoxSet::new(lower.clone(), upper.clone()).unwrap();
        let map = normalize_box(&b);
        prop_assert_eq!(map.apply(&vec![[0.0; 3]; rows.len()]), lower);
        let top = map.apply(&vec![[1.0; 3]; rows.len()]);
        for (t, u) in upper.iter().enumerate() {
            for p in 0..3 {
                prop_assert!((top[t][p] - u[p]).abs() <= 1e-12 * (1.0 + u[p].abs()));
            }
        }
    }

    #[test]
    fn ceiling_threshold_keeps_its_rank_of_scores(
        scores in prop::collection::vec(0.0..10.0f64, 1..200),
        alpha in 0.01..0.99f64,
    ) {
        let th = calibrate(&scores, alpha, QuantileRule::Ceiling).unwrap();
        let rank = quantile_index(scores.len(), alpha, QuantileRule::Ceiling);
        if rank > scores.len() {
            prop_assert!(th.q_star.is_infinite());
        } else {
            let covered = coverage_of_scores(&scores, th.q_star).unwrap() * scores.len() as f64;
            prop_assert!(covered.round() as usize >= rank);
        }
    }

    #[test]
    fn thresholds_shrink_as_miscoverage_grows(
        scores in prop::collection::vec(0.0..10.0f64, 1..200),
        a in 0.01..0.98f64,
        gap in 0.001..0.5f64,
    ) {
        let b = (a + gap).min(0.99);
        for rule in [QuantileRule::Ceiling, QuantileRule::Floor] {
            let strict = calibrate(&scores, a, rule).unwrap().q_star;
            let loose = calibrate(&scores, b, rule).unwrap().q_star;
            prop_assert!(loose <= strict);
        }
    }
}

/// Box-bounded LP whose equality rows pass through a known interior point.
fn feasible_lp() -> impl Strategy<Value = (StandardLp, Vec<f64>)> {
    (2usize..7, 0usize..4).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.1..0.9f64, n),
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, n), m),
        )
            .prop_map(move |(c, interior, rows)| {
                let mut lp = StandardLp::new(c);
                lp.upper = vec![1.0; n];
                for row in rows {
                    let rhs: f64 = row.iter().zip(&interior).map(|(a, x)| a * x).sum();
                    let entries: Vec<(usize, f64)> = row.into_iter().enumerate().collect();
                    lp.add_eq(&entries, rhs);
                }
                (lp, interior)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bounded_feasible_programs_solve_to_kkt_points((lp, interior) in feasible_lp()) {
        let r = solve(&lp, 1e-9, 200).unwrap();
        prop_assert!(r.is_optimal(), "{:?}", r.status);
        prop_assert!(verify_kkt(&lp, &r, 1e-9).within(1e-6));
        prop_assert!(r.objective <= lp.objective(&interior) + 1e-6);
    }
}
