use dtse::experiment::{rmse, smape, Quantiles};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..20, 1usize..8).prop_flat_map(|(steps, cells)| {
        let grid = proptest::collection::vec(proptest::collection::vec(0.0f64..300.0, cells), steps);
        (grid.clone(), grid)
    })
}

proptest! {
    #[test]
    fn rmse_matches_direct_sum((truth, est) in series()) {
        let mut total = 0.0;
        for k in 0..truth.len() {
            for i in 0..truth[k].len() {
                total += (truth[k][i] - est[k][i]) * (truth[k][i] - est[k][i]);
            }
        }
        let expect = (total / truth.len() as f64).sqrt();
        prop_assert!((rmse(&truth, &est).unwrap() - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn smape_matches_direct_sum((truth, est) in series()) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut total = 0.0;
        for k in 0..truth.len() {
            let diff: Vec<f64> = truth[k].iter().zip(&est[k]).map(|(a, b)| a - b).collect();
            let den = norm(&truth[k]) + norm(&est[k]);
            if den > 0.0 {
                total += 2.0 * norm(&diff) / den;
            }
        }
        let expect = 100.0 * total / truth.len() as f64;
        let got = smape(&truth, &est).unwrap();
        prop_assert!((got - expect).abs() < 1e-9);
        prop_assert!((0.0..=200.0 + 1e-9).contains(&got));
    }

    #[test]
    fn smape_is_symmetric((truth, est) in series()) {
        prop_assert!((smape(&truth, &est).unwrap() - smape(&est, &truth).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn quantiles_are_ordered(samples in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
        let q = Quantiles::of(&samples).unwrap();
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= q.whisker_low && q.whisker_low <= q.q1.max(q.whisker_low));
        prop_assert!(q.q1 <= q.median && q.median <= q.q3);
        prop_assert!(q.whisker_high <= max);
        prop_assert!(q.whisker_low >= q.q1 - 1.5 * q.iqr() && q.whisker_high <= q.q3 + 1.5 * q.iqr());
        prop_assert!(samples.contains(&q.whisker_low) && samples.contains(&q.whisker_high));
    }
}
