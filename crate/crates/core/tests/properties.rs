use proptest::prelude::*;

use heatcast::anomaly::{detect, inject, DetectorConfig};
use heatcast::distributions::{PredictiveDistribution, QuantileCdf, ZeroMassGaussian, ZeroMassT};
use heatcast::metrics::roc;
use heatcast::rng::substream;

proptest! {
    #[test]
    fn injection_keeps_loads_non_negative(
        values in prop::collection::vec(0.0f64..500.0, 1..400),
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let (out, inj) = inject(&values, rate, &mut substream(seed, "prop")).unwrap();
        prop_assert_eq!(out.len(), values.len());
        prop_assert!(out.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(inj.positions.len(), (rate * values.len() as f64).round() as usize);
        prop_assert!(inj.positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn quantile_cdf_is_monotone(
        raw in prop::collection::vec(-20.0f64..300.0, 99),
        probes in prop::collection::vec(-50.0f64..400.0, 2..50),
    ) {
        let d = QuantileCdf::from_quantiles(raw).unwrap();
        let mut ys = probes;
        ys.sort_by(f64::total_cmp);
        let f: Vec<f64> = ys.iter().map(|&y| d.cdf(y)).collect();
        prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(f.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(d.cdf(-1e-9), 0.0);
    }

    #[test]
    fn roc_is_monotone_in_threshold(
        mus in prop::collection::vec(10.0f64..100.0, 50..200),
        seed in any::<u64>(),
    ) {
        let mut rng = substream(seed, "roc");
        let dists: Vec<PredictiveDistribution> = mus
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                if i % 2 == 0 {
                    ZeroMassGaussian::new(m, 0.2 * m).unwrap().into()
                } else {
                    ZeroMassT::new(m, 0.2 * m, 5.0).unwrap().into()
                }
            })
            .collect();
        let y: Vec<f64> = dists.iter().map(|d| d.sample(1, &mut rng)[0]).collect();
        let (obs, inj) = inject(&y, 0.1, &mut rng).unwrap();
        let truth = inj.truth(obs.len());
        prop_assume!(!inj.positions.is_empty());
        let taus = [0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.45];
        let flags: Vec<Vec<bool>> = taus
            .iter()
            .map(|&t| detect(&dists, &obs, &DetectorConfig::symmetric(t).unwrap()).unwrap())
            .collect();
        let curve = roc(&flags, &truth, &taus).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
    }
}
