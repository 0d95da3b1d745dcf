use proptest::prelude::*;

use riskmetric::riskmetrics::premium_discrete;
use riskmetric::sweep::SweepRange;
use riskmetric::{Distortion, LossModel, PiecewiseLinear, PremiumPrinciple};

const TOL: f64 = 1e-9;

fn principle() -> impl Strategy<Value = PremiumPrinciple<f64>> {
    (0.0..1.0f64, 0.0..1.0f64, any::<bool>()).prop_map(|(theta, alpha, gini)| {
        let dev = if gini {
            Distortion::GiniDeviation
        } else {
            Distortion::MeanMedianDeviation
        };
        let k = Distortion::Mixture {
            linear: 0.0,
            parts: vec![riskmetric::distortions::MixturePart {
                weight: alpha,
                distortion: dev,
            }],
        };
        PremiumPrinciple::new(theta, k).unwrap()
    })
}

/// Two payoffs on a shared finite probability space.
fn scenarios() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..10.0f64, n),
            prop::collection::vec(-5.0..10.0f64, n),
            prop::collection::vec(0.05..1.0f64, n),
        )
            .prop_map(|(y, z, raw)| {
                let total: f64 = raw.iter().sum();
                (y, z, raw.iter().map(|p| p / total).collect())
            })
    })
}

fn contract() -> impl Strategy<Value = PiecewiseLinear<f64>> {
    (1usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01..3.0f64, n),
            prop::collection::vec(0.0..=1.0f64, n),
            0.0..=1.0f64,
        )
            .prop_map(|(widths, slopes, tail)| {
                let mut knots = vec![0.0];
                for w in widths {
                    knots.push(knots.last().unwrap() + w);
                }
                PiecewiseLinear::new(knots, slopes, tail).unwrap()
            })
    })
}

fn loss() -> impl Strategy<Value = LossModel<f64>> {
    prop_oneof![
        (0.05..=1.0f64, 0.2..5.0f64)
            .prop_map(|(q, l)| LossModel::zero_inflated_exponential(q, l).unwrap()),
        (1usize..6).prop_flat_map(|n| {
            (
                prop::collection::btree_set(0u32..1000, n),
                prop::collection::vec(0.05..1.0f64, n),
            )
                .prop_map(|(atoms, raw)| {
                    let total: f64 = raw.iter().sum();
                    LossModel::discrete(
                        atoms.into_iter().map(|a| a as f64 / 100.0).collect(),
                        raw.iter().map(|p| p / total).collect(),
                    )
                    .unwrap()
                })
        }),
    ]
}

proptest! {
    #[test]
    fn premium_translates_by_the_loaded_shift(pp in principle(), (y, _, p) in scenarios(), c in -3.0..3.0f64) {
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let gap = premium_discrete(&pp, &shifted, &p) - premium_discrete(&pp, &y, &p) - (1.0 + pp.theta) * c;
        prop_assert!(gap.abs() < TOL);
    }

    #[test]
    fn premium_is_positively_homogeneous(pp in principle(), (y, _, p) in scenarios(), c in 0.0..5.0f64) {
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let gap = premium_discrete(&pp, &scaled, &p) - c * premium_discrete(&pp, &y, &p);
        prop_assert!(gap.abs() < TOL * (1.0 + c));
    }

    #[test]
    fn premium_is_convex(pp in principle(), (y, z, p) in scenarios(), l in 0.0..=1.0f64) {
        let mix: Vec<f64> = y.iter().zip(&z).map(|(a, b)| l * a + (1.0 - l) * b).collect();
        let lhs = premium_discrete(&pp, &mix, &p);
        let rhs = l * premium_discrete(&pp, &y, &p) + (1.0 - l) * premium_discrete(&pp, &z, &p);
        prop_assert!(lhs <= rhs + TOL);
    }

    #[test]
    fn premium_adds_over_comonotonic_payoffs(pp in principle(), (y, _, p) in scenarios(), a in contract(), b in contract()) {
        // both payoffs are non-decreasing functions of the same loss
        let ya: Vec<f64> = y.iter().map(|&x| a.evaluate(x.abs())).collect();
        let yb: Vec<f64> = y.iter().map(|&x| b.evaluate(x.abs())).collect();
        let sum: Vec<f64> = ya.iter().zip(&yb).map(|(u, v)| u + v).collect();
        let gap = premium_discrete(&pp, &sum, &p) - premium_discrete(&pp, &ya, &p) - premium_discrete(&pp, &yb, &p);
        prop_assert!(gap.abs() < TOL);
    }

    #[test]
    fn premium_dominates_the_mean_premium(pp in principle(), (y, _, p) in scenarios()) {
        let mean: f64 = y.iter().zip(&p).map(|(a, b)| a * b).sum();
        let flat = vec![mean; y.len()];
        prop_assert!(premium_discrete(&pp, &flat, &p) <= premium_discrete(&pp, &y, &p) + TOL);
    }

    #[test]
    fn quantile_and_survival_form_a_galois_pair(m in loss(), p in 0.0..1.0f64, t in 0.0..15.0f64) {
        let q = m.quantile(p);
        prop_assert!(m.survival(q) <= p + 1e-12);
        if m.survival(t) <= p - 1e-12 {
            prop_assert!(t >= q - 1e-9);
        }
        if t < q - 1e-9 {
            prop_assert!(m.survival(t) > p - 1e-12);
        }
    }

    #[test]
    fn contracts_are_one_lipschitz_and_non_decreasing(c in contract(), x in 0.0..20.0f64, h in 0.0..5.0f64) {
        prop_assert_eq!(c.evaluate(0.0), 0.0);
        let rise = c.evaluate(x + h) - c.evaluate(x);
        prop_assert!(rise >= -1e-12);
        prop_assert!(rise <= h + 1e-12);
        let retained = (x + h - c.evaluate(x + h)) - (x - c.evaluate(x));
        prop_assert!(retained >= -1e-12);
    }

    #[test]
    fn canonical_split_recomposes(theta in 0.0..1.0f64, alpha in 0.0..1.0f64, p in 0.0..=1.0f64) {
        let g = Distortion::Linear { slope: 1.0 + theta };
        let h = Distortion::Mixture {
            linear: 0.0,
            parts: vec![riskmetric::distortions::MixturePart { weight: alpha, distortion: Distortion::GiniDeviation }],
        };
        let pp = PremiumPrinciple::canonical_decompose(&g, &h).unwrap();
        prop_assert!((pp.theta - theta).abs() < 1e-12);
        prop_assert!((pp.tk(p) - g.value(p) - h.value(p)).abs() < 1e-12);
        prop_assert!(pp.k.value(p) >= -1e-12);
    }

    #[test]
    fn sweep_ranges_stay_inside_their_bounds(start in -5.0..5.0f64, len in 0.0..10.0f64, step in 0.01..2.0f64) {
        let r = SweepRange { name: "x".into(), start, stop: start + len, step };
        let v = r.values();
        prop_assert_eq!(v.len(), r.count());
        prop_assert!(!v.is_empty());
        prop_assert!(*v.last().unwrap() <= r.stop + 1e-9 * step.max(1.0));
        prop_assert!(*v.last().unwrap() + step > r.stop - 1e-9);
    }
}
