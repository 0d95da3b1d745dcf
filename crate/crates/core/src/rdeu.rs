//! Rank-dependent expected utility of insured terminal wealth.

use serde::{Deserialize, Serialize};

use crate::contracts::Indemnity;
use crate::distortions::{BuyerDual, Distortion};
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::quadrature::{breakpoints, integrate_each, QuadratureConfig};
use crate::scalar::{lit, to_f64, Scalar};

/// Concave, strictly increasing utility of wealth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Utility<T> {
    Linear,
    /// `u(x) = (1 - e^{-gamma x}) / gamma`
    Cara {
        gamma: T,
    },
    /// Absolute risk aversion `1 / (a x + m)`; `a = 0` is exponential with scale `m`.
    Hara {
        a: T,
        m: T,
    },
    /// Relative risk aversion `eta` on `x > 0`.
    Crra {
        eta: T,
    },
}

impl<T: Scalar> Utility<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let ok = match self {
            Utility::Linear => true,
            Utility::Cara { gamma } => *gamma > zero && gamma.is_finite(),
            Utility::Hara { a, m } => {
                *a >= zero && a.is_finite() && m.is_finite() && (*a > zero || *m > zero)
            }
            Utility::Crra { eta } => *eta > zero && eta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "invalid utility parameters: {self:?}"
            )))
        }
    }

    /// Whether `u'` is of hyperbolic-absolute-risk-aversion form.
    pub fn is_hara_family(&self) -> bool {
        !matches!(self, Utility::Linear)
    }

    /// Checks that `x` lies in the domain of `u`.
    pub fn check_domain(&self, x: T) -> Result<()> {
        let inside = match self {
            Utility::Linear | Utility::Cara { .. } => x.is_finite(),
            Utility::Hara { a, m } => {
                if *a > T::zero() {
                    *a * x + *m > T::zero()
                } else {
                    x.is_finite()
                }
            }
            Utility::Crra { .. } => x > T::zero(),
        };
        if inside {
            Ok(())
        } else {
            Err(Error::UtilityDomain { wealth: to_f64(x) })
        }
    }

    /// `u(x)`, NaN outside the domain.
    pub fn value(&self, x: T) -> T {
        let one = T::one();
        match self {
            Utility::Linear => x,
            Utility::Cara { gamma } => -(-*gamma * x).exp_m1() / *gamma,
            Utility::Hara { a, m } => {
                if *a == T::zero() {
                    -*m * (-x / *m).exp()
                } else if *a == one {
                    (x + *m).ln()
                } else {
                    let base = *a * x + *m;
                    base.powf((*a - one) / *a) / (*a - one)
                }
            }
            Utility::Crra { eta } => {
                if *eta == one {
                    x.ln()
                } else {
                    x.powf(one - *eta) / (one - *eta)
                }
            }
        }
    }

    pub fn u(&self, x: T) -> Result<T> {
        self.check_domain(x)?;
        Ok(self.value(x))
    }

    pub fn u_prime(&self, x: T) -> T {
        match self {
            Utility::Linear => T::one(),
            Utility::Cara { gamma } => (-*gamma * x).exp(),
            Utility::Hara { a, m } => {
                if *a == T::zero() {
                    (-x / *m).exp()
                } else {
                    (*a * x + *m).powf(-T::one() / *a)
                }
            }
            Utility::Crra { eta } => x.powf(-*eta),
        }
    }

    pub fn u_second(&self, x: T) -> T {
        let one = T::one();
        match self {
            Utility::Linear => T::zero(),
            Utility::Cara { gamma } => -*gamma * (-*gamma * x).exp(),
            Utility::Hara { a, m } => {
                if *a == T::zero() {
                    -(-x / *m).exp() / *m
                } else {
                    -(*a * x + *m).powf(-one / *a - one)
                }
            }
            Utility::Crra { eta } => -*eta * x.powf(-*eta - one),
        }
    }

    pub fn u_third(&self, x: T) -> T {
        let one = T::one();
        let two = lit::<T>(2.0);
        match self {
            Utility::Linear => T::zero(),
            Utility::Cara { gamma } => *gamma * *gamma * (-*gamma * x).exp(),
            Utility::Hara { a, m } => {
                if *a == T::zero() {
                    (-x / *m).exp() / (*m * *m)
                } else {
                    (one + *a) * (*a * x + *m).powf(-one / *a - two)
                }
            }
            Utility::Crra { eta } => *eta * (*eta + one) * x.powf(-*eta - two),
        }
    }

    /// `(u')^{-1}(y)` for `y > 0`.
    pub fn u_prime_inv(&self, y: T) -> Result<T> {
        if !(y > T::zero()) {
            return Err(Error::Domain {
                value: to_f64(y),
                domain: "(0, inf)",
            });
        }
        Ok(match self {
            Utility::Linear => {
                return Err(Error::Precondition(
                    "marginal utility is constant; its inverse is undefined".into(),
                ))
            }
            Utility::Cara { gamma } => -y.ln() / *gamma,
            Utility::Hara { a, m } => {
                if *a == T::zero() {
                    -*m * y.ln()
                } else {
                    (y.powf(-*a) - *m) / *a
                }
            }
            Utility::Crra { eta } => y.powf(-T::one() / *eta),
        })
    }

    /// `u^{-1}(v)`.
    pub fn u_inv(&self, v: T) -> Result<T> {
        let one = T::one();
        let out = match self {
            Utility::Linear => v,
            Utility::Cara { gamma } => -(-*gamma * v).ln_1p() / *gamma,
            Utility::Hara { a, m } => {
                if *a == T::zero() {
                    -*m * (-v / *m).ln()
                } else if *a == one {
                    v.exp() - *m
                } else {
                    (((*a - one) * v).powf(*a / (*a - one)) - *m) / *a
                }
            }
            Utility::Crra { eta } => {
                if *eta == one {
                    v.exp()
                } else {
                    ((one - *eta) * v).powf(one / (one - *eta))
                }
            }
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Domain {
                value: to_f64(v),
                domain: "range of the utility",
            })
        }
    }
}

/// Buyer's utility, probability weighting and initial wealth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BuyerPreferences<T> {
    pub utility: Utility<T>,
    pub b: Distortion<T>,
    pub wealth: T,
    /// Accept a strictly increasing but non-convex `b`.
    #[serde(default)]
    pub allow_nonconvex_b: bool,
}

impl<T: Scalar> BuyerPreferences<T> {
    pub fn new(utility: Utility<T>, b: Distortion<T>, wealth: T) -> Result<Self> {
        let prefs = BuyerPreferences {
            utility,
            b,
            wealth,
            allow_nonconvex_b: false,
        };
        prefs.validate()?;
        Ok(prefs)
    }

    pub fn validate(&self) -> Result<()> {
        self.utility.validate()?;
        self.buyer()?;
        if !self.wealth.is_finite() {
            return Err(Error::Parameter("wealth must be finite".into()));
        }
        Ok(())
    }

    pub fn buyer(&self) -> Result<BuyerDual<T>> {
        BuyerDual::with_override(self.b.clone(), self.allow_nonconvex_b)
    }

    /// `tb(p) = 1 - b(1-p)`
    pub fn tb(&self, p: T) -> T {
        self.b.dual_value(p)
    }

    pub fn tb_derivative(&self, p: T) -> T {
        self.b.dual_derivative(p)
    }

    pub fn tb_second_derivative(&self, p: T) -> T {
        -self.b.second_derivative(T::one() - p)
    }
}

/// Terminal wealth `w - R(x) - pi` under a contract.
#[derive(Clone, Debug)]
pub struct WealthOutcome<'a, T> {
    pub wealth: T,
    pub contract: &'a Indemnity<T>,
    pub premium: T,
}

impl<T: Scalar> WealthOutcome<'_, T> {
    pub fn at(&self, x: T) -> T {
        self.wealth - self.contract.retention(x) - self.premium
    }
}

/// Right end of the integration range for the buyer's distorted measure.
pub(crate) fn buyer_upper_limit<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    m: &LossModel<T>,
    cfg: &QuadratureConfig<T>,
) -> T {
    let bound = m.support_bound();
    if bound.is_finite() {
        return bound;
    }
    // utility terms may grow along the tail, so truncate deeper than for premiums
    let level = cfg.tail_mass * cfg.tail_mass;
    let tb = Distortion::Dual {
        of: Box::new(prefs.b.clone()),
    };
    let p = tb.tail_probability(level).min(level);
    m.quantile(p)
}

/// Integrals of `g(x) db(F(x))` over consecutive windows of `points`.
///
/// Window `i` covers `(points[i], points[i+1]]`; atoms at or below
/// `points[0]` are returned separately, atoms beyond the end go to the last window.
pub(crate) fn distorted_windows<T: Scalar, G: Fn(T) -> T>(
    prefs: &BuyerPreferences<T>,
    m: &LossModel<T>,
    points: &[T],
    g: G,
    cfg: &QuadratureConfig<T>,
) -> Result<(T, Vec<T>)> {
    let n = points.len() - 1;
    let mut out = if m.has_density() {
        integrate_each(
            |x| {
                let s = m.survival(x);
                let f = m.density(x);
                if f == T::zero() {
                    T::zero()
                } else {
                    g(x) * prefs.tb_derivative(s) * f
                }
            },
            points,
            cfg,
        )?
    } else {
        vec![T::zero(); n]
    };
    let mut head = T::zero();
    for (a, _) in m.atoms() {
        let w = prefs.tb(m.survival_left(a)) - prefs.tb(m.survival(a));
        if a <= points[0] {
            head = head + g(a) * w;
            continue;
        }
        // first window whose right end reaches a
        let idx = points[1..].iter().position(|&p| a <= p).unwrap_or(n - 1);
        out[idx] = out[idx] + g(a) * w;
    }
    Ok((head, out))
}

fn wealth_floor_check<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    contract: &Indemnity<T>,
    pi: T,
    x_max: T,
) -> Result<()> {
    let outcome = WealthOutcome {
        wealth: prefs.wealth,
        contract,
        premium: pi,
    };
    prefs.utility.check_domain(outcome.at(T::zero()))?;
    prefs.utility.check_domain(outcome.at(x_max))
}

pub(crate) fn integration_points<T: Scalar>(
    m: &LossModel<T>,
    contract: &Indemnity<T>,
    extra: &[T],
    kinks: &[T],
    x_max: T,
) -> Vec<T> {
    let mut pts = m.breakpoints();
    pts.extend(contract.breakpoints());
    pts.extend_from_slice(extra);
    if m.has_density() {
        pts.extend(kinks.iter().map(|&p| m.quantile(p)));
    }
    breakpoints(pts, T::zero(), x_max)
}

/// `int u(w - R(x) - pi) db(F_X(x))`.
pub fn rdeu_value<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    contract: &Indemnity<T>,
    pi: T,
    m: &LossModel<T>,
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    contract.validate()?;
    let x_max = buyer_upper_limit(prefs, m, cfg);
    wealth_floor_check(prefs, contract, pi, x_max)?;
    let outcome = WealthOutcome {
        wealth: prefs.wealth,
        contract,
        premium: pi,
    };
    let pts = integration_points(m, contract, &[], &prefs.b.kinks(), x_max);
    let (head, parts) =
        distorted_windows(prefs, m, &pts, |x| prefs.utility.value(outcome.at(x)), cfg)?;
    Ok(head + parts.into_iter().sum::<T>())
}

/// `int u'(w - R(x) - pi) 1{x > t} db(F_X(x))`; any `t < 0` gives the full integral.
pub fn marginal_weight<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    contract: &Indemnity<T>,
    pi: T,
    m: &LossModel<T>,
    t: T,
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    contract.validate()?;
    let x_max = buyer_upper_limit(prefs, m, cfg);
    wealth_floor_check(prefs, contract, pi, x_max)?;
    if t >= x_max {
        return Ok(T::zero());
    }
    let outcome = WealthOutcome {
        wealth: prefs.wealth,
        contract,
        premium: pi,
    };
    let extra = if t >= T::zero() { vec![t] } else { Vec::new() };
    let pts = integration_points(m, contract, &extra, &prefs.b.kinks(), x_max);
    let (head, parts) = distorted_windows(
        prefs,
        m,
        &pts,
        |x| prefs.utility.u_prime(outcome.at(x)),
        cfg,
    )?;
    if t < T::zero() {
        return Ok(head + parts.into_iter().sum::<T>());
    }
    Ok(pts
        .windows(2)
        .zip(parts)
        .filter(|(w, _)| w[0] >= t)
        .map(|(_, v)| v)
        .sum())
}

/// Full marginal-utility integral, including the point mass at zero.
pub fn marginal_denominator<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    contract: &Indemnity<T>,
    pi: T,
    m: &LossModel<T>,
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    marginal_weight(prefs, contract, pi, m, -T::one(), cfg)
}

/// `u^{-1}(value)`.
pub fn certainty_equivalent<T: Scalar>(prefs: &BuyerPreferences<T>, value: T) -> Result<T> {
    prefs.utility.u_inv(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadratureConfig<f64> {
        QuadratureConfig::default()
    }

    #[test]
    fn cara_zero_indemnity_closed_form() {
        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma: 1.0 }, Distortion::identity(), 5.0)
                .unwrap();
        let m = LossModel::exponential(2.0).unwrap();
        let v = rdeu_value(&prefs, &Indemnity::Zero, 0.0, &m, &cfg()).unwrap();
        // 1 - e^{-5} E e^X with E e^X = 2
        assert!((v - (1.0 - 2.0 * (-5.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn full_insurance_is_certain() {
        let prefs = BuyerPreferences::new(
            Utility::Cara { gamma: 0.7 },
            Distortion::ConvexDualPower { a: 0.5 },
            3.0,
        )
        .unwrap();
        let m = LossModel::zero_inflated_exponential(0.6, 1.3).unwrap();
        let v = rdeu_value(&prefs, &Indemnity::Full, 0.9, &m, &cfg()).unwrap();
        assert!((v - prefs.utility.value(2.1)).abs() < 1e-10);
    }

    #[test]
    fn linear_zero_is_mean() {
        let prefs = BuyerPreferences::new(Utility::Linear, Distortion::identity(), 4.0).unwrap();
        let m = LossModel::zero_inflated_exponential(0.4, 0.5).unwrap();
        let v = rdeu_value(&prefs, &Indemnity::Zero, 0.0, &m, &cfg()).unwrap();
        assert!((v - 3.2).abs() < 1e-9);
        let d = LossModel::discrete(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let v = rdeu_value(&prefs, &Indemnity::Zero, 0.0, &d, &cfg()).unwrap();
        assert!((v - 3.5).abs() < 1e-15);
    }

    #[test]
    fn marginal_weight_examples() {
        let m = LossModel::exponential(1.0).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Linear, Distortion::ConvexDualPower { a: 0.5 }, 1.0)
                .unwrap();
        let t = 0.7;
        let mw = marginal_weight(
            &prefs,
            &Indemnity::Deductible { d: 0.3 },
            0.2,
            &m,
            t,
            &cfg(),
        )
        .unwrap();
        let expected = 1.0 - prefs.b.value(m.cdf(t));
        assert!((mw - expected).abs() < 1e-9);

        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma: 1.0 }, Distortion::identity(), 4.0)
                .unwrap();
        let pi = 1.3;
        let mw = marginal_weight(&prefs, &Indemnity::Full, pi, &m, 1.0, &cfg()).unwrap();
        assert!((mw - (-(4.0 - pi)).exp() * (-1.0f64).exp()).abs() < 1e-11);
        let far = marginal_weight(&prefs, &Indemnity::Full, pi, &m, 100.0, &cfg()).unwrap();
        assert_eq!(far, 0.0);
    }

    #[test]
    fn hara_domain_violation_names_wealth() {
        let prefs = BuyerPreferences::new(
            Utility::Hara { a: 1.0, m: 0.0 },
            Distortion::identity(),
            1.0,
        )
        .unwrap();
        let m = LossModel::exponential(1.0).unwrap();
        match rdeu_value(&prefs, &Indemnity::Zero, 0.0, &m, &cfg()) {
            Err(Error::UtilityDomain { wealth }) => assert!(wealth < 0.0),
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn utility_inverses() {
        let us: [Utility<f64>; 6] = [
            Utility::Cara { gamma: 1.5 },
            Utility::Hara { a: 0.5, m: 2.0 },
            Utility::Hara { a: 1.0, m: 1.0 },
            Utility::Hara { a: 0.0, m: 2.0 },
            Utility::Crra { eta: 2.0 },
            Utility::Crra { eta: 1.0 },
        ];
        for u in us {
            for x in [0.5, 1.0, 3.0] {
                let y = u.u_prime(x);
                assert!((u.u_prime_inv(y).unwrap() - x).abs() < 1e-10, "{u:?}");
                assert!((u.u_inv(u.value(x)).unwrap() - x).abs() < 1e-10, "{u:?}");
                let h = 1e-5;
                let d1 = (u.value(x + h) - u.value(x - h)) / (2.0 * h);
                let d2 = (u.u_prime(x + h) - u.u_prime(x - h)) / (2.0 * h);
                let d3 = (u.u_second(x + h) - u.u_second(x - h)) / (2.0 * h);
                assert!((d1 - u.u_prime(x)).abs() < 1e-7, "{u:?}");
                assert!((d2 - u.u_second(x)).abs() < 1e-7, "{u:?}");
                assert!((d3 - u.u_third(x)).abs() < 1e-6, "{u:?}");
            }
        }
    }
}
