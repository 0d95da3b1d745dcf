//! Exponential losses under CARA utility: power, dual-power and Gini pricing.

use serde::{Deserialize, Serialize};

use super::roots::find_increasing_root;
use super::{finish_report, solve_general, Diagnostics, SolveReport, SolverConfig, SolverPath};
use crate::contracts::{DimlInterior, Indemnity};
use crate::distortions::{Distortion, PremiumPrinciple};
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::rdeu::{BuyerPreferences, Utility};
use crate::scalar::{lit, Scalar};

/// Survival level capping the search for `d*`.
const ROOT_TAIL: f64 = 1e-10;

/// One of the closed-form families with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Scalar")]
pub enum ExponentialFamily<T> {
    Power {
        gamma: T,
        lambda: T,
        c: T,
        theta: T,
        q: T,
        wealth: T,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a_buyer: Option<T>,
    },
    DualPower {
        gamma: T,
        lambda: T,
        c: T,
        theta: T,
        q: T,
        wealth: T,
    },
    Gini {
        gamma: T,
        lambda: T,
        alpha: T,
        theta: T,
        q: T,
        wealth: T,
    },
}

impl<T: Scalar> ExponentialFamily<T> {
    /// Buyer, premium principle and loss model described by the parameters.
    pub fn problem(&self) -> Result<(BuyerPreferences<T>, PremiumPrinciple<T>, LossModel<T>)> {
        let (gamma, lambda, q, wealth, tk, b) = match self {
            ExponentialFamily::Power {
                gamma,
                lambda,
                c,
                theta,
                q,
                wealth,
                a_buyer,
            } => {
                let b = match a_buyer {
                    Some(a) => Distortion::ConvexDualPower { a: *a },
                    None => Distortion::identity(),
                };
                (
                    *gamma,
                    *lambda,
                    *q,
                    *wealth,
                    Distortion::Power {
                        theta: *theta,
                        c: *c,
                    },
                    b,
                )
            }
            ExponentialFamily::DualPower {
                gamma,
                lambda,
                c,
                theta,
                q,
                wealth,
            } => (
                *gamma,
                *lambda,
                *q,
                *wealth,
                Distortion::DualPower {
                    theta: *theta,
                    c: *c,
                },
                Distortion::identity(),
            ),
            ExponentialFamily::Gini {
                gamma,
                lambda,
                alpha,
                theta,
                q,
                wealth,
            } => (
                *gamma,
                *lambda,
                *q,
                *wealth,
                Distortion::LinearPlusGini {
                    theta: *theta,
                    alpha: *alpha,
                },
                Distortion::identity(),
            ),
        };
        let prefs = BuyerPreferences::new(Utility::Cara { gamma }, b, wealth)?;
        let pp = PremiumPrinciple::from_seller(&tk)?;
        let m = LossModel::zero_inflated_exponential(q, lambda)?;
        Ok((prefs, pp, m))
    }

    pub fn solve(&self, cfg: &SolverConfig<T>) -> Result<SolveReport<T>> {
        match *self {
            ExponentialFamily::Power {
                gamma,
                lambda,
                c,
                theta,
                q,
                wealth,
                a_buyer,
            } => solve_power_exponential(gamma, lambda, c, theta, q, wealth, a_buyer, cfg),
            ExponentialFamily::DualPower {
                gamma,
                lambda,
                c,
                theta,
                q,
                wealth,
            } => solve_dualpower_exponential(gamma, lambda, c, theta, q, wealth, cfg),
            ExponentialFamily::Gini {
                gamma,
                lambda,
                alpha,
                theta,
                q,
                wealth,
            } => solve_gini_exponential(gamma, lambda, alpha, theta, q, wealth, cfg),
        }
    }

    pub fn root_function(&self) -> RootFunction<T> {
        match *self {
            ExponentialFamily::Power {
                gamma,
                lambda,
                c,
                theta,
                q,
                a_buyer,
                ..
            } => {
                let (q, lambda, c) = substitute(q, lambda, c, a_buyer);
                power_root_function(gamma, lambda, c, theta, q)
            }
            ExponentialFamily::DualPower {
                gamma,
                lambda,
                c,
                theta,
                q,
                ..
            } => dualpower_root_function(gamma, lambda, c, theta, q),
            ExponentialFamily::Gini {
                gamma,
                lambda,
                alpha,
                theta,
                q,
                ..
            } => gini_root_function(gamma, lambda, alpha, theta, q),
        }
    }
}

/// The function whose smallest non-negative zero is the optimal deductible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Scalar")]
pub enum RootFunction<T> {
    Power {
        gamma: T,
        lambda: T,
        c: T,
        theta: T,
        q: T,
    },
    DualPower {
        gamma: T,
        lambda: T,
        c: T,
        theta: T,
        q: T,
    },
    Gini {
        gamma: T,
        lambda: T,
        alpha: T,
        theta: T,
        q: T,
    },
}

pub fn power_root_function<T: Scalar>(
    gamma: T,
    lambda: T,
    c: T,
    theta: T,
    q: T,
) -> RootFunction<T> {
    RootFunction::Power {
        gamma,
        lambda,
        c,
        theta,
        q,
    }
}

pub fn dualpower_root_function<T: Scalar>(
    gamma: T,
    lambda: T,
    c: T,
    theta: T,
    q: T,
) -> RootFunction<T> {
    RootFunction::DualPower {
        gamma,
        lambda,
        c,
        theta,
        q,
    }
}

pub fn gini_root_function<T: Scalar>(
    gamma: T,
    lambda: T,
    alpha: T,
    theta: T,
    q: T,
) -> RootFunction<T> {
    RootFunction::Gini {
        gamma,
        lambda,
        alpha,
        theta,
        q,
    }
}

fn same_rate<T: Scalar>(gamma: T, lambda: T) -> bool {
    (gamma - lambda).abs() <= lit::<T>(1e-12) * gamma.max(lambda)
}

/// `(e^{(gamma-lambda) d} - 1) / (gamma - lambda)`, equal to `d` when the rates coincide.
fn growth<T: Scalar>(gamma: T, lambda: T, d: T) -> T {
    if same_rate(gamma, lambda) {
        d
    } else {
        ((gamma - lambda) * d).exp_m1() / (gamma - lambda)
    }
}

impl<T: Scalar> RootFunction<T> {
    pub fn value(&self, d: T) -> T {
        self.eval(d).0
    }

    pub fn derivative(&self, d: T) -> T {
        self.eval(d).1
    }

    fn eval(&self, d: T) -> (T, T) {
        let one = T::one();
        let two = lit::<T>(2.0);
        match *self {
            RootFunction::Power {
                gamma,
                lambda,
                c,
                theta,
                q,
            } => {
                let lt = one + theta;
                let inner = q.powf(one - c) * (lambda * c * d).exp();
                if same_rate(gamma, lambda) {
                    let g = inner - lt * q * lambda * c * d - lt * (c + (one - c) * q);
                    let dg = lambda * c * (inner - lt * q);
                    (g, dg)
                } else {
                    let k = gamma - lambda;
                    let slope = gamma - lambda * (one - c);
                    let e = (k * d).exp();
                    let g = e * (inner - lt * q * slope / k) - c * lt * (one - q * gamma / k);
                    let dg = slope * e * (inner - lt * q);
                    (g, dg)
                }
            }
            RootFunction::DualPower {
                gamma,
                lambda,
                c,
                theta,
                q,
            } => {
                let lt = one + theta;
                let eg = (gamma * d).exp();
                let el = (-lambda * d).exp();
                let y = one - q * el;
                let dy = q * lambda * el;
                let big_e = growth(gamma, lambda, d);
                let qq = one - q + q * lambda * big_e;
                let dqq = q * lambda * ((gamma - lambda) * d).exp();
                let g = eg * (lt * y.powf(c) - theta) - c * lt * y.powf(c - one) * qq;
                let dg = gamma * eg * (lt * y.powf(c) - theta) + eg * lt * c * y.powf(c - one) * dy
                    - c * lt * ((c - one) * y.powf(c - two) * dy * qq + y.powf(c - one) * dqq);
                (g, dg)
            }
            RootFunction::Gini {
                gamma,
                lambda,
                alpha,
                theta,
                q,
            } => {
                let eg = (gamma * d).exp();
                let el = (-lambda * d).exp();
                let ell = one + theta + alpha * (one - two * q * el);
                let big_e = growth(gamma, lambda, d);
                let g = eg * (one - alpha * q * q * el * el) - (one + q * gamma * big_e) * ell;
                let dg = gamma * eg
                    - alpha * q * q * (gamma - two * lambda) * ((gamma - two * lambda) * d).exp()
                    - q * gamma * ((gamma - lambda) * d).exp() * ell
                    - (one + q * gamma * big_e) * two * alpha * q * lambda * el;
                (g, dg)
            }
        }
    }
}

fn substitute<T: Scalar>(q: T, lambda: T, c: T, a_buyer: Option<T>) -> (T, T, T) {
    match a_buyer {
        Some(a) => (q.powf(a), lambda * a, c / a),
        None => (q, lambda, c),
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg.to_string()))
    }
}

fn common_checks<T: Scalar>(gamma: T, lambda: T, theta: T, q: T, wealth: T) -> Result<()> {
    let zero = T::zero();
    check(gamma > zero && gamma.is_finite(), "gamma must be positive")?;
    check(
        lambda > zero && lambda.is_finite(),
        "lambda must be positive",
    )?;
    check(
        theta >= zero && theta.is_finite(),
        "theta must be non-negative",
    )?;
    check(q > zero && q <= T::one(), "q must lie in (0, 1]")?;
    check(wealth.is_finite(), "wealth must be finite")
}

fn root_cap<T: Scalar>(q: T, lambda: T) -> T {
    ((q / lit::<T>(ROOT_TAIL)).ln() / lambda).max(T::one())
}

/// Zero insurance or deductible-coinsurance for power pricing; with
/// `a_buyer`, the buyer weights probabilities by `1 - (1-p)^a`.
#[allow(clippy::too_many_arguments)]
pub fn solve_power_exponential<T: Scalar>(
    gamma: T,
    lambda: T,
    c: T,
    theta: T,
    q: T,
    wealth: T,
    a_buyer: Option<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    common_checks(gamma, lambda, theta, q, wealth)?;
    check(c > T::zero() && c < T::one(), "c must lie in (0, 1)")?;
    if let Some(a) = a_buyer {
        check(
            a > c && a < T::one(),
            "buyer exponent must satisfy c < a < 1",
        )?;
    }
    let family = ExponentialFamily::Power {
        gamma,
        lambda,
        c,
        theta,
        q,
        wealth,
        a_buyer,
    };
    let (prefs, pp, m) = family.problem()?;
    let (qs, ls, cs) = substitute(q, lambda, c, a_buyer);
    let mut diag = Diagnostics::default();
    let mut evaluations = 0;
    let contract = if ls * (T::one() - cs) >= gamma {
        diag.notes
            .push("loading of the tail exceeds risk aversion: no insurance".into());
        Indemnity::Zero
    } else {
        let alpha = T::one() - ls * (T::one() - cs) / gamma;
        let g = family.root_function();
        let r = find_increasing_root(|d| g.value(d), |d| g.derivative(d), root_cap(qs, ls))?;
        evaluations = r.evaluations;
        diag.alpha = Some(alpha);
        diag.root_value = Some(r.value);
        if r.root.is_infinite() {
            diag.notes
                .push("root function negative on the search range".into());
            Indemnity::Zero
        } else {
            diag.d_star = Some(r.root);
            Indemnity::DeductibleCoinsurance { d: r.root, alpha }
        }
    };
    finish_report(
        contract,
        &prefs,
        &pp,
        &m,
        cfg,
        SolverPath::PowerExponential,
        evaluations,
        true,
        diag,
    )
}

/// Deductible with a concave-log interior for dual-power pricing.
pub fn solve_dualpower_exponential<T: Scalar>(
    gamma: T,
    lambda: T,
    c: T,
    theta: T,
    q: T,
    wealth: T,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    common_checks(gamma, lambda, theta, q, wealth)?;
    check(c > T::one() && c.is_finite(), "c must exceed 1")?;
    let family = ExponentialFamily::DualPower {
        gamma,
        lambda,
        c,
        theta,
        q,
        wealth,
    };
    let (prefs, pp, m) = family.problem()?;
    if !(gamma * (T::one() - q) > q * lambda * (c - T::one())) {
        return fallback(&prefs, &pp, &m, cfg);
    }
    let g = family.root_function();
    let r = find_increasing_root(|d| g.value(d), |d| g.derivative(d), root_cap(q, lambda))?;
    if r.root.is_infinite() {
        return Err(Error::Precondition(
            "no root of the deductible equation on the search range".into(),
        ));
    }
    let diag = Diagnostics {
        d_star: Some(r.root),
        root_value: Some(r.value),
        xi: Some(dual_power_xi(gamma, lambda, c, theta, q, r.root)),
        ..Diagnostics::default()
    };
    let contract = Indemnity::Diml {
        d: r.root,
        m: None,
        interior: DimlInterior::DualPowerExponential {
            gamma,
            lambda,
            c,
            q,
        },
    };
    finish_report(
        contract,
        &prefs,
        &pp,
        &m,
        cfg,
        SolverPath::DualPowerExponential,
        r.evaluations,
        true,
        diag,
    )
}

/// Deductible with a log interior for linear-plus-Gini pricing.
pub fn solve_gini_exponential<T: Scalar>(
    gamma: T,
    lambda: T,
    alpha: T,
    theta: T,
    q: T,
    wealth: T,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    common_checks(gamma, lambda, theta, q, wealth)?;
    check(
        alpha >= T::zero() && alpha.is_finite(),
        "alpha must be non-negative",
    )?;
    let family = ExponentialFamily::Gini {
        gamma,
        lambda,
        alpha,
        theta,
        q,
        wealth,
    };
    let (prefs, pp, m) = family.problem()?;
    let two = lit::<T>(2.0);
    let lhs = gamma * (T::one() + theta + alpha * (T::one() - two * q));
    if !(lhs > two * alpha * q * lambda) {
        return fallback(&prefs, &pp, &m, cfg);
    }
    let g = family.root_function();
    let r = find_increasing_root(|d| g.value(d), |d| g.derivative(d), root_cap(q, lambda))?;
    if r.root.is_infinite() {
        return Err(Error::Precondition(
            "no root of the deductible equation on the search range".into(),
        ));
    }
    let ell_d = T::one() + theta + alpha * (T::one() - two * q * (-lambda * r.root).exp());
    let diag = Diagnostics {
        d_star: Some(r.root),
        root_value: Some(r.value),
        xi: Some(ell_d),
        ..Diagnostics::default()
    };
    let contract = Indemnity::Diml {
        d: r.root,
        m: None,
        interior: DimlInterior::GiniExponential {
            gamma,
            lambda,
            theta,
            alpha,
            q,
        },
    };
    finish_report(
        contract,
        &prefs,
        &pp,
        &m,
        cfg,
        SolverPath::GiniExponential,
        r.evaluations,
        true,
        diag,
    )
}

/// `l(d) = tk'(S(d))` for dual-power pricing with identity buyer weighting.
fn dual_power_xi<T: Scalar>(_gamma: T, lambda: T, c: T, theta: T, q: T, d: T) -> T {
    let one = T::one();
    (one + theta) * c * (one - q * (-lambda * d).exp()).powf(c - one)
}

fn fallback<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    let mut report = solve_general(prefs, pp, m, cfg)?;
    report.solver_path = SolverPath::GeneralFallback;
    report
        .diagnostics
        .notes
        .push("closed-form route condition fails; solved on the grid".into());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(g: &RootFunction<f64>, d: f64) -> f64 {
        let h = 1e-6;
        (g.value(d + h) - g.value(d - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_differences() {
        let gs: [RootFunction<f64>; 6] = [
            power_root_function(2.0, 1.0, 0.5, 0.1, 0.9),
            power_root_function(1.5, 1.5, 0.4, 0.1, 0.9),
            dualpower_root_function(2.0, 1.0, 1.5, 0.1, 0.5),
            dualpower_root_function(2.0, 2.0, 1.3, 0.05, 0.6),
            gini_root_function(2.0, 1.0, 0.4, 0.05, 0.8),
            gini_root_function(1.0, 1.0, 0.2, 0.1, 0.9),
        ];
        for g in gs {
            for d in [0.1, 0.7, 2.0] {
                let a = g.derivative(d);
                assert!(
                    (a - fd(&g, d)).abs() < 1e-6 * a.abs().max(1.0),
                    "{g:?} at {d}"
                );
            }
        }
    }

    #[test]
    fn values_at_zero() {
        let (theta, q, c) = (0.1, 0.5, 1.5);
        let g = dualpower_root_function(2.0, 1.0, c, theta, q);
        let expect = -theta - (1.0 + theta) * (c - 1.0) * (1.0f64 - q).powf(c);
        assert!((g.value(0.0) - expect).abs() < 1e-14);
        let g: RootFunction<f64> = gini_root_function(2.0, 1.0, 0.4, 0.05, 0.8);
        assert!((g.value(0.0) + 0.066).abs() < 1e-14);
        let g: RootFunction<f64> = power_root_function(2.0, 1.0, 0.5, 0.0, 1.0);
        assert!(g.value(0.0).abs() < 1e-14);
    }

    #[test]
    fn equal_rate_branch_is_the_limit() {
        let near: RootFunction<f64> = power_root_function(1.5 + 1e-6, 1.5, 0.4, 0.1, 0.9);
        let at: RootFunction<f64> = power_root_function(1.5, 1.5, 0.4, 0.1, 0.9);
        let near_d: RootFunction<f64> = dualpower_root_function(2.0 + 1e-6, 2.0, 1.3, 0.05, 0.6);
        let at_d: RootFunction<f64> = dualpower_root_function(2.0, 2.0, 1.3, 0.05, 0.6);
        let near_g: RootFunction<f64> = gini_root_function(1.0 + 1e-6, 1.0, 0.2, 0.1, 0.9);
        let at_g: RootFunction<f64> = gini_root_function(1.0, 1.0, 0.2, 0.1, 0.9);
        for d in [0.3, 1.1] {
            assert!((near.value(d) - at.value(d)).abs() < 1e-4);
            assert!((near_d.value(d) - at_d.value(d)).abs() < 1e-4);
            assert!((near_g.value(d) - at_g.value(d)).abs() < 1e-4);
        }
    }
}
