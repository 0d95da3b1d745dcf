//! Optimal indemnities: the marginal function `L`, optimality verification,
//! a general grid solver, constructive solvers for the corollary regimes and
//! the closed-form exponential-loss families.

mod closed_form;
mod corollaries;
mod general;
mod roots;

use serde::{Deserialize, Serialize};

use crate::contracts::{classify, ContractClass, Indemnity, PiecewiseLinear};
use crate::distortions::{Distortion, PremiumPrinciple};
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::quadrature::QuadratureConfig;
use crate::rdeu::{
    buyer_upper_limit, distorted_windows, integration_points, rdeu_value, BuyerPreferences, Utility,
};
use crate::riskmetrics::premium;
use crate::scalar::{lit, Scalar};

pub use closed_form::{
    dualpower_root_function, gini_root_function, power_root_function, solve_dualpower_exponential,
    solve_gini_exponential, solve_power_exponential, ExponentialFamily, RootFunction,
};
pub use corollaries::{
    deductible_gap, solve_deductible, solve_diml, solve_full_check, solve_max_limit,
};
pub use general::solve_general;
pub use roots::{find_increasing_root, RootResult};

/// Classifier tolerance on slopes.
pub const CLASSIFY_TOL: f64 = 1e-3;
/// Survival level at which the default solver grid ends.
pub const GRID_TAIL: f64 = 1e-6;
/// Geometric refinement of the default grid toward zero.
const GRID_KAPPA: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct SolverConfig<T> {
    pub grid_n: usize,
    /// Damping weight of the fixed-point step.
    pub damping: T,
    /// Convergence threshold on the sup-norm slope change.
    pub tol: T,
    pub max_iter: usize,
    /// Band around zero treated as a tie in `L`.
    pub l_zero_band: T,
    pub quadrature: QuadratureConfig<T>,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            grid_n: 400,
            damping: lit(0.3),
            tol: lit(1e-6),
            max_iter: 500,
            l_zero_band: lit(1e-7),
            quadrature: QuadratureConfig::default(),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if self.grid_n < 2 || self.max_iter == 0 {
            return Err(Error::Parameter(
                "grid_n must be >= 2 and max_iter positive".into(),
            ));
        }
        if !(self.damping > zero && self.damping <= T::one()) {
            return Err(Error::Parameter("damping must lie in (0, 1]".into()));
        }
        if !(self.tol > zero && self.l_zero_band > zero) {
            return Err(Error::Parameter(
                "tol and l_zero_band must be positive".into(),
            ));
        }
        self.quadrature.validate()
    }
}

/// `L(t)` sampled on a grid, with its two components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MarginalFunction<T> {
    pub t: Vec<T>,
    pub l: Vec<T>,
    /// `int_{x>t} u' db(F) / int u' db(F)`
    pub tail_ratio: Vec<T>,
    pub tk_s: Vec<T>,
    pub tb_s: Vec<T>,
    pub premium: T,
    pub denominator: T,
}

/// Which construction produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    General,
    FullCheck,
    Deductible,
    MaxLimit,
    Diml,
    PowerExponential,
    DualPowerExponential,
    GiniExponential,
    /// A closed-form family whose route condition failed, solved on the grid.
    GeneralFallback,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Diagnostics<T> {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_star: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m_star: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<T>,
    /// Normalising constant of the interior first-order condition.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upsilon: Option<T>,
    /// Normalising constant of the exponential-family interior.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xi: Option<T>,
    /// `G(d*)` for closed-form roots.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub root_value: Option<T>,
    /// Sup-norm slope change per fixed-point iteration.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<T>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolveReport<T> {
    pub contract: Indemnity<T>,
    pub premium: T,
    pub rdeu_value: T,
    pub residual: T,
    pub regime: ContractClass,
    pub unique: bool,
    pub uniqueness_reason: String,
    pub iterations: usize,
    pub converged: bool,
    pub solver_path: SolverPath,
    pub diagnostics: Diagnostics<T>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Uniqueness {
    pub unique: bool,
    pub applicable: bool,
    pub reason: String,
}

/// The optimum is unique iff `theta != 0` or `ess inf X = 0` (strictly concave `u`).
pub fn uniqueness_check<T: Scalar>(
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    utility: &Utility<T>,
) -> Uniqueness {
    if matches!(utility, Utility::Linear) {
        return Uniqueness {
            unique: false,
            applicable: false,
            reason: "not applicable: utility is not strictly concave".into(),
        };
    }
    if pp.theta != T::zero() {
        return Uniqueness {
            unique: true,
            applicable: true,
            reason: "loading theta is non-zero".into(),
        };
    }
    if m.ess_inf() == T::zero() {
        return Uniqueness {
            unique: true,
            applicable: true,
            reason: "essential infimum of the loss is zero".into(),
        };
    }
    Uniqueness {
        unique: false,
        applicable: true,
        reason: "theta = 0 and the loss is bounded away from zero".into(),
    }
}

/// `l(x) = tk'(S(x)) / tb'(S(x))` and its derivative in `x`.
pub fn likelihood_ratio<T: Scalar>(
    pp: &PremiumPrinciple<T>,
    b: &Distortion<T>,
    m: &LossModel<T>,
    x: T,
) -> (T, T) {
    let p = m.survival(x);
    let f = m.density(x);
    let tk1 = pp.tk_derivative(p);
    let tk2 = pp.tk_second_derivative(p);
    let tb1 = b.dual_derivative(p);
    let tb2 = -b.second_derivative(T::one() - p);
    let ell = tk1 / tb1;
    let dell_dp = (tk2 * tb1 - tk1 * tb2) / (tb1 * tb1);
    (ell, -dell_dp * f)
}

/// End of the default solver grid: `quantile(1e-6)` or the support bound.
pub fn grid_end<T: Scalar>(m: &LossModel<T>) -> T {
    let bound = m.support_bound();
    let x = if bound.is_finite() {
        bound
    } else {
        m.quantile(lit(GRID_TAIL))
    };
    if x > T::zero() {
        x
    } else {
        T::one()
    }
}

/// `n` cells on `[0, grid_end]`, refined geometrically toward zero.
pub fn default_grid<T: Scalar>(m: &LossModel<T>, n: usize) -> Vec<T> {
    let x_end = grid_end(m);
    let kappa = lit::<T>(GRID_KAPPA);
    let denom = kappa.exp_m1();
    let nn = T::from_usize(n).unwrap();
    (0..=n)
        .map(|i| {
            if i == n {
                x_end
            } else {
                x_end * (kappa * T::from_usize(i).unwrap() / nn).exp_m1() / denom
            }
        })
        .collect()
}

/// Points where optimality is checked: the cell midpoints of a grid contract,
/// or of the default grid for symbolic contracts.
pub fn verification_grid<T: Scalar>(
    contract: &Indemnity<T>,
    m: &LossModel<T>,
    grid_n: usize,
) -> Vec<T> {
    match contract {
        Indemnity::PiecewiseLinear(pl) => pl.midpoints(),
        _ => default_grid(m, grid_n)
            .windows(2)
            .map(|w| (w[0] + w[1]) * lit(0.5))
            .collect(),
    }
}

/// `L(t) = int_{x>t} u' db(F) / int u' db(F) - tk(S_X(t))` on `grid`.
pub fn compute_l<T: Scalar>(
    contract: &Indemnity<T>,
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    grid: &[T],
    cfg: &QuadratureConfig<T>,
) -> Result<MarginalFunction<T>> {
    let pi = premium(pp, contract, m, cfg)?.premium;
    compute_l_with_premium(contract, prefs, pp, m, grid, pi, cfg)
}

pub(crate) fn compute_l_with_premium<T: Scalar>(
    contract: &Indemnity<T>,
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    grid: &[T],
    pi: T,
    cfg: &QuadratureConfig<T>,
) -> Result<MarginalFunction<T>> {
    contract.validate()?;
    let x_max = buyer_upper_limit(prefs, m, cfg);
    let w = prefs.wealth;
    let wealth_at = |x: T| w - contract.retention(x) - pi;
    prefs.utility.check_domain(wealth_at(x_max))?;
    let pts = integration_points(m, contract, grid, &prefs.b.kinks(), x_max);
    let (head, windows) =
        distorted_windows(prefs, m, &pts, |x| prefs.utility.u_prime(wealth_at(x)), cfg)?;
    // suffix[i] = mass of windows i.. (x > pts[i])
    let mut suffix = vec![T::zero(); windows.len() + 1];
    for i in (0..windows.len()).rev() {
        suffix[i] = suffix[i + 1] + windows[i];
    }
    let denominator = head + suffix[0];
    let mut out = MarginalFunction {
        t: grid.to_vec(),
        l: Vec::with_capacity(grid.len()),
        tail_ratio: Vec::with_capacity(grid.len()),
        tk_s: Vec::with_capacity(grid.len()),
        tb_s: Vec::with_capacity(grid.len()),
        premium: pi,
        denominator,
    };
    for &t in grid {
        let tail = if t < T::zero() {
            denominator
        } else if t >= x_max {
            T::zero()
        } else {
            // first point at or beyond t
            let k = pts.partition_point(|&p| p < t);
            if pts[k] == t || k == 0 {
                suffix[k]
            } else {
                // t was merged away as a near-duplicate; split its window
                suffix[k] + windows[k - 1] * (pts[k] - t) / (pts[k] - pts[k - 1])
            }
        };
        let s = m.survival(t);
        let ratio = tail / denominator;
        let tk = pp.tk(s);
        out.tail_ratio.push(ratio);
        out.tk_s.push(tk);
        out.tb_s.push(prefs.tb(s));
        out.l.push(ratio - tk);
    }
    Ok(out)
}

/// Sup over the grid of the violation of the sign rule
/// (slope 0 where `L < -band`, slope 1 where `L > band`).
pub fn optimality_residual<T: Scalar>(
    contract: &Indemnity<T>,
    lf: &MarginalFunction<T>,
    band: T,
) -> T {
    lf.t.iter()
        .zip(&lf.l)
        .map(|(&t, &l)| {
            let s = contract.slope(t);
            if l < -band {
                s.abs()
            } else if l > band {
                (T::one() - s).abs()
            } else {
                T::zero()
            }
        })
        .fold(T::zero(), |a, b| a.max(b))
}

/// Residual of the optimality condition on the contract's verification grid.
pub fn verify_optimality<T: Scalar>(
    contract: &Indemnity<T>,
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<T> {
    let grid = verification_grid(contract, m, cfg.grid_n);
    let lf = compute_l(contract, prefs, pp, m, &grid, &cfg.quadrature)?;
    Ok(optimality_residual(contract, &lf, cfg.l_zero_band))
}

/// Regime label of a contract.
pub fn regime_of<T: Scalar>(
    contract: &Indemnity<T>,
    m: &LossModel<T>,
    grid_n: usize,
) -> ContractClass {
    let zero = T::zero();
    let one = T::one();
    let tol = lit::<T>(CLASSIFY_TOL);
    match contract {
        Indemnity::Zero => ContractClass::Zero,
        Indemnity::Full => ContractClass::Full,
        Indemnity::Deductible { d } => {
            if *d <= zero {
                ContractClass::Full
            } else if d.is_infinite() {
                ContractClass::Zero
            } else {
                ContractClass::Deductible
            }
        }
        Indemnity::MaxLimit { m } => {
            if *m <= zero {
                ContractClass::Zero
            } else if m.is_infinite() {
                ContractClass::Full
            } else {
                ContractClass::MaxLimit
            }
        }
        Indemnity::DeductibleCoinsurance { d, alpha } => {
            if *alpha <= tol || d.is_infinite() {
                ContractClass::Zero
            } else if *alpha >= one - tol {
                if *d <= zero {
                    ContractClass::Full
                } else {
                    ContractClass::Deductible
                }
            } else {
                ContractClass::DeductibleCoinsurance
            }
        }
        Indemnity::Diml { .. } => match contract.to_piecewise(&default_grid(m, grid_n)) {
            Ok(pl) => classify(&pl, tol),
            Err(_) => ContractClass::General,
        },
        Indemnity::PiecewiseLinear(pl) => classify_relevant(pl, m, tol),
    }
}

/// Classifies a grid contract on the cells that carry probability.
fn classify_relevant<T: Scalar>(
    pl: &PiecewiseLinear<T>,
    m: &LossModel<T>,
    tol: T,
) -> ContractClass {
    let bound = m.support_bound();
    if !bound.is_finite() {
        return classify(pl, tol);
    }
    // cells beyond the last atom carry no mass
    let knots = pl.knots();
    let keep = knots.windows(2).take_while(|w| w[0] < bound).count().max(1);
    let slopes = pl.slopes()[..keep].to_vec();
    crate::contracts::classify_slopes(&slopes, tol)
}

pub(crate) fn finish_report<T: Scalar>(
    contract: Indemnity<T>,
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
    path: SolverPath,
    iterations: usize,
    converged: bool,
    diagnostics: Diagnostics<T>,
) -> Result<SolveReport<T>> {
    let q = &cfg.quadrature;
    let pi = premium(pp, &contract, m, q)?.premium;
    let value = rdeu_value(prefs, &contract, pi, m, q)?;
    let residual = verify_optimality(&contract, prefs, pp, m, cfg)?;
    let regime = regime_of(&contract, m, cfg.grid_n);
    let uq = uniqueness_check(pp, m, &prefs.utility);
    Ok(SolveReport {
        contract,
        premium: pi,
        rdeu_value: value,
        residual,
        regime,
        unique: uq.unique,
        uniqueness_reason: uq.reason,
        iterations,
        converged,
        solver_path: path,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QuadratureConfig<f64> {
        QuadratureConfig::default()
    }

    #[test]
    fn full_insurance_l_is_tb_minus_tk() {
        let m = LossModel::zero_inflated_exponential(0.8, 1.0).unwrap();
        let prefs = BuyerPreferences::new(
            Utility::Cara { gamma: 1.5 },
            Distortion::ConvexDualPower { a: 0.7 },
            3.0,
        )
        .unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::GiniDeviation).unwrap();
        let grid = [0.1, 0.5, 1.0, 3.0];
        let lf = compute_l(&Indemnity::Full, &prefs, &pp, &m, &grid, &q()).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let s = m.survival(t);
            assert!((lf.l[i] - (prefs.tb(s) - pp.tk(s))).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_utility_l_is_contract_free() {
        let m = LossModel::exponential(1.0).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Linear, Distortion::ConvexDualPower { a: 0.6 }, 3.0)
                .unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::MeanMedianDeviation).unwrap();
        let grid = [0.2, 0.9, 2.5];
        let lf = compute_l(
            &Indemnity::Deductible { d: 0.5 },
            &prefs,
            &pp,
            &m,
            &grid,
            &q(),
        )
        .unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let s = m.survival(t);
            assert!((lf.l[i] - (prefs.tb(s) - pp.tk(s))).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_indemnity_power_closed_form() {
        let (qq, lambda, c, gamma, theta) = (0.9, 3.0, 0.5, 1.0, 0.1);
        let m = LossModel::zero_inflated_exponential(qq, lambda).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma }, Distortion::identity(), 2.0).unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Power { theta, c }).unwrap();
        let grid = [0.05, 0.4, 1.2, 3.0];
        let lf = compute_l(&Indemnity::Zero, &prefs, &pp, &m, &grid, &q()).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let closed = qq * lambda * (-(lambda - gamma) * t).exp()
                / (lambda - (1.0 - qq) * gamma)
                - (1.0 + theta) * qq.powf(c) * (-lambda * c * t).exp();
            assert!(
                (lf.l[i] - closed).abs() < 1e-8,
                "t = {t}: {} vs {closed}",
                lf.l[i]
            );
        }
    }

    #[test]
    fn perturbed_contract_has_residual() {
        let m = LossModel::exponential(1.0).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma: 1.0 }, Distortion::identity(), 3.0)
                .unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Linear { slope: 0.9 }).unwrap();
        let cfg = SolverConfig::default();
        let r = verify_optimality(&Indemnity::Full, &prefs, &pp, &m, &cfg).unwrap();
        assert_eq!(r, 0.0);
        let half = Indemnity::DeductibleCoinsurance { d: 0.0, alpha: 0.5 };
        let r = verify_optimality(&half, &prefs, &pp, &m, &cfg).unwrap();
        assert!(r >= 0.5);
    }

    #[test]
    fn uniqueness_cases() {
        let cara = Utility::Cara { gamma: 1.0 };
        let exp = LossModel::exponential(1.0).unwrap();
        let two = LossModel::discrete(vec![2.0, 3.0], vec![0.5, 0.5]).unwrap();
        let loaded = PremiumPrinciple::new(0.1, Distortion::zero()).unwrap();
        let fair = PremiumPrinciple::new(0.0, Distortion::zero()).unwrap();
        assert!(uniqueness_check(&loaded, &two, &cara).unique);
        assert!(uniqueness_check(&fair, &exp, &cara).unique);
        assert!(!uniqueness_check(&fair, &two, &cara).unique);
        assert!(!uniqueness_check(&fair, &exp, &Utility::Linear).applicable);
    }

    #[test]
    fn default_grid_shape() {
        let m = LossModel::exponential(1.0).unwrap();
        let g = default_grid(&m, 400);
        assert_eq!(g.len(), 401);
        assert_eq!(g[0], 0.0);
        assert!((g[400] - (1e6f64).ln()).abs() < 1e-12);
        assert!(g[1] - g[0] < g[400] - g[399]);
    }
}
