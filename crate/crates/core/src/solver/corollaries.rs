//! Constructive solvers for the full, deductible, max-limit and
//! deductible-with-limit regimes.

use super::{
    default_grid, finish_report, grid_end, likelihood_ratio, Diagnostics, SolveReport,
    SolverConfig, SolverPath,
};
use crate::contracts::{DimlInterior, FirstOrderInterior, Indemnity};
use crate::distortions::{check_order, Distortion, Order, PremiumPrinciple, SHAPE_GRID};
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::rdeu::{marginal_denominator, BuyerPreferences, Utility};
use crate::riskmetrics::premium;
use crate::scalar::{lit, Scalar};

const FULL_TOL: f64 = 1e-10;
/// Survival level beyond which the deductible search gives up.
const SEARCH_TAIL: f64 = 1e-10;
const BISECT_REL: f64 = 1e-12;
const SHAPE_SLACK: f64 = 1e-9;

/// True iff `tk(p) <= tb(p)` on `[0, S_X(0)]`, where `tb(p) = 1 - b(1-p)`.
pub fn solve_full_check<T: Scalar>(
    pp: &PremiumPrinciple<T>,
    b: &Distortion<T>,
    m: &LossModel<T>,
) -> bool {
    let s0 = m.survival(T::zero());
    let n = SHAPE_GRID - 1;
    let tol = lit::<T>(FULL_TOL);
    (0..=n).all(|i| {
        let p = s0 * T::from_usize(i).unwrap() / T::from_usize(n).unwrap();
        pp.tk(p) <= b.dual_value(p) + tol
    })
}

fn tb_distortion<T: Scalar>(prefs: &BuyerPreferences<T>) -> Result<Distortion<T>> {
    Ok(prefs.buyer()?.dual_distortion())
}

fn search_end<T: Scalar>(m: &LossModel<T>) -> T {
    let bound = m.support_bound();
    if bound.is_finite() {
        bound
    } else {
        m.quantile(lit(SEARCH_TAIL)).max(grid_end(m))
    }
}

/// `J(d, d) = u'(w - d - pi_d) / D_d - tk(S(d)) / tb(S(d))` for the deductible `d`.
pub fn deductible_gap<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    d: T,
    cfg: &SolverConfig<T>,
) -> Result<T> {
    let s = m.survival(d);
    let tb = prefs.tb(s);
    if tb <= T::zero() {
        return Ok(T::infinity());
    }
    let contract = Indemnity::Deductible { d };
    let pi = premium(pp, &contract, m, &cfg.quadrature)?.premium;
    let den = marginal_denominator(prefs, &contract, pi, m, &cfg.quadrature)?;
    Ok(prefs.utility.u_prime(prefs.wealth - d - pi) / den - pp.tk(s) / tb)
}

/// Optimal pure deductible when `tk` is below `tb` in hazard-rate order.
pub fn solve_deductible<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    let tb = tb_distortion(prefs)?;
    let order = check_order(&pp.seller_distortion(), &tb, Order::Hr, SHAPE_GRID)?;
    if !order.holds {
        return Err(Error::Precondition(format!(
            "tk is not below tb in hazard-rate order (fails at p = {}); use solve_general",
            order.fails_at.map(|p| p.to_string()).unwrap_or_default()
        )));
    }
    let s0 = m.survival(T::zero());
    if !(pp.tk(s0) > T::zero()) {
        return Err(Error::Precondition(
            "tk vanishes on [0, S_X(0)]; use solve_general".into(),
        ));
    }
    let mut diag = Diagnostics::default();
    let mut evaluations = 0;
    let gap = |d: T, n: &mut usize| {
        *n += 1;
        deductible_gap(prefs, pp, m, d, cfg)
    };
    let contract = if pp.tk(s0) <= prefs.tb(s0) || gap(T::zero(), &mut evaluations)? >= T::zero() {
        diag.d_star = Some(T::zero());
        Indemnity::Full
    } else {
        let end = search_end(m);
        let mut lo = T::zero();
        let mut hi = T::one().min(end);
        let mut found = false;
        loop {
            if gap(hi, &mut evaluations)? >= T::zero() {
                found = true;
                break;
            }
            if hi >= end {
                break;
            }
            lo = hi;
            hi = (hi + hi).min(end);
        }
        if !found {
            diag.notes
                .push("J(d, d) < 0 on the whole search range: no insurance".into());
            Indemnity::Zero
        } else {
            let tol = lit::<T>(BISECT_REL);
            while hi - lo > tol * T::one().max(hi) {
                let mid = (lo + hi) * lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                if gap(mid, &mut evaluations)? >= T::zero() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let d = (lo + hi) * lit(0.5);
            diag.d_star = Some(d);
            if d >= m.support_bound() {
                Indemnity::Zero
            } else {
                Indemnity::Deductible { d }
            }
        }
    };
    finish_report(
        contract,
        prefs,
        pp,
        m,
        cfg,
        SolverPath::Deductible,
        evaluations,
        true,
        diag,
    )
}

/// `min(x, m)` for a risk-neutral buyer with `tb` below `tk` in hazard-rate order.
pub fn solve_max_limit<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    if !matches!(prefs.utility, Utility::Linear) {
        return Err(Error::Precondition(
            "the max-limit construction needs linear utility".into(),
        ));
    }
    let tb = tb_distortion(prefs)?;
    let order = check_order(&tb, &pp.seller_distortion(), Order::Hr, SHAPE_GRID)?;
    if !order.holds {
        return Err(Error::Precondition(format!(
            "tb is not below tk in hazard-rate order (fails at p = {}); use solve_general",
            order.fails_at.map(|p| p.to_string()).unwrap_or_default()
        )));
    }
    let gap = |t: T| {
        let s = m.survival(t);
        prefs.tb(s) - pp.tk(s)
    };
    let mut diag = Diagnostics::default();
    let end = search_end(m);
    let scan = default_grid(m, 4 * cfg.grid_n.max(100));
    let mut evaluations = 1;
    let contract = if gap(T::zero()) <= T::zero() {
        diag.m_star = Some(T::zero());
        Indemnity::Zero
    } else {
        let mut bracket = None;
        let mut prev = T::zero();
        for &t in scan.iter().skip(1).chain(std::iter::once(&end)) {
            evaluations += 1;
            if gap(t) <= T::zero() {
                bracket = Some((prev, t));
                break;
            }
            prev = t;
        }
        match bracket {
            None => {
                diag.notes
                    .push("tb(S) > tk(S) on the whole support: no limit".into());
                Indemnity::Full
            }
            Some((mut lo, mut hi)) => {
                let tol = lit::<T>(BISECT_REL);
                while hi - lo > tol * T::one().max(hi) {
                    let mid = (lo + hi) * lit(0.5);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    evaluations += 1;
                    if gap(mid) <= T::zero() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                diag.m_star = Some(hi);
                Indemnity::MaxLimit { m: hi }
            }
        }
    };
    finish_report(
        contract,
        prefs,
        pp,
        m,
        cfg,
        SolverPath::MaxLimit,
        evaluations,
        true,
        diag,
    )
}

/// Secant slopes of `(x, y)` are non-negative and non-increasing within slack.
fn increasing_concave<T: Scalar>(x: &[T], y: &[T]) -> bool {
    let slopes: Vec<T> = x
        .windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| (b[1] - b[0]) / (a[1] - a[0]))
        .collect();
    let scale = slopes
        .iter()
        .fold(T::zero(), |a, s| a.max(s.abs()))
        .max(T::one());
    let slack = lit::<T>(SHAPE_SLACK) * scale;
    slopes.iter().all(|&s| s >= -slack) && slopes.windows(2).all(|w| w[1] <= w[0] + slack)
}

fn diml_preconditions<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    grid_n: usize,
) -> Result<()> {
    if pp.theta < T::zero() {
        return Err(Error::Precondition(
            "the deductible-with-limit construction needs theta >= 0".into(),
        ));
    }
    if matches!(prefs.utility, Utility::Linear) {
        return Err(Error::Precondition(
            "the interior formula needs strictly concave utility".into(),
        ));
    }
    if !m.has_density() {
        return Err(Error::Precondition(
            "the interior formula needs a loss with a density".into(),
        ));
    }
    let order = check_order(
        &tb_distortion(prefs)?,
        &pp.seller_distortion(),
        Order::Lr,
        SHAPE_GRID,
    )?;
    if !order.holds {
        return Err(Error::Precondition(format!(
            "tb is not below tk in likelihood-ratio order (fails at p = {})",
            order.fails_at.map(|p| p.to_string()).unwrap_or_default()
        )));
    }
    let xs: Vec<T> = default_grid(m, grid_n)
        .windows(2)
        .map(|w| (w[0] + w[1]) * lit(0.5))
        .filter(|&x| m.density(x) > T::zero())
        .collect();
    let ell: Vec<T> = xs
        .iter()
        .map(|&x| likelihood_ratio(pp, &prefs.b, m, x).0)
        .collect();
    if ell.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
        return Err(Error::Precondition(
            "likelihood ratio is not positive and finite".into(),
        ));
    }
    let log_ok = prefs.utility.is_hara_family() && {
        let ln: Vec<T> = ell.iter().map(|l| l.ln()).collect();
        increasing_concave(&xs, &ln)
    };
    let prudent = xs
        .iter()
        .all(|&x| prefs.utility.u_third(prefs.wealth - x) >= T::zero());
    if log_ok || (prudent && increasing_concave(&xs, &ell)) {
        Ok(())
    } else {
        Err(Error::Precondition(
            "neither ln l (HARA) nor l (prudent utility) is increasing and concave".into(),
        ))
    }
}

struct DimlCandidate<T> {
    contract: Indemnity<T>,
    upsilon: T,
    phi: T,
}

/// Contract with deductible `d` whose interior makes `L` vanish, given the premium `pi`.
fn diml_candidate<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    d: T,
    pi: T,
    cfg: &SolverConfig<T>,
) -> Result<DimlCandidate<T>> {
    let (ell_d, _) = likelihood_ratio(pp, &prefs.b, m, d);
    let upsilon = prefs.utility.u_prime(prefs.wealth - pi - d) / ell_d;
    let interior = DimlInterior::FirstOrder(Box::new(FirstOrderInterior {
        utility: prefs.utility.clone(),
        b: prefs.b.clone(),
        principle: pp.clone(),
        loss: m.clone(),
        wealth: prefs.wealth,
        premium: pi,
        upsilon,
    }));
    let limit = slope_limit(&interior, m, d, cfg.grid_n);
    let contract = Indemnity::Diml {
        d,
        m: limit,
        interior,
    };
    let den = marginal_denominator(prefs, &contract, pi, m, &cfg.quadrature)?;
    Ok(DimlCandidate {
        contract,
        upsilon,
        phi: T::one() - upsilon / den,
    })
}

/// First point beyond `d` where the interior slope turns negative.
fn slope_limit<T: Scalar>(
    interior: &DimlInterior<T>,
    m: &LossModel<T>,
    d: T,
    grid_n: usize,
) -> Option<T> {
    let slope = |x: T| interior.raw_slope(x);
    let grid = default_grid(m, grid_n);
    let mut prev = d;
    for &x in grid.iter().filter(|&&x| x > d) {
        if slope(x) < T::zero() {
            let (mut lo, mut hi) = (prev, x);
            for _ in 0..100 {
                let mid = (lo + hi) * lit(0.5);
                if slope(mid) < T::zero() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(lo);
        }
        prev = x;
    }
    None
}

/// Deductible with an interior given by the first-order condition and,
/// where that interior would decrease, a maximum limit.
pub fn solve_diml<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    diml_preconditions(prefs, pp, m, cfg.grid_n)?;
    let end = search_end(m);
    let scan: Vec<T> = default_grid(m, 64).into_iter().skip(1).collect();
    let mut pi = T::zero();
    let mut evaluations = 0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut best = None;
    for _ in 0..cfg.max_iter {
        let mut eval = |d: T| {
            evaluations += 1;
            diml_candidate(prefs, pp, m, d, pi, cfg)
        };
        let at_zero = eval(T::zero())?;
        let cand = if at_zero.phi <= T::zero() {
            at_zero
        } else {
            let mut lo = T::zero();
            let mut hi = None;
            for &d in scan.iter().chain(std::iter::once(&end)) {
                if eval(d)?.phi <= T::zero() {
                    hi = Some(d);
                    break;
                }
                lo = d;
            }
            let Some(mut hi) = hi else {
                return Err(Error::Precondition(
                    "no continuity point for the deductible found".into(),
                ));
            };
            let tol = lit::<T>(BISECT_REL);
            while hi - lo > tol * T::one().max(hi) {
                let mid = (lo + hi) * lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                if eval(mid)?.phi <= T::zero() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            eval((lo + hi) * lit(0.5))?
        };
        let new_pi = premium(pp, &cand.contract, m, &cfg.quadrature)?.premium;
        let change = (new_pi - pi).abs();
        history.push(change);
        pi = new_pi;
        let done = change <= cfg.tol * T::one().max(pi.abs());
        best = Some(cand);
        if done {
            converged = true;
            break;
        }
    }
    let cand = best.expect("at least one iteration");
    // rebuild with the final premium so the interior is consistent
    let d = match &cand.contract {
        Indemnity::Diml { d, .. } => *d,
        _ => T::zero(),
    };
    let cand = diml_candidate(prefs, pp, m, d, pi, cfg)?;
    let limit = match &cand.contract {
        Indemnity::Diml { m, .. } => *m,
        _ => None,
    };
    let diag = Diagnostics {
        d_star: Some(d),
        m_star: limit,
        upsilon: Some(cand.upsilon),
        history,
        ..Diagnostics::default()
    };
    finish_report(
        cand.contract,
        prefs,
        pp,
        m,
        cfg,
        SolverPath::Diml,
        evaluations,
        converged,
        diag,
    )
}
