//! Adaptive Simpson quadrature over piecewise-smooth integrands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct QuadratureConfig<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_subdivisions: usize,
    /// Integrands are truncated where the relevant tail probability drops below this.
    pub tail_mass: T,
}

impl<T: Scalar> Default for QuadratureConfig<T> {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: lit(1e-10),
            rel_tol: lit(1e-9),
            max_subdivisions: 1 << 16,
            tail_mass: lit(1e-12),
        }
    }
}

impl<T: Scalar> QuadratureConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.abs_tol > zero && self.rel_tol > zero && self.tail_mass > zero)
            || self.max_subdivisions == 0
        {
            return Err(Error::Parameter(
                "quadrature tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct Panel<T> {
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<T: Scalar, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    let mut budget = cfg.max_subdivisions;
    integrate_budgeted(&f, a, b, None, cfg, &mut budget)
}

/// Integrates `f` over `[points[0], points[last]]`, treating each listed point
/// as a possible kink or jump. Points must be sorted; duplicates are ignored.
pub fn integrate_pieces<T: Scalar, F: Fn(T) -> T>(
    f: F,
    points: &[T],
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    Ok(integrate_each(f, points, cfg)?.into_iter().sum())
}

/// Per-piece integrals over consecutive points, one entry per window.
///
/// The absolute tolerance is shared out across windows and capped by
/// `rel_tol` times a coarse estimate of the total, so integrands of small
/// magnitude are still resolved to relative accuracy.
pub fn integrate_each<T: Scalar, F: Fn(T) -> T>(
    f: F,
    points: &[T],
    cfg: &QuadratureConfig<T>,
) -> Result<Vec<T>> {
    let half = lit::<T>(0.5);
    let live = points.windows(2).filter(|w| w[1] > w[0]).count().max(1);
    let est: T = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (fa, fm, fb) = (f(w[0]), f((w[0] + w[1]) * half), f(w[1]));
            simpson(w[0], w[1], fa.abs(), fm.abs(), fb.abs())
        })
        .sum();
    let floor = tolerance_floor(est, cfg) / T::from_usize(live).unwrap();
    let mut budget = cfg.max_subdivisions;
    points
        .windows(2)
        .map(|w| {
            if w[1] > w[0] {
                integrate_budgeted(&f, w[0], w[1], Some(floor), cfg, &mut budget)
            } else {
                Ok(T::zero())
            }
        })
        .collect()
}

/// `min(abs_tol, rel_tol * scale)`, never below `abs_tol * 1e-6`.
fn tolerance_floor<T: Scalar>(scale: T, cfg: &QuadratureConfig<T>) -> T {
    let floor = cfg.abs_tol.min(cfg.rel_tol * scale);
    if floor.is_finite() {
        floor.max(cfg.abs_tol * lit(1e-6))
    } else {
        cfg.abs_tol
    }
}

fn simpson<T: Scalar>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / lit(6.0) * (fa + lit::<T>(4.0) * fm + fb)
}

fn integrate_budgeted<T: Scalar, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    floor: Option<T>,
    cfg: &QuadratureConfig<T>,
    budget: &mut usize,
) -> Result<T> {
    if !(b > a) {
        return Ok(T::zero());
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Parameter("integration limits must be finite".into()));
    }
    let half = lit::<T>(0.5);
    // coarse initial partition so narrow features are not skipped
    const START: usize = 4;
    let h = (b - a) / T::from_usize(START).unwrap();
    let mut stack = Vec::with_capacity(64);
    let mut coarse = T::zero();
    let mut coarse_abs = T::zero();
    for i in 0..START {
        let lo = a + h * T::from_usize(i).unwrap();
        let hi = if i + 1 == START { b } else { lo + h };
        let (fa, fm, fb) = (f(lo), f((lo + hi) * half), f(hi));
        let whole = simpson(lo, hi, fa, fm, fb);
        coarse = coarse + whole;
        coarse_abs = coarse_abs + simpson(lo, hi, fa.abs(), fm.abs(), fb.abs());
        stack.push(Panel {
            a: lo,
            b: hi,
            fa,
            fm,
            fb,
            whole,
            tol: T::zero(),
        });
    }
    let floor = floor.unwrap_or_else(|| tolerance_floor(coarse_abs, cfg));
    let global_tol = floor.max(cfg.rel_tol * coarse.abs());
    for p in stack.iter_mut() {
        p.tol = global_tol / T::from_usize(START).unwrap();
    }

    let mut total = T::zero();
    let mut err_bound = T::zero();
    while let Some(p) = stack.pop() {
        let m = (p.a + p.b) * half;
        let lm = (p.a + m) * half;
        let rm = (m + p.b) * half;
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        let fifteen = lit::<T>(15.0);
        // panels this narrow only arise at jumps; stop refining there
        let width_floor = (p.b - p.a) <= T::epsilon() * lit::<T>(64.0) * p.a.abs().max(p.b.abs())
            || (p.b - p.a) <= (b - a) * lit(1e-12);
        if !delta.is_finite() {
            return Err(Error::Quadrature {
                estimate: to_f64(total),
                error_bound: f64::INFINITY,
            });
        }
        let roundoff = T::epsilon() * lit::<T>(64.0) * (left.abs() + right.abs());
        if delta.abs() <= fifteen * p.tol || delta.abs() <= roundoff || width_floor {
            total = total + left + right + delta / fifteen;
            err_bound = err_bound + delta.abs() / fifteen;
            continue;
        }
        if *budget == 0 {
            let rest: T = stack.iter().map(|q| q.whole).sum();
            return Err(Error::Quadrature {
                estimate: to_f64(total + left + right + rest),
                error_bound: to_f64(err_bound + delta.abs()),
            });
        }
        *budget -= 1;
        let tol = p.tol * half;
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol,
        });
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
            tol,
        });
    }
    Ok(total)
}

/// Sorts, removes non-finite entries and near-duplicates, and keeps only
/// points inside `[lo, hi]` (both of which are included).
pub fn breakpoints<T: Scalar>(mut pts: Vec<T>, lo: T, hi: T) -> Vec<T> {
    pts.retain(|p| p.is_finite() && *p > lo && *p < hi);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = lo.abs().max(hi.abs()).max(T::one());
    let eps = T::epsilon() * lit::<T>(16.0) * scale;
    let mut out: Vec<T> = Vec::with_capacity(pts.len());
    for p in pts {
        match out.last() {
            Some(&last) if p - last <= eps => {}
            _ => out.push(p),
        }
    }
    if let Some(last) = out.last_mut() {
        *last = hi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let cfg = QuadratureConfig::<f64>::default();
        let v = integrate(|x| x * x * x, 0.0, 2.0, &cfg).unwrap();
        assert!((v - 4.0).abs() < 1e-13);
    }

    #[test]
    fn exponential_tail() {
        let cfg = QuadratureConfig::<f64> {
            rel_tol: 1e-12,
            ..QuadratureConfig::default()
        };
        let v = integrate(|x: f64| (-x).exp(), 0.0, 40.0, &cfg).unwrap();
        assert!((v - (1.0 - (-40.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn kink_handled_by_pieces() {
        let cfg = QuadratureConfig::<f64>::default();
        let v = integrate_pieces(|x: f64| (x - 0.3).abs(), &[0.0, 0.3, 1.0], &cfg).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn budget_exhaustion_reports_estimate() {
        let cfg = QuadratureConfig {
            max_subdivisions: 3,
            ..QuadratureConfig::<f64>::default()
        };
        match integrate(|x: f64| (50.0 * x).sin(), 0.0, 10.0, &cfg) {
            Err(Error::Quadrature {
                estimate,
                error_bound,
            }) => {
                assert!(estimate.is_finite());
                assert!(error_bound > 0.0);
            }
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }

    #[test]
    fn breakpoints_clean_up() {
        let pts = breakpoints(vec![0.5, f64::NAN, 0.5, 3.0, -1.0, 0.2], 0.0, 2.0);
        assert_eq!(pts, vec![0.0, 0.2, 0.5, 2.0]);
    }
}
