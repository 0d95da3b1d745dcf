use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RootResult<T> {
    /// Smallest non-negative zero; infinite when none exists below the cap.
    pub root: T,
    pub value: T,
    pub evaluations: usize,
}

/// Root of a function that is non-positive at 0 and eventually positive.
///
/// Brackets by doubling from `[0, 1]` up to `d_max`, bisects to `1e-12`, then
/// takes one Newton step with `dg` if it stays inside the bracket.
pub fn find_increasing_root<T: Scalar, G: Fn(T) -> T, D: Fn(T) -> T>(
    g: G,
    dg: D,
    d_max: T,
) -> Result<RootResult<T>> {
    let zero = T::zero();
    let g0 = g(zero);
    if !g0.is_finite() {
        return Err(Error::Parameter(
            "root function is not finite at zero".into(),
        ));
    }
    let mut evaluations = 1;
    if g0 >= zero {
        return Ok(RootResult {
            root: zero,
            value: g0,
            evaluations,
        });
    }
    let (mut lo, mut hi) = (zero, T::one().min(d_max));
    loop {
        let v = g(hi);
        evaluations += 1;
        if v >= zero {
            break;
        }
        if hi >= d_max {
            return Ok(RootResult {
                root: T::infinity(),
                value: v,
                evaluations,
            });
        }
        lo = hi;
        hi = (hi + hi).min(d_max);
    }
    let tol = lit::<T>(1e-12);
    while hi - lo > tol * T::one().max(hi) {
        let mid = (lo + hi) * lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        evaluations += 1;
        if g(mid) < zero {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = (lo + hi) * lit(0.5);
    let mut v = g(x);
    let slope = dg(x);
    evaluations += 2;
    if slope.is_finite() && slope != zero {
        let polished = x - v / slope;
        let width = hi - lo;
        if polished >= lo - width && polished <= hi + width && polished >= zero {
            let pv = g(polished);
            evaluations += 1;
            if pv.abs() <= v.abs() {
                x = polished;
                v = pv;
            }
        }
    }
    Ok(RootResult {
        root: x,
        value: v,
        evaluations,
    })
}
