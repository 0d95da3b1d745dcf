//! Indemnities in `I_c`: non-decreasing, 1-Lipschitz, `I(0) = 0`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distortions::{Distortion, PremiumPrinciple};
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::rdeu::Utility;
use crate::scalar::{clamp, lit, to_f64, Scalar};
use crate::solver::likelihood_ratio;

/// An indemnity schedule `x -> I(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Indemnity<T> {
    Zero,
    Full,
    /// `(x - d)+`
    Deductible {
        d: T,
    },
    /// `min(x, m)`
    MaxLimit {
        m: T,
    },
    /// `alpha (x - d)+`
    DeductibleCoinsurance {
        d: T,
        alpha: T,
    },
    /// Zero up to `d`, the interior formula on `(d, m]`, flat beyond `m`.
    Diml {
        d: T,
        #[serde(default)]
        m: Option<T>,
        interior: DimlInterior<T>,
    },
    PiecewiseLinear(PiecewiseLinear<T>),
}

/// Interior part of a deductible-with-maximum-limit contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", bound = "T: Scalar")]
pub enum DimlInterior<T> {
    /// `x - d - ((c-1)/gamma) ln((1 - q e^{-lambda x}) / (1 - q e^{-lambda d}))`
    DualPowerExponential { gamma: T, lambda: T, c: T, q: T },
    /// `x - d - (1/gamma) ln(l(x) / l(d))`, `l(x) = 1 + theta + alpha (1 - 2 q e^{-lambda x})`
    GiniExponential {
        gamma: T,
        lambda: T,
        theta: T,
        alpha: T,
        q: T,
    },
    /// `x - w + pi + (u')^{-1}(l(x) upsilon)`, shifted to vanish at `d`.
    FirstOrder(Box<FirstOrderInterior<T>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FirstOrderInterior<T> {
    pub utility: Utility<T>,
    pub b: Distortion<T>,
    pub principle: PremiumPrinciple<T>,
    pub loss: LossModel<T>,
    pub wealth: T,
    pub premium: T,
    pub upsilon: T,
}

impl<T: Scalar> DimlInterior<T> {
    fn raw(&self, x: T) -> T {
        let one = T::one();
        match self {
            DimlInterior::DualPowerExponential {
                gamma,
                lambda,
                c,
                q,
            } => x - (*c - one) / *gamma * (one - *q * (-*lambda * x).exp()).ln(),
            DimlInterior::GiniExponential {
                gamma,
                lambda,
                theta,
                alpha,
                q,
            } => {
                let ell = one + *theta + *alpha * (one - lit::<T>(2.0) * *q * (-*lambda * x).exp());
                x - ell.ln() / *gamma
            }
            DimlInterior::FirstOrder(fo) => {
                let (ell, _) = likelihood_ratio(&fo.principle, &fo.b, &fo.loss, x);
                let inv = fo.utility.u_prime_inv(ell * fo.upsilon).unwrap_or(T::nan());
                x - fo.wealth + fo.premium + inv
            }
        }
    }

    pub(crate) fn raw_slope(&self, x: T) -> T {
        let one = T::one();
        let two = lit::<T>(2.0);
        match self {
            DimlInterior::DualPowerExponential {
                gamma,
                lambda,
                c,
                q,
            } => {
                let e = *q * (-*lambda * x).exp();
                one - (*c - one) / *gamma * *lambda * e / (one - e)
            }
            DimlInterior::GiniExponential {
                gamma,
                lambda,
                theta,
                alpha,
                q,
            } => {
                let e = *q * (-*lambda * x).exp();
                let ell = one + *theta + *alpha * (one - two * e);
                one - two * *alpha * *lambda * e / (*gamma * ell)
            }
            DimlInterior::FirstOrder(fo) => {
                let (ell, dell) = likelihood_ratio(&fo.principle, &fo.b, &fo.loss, x);
                let y = ell * fo.upsilon;
                match fo.utility.u_prime_inv(y) {
                    Ok(z) => one + dell * fo.upsilon / fo.utility.u_second(z),
                    Err(_) => T::nan(),
                }
            }
        }
    }
}

/// Piecewise-linear indemnity with knots `0 = x_0 < ... < x_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawPiecewise<T>",
    into = "RawPiecewise<T>",
    bound = "T: Scalar"
)]
pub struct PiecewiseLinear<T> {
    knots: Vec<T>,
    slopes: Vec<T>,
    tail_slope: T,
    values: Vec<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawPiecewise<T> {
    knots: Vec<T>,
    slopes: Vec<T>,
    tail_slope: T,
}

impl<T: Scalar> TryFrom<RawPiecewise<T>> for PiecewiseLinear<T> {
    type Error = Error;
    fn try_from(raw: RawPiecewise<T>) -> Result<Self> {
        PiecewiseLinear::new(raw.knots, raw.slopes, raw.tail_slope)
    }
}

impl<T: Scalar> From<PiecewiseLinear<T>> for RawPiecewise<T> {
    fn from(pl: PiecewiseLinear<T>) -> Self {
        RawPiecewise {
            knots: pl.knots,
            slopes: pl.slopes,
            tail_slope: pl.tail_slope,
        }
    }
}

impl<T: Scalar> PiecewiseLinear<T> {
    /// Rejects slopes outside `[0, 1]` with a contract-domain error.
    pub fn new(knots: Vec<T>, slopes: Vec<T>, tail_slope: T) -> Result<Self> {
        if knots.len() < 2 || slopes.len() + 1 != knots.len() {
            return Err(Error::ContractDomain(
                "piecewise-linear contract needs n+1 knots for n slopes, n >= 1".into(),
            ));
        }
        if knots[0] != T::zero() {
            return Err(Error::ContractDomain("first knot must be 0".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || !knots[knots.len() - 1].is_finite() {
            return Err(Error::ContractDomain(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        let bad = |s: &T| !(*s >= T::zero() && *s <= T::one());
        if let Some(s) = slopes
            .iter()
            .chain(std::iter::once(&tail_slope))
            .find(|s| bad(s))
        {
            return Err(Error::ContractDomain(format!("slope {s} outside [0, 1]")));
        }
        let mut values = Vec::with_capacity(knots.len());
        values.push(T::zero());
        for i in 0..slopes.len() {
            let v = values[i] + slopes[i] * (knots[i + 1] - knots[i]);
            values.push(v);
        }
        Ok(PiecewiseLinear {
            knots,
            slopes,
            tail_slope,
            values,
        })
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    pub fn tail_slope(&self) -> T {
        self.tail_slope
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Cell midpoints.
    pub fn midpoints(&self) -> Vec<T> {
        self.knots
            .windows(2)
            .map(|w| (w[0] + w[1]) * lit(0.5))
            .collect()
    }

    fn segment(&self, x: T) -> usize {
        // index i with knots[i] <= x < knots[i+1]
        match self.knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn evaluate(&self, x: T) -> T {
        let n = self.slopes.len();
        if x <= T::zero() {
            return T::zero();
        }
        if x >= self.knots[n] {
            return self.values[n] + self.tail_slope * (x - self.knots[n]);
        }
        let i = self.segment(x);
        self.values[i] + self.slopes[i] * (x - self.knots[i])
    }

    pub fn slope(&self, t: T) -> T {
        let n = self.slopes.len();
        if t >= self.knots[n] {
            return self.tail_slope;
        }
        if t < T::zero() {
            return self.slopes[0];
        }
        self.slopes[self.segment(t)]
    }
}

/// Clips raw per-segment slopes into `[0, 1]`.
pub fn project_to_ic<T: Scalar>(
    knots: Vec<T>,
    raw_slopes: &[T],
    raw_tail: T,
) -> Result<Indemnity<T>> {
    let clip = |s: T| clamp(if s.is_nan() { T::zero() } else { s }, T::zero(), T::one());
    let slopes = raw_slopes.iter().map(|&s| clip(s)).collect();
    Ok(Indemnity::PiecewiseLinear(PiecewiseLinear::new(
        knots,
        slopes,
        clip(raw_tail),
    )?))
}

impl<T: Scalar> Indemnity<T> {
    pub fn piecewise(knots: Vec<T>, slopes: Vec<T>, tail_slope: T) -> Result<Self> {
        Ok(Indemnity::PiecewiseLinear(PiecewiseLinear::new(
            knots, slopes, tail_slope,
        )?))
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let one = T::one();
        let bad = |what: &str| Err(Error::ContractDomain(what.to_string()));
        match self {
            Indemnity::Zero | Indemnity::Full | Indemnity::PiecewiseLinear(_) => Ok(()),
            Indemnity::Deductible { d } => {
                if *d >= zero {
                    Ok(())
                } else {
                    bad("deductible must be non-negative")
                }
            }
            Indemnity::MaxLimit { m } => {
                if *m >= zero {
                    Ok(())
                } else {
                    bad("limit must be non-negative")
                }
            }
            Indemnity::DeductibleCoinsurance { d, alpha } => {
                if !(*d >= zero) {
                    bad("deductible must be non-negative")
                } else if !(*alpha >= zero && *alpha <= one) {
                    bad("coinsurance slope must lie in [0, 1]")
                } else {
                    Ok(())
                }
            }
            Indemnity::Diml { d, m, .. } => {
                if !(*d >= zero) {
                    return bad("deductible must be non-negative");
                }
                if let Some(m) = m {
                    if !(*m >= *d) {
                        return bad("limit must not precede the deductible");
                    }
                }
                Ok(())
            }
        }
    }

    /// `I(x)`, with `0 <= I(x) <= x`.
    pub fn evaluate(&self, x: T) -> T {
        let zero = T::zero();
        if !(x > zero) {
            return zero;
        }
        match self {
            Indemnity::Zero => zero,
            Indemnity::Full => x,
            Indemnity::Deductible { d } => (x - *d).max(zero),
            Indemnity::MaxLimit { m } => x.min(*m),
            Indemnity::DeductibleCoinsurance { d, alpha } => *alpha * (x - *d).max(zero),
            Indemnity::Diml { d, m, interior } => {
                if x <= *d {
                    return zero;
                }
                let top = m.map_or(x, |m| x.min(m));
                clamp(interior.raw(top) - interior.raw(*d), zero, x)
            }
            Indemnity::PiecewiseLinear(pl) => pl.evaluate(x),
        }
    }

    /// Right derivative `I'(t)`, clipped into `[0, 1]`.
    pub fn slope(&self, t: T) -> T {
        let zero = T::zero();
        let one = T::one();
        let s = match self {
            Indemnity::Zero => zero,
            Indemnity::Full => one,
            Indemnity::Deductible { d } => {
                if t >= *d {
                    one
                } else {
                    zero
                }
            }
            Indemnity::MaxLimit { m } => {
                if t < *m {
                    one
                } else {
                    zero
                }
            }
            Indemnity::DeductibleCoinsurance { d, alpha } => {
                if t >= *d {
                    *alpha
                } else {
                    zero
                }
            }
            Indemnity::Diml { d, m, interior } => {
                if t < *d || m.is_some_and(|m| t >= m) {
                    zero
                } else {
                    interior.raw_slope(t)
                }
            }
            Indemnity::PiecewiseLinear(pl) => pl.slope(t),
        };
        if s.is_nan() {
            zero
        } else {
            clamp(s, zero, one)
        }
    }

    /// `R(x) = x - I(x)`.
    pub fn retention(&self, x: T) -> T {
        x - self.evaluate(x)
    }

    /// Locations where the slope may jump.
    pub fn breakpoints(&self) -> Vec<T> {
        match self {
            Indemnity::Zero | Indemnity::Full => Vec::new(),
            Indemnity::Deductible { d } => vec![*d],
            Indemnity::MaxLimit { m } => vec![*m],
            Indemnity::DeductibleCoinsurance { d, .. } => vec![*d],
            Indemnity::Diml { d, m, .. } => std::iter::once(*d).chain(*m).collect(),
            Indemnity::PiecewiseLinear(pl) => pl.knots.clone(),
        }
    }

    /// Interpolates the contract at `grid` (which must start at 0); the tail
    /// keeps the slope found at the last grid point.
    pub fn to_piecewise(&self, grid: &[T]) -> Result<PiecewiseLinear<T>> {
        let values: Vec<T> = grid.iter().map(|&x| self.evaluate(x)).collect();
        let slopes: Vec<T> = (0..grid.len() - 1)
            .map(|i| {
                clamp(
                    (values[i + 1] - values[i]) / (grid[i + 1] - grid[i]),
                    T::zero(),
                    T::one(),
                )
            })
            .collect();
        let tail = self.slope(grid[grid.len() - 1]);
        PiecewiseLinear::new(grid.to_vec(), slopes, tail)
    }

    /// Contract kind as a short label.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Indemnity::Zero => "zero",
            Indemnity::Full => "full",
            Indemnity::Deductible { .. } => "deductible",
            Indemnity::MaxLimit { .. } => "max_limit",
            Indemnity::DeductibleCoinsurance { .. } => "deductible_coinsurance",
            Indemnity::Diml { .. } => "diml",
            Indemnity::PiecewiseLinear(_) => "piecewise_linear",
        }
    }
}

/// Named contract families recognised from a slope profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractClass {
    Zero,
    Full,
    Deductible,
    MaxLimit,
    DeductibleCoinsurance,
    Diml,
    General,
}

impl fmt::Display for ContractClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ContractClass::Zero => "zero",
            ContractClass::Full => "full",
            ContractClass::Deductible => "deductible",
            ContractClass::MaxLimit => "max_limit",
            ContractClass::DeductibleCoinsurance => "deductible_coinsurance",
            ContractClass::Diml => "diml",
            ContractClass::General => "general",
        };
        f.write_str(s)
    }
}

/// Classifies a slope sequence (segment slopes followed by the tail slope).
pub fn classify_slopes<T: Scalar>(slopes: &[T], tol: T) -> ContractClass {
    let one = T::one();
    let is0 = |s: &T| *s <= tol;
    let is1 = |s: &T| *s >= one - tol;
    if slopes.iter().all(is0) {
        return ContractClass::Zero;
    }
    if slopes.iter().all(is1) {
        return ContractClass::Full;
    }
    let lead0 = slopes.iter().take_while(|s| is0(s)).count();
    let rest = &slopes[lead0..];
    if lead0 > 0 && rest.iter().all(is1) {
        return ContractClass::Deductible;
    }
    let lead1 = slopes.iter().take_while(|s| is1(s)).count();
    if lead1 > 0 && slopes[lead1..].iter().all(is0) {
        return ContractClass::MaxLimit;
    }
    let first = rest[0];
    if first > tol && first < one - tol && rest.iter().all(|s| (*s - first).abs() <= tol) {
        return ContractClass::DeductibleCoinsurance;
    }
    let trail0 = rest.iter().rev().take_while(|s| is0(s)).count();
    let middle = &rest[..rest.len() - trail0];
    if middle.iter().all(|s| !is0(s)) {
        return ContractClass::Diml;
    }
    ContractClass::General
}

pub fn classify<T: Scalar>(pl: &PiecewiseLinear<T>, tol: T) -> ContractClass {
    let mut all = pl.slopes.clone();
    all.push(pl.tail_slope);
    classify_slopes(&all, tol)
}

impl<T: Scalar> fmt::Display for Indemnity<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Indemnity::Deductible { d } => write!(f, "deductible(d={})", to_f64(*d)),
            Indemnity::MaxLimit { m } => write!(f, "max_limit(m={})", to_f64(*m)),
            Indemnity::DeductibleCoinsurance { d, alpha } => {
                write!(
                    f,
                    "deductible_coinsurance(d={}, alpha={})",
                    to_f64(*d),
                    to_f64(*alpha)
                )
            }
            Indemnity::Diml { d, m, .. } => match m {
                Some(m) => write!(f, "diml(d={}, m={})", to_f64(*d), to_f64(*m)),
                None => write!(f, "diml(d={}, m=inf)", to_f64(*d)),
            },
            Indemnity::PiecewiseLinear(pl) => {
                write!(f, "piecewise_linear({} segments)", pl.slopes.len())
            }
            other => f.write_str(other.kind_name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        let ded = Indemnity::Deductible { d: 2.0 };
        assert_eq!(ded.evaluate(1.0), 0.0);
        assert_eq!(ded.evaluate(5.0), 3.0);
        let dc = Indemnity::DeductibleCoinsurance {
            d: 1.0,
            alpha: 0.75,
        };
        assert_eq!(dc.evaluate(3.0), 1.5);
        assert_eq!(Indemnity::MaxLimit { m: 2.0 }.evaluate(5.0), 2.0);
        assert_eq!(Indemnity::<f64>::Full.retention(4.0), 0.0);
    }

    #[test]
    fn slope_examples() {
        assert_eq!(Indemnity::<f64>::Full.slope(3.3), 1.0);
        assert_eq!(Indemnity::MaxLimit { m: 2.0 }.slope(3.0), 0.0);
        let pl = Indemnity::piecewise(vec![0.0, 1.0, 2.0], vec![0.0, 0.5], 1.0).unwrap();
        assert_eq!(pl.slope(1.5), 0.5);
        assert_eq!(pl.slope(1.0), 0.5);
        assert_eq!(pl.slope(7.0), 1.0);
        assert_eq!(pl.evaluate(3.0), 1.5);
    }

    #[test]
    fn projection_clips() {
        let knots = vec![0.0, 1.0, 2.0];
        let p = project_to_ic(knots.clone(), &[1.3, -0.2], 0.5).unwrap();
        let Indemnity::PiecewiseLinear(pl) = p else {
            panic!()
        };
        assert_eq!(pl.slopes(), &[1.0, 0.0]);
        let p = project_to_ic(knots, &[0.5, 0.5], 0.5).unwrap();
        let Indemnity::PiecewiseLinear(pl) = p else {
            panic!()
        };
        assert_eq!(pl.slopes(), &[0.5, 0.5]);
        let p = project_to_ic(vec![0.0, 1.0, 2.0, 3.0], &[2.0, 0.7, -1.0], 0.0).unwrap();
        let Indemnity::PiecewiseLinear(pl) = p else {
            panic!()
        };
        assert_eq!(pl.slopes(), &[1.0, 0.7, 0.0]);
    }

    #[test]
    fn classification() {
        let c = |s: &[f64]| classify_slopes(s, 1e-3);
        assert_eq!(c(&[0.0, 0.0, 0.0]), ContractClass::Zero);
        assert_eq!(c(&[1.0, 1.0]), ContractClass::Full);
        assert_eq!(c(&[0.0, 0.0, 1.0, 1.0]), ContractClass::Deductible);
        assert_eq!(c(&[1.0, 1.0, 0.0]), ContractClass::MaxLimit);
        assert_eq!(
            c(&[0.0, 0.75, 0.75, 0.75]),
            ContractClass::DeductibleCoinsurance
        );
        assert_eq!(c(&[0.75, 0.75]), ContractClass::DeductibleCoinsurance);
        assert_eq!(c(&[0.0, 0.3, 0.6, 0.9]), ContractClass::Diml);
        assert_eq!(c(&[0.0, 0.3, 0.6, 0.0]), ContractClass::Diml);
        assert_eq!(c(&[0.0, 0.5, 0.0, 0.5]), ContractClass::General);
    }

    #[test]
    fn rejects_infeasible_slopes() {
        assert!(matches!(
            Indemnity::piecewise(vec![0.0, 1.0], vec![1.5], 0.0),
            Err(Error::ContractDomain(_))
        ));
        assert!(Indemnity::piecewise(vec![0.0, 1.0], vec![0.5], -0.1).is_err());
        assert!(Indemnity::piecewise(vec![0.5, 1.0], vec![0.5], 0.0).is_err());
    }

    #[test]
    fn dual_power_interior_continuous_at_deductible() {
        let c: Indemnity<f64> = Indemnity::Diml {
            d: 0.4,
            m: None,
            interior: DimlInterior::DualPowerExponential {
                gamma: 2.0,
                lambda: 1.0,
                c: 1.5,
                q: 0.5,
            },
        };
        assert_eq!(c.evaluate(0.4), 0.0);
        assert!(c.evaluate(0.41) > 0.0);
        let h = 1e-6;
        let fd = (c.evaluate(2.0 + h) - c.evaluate(2.0 - h)) / (2.0 * h);
        assert!((fd - c.slope(2.0)).abs() < 1e-8);
    }

    #[test]
    fn piecewise_serde_round_trip() {
        let c = Indemnity::piecewise(vec![0.0, 1.0, 2.5], vec![0.0, 0.25], 0.25).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: Indemnity<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"kind":"piecewise_linear","knots":[0,1],"slopes":[2],"tail_slope":0}"#;
        assert!(serde_json::from_str::<Indemnity<f64>>(bad).is_err());
        let ded: Indemnity<f64> =
            serde_json::from_str(r#"{"kind":"deductible","d":1.25}"#).unwrap();
        assert_eq!(ded, Indemnity::Deductible { d: 1.25 });
    }
}
