//! Signed Choquet integrals and distortion-deviation premiums.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contracts::Indemnity;
use crate::distortions::{Distortion, PremiumPrinciple};
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::quadrature::{breakpoints, integrate, integrate_pieces};
use crate::scalar::{lit, to_f64, Scalar};

pub use crate::quadrature::QuadratureConfig;

/// Upper integration limit for `int j(S_X(t)) dt`.
fn upper_limit<T: Scalar>(j: &Distortion<T>, m: &LossModel<T>, cfg: &QuadratureConfig<T>) -> T {
    let bound = m.support_bound();
    if bound.is_finite() {
        return bound;
    }
    let p = j.tail_probability(cfg.tail_mass).min(cfg.tail_mass);
    m.quantile(p)
}

fn kink_images<T: Scalar>(j: &Distortion<T>, m: &LossModel<T>) -> Vec<T> {
    if m.has_density() {
        j.kinks().into_iter().map(|p| m.quantile(p)).collect()
    } else {
        Vec::new()
    }
}

/// `rho_j(X) = int_0^inf j(S_X(t)) dt` for a non-negative loss.
pub fn rho<T: Scalar>(j: &Distortion<T>, m: &LossModel<T>, cfg: &QuadratureConfig<T>) -> Result<T> {
    if let LossModel::Discrete { atoms, probs } = m {
        return Ok(rho_discrete(j, atoms, probs));
    }
    let x_max = upper_limit(j, m, cfg);
    let mut pts = m.breakpoints();
    pts.extend(kink_images(j, m));
    let pts = breakpoints(pts, T::zero(), x_max);
    integrate_pieces(|t| j.value(m.survival(t)), &pts, cfg)
}

/// Exact signed Choquet integral of a finitely supported `Y` of any sign:
/// `y_1 j(1) + sum_i (y_i - y_{i-1}) j(P(Y >= y_i))`.
pub fn rho_discrete<T: Scalar>(j: &Distortion<T>, values: &[T], probs: &[T]) -> T {
    let mut pairs: Vec<(T, T)> = values
        .iter()
        .copied()
        .zip(probs.iter().copied())
        .filter(|(_, p)| *p > T::zero())
        .collect();
    if pairs.is_empty() {
        return T::zero();
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // merge tied values
    let mut merged: Vec<(T, T)> = Vec::with_capacity(pairs.len());
    for (y, p) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == y => last.1 = last.1 + p,
            _ => merged.push((y, p)),
        }
    }
    let total: T = merged.iter().map(|x| x.1).sum();
    let mut upper = total;
    let mut acc = merged[0].0 * j.value(T::one());
    for i in 1..merged.len() {
        upper = upper - merged[i - 1].1;
        acc = acc + (merged[i].0 - merged[i - 1].0) * j.value(upper / total);
    }
    acc
}

/// Premium `(1+theta) E[Y] + rho_k(Y)` of a finitely supported `Y`.
pub fn premium_discrete<T: Scalar>(pp: &PremiumPrinciple<T>, values: &[T], probs: &[T]) -> T {
    let mean: T = values.iter().zip(probs).map(|(y, p)| *y * *p).sum();
    (T::one() + pp.theta) * mean + rho_discrete(&pp.k, values, probs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PremiumBreakdown<T> {
    pub premium: T,
    /// `(1+theta) E[I(X)]`
    pub loading_part: T,
    /// `rho_k(I(X))`
    pub deviation_part: T,
}

/// `pi(I(X)) = int I'(t) tk(S_X(t)) dt`, split into its canonical parts.
pub fn premium<T: Scalar>(
    pp: &PremiumPrinciple<T>,
    contract: &Indemnity<T>,
    m: &LossModel<T>,
    cfg: &QuadratureConfig<T>,
) -> Result<PremiumBreakdown<T>> {
    contract.validate()?;
    let one = T::one();
    let (mean, dev) = if let LossModel::Discrete { atoms, probs } = m {
        let vals: Vec<T> = atoms.iter().map(|&x| contract.evaluate(x)).collect();
        let mean: T = vals.iter().zip(probs).map(|(y, p)| *y * *p).sum();
        (mean, rho_discrete(&pp.k, &vals, probs))
    } else {
        let tk = pp.seller_distortion();
        let x_max = upper_limit(&tk, m, cfg);
        let mut pts = m.breakpoints();
        pts.extend(contract.breakpoints());
        pts.extend(kink_images(&pp.k, m));
        let pts = breakpoints(pts, T::zero(), x_max);
        let mean = integrate_pieces(|t| contract.slope(t) * m.survival(t), &pts, cfg)?;
        let dev = integrate_pieces(|t| contract.slope(t) * pp.k.value(m.survival(t)), &pts, cfg)?;
        (mean, dev)
    };
    let loading_part = (one + pp.theta) * mean;
    Ok(PremiumBreakdown {
        premium: loading_part + dev,
        loading_part,
        deviation_part: dev,
    })
}

/// Cumulative premium integrals `int_{a}^{b} tk(S_X(t)) dt` over consecutive
/// windows of `points`, used for grid contracts.
pub(crate) fn premium_weights<T: Scalar>(
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    points: &[T],
    cfg: &QuadratureConfig<T>,
) -> Result<Vec<T>> {
    let mut pts = points.to_vec();
    pts.extend(m.breakpoints());
    pts.extend(kink_images(&pp.k, m));
    let refined = breakpoints(pts, points[0], points[points.len() - 1]);
    let mut out = vec![T::zero(); points.len() - 1];
    let mut window = 0;
    for w in refined.windows(2) {
        while window + 1 < out.len() && w[0] >= points[window + 1] {
            window += 1;
        }
        let v = integrate(|t| pp.tk(m.survival(t)), w[0], w[1], cfg)?;
        out[window] = out[window] + v;
    }
    Ok(out)
}

/// Tail integral `int_{a}^{inf} tk(S_X(t)) dt`.
pub(crate) fn premium_tail<T: Scalar>(
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    a: T,
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    let x_max = upper_limit(&pp.seller_distortion(), m, cfg);
    if a >= x_max {
        return Ok(T::zero());
    }
    let mut pts = m.breakpoints();
    pts.extend(kink_images(&pp.k, m));
    let pts = breakpoints(pts, a, x_max);
    integrate_pieces(|t| pp.tk(m.survival(t)), &pts, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GiniCheck<T> {
    pub rho_value: T,
    pub mc_value: T,
    pub z_score: T,
}

/// Compares `rho_{p - p^2}(X)` against a Monte Carlo estimate of `E|Y - Y'| / 2`.
pub fn gini_cross_check<T: Scalar>(
    m: &LossModel<T>,
    n_samples: usize,
    seed: u64,
    cfg: &QuadratureConfig<T>,
) -> Result<GiniCheck<T>> {
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be positive".into()));
    }
    let rho_value = rho(&Distortion::GiniDeviation, m, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let y = to_f64(m.sample(&mut rng));
        let y2 = to_f64(m.sample(&mut rng));
        let v = 0.5 * (y - y2).abs();
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        (sum_sq - n * mean * mean).max(0.0) / (n - 1.0)
    } else {
        0.0
    };
    let se = (var / n).sqrt();
    let gap = mean - to_f64(rho_value);
    let z = if se > 0.0 {
        gap / se
    } else if gap.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY.copysign(gap)
    };
    Ok(GiniCheck {
        rho_value,
        mc_value: lit(mean),
        z_score: lit(z),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeanMedianCheck<T> {
    pub rho_value: T,
    pub min_value: T,
    pub argmin: T,
}

/// `E|X - y| = y + E X - 2 int_0^y S_X(t) dt`.
pub fn mean_absolute_deviation<T: Scalar>(
    m: &LossModel<T>,
    y: T,
    cfg: &QuadratureConfig<T>,
) -> Result<T> {
    if let LossModel::Discrete { atoms, probs } = m {
        return Ok(atoms
            .iter()
            .zip(probs)
            .map(|(a, p)| (*a - y).abs() * *p)
            .sum());
    }
    let pts = breakpoints(m.breakpoints(), T::zero(), y.max(T::zero()));
    let s = if y > T::zero() {
        integrate_pieces(|t| m.survival(t), &pts, cfg)?
    } else {
        T::zero()
    };
    Ok(y + m.mean() - lit::<T>(2.0) * s)
}

/// Compares `rho_{min(p, 1-p)}(X)` against `min_y E|X - y|` by golden-section search.
pub fn mean_median_cross_check<T: Scalar>(
    m: &LossModel<T>,
    cfg: &QuadratureConfig<T>,
) -> Result<MeanMedianCheck<T>> {
    let rho_value = rho(&Distortion::MeanMedianDeviation, m, cfg)?;
    let bound = m.support_bound();
    let mut hi = if bound.is_finite() {
        bound
    } else {
        m.quantile(lit(1e-6))
    };
    let mut lo = T::zero();
    let ratio = lit::<T>((5.0f64.sqrt() - 1.0) / 2.0);
    let f = |y: T| mean_absolute_deviation(m, y, cfg);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > lit(1e-10) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let argmin = (lo + hi) * lit(0.5);
    Ok(MeanMedianCheck {
        rho_value,
        min_value: f(argmin)?,
        argmin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadratureConfig<f64> {
        QuadratureConfig::default()
    }

    #[test]
    fn identity_returns_mean() {
        let m = LossModel::exponential(1.0).unwrap();
        let v = rho(&Distortion::identity(), &m, &cfg()).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        let c = LossModel::constant(3.0).unwrap();
        assert_eq!(rho(&Distortion::identity(), &c, &cfg()).unwrap(), 3.0);
    }

    #[test]
    fn gini_and_mean_median_of_exponential() {
        let m = LossModel::exponential(1.0).unwrap();
        let g = rho(&Distortion::GiniDeviation, &m, &cfg()).unwrap();
        assert!((g - 0.5).abs() < 1e-9);
        let mm = rho(&Distortion::MeanMedianDeviation, &m, &cfg()).unwrap();
        assert!((mm - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn premium_examples() {
        let m = LossModel::exponential(1.0).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::GiniDeviation).unwrap();
        let zero = premium(&pp, &Indemnity::Zero, &m, &cfg()).unwrap();
        assert_eq!(zero.premium, 0.0);
        let full = premium(&pp, &Indemnity::Full, &m, &cfg()).unwrap();
        assert!((full.premium - 1.6).abs() < 1e-9);
        assert!((full.loading_part - 1.1).abs() < 1e-9);
        assert!((full.deviation_part - 0.5).abs() < 1e-9);
        let plain = PremiumPrinciple::new(0.0, Distortion::zero()).unwrap();
        let ded = premium(&plain, &Indemnity::Deductible { d: 1.0 }, &m, &cfg()).unwrap();
        assert!((ded.premium - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn premium_rejects_out_of_ic() {
        let m = LossModel::exponential(1.0).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::GiniDeviation).unwrap();
        let bad = Indemnity::DeductibleCoinsurance { d: 0.0, alpha: 1.2 };
        assert!(matches!(
            premium(&pp, &bad, &m, &cfg()),
            Err(Error::ContractDomain(_))
        ));
    }

    #[test]
    fn discrete_gini_examples() {
        let two = LossModel::discrete(vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        let chk = gini_cross_check(&two, 1000, 42, &cfg()).unwrap();
        assert!((chk.rho_value - 0.5).abs() < 1e-15);
        let at0 = LossModel::discrete(vec![0.0], vec![1.0]).unwrap();
        let chk = gini_cross_check(&at0, 1000, 42, &cfg()).unwrap();
        assert_eq!(chk.rho_value, 0.0);
        assert_eq!(chk.mc_value, 0.0);
        assert_eq!(chk.z_score, 0.0);
    }

    #[test]
    fn signed_discrete_translation() {
        let j = Distortion::LinearPlusGini {
            theta: 0.2,
            alpha: 0.3,
        };
        let ys = [-1.0, 0.5, 2.0];
        let ps = [0.2, 0.5, 0.3];
        let base = rho_discrete(&j, &ys, &ps);
        let shifted: Vec<f64> = ys.iter().map(|y| y - 1.5).collect();
        let moved = rho_discrete(&j, &shifted, &ps);
        assert!((moved - (base - 1.5 * j.value(1.0))).abs() < 1e-14);
    }

    #[test]
    fn premium_weights_sum_to_tail_integral() {
        let m = LossModel::zero_inflated_exponential(0.7, 1.2).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::MeanMedianDeviation).unwrap();
        let pts = [0.0, 0.3, 0.9, 2.0];
        let w = premium_weights(&pp, &m, &pts, &cfg()).unwrap();
        let direct = premium(&pp, &Indemnity::MaxLimit { m: 2.0 }, &m, &cfg())
            .unwrap()
            .premium;
        let total: f64 = w.iter().sum();
        assert!((total - direct).abs() < 1e-9);
        let tail = premium_tail(&pp, &m, 2.0, &cfg()).unwrap();
        let full = premium(&pp, &Indemnity::Full, &m, &cfg()).unwrap().premium;
        assert!((total + tail - full).abs() < 1e-9);
    }
}
