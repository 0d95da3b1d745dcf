//! Distributions of the non-negative loss `X`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Distribution of a non-negative loss with finite mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum LossModel<T> {
    /// Mass `1-q` at zero, density `q lambda e^{-lambda x}` on `x > 0`.
    ZeroInflatedExponential { q: T, lambda: T },
    /// Finitely many atoms.
    Discrete { atoms: Vec<T>, probs: Vec<T> },
    /// Mass `1-q` at zero and a piecewise-linear density on `(0, M]`,
    /// rescaled so that it carries total mass `q`.
    TruncatedDensity {
        q: T,
        knots: Vec<T>,
        density: Vec<T>,
    },
}

impl<T: Scalar> LossModel<T> {
    pub fn zero_inflated_exponential(q: T, lambda: T) -> Result<Self> {
        let m = LossModel::ZeroInflatedExponential { q, lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential(lambda: T) -> Result<Self> {
        Self::zero_inflated_exponential(T::one(), lambda)
    }

    pub fn discrete(atoms: Vec<T>, probs: Vec<T>) -> Result<Self> {
        let m = LossModel::Discrete { atoms, probs };
        m.validate()?;
        Ok(m)
    }

    pub fn constant(value: T) -> Result<Self> {
        Self::discrete(vec![value], vec![T::one()])
    }

    pub fn truncated_density(q: T, knots: Vec<T>, density: Vec<T>) -> Result<Self> {
        let m = LossModel::TruncatedDensity { q, knots, density };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let one = T::one();
        match self {
            LossModel::ZeroInflatedExponential { q, lambda } => {
                if !(*q > zero && *q <= one) || !(*lambda > zero) || !lambda.is_finite() {
                    return Err(param(
                        "zero-inflated exponential needs 0 < q <= 1 and lambda > 0",
                    ));
                }
            }
            LossModel::Discrete { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return Err(param(
                        "discrete model needs matching, non-empty atoms and probs",
                    ));
                }
                if atoms.iter().any(|a| !(*a >= zero) || !a.is_finite()) {
                    return Err(param("atoms must be finite and non-negative"));
                }
                if atoms.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(param("atoms must be strictly increasing"));
                }
                if probs.iter().any(|p| !(*p >= zero)) {
                    return Err(param("probabilities must be non-negative"));
                }
                let total: T = probs.iter().copied().sum();
                if (total - one).abs() > lit(1e-12) {
                    return Err(param("probabilities must sum to 1"));
                }
            }
            LossModel::TruncatedDensity { q, knots, density } => {
                if !(*q > zero && *q <= one) {
                    return Err(param("truncated density needs 0 < q <= 1"));
                }
                if knots.len() < 2 || knots.len() != density.len() {
                    return Err(param(
                        "truncated density needs matching knots and density, at least two",
                    ));
                }
                if knots[0] != zero || !knots[knots.len() - 1].is_finite() {
                    return Err(param("density knots must start at 0 and end at a finite M"));
                }
                if knots.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(param("density knots must be strictly increasing"));
                }
                if density.iter().any(|f| !(*f >= zero) || !f.is_finite()) {
                    return Err(param("density values must be finite and non-negative"));
                }
                if !(self.raw_mass() > zero) {
                    return Err(param("density table carries no mass"));
                }
            }
        }
        Ok(())
    }

    fn raw_mass(&self) -> T {
        match self {
            LossModel::TruncatedDensity { knots, density, .. } => (0..knots.len() - 1)
                .map(|i| (knots[i + 1] - knots[i]) * (density[i] + density[i + 1]) / lit(2.0))
                .sum(),
            _ => T::one(),
        }
    }

    /// Multiplier turning the tabulated density into one of mass `q`.
    fn density_scale(&self) -> T {
        match self {
            LossModel::TruncatedDensity { q, .. } => *q / self.raw_mass(),
            _ => T::one(),
        }
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: T) -> T {
        let zero = T::zero();
        if x < zero {
            return T::one();
        }
        match self {
            LossModel::ZeroInflatedExponential { q, lambda } => *q * (-*lambda * x).exp(),
            LossModel::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .filter(|(a, _)| **a > x)
                .map(|(_, p)| *p)
                .sum(),
            LossModel::TruncatedDensity { q, knots, density } => {
                let n = knots.len();
                if x >= knots[n - 1] {
                    return zero;
                }
                let scale = self.density_scale();
                let mut s = *q;
                for i in 0..n - 1 {
                    let (a, b) = (knots[i], knots[i + 1]);
                    let h = b - a;
                    if x >= b {
                        s = s - scale * h * (density[i] + density[i + 1]) / lit(2.0);
                    } else {
                        let u = x - a;
                        let slope = (density[i + 1] - density[i]) / h;
                        s = s - scale * (density[i] * u + slope * u * u / lit(2.0));
                        break;
                    }
                }
                s.max(zero)
            }
        }
    }

    /// `P(X >= x)`, the left limit of the survival function.
    pub fn survival_left(&self, x: T) -> T {
        match self {
            LossModel::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .filter(|(a, _)| **a >= x)
                .map(|(_, p)| *p)
                .sum(),
            _ => {
                if x <= T::zero() {
                    T::one()
                } else {
                    self.survival(x)
                }
            }
        }
    }

    pub fn cdf(&self, x: T) -> T {
        T::one() - self.survival(x)
    }

    /// `inf{t >= 0 : S(t) <= p}`; `p = 0` gives the support bound.
    pub fn quantile(&self, p: T) -> T {
        let zero = T::zero();
        let p = p.max(zero).min(T::one());
        match self {
            LossModel::ZeroInflatedExponential { q, lambda } => {
                if p >= *q {
                    zero
                } else if p <= zero {
                    T::infinity()
                } else {
                    (*q / p).ln() / *lambda
                }
            }
            LossModel::Discrete { atoms, .. } => {
                if self.survival(zero) <= p {
                    return zero;
                }
                atoms
                    .iter()
                    .copied()
                    .find(|&a| self.survival(a) <= p)
                    .unwrap_or(atoms[atoms.len() - 1])
                    .max(zero)
            }
            LossModel::TruncatedDensity { knots, density, .. } => {
                if self.survival(zero) <= p {
                    return zero;
                }
                let scale = self.density_scale();
                let n = knots.len();
                let mut s_left = self.survival(zero);
                for i in 0..n - 1 {
                    let (a, b) = (knots[i], knots[i + 1]);
                    let s_right = self.survival(b);
                    if s_right <= p {
                        // solve S(a + u) = p on this segment
                        let h = b - a;
                        let f0 = scale * density[i];
                        let slope = scale * (density[i + 1] - density[i]) / h;
                        let need = s_left - p;
                        let u = if slope.abs() <= lit::<T>(1e-300) * f0.max(T::one()) {
                            if f0 > zero {
                                need / f0
                            } else {
                                zero
                            }
                        } else {
                            let half = slope / lit(2.0);
                            let disc = (f0 * f0 + lit::<T>(4.0) * half * need).max(zero);
                            // stable root of half*u^2 + f0*u - need = 0
                            lit::<T>(2.0) * need / (f0 + disc.sqrt())
                        };
                        return (a + u.max(zero).min(h)).max(zero);
                    }
                    s_left = s_right;
                }
                knots[n - 1]
            }
        }
    }

    /// Density of the absolutely continuous part; at 0 the right limit.
    pub fn density(&self, x: T) -> T {
        let zero = T::zero();
        if x < zero {
            return zero;
        }
        match self {
            LossModel::ZeroInflatedExponential { q, lambda } => *q * *lambda * (-*lambda * x).exp(),
            LossModel::Discrete { .. } => zero,
            LossModel::TruncatedDensity { knots, density, .. } => {
                let n = knots.len();
                if x > knots[n - 1] {
                    return zero;
                }
                let i = match knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
                    Ok(i) => i.max(1) - 1,
                    Err(i) => i - 1,
                };
                let w = (x - knots[i]) / (knots[i + 1] - knots[i]);
                self.density_scale() * (density[i] + w * (density[i + 1] - density[i]))
            }
        }
    }

    /// Point masses as `(location, probability)`, zero-probability atoms omitted.
    pub fn atoms(&self) -> Vec<(T, T)> {
        let zero = T::zero();
        match self {
            LossModel::ZeroInflatedExponential { q, .. }
            | LossModel::TruncatedDensity { q, .. } => {
                if *q < T::one() {
                    vec![(zero, T::one() - *q)]
                } else {
                    Vec::new()
                }
            }
            LossModel::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > zero)
                .map(|(a, p)| (*a, *p))
                .collect(),
        }
    }

    /// `P(X = 0)`.
    pub fn mass_at_zero(&self) -> T {
        T::one() - self.survival(T::zero())
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, LossModel::Discrete { .. })
    }

    /// Points where the survival function or its derivative jumps.
    pub fn breakpoints(&self) -> Vec<T> {
        match self {
            LossModel::ZeroInflatedExponential { .. } => vec![T::zero()],
            LossModel::Discrete { atoms, .. } => atoms.clone(),
            LossModel::TruncatedDensity { knots, .. } => knots.clone(),
        }
    }

    /// `E X = int_0^inf S(t) dt`, in closed form.
    pub fn mean(&self) -> T {
        match self {
            LossModel::ZeroInflatedExponential { q, lambda } => *q / *lambda,
            LossModel::Discrete { atoms, probs } => {
                atoms.iter().zip(probs).map(|(a, p)| *a * *p).sum()
            }
            LossModel::TruncatedDensity { knots, density, .. } => {
                let scale = self.density_scale();
                (0..knots.len() - 1)
                    .map(|i| {
                        let (a, b) = (knots[i], knots[i + 1]);
                        let h = b - a;
                        // int_a^b x f(x) dx for linear f
                        let (f0, f1) = (density[i], density[i + 1]);
                        scale * h * (f0 * (lit::<T>(2.0) * a + b) + f1 * (a + lit::<T>(2.0) * b))
                            / lit(6.0)
                    })
                    .sum()
            }
        }
    }

    /// Essential infimum of `X`.
    pub fn ess_inf(&self) -> T {
        let zero = T::zero();
        match self {
            LossModel::ZeroInflatedExponential { .. } => zero,
            LossModel::Discrete { .. } => self.atoms().first().map(|a| a.0).unwrap_or(zero),
            LossModel::TruncatedDensity { q, knots, density } => {
                if *q < T::one() {
                    return zero;
                }
                (0..knots.len() - 1)
                    .find(|&i| density[i] > zero || density[i + 1] > zero)
                    .map(|i| knots[i])
                    .unwrap_or(zero)
            }
        }
    }

    /// Right end of the support, possibly infinite.
    pub fn support_bound(&self) -> T {
        match self {
            LossModel::ZeroInflatedExponential { .. } => T::infinity(),
            LossModel::Discrete { atoms, .. } => atoms[atoms.len() - 1],
            LossModel::TruncatedDensity { knots, .. } => knots[knots.len() - 1],
        }
    }

    /// Draws one loss by inverting the survival function.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.gen::<f64>();
        // u in [0,1); map to (0,1] so that quantile never sees p = 0
        self.quantile(lit::<T>(1.0 - u))
    }
}

fn param(msg: &str) -> Error {
    Error::Parameter(msg.to_string())
}
