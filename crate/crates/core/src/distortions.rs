//! Distortion functions, the canonical form of a distortion-deviation
//! premium principle, and stochastic-order comparisons between distortions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{clamp, lit, to_f64, Scalar};

/// Grid used by the sampled concavity and convexity tests.
pub const SHAPE_GRID: usize = 1001;
/// Slack allowed by the three-point shape tests.
pub const SHAPE_TOL: f64 = 1e-12;

/// A map `j: [0,1] -> R+` with `j(0) = 0`.
///
/// Seller-side kinds are concave (possibly non-monotone); `ConvexDualPower`
/// is the buyer's convex weighting `b(p) = 1 - (1-p)^a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Distortion<T> {
    /// `slope * p`
    Linear { slope: T },
    /// `(1+theta) p^c`, `0 < c < 1`
    Power { theta: T, c: T },
    /// `(1+theta) (1 - (1-p)^c)`, `c > 1`
    DualPower { theta: T, c: T },
    /// `p - p^2`
    GiniDeviation,
    /// `min(p, 1-p)`
    MeanMedianDeviation,
    /// `(1+theta) p + alpha (p - p^2)`
    LinearPlusGini { theta: T, alpha: T },
    /// `(1+theta) p + alpha min(p, 1-p)`
    LinearPlusMeanMedian { theta: T, alpha: T },
    /// `1 - (1-p)^a`, `0 < a < 1`
    ConvexDualPower { a: T },
    /// Piecewise-linear interpolation of `values` at `knots`.
    Tabulated { knots: Vec<T>, values: Vec<T> },
    /// `linear * p + sum(weight_i * j_i(p))`
    Mixture {
        linear: T,
        parts: Vec<MixturePart<T>>,
    },
    /// `1 - j(1-p)`
    Dual { of: Box<Distortion<T>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MixturePart<T> {
    pub weight: T,
    pub distortion: Distortion<T>,
}

impl<T: Scalar> Distortion<T> {
    pub fn identity() -> Self {
        Distortion::Linear { slope: T::one() }
    }

    pub fn zero() -> Self {
        Distortion::Linear { slope: T::zero() }
    }

    /// Checks parameter domains and structural requirements.
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let one = T::one();
        match self {
            Distortion::Linear { slope } => {
                if !slope.is_finite() {
                    return Err(param("linear slope must be finite"));
                }
            }
            Distortion::Power { theta, c } => {
                if !(*theta >= zero) || !(*c > zero && *c < one) {
                    return Err(param("power distortion needs theta >= 0 and 0 < c < 1"));
                }
            }
            Distortion::DualPower { theta, c } => {
                if !(*theta >= zero) || !(*c > one) || !c.is_finite() {
                    return Err(param("dual-power distortion needs theta >= 0 and c > 1"));
                }
            }
            Distortion::GiniDeviation | Distortion::MeanMedianDeviation => {}
            Distortion::LinearPlusGini { theta, alpha }
            | Distortion::LinearPlusMeanMedian { theta, alpha } => {
                if !(*theta > -one) || !(*alpha >= zero) {
                    return Err(param("loading needs theta > -1 and alpha >= 0"));
                }
            }
            Distortion::ConvexDualPower { a } => {
                if !(*a > zero && *a < one) {
                    return Err(param("convex dual-power distortion needs 0 < a < 1"));
                }
            }
            Distortion::Tabulated { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return Err(param(
                        "tabulated distortion needs matching knots and values, at least two",
                    ));
                }
                if knots[0] != zero || knots[knots.len() - 1] != one {
                    return Err(param("tabulated knots must start at 0 and end at 1"));
                }
                if knots.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(param("tabulated knots must be strictly increasing"));
                }
                if values.iter().any(|v| !(*v >= zero) || !v.is_finite()) {
                    return Err(param("tabulated values must be finite and non-negative"));
                }
                if values[0] != zero {
                    return Err(param("tabulated distortion must vanish at 0"));
                }
            }
            Distortion::Mixture { linear, parts } => {
                if !linear.is_finite() {
                    return Err(param("mixture linear coefficient must be finite"));
                }
                for part in parts {
                    if !part.weight.is_finite() {
                        return Err(param("mixture weights must be finite"));
                    }
                    part.distortion.validate()?;
                }
            }
            Distortion::Dual { of } => of.validate()?,
        }
        Ok(())
    }

    /// `j(p)`, rejecting arguments outside `[0, 1]`.
    pub fn eval(&self, p: T) -> Result<T> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::Domain {
                value: to_f64(p),
                domain: "[0, 1]",
            });
        }
        Ok(self.value(p))
    }

    /// `j(p)` with `p` clamped into `[0, 1]`.
    pub fn value(&self, p: T) -> T {
        let one = T::one();
        let p = clamp(p, T::zero(), one);
        match self {
            Distortion::Linear { slope } => *slope * p,
            Distortion::Power { theta, c } => (one + *theta) * p.powf(*c),
            Distortion::DualPower { theta, c } => (one + *theta) * (one - (one - p).powf(*c)),
            Distortion::GiniDeviation => p - p * p,
            Distortion::MeanMedianDeviation => p.min(one - p),
            Distortion::LinearPlusGini { theta, alpha } => {
                (one + *theta) * p + *alpha * (p - p * p)
            }
            Distortion::LinearPlusMeanMedian { theta, alpha } => {
                (one + *theta) * p + *alpha * p.min(one - p)
            }
            Distortion::ConvexDualPower { a } => one - (one - p).powf(*a),
            Distortion::Tabulated { knots, values } => interpolate(knots, values, p),
            Distortion::Mixture { linear, parts } => parts.iter().fold(*linear * p, |acc, part| {
                acc + part.weight * part.distortion.value(p)
            }),
            Distortion::Dual { of } => of.dual_value(p),
        }
    }

    /// `1 - j(1-p)`, with the closed forms used where `1 - p` would lose digits.
    pub fn dual_value(&self, p: T) -> T {
        let one = T::one();
        let p = clamp(p, T::zero(), one);
        match self {
            Distortion::Linear { slope } if *slope == one => p,
            Distortion::ConvexDualPower { a } => p.powf(*a),
            Distortion::Dual { of } => of.value(p),
            _ => one - self.value(one - p),
        }
    }

    /// Derivative `j'(p)`. At a kink the left derivative is returned
    /// (at `p = 0` the right one); tabulated kinds use the segment slope.
    pub fn derivative(&self, p: T) -> T {
        let one = T::one();
        let two = lit::<T>(2.0);
        let half = lit::<T>(0.5);
        let p = clamp(p, T::zero(), one);
        match self {
            Distortion::Linear { slope } => *slope,
            Distortion::Power { theta, c } => (one + *theta) * *c * p.powf(*c - one),
            Distortion::DualPower { theta, c } => (one + *theta) * *c * (one - p).powf(*c - one),
            Distortion::GiniDeviation => one - two * p,
            Distortion::MeanMedianDeviation => {
                if p <= half {
                    one
                } else {
                    -one
                }
            }
            Distortion::LinearPlusGini { theta, alpha } => one + *theta + *alpha * (one - two * p),
            Distortion::LinearPlusMeanMedian { theta, alpha } => {
                one + *theta + if p <= half { *alpha } else { -*alpha }
            }
            Distortion::ConvexDualPower { a } => *a * (one - p).powf(*a - one),
            Distortion::Tabulated { knots, values } => segment_slope(knots, values, p),
            Distortion::Mixture { linear, parts } => parts.iter().fold(*linear, |acc, part| {
                acc + part.weight * part.distortion.derivative(p)
            }),
            Distortion::Dual { of } => of.dual_derivative(p),
        }
    }

    /// Derivative of `p -> 1 - j(1-p)`, i.e. `j'(1-p)`.
    pub fn dual_derivative(&self, p: T) -> T {
        let one = T::one();
        let p = clamp(p, T::zero(), one);
        match self {
            Distortion::ConvexDualPower { a } => *a * p.powf(*a - one),
            Distortion::Dual { of } => of.derivative(p),
            _ => self.derivative(one - p),
        }
    }

    /// Second derivative; zero on linear pieces and at kinks.
    pub fn second_derivative(&self, p: T) -> T {
        let one = T::one();
        let two = lit::<T>(2.0);
        let p = clamp(p, T::zero(), one);
        match self {
            Distortion::Linear { .. }
            | Distortion::MeanMedianDeviation
            | Distortion::LinearPlusMeanMedian { .. }
            | Distortion::Tabulated { .. } => T::zero(),
            Distortion::Power { theta, c } => (one + *theta) * *c * (*c - one) * p.powf(*c - two),
            Distortion::DualPower { theta, c } => {
                -(one + *theta) * *c * (*c - one) * (one - p).powf(*c - two)
            }
            Distortion::GiniDeviation => -two,
            Distortion::LinearPlusGini { alpha, .. } => -two * *alpha,
            Distortion::ConvexDualPower { a } => -*a * (*a - one) * (one - p).powf(*a - two),
            Distortion::Mixture { parts, .. } => parts.iter().fold(T::zero(), |acc, part| {
                acc + part.weight * part.distortion.second_derivative(p)
            }),
            Distortion::Dual { of } => -of.second_derivative(one - p),
        }
    }

    /// Interior points of `[0,1]` where the derivative jumps.
    pub fn kinks(&self) -> Vec<T> {
        let mut out = match self {
            Distortion::MeanMedianDeviation | Distortion::LinearPlusMeanMedian { .. } => {
                vec![lit(0.5)]
            }
            Distortion::Tabulated { knots, .. } => knots[1..knots.len() - 1].to_vec(),
            Distortion::Mixture { parts, .. } => parts
                .iter()
                .flat_map(|part| part.distortion.kinks())
                .collect(),
            Distortion::Dual { of } => of.kinks().into_iter().map(|p| T::one() - p).collect(),
            _ => Vec::new(),
        };
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// Sampled three-point concavity test on `grid_n` equally spaced points.
    pub fn is_concave(&self, grid_n: usize, tol: T) -> bool {
        self.first_shape_violation(grid_n, tol, true).is_none()
    }

    pub fn is_convex(&self, grid_n: usize, tol: T) -> bool {
        self.first_shape_violation(grid_n, tol, false).is_none()
    }

    fn first_shape_violation(&self, grid_n: usize, tol: T, concave: bool) -> Option<T> {
        let grid = unit_grid::<T>(grid_n.max(3));
        let vals: Vec<T> = grid.iter().map(|&p| self.value(p)).collect();
        for i in 1..grid.len() - 1 {
            let (p1, p2, p3) = (grid[i - 1], grid[i], grid[i + 1]);
            let w = (p2 - p1) / (p3 - p1);
            let chord = vals[i - 1] + w * (vals[i + 1] - vals[i - 1]);
            let gap = vals[i] - chord;
            let bad = if concave { gap < -tol } else { gap > tol };
            if bad {
                return Some(p2);
            }
        }
        None
    }

    /// Smallest probability `p` with `j(p) >= level`, searched on `(0, 1]`.
    /// Used to place truncation points for tail integrals.
    pub fn tail_probability(&self, level: T) -> T {
        let one = T::one();
        if self.value(one).abs() <= level {
            return level;
        }
        // bisection on log10(p)
        let floor = to_f64(T::min_positive_value().log10()) + 1.0;
        let mut lo = lit::<T>(floor.max(-300.0));
        let mut hi = T::zero();
        let ten = lit::<T>(10.0);
        if self.value(ten.powf(lo)).abs() > level {
            return ten.powf(lo);
        }
        for _ in 0..200 {
            let mid = (lo + hi) / lit(2.0);
            if self.value(ten.powf(mid)).abs() > level {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < lit(1e-6) {
                break;
            }
        }
        ten.powf(lo)
    }
}

fn param(msg: &str) -> Error {
    Error::Parameter(msg.to_string())
}

pub(crate) fn unit_grid<T: Scalar>(n: usize) -> Vec<T> {
    let denom = T::from_usize(n - 1).unwrap();
    (0..n)
        .map(|i| {
            if i == n - 1 {
                T::one()
            } else {
                T::from_usize(i).unwrap() / denom
            }
        })
        .collect()
}

fn locate<T: Scalar>(knots: &[T], p: T) -> usize {
    // index i with knots[i] <= p < knots[i+1], clamped to the last segment
    let n = knots.len();
    match knots.binary_search_by(|k| k.partial_cmp(&p).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    }
}

fn interpolate<T: Scalar>(knots: &[T], values: &[T], p: T) -> T {
    let i = locate(knots, p);
    let w = (p - knots[i]) / (knots[i + 1] - knots[i]);
    values[i] + w * (values[i + 1] - values[i])
}

fn segment_slope<T: Scalar>(knots: &[T], values: &[T], p: T) -> T {
    let mut i = locate(knots, p);
    // left derivative at interior knots
    if i > 0 && p == knots[i] {
        i -= 1;
    }
    (values[i + 1] - values[i]) / (knots[i + 1] - knots[i])
}

/// Canonical form `(1+theta) p + k(p)` of a distortion-deviation premium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PremiumPrinciple<T> {
    pub theta: T,
    pub k: Distortion<T>,
}

impl<T: Scalar> PremiumPrinciple<T> {
    /// Builds a principle from its canonical parts, checking that `k` is a
    /// concave deviation distortion and that `tk` is concave and non-negative.
    pub fn new(theta: T, k: Distortion<T>) -> Result<Self> {
        let pp = PremiumPrinciple { theta, k };
        pp.validate()?;
        Ok(pp)
    }

    pub fn validate(&self) -> Result<()> {
        let one = T::one();
        let tol = lit::<T>(SHAPE_TOL);
        if !(self.theta > -one) || !self.theta.is_finite() {
            return Err(Error::InvalidPrinciple(format!(
                "loading theta = {} must exceed -1",
                self.theta
            )));
        }
        self.k.validate()?;
        let (k0, k1) = (self.k.value(T::zero()), self.k.value(one));
        if k0.abs() > tol || k1.abs() > tol {
            return Err(Error::InvalidPrinciple(format!(
                "deviation distortion must vanish at 0 and 1 (k(0) = {k0}, k(1) = {k1})"
            )));
        }
        if !self.k.is_concave(SHAPE_GRID, tol) {
            return Err(Error::InvalidPrinciple(
                "deviation distortion is not concave".into(),
            ));
        }
        let grid = unit_grid::<T>(SHAPE_GRID);
        if grid.iter().any(|&p| self.tk(p) < -tol) {
            return Err(Error::InvalidPrinciple(
                "effective seller distortion is negative".into(),
            ));
        }
        Ok(())
    }

    /// Splits `g + h` into a linear loading and a deviation distortion.
    pub fn canonical_decompose(g: &Distortion<T>, h: &Distortion<T>) -> Result<Self> {
        let one = T::one();
        let tol = lit::<T>(SHAPE_TOL);
        g.validate()?;
        h.validate()?;
        let g1 = g.value(one);
        if !(g1 > T::zero()) {
            return Err(Error::InvalidPrinciple(format!(
                "g(1) = {g1} must be positive"
            )));
        }
        if h.value(T::zero()).abs() > tol || h.value(one).abs() > tol {
            return Err(Error::InvalidPrinciple("h must vanish at 0 and 1".into()));
        }
        let grid = unit_grid::<T>(SHAPE_GRID);
        if grid.windows(2).any(|w| g.value(w[1]) < g.value(w[0]) - tol) {
            return Err(Error::InvalidPrinciple("g must be non-decreasing".into()));
        }
        let theta = g1 - one;
        let k = match (g, h) {
            (Distortion::Linear { .. }, Distortion::Linear { slope }) if *slope == T::zero() => {
                Distortion::zero()
            }
            _ => Distortion::Mixture {
                linear: -(one + theta),
                parts: vec![
                    MixturePart {
                        weight: one,
                        distortion: g.clone(),
                    },
                    MixturePart {
                        weight: one,
                        distortion: h.clone(),
                    },
                ],
            },
        };
        if let Some(p) = grid.iter().find(|&&p| k.value(p) < -tol) {
            return Err(Error::InconsistentInputs(format!(
                "deviation part negative at p = {p}"
            )));
        }
        Self::new(theta, k)
    }

    /// Canonical form of a seller distortion `tk` used on its own.
    pub fn from_seller(tk: &Distortion<T>) -> Result<Self> {
        Self::canonical_decompose(tk, &Distortion::zero())
    }

    /// `tk(p) = (1+theta) p + k(p)`
    pub fn tk(&self, p: T) -> T {
        (T::one() + self.theta) * clamp(p, T::zero(), T::one()) + self.k.value(p)
    }

    pub fn tk_derivative(&self, p: T) -> T {
        T::one() + self.theta + self.k.derivative(p)
    }

    pub fn tk_second_derivative(&self, p: T) -> T {
        self.k.second_derivative(p)
    }

    /// `tk` as a standalone distortion.
    pub fn seller_distortion(&self) -> Distortion<T> {
        Distortion::Mixture {
            linear: T::one() + self.theta,
            parts: vec![MixturePart {
                weight: T::one(),
                distortion: self.k.clone(),
            }],
        }
    }
}

/// Buyer's convex probability weighting `b` and its dual `tb(p) = 1 - b(1-p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BuyerDual<T> {
    pub b: Distortion<T>,
}

impl<T: Scalar> BuyerDual<T> {
    /// Accepts `b` if `b(0)=0`, `b(1)=1`, and `b` is strictly increasing and convex.
    pub fn new(b: Distortion<T>) -> Result<Self> {
        Self::with_override(b, false)
    }

    /// As [`BuyerDual::new`]; `allow_nonconvex` skips the convexity test.
    pub fn with_override(b: Distortion<T>, allow_nonconvex: bool) -> Result<Self> {
        let one = T::one();
        let tol = lit::<T>(SHAPE_TOL);
        b.validate()?;
        if b.value(T::zero()).abs() > tol || (b.value(one) - one).abs() > tol {
            return Err(Error::Parameter(
                "buyer distortion must satisfy b(0)=0 and b(1)=1".into(),
            ));
        }
        let grid = unit_grid::<T>(SHAPE_GRID);
        if grid.windows(2).any(|w| !(b.value(w[1]) > b.value(w[0]))) {
            return Err(Error::Parameter(
                "buyer distortion must be strictly increasing".into(),
            ));
        }
        if !allow_nonconvex && !b.is_convex(SHAPE_GRID, tol) {
            return Err(Error::Parameter("buyer distortion must be convex".into()));
        }
        Ok(BuyerDual { b })
    }

    pub fn identity() -> Self {
        BuyerDual {
            b: Distortion::identity(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.b, Distortion::Linear { slope } if slope == T::one())
    }

    pub fn tb(&self, p: T) -> T {
        self.b.dual_value(p)
    }

    pub fn tb_derivative(&self, p: T) -> T {
        self.b.dual_derivative(p)
    }

    pub fn tb_second_derivative(&self, p: T) -> T {
        -self.b.second_derivative(T::one() - p)
    }

    /// `tb` as a standalone distortion.
    pub fn dual_distortion(&self) -> Distortion<T> {
        match &self.b {
            Distortion::Linear { slope } if *slope == T::one() => Distortion::identity(),
            Distortion::ConvexDualPower { a } => Distortion::Power {
                theta: T::zero(),
                c: *a,
            },
            other => Distortion::Dual {
                of: Box::new(other.clone()),
            },
        }
    }
}

/// Stochastic orders between distortions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// `j1 <= j2` pointwise.
    Fsd,
    /// `j1 / j2` non-decreasing.
    Hr,
    /// `j1' / j2'` non-decreasing.
    Lr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OrderCheck<T> {
    pub holds: bool,
    pub fails_at: Option<T>,
}

const FSD_TOL: f64 = 1e-10;
const RATIO_SLACK: f64 = 1e-9;

/// Tests `j1 <= j2` in the requested order on a uniform grid of `grid_n` points.
pub fn check_order<T: Scalar>(
    j1: &Distortion<T>,
    j2: &Distortion<T>,
    order: Order,
    grid_n: usize,
) -> Result<OrderCheck<T>> {
    if grid_n < 3 {
        return Err(Error::Parameter("order checks need grid_n >= 3".into()));
    }
    let grid = unit_grid::<T>(grid_n);
    match order {
        Order::Fsd => {
            let tol = lit::<T>(FSD_TOL);
            let fails_at = grid
                .iter()
                .copied()
                .find(|&p| j1.value(p) > j2.value(p) + tol);
            Ok(OrderCheck {
                holds: fails_at.is_none(),
                fails_at,
            })
        }
        Order::Hr => {
            let ratios: Vec<(T, T)> = grid[1..grid_n - 1]
                .iter()
                .filter_map(|&p| {
                    let den = j2.value(p);
                    (den > T::zero()).then(|| (p, j1.value(p) / den))
                })
                .collect();
            monotone_ratio(ratios, "j2 vanishes on the whole interior")
        }
        Order::Lr => {
            let step = T::one() / T::from_usize(grid_n).unwrap();
            let ratios: Vec<(T, T)> = grid[1..grid_n - 1]
                .iter()
                .filter_map(|&p| {
                    let d2 = order_derivative(j2, p, step);
                    (d2 > T::zero()).then(|| (p, order_derivative(j1, p, step) / d2))
                })
                .collect();
            monotone_ratio(ratios, "j2' vanishes on the whole interior")
        }
    }
}

/// Analytic derivative for catalog kinds; centered differences with step
/// `step` wherever a tabulated piece is involved.
fn order_derivative<T: Scalar>(j: &Distortion<T>, p: T, step: T) -> T {
    if contains_tabulated(j) {
        let lo = (p - step).max(T::zero());
        let hi = (p + step).min(T::one());
        (j.value(hi) - j.value(lo)) / (hi - lo)
    } else {
        j.derivative(p)
    }
}

fn contains_tabulated<T: Scalar>(j: &Distortion<T>) -> bool {
    match j {
        Distortion::Tabulated { .. } => true,
        Distortion::Mixture { parts, .. } => {
            parts.iter().any(|p| contains_tabulated(&p.distortion))
        }
        Distortion::Dual { of } => contains_tabulated(of),
        _ => false,
    }
}

fn monotone_ratio<T: Scalar>(ratios: Vec<(T, T)>, empty_msg: &str) -> Result<OrderCheck<T>> {
    if ratios.is_empty() {
        return Err(Error::IndeterminateOrder(empty_msg.to_string()));
    }
    let slack = lit::<T>(RATIO_SLACK);
    for w in ratios.windows(2) {
        let (r0, r1) = (w[0].1, w[1].1);
        let scale = r0.abs().max(r1.abs());
        if r1 < r0 - slack * scale {
            return Ok(OrderCheck {
                holds: false,
                fails_at: Some(w[1].0),
            });
        }
    }
    Ok(OrderCheck {
        holds: true,
        fails_at: None,
    })
}
