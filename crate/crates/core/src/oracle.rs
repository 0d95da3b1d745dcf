//! Brute-force certification of optimal indemnities.
//!
//! The contract is discretised as a piecewise-linear function with one free
//! slope per grid cell (the tail beyond the grid shares the last slope). The
//! buyer's distorted measure is lumped onto a few points per cell, which makes
//! the objective an explicit finite sum with closed-form derivatives. It is
//! concave in the slopes, so a projected ascent finds the global optimum at
//! grid resolution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contracts::{Indemnity, PiecewiseLinear};
use crate::distortions::PremiumPrinciple;
use crate::error::{Error, Result};
use crate::loss_models::LossModel;
use crate::quadrature::{integrate, QuadratureConfig};
use crate::rdeu::{buyer_upper_limit, BuyerPreferences};
use crate::riskmetrics::{premium_discrete, premium_tail, premium_weights};
use crate::scalar::{lit, to_f64, Scalar};
use crate::solver::default_grid;

/// Evaluation points per cell for models with a density.
const SUBCELLS: usize = 4;
const MAX_TAIL_PIECES: usize = 4096;
const ARMIJO: f64 = 1e-4;
const BACKTRACKS: usize = 40;
/// Relative tolerance under which two enumerated values count as tied.
const TIE_REL: f64 = 1e-11;
pub const MAX_ATOMS: usize = 3;
pub const MAX_LEVELS: usize = 101;

/// One lump of the buyer's distorted measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalPoint<T> {
    /// Cell holding the point; `None` for mass at zero.
    pub cell: Option<usize>,
    pub x: T,
    /// Distorted probability `tb(S(a)) - tb(S(b))` of the lump.
    pub weight: T,
}

/// Discretised problem: maximise `sum_j W_j u(w - pi(s) - R_j(s))` over `s in [0,1]^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiscreteProblem<T> {
    pub prefs: BuyerPreferences<T>,
    pub knots: Vec<T>,
    /// `int_cell tk(S_X(t)) dt`; the last cell includes the tail.
    pub premium_weights: Vec<T>,
    pub points: Vec<EvalPoint<T>>,
}

/// Objective, gradient and Hessian diagonal at one slope vector.
struct Eval {
    value: f64,
    grad: Vec<f64>,
}

impl<T: Scalar> DiscreteProblem<T> {
    pub fn new(
        prefs: &BuyerPreferences<T>,
        pp: &PremiumPrinciple<T>,
        m: &LossModel<T>,
        n: usize,
        cfg: &QuadratureConfig<T>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(
                "the oracle needs at least two cells".into(),
            ));
        }
        prefs.validate()?;
        pp.validate()?;
        m.validate()?;
        let knots = default_grid(m, n);
        let mut weights = premium_weights(pp, m, &knots, cfg)?;
        weights[n - 1] = weights[n - 1] + premium_tail(pp, m, knots[n], cfg)?;

        let zero = T::zero();
        let tb_s = |x: T| prefs.tb(m.survival(x));
        let mut points = Vec::new();
        for (a, _) in m.atoms() {
            let w = prefs.tb(m.survival_left(a)) - tb_s(a);
            if w <= zero {
                continue;
            }
            let cell = if a <= zero {
                None
            } else {
                Some(knots[1..].iter().position(|&k| a <= k).unwrap_or(n - 1))
            };
            points.push(EvalPoint {
                cell,
                x: a,
                weight: w,
            });
        }
        if m.has_density() {
            let x_max = buyer_upper_limit(prefs, m, cfg).max(knots[n]);
            let sub = T::from_usize(SUBCELLS).unwrap();
            let mut lump = |cell: usize, a: T, b: T, last: bool| -> Result<()> {
                let tb_b = if last { zero } else { tb_s(b) };
                let w = tb_s(a) - tb_b;
                if w <= zero {
                    return Ok(());
                }
                // mean location of the lump under the distorted measure
                let area = integrate(|x| tb_s(x) - tb_b, a, b, cfg)?;
                let x = (a + area / w).max(a).min(b);
                points.push(EvalPoint {
                    cell: Some(cell),
                    x,
                    weight: w,
                });
                Ok(())
            };
            for i in 0..n {
                let h = (knots[i + 1] - knots[i]) / sub;
                for k in 0..SUBCELLS {
                    let a = knots[i] + h * T::from_usize(k).unwrap();
                    let b = if k + 1 == SUBCELLS {
                        knots[i + 1]
                    } else {
                        a + h
                    };
                    lump(i, a, b, false)?;
                }
            }
            if x_max > knots[n] {
                // the tail shares the last slope; lump it at the last cell's width
                let h = knots[n] - knots[n - 1];
                let pieces = to_f64((x_max - knots[n]) / h)
                    .ceil()
                    .clamp(1.0, MAX_TAIL_PIECES as f64) as usize;
                let step = (x_max - knots[n]) / T::from_usize(pieces).unwrap();
                for k in 0..pieces {
                    let a = knots[n] + step * T::from_usize(k).unwrap();
                    let last = k + 1 == pieces;
                    let b = if last { x_max } else { a + step };
                    lump(n - 1, a, b, last)?;
                }
            }
        }
        points.sort_by(|p, q| p.x.partial_cmp(&q.x).unwrap());
        Ok(DiscreteProblem {
            prefs: prefs.clone(),
            knots,
            premium_weights: weights,
            points,
        })
    }

    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    /// Total buyer weight; 1 up to truncation of the tail.
    pub fn total_weight(&self) -> T {
        self.points.iter().map(|p| p.weight).sum()
    }

    pub fn premium(&self, s: &[T]) -> T {
        s.iter()
            .zip(&self.premium_weights)
            .map(|(&a, &c)| a * c)
            .sum()
    }

    /// Indemnity at every evaluation point.
    fn indemnities(&self, s: &[T]) -> Vec<T> {
        let mut cum = vec![T::zero(); s.len() + 1];
        for i in 0..s.len() {
            cum[i + 1] = cum[i] + s[i] * (self.knots[i + 1] - self.knots[i]);
        }
        self.points
            .iter()
            .map(|p| match p.cell {
                None => T::zero(),
                Some(c) => cum[c] + s[c] * (p.x - self.knots[c]),
            })
            .collect()
    }

    pub fn value(&self, s: &[T]) -> Result<T> {
        self.check(s)?;
        let pi = self.premium(s);
        let w = self.prefs.wealth;
        let u = &self.prefs.utility;
        let mut v = T::zero();
        for (p, i) in self.points.iter().zip(self.indemnities(s)) {
            let wealth = w - pi - (p.x - i);
            v = v + p.weight * u.u(wealth)?;
        }
        Ok(v)
    }

    /// `dV/ds_i = -C_i sum_j A_j + h_i sum_{j beyond cell i} A_j + sum_{j in cell i} A_j (x_j - x_i)`
    /// with `A_j = W_j u'(wealth_j)`.
    pub fn gradient(&self, s: &[T]) -> Result<Vec<T>> {
        self.check(s)?;
        Ok(self.sums(s, |u, x| u.u_prime(x)))
    }

    /// Diagonal of the Hessian, the same sums with `u''` and squared factors.
    pub fn hessian_diagonal(&self, s: &[T]) -> Result<Vec<T>> {
        self.check(s)?;
        let n = self.cells();
        let pi = self.premium(s);
        let w = self.prefs.wealth;
        let ind = self.indemnities(s);
        let mut total = T::zero();
        let mut in_cell = vec![T::zero(); n];
        let mut first = vec![T::zero(); n];
        let mut second = vec![T::zero(); n];
        for (p, i) in self.points.iter().zip(ind) {
            let b = p.weight * self.prefs.utility.u_second(w - pi - (p.x - i));
            total = total + b;
            if let Some(c) = p.cell {
                let e = p.x - self.knots[c];
                in_cell[c] = in_cell[c] + b;
                first[c] = first[c] + b * e;
                second[c] = second[c] + b * e * e;
            }
        }
        let mut beyond = T::zero();
        let mut out = vec![T::zero(); n];
        for i in (0..n).rev() {
            let h = self.knots[i + 1] - self.knots[i];
            let c = self.premium_weights[i];
            out[i] = c * c * total - lit::<T>(2.0) * c * (h * beyond + first[i])
                + h * h * beyond
                + second[i];
            beyond = beyond + in_cell[i];
        }
        Ok(out)
    }

    /// `g_i / (h_i sum_j A_j)`: the grid-scale analogue of `L` on each cell.
    pub fn marginal(&self, s: &[T]) -> Result<Vec<T>> {
        let g = self.gradient(s)?;
        let pi = self.premium(s);
        let w = self.prefs.wealth;
        let denom: T = self
            .points
            .iter()
            .zip(self.indemnities(s))
            .map(|(p, i)| p.weight * self.prefs.utility.u_prime(w - pi - (p.x - i)))
            .sum();
        Ok(g.iter()
            .enumerate()
            .map(|(i, &gi)| gi / ((self.knots[i + 1] - self.knots[i]) * denom))
            .collect())
    }

    /// Grid slopes of the interpolant of `contract` at the knots.
    pub fn slopes_of(&self, contract: &Indemnity<T>) -> Vec<T> {
        self.knots
            .windows(2)
            .map(|w| {
                let s = (contract.evaluate(w[1]) - contract.evaluate(w[0])) / (w[1] - w[0]);
                s.max(T::zero()).min(T::one())
            })
            .collect()
    }

    pub fn contract(&self, s: &[T]) -> Result<Indemnity<T>> {
        Ok(Indemnity::PiecewiseLinear(PiecewiseLinear::new(
            self.knots.clone(),
            s.to_vec(),
            *s.last().unwrap(),
        )?))
    }

    fn check(&self, s: &[T]) -> Result<()> {
        if s.len() != self.cells() {
            return Err(Error::InconsistentInputs(format!(
                "{} slopes for {} cells",
                s.len(),
                self.cells()
            )));
        }
        Ok(())
    }

    fn sums<F: Fn(&crate::rdeu::Utility<T>, T) -> T>(&self, s: &[T], f: F) -> Vec<T> {
        let n = self.cells();
        let pi = self.premium(s);
        let w = self.prefs.wealth;
        let ind = self.indemnities(s);
        let mut total = T::zero();
        let mut in_cell = vec![T::zero(); n];
        let mut first = vec![T::zero(); n];
        for (p, i) in self.points.iter().zip(ind) {
            let a = p.weight * f(&self.prefs.utility, w - pi - (p.x - i));
            total = total + a;
            if let Some(c) = p.cell {
                in_cell[c] = in_cell[c] + a;
                first[c] = first[c] + a * (p.x - self.knots[c]);
            }
        }
        let mut beyond = T::zero();
        let mut out = vec![T::zero(); n];
        for i in (0..n).rev() {
            let h = self.knots[i + 1] - self.knots[i];
            out[i] = -self.premium_weights[i] * total + h * beyond + first[i];
            beyond = beyond + in_cell[i];
        }
        out
    }

    /// Full Hessian `sum_j B_j v_ij v_kj` with `v_ij = dI_j/ds_i - C_i`.
    fn hessian(&self, s: &[T]) -> DMatrix<f64> {
        let n = self.cells();
        let pi = self.premium(s);
        let w = self.prefs.wealth;
        let ind = self.indemnities(s);
        let h: Vec<f64> = self.knots.windows(2).map(|k| to_f64(k[1] - k[0])).collect();
        let c: Vec<f64> = self.premium_weights.iter().map(|&v| to_f64(v)).collect();
        let mut out = DMatrix::<f64>::zeros(n, n);
        let mut v = vec![0.0; n];
        for (p, i) in self.points.iter().zip(ind) {
            let b = to_f64(p.weight * self.prefs.utility.u_second(w - pi - (p.x - i)));
            if b == 0.0 {
                continue;
            }
            for k in 0..n {
                let e = match p.cell {
                    Some(cell) if cell > k => h[k],
                    Some(cell) if cell == k => to_f64(p.x - self.knots[k]),
                    _ => 0.0,
                };
                v[k] = e - c[k];
            }
            for r in 0..n {
                let br = b * v[r];
                for col in r..n {
                    out[(r, col)] += br * v[col];
                }
            }
        }
        for r in 0..n {
            for col in 0..r {
                out[(r, col)] = out[(col, r)];
            }
        }
        out
    }

    fn eval(&self, s: &[T]) -> Result<Eval> {
        Ok(Eval {
            value: to_f64(self.value(s)?),
            grad: self.gradient(s)?.into_iter().map(to_f64).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OracleSolution<T> {
    pub knots: Vec<T>,
    pub slopes: Vec<T>,
    pub value: T,
    pub premium: T,
    pub iterations: usize,
    /// Sup norm of the projected gradient step at exit.
    pub stationarity: T,
}

impl<T: Scalar> OracleSolution<T> {
    pub fn contract(&self) -> Result<Indemnity<T>> {
        Ok(Indemnity::PiecewiseLinear(PiecewiseLinear::new(
            self.knots.clone(),
            self.slopes.clone(),
            *self.slopes.last().unwrap(),
        )?))
    }
}

fn project(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Sup norm of `s - P(s + g)`.
fn projected_gap(s: &[f64], g: &[f64]) -> f64 {
    s.iter()
        .zip(g)
        .fold(0.0, |a, (&x, &d)| a.max((project(x + d) - x).abs()))
}

/// Maximises the discretised objective over `[0,1]^n`.
///
/// Each step is a projected ascent step: slopes pinned at a bound by the
/// gradient move along the gradient, the rest along a Newton direction of the
/// concave objective restricted to them; the step length backtracks from 1
/// under the Armijo rule.
pub fn brute_force_solve<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    n: usize,
    iters: usize,
) -> Result<OracleSolution<T>> {
    let problem = DiscreteProblem::new(prefs, pp, m, n, &QuadratureConfig::default())?;
    solve_discrete(&problem, iters)
}

/// Projected ascent on a prepared problem, starting from slopes 1/2.
pub fn solve_discrete<T: Scalar>(
    problem: &DiscreteProblem<T>,
    iters: usize,
) -> Result<OracleSolution<T>> {
    let n = problem.cells();
    let to_t = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| lit::<T>(x)).collect() };
    let mut s = vec![0.5f64; n];
    let mut cur = problem.eval(&to_t(&s))?;
    let mut iterations = 0;
    for _ in 0..iters {
        let gap = projected_gap(&s, &cur.grad);
        let scale = cur.grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gap == 0.0 || scale == 0.0 {
            break;
        }
        iterations += 1;
        let eps = gap.min(1e-6);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                !((s[i] <= eps && cur.grad[i] < 0.0) || (s[i] >= 1.0 - eps && cur.grad[i] > 0.0))
            })
            .collect();
        let mut dir = cur.grad.clone();
        if !free.is_empty() {
            let hess = problem.hessian(&to_t(&s));
            let k = free.len();
            let mut neg = DMatrix::<f64>::from_fn(k, k, |r, c| -hess[(free[r], free[c])]);
            let diag_max = (0..k).fold(0.0f64, |a, i| a.max(neg[(i, i)]));
            // linear utility leaves the curvature at zero; fall back to a long gradient step
            let ridge = if diag_max > 0.0 {
                diag_max * 1e-10
            } else {
                1e-12 * scale.max(1.0)
            };
            for i in 0..k {
                neg[(i, i)] += ridge;
            }
            let rhs = DVector::from_iterator(k, free.iter().map(|&i| cur.grad[i]));
            if let Some(ch) = neg.cholesky() {
                let step = ch.solve(&rhs);
                for (r, &i) in free.iter().enumerate() {
                    dir[i] = step[r];
                }
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..BACKTRACKS {
            let trial: Vec<f64> = s
                .iter()
                .zip(&dir)
                .map(|(&x, &d)| project(x + t * d))
                .collect();
            let gain: f64 = trial
                .iter()
                .zip(&s)
                .zip(&cur.grad)
                .map(|((&a, &b), &g)| g * (a - b))
                .sum();
            if gain <= 0.0 {
                t *= 0.5;
                continue;
            }
            let next = problem.eval(&to_t(&trial))?;
            if next.value >= cur.value + ARMIJO * gain {
                accepted = Some((trial, next));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, next)) = accepted else { break };
        let moved = trial
            .iter()
            .zip(&s)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        s = trial;
        cur = next;
        if moved < 1e-13 {
            break;
        }
    }
    let slopes = to_t(&s);
    Ok(OracleSolution {
        knots: problem.knots.clone(),
        premium: problem.premium(&slopes),
        value: problem.value(&slopes)?,
        slopes,
        iterations,
        stationarity: lit(projected_gap(&s, &cur.grad)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ExhaustiveResult<T> {
    pub knots: Vec<T>,
    pub slopes: Vec<T>,
    pub value: T,
    /// Slope vectors whose value ties the best.
    pub ties: usize,
    /// Distinct indemnity profiles (values at the atoms) among the ties.
    pub distinct_optima: usize,
}

impl<T> ExhaustiveResult<T> {
    pub fn unique(&self) -> bool {
        self.distinct_optima == 1
    }
}

/// Enumerates every slope vector with entries in `{0, 1/(k-1), ..., 1}` on
/// the cells between consecutive atoms of a small discrete loss.
pub fn exhaustive_tiny<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    levels: usize,
) -> Result<ExhaustiveResult<T>> {
    let LossModel::Discrete { .. } = m else {
        return Err(Error::Precondition(
            "exhaustive enumeration needs a discrete loss".into(),
        ));
    };
    m.validate()?;
    prefs.validate()?;
    pp.validate()?;
    let atoms = m.atoms();
    if atoms.len() > MAX_ATOMS || levels > MAX_LEVELS {
        return Err(Error::TooLarge(format!(
            "{} atoms and {levels} levels exceed {MAX_ATOMS} atoms or {MAX_LEVELS} levels",
            atoms.len()
        )));
    }
    if levels < 2 {
        return Err(Error::Parameter(
            "at least two slope levels are needed".into(),
        ));
    }
    let xs: Vec<T> = atoms.iter().map(|a| a.0).collect();
    let probs: Vec<T> = atoms.iter().map(|a| a.1).collect();
    let weights: Vec<T> = xs
        .iter()
        .map(|&a| prefs.tb(m.survival_left(a)) - prefs.tb(m.survival(a)))
        .collect();
    let mut knots = vec![T::zero()];
    knots.extend(&xs);
    let cells = xs.len();
    let step = T::one() / T::from_usize(levels - 1).unwrap();
    let total = levels.pow(cells as u32);

    let mut best: Option<(T, Vec<T>)> = None;
    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; cells];
    for _ in 0..total {
        let slopes: Vec<T> = idx
            .iter()
            .map(|&k| step * T::from_usize(k).unwrap())
            .collect();
        let mut ind = Vec::with_capacity(cells);
        let mut acc = T::zero();
        for i in 0..cells {
            acc = acc + slopes[i] * (knots[i + 1] - knots[i]);
            ind.push(acc);
        }
        let pi = premium_discrete(pp, &ind, &probs);
        let mut v = T::zero();
        for i in 0..cells {
            v = v + weights[i] * prefs.utility.u(prefs.wealth - pi - (xs[i] - ind[i]))?;
        }
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, slopes.clone()));
        }
        values.push((v, ind));
        // odometer
        for k in idx.iter_mut() {
            *k += 1;
            if *k < levels {
                break;
            }
            *k = 0;
        }
    }
    let (value, slopes) = best.unwrap();
    let tol = lit::<T>(TIE_REL) * value.abs().max(T::one());
    let mut profiles: Vec<Vec<T>> = Vec::new();
    let mut ties = 0;
    for (v, ind) in values {
        if value - v > tol {
            continue;
        }
        ties += 1;
        let seen = profiles.iter().any(|p| {
            p.iter()
                .zip(&ind)
                .all(|(a, b)| (*a - *b).abs() <= lit::<T>(1e-12) * T::one().max(b.abs()))
        });
        if !seen {
            profiles.push(ind);
        }
    }
    Ok(ExhaustiveResult {
        knots,
        slopes,
        value,
        ties,
        distinct_optima: profiles.len(),
    })
}

/// Largest gap between the analytic gradient and centred differences with
/// step `h`, relative to the sup norm of the gradient.
pub fn gradient_check<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    s: &[T],
    h: T,
) -> Result<T> {
    if s.iter().any(|&v| v <= h || v >= T::one() - h) {
        return Err(Error::Precondition("slopes must lie in (h, 1-h)".into()));
    }
    let problem = DiscreteProblem::new(prefs, pp, m, s.len(), &QuadratureConfig::default())?;
    gradient_check_on(&problem, s, h)
}

pub fn gradient_check_on<T: Scalar>(problem: &DiscreteProblem<T>, s: &[T], h: T) -> Result<T> {
    let g = problem.gradient(s)?;
    let scale = g.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let mut worst = T::zero();
    let mut probe = s.to_vec();
    for i in 0..s.len() {
        probe[i] = s[i] + h;
        let up = problem.value(&probe)?;
        probe[i] = s[i] - h;
        let down = problem.value(&probe)?;
        probe[i] = s[i];
        let fd = (up - down) / (h + h);
        worst = worst.max((fd - g[i]).abs());
    }
    // a vanishing gradient leaves only roundoff to compare
    let floor = lit::<T>(1e-8) * T::one().max(problem.value(s)?.abs());
    Ok(worst / scale.max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortions::Distortion;
    use crate::rdeu::rdeu_value;
    use crate::rdeu::Utility;
    use crate::riskmetrics::premium;

    fn cara(gamma: f64, w: f64) -> BuyerPreferences<f64> {
        BuyerPreferences::new(Utility::Cara { gamma }, Distortion::identity(), w).unwrap()
    }

    #[test]
    fn weights_sum_to_one() {
        let m = LossModel::zero_inflated_exponential(0.9, 1.0).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::GiniDeviation).unwrap();
        let p = DiscreteProblem::new(&cara(2.0, 5.0), &pp, &m, 50, &QuadratureConfig::default())
            .unwrap();
        assert!((p.total_weight() - 1.0).abs() < 1e-12);
        let d = LossModel::discrete(vec![0.0, 1.0, 4.0], vec![0.2, 0.5, 0.3]).unwrap();
        let p = DiscreteProblem::new(&cara(2.0, 5.0), &pp, &d, 10, &QuadratureConfig::default())
            .unwrap();
        assert!((p.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_value_tracks_exact_rdeu() {
        let m = LossModel::exponential(1.0).unwrap();
        let prefs = BuyerPreferences::new(
            Utility::Cara { gamma: 1.0 },
            Distortion::ConvexDualPower { a: 0.7 },
            5.0,
        )
        .unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Power { theta: 0.1, c: 0.5 }).unwrap();
        let q = QuadratureConfig::default();
        let p = DiscreteProblem::new(&prefs, &pp, &m, 200, &q).unwrap();
        let c: Indemnity<f64> = Indemnity::DeductibleCoinsurance { d: 0.4, alpha: 0.6 };
        let s = p.slopes_of(&c);
        let pi = premium(&pp, &c, &m, &q).unwrap().premium;
        assert!((p.premium(&s) - pi).abs() < 1e-3);
        let exact = rdeu_value(&prefs, &c, pi, &m, &q).unwrap();
        assert!(
            (p.value(&s).unwrap() - exact).abs() < 1e-4,
            "{} vs {exact}",
            p.value(&s).unwrap()
        );
    }

    #[test]
    fn gradient_and_hessian_match_differences() {
        let m = LossModel::zero_inflated_exponential(0.8, 1.5).unwrap();
        let pp = PremiumPrinciple::new(0.2, Distortion::MeanMedianDeviation).unwrap();
        let p = DiscreteProblem::new(&cara(1.5, 4.0), &pp, &m, 12, &QuadratureConfig::default())
            .unwrap();
        let s: Vec<f64> = (0..12).map(|i| 0.2 + 0.05 * i as f64).collect();
        assert!(gradient_check_on(&p, &s, 1e-5).unwrap() < 1e-7);
        let g = p.gradient(&s).unwrap();
        let hd = p.hessian_diagonal(&s).unwrap();
        let full = p.hessian(&s);
        for i in 0..12 {
            let mut up = s.clone();
            up[i] += 1e-6;
            let fd: f64 = (p.gradient(&up).unwrap()[i] - g[i]) / 1e-6;
            assert!(
                (fd - hd[i]).abs() < 1e-5 * hd[i].abs().max(1e-3),
                "{i}: {fd} vs {}",
                hd[i]
            );
            assert!((full[(i, i)] - hd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_utility_loaded_price_buys_nothing() {
        let m = LossModel::discrete(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let prefs = BuyerPreferences::new(Utility::Linear, Distortion::identity(), 1.0).unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Linear { slope: 1.1 }).unwrap();
        let r = brute_force_solve(&prefs, &pp, &m, 4, 200).unwrap();
        assert!(r.slopes.iter().all(|&s| s < 1e-9), "{:?}", r.slopes);
        let e = exhaustive_tiny(&prefs, &pp, &m, 101).unwrap();
        assert_eq!(e.distinct_optima, 1);
        assert_eq!(e.slopes[1], 0.0);
    }

    #[test]
    fn cheap_seller_gives_full_cover() {
        let m = LossModel::exponential(1.0).unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Linear { slope: 0.9 }).unwrap();
        let r = brute_force_solve(&cara(1.0, 10.0), &pp, &m, 40, 200).unwrap();
        assert!(r.slopes.iter().all(|&s| s > 1.0 - 1e-9));
    }

    #[test]
    fn power_family_recovers_coinsurance_slope() {
        let m = LossModel::zero_inflated_exponential(0.9, 1.0).unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Power { theta: 0.1, c: 0.5 }).unwrap();
        let r = brute_force_solve(&cara(2.0, 10.0), &pp, &m, 200, 200).unwrap();
        let c = r.contract().unwrap();
        for x in [3.0, 6.0, 9.0] {
            assert!((c.slope(x) - 0.75).abs() < 1e-2, "x = {x}: {}", c.slope(x));
        }
        assert!(c.slope(0.01) < 1e-2);
    }

    #[test]
    fn single_atom_at_zero_ties_everywhere() {
        let m = LossModel::constant(0.0).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::zero()).unwrap();
        let e = exhaustive_tiny(&cara(1.0, 2.0), &pp, &m, 11).unwrap();
        assert_eq!(e.ties, 11);
        assert_eq!(e.distinct_optima, 1);
        assert!((e.value - Utility::Cara { gamma: 1.0 }.value(2.0)).abs() < 1e-15);
    }

    #[test]
    fn fair_price_with_positive_floor_is_not_unique() {
        let m = LossModel::discrete(vec![2.0, 3.0], vec![0.5, 0.5]).unwrap();
        let fair = PremiumPrinciple::new(0.0, Distortion::zero()).unwrap();
        let e = exhaustive_tiny(&cara(1.0, 5.0), &fair, &m, 21).unwrap();
        assert!(e.distinct_optima > 1);
        let loaded = PremiumPrinciple::new(0.1, Distortion::zero()).unwrap();
        let e = exhaustive_tiny(&cara(1.0, 5.0), &loaded, &m, 21).unwrap();
        assert!(e.unique());
    }

    #[test]
    fn exhaustive_refuses_large_instances() {
        let m = LossModel::discrete(vec![1.0, 2.0, 3.0, 4.0], vec![0.25; 4]).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::zero()).unwrap();
        assert!(matches!(
            exhaustive_tiny(&cara(1.0, 5.0), &pp, &m, 5),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn linear_objective_differences_are_exact() {
        let m = LossModel::discrete(vec![1.0, 2.0], vec![0.5, 0.5]).unwrap();
        let prefs = BuyerPreferences::new(Utility::Linear, Distortion::identity(), 3.0).unwrap();
        let pp = PremiumPrinciple::new(0.2, Distortion::zero()).unwrap();
        let err = gradient_check(&prefs, &pp, &m, &[0.5, 0.5], 1e-4).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn symmetric_atoms_give_equal_gradient_entries() {
        // atoms at the two cell ends carry the same weight and the same exposure
        let m = LossModel::discrete(vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        let pp = PremiumPrinciple::new(0.1, Distortion::zero()).unwrap();
        let p = DiscreteProblem::new(&cara(1.0, 4.0), &pp, &m, 2, &QuadratureConfig::default())
            .unwrap();
        let g = p.gradient(&[0.5, 0.5]).unwrap();
        let (h0, h1) = (p.knots[1] - p.knots[0], p.knots[2] - p.knots[1]);
        assert!((g[0] / h0 - g[1] / h1).abs() < 1e-12);
    }
}
