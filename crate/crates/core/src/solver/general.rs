//! Grid solver for the sign condition on `L`.
//!
//! Stages: a per-cell damped fixed point on the slopes, a semismooth Newton
//! solve of the sign rule on the grid, then free knots where the regime
//! changes, placed by Newton on `L` and the pointwise first-order condition.

use nalgebra::{DMatrix, DVector};

use super::{
    compute_l_with_premium, default_grid, finish_report, verify_optimality, Diagnostics,
    SolveReport, SolverConfig, SolverPath, CLASSIFY_TOL,
};
use crate::contracts::{Indemnity, PiecewiseLinear};
use crate::distortions::PremiumPrinciple;
use crate::error::Result;
use crate::loss_models::LossModel;
use crate::rdeu::{buyer_upper_limit, distorted_windows, integration_points, BuyerPreferences};
use crate::riskmetrics::{premium, premium_tail, premium_weights};
use crate::scalar::{lit, to_f64, Scalar};

/// Step growth of a cell's damping weight when its direction is stable.
const GROWTH: f64 = 1.2;
/// A split leaving less than this fraction of a cell on one side is dropped.
const MERGE: f64 = 0.1;
const NEWTON_ITERS: usize = 40;
const MIN_JUMP: f64 = 1e-2;
/// Closest a free knot gets to its neighbours, relative to the grid span.
const KNOT_MARGIN: f64 = 1e-7;
const BACKTRACKS: usize = 12;
/// Floor of the per-equation scale `tk(S(t))`.
const SCALE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Zero,
    One,
    Frac,
}

#[derive(Clone, Copy, Debug)]
enum Unknown {
    Slope(usize),
    Knot(usize),
}

#[derive(Clone, Debug)]
struct Layout<T> {
    knots: Vec<T>,
    slopes: Vec<T>,
    state: Vec<State>,
}

impl<T: Scalar> Layout<T> {
    fn contract(&self) -> Result<Indemnity<T>> {
        let tail = *self.slopes.last().unwrap();
        Ok(Indemnity::PiecewiseLinear(PiecewiseLinear::new(
            self.knots.clone(),
            self.slopes.clone(),
            tail,
        )?))
    }

    fn midpoints(&self) -> Vec<T> {
        self.knots
            .windows(2)
            .map(|w| (w[0] + w[1]) * lit(0.5))
            .collect()
    }

    /// Whether `L` touches zero at knot `j` rather than crossing it.
    fn touches(&self, j: usize) -> bool {
        self.state[j - 1] == State::Frac || self.state[j] == State::Frac
    }

    /// Interior knots separating cells of different state with a real jump
    /// in slope; the position of the others hardly matters.
    fn free_knots(&self) -> Vec<usize> {
        (1..self.state.len())
            .filter(|&j| {
                self.state[j - 1] != self.state[j]
                    && (self.slopes[j - 1] - self.slopes[j]).abs() > lit(MIN_JUMP)
            })
            .collect()
    }

    fn unknowns(&self) -> Vec<Unknown> {
        let mut out: Vec<Unknown> = (0..self.state.len())
            .filter(|&i| self.state[i] == State::Frac)
            .map(Unknown::Slope)
            .collect();
        out.extend(self.free_knots().into_iter().map(Unknown::Knot));
        out
    }

    fn get(&self, u: &[Unknown]) -> Vec<T> {
        u.iter()
            .map(|k| match *k {
                Unknown::Slope(i) => self.slopes[i],
                Unknown::Knot(j) => self.knots[j],
            })
            .collect()
    }

    /// Writes `vals` back, clipping slopes into `[0, 1]` and keeping knots ordered.
    fn set(&mut self, u: &[Unknown], vals: &[T]) {
        let span = *self.knots.last().unwrap();
        let margin = span * lit(KNOT_MARGIN);
        for (k, &v) in u.iter().zip(vals) {
            match *k {
                Unknown::Slope(i) => self.slopes[i] = v.max(T::zero()).min(T::one()),
                Unknown::Knot(j) => {
                    let lo = self.knots[j - 1] + margin;
                    let hi = self.knots[j + 1] - margin;
                    self.knots[j] = if lo < hi {
                        v.max(lo).min(hi)
                    } else {
                        (lo + hi) * lit(0.5)
                    };
                }
            }
        }
    }
}

struct Problem<'a, T> {
    prefs: &'a BuyerPreferences<T>,
    pp: &'a PremiumPrinciple<T>,
    m: &'a LossModel<T>,
    cfg: &'a SolverConfig<T>,
}

impl<T: Scalar> Problem<'_, T> {
    fn l_at(&self, layout: &Layout<T>, pts: &[T]) -> Result<Vec<T>> {
        let contract = layout.contract()?;
        let pi = premium(self.pp, &contract, self.m, &self.cfg.quadrature)?.premium;
        let lf = compute_l_with_premium(
            &contract,
            self.prefs,
            self.pp,
            self.m,
            pts,
            pi,
            &self.cfg.quadrature,
        )?;
        Ok(lf.l)
    }

    /// Where each equation lives: the cell midpoint for a slope, the knot itself.
    fn points(&self, layout: &Layout<T>, u: &[Unknown]) -> Vec<T> {
        u.iter()
            .map(|k| match *k {
                Unknown::Slope(i) => (layout.knots[i] + layout.knots[i + 1]) * lit(0.5),
                Unknown::Knot(j) => layout.knots[j],
            })
            .collect()
    }

    /// Pointwise first-order condition `u'(W) tb'(S) / D - tk'(S)` at `x`, with its scale.
    fn pointwise(&self, x: T, wealth: T, denom: T) -> (T, T) {
        let s = self.m.survival(x);
        let tkp = self.pp.tk_derivative(s);
        let v = self.prefs.utility.u_prime(wealth) * self.prefs.tb_derivative(s) / denom - tkp;
        (v, tkp.abs().max(lit(SCALE_FLOOR)))
    }

    /// Residual equations of the polish with their row scales: `L` at
    /// midpoints and at knots where `L` crosses zero, the pointwise condition
    /// at knots where it touches zero.
    fn residuals(&self, layout: &Layout<T>, u: &[Unknown]) -> Result<(Vec<T>, Vec<T>)> {
        let contract = layout.contract()?;
        let pi = premium(self.pp, &contract, self.m, &self.cfg.quadrature)?.premium;
        let pts = self.points(layout, u);
        let lf = compute_l_with_premium(
            &contract,
            self.prefs,
            self.pp,
            self.m,
            &pts,
            pi,
            &self.cfg.quadrature,
        )?;
        let floor = lit::<T>(SCALE_FLOOR);
        Ok(u.iter()
            .enumerate()
            .map(|(row, k)| match *k {
                Unknown::Knot(j) if layout.touches(j) => {
                    let t = pts[row];
                    self.pointwise(
                        t,
                        self.prefs.wealth - contract.retention(t) - pi,
                        lf.denominator,
                    )
                }
                _ => (lf.l[row], lf.tk_s[row].max(floor)),
            })
            .unzip())
    }

    /// Residuals for the convergence test (pointwise rows relative) and scaled for Newton.
    fn equations(&self, layout: &Layout<T>, u: &[Unknown]) -> Result<(Vec<T>, Vec<T>)> {
        let (v, sc) = self.residuals(layout, u)?;
        let scaled: Vec<T> = v.iter().zip(&sc).map(|(&a, &b)| a / b).collect();
        let raw = u
            .iter()
            .enumerate()
            .map(|(row, k)| match *k {
                Unknown::Knot(j) if layout.touches(j) => scaled[row],
                _ => v[row],
            })
            .collect();
        Ok((raw, scaled))
    }

    /// Equations and their Jacobian in the unknowns, rows scaled like `equations`.
    ///
    /// With `W(x) = w - pi - x + I(x)`, a slope moves `W` by `e_i(x) - C_i`
    /// (`e_i` the cell's ramp, `C_i` its premium weight) and a free knot by
    /// `(s_left - s_right) (1{x > x_j} - tk(S(x_j)))`; the derivatives of
    /// `N(t) = int_{x>t} u'(W) db(F)` then only need the window moments of
    /// `u''(W)` and `u''(W) x`.
    fn linearize(
        &self,
        layout: &Layout<T>,
        u: &[Unknown],
    ) -> Result<(Vec<T>, Vec<T>, DMatrix<f64>)> {
        let (prefs, pp, m, qc) = (self.prefs, self.pp, self.m, &self.cfg.quadrature);
        let ut = &prefs.utility;
        let contract = layout.contract()?;
        let pi = premium(pp, &contract, m, qc)?.premium;
        let colloc = self.points(layout, u);
        let x_max = buyer_upper_limit(prefs, m, qc);
        let wealth = |x: T| prefs.wealth - contract.retention(x) - pi;
        ut.check_domain(wealth(x_max))?;
        let mut extra = colloc.clone();
        extra.extend_from_slice(&layout.knots);
        let pts = integration_points(m, &contract, &extra, &prefs.b.kinks(), x_max);
        let (head_a, win_a) = distorted_windows(prefs, m, &pts, |x| ut.u_prime(wealth(x)), qc)?;
        let (head_0, win_0) = distorted_windows(prefs, m, &pts, |x| ut.u_second(wealth(x)), qc)?;
        let (_, win_1) = distorted_windows(prefs, m, &pts, |x| ut.u_second(wealth(x)) * x, qc)?;
        let suffix = |w: &[T]| {
            let mut s = vec![T::zero(); w.len() + 1];
            for i in (0..w.len()).rev() {
                s[i] = s[i + 1] + w[i];
            }
            s
        };
        let (sa, s0, s1) = (suffix(&win_a), suffix(&win_0), suffix(&win_1));
        // mass of x > t, splitting a window when t fell between points
        let tail = |sfx: &[T], w: &[T], t: T| -> T {
            if t <= pts[0] {
                return sfx[0];
            }
            if t >= x_max {
                return T::zero();
            }
            let k = pts.partition_point(|&q| q < t);
            if pts[k] == t {
                sfx[k]
            } else {
                sfx[k] + w[k - 1] * (pts[k] - t) / (pts[k] - pts[k - 1])
            }
        };
        let m0 = |t: T| tail(&s0, &win_0, t);
        let m1 = |t: T| tail(&s1, &win_1, t);
        let denom = head_a + sa[0];
        let total_0 = head_0 + s0[0];
        let n = layout.slopes.len();
        let mut weights = premium_weights(pp, m, &layout.knots, qc)?;
        weights[n - 1] = weights[n - 1] + premium_tail(pp, m, layout.knots[n], qc)?;
        let knot = |j: usize| {
            (
                layout.slopes[j - 1] - layout.slopes[j],
                layout.knots[j],
                pp.tk(m.survival(layout.knots[j])),
            )
        };
        // e_i(x), and int_{x>t} u''(W) e_i dmu
        let ramp_at = |i: usize, x: T| -> T {
            let d = (x - layout.knots[i]).max(T::zero());
            if i + 1 == n {
                d
            } else {
                d.min(layout.knots[i + 1] - layout.knots[i])
            }
        };
        let ramp = |i: usize, t: T| -> T {
            let x0 = layout.knots[i];
            let a = t.max(x0);
            if i + 1 == n {
                return m1(a) - x0 * m0(a);
            }
            let x1 = layout.knots[i + 1];
            if t >= x1 {
                return (x1 - x0) * m0(t);
            }
            m1(a) - m1(x1) - x0 * (m0(a) - m0(x1)) + (x1 - x0) * m0(x1)
        };
        let below = layout.knots[0] - T::one();
        let floor = lit::<T>(SCALE_FLOOR);
        let rows = u.len();
        // per row: value, scale, N(t) (for L rows), and whether it is pointwise
        let mut raw = Vec::with_capacity(rows);
        let mut scale = Vec::with_capacity(rows);
        let mut nt = Vec::with_capacity(rows);
        let mut touch = Vec::with_capacity(rows);
        for (row, k) in u.iter().enumerate() {
            let t = colloc[row];
            let is_touch = matches!(*k, Unknown::Knot(j) if layout.touches(j));
            touch.push(is_touch);
            if is_touch {
                let (v, sc) = self.pointwise(t, wealth(t), denom);
                raw.push(v);
                scale.push(sc);
                nt.push(T::zero());
            } else {
                let num = tail(&sa, &win_a, t);
                let tk = pp.tk(m.survival(t));
                raw.push(num / denom - tk);
                scale.push(tk.max(floor));
                nt.push(num);
            }
        }
        // derivative of the denominator per column
        let dd: Vec<T> = u
            .iter()
            .map(|k| match *k {
                Unknown::Slope(i) => ramp(i, below) - weights[i] * total_0,
                Unknown::Knot(j) => {
                    let (jump, xj, tau) = knot(j);
                    jump * (m0(xj) - tau * total_0)
                }
            })
            .collect();
        let mut jac = DMatrix::<f64>::zeros(rows, rows);
        for row in 0..rows {
            let t = colloc[row];
            if touch[row] {
                let s = m.survival(t);
                let w = wealth(t);
                let (up, upp) = (ut.u_prime(w), ut.u_second(w));
                let tbp = prefs.tb_derivative(s);
                let Unknown::Knot(own) = u[row] else {
                    unreachable!()
                };
                for (col, k) in u.iter().enumerate() {
                    let dw = match *k {
                        Unknown::Slope(i) => ramp_at(i, t) - weights[i],
                        Unknown::Knot(j) if j == own => {
                            let (jump, _, tau) = knot(j);
                            layout.slopes[j - 1] - T::one() - jump * tau
                        }
                        Unknown::Knot(j) => {
                            let (jump, xj, tau) = knot(j);
                            let above = if t > xj { T::one() } else { T::zero() };
                            jump * (above - tau)
                        }
                    };
                    let mut d = upp * dw * tbp / denom - up * tbp * dd[col] / (denom * denom);
                    if col == row && m.has_density() {
                        let f = m.density(t);
                        d = d - up * prefs.tb_second_derivative(s) * f / denom
                            + pp.tk_second_derivative(s) * f;
                    }
                    jac[(row, col)] = to_f64(d / scale[row]);
                }
                continue;
            }
            for (col, k) in u.iter().enumerate() {
                let dn = match *k {
                    Unknown::Slope(i) => ramp(i, t) - weights[i] * m0(t),
                    Unknown::Knot(j) => {
                        let (jump, xj, tau) = knot(j);
                        jump * (m0(t.max(xj)) - tau * m0(t))
                    }
                };
                let d = (dn * denom - nt[row] * dd[col]) / (denom * denom);
                jac[(row, col)] = to_f64(d / scale[row]);
            }
            // the equation's own point moves with the knots around it
            let dt = if m.has_density() {
                let f = m.density(t);
                let s = m.survival(t);
                -ut.u_prime(wealth(t)) * prefs.tb_derivative(s) * f / denom
                    + pp.tk_derivative(s) * f
            } else {
                T::zero()
            };
            let mut add = |j: usize, w: f64| {
                if let Some(col) = u
                    .iter()
                    .position(|k| matches!(*k, Unknown::Knot(q) if q == j))
                {
                    jac[(row, col)] += w * to_f64(dt / scale[row]);
                }
            };
            match u[row] {
                Unknown::Slope(i) => {
                    add(i, 0.5);
                    add(i + 1, 0.5);
                }
                Unknown::Knot(j) => add(j, 1.0),
            }
        }
        let scaled: Vec<T> = raw.iter().zip(&scale).map(|(&v, &s)| v / s).collect();
        for row in 0..rows {
            if touch[row] {
                raw[row] = scaled[row];
            }
        }
        Ok((raw, scaled, jac))
    }
}

fn sup<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, x| a.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-cell damped iteration toward the sign rule, halving a cell's weight
/// whenever its direction flips.
fn fixed_point<T: Scalar>(
    p: &Problem<'_, T>,
    layout: &mut Layout<T>,
    history: &mut Vec<T>,
) -> Result<(usize, bool)> {
    let n = layout.slopes.len();
    let cap = p.cfg.damping;
    let band = p.cfg.l_zero_band;
    let mut omega = vec![cap; n];
    // a flip lowers the cell's ceiling for good, so oscillations die out
    let mut ceiling = vec![cap; n];
    let mut last_dir = vec![0i8; n];
    let mids = layout.midpoints();
    let floor = lit::<T>(SCALE_FLOOR);
    // the tie band shrinks where tk(S) is small so the tail still moves
    let bands: Vec<T> = mids
        .iter()
        .map(|&t| band * p.pp.tk(p.m.survival(t)).max(floor).min(T::one()))
        .collect();
    for iter in 0..p.cfg.max_iter {
        let l = p.l_at(layout, &mids)?;
        let mut change = T::zero();
        for i in 0..n {
            let s = layout.slopes[i];
            let target = if l[i] < -bands[i] {
                T::zero()
            } else if l[i] > bands[i] {
                T::one()
            } else {
                s
            };
            let step = target - s;
            let dir: i8 = if step > T::zero() {
                1
            } else if step < T::zero() {
                -1
            } else {
                0
            };
            if dir != 0 && last_dir[i] != 0 && dir != last_dir[i] {
                omega[i] = omega[i] * lit(0.5);
                ceiling[i] = omega[i];
            } else if dir != 0 {
                omega[i] = (omega[i] * lit(GROWTH)).min(ceiling[i]);
            }
            if dir != 0 {
                last_dir[i] = dir;
            }
            let next = s + omega[i] * step;
            change = change.max((next - s).abs());
            layout.slopes[i] = next;
        }
        history.push(change);
        if change < p.cfg.tol {
            return Ok((iter + 1, true));
        }
    }
    Ok((p.cfg.max_iter, false))
}

/// Semismooth Newton on `s_i = clip(s_i + L_i / tk(S(t_i)), 0, 1)` over every
/// cell of the grid; leaves each cell's state set.
fn grid_newton<T: Scalar>(p: &Problem<'_, T>, layout: &mut Layout<T>) -> Result<(usize, bool)> {
    let n = layout.slopes.len();
    let u: Vec<Unknown> = (0..n).map(Unknown::Slope).collect();
    let band = p.cfg.l_zero_band * lit(0.05);
    // residual of the clipped fixed-point map, and which cells sit at a bound
    let phi = |slopes: &[T], raw: &[T], ell: &[T]| -> (Vec<f64>, Vec<Option<T>>, bool) {
        let mut out = Vec::with_capacity(n);
        let mut bound = Vec::with_capacity(n);
        let mut done = true;
        for i in 0..n {
            let z = slopes[i] + ell[i];
            let b = if z <= T::zero() {
                Some(T::zero())
            } else if z >= T::one() {
                Some(T::one())
            } else {
                None
            };
            match b {
                Some(v) => {
                    out.push(to_f64(slopes[i] - v));
                    done &= slopes[i] == v;
                }
                None => {
                    out.push(-to_f64(ell[i]));
                    done &= raw[i].abs() < band;
                }
            }
            bound.push(b);
        }
        (out, bound, done)
    };
    let (mut raw, mut ell, mut jac) = p.linearize(layout, &u)?;
    let mut solved = false;
    let mut iters = 0;
    for _ in 0..NEWTON_ITERS {
        let (f, bound, done) = phi(&layout.slopes, &raw, &ell);
        if done {
            solved = true;
            break;
        }
        iters += 1;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            if bound[i].is_some() {
                a[(i, i)] = 1.0;
            } else {
                for k in 0..n {
                    a[(i, k)] = -jac[(i, k)];
                }
            }
        }
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let step = match a.clone().lu().solve(&rhs) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                let svd = a.svd(true, true);
                let tol = svd.singular_values.max() * 1e-12;
                match svd.solve(&rhs, tol) {
                    Ok(d) => d,
                    Err(_) => break,
                }
            }
        };
        let base = norm2(&f);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..BACKTRACKS {
            let mut trial = layout.clone();
            let xs: Vec<T> = layout
                .slopes
                .iter()
                .zip(step.iter())
                .map(|(&x, &d)| x + lit::<T>(t * d))
                .collect();
            trial.set(&u, &xs);
            let (r, e) = p.equations(&trial, &u)?;
            let (ft, _, _) = phi(&trial.slopes, &r, &e);
            if norm2(&ft) < (1.0 - 1e-4 * t) * base {
                *layout = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (raw, ell, jac) = p.linearize(layout, &u)?;
    }
    let (_, bound, _) = phi(&layout.slopes, &raw, &ell);
    for i in 0..n {
        layout.state[i] = match bound[i] {
            Some(v) if layout.slopes[i] == v && v == T::zero() => State::Zero,
            Some(v) if layout.slopes[i] == v => State::One,
            _ => State::Frac,
        };
    }
    Ok((iters, solved))
}

/// Splits each cell that straddles a change of regime at the point that
/// reproduces its average slope, making that point a free knot.
fn split_transitions<T: Scalar>(layout: &Layout<T>) -> Layout<T> {
    let n = layout.slopes.len();
    let (slopes, state) = (&layout.slopes, &layout.state);
    let fixed_slope = |st: State| {
        if st == State::One {
            T::one()
        } else {
            T::zero()
        }
    };
    let mut out = Layout {
        knots: vec![layout.knots[0]],
        slopes: Vec::new(),
        state: Vec::new(),
    };
    for i in 0..n {
        let (x0, x1) = (layout.knots[i], layout.knots[i + 1]);
        let h = x1 - x0;
        let mut push = |knot: T, s: T, st: State| {
            out.slopes.push(s);
            out.state.push(st);
            out.knots.push(knot);
        };
        if state[i] != State::Frac {
            push(x1, slopes[i], state[i]);
            continue;
        }
        let left = (i > 0 && state[i - 1] != State::Frac).then(|| state[i - 1]);
        let right = (i + 1 < n && state[i + 1] != State::Frac).then(|| state[i + 1]);
        // slope on each side of the split and the state of the two parts
        let parts = match (left, right) {
            (Some(a), Some(b)) if a != b => Some((fixed_slope(a), a, fixed_slope(b), b)),
            (Some(a), None) if i + 1 < n => Some((fixed_slope(a), a, slopes[i + 1], State::Frac)),
            (None, Some(b)) if i > 0 => Some((slopes[i - 1], State::Frac, fixed_slope(b), b)),
            _ => None,
        };
        let Some((sl, stl, sr, str_)) = parts else {
            push(x1, slopes[i], State::Frac);
            continue;
        };
        if sl == sr {
            push(x1, slopes[i], State::Frac);
            continue;
        }
        // slopes[i] * h = sl * w + sr * (h - w)
        let frac = (slopes[i] - sr) / (sl - sr);
        if frac <= lit(MERGE) {
            push(x1, sr, str_);
        } else if frac >= lit(1.0 - MERGE) {
            push(x1, sl, stl);
        } else {
            push(x0 + h * frac, sl, stl);
            push(x1, sr, str_);
        }
    }
    out
}

/// Newton iterations on the free knots and fractional slopes of `layout`.
fn polish<T: Scalar>(p: &Problem<'_, T>, layout: &mut Layout<T>) -> Result<(usize, bool)> {
    let u = layout.unknowns();
    if u.is_empty() {
        return Ok((0, true));
    }
    let band = p.cfg.l_zero_band * lit(0.05);
    let (mut raw, mut scaled, mut jac) = p.linearize(layout, &u)?;
    for iter in 0..NEWTON_ITERS {
        if sup(&raw) < band {
            return Ok((iter, true));
        }
        let f: Vec<f64> = scaled.iter().map(|&v| to_f64(v)).collect();
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let tol = svd.singular_values.max() * 1e-12;
        let Ok(step) = svd.solve(&rhs, tol) else {
            return Ok((iter, false));
        };
        let x0 = layout.get(&u);
        let base = norm2(&f);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..BACKTRACKS {
            let mut trial = layout.clone();
            let xs: Vec<T> = x0
                .iter()
                .zip(step.iter())
                .map(|(&x, &d)| x + lit::<T>(t * d))
                .collect();
            trial.set(&u, &xs);
            let (_, s) = p.equations(&trial, &u)?;
            let fs: Vec<f64> = s.iter().map(|&v| to_f64(v)).collect();
            if norm2(&fs) < base {
                *layout = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok((iter + 1, false));
        }
        (raw, scaled, jac) = p.linearize(layout, &u)?;
    }
    Ok((NEWTON_ITERS, sup(&raw) < band))
}

/// Optimal indemnity on the default grid, for any admissible inputs.
pub fn solve_general<T: Scalar>(
    prefs: &BuyerPreferences<T>,
    pp: &PremiumPrinciple<T>,
    m: &LossModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    prefs.validate()?;
    pp.validate()?;
    m.validate()?;
    let p = Problem { prefs, pp, m, cfg };
    let knots = default_grid(m, cfg.grid_n);
    let n = knots.len() - 1;
    let mut layout = Layout {
        knots,
        slopes: vec![lit(0.5); n],
        state: vec![State::Frac; n],
    };
    let mut diag = Diagnostics::default();
    let (mut iterations, fp_converged) = fixed_point(&p, &mut layout, &mut diag.history)?;
    if !fp_converged {
        diag.notes.push("fixed point hit max_iter".into());
    }
    let (it, grid_solved) = grid_newton(&p, &mut layout)?;
    iterations += it;
    if !grid_solved {
        diag.notes
            .push("grid Newton left |L| above the tie band".into());
    }
    let residual = |l: &Layout<T>| verify_optimality(&l.contract()?, prefs, pp, m, cfg);
    // free knots need a density to move against
    if m.has_density() {
        let mut refined = split_transitions(&layout);
        let (it, ok) = polish(&p, &mut refined)?;
        iterations += it;
        if ok && residual(&refined)? <= residual(&layout)? {
            layout = refined;
        } else {
            diag.notes
                .push("knot refinement rejected; kept the grid solution".into());
        }
    }
    let contract = layout.contract()?;
    let tol = lit::<T>(CLASSIFY_TOL);
    if let Some(i) = layout.slopes.iter().position(|&s| s > tol) {
        diag.d_star = Some(layout.knots[i]);
    }
    let converged = fp_converged || grid_solved;
    finish_report(
        contract,
        prefs,
        pp,
        m,
        cfg,
        SolverPath::General,
        iterations,
        converged,
        diag,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::ContractClass;
    use crate::distortions::Distortion;
    use crate::rdeu::Utility;

    #[test]
    fn jacobian_matches_differences() {
        let m = LossModel::<f64>::exponential(1.0).unwrap();
        let prefs = BuyerPreferences::new(
            Utility::Cara { gamma: 1.5 },
            Distortion::ConvexDualPower { a: 0.7 },
            6.0,
        )
        .unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Power { theta: 0.1, c: 0.7 }).unwrap();
        let cfg = SolverConfig::default();
        let p = Problem {
            prefs: &prefs,
            pp: &pp,
            m: &m,
            cfg: &cfg,
        };
        let knots = default_grid(&m, 12);
        let n = knots.len() - 1;
        let slopes: Vec<f64> = (0..n)
            .map(|i| if i < 3 { 0.0 } else { 0.3 + 0.04 * i as f64 })
            .collect();
        let mut state = vec![State::Frac; n];
        state[..3].fill(State::Zero);
        let layout = Layout {
            knots,
            slopes,
            state,
        };
        let u = layout.unknowns();
        assert!(u.iter().any(|k| matches!(k, Unknown::Knot(_))));
        let (raw, _, jac) = p.linearize(&layout, &u).unwrap();
        let (direct, _) = p.equations(&layout, &u).unwrap();
        let (_, scales) = p.residuals(&layout, &u).unwrap();
        for (a, b) in raw.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }
        let x0 = layout.get(&u);
        for col in 0..u.len() {
            let h = 1e-5;
            let eval = |d: f64| {
                let mut xs = x0.clone();
                xs[col] += d;
                let mut l = layout.clone();
                l.set(&u, &xs);
                p.residuals(&l, &u).unwrap().0
            };
            let (fp, fm) = (eval(h), eval(-h));
            for row in 0..u.len() {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                // rows are scaled by a frozen factor
                let an = jac[(row, col)] * scales[row];
                assert!(
                    (fd - an).abs() < 1e-4 * (1.0 + fd.abs()),
                    "({row},{col}) fd {fd} an {an}"
                );
            }
        }
    }

    #[test]
    fn cheap_loading_gives_full() {
        let m = LossModel::<f64>::exponential(1.0).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma: 1.0 }, Distortion::identity(), 10.0)
                .unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Linear { slope: 0.9 }).unwrap();
        let cfg = SolverConfig {
            grid_n: 100,
            ..SolverConfig::default()
        };
        let r = solve_general(&prefs, &pp, &m, &cfg).unwrap();
        assert_eq!(r.regime, ContractClass::Full);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn linear_loading_gives_deductible() {
        let m = LossModel::<f64>::exponential(1.0).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma: 1.0 }, Distortion::identity(), 10.0)
                .unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Linear { slope: 1.2 }).unwrap();
        let cfg = SolverConfig {
            grid_n: 100,
            ..SolverConfig::default()
        };
        let r = solve_general(&prefs, &pp, &m, &cfg).unwrap();
        assert_eq!(r.regime, ContractClass::Deductible);
        let d = r.diagnostics.d_star.unwrap();
        assert!((d.exp() - 1.2 * (1.0 + d)).abs() < 1e-6, "d = {d}");
        assert!(r.residual < 1e-6);
    }

    #[test]
    fn power_fair_full_support_is_pure_coinsurance() {
        let m = LossModel::<f64>::exponential(1.0).unwrap();
        let prefs =
            BuyerPreferences::new(Utility::Cara { gamma: 2.0 }, Distortion::identity(), 5.0)
                .unwrap();
        let pp = PremiumPrinciple::from_seller(&Distortion::Power { theta: 0.0, c: 0.5 }).unwrap();
        let cfg = SolverConfig {
            grid_n: 100,
            ..SolverConfig::default()
        };
        let r = solve_general(&prefs, &pp, &m, &cfg).unwrap();
        assert_eq!(r.regime, ContractClass::DeductibleCoinsurance);
        assert_eq!(r.diagnostics.d_star, Some(0.0));
        for x in [0.5, 2.0, 5.0] {
            assert!((r.contract.slope(x) - 0.75).abs() < 1e-3);
        }
        assert!(r.residual < 1e-4);
    }
}
