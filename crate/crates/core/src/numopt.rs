//! Box-constrained quasi-Newton maximization, bounded scalar minimization and
//! the ℓ1 projection linear program.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl OptimizerSettings {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        OptimizerSettings {
            max_iter: 200,
            grad_tol: 1e-8,
            shrink: 0.5,
            armijo: 1e-4,
            lower,
            upper,
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::new(vec![f64::NEG_INFINITY; dim], vec![f64::INFINITY; dim])
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lower.len() != dim || self.upper.len() != dim {
            return Err(ArnetError::InvalidArgument(format!(
                "box has {} / {} bounds for a {dim}-dimensional problem",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if !(self.grad_tol > 0.0 && self.armijo > 0.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(ArnetError::InvalidArgument("optimizer tolerances must be positive".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err(ArnetError::InvalidArgument("empty box".into()));
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    /// Projected gradient below tolerance.
    Converged,
    /// Iteration budget exhausted.
    MaxIter,
    /// No step along the search direction improved the objective.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: OptStatus,
    pub iterations: usize,
}

fn projected_gradient_norm(x: &[f64], g: &[f64], s: &OptimizerSettings) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(k, (&xi, &gi))| ((xi + gi).clamp(s.lower[k], s.upper[k]) - xi).abs())
        .fold(0.0, f64::max)
}

/// Maximizes `f` over the box in `settings` by projected BFGS. `f` returns the
/// objective and writes its gradient into the second argument.
pub fn maximize_box<F>(mut f: F, x0: &[f64], settings: &OptimizerSettings) -> Result<OptResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    settings.validate(dim)?;
    let mut x = x0.to_vec();
    settings.project(&mut x);
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(ArnetError::NonFinite(format!("objective at start {x:?}")));
    }
    let mut hinv = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut g_new = vec![0.0; dim];
    for iter in 0..settings.max_iter {
        if projected_gradient_norm(&x, &g, settings) <= settings.grad_tol {
            return Ok(OptResult {
                x,
                value: fx,
                status: OptStatus::Converged,
                iterations: iter,
            });
        }
        // coordinates pinned at a bound with the gradient pointing outward
        let pinned: Vec<bool> = (0..dim)
            .map(|k| {
                (x[k] <= settings.lower[k] && g[k] < 0.0)
                    || (x[k] >= settings.upper[k] && g[k] > 0.0)
            })
            .collect();
        let gv = DVector::from_iterator(dim, (0..dim).map(|k| if pinned[k] { 0.0 } else { g[k] }));
        let mut d = &hinv * &gv;
        for k in 0..dim {
            if pinned[k] {
                d[k] = 0.0;
            }
        }
        if d.dot(&gv) <= 0.0 {
            hinv = DMatrix::identity(dim, dim);
            d = gv.clone();
            fresh = true;
        }
        if fresh {
            let scale = d.amax();
            if scale > 1.0 {
                d /= scale;
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = (0..dim).map(|k| x[k] + t * d[k]).collect();
            settings.project(&mut trial);
            let ft = f(&trial, &mut g_new);
            if ft.is_finite() && g_new.iter().all(|v| v.is_finite()) {
                let lin: f64 = (0..dim).map(|k| g[k] * (trial[k] - x[k])).sum();
                if ft >= fx + settings.armijo * lin && ft >= fx {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            t *= settings.shrink;
        }
        let Some((x_new, f_new)) = accepted else {
            if !fresh {
                hinv = DMatrix::identity(dim, dim);
                fresh = true;
                continue;
            }
            return Ok(OptResult {
                x,
                value: fx,
                status: OptStatus::Stalled,
                iterations: iter,
            });
        };

        // BFGS on -f
        let s = DVector::from_iterator(dim, (0..dim).map(|k| x_new[k] - x[k]));
        let y = DVector::from_iterator(dim, (0..dim).map(|k| g[k] - g_new[k]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let moved = s.amax();
        x = x_new;
        fx = f_new;
        g.copy_from_slice(&g_new);
        if moved == 0.0 {
            return Ok(OptResult {
                x,
                value: fx,
                status: OptStatus::Stalled,
                iterations: iter + 1,
            });
        }
    }
    let status = if projected_gradient_norm(&x, &g, settings) <= settings.grad_tol {
        OptStatus::Converged
    } else {
        OptStatus::MaxIter
    };
    Ok(OptResult {
        x,
        value: fx,
        status,
        iterations: settings.max_iter,
    })
}

/// Minimizes `g` over `[center - radius, center + radius]` by Brent's method
/// (golden-section steps safeguarded with parabolic interpolation). The
/// interval ends and the center are also candidates; ties go to the point
/// nearest the center.
pub fn minimize_1d<G>(mut g: G, center: f64, radius: f64) -> Result<f64>
where
    G: FnMut(f64) -> f64,
{
    if !(radius > 0.0) || !center.is_finite() {
        return Err(ArnetError::InvalidArgument(format!(
            "minimize_1d needs a finite center and positive radius, got {center}, {radius}"
        )));
    }
    let mut eval = |x: f64| -> Result<f64> {
        let v = g(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ArnetError::NonFinite(format!("objective at {x}")))
        }
    };
    let tol = 1e-10 * center.abs().max(1.0);
    let cgold = (3.0 - 5f64.sqrt()) / 2.0;
    let (lo, hi) = (center - radius, center + radius);
    let (mut a, mut b) = (lo, hi);
    let mut x = a + cgold * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut candidates = Vec::new();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (x - m).abs() <= 2.0 * tol - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < 2.0 * tol || b - u < 2.0 * tol {
                    d = if m >= x { tol } else { -tol };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = cgold * e;
        }
        let u = if d.abs() >= tol { x + d } else { x + tol.copysign(d) }.clamp(lo, hi);
        let fu = eval(u)?;
        candidates.push((u, fu));
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    candidates.push((x, fx));
    candidates.push((center, eval(center)?));
    candidates.push((lo, eval(lo)?));
    candidates.push((hi, eval(hi)?));

    let best = candidates
        .into_iter()
        .min_by(|p, q| {
            p.1.partial_cmp(&q.1)
                .unwrap()
                .then((p.0 - center).abs().partial_cmp(&(q.0 - center).abs()).unwrap())
        })
        .expect("non-empty candidate list");
    Ok(best.0)
}

/// Evaluates `g` on `points` equally spaced nodes of `[lo, hi]`, then refines
/// with [`minimize_1d`] between the neighbours of the best node. Guards
/// against plateaus that would stall a plain golden-section search.
pub fn minimize_scan<G>(mut g: G, lo: f64, hi: f64, points: usize) -> Result<f64>
where
    G: FnMut(f64) -> f64,
{
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(ArnetError::InvalidArgument(format!(
            "minimize_scan needs a finite interval, got [{lo}, {hi}]"
        )));
    }
    let points = points.max(3);
    let step = (hi - lo) / (points - 1) as f64;
    let mid = 0.5 * (lo + hi);
    let mut best = (0, f64::INFINITY);
    for k in 0..points {
        let v = g(lo + step * k as f64);
        if !v.is_finite() {
            return Err(ArnetError::NonFinite(format!("objective at {}", lo + step * k as f64)));
        }
        let x = lo + step * k as f64;
        let bx = lo + step * best.0 as f64;
        if v < best.1 || (v == best.1 && (x - mid).abs() < (bx - mid).abs()) {
            best = (k, v);
        }
    }
    let a = lo + step * best.0.saturating_sub(1) as f64;
    let b = (lo + step * (best.0 + 1) as f64).min(hi);
    minimize_1d(g, 0.5 * (a + b), 0.5 * (b - a))
}

/// Minimizes `h(x)²` over `[lo, hi]`. Every root of `h` attains the minimum,
/// so sign changes on a grid of `points` nodes are located first (Illinois
/// false position) and the root nearest `prefer` wins; without a sign change
/// this falls back to [`minimize_scan`] on `h²`.
pub fn root_scan<H>(mut h: H, lo: f64, hi: f64, points: usize, prefer: f64) -> Result<f64>
where
    H: FnMut(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite() && hi > lo) || points < 2 {
        return Err(ArnetError::InvalidArgument(format!(
            "root_scan needs a finite interval and two nodes, got [{lo}, {hi}] with {points}"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|k| if k + 1 == points { hi } else { lo + step * k as f64 }).collect();
    let mut vs = Vec::with_capacity(points);
    for &x in &xs {
        let v = h(x);
        if !v.is_finite() {
            return Err(ArnetError::NonFinite(format!("objective at {x}")));
        }
        vs.push(v);
    }
    let mut roots = Vec::new();
    for k in 0..points {
        if vs[k] == 0.0 {
            roots.push(xs[k]);
        } else if k + 1 < points && vs[k + 1] != 0.0 && (vs[k] < 0.0) != (vs[k + 1] < 0.0) {
            roots.push(false_position(&mut h, (xs[k], vs[k]), (xs[k + 1], vs[k + 1]))?);
        }
    }
    match roots
        .into_iter()
        .min_by(|a, b| (a - prefer).abs().total_cmp(&(b - prefer).abs()))
    {
        Some(x) => Ok(x),
        None => minimize_scan(|x| h(x).powi(2), lo, hi, points),
    }
}

/// Root of `h` in a sign-changing bracket.
fn false_position<H: FnMut(f64) -> f64>(h: &mut H, (mut a, mut fa): (f64, f64), (mut b, mut fb): (f64, f64)) -> Result<f64> {
    let tol = 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut side = 0;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = h(c);
        if !fc.is_finite() {
            return Err(ArnetError::NonFinite(format!("objective at {c}")));
        }
        if fc == 0.0 {
            return Ok(c);
        }
        if (fc < 0.0) == (fb < 0.0) {
            (b, fb) = (c, fc);
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            (a, fa) = (c, fc);
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// Minimizes `|u|_1` subject to `|Hᵀu - e_l|_∞ <= τ`.
pub fn solve_l1_projection(h: &DMatrix<f64>, l: usize, tau: f64) -> Result<Vec<f64>> {
    let q = h.nrows();
    if h.ncols() != q || l >= q {
        return Err(ArnetError::InvalidArgument(format!(
            "projection needs a square matrix and l < q, got {}x{} and l = {l}",
            h.nrows(),
            h.ncols()
        )));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(ArnetError::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(ArnetError::NonFinite("projection matrix".into()));
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let plus: Vec<_> = (0..q).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    let minus: Vec<_> = (0..q).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for k in 0..q {
        let slack = lp.add_var(0.0, (-tau, tau));
        let mut row = Vec::with_capacity(2 * q + 1);
        for j in 0..q {
            let c = h[(j, k)];
            if c != 0.0 {
                row.push((plus[j], c));
                row.push((minus[j], -c));
            }
        }
        row.push((slack, -1.0));
        let rhs = if k == l { 1.0 } else { 0.0 };
        lp.add_constraint(&row[..], ComparisonOp::Eq, rhs);
    }
    let sol = lp.solve().map_err(|e| match e {
        minilp::Error::Infeasible => ArnetError::LpInfeasible,
        minilp::Error::Unbounded => ArnetError::LpUnbounded,
    })?;
    if !sol.objective().is_finite() {
        return Err(ArnetError::LpUnbounded);
    }
    Ok((0..q).map(|j| sol[plus[j]] - sol[minus[j]]).collect())
}

/// `|Hᵀφ - e_l|_∞`.
pub fn projection_residual(h: &DMatrix<f64>, l: usize, phi: &[f64]) -> f64 {
    let q = h.nrows();
    (0..q)
        .map(|k| {
            let v: f64 = (0..q).map(|j| h[(j, k)] * phi[j]).sum();
            (v - if k == l { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// A linear program `min cᵀz` subject to `A z <= b`, with per-variable
/// nonnegativity.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub nonneg: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
}

impl LpProblem {
    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.objective.len();
        if self.a.ncols() != n || self.a.nrows() != self.b.len() || self.nonneg.len() != n {
            return Err(ArnetError::InvalidArgument("inconsistent LP dimensions".into()));
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..n)
            .map(|k| {
                let lo = if self.nonneg[k] { 0.0 } else { f64::NEG_INFINITY };
                lp.add_var(self.objective[k], (lo, f64::INFINITY))
            })
            .collect();
        for r in 0..self.a.nrows() {
            let row: Vec<_> = (0..n)
                .filter(|&k| self.a[(r, k)] != 0.0)
                .map(|k| (vars[k], self.a[(r, k)]))
                .collect();
            lp.add_constraint(&row[..], ComparisonOp::Le, self.b[r]);
        }
        let sol = lp.solve().map_err(|e| match e {
            minilp::Error::Infeasible => ArnetError::LpInfeasible,
            minilp::Error::Unbounded => ArnetError::LpUnbounded,
        })?;
        if !sol.objective().is_finite() {
            return Err(ArnetError::LpUnbounded);
        }
        Ok(LpSolution {
            z: vars.iter().map(|&v| sol[v]).collect(),
            objective: sol.objective(),
        })
    }
}
