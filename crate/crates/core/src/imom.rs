//! Iterative method of moments for kernels with
//! `alpha = xi_i xi_j f(globals)` and `beta = eta_i eta_j g(globals)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};
use crate::likelihood::{loglik_grad_over, Panel};
use crate::numopt::{maximize_box, OptimizerSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImomSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ImomSettings {
    fn default() -> Self {
        ImomSettings {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImomState {
    pub iteration: usize,
    pub globals: Vec<f64>,
    /// `Ξ` and `Γ`, dense `p x p`, zero diagonal.
    pub xi_products: DMatrix<f64>,
    pub eta_products: DMatrix<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// Largest absolute parameter change in the last iteration.
    pub change: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImomFit {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub change: f64,
    /// Moment ratios with a zero denominator, imputed from their rows.
    pub imputed: usize,
    /// Some `Ξ 1` or `Γ 1` entry was not positive; the matching locals sit
    /// at their lower bound.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct LocalRecovery {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn recovery_objective(x: &[f64], v: &[f64]) -> f64 {
    let p = x.len();
    let mut total = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            total += (x[i] + x[j]).exp();
        }
        total -= x[i] * v[i];
    }
    total
}

fn grad_max(x: &[f64], v: &[f64]) -> f64 {
    let e: Vec<f64> = x.iter().map(|xi| xi.exp()).collect();
    let total: f64 = e.iter().sum();
    (0..x.len()).fold(0.0, |m, i| m.max((e[i] * (total - e[i]) - v[i]).abs()))
}

/// Minimizes `Σ_{i<j} exp(x_i + x_j) - Σ_i x_i v_i` by damped Newton. The
/// locals are `exp(x)`.
pub fn recover_locals(v: &[f64]) -> Result<LocalRecovery> {
    let p = v.len().max(1);
    let x0: Vec<f64> = v.iter().map(|&vi| 0.5 * (vi / (p - 1).max(1) as f64).ln()).collect();
    recover_locals_from(v, &x0)
}

/// [`recover_locals`] from an explicit starting point.
pub fn recover_locals_from(v: &[f64], x0: &[f64]) -> Result<LocalRecovery> {
    let p = v.len();
    if x0.len() != p {
        return Err(ArnetError::InvalidArgument("starting point length differs from v".into()));
    }
    if p < 3 {
        return Err(ArnetError::InvalidArgument(format!(
            "local recovery needs p >= 3, got {p}"
        )));
    }
    if let Some(bad) = v.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(ArnetError::InvalidArgument(format!(
            "row sums must be positive and finite, got {bad}"
        )));
    }
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * vmax.max(1.0);
    let mut x = x0.to_vec();
    let mut obj = recovery_objective(&x, v);
    for iter in 0..200 {
        let e: Vec<f64> = x.iter().map(|xi| xi.exp()).collect();
        let total: f64 = e.iter().sum();
        let grad: Vec<f64> = (0..p).map(|i| e[i] * (total - e[i]) - v[i]).collect();
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= tol {
            return Ok(LocalRecovery {
                x,
                iterations: iter,
                converged: true,
            });
        }
        let mut h = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { e[i] * e[j] });
        for i in 0..p {
            h[(i, i)] = e[i] * (total - e[i]);
        }
        let g = DVector::from_vec(grad.clone());
        let step = match h.cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..p).map(|i| x[i] - t * step[i]).collect();
            let f = recovery_objective(&trial, v);
            // near the optimum the objective change drowns in rounding, so
            // a smaller gradient also counts as progress
            if f.is_finite() && (f <= obj || grad_max(&trial, v) < gmax) {
                x = trial;
                obj = f;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Ok(LocalRecovery {
                x,
                iterations: iter,
                converged: false,
            });
        }
    }
    let e: Vec<f64> = x.iter().map(|xi| xi.exp()).collect();
    let total: f64 = e.iter().sum();
    let converged = (0..p).all(|i| (e[i] * (total - e[i]) - v[i]).abs() <= tol);
    Ok(LocalRecovery {
        x,
        iterations: 200,
        converged,
    })
}

/// Formation/dissolution counts and at-risk factor sums of one pair.
struct MomentSums {
    formed: f64,
    dissolved: f64,
    f_sum: f64,
    g_sum: f64,
}

fn moment_sums(panel: &Panel, globals: &[f64]) -> Result<Vec<MomentSums>> {
    let kernel = panel.kernel();
    (0..panel.num_pairs())
        .map(|k| {
            let mut s = MomentSums {
                formed: 0.0,
                dissolved: 0.0,
                f_sum: 0.0,
                g_sum: 0.0,
            };
            for o in panel.obs_range(k) {
                let (f, g) = kernel.separable_factors(globals, panel.context(o))?;
                if panel.x_prev(o) {
                    s.g_sum += g;
                    s.dissolved += (!panel.x_next(o)) as u8 as f64;
                } else {
                    s.f_sum += f;
                    s.formed += panel.x_next(o) as u8 as f64;
                }
            }
            Ok(s)
        })
        .collect()
}

/// Fills a symmetric ratio matrix; undefined entries take the mean of the
/// defined entries in their two rows. Returns the number imputed.
fn ratio_matrix(
    panel: &Panel,
    sums: &[MomentSums],
    pick: impl Fn(&MomentSums) -> (f64, f64),
) -> (DMatrix<f64>, usize) {
    let p = panel.kernel().p();
    let mut m = DMatrix::zeros(p, p);
    let mut defined = vec![vec![false; p]; p];
    for (k, s) in sums.iter().enumerate() {
        let (i, j) = panel.pair(k);
        let (num, den) = pick(s);
        if den > 0.0 {
            m[(i, j)] = num / den;
            m[(j, i)] = num / den;
            defined[i][j] = true;
            defined[j][i] = true;
        }
    }
    let row_mean = |i: usize, m: &DMatrix<f64>| -> Option<f64> {
        let vals: Vec<f64> = (0..p).filter(|&j| defined[i][j]).map(|j| m[(i, j)]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let means: Vec<Option<f64>> = (0..p).map(|i| row_mean(i, &m)).collect();
    let all: Vec<f64> = means.iter().flatten().copied().collect();
    let overall = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    let mut imputed = 0;
    for i in 0..p {
        for j in i + 1..p {
            if !defined[i][j] {
                let v = match (means[i], means[j]) {
                    (Some(a), Some(b)) => 0.5 * (a + b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => overall,
                };
                m[(i, j)] = v;
                m[(j, i)] = v;
                imputed += 1;
            }
        }
    }
    (m, imputed)
}

fn locals_from_products(m: &DMatrix<f64>, lower: f64, upper: f64) -> Result<(Vec<f64>, bool)> {
    let p = m.nrows();
    let v: Vec<f64> = (0..p).map(|i| m.row(i).sum()).collect();
    let degenerate = v.iter().any(|&x| !(x > 0.0));
    let floor = 1e-12 * v.iter().cloned().fold(1.0, f64::max);
    let v: Vec<f64> = v.into_iter().map(|x| x.max(floor)).collect();
    let rec = recover_locals(&v)?;
    Ok((
        rec.x.iter().map(|x| x.exp().clamp(lower, upper)).collect(),
        degenerate,
    ))
}

/// Maximizes the full log-likelihood over the global block with the locals
/// of `theta` held fixed; returns the updated vector.
pub(crate) fn update_globals(panel: &Panel, theta: &[f64]) -> Result<Vec<f64>> {
    let kernel = panel.kernel();
    let ng = kernel.num_globals();
    if ng == 0 {
        return Ok(theta.to_vec());
    }
    let all: Vec<usize> = (0..panel.num_pairs()).collect();
    let norm = panel.num_obs() as f64;
    let mut work = theta.to_vec();
    let mut full_grad = vec![0.0; theta.len()];
    let (lower, upper): (Vec<f64>, Vec<f64>) = (0..ng).map(|l| kernel.bounds(l)).unzip();
    let settings = OptimizerSettings::new(lower, upper);
    let res = maximize_box(
        |x, g| {
            work[..ng].copy_from_slice(x);
            full_grad.iter_mut().for_each(|v| *v = 0.0);
            let (ll, _) = loglik_grad_over(panel, &work, &all, &mut full_grad);
            for k in 0..ng {
                g[k] = full_grad[k] / norm;
            }
            ll / norm
        },
        &theta[..ng],
        &settings,
    )?;
    let mut out = theta.to_vec();
    out[..ng].copy_from_slice(&res.x);
    Ok(out)
}

/// One pass of steps (ii) and (iii) at fixed globals.
fn moment_step(panel: &Panel, globals: &[f64]) -> Result<(ImomState, usize, bool)> {
    let kernel = panel.kernel();
    let sums = moment_sums(panel, globals)?;
    let (xm, imp_x) = ratio_matrix(panel, &sums, |s| (s.formed, s.f_sum));
    let (em, imp_e) = ratio_matrix(panel, &sums, |s| (s.dissolved, s.g_sum));
    let (lo, hi) = kernel.bounds(kernel.xi_offset());
    let (xi, deg_x) = locals_from_products(&xm, lo, hi)?;
    let (eta, deg_e) = locals_from_products(&em, lo, hi)?;
    Ok((
        ImomState {
            iteration: 0,
            globals: globals.to_vec(),
            xi_products: xm,
            eta_products: em,
            xi,
            eta,
            change: f64::INFINITY,
        },
        imp_x + imp_e,
        deg_x || deg_e,
    ))
}

/// Runs the method of moments from the full starting vector `start` (only
/// its globals and locals are used as initial values).
pub fn imom_fit(panel: &Panel, start: &[f64], settings: &ImomSettings) -> Result<ImomFit> {
    let kernel = panel.kernel();
    if !kernel.id().is_separable() {
        return Err(ArnetError::InvalidArgument(format!(
            "kernel {} lacks the separable structure the method of moments needs",
            kernel.id()
        )));
    }
    if start.len() != kernel.num_params() {
        return Err(ArnetError::InvalidArgument(format!(
            "expected {} starting values, got {}",
            kernel.num_params(),
            start.len()
        )));
    }
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(ArnetError::InvalidArgument(
            "IMoM needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let ng = kernel.num_globals();
    let p = kernel.p();
    let mut theta = start.to_vec();
    let mut imputed = 0;
    let mut degenerate = false;
    let mut change = f64::INFINITY;
    for iter in 1..=settings.max_iter {
        let with_globals = update_globals(panel, &theta)?;
        let (state, imp, deg) = moment_step(panel, &with_globals[..ng])?;
        let mut next = with_globals;
        next[ng..ng + p].copy_from_slice(&state.xi);
        next[ng + p..].copy_from_slice(&state.eta);
        change = theta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = next;
        imputed = imp;
        degenerate = deg;
        if change < settings.tol {
            return Ok(ImomFit {
                theta,
                iterations: iter,
                converged: true,
                change,
                imputed,
                degenerate,
            });
        }
    }
    Ok(ImomFit {
        theta,
        iterations: settings.max_iter,
        converged: false,
        change,
        imputed,
        degenerate,
    })
}

/// State after a single method-of-moments update from `theta`.
pub fn imom_update(panel: &Panel, theta: &[f64]) -> Result<ImomState> {
    let ng = panel.kernel().num_globals();
    let with_globals = update_globals(panel, theta)?;
    let (mut state, _, _) = moment_step(panel, &with_globals[..ng])?;
    let p = panel.kernel().p();
    let mut next = with_globals;
    next[ng..ng + p].copy_from_slice(&state.xi);
    next[ng + p..].copy_from_slice(&state.eta);
    state.iteration = 1;
    state.change = theta
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(state)
}
