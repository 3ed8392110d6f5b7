//! Initial partial-likelihood estimator, projection refinement and
//! confidence intervals.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ArnetError, Result};
use crate::imom::{imom_fit, update_globals, ImomFit, ImomSettings};
use crate::kernels::{Kernel, KernelId};
use crate::likelihood::{
    full_loglik, loglik_grad_over, loglik_over, projected_score, variance_ratio_terms, Panel,
    ScoreCache,
};
use crate::numopt::{
    maximize_box, minimize_scan, projection_residual, root_scan, solve_l1_projection, OptimizerSettings,
};

/// Grid sizes for the 1-D searches over the full parameter range and over
/// the refinement balls.
const SCAN_POINTS: usize = 21;
const BALL_POINTS: usize = 11;

fn default_init_grid() -> Vec<f64> {
    (0..9).map(|k| 0.5 + 0.05 * k as f64).collect()
}

fn default_tau_grid_global() -> Vec<f64> {
    vec![1e-7, 1e-6, 1e-5]
}

fn default_tau_grid_local() -> Vec<f64> {
    vec![1e-3, 3e-3, 1e-2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Constant starting values for the local parameters, one fit per entry.
    pub init_grid: Vec<f64>,
    /// Starting value for the global parameters of node-level kernels.
    pub global_start: f64,
    pub r_tilde_local: f64,
    pub r_check_local: f64,
    pub r_tilde_global: f64,
    pub r_check_global: f64,
    /// Multipliers `τ̃` for global parameters; the projection uses
    /// `τ = τ̃ Δ_n^{1/2}`.
    pub tau_grid_global: Vec<f64>,
    /// Multipliers `τ̃` for node- and pair-level parameters.
    pub tau_grid_local: Vec<f64>,
    pub ci_level: f64,
    pub imom: ImomSettings,
    /// Continue the initial estimate to the joint maximizer of the full
    /// log-likelihood before refinement.
    pub joint_ascent: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            init_grid: default_init_grid(),
            global_start: 1.0,
            r_tilde_local: 0.2,
            r_check_local: 0.05,
            r_tilde_global: 10.0,
            r_check_global: 2.0,
            tau_grid_global: default_tau_grid_global(),
            tau_grid_local: default_tau_grid_local(),
            ci_level: 0.95,
            imom: ImomSettings::default(),
            joint_ascent: true,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let radii = [
            self.r_tilde_local,
            self.r_check_local,
            self.r_tilde_global,
            self.r_check_global,
        ];
        if radii.iter().any(|r| !(*r > 0.0)) {
            return Err(ArnetError::InvalidArgument("search radii must be positive".into()));
        }
        for (name, grid) in [
            ("tau_grid_global", &self.tau_grid_global),
            ("tau_grid_local", &self.tau_grid_local),
        ] {
            if grid.is_empty() || grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                return Err(ArnetError::InvalidArgument(format!(
                    "{name} must be a non-empty list of non-negative values"
                )));
            }
        }
        if self.init_grid.is_empty() || self.init_grid.iter().any(|c| !(*c > 0.0)) {
            return Err(ArnetError::InvalidArgument(
                "init_grid must be a non-empty list of positive values".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(ArnetError::InvalidArgument(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if !(self.global_start > 0.0) {
            return Err(ArnetError::InvalidArgument("global_start must be positive".into()));
        }
        Ok(())
    }
}

/// `Δ_n = n^{-1/2} p^{5/2} log^{3/2}(np)`.
pub fn delta_n(n: usize, p: usize) -> f64 {
    let (n, p) = (n as f64, p as f64);
    n.powf(-0.5) * p.powf(2.5) * (n * p).ln().powf(1.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    /// Initial estimator, then projection refinement.
    #[serde(rename = "mle")]
    Mle,
    /// Method of moments only.
    #[serde(rename = "imom")]
    Imom,
    /// Initial estimator, method-of-moments stabilization, then refinement.
    #[serde(rename = "mle+imom-init")]
    MleImomInit,
}

impl std::str::FromStr for FitMethod {
    type Err = ArnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(FitMethod::Mle),
            "imom" => Ok(FitMethod::Imom),
            "mle+imom-init" => Ok(FitMethod::MleImomInit),
            other => Err(ArnetError::InvalidArgument(format!(
                "unknown method `{other}` (expected mle, imom or mle+imom-init)"
            ))),
        }
    }
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::Mle => "mle",
            FitMethod::Imom => "imom",
            FitMethod::MleImomInit => "mle+imom-init",
        }
    }
}

/// Search interval `B(center, radius)` intersected with the parameter box,
/// returned as (center, half-width).
fn search_window(kernel: &Kernel, l: usize, center: f64, radius: f64) -> (f64, f64) {
    let (lo, hi) = kernel.bounds(l);
    let a = (center - radius).max(lo);
    let b = (center + radius).min(hi);
    if b > a {
        (0.5 * (a + b), 0.5 * (b - a))
    } else {
        (center.clamp(lo, hi), 1e-12)
    }
}

/// Result of the initial estimator for one starting value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartFit {
    pub start: f64,
    /// Globals from step (a) with every local still at `start`.
    pub globals_step: Vec<f64>,
    pub theta: Vec<f64>,
    /// Full conditional log-likelihood at `theta`.
    pub loglik: f64,
}

/// Initial estimator from a single constant start for the locals.
pub fn fit_initial_from(panel: &Panel, start: f64, cfg: &EstimationConfig) -> Result<StartFit> {
    let kernel = *panel.kernel();
    let q = kernel.num_params();
    let ng = kernel.num_globals();
    let mut theta0 = vec![start; q];
    let gstart = match kernel.id() {
        KernelId::GlobalAr | KernelId::EdgewiseAr => start.clamp(0.05, 0.95),
        _ => cfg.global_start,
    };
    for v in &mut theta0[..ng] {
        *v = gstart;
    }
    for (l, v) in theta0.iter_mut().enumerate() {
        let (lo, hi) = kernel.bounds(l);
        *v = v.clamp(lo, hi);
    }
    let with_globals = update_globals(panel, &theta0)?;
    let locals: Vec<f64> = (ng..q)
        .into_par_iter()
        .map(|l| {
            let pairs = panel.scope_pairs(l);
            let (lo, hi) = kernel.bounds(l);
            let mut work = with_globals.clone();
            minimize_scan(
                |x| {
                    work[l] = x;
                    -loglik_over(panel, &work, &pairs)
                },
                lo,
                hi,
                SCAN_POINTS,
            )
        })
        .collect::<Result<_>>()?;
    let mut theta = with_globals.clone();
    theta[ng..].copy_from_slice(&locals);
    let loglik = full_loglik(panel, &theta)?;
    Ok(StartFit {
        start,
        globals_step: with_globals,
        theta,
        loglik,
    })
}

/// Initial estimates for every start of the grid; starts whose optimizer
/// fails are dropped.
pub fn fit_initial(panel: &Panel, cfg: &EstimationConfig) -> Result<Vec<StartFit>> {
    cfg.validate()?;
    let fits: Vec<StartFit> = cfg
        .init_grid
        .iter()
        .filter_map(|&c| fit_initial_from(panel, c, cfg).ok())
        .collect();
    if fits.is_empty() {
        return Err(ArnetError::Optimizer("initial estimator failed on every start".into()));
    }
    Ok(fits)
}

/// Index of the start with the largest log-likelihood.
pub fn best_start(fits: &[StartFit]) -> usize {
    fits.iter()
        .enumerate()
        .max_by(|a, b| a.1.loglik.total_cmp(&b.1.loglik))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Refined,
    /// No `τ` in the grid gave a feasible, non-zero projection; the initial
    /// estimate is kept.
    LpFailed,
    /// The projected score is flat in `θ_l`; no interval is reported.
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamFit {
    pub name: String,
    pub initial: f64,
    pub intermediate: f64,
    pub estimate: f64,
    pub tau: Option<f64>,
    /// Non-zero entries of `φ̂_l` as (parameter index, value).
    pub phi: Vec<(usize, f64)>,
    /// `|Ĥᵀφ̂_l - e_l|_∞`.
    pub lp_residual: Option<f64>,
    pub zeta: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub status: RefineStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImprovedFit {
    pub theta_initial: Vec<f64>,
    pub theta_intermediate: Vec<f64>,
    pub theta_final: Vec<f64>,
    pub params: Vec<ParamFit>,
    pub clipped: usize,
}

struct Projection {
    phi: Vec<f64>,
    tau: f64,
    check: f64,
    residual: f64,
    ratio: f64,
}

fn projected_score_at<'a>(
    panel: &'a Panel,
    pairs: &'a [usize],
    base: &[f64],
    l: usize,
    phi: &[f64],
) -> impl FnMut(f64) -> f64 + 'a {
    let kernel = panel.kernel();
    let mut work = base.to_vec();
    let phi = phi.to_vec();
    move |x| {
        work[l] = x;
        let ev = kernel.evaluator(&work);
        projected_score(panel, pairs, &ev, &phi)
    }
}

fn radii(kernel: &Kernel, l: usize, cfg: &EstimationConfig) -> (f64, f64) {
    if kernel.is_global(l) {
        (cfg.r_tilde_global, cfg.r_check_global)
    } else {
        (cfg.r_tilde_local, cfg.r_check_local)
    }
}

fn choose_projection(
    panel: &Panel,
    cache: &ScoreCache,
    l: usize,
    theta: &[f64],
    cfg: &EstimationConfig,
    scale: f64,
) -> Result<Option<Projection>> {
    let kernel = panel.kernel();
    let q = kernel.num_params();
    let jac = cache.jacobian(panel, l);
    let pos = jac.position(l).expect("l lies in its own support");
    let pairs = panel.scope_pairs(l);
    let (r_tilde, _) = radii(kernel, l, cfg);
    let mut best: Option<Projection> = None;
    let grid = if kernel.is_global(l) {
        &cfg.tau_grid_global
    } else {
        &cfg.tau_grid_local
    };
    for &tt in grid {
        let tau = tt * scale;
        let local = match solve_l1_projection(&jac.matrix, pos, tau) {
            Ok(v) => v,
            Err(ArnetError::LpInfeasible | ArnetError::LpUnbounded) => continue,
            Err(e) => return Err(e),
        };
        if local.iter().all(|&v| v == 0.0) {
            continue;
        }
        let residual = projection_residual(&jac.matrix, pos, &local);
        let mut phi = vec![0.0; q];
        for (a, &r) in jac.support.iter().enumerate() {
            phi[r] = local[a];
        }
        let (c, r) = search_window(kernel, l, theta[l], r_tilde);
        let score = projected_score_at(panel, &pairs, theta, l, &phi);
        let check = root_scan(score, c - r, c + r, BALL_POINTS, theta[l])?;
        let mut at = theta.to_vec();
        at[l] = check;
        let (num, den) = variance_ratio_terms(panel, l, &at, &phi);
        let ratio = if den > 0.0 { num / den } else { f64::INFINITY };
        let better = match &best {
            None => true,
            Some(b) => ratio < b.ratio,
        };
        if better {
            best = Some(Projection {
                phi,
                tau,
                check,
                residual,
                ratio,
            });
        }
    }
    Ok(best)
}

/// Projection refinement of `theta_tilde`, per parameter.
pub fn fit_improved(
    panel: &Panel,
    theta_tilde: &[f64],
    cfg: &EstimationConfig,
) -> Result<ImprovedFit> {
    cfg.validate()?;
    let kernel = *panel.kernel();
    let q = kernel.num_params();
    if theta_tilde.len() != q {
        return Err(ArnetError::InvalidArgument(format!(
            "expected {q} initial values, got {}",
            theta_tilde.len()
        )));
    }
    let scale = delta_n(panel.n(), kernel.p()).sqrt();
    let cache = ScoreCache::build(panel, theta_tilde)?;
    let projections: Vec<Option<Projection>> = (0..q)
        .into_par_iter()
        .map(|l| choose_projection(panel, &cache, l, theta_tilde, cfg, scale))
        .collect::<Result<_>>()?;

    let check: Vec<f64> = projections
        .iter()
        .enumerate()
        .map(|(l, pr)| pr.as_ref().map_or(theta_tilde[l], |p| p.check))
        .collect();
    let finals: Vec<f64> = (0..q)
        .into_par_iter()
        .map(|l| match &projections[l] {
            None => Ok(check[l]),
            Some(pr) => {
                let pairs = panel.scope_pairs(l);
                let (_, r_check) = radii(&kernel, l, cfg);
                let (c, r) = search_window(&kernel, l, check[l], r_check);
                let score = projected_score_at(panel, &pairs, &check, l, &pr.phi);
                root_scan(score, c - r, c + r, BALL_POINTS, check[l])
            }
        })
        .collect::<Result<_>>()?;

    let final_cache = ScoreCache::build(panel, &finals)?;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + cfg.ci_level / 2.0);
    let params = (0..q)
        .map(|l| {
            let name = kernel.param_name(l);
            match &projections[l] {
                None => ParamFit {
                    name,
                    initial: theta_tilde[l],
                    intermediate: check[l],
                    estimate: finals[l],
                    tau: None,
                    phi: Vec::new(),
                    lp_residual: None,
                    zeta: None,
                    se: None,
                    ci: None,
                    status: RefineStatus::LpFailed,
                },
                Some(pr) => {
                    let zeta = final_cache.variance(panel, l, &pr.phi);
                    let denom = (panel.n() * kernel.scope_size(l)) as f64;
                    let usable = zeta > 0.0 && pr.ratio.is_finite();
                    let se = usable.then(|| (zeta / denom).sqrt());
                    ParamFit {
                        name,
                        initial: theta_tilde[l],
                        intermediate: check[l],
                        estimate: finals[l],
                        tau: Some(pr.tau),
                        phi: pr
                            .phi
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(k, v)| (k, *v))
                            .collect(),
                        lp_residual: Some(pr.residual),
                        zeta: Some(zeta),
                        se,
                        ci: se.map(|s| (finals[l] - z * s, finals[l] + z * s)),
                        status: if usable {
                            RefineStatus::Refined
                        } else {
                            RefineStatus::Degenerate
                        },
                    }
                }
            }
        })
        .collect();
    Ok(ImprovedFit {
        theta_initial: theta_tilde.to_vec(),
        theta_intermediate: check,
        theta_final: finals,
        params,
        clipped: final_cache.clipped_count(),
    })
}

/// Joint maximizer of the full log-likelihood over every coordinate, reached
/// by damped Newton steps on the analytic Jacobian and finished by projected
/// BFGS. Kernels without node-level parameters are returned unchanged, since
/// the initial estimator is already exact for them.
pub fn joint_ascent(panel: &Panel, theta: &[f64]) -> Result<Vec<f64>> {
    let kernel = panel.kernel();
    if !kernel.id().has_node_params() || kernel.num_globals() == 0 {
        return Ok(theta.to_vec());
    }
    let q = kernel.num_params();
    let all: Vec<usize> = (0..panel.num_pairs()).collect();
    let norm = panel.num_obs() as f64;
    let (lower, upper): (Vec<f64>, Vec<f64>) = (0..q).map(|l| kernel.bounds(l)).unzip();
    let value_grad = |x: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let (ll, _) = loglik_grad_over(panel, x, &all, g);
        g.iter_mut().for_each(|v| *v /= norm);
        ll / norm
    };

    let mut x = theta.to_vec();
    let mut g = vec![0.0; q];
    let mut fx = value_grad(&x, &mut g);
    for _ in 0..100 {
        let free: Vec<usize> = (0..q)
            .filter(|&k| !((x[k] <= lower[k] && g[k] < 0.0) || (x[k] >= upper[k] && g[k] > 0.0)))
            .collect();
        if free.iter().all(|&k| g[k].abs() < 1e-10) {
            break;
        }
        let h = ScoreCache::build(panel, &x)?.jacobian(panel, 0).dense(q);
        let nf = free.len();
        let neg = DMatrix::from_fn(nf, nf, |r, c| -h[(free[r], free[c])]);
        let rhs = DVector::from_fn(nf, |r, _| g[free[r]]);
        let scale = (0..nf).map(|r| neg[(r, r)].abs()).fold(1e-300, f64::max);
        let mut ridge = 0.0;
        let step = loop {
            let mut m = neg.clone();
            for r in 0..nf {
                m[(r, r)] += ridge;
            }
            if let Some(ch) = m.cholesky() {
                break Some(ch.solve(&rhs));
            }
            ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
            if ridge > 1e6 * scale {
                break None;
            }
        };
        let Some(step) = step else { break };
        let slope: f64 = (0..nf).map(|r| step[r] * rhs[r]).sum();
        let mut t = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        let mut gt = vec![0.0; q];
        for _ in 0..40 {
            for (r, &k) in free.iter().enumerate() {
                trial[k] = (x[k] + t * step[r]).clamp(lower[k], upper[k]);
            }
            let ft = value_grad(&trial, &mut gt);
            if ft.is_finite() && ft >= fx + 1e-4 * t * slope.max(0.0) {
                fx = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let change = x
            .iter()
            .zip(&trial)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max);
        x.copy_from_slice(&trial);
        g.copy_from_slice(&gt);
        if change < 1e-12 {
            break;
        }
    }

    let mut settings = OptimizerSettings::new(lower, upper);
    settings.max_iter = 1000;
    let res = maximize_box(value_grad, &x, &settings)?;
    Ok(if res.value >= fx { res.x } else { x })
}

/// All estimates obtained from one starting value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartReport {
    pub start: f64,
    /// `θ̃`.
    pub initial: Vec<f64>,
    /// Method-of-moments estimate, when run.
    pub imom: Option<Vec<f64>>,
    /// Joint likelihood maximizer, when run.
    pub joint: Option<Vec<f64>>,
    /// Refined `θ̂`, when run.
    pub refined: Option<Vec<f64>>,
    /// Log-likelihood at the most refined estimate of this start.
    pub loglik: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub initial_secs: f64,
    pub imom_secs: f64,
    pub joint_secs: f64,
    pub improved_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub kernel: KernelId,
    pub p: usize,
    pub n: usize,
    pub order: usize,
    pub method: FitMethod,
    pub names: Vec<String>,
    /// Start whose estimates are reported below.
    pub best_start: usize,
    /// `θ̃` of the best start.
    pub initial: Vec<f64>,
    pub imom: Option<Vec<f64>>,
    pub imom_info: Option<ImomFit>,
    pub joint: Option<Vec<f64>>,
    /// `θ̌`, absent when no refinement ran.
    pub intermediate: Option<Vec<f64>>,
    /// `θ̂`, absent when no refinement ran.
    #[serde(rename = "final")]
    pub refined: Option<Vec<f64>>,
    pub params: Option<Vec<ParamFit>>,
    /// Total conditional log-likelihood at the reported estimate.
    pub loglik: f64,
    /// Observations whose probability hit the clip at the reported estimate.
    pub clipped: usize,
    pub starts: Vec<StartReport>,
    pub timings: Timings,
    pub config: EstimationConfig,
}

impl FitReport {
    /// The most refined estimate available.
    pub fn estimate(&self) -> &[f64] {
        self.refined
            .as_deref()
            .or(self.joint.as_deref())
            .or(self.imom.as_deref())
            .unwrap_or(&self.initial)
    }
}

struct StartOutcome {
    report: StartReport,
    imom: Option<ImomFit>,
    improved: Option<ImprovedFit>,
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0))
}

fn run_start(
    panel: &Panel,
    start: f64,
    method: FitMethod,
    cfg: &EstimationConfig,
    timings: &mut Timings,
    refined: &mut Vec<ImprovedFit>,
) -> Result<StartOutcome> {
    let kernel = panel.kernel();
    let clock = Instant::now();
    let initial = fit_initial_from(panel, start, cfg)?;
    timings.initial_secs += clock.elapsed().as_secs_f64();

    let imom = match method {
        FitMethod::Imom | FitMethod::MleImomInit if kernel.id().is_separable() => {
            let clock = Instant::now();
            let seed = if method == FitMethod::Imom {
                let mut s = vec![start; kernel.num_params()];
                for v in &mut s[..kernel.num_globals()] {
                    *v = cfg.global_start;
                }
                s
            } else {
                initial.theta.clone()
            };
            let fit = imom_fit(panel, &seed, &cfg.imom)?;
            timings.imom_secs += clock.elapsed().as_secs_f64();
            Some(fit)
        }
        FitMethod::Imom => {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {} does not support the method of moments",
                kernel.id()
            )))
        }
        _ => None,
    };

    let (joint, improved) = if method == FitMethod::Imom {
        (None, None)
    } else {
        let mut from = imom.as_ref().map_or(&initial.theta, |f| &f.theta).clone();
        let joint = if cfg.joint_ascent {
            let clock = Instant::now();
            // clipped probabilities have flat likelihood, so the ascent
            // starts from whichever candidate fits better
            if imom.is_none()
                && full_loglik(panel, &initial.globals_step)? > full_loglik(panel, &from)?
            {
                from = initial.globals_step.clone();
            }
            from = joint_ascent(panel, &from)?;
            timings.joint_secs += clock.elapsed().as_secs_f64();
            Some(from.clone())
        } else {
            None
        };
        let clock = Instant::now();
        // starts that reach the same point share one refinement, and report
        // the point it was run from
        let fit = match refined.iter().find(|f| same_point(&f.theta_initial, &from)) {
            Some(f) => f.clone(),
            None => {
                let f = fit_improved(panel, &from, cfg)?;
                refined.push(f.clone());
                f
            }
        };
        timings.improved_secs += clock.elapsed().as_secs_f64();
        let joint = joint.map(|_| fit.theta_initial.clone());
        (joint, Some(fit))
    };

    let best = improved
        .as_ref()
        .map(|f| f.theta_final.as_slice())
        .or(imom.as_ref().map(|f| f.theta.as_slice()))
        .unwrap_or(&initial.theta);
    let loglik = full_loglik(panel, best)?;
    Ok(StartOutcome {
        report: StartReport {
            start,
            initial: initial.theta.clone(),
            imom: imom.as_ref().map(|f| f.theta.clone()),
            joint,
            refined: improved.as_ref().map(|f| f.theta_final.clone()),
            loglik,
        },
        imom,
        improved,
    })
}

/// Runs the full pipeline from every start of the grid and reports the start
/// with the largest log-likelihood.
pub fn fit(panel: &Panel, method: FitMethod, cfg: &EstimationConfig) -> Result<FitReport> {
    cfg.validate()?;
    let kernel = *panel.kernel();
    let mut timings = Timings::default();
    let mut outcomes = Vec::new();
    let mut refined = Vec::new();
    let mut last_err = None;
    for &c in &cfg.init_grid {
        match run_start(panel, c, method, cfg, &mut timings, &mut refined) {
            Ok(o) => outcomes.push(o),
            Err(e @ ArnetError::InvalidArgument(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    if outcomes.is_empty() {
        return Err(ArnetError::Optimizer(format!(
            "estimation failed on every start: {}",
            last_err.map_or_else(String::new, |e| e.to_string())
        )));
    }
    let best = outcomes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.report.loglik.total_cmp(&b.1.report.loglik))
        .map(|(k, _)| k)
        .expect("non-empty");
    let starts: Vec<StartReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let chosen = outcomes.swap_remove(best);
    let clipped = match &chosen.improved {
        Some(f) => f.clipped,
        None => {
            let at = chosen.imom.as_ref().map_or(&chosen.report.initial, |f| &f.theta);
            ScoreCache::build(panel, at)?.clipped_count()
        }
    };
    Ok(FitReport {
        kernel: kernel.id(),
        p: kernel.p(),
        n: panel.n(),
        order: kernel.order(),
        method,
        names: kernel.param_names(),
        best_start: best,
        initial: chosen.report.initial.clone(),
        imom: chosen.imom.as_ref().map(|f| f.theta.clone()),
        imom_info: chosen.imom,
        joint: chosen.report.joint.clone(),
        intermediate: chosen.improved.as_ref().map(|f| f.theta_intermediate.clone()),
        refined: chosen.improved.as_ref().map(|f| f.theta_final.clone()),
        params: chosen.improved.map(|f| f.params),
        loglik: chosen.report.loglik,
        clipped,
        starts,
        timings,
        config: cfg.clone(),
    })
}

/// `|estimate - truth| / |truth|` averaged over the starts.
pub fn rmae_scalar(estimates: &[f64], truth: f64) -> f64 {
    estimates.iter().map(|e| ((e - truth) / truth).abs()).sum::<f64>() / estimates.len() as f64
}

/// Mean relative error over a block of parameters, averaged over the starts.
pub fn rmae_block(estimates: &[&[f64]], truth: &[f64]) -> f64 {
    estimates
        .iter()
        .map(|est| {
            est.iter()
                .zip(truth)
                .map(|(e, t)| ((e - t) / t).abs())
                .sum::<f64>()
                / truth.len() as f64
        })
        .sum::<f64>()
        / estimates.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{Snapshot, SnapshotSeries};

    #[test]
    fn delta_n_formula() {
        let d = delta_n(100, 50);
        let oracle = 0.1 * 50f64.powf(2.5) * 5000f64.ln().powf(1.5);
        assert!((d - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn method_names() {
        for m in [FitMethod::Mle, FitMethod::Imom, FitMethod::MleImomInit] {
            assert_eq!(m.as_str().parse::<FitMethod>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = EstimationConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau_grid_local.clear();
        assert!(cfg.validate().is_err());
        let err = serde_json::from_str::<EstimationConfig>(r#"{"tau": [1]}"#);
        assert!(err.is_err());
    }

    #[test]
    fn initial_requires_transitions() {
        let k = Kernel::new(KernelId::Transitivity, 4).unwrap();
        let s = SnapshotSeries::new(vec![Snapshot::empty(4)]);
        assert!(s.is_err() || Panel::new(&k, &s.unwrap()).is_err());
    }

    #[test]
    fn rmae_helpers() {
        assert!((rmae_scalar(&[9.0, 11.0], 10.0) - 0.1).abs() < 1e-15);
        let a = [0.9, 1.1];
        let b = [1.0, 1.0];
        assert!((rmae_block(&[&a, &b], &[1.0, 1.0]) - 0.05).abs() < 1e-15);
    }
}
