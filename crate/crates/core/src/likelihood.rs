//! Partial log-likelihoods, scores and score Jacobians.
//!
//! All quantities are computed over a [`Panel`], the transitions of a series
//! with the kernel statistics of every edge precomputed once.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::error::{ArnetError, Result};
use crate::kernels::{EdgeContext, Evaluator, Kernel, ParamScope, MAX_EDGE_PARAMS};
use crate::series::SnapshotSeries;

/// Transitions `t = m+1..n` of a series, stored pair-major.
#[derive(Debug, Clone)]
pub struct Panel {
    kernel: Kernel,
    n: usize,
    n_trans: usize,
    pairs: Vec<(usize, usize)>,
    x_prev: Vec<bool>,
    x_next: Vec<bool>,
    ctx: Vec<EdgeContext>,
}

impl Panel {
    pub fn new(kernel: &Kernel, series: &SnapshotSeries) -> Result<Self> {
        if series.p() != kernel.p() {
            return Err(ArnetError::InvalidArgument(format!(
                "series has p = {} but the kernel was built for p = {}",
                series.p(),
                kernel.p()
            )));
        }
        let m = kernel.order();
        let n = series.n();
        if n <= m {
            return Err(ArnetError::TooFewSnapshots { n, order: m });
        }
        let pairs: Vec<(usize, usize)> = kernel.pairs().iter().collect();
        let n_trans = n - m;
        let total = pairs.len() * n_trans;
        let mut x_prev = vec![false; total];
        let mut x_next = vec![false; total];
        let mut ctx = vec![EdgeContext::Plain; total];
        for t in m..n {
            let lags: Vec<_> = (1..=m).map(|d| series.get(t - d)).collect();
            let contexts = kernel.contexts(&lags);
            let (prev, next) = (series.get(t - 1), series.get(t));
            for (k, &(i, j)) in pairs.iter().enumerate() {
                let o = k * n_trans + (t - m);
                x_prev[o] = prev.get(i, j);
                x_next[o] = next.get(i, j);
                ctx[o] = contexts[k];
            }
        }
        Ok(Panel {
            kernel: *kernel,
            n,
            n_trans,
            pairs,
            x_prev,
            x_next,
            ctx,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Number of snapshots in the source series.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of transitions, `n - m`.
    pub fn n_trans(&self) -> usize {
        self.n_trans
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        self.pairs[k]
    }

    pub fn num_obs(&self) -> usize {
        self.x_prev.len()
    }

    #[inline]
    pub fn obs_range(&self, pair: usize) -> std::ops::Range<usize> {
        pair * self.n_trans..(pair + 1) * self.n_trans
    }

    #[inline]
    pub fn x_prev(&self, o: usize) -> bool {
        self.x_prev[o]
    }

    #[inline]
    pub fn x_next(&self, o: usize) -> bool {
        self.x_next[o]
    }

    #[inline]
    pub fn context(&self, o: usize) -> &EdgeContext {
        &self.ctx[o]
    }

    /// Pair indices of `S_l`.
    pub fn scope_pairs(&self, l: usize) -> Vec<usize> {
        let pairs = self.kernel.pairs();
        match self.kernel.scope(l) {
            ParamScope::All => (0..self.pairs.len()).collect(),
            ParamScope::Node(v) => (0..self.kernel.p())
                .filter(|&k| k != v)
                .map(|k| pairs.index(v, k))
                .collect(),
            ParamScope::Pair(k) => vec![k],
        }
    }

    /// `∪_{(i,j) ∈ S_l} I_{i,j}`, sorted.
    pub fn support(&self, l: usize) -> Vec<usize> {
        let mut seen = vec![false; self.kernel.num_params()];
        for k in self.scope_pairs(l) {
            let (i, j) = self.pairs[k];
            for &r in self.kernel.edge_params(i, j).as_slice() {
                seen[r] = true;
            }
        }
        (0..seen.len()).filter(|&r| seen[r]).collect()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.kernel.num_params() {
            return Err(ArnetError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.kernel.num_params(),
                theta.len()
            )));
        }
        if let Some(l) = theta.iter().position(|v| !v.is_finite()) {
            return Err(ArnetError::NonFinite(format!(
                "parameter {} = {}",
                self.kernel.param_name(l),
                theta[l]
            )));
        }
        Ok(())
    }
}

#[inline]
fn bernoulli_loglik(x: bool, g: f64) -> f64 {
    if x {
        g.ln()
    } else {
        (1.0 - g).ln()
    }
}

#[inline]
fn residual_weight(x: bool, g: f64) -> f64 {
    let xv = x as u8 as f64;
    (xv - g) / (g * (1.0 - g))
}

/// Derivative of [`residual_weight`] in `gamma`.
#[inline]
fn residual_slope(x: bool, g: f64) -> f64 {
    let xv = x as u8 as f64;
    let v = g * (1.0 - g);
    -1.0 / v - (xv - g) * (1.0 - 2.0 * g) / (v * v)
}

/// Sum of log-likelihood terms over the given pairs (unnormalized).
pub fn loglik_over(panel: &Panel, theta: &[f64], pairs: &[usize]) -> f64 {
    let ev = panel.kernel.evaluator(theta);
    let mut total = 0.0;
    for &k in pairs {
        let (i, j) = panel.pairs[k];
        for o in panel.obs_range(k) {
            let g = ev.gamma(i, j, &panel.ctx[o], panel.x_prev[o]);
            total += bernoulli_loglik(panel.x_next[o], g);
        }
    }
    total
}

/// Total conditional log-likelihood over all transitions (unnormalized).
pub fn full_loglik(panel: &Panel, theta: &[f64]) -> Result<f64> {
    panel.check_theta(theta)?;
    let all: Vec<usize> = (0..panel.num_pairs()).collect();
    Ok(loglik_over(panel, theta, &all))
}

/// `[(n-m)|S_l|]^{-1}` times the log-likelihood over `S_l`.
pub fn partial_loglik(panel: &Panel, l: usize, theta: &[f64]) -> Result<f64> {
    panel.check_theta(theta)?;
    check_l(panel, l)?;
    let pairs = panel.scope_pairs(l);
    Ok(loglik_over(panel, theta, &pairs) / (panel.n_trans * pairs.len()) as f64)
}

fn check_l(panel: &Panel, l: usize) -> Result<()> {
    if l >= panel.kernel.num_params() {
        return Err(ArnetError::InvalidArgument(format!(
            "parameter index {l} out of range (q = {})",
            panel.kernel.num_params()
        )));
    }
    Ok(())
}

/// Log-likelihood over `pairs` and its gradient (both unnormalized);
/// the gradient is accumulated into `grad` (length `q`). Returns the
/// log-likelihood and the number of clipped observations.
pub fn loglik_grad_over(
    panel: &Panel,
    theta: &[f64],
    pairs: &[usize],
    grad: &mut [f64],
) -> (f64, usize) {
    let ev = panel.kernel.evaluator(theta);
    let mut total = 0.0;
    let mut clipped = 0;
    for &k in pairs {
        let (i, j) = panel.pairs[k];
        let ep = panel.kernel.edge_params(i, j);
        for o in panel.obs_range(k) {
            let d = ev.derivs(i, j, &panel.ctx[o], panel.x_prev[o]);
            let x = panel.x_next[o];
            total += bernoulli_loglik(x, d.gamma);
            if d.clipped {
                clipped += 1;
                continue;
            }
            let w = residual_weight(x, d.gamma);
            for (r, &idx) in ep.as_slice().iter().enumerate() {
                grad[idx] += w * d.grad[r];
            }
        }
    }
    (total, clipped)
}

/// Score of the partial log-likelihood of `l`, a dense vector over `[q]`,
/// together with the number of clipped observations.
pub fn score_with_clips(panel: &Panel, l: usize, theta: &[f64]) -> Result<(Vec<f64>, usize)> {
    panel.check_theta(theta)?;
    check_l(panel, l)?;
    let pairs = panel.scope_pairs(l);
    let mut grad = vec![0.0; theta.len()];
    let (_, clipped) = loglik_grad_over(panel, theta, &pairs, &mut grad);
    let norm = (panel.n_trans * pairs.len()) as f64;
    grad.iter_mut().for_each(|g| *g /= norm);
    Ok((grad, clipped))
}

pub fn score(panel: &Panel, l: usize, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(score_with_clips(panel, l, theta)?.0)
}

/// The score Jacobian restricted to its support: rows and columns outside
/// `support` are identically zero.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub support: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl Jacobian {
    pub fn dense(&self, q: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(q, q);
        for (a, &r) in self.support.iter().enumerate() {
            for (b, &c) in self.support.iter().enumerate() {
                out[(r, c)] = self.matrix[(a, b)];
            }
        }
        out
    }

    pub fn position(&self, l: usize) -> Option<usize> {
        self.support.binary_search(&l).ok()
    }
}

static CACHE_STAMP: AtomicU64 = AtomicU64::new(1);

/// Per-observation `gamma` and its gradient at a fixed `theta`.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    stamp: u64,
    theta: Vec<f64>,
    gamma: Vec<f64>,
    grad: Vec<[f64; MAX_EDGE_PARAMS]>,
    clipped: Vec<bool>,
}

impl ScoreCache {
    pub fn build(panel: &Panel, theta: &[f64]) -> Result<Self> {
        panel.check_theta(theta)?;
        let ev = panel.kernel.evaluator(theta);
        let total = panel.num_obs();
        let mut gamma = Vec::with_capacity(total);
        let mut grad = Vec::with_capacity(total);
        let mut clipped = Vec::with_capacity(total);
        for k in 0..panel.num_pairs() {
            let (i, j) = panel.pairs[k];
            for o in panel.obs_range(k) {
                let d = ev.derivs(i, j, &panel.ctx[o], panel.x_prev[o]);
                gamma.push(d.gamma);
                grad.push(d.grad);
                clipped.push(d.clipped);
            }
        }
        Ok(ScoreCache {
            stamp: CACHE_STAMP.fetch_add(1, Ordering::Relaxed),
            theta: theta.to_vec(),
            gamma,
            grad,
            clipped,
        })
    }

    /// Identifies the build; distinct caches never share a stamp.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn is_for(&self, theta: &[f64]) -> bool {
        self.theta == theta
    }

    #[inline]
    pub fn gamma(&self, o: usize) -> f64 {
        self.gamma[o]
    }

    #[inline]
    pub fn grad(&self, o: usize) -> &[f64; MAX_EDGE_PARAMS] {
        &self.grad[o]
    }

    pub fn clipped_count(&self) -> usize {
        self.clipped.iter().filter(|&&c| c).count()
    }

    /// Score Jacobian of `l`, reusing the cached first derivatives.
    pub fn jacobian(&self, panel: &Panel, l: usize) -> Jacobian {
        let support = panel.support(l);
        let s = support.len();
        let q = panel.kernel.num_params();
        let mut pos = vec![usize::MAX; q];
        for (a, &r) in support.iter().enumerate() {
            pos[r] = a;
        }
        let ev = panel.kernel.evaluator(&self.theta);
        let pairs = panel.scope_pairs(l);
        let mut m = DMatrix::zeros(s, s);
        for &k in &pairs {
            let (i, j) = panel.pairs[k];
            let ep = panel.kernel.edge_params(i, j);
            let idx: Vec<usize> = ep.as_slice().iter().map(|&r| pos[r]).collect();
            let len = idx.len();
            let mut acc = [[0.0; MAX_EDGE_PARAMS]; MAX_EDGE_PARAMS];
            for o in panel.obs_range(k) {
                if self.clipped[o] {
                    continue;
                }
                let g = self.gamma[o];
                let x = panel.x_next[o];
                let c = residual_slope(x, g);
                let w = residual_weight(x, g);
                let d = &self.grad[o];
                let h = ev.hessian(i, j, &panel.ctx[o], panel.x_prev[o]);
                for r in 0..len {
                    for cc in 0..len {
                        acc[r][cc] += c * d[r] * d[cc] + w * h[r][cc];
                    }
                }
            }
            for r in 0..len {
                for cc in 0..len {
                    m[(idx[r], idx[cc])] += acc[r][cc];
                }
            }
        }
        m /= (panel.n_trans * pairs.len()) as f64;
        Jacobian { support, matrix: m }
    }

    /// `[(n-m)|S_l|]^{-1} Σ (φᵀ∂γ)² / (γ(1-γ))` over `S_l`.
    pub fn variance(&self, panel: &Panel, l: usize, phi: &[f64]) -> f64 {
        let pairs = panel.scope_pairs(l);
        let mut total = 0.0;
        for &k in &pairs {
            let (i, j) = panel.pairs[k];
            let ep = panel.kernel.edge_params(i, j);
            for o in panel.obs_range(k) {
                if self.clipped[o] {
                    continue;
                }
                let g = self.gamma[o];
                let proj: f64 = ep
                    .as_slice()
                    .iter()
                    .zip(&self.grad[o])
                    .map(|(&r, d)| phi[r] * d)
                    .sum();
                total += proj * proj / (g * (1.0 - g));
            }
        }
        total / (panel.n_trans * pairs.len()) as f64
    }
}

/// Score Jacobian of `l` at `theta`.
pub fn score_jacobian(panel: &Panel, l: usize, theta: &[f64]) -> Result<Jacobian> {
    check_l(panel, l)?;
    Ok(ScoreCache::build(panel, theta)?.jacobian(panel, l))
}

/// `ζ̂` for projection `phi` (dense over `[q]`) at `theta`.
pub fn variance_estimate(panel: &Panel, l: usize, theta: &[f64], phi: &[f64]) -> Result<f64> {
    check_l(panel, l)?;
    if phi.len() != theta.len() {
        return Err(ArnetError::InvalidArgument(
            "projection vector length differs from q".into(),
        ));
    }
    let ev = panel.kernel.evaluator(theta);
    panel.check_theta(theta)?;
    let pairs = panel.scope_pairs(l);
    let mut total = 0.0;
    for &k in &pairs {
        let (i, j) = panel.pairs[k];
        let ep = panel.kernel.edge_params(i, j);
        for o in panel.obs_range(k) {
            let d = ev.derivs(i, j, &panel.ctx[o], panel.x_prev[o]);
            if d.clipped {
                continue;
            }
            let proj: f64 = ep.as_slice().iter().zip(d.grad()).map(|(&r, g)| phi[r] * g).sum();
            total += proj * proj / (d.gamma * (1.0 - d.gamma));
        }
    }
    Ok(total / (panel.n_trans * pairs.len()) as f64)
}

/// Projected score `φᵀ score_l(θ)` restricted to the sparse `phi`.
pub fn projected_score(panel: &Panel, pairs: &[usize], ev: &Evaluator<'_>, phi: &[f64]) -> f64 {
    let mut total = 0.0;
    for &k in pairs {
        let (i, j) = panel.pairs[k];
        let ep = panel.kernel.edge_params(i, j);
        let local: [f64; MAX_EDGE_PARAMS] = {
            let mut a = [0.0; MAX_EDGE_PARAMS];
            for (r, &idx) in ep.as_slice().iter().enumerate() {
                a[r] = phi[idx];
            }
            a
        };
        if local.iter().all(|&v| v == 0.0) {
            continue;
        }
        for o in panel.obs_range(k) {
            let d = ev.derivs(i, j, &panel.ctx[o], panel.x_prev[o]);
            if d.clipped {
                continue;
            }
            let proj: f64 = local.iter().zip(&d.grad).map(|(a, b)| a * b).sum();
            total += residual_weight(panel.x_next[o], d.gamma) * proj;
        }
    }
    total / (panel.n_trans * pairs.len()) as f64
}

/// Numerator and denominator of the variance criterion used to choose `τ`:
/// `Σ_t (φᵀ g_t)²` and `(Σ_t φᵀ ∂g_t/∂θ_l)²`, with `g_t` the per-transition
/// score over `S_l`.
pub fn variance_ratio_terms(
    panel: &Panel,
    l: usize,
    theta: &[f64],
    phi: &[f64],
) -> (f64, f64) {
    let ev = panel.kernel.evaluator(theta);
    let pairs = panel.scope_pairs(l);
    let mut per_t = vec![0.0; panel.n_trans];
    let mut slope = 0.0;
    for &k in &pairs {
        let (i, j) = panel.pairs[k];
        let ep = panel.kernel.edge_params(i, j);
        let Some(pos_l) = ep.position(l) else { continue };
        let mut local = [0.0; MAX_EDGE_PARAMS];
        for (r, &idx) in ep.as_slice().iter().enumerate() {
            local[r] = phi[idx];
        }
        if local.iter().all(|&v| v == 0.0) {
            continue;
        }
        let len = ep.len();
        for (t, o) in panel.obs_range(k).enumerate() {
            let d = ev.derivs(i, j, &panel.ctx[o], panel.x_prev[o]);
            if d.clipped {
                continue;
            }
            let x = panel.x_next[o];
            let w = residual_weight(x, d.gamma);
            let proj: f64 = (0..len).map(|r| local[r] * d.grad[r]).sum();
            per_t[t] += w * proj;
            let h = ev.hessian(i, j, &panel.ctx[o], panel.x_prev[o]);
            let hproj: f64 = (0..len).map(|r| local[r] * h[r][pos_l]).sum();
            slope += residual_slope(x, d.gamma) * proj * d.grad[pos_l] + w * hproj;
        }
    }
    let s = pairs.len() as f64;
    let num = per_t.iter().map(|g| (g / s).powi(2)).sum();
    let den = (slope / s).powi(2);
    (num, den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelId;
    use crate::series::Snapshot;

    fn series(p: usize, edges_per_t: &[&[(usize, usize)]]) -> SnapshotSeries {
        let snaps = edges_per_t
            .iter()
            .map(|edges| {
                let mut s = Snapshot::empty(p);
                for &(i, j) in *edges {
                    s.set(i, j, true);
                }
                s
            })
            .collect();
        SnapshotSeries::new(snaps).unwrap()
    }

    #[test]
    fn constant_half_probability() {
        let k = Kernel::new(KernelId::GlobalAr, 4).unwrap();
        let s = series(4, &[&[(0, 1)], &[(1, 2), (0, 3)], &[]]);
        let panel = Panel::new(&k, &s).unwrap();
        let v = partial_loglik(&panel, 0, &[0.5, 0.5]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(v, partial_loglik(&panel, 1, &[0.5, 0.5]).unwrap());
    }

    #[test]
    fn single_formation() {
        let k = Kernel::new(KernelId::EdgewiseAr, 3).unwrap();
        let s = series(3, &[&[], &[(0, 1)]]);
        let panel = Panel::new(&k, &s).unwrap();
        let mut theta = vec![0.5; 6];
        theta[0] = 0.3;
        let v = partial_loglik(&panel, 0, &theta).unwrap();
        assert!((v - 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn too_few_snapshots() {
        let k = Kernel::new(KernelId::Persistence, 3).unwrap();
        let s = series(3, &[&[], &[], &[]]);
        assert!(matches!(
            Panel::new(&k, &s),
            Err(ArnetError::TooFewSnapshots { n: 3, order: 3 })
        ));
    }

    #[test]
    fn global_ar_jacobian_is_outer_product_term() {
        let k = Kernel::new(KernelId::GlobalAr, 4).unwrap();
        let s = series(4, &[&[(0, 1)], &[(1, 2), (0, 3)], &[(0, 1)], &[]]);
        let panel = Panel::new(&k, &s).unwrap();
        let theta = [0.3, 0.4];
        let jac = score_jacobian(&panel, 0, &theta).unwrap();
        let mut oracle = DMatrix::<f64>::zeros(2, 2);
        for o in 0..panel.num_obs() {
            let xp = panel.x_prev(o) as u8 as f64;
            let g = if xp == 1.0 { 0.6 } else { 0.3 };
            let x = panel.x_next(o) as u8 as f64;
            let c = -1.0 / (g * (1.0 - g)) - (x - g) * (1.0 - 2.0 * g) / (g * (1.0 - g)).powi(2);
            let d = [1.0 - xp, -xp];
            for r in 0..2 {
                for cc in 0..2 {
                    oracle[(r, cc)] += c * d[r] * d[cc];
                }
            }
        }
        oracle /= panel.num_obs() as f64;
        assert!((jac.matrix - oracle).abs().max() < 1e-14);
    }

    #[test]
    fn constant_half_variance() {
        let k = Kernel::new(KernelId::GlobalAr, 3).unwrap();
        let s = series(3, &[&[], &[(0, 1)], &[]]);
        let panel = Panel::new(&k, &s).unwrap();
        // gamma = 0.5 everywhere; dγ/dα = 1 on absent edges
        let z = variance_estimate(&panel, 0, &[0.5, 0.5], &[0.7, 0.0]).unwrap();
        // 5 of 6 observations have x_prev = 0 with φᵀ∂γ = 0.7
        assert!((z - 4.0 * 0.49 * 5.0 / 6.0).abs() < 1e-14);
        assert_eq!(variance_estimate(&panel, 0, &[0.5, 0.5], &[0.0, 0.0]).unwrap(), 0.0);
    }
}
