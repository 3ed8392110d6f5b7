#![allow(dead_code)]

use arnet_core::kernels::{Kernel, KernelId};
use arnet_core::likelihood::{partial_loglik, score, score_jacobian, Panel};
use arnet_core::numopt::projection_residual;
use arnet_core::series::{Snapshot, SnapshotSeries};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const DEPENDENT_KERNELS: [KernelId; 4] = [
    KernelId::DegreeHet,
    KernelId::Persistence,
    KernelId::Transitivity,
    KernelId::TransitivityExt,
];

pub fn random_series<R: Rng>(p: usize, n: usize, density: f64, rng: &mut R) -> SnapshotSeries {
    let snaps = (0..n)
        .map(|_| {
            let mut s = Snapshot::empty(p);
            for i in 0..p {
                for j in i + 1..p {
                    s.set(i, j, rng.gen_bool(density));
                }
            }
            s
        })
        .collect();
    SnapshotSeries::new(snaps).unwrap()
}

/// Globals in `[0, 3]` and locals in `[0.3, 0.95]`, which keeps every
/// `gamma` away from the clip.
pub fn random_theta<R: Rng>(kernel: &Kernel, rng: &mut R) -> Vec<f64> {
    (0..kernel.num_params())
        .map(|l| {
            if kernel.is_global(l) {
                rng.gen_range(0.0..3.0)
            } else {
                rng.gen_range(0.3..0.95)
            }
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Central differences with Richardson extrapolation.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|k| {
            let mut d = |step: f64| {
                y[k] = x[k] + step;
                let fp = f(&y);
                y[k] = x[k] - step;
                let fm = f(&y);
                y[k] = x[k];
                (fp - fm) / (2.0 * step)
            };
            let (d1, d2) = (d(h), d(h / 2.0));
            (4.0 * d2 - d1) / 3.0
        })
        .collect()
}

/// Worst relative errors `(score, jacobian)` of one random draw.
pub fn derivative_errors<R: Rng>(id: KernelId, rng: &mut R) -> (f64, f64) {
    let p = rng.gen_range(5..8);
    let kernel = Kernel::new(id, p).unwrap();
    let series = random_series(p, kernel.order() + 3, rng.gen_range(0.2..0.6), rng);
    let panel = Panel::new(&kernel, &series).unwrap();
    let theta = random_theta(&kernel, rng);
    let l = rng.gen_range(0..kernel.num_params());

    let s = score(&panel, l, &theta).unwrap();
    let fd = fd_gradient(|t| partial_loglik(&panel, l, t).unwrap(), &theta, 1e-4);
    let e_score = rel_err(&s, &fd);

    let q = kernel.num_params();
    let h = score_jacobian(&panel, l, &theta).unwrap().dense(q);
    let mut e_jac = 0.0f64;
    for c in 0..q {
        let col = fd_gradient(|t| score(&panel, l, t).unwrap()[c], &theta, 1e-4);
        let row: Vec<f64> = (0..q).map(|r| h[(c, r)]).collect();
        e_jac = e_jac.max(rel_err(&row, &col));
    }
    (e_score, e_jac)
}

/// Brute-force `min |u|_1` s.t. `|Hᵀu - e_l|_∞ <= τ`: in each orthant the
/// problem is an LP in `q` variables, whose optimum sits on a vertex where
/// `q` of the `4q` constraints are active.
pub fn l1_projection_by_vertices(h: &DMatrix<f64>, l: usize, tau: f64) -> Option<f64> {
    let q = h.nrows();
    let ht = h.transpose();
    // constraint rows a·u <= b
    let mut best: Option<f64> = None;
    for signs in 0..(1usize << q) {
        let s: Vec<f64> = (0..q).map(|k| if signs >> k & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for k in 0..q {
            let e = if k == l { 1.0 } else { 0.0 };
            let r: Vec<f64> = ht.row(k).iter().copied().collect();
            rows.push((r.clone(), tau + e));
            rows.push((r.iter().map(|v| -v).collect(), tau - e));
            let mut orth = vec![0.0; q];
            orth[k] = -s[k];
            rows.push((orth, 0.0));
        }
        let m = rows.len();
        let mut pick = vec![0usize; q];
        let mut visit = |idx: &[usize]| {
            let a = DMatrix::from_fn(q, q, |r, c| rows[idx[r]].0[c]);
            let b = DVector::from_iterator(q, idx.iter().map(|&r| rows[r].1));
            let Some(u) = a.lu().solve(&b) else { return };
            let ok = rows
                .iter()
                .all(|(r, b)| r.iter().zip(u.iter()).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-9);
            if ok {
                let obj: f64 = u.iter().map(|v| v.abs()).sum();
                if best.map_or(true, |b| obj < b) {
                    best = Some(obj);
                }
            }
        };
        combinations(m, q, &mut pick, 0, 0, &mut visit);
    }
    best
}

fn combinations(m: usize, k: usize, pick: &mut [usize], depth: usize, from: usize, f: &mut impl FnMut(&[usize])) {
    if depth == k {
        f(pick);
        return;
    }
    for i in from..m {
        pick[depth] = i;
        combinations(m, k, pick, depth + 1, i + 1, f);
    }
}

/// A random well-conditioned `q x q` matrix.
pub fn random_jacobian<R: Rng>(q: usize, rng: &mut R) -> DMatrix<f64> {
    let mut h = DMatrix::from_fn(q, q, |_, _| rng.gen_range(-1.0..1.0));
    for k in 0..q {
        h[(k, k)] += if rng.gen_bool(0.5) { 2.0 } else { -2.0 };
    }
    h
}

pub fn residual_ok(h: &DMatrix<f64>, l: usize, phi: &[f64], tau: f64) -> bool {
    projection_residual(h, l, phi) <= tau + 1e-8
}

/// Stationary distribution of a row-stochastic matrix, by replacing one
/// balance equation with the normalization.
pub fn stationary(pm: &DMatrix<f64>) -> DVector<f64> {
    let k = pm.nrows();
    let mut a = pm.transpose() - DMatrix::identity(k, k);
    let mut b = DVector::zeros(k);
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    b[k - 1] = 1.0;
    a.lu().solve(&b).expect("irreducible chain")
}

/// Exact transition matrix of one persistence edge on states
/// `(X^{t-1}, X^{t-2}, X^{t-3})`, encoded as `4x1 + 2x2 + x3`.
pub fn persistence_chain(a: f64, b: f64, xi2: f64, eta2: f64) -> DMatrix<f64> {
    let mut pm = DMatrix::zeros(8, 8);
    for s in 0..8 {
        let (x1, x2, x3) = ((s >> 2) & 1, (s >> 1) & 1, s & 1);
        let (f2, f3) = (x2 as f64, x3 as f64);
        let c = (1.0 - f2) + (1.0 - f2) * (1.0 - f3);
        let d = f2 + f2 * f3;
        let alpha = xi2 * (-1.0 - a * c).exp();
        let beta = eta2 * (-1.0 - b * d).exp();
        let gamma = if x1 == 1 { 1.0 - beta } else { alpha };
        let next = |x: usize| (x << 2) | (x1 << 1) | x2;
        pm[(s, next(1))] += gamma;
        pm[(s, next(0))] += 1.0 - gamma;
    }
    pm
}

/// Probability that the edge is present under the stationary law.
pub fn persistence_marginal(a: f64, b: f64, xi2: f64, eta2: f64) -> f64 {
    let pi = stationary(&persistence_chain(a, b, xi2, eta2));
    (4..8).map(|s| pi[s]).sum()
}

/// Pairwise concordance: `P(score+ > score-) + P(tie) / 2`.
pub fn concordance(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &ti) in truth.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            den += 1.0;
            num += if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

/// Row sums `v_i = Σ_{j≠i} ξ_i ξ_j`.
pub fn forward_row_sums(xi: &[f64]) -> Vec<f64> {
    let total: f64 = xi.iter().sum();
    xi.iter().map(|x| x * (total - x)).collect()
}

/// Asymptotic variance of `√n` times the time-average of the edge indicator,
/// `σ² = 2⟨f̄, Z f̄⟩_π - ⟨f̄, f̄⟩_π` with `Z = (I - P + 1πᵀ)^{-1}`.
pub fn persistence_time_average_var(a: f64, b: f64, xi2: f64, eta2: f64) -> f64 {
    let pm = persistence_chain(a, b, xi2, eta2);
    let pi = stationary(&pm);
    let mean: f64 = (4..8).map(|s| pi[s]).sum();
    let f = DVector::from_fn(8, |s, _| if s >= 4 { 1.0 - mean } else { -mean });
    let ones = DVector::from_element(8, 1.0);
    let z = (DMatrix::identity(8, 8) - &pm + &ones * pi.transpose())
        .try_inverse()
        .expect("ergodic chain");
    let zf = z * &f;
    let weighted = |u: &DVector<f64>, v: &DVector<f64>| (0..8).map(|s| pi[s] * u[s] * v[s]).sum::<f64>();
    2.0 * weighted(&f, &zf) - weighted(&f, &f)
}
