//! Built-in transition kernels.
//!
//! Every kernel maps the lagged snapshots of an edge `(i, j)` to a formation
//! probability `alpha` and a dissolution probability `beta`; the probability
//! that the edge is present at the next step is
//! `gamma = alpha + x_prev * (1 - alpha - beta)`.
//!
//! Parameter vectors are laid out as `[globals..., xi_1..xi_p, eta_1..eta_p]`
//! for the node-level kernels, `[alpha, beta]` for `global_ar`, and
//! `[alpha_pairs..., beta_pairs...]` for `edgewise_ar`.
//!
//! The extended transitivity kernel (separate `a`/`b` in the formation and
//! dissolution terms) is ill-conditioned on sparse data: the dissolution-side
//! globals are estimated from the few present edges only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};
use crate::series::{Pairs, Snapshot};

/// Largest `|I_{i,j}|` over the built-in kernels.
pub const MAX_EDGE_PARAMS: usize = 8;

/// Default probability floor applied to `alpha`, `beta` and `gamma`.
pub const DEFAULT_CLIP: f64 = 1e-6;

pub type EdgeHessian = [[f64; MAX_EDGE_PARAMS]; MAX_EDGE_PARAMS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelId {
    DegreeHet,
    Persistence,
    Transitivity,
    TransitivityExt,
    GlobalAr,
    EdgewiseAr,
}

impl KernelId {
    pub const ALL: [KernelId; 6] = [
        KernelId::DegreeHet,
        KernelId::Persistence,
        KernelId::Transitivity,
        KernelId::TransitivityExt,
        KernelId::GlobalAr,
        KernelId::EdgewiseAr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelId::DegreeHet => "degree_het",
            KernelId::Persistence => "persistence",
            KernelId::Transitivity => "transitivity",
            KernelId::TransitivityExt => "transitivity_ext",
            KernelId::GlobalAr => "global_ar",
            KernelId::EdgewiseAr => "edgewise_ar",
        }
    }

    /// Names of the global parameters, in vector order.
    pub fn global_names(&self) -> &'static [&'static str] {
        match self {
            KernelId::DegreeHet => &["a0", "a1", "b0", "b1"],
            KernelId::Persistence | KernelId::Transitivity => &["a", "b"],
            KernelId::TransitivityExt => &["a1", "b1", "a2", "b2"],
            KernelId::GlobalAr => &["alpha", "beta"],
            KernelId::EdgewiseAr => &[],
        }
    }

    /// Lag order `m`.
    pub fn order(&self) -> usize {
        match self {
            KernelId::Persistence => 3,
            _ => 1,
        }
    }

    /// Whether the kernel has node-level `xi`/`eta` parameters.
    pub fn has_node_params(&self) -> bool {
        !matches!(self, KernelId::GlobalAr | KernelId::EdgewiseAr)
    }

    /// Whether `alpha = xi_i xi_j f(globals)` and `beta = eta_i eta_j g(globals)`
    /// with first-order lags, the structure the method of moments relies on.
    pub fn is_separable(&self) -> bool {
        matches!(
            self,
            KernelId::DegreeHet | KernelId::Transitivity | KernelId::TransitivityExt
        )
    }

    /// Whether edges depend on other edges of the lagged snapshots.
    pub fn has_edge_dependence(&self) -> bool {
        matches!(
            self,
            KernelId::DegreeHet | KernelId::Transitivity | KernelId::TransitivityExt
        )
    }

    fn min_nodes(&self) -> usize {
        match self {
            KernelId::DegreeHet => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelId {
    type Err = ArnetError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        KernelId::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ArnetError::UnknownKernel(s.to_string()))
    }
}

/// Which edges a parameter acts on (`S_l`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    /// Every unordered pair: a global parameter.
    All,
    /// Pairs incident to a node (0-based).
    Node(usize),
    /// A single pair (index into [`Pairs`]).
    Pair(usize),
}

/// Indices `I_{i,j}` of the parameters entering one edge, in the order used by
/// edge-level gradients and Hessians.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeParams {
    idx: [usize; MAX_EDGE_PARAMS],
    len: usize,
}

impl EdgeParams {
    fn from_slice(s: &[usize]) -> Self {
        let mut idx = [0; MAX_EDGE_PARAMS];
        idx[..s.len()].copy_from_slice(s);
        EdgeParams { idx, len: s.len() }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.idx[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn position(&self, l: usize) -> Option<usize> {
        self.as_slice().iter().position(|&k| k == l)
    }
}

/// Lagged-snapshot statistics an edge transition depends on. Counts are kept
/// as integers so the normalized statistics are exact rationals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeContext {
    /// No statistics (edge-independent kernels).
    Plain,
    /// Common and disjoint neighbour counts of `i` and `j` in `X_{t-1}`.
    Transitivity { common: u32, disjoint: u32 },
    /// Degrees of `i`, `j` and the number of ordered adjacent pairs among the
    /// remaining `p - 2` nodes, all in `X_{t-1}`.
    Degree { deg_i: u32, deg_j: u32, others: u32 },
    /// `X_{i,j}^{t-2}` and `X_{i,j}^{t-3}`.
    Persistence { lag2: bool, lag3: bool },
}

impl EdgeContext {
    /// `(U, V)` for a transitivity context on `p` nodes.
    pub fn uv(&self, p: usize) -> Option<(f64, f64)> {
        match *self {
            EdgeContext::Transitivity { common, disjoint } => {
                let d = (p - 2) as f64;
                Some((common as f64 / d, disjoint as f64 / d))
            }
            _ => None,
        }
    }

    /// `(D_i, D_j, D_{-i,-j})` for a degree context on `p` nodes.
    pub fn degrees(&self, p: usize) -> Option<(f64, f64, f64)> {
        match *self {
            EdgeContext::Degree {
                deg_i,
                deg_j,
                others,
            } => {
                let d1 = (p - 1) as f64;
                let d2 = ((p - 2) * (p - 3)) as f64;
                Some((deg_i as f64 / d1, deg_j as f64 / d1, others as f64 / d2))
            }
            _ => None,
        }
    }
}

/// Normalized common (`U`) and disjoint (`V`) neighbour statistics of `(i, j)`.
pub fn uv_stats(snapshot: &Snapshot, i: usize, j: usize) -> Result<(f64, f64)> {
    let p = snapshot.p();
    if i == j || i >= p || j >= p {
        return Err(ArnetError::InvalidArgument(format!(
            "uv_stats needs two distinct nodes in [0, {p}), got ({i}, {j})"
        )));
    }
    let (mut common, mut disjoint) = (0usize, 0usize);
    for k in (0..p).filter(|&k| k != i && k != j) {
        let (a, b) = (snapshot.get(i, k), snapshot.get(j, k));
        common += (a && b) as usize;
        disjoint += (a != b) as usize;
    }
    let d = (p - 2) as f64;
    Ok((common as f64 / d, disjoint as f64 / d))
}

/// Normalized degrees of `i` and `j` and the average degree among the other
/// nodes, `(D_i, D_j, D_{-i,-j})`.
pub fn degree_stats(snapshot: &Snapshot, i: usize, j: usize) -> Result<(f64, f64, f64)> {
    let p = snapshot.p();
    if p < 4 {
        return Err(ArnetError::InvalidArgument(format!(
            "degree statistics need p >= 4, got p = {p}"
        )));
    }
    if i == j || i >= p || j >= p {
        return Err(ArnetError::InvalidArgument(format!(
            "degree_stats needs two distinct nodes in [0, {p}), got ({i}, {j})"
        )));
    }
    let d1 = (p - 1) as f64;
    let di = snapshot.degree(i) as f64 / d1;
    let dj = snapshot.degree(j) as f64 / d1;
    let mut others = 0usize;
    for k in (0..p).filter(|&k| k != i && k != j) {
        for l in (0..p).filter(|&l| l != i && l != j && l != k) {
            others += snapshot.get(k, l) as usize;
        }
    }
    Ok((di, dj, others as f64 / ((p - 2) * (p - 3)) as f64))
}

/// `gamma = alpha` when the edge is absent, `1 - beta` when present, clipped
/// into `[clip, 1 - clip]`.
#[inline]
pub fn gamma(alpha: f64, beta: f64, x_prev: bool, clip: f64) -> f64 {
    let g = if x_prev { 1.0 - beta } else { alpha };
    g.clamp(clip, 1.0 - clip)
}

/// `gamma` and its gradient over `I_{i,j}`.
#[derive(Debug, Clone, Copy)]
pub struct GammaDerivs {
    pub gamma: f64,
    pub grad: [f64; MAX_EDGE_PARAMS],
    pub len: usize,
    /// The relevant probability hit the clip; `grad` is zero then.
    pub clipped: bool,
}

impl GammaDerivs {
    pub fn grad(&self) -> &[f64] {
        &self.grad[..self.len]
    }
}

/// Unclipped formation/dissolution probabilities and their gradients.
#[derive(Debug, Clone, Copy)]
struct RawTerms {
    alpha: f64,
    beta: f64,
    d_alpha: [f64; MAX_EDGE_PARAMS],
    d_beta: [f64; MAX_EDGE_PARAMS],
}

/// A kernel bound to a node count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    id: KernelId,
    p: usize,
    clip: f64,
}

impl Kernel {
    pub fn new(id: KernelId, p: usize) -> Result<Self> {
        if p < id.min_nodes() {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {id} needs p >= {}, got p = {p}",
                id.min_nodes()
            )));
        }
        Ok(Kernel {
            id,
            p,
            clip: DEFAULT_CLIP,
        })
    }

    pub fn with_clip(mut self, clip: f64) -> Result<Self> {
        if !(clip > 0.0 && clip <= 0.01) {
            return Err(ArnetError::InvalidArgument(format!(
                "clip must lie in (0, 0.01], got {clip}"
            )));
        }
        self.clip = clip;
        Ok(self)
    }

    pub fn id(&self) -> KernelId {
        self.id
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn order(&self) -> usize {
        self.id.order()
    }

    pub fn pairs(&self) -> Pairs {
        Pairs::new(self.p)
    }

    pub fn num_globals(&self) -> usize {
        self.id.global_names().len()
    }

    /// Total parameter count `q`.
    pub fn num_params(&self) -> usize {
        match self.id {
            KernelId::EdgewiseAr => self.p * (self.p - 1),
            KernelId::GlobalAr => 2,
            _ => self.num_globals() + 2 * self.p,
        }
    }

    pub fn is_global(&self, l: usize) -> bool {
        l < self.num_globals()
    }

    /// Offset of `xi_1` in the parameter vector.
    pub fn xi_offset(&self) -> usize {
        self.num_globals()
    }

    /// Offset of `eta_1` in the parameter vector.
    pub fn eta_offset(&self) -> usize {
        self.num_globals() + self.p
    }

    pub fn param_name(&self, l: usize) -> String {
        let g = self.num_globals();
        match self.id {
            KernelId::EdgewiseAr => {
                let np = self.pairs().count();
                let (kind, k) = if l < np { ("alpha", l) } else { ("beta", l - np) };
                let (i, j) = self.pairs().iter().nth(k).expect("pair index in range");
                format!("{kind}_{}_{}", i + 1, j + 1)
            }
            _ if l < g => self.id.global_names()[l].to_string(),
            _ if l < g + self.p => format!("xi_{}", l - g + 1),
            _ => format!("eta_{}", l - g - self.p + 1),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.num_params()).map(|l| self.param_name(l)).collect()
    }

    /// `S_l` in compact form.
    pub fn scope(&self, l: usize) -> ParamScope {
        let g = self.num_globals();
        match self.id {
            KernelId::EdgewiseAr => ParamScope::Pair(l % self.pairs().count()),
            _ if l < g => ParamScope::All,
            _ if l < g + self.p => ParamScope::Node(l - g),
            _ => ParamScope::Node(l - g - self.p),
        }
    }

    /// `|S_l|`.
    pub fn scope_size(&self, l: usize) -> usize {
        match self.scope(l) {
            ParamScope::All => self.pairs().count(),
            ParamScope::Node(_) => self.p - 1,
            ParamScope::Pair(_) => 1,
        }
    }

    /// `I_{i,j}` for the unordered pair `{i, j}`.
    pub fn edge_params(&self, i: usize, j: usize) -> EdgeParams {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let (xi, eta) = (self.xi_offset(), self.eta_offset());
        match self.id {
            KernelId::GlobalAr => EdgeParams::from_slice(&[0, 1]),
            KernelId::EdgewiseAr => {
                let k = self.pairs().index(i, j);
                EdgeParams::from_slice(&[k, self.pairs().count() + k])
            }
            KernelId::Transitivity | KernelId::Persistence => {
                EdgeParams::from_slice(&[0, 1, xi + i, xi + j, eta + i, eta + j])
            }
            KernelId::DegreeHet | KernelId::TransitivityExt => {
                EdgeParams::from_slice(&[0, 1, 2, 3, xi + i, xi + j, eta + i, eta + j])
            }
        }
    }

    /// Admissible box for parameter `l`.
    pub fn bounds(&self, l: usize) -> (f64, f64) {
        match self.id {
            KernelId::GlobalAr | KernelId::EdgewiseAr => (self.clip, 1.0 - self.clip),
            _ if self.is_global(l) => match self.id {
                KernelId::Persistence => (0.0, 20.0),
                _ => (0.0, 100.0),
            },
            _ => (1e-4, 10.0),
        }
    }

    /// Statistics of `(i, j)` given lags `[X_{t-1}, X_{t-2}, ...]`.
    pub fn context(&self, lags: &[&Snapshot], i: usize, j: usize) -> Result<EdgeContext> {
        if lags.len() < self.order() {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {} needs {} lagged snapshots, got {}",
                self.id,
                self.order(),
                lags.len()
            )));
        }
        let x = lags[0];
        let p = self.p;
        Ok(match self.id {
            KernelId::Transitivity | KernelId::TransitivityExt => {
                let (u, v) = uv_stats(x, i, j)?;
                let d = (p - 2) as f64;
                EdgeContext::Transitivity {
                    common: (u * d).round() as u32,
                    disjoint: (v * d).round() as u32,
                }
            }
            KernelId::DegreeHet => {
                let (di, dj, dm) = degree_stats(x, i, j)?;
                EdgeContext::Degree {
                    deg_i: (di * (p - 1) as f64).round() as u32,
                    deg_j: (dj * (p - 1) as f64).round() as u32,
                    others: (dm * ((p - 2) * (p - 3)) as f64).round() as u32,
                }
            }
            KernelId::Persistence => EdgeContext::Persistence {
                lag2: lags[1].get(i, j),
                lag3: lags[2].get(i, j),
            },
            KernelId::GlobalAr | KernelId::EdgewiseAr => EdgeContext::Plain,
        })
    }

    /// Contexts of every pair (in [`Pairs`] order) for one transition.
    pub fn contexts(&self, lags: &[&Snapshot]) -> Vec<EdgeContext> {
        let pairs = self.pairs();
        let p = self.p;
        match self.id {
            KernelId::Transitivity | KernelId::TransitivityExt => {
                let x = lags[0];
                let cn = x.common_neighbour_matrix();
                let deg = x.degrees();
                pairs
                    .iter()
                    .map(|(i, j)| {
                        let common = cn[i * p + j];
                        let xij = x.get(i, j) as u32;
                        let disjoint =
                            (deg[i] as u32 - xij) + (deg[j] as u32 - xij) - 2 * common;
                        EdgeContext::Transitivity { common, disjoint }
                    })
                    .collect()
            }
            KernelId::DegreeHet => {
                let x = lags[0];
                let deg = x.degrees();
                let edges = x.edge_count() as u32;
                pairs
                    .iter()
                    .map(|(i, j)| {
                        let rest = edges + x.get(i, j) as u32 - deg[i] as u32 - deg[j] as u32;
                        EdgeContext::Degree {
                            deg_i: deg[i] as u32,
                            deg_j: deg[j] as u32,
                            others: 2 * rest,
                        }
                    })
                    .collect()
            }
            KernelId::Persistence => pairs
                .iter()
                .map(|(i, j)| EdgeContext::Persistence {
                    lag2: lags[1].get(i, j),
                    lag3: lags[2].get(i, j),
                })
                .collect(),
            KernelId::GlobalAr | KernelId::EdgewiseAr => {
                vec![EdgeContext::Plain; pairs.count()]
            }
        }
    }

    fn check_context(&self, ctx: &EdgeContext) -> Result<()> {
        let ok = match self.id {
            KernelId::Transitivity | KernelId::TransitivityExt => {
                matches!(ctx, EdgeContext::Transitivity { .. })
            }
            KernelId::DegreeHet => matches!(ctx, EdgeContext::Degree { .. }),
            KernelId::Persistence => matches!(ctx, EdgeContext::Persistence { .. }),
            KernelId::GlobalAr | KernelId::EdgewiseAr => true,
        };
        if ok {
            Ok(())
        } else {
            Err(ArnetError::ContextMismatch {
                expected: self.id.as_str(),
            })
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {} on p = {} has {} parameters, got {}",
                self.id,
                self.p,
                self.num_params(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// Evaluator bound to a parameter vector. The vector length is not
    /// checked here; use the checked `alpha_beta`/`gamma_*` methods for
    /// untrusted input.
    pub fn evaluator<'a>(&'a self, theta: &'a [f64]) -> Evaluator<'a> {
        Evaluator::new(self, theta)
    }

    /// Clipped `(alpha, beta)` of edge `(i, j)`.
    pub fn alpha_beta(
        &self,
        theta: &[f64],
        i: usize,
        j: usize,
        ctx: &EdgeContext,
    ) -> Result<(f64, f64)> {
        self.check_theta(theta)?;
        self.check_context(ctx)?;
        Ok(self.evaluator(theta).alpha_beta(i, j, ctx))
    }

    pub fn gamma_grad(
        &self,
        theta: &[f64],
        i: usize,
        j: usize,
        ctx: &EdgeContext,
        x_prev: bool,
    ) -> Result<GammaDerivs> {
        self.check_theta(theta)?;
        self.check_context(ctx)?;
        Ok(self.evaluator(theta).derivs(i, j, ctx, x_prev))
    }

    /// Hessian of `gamma` over `I_{i,j}` (top-left `len x len` block).
    pub fn gamma_hess(
        &self,
        theta: &[f64],
        i: usize,
        j: usize,
        ctx: &EdgeContext,
        x_prev: bool,
    ) -> Result<EdgeHessian> {
        self.check_theta(theta)?;
        self.check_context(ctx)?;
        Ok(self.evaluator(theta).hessian(i, j, ctx, x_prev))
    }

    /// The separable factors `(f, g)` with `alpha = xi_i xi_j f` and
    /// `beta = eta_i eta_j g`, evaluated at the global block `globals`.
    pub fn separable_factors(&self, globals: &[f64], ctx: &EdgeContext) -> Result<(f64, f64)> {
        if !self.id.is_separable() {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {} is not separable",
                self.id
            )));
        }
        self.check_context(ctx)?;
        let mut vals = [0.0; MAX_EDGE_PARAMS];
        let g = self.num_globals();
        vals[..g].copy_from_slice(&globals[..g]);
        for v in &mut vals[g..g + 4] {
            *v = 1.0;
        }
        let t = self.raw_terms(&vals, ctx, None);
        Ok((t.alpha, t.beta))
    }

    fn raw_terms(
        &self,
        vals: &[f64; MAX_EDGE_PARAMS],
        ctx: &EdgeContext,
        tables: Option<&ExpTables>,
    ) -> RawTerms {
        let mut d_alpha = [0.0; MAX_EDGE_PARAMS];
        let mut d_beta = [0.0; MAX_EDGE_PARAMS];
        let p = self.p;
        match (self.id, *ctx) {
            (KernelId::GlobalAr, _) | (KernelId::EdgewiseAr, _) => {
                d_alpha[0] = 1.0;
                d_beta[1] = 1.0;
                RawTerms {
                    alpha: vals[0],
                    beta: vals[1],
                    d_alpha,
                    d_beta,
                }
            }
            (KernelId::Transitivity, EdgeContext::Transitivity { common, disjoint }) => {
                let d = (p - 2) as f64;
                let (u, v) = (common as f64 / d, disjoint as f64 / d);
                let [a, b, xi_i, xi_j, eta_i, eta_j, ..] = *vals;
                let (ea, eb) = match tables {
                    Some(t) => (t.a1[common as usize], t.b1[disjoint as usize]),
                    None => ((a * u).exp(), (b * v).exp()),
                };
                let z = 1.0 + ea + eb;
                let (s, r) = (ea / z, eb / z);
                let big_xi = xi_i * xi_j;
                let big_eta = eta_i * eta_j;
                d_alpha[0] = big_xi * u * s * (1.0 - s);
                d_alpha[1] = -big_xi * v * s * r;
                d_alpha[2] = xi_j * s;
                d_alpha[3] = xi_i * s;
                d_beta[0] = -big_eta * u * s * r;
                d_beta[1] = big_eta * v * r * (1.0 - r);
                d_beta[4] = eta_j * r;
                d_beta[5] = eta_i * r;
                RawTerms {
                    alpha: big_xi * s,
                    beta: big_eta * r,
                    d_alpha,
                    d_beta,
                }
            }
            (KernelId::TransitivityExt, EdgeContext::Transitivity { common, disjoint }) => {
                let d = (p - 2) as f64;
                let (u, v) = (common as f64 / d, disjoint as f64 / d);
                let [a1, b1, a2, b2, xi_i, xi_j, eta_i, eta_j] = *vals;
                let (ea1, eb1, ea2, eb2) = match tables {
                    Some(t) => (
                        t.a1[common as usize],
                        t.b1[disjoint as usize],
                        t.a2[common as usize],
                        t.b2[disjoint as usize],
                    ),
                    None => ((a1 * u).exp(), (b1 * v).exp(), (a2 * u).exp(), (b2 * v).exp()),
                };
                let z1 = 1.0 + ea1 + eb1;
                let (s1, r1) = (ea1 / z1, eb1 / z1);
                let z2 = 1.0 + ea2 + eb2;
                let (s2, r2) = (ea2 / z2, eb2 / z2);
                let big_xi = xi_i * xi_j;
                let big_eta = eta_i * eta_j;
                d_alpha[0] = big_xi * u * s1 * (1.0 - s1);
                d_alpha[1] = -big_xi * v * s1 * r1;
                d_alpha[4] = xi_j * s1;
                d_alpha[5] = xi_i * s1;
                d_beta[2] = -big_eta * u * s2 * r2;
                d_beta[3] = big_eta * v * r2 * (1.0 - r2);
                d_beta[6] = eta_j * r2;
                d_beta[7] = eta_i * r2;
                RawTerms {
                    alpha: big_xi * s1,
                    beta: big_eta * r2,
                    d_alpha,
                    d_beta,
                }
            }
            (
                KernelId::DegreeHet,
                EdgeContext::Degree {
                    deg_i,
                    deg_j,
                    others,
                },
            ) => {
                let d1 = (p - 1) as f64;
                let (di, dj) = (deg_i as f64 / d1, deg_j as f64 / d1);
                let dm = others as f64 / ((p - 2) * (p - 3)) as f64;
                let [a0, a1, b0, b1, xi_i, xi_j, eta_i, eta_j] = *vals;
                let form = (a0 * dm + a1 * (di + dj)).exp();
                let diss = (b0 * (1.0 - dm) + b1 * (2.0 - di - dj)).exp();
                let z = 1.0 + form + diss;
                let (s, r) = (form / z, diss / z);
                let big_xi = xi_i * xi_j;
                let big_eta = eta_i * eta_j;
                let ca = [dm, di + dj];
                let cb = [1.0 - dm, 2.0 - di - dj];
                for k in 0..2 {
                    d_alpha[k] = big_xi * ca[k] * s * (1.0 - s);
                    d_alpha[2 + k] = -big_xi * cb[k] * s * r;
                    d_beta[k] = -big_eta * ca[k] * s * r;
                    d_beta[2 + k] = big_eta * cb[k] * r * (1.0 - r);
                }
                d_alpha[4] = xi_j * s;
                d_alpha[5] = xi_i * s;
                d_beta[6] = eta_j * r;
                d_beta[7] = eta_i * r;
                RawTerms {
                    alpha: big_xi * s,
                    beta: big_eta * r,
                    d_alpha,
                    d_beta,
                }
            }
            (KernelId::Persistence, EdgeContext::Persistence { lag2, lag3 }) => {
                let (x2, x3) = (lag2 as u8 as f64, lag3 as u8 as f64);
                let c = (1.0 - x2) + (1.0 - x2) * (1.0 - x3);
                let dd = x2 + x2 * x3;
                let [a, b, xi_i, xi_j, eta_i, eta_j, ..] = *vals;
                let ea = (-1.0 - a * c).exp();
                let eb = (-1.0 - b * dd).exp();
                let alpha = xi_i * xi_j * ea;
                let beta = eta_i * eta_j * eb;
                d_alpha[0] = -c * alpha;
                d_alpha[2] = xi_j * ea;
                d_alpha[3] = xi_i * ea;
                d_beta[1] = -dd * beta;
                d_beta[4] = eta_j * eb;
                d_beta[5] = eta_i * eb;
                RawTerms {
                    alpha,
                    beta,
                    d_alpha,
                    d_beta,
                }
            }
            _ => unreachable!("context validated against kernel"),
        }
    }
}

/// `exp(c * k / (p - 2))` for every neighbour count `k`, per global
/// coefficient of the transitivity kernels.
#[derive(Debug, Clone)]
struct ExpTables {
    a1: Vec<f64>,
    b1: Vec<f64>,
    a2: Vec<f64>,
    b2: Vec<f64>,
}

impl ExpTables {
    fn build(p: usize, coefs: [f64; 4]) -> Self {
        let d = (p - 2) as f64;
        let table = |c: f64| (0..=p - 2).map(|k| (c * k as f64 / d).exp()).collect();
        ExpTables {
            a1: table(coefs[0]),
            b1: table(coefs[1]),
            a2: table(coefs[2]),
            b2: table(coefs[3]),
        }
    }
}

/// A kernel bound to a parameter vector, with per-`theta` precomputation.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    kernel: &'a Kernel,
    theta: &'a [f64],
    tables: Option<ExpTables>,
}

impl<'a> Evaluator<'a> {
    fn new(kernel: &'a Kernel, theta: &'a [f64]) -> Self {
        let tables = match kernel.id {
            KernelId::Transitivity => {
                Some(ExpTables::build(kernel.p, [theta[0], theta[1], 0.0, 0.0]))
            }
            KernelId::TransitivityExt => Some(ExpTables::build(
                kernel.p,
                [theta[0], theta[1], theta[2], theta[3]],
            )),
            _ => None,
        };
        Evaluator {
            kernel,
            theta,
            tables,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }

    pub fn theta(&self) -> &[f64] {
        self.theta
    }

    #[inline]
    fn local_values(&self, ep: &EdgeParams) -> [f64; MAX_EDGE_PARAMS] {
        let mut vals = [0.0; MAX_EDGE_PARAMS];
        for (v, &k) in vals.iter_mut().zip(ep.as_slice()) {
            *v = self.theta[k];
        }
        vals
    }

    #[inline]
    fn raw(&self, i: usize, j: usize, ctx: &EdgeContext) -> (EdgeParams, RawTerms) {
        let ep = self.kernel.edge_params(i, j);
        let vals = self.local_values(&ep);
        (ep, self.kernel.raw_terms(&vals, ctx, self.tables.as_ref()))
    }

    pub fn alpha_beta(&self, i: usize, j: usize, ctx: &EdgeContext) -> (f64, f64) {
        let (_, t) = self.raw(i, j, ctx);
        let c = self.kernel.clip;
        (t.alpha.clamp(c, 1.0 - c), t.beta.clamp(c, 1.0 - c))
    }

    #[inline]
    pub fn gamma(&self, i: usize, j: usize, ctx: &EdgeContext, x_prev: bool) -> f64 {
        let (_, t) = self.raw(i, j, ctx);
        gamma(t.alpha, t.beta, x_prev, self.kernel.clip)
    }

    /// Transition probability without the probability floor, bounded to
    /// `[0, 1]`. Used for simulation so that degenerate chains stay exact.
    #[inline]
    pub fn transition_probability(&self, i: usize, j: usize, ctx: &EdgeContext, x_prev: bool) -> f64 {
        let (_, t) = self.raw(i, j, ctx);
        let g = if x_prev { 1.0 - t.beta } else { t.alpha };
        g.clamp(0.0, 1.0)
    }

    #[inline]
    pub fn derivs(&self, i: usize, j: usize, ctx: &EdgeContext, x_prev: bool) -> GammaDerivs {
        let (ep, t) = self.raw(i, j, ctx);
        clip_derivs(&t, ep.len(), x_prev, self.kernel.clip)
    }

    /// Hessian of `gamma` over `I_{i,j}`: closed form for the transitivity
    /// and edge-independent kernels, central differences of the gradient
    /// otherwise.
    pub fn hessian(&self, i: usize, j: usize, ctx: &EdgeContext, x_prev: bool) -> EdgeHessian {
        let ep = self.kernel.edge_params(i, j);
        let vals = self.local_values(&ep);
        let base = self.kernel.raw_terms(&vals, ctx, self.tables.as_ref());
        let clip = self.kernel.clip;
        let mut h = [[0.0; MAX_EDGE_PARAMS]; MAX_EDGE_PARAMS];
        if clip_derivs(&base, ep.len(), x_prev, clip).clipped {
            return h;
        }
        match (self.kernel.id, *ctx) {
            (KernelId::GlobalAr | KernelId::EdgewiseAr, _) => h,
            (KernelId::Transitivity, EdgeContext::Transitivity { common, disjoint }) => {
                let d = (self.kernel.p - 2) as f64;
                transitivity_hessian(&vals, common as f64 / d, disjoint as f64 / d, x_prev)
            }
            _ => {
                let len = ep.len();
                for k in 0..len {
                    let step = 1e-5 * vals[k].abs().max(1.0);
                    let mut plus = vals;
                    let mut minus = vals;
                    plus[k] += step;
                    minus[k] -= step;
                    let gp = self.kernel.raw_terms(&plus, ctx, None);
                    let gm = self.kernel.raw_terms(&minus, ctx, None);
                    for r in 0..len {
                        let (dp, dm) = if x_prev {
                            (-gp.d_beta[r], -gm.d_beta[r])
                        } else {
                            (gp.d_alpha[r], gm.d_alpha[r])
                        };
                        h[r][k] = (dp - dm) / (2.0 * step);
                    }
                }
                for r in 0..len {
                    for k in r + 1..len {
                        let avg = 0.5 * (h[r][k] + h[k][r]);
                        h[r][k] = avg;
                        h[k][r] = avg;
                    }
                }
                h
            }
        }
    }
}

#[inline]
fn clip_derivs(t: &RawTerms, len: usize, x_prev: bool, clip: f64) -> GammaDerivs {
    let mut grad = [0.0; MAX_EDGE_PARAMS];
    let (raw, clipped) = if x_prev {
        let clipped = t.beta < clip || t.beta > 1.0 - clip;
        if !clipped {
            for k in 0..len {
                grad[k] = -t.d_beta[k];
            }
        }
        (1.0 - t.beta, clipped)
    } else {
        let clipped = t.alpha < clip || t.alpha > 1.0 - clip;
        if !clipped {
            grad[..len].copy_from_slice(&t.d_alpha[..len]);
        }
        (t.alpha, clipped)
    };
    GammaDerivs {
        gamma: raw.clamp(clip, 1.0 - clip),
        grad,
        len,
        clipped,
    }
}

fn transitivity_hessian(vals: &[f64; MAX_EDGE_PARAMS], u: f64, v: f64, x_prev: bool) -> EdgeHessian {
    let [a, b, xi_i, xi_j, eta_i, eta_j, ..] = *vals;
    let ea = (a * u).exp();
    let eb = (b * v).exp();
    let z = 1.0 + ea + eb;
    let (s, r) = (ea / z, eb / z);
    let mut h = [[0.0; MAX_EDGE_PARAMS]; MAX_EDGE_PARAMS];
    let mut put = |r_: usize, c_: usize, val: f64| {
        h[r_][c_] = val;
        h[c_][r_] = val;
    };
    if !x_prev {
        let big = xi_i * xi_j;
        let s_a = u * s * (1.0 - s);
        let s_b = -v * s * r;
        put(0, 0, big * u * u * s * (1.0 - s) * (1.0 - 2.0 * s));
        put(0, 1, -big * u * v * s * r * (1.0 - 2.0 * s));
        put(1, 1, -big * v * v * s * r * (1.0 - 2.0 * r));
        put(0, 2, xi_j * s_a);
        put(0, 3, xi_i * s_a);
        put(1, 2, xi_j * s_b);
        put(1, 3, xi_i * s_b);
        put(2, 3, s);
    } else {
        // gamma = 1 - beta
        let big = eta_i * eta_j;
        let r_a = -u * s * r;
        let r_b = v * r * (1.0 - r);
        put(0, 0, big * u * u * s * r * (1.0 - 2.0 * s));
        put(0, 1, big * u * v * s * r * (1.0 - 2.0 * r));
        put(1, 1, -big * v * v * r * (1.0 - r) * (1.0 - 2.0 * r));
        put(0, 4, -eta_j * r_a);
        put(0, 5, -eta_i * r_a);
        put(1, 4, -eta_j * r_b);
        put(1, 5, -eta_i * r_b);
        put(4, 5, -r);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snapshot(p: usize, edges: &[(usize, usize)]) -> Snapshot {
        let mut s = Snapshot::empty(p);
        for &(i, j) in edges {
            s.set(i, j, true);
        }
        s
    }

    fn random_snapshot(rng: &mut ChaCha8Rng, p: usize, rho: f64) -> Snapshot {
        let mut s = Snapshot::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                s.set(i, j, rng.gen_bool(rho));
            }
        }
        s
    }

    #[test]
    fn kernel_ids_parse() {
        for id in KernelId::ALL {
            assert_eq!(id.as_str().parse::<KernelId>().unwrap(), id);
        }
        assert!(matches!(
            "triangle".parse::<KernelId>(),
            Err(ArnetError::UnknownKernel(_))
        ));
    }

    #[test]
    fn uv_examples() {
        assert_eq!(uv_stats(&Snapshot::complete(4), 0, 1).unwrap(), (1.0, 0.0));
        assert_eq!(uv_stats(&Snapshot::empty(4), 0, 1).unwrap(), (0.0, 0.0));
        // path 1-2-3
        let path = snapshot(3, &[(0, 1), (1, 2)]);
        assert_eq!(uv_stats(&path, 0, 1).unwrap(), (0.0, 1.0));
        assert!(uv_stats(&path, 1, 1).is_err());
    }

    #[test]
    fn degree_examples() {
        assert_eq!(degree_stats(&Snapshot::complete(5), 0, 1).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(degree_stats(&Snapshot::empty(5), 0, 1).unwrap(), (0.0, 0.0, 0.0));
        let s = snapshot(4, &[(2, 3)]);
        assert_eq!(degree_stats(&s, 0, 1).unwrap(), (0.0, 0.0, 1.0));
        assert!(degree_stats(&Snapshot::empty(3), 0, 1).is_err());
        assert!(Kernel::new(KernelId::DegreeHet, 3).is_err());
    }

    #[test]
    fn batch_contexts_match_single_edge_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [4usize, 7, 12] {
            let lags: Vec<Snapshot> = (0..3).map(|_| random_snapshot(&mut rng, p, 0.4)).collect();
            let lag_refs: Vec<&Snapshot> = lags.iter().collect();
            for id in KernelId::ALL {
                let k = Kernel::new(id, p).unwrap();
                let batch = k.contexts(&lag_refs);
                for (idx, (i, j)) in k.pairs().iter().enumerate() {
                    assert_eq!(batch[idx], k.context(&lag_refs, i, j).unwrap(), "{id} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(0.3, 0.4, false, 1e-6), 0.3);
        assert!((gamma(0.3, 0.4, true, 1e-6) - 0.6).abs() < 1e-15);
        assert_eq!(gamma(0.3, 1.0, true, 1e-6), 1e-6);
    }

    #[test]
    fn transitivity_at_zero_globals() {
        let k = Kernel::new(KernelId::Transitivity, 4).unwrap();
        let mut theta = vec![0.0; k.num_params()];
        for l in 0..4 {
            theta[k.xi_offset() + l] = 1.0;
            theta[k.eta_offset() + l] = 0.9;
        }
        for ctx in [
            EdgeContext::Transitivity { common: 0, disjoint: 0 },
            EdgeContext::Transitivity { common: 1, disjoint: 1 },
            EdgeContext::Transitivity { common: 2, disjoint: 0 },
        ] {
            let (a, b) = k.alpha_beta(&theta, 0, 1, &ctx).unwrap();
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
            assert!((b - 0.81 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn persistence_examples() {
        let k = Kernel::new(KernelId::Persistence, 3).unwrap();
        let e = 1f64.exp();
        let mut theta = vec![0.0, 0.0, e.sqrt(), e.sqrt(), 1.0, 0.5, 0.5, 0.5];
        // lags all present: no persistence penalty, alpha = e * e^{-1} = 1, clipped
        let full = EdgeContext::Persistence { lag2: true, lag3: true };
        let (alpha, _) = k.alpha_beta(&theta, 0, 1, &full).unwrap();
        assert_eq!(alpha, 1.0 - DEFAULT_CLIP);
        // lags absent: alpha = e * e^{-1 - 2a} = e^{-2a}
        theta[0] = 0.7;
        let none = EdgeContext::Persistence { lag2: false, lag3: false };
        let (alpha, _) = k.alpha_beta(&theta, 0, 1, &none).unwrap();
        assert!((alpha - (-1.4f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn degree_het_empty_previous_snapshot() {
        let k = Kernel::new(KernelId::DegreeHet, 5).unwrap();
        let (b0, b1) = (0.3, 0.4);
        let mut theta = vec![0.5, 0.2, b0, b1];
        theta.extend([0.8, 0.7, 0.9, 0.6, 0.5]);
        theta.extend([0.9; 5]);
        let ctx = k.context(&[&Snapshot::empty(5)], 0, 1).unwrap();
        let (alpha, _) = k.alpha_beta(&theta, 0, 1, &ctx).unwrap();
        let expected = 0.8 * 0.7 / (2.0 + (b0 + 2.0 * b1).exp());
        assert!((alpha - expected).abs() < 1e-15);
    }

    #[test]
    fn context_mismatch_is_reported() {
        let k = Kernel::new(KernelId::Transitivity, 4).unwrap();
        let theta = vec![1.0; k.num_params()];
        let ctx = EdgeContext::Persistence { lag2: false, lag3: false };
        assert!(matches!(
            k.alpha_beta(&theta, 0, 1, &ctx),
            Err(ArnetError::ContextMismatch { .. })
        ));
        assert!(k.alpha_beta(&theta[1..], 0, 1, &EdgeContext::Plain).is_err());
    }

    #[test]
    fn transitivity_gradient_closed_forms() {
        let k = Kernel::new(KernelId::Transitivity, 6).unwrap();
        let mut theta = vec![3.0, 2.0];
        theta.extend([0.7, 0.8, 0.6, 0.9, 0.75, 0.65]);
        theta.extend([0.9, 0.85, 0.8, 0.95, 0.7, 0.6]);
        let ctx = EdgeContext::Transitivity { common: 2, disjoint: 1 };
        let (u, v) = (0.5, 0.25);
        let (ea, eb) = ((3.0 * u as f64).exp(), (2.0 * v as f64).exp());
        let z = 1.0 + ea + eb;
        let g0 = k.gamma_grad(&theta, 1, 3, &ctx, false).unwrap();
        // d alpha / d xi_i = xi_j e^{aU} / Z
        assert!((g0.grad[2] - theta[2 + 3] * ea / z).abs() < 1e-14);
        let g1 = k.gamma_grad(&theta, 1, 3, &ctx, true).unwrap();
        assert_eq!(g1.grad[2], 0.0);
        assert_eq!(g1.grad[3], 0.0);
        let h = k.gamma_hess(&theta, 1, 3, &ctx, false).unwrap();
        assert!((h[2][3] - ea / z).abs() < 1e-14);
    }

    #[test]
    fn global_ar_derivatives() {
        let k = Kernel::new(KernelId::GlobalAr, 3).unwrap();
        let theta = [0.2, 0.3];
        for x in [false, true] {
            let g = k.gamma_grad(&theta, 0, 1, &EdgeContext::Plain, x).unwrap();
            assert_eq!(g.grad(), &[1.0 - x as u8 as f64, -(x as u8 as f64)]);
            let h = k.gamma_hess(&theta, 0, 1, &EdgeContext::Plain, x).unwrap();
            assert!(h.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn clipped_gradient_is_zero() {
        let k = Kernel::new(KernelId::GlobalAr, 3).unwrap();
        let g = k.gamma_grad(&[1.0, 0.5], 0, 1, &EdgeContext::Plain, false).unwrap();
        assert!(g.clipped);
        assert_eq!(g.gamma, 1.0 - DEFAULT_CLIP);
        assert!(g.grad().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_params_have_expected_sizes() {
        let p = 5;
        let sizes = [
            (KernelId::DegreeHet, 8),
            (KernelId::Persistence, 6),
            (KernelId::Transitivity, 6),
            (KernelId::TransitivityExt, 8),
            (KernelId::GlobalAr, 2),
            (KernelId::EdgewiseAr, 2),
        ];
        for (id, s) in sizes {
            let k = Kernel::new(id, p).unwrap();
            assert_eq!(k.edge_params(1, 3).len(), s);
            assert_eq!(k.edge_params(1, 3), k.edge_params(3, 1));
        }
    }
}
