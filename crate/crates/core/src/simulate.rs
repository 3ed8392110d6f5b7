//! Simulation of AR(m) network series and summary diagnostics.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};
use crate::kernels::Evaluator;
use crate::params::ParameterSet;
use crate::series::{Snapshot, SnapshotSeries};

pub const DEFAULT_BURN_IN: usize = 200;
pub const DEFAULT_INIT_DENSITY: f64 = 0.1;

/// How the `m` initial lags are drawn (one draw, replicated across lags).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitRule {
    Empty,
    ErdosRenyi { rho: f64 },
}

impl Default for InitRule {
    fn default() -> Self {
        InitRule::ErdosRenyi {
            rho: DEFAULT_INIT_DENSITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub params: ParameterSet,
    pub init: InitRule,
}

impl SimConfig {
    pub fn new(params: ParameterSet, n: usize, seed: u64) -> Self {
        SimConfig {
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
            params,
            init: InitRule::default(),
        }
    }

    pub fn p(&self) -> usize {
        self.params.kernel().p()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(ArnetError::InvalidArgument(format!(
                "simulation needs n >= 2, got {}",
                self.n
            )));
        }
        if let InitRule::ErdosRenyi { rho } = self.init {
            if !(0.0..=1.0).contains(&rho) {
                return Err(ArnetError::InvalidArgument(format!(
                    "initial density must lie in [0, 1], got {rho}"
                )));
            }
        }
        Ok(())
    }
}

/// Stream for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep))
}

pub fn initial_snapshot<R: Rng>(p: usize, rule: InitRule, rng: &mut R) -> Snapshot {
    let mut s = Snapshot::empty(p);
    if let InitRule::ErdosRenyi { rho } = rule {
        for i in 0..p {
            for j in i + 1..p {
                let u: f64 = rng.gen();
                s.set(i, j, u < rho);
            }
        }
    }
    s
}

/// Draws the next snapshot given lags `[X_{t-1}, X_{t-2}, ...]`. One uniform
/// per pair, in pair order.
pub fn step<R: Rng>(ev: &Evaluator<'_>, lags: &[&Snapshot], rng: &mut R) -> Snapshot {
    let kernel = ev.kernel();
    let contexts = kernel.contexts(lags);
    let prev = lags[0];
    let mut next = Snapshot::empty(kernel.p());
    for ((i, j), ctx) in kernel.pairs().iter().zip(&contexts) {
        let g = ev.transition_probability(i, j, ctx, prev.get(i, j));
        let u: f64 = rng.gen();
        if u < g {
            next.set(i, j, true);
        }
    }
    next
}

/// Continues a chain for `steps` snapshots from `history` (chronological,
/// at least `m` snapshots).
pub fn continue_chain<R: Rng>(
    params: &ParameterSet,
    history: &[Snapshot],
    steps: usize,
    rng: &mut R,
) -> Result<Vec<Snapshot>> {
    let kernel = params.kernel();
    let m = kernel.order();
    if history.len() < m {
        return Err(ArnetError::TooFewSnapshots {
            n: history.len(),
            order: m,
        });
    }
    let ev = kernel.evaluator(params.values());
    let mut window: Vec<Snapshot> = history[history.len() - m..].to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = {
            let lags: Vec<&Snapshot> = window.iter().rev().collect();
            step(&ev, &lags, rng)
        };
        window.remove(0);
        window.push(next.clone());
        out.push(next);
    }
    Ok(out)
}

pub fn simulate(cfg: &SimConfig) -> Result<SnapshotSeries> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.p();
    let m = cfg.params.kernel().order();
    let init = initial_snapshot(p, cfg.init, &mut rng);
    let history = vec![init; m];
    let mut snaps = continue_chain(&cfg.params, &history, cfg.burn_in + cfg.n, &mut rng)?;
    let kept = snaps.split_off(cfg.burn_in);
    SnapshotSeries::new(kept)
}

/// One row of a relative-frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    /// Integer neighbour count `ℓ`.
    pub ell: usize,
    /// `|U_ℓ|` or `|V_ℓ|`.
    pub count: usize,
    /// `|U_ℓ^1|` or `|V_ℓ^0|`.
    pub hits: usize,
}

impl FrequencyRow {
    pub fn ratio(&self) -> f64 {
        self.hits as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsTable {
    /// `D_t`, `t = 1..n`.
    pub density: Vec<f64>,
    /// `D_{1,t}`, `t = 2..n`.
    pub growth: Vec<f64>,
    /// `D_{0,t}`, `t = 2..n`.
    pub dissolution: Vec<f64>,
    pub mean_density: Vec<f64>,
    /// Running means of growth and dissolution over `u = 2..t`.
    pub mean_growth: Vec<f64>,
    pub mean_dissolution: Vec<f64>,
    /// Formation frequencies of absent pairs by common-neighbour count.
    pub u_table: Vec<FrequencyRow>,
    /// Dissolution frequencies of present pairs by disjoint-neighbour count.
    pub v_table: Vec<FrequencyRow>,
}

fn running_mean(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .enumerate()
        .map(|(k, x)| {
            acc += x;
            acc / (k + 1) as f64
        })
        .collect()
}

pub fn diagnostics(series: &SnapshotSeries) -> Result<DiagnosticsTable> {
    let n = series.n();
    if n < 2 {
        return Err(ArnetError::TooFewSnapshots { n, order: 1 });
    }
    let p = series.p();
    let npairs = (p * (p - 1) / 2) as f64;
    let density: Vec<f64> = series
        .snapshots()
        .iter()
        .map(|s| s.edge_count() as f64 / npairs)
        .collect();
    let mut growth = Vec::with_capacity(n - 1);
    let mut dissolution = Vec::with_capacity(n - 1);
    let mut u_rows: Vec<FrequencyRow> = (0..=p - 2)
        .map(|ell| FrequencyRow { ell, count: 0, hits: 0 })
        .collect();
    let mut v_rows = u_rows.clone();
    for t in 1..n {
        let (prev, next) = (series.get(t - 1), series.get(t));
        let cn = prev.common_neighbour_matrix();
        let deg = prev.degrees();
        let (mut formed, mut dissolved) = (0usize, 0usize);
        for i in 0..p {
            for j in i + 1..p {
                let (a, b) = (prev.get(i, j), next.get(i, j));
                if a {
                    let common = cn[i * p + j] as usize;
                    let disjoint = deg[i] + deg[j] - 2 - 2 * common;
                    v_rows[disjoint].count += 1;
                    if !b {
                        v_rows[disjoint].hits += 1;
                        dissolved += 1;
                    }
                } else {
                    let common = cn[i * p + j] as usize;
                    u_rows[common].count += 1;
                    if b {
                        u_rows[common].hits += 1;
                        formed += 1;
                    }
                }
            }
        }
        growth.push(formed as f64 / npairs);
        dissolution.push(dissolved as f64 / npairs);
    }
    u_rows.retain(|r| r.count > 0);
    v_rows.retain(|r| r.count > 0);
    Ok(DiagnosticsTable {
        mean_density: running_mean(&density),
        mean_growth: running_mean(&growth),
        mean_dissolution: running_mean(&dissolution),
        density,
        growth,
        dissolution,
        u_table: u_rows,
        v_table: v_rows,
    })
}

impl DiagnosticsTable {
    /// Density, growth and dissolution series (blank growth fields at `t = 1`).
    pub fn density_csv(&self) -> String {
        let mut out =
            String::from("t,density,growth,dissolution,mean_density,mean_growth,mean_dissolution\n");
        for t in 0..self.density.len() {
            let _ = write!(out, "{},{},", t + 1, self.density[t]);
            if t == 0 {
                let _ = writeln!(out, ",,{},,", self.mean_density[t]);
            } else {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    self.growth[t - 1],
                    self.dissolution[t - 1],
                    self.mean_density[t],
                    self.mean_growth[t - 1],
                    self.mean_dissolution[t - 1]
                );
            }
        }
        out
    }

    pub fn u_csv(&self) -> String {
        freq_csv(&self.u_table, "formed")
    }

    pub fn v_csv(&self) -> String {
        freq_csv(&self.v_table, "dissolved")
    }
}

fn freq_csv(rows: &[FrequencyRow], hit_name: &str) -> String {
    let mut out = format!("ell,count,{hit_name},ratio\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.ell, r.count, r.hits, r.ratio());
    }
    out
}
