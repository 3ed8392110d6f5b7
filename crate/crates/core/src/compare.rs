//! Baseline models, information criteria, multi-step forecasts and ROC
//! evaluation.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};
use crate::estimate::{fit_initial, joint_ascent, EstimationConfig, FitReport};
use crate::kernels::{Kernel, KernelId, DEFAULT_CLIP};
use crate::likelihood::{full_loglik, Panel};
use crate::params::ParameterSet;
use crate::series::{Pairs, Snapshot, SnapshotSeries};
use crate::simulate::{continue_chain, replication_rng};

pub const DEFAULT_MC_PATHS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineModel {
    TransitivityAr,
    GlobalAr,
    EdgewiseAr,
    EdgewiseMean,
    DegreeMean,
}

impl BaselineModel {
    pub const ALL: [BaselineModel; 5] = [
        BaselineModel::TransitivityAr,
        BaselineModel::GlobalAr,
        BaselineModel::EdgewiseAr,
        BaselineModel::EdgewiseMean,
        BaselineModel::DegreeMean,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineModel::TransitivityAr => "transitivity-ar",
            BaselineModel::GlobalAr => "global-ar",
            BaselineModel::EdgewiseAr => "edgewise-ar",
            BaselineModel::EdgewiseMean => "edgewise-mean",
            BaselineModel::DegreeMean => "degree-mean",
        }
    }

    /// Number of free parameters for `p` nodes.
    pub fn num_params(&self, p: usize) -> usize {
        match self {
            BaselineModel::TransitivityAr => 2 * p + 2,
            BaselineModel::GlobalAr => 2,
            BaselineModel::EdgewiseAr => p * (p - 1),
            BaselineModel::EdgewiseMean => p * (p - 1) / 2,
            BaselineModel::DegreeMean => p,
        }
    }
}

impl std::fmt::Display for BaselineModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BaselineModel {
    type Err = ArnetError;

    fn from_str(s: &str) -> Result<Self> {
        BaselineModel::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('-', "_") == s)
            .ok_or_else(|| ArnetError::UnknownKernel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineParams {
    /// A kernel of the main model family with its full parameter vector.
    Kernel { kernel: KernelId, theta: Vec<f64> },
    GlobalAr { alpha: f64, beta: f64 },
    /// Per-pair probabilities in pair order.
    EdgewiseAr { alpha: Vec<f64>, beta: Vec<f64> },
    EdgewiseMean { prob: Vec<f64> },
    DegreeMean { nu: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineFit {
    pub model: BaselineModel,
    pub p: usize,
    pub order: usize,
    pub params: BaselineParams,
    /// Conditional log-likelihood over `t = m+1..n`.
    pub loglik: f64,
    pub num_params: usize,
    /// Entries without at-risk observations, filled from the pooled value.
    pub imputed: usize,
}

fn clip(x: f64) -> f64 {
    x.clamp(DEFAULT_CLIP, 1.0 - DEFAULT_CLIP)
}

fn bernoulli(x: bool, g: f64) -> f64 {
    if x {
        g.ln()
    } else {
        (1.0 - g).ln()
    }
}

/// Transition counts of one pair over `t = 2..n`.
#[derive(Debug, Clone, Copy, Default)]
struct PairCounts {
    at_risk_absent: f64,
    formed: f64,
    at_risk_present: f64,
    dissolved: f64,
}

fn pair_counts(series: &SnapshotSeries) -> Vec<PairCounts> {
    let pairs = series.pairs();
    let mut counts = vec![PairCounts::default(); pairs.count()];
    for w in series.snapshots().windows(2) {
        for (k, (i, j)) in pairs.iter().enumerate() {
            let c = &mut counts[k];
            match (w[0].get(i, j), w[1].get(i, j)) {
                (false, x) => {
                    c.at_risk_absent += 1.0;
                    c.formed += x as u8 as f64;
                }
                (true, x) => {
                    c.at_risk_present += 1.0;
                    c.dissolved += (!x) as u8 as f64;
                }
            }
        }
    }
    counts
}

/// Log-likelihood of a two-state chain with per-pair `alpha`, `beta`.
fn ar_loglik(counts: &[PairCounts], alpha: impl Fn(usize) -> f64, beta: impl Fn(usize) -> f64) -> f64 {
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (a, b) = (alpha(k), beta(k));
            c.formed * a.ln()
                + (c.at_risk_absent - c.formed) * (1.0 - a).ln()
                + c.dissolved * b.ln()
                + (c.at_risk_present - c.dissolved) * (1.0 - b).ln()
        })
        .sum()
}

/// Log-likelihood over `t = 2..n` of static per-pair probabilities.
fn static_loglik(series: &SnapshotSeries, prob: &[f64]) -> f64 {
    let pairs = series.pairs();
    series.snapshots()[1..]
        .iter()
        .map(|s| {
            pairs
                .iter()
                .enumerate()
                .map(|(k, (i, j))| bernoulli(s.get(i, j), prob[k]))
                .sum::<f64>()
        })
        .sum()
}

fn require_transitions(series: &SnapshotSeries) -> Result<()> {
    if series.n() < 2 {
        return Err(ArnetError::TooFewSnapshots {
            n: series.n(),
            order: 1,
        });
    }
    Ok(())
}

fn pooled_rates(counts: &[PairCounts]) -> (f64, f64, usize) {
    let total = counts.iter().fold(PairCounts::default(), |acc, c| PairCounts {
        at_risk_absent: acc.at_risk_absent + c.at_risk_absent,
        formed: acc.formed + c.formed,
        at_risk_present: acc.at_risk_present + c.at_risk_present,
        dissolved: acc.dissolved + c.dissolved,
    });
    let mut undefined = 0;
    let mut rate = |num: f64, den: f64| {
        if den > 0.0 {
            clip(num / den)
        } else {
            undefined += 1;
            0.5
        }
    };
    let alpha = rate(total.formed, total.at_risk_absent);
    let beta = rate(total.dissolved, total.at_risk_present);
    (alpha, beta, undefined)
}

/// Mean adjacency over every snapshot, in pair order.
fn edge_frequencies(series: &SnapshotSeries) -> Vec<f64> {
    let pairs = series.pairs();
    let mut freq = vec![0.0; pairs.count()];
    for s in series.snapshots() {
        for (k, (i, j)) in pairs.iter().enumerate() {
            freq[k] += s.value(i, j) as f64;
        }
    }
    let n = series.n() as f64;
    freq.iter_mut().for_each(|v| *v /= n);
    freq
}

/// Leading-eigenvector embedding `ν` of a symmetric matrix, sign fixed so
/// that `Σ ν ≥ 0`, scaled by `√max(λ₁, 0)` and clipped to `[ε, 1]`.
pub fn leading_embedding(mean: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(mean.clone());
    let (k, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
    let mut u: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let scale = lambda.max(0.0).sqrt();
    u.iter().map(|v| (scale * v).clamp(DEFAULT_CLIP, 1.0)).collect()
}

/// Fits one of the baseline models. The transitivity model is fitted by
/// maximum likelihood from the best start of `cfg.init_grid`.
pub fn fit_baseline_with(
    model: BaselineModel,
    series: &SnapshotSeries,
    cfg: &EstimationConfig,
) -> Result<BaselineFit> {
    require_transitions(series)?;
    let p = series.p();
    let pairs = series.pairs();
    let k = model.num_params(p);
    match model {
        BaselineModel::TransitivityAr => {
            let kernel = Kernel::new(KernelId::Transitivity, p)?;
            let panel = Panel::new(&kernel, series)?;
            let starts = fit_initial(&panel, cfg)?;
            let mut best: Option<(f64, Vec<f64>)> = None;
            for s in &starts {
                for cand in [&s.theta, &s.globals_step] {
                    let ll = full_loglik(&panel, cand)?;
                    if best.as_ref().map_or(true, |b| ll > b.0) {
                        best = Some((ll, cand.clone()));
                    }
                }
            }
            let (_, start) = best.expect("at least one start");
            let theta = joint_ascent(&panel, &start)?;
            let loglik = full_loglik(&panel, &theta)?;
            Ok(BaselineFit {
                model,
                p,
                order: 1,
                params: BaselineParams::Kernel {
                    kernel: KernelId::Transitivity,
                    theta,
                },
                loglik,
                num_params: k,
                imputed: 0,
            })
        }
        BaselineModel::GlobalAr => {
            let counts = pair_counts(series);
            let (alpha, beta, undefined) = pooled_rates(&counts);
            Ok(BaselineFit {
                model,
                p,
                order: 1,
                params: BaselineParams::GlobalAr { alpha, beta },
                loglik: ar_loglik(&counts, |_| alpha, |_| beta),
                num_params: k,
                imputed: undefined,
            })
        }
        BaselineModel::EdgewiseAr => {
            let counts = pair_counts(series);
            let (pa, pb, _) = pooled_rates(&counts);
            let mut imputed = 0;
            let mut rate = |num: f64, den: f64, pooled: f64| {
                if den > 0.0 {
                    clip(num / den)
                } else {
                    imputed += 1;
                    pooled
                }
            };
            let alpha: Vec<f64> = counts.iter().map(|c| rate(c.formed, c.at_risk_absent, pa)).collect();
            let beta: Vec<f64> = counts
                .iter()
                .map(|c| rate(c.dissolved, c.at_risk_present, pb))
                .collect();
            let loglik = ar_loglik(&counts, |k| alpha[k], |k| beta[k]);
            Ok(BaselineFit {
                model,
                p,
                order: 1,
                params: BaselineParams::EdgewiseAr { alpha, beta },
                loglik,
                num_params: k,
                imputed,
            })
        }
        BaselineModel::EdgewiseMean => {
            let prob: Vec<f64> = edge_frequencies(series).into_iter().map(clip).collect();
            let loglik = static_loglik(series, &prob);
            Ok(BaselineFit {
                model,
                p,
                order: 1,
                params: BaselineParams::EdgewiseMean { prob },
                loglik,
                num_params: k,
                imputed: 0,
            })
        }
        BaselineModel::DegreeMean => {
            let freq = edge_frequencies(series);
            let mut mean = DMatrix::zeros(p, p);
            for (k, (i, j)) in pairs.iter().enumerate() {
                mean[(i, j)] = freq[k];
                mean[(j, i)] = freq[k];
            }
            let nu = leading_embedding(&mean);
            let prob: Vec<f64> = pairs.iter().map(|(i, j)| clip(nu[i] * nu[j])).collect();
            let loglik = static_loglik(series, &prob);
            Ok(BaselineFit {
                model,
                p,
                order: 1,
                params: BaselineParams::DegreeMean { nu },
                loglik,
                num_params: k,
                imputed: 0,
            })
        }
    }
}

pub fn fit_baseline(model: BaselineModel, series: &SnapshotSeries) -> Result<BaselineFit> {
    fit_baseline_with(model, series, &EstimationConfig::default())
}

impl BaselineFit {
    /// Wraps an estimated kernel model so it can be compared and forecast
    /// alongside the baselines.
    pub fn from_kernel(kernel: Kernel, theta: Vec<f64>, series: &SnapshotSeries) -> Result<Self> {
        let panel = Panel::new(&kernel, series)?;
        let loglik = full_loglik(&panel, &theta)?;
        Ok(BaselineFit {
            model: BaselineModel::TransitivityAr,
            p: kernel.p(),
            order: kernel.order(),
            num_params: kernel.num_params(),
            params: BaselineParams::Kernel {
                kernel: kernel.id(),
                theta,
            },
            loglik,
            imputed: 0,
        })
    }

    pub fn from_report(report: &FitReport, series: &SnapshotSeries) -> Result<Self> {
        let kernel = Kernel::new(report.kernel, report.p)?;
        BaselineFit::from_kernel(kernel, report.estimate().to_vec(), series)
    }

    /// Observations entering the log-likelihood for a series with `n`
    /// snapshots.
    pub fn num_obs(&self, n: usize) -> usize {
        n.saturating_sub(self.order) * self.p * (self.p - 1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub loglik: f64,
    pub num_params: usize,
    pub num_obs: usize,
    pub aic: f64,
    pub bic: f64,
}

/// `AIC = 2k - 2L`, `BIC = k log N - 2L`.
pub fn criteria(loglik: f64, num_params: usize, num_obs: usize) -> InformationCriteria {
    let k = num_params as f64;
    InformationCriteria {
        loglik,
        num_params,
        num_obs,
        aic: 2.0 * k - 2.0 * loglik,
        bic: k * (num_obs as f64).ln() - 2.0 * loglik,
    }
}

pub fn information_criteria(fit: &BaselineFit, series: &SnapshotSeries) -> InformationCriteria {
    criteria(fit.loglik, fit.num_params, fit.num_obs(series.n()))
}

/// Forecast edge probabilities `n_step` snapshots past the end of
/// `history`, as a symmetric `p x p` matrix with zero diagonal.
pub fn forecast(
    fit: &BaselineFit,
    history: &SnapshotSeries,
    n_step: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if n_step == 0 {
        return Err(ArnetError::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    let p = history.p();
    if p != fit.p {
        return Err(ArnetError::InvalidArgument(format!(
            "model fitted for {} nodes, history has {p}",
            fit.p
        )));
    }
    let pairs = Pairs::new(p);
    let last = history.get(history.n() - 1);
    let probs: Vec<f64> = match &fit.params {
        BaselineParams::Kernel { kernel, theta } => {
            let kernel = Kernel::new(*kernel, p)?;
            let params = ParameterSet::new(kernel, theta.clone())?;
            return monte_carlo(&params, history, n_step, mc_paths, seed);
        }
        BaselineParams::GlobalAr { alpha, beta } => pairs
            .iter()
            .map(|(i, j)| two_state(last.get(i, j), *alpha, *beta, n_step))
            .collect(),
        BaselineParams::EdgewiseAr { alpha, beta } => pairs
            .iter()
            .enumerate()
            .map(|(k, (i, j))| two_state(last.get(i, j), alpha[k], beta[k], n_step))
            .collect(),
        BaselineParams::EdgewiseMean { prob } => prob.clone(),
        BaselineParams::DegreeMean { nu } => pairs.iter().map(|(i, j)| clip(nu[i] * nu[j])).collect(),
    };
    Ok(pair_matrix(p, &probs))
}

/// `p_{h+1} = α(1 - p_h) + (1 - β) p_h` from the observed state.
pub fn two_state(present: bool, alpha: f64, beta: f64, n_step: usize) -> f64 {
    let mut prob = present as u8 as f64;
    for _ in 0..n_step {
        prob = alpha * (1.0 - prob) + (1.0 - beta) * prob;
    }
    prob
}

fn pair_matrix(p: usize, probs: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for (k, (i, j)) in Pairs::new(p).iter().enumerate() {
        m[(i, j)] = probs[k];
        m[(j, i)] = probs[k];
    }
    m
}

fn monte_carlo(
    params: &ParameterSet,
    history: &SnapshotSeries,
    n_step: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if mc_paths == 0 {
        return Err(ArnetError::InvalidArgument("mc_paths must be at least 1".into()));
    }
    let p = history.p();
    let finals: Vec<Snapshot> = (0..mc_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = replication_rng(seed, path as u64);
            let mut run = continue_chain(params, history.snapshots(), n_step, &mut rng)?;
            Ok(run.pop().expect("n_step >= 1"))
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(p, p);
    for s in &finals {
        for (i, j) in Pairs::new(p).iter() {
            if s.get(i, j) {
                m[(i, j)] += 1.0;
                m[(j, i)] += 1.0;
            }
        }
    }
    m /= mc_paths as f64;
    Ok(m)
}

/// Naive forecaster: every edge keeps its last observed state.
pub fn previous_edge(history: &SnapshotSeries) -> DMatrix<f64> {
    let last = history.get(history.n() - 1);
    let p = history.p();
    DMatrix::from_fn(p, p, |i, j| if i != j && last.get(i, j) { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// ROC curve of `scores` against binary `truth`, sweeping every distinct
/// score as a threshold; tied scores enter together.
pub fn roc(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(ArnetError::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ArnetError::NonFinite("ROC scores contain NaN".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ArnetError::Undefined(
            "ROC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let (x0, y0) = *points.last().expect("non-empty");
        let (x1, y1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// ROC of a forecast matrix against the observed snapshot, over pairs.
pub fn roc_matrix(scores: &DMatrix<f64>, truth: &Snapshot) -> Result<RocCurve> {
    let p = truth.p();
    if scores.nrows() != p || scores.ncols() != p {
        return Err(ArnetError::InvalidArgument(format!(
            "score matrix is {}x{}, snapshot has {p} nodes",
            scores.nrows(),
            scores.ncols()
        )));
    }
    let pairs = Pairs::new(p);
    let s: Vec<f64> = pairs.iter().map(|(i, j)| scores[(i, j)]).collect();
    let t: Vec<bool> = pairs.iter().map(|(i, j)| truth.get(i, j)).collect();
    roc(&s, &t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model: BaselineModel,
    pub criteria: InformationCriteria,
    /// AUC per requested horizon, `None` when the truth is single-class.
    pub auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub p: usize,
    /// Snapshots used for fitting.
    pub split: usize,
    pub steps: Vec<usize>,
    pub models: Vec<ModelComparison>,
    /// AUC of the previous-edge forecaster per horizon.
    pub previous_edge_auc: Vec<Option<f64>>,
    #[serde(skip)]
    pub curves: Vec<(String, usize, RocCurve)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSettings {
    pub models: Vec<BaselineModel>,
    pub mc_paths: usize,
    pub seed: u64,
    pub estimation: EstimationConfig,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            models: BaselineModel::ALL.to_vec(),
            mc_paths: DEFAULT_MC_PATHS,
            seed: 0,
            estimation: EstimationConfig::default(),
        }
    }
}

/// Fits every model on the first `split` snapshots, scores them by AIC/BIC
/// there, and forecasts snapshot `split + h` for each horizon `h`.
pub fn compare_models(
    series: &SnapshotSeries,
    split: usize,
    steps: &[usize],
    settings: &CompareSettings,
) -> Result<ComparisonReport> {
    if split < 2 || split > series.n() {
        return Err(ArnetError::InvalidArgument(format!(
            "split must lie in 2..={}, got {split}",
            series.n()
        )));
    }
    if let Some(&h) = steps.iter().find(|&&h| h == 0 || split + h > series.n()) {
        return Err(ArnetError::InvalidArgument(format!(
            "horizon {h} reaches past the end of the series ({} snapshots, split {split})",
            series.n()
        )));
    }
    let train = series.slice(0, split)?;
    let mut curves = Vec::new();
    let score = |m: &DMatrix<f64>, h: usize| roc_matrix(m, series.get(split + h - 1));
    let mut models = Vec::new();
    for &model in &settings.models {
        let fit = fit_baseline_with(model, &train, &settings.estimation)?;
        let mut auc = Vec::new();
        for &h in steps {
            let f = forecast(&fit, &train, h, settings.mc_paths, settings.seed)?;
            match score(&f, h) {
                Ok(c) => {
                    auc.push(Some(c.auc));
                    curves.push((model.as_str().to_string(), h, c));
                }
                Err(ArnetError::Undefined(_)) => auc.push(None),
                Err(e) => return Err(e),
            }
        }
        models.push(ModelComparison {
            model,
            criteria: information_criteria(&fit, &train),
            auc,
        });
    }
    let prev = previous_edge(&train);
    let mut previous_edge_auc = Vec::new();
    for &h in steps {
        match score(&prev, h) {
            Ok(c) => {
                previous_edge_auc.push(Some(c.auc));
                curves.push(("previous-edge".to_string(), h, c));
            }
            Err(ArnetError::Undefined(_)) => previous_edge_auc.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(ComparisonReport {
        p: series.p(),
        split,
        steps: steps.to_vec(),
        models,
        previous_edge_auc,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_of(states: &[&[u8]]) -> SnapshotSeries {
        // one row per snapshot, listing the upper triangle of a 3-node graph
        let snaps = states
            .iter()
            .map(|s| {
                let mut g = Snapshot::empty(3);
                for (k, (i, j)) in Pairs::new(3).iter().enumerate() {
                    g.set(i, j, s[k] == 1);
                }
                g
            })
            .collect();
        SnapshotSeries::new(snaps).unwrap()
    }

    #[test]
    fn complete_series() {
        let s = SnapshotSeries::new(vec![Snapshot::complete(4); 4]).unwrap();
        let m = fit_baseline(BaselineModel::EdgewiseMean, &s).unwrap();
        let BaselineParams::EdgewiseMean { prob } = m.params else { panic!() };
        assert!(prob.iter().all(|&p| p == 1.0 - DEFAULT_CLIP));
        let g = fit_baseline(BaselineModel::GlobalAr, &s).unwrap();
        let BaselineParams::GlobalAr { beta, .. } = g.params else { panic!() };
        assert_eq!(beta, DEFAULT_CLIP);
    }

    #[test]
    fn alternating_series() {
        let s = SnapshotSeries::new(vec![
            Snapshot::empty(4),
            Snapshot::complete(4),
            Snapshot::empty(4),
            Snapshot::complete(4),
        ])
        .unwrap();
        let g = fit_baseline(BaselineModel::GlobalAr, &s).unwrap();
        assert_eq!(
            g.params,
            BaselineParams::GlobalAr {
                alpha: 1.0 - DEFAULT_CLIP,
                beta: 1.0 - DEFAULT_CLIP
            }
        );
    }

    #[test]
    fn parameter_counts() {
        let p = 7;
        let expect = [2 * p + 2, 2, p * (p - 1), p * (p - 1) / 2, p];
        for (m, k) in BaselineModel::ALL.iter().zip(expect) {
            assert_eq!(m.num_params(p), k);
            assert_eq!(m.as_str().parse::<BaselineModel>().unwrap(), *m);
        }
    }

    #[test]
    fn null_model_criteria() {
        let n_obs = 30;
        let l = -(n_obs as f64) * 2f64.ln();
        let c = criteria(l, 0, n_obs);
        assert!((c.aic - 2.0 * n_obs as f64 * 2f64.ln()).abs() < 1e-12);
        assert!(criteria(l, 1, n_obs).aic < criteria(l, 2, n_obs).aic);
    }

    #[test]
    fn hand_computed_criteria() {
        // edge (0,1) follows 0,1,1; the other pairs stay empty
        let s = series_of(&[&[0, 0, 0], &[1, 0, 0], &[1, 0, 0]]);
        let n_obs = 6;
        let ln = f64::ln;
        let e = DEFAULT_CLIP;

        // global: 5 at-risk non-edge steps with 1 formation, 1 edge step kept
        let g = fit_baseline(BaselineModel::GlobalAr, &s).unwrap();
        let l = ln(0.2) + 4.0 * ln(0.8) + ln(1.0 - e);
        assert!((g.loglik - l).abs() < 1e-9);
        let ic = information_criteria(&g, &s);
        assert!((ic.aic - (4.0 - 2.0 * l)).abs() < 1e-9);
        assert!((ic.bic - (2.0 * ln(n_obs as f64) - 2.0 * l)).abs() < 1e-9);

        // edgewise: (0,1) alpha = 1, beta = 0 (both clipped); others alpha = 0,
        // beta undefined
        let w = fit_baseline(BaselineModel::EdgewiseAr, &s).unwrap();
        let l = ln(1.0 - e) + ln(1.0 - e) + 4.0 * ln(1.0 - e);
        assert!((w.loglik - l).abs() < 1e-9);
        assert_eq!(w.imputed, 2);
        assert!((information_criteria(&w, &s).aic - (12.0 - 2.0 * l)).abs() < 1e-9);

        // mean: P(0,1) = 2/3, others clipped to eps, scored on t = 2, 3
        let m = fit_baseline(BaselineModel::EdgewiseMean, &s).unwrap();
        let l = 2.0 * ln(2.0 / 3.0) + 4.0 * ln(1.0 - e);
        assert!((m.loglik - l).abs() < 1e-9);
        assert!((information_criteria(&m, &s).bic - (3.0 * ln(6.0) - 2.0 * l)).abs() < 1e-9);
    }

    #[test]
    fn degree_mean_rank_one() {
        let p = 30;
        let nu: Vec<f64> = (0..p).map(|i| 0.2 + 0.6 * i as f64 / p as f64).collect();
        let mean = DMatrix::from_fn(p, p, |i, j| nu[i] * nu[j]);
        let est = leading_embedding(&mean);
        for (a, b) in est.iter().zip(&nu) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // the zero diagonal of an observed mean adjacency biases the eigenpair
        let hollow = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { nu[i] * nu[j] });
        let est = leading_embedding(&hollow);
        let worst = est.iter().zip(&nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst > 1e-2 && worst < 0.05, "{worst}");
    }

    #[test]
    fn two_state_recursion() {
        assert_eq!(two_state(true, 0.5, 0.5, 1), 0.5);
        assert_eq!(two_state(false, 0.5, 0.5, 3), 0.5);
        let p = two_state(false, 0.2, 0.3, 2);
        assert!((p - (0.2 * 0.8 + 0.7 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn roc_examples() {
        let c = roc(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
        assert!((c.auc - 0.75).abs() < 1e-15);
        let c = roc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = roc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(roc(&[0.1, 0.2], &[true, true]), Err(ArnetError::Undefined(_))));
    }

    #[test]
    fn static_forecast_ignores_horizon() {
        let s = series_of(&[&[0, 1, 0], &[1, 1, 0], &[1, 0, 0]]);
        let fit = fit_baseline(BaselineModel::EdgewiseMean, &s).unwrap();
        let a = forecast(&fit, &s, 1, 10, 0).unwrap();
        let b = forecast(&fit, &s, 5, 10, 0).unwrap();
        assert_eq!(a, b);
        assert!((a[(0, 1)] - 2.0 / 3.0).abs() < 1e-12);
    }
}
