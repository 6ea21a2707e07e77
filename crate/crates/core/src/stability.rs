//! Perturbation sweeps comparing measured output changes with the
//! first-order stability bound.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::RegressionTask;
use crate::error::{Error, Result};
use crate::filters::{estimate_bank, multilayer_bound, stability_bound, LipschitzEstimate, Omega, DEFAULT_GRID, DEFAULT_OMEGA_MARGIN};
use crate::graph::{realize_perturbation, spectral_norm, spectral_radius, Graph, GraphSignal, Matrix, PerturbationKind, PerturbationSpec};
use crate::model::{AggGnnModel, CnnLayerSpec, FirstLayerMode, Nonlinearity, Pooling, ReadoutKind};
use crate::rng;
use crate::training::{train, LossSpec, TrainConfig};

/// Default multiplicative slack covering the second-order remainder.
pub const DEFAULT_SLACK: f64 = 1.1;
/// Empirical differences at or below this count as zero.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundLayer {
    FirstLayer,
    FullNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub kind: PerturbationKind,
    #[serde(default = "default_probes")]
    pub probe_signals: usize,
    pub seed: u64,
    #[serde(default = "default_bound_layer")]
    pub bound_layer: BoundLayer,
}

fn default_probes() -> usize {
    16
}

fn default_bound_layer() -> BoundLayer {
    BoundLayer::FirstLayer
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::param("epsilons must be finite and >= 0"));
        }
        if self.epsilons.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::param("epsilons must be sorted ascending"));
        }
        if self.trials < 1 || self.probe_signals < 1 {
            return Err(Error::param("trials and probe_signals must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub epsilon: f64,
    pub trial: usize,
    pub kind: PerturbationKind,
    pub empirical: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Unit-norm Gaussian probe signals.
pub fn random_probes(n: usize, count: usize, seed: u64) -> Vec<GraphSignal> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            GraphSignal(v.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// `max_x ||Φ(S)x - Φ(S̃)x|| / ||x||` over the probes.
pub fn output_difference(model: &AggGnnModel, s: &Matrix, s_tilde: &Matrix, probes: &[GraphSignal], layer: BoundLayer) -> Result<f64> {
    if s.shape() != s_tilde.shape() {
        return Err(Error::dim("shift and perturbed shift differ in shape"));
    }
    let mut worst = 0.0f64;
    for x in probes {
        let norm = x.norm();
        if norm == 0.0 {
            return Err(Error::param("probe signals must be nonzero"));
        }
        let diff = match layer {
            BoundLayer::FirstLayer => model
                .first_layer_output(s, x)?
                .distance(&model.first_layer_output(s_tilde, x)?)?,
            BoundLayer::FullNetwork => model
                .forward(s, x)?
                .nodes
                .distance(&model.forward(s_tilde, x)?.nodes)?,
        };
        worst = worst.max(diff / norm);
    }
    Ok(worst)
}

/// Smallest symmetric domain guaranteed to hold the spectra of `S` and of
/// every `S + T0 + T1 S` with `||T0||, ||T1|| <= eps_max`, widened by the
/// default margin.
pub fn omega_for_sweep(graph: &Graph, eps_max: f64, grid_points: usize) -> Result<Omega> {
    let s_norm = spectral_norm(graph.shift())?;
    let radius = s_norm * (1.0 + eps_max) + eps_max;
    Omega::covering(radius, DEFAULT_OMEGA_MARGIN, grid_points)
}

/// Lipschitz constants of a model's first layer over `omega`, all shifts included.
pub fn model_estimate(model: &AggGnnModel, omega: &Omega) -> Result<LipschitzEstimate> {
    let filters = model.padded_first_layer_filters();
    estimate_bank(&filters, model.a + 1, omega)
}

/// Bound multiplier shared by every trial: `sqrt(F_1)` for a bank of
/// first-layer filters, times deeper-layer norms for the full network.
fn bound_factors(model: &AggGnnModel, layer: BoundLayer) -> Result<(f64, Vec<f64>)> {
    let features = (model.layers[0].spec.features_out as f64).sqrt();
    let deep = match layer {
        BoundLayer::FirstLayer => Vec::new(),
        BoundLayer::FullNetwork => model.deep_layer_norms()?,
    };
    Ok((features, deep))
}

/// Runs `|epsilons| x trials` perturbation trials. Records come back ordered
/// by `(epsilon index, trial)` no matter how trials are scheduled.
pub fn run_sweep(model: &AggGnnModel, graph: &Graph, cfg: &SweepConfig, estimate: &LipschitzEstimate, omega: &Omega) -> Result<Vec<StabilityRecord>> {
    cfg.validate()?;
    omega.validate()?;
    let s = graph.shift();
    let radius = spectral_radius(s)?;
    if !omega.covers(radius) {
        return Err(Error::OmegaCoverage {
            lo: omega.lo,
            hi: omega.hi,
            radius,
        });
    }
    let n = graph.n();
    let probes = random_probes(n, cfg.probe_signals, rng::derive_seed(cfg.seed, &[u64::MAX]));
    let (feature_factor, deep_norms) = bound_factors(model, cfg.bound_layer)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.epsilons.len())
        .flat_map(|e| (0..cfg.trials).map(move |t| (e, t)))
        .collect();
    jobs.par_iter()
        .map(|&(e, trial)| {
            let epsilon = cfg.epsilons[e];
            let seed = rng::derive_seed(cfg.seed, &[e as u64, trial as u64]);
            let spec = PerturbationSpec::from_epsilon(cfg.kind, epsilon, seed)?;
            let real = realize_perturbation(&spec, graph)?;
            let perturbed_radius = spectral_radius(&real.perturbed_shift)?;
            if !omega.covers(perturbed_radius) {
                return Err(Error::OmegaCoverage {
                    lo: omega.lo,
                    hi: omega.hi,
                    radius: perturbed_radius,
                });
            }
            let empirical = output_difference(model, s, &real.perturbed_shift, &probes, cfg.bound_layer)?;
            let base = stability_bound(n, model.a, estimate.l0, estimate.l1, spectral_norm(&real.t0)?, spectral_norm(&real.t1)?)?;
            let scaled = multilayer_bound(&base, &deep_norms)?;
            let bound = scaled.total * feature_factor;
            let ratio = if bound > 0.0 { empirical / bound } else { f64::INFINITY };
            Ok(StabilityRecord {
                epsilon,
                trial,
                kind: cfg.kind,
                empirical,
                bound,
                ratio,
            })
        })
        .collect()
}

/// Records whose ratio exceeds `slack`. A zero bound only counts when the
/// measured difference is nonzero.
pub fn bound_check(records: &[StabilityRecord], slack: f64) -> Vec<StabilityRecord> {
    records
        .iter()
        .filter(|r| {
            if r.bound > 0.0 {
                r.ratio > slack
            } else {
                r.empirical > ZERO_TOL
            }
        })
        .copied()
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Groups records by epsilon, preserving order of first appearance.
fn by_epsilon(records: &[StabilityRecord]) -> Vec<(f64, Vec<&StabilityRecord>)> {
    let mut groups: Vec<(f64, Vec<&StabilityRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(e, _)| e.to_bits() == r.epsilon.to_bits()) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.epsilon, vec![r])),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub trials: usize,
    pub median_empirical: f64,
    pub median_bound: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_epsilon: Option<Vec<EpsilonSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<usize>,
}

impl SweepSummary {
    pub fn from_records(records: &[StabilityRecord], slack: f64) -> Self {
        if records.is_empty() {
            return Self {
                count: 0,
                per_epsilon: None,
                max_ratio: None,
                slack: None,
                violations: None,
            };
        }
        let per_epsilon: Vec<EpsilonSummary> = by_epsilon(records)
            .into_iter()
            .map(|(epsilon, group)| EpsilonSummary {
                epsilon,
                trials: group.len(),
                median_empirical: median(&mut group.iter().map(|r| r.empirical).collect::<Vec<_>>()),
                median_bound: median(&mut group.iter().map(|r| r.bound).collect::<Vec<_>>()),
                max_ratio: finite_max(group.iter().map(|r| r.ratio)),
            })
            .collect();
        Self {
            count: records.len(),
            max_ratio: Some(finite_max(records.iter().map(|r| r.ratio))),
            per_epsilon: Some(per_epsilon),
            slack: Some(slack),
            violations: Some(bound_check(records, slack).len()),
        }
    }
}

/// Largest finite value, or 0 when there is none.
fn finite_max(values: impl Iterator<Item = f64>) -> f64 {
    values.filter(|v| v.is_finite()).fold(0.0, f64::max)
}

pub const CSV_HEADER: &str = "epsilon,trial,kind,empirical,bound,ratio";

pub fn records_csv(records: &[StabilityRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{:.16e},{},{},{:.16e},{:.16e},{:.16e}\n",
            r.epsilon,
            r.trial,
            r.kind.as_str(),
            r.empirical,
            r.bound,
            r.ratio
        ));
    }
    out
}

pub fn parse_records_csv(text: &str) -> Result<Vec<StabilityRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: k + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        out.push(StabilityRecord {
            epsilon: num(f[0])?,
            trial: f[1].trim().parse().map_err(|_| bad(format!("bad trial {:?}", f[1])))?,
            kind: f[2].trim().parse().map_err(|e: Error| bad(e.to_string()))?,
            empirical: num(f[3])?,
            bound: num(f[4])?,
            ratio: num(f[5])?,
        });
    }
    Ok(out)
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Writes the records CSV at `csv_path` and the summary JSON next to it
/// (`<stem>.summary.json`).
pub fn emit_report(records: &[StabilityRecord], csv_path: &Path, slack: f64) -> Result<ReportPaths> {
    std::fs::write(csv_path, records_csv(records))?;
    let summary_path = csv_path.with_extension("summary.json");
    let summary = SweepSummary::from_records(records, slack);
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(ReportPaths {
        csv: csv_path.to_path_buf(),
        summary: summary_path,
    })
}

/// Two-column `epsilon median_empirical` data for plotting.
pub fn dat_file(summary: &SweepSummary) -> String {
    let mut out = String::from("# epsilon median_empirical median_bound\n");
    for e in summary.per_epsilon.iter().flatten() {
        out.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", e.epsilon, e.median_empirical, e.median_bound));
    }
    out
}

/// Minimal log-log SVG line chart of the median curves.
pub fn svg_chart(summary: &SweepSummary) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts: Vec<&EpsilonSummary> = summary
        .per_epsilon
        .iter()
        .flatten()
        .filter(|e| e.epsilon > 0.0 && e.median_empirical > 0.0 && e.median_bound > 0.0)
        .collect();
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    svg.push_str(&format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        w - 2.0 * pad,
        h - 2.0 * pad
    ));
    if !pts.is_empty() {
        let xs: Vec<f64> = pts.iter().map(|e| e.epsilon.log10()).collect();
        let ys: Vec<f64> = pts
            .iter()
            .flat_map(|e| [e.median_empirical.log10(), e.median_bound.log10()])
            .collect();
        let (x0, x1) = span(&xs);
        let (y0, y1) = span(&ys);
        let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        for (colour, pick) in [("steelblue", 0usize), ("firebrick", 1usize)] {
            let line: Vec<String> = pts
                .iter()
                .map(|e| {
                    let y = if pick == 0 { e.median_empirical } else { e.median_bound };
                    format!("{:.2},{:.2}", px(e.epsilon.log10()), py(y.log10()))
                })
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n",
                line.join(" ")
            ));
        }
    }
    svg.push_str("<text x=\"60\" y=\"30\">median output difference (blue) and bound (red) vs epsilon, log-log</text>\n");
    svg.push_str("</svg>\n");
    svg
}

fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// How models are built for [`compare_aggregation_counts`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSetup {
    /// First-layer taps; `None` uses the full `a + 1`.
    pub taps: Option<usize>,
    pub features: usize,
    pub nonlinearity: Nonlinearity,
    /// Layers after the first one.
    pub deeper: Vec<CnnLayerSpec>,
    pub readout: ReadoutKind,
    /// Penalty settings; only applied when `constrained`.
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub model_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTable {
    pub a_values: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `medians[i][j]`: median empirical difference for `a_values[i]` at `epsilons[j]`.
    pub medians: Vec<Vec<f64>>,
    /// Per epsilon: whether the medians never decrease as `a` grows.
    pub nondecreasing: Vec<bool>,
    /// Final training loss per model, when trained.
    pub final_train_loss: Vec<Option<f64>>,
}

/// Shrinks every first-layer filter uniformly until the bank meets the targets.
pub fn rescale_to_targets(model: &mut AggGnnModel, omega: &Omega, l0_target: f64, l1_target: f64) -> Result<()> {
    let est = model_estimate(model, omega)?;
    let mut scale = 1.0f64;
    if est.l0 > l0_target {
        scale = scale.min(l0_target / est.l0);
    }
    if est.l1 > l1_target {
        scale = scale.min(l1_target / est.l1);
    }
    model.layers[0].weights.iter_mut().for_each(|w| *w *= scale);
    Ok(())
}

/// Builds (and trains, when a task is given) one model per aggregation order
/// and runs the same sweep on each.
///
/// Without a task the filters are random; `constrained` then rescales them to
/// the penalty targets. With a task `constrained` enables the penalty.
pub fn compare_aggregation_counts(
    graph: &Graph,
    task: Option<&RegressionTask>,
    a_values: &[usize],
    cfg: &SweepConfig,
    constrained: bool,
    setup: &TrendSetup,
) -> Result<TrendTable> {
    let mut distinct = a_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != a_values.len() {
        return Err(Error::param("a_values must be distinct"));
    }
    let eps_max = cfg.epsilons.iter().copied().fold(0.0, f64::max);
    let omega = omega_for_sweep(graph, eps_max, DEFAULT_GRID)?;
    let mut medians = Vec::with_capacity(a_values.len());
    let mut final_train_loss = Vec::with_capacity(a_values.len());
    for &a in a_values {
        let mut specs = vec![CnnLayerSpec {
            taps: setup.taps.map_or(a + 1, |t| t.min(a + 1)),
            features_in: 1,
            features_out: setup.features,
            nonlinearity: setup.nonlinearity,
            pool: Pooling::None,
        }];
        specs.extend(setup.deeper.iter().copied());
        let mut model = AggGnnModel::init(a, FirstLayerMode::Shared, &specs, setup.readout, Some(graph.n()), setup.model_seed)?;
        let mut trained_loss = None;
        match task {
            Some(task) => {
                let loss = if constrained {
                    setup.loss
                } else {
                    LossSpec {
                        penalty_l0_weight: 0.0,
                        penalty_l1_weight: 0.0,
                        ..setup.loss
                    }
                };
                let outcome = train(&model, task, &loss, &setup.train)?;
                trained_loss = outcome.history.last().map(|h| h.train_loss);
                model = outcome.model;
            }
            None if constrained => {
                rescale_to_targets(&mut model, &setup.loss.omega, setup.loss.l0_target, setup.loss.l1_target)?
            }
            None => {}
        }
        let estimate = model_estimate(&model, &omega)?;
        let records = run_sweep(&model, graph, cfg, &estimate, &omega)?;
        let row = by_epsilon(&records)
            .into_iter()
            .map(|(_, g)| median(&mut g.iter().map(|r| r.empirical).collect::<Vec<_>>()))
            .collect();
        medians.push(row);
        final_train_loss.push(trained_loss);
    }
    let nondecreasing = (0..cfg.epsilons.len())
        .map(|j| medians.windows(2).all(|w: &[Vec<f64>]| w[0][j] <= w[1][j]))
        .collect();
    Ok(TrendTable {
        a_values: a_values.to_vec(),
        epsilons: cfg.epsilons.clone(),
        medians,
        nondecreasing,
        final_train_loss,
    })
}
