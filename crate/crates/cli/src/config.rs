//! The run-config document shared by `train` and `sweep`.
//!
//! Relative paths inside a config resolve against the config file's directory.

use std::path::{Path, PathBuf};

use aggstab::graph::{build_shift_from_adjacency, random_graph, Normalization, RandomGraphModel};
use aggstab::model::ReadoutKind;
use aggstab::stability::{BoundLayer, DEFAULT_SLACK};
use aggstab::training::{LossSpec, TrainConfig};
use aggstab::{CnnLayerSpec, FirstLayerMode, Graph, Omega, PerturbationKind};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub graph: Option<GraphSection>,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub optimizer: Option<OptimizerSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Either a graph file or a random-graph recipe.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub random: Option<RandomGraphSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomGraphSection {
    pub generator: RandomGraphModel,
    pub n: usize,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
}

fn default_normalization() -> Normalization {
    Normalization::SymmetricDegree
}

/// Either a task file or a synthetic source-localization task on the graph.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub task: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub diffusion_steps: usize,
    pub samples: usize,
}

/// Either a checkpoint or an architecture to initialize.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub architecture: Option<Architecture>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub a: usize,
    #[serde(default = "default_mode")]
    pub first_layer_mode: FirstLayerMode,
    pub layers: Vec<CnnLayerSpec>,
    #[serde(default = "default_readout")]
    pub readout: ReadoutKind,
}

fn default_mode() -> FirstLayerMode {
    FirstLayerMode::Shared
}

fn default_readout() -> ReadoutKind {
    ReadoutKind::Linear
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
}

fn default_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    10
}

impl OptimizerSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let base = TrainConfig::new(self.epochs, self.batch_size, seed);
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: self.eps.unwrap_or(base.eps),
            ..base
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub kind: PerturbationKind,
    #[serde(default = "default_probes")]
    pub probe_signals: usize,
    #[serde(default = "default_bound_layer")]
    pub bound_layer: BoundLayer,
    /// Spectral domain; derived from the graph and the largest epsilon when absent.
    #[serde(default)]
    pub omega: Option<Omega>,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_plots")]
    pub plots: bool,
}

fn default_probes() -> usize {
    16
}

fn default_bound_layer() -> BoundLayer {
    BoundLayer::FirstLayer
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

fn default_plots() -> bool {
    true
}

fn exactly_one(section: &str, a: bool, b: bool, names: (&str, &str)) -> Result<(), CliError> {
    match (a, b) {
        (true, false) | (false, true) => Ok(()),
        _ => Err(CliError::Usage(format!("{section}: set exactly one of `{}` and `{}`", names.0, names.1))),
    }
}

impl RunConfig {
    /// Parses, resolves relative paths and checks that referenced files exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.graph.as_mut().and_then(|g| g.path.as_mut()) {
            fix(p);
        }
        if let Some(p) = self.dataset.as_mut().and_then(|d| d.task.as_mut()) {
            fix(p);
        }
        if let Some(p) = self.model.as_mut().and_then(|m| m.checkpoint.as_mut()) {
            fix(p);
        }
    }

    fn check(&self) -> Result<(), CliError> {
        if let Some(g) = &self.graph {
            exactly_one("graph", g.path.is_some(), g.random.is_some(), ("path", "random"))?;
        }
        if let Some(d) = &self.dataset {
            exactly_one("dataset", d.task.is_some(), d.synthetic.is_some(), ("task", "synthetic"))?;
        }
        if let Some(m) = &self.model {
            exactly_one("model", m.checkpoint.is_some(), m.architecture.is_some(), ("checkpoint", "architecture"))?;
        }
        let files = [
            self.graph.as_ref().and_then(|g| g.path.as_ref()),
            self.dataset.as_ref().and_then(|d| d.task.as_ref()),
            self.model.as_ref().and_then(|m| m.checkpoint.as_ref()),
        ];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Usage(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The configured graph, if any section provides one.
    pub fn load_graph(&self, seed: u64) -> Result<Option<Graph>, CliError> {
        let Some(g) = &self.graph else { return Ok(None) };
        if let Some(p) = &g.path {
            return Ok(Some(Graph::from_json(&std::fs::read_to_string(p)?)?));
        }
        let r = g.random.as_ref().expect("checked at load");
        let raw = random_graph(&r.generator, r.n, seed)?;
        Ok(Some(build_shift_from_adjacency(raw.shift(), r.normalization)?))
    }
}
