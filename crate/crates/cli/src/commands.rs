use std::path::{Path, PathBuf};

use aggstab::datasets::{build_rating_task, parse_movielens, pearson_similarity_graph, synthetic_source_localization, RegressionTask, SimilarityGraphConfig};
use aggstab::filters::{certify_filter, stability_bound, Certification};
use aggstab::graph::{build_shift_from_adjacency, random_graph, Normalization, RandomGraphModel};
use aggstab::rng::derive_seed;
use aggstab::stability::{dat_file, emit_report, model_estimate, omega_for_sweep, parse_records_csv, run_sweep, svg_chart, SweepSummary};
use aggstab::training::{history_csv, train as train_model, LossSpec, TrainConfig};
use aggstab::{AggGnnModel, Graph, Omega, SweepConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{resolve_seed, CliError, GraphKind, NormKind};

// Child-seed slots so train and sweep rebuild the same graph and model.
const GRAPH_SLOT: u64 = 0;
const MODEL_SLOT: u64 = 1;
const TASK_SLOT: u64 = 2;
const TRAIN_SLOT: u64 = 3;
const SWEEP_SLOT: u64 = 4;

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub struct GenGraphArgs {
    pub kind: GraphKind,
    pub n: usize,
    pub p: Option<f64>,
    pub blocks: Option<usize>,
    pub p_in: Option<f64>,
    pub p_out: Option<f64>,
    pub normalization: NormKind,
}

fn probability(flag: &str, v: Option<f64>) -> Result<f64, CliError> {
    match v {
        None => Err(CliError::Usage(format!("--{flag} is required for this model"))),
        Some(p) if !(0.0..=1.0).contains(&p) => Err(CliError::Usage(format!("--{flag}={p} must lie in [0, 1]"))),
        Some(p) => Ok(p),
    }
}

pub fn gen_graph(args: GenGraphArgs, seed: u64, out: &Path) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let model = match args.kind {
        GraphKind::Er => RandomGraphModel::ErdosRenyi {
            p: probability("p", args.p)?,
        },
        GraphKind::Sbm => RandomGraphModel::Sbm {
            blocks: args.blocks.ok_or_else(|| CliError::Usage("--blocks is required for sbm".into()))?,
            p_in: probability("p-in", args.p_in)?,
            p_out: probability("p-out", args.p_out)?,
        },
    };
    let normalization = match args.normalization {
        NormKind::None => Normalization::None,
        NormKind::Sym => Normalization::SymmetricDegree,
    };
    let raw = random_graph(&model, args.n, seed)?;
    let g = build_shift_from_adjacency(raw.shift(), normalization)?;
    write(out, &(g.to_json()? + "\n"))
}

pub struct IngestArgs {
    pub ratings: PathBuf,
    pub movies: usize,
    pub out_dir: PathBuf,
    pub target: Option<u32>,
    pub min_common: usize,
    pub top_k: usize,
    pub min_ratings: usize,
}

pub fn ingest(args: IngestArgs, seed: u64) -> Result<(), CliError> {
    let IngestArgs {
        ratings,
        movies,
        out_dir,
        target,
        min_common,
        top_k,
        min_ratings,
    } = args;
    if !ratings.is_file() {
        return Err(CliError::Usage(format!("ratings file {} does not exist", ratings.display())));
    }
    if movies == 0 {
        return Err(CliError::Usage("--movies must be >= 1".into()));
    }
    let table = parse_movielens(&ratings)?;
    let ids = table.most_rated_items(movies);
    if ids.len() < movies {
        return Err(CliError::Data(format!("only {} distinct movies available, {movies} requested", ids.len())));
    }
    let cfg = SimilarityGraphConfig {
        min_common,
        top_k: (top_k > 0).then_some(top_k),
        ..SimilarityGraphConfig::default()
    };
    let graph = pearson_similarity_graph(&table, &ids, &cfg)?;
    write(&out_dir.join("graph.json"), &(graph.to_json()? + "\n"))?;
    if let Some(item) = target {
        let task = build_rating_task(&table, &graph, item, min_ratings, seed)?;
        write(&out_dir.join("task.json"), &(task.to_json()? + "\n"))?;
    }
    Ok(())
}

fn build_task(cfg: &RunConfig, seed: u64) -> Result<RegressionTask, CliError> {
    let d = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Usage("config needs a dataset section".into()))?;
    if let Some(p) = &d.task {
        return Ok(RegressionTask::from_json(&read(p)?)?);
    }
    let syn = d.synthetic.expect("checked at load");
    let graph = cfg
        .load_graph(derive_seed(seed, &[GRAPH_SLOT]))?
        .ok_or_else(|| CliError::Usage("a synthetic dataset needs a graph section".into()))?;
    Ok(synthetic_source_localization(&graph, syn.diffusion_steps, syn.samples, derive_seed(seed, &[TASK_SLOT]))?)
}

fn build_model(cfg: &RunConfig, nodes: usize, seed: u64) -> Result<AggGnnModel, CliError> {
    let m = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("config needs a model section".into()))?;
    let model = match (&m.checkpoint, &m.architecture) {
        (Some(p), _) => AggGnnModel::from_json(&read(p)?)?,
        (None, Some(arch)) => AggGnnModel::init(arch.a, arch.first_layer_mode, &arch.layers, arch.readout, Some(nodes), derive_seed(seed, &[MODEL_SLOT]))?,
        (None, None) => unreachable!("checked at load"),
    };
    if let Some(fixed) = model.fixed_nodes() {
        if fixed != nodes {
            return Err(CliError::Usage(format!("model expects {fixed} nodes, graph has {nodes}")));
        }
    }
    Ok(model)
}

pub fn train(config: &Path, seed_flag: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let seed = resolve_seed(seed_flag, cfg.seed)?;
    let task = build_task(&cfg, seed)?;
    let model = build_model(&cfg, task.graph.n(), seed)?;
    let loss = match cfg.loss {
        Some(l) => l,
        None => LossSpec::unpenalized(omega_for_sweep(&task.graph, 0.0, 256)?),
    };
    let train_cfg = match &cfg.optimizer {
        Some(o) => o.train_config(derive_seed(seed, &[TRAIN_SLOT])),
        None => TrainConfig::new(50, 10, derive_seed(seed, &[TRAIN_SLOT])),
    };
    let outcome = train_model(&model, &task, &loss, &train_cfg)?;
    write(&cfg.output_dir.join("model.json"), &(outcome.model.to_json()? + "\n"))?;
    write(&cfg.output_dir.join("history.csv"), &history_csv(&outcome.history))
}

#[derive(Serialize)]
struct CertifyOutput {
    #[serde(rename = "L0")]
    l0: f64,
    #[serde(rename = "L1")]
    l1: f64,
    pass: bool,
    omega: [f64; 2],
    grid_points: usize,
    a: usize,
    nodes: Option<usize>,
    #[serde(rename = "C0")]
    c0: Option<f64>,
    #[serde(rename = "C1")]
    c1: Option<f64>,
}

pub fn certify(model_path: &Path, lo: f64, hi: f64, grid: usize, l0_max: f64, l1_max: f64, nodes: Option<usize>) -> Result<(), CliError> {
    if !model_path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", model_path.display())));
    }
    let model = AggGnnModel::from_json(&read(model_path)?)?;
    let omega = Omega::new(lo, hi, grid)?;
    let mut pass = true;
    let mut est: Option<aggstab::LipschitzEstimate> = None;
    for f in model.padded_first_layer_filters() {
        let Certification { pass: p, estimate } = certify_filter(&f, &omega, l0_max, l1_max)?;
        pass &= p;
        est = Some(est.map_or(estimate, |e| e.max(estimate)));
    }
    let est = est.expect("a model has at least one first-layer filter");
    let nodes = nodes.or(model.fixed_nodes());
    let bound = nodes.map(|n| stability_bound(n, model.a, est.l0, est.l1, 0.0, 0.0)).transpose()?;
    let out = CertifyOutput {
        l0: est.l0,
        l1: est.l1,
        pass,
        omega: [omega.lo, omega.hi],
        grid_points: omega.grid_points,
        a: model.a,
        nodes,
        c0: bound.map(|b| b.c0),
        c1: bound.map(|b| b.c1),
    };
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::Usage(e.to_string()))?);
    Ok(())
}

fn sweep_graph(cfg: &RunConfig, seed: u64) -> Result<Graph, CliError> {
    if let Some(g) = cfg.load_graph(derive_seed(seed, &[GRAPH_SLOT]))? {
        return Ok(g);
    }
    match cfg.dataset.as_ref().and_then(|d| d.task.as_ref()) {
        Some(p) => Ok(RegressionTask::from_json(&read(p)?)?.graph),
        None => Err(CliError::Usage("sweep needs a graph section or a task file".into())),
    }
}

fn write_plots(summary: &SweepSummary, dir: &Path, stem: &str) -> Result<(), CliError> {
    write(&dir.join(format!("{stem}.dat")), &dat_file(summary))?;
    write(&dir.join(format!("{stem}.svg")), &svg_chart(summary))
}

pub fn sweep(config: &Path, seed_flag: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let seed = resolve_seed(seed_flag, cfg.seed)?;
    let section = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("config needs a sweep section".into()))?;
    let graph = sweep_graph(&cfg, seed)?;
    let model = build_model(&cfg, graph.n(), seed)?;
    let sweep_cfg = SweepConfig {
        epsilons: section.epsilons.clone(),
        trials: section.trials,
        kind: section.kind,
        probe_signals: section.probe_signals,
        seed: derive_seed(seed, &[SWEEP_SLOT]),
        bound_layer: section.bound_layer,
    };
    sweep_cfg.validate()?;
    let omega = match section.omega {
        Some(o) => {
            o.validate()?;
            o
        }
        None => omega_for_sweep(&graph, section.epsilons.iter().copied().fold(0.0, f64::max), aggstab::filters::DEFAULT_GRID)?,
    };
    let estimate = model_estimate(&model, &omega)?;
    let records = run_sweep(&model, &graph, &sweep_cfg, &estimate, &omega)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    emit_report(&records, &cfg.output_dir.join("sweep.csv"), section.slack)?;
    let summary = SweepSummary::from_records(&records, section.slack);
    if section.plots {
        write_plots(&summary, &cfg.output_dir, "sweep")?;
    }
    println!("{} records, {} violations", summary.count, summary.violations.unwrap_or(0));
    Ok(())
}

pub fn report(records: &Path, out_dir: &Path, slack: f64) -> Result<(), CliError> {
    let recs = parse_records_csv(&read(records)?)?;
    let stem = records.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let summary = SweepSummary::from_records(&recs, slack);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Usage(e.to_string()))?;
    write(&out_dir.join(format!("{stem}.summary.json")), &(json + "\n"))?;
    write_plots(&summary, out_dir, stem)
}
