//! Command-line front end.
//!
//! Every command reads an optional JSON config (`--config`), then applies
//! `RESEMBED_SEED` and explicit flags on top. Exit codes: 0 on success, 1 on
//! runtime failure, 2 on usage or configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::embedding::DEFAULT_DIM;
use crate::error::{Error, Result};
use crate::eval::{
    decay_experiment, overfit_gap_experiment, residual_scale_sweep, write_decay_csv,
    write_overfit_csv, write_scale_csv, ExperimentData,
};
use crate::graph::{
    build_interest_graph, read_sequences_jsonl, write_sequences_jsonl, BehaviorSequence,
    CooccurrenceGraph, UserSequence, DEFAULT_TOP_K, DEFAULT_WINDOW,
};
use crate::ingest::{ingest_amazon, ingest_movielens, AmazonConfig, Ingested, MovieLensConfig};
use crate::nets::{Backend, DEFAULT_HIDDEN};
use crate::optim::{
    gradcheck_suite, train, write_metrics_csv, FusionMode, Model, Structure, TrainConfig,
};
use crate::synth::{
    read_partition, read_samples_jsonl, write_json, write_samples_jsonl, write_traces_jsonl,
    Sample, SynthConfig, SyntheticWorld, WithinDomain, WorldConfig,
};
use crate::theory::{
    bound_sweep, island_graph, prop1_verify, write_sweep_csv, BoundParams, Variant,
};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "RESEMBED_SEED";
/// Largest tolerated relative error in `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Largest tolerated relative deviation in `verify-prop1`.
pub const PROP1_TOLERANCE: f64 = 1e-9;

/// Everything a command may need, with the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Runs per `train` invocation, seeds `seed, seed+1, …`.
    pub repeats: usize,

    /// Co-occurrence window radius.
    pub delta: usize,
    #[serde(rename = "K")]
    pub top_k: usize,

    pub lambda: f64,
    pub d: usize,
    pub batch: usize,
    pub lr0: f64,
    pub decay_gamma: f64,
    pub decay_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub fusion_mode: FusionMode,
    pub backend: Backend,
    pub hidden: Vec<usize>,
    pub att_full_grad: bool,

    pub n_items: usize,
    pub n_domains: usize,
    pub n_sequences: usize,
    pub steps_per_period: usize,
    pub periods: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub eta: f64,
    pub positive_rate: f64,
    /// Zipf exponent inside each domain; uniform when absent.
    pub zipf: Option<f64>,

    pub history_len: usize,
    pub max_users: Option<usize>,

    pub bound: BoundParams,
    pub variant: Variant,

    pub fractions: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub curve_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let world = WorldConfig::default();
        let tc = TrainConfig::default();
        RunConfig {
            seed: 1,
            repeats: 1,
            delta: DEFAULT_WINDOW,
            top_k: DEFAULT_TOP_K,
            lambda: tc.lambda,
            d: DEFAULT_DIM,
            batch: tc.batch_size,
            lr0: tc.lr0,
            decay_gamma: tc.decay_gamma,
            decay_interval: tc.decay_interval,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.eps,
            epochs: tc.epochs,
            fusion_mode: tc.fusion_mode,
            backend: tc.backend,
            hidden: DEFAULT_HIDDEN.to_vec(),
            att_full_grad: false,
            n_items: world.n_items,
            n_domains: world.n_domains,
            n_sequences: world.n_sequences,
            steps_per_period: synth.steps_per_period,
            periods: synth.periods,
            n_train: synth.n_samples,
            n_test: world.n_test,
            eta: synth.label_noise,
            positive_rate: synth.positive_rate,
            zipf: None,
            history_len: crate::ingest::DEFAULT_HISTORY,
            max_users: None,
            bound: BoundParams::default(),
            variant: Variant::Thm2,
            fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            lambdas: vec![0.0, 0.001, 0.006, 0.03, 0.1],
            curve_interval: 100,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.delta == 0 {
            return Err(Error::config("delta", "window radius must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(Error::config("K", "must be at least 1"));
        }
        if let Some(s) = self.zipf {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config("zipf", "exponent must be non-negative"));
            }
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test", "must be at least 1"));
        }
        if self.history_len == 0 {
            return Err(Error::config("history_len", "must be at least 1"));
        }
        if self.max_users == Some(0) {
            return Err(Error::config("max_users", "must be at least 1"));
        }
        if self.curve_interval == 0 {
            return Err(Error::config("curve_interval", "must be at least 1"));
        }
        self.train_config(self.seed).validate()?;
        self.world_config().synth.validate()?;
        self.bound.validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            decay_gamma: self.decay_gamma,
            decay_interval: self.decay_interval,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            batch_size: self.batch,
            lambda: self.lambda,
            epochs: self.epochs,
            seed,
            fusion_mode: self.fusion_mode,
            backend: self.backend,
            dim: self.d,
            hidden: self.hidden.clone(),
            att_full_grad: self.att_full_grad,
            freeze_residual: false,
            curve_interval: None,
        }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            n_items: self.n_items,
            n_domains: self.n_domains,
            n_sequences: self.n_sequences,
            n_test: self.n_test,
            within: self.zipf.map_or(WithinDomain::Uniform, WithinDomain::Zipf),
            synth: SynthConfig {
                steps_per_period: self.steps_per_period,
                periods: self.periods,
                n_samples: self.n_train,
                label_noise: self.eta,
                positive_rate: self.positive_rate,
                seed: self.seed,
            },
        }
    }
}

/// Reads and validates a config file; a missing path gives all defaults.
pub fn parse_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                field: config_field(&e),
                reason: e.to_string(),
            })?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Best-effort field name from a serde error message.
fn config_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "resembed",
    version,
    about = "Residual embeddings for CTR prediction"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the interest delay model.
    Synth(OutDir),
    /// Convert a MovieLens ratings CSV into samples.
    IngestMovielens(IngestArgs),
    /// Convert Amazon review JSON lines into samples.
    IngestAmazon(IngestArgs),
    /// Build the top-K interest graph from behaviour sequences.
    BuildGraph(BuildGraphArgs),
    /// Train a model and write per-epoch metrics and a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on samples, or run an experiment harness.
    Eval(EvalArgs),
    /// Write the resolved embedding table of a checkpoint as CSV.
    ExportEmb(ExportArgs),
    /// Check the island averaging identity on a graph and embedding.
    VerifyProp1(Prop1Args),
    /// Evaluate the generalization bound and its infimum over r.
    Bound(BoundArgs),
    /// Compare analytic gradients with finite differences on toy models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct OutDir {
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    max_users: Option<usize>,
}

#[derive(Debug, Args)]
struct BuildGraphArgs {
    /// Sequences JSONL (`{"user", "items"}` per line).
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Item count; defaults to the largest id plus one.
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long = "K", alias = "top-k")]
    top_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Oracle,
    Avg,
    Gcn,
    Att,
}

impl From<ModeArg> for FusionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => FusionMode::None,
            ModeArg::Oracle => FusionMode::Oracle,
            ModeArg::Avg => FusionMode::Avg,
            ModeArg::Gcn => FusionMode::Gcn,
            ModeArg::Att => FusionMode::Att,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mlp,
    Pnn,
    Din,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mlp => Backend::Mlp,
            BackendArg::Pnn => Backend::Pnn,
            BackendArg::Din => Backend::Din,
        }
    }
}

#[derive(Debug, Args)]
struct ModelInputs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Interest graph text file (avg, gcn, att).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Domain assignment JSON (oracle).
    #[arg(long)]
    domains: Option<PathBuf>,
    /// Item count when neither a graph nor a domain file is given.
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    fusion_mode: Option<ModeArg>,
    #[arg(long)]
    backend: Option<BackendArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Overfit,
    Decay,
    Scale,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(
        long,
        required_unless_present = "experiment",
        conflicts_with = "experiment"
    )]
    checkpoint: Option<PathBuf>,
    /// Samples to score with `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    samples: Option<PathBuf>,
    /// Domain file for aggregation statistics of a checkpoint.
    #[arg(long, requires = "checkpoint")]
    domains_ref: Option<PathBuf>,
    /// Harness to run instead of scoring a checkpoint.
    #[arg(long, value_enum, requires = "train")]
    experiment: Option<Experiment>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    domains: Option<PathBuf>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    fusion_mode: Option<ModeArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Prop1Args {
    /// Island graph; generated from `--islands` when absent.
    #[arg(long, requires = "embeddings")]
    graph: Option<PathBuf>,
    /// Embedding CSV (`item_id,e_0,…`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Island sizes of a generated fixture, e.g. `3,5,4`.
    #[arg(long, value_delimiter = ',', conflicts_with = "graph")]
    islands: Vec<usize>,
    /// Dimension of a generated fixture.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Thm1,
    Thm2,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Parameter to sweep (D, d, T, p, N, N_z, N_S, R_max, W_norm, l_M, delta).
    #[arg(long, requires = "values")]
    sweep: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Output CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed(String),
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(Status::Ok) => 0,
        Ok(Status::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

fn require(path: &Path, field: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("{} does not exist", path.display()),
        ))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli) -> Result<Status> {
    if cli.threads == 0 {
        return Err(Error::config("threads", "must be at least 1"));
    }
    if let Some(p) = &cli.config {
        require(p, "config")?;
    }
    let mut cfg = parse_config(cli.config.as_deref())?;
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_ENV, format!("`{raw}` is not an integer")))?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn dispatch(command: Command, mut cfg: RunConfig) -> Result<Status> {
    match command {
        Command::Synth(a) => cmd_synth(&cfg, &a.out_dir),
        Command::IngestMovielens(a) => {
            require(&a.input, "input")?;
            cfg.history_len = a.history_len.unwrap_or(cfg.history_len);
            cfg.max_users = a.max_users.or(cfg.max_users);
            cfg.validate()?;
            let out = ingest_movielens(
                &a.input,
                &MovieLensConfig {
                    history_len: cfg.history_len,
                    max_users: cfg.max_users,
                },
            )?;
            write_ingested(&out, &a.out_dir)
        }
        Command::IngestAmazon(a) => {
            require(&a.input, "input")?;
            cfg.max_users = a.max_users.or(cfg.max_users);
            cfg.validate()?;
            let out = ingest_amazon(
                &a.input,
                &AmazonConfig {
                    max_users: cfg.max_users,
                    seed: cfg.seed,
                },
            )?;
            write_ingested(&out, &a.out_dir)
        }
        Command::BuildGraph(a) => {
            require(&a.sequences, "sequences")?;
            cfg.delta = a.delta.unwrap_or(cfg.delta);
            cfg.top_k = a.top_k.unwrap_or(cfg.top_k);
            cfg.validate()?;
            cmd_build_graph(&cfg, &a)
        }
        Command::Train(a) => cmd_train(cfg, &a),
        Command::Eval(a) => cmd_eval(cfg, &a),
        Command::ExportEmb(a) => {
            require(&a.checkpoint, "checkpoint")?;
            Model::load(&a.checkpoint)?
                .embedding_table()?
                .write_csv(&a.out)?;
            Ok(Status::Ok)
        }
        Command::VerifyProp1(a) => cmd_prop1(&cfg, &a),
        Command::Bound(a) => cmd_bound(&cfg, &a),
        Command::Gradcheck(a) => {
            let cases = gradcheck_suite(cfg.seed)?;
            let worst = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
            for c in &cases {
                println!(
                    "{:?} {} full_grad={} lambda={} checked={} max_rel_err={:.3e}",
                    c.backend,
                    c.fusion_mode.name(),
                    c.att_full_grad,
                    c.lambda,
                    c.checked,
                    c.max_rel_err
                );
            }
            if let Some(out) = &a.out {
                write_json(out, &cases)?;
            }
            if worst < GRADCHECK_TOLERANCE {
                Ok(Status::Ok)
            } else {
                Ok(Status::CheckFailed(format!(
                    "max relative error {worst:.3e}"
                )))
            }
        }
    }
}

fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<Status> {
    let world = SyntheticWorld::generate(&cfg.world_config())?;
    ensure_dir(out_dir)?;
    write_samples_jsonl(&out_dir.join("train.jsonl"), &world.train)?;
    write_samples_jsonl(&out_dir.join("test.jsonl"), &world.test)?;
    write_traces_jsonl(&out_dir.join("train_traces.jsonl"), &world.train_traces)?;
    write_traces_jsonl(&out_dir.join("test_traces.jsonl"), &world.test_traces)?;
    world.domains.write_json(&out_dir.join("domains.json"))?;
    let seqs: Vec<UserSequence> = world
        .train
        .iter()
        .enumerate()
        .map(|(k, s)| UserSequence {
            user: format!("s{k}"),
            items: s.history.clone(),
        })
        .collect();
    write_sequences_jsonl(&out_dir.join("sequences.jsonl"), &seqs)?;
    println!(
        "wrote {} train and {} test samples to {}",
        world.train.len(),
        world.test.len(),
        out_dir.display()
    );
    Ok(Status::Ok)
}

fn write_ingested(out: &Ingested, out_dir: &Path) -> Result<Status> {
    ensure_dir(out_dir)?;
    write_samples_jsonl(&out_dir.join("train.jsonl"), &out.train)?;
    write_samples_jsonl(&out_dir.join("test.jsonl"), &out.test)?;
    write_sequences_jsonl(&out_dir.join("sequences.jsonl"), &out.graph_sequences)?;
    out.vocab.write_json(&out_dir.join("vocab.json"))?;
    println!(
        "items {} train {} test {} skipped {}",
        out.vocab.len(),
        out.train.len(),
        out.test.len(),
        out.skipped
    );
    Ok(Status::Ok)
}

fn cmd_build_graph(cfg: &RunConfig, a: &BuildGraphArgs) -> Result<Status> {
    let seqs = read_sequences_jsonl(&a.sequences)?;
    let max_id = seqs
        .iter()
        .flat_map(|s| &s.items)
        .max()
        .map_or(0, |&m| m as usize + 1);
    let n_items = a.n_items.unwrap_or(max_id);
    if n_items < max_id {
        return Err(Error::config(
            "n_items",
            format!("sequences use item ids up to {}", max_id - 1),
        ));
    }
    let behaviour: Vec<BehaviorSequence> = seqs
        .into_iter()
        .filter(|s| !s.items.is_empty())
        .map(|s| BehaviorSequence::new(s.items))
        .collect::<Result<_>>()?;
    let graph = build_interest_graph(&behaviour, cfg.delta, cfg.top_k, n_items)?;
    graph.write_text(&a.out)?;
    println!(
        "graph: {} items, {} edges",
        graph.n_items(),
        graph.n_edges()
    );
    Ok(Status::Ok)
}

fn apply_model_flags(cfg: &mut RunConfig, m: &ModelInputs) -> Result<()> {
    if let Some(v) = m.fusion_mode {
        cfg.fusion_mode = v.into();
    }
    if let Some(v) = m.backend {
        cfg.backend = v.into();
    }
    cfg.epochs = m.epochs.unwrap_or(cfg.epochs);
    cfg.lr0 = m.lr0.unwrap_or(cfg.lr0);
    cfg.lambda = m.lambda.unwrap_or(cfg.lambda);
    cfg.validate()
}

fn load_samples(path: &Path, field: &str) -> Result<Vec<Sample>> {
    require(path, field)?;
    read_samples_jsonl(path)
}

fn max_item(samples: &[&[Sample]]) -> usize {
    samples
        .iter()
        .flat_map(|s| s.iter())
        .flat_map(|s| s.history.iter().chain(std::iter::once(&s.target)))
        .max()
        .map_or(0, |&m| m as usize + 1)
}

fn load_structure(
    mode: FusionMode,
    graph: Option<&Path>,
    domains: Option<&Path>,
) -> Result<Structure> {
    match mode {
        FusionMode::None => Ok(Structure::None),
        FusionMode::Oracle => {
            let p =
                domains.ok_or_else(|| Error::config("domains", "oracle mode needs --domains"))?;
            require(p, "domains")?;
            Ok(Structure::Partition(read_partition(p)?))
        }
        _ => {
            let p = graph.ok_or_else(|| Error::config("graph", "graph fusion needs --graph"))?;
            require(p, "graph")?;
            Ok(Structure::Graph(CooccurrenceGraph::read_text(p)?))
        }
    }
}

fn cmd_train(mut cfg: RunConfig, a: &TrainArgs) -> Result<Status> {
    let m = &a.inputs;
    apply_model_flags(&mut cfg, m)?;
    let train_set = load_samples(&m.train, "train")?;
    let test_set = match &m.test {
        Some(p) => load_samples(p, "test")?,
        None => Vec::new(),
    };
    let structure = load_structure(cfg.fusion_mode, m.graph.as_deref(), m.domains.as_deref())?;
    let n_items = match &structure {
        Structure::Graph(g) => g.n_items(),
        Structure::Partition(p) => p.n_items(),
        Structure::None => m
            .n_items
            .unwrap_or_else(|| max_item(&[&train_set, &test_set])),
    };
    ensure_dir(&a.out_dir)?;
    for k in 0..cfg.repeats {
        let seed = cfg.seed + k as u64;
        let tc = cfg.train_config(seed);
        let out = train(&train_set, &test_set, n_items, structure.clone(), &tc)?;
        let suffix = if cfg.repeats == 1 {
            String::new()
        } else {
            format!("_seed{seed}")
        };
        write_metrics_csv(
            &a.out_dir.join(format!("metrics{suffix}.csv")),
            &out.metrics,
        )?;
        out.model
            .save(&a.out_dir.join(format!("checkpoint{suffix}.json")))?;
        if let Some(last) = out.final_metrics() {
            println!(
                "seed {seed}: train_loss {:.5} test_auc {}",
                last.train_loss,
                last.test_auc
                    .map_or_else(|| "n/a".into(), |v| format!("{v:.5}"))
            );
        }
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct EvalReport {
    samples: usize,
    loss: f64,
    auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregation: Option<crate::eval::AggregationStats>,
}

fn cmd_eval(mut cfg: RunConfig, a: &EvalArgs) -> Result<Status> {
    if let Some(ck) = &a.checkpoint {
        require(ck, "checkpoint")?;
        let model = Model::load(ck)?;
        let samples = match &a.samples {
            Some(p) => load_samples(p, "samples")?,
            None => return Err(Error::config("samples", "--checkpoint needs --samples")),
        };
        let (loss, auc) = model.evaluate(&samples)?;
        let aggregation = match &a.domains_ref {
            Some(p) => {
                require(p, "domains_ref")?;
                let partition = read_partition(p)?;
                let fusion = model.fusion_matrix()?;
                Some(crate::eval::aggregation_stats(
                    &model.embedding_table()?,
                    &partition,
                    &model.embed,
                    fusion.as_ref(),
                )?)
            }
            None => None,
        };
        write_json(
            &a.out,
            &EvalReport {
                samples: samples.len(),
                loss,
                auc,
                aggregation,
            },
        )?;
        println!("loss {loss:.6} auc {auc:?}");
        return Ok(Status::Ok);
    }

    let experiment = a
        .experiment
        .expect("clap enforces checkpoint or experiment");
    if let Some(mode) = a.fusion_mode {
        cfg.fusion_mode = mode.into();
    }
    cfg.validate()?;
    let train_set = load_samples(a.train.as_deref().expect("clap enforces --train"), "train")?;
    let test_set = match &a.test {
        Some(p) => load_samples(p, "test")?,
        None => return Err(Error::config("test", "experiments need --test")),
    };
    let partition = match &a.domains {
        Some(p) => {
            require(p, "domains")?;
            Some(read_partition(p)?)
        }
        None => None,
    };
    let n_items = partition
        .as_ref()
        .map(|p| p.n_items())
        .or(a.n_items)
        .unwrap_or_else(|| max_item(&[&train_set, &test_set]));
    let data = ExperimentData {
        train: train_set,
        test: test_set,
        n_items,
        window: cfg.delta,
        top_k: cfg.top_k,
        partition,
    };
    let residual = cfg.train_config(cfg.seed);
    let baseline = TrainConfig {
        fusion_mode: FusionMode::None,
        lambda: 0.0,
        ..residual.clone()
    };
    match experiment {
        Experiment::Overfit => {
            let with_curve = |c: &TrainConfig| TrainConfig {
                curve_interval: Some(cfg.curve_interval),
                ..c.clone()
            };
            let rep =
                overfit_gap_experiment(&data, &with_curve(&baseline), &with_curve(&residual))?;
            write_overfit_csv(&a.out, &rep)?;
            println!(
                "final gap baseline {:?} residual {:?}",
                rep.baseline_gap, rep.residual_gap
            );
        }
        Experiment::Decay => {
            let methods = vec![
                ("baseline".to_string(), baseline),
                (residual.fusion_mode.name().to_string(), residual),
            ];
            let rows = decay_experiment(&data, &cfg.fractions, &methods)?;
            write_decay_csv(&a.out, &rows)?;
        }
        Experiment::Scale => {
            let rows = residual_scale_sweep(&data, &cfg.lambdas, &residual)?;
            write_scale_csv(&a.out, &rows)?;
        }
    }
    Ok(Status::Ok)
}

fn cmd_prop1(cfg: &RunConfig, a: &Prop1Args) -> Result<Status> {
    let (graph, x) = match (&a.graph, &a.embeddings) {
        (Some(g), Some(e)) => {
            require(g, "graph")?;
            require(e, "embeddings")?;
            (
                CooccurrenceGraph::read_text(g)?,
                crate::embedding::EmbeddingTable::read_csv(e)?.table,
            )
        }
        (None, None) => {
            if a.islands.is_empty() {
                return Err(Error::config(
                    "islands",
                    "give --graph/--embeddings or --islands",
                ));
            }
            if a.dim == 0 {
                return Err(Error::config("dim", "must be at least 1"));
            }
            island_fixture(&a.islands, a.dim, cfg.seed)?
        }
        _ => {
            return Err(Error::config(
                "graph",
                "--graph and --embeddings go together",
            ))
        }
    };
    let report = prop1_verify(&graph, &x)?;
    write_json(&a.out, &report)?;
    println!("max deviation {:.3e}", report.max_deviation);
    if report.max_deviation <= PROP1_TOLERANCE {
        Ok(Status::Ok)
    } else {
        Ok(Status::CheckFailed(format!(
            "deviation {:.3e} exceeds {PROP1_TOLERANCE:e}",
            report.max_deviation
        )))
    }
}

/// Complete islands of the given sizes with uniform `[-10, 10]` embeddings.
pub fn island_fixture(
    sizes: &[usize],
    dim: usize,
    seed: u64,
) -> Result<(CooccurrenceGraph, ndarray::Array2<f64>)> {
    use rand::{Rng, SeedableRng};
    let graph = island_graph(sizes)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = ndarray::Array2::from_shape_simple_fn((graph.n_items(), dim), || {
        rng.gen_range(-10.0..=10.0)
    });
    Ok((graph, x))
}

fn cmd_bound(cfg: &RunConfig, a: &BoundArgs) -> Result<Status> {
    let variant = match a.variant {
        Some(VariantArg::Thm1) => Variant::Thm1,
        Some(VariantArg::Thm2) => Variant::Thm2,
        None => cfg.variant,
    };
    let rows = match &a.sweep {
        Some(param) => bound_sweep(&cfg.bound, param, &a.values, variant)?,
        None => {
            let (r_star, bound) = crate::theory::theorem_bound_inf(&cfg.bound, variant)?;
            vec![crate::theory::SweepRow {
                param: "base".into(),
                value: 0.0,
                r_star,
                bound,
            }]
        }
    };
    match &a.out {
        Some(p) => write_sweep_csv(p, &rows)?,
        None => {
            println!("param,value,r_star,bound");
            for r in &rows {
                println!("{},{},{},{}", r.param, r.value, r.r_star, r.bound);
            }
        }
    }
    Ok(Status::Ok)
}
