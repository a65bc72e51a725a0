//! Command-line entry points: training runs with full artifact output
//! (model, history CSV, per-generation DOT snapshots, manifest), evaluation,
//! time-series transformation and DOT export.
//!
//! Configuration comes from a plain `key=value` file plus command-line
//! overrides; the run manifest records everything needed to reproduce a
//! sequential run bit-for-bit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::{
    build_mts_model, load_idx, load_timeseries_csv, merge_channels, mts_to_images, save_idx,
    Dataset, EpsRule, Samples,
};
use crate::dot::export_dot;
use crate::error::{Error, Result};
use crate::graph::{InputSpec, LayerGraph};
use crate::mcts::{Policy, ScoreMode, SearchBudget};
use crate::model_io::{load_model, save_model};
use crate::training::{
    evaluate, simset_indices, stratified_split_indices, train, LrMode, Orchestrator,
    TrainConfig, TrainHooks, DEFAULT_OVERFIT_GAP,
};

pub const DEFAULT_SIM_PER_CLASS: usize = 10;
pub const DEFAULT_EPS_QUANTILE: f64 = 0.1;

/// Resolved run settings: library defaults, overridden by the config file,
/// overridden by command-line flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub policy: Policy,
    pub orchestrator: Orchestrator,
    pub score_mode: ScoreMode,
    pub lr_mode: LrMode,
    pub generations: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub batch_size: usize,
    pub time_limit_secs: f64,
    /// 0 = wall-clock limited; > 0 = exactly this many MCTS iterations
    /// (the reproducible mode).
    pub mcts_iterations: u64,
    pub rollout_depth: usize,
    pub exploration: f64,
    pub sim_epochs: usize,
    pub sim_per_class: usize,
    pub def_neu: usize,
    pub conv_channels: usize,
    pub test_fraction: f64,
    pub overfit_gap: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub ts_csv: Option<PathBuf>,
    pub shared_input: bool,
    pub eps: Option<f64>,
    pub eps_quantile: f64,
    pub downsample: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            policy: Policy::Mcts,
            orchestrator: Orchestrator::ProgressCheck,
            score_mode: ScoreMode::Accuracy,
            lr_mode: LrMode::Progressive,
            generations: 10,
            epochs: 50,
            lr_max: 0.1,
            batch_size: 32,
            time_limit_secs: 30.0,
            mcts_iterations: 0,
            rollout_depth: 2,
            exploration: std::f64::consts::SQRT_2,
            sim_epochs: 10,
            sim_per_class: DEFAULT_SIM_PER_CLASS,
            def_neu: 10,
            conv_channels: 4,
            test_fraction: 0.2,
            overfit_gap: DEFAULT_OVERFIT_GAP,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            ts_csv: None,
            shared_input: false,
            eps: None,
            eps_quantile: DEFAULT_EPS_QUANTILE,
            downsample: 0,
        }
    }
}

fn parse_policy(s: &str) -> Result<Policy> {
    match s {
        "mcts" => Ok(Policy::Mcts),
        "greedy" => Ok(Policy::Greedy),
        "random" => Ok(Policy::Random),
        _ => Err(Error::InvalidArgument(format!(
            "policy must be mcts|greedy|random, got `{s}`"
        ))),
    }
}

fn policy_name(p: Policy) -> &'static str {
    match p {
        Policy::Mcts => "mcts",
        Policy::Greedy => "greedy",
        Policy::Random => "random",
    }
}

fn parse_orchestrator(s: &str) -> Result<Orchestrator> {
    match s {
        "constant" => Ok(Orchestrator::Constant),
        "progress-check" => Ok(Orchestrator::ProgressCheck),
        "overfit" => Ok(Orchestrator::Overfit),
        _ => Err(Error::InvalidArgument(format!(
            "orchestrator must be constant|progress-check|overfit, got `{s}`"
        ))),
    }
}

fn orchestrator_name(o: Orchestrator) -> &'static str {
    match o {
        Orchestrator::Constant => "constant",
        Orchestrator::ProgressCheck => "progress-check",
        Orchestrator::Overfit => "overfit",
    }
}

fn parse_score_mode(s: &str) -> Result<ScoreMode> {
    match s {
        "accuracy" => Ok(ScoreMode::Accuracy),
        "loss" => Ok(ScoreMode::Loss),
        _ => Err(Error::InvalidArgument(format!(
            "score mode must be accuracy|loss, got `{s}`"
        ))),
    }
}

fn score_mode_name(m: ScoreMode) -> &'static str {
    match m {
        ScoreMode::Accuracy => "accuracy",
        ScoreMode::Loss => "loss",
    }
}

fn parse_lr_mode(s: &str) -> Result<LrMode> {
    match s {
        "progressive" => Ok(LrMode::Progressive),
        "constant" => Ok(LrMode::Constant),
        _ => Err(Error::InvalidArgument(format!(
            "lr mode must be progressive|constant, got `{s}`"
        ))),
    }
}

fn lr_mode_name(m: LrMode) -> &'static str {
    match m {
        LrMode::Progressive => "progressive",
        LrMode::Constant => "constant",
    }
}

impl Settings {
    /// Applies one `key=value` pair from a config file.
    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidArgument(format!("invalid value `{value}` for config key `{key}`"))
            })
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "policy" => self.policy = parse_policy(value)?,
            "orchestrator" => self.orchestrator = parse_orchestrator(value)?,
            "score_mode" => self.score_mode = parse_score_mode(value)?,
            "lr_mode" => self.lr_mode = parse_lr_mode(value)?,
            "generations" => self.generations = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_max" => self.lr_max = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "time_limit_secs" => self.time_limit_secs = num(key, value)?,
            "mcts_iterations" => self.mcts_iterations = num(key, value)?,
            "rollout_depth" => self.rollout_depth = num(key, value)?,
            "exploration" => self.exploration = num(key, value)?,
            "sim_epochs" => self.sim_epochs = num(key, value)?,
            "sim_per_class" => self.sim_per_class = num(key, value)?,
            "def_neu" => self.def_neu = num(key, value)?,
            "conv_channels" => self.conv_channels = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "overfit_gap" => self.overfit_gap = num(key, value)?,
            "train_images" => self.train_images = Some(PathBuf::from(value)),
            "train_labels" => self.train_labels = Some(PathBuf::from(value)),
            "test_images" => self.test_images = Some(PathBuf::from(value)),
            "test_labels" => self.test_labels = Some(PathBuf::from(value)),
            "ts_csv" => self.ts_csv = Some(PathBuf::from(value)),
            "shared_input" => self.shared_input = num(key, value)?,
            "eps" => self.eps = Some(num(key, value)?),
            "eps_quantile" => self.eps_quantile = num(key, value)?,
            "downsample" => self.downsample = num(key, value)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key `{key}`"
                )))
            }
        }
        Ok(())
    }

    /// Loads a plain-text config file: one `key=value` per line, `#` comments.
    pub fn load_config(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn budget(&self) -> SearchBudget {
        SearchBudget {
            time_limit: Duration::from_secs_f64(self.time_limit_secs),
            max_iterations: if self.mcts_iterations > 0 {
                Some(self.mcts_iterations)
            } else {
                None
            },
            rollout_depth: self.rollout_depth,
            exploration: self.exploration,
            sim_epochs: self.sim_epochs,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            generations: self.generations,
            epochs_per_generation: self.epochs,
            lr_max: self.lr_max,
            lr_mode: self.lr_mode,
            orchestrator: self.orchestrator,
            score_mode: self.score_mode,
            policy: self.policy,
            budget: self.budget(),
            batch_size: self.batch_size,
            seed: self.seed,
            overfit_gap: self.overfit_gap,
        }
    }

    /// Canonical `key=value` lines for the manifest, fixed order.
    fn manifest_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("seed={}", self.seed),
            format!("policy={}", policy_name(self.policy)),
            format!("orchestrator={}", orchestrator_name(self.orchestrator)),
            format!("score_mode={}", score_mode_name(self.score_mode)),
            format!("lr_mode={}", lr_mode_name(self.lr_mode)),
            format!("generations={}", self.generations),
            format!("epochs={}", self.epochs),
            format!("lr_max={}", self.lr_max),
            format!("batch_size={}", self.batch_size),
            format!("time_limit_secs={}", self.time_limit_secs),
            format!("mcts_iterations={}", self.mcts_iterations),
            format!("rollout_depth={}", self.rollout_depth),
            format!("exploration={}", self.exploration),
            format!("sim_epochs={}", self.sim_epochs),
            format!("sim_per_class={}", self.sim_per_class),
            format!("def_neu={}", self.def_neu),
            format!("conv_channels={}", self.conv_channels),
            format!("test_fraction={}", self.test_fraction),
            format!("overfit_gap={}", self.overfit_gap),
            format!("shared_input={}", self.shared_input),
            format!("eps_quantile={}", self.eps_quantile),
            format!("downsample={}", self.downsample),
        ];
        if let Some(e) = self.eps {
            lines.push(format!("eps={e}"));
        }
        lines
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "grownet",
    version,
    about = "Trains neural networks that grow and shrink during training, guided by Monte Carlo tree search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes model.bin, history.csv, DOT snapshots and a
    /// run manifest into the output directory
    Train(Box<TrainArgs>),
    /// Evaluate a saved model on a dataset and print its accuracy
    Eval(EvalArgs),
    /// Convert a time-series CSV into per-dimension recurrence-plot IDX files
    TransformTs(TransformArgs),
    /// Print a saved model's architecture as a Graphviz DOT digraph
    ExportDot(DotArgs),
}

/// Dataset selection flags shared by `train` and `eval`.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// IDX image file for training
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    /// IDX label file for training
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    /// Optional held-out IDX image file (otherwise a stratified split is used)
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    /// Optional held-out IDX label file
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Multivariate time-series CSV (header `dims,length,classes`)
    #[arg(long)]
    pub ts_csv: Option<PathBuf>,
    /// Feed all series dimensions into one conv input as channels instead of
    /// one input layer per dimension
    #[arg(long)]
    pub shared_input: bool,
    /// Fixed recurrence threshold (default: per-series quantile rule)
    #[arg(long)]
    pub eps: Option<f64>,
    /// Quantile of pairwise distances used as the recurrence threshold
    #[arg(long)]
    pub eps_quantile: Option<f64>,
    /// Mean-pool recurrence plots down to this side length (0 = off)
    #[arg(long)]
    pub downsample: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Plain-text key=value config file; command-line flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mcts | greedy | random
    #[arg(long)]
    pub policy: Option<String>,
    /// constant | progress-check | overfit
    #[arg(long)]
    pub orchestrator: Option<String>,
    /// accuracy | loss
    #[arg(long)]
    pub score_mode: Option<String>,
    /// progressive | constant
    #[arg(long)]
    pub lr_mode: Option<String>,
    #[arg(long)]
    pub generations: Option<usize>,
    /// Epochs per generation
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// MCTS wall-clock budget per generation, in seconds
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Run exactly this many MCTS iterations instead of a wall-clock budget
    /// (reproducible mode; 0 disables)
    #[arg(long)]
    pub mcts_iterations: Option<u64>,
    #[arg(long)]
    pub rollout_depth: Option<usize>,
    /// UCB1 exploration constant
    #[arg(long)]
    pub exploration: Option<f64>,
    #[arg(long)]
    pub sim_epochs: Option<usize>,
    /// Simulation-set size per class
    #[arg(long)]
    pub sim_per_class: Option<usize>,
    /// Default width of new dense layers
    #[arg(long)]
    pub def_neu: Option<usize>,
    /// Feature maps of hidden convolution layers
    #[arg(long)]
    pub conv_channels: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub overfit_gap: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for all artifacts
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Saved model file
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    /// Multivariate time-series CSV to convert
    #[arg(long)]
    pub ts_csv: PathBuf,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub eps_quantile: Option<f64>,
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Output directory for the IDX files
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DotArgs {
    /// Saved model file
    #[arg(long)]
    pub model: PathBuf,
    /// Output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the command line and runs it; returns the process exit code.
/// Usage errors exit with status 2 (via clap), data/runtime errors with 1.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(*args),
        Command::Eval(args) => cmd_eval(args),
        Command::TransformTs(args) => cmd_transform(args),
        Command::ExportDot(args) => cmd_export_dot(args),
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dataset path {} does not exist",
            path.display()
        )))
    }
}

/// Write-temp-then-rename so partially written artifacts never appear.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

fn merge_data_args(s: &mut Settings, d: &DataArgs) {
    if d.train_images.is_some() {
        s.train_images = d.train_images.clone();
    }
    if d.train_labels.is_some() {
        s.train_labels = d.train_labels.clone();
    }
    if d.test_images.is_some() {
        s.test_images = d.test_images.clone();
    }
    if d.test_labels.is_some() {
        s.test_labels = d.test_labels.clone();
    }
    if d.ts_csv.is_some() {
        s.ts_csv = d.ts_csv.clone();
    }
    if d.shared_input {
        s.shared_input = true;
    }
    if d.eps.is_some() {
        s.eps = d.eps;
    }
    if let Some(q) = d.eps_quantile {
        s.eps_quantile = q;
    }
    if let Some(ds) = d.downsample {
        s.downsample = ds;
    }
}

fn resolve_train_settings(args: &TrainArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(cfg) = &args.config {
        require_exists(cfg)?;
        s.load_config(cfg)?;
    }
    macro_rules! over {
        ($field:ident, $arg:expr) => {
            if let Some(v) = $arg {
                s.$field = v;
            }
        };
    }
    over!(seed, args.seed);
    if let Some(p) = &args.policy {
        s.policy = parse_policy(p)?;
    }
    if let Some(o) = &args.orchestrator {
        s.orchestrator = parse_orchestrator(o)?;
    }
    if let Some(m) = &args.score_mode {
        s.score_mode = parse_score_mode(m)?;
    }
    if let Some(m) = &args.lr_mode {
        s.lr_mode = parse_lr_mode(m)?;
    }
    over!(generations, args.generations);
    over!(epochs, args.epochs);
    over!(lr_max, args.lr_max);
    over!(batch_size, args.batch_size);
    over!(time_limit_secs, args.time_limit);
    over!(mcts_iterations, args.mcts_iterations);
    over!(rollout_depth, args.rollout_depth);
    over!(exploration, args.exploration);
    over!(sim_epochs, args.sim_epochs);
    over!(sim_per_class, args.sim_per_class);
    over!(def_neu, args.def_neu);
    over!(conv_channels, args.conv_channels);
    over!(test_fraction, args.test_fraction);
    over!(overfit_gap, args.overfit_gap);
    merge_data_args(&mut s, &args.data);
    Ok(s)
}

fn eps_rule(s: &Settings) -> EpsRule {
    match s.eps {
        Some(e) => EpsRule::Fixed(e),
        None => EpsRule::Quantile(s.eps_quantile),
    }
}

struct LoadedRun {
    model: LayerGraph,
    train_parts: Vec<Dataset>,
    test_parts: Vec<Dataset>,
    /// (manifest key, path) of every input file consumed.
    data_files: Vec<(&'static str, PathBuf)>,
}

/// Loads datasets per the settings and builds the matching starting model.
fn load_run_data(s: &Settings, rng: &mut ChaCha8Rng) -> Result<LoadedRun> {
    if let Some(csv) = &s.ts_csv {
        require_exists(csv)?;
        let mts = load_timeseries_csv(csv)?;
        let max_side = if s.downsample > 0 {
            Some(s.downsample)
        } else {
            None
        };
        let mut parts = mts_to_images(&mts, eps_rule(s), max_side)?;
        if s.shared_input {
            parts = vec![merge_channels(&parts)?];
        }
        let side = match parts[0].samples() {
            Samples::Images(img) => img.height(),
            _ => unreachable!("recurrence plots are images"),
        };
        let (train_idx, test_idx) =
            stratified_split_indices(&mts.labels, mts.class_count, s.test_fraction, rng)?;
        let train_parts: Vec<Dataset> = parts.iter().map(|p| p.subset(&train_idx)).collect();
        let test_parts: Vec<Dataset> = parts.iter().map(|p| p.subset(&test_idx)).collect();
        let model = build_mts_model(
            mts.dims,
            side,
            mts.class_count,
            s.shared_input,
            s.def_neu,
            s.conv_channels,
            rng,
        )?;
        Ok(LoadedRun {
            model,
            train_parts,
            test_parts,
            data_files: vec![("ts_csv", csv.clone())],
        })
    } else {
        let images = s.train_images.as_ref().ok_or_else(|| {
            Error::InvalidArgument("either --train-images/--train-labels or --ts-csv is required".into())
        })?;
        let labels = s
            .train_labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--train-labels is required with --train-images".into()))?;
        require_exists(images)?;
        require_exists(labels)?;
        let full = load_idx(images, labels)?;
        let mut data_files = vec![
            ("train_images", images.clone()),
            ("train_labels", labels.clone()),
        ];
        let (train_ds, test_ds) = match (&s.test_images, &s.test_labels) {
            (Some(ti), Some(tl)) => {
                require_exists(ti)?;
                require_exists(tl)?;
                data_files.push(("test_images", ti.clone()));
                data_files.push(("test_labels", tl.clone()));
                (full, load_idx(ti, tl)?)
            }
            _ => {
                let (train_idx, test_idx) = stratified_split_indices(
                    full.labels(),
                    full.class_count(),
                    s.test_fraction,
                    rng,
                )?;
                (full.subset(&train_idx), full.subset(&test_idx))
            }
        };
        let (h, w) = match train_ds.samples() {
            Samples::Images(img) => (img.height(), img.width()),
            _ => unreachable!("IDX loads images"),
        };
        let model = LayerGraph::new_base_model_with_channels(
            InputSpec::Conv {
                channels: 1,
                height: h,
                width: w,
            },
            s.def_neu,
            s.conv_channels,
            train_ds.class_count(),
            rng,
        )?;
        Ok(LoadedRun {
            model,
            train_parts: vec![train_ds],
            test_parts: vec![test_ds],
            data_files,
        })
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let settings = resolve_train_settings(&args)?;
    fs::create_dir_all(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let loaded = load_run_data(&settings, &mut rng)?;

    // Simulation set: one stratified index draw applied to every part.
    let sim_idx = simset_indices(
        loaded.train_parts[0].labels(),
        loaded.train_parts[0].class_count(),
        settings.sim_per_class,
        &mut rng,
    )?;
    let simset: Vec<Dataset> = loaded
        .train_parts
        .iter()
        .map(|p| p.subset(&sim_idx))
        .collect();

    let cfg = settings.train_config();
    let mcts_log_path = args.out.join("mcts_log.csv");
    let mut mcts_log = fs::File::create(&mcts_log_path)?;
    writeln!(mcts_log, "iteration,path,score,elapsed_ms")?;

    let snapshot_dir = args.out.clone();
    let mut snapshot = move |gen: usize, g: &LayerGraph| -> Result<()> {
        let path = snapshot_dir.join(format!("arch_gen{gen:03}.dot"));
        write_atomic(&path, export_dot(g).as_bytes())
    };
    let hooks = TrainHooks {
        mcts_log: Some(&mut mcts_log),
        on_generation: Some(&mut snapshot),
    };

    let (model, history) = train(
        loaded.model,
        &loaded.train_parts,
        &loaded.test_parts,
        &simset,
        &cfg,
        hooks,
    )?;

    write_atomic(&args.out.join("model.bin"), &save_model(&model))?;
    write_atomic(&args.out.join("history.csv"), history.to_csv().as_bytes())?;

    // Manifest: config snapshot, data fingerprints, action log, artifacts.
    let mut m = String::from("growmanifest v1\n[config]\n");
    for line in settings.manifest_lines() {
        m.push_str(&line);
        m.push('\n');
    }
    m.push_str("[data]\n");
    for (key, path) in &loaded.data_files {
        m.push_str(&format!("{key}={}\n", path.display()));
        m.push_str(&format!("{key}_sha256={}\n", sha256_hex(path)?));
    }
    m.push_str("[actions]\n");
    for (gen, rec) in history.generations.iter().enumerate() {
        m.push_str(&format!(
            "gen={gen} action={} valid={}\n",
            rec.action.clone().unwrap_or_default(),
            rec.post_valid
        ));
    }
    m.push_str("[artifacts]\n");
    m.push_str("model=model.bin\nhistory=history.csv\nmcts_log=mcts_log.csv\n");
    m.push_str(&format!("dot_snapshots={}\n", history.generations.len()));
    write_atomic(&args.out.join("manifest.txt"), m.as_bytes())?;

    for (gen, rec) in history.generations.iter().enumerate() {
        println!(
            "generation {gen}: test_acc={} action={}",
            rec.test_acc,
            rec.action.clone().unwrap_or_else(|| "none".into())
        );
    }
    if let Some(last) = history.generations.last() {
        println!("final_test_acc={}", last.test_acc);
    }
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    require_exists(&args.model)?;
    let model = load_model(&fs::read(&args.model)?)?;
    let mut s = Settings::default();
    merge_data_args(&mut s, &args.data);
    let parts: Vec<Dataset> = if let Some(csv) = &s.ts_csv {
        require_exists(csv)?;
        let mts = load_timeseries_csv(csv)?;
        let max_side = if s.downsample > 0 { Some(s.downsample) } else { None };
        let mut parts = mts_to_images(&mts, eps_rule(&s), max_side)?;
        if s.shared_input {
            parts = vec![merge_channels(&parts)?];
        }
        parts
    } else {
        let images = s.train_images.as_ref().ok_or_else(|| {
            Error::InvalidArgument("either --train-images/--train-labels or --ts-csv is required".into())
        })?;
        let labels = s.train_labels.as_ref().ok_or_else(|| {
            Error::InvalidArgument("--train-labels is required with --train-images".into())
        })?;
        require_exists(images)?;
        require_exists(labels)?;
        vec![load_idx(images, labels)?]
    };
    let acc = evaluate(&model, &parts, 64)?;
    println!("accuracy={acc}");
    Ok(())
}

fn cmd_transform(args: TransformArgs) -> Result<()> {
    require_exists(&args.ts_csv)?;
    let s = Settings {
        eps: args.eps,
        eps_quantile: args.eps_quantile.unwrap_or(DEFAULT_EPS_QUANTILE),
        downsample: args.downsample.unwrap_or(0),
        ..Settings::default()
    };
    let mts = load_timeseries_csv(&args.ts_csv)?;
    let max_side = if s.downsample > 0 { Some(s.downsample) } else { None };
    let parts = mts_to_images(&mts, eps_rule(&s), max_side)?;
    fs::create_dir_all(&args.out)?;
    for (dim, part) in parts.iter().enumerate() {
        let images = args.out.join(format!("dim{dim}-images-idx3-ubyte"));
        let labels = args.out.join(format!("dim{dim}-labels-idx1-ubyte"));
        save_idx(part, &images, &labels)?;
        println!(
            "dim {dim}: {} plots -> {}",
            part.len(),
            images.display()
        );
    }
    Ok(())
}

fn cmd_export_dot(args: DotArgs) -> Result<()> {
    require_exists(&args.model)?;
    let model = load_model(&fs::read(&args.model)?)?;
    let dot = export_dot(&model);
    match &args.out {
        Some(path) => write_atomic(path, dot.as_bytes())?,
        None => print!("{dot}"),
    }
    Ok(())
}
