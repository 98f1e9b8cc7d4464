use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pvm_core::checkpoint;
use pvm_core::dataset::{load_sequences, save_sequence, LabeledSequence};
use pvm_core::metrics::{self, Evaluation, Summary};
use pvm_core::tracker::{self, Baseline, TrackResult};
use pvm_core::training::{format_log_row, run_training, TrainingOptions};
use pvm_core::{BoundingBox, PvmConfig, PvmError, Regime, System, Topology};

type CliResult<T = ()> = Result<T, String>;

#[derive(Parser)]
#[command(name = "pvm", version, about = "Train and evaluate Predictive Vision Model trackers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, from scratch or from a checkpoint.
    Train(TrainArgs),
    /// Track labeled sequences and score the results.
    Eval(EvalArgs),
    /// Summarize a config or checkpoint and check its integrity.
    Inspect(InspectArgs),
    /// Write a config's synthetic sequences to disk as PNG frames and labels.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum RegimeArg {
    /// Prediction and readout together.
    Joint,
    /// Readout only, predictive weights frozen.
    Prime,
    /// Prediction only, no supervision.
    Unsupervised,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file, or `reference` / `desk` for the built-in ones.
    #[arg(long, required_unless_present = "from")]
    config: Option<String>,
    /// Continue from this checkpoint (required for `--regime prime`).
    #[arg(long)]
    from: Option<PathBuf>,
    /// Sequence directory; defaults to the config's synthetic training set.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: u64,
    #[arg(long, value_enum, default_value_t = RegimeArg::Joint)]
    regime: RegimeArg,
    /// Readout learning rate for priming (presets 0.001, 0.0005, 0.0002).
    #[arg(long, default_value_t = 0.001)]
    readout_lr: f64,
    /// Start the readout heads from fresh random weights before priming.
    #[arg(long)]
    reset_readout: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the config seed (new models only).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Config giving the frame size when no checkpoint is evaluated.
    #[arg(long)]
    config: Option<String>,
    /// Sequence directory; defaults to the config's synthetic test set.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Presentations per frame; defaults to the config value.
    #[arg(long)]
    settle: Option<usize>,
    /// Baselines to score alongside the model.
    #[arg(long, value_enum, value_delimiter = ',')]
    baselines: Vec<BaselineArg>,
    /// Perturbation for the perturbed-ground-truth baseline.
    #[arg(long, default_value_t = 0.4)]
    perturb: f64,
    /// Write per-layer and combined heatmap images for every frame.
    #[arg(long)]
    dump_heatmaps: bool,
    /// Score an existing result log: NAME=PATH, where PATH is a log file
    /// (single sequence) or a directory of `<sequence>.csv` logs.
    #[arg(long = "results", value_name = "NAME=PATH")]
    results: Vec<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum BaselineArg {
    Null,
    Center,
    PerturbedGt,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint, config file, or `reference` / `desk`.
    path: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Split {
    Train,
    Test,
}

fn err(e: PvmError) -> String {
    e.to_string()
}

fn load_config(name: &str) -> CliResult<PvmConfig> {
    match name {
        "reference" => Ok(PvmConfig::reference()),
        "desk" => Ok(PvmConfig::desk()),
        path => PvmConfig::load(path).map_err(err),
    }
}

fn load_data(path: Option<&Path>, config: &PvmConfig, split: Split) -> CliResult<Vec<LabeledSequence>> {
    let seqs = match (path, &config.synthetic) {
        (Some(p), _) => load_sequences(p, config.frame).map_err(err)?,
        (None, Some(s)) => match split {
            Split::Train => s.train(config.frame),
            Split::Test => s.test(config.frame),
        }
        .map_err(err)?,
        (None, None) => return Err("no --data given and the config declares no synthetic data".into()),
    };
    if seqs.iter().all(|s| s.is_empty()) {
        return Err("dataset has no frames".into());
    }
    Ok(seqs)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let regime = match a.regime {
        RegimeArg::Joint => Regime::Joint,
        RegimeArg::Unsupervised => Regime::Unsupervised,
        RegimeArg::Prime => {
            if a.from.is_none() {
                return Err("--regime prime needs --from <checkpoint>".into());
            }
            if !(a.readout_lr.is_finite() && a.readout_lr > 0.0) {
                return Err("--readout-lr must be positive".into());
            }
            Regime::Prime {
                readout_lr: a.readout_lr,
            }
        }
    };
    let mut system = match &a.from {
        Some(path) => {
            if a.seed.is_some() {
                return Err("--seed only applies to new models".into());
            }
            checkpoint::load(path, a.workers).map_err(err)?
        }
        None => {
            let mut config = load_config(a.config.as_deref().unwrap())?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            System::new(config, a.workers).map_err(err)?
        }
    };
    // a checkpoint's own config supplies the synthetic set when --config is absent
    let data_config = match &a.config {
        Some(c) if a.from.is_some() => load_config(c)?,
        _ => system.config().clone(),
    };
    let data = load_data(a.data.as_deref(), &data_config, Split::Train)?;
    if a.reset_readout {
        system.reset_readouts(system.config().seed);
    }
    let opts = TrainingOptions {
        steps: a.steps,
        regime,
        checkpoint_every: a.checkpoint_every,
        log_every: a.log_every,
        out_dir: Some(a.out.clone()),
    };
    let quiet = a.quiet;
    let report = run_training(&mut system, &data, &opts, |row| {
        if !quiet {
            println!("{}", format_log_row(row));
        }
    })
    .map_err(err)?;
    let last = report.checkpoints.last().expect("final checkpoint is always written");
    println!("step {}", system.step_counter());
    println!("checkpoint {}", last.display());
    println!("sha256 {}", checkpoint::state_hash(&system));
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_injected(spec: &str, seqs: &[LabeledSequence]) -> CliResult<(String, Vec<Vec<TrackResult>>)> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| format!("--results expects NAME=PATH, got {spec:?}"))?;
    let path = Path::new(path);
    let logs = if path.is_dir() {
        seqs.iter()
            .map(|s| metrics::read_result_log(path.join(format!("{}.csv", s.name))).map_err(err))
            .collect::<CliResult<Vec<_>>>()?
    } else if seqs.len() == 1 {
        vec![metrics::read_result_log(path).map_err(err)?]
    } else {
        return Err(format!("{}: a single log file needs a single sequence", path.display()));
    };
    for (log, s) in logs.iter().zip(seqs) {
        if log.len() != s.len() {
            return Err(format!(
                "result log for {} has {} frames, sequence has {}",
                s.name,
                log.len(),
                s.len()
            ));
        }
    }
    Ok((name.to_string(), logs))
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let system = match &a.from {
        Some(p) => Some(checkpoint::load(p, a.workers).map_err(err)?),
        None => None,
    };
    let config = match (&a.config, &system) {
        (Some(c), _) => load_config(c)?,
        (None, Some(s)) => s.config().clone(),
        (None, None) => return Err("eval needs --from <checkpoint> (or --config with --results)".into()),
    };
    if system.is_none() && a.results.is_empty() && a.baselines.is_empty() {
        return Err("nothing to evaluate: give --from, --results or --baselines".into());
    }
    let seqs = load_data(a.data.as_deref(), &config, Split::Test)?;
    let settle = a.settle.unwrap_or(config.settle_steps);
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;

    let mut trackers: Vec<(String, Vec<Vec<TrackResult>>)> = Vec::new();
    if let Some(system) = &system {
        let logs = seqs
            .iter()
            .map(|s| {
                let dump = a.dump_heatmaps.then(|| a.out.join("heatmaps").join(&s.name));
                tracker::track_sequence(system, s, settle, dump.as_deref()).map_err(err)
            })
            .collect::<CliResult<Vec<_>>>()?;
        trackers.push(("pvm".into(), logs));
    }
    for b in &a.baselines {
        let (name, kind): (&str, Box<dyn Fn(&LabeledSequence, usize) -> Baseline>) = match b {
            BaselineArg::Null => ("null", Box::new(|s, _| Baseline::Null(s.labels[0]))),
            BaselineArg::Center => ("center", Box::new(|_, _| Baseline::Center)),
            BaselineArg::PerturbedGt => (
                "perturbed_gt",
                Box::new(|_, i| Baseline::PerturbedTruth {
                    perturb: a.perturb,
                    seed: config.seed.wrapping_add(i as u64),
                }),
            ),
        };
        let logs = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let boxes = tracker::baseline_track(kind(s, i), config.frame, &s.labels).map_err(err)?;
                Ok(boxes
                    .into_iter()
                    .enumerate()
                    .map(|(frame, bbox)| TrackResult {
                        frame,
                        bbox,
                        peak: f64::NAN,
                        median: f64::NAN,
                    })
                    .collect())
            })
            .collect::<CliResult<Vec<_>>>()?;
        trackers.push((name.into(), logs));
    }
    for spec in &a.results {
        trackers.push(load_injected(spec, &seqs)?);
    }

    let mut evals: Vec<(String, Evaluation)> = Vec::new();
    let mut summaries: Vec<Summary> = Vec::new();
    for (name, logs) in &trackers {
        let dir = a.out.join("results").join(name);
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let mut records = Vec::new();
        for (log, s) in logs.iter().zip(&seqs) {
            metrics::write_result_log(dir.join(format!("{}.csv", s.name)), log).map_err(err)?;
            let predicted: Vec<BoundingBox> = log.iter().map(|r| r.bbox).collect();
            records.extend(metrics::records(&predicted, &s.labels).map_err(err)?);
        }
        let e = metrics::evaluate(&records).map_err(err)?;
        let summary = e.summary(name);
        println!(
            "{name}: success_auc={:.4} precision@20={:.4} accuracy@1={:.4} tp={} tn={} fp={} fn={}",
            summary.success_auc,
            summary.precision_20,
            summary.accuracy_1,
            summary.confusion.tp,
            summary.confusion.tn,
            summary.confusion.fp,
            summary.confusion.fn_
        );
        summaries.push(summary);
        evals.push((name.clone(), e));
    }
    write_file(&a.out.join("curves.csv"), &metrics::curves_csv(&evals))?;
    let json = serde_json::to_string_pretty(&summaries).map_err(|e| e.to_string())?;
    write_file(&a.out.join("summary.json"), &json)?;
    Ok(())
}

fn print_topology(config: &PvmConfig) -> CliResult {
    let topo = Topology::build(config).map_err(err)?;
    println!("frame {} tile {} hidden {}", config.frame, config.tile, config.hidden_size);
    println!("{} units, {} layers", topo.unit_count(), topo.layers.len());
    for (k, l) in topo.layers.iter().enumerate() {
        let units = &topo.units[l.units()];
        let ctx_min = units.iter().map(|u| u.context_size).min().unwrap();
        let ctx_max = units.iter().map(|u| u.context_size).max().unwrap();
        println!(
            "  layer {k}: grid {} signal {} context {ctx_min}..{ctx_max} readout {} canvas {}",
            l.grid, units[0].signal_size, l.readout, l.canvas
        );
    }
    println!("parameters {}", topo.parameter_count());
    Ok(())
}

fn print_schedule(config: &PvmConfig, step: u64) {
    let s = config.schedule.at(step);
    let layers: Vec<String> = s
        .layers
        .iter()
        .map(|l| if l.enabled { format!("{}", l.lr) } else { "off".into() })
        .collect();
    println!(
        "schedule at step {step}: lr [{}] lateral {} feedback {}",
        layers.join(", "),
        if s.lateral_on { "on" } else { "off" },
        if s.feedback_on { "on" } else { "off" }
    );
}

fn cmd_inspect(a: InspectArgs) -> CliResult {
    let path = Path::new(&a.path);
    let is_checkpoint = path.is_file()
        && fs::read(path)
            .map(|b| b.starts_with(checkpoint::MAGIC))
            .unwrap_or(false);
    if !is_checkpoint {
        let config = load_config(&a.path)?;
        config.validate().map_err(err)?;
        print_topology(&config)?;
        print_schedule(&config, 0);
        return Ok(());
    }
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let sizes = checkpoint::section_sizes(&bytes).map_err(|e| format!("integrity check failed: {e}"))?;
    for (tag, len) in sizes {
        println!("section {tag}: {len} bytes");
    }
    let system = checkpoint::from_bytes(&bytes, 1).map_err(|e| format!("integrity check failed: {e}"))?;
    println!("integrity ok");
    println!("step {}", system.step_counter());
    print_topology(system.config())?;
    print_schedule(system.config(), system.step_counter());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let seqs = load_data(None, &config, a.split)?;
    for s in &seqs {
        let dir = a.out.join(&s.name);
        save_sequence(s, &dir).map_err(err)?;
        println!("{} ({} frames)", dir.display(), s.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
