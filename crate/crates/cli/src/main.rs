//! `glyphnet` command line: analyze specs, train and evaluate networks.
//!
//! Exit codes: 0 success, 1 invalid input (arguments, specs, configs, data,
//! golden mismatches), 2 numeric failure during a run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use glyphnet::arch::{build_named, load_checkpoint, ArchitectureSpec};
use glyphnet::data::DataSource;
use glyphnet::paramcount::{compare_golden, parse_golden, summarize};
use glyphnet::train::{self, prepare_data, run_experiment, RunManifest, TrainConfig};
use glyphnet::{Error, Result};

#[derive(Parser)]
#[command(name = "glyphnet", version, about = "Convolutional networks for 32x32 character images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer shape, parameter and connection report for a network.
    Analyze(AnalyzeArgs),
    /// Train a network and write metrics, a run manifest and a checkpoint.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Size {
    Full,
    Toy,
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in architecture: vgg16, allconv, nin, resnet, fractalnet, densenet.
    #[arg(long)]
    arch: Option<String>,
    /// Spec file (overrides --arch).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Width preset for --arch.
    #[arg(long, value_enum)]
    size: Option<Size>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Class count for --arch.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Golden CSV to compare against; any non-waived mismatch fails.
    #[arg(long)]
    golden: Option<PathBuf>,
    /// Directory to write `<name>.csv` into.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the resolved spec text to this file.
    #[arg(long)]
    write_spec: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// TOML file with any TrainConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image directory, `.chds` cache, or `synth:k=K,n=N,seed=S`.
    #[arg(long)]
    data: Option<String>,
    /// Class count (required for image directories).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `train=N,test=M,val=F` (any subset).
    #[arg(long)]
    split: Option<String>,
    /// Root directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory, or a run directory containing `checkpoint/`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset; defaults to the run's own data when evaluating a run directory.
    #[arg(long)]
    data: Option<String>,
    /// Class count for image directories (defaults to the model's).
    #[arg(long)]
    classes: Option<usize>,
    /// Partition of the run's split to evaluate (needs a run directory).
    #[arg(long, value_enum, default_value_t = Part::All)]
    part: Part,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn load_spec(model: &ModelArgs, classes: usize) -> Result<ArchitectureSpec> {
    match (&model.spec, &model.arch) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            ArchitectureSpec::parse(&text)
        }
        (None, Some(arch)) => build_named(arch, classes, model.size == Some(Size::Toy)),
        (None, None) => Err(Error::InvalidConfig("pass --spec or --arch".into())),
    }
}

fn analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let spec = load_spec(&args.model, args.classes)?;
    let summary = summarize(&spec)?;
    print!("{}", summary.to_table());
    if let Some(path) = &args.write_spec {
        fs::write(path, spec.to_text())?;
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{}.csv", summary.name)), summary.to_csv())?;
    }
    let Some(golden) = &args.golden else { return Ok(ExitCode::SUCCESS) };
    let text = fs::read_to_string(golden).map_err(|e| Error::InvalidConfig(format!("{}: {e}", golden.display())))?;
    let cmp = compare_golden(&summary, &parse_golden(&text)?);
    for (d, why) in &cmp.waived {
        println!("waived {}.{}: expected {}, got {} ({why})", d.id, d.field, d.expected, d.actual);
    }
    for d in &cmp.mismatches {
        println!("MISMATCH {}.{}: expected {}, got {}", d.id, d.field, d.expected, d.actual);
    }
    println!(
        "golden: {} rows checked, {} mismatches, {} waived",
        cmp.checked,
        cmp.mismatches.len(),
        cmp.waived.len()
    );
    Ok(if cmp.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn apply_split(config: &mut TrainConfig, text: &str) -> Result<()> {
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let bad = || Error::InvalidConfig(format!("bad --split entry `{part}` (use train=N,test=M,val=F)"));
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        match k {
            "train" => config.train_count = Some(v.parse().map_err(|_| bad())?),
            "test" => config.test_count = Some(v.parse().map_err(|_| bad())?),
            "val" => config.validation_fraction = v.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        }
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(a) = &args.model.arch {
        config.architecture = a.clone();
    }
    if let Some(s) = &args.model.spec {
        config.spec = Some(s.clone());
    }
    if let Some(size) = args.model.size {
        config.toy = size == Size::Toy;
    }
    if let Some(d) = &args.data {
        config.data = d.clone();
    }
    config.classes = args.classes.or(config.classes);
    config.epochs = args.epochs.unwrap_or(config.epochs);
    config.learning_rate = args.lr.unwrap_or(config.learning_rate);
    config.momentum = args.momentum.unwrap_or(config.momentum);
    config.batch_size = args.batch.unwrap_or(config.batch_size);
    config.seed = args.seed.unwrap_or(config.seed);
    if let Some(s) = &args.split {
        apply_split(&mut config, s)?;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let config = train_config(&args)?;
    let quiet = args.quiet;
    let mut progress = |row: &train::EpochRow| {
        if !quiet {
            let val = row.val_acc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            eprintln!(
                "epoch {:>4}  loss {:.6}  val_acc {val}  {:.2}s",
                row.epoch, row.train_loss, row.epoch_seconds
            );
        }
    };
    let report = run_experiment(&config, Some(&args.out), &mut progress)?;
    let dir = report.out_dir.expect("output directory requested");
    println!("run: {}", dir.display());
    println!("params: {}", report.metrics.total_params);
    println!("test_acc: {:.4}", report.metrics.test_acc);
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs) -> Result<ExitCode> {
    let run_dir = args.checkpoint.join(train::CHECKPOINT_DIR);
    let (ckpt, run) = if run_dir.is_dir() {
        (run_dir, Some(args.checkpoint.as_path()))
    } else {
        (args.checkpoint.clone(), None)
    };
    let model = load_checkpoint(&ckpt)?;
    let data = match (args.part, run) {
        (Part::All, _) => {
            let source = match (&args.data, run) {
                (Some(d), _) => d.clone(),
                (None, Some(dir)) => read_manifest(dir)?.config.data,
                (None, None) => return Err(Error::InvalidConfig("pass --data".into())),
            };
            let source: DataSource = source.parse()?;
            let classes = args
                .classes
                .or_else(|| matches!(source, DataSource::Dir(_)).then(|| model.classes()));
            source.load(classes, model.spec().input_shape.c)?
        }
        (part, Some(dir)) => {
            let manifest = read_manifest(dir)?;
            let mut config = manifest.config.clone();
            if let Some(d) = &args.data {
                config.data = d.clone();
            }
            let (tr, va, te) = prepare_data(&config)?;
            if args.data.is_none() {
                manifest.verify(&model.spec().to_text(), &tr, &va, &te)?;
            }
            match part {
                Part::Train => tr,
                Part::Validation => va,
                _ => te,
            }
        }
        (_, None) => return Err(Error::InvalidConfig("--part needs a run directory".into())),
    };
    let acc = train::evaluate(&model, &data)?;
    println!("{acc:.4}");
    Ok(ExitCode::SUCCESS)
}

fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(train::MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    RunManifest::from_json(&text)
}
