//! Command-line front end: analyze, attack, train, threshold, detect,
//! evaluate. Every command is deterministic given (inputs, config, seed);
//! failures exit nonzero with a machine-readable JSON error on stderr.

use canids::attack::{apply_attack_recorded, preset_dataset, AttackManifest, AttackSpecFile, Preset, PresetConfig};
use canids::error::{Error, Result};
use canids::pipeline::{
    analyze, phase_detect, phase_evaluate, phase_threshold, phase_train, write_verdicts, RunConfig,
};
use canids::signals::{ClassifierParams, SignalMap};
use canids::trace::{read_trace_file, write_trace_file};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "canids", version, about = "CAN-bus intrusion detection toolkit")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for command outputs not fixed by the configuration.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify payload structure of the training traces into a signal map.
    Analyze,
    /// Apply an attack specification or a benchmark preset to a trace.
    Attack(AttackArgs),
    /// Train one autoencoder per eligible ID.
    Train,
    /// Calibrate detection thresholds on the calibration trace.
    Threshold,
    /// Classify a trace's windows against the trained models.
    Detect(DetectArgs),
    /// Detect on a labeled trace and report DR/FPR/F1/MCC/TTP.
    Evaluate(DetectArgs),
}

#[derive(Args)]
struct AttackArgs {
    /// Input trace (untampered).
    #[arg(long)]
    trace: PathBuf,
    /// Attack specification file (JSON). Mutually exclusive with --preset.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Benchmark preset: injection, drop, masquerade, fuzzed, seamless,
    /// full_replay. Mutually exclusive with --spec.
    #[arg(long)]
    preset: Option<Preset>,
    /// Signal map pinned during analyze.
    #[arg(long)]
    map: PathBuf,
    /// Output path for the tampered trace.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the attack manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Seed for this attack run (defaults to the global/config seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DetectArgs {
    /// Trace to classify.
    #[arg(long)]
    trace: PathBuf,
    /// Output path (verdict CSV for detect, report CSV for evaluate).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command requires --config".into()))?;
    let mut cfg = RunConfig::from_toml_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.training.rng_seed = seed;
    }
    Ok(cfg)
}

fn cmd_analyze(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let (map, summary) = analyze(&cfg.datasets.train, &ClassifierParams::default())?;
    if let Some(parent) = cfg.signal_map.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    map.save_file(&cfg.signal_map)?;
    for line in summary {
        println!("{line}");
    }
    println!("signal map written to {}", cfg.signal_map.display());
    Ok(())
}

fn cmd_attack(cli: &Cli, args: &AttackArgs) -> Result<()> {
    let trace = read_trace_file(&args.trace)?;
    if trace.frames.iter().any(|f| f.tampered) {
        return Err(Error::Config("attack input trace already carries tamper labels".into()));
    }
    let map = SignalMap::load_file(&args.map)?;
    let seed = args
        .seed
        .or(cli.seed)
        .or_else(|| cli.config.as_ref().and_then(|p| RunConfig::from_toml_file(p).ok()).map(|c| c.seed))
        .unwrap_or(0);
    let (out, manifest) = match (&args.spec, args.preset) {
        (Some(spec_path), None) => {
            let text = std::fs::read_to_string(spec_path)?;
            let file: AttackSpecFile = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("attack spec parse: {e}")))?;
            if file.version != canids::attack::ATTACK_SPEC_VERSION {
                return Err(Error::VersionMismatch {
                    expected: canids::attack::ATTACK_SPEC_VERSION,
                    found: file.version,
                });
            }
            let mut current = trace;
            let mut records = Vec::new();
            for (index, spec) in file.attacks.iter().enumerate() {
                let (next, record) =
                    apply_attack_recorded(&current, spec, &map, seed, index as u64)?;
                current = next;
                records.push(record);
            }
            (current, AttackManifest { version: 1, seed, attacks: records })
        }
        (None, Some(preset)) => preset_dataset(&trace, preset, &map, seed, &PresetConfig::default())?,
        _ => return Err(Error::Config("exactly one of --spec or --preset is required".into())),
    };
    write_trace_file(&out, &args.out)?;
    if let Some(manifest_path) = &args.manifest {
        std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest).unwrap())?;
    }
    println!(
        "{} attack(s) applied; tampered trace written to {}",
        manifest.attacks.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let report = phase_train(&cfg)?;
    for (id, r) in &report.trained {
        println!(
            "0x{id:X}: trained, {} epoch(s), best validation loss {:.3e} at epoch {}",
            r.epochs_run, r.best_val_loss, r.best_epoch
        );
    }
    for (id, reason) in &report.skipped {
        println!("0x{id:X}: skipped ({reason})");
    }
    if report.trained.is_empty() {
        return Err(Error::Config("no ID was eligible for training".into()));
    }
    Ok(())
}

fn cmd_threshold(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    for (id, threshold, count) in phase_threshold(&cfg)? {
        println!("0x{id:X}: threshold {threshold:.6e} from {count} calibration window(s)");
    }
    Ok(())
}

fn cmd_detect(cli: &Cli, args: &DetectArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let trace = read_trace_file(&args.trace)?;
    let detections = phase_detect(&cfg, &trace)?;
    let out_path =
        args.out.clone().unwrap_or_else(|| cli.out_dir.join("verdicts.csv"));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out_path)?);
    write_verdicts(&detections, &mut file)?;
    let total: usize = detections.iter().map(|d| d.verdicts.len()).sum();
    let flagged: usize =
        detections.iter().map(|d| d.verdicts.iter().filter(|v| v.anomalous).count()).sum();
    println!("{flagged}/{total} windows anomalous; verdicts written to {}", out_path.display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &DetectArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let trace = read_trace_file(&args.trace)?;
    let label = args.trace.display().to_string();
    let report = phase_evaluate(&cfg, &trace, &label)?;
    print!("{}", report.to_text());
    let out_path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("report.csv"));
    std::fs::write(&out_path, report.to_csv())?;
    println!("report written to {}", out_path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Analyze => cmd_analyze(cli),
        Command::Attack(args) => cmd_attack(cli, args),
        Command::Train => cmd_train(cli),
        Command::Threshold => cmd_threshold(cli),
        Command::Detect(args) => cmd_detect(cli, args),
        Command::Evaluate(args) => cmd_evaluate(cli, args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        let payload = serde_json::json!({
            "error": err.to_string(),
            "kind": error_kind(&err),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse { .. } | Error::Ordering { .. } => "parse",
        Error::InsufficientData(_) | Error::Structural(_) => "data",
        Error::RangeBounds { .. } | Error::ValueOverflow { .. } | Error::ShapeMismatch(_) => {
            "bounds"
        }
        Error::NoTarget(_) | Error::Span(_) | Error::NoEligibleId(_) | Error::IneligibleId(_) => {
            "attack"
        }
        Error::NumericFailure { .. } | Error::TrainingFailure(_) => "numeric",
        Error::Config(_) | Error::VersionMismatch { .. } => "config",
        Error::DigestMismatch(_) | Error::Misalignment(_) | Error::KMismatch { .. } => "integrity",
        Error::Io(_) => "io",
    }
}
