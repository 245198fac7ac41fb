use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prunesense_cli::config::ExperimentConfig;
use prunesense_cli::pipeline::{self, files, load_dataset, run_staged, Stage};
use prunesense_cli::report;
use prunesense_cli::synth::write_mnist_dir;
use prunesense_cli::exit_code;
use prunesense_core::error::Error;
use prunesense_core::planner::GroupAssignment;
use prunesense_core::sensitivity::SensitivityReport;
use prunesense_core::Result;

#[derive(Parser)]
#[command(
    name = "prunesense",
    about = "Sensitiveness-driven structured pruning for small convolutional networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic digit dataset in IDX format.
    GenData {
        /// Directory to create the four IDX files in.
        #[arg(long)]
        out: PathBuf,
        /// Number of training images.
        #[arg(long, default_value_t = 2000)]
        train: usize,
        /// Number of test images.
        #[arg(long, default_value_t = 1000)]
        test: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 5)]
        seed: u64,
    },
    /// Train the base model and stop.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the one in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the one in the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure per-layer sensitiveness and stop after writing the report.
    Sensitivity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Reuse a trained base model instead of training one.
        #[arg(long)]
        base_checkpoint: Option<PathBuf>,
        /// Worker threads for the measurement grid (0 = auto).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group layers by aggregated sensitiveness from a stored report.
    Group {
        /// Path to a sensitivity report artifact.
        #[arg(long)]
        report: PathBuf,
        /// Gap threshold as a fraction of the score range.
        #[arg(long)]
        threshold_frac: Option<f64>,
        /// File to write the grouping to (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full staged flow: base model, sensitiveness, grouping, pruning.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        base_checkpoint: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary artifacts of a finished run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print the model's size and check that the configured dataset loads.
    Inspect {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Resolved run parameters: config + master seed + output directory.
struct RunSpec {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    workers: usize,
}

fn resolve(
    config: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<RunSpec> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    let seed = seed.or(cfg.master_seed).ok_or_else(|| {
        Error::Config("no master seed: pass --seed or set master_seed in the config".to_string())
    })?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            Error::Config("no output directory: pass --out or set output_dir".to_string())
        })?;
    let workers = workers.unwrap_or(cfg.workers);
    Ok(RunSpec { cfg, seed, out, workers })
}

fn staged(spec: &RunSpec, base_checkpoint: Option<PathBuf>, upto: Stage) -> Result<()> {
    let arts = run_staged(&spec.cfg, spec.seed, &spec.out, spec.workers, base_checkpoint, upto)?;
    println!(
        "run complete: reached stage {:?}, artifacts in {}",
        arts.stage_reached,
        arts.out.display()
    );
    Ok(())
}

fn cmd_group(report_path: &PathBuf, frac: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let rep: SensitivityReport = report::read_json(report_path, "sensitivity_report")?;
    let groups = prunesense_core::planner::group_layers(&rep, frac.unwrap_or(0.2))?;
    match out {
        Some(path) => {
            report::write_json(&path, "group_assignment", &groups)?;
            println!("wrote {}", path.display());
        }
        None => print_groups(&groups),
    }
    Ok(())
}

fn print_groups(groups: &GroupAssignment) {
    for (k, layers) in groups.groups.iter().enumerate() {
        let names: Vec<String> = layers.iter().map(|l| format!("conv{l}")).collect();
        println!(
            "group {k}: layers [{}], mean sensitiveness {:.6e}",
            names.join(", "),
            groups.mean_scores[k]
        );
    }
}

fn cmd_report(dir: &PathBuf) -> Result<()> {
    let meta = report::read_meta(&dir.join(files::META))?;
    println!("stage reached: {}", meta.stage_reached);
    if let Some(err) = &meta.error {
        println!("error: {err}");
    }
    let base = dir.join(files::BASE_METRICS);
    if base.exists() {
        let m: pipeline::BaseMetrics = report::read_json(&base, "base_metrics")?;
        println!(
            "base model {}: {} params, {} MACs, test accuracy {:.4}",
            m.model, m.params, m.macs, m.test_accuracy
        );
    }
    let sens = dir.join(files::SENSITIVITY);
    if sens.exists() {
        let rep: SensitivityReport = report::read_json(&sens, "sensitivity_report")?;
        for s in &rep.layers {
            println!(
                "layer conv{}: sensitiveness {:.6e} (kept {} of {} rounds)",
                s.layer,
                s.score,
                s.kept.len(),
                s.per_round.len()
            );
        }
    }
    let groups_path = dir.join(files::GROUPS);
    if groups_path.exists() {
        let groups: GroupAssignment = report::read_json(&groups_path, "group_assignment")?;
        print_groups(&groups);
    }
    let outcome_path = dir.join(files::OUTCOME);
    if outcome_path.exists() {
        let o: pipeline::OutcomeSummary = report::read_json(&outcome_path, "prune_outcome")?;
        println!(
            "pruned: overall ratio {:.4} (target {:.4}{}), accuracy {:.4} (baseline {:.4}), {} filters removed",
            o.overall_ratio,
            o.target_overall,
            if o.target_reached { ", reached" } else { ", NOT reached" },
            o.pruned_accuracy,
            o.baseline_accuracy,
            o.filters_removed
        );
        println!(
            "pruned size: {} params, {} MACs",
            o.pruned_params, o.pruned_macs
        );
    }
    Ok(())
}

fn cmd_inspect(config: &PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    let spec = prunesense_core::zoo::build_model(&cfg.model)?;
    let params = prunesense_core::count::count_params(&spec)?;
    let macs = prunesense_core::count::count_macs(&spec, (spec.input.1, spec.input.2))?;
    println!(
        "model {}: input {}x{}x{}, {params} parameters, {macs} multiply-accumulates",
        spec.name, spec.input.0, spec.input.1, spec.input.2
    );
    let (train, test, stats) = load_dataset(&cfg)?;
    let (c, h, w) = train.image_shape();
    println!("train: {} samples of {c}x{h}x{w}", train.len());
    println!("test: {} samples", test.len());
    println!("channel means: {:?}", stats.mean);
    println!("channel stds: {:?}", stats.std);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, train, test, seed } => {
            write_mnist_dir(&out, train, test, seed)?;
            println!(
                "wrote {train} training and {test} test images to {}",
                out.display()
            );
            Ok(())
        }
        Command::Train { config, seed, out } => {
            let spec = resolve(&config, seed, out, None)?;
            staged(&spec, None, Stage::Base)
        }
        Command::Sensitivity { config, seed, base_checkpoint, workers, out } => {
            let spec = resolve(&config, seed, out, workers)?;
            staged(&spec, base_checkpoint, Stage::Sensitivity)
        }
        Command::Pipeline { config, seed, base_checkpoint, workers, out } => {
            let spec = resolve(&config, seed, out, workers)?;
            staged(&spec, base_checkpoint, Stage::Prune)
        }
        Command::Group { report, threshold_frac, out } => cmd_group(&report, threshold_frac, out),
        Command::Report { dir } => cmd_report(&dir),
        Command::Inspect { config } => cmd_inspect(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
