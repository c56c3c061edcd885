//! CLI entry point: gen, detect, segment, eval, pipeline, report, bench.
//!
//! Exit codes: 0 success, 1 systemic failure, 2 config error. The config
//! file path may come from `--config` or the ADCDS_CONFIG environment
//! variable; flags override file values.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adcds::config::{self, RunConfig, CONFIG_ENV};
use adcds::pipeline;
use adcds::types::ProcessStep;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StepArg {
    Adi,
    Aei,
}

impl From<StepArg> for ProcessStep {
    fn from(s: StepArg) -> ProcessStep {
        match s {
            StepArg::Adi => ProcessStep::Adi,
            StepArg::Aei => ProcessStep::Aei,
        }
    }
}

#[derive(Parser)]
#[command(name = "adcds", version, about = "Line-space SEM defect analysis pipeline")]
struct Cli {
    /// Config file (TOML); falls back to $ADCDS_CONFIG, then to presets.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Process step preset when no config file is given; overrides the file.
    #[arg(long, global = true, value_enum)]
    step: Option<StepArg>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all outputs; overrides the config file paths.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Run detection over the dataset, writing gated predictions JSON.
    Detect,
    /// Segment predicted ROIs, adding masks to the predictions JSON.
    Segment,
    /// Evaluate predictions against ground truth.
    Eval,
    /// Full chain: generate (if needed), detect, segment, evaluate, report.
    Pipeline,
    /// Compare stored report JSON files side by side.
    Report {
        /// Paths to report.json files.
        reports: Vec<PathBuf>,
    },
    /// Timing-only run over the dataset.
    Bench,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, config::ConfigError> {
    let file = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match file {
        Some(path) => config::load_run_config(&path)?,
        None => {
            let step = cli.step.map(ProcessStep::from).ok_or_else(|| {
                config::ConfigError::Invalid(
                    "no config file given; --step is required to use a preset".into(),
                )
            })?;
            let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            RunConfig::preset(step, cli.seed.unwrap_or(0), &root)
        }
    };
    if let Some(step) = cli.step {
        let step = ProcessStep::from(step);
        if step != cfg.step {
            cfg.step = step;
            // Presets must follow the step override.
            cfg.generator = None;
            cfg.detector = None;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(generator) = &mut cfg.generator {
            generator.seed = seed;
            generator.pattern.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.paths = config::Paths::under(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), (i32, String)> {
    let config_err = |e: config::ConfigError| (2, e.to_string());
    let pipe_err = |e: pipeline::PipelineError| (e.exit_code(), e.to_string());
    match &cli.command {
        Command::Gen => {
            let cfg = effective_config(cli).map_err(config_err)?;
            let manifest = pipeline::cmd_gen(&cfg).map_err(pipe_err)?;
            log::info!(
                "generated {} images, {} instances into {}",
                manifest.images().len(),
                manifest.total_instances(),
                cfg.paths.dataset_dir.display()
            );
        }
        Command::Detect => {
            let cfg = effective_config(cli).map_err(config_err)?;
            let preds = pipeline::cmd_detect(&cfg).map_err(pipe_err)?;
            log::info!(
                "wrote {} detections to {}",
                preds.total_instances(),
                cfg.paths.predictions_file.display()
            );
        }
        Command::Segment => {
            let cfg = effective_config(cli).map_err(config_err)?;
            let preds = pipeline::cmd_segment(&cfg).map_err(pipe_err)?;
            log::info!("segmented {} instances", preds.total_instances());
        }
        Command::Eval => {
            let cfg = effective_config(cli).map_err(config_err)?;
            let report = pipeline::cmd_eval(&cfg).map_err(pipe_err)?;
            println!("{}", adcds::report::render_markdown(&report));
        }
        Command::Pipeline => {
            let cfg = effective_config(cli).map_err(config_err)?;
            let report = pipeline::cmd_pipeline(&cfg).map_err(pipe_err)?;
            println!("{}", adcds::report::render_markdown(&report));
        }
        Command::Report { reports } => {
            let md = pipeline::cmd_report(reports).map_err(pipe_err)?;
            println!("{md}");
        }
        Command::Bench => {
            let cfg = effective_config(cli).map_err(config_err)?;
            let section = pipeline::cmd_bench(&cfg).map_err(pipe_err)?;
            if let Some(s) = section.detect {
                println!("detect: mean {:.2} ms, min {:.2}, max {:.2}", s.mean_ms, s.min_ms, s.max_ms);
            }
            if let Some(s) = section.segment {
                println!("segment: mean {:.2} ms, min {:.2}, max {:.2}", s.mean_ms, s.min_ms, s.max_ms);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
