use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sflplan_core::baselines::StrategyName;
use sflplan_core::cost_models::FitKind;
use sflplan_core::harness::{self, ExperimentConfig, HarnessError, RunReport, Status, SweepSpec};
use sflplan_core::simulator::ScheduleMode;

#[derive(Parser)]
#[command(name = "sflplan", version, about = "Cut-layer and resource planner for split federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one configuration with every listed strategy.
    Plan(RunArgs),
    /// Sweep one parameter and emit plot data.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `param:from:to:step`, param one of p_risk, f_s, ul_bw, dl_bw.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Fit a cost regression to `x,y` samples.
    Fit {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_enum, default_value = "qpr")]
        kind: Kind,
    },
    /// Plan, then replay several training rounds.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        rounds: Option<u32>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Parallel,
    Sequential,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Qpr,
    Rr,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(names) = &self.strategies {
            config.strategies = names
                .iter()
                .map(|n| n.parse::<StrategyName>())
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Config { path: "--strategies".into(), msg: e.to_string() })?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    fn out_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }

    fn mode(&self) -> Option<ScheduleMode> {
        self.mode.map(|m| match m {
            Mode::Parallel => ScheduleMode::Parallel,
            Mode::Sequential => ScheduleMode::Sequential,
        })
    }
}

fn summarize(report: &RunReport) {
    for o in &report.outcomes {
        let value = o.sweep_value.map_or(String::new(), |v| format!(" @ {v}"));
        match &o.status {
            Status::Ok(e) => println!(
                "{:<7}{value}  objective {:.6e} s  round {:.6e} s  ({})",
                o.strategy.as_str(),
                e.objective,
                e.schedule.round_latency,
                o.schedule
            ),
            Status::Infeasible(msg) => println!("{:<7}{value}  infeasible: {msg}", o.strategy.as_str()),
        }
    }
    for w in report.warnings() {
        eprintln!("warning: {w}");
    }
}

fn written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Plan(args) => {
            let config = args.load()?;
            let report = harness::run_plan(&config, args.mode())?;
            summarize(&report);
            written(&harness::write_artifacts(&report, &args.out_dir(&config))?);
        }
        Command::Sweep { run, sweep } => {
            let mut config = run.load()?;
            if let Some(text) = sweep {
                config.sweep = Some(SweepSpec::parse(&text)?);
            }
            let report = harness::run_sweep(&config)?;
            summarize(&report);
            let out = run.out_dir(&config);
            let files = harness::write_artifacts(&report, &out)?;
            written(&files);
            written(&harness::emit_plot_data(&out.join("latency.csv"), &out.join("plot"))?);
        }
        Command::Fit { samples, kind } => {
            let kind = match kind {
                Kind::Qpr => FitKind::Qpr,
                Kind::Rr => FitKind::Rr,
            };
            let result = harness::fit_csv(Path::new(&samples), kind)?;
            let coeffs: Vec<String> = result.model.coeffs().iter().map(|c| c.to_string()).collect();
            println!("{kind} coefficients: {}", coeffs.join(" "));
            println!("rmse: {}", result.rmse);
        }
        Command::Simulate { run, rounds } => {
            let config = run.load()?;
            let rounds = rounds.unwrap_or(config.rounds);
            if rounds < 1 {
                return Err(HarnessError::Config { path: "--rounds".into(), msg: "must be at least 1".into() });
            }
            let report = harness::run_plan(&config, run.mode())?;
            summarize(&report);
            let out = run.out_dir(&config);
            let mut files = harness::write_artifacts(&report, &out)?;
            files.push(harness::write_timeline(&report, rounds, &out)?);
            written(&files);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
