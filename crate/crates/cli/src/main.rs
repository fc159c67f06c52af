//! Operator CLI: run seeded fuzzing campaigns, recompute reports from
//! persisted records, and export plot-ready CSV series.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advfuzz_core::campaign::{
    export_series, report, run_campaign, CampaignError, CampaignReport, CampaignSettings,
    ExportKind, REPORT_FILE,
};
use advfuzz_core::ego::registered_controllers;
use advfuzz_core::road::RoadPreset;

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "advfuzz",
    about = "Adversarial traffic-scenario fuzzing: deterministic 2D simulation, \
             multi-objective search, and collision liability attribution",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign and persist records plus a report.
    Run(RunArgs),
    /// Recompute the campaign report from a records directory.
    Report {
        /// Campaign output directory.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Export CSV series (speed_traces, fitness, histogram) from records.
    Export {
        #[arg(long)]
        dir: PathBuf,
        /// One of: speed_traces, fitness, histogram.
        #[arg(long)]
        kind: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Road preset: urban2, highway4, or custom:<file.json>.
    #[arg(long, default_value = "urban2")]
    road: String,
    /// Scenario budget (number of scenarios to execute).
    #[arg(long)]
    budget: usize,
    /// Optional wall-clock cap in hours.
    #[arg(long)]
    hours: Option<f64>,
    /// Master seed; the whole campaign is reproducible from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Perception-zone length in meters (paper variants use 20/30/40).
    #[arg(long, default_value_t = 20.0)]
    ell: f64,
    /// Population size.
    #[arg(long, default_value_t = 20)]
    tau: usize,
    /// Output directory for records, report, and exports.
    #[arg(long, default_value = "advfuzz_out")]
    out: PathBuf,
    /// EGO controller name.
    #[arg(long, default_value = "baseline")]
    ego: String,
}

enum CliError {
    Usage(String),
    Io(String),
    Internal(String),
}

impl CliError {
    fn exit(&self) -> ExitCode {
        let (code, label, msg) = match self {
            CliError::Usage(m) => (EXIT_USAGE, "usage", m),
            CliError::Io(m) => (EXIT_IO, "i/o", m),
            CliError::Internal(m) => (EXIT_INTERNAL, "internal", m),
        };
        eprintln!("advfuzz: {label} error: {msg}");
        ExitCode::from(code)
    }
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Io(_) | CampaignError::Record(_) | CampaignError::MissingManifest(_) => {
                CliError::Io(e.to_string())
            }
            CampaignError::UnknownEgo(_) => CliError::Usage(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn parse_road(spec: &str) -> Result<RoadPreset, CliError> {
    match spec {
        "urban2" => Ok(RoadPreset::urban2()),
        "highway4" => Ok(RoadPreset::highway4()),
        other => match other.strip_prefix("custom:") {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("reading road preset {path}: {e}")))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid road preset {path}: {e}")))
            }
            None => Err(CliError::Usage(format!(
                "unknown road '{other}' (expected urban2, highway4, or custom:<file>)"
            ))),
        },
    }
}

fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("ADVFUZZ_WORKERS") {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("ADVFUZZ_WORKERS must be a number, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn print_summary(rep: &CampaignReport) {
    println!("scenarios:        {}", rep.scenario_num);
    println!("violations:       {}", rep.violation_num);
    println!("ego faults:       {}", rep.ego_fault_num);
    println!("proportion:       {:.2}%", rep.proportion_percent);
    println!(
        "min/scenario:     {:.3} sim | {:.3} wall",
        rep.minutes_per_scenario.simulated, rep.minutes_per_scenario.wall
    );
    if let Some(t) = &rep.first_violation_minute {
        println!("first violation:  {:.3} sim-min | {:.3} wall-min", t.simulated, t.wall);
    }
    if let Some(t) = &rep.first_ego_fault_minute {
        println!("first ego fault:  {:.3} sim-min | {:.3} wall-min", t.simulated, t.wall);
    }
    for (kind, count) in &rep.violation_histogram {
        println!("  {kind}: {count}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            if args.budget == 0 {
                return Err(CliError::Usage("--budget must be positive".into()));
            }
            if args.ell <= 0.0 || !args.ell.is_finite() {
                return Err(CliError::Usage("--ell must be positive".into()));
            }
            if !registered_controllers().contains(&args.ego.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown ego controller '{}' (available: {})",
                    args.ego,
                    registered_controllers().join(", ")
                )));
            }
            let mut settings = CampaignSettings::new(parse_road(&args.road)?, args.budget, args.seed);
            settings.hours = args.hours;
            settings.ell = args.ell;
            settings.search.tau = args.tau;
            settings.search.offspring = args.tau;
            settings.ego = args.ego;
            settings.workers = workers_from_env()?;
            let rep = run_campaign(&settings, &args.out)?;
            print_summary(&rep);
            println!("report: {}", args.out.join(REPORT_FILE).display());
            Ok(())
        }
        Command::Report { dir } => {
            let rep = report(&dir)?;
            println!("{}", serde_json::to_string_pretty(&rep).map_err(|e| CliError::Internal(e.to_string()))?);
            Ok(())
        }
        Command::Export { dir, kind } => {
            let kind: ExportKind = kind.parse().map_err(CliError::Usage)?;
            let path = export_series(&dir, kind)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output exits cleanly.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}
