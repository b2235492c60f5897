use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vagg_cli::commands::{self, Preset};
use vagg_cli::{load_config, parse_list, parse_range, render_defaults, CliError};
use vagg_core::sim::SimConfig;

#[derive(Parser)]
#[command(name = "vagg", version, about = "Warning aggregation simulator and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form tables.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Simulations.
    #[command(subcommand)]
    Sim(Sim),
    /// Print a configuration file with every key at its default.
    Defaults,
}

#[derive(Subcommand)]
enum Analyze {
    /// Probability that at least two signatures get checked.
    Prob {
        /// Comma-separated expected check counts.
        #[arg(long, default_value = "6,10")]
        k: String,
        /// Signature counts, e.g. 2..70.
        #[arg(long, default_value = "2..70")]
        n: String,
    },
    /// Signatures that fit each packet size and digest.
    Sizing,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file; keys it leaves out keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SimConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => load_config(path)?,
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Sim {
    /// One run; prints a metrics row.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Many seeds per node count, with and without aggregation.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Node counts, e.g. 10..40.
        #[arg(long, default_value = "10..40")]
        nodes: String,
        #[arg(long, default_value_t = 10)]
        step: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// fig12 (packet counts), fig13 (warning time) or table2 (verified signatures).
        #[arg(long)]
        preset: Option<String>,
        /// Print one row per run instead of per-node-count summaries.
        #[arg(long)]
        per_run: bool,
    },
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Analyze(Analyze::Prob { k, n }) => {
            let ks = parse_list::<u32>(&k).map_err(CliError::Usage)?;
            let n = parse_range(&n).map_err(CliError::Usage)?;
            commands::analyze_prob(&ks, n)
        }
        Command::Analyze(Analyze::Sizing) => commands::analyze_sizing(),
        Command::Defaults => Ok(render_defaults()),
        Command::Sim(Sim::Run { config, trace }) => {
            let mut c = config.load()?;
            c.trace = trace.is_some();
            let out = commands::sim_run(&c)?;
            if let Some(path) = trace {
                let mut text = out.trace.join("\n");
                text.push('\n');
                std::fs::write(&path, text)
                    .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            }
            commands::runs_csv([&out.metrics])
        }
        Command::Sim(Sim::Sweep { config, nodes, step, runs, preset, per_run }) => {
            let c = config.load()?;
            let preset = preset
                .map(|p| Preset::parse(&p).ok_or_else(|| CliError::Usage(format!("unknown preset `{p}`"))))
                .transpose()?;
            if runs == 0 || step == 0 {
                return Err(CliError::Usage("runs and step must be positive".into()));
            }
            if preset == Some(Preset::Table2) {
                return commands::table2_csv(runs, c.seed);
            }
            let range = parse_range(&nodes).map_err(CliError::Usage)?;
            if *range.start() == 0 {
                return Err(CliError::Usage("node counts must be positive".into()));
            }
            let counts: Vec<usize> = range.step_by(step).collect();
            let results = commands::sweep(&c, &counts, runs)?;
            if per_run {
                commands::runs_csv(results.iter().flat_map(|r| [&r.aggregated, &r.baseline]))
            } else {
                commands::sweep_summary(&results, preset)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
