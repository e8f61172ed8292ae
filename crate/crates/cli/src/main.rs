use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use persona_advisor_cli::{cmd_advise, cmd_data, cmd_evaluate, cmd_train, CliError, CliResult, DataSource, RunConfig};

/// Personality-aligned investment agents: data, training, evaluation, advice.
#[derive(Debug, Parser)]
#[command(name = "persona-advisor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write normalized index series and indicators.
    Data(Common),
    /// Train one agent per selected trait.
    Train(Common),
    /// Roll out trained agents and the all-stocks baseline.
    Evaluate(Common),
    /// Roll out the personal policy for a trait profile.
    Advise(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trait letters, e.g. `E` or `O,C,E`; repeatable.
    #[arg(long = "trait", value_delimiter = ',')]
    traits: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Trait scores O,C,E,A,N in [-1, 1].
    #[arg(long, allow_hyphen_values = true)]
    profile: Option<String>,
    /// Use seeded synthetic indices.
    #[arg(long, conflicts_with = "csv")]
    synthetic: bool,
    /// Stocks, property and interest CSV files, comma-separated.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    csv: Vec<PathBuf>,
    /// Train the selected traits concurrently.
    #[arg(long)]
    parallel: bool,
}

impl Common {
    fn resolve(&self, command: &str) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                // evaluate/advise reuse the training snapshot when one exists
                let out = self.out.clone().unwrap_or_else(|| RunConfig::default().out);
                let snapshot = out.join("config.train.toml");
                if matches!(command, "evaluate" | "advise") && snapshot.is_file() {
                    RunConfig::load(&snapshot)?
                } else {
                    RunConfig::default()
                }
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if !self.traits.is_empty() {
            cfg.traits = self.traits.join(",");
        }
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        if let Some(h) = self.hidden {
            cfg.hidden = h;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(p) = &self.profile {
            cfg.profile = Some(p.clone());
        }
        if self.parallel {
            cfg.parallel = true;
        }
        if self.synthetic {
            cfg.data_source = DataSource::Synthetic;
        }
        if !self.csv.is_empty() {
            let [s, p, i]: [PathBuf; 3] = self
                .csv
                .clone()
                .try_into()
                .map_err(|_| CliError::config("--csv expects three paths: stocks,property,interest"))?;
            cfg.data_source = DataSource::Csv;
            cfg.csv_stocks = Some(s);
            cfg.csv_property = Some(p);
            cfg.csv_interest = Some(i);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Data(args) => {
            let cfg = args.resolve("data")?;
            let dir = cmd_data(&cfg)?;
            println!("wrote series and indicators to {}", dir.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve("train")?;
            for (tr, log) in cmd_train(&cfg)? {
                let last = log.records.last();
                println!(
                    "{:<18} iterations={} final L={:.3e} first L<1e-3 at {}",
                    tr.name(),
                    log.len(),
                    last.map_or(f64::NAN, |r| r.regularization),
                    log.first_below(1e-3).map_or("-".to_string(), |i| i.to_string()),
                );
            }
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve("evaluate")?;
            let summary = cmd_evaluate(&cfg)?;
            let line = |name: &str, s: &persona_advisor::eval::ReportSummary| {
                println!(
                    "{:<18} final net worth {:>8.2}M NOK  cagr {}",
                    name,
                    s.final_net_worth / 1e6,
                    s.cagr.map_or("n/a".to_string(), |c| format!("{:.2}%", c * 100.0))
                );
            };
            line("baseline (stocks)", &summary.baseline);
            for a in &summary.agents {
                line(&a.name, &a.summary);
            }
        }
        Command::Advise(args) => {
            let cfg = args.resolve("advise")?;
            let summary = cmd_advise(&cfg)?;
            println!(
                "personal policy: final net worth {:.2}M NOK, mean allocation {:?}",
                summary.summary.final_net_worth / 1e6,
                summary.summary.mean_allocation.map(|w| (w * 1000.0).round() / 1000.0)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
