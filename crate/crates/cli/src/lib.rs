//! Command implementations behind the `persona-advisor` binary.
//!
//! Every command resolves a [`RunConfig`] (flags over config file over
//! defaults), writes it next to its outputs, and can be replayed from that
//! snapshot.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use persona_advisor::ddpg::{Agent, TrainingLog};
use persona_advisor::eval::{self, emit_report, rollout, write_json, ActorPolicy, AggregatePolicy, ReportSummary};
use persona_advisor::env::write_trajectory_csv;
use persona_advisor::market_data::IndexKind;
use persona_advisor::{DenseNet64, Env, Error, MarketData, PersonalityProfile, Trait};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error as ThisError;

pub use config::{DataSource, RunConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, ThisError)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

/// Per-trait seed: the first eight bytes (little endian) of
/// `SHA-256("<master>:<trait letter>")`. Independent of which traits run.
pub fn trait_seed(master: u64, tr: Trait) -> u64 {
    let digest = Sha256::digest(format!("{master}:{}", tr.letter()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn load_market_data(cfg: &RunConfig) -> CliResult<Arc<MarketData>> {
    let data = match cfg.data_source {
        DataSource::Synthetic => MarketData::synthetic(cfg.data_seed(), cfg.data_months)?,
        DataSource::Trend => MarketData::trend(cfg.data_months)?,
        DataSource::Csv => {
            let paths = cfg.csv_paths()?;
            let [s, p, i] = [0, 1, 2].map(|k| persona_advisor::IndexSeries::ingest_csv(&paths[k], IndexKind::ALL[k]));
            MarketData::new(s?, p?, i?, cfg.rsi_periods)?
        }
    };
    Ok(Arc::new(data))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_snapshot(cfg: &RunConfig, command: &str) -> CliResult<PathBuf> {
    create_dir(&cfg.out)?;
    let path = cfg.out.join(format!("config.{command}.toml"));
    fs::write(&path, cfg.to_toml()?).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn agent_dir(out: &Path, tr: Trait) -> PathBuf {
    out.join("agents").join(tr.name())
}

/// Writes normalized series and the indicator table under `<out>/data`.
pub fn cmd_data(cfg: &RunConfig) -> CliResult<PathBuf> {
    let data = load_market_data(cfg)?;
    let dir = cfg.out.join("data");
    create_dir(&dir)?;
    for kind in IndexKind::ALL {
        data.series(kind).write_csv(&dir.join(format!("{}.csv", kind.file_stem())))?;
    }
    data.indicators.write_csv(&dir.join("indicators.csv"))?;
    write_snapshot(cfg, "data")?;
    Ok(dir)
}

/// Trains one agent per selected trait and saves checkpoints and logs.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<Vec<(Trait, TrainingLog)>> {
    let data = load_market_data(cfg)?;
    let env_cfg = cfg.env_config();
    env_cfg.validate()?;
    let agent_cfg = cfg.agent_config();
    agent_cfg.validate()?;
    // fail fast on a short series before any training starts
    Env::new(env_cfg.clone(), data.clone())?;
    write_snapshot(cfg, "train")?;

    let run_one = |tr: Trait| -> CliResult<TrainingLog> {
        let seed = trait_seed(cfg.seed, tr);
        let mut agent = Agent::<f64>::new(cfg.prior_source.prior(tr), agent_cfg.clone(), seed)?;
        let mut env = Env::new(env_cfg.clone(), data.clone())?;
        let log = agent.train(&mut env, agent_cfg.iterations)?;
        let dir = agent_dir(&cfg.out, tr);
        agent.save(&dir, tr.name())?;
        log.write_csv(&dir.join("training_log.csv"))?;
        Ok(log)
    };

    let traits = cfg.trait_list()?;
    let results: Vec<CliResult<TrainingLog>> = if cfg.parallel {
        thread::scope(|s| {
            let handles: Vec<_> = traits.iter().map(|&tr| s.spawn(move || run_one(tr))).collect();
            handles.into_iter().map(|h| h.join().expect("trainer thread panicked")).collect()
        })
    } else {
        traits.iter().map(|&tr| run_one(tr)).collect()
    };
    traits.into_iter().zip(results).map(|(tr, r)| r.map(|log| (tr, log))).collect()
}

fn load_actor(out: &Path, tr: Trait) -> CliResult<DenseNet64> {
    let dir = agent_dir(out, tr);
    if !dir.join("actor.json").is_file() || !dir.join("manifest.json").is_file() {
        return Err(CliError::config(format!(
            "missing checkpoint for {tr} in {}; run `train` first",
            dir.display()
        )));
    }
    let (agent, _) = Agent::<f64>::load(&dir)?;
    Ok(agent.actor)
}

#[derive(Debug, Serialize)]
pub struct AgentSummary {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub name: String,
    pub prior: [f64; 5],
    #[serde(flatten)]
    pub summary: ReportSummary,
}

#[derive(Debug, Serialize)]
pub struct EvaluationSummary {
    pub baseline: ReportSummary,
    pub agents: Vec<AgentSummary>,
}

/// Greedy rollouts of every trained trait plus the all-stocks baseline.
pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<EvaluationSummary> {
    let traits = cfg.trait_list()?;
    let actors = traits
        .iter()
        .map(|&tr| load_actor(&cfg.out, tr))
        .collect::<CliResult<Vec<_>>>()?;
    let data = load_market_data(cfg)?;
    let env_cfg = cfg.env_config();
    write_snapshot(cfg, "evaluate")?;
    let eval_dir = cfg.out.join("eval");

    let baseline = rollout(&eval::monetary_baseline(), &env_cfg, data.clone())?;
    emit_report(&baseline, None, &eval_dir.join("baseline"))?;

    let reports = thread::scope(|s| {
        let handles: Vec<_> = actors
            .into_iter()
            .map(|actor| {
                let data = data.clone();
                let env_cfg = &env_cfg;
                s.spawn(move || rollout(&ActorPolicy(actor), env_cfg, data))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut agents = Vec::with_capacity(traits.len());
    for (tr, report) in traits.iter().zip(&reports) {
        let log_path = agent_dir(&cfg.out, *tr).join("training_log.csv");
        let log = if log_path.is_file() {
            Some(TrainingLog::read_csv(&log_path)?)
        } else {
            None
        };
        emit_report(report, log.as_ref(), &eval_dir.join(tr.name()))?;
        agents.push(AgentSummary {
            trait_: *tr,
            name: tr.name().into(),
            prior: *cfg.prior_source.prior(*tr).weights(),
            summary: report.summary(),
        });
    }
    let summary = EvaluationSummary {
        baseline: baseline.summary(),
        agents,
    };
    write_json(&summary, &eval_dir.join("summary.json"))?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct AdviceSummary {
    pub profile: [f64; 5],
    pub weights: [f64; 5],
    #[serde(flatten)]
    pub summary: ReportSummary,
}

/// Rolls out the profile-weighted mix of all five trait actors.
pub fn cmd_advise(cfg: &RunConfig) -> CliResult<AdviceSummary> {
    let profile: PersonalityProfile = cfg
        .profile
        .as_deref()
        .ok_or_else(|| CliError::config("advise needs --profile O,C,E,A,N"))?
        .parse()?;
    let actors = Trait::ALL
        .iter()
        .map(|&tr| load_actor(&cfg.out, tr))
        .collect::<CliResult<Vec<_>>>()?;
    let policy = AggregatePolicy::new(&profile, actors)?;
    let data = load_market_data(cfg)?;
    write_snapshot(cfg, "advise")?;
    let report = rollout(&policy, &cfg.env_config(), data)?;
    let dir = cfg.out.join("advice");
    create_dir(&dir)?;
    write_trajectory_csv(&report.rows, &dir.join("trajectory.csv"))?;
    let summary = AdviceSummary {
        profile: *profile.scores(),
        weights: *policy.weights(),
        summary: report.summary(),
    };
    write_json(&summary, &dir.join("summary.json"))?;
    Ok(summary)
}
