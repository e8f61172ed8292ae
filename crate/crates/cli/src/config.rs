//! Flat run configuration shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use persona_advisor::ddpg::RegularizerMode;
use persona_advisor::market_data::{DEFAULT_RSI_PERIODS, DEFAULT_SERIES_MONTHS};
use persona_advisor::{AgentConfig, EnvConfig, PriorSource, Trait};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Seeded random-walk indices.
    #[default]
    Synthetic,
    /// Noise-free exponential indices.
    Trend,
    /// Three `date,value` files.
    Csv,
}

/// Everything a command needs, as flat `key = value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Comma-separated trait letters.
    pub traits: String,
    pub profile: Option<String>,
    pub parallel: bool,

    pub data_source: DataSource,
    /// Seed for synthetic indices; the master seed when absent.
    pub data_seed: Option<u64>,
    pub data_months: usize,
    pub rsi_periods: usize,
    pub csv_stocks: Option<PathBuf>,
    pub csv_property: Option<PathBuf>,
    pub csv_interest: Option<PathBuf>,

    pub start_age: f64,
    pub monthly_contribution: f64,
    pub months: usize,
    pub initial_mortgage: f64,
    pub initial_property: f64,
    pub savings_discount_young: f64,
    pub savings_discount_old: f64,
    pub mortgage_markup_young: f64,
    pub mortgage_markup_old: f64,
    pub luxury_annual_depreciation: f64,

    pub prior_source: PriorSource,
    pub regularizer: RegularizerMode,
    pub iterations: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub steps_per_iteration: usize,
    pub batches_per_iteration: usize,
    pub buffer_capacity: usize,
    pub exploration_sigma: f64,
    pub exploration_sigma_final: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        let agent = AgentConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            traits: "O,C,E,A,N".into(),
            profile: None,
            parallel: false,
            data_source: DataSource::Synthetic,
            data_seed: None,
            data_months: DEFAULT_SERIES_MONTHS,
            rsi_periods: DEFAULT_RSI_PERIODS,
            csv_stocks: None,
            csv_property: None,
            csv_interest: None,
            start_age: env.start_age,
            monthly_contribution: env.monthly_contribution,
            months: env.months,
            initial_mortgage: env.initial_mortgage,
            initial_property: env.initial_property,
            savings_discount_young: env.savings_discount_young,
            savings_discount_old: env.savings_discount_old,
            mortgage_markup_young: env.mortgage_markup_young,
            mortgage_markup_old: env.mortgage_markup_old,
            luxury_annual_depreciation: env.luxury_annual_depreciation,
            prior_source: PriorSource::Table,
            regularizer: agent.regularizer,
            iterations: agent.iterations,
            hidden: agent.hidden,
            lambda: agent.lambda,
            actor_lr: agent.actor_lr,
            critic_lr: agent.critic_lr,
            tau: agent.tau,
            gamma: agent.gamma,
            batch_size: agent.batch_size,
            steps_per_iteration: agent.steps_per_iteration,
            batches_per_iteration: agent.batches_per_iteration,
            buffer_capacity: agent.buffer_capacity,
            exploration_sigma: agent.exploration_sigma,
            exploration_sigma_final: agent.exploration_sigma_final,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError {
            code: crate::EXIT_IO,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn trait_list(&self) -> CliResult<Vec<Trait>> {
        let mut out: Vec<Trait> = Vec::new();
        for part in self.traits.split(',').filter(|p| !p.trim().is_empty()) {
            let tr: Trait = part.parse()?;
            if !out.contains(&tr) {
                out.push(tr);
            }
        }
        if out.is_empty() {
            return Err(CliError::config("no traits selected"));
        }
        out.sort();
        Ok(out)
    }

    pub fn csv_paths(&self) -> CliResult<[PathBuf; 3]> {
        match (&self.csv_stocks, &self.csv_property, &self.csv_interest) {
            (Some(s), Some(p), Some(i)) => Ok([s.clone(), p.clone(), i.clone()]),
            _ => Err(CliError::config(
                "csv data needs csv_stocks, csv_property and csv_interest",
            )),
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            start_age: self.start_age,
            monthly_contribution: self.monthly_contribution,
            months: self.months,
            initial_mortgage: self.initial_mortgage,
            initial_property: self.initial_property,
            savings_discount_young: self.savings_discount_young,
            savings_discount_old: self.savings_discount_old,
            mortgage_markup_young: self.mortgage_markup_young,
            mortgage_markup_old: self.mortgage_markup_old,
            luxury_annual_depreciation: self.luxury_annual_depreciation,
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            tau: self.tau,
            lambda: self.lambda,
            batch_size: self.batch_size,
            steps_per_iteration: self.steps_per_iteration,
            batches_per_iteration: self.batches_per_iteration,
            gamma: self.gamma,
            exploration_sigma: self.exploration_sigma,
            exploration_sigma_final: self.exploration_sigma_final,
            iterations: self.iterations,
            hidden: self.hidden,
            buffer_capacity: self.buffer_capacity,
            regularizer: self.regularizer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("seed = 3\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(err.code, crate::EXIT_CONFIG);
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig {
            seed: 9,
            profile: Some("0.1,0.2,0.3,0.4,0.5".into()),
            data_seed: Some(4),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("hidden = 64\ndata_source = \"trend\"\n").unwrap();
        assert_eq!(cfg.hidden, 64);
        assert_eq!(cfg.data_source, DataSource::Trend);
        assert_eq!(cfg.iterations, AgentConfig::default().iterations);
    }

    #[test]
    fn trait_selection() {
        let cfg = RunConfig {
            traits: "N, e,E".into(),
            ..RunConfig::default()
        };
        assert_eq!(cfg.trait_list().unwrap(), vec![Trait::Extraversion, Trait::Neuroticism]);
        let bad = RunConfig {
            traits: "Q".into(),
            ..RunConfig::default()
        };
        assert!(bad.trait_list().is_err());
    }
}
