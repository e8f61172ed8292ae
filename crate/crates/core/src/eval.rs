//! Greedy rollouts, the all-stocks baseline and the reporting metrics.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ddpg::{to_allocation, TrainingLog};
use crate::env::{
    interest_index_to_rate, monthly_factor, read_trajectory_csv, write_trajectory_csv, Allocation, Asset, Env,
    EnvConfig, Observation, Portfolio, RateKind, TrajectoryRow, ASSET_COUNT,
};
use crate::error::{Error, Result};
use crate::market_data::MarketData;
use crate::neural::DenseNet;
use crate::persona::{combine_allocations, normalize_profile, PersonalityProfile, TRAIT_COUNT};
use crate::scalar::Scalar;

/// Maps a state to an allocation without exploration noise.
pub trait Policy {
    fn act(&self, observation: &Observation) -> Result<Allocation>;
}

/// Everything into stocks, whatever the state.
#[derive(Debug, Clone, Copy, Default)]
pub struct MonetaryBaseline;

pub fn monetary_baseline() -> MonetaryBaseline {
    MonetaryBaseline
}

impl Policy for MonetaryBaseline {
    fn act(&self, _: &Observation) -> Result<Allocation> {
        Ok(Allocation::all_in(Asset::Stocks))
    }
}

/// The same allocation every month.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub Allocation);

impl Policy for FixedPolicy {
    fn act(&self, _: &Observation) -> Result<Allocation> {
        Ok(self.0)
    }
}

/// Greedy output of a trained actor.
#[derive(Debug, Clone)]
pub struct ActorPolicy<T>(pub DenseNet<T>);

impl<T: Scalar> Policy for ActorPolicy<T> {
    fn act(&self, observation: &Observation) -> Result<Allocation> {
        to_allocation(&self.0.forward(&observation.0.map(T::of))?)
    }
}

/// Personal policy: the profile-weighted mix of the five trait actors.
#[derive(Debug, Clone)]
pub struct AggregatePolicy<T> {
    weights: [T; TRAIT_COUNT],
    actors: Vec<DenseNet<T>>,
}

impl<T: Scalar> AggregatePolicy<T> {
    /// `actors` in trait order (O, C, E, A, N).
    pub fn new(profile: &PersonalityProfile, actors: Vec<DenseNet<T>>) -> Result<Self> {
        if actors.len() != TRAIT_COUNT {
            return Err(Error::Config(format!("aggregation needs {TRAIT_COUNT} actors, got {}", actors.len())));
        }
        let weights = normalize_profile(profile)?.map(T::of);
        Ok(Self { weights, actors })
    }

    pub fn weights(&self) -> &[T; TRAIT_COUNT] {
        &self.weights
    }
}

impl<T: Scalar> Policy for AggregatePolicy<T> {
    fn act(&self, observation: &Observation) -> Result<Allocation> {
        aggregate_policy_weights(&self.weights, &self.actors, observation)
    }
}

/// Convex combination of the actors' outputs under the normalized profile.
pub fn aggregate_policy<T: Scalar>(
    profile: &PersonalityProfile,
    actors: &[DenseNet<T>],
    observation: &Observation,
) -> Result<Allocation> {
    aggregate_policy_weights(&normalize_profile(profile)?.map(T::of), actors, observation)
}

fn aggregate_policy_weights<T: Scalar>(
    weights: &[T; TRAIT_COUNT],
    actors: &[DenseNet<T>],
    observation: &Observation,
) -> Result<Allocation> {
    if actors.len() != TRAIT_COUNT {
        return Err(Error::Config(format!("aggregation needs {TRAIT_COUNT} actors, got {}", actors.len())));
    }
    let x = observation.0.map(T::of);
    let mut outputs = [[T::zero(); ASSET_COUNT]; TRAIT_COUNT];
    for (out, actor) in outputs.iter_mut().zip(actors) {
        let y = actor.forward(&x)?;
        *out = y.try_into().map_err(|v: Vec<T>| Error::shape(ASSET_COUNT, v.len()))?;
    }
    to_allocation(&combine_allocations(weights, &outputs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub final_portfolio: Portfolio,
    pub final_net_worth: f64,
    /// `None` when the final net worth is not positive.
    pub cagr: Option<f64>,
    pub total_invested: f64,
    pub rows: Vec<TrajectoryRow>,
}

impl EvaluationReport {
    pub fn months(&self) -> usize {
        self.rows.len()
    }

    pub fn allocation_trajectory(&self) -> Vec<[f64; ASSET_COUNT]> {
        self.rows.iter().map(TrajectoryRow::weights).collect()
    }

    /// Average allocation over the episode.
    pub fn mean_allocation(&self) -> [f64; ASSET_COUNT] {
        let n = self.rows.len().max(1) as f64;
        let mut acc = [0.0; ASSET_COUNT];
        for row in &self.rows {
            for (a, w) in acc.iter_mut().zip(row.weights()) {
                *a += w;
            }
        }
        acc.map(|a| a / n)
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            final_net_worth: self.final_net_worth,
            cagr: self.cagr,
            total_invested: self.total_invested,
            months: self.months(),
            final_portfolio: self.final_portfolio,
            mean_allocation: self.mean_allocation(),
        }
    }
}

/// Table-style summary of one evaluated policy, in NOK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub final_net_worth: f64,
    pub cagr: Option<f64>,
    pub total_invested: f64,
    pub months: usize,
    pub final_portfolio: Portfolio,
    pub mean_allocation: [f64; ASSET_COUNT],
}

/// Plays one full episode with `policy`.
pub fn rollout<P: Policy + ?Sized>(policy: &P, config: &EnvConfig, data: Arc<MarketData>) -> Result<EvaluationReport> {
    let mut env = Env::new(config.clone(), data)?;
    let mut observation = env.reset();
    let mut rows = Vec::with_capacity(config.months);
    loop {
        let t = env.month();
        let age = env.age();
        let allocation = policy.act(&observation)?;
        let out = env.step(&allocation)?;
        rows.push(TrajectoryRow::new(t, age, env.portfolio(), out.reward, &allocation));
        observation = out.observation;
        if out.done {
            break;
        }
    }
    let final_portfolio = *env.portfolio();
    let final_net_worth = final_portfolio.net_worth();
    let total_invested = config.total_invested();
    Ok(EvaluationReport {
        final_portfolio,
        final_net_worth,
        cagr: cagr(final_net_worth, total_invested, config.months).ok(),
        total_invested,
        rows,
    })
}

/// `values[T] / values[t]` for every month.
pub fn roi_curve<T: Scalar>(values: &[T]) -> Vec<T> {
    match values.last() {
        Some(&last) => values.iter().map(|&v| last / v).collect(),
        None => Vec::new(),
    }
}

/// `(final / invested)^(12 / months) - 1`.
pub fn cagr<T: Scalar>(final_value: T, total_invested: T, months: usize) -> Result<T> {
    if !(final_value > T::zero()) {
        return Err(Error::Domain(format!("final value {final_value} must be positive")));
    }
    if !(total_invested > T::zero()) || months == 0 {
        return Err(Error::Domain("cagr needs positive investment over at least one month".into()));
    }
    let years = T::from_usize(months).unwrap() / T::of(12.0);
    Ok((final_value / total_invested).powf(T::one() / years) - T::one())
}

/// Value at the horizon of one NOK placed in each asset at month `t`, for
/// `t < config.months`. Mortgage payments land after the month's interest.
pub fn asset_roi_curves(config: &EnvConfig, data: &MarketData) -> Result<Vec<[f64; ASSET_COUNT]>> {
    let horizon = config.months;
    if data.len() <= horizon {
        return Err(Error::Config("market data shorter than the horizon".into()));
    }
    let stocks = &data.stocks.values()[..=horizon];
    let property = &data.property.values()[..=horizon];
    let mut savings = vec![0.0; horizon + 1];
    let mut mortgage = vec![0.0; horizon + 1];
    savings[horizon] = 1.0;
    mortgage[horizon] = 1.0;
    let luxury_factor = (1.0 - config.luxury_annual_depreciation).powf(1.0 / 12.0);
    for t in (0..horizon).rev() {
        let rate = interest_index_to_rate(&data.interest, t)?;
        let age = config.age_at(t);
        savings[t] = savings[t + 1] * monthly_factor(config.interest_rate_for(age, rate, RateKind::Savings));
        let next = if t + 1 < horizon {
            let r = interest_index_to_rate(&data.interest, t + 1)?;
            monthly_factor(config.interest_rate_for(config.age_at(t + 1), r, RateKind::Mortgage))
        } else {
            1.0
        };
        mortgage[t] = mortgage[t + 1] * next;
    }
    Ok((0..horizon)
        .map(|t| {
            [
                savings[t],
                property[horizon] / property[t],
                stocks[horizon] / stocks[t],
                luxury_factor.powi((horizon - t) as i32),
                mortgage[t],
            ]
        })
        .collect())
}

/// True when stocks return at least as much as every other asset at every month.
pub fn stocks_dominate(config: &EnvConfig, data: &MarketData) -> Result<bool> {
    Ok(asset_roi_curves(config, data)?
        .iter()
        .all(|roi| roi.iter().all(|&r| roi[Asset::Stocks.index()] >= r)))
}

/// Writes `trajectory.csv`, `summary.json` and, given a log, `l_curve.csv`
/// into `dir`.
pub fn emit_report(report: &EvaluationReport, log: Option<&TrainingLog>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trajectory_csv(&report.rows, &dir.join("trajectory.csv"))?;
    if let Some(log) = log {
        log.write_csv(&dir.join("l_curve.csv"))?;
    }
    write_json(&report.summary(), &dir.join("summary.json"))
}

pub fn read_trajectory(dir: &Path) -> Result<Vec<TrajectoryRow>> {
    read_trajectory_csv(&dir.join("trajectory.csv"))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
