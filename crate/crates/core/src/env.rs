//! The monthly asset-management MDP.
//!
//! Each step splits the fixed contribution across five channels, applies one
//! month of growth and returns the change in net worth (scaled to millions)
//! as the reward. Within a month the order is: contribute, grow, floor the
//! mortgage.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::indicators::csv_io;
use crate::market_data::{IndexSeries, MarketData};

pub const ASSET_COUNT: usize = 5;
pub const OBS_DIM: usize = 1 + ASSET_COUNT + 6;
/// NOK per state/reward unit.
pub const MONEY_SCALE: f64 = 1e6;
pub const AGE_SCALE: f64 = 100.0;
pub const YOUTH_AGE_LIMIT: f64 = 35.0;
pub const ALLOCATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Asset {
    Savings,
    Property,
    Stocks,
    Luxury,
    Mortgage,
}

impl Asset {
    pub const ALL: [Asset; ASSET_COUNT] = [
        Asset::Savings,
        Asset::Property,
        Asset::Stocks,
        Asset::Luxury,
        Asset::Mortgage,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Asset::Savings => "savings",
            Asset::Property => "property",
            Asset::Stocks => "stocks",
            Asset::Luxury => "luxury",
            Asset::Mortgage => "mortgage",
        }
    }
}

impl fmt::Display for Asset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Holdings in NOK. The mortgage is a liability stored as a non-negative balance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Portfolio {
    pub savings: f64,
    pub property: f64,
    pub stocks: f64,
    pub luxury: f64,
    pub mortgage_balance: f64,
}

impl Portfolio {
    pub fn net_worth(&self) -> f64 {
        self.savings + self.property + self.stocks + self.luxury - self.mortgage_balance
    }

    pub fn as_array(&self) -> [f64; ASSET_COUNT] {
        [
            self.savings,
            self.property,
            self.stocks,
            self.luxury,
            self.mortgage_balance,
        ]
    }
}

pub fn net_worth(portfolio: &Portfolio) -> f64 {
    portfolio.net_worth()
}

/// Fractions of the monthly contribution per asset, on the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation([f64; ASSET_COUNT]);

impl Allocation {
    pub fn new(weights: [f64; ASSET_COUNT]) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Domain(format!("allocation weight {w} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ALLOCATION_TOLERANCE {
            return Err(Error::Domain(format!("allocation sums to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Clips negatives and rescales to unit sum.
    pub fn normalized(weights: [f64; ASSET_COUNT]) -> Result<Self> {
        let clipped = weights.map(|w| if w.is_finite() { w.max(0.0) } else { f64::NAN });
        let sum: f64 = clipped.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::Domain(format!("cannot normalize allocation {weights:?}")));
        }
        Self::new(clipped.map(|w| w / sum))
    }

    pub fn all_in(asset: Asset) -> Self {
        let mut w = [0.0; ASSET_COUNT];
        w[asset.index()] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64; ASSET_COUNT] {
        &self.0
    }

    pub fn weight(&self, asset: Asset) -> f64 {
        self.0[asset.index()]
    }
}

/// The 12-component state: normalized age, five scaled holdings and the
/// MACD/RSI pair for each index (RSI divided by 100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn age_norm(&self) -> f64 {
        self.0[0]
    }

    pub fn asset_values(&self) -> &[f64] {
        &self.0[1..1 + ASSET_COUNT]
    }

    pub fn indicators(&self) -> &[f64] {
        &self.0[1 + ASSET_COUNT..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateKind {
    Savings,
    Mortgage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
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
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            start_age: 30.0,
            monthly_contribution: 10_000.0,
            months: 334,
            initial_mortgage: 2_000_000.0,
            initial_property: 2_000_000.0,
            savings_discount_young: 0.95,
            savings_discount_old: 0.90,
            mortgage_markup_young: 1.05,
            mortgage_markup_old: 1.10,
            luxury_annual_depreciation: 0.20,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let money = [
            ("start_age", self.start_age),
            ("monthly_contribution", self.monthly_contribution),
            ("initial_mortgage", self.initial_mortgage),
            ("initial_property", self.initial_property),
        ];
        if let Some((name, v)) = money.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
        }
        if self.months == 0 {
            return Err(Error::Config("months must be at least 1".into()));
        }
        if self.start_age + self.months as f64 / 12.0 > AGE_SCALE {
            return Err(Error::Config(format!(
                "age at horizon exceeds {AGE_SCALE} years; normalized age would leave [0, 1]"
            )));
        }
        for (name, d) in [
            ("savings_discount_young", self.savings_discount_young),
            ("savings_discount_old", self.savings_discount_old),
        ] {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {d}")));
            }
        }
        for (name, m) in [
            ("mortgage_markup_young", self.mortgage_markup_young),
            ("mortgage_markup_old", self.mortgage_markup_old),
        ] {
            if !(m > 1.0 && m.is_finite()) {
                return Err(Error::Config(format!("{name} must exceed 1, got {m}")));
            }
        }
        if !(0.0..1.0).contains(&self.luxury_annual_depreciation) {
            return Err(Error::Config(format!(
                "luxury_annual_depreciation must lie in [0, 1), got {}",
                self.luxury_annual_depreciation
            )));
        }
        Ok(())
    }

    pub fn total_invested(&self) -> f64 {
        self.months as f64 * self.monthly_contribution
    }

    pub fn age_at(&self, t: usize) -> f64 {
        self.start_age + t as f64 / 12.0
    }

    /// Customers under 35 get the better rate in both directions.
    pub fn interest_rate_for(&self, age: f64, index_annual_rate: f64, kind: RateKind) -> f64 {
        let young = age < YOUTH_AGE_LIMIT;
        let factor = match (kind, young) {
            (RateKind::Savings, true) => self.savings_discount_young,
            (RateKind::Savings, false) => self.savings_discount_old,
            (RateKind::Mortgage, true) => self.mortgage_markup_young,
            (RateKind::Mortgage, false) => self.mortgage_markup_old,
        };
        index_annual_rate * factor
    }

    pub fn initial_portfolio(&self) -> Portfolio {
        Portfolio {
            property: self.initial_property,
            mortgage_balance: self.initial_mortgage,
            ..Portfolio::default()
        }
    }
}

/// Account rate for the default 5%/10% adjustments.
pub fn interest_rate_for(age: f64, index_annual_rate: f64, kind: RateKind) -> f64 {
    EnvConfig::default().interest_rate_for(age, index_annual_rate, kind)
}

/// Annual rate implied by the interest index's move from month `t` to `t + 1`.
pub fn interest_index_to_rate(index: &IndexSeries, t: usize) -> Result<f64> {
    let next = index.value(t + 1)?;
    Ok((next / index.value(t)?).powi(12) - 1.0)
}

/// Geometric monthly factor for an effective annual rate.
pub fn monthly_factor(annual_rate: f64) -> f64 {
    (1.0 + annual_rate).max(0.0).powf(1.0 / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    /// Change in net worth over the month, in millions of NOK.
    pub reward: f64,
    pub done: bool,
}

/// One episode runner. Cheap to clone; the market data is shared.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    data: Arc<MarketData>,
    portfolio: Portfolio,
    t: usize,
    done: bool,
}

impl Env {
    pub fn new(config: EnvConfig, data: Arc<MarketData>) -> Result<Self> {
        config.validate()?;
        // month t grows with the ratio level[t + 1] / level[t]
        let needed = config.months + 1;
        if data.len() < needed || data.indicators.len() < needed {
            return Err(Error::Config(format!(
                "market data covers {} months; a {}-month horizon needs {needed} levels",
                data.len(),
                config.months
            )));
        }
        let portfolio = config.initial_portfolio();
        Ok(Self {
            config,
            data,
            portfolio,
            t: 0,
            done: false,
        })
    }

    pub fn reset(&mut self) -> Observation {
        self.portfolio = self.config.initial_portfolio();
        self.t = 0;
        self.done = false;
        self.observe()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn data(&self) -> &Arc<MarketData> {
        &self.data
    }

    pub fn portfolio(&self) -> &Portfolio {
        &self.portfolio
    }

    pub fn month(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn age(&self) -> f64 {
        self.config.age_at(self.t)
    }

    pub fn observe(&self) -> Observation {
        let p = &self.portfolio;
        let ind = &self.data.indicators;
        let t = self.t;
        Observation([
            self.age() / AGE_SCALE,
            p.savings / MONEY_SCALE,
            p.property / MONEY_SCALE,
            p.stocks / MONEY_SCALE,
            p.luxury / MONEY_SCALE,
            p.mortgage_balance / MONEY_SCALE,
            ind.macd[0][t],
            ind.rsi[0][t] / 100.0,
            ind.macd[1][t],
            ind.rsi[1][t] / 100.0,
            ind.macd[2][t],
            ind.rsi[2][t] / 100.0,
        ])
    }

    pub fn step(&mut self, allocation: &Allocation) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::State("step called after the episode finished".into()));
        }
        // re-check: the fields are private but deserialized values bypass `new`
        let allocation = Allocation::new(*allocation.weights())?;
        let t = self.t;
        let age = self.age();
        let before = self.portfolio.net_worth();
        let c = self.config.monthly_contribution;
        let w = allocation.weights();
        let ratio = |s: &IndexSeries| s.values()[t + 1] / s.values()[t];
        let index_rate = interest_index_to_rate(&self.data.interest, t)?;
        let savings_rate = self.config.interest_rate_for(age, index_rate, RateKind::Savings);
        let mortgage_rate = self.config.interest_rate_for(age, index_rate, RateKind::Mortgage);
        let luxury_factor = (1.0 - self.config.luxury_annual_depreciation).powf(1.0 / 12.0);

        let p = &mut self.portfolio;
        p.savings = (p.savings + w[0] * c) * monthly_factor(savings_rate);
        p.property = (p.property + w[1] * c) * ratio(&self.data.property);
        p.stocks = (p.stocks + w[2] * c) * ratio(&self.data.stocks);
        p.luxury = (p.luxury + w[3] * c) * luxury_factor;
        p.mortgage_balance = p.mortgage_balance * monthly_factor(mortgage_rate) - w[4] * c;
        if p.mortgage_balance < 0.0 {
            p.savings -= p.mortgage_balance;
            p.mortgage_balance = 0.0;
        }

        let reward = (p.net_worth() - before) / MONEY_SCALE;
        if !reward.is_finite() {
            return Err(Error::Numerical(format!("non-finite reward at month {t}")));
        }
        self.t += 1;
        self.done = self.t >= self.config.months;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
        })
    }
}

/// One month of an evaluated episode, as exported to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub age: f64,
    pub savings: f64,
    pub property: f64,
    pub stocks: f64,
    pub luxury: f64,
    pub mortgage: f64,
    pub net_worth: f64,
    pub reward: f64,
    pub w_sav: f64,
    pub w_prop: f64,
    pub w_stk: f64,
    pub w_lux: f64,
    pub w_mort: f64,
}

impl TrajectoryRow {
    /// `portfolio` is the holding after the step taken at month `t` with `allocation`.
    pub fn new(t: usize, age: f64, portfolio: &Portfolio, reward: f64, allocation: &Allocation) -> Self {
        let w = allocation.weights();
        Self {
            t,
            age,
            savings: portfolio.savings,
            property: portfolio.property,
            stocks: portfolio.stocks,
            luxury: portfolio.luxury,
            mortgage: portfolio.mortgage_balance,
            net_worth: portfolio.net_worth(),
            reward,
            w_sav: w[0],
            w_prop: w[1],
            w_stk: w[2],
            w_lux: w[3],
            w_mort: w[4],
        }
    }

    pub fn weights(&self) -> [f64; ASSET_COUNT] {
        [self.w_sav, self.w_prop, self.w_stk, self.w_lux, self.w_mort]
    }
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_io(path, e))?;
    }
    if rows.is_empty() {
        w.write_record([
            "t", "age", "savings", "property", "stocks", "luxury", "mortgage", "net_worth", "reward", "w_sav",
            "w_prop", "w_stk", "w_lux", "w_mort",
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.into(),
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{default_start_date, IndexKind};

    fn flat_data(months: usize) -> Arc<MarketData> {
        let flat = |kind| IndexSeries::from_levels(kind, default_start_date(), &vec![1.0; months + 1]).unwrap();
        Arc::new(
            MarketData::new(
                flat(IndexKind::Stocks),
                flat(IndexKind::Property),
                flat(IndexKind::InterestRate),
                14,
            )
            .unwrap(),
        )
    }

    #[test]
    fn reset_matches_initial_assumptions() {
        let mut env = Env::new(EnvConfig::default(), flat_data(334)).unwrap();
        let obs = env.reset();
        assert_eq!(obs.asset_values(), &[0.0, 2.0, 0.0, 0.0, 2.0]);
        assert_eq!(env.portfolio().net_worth(), 0.0);
        assert!((obs.age_norm() - 0.30).abs() < 1e-15);
    }

    #[test]
    fn short_series_is_a_config_error() {
        assert!(matches!(
            Env::new(EnvConfig::default(), flat_data(333)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn contribution_only_on_flat_markets() {
        let config = EnvConfig {
            initial_mortgage: 0.0,
            initial_property: 0.0,
            ..EnvConfig::default()
        };
        let mut env = Env::new(config, flat_data(334)).unwrap();
        env.reset();
        for _ in 0..5 {
            let out = env.step(&Allocation::all_in(Asset::Stocks)).unwrap();
            assert!((out.reward * MONEY_SCALE - 10_000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn luxury_loses_a_fifth_per_year() {
        let mut env = Env::new(EnvConfig::default(), flat_data(334)).unwrap();
        env.reset();
        env.portfolio.luxury = 1_000_000.0;
        for _ in 0..12 {
            env.step(&Allocation::all_in(Asset::Savings)).unwrap();
        }
        assert!((env.portfolio().luxury - 800_000.0).abs() < 1.0);
    }

    #[test]
    fn savings_compound_monthly() {
        // 0.95 * r = 0.02 effective annual for a 30-year-old
        assert!((monthly_factor(0.02) * 1000.0 - 1001.652).abs() < 1e-3);
        let r: f64 = 0.02 / 0.95;
        let months = 14;
        let levels: Vec<f64> = (0..=months).map(|t| (1.0 + r).powf(t as f64 / 12.0)).collect();
        let interest = IndexSeries::from_levels(IndexKind::InterestRate, default_start_date(), &levels).unwrap();
        let flat = |kind| IndexSeries::from_levels(kind, default_start_date(), &vec![1.0; months + 1]).unwrap();
        let data = MarketData::new(flat(IndexKind::Stocks), flat(IndexKind::Property), interest, 14).unwrap();
        let config = EnvConfig {
            months,
            monthly_contribution: 0.0,
            initial_mortgage: 0.0,
            initial_property: 0.0,
            ..EnvConfig::default()
        };
        let mut env = Env::new(config, Arc::new(data)).unwrap();
        env.reset();
        env.portfolio.savings = 1000.0;
        env.step(&Allocation::all_in(Asset::Savings)).unwrap();
        assert!((env.portfolio().savings - 1000.0 * 1.02f64.powf(1.0 / 12.0)).abs() < 1e-9);
    }

    #[test]
    fn mortgage_accrues_then_takes_payment() {
        // 40-year-old: markup 1.10 on an index rate of 3% gives 3.3% effective
        let months = 3;
        let levels: Vec<f64> = (0..=months).map(|t| 1.03f64.powf(t as f64 / 12.0)).collect();
        let interest = IndexSeries::from_levels(IndexKind::InterestRate, default_start_date(), &levels).unwrap();
        let flat = |kind| IndexSeries::from_levels(kind, default_start_date(), &vec![1.0; months + 1]).unwrap();
        let data = MarketData::new(flat(IndexKind::Stocks), flat(IndexKind::Property), interest, 14).unwrap();
        let config = EnvConfig {
            months,
            start_age: 40.0,
            ..EnvConfig::default()
        };
        let mut env = Env::new(config, Arc::new(data)).unwrap();
        env.reset();
        env.step(&Allocation::all_in(Asset::Mortgage)).unwrap();
        let expected = 2_000_000.0 * 1.033f64.powf(1.0 / 12.0) - 10_000.0;
        assert!((env.portfolio().mortgage_balance - expected).abs() < 1e-6);
    }

    #[test]
    fn overpayment_moves_to_savings() {
        let config = EnvConfig {
            initial_mortgage: 4_000.0,
            initial_property: 0.0,
            ..EnvConfig::default()
        };
        let mut env = Env::new(config, flat_data(334)).unwrap();
        env.reset();
        env.step(&Allocation::all_in(Asset::Mortgage)).unwrap();
        assert_eq!(env.portfolio().mortgage_balance, 0.0);
        assert!((env.portfolio().savings - 6_000.0).abs() < 1e-9);
    }

    #[test]
    fn rates_follow_age_band() {
        assert!((interest_rate_for(30.0, 0.03, RateKind::Savings) - 0.0285).abs() < 1e-15);
        assert!((interest_rate_for(40.0, 0.03, RateKind::Mortgage) - 0.033).abs() < 1e-15);
        assert!(interest_rate_for(34.999, 0.03, RateKind::Savings) > interest_rate_for(35.0, 0.03, RateKind::Savings));
        assert!(interest_rate_for(34.999, 0.03, RateKind::Mortgage) < interest_rate_for(35.0, 0.03, RateKind::Mortgage));
    }

    #[test]
    fn index_rate_conversion() {
        let s = IndexSeries::from_levels(IndexKind::InterestRate, default_start_date(), &[1.0, 1.0, 1.001, 1.0]).unwrap();
        assert_eq!(interest_index_to_rate(&s, 0).unwrap(), 0.0);
        assert!((interest_index_to_rate(&s, 1).unwrap() - 0.012066).abs() < 1e-6);
        assert!(interest_index_to_rate(&s, 2).unwrap() < 0.0);
        assert!(matches!(interest_index_to_rate(&s, 3), Err(Error::Bounds { .. })));
    }

    #[test]
    fn net_worth_examples() {
        let p = |s, pr, m| Portfolio {
            savings: s,
            property: pr,
            mortgage_balance: m,
            ..Portfolio::default()
        };
        assert_eq!(net_worth(&p(1e6, 0.0, 0.0)), 1e6);
        assert_eq!(net_worth(&p(0.0, 2e6, 0.5e6)), 1.5e6);
    }

    #[test]
    fn step_after_done_and_bad_allocation_fail() {
        let config = EnvConfig {
            months: 1,
            ..EnvConfig::default()
        };
        let mut env = Env::new(config, flat_data(1)).unwrap();
        env.reset();
        assert!(Allocation::new([0.5, 0.5, 0.5, 0.0, 0.0]).is_err());
        assert!(Allocation::new([-0.1, 0.6, 0.5, 0.0, 0.0]).is_err());
        assert!(env.step(&Allocation::all_in(Asset::Stocks)).unwrap().done);
        assert!(matches!(env.step(&Allocation::all_in(Asset::Stocks)), Err(Error::State(_))));
    }
}
