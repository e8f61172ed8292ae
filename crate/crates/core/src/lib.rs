//! Personality-aligned investment agents.
//!
//! Five actor-critic agents learn to split a monthly contribution across
//! savings, property, stocks, luxury spending and mortgage repayment. Each is
//! pulled towards a fixed asset prior for one personality trait; a customer's
//! advice is the profile-weighted mix of the five policies.

pub mod ddpg;
pub mod env;
pub mod error;
pub mod eval;
pub mod market_data;
pub mod neural;
pub mod persona;
pub mod scalar;

pub use ddpg::{Agent, AgentConfig, RegularizerMode, ReplayBuffer, TrainingLog, Transition};
pub use env::{Allocation, Asset, Env, EnvConfig, Observation, Portfolio};
pub use error::{Error, Result};
pub use eval::{rollout, EvaluationReport, Policy};
pub use market_data::{IndexKind, IndexSeries, MarketData};
pub use persona::{PersonalityProfile, Prior, PriorSource, Trait};
pub use scalar::Scalar;

/// Networks and agents at the default double precision.
pub type DenseNet64 = neural::DenseNet<f64>;
pub type DenseNet32 = neural::DenseNet<f32>;
pub type Agent64 = ddpg::Agent<f64>;
pub type Agent32 = ddpg::Agent<f32>;
pub type Gradients64 = neural::Gradients<f64>;
pub type AdamState64 = neural::AdamState<f64>;
