//! Deterministic policy gradient with a prior regularizer on the actor.
//!
//! The actor maximizes `E[Q(o, mu(o))] - lambda * L`, where `L` is the mean
//! squared gap between the policy's expected action and a fixed prior. The
//! critic is trained on the usual one-step temporal-difference target.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Allocation, Env, Observation, ASSET_COUNT, OBS_DIM};
use crate::error::{Error, Result};
use crate::market_data::indicators::csv_io;
use crate::neural::{self, adam_step, soft_update, AdamState, DenseNet, Gradients, Head};
use crate::persona::Prior;
use crate::scalar::Scalar;

pub const CRITIC_INPUT_DIM: usize = OBS_DIM + ASSET_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Observation,
    pub allocation: Allocation,
    pub reward: f64,
    pub next_observation: Observation,
    pub done: bool,
}

/// Fixed-capacity ring of transitions; the oldest is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// How the regularizer compares actions with the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerMode {
    /// Squared gap between the batch-mean action and the prior.
    #[default]
    BatchMean,
    /// Mean over samples of each action's squared gap to the prior.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub steps_per_iteration: usize,
    pub batches_per_iteration: usize,
    pub gamma: f64,
    /// Logit noise scale at the first iteration.
    pub exploration_sigma: f64,
    /// Logit noise scale reached at the last iteration.
    pub exploration_sigma_final: f64,
    pub iterations: usize,
    pub hidden: usize,
    pub buffer_capacity: usize,
    pub regularizer: RegularizerMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            actor_lr: 0.004,
            critic_lr: 0.001,
            tau: 0.05,
            lambda: 2.0,
            batch_size: 256,
            steps_per_iteration: 256,
            batches_per_iteration: 2,
            gamma: 0.99,
            exploration_sigma: 0.1,
            exploration_sigma_final: 0.01,
            iterations: 500,
            hidden: 2000,
            buffer_capacity: 2048,
            regularizer: RegularizerMode::BatchMean,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, s) in [
            ("exploration_sigma", self.exploration_sigma),
            ("exploration_sigma_final", self.exploration_sigma_final),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be >= 0, got {s}"));
            }
        }
        for (name, n) in [
            ("batch_size", self.batch_size),
            ("steps_per_iteration", self.steps_per_iteration),
            ("hidden", self.hidden),
            ("buffer_capacity", self.buffer_capacity),
        ] {
            if n == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Linearly decayed exploration scale for iteration `i` of `total`.
    pub fn sigma_at(&self, i: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.exploration_sigma;
        }
        let frac = i as f64 / (total - 1) as f64;
        self.exploration_sigma + (self.exploration_sigma_final - self.exploration_sigma) * frac
    }

    pub fn actor_sizes(&self) -> [usize; 4] {
        [OBS_DIM, self.hidden, self.hidden, ASSET_COUNT]
    }

    pub fn critic_sizes(&self) -> [usize; 4] {
        [CRITIC_INPUT_DIM, self.hidden, self.hidden, 1]
    }
}

/// `L = (1/M) sum_j (a_j - prior_j)^2` over the `M` action components.
pub fn regularization_term<T: Scalar>(mean_action: &[T], prior: &Prior) -> T {
    let m = T::from_usize(ASSET_COUNT).unwrap();
    mean_action
        .iter()
        .zip(prior.weights())
        .fold(T::zero(), |acc, (&a, &p)| {
            let d = a - T::of(p);
            acc + d * d
        })
        / m
}

/// Regularizer value and its gradient with respect to each row of `actions`.
pub fn regularizer_with_grad<T: Scalar>(actions: &Array2<T>, prior: &Prior, mode: RegularizerMode) -> (T, Array2<T>) {
    let b = T::from_usize(actions.nrows()).unwrap();
    let m = T::from_usize(ASSET_COUNT).unwrap();
    let two = T::of(2.0);
    let prior_row = Array1::from_iter(prior.weights().iter().map(|&p| T::of(p)));
    match mode {
        RegularizerMode::BatchMean => {
            let mean = neural::column_means(actions);
            let value = regularization_term(mean.as_slice().unwrap(), prior);
            let row_grad = (&mean - &prior_row).mapv(|d| two * d / (m * b));
            let grad = row_grad.insert_axis(Axis(0)).broadcast(actions.dim()).unwrap().to_owned();
            (value, grad)
        }
        RegularizerMode::PerSample => {
            let diff = actions - &prior_row;
            let value = diff.iter().fold(T::zero(), |acc, &d| acc + d * d) / (m * b);
            (value, diff.mapv(|d| two * d / (m * b)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActorLoss<T> {
    pub loss: T,
    pub regularization: T,
    pub mean_q: T,
    pub grads: Gradients<T>,
}

#[derive(Debug, Clone)]
pub struct CriticLoss<T> {
    pub loss: T,
    pub grads: Gradients<T>,
}

/// One prior-regularized actor/critic learner.
#[derive(Debug, Clone)]
pub struct Agent<T: Scalar> {
    pub actor: DenseNet<T>,
    pub actor_target: DenseNet<T>,
    pub critic: DenseNet<T>,
    pub critic_target: DenseNet<T>,
    pub prior: Prior,
    pub config: AgentConfig,
    pub seed: u64,
    actor_opt: AdamState<T>,
    critic_opt: AdamState<T>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

fn observations<T: Scalar>(obs: impl ExactSizeIterator<Item = Observation>) -> Array2<T> {
    let n = obs.len();
    let flat: Vec<T> = obs.flat_map(|o| o.0.map(T::of)).collect();
    Array2::from_shape_vec((n, OBS_DIM), flat).expect("observation rows")
}

fn allocations<T: Scalar>(acts: impl ExactSizeIterator<Item = Allocation>) -> Array2<T> {
    let n = acts.len();
    let flat: Vec<T> = acts.flat_map(|a| a.weights().map(T::of)).collect();
    Array2::from_shape_vec((n, ASSET_COUNT), flat).expect("allocation rows")
}

/// Converts a network output to an allocation, renormalizing in `f64`.
pub fn to_allocation<T: Scalar>(output: &[T]) -> Result<Allocation> {
    let w: [f64; ASSET_COUNT] = output
        .try_into()
        .map(|a: [T; ASSET_COUNT]| a.map(T::as_f64))
        .map_err(|_| Error::shape(ASSET_COUNT, output.len()))?;
    Allocation::normalized(w)
}

pub fn explore_actor<T: Scalar, R: Rng + ?Sized>(
    actor: &DenseNet<T>,
    observation: &Observation,
    sigma: f64,
    rng: &mut R,
) -> Result<Allocation> {
    let x = observation.0.map(T::of);
    let mut logits = actor.logits(&x)?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
        for l in &mut logits {
            *l += T::of(noise.sample(rng));
        }
    }
    neural::softmax_inplace(&mut logits);
    to_allocation(&logits)
}

impl<T: Scalar> Agent<T> {
    pub fn new(prior: Prior, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = DenseNet::random(&config.actor_sizes(), Head::Softmax, &mut rng)?;
        let critic = DenseNet::random(&config.critic_sizes(), Head::Linear, &mut rng)?;
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            actor,
            critic,
            prior,
            config,
            seed,
            rng,
        })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Greedy (noise-free) action.
    pub fn act(&self, observation: &Observation) -> Result<Allocation> {
        let x = observation.0.map(T::of);
        to_allocation(&self.actor.forward(&x)?)
    }

    /// Gaussian noise on the actor's logits, then softmax.
    pub fn explore<R: Rng + ?Sized>(&self, observation: &Observation, sigma: f64, rng: &mut R) -> Result<Allocation> {
        explore_actor(&self.actor, observation, sigma, rng)
    }

    fn critic_input(obs: &Array2<T>, actions: &Array2<T>) -> Array2<T> {
        concatenate(Axis(1), &[obs.view(), actions.view()]).expect("matching batch rows")
    }

    /// Regularized policy loss over `batch`; gradients are for the actor only.
    pub fn actor_loss(&self, batch: &[Transition]) -> Result<ActorLoss<T>> {
        if batch.is_empty() {
            return Err(Error::Domain("actor loss needs a nonempty batch".into()));
        }
        let b = T::from_usize(batch.len()).unwrap();
        let obs = observations::<T>(batch.iter().map(|t| t.observation));
        let actor_trace = self.actor.forward_trace(obs.view())?;
        let actions = actor_trace.output().clone();
        let critic_trace = self.critic.forward_trace(Self::critic_input(&obs, &actions).view())?;
        let q = critic_trace.output();
        let mean_q = q.sum() / b;

        let dq = Array2::from_elem((batch.len(), 1), -T::one() / b);
        let (_, d_input) = self.critic.backward_trace(&critic_trace, dq.view())?;
        let mut upstream = neural::tail_columns(&d_input, OBS_DIM);

        let lambda = T::of(self.config.lambda);
        let (regularization, reg_grad) = regularizer_with_grad(&actions, &self.prior, self.config.regularizer);
        if self.config.lambda != 0.0 {
            upstream.scaled_add(lambda, &reg_grad);
        }
        let (grads, _) = self.actor.backward_trace(&actor_trace, upstream.view())?;
        Ok(ActorLoss {
            loss: -mean_q + lambda * regularization,
            regularization,
            mean_q,
            grads,
        })
    }

    /// Mean squared temporal-difference error against the target networks.
    pub fn critic_loss(&self, batch: &[Transition]) -> Result<CriticLoss<T>> {
        if batch.is_empty() {
            return Err(Error::Domain("critic loss needs a nonempty batch".into()));
        }
        let n = batch.len();
        let b = T::from_usize(n).unwrap();
        let gamma = T::of(self.config.gamma);

        let next_obs = observations::<T>(batch.iter().map(|t| t.next_observation));
        let next_actions = self.actor_target.forward_batch(next_obs.view())?;
        let next_q = self
            .critic_target
            .forward_batch(Self::critic_input(&next_obs, &next_actions).view())?;
        let targets = Array1::from_iter(batch.iter().zip(next_q.column(0)).map(|(t, &nq)| {
            let r = T::of(t.reward);
            if t.done {
                r
            } else {
                r + gamma * nq
            }
        }));

        let obs = observations::<T>(batch.iter().map(|t| t.observation));
        let acts = allocations::<T>(batch.iter().map(|t| t.allocation));
        let trace = self.critic.forward_trace(Self::critic_input(&obs, &acts).view())?;
        let err = &trace.output().column(0) - &targets;
        let loss = err.iter().fold(T::zero(), |acc, &e| acc + e * e) / b;
        let upstream = err.mapv(|e| T::of(2.0) * e / b).insert_axis(Axis(1));
        let (grads, _) = self.critic.backward_trace(&trace, upstream.view())?;
        Ok(CriticLoss { loss, grads })
    }

    /// Critic step, actor step against the updated critic, then both soft updates.
    pub fn update(&mut self, batch: &[Transition]) -> Result<(CriticLoss<T>, ActorLoss<T>)> {
        let critic = self.critic_loss(batch)?;
        ensure_finite("critic", critic.loss, &critic.grads)?;
        adam_step(&mut self.critic, &critic.grads, &mut self.critic_opt, T::of(self.config.critic_lr))?;

        let actor = self.actor_loss(batch)?;
        ensure_finite("actor", actor.loss, &actor.grads)?;
        adam_step(&mut self.actor, &actor.grads, &mut self.actor_opt, T::of(self.config.actor_lr))?;

        let tau = T::of(self.config.tau);
        soft_update(&mut self.critic_target, &self.critic, tau)?;
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        Ok((critic, actor))
    }

    /// Runs `iterations` rounds of collect-then-learn on `env`.
    pub fn train(&mut self, env: &mut Env, iterations: usize) -> Result<TrainingLog> {
        self.train_with(env, iterations, |_| {})
    }

    /// Like [`Agent::train`], calling `on_iteration` after every record.
    pub fn train_with(
        &mut self,
        env: &mut Env,
        iterations: usize,
        mut on_iteration: impl FnMut(&IterationRecord),
    ) -> Result<TrainingLog> {
        let cfg = self.config.clone();
        let mut observation = env.reset();
        let mut episode_return = 0.0;
        let mut last_return = 0.0;
        let mut log = TrainingLog::default();

        let mut collect = |agent: &mut Self, steps: usize, sigma: f64, finished: &mut Vec<f64>| -> Result<()> {
            for _ in 0..steps {
                let allocation = explore_actor(&agent.actor, &observation, sigma, &mut agent.rng)?;
                let out = env.step(&allocation)?;
                agent.buffer.push(Transition {
                    observation,
                    allocation,
                    reward: out.reward,
                    next_observation: out.observation,
                    done: out.done,
                });
                episode_return += out.reward;
                observation = if out.done {
                    finished.push(episode_return);
                    episode_return = 0.0;
                    env.reset()
                } else {
                    out.observation
                };
            }
            Ok(())
        };

        let warmup = cfg.batch_size.saturating_sub(cfg.steps_per_iteration);
        collect(self, warmup, cfg.sigma_at(0, iterations), &mut Vec::new())?;

        for i in 0..iterations {
            let sigma = cfg.sigma_at(i, iterations);
            let mut finished = Vec::new();
            collect(self, cfg.steps_per_iteration, sigma, &mut finished)?;

            let (mut reg, mut actor_loss, mut critic_loss) = (0.0, 0.0, 0.0);
            for _ in 0..cfg.batches_per_iteration {
                let batch = self.buffer.sample(cfg.batch_size, &mut self.rng);
                let (c, a) = self.update(&batch)?;
                reg += a.regularization.as_f64();
                actor_loss += a.loss.as_f64();
                critic_loss += c.loss.as_f64();
            }
            let k = cfg.batches_per_iteration.max(1) as f64;
            if !finished.is_empty() {
                last_return = finished.iter().sum::<f64>() / finished.len() as f64;
            }
            let record = IterationRecord {
                iteration: i + 1,
                regularization: reg / k,
                actor_loss: actor_loss / k,
                critic_loss: critic_loss / k,
                mean_return: last_return,
            };
            on_iteration(&record);
            log.records.push(record);
        }
        Ok(log)
    }

    /// Writes the four networks and a manifest into `dir`.
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let seed = Some(self.seed);
        neural::save_checkpoint(&self.actor, seed, &dir.join("actor.json"))?;
        neural::save_checkpoint(&self.actor_target, seed, &dir.join("actor_target.json"))?;
        neural::save_checkpoint(&self.critic, seed, &dir.join("critic.json"))?;
        neural::save_checkpoint(&self.critic_target, seed, &dir.join("critic_target.json"))?;
        let manifest = AgentManifest {
            name: name.into(),
            scalar: T::NAME.into(),
            prior: self.prior,
            config: self.config.clone(),
            seed: self.seed,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Restores networks saved by [`Agent::save`]. Optimizer moments and the
    /// replay buffer start empty.
    pub fn load(dir: &Path) -> Result<(Self, AgentManifest)> {
        let manifest = AgentManifest::load(&dir.join("manifest.json"))?;
        let mut agent = Self::new(manifest.prior, manifest.config.clone(), manifest.seed)?;
        let actor_shape = manifest.config.actor_sizes();
        let critic_shape = manifest.config.critic_sizes();
        agent.actor = neural::load_checkpoint(&dir.join("actor.json"), Some((&actor_shape, Head::Softmax)))?;
        agent.actor_target = neural::load_checkpoint(&dir.join("actor_target.json"), Some((&actor_shape, Head::Softmax)))?;
        agent.critic = neural::load_checkpoint(&dir.join("critic.json"), Some((&critic_shape, Head::Linear)))?;
        agent.critic_target = neural::load_checkpoint(&dir.join("critic_target.json"), Some((&critic_shape, Head::Linear)))?;
        Ok((agent, manifest))
    }
}

fn ensure_finite<T: Scalar>(what: &str, loss: T, grads: &Gradients<T>) -> Result<()> {
    if loss.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} loss diverged ({loss})")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentManifest {
    pub name: String,
    pub scalar: String,
    pub prior: Prior,
    pub config: AgentConfig,
    pub seed: u64,
}

impl AgentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(rename = "L")]
    pub regularization: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Mean return of episodes finished this iteration; carries the previous
    /// value forward when none finished (0 before the first).
    pub mean_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
}

impl TrainingLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn regularization_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.regularization).collect()
    }

    /// First iteration (1-based) whose logged `L` is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.regularization < threshold).map(|r| r.iteration)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        if self.records.is_empty() {
            w.write_record(["iteration", "L", "actor_loss", "critic_loss", "mean_return"])
                .map_err(|e| csv_io(path, e))?;
        }
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<IterationRecord>, _>>()
            .map_err(|e| Error::Parse {
                path: path.into(),
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
        Ok(Self { records })
    }
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::EnvConfig;
    use crate::market_data::MarketData;
    use crate::persona::{PriorSource, Trait};

    fn small_config(hidden: usize) -> AgentConfig {
        AgentConfig {
            hidden,
            batch_size: 16,
            steps_per_iteration: 16,
            buffer_capacity: 64,
            ..AgentConfig::default()
        }
    }

    fn random_observation(rng: &mut ChaCha8Rng) -> Observation {
        let mut o = [0.0; OBS_DIM];
        for v in &mut o {
            *v = rng.random_range(-0.5..1.0);
        }
        Observation(o)
    }

    fn random_batch(n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..n)
            .map(|_| {
                let mut w = [0.0; ASSET_COUNT];
                for v in &mut w {
                    *v = rng.random_range(0.01..1.0);
                }
                Transition {
                    observation: random_observation(rng),
                    allocation: Allocation::normalized(w).unwrap(),
                    reward: rng.random_range(-0.01..0.05),
                    next_observation: random_observation(rng),
                    done: rng.random_bool(0.1),
                }
            })
            .collect()
    }

    #[test]
    fn regularization_term_examples() {
        let e = PriorSource::Table.prior(Trait::Extraversion);
        assert_eq!(regularization_term(&[0.0, 0.0, 1.0, 0.0, 0.0], &e), 0.0);
        let l: f64 = regularization_term(&[0.2; 5], &e);
        assert!((l - 0.16).abs() < 1e-15);
        let uniform = Prior::new([0.2; 5]).unwrap();
        assert_eq!(regularization_term(&[0.2; 5], &uniform), 0.0);
        let l: f64 = regularization_term(&[1.0, 0.0, 0.0, 0.0, 0.0], &e);
        assert!((l - 0.4).abs() < 1e-15);
    }

    #[test]
    fn batch_mean_regularizer_ignores_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = PriorSource::Table.prior(Trait::Openness);
        let a: Array2<f64> = Array2::from_shape_fn((32, ASSET_COUNT), |_| rng.random_range(0.0..1.0));
        let mut rows: Vec<usize> = (0..32).collect();
        rows.reverse();
        rows.swap(3, 17);
        let b = a.select(Axis(0), &rows);
        let (la, _) = regularizer_with_grad(&a, &prior, RegularizerMode::BatchMean);
        let (lb, _) = regularizer_with_grad(&b, &prior, RegularizerMode::BatchMean);
        assert!((la - lb).abs() < 1e-15);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..24 {
            let tr = Trait::ALL[case % 5];
            let mode = if case % 2 == 0 {
                RegularizerMode::BatchMean
            } else {
                RegularizerMode::PerSample
            };
            let config = AgentConfig {
                lambda: rng.random_range(0.5..5.0),
                regularizer: mode,
                ..small_config(6)
            };
            let agent = Agent::<f64>::new(PriorSource::Table.prior(tr), config, case as u64).unwrap();
            let batch = random_batch(8, &mut rng);
            let analytic = agent.actor_loss(&batch).unwrap().grads.to_flat();
            let params = agent.actor.to_flat();
            let mut probe = agent.clone();
            for i in (0..params.len()).step_by(3) {
                let mut p = params.clone();
                p[i] += eps;
                probe.actor.set_flat(&p).unwrap();
                let up = probe.actor_loss(&batch).unwrap().loss;
                p[i] -= 2.0 * eps;
                probe.actor.set_flat(&p).unwrap();
                let down = probe.actor_loss(&batch).unwrap().loss;
                let numeric = (up - down) / (2.0 * eps);
                let g = analytic[i];
                assert!(
                    (g - numeric).abs() <= 1e-4 * g.abs().max(numeric.abs()) + 1e-9,
                    "case {case} param {i}: {g} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for case in 0..20 {
            let prior = PriorSource::Table.prior(Trait::ALL[case % 5]);
            for mode in [RegularizerMode::BatchMean, RegularizerMode::PerSample] {
                let a: Array2<f64> = Array2::from_shape_fn((5, ASSET_COUNT), |_| rng.random_range(0.0..1.0));
                let (_, grad) = regularizer_with_grad(&a, &prior, mode);
                for ((r, c), &g) in grad.indexed_iter() {
                    let mut p = a.clone();
                    p[[r, c]] += eps;
                    let up = regularizer_with_grad(&p, &prior, mode).0;
                    p[[r, c]] -= 2.0 * eps;
                    let down = regularizer_with_grad(&p, &prior, mode).0;
                    let numeric = (up - down) / (2.0 * eps);
                    assert!((g - numeric).abs() <= 1e-4 * g.abs().max(numeric.abs()) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_lambda_gradient_is_the_plain_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = AgentConfig {
            lambda: 0.0,
            ..small_config(8)
        };
        let agent = Agent::<f64>::new(PriorSource::Table.prior(Trait::Openness), config, 9).unwrap();
        let batch = random_batch(12, &mut rng);
        let got = agent.actor_loss(&batch).unwrap();

        // unregularized chain rule, written out independently
        let obs = observations::<f64>(batch.iter().map(|t| t.observation));
        let trace = agent.actor.forward_trace(obs.view()).unwrap();
        let input = concatenate(Axis(1), &[obs.view(), trace.output().view()]).unwrap();
        let critic_trace = agent.critic.forward_trace(input.view()).unwrap();
        let dq = Array2::from_elem((12, 1), -1.0 / 12.0);
        let (_, d_input) = agent.critic.backward_trace(&critic_trace, dq.view()).unwrap();
        let upstream = d_input.slice(ndarray::s![.., OBS_DIM..]).to_owned();
        let (want, _) = agent.actor.backward_trace(&trace, upstream.view()).unwrap();
        assert_eq!(got.grads.to_flat(), want.to_flat());
        assert_eq!(got.loss, -got.mean_q);
    }

    #[test]
    fn zero_lambda_training_does_not_see_the_prior() {
        let data = Arc::new(MarketData::synthetic(3, 61).unwrap());
        let env_config = EnvConfig {
            months: 60,
            ..EnvConfig::default()
        };
        let config = AgentConfig {
            lambda: 0.0,
            ..small_config(8)
        };
        let run = |tr: Trait| {
            let mut env = Env::new(env_config.clone(), data.clone()).unwrap();
            let mut agent = Agent::<f64>::new(PriorSource::Table.prior(tr), config.clone(), 21).unwrap();
            let log = agent.train(&mut env, 6).unwrap();
            (agent.actor.to_flat(), agent.critic.to_flat(), log)
        };
        let (a1, c1, l1) = run(Trait::Openness);
        let (a2, c2, l2) = run(Trait::Neuroticism);
        assert_eq!(a1, a2);
        assert_eq!(c1, c2);
        let losses = |l: &TrainingLog| l.records.iter().map(|r| (r.actor_loss, r.critic_loss)).collect::<Vec<_>>();
        assert_eq!(losses(&l1), losses(&l2));
        assert_ne!(l1.regularization_curve(), l2.regularization_curve());
    }

    #[test]
    fn replay_buffer_keeps_most_recent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let items = random_batch(23, &mut rng);
        let mut buf = ReplayBuffer::new(8);
        for t in &items {
            buf.push(*t);
        }
        assert_eq!(buf.len(), 8);
        let kept: Vec<Transition> = buf.iter().copied().collect();
        assert_eq!(kept, items[15..].to_vec());
        let sample = buf.sample(50, &mut rng);
        assert!(sample.iter().all(|s| kept.contains(s)));
    }

    #[test]
    fn critic_target_without_bootstrap_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut batch = random_batch(10, &mut rng);
        let q_of = |agent: &Agent<f64>, t: &Transition| {
            let mut x = t.observation.0.to_vec();
            x.extend_from_slice(t.allocation.weights());
            agent.critic.forward(&x).unwrap()[0]
        };
        let mse = |agent: &Agent<f64>, batch: &[Transition]| {
            batch.iter().map(|t| (q_of(agent, t) - t.reward).powi(2)).sum::<f64>() / batch.len() as f64
        };
        let no_discount = Agent::<f64>::new(
            PriorSource::Table.prior(Trait::Openness),
            AgentConfig { gamma: 0.0, ..small_config(8) },
            1,
        )
        .unwrap();
        let got = no_discount.critic_loss(&batch).unwrap().loss;
        assert!((got - mse(&no_discount, &batch)).abs() < 1e-14);

        for t in &mut batch {
            t.done = true;
        }
        let terminal = Agent::<f64>::new(PriorSource::Table.prior(Trait::Openness), small_config(8), 1).unwrap();
        let got = terminal.critic_loss(&batch).unwrap().loss;
        assert!((got - mse(&terminal, &batch)).abs() < 1e-14);
    }

    #[test]
    fn critic_fits_a_single_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = random_batch(1, &mut rng);
        let mut agent = Agent::<f64>::new(PriorSource::Table.prior(Trait::Agreeableness), small_config(8), 3).unwrap();
        let first = agent.critic_loss(&batch).unwrap().loss;
        let mut opt = AdamState::new(&agent.critic);
        for _ in 0..200 {
            let g = agent.critic_loss(&batch).unwrap().grads;
            adam_step(&mut agent.critic, &g, &mut opt, 0.001).unwrap();
        }
        let last = agent.critic_loss(&batch).unwrap().loss;
        assert!(last < first * 0.01, "{first} -> {last}");
    }

    #[test]
    fn exploration_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let agent = Agent::<f64>::new(PriorSource::Table.prior(Trait::Openness), small_config(8), 2).unwrap();
        let o = random_observation(&mut rng);
        let greedy = agent.act(&o).unwrap();
        assert_eq!(agent.explore(&o, 0.0, &mut rng).unwrap(), greedy);
        for sigma in [0.01, 0.1, 1.0, 5.0] {
            let a = agent.explore(&o, sigma, &mut rng).unwrap();
            assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| agent.explore(&o, 0.3, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn strong_regularizer_pulls_actor_to_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for tr in Trait::ALL {
            let prior = PriorSource::Table.prior(tr);
            let config = AgentConfig {
                lambda: 100.0,
                ..small_config(16)
            };
            let mut agent = Agent::<f64>::new(prior, config, 5).unwrap();
            let batch = random_batch(64, &mut rng);
            let mut opt = AdamState::new(&agent.actor);
            // critic stays frozen at its random initialization
            for _ in 0..400 {
                let g = agent.actor_loss(&batch).unwrap().grads;
                adam_step(&mut agent.actor, &g, &mut opt, 0.004).unwrap();
            }
            let obs = observations::<f64>(batch.iter().map(|t| t.observation));
            let mean = neural::column_means(&agent.actor.forward_batch(obs.view()).unwrap());
            let gap = mean.iter().zip(prior.weights()).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);
            assert!(gap < 0.05, "{tr:?}: {gap}");
        }
    }

    #[test]
    fn training_logs_one_record_per_iteration() {
        let data = Arc::new(MarketData::synthetic(1, 41).unwrap());
        let env_config = EnvConfig {
            months: 40,
            ..EnvConfig::default()
        };
        let mut env = Env::new(env_config, data).unwrap();
        let mut agent = Agent::<f64>::new(PriorSource::Table.prior(Trait::Openness), small_config(8), 1).unwrap();
        let log = agent.train(&mut env, 7).unwrap();
        assert_eq!(log.len(), 7);
        assert_eq!(log.records.iter().map(|r| r.iteration).collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
        // 16 steps per iteration over 40-month episodes: the first finishes in iteration 3
        assert_eq!(log.records[1].mean_return, 0.0);
        assert_ne!(log.records[2].mean_return, 0.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        assert_eq!(TrainingLog::read_csv(&path).unwrap(), log);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("iteration,L,actor_loss,critic_loss,mean_return\n"));
    }

    #[test]
    fn agent_round_trips_through_checkpoints() {
        let agent = Agent::<f64>::new(PriorSource::Table.prior(Trait::Conscientiousness), small_config(8), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path(), "conscientiousness").unwrap();
        let (back, manifest) = Agent::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.actor.to_flat(), agent.actor.to_flat());
        assert_eq!(back.critic_target.to_flat(), agent.critic_target.to_flat());
        assert_eq!(manifest.seed, 17);
        assert_eq!(manifest.prior, agent.prior);
    }

    #[test]
    fn sigma_schedule_is_linear() {
        let c = AgentConfig::default();
        assert_eq!(c.sigma_at(0, 11), c.exploration_sigma);
        assert!((c.sigma_at(10, 11) - c.exploration_sigma_final).abs() < 1e-15);
        let mid = c.sigma_at(5, 11);
        assert!((mid - (c.exploration_sigma + c.exploration_sigma_final) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn smoothing_is_a_trailing_mean() {
        assert_eq!(smooth(&[4.0, 2.0, 6.0, 0.0], 2), vec![4.0, 3.0, 4.0, 3.0]);
        assert_eq!(smooth(&[1.0, 2.0], 1), vec![1.0, 2.0]);
    }
}
