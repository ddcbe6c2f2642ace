//! Double dueling DQN with prioritized replay.

pub mod network;
pub mod replay;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{AgentError, CodecError, NnError};
use crate::nn::{Checkpoint, Graph, NetworkParams, Tensor};

pub use network::{dueling_combine, q_forward, q_graph, q_values, QNetShape};
pub use replay::{Batch, Experience, Handle, ReplayBank, SumTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub replay_capacity: usize,
    pub alpha: f64,
    pub beta0: f64,
    pub beta_final: f64,
    pub beta_anneal_games: u64,
    pub batch_size: usize,
    pub batches_per_cycle: usize,
    pub maps_per_cycle: usize,
    pub priority_epsilon: f64,
    pub target_sync_cycles: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_games: u64,
    pub residual_blocks: usize,
    pub conv_filters: usize,
    pub value_hidden: usize,
    pub advantage_hidden: usize,
    pub lr: f64,
    pub huber_kappa: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            replay_capacity: 20_000,
            alpha: 0.6,
            beta0: 0.4,
            beta_final: 1.0,
            beta_anneal_games: 1000,
            batch_size: 32,
            batches_per_cycle: 250,
            maps_per_cycle: 5,
            priority_epsilon: 1e-3,
            target_sync_cycles: 1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_games: 500,
            residual_blocks: 3,
            conv_filters: 32,
            value_hidden: 64,
            advantage_hidden: 64,
            lr: 1e-4,
            huber_kappa: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.alpha < 0.0 {
            return bad("alpha must be non-negative");
        }
        if !(0.0 <= self.beta0 && self.beta0 <= self.beta_final && self.beta_final <= 1.0) {
            return bad("need 0 <= beta0 <= beta_final <= 1");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("replay_capacity must be at least batch_size, and batch_size positive");
        }
        if self.batches_per_cycle == 0 || self.maps_per_cycle == 0 || self.target_sync_cycles == 0 {
            return bad("batches_per_cycle, maps_per_cycle and target_sync_cycles must be positive");
        }
        if self.conv_filters == 0 || self.value_hidden == 0 || self.advantage_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.priority_epsilon <= 0.0 || self.lr <= 0.0 || self.huber_kappa <= 0.0 {
            return bad("priority_epsilon, lr and huber_kappa must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn net_shape(&self, width: usize, height: usize) -> QNetShape {
        QNetShape {
            width,
            height,
            blocks: self.residual_blocks,
            filters: self.conv_filters,
            value_hidden: self.value_hidden,
            advantage_hidden: self.advantage_hidden,
        }
    }

    pub fn new_bank(&self) -> ReplayBank {
        ReplayBank::new(self.replay_capacity, self.alpha, self.priority_epsilon)
    }
}

fn linear(start: f64, end: f64, games: u64, span: u64) -> f64 {
    if span == 0 || games >= span {
        return end;
    }
    start + (end - start) * games as f64 / span as f64
}

/// Importance-sampling exponent after `games` played.
pub fn beta_schedule(games: u64, cfg: &AgentConfig) -> f64 {
    linear(cfg.beta0, cfg.beta_final, games, cfg.beta_anneal_games)
}

/// Exploration rate after `games` played.
pub fn epsilon_schedule(games: u64, cfg: &AgentConfig) -> f64 {
    linear(cfg.epsilon_start, cfg.epsilon_end, games, cfg.epsilon_anneal_games)
}

/// Epsilon-greedy over legal actions. One uniform draw decides exploration;
/// exploring draws a second index uniformly from the legal set.
pub fn select_action<R: Rng>(q: &[f32], legal: &[bool], epsilon: f64, rng: &mut R) -> Result<usize, CodecError> {
    let greedy = codec::masked_argmax(q, legal)?;
    if rng.gen::<f64>() < epsilon {
        let choices: Vec<usize> = (0..legal.len()).filter(|&i| legal[i]).collect();
        return Ok(choices[rng.gen_range(0..choices.len())]);
    }
    Ok(greedy)
}

/// `r` if terminal, else `r + gamma * Q_target(s', argmax_legal Q_online(s', .))`.
pub fn double_q_target(
    reward: f32,
    terminal: bool,
    online_next: &[f32],
    target_next: &[f32],
    next_legal: &[bool],
    gamma: f32,
) -> Result<f32, CodecError> {
    if terminal {
        return Ok(reward);
    }
    let best = codec::masked_argmax(online_next, next_legal)?;
    Ok(reward + gamma * target_next[best])
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleReport {
    /// False when the bank was too small to fill one batch.
    pub ran: bool,
    pub batches: usize,
    pub batch_size: usize,
    /// Mean of the importance-weighted Huber objective over the cycle's batches.
    pub mean_loss: f64,
    /// `(map_id, |TD error|)` for every sampled experience.
    pub per_sample: Vec<(u64, f64)>,
    pub skipped_updates: usize,
    pub target_synced: bool,
    pub beta: f64,
}

#[derive(Clone, Debug)]
pub struct DqnAgent {
    cfg: AgentConfig,
    shape: QNetShape,
    online: NetworkParams<f32>,
    target: NetworkParams<f32>,
    cycles: u64,
    games_played: u64,
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, width: usize, height: usize, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let shape = cfg.net_shape(width, height);
        let online = network::build_params(&shape, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let target = online.clone();
        Ok(Self { cfg, shape, online, target, cycles: 0, games_played: 0 })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn shape(&self) -> &QNetShape {
        &self.shape
    }

    pub fn online(&self) -> &NetworkParams<f32> {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut NetworkParams<f32> {
        &mut self.online
    }

    pub fn target(&self) -> &NetworkParams<f32> {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut NetworkParams<f32> {
        &mut self.target
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn games_played(&self) -> u64 {
        self.games_played
    }

    pub fn record_game(&mut self) {
        self.games_played += 1;
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_schedule(self.games_played, &self.cfg)
    }

    pub fn beta(&self) -> f64 {
        beta_schedule(self.games_played, &self.cfg)
    }

    pub fn q(&self, state: &Tensor<f32>) -> Result<Vec<f32>, NnError> {
        q_forward(&self.online, &self.shape, state)
    }

    pub fn act<R: Rng>(&self, state: &Tensor<f32>, legal: &[bool], epsilon: f64, rng: &mut R) -> Result<usize, AgentError> {
        let q = self.q(state)?;
        Ok(select_action(&q, legal, epsilon, rng)?)
    }

    /// Double-Q targets for a batch of experiences.
    pub fn targets(&self, batch: &[&Experience]) -> Result<Vec<f32>, AgentError> {
        let gamma = self.cfg.gamma as f32;
        let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
        let mut out: Vec<f32> = batch.iter().map(|e| e.reward as f32).collect();
        if live.is_empty() {
            return Ok(out);
        }
        let next: Vec<&Tensor<f32>> = live.iter().map(|&i| batch[i].next_state.as_ref()).collect();
        let on = q_values(&self.online, &self.shape, &next)?;
        let tg = q_values(&self.target, &self.shape, &next)?;
        let a = self.shape.actions();
        for (row, &i) in live.iter().enumerate() {
            let e = batch[i];
            out[i] = double_q_target(
                e.reward as f32,
                false,
                &on.data()[row * a..(row + 1) * a],
                &tg.data()[row * a..(row + 1) * a],
                &e.next_legal,
                gamma,
            )?;
        }
        Ok(out)
    }

    /// One prioritized batch: forward, weighted Huber, backward, Adam, priority refresh.
    /// Returns the batch loss and the per-sample `|TD error|`.
    pub fn train_batch<R: Rng>(&mut self, bank: &mut ReplayBank, beta: f64, rng: &mut R) -> Result<(f64, Vec<(u64, f64)>, usize), AgentError> {
        let batch = bank.sample(self.cfg.batch_size, beta, rng)?;
        let exps: Vec<&Experience> = batch
            .handles
            .iter()
            .map(|h| bank.resolve(*h).expect("freshly sampled handle"))
            .collect();
        let targets = self.targets(&exps)?;
        let actions: Vec<usize> = exps.iter().map(|e| e.action).collect();
        let map_ids: Vec<u64> = exps.iter().map(|e| e.map_id).collect();
        let x = Tensor::stack(exps.iter().map(|e| e.state.as_ref()))?;

        let (loss, td, grads) = {
            let mut g = Graph::new(&self.online);
            let input = g.input(x);
            let q = q_graph(&mut g, input, &self.shape)?;
            let picked = g.gather(q, &actions)?;
            let loss = g.huber_loss(picked, &targets, &batch.weights, self.cfg.huber_kappa as f32)?;
            let td: Vec<f64> = g
                .value(picked)
                .data()
                .iter()
                .zip(&targets)
                .map(|(&p, &t)| (p - t).abs() as f64)
                .collect();
            let value = g.value(loss).data()[0] as f64;
            (value, td, g.backward(loss)?.into_params())
        };
        self.online.adam_step(&grads, self.cfg.lr)?;
        let skipped = bank.update_priorities(&batch.handles, &td);
        Ok((loss, map_ids.into_iter().zip(td).collect(), skipped))
    }

    /// `batches_per_cycle` batches, then a hard target sync every `target_sync_cycles` cycles.
    /// An underfull bank yields a report with `ran == false` and no changes.
    pub fn train_cycle<R: Rng>(&mut self, bank: &mut ReplayBank, rng: &mut R) -> Result<CycleReport, AgentError> {
        let beta = self.beta();
        let mut report = CycleReport { batch_size: self.cfg.batch_size, beta, ..CycleReport::default() };
        if bank.len() < self.cfg.batch_size {
            return Ok(report);
        }
        let mut total = 0.0;
        for _ in 0..self.cfg.batches_per_cycle {
            let (loss, samples, skipped) = self.train_batch(bank, beta, rng)?;
            total += loss;
            report.per_sample.extend(samples);
            report.skipped_updates += skipped;
            report.batches += 1;
        }
        report.ran = true;
        report.mean_loss = total / report.batches as f64;
        self.cycles += 1;
        if self.cycles % self.cfg.target_sync_cycles == 0 {
            self.target.copy_values_from(&self.online)?;
            report.target_synced = true;
        }
        Ok(report)
    }

    /// Online and target weights plus optimizer state. The replay bank is not saved.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_params("online.", &self.online);
        ck.push_params("target.", &self.target);
        ck.meta.insert("kind".into(), "dqn".into());
        ck.meta.insert("width".into(), self.shape.width.into());
        ck.meta.insert("height".into(), self.shape.height.into());
        ck.meta.insert("cycles".into(), self.cycles.into());
        ck.meta.insert("games_played".into(), self.games_played.into());
        ck.meta.insert("config".into(), serde_json::to_value(&self.cfg).expect("config serializes"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AgentError> {
        let meta_err = |k: &str| AgentError::Nn(NnError::ManifestMismatch(format!("checkpoint meta lacks `{k}`")));
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("dqn") {
            return Err(meta_err("kind = dqn"));
        }
        let dim = |k: &str| ck.meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| meta_err(k));
        let cfg: AgentConfig = serde_json::from_value(ck.meta.get("config").cloned().ok_or_else(|| meta_err("config"))?)
            .map_err(|e| AgentError::Config(e.to_string()))?;
        let mut agent = Self::new(cfg, dim("width")? as usize, dim("height")? as usize, 0)?;
        ck.load_params("online.", &mut agent.online)?;
        ck.load_params("target.", &mut agent.target)?;
        agent.cycles = dim("cycles")?;
        agent.games_played = dim("games_played")?;
        Ok(agent)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), AgentError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, AgentError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Loads and checks the network against an expected config and board size.
    pub fn load_checkpoint_for(path: &Path, cfg: &AgentConfig, width: usize, height: usize) -> Result<Self, AgentError> {
        let agent = Self::load_checkpoint(path)?;
        let want = cfg.net_shape(width, height);
        if agent.shape != want {
            return Err(AgentError::Nn(NnError::ManifestMismatch(format!(
                "checkpoint network {:?} does not match configured {want:?}",
                agent.shape
            ))));
        }
        Ok(agent)
    }
}
