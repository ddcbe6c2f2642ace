//! The outer training loop: fetch maps, play them into the replay bank, train,
//! refit the loss network, evaluate, and stop on stalled evaluation scores.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{select_action, AgentConfig, DqnAgent, Experience, ReplayBank};
use crate::codec::{encode_state, index_to_action, masked_argmax};
use crate::constructive::{self, GenConfig};
use crate::error::CurriculumError;
use crate::evolution::{self, EvoConfig};
use crate::game::{new_game, Board, GameConfig};
use crate::loss_net::{group_by_map, record_map_loss, LossNet, LossNetConfig, MapLossRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "constructive")]
    ConstructiveOnly,
    #[serde(rename = "evolved")]
    EvolvedOnly,
    #[serde(rename = "mixed")]
    Mixed50,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [ScheduleKind::ConstructiveOnly, ScheduleKind::EvolvedOnly, ScheduleKind::Mixed50];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::ConstructiveOnly => "constructive",
            ScheduleKind::EvolvedOnly => "evolved",
            ScheduleKind::Mixed50 => "mixed",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown schedule `{s}` (expected constructive, evolved or mixed)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub bootstrap_count: usize,
    pub eval_every_maps: usize,
    pub eval_set_size: usize,
    /// Consecutive evaluations without a new best that end the run.
    pub patience_cycles: usize,
    pub max_maps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::EvolvedOnly,
            bootstrap_count: 50,
            eval_every_maps: 200,
            eval_set_size: 100,
            patience_cycles: 2,
            max_maps: 1500,
        }
    }
}

/// Every knob of one experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Write measured milliseconds to the metrics `wall_ms` column instead of 0.
    pub record_wall_clock: bool,
    pub game: GameConfig,
    pub agent: AgentConfig,
    pub loss_net: LossNetConfig,
    pub generator: GenConfig,
    pub evolution: EvoConfig,
    pub schedule: Schedule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let cfg_err = |e: &dyn fmt::Display| CurriculumError::Config(e.to_string());
        self.game.validate().map_err(|e| cfg_err(&e))?;
        self.agent.validate().map_err(|e| cfg_err(&e))?;
        self.loss_net.validate().map_err(|e| cfg_err(&e))?;
        self.generator.validate().map_err(|e| cfg_err(&e))?;
        self.evolution.validate().map_err(|e| cfg_err(&e))?;
        let s = &self.schedule;
        let n = self.agent.maps_per_cycle;
        if s.eval_every_maps == 0 || s.eval_set_size == 0 || s.patience_cycles == 0 || s.max_maps == 0 {
            return Err(CurriculumError::Config(
                "schedule.eval_every_maps, eval_set_size, patience_cycles and max_maps must be positive".into(),
            ));
        }
        if s.bootstrap_count % n != 0 || s.eval_every_maps % n != 0 || s.max_maps % n != 0 {
            return Err(CurriculumError::Config(format!(
                "schedule.bootstrap_count, eval_every_maps and max_maps must be multiples of agent.maps_per_cycle ({n})"
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over `(seed, stream, index)`.
pub fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const BOOTSTRAP_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const AGENT_STREAM: u64 = 3;
const LOSS_NET_STREAM: u64 = 4;
const TRAIN_STREAM: u64 = 5;
const CONSTRUCTIVE_STREAM: u64 = 6;
const EVOLVE_STREAM: u64 = 7;
const PLAY_STREAM: u64 = 8;

pub fn bootstrap_maps(cfg: &ExperimentConfig) -> Result<Vec<Board>, CurriculumError> {
    let seed = stream_seed(cfg.master_seed, BOOTSTRAP_STREAM, 0);
    constructive::generate(cfg.schedule.bootstrap_count.max(1), seed, &cfg.generator)
        .map(|mut v| {
            v.truncate(cfg.schedule.bootstrap_count);
            v
        })
        .map_err(|e| generator_error(cfg.schedule.kind, e))
}

/// Seed of the evaluation board set for `master_seed`.
pub fn eval_board_seed(master_seed: u64) -> u64 {
    stream_seed(master_seed, EVAL_STREAM, 0)
}

/// Base seed of the evaluation games for `master_seed`.
pub fn eval_game_seed(master_seed: u64) -> u64 {
    stream_seed(master_seed, EVAL_STREAM, 1)
}

pub fn eval_maps(cfg: &ExperimentConfig) -> Result<Vec<Board>, CurriculumError> {
    let seed = eval_board_seed(cfg.master_seed);
    constructive::generate(cfg.schedule.eval_set_size, seed, &cfg.generator).map_err(|e| generator_error(cfg.schedule.kind, e))
}

fn generator_error(kind: ScheduleKind, e: impl std::error::Error + Send + Sync + 'static) -> CurriculumError {
    CurriculumError::Generator { schedule: kind.name().into(), source: Box::new(e) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapSource {
    Bootstrap,
    Constructive,
    Evolved,
}

/// Which generator supplies the batch starting at `maps_played`.
pub fn batch_source(kind: ScheduleKind, maps_played: usize, bootstrap_count: usize, batch: usize) -> MapSource {
    if maps_played < bootstrap_count {
        return MapSource::Bootstrap;
    }
    match kind {
        ScheduleKind::ConstructiveOnly => MapSource::Constructive,
        ScheduleKind::EvolvedOnly => MapSource::Evolved,
        ScheduleKind::Mixed50 if ((maps_played - bootstrap_count) / batch) % 2 == 0 => MapSource::Constructive,
        ScheduleKind::Mixed50 => MapSource::Evolved,
    }
}

#[derive(Clone, Debug)]
pub struct MapBatch {
    pub source: MapSource,
    pub boards: Vec<Board>,
    /// Evolution found too few feasible boards and constructive ones were substituted.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct PlayedMap {
    pub experiences: Vec<Experience>,
    pub score: u32,
}

/// One full episode under epsilon-greedy play. The episode also ends when no
/// placement is legal; that last transition is stored as terminal.
pub fn play_map<R: rand::Rng>(
    agent: &DqnAgent,
    board: &Board,
    game_cfg: &GameConfig,
    epsilon: f64,
    game_seed: u64,
    map_id: u64,
    rng: &mut R,
) -> Result<PlayedMap, CurriculumError> {
    let mut state = new_game(board.clone(), game_cfg.clone(), game_seed)?;
    let (w, h) = (board.width(), board.height());
    let mut encoded = Arc::new(encode_state(&state));
    let mut legal = Arc::new(state.legal_actions());
    let mut experiences = Vec::new();
    while !state.is_terminal() && legal.iter().any(|&l| l) {
        let q = agent.q(&encoded)?;
        let idx = select_action(&q, &legal, epsilon, rng).map_err(crate::error::AgentError::from)?;
        let (_, reward) = state.apply(index_to_action(idx, w, h).map_err(crate::error::AgentError::from)?)?;
        let next = Arc::new(encode_state(&state));
        let next_legal = Arc::new(if state.is_terminal() { vec![false; legal.len()] } else { state.legal_actions() });
        experiences.push(Experience {
            map_id,
            state: encoded,
            action: idx,
            reward,
            next_state: Arc::clone(&next),
            terminal: !next_legal.iter().any(|&l| l),
            next_legal: Arc::clone(&next_legal),
        });
        encoded = next;
        legal = next_legal;
    }
    Ok(PlayedMap { experiences, score: state.score() })
}

/// Greedy episode score. Pure in the agent.
pub fn greedy_score(agent: &DqnAgent, board: &Board, game_cfg: &GameConfig, game_seed: u64) -> Result<u32, CurriculumError> {
    let mut state = new_game(board.clone(), game_cfg.clone(), game_seed)?;
    let (w, h) = (board.width(), board.height());
    loop {
        if state.is_terminal() {
            break;
        }
        let legal = state.legal_actions();
        if !legal.iter().any(|&l| l) {
            break;
        }
        let q = agent.q(&encode_state(&state))?;
        let idx = masked_argmax(&q, &legal).map_err(crate::error::AgentError::from)?;
        let action = index_to_action(idx, w, h).map_err(crate::error::AgentError::from)?;
        state.apply(action)?;
    }
    Ok(state.score())
}

/// Mean greedy score over `boards`; board `i` is played with game seed
/// `stream_seed(game_seed, 0, i)`.
pub fn evaluate(agent: &DqnAgent, boards: &[Board], game_cfg: &GameConfig, game_seed: u64) -> Result<f64, CurriculumError> {
    if boards.is_empty() {
        return Err(CurriculumError::Config("evaluation needs at least one board".into()));
    }
    let mut total = 0u64;
    for (i, b) in boards.iter().enumerate() {
        total += u64::from(greedy_score(agent, b, game_cfg, stream_seed(game_seed, 0, i as u64))?);
    }
    Ok(total as f64 / boards.len() as f64)
}

/// Tracks the best evaluation score; ties are not improvements.
#[derive(Clone, Debug)]
pub struct Patience {
    limit: usize,
    best: Option<f64>,
    stale: usize,
}

impl Patience {
    pub fn new(limit: usize) -> Self {
        Self { limit, best: None, stale: 0 }
    }

    /// Records a score and reports whether the run should stop.
    pub fn observe(&mut self, score: f64) -> bool {
        match self.best {
            Some(b) if score <= b => self.stale += 1,
            _ => {
                self.best = Some(score);
                self.stale = 0;
            }
        }
        self.stale >= self.limit
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Index of the evaluation after which the run stops, if it does.
pub fn stopping_point(scores: &[f64], patience: usize) -> Option<usize> {
    let mut p = Patience::new(patience);
    scores.iter().position(|&s| p.observe(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
    Error,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
            Phase::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub maps_played: usize,
    pub phase: Phase,
    pub mean_cycle_loss: Option<f64>,
    pub eval_score: Option<f64>,
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "maps_played,phase,mean_cycle_loss,eval_score,schedule,seed,wall_ms";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.maps_played,
            r.phase.name(),
            opt(r.mean_cycle_loss),
            opt(r.eval_score),
            r.schedule,
            r.seed,
            r.wall_ms
        )?;
    }
    Ok(())
}

/// What one training cycle did, for protocol checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleLog {
    pub maps_played: usize,
    pub source: &'static str,
    pub ran: bool,
    pub batches: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub games_played: u64,
    pub mean_loss: Option<f64>,
    pub loss_records: usize,
    pub loss_net_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalPoint {
    pub maps_played: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxMaps,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub maps_played: usize,
    pub rows: Vec<MetricsRow>,
    pub cycles: Vec<CycleLog>,
    /// Evaluations in order; the first is the untrained baseline at 0 maps.
    pub evals: Vec<EvalPoint>,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
    /// Evolve calls that had to fall back to constructive maps.
    pub evolve_fallbacks: usize,
    /// Measured milliseconds per phase, regardless of the CSV setting.
    pub phase_ms: BTreeMap<String, u64>,
}

impl RunMetrics {
    /// Best post-baseline evaluation and the maps played when it was reached.
    pub fn peak(&self) -> Option<&EvalPoint> {
        self.evals
            .iter()
            .skip(1)
            .fold(None, |best: Option<&EvalPoint>, e| match best {
                Some(b) if e.score <= b.score => Some(b),
                _ => Some(e),
            })
    }

    pub fn cycle_losses(&self) -> Vec<f64> {
        self.cycles.iter().filter_map(|c| c.mean_loss).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_metrics_csv(&self.rows, out)
    }
}

/// A schedule in progress. [`run_schedule`] drives one to completion.
pub struct CurriculumRun {
    cfg: ExperimentConfig,
    agent: DqnAgent,
    bank: ReplayBank,
    loss_net: LossNet,
    rng: ChaCha8Rng,
    bootstrap: Vec<Board>,
    eval_boards: Vec<Board>,
    patience: Patience,
    metrics: RunMetrics,
    checkpoint_dir: Option<PathBuf>,
}

impl CurriculumRun {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CurriculumError> {
        cfg.validate()?;
        let (w, h) = (cfg.generator.width, cfg.generator.height);
        let seed = cfg.master_seed;
        let agent = DqnAgent::new(cfg.agent.clone(), w, h, stream_seed(seed, AGENT_STREAM, 0))?;
        let loss_net = LossNet::new(cfg.loss_net.clone(), w, h, stream_seed(seed, LOSS_NET_STREAM, 0))?;
        let bank = cfg.agent.new_bank();
        let bootstrap = bootstrap_maps(&cfg)?;
        let eval_boards = eval_maps(&cfg)?;
        let checkpoint_dir = cfg.output_dir.as_ref().map(|d| d.join("checkpoints"));
        let metrics = RunMetrics {
            schedule: cfg.schedule.kind,
            seed,
            maps_played: 0,
            rows: Vec::new(),
            cycles: Vec::new(),
            evals: Vec::new(),
            stop_reason: None,
            error: None,
            evolve_fallbacks: 0,
            phase_ms: BTreeMap::new(),
        };
        Ok(Self {
            patience: Patience::new(cfg.schedule.patience_cycles),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, TRAIN_STREAM, 0)),
            cfg,
            agent,
            bank,
            loss_net,
            bootstrap,
            eval_boards,
            metrics,
            checkpoint_dir,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &DqnAgent {
        &self.agent
    }

    pub fn bank(&self) -> &ReplayBank {
        &self.bank
    }

    pub fn loss_net(&self) -> &LossNet {
        &self.loss_net
    }

    pub fn eval_boards(&self) -> &[Board] {
        &self.eval_boards
    }

    pub fn bootstrap_boards(&self) -> &[Board] {
        &self.bootstrap
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn maps_played(&self) -> usize {
        self.metrics.maps_played
    }

    pub fn is_finished(&self) -> bool {
        self.metrics.stop_reason.is_some()
    }

    fn timed<T>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> T) -> (T, u64) {
        let start = Instant::now();
        let out = f(self);
        let ms = start.elapsed().as_millis() as u64;
        *self.metrics.phase_ms.entry(phase.to_string()).or_default() += ms;
        (out, ms)
    }

    fn csv_ms(&self, ms: u64) -> u64 {
        if self.cfg.record_wall_clock {
            ms
        } else {
            0
        }
    }

    /// The next batch of maps for the current position in the schedule.
    pub fn next_maps(&self) -> Result<MapBatch, CurriculumError> {
        let n = self.cfg.agent.maps_per_cycle;
        let played = self.metrics.maps_played;
        let s = &self.cfg.schedule;
        let source = batch_source(s.kind, played, s.bootstrap_count, n);
        let batch_index = ((played.saturating_sub(s.bootstrap_count)) / n) as u64;
        let seed = self.cfg.master_seed;
        let mut fallback = false;
        let boards = match source {
            MapSource::Bootstrap => self.bootstrap[played..played + n].to_vec(),
            MapSource::Constructive => {
                constructive::generate(n, stream_seed(seed, CONSTRUCTIVE_STREAM, batch_index), &self.cfg.generator)
                    .map_err(|e| generator_error(s.kind, e))?
            }
            MapSource::Evolved => {
                let snapshot = self.loss_net.clone();
                let out = evolution::evolve(
                    n,
                    &snapshot,
                    stream_seed(seed, EVOLVE_STREAM, batch_index),
                    &self.cfg.evolution,
                    &self.cfg.generator,
                )
                .map_err(|e| generator_error(s.kind, e))?;
                fallback = out.fallback;
                out.boards
            }
        };
        Ok(MapBatch { source, boards, fallback })
    }

    /// Scores the current greedy policy on the shared evaluation set.
    pub fn evaluate_now(&mut self) -> Result<f64, CurriculumError> {
        let game_seed = eval_game_seed(self.cfg.master_seed);
        let (score, ms) = self.timed("eval", |r| evaluate(&r.agent, &r.eval_boards, &r.cfg.game, game_seed));
        let score = score?;
        let wall_ms = self.csv_ms(ms);
        self.metrics.evals.push(EvalPoint { maps_played: self.metrics.maps_played, score });
        self.metrics.rows.push(MetricsRow {
            maps_played: self.metrics.maps_played,
            phase: Phase::Eval,
            mean_cycle_loss: None,
            eval_score: Some(score),
            schedule: self.cfg.schedule.kind,
            seed: self.cfg.master_seed,
            wall_ms,
        });
        self.write_checkpoints()?;
        Ok(score)
    }

    fn write_checkpoints(&self) -> Result<(), CurriculumError> {
        let Some(dir) = &self.checkpoint_dir else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        let m = self.metrics.maps_played;
        self.agent.save_checkpoint(&dir.join(format!("agent_{m:06}.ckpt")))?;
        self.loss_net.save(&dir.join(format!("loss_net_{m:06}.ckpt")))?;
        self.agent.save_checkpoint(&dir.join("agent_latest.ckpt"))?;
        self.loss_net.save(&dir.join("loss_net_latest.ckpt"))?;
        Ok(())
    }

    /// Plays one batch, runs one training cycle and refits the loss network.
    pub fn train_batch(&mut self) -> Result<&CycleLog, CurriculumError> {
        let (batch, gen_ms) = self.timed("generate", |r| r.next_maps());
        let MapBatch { source, boards, fallback } = batch?;
        if fallback {
            self.metrics.evolve_fallbacks += 1;
        }

        let start_id = self.metrics.maps_played as u64;
        let mut boards_by_id: HashMap<u64, Board> = HashMap::new();
        let (played, play_ms) = self.timed("play", |r| -> Result<(), CurriculumError> {
            for (k, board) in boards.iter().enumerate() {
                let map_id = start_id + k as u64;
                let eps = r.agent.epsilon();
                let game_seed = stream_seed(r.cfg.master_seed, PLAY_STREAM, map_id);
                let played = play_map(&r.agent, board, &r.cfg.game, eps, game_seed, map_id, &mut r.rng)?;
                for e in played.experiences {
                    r.bank.insert(e);
                }
                r.agent.record_game();
                r.metrics.maps_played += 1;
                boards_by_id.insert(map_id, board.clone());
            }
            Ok(())
        });
        played?;

        let (report, train_ms) = self.timed("train", |r| r.agent.train_cycle(&mut r.bank, &mut r.rng));
        let report = report?;

        let grouped = group_by_map(&report.per_sample);
        let mut ids: Vec<u64> = boards_by_id.keys().copied().collect();
        ids.sort_unstable();
        let records: Vec<MapLossRecord> = ids
            .iter()
            .filter_map(|id| grouped.get(id).and_then(|losses| record_map_loss(&boards_by_id[id], losses)))
            .collect();
        let (mse, loss_ms) = self.timed("loss_net", |r| {
            if records.is_empty() {
                Ok(None)
            } else {
                r.loss_net.train(&records, &mut r.rng).map(|rep| Some(rep.final_mse()))
            }
        });
        let mse = mse?;

        let mean_loss = report.ran.then_some(report.mean_loss);
        let wall_ms = self.csv_ms(gen_ms + play_ms + train_ms + loss_ms);
        self.metrics.rows.push(MetricsRow {
            maps_played: self.metrics.maps_played,
            phase: Phase::Train,
            mean_cycle_loss: mean_loss,
            eval_score: None,
            schedule: self.cfg.schedule.kind,
            seed: self.cfg.master_seed,
            wall_ms,
        });
        self.metrics.cycles.push(CycleLog {
            maps_played: self.metrics.maps_played,
            source: match source {
                MapSource::Bootstrap => "bootstrap",
                MapSource::Constructive => "constructive",
                MapSource::Evolved => "evolved",
            },
            ran: report.ran,
            batches: report.batches,
            batch_size: report.batch_size,
            beta: report.beta,
            games_played: self.agent.games_played(),
            mean_loss,
            loss_records: records.len(),
            loss_net_mse: mse,
        });
        Ok(self.metrics.cycles.last().expect("just pushed"))
    }

    /// One loop iteration: a training batch, then an evaluation when due.
    /// Returns `false` once the run has stopped.
    pub fn step(&mut self) -> Result<bool, CurriculumError> {
        if self.is_finished() {
            return Ok(false);
        }
        if self.metrics.evals.is_empty() {
            self.evaluate_now()?;
        }
        self.train_batch()?;
        let played = self.metrics.maps_played;
        let s = &self.cfg.schedule;
        let due = played % s.eval_every_maps == 0;
        let at_cap = played >= s.max_maps;
        if due || at_cap {
            let score = self.evaluate_now()?;
            if self.patience.observe(score) {
                self.metrics.stop_reason = Some(StopReason::Patience);
                return Ok(false);
            }
        }
        if at_cap {
            self.metrics.stop_reason = Some(StopReason::MaxMaps);
            return Ok(false);
        }
        Ok(true)
    }

    /// Runs to completion. Failures end the run with an error row.
    pub fn run(&mut self) -> &RunMetrics {
        loop {
            match self.step() {
                Ok(true) => {}
                Ok(false) => break,
                Err(e) => {
                    self.metrics.error = Some(e.to_string());
                    self.metrics.stop_reason = Some(StopReason::Error);
                    self.metrics.rows.push(MetricsRow {
                        maps_played: self.metrics.maps_played,
                        phase: Phase::Error,
                        mean_cycle_loss: None,
                        eval_score: None,
                        schedule: self.cfg.schedule.kind,
                        seed: self.cfg.master_seed,
                        wall_ms: 0,
                    });
                    break;
                }
            }
        }
        &self.metrics
    }

    pub fn into_parts(self) -> (RunMetrics, DqnAgent, LossNet) {
        (self.metrics, self.agent, self.loss_net)
    }
}

/// Runs `cfg` under `kind` with `master_seed`.
pub fn run_schedule(cfg: &ExperimentConfig, kind: ScheduleKind, master_seed: u64) -> Result<RunMetrics, CurriculumError> {
    let mut cfg = cfg.clone();
    cfg.schedule.kind = kind;
    cfg.master_seed = master_seed;
    let mut run = CurriculumRun::new(cfg)?;
    run.run();
    Ok(run.into_parts().0)
}

/// Writes `metrics.csv` into `dir`.
pub fn save_metrics(metrics: &RunMetrics, dir: &Path) -> Result<PathBuf, CurriculumError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("metrics.csv");
    let mut f = io::BufWriter::new(std::fs::File::create(&path)?);
    metrics.write_csv(&mut f)?;
    f.flush()?;
    Ok(path)
}
