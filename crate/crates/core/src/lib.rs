//! Evolutionarily curated curriculum learning for a grid tower-defense game:
//! the game engine, a double dueling DQN with prioritized replay, a board-to-loss
//! regressor, constructive and evolutionary map generators, and the training loop
//! that ties them together.

pub mod agent;
pub mod codec;
pub mod constraints;
pub mod constructive;
pub mod curriculum;
pub mod error;
pub mod evolution;
pub mod game;
pub mod loss_net;
pub mod nn;

pub use agent::{AgentConfig, CycleReport, DqnAgent, Experience, ReplayBank};
pub use constructive::GenConfig;
pub use curriculum::{
    run_schedule, CurriculumRun, ExperimentConfig, MetricsRow, RunMetrics, Schedule, ScheduleKind,
};
pub use error::{
    AgentError, BoardError, CodecError, CurriculumError, EvolveError, GameError, GenError, LossNetError, NnError,
};
pub use evolution::{EvoConfig, EvolveOutcome};
pub use game::{Action, Board, Entity, GameConfig, GameState, TileType};
pub use loss_net::{LossNet, LossNetConfig, LossOracle, MapLossRecord};
