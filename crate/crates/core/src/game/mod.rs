//! Attackers and Defenders: a deterministic grid tower-defense simulation.

pub mod board;
pub mod engine;
pub mod pathing;

pub use board::{Board, TileType};
pub use engine::{new_game, Action, Attacker, Entity, GameConfig, GameState, TurnEvents};
pub use pathing::{distance_field, DistanceField};
