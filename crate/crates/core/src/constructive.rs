//! Undirected map sampling: density-guided proposals kept only when every
//! playability factor is satisfied.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::is_feasible;
use crate::error::GenError;
use crate::game::board::{MAX_SOURCES, MIN_SIDE};
use crate::game::{Board, TileType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub min_sources: usize,
    pub max_sources: usize,
    pub slow_density: f64,
    pub block_density: f64,
    /// Consecutive rejected proposals tolerated before giving up on a board.
    pub max_rejects: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: 10,
            height: 10,
            min_sources: 2,
            max_sources: 4,
            slow_density: 0.10,
            block_density: 0.12,
            max_rejects: 1000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::Config(m));
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return bad(format!("board must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}", self.width, self.height));
        }
        if self.min_sources < 1 || self.min_sources > self.max_sources || self.max_sources > MAX_SOURCES {
            return bad(format!(
                "source range {}..={} must lie within 1..={MAX_SOURCES}",
                self.min_sources, self.max_sources
            ));
        }
        for (name, d) in [("slow_density", self.slow_density), ("block_density", self.block_density)] {
            if !(0.0..0.5).contains(&d) {
                return bad(format!("{name} must be in [0, 0.5), got {d}"));
            }
        }
        Ok(())
    }
}

/// One unfiltered proposal: Home and Sources on distinct uniform cells, then each
/// remaining cell independently becomes Block or Slow by density.
pub fn propose<R: Rng>(cfg: &GenConfig, rng: &mut R) -> Board {
    let n = cfg.width * cfg.height;
    let sources = rng.gen_range(cfg.min_sources..=cfg.max_sources);
    let mut board = Board::filled(cfg.width, cfg.height, TileType::Neutral);
    let picks = sample(rng, n, sources + 1);
    for (k, cell) in picks.iter().enumerate() {
        board.set_index(cell, if k == 0 { TileType::Home } else { TileType::Source });
    }
    for i in 0..n {
        if board.get_index(i) != TileType::Neutral {
            continue;
        }
        let u: f64 = rng.gen();
        if u < cfg.block_density {
            board.set_index(i, TileType::Block);
        } else if u < cfg.block_density + cfg.slow_density {
            board.set_index(i, TileType::Slow);
        }
    }
    board
}

/// Draws one feasible board from `rng`.
pub fn sample_feasible<R: Rng>(cfg: &GenConfig, rng: &mut R) -> Result<Board, GenError> {
    for _ in 0..=cfg.max_rejects {
        let board = propose(cfg, rng);
        if is_feasible(&board) {
            return Ok(board);
        }
    }
    Err(GenError::TooManyRejects(cfg.max_rejects))
}

/// `count` feasible boards, deterministic in `seed`.
pub fn generate(count: usize, seed: u64, cfg: &GenConfig) -> Result<Vec<Board>, GenError> {
    if count == 0 {
        return Err(GenError::Config("count must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_feasible(cfg, &mut rng)).collect()
}
