//! Turn simulation.
//!
//! One turn runs these phases in order: place the player's entity, spawn,
//! move, apply defender damage, check for a breach. `turn` then advances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::board::{Board, TileType};
use super::pathing::{distance_field, distance_field_with_block, neighbour, NEIGHBOURS, UNREACHABLE};
use crate::error::{BoardError, GameError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub base_hp: u32,
    /// Turns per +1 HP on newly spawned attackers.
    pub hp_growth_interval: u32,
    /// Turns between spawns at each source.
    pub spawn_period: u32,
    pub defender_damage: u32,
    /// Chebyshev radius.
    pub defender_range: u32,
    pub max_turns: u32,
    /// Spawn with probability `1 / spawn_period` per source per turn instead of on a fixed cadence.
    pub stochastic_spawn: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            base_hp: 3,
            hp_growth_interval: 10,
            spawn_period: 3,
            defender_damage: 1,
            defender_range: 1,
            max_turns: 200,
            stochastic_spawn: false,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        let fields = [
            ("base_hp", self.base_hp),
            ("hp_growth_interval", self.hp_growth_interval),
            ("spawn_period", self.spawn_period),
            ("defender_damage", self.defender_damage),
            ("defender_range", self.defender_range),
            ("max_turns", self.max_turns),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(GameError::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Entity {
    Defender,
    Slow,
    Block,
}

impl Entity {
    pub const ALL: [Entity; 3] = [Entity::Defender, Entity::Slow, Entity::Block];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn tile(self) -> TileType {
        match self {
            Entity::Defender => TileType::Defender,
            Entity::Slow => TileType::Slow,
            Entity::Block => TileType::Block,
        }
    }

    pub fn blocks_movement(self) -> bool {
        !matches!(self, Entity::Slow)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action {
    pub entity: Entity,
    pub x: usize,
    pub y: usize,
}

impl Action {
    pub fn new(entity: Entity, x: usize, y: usize) -> Self {
        Self { entity, x, y }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attacker {
    pub x: usize,
    pub y: usize,
    pub hp: u32,
    /// Turns left to wait before moving again (set on entering a Slow tile).
    pub slow_delay: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TurnEvents {
    pub spawned: u32,
    pub slain: u32,
    pub breached: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameState {
    board: Board,
    config: GameConfig,
    attackers: Vec<Attacker>,
    turn: u32,
    slain: u32,
    breached: bool,
    rng: ChaCha8Rng,
}

impl GameState {
    /// Starts a game. The board must be valid and every Source must reach Home.
    pub fn new(board: Board, config: GameConfig, seed: u64) -> Result<Self, BoardError> {
        board.validate()?;
        let field = distance_field(&board);
        if let Some((x, y)) = board.sources().into_iter().find(|&(x, y)| !field.is_reachable(x, y)) {
            return Err(BoardError::SourceDisconnected { x, y });
        }
        Ok(Self {
            board,
            config,
            attackers: Vec::new(),
            turn: 0,
            slain: 0,
            breached: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn attackers(&self) -> &[Attacker] {
        &self.attackers
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn slain(&self) -> u32 {
        self.slain
    }

    /// Score of the episode so far: attackers slain.
    pub fn score(&self) -> u32 {
        self.slain
    }

    pub fn breached(&self) -> bool {
        self.breached
    }

    pub fn is_terminal(&self) -> bool {
        self.breached || self.turn >= self.config.max_turns
    }

    pub fn action_count(&self) -> usize {
        3 * self.board.len()
    }

    fn occupied(&self) -> Vec<bool> {
        let mut occ = vec![false; self.board.len()];
        for a in &self.attackers {
            occ[self.board.index(a.x, a.y)] = true;
        }
        occ
    }

    /// Tiles that must keep a path to Home: every Source and every living attacker.
    fn anchors(&self) -> Vec<usize> {
        let mut anchors: Vec<usize> = self.board.sources().iter().map(|&(x, y)| self.board.index(x, y)).collect();
        anchors.extend(self.attackers.iter().map(|a| self.board.index(a.x, a.y)));
        anchors.sort_unstable();
        anchors.dedup();
        anchors
    }

    /// Mask over `entity * W * H + y * W + x`. All false once the game is over.
    pub fn legal_actions(&self) -> Vec<bool> {
        let n = self.board.len();
        let mut mask = vec![false; 3 * n];
        if self.is_terminal() {
            return mask;
        }
        let occupied = self.occupied();
        let anchors = self.anchors();
        for i in 0..n {
            if self.board.get_index(i) != TileType::Neutral || occupied[i] {
                continue;
            }
            mask[Entity::Slow.ordinal() * n + i] = true;
            if self.blocking_keeps_paths(i, &anchors) {
                mask[Entity::Defender.ordinal() * n + i] = true;
                mask[Entity::Block.ordinal() * n + i] = true;
            }
        }
        mask
    }

    fn blocking_keeps_paths(&self, tile: usize, anchors: &[usize]) -> bool {
        let field = distance_field_with_block(&self.board, Some(tile));
        anchors.iter().all(|&a| field.at_index(a) != UNREACHABLE)
    }

    pub fn is_legal(&self, action: &Action) -> bool {
        if !self.board.in_bounds(action.x, action.y) || self.is_terminal() {
            return false;
        }
        let i = self.board.index(action.x, action.y);
        if self.board.get_index(i) != TileType::Neutral || self.occupied()[i] {
            return false;
        }
        !action.entity.blocks_movement() || self.blocking_keeps_paths(i, &self.anchors())
    }

    /// Applies one player action and advances the game a turn. Returns the
    /// reward (attackers slain this turn). On error the state is unchanged.
    pub fn apply(&mut self, action: Action) -> Result<(TurnEvents, u32), GameError> {
        if self.is_terminal() {
            return Err(GameError::GameOver);
        }
        if !self.is_legal(&action) {
            return Err(GameError::IllegalAction(format!(
                "{:?} at ({}, {})",
                action.entity, action.x, action.y
            )));
        }
        let mut events = TurnEvents::default();

        self.board.set(action.x, action.y, action.entity.tile());

        let hp = self.config.base_hp + self.turn / self.config.hp_growth_interval;
        for (x, y) in self.board.sources() {
            let due = if self.config.stochastic_spawn {
                self.rng.gen_range(0..self.config.spawn_period) == 0
            } else {
                self.turn % self.config.spawn_period == 0
            };
            if due {
                self.attackers.push(Attacker { x, y, hp, slow_delay: 0 });
                events.spawned += 1;
            }
        }

        let field = distance_field(&self.board);
        for a in &mut self.attackers {
            if a.slow_delay > 0 {
                a.slow_delay -= 1;
                continue;
            }
            let here = field.at_index(self.board.index(a.x, a.y));
            let mut best: Option<(u32, usize, usize)> = None;
            for step in NEIGHBOURS {
                if let Some((nx, ny)) = neighbour(&self.board, a.x, a.y, step) {
                    let d = field.at_index(self.board.index(nx, ny));
                    if d != UNREACHABLE && best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, nx, ny));
                    }
                }
            }
            if let Some((d, nx, ny)) = best {
                if d < here {
                    a.x = nx;
                    a.y = ny;
                    if self.board.get(nx, ny) == TileType::Slow {
                        a.slow_delay = 1;
                    }
                }
            }
        }

        let range = self.config.defender_range as isize;
        let (w, h) = (self.board.width() as isize, self.board.height() as isize);
        for a in &mut self.attackers {
            let mut in_range = 0u32;
            for dy in -range..=range {
                for dx in -range..=range {
                    let (x, y) = (a.x as isize + dx, a.y as isize + dy);
                    if x >= 0 && y >= 0 && x < w && y < h && self.board.get(x as usize, y as usize) == TileType::Defender {
                        in_range += 1;
                    }
                }
            }
            a.hp = a.hp.saturating_sub(in_range * self.config.defender_damage);
        }
        let before = self.attackers.len();
        self.attackers.retain(|a| a.hp > 0);
        events.slain = (before - self.attackers.len()) as u32;
        self.slain += events.slain;

        let board = &self.board;
        if self.attackers.iter().any(|a| board.get(a.x, a.y) == TileType::Home) {
            self.breached = true;
            events.breached = true;
        }
        self.turn += 1;
        Ok((events.clone(), events.slain))
    }

    #[cfg(test)]
    pub(crate) fn set_attackers_for_test(&mut self, attackers: Vec<Attacker>) {
        self.attackers = attackers;
    }

    /// Functional form of [`GameState::apply`].
    pub fn step(&self, action: Action) -> Result<(GameState, TurnEvents, u32), GameError> {
        let mut next = self.clone();
        let (events, reward) = next.apply(action)?;
        Ok((next, events, reward))
    }
}

/// Starts a game; see [`GameState::new`].
pub fn new_game(board: Board, config: GameConfig, seed: u64) -> Result<GameState, BoardError> {
    GameState::new(board, config, seed)
}
