//! Game state to network tensor, and action to flat index.

use crate::error::CodecError;
use crate::game::{Action, Board, Entity, GameState, TileType};
use crate::nn::Tensor;

pub const PLANES: usize = 9;
pub const HP_NORM: f32 = 10.0;
/// Upper clamp for the attacker planes.
pub const PLANE_CAP: f32 = 10.0;

const HP_PLANE: usize = 6;
const DELAY_PLANE: usize = 7;
const TURN_PLANE: usize = 8;

/// `[9, H, W]`: six one-hot tile planes, summed attacker hp / 10, slowed-attacker
/// count, and `turn / max_turns` broadcast over the board.
pub fn encode_state(state: &GameState) -> Tensor<f32> {
    let board = state.board();
    let (w, h) = (board.width(), board.height());
    let hw = w * h;
    let mut data = vec![0.0f32; PLANES * hw];
    for (i, &t) in board.tiles().iter().enumerate() {
        data[t.ordinal() * hw + i] = 1.0;
    }
    for a in state.attackers() {
        let i = board.index(a.x, a.y);
        data[HP_PLANE * hw + i] += a.hp as f32 / HP_NORM;
        if a.slow_delay > 0 {
            data[DELAY_PLANE * hw + i] += 1.0;
        }
    }
    for v in &mut data[HP_PLANE * hw..TURN_PLANE * hw] {
        *v = v.min(PLANE_CAP);
    }
    let turn = state.turn() as f32 / state.config().max_turns as f32;
    data[TURN_PLANE * hw..].fill(turn);
    Tensor::new(vec![PLANES, h, w], data).expect("plane layout")
}

/// Encoding of a board before play: tile planes only, attacker and turn planes zero.
/// Accepts boards that would fail game validation.
pub fn encode_board(board: &Board) -> Tensor<f32> {
    let (w, h) = (board.width(), board.height());
    let hw = w * h;
    let mut data = vec![0.0f32; PLANES * hw];
    for (i, &t) in board.tiles().iter().enumerate() {
        data[t.ordinal() * hw + i] = 1.0;
    }
    Tensor::new(vec![PLANES, h, w], data).expect("plane layout")
}

pub fn action_count(width: usize, height: usize) -> usize {
    Entity::ALL.len() * width * height
}

pub fn action_to_index(action: &Action, width: usize, height: usize) -> Result<usize, CodecError> {
    if action.x >= width || action.y >= height {
        return Err(CodecError::OutOfBounds { x: action.x, y: action.y, width, height });
    }
    Ok(action.entity.ordinal() * width * height + action.y * width + action.x)
}

pub fn index_to_action(index: usize, width: usize, height: usize) -> Result<Action, CodecError> {
    if index >= action_count(width, height) {
        return Err(CodecError::IndexOutOfRange { index, width, height });
    }
    let cell = index % (width * height);
    Ok(Action::new(Entity::ALL[index / (width * height)], cell % width, cell / width))
}

/// Copies `q` with illegal entries replaced by negative infinity.
pub fn mask_q(q: &[f32], legal: &[bool]) -> Result<Vec<f32>, CodecError> {
    if q.len() != legal.len() {
        return Err(CodecError::SizeMismatch { q: q.len(), mask: legal.len() });
    }
    if !legal.iter().any(|&l| l) {
        return Err(CodecError::NoLegalActions);
    }
    Ok(q.iter().zip(legal).map(|(&v, &l)| if l { v } else { f32::NEG_INFINITY }).collect())
}

/// Index of the largest legal Q-value; the lowest index wins ties.
pub fn masked_argmax(q: &[f32], legal: &[bool]) -> Result<usize, CodecError> {
    let masked = mask_q(q, legal)?;
    let mut best = None;
    for (i, (&v, &l)) in masked.iter().zip(legal).enumerate() {
        if l && best.map_or(true, |b: usize| v > masked[b]) {
            best = Some(i);
        }
    }
    Ok(best.expect("at least one legal action"))
}

/// Tile plane index for a tile type.
pub fn tile_plane(tile: TileType) -> usize {
    tile.ordinal()
}
