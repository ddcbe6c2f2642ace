//! Playability factors for raw grids. Each lies in `[0, 1]`; a grid is feasible
//! when all four are 1.
//!
//! Grids here need not satisfy [`Board::validate`]. A missing or repeated Home
//! zeroes every Home-based factor, and a Source count outside `1..=4` zeroes the
//! Source-based ones.

use crate::game::board::MAX_SOURCES;
use crate::game::{distance_field, Board, TileType};

fn valid_sources(grid: &Board) -> Option<Vec<(usize, usize)>> {
    let sources = grid.sources();
    (1..=MAX_SOURCES).contains(&sources.len()).then_some(sources)
}

/// Distinct quadrants holding a Source, divided by the Source count.
pub fn separate_quads(grid: &Board) -> f64 {
    let Some(sources) = valid_sources(grid) else { return 0.0 };
    let (mx, my) = (grid.width() / 2, grid.height() / 2);
    let mut seen = [false; 4];
    for &(x, y) in &sources {
        seen[usize::from(x >= mx) + 2 * usize::from(y >= my)] = true;
    }
    seen.iter().filter(|&&s| s).count() as f64 / sources.len() as f64
}

/// Fraction of Sources with a walkable route to Home.
pub fn home_paths(grid: &Board) -> f64 {
    if grid.home().is_none() {
        return 0.0;
    }
    let Some(sources) = valid_sources(grid) else { return 0.0 };
    let field = distance_field(grid);
    sources.iter().filter(|&&(x, y)| field.is_reachable(x, y)).count() as f64 / sources.len() as f64
}

/// Chebyshev radius around `(W/2, H/2)` within which Home counts as central.
pub fn center_radius(width: usize, height: usize) -> usize {
    width.min(height).div_ceil(4)
}

pub fn home_center(grid: &Board) -> f64 {
    let Some((hx, hy)) = grid.home() else { return 0.0 };
    let (cx, cy) = (grid.width() / 2, grid.height() / 2);
    let d = hx.abs_diff(cx).max(hy.abs_diff(cy));
    if d <= center_radius(grid.width(), grid.height()) {
        1.0
    } else {
        0.0
    }
}

/// 1 when none of the eight cells around Home is a Block.
pub fn home_blocks(grid: &Board) -> f64 {
    let Some((hx, hy)) = grid.home() else { return 0.0 };
    for y in hy.saturating_sub(1)..=(hy + 1).min(grid.height() - 1) {
        for x in hx.saturating_sub(1)..=(hx + 1).min(grid.width() - 1) {
            if grid.get(x, y) == TileType::Block {
                return 0.0;
            }
        }
    }
    1.0
}

/// All four factors, in the order quads, paths, center, blocks.
pub fn factors(grid: &Board) -> [f64; 4] {
    [separate_quads(grid), home_paths(grid), home_center(grid), home_blocks(grid)]
}

pub fn constrained_fitness(grid: &Board) -> f64 {
    factors(grid).iter().sum::<f64>() / 4.0
}

pub fn is_feasible(grid: &Board) -> bool {
    constrained_fitness(grid) == 1.0
}
