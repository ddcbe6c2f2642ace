//! Breadth-first distance-to-Home fields over 4-connected passable tiles.

use std::collections::VecDeque;

use super::board::{Board, TileType};

pub const UNREACHABLE: u32 = u32::MAX;

/// Step offsets in tie-break order: North, East, South, West.
pub const NEIGHBOURS: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn get(&self, x: usize, y: usize) -> Option<u32> {
        match self.dist[y * self.width + x] {
            UNREACHABLE => None,
            d => Some(d),
        }
    }

    pub fn raw(&self) -> &[u32] {
        &self.dist
    }

    pub fn at_index(&self, index: usize) -> u32 {
        self.dist[index]
    }

    pub fn is_reachable(&self, x: usize, y: usize) -> bool {
        self.dist[y * self.width + x] != UNREACHABLE
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

pub fn neighbour(board: &Board, x: usize, y: usize, (dx, dy): (isize, isize)) -> Option<(usize, usize)> {
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    if nx < 0 || ny < 0 || nx >= board.width() as isize || ny >= board.height() as isize {
        None
    } else {
        Some((nx as usize, ny as usize))
    }
}

/// Shortest step count to the Home tile; Block/Defender tiles are unreachable.
/// With several Home tiles the nearest one counts.
pub fn distance_field(board: &Board) -> DistanceField {
    distance_field_with_block(board, None)
}

/// Same as [`distance_field`] but treating one extra tile index as impassable.
pub fn distance_field_with_block(board: &Board, blocked: Option<usize>) -> DistanceField {
    let (w, h) = (board.width(), board.height());
    let mut dist = vec![UNREACHABLE; w * h];
    let mut queue = VecDeque::new();
    for (i, &t) in board.tiles().iter().enumerate() {
        if t == TileType::Home && Some(i) != blocked {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let next = dist[i] + 1;
        for step in NEIGHBOURS {
            if let Some((nx, ny)) = neighbour(board, x, y, step) {
                let j = ny * w + nx;
                if dist[j] == UNREACHABLE && Some(j) != blocked && board.get_index(j).is_passable() {
                    dist[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    DistanceField { width: w, height: h, dist }
}
