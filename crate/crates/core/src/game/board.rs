use std::fmt;
use std::str::FromStr;

use crate::error::BoardError;

pub const MIN_SIDE: usize = 6;
pub const MAX_SOURCES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TileType {
    Neutral,
    Slow,
    Block,
    Home,
    Source,
    Defender,
}

impl TileType {
    pub const ALL: [TileType; 6] = [
        TileType::Neutral,
        TileType::Slow,
        TileType::Block,
        TileType::Home,
        TileType::Source,
        TileType::Defender,
    ];

    pub fn to_char(self) -> char {
        match self {
            TileType::Neutral => '.',
            TileType::Slow => 's',
            TileType::Block => '#',
            TileType::Home => 'H',
            TileType::Source => 'S',
            TileType::Defender => 'D',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => TileType::Neutral,
            's' => TileType::Slow,
            '#' => TileType::Block,
            'H' => TileType::Home,
            'S' => TileType::Source,
            'D' => TileType::Defender,
            _ => return None,
        })
    }

    /// Attackers may stand on and move through this tile.
    pub fn is_passable(self) -> bool {
        !matches!(self, TileType::Block | TileType::Defender)
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

/// A rectangular grid of tiles. `(x, y)` with `y` growing southwards.
///
/// The grid itself may hold any tile mix; [`Board::validate`] checks the
/// playable-board invariants.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Board {
    width: usize,
    height: usize,
    tiles: Vec<TileType>,
}

impl Board {
    pub fn new(width: usize, height: usize, tiles: Vec<TileType>) -> Result<Self, BoardError> {
        if width == 0 || height == 0 || tiles.len() != width * height {
            return Err(BoardError::Parse(format!(
                "{width}x{height} grid needs {} tiles, got {}",
                width * height,
                tiles.len()
            )));
        }
        Ok(Self { width, height, tiles })
    }

    pub fn filled(width: usize, height: usize, tile: TileType) -> Self {
        Self { width, height, tiles: vec![tile; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[TileType] {
        &self.tiles
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    pub fn get(&self, x: usize, y: usize) -> TileType {
        self.tiles[self.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, tile: TileType) {
        let i = self.index(x, y);
        self.tiles[i] = tile;
    }

    pub fn get_index(&self, index: usize) -> TileType {
        self.tiles[index]
    }

    pub fn set_index(&mut self, index: usize, tile: TileType) {
        self.tiles[index] = tile;
    }

    pub fn positions_of(&self, tile: TileType) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tiles
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t == tile)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn count(&self, tile: TileType) -> usize {
        self.tiles.iter().filter(|&&t| t == tile).count()
    }

    pub fn home(&self) -> Option<(usize, usize)> {
        let mut homes = self.positions_of(TileType::Home);
        let first = homes.next()?;
        match homes.next() {
            None => Some(first),
            Some(_) => None,
        }
    }

    pub fn sources(&self) -> Vec<(usize, usize)> {
        self.positions_of(TileType::Source).collect()
    }

    /// Structural invariants: size, exactly one Home, 1 to 4 Sources.
    /// Connectivity is checked when a game starts.
    pub fn validate(&self) -> Result<(), BoardError> {
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return Err(BoardError::TooSmall { width: self.width, height: self.height });
        }
        match self.count(TileType::Home) {
            0 => return Err(BoardError::NoHome),
            1 => {}
            _ => return Err(BoardError::MultipleHomes),
        }
        match self.count(TileType::Source) {
            0 => Err(BoardError::NoSource),
            n if n > MAX_SOURCES => Err(BoardError::TooManySources(n)),
            _ => Ok(()),
        }
    }

    /// Serializes to the text format: `W H`, then one line of tile characters per row.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.width, self.height);
        for row in self.tiles.chunks(self.width) {
            s.extend(row.iter().map(|t| t.to_char()));
            s.push('\n');
        }
        s
    }

    /// Parses consecutive boards, skipping blank lines between them.
    pub fn parse_many(text: &str) -> Result<Vec<Board>, BoardError> {
        let mut lines = text.lines().enumerate().peekable();
        let mut boards = Vec::new();
        loop {
            while matches!(lines.peek(), Some((_, l)) if l.trim().is_empty()) {
                lines.next();
            }
            let Some((line_no, header)) = lines.next() else { break };
            let (width, height) = parse_header(header, line_no)?;
            let mut tiles = Vec::with_capacity(width * height);
            for row in 0..height {
                let (n, line) = lines.next().ok_or_else(|| {
                    BoardError::Parse(format!("line {}: expected {height} rows, found {row}", line_no + 1))
                })?;
                let line = line.trim_end_matches('\r');
                if line.chars().count() != width {
                    return Err(BoardError::Parse(format!(
                        "line {}: expected {width} tiles, found {}",
                        n + 1,
                        line.chars().count()
                    )));
                }
                for c in line.chars() {
                    tiles.push(TileType::from_char(c).ok_or_else(|| {
                        BoardError::Parse(format!("line {}: unknown tile character {c:?}", n + 1))
                    })?);
                }
            }
            boards.push(Board::new(width, height, tiles)?);
        }
        Ok(boards)
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<(usize, usize), BoardError> {
    let bad = || BoardError::Parse(format!("line {}: expected `W H`, got {line:?}", line_no + 1));
    let mut parts = line.split_whitespace();
    let w = parts.next().ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?;
    let h = parts.next().ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?;
    if parts.next().is_some() || w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

impl FromStr for Board {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut boards = Board::parse_many(s)?;
        match boards.len() {
            1 => Ok(boards.pop().unwrap()),
            n => Err(BoardError::Parse(format!("expected one board, found {n}"))),
        }
    }
}

impl fmt::Display for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
