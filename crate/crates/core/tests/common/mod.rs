//! Test-only oracles shared by the integration suites.
//!
//! `RefSim` is a deliberately naive re-implementation of the game rules on a
//! `Vec<Vec<char>>` grid: distances come from repeated relaxation instead of
//! BFS, legality from a flood fill per anchor. It shares no code with the
//! engine.

#![allow(dead_code)]

pub mod episodes;
pub mod fd;

use rand::Rng;

pub const INF: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefAttacker {
    pub x: usize,
    pub y: usize,
    pub hp: u32,
    pub delay: u8,
}

#[derive(Clone, Debug)]
pub struct RefRules {
    pub base_hp: u32,
    pub hp_growth_interval: u32,
    pub spawn_period: u32,
    pub defender_damage: u32,
    pub defender_range: u32,
    pub max_turns: u32,
}

#[derive(Clone, Debug)]
pub struct RefSim {
    pub grid: Vec<Vec<char>>,
    pub rules: RefRules,
    pub attackers: Vec<RefAttacker>,
    pub turn: u32,
    pub slain: u32,
    pub breached: bool,
}

fn passable(c: char) -> bool {
    c != '#' && c != 'D'
}

impl RefSim {
    pub fn from_text(text: &str, rules: RefRules) -> Self {
        let grid = text.lines().skip(1).filter(|l| !l.is_empty()).map(|l| l.chars().collect()).collect();
        Self { grid, rules, attackers: Vec::new(), turn: 0, slain: 0, breached: false }
    }

    pub fn w(&self) -> usize {
        self.grid[0].len()
    }

    pub fn h(&self) -> usize {
        self.grid.len()
    }

    /// Distances by Bellman-Ford style relaxation until nothing changes.
    pub fn distances(grid: &[Vec<char>]) -> Vec<Vec<u32>> {
        let h = grid.len();
        let w = grid[0].len();
        let mut d = vec![vec![INF; w]; h];
        for y in 0..h {
            for x in 0..w {
                if grid[y][x] == 'H' {
                    d[y][x] = 0;
                }
            }
        }
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    if !passable(grid[y][x]) {
                        continue;
                    }
                    let mut best = d[y][x];
                    let cand = [
                        if y > 0 { d[y - 1][x] } else { INF },
                        if x + 1 < w { d[y][x + 1] } else { INF },
                        if y + 1 < h { d[y + 1][x] } else { INF },
                        if x > 0 { d[y][x - 1] } else { INF },
                    ];
                    for c in cand {
                        if c != INF && c + 1 < best {
                            best = c + 1;
                        }
                    }
                    if best != d[y][x] {
                        d[y][x] = best;
                        changed = true;
                    }
                }
            }
            if !changed {
                return d;
            }
        }
    }

    /// Flood fill from (sx, sy) through passable tiles; true if a Home is reached.
    pub fn reaches_home(grid: &[Vec<char>], sx: usize, sy: usize) -> bool {
        let h = grid.len();
        let w = grid[0].len();
        let mut seen = vec![vec![false; w]; h];
        let mut stack = vec![(sx, sy)];
        while let Some((x, y)) = stack.pop() {
            if seen[y][x] || !passable(grid[y][x]) {
                continue;
            }
            seen[y][x] = true;
            if grid[y][x] == 'H' {
                return true;
            }
            if x > 0 {
                stack.push((x - 1, y));
            }
            if y > 0 {
                stack.push((x, y - 1));
            }
            if x + 1 < w {
                stack.push((x + 1, y));
            }
            if y + 1 < h {
                stack.push((x, y + 1));
            }
        }
        false
    }

    pub fn over(&self) -> bool {
        self.breached || self.turn >= self.rules.max_turns
    }

    /// Legality per (entity ordinal, x, y), entity ordinals Defender=0, Slow=1, Block=2.
    pub fn legal(&self, entity: usize, x: usize, y: usize) -> bool {
        if self.over() || self.grid[y][x] != '.' {
            return false;
        }
        if self.attackers.iter().any(|a| a.x == x && a.y == y) {
            return false;
        }
        if entity == 1 {
            return true;
        }
        let mut g = self.grid.clone();
        g[y][x] = '#';
        for yy in 0..self.h() {
            for xx in 0..self.w() {
                if g[yy][xx] == 'S' && !Self::reaches_home(&g, xx, yy) {
                    return false;
                }
            }
        }
        self.attackers.iter().all(|a| Self::reaches_home(&g, a.x, a.y))
    }

    pub fn legal_mask(&self) -> Vec<bool> {
        let (w, h) = (self.w(), self.h());
        let mut m = vec![false; 3 * w * h];
        for e in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    m[e * w * h + y * w + x] = self.legal(e, x, y);
                }
            }
        }
        m
    }

    /// Returns reward; panics on illegal moves (callers only pass legal ones).
    pub fn play(&mut self, entity: usize, x: usize, y: usize) -> u32 {
        assert!(self.legal(entity, x, y));
        self.grid[y][x] = ['D', 's', '#'][entity];

        if self.turn % self.rules.spawn_period == 0 {
            let hp = self.rules.base_hp + self.turn / self.rules.hp_growth_interval;
            for yy in 0..self.h() {
                for xx in 0..self.w() {
                    if self.grid[yy][xx] == 'S' {
                        self.attackers.push(RefAttacker { x: xx, y: yy, hp, delay: 0 });
                    }
                }
            }
        }

        let d = Self::distances(&self.grid);
        let (w, h) = (self.w(), self.h());
        for a in self.attackers.iter_mut() {
            if a.delay > 0 {
                a.delay -= 1;
                continue;
            }
            let here = d[a.y][a.x];
            // candidate order N, E, S, W; first strictly smallest wins
            let mut options: Vec<(usize, usize)> = Vec::new();
            if a.y > 0 {
                options.push((a.x, a.y - 1));
            }
            if a.x + 1 < w {
                options.push((a.x + 1, a.y));
            }
            if a.y + 1 < h {
                options.push((a.x, a.y + 1));
            }
            if a.x > 0 {
                options.push((a.x - 1, a.y));
            }
            let mut pick: Option<(usize, usize)> = None;
            for (ox, oy) in options {
                let od = d[oy][ox];
                if od == INF {
                    continue;
                }
                match pick {
                    Some((px, py)) if d[py][px] <= od => {}
                    _ => pick = Some((ox, oy)),
                }
            }
            if let Some((px, py)) = pick {
                if d[py][px] < here {
                    a.x = px;
                    a.y = py;
                    if self.grid[py][px] == 's' {
                        a.delay = 1;
                    }
                }
            }
        }

        let r = self.rules.defender_range as i64;
        for a in self.attackers.iter_mut() {
            let mut dmg = 0;
            for yy in 0..h {
                for xx in 0..w {
                    if self.grid[yy][xx] == 'D' {
                        let cheb = (xx as i64 - a.x as i64).abs().max((yy as i64 - a.y as i64).abs());
                        if cheb <= r {
                            dmg += self.rules.defender_damage;
                        }
                    }
                }
            }
            a.hp = if dmg >= a.hp { 0 } else { a.hp - dmg };
        }
        let mut reward = 0;
        let mut alive = Vec::new();
        for a in self.attackers.drain(..) {
            if a.hp == 0 {
                reward += 1;
            } else {
                alive.push(a);
            }
        }
        self.attackers = alive;
        self.slain += reward;
        if self.attackers.iter().any(|a| self.grid[a.y][a.x] == 'H') {
            self.breached = true;
        }
        self.turn += 1;
        reward
    }

    pub fn grid_text(&self) -> String {
        let mut s = format!("{} {}\n", self.w(), self.h());
        for row in &self.grid {
            s.extend(row.iter());
            s.push('\n');
        }
        s
    }
}

/// Random playable board text (W, H in 6..=max_side) with every source connected.
pub fn random_board_text<R: Rng>(rng: &mut R, max_side: usize) -> String {
    loop {
        let w = rng.gen_range(6..=max_side);
        let h = rng.gen_range(6..=max_side);
        let mut g = vec![vec!['.'; w]; h];
        for row in g.iter_mut() {
            for c in row.iter_mut() {
                let r: f64 = rng.gen();
                *c = if r < 0.15 {
                    '#'
                } else if r < 0.27 {
                    's'
                } else {
                    '.'
                };
            }
        }
        let (hx, hy) = (rng.gen_range(0..w), rng.gen_range(0..h));
        g[hy][hx] = 'H';
        let n_sources = rng.gen_range(1..=4);
        let mut placed = 0;
        while placed < n_sources {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            if g[y][x] != 'H' && g[y][x] != 'S' {
                g[y][x] = 'S';
                placed += 1;
            }
        }
        let ok = (0..h).all(|y| (0..w).all(|x| g[y][x] != 'S' || RefSim::reaches_home(&g, x, y)));
        if ok {
            let mut s = format!("{w} {h}\n");
            for row in &g {
                s.extend(row.iter());
                s.push('\n');
            }
            return s;
        }
    }
}
