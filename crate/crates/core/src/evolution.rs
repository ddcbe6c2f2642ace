//! Two-population genetic search over boards. The infeasible population climbs
//! constrained fitness; the feasible population maximizes predicted agent loss.

use std::collections::{HashMap, HashSet};
use std::io::{self, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::constrained_fitness;
use crate::constructive::{self, GenConfig};
use crate::error::EvolveError;
use crate::game::{Board, TileType};
use crate::loss_net::LossOracle;

/// Tile types a mutation may write. Defenders are placed during play only.
pub const MAP_TILES: [TileType; 5] =
    [TileType::Neutral, TileType::Slow, TileType::Block, TileType::Home, TileType::Source];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub pop_size_feasible: usize,
    pub pop_size_infeasible: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub elitism: usize,
    pub min_mutations: usize,
    pub max_mutations: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            pop_size_feasible: 50,
            pop_size_infeasible: 50,
            generations: 20,
            tournament_size: 3,
            elitism: 1,
            min_mutations: 1,
            max_mutations: 3,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |m: &str| Err(EvolveError::Config(m.into()));
        if self.pop_size_feasible == 0 || self.pop_size_infeasible == 0 {
            return bad("population sizes must be positive");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive");
        }
        if self.elitism >= self.pop_size_feasible.min(self.pop_size_infeasible) {
            return bad("elitism must be smaller than both population sizes");
        }
        if self.min_mutations == 0 || self.min_mutations > self.max_mutations {
            return bad("mutation range must satisfy 1 <= min_mutations <= max_mutations");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chromosome {
    pub grid: Board,
    constrained: Option<f64>,
    feasible: Option<f64>,
}

impl Chromosome {
    pub fn new(grid: Board) -> Self {
        Self { grid, constrained: None, feasible: None }
    }

    pub fn constrained(&mut self) -> f64 {
        *self.constrained.get_or_insert_with(|| constrained_fitness(&self.grid))
    }

    pub fn cached_constrained(&self) -> Option<f64> {
        self.constrained
    }

    pub fn cached_feasible(&self) -> Option<f64> {
        self.feasible
    }

    pub fn is_feasible(&mut self) -> bool {
        self.constrained() == 1.0
    }
}

/// Predicted loss clamped at zero. Only defined for feasible grids.
pub fn feasible_fitness(grid: &Board, oracle: &dyn LossOracle) -> Result<f64, EvolveError> {
    let c = constrained_fitness(grid);
    if c != 1.0 {
        return Err(EvolveError::Infeasible(c));
    }
    Ok(oracle.predict(grid).max(0.0))
}

/// Copy of `p1` with one uniformly sized and placed rectangle taken from `p2`.
pub fn crossover<R: Rng>(p1: &Chromosome, p2: &Chromosome, rng: &mut R) -> Chromosome {
    let (w, h) = (p1.grid.width(), p1.grid.height());
    assert_eq!((w, h), (p2.grid.width(), p2.grid.height()), "parents differ in size");
    let (rw, rh) = (rng.gen_range(1..=w), rng.gen_range(1..=h));
    let (x0, y0) = (rng.gen_range(0..=w - rw), rng.gen_range(0..=h - rh));
    let mut grid = p1.grid.clone();
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            grid.set(x, y, p2.grid.get(x, y));
        }
    }
    Chromosome::new(grid)
}

/// Rewrites `k` distinct cells, each to a uniformly chosen different map tile.
pub fn mutate_cells<R: Rng>(c: &Chromosome, k: usize, rng: &mut R) -> Chromosome {
    let mut grid = c.grid.clone();
    for cell in sample(rng, grid.len(), k.min(grid.len())).iter() {
        let old = grid.get_index(cell);
        let choices: Vec<TileType> = MAP_TILES.iter().copied().filter(|&t| t != old).collect();
        grid.set_index(cell, choices[rng.gen_range(0..choices.len())]);
    }
    Chromosome::new(grid)
}

pub fn mutate<R: Rng>(c: &Chromosome, cfg: &EvoConfig, rng: &mut R) -> Chromosome {
    let k = rng.gen_range(cfg.min_mutations..=cfg.max_mutations);
    mutate_cells(c, k, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_feasible: Option<f64>,
    pub mean_feasible: Option<f64>,
    pub best_constrained: Option<f64>,
    pub feasible_count: usize,
}

#[derive(Clone, Debug)]
pub struct EvolveOutcome {
    pub boards: Vec<Board>,
    /// Set when too few feasible boards existed and constructive ones were returned instead.
    pub fallback: bool,
    pub stats: Vec<GenerationStats>,
}

/// Writes per-generation stats as CSV; absent values are empty fields.
pub fn write_stats_csv<W: Write>(stats: &[GenerationStats], mut out: W) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(out, "generation,best_feasible,mean_feasible,best_constrained,feasible_count")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.generation,
            opt(s.best_feasible),
            opt(s.mean_feasible),
            opt(s.best_constrained),
            s.feasible_count
        )?;
    }
    Ok(())
}

struct Search<'a, R> {
    cfg: &'a EvoConfig,
    oracle: &'a dyn LossOracle,
    rng: R,
    /// Feasible fitness of every feasible grid evaluated so far.
    archive: HashMap<Board, f64>,
    feasible: Vec<Chromosome>,
    infeasible: Vec<Chromosome>,
}

impl<R: Rng> Search<'_, R> {
    /// Fills caches, with one batched oracle call for uncached feasible grids.
    fn evaluate(&mut self) {
        let mut pending: Vec<Board> = Vec::new();
        let mut queued = HashSet::new();
        for c in self.feasible.iter_mut().chain(self.infeasible.iter_mut()) {
            if c.is_feasible() && !self.archive.contains_key(&c.grid) && queued.insert(c.grid.clone()) {
                pending.push(c.grid.clone());
            }
        }
        if !pending.is_empty() {
            let preds = self.oracle.predict_many(&pending);
            for (b, p) in pending.into_iter().zip(preds) {
                self.archive.insert(b, p.max(0.0));
            }
        }
        for c in self.feasible.iter_mut().chain(self.infeasible.iter_mut()) {
            c.feasible = if c.is_feasible() { Some(self.archive[&c.grid]) } else { None };
        }
    }

    fn migrate(&mut self) {
        let (stay_f, to_inf): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.feasible).into_iter().partition(|c| c.feasible.is_some());
        let (to_f, stay_inf): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.infeasible).into_iter().partition(|c| c.feasible.is_some());
        self.feasible = stay_f.into_iter().chain(to_f).collect();
        self.infeasible = stay_inf.into_iter().chain(to_inf).collect();
    }

    fn stats(&self, generation: usize) -> GenerationStats {
        let fit: Vec<f64> = self.feasible.iter().filter_map(|c| c.feasible).collect();
        GenerationStats {
            generation,
            best_feasible: fit.iter().copied().reduce(f64::max),
            mean_feasible: (!fit.is_empty()).then(|| fit.iter().sum::<f64>() / fit.len() as f64),
            best_constrained: self.infeasible.iter().filter_map(|c| c.constrained).reduce(f64::max),
            feasible_count: fit.len(),
        }
    }

    fn tournament<'p>(&mut self, pop: &'p [Chromosome], score: fn(&Chromosome) -> f64) -> &'p Chromosome {
        let mut best = &pop[self.rng.gen_range(0..pop.len())];
        for _ in 1..self.cfg.tournament_size {
            let c = &pop[self.rng.gen_range(0..pop.len())];
            if score(c) > score(best) {
                best = c;
            }
        }
        best
    }

    /// Elites plus tournament-bred children, `size` in total. An empty source
    /// population borrows parents from `fallback`.
    fn breed(&mut self, pop: &[Chromosome], fallback: &[Chromosome], size: usize, score: fn(&Chromosome) -> f64) -> Vec<Chromosome> {
        let mut ranked: Vec<&Chromosome> = pop.iter().collect();
        ranked.sort_by(|a, b| score(b).total_cmp(&score(a)));
        let mut next: Vec<Chromosome> = ranked.iter().take(self.cfg.elitism).map(|&c| c.clone()).collect();
        let parents = if pop.is_empty() { fallback } else { pop };
        while next.len() < size {
            let a = self.tournament(parents, score);
            let b = self.tournament(parents, score);
            let child = crossover(a, b, &mut self.rng);
            next.push(mutate(&child, self.cfg, &mut self.rng));
        }
        next
    }

    fn generation(&mut self) {
        let feasible = std::mem::take(&mut self.feasible);
        let infeasible = std::mem::take(&mut self.infeasible);
        let by_loss = |c: &Chromosome| c.feasible.unwrap_or(0.0);
        let by_constraint = |c: &Chromosome| c.constrained.unwrap_or(0.0);
        self.feasible = self.breed(&feasible, &infeasible, self.cfg.pop_size_feasible, by_loss);
        self.infeasible = self.breed(&infeasible, &feasible, self.cfg.pop_size_infeasible, by_constraint);
    }
}

/// Runs the search and returns the `request_count` best distinct feasible grids
/// seen, ranked by predicted loss.
pub fn evolve(
    request_count: usize,
    oracle: &dyn LossOracle,
    seed: u64,
    cfg: &EvoConfig,
    gen_cfg: &GenConfig,
) -> Result<EvolveOutcome, EvolveError> {
    if request_count == 0 {
        return Err(EvolveError::Config("request_count must be at least 1".into()));
    }
    cfg.validate()?;
    gen_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feasible = constructive::generate(cfg.pop_size_feasible, rng.gen(), gen_cfg)?
        .into_iter()
        .map(Chromosome::new)
        .collect();
    let infeasible = (0..cfg.pop_size_infeasible)
        .map(|_| Chromosome::new(constructive::propose(gen_cfg, &mut rng)))
        .collect();
    let mut search = Search { cfg, oracle, rng, archive: HashMap::new(), feasible, infeasible };

    search.evaluate();
    search.migrate();
    let mut stats = vec![search.stats(0)];
    for g in 1..=cfg.generations {
        search.generation();
        search.evaluate();
        search.migrate();
        stats.push(search.stats(g));
    }

    let mut ranked: Vec<(Board, f64)> = search.archive.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut boards: Vec<Board> = ranked.into_iter().take(request_count).map(|(b, _)| b).collect();
    let fallback = boards.len() < request_count;
    if fallback {
        let extra = constructive::generate(request_count, search.rng.gen(), gen_cfg)?;
        for b in extra {
            if boards.len() == request_count {
                break;
            }
            if !boards.contains(&b) {
                boards.push(b);
            }
        }
    }
    Ok(EvolveOutcome { boards, fallback, stats })
}
