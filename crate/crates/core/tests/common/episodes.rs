//! Randomized engine episodes replayed step by step against `RefSim`.

use eccl_core::game::{new_game, Action, Entity, GameConfig, GameState};
use rand::Rng;

use super::{random_board_text, RefRules, RefSim};

pub fn rules_of(cfg: &GameConfig) -> RefRules {
    RefRules {
        base_hp: cfg.base_hp,
        hp_growth_interval: cfg.hp_growth_interval,
        spawn_period: cfg.spawn_period,
        defender_damage: cfg.defender_damage,
        defender_range: cfg.defender_range,
        max_turns: cfg.max_turns,
    }
}

pub fn compare_states(engine: &GameState, oracle: &RefSim) -> Result<(), String> {
    let ours: Vec<_> = engine.attackers().iter().map(|a| (a.x, a.y, a.hp, a.slow_delay)).collect();
    let theirs: Vec<_> = oracle.attackers.iter().map(|a| (a.x, a.y, a.hp, a.delay)).collect();
    let same = engine.board().to_text() == oracle.grid_text()
        && engine.turn() == oracle.turn
        && engine.slain() == oracle.slain
        && engine.breached() == oracle.breached
        && ours == theirs;
    if same {
        Ok(())
    } else {
        Err(format!(
            "turn {} vs {}: slain {} vs {}, attackers {ours:?} vs {theirs:?}\n{}\n{}",
            engine.turn(),
            oracle.turn,
            engine.slain(),
            oracle.slain,
            engine.board().to_text(),
            oracle.grid_text()
        ))
    }
}

/// One episode on a random board (side <= `max_side`) under random rules with
/// at most 30 turns, playing uniformly random legal actions.
pub fn compare_random_episode<R: Rng>(rng: &mut R, max_side: usize) -> Result<(), String> {
    let text = random_board_text(rng, max_side);
    let cfg = GameConfig {
        base_hp: rng.gen_range(1..=4),
        hp_growth_interval: rng.gen_range(1..=10),
        spawn_period: rng.gen_range(1..=4),
        defender_damage: rng.gen_range(1..=2),
        defender_range: rng.gen_range(1..=2),
        max_turns: rng.gen_range(1..=30),
        stochastic_spawn: false,
    };
    let board = text.parse().map_err(|e| format!("{e}"))?;
    let mut engine = new_game(board, cfg.clone(), rng.gen()).map_err(|e| e.to_string())?;
    let mut oracle = RefSim::from_text(&text, rules_of(&cfg));
    while !engine.is_terminal() {
        let mask = engine.legal_actions();
        if mask != oracle.legal_mask() {
            return Err(format!("legal masks differ at turn {}\n{text}", engine.turn()));
        }
        let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if legal.is_empty() {
            break;
        }
        let pick = legal[rng.gen_range(0..legal.len())];
        let n = engine.board().len();
        let (x, y) = engine.board().coords(pick % n);
        let entity = Entity::ALL[pick / n];
        let (_, r) = engine.apply(Action::new(entity, x, y)).map_err(|e| e.to_string())?;
        let expected = oracle.play(entity.ordinal(), x, y);
        if r != expected {
            return Err(format!("reward {r} vs {expected} at turn {}\n{text}", engine.turn()));
        }
        compare_states(&engine, &oracle)?;
    }
    if engine.is_terminal() != oracle.over() {
        return Err(format!("terminal flags differ\n{text}"));
    }
    Ok(())
}
