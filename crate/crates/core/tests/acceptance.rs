//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 3 4`.

mod common;

use std::sync::Arc;
use std::time::Instant;

use eccl_core::agent::network::{dueling_combine, q_forward};
use eccl_core::agent::{beta_schedule, double_q_target};
use eccl_core::codec::{self, encode_board};
use eccl_core::constraints::{constrained_fitness, factors, home_blocks, home_center, home_paths, separate_quads};
use eccl_core::constructive::generate;
use eccl_core::curriculum::{save_metrics, stopping_point, stream_seed, CurriculumRun, Patience};
use eccl_core::evolution::{evolve, EvoConfig};
use eccl_core::nn::{Graph, Tensor};
use eccl_core::{
    AgentConfig, Board, DqnAgent, Experience, ExperimentConfig, GameConfig, GenConfig, LossNet, LossNetConfig, LossOracle,
    ReplayBank, ScheduleKind, TileType,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn engine_matches_reference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let episodes = 1200;
    for i in 0..episodes {
        common::episodes::compare_random_episode(&mut rng, 8).map_err(|e| format!("episode {i}: {e}"))?;
    }
    Ok(format!("{episodes} randomized episodes identical to the reference simulator"))
}

fn gradients_match_finite_differences() -> Outcome {
    let per_op = 8;
    let mut instances = 0;
    for (i, op) in common::fd::OPS.iter().chain(["residual"].iter()).enumerate() {
        common::fd::run_trials(op, 0xACC2 + i as u64, per_op)?;
        instances += per_op;
    }
    ensure(instances >= 100, || format!("only {instances} instances"))?;
    Ok(format!("{instances} instances over {} ops, rel err < {}", common::fd::OPS.len() + 1, common::fd::TOL))
}

fn experience(map_id: u64) -> Experience {
    let t = Arc::new(Tensor::zeros(&[1]));
    Experience {
        map_id,
        state: t.clone(),
        action: 0,
        reward: 0,
        next_state: t,
        terminal: true,
        next_legal: Arc::new(vec![true]),
    }
}

fn draw_frequencies(bank: &ReplayBank, draws: usize, beta: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, bool), String> {
    let mut counts = vec![0usize; bank.len()];
    let mut unit_weights = true;
    let batch = 8;
    for _ in 0..draws / batch {
        let b = bank.sample(batch, beta, rng).map_err(err)?;
        for h in &b.handles {
            counts[h.slot] += 1;
        }
        unit_weights &= b.weights.iter().all(|&w| w == 1.0);
    }
    let total = (draws / batch * batch) as f64;
    Ok((counts.iter().map(|&c| c as f64 / total).collect(), unit_weights))
}

fn prioritized_replay_is_correct() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    let draws = 200_000;

    let mut bank = ReplayBank::new(16, 0.6, 1e-3);
    for i in 0..16 {
        bank.insert(experience(i));
    }
    let priorities: Vec<f64> = (0..16).map(|i| 0.5 + i as f64 * 0.75).collect();
    for (slot, &p) in priorities.iter().enumerate() {
        bank.set_raw_priority(slot, p);
    }
    let sum: f64 = priorities.iter().sum();
    let (freq, _) = draw_frequencies(&bank, draws, 0.4, &mut rng)?;
    let worst = freq.iter().zip(&priorities).map(|(f, p)| (f - p / sum).abs()).fold(0.0, f64::max);
    ensure(worst < 0.01, || format!("frequency off by {worst}"))?;

    let (_, unit) = draw_frequencies(&bank, 10_000, 0.0, &mut rng)?;
    ensure(unit, || "beta = 0 produced a weight other than 1".into())?;

    let mut flat = ReplayBank::new(16, 0.0, 1e-3);
    let mut handles = vec![];
    for i in 0..16 {
        handles.push(flat.insert(experience(i)));
    }
    let losses: Vec<f64> = (0..16).map(|i| (i * i) as f64).collect();
    flat.update_priorities(&handles, &losses);
    let (uniform, _) = draw_frequencies(&flat, draws, 0.4, &mut rng)?;
    let worst_uniform = uniform.iter().map(|f| (f - 1.0 / 16.0).abs()).fold(0.0, f64::max);
    ensure(worst_uniform < 0.01, || format!("alpha = 0 not uniform: off by {worst_uniform}"))?;

    let mut churn = ReplayBank::new(512, 0.6, 1e-3);
    let mut live = vec![];
    for op in 0..10_000u64 {
        if live.is_empty() || rng.gen_bool(0.5) {
            live.push(churn.insert(experience(op)));
        } else {
            let h = live[rng.gen_range(0..live.len())];
            churn.update_priorities(&[h], &[rng.gen_range(0.0..50.0)]);
        }
    }
    let scan: f64 = (0..churn.len()).map(|s| churn.priority(s)).sum();
    let root = churn.tree().total();
    let rel = (root - scan).abs() / scan;
    ensure(rel < 1e-3, || format!("root {root} vs scan {scan}"))?;

    Ok(format!(
        "max freq error {worst:.4}, alpha=0 max error {worst_uniform:.4}, root rel error {rel:.1e}, beta=0 weights 1"
    ))
}

fn hand_built_agent(gamma: f64) -> Result<DqnAgent, String> {
    let cfg = AgentConfig {
        gamma,
        residual_blocks: 1,
        conv_filters: 2,
        value_hidden: 2,
        advantage_hidden: 2,
        ..AgentConfig::default()
    };
    DqnAgent::new(cfg, 6, 6, 0).map_err(err)
}

/// Zeroes both output layers and puts `bias` on the advantage output, so `Q = bias - mean(bias)`.
fn set_heads(params: &mut eccl_core::nn::NetworkParams<f32>, bias: &[f32]) -> Result<(), String> {
    for name in ["value.out.w", "value.out.b", "adv.out.w"] {
        let shape = params.get(name).ok_or_else(|| format!("no parameter {name}"))?.shape().to_vec();
        let zero = Tensor::zeros(&shape);
        params.set(name, zero).map_err(err)?;
    }
    params.set("adv.out.b", Tensor::new(vec![bias.len()], bias.to_vec()).map_err(err)?).map_err(err)
}

fn double_q_uses_online_argmax() -> Outcome {
    let direct = double_q_target(1.0, false, &[1.0, 2.0], &[10.0, 0.0], &[true, true], 0.5).map_err(err)?;
    ensure(direct == 1.0, || format!("direct target {direct}"))?;

    let mut agent = hand_built_agent(0.5)?;
    let actions = agent.shape().actions();
    let mut online = vec![0.0f32; actions];
    online[..3].copy_from_slice(&[1.0, 2.0, -3.0]);
    let mut target = vec![0.0f32; actions];
    target[..3].copy_from_slice(&[10.0, 0.0, -10.0]);
    set_heads(agent.online_mut(), &online)?;
    set_heads(agent.target_mut(), &target)?;

    let state = Arc::new(encode_board(&Board::filled(6, 6, TileType::Neutral)));
    let mut legal = vec![false; actions];
    legal[0] = true;
    legal[1] = true;
    let e = Experience { reward: 1, terminal: false, next_legal: Arc::new(legal), state: state.clone(), next_state: state, action: 0, map_id: 0 };
    let q_online = agent.q(&e.next_state).map_err(err)?;
    ensure(q_online[..2] == [1.0, 2.0], || format!("online head gives {:?}", &q_online[..2]))?;
    let t = agent.targets(&[&e]).map_err(err)?[0];
    ensure(t == 1.0, || format!("agent target {t}, vanilla max would give 6"))?;
    Ok("target 1.0 (vanilla max 6.0) from hand-set online [1,2] and target [10,0] heads".into())
}

fn combine(v: &[f32], a: &[f32], rows: usize) -> Vec<f32> {
    let mut g = Graph::<f32>::detached();
    let vn = g.input(Tensor::new(vec![rows, 1], v.to_vec()).unwrap());
    let an = g.input(Tensor::new(vec![rows, a.len() / rows], a.to_vec()).unwrap());
    let q = dueling_combine(&mut g, vn, an).unwrap();
    g.value(q).data().to_vec()
}

fn dueling_identities_hold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC5);
    let mut cases = 0;
    for _ in 0..200 {
        let (rows, cols) = (rng.gen_range(1..=4), rng.gen_range(2..=300));
        let pow2 = 1usize << rng.gen_range(1..=8);
        let v: Vec<f32> = (0..rows).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let c: f32 = rng.gen_range(-1e4..1e4);
        let q = combine(&v, &vec![c; rows * cols], rows);
        for r in 0..rows {
            ensure(q[r * cols..(r + 1) * cols].iter().all(|&x| x == v[r]), || format!("constant {c}: row {r} differs from V"))?;
        }
        // dyadic values keep every sum and difference exactly representable
        // and power-of-two widths keep the mean exact
        let a: Vec<f32> = (0..rows * pow2).map(|_| rng.gen_range(-64i32..64) as f32 / 8.0).collect();
        let k = rng.gen_range(-1000i32..1000) as f32;
        let shifted: Vec<f32> = a.iter().map(|x| x + k).collect();
        let v8: Vec<f32> = (0..rows).map(|_| rng.gen_range(-64i32..64) as f32 / 8.0).collect();
        ensure(combine(&v8, &a, rows) == combine(&v8, &shifted, rows), || format!("shift {k} changed Q"))?;
        cases += 1;
    }

    let agent = hand_built_agent(0.99)?;
    let actions = agent.shape().actions();
    let state = encode_board(&Board::filled(6, 6, TileType::Neutral));
    let mut params = agent.online().clone();
    set_heads(&mut params, &vec![0.0; actions])?;
    params.set("value.out.b", Tensor::new(vec![1], vec![2.5]).map_err(err)?).map_err(err)?;
    let base = q_forward(&params, agent.shape(), &state).map_err(err)?;
    params.set("adv.out.b", Tensor::filled(&[actions], 7.25)).map_err(err)?;
    let constant = q_forward(&params, agent.shape(), &state).map_err(err)?;
    ensure(base.iter().chain(&constant).all(|&x| x == 2.5), || "network Q differs from V under constant advantage".into())?;
    Ok(format!("{cases} random constant/shift cases plus a full network, all exact"))
}

fn fi2pop_invariants_hold() -> Outcome {
    let gen = GenConfig { width: 8, height: 8, ..GenConfig::default() };
    let evo = EvoConfig { generations: 10, ..EvoConfig::default() };
    for seed in 0..5u64 {
        let net = LossNet::new(LossNetConfig::default(), 8, 8, 0xACC6 + seed).map_err(err)?;
        let out = evolve(5, &net, seed, &evo, &gen).map_err(err)?;
        for b in &out.boards {
            ensure(constrained_fitness(b) == 1.0, || format!("seed {seed}: returned an infeasible board"))?;
        }
        let best: Vec<f64> = out.stats.iter().filter_map(|s| s.best_feasible).collect();
        ensure(best.windows(2).all(|w| w[1] >= w[0]), || format!("seed {seed}: best feasible not monotone {best:?}"))?;
    }
    let g = |t: &str| t.parse::<Board>().map_err(err);
    let three = g("6 6\nSS....\nS.....\n......\n......\n......\n..H...\n")?;
    ensure(separate_quads(&three) == 1.0 / 3.0, || "quadrant 1/3 example".into())?;
    let walled = g("6 6\nS#...S\n##....\n......\n......\n......\n..H...\n")?;
    ensure(home_paths(&walled) == 0.5, || "walled source example".into())?;
    let mut center = Board::filled(10, 10, TileType::Neutral);
    center.set(8, 2, TileType::Home);
    let inside = home_center(&center);
    center.set(8, 2, TileType::Neutral);
    center.set(9, 5, TileType::Home);
    ensure(inside == 1.0 && home_center(&center) == 0.0, || "center threshold example".into())?;
    let mut blocked = Board::filled(8, 8, TileType::Neutral);
    blocked.set(4, 4, TileType::Home);
    blocked.set(5, 5, TileType::Block);
    ensure(home_blocks(&blocked) == 0.0, || "adjacent block example".into())?;
    ensure(factors(&blocked)[3] == 0.0, || "factor vector".into())?;
    Ok("5 evolve runs feasible and monotone; four factor examples exact".into())
}

fn scaled_config(kind: ScheduleKind, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.master_seed = seed;
    cfg.generator.width = 8;
    cfg.generator.height = 8;
    cfg.agent.residual_blocks = 3;
    cfg.agent.conv_filters = 8;
    cfg.schedule.kind = kind;
    cfg.schedule.bootstrap_count = 50;
    cfg.schedule.eval_set_size = 100;
    cfg.schedule.eval_every_maps = 50;
    cfg.schedule.patience_cycles = 1000;
    cfg.schedule.max_maps = 450;
    cfg
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn evolved_curriculum_direction() -> Outcome {
    let seeds = 5u64;
    let (mut score_wins, mut loss_wins) = (0, 0);
    let mut lines = vec![];
    for seed in 0..seeds {
        let start = Instant::now();
        let mut evolved_run = CurriculumRun::new(scaled_config(ScheduleKind::EvolvedOnly, seed)).map_err(err)?;
        evolved_run.run();
        let cfg = evolved_run.config().clone();
        let (evolved, _, snapshot) = evolved_run.into_parts();
        let mut constructive_run = CurriculumRun::new(scaled_config(ScheduleKind::ConstructiveOnly, seed)).map_err(err)?;
        constructive_run.run();
        let constructive = constructive_run.metrics().clone();
        for m in [&evolved, &constructive] {
            if let Some(e) = &m.error {
                return Err(format!("seed {seed} {}: {e}", m.schedule));
            }
        }
        let final_score = |m: &eccl_core::RunMetrics| m.evals.last().filter(|e| e.maps_played == 450).map(|e| e.score);
        let (es, cs) = final_score(&evolved)
            .zip(final_score(&constructive))
            .ok_or_else(|| format!("seed {seed}: missing evaluation at 450 maps"))?;

        let picked = evolve(cfg.agent.maps_per_cycle, &snapshot, stream_seed(seed, 7, 1 << 32), &cfg.evolution, &cfg.generator)
            .map_err(err)?;
        let baseline = generate(100, stream_seed(seed, 6, 1 << 32), &cfg.generator).map_err(err)?;
        let (el, cl) = (mean(&snapshot.predict_many(&picked.boards)), mean(&snapshot.predict_many(&baseline)));

        score_wins += usize::from(es >= cs);
        loss_wins += usize::from(el > cl);
        let line = format!(
            "seed {seed}: score evolved {es:.2} constructive {cs:.2}; predicted loss evolved {el:.4} constructive {cl:.4} ({:.0}s)",
            start.elapsed().as_secs_f64()
        );
        eprintln!("  {line}");
        let curve = |m: &eccl_core::RunMetrics| m.evals.iter().map(|e| format!("{:.2}", e.score)).collect::<Vec<_>>().join(" ");
        eprintln!("    evolved curve: {}", curve(&evolved));
        eprintln!("    constructive curve: {}", curve(&constructive));
        lines.push(line);
    }
    let summary = format!("score wins {score_wins}/{seeds}, predicted-loss wins {loss_wins}/{seeds}");
    if score_wins >= 3 && loss_wins >= 4 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn tiny_protocol_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.master_seed = 11;
    cfg.game = GameConfig { max_turns: 30, ..GameConfig::default() };
    cfg.generator.width = 6;
    cfg.generator.height = 6;
    cfg.agent = AgentConfig {
        residual_blocks: 1,
        conv_filters: 4,
        value_hidden: 8,
        advantage_hidden: 8,
        ..AgentConfig::default()
    };
    cfg.loss_net = LossNetConfig { residual_blocks: 1, conv_filters: 4, head_hidden: 8, ..LossNetConfig::default() };
    cfg.evolution = EvoConfig { pop_size_feasible: 10, pop_size_infeasible: 10, generations: 3, ..EvoConfig::default() };
    cfg.schedule.eval_set_size = 10;
    cfg.schedule.patience_cycles = 1000;
    cfg.schedule.max_maps = 400;
    cfg
}

fn protocol_is_followed() -> Outcome {
    let cfg = tiny_protocol_config();
    let mut run = CurriculumRun::new(cfg.clone()).map_err(err)?;
    run.run();
    let m = run.metrics();
    ensure(m.error.is_none(), || format!("run failed: {:?}", m.error))?;
    let marks: Vec<usize> = m.cycles.iter().map(|c| c.maps_played).collect();
    ensure(marks == (1..=80).map(|i| i * 5).collect::<Vec<_>>(), || format!("cycle marks {marks:?}"))?;
    for c in m.cycles.iter().filter(|c| c.ran) {
        ensure(c.batches == 250 && c.batch_size == 32, || format!("cycle at {} ran {}x{}", c.maps_played, c.batches, c.batch_size))?;
    }
    let ran = m.cycles.iter().filter(|c| c.ran).count();
    ensure(ran >= 79, || format!("only {ran} of 80 cycles trained"))?;
    let evals: Vec<usize> = m.evals.iter().map(|e| e.maps_played).collect();
    ensure(evals == [0, 200, 400], || format!("evaluations at {evals:?}"))?;

    let mut long = cfg.clone();
    long.agent.batches_per_cycle = 1;
    long.schedule.max_maps = 1000;
    long.schedule.eval_every_maps = 1000;
    let mut run = CurriculumRun::new(long.clone()).map_err(err)?;
    run.run();
    let m = run.metrics();
    ensure(m.error.is_none(), || format!("long run failed: {:?}", m.error))?;
    let last = m.cycles.last().ok_or("no cycles")?;
    ensure(last.games_played == 1000 && last.beta == 1.0, || format!("beta {} at game {}", last.beta, last.games_played))?;
    ensure(m.cycles[..m.cycles.len() - 1].iter().all(|c| c.beta < 1.0), || "beta reached 1 early".into())?;
    ensure(beta_schedule(1000, &long.agent) == 1.0 && beta_schedule(999, &long.agent) < 1.0, || "beta schedule".into())?;

    let sequences: [(&[f64], Option<usize>); 6] = [
        (&[10.0, 12.0, 11.0, 11.0], Some(3)),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], None),
        (&[5.0, 5.0, 5.0], Some(2)),
        (&[3.0, 1.0, 4.0, 1.0, 5.0, 2.0, 2.0], Some(6)),
        (&[1.0, 0.0, 2.0, 0.0, 3.0], None),
        (&[9.0, 1.0], None),
    ];
    for (scores, expect) in sequences {
        let got = stopping_point(scores, 2);
        ensure(got == expect, || format!("{scores:?}: stopped at {got:?}, expected {expect:?}"))?;
        let mut p = Patience::new(2);
        let first_stop = scores.iter().position(|&s| p.observe(s));
        ensure(first_stop == expect, || format!("{scores:?}: patience tracker stopped at {first_stop:?}"))?;
    }
    Ok(format!("{ran} cycles of 250x32 every 5 maps, evals at {evals:?}, beta 1.0 at game 1000, patience sequences exact"))
}

fn runs_are_deterministic_and_checkpoints_exact() -> Outcome {
    let mut cfg = tiny_protocol_config();
    cfg.agent.batches_per_cycle = 20;
    cfg.schedule.bootstrap_count = 10;
    cfg.schedule.eval_every_maps = 20;
    cfg.schedule.max_maps = 40;
    let mut dirs = vec![];
    let mut agents = vec![];
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(err)?;
        let mut c = cfg.clone();
        c.output_dir = Some(dir.path().to_path_buf());
        let mut run = CurriculumRun::new(c).map_err(err)?;
        run.run();
        save_metrics(run.metrics(), dir.path()).map_err(err)?;
        agents.push(run.into_parts().1);
        dirs.push(dir);
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).map_err(|e| format!("{f}: {e}"));
    let csv = read(&dirs[0], "metrics.csv")?;
    ensure(csv == read(&dirs[1], "metrics.csv")?, || "metrics.csv differs between identical runs".into())?;
    ensure(csv.len() > 100, || "metrics.csv is nearly empty".into())?;

    let path = dirs[0].path().join("checkpoints").join("agent_latest.ckpt");
    let loaded = DqnAgent::load_checkpoint(&path).map_err(err)?;
    let boards = generate(20, 3, &cfg.generator).map_err(err)?;
    for b in &boards {
        let s = encode_board(b);
        let (a, l) = (agents[0].q(&s).map_err(err)?, loaded.q(&s).map_err(err)?);
        ensure(a.iter().zip(&l).all(|(x, y)| x.to_bits() == y.to_bits()), || "loaded agent differs".into())?;
        ensure(a.len() == codec::action_count(6, 6), || "action count".into())?;
    }
    ensure(read(&dirs[0], "checkpoints/agent_latest.ckpt")? == read(&dirs[1], "checkpoints/agent_latest.ckpt")?, || {
        "checkpoints differ between identical runs".into()
    })?;
    Ok("identical metrics.csv and checkpoints across runs; reloaded Q-values bitwise equal".into())
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "engine matches reference simulator", engine_matches_reference),
        (2, "gradient checks", gradients_match_finite_differences),
        (3, "prioritized replay", prioritized_replay_is_correct),
        (4, "double-Q target", double_q_uses_online_argmax),
        (5, "dueling identities", dueling_identities_hold),
        (6, "FI-2Pop invariants", fi2pop_invariants_hold),
        (7, "evolved curriculum direction", evolved_curriculum_direction),
        (8, "training protocol", protocol_is_followed),
        (9, "determinism and persistence", runs_are_deterministic_and_checkpoints_exact),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
