use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use eccl_core::curriculum::{eval_board_seed, eval_game_seed, evaluate, save_metrics, EvalPoint, StopReason};
use eccl_core::evolution::write_stats_csv;
use eccl_core::{constructive, evolution, Board, CurriculumRun, DqnAgent, LossNet, RunMetrics, ScheduleKind};
use serde::Serialize;

use crate::{config, UsageError};

#[derive(Serialize)]
struct Summary<'a> {
    schedule: ScheduleKind,
    seed: u64,
    maps_played: usize,
    stop_reason: Option<StopReason>,
    peak_score: Option<f64>,
    maps_to_peak: Option<usize>,
    baseline_score: Option<f64>,
    final_score: Option<f64>,
    evaluations: &'a [EvalPoint],
    evolve_fallbacks: usize,
    error: Option<&'a str>,
}

impl<'a> Summary<'a> {
    fn of(m: &'a RunMetrics) -> Self {
        let peak = m.peak();
        Self {
            schedule: m.schedule,
            seed: m.seed,
            maps_played: m.maps_played,
            stop_reason: m.stop_reason,
            peak_score: peak.map(|p| p.score),
            maps_to_peak: peak.map(|p| p.maps_played),
            baseline_score: m.evals.first().map(|e| e.score),
            final_score: m.evals.last().map(|e| e.score),
            evaluations: &m.evals,
            evolve_fallbacks: m.evolve_fallbacks,
            error: m.error.as_deref(),
        }
    }
}

pub fn run(config: Option<&Path>, schedule: Option<ScheduleKind>, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = config::load(config)?;
    if let Some(kind) = schedule {
        cfg.schedule.kind = kind;
    }
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}_seed{}", cfg.schedule.kind, cfg.master_seed)));
    cfg.output_dir = Some(dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), config::to_toml(&cfg)?)?;

    eprintln!("running {} schedule, seed {}, into {}", cfg.schedule.kind, cfg.master_seed, dir.display());
    let mut run = CurriculumRun::new(cfg)?;
    let metrics = run.run();
    save_metrics(metrics, &dir)?;
    let summary = serde_json::to_string_pretty(&Summary::of(metrics))?;
    fs::write(dir.join("summary.json"), summary + "\n")?;

    if let Some(e) = &metrics.error {
        bail!("run stopped after {} maps: {e}", metrics.maps_played);
    }
    match metrics.peak() {
        Some(p) => eprintln!("{} maps played; peak score {:.3} at {} maps", metrics.maps_played, p.score, p.maps_played),
        None => eprintln!("{} maps played; no evaluation after the baseline", metrics.maps_played),
    }
    Ok(())
}

fn boards_text(boards: &[Board]) -> String {
    boards.iter().map(Board::to_text).collect::<Vec<_>>().join("\n")
}

pub fn gen(n: usize, seed: u64, config: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    if n == 0 {
        return Err(UsageError("-n must be at least 1".into()).into());
    }
    let cfg = config::load(config)?;
    let boards = constructive::generate(n, seed, &cfg.generator)?;
    let text = boards_text(&boards);
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn evolve(n: usize, seed: u64, config: Option<&Path>, checkpoint: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    if n == 0 {
        return Err(UsageError("-n must be at least 1".into()).into());
    }
    let cfg = config::load(config)?;
    let dims = (cfg.generator.width, cfg.generator.height);
    let net = match checkpoint {
        Some(p) => {
            let net = LossNet::load(p).with_context(|| format!("loading {}", p.display()))?;
            if net.dims() != dims {
                bail!("checkpoint is for {:?} boards but the generator makes {dims:?}", net.dims());
            }
            net
        }
        None => {
            eprintln!("warning: no loss-net checkpoint given; using a zero network, so all feasible maps tie");
            let mut net = LossNet::new(cfg.loss_net.clone(), dims.0, dims.1, 0)?;
            *net.params_mut() = net.params().zeroed();
            net
        }
    };
    let outcome = evolution::evolve(n, &net, seed, &cfg.evolution, &cfg.generator)?;
    if outcome.fallback {
        eprintln!("warning: too few distinct feasible maps evolved; filled with constructive maps");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = boards_text(&outcome.boards);
    fs::write(out.join("boards.txt"), &text)?;
    write_stats_csv(&outcome.stats, fs::File::create(out.join("generations.csv"))?)?;
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

pub fn eval(checkpoint: &Path, config: Option<&Path>, seed: u64, n: Option<usize>) -> anyhow::Result<()> {
    let cfg = config::load(config)?;
    let n = n.unwrap_or(cfg.schedule.eval_set_size);
    if n == 0 {
        return Err(UsageError("-n must be at least 1".into()).into());
    }
    let (w, h) = (cfg.generator.width, cfg.generator.height);
    let agent = DqnAgent::load_checkpoint_for(checkpoint, &cfg.agent, w, h)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let boards = constructive::generate(n, eval_board_seed(seed), &cfg.generator)?;
    let score = evaluate(&agent, &boards, &cfg.game, eval_game_seed(seed))?;
    eprintln!("mean score {score:.4} over {n} maps");
    println!("checkpoint,eval_seed,n_maps,mean_score");
    println!("{},{seed},{n},{score}", checkpoint.display());
    Ok(())
}
