//! Central finite differences in f64 against the tape's analytic gradients.

use eccl_core::nn::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

/// Inputs near a kink (relu at 0, huber at ±kappa) make finite differences meaningless.
pub const KINK_MARGIN: f64 = 1e-3;

pub const OPS: [&str; 14] = [
    "conv2d", "dense", "relu", "add", "sub", "mul", "scale", "add_column", "mean_last", "concat", "gather", "reshape",
    "huber", "mse",
];

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any node to a scalar with fixed random coefficients so every entry matters.
pub fn project(g: &mut Graph<'_, f64>, x: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let r = random_tensor(rng, &shape);
    let r = g.input(r);
    let m = g.mul(x, r).unwrap();
    g.sum(m)
}

pub struct Built {
    pub loss: NodeId,
    /// Nodes whose values must stay away from zero (relu inputs).
    pub kinks: Vec<NodeId>,
}

/// One instance. `Ok(false)` means the point sat on a kink and was skipped.
pub fn check<F>(inputs: &[Tensor<f64>], build: F) -> Result<bool, String>
where
    F: Fn(&mut Graph<'_, f64>, &[NodeId]) -> Built,
{
    let mut g = Graph::<f64>::detached();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let built = build(&mut g, &ids);
    if built.kinks.iter().any(|&k| g.value(k).data().iter().any(|v| v.abs() < KINK_MARGIN)) {
        return Ok(false);
    }
    let back = g.backward(built.loss).map_err(|e| e.to_string())?;
    let eval = |perturbed: &[Tensor<f64>]| {
        let mut g = Graph::<f64>::detached();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.variable(t.clone())).collect();
        let b = build(&mut g, &ids);
        g.value(b.loss).data()[0]
    };
    for (k, id) in ids.iter().enumerate() {
        let analytic = back.node(*id).ok_or_else(|| format!("input {k} has no gradient"))?.data().to_vec();
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let err = rel_err(analytic[i], numeric);
            if err >= TOL {
                return Err(format!("input {k} entry {i}: analytic {} numeric {numeric} rel {err}", analytic[i]));
            }
        }
    }
    Ok(true)
}

/// Draws one random instance of `op` and checks it.
pub fn trial(op: &str, rng: &mut ChaCha8Rng) -> Result<bool, String> {
    let seed: u64 = rng.gen();
    let proj = move |g: &mut Graph<'_, f64>, y: NodeId| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Built { loss: project(g, y, &mut r), kinks: vec![] }
    };
    match op {
        "conv2d" => {
            let (n, c, f, h, w) =
                (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(2..=4));
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            let inputs = [random_tensor(rng, &[n, c, h, w]), random_tensor(rng, &[f, c, k, k]), random_tensor(rng, &[f])];
            check(&inputs, |g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2]).unwrap();
                proj(g, y)
            })
        }
        "dense" => {
            let (b, n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5));
            let x = if rng.gen_bool(0.5) { random_tensor(rng, &[b, n]) } else { random_tensor(rng, &[n]) };
            let inputs = [x, random_tensor(rng, &[m, n]), random_tensor(rng, &[m])];
            check(&inputs, |g, ids| {
                let y = g.dense(ids[0], ids[1], ids[2]).unwrap();
                proj(g, y)
            })
        }
        "relu" => {
            let len = rng.gen_range(1..=8);
            let inputs = [random_tensor(rng, &[len])];
            check(&inputs, |g, ids| {
                let y = g.relu(ids[0]);
                Built { kinks: vec![ids[0]], ..proj(g, y) }
            })
        }
        "add" | "sub" | "mul" | "scale" => {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4)];
            let inputs = [random_tensor(rng, &shape), random_tensor(rng, &shape)];
            let factor = rng.gen_range(-2.0..2.0);
            check(&inputs, |g, ids| {
                let y = match op {
                    "add" => g.add(ids[0], ids[1]).unwrap(),
                    "sub" => g.sub(ids[0], ids[1]).unwrap(),
                    "mul" => g.mul(ids[0], ids[1]).unwrap(),
                    _ => {
                        let a = g.scale(ids[0], factor);
                        g.add(a, ids[1]).unwrap()
                    }
                };
                proj(g, y)
            })
        }
        "add_column" | "mean_last" | "concat" | "gather" | "reshape" => {
            let (rows, cols) = (rng.gen_range(1..=3), rng.gen_range(2..=5));
            let inputs = [random_tensor(rng, &[rows, cols]), random_tensor(rng, &[rows, 1])];
            let idx: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..cols)).collect();
            check(&inputs, |g, ids| {
                let y = match op {
                    "add_column" => g.add_column(ids[0], ids[1]).unwrap(),
                    "mean_last" => {
                        let m = g.mean_last(ids[0]).unwrap();
                        g.mul(m, ids[1]).unwrap()
                    }
                    "concat" => g.concat(&[ids[1], ids[0], ids[1]]).unwrap(),
                    "gather" => {
                        let q = g.add_column(ids[0], ids[1]).unwrap();
                        g.gather(q, &idx).unwrap()
                    }
                    _ => {
                        let flat = g.reshape(ids[0], &[rows * cols]).unwrap();
                        let back = g.reshape(flat, &[cols, rows]).unwrap();
                        let col = g.sum(ids[1]);
                        let c = g.reshape(col, &[1]).unwrap();
                        let m = g.mul(back, back).unwrap();
                        let s = g.sum(m);
                        let t = g.reshape(s, &[1]).unwrap();
                        g.mul(t, c).unwrap()
                    }
                };
                proj(g, y)
            })
        }
        "huber" => {
            let n = rng.gen_range(1..=6);
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let kappa = 1.0;
            if pred.iter().zip(&target).any(|(p, t)| ((p - t).abs() - kappa).abs() < KINK_MARGIN * 10.0) {
                return Ok(false);
            }
            let inputs = [Tensor::new(vec![n], pred).unwrap()];
            check(&inputs, |g, ids| Built { loss: g.huber_loss(ids[0], &target, &weights, kappa).unwrap(), kinks: vec![] })
        }
        "mse" => {
            let n = rng.gen_range(1..=6);
            let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let inputs = [random_tensor(rng, &[n, 1])];
            check(&inputs, |g, ids| Built { loss: g.mse_loss(ids[0], &target).unwrap(), kinks: vec![] })
        }
        "residual" => {
            let (n, f, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(2..=4));
            let inputs = [
                random_tensor(rng, &[n, f, h, w]),
                random_tensor(rng, &[f, f, 3, 3]),
                random_tensor(rng, &[f]),
                random_tensor(rng, &[f, f, 3, 3]),
                random_tensor(rng, &[f]),
            ];
            check(&inputs, |g, ids| {
                let a = g.conv2d(ids[0], ids[1], ids[2]).unwrap();
                let h1 = g.relu(a);
                let b = g.conv2d(h1, ids[3], ids[4]).unwrap();
                let sum = g.add(b, ids[0]).unwrap();
                let out = g.relu(sum);
                Built { kinks: vec![a, sum], ..proj(g, out) }
            })
        }
        other => Err(format!("unknown op {other}")),
    }
}

/// `count` checked (non-kink) instances of `op`; returns how many were drawn.
pub fn run_trials(op: &str, seed: u64, count: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut done, mut attempts) = (0, 0);
    while done < count {
        attempts += 1;
        if attempts > count * 20 {
            return Err(format!("{op}: too many kink rejections"));
        }
        if trial(op, &mut rng).map_err(|e| format!("{op}: {e}"))? {
            done += 1;
        }
    }
    Ok(attempts)
}
