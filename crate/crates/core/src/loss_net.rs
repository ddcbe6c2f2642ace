//! Regressor from a pristine board to the agent's realized training loss on it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_board, PLANES};
use crate::error::{LossNetError, NnError};
use crate::game::Board;
use crate::nn::{layers, Checkpoint, Graph, NetworkParams, NodeId, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossNetConfig {
    pub residual_blocks: usize,
    pub conv_filters: usize,
    pub head_hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LossNetConfig {
    fn default() -> Self {
        Self { residual_blocks: 2, conv_filters: 16, head_hidden: 32, lr: 1e-4, epochs: 4, batch_size: 32 }
    }
}

impl LossNetConfig {
    pub fn validate(&self) -> Result<(), LossNetError> {
        if self.conv_filters == 0 || self.head_hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(LossNetError::Config("widths, epochs and batch_size must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(LossNetError::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// A board and the mean absolute TD error its experiences produced in one cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct MapLossRecord {
    pub board: Board,
    pub realized_loss: f64,
}

/// Mean of `|loss|`, or `None` for an empty slice.
pub fn record_map_loss(board: &Board, losses: &[f64]) -> Option<MapLossRecord> {
    if losses.is_empty() {
        return None;
    }
    let realized_loss = losses.iter().map(|l| l.abs()).sum::<f64>() / losses.len() as f64;
    Some(MapLossRecord { board: board.clone(), realized_loss })
}

/// Groups `(map_id, loss)` samples by map, in map-id order.
pub fn group_by_map(samples: &[(u64, f64)]) -> BTreeMap<u64, Vec<f64>> {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &(id, loss) in samples {
        groups.entry(id).or_default().push(loss);
    }
    groups
}

/// Anything that scores boards by predicted agent loss.
pub trait LossOracle {
    fn predict_many(&self, boards: &[Board]) -> Vec<f64>;

    fn predict(&self, board: &Board) -> f64 {
        self.predict_many(std::slice::from_ref(board))[0]
    }
}

/// The same value for every board.
#[derive(Clone, Copy, Debug)]
pub struct ConstantOracle(pub f64);

impl LossOracle for ConstantOracle {
    fn predict_many(&self, boards: &[Board]) -> Vec<f64> {
        vec![self.0; boards.len()]
    }
}

impl<F: Fn(&Board) -> f64> LossOracle for F {
    fn predict_many(&self, boards: &[Board]) -> Vec<f64> {
        boards.iter().map(self).collect()
    }
}

fn graph<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, blocks: usize) -> Result<NodeId, NnError> {
    let tower = layers::conv_tower(g, x, blocks)?;
    let flat = g.flatten_batch(tower)?;
    let h = layers::dense(g, flat, "head.hidden")?;
    let h = g.relu(h);
    layers::dense(g, h, "head.out")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Full-set MSE after each epoch.
    pub epoch_mse: Vec<f64>,
}

impl TrainReport {
    pub fn final_mse(&self) -> f64 {
        *self.epoch_mse.last().expect("at least one epoch")
    }
}

#[derive(Clone, Debug)]
pub struct LossNet {
    cfg: LossNetConfig,
    width: usize,
    height: usize,
    params: NetworkParams<f32>,
}

impl LossNet {
    pub fn new(cfg: LossNetConfig, width: usize, height: usize, seed: u64) -> Result<Self, LossNetError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = NetworkParams::new();
        layers::add_conv_tower(&mut params, PLANES, cfg.conv_filters, cfg.residual_blocks, &mut rng)?;
        layers::add_dense(&mut params, "head.hidden", cfg.conv_filters * width * height, cfg.head_hidden, &mut rng)?;
        layers::add_dense(&mut params, "head.out", cfg.head_hidden, 1, &mut rng)?;
        Ok(Self { cfg, width, height, params })
    }

    pub fn config(&self) -> &LossNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &NetworkParams<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams<f32> {
        &mut self.params
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn forward(&self, boards: &[&Board]) -> Result<Vec<f32>, NnError> {
        let encoded: Vec<Tensor<f32>> = boards.iter().map(|b| encode_board(b)).collect();
        let x = Tensor::stack(encoded.iter())?;
        let mut g = Graph::new(&self.params);
        let input = g.input(x);
        let out = graph(&mut g, input, self.cfg.residual_blocks)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn predict_loss(&self, board: &Board) -> f64 {
        self.predict_many(std::slice::from_ref(board))[0]
    }

    /// Minibatched Adam on MSE for `epochs` shuffled passes over `records`.
    pub fn train<R: Rng>(&mut self, records: &[MapLossRecord], rng: &mut R) -> Result<TrainReport, LossNetError> {
        if records.is_empty() {
            return Err(LossNetError::NoRecords);
        }
        let inputs: Vec<Tensor<f32>> = records.iter().map(|r| encode_board(&r.board)).collect();
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut epoch_mse = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                let x = Tensor::stack(chunk.iter().map(|&i| &inputs[i]))?;
                let target: Vec<f32> = chunk.iter().map(|&i| records[i].realized_loss as f32).collect();
                let grads = {
                    let mut g = Graph::new(&self.params);
                    let input = g.input(x);
                    let out = graph(&mut g, input, self.cfg.residual_blocks)?;
                    let loss = g.mse_loss(out, &target)?;
                    g.backward(loss)?.into_params()
                };
                self.params.adam_step(&grads, self.cfg.lr)?;
            }
            epoch_mse.push(self.mse(records)?);
        }
        Ok(TrainReport { epoch_mse })
    }

    pub fn mse(&self, records: &[MapLossRecord]) -> Result<f64, LossNetError> {
        let mut total = 0.0;
        for chunk in records.chunks(self.cfg.batch_size.max(64)) {
            let boards: Vec<&Board> = chunk.iter().map(|r| &r.board).collect();
            let pred = self.forward(&boards)?;
            total += pred
                .iter()
                .zip(chunk)
                .map(|(&p, r)| (p as f64 - r.realized_loss).powi(2))
                .sum::<f64>();
        }
        Ok(total / records.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_params("loss.", &self.params);
        ck.meta.insert("kind".into(), "loss_net".into());
        ck.meta.insert("width".into(), self.width.into());
        ck.meta.insert("height".into(), self.height.into());
        ck.meta.insert("config".into(), serde_json::to_value(&self.cfg).expect("config serializes"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, LossNetError> {
        let missing = |k: &str| LossNetError::Nn(NnError::ManifestMismatch(format!("checkpoint meta lacks `{k}`")));
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("loss_net") {
            return Err(missing("kind = loss_net"));
        }
        let dim = |k: &str| ck.meta.get(k).and_then(|v| v.as_u64()).map(|v| v as usize).ok_or_else(|| missing(k));
        let cfg: LossNetConfig = serde_json::from_value(ck.meta.get("config").cloned().ok_or_else(|| missing("config"))?)
            .map_err(|e| LossNetError::Config(e.to_string()))?;
        let mut net = Self::new(cfg, dim("width")?, dim("height")?, 0)?;
        ck.load_params("loss.", &mut net.params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), LossNetError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, LossNetError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl LossOracle for LossNet {
    fn predict_many(&self, boards: &[Board]) -> Vec<f64> {
        let mut out = Vec::with_capacity(boards.len());
        for chunk in boards.chunks(64) {
            let refs: Vec<&Board> = chunk.iter().collect();
            let pred = self.forward(&refs).expect("boards match the network dimensions");
            out.extend(pred.into_iter().map(f64::from));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::TileType;

    fn boards(n: usize, seed: u64) -> Vec<Board> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut b = Board::filled(6, 6, TileType::Neutral);
                for i in 0..36 {
                    let t = [TileType::Neutral, TileType::Slow, TileType::Block][rng.gen_range(0..3)];
                    b.set_index(i, t);
                }
                b.set(rng.gen_range(0..6), rng.gen_range(0..6), TileType::Home);
                b
            })
            .collect()
    }

    fn small(lr: f64) -> LossNetConfig {
        LossNetConfig { residual_blocks: 1, conv_filters: 4, head_hidden: 16, lr, epochs: 1, batch_size: 32 }
    }

    #[test]
    fn zero_params_predict_zero() {
        let mut net = LossNet::new(LossNetConfig::default(), 6, 6, 0).unwrap();
        *net.params_mut() = net.params().zeroed();
        for b in boards(5, 1) {
            assert_eq!(net.predict_loss(&b), 0.0);
        }
    }

    #[test]
    fn prediction_is_pure() {
        let net = LossNet::new(LossNetConfig::default(), 6, 6, 3).unwrap();
        let b = boards(1, 2).pop().unwrap();
        assert_eq!(net.predict_loss(&b), net.predict_loss(&b.clone()));
        let many = net.predict_many(&[b.clone(), b.clone()]);
        assert_eq!(many[0], many[1]);
    }

    #[test]
    fn record_means() {
        let b = boards(1, 0).pop().unwrap();
        assert_eq!(record_map_loss(&b, &[2.0, 4.0]).unwrap().realized_loss, 3.0);
        assert_eq!(record_map_loss(&b, &[0.0]).unwrap().realized_loss, 0.0);
        assert!(record_map_loss(&b, &[]).is_none());
    }

    #[test]
    fn grouping_matches_regroup() {
        let samples = [(3, 1.0), (1, 2.0), (3, 5.0), (2, 0.5), (1, 4.0)];
        let g = group_by_map(&samples);
        assert_eq!(g.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(g[&1], vec![2.0, 4.0]);
        assert_eq!(g[&3], vec![1.0, 5.0]);
    }

    #[test]
    fn empty_records_rejected() {
        let mut net = LossNet::new(small(1e-3), 6, 6, 0).unwrap();
        assert!(matches!(net.train(&[], &mut ChaCha8Rng::seed_from_u64(0)), Err(LossNetError::NoRecords)));
    }

    #[test]
    fn constant_target_fit() {
        let mut net = LossNet::new(LossNetConfig { epochs: 300, ..small(1e-3) }, 6, 6, 4).unwrap();
        let records: Vec<MapLossRecord> =
            boards(8, 5).into_iter().map(|board| MapLossRecord { board, realized_loss: 1.5 }).collect();
        net.train(&records, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for r in &records {
            assert!((net.predict_loss(&r.board) - 1.5).abs() < 0.05);
        }
    }

    #[test]
    fn memorizes_twenty_pairs() {
        let mut net = LossNet::new(LossNetConfig { epochs: 400, batch_size: 20, ..small(3e-3) }, 6, 6, 6).unwrap();
        let records: Vec<MapLossRecord> = boards(20, 7)
            .into_iter()
            .enumerate()
            .map(|(i, board)| MapLossRecord { board, realized_loss: i as f64 * 0.25 })
            .collect();
        let mean = records.iter().map(|r| r.realized_loss).sum::<f64>() / 20.0;
        let var = records.iter().map(|r| (r.realized_loss - mean).powi(2)).sum::<f64>() / 20.0;
        let report = net.train(&records, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(report.final_mse() < 0.05 * var, "mse {} var {var}", report.final_mse());
    }

    #[test]
    fn epoch_mse_non_increasing_in_most_seeds() {
        let records: Vec<MapLossRecord> = boards(24, 11)
            .into_iter()
            .enumerate()
            .map(|(i, board)| MapLossRecord { board, realized_loss: 0.5 + (i % 5) as f64 * 0.3 })
            .collect();
        let trials = 20;
        let mut monotone = 0;
        for seed in 0..trials {
            let mut net = LossNet::new(LossNetConfig::default(), 6, 6, seed).unwrap();
            let start = net.mse(&records).unwrap();
            let report = net.train(&records, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
            let mut series = vec![start];
            series.extend(&report.epoch_mse);
            if series.windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
        assert!(monotone * 10 >= trials * 9, "{monotone}/{trials} monotone");
    }

    #[test]
    fn repeated_record_approaches_target_on_average() {
        let board = boards(1, 21).pop().unwrap();
        let records = vec![MapLossRecord { board: board.clone(), realized_loss: 2.0 }; 4];
        let checkpoints = 5;
        let mut mean_gap = vec![0.0; checkpoints + 1];
        for seed in 0..10 {
            let mut net = LossNet::new(LossNetConfig { epochs: 5, ..small(1e-3) }, 6, 6, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mean_gap[0] += (net.predict_loss(&board) - 2.0).abs() / 10.0;
            for gap in mean_gap.iter_mut().skip(1) {
                net.train(&records, &mut rng).unwrap();
                *gap += (net.predict_loss(&board) - 2.0).abs() / 10.0;
            }
        }
        assert!(mean_gap.windows(2).all(|w| w[1] <= w[0]), "{mean_gap:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = LossNet::new(LossNetConfig::default(), 6, 6, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.ckpt");
        net.save(&path).unwrap();
        let back = LossNet::load(&path).unwrap();
        let b = boards(1, 3).pop().unwrap();
        assert_eq!(net.predict_loss(&b), back.predict_loss(&b));
    }
}
