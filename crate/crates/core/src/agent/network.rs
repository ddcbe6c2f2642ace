//! Dueling Q-network: conv tower, then separate value and advantage heads.

use rand::Rng;

use crate::codec::{self, PLANES};
use crate::error::NnError;
use crate::nn::layers;
use crate::nn::{Graph, NetworkParams, NodeId, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QNetShape {
    pub width: usize,
    pub height: usize,
    pub blocks: usize,
    pub filters: usize,
    pub value_hidden: usize,
    pub advantage_hidden: usize,
}

impl QNetShape {
    pub fn actions(&self) -> usize {
        codec::action_count(self.width, self.height)
    }

    fn flat(&self) -> usize {
        self.filters * self.width * self.height
    }
}

pub fn build_params<T: Scalar, R: Rng>(shape: &QNetShape, rng: &mut R) -> Result<NetworkParams<T>, NnError> {
    let mut p = NetworkParams::new();
    layers::add_conv_tower(&mut p, PLANES, shape.filters, shape.blocks, rng)?;
    layers::add_dense(&mut p, "value.hidden", shape.flat(), shape.value_hidden, rng)?;
    layers::add_dense(&mut p, "value.out", shape.value_hidden, 1, rng)?;
    layers::add_dense(&mut p, "adv.hidden", shape.flat(), shape.advantage_hidden, rng)?;
    layers::add_dense(&mut p, "adv.out", shape.advantage_hidden, shape.actions(), rng)?;
    Ok(p)
}

/// `Q = V + (A - mean(A))`, row-wise. `value` is `[N, 1]`, `advantage` `[N, A]`.
pub fn dueling_combine<T: Scalar>(g: &mut Graph<'_, T>, value: NodeId, advantage: NodeId) -> Result<NodeId, NnError> {
    let mean = g.mean_last(advantage)?;
    let neg = g.scale(mean, -T::one());
    let centred = g.add_column(advantage, neg)?;
    g.add_column(centred, value)
}

/// Q-values `[N, 3*W*H]` for a `[N, 9, H, W]` input node.
pub fn q_graph<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, shape: &QNetShape) -> Result<NodeId, NnError> {
    let tower = layers::conv_tower(g, x, shape.blocks)?;
    let flat = g.flatten_batch(tower)?;
    let v = layers::dense(g, flat, "value.hidden")?;
    let v = g.relu(v);
    let v = layers::dense(g, v, "value.out")?;
    let a = layers::dense(g, flat, "adv.hidden")?;
    let a = g.relu(a);
    let a = layers::dense(g, a, "adv.out")?;
    dueling_combine(g, v, a)
}

/// Batched forward pass without recording gradients for later use.
pub fn q_values(params: &NetworkParams<f32>, shape: &QNetShape, states: &[&Tensor<f32>]) -> Result<Tensor<f32>, NnError> {
    let x = Tensor::stack(states.iter().copied())?;
    let mut g = Graph::new(params);
    let input = g.input(x);
    let q = q_graph(&mut g, input, shape)?;
    Ok(g.value(q).clone())
}

/// Q-values for a single `[9, H, W]` state.
pub fn q_forward(params: &NetworkParams<f32>, shape: &QNetShape, state: &Tensor<f32>) -> Result<Vec<f32>, NnError> {
    Ok(q_values(params, shape, &[state])?.into_data())
}
