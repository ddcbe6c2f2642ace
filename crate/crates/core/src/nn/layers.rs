//! Parameter layouts and graph builders for the conv tower used by both networks.

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::NetworkParams;
use super::tensor::Scalar;
use crate::error::NnError;

pub const KERNEL: usize = 3;

pub fn add_conv<T: Scalar, R: Rng>(
    params: &mut NetworkParams<T>,
    prefix: &str,
    in_channels: usize,
    filters: usize,
    k: usize,
    rng: &mut R,
) -> Result<(), NnError> {
    params.add_he_uniform(&format!("{prefix}.w"), &[filters, in_channels, k, k], in_channels * k * k, rng)?;
    params.add_zeros(&format!("{prefix}.b"), &[filters])?;
    Ok(())
}

pub fn add_dense<T: Scalar, R: Rng>(
    params: &mut NetworkParams<T>,
    prefix: &str,
    inputs: usize,
    outputs: usize,
    rng: &mut R,
) -> Result<(), NnError> {
    params.add_he_uniform(&format!("{prefix}.w"), &[outputs, inputs], inputs, rng)?;
    params.add_zeros(&format!("{prefix}.b"), &[outputs])?;
    Ok(())
}

pub fn add_residual_block<T: Scalar, R: Rng>(
    params: &mut NetworkParams<T>,
    prefix: &str,
    filters: usize,
    rng: &mut R,
) -> Result<(), NnError> {
    add_conv(params, &format!("{prefix}.conv1"), filters, filters, KERNEL, rng)?;
    add_conv(params, &format!("{prefix}.conv2"), filters, filters, KERNEL, rng)
}

pub fn conv<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, prefix: &str) -> Result<NodeId, NnError> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    g.conv2d(x, w, b)
}

pub fn dense<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, prefix: &str) -> Result<NodeId, NnError> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    g.dense(x, w, b)
}

/// conv → relu → conv, add the block input, relu. No normalization.
pub fn residual_block<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, prefix: &str) -> Result<NodeId, NnError> {
    let h = conv(g, x, &format!("{prefix}.conv1"))?;
    let h = g.relu(h);
    let h = conv(g, h, &format!("{prefix}.conv2"))?;
    let sum = g.add(h, x)?;
    Ok(g.relu(sum))
}

/// Stem conv followed by `blocks` residual blocks. Returns the tower output node.
pub fn conv_tower<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, blocks: usize) -> Result<NodeId, NnError> {
    let h = conv(g, x, "stem")?;
    let mut h = g.relu(h);
    for i in 0..blocks {
        h = residual_block(g, h, &format!("block{i}"))?;
    }
    Ok(h)
}

pub fn add_conv_tower<T: Scalar, R: Rng>(
    params: &mut NetworkParams<T>,
    in_channels: usize,
    filters: usize,
    blocks: usize,
    rng: &mut R,
) -> Result<(), NnError> {
    add_conv(params, "stem", in_channels, filters, KERNEL, rng)?;
    for i in 0..blocks {
        add_residual_block(params, &format!("block{i}"), filters, rng)?;
    }
    Ok(())
}
