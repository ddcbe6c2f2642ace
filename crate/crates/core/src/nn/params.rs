//! Named parameter tensors with Adam optimizer state.

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::NnError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    /// Adam first moment.
    pub m: Tensor<T>,
    /// Adam second moment.
    pub v: Tensor<T>,
}

/// All learnable weights of one network plus its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
    step: u64,
}

impl<T: Scalar> Default for NetworkParams<T> {
    fn default() -> Self {
        Self { entries: Vec::new(), step: 0 }
    }
}

/// Per-parameter gradients, indexed like [`NetworkParams::entries`]. `None` means zero.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    pub(crate) per_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(count: usize) -> Self {
        Self { per_param: vec![None; count] }
    }

    pub fn from_tensors(grads: Vec<Option<Tensor<T>>>) -> Self {
        Self { per_param: grads }
    }

    pub fn get(&self, index: usize) -> Option<&Tensor<T>> {
        self.per_param.get(index).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.per_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_param.is_empty()
    }
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<usize, NnError> {
        if self.index_of(name).is_some() {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let shape = value.shape().to_vec();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        Ok(self.entries.len() - 1)
    }

    /// He-uniform weights: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn add_he_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<usize, NnError> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize, NnError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].value
    }

    /// Overwrites a parameter's values. The shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), NnError> {
        let i = self
            .index_of(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if self.entries[i].value.shape() != value.shape() {
            return Err(NnError::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.entries[i].value.shape(),
                value.shape()
            )));
        }
        self.entries[i].value = value;
        Ok(())
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    /// Copies parameter values (not optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &Self) -> Result<(), NnError> {
        if self.entries.len() != other.entries.len() {
            return Err(NnError::Shape("parameter count mismatch".into()));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(NnError::Shape(format!(
                    "parameter `{}` does not match `{}`",
                    dst.name, src.name
                )));
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// One Adam update. Rejects the whole update if any gradient is non-finite.
    pub fn adam_step(&mut self, grads: &Gradients<T>, lr: f64) -> Result<(), NnError> {
        for (i, entry) in self.entries.iter().enumerate() {
            if let Some(g) = grads.get(i) {
                if g.shape() != entry.value.shape() {
                    return Err(NnError::Shape(format!(
                        "gradient for `{}` has shape {:?}, expected {:?}",
                        entry.name,
                        g.shape(),
                        entry.value.shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(NnError::NonFiniteGradient(entry.name.clone()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(ADAM_BETA1);
        let b2 = T::from_f64(ADAM_BETA2);
        let one = T::one();
        let bias1 = T::from_f64(1.0 - ADAM_BETA1.powi(t));
        let bias2 = T::from_f64(1.0 - ADAM_BETA2.powi(t));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(ADAM_EPS);
        for (i, entry) in self.entries.iter_mut().enumerate() {
            let g = grads.get(i);
            let ParamEntry { value, m, v, .. } = entry;
            let values = value.data_mut();
            let ms = m.data_mut();
            let vs = v.data_mut();
            for j in 0..values.len() {
                let gj = g.map_or(T::zero(), |g| g.data()[j]);
                ms[j] = b1 * ms[j] + (one - b1) * gj;
                vs[j] = b2 * vs[j] + (one - b2) * gj * gj;
                let m_hat = ms[j] / bias1;
                let v_hat = vs[j] / bias2;
                values[j] = values[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    m: e.m.cast(),
                    v: e.v.cast(),
                })
                .collect(),
            step: self.step,
        }
    }

    /// Same names and shapes, all values zero, fresh optimizer state.
    pub fn zeroed(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: Tensor::zeros(e.value.shape()),
                    m: Tensor::zeros(e.value.shape()),
                    v: Tensor::zeros(e.value.shape()),
                })
                .collect(),
            step: 0,
        }
    }
}
