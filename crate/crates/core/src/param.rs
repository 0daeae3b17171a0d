//! Named learnable parameters, deterministic initialization and SGD.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its accumulated gradient and momentum buffer.
///
/// `shape` is the logical shape written to checkpoints (rank 1 for biases,
/// rank 2 for FC weights, rank 4 for kernels); `value` always stores the
/// same elements right-padded to rank 4.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Tensor) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.len() > 4 {
            return config_err(format!("param {name}: rank {} not in 1..=4", shape.len()));
        }
        if padded_dims(&shape) != value.dims() {
            return config_err(format!(
                "param {name}: logical shape {shape:?} does not match storage {:?}",
                value.dims()
            ));
        }
        let dims = value.dims();
        Ok(Self {
            name,
            shape,
            value,
            grad: Tensor::zeros(dims),
            momentum: Tensor::zeros(dims),
        })
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Right-pad a logical shape with ones up to rank 4.
pub fn padded_dims(shape: &[usize]) -> [usize; 4] {
    let mut dims = [1; 4];
    dims[..shape.len()].copy_from_slice(shape);
    dims
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: Param) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return config_err(format!("duplicate param name {}", param.name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// FNV-1a, used to derive a per-parameter RNG stream from its name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// RNG for one named parameter. Depends only on `(seed, name)`, so
/// initialization does not depend on construction order.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name_hash(name));
    rng
}

/// He-uniform: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform(dims: [usize; 4], fan_in: usize, seed: u64, name: &str) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = param_rng(seed, name);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(dims, data).expect("he_uniform dims")
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `g ← grad + wd·w; v ← momentum·v + g; w ← w − lr·v`. Gradients are zeroed.
pub fn sgd_step(store: &mut ParamStore, lr: f64, momentum: f64, weight_decay: f64) {
    for p in store.iter_mut() {
        let Param { value, grad, momentum: buf, .. } = p;
        for ((w, g), v) in value.data_mut().iter_mut().zip(grad.data_mut()).zip(buf.data_mut()) {
            let step = *g + weight_decay * *w;
            *v = momentum * *v + step;
            *w -= lr * *v;
            *g = 0.0;
        }
    }
}
