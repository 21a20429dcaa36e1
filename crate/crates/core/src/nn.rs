//! Parameter storage, layers and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::tensor::{ConvGeometry, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors owned by one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter in `graph`, trainable or frozen.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Vec<Var<'g>> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect()
    }

    /// Order-sensitive FNV-1a hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Fan-in scaled normal initialisation, `std = gain·sqrt(2 / fan_in)`.
pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    /// Registers a convolution whose padding preserves size at stride 1
    /// (`pad = (k - 1) / 2`) or halves it for the 4x4 stride-2 layers.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let pad = if stride == 1 { (kernel - 1) / 2 } else { (kernel - stride) / 2 };
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, gain, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            geometry: ConvGeometry::new(kernel, stride, pad),
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'g>(&self, x: Var<'g>, params: &[Var<'g>]) -> Var<'g> {
        x.conv2d(params[self.weight.0], self.geometry)
            .add_channel_bias(params[self.bias.0])
    }
}

/// Per-channel learnable negative slope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PRelu {
    pub slopes: ParamId,
}

impl PRelu {
    pub const INITIAL_SLOPE: f64 = 0.25;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let slopes = store.add(format!("{name}.slope"), Tensor::full(&[channels], Self::INITIAL_SLOPE));
        Self { slopes }
    }

    pub fn forward<'g>(&self, x: Var<'g>, params: &[Var<'g>]) -> Var<'g> {
        x.prelu(params[self.slopes.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), he_normal(&[inputs, outputs], inputs, 1.0, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias }
    }

    /// `x: [N, inputs]` -> `[N, outputs]`.
    pub fn forward<'g>(&self, x: Var<'g>, params: &[Var<'g>]) -> Var<'g> {
        x.matmul(params[self.weight.0]).add_channel_bias(params[self.bias.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam over one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), store.len());
        self.steps += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.tensors_mut()[i].data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_padding_preserves_or_halves_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let same = Conv2d::new(&mut store, "a", 3, 4, 5, 1, 1.0, &mut rng);
        let down = Conv2d::new(&mut store, "b", 4, 4, 4, 2, 1.0, &mut rng);
        let g = Graph::new();
        let p = store.bind(&g, true);
        let x = g.constant(Tensor::zeros(&[1, 3, 16, 12]));
        let y = same.forward(x, &p);
        assert_eq!(y.shape(), vec![1, 4, 16, 12]);
        assert_eq!(down.forward(y, &p).shape(), vec![1, 4, 8, 6]);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(vec![2], vec![3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..500 {
            let g = Graph::new();
            let p = store.bind(&g, true);
            let loss = p[id.0].add_scalar(-1.0).square().sum_all();
            let grads = g.grad_tensors(loss, &p);
            opt.step(&mut store, &grads);
        }
        for v in store.get(id).data() {
            assert!((v - 1.0).abs() < 1e-2, "{v}");
        }
    }
}
