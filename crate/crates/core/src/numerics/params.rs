//! Parameter containers generic over the leaf type: `Tensor` for stored
//! weights, [`Var`] once bound to a [`Graph`].
//!
//! Every container has a `map` that visits leaves in a fixed order. That one
//! traversal drives binding, gradient collection, flattening for
//! checkpoints and optimizer updates.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ConvSpec, Graph, Tensor, Var};
use crate::error::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normal(0, std²) truncated to ±2·std by rejection.
pub fn trunc_normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Uniform(−1/√fan_in, 1/√fan_in).
pub fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Token-wise affine map; `weight` is `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> Linear<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl Linear<Tensor> {
    /// Truncated normal (std 0.02) weights, zero bias.
    pub fn init(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: trunc_normal(rng, &[inputs, outputs], 0.02),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Tensor::zeros([inputs, outputs]),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn identity(width: usize) -> Self {
        Linear {
            weight: Tensor::eye(width),
            bias: Tensor::zeros([width]),
        }
    }
}

impl Linear<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.weight, self.bias)
    }
}

/// Convolution (or transposed convolution) with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<P> {
    pub spec: ConvSpec,
    pub weight: P,
    pub bias: P,
}

impl<P> Conv<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Conv<Q> {
        Conv {
            spec: self.spec,
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl Conv<Tensor> {
    /// Fan-in uniform kernels, zero bias.
    pub fn init(rng: &mut impl Rng, spec: ConvSpec) -> Self {
        let shape = spec.kernel_shape();
        let fan_in = shape[1] * shape[2] * shape[3];
        Conv {
            spec,
            weight: fan_in_uniform(rng, &shape, fan_in),
            bias: Tensor::zeros([spec.out_channels]),
        }
    }

    /// Kernels laid out `[in, out, kh, kw]` for a transposed convolution.
    pub fn init_transposed(rng: &mut impl Rng, spec: ConvSpec) -> Self {
        let shape = spec.transposed_kernel_shape();
        let fan_in = shape[0] * shape[2] * shape[3];
        Conv {
            spec,
            weight: fan_in_uniform(rng, &shape, fan_in),
            bias: Tensor::zeros([spec.out_channels]),
        }
    }

    pub fn zeros(spec: ConvSpec) -> Self {
        Conv {
            spec,
            weight: Tensor::zeros(spec.kernel_shape()),
            bias: Tensor::zeros([spec.out_channels]),
        }
    }
}

impl Conv<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.spec, self.weight, self.bias)
    }

    pub fn forward_transposed(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.transposed_conv2d(x, self.spec, self.weight, self.bias)
    }
}

/// Layer-norm affine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gamma: P,
    pub beta: P,
}

impl<P> Norm<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Norm<Q> {
        Norm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
}

impl Norm<Tensor> {
    pub fn init(width: usize) -> Self {
        Norm {
            gamma: Tensor::full([width], 1.0),
            beta: Tensor::zeros([width]),
        }
    }
}

impl Norm<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.layer_norm(x, self.gamma, self.beta, LAYER_NORM_EPS)
    }
}
