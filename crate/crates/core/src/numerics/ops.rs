//! Pure forward ops. Each one bumps the FLOP counter by its documented
//! cost; the tape in [`super::Graph`] reuses these for its forward pass.

use super::counter::{self, FlopKind};
use super::kernels::{self, ConvGeom, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// Geometry and channel layout of one convolution layer.
///
/// Kernel tensors are `[out, in, kh, kw]` for ordinary convolutions,
/// `[channels, 1, kh, kw]` for depthwise ones and `[in, out, kh, kw]` when the
/// spec is used for a transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depthwise: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            depthwise: false,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, padding: usize) -> Self {
        ConvSpec {
            depthwise: true,
            ..Self::new(channels, channels, kernel, 1, padding)
        }
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        if self.depthwise {
            [self.out_channels, 1, self.kernel_h, self.kernel_w]
        } else {
            [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
        }
    }

    pub fn transposed_kernel_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel_h, self.kernel_w]
    }

    /// `floor((in + 2p − k)/s) + 1`, or an error when that would be < 1.
    pub fn output_extent(&self, input_h: usize, input_w: usize) -> Result<(usize, usize)> {
        let ext = |n: usize, k: usize| -> Option<usize> {
            (n + 2 * self.padding).checked_sub(k).map(|r| r / self.stride + 1)
        };
        match (ext(input_h, self.kernel_h), ext(input_w, self.kernel_w)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "{}x{} kernel with padding {} does not fit a {input_h}x{input_w} input",
                self.kernel_h, self.kernel_w, self.padding
            ))),
        }
    }

    /// `(in − 1)·s − 2p + k`.
    pub fn transposed_output_extent(&self, input_h: usize, input_w: usize) -> Result<(usize, usize)> {
        let ext = |n: usize, k: usize| ((n - 1) * self.stride + k).checked_sub(2 * self.padding).filter(|&v| v > 0);
        match (ext(input_h, self.kernel_h), ext(input_w, self.kernel_w)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "transposed convolution on {input_h}x{input_w} yields an empty output"
            ))),
        }
    }

    fn check(&self) -> Result<()> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Config(format!("degenerate convolution spec {self:?}")));
        }
        if self.depthwise && self.in_channels != self.out_channels {
            return Err(Error::Config(format!(
                "depthwise convolution needs in == out channels, got {} and {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub(crate) fn geometry(&self, input: &Tensor) -> Result<ConvGeom> {
        self.check()?;
        let (c, h, w) = input.dims3("conv2d")?;
        if c != self.in_channels {
            return Err(Error::Dimension {
                op: "conv2d input channels",
                left: input.shape().to_vec(),
                right: vec![self.in_channels],
            });
        }
        let (out_h, out_w) = self.output_extent(h, w)?;
        Ok(ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh: self.kernel_h,
            kw: self.kernel_w,
            stride: self.stride,
            pad: self.padding,
            out_h,
            out_w,
        })
    }

    /// Geometry of the forward convolution whose adjoint is this transposed
    /// convolution: it maps the (larger) output back onto the input grid.
    pub(crate) fn transposed_geometry(&self, input: &Tensor) -> Result<ConvGeom> {
        self.check()?;
        if self.depthwise {
            return Err(Error::Config("depthwise transposed convolution is not supported".into()));
        }
        let (c, h, w) = input.dims3("transposed_conv2d")?;
        if c != self.in_channels {
            return Err(Error::Dimension {
                op: "transposed_conv2d input channels",
                left: input.shape().to_vec(),
                right: vec![self.in_channels],
            });
        }
        let (out_h, out_w) = self.transposed_output_extent(h, w)?;
        Ok(ConvGeom {
            channels: self.out_channels,
            height: out_h,
            width: out_w,
            kh: self.kernel_h,
            kw: self.kernel_w,
            stride: self.stride,
            pad: self.padding,
            out_h: h,
            out_w: w,
        })
    }
}

fn check_param(name: &'static str, t: &Tensor, expected: &[usize]) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::Config(format!(
            "{name} has shape {:?}, spec requires {expected:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    kernels::gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), &mut out, 0.0);
    counter::add(FlopKind::Linear, (m * k * n) as u64);
    Tensor::new([m, n], out)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    counter::add(FlopKind::Elementwise, a.len() as u64);
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape(), data)
}

/// Softmax over the last axis, computed with max subtraction.
pub fn softmax_lastdim(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    kernels::softmax_rows(out.data_mut(), t.last_dim());
    counter::add(FlopKind::Softmax, t.len() as u64);
    out
}

pub(crate) fn layer_norm_full(
    t: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = t.last_dim();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Dimension {
            op: "layer_norm affine",
            left: t.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    if eps <= 0.0 {
        return Err(Error::Argument(format!("layer norm eps must be positive, got {eps}")));
    }
    let (xhat, inv_std) = kernels::layer_norm_stats(t.data(), c, eps);
    let mut out = xhat.clone();
    for row in out.chunks_exact_mut(c) {
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    counter::add(FlopKind::Norm, 2 * t.len() as u64);
    Ok((Tensor::new(t.shape(), out)?, xhat, inv_std))
}

/// Normalise every last-axis slice to zero mean and unit variance, then
/// apply `gamma`, `beta`.
pub fn layer_norm(t: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_full(t, gamma, beta, eps).map(|r| r.0)
}

pub fn conv2d(input: &Tensor, spec: &ConvSpec, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = spec.geometry(input)?;
    check_param("conv kernels", kernels, &spec.kernel_shape())?;
    check_param("conv bias", bias, &[spec.out_channels])?;
    let plane = g.out_h * g.out_w;
    let mut out = vec![0.0; spec.out_channels * plane];
    if spec.depthwise {
        kernels::depthwise_forward(&g, input.data(), kernels.data(), &mut out);
        counter::add(FlopKind::Conv, (plane * g.channels * g.kh * g.kw) as u64);
    } else {
        let cols = kernels::im2col(&g, input.data());
        kernels::gemm(
            MatRef::new(kernels.data(), spec.out_channels, g.col_rows()),
            MatRef::new(&cols, g.col_rows(), plane),
            &mut out,
            0.0,
        );
        counter::add(FlopKind::Conv, (plane * spec.out_channels * g.col_rows()) as u64);
    }
    add_channel_bias(&mut out, bias.data(), plane);
    Tensor::new([spec.out_channels, g.out_h, g.out_w], out)
}

/// Adjoint of [`conv2d`] with the same geometry, plus a bias.
pub fn transposed_conv2d(input: &Tensor, spec: &ConvSpec, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = spec.transposed_geometry(input)?;
    check_param("transposed conv kernels", kernels, &spec.transposed_kernel_shape())?;
    check_param("transposed conv bias", bias, &[spec.out_channels])?;
    let in_plane = g.out_h * g.out_w;
    let mut cols = vec![0.0; g.col_rows() * in_plane];
    kernels::gemm(
        MatRef::new(kernels.data(), spec.in_channels, g.col_rows()).t(),
        MatRef::new(input.data(), spec.in_channels, in_plane),
        &mut cols,
        0.0,
    );
    counter::add(FlopKind::Conv, (in_plane * spec.in_channels * g.col_rows()) as u64);
    let plane = g.height * g.width;
    let mut out = vec![0.0; spec.out_channels * plane];
    kernels::col2im(&g, &cols, &mut out);
    add_channel_bias(&mut out, bias.data(), plane);
    Tensor::new([spec.out_channels, g.height, g.width], out)
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chan, b) in out.chunks_exact_mut(plane).zip(bias) {
        chan.iter_mut().for_each(|v| *v += b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    /// Exact erf-based GELU.
    Gelu,
}

pub fn activation(kind: Activation, t: &Tensor) -> Tensor {
    counter::add(FlopKind::Activation, t.len() as u64);
    match kind {
        Activation::Sigmoid => t.map(kernels::sigmoid),
        Activation::Gelu => t.map(kernels::gelu),
    }
}
