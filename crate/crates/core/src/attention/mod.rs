//! The locally multiplicative window transformer block.
//!
//! Window attention (W-MSA) runs over non-overlapping M×M windows with a
//! learned relative position bias. Local attention (L-MSA) runs inside each
//! 2×2 sub-window of those windows. The two are multiplied per head, then
//! projected, then followed by a feed-forward network with a depthwise 3×3
//! convolution (LeFF).
//!
//! Every public function has a pure form over [`Tensor`]s with the nominal
//! shapes and a `_graph` form that records onto a [`Graph`]. Inside the
//! graph, tokens are a `[tokens × C]` matrix with heads side by side on the
//! feature axis.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::layout::invert;
use crate::numerics::params::{Conv, Linear, Norm};
use crate::numerics::{
    subwindow_indices, window_indices, Activation, ConvSpec, Graph, Tensor, Var,
};

pub const LEFF_EXPANSION: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct WmsaWeights<P> {
    pub heads: usize,
    pub window: usize,
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    /// `[heads × (2M−1)²]`.
    pub bias_table: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmsaWeights<P> {
    pub heads: usize,
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeffWeights<P> {
    pub expand: Linear<P>,
    pub depthwise: Conv<P>,
    pub contract: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<P> {
    pub norm1: Norm<P>,
    pub wmsa: WmsaWeights<P>,
    pub lmsa: LmsaWeights<P>,
    /// Shared projection applied after the two branches are multiplied.
    pub out_proj: Linear<P>,
    pub norm2: Norm<P>,
    pub leff: LeffWeights<P>,
}

impl<P> WmsaWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> WmsaWeights<Q> {
        WmsaWeights {
            heads: self.heads,
            window: self.window,
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
            bias_table: f(&self.bias_table),
        }
    }
}

impl<P> LmsaWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> LmsaWeights<Q> {
        LmsaWeights {
            heads: self.heads,
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
        }
    }
}

impl<P> LeffWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> LeffWeights<Q> {
        LeffWeights {
            expand: self.expand.map(f),
            depthwise: self.depthwise.map(f),
            contract: self.contract.map(f),
        }
    }
}

impl<P> BlockWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BlockWeights<Q> {
        BlockWeights {
            norm1: self.norm1.map(f),
            wmsa: self.wmsa.map(f),
            lmsa: self.lmsa.map(f),
            out_proj: self.out_proj.map(f),
            norm2: self.norm2.map(f),
            leff: self.leff.map(f),
        }
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || channels == 0 || channels % heads != 0 {
        return Err(Error::Config(format!(
            "{channels} channels cannot be split into {heads} heads"
        )));
    }
    Ok(())
}

fn table_len(m: usize) -> usize {
    (2 * m - 1) * (2 * m - 1)
}

impl WmsaWeights<Tensor> {
    pub fn init(rng: &mut impl Rng, channels: usize, heads: usize, window: usize) -> Result<Self> {
        check_heads(channels, heads)?;
        if window == 0 {
            return Err(Error::Config("window size must be positive".into()));
        }
        Ok(WmsaWeights {
            heads,
            window,
            query: Linear::init(rng, channels, channels),
            key: Linear::init(rng, channels, channels),
            value: Linear::init(rng, channels, channels),
            bias_table: Tensor::zeros([heads, table_len(window)]),
        })
    }

    pub fn channels(&self) -> usize {
        self.query.weight.shape()[0]
    }
}

impl LmsaWeights<Tensor> {
    pub fn init(rng: &mut impl Rng, channels: usize, heads: usize) -> Result<Self> {
        check_heads(channels, heads)?;
        Ok(LmsaWeights {
            heads,
            query: Linear::init(rng, channels, channels),
            key: Linear::init(rng, channels, channels),
            value: Linear::init(rng, channels, channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.query.weight.shape()[0]
    }
}

impl LeffWeights<Tensor> {
    pub fn init(rng: &mut impl Rng, channels: usize) -> Self {
        let hidden = LEFF_EXPANSION * channels;
        LeffWeights {
            expand: Linear::init(rng, channels, hidden),
            depthwise: Conv::init(rng, ConvSpec::depthwise(hidden, 3, 1)),
            contract: Linear::init(rng, hidden, channels),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        let hidden = LEFF_EXPANSION * channels;
        LeffWeights {
            expand: Linear::zeros(channels, hidden),
            depthwise: Conv::zeros(ConvSpec::depthwise(hidden, 3, 1)),
            contract: Linear::zeros(hidden, channels),
        }
    }
}

impl BlockWeights<Tensor> {
    pub fn init(rng: &mut impl Rng, channels: usize, heads: usize, window: usize) -> Result<Self> {
        Ok(BlockWeights {
            norm1: Norm::init(channels),
            wmsa: WmsaWeights::init(rng, channels, heads, window)?,
            lmsa: LmsaWeights::init(rng, channels, heads)?,
            out_proj: Linear::init(rng, channels, channels),
            norm2: Norm::init(channels),
            leff: LeffWeights::init(rng, channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.norm1.gamma.len()
    }
}

/// Table slot for every (query, key) token pair of an M×M window, row-major.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let span = 2 * m - 1;
    let tokens = m * m;
    let mut idx = Vec::with_capacity(tokens * tokens);
    for p in 0..tokens {
        let (py, px) = (p / m, p % m);
        for q in 0..tokens {
            let (qy, qx) = (q / m, q % m);
            idx.push((py + m - 1 - qy) * span + (px + m - 1 - qx));
        }
    }
    idx
}

fn bias_gather_index(m: usize, heads: usize) -> Arc<[usize]> {
    let rel = relative_position_index(m);
    let stride = table_len(m);
    (0..heads)
        .flat_map(|h| rel.iter().map(move |&r| h * stride + r))
        .collect()
}

fn check_table(m: usize, table: &Tensor) -> Result<usize> {
    if m == 0 {
        return Err(Error::Config("window size must be positive".into()));
    }
    let per_head = table_len(m);
    if table.is_empty() || table.len() % per_head != 0 {
        return Err(Error::Config(format!(
            "bias table with {} entries does not hold {per_head} entries per head for M={m}",
            table.len()
        )));
    }
    Ok(table.len() / per_head)
}

/// `[heads × M² × M²]` bias from a `[heads × (2M−1)²]` table.
pub fn relative_position_bias(m: usize, table: &Tensor) -> Result<Tensor> {
    let heads = check_table(m, table)?;
    let idx = bias_gather_index(m, heads);
    let data = idx.iter().map(|&i| table.data()[i]).collect();
    Tensor::new([heads, m * m, m * m], data)
}

pub fn relative_position_bias_graph(g: &mut Graph, m: usize, table: Var) -> Result<Var> {
    let heads = check_table(m, g.value(table))?;
    let idx = bias_gather_index(m, heads);
    g.gather(table, idx, 1, &[heads, m * m, m * m])
}

/// Window-ordered tokens `[N·M² × C]` to per-head outputs, heads side by side.
pub fn wmsa_graph(g: &mut Graph, tokens: Var, w: &WmsaWeights<Var>) -> Result<Var> {
    let q = w.query.forward(g, tokens)?;
    let k = w.key.forward(g, tokens)?;
    let v = w.value.forward(g, tokens)?;
    let bias = relative_position_bias_graph(g, w.window, w.bias_table)?;
    g.attention(q, k, v, Some(bias), w.window * w.window, w.heads)
}

fn subwindow_gather_index(windows: usize, m: usize) -> Result<Arc<[usize]>> {
    let local = subwindow_indices(m)?;
    let tokens = m * m;
    Ok((0..windows)
        .flat_map(|n| local.iter().map(move |&i| n * tokens + i))
        .collect())
}

/// Window-ordered tokens `[N·M² × C]` to per-head sub-window attention
/// outputs, returned in window order.
pub fn lmsa_graph(g: &mut Graph, tokens: Var, w: &LmsaWeights<Var>, m: usize) -> Result<Var> {
    let (rows, c) = g.value(tokens).dims2("lmsa")?;
    if m == 0 || rows % (m * m) != 0 {
        return Err(Error::Shape(format!("{rows} tokens do not split into windows of M={m}")));
    }
    let idx = subwindow_gather_index(rows / (m * m), m)?;
    let back: Arc<[usize]> = invert(&idx).into();
    let grouped = g.gather(tokens, idx, c, &[rows, c])?;
    let q = w.query.forward(g, grouped)?;
    let k = w.key.forward(g, grouped)?;
    let v = w.value.forward(g, grouped)?;
    let z = g.attention(q, k, v, None, 4, w.heads)?;
    g.gather(z, back, c, &[rows, c])
}

pub fn fuse_graph(g: &mut Graph, y: Var, z: Var, out_proj: &Linear<Var>) -> Result<Var> {
    let product = g.mul(y, z)?;
    out_proj.forward(g, product)
}

/// Pixel-ordered tokens `[h·w × C]` through expand, GELU, depthwise 3×3,
/// GELU, contract.
pub fn leff_graph(g: &mut Graph, tokens: Var, w: &LeffWeights<Var>, h: usize, wd: usize) -> Result<Var> {
    let (rows, _) = g.value(tokens).dims2("leff")?;
    if rows != h * wd {
        return Err(Error::Shape(format!("{rows} tokens do not match a {h}x{wd} feature map")));
    }
    let hidden = w.expand.forward(g, tokens)?;
    let hidden = g.activation(Activation::Gelu, hidden);
    let planes = g.transpose(hidden)?;
    let width = g.value(planes).shape()[0];
    let planes = g.reshape(planes, &[width, h, wd])?;
    let planes = w.depthwise.forward(g, planes)?;
    let planes = g.activation(Activation::Gelu, planes);
    let planes = g.reshape(planes, &[width, h * wd])?;
    let hidden = g.transpose(planes)?;
    w.contract.forward(g, hidden)
}

/// `[C × h × w]` feature map through one block.
pub fn block_graph(g: &mut Graph, x: Var, w: &BlockWeights<Var>) -> Result<Var> {
    let (c, h, wd) = g.value(x).dims3("lmwin_block")?;
    let m = w.wmsa.window;
    let order: Arc<[usize]> = window_indices(h, wd, m)?.into();
    let back: Arc<[usize]> = invert(&order).into();

    let flat = g.reshape(x, &[c, h * wd])?;
    let tokens = g.transpose(flat)?;
    let normed = w.norm1.forward(g, tokens)?;
    let windowed = g.gather(normed, order, c, &[h * wd, c])?;
    let y = wmsa_graph(g, windowed, &w.wmsa)?;
    let z = lmsa_graph(g, windowed, &w.lmsa, m)?;
    let fused = fuse_graph(g, y, z, &w.out_proj)?;
    let fused = g.gather(fused, back, c, &[h * wd, c])?;
    let attended = g.add(tokens, fused)?;

    let normed = w.norm2.forward(g, attended)?;
    let ff = leff_graph(g, normed, &w.leff, h, wd)?;
    let out = g.add(attended, ff)?;
    let out = g.transpose(out)?;
    g.reshape(out, &[c, h, wd])
}

fn split_heads(t: &Tensor, windows: usize, heads: usize) -> Result<Tensor> {
    let (rows, c) = t.dims2("split_heads")?;
    let len = rows / windows;
    let d = c / heads;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for n in 0..windows {
        for h in 0..heads {
            for i in 0..len {
                let row = (n * len + i) * c + h * d;
                out.extend_from_slice(&src[row..row + d]);
            }
        }
    }
    Tensor::new([windows, heads, len, d], out)
}

fn merge_heads(t: &Tensor) -> Result<Tensor> {
    let &[windows, heads, len, d] = t.shape() else {
        return Err(Error::Shape(format!("expected [N × heads × L × d], got {:?}", t.shape())));
    };
    let c = heads * d;
    let mut out = vec![0.0; t.len()];
    for n in 0..windows {
        for h in 0..heads {
            for i in 0..len {
                let src = ((n * heads + h) * len + i) * d;
                let dst = (n * len + i) * c + h * d;
                out[dst..dst + d].copy_from_slice(&t.data()[src..src + d]);
            }
        }
    }
    Tensor::new([windows * len, c], out)
}

fn window_tokens(windows: &Tensor, channels: usize) -> Result<(usize, usize, Tensor)> {
    let (n, len, c) = windows.dims3("window tokens")?;
    if c != channels {
        return Err(Error::Config(format!(
            "window tokens have {c} channels, weights expect {channels}"
        )));
    }
    Ok((n, len, windows.clone().reshape([n * len, c])?))
}

/// `[N × M² × C]` windows to per-head outputs `[N × k × M² × d_k]`.
pub fn wmsa(windows: &Tensor, w: &WmsaWeights<Tensor>) -> Result<Tensor> {
    check_heads(w.channels(), w.heads)?;
    let (n, len, flat) = window_tokens(windows, w.channels())?;
    if len != w.window * w.window {
        return Err(Error::Shape(format!(
            "windows hold {len} tokens, expected M²={} for M={}",
            w.window * w.window,
            w.window
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(flat);
    let bound = w.map(&mut |t| g.constant(t.clone()));
    let y = wmsa_graph(&mut g, x, &bound)?;
    split_heads(g.value(y), n, w.heads)
}

/// `[N × M² × C]` windows to per-head sub-window outputs `[N × k × M² × d_k]`
/// in window token order.
pub fn lmsa(windows: &Tensor, w: &LmsaWeights<Tensor>) -> Result<Tensor> {
    check_heads(w.channels(), w.heads)?;
    let (n, len, flat) = window_tokens(windows, w.channels())?;
    let m = (len as f64).sqrt().round() as usize;
    if m * m != len {
        return Err(Error::Shape(format!("{len} tokens per window is not a square M×M window")));
    }
    let mut g = Graph::new();
    let x = g.constant(flat);
    let bound = w.map(&mut |t| g.constant(t.clone()));
    let z = lmsa_graph(&mut g, x, &bound, m)?;
    split_heads(g.value(z), n, w.heads)
}

/// Per-head product of the two branches, heads concatenated, then projected.
pub fn fuse_heads(y: &Tensor, z: &Tensor, out_proj: &Linear<Tensor>) -> Result<Tensor> {
    if y.shape() != z.shape() {
        return Err(Error::Dimension {
            op: "fuse_heads",
            left: y.shape().to_vec(),
            right: z.shape().to_vec(),
        });
    }
    let (n, len) = (y.shape()[0], y.shape().get(2).copied().unwrap_or(0));
    let mut g = Graph::new();
    let yv = g.constant(merge_heads(y)?);
    let zv = g.constant(merge_heads(z)?);
    let proj = out_proj.map(&mut |t| g.constant(t.clone()));
    let out = fuse_graph(&mut g, yv, zv, &proj)?;
    let c = g.value(out).last_dim();
    g.value(out).clone().reshape([n, len, c])
}

pub fn leff(tokens: &Tensor, w: &LeffWeights<Tensor>, spatial: (usize, usize)) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(tokens.clone());
    let bound = w.map(&mut |t| g.constant(t.clone()));
    let out = leff_graph(&mut g, x, &bound, spatial.0, spatial.1)?;
    Ok(g.value(out).clone())
}

pub fn lmwin_block(x: &Tensor, w: &BlockWeights<Tensor>, m: usize) -> Result<Tensor> {
    if m != w.wmsa.window {
        return Err(Error::Config(format!(
            "block weights were built for M={}, called with M={m}",
            w.wmsa.window
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let bound = w.map(&mut |t| g.constant(t.clone()));
    let out = block_graph(&mut g, xv, &bound)?;
    Ok(g.value(out).clone())
}
