//! The full restoration network.
//!
//! ```text
//! I ─ BFP ─ [blocks ─ down]×K ─ bottleneck ─ [up ─ merge(skip) ─ blocks]×K ─ up ─ conv3×3 ─ R
//! out = I + R
//! ```
//!
//! Encoder stage `s` runs at `C·2^s` channels on `H/2^(s+1) × W/2^(s+1)`
//! features. The bottleneck uses its own window size.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, OptimizerMoments};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{block_graph, BlockWeights};
use crate::bayer::RawImage;
use crate::bfp::{bfp_graph, BfpWeights};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::numerics::params::Conv;
use crate::numerics::{ConvSpec, Graph, Tensor, Var};

pub const BLOCKS_PER_STAGE: usize = 2;
/// Per-head width used to derive default head counts.
pub const HEAD_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElmformerConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub window_size: usize,
    pub bottleneck_window: usize,
    /// One entry per encoder stage plus one for the bottleneck. Decoder
    /// stages reuse their encoder's count.
    pub heads_per_stage: Vec<usize>,
    pub seed: u64,
}

/// `max(1, channels / 16)`, so narrow toy configs still get one head.
pub fn default_heads(channels: usize) -> usize {
    (channels / HEAD_DIM).max(1)
}

impl Default for ElmformerConfig {
    fn default() -> Self {
        ElmformerConfig::new(32, 4, 8, 4, 0)
    }
}

impl ElmformerConfig {
    /// Config with default head counts.
    pub fn new(base_channels: usize, depth: usize, window_size: usize, bottleneck_window: usize, seed: u64) -> Self {
        let heads_per_stage = (0..=depth).map(|s| default_heads(base_channels << s)).collect();
        ElmformerConfig {
            base_channels,
            depth,
            window_size,
            bottleneck_window,
            heads_per_stage,
            seed,
        }
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.stage_channels(self.depth)
    }

    /// Checks everything that does not depend on the input size.
    pub fn check(&self) -> Result<()> {
        let c = self.base_channels;
        if c < 2 || c % 2 != 0 {
            return Err(Error::Config(format!("base_channels must be even and at least 2, got {c}")));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        for (name, m) in [("window_size", self.window_size), ("bottleneck_window", self.bottleneck_window)] {
            if m < 2 || m % 2 != 0 {
                return Err(Error::Config(format!("{name} must be even and at least 2, got {m}")));
            }
        }
        if self.heads_per_stage.len() != self.depth + 1 {
            return Err(Error::Config(format!(
                "heads_per_stage needs {} entries (one per stage plus the bottleneck), got {}",
                self.depth + 1,
                self.heads_per_stage.len()
            )));
        }
        for (s, &h) in self.heads_per_stage.iter().enumerate() {
            let ch = self.stage_channels(s);
            if h == 0 || ch % h != 0 {
                return Err(Error::Config(format!(
                    "{}: {ch} channels are not divisible by {h} heads",
                    self.stage_name(s)
                )));
            }
        }
        Ok(())
    }

    fn stage_name(&self, s: usize) -> String {
        if s == self.depth {
            "bottleneck".to_string()
        } else {
            format!("stage {s}")
        }
    }

    /// Checks that an `h × w` mosaic fits every stage.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        self.check()?;
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("input {h}x{w} must have even, non-zero extents")));
        }
        let (mut fh, mut fw) = (h / 2, w / 2);
        for s in 0..=self.depth {
            let m = if s == self.depth { self.bottleneck_window } else { self.window_size };
            if fh % m != 0 || fw % m != 0 {
                return Err(Error::Config(format!(
                    "{}: feature extents {fh}x{fw} are not divisible by window size {m} (input {h}x{w})",
                    self.stage_name(s)
                )));
            }
            fh /= 2;
            fw /= 2;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("base_channels", self.base_channels);
        kv.set("depth", self.depth);
        kv.set("window_size", self.window_size);
        kv.set("bottleneck_window", self.bottleneck_window);
        let heads: Vec<String> = self.heads_per_stage.iter().map(|h| h.to_string()).collect();
        kv.set("heads", heads.join(","));
        kv.set("seed", self.seed);
        kv
    }

    /// Consumes the model keys of `kv`; missing keys take defaults.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = ElmformerConfig::default();
        let base_channels = kv.take_or("base_channels", d.base_channels)?;
        let depth = kv.take_or("depth", d.depth)?;
        let window_size = kv.take_or("window_size", d.window_size)?;
        let bottleneck_window = kv.take_or("bottleneck_window", d.bottleneck_window)?;
        let seed = kv.take_or("seed", d.seed)?;
        let mut config = ElmformerConfig::new(base_channels, depth, window_size, bottleneck_window, seed);
        if let Some(heads) = kv.take_list("heads")? {
            config.heads_per_stage = heads;
        }
        config.check()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage<P> {
    pub blocks: Vec<BlockWeights<P>>,
    /// 4×4 stride 2, doubling channels.
    pub downsample: Conv<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage<P> {
    /// 2×2 stride-2 transposed convolution, halving channels.
    pub upsample: Conv<P>,
    /// 1×1 over the concatenated (decoder, skip) features.
    pub merge: Conv<P>,
    pub blocks: Vec<BlockWeights<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElmformerWeights<P> {
    pub config: ElmformerConfig,
    pub bfp: BfpWeights<P>,
    pub encoders: Vec<EncoderStage<P>>,
    pub bottleneck: Vec<BlockWeights<P>>,
    /// Deepest stage first.
    pub decoders: Vec<DecoderStage<P>>,
    /// 2×2 stride-2 transposed convolution to C/2 channels at full resolution.
    pub output_upsample: Conv<P>,
    /// 3×3 to one channel; zero at initialization.
    pub output_conv: Conv<P>,
}

fn map_blocks<P, Q>(blocks: &[BlockWeights<P>], f: &mut impl FnMut(&P) -> Q) -> Vec<BlockWeights<Q>> {
    blocks.iter().map(|b| b.map(f)).collect()
}

impl<P> ElmformerWeights<P> {
    /// Visits every parameter in a fixed order.
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ElmformerWeights<Q> {
        ElmformerWeights {
            config: self.config.clone(),
            bfp: self.bfp.map(f),
            encoders: self
                .encoders
                .iter()
                .map(|e| EncoderStage {
                    blocks: map_blocks(&e.blocks, f),
                    downsample: e.downsample.map(f),
                })
                .collect(),
            bottleneck: map_blocks(&self.bottleneck, f),
            decoders: self
                .decoders
                .iter()
                .map(|d| DecoderStage {
                    upsample: d.upsample.map(f),
                    merge: d.merge.map(f),
                    blocks: map_blocks(&d.blocks, f),
                })
                .collect(),
            output_upsample: self.output_upsample.map(f),
            output_conv: self.output_conv.map(f),
        }
    }
}

/// Deterministic initialization from `config.seed`.
pub fn build(config: &ElmformerConfig) -> Result<ElmformerWeights<Tensor>> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.base_channels;
    let blocks = |rng: &mut ChaCha8Rng, ch: usize, heads: usize, m: usize| -> Result<Vec<BlockWeights<Tensor>>> {
        (0..BLOCKS_PER_STAGE).map(|_| BlockWeights::init(rng, ch, heads, m)).collect()
    };

    let bfp = BfpWeights::init(&mut rng, c)?;
    let mut encoders = Vec::with_capacity(config.depth);
    for s in 0..config.depth {
        let ch = config.stage_channels(s);
        encoders.push(EncoderStage {
            blocks: blocks(&mut rng, ch, config.heads_per_stage[s], config.window_size)?,
            downsample: Conv::init(&mut rng, ConvSpec::new(ch, 2 * ch, 4, 2, 1)),
        });
    }
    let bottleneck = blocks(
        &mut rng,
        config.bottleneck_channels(),
        config.heads_per_stage[config.depth],
        config.bottleneck_window,
    )?;
    let mut decoders = Vec::with_capacity(config.depth);
    for s in (0..config.depth).rev() {
        let ch = config.stage_channels(s);
        decoders.push(DecoderStage {
            upsample: Conv::init_transposed(&mut rng, ConvSpec::new(2 * ch, ch, 2, 2, 0)),
            merge: Conv::init(&mut rng, ConvSpec::new(2 * ch, ch, 1, 1, 0)),
            blocks: blocks(&mut rng, ch, config.heads_per_stage[s], config.window_size)?,
        });
    }
    Ok(ElmformerWeights {
        config: config.clone(),
        bfp,
        encoders,
        bottleneck,
        decoders,
        output_upsample: Conv::init_transposed(&mut rng, ConvSpec::new(c, c / 2, 2, 2, 0)),
        output_conv: Conv::zeros(ConvSpec::new(c / 2, 1, 3, 1, 1)),
    })
}

impl ElmformerWeights<Tensor> {
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.map(&mut |t| n += t.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.parameter_count());
        self.map(&mut |t| flat.extend_from_slice(t.data()));
        flat
    }

    /// Same structure as `self` with values taken from `flat` in [`map`](Self::map) order.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let expected = self.parameter_count();
        if flat.len() != expected {
            return Err(Error::Format(format!(
                "parameter vector has {} values, the configuration needs {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        Ok(self.map(&mut |t| {
            let v = Tensor::new(t.shape(), flat[offset..offset + t.len()].to_vec()).expect("shape from template");
            offset += t.len();
            v
        }))
    }

    /// Weights for `checkpoint`, which must carry exactly this config.
    pub fn load(&self, checkpoint: &Checkpoint) -> Result<Self> {
        if checkpoint.config != self.config {
            return Err(Error::Format(format!(
                "checkpoint was written for {:?}, model is {:?}",
                checkpoint.config, self.config
            )));
        }
        self.with_flat(&checkpoint.params)
    }

    /// Binds every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> ElmformerWeights<Var> {
        self.map(&mut |t| g.param(t.clone()))
    }

    /// Binds every parameter as a constant of `g`.
    pub fn bind_constant(&self, g: &mut Graph) -> ElmformerWeights<Var> {
        self.map(&mut |t| g.constant(t.clone()))
    }
}

/// Number of parameters `build(config)` produces.
pub fn parameter_count(config: &ElmformerConfig) -> Result<usize> {
    Ok(build(config)?.parameter_count())
}

/// Concatenate decoder and encoder features on channels, then merge back
/// to stage width with a 1×1 convolution.
pub fn skip_merge_graph(g: &mut Graph, decoder: Var, encoder: Var, merge: &Conv<Var>) -> Result<Var> {
    let (dv, ev) = (g.value(decoder).shape(), g.value(encoder).shape());
    if dv.len() != 3 || ev.len() != 3 || dv[1..] != ev[1..] {
        return Err(Error::Dimension {
            op: "skip_merge",
            left: dv.to_vec(),
            right: ev.to_vec(),
        });
    }
    let joined = g.concat(decoder, encoder)?;
    merge.forward(g, joined)
}

pub fn skip_merge(decoder: &Tensor, encoder: &Tensor, merge: &Conv<Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let d = g.constant(decoder.clone());
    let e = g.constant(encoder.clone());
    let m = merge.map(&mut |t| g.constant(t.clone()));
    let out = skip_merge_graph(&mut g, d, e, &m)?;
    Ok(g.value(out).clone())
}

fn stage_error(stage: String, e: Error) -> Error {
    match e {
        Error::Shape(s) => Error::Shape(format!("{stage}: {s}")),
        Error::Config(s) => Error::Config(format!("{stage}: {s}")),
        other => other,
    }
}

fn run_blocks(g: &mut Graph, mut x: Var, blocks: &[BlockWeights<Var>], stage: impl Fn() -> String) -> Result<Var> {
    for b in blocks {
        x = block_graph(g, x, b).map_err(|e| stage_error(stage(), e))?;
    }
    Ok(x)
}

/// `[1 × H × W]` mosaic node to the restored mosaic node.
pub fn forward_graph(g: &mut Graph, input: Var, w: &ElmformerWeights<Var>) -> Result<Var> {
    let (ch, h, wd) = g.value(input).dims3("network input")?;
    if ch != 1 {
        return Err(Error::Shape(format!("network input must have one channel, got {ch}")));
    }
    w.config.validate(h, wd)?;

    let mut feat = bfp_graph(g, input, &w.bfp)?;
    let mut skips = Vec::with_capacity(w.encoders.len());
    for (s, enc) in w.encoders.iter().enumerate() {
        feat = run_blocks(g, feat, &enc.blocks, || format!("encoder stage {s}"))?;
        skips.push(feat);
        feat = enc.downsample.forward(g, feat)?;
    }
    feat = run_blocks(g, feat, &w.bottleneck, || "bottleneck".to_string())?;
    for (i, dec) in w.decoders.iter().enumerate() {
        let s = w.decoders.len() - 1 - i;
        feat = dec.upsample.forward_transposed(g, feat)?;
        feat = skip_merge_graph(g, feat, skips[s], &dec.merge).map_err(|e| stage_error(format!("decoder stage {s}"), e))?;
        feat = run_blocks(g, feat, &dec.blocks, || format!("decoder stage {s}"))?;
    }
    feat = w.output_upsample.forward_transposed(g, feat)?;
    let residual = w.output_conv.forward(g, feat)?;
    g.add(input, residual)
}

/// Restores a `[1 × H × W]` tensor in full precision.
pub fn forward_tensor(input: &Tensor, w: &ElmformerWeights<Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let bound = w.bind_constant(&mut g);
    let out = forward_graph(&mut g, x, &bound)?;
    Ok(g.value(out).clone())
}

/// Restores a mosaic. Values are not clamped.
pub fn forward(raw: &RawImage, w: &ElmformerWeights<Tensor>) -> Result<RawImage> {
    RawImage::from_tensor(&forward_tensor(&raw.to_tensor(), w)?)
}
