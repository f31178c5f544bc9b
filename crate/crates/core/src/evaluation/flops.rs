//! Analytic and instrumented multiply-add counts.
//!
//! Units follow [`crate::numerics::counter`]: one multiply-add, exponential,
//! activation or elementwise product each count 1; a layer norm counts 2 per
//! element. "GFLOPs" below means 10⁹ of these units.
//!
//! Attention costs count the `Q·Kᵀ` products only, which is the term the
//! window-cost expressions track. Two totals are reported: the closed-form
//! expression for the whole image, and the exact sum of per-window costs.
//! They differ for local attention: `HW/(4M²)` windows of `4M²·d` each sum
//! to `HW·d`, whereas the closed form carries `HW·d/M²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{lmsa, wmsa, LmsaWeights, WmsaWeights, LEFF_EXPANSION};
use crate::error::{Error, Result};
use crate::network::{build, forward_tensor, ElmformerConfig, BLOCKS_PER_STAGE};
use crate::numerics::counter::{measure, FlopCounts, FlopKind};
use crate::numerics::params::trunc_normal;
use crate::numerics::Tensor;

/// Largest relative gap allowed between instrumented and analytic counts.
pub const EMPIRICAL_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    /// Window attention on the half-resolution features after BFP.
    Wmsa,
    /// 2×2 sub-window attention on the half-resolution features.
    Lmsa,
    /// Both of the above, i.e. one locally multiplicative block.
    Lmwin,
    /// Window attention on full-resolution features (the baseline block).
    Lewin,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] = [
        AttentionVariant::Wmsa,
        AttentionVariant::Lmsa,
        AttentionVariant::Lmwin,
        AttentionVariant::Lewin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Wmsa => "wmsa",
            AttentionVariant::Lmsa => "lmsa",
            AttentionVariant::Lmwin => "lmwin",
            AttentionVariant::Lewin => "lewin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AttentionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown attention variant {s:?} (wmsa, lmsa, lmwin, lewin)")))
    }

    fn half_resolution(self) -> bool {
        self != AttentionVariant::Lewin
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFlops {
    pub variant: AttentionVariant,
    pub window: usize,
    pub head_dim: usize,
    pub heads: usize,
    /// Raw input extents.
    pub height: usize,
    pub width: usize,
    /// Windows processed at the variant's feature resolution.
    pub windows: u64,
    /// Per window and head: `M⁴·d` for window attention, `4·M²·d` for local
    /// attention, their sum for the combined block.
    pub per_window: u64,
    /// Whole-image closed form, summed over heads.
    pub closed_form_total: f64,
    /// `windows · per_window · heads`.
    pub windowed_total: u64,
}

pub fn flops_attention(
    m: usize,
    d_k: usize,
    heads: usize,
    h: usize,
    w: usize,
    variant: AttentionVariant,
) -> Result<AttentionFlops> {
    if m == 0 || d_k == 0 || heads == 0 {
        return Err(Error::Argument("window size, head width and head count must be positive".into()));
    }
    let (fh, fw) = if variant.half_resolution() {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("input {h}x{w} must have even extents")));
        }
        (h / 2, w / 2)
    } else {
        (h, w)
    };
    if fh % m != 0 || fw % m != 0 {
        return Err(Error::Shape(format!(
            "feature extents H={fh}, W={fw} are not divisible by window size M={m}"
        )));
    }
    if variant != AttentionVariant::Wmsa && variant != AttentionVariant::Lewin && m % 2 != 0 {
        return Err(Error::Shape(format!("sub-window grouping needs an even window size, got M={m}")));
    }
    let (mf, d, hw, k) = (m as f64, d_k as f64, (h * w) as f64, heads as f64);
    let m2 = (m * m) as u64;
    let d64 = d_k as u64;
    let windows = (fh * fw) as u64 / m2;
    let (per_window, closed) = match variant {
        AttentionVariant::Wmsa => (m2 * m2 * d64, hw * mf * mf * d / 4.0),
        AttentionVariant::Lmsa => (4 * m2 * d64, hw * d / (mf * mf)),
        AttentionVariant::Lmwin => (m2 * m2 * d64 + 4 * m2 * d64, hw * mf * mf * d / 4.0 + hw * d / (mf * mf)),
        AttentionVariant::Lewin => (m2 * m2 * d64, hw * mf * mf * d),
    };
    Ok(AttentionFlops {
        variant,
        window: m,
        head_dim: d_k,
        heads,
        height: h,
        width: w,
        windows,
        per_window,
        closed_form_total: closed * k,
        windowed_total: windows * per_window * heads as u64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub window: usize,
    pub lmwin: AttentionFlops,
    pub lewin: AttentionFlops,
    /// Baseline over combined block, closed forms.
    pub ratio: f64,
    /// `4 / (1 + 4/M⁴)`.
    pub expected_ratio: f64,
    /// Baseline over combined block, per-window sums.
    pub windowed_ratio: f64,
}

pub fn attention_sweep(d_k: usize, heads: usize, h: usize, w: usize, windows: &[usize]) -> Result<Vec<SweepRow>> {
    windows
        .iter()
        .map(|&m| {
            let lmwin = flops_attention(m, d_k, heads, h, w, AttentionVariant::Lmwin)?;
            let lewin = flops_attention(m, d_k, heads, h, w, AttentionVariant::Lewin)?;
            let m4 = (m as f64).powi(4);
            Ok(SweepRow {
                window: m,
                ratio: lewin.closed_form_total / lmwin.closed_form_total,
                expected_ratio: 4.0 / (1.0 + 4.0 / m4),
                windowed_ratio: lewin.windowed_total as f64 / lmwin.windowed_total as f64,
                lmwin,
                lewin,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCheck {
    pub variant: AttentionVariant,
    pub window: usize,
    pub channels: usize,
    pub heads: usize,
    /// Counted `Q·Kᵀ` multiply-adds plus softmax exponentials.
    pub instrumented: u64,
    /// Per-window dominant terms summed over windows and heads.
    pub analytic: u64,
    pub ratio: f64,
    pub within_tolerance: bool,
}

/// Runs the attention of `variant` on random features of an `h × w` input
/// and compares the counter with [`flops_attention`].
pub fn empirical_count_check(
    variant: AttentionVariant,
    m: usize,
    channels: usize,
    heads: usize,
    h: usize,
    w: usize,
) -> Result<EmpiricalCheck> {
    if heads == 0 || channels % heads != 0 {
        return Err(Error::Config(format!("{channels} channels cannot be split into {heads} heads")));
    }
    let analytic = flops_attention(m, channels / heads, heads, h, w, variant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f10_75);
    let tokens = if variant.half_resolution() { h * w / 4 } else { h * w };
    let windows = trunc_normal(&mut rng, &[tokens / (m * m), m * m, channels], 1.0);
    let wm = WmsaWeights::init(&mut rng, channels, heads, m)?;
    let lm = LmsaWeights::init(&mut rng, channels, heads)?;
    let (res, counts) = measure(|| -> Result<()> {
        match variant {
            AttentionVariant::Wmsa | AttentionVariant::Lewin => {
                wmsa(&windows, &wm)?;
            }
            AttentionVariant::Lmsa => {
                lmsa(&windows, &lm)?;
            }
            AttentionVariant::Lmwin => {
                wmsa(&windows, &wm)?;
                lmsa(&windows, &lm)?;
            }
        }
        Ok(())
    });
    res?;
    let instrumented = counts.get(FlopKind::AttentionScores) + counts.get(FlopKind::Softmax);
    let ratio = instrumented as f64 / analytic.windowed_total as f64;
    Ok(EmpiricalCheck {
        variant,
        window: m,
        channels,
        heads,
        instrumented,
        analytic: analytic.windowed_total,
        ratio,
        within_tolerance: (ratio - 1.0).abs() <= EMPIRICAL_TOLERANCE,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleFlops {
    pub module: String,
    pub counts: FlopCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFlops {
    pub height: usize,
    pub width: usize,
    pub modules: Vec<ModuleFlops>,
}

impl ModelFlops {
    pub fn counts(&self) -> FlopCounts {
        self.modules.iter().map(|m| m.counts).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts().total()
    }

    pub fn gflops(&self) -> f64 {
        self.total() as f64 / 1e9
    }
}

fn counts(entries: &[(FlopKind, usize)]) -> FlopCounts {
    let mut c = FlopCounts::default();
    for &(k, n) in entries {
        c.record(k, n as u64);
    }
    c
}

fn conv_cost(out_plane: usize, out_ch: usize, in_ch: usize, k: usize) -> usize {
    out_plane * out_ch * in_ch * k * k
}

/// One block on `tokens` tokens of width `ch`.
fn block_cost(tokens: usize, ch: usize, heads: usize, m: usize) -> FlopCounts {
    let hidden = LEFF_EXPANSION * ch;
    let window_pairs = tokens * m * m;
    let local_pairs = tokens * 4;
    counts(&[
        (FlopKind::Norm, 2 * 2 * tokens * ch),
        (FlopKind::Linear, tokens * ch * (7 * ch + 2 * hidden)),
        (FlopKind::AttentionScores, (window_pairs + local_pairs) * ch),
        (FlopKind::AttentionMix, (window_pairs + local_pairs) * ch),
        (FlopKind::Softmax, (window_pairs + local_pairs) * heads),
        (FlopKind::Elementwise, tokens * ch),
        (FlopKind::Conv, tokens * hidden * 9),
        (FlopKind::Activation, 2 * tokens * hidden),
    ])
}

fn blocks_cost(tokens: usize, ch: usize, heads: usize, m: usize) -> FlopCounts {
    (0..BLOCKS_PER_STAGE).map(|_| block_cost(tokens, ch, heads, m)).sum()
}

/// Per-module analytic counts for one forward pass on an `h × w` mosaic.
pub fn flops_model(config: &ElmformerConfig, h: usize, w: usize) -> Result<ModelFlops> {
    config.validate(h, w)?;
    let c = config.base_channels;
    let half = c / 2;
    let plane = h * w / 4;
    let mut modules = vec![ModuleFlops {
        module: "bfp".into(),
        counts: counts(&[
            (
                FlopKind::Conv,
                conv_cost(plane, half, 4, 3) + conv_cost(plane, half, 1, 3) + 2 * conv_cost(plane, half, half, 1),
            ),
            (FlopKind::Activation, plane * c),
            (FlopKind::Elementwise, plane * c),
        ]),
    }];
    let tokens_at = |s: usize| plane >> (2 * s);
    for s in 0..config.depth {
        let ch = config.stage_channels(s);
        modules.push(ModuleFlops {
            module: format!("encoder{s}.blocks"),
            counts: blocks_cost(tokens_at(s), ch, config.heads_per_stage[s], config.window_size),
        });
        modules.push(ModuleFlops {
            module: format!("encoder{s}.downsample"),
            counts: counts(&[(FlopKind::Conv, conv_cost(tokens_at(s + 1), 2 * ch, ch, 4))]),
        });
    }
    modules.push(ModuleFlops {
        module: "bottleneck".into(),
        counts: blocks_cost(
            tokens_at(config.depth),
            config.bottleneck_channels(),
            config.heads_per_stage[config.depth],
            config.bottleneck_window,
        ),
    });
    for s in (0..config.depth).rev() {
        let ch = config.stage_channels(s);
        let t = tokens_at(s);
        modules.push(ModuleFlops {
            module: format!("decoder{s}.upsample"),
            counts: counts(&[(FlopKind::Conv, tokens_at(s + 1) * 2 * ch * ch * 4)]),
        });
        modules.push(ModuleFlops {
            module: format!("decoder{s}.merge"),
            counts: counts(&[(FlopKind::Conv, conv_cost(t, ch, 2 * ch, 1))]),
        });
        modules.push(ModuleFlops {
            module: format!("decoder{s}.blocks"),
            counts: blocks_cost(t, ch, config.heads_per_stage[s], config.window_size),
        });
    }
    modules.push(ModuleFlops {
        module: "output".into(),
        counts: counts(&[(FlopKind::Conv, plane * c * half * 4 + conv_cost(h * w, 1, half, 3))]),
    });
    Ok(ModelFlops {
        height: h,
        width: w,
        modules,
    })
}

/// Counter totals from a real forward pass of a freshly built model.
pub fn measure_model(config: &ElmformerConfig, h: usize, w: usize) -> Result<FlopCounts> {
    config.validate(h, w)?;
    let weights = build(config)?;
    let input = Tensor::zeros([1, h, w]);
    let (res, counted) = measure(|| forward_tensor(&input, &weights));
    res?;
    Ok(counted)
}
