//! Thread-local multiply-add counter filled in by forward ops.
//!
//! Counting convention (one unit each):
//! * one multiply-add in a matrix product or convolution;
//! * one exponential in a softmax;
//! * one sigmoid or GELU evaluation;
//! * one elementwise product;
//! * two per element of a layer norm (normalise, then affine).
//!
//! Additions (biases, residuals), gathers and reshapes are free.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlopKind {
    Linear,
    Conv,
    AttentionScores,
    AttentionMix,
    Softmax,
    Norm,
    Activation,
    Elementwise,
}

impl FlopKind {
    pub const ALL: [FlopKind; 8] = [
        FlopKind::Linear,
        FlopKind::Conv,
        FlopKind::AttentionScores,
        FlopKind::AttentionMix,
        FlopKind::Softmax,
        FlopKind::Norm,
        FlopKind::Activation,
        FlopKind::Elementwise,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

thread_local! {
    static COUNTS: Cell<[u64; 8]> = const { Cell::new([0; 8]) };
}

/// Snapshot of the counter, one slot per [`FlopKind`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounts([u64; 8]);

impl FlopCounts {
    pub fn get(&self, kind: FlopKind) -> u64 {
        self.0[kind.index()]
    }

    pub fn record(&mut self, kind: FlopKind, n: u64) {
        self.0[kind.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Scores + softmax + mixing.
    pub fn attention(&self) -> u64 {
        self.get(FlopKind::AttentionScores)
            + self.get(FlopKind::Softmax)
            + self.get(FlopKind::AttentionMix)
    }
}

impl std::ops::Add for FlopCounts {
    type Output = FlopCounts;

    fn add(mut self, rhs: FlopCounts) -> FlopCounts {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl std::iter::Sum for FlopCounts {
    fn sum<I: Iterator<Item = FlopCounts>>(iter: I) -> FlopCounts {
        iter.fold(FlopCounts::default(), |a, b| a + b)
    }
}

impl FlopKind {
    pub fn name(self) -> &'static str {
        match self {
            FlopKind::Linear => "linear",
            FlopKind::Conv => "conv",
            FlopKind::AttentionScores => "attn_scores",
            FlopKind::AttentionMix => "attn_mix",
            FlopKind::Softmax => "softmax",
            FlopKind::Norm => "norm",
            FlopKind::Activation => "activation",
            FlopKind::Elementwise => "elementwise",
        }
    }
}

pub(crate) fn add(kind: FlopKind, n: u64) {
    COUNTS.with(|c| {
        let mut v = c.get();
        v[kind.index()] += n;
        c.set(v);
    });
}

pub fn reset() {
    COUNTS.with(|c| c.set([0; 8]));
}

pub fn snapshot() -> FlopCounts {
    FlopCounts(COUNTS.with(|c| c.get()))
}

/// Run `f` and return what it counted; the counter is left as it was.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, FlopCounts) {
    let before = snapshot();
    reset();
    let out = f();
    let counted = snapshot();
    COUNTS.with(|c| {
        let mut v = before.0;
        for (a, b) in v.iter_mut().zip(counted.0) {
            *a += b;
        }
        c.set(v);
    });
    (out, counted)
}
