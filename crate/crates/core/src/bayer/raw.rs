use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Colour filter layouts. Only RGGB is accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfaPattern {
    Rggb,
}

impl CfaPattern {
    pub fn code(self) -> u8 {
        0
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(CfaPattern::Rggb),
            other => Err(Error::Format(format!("unsupported CFA pattern code {other}; only RGGB (0) is accepted"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfaColor {
    Red,
    Green,
    Blue,
}

impl CfaColor {
    /// Colour of the RGGB site at (y, x).
    pub fn at(y: usize, x: usize) -> Self {
        match (y % 2, x % 2) {
            (0, 0) => CfaColor::Red,
            (1, 1) => CfaColor::Blue,
            _ => CfaColor::Green,
        }
    }
}

/// Single-channel RGGB mosaic with even extents.
///
/// Values are normalised to [0, 1] at ingestion. Network outputs reuse the
/// type unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "raw images need positive even extents (one full RGGB period), got {h}x{w}"
        )));
    }
    Ok(())
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_even(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} raw image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(RawImage { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Normalise sensor counts with `(v − black)/(white − black)`, clamped
    /// to [0, 1].
    pub fn from_sensor(height: usize, width: usize, counts: &[f64], black_level: f64, white_level: f64) -> Result<Self> {
        if white_level <= black_level {
            return Err(Error::Argument(format!(
                "white level {white_level} must exceed black level {black_level}"
            )));
        }
        let range = white_level - black_level;
        let data = counts
            .iter()
            .map(|&v| ((v - black_level) / range).clamp(0.0, 1.0) as f32)
            .collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cfa(&self) -> CfaPattern {
        CfaPattern::Rggb
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_extents(&self, other: &RawImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[1 × H × W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.data.iter().map(|&v| v as f64).collect())
            .expect("raw extents are positive")
    }

    /// From a `[1 × H × W]` (or `[H × W]`) tensor, rounding to `f32`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape()[..] {
            [1, h, w] | [h, w] => (h, w),
            _ => return Err(Error::Shape(format!("expected a 1xHxW tensor, got {:?}", t.shape()))),
        };
        Self::new(h, w, t.data().iter().map(|&v| v as f32).collect())
    }

    pub fn clamped(&self) -> RawImage {
        RawImage {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<RawImage> {
        if y0 % 2 != 0 || x0 % 2 != 0 {
            return Err(Error::Argument(format!("crop origin ({y0}, {x0}) must be even to keep the CFA phase")));
        }
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Argument(format!(
                "crop {h}x{w} at ({y0}, {x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        RawImage::new(h, w, data)
    }
}

/// Four half-resolution planes in R, G1, G2, B order.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    height: usize,
    width: usize,
    /// `4 × height × width`, plane-major.
    data: Vec<f32>,
}

impl PackedRaw {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 4 * height * width {
            return Err(Error::Shape(format!(
                "packed raw {height}x{width} needs {} values, got {}",
                4 * height * width,
                data.len()
            )));
        }
        Ok(PackedRaw { height, width, data })
    }

    /// Plane height (half the mosaic height).
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

const PLANE_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Split the mosaic into R, G1, G2, B planes.
pub fn pack(raw: &RawImage) -> Result<PackedRaw> {
    check_even(raw.height, raw.width)?;
    let (h, w) = (raw.height / 2, raw.width / 2);
    let mut data = Vec::with_capacity(raw.data.len());
    for (dy, dx) in PLANE_OFFSETS {
        for i in 0..h {
            for j in 0..w {
                data.push(raw.get(2 * i + dy, 2 * j + dx));
            }
        }
    }
    PackedRaw::new(h, w, data)
}

pub fn unpack(packed: &PackedRaw) -> Result<RawImage> {
    let (h, w) = (packed.height, packed.width);
    let mut data = vec![0.0f32; 4 * h * w];
    for (c, (dy, dx)) in PLANE_OFFSETS.into_iter().enumerate() {
        let plane = packed.plane(c);
        for i in 0..h {
            for j in 0..w {
                data[(2 * i + dy) * 2 * w + 2 * j + dx] = plane[i * w + j];
            }
        }
    }
    RawImage::new(2 * h, 2 * w, data)
}

/// Aligned `size × size` crops of both images from one even origin drawn
/// from `seed`. Returns the crops and the origin.
pub fn random_crop_pair(
    clean: &RawImage,
    degraded: &RawImage,
    size: usize,
    seed: u64,
) -> Result<(RawImage, RawImage, (usize, usize))> {
    if !clean.same_extents(degraded) {
        return Err(Error::Argument(format!(
            "pair extents differ: {}x{} vs {}x{}",
            clean.height, clean.width, degraded.height, degraded.width
        )));
    }
    if size == 0 || size % 2 != 0 || size > clean.height || size > clean.width {
        return Err(Error::Argument(format!(
            "crop size {size} must be even and fit {}x{}",
            clean.height, clean.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = 2 * rng.gen_range(0..=(clean.height - size) / 2);
    let x0 = 2 * rng.gen_range(0..=(clean.width - size) / 2);
    Ok((
        clean.crop(y0, x0, size, size)?,
        degraded.crop(y0, x0, size, size)?,
        (y0, x0),
    ))
}
