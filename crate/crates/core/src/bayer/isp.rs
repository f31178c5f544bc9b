use std::path::Path;

use super::{CfaColor, RawImage};
use crate::error::{Error, Result};

/// White-balance gains and display gamma for [`simple_isp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IspParams {
    pub r_gain: f64,
    pub b_gain: f64,
    pub gamma: f64,
}

impl Default for IspParams {
    fn default() -> Self {
        IspParams {
            r_gain: 1.0,
            b_gain: 1.0,
            gamma: 2.2,
        }
    }
}

impl IspParams {
    fn validate(&self) -> Result<()> {
        if self.r_gain > 0.0 && self.b_gain > 0.0 && self.gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::Argument(format!("ISP gains and gamma must be positive: {self:?}")))
        }
    }
}

/// Gamma-encoded RGB, `3 × H × W` plane-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SrgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SrgbImage {
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let n = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }
}

/// White balance → bilinear demosaic → clamp → `v^(1/gamma)`.
///
/// The demosaic fills each missing colour with the mean of the same-colour
/// sites inside the 3×3 neighbourhood that lie within the image, which is
/// plain bilinear interpolation away from the border.
pub fn simple_isp(raw: &RawImage, params: &IspParams) -> Result<SrgbImage> {
    params.validate()?;
    let (h, w) = (raw.height(), raw.width());
    let balanced: Vec<f64> = (0..h * w)
        .map(|i| {
            let v = raw.data()[i] as f64;
            match CfaColor::at(i / w, i % w) {
                CfaColor::Red => v * params.r_gain,
                CfaColor::Blue => v * params.b_gain,
                CfaColor::Green => v,
            }
        })
        .collect();
    let inv_gamma = 1.0 / params.gamma;
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let here = CfaColor::at(y, x);
            for (c, color) in [CfaColor::Red, CfaColor::Green, CfaColor::Blue].into_iter().enumerate() {
                let v = if color == here {
                    balanced[y * w + x]
                } else {
                    let (mut sum, mut n) = (0.0, 0u32);
                    for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                            if CfaColor::at(yy, xx) == color {
                                sum += balanced[yy * w + xx];
                                n += 1;
                            }
                        }
                    }
                    sum / n as f64
                };
                data[c * h * w + y * w + x] = v.clamp(0.0, 1.0).powf(inv_gamma);
            }
        }
    }
    Ok(SrgbImage {
        height: h,
        width: w,
        data,
    })
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &SrgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for y in 0..img.height {
        for x in 0..img.width {
            for v in img.pixel(y, x) {
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn write_ppm(path: impl AsRef<Path>, img: &SrgbImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}
