use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CfaColor, RawImage};
use crate::error::Result;

/// Deterministic clean RGGB mosaic of a piecewise-smooth synthetic scene:
/// a colour gradient, a few soft-edged ellipses and rectangles, and a faint
/// low-frequency texture, kept inside [0.02, 0.95].
pub fn clean_scene(height: usize, width: usize, seed: u64) -> Result<RawImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e000);
    let (hf, wf) = (height as f64, width as f64);

    let mut color = || [rng.gen_range(0.1..0.85), rng.gen_range(0.1..0.85), rng.gen_range(0.1..0.85)];
    let base = color();
    let tilt = color();
    let n_shapes = 3 + (seed % 4) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let gdir = rng.gen_range(0.0..std::f64::consts::TAU);

    struct Shape {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        ellipse: bool,
        color: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            cy: rng.gen_range(0.0..hf),
            cx: rng.gen_range(0.0..wf),
            ry: rng.gen_range(0.08..0.35) * hf,
            rx: rng.gen_range(0.08..0.35) * wf,
            ellipse: rng.gen_bool(0.5),
            color: [rng.gen_range(0.05..0.9), rng.gen_range(0.05..0.9), rng.gen_range(0.05..0.9)],
        })
        .collect();
    let (fy, fx, phase) = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(0.0..6.28));

    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (y as f64 / hf, x as f64 / wf);
            let t = 0.5 + 0.5 * ((u - 0.5) * gdir.cos() + (v - 0.5) * gdir.sin());
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = base[c] * (1.0 - t) + tilt[c] * t;
            }
            for s in &shapes {
                let dy = (y as f64 - s.cy) / s.ry;
                let dx = (x as f64 - s.cx) / s.rx;
                let d = if s.ellipse { (dy * dy + dx * dx).sqrt() } else { dy.abs().max(dx.abs()) };
                // soft edge about two pixels wide
                let edge = 2.0 / s.ry.min(s.rx);
                let a = ((1.0 - d) / edge).clamp(0.0, 1.0);
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - a) + s.color[c] * a;
                }
            }
            let tex = 0.03 * ((fy * std::f64::consts::TAU * u + phase).sin() * (fx * std::f64::consts::TAU * v).cos());
            let c = match CfaColor::at(y, x) {
                CfaColor::Red => 0,
                CfaColor::Green => 1,
                CfaColor::Blue => 2,
            };
            data.push((rgb[c] + tex).clamp(0.02, 0.95) as f32);
        }
    }
    RawImage::new(height, width, data)
}
