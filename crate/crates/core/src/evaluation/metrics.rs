use crate::bayer::{simple_isp, IspParams, RawImage};
use crate::error::{Error, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_SIGMA: f64 = 1.5;
/// The Gaussian window is `2·radius + 1` pixels wide.
pub const SSIM_RADIUS: usize = 5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension {
            op: "metric",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(())
}

/// `10·log10(peak²/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    same_len(a, b)?;
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for j in 0..ow {
            rows[y * ow + j] = k.iter().enumerate().map(|(t, kv)| kv * x[y * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = k.iter().enumerate().map(|(t, kv)| kv * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h × w` planes with dynamic range 1, over the 'valid'
/// region of an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    same_len(a, b)?;
    let side = 2 * SSIM_RADIUS + 1;
    if a.len() != h * w {
        return Err(Error::Shape(format!("{} values do not form a {h}x{w} plane", a.len())));
    }
    if h < side || w < side {
        return Err(Error::Shape(format!("SSIM needs at least {side}x{side} pixels, got {h}x{w}")));
    }
    let k = gaussian_window();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Raw/raw and raw/sRGB quality of a restored mosaic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_rr: f64,
    pub psnr_rs: f64,
    pub ssim_rr: f64,
    pub ssim_rs: f64,
}

/// r/r metrics on clamped mosaics; r/s metrics on `simple_isp` renders of
/// both, SSIM averaged over the three channels.
pub fn eval_pair(pred: &RawImage, gt: &RawImage, isp: &IspParams) -> Result<MetricReport> {
    if !pred.same_extents(gt) {
        return Err(Error::Dimension {
            op: "eval_pair",
            left: vec![pred.height(), pred.width()],
            right: vec![gt.height(), gt.width()],
        });
    }
    let (h, w) = (gt.height(), gt.width());
    let p = pred.clamped().to_tensor();
    let g = gt.clamped().to_tensor();
    let psnr_rr = psnr(p.data(), g.data(), 1.0)?;
    let ssim_rr = ssim(p.data(), g.data(), h, w)?;

    let ps = simple_isp(pred, isp)?;
    let gs = simple_isp(gt, isp)?;
    let psnr_rs = psnr(&ps.data, &gs.data, 1.0)?;
    let mut ssim_rs = 0.0;
    for c in 0..3 {
        ssim_rs += ssim(ps.plane(c), gs.plane(c), h, w)?;
    }
    Ok(MetricReport {
        psnr_rr,
        psnr_rs,
        ssim_rr,
        ssim_rs: ssim_rs / 3.0,
    })
}
