//! Index maps for window partitioning, 2×2 sub-window grouping and Bayer
//! packing. Tokens inside a window are flattened row-major.

use super::Tensor;
use crate::error::{Error, Result};

fn check_window(h: usize, w: usize, m: usize) -> Result<()> {
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::Shape(format!(
            "feature extents H={h}, W={w} are not divisible by window size M={m}"
        )));
    }
    Ok(())
}

/// For each row of the window-ordered token matrix, the pixel (row-major
/// `y·W + x`) it comes from. Windows are ordered row-major over the grid.
pub fn window_indices(h: usize, w: usize, m: usize) -> Result<Vec<usize>> {
    check_window(h, w, m)?;
    let mut idx = Vec::with_capacity(h * w);
    for wy in 0..h / m {
        for wx in 0..w / m {
            for p in 0..m * m {
                idx.push((wy * m + p / m) * w + wx * m + p % m);
            }
        }
    }
    Ok(idx)
}

/// For a window of M×M tokens, the in-window token feeding each slot of the
/// sub-window layout: slot `4·s + q` holds position `q` (top-left,
/// top-right, bottom-left, bottom-right) of sub-window `s`, sub-windows
/// being ordered row-major.
pub fn subwindow_indices(m: usize) -> Result<Vec<usize>> {
    if m == 0 || m % 2 != 0 {
        return Err(Error::Shape(format!("sub-window grouping needs an even window size, got M={m}")));
    }
    let half = m / 2;
    let mut idx = Vec::with_capacity(m * m);
    for sy in 0..half {
        for sx in 0..half {
            for q in 0..4 {
                idx.push((2 * sy + q / 2) * m + 2 * sx + q % 2);
            }
        }
    }
    Ok(idx)
}

/// Element indices that pack a 1×H×W RGGB mosaic into 4×H/2×W/2 planes
/// ordered R, G1, G2, B.
pub fn pack_indices(h: usize, w: usize) -> Result<Vec<usize>> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("packing needs even extents, got {h}x{w}")));
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(h * w);
    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        for i in 0..ph {
            for j in 0..pw {
                idx.push((2 * i + dy) * w + 2 * j + dx);
            }
        }
    }
    Ok(idx)
}

pub(crate) fn invert(idx: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; idx.len()];
    for (dst, &src) in idx.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

/// `[C×H×W]` feature map to `[N×M²×C]` window tokens.
pub fn window_partition(t: &Tensor, m: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3("window_partition")?;
    let idx = window_indices(h, w, m)?;
    let plane = h * w;
    let mut out = Vec::with_capacity(t.len());
    for &pix in &idx {
        out.extend((0..c).map(|ch| t.data()[ch * plane + pix]));
    }
    Tensor::new([idx.len() / (m * m), m * m, c], out)
}

/// Inverse of [`window_partition`].
pub fn window_reverse(windows: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, mm, c) = windows.dims3("window_reverse")?;
    let m = (mm as f64).sqrt().round() as usize;
    if m * m != mm || n * mm != h * w {
        return Err(Error::Shape(format!(
            "{n} windows of {mm} tokens cannot tile a {h}x{w} map"
        )));
    }
    let idx = window_indices(h, w, m)?;
    let mut out = vec![0.0; c * h * w];
    for (row, &pix) in idx.iter().enumerate() {
        for ch in 0..c {
            out[ch * h * w + pix] = windows.data()[row * c + ch];
        }
    }
    Tensor::new([c, h, w], out)
}

fn gather_rows(src: &[f64], idx: &[usize], row_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * row_len);
    for &r in idx {
        out.extend_from_slice(&src[r * row_len..(r + 1) * row_len]);
    }
    out
}

/// `[N×M²×C]` window tokens to `[N×(M²/4)×4×C]` sub-window groups.
pub fn subwindow_rearrange(windows: &Tensor) -> Result<Tensor> {
    let (n, mm, c) = windows.dims3("subwindow_rearrange")?;
    let m = (mm as f64).sqrt().round() as usize;
    if m * m != mm {
        return Err(Error::Shape(format!("{mm} tokens per window is not a square")));
    }
    let local = subwindow_indices(m)?;
    let mut out = Vec::with_capacity(windows.len());
    for win in windows.data().chunks_exact(mm * c) {
        out.extend(gather_rows(win, &local, c));
    }
    Tensor::new([n, mm / 4, 4, c], out)
}

/// Inverse of [`subwindow_rearrange`].
pub fn subwindow_restore(groups: &Tensor) -> Result<Tensor> {
    let (n, s, four, c) = match groups.shape()[..] {
        [a, b, d, e] => (a, b, d, e),
        _ => return Err(Error::Shape(format!("sub-window groups must be rank 4, got {:?}", groups.shape()))),
    };
    if four != 4 {
        return Err(Error::Shape(format!("sub-window groups must hold 4 tokens, got {four}")));
    }
    let mm = 4 * s;
    let m = (mm as f64).sqrt().round() as usize;
    if m * m != mm {
        return Err(Error::Shape(format!("{mm} tokens per window is not a square")));
    }
    let inv = invert(&subwindow_indices(m)?);
    let mut out = Vec::with_capacity(groups.len());
    for win in groups.data().chunks_exact(mm * c) {
        out.extend(gather_rows(win, &inv, c));
    }
    Tensor::new([n, mm, c], out)
}
