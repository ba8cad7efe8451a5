use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Catmull-Rom cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with parameter [`CUBIC_A`].
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four (index, weight) taps per output sample along one axis.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<[(usize, f64); 4]> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let src = (d as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut taps = [(0usize, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let offset = k as f64 - 1.0;
                let idx = (base + offset).clamp(0.0, (src_len - 1) as f64) as usize;
                *tap = (idx, cubic_kernel(t - offset));
            }
            taps
        })
        .collect()
}

/// Separable bicubic resize of an `[H, W, D]` grid; every channel is
/// resampled independently. Border samples are clamped and sample centres
/// follow the half-pixel convention.
pub fn bicubic_resize_2d<T: Scalar>(
    grid: &Tensor<T>,
    new_h: usize,
    new_w: usize,
) -> Result<Tensor<T>> {
    let shape = grid.shape();
    if shape.len() != 3 {
        return Err(Error::dim(
            "bicubic_resize_2d",
            format!("expected [H, W, D], got {shape:?}"),
        ));
    }
    let (h, w, d) = (shape[0], shape[1], shape[2]);
    if h < 2 || w < 2 {
        return Err(Error::contract(format!(
            "bicubic resize needs H, W >= 2, got {h}x{w}"
        )));
    }
    if new_h < 1 || new_w < 1 {
        return Err(Error::contract(format!(
            "bicubic target size {new_h}x{new_w} is empty"
        )));
    }
    let src = grid.data();
    let row_taps = axis_taps(h, new_h);
    let col_taps = axis_taps(w, new_w);

    // Horizontal pass: [H, W, D] -> [H, W', D]
    let mut tmp = vec![0.0f64; h * new_w * d];
    for y in 0..h {
        for (x, taps) in col_taps.iter().enumerate() {
            let dst = &mut tmp[(y * new_w + x) * d..(y * new_w + x + 1) * d];
            for &(sx, wt) in taps {
                if wt == 0.0 {
                    continue;
                }
                let s = &src[(y * w + sx) * d..(y * w + sx + 1) * d];
                for (o, &v) in dst.iter_mut().zip(s) {
                    *o += wt * v.as_f64();
                }
            }
        }
    }
    // Vertical pass: [H, W', D] -> [H', W', D]
    let mut out = vec![0.0f64; new_h * new_w * d];
    for (y, taps) in row_taps.iter().enumerate() {
        for &(sy, wt) in taps {
            if wt == 0.0 {
                continue;
            }
            let s = &tmp[sy * new_w * d..(sy + 1) * new_w * d];
            let dst = &mut out[y * new_w * d..(y + 1) * new_w * d];
            for (o, &v) in dst.iter_mut().zip(s) {
                *o += wt * v;
            }
        }
    }
    Tensor::new(
        vec![new_h, new_w, d],
        out.into_iter().map(T::from_f64).collect(),
    )
}
