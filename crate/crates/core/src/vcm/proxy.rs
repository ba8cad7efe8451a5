//! Block-DCT proxy codec: a deterministic stand-in for a real encoder that
//! responds to per-CTU QPs the way a hybrid codec does.

use std::sync::OnceLock;

use super::qpmap::QpMap;
use crate::error::{Error, Result};
use crate::imaging::Plane;

pub const BLOCK: usize = 8;
/// Fixed side information charged per CTU (QP and symbol-table header).
pub const CTU_OVERHEAD_BITS: u64 = 16;

/// Quantizer step for a QP: doubles every 6 QP, 1.0 at QP 4.
pub fn qstep(qp: u8) -> f64 {
    2f64.powf((qp as f64 - 4.0) / 6.0)
}

fn dct_basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; BLOCK]; BLOCK];
        for (k, row) in c.iter_mut().enumerate() {
            let alpha = if k == 0 {
                (1.0 / BLOCK as f64).sqrt()
            } else {
                (2.0 / BLOCK as f64).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = alpha
                    * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64)
                        .cos();
            }
        }
        c
    })
}

type Block = [[f64; BLOCK]; BLOCK];

/// Orthonormal 2D DCT-II: `C X C^T`.
pub fn dct2(x: &Block) -> Block {
    let c = dct_basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for k in 0..BLOCK {
        for j in 0..BLOCK {
            tmp[k][j] = (0..BLOCK).map(|n| c[k][n] * x[n][j]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for k in 0..BLOCK {
        for l in 0..BLOCK {
            out[k][l] = (0..BLOCK).map(|j| tmp[k][j] * c[l][j]).sum();
        }
    }
    out
}

/// Inverse of [`dct2`]: `C^T Y C`.
pub fn idct2(y: &Block) -> Block {
    let c = dct_basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for n in 0..BLOCK {
        for l in 0..BLOCK {
            tmp[n][l] = (0..BLOCK).map(|k| c[k][n] * y[k][l]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for n in 0..BLOCK {
        for m in 0..BLOCK {
            out[n][m] = (0..BLOCK).map(|l| tmp[n][l] * c[l][m]).sum();
        }
    }
    out
}

/// Bits for `n` symbols coded at their zero-order entropy, rounded up.
pub fn entropy_bits(symbols: &mut [i64]) -> u64 {
    if symbols.is_empty() {
        return 0;
    }
    symbols.sort_unstable();
    let n = symbols.len() as f64;
    let mut h = 0.0;
    let mut i = 0;
    while i < symbols.len() {
        let j = i + symbols[i..].partition_point(|&s| s == symbols[i]);
        let p = (j - i) as f64 / n;
        h -= p * p.log2();
        i = j;
    }
    (n * h).ceil() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneCoding {
    pub bits: u64,
    pub recon: Plane,
    /// Quantized levels per CTU in raster order, blocks in raster order
    /// within the CTU, coefficients row-major within each block.
    pub levels: Vec<Vec<i64>>,
}

/// Codes `plane` on a `rows x cols` grid of `ctu`-sized cells. Only the top
/// left `valid_w x valid_h` pixels are real; blocks lying wholly outside
/// them are coded (edge replicated) but not charged.
pub(crate) fn code_plane(
    plane: &Plane,
    ctu: usize,
    rows: usize,
    cols: usize,
    qps: &[u8],
    valid_w: usize,
    valid_h: usize,
) -> Result<PlaneCoding> {
    if ctu % BLOCK != 0 || qps.len() != rows * cols {
        return Err(Error::contract(format!(
            "CTU size {ctu} must be a multiple of {BLOCK} and the grid must have {} QPs",
            rows * cols
        )));
    }
    if plane.width() > cols * ctu || plane.height() > rows * ctu {
        return Err(Error::contract(format!(
            "{}x{} plane does not fit a {cols}x{rows} grid of {ctu}-pixel CTUs",
            plane.width(),
            plane.height()
        )));
    }
    let padded = plane.pad_replicate(cols * ctu, rows * ctu);
    let mut recon = Plane::filled(padded.width(), padded.height(), 0.0);
    let mut bits = 0u64;
    let mut levels_all = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let step = qstep(qps[r * cols + c]);
            let mut charged = Vec::new();
            let mut levels = Vec::new();
            for by in (0..ctu).step_by(BLOCK) {
                for bx in (0..ctu).step_by(BLOCK) {
                    let (x0, y0) = (c * ctu + bx, r * ctu + by);
                    let mut blk = [[0.0; BLOCK]; BLOCK];
                    for (i, row) in blk.iter_mut().enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = padded.get(x0 + j, y0 + i);
                        }
                    }
                    let coef = dct2(&blk);
                    let mut deq = [[0.0; BLOCK]; BLOCK];
                    let counted = x0 < valid_w && y0 < valid_h;
                    for i in 0..BLOCK {
                        for j in 0..BLOCK {
                            let q = (coef[i][j] / step).round();
                            deq[i][j] = q * step;
                            levels.push(q as i64);
                            if counted {
                                charged.push(q as i64);
                            }
                        }
                    }
                    let rec = idct2(&deq);
                    for (i, row) in rec.iter().enumerate() {
                        for (j, v) in row.iter().enumerate() {
                            recon.set(x0 + j, y0 + i, v.round().clamp(0.0, 255.0));
                        }
                    }
                }
            }
            let in_image = c * ctu < valid_w && r * ctu < valid_h;
            if in_image {
                bits += entropy_bits(&mut charged) + CTU_OVERHEAD_BITS;
            }
            levels_all.push(levels);
        }
    }
    Ok(PlaneCoding {
        bits,
        recon: recon.crop(0, 0, plane.width(), plane.height())?,
        levels: levels_all,
    })
}

/// Codes one 8-bit plane whose size matches the QP map exactly.
pub fn proxy_encode(plane: &Plane, map: &QpMap) -> Result<PlaneCoding> {
    if plane.width() != map.image_w || plane.height() != map.image_h {
        return Err(Error::contract(format!(
            "plane {}x{} does not match QP map {}x{}",
            plane.width(),
            plane.height(),
            map.image_w,
            map.image_h
        )));
    }
    code_plane(
        plane,
        map.ctu,
        map.rows,
        map.cols,
        &map.qps,
        plane.width(),
        plane.height(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_roundtrip_and_dc() {
        let mut x = [[0.0; BLOCK]; BLOCK];
        for (i, row) in x.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((i * 37 + j * 11) % 200) as f64;
            }
        }
        let back = idct2(&dct2(&x));
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                assert!((back[i][j] - x[i][j]).abs() < 1e-9);
            }
        }
        let flat = [[10.0; BLOCK]; BLOCK];
        assert!((dct2(&flat)[0][0] - 80.0).abs() < 1e-9);
    }

    #[test]
    fn qstep_law() {
        assert_eq!(qstep(4), 1.0);
        assert!((qstep(10) - 2.0).abs() < 1e-12);
        assert!((qstep(22) / qstep(10) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_image_costs_overhead_only() {
        let p = Plane::filled(130, 70, 0.0);
        let map = QpMap::uniform(130, 70, 30).unwrap();
        let out = proxy_encode(&p, &map).unwrap();
        assert_eq!(out.bits, CTU_OVERHEAD_BITS * 6);
        assert!(out.recon.data().iter().all(|&v| v == 0.0));
        assert!(proxy_encode(&Plane::filled(10, 10, 0.0), &map).is_err());
    }

    #[test]
    fn entropy_of_two_symbols() {
        assert_eq!(entropy_bits(&mut [1, 1, 1, 1]), 0);
        assert_eq!(entropy_bits(&mut [0, 1, 0, 1]), 4);
    }
}
