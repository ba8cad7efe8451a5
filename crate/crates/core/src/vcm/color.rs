//! BT.601 full-range RGB <-> YUV 4:2:0.

use crate::error::Result;
use crate::imaging::{bilinear_resize, planes_to_rgb, rgb_to_planes, Plane, RgbImage};

/// 8-bit YUV 4:2:0 planes. Odd input sizes are padded by edge replication to
/// even ones; `width`/`height` keep the original size.
#[derive(Debug, Clone, PartialEq)]
pub struct Yuv420 {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
    pub width: usize,
    pub height: usize,
}

impl Yuv420 {
    pub fn padded(&self) -> bool {
        self.y.width() != self.width || self.y.height() != self.height
    }
}

pub fn rgb_to_yuv420(img: &RgbImage) -> Yuv420 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (pw, ph) = (w.next_multiple_of(2), h.next_multiple_of(2));
    let [r, g, b] = rgb_to_planes(img).map(|p| p.pad_replicate(pw, ph));
    let mut y = Plane::filled(pw, ph, 0.0);
    let mut u_full = Plane::filled(pw, ph, 0.0);
    let mut v_full = Plane::filled(pw, ph, 0.0);
    for i in 0..pw * ph {
        let (rr, gg, bb) = (r.data()[i], g.data()[i], b.data()[i]);
        y.data_mut()[i] = 0.299 * rr + 0.587 * gg + 0.114 * bb;
        u_full.data_mut()[i] = -0.168736 * rr - 0.331264 * gg + 0.5 * bb + 128.0;
        v_full.data_mut()[i] = 0.5 * rr - 0.418688 * gg - 0.081312 * bb + 128.0;
    }
    y.quantize_u8();
    let down = |p: &Plane| {
        let mut out = Plane::from_fn(pw / 2, ph / 2, |x, yy| {
            (p.get(2 * x, 2 * yy)
                + p.get(2 * x + 1, 2 * yy)
                + p.get(2 * x, 2 * yy + 1)
                + p.get(2 * x + 1, 2 * yy + 1))
                / 4.0
        });
        out.quantize_u8();
        out
    };
    Yuv420 {
        u: down(&u_full),
        v: down(&v_full),
        y,
        width: w,
        height: h,
    }
}

pub fn yuv420_to_rgb(yuv: &Yuv420) -> Result<RgbImage> {
    let (pw, ph) = (yuv.y.width(), yuv.y.height());
    let u = bilinear_resize(&yuv.u, pw, ph)?;
    let v = bilinear_resize(&yuv.v, pw, ph)?;
    let (w, h) = (yuv.width, yuv.height);
    let mut planes = [
        Plane::filled(w, h, 0.0),
        Plane::filled(w, h, 0.0),
        Plane::filled(w, h, 0.0),
    ];
    for yy in 0..h {
        for x in 0..w {
            let l = yuv.y.get(x, yy);
            let cb = u.get(x, yy) - 128.0;
            let cr = v.get(x, yy) - 128.0;
            planes[0].set(x, yy, l + 1.402 * cr);
            planes[1].set(x, yy, l - 0.344136 * cb - 0.714136 * cr);
            planes[2].set(x, yy, l + 1.772 * cb);
        }
    }
    planes_to_rgb(&planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_has_neutral_chroma() {
        let img = RgbImage::from_fn(6, 4, |x, y| {
            let v = (x * 40 + y * 10) as u8;
            image::Rgb([v, v, v])
        });
        let yuv = rgb_to_yuv420(&img);
        assert!(yuv.u.data().iter().all(|&c| c == 128.0));
        assert!(yuv.v.data().iter().all(|&c| c == 128.0));
        assert_eq!(yuv420_to_rgb(&yuv).unwrap(), img);
    }

    #[test]
    fn black_is_zero_luma() {
        let yuv = rgb_to_yuv420(&RgbImage::new(4, 4));
        assert!(yuv.y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_sizes_are_padded_and_restored() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 50, y as u8 * 90, 30]));
        let yuv = rgb_to_yuv420(&img);
        assert!(yuv.padded());
        assert_eq!((yuv.y.width(), yuv.y.height()), (6, 4));
        let back = yuv420_to_rgb(&yuv).unwrap();
        assert_eq!(back.dimensions(), (5, 3));
    }
}
