//! Sample planes, image file I/O and bilinear resampling.

use std::path::Path;

pub use image::RgbImage;

use crate::error::{Error, Result};

/// One channel of samples stored row-major as `f64`, nominally 8-bit range.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::dim(
                "plane",
                format!("{width}x{height} with {} samples", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with coordinates clamped into the plane.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Extends to `width x height` by replicating the last column and row.
    pub fn pad_replicate(&self, width: usize, height: usize) -> Plane {
        Plane::from_fn(width.max(self.width), height.max(self.height), |x, y| {
            self.get_clamped(x as isize, y as isize)
        })
    }

    /// Top-left `width x height` window.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::dim(
                "crop",
                format!(
                    "window ({x0},{y0}) {width}x{height} outside {}x{}",
                    self.width, self.height
                ),
            ));
        }
        Ok(Plane::from_fn(width, height, |x, y| {
            self.get(x0 + x, y0 + y)
        }))
    }

    /// Rounds every sample to an integer in [0, 255].
    pub fn quantize_u8(&mut self) {
        self.data
            .iter_mut()
            .for_each(|v| *v = v.round().clamp(0.0, 255.0));
    }
}

/// Bilinear resample with half-pixel sample centres and clamped borders.
pub fn bilinear_resize(plane: &Plane, width: usize, height: usize) -> Result<Plane> {
    if width == 0 || height == 0 {
        return Err(Error::contract(format!(
            "resize target {width}x{height} is empty"
        )));
    }
    let sx = plane.width as f64 / width as f64;
    let sy = plane.height as f64 / height as f64;
    let axis = |d: usize, scale: f64, len: usize| {
        let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sx, plane.width)).collect();
    let rows: Vec<_> = (0..height).map(|y| axis(y, sy, plane.height)).collect();
    let mut data = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = plane.get(x0, y0) * (1.0 - fx) + plane.get(x1, y0) * fx;
            let bottom = plane.get(x0, y1) * (1.0 - fx) + plane.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Plane::new(width, height, data)
}

pub fn rgb_to_planes(img: &RgbImage) -> [Plane; 3] {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = [
        Plane::filled(w, h, 0.0),
        Plane::filled(w, h, 0.0),
        Plane::filled(w, h, 0.0),
    ];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planes[c].data[i] = px.0[c] as f64;
        }
    }
    planes
}

/// Rounds and clamps samples into an 8-bit RGB image.
pub fn planes_to_rgb(planes: &[Plane; 3]) -> Result<RgbImage> {
    let (w, h) = (planes[0].width, planes[0].height);
    if planes.iter().any(|p| p.width != w || p.height != h) {
        return Err(Error::dim("planes_to_rgb", "planes differ in size"));
    }
    let mut buf = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        for p in planes {
            buf.push(p.data[i].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized for image"))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    // the format comes from the file content, so encoder outputs need no
    // image extension
    let img = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(image::ImageError::IoError)
        .and_then(|r| r.decode())
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            context: "decode".into(),
            message: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}

/// Writes an image as PNG; the extension must say so.
pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        context: "encode".into(),
        message: e.to_string(),
    })
}
