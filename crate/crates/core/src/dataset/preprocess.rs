use std::path::Path;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{bilinear_resize, rgb_to_planes, RgbImage};
use crate::model::Normalization;
use crate::parallel::Parallelism;

use super::ObjectRecord;

/// Integer pixel window covering `bbox`, clipped to the image.
pub fn crop_window(bbox: &BBox, width: u32, height: u32) -> Result<(usize, usize, usize, usize)> {
    let x0 = bbox.x_ul.floor().max(0.0) as usize;
    let y0 = bbox.y_ul.floor().max(0.0) as usize;
    let x1 = (bbox.x_lr.ceil() as usize).min(width as usize);
    let y1 = (bbox.y_lr.ceil() as usize).min(height as usize);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::validation(
            None,
            format!("bbox {bbox:?} lies outside the {width}x{height} image"),
        ));
    }
    Ok((x0, y0, x1 - x0, y1 - y0))
}

/// Crops, bilinearly resizes to `size x size`, scales to [0, 1] and applies
/// the per-channel normalization. Output is channel-major `[3, size, size]`.
pub fn preprocess_image<T: Scalar>(
    img: &RgbImage,
    bbox: &BBox,
    size: usize,
    norm: &Normalization,
) -> Result<Tensor<T>> {
    let (x0, y0, w, h) = crop_window(bbox, img.width(), img.height())?;
    let mut data = Vec::with_capacity(3 * size * size);
    for (c, plane) in rgb_to_planes(img).iter().enumerate() {
        let resized = bilinear_resize(&plane.crop(x0, y0, w, h)?, size, size)?;
        data.extend(
            resized
                .data()
                .iter()
                .map(|&v| T::from_f64((v / 255.0 - norm.mean[c]) / norm.std[c])),
        );
    }
    Tensor::new(vec![3, size, size], data)
}

/// Loads the record's image relative to `base_dir` and preprocesses it.
pub fn preprocess<T: Scalar>(
    record: &ObjectRecord,
    base_dir: &Path,
    size: usize,
    norm: &Normalization,
) -> Result<Tensor<T>> {
    let path = record.resolve_image_path(base_dir);
    let bytes = std::fs::read(&path).map_err(|e| Error::Io {
        path: path.clone(),
        context: Some(format!("object {}", record.object_id)),
        source: e,
    })?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Image {
            path: path.clone(),
            context: format!("object {}", record.object_id),
            message: e.to_string(),
        })?
        .to_rgb8();
    preprocess_image(&img, &record.bbox, size, norm)
}

/// Preprocesses every record, in record order.
pub fn preprocess_all<T: Scalar>(
    records: &[&ObjectRecord],
    base_dir: &Path,
    size: usize,
    norm: &Normalization,
    par: Parallelism,
) -> Result<Vec<Tensor<T>>> {
    par.map(records, |r| preprocess(r, base_dir, size, norm))
        .into_iter()
        .collect()
}

/// Mirrors a `[3, H, W]` tensor left to right.
pub fn hflip<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let shape = image.shape().to_vec();
    let w = *shape.last().expect("image has a width axis");
    let mut out = image.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(image.data().chunks(w)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_crop() {
        let img = RgbImage::from_pixel(40, 30, image::Rgb([128, 128, 128]));
        let t: Tensor<f64> = preprocess_image(
            &img,
            &BBox::new(3.0, 4.0, 20.0, 25.0),
            16,
            &Normalization::default(),
        )
        .unwrap();
        assert_eq!(t.shape(), &[3, 16, 16]);
        let want = (128.0 / 255.0 - 0.5) / 0.5;
        assert!(t.data().iter().all(|v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn same_size_crop_is_untouched() {
        let img = RgbImage::from_fn(8, 8, |x, y| image::Rgb([(x * 30) as u8, (y * 30) as u8, 9]));
        let t: Tensor<f64> = preprocess_image(
            &img,
            &BBox::new(0.0, 0.0, 8.0, 8.0),
            8,
            &Normalization::default(),
        )
        .unwrap();
        let px = img.get_pixel(5, 2).0;
        assert!((t.data()[2 * 8 + 5] - (px[0] as f64 / 255.0 - 0.5) / 0.5).abs() < 1e-6);
    }

    #[test]
    fn flip_twice_is_identity() {
        let t = Tensor::<f32>::from_fn(&[3, 4, 5], |i| i as f32);
        let f = hflip(&t);
        assert_eq!(f.data()[0], 4.0);
        assert_eq!(hflip(&f), t);
    }

    #[test]
    fn missing_image_names_object() {
        let r = ObjectRecord::new(
            "obj-9",
            "s",
            "nope.png",
            BBox::new(0.0, 0.0, 4.0, 4.0),
            1,
            "c",
        )
        .unwrap();
        let err = preprocess::<f32>(&r, Path::new("/nonexistent"), 8, &Normalization::default())
            .unwrap_err();
        assert!(err.to_string().contains("obj-9"), "{err}");
    }
}
