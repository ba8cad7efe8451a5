//! Rate/accuracy sweeps over base QPs and QP offsets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::adapter::CodecAdapter;
use super::qpmap::{assign_qps, classify_ctus, QpMap};
use crate::dataset::{crop_window, ObjectRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{load_rgb, RgbImage};
use crate::metrics::{psnr_from_mse, CurvePoint, RateAccuracyCurve};
use crate::parallel::Parallelism;

pub const DEFAULT_BASE_QPS: [u8; 5] = [25, 27, 29, 31, 33];
pub const DEFAULT_DELTA_QPS: [i32; 5] = [-4, -3, -2, -1, 0];

/// One source image with its objects and their JRDs.
#[derive(Debug, Clone)]
pub struct PipelineImage {
    pub source_image_id: String,
    pub image: RgbImage,
    pub boxes: Vec<BBox>,
    pub jrds: Vec<u8>,
}

/// Groups records by source image (first-seen order) and loads each image
/// once. `jrd_of` supplies the JRD used for each object.
pub fn pipeline_images(
    records: &[&ObjectRecord],
    base_dir: &Path,
    jrd_of: impl Fn(&ObjectRecord) -> u8,
    par: Parallelism,
) -> Result<Vec<PipelineImage>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&ObjectRecord>> = BTreeMap::new();
    for r in records {
        let g = groups.entry(&r.source_image_id).or_default();
        if g.is_empty() {
            order.push(&r.source_image_id);
        }
        g.push(r);
    }
    let loaded = par.map(&order, |id| {
        let recs = &groups[id];
        load_rgb(recs[0].resolve_image_path(base_dir)).map(|img| (*id, img))
    });
    loaded
        .into_iter()
        .map(|res| {
            let (id, image) = res?;
            let recs = &groups[id];
            Ok(PipelineImage {
                source_image_id: id.to_string(),
                image,
                boxes: recs.iter().map(|r| r.bbox).collect(),
                jrds: recs.iter().map(|r| jrd_of(r)).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageResult {
    pub source_image_id: String,
    pub bits: u64,
    pub bpp: f64,
    pub qp_b: u8,
    #[serde(skip)]
    pub qpmap: QpMap,
    #[serde(skip)]
    pub recon: Option<RgbImage>,
    /// Squared error and sample count over object pixels (all channels).
    pub object_sse: f64,
    pub object_samples: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingResult {
    pub base_qp: u8,
    pub delta_qp: i32,
    pub mean_bpp: f64,
    /// PSNR pooled over object pixels of every image.
    pub object_psnr: f64,
    pub images: Vec<ImageResult>,
}

/// Pixels covered by any box.
fn object_mask(w: u32, h: u32, boxes: &[BBox]) -> Vec<bool> {
    let mut mask = vec![false; (w * h) as usize];
    for b in boxes {
        if let Ok((x0, y0, bw, bh)) = crop_window(b, w, h) {
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    mask[y * w as usize + x] = true;
                }
            }
        }
    }
    mask
}

fn object_error(a: &RgbImage, b: &RgbImage, boxes: &[BBox]) -> (f64, u64) {
    let mask = object_mask(a.width(), a.height(), boxes);
    let mut sse = 0.0;
    let mut n = 0u64;
    for ((pa, pb), &m) in a.pixels().zip(b.pixels()).zip(&mask) {
        if m {
            for c in 0..3 {
                let d = pa.0[c] as f64 - pb.0[c] as f64;
                sse += d * d;
            }
            n += 3;
        }
    }
    (sse, n)
}

fn code_one(
    img: &PipelineImage,
    map: QpMap,
    qp_b: u8,
    codec: &dyn CodecAdapter,
    keep_recon: bool,
) -> Result<ImageResult> {
    let coded = codec.encode(&img.image, &map)?;
    let (object_sse, object_samples) = object_error(&img.image, &coded.recon, &img.boxes);
    let pixels = (img.image.width() * img.image.height()) as f64;
    Ok(ImageResult {
        source_image_id: img.source_image_id.clone(),
        bits: coded.bits,
        bpp: coded.bits as f64 / pixels,
        qp_b,
        qpmap: map,
        recon: keep_recon.then_some(coded.recon),
        object_sse,
        object_samples,
    })
}

fn summarize(base_qp: u8, delta_qp: i32, images: Vec<ImageResult>) -> SettingResult {
    let mean_bpp = images.iter().map(|r| r.bpp).sum::<f64>() / images.len() as f64;
    let sse: f64 = images.iter().map(|r| r.object_sse).sum();
    let n: u64 = images.iter().map(|r| r.object_samples).sum();
    let object_psnr = if n == 0 {
        f64::NAN
    } else {
        psnr_from_mse(sse / n as f64)
    };
    SettingResult {
        base_qp,
        delta_qp,
        mean_bpp,
        object_psnr,
        images,
    }
}

/// Codes every image for every (base QP, offset) pair, base QPs outermost.
/// Background CTUs take the base QP; object CTUs take their JRD plus the
/// offset.
pub fn run_rate_accuracy(
    images: &[PipelineImage],
    base_qps: &[u8],
    delta_qps: &[i32],
    codec: &dyn CodecAdapter,
    par: Parallelism,
    keep_recon: bool,
) -> Result<Vec<SettingResult>> {
    if images.is_empty() {
        return Err(Error::contract(
            "rate/accuracy sweep over an empty image set",
        ));
    }
    let grids = images
        .iter()
        .map(|im| {
            classify_ctus(
                im.image.width() as usize,
                im.image.height() as usize,
                &im.boxes,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(base_qps.len() * delta_qps.len());
    for &base in base_qps {
        for &delta in delta_qps {
            let idx: Vec<usize> = (0..images.len()).collect();
            let results = par.map(&idx, |&i| {
                let a = assign_qps(&grids[i], &images[i].jrds, delta, base)?;
                code_one(&images[i], a.map, a.qp_b, codec, keep_recon)
            });
            out.push(summarize(
                base,
                delta,
                results.into_iter().collect::<Result<_>>()?,
            ));
        }
    }
    Ok(out)
}

/// Uniform-QP coding of the same images, the conventional anchor.
pub fn run_uniform_anchor(
    images: &[PipelineImage],
    qps: &[u8],
    codec: &dyn CodecAdapter,
    par: Parallelism,
) -> Result<Vec<SettingResult>> {
    if images.is_empty() {
        return Err(Error::contract("anchor sweep over an empty image set"));
    }
    let mut out = Vec::with_capacity(qps.len());
    for &qp in qps {
        let results = par.map(images, |im| {
            let map = QpMap::uniform(im.image.width() as usize, im.image.height() as usize, qp)?;
            code_one(im, map, qp, codec, false)
        });
        out.push(summarize(
            qp,
            0,
            results.into_iter().collect::<Result<_>>()?,
        ));
    }
    Ok(out)
}

/// Curve of (mean bpp, object PSNR), sorted by rate.
pub fn settings_to_curve(settings: &[SettingResult]) -> Result<RateAccuracyCurve> {
    let mut pts: Vec<CurvePoint> = settings
        .iter()
        .map(|s| CurvePoint {
            rate: s.mean_bpp,
            metric: s.object_psnr,
        })
        .collect();
    pts.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    RateAccuracyCurve::new(pts)
}

pub const SETTINGS_HEADER: &str = "base_qp,delta_qp,rate_bpp,metric";

pub fn settings_to_csv(settings: &[SettingResult]) -> String {
    let mut s = format!("{SETTINGS_HEADER}\n");
    for r in settings {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.base_qp, r.delta_qp, r.mean_bpp, r.object_psnr
        ));
    }
    s
}
