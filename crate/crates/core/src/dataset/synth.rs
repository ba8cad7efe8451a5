//! Seeded synthetic stand-in for a JRD dataset.
//!
//! Each object is a textured rectangle on a gray source image. Its texture
//! strength `t` is drawn uniformly from [0, 1] and drives both the colour and
//! the amplitude of a blocky noise pattern. The label is
//! `jrd = clamp(round(20 + 30 t), 0, 63)` with round-half-away-from-zero; the
//! `t` of every object is written to `strengths.csv` so the labels can be
//! recomputed independently.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, ObjectRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{save_rgb, RgbImage};

pub const SYNTH_WIDTH: u32 = 192;
pub const SYNTH_HEIGHT: u32 = 144;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const STRENGTHS_FILE: &str = "strengths.csv";

const MIN_SIDE: u32 = 24;
const MAX_SIDE: u32 = 72;
const NOISE_BLOCK: u32 = 4;
const MAX_OBJECTS_PER_IMAGE: usize = 3;

pub fn jrd_from_strength(t: f64) -> u8 {
    (20.0 + 30.0 * t).round().clamp(0.0, 63.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub record: ObjectRecord,
    pub strength: f64,
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub source_image_id: String,
    pub image: RgbImage,
    pub objects: Vec<SynthObject>,
}

fn paint_object(img: &mut RgbImage, b: &BBox, t: f64, rng: &mut ChaCha8Rng) {
    let base = [50.0 + 150.0 * t, 128.0, 200.0 - 150.0 * t];
    let amp = 8.0 + 40.0 * t;
    let (x0, y0) = (b.x_ul as u32, b.y_ul as u32);
    let (w, h) = (b.width() as u32, b.height() as u32);
    let bw = w.div_ceil(NOISE_BLOCK);
    let blocks: Vec<f64> = (0..bw * h.div_ceil(NOISE_BLOCK))
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    for y in 0..h {
        for x in 0..w {
            let n = blocks[((y / NOISE_BLOCK) * bw + x / NOISE_BLOCK) as usize];
            let px = img.get_pixel_mut(x0 + x, y0 + y);
            for c in 0..3 {
                let jitter = rng.random_range(-3.0..=3.0);
                px.0[c] = (base[c] + amp * n + jitter).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

fn place(rng: &mut ChaCha8Rng, taken: &[BBox]) -> Option<BBox> {
    for _ in 0..64 {
        let w = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let h = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let x = rng.random_range(0..=SYNTH_WIDTH - w);
        let y = rng.random_range(0..=SYNTH_HEIGHT - h);
        let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64);
        if taken.iter().all(|o| o.intersection(&b) == 0.0) {
            return Some(b);
        }
    }
    None
}

/// Generates exactly `n` objects spread over as many images as needed.
pub fn synth_images(n: usize, seed: u64) -> Result<Vec<SynthImage>> {
    if n == 0 {
        return Err(Error::contract(
            "synthetic dataset needs at least one object",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut made = 0;
    while made < n {
        let source_image_id = format!("synth{:05}", out.len());
        let mut image = RgbImage::from_fn(SYNTH_WIDTH, SYNTH_HEIGHT, |_, _| {
            image::Rgb([110, 110, 110])
        });
        for px in image.pixels_mut() {
            let v = (110 + rng.random_range(-6i32..=6)) as u8;
            px.0 = [v, v, v];
        }
        let want = rng.random_range(1..=MAX_OBJECTS_PER_IMAGE).min(n - made);
        let mut boxes = Vec::new();
        let mut objects = Vec::new();
        for k in 0..want {
            let Some(b) = place(&mut rng, &boxes) else {
                break;
            };
            let t: f64 = rng.random();
            paint_object(&mut image, &b, t, &mut rng);
            boxes.push(b);
            let record = ObjectRecord::new(
                format!("{source_image_id}_{k}"),
                &source_image_id,
                format!("images/{source_image_id}.png"),
                b,
                jrd_from_strength(t),
                "synthetic",
            )?;
            objects.push(SynthObject {
                record,
                strength: t,
            });
        }
        made += objects.len();
        out.push(SynthImage {
            source_image_id,
            image,
            objects,
        });
    }
    Ok(out)
}

/// Paths written by [`write_synth_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub strengths: PathBuf,
    pub images: Vec<PathBuf>,
    pub records: Vec<ObjectRecord>,
}

/// Writes images, `manifest.jsonl` and `strengths.csv` under `out_dir`.
pub fn write_synth_dataset(n: usize, seed: u64, out_dir: &Path) -> Result<SynthOutput> {
    let images = synth_images(n, seed)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut paths = Vec::new();
    let mut records = Vec::new();
    let mut strengths = String::from("object_id,strength,jrd\n");
    for si in &images {
        let p = img_dir.join(format!("{}.png", si.source_image_id));
        save_rgb(&si.image, &p)?;
        paths.push(p);
        for o in &si.objects {
            strengths.push_str(&format!(
                "{},{},{}\n",
                o.record.object_id, o.strength, o.record.jrd
            ));
            records.push(o.record.clone());
        }
    }
    let manifest = out_dir.join(MANIFEST_FILE);
    let mut buf = Vec::new();
    write_manifest(&records, &mut buf).map_err(|e| Error::io(&manifest, e))?;
    fs::write(&manifest, buf).map_err(|e| Error::io(&manifest, e))?;
    let strengths_path = out_dir.join(STRENGTHS_FILE);
    fs::File::create(&strengths_path)
        .and_then(|mut f| f.write_all(strengths.as_bytes()))
        .map_err(|e| Error::io(&strengths_path, e))?;
    Ok(SynthOutput {
        manifest,
        strengths: strengths_path,
        images: paths,
        records,
    })
}
