use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dtjrd_core::dataset::{
    group_split, load_manifest, preprocess_all, write_synth_dataset, ObjectRecord, Split,
    SplitAssignment,
};
use dtjrd_core::imaging::{load_rgb, save_rgb};
use dtjrd_core::labels::{LabelDistribution, LabelKind};
use dtjrd_core::metrics::{
    ap_per_category, bd_report, load_detections, mae_ea, mae_range, map_at_iou, JrdSample,
    RANGE_HI, RANGE_LO,
};
use dtjrd_core::model::{
    encode_checkpoint, load_checkpoint, load_checkpoint_with_config, DtJrdModel, ModelConfig,
};
use dtjrd_core::parallel::Parallelism;
use dtjrd_core::trainer::{epoch_log_csv, fit, predict_samples, Sample, TrainConfig};
use dtjrd_core::vcm::{
    assign_qps, classify_ctus, pipeline_images, run_rate_accuracy, run_uniform_anchor,
    settings_to_csv, CodecAdapter, ExternalCodec, ProxyCodec, QpMap, SettingResult, MAX_QP,
};
use serde::Serialize;

use crate::run::{Outputs, RunManifest};
use crate::tables::{
    jrd_lookup, read_boxes, read_curve, read_ground_truth, read_jrd_csv, PREDICTIONS_HEADER,
};
use crate::{
    BdrateArgs, ConfigArg, CurveArgs, LabelArgs, LabelKindArg, MapArgs, MetricsArgs, PredictArgs,
    ProxyEncodeArgs, QpmapArgs, SplitArgs, SynthArgs, TrainArgs,
};

fn record(subcommand: &str, args: &impl Serialize, seed: Option<u64>) -> Result<RunManifest> {
    Ok(RunManifest {
        subcommand: subcommand.into(),
        flags: serde_json::to_value(args)?,
        seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        threads: Parallelism::from_env().threads(),
        outputs: Vec::new(),
        notes: Vec::new(),
    })
}

fn label_kind(kind: LabelKindArg, sigma: f64, eps: f64) -> LabelKind {
    match kind {
        LabelKindArg::OneHot => LabelKind::OneHot,
        LabelKindArg::Smooth => LabelKind::Smooth { eps },
        LabelKindArg::Gdsl => LabelKind::Gdsl { sigma },
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_splits(path: &Path) -> Result<SplitAssignment> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SplitAssignment::from_json(&text)?)
}

/// Manifest records, optionally narrowed to one split.
fn select_records(
    records: &[ObjectRecord],
    splits: Option<&Path>,
    split: Option<&str>,
) -> Result<Vec<ObjectRecord>> {
    match (splits, split) {
        (Some(p), Some(s)) => {
            let split: Split = s.parse()?;
            let sel: Vec<ObjectRecord> = load_splits(p)?
                .select(records, split)
                .into_iter()
                .cloned()
                .collect();
            if sel.is_empty() {
                bail!("split `{split}` selects no objects");
            }
            Ok(sel)
        }
        _ => Ok(records.to_vec()),
    }
}

fn samples(
    records: &[&ObjectRecord],
    base: &Path,
    model: &DtJrdModel<f32>,
) -> Result<Vec<Sample<f32>>> {
    let images = preprocess_all::<f32>(
        records,
        base,
        model.config().image_size,
        model.normalization(),
        Parallelism::from_env(),
    )?;
    Ok(records
        .iter()
        .zip(images)
        .map(|(r, image)| Sample {
            object_id: r.object_id.clone(),
            image_id: r.source_image_id.clone(),
            image,
            jrd: r.jrd,
        })
        .collect())
}

fn save_png(out: &mut Outputs, img: &image::RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        out.dir(parent)?;
    }
    out.track(path);
    Ok(save_rgb(img, path)?)
}

pub fn synth_data(a: &SynthArgs) -> Result<()> {
    let mut out = Outputs::new();
    out.dir(&a.out_dir)?;
    let images_dir = a.out_dir.join("images");
    out.dir(&images_dir)?;
    let written = write_synth_dataset(a.n, a.seed, &a.out_dir);
    // track whatever exists even on failure so it gets cleaned up
    let produced = match &written {
        Ok(w) => w
            .images
            .iter()
            .cloned()
            .chain([w.manifest.clone(), w.strengths.clone()])
            .collect(),
        Err(_) => Vec::new(),
    };
    for p in &produced {
        out.track(p);
    }
    let written = written?;
    println!(
        "{} objects in {} images -> {}",
        written.records.len(),
        written.images.len(),
        written.manifest.display()
    );
    out.commit(&written.manifest, record("synth-data", a, Some(a.seed))?)
}

pub fn make_splits(a: &SplitArgs) -> Result<()> {
    let records = load_manifest(&a.manifest)?;
    let ratios: [u32; 3] = a
        .ratios
        .clone()
        .try_into()
        .map_err(|_| anyhow!("--ratios needs exactly three values"))?;
    let assignment = group_split(&records, ratios, a.seed)?;
    let mut out = Outputs::new();
    out.write(&a.out, assignment.to_json() + "\n")?;
    for s in Split::ALL {
        let objects = assignment.select(&records, s).len();
        println!(
            "{s}: {} images, {objects} objects",
            assignment.group_count(s)
        );
    }
    out.commit(&a.out, record("make-splits", a, Some(a.seed))?)
}

pub fn labels(a: &LabelArgs) -> Result<()> {
    let dist = LabelDistribution::build(label_kind(a.kind, a.sigma, a.eps), a.mu, a.n)?;
    let mut csv = String::from("class,prob\n");
    for (k, p) in dist.probs().iter().enumerate() {
        csv.push_str(&format!("{k},{p}\n"));
    }
    match &a.out {
        Some(path) => {
            let mut out = Outputs::new();
            out.write(path, csv)?;
            out.commit(path, record("labels", a, None)?)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let records = load_manifest(&a.manifest)?;
    let base = base_dir(&a.manifest);
    let splits = load_splits(&a.splits)?;
    let config = match a.config {
        ConfigArg::Toy => ModelConfig::toy(),
        ConfigArg::Full => ModelConfig::vit_large_32(a.image_size),
    };
    let model = match &a.init {
        Some(p) => load_checkpoint_with_config::<f32>(p, &config)?,
        None => DtJrdModel::<f32>::new(config, a.seed)?,
    };
    let train_set = samples(&splits.select(&records, Split::Train), &base, &model)?;
    let val_set = samples(&splits.select(&records, Split::Val), &base, &model)?;
    log::info!(
        "{} training and {} validation objects",
        train_set.len(),
        val_set.len()
    );

    let tc = TrainConfig {
        strategy: a.strategy.parse()?,
        label_kind: label_kind(a.label_kind, a.sigma, a.eps),
        lr0: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = fit(model, &train_set, &val_set, &tc)?;

    let log_path = a.log_out.clone().unwrap_or_else(|| {
        let mut name = a
            .checkpoint_out
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".epochs.csv");
        a.checkpoint_out.with_file_name(name)
    });
    let mut out = Outputs::new();
    out.write(&a.checkpoint_out, encode_checkpoint(&outcome.model)?)?;
    out.write(&log_path, epoch_log_csv(&outcome.log))?;
    let best = &outcome.log[outcome.best_epoch];
    println!(
        "best epoch {} (train loss {:.4}, val E_A {:.3}) -> {}",
        outcome.best_epoch,
        best.train_loss,
        best.val_ea,
        a.checkpoint_out.display()
    );
    let mut run = record("train", a, Some(a.seed))?;
    run.notes
        .push(format!("training config: {}", serde_json::to_string(&tc)?));
    out.commit(&a.checkpoint_out, run)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_checkpoint::<f32>(&a.checkpoint)?;
    let records = select_records(
        &load_manifest(&a.manifest)?,
        a.splits.as_deref(),
        a.split.as_deref(),
    )?;
    let refs: Vec<&ObjectRecord> = records.iter().collect();
    let set = samples(&refs, &base_dir(&a.manifest), &model)?;
    let preds = predict_samples(&model, &set, a.batch_size)?;
    let mut csv = PREDICTIONS_HEADER.join(",") + "\n";
    for (r, p) in records.iter().zip(&preds) {
        csv.push_str(&format!("{},{},{p}\n", r.object_id, r.source_image_id));
    }
    let mut out = Outputs::new();
    out.write(&a.out, csv)?;
    println!("{} predictions -> {}", preds.len(), a.out.display());
    out.commit(&a.out, record("predict", a, None)?)
}

fn as_qp(v: f64, what: &str) -> Result<u8> {
    if v.fract() != 0.0 || !(0.0..=MAX_QP as f64).contains(&v) {
        bail!("{what}: JRD {v} is not an integer in [0, {MAX_QP}]");
    }
    Ok(v as u8)
}

pub fn qpmap(a: &QpmapArgs) -> Result<()> {
    let boxes = read_boxes(&a.bboxes)?;
    let rows = read_jrd_csv(&a.jrd)?;
    let lookup = jrd_lookup(&rows)?;
    let jrds = boxes
        .iter()
        .map(|(id, _)| {
            let row = lookup
                .get(id.as_str())
                .ok_or_else(|| anyhow!("no JRD for object `{id}`"))?;
            as_qp(row.jrd, id)
        })
        .collect::<Result<Vec<u8>>>()?;
    let rects: Vec<_> = boxes.iter().map(|(_, b)| *b).collect();
    let grid = classify_ctus(a.width, a.height, &rects)?;
    let assigned = assign_qps(&grid, &jrds, a.delta_qp, a.qp_b)?;
    for w in &assigned.warnings {
        log::warn!("{w}");
    }
    let mut out = Outputs::new();
    out.write(&a.out, assigned.map.to_sidecar())?;
    println!(
        "{}x{} CTUs, background QP {} -> {}",
        assigned.map.cols,
        assigned.map.rows,
        assigned.qp_b,
        a.out.display()
    );
    let mut run = record("qpmap", a, None)?;
    run.notes.extend(assigned.warnings.iter().cloned());
    out.commit(&a.out, run)
}

#[derive(Serialize)]
struct CodingReport<'a> {
    codec: &'a str,
    width: u32,
    height: u32,
    bits: u64,
    bpp: f64,
}

pub fn proxy_encode(a: &ProxyEncodeArgs) -> Result<()> {
    let img = load_rgb(&a.image)?;
    let map = QpMap::load(&a.qpmap)?;
    let coded = ProxyCodec.encode(&img, &map)?;
    let (w, h) = img.dimensions();
    let report = CodingReport {
        codec: "proxy",
        width: w,
        height: h,
        bits: coded.bits,
        bpp: coded.bits as f64 / (w as f64 * h as f64),
    };
    let mut out = Outputs::new();
    out.write(&a.output, serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(p) = &a.recon {
        save_png(&mut out, &coded.recon, p)?;
    }
    if let Some(p) = &a.bits {
        out.write(p, format!("{}\n", coded.bits))?;
    }
    println!("{} bits ({:.4} bpp)", report.bits, report.bpp);
    out.commit(&a.output, record("proxy-encode", a, None)?)
}

#[derive(Serialize)]
struct JrdErrorReport {
    objects: usize,
    images: usize,
    e_a: f64,
    /// None when no ground-truth JRD falls in the range.
    e_range: Option<f64>,
    range: [f64; 2],
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let pred = read_jrd_csv(&a.pred)?;
    let gt = read_ground_truth(&a.gt)?;
    let gt_of = jrd_lookup(&gt)?;
    jrd_lookup(&pred)?;
    if pred.len() != gt.len() {
        bail!(
            "{} predictions for {} ground-truth objects",
            pred.len(),
            gt.len()
        );
    }
    let samples = pred
        .iter()
        .map(|p| {
            let g = gt_of
                .get(p.object_id.as_str())
                .ok_or_else(|| anyhow!("object `{}` has no ground truth", p.object_id))?;
            let image = g
                .source_image_id
                .as_ref()
                .or(p.source_image_id.as_ref())
                .ok_or_else(|| {
                    anyhow!(
                        "object `{}` has no source_image_id in either file",
                        p.object_id
                    )
                })?;
            Ok(JrdSample::new(image, p.jrd, g.jrd))
        })
        .collect::<Result<Vec<_>>>()?;
    let e_a = mae_ea(&samples)?;
    let e_range = mae_range(&samples, RANGE_LO, RANGE_HI).ok();
    let images = samples
        .iter()
        .map(|s| s.image_id.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len();
    println!("E_A: {e_a:.4}");
    match e_range {
        Some(e) => println!("E_[{RANGE_LO},{RANGE_HI}]: {e:.4}"),
        None => println!("E_[{RANGE_LO},{RANGE_HI}]: n/a (no objects in range)"),
    }
    if let Some(path) = &a.out {
        let report = JrdErrorReport {
            objects: samples.len(),
            images,
            e_a,
            e_range,
            range: [RANGE_LO, RANGE_HI],
        };
        let mut out = Outputs::new();
        out.write(path, serde_json::to_string_pretty(&report)? + "\n")?;
        out.commit(path, record("metrics", a, None)?)?;
    }
    Ok(())
}

pub fn map(a: &MapArgs) -> Result<()> {
    let dets = load_detections(&a.dets)?;
    let gt = load_detections(&a.gt)?;
    let map = map_at_iou(&dets, &gt, a.iou)?;
    println!("mAP@{:.2}: {map:.2}", a.iou);
    if let Some(path) = &a.out {
        let per = ap_per_category(&dets, &gt, a.iou)?;
        let report = serde_json::json!({ "iou": a.iou, "map": map, "ap_per_category": per });
        let mut out = Outputs::new();
        out.write(path, serde_json::to_string_pretty(&report)? + "\n")?;
        out.commit(path, record("map", a, None)?)?;
    }
    Ok(())
}

/// Rounds for display and folds -0.00 into 0.00.
fn two_places(v: f64) -> f64 {
    (v * 100.0).round() / 100.0 + 0.0
}

pub fn bdrate(a: &BdrateArgs) -> Result<()> {
    let anchor = read_curve(&a.anchor)?;
    let test = read_curve(&a.test)?;
    let report = bd_report(&anchor, &test)?;
    println!("BD-rate: {:.2}%", two_places(report.bd_rate_percent));
    println!("BD-metric: {:.4}", report.bd_metric + 0.0);
    if let Some(path) = &a.out {
        let mut out = Outputs::new();
        out.write(path, serde_json::to_string_pretty(&report)? + "\n")?;
        out.commit(path, record("bdrate", a, None)?)?;
    }
    Ok(())
}

fn write_setting_artifacts(
    out: &mut Outputs,
    dir: &Path,
    settings: &[SettingResult],
) -> Result<()> {
    for s in settings {
        let sub = dir.join(format!("qp{}_d{}", s.base_qp, s.delta_qp));
        out.dir(&sub)?;
        for im in &s.images {
            out.write(
                &sub.join(format!("{}.qpmap.txt", im.source_image_id)),
                im.qpmap.to_sidecar(),
            )?;
            if let Some(recon) = &im.recon {
                save_png(out, recon, &sub.join(format!("{}.png", im.source_image_id)))?;
            }
        }
    }
    Ok(())
}

pub fn curve(a: &CurveArgs) -> Result<()> {
    let records = select_records(
        &load_manifest(&a.manifest)?,
        a.splits.as_deref(),
        a.split.as_deref(),
    )?;
    let base = base_dir(&a.manifest);
    let par = Parallelism::from_env();
    let refs: Vec<&ObjectRecord> = records.iter().collect();

    let raw: HashMap<&str, i32> = match &a.checkpoint {
        Some(ck) => {
            let model = load_checkpoint::<f32>(ck)?;
            let set = samples(&refs, &base, &model)?;
            let preds = predict_samples(&model, &set, 32)?;
            records
                .iter()
                .zip(preds)
                .map(|(r, p)| (r.object_id.as_str(), p as i32))
                .collect()
        }
        None => records
            .iter()
            .map(|r| (r.object_id.as_str(), r.jrd as i32))
            .collect(),
    };
    let jrd_of =
        |r: &ObjectRecord| (raw[r.object_id.as_str()] + a.jrd_offset).clamp(0, MAX_QP as i32) as u8;
    let images = pipeline_images(&refs, &base, jrd_of, par)?;

    let codec: Box<dyn CodecAdapter> = match &a.encoder {
        Some(t) => Box::new(ExternalCodec::new(t.clone())?),
        None => Box::new(ProxyCodec),
    };
    let settings = run_rate_accuracy(
        &images,
        &a.base_qps,
        &a.delta_qps,
        codec.as_ref(),
        par,
        a.recon_dir.is_some(),
    )?;
    let raised: usize = settings
        .iter()
        .map(|s| s.images.iter().filter(|im| im.qp_b != s.base_qp).count())
        .sum();

    let mut out = Outputs::new();
    out.write(&a.out, settings_to_csv(&settings))?;
    if let Some(anchor_path) = &a.anchor_out {
        let anchor = run_uniform_anchor(&images, &a.base_qps, codec.as_ref(), par)?;
        out.write(anchor_path, settings_to_csv(&anchor))?;
    }
    if let Some(dir) = &a.recon_dir {
        write_setting_artifacts(&mut out, dir, &settings)?;
    }
    for s in &settings {
        println!(
            "base QP {:>2}, offset {:>2}: {:.4} bpp, object PSNR {:.3} dB",
            s.base_qp, s.delta_qp, s.mean_bpp, s.object_psnr
        );
    }

    let mut run = record("curve", a, None)?;
    run.notes.push(
        "background CTUs take the base QP; object CTUs take min(JRD) + offset clamped to [0, 63]; \
         the background QP is raised to the largest object QP where an object QP exceeds it"
            .into(),
    );
    run.notes.push(format!("codec: {}", codec.name()));
    if a.encoder.is_none() {
        run.notes.push(
            "rates are proxy-codec entropy estimates (proxy-bpp), not encoder bitstreams".into(),
        );
    }
    if raised > 0 {
        run.notes.push(format!(
            "background QP raised above the base QP in {raised} coded images"
        ));
    }
    out.commit(&a.out, run)
}
