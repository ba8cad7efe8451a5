//! Small exchange formats used only by the command line.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dtjrd_core::dataset::load_manifest;
use dtjrd_core::geometry::BBox;
use dtjrd_core::metrics::{CurvePoint, RateAccuracyCurve};
use serde::Deserialize;

/// One row of a JRD table.
#[derive(Debug, Clone, PartialEq)]
pub struct JrdRow {
    pub object_id: String,
    pub source_image_id: Option<String>,
    pub jrd: f64,
}

pub const PREDICTIONS_HEADER: [&str; 3] = ["object_id", "source_image_id", "jrd"];

/// Reads a CSV with `object_id` and `jrd` columns (any order, extra columns
/// ignored) and an optional `source_image_id` column.
pub fn read_jrd_csv(path: &Path) -> Result<Vec<JrdRow>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col =
        col("object_id").ok_or_else(|| anyhow!("{}: no `object_id` column", path.display()))?;
    let jrd_col = col("jrd").ok_or_else(|| anyhow!("{}: no `jrd` column", path.display()))?;
    let img_col = col("source_image_id");
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let jrd: f64 = rec[jrd_col].trim().parse().with_context(|| {
            format!(
                "{}: row {}: bad jrd `{}`",
                path.display(),
                i + 2,
                &rec[jrd_col]
            )
        })?;
        rows.push(JrdRow {
            object_id: rec[id_col].trim().to_string(),
            source_image_id: img_col.map(|c| rec[c].trim().to_string()),
            jrd,
        });
    }
    Ok(rows)
}

/// Ground truth either as a JRD CSV or as a JSONL manifest.
pub fn read_ground_truth(path: &Path) -> Result<Vec<JrdRow>> {
    let is_manifest = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json")
    );
    if is_manifest {
        Ok(load_manifest(path)?
            .into_iter()
            .map(|r| JrdRow {
                object_id: r.object_id,
                source_image_id: Some(r.source_image_id),
                jrd: r.jrd as f64,
            })
            .collect())
    } else {
        read_jrd_csv(path)
    }
}

pub fn jrd_lookup(rows: &[JrdRow]) -> Result<HashMap<&str, &JrdRow>> {
    let mut map = HashMap::new();
    for r in rows {
        if map.insert(r.object_id.as_str(), r).is_some() {
            bail!("object `{}` appears twice", r.object_id);
        }
    }
    Ok(map)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxEntry {
    object_id: String,
    /// `[x, y, w, h]`
    bbox: [f64; 4],
}

/// Reads `[{"object_id": .., "bbox": [x, y, w, h]}, ..]`.
pub fn read_boxes(path: &Path) -> Result<Vec<(String, BBox)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<BoxEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(entries
        .into_iter()
        .map(|e| {
            (
                e.object_id,
                BBox::from_xywh(e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3]),
            )
        })
        .collect())
}

/// Reads the `rate_bpp` and `metric` columns of any CSV (a bare curve or a
/// settings table) and orders the points by rate.
pub fn read_curve(path: &Path) -> Result<RateAccuracyCurve> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| anyhow!("{}: no `{name}` column", path.display()))
    };
    let (rc, mc) = (col("rate_bpp")?, col("metric")?);
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let num = |c: usize| -> Result<f64> {
            rec[c]
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}: `{}`", path.display(), i + 2, &rec[c]))
        };
        points.push(CurvePoint {
            rate: num(rc)?,
            metric: num(mc)?,
        });
    }
    points.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    RateAccuracyCurve::new(points)
        .with_context(|| format!("{} is not a usable curve", path.display()))
}
