use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One detection, or one ground-truth object when `score` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
    pub score: Option<f64>,
}

/// JSON form with a COCO-style `[x, y, w, h]` box.
#[derive(Serialize, Deserialize)]
struct RawDetection {
    image_id: String,
    category: String,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl Detection {
    fn validate(&self, idx: usize) -> Result<()> {
        self.bbox
            .validate()
            .map_err(|e| Error::validation(None, format!("entry {idx}: {e}")))?;
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::validation(
                    None,
                    format!("entry {idx}: score {s} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let raw: Vec<RawDetection> = serde_json::from_str(text)
        .map_err(|e| Error::validation(None, format!("detections JSON: {e}")))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let d = Detection {
                image_id: r.image_id,
                category: r.category,
                bbox: BBox::from_xywh(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]),
                score: r.score,
            };
            d.validate(i)?;
            Ok(d)
        })
        .collect()
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

pub fn detections_to_json(dets: &[Detection]) -> String {
    let raw: Vec<RawDetection> = dets
        .iter()
        .map(|d| RawDetection {
            image_id: d.image_id.clone(),
            category: d.category.clone(),
            bbox: [d.bbox.x_ul, d.bbox.y_ul, d.bbox.width(), d.bbox.height()],
            score: d.score,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("detections serialize")
}

pub const RECALL_POINTS: usize = 101;

/// Area under the 101-point interpolated precision/recall curve.
/// `tp` flags follow detections sorted by descending score.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Per-category AP at one IoU threshold, keyed by category.
pub fn ap_per_category(
    dets: &[Detection],
    gt: &[Detection],
    iou_thr: f64,
) -> Result<BTreeMap<String, f64>> {
    if gt.is_empty() {
        return Err(Error::contract("mAP with empty ground truth"));
    }
    let categories: BTreeSet<&str> = gt.iter().map(|g| g.category.as_str()).collect();
    let mut out = BTreeMap::new();
    for cat in categories {
        let mut gts: HashMap<&str, Vec<(&BBox, bool)>> = HashMap::new();
        let mut n_gt = 0;
        for g in gt.iter().filter(|g| g.category == cat) {
            gts.entry(&g.image_id).or_default().push((&g.bbox, false));
            n_gt += 1;
        }
        let mut cand: Vec<&Detection> = dets.iter().filter(|d| d.category == cat).collect();
        // stable: equal scores keep input order
        cand.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
        let mut tp = Vec::with_capacity(cand.len());
        for d in cand {
            let mut best: Option<(usize, f64)> = None;
            if let Some(list) = gts.get(d.image_id.as_str()) {
                for (j, (b, used)) in list.iter().enumerate() {
                    if *used {
                        continue;
                    }
                    let iou = d.bbox.iou(b);
                    if iou >= iou_thr && best.is_none_or(|(_, v)| iou > v) {
                        best = Some((j, iou));
                    }
                }
            }
            match best {
                Some((j, _)) => {
                    gts.get_mut(d.image_id.as_str()).expect("matched image")[j].1 = true;
                    tp.push(true);
                }
                None => tp.push(false),
            }
        }
        out.insert(cat.to_owned(), average_precision(&tp, n_gt));
    }
    Ok(out)
}

/// Mean AP over ground-truth categories, as a percentage.
pub fn map_at_iou(dets: &[Detection], gt: &[Detection], iou_thr: f64) -> Result<f64> {
    let per = ap_per_category(dets, gt, iou_thr)?;
    Ok(100.0 * per.values().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(img: &str, b: BBox, score: Option<f64>) -> Detection {
        Detection {
            image_id: img.into(),
            category: "car".into(),
            bbox: b,
            score,
        }
    }

    #[test]
    fn perfect_detections_score_full_marks() {
        let gt = vec![
            det("a", BBox::new(0.0, 0.0, 10.0, 10.0), None),
            det("b", BBox::new(5.0, 5.0, 30.0, 40.0), None),
        ];
        let dets: Vec<_> = gt
            .iter()
            .map(|g| Detection {
                score: Some(1.0),
                ..g.clone()
            })
            .collect();
        assert!((map_at_iou(&dets, &gt, 0.5).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn low_overlap_is_a_miss() {
        let gt = vec![det("a", BBox::new(0.0, 0.0, 10.0, 10.0), None)];
        // IoU = 40 / 100 = 0.4
        let d = vec![det("a", BBox::new(0.0, 0.0, 10.0, 4.0), Some(0.9))];
        assert_eq!(map_at_iou(&d, &gt, 0.5).unwrap(), 0.0);
        assert!(map_at_iou(&d, &[], 0.5).is_err());
    }

    #[test]
    fn json_uses_xywh() {
        let d =
            parse_detections(r#"[{"image_id":"i","category":"c","bbox":[1,2,3,4],"score":0.5}]"#)
                .unwrap();
        assert_eq!(d[0].bbox, BBox::new(1.0, 2.0, 4.0, 6.0));
        assert_eq!(parse_detections(&detections_to_json(&d)).unwrap(), d);
        assert!(parse_detections(
            r#"[{"image_id":"i","category":"c","bbox":[1,2,3,4],"score":1.5}]"#
        )
        .is_err());
    }
}
