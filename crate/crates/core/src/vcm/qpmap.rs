use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const CTU_SIZE: usize = 64;
pub const MAX_QP: u8 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtuKind {
    Object,
    Background,
}

impl fmt::Display for CtuKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CtuKind::Object => "object",
            CtuKind::Background => "background",
        })
    }
}

/// CTU classification of one image: which objects touch each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CtuGrid {
    pub image_w: usize,
    pub image_h: usize,
    pub ctu: usize,
    pub rows: usize,
    pub cols: usize,
    /// Indices into the bbox list, per cell in raster order.
    pub objects: Vec<Vec<usize>>,
}

impl CtuGrid {
    pub fn kind(&self, row: usize, col: usize) -> CtuKind {
        if self.objects[row * self.cols + col].is_empty() {
            CtuKind::Background
        } else {
            CtuKind::Object
        }
    }

    pub fn cell_rect(&self, row: usize, col: usize) -> BBox {
        cell_rect(self.image_w, self.image_h, self.ctu, row, col)
    }
}

/// Pixel rectangle of a cell, clipped to the image.
pub fn cell_rect(w: usize, h: usize, ctu: usize, row: usize, col: usize) -> BBox {
    BBox::new(
        (col * ctu) as f64,
        (row * ctu) as f64,
        ((col + 1) * ctu).min(w) as f64,
        ((row + 1) * ctu).min(h) as f64,
    )
}

/// A cell is an object cell iff its rectangle overlaps some bbox with
/// positive area.
pub fn classify_ctus(w: usize, h: usize, bboxes: &[BBox]) -> Result<CtuGrid> {
    if w == 0 || h == 0 {
        return Err(Error::validation(None, format!("empty image {w}x{h}")));
    }
    for (i, b) in bboxes.iter().enumerate() {
        b.validate()?;
        if b.x_ul < 0.0 || b.y_ul < 0.0 || b.x_lr > w as f64 || b.y_lr > h as f64 {
            return Err(Error::validation(
                None,
                format!("bbox {i} {b:?} extends outside the {w}x{h} image"),
            ));
        }
    }
    let rows = h.div_ceil(CTU_SIZE);
    let cols = w.div_ceil(CTU_SIZE);
    let mut objects = vec![Vec::new(); rows * cols];
    for (i, b) in bboxes.iter().enumerate() {
        // only the cells the box can reach
        let c0 = (b.x_ul / CTU_SIZE as f64).floor() as usize;
        let r0 = (b.y_ul / CTU_SIZE as f64).floor() as usize;
        let c1 = ((b.x_lr / CTU_SIZE as f64).ceil() as usize).min(cols);
        let r1 = ((b.y_lr / CTU_SIZE as f64).ceil() as usize).min(rows);
        for r in r0..r1 {
            for c in c0..c1 {
                if cell_rect(w, h, CTU_SIZE, r, c).intersection(b) > 0.0 {
                    objects[r * cols + c].push(i);
                }
            }
        }
    }
    Ok(CtuGrid {
        image_w: w,
        image_h: h,
        ctu: CTU_SIZE,
        rows,
        cols,
        objects,
    })
}

/// Per-CTU QPs with their classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QpMap {
    pub image_w: usize,
    pub image_h: usize,
    pub ctu: usize,
    pub rows: usize,
    pub cols: usize,
    pub qps: Vec<u8>,
    pub kinds: Vec<CtuKind>,
}

impl QpMap {
    /// Every cell background at `qp`.
    pub fn uniform(w: usize, h: usize, qp: u8) -> Result<Self> {
        if qp > MAX_QP {
            return Err(Error::validation(
                None,
                format!("QP {qp} outside [0, {MAX_QP}]"),
            ));
        }
        let rows = h.div_ceil(CTU_SIZE);
        let cols = w.div_ceil(CTU_SIZE);
        Ok(Self {
            image_w: w,
            image_h: h,
            ctu: CTU_SIZE,
            rows,
            cols,
            qps: vec![qp; rows * cols],
            kinds: vec![CtuKind::Background; rows * cols],
        })
    }

    pub fn qp(&self, row: usize, col: usize) -> u8 {
        self.qps[row * self.cols + col]
    }

    pub fn kind(&self, row: usize, col: usize) -> CtuKind {
        self.kinds[row * self.cols + col]
    }

    pub fn map_qps(&self, f: impl Fn(u8) -> u8) -> QpMap {
        QpMap {
            qps: self.qps.iter().map(|&q| f(q).min(MAX_QP)).collect(),
            ..self.clone()
        }
    }

    /// Largest object QP never exceeds the smallest background QP.
    pub fn check_invariant(&self) -> Result<()> {
        let obj = self
            .qps
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == CtuKind::Object);
        let bg = self
            .qps
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == CtuKind::Background);
        let max_obj = obj.map(|(q, _)| *q).max();
        let min_bg = bg.map(|(q, _)| *q).min();
        if let (Some(o), Some(b)) = (max_obj, min_bg) {
            if o > b {
                return Err(Error::validation(
                    None,
                    format!("object QP {o} exceeds background QP {b}"),
                ));
            }
        }
        if self.qps.iter().any(|&q| q > MAX_QP) {
            return Err(Error::validation(None, "QP above 63 in map"));
        }
        Ok(())
    }

    /// Sidecar text: `w h ctu`, then `row col qp kind` per cell.
    pub fn to_sidecar(&self) -> String {
        let mut s = format!("{} {} {}\n", self.image_w, self.image_h, self.ctu);
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push_str(&format!("{r} {c} {} {}\n", self.qp(r, c), self.kind(r, c)));
            }
        }
        s
    }

    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: &str| Error::validation(Some(line + 1), msg.to_string());
        let (i, head) = lines.next().ok_or_else(|| bad(0, "empty QP map"))?;
        let head: Vec<usize> = head
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(i, "header must be `w h ctu`")))
            .collect::<Result<_>>()?;
        let [w, h, ctu] = head[..] else {
            return Err(bad(i, "header must be `w h ctu`"));
        };
        if w == 0 || h == 0 || ctu == 0 {
            return Err(bad(i, "zero dimension in header"));
        }
        let (rows, cols) = (h.div_ceil(ctu), w.div_ceil(ctu));
        let mut qps = vec![None; rows * cols];
        let mut kinds = vec![CtuKind::Background; rows * cols];
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let [r, c, q, k] = f[..] else {
                return Err(bad(i, "cell line must be `row col qp kind`"));
            };
            let r: usize = r.parse().map_err(|_| bad(i, "bad row"))?;
            let c: usize = c.parse().map_err(|_| bad(i, "bad col"))?;
            let q: u8 = q.parse().map_err(|_| bad(i, "bad qp"))?;
            if r >= rows || c >= cols || q > MAX_QP {
                return Err(bad(i, "cell outside grid or QP above 63"));
            }
            let kind = match k {
                "object" => CtuKind::Object,
                "background" => CtuKind::Background,
                _ => return Err(bad(i, "kind must be object or background")),
            };
            if qps[r * cols + c].replace(q).is_some() {
                return Err(bad(i, "duplicate cell"));
            }
            kinds[r * cols + c] = kind;
        }
        let qps = qps
            .into_iter()
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| Error::validation(None, "QP map is missing cells"))?;
        Ok(Self {
            image_w: w,
            image_h: h,
            ctu,
            rows,
            cols,
            qps,
            kinds,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_sidecar(&text)
    }
}

/// A QP map plus what the assignment had to adjust.
#[derive(Debug, Clone, PartialEq)]
pub struct QpAssignment {
    pub map: QpMap,
    /// Background QP actually used (may exceed the requested one).
    pub qp_b: u8,
    pub warnings: Vec<String>,
}

/// Object cells get the smallest JRD among the objects they touch plus
/// `delta_qp`, clamped to [0, 63]; background cells get `qp_b`, raised to the
/// largest object QP when needed.
pub fn assign_qps(grid: &CtuGrid, jrds: &[u8], delta_qp: i32, qp_b: u8) -> Result<QpAssignment> {
    if let Some((i, j)) = jrds.iter().enumerate().find(|(_, &j)| j > MAX_QP) {
        return Err(Error::validation(
            None,
            format!("object {i} has JRD {j} outside [0, {MAX_QP}]"),
        ));
    }
    if qp_b > MAX_QP {
        return Err(Error::validation(
            None,
            format!("background QP {qp_b} outside [0, {MAX_QP}]"),
        ));
    }
    let n_obj = grid
        .objects
        .iter()
        .flatten()
        .copied()
        .max()
        .map_or(0, |m| m + 1);
    if jrds.len() < n_obj {
        return Err(Error::validation(
            None,
            format!("{} JRDs for a grid referencing {n_obj} objects", jrds.len()),
        ));
    }
    let mut warnings = Vec::new();
    if !(-4..=0).contains(&delta_qp) {
        warnings.push(format!(
            "QP offset {delta_qp} outside the usual [-4, 0] grid"
        ));
    }
    let mut qps = Vec::with_capacity(grid.objects.len());
    let mut kinds = Vec::with_capacity(grid.objects.len());
    for objs in &grid.objects {
        match objs.iter().map(|&i| jrds[i]).min() {
            Some(j) => {
                qps.push((j as i32 + delta_qp).clamp(0, MAX_QP as i32) as u8);
                kinds.push(CtuKind::Object);
            }
            None => {
                qps.push(0);
                kinds.push(CtuKind::Background);
            }
        }
    }
    let max_obj = qps
        .iter()
        .zip(&kinds)
        .filter(|(_, k)| **k == CtuKind::Object)
        .map(|(q, _)| *q)
        .max();
    let mut bg = qp_b;
    if let Some(m) = max_obj.filter(|&m| m > qp_b) {
        warnings.push(format!(
            "background QP raised from {qp_b} to {m} to stay above object QPs"
        ));
        bg = m;
    }
    for (q, k) in qps.iter_mut().zip(&kinds) {
        if *k == CtuKind::Background {
            *q = bg;
        }
    }
    for w in &warnings {
        log::debug!("{w}");
    }
    let map = QpMap {
        image_w: grid.image_w,
        image_h: grid.image_h,
        ctu: grid.ctu,
        rows: grid.rows,
        cols: grid.cols,
        qps,
        kinds,
    };
    Ok(QpAssignment {
        map,
        qp_b: bg,
        warnings,
    })
}
