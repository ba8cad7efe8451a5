use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[x_ul, y_ul, x_lr, y_lr]` in pixels; the lower-right
/// corner is exclusive, so width is `x_lr - x_ul`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_ul: f64,
    pub y_ul: f64,
    pub x_lr: f64,
    pub y_lr: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_ul, b.y_ul, b.x_lr, b.y_lr]
    }
}

impl BBox {
    pub const fn new(x_ul: f64, y_ul: f64, x_lr: f64, y_lr: f64) -> Self {
        Self {
            x_ul,
            y_ul,
            x_lr,
            y_lr,
        }
    }

    /// From COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x_lr - self.x_ul
    }

    pub fn height(&self) -> f64 {
        self.y_lr - self.y_ul
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_ul, self.y_ul, self.x_lr, self.y_lr]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_lr <= self.x_ul || self.y_lr <= self.y_ul {
            return Err(Error::validation(None, format!("degenerate bbox {self:?}")));
        }
        Ok(())
    }

    /// Area of the overlap (zero when the boxes only touch).
    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x_lr.min(other.x_lr) - self.x_ul.max(other.x_ul);
        let h = self.y_lr.min(other.y_lr) - self.y_ul.max(other.y_ul);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}
