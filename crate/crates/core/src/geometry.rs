//! Axis-aligned boxes, intersection-over-union, and the 0/100 correctness loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss value for a correct localization.
pub const CORRECT: u32 = 0;
/// Loss value for an incorrect localization.
pub const INCORRECT: u32 = 100;

/// IoU must strictly exceed this for a prediction to count as correct.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Closed axis-aligned box. Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::input(format!("box has non-finite coordinate: {coords:?}")));
        }
        if x_max < x_min || y_max < y_min {
            return Err(Error::input(format!("box has max < min: {coords:?}")));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

/// Intersection over union. Two boxes with zero union (both degenerate) have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// 0 when the prediction overlaps the gold box with IoU strictly above 0.5, else 100.
pub fn loss(pred: &BBox, gold: &BBox) -> u32 {
    if iou(pred, gold) > IOU_THRESHOLD {
        CORRECT
    } else {
        INCORRECT
    }
}
