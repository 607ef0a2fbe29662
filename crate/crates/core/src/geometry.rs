//! Box arithmetic, score filtering, non-maximum suppression and
//! prediction/label matching.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::datamodel::LabelView;
use crate::detector::Prediction;
use crate::error::{Error, Result};

/// Axis-aligned box as (left, top, width, height) in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!("degenerate extent w={w} h={h}")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }
    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x2() <= width && self.y2() <= height
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Keeps predictions with objectness `>= s_eps`, in input order.
pub fn score_filter(preds: &[Prediction], s_eps: f64) -> Vec<Prediction> {
    preds.iter().filter(|p| p.score >= s_eps).cloned().collect()
}

/// Descending score, ties by ascending position.
pub(crate) fn score_order(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy per-class NMS. A prediction survives iff its IoU with every
/// already kept prediction of the same argmax class is below `iou_thr`.
/// Output is sorted by descending score.
pub fn nms(preds: &[Prediction], iou_thr: f64) -> Vec<Prediction> {
    let order = score_order(preds);
    let mut kept: Vec<usize> = Vec::with_capacity(preds.len());
    for &i in &order {
        let class = preds[i].argmax();
        let suppressed = kept
            .iter()
            .any(|&k| preds[k].argmax() == class && iou(&preds[k].bbox, &preds[i].bbox) >= iou_thr);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| preds[i].clone()).collect()
}

/// Label with the largest IoU to `target` if it reaches `iou_thr`.
/// Ties go to the smaller label id. Classes are ignored.
pub fn match_box(target: &BBox, labels: &[LabelView], iou_thr: f64) -> Option<u64> {
    let mut best: Option<(f64, u64)> = None;
    for label in labels {
        let v = iou(target, &label.bbox);
        if v < iou_thr {
            continue;
        }
        best = match best {
            Some((bv, bid)) if bv > v || (bv == v && bid < label.id) => Some((bv, bid)),
            _ => Some((v, label.id)),
        };
    }
    best.map(|(_, id)| id)
}

pub fn match_class_agnostic(pred: &Prediction, labels: &[LabelView], iou_thr: f64) -> Option<u64> {
    match_box(&pred.bbox, labels, iou_thr)
}
