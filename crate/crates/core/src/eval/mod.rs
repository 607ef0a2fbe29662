//! Detection quality on the clean test split and review quality.

mod metrics;
mod plot;

use std::cmp::Ordering;

use crate::datamodel::{ClassId, ImageRecord};
use crate::detector::PredictionMap;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::review::{ProposalKind, ReviewOutcome};

pub use metrics::{
    aggregate, aggregate_csv, metrics_csv, read_metrics_csv, write_aggregate_csv, write_metrics_csv, AggregateRow,
    CycleMetrics, AGGREGATE_HEADER, METRICS_HEADER,
};
pub use plot::{render_svg, Curve};

/// Precision/recall trace and all-point interpolated AP for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ApCurve {
    pub ap: f64,
    /// (recall, precision) after each ranked detection.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// Indexed by class position; `None` for classes without ground truth.
    pub per_class: Vec<Option<ApCurve>>,
    pub map: f64,
}

/// Area under the monotone precision envelope (all-point interpolation).
pub fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    let mut rec = Vec::with_capacity(points.len() + 2);
    let mut pre = Vec::with_capacity(points.len() + 2);
    rec.push(0.0);
    pre.push(0.0);
    for &(r, p) in points {
        rec.push(r);
        pre.push(p);
    }
    rec.push(1.0);
    pre.push(0.0);
    for i in (0..pre.len() - 1).rev() {
        pre[i] = pre[i].max(pre[i + 1]);
    }
    (1..rec.len())
        .filter(|&i| rec[i] != rec[i - 1])
        .map(|i| (rec[i] - rec[i - 1]) * pre[i])
        .sum()
}

/// AP of `class` over the images in `truth`. Detections are assigned to
/// classes by argmax, pooled, and ranked by objectness (ties by image id,
/// then prediction index). Each detection greedily takes the unmatched
/// ground-truth box of its class with the highest IoU, if that reaches
/// `iou_thr`. Returns `None` when the class has no ground truth.
pub fn average_precision(
    preds: &PredictionMap,
    truth: &[ImageRecord],
    iou_thr: f64,
    class: ClassId,
) -> Option<ApCurve> {
    struct Det {
        score: f64,
        image: usize,
        index: usize,
        bbox: BBox,
    }
    let mut gts: Vec<Vec<BBox>> = Vec::with_capacity(truth.len());
    let mut dets = Vec::new();
    for (slot, im) in truth.iter().enumerate() {
        gts.push(
            im.labels
                .iter()
                .filter(|l| l.true_class == class)
                .map(|l| l.bbox)
                .collect(),
        );
        for (index, p) in preds.get(&im.id).into_iter().flatten().enumerate() {
            if p.argmax() == class {
                dets.push(Det {
                    score: p.score,
                    image: slot,
                    index,
                    bbox: p.bbox,
                });
            }
        }
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return None;
    }
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(truth[a.image].id.cmp(&truth[b.image].id))
            .then(a.index.cmp(&b.index))
    });
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(dets.len());
    for d in &dets {
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts[d.image].iter().enumerate() {
            if used[d.image][j] {
                continue;
            }
            let v = iou(&d.bbox, g);
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        match best {
            Some((v, j)) if v >= iou_thr => {
                used[d.image][j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    Some(ApCurve {
        ap: interpolated_ap(&points),
        points,
    })
}

/// Mean AP over classes that have ground truth in `truth`.
pub fn mean_average_precision(
    preds: &PredictionMap,
    truth: &[ImageRecord],
    k: usize,
    iou_thr: f64,
) -> Result<ApResult> {
    let per_class: Vec<Option<ApCurve>> = (0..k)
        .map(|i| average_precision(preds, truth, iou_thr, ClassId::from_index(i)))
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().map(|c| c.ap).collect();
    if defined.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(ApResult { per_class, map })
}

/// Fraction of reviewed proposals of `kind` that were real errors;
/// `None` when nothing of that kind was reviewed.
pub fn review_precision(outcomes: &[ReviewOutcome], kind: ProposalKind) -> Option<f64> {
    let of_kind: Vec<&ReviewOutcome> = outcomes.iter().filter(|o| o.proposal.kind == kind).collect();
    if of_kind.is_empty() {
        return None;
    }
    let hits = of_kind.iter().filter(|o| o.was_true_error).count();
    Some(hits as f64 / of_kind.len() as f64)
}
