//! Label-error proposals, the noisy reviewer, and budget accounting.
//!
//! Proposal generation sees only predictions and the annotator-visible
//! labels. The adjudication functions are the one place in the cycle that
//! reads hidden ground truth.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::noise::other_class;
use crate::datamodel::{DatasetStore, ImageRecord, LabelView, Provenance};
use crate::detector::{Prediction, PredictionMap};
use crate::error::{Error, Result};
use crate::geometry::{iou, match_box, match_class_agnostic, BBox};
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Miss,
    Flip,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalKind::Miss => "miss",
            ProposalKind::Flip => "flip",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewPolicy {
    None,
    Random,
    HighestLoss,
}

impl FromStr for ReviewPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReviewPolicy::None),
            "random" => Ok(ReviewPolicy::Random),
            "highest-loss" | "highest_loss" | "hl" => Ok(ReviewPolicy::HighestLoss),
            _ => Err(Error::Config(format!("unknown review policy {s:?}"))),
        }
    }
}

impl fmt::Display for ReviewPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewPolicy::None => "none",
            ReviewPolicy::Random => "random",
            ReviewPolicy::HighestLoss => "highest-loss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewProposal {
    pub kind: ProposalKind,
    pub image_id: u64,
    /// Prediction index within the image (miss) or label id (flip).
    pub target: u64,
    /// Box of the flagged prediction (miss) or label (flip).
    pub bbox: BBox,
    /// Objectness (miss) or cross-entropy against the label (flip).
    pub rank_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Restored,
    Corrected,
    Corrupted,
    Rejected,
    Overlooked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub proposal: ReviewProposal,
    pub was_true_error: bool,
    pub action: ReviewAction,
    pub cost: u32,
}

/// Per-cycle spend under budget `B`, review fraction `lambda` and the
/// review split `alpha` between misses and flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub budget: u64,
    pub lambda: f64,
    pub alpha: f64,
    pub spent_query: u64,
    pub spent_review_miss: u64,
    pub spent_review_flip: u64,
}

impl BudgetLedger {
    pub fn new(budget: u64, lambda: f64, alpha: f64) -> Self {
        BudgetLedger {
            budget,
            lambda,
            alpha,
            spent_query: 0,
            spent_review_miss: 0,
            spent_review_flip: 0,
        }
    }

    /// `round((1 - lambda) * B)`.
    pub fn query_budget(&self) -> u64 {
        ((1.0 - self.lambda) * self.budget as f64).round() as u64
    }

    /// Nominal review budget `B - C_Q`.
    pub fn review_budget(&self) -> u64 {
        self.budget - self.query_budget()
    }

    /// What is left for review after the query, overshoot included.
    pub fn review_budget_effective(&self) -> u64 {
        self.budget.saturating_sub(self.spent_query)
    }

    /// (miss lane, flip lane) of the effective review budget.
    pub fn review_lanes(&self) -> (u64, u64) {
        let r = self.review_budget_effective();
        let miss = (self.alpha * r as f64 + 1e-9).floor() as u64;
        (miss, r - miss)
    }

    pub fn total_spent(&self) -> u64 {
        self.spent_query + self.spent_review_miss + self.spent_review_flip
    }
}

/// Visible review input for one active image.
#[derive(Debug, Clone)]
pub struct ReviewInput<'a> {
    pub image_id: u64,
    pub preds: &'a [Prediction],
    pub labels: Vec<LabelView>,
}

/// Inputs for every active image, ascending by id. Images without
/// predictions get an empty list.
pub fn review_inputs<'a>(store: &DatasetStore, preds: &'a PredictionMap) -> Vec<ReviewInput<'a>> {
    store
        .train
        .iter()
        .filter(|im| im.is_active())
        .map(|im| ReviewInput {
            image_id: im.id,
            preds: preds.get(&im.id).map(Vec::as_slice).unwrap_or(&[]),
            labels: im.noisy_labels(),
        })
        .collect()
}

fn order(mut proposals: Vec<ReviewProposal>, policy: ReviewPolicy, rng: &mut Rng) -> Vec<ReviewProposal> {
    match policy {
        ReviewPolicy::None => Vec::new(),
        ReviewPolicy::Random => {
            proposals.shuffle(rng);
            proposals
        }
        ReviewPolicy::HighestLoss => {
            proposals.sort_by(|a, b| {
                b.rank_score
                    .partial_cmp(&a.rank_score)
                    .unwrap_or(Ordering::Equal)
                    .then(a.image_id.cmp(&b.image_id))
                    .then(a.target.cmp(&b.target))
            });
            proposals
        }
    }
}

/// Predictions that match no present label at `iou_eps`, ranked by
/// objectness (highest loss) or shuffled (random).
pub fn miss_proposals(
    inputs: &[ReviewInput<'_>],
    iou_eps: f64,
    policy: ReviewPolicy,
    rng: &mut Rng,
) -> Vec<ReviewProposal> {
    let mut out = Vec::new();
    for input in inputs {
        for (i, p) in input.preds.iter().enumerate() {
            if match_class_agnostic(p, &input.labels, iou_eps).is_none() {
                out.push(ReviewProposal {
                    kind: ProposalKind::Miss,
                    image_id: input.image_id,
                    target: i as u64,
                    bbox: p.bbox,
                    rank_score: p.score,
                });
            }
        }
    }
    order(out, policy, rng)
}

/// `-ln p` of the observed class under the assigned prediction.
pub fn flip_score(pred: &Prediction, label: &LabelView) -> f64 {
    -pred.prob(label.class).ln()
}

/// Index of the prediction overlapping `label` most, if it reaches `iou_eps`.
/// Ties go to the lower index.
pub fn assign_prediction(label: &LabelView, preds: &[Prediction], iou_eps: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in preds.iter().enumerate() {
        let v = iou(&label.bbox, &p.bbox);
        if v >= iou_eps && best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Present labels with an assigned prediction, ranked by cross-entropy
/// (highest loss) or shuffled (random). Unassigned labels are skipped.
pub fn flip_proposals(
    inputs: &[ReviewInput<'_>],
    iou_eps: f64,
    policy: ReviewPolicy,
    rng: &mut Rng,
) -> Vec<ReviewProposal> {
    let mut out = Vec::new();
    for input in inputs {
        for label in &input.labels {
            if let Some(i) = assign_prediction(label, input.preds, iou_eps) {
                out.push(ReviewProposal {
                    kind: ProposalKind::Flip,
                    image_id: input.image_id,
                    target: label.id,
                    bbox: label.bbox,
                    rank_score: flip_score(&input.preds[i], label),
                });
            }
        }
    }
    order(out, policy, rng)
}

fn outcome(proposal: &ReviewProposal, was_true_error: bool, action: ReviewAction) -> ReviewOutcome {
    ReviewOutcome {
        proposal: *proposal,
        was_true_error,
        action,
        cost: 1,
    }
}

/// Hidden (missed) label of `image` best overlapping `bbox` at `iou_eps`.
fn hidden_match(image: &ImageRecord, bbox: &BBox, iou_eps: f64) -> Option<u64> {
    let hidden: Vec<LabelView> = image
        .labels
        .iter()
        .filter(|l| !l.present)
        .map(|l| LabelView {
            id: l.id,
            bbox: l.bbox,
            class: l.true_class,
        })
        .collect();
    match_box(bbox, &hidden, iou_eps)
}

/// A miss proposal is real iff the flagged box overlaps a hidden missed
/// label at `iou_eps`. Real misses are restored with probability
/// `1 - gamma_r`; false alarms are rejected without changes.
pub fn adjudicate_miss(
    proposal: &ReviewProposal,
    store: &mut DatasetStore,
    iou_eps: f64,
    gamma_r: f64,
    rng: &mut Rng,
) -> Result<ReviewOutcome> {
    let idx = store
        .train_index(proposal.image_id)
        .ok_or(Error::UnknownImage(proposal.image_id))?;
    let image = &mut store.train[idx];
    let Some(id) = hidden_match(image, &proposal.bbox, iou_eps) else {
        return Ok(outcome(proposal, false, ReviewAction::Rejected));
    };
    if rng.random::<f64>() < gamma_r {
        return Ok(outcome(proposal, true, ReviewAction::Overlooked));
    }
    let label = image
        .labels
        .iter_mut()
        .find(|l| l.id == id)
        .expect("matched label exists");
    label.present = true;
    label.observed_class = label.true_class;
    label.provenance = Provenance::Restored;
    Ok(outcome(proposal, true, ReviewAction::Restored))
}

/// The reviewer sets the true class with probability `1 - gamma_r` and a
/// uniformly drawn wrong class otherwise, whether or not the label was
/// actually wrong.
pub fn adjudicate_flip(
    proposal: &ReviewProposal,
    store: &mut DatasetStore,
    gamma_r: f64,
    rng: &mut Rng,
) -> Result<ReviewOutcome> {
    let k = store.k();
    let idx = store
        .train_index(proposal.image_id)
        .ok_or(Error::UnknownImage(proposal.image_id))?;
    let label = store.train[idx]
        .labels
        .iter_mut()
        .find(|l| l.id == proposal.target)
        .ok_or_else(|| Error::Validation(format!("flip target label {} not found", proposal.target)))?;
    if !label.present {
        return Err(Error::Validation(format!(
            "flip target label {} is not present",
            label.id
        )));
    }
    let was_true_error = label.observed_class != label.true_class;
    if rng.random::<f64>() < gamma_r {
        label.observed_class = other_class(rng, k, label.true_class);
        label.provenance = Provenance::ReviewCorrupted;
        return Ok(outcome(proposal, was_true_error, ReviewAction::Corrupted));
    }
    label.observed_class = label.true_class;
    if matches!(label.provenance, Provenance::Flipped | Provenance::ReviewCorrupted) {
        label.provenance = Provenance::Restored;
    }
    Ok(outcome(proposal, was_true_error, ReviewAction::Corrected))
}

/// How many proposals of one kind were generated and how many of them point
/// at a real error. The ratio is the precision a random reviewer expects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CandidateStats {
    pub total: usize,
    pub true_errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReviewReport {
    pub outcomes: Vec<ReviewOutcome>,
    pub forfeited_miss: u64,
    pub forfeited_flip: u64,
    pub candidates_miss: CandidateStats,
    pub candidates_flip: CandidateStats,
}

/// Whether `proposal` points at a real error in the current store, without
/// changing anything.
pub fn is_true_error(proposal: &ReviewProposal, store: &DatasetStore, iou_eps: f64) -> bool {
    let Some(image) = store.train_image(proposal.image_id) else {
        return false;
    };
    match proposal.kind {
        ProposalKind::Miss => hidden_match(image, &proposal.bbox, iou_eps).is_some(),
        ProposalKind::Flip => image
            .labels
            .iter()
            .any(|l| l.id == proposal.target && l.present && l.observed_class != l.true_class),
    }
}

fn candidate_stats(proposals: &[ReviewProposal], store: &DatasetStore, iou_eps: f64) -> CandidateStats {
    CandidateStats {
        total: proposals.len(),
        true_errors: proposals.iter().filter(|p| is_true_error(p, store, iou_eps)).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReviewSettings {
    pub policy: ReviewPolicy,
    pub gamma_r: f64,
    pub iou_eps: f64,
}

/// Reviews the active set under the ledger's remaining budget. Proposals
/// are built from the state at entry; misses are adjudicated before flips,
/// each lane in ranked order until its budget or its proposals run out.
pub fn run_review(
    store: &mut DatasetStore,
    preds: &PredictionMap,
    settings: ReviewSettings,
    ledger: &mut BudgetLedger,
    rng: &mut Rng,
) -> Result<ReviewReport> {
    let (miss_budget, flip_budget) = ledger.review_lanes();
    if settings.policy == ReviewPolicy::None {
        return Ok(ReviewReport {
            outcomes: Vec::new(),
            forfeited_miss: miss_budget,
            forfeited_flip: flip_budget,
            ..ReviewReport::default()
        });
    }
    let (misses, flips) = {
        let inputs = review_inputs(store, preds);
        (
            miss_proposals(&inputs, settings.iou_eps, settings.policy, rng),
            flip_proposals(&inputs, settings.iou_eps, settings.policy, rng),
        )
    };
    let mut report = ReviewReport {
        candidates_miss: candidate_stats(&misses, store, settings.iou_eps),
        candidates_flip: candidate_stats(&flips, store, settings.iou_eps),
        ..ReviewReport::default()
    };
    for p in misses.iter().take(miss_budget as usize) {
        report
            .outcomes
            .push(adjudicate_miss(p, store, settings.iou_eps, settings.gamma_r, rng)?);
        ledger.spent_review_miss += 1;
    }
    for p in flips.iter().take(flip_budget as usize) {
        report.outcomes.push(adjudicate_flip(p, store, settings.gamma_r, rng)?);
        ledger.spent_review_flip += 1;
    }
    report.forfeited_miss = miss_budget - ledger.spent_review_miss;
    report.forfeited_flip = flip_budget - ledger.spent_review_flip;
    Ok(report)
}
