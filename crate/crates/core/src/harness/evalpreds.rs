//! One-shot query ranking, review and evaluation of an external detector's
//! predictions against a (possibly noisy) dataset.

use crate::datamodel::{DatasetStore, PoolState};
use crate::detector::{postprocess, PredictionMap};
use crate::error::Result;
use crate::eval::{mean_average_precision, review_precision};
use crate::query::{active_class_histogram, class_weights, rank_pool, score_pool, ImageScore, QueryStrategy};
use crate::review::{run_review, BudgetLedger, ProposalKind, ReviewOutcome, ReviewPolicy, ReviewSettings};
use crate::seeding::{substream, tag};

#[derive(Debug, Clone)]
pub struct EvalPredsOptions {
    pub seed: u64,
    pub strategy: QueryStrategy,
    pub policy: ReviewPolicy,
    pub s_eps: f64,
    pub nms_iou: f64,
    pub iou_eps: f64,
    pub eval_iou: f64,
    pub gamma_r: f64,
    pub alpha: f64,
    /// `None` reviews every proposal.
    pub review_budget: Option<u64>,
    pub weight_clamp: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct EvalPredsReport {
    /// Train images with predictions, in acquisition order.
    pub ranking: Vec<ImageScore>,
    pub outcomes: Vec<ReviewOutcome>,
    pub precision_miss: Option<f64>,
    pub precision_flip: Option<f64>,
    /// `None` when the dataset has no test images with ground truth.
    pub map: Option<f64>,
}

/// Treats every train image as labeled: ranks them as a query would, reviews
/// them under the given budget (adjudicating against the hidden truth held
/// in `store`), and scores the test split.
pub fn evaluate_predictions(
    store: &mut DatasetStore,
    raw: &PredictionMap,
    opts: &EvalPredsOptions,
) -> Result<EvalPredsReport> {
    let preds: PredictionMap = raw
        .iter()
        .map(|(&id, ps)| (id, postprocess(ps, opts.s_eps, opts.nms_iou)))
        .collect();
    for im in &mut store.train {
        im.pool_state = PoolState::Active;
    }

    let weights = class_weights(&active_class_histogram(store), opts.weight_clamp);
    let candidates: Vec<u64> = store
        .train
        .iter()
        .map(|im| im.id)
        .filter(|id| preds.contains_key(id))
        .collect();
    let order = rank_pool(
        &candidates,
        opts.strategy,
        &preds,
        &weights,
        &mut substream(opts.seed, &[tag::QUERY]),
    )?;
    let scores = score_pool(&order, &preds, &weights)?;

    // unlimited review: each lane gets ~2^31 units, more than any proposal list
    let (budget, alpha) = match opts.review_budget {
        Some(b) => (b, opts.alpha),
        None => (u32::MAX as u64, 0.5),
    };
    let mut ledger = BudgetLedger::new(budget, 1.0, alpha);
    let settings = ReviewSettings {
        policy: opts.policy,
        gamma_r: opts.gamma_r,
        iou_eps: opts.iou_eps,
    };
    let outcomes = run_review(
        store,
        &preds,
        settings,
        &mut ledger,
        &mut substream(opts.seed, &[tag::ADJUDICATE]),
    )?
    .outcomes;

    let map = mean_average_precision(&preds, &store.test, store.k(), opts.eval_iou)
        .ok()
        .map(|r| r.map);
    Ok(EvalPredsReport {
        ranking: scores,
        precision_miss: review_precision(&outcomes, ProposalKind::Miss),
        precision_flip: review_precision(&outcomes, ProposalKind::Flip),
        outcomes,
        map,
    })
}
