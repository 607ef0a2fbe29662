//! Browser bindings for the simulator. Every export takes plain numbers and
//! returns a JSON string for the page script to draw.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use alreview::datamodel::{generate_synthetic_dataset, inject_noise, DatasetStore, Provenance, SynthSpec};
use alreview::detector::{postprocess, predict_surrogate, PredictionMap, SurrogateParams};
use alreview::harness::{run_experiment, ExperimentConfig};
use alreview::query::QueryStrategy;
use alreview::review::{flip_proposals, is_true_error, miss_proposals, review_inputs, ProposalKind, ReviewPolicy};
use alreview::seeding::{substream, tag};

const DEMO_IMAGES: usize = 40;

#[derive(Serialize)]
struct Label {
    id: u64,
    bbox: [f64; 4],
    true_class: u32,
    observed_class: u32,
    provenance: Provenance,
}

#[derive(Serialize)]
struct ImageView {
    image_id: u64,
    width: f64,
    height: f64,
    labels: Vec<Label>,
    dataset_labels: usize,
    dataset_missed: usize,
    dataset_flipped: usize,
}

#[derive(Serialize)]
struct Box2 {
    bbox: [f64; 4],
    score: f64,
    class: u32,
}

#[derive(Serialize)]
struct Proposal {
    kind: ProposalKind,
    target: u64,
    bbox: [f64; 4],
    rank_score: f64,
    true_error: bool,
}

#[derive(Serialize)]
struct ProposalView {
    image: ImageView,
    skill: f64,
    predictions: Vec<Box2>,
    proposals: Vec<Proposal>,
}

#[derive(Serialize)]
struct Curve {
    label: String,
    points: Vec<[f64; 2]>,
}

fn noisy_store(seed: u64, gamma_l: f64) -> alreview::Result<DatasetStore> {
    let spec = SynthSpec {
        n_train: DEMO_IMAGES,
        n_test: 0,
        ..SynthSpec::default()
    };
    let mut store = generate_synthetic_dataset(&spec, &mut substream(seed, &[tag::DATA]))?;
    inject_noise(&mut store, gamma_l.clamp(0.0, 1.0), &mut substream(seed, &[tag::NOISE]))?;
    for im in &mut store.train {
        im.pool_state = alreview::datamodel::PoolState::Active;
    }
    Ok(store)
}

fn image_view(store: &DatasetStore, index: usize) -> ImageView {
    let im = &store.train[index % store.train.len()];
    let all = store.train.iter().flat_map(|im| &im.labels);
    ImageView {
        image_id: im.id,
        width: im.width,
        height: im.height,
        labels: im
            .labels
            .iter()
            .map(|l| Label {
                id: l.id,
                bbox: l.bbox.into(),
                true_class: l.true_class.0,
                observed_class: l.observed_class.0,
                provenance: l.provenance,
            })
            .collect(),
        dataset_labels: all.clone().count(),
        dataset_missed: all.clone().filter(|l| !l.present).count(),
        dataset_flipped: all.filter(|l| l.present && l.observed_class != l.true_class).count(),
    }
}

/// One image of a small noisy dataset, with every label's fate.
pub fn noise_view(seed: u64, gamma_l: f64, index: usize) -> alreview::Result<String> {
    let store = noisy_store(seed, gamma_l)?;
    Ok(serde_json::to_string(&image_view(&store, index)).expect("serializable"))
}

/// Surrogate predictions at `skill` on one image and the review proposals
/// they raise, each marked with whether it points at a real error.
pub fn proposal_view(seed: u64, gamma_l: f64, skill: f64, s_eps: f64, index: usize) -> alreview::Result<String> {
    let store = noisy_store(seed, gamma_l)?;
    let im = &store.train[index % store.train.len()];
    let params = SurrogateParams::default();
    let raw = predict_surrogate(
        im,
        store.k(),
        skill,
        &params,
        &mut substream(seed, &[tag::PREDICT, 0, im.id]),
    );
    let kept = postprocess(&raw, s_eps.clamp(0.0, 1.0), 0.5);
    let mut preds = PredictionMap::new();
    preds.insert(im.id, kept.clone());
    let inputs: Vec<_> = review_inputs(&store, &preds)
        .into_iter()
        .filter(|i| i.image_id == im.id)
        .collect();
    let mut rng = substream(seed, &[tag::REVIEW_ORDER]);
    let mut proposals = miss_proposals(&inputs, 0.3, ReviewPolicy::HighestLoss, &mut rng);
    proposals.extend(flip_proposals(&inputs, 0.3, ReviewPolicy::HighestLoss, &mut rng));
    let view = ProposalView {
        image: image_view(&store, index),
        skill,
        predictions: kept
            .iter()
            .map(|p| Box2 {
                bbox: p.bbox.into(),
                score: p.score,
                class: p.argmax().0,
            })
            .collect(),
        proposals: proposals
            .iter()
            .map(|p| Proposal {
                kind: p.kind,
                target: p.target,
                bbox: p.bbox.into(),
                rank_score: p.rank_score,
                true_error: is_true_error(p, &store, 0.3),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&view).expect("serializable"))
}

/// mAP against cumulative budget for the four query/review combinations on
/// a reduced experiment.
pub fn curves_view(seed: u64, lambda: f64, cycles: u32) -> alreview::Result<String> {
    let arms = [
        (
            "entropy + highest loss",
            QueryStrategy::Entropy,
            ReviewPolicy::HighestLoss,
        ),
        (
            "random + highest loss",
            QueryStrategy::Random,
            ReviewPolicy::HighestLoss,
        ),
        ("random, no review", QueryStrategy::Random, ReviewPolicy::None),
        ("random + random review", QueryStrategy::Random, ReviewPolicy::Random),
    ];
    let mut out = Vec::with_capacity(arms.len());
    for (label, strategy, policy) in arms {
        let config = ExperimentConfig {
            seed,
            lambda,
            cycles,
            n_train: 1000,
            n_test: 200,
            strategy,
            policy,
            ..ExperimentConfig::default()
        };
        let state = run_experiment(&config)?;
        out.push(Curve {
            label: label.into(),
            points: state.metrics.iter().map(|m| [m.budget_total as f64, m.map]).collect(),
        });
    }
    Ok(serde_json::to_string(&out).expect("serializable"))
}

fn js(r: alreview::Result<String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = noiseView)]
pub fn noise_view_js(seed: u32, gamma_l: f64, index: u32) -> Result<String, JsValue> {
    js(noise_view(seed as u64, gamma_l, index as usize))
}

#[wasm_bindgen(js_name = proposalView)]
pub fn proposal_view_js(seed: u32, gamma_l: f64, skill: f64, s_eps: f64, index: u32) -> Result<String, JsValue> {
    js(proposal_view(seed as u64, gamma_l, skill, s_eps, index as usize))
}

#[wasm_bindgen(js_name = curvesView)]
pub fn curves_view_js(seed: u32, lambda: f64, cycles: u32) -> Result<String, JsValue> {
    js(curves_view(seed as u64, lambda, cycles))
}
