//! Pool scoring and ranking for acquisition.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::DatasetStore;
use crate::detector::{Prediction, PredictionMap};
use crate::error::{Error, Result};
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    Random,
    Entropy,
}

impl FromStr for QueryStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(QueryStrategy::Random),
            "entropy" => Ok(QueryStrategy::Entropy),
            _ => Err(Error::Config(format!("unknown query strategy {s:?}"))),
        }
    }
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryStrategy::Random => "random",
            QueryStrategy::Entropy => "entropy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub image_id: u64,
    pub score: f64,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Add-one smoothed inverse class frequency, clamped to `[lo, hi]`.
pub fn class_weights(histogram: &[usize], (lo, hi): (f64, f64)) -> Vec<f64> {
    let k = histogram.len() as f64;
    let total: usize = histogram.iter().sum();
    histogram
        .iter()
        .map(|&n| ((total as f64 + k) / (k * (n as f64 + 1.0))).clamp(lo, hi))
        .collect()
}

/// Observed-class counts over present labels of active images.
pub fn active_class_histogram(store: &DatasetStore) -> Vec<usize> {
    let mut hist = vec![0; store.k()];
    for im in store.train.iter().filter(|im| im.is_active()) {
        for l in im.noisy_labels() {
            hist[l.class.index()] += 1;
        }
    }
    hist
}

/// Weighted sum of per-prediction entropies; weights are looked up by the
/// prediction's argmax class.
pub fn image_query_score(preds: &[Prediction], weights: &[f64]) -> f64 {
    preds
        .iter()
        .map(|p| weights[p.argmax().index()] * entropy(&p.probs))
        .sum()
}

pub fn score_pool(pool: &[u64], preds: &PredictionMap, weights: &[f64]) -> Result<Vec<ImageScore>> {
    pool.iter()
        .map(|&id| {
            let p = preds.get(&id).ok_or(Error::MissingPredictions(id))?;
            Ok(ImageScore {
                image_id: id,
                score: image_query_score(p, weights),
            })
        })
        .collect()
}

/// Acquisition order for `pool`. Entropy ranks by descending score with
/// ties by ascending image id; random is a uniform shuffle.
pub fn rank_pool(
    pool: &[u64],
    strategy: QueryStrategy,
    preds: &PredictionMap,
    weights: &[f64],
    rng: &mut Rng,
) -> Result<Vec<u64>> {
    match strategy {
        QueryStrategy::Random => {
            let mut order = pool.to_vec();
            order.sort_unstable();
            order.shuffle(rng);
            Ok(order)
        }
        QueryStrategy::Entropy => {
            let mut scores = score_pool(pool, preds, weights)?;
            scores.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(Ordering::Equal)
                    .then(a.image_id.cmp(&b.image_id))
            });
            Ok(scores.into_iter().map(|s| s.image_id).collect())
        }
    }
}
