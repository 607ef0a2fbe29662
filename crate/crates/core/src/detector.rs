//! Per-image predictions, either from a parametric surrogate detector or
//! from a predictions file written by a real detector.
//!
//! The surrogate has no learned weights. Its skill is a scalar in [0, 1)
//! derived from how many boxes the active set holds and how many of them
//! are wrong. Detections are sampled around the image's true objects, so a
//! missed label still attracts a confident detection and a flipped label
//! still attracts a prediction that disagrees with it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassId, DatasetStore, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{nms, score_filter, BBox};
use crate::seeding::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BBox,
    /// Objectness.
    pub score: f64,
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Validates and renormalizes `probs`; the sum must already be within
    /// 1e-6 of one.
    pub fn new(bbox: BBox, score: f64, probs: Vec<f64>) -> Result<Self> {
        Self::build(bbox, score, probs, false)
    }

    fn build(bbox: BBox, score: f64, mut probs: Vec<f64>, renormalize: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!("objectness {score} outside [0,1]")));
        }
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation(
                "class probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 || (!renormalize && (sum - 1.0).abs() > 1e-6) {
            return Err(Error::Validation(format!(
                "class probabilities sum to {sum}, expected 1"
            )));
        }
        for p in &mut probs {
            *p /= sum;
        }
        Ok(Prediction { bbox, score, probs })
    }

    /// Most probable class; ties go to the lowest id.
    pub fn argmax(&self) -> ClassId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        ClassId::from_index(best)
    }

    pub fn prob(&self, c: ClassId) -> f64 {
        self.probs[c.index()]
    }
}

/// Surrogate knobs. Defaults give a weak detector at a few hundred boxes
/// and a strong one at a few thousand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Active box count at which raw skill reaches one half.
    pub n_half: f64,
    /// Skill lost per unit of active-set error fraction.
    pub noise_penalty: f64,
    pub skill_min: f64,
    pub jitter_frac: f64,
    /// Expected background false positives per image at zero skill.
    pub fp_rate: f64,
    pub detect_base: f64,
    pub detect_gain: f64,
    pub objectness_base: f64,
    pub objectness_gain: f64,
    pub objectness_std: f64,
    /// Probability mass on the true class is `conc_base + conc_gain * skill`.
    pub conc_base: f64,
    pub conc_gain: f64,
    /// Relative multiplicative jitter applied to every class probability.
    pub prob_jitter: f64,
    /// Beta shape of background objectness (mean a / (a + b)).
    pub fp_beta_a: f64,
    pub fp_beta_b: f64,
    /// Background box side as a fraction of the image side.
    pub fp_size_min: f64,
    pub fp_size_max: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            n_half: 500.0,
            noise_penalty: 0.5,
            skill_min: 0.05,
            jitter_frac: 0.15,
            fp_rate: 3.0,
            detect_base: 0.5,
            detect_gain: 0.5,
            objectness_base: 0.55,
            objectness_gain: 0.4,
            objectness_std: 0.1,
            conc_base: 0.5,
            conc_gain: 0.45,
            prob_jitter: 0.05,
            fp_beta_a: 1.0,
            fp_beta_b: 4.0,
            fp_size_min: 0.08,
            fp_size_max: 0.25,
        }
    }
}

impl SurrogateParams {
    pub fn check(&self) -> Result<()> {
        let fields = [
            self.n_half,
            self.noise_penalty,
            self.skill_min,
            self.jitter_frac,
            self.fp_rate,
            self.detect_base,
            self.detect_gain,
            self.objectness_base,
            self.objectness_gain,
            self.objectness_std,
            self.conc_base,
            self.conc_gain,
            self.prob_jitter,
            self.fp_beta_a,
            self.fp_beta_b,
            self.fp_size_min,
            self.fp_size_max,
        ];
        let fail = |m: &str| Err(Error::Config(format!("surrogate: {m}")));
        if fields.iter().any(|v| !v.is_finite()) {
            return fail("parameters must be finite");
        }
        if self.n_half <= 0.0 {
            return fail("n_half must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_penalty) {
            return fail("noise_penalty must lie in [0,1]");
        }
        if !(0.0..1.0).contains(&self.skill_min) {
            return fail("skill_min must lie in [0,1)");
        }
        if self.fp_rate < 0.0 || self.jitter_frac < 0.0 || self.objectness_std < 0.0 {
            return fail("rates and spreads must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.prob_jitter) {
            return fail("prob_jitter must lie in [0,1)");
        }
        if self.conc_base + self.conc_gain > 1.0 || self.conc_base < 0.0 {
            return fail("class concentration must stay within [0,1]");
        }
        if self.fp_beta_a <= 0.0 || self.fp_beta_b <= 0.0 {
            return fail("background beta shapes must be positive");
        }
        if !(0.0 < self.fp_size_min && self.fp_size_min <= self.fp_size_max && self.fp_size_max <= 1.0) {
            return fail("background size fractions must satisfy 0 < min <= max <= 1");
        }
        Ok(())
    }
}

/// Inputs to the skill model, computed by whoever holds the hidden truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveStats {
    pub n_boxes: usize,
    pub error_fraction: f64,
}

pub fn skill_from_training(stats: ActiveStats, params: &SurrogateParams) -> f64 {
    let n = stats.n_boxes as f64;
    let rho = stats.error_fraction.clamp(0.0, 1.0);
    let raw = (1.0 - params.noise_penalty * rho) * n / (n + params.n_half);
    raw.clamp(params.skill_min, 1.0 - 1e-6)
}

fn jittered_probs(base: &[f64], jitter: f64, rng: &mut Rng) -> Vec<f64> {
    let mut probs: Vec<f64> = base
        .iter()
        .map(|&p| {
            let f = if jitter > 0.0 {
                1.0 + rng.random_range(-jitter..=jitter)
            } else {
                1.0
            };
            p * f
        })
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Samples raw (pre-filter) predictions for one image.
pub fn predict_surrogate(
    image: &ImageRecord,
    k: usize,
    skill: f64,
    params: &SurrogateParams,
    rng: &mut Rng,
) -> Vec<Prediction> {
    let skill = skill.clamp(0.0, 1.0 - 1e-6);
    let p_det = (params.detect_base + params.detect_gain * skill).clamp(0.0, 1.0);
    let obj_mean = params.objectness_base + params.objectness_gain * skill;
    let objectness = Normal::new(obj_mean, params.objectness_std).expect("valid normal");
    let mu = params.conc_base + params.conc_gain * skill;
    let rest = (1.0 - mu) / (k - 1) as f64;

    let mut out = Vec::new();
    // Detection draws happen for every object, missed or not, in label order.
    for label in &image.labels {
        let hit = rng.random::<f64>() < p_det;
        if !hit {
            continue;
        }
        let b = label.bbox;
        let sd = (1.0 - skill) * params.jitter_frac * b.w().min(b.h());
        let mut jit = || {
            if sd > 0.0 {
                Normal::new(0.0, sd).expect("valid normal").sample(rng)
            } else {
                0.0
            }
        };
        let (dx, dy, dw, dh) = (jit(), jit(), jit(), jit());
        let bbox = BBox::new(b.x() + dx, b.y() + dy, (b.w() + dw).max(1.0), (b.h() + dh).max(1.0))
            .expect("jittered box is finite and positive");
        let score = objectness.sample(rng).clamp(0.0, 1.0);
        let mut base = vec![rest; k];
        base[label.true_class.index()] = mu;
        let probs = jittered_probs(&base, params.prob_jitter, rng);
        out.push(Prediction { bbox, score, probs });
    }

    let fp_mean = params.fp_rate * (1.0 - skill);
    let n_fp = if fp_mean > 0.0 {
        Poisson::new(fp_mean).expect("valid poisson").sample(rng) as usize
    } else {
        0
    };
    let fp_obj = Beta::new(params.fp_beta_a, params.fp_beta_b).expect("valid beta");
    let uniform = vec![1.0 / k as f64; k];
    for _ in 0..n_fp {
        let w = image.width * rng.random_range(params.fp_size_min..=params.fp_size_max);
        let h = image.height * rng.random_range(params.fp_size_min..=params.fp_size_max);
        let x = rng.random_range(0.0..=(image.width - w).max(0.0));
        let y = rng.random_range(0.0..=(image.height - h).max(0.0));
        let bbox = BBox::new(x, y, w.max(1.0), h.max(1.0)).expect("background box is valid");
        let score = fp_obj.sample(rng);
        let probs = jittered_probs(&uniform, params.prob_jitter, rng);
        out.push(Prediction { bbox, score, probs });
    }
    out
}

/// Score threshold followed by per-class NMS. This exact pipeline feeds
/// query scoring, review proposals and evaluation.
pub fn postprocess(raw: &[Prediction], s_eps: f64, nms_iou: f64) -> Vec<Prediction> {
    nms(&score_filter(raw, s_eps), nms_iou)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionsFile {
    images: Vec<PredImage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredImage {
    id: u64,
    predictions: Vec<PredEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredEntry {
    bbox: [f64; 4],
    score: f64,
    probs: Vec<f64>,
}

pub type PredictionMap = BTreeMap<u64, Vec<Prediction>>;

/// Reads a predictions file. Every image id must exist in `store` (either
/// split) and every probability vector must have length K.
pub fn load_predictions(path: &Path, store: &DatasetStore, renormalize: bool) -> Result<PredictionMap> {
    let file: PredictionsFile = crate::datamodel::io_read_json(path)?;
    let known: std::collections::HashSet<u64> = store.train.iter().chain(&store.test).map(|im| im.id).collect();
    let k = store.k();
    let mut out = PredictionMap::new();
    for im in file.images {
        if !known.contains(&im.id) {
            return Err(Error::UnknownImage(im.id));
        }
        let mut preds = Vec::with_capacity(im.predictions.len());
        for (j, p) in im.predictions.into_iter().enumerate() {
            let ctx = |e: Error| Error::Validation(format!("image {} prediction {j}: {e}", im.id));
            if p.probs.len() != k {
                return Err(ctx(Error::Validation(format!(
                    "{} class probabilities for {k} classes",
                    p.probs.len()
                ))));
            }
            let bbox = BBox::try_from(p.bbox).map_err(ctx)?;
            preds.push(Prediction::build(bbox, p.score, p.probs, renormalize).map_err(ctx)?);
        }
        out.entry(im.id).or_default().extend(preds);
    }
    Ok(out)
}

pub fn save_predictions(preds: &PredictionMap, path: &Path) -> Result<()> {
    let file = PredictionsFile {
        images: preds
            .iter()
            .map(|(&id, ps)| PredImage {
                id,
                predictions: ps
                    .iter()
                    .map(|p| PredEntry {
                        bbox: p.bbox.into(),
                        score: p.score,
                        probs: p.probs.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    crate::datamodel::io_write_json(path, &file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::fixtures;
    use crate::datamodel::Provenance;
    use crate::seeding::substream;

    fn params() -> SurrogateParams {
        SurrogateParams::default()
    }

    #[test]
    fn skill_examples() {
        let p = params();
        let s = |n, rho| {
            skill_from_training(
                ActiveStats {
                    n_boxes: n,
                    error_fraction: rho,
                },
                &p,
            )
        };
        assert_eq!(s(0, 0.0), 0.05);
        assert_eq!(s(500, 0.0), 0.5);
        let far = s(usize::MAX / 4, 0.2);
        assert!((far - 0.9).abs() < 1e-9, "{far}");
        assert!(s(10_000_000, 0.0) <= 1.0 - 1e-6);
    }

    #[test]
    fn argmax_ties_lowest() {
        let b = fixtures::bb(0., 0., 1., 1.);
        let p = Prediction::new(b, 0.5, vec![0.25, 0.375, 0.375]).unwrap();
        assert_eq!(p.argmax(), ClassId(2));
        let p = Prediction::new(b, 0.5, vec![0.5, 0.5]).unwrap();
        assert_eq!(p.argmax(), ClassId(1));
    }

    #[test]
    fn prediction_validation() {
        let b = fixtures::bb(0., 0., 1., 1.);
        assert!(Prediction::new(b, 1.2, vec![0.5, 0.5]).is_err());
        assert!(Prediction::new(b, 0.2, vec![0.5, 0.6]).is_err());
        assert!(Prediction::new(b, 0.2, vec![-0.1, 1.1]).is_err());
        assert!(Prediction::build(b, 0.2, vec![0.51, 0.51], true).is_ok());
    }

    #[test]
    fn surrogate_probabilities_are_distributions() {
        let s = fixtures::store(10, &[6, 6, 6]);
        for (i, im) in s.train.iter().enumerate() {
            for skill in [0.0, 0.3, 0.95] {
                let preds = predict_surrogate(im, 10, skill, &params(), &mut substream(1, &[i as u64]));
                for p in preds {
                    let sum: f64 = p.probs.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    assert!(p.probs.iter().all(|&x| x >= 0.0));
                    assert!((0.0..=1.0).contains(&p.score));
                }
            }
        }
    }

    #[test]
    fn surrogate_is_deterministic_per_substream() {
        let s = fixtures::store(10, &[6]);
        let a = predict_surrogate(&s.train[0], 10, 0.4, &params(), &mut substream(3, &[1, 2]));
        let b = predict_surrogate(&s.train[0], 10, 0.4, &params(), &mut substream(3, &[1, 2]));
        let c = predict_surrogate(&s.train[0], 10, 0.4, &params(), &mut substream(3, &[1, 3]));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn surrogate_detects_missed_objects() {
        let mut s = fixtures::store(10, &[1]);
        s.train[0].labels[0].present = false;
        s.train[0].labels[0].provenance = Provenance::Missed;
        let mut p = params();
        p.fp_rate = 0.0;
        let hits = (0..2000)
            .filter(|&t| !predict_surrogate(&s.train[0], 10, 0.6, &p, &mut substream(t, &[])).is_empty())
            .count();
        // p_det = 0.5 + 0.5 * 0.6 = 0.8
        let frac = hits as f64 / 2000.0;
        assert!((frac - 0.8).abs() < 0.03, "{frac}");
    }

    #[test]
    fn flipped_label_draws_confident_disagreement() {
        let mut s = fixtures::store(10, &[1]);
        let l = &mut s.train[0].labels[0];
        l.observed_class = ClassId(if l.true_class.0 == 1 { 2 } else { 1 });
        l.provenance = Provenance::Flipped;
        let observed = l.observed_class;
        let truth = l.true_class;
        let mut p = params();
        p.fp_rate = 0.0;
        p.detect_base = 1.0;
        p.detect_gain = 0.0;
        let preds = predict_surrogate(&s.train[0], 10, 0.8, &p, &mut substream(2, &[]));
        let pred = &preds[0];
        // mu = 0.5 + 0.45 * 0.8 = 0.86, jittered by at most ~5 %
        assert!((pred.prob(truth) - 0.86).abs() < 0.05);
        let ce = -pred.prob(observed).ln();
        assert!(ce > 3.5, "{ce}");
    }

    #[test]
    fn postprocess_examples() {
        assert!(postprocess(&[], 0.7, 0.5).is_empty());
        let b = fixtures::bb(0., 0., 4., 4.);
        let hi = Prediction::new(b, 0.8, vec![1.0, 0.0]).unwrap();
        let lo = Prediction::new(b, 0.6, vec![1.0, 0.0]).unwrap();
        assert_eq!(postprocess(std::slice::from_ref(&hi), 0.7, 0.5), vec![hi.clone()]);
        assert_eq!(postprocess(&[lo, hi.clone()], 0.7, 0.5), vec![hi]);
    }

    fn write(dir: &Path, text: &str) -> std::path::PathBuf {
        let p = dir.join("p.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn predictions_file_validation() {
        let dir = tempfile::tempdir().unwrap();
        let two = fixtures::store(2, &[1]);
        let ten = fixtures::store(10, &[1]);
        let ok = write(
            dir.path(),
            r#"{"images":[{"id":1,"predictions":[{"bbox":[0,0,5,5],"score":0.9,"probs":[0.5,0.5]}]}]}"#,
        );
        assert_eq!(load_predictions(&ok, &two, false).unwrap()[&1].len(), 1);

        let short = format!(
            r#"{{"images":[{{"id":1,"predictions":[{{"bbox":[0,0,5,5],"score":0.9,"probs":[{}]}}]}}]}}"#,
            ["0.1111111111111111"; 9].join(",")
        );
        let short = write(dir.path(), &short);
        assert!(load_predictions(&short, &ten, false).is_err());

        let loose = write(
            dir.path(),
            r#"{"images":[{"id":1,"predictions":[{"bbox":[0,0,5,5],"score":0.9,"probs":[0.52,0.5]}]}]}"#,
        );
        assert!(load_predictions(&loose, &two, false).is_err());
        let fixed = load_predictions(&loose, &two, true).unwrap();
        let sum: f64 = fixed[&1][0].probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);

        let unknown = write(dir.path(), r#"{"images":[{"id":77,"predictions":[]}]}"#);
        assert!(matches!(
            load_predictions(&unknown, &two, false),
            Err(Error::UnknownImage(77))
        ));
    }

    #[test]
    fn predictions_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = fixtures::store(3, &[4, 4]);
        let mut map = PredictionMap::new();
        for im in &s.train {
            map.insert(
                im.id,
                predict_surrogate(im, 3, 0.5, &params(), &mut substream(1, &[im.id])),
            );
        }
        let p = dir.path().join("preds.json");
        save_predictions(&map, &p).unwrap();
        let back = load_predictions(&p, &s, false).unwrap();
        for (id, ps) in &map {
            for (a, b) in ps.iter().zip(&back[id]) {
                assert_eq!(a.bbox, b.bbox);
                assert_eq!(a.score, b.score);
                for (x, y) in a.probs.iter().zip(&b.probs) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
    }
}
