use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::SynthSpec;
use crate::detector::SurrogateParams;
use crate::error::{Error, Result};
use crate::query::QueryStrategy;
use crate::review::ReviewPolicy;

/// Everything that defines a run. Serialized as the run's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Images labeled before the first cycle, free of cycle budget.
    pub u_init: usize,
    /// Per-cycle annotation budget in boxes.
    pub budget: u64,
    pub cycles: u32,
    /// Fraction of each cycle's budget reserved for review.
    pub lambda: f64,
    /// Fraction of the review budget spent on misses.
    pub alpha: f64,
    pub gamma_l: f64,
    pub gamma_r: f64,
    pub s_eps: f64,
    pub iou_eps: f64,
    pub nms_iou: f64,
    pub eval_iou: f64,
    pub weight_clamp: (f64, f64),
    pub strategy: QueryStrategy,
    pub policy: ReviewPolicy,
    /// Carry unspent review budget into the next cycle instead of
    /// forfeiting it.
    pub rollover_unspent: bool,
    pub surrogate: SurrogateParams,
    pub synth: SynthShape,
    /// Clean dataset file to use instead of generating one.
    pub dataset: Option<PathBuf>,
    /// Noise sidecar to apply instead of injecting fresh noise.
    pub noise: Option<PathBuf>,
    /// Fixed predictions file replacing the surrogate.
    pub predictions: Option<PathBuf>,
    pub renormalize: bool,
    pub output_dir: Option<PathBuf>,
}

/// Generator settings besides split sizes and K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthShape {
    pub boxes_min: usize,
    pub boxes_max: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub box_min: f64,
    pub box_max: f64,
}

impl Default for SynthShape {
    fn default() -> Self {
        let d = SynthSpec::default();
        SynthShape {
            boxes_min: d.boxes_min,
            boxes_max: d.boxes_max,
            image_width: d.image_width,
            image_height: d.image_height,
            box_min: d.box_min,
            box_max: d.box_max,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            k: 10,
            n_train: 2000,
            n_test: 400,
            u_init: 150,
            budget: 200,
            cycles: 20,
            lambda: 0.2,
            alpha: 0.5,
            gamma_l: 0.2,
            gamma_r: 0.05,
            s_eps: 0.7,
            iou_eps: 0.3,
            nms_iou: 0.5,
            eval_iou: 0.5,
            weight_clamp: (0.1, 10.0),
            strategy: QueryStrategy::Entropy,
            policy: ReviewPolicy::HighestLoss,
            rollover_unspent: false,
            surrogate: SurrogateParams::default(),
            synth: SynthShape::default(),
            dataset: None,
            noise: None,
            predictions: None,
            renormalize: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            k: self.k,
            boxes_min: self.synth.boxes_min,
            boxes_max: self.synth.boxes_max,
            image_width: self.synth.image_width,
            image_height: self.synth.image_height,
            box_min: self.synth.box_min,
            box_max: self.synth.box_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("gamma_l", self.gamma_l),
            ("gamma_r", self.gamma_r),
            ("s_eps", self.s_eps),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} outside [0,1]"));
            }
        }
        for (name, v) in [
            ("iou_eps", self.iou_eps),
            ("nms_iou", self.nms_iou),
            ("eval_iou", self.eval_iou),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("{name} = {v} outside (0,1]"));
            }
        }
        if self.budget < 1 {
            return fail("budget must be at least 1".into());
        }
        if self.cycles < 1 {
            return fail("cycles must be at least 1".into());
        }
        if self.dataset.is_none() && self.u_init > self.n_train {
            return fail(format!("u_init {} exceeds n_train {}", self.u_init, self.n_train));
        }
        if self.k < 2 {
            return fail("k must be at least 2".into());
        }
        let (lo, hi) = self.weight_clamp;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail(format!("weight_clamp ({lo}, {hi}) invalid"));
        }
        if self.noise.is_some() && self.dataset.is_none() {
            return fail("a noise sidecar needs an explicit dataset file".into());
        }
        self.surrogate.check()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
