use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ClassCatalog, ClassId, DatasetStore, ImageRecord, LabelRecord, PoolState};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::seeding::Rng;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const MAX_MUTUAL_IOU: f64 = 0.3;

/// Parameters of a generated dataset of sparse, well-separated boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
    pub boxes_min: usize,
    pub boxes_max: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub box_min: f64,
    pub box_max: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 2000,
            n_test: 400,
            k: 10,
            boxes_min: 2,
            boxes_max: 6,
            image_width: 256.0,
            image_height: 256.0,
            box_min: 24.0,
            box_max: 64.0,
        }
    }
}

impl SynthSpec {
    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.boxes_min > self.boxes_max {
            return fail(format!("boxes range {}..{} is empty", self.boxes_min, self.boxes_max));
        }
        if !(self.box_min > 0.0 && self.box_min <= self.box_max) {
            return fail(format!("box size range {}..{} invalid", self.box_min, self.box_max));
        }
        if self.box_max > self.image_width || self.box_max > self.image_height {
            return fail("boxes larger than the image".into());
        }
        ClassCatalog::numbered(self.k).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn place_boxes(spec: &SynthSpec, n: usize, rng: &mut Rng) -> Option<Vec<BBox>> {
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    let mut attempts = 0;
    while boxes.len() < n {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return None;
        }
        let w = rng.random_range(spec.box_min..=spec.box_max).round();
        let h = rng.random_range(spec.box_min..=spec.box_max).round();
        let x = rng.random_range(0.0..=spec.image_width - w).floor();
        let y = rng.random_range(0.0..=spec.image_height - h).floor();
        let Ok(b) = BBox::new(x, y, w, h) else { continue };
        if boxes.iter().all(|o| iou(o, &b) <= MAX_MUTUAL_IOU) {
            boxes.push(b);
        }
    }
    Some(boxes)
}

/// Train ids run 1..=n_train, test ids follow; label ids are global.
pub fn generate_synthetic_dataset(spec: &SynthSpec, rng: &mut Rng) -> Result<DatasetStore> {
    spec.check()?;
    let catalog = ClassCatalog::numbered(spec.k)?;
    let mut next_label = 1u64;
    let mut make = |index: usize, rng: &mut Rng| -> Result<ImageRecord> {
        let n = rng.random_range(spec.boxes_min..=spec.boxes_max);
        let boxes = place_boxes(spec, n, rng).ok_or(Error::Placement {
            image_index: index,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        let labels = boxes
            .into_iter()
            .map(|b| {
                let id = next_label;
                next_label += 1;
                LabelRecord::clean(id, b, ClassId::from_index(rng.random_range(0..spec.k)))
            })
            .collect();
        Ok(ImageRecord {
            id: index as u64 + 1,
            width: spec.image_width,
            height: spec.image_height,
            labels,
            pool_state: PoolState::Unlabeled,
        })
    };
    let train = (0..spec.n_train).map(|i| make(i, rng)).collect::<Result<Vec<_>>>()?;
    let test = (spec.n_train..spec.n_train + spec.n_test)
        .map(|i| make(i, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetStore { catalog, train, test })
}
