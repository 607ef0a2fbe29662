//! Dataset storage with hidden ground truth.
//!
//! Each train label carries both its true class and the class an annotator
//! reported. Only evaluation and review adjudication may read the hidden
//! half; everything else goes through [`LabelView`].

mod io;
pub(crate) mod noise;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use io::{load_dataset, load_noise, save_dataset, save_noise, FlipEntry, NoiseSidecar};
pub(crate) use io::{read_json as io_read_json, write_json as io_write_json};
pub use noise::{inject_noise, noise_count};
pub use synth::{generate_synthetic_dataset, SynthSpec};

/// 1-based class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    /// Zero-based position in a probability vector.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        ClassId(i as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Validation(format!("duplicate class name {n:?}")));
            }
        }
        Ok(ClassCatalog { names })
    }

    /// Catalog named "0".."K-1".
    pub fn numbered(k: usize) -> Result<Self> {
        ClassCatalog::new((0..k).map(|i| i.to_string()).collect())
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, c: ClassId) -> bool {
        c.0 >= 1 && (c.0 as usize) <= self.names.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Flipped,
    Missed,
    Restored,
    ReviewCorrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: u64,
    pub bbox: BBox,
    pub true_class: ClassId,
    pub observed_class: ClassId,
    pub present: bool,
    pub provenance: Provenance,
}

impl LabelRecord {
    pub fn clean(id: u64, bbox: BBox, class: ClassId) -> Self {
        LabelRecord {
            id,
            bbox,
            true_class: class,
            observed_class: class,
            present: true,
            provenance: Provenance::Clean,
        }
    }

    /// Missing or carrying the wrong class.
    pub fn is_error(&self) -> bool {
        !self.present || self.observed_class != self.true_class
    }

    pub fn check(&self, catalog: &ClassCatalog) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("label {}: {what}", self.id)));
        if !catalog.contains(self.true_class) || !catalog.contains(self.observed_class) {
            return bad("class id out of range");
        }
        match self.provenance {
            Provenance::Clean if !self.present || self.observed_class != self.true_class => {
                bad("clean label must be present with its true class")
            }
            Provenance::Missed if self.present => bad("missed label marked present"),
            Provenance::Flipped if self.observed_class == self.true_class => {
                bad("flipped label carries its true class")
            }
            _ => Ok(()),
        }
    }
}

/// Annotator-visible part of a present label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelView {
    pub id: u64,
    pub bbox: BBox,
    pub class: ClassId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolState {
    Unlabeled,
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    pub labels: Vec<LabelRecord>,
    pub pool_state: PoolState,
}

impl ImageRecord {
    pub fn is_active(&self) -> bool {
        self.pool_state == PoolState::Active
    }

    /// Present labels with their observed class.
    pub fn noisy_labels(&self) -> Vec<LabelView> {
        self.labels
            .iter()
            .filter(|l| l.present)
            .map(|l| LabelView {
                id: l.id,
                bbox: l.bbox,
                class: l.observed_class,
            })
            .collect()
    }

    pub fn present_count(&self) -> usize {
        self.labels.iter().filter(|l| l.present).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStore {
    pub catalog: ClassCatalog,
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

impl DatasetStore {
    pub fn k(&self) -> usize {
        self.catalog.k()
    }

    /// Total train label count.
    pub fn label_count(&self) -> usize {
        self.train.iter().map(|i| i.labels.len()).sum()
    }

    pub fn train_image(&self, id: u64) -> Option<&ImageRecord> {
        self.train_index(id).map(|i| &self.train[i])
    }

    pub(crate) fn train_index(&self, id: u64) -> Option<usize> {
        // train images are stored sorted by id
        self.train.binary_search_by_key(&id, |im| im.id).ok()
    }

    /// Marks an unlabeled train image active and returns what the
    /// annotator drew on it. Cost is one unit per returned box.
    pub fn reveal_labels(&mut self, image_id: u64) -> Result<Vec<(BBox, ClassId)>> {
        let idx = self.train_index(image_id).ok_or(Error::UnknownImage(image_id))?;
        let image = &mut self.train[idx];
        if image.is_active() {
            return Err(Error::AlreadyActive(image_id));
        }
        image.pool_state = PoolState::Active;
        Ok(image
            .labels
            .iter()
            .filter(|l| l.present)
            .map(|l| (l.bbox, l.observed_class))
            .collect())
    }

    pub fn active_ids(&self) -> Vec<u64> {
        self.train.iter().filter(|i| i.is_active()).map(|i| i.id).collect()
    }

    pub fn pool_ids(&self) -> Vec<u64> {
        self.train.iter().filter(|i| !i.is_active()).map(|i| i.id).collect()
    }

    /// Copy holding only what an annotator can see: missed labels dropped,
    /// true classes replaced by observed ones.
    pub fn erase_hidden(&self) -> DatasetStore {
        let mut out = self.clone();
        for im in &mut out.train {
            im.labels.retain(|l| l.present);
            for l in &mut im.labels {
                l.true_class = l.observed_class;
                l.provenance = Provenance::Clean;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        let mut label_ids = HashSet::new();
        for (split, images) in [("train", &self.train), ("test", &self.test)] {
            for im in images {
                if !image_ids.insert(im.id) {
                    return Err(Error::Validation(format!("duplicate image id {}", im.id)));
                }
                for l in &im.labels {
                    if !label_ids.insert(l.id) {
                        return Err(Error::Validation(format!("duplicate label id {}", l.id)));
                    }
                    l.check(&self.catalog)?;
                    if !l.bbox.within(im.width, im.height) {
                        return Err(Error::Validation(format!(
                            "label {} lies outside image {}",
                            l.id, im.id
                        )));
                    }
                    if split == "test" && l.provenance != Provenance::Clean {
                        return Err(Error::Validation(format!("test label {} is not clean", l.id)));
                    }
                }
            }
        }
        if !self.train.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(Error::Validation("train images must be sorted by id".into()));
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn reveal_returns_present_labels_and_activates() {
        let mut s = store(3, &[3, 2]);
        let got = s.reveal_labels(1).unwrap();
        assert_eq!(got.len(), 3);
        for (l, (b, c)) in s.train[0].labels.iter().zip(&got) {
            assert_eq!(*b, l.bbox);
            assert_eq!(*c, l.true_class);
        }
        assert!(s.train[0].is_active());
        assert!(matches!(s.reveal_labels(1), Err(Error::AlreadyActive(1))));
        assert!(matches!(s.reveal_labels(99), Err(Error::UnknownImage(99))));
    }

    #[test]
    fn reveal_hides_missed_labels() {
        let mut s = store(3, &[2]);
        s.train[0].labels[1].present = false;
        s.train[0].labels[1].provenance = Provenance::Missed;
        assert_eq!(s.reveal_labels(1).unwrap().len(), 1);
    }

    #[test]
    fn reveal_cost_is_box_count() {
        let mut s = store(4, &[5]);
        assert_eq!(s.reveal_labels(1).unwrap().len(), 5);
    }

    #[test]
    fn label_invariants() {
        let cat = ClassCatalog::numbered(3).unwrap();
        let mut l = LabelRecord::clean(1, bb(0., 0., 1., 1.), ClassId(2));
        assert!(l.check(&cat).is_ok());
        l.observed_class = ClassId(3);
        assert!(l.check(&cat).is_err());
        l.provenance = Provenance::Flipped;
        assert!(l.check(&cat).is_ok());
        l.observed_class = ClassId(4);
        assert!(l.check(&cat).is_err());
        l.observed_class = ClassId(2);
        assert!(l.check(&cat).is_err());
        let mut m = LabelRecord::clean(2, bb(0., 0., 1., 1.), ClassId(1));
        m.provenance = Provenance::Missed;
        assert!(m.check(&cat).is_err());
        m.present = false;
        assert!(m.check(&cat).is_ok());
    }

    #[test]
    fn catalog_rules() {
        assert!(ClassCatalog::new(vec!["a".into()]).is_err());
        assert!(ClassCatalog::new(vec!["a".into(), "a".into()]).is_err());
        assert_eq!(ClassCatalog::numbered(10).unwrap().k(), 10);
    }
}
