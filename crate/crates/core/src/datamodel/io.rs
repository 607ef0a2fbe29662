//! Dataset and noise-sidecar files.
//!
//! The dataset file always holds clean labels. Injected noise lives in a
//! separate sidecar so the clean dataset stays canonical.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassCatalog, ClassId, DatasetStore, ImageRecord, LabelRecord, PoolState, Provenance};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    classes: Vec<String>,
    images: Vec<ImageEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageEntry {
    id: u64,
    width: f64,
    height: f64,
    split: Split,
    labels: Vec<LabelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelEntry {
    id: u64,
    bbox: [f64; 4],
    class: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSidecar {
    pub missed: Vec<u64>,
    pub flips: Vec<FlipEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipEntry {
    pub id: u64,
    pub observed: ClassId,
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_file(store: &DatasetStore) -> DatasetFile {
    let entry = |im: &ImageRecord, split| ImageEntry {
        id: im.id,
        width: im.width,
        height: im.height,
        split,
        labels: im
            .labels
            .iter()
            .map(|l| LabelEntry {
                id: l.id,
                bbox: l.bbox.into(),
                class: l.true_class.0,
            })
            .collect(),
    };
    DatasetFile {
        classes: store.catalog.names().to_vec(),
        images: store
            .train
            .iter()
            .map(|im| entry(im, Split::Train))
            .chain(store.test.iter().map(|im| entry(im, Split::Test)))
            .collect(),
    }
}

fn from_file(file: DatasetFile) -> Result<DatasetStore> {
    let catalog = ClassCatalog::new(file.classes)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for im in file.images {
        let mut labels = Vec::with_capacity(im.labels.len());
        for l in im.labels {
            let bbox = BBox::try_from(l.bbox)
                .map_err(|e| Error::Validation(format!("label {} in image {}: {e}", l.id, im.id)))?;
            let class = ClassId(l.class);
            if !catalog.contains(class) {
                return Err(Error::Validation(format!(
                    "label {} in image {}: class id {} outside 1..={}",
                    l.id,
                    im.id,
                    l.class,
                    catalog.k()
                )));
            }
            labels.push(LabelRecord::clean(l.id, bbox, class));
        }
        let record = ImageRecord {
            id: im.id,
            width: im.width,
            height: im.height,
            labels,
            pool_state: PoolState::Unlabeled,
        };
        match im.split {
            Split::Train => train.push(record),
            Split::Test => test.push(record),
        }
    }
    train.sort_by_key(|im| im.id);
    let store = DatasetStore { catalog, train, test };
    store.validate()?;
    Ok(store)
}

/// Writes the clean view of `store` (true classes, every label present).
pub fn save_dataset(store: &DatasetStore, path: &Path) -> Result<()> {
    write_json(path, &to_file(store))
}

pub fn load_dataset(path: &Path) -> Result<DatasetStore> {
    from_file(read_json(path)?)
}

impl NoiseSidecar {
    pub fn from_store(store: &DatasetStore) -> Self {
        let mut out = NoiseSidecar::default();
        for l in store.train.iter().flat_map(|im| &im.labels) {
            if !l.present {
                out.missed.push(l.id);
            } else if l.observed_class != l.true_class {
                out.flips.push(FlipEntry {
                    id: l.id,
                    observed: l.observed_class,
                });
            }
        }
        out
    }

    /// Applies the recorded noise to a clean store.
    pub fn apply(&self, store: &mut DatasetStore) -> Result<()> {
        let mut where_: HashMap<u64, (usize, usize)> = HashMap::new();
        for (i, im) in store.train.iter().enumerate() {
            for (j, l) in im.labels.iter().enumerate() {
                where_.insert(l.id, (i, j));
            }
        }
        let locate = |id: u64| -> Result<(usize, usize)> {
            where_
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("noise refers to unknown train label {id}")))
        };
        let fresh = |l: &LabelRecord| -> Result<()> {
            if l.provenance != Provenance::Clean {
                return Err(Error::Validation(format!("label {} perturbed twice", l.id)));
            }
            Ok(())
        };
        for &id in &self.missed {
            let (i, j) = locate(id)?;
            let l = &mut store.train[i].labels[j];
            fresh(l)?;
            l.present = false;
            l.provenance = Provenance::Missed;
        }
        for f in &self.flips {
            let (i, j) = locate(f.id)?;
            let l = &mut store.train[i].labels[j];
            fresh(l)?;
            if !store.catalog.contains(f.observed) || f.observed == l.true_class {
                return Err(Error::Validation(format!(
                    "flip of label {} to class {} is invalid",
                    f.id, f.observed.0
                )));
            }
            l.observed_class = f.observed;
            l.provenance = Provenance::Flipped;
        }
        Ok(())
    }
}

pub fn save_noise(noise: &NoiseSidecar, path: &Path) -> Result<()> {
    write_json(path, noise)
}

pub fn load_noise(path: &Path) -> Result<NoiseSidecar> {
    read_json(path)
}
