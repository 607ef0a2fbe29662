use rand::seq::index::sample;
use rand::Rng as _;

use super::{ClassId, DatasetStore, Provenance};
use crate::error::{Error, Result};
use crate::seeding::Rng;

/// Number of misses (and, separately, flips) injected for `g` labels.
pub fn noise_count(gamma_l: f64, g: usize) -> usize {
    // the epsilon absorbs products like 0.35 * 20 = 6.999999999999999
    ((gamma_l / 2.0) * g as f64 + 1e-9).floor() as usize
}

/// Uniform class among the `k - 1` classes different from `not`.
pub(crate) fn other_class(rng: &mut Rng, k: usize, not: ClassId) -> ClassId {
    let r = rng.random_range(0..k - 1);
    if r < not.index() {
        ClassId::from_index(r)
    } else {
        ClassId::from_index(r + 1)
    }
}

/// Drops `m` uniformly chosen train labels, then flips the class of `m`
/// others drawn from the remainder. The test split is never touched.
pub fn inject_noise(store: &mut DatasetStore, gamma_l: f64, rng: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma_l) {
        return Err(Error::Config(format!("gamma_l {gamma_l} outside [0,1]")));
    }
    let positions: Vec<(usize, usize)> = store
        .train
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.labels.len()).map(move |j| (i, j)))
        .collect();
    if let Some(&(i, j)) = positions
        .iter()
        .find(|&&(i, j)| store.train[i].labels[j].provenance != Provenance::Clean)
    {
        return Err(Error::Validation(format!(
            "label {} is not clean; noise can only be injected once",
            store.train[i].labels[j].id
        )));
    }
    let g = positions.len();
    let m = noise_count(gamma_l, g);
    if 2 * m > g {
        return Err(Error::NoiseBudget { missed: m, total: g });
    }
    if m == 0 {
        return Ok(());
    }
    let k = store.k();

    let missed = sample(rng, g, m).into_vec();
    let mut is_missed = vec![false; g];
    for &p in &missed {
        is_missed[p] = true;
        let (i, j) = positions[p];
        let l = &mut store.train[i].labels[j];
        l.present = false;
        l.provenance = Provenance::Missed;
    }

    let remaining: Vec<usize> = (0..g).filter(|&p| !is_missed[p]).collect();
    for q in sample(rng, remaining.len(), m).into_vec() {
        let (i, j) = positions[remaining[q]];
        let l = &mut store.train[i].labels[j];
        l.observed_class = other_class(rng, k, l.true_class);
        l.provenance = Provenance::Flipped;
    }
    Ok(())
}
