//! The active-learning cycle: predict, query, label, review, evaluate.
//!
//! All randomness is drawn from substreams keyed by the master seed, the
//! cycle and the image id (see [`crate::seeding`]). Two runs with the same
//! config therefore agree bit for bit, and a checkpoint needs no generator
//! state.

mod audit;
mod config;
mod evalpreds;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    generate_synthetic_dataset, inject_noise, load_dataset, load_noise, save_dataset, save_noise, DatasetStore,
    NoiseSidecar,
};
use crate::detector::{
    load_predictions, postprocess, predict_surrogate, skill_from_training, ActiveStats, PredictionMap,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, mean_average_precision, review_precision, write_aggregate_csv, write_metrics_csv, AggregateRow,
    CycleMetrics,
};
use crate::query::{active_class_histogram, class_weights, rank_pool};
use crate::review::{run_review, BudgetLedger, ProposalKind, ReviewPolicy, ReviewSettings};
use crate::seeding::{substream, tag};

pub use audit::{append_audit, read_audit, truncate_audit, AuditEvent};
pub use config::{ExperimentConfig, SynthShape};
pub use evalpreds::{evaluate_predictions, EvalPredsOptions, EvalPredsReport};

const STATE_MAGIC: &[u8; 8] = b"ALRVSTAT";
const STATE_VERSION: u32 = 1;

/// Resumable snapshot of a run between cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: ExperimentConfig,
    /// Number of completed cycles.
    pub cycle: u32,
    pub store: DatasetStore,
    pub ledgers: Vec<BudgetLedger>,
    pub metrics: Vec<CycleMetrics>,
    /// Boxes revealed for the initial labeled set.
    pub initial_cost: u64,
    pub budget_total: u64,
    /// Unspent review budget carried into the next cycle (only with
    /// `rollover_unspent`).
    pub carry: u64,
    #[serde(skip)]
    fixed_predictions: Option<PredictionMap>,
}

/// Label count and error fraction over active images. Errors are labels
/// that are missing or carry the wrong class.
pub fn active_stats(store: &DatasetStore) -> ActiveStats {
    let (mut present, mut total, mut errors) = (0usize, 0usize, 0usize);
    for im in store.train.iter().filter(|im| im.is_active()) {
        for l in &im.labels {
            total += 1;
            if l.present {
                present += 1;
            }
            if l.is_error() {
                errors += 1;
            }
        }
    }
    ActiveStats {
        n_boxes: present,
        error_fraction: if total == 0 { 0.0 } else { errors as f64 / total as f64 },
    }
}

fn build_store(config: &ExperimentConfig) -> Result<DatasetStore> {
    let mut store = match &config.dataset {
        Some(p) => load_dataset(p)?,
        None => generate_synthetic_dataset(&config.synth_spec(), &mut substream(config.seed, &[tag::DATA]))?,
    };
    match &config.noise {
        Some(p) => load_noise(p)?.apply(&mut store)?,
        None => inject_noise(&mut store, config.gamma_l, &mut substream(config.seed, &[tag::NOISE]))?,
    }
    Ok(store)
}

/// Builds the dataset, injects noise once, and reveals `u_init` uniformly
/// chosen train images. Their cost counts toward the budget axis but not
/// toward any cycle.
pub fn init_run(config: &ExperimentConfig) -> Result<(RunState, Vec<AuditEvent>)> {
    config.validate()?;
    let mut store = build_store(config)?;
    if config.u_init > store.train.len() {
        return Err(Error::Config(format!(
            "u_init {} exceeds the {} train images",
            config.u_init,
            store.train.len()
        )));
    }
    let ids: Vec<u64> = store.train.iter().map(|im| im.id).collect();
    let mut chosen: Vec<u64> = sample(
        &mut substream(config.seed, &[tag::INIT_SELECT]),
        ids.len(),
        config.u_init,
    )
    .into_iter()
    .map(|i| ids[i])
    .collect();
    chosen.sort_unstable();
    let mut cost = 0u64;
    for id in &chosen {
        cost += store.reveal_labels(*id)?.len() as u64;
    }
    let fixed_predictions = match &config.predictions {
        Some(p) => Some(load_predictions(p, &store, config.renormalize)?),
        None => None,
    };
    let state = RunState {
        config: config.clone(),
        cycle: 0,
        store,
        ledgers: Vec::new(),
        metrics: Vec::new(),
        initial_cost: cost,
        budget_total: cost,
        carry: 0,
        fixed_predictions,
    };
    let events = vec![AuditEvent::Init {
        cycle: 0,
        images: chosen.len(),
        boxes: cost,
    }];
    Ok((state, events))
}

impl RunState {
    pub fn is_finished(&self) -> bool {
        self.cycle >= self.config.cycles
    }

    /// Postprocessed predictions for every train and test image at `skill`
    /// (surrogate) or from the fixed predictions file.
    fn predictions(&self, cycle: u32, skill: Option<f64>) -> PredictionMap {
        let c = &self.config;
        if let Some(fixed) = &self.fixed_predictions {
            return fixed
                .iter()
                .map(|(&id, ps)| (id, postprocess(ps, c.s_eps, c.nms_iou)))
                .collect();
        }
        let skill = skill.expect("surrogate mode has a skill");
        let k = self.store.k();
        self.store
            .train
            .iter()
            .chain(&self.store.test)
            .map(|im| {
                let mut rng = substream(c.seed, &[tag::PREDICT, cycle as u64, im.id]);
                let raw = predict_surrogate(im, k, skill, &c.surrogate, &mut rng);
                (im.id, postprocess(&raw, c.s_eps, c.nms_iou))
            })
            .collect()
    }

    /// Runs one full cycle and records its metrics.
    pub fn run_cycle(&mut self, audit: &mut Vec<AuditEvent>) -> Result<CycleMetrics> {
        if self.is_finished() {
            return Err(Error::Config(format!("all {} cycles already ran", self.config.cycles)));
        }
        let c = self.config.clone();
        let cycle = self.cycle + 1;

        // 1. train (skill) and predict
        let skill = self
            .fixed_predictions
            .is_none()
            .then(|| skill_from_training(active_stats(&self.store), &c.surrogate));
        let preds = self.predictions(cycle, skill);
        audit.push(AuditEvent::Predict {
            cycle,
            skill,
            images: preds.len(),
        });

        // 2. rank the pool
        let weights = class_weights(&active_class_histogram(&self.store), c.weight_clamp);
        let pool = self.store.pool_ids();
        let ranking = rank_pool(
            &pool,
            c.strategy,
            &preds,
            &weights,
            &mut substream(c.seed, &[tag::QUERY, cycle as u64]),
        )?;
        audit.push(AuditEvent::Query {
            cycle,
            strategy: c.strategy,
            pool: pool.len(),
        });

        // 3. label until the query budget is reached or passed
        let mut ledger = BudgetLedger::new(c.budget + self.carry, c.lambda, c.alpha);
        let query_budget = ledger.query_budget();
        let mut labeled = 0usize;
        for id in &ranking {
            if ledger.spent_query >= query_budget {
                break;
            }
            ledger.spent_query += self.store.reveal_labels(*id)?.len() as u64;
            labeled += 1;
        }
        audit.push(AuditEvent::Label {
            cycle,
            images: labeled,
            boxes: ledger.spent_query,
            query_budget,
        });
        if ledger.spent_query < query_budget {
            audit.push(AuditEvent::PoolExhausted {
                cycle,
                spent: ledger.spent_query,
                query_budget,
            });
        }

        // 4. review R = L ∪ Q with the same predictions
        let settings = ReviewSettings {
            policy: c.policy,
            gamma_r: c.gamma_r,
            iou_eps: c.iou_eps,
        };
        let report = run_review(
            &mut self.store,
            &preds,
            settings,
            &mut ledger,
            &mut substream(c.seed, &[tag::ADJUDICATE, cycle as u64]),
        )?;
        if c.policy != ReviewPolicy::None {
            for (kind, st) in [
                (ProposalKind::Miss, report.candidates_miss),
                (ProposalKind::Flip, report.candidates_flip),
            ] {
                audit.push(AuditEvent::Candidates {
                    cycle,
                    kind,
                    total: st.total,
                    true_errors: st.true_errors,
                });
            }
        }
        for o in &report.outcomes {
            audit.push(AuditEvent::Review {
                cycle,
                kind: o.proposal.kind,
                image: o.proposal.image_id,
                target: o.proposal.target,
                was_true_error: o.was_true_error,
                action: o.action,
            });
        }
        for (kind, amount) in [
            (ProposalKind::Miss, report.forfeited_miss),
            (ProposalKind::Flip, report.forfeited_flip),
        ] {
            if amount > 0 {
                audit.push(AuditEvent::Forfeit { cycle, kind, amount });
            }
        }
        self.carry = if c.rollover_unspent {
            report.forfeited_miss + report.forfeited_flip
        } else {
            0
        };

        // 5. evaluate on the clean test split
        let map = mean_average_precision(&preds, &self.store.test, self.store.k(), c.eval_iou)?.map;
        audit.push(AuditEvent::Eval { cycle, map });

        // 6. record
        self.budget_total += ledger.total_spent();
        let after = active_stats(&self.store);
        let metrics = CycleMetrics {
            cycle,
            budget_total: self.budget_total,
            boxes_labeled: ledger.spent_query,
            reviews_miss: ledger.spent_review_miss,
            reviews_flip: ledger.spent_review_flip,
            map,
            precision_miss: review_precision(&report.outcomes, ProposalKind::Miss),
            precision_flip: review_precision(&report.outcomes, ProposalKind::Flip),
            active_images: self.store.train.iter().filter(|im| im.is_active()).count() as u64,
            active_boxes: after.n_boxes as u64,
            active_error_fraction: after.error_fraction,
        };
        self.ledgers.push(ledger);
        self.metrics.push(metrics.clone());
        self.cycle = cycle;
        Ok(metrics)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&serde_json::to_vec(self).expect("serializable"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != STATE_MAGIC {
            return Err(Error::Checkpoint("not a state file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!(
                "state version {version}, expected {STATE_VERSION}"
            )));
        }
        let mut state: RunState = serde_json::from_slice(&bytes[12..]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(p) = &state.config.predictions {
            state.fixed_predictions = Some(load_predictions(p, &state.store, state.config.renormalize)?);
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Files of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn noise(&self) -> PathBuf {
        self.root.join("noise.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn aggregate(&self) -> PathBuf {
        self.root.join("aggregate.csv")
    }
    pub fn audit(&self) -> PathBuf {
        self.root.join("audit.log")
    }
    pub fn state(&self) -> PathBuf {
        self.root.join("state.bin")
    }
}

fn drive(mut state: RunState, dir: Option<&RunDir>, stop_after: Option<u32>) -> Result<RunState> {
    while !state.is_finished() && stop_after.is_none_or(|s| state.cycle < s) {
        let mut events = Vec::new();
        let result = state.run_cycle(&mut events);
        if let Some(d) = dir {
            append_audit(&d.audit(), &events)?;
            state.save(&d.state())?;
            write_metrics_csv(&d.metrics(), &state.metrics)?;
        }
        result?;
    }
    Ok(state)
}

/// Runs every cycle of `config`. With an output directory, writes the
/// config, clean dataset, noise sidecar, metrics, audit log and a state
/// checkpoint after each cycle. A failing cycle leaves the checkpoint of
/// the last completed one.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunState> {
    run_experiment_until(config, None)
}

/// Like [`run_experiment`] but stops after `stop_after` cycles.
pub fn run_experiment_until(config: &ExperimentConfig, stop_after: Option<u32>) -> Result<RunState> {
    let (state, events) = init_run(config)?;
    let dir = match &config.output_dir {
        Some(p) => {
            let d = RunDir::new(p)?;
            crate::datamodel::io_write_json(&d.config(), config)?;
            save_dataset(&state.store, &d.dataset())?;
            save_noise(&NoiseSidecar::from_store(&state.store), &d.noise())?;
            fs::write(d.audit(), "").map_err(|e| Error::io(d.audit(), e))?;
            append_audit(&d.audit(), &events)?;
            state.save(&d.state())?;
            write_metrics_csv(&d.metrics(), &state.metrics)?;
            Some(d)
        }
        None => None,
    };
    drive(state, dir.as_ref(), stop_after)
}

/// Continues a run from the checkpoint in `dir`.
pub fn resume(dir: &Path) -> Result<RunState> {
    let d = RunDir::new(dir)?;
    let state = RunState::load(&d.state())?;
    truncate_audit(&d.audit(), state.cycle)?;
    drive(state, Some(&d), None)
}

/// Runs one experiment per seed (in `seed_<n>` subdirectories when an
/// output directory is set) and aggregates per-cycle mean and sample std.
pub fn run_multi(config: &ExperimentConfig, seeds: &[u64]) -> Result<(Vec<Vec<CycleMetrics>>, Vec<AggregateRow>)> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        c.output_dir = config.output_dir.as_ref().map(|d| d.join(format!("seed_{seed}")));
        runs.push(run_experiment(&c)?.metrics);
    }
    let agg = aggregate(&runs);
    if let Some(root) = &config.output_dir {
        let d = RunDir::new(root)?;
        write_aggregate_csv(&d.aggregate(), &agg)?;
    }
    Ok((runs, agg))
}

/// Repeats [`run_multi`] for each review fraction. With an output
/// directory, each lambda gets `lambda_<v>/` plus a curve file
/// `lambda_<v>.csv` (the aggregate) at the top level.
pub fn sweep(config: &ExperimentConfig, lambdas: &[f64], seeds: &[u64]) -> Result<Vec<(f64, Vec<AggregateRow>)>> {
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut c = config.clone();
        c.lambda = lambda;
        c.output_dir = config.output_dir.as_ref().map(|d| d.join(format!("lambda_{lambda}")));
        let (_, agg) = run_multi(&c, seeds)?;
        if let Some(root) = &config.output_dir {
            write_aggregate_csv(&root.join(format!("lambda_{lambda}.csv")), &agg)?;
        }
        out.push((lambda, agg));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QueryStrategy;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n_train: 200,
            n_test: 40,
            u_init: 20,
            budget: 60,
            cycles: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn init_selects_u_init_images() {
        let (s, ev) = init_run(&small_config()).unwrap();
        assert_eq!(s.store.active_ids().len(), 20);
        assert_eq!(s.cycle, 0);
        match ev[0] {
            AuditEvent::Init { images, boxes, .. } => {
                assert_eq!(images, 20);
                assert_eq!(boxes, s.initial_cost);
            }
            _ => panic!(),
        }
        let stats = active_stats(&s.store);
        assert_eq!(stats.n_boxes as u64, s.initial_cost);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_run(&small_config()).unwrap().0;
        let b = init_run(&small_config()).unwrap().0;
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn empty_start_runs_at_floor_skill() {
        let mut c = small_config();
        c.u_init = 0;
        c.strategy = QueryStrategy::Entropy;
        let (mut s, _) = init_run(&c).unwrap();
        let mut ev = Vec::new();
        let m = s.run_cycle(&mut ev).unwrap();
        assert!(m.boxes_labeled > 0);
        match ev[0] {
            AuditEvent::Predict { skill, .. } => assert_eq!(skill, Some(c.surrogate.skill_min)),
            _ => panic!(),
        }
    }

    #[test]
    fn cycle_spend_and_order() {
        let (mut s, _) = init_run(&small_config()).unwrap();
        let mut ev = Vec::new();
        let m = s.run_cycle(&mut ev).unwrap();
        let l = s.ledgers[0];
        assert!(l.total_spent() <= 60);
        assert!(l.spent_query >= l.query_budget());
        assert_eq!(
            m.reviews_miss + m.reviews_flip,
            l.spent_review_miss + l.spent_review_flip
        );
        assert_eq!(m.budget_total, s.initial_cost + l.total_spent());
        let phases: Vec<&str> = ev
            .iter()
            .filter_map(|e| match e {
                AuditEvent::Predict { .. } => Some("predict"),
                AuditEvent::Query { .. } => Some("query"),
                AuditEvent::Label { .. } => Some("label"),
                AuditEvent::Review { .. } => Some("review"),
                AuditEvent::Eval { .. } => Some("eval"),
                _ => None,
            })
            .collect();
        let mut dedup = phases.clone();
        dedup.dedup();
        assert_eq!(dedup, vec!["predict", "query", "label", "review", "eval"]);
    }

    #[test]
    fn policy_none_spends_only_on_queries() {
        let mut c = small_config();
        c.policy = ReviewPolicy::None;
        let s = run_experiment(&c).unwrap();
        for (l, m) in s.ledgers.iter().zip(&s.metrics) {
            assert_eq!(l.total_spent(), l.spent_query);
            assert_eq!(m.reviews_miss + m.reviews_flip, 0);
            assert!(m.precision_miss.is_none());
        }
    }

    #[test]
    fn state_round_trip() {
        let mut c = small_config();
        c.cycles = 2;
        let s = run_experiment(&c).unwrap();
        let back = RunState::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        let mut bad = s.to_bytes();
        bad[8] = 9;
        assert!(RunState::from_bytes(&bad).is_err());
        assert!(RunState::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn exhausted_pool_is_logged() {
        let mut c = small_config();
        c.n_train = 30;
        c.u_init = 20;
        c.cycles = 2;
        let (mut s, _) = init_run(&c).unwrap();
        let mut ev = Vec::new();
        s.run_cycle(&mut ev).unwrap();
        assert!(ev.iter().any(|e| matches!(e, AuditEvent::PoolExhausted { .. })));
        assert!(s.store.pool_ids().is_empty());
        let m = s.run_cycle(&mut ev).unwrap();
        assert_eq!(m.boxes_labeled, 0);
    }

    #[test]
    fn rollover_adds_forfeit_to_next_cycle() {
        let mut c = small_config();
        c.policy = ReviewPolicy::None;
        c.rollover_unspent = true;
        c.cycles = 2;
        let s = run_experiment(&c).unwrap();
        let first = s.ledgers[0];
        assert_eq!(s.ledgers[1].budget, c.budget + first.review_budget_effective());
    }
}
