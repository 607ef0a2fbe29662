use std::collections::BTreeMap;

use proptest::prelude::*;

use alreview::datamodel::{
    inject_noise, noise_count, ClassCatalog, ClassId, DatasetStore, ImageRecord, LabelRecord, PoolState,
};
use alreview::detector::{skill_from_training, ActiveStats, Prediction, PredictionMap, SurrogateParams};
use alreview::eval::average_precision;
use alreview::geometry::{iou, nms, BBox};
use alreview::query::{class_weights, entropy, image_query_score};
use alreview::review::{flip_proposals, miss_proposals, review_inputs, ReviewPolicy};
use alreview::seeding::substream;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
}

fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|p| p / s).collect()
    })
}

fn prediction(k: usize) -> impl Strategy<Value = Prediction> {
    (bbox(), 0.0..=1.0f64, probs(k)).prop_map(|(b, s, p)| Prediction::new(b, s, p).unwrap())
}

fn image(id: u64, labels: Vec<(BBox, usize)>) -> ImageRecord {
    ImageRecord {
        id,
        width: 100.0,
        height: 100.0,
        labels: labels
            .into_iter()
            .enumerate()
            .map(|(i, (b, c))| LabelRecord::clean(id * 100 + i as u64, b, ClassId::from_index(c)))
            .collect(),
        pool_state: PoolState::Unlabeled,
    }
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_output_is_idempotent_sorted_and_separated(
        preds in prop::collection::vec(prediction(3), 0..40),
        thr in 0.1..0.9f64,
    ) {
        let kept = nms(&preds, thr);
        prop_assert_eq!(nms(&kept, thr), kept.clone());
        prop_assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(preds.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(a.argmax() != b.argmax() || iou(&a.bbox, &b.bbox) < thr);
            }
        }
    }

    #[test]
    fn ap_bounded_and_rank_only(
        gts in prop::collection::vec((bbox(), 0..2usize), 1..6),
        preds in prop::collection::vec(prediction(2), 0..8),
    ) {
        let truth = vec![image(1, gts)];
        let mut map: PredictionMap = BTreeMap::new();
        map.insert(1, preds.clone());
        let squared: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction::new(p.bbox, p.score * p.score, p.probs.clone()).unwrap())
            .collect();
        let mut map2: PredictionMap = BTreeMap::new();
        map2.insert(1, squared);
        for c in 0..2 {
            let class = ClassId::from_index(c);
            let a = average_precision(&map, &truth, 0.5, class);
            let b = average_precision(&map2, &truth, 0.5, class);
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((0.0..=1.0).contains(&a.ap));
                prop_assert!((a.ap - b.ap).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_of_matched_tp_never_raises_ap(
        gts in prop::collection::vec(bbox(), 1..4),
        extra in prop::collection::vec(prediction(2), 0..4),
        pick in 0..4usize,
    ) {
        let truth = vec![image(1, gts.iter().map(|b| (*b, 0)).collect())];
        let target = gts[pick % gts.len()];
        // with a second overlapping ground truth the duplicate is a new TP
        prop_assume!(gts.iter().filter(|g| iou(g, &target) >= 0.5).count() == 1);
        let mut preds = vec![Prediction::new(target, 0.9, vec![0.9, 0.1]).unwrap()];
        preds.extend(extra);
        let mut map: PredictionMap = BTreeMap::new();
        map.insert(1, preds.clone());
        let before = average_precision(&map, &truth, 0.5, ClassId(1)).unwrap().ap;
        preds.push(Prediction::new(target, 0.05, vec![0.9, 0.1]).unwrap());
        map.insert(1, preds);
        let after = average_precision(&map, &truth, 0.5, ClassId(1)).unwrap().ap;
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn noise_count_matches_integer_floor(pct in 0..=100u64, g in 0..5000usize) {
        prop_assert_eq!(noise_count(pct as f64 / 100.0, g), pct as usize * g / 200);
    }

    #[test]
    fn entropy_within_bounds(p in probs(7)) {
        let h = entropy(&p);
        prop_assert!(h >= 0.0 && h <= 7f64.ln() + 1e-12);
    }

    #[test]
    fn image_score_additive_and_scale_equivariant(
        a in prop::collection::vec(prediction(4), 0..6),
        b in prop::collection::vec(prediction(4), 0..6),
        s in 0.5..4.0f64,
    ) {
        let w = vec![1.0, 2.0, 0.5, 3.0];
        let joined: Vec<Prediction> = a.iter().chain(&b).cloned().collect();
        let sum = image_query_score(&a, &w) + image_query_score(&b, &w);
        prop_assert!((image_query_score(&joined, &w) - sum).abs() < 1e-9);
        let scaled: Vec<f64> = w.iter().map(|x| x * s).collect();
        prop_assert!((image_query_score(&joined, &scaled) - s * image_query_score(&joined, &w)).abs() < 1e-9);
    }

    #[test]
    fn class_weights_respect_clamp(hist in prop::collection::vec(0..500usize, 2..12)) {
        for w in class_weights(&hist, (0.1, 10.0)) {
            prop_assert!((0.1..=10.0).contains(&w));
        }
    }

    #[test]
    fn skill_monotone(n1 in 0..10_000usize, dn in 0..10_000usize, r1 in 0.0..1.0f64, dr in 0.0..1.0f64) {
        let p = SurrogateParams::default();
        let s = |n, rho| skill_from_training(ActiveStats { n_boxes: n, error_fraction: rho }, &p);
        prop_assert!(s(n1, r1) <= s(n1 + dn, r1));
        prop_assert!(s(n1, (r1 + dr).min(1.0)) <= s(n1, r1));
        prop_assert!((0.0..1.0).contains(&s(n1, r1)));
    }

    #[test]
    fn proposals_see_only_the_visible_labels(seed in 0..50u64, gamma in 0.0..0.8f64) {
        let catalog = ClassCatalog::numbered(3).unwrap();
        let mut train = Vec::new();
        for id in 1..=4u64 {
            let labels = (0..4)
                .map(|j| (BBox::new(j as f64 * 24.0, id as f64 * 10.0, 20.0, 20.0).unwrap(), (j + id as usize) % 3))
                .collect();
            let mut im = image(id, labels);
            im.pool_state = PoolState::Active;
            train.push(im);
        }
        let mut store = DatasetStore { catalog, train, test: Vec::new() };
        inject_noise(&mut store, gamma, &mut substream(seed, &[])).unwrap();
        let mut preds: PredictionMap = BTreeMap::new();
        for im in &store.train {
            let ps = im
                .labels
                .iter()
                .map(|l| Prediction::new(l.bbox, 0.9, vec![0.6, 0.3, 0.1]).unwrap())
                .collect();
            preds.insert(im.id, ps);
        }
        let visible = store.erase_hidden();
        for policy in [ReviewPolicy::HighestLoss, ReviewPolicy::Random] {
            let a = review_inputs(&store, &preds);
            let b = review_inputs(&visible, &preds);
            prop_assert_eq!(
                miss_proposals(&a, 0.3, policy, &mut substream(seed, &[1])),
                miss_proposals(&b, 0.3, policy, &mut substream(seed, &[1]))
            );
            prop_assert_eq!(
                flip_proposals(&a, 0.3, policy, &mut substream(seed, &[2])),
                flip_proposals(&b, 0.3, policy, &mut substream(seed, &[2]))
            );
        }
    }
}
