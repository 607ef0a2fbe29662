use alreview_web::{curves_view, noise_view, proposal_view};
use serde_json::Value;

#[test]
fn noise_view_counts_match_rate() {
    let v: Value = serde_json::from_str(&noise_view(3, 0.2, 0).unwrap()).unwrap();
    let g = v["dataset_labels"].as_u64().unwrap();
    assert_eq!(v["dataset_missed"].as_u64().unwrap(), g / 10);
    assert_eq!(v["dataset_flipped"], v["dataset_missed"]);
    assert!(!v["labels"].as_array().unwrap().is_empty());
}

#[test]
fn noise_view_is_deterministic() {
    assert_eq!(noise_view(9, 0.3, 5).unwrap(), noise_view(9, 0.3, 5).unwrap());
}

#[test]
fn proposals_reference_the_image() {
    let v: Value = serde_json::from_str(&proposal_view(1, 0.4, 0.8, 0.7, 2).unwrap()).unwrap();
    for p in v["proposals"].as_array().unwrap() {
        assert!(p["kind"] == "miss" || p["kind"] == "flip");
        assert!(p["true_error"].is_boolean());
    }
    for p in v["predictions"].as_array().unwrap() {
        assert!(p["score"].as_f64().unwrap() >= 0.7);
    }
}

#[test]
fn curves_have_one_point_per_cycle() {
    let v: Value = serde_json::from_str(&curves_view(0, 0.2, 3).unwrap()).unwrap();
    let arms = v.as_array().unwrap();
    assert_eq!(arms.len(), 4);
    for a in arms {
        let pts = a["points"].as_array().unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts[0][0].as_f64().unwrap() < pts[2][0].as_f64().unwrap());
    }
}

#[test]
fn out_of_range_gamma_is_clamped() {
    let v: Value = serde_json::from_str(&noise_view(0, 7.0, 0).unwrap()).unwrap();
    let g = v["dataset_labels"].as_u64().unwrap();
    assert_eq!(v["dataset_missed"].as_u64().unwrap(), g / 2);
}
