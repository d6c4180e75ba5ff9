use keylab_web::{attack_text, attack_text_json, codec_error, codec_error_json, drop_sweep, drop_sweep_json};

#[test]
fn lossless_codec_moves_nothing() {
    let r = codec_error(0, 0, 0.4, 500, 1).unwrap();
    assert!(r.hit_max_mm < 1e-9, "{r:?}");
    assert_eq!(r.position_step_mm, 0.0);
}

#[test]
fn default_codec_stays_well_inside_a_key() {
    let r = codec_error(16, 9, 0.35, 2000, 2).unwrap();
    assert_eq!(r.pose_bits, 3 * 16 + 2 + 3 * 9);
    assert!(r.hit_p95_mm < r.key_side_mm / 4.0, "{r:?}");
    assert!(r.hit_mean_mm <= r.hit_p95_mm && r.hit_p95_mm <= r.hit_max_mm);
}

#[test]
fn more_rotation_bits_means_less_error() {
    let errs: Vec<f64> = [5, 7, 9, 12].iter().map(|&b| codec_error(16, b, 0.35, 2000, 3).unwrap().rotation_mean_deg).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn codec_rejects_bad_widths() {
    assert!(codec_error(33, 9, 0.35, 10, 0).is_err());
    assert!(codec_error(16, 1, 0.35, 10, 0).is_err());
    assert!(codec_error(16, 9, 0.0, 10, 0).is_err());
    assert!(codec_error_json(16, 17, 0.35, 10, 0).starts_with(r#"{"error":"#));
}

#[test]
fn typed_text_is_recovered() {
    let r = attack_text("Hello World 42", 0.0, 5, 0, 0).unwrap();
    assert_eq!(r.typed, "hello world 42");
    assert_eq!(r.recovered.replace("space", " "), r.typed, "{r:?}");
    assert_eq!(r.top, [1.0; 3]);
    assert_eq!(r.clicks.len(), 14);
    assert_eq!(r.keys.len(), 47);

    let v: serde_json::Value = serde_json::from_str(&attack_text_json("abc", 0.0, 1, 16, 9)).unwrap();
    assert_eq!(v["ok"]["clicks"].as_array().unwrap().len(), 3);
    let v: serde_json::Value = serde_json::from_str(&attack_text_json("naïve", 0.0, 1, 16, 9)).unwrap();
    assert!(v["error"].is_string());
    assert!(attack_text("", 0.0, 1, 16, 9).is_err());
}

#[test]
fn sweep_has_one_point_per_rate() {
    let pts = drop_sweep(4, 6, &[0.0, 0.2, 0.6]).unwrap();
    assert_eq!(pts.len(), 3);
    assert!(pts.iter().all(|p| p.clicks == pts[0].clicks));
    assert!(pts[0].top[0] >= 0.95 && pts[0].undetected == 0);
    assert!(pts.iter().all(|p| p.top[0] <= p.top[1] && p.top[1] <= p.top[2]));
    assert!(drop_sweep(4, 6, &[1.5]).is_err());
    assert!(drop_sweep(4, 0, &[0.0]).is_err());

    let v: serde_json::Value = serde_json::from_str(&drop_sweep_json(4, 3, 0.4, 5)).unwrap();
    let rates: Vec<f64> = v["ok"].as_array().unwrap().iter().map(|p| p["drop_rate"].as_f64().unwrap()).collect();
    assert_eq!(rates, [0.0, 0.1, 0.2, 0.30000000000000004, 0.4]);
}
