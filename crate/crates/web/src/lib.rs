//! Browser demo over the keylab pipeline. Three operations, each a plain
//! Rust function returning a serializable result plus a `#[wasm_bindgen]`
//! wrapper that hands JSON to the page:
//!
//! - [`codec_error`]: how far pose quantization moves the cursor ray's hit
//!   point, compared with a key's width;
//! - [`attack_text`]: a victim types a string, the attacker reads it back
//!   from the captured trace;
//! - [`drop_sweep`]: top-k accuracy of one seeded session as extra packet
//!   loss grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

use keylab::attack::{evaluate, match_labels, run_attack, AttackError, GroundTruth, UserTruth};
use keylab::calibration::CalibrationReport;
use keylab::experiment::{simulate, seeded_profiles, ExperimentConfig, ExperimentError};
use keylab::geometry::{Plane, Transform, UnitQuat, Vec3};
use keylab::room::{degrade_trace, run_session, BackgroundSource, RoomConfig, RoomError};
use keylab::victim::{
    default_cursor_offset, synthesize_session, KeyboardModel, Prompt, PromptKind, TypistProfile, VictimError,
    VictimRig, KEY_SIDE,
};
use keylab::wire::{decode_quat_smallest_three, encode_quat_smallest_three, QuantizedTransformCodec, RotationScheme};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Room(#[from] RoomError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

/// Codec with `position_bits` per axis over the default range and
/// `rotation_bits` per smallest-three component; 0 means lossless.
pub fn codec(position_bits: u32, rotation_bits: u32) -> Result<QuantizedTransformCodec, DemoError> {
    if position_bits > 32 {
        return Err(DemoError::Invalid(format!("position bits {position_bits} not in 0..=32")));
    }
    if rotation_bits == 1 || rotation_bits > 16 {
        return Err(DemoError::Invalid(format!("rotation bits {rotation_bits} not 0 or in 2..=16")));
    }
    let rotation = match rotation_bits {
        0 => RotationScheme::Lossless,
        bits => RotationScheme::SmallestThree { bits },
    };
    Ok(QuantizedTransformCodec { position_bits: [position_bits; 3], rotation, ..QuantizedTransformCodec::default() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodecReport {
    /// Bits one pose occupies on the wire (positions plus rotation).
    pub pose_bits: u32,
    pub position_step_mm: f64,
    pub rotation_mean_deg: f64,
    pub rotation_max_deg: f64,
    /// Hit-point displacement on a plane `reach` meters along the ray.
    pub hit_mean_mm: f64,
    pub hit_p95_mm: f64,
    pub hit_max_mm: f64,
    pub key_side_mm: f64,
}

fn roundtrip(c: &QuantizedTransformCodec, t: &Transform) -> Transform {
    let mut p = t.position;
    for axis in 0..3 {
        if let Some(q) = c.position_quantizer(axis) {
            p = p.with_axis(axis, q.decode(q.encode(p.axis(axis)).expect("sampled inside the codec range")));
        }
    }
    let r = match c.rotation {
        RotationScheme::SmallestThree { bits } => decode_quat_smallest_three(encode_quat_smallest_three(t.rotation, bits)),
        RotationScheme::Lossless => t.rotation,
    };
    Transform::new(p, r)
}

/// Samples random poses, pushes each through the codec, and measures how far
/// the ray's hit point moves on a plane `reach` meters ahead.
pub fn codec_error(
    position_bits: u32,
    rotation_bits: u32,
    reach: f64,
    samples: u32,
    seed: u64,
) -> Result<CodecReport, DemoError> {
    if !(reach > 0.0 && reach.is_finite()) || samples == 0 {
        return Err(DemoError::Invalid("reach must be positive and samples at least 1".into()));
    }
    let c = codec(position_bits, rotation_bits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rot, mut hit) = (Vec::with_capacity(samples as usize), Vec::with_capacity(samples as usize));
    for _ in 0..samples {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let p = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0), rng.random_range(-2.0..2.0));
        let t = Transform::new(p, UnitQuat::new(q[0], q[1], q[2], q[3]));
        let back = roundtrip(&c, &t);
        rot.push(t.rotation.angle_to(back.rotation).to_degrees());
        let target = t.ray().at(reach);
        let plane = Plane::new(target, t.forward());
        let moved = plane.intersect(&back.ray()).map_or(f64::INFINITY, |h| h.point.distance(target));
        hit.push(moved * 1000.0);
    }
    hit.sort_by(f64::total_cmp);
    let n = samples as f64;
    let pose_bits = match c.rotation {
        RotationScheme::SmallestThree { bits } => 2 + 3 * bits,
        RotationScheme::Lossless => 256,
    } + if position_bits == 0 { 192 } else { 3 * position_bits };
    Ok(CodecReport {
        pose_bits,
        position_step_mm: c.position_quantizer(0).map_or(0.0, |q| q.step() * 1000.0),
        rotation_mean_deg: rot.iter().sum::<f64>() / n,
        rotation_max_deg: rot.iter().copied().fold(0.0, f64::max),
        hit_mean_mm: hit.iter().sum::<f64>() / n,
        hit_p95_mm: hit[((0.95 * n).ceil() as usize).clamp(1, hit.len()) - 1],
        hit_max_mm: hit[hit.len() - 1],
        key_side_mm: KEY_SIDE * 1000.0,
    })
}

/// A key in keyboard-local coordinates (meters; +y is away from the player).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyCell {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypedClick {
    pub truth: String,
    /// Attacker's top-1 key, `None` when the click was not detected.
    pub predicted: Option<String>,
    /// Position of the true key in the attacker's ranking.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackDemo {
    pub typed: String,
    pub recovered: String,
    pub clicks: Vec<TypedClick>,
    /// Top-1, top-3 and top-5 accuracy.
    pub top: [f64; 3],
    pub datagrams: usize,
    pub keys: Vec<KeyCell>,
}

pub fn keyboard_cells() -> Vec<KeyCell> {
    KeyboardModel::default_layout()
        .keys()
        .iter()
        .map(|k| KeyCell { label: k.label.clone(), x: k.center.x, y: k.center.y, side: KEY_SIDE })
        .collect()
}

/// One victim types `text` (lower-cased) in a room with the given codec and
/// loss; the attack runs on the captured trace with exact offsets.
pub fn attack_text(
    text: &str,
    drop_rate: f64,
    seed: u64,
    position_bits: u32,
    rotation_bits: u32,
) -> Result<AttackDemo, DemoError> {
    let typed = text.to_lowercase();
    if typed.is_empty() {
        return Err(DemoError::Invalid("type something first".into()));
    }
    let room =
        RoomConfig { users: vec![1], seed, drop_rate, codec: codec(position_bits, rotation_bits)?, ..RoomConfig::default() };
    room.validate()?;
    let kb = KeyboardModel::default_layout();
    let prompt = Prompt { kind: PromptKind::Sentence, text: typed.clone() };
    let script = synthesize_session(&[prompt], &kb, &TypistProfile::default(), &VictimRig::default(), seed)?;
    let trace = run_session(&room, std::slice::from_ref(&script), &BackgroundSource::defaults())?;
    let calib = CalibrationReport::ground_truth(&room, default_cursor_offset(), kb);
    let report = run_attack(&trace, &calib, &Default::default())?;
    let truth = GroundTruth {
        tick_rate: room.tick_rate,
        device_rate: room.device_rate,
        users: vec![UserTruth { user_id: 1, labels: script.labels.clone() }],
    };
    let metrics = evaluate(&report, &truth)?;
    let user = report.user(1);
    let detected = user.map(|u| u.clicks.as_slice()).unwrap_or_default();
    let pairs: Vec<_> = detected.iter().map(|c| (c.tick, c.hand)).collect();
    let matched = match_labels(&script.labels, &pairs, room.tick_rate, room.device_rate);
    let clicks = script
        .labels
        .iter()
        .zip(matched)
        .map(|(l, m)| {
            let ranking = m.map(|i| &detected[i].ranking);
            TypedClick {
                truth: l.key.clone(),
                predicted: ranking.and_then(|r| r.first()).map(|k| k.key.clone()),
                rank: ranking.and_then(|r| r.iter().position(|k| k.key == l.key)),
            }
        })
        .collect();
    Ok(AttackDemo {
        typed,
        recovered: user.map(|u| u.text()).unwrap_or_default(),
        clicks,
        top: metrics.group("all").map_or([0.0; 3], |g| g.top),
        datagrams: trace.records.len(),
        keys: keyboard_cells(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub drop_rate: f64,
    pub clicks: usize,
    pub undetected: usize,
    pub top: [f64; 3],
}

/// One seeded victim types `prompts` prompts; the captured trace is then
/// thinned at each extra drop rate and attacked again.
pub fn drop_sweep(seed: u64, prompts: usize, rates: &[f64]) -> Result<Vec<SweepPoint>, DemoError> {
    if !(1..=65).contains(&prompts) {
        return Err(DemoError::Invalid(format!("prompts {prompts} not in 1..=65")));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(DemoError::Invalid(format!("drop rate {r} not in [0,1]")));
    }
    let cfg = ExperimentConfig { prompts, calibrate: false, ..ExperimentConfig::default() };
    let corpus = simulate(&cfg, seed, &seeded_profiles(1, seed), false)?;
    let calib = CalibrationReport::ground_truth(&corpus.room, default_cursor_offset(), KeyboardModel::default_layout());
    rates
        .iter()
        .map(|&rate| {
            let trace = degrade_trace(&corpus.trace, rate, seed);
            let m = evaluate(&run_attack(&trace, &calib, &cfg.click)?, &corpus.truth)?;
            Ok(SweepPoint {
                drop_rate: rate,
                clicks: m.total,
                undetected: m.undetected,
                top: m.group("all").map_or([0.0; 3], |g| g.top),
            })
        })
        .collect()
}

/// `{"ok": value}` or `{"error": message}`.
fn to_json<T: Serialize>(r: Result<T, DemoError>) -> String {
    let v = match r {
        Ok(v) => serde_json::json!({ "ok": v }),
        Err(e) => serde_json::json!({ "error": e.to_string() }),
    };
    v.to_string()
}

#[wasm_bindgen(js_name = codecError)]
pub fn codec_error_json(position_bits: u32, rotation_bits: u32, reach: f64, samples: u32, seed: u32) -> String {
    to_json(codec_error(position_bits, rotation_bits, reach, samples, seed as u64))
}

#[wasm_bindgen(js_name = attackText)]
pub fn attack_text_json(text: &str, drop_rate: f64, seed: u32, position_bits: u32, rotation_bits: u32) -> String {
    to_json(attack_text(text, drop_rate, seed as u64, position_bits, rotation_bits))
}

/// Evenly spaced rates from 0 to `max_rate`.
#[wasm_bindgen(js_name = dropSweep)]
pub fn drop_sweep_json(seed: u32, prompts: u32, max_rate: f64, steps: u32) -> String {
    let steps = steps.max(2);
    let rates: Vec<f64> = (0..steps).map(|i| max_rate * i as f64 / (steps - 1) as f64).collect();
    to_json(drop_sweep(seed as u64, prompts as usize, &rates))
}
