//! Trace-to-keystrokes pipeline: keep the busiest source, parse, split per
//! user, find trigger crossings, and cast each click's cursor ray at the
//! keyboard.

mod eval;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use eval::{
    evaluate, match_labels, score, GroundTruth, GroupMetric, Metrics, ScoredClick, UserTruth, SPEED_GROUPS, TOP_K,
};

use crate::calibration::{CalibrationReport, FieldSemanticsMap};
use crate::geometry::{ray_quad_intersect, Plane, Ray, Transform, Vec3};
use crate::trace::TraceFile;
use crate::victim::{KeyboardModel, TRIGGER_THRESHOLD};
use crate::wire::{parse_packet, Hand, Packet, Registry};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("trace has no records")]
    EmptyTrace,
    #[error("packet {sequence} carries no user id")]
    MissingUserId { sequence: u32 },
    #[error("user {user}: click at tick {tick} with no keyboard-open event before it")]
    NoKeyboardPose { user: u32, tick: u32 },
    #[error("more detected clicks ({detected}) than ground-truth clicks ({truth}) for user {user}")]
    LengthMismatch { user: u32, detected: usize, truth: usize },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Keeps only the source with the most records (ties: lowest id).
pub fn filter_motion_source(t: &TraceFile) -> Result<TraceFile, AttackError> {
    let counts = t.source_counts();
    let (&source, _) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .ok_or(AttackError::EmptyTrace)?;
    Ok(TraceFile { records: t.records.iter().filter(|r| r.source == source).cloned().collect(), ..t.clone() })
}

/// A parsed datagram with its receive time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPacket {
    pub recv_us: u64,
    pub packet: Packet,
}

/// Parses every record; malformed datagrams are counted and skipped.
pub fn parse_trace(t: &TraceFile, registry: Option<&Registry>) -> (Vec<ObservedPacket>, usize) {
    let mut bad = 0;
    let packets = t
        .records
        .iter()
        .filter_map(|r| match parse_packet(&r.raw, registry) {
            Ok(packet) => Some(ObservedPacket { recv_us: r.recv_us, packet }),
            Err(_) => {
                bad += 1;
                None
            }
        })
        .collect();
    (packets, bad)
}

/// Splits packets by their user-id field, preserving order.
pub fn demux_users(packets: Vec<ObservedPacket>) -> Result<BTreeMap<u32, Vec<ObservedPacket>>, AttackError> {
    let mut m: BTreeMap<u32, Vec<ObservedPacket>> = BTreeMap::new();
    for p in packets {
        let user =
            p.packet.user_id().ok_or(AttackError::MissingUserId { sequence: p.packet.header.sequence })?;
        m.entry(user).or_default().push(p);
    }
    Ok(m)
}

/// Threshold crossing rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickRule {
    pub threshold: f64,
    /// After a click the trigger must fall below this before the next one.
    pub rearm_below: f64,
    /// Ranked keys kept per click.
    pub ranking_depth: usize,
}

impl Default for ClickRule {
    fn default() -> Self {
        Self { threshold: TRIGGER_THRESHOLD, rearm_below: TRIGGER_THRESHOLD - 0.05, ranking_depth: 10 }
    }
}

/// Indices where `values` crosses `threshold` upward. A crossing needs an
/// observed value below threshold first, and after a crossing the value must
/// drop below `rearm_below` before another counts.
pub fn threshold_crossings(values: &[f64], threshold: f64, rearm_below: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut armed = false;
    for (i, &v) in values.iter().enumerate() {
        if armed && v >= threshold {
            out.push(i);
            armed = false;
        } else if !armed && v < rearm_below.min(threshold) {
            armed = true;
        } else if out.is_empty() && !armed && v < threshold {
            // Before any click, anything below threshold arms.
            armed = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedKey {
    pub key: String,
    /// In-plane distance from the ray's keyboard-plane point to the key
    /// center, meters.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub user_id: u32,
    pub hand: Hand,
    pub sequence: u32,
    pub tick: u32,
    pub recv_us: u64,
    pub hand_pose: Transform,
    pub trigger: f64,
    /// Head pose at the start of the keyboard-open run this click is in.
    pub keyboard_head: Option<Transform>,
    pub ranking: Vec<RankedKey>,
}

/// One click per upward threshold crossing per hand, carrying the hand pose
/// of the crossing packet.
pub fn detect_clicks(
    stream: &[ObservedPacket],
    sem: &FieldSemanticsMap,
    rule: &ClickRule,
) -> Vec<ClickRecord> {
    let decoded: Vec<(u64, crate::calibration::DecodedMotion)> =
        stream.iter().filter_map(|p| sem.decode(&p.packet).map(|d| (p.recv_us, d))).collect();
    // Head pose at the first packet of each keyboard-open run.
    let mut open_head = Vec::with_capacity(decoded.len());
    let mut current = None;
    for (_, d) in &decoded {
        current = match (d.keyboard_open, current) {
            (false, _) => None,
            (true, None) => Some(d.head),
            (true, some) => some,
        };
        open_head.push(current);
    }
    let mut clicks = Vec::new();
    for hand in Hand::BOTH {
        let values: Vec<f64> = decoded.iter().map(|(_, d)| d.trigger(hand)).collect();
        for i in threshold_crossings(&values, rule.threshold, rule.rearm_below) {
            let (recv_us, d) = &decoded[i];
            clicks.push(ClickRecord {
                user_id: d.user_id,
                hand,
                sequence: d.sequence,
                tick: d.tick,
                recv_us: *recv_us,
                hand_pose: *d.pose(hand.part()),
                trigger: values[i],
                keyboard_head: open_head[i],
                ranking: vec![],
            });
        }
    }
    clicks.sort_by_key(|c| (c.tick, c.hand));
    clicks
}

/// The keyboard as placed for one open run.
pub struct PlacedKeyboard<'a> {
    keyboard: &'a KeyboardModel,
    to_local: Transform,
    plane: Plane,
}

impl<'a> PlacedKeyboard<'a> {
    pub fn new(keyboard: &'a KeyboardModel, head: &Transform) -> Self {
        let corners: Vec<Vec3> = keyboard.keys().iter().flat_map(|k| k.quad.corners().iter().copied()).collect();
        Self { keyboard, to_local: keyboard.placement(head).inverse(), plane: Plane::fit(&corners) }
    }

    /// Keys ranked by in-plane distance from where `cursor`'s ray meets the
    /// keyboard; a key the ray actually hits always comes first.
    pub fn rank(&self, cursor: &Transform, depth: usize) -> Vec<RankedKey> {
        let local = self.to_local.compose(cursor);
        let ray = local.ray();
        let keys = self.keyboard.keys();
        let hit = keys
            .iter()
            .enumerate()
            .filter_map(|(i, k)| ray_quad_intersect(&ray, &k.quad).map(|h| (i, h.distance)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        let dist: Vec<f64> = match self.plane.intersect(&ray) {
            Some(h) => keys.iter().map(|k| h.point.distance(k.center)).collect(),
            None => keys.iter().map(|k| distance_to_line(&ray, k.center)).collect(),
        };
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        if let Some(h) = hit {
            order.retain(|&i| i != h);
            order.insert(0, h);
        }
        order.into_iter().take(depth).map(|i| RankedKey { key: keys[i].label.clone(), distance: dist[i] }).collect()
    }
}

fn distance_to_line(ray: &Ray, p: Vec3) -> f64 {
    let v = p - ray.origin;
    (v - ray.direction * v.dot(ray.direction)).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: u32,
    pub packets: usize,
    /// Top-1 key labels in click order.
    pub predicted: Vec<String>,
    pub clicks: Vec<ClickRecord>,
}

impl UserReport {
    /// Top-1 predictions as typed text.
    pub fn text(&self) -> String {
        self.predicted.iter().map(|k| if k == "space" { " " } else { k.as_str() }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeReport {
    pub format_version: u32,
    pub trace_digest: String,
    pub calibration_digest: String,
    pub rule: ClickRule,
    pub motion_source: u16,
    pub malformed_packets: usize,
    pub users: Vec<UserReport>,
}

impl KeystrokeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AttackError> {
        serde_json::from_str(s).map_err(|e| AttackError::Report(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), AttackError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn read(path: &Path) -> Result<Self, AttackError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json()))
    }

    pub fn user(&self, id: u32) -> Option<&UserReport> {
        self.users.iter().find(|u| u.user_id == id)
    }
}

/// Ranks every click using the calibrated cursor offset and keyboard.
pub fn infer_keystrokes(
    mut clicks: Vec<ClickRecord>,
    calib: &CalibrationReport,
    depth: usize,
) -> Result<Vec<ClickRecord>, AttackError> {
    let offset = calib.cursor.hand_to_cursor;
    for c in &mut clicks {
        let head = c.keyboard_head.ok_or(AttackError::NoKeyboardPose { user: c.user_id, tick: c.tick })?;
        let placed = PlacedKeyboard::new(&calib.keyboard, &head);
        c.ranking = placed.rank(&c.hand_pose.compose(&offset), depth);
    }
    Ok(clicks)
}

/// Full pipeline from a capture to a report.
pub fn run_attack(trace: &TraceFile, calib: &CalibrationReport, rule: &ClickRule) -> Result<KeystrokeReport, AttackError> {
    let registry = calib.registry().map_err(|e| AttackError::Calibration(e.to_string()))?;
    let motion = filter_motion_source(trace)?;
    let motion_source = motion.records[0].source;
    let (packets, malformed) = parse_trace(&motion, Some(&registry));
    let mut users = Vec::new();
    for (user_id, stream) in demux_users(packets)? {
        let clicks = detect_clicks(&stream, &calib.semantics, rule);
        let clicks = infer_keystrokes(clicks, calib, rule.ranking_depth)?;
        users.push(UserReport {
            user_id,
            packets: stream.len(),
            predicted: clicks.iter().map(|c| c.ranking.first().map(|r| r.key.clone()).unwrap_or_default()).collect(),
            clicks,
        });
    }
    Ok(KeystrokeReport {
        format_version: 1,
        trace_digest: trace.digest(),
        calibration_digest: calib.digest(),
        rule: *rule,
        motion_source,
        malformed_packets: malformed,
        users,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuat;
    use crate::trace::TraceRecord;

    #[test]
    fn crossing_examples() {
        assert_eq!(threshold_crossings(&[0.0, 0.3, 0.8, 0.9, 0.2], 0.75, 0.70), vec![2]);
        assert!(threshold_crossings(&[0.8, 0.9], 0.75, 0.70).is_empty());
        // Jitter just under threshold does not re-trigger.
        assert_eq!(threshold_crossings(&[0.0, 0.8, 0.74, 0.76, 0.1, 0.9], 0.75, 0.70), vec![1, 5]);
    }

    #[test]
    fn filter_keeps_busiest_source() {
        let rec = |s: u16| TraceRecord { recv_us: 0, source: s, raw: vec![] };
        let t = TraceFile { records: vec![rec(3), rec(1), rec(3), rec(2), rec(1)], ..TraceFile::default() };
        let f = filter_motion_source(&t).unwrap();
        assert!(f.records.iter().all(|r| r.source == 1));
        assert!(matches!(filter_motion_source(&TraceFile::default()), Err(AttackError::EmptyTrace)));
    }

    #[test]
    fn ray_through_center_ranks_first() {
        let kb = KeyboardModel::default_layout();
        let head = Transform::translation(0.0, 1.6, 0.0);
        let placed = PlacedKeyboard::new(&kb, &head);
        let world = kb.placement(&head);
        let target = world.apply_point(kb.keys()[20].center);
        let origin = Vec3::new(0.1, 1.5, -0.1);
        let cursor = Transform::new(origin, UnitQuat::look_rotation(target - origin, Vec3::new(0.0, 1.0, 0.0)));
        let r = placed.rank(&cursor, 5);
        assert_eq!(r[0].key, kb.keys()[20].label);
        assert!(r[0].distance < 1e-9);
        assert!(r.windows(2).all(|w| w[0].distance <= w[1].distance));
    }
}
