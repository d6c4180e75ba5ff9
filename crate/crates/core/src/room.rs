//! Server-mediated motion broadcast: clients sample at device rate, the
//! server forwards the latest sample each tick, and the attacker's client
//! receives it over a lossy link alongside unrelated traffic.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{TraceFile, TraceRecord};
use crate::victim::{MotionScript, Sample, BASE_POSE};
use crate::wire::{
    default_registry, encode_motion_update, CustomBlob, FieldValue, MotionLayout, MotionUpdate, Packet, PacketHeader,
    QuantizedTransformCodec, WireError,
};

/// Source id standing in for the motion server's address.
pub const MOTION_SOURCE: u16 = 1;
/// Custom type code of background chatter; deliberately absent from the
/// motion registry.
pub const CHATTER_TYPE: u8 = 0x40;

#[derive(Debug, Error)]
pub enum RoomError {
    #[error("invalid room config: {0}")]
    Config(String),
    #[error("encoding user {user} tick {tick}: {source}")]
    Encode { user: u32, tick: u32, source: WireError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomConfig {
    pub tick_rate: f64,
    pub device_rate: f64,
    /// Server-to-attacker loss probability per motion packet.
    pub drop_rate: f64,
    /// Receive-time jitter standard deviation, milliseconds.
    pub jitter_ms: f64,
    pub seed: u64,
    /// One id per script; extra ids are idle users.
    pub users: Vec<u32>,
    pub codec: QuantizedTransformCodec,
    pub layout: MotionLayout,
    /// Chance a tick carries the previous tick's hand poses.
    pub stale_update_prob: f64,
    pub start_us: u64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            tick_rate: 15.0,
            device_rate: 72.0,
            drop_rate: 0.0,
            jitter_ms: 0.0,
            seed: 0,
            users: vec![1],
            codec: QuantizedTransformCodec::default(),
            layout: MotionLayout::default(),
            stale_update_prob: 0.0,
            start_us: 0,
        }
    }
}

impl RoomConfig {
    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            p.push(format!("tick_rate must be positive, got {}", self.tick_rate));
        }
        if !(self.device_rate > 0.0 && self.device_rate.is_finite()) {
            p.push(format!("device_rate must be positive, got {}", self.device_rate));
        }
        if self.tick_rate > self.device_rate {
            p.push(format!("tick_rate {} exceeds device_rate {}", self.tick_rate, self.device_rate));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            p.push(format!("drop_rate must be in [0,1], got {}", self.drop_rate));
        }
        if !(0.0..=1.0).contains(&self.stale_update_prob) {
            p.push(format!("stale_update_prob must be in [0,1], got {}", self.stale_update_prob));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            p.push(format!("jitter_ms must be >= 0, got {}", self.jitter_ms));
        }
        let mut ids = self.users.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            p.push("users must be distinct".into());
        }
        p
    }

    pub fn validate(&self) -> Result<(), RoomError> {
        match self.problems().as_slice() {
            [] => Ok(()),
            errs => Err(RoomError::Config(errs.join("; "))),
        }
    }

    /// Nominal send time of `tick`, seconds.
    pub fn tick_time(&self, tick: u32) -> f64 {
        tick as f64 / self.tick_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatterKind {
    /// Voice-control style: short binary frames.
    VoiceControl,
    /// Text chat: printable payloads.
    Message,
}

/// Non-motion traffic from another server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSource {
    pub source_id: u16,
    pub rate: f64,
    pub kind: ChatterKind,
    #[serde(default)]
    pub drop_rate: f64,
}

impl BackgroundSource {
    /// A 1 Hz chat server and a 0.2 Hz voice-control server.
    pub fn defaults() -> Vec<BackgroundSource> {
        vec![
            BackgroundSource { source_id: 7, rate: 1.0, kind: ChatterKind::Message, drop_rate: 0.0 },
            BackgroundSource { source_id: 9, rate: 0.2, kind: ChatterKind::VoiceControl, drop_rate: 0.0 },
        ]
    }

    fn channel(&self) -> u8 {
        match self.kind {
            ChatterKind::Message => 2,
            ChatterKind::VoiceControl => 3,
        }
    }

    fn payload(&self, seq: u32, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut p = Packet::new(PacketHeader { channel: self.channel(), sequence: seq });
        p.push(0x01, FieldValue::I32(seq as i32));
        let bytes: Vec<u8> = match self.kind {
            ChatterKind::Message => (0..rng.random_range(8..60)).map(|_| rng.random_range(b' '..=b'~')).collect(),
            ChatterKind::VoiceControl => {
                let mut b = vec![0u8; rng.random_range(4..24)];
                rng.fill_bytes(&mut b);
                b
            }
        };
        p.push(0x05, FieldValue::Blob(CustomBlob { type_code: CHATTER_TYPE, bytes }));
        p.to_bytes().expect("chatter fits in a datagram")
    }
}

struct Pending {
    t: f64,
    order: (u8, u32, u32),
    source: u16,
    raw: Vec<u8>,
}

/// Runs the room until the longest script ends. Users without a script stay
/// at rest; shorter scripts hold their last sample.
pub fn run_session(
    cfg: &RoomConfig,
    victims: &[MotionScript],
    background: &[BackgroundSource],
) -> Result<TraceFile, RoomError> {
    cfg.validate()?;
    if victims.len() > cfg.users.len() {
        return Err(RoomError::Config(format!("{} scripts but only {} user ids", victims.len(), cfg.users.len())));
    }
    if let Some(s) = victims.iter().find(|s| (s.device_rate - cfg.device_rate).abs() > 1e-9) {
        return Err(RoomError::Config(format!("script at {} Hz, room expects {} Hz", s.device_rate, cfg.device_rate)));
    }
    for b in background {
        if !(b.rate > 0.0) || !(0.0..=1.0).contains(&b.drop_rate) {
            return Err(RoomError::Config(format!("background source {} needs rate > 0 and drop in [0,1]", b.source_id)));
        }
        if b.source_id == MOTION_SOURCE {
            return Err(RoomError::Config(format!("background source id {MOTION_SOURCE} is reserved")));
        }
    }

    let stream = |n: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(n);
        r
    };
    let mut drop_rng = stream(1);
    let mut stale_rng = stream(2);
    let mut jitter_rng = stream(3);
    let mut chatter_rng = stream(4);

    let registry = default_registry(&cfg.codec, &cfg.layout);
    let duration = victims.iter().map(MotionScript::duration).fold(0.0, f64::max);
    let ticks = (0u32..).take_while(|&k| cfg.tick_time(k) < duration - 1e-12).count() as u32;
    let mut pending = Vec::new();
    let mut last_sent: Vec<Option<Sample>> = vec![None; cfg.users.len()];

    for tick in 0..ticks {
        let t = cfg.tick_time(tick);
        for (u, &user_id) in cfg.users.iter().enumerate() {
            let mut s = match victims.get(u) {
                Some(script) if !script.samples.is_empty() => script.samples[script.sample_index_at(t)],
                _ => BASE_POSE,
            };
            if cfg.stale_update_prob > 0.0 && stale_rng.random_bool(cfg.stale_update_prob) {
                if let Some(prev) = last_sent[u] {
                    s.left = prev.left;
                    s.right = prev.right;
                }
            }
            last_sent[u] = Some(s);
            let update = MotionUpdate {
                user_id,
                tick,
                head: s.head,
                left: s.left,
                right: s.right,
                left_trigger: s.left_trigger,
                right_trigger: s.right_trigger,
                keyboard_open: s.keyboard_open,
            };
            let raw = encode_motion_update(&update, &registry, &cfg.codec, &cfg.layout)
                .and_then(|p| p.to_bytes_with(Some(&registry)))
                .map_err(|source| RoomError::Encode { user: user_id, tick, source })?;
            if cfg.drop_rate > 0.0 && drop_rng.random_bool(cfg.drop_rate) {
                continue;
            }
            pending.push(Pending { t, order: (0, tick, u as u32), source: MOTION_SOURCE, raw });
        }
    }

    for (bi, b) in background.iter().enumerate() {
        // Small per-source phase so chatter never ties with a tick.
        let phase = 0.0131 * (bi + 1) as f64;
        let mut seq = 0u32;
        loop {
            let t = phase + seq as f64 / b.rate;
            if t >= duration {
                break;
            }
            let raw = b.payload(seq, &mut chatter_rng);
            let dropped = b.drop_rate > 0.0 && chatter_rng.random_bool(b.drop_rate);
            if !dropped {
                pending.push(Pending { t, order: (1 + bi as u8, seq, 0), source: b.source_id, raw });
            }
            seq += 1;
        }
    }

    pending.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.order.cmp(&b.order)));
    let jitter = (cfg.jitter_ms > 0.0).then(|| Normal::new(0.0, cfg.jitter_ms * 1000.0).expect("validated"));
    let mut last = 0u64;
    let records = pending
        .into_iter()
        .map(|p| {
            let mut us = (p.t * 1e6).round();
            if let Some(j) = &jitter {
                us += j.sample(&mut jitter_rng);
            }
            // Jitter moves receive times but never reorders.
            let recv_us = (cfg.start_us + us.max(0.0).round() as u64).max(last);
            last = recv_us;
            TraceRecord { recv_us, source: p.source, raw: p.raw }
        })
        .collect();

    Ok(TraceFile {
        config_echo: serde_json::to_string(cfg).expect("config serializes"),
        start_us: cfg.start_us,
        records,
    })
}

/// Independently removes each record with probability `extra_drop`.
pub fn degrade_trace(t: &TraceFile, extra_drop: f64, seed: u64) -> TraceFile {
    assert!((0.0..=1.0).contains(&extra_drop), "extra_drop must be a probability");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = t.records.iter().filter(|_| !rng.random_bool(extra_drop)).cloned().collect();
    TraceFile { records, ..t.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::parse_packet;

    fn idle_script(seconds: f64) -> MotionScript {
        let n = (seconds * 72.0).round() as usize;
        MotionScript { device_rate: 72.0, samples: vec![BASE_POSE; n], labels: vec![], segments: vec![] }
    }

    #[test]
    fn ten_seconds_at_fifteen_hz() {
        let t = run_session(&RoomConfig::default(), &[idle_script(10.0)], &[]).unwrap();
        assert_eq!(t.source_counts()[&MOTION_SOURCE], 150);
        let seqs: Vec<u32> = t.records.iter().map(|r| parse_packet(&r.raw, None).unwrap().header.sequence).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn full_drop_leaves_background() {
        let cfg = RoomConfig { drop_rate: 1.0, ..RoomConfig::default() };
        let t = run_session(&cfg, &[idle_script(10.0)], &BackgroundSource::defaults()).unwrap();
        let counts = t.source_counts();
        assert_eq!(counts.get(&MOTION_SOURCE), None);
        assert_eq!(counts[&7], 10);
        assert_eq!(counts[&9], 2);
    }

    #[test]
    fn deterministic_with_jitter() {
        let cfg = RoomConfig { drop_rate: 0.3, jitter_ms: 5.0, seed: 4, ..RoomConfig::default() };
        let a = run_session(&cfg, &[idle_script(3.0)], &BackgroundSource::defaults()).unwrap();
        let b = run_session(&cfg, &[idle_script(3.0)], &BackgroundSource::defaults()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.records.windows(2).all(|w| w[0].recv_us <= w[1].recv_us));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = RoomConfig { tick_rate: 100.0, drop_rate: 1.5, ..RoomConfig::default() };
        assert_eq!(cfg.problems().len(), 2);
        assert!(run_session(&cfg, &[], &[]).is_err());
    }

    #[test]
    fn degrade_extremes_and_binomial() {
        let t = TraceFile {
            records: (0..10_000).map(|i| TraceRecord { recv_us: i, source: 1, raw: vec![] }).collect(),
            ..TraceFile::default()
        };
        assert_eq!(degrade_trace(&t, 0.0, 1), t);
        assert!(degrade_trace(&t, 1.0, 1).records.is_empty());
        let kept = degrade_trace(&t, 0.2, 1).records.len() as f64;
        assert!((kept - 8000.0).abs() <= 120.0, "{kept}");
    }
}
