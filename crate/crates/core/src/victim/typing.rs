//! Typing motion: minimum-jerk cursor moves between noisy key aims, with a
//! trapezoidal trigger press at each key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClickLabel, KeyboardModel, MotionScript, Prompt, PromptKind, Sample, VictimError, KEY_SIDE};
use crate::geometry::{min_jerk, Transform, UnitQuat, Vec3};
use crate::wire::Hand;

/// A click registers when the trigger reaches this value.
pub const TRIGGER_THRESHOLD: f64 = 0.75;

/// Tracked controller origin to the avatar hand frame the app transmits.
pub const CONTROLLER_TO_HAND: Transform =
    Transform { position: Vec3::new(0.0, -0.03, 0.05), rotation: UnitQuat::IDENTITY };

const OPEN_AT: f64 = 0.3;
const FIRST_MOVE_AT: f64 = 0.8;
const TAIL: f64 = 0.4;
const RISE: f64 = 0.08;
const FALL: f64 = 0.08;
const SETTLE: f64 = 0.04;
/// Aim noise is clamped this far inside the key edge.
const AIM_MARGIN: f64 = 0.0003;
const MAX_DRIFT: f64 = 0.001;
/// Share of the aim offset the cursor itself travels toward.
const FOLLOW: f64 = 0.3;
const HOME: [Vec3; 2] = [Vec3::new(-0.10, -0.12, 0.22), Vec3::new(0.10, -0.12, 0.22)];

/// Hand to cursor: 7 degrees about y, then (0.02, -0.01, 0.11) m.
pub fn default_cursor_offset() -> Transform {
    Transform::new(Vec3::new(0.02, -0.01, 0.11), UnitQuat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 7f64.to_radians()))
}

/// How one synthetic victim types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypistProfile {
    /// 0 = fastest typist, 1 = slowest.
    pub speed_percentile: f64,
    /// Per-axis in-plane aim noise, meters, for a key at the keyboard
    /// center. Aim error is angular, so it grows with cursor-to-key distance.
    pub aim_sigma: f64,
    pub right_hand_fraction: f64,
    /// Keyboard-local shift of the resting cursor position (posture).
    pub pose_offset: Vec3,
    /// Chance that a press lands just outside its key.
    pub miss_probability: f64,
}

impl Default for TypistProfile {
    fn default() -> Self {
        Self {
            speed_percentile: 0.5,
            aim_sigma: 0.004,
            right_hand_fraction: 0.7,
            pose_offset: Vec3::ZERO,
            miss_probability: 0.0,
        }
    }
}

impl TypistProfile {
    pub fn fastest() -> Self {
        Self { speed_percentile: 0.0, ..Self::default() }
    }

    /// `count` typists spread evenly over speed, with seeded posture and
    /// aim-noise variation.
    pub fn cohort(count: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let mut off = || rng.random_range(-0.02..0.02);
                let pose_offset = Vec3::new(off(), off(), off());
                Self {
                    speed_percentile: if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 },
                    aim_sigma: rng.random_range(0.003..0.005),
                    pose_offset,
                    ..Self::default()
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), VictimError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.speed_percentile) {
            return Err(VictimError::Profile(format!("speed_percentile {} not in [0,1]", self.speed_percentile)));
        }
        if !unit(self.right_hand_fraction) {
            return Err(VictimError::Profile(format!("right_hand_fraction {} not in [0,1]", self.right_hand_fraction)));
        }
        if !unit(self.miss_probability) {
            return Err(VictimError::Profile(format!("miss_probability {} not in [0,1]", self.miss_probability)));
        }
        if !(self.aim_sigma >= 0.0 && self.aim_sigma.is_finite()) {
            return Err(VictimError::Profile(format!("aim_sigma {} must be finite and >= 0", self.aim_sigma)));
        }
        if !self.pose_offset.is_finite() || self.pose_offset.norm() > 0.1 {
            return Err(VictimError::Profile("pose_offset must be finite and within 0.1 m".into()));
        }
        Ok(())
    }

    /// Seconds the trigger stays at or above threshold, drawn per press.
    fn press_duration(&self, rng: &mut ChaCha8Rng) -> f64 {
        let p = self.speed_percentile;
        rng.random_range((0.275 + 0.25 * p)..(0.70 + 0.5 * p))
    }

    fn move_duration(&self, rng: &mut ChaCha8Rng) -> f64 {
        0.18 + 0.25 * self.speed_percentile + rng.random_range(0.0..0.08)
    }
}

/// Where the victim stands and how their app maps hands to cursors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimRig {
    pub player: Transform,
    pub cursor_offset: Transform,
    pub device_rate: f64,
}

impl Default for VictimRig {
    fn default() -> Self {
        Self {
            player: Transform::translation(0.0, 1.6, 0.0),
            cursor_offset: default_cursor_offset(),
            device_rate: 72.0,
        }
    }
}

#[derive(Clone, Copy)]
enum Ease {
    MinJerk,
    Linear,
}

/// Keyboard-local cursor state: origin and the point it aims at.
#[derive(Clone, Copy)]
struct Aim {
    pos: Vec3,
    target: Vec3,
}

struct Keyframe {
    t: f64,
    aim: Aim,
    ease: Ease,
}

#[derive(Default)]
struct Track {
    keys: Vec<Keyframe>,
    presses: Vec<(f64, f64)>,
}

impl Track {
    fn aim_at(&self, t: f64) -> Aim {
        let next = self.keys.partition_point(|k| k.t <= t);
        if next == 0 {
            return self.keys[0].aim;
        }
        let a = &self.keys[next - 1];
        let Some(b) = self.keys.get(next) else { return a.aim };
        let u = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let s = match b.ease {
            Ease::MinJerk => min_jerk(u),
            Ease::Linear => u,
        };
        Aim { pos: a.aim.pos + (b.aim.pos - a.aim.pos) * s, target: a.aim.target + (b.aim.target - a.aim.target) * s }
    }

    fn trigger_at(&self, t: f64) -> f64 {
        for &(start, hold) in &self.presses {
            let u = t - start;
            if u < 0.0 {
                break;
            }
            if u < RISE {
                return u / RISE;
            }
            if u <= RISE + hold {
                return 1.0;
            }
            if u < RISE + hold + FALL {
                return 1.0 - (u - RISE - hold) / FALL;
            }
        }
        0.0
    }

    fn push(&mut self, t: f64, aim: Aim, ease: Ease) {
        self.keys.push(Keyframe { t, aim, ease });
    }
}

fn cursor_pos(hand: Hand, target: Vec3, profile: &TypistProfile) -> Vec3 {
    let home = HOME[hand as usize] + profile.pose_offset;
    Vec3::new(home.x + FOLLOW * target.x, home.y + FOLLOW * target.y, home.z)
}

fn hand_index(hand: Hand) -> usize {
    hand as usize
}

/// Synthesizes one prompt: the keyboard opens at 0.3 s, then each character
/// is a min-jerk move to a noisy aim inside its key followed by a press. The
/// head stays at the rig's player pose.
pub fn synthesize_typing(
    prompt: &Prompt,
    kb: &KeyboardModel,
    profile: &TypistProfile,
    rig: &VictimRig,
    seed: u64,
) -> Result<MotionScript, VictimError> {
    synthesize_indexed(prompt, 0, kb, profile, rig, seed)
}

/// Types every prompt in turn, reopening the keyboard for each one.
pub fn synthesize_session(
    prompts: &[Prompt],
    kb: &KeyboardModel,
    profile: &TypistProfile,
    rig: &VictimRig,
    seed: u64,
) -> Result<MotionScript, VictimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MotionScript { device_rate: rig.device_rate, samples: vec![], labels: vec![], segments: vec![] };
    for (i, p) in prompts.iter().enumerate() {
        out.append(synthesize_indexed(p, i, kb, profile, rig, rng.random())?);
    }
    Ok(out)
}

fn synthesize_indexed(
    prompt: &Prompt,
    prompt_index: usize,
    kb: &KeyboardModel,
    profile: &TypistProfile,
    rig: &VictimRig,
    seed: u64,
) -> Result<MotionScript, VictimError> {
    profile.validate()?;
    let keys: Vec<usize> =
        prompt.text.chars().map(|c| kb.key_for_char(c).ok_or(VictimError::UnmappableCharacter(c))).collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, profile.aim_sigma).expect("validated sigma");

    let mut tracks: [Track; 2] = Default::default();
    for hand in Hand::BOTH {
        let rest = Vec3::new(HOME[hand_index(hand)].x * 0.6, -0.09, 0.0);
        let aim = Aim { pos: cursor_pos(hand, rest, profile), target: rest };
        tracks[hand_index(hand)].push(0.0, aim, Ease::Linear);
    }

    struct Press {
        start: f64,
        end: f64,
        key: usize,
        hand: Hand,
    }
    let mut presses = Vec::with_capacity(keys.len());
    let mut t = FIRST_MOVE_AT;
    let limit = KEY_SIDE / 2.0 - AIM_MARGIN;
    for &k in &keys {
        let hand = if rng.random_bool(profile.right_hand_fraction) { Hand::Right } else { Hand::Left };
        let center = kb.keys()[k].center;
        let reach = (center - cursor_pos(hand, center, profile)).norm()
            / (Vec3::ZERO - cursor_pos(hand, Vec3::ZERO, profile)).norm();
        let (mut dx, mut dy) = (reach * noise.sample(&mut rng), reach * noise.sample(&mut rng));
        let miss = profile.miss_probability > 0.0 && rng.random_bool(profile.miss_probability);
        if miss {
            let beyond = KEY_SIDE / 2.0 + rng.random_range(0.0005..0.003);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            if rng.random_bool(0.5) {
                dx = sign * beyond;
                dy = dy.clamp(-limit, limit);
            } else {
                dy = sign * beyond;
                dx = dx.clamp(-limit, limit);
            }
        } else {
            dx = dx.clamp(-limit, limit);
            dy = dy.clamp(-limit, limit);
        }
        let target = center + Vec3::new(dx, dy, 0.0);
        let drift = Vec3::new(rng.random_range(-MAX_DRIFT..MAX_DRIFT), rng.random_range(-MAX_DRIFT..MAX_DRIFT), 0.0);
        let mut drifted = target + drift;
        if !miss {
            drifted.x = drifted.x.clamp(center.x - limit, center.x + limit);
            drifted.y = drifted.y.clamp(center.y - limit, center.y + limit);
        }

        let track = &mut tracks[hand_index(hand)];
        let pos = cursor_pos(hand, target, profile);
        let prev = track.aim_at(t);
        track.push(t, prev, Ease::Linear);
        let arrive = t + profile.move_duration(&mut rng);
        track.push(arrive, Aim { pos, target }, Ease::MinJerk);
        let start = arrive + SETTLE;
        let above = profile.press_duration(&mut rng);
        // The trigger is above threshold for the last quarter of the rise and
        // the first quarter of the fall.
        let hold = above - (1.0 - TRIGGER_THRESHOLD) * (RISE + FALL);
        let end = start + RISE + hold + FALL;
        track.push(start, Aim { pos, target }, Ease::Linear);
        track.push(end, Aim { pos, target: drifted }, Ease::Linear);
        track.presses.push((start, hold));
        presses.push(Press { start, end, key: k, hand });
        t = end + 0.04 + 0.1 * profile.speed_percentile;
    }

    let total = if presses.is_empty() { FIRST_MOVE_AT } else { t } + TAIL;
    let n = (total * rig.device_rate).ceil() as usize;
    let kb_pose = kb.placement(&rig.player);
    let up = kb_pose.apply_vector(Vec3::new(0.0, 1.0, 0.0));
    let to_hand = rig.cursor_offset.inverse();
    let samples: Vec<Sample> = (0..n)
        .map(|i| {
            let ts = i as f64 / rig.device_rate;
            let hand_pose = |hand: Hand| {
                let a = tracks[hand_index(hand)].aim_at(ts);
                let origin = kb_pose.apply_point(a.pos);
                let dir = kb_pose.apply_point(a.target) - origin;
                Transform::new(origin, UnitQuat::look_rotation(dir, up)).compose(&to_hand)
            };
            Sample {
                head: rig.player,
                left: hand_pose(Hand::Left),
                right: hand_pose(Hand::Right),
                left_trigger: tracks[0].trigger_at(ts),
                right_trigger: tracks[1].trigger_at(ts),
                keyboard_open: ts >= OPEN_AT,
            }
        })
        .collect();

    let labels = presses
        .iter()
        .map(|p| {
            let first = (p.start * rig.device_rate).floor() as usize;
            let last = ((p.end * rig.device_rate).ceil() as usize).min(n - 1);
            let above: Vec<usize> =
                (first..=last).filter(|&i| samples[i].trigger(p.hand) >= TRIGGER_THRESHOLD).collect();
            let key = &kb.keys()[p.key];
            ClickLabel {
                sample: above[0],
                end_sample: *above.last().unwrap(),
                key: key.label.clone(),
                row: key.row,
                hand: p.hand,
                prompt_index,
                prompt_kind: prompt.kind,
            }
        })
        .collect();

    Ok(MotionScript { device_rate: rig.device_rate, samples, labels, segments: vec![] })
}

impl PromptKind {
    /// Convenience for ad-hoc prompts in tests and demos.
    pub fn prompt(self, text: &str) -> Prompt {
        Prompt { kind: self, text: text.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ray_quad_intersect;

    fn local_replay(script: &MotionScript, kb: &KeyboardModel, rig: &VictimRig) -> String {
        let kb_pose = kb.placement(&rig.player);
        script
            .labels
            .iter()
            .map(|l| {
                let s = &script.samples[l.sample];
                let cursor = s.pose(l.hand.part()).compose(&rig.cursor_offset);
                let hit = kb
                    .keys()
                    .iter()
                    .find(|k| ray_quad_intersect(&cursor.ray(), &k.quad.transformed(&kb_pose)).is_some())
                    .expect("ray hits a key");
                hit.ch
            })
            .collect()
    }

    #[test]
    fn replay_recovers_prompt() {
        let kb = KeyboardModel::default_layout();
        let rig = VictimRig::default();
        let script = synthesize_typing(&PromptKind::Numbers.prompt("123"), &kb, &TypistProfile::default(), &rig, 1).unwrap();
        assert_eq!(script.labels.len(), 3);
        assert_eq!(local_replay(&script, &kb, &rig), "123");
    }

    #[test]
    fn empty_prompt_opens_keyboard_only() {
        let kb = KeyboardModel::default_layout();
        let script =
            synthesize_typing(&PromptKind::Numbers.prompt(""), &kb, &TypistProfile::default(), &VictimRig::default(), 1)
                .unwrap();
        assert!(script.labels.is_empty());
        assert!(script.samples.iter().any(|s| s.keyboard_open));
        assert!(!script.samples[0].keyboard_open);
    }

    #[test]
    fn unmappable_character() {
        let kb = KeyboardModel::default_layout();
        let r = synthesize_typing(&PromptKind::Sentence.prompt("a$b"), &kb, &TypistProfile::default(), &VictimRig::default(), 1);
        assert!(matches!(r, Err(VictimError::UnmappableCharacter('$'))));
    }

    #[test]
    fn fastest_durations_in_bracket() {
        let kb = KeyboardModel::default_layout();
        let rig = VictimRig::default();
        let script = synthesize_typing(
            &PromptKind::Sentence.prompt("the quick brown fox jumps over"),
            &kb,
            &TypistProfile::fastest(),
            &rig,
            5,
        )
        .unwrap();
        for l in &script.labels {
            let d = l.duration(rig.device_rate);
            assert!((0.255..=0.721).contains(&d), "{d}");
        }
    }

    #[test]
    fn single_upward_crossing_per_label() {
        let kb = KeyboardModel::default_layout();
        let rig = VictimRig::default();
        let script = synthesize_typing(&PromptKind::Password.prompt("river-42!moon"), &kb, &TypistProfile::default(), &rig, 9)
            .unwrap();
        for hand in Hand::BOTH {
            let crossings = script
                .samples
                .windows(2)
                .filter(|w| w[0].trigger(hand) < TRIGGER_THRESHOLD && w[1].trigger(hand) >= TRIGGER_THRESHOLD)
                .count();
            assert_eq!(crossings, script.labels.iter().filter(|l| l.hand == hand).count());
        }
    }
}
