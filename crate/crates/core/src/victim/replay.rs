//! Scripted input replay: hold every input fixed except the swept ones, so a
//! calibrator can see which packet field follows which input.

use serde::{Deserialize, Serialize};

use super::{MotionScript, Sample, VictimError};
use crate::geometry::{Transform, UnitQuat, Vec3};
use crate::wire::{BodyPart, Hand};

/// A single controllable input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDim {
    Position { part: BodyPart, axis: u8 },
    /// Quaternion vector component: 0 = x, 1 = y, 2 = z. `w` follows from
    /// the unit constraint.
    Rotation { part: BodyPart, component: u8 },
    Trigger { hand: Hand },
    KeyboardOpen,
}

impl InputDim {
    /// The 21 dimensions a calibrator needs.
    pub fn all() -> Vec<InputDim> {
        let mut v = Vec::with_capacity(21);
        for part in BodyPart::ALL {
            v.extend((0..3).map(|axis| InputDim::Position { part, axis }));
            v.extend((0..3).map(|component| InputDim::Rotation { part, component }));
        }
        v.extend(Hand::BOTH.map(|hand| InputDim::Trigger { hand }));
        v.push(InputDim::KeyboardOpen);
        v
    }

    pub fn name(&self) -> String {
        let part = |p: &BodyPart| match p {
            BodyPart::Head => "head",
            BodyPart::Left => "left",
            BodyPart::Right => "right",
        };
        match self {
            InputDim::Position { part: p, axis } => format!("{}.pos.{}", part(p), ["x", "y", "z"][*axis as usize]),
            InputDim::Rotation { part: p, component } => {
                format!("{}.rot.{}", part(p), ["x", "y", "z"][*component as usize])
            }
            InputDim::Trigger { hand: Hand::Left } => "left.trigger".into(),
            InputDim::Trigger { hand: Hand::Right } => "right.trigger".into(),
            InputDim::KeyboardOpen => "keyboard_open".into(),
        }
    }

    fn valid_range(&self) -> (f64, f64) {
        match self {
            InputDim::Position { .. } => (-8.0, 8.0),
            InputDim::Rotation { .. } => (-0.7, 0.7),
            InputDim::Trigger { .. } | InputDim::KeyboardOpen => (0.0, 1.0),
        }
    }

    fn apply(&self, s: &mut Sample, v: f64) {
        match *self {
            InputDim::Position { part, axis } => {
                let p = s.pose_mut(part);
                p.position = p.position.with_axis(axis as usize, v);
            }
            InputDim::Rotation { part, component } => {
                let mut c = [0.0; 3];
                c[component as usize] = v;
                s.pose_mut(part).rotation = UnitQuat::new((1.0 - v * v).sqrt(), c[0], c[1], c[2]);
            }
            InputDim::Trigger { hand } => *s.trigger_mut(hand) = v,
            InputDim::KeyboardOpen => s.keyboard_open = v >= 0.5,
        }
    }
}

/// Resting state shared by every fixed stretch of a replay.
pub const BASE_POSE: Sample = Sample {
    head: Transform { position: Vec3::new(0.0, 1.6, 0.0), rotation: UnitQuat::IDENTITY },
    left: Transform { position: Vec3::new(-0.2, 1.2, -0.3), rotation: UnitQuat::IDENTITY },
    right: Transform { position: Vec3::new(0.2, 1.2, -0.3), rotation: UnitQuat::IDENTITY },
    left_trigger: 0.0,
    right_trigger: 0.0,
    keyboard_open: false,
};

/// Staircase sweep of `dims` (usually one) from `from` to `to` in `steps`
/// evenly spaced values, each held for `dwell` device samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySegment {
    pub dims: Vec<InputDim>,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub dwell: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub segments: Vec<ReplaySegment>,
    /// Fixed samples before, between and after sweeps.
    pub hold_samples: usize,
    pub device_rate: f64,
}

/// Annotation for one stretch of a replay script; `dims` is empty for fixed
/// stretches. `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub dims: Vec<InputDim>,
    pub start: usize,
    pub end: usize,
    pub from: f64,
    pub to: f64,
    #[serde(default = "one")]
    pub dwell: usize,
}

impl SegmentInfo {
    pub fn is_fixed(&self) -> bool {
        self.dims.is_empty()
    }

    /// Input value at script sample `i` inside this segment.
    pub fn value_at(&self, i: usize) -> f64 {
        let dwell = self.dwell.max(1);
        let n = (self.end - self.start) / dwell;
        if n <= 1 {
            return self.from;
        }
        self.from + (self.to - self.from) * ((i - self.start) / dwell) as f64 / (n - 1) as f64
    }

    /// Whether sample `i` lies within `guard` samples of a step change.
    pub fn near_step_edge(&self, i: usize, guard: usize) -> bool {
        let dwell = self.dwell.max(1);
        if dwell == 1 {
            return false;
        }
        let k = (i - self.start) % dwell;
        k < guard || k + guard >= dwell
    }
}

/// The standard isolation battery: every dimension swept once on its own.
pub fn isolation_plan() -> ReplayPlan {
    let segments = InputDim::all()
        .into_iter()
        .map(|d| {
            let (from, to, steps) = match d {
                InputDim::Position { .. } => (-1.0, 1.0, 21),
                InputDim::Rotation { .. } => (-0.3, 0.3, 61),
                InputDim::Trigger { .. } => (0.0, 1.0, 52),
                InputDim::KeyboardOpen => (1.0, 1.0, 3),
            };
            // A step lasts long enough for two server ticks clear of its edges.
            ReplaySegment { dims: vec![d], from, to, steps, dwell: 12 }
        })
        .collect();
    ReplayPlan { segments, hold_samples: 36, device_rate: 72.0 }
}

/// Renders `plan` into a script: hold, sweep, hold, sweep, ..., hold.
pub fn scripted_replay(plan: &ReplayPlan) -> Result<MotionScript, VictimError> {
    if !(plan.device_rate > 0.0) {
        return Err(VictimError::Replay("device_rate must be positive".into()));
    }
    let mut samples = Vec::new();
    let mut segments = Vec::new();
    let hold = |samples: &mut Vec<Sample>, segments: &mut Vec<SegmentInfo>| {
        let start = samples.len();
        samples.extend(std::iter::repeat_n(BASE_POSE, plan.hold_samples));
        segments.push(SegmentInfo { dims: vec![], start, end: samples.len(), from: 0.0, to: 0.0, dwell: 1 });
    };
    hold(&mut samples, &mut segments);
    for (i, seg) in plan.segments.iter().enumerate() {
        if seg.steps == 0 || seg.dwell == 0 {
            return Err(VictimError::Replay(format!("segment {i} has no steps")));
        }
        for d in &seg.dims {
            let (lo, hi) = d.valid_range();
            if !(lo..=hi).contains(&seg.from) || !(lo..=hi).contains(&seg.to) {
                return Err(VictimError::Replay(format!("segment {i}: {} range outside [{lo}, {hi}]", d.name())));
            }
        }
        let start = samples.len();
        let info = SegmentInfo {
            dims: seg.dims.clone(),
            start,
            end: start + seg.steps * seg.dwell,
            from: seg.from,
            to: seg.to,
            dwell: seg.dwell,
        };
        for k in start..info.end {
            let mut s = BASE_POSE;
            let v = info.value_at(k);
            for d in &seg.dims {
                d.apply(&mut s, v);
            }
            samples.push(s);
        }
        segments.push(info);
        hold(&mut samples, &mut segments);
    }
    Ok(MotionScript { device_rate: plan.device_rate, samples, labels: vec![], segments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_swept_coordinate_changes() {
        let plan = ReplayPlan {
            segments: vec![ReplaySegment {
                dims: vec![InputDim::Position { part: BodyPart::Left, axis: 0 }],
                from: -1.0,
                to: 1.0,
                steps: 100,
                dwell: 1,
            }],
            hold_samples: 10,
            device_rate: 72.0,
        };
        let s = scripted_replay(&plan).unwrap();
        assert_eq!(s.samples.len(), 120);
        assert_eq!(s.segments.len(), 3);
        for (i, smp) in s.samples.iter().enumerate() {
            let mut expect = BASE_POSE;
            if (10..110).contains(&i) {
                expect.left.position.x = -1.0 + 2.0 * (i - 10) as f64 / 99.0;
            }
            assert_eq!(*smp, expect);
        }
    }

    #[test]
    fn staircase_holds_each_step() {
        let plan = ReplayPlan {
            segments: vec![ReplaySegment { dims: vec![InputDim::Trigger { hand: Hand::Right }], from: 0.0, to: 1.0, steps: 3, dwell: 4 }],
            hold_samples: 2,
            device_rate: 72.0,
        };
        let s = scripted_replay(&plan).unwrap();
        let seg = &s.segments[1];
        assert_eq!((seg.start, seg.end), (2, 14));
        let values: Vec<f64> = s.samples[2..14].iter().map(|x| x.right_trigger).collect();
        assert_eq!(values, [0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0]);
        let edges: Vec<bool> = (2..14).map(|i| seg.near_step_edge(i, 1)).collect();
        assert_eq!(edges, [true, false, false, true].repeat(3));
    }

    #[test]
    fn isolation_plan_covers_all_dimensions() {
        let s = scripted_replay(&isolation_plan()).unwrap();
        let swept: Vec<InputDim> = s.segments.iter().flat_map(|g| g.dims.clone()).collect();
        assert_eq!(swept, InputDim::all());
        assert_eq!(swept.len(), 21);
    }

    #[test]
    fn rejects_out_of_range_sweep() {
        let plan = ReplayPlan {
            segments: vec![ReplaySegment { dims: vec![InputDim::Trigger { hand: Hand::Left }], from: 0.0, to: 2.0, steps: 5, dwell: 1 }],
            hold_samples: 1,
            device_rate: 72.0,
        };
        assert!(scripted_replay(&plan).is_err());
    }
}
