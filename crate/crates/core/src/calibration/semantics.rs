//! Field-semantics discovery: which packet field follows which input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::attack::filter_motion_source;
use crate::geometry::{Transform, UnitQuat, Vec3};
use crate::trace::TraceFile;
use crate::victim::{InputDim, MotionScript, SegmentInfo};
use crate::wire::{
    parse_packet, BodyPart, FieldValue, Hand, MotionLayout, Packet, Registry, SubValue, POSE_ROTATION_SUBFIELD,
};

/// Where a scalar lives in a packet: the field, the sub-field inside a
/// custom object (if any) and the component of that sub-field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignalLoc {
    pub field: u8,
    pub subfield: Option<u8>,
    pub component: u8,
}

/// `input = scale * field_value + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub scale: f64,
    pub bias: f64,
}

impl Conversion {
    pub const IDENTITY: Conversion = Conversion { scale: 1.0, bias: 0.0 };

    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMapping {
    pub dim: InputDim,
    pub loc: SignalLoc,
    pub conversion: Conversion,
    /// RMS of the affine fit, in input units.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMapping {
    pub field: u8,
    pub code: u8,
}

/// Recovered meaning of the motion packet's fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSemanticsMap {
    pub user_field: u8,
    pub tick_field: u8,
    pub keyboard_event: EventMapping,
    pub channels: Vec<ChannelMapping>,
}

fn signals(p: &Packet) -> BTreeMap<SignalLoc, f64> {
    let mut m = BTreeMap::new();
    for f in &p.fields {
        let scalar = |v: f64| (SignalLoc { field: f.id, subfield: None, component: 0 }, v);
        match &f.value {
            FieldValue::U8(v) => m.extend([scalar(*v as f64)]),
            FieldValue::I32(v) => m.extend([scalar(*v as f64)]),
            FieldValue::F32(v) => m.extend([scalar(*v as f64)]),
            FieldValue::Boolean(b) => m.extend([scalar(*b as u8 as f64)]),
            FieldValue::Object(o) => {
                for (si, sv) in o.subfields.iter().enumerate() {
                    for (ci, c) in sv.components().into_iter().enumerate() {
                        m.insert(SignalLoc { field: f.id, subfield: Some(si as u8), component: ci as u8 }, c);
                    }
                }
            }
            FieldValue::Blob(_) | FieldValue::UserId(_) | FieldValue::TickStamp(_) | FieldValue::EventCode(_) => {}
        }
    }
    m
}

fn events(p: &Packet) -> Vec<(u8, u8)> {
    p.fields
        .iter()
        .filter_map(|f| match f.value {
            FieldValue::EventCode(c) => Some((f.id, c)),
            _ => None,
        })
        .collect()
}

struct Observed {
    /// Index into the script's segment list.
    segment: usize,
    input: f64,
    signals: BTreeMap<SignalLoc, f64>,
    events: Vec<(u8, u8)>,
}

/// Samples this close to a segment boundary are ignored, absorbing receive
/// jitter and the server's sample-and-hold.
const GUARD_SAMPLES: usize = 2;

fn observe(
    script: &MotionScript,
    trace: &TraceFile,
    registry: &Registry,
) -> Result<(Vec<Observed>, Option<u8>, Option<u8>), CalibrationError> {
    let motion = filter_motion_source(trace)?;
    let mut out = Vec::new();
    let (mut user_field, mut tick_field) = (None, None);
    for r in &motion.records {
        let Ok(p) = parse_packet(&r.raw, Some(registry)) else { continue };
        for f in &p.fields {
            match f.value {
                FieldValue::UserId(_) => user_field = Some(f.id),
                FieldValue::TickStamp(_) => tick_field = Some(f.id),
                _ => {}
            }
        }
        let t = r.recv_us.saturating_sub(trace.start_us) as f64 / 1e6;
        let idx = (t * script.device_rate + 1e-6).floor() as usize;
        let Some(segment) = script
            .segments
            .iter()
            .position(|s| idx >= s.start + GUARD_SAMPLES && idx + GUARD_SAMPLES < s.end)
        else {
            continue;
        };
        if script.segments[segment].near_step_edge(idx, GUARD_SAMPLES) {
            continue;
        }
        out.push(Observed {
            segment,
            input: script.segments[segment].value_at(idx),
            signals: signals(&p),
            events: events(&p),
        });
    }
    Ok((out, user_field, tick_field))
}

fn all_equal<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    match it.next() {
        None => true,
        Some(first) => it.all(|v| v == first),
    }
}

fn least_squares(pairs: &[(f64, f64)]) -> (Conversion, f64) {
    let n = pairs.len() as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |a, (x, y)| (a.0 + x, a.1 + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let scale = sxy / sxx;
    let conv = Conversion { scale, bias: my - scale * mx };
    let rms = (pairs.iter().map(|(x, y)| (conv.apply(*x) - y).powi(2)).sum::<f64>() / n).sqrt();
    (conv, rms)
}

/// Correlates isolation scripts with the traces they produced. Each script
/// must carry segment annotations; pairs are matched by position.
///
/// A signal is a candidate for dimension `D` when it changes within (or on
/// entry to) every segment sweeping `D`, and is constant within every other
/// segment.
pub fn correlate_fields(
    runs: &[(MotionScript, TraceFile)],
    registry: &Registry,
) -> Result<FieldSemanticsMap, CalibrationError> {
    let mut user_field = None;
    let mut tick_field = None;
    // (run, segment) -> observations
    let mut per_segment: Vec<(usize, usize, Vec<Observed>)> = Vec::new();
    for (ri, (script, trace)) in runs.iter().enumerate() {
        let (obs, u, t) = observe(script, trace, registry)?;
        user_field = user_field.or(u);
        tick_field = tick_field.or(t);
        for si in 0..script.segments.len() {
            per_segment.push((ri, si, vec![]));
        }
        let base = per_segment.len() - script.segments.len();
        for o in obs {
            per_segment[base + o.segment].2.push(o);
        }
    }
    let seg_info = |ri: usize, si: usize| -> &SegmentInfo { &runs[ri].0.segments[si] };
    let all_locs: Vec<SignalLoc> = {
        let mut v: Vec<SignalLoc> =
            per_segment.iter().flat_map(|(_, _, obs)| obs.iter().flat_map(|o| o.signals.keys().copied())).collect();
        v.sort();
        v.dedup();
        v
    };

    let values = |idx: usize, loc: &SignalLoc| -> Vec<f64> {
        per_segment[idx].2.iter().filter_map(|o| o.signals.get(loc).copied()).collect()
    };
    // Value a signal held in the fixed stretch just before segment `idx`.
    let baseline = |idx: usize, loc: &SignalLoc| -> Option<f64> {
        let (ri, si, _) = per_segment[idx];
        if si == 0 || !seg_info(ri, si - 1).is_fixed() {
            return None;
        }
        values(idx - 1, loc).first().copied()
    };

    let mut channels = Vec::new();
    let mut keyboard_event = None;
    let dims: Vec<InputDim> = {
        let mut d: Vec<InputDim> = per_segment.iter().flat_map(|(r, s, _)| seg_info(*r, *s).dims.clone()).collect();
        d.sort();
        d.dedup();
        d
    };
    for dim in dims {
        let (mine, others): (Vec<usize>, Vec<usize>) =
            (0..per_segment.len()).partition(|&i| seg_info(per_segment[i].0, per_segment[i].1).dims.contains(&dim));
        if mine.iter().any(|&i| per_segment[i].2.is_empty()) {
            return Err(CalibrationError::NoCandidate(format!("{}: no packets observed in its sweep", dim.name())));
        }

        if dim == InputDim::KeyboardOpen {
            let mut cands: Vec<(u8, u8)> = per_segment[mine[0]].2[0].events.clone();
            cands.retain(|ev| {
                mine.iter().all(|&i| per_segment[i].2.iter().all(|o| o.events.contains(ev)))
                    && others.iter().all(|&i| per_segment[i].2.iter().all(|o| !o.events.contains(ev)))
            });
            keyboard_event = Some(match cands.as_slice() {
                [(field, code)] => EventMapping { field: *field, code: *code },
                [] => return Err(CalibrationError::NoCandidate(dim.name())),
                many => return Err(CalibrationError::AmbiguousField(format!("{}: {} events", dim.name(), many.len()))),
            });
            continue;
        }

        let cands: Vec<SignalLoc> = all_locs
            .iter()
            .copied()
            .filter(|loc| {
                let varies = mine.iter().all(|&i| {
                    let mut v = values(i, loc);
                    v.extend(baseline(i, loc));
                    !all_equal(v.iter())
                });
                varies && others.iter().all(|&i| all_equal(values(i, loc).iter()))
            })
            .collect();
        let loc = match cands.as_slice() {
            [one] => *one,
            [] => return Err(CalibrationError::NoCandidate(dim.name())),
            many => {
                return Err(CalibrationError::AmbiguousField(format!(
                    "{}: {} candidate signals ({:?})",
                    dim.name(),
                    many.len(),
                    many
                )))
            }
        };
        let pairs: Vec<(f64, f64)> = mine
            .iter()
            .flat_map(|&i| per_segment[i].2.iter().filter_map(|o| o.signals.get(&loc).map(|v| (*v, o.input))))
            .collect();
        let (conversion, residual) = least_squares(&pairs);
        if !(conversion.scale.is_finite() && conversion.scale != 0.0) {
            return Err(CalibrationError::NoCandidate(format!("{}: degenerate conversion", dim.name())));
        }
        channels.push(ChannelMapping { dim, loc, conversion, residual });
    }

    let mut used: Vec<SignalLoc> = channels.iter().map(|c| c.loc).collect();
    used.sort();
    if used.windows(2).any(|w| w[0] == w[1]) {
        return Err(CalibrationError::AmbiguousField("two inputs mapped to the same signal".into()));
    }
    Ok(FieldSemanticsMap {
        user_field: user_field.ok_or_else(|| CalibrationError::NoCandidate("user id field".into()))?,
        tick_field: tick_field.ok_or_else(|| CalibrationError::NoCandidate("tick field".into()))?,
        keyboard_event: keyboard_event.ok_or_else(|| CalibrationError::NoCandidate("keyboard_open".into()))?,
        channels,
    })
}

/// Extracted, converted motion state of one packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedMotion {
    pub user_id: u32,
    pub tick: u32,
    pub sequence: u32,
    pub head: Transform,
    pub left: Transform,
    pub right: Transform,
    pub left_trigger: f64,
    pub right_trigger: f64,
    pub keyboard_open: bool,
}

impl DecodedMotion {
    pub fn pose(&self, part: BodyPart) -> &Transform {
        match part {
            BodyPart::Head => &self.head,
            BodyPart::Left => &self.left,
            BodyPart::Right => &self.right,
        }
    }

    pub fn trigger(&self, hand: Hand) -> f64 {
        match hand {
            Hand::Left => self.left_trigger,
            Hand::Right => self.right_trigger,
        }
    }
}

impl FieldSemanticsMap {
    /// The mapping the simulated application actually uses, for comparison
    /// and for attacks with injected ground truth.
    pub fn ground_truth(layout: &MotionLayout) -> Self {
        let channels = InputDim::all()
            .into_iter()
            .filter(|d| *d != InputDim::KeyboardOpen)
            .map(|dim| {
                let (loc, conversion) = match dim {
                    InputDim::Position { part, axis } => (
                        SignalLoc { field: layout.pose_field(part), subfield: Some(axis), component: 0 },
                        Conversion::IDENTITY,
                    ),
                    InputDim::Rotation { part, component } => (
                        SignalLoc {
                            field: layout.pose_field(part),
                            subfield: Some(POSE_ROTATION_SUBFIELD as u8),
                            component: component + 1,
                        },
                        Conversion::IDENTITY,
                    ),
                    InputDim::Trigger { hand } => (
                        SignalLoc { field: layout.trigger_field(hand), subfield: None, component: 0 },
                        Conversion { scale: 1.0 / 255.0, bias: 0.0 },
                    ),
                    InputDim::KeyboardOpen => unreachable!(),
                };
                ChannelMapping { dim, loc, conversion, residual: 0.0 }
            })
            .collect();
        FieldSemanticsMap {
            user_field: layout.user_id,
            tick_field: layout.tick,
            keyboard_event: EventMapping { field: layout.event, code: crate::wire::KEYBOARD_OPEN_EVENT },
            channels,
        }
    }

    /// True when both maps send every input to the same place.
    pub fn same_locations(&self, other: &Self) -> bool {
        let locs = |m: &Self| {
            let mut v: Vec<(InputDim, SignalLoc)> = m.channels.iter().map(|c| (c.dim, c.loc)).collect();
            v.sort();
            v
        };
        self.user_field == other.user_field
            && self.tick_field == other.tick_field
            && self.keyboard_event == other.keyboard_event
            && locs(self) == locs(other)
    }

    fn channel(&self, dim: InputDim) -> Result<&ChannelMapping, CalibrationError> {
        self.channels.iter().find(|c| c.dim == dim).ok_or_else(|| CalibrationError::NoCandidate(dim.name()))
    }

    /// Field carrying `hand`'s trigger.
    pub fn trigger_location(&self, hand: Hand) -> Result<SignalLoc, CalibrationError> {
        Ok(self.channel(InputDim::Trigger { hand })?.loc)
    }

    /// Field holding `part`'s pose object.
    pub fn pose_field(&self, part: BodyPart) -> Result<u8, CalibrationError> {
        Ok(self.channel(InputDim::Position { part, axis: 0 })?.loc.field)
    }

    fn read(&self, p: &Packet, dim: InputDim) -> Option<f64> {
        let c = self.channel(dim).ok()?;
        let f = p.field(c.loc.field)?;
        let raw = match (f, c.loc.subfield) {
            (FieldValue::Object(o), Some(si)) => *o.subfields.get(si as usize)?.components().get(c.loc.component as usize)?,
            (FieldValue::U8(v), None) => *v as f64,
            (FieldValue::I32(v), None) => *v as f64,
            (FieldValue::F32(v), None) => *v as f64,
            _ => return None,
        };
        Some(c.conversion.apply(raw))
    }

    fn read_pose(&self, p: &Packet, part: BodyPart) -> Option<Transform> {
        let pos: Vec<f64> =
            (0..3).map(|axis| self.read(p, InputDim::Position { part, axis })).collect::<Option<_>>()?;
        let v: Vec<f64> =
            (0..3).map(|component| self.read(p, InputDim::Rotation { part, component })).collect::<Option<_>>()?;
        // The scalar part is not an independent input; take it from the
        // same sub-field when it is a full quaternion, else from the unit
        // constraint.
        let loc = self.channel(InputDim::Rotation { part, component: 0 }).ok()?.loc;
        let w = match (p.field(loc.field), loc.subfield) {
            (Some(FieldValue::Object(o)), Some(si)) => match o.subfields.get(si as usize)? {
                SubValue::Quat3 { .. } | SubValue::QuatF64(_) => o.subfields[si as usize].components()[0],
                _ => (1.0 - v.iter().map(|c| c * c).sum::<f64>()).max(0.0).sqrt(),
            },
            _ => (1.0 - v.iter().map(|c| c * c).sum::<f64>()).max(0.0).sqrt(),
        };
        Some(Transform::new(Vec3::new(pos[0], pos[1], pos[2]), UnitQuat::new(w, v[0], v[1], v[2])))
    }

    /// Applies the map to a parsed motion packet.
    pub fn decode(&self, p: &Packet) -> Option<DecodedMotion> {
        let user_id = match p.field(self.user_field)? {
            FieldValue::UserId(u) => *u,
            _ => return None,
        };
        let tick = match p.field(self.tick_field) {
            Some(FieldValue::TickStamp(t)) => *t,
            _ => p.header.sequence,
        };
        Some(DecodedMotion {
            user_id,
            tick,
            sequence: p.header.sequence,
            head: self.read_pose(p, BodyPart::Head)?,
            left: self.read_pose(p, BodyPart::Left)?,
            right: self.read_pose(p, BodyPart::Right)?,
            left_trigger: self.read(p, InputDim::Trigger { hand: Hand::Left })?,
            right_trigger: self.read(p, InputDim::Trigger { hand: Hand::Right })?,
            keyboard_open: p.field(self.keyboard_event.field) == Some(&FieldValue::EventCode(self.keyboard_event.code)),
        })
    }
}
