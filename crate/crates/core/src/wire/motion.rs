//! Per-tick motion updates and their encoding into packets.

use serde::{Deserialize, Serialize};

use super::codec::{encode_quat_smallest_three, encode_trigger, QuantizedTransformCodec, RotationScheme};
use super::packet::{CustomObject, FieldValue, Packet, PacketHeader};
use super::registry::{CustomObjectSpec, Registry, SubFieldKind, SubFieldSpec, SubValue};
use super::WireError;
use crate::geometry::Transform;

/// Event code announcing that the user's keyboard is open.
pub const KEYBOARD_OPEN_EVENT: u8 = 0x2A;
/// Channel byte used by motion updates.
pub const MOTION_CHANNEL: u8 = 1;

/// Body part carrying a tracked pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Head,
    Left,
    Right,
}

impl BodyPart {
    pub const ALL: [BodyPart; 3] = [BodyPart::Head, BodyPart::Left, BodyPart::Right];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn part(self) -> BodyPart {
        match self {
            Hand::Left => BodyPart::Left,
            Hand::Right => BodyPart::Right,
        }
    }
}

/// One user's state for one server tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionUpdate {
    pub user_id: u32,
    pub tick: u32,
    pub head: Transform,
    pub left: Transform,
    pub right: Transform,
    pub left_trigger: f64,
    pub right_trigger: f64,
    pub keyboard_open: bool,
}

impl MotionUpdate {
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

/// Field-id assignment used by the simulated application. The attack never
/// reads this; calibration has to rediscover it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionLayout {
    pub pose_type_code: u8,
    pub user_id: u8,
    pub tick: u8,
    pub head: u8,
    pub left: u8,
    pub right: u8,
    pub left_trigger: u8,
    pub right_trigger: u8,
    pub event: u8,
    pub speaking: u8,
    pub avatar_scale: u8,
}

impl Default for MotionLayout {
    fn default() -> Self {
        Self {
            pose_type_code: 0x10,
            user_id: 0x01,
            tick: 0x02,
            head: 0x21,
            left: 0x17,
            right: 0x2C,
            left_trigger: 0x41,
            right_trigger: 0x3B,
            event: 0x60,
            speaking: 0x50,
            avatar_scale: 0x30,
        }
    }
}

impl MotionLayout {
    pub fn pose_field(&self, part: BodyPart) -> u8 {
        match part {
            BodyPart::Head => self.head,
            BodyPart::Left => self.left,
            BodyPart::Right => self.right,
        }
    }

    pub fn trigger_field(&self, hand: Hand) -> u8 {
        match hand {
            Hand::Left => self.left_trigger,
            Hand::Right => self.right_trigger,
        }
    }
}

/// Index of the rotation sub-field inside the pose object.
pub const POSE_ROTATION_SUBFIELD: usize = 3;

/// Custom-object spec for a pose under `codec`: three position sub-fields
/// then one rotation sub-field.
pub fn pose_spec(type_code: u8, codec: &QuantizedTransformCodec) -> CustomObjectSpec {
    let mut layout: Vec<SubFieldSpec> = ["px", "py", "pz"]
        .iter()
        .enumerate()
        .map(|(axis, name)| SubFieldSpec {
            name: name.to_string(),
            kind: match codec.position_quantizer(axis) {
                Some(q) => SubFieldKind::Quant { bits: q.bits, min: q.min, max: q.max },
                None => SubFieldKind::F64,
            },
        })
        .collect();
    layout.push(SubFieldSpec {
        name: "rot".into(),
        kind: match codec.rotation {
            RotationScheme::SmallestThree { bits } => SubFieldKind::Quat3 { bits },
            RotationScheme::Lossless => SubFieldKind::QuatF64,
        },
    });
    CustomObjectSpec { type_code, name: "pose".into(), layout }
}

/// Registry the simulated application ships for `codec`.
pub fn default_registry(codec: &QuantizedTransformCodec, layout: &MotionLayout) -> Registry {
    Registry::new([pose_spec(layout.pose_type_code, codec)]).expect("single well-formed spec")
}

fn encode_pose(t: &Transform, codec: &QuantizedTransformCodec, type_code: u8) -> Result<CustomObject, WireError> {
    codec.check_bounds(t.position)?;
    let mut subfields = Vec::with_capacity(4);
    for axis in 0..3 {
        let v = t.position.axis(axis);
        subfields.push(match codec.position_quantizer(axis) {
            Some(q) => {
                let code = q.encode(v)?;
                SubValue::Quant { code, value: q.decode(code) }
            }
            None => SubValue::F64(v),
        });
    }
    subfields.push(match codec.rotation {
        RotationScheme::SmallestThree { bits } => {
            let packed = encode_quat_smallest_three(t.rotation, bits);
            SubValue::Quat3 { packed, value: super::codec::decode_quat_smallest_three(packed) }
        }
        RotationScheme::Lossless => SubValue::QuatF64(t.rotation.components()),
    });
    Ok(CustomObject { type_code, subfields })
}

/// Builds the motion packet for `u`: poses as custom objects, triggers as
/// quantized bytes, user id and tick as built-in fields, and the keyboard
/// event while the keyboard is open.
pub fn encode_motion_update(
    u: &MotionUpdate,
    registry: &Registry,
    codec: &QuantizedTransformCodec,
    layout: &MotionLayout,
) -> Result<Packet, WireError> {
    let expected = pose_spec(layout.pose_type_code, codec);
    match registry.get(layout.pose_type_code) {
        Some(spec) if spec.layout == expected.layout => {}
        _ => {
            return Err(WireError::LayoutMismatch(format!(
                "registry has no pose type {:#04x} matching the codec",
                layout.pose_type_code
            )))
        }
    }
    let mut p = Packet::new(PacketHeader { channel: MOTION_CHANNEL, sequence: u.tick });
    p.push(layout.user_id, FieldValue::UserId(u.user_id));
    p.push(layout.tick, FieldValue::TickStamp(u.tick));
    p.push(layout.avatar_scale, FieldValue::F32(1.0));
    p.push(layout.right, FieldValue::Object(encode_pose(&u.right, codec, layout.pose_type_code)?));
    p.push(layout.head, FieldValue::Object(encode_pose(&u.head, codec, layout.pose_type_code)?));
    p.push(layout.left, FieldValue::Object(encode_pose(&u.left, codec, layout.pose_type_code)?));
    p.push(layout.left_trigger, FieldValue::U8(encode_trigger(u.left_trigger)));
    p.push(layout.right_trigger, FieldValue::U8(encode_trigger(u.right_trigger)));
    p.push(layout.speaking, FieldValue::Boolean(false));
    if u.keyboard_open {
        p.push(layout.event, FieldValue::EventCode(KEYBOARD_OPEN_EVENT));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{UnitQuat, Vec3};
    use crate::wire::codec::decode_trigger;
    use crate::wire::packet::parse_packet;

    fn update() -> MotionUpdate {
        MotionUpdate {
            user_id: 9,
            tick: 3,
            head: Transform::IDENTITY,
            left: Transform::IDENTITY,
            right: Transform::IDENTITY,
            left_trigger: 0.0,
            right_trigger: 1.0,
            keyboard_open: false,
        }
    }

    fn pose_of(p: &Packet, id: u8) -> Transform {
        match p.field(id) {
            Some(FieldValue::Object(o)) => {
                let c: Vec<f64> = o.subfields[..3].iter().map(|s| s.components()[0]).collect();
                let r = o.subfields[3].components();
                Transform::new(Vec3::new(c[0], c[1], c[2]), UnitQuat::new(r[0], r[1], r[2], r[3]))
            }
            other => panic!("expected object, got {other:?}"),
        }
    }

    #[test]
    fn identity_roundtrip_within_codec_bounds() {
        let codec = QuantizedTransformCodec::default();
        let layout = MotionLayout::default();
        let reg = default_registry(&codec, &layout);
        let pkt = encode_motion_update(&update(), &reg, &codec, &layout).unwrap();
        let bytes = pkt.to_bytes_with(Some(&reg)).unwrap();
        let back = parse_packet(&bytes, Some(&reg)).unwrap();
        assert_eq!(back, pkt);
        for part in BodyPart::ALL {
            let t = pose_of(&back, layout.pose_field(part));
            for axis in 0..3 {
                assert!(t.position.axis(axis).abs() <= codec.position_error_bound(axis));
            }
            assert!(t.rotation.angle_to(UnitQuat::IDENTITY).to_degrees() < 0.5);
        }
        match back.field(layout.right_trigger) {
            Some(FieldValue::U8(b)) => assert_eq!(decode_trigger(*b), 1.0),
            other => panic!("{other:?}"),
        }
        assert!(back.field(layout.event).is_none());
    }

    #[test]
    fn out_of_bounds_position() {
        let codec = QuantizedTransformCodec::default();
        let layout = MotionLayout::default();
        let reg = default_registry(&codec, &layout);
        let mut u = update();
        u.left.position = Vec3::new(8.1, 0.0, 0.0);
        assert!(matches!(encode_motion_update(&u, &reg, &codec, &layout), Err(WireError::OutOfBounds { .. })));
    }

    #[test]
    fn partial_parse_surfaces_three_blobs() {
        let codec = QuantizedTransformCodec::default();
        let layout = MotionLayout::default();
        let reg = default_registry(&codec, &layout);
        let mut u = update();
        u.keyboard_open = true;
        let pkt = encode_motion_update(&u, &reg, &codec, &layout).unwrap();
        let bytes = pkt.to_bytes_with(Some(&reg)).unwrap();
        let partial = parse_packet(&bytes, None).unwrap();
        let blobs = partial.fields.iter().filter(|f| matches!(f.value, FieldValue::Blob(_))).count();
        assert_eq!(blobs, 3);
        assert_eq!(partial.user_id(), Some(9));
        assert_eq!(partial.tick(), Some(3));
        assert_eq!(partial.field(layout.event), Some(&FieldValue::EventCode(KEYBOARD_OPEN_EVENT)));
    }

    #[test]
    fn registry_must_match_codec() {
        let codec = QuantizedTransformCodec::default();
        let layout = MotionLayout::default();
        let reg = default_registry(&QuantizedTransformCodec::lossless(), &layout);
        assert!(matches!(encode_motion_update(&update(), &reg, &codec, &layout), Err(WireError::LayoutMismatch(_))));
    }
}
