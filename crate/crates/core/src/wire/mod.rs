//! The motion-synchronization wire format: typed fields, custom-object
//! codecs with quantization, packet framing and parsing.

pub mod bits;
pub mod codec;
pub mod motion;
pub mod packet;
pub mod registry;

use thiserror::Error;

pub use codec::{
    decode_quat_smallest_three, encode_quat_smallest_three, PackedQuat, QuantizedTransformCodec, RotationScheme,
    ScalarQuantizer,
};
pub use motion::{
    default_registry, encode_motion_update, pose_spec, BodyPart, Hand, MotionLayout, MotionUpdate,
    KEYBOARD_OPEN_EVENT, MOTION_CHANNEL, POSE_ROTATION_SUBFIELD,
};
pub use packet::{parse_packet, CustomBlob, CustomObject, Field, FieldValue, Packet, PacketHeader};
pub use registry::{CustomObjectSpec, Registry, SubFieldKind, SubFieldSpec, SubValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("value {value} outside codec bounds [{min}, {max}]")]
    OutOfBounds { value: f64, min: f64, max: f64 },
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("no registry entry for custom type {0:#04x}")]
    UnknownCustomType(u8),
    #[error("packet too large ({0})")]
    TooLarge(usize),
    #[error("custom blob of {0} bytes exceeds 512")]
    BlobTooLong(usize),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("registry: {0}")]
    Registry(String),
}
