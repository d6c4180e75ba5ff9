//! Datagram framing and the generic field parser.
//!
//! Layout (little-endian), see `docs/wire-format.md`:
//!
//! ```text
//! magic u16 = 0x4B56 | version u8 = 1 | channel u8 | sequence u32 | count u8
//! count × { field-id u8 | type-tag u8 | payload }
//! ```

use serde::{Deserialize, Serialize};

use super::registry::{Registry, SubValue};
use super::WireError;

pub const MAGIC: u16 = 0x4B56;
pub const VERSION: u8 = 1;
pub const MAX_PACKET_LEN: usize = 1200;
pub const MAX_BLOB_LEN: usize = 512;
const HEADER_LEN: usize = 9;

const TAG_U8: u8 = 0x01;
const TAG_I32: u8 = 0x02;
const TAG_F32: u8 = 0x03;
const TAG_BOOL: u8 = 0x04;
const TAG_CUSTOM: u8 = 0x05;
const TAG_USER: u8 = 0x06;
const TAG_TICK: u8 = 0x07;
const TAG_EVENT: u8 = 0x08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketHeader {
    pub channel: u8,
    pub sequence: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomBlob {
    pub type_code: u8,
    pub bytes: Vec<u8>,
}

/// A custom object expanded through the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomObject {
    pub type_code: u8,
    pub subfields: Vec<SubValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldValue {
    U8(u8),
    I32(i32),
    F32(f32),
    Boolean(bool),
    /// Opaque custom object (no registry, or unknown type code).
    Blob(CustomBlob),
    Object(CustomObject),
    UserId(u32),
    TickStamp(u32),
    EventCode(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub id: u8,
    pub value: FieldValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub header: PacketHeader,
    pub fields: Vec<Field>,
}

impl Packet {
    pub fn new(header: PacketHeader) -> Self {
        Self { header, fields: Vec::new() }
    }

    pub fn push(&mut self, id: u8, value: FieldValue) {
        self.fields.push(Field { id, value });
    }

    pub fn field(&self, id: u8) -> Option<&FieldValue> {
        self.fields.iter().find(|f| f.id == id).map(|f| &f.value)
    }

    /// The built-in user identifier, if present.
    pub fn user_id(&self) -> Option<u32> {
        self.fields.iter().find_map(|f| match f.value {
            FieldValue::UserId(u) => Some(u),
            _ => None,
        })
    }

    pub fn tick(&self) -> Option<u32> {
        self.fields.iter().find_map(|f| match f.value {
            FieldValue::TickStamp(t) => Some(t),
            _ => None,
        })
    }

    /// Serializes; objects are re-packed through `registry`.
    pub fn to_bytes_with(&self, registry: Option<&Registry>) -> Result<Vec<u8>, WireError> {
        if self.fields.len() > u8::MAX as usize {
            return Err(WireError::TooLarge(self.fields.len()));
        }
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(VERSION);
        out.push(self.header.channel);
        out.extend_from_slice(&self.header.sequence.to_le_bytes());
        out.push(self.fields.len() as u8);
        for f in &self.fields {
            out.push(f.id);
            match &f.value {
                FieldValue::U8(v) => out.extend([TAG_U8, *v]),
                FieldValue::I32(v) => {
                    out.push(TAG_I32);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                FieldValue::F32(v) => {
                    out.push(TAG_F32);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                FieldValue::Boolean(b) => out.extend([TAG_BOOL, *b as u8]),
                FieldValue::Blob(blob) => write_blob(&mut out, blob.type_code, &blob.bytes)?,
                FieldValue::Object(obj) => {
                    let spec = registry
                        .and_then(|r| r.get(obj.type_code))
                        .ok_or(WireError::UnknownCustomType(obj.type_code))?;
                    let bytes = spec.encode(&obj.subfields)?;
                    write_blob(&mut out, obj.type_code, &bytes)?;
                }
                FieldValue::UserId(v) => {
                    out.push(TAG_USER);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                FieldValue::TickStamp(v) => {
                    out.push(TAG_TICK);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                FieldValue::EventCode(v) => out.extend([TAG_EVENT, *v]),
            }
        }
        if out.len() > MAX_PACKET_LEN {
            return Err(WireError::TooLarge(out.len()));
        }
        Ok(out)
    }

    /// Serializes a packet that holds no expanded objects.
    pub fn to_bytes(&self) -> Result<Vec<u8>, WireError> {
        self.to_bytes_with(None)
    }
}

fn write_blob(out: &mut Vec<u8>, type_code: u8, bytes: &[u8]) -> Result<(), WireError> {
    if bytes.len() > MAX_BLOB_LEN {
        return Err(WireError::BlobTooLong(bytes.len()));
    }
    out.extend([TAG_CUSTOM, type_code]);
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            WireError::Malformed(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

/// Parses a datagram. With a registry, known custom objects are expanded;
/// unknown type codes (or no registry) stay opaque [`FieldValue::Blob`]s.
pub fn parse_packet(raw: &[u8], registry: Option<&Registry>) -> Result<Packet, WireError> {
    if raw.len() > MAX_PACKET_LEN {
        return Err(WireError::Malformed(format!("datagram of {} bytes exceeds limit", raw.len())));
    }
    let mut c = Cursor { buf: raw, pos: 0 };
    if raw.len() < HEADER_LEN {
        return Err(WireError::Malformed("shorter than header".into()));
    }
    let magic = u16::from_le_bytes(c.array()?);
    if magic != MAGIC {
        return Err(WireError::Malformed(format!("bad magic {magic:#06x}")));
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(WireError::Malformed(format!("unsupported version {version}")));
    }
    let channel = c.u8()?;
    let sequence = u32::from_le_bytes(c.array()?);
    let count = c.u8()?;
    let mut packet = Packet::new(PacketHeader { channel, sequence });
    for _ in 0..count {
        let id = c.u8()?;
        let tag = c.u8()?;
        let value = match tag {
            TAG_U8 => FieldValue::U8(c.u8()?),
            TAG_I32 => FieldValue::I32(i32::from_le_bytes(c.array()?)),
            TAG_F32 => FieldValue::F32(f32::from_le_bytes(c.array()?)),
            TAG_BOOL => match c.u8()? {
                0 => FieldValue::Boolean(false),
                1 => FieldValue::Boolean(true),
                b => return Err(WireError::Malformed(format!("boolean byte {b}"))),
            },
            TAG_CUSTOM => {
                let type_code = c.u8()?;
                let len = u16::from_le_bytes(c.array()?) as usize;
                if len > MAX_BLOB_LEN {
                    return Err(WireError::Malformed(format!("blob length {len}")));
                }
                let bytes = c.take(len)?;
                match registry.and_then(|r| r.get(type_code)) {
                    Some(spec) => FieldValue::Object(CustomObject { type_code, subfields: spec.decode(bytes)? }),
                    None => FieldValue::Blob(CustomBlob { type_code, bytes: bytes.to_vec() }),
                }
            }
            TAG_USER => FieldValue::UserId(u32::from_le_bytes(c.array()?)),
            TAG_TICK => FieldValue::TickStamp(u32::from_le_bytes(c.array()?)),
            TAG_EVENT => FieldValue::EventCode(c.u8()?),
            t => return Err(WireError::Malformed(format!("unknown type tag {t:#04x} for field {id:#04x}"))),
        };
        packet.push(id, value);
    }
    if c.pos != raw.len() {
        return Err(WireError::Malformed(format!("{} trailing bytes", raw.len() - c.pos)));
    }
    Ok(packet)
}
