//! Custom-object registry: which type codes exist and how their blobs are
//! laid out bit by bit.
//!
//! Text format, one block per type:
//!
//! ```text
//! # comment
//! type 0x10 pose
//!   px  quant 16 -8 8
//!   rot quat3 9
//! end
//! ```
//!
//! Sub-field kinds: `uint <bits>`, `quant <bits> <min> <max>`, `f64`,
//! `quat3 <bits>` (smallest-three) and `quatf64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bits::{BitReader, BitWriter};
use super::codec::{decode_quat_smallest_three, PackedQuat, ScalarQuantizer};
use super::WireError;
use crate::geometry::UnitQuat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubFieldKind {
    Uint { bits: u32 },
    Quant { bits: u32, min: f64, max: f64 },
    F64,
    Quat3 { bits: u32 },
    QuatF64,
}

impl SubFieldKind {
    pub fn bit_width(&self) -> u32 {
        match *self {
            SubFieldKind::Uint { bits } | SubFieldKind::Quant { bits, .. } => bits,
            SubFieldKind::F64 => 64,
            SubFieldKind::Quat3 { bits } => PackedQuat::total_bits(bits),
            SubFieldKind::QuatF64 => 256,
        }
    }

    /// Number of scalar components a decoded value exposes.
    pub fn arity(&self) -> usize {
        match self {
            SubFieldKind::Quat3 { .. } | SubFieldKind::QuatF64 => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubFieldSpec {
    pub name: String,
    pub kind: SubFieldKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomObjectSpec {
    pub type_code: u8,
    pub name: String,
    pub layout: Vec<SubFieldSpec>,
}

impl CustomObjectSpec {
    pub fn bit_len(&self) -> u32 {
        self.layout.iter().map(|s| s.kind.bit_width()).sum()
    }

    pub fn byte_len(&self) -> usize {
        (self.bit_len() as usize).div_ceil(8)
    }

    /// Expands a blob into typed sub-fields. The blob must have exactly
    /// [`Self::byte_len`] bytes and zero padding.
    pub fn decode(&self, bytes: &[u8]) -> Result<Vec<SubValue>, WireError> {
        if bytes.len() != self.byte_len() {
            return Err(WireError::Malformed(format!(
                "custom type {:#04x} expects {} bytes, got {}",
                self.type_code,
                self.byte_len(),
                bytes.len()
            )));
        }
        let mut r = BitReader::new(bytes);
        let mut out = Vec::with_capacity(self.layout.len());
        for spec in &self.layout {
            let short = || WireError::Malformed("custom blob ended early".into());
            let v = match spec.kind {
                SubFieldKind::Uint { bits } => SubValue::Uint(r.read(bits).ok_or_else(short)?),
                SubFieldKind::Quant { bits, min, max } => {
                    let code = r.read(bits).ok_or_else(short)?;
                    SubValue::Quant { code, value: ScalarQuantizer::new(bits, min, max).decode(code) }
                }
                SubFieldKind::F64 => SubValue::F64(f64::from_bits(r.read(64).ok_or_else(short)?)),
                SubFieldKind::Quat3 { bits } => {
                    let raw = r.read(PackedQuat::total_bits(bits)).ok_or_else(short)?;
                    let packed = PackedQuat { bits, raw };
                    SubValue::Quat3 { packed, value: decode_quat_smallest_three(packed) }
                }
                SubFieldKind::QuatF64 => {
                    let mut c = [0.0; 4];
                    for slot in &mut c {
                        *slot = f64::from_bits(r.read(64).ok_or_else(short)?);
                    }
                    SubValue::QuatF64(c)
                }
            };
            out.push(v);
        }
        if !r.rest_is_zero() {
            return Err(WireError::Malformed("non-zero padding in custom blob".into()));
        }
        Ok(out)
    }

    /// Packs sub-field values back into blob bytes.
    pub fn encode(&self, values: &[SubValue]) -> Result<Vec<u8>, WireError> {
        if values.len() != self.layout.len() {
            return Err(WireError::LayoutMismatch(format!(
                "type {:#04x} has {} sub-fields, got {} values",
                self.type_code,
                self.layout.len(),
                values.len()
            )));
        }
        let mut w = BitWriter::new();
        for (spec, v) in self.layout.iter().zip(values) {
            match (spec.kind, v) {
                (SubFieldKind::Uint { bits }, SubValue::Uint(x)) => w.write(*x, bits),
                (SubFieldKind::Quant { bits, .. }, SubValue::Quant { code, .. }) => w.write(*code, bits),
                (SubFieldKind::F64, SubValue::F64(x)) => w.write(x.to_bits(), 64),
                (SubFieldKind::Quat3 { bits }, SubValue::Quat3 { packed, .. }) if packed.bits == bits => {
                    w.write(packed.raw, PackedQuat::total_bits(bits))
                }
                (SubFieldKind::QuatF64, SubValue::QuatF64(c)) => c.iter().for_each(|x| w.write(x.to_bits(), 64)),
                _ => {
                    return Err(WireError::LayoutMismatch(format!(
                        "sub-field '{}' does not accept {:?}",
                        spec.name, v
                    )))
                }
            }
        }
        Ok(w.finish())
    }
}

/// A decoded sub-field, keeping its raw code so re-serialization is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SubValue {
    Uint(u64),
    Quant { code: u64, value: f64 },
    F64(f64),
    Quat3 { packed: PackedQuat, value: UnitQuat },
    /// Raw `w, x, y, z` as transmitted.
    QuatF64([f64; 4]),
}

impl SubValue {
    /// Scalar view: one value for scalars, `w, x, y, z` for rotations.
    pub fn components(&self) -> Vec<f64> {
        match self {
            SubValue::Uint(v) => vec![*v as f64],
            SubValue::Quant { value, .. } => vec![*value],
            SubValue::F64(v) => vec![*v],
            SubValue::Quat3 { value, .. } => value.components().to_vec(),
            SubValue::QuatF64(c) => c.to_vec(),
        }
    }
}

/// Immutable set of custom-object specs keyed by type code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    types: BTreeMap<u8, CustomObjectSpec>,
}

impl Registry {
    pub fn new(specs: impl IntoIterator<Item = CustomObjectSpec>) -> Result<Self, WireError> {
        let mut types = BTreeMap::new();
        for spec in specs {
            if spec.layout.is_empty() {
                return Err(WireError::Registry(format!("type {:#04x} has no sub-fields", spec.type_code)));
            }
            if spec.byte_len() > super::packet::MAX_BLOB_LEN {
                return Err(WireError::Registry(format!("type {:#04x} exceeds blob limit", spec.type_code)));
            }
            let code = spec.type_code;
            if types.insert(code, spec).is_some() {
                return Err(WireError::Registry(format!("duplicate type code {code:#04x}")));
            }
        }
        Ok(Self { types })
    }

    pub fn get(&self, type_code: u8) -> Option<&CustomObjectSpec> {
        self.types.get(&type_code)
    }

    pub fn specs(&self) -> impl Iterator<Item = &CustomObjectSpec> {
        self.types.values()
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        let err = |line: usize, msg: &str| WireError::Registry(format!("line {}: {msg}", line + 1));
        let mut specs = Vec::new();
        let mut current: Option<CustomObjectSpec> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            match (tok[0], current.as_mut()) {
                ("type", None) => {
                    if tok.len() != 3 {
                        return Err(err(ln, "expected `type <code> <name>`"));
                    }
                    let code = parse_u8(tok[1]).ok_or_else(|| err(ln, "bad type code"))?;
                    current = Some(CustomObjectSpec { type_code: code, name: tok[2].to_string(), layout: vec![] });
                }
                ("type", Some(_)) => return Err(err(ln, "nested `type` block")),
                ("end", Some(_)) => specs.push(current.take().expect("checked")),
                ("end", None) => return Err(err(ln, "`end` without `type`")),
                (_, None) => return Err(err(ln, "sub-field outside a `type` block")),
                (name, Some(spec)) => {
                    let kind = parse_kind(&tok[1..]).map_err(|m| err(ln, &m))?;
                    spec.layout.push(SubFieldSpec { name: name.to_string(), kind });
                }
            }
        }
        if current.is_some() {
            return Err(WireError::Registry("unterminated `type` block".into()));
        }
        Registry::new(specs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# custom-object registry\n");
        for spec in self.types.values() {
            let _ = writeln!(s, "type {:#04x} {}", spec.type_code, spec.name);
            for f in &spec.layout {
                let kind = match f.kind {
                    SubFieldKind::Uint { bits } => format!("uint {bits}"),
                    SubFieldKind::Quant { bits, min, max } => format!("quant {bits} {min:?} {max:?}"),
                    SubFieldKind::F64 => "f64".to_string(),
                    SubFieldKind::Quat3 { bits } => format!("quat3 {bits}"),
                    SubFieldKind::QuatF64 => "quatf64".to_string(),
                };
                let _ = writeln!(s, "  {} {kind}", f.name);
            }
            s.push_str("end\n");
        }
        s
    }
}

fn parse_u8(s: &str) -> Option<u8> {
    match s.strip_prefix("0x") {
        Some(hex) => u8::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_kind(tok: &[&str]) -> Result<SubFieldKind, String> {
    let bits = |s: &str, max: u32| -> Result<u32, String> {
        let b: u32 = s.parse().map_err(|_| format!("bad bit width '{s}'"))?;
        if b == 0 || b > max {
            return Err(format!("bit width {b} out of range 1..={max}"));
        }
        Ok(b)
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number '{s}'"));
    match tok {
        ["uint", b] => Ok(SubFieldKind::Uint { bits: bits(b, 64)? }),
        ["quant", b, lo, hi] => {
            let (min, max) = (num(lo)?, num(hi)?);
            if !(max > min) {
                return Err("quant range must satisfy min < max".into());
            }
            Ok(SubFieldKind::Quant { bits: bits(b, 32)?, min, max })
        }
        ["f64"] => Ok(SubFieldKind::F64),
        ["quat3", b] => {
            let b = bits(b, 16)?;
            if b < 2 {
                return Err("quat3 needs at least 2 bits".into());
            }
            Ok(SubFieldKind::Quat3 { bits: b })
        }
        ["quatf64"] => Ok(SubFieldKind::QuatF64),
        _ => Err(format!("unknown sub-field kind '{}'", tok.join(" "))),
    }
}
