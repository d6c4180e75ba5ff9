//! Lossy motion codecs: uniform scalar quantization and smallest-three
//! quaternion compression.

use serde::{Deserialize, Serialize};

use crate::geometry::{UnitQuat, Vec3};

use super::WireError;

/// Uniform quantizer mapping `[min, max]` onto `0..2^bits`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    pub bits: u32,
    pub min: f64,
    pub max: f64,
}

impl ScalarQuantizer {
    pub fn new(bits: u32, min: f64, max: f64) -> Self {
        assert!((1..=32).contains(&bits) && max > min);
        Self { bits, min, max }
    }

    fn levels(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    /// Width of one quantization step.
    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.levels()
    }

    pub fn encode(&self, v: f64) -> Result<u64, WireError> {
        if !(v >= self.min && v <= self.max) {
            return Err(WireError::OutOfBounds { value: v, min: self.min, max: self.max });
        }
        Ok(((v - self.min) / (self.max - self.min) * self.levels()).round() as u64)
    }

    pub fn decode(&self, code: u64) -> f64 {
        self.min + code as f64 * self.step()
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Smallest-three packed quaternion: 2-bit index of the dropped component
/// followed by three `bits`-wide codes, all in one integer (LSB first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PackedQuat {
    pub bits: u32,
    pub raw: u64,
}

impl PackedQuat {
    pub fn total_bits(bits: u32) -> u32 {
        2 + 3 * bits
    }
}

fn component_quantizer(bits: u32) -> ScalarQuantizer {
    ScalarQuantizer::new(bits, -INV_SQRT2, INV_SQRT2)
}

/// Drops the largest-magnitude component and quantizes the other three.
/// `q` and `-q` give the same bits.
pub fn encode_quat_smallest_three(q: UnitQuat, bits: u32) -> PackedQuat {
    assert!((2..=16).contains(&bits), "smallest-three supports 2..=16 bits per component");
    let c = q.components();
    let largest = (0..4).fold(0, |best, i| if c[i].abs() > c[best].abs() { i } else { best });
    let sign = if c[largest] < 0.0 { -1.0 } else { 1.0 };
    let quant = component_quantizer(bits);
    let mut raw = largest as u64;
    let mut shift = 2;
    for (i, comp) in c.iter().enumerate() {
        if i == largest {
            continue;
        }
        let v = (comp * sign).clamp(-INV_SQRT2, INV_SQRT2);
        let code = quant.encode(v).expect("clamped into range");
        raw |= code << shift;
        shift += bits;
    }
    PackedQuat { bits, raw }
}

/// Restores the dropped component from the unit constraint. The three stored
/// components come back exactly as dequantized.
pub fn decode_quat_smallest_three(p: PackedQuat) -> UnitQuat {
    let quant = component_quantizer(p.bits);
    let mask = (1u64 << p.bits) - 1;
    let largest = (p.raw & 0b11) as usize;
    let mut c = [0.0; 4];
    let mut shift = 2;
    let mut sum = 0.0;
    for (i, slot) in c.iter_mut().enumerate() {
        if i == largest {
            continue;
        }
        let v = quant.decode((p.raw >> shift) & mask);
        *slot = v;
        sum += v * v;
        shift += p.bits;
    }
    if sum > 1.0 {
        // Only reachable for corrupted input: renormalize the stored three.
        c[largest] = 0.0;
        return UnitQuat::new(c[0], c[1], c[2], c[3]);
    }
    c[largest] = (1.0 - sum).sqrt();
    UnitQuat::from_unit_components(c[0], c[1], c[2], c[3])
}

/// Rotation compression choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationScheme {
    SmallestThree { bits: u32 },
    /// Four raw `f64` components.
    Lossless,
}

/// Pose codec configuration. `position_bits == 0` sends raw `f64` positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizedTransformCodec {
    pub position_min: [f64; 3],
    pub position_max: [f64; 3],
    pub position_bits: [u32; 3],
    pub rotation: RotationScheme,
}

impl Default for QuantizedTransformCodec {
    fn default() -> Self {
        Self {
            position_min: [-8.0; 3],
            position_max: [8.0; 3],
            position_bits: [16; 3],
            rotation: RotationScheme::SmallestThree { bits: 9 },
        }
    }
}

impl QuantizedTransformCodec {
    /// Full-precision codec used by the consistency oracle.
    pub fn lossless() -> Self {
        Self { position_bits: [0; 3], rotation: RotationScheme::Lossless, ..Self::default() }
    }

    pub fn is_lossless(&self) -> bool {
        self.position_bits == [0; 3] && self.rotation == RotationScheme::Lossless
    }

    pub fn position_quantizer(&self, axis: usize) -> Option<ScalarQuantizer> {
        let bits = self.position_bits[axis];
        (bits > 0).then(|| ScalarQuantizer::new(bits, self.position_min[axis], self.position_max[axis]))
    }

    /// Worst-case per-axis position error.
    pub fn position_error_bound(&self, axis: usize) -> f64 {
        match self.position_quantizer(axis) {
            Some(q) => (q.max - q.min) / (1u64 << q.bits) as f64,
            None => 0.0,
        }
    }

    pub fn check_bounds(&self, p: Vec3) -> Result<(), WireError> {
        for axis in 0..3 {
            let v = p.axis(axis);
            let (min, max) = (self.position_min[axis], self.position_max[axis]);
            if !(v >= min && v <= max) {
                return Err(WireError::OutOfBounds { value: v, min, max });
            }
        }
        Ok(())
    }
}

/// Trigger values travel as one byte: `round(v * 255)`.
pub fn encode_trigger(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_trigger(b: u8) -> f64 {
    b as f64 / 255.0
}
