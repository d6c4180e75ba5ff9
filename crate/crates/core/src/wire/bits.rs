//! LSB-first bit packing used inside custom-object blobs.

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `bits` bits of `value`.
    pub fn write(&mut self, value: u64, bits: u32) {
        debug_assert!(bits <= 64);
        for i in 0..bits {
            if self.bit_len % 8 == 0 {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 1 << (self.bit_len % 8);
            }
            self.bit_len += 1;
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// Bytes with zero padding in the final partial byte.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Reads `bits` bits; `None` when the buffer is exhausted.
    pub fn read(&mut self, bits: u32) -> Option<u64> {
        if self.pos + bits as usize > self.bytes.len() * 8 {
            return None;
        }
        let mut v = 0u64;
        for i in 0..bits as usize {
            let p = self.pos + i;
            if (self.bytes[p / 8] >> (p % 8)) & 1 == 1 {
                v |= 1 << i;
            }
        }
        self.pos += bits as usize;
        Some(v)
    }

    /// True when every bit after the cursor is zero.
    pub fn rest_is_zero(&self) -> bool {
        (self.pos..self.bytes.len() * 8).all(|p| (self.bytes[p / 8] >> (p % 8)) & 1 == 0)
    }
}
