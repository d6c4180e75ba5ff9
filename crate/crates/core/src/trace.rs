//! Attacker-side capture files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "VKTR" | version u16 | echo_len u32 | echo (UTF-8) | start_us u64 | count u32
//! then per record: recv_us u64 | source u16 | len u16 | raw bytes
//! ```
//!
//! The text dump is line-oriented and lossless:
//!
//! ```text
//! keylab-trace 1
//! start <start_us>
//! config <echo as a JSON string>
//! rec <recv_us> <source> <raw as lowercase hex>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"VKTR";
pub const TRACE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub recv_us: u64,
    /// Stand-in for the sender's address.
    pub source: u16,
    pub raw: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceFile {
    /// Free-form description of how the trace was produced.
    pub config_echo: String,
    pub start_us: u64,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    /// Record count per source id.
    pub fn source_counts(&self) -> BTreeMap<u16, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.source).or_insert(0) += 1;
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.records.iter().map(|r| 12 + r.raw.len()).sum();
        let mut out = Vec::with_capacity(22 + self.config_echo.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_echo.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_echo.as_bytes());
        out.extend_from_slice(&self.start_us.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.recv_us.to_le_bytes());
            out.extend_from_slice(&r.source.to_le_bytes());
            out.extend_from_slice(&(r.raw.len() as u16).to_le_bytes());
            out.extend_from_slice(&r.raw);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, TraceError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], TraceError> {
            let s = buf
                .get(pos..pos + n)
                .ok_or_else(|| TraceError::Format(format!("truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(TraceError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != TRACE_VERSION {
            return Err(TraceError::Format(format!("unsupported version {version}")));
        }
        let echo_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let config_echo = String::from_utf8(take(echo_len)?.to_vec())
            .map_err(|_| TraceError::Format("config echo is not UTF-8".into()))?;
        let start_us = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let recv_us = u64::from_le_bytes(take(8)?.try_into().unwrap());
            let source = u16::from_le_bytes(take(2)?.try_into().unwrap());
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            records.push(TraceRecord { recv_us, source, raw: take(len)?.to_vec() });
        }
        if pos != buf.len() {
            return Err(TraceError::Format(format!("{} trailing bytes", buf.len() - pos)));
        }
        Ok(TraceFile { config_echo, start_us, records })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "keylab-trace {TRACE_VERSION}\nstart {}\nconfig {}\n",
            self.start_us,
            serde_json::to_string(&self.config_echo).expect("string serializes")
        );
        for r in &self.records {
            s.push_str(&format!("rec {} {} {}\n", r.recv_us, r.source, hex::encode(&r.raw)));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TraceError> {
        let bad = |ln: usize, m: &str| TraceError::Format(format!("line {}: {m}", ln + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == format!("keylab-trace {TRACE_VERSION}") => {}
            _ => return Err(TraceError::Format("missing `keylab-trace 1` header".into())),
        }
        let mut t = TraceFile::default();
        for (ln, line) in lines {
            let (kw, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kw {
                "start" => t.start_us = rest.trim().parse().map_err(|_| bad(ln, "bad start"))?,
                "config" => t.config_echo = serde_json::from_str(rest).map_err(|_| bad(ln, "bad config string"))?,
                "rec" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 {
                        return Err(bad(ln, "record needs recv_us, source, hex"));
                    }
                    t.records.push(TraceRecord {
                        recv_us: f[0].parse().map_err(|_| bad(ln, "bad recv_us"))?,
                        source: f[1].parse().map_err(|_| bad(ln, "bad source"))?,
                        raw: hex::decode(f[2]).map_err(|_| bad(ln, "bad hex"))?,
                    });
                }
                "" => {}
                _ => return Err(bad(ln, "unknown line")),
            }
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, TraceError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the binary encoding, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
