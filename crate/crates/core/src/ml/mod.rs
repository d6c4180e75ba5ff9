//! Fallback attack without the serializer: classify the key straight from
//! the clicking hand's opaque pose bytes at each detected click.
//!
//! Only the cheap preprocessing is assumed: keep the motion source, parse
//! generically (custom objects stay blobs), locate the trigger and hand
//! fields with the correlator, and detect clicks.

mod model;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    gradient_check, Classifier, EpochStats, ModelKind, Network, TrainConfig, TrainingOutcome, CLASS_COUNT,
};

use crate::attack::{
    demux_users, filter_motion_source, match_labels, parse_trace, threshold_crossings, AttackError, ClickRule,
    GroundTruth,
};
use crate::calibration::{Conversion, FieldSemanticsMap};
use crate::trace::TraceFile;
use crate::victim::{InputDim, KeyboardModel, PromptKind};
use crate::wire::{BodyPart, FieldValue, Hand, Packet};

#[derive(Debug, Error)]
pub enum MlError {
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("semantics map has no {0} channel")]
    MissingChannel(String),
    #[error("unknown key label {0:?}")]
    UnknownKey(String),
    #[error("feature length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("training split is empty")]
    EmptyTrain,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How blob bytes become features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// One feature per byte, `byte / 255`.
    #[default]
    Bytes,
    /// One 0/1 feature per bit, most significant first.
    Bits,
}

impl FeatureMode {
    pub fn expand(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            FeatureMode::Bytes => bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            FeatureMode::Bits => {
                bytes.iter().flat_map(|&b| (0..8).rev().map(move |i| ((b >> i) & 1) as f64)).collect()
            }
        }
    }
}

/// One labeled click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByteSample {
    pub features: Vec<f64>,
    /// Key index in the layout, `0..47`.
    pub label: usize,
    pub user_id: u32,
    pub hand: Hand,
    pub row: u8,
    pub prompt_kind: PromptKind,
}

/// The handful of field locations the fallback needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickFields {
    pub tick_field: u8,
    pub trigger: [(u8, Conversion); 2],
    pub hand_field: [u8; 2],
}

impl ClickFields {
    pub fn from_semantics(sem: &FieldSemanticsMap) -> Result<Self, MlError> {
        let find = |dim: InputDim| {
            sem.channels.iter().find(|c| c.dim == dim).ok_or_else(|| MlError::MissingChannel(dim.name()))
        };
        let trig = |hand| find(InputDim::Trigger { hand }).map(|c| (c.loc.field, c.conversion));
        let pose = |part| find(InputDim::Position { part, axis: 0 }).map(|c| c.loc.field);
        Ok(Self {
            tick_field: sem.tick_field,
            trigger: [trig(Hand::Left)?, trig(Hand::Right)?],
            hand_field: [pose(BodyPart::Left)?, pose(BodyPart::Right)?],
        })
    }

    fn trigger(&self, p: &Packet, hand: Hand) -> Option<f64> {
        let (field, conv) = self.trigger[hand as usize];
        let raw = match p.field(field)? {
            FieldValue::U8(v) => *v as f64,
            FieldValue::I32(v) => *v as f64,
            FieldValue::F32(v) => *v as f64,
            _ => return None,
        };
        Some(conv.apply(raw))
    }

    fn blob<'p>(&self, p: &'p Packet, hand: Hand) -> Option<&'p [u8]> {
        match p.field(self.hand_field[hand as usize])? {
            FieldValue::Blob(b) => Some(&b.bytes),
            _ => None,
        }
    }

    fn tick(&self, p: &Packet) -> u32 {
        match p.field(self.tick_field) {
            Some(FieldValue::TickStamp(t)) => *t,
            _ => p.header.sequence,
        }
    }
}

/// One sample per detected click that pairs with a label; each user stream
/// is handled on its own.
pub fn build_dataset(
    runs: &[(TraceFile, GroundTruth)],
    fields: &ClickFields,
    layout: &KeyboardModel,
    rule: &ClickRule,
    mode: FeatureMode,
) -> Result<Vec<ByteSample>, MlError> {
    let mut out: Vec<ByteSample> = Vec::new();
    for (trace, truth) in runs {
        let (packets, _) = parse_trace(&filter_motion_source(trace)?, None);
        let streams = demux_users(packets)?;
        for ut in &truth.users {
            let Some(stream) = streams.get(&ut.user_id) else { continue };
            let usable: Vec<(u32, [f64; 2], [&[u8]; 2])> = stream
                .iter()
                .filter_map(|o| {
                    let p = &o.packet;
                    Some((
                        fields.tick(p),
                        [fields.trigger(p, Hand::Left)?, fields.trigger(p, Hand::Right)?],
                        [fields.blob(p, Hand::Left)?, fields.blob(p, Hand::Right)?],
                    ))
                })
                .collect();
            let mut detections: Vec<(u32, Hand, usize)> = Vec::new();
            for hand in Hand::BOTH {
                let values: Vec<f64> = usable.iter().map(|u| u.1[hand as usize]).collect();
                for i in threshold_crossings(&values, rule.threshold, rule.rearm_below) {
                    detections.push((usable[i].0, hand, i));
                }
            }
            detections.sort_by_key(|d| (d.0, d.1));
            if detections.len() > ut.labels.len() {
                return Err(AttackError::LengthMismatch {
                    user: ut.user_id,
                    detected: detections.len(),
                    truth: ut.labels.len(),
                }
                .into());
            }
            let pairs: Vec<(u32, Hand)> = detections.iter().map(|d| (d.0, d.1)).collect();
            for (label, m) in ut.labels.iter().zip(match_labels(&ut.labels, &pairs, truth.tick_rate, truth.device_rate)) {
                let Some(j) = m else { continue };
                let (_, hand, i) = detections[j];
                let key = layout.key_by_label(&label.key).ok_or_else(|| MlError::UnknownKey(label.key.clone()))?;
                out.push(ByteSample {
                    features: mode.expand(usable[i].2[hand as usize]),
                    label: key,
                    user_id: ut.user_id,
                    hand,
                    row: label.row,
                    prompt_kind: label.prompt_kind,
                });
            }
        }
    }
    if let Some(first) = out.first() {
        let expected = first.features.len();
        if let Some(bad) = out.iter().find(|s| s.features.len() != expected) {
            return Err(MlError::Shape { expected, got: bad.features.len() });
        }
    }
    Ok(out)
}

/// Disjoint train/validation/test indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    /// 8:1:1 within each label. A label with fewer than ten samples still
    /// gives one to validation and one to test once it has three.
    pub fn stratified(labels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let mut s = DatasetSplit { train: vec![], val: vec![], test: vec![] };
        for (_, mut idx) in by_label {
            idx.shuffle(&mut rng);
            let n = idx.len();
            let held = if n >= 3 { ((n as f64 / 10.0).round() as usize).max(1) } else { 0 };
            s.val.extend_from_slice(&idx[..held]);
            s.test.extend_from_slice(&idx[held..2 * held]);
            s.train.extend_from_slice(&idx[2 * held..]);
        }
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        s
    }

    /// Keeps a seeded `fraction` of the training indices; validation and
    /// test are untouched.
    pub fn subsample_train(&self, fraction: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = self.train.clone();
        train.shuffle(&mut rng);
        train.truncate(((train.len() as f64 * fraction).round() as usize).max(1));
        train.sort_unstable();
        DatasetSplit { train, ..self.clone() }
    }
}

/// Top-1/3/5 accuracy of `c` on the given sample indices.
pub fn top_k_accuracy(c: &Classifier, data: &[ByteSample], idx: &[usize]) -> [f64; 3] {
    if idx.is_empty() {
        return [0.0; 3];
    }
    let mut hits = [0usize; 3];
    for &i in idx {
        let ranked = c.predict_topk(&data[i].features, 5);
        for (h, k) in hits.iter_mut().zip(crate::attack::TOP_K) {
            *h += ranked[..k.min(ranked.len())].contains(&data[i].label) as usize;
        }
    }
    hits.map(|h| h as f64 / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_stratified() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).chain([9, 9]).collect();
        let s = DatasetSplit::stratified(&labels, 1);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        assert_eq!((s.val.len(), s.test.len()), (40, 40));
        for l in 0..4 {
            assert_eq!(s.val.iter().filter(|&&i| labels[i] == l).count(), 10);
        }
        assert_eq!(s, DatasetSplit::stratified(&labels, 1));
    }

    #[test]
    fn bit_expansion() {
        assert_eq!(FeatureMode::Bits.expand(&[0b1000_0001]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(FeatureMode::Bytes.expand(&[255, 0]), vec![1.0, 0.0]);
    }
}
