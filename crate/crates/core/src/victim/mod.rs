//! Ground-truth victim sessions: keyboard geometry, typing motion, prompts and
//! isolation scripts for calibration.

mod layout;
mod prompts;
mod replay;
mod typing;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{default_pose_rule, Key, KeyboardModel, KEY_COUNT, KEY_PITCH, KEY_SIDE};
pub use prompts::{generate_prompt_battery, Prompt, PromptKind};
pub use replay::{isolation_plan, scripted_replay, InputDim, ReplayPlan, ReplaySegment, SegmentInfo, BASE_POSE};
pub use typing::{
    default_cursor_offset, synthesize_session, synthesize_typing, TypistProfile, VictimRig, CONTROLLER_TO_HAND,
    TRIGGER_THRESHOLD,
};

use crate::geometry::Transform;
use crate::wire::{BodyPart, Hand};

#[derive(Debug, Error)]
pub enum VictimError {
    #[error("character {0:?} has no key on the keyboard")]
    UnmappableCharacter(char),
    #[error("invalid keyboard layout: {0}")]
    Layout(String),
    #[error("invalid typist profile: {0}")]
    Profile(String),
    #[error("invalid replay plan: {0}")]
    Replay(String),
}

/// One device-rate sample of a user's tracked state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub head: Transform,
    pub left: Transform,
    pub right: Transform,
    pub left_trigger: f64,
    pub right_trigger: f64,
    pub keyboard_open: bool,
}

impl Sample {
    pub fn pose(&self, part: BodyPart) -> &Transform {
        match part {
            BodyPart::Head => &self.head,
            BodyPart::Left => &self.left,
            BodyPart::Right => &self.right,
        }
    }

    pub fn pose_mut(&mut self, part: BodyPart) -> &mut Transform {
        match part {
            BodyPart::Head => &mut self.head,
            BodyPart::Left => &mut self.left,
            BodyPart::Right => &mut self.right,
        }
    }

    pub fn trigger(&self, hand: Hand) -> f64 {
        match hand {
            Hand::Left => self.left_trigger,
            Hand::Right => self.right_trigger,
        }
    }

    pub fn trigger_mut(&mut self, hand: Hand) -> &mut f64 {
        match hand {
            Hand::Left => &mut self.left_trigger,
            Hand::Right => &mut self.right_trigger,
        }
    }
}

/// Ground truth for one keystroke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickLabel {
    /// First sample with the trigger at or above threshold.
    pub sample: usize,
    /// Last sample of the press still at or above threshold.
    pub end_sample: usize,
    pub key: String,
    pub row: u8,
    pub hand: Hand,
    pub prompt_index: usize,
    pub prompt_kind: PromptKind,
}

impl ClickLabel {
    /// Time the trigger stays at or above threshold, in seconds.
    pub fn duration(&self, device_rate: f64) -> f64 {
        (self.end_sample + 1 - self.sample) as f64 / device_rate
    }
}

/// Device-rate recording of one user, plus labels for typing sessions or
/// segment annotations for isolation scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub device_rate: f64,
    pub samples: Vec<Sample>,
    pub labels: Vec<ClickLabel>,
    pub segments: Vec<SegmentInfo>,
}

impl MotionScript {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.device_rate
    }

    /// Index of the latest sample at time `t` seconds, clamped to the script.
    pub fn sample_index_at(&self, t: f64) -> usize {
        let idx = (t * self.device_rate + 1e-9).floor().max(0.0) as usize;
        idx.min(self.samples.len().saturating_sub(1))
    }

    /// Appends `other` after this script, shifting its labels and segments.
    pub fn append(&mut self, other: MotionScript) {
        let off = self.samples.len();
        self.samples.extend(other.samples);
        self.labels.extend(other.labels.into_iter().map(|mut l| {
            l.sample += off;
            l.end_sample += off;
            l
        }));
        self.segments.extend(other.segments.into_iter().map(|mut s| {
            s.start += off;
            s.end += off;
            s
        }));
    }
}
