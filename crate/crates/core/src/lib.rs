//! A desk-scale lab for remote keystroke inference against a simulated
//! multi-user VR motion-synchronization protocol.
//!
//! The pipeline: [`victim`] synthesizes typing motion, [`room`] broadcasts it
//! as quantized [`wire`] packets over a lossy channel and records the
//! attacker-side trace, [`calibration`] recovers field semantics and
//! cursor/keyboard geometry from attacker-observable channels, and
//! [`attack`] turns a trace into ranked keystroke predictions. [`ml`] is the
//! low-effort fallback that classifies raw custom-object bytes, and
//! [`experiment`] orchestrates whole studies.

pub mod geometry;
pub mod wire;
pub mod room;
pub mod trace;
pub mod victim;
pub mod calibration;
pub mod attack;
pub mod ml;
pub mod experiment;
