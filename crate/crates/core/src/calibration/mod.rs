//! Recovers what the attack needs from attacker-observable channels only:
//! field semantics (by correlating scripted input with captured packets),
//! the hand-to-cursor offset (reticle tests) and keyboard geometry
//! (key-corner measurement at several player poses).

mod cursor;
mod keys;
mod semantics;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cursor::{measure_cursor_offset, CursorMeasurement, CursorSearch, ReticleOracle};
pub use keys::{
    fit_keyboard_pose_rule, measure_key_corners, measured_keyboard, rigid_fit, KeyMark, KeySearch,
    KeyboardMeasurement, KeyboardView, MeasuredKey, RuleFit,
};
pub use semantics::{
    correlate_fields, ChannelMapping, Conversion, DecodedMotion, EventMapping, FieldSemanticsMap, SignalLoc,
};

use crate::attack::AttackError;
use crate::geometry::{Transform, UnitQuat, Vec3, UP};
use crate::room::{run_session, BackgroundSource, RoomConfig, RoomError};
use crate::trace::TraceFile;
use crate::victim::{
    default_cursor_offset, isolation_plan, scripted_replay, KeyboardModel, MotionScript, ReplayPlan, VictimError,
    CONTROLLER_TO_HAND,
};
use crate::wire::{default_registry, Registry};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("ambiguous field: {0}")]
    AmbiguousField(String),
    #[error("no candidate field: {0}")]
    NoCandidate(String),
    #[error("search did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate poses: {0}")]
    DegeneratePoses(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Room(#[from] RoomError),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error("calibration report: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The application as the attacker can run it locally, including the hidden
/// quantities the simulated oracles answer from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSetup {
    pub room: RoomConfig,
    pub replay: ReplayPlan,
    /// Hidden: the app's hand-to-cursor offset.
    pub true_cursor_offset: Transform,
    /// Read off packets by holding the controller still (step one).
    pub controller_to_hand: Transform,
    /// Hidden: the keyboard the app draws.
    pub true_keyboard: KeyboardModel,
    /// Shipped layout asset used to name the keyboard frame.
    pub layout_asset: KeyboardModel,
    pub cursor_search: CursorSearch,
    pub key_search: KeySearch,
    /// Player poses used for keyboard measurement (at least three).
    pub poses: Vec<Transform>,
    /// Extra pose for the held-out placement check.
    pub holdout: Transform,
}

impl Default for CalibrationSetup {
    fn default() -> Self {
        let pose = |x: f64, z: f64, yaw_deg: f64| {
            Transform::new(Vec3::new(x, 1.6, z), UnitQuat::from_axis_angle(UP, yaw_deg.to_radians()))
        };
        Self {
            room: RoomConfig { users: vec![1], ..RoomConfig::default() },
            replay: isolation_plan(),
            true_cursor_offset: default_cursor_offset(),
            controller_to_hand: CONTROLLER_TO_HAND,
            true_keyboard: KeyboardModel::default_layout(),
            layout_asset: KeyboardModel::default_layout(),
            cursor_search: CursorSearch::default(),
            key_search: KeySearch::default(),
            poses: vec![pose(0.0, 0.0, 0.0), pose(0.8, -0.5, 35.0), pose(-0.6, 0.4, -50.0)],
            holdout: pose(1.5, 1.0, 120.0),
        }
    }
}

/// Everything the attack consumes, plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub format_version: u32,
    /// Registry text standing in for the reverse-engineered serializers.
    pub registry: String,
    pub semantics: FieldSemanticsMap,
    pub cursor: CursorMeasurement,
    pub keyboard: KeyboardModel,
    pub rule_fit: RuleFit,
    /// Largest key-center placement error at the held-out pose, meters.
    pub holdout_error: f64,
    pub max_plane_residual: f64,
    pub cursor_search: CursorSearch,
    pub key_search: KeySearch,
}

impl CalibrationReport {
    /// Report built from the simulator's own configuration, for comparison
    /// runs that skip calibration.
    pub fn ground_truth(room: &RoomConfig, cursor_offset: Transform, keyboard: KeyboardModel) -> Self {
        CalibrationReport {
            format_version: 1,
            registry: default_registry(&room.codec, &room.layout).to_text(),
            semantics: FieldSemanticsMap::ground_truth(&room.layout),
            cursor: CursorMeasurement { hand_to_cursor: cursor_offset, rounds: [0; 3], final_displacement: [0.0; 2] },
            rule_fit: RuleFit { rule: keyboard.pose_rule(), rms_residual: 0.0, max_residual: 0.0 },
            keyboard,
            holdout_error: 0.0,
            max_plane_residual: 0.0,
            cursor_search: CursorSearch::default(),
            key_search: KeySearch::default(),
        }
    }

    pub fn registry(&self) -> Result<Registry, CalibrationError> {
        Registry::parse(&self.registry).map_err(|e| CalibrationError::Report(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CalibrationError> {
        serde_json::from_str(s).map_err(|e| CalibrationError::Report(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), CalibrationError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn read(path: &Path) -> Result<Self, CalibrationError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the JSON form, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json()))
    }
}

/// The isolation replay script and the trace the attacker captures while
/// it plays in the setup's room.
pub fn isolation_capture(setup: &CalibrationSetup) -> Result<(MotionScript, TraceFile), CalibrationError> {
    let room = &setup.room;
    let script = scripted_replay(&ReplayPlan { device_rate: room.device_rate, ..setup.replay.clone() })?;
    let trace = run_session(room, std::slice::from_ref(&script), &BackgroundSource::defaults())?;
    Ok((script, trace))
}

/// Runs the whole calibration: isolation replay through the setup's room
/// (loss and jitter included), field correlation, cursor tests, and keyboard
/// measurement at each pose.
pub fn run_calibration(setup: &CalibrationSetup) -> Result<CalibrationReport, CalibrationError> {
    let registry = default_registry(&setup.room.codec, &setup.room.layout);
    let capture = isolation_capture(setup)?;
    let semantics = correlate_fields(&[capture], &registry)?;

    let true_controller_to_cursor = setup.controller_to_hand.compose(&setup.true_cursor_offset);
    let oracle = ReticleOracle::new(true_controller_to_cursor, setup.cursor_search.screen_distance);
    let cursor = measure_cursor_offset(&oracle, &setup.controller_to_hand, &setup.cursor_search)?;
    let measured_controller_to_cursor = setup.controller_to_hand.compose(&cursor.hand_to_cursor);

    let measurements = setup
        .poses
        .iter()
        .map(|head| {
            let view = KeyboardView::new(&setup.true_keyboard, head, true_controller_to_cursor);
            measure_key_corners(&view, head, &measured_controller_to_cursor, &setup.key_search)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rule_fit = fit_keyboard_pose_rule(&measurements, &setup.layout_asset)?;
    let keyboard = measured_keyboard(&measurements, &rule_fit)?;

    let truth = setup.true_keyboard.placement(&setup.holdout);
    let fitted = keyboard.placement(&setup.holdout);
    let mut holdout_error: f64 = 0.0;
    for k in keyboard.keys() {
        let idx = setup
            .true_keyboard
            .key_by_label(&k.label)
            .ok_or_else(|| CalibrationError::NoCandidate(format!("key {}", k.label)))?;
        let c = setup.true_keyboard.keys()[idx].center;
        holdout_error = holdout_error.max(fitted.apply_point(k.center).distance(truth.apply_point(c)));
    }

    Ok(CalibrationReport {
        format_version: 1,
        registry: registry.to_text(),
        semantics,
        cursor,
        keyboard,
        rule_fit,
        holdout_error,
        max_plane_residual: measurements.iter().map(|m| m.plane_residual).fold(0.0, f64::max),
        cursor_search: setup.cursor_search,
        key_search: setup.key_search,
    })
}
