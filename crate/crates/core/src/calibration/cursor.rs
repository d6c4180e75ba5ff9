//! Cursor-offset measurement against a reticle on a test screen.
//!
//! The only observation is where the cursor ray meets the screen. Three
//! stationarity tests, each run as a bisection:
//!
//! 1. translate the controller along a guessed pointing direction; the
//!    reticle stays put only when the guess is the cursor's direction;
//! 2. turn the controller half a turn about a guessed axis through a guessed
//!    origin; the reticle stays put only when the axis is the cursor ray;
//! 3. park the guessed origin on the screen plane; the reticle disappears
//!    when the true origin has passed through the screen. This pins the
//!    origin along the ray, which tests 1-2 cannot see.
//!
//! Roll about the pointing axis never moves the reticle, so the recovered
//! rotation is the swing that turns the forward axis onto the measured
//! direction.

use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::{Plane, Transform, UnitQuat, Vec3, FORWARD};

/// Simulator stand-in for looking at the reticle on a flat screen.
#[derive(Debug, Clone, Copy)]
pub struct ReticleOracle {
    screen: Plane,
    /// Hidden controller-to-cursor transform.
    controller_to_cursor: Transform,
}

impl ReticleOracle {
    /// Screen facing +z at `z = -distance`.
    pub fn new(controller_to_cursor: Transform, distance: f64) -> Self {
        Self {
            screen: Plane::new(Vec3::new(0.0, 0.0, -distance), Vec3::new(0.0, 0.0, 1.0)),
            controller_to_cursor,
        }
    }

    pub fn screen(&self) -> Plane {
        self.screen
    }

    /// Reticle in screen (x, y) when the controller is at `controller`, or
    /// `None` when the cursor ray does not reach the screen.
    pub fn reticle(&self, controller: &Transform) -> Option<[f64; 2]> {
        let cursor = controller.compose(&self.controller_to_cursor);
        let hit = self.screen.intersect(&cursor.ray())?;
        Some([hit.point.x, hit.point.y])
    }
}

/// Search brackets and tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CursorSearch {
    pub screen_distance: f64,
    /// Stationarity threshold on the screen, meters: a test passes when the
    /// reticle moves less than this.
    pub epsilon_reticle: f64,
    /// Displacement below which bisection stops early.
    pub accept_displacement: f64,
    /// Translation used by the direction test, meters.
    pub probe_translation: f64,
    /// Half-width of the slope bracket (tangent of the max off-axis angle).
    pub slope_bracket: f64,
    /// Half-width of the origin brackets, meters.
    pub origin_bracket: f64,
    /// Stop when a bracket is narrower than this.
    pub min_width: f64,
    pub max_rounds: u32,
}

impl Default for CursorSearch {
    fn default() -> Self {
        Self {
            screen_distance: 2.0,
            epsilon_reticle: 1e-4,
            accept_displacement: 1e-9,
            probe_translation: 1.0,
            slope_bracket: 1.0,
            origin_bracket: 0.5,
            min_width: 1e-7,
            max_rounds: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorMeasurement {
    /// Hand frame to cursor frame.
    pub hand_to_cursor: Transform,
    /// Rounds used by tests 1, 2 and 3.
    pub rounds: [u32; 3],
    /// Reticle displacement left at the final guesses of tests 1 and 2.
    pub final_displacement: [f64; 2],
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Direction with slopes `(a, b)`: `x/(-z) = a`, `y/(-z) = b`.
fn slope_dir(a: f64, b: f64) -> Vec3 {
    Vec3::new(a, b, -1.0).normalized()
}

fn visible(oracle: &ReticleOracle, c: &Transform) -> Result<[f64; 2], CalibrationError> {
    oracle.reticle(c).ok_or_else(|| CalibrationError::NoConvergence("reticle left the screen during a test".into()))
}

/// Test 1: the controller stays unrotated, so controller-frame slopes are
/// world slopes. Moving the origin by `δ·g` shifts the reticle by
/// `δ|g_z|(a_g - a_true)` in x (same for y/b), so each slope bisects on the
/// sign of its own axis.
fn measure_direction(oracle: &ReticleOracle, s: &CursorSearch) -> Result<(Vec3, u32, f64), CalibrationError> {
    let (mut lo, mut hi) = ([-s.slope_bracket; 2], [s.slope_bracket; 2]);
    let base = Transform::IDENTITY;
    let r0 = visible(oracle, &base)?;
    let mut last = (FORWARD, 0, f64::INFINITY);
    for round in 1..=s.max_rounds {
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let g = slope_dir(mid[0], mid[1]);
        let moved = Transform::new(g * s.probe_translation, UnitQuat::IDENTITY);
        let r1 = visible(oracle, &moved)?;
        let d = [r1[0] - r0[0], r1[1] - r0[1]];
        last = (g, round, dist2(r1, r0));
        if last.2 < s.accept_displacement {
            break;
        }
        for k in 0..2 {
            if d[k] > 0.0 {
                hi[k] = mid[k];
            } else {
                lo[k] = mid[k];
            }
        }
        if hi[0] - lo[0] < s.min_width && hi[1] - lo[1] < s.min_width {
            break;
        }
    }
    if last.2 < s.epsilon_reticle {
        Ok(last)
    } else {
        Err(CalibrationError::NoConvergence(format!("cursor direction: reticle still moves {:.3e} m", last.2)))
    }
}

/// Test 2: half a turn about the guessed axis moves the reticle by
/// `-2 · P(e)`, where `e` is the perpendicular origin error and `P` the
/// oblique projection along the ray onto the screen. Solving the 2x2 system
/// gives the sign of each error coordinate.
fn measure_axis_origin(
    oracle: &ReticleOracle,
    dir: Vec3,
    s: &CursorSearch,
) -> Result<(Vec3, u32, f64), CalibrationError> {
    let u = dir.any_perpendicular().normalized();
    let v = dir.cross(u);
    let n = oracle.screen().normal;
    let project = |w: Vec3| w - dir * (w.dot(n) / dir.dot(n));
    let (pu, pv) = (project(u), project(v));
    let det = pu.x * pv.y - pu.y * pv.x;
    let half_turn = UnitQuat::from_axis_angle(dir, std::f64::consts::PI);
    let (mut lo, mut hi) = ([-s.origin_bracket; 2], [s.origin_bracket; 2]);
    let mut last = (Vec3::ZERO, 0, f64::INFINITY);
    for round in 1..=s.max_rounds {
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let pivot = u * mid[0] + v * mid[1];
        // Rotating the controller about the line (pivot, dir): x -> pivot + R(x - pivot).
        let turned = Transform::new(pivot - half_turn.rotate(pivot), half_turn);
        let r0 = visible(oracle, &Transform::IDENTITY)?;
        let r1 = visible(oracle, &turned)?;
        last = (pivot, round, dist2(r1, r0));
        if last.2 < s.accept_displacement {
            break;
        }
        // Reticle shift = -2 (eu * pu + ev * pv) with e = true - guess.
        let (dx, dy) = ((r1[0] - r0[0]) / -2.0, (r1[1] - r0[1]) / -2.0);
        let eu = (dx * pv.y - dy * pv.x) / det;
        let ev = (pu.x * dy - pu.y * dx) / det;
        for (k, e) in [eu, ev].into_iter().enumerate() {
            if e > 0.0 {
                lo[k] = mid[k];
            } else {
                hi[k] = mid[k];
            }
        }
        if hi[0] - lo[0] < s.min_width && hi[1] - lo[1] < s.min_width {
            break;
        }
    }
    if last.2 < s.epsilon_reticle {
        Ok(last)
    } else {
        Err(CalibrationError::NoConvergence(format!("cursor axis: reticle still moves {:.3e} m", last.2)))
    }
}

/// Test 3: bisection on the along-axis coordinate `γ` of the origin guess
/// `perp + γ·dir`, parking the guess on the screen each round.
fn measure_axis_depth(oracle: &ReticleOracle, dir: Vec3, perp: Vec3, s: &CursorSearch) -> (f64, u32) {
    let screen = oracle.screen();
    let (mut lo, mut hi) = (-s.origin_bracket, s.origin_bracket);
    let mut rounds = 0;
    while hi - lo >= s.min_width && rounds < s.max_rounds {
        rounds += 1;
        let mid = (lo + hi) / 2.0;
        let guess = perp + dir * mid;
        let controller = Transform::new(screen.point - guess, UnitQuat::IDENTITY);
        // Visible: the true origin is still on the near side, i.e. further
        // along `dir` than the guess.
        if oracle.reticle(&controller).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    ((lo + hi) / 2.0, rounds)
}

/// Recovers the hand-to-cursor offset. `controller_to_hand` is read off
/// packets by holding the controller at a known pose.
pub fn measure_cursor_offset(
    oracle: &ReticleOracle,
    controller_to_hand: &Transform,
    search: &CursorSearch,
) -> Result<CursorMeasurement, CalibrationError> {
    let (dir, r1, d1) = measure_direction(oracle, search)?;
    let (perp, r2, d2) = measure_axis_origin(oracle, dir, search)?;
    let (gamma, r3) = measure_axis_depth(oracle, dir, perp, search);
    let controller_to_cursor = Transform::new(perp + dir * gamma, UnitQuat::between(FORWARD, dir));
    Ok(CursorMeasurement {
        hand_to_cursor: controller_to_hand.inverse().compose(&controller_to_cursor),
        rounds: [r1, r2, r3],
        final_displacement: [d1, d2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::{default_cursor_offset, CONTROLLER_TO_HAND};

    #[test]
    fn recovers_injected_offset() {
        let truth = default_cursor_offset();
        let oracle = ReticleOracle::new(CONTROLLER_TO_HAND.compose(&truth), 2.0);
        let m = measure_cursor_offset(&oracle, &CONTROLLER_TO_HAND, &CursorSearch::default()).unwrap();
        let (dp, da) = m.hand_to_cursor.distance_to(&truth);
        assert!(dp < 1e-3, "{dp}");
        assert!(da.to_degrees() < 0.1, "{}", da.to_degrees());
    }

    #[test]
    fn zero_offset_converges_immediately() {
        let oracle = ReticleOracle::new(Transform::IDENTITY, 2.0);
        let m = measure_cursor_offset(&oracle, &Transform::IDENTITY, &CursorSearch::default()).unwrap();
        assert!(m.rounds[0] <= 3 && m.rounds[1] <= 3, "{:?}", m.rounds);
        let (dp, da) = m.hand_to_cursor.distance_to(&Transform::IDENTITY);
        assert!(dp < 1e-6 && da < 1e-9);
    }

    #[test]
    fn true_guess_leaves_reticle_still() {
        let truth = CONTROLLER_TO_HAND.compose(&default_cursor_offset());
        let oracle = ReticleOracle::new(truth, 2.0);
        let f = truth.forward();
        let a = oracle.reticle(&Transform::IDENTITY).unwrap();
        let b = oracle.reticle(&Transform::new(f * 0.5, UnitQuat::IDENTITY)).unwrap();
        assert!(dist2(a, b) < 1e-12);
    }
}
