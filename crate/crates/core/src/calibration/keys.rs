//! Key-corner measurement and the keyboard placement rule.
//!
//! The attacker sees the keyboard surface with the reticle on it. For every
//! key corner it aims the cursor at the corner (Newton iteration on the
//! cursor's yaw and pitch), then finds the corner's distance along the ray by
//! a cone test: swing the cursor origin sideways while aiming at a candidate
//! point; the reticle stays on the corner only when the candidate is the
//! corner itself.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::{Plane, Quad, Transform, UnitQuat, Vec3, UP};
use crate::victim::{Key, KeyboardModel};

/// What the attacker's headset shows while the keyboard is open: the
/// reticle and the key corners, both in keyboard-surface coordinates.
#[derive(Debug, Clone)]
pub struct KeyboardView {
    keyboard_pose: Transform,
    keyboard: KeyboardModel,
    controller_to_cursor: Transform,
}

/// A key as drawn on the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMark {
    pub label: String,
    pub row: u8,
    pub corners: [[f64; 2]; 4],
}

impl KeyboardView {
    pub fn new(keyboard: &KeyboardModel, head: &Transform, controller_to_cursor: Transform) -> Self {
        Self { keyboard_pose: keyboard.placement(head), keyboard: keyboard.clone(), controller_to_cursor }
    }

    /// Reticle on the keyboard surface, or `None` if the ray misses its plane.
    pub fn reticle(&self, controller: &Transform) -> Option<[f64; 2]> {
        let cursor = controller.compose(&self.controller_to_cursor);
        let local = self.keyboard_pose.inverse().compose(&cursor);
        let plane = Plane::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let hit = plane.intersect(&local.ray())?;
        Some([hit.point.x, hit.point.y])
    }

    pub fn marks(&self) -> Vec<KeyMark> {
        self.keyboard
            .keys()
            .iter()
            .map(|k| KeyMark {
                label: k.label.clone(),
                row: k.row,
                corners: k.quad.corners().map(|c| [c.x, c.y]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeySearch {
    /// Cone radius: sideways swing of the cursor origin, meters.
    pub cone_radius: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    /// Stop bisecting when the distance bracket is narrower than this.
    pub distance_width: f64,
    /// Aim is done when the reticle is this close to the corner, meters.
    pub aim_tolerance: f64,
    pub max_newton: u32,
    /// Controller placement relative to the head while measuring.
    pub controller_in_head: Transform,
}

impl Default for KeySearch {
    fn default() -> Self {
        Self {
            cone_radius: 0.1,
            distance_min: 0.02,
            distance_max: 3.0,
            distance_width: 1e-6,
            aim_tolerance: 1e-10,
            max_newton: 60,
            controller_in_head: Transform::translation(0.05, -0.1, -0.1),
        }
    }
}

/// Measured keys in world coordinates for one player pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyboardMeasurement {
    pub head: Transform,
    pub keys: Vec<MeasuredKey>,
    /// RMS distance of the raw corners from their common plane.
    pub plane_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredKey {
    pub label: String,
    pub row: u8,
    pub quad: Quad,
}

fn direction(yaw: f64, pitch: f64) -> Vec3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Vec3::new(-sy * cp, sp, -cy * cp)
}

struct Aimer<'a> {
    view: &'a KeyboardView,
    to_controller: Transform,
}

impl Aimer<'_> {
    fn controller(&self, origin: Vec3, dir: Vec3) -> Transform {
        Transform::new(origin, UnitQuat::look_rotation(dir, UP)).compose(&self.to_controller)
    }

    fn reticle(&self, origin: Vec3, dir: Vec3) -> Option<[f64; 2]> {
        self.view.reticle(&self.controller(origin, dir))
    }

    /// Newton on (yaw, pitch) with a finite-difference Jacobian.
    fn aim(&self, origin: Vec3, target: [f64; 2], start: [f64; 2], s: &KeySearch) -> Result<[f64; 2], CalibrationError> {
        let f = |a: [f64; 2]| {
            self.reticle(origin, direction(a[0], a[1])).map(|r| [r[0] - target[0], r[1] - target[1]])
        };
        let mut a = start;
        let mut r = f(a).ok_or_else(|| CalibrationError::NoConvergence("initial aim misses the keyboard".into()))?;
        let h = 1e-7;
        for _ in 0..s.max_newton {
            if r[0].hypot(r[1]) < s.aim_tolerance {
                return Ok(a);
            }
            let (fy, fp) = (f([a[0] + h, a[1]]), f([a[0], a[1] + h]));
            let (Some(fy), Some(fp)) = (fy, fp) else {
                return Err(CalibrationError::NoConvergence("aim left the keyboard plane".into()));
            };
            let j = [[(fy[0] - r[0]) / h, (fp[0] - r[0]) / h], [(fy[1] - r[1]) / h, (fp[1] - r[1]) / h]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let step = [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (j[0][0] * r[1] - j[1][0] * r[0]) / det];
            // Damped: halve until the residual shrinks and the ray still lands.
            let mut lambda = 1.0;
            loop {
                let cand = [a[0] - lambda * step[0], a[1] - lambda * step[1]];
                match f(cand) {
                    Some(rc) if rc[0].hypot(rc[1]) < r[0].hypot(r[1]) => {
                        a = cand;
                        r = rc;
                        break;
                    }
                    _ if lambda < 1e-6 => {
                        return Err(CalibrationError::NoConvergence("aim stalled".into()));
                    }
                    _ => lambda *= 0.5,
                }
            }
        }
        if r[0].hypot(r[1]) < s.aim_tolerance {
            Ok(a)
        } else {
            Err(CalibrationError::NoConvergence(format!("aim residual {:.3e}", r[0].hypot(r[1]))))
        }
    }

    /// Cone-test bisection for the distance to the aimed-at surface point.
    fn distance(&self, origin: Vec3, dir: Vec3, target: [f64; 2], s: &KeySearch) -> Result<f64, CalibrationError> {
        let side = dir.any_perpendicular().normalized() * s.cone_radius;
        let swung = origin + side;
        let translated = self
            .reticle(swung, dir)
            .ok_or_else(|| CalibrationError::NoConvergence("translated ray misses the keyboard".into()))?;
        let reference = [translated[0] - target[0], translated[1] - target[1]];
        let (mut lo, mut hi) = (s.distance_min, s.distance_max);
        while hi - lo >= s.distance_width {
            let mid = (lo + hi) / 2.0;
            let pivot = origin + dir * mid;
            let same_side = match self.reticle(swung, pivot - swung) {
                Some(r) => (r[0] - target[0]) * reference[0] + (r[1] - target[1]) * reference[1] > 0.0,
                // A pivot far past the surface can tilt the swung ray away
                // from the plane only when it is too long.
                None => true,
            };
            if same_side {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok((lo + hi) / 2.0)
    }
}

/// Measures every key's corners with the player at `head`.
/// `controller_to_cursor` is the attacker's own (already measured) offset.
pub fn measure_key_corners(
    view: &KeyboardView,
    head: &Transform,
    controller_to_cursor: &Transform,
    search: &KeySearch,
) -> Result<KeyboardMeasurement, CalibrationError> {
    let aimer = Aimer { view, to_controller: controller_to_cursor.inverse() };
    let controller = head.compose(&search.controller_in_head);
    let origin = controller.compose(controller_to_cursor).position;
    // Initial guess: straight at the middle of where keyboards appear.
    let guess = head.apply_point(Vec3::new(0.0, -0.25, -0.45)) - origin;
    let yaw = (-guess.x).atan2(-guess.z);
    let pitch = guess.y.atan2(guess.x.hypot(guess.z));
    let mut start = [yaw, pitch];

    let mut raw: Vec<(String, u8, [Vec3; 4])> = Vec::new();
    for mark in view.marks() {
        let mut corners = [Vec3::ZERO; 4];
        for (ci, target) in mark.corners.iter().enumerate() {
            let a = aimer.aim(origin, *target, start, search)?;
            start = a;
            let dir = direction(a[0], a[1]);
            let d = aimer.distance(origin, dir, *target, search)?;
            corners[ci] = origin + dir * d;
        }
        raw.push((mark.label, mark.row, corners));
    }

    let all: Vec<Vec3> = raw.iter().flat_map(|(_, _, c)| c.iter().copied()).collect();
    let plane = Plane::fit(&all);
    let plane_residual =
        (all.iter().map(|p| plane.signed_distance(*p).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    let keys = raw
        .into_iter()
        .map(|(label, row, c)| {
            let quad = Quad::new(c.map(|p| plane.project(p)))
                .map_err(|e| CalibrationError::NoConvergence(format!("key {label}: {e}")))?;
            Ok(MeasuredKey { label, row, quad })
        })
        .collect::<Result<_, CalibrationError>>()?;
    Ok(KeyboardMeasurement { head: *head, keys, plane_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleFit {
    pub rule: Transform,
    pub rms_residual: f64,
    pub max_residual: f64,
}

fn check_poses(heads: &[Transform]) -> Result<(), CalibrationError> {
    if heads.len() < 3 {
        return Err(CalibrationError::DegeneratePoses(format!("need at least 3 poses, got {}", heads.len())));
    }
    for (i, a) in heads.iter().enumerate() {
        for b in &heads[i + 1..] {
            let (dp, da) = a.distance_to(b);
            if dp < 1e-6 && da < 1e-6 {
                return Err(CalibrationError::DegeneratePoses("two poses are identical".into()));
            }
        }
    }
    let same_rotation = heads.iter().all(|h| h.rotation.angle_to(heads[0].rotation) < 1e-6);
    let d1 = heads[1].position - heads[0].position;
    let collinear = heads[2..].iter().all(|h| (h.position - heads[0].position).cross(d1).norm() < 1e-9);
    if same_rotation && collinear {
        return Err(CalibrationError::DegeneratePoses("positions collinear with one shared rotation".into()));
    }
    Ok(())
}

/// Kabsch: rigid `T` minimizing `Σ |T(src_i) - dst_i|²`.
pub fn rigid_fit(src: &[Vec3], dst: &[Vec3]) -> Transform {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::ZERO, |a, p| a + *p) / n;
    let cd = dst.iter().fold(Vec3::ZERO, |a, p| a + *p) / n;
    let v = |p: Vec3| Vector3::new(p.x, p.y, p.z);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += v(*s - cs) * v(*d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    let rot = UnitQuat::from_basis(
        Vec3::new(r[(0, 0)], r[(1, 0)], r[(2, 0)]),
        Vec3::new(r[(0, 1)], r[(1, 1)], r[(2, 1)]),
        Vec3::new(r[(0, 2)], r[(1, 2)], r[(2, 2)]),
    );
    Transform::new(cd - rot.rotate(cs), rot)
}

/// Fits the head-to-keyboard rule from measurements at several player
/// poses, registering the measured corners (in each pose's head frame)
/// against the layout asset's keyboard-local corners.
pub fn fit_keyboard_pose_rule(
    measurements: &[KeyboardMeasurement],
    layout: &KeyboardModel,
) -> Result<RuleFit, CalibrationError> {
    check_poses(&measurements.iter().map(|m| m.head).collect::<Vec<_>>())?;
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for m in measurements {
        let to_head = m.head.inverse();
        for k in &m.keys {
            let idx = layout
                .key_by_label(&k.label)
                .ok_or_else(|| CalibrationError::NoCandidate(format!("measured key {} not in layout", k.label)))?;
            for (l, w) in layout.keys()[idx].quad.corners().iter().zip(k.quad.corners()) {
                src.push(*l);
                dst.push(to_head.apply_point(*w));
            }
        }
    }
    if src.len() < 3 {
        return Err(CalibrationError::DegeneratePoses("too few corners".into()));
    }
    let rule = rigid_fit(&src, &dst);
    let res: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| rule.apply_point(*s).distance(*d)).collect();
    Ok(RuleFit {
        rule,
        rms_residual: (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt(),
        max_residual: res.iter().copied().fold(0.0, f64::max),
    })
}

/// Keyboard model in the fitted frame, using the measured geometry averaged
/// over all poses.
pub fn measured_keyboard(measurements: &[KeyboardMeasurement], fit: &RuleFit) -> Result<KeyboardModel, CalibrationError> {
    let first = measurements.first().ok_or_else(|| CalibrationError::DegeneratePoses("no measurements".into()))?;
    let to_local = fit.rule.inverse();
    let mut keys = Vec::with_capacity(first.keys.len());
    for (ki, k) in first.keys.iter().enumerate() {
        let mut acc = [Vec3::ZERO; 4];
        for m in measurements {
            let mk = m
                .keys
                .get(ki)
                .filter(|mk| mk.label == k.label)
                .ok_or_else(|| CalibrationError::NoCandidate("measurements list keys differently".into()))?;
            let to_head = m.head.inverse();
            for (a, c) in acc.iter_mut().zip(mk.quad.corners()) {
                *a += to_local.apply_point(to_head.apply_point(*c));
            }
        }
        let n = measurements.len() as f64;
        let corners = acc.map(|a| a / n);
        let plane = Plane::fit(&corners);
        let quad = Quad::new(corners.map(|c| plane.project(c)))
            .map_err(|e| CalibrationError::NoConvergence(format!("key {}: {e}", k.label)))?;
        let ch = if k.label == "space" { ' ' } else { k.label.chars().next().unwrap_or('?') };
        keys.push(Key { label: k.label.clone(), ch, row: k.row, center: quad.center(), quad });
    }
    KeyboardModel::new(keys, fit.rule).map_err(|e| CalibrationError::NoCandidate(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::{default_cursor_offset, CONTROLLER_TO_HAND};

    fn truth_cursor() -> Transform {
        CONTROLLER_TO_HAND.compose(&default_cursor_offset())
    }

    fn pose(x: f64, yaw: f64) -> Transform {
        Transform::new(Vec3::new(x, 1.6, 0.3 * x), UnitQuat::from_axis_angle(UP, yaw))
    }

    #[test]
    fn corners_match_layout() {
        let kb = KeyboardModel::default_layout();
        let head = pose(0.3, 0.4);
        let view = KeyboardView::new(&kb, &head, truth_cursor());
        let m = measure_key_corners(&view, &head, &truth_cursor(), &KeySearch::default()).unwrap();
        let placed = kb.placement(&head);
        let mut worst: f64 = 0.0;
        for (mk, k) in m.keys.iter().zip(kb.keys()) {
            for (a, b) in mk.quad.corners().iter().zip(k.quad.transformed(&placed).corners()) {
                worst = worst.max(a.distance(*b));
            }
        }
        assert_eq!(m.keys.len(), 47);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn corner_on_ray_distance() {
        // A surface point straight down the cursor ray at a known distance.
        let kb = KeyboardModel::default_layout();
        let head = Transform::IDENTITY;
        let view = KeyboardView::new(&kb, &head, Transform::IDENTITY);
        let aimer = Aimer { view: &view, to_controller: Transform::IDENTITY };
        let origin = Vec3::new(0.0, 0.0, 0.0);
        let target_world = kb.placement(&head).apply_point(Vec3::new(0.01, 0.02, 0.0));
        let d_true = target_world.norm();
        let dir = target_world / d_true;
        let r = aimer.reticle(origin, dir).unwrap();
        let d = aimer.distance(origin, dir, r, &KeySearch::default()).unwrap();
        assert!((d - d_true).abs() <= 1e-4 * d_true);
    }

    #[test]
    fn rule_fit_and_degenerate_poses() {
        let kb = KeyboardModel::default_layout();
        let heads = [pose(0.0, 0.0), pose(0.5, 0.7), pose(-0.4, -0.5)];
        let ms: Vec<_> = heads
            .iter()
            .map(|h| {
                let view = KeyboardView::new(&kb, h, truth_cursor());
                measure_key_corners(&view, h, &truth_cursor(), &KeySearch::default()).unwrap()
            })
            .collect();
        let fit = fit_keyboard_pose_rule(&ms, &kb).unwrap();
        assert!(fit.max_residual < 1e-6, "{fit:?}");
        let (dp, da) = fit.rule.distance_to(&kb.pose_rule());
        assert!(dp < 1e-6 && da < 1e-6);

        let model = measured_keyboard(&ms, &fit).unwrap();
        let holdout = pose(1.0, 1.2);
        let placed_true = kb.placement(&holdout);
        let placed_fit = model.placement(&holdout);
        for (a, b) in model.keys().iter().zip(kb.keys()) {
            assert!(placed_fit.apply_point(a.center).distance(placed_true.apply_point(b.center)) < 1e-3);
        }

        let same = vec![ms[0].clone(), ms[0].clone(), ms[1].clone()];
        assert!(matches!(fit_keyboard_pose_rule(&same, &kb), Err(CalibrationError::DegeneratePoses(_))));
        assert!(matches!(fit_keyboard_pose_rule(&ms[..2], &kb), Err(CalibrationError::DegeneratePoses(_))));
    }
}
