//! Rigid-body math used across the lab: vectors, unit quaternions, poses,
//! rays and planar key quads.
//!
//! Frame convention: right-handed, y up, meters. A pose "points" along its
//! local -z axis ([`FORWARD`]).

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Local pointing direction of every pose (cursor, head, controller).
pub const FORWARD: Vec3 = Vec3::new(0.0, 0.0, -1.0);
/// Local up direction.
pub const UP: Vec3 = Vec3::new(0.0, 1.0, 0.0);

const QUAD_COPLANAR_TOL: f64 = 1e-7;
const QUAD_MIN_AREA: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quad corners are not coplanar (residual {0:e} m)")]
    NonCoplanar(f64),
    #[error("quad is degenerate (area {0:e} m^2)")]
    Degenerate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    /// Component by axis index (0 = x, 1 = y, 2 = z).
    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {i} out of range"),
        }
    }

    pub fn with_axis(mut self, i: usize, v: f64) -> Vec3 {
        match i {
            0 => self.x = v,
            1 => self.y = v,
            2 => self.z = v,
            _ => panic!("axis index {i} out of range"),
        }
        self
    }

    /// Any unit vector perpendicular to `self`.
    pub fn any_perpendicular(self) -> Vec3 {
        let n = self.normalized();
        let helper = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
        n.cross(helper).normalized()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation as a unit quaternion, kept in the `w >= 0` hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes and canonicalizes raw components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        UnitQuat { w: w * s, x: x * s, y: y * s, z: z * s }
    }

    /// Trusts the caller that the components are already unit-norm.
    pub(crate) fn from_unit_components(w: f64, x: f64, y: f64, z: f64) -> Self {
        if w < 0.0 {
            UnitQuat { w: -w, x: -x, y: -y, z: -z }
        } else {
            UnitQuat { w, x, y, z }
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (angle * 0.5).sin_cos();
        UnitQuat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Shortest-arc rotation taking unit direction `from` onto `to`.
    pub fn between(from: Vec3, to: Vec3) -> Self {
        let f = from.normalized();
        let t = to.normalized();
        let d = f.dot(t);
        if d < -1.0 + 1e-12 {
            return UnitQuat::from_axis_angle(f.any_perpendicular(), std::f64::consts::PI);
        }
        let c = f.cross(t);
        UnitQuat::new(1.0 + d, c.x, c.y, c.z)
    }

    /// Rotation whose [`FORWARD`] maps to `forward` and whose up is as close
    /// to `up_hint` as possible.
    pub fn look_rotation(forward: Vec3, up_hint: Vec3) -> Self {
        let f = forward.normalized();
        let mut right = f.cross(up_hint);
        if right.norm() < 1e-9 {
            right = f.any_perpendicular();
        }
        let right = right.normalized();
        let up = right.cross(f);
        // Columns of the rotation matrix are the images of local x, y, z.
        let back = -f;
        UnitQuat::from_basis(right, up, back)
    }

    /// Quaternion from an orthonormal right-handed basis (images of x, y, z).
    pub fn from_basis(xa: Vec3, ya: Vec3, za: Vec3) -> Self {
        let (m00, m01, m02) = (xa.x, ya.x, za.x);
        let (m10, m11, m12) = (xa.y, ya.y, za.y);
        let (m20, m21, m22) = (xa.z, ya.z, za.z);
        let trace = m00 + m11 + m22;
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            UnitQuat::new(0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            UnitQuat::new((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            UnitQuat::new((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            UnitQuat::new((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
        }
    }

    pub fn components(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.components().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn conjugate(self) -> Self {
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Rotation angle between `self` and `other`, radians in `[0, pi]`.
    pub fn angle_to(self, other: UnitQuat) -> f64 {
        let d = self.components().iter().zip(other.components()).map(|(a, b)| a * b).sum::<f64>();
        2.0 * d.abs().min(1.0).acos()
    }

    /// Hamilton product `self * rhs` (apply `rhs` first), renormalized.
    pub fn mul(self, r: UnitQuat) -> UnitQuat {
        let (a, b) = (self, r);
        UnitQuat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(self, other: UnitQuat, t: f64) -> UnitQuat {
        let mut o = other.components();
        let a = self.components();
        let mut d: f64 = a.iter().zip(o.iter()).map(|(p, q)| p * q).sum();
        if d < 0.0 {
            o.iter_mut().for_each(|c| *c = -*c);
            d = -d;
        }
        if d > 0.9995 {
            let c: Vec<f64> = a.iter().zip(o.iter()).map(|(p, q)| p + (q - p) * t).collect();
            return UnitQuat::new(c[0], c[1], c[2], c[3]);
        }
        let theta = d.acos();
        let s = theta.sin();
        let (wa, wb) = (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s);
        UnitQuat::new(
            a[0] * wa + o[0] * wb,
            a[1] * wa + o[1] * wb,
            a[2] * wa + o[2] * wb,
            a[3] * wa + o[3] * wb,
        )
    }
}

/// 6DOF pose: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    pub position: Vec3,
    pub rotation: UnitQuat,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { position: Vec3::ZERO, rotation: UnitQuat::IDENTITY };

    pub fn new(position: Vec3, rotation: UnitQuat) -> Self {
        Self { position, rotation }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuat::IDENTITY)
    }

    pub fn rotation(rotation: UnitQuat) -> Self {
        Self::new(Vec3::ZERO, rotation)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            position: self.position + self.rotation.rotate(other.position),
            rotation: self.rotation.mul(other.rotation),
        }
    }

    pub fn inverse(&self) -> Transform {
        let inv = self.rotation.conjugate();
        Transform { position: -inv.rotate(self.position), rotation: inv }
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.position + self.rotation.rotate(p)
    }

    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.rotate(FORWARD)
    }

    /// The pointing ray of this pose.
    pub fn ray(&self) -> Ray {
        Ray::new(self.position, self.forward())
    }

    /// Max of translation distance and rotation angle (radians) to `other`;
    /// handy for tolerance checks.
    pub fn distance_to(&self, other: &Transform) -> (f64, f64) {
        (self.position.distance(other.position), self.rotation.angle_to(other.rotation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction: direction.normalized() }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Point where a ray meets a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    pub distance: f64,
}

/// Infinite plane through `point` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(point: Vec3, normal: Vec3) -> Self {
        Self { point, normal: normal.normalized() }
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.point).dot(self.normal)
    }

    pub fn project(&self, p: Vec3) -> Vec3 {
        p - self.normal * self.signed_distance(p)
    }

    /// Forward intersection (`distance > 0`); `None` when parallel or behind.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let denom = self.normal.dot(ray.direction);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.point - ray.origin).dot(self.normal) / denom;
        if t <= 0.0 || !t.is_finite() {
            return None;
        }
        Some(Hit { point: ray.at(t), distance: t })
    }

    /// Least-squares plane through a point cloud (needs 3+ non-collinear points).
    pub fn fit(points: &[Vec3]) -> Plane {
        let n = points.len() as f64;
        let centroid = points.iter().fold(Vec3::ZERO, |acc, p| acc + *p) / n;
        let mut cov = nalgebra::Matrix3::<f64>::zeros();
        for p in points {
            let d = *p - centroid;
            let v = nalgebra::Vector3::new(d.x, d.y, d.z);
            cov += v * v.transpose();
        }
        let eig = cov.symmetric_eigen();
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("3x3 has eigenvalues");
        let col = eig.eigenvectors.column(idx);
        Plane::new(centroid, Vec3::new(col[0], col[1], col[2]))
    }
}

/// Planar convex quad, corners counterclockwise seen from the side its
/// normal points to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    corners: [Vec3; 4],
}

impl Quad {
    pub fn new(corners: [Vec3; 4]) -> Result<Self, GeometryError> {
        let q = Quad { corners };
        let area = q.area();
        if !(area > QUAD_MIN_AREA) {
            return Err(GeometryError::Degenerate(area));
        }
        let residual = q.coplanarity_residual();
        if residual >= QUAD_COPLANAR_TOL {
            return Err(GeometryError::NonCoplanar(residual));
        }
        Ok(q)
    }

    /// Axis-aligned square of side `side` centered on `center`, normal +z.
    pub fn square_xy(center: Vec3, side: f64) -> Self {
        let h = side / 2.0;
        Quad {
            corners: [
                center + Vec3::new(-h, -h, 0.0),
                center + Vec3::new(h, -h, 0.0),
                center + Vec3::new(h, h, 0.0),
                center + Vec3::new(-h, h, 0.0),
            ],
        }
    }

    pub fn corners(&self) -> &[Vec3; 4] {
        &self.corners
    }

    pub fn center(&self) -> Vec3 {
        self.corners.iter().fold(Vec3::ZERO, |a, c| a + *c) / 4.0
    }

    /// Newell normal (unit).
    pub fn normal(&self) -> Vec3 {
        let mut n = Vec3::ZERO;
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            n += Vec3::new((a.y - b.y) * (a.z + b.z), (a.z - b.z) * (a.x + b.x), (a.x - b.x) * (a.y + b.y));
        }
        n.normalized()
    }

    pub fn plane(&self) -> Plane {
        Plane::new(self.center(), self.normal())
    }

    pub fn area(&self) -> f64 {
        let c = &self.corners;
        let a1 = (c[1] - c[0]).cross(c[2] - c[0]).norm();
        let a2 = (c[2] - c[0]).cross(c[3] - c[0]).norm();
        0.5 * (a1 + a2)
    }

    pub fn coplanarity_residual(&self) -> f64 {
        let plane = self.plane();
        self.corners.iter().map(|c| plane.signed_distance(*c).abs()).fold(0.0, f64::max)
    }

    pub fn transformed(&self, t: &Transform) -> Quad {
        Quad { corners: self.corners.map(|c| t.apply_point(c)) }
    }

    /// Inclusive point-in-quad test for a point already on the plane.
    pub fn contains_coplanar(&self, p: Vec3) -> bool {
        let n = self.normal();
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            (b - a).cross(p - a).dot(n) >= -1e-12
        })
    }
}

/// Forward hit of `ray` inside `quad`, or `None` (miss, parallel, behind).
pub fn ray_quad_intersect(ray: &Ray, quad: &Quad) -> Option<Hit> {
    let hit = quad.plane().intersect(ray)?;
    quad.contains_coplanar(hit.point).then_some(hit)
}

/// In-plane distance between `p` and a key `center`, both projected onto the
/// quad's plane.
pub fn point_to_quad_plane_projection_distance(p: Vec3, quad: &Quad, center: Vec3) -> f64 {
    let plane = quad.plane();
    plane.project(p).distance(plane.project(center))
}

/// Minimum-jerk easing `10t^3 - 15t^4 + 6t^5` on `[0, 1]`.
pub fn min_jerk(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> Transform {
        let p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let q = UnitQuat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Transform::new(p, q)
    }

    #[test]
    fn compose_identity_is_noop() {
        let t = Transform::new(Vec3::new(1.0, 2.0, 3.0), UnitQuat::from_axis_angle(UP, 0.3));
        let c = Transform::IDENTITY.compose(&t);
        assert!(close(c.position, t.position, 1e-12));
        assert!(c.rotation.angle_to(t.rotation) < 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Transform::new(Vec3::new(-0.4, 1.6, 2.0), UnitQuat::new(0.9, 0.1, -0.3, 0.2));
        let c = t.compose(&t.inverse());
        assert!(c.position.norm() < 1e-7);
        assert!(c.rotation.angle_to(UnitQuat::IDENTITY) < 1e-7);
    }

    #[test]
    fn pure_translations_add() {
        let c = Transform::translation(1.0, 0.0, 0.0).compose(&Transform::translation(0.0, 2.0, 0.0));
        assert_eq!(c.position, Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(c.rotation, UnitQuat::IDENTITY);
    }

    #[test]
    fn ray_hits_quad_center() {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, -1.0));
        let quad = Quad::square_xy(Vec3::new(0.0, 0.0, -1.0), 0.03);
        let hit = ray_quad_intersect(&ray, &quad).expect("center hit");
        assert!(close(hit.point, Vec3::new(0.0, 0.0, -1.0), 1e-12));
        assert!((hit.distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_misses_offset_quad() {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, -1.0));
        let quad = Quad::square_xy(Vec3::new(0.1, 0.0, -1.0), 0.03);
        assert!(ray_quad_intersect(&ray, &quad).is_none());
    }

    #[test]
    fn parallel_ray_misses() {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0));
        let quad = Quad::square_xy(Vec3::new(0.0, 0.0, -1.0), 0.03);
        assert!(ray_quad_intersect(&ray, &quad).is_none());
    }

    #[test]
    fn quad_behind_origin_is_not_hit() {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let quad = Quad::square_xy(Vec3::new(0.0, 0.0, -1.0), 0.03);
        assert!(ray_quad_intersect(&ray, &quad).is_none());
    }

    #[test]
    fn in_plane_distances() {
        let quad = Quad::square_xy(Vec3::new(0.0, 0.0, -1.0), 0.03);
        let c = quad.center();
        assert_eq!(point_to_quad_plane_projection_distance(c, &quad, c), 0.0);
        let next = c + Vec3::new(0.032, 0.0, 0.0);
        assert!((point_to_quad_plane_projection_distance(next, &quad, c) - 0.032).abs() < 1e-12);
        let mid = c + Vec3::new(0.016, 0.0, 0.0);
        assert!((point_to_quad_plane_projection_distance(mid, &quad, next) - 0.016).abs() < 1e-12);
    }

    #[test]
    fn quad_validation() {
        let flat = [Vec3::ZERO, Vec3::new(1e-5, 0.0, 0.0), Vec3::new(2e-5, 0.0, 0.0), Vec3::new(3e-5, 0.0, 0.0)];
        assert!(matches!(Quad::new(flat), Err(GeometryError::Degenerate(_))));
        let bent = [
            Vec3::ZERO,
            Vec3::new(0.03, 0.0, 0.0),
            Vec3::new(0.03, 0.03, 0.001),
            Vec3::new(0.0, 0.03, 0.0),
        ];
        assert!(matches!(Quad::new(bent), Err(GeometryError::NonCoplanar(_))));
        let sq = Quad::square_xy(Vec3::ZERO, 0.03);
        assert!(Quad::new(*sq.corners()).is_ok());
        assert!(close(sq.normal(), Vec3::new(0.0, 0.0, 1.0), 1e-12));
    }

    #[test]
    fn look_rotation_points_forward() {
        let dir = Vec3::new(0.3, -0.5, -0.8).normalized();
        let q = UnitQuat::look_rotation(dir, UP);
        assert!(close(q.rotate(FORWARD), dir, 1e-12));
        let up = q.rotate(UP);
        assert!(up.dot(dir).abs() < 1e-12);
        assert!(up.y > 0.0);
    }

    #[test]
    fn between_maps_directions() {
        let a = Vec3::new(0.0, 0.0, -1.0);
        let b = Vec3::new(0.2, 0.1, -0.9).normalized();
        assert!(close(UnitQuat::between(a, b).rotate(a), b, 1e-12));
        assert!(close(UnitQuat::between(a, -a).rotate(a), -a, 1e-12));
    }

    #[test]
    fn group_laws_on_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (a, b, c) = (random_transform(&mut rng), random_transform(&mut rng), random_transform(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            let (dp, dr) = left.distance_to(&right);
            assert!(dp < 1e-6 && dr < 1e-6, "associativity {dp} {dr}");
            let id = a.compose(&a.inverse());
            assert!(id.position.norm() < 1e-6);
            assert!(id.rotation.angle_to(UnitQuat::IDENTITY) < 1e-6);
            let id2 = a.inverse().compose(&a);
            assert!(id2.position.norm() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_length(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            vx in -10.0f64..10.0, vy in -10.0f64..10.0, vz in -10.0f64..10.0,
        ) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-3);
            let v = Vec3::new(vx, vy, vz);
            prop_assume!(v.norm() <= 10.0);
            let q = UnitQuat::new(w, x, y, z);
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            prop_assert!(q.w >= 0.0);
            prop_assert!((q.rotate(v).norm() - v.norm()).abs() < 1e-7);
        }

        #[test]
        fn hits_satisfy_plane_equation(
            ox in -0.5f64..0.5, oy in -0.5f64..0.5, oz in 0.1f64..1.0,
            tx in -0.02f64..0.02, ty in -0.02f64..0.02,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0,
        ) {
            let rot = UnitQuat::from_axis_angle(Vec3::new(ax, ay, 0.3), 0.7);
            let quad = Quad::square_xy(Vec3::ZERO, 0.05).transformed(&Transform::new(Vec3::new(0.1, 1.0, -0.4), rot));
            let target = quad.center() + rot.rotate(Vec3::new(tx, ty, 0.0));
            let origin = quad.center() + rot.rotate(Vec3::new(ox, oy, oz));
            let ray = Ray::new(origin, target - origin);
            let hit = ray_quad_intersect(&ray, &quad);
            prop_assert!(hit.is_some());
            let hit = hit.unwrap();
            prop_assert!(quad.plane().signed_distance(hit.point).abs() < 1e-7);
            prop_assert!(hit.point.distance(target) < 1e-9);
        }
    }
}
