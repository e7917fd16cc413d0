//! Pinhole camera, SE(3) kinematics and their analytic Jacobians.
//!
//! Rotations are axis-angle vectors mapped through Rodrigues' formula. A pose
//! maps points of one camera frame into another: `p' = R(r) p + t`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid::{DepthMap, Grid, Mask};
use crate::math::{self, Mat3, Vec3, IDENTITY};

/// Projections with `z <= Z_EPS` (meters) are invalid.
pub const Z_EPS: f64 = 1e-6;

/// Per-pixel residual translation field (meters), one 3-vector per pixel.
pub type MotionMap = Grid<Vec3>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with focal `focal` for both axes and the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(invalid!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx,
                self.cy,
                self.width,
                self.height
            ));
        }
        Ok(())
    }

    /// Intrinsics for an image downsampled by the integer `factor` with box filtering.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + 0.5) / f - 0.5,
            cy: (self.cy + 0.5) / f - 0.5,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Unit-depth ray through pixel `(i, j)`.
    #[inline]
    pub fn ray(&self, i: usize, j: usize) -> Vec3 {
        [(j as f64 - self.cx) / self.fx, (i as f64 - self.cy) / self.fy, 1.0]
    }

    /// Ray through fractional pixel coordinates `(u, v)`.
    #[inline]
    pub fn ray_uv(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// `(u, v)` of a point, or `None` when `z <= Z_EPS`.
    #[inline]
    pub fn project_point(&self, p: Vec3) -> Option<(f64, f64)> {
        if p[2] <= Z_EPS {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }

    /// Rows of `d(u, v) / dp`.
    #[inline]
    pub fn projection_jacobian(&self, p: Vec3) -> [Vec3; 2] {
        let iz = 1.0 / p[2];
        [
            [self.fx * iz, 0.0, -self.fx * p[0] * iz * iz],
            [0.0, self.fy * iz, -self.fy * p[1] * iz * iz],
        ]
    }
}

/// Rodrigues' formula.
pub fn rotation_matrix(r: Vec3) -> Mat3 {
    let theta2 = math::dot(r, r);
    let (a, b) = if theta2 < 1e-8 {
        // sin(t)/t and (1 - cos t)/t^2 by Taylor series
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        let theta = libm::sqrt(theta2);
        (libm::sin(theta) / theta, (1.0 - libm::cos(theta)) / theta2)
    };
    let k = math::skew(r);
    let k2 = math::mat_mul(&k, &k);
    math::mat_add(&math::mat_add(&IDENTITY, &math::mat_scale(&k, a)), &math::mat_scale(&k2, b))
}

/// Inverse of [`rotation_matrix`], returning the representative with `|r| <= pi`.
pub fn rotation_log(m: &Mat3) -> Vec3 {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = libm::acos(cos_theta);
    let w = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if theta < 1e-6 {
        return math::scale(w, 0.5 * (1.0 + theta * theta / 6.0));
    }
    if PI - theta > 1e-4 {
        return math::scale(w, theta / (2.0 * libm::sin(theta)));
    }
    // Near pi: axis from the symmetric part, sign from the antisymmetric part.
    let b = [
        [(m[0][0] - cos_theta) / (1.0 - cos_theta), 0.0, 0.0],
        [0.0, (m[1][1] - cos_theta) / (1.0 - cos_theta), 0.0],
        [0.0, 0.0, (m[2][2] - cos_theta) / (1.0 - cos_theta)],
    ];
    let k = (0..3).max_by(|&x, &y| b[x][x].total_cmp(&b[y][y])).unwrap_or(0);
    let mut axis = [0.0; 3];
    axis[k] = libm::sqrt(b[k][k].max(0.0));
    for j in 0..3 {
        if j != k {
            axis[j] = (m[k][j] + m[j][k]) / (2.0 * (1.0 - cos_theta) * axis[k]);
        }
    }
    let n = math::norm(axis);
    axis = math::scale(axis, 1.0 / n);
    if math::dot(axis, w) < 0.0 {
        axis = math::scale(axis, -1.0);
    }
    math::scale(axis, theta)
}

/// Right Jacobian of SO(3) at `r`.
pub fn right_jacobian(r: Vec3) -> Mat3 {
    let theta2 = math::dot(r, r);
    let (a, b) = if theta2 < 1e-6 {
        (0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0, 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0)
    } else {
        let theta = libm::sqrt(theta2);
        ((1.0 - libm::cos(theta)) / theta2, (theta - libm::sin(theta)) / (theta2 * theta))
    };
    let k = math::skew(r);
    let k2 = math::mat_mul(&k, &k);
    math::mat_add(&math::mat_sub(&IDENTITY, &math::mat_scale(&k, a)), &math::mat_scale(&k2, b))
}

/// `d(R(r) p) / dr = -R(r) [p]x J_r(r)`.
pub fn rotation_jacobian(r: Vec3, rot: &Mat3, p: Vec3) -> Mat3 {
    let m = math::mat_mul(rot, &math::skew(p));
    math::neg(&math::mat_mul(&m, &right_jacobian(r)))
}

/// Rigid motion `p' = R(r) p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseSE3 {
    /// Axis-angle rotation (radians).
    pub r: Vec3,
    /// Translation (meters).
    pub t: Vec3,
}

impl PoseSE3 {
    pub const IDENTITY: Self = Self { r: [0.0; 3], t: [0.0; 3] };

    pub fn new(r: Vec3, t: Vec3) -> Self {
        Self { r, t }
    }

    pub fn rotation(&self) -> Mat3 {
        rotation_matrix(self.r)
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        math::add(math::mat_vec(&self.rotation(), p), self.t)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        let ra = self.rotation();
        let rot = math::mat_mul(&ra, &other.rotation());
        PoseSE3 { r: rotation_log(&rot), t: math::add(math::mat_vec(&ra, other.t), self.t) }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = math::transpose(&self.rotation());
        PoseSE3 { r: math::scale(self.r, -1.0), t: math::scale(math::mat_vec(&rt, self.t), -1.0) }
    }

    /// Same motion with the rotation vector wrapped to `|r| <= pi`.
    pub fn canonical(&self) -> PoseSE3 {
        PoseSE3 { r: rotation_log(&self.rotation()), t: self.t }
    }

    /// Pulls a gradient taken w.r.t. the parameters of `self.inverse()` back onto `self`.
    ///
    /// `inverse()` has `r_inv = -r` and `t_inv = -R(-r) t`.
    pub fn inverse_vjp(&self, d_r_inv: Vec3, d_t_inv: Vec3) -> (Vec3, Vec3) {
        let neg_r = math::scale(self.r, -1.0);
        let rot_inv = rotation_matrix(neg_r);
        // d t_inv / d r = J(-r, t) where J(s, q) = d(R(s) q)/ds
        let jt = rotation_jacobian(neg_r, &rot_inv, self.t);
        let d_r = math::add(math::scale(d_r_inv, -1.0), math::vec_mat(d_t_inv, &jt));
        let d_t = math::scale(math::vec_mat(d_t_inv, &rot_inv), -1.0);
        (d_r, d_t)
    }
}

/// Camera-frame points aligned to an image grid, with a validity flag per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Grid<Vec3>,
    pub valid: Mask,
}

/// Projected coordinates `(u, v)` and depth `z` per source pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    pub u: Grid<f64>,
    pub v: Grid<f64>,
    pub z: Grid<f64>,
    pub valid: Mask,
}

/// Lifts every pixel of `depth` to a 3D point.
///
/// `valid` restricts which pixels must carry positive depth; pass `None` to
/// require it everywhere.
pub fn backproject(depth: &DepthMap, cam: &CameraModel, valid: Option<&Mask>) -> Result<PointCloud> {
    if depth.height() != cam.height || depth.width() != cam.width {
        return Err(invalid!(
            "depth map {}x{} does not match camera {}x{}",
            depth.height(),
            depth.width(),
            cam.height,
            cam.width
        ));
    }
    let valid = match valid {
        Some(m) => m.clone(),
        None => Grid::new(depth.height(), depth.width(), true),
    };
    let mut points = Grid::new(depth.height(), depth.width(), [0.0; 3]);
    for i in 0..depth.height() {
        for j in 0..depth.width() {
            if !valid.at(i, j) {
                continue;
            }
            let d = depth.at(i, j);
            if !(d > 0.0) {
                return Err(invalid!("non-positive depth {} at pixel ({}, {})", d, i, j));
            }
            *points.get_mut(i, j) = math::scale(cam.ray(i, j), d);
        }
    }
    Ok(PointCloud { points, valid })
}

/// `p' = R p + t + T_motion(i, j)`.
pub fn transform(points: &PointCloud, pose: &PoseSE3, motion: Option<&MotionMap>) -> Result<PointCloud> {
    if let Some(m) = motion {
        if !m.same_shape(&points.points) {
            return Err(invalid!("motion map is not aligned with the point grid"));
        }
    }
    let rot = pose.rotation();
    let mut out = points.points.clone();
    for (k, p) in out.data_mut().iter_mut().enumerate() {
        let mut q = math::add(math::mat_vec(&rot, *p), pose.t);
        if let Some(m) = motion {
            q = math::add(q, m.data()[k]);
        }
        *p = q;
    }
    Ok(PointCloud { points: out, valid: points.valid.clone() })
}

pub fn project(points: &PointCloud, cam: &CameraModel) -> PixelGrid {
    let (h, w) = (points.points.height(), points.points.width());
    let mut u = Grid::new(h, w, 0.0);
    let mut v = Grid::new(h, w, 0.0);
    let mut z = Grid::new(h, w, 0.0);
    let mut valid = Grid::new(h, w, false);
    for k in 0..h * w {
        let p = points.points.data()[k];
        z.data_mut()[k] = p[2];
        if !points.valid.data()[k] {
            continue;
        }
        if let Some((pu, pv)) = cam.project_point(p) {
            u.data_mut()[k] = pu;
            v.data_mut()[k] = pv;
            valid.data_mut()[k] = true;
        }
    }
    PixelGrid { u, v, z, valid }
}

/// Derivatives of a transformed point w.r.t. the pose and the owning motion vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointJacobian {
    pub d_rotation: Mat3,
    pub d_translation: Mat3,
    pub d_motion: Mat3,
}

pub fn pose_jacobians(points: &PointCloud, pose: &PoseSE3) -> Grid<PointJacobian> {
    let rot = pose.rotation();
    points.points.map(|p| PointJacobian {
        d_rotation: rotation_jacobian(pose.r, &rot, *p),
        d_translation: IDENTITY,
        d_motion: IDENTITY,
    })
}

/// Per-point pose Jacobians as a flat list, for callers that do not need the grid.
pub fn rotation_jacobians(points: &[Vec3], pose: &PoseSE3) -> Vec<Mat3> {
    let rot = pose.rotation();
    points.iter().map(|p| rotation_jacobian(pose.r, &rot, *p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 90.0, 20.5, 10.0, 40, 24).unwrap()
    }

    #[test]
    fn camera_invariants_are_checked() {
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(CameraModel::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn principal_point_ray() {
        let c = CameraModel::new(50.0, 50.0, 3.0, 2.0, 8, 6).unwrap();
        let d = Grid::new(6, 8, 1.0);
        let pc = backproject(&d, &c, None).unwrap();
        assert_eq!(pc.points.at(2, 3), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn backproject_forced_arithmetic() {
        let c = CameraModel::new(1.0, 1.0, 0.0, 0.0, 4, 1).unwrap();
        let d = Grid::new(1, 4, 2.0);
        let pc = backproject(&d, &c, None).unwrap();
        assert_eq!(pc.points.at(0, 3), [6.0, 0.0, 2.0]);
    }

    #[test]
    fn backproject_rejects_non_positive_depth() {
        let mut d = Grid::new(24, 40, 1.0);
        *d.get_mut(3, 4) = 0.0;
        let err = backproject(&d, &cam(), None).unwrap_err();
        assert!(alloc::format!("{err}").contains("(3, 4)"));
        let mut mask = Grid::new(24, 40, true);
        *mask.get_mut(3, 4) = false;
        assert!(backproject(&d, &cam(), Some(&mask)).is_ok());
    }

    #[test]
    fn transform_identity_and_shift() {
        let d = Grid::from_fn(24, 40, |i, j| 1.0 + 0.1 * (i + j) as f64);
        let pc = backproject(&d, &cam(), None).unwrap();
        let same = transform(&pc, &PoseSE3::IDENTITY, None).unwrap();
        assert_eq!(same, pc);
        let zero = Grid::new(24, 40, [0.0; 3]);
        let shifted = transform(&pc, &PoseSE3::new([0.0; 3], [1.0, 0.0, 0.0]), Some(&zero)).unwrap();
        for (a, b) in pc.points.data().iter().zip(shifted.points.data()) {
            assert_eq!(b[0], a[0] + 1.0);
            assert_eq!((b[1], b[2]), (a[1], a[2]));
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let pose = PoseSE3::new([0.0, 0.0, PI / 2.0], [0.0; 3]);
        let p = pose.apply([1.0, 0.0, 0.0]);
        assert!(norm(math::sub(p, [0.0, 1.0, 0.0])) < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let c = CameraModel::new(1.0, 1.0, 0.0, 0.0, 2, 2).unwrap();
        assert_eq!(c.project_point([0.0, 0.0, 1.0]), Some((0.0, 0.0)));
        let c = CameraModel::new(100.0, 100.0, 50.0, 0.0, 101, 2).unwrap();
        assert_eq!(c.project_point([0.5, 0.0, 1.0]).unwrap().0, 100.0);
        assert_eq!(c.project_point([0.0, 0.0, 1e-12]), None);
    }

    #[test]
    fn rotation_jacobian_small_angle_limit() {
        let p = [0.3, -1.2, 2.0];
        let j = rotation_jacobian([0.0; 3], &IDENTITY, p);
        assert_eq!(j, math::neg(&math::skew(p)));
    }

    #[test]
    fn log_handles_near_pi() {
        let r = math::scale([0.0, 0.6, 0.8], PI - 1e-7);
        let back = rotation_log(&rotation_matrix(r));
        assert!(norm(math::sub(r, back)) < 1e-6, "{back:?}");
    }

    #[test]
    fn inverse_vjp_matches_finite_differences() {
        let pose = PoseSE3::new([0.2, -0.4, 0.1], [0.5, -1.0, 2.0]);
        // scalar function of the inverse's parameters: f = w . (R_inv q + t_inv)
        let w = [0.3, -0.7, 1.1];
        let q = [1.0, 2.0, 3.0];
        let f = |p: &PoseSE3| math::dot(w, p.inverse().apply(q));
        let inv = pose.inverse();
        let rot_inv = inv.rotation();
        let d_r_inv = math::vec_mat(w, &rotation_jacobian(inv.r, &rot_inv, q));
        let (d_r, d_t) = pose.inverse_vjp(d_r_inv, w);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = pose;
            let mut b = pose;
            a.r[k] += h;
            b.r[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - d_r[k]).abs() < 1e-8 * (1.0 + fd.abs()), "r{k}: {fd} vs {}", d_r[k]);
            let mut a = pose;
            let mut b = pose;
            a.t[k] += h;
            b.t[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - d_t[k]).abs() < 1e-8 * (1.0 + fd.abs()), "t{k}: {fd} vs {}", d_t[k]);
        }
    }
}
