//! Inverse-warp view synthesis.
//!
//! Every target pixel is lifted with its depth, moved by the pose (and the
//! optional per-pixel motion), projected into the source camera and the source
//! image is sampled bilinearly there. Samples outside the image read zeros and
//! are flagged invalid; the sampled value stays continuous across the border.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{self, CameraModel, MotionMap, PoseSE3};
use crate::grid::{DepthMap, Grid, Image, Mask};
use crate::math::{self, Vec3};

/// Slack on the in-view test so that identity warps keep border pixels.
const BORDER_EPS: f64 = 1e-9;

/// Bilinear sample with zero padding; returns value and `(d/du, d/dv)`.
#[inline]
pub fn sample_zero_padded(img: &Image, u: f64, v: f64) -> (f64, f64, f64) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let j0f = libm::floor(u);
    let i0f = libm::floor(v);
    let fx = u - j0f;
    let fy = v - i0f;
    let j0 = j0f as isize;
    let i0 = i0f as isize;
    let px = |i: isize, j: isize| -> f64 {
        if i >= 0 && i < h && j >= 0 && j < w {
            img.data()[(i * w + j) as usize]
        } else {
            0.0
        }
    };
    let p00 = px(i0, j0);
    let p01 = px(i0, j0 + 1);
    let p10 = px(i0 + 1, j0);
    let p11 = px(i0 + 1, j0 + 1);
    let top = p00 + fx * (p01 - p00);
    let bot = p10 + fx * (p11 - p10);
    let value = top + fy * (bot - top);
    let du = (1.0 - fy) * (p01 - p00) + fy * (p11 - p10);
    let dv = bot - top;
    (value, du, dv)
}

/// Bilinear sample with coordinates clamped into the image.
#[inline]
pub fn sample_clamped(img: &Grid<f64>, u: f64, v: f64) -> f64 {
    let u = u.clamp(0.0, (img.width() - 1) as f64);
    let v = v.clamp(0.0, (img.height() - 1) as f64);
    let j0 = libm::floor(u) as usize;
    let i0 = libm::floor(v) as usize;
    let j1 = (j0 + 1).min(img.width() - 1);
    let i1 = (i0 + 1).min(img.height() - 1);
    let fx = u - j0 as f64;
    let fy = v - i0 as f64;
    let top = img.at(i0, j0) + fx * (img.at(i0, j1) - img.at(i0, j0));
    let bot = img.at(i1, j0) + fx * (img.at(i1, j1) - img.at(i1, j0));
    top + fy * (bot - top)
}

#[inline]
fn in_view(cam: &CameraModel, u: f64, v: f64) -> bool {
    u >= -BORDER_EPS
        && u <= (cam.width - 1) as f64 + BORDER_EPS
        && v >= -BORDER_EPS
        && v <= (cam.height - 1) as f64 + BORDER_EPS
}

/// Reconstruction of the target view from a source image.
#[derive(Clone, Debug)]
pub struct WarpResult {
    /// `I_{s->t}`.
    pub image: Image,
    /// In view and in front of the source camera.
    pub valid: Mask,
    /// Sample coordinates in the source image (meaningless where `z <= Z_EPS`).
    pub u: Grid<f64>,
    pub v: Grid<f64>,
    /// Depth of each target point expressed in the source frame.
    pub source_z: Grid<f64>,
    pose: PoseSE3,
    cam: CameraModel,
    target_points: Vec<Vec3>,
    source_points: Vec<Vec3>,
    sample_grad: Vec<[f64; 2]>,
    projected: Vec<bool>,
}

/// Gradients of a scalar loss pulled back through [`synthesize`].
#[derive(Clone, Debug, PartialEq)]
pub struct WarpGrads {
    pub depth: Grid<f64>,
    pub r: Vec3,
    pub t: Vec3,
    /// Present when the warp used a motion map.
    pub motion: Option<MotionMap>,
}

fn check_inputs(src: &Grid<f64>, d_tgt: &DepthMap, motion: Option<&MotionMap>, cam: &CameraModel) -> Result<()> {
    if src.height() != cam.height || src.width() != cam.width || !src.same_shape(d_tgt) {
        return Err(invalid!(
            "source {}x{}, target depth {}x{} and camera {}x{} must agree",
            src.height(),
            src.width(),
            d_tgt.height(),
            d_tgt.width(),
            cam.height,
            cam.width
        ));
    }
    if let Some(m) = motion {
        if !m.same_shape(d_tgt) {
            return Err(invalid!("motion map is not aligned with the target grid"));
        }
    }
    Ok(())
}

/// Synthesizes the target view by sampling `src` where target pixels land.
///
/// `pose` maps target-frame points into the source frame.
pub fn synthesize(
    src: &Image,
    d_tgt: &DepthMap,
    pose: &PoseSE3,
    motion: Option<&MotionMap>,
    cam: &CameraModel,
) -> Result<WarpResult> {
    check_inputs(src, d_tgt, motion, cam)?;
    let (h, w) = (cam.height, cam.width);
    let n = h * w;
    let rot = pose.rotation();
    let mut image = Grid::new(h, w, 0.0);
    let mut valid = Grid::new(h, w, false);
    let mut u_map = Grid::new(h, w, 0.0);
    let mut v_map = Grid::new(h, w, 0.0);
    let mut source_z = Grid::new(h, w, 0.0);
    let mut target_points = Vec::with_capacity(n);
    let mut source_points = Vec::with_capacity(n);
    let mut sample_grad = Vec::with_capacity(n);
    let mut projected = Vec::with_capacity(n);
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let x = math::scale(cam.ray(i, j), d_tgt.data()[k]);
            let mut y = math::add(math::mat_vec(&rot, x), pose.t);
            if let Some(m) = motion {
                y = math::add(y, m.data()[k]);
            }
            target_points.push(x);
            source_points.push(y);
            source_z.data_mut()[k] = y[2];
            match cam.project_point(y) {
                Some((u, v)) if u.is_finite() && v.is_finite() => {
                    let (val, du, dv) = sample_zero_padded(src, u, v);
                    image.data_mut()[k] = val;
                    u_map.data_mut()[k] = u;
                    v_map.data_mut()[k] = v;
                    valid.data_mut()[k] = in_view(cam, u, v);
                    sample_grad.push([du, dv]);
                    projected.push(true);
                }
                _ => {
                    sample_grad.push([0.0, 0.0]);
                    projected.push(false);
                }
            }
        }
    }
    Ok(WarpResult {
        image,
        valid,
        u: u_map,
        v: v_map,
        source_z,
        pose: *pose,
        cam: *cam,
        target_points,
        source_points,
        sample_grad,
        projected,
    })
}

impl WarpResult {
    /// Pulls `dL/d image` back onto target depth, pose and motion.
    pub fn vjp(&self, upstream: &Grid<f64>, with_motion: bool) -> WarpGrads {
        let (h, w) = (self.cam.height, self.cam.width);
        let rot = self.pose.rotation();
        let mut depth = Grid::new(h, w, 0.0);
        let mut motion = with_motion.then(|| Grid::new(h, w, [0.0; 3]));
        let mut d_t = [0.0; 3];
        // sum over pixels of (R^T dY) x X, see `rotation_jacobian`
        let mut rot_acc = [0.0; 3];
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let g = upstream.data()[k];
                if g == 0.0 || !self.projected[k] {
                    continue;
                }
                let y = self.source_points[k];
                let [ju, jv] = self.cam.projection_jacobian(y);
                let [du, dv] = self.sample_grad[k];
                let dy = math::scale(math::add(math::scale(ju, du), math::scale(jv, dv)), g);
                let ray = self.cam.ray(i, j);
                depth.data_mut()[k] = math::dot(dy, math::mat_vec(&rot, ray));
                d_t = math::add(d_t, dy);
                rot_acc = math::add(rot_acc, math::cross(math::vec_mat(dy, &rot), self.target_points[k]));
                if let Some(m) = motion.as_mut() {
                    m.data_mut()[k] = dy;
                }
            }
        }
        let jr = geometry::right_jacobian(self.pose.r);
        let d_r = math::scale(math::vec_mat(rot_acc, &jr), -1.0);
        WarpGrads { depth, r: d_r, t: d_t, motion }
    }
}

/// Source depth re-expressed in the target frame, gathered through the target-side warp.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprojectedDepth {
    /// `z'`: the source surface seen at the warped location, moved back into the target frame.
    pub recon: DepthMap,
    /// Source depth sampled at the warped location.
    pub source_sampled: DepthMap,
    /// Depth of the target point in the source frame.
    pub target_in_source: DepthMap,
    /// The target's own depth, for comparison.
    pub target: DepthMap,
    pub valid: Mask,
}

/// Reconstructs target-frame depth from the source depth map.
pub fn reproject_depth(
    d_src: &DepthMap,
    d_tgt: &DepthMap,
    pose: &PoseSE3,
    motion: Option<&MotionMap>,
    cam: &CameraModel,
) -> Result<ReprojectedDepth> {
    check_inputs(d_src, d_tgt, motion, cam)?;
    let (h, w) = (cam.height, cam.width);
    let rot = pose.rotation();
    let rot_t = math::transpose(&rot);
    let mut recon = Grid::new(h, w, 0.0);
    let mut source_sampled = Grid::new(h, w, 0.0);
    let mut target_in_source = Grid::new(h, w, 0.0);
    let mut valid = Grid::new(h, w, false);
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let x = math::scale(cam.ray(i, j), d_tgt.data()[k]);
            let offset = match motion {
                Some(m) => math::add(pose.t, m.data()[k]),
                None => pose.t,
            };
            let y = math::add(math::mat_vec(&rot, x), offset);
            target_in_source.data_mut()[k] = y[2];
            let Some((u, v)) = cam.project_point(y) else { continue };
            if !in_view(cam, u, v) {
                continue;
            }
            let ds = sample_clamped(d_src, u, v);
            source_sampled.data_mut()[k] = ds;
            let xs = math::scale(cam.ray_uv(u, v), ds);
            let back = math::mat_vec(&rot_t, math::sub(xs, offset));
            recon.data_mut()[k] = back[2];
            valid.data_mut()[k] = true;
        }
    }
    Ok(ReprojectedDepth { recon, source_sampled, target_in_source, target: d_tgt.clone(), valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::{pe, PeKind};
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn cam() -> CameraModel {
        CameraModel::centered(100.0, 48, 24).unwrap()
    }

    fn smooth_image(h: usize, w: usize, phase: f64) -> Image {
        Grid::from_fn(h, w, |i, j| {
            0.5 + 0.2 * libm::sin(0.31 * j as f64 + phase) * libm::cos(0.27 * i as f64 - phase)
                + 0.1 * libm::sin(0.13 * (i + 2 * j) as f64)
        })
    }

    fn smooth_depth(h: usize, w: usize) -> DepthMap {
        Grid::from_fn(h, w, |i, j| 8.0 + 1.5 * libm::sin(0.1 * j as f64) + 0.05 * i as f64)
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let c = cam();
        let src = smooth_image(24, 48, 0.3);
        let d = smooth_depth(24, 48);
        let out = synthesize(&src, &d, &PoseSE3::IDENTITY, None, &c).unwrap();
        assert_eq!(out.valid.count(), 24 * 48);
        for (a, b) in out.image.data().iter().zip(src.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn planar_lateral_translation_shifts_one_pixel() {
        let c = cam();
        let d = Grid::new(24, 48, 10.0);
        let pose = PoseSE3::new([0.0; 3], [0.1, 0.0, 0.0]);
        let src = smooth_image(24, 48, 0.0);
        let out = synthesize(&src, &d, &pose, None, &c).unwrap();
        for i in 0..24 {
            for j in 0..48 {
                // u' = u + fx * tx / d
                assert!((out.u.at(i, j) - (j as f64 + 1.0)).abs() < 1e-12);
                if j + 1 < 48 {
                    assert!((out.image.at(i, j) - src.at(i, j + 1)).abs() < 1e-12);
                    assert!(out.valid.at(i, j));
                } else {
                    assert!(!out.valid.at(i, j));
                }
            }
        }
    }

    #[test]
    fn in_view_count_shrinks_with_translation() {
        let c = cam();
        let d = Grid::new(24, 48, 10.0);
        let src = smooth_image(24, 48, 0.0);
        let mut last = usize::MAX;
        for step in 0..12 {
            let pose = PoseSE3::new([0.0; 3], [0.037 * step as f64, -0.011 * step as f64, 0.0]);
            let n = synthesize(&src, &d, &pose, None, &c).unwrap().valid.count();
            assert!(n <= last);
            last = n;
        }
        assert!(last < 24 * 48);
    }

    fn total_pe(src: &Image, tgt: &Image, d: &DepthMap, pose: &PoseSE3, motion: Option<&MotionMap>) -> (f64, WarpResult) {
        let out = synthesize(src, d, pose, motion, &cam()).unwrap();
        let p = pe(tgt, &out.image, PeKind::SsimL1).unwrap();
        (p.data().iter().sum(), out)
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        let src = smooth_image(24, 48, 0.0);
        let tgt = smooth_image(24, 48, 0.4);
        let d = smooth_depth(24, 48);
        let pose = PoseSE3::new([0.01, -0.02, 0.005], [0.13, 0.02, 0.07]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let motion = Grid::from_fn(24, 48, |_, _| {
            [(rng.next_u32() % 100) as f64 * 1e-3, 0.01, -0.02]
        });
        let (_, out) = total_pe(&src, &tgt, &d, &pose, Some(&motion));
        let pe_eval = crate::photometry::PhotometricError::new(&tgt, &out.image, PeKind::SsimL1, None).unwrap();
        let ones = Grid::new(24, 48, 1.0);
        let (_, d_img) = pe_eval.vjp(&ones);
        let grads = out.vjp(&d_img, true);
        let loss = |d: &DepthMap, p: &PoseSE3, m: &MotionMap| total_pe(&src, &tgt, d, p, Some(m)).0;
        let h = 1e-6;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-9);
        for k in [3usize, 101, 250, 600, 777] {
            let mut a = d.clone();
            let mut b = d.clone();
            a.data_mut()[k] += h;
            b.data_mut()[k] -= h;
            let fd = (loss(&a, &pose, &motion) - loss(&b, &pose, &motion)) / (2.0 * h);
            assert!(rel(fd, grads.depth.data()[k]) < 1e-3, "depth {k}: {fd} vs {}", grads.depth.data()[k]);
            for c in 0..3 {
                let mut ma = motion.clone();
                let mut mb = motion.clone();
                ma.data_mut()[k][c] += h;
                mb.data_mut()[k][c] -= h;
                let fd = (loss(&d, &pose, &ma) - loss(&d, &pose, &mb)) / (2.0 * h);
                let an = grads.motion.as_ref().unwrap().data()[k][c];
                assert!(rel(fd, an) < 1e-3, "motion {k}/{c}: {fd} vs {an}");
            }
        }
        let h = 1e-7;
        for c in 0..3 {
            let mut a = pose;
            let mut b = pose;
            a.t[c] += h;
            b.t[c] -= h;
            let fd = (loss(&d, &a, &motion) - loss(&d, &b, &motion)) / (2.0 * h);
            assert!(rel(fd, grads.t[c]) < 1e-3, "t{c}: {fd} vs {}", grads.t[c]);
            let mut a = pose;
            let mut b = pose;
            a.r[c] += h;
            b.r[c] -= h;
            let fd = (loss(&d, &a, &motion) - loss(&d, &b, &motion)) / (2.0 * h);
            assert!(rel(fd, grads.r[c]) < 1e-3, "r{c}: {fd} vs {}", grads.r[c]);
        }
    }

    #[test]
    fn reprojected_depth_identity_and_forward_motion() {
        let c = cam();
        let d = smooth_depth(24, 48);
        let same = reproject_depth(&d, &d, &PoseSE3::IDENTITY, None, &c).unwrap();
        for k in 0..d.len() {
            assert!(same.valid.data()[k]);
            assert!((same.recon.data()[k] - d.data()[k]).abs() < 1e-9);
        }
        let plane_src = Grid::new(24, 48, 10.0);
        let plane_tgt = Grid::new(24, 48, 9.0);
        let pose = PoseSE3::new([0.0; 3], [0.0, 0.0, 1.0]);
        let out = reproject_depth(&plane_src, &plane_tgt, &pose, None, &c).unwrap();
        assert!(out.valid.count() > 0);
        for k in 0..d.len() {
            if out.valid.data()[k] {
                assert!((out.recon.data()[k] - 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let c = cam();
        let d = Grid::new(24, 47, 1.0);
        let src = Grid::new(24, 48, 0.5);
        assert!(synthesize(&src, &d, &PoseSE3::IDENTITY, None, &c).is_err());
    }
}
