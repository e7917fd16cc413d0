//! Procedural ray-cast scene pairs with exact ground truth.
//!
//! Every surface is textured through its projection into the second camera: the texture is a
//! lattice of noise values at the second camera's integer pixel positions, interpolated
//! bilinearly. The second frame therefore holds the lattice nodes themselves, and the first
//! frame holds exactly what a bilinear sampler reads from the second frame wherever the four
//! sampled pixels see the same face. Textures stay attached to their surface because the map
//! from a planar face to the second image plane is a fixed homography.

mod presets;
mod texture;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use presets::{preset, PRESET_NAMES};
pub use texture::{Texture, INTENSITY_MAX, INTENSITY_MIN};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, MotionMap, PoseSE3, Z_EPS};
use crate::grid::{DepthMap, Grid, Mask};
use crate::math::{self, Mat3, Vec3};
use crate::params::ScenePair;
use crate::photometry::BrightnessParams;
use crate::warping::synthesize;

pub const DEFAULT_WIDTH: usize = 320;
pub const DEFAULT_HEIGHT: usize = 96;
pub const DEFAULT_FOCAL: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Plane `z = depth` (first-camera coordinates), optionally bounded to `[x0, x1] x [y0, y1]`.
    Plane { depth: f64, bounds: Option<[f64; 4]> },
    /// Axis-aligned box.
    Cuboid { min: Vec3, max: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    /// Rigid translation between the two frames, first-camera coordinates (meters).
    pub motion: Vec3,
    pub texture: Texture,
}

impl Surface {
    pub fn plane(depth: f64) -> Self {
        Self { shape: Shape::Plane { depth, bounds: None }, motion: [0.0; 3], texture: Texture::default() }
    }

    pub fn patch(depth: f64, bounds: [f64; 4]) -> Self {
        Self { shape: Shape::Plane { depth, bounds: Some(bounds) }, motion: [0.0; 3], texture: Texture::default() }
    }

    pub fn cuboid(min: Vec3, max: Vec3) -> Self {
        Self { shape: Shape::Cuboid { min, max }, motion: [0.0; 3], texture: Texture::default() }
    }

    pub fn moving(mut self, motion: Vec3) -> Self {
        self.motion = motion;
        self
    }

    pub fn textured(mut self, texture: Texture) -> Self {
        self.texture = texture;
        self
    }

    pub fn is_dynamic(&self) -> bool {
        self.motion != [0.0; 3]
    }
}

/// A scene pair description. The first camera sits at the origin looking down `+z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub surfaces: Vec<Surface>,
    /// Maps first-camera points into the second camera.
    pub pose: PoseSE3,
    /// Applied to the second frame.
    pub brightness: BrightnessParams,
    pub texture_seed: u64,
}

impl SceneSpec {
    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::centered(self.focal, self.width, self.height)
    }

    /// The same scene at `factor` times the resolution (focal length and texture scale follow).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidScene(format!("scale factor must be positive, got {factor}")));
        }
        let mut s = self.clone();
        s.width = libm::round(self.width as f64 * factor) as usize;
        s.height = libm::round(self.height as f64 * factor) as usize;
        s.focal = self.focal * factor;
        for surf in &mut s.surfaces {
            surf.texture = surf.texture.scaled(factor);
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.surfaces.is_empty() {
            return Err(Error::InvalidScene(format!("scene '{}' has no surfaces", self.name)));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidScene(format!("image size {}x{} is too small", self.height, self.width)));
        }
        self.camera().map_err(|e| Error::InvalidScene(format!("{e}")))?;
        if !(self.brightness.a > 0.0 && self.brightness.a.is_finite() && self.brightness.b.is_finite()) {
            return Err(Error::InvalidScene(format!("brightness gain must be positive, got {}", self.brightness.a)));
        }
        let centers = [[0.0; 3], self.pose.inverse().t];
        for (n, s) in self.surfaces.iter().enumerate() {
            match s.texture {
                Texture::Noise { cell, octaves } if !(cell >= 1.0 && octaves >= 1) => {
                    return Err(Error::InvalidScene(format!("surface {n}: noise needs cell >= 1 px and >= 1 octave")));
                }
                Texture::Constant(c) if !(c.is_finite()) => {
                    return Err(Error::InvalidScene(format!("surface {n}: non-finite constant texture")));
                }
                _ => {}
            }
            for (time, c) in centers.iter().enumerate() {
                let shift = math::scale(s.motion, time as f64);
                match s.shape {
                    Shape::Plane { depth, bounds } => {
                        if !(depth + shift[2] > c[2] + Z_EPS) {
                            return Err(Error::InvalidScene(format!("surface {n}: plane is not in front of camera {time}")));
                        }
                        if let Some([x0, x1, y0, y1]) = bounds {
                            if !(x0 < x1 && y0 < y1) {
                                return Err(Error::InvalidScene(format!("surface {n}: empty patch bounds")));
                            }
                        }
                    }
                    Shape::Cuboid { min, max } => {
                        if !(0..3).all(|a| min[a] < max[a]) {
                            return Err(Error::InvalidScene(format!("surface {n}: box min must be below max")));
                        }
                        if !(min[2] + shift[2] > c[2] + Z_EPS) {
                            return Err(Error::InvalidScene(format!("surface {n}: box is not in front of camera {time}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exact quantities behind a rendered pair. Index 0 is the first frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub depth: [DepthMap; 2],
    /// Maps first-camera points into the second camera.
    pub pose: PoseSE3,
    /// Per-pixel residual translation of frame `k` points in the warp convention
    /// (added after the rotation of the frame-`k` to other-frame transform).
    pub motion: [MotionMap; 2],
    pub dynamic: [Mask; 2],
    /// Visible in frame `k`, in view of the other camera, but hidden behind another surface there.
    pub occluded: [Mask; 2],
    /// Visible in frame `k` but projecting outside the other image.
    pub out_of_view: [Mask; 2],
    /// Surface and face index seen by each pixel (`8 * surface + face`).
    pub surface_id: [Grid<u32>; 2],
    /// First-frame pixels that bilinear sampling of the second frame reproduces exactly.
    pub exact: Mask,
    pub brightness: BrightnessParams,
}

struct View {
    origin: Vec3,
    /// Camera-to-world rotation.
    rot_cw: Mat3,
    time: usize,
}

struct Hit {
    s: f64,
    surface: usize,
    face: u32,
}

fn intersect(surface: &Surface, time: usize, o: Vec3, d: Vec3) -> Option<(f64, u32)> {
    let m = math::scale(surface.motion, time as f64);
    match surface.shape {
        Shape::Plane { depth, bounds } => {
            if d[2].abs() < 1e-300 {
                return None;
            }
            let s = (depth + m[2] - o[2]) / d[2];
            if !(s > 0.0) {
                return None;
            }
            if let Some([x0, x1, y0, y1]) = bounds {
                let x = o[0] + s * d[0] - m[0];
                let y = o[1] + s * d[1] - m[1];
                if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
                    return None;
                }
            }
            Some((s, 0))
        }
        Shape::Cuboid { min, max } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut face = 0u32;
            for a in 0..3 {
                let (lo, hi) = (min[a] + m[a], max[a] + m[a]);
                if d[a].abs() < 1e-300 {
                    if o[a] < lo || o[a] > hi {
                        return None;
                    }
                    continue;
                }
                let (mut near, mut far) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
                let mut f = 2 * a as u32;
                if near > far {
                    core::mem::swap(&mut near, &mut far);
                    f += 1;
                }
                if near > t0 {
                    t0 = near;
                    face = f;
                }
                t1 = t1.min(far);
            }
            (t0 <= t1 && t0 > 0.0).then_some((t0, face))
        }
    }
}

fn cast(spec: &SceneSpec, view: &View, ray_cam: Vec3) -> Option<Hit> {
    let d = math::mat_vec(&view.rot_cw, ray_cam);
    let mut best: Option<Hit> = None;
    for (n, surf) in spec.surfaces.iter().enumerate() {
        if let Some((s, face)) = intersect(surf, view.time, view.origin, d) {
            if best.as_ref().map_or(true, |b| s < b.s) {
                best = Some(Hit { s, surface: n, face });
            }
        }
    }
    best
}

fn surface_keys(spec: &SceneSpec) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    (0..spec.surfaces.len() * 8).map(|_| rng.next_u64()).collect()
}

/// Ray-casts both frames and derives the ground truth.
pub fn render(spec: &SceneSpec) -> Result<(ScenePair, GroundTruth)> {
    spec.validate()?;
    let cam = spec.camera()?;
    let (h, w) = (spec.height, spec.width);
    let rot = spec.pose.rotation();
    let rot_t = math::transpose(&rot);
    let views = [
        View { origin: [0.0; 3], rot_cw: math::IDENTITY, time: 0 },
        View { origin: math::scale(math::mat_vec(&rot_t, spec.pose.t), -1.0), rot_cw: rot_t, time: 1 },
    ];
    let keys = surface_keys(spec);
    let key_of = |surface: usize, face: u32| keys[surface * 8 + face as usize];

    let mut depth = [Grid::new(h, w, 0.0), Grid::new(h, w, 0.0)];
    let mut ids = [Grid::new(h, w, 0u32), Grid::new(h, w, 0u32)];
    let mut world = [Grid::new(h, w, [0.0; 3]), Grid::new(h, w, [0.0; 3])];
    for k in 0..2 {
        for i in 0..h {
            for j in 0..w {
                let ray = cam.ray(i, j);
                let hit = cast(spec, &views[k], ray)
                    .ok_or_else(|| Error::InvalidScene(format!("pixel ({i}, {j}) of frame {k} sees no surface")))?;
                if !(hit.s > Z_EPS) {
                    return Err(Error::InvalidScene(format!("pixel ({i}, {j}) of frame {k} hits a surface at the camera")));
                }
                *depth[k].get_mut(i, j) = hit.s;
                *ids[k].get_mut(i, j) = hit.surface as u32 * 8 + hit.face;
                let d = math::mat_vec(&views[k].rot_cw, ray);
                *world[k].get_mut(i, j) = math::add(views[k].origin, math::scale(d, hit.s));
            }
        }
    }

    let bp = spec.brightness;
    let frame1 = Grid::from_fn(h, w, |i, j| {
        let id = ids[1].at(i, j);
        let (n, face) = ((id / 8) as usize, id % 8);
        let tex = spec.surfaces[n].texture.node(key_of(n, face), j as i64, i as i64);
        bp.a * tex + bp.b
    });
    let mut frame0 = Grid::new(h, w, 0.0);
    for i in 0..h {
        for j in 0..w {
            let id = ids[0].at(i, j);
            let (n, face) = ((id / 8) as usize, id % 8);
            let surf = &spec.surfaces[n];
            let y = spec.pose.apply(math::add(world[0].at(i, j), surf.motion));
            let (u, v) = cam.project_point(y).ok_or_else(|| {
                Error::InvalidScene(format!("pixel ({i}, {j}) of frame 0 sees a point behind the second camera"))
            })?;
            *frame0.get_mut(i, j) = surf.texture.sample(key_of(n, face), u, v);
        }
    }

    let mut motion = [Grid::new(h, w, [0.0; 3]), Grid::new(h, w, [0.0; 3])];
    let mut dynamic = [Grid::new(h, w, false), Grid::new(h, w, false)];
    let mut occluded = [Grid::new(h, w, false), Grid::new(h, w, false)];
    let mut out_of_view = [Grid::new(h, w, false), Grid::new(h, w, false)];
    let mut exact = Grid::new(h, w, false);
    for k in 0..2 {
        let other = 1 - k;
        for i in 0..h {
            for j in 0..w {
                let id = ids[k].at(i, j);
                let n = (id / 8) as usize;
                let surf = &spec.surfaces[n];
                // Surface displacement from this frame's time to the other frame's.
                let shift = if k == 0 { surf.motion } else { math::scale(surf.motion, -1.0) };
                let moved = math::add(world[k].at(i, j), shift);
                // Express the point in the other camera.
                let y = if other == 1 { spec.pose.apply(moved) } else { moved };
                let flow = if k == 0 { math::mat_vec(&rot, surf.motion) } else { math::scale(surf.motion, -1.0) };
                *motion[k].get_mut(i, j) = flow;
                *dynamic[k].get_mut(i, j) = surf.is_dynamic();

                let proj = cam.project_point(y).filter(|&(u, v)| {
                    u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64
                });
                let Some((u, v)) = proj else {
                    *out_of_view[k].get_mut(i, j) = true;
                    continue;
                };
                let seen = cast(spec, &views[other], cam.ray_uv(u, v));
                let hidden = seen.map_or(true, |s| s.s < y[2] * (1.0 - 1e-9) - 1e-9);
                *occluded[k].get_mut(i, j) = hidden;
                if k == 0 && !hidden {
                    let j0 = libm::floor(u) as usize;
                    let i0 = libm::floor(v) as usize;
                    let j1 = (j0 + 1).min(w - 1);
                    let i1 = (i0 + 1).min(h - 1);
                    *exact.get_mut(i, j) =
                        [(i0, j0), (i0, j1), (i1, j0), (i1, j1)].iter().all(|&(a, b)| ids[1].at(a, b) == id);
                }
            }
        }
    }

    let pair = ScenePair::new([frame0, frame1], cam)?;
    let gt = GroundTruth {
        depth,
        pose: spec.pose,
        motion,
        dynamic,
        occluded,
        out_of_view,
        surface_id: ids,
        exact,
        brightness: bp,
    };
    Ok((pair, gt))
}

/// Outcome of re-synthesizing the first frame from the second with ground-truth geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    /// Largest residual over exactly reproducible, warp-valid pixels.
    pub max_residual: f64,
    pub checked_pixels: usize,
    /// `|a I_0 + b - I_{1->0}|` on warp-valid, unoccluded pixels; 0 elsewhere.
    pub residual: Grid<f64>,
    /// Share of the residual mass that falls on dynamic pixels.
    pub dynamic_share: f64,
}

/// Warps frame 1 onto frame 0 with the ground truth (`use_motion` selects whether object motion
/// is supplied) and measures the photometric residual.
pub fn verify(pair: &ScenePair, gt: &GroundTruth, use_motion: bool) -> Result<VerifyReport> {
    let cam = &pair.camera;
    let motion = use_motion.then_some(&gt.motion[0]);
    let warp = synthesize(&pair.frames[1], &gt.depth[0], &gt.pose, motion, cam)?;
    let (h, w) = (cam.height, cam.width);
    let bp = gt.brightness;
    let mut residual = Grid::new(h, w, 0.0);
    let (mut max_residual, mut checked) = (0.0f64, 0usize);
    let (mut total, mut on_dynamic) = (0.0, 0.0);
    for k in 0..h * w {
        if !warp.valid.data()[k] || gt.occluded[0].data()[k] || gt.out_of_view[0].data()[k] {
            continue;
        }
        let r = libm::fabs(bp.a * pair.frames[0].data()[k] + bp.b - warp.image.data()[k]);
        residual.data_mut()[k] = r;
        total += r;
        if gt.dynamic[0].data()[k] {
            on_dynamic += r;
        }
        if gt.exact.data()[k] {
            max_residual = max_residual.max(r);
            checked += 1;
        }
    }
    let dynamic_share = if total > 0.0 { on_dynamic / total } else { 0.0 };
    Ok(VerifyReport { max_residual, checked_pixels: checked, residual, dynamic_share })
}
