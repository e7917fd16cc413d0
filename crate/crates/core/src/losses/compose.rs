//! Assembly of the full objective of a frame pair and its gradient.

use alloc::string::ToString;
use core::slice;

use super::config::LossConfig;
use super::terms::{
    auto_mask_from_errors, average_reprojection, depth_consistency_mask, min_reprojection, motion_smoothness,
    motion_sparsity, normalized_depth_smoothness, uncertainty_weighted,
};
use crate::depth_repr::{decode, variance_regularizer};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::math;
use crate::params::{Group, Params, ScenePair};
use crate::photometry::{self, brightness_transform, ErrorMap, PeKind, PhotometricError};
use crate::warping::{reproject_depth, synthesize};

/// Discrete or detached quantities that a gradient probe must hold fixed.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Frozen {
    pub auto_mask: [Option<Mask>; 2],
    pub dc_mask: [Option<Mask>; 2],
    pub dw_weights: [Option<Grid<f64>>; 2],
    pub sparsity_means: [Option<[f64; 3]>; 2],
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions<'a> {
    /// Optimizer step, used for the motion warm-up and in divergence errors.
    pub step: usize,
    pub gradients: bool,
    pub frozen: Option<&'a Frozen>,
    /// Hash every branch decision (validity, bilinear cell, absolute-value signs, argmins).
    pub fingerprint: bool,
}

/// Weighted contribution of each term; `total` is their sum.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub smooth_depth: f64,
    pub smooth_motion: f64,
    pub sparsity: f64,
    pub variance: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const KEYS: [&'static str; 6] = ["total", "photometric", "smooth_depth", "smooth_motion", "sparsity", "variance"];

    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("total", self.total),
            ("photometric", self.photometric),
            ("smooth_depth", self.smooth_depth),
            ("smooth_motion", self.smooth_motion),
            ("sparsity", self.sparsity),
            ("variance", self.variance),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub motion_active: bool,
    /// Warp validity per direction (direction `k` reconstructs frame `k`).
    pub warp_valid: [Mask; 2],
    /// Pixels that entered the photometric mean, before auto-masking.
    pub photometric_pixels: [usize; 2],
    pub auto_mask: [Option<Mask>; 2],
    /// Pixels kept by the depth-consistency test.
    pub dc_mask: [Option<Mask>; 2],
    pub depth_variance: [f64; 2],
    /// A decoded depth map lost all variance.
    pub collapsed: bool,
    pub sparsity_degenerate: [[bool; 3]; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub terms: LossBreakdown,
    pub grad: Option<Params>,
    /// What this evaluation decided; pass it back through [`EvalOptions::frozen`] to hold it fixed.
    pub frozen: Frozen,
    pub fingerprint: u64,
    pub diagnostics: Diagnostics,
}

struct Fingerprint {
    state: u64,
    enabled: bool,
}

impl Fingerprint {
    fn new(enabled: bool) -> Self {
        Self { state: 0xcbf2_9ce4_8422_2325, enabled }
    }

    #[inline]
    fn push(&mut self, v: u64) {
        if self.enabled {
            self.state = (self.state ^ v).wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn push_signs(&mut self, field: &Grid<f64>) {
        if !self.enabled {
            return;
        }
        let (h, w) = (field.height(), field.width());
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    self.push(sign_code(field.at(i, j + 1) - field.at(i, j)));
                }
                if i + 1 < h {
                    self.push(sign_code(field.at(i + 1, j) - field.at(i, j)));
                }
            }
        }
    }
}

#[inline]
fn sign_code(v: f64) -> u64 {
    if v > 0.0 {
        2
    } else if v < 0.0 {
        0
    } else {
        1
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed per-pixel offset in `[0, amplitude)` that breaks exact ties in favour of the warp.
pub fn tie_break_offset(height: usize, width: usize, direction: usize, amplitude: f64) -> Grid<f64> {
    Grid::from_fn(height, width, |i, j| {
        let key = ((direction * height + i) * width + j) as u64;
        amplitude * (splitmix(key) >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn and_mask(a: &Mask, b: &Mask) -> Mask {
    Grid::from_fn(a.height(), a.width(), |i, j| a.at(i, j) && b.at(i, j))
}

fn add_into(acc: &mut Grid<f64>, g: &Grid<f64>, scale: f64) {
    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += scale * v;
    }
}

fn check_finite(step: usize, term: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, term: term.to_string() })
    }
}

/// Evaluates the configured objective of a frame pair, optionally with gradients.
///
/// Both directions are used: frame 0 reconstructed from frame 1 through `pose`, and frame 1
/// from frame 0 through its inverse; each per-frame term is averaged over the two frames.
pub fn compose(cfg: &LossConfig, pair: &ScenePair, params: &Params, opts: &EvalOptions<'_>) -> Result<Evaluation> {
    cfg.validate()?;
    let (h, w) = (pair.height(), pair.width());
    if params.height() != h || params.width() != w {
        return Err(invalid!("parameters are {}x{} but the frames are {}x{}", params.height(), params.width(), h, w));
    }
    let cam = &pair.camera;
    let step = opts.step;
    let motion_active = cfg.motion_active(step);
    let kind = if cfg.illumination.ssim { PeKind::SsimL1 } else { PeKind::L1 };
    let weights = cfg.weights;
    let decoded = [decode(&params.x[0], &cfg.repr)?, decode(&params.x[1], &cfg.repr)?];

    let mut grad = opts.gradients.then(|| Params::zeros(h, w));
    let mut d_depth = [Grid::new(h, w, 0.0), Grid::new(h, w, 0.0)];
    let mut fp = Fingerprint::new(opts.fingerprint);
    let mut frozen = Frozen::default();
    let mut terms = LossBreakdown::default();
    let mut warp_valid = [Grid::new(h, w, false), Grid::new(h, w, false)];
    let mut photometric_pixels = [0usize; 2];

    for k in 0..2 {
        let s = 1 - k;
        let pose_k = if k == 0 { params.pose } else { params.pose.inverse() };
        let motion = if motion_active { Some(&params.motion[k]) } else { None };
        let target = &pair.frames[k];
        let warp = synthesize(&pair.frames[s], &decoded[k].depth, &pose_k, motion, cam)?;

        // Frame 1 carries the brightness change, so direction 0 lifts its target and
        // direction 1 lifts its reconstruction.
        let bright = cfg.illumination.brightness;
        let lifted: Option<Image> = bright.then(|| {
            if k == 0 {
                brightness_transform(target, params.brightness)
            } else {
                brightness_transform(&warp.image, params.brightness)
            }
        });
        let (img_a, img_b): (&Image, &Image) = match (&lifted, k) {
            (Some(l), 0) => (l, &warp.image),
            (Some(l), _) => (target, l),
            (None, _) => (target, &warp.image),
        };

        let reproj = if cfg.needs_source_depth() {
            Some(reproject_depth(&decoded[s].depth, &decoded[k].depth, &pose_k, motion, cam)?)
        } else {
            None
        };

        let dw = if cfg.illumination.dw_ssim {
            let wts = match opts.frozen.and_then(|f| f.dw_weights[k].clone()) {
                Some(wts) => wts,
                None => {
                    let r = reproj.as_ref().expect("source depth is reprojected for depth-error weights");
                    let joint = and_mask(&warp.valid, &r.valid);
                    if joint.count() == 0 {
                        Grid::new(h, w, 1.0)
                    } else {
                        photometry::dw_ssim_weights(&decoded[k].depth, &r.recon, Some(&joint))?
                    }
                }
            };
            Some(wts)
        } else {
            None
        };
        let pe_eval = PhotometricError::new(img_a, img_b, kind, dw.as_ref())?;

        let mut valid = warp.valid.clone();
        if cfg.occlusion.uses_gate() {
            let gate = match opts.frozen.and_then(|f| f.dc_mask[k].clone()) {
                Some(g) => g,
                None => {
                    let r = reproj.as_ref().expect("source depth is reprojected for the depth-consistency test");
                    depth_consistency_mask(&warp.source_z, &r.source_sampled, &warp.valid, weights.dc_tolerance)?
                }
            };
            valid = and_mask(&valid, &gate);
            frozen.dc_mask[k] = Some(gate);
        }
        let candidate = ErrorMap { error: pe_eval.map().clone(), valid };
        // One source frame per direction: the reduction is the identity on valid pixels.
        let reduced = if cfg.occlusion.uses_min() {
            min_reprojection(slice::from_ref(&candidate))?.map
        } else {
            average_reprojection(slice::from_ref(&candidate))?
        };

        let mu = if cfg.dynamic.auto_mask {
            let m = match opts.frozen.and_then(|f| f.auto_mask[k].clone()) {
                Some(m) => m,
                None => {
                    let mut raw = photometry::pe(target, &pair.frames[s], kind)?;
                    add_into(&mut raw, &tie_break_offset(h, w, k, weights.identity_tie_break), 1.0);
                    auto_mask_from_errors(slice::from_ref(&reduced), slice::from_ref(&raw))?
                }
            };
            frozen.auto_mask[k] = Some(m.clone());
            Some(m)
        } else {
            None
        };

        let n = reduced.valid_count();
        photometric_pixels[k] = n;
        let mut upstream = Grid::new(h, w, 0.0);
        let term = if n == 0 {
            0.0
        } else if cfg.dynamic.uncertainty {
            let u = uncertainty_weighted(&reduced, &params.log_sigma[k])?;
            add_into(&mut upstream, &u.d_err, 0.5);
            if let Some(g) = grad.as_mut() {
                add_into(&mut g.log_sigma[k], &u.d_log_sigma, 0.5);
            }
            u.loss
        } else {
            let inv_n = 1.0 / n as f64;
            let mut sum = 0.0;
            for p in 0..h * w {
                if !reduced.valid.data()[p] {
                    continue;
                }
                let m = mu.as_ref().map_or(1.0, |m| if m.data()[p] { 1.0 } else { 0.0 });
                sum += m * reduced.error.data()[p];
                upstream.data_mut()[p] = 0.5 * m * inv_n;
            }
            sum * inv_n
        };
        terms.photometric += 0.5 * term;

        if fp.enabled {
            fp.push(k as u64);
            for p in 0..h * w {
                let m = mu.as_ref().map_or(true, |m| m.data()[p]);
                let bits = reduced.valid.data()[p] as u64 | (m as u64) << 1 | sign_code(img_a.data()[p] - img_b.data()[p]) << 2;
                fp.push(bits);
                if warp.valid.data()[p] {
                    fp.push(libm::floor(warp.u.data()[p]) as i64 as u64);
                    fp.push(libm::floor(warp.v.data()[p]) as i64 as u64);
                }
            }
        }

        if let Some(g) = grad.as_mut() {
            let (da, db) = pe_eval.vjp(&upstream);
            let d_syn = match (bright, k) {
                (true, 0) => {
                    let (ga, gb) = photometry::brightness_vjp(target, &da);
                    g.brightness.a += ga;
                    g.brightness.b += gb;
                    db
                }
                (true, _) => {
                    let (ga, gb) = photometry::brightness_vjp(&warp.image, &db);
                    g.brightness.a += ga;
                    g.brightness.b += gb;
                    db.map(|v| v * params.brightness.a)
                }
                _ => db,
            };
            let wg = warp.vjp(&d_syn, motion_active);
            add_into(&mut d_depth[k], &wg.depth, 1.0);
            let (dr, dt) = if k == 0 { (wg.r, wg.t) } else { params.pose.inverse_vjp(wg.r, wg.t) };
            g.pose.r = math::add(g.pose.r, dr);
            g.pose.t = math::add(g.pose.t, dt);
            if let Some(m) = wg.motion {
                for (acc, v) in g.motion[k].data_mut().iter_mut().zip(m.data()) {
                    *acc = math::add(*acc, *v);
                }
            }
        }
        warp_valid[k] = warp.valid;
        if cfg.dynamic.auto_mask {
            frozen.auto_mask[k] = mu;
        }
        if cfg.illumination.dw_ssim {
            frozen.dw_weights[k] = dw;
        }
    }
    check_finite(step, "photometric", terms.photometric)?;

    let mut depth_variance = [0.0; 2];
    let mut collapsed = false;
    let mut sparsity_degenerate = [[false; 3]; 2];
    for k in 0..2 {
        let depth = &decoded[k].depth;
        if weights.smooth_depth > 0.0 {
            let sm = normalized_depth_smoothness(depth, &pair.frames[k])?;
            terms.smooth_depth += 0.5 * weights.smooth_depth * sm.loss;
            add_into(&mut d_depth[k], &sm.grad, 0.5 * weights.smooth_depth);
            if fp.enabled {
                let mean = depth.data().iter().sum::<f64>() / depth.len() as f64;
                fp.push_signs(&depth.map(|d| d / mean));
            }
        }

        let var = variance_regularizer(depth, None)?;
        depth_variance[k] = var.variance;
        collapsed |= var.collapsed;
        if cfg.variance_active() {
            terms.variance += 0.5 * var.loss;
            add_into(&mut d_depth[k], &var.grad, 0.5);
        }

        if motion_active {
            let t = &params.motion[k];
            let frozen_means = opts.frozen.and_then(|f| f.sparsity_means[k]);
            let sp = motion_sparsity(t, frozen_means);
            frozen.sparsity_means[k] = Some(sp.means);
            sparsity_degenerate[k] = sp.degenerate;
            terms.sparsity += 0.5 * weights.sparsity * sp.loss;
            let (sm_loss, sm_grad) = motion_smoothness(t, &pair.frames[k])?;
            terms.smooth_motion += 0.5 * weights.smooth_motion * sm_loss;
            if let Some(g) = grad.as_mut() {
                for ((acc, a), b) in g.motion[k].data_mut().iter_mut().zip(sp.grad.data()).zip(sm_grad.data()) {
                    for c in 0..3 {
                        acc[c] += 0.5 * (weights.sparsity * a[c] + weights.smooth_motion * b[c]);
                    }
                }
            }
            if fp.enabled {
                for p in t.data() {
                    for c in p {
                        fp.push(sign_code(*c));
                    }
                }
                for c in 0..3 {
                    fp.push_signs(&t.map(|p| p[c]));
                }
            }
        }
    }
    check_finite(step, "smooth_depth", terms.smooth_depth)?;
    check_finite(step, "variance", terms.variance)?;
    check_finite(step, "sparsity", terms.sparsity)?;
    check_finite(step, "smooth_motion", terms.smooth_motion)?;
    terms.total = terms.photometric + terms.smooth_depth + terms.smooth_motion + terms.sparsity + terms.variance;
    check_finite(step, "total", terms.total)?;

    if let Some(g) = grad.as_mut() {
        for k in 0..2 {
            for ((gx, dd), deriv) in g.x[k].data_mut().iter_mut().zip(d_depth[k].data()).zip(decoded[k].derivative.data()) {
                *gx = dd * deriv;
            }
        }
        for group in Group::ALL {
            if !g.is_finite(group) {
                return Err(Error::Divergence { step, term: alloc::format!("gradient of {group}") });
            }
        }
    }

    let diagnostics = Diagnostics {
        motion_active,
        warp_valid,
        photometric_pixels,
        auto_mask: frozen.auto_mask.clone(),
        dc_mask: frozen.dc_mask.clone(),
        depth_variance,
        collapsed,
        sparsity_degenerate,
    };
    Ok(Evaluation { terms, grad, frozen, fingerprint: fp.state, diagnostics })
}
