//! Depth metrics, the capped/median-scaled evaluation protocol and scale reports.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{DepthMap, Mask};

pub const DEFAULT_CAP: f64 = 80.0;
/// Depths are clamped up to this before evaluation so the log metric stays finite.
pub const DEPTH_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DepthMetrics {
    pub ard: f64,
    pub srd: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const KEYS: [&'static str; 7] = ["ard", "srd", "rmse", "rmse_log", "delta1", "delta2", "delta3"];

    pub fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("ard", self.ard),
            ("srd", self.srd),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
        ]
    }
}

/// Median of a non-empty slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pairs `(pred, gt)` over pixels that are flagged valid and have positive, finite ground truth.
fn joint(pred: &DepthMap, gt: &DepthMap, valid: Option<&Mask>) -> Result<(Vec<f64>, Vec<f64>)> {
    if !pred.same_shape(gt) || valid.is_some_and(|m| !m.same_shape(gt)) {
        return Err(invalid!("prediction, ground truth and mask must share a shape"));
    }
    let mut p = Vec::new();
    let mut g = Vec::new();
    for k in 0..gt.len() {
        let gv = gt.data()[k];
        if valid.is_some_and(|m| !m.data()[k]) || !(gv > 0.0 && gv.is_finite()) {
            continue;
        }
        let pv = pred.data()[k];
        if !pv.is_finite() {
            return Err(invalid!("non-finite prediction at pixel {k}"));
        }
        p.push(pv);
        g.push(gv);
    }
    if p.is_empty() {
        return Err(invalid!("no jointly valid pixels to evaluate"));
    }
    Ok((p, g))
}

/// Seven standard metrics over the valid pixels, after optional median scaling and clamping
/// both maps to `[DEPTH_FLOOR, cap]`.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, valid: Option<&Mask>, cap: f64, median_scale: bool) -> Result<DepthMetrics> {
    if !(cap > DEPTH_FLOOR) {
        return Err(invalid!("cap {cap} must exceed the depth floor {DEPTH_FLOOR}"));
    }
    let (mut p, g) = joint(pred, gt, valid)?;
    if median_scale {
        let mp = median(&p);
        if !(mp > 0.0) {
            return Err(invalid!("median prediction must be positive for median scaling, got {mp}"));
        }
        let ratio = median(&g) / mp;
        for v in &mut p {
            *v *= ratio;
        }
    }
    let n = p.len() as f64;
    let mut m = DepthMetrics::default();
    let (mut sq, mut sq_log) = (0.0, 0.0);
    for (pv, gv) in p.iter().zip(&g) {
        let pv = pv.clamp(DEPTH_FLOOR, cap);
        let gv = gv.clamp(DEPTH_FLOOR, cap);
        let diff = pv - gv;
        m.ard += diff.abs() / gv;
        m.srd += diff * diff / gv;
        sq += diff * diff;
        let dl = libm::log(pv) - libm::log(gv);
        sq_log += dl * dl;
        let ratio = (pv / gv).max(gv / pv);
        m.delta1 += (ratio < 1.25) as u8 as f64;
        m.delta2 += (ratio < 1.25 * 1.25) as u8 as f64;
        m.delta3 += (ratio < 1.25 * 1.25 * 1.25) as u8 as f64;
    }
    m.ard /= n;
    m.srd /= n;
    m.rmse = libm::sqrt(sq / n);
    m.rmse_log = libm::sqrt(sq_log / n);
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    Ok(m)
}

/// Scaling ratios `median(gt) / median(pred)` across images.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleReport {
    pub ratios: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

/// One entry per image: prediction, ground truth, optional validity mask.
pub fn scale_report(runs: &[(&DepthMap, &DepthMap, Option<&Mask>)]) -> Result<ScaleReport> {
    if runs.is_empty() {
        return Err(invalid!("scale report needs at least one image"));
    }
    let mut ratios = Vec::with_capacity(runs.len());
    for (n, (pred, gt, valid)) in runs.iter().enumerate() {
        let (p, g) = joint(pred, gt, *valid)?;
        let mp = median(&p);
        if !(mp > 0.0) {
            return Err(invalid!("image {n}: median prediction is {mp}, the scaling ratio is undefined"));
        }
        ratios.push(median(&g) / mp);
    }
    ScaleReport::from_ratios(ratios)
}

impl ScaleReport {
    /// Summarizes ratios that were computed one image at a time.
    pub fn from_ratios(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(invalid!("scale report needs at least one image"));
        }
        if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(invalid!("scaling ratio {r} is not positive and finite"));
        }
        let k = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / k;
        let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k;
        Ok(ScaleReport { ratios, mean, std_dev: libm::sqrt(var) })
    }
}
