//! Depth representations: how a raw, unconstrained-ish parameter `x` becomes
//! metric depth, plus the inverse-variance regularizer that keeps disparity and
//! softplus depth fields from collapsing.

use core::fmt;

use crate::error::{invalid, Error, Result};
use crate::grid::{DepthMap, Grid, Mask};

/// Weight of the inverse-variance loss.
pub const VARIANCE_WEIGHT: f64 = 1e-6;
/// Below this population variance the depth field is considered collapsed.
pub const VARIANCE_EPS: f64 = 1e-12;
/// Loss returned for a collapsed field.
pub const VARIANCE_CAP: f64 = VARIANCE_WEIGHT / VARIANCE_EPS;
/// Softplus switches to the identity above this input.
pub const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;
/// Smallest disparity the optimizer may reach (depth <= 1e6 m).
pub const MIN_DISPARITY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReprKind {
    /// `d = 1 / x`
    Disparity,
    /// `d = 1 / (sigma_min + (sigma_max - sigma_min) x)`, `x in [0, 1]`
    ScaledDisparity,
    /// `d = ln(1 + exp(x))`
    Softplus,
}

impl ReprKind {
    pub fn name(self) -> &'static str {
        match self {
            ReprKind::Disparity => "disparity",
            ReprKind::ScaledDisparity => "scaled_disparity",
            ReprKind::Softplus => "softplus",
        }
    }

    /// Whether the inverse-variance regularizer accompanies this representation.
    pub fn uses_variance_regularizer(self) -> bool {
        !matches!(self, ReprKind::ScaledDisparity)
    }
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for ReprKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disparity" => Ok(ReprKind::Disparity),
            "scaled_disparity" | "scaled" => Ok(ReprKind::ScaledDisparity),
            "softplus" => Ok(ReprKind::Softplus),
            other => Err(Error::Config(alloc::format!("unknown depth representation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprConfig {
    pub kind: ReprKind,
    /// Disparity bounds (1/m); only read by [`ReprKind::ScaledDisparity`].
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl ReprConfig {
    /// Default depth range of the scaled representation, meters.
    pub const DEFAULT_DEPTH_RANGE: (f64, f64) = (0.1, 100.0);

    pub fn new(kind: ReprKind) -> Self {
        let (lo, hi) = Self::DEFAULT_DEPTH_RANGE;
        Self { kind, sigma_min: 1.0 / hi, sigma_max: 1.0 / lo }
    }

    /// Scaled disparity covering depths `[min_depth, max_depth]`.
    pub fn scaled(min_depth: f64, max_depth: f64) -> Result<Self> {
        let cfg = Self { kind: ReprKind::ScaledDisparity, sigma_min: 1.0 / max_depth, sigma_max: 1.0 / min_depth };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::Config(alloc::format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min,
                self.sigma_max
            )));
        }
        Ok(())
    }

    /// Depth and `dd/dx` of a single parameter.
    #[inline]
    pub fn decode_one(&self, x: f64) -> (f64, f64) {
        match self.kind {
            ReprKind::Disparity => (1.0 / x, -1.0 / (x * x)),
            ReprKind::ScaledDisparity => {
                let span = self.sigma_max - self.sigma_min;
                let disp = self.sigma_min + span * x;
                (1.0 / disp, -span / (disp * disp))
            }
            ReprKind::Softplus => {
                if x > SOFTPLUS_LINEAR_ABOVE {
                    (x, 1.0)
                } else {
                    let d = libm::log1p(libm::exp(x)).max(f64::MIN_POSITIVE);
                    (d, sigmoid(x))
                }
            }
        }
    }

    fn check_domain(&self, x: f64, i: usize, j: usize) -> Result<()> {
        let ok = x.is_finite()
            && match self.kind {
                ReprKind::Disparity => x > 0.0,
                ReprKind::ScaledDisparity => (0.0..=1.0).contains(&x),
                ReprKind::Softplus => true,
            };
        if ok {
            Ok(())
        } else {
            Err(invalid!("{} parameter {} out of domain at pixel ({}, {})", self.kind, x, i, j))
        }
    }

    /// Parameter that decodes to `depth` (clamped into the representable range).
    pub fn encode_one(&self, depth: f64) -> f64 {
        match self.kind {
            ReprKind::Disparity => 1.0 / depth,
            ReprKind::ScaledDisparity => {
                ((1.0 / depth - self.sigma_min) / (self.sigma_max - self.sigma_min)).clamp(0.0, 1.0)
            }
            ReprKind::Softplus => {
                if depth > SOFTPLUS_LINEAR_ABOVE {
                    depth
                } else {
                    libm::log(libm::expm1(depth))
                }
            }
        }
    }

    /// Projects a parameter back into the decoder's domain after an optimizer step.
    #[inline]
    pub fn clamp_param(&self, x: f64) -> f64 {
        match self.kind {
            ReprKind::Disparity => x.max(MIN_DISPARITY),
            ReprKind::ScaledDisparity => x.clamp(0.0, 1.0),
            ReprKind::Softplus => x,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Decoded depth with the elementwise derivative `dd/dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub depth: DepthMap,
    pub derivative: Grid<f64>,
}

pub fn decode(x: &Grid<f64>, cfg: &ReprConfig) -> Result<Decoded> {
    cfg.validate()?;
    let mut depth = Grid::new(x.height(), x.width(), 0.0);
    let mut derivative = Grid::new(x.height(), x.width(), 0.0);
    for i in 0..x.height() {
        for j in 0..x.width() {
            let xv = x.at(i, j);
            cfg.check_domain(xv, i, j)?;
            let (d, dd) = cfg.decode_one(xv);
            *depth.get_mut(i, j) = d;
            *derivative.get_mut(i, j) = dd;
        }
    }
    Ok(Decoded { depth, derivative })
}

pub fn encode(depth: &DepthMap, cfg: &ReprConfig) -> Grid<f64> {
    depth.map(|d| cfg.encode_one(*d))
}

/// Inverse-variance loss of one depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTerm {
    pub loss: f64,
    pub variance: f64,
    /// `dL/dd`, zero outside the valid set and when collapsed.
    pub grad: Grid<f64>,
    /// Set when the variance fell below [`VARIANCE_EPS`]; the loss is then capped.
    pub collapsed: bool,
}

/// `L = VARIANCE_WEIGHT / Var(d)` with the population variance over valid pixels.
pub fn variance_regularizer(d: &DepthMap, valid: Option<&Mask>) -> Result<VarianceTerm> {
    let is_valid = |k: usize| valid.map_or(true, |m| m.data()[k]);
    let mut n = 0usize;
    let mut sum = 0.0;
    for (k, v) in d.data().iter().enumerate() {
        if is_valid(k) {
            n += 1;
            sum += v;
        }
    }
    if n < 2 {
        return Err(invalid!("variance regularizer needs at least 2 valid pixels, got {}", n));
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for (k, v) in d.data().iter().enumerate() {
        if is_valid(k) {
            ss += (v - mean) * (v - mean);
        }
    }
    let variance = ss / n as f64;
    let mut grad = Grid::new(d.height(), d.width(), 0.0);
    if !(variance >= VARIANCE_EPS) {
        return Ok(VarianceTerm { loss: VARIANCE_CAP, variance, grad, collapsed: true });
    }
    let loss = VARIANCE_WEIGHT / variance;
    let coef = -VARIANCE_WEIGHT / (variance * variance) * 2.0 / n as f64;
    for (k, g) in grad.data_mut().iter_mut().enumerate() {
        if is_valid(k) {
            *g = coef * (d.data()[k] - mean);
        }
    }
    Ok(VarianceTerm { loss, variance, grad, collapsed: false })
}
