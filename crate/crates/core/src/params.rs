//! Optimized parameter groups of a frame pair and the pair itself.

use alloc::vec::Vec;
use core::fmt;

use crate::depth_repr::ReprConfig;
use crate::error::{invalid, Error, Result};
use crate::geometry::{CameraModel, MotionMap, PoseSE3};
use crate::grid::{Grid, Image};
use crate::photometry::BrightnessParams;

/// Two frames seen by one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub frames: [Image; 2],
    pub camera: CameraModel,
}

impl ScenePair {
    pub fn new(frames: [Image; 2], camera: CameraModel) -> Result<Self> {
        camera.validate()?;
        for f in &frames {
            if f.height() != camera.height || f.width() != camera.width {
                return Err(invalid!(
                    "frame {}x{} does not match camera {}x{}",
                    f.height(),
                    f.width(),
                    camera.height,
                    camera.width
                ));
            }
            if !f.is_finite() {
                return Err(invalid!("frame contains non-finite intensities"));
            }
        }
        Ok(Self { frames, camera })
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    /// The pair box-filtered down by `factor` (a power of two).
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(invalid!("downscale factor must be a power of two, got {factor}"));
        }
        let mut frames = self.frames.clone();
        let mut f = factor;
        while f > 1 {
            frames = frames.map(|img| img.downsample2());
            f /= 2;
        }
        let camera = self.camera.downscaled(factor);
        if camera.width < 2 || camera.height < 2 {
            return Err(invalid!("downscale factor {factor} leaves fewer than 2 pixels per axis"));
        }
        Ok(Self { frames, camera })
    }
}

/// A named parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Depth,
    Rotation,
    Translation,
    Motion,
    LogSigma,
    Gain,
    Bias,
}

impl Group {
    pub const ALL: [Group; 7] =
        [Group::Depth, Group::Rotation, Group::Translation, Group::Motion, Group::LogSigma, Group::Gain, Group::Bias];

    pub fn name(self) -> &'static str {
        match self {
            Group::Depth => "x",
            Group::Rotation => "r",
            Group::Translation => "t",
            Group::Motion => "motion",
            Group::LogSigma => "log_sigma",
            Group::Gain => "a",
            Group::Bias => "b",
        }
    }

    /// Groups that reach the loss without passing through the warp.
    pub fn warp_free(self) -> bool {
        matches!(self, Group::LogSigma | Group::Gain | Group::Bias)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| invalid!("unknown parameter group '{s}' (x, r, t, motion, log_sigma, a, b)"))
    }
}

/// Every optimized quantity of a frame pair. Also used to hold gradients.
///
/// Per-frame fields are indexed by frame; `pose` maps frame-0 points into frame 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub x: [Grid<f64>; 2],
    pub pose: PoseSE3,
    pub motion: [MotionMap; 2],
    pub log_sigma: [Grid<f64>; 2],
    pub brightness: BrightnessParams,
}

impl Params {
    /// All zeros, including the brightness gain.
    pub fn zeros(height: usize, width: usize) -> Self {
        let g = Grid::new(height, width, 0.0);
        let m = Grid::new(height, width, [0.0; 3]);
        Self {
            x: [g.clone(), g.clone()],
            pose: PoseSE3::IDENTITY,
            motion: [m.clone(), m],
            log_sigma: [g.clone(), g],
            brightness: BrightnessParams { a: 0.0, b: 0.0 },
        }
    }

    /// Constant depth `depth`, identity pose, zero motion and log-uncertainty, `a = 1`, `b = 0`.
    pub fn init(repr: &ReprConfig, height: usize, width: usize, depth: f64) -> Result<Self> {
        repr.validate()?;
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(invalid!("initial depth must be positive, got {depth}"));
        }
        let mut p = Self::zeros(height, width);
        let x = repr.encode_one(depth);
        p.x = [Grid::new(height, width, x), Grid::new(height, width, x)];
        p.brightness = BrightnessParams::default();
        Ok(p)
    }

    pub fn height(&self) -> usize {
        self.x[0].height()
    }

    pub fn width(&self) -> usize {
        self.x[0].width()
    }

    pub fn group_len(&self, g: Group) -> usize {
        let n = self.x[0].len();
        match g {
            Group::Depth | Group::LogSigma => 2 * n,
            Group::Motion => 6 * n,
            Group::Rotation | Group::Translation => 3,
            Group::Gain | Group::Bias => 1,
        }
    }

    fn slot(&mut self, g: Group, idx: usize) -> &mut f64 {
        let n = self.x[0].len();
        match g {
            Group::Depth => &mut self.x[idx / n].data_mut()[idx % n],
            Group::LogSigma => &mut self.log_sigma[idx / n].data_mut()[idx % n],
            Group::Motion => &mut self.motion[idx / (3 * n)].data_mut()[(idx / 3) % n][idx % 3],
            Group::Rotation => &mut self.pose.r[idx],
            Group::Translation => &mut self.pose.t[idx],
            Group::Gain => &mut self.brightness.a,
            Group::Bias => &mut self.brightness.b,
        }
    }

    /// Coordinate `idx` of group `g`; per-frame groups are laid out frame by frame, row-major.
    pub fn get(&self, g: Group, idx: usize) -> f64 {
        let n = self.x[0].len();
        match g {
            Group::Depth => self.x[idx / n].data()[idx % n],
            Group::LogSigma => self.log_sigma[idx / n].data()[idx % n],
            Group::Motion => self.motion[idx / (3 * n)].data()[(idx / 3) % n][idx % 3],
            Group::Rotation => self.pose.r[idx],
            Group::Translation => self.pose.t[idx],
            Group::Gain => self.brightness.a,
            Group::Bias => self.brightness.b,
        }
    }

    pub fn set(&mut self, g: Group, idx: usize, v: f64) {
        *self.slot(g, idx) = v;
    }

    /// Group values in layout order.
    pub fn values(&self, g: Group) -> Vec<f64> {
        match g {
            Group::Depth => self.x.iter().flat_map(|m| m.data().iter().copied()).collect(),
            Group::LogSigma => self.log_sigma.iter().flat_map(|m| m.data().iter().copied()).collect(),
            Group::Motion => self.motion.iter().flat_map(|m| m.data().iter().flat_map(|p| p.iter().copied())).collect(),
            Group::Rotation => self.pose.r.to_vec(),
            Group::Translation => self.pose.t.to_vec(),
            Group::Gain => alloc::vec![self.brightness.a],
            Group::Bias => alloc::vec![self.brightness.b],
        }
    }

    /// Calls `f(index, value)` on each coordinate of `g` in layout order.
    pub fn for_each_mut(&mut self, g: Group, mut f: impl FnMut(usize, &mut f64)) {
        match g {
            Group::Depth | Group::LogSigma => {
                let maps = if g == Group::Depth { &mut self.x } else { &mut self.log_sigma };
                let mut k = 0;
                for m in maps.iter_mut() {
                    for v in m.data_mut() {
                        f(k, v);
                        k += 1;
                    }
                }
            }
            Group::Motion => {
                let mut k = 0;
                for m in self.motion.iter_mut() {
                    for p in m.data_mut() {
                        for v in p.iter_mut() {
                            f(k, v);
                            k += 1;
                        }
                    }
                }
            }
            Group::Rotation => self.pose.r.iter_mut().enumerate().for_each(|(k, v)| f(k, v)),
            Group::Translation => self.pose.t.iter_mut().enumerate().for_each(|(k, v)| f(k, v)),
            Group::Gain => f(0, &mut self.brightness.a),
            Group::Bias => f(0, &mut self.brightness.b),
        }
    }

    pub fn is_finite(&self, g: Group) -> bool {
        self.values(g).iter().all(|v| v.is_finite())
    }

    /// Per-pixel fields resized bilinearly to `height x width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        let motion = self.motion.each_ref().map(|m| {
            let chans: [Grid<f64>; 3] = core::array::from_fn(|a| m.map(|p| p[a]).resize_bilinear(height, width));
            Grid::from_fn(height, width, |i, j| [chans[0].at(i, j), chans[1].at(i, j), chans[2].at(i, j)])
        });
        Self {
            x: self.x.each_ref().map(|g| g.resize_bilinear(height, width)),
            pose: self.pose,
            motion,
            log_sigma: self.log_sigma.each_ref().map(|g| g.resize_bilinear(height, width)),
            brightness: self.brightness,
        }
    }
}
