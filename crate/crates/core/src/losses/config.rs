//! Declarative loss configurations and the named ablation-grid rows.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::depth_repr::{ReprConfig, ReprKind};
use crate::error::{Error, Result};

/// Which appearance handlers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Illumination {
    /// Affine `a I + b` between the frames, `(a, b)` optimized.
    pub brightness: bool,
    /// SSIM blended with L1; without it the error is plain L1.
    pub ssim: bool,
    /// Depth-error weights on the SSIM term.
    pub dw_ssim: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Occlusion {
    /// Average over source frames.
    #[default]
    None,
    /// Per-pixel minimum over source frames.
    MinReprojection,
    /// Depth-consistency gating.
    DepthConsistency,
    /// Gating per source, then the minimum.
    Combined,
}

impl Occlusion {
    pub fn uses_min(self) -> bool {
        matches!(self, Occlusion::MinReprojection | Occlusion::Combined)
    }

    pub fn uses_gate(self) -> bool {
        matches!(self, Occlusion::DepthConsistency | Occlusion::Combined)
    }

    pub fn name(self) -> &'static str {
        match self {
            Occlusion::None => "none",
            Occlusion::MinReprojection => "MR",
            Occlusion::DepthConsistency => "DC",
            Occlusion::Combined => "MR+DC",
        }
    }
}

impl core::str::FromStr for Occlusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "-" => Ok(Occlusion::None),
            "MR" | "mr" => Ok(Occlusion::MinReprojection),
            "DC" | "dc" => Ok(Occlusion::DepthConsistency),
            "MR+DC" | "mr+dc" | "M+D" => Ok(Occlusion::Combined),
            other => Err(Error::Config(format!("unknown occlusion handler '{other}'"))),
        }
    }
}

/// Which dynamic-object handlers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dynamic {
    pub auto_mask: bool,
    pub uncertainty: bool,
    pub motion_map: bool,
}

/// Term weights and numerical knobs that the grid rows do not pin down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Edge-aware smoothness on mean-normalized depth.
    pub smooth_depth: f64,
    /// Edge-aware smoothness on motion-map channels.
    pub smooth_motion: f64,
    /// Weight of the L1/2 motion sparsity loss.
    pub sparsity: f64,
    /// Inverse-variance regularizer for disparity and softplus depth.
    pub variance_regularizer: bool,
    /// Relative slack of the depth-consistency test.
    pub dc_tolerance: f64,
    /// Amplitude of the fixed per-pixel offset added to unwarped errors before auto-masking.
    pub identity_tie_break: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            smooth_depth: 1e-1,
            smooth_motion: 1e-1,
            sparsity: 1e-1,
            variance_regularizer: true,
            dc_tolerance: 0.01,
            identity_tie_break: 1e-5,
        }
    }
}

/// Default number of optimizer steps before the motion map is released.
pub const DEFAULT_WARM_UP_STEPS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub repr: ReprConfig,
    pub illumination: Illumination,
    pub occlusion: Occlusion,
    pub dynamic: Dynamic,
    pub warm_up_steps: usize,
    pub grid_id: Option<String>,
    pub weights: LossWeights,
}

impl LossConfig {
    /// SSIM+L1 error, no occlusion or dynamic handling.
    pub fn plain(kind: ReprKind) -> Self {
        Self {
            repr: ReprConfig::new(kind),
            illumination: Illumination { ssim: true, ..Default::default() },
            occlusion: Occlusion::None,
            dynamic: Dynamic::default(),
            warm_up_steps: DEFAULT_WARM_UP_STEPS,
            grid_id: None,
            weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.repr.validate()?;
        if self.dynamic.auto_mask && self.illumination.brightness {
            return Err(Error::Config("auto_mask cannot be combined with brightness".to_string()));
        }
        if self.dynamic.auto_mask && self.dynamic.uncertainty {
            return Err(Error::Config("auto_mask cannot be combined with uncertainty".to_string()));
        }
        if self.illumination.dw_ssim && !self.illumination.ssim {
            return Err(Error::Config("dw_ssim requires ssim".to_string()));
        }
        let w = &self.weights;
        for (name, v) in [
            ("smooth_depth", w.smooth_depth),
            ("smooth_motion", w.smooth_motion),
            ("sparsity", w.sparsity),
            ("dc_tolerance", w.dc_tolerance),
            ("identity_tie_break", w.identity_tie_break),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether the motion map contributes at optimizer step `step`.
    pub fn motion_active(&self, step: usize) -> bool {
        self.dynamic.motion_map && step >= self.warm_up_steps
    }

    /// Whether the source depth map is read (depth consistency or depth-error weights).
    pub fn needs_source_depth(&self) -> bool {
        self.occlusion.uses_gate() || self.illumination.dw_ssim
    }

    pub fn variance_active(&self) -> bool {
        self.weights.variance_regularizer && self.repr.kind.uses_variance_regularizer()
    }

    /// Short human-readable label, the grid id when there is one.
    pub fn label(&self) -> String {
        match &self.grid_id {
            Some(id) => id.clone(),
            None => format!("{self}"),
        }
    }
}

impl fmt::Display for LossConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = Vec::new();
        parts.push(self.repr.kind.name());
        if self.illumination.brightness {
            parts.push("brightness");
        }
        parts.push(if self.illumination.ssim { "ssim" } else { "l1" });
        if self.illumination.dw_ssim {
            parts.push("dw");
        }
        parts.push(self.occlusion.name());
        if self.dynamic.auto_mask {
            parts.push("AM");
        }
        if self.dynamic.uncertainty {
            parts.push("U");
        }
        if self.dynamic.motion_map {
            parts.push("MM");
        }
        f.write_str(&parts.join("+"))
    }
}

/// One row of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub id: &'static str,
    pub config: LossConfig,
    /// The configuration of the earlier state of the art (S2).
    pub prior_state_of_the_art: bool,
    /// The configuration marked best overall (M3).
    pub marked_best: bool,
}

// (id, brightness, dw, occlusion, auto_mask, uncertainty, motion_map)
type Row = (&'static str, bool, bool, Occlusion, bool, bool, bool);

const STAGE_ONE: [(&str, bool, bool, Occlusion, bool); 6] = [
    ("0", false, false, Occlusion::None, false),
    ("1", false, false, Occlusion::MinReprojection, false),
    ("2", false, false, Occlusion::MinReprojection, true),
    ("3", true, false, Occlusion::MinReprojection, false),
    ("4", false, true, Occlusion::MinReprojection, true),
    ("5", true, true, Occlusion::MinReprojection, false),
];

const STAGE_TWO: [(&str, bool, bool, bool); 5] = [
    ("0", false, false, false),
    ("1", true, false, false),
    ("2", false, true, false),
    ("3", true, false, true),
    ("4", false, true, true),
];

fn rows() -> Vec<(String, ReprKind, Row)> {
    let mut out = Vec::new();
    for (prefix, kind) in [("R", ReprKind::Disparity), ("S", ReprKind::ScaledDisparity), ("L", ReprKind::Softplus)] {
        for (n, b, dw, occ, am) in STAGE_ONE {
            out.push((format!("{prefix}{n}"), kind, ("", b, dw, occ, am, false, false)));
        }
    }
    for (prefix, occ) in
        [("M", Occlusion::MinReprojection), ("D", Occlusion::DepthConsistency), ("C", Occlusion::Combined)]
    {
        for (n, am, u, mm) in STAGE_TWO {
            out.push((format!("{prefix}{n}"), ReprKind::Softplus, ("", false, false, occ, am, u, mm)));
        }
    }
    out
}

/// All grid ids in table order.
pub fn grid_ids() -> Vec<String> {
    rows().into_iter().map(|(id, _, _)| id).collect()
}

/// Resolves a grid id (`R0`..`R5`, `S0`..`S5`, `L0`..`L5`, `M0`..`M4`, `D0`..`D4`, `C0`..`C4`).
pub fn grid_entry(id: &str) -> Result<GridEntry> {
    let Some((name, kind, (_, brightness, dw, occlusion, auto_mask, uncertainty, motion_map))) =
        rows().into_iter().find(|(name, _, _)| name == id)
    else {
        return Err(Error::Config(format!("unknown grid id '{id}'; valid ids: {}", grid_ids().join(", "))));
    };
    let config = LossConfig {
        repr: ReprConfig::new(kind),
        illumination: Illumination { brightness, ssim: true, dw_ssim: dw },
        occlusion,
        dynamic: Dynamic { auto_mask, uncertainty, motion_map },
        warm_up_steps: DEFAULT_WARM_UP_STEPS,
        grid_id: Some(name.clone()),
        weights: LossWeights::default(),
    };
    config.validate()?;
    let id: &'static str = static_id(&name);
    Ok(GridEntry { id, config, prior_state_of_the_art: id == "S2", marked_best: id == "M3" })
}

fn static_id(name: &str) -> &'static str {
    const IDS: [&str; 33] = [
        "R0", "R1", "R2", "R3", "R4", "R5", "S0", "S1", "S2", "S3", "S4", "S5", "L0", "L1", "L2", "L3", "L4",
        "L5", "M0", "M1", "M2", "M3", "M4", "D0", "D1", "D2", "D3", "D4", "C0", "C1", "C2", "C3", "C4",
    ];
    IDS.iter().find(|s| **s == name).copied().unwrap_or("")
}

pub fn resolve_grid_id(id: &str) -> Result<LossConfig> {
    grid_entry(id).map(|e| e.config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_grid_id_resolves_and_validates() {
        let ids = grid_ids();
        assert_eq!(ids.len(), 33);
        for id in &ids {
            let e = grid_entry(id).unwrap();
            assert_eq!(e.id, id.as_str());
            e.config.validate().unwrap();
            let c = &e.config;
            assert!(c.illumination.ssim);
            if c.illumination.brightness || c.dynamic.uncertainty {
                assert!(!c.dynamic.auto_mask, "{id}");
            }
        }
    }

    #[test]
    fn named_rows() {
        let m3 = grid_entry("M3").unwrap();
        assert!(m3.marked_best);
        let c = m3.config;
        assert_eq!(c.repr.kind, ReprKind::Softplus);
        assert_eq!(c.occlusion, Occlusion::MinReprojection);
        assert_eq!(c.dynamic, Dynamic { auto_mask: true, uncertainty: false, motion_map: true });
        assert!(!c.illumination.brightness && !c.illumination.dw_ssim);

        let r0 = resolve_grid_id("R0").unwrap();
        assert_eq!(r0.repr.kind, ReprKind::Disparity);
        assert_eq!(r0.occlusion, Occlusion::None);
        assert_eq!(r0.dynamic, Dynamic::default());
        assert!(!r0.illumination.brightness && !r0.illumination.dw_ssim);

        let s2 = grid_entry("S2").unwrap();
        assert!(s2.prior_state_of_the_art);
        assert_eq!(s2.config.repr.kind, ReprKind::ScaledDisparity);
        assert!((s2.config.repr.sigma_max - 10.0).abs() < 1e-12);
        assert!((s2.config.repr.sigma_min - 0.01).abs() < 1e-15);
        assert_eq!(s2.config.occlusion, Occlusion::MinReprojection);
        assert!(s2.config.dynamic.auto_mask && !s2.config.dynamic.motion_map);

        let l5 = resolve_grid_id("L5").unwrap();
        assert_eq!(l5.repr.kind, ReprKind::Softplus);
        assert!(l5.illumination.brightness && l5.illumination.dw_ssim);
        assert_eq!(l5.occlusion, Occlusion::MinReprojection);
        assert_eq!(l5.dynamic, Dynamic::default());

        let c4 = resolve_grid_id("C4").unwrap();
        assert_eq!(c4.occlusion, Occlusion::Combined);
        assert!(c4.dynamic.uncertainty && c4.dynamic.motion_map);
    }

    #[test]
    fn unknown_id_lists_valid_ids() {
        let e = resolve_grid_id("X9").unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("X9") && msg.contains("M3") && msg.contains("C4"));
    }

    #[test]
    fn exclusions_are_enforced() {
        let mut c = LossConfig::plain(ReprKind::Softplus);
        c.dynamic.auto_mask = true;
        c.dynamic.uncertainty = true;
        let msg = format!("{}", c.validate().unwrap_err());
        assert!(msg.contains("uncertainty"));
        c.dynamic.uncertainty = false;
        c.illumination.brightness = true;
        assert!(format!("{}", c.validate().unwrap_err()).contains("brightness"));
        let mut c = LossConfig::plain(ReprKind::Softplus);
        c.illumination.ssim = false;
        c.illumination.dw_ssim = true;
        assert!(format!("{}", c.validate().unwrap_err()).contains("dw_ssim"));
    }
}
