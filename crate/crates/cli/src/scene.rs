//! Declarative TOML scene files.
//!
//! ```toml
//! preset = "static"          # optional starting point; keys below override it
//! name = "my-scene"
//! width = 320
//! height = 96
//! focal = 100.0
//! texture_seed = 3
//! scale = 0.5                # resample the finished spec
//!
//! [pose]                     # maps first-camera points into the second camera
//! r = [0.0, 0.004, 0.0]      # axis-angle
//! t = [-0.5, 0.02, -0.1]
//!
//! [brightness]               # applied to the second frame
//! a = 1.2
//! b = 0.05
//!
//! [[surface]]                # replaces the preset's surfaces when present
//! plane = 16.0
//!
//! [[surface]]
//! plane = 11.0
//! bounds = [5.0, 10.0, -3.0, 3.0]
//! texture = { constant = 0.5 }
//!
//! [[surface]]
//! cuboid = { min = [-1.5, -1.0, 5.0], max = [0.5, 1.5, 6.0] }
//! motion = [-0.4, 0.0, 0.0]
//! texture = { cell = 16.0, octaves = 3 }
//! ```

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use photocon_core::geometry::PoseSE3;
use photocon_core::photometry::BrightnessParams;
use photocon_core::synth::{preset, SceneSpec, Surface, Texture, DEFAULT_FOCAL, DEFAULT_HEIGHT, DEFAULT_WIDTH};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub focal: Option<f64>,
    pub texture_seed: Option<u64>,
    pub scale: Option<f64>,
    pub pose: Option<PoseDef>,
    pub brightness: Option<BrightnessDef>,
    #[serde(default)]
    pub surface: Vec<SurfaceDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDef {
    #[serde(default)]
    pub r: [f64; 3],
    #[serde(default)]
    pub t: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrightnessDef {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceDef {
    pub plane: Option<f64>,
    pub bounds: Option<[f64; 4]>,
    pub cuboid: Option<CuboidDef>,
    #[serde(default)]
    pub motion: [f64; 3],
    pub texture: Option<TextureDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuboidDef {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TextureDef {
    Constant { constant: f64 },
    Noise { cell: f64, octaves: u32 },
}

impl SurfaceDef {
    fn build(&self, k: usize) -> Result<Surface> {
        let base = match (self.plane, &self.cuboid) {
            (Some(z), None) => match self.bounds {
                Some(b) => Surface::patch(z, b),
                None => Surface::plane(z),
            },
            (None, Some(c)) => {
                if self.bounds.is_some() {
                    bail!("surface {k}: 'bounds' only applies to planes");
                }
                Surface::cuboid(c.min, c.max)
            }
            _ => bail!("surface {k}: give exactly one of 'plane' or 'cuboid'"),
        };
        let s = base.moving(self.motion);
        Ok(match self.texture {
            Some(TextureDef::Constant { constant }) => s.textured(Texture::Constant(constant)),
            Some(TextureDef::Noise { cell, octaves }) => s.textured(Texture::Noise { cell, octaves }),
            None => s,
        })
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading scene file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing scene file {}", path.display()))
    }

    /// Builds the spec; `seed` fills in the texture seed when the file leaves it open.
    pub fn to_spec(&self, seed: u64) -> Result<SceneSpec> {
        let mut spec = match &self.preset {
            Some(p) => preset(p, seed).map_err(|e| anyhow!("{e}"))?,
            None => SceneSpec {
                name: "custom".into(),
                width: DEFAULT_WIDTH,
                height: DEFAULT_HEIGHT,
                focal: DEFAULT_FOCAL,
                surfaces: Vec::new(),
                pose: PoseSE3::IDENTITY,
                brightness: BrightnessParams::default(),
                texture_seed: seed,
            },
        };
        if let Some(n) = &self.name {
            spec.name = n.clone();
        }
        if let Some(w) = self.width {
            spec.width = w;
        }
        if let Some(h) = self.height {
            spec.height = h;
        }
        if let Some(f) = self.focal {
            spec.focal = f;
        }
        if let Some(s) = self.texture_seed {
            spec.texture_seed = s;
        }
        if let Some(p) = &self.pose {
            spec.pose = PoseSE3::new(p.r, p.t);
        }
        if let Some(b) = &self.brightness {
            spec.brightness = BrightnessParams { a: b.a, b: b.b };
        }
        if !self.surface.is_empty() {
            spec.surfaces = self.surface.iter().enumerate().map(|(k, s)| s.build(k)).collect::<Result<_>>()?;
        }
        if let Some(f) = self.scale {
            spec = spec.scaled(f).map_err(|e| anyhow!("{e}"))?;
        }
        spec.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(spec)
    }
}
