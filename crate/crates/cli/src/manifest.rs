//! Run manifests: which (configuration, scene, seed) triples to fit and how.
//!
//! ```toml
//! out = "results"            # overridden by --out
//! jobs = 2                   # overridden by --jobs
//!
//! [schedule]                 # defaults for every run
//! max_steps = 20000
//! levels = [4, 2, 1]
//!
//! [weights]                  # loss weight defaults for every run
//! smooth_depth = 0.1
//!
//! [[run]]
//! grid = "S2"
//! scene = "static"
//! seeds = [1, 2, 3]
//!
//! [[run]]
//! scene_file = "scenes/wall.toml"   # relative to the manifest
//! seed = 7
//! scale = 0.5
//! [run.config]
//! label = "softplus-dc"
//! repr = "softplus"
//! occlusion = "dc"
//! auto_mask = true
//! [run.schedule]
//! max_steps = 4000
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use photocon_core::depth_repr::{ReprConfig, ReprKind};
use photocon_core::losses::{resolve_grid_id, Dynamic, Illumination, LossConfig, LossWeights, Occlusion, DEFAULT_WARM_UP_STEPS};
use photocon_core::optim::Schedule;
use photocon_core::synth::{preset, SceneSpec};

use crate::scene::SceneFile;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub schedule: ScheduleDef,
    #[serde(default)]
    pub weights: WeightsDef,
    #[serde(default)]
    pub run: Vec<RunDef>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDef {
    pub max_steps: Option<usize>,
    pub warm_up_steps: Option<usize>,
    pub levels: Option<Vec<usize>>,
    pub tolerance: Option<f64>,
    pub window: Option<usize>,
    pub init_depth: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDef {
    pub smooth_depth: Option<f64>,
    pub smooth_motion: Option<f64>,
    pub sparsity: Option<f64>,
    pub variance_regularizer: Option<bool>,
    pub dc_tolerance: Option<f64>,
    pub identity_tie_break: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDef {
    pub label: String,
    pub repr: String,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    #[serde(default)]
    pub brightness: bool,
    #[serde(default = "yes")]
    pub ssim: bool,
    #[serde(default)]
    pub dw_ssim: bool,
    #[serde(default = "no_occlusion")]
    pub occlusion: String,
    #[serde(default)]
    pub auto_mask: bool,
    #[serde(default)]
    pub uncertainty: bool,
    #[serde(default)]
    pub motion_map: bool,
}

fn yes() -> bool {
    true
}

fn no_occlusion() -> String {
    "none".into()
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDef {
    pub grid: Option<String>,
    pub config: Option<ConfigDef>,
    pub scene: Option<String>,
    pub scene_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    /// Resolution factor applied to the scene.
    pub scale: Option<f64>,
    #[serde(default)]
    pub schedule: ScheduleDef,
    #[serde(default)]
    pub weights: WeightsDef,
}

impl ScheduleDef {
    fn apply(&self, s: &mut Schedule) {
        if let Some(v) = self.max_steps {
            s.max_steps = v;
        }
        if let Some(v) = self.warm_up_steps {
            s.warm_up_steps = Some(v);
        }
        if let Some(v) = &self.levels {
            s.levels = v.clone();
        }
        if let Some(v) = self.tolerance {
            s.tolerance = v;
        }
        if let Some(v) = self.window {
            s.window = v;
        }
        if let Some(v) = self.init_depth {
            s.init_depth = v;
        }
    }
}

impl WeightsDef {
    fn apply(&self, w: &mut LossWeights) {
        if let Some(v) = self.smooth_depth {
            w.smooth_depth = v;
        }
        if let Some(v) = self.smooth_motion {
            w.smooth_motion = v;
        }
        if let Some(v) = self.sparsity {
            w.sparsity = v;
        }
        if let Some(v) = self.variance_regularizer {
            w.variance_regularizer = v;
        }
        if let Some(v) = self.dc_tolerance {
            w.dc_tolerance = v;
        }
        if let Some(v) = self.identity_tie_break {
            w.identity_tie_break = v;
        }
    }
}

impl ConfigDef {
    fn build(&self) -> Result<LossConfig> {
        let kind: ReprKind = self.repr.parse().map_err(|e| anyhow!("{e}"))?;
        let mut repr = ReprConfig::new(kind);
        if let Some(v) = self.sigma_min {
            repr.sigma_min = v;
        }
        if let Some(v) = self.sigma_max {
            repr.sigma_max = v;
        }
        let occlusion: Occlusion = self.occlusion.parse().map_err(|e| anyhow!("{e}"))?;
        Ok(LossConfig {
            repr,
            illumination: Illumination { brightness: self.brightness, ssim: self.ssim, dw_ssim: self.dw_ssim },
            occlusion,
            dynamic: Dynamic { auto_mask: self.auto_mask, uncertainty: self.uncertainty, motion_map: self.motion_map },
            warm_up_steps: DEFAULT_WARM_UP_STEPS,
            grid_id: None,
            weights: LossWeights::default(),
        })
    }
}

/// Where a run's scene comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    Preset(String),
    File(PathBuf),
}

/// One fully resolved run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    /// Output directory component: the grid id or the explicit config's label.
    pub label: String,
    pub config: LossConfig,
    pub scene_name: String,
    pub scene: SceneSource,
    pub scale: Option<f64>,
    pub seed: u64,
    pub schedule: Schedule,
}

impl RunSpec {
    /// The rendered scene description for this run.
    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let spec = match &self.scene {
            SceneSource::Preset(name) => preset(name, self.seed).map_err(|e| anyhow!("{e}"))?,
            SceneSource::File(path) => SceneFile::load(path)?.to_spec(self.seed)?,
        };
        match self.scale {
            Some(f) => spec.scaled(f).map_err(|e| anyhow!("{e}")),
            None => Ok(spec),
        }
    }

    /// `<label>/<scene>/<seed>`
    pub fn rel_dir(&self) -> PathBuf {
        Path::new(&self.label).join(&self.scene_name).join(self.seed.to_string())
    }
}

/// Command-line adjustments applied on top of a manifest.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub grid: Option<Vec<String>>,
    pub scene: Option<Vec<String>>,
    pub max_steps: Option<usize>,
}

#[derive(Debug)]
pub struct Manifest {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub runs: Vec<RunSpec>,
}

impl ManifestFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// A manifest made only from command-line selections.
    pub fn from_selection(grid: &[String], scene: &[String], seeds: &[u64]) -> Self {
        let mut m = Self::default();
        for g in grid {
            for s in scene {
                m.run.push(RunDef {
                    grid: Some(g.clone()),
                    scene: Some(s.clone()),
                    seeds: Some(seeds.to_vec()),
                    ..Default::default()
                });
            }
        }
        m
    }

    /// Expands seeds, resolves configurations and schedules, and rejects duplicates.
    /// `base` is the directory relative scene paths are resolved against.
    pub fn resolve(&self, base: &Path, ov: &Overrides) -> Result<Manifest> {
        let mut runs = Vec::new();
        for (k, r) in self.run.iter().enumerate() {
            let ctx = || format!("run #{}", k + 1);
            let (label, mut config) = match (&r.grid, &r.config) {
                (Some(id), None) => {
                    let cfg = resolve_grid_id(id).map_err(|e| anyhow!("{e}")).with_context(ctx)?;
                    (id.clone(), cfg)
                }
                (None, Some(c)) => (c.label.clone(), c.build().with_context(ctx)?),
                _ => bail!("{}: give exactly one of 'grid' or 'config'", ctx()),
            };
            if label.is_empty() || label.contains(['/', '\\']) || label.starts_with('.') {
                bail!("{}: label '{label}' is not usable as a directory name", ctx());
            }
            if let Some(keep) = &ov.grid {
                if !keep.iter().any(|g| *g == label) {
                    continue;
                }
            }
            self.weights.apply(&mut config.weights);
            r.weights.apply(&mut config.weights);
            config.validate().map_err(|e| anyhow!("{e}")).with_context(ctx)?;

            let (scene_name, scene) = match (&r.scene, &r.scene_file) {
                (Some(name), None) => {
                    preset(name, 0).map_err(|e| anyhow!("{e}")).with_context(ctx)?;
                    (name.clone(), SceneSource::Preset(name.clone()))
                }
                (None, Some(path)) => {
                    let path = base.join(path);
                    let spec = SceneFile::load(&path)?.to_spec(0).with_context(ctx)?;
                    (spec.name, SceneSource::File(path))
                }
                _ => bail!("{}: give exactly one of 'scene' or 'scene_file'", ctx()),
            };
            if let Some(keep) = &ov.scene {
                if !keep.iter().any(|s| *s == scene_name) {
                    continue;
                }
            }

            let mut schedule = Schedule::default();
            self.schedule.apply(&mut schedule);
            r.schedule.apply(&mut schedule);
            if let Some(n) = ov.max_steps {
                schedule.max_steps = n;
            }
            schedule.validate(&config).map_err(|e| anyhow!("{e}")).with_context(ctx)?;

            let seeds = match (&ov.seeds, r.seed, &r.seeds) {
                (Some(s), _, _) => s.clone(),
                (None, Some(s), None) => vec![s],
                (None, None, Some(s)) if !s.is_empty() => s.clone(),
                (None, None, None) => vec![0],
                _ => bail!("{}: give either 'seed' or a non-empty 'seeds'", ctx()),
            };
            for seed in seeds {
                runs.push(RunSpec {
                    label: label.clone(),
                    config: config.clone(),
                    scene_name: scene_name.clone(),
                    scene: scene.clone(),
                    scale: r.scale,
                    seed,
                    schedule: schedule.clone(),
                });
            }
        }
        if runs.is_empty() {
            bail!("manifest selects no runs");
        }
        let mut seen = BTreeSet::new();
        for r in &runs {
            if !seen.insert((r.label.clone(), r.scene_name.clone(), r.seed)) {
                bail!("duplicate run: config {}, scene {}, seed {}", r.label, r.scene_name, r.seed);
            }
        }
        Ok(Manifest { out: self.out.clone(), jobs: self.jobs, runs })
    }
}
