use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use photocon::formats::{depth_preview, write_mask, write_pfm, write_pgm};
use photocon::manifest::{ManifestFile, Overrides};
use photocon::runner::{run_manifest, summary_json, RunRecord, Status};
use photocon::scene::SceneFile;
use photocon_core::losses::grid_entry;
use photocon_core::losses::grid_ids;
use photocon_core::synth::{preset, render, PRESET_NAMES};

#[derive(Parser)]
#[command(name = "photocon", version, about = "Direct photometric depth/pose fitting on synthetic scene pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every (config, scene, seed) triple of a manifest, or of the --grid/--scene/--seed selection.
    Run {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output root; defaults to the manifest's `out`, then `results`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Seeds to run (replaces the manifest's seeds).
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
        /// Grid ids to run (filters the manifest).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<String>>,
        /// Scene names to run (filters the manifest).
        #[arg(long, value_delimiter = ',')]
        scene: Option<Vec<String>>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Print a JSON summary on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Render a scene pair with its ground truth to PGM/PFM files.
    Render {
        /// Preset name.
        #[arg(long, conflicts_with = "scene_file")]
        scene: Option<String>,
        #[arg(long)]
        scene_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the named loss configurations.
    Grid,
    /// List the scene presets.
    Scenes,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { manifest, out, jobs, seed, grid, scene, max_steps, json } => {
            let (file, base) = match &manifest {
                Some(p) => (ManifestFile::load(p)?, p.parent().unwrap_or(Path::new(".")).to_path_buf()),
                None => {
                    let (Some(g), Some(s)) = (&grid, &scene) else {
                        bail!("give --manifest, or both --grid and --scene");
                    };
                    (ManifestFile::from_selection(g, s, seed.as_deref().unwrap_or(&[0])), PathBuf::from("."))
                }
            };
            let ov = Overrides { seeds: seed, grid, scene, max_steps };
            let resolved = file.resolve(&base, &ov)?;
            let out = out.or(resolved.out.clone()).unwrap_or_else(|| PathBuf::from("results"));
            let jobs = jobs.or(resolved.jobs).unwrap_or(1);
            let progress = |done: usize, total: usize, r: &RunRecord| {
                eprintln!(
                    "[{done}/{total}] {}/{}/{}: {} after {} steps ({:.1}s){}",
                    r.label,
                    r.scene,
                    r.seed,
                    r.status.name(),
                    r.steps,
                    r.wall_time_s,
                    r.metrics.map(|m| format!(", ARD {:.4}, d1 {:.4}", m.ard, m.delta1)).unwrap_or_default()
                );
            };
            let records = run_manifest(&resolved, &out, jobs, Some(&progress))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary_json(&records))?);
            }
            let ok = records.iter().all(|r| r.status == Status::Converged);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Render { scene, scene_file, seed, out } => {
            let spec = match (scene, scene_file) {
                (Some(name), None) => preset(&name, seed).map_err(|e| anyhow!("{e}"))?,
                (None, Some(path)) => SceneFile::load(&path)?.to_spec(seed)?,
                _ => bail!("give --scene or --scene-file"),
            };
            let (pair, gt) = render(&spec).map_err(|e| anyhow!("{e}"))?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for k in 0..2 {
                write_pgm(&out.join(format!("frame{k}.pgm")), &pair.frames[k])?;
                write_pfm(&out.join(format!("depth{k}.pfm")), &gt.depth[k])?;
                write_pgm(&out.join(format!("depth{k}.pgm")), &depth_preview(&gt.depth[k], 1.0, 80.0))?;
                write_mask(&out.join(format!("occluded{k}.pgm")), &gt.occluded[k])?;
                write_mask(&out.join(format!("dynamic{k}.pgm")), &gt.dynamic[k])?;
            }
            eprintln!("wrote {} ({}x{}) to {}", spec.name, spec.width, spec.height, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid => {
            for id in grid_ids() {
                let e = grid_entry(&id).map_err(|e| anyhow!("{e}"))?;
                let note = if e.prior_state_of_the_art {
                    "  (prior state of the art)"
                } else if e.marked_best {
                    "  (best)"
                } else {
                    ""
                };
                println!("{id:<4}{}{note}", e.config);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenes => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
