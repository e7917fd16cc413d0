//! Executes resolved manifests on a bounded worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use photocon_core::error::Error as CoreError;
use photocon_core::geometry::PoseSE3;
use photocon_core::metrics::{evaluate, median, DepthMetrics, ScaleReport, DEFAULT_CAP};
use photocon_core::optim::{AdamConfig, CurveRecord, Fitter, RunStatus};
use photocon_core::photometry::BrightnessParams;
use photocon_core::synth::render;
use photocon_core::losses::LossBreakdown;

use crate::formats::write_pfm;
use crate::manifest::{Manifest, RunSpec};

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxSteps,
    Collapsed,
    Diverged,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxSteps => "max_steps",
            Status::Collapsed => "collapsed",
            Status::Diverged => "diverged",
            Status::Failed => "failed",
        }
    }
}

/// Everything recorded about one run. `wall_time_s` is the only non-deterministic field.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub label: String,
    pub config: String,
    pub scene: String,
    pub seed: u64,
    pub status: Status,
    pub steps: usize,
    pub error: Option<String>,
    pub metrics: Option<DepthMetrics>,
    pub scaling_ratio: Option<f64>,
    pub losses: Option<LossBreakdown>,
    pub pose: Option<PoseSE3>,
    pub brightness: Option<BrightnessParams>,
    pub gt_pose: Option<PoseSE3>,
    pub wall_time_s: f64,
    pub dir: PathBuf,
}

/// Angle (degrees) between two translation directions; NaN if either is zero.
pub fn direction_error_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn pose_json(p: &PoseSE3) -> Value {
    json!({ "r": p.r, "t": p.t })
}

impl RunRecord {
    /// The per-run JSON document; excludes wall time so reruns compare bitwise.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("label".into(), json!(self.label));
        m.insert("config".into(), json!(self.config));
        m.insert("scene".into(), json!(self.scene));
        m.insert("seed".into(), json!(self.seed));
        m.insert("status".into(), json!(self.status));
        m.insert("steps".into(), json!(self.steps));
        m.insert("error".into(), json!(self.error));
        m.insert(
            "metrics".into(),
            self.metrics.map_or(Value::Null, |d| Value::Object(d.entries().iter().map(|(k, v)| (k.to_string(), json!(v))).collect())),
        );
        m.insert("scaling_ratio".into(), json!(self.scaling_ratio));
        m.insert(
            "losses".into(),
            self.losses.map_or(Value::Null, |l| Value::Object(l.entries().iter().map(|(k, v)| (k.to_string(), json!(v))).collect())),
        );
        m.insert("pose".into(), self.pose.as_ref().map_or(Value::Null, pose_json));
        m.insert("gt_pose".into(), self.gt_pose.as_ref().map_or(Value::Null, pose_json));
        m.insert(
            "translation_angle_deg".into(),
            match (&self.pose, &self.gt_pose) {
                (Some(p), Some(g)) => json!(direction_error_deg(p.t, g.t)),
                _ => Value::Null,
            },
        );
        m.insert("brightness".into(), self.brightness.map_or(Value::Null, |b| json!({ "a": b.a, "b": b.b })));
        Value::Object(m)
    }
}

fn write_curve(path: &Path, curve: &[CurveRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "level".to_string()];
    header.extend(LossBreakdown::KEYS.iter().map(|k| k.to_string()));
    w.write_record(&header)?;
    for r in curve {
        let mut row = vec![r.step.to_string(), r.level.to_string()];
        row.extend(r.terms.entries().iter().map(|(_, v)| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fits one run and writes its directory under `out`. Failures are recorded, not returned.
pub fn execute(run: &RunSpec, out: &Path) -> RunRecord {
    let start = Instant::now();
    let dir = out.join(run.rel_dir());
    let mut rec = RunRecord {
        label: run.label.clone(),
        config: run.config.to_string(),
        scene: run.scene_name.clone(),
        seed: run.seed,
        status: Status::Failed,
        steps: 0,
        error: None,
        metrics: None,
        scaling_ratio: None,
        losses: None,
        pose: None,
        brightness: None,
        gt_pose: None,
        wall_time_s: 0.0,
        dir: dir.clone(),
    };
    if let Err(e) = fit_into(run, &dir, &mut rec) {
        rec.error = Some(format!("{e:#}"));
    }
    if let Err(e) = fs::create_dir_all(&dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| Ok(fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&rec.to_json())? + "\n")?))
    {
        rec.status = Status::Failed;
        rec.error.get_or_insert_with(|| format!("writing metrics.json: {e:#}"));
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

fn fit_into(run: &RunSpec, dir: &Path, rec: &mut RunRecord) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = run.scene_spec()?;
    let (pair, gt) = render(&spec).map_err(|e| anyhow!("{e}"))?;
    rec.gt_pose = Some(gt.pose);
    let adam = AdamConfig::tuned(&run.config.repr);
    let mut fitter = Fitter::new(&run.config, &run.schedule, &adam, &pair, run.seed).map_err(|e| anyhow!("{e}"))?;
    let outcome = loop {
        match fitter.step() {
            Ok(Some(_)) => {}
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    rec.steps = fitter.state().step;
    rec.pose = Some(fitter.state().params.pose);
    rec.brightness = Some(fitter.state().params.brightness);
    write_curve(&dir.join("curve.csv"), fitter.curve())?;
    fs::write(dir.join("checkpoint.bin"), fitter.checkpoint())?;
    if let Err(e) = outcome {
        rec.status = if matches!(e, CoreError::Divergence { .. }) { Status::Diverged } else { Status::Failed };
        rec.error = Some(e.to_string());
        return Ok(());
    }
    let cfg = run.config.clone();
    let report = fitter.run().map_err(|e| anyhow!("{e}"))?;
    rec.status = match report.status {
        RunStatus::Converged => Status::Converged,
        RunStatus::MaxSteps => Status::MaxSteps,
        RunStatus::Collapsed { .. } => Status::Collapsed,
    };
    rec.losses = Some(report.final_terms);
    let depth = report.depth(&cfg).map_err(|e| anyhow!("{e}"))?;
    write_pfm(&dir.join("depth.pfm"), &depth[0])?;
    let pred_median = median(depth[0].data());
    if pred_median > 0.0 && pred_median.is_finite() {
        rec.scaling_ratio = Some(median(gt.depth[0].data()) / pred_median);
    }
    match evaluate(&depth[0], &gt.depth[0], None, DEFAULT_CAP, true) {
        Ok(m) => rec.metrics = Some(m),
        Err(e) => rec.error = Some(format!("evaluation: {e}")),
    }
    Ok(())
}

/// Progress callback: (finished so far, total, record).
pub type Progress<'a> = &'a (dyn Fn(usize, usize, &RunRecord) + Sync);

/// Runs every manifest entry with up to `jobs` workers; records come back in manifest order.
pub fn run_all(runs: &[RunSpec], out: &Path, jobs: usize, progress: Option<Progress<'_>>) -> Vec<RunRecord> {
    let jobs = jobs.clamp(1, runs.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    let mut slots: Vec<Option<RunRecord>> = vec![None; runs.len()];
    std::thread::scope(|s| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(run) = runs.get(k) else { break };
                if tx.send((k, execute(run, out))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (done, (k, rec)) in rx.iter().enumerate() {
            if let Some(p) = progress {
                p(done + 1, runs.len(), &rec);
            }
            slots[k] = Some(rec);
        }
    });
    slots.into_iter().map(|r| r.expect("every run reports")).collect()
}

/// Writes `results.csv` (one row per run, manifest order) and `scale_report.csv` (per label).
pub fn write_aggregate(out: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    let mut header: Vec<String> = ["label", "config", "scene", "seed", "status", "steps"].map(String::from).to_vec();
    header.extend(DepthMetrics::KEYS.iter().map(|k| k.to_string()));
    header.push("scaling_ratio".into());
    header.extend(LossBreakdown::KEYS.iter().map(|k| format!("loss_{k}")));
    header.extend(["wall_time_s", "error"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let mut row = vec![r.label.clone(), r.config.clone(), r.scene.clone(), r.seed.to_string(), r.status.name().into(), r.steps.to_string()];
        match &r.metrics {
            Some(m) => row.extend(m.entries().iter().map(|(_, v)| v.to_string())),
            None => row.extend(DepthMetrics::KEYS.iter().map(|_| String::new())),
        }
        row.push(opt(r.scaling_ratio));
        match &r.losses {
            Some(l) => row.extend(l.entries().iter().map(|(_, v)| v.to_string())),
            None => row.extend(LossBreakdown::KEYS.iter().map(|_| String::new())),
        }
        row.push(format!("{:.3}", r.wall_time_s));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut w = csv::Writer::from_path(out.join("scale_report.csv"))?;
    w.write_record(["label", "images", "mean_sr", "std_sr"])?;
    for label in labels {
        let ratios: Vec<f64> = records.iter().filter(|r| r.label == label).filter_map(|r| r.scaling_ratio).collect();
        match ScaleReport::from_ratios(ratios) {
            Ok(s) => w.write_record([label.to_string(), s.ratios.len().to_string(), s.mean.to_string(), s.std_dev.to_string()])?,
            Err(_) => w.write_record([label, "0", "", ""])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs a resolved manifest end to end and writes the aggregate files.
pub fn run_manifest(m: &Manifest, out: &Path, jobs: usize, progress: Option<Progress<'_>>) -> Result<Vec<RunRecord>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let records = run_all(&m.runs, out, jobs, progress);
    write_aggregate(out, &records)?;
    Ok(records)
}

/// Machine-readable summary of a sweep.
pub fn summary_json(records: &[RunRecord]) -> Value {
    let runs: Vec<Value> = records
        .iter()
        .map(|r| {
            let mut v = r.to_json();
            v["wall_time_s"] = json!(r.wall_time_s);
            v["dir"] = json!(r.dir.display().to_string());
            v
        })
        .collect();
    json!({
        "runs": runs,
        "all_converged": records.iter().all(|r| r.status == Status::Converged),
    })
}
