//! Central finite-difference verification of the composed gradient.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{invalid, Result};
use crate::losses::{compose, EvalOptions, LossConfig};
use crate::params::{Group, Params, ScenePair};
use crate::synth::GroundTruth;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeStatus {
    Checked,
    /// The stencil straddles a non-smooth point (a branch decision changed); not counted.
    KinkExcluded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub h: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub status: ProbeStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub group: Group,
    pub probes: Vec<Probe>,
    /// Largest relative error over checked probes.
    pub max_rel_err: f64,
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.probes.len() - self.excluded
    }
}

/// Compares the analytic gradient of `group` at `params` with central differences of step `h`
/// on `n_probes` coordinates drawn from `seed`. When the group has fewer coordinates than
/// probes, repeated coordinates use step sizes spread over `[h / 10, h]`.
///
/// Masks, weights and detached means are frozen at `params`. The relative error is
/// `|a - n| / (max(|a|, |n|) + floor)` where `floor` is the round-off level of the difference
/// quotient. A probe whose branch fingerprint changes inside the stencil and that would fail
/// is reported as kink-excluded.
pub fn grad_check(
    cfg: &LossConfig,
    pair: &ScenePair,
    params: &Params,
    group: Group,
    h: f64,
    n_probes: usize,
    seed: u64,
    step: usize,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) || n_probes == 0 {
        return Err(invalid!("need h > 0 and at least one probe"));
    }
    let center = compose(cfg, pair, params, &EvalOptions { step, gradients: true, frozen: None, fingerprint: true })?;
    let grad = center.grad.as_ref().expect("gradients requested");
    let frozen = center.frozen.clone();
    let opts = EvalOptions { step, gradients: false, frozen: Some(&frozen), fingerprint: true };
    let floor = 1e3 * f64::EPSILON * center.terms.total.abs().max(1.0) / h;

    let len = params.group_len(group);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let mut probes = Vec::with_capacity(n_probes);
    let (mut max_rel_err, mut excluded) = (0.0f64, 0usize);
    let cycles = n_probes.div_ceil(len);
    for p in 0..n_probes {
        let index = order[p % len];
        let h = h * libm::pow(10.0, -((p / len) as f64) / cycles as f64);
        let base = params.get(group, index);
        let mut plus = params.clone();
        plus.set(group, index, base + h);
        let mut minus = params.clone();
        minus.set(group, index, base - h);
        let ep = compose(cfg, pair, &plus, &opts)?;
        let em = compose(cfg, pair, &minus, &opts)?;
        let numeric = (ep.terms.total - em.terms.total) / (2.0 * h);
        let analytic = grad.get(group, index);
        let rel_err = (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + floor);
        let kinked = ep.fingerprint != center.fingerprint || em.fingerprint != center.fingerprint;
        let status = if kinked && rel_err >= tolerance { ProbeStatus::KinkExcluded } else { ProbeStatus::Checked };
        if status == ProbeStatus::Checked {
            max_rel_err = max_rel_err.max(rel_err);
        } else {
            excluded += 1;
        }
        probes.push(Probe { index, h, analytic, numeric, rel_err, status });
    }
    Ok(GradCheckReport { group, probes, max_rel_err, excluded })
}

/// A generic evaluation point near the ground truth: depth and pose perturbed, motion and
/// log-uncertainty randomized away from zero, brightness off its identity.
pub fn probe_params(cfg: &LossConfig, gt: &GroundTruth, seed: u64) -> Result<Params> {
    let (h, w) = (gt.depth[0].height(), gt.depth[0].width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
    let mut p = Params::init(&cfg.repr, h, w, 10.0)?;
    for k in 0..2 {
        let x = gt.depth[k].map(|d| d * (1.0 + 0.1 * unit()));
        p.x[k] = x.map(|d| cfg.repr.encode_one(*d));
        for (m, truth) in p.motion[k].data_mut().iter_mut().zip(gt.motion[k].data()) {
            *m = [truth[0] + 0.05 * unit(), truth[1] + 0.05 * unit(), truth[2] + 0.05 * unit()];
        }
        for s in p.log_sigma[k].data_mut() {
            *s = 0.6 * unit();
        }
    }
    p.pose.r = [gt.pose.r[0] + 0.002 * unit(), gt.pose.r[1] + 0.002 * unit(), gt.pose.r[2] + 0.002 * unit()];
    p.pose.t = [gt.pose.t[0] + 0.02 * unit(), gt.pose.t[1] + 0.02 * unit(), gt.pose.t[2] + 0.02 * unit()];
    p.brightness.a = 1.0 + 0.2 * unit();
    p.brightness.b = 0.05 * unit();
    Ok(p)
}
