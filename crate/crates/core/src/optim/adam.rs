use alloc::collections::BTreeMap;

use crate::depth_repr::{ReprConfig, ReprKind};
use crate::params::Group;

/// Adam hyperparameters with optional per-group learning rates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub group_lr: BTreeMap<Group, f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, group_lr: BTreeMap::new() }
    }
}

impl AdamConfig {
    /// Learning rates tuned for direct per-pixel optimization of the given representation.
    ///
    /// The depth rate moves log-depth by roughly `1e-3` per step at 10 m in every
    /// representation; pose, motion and appearance groups get rates matched to their units.
    pub fn tuned(repr: &ReprConfig) -> Self {
        let x_lr = match repr.kind {
            ReprKind::Disparity => 1e-4,
            ReprKind::ScaledDisparity => 1e-3 / (10.0 * (repr.sigma_max - repr.sigma_min)),
            ReprKind::Softplus => 1e-2,
        };
        let mut group_lr = BTreeMap::new();
        group_lr.insert(Group::Depth, x_lr);
        group_lr.insert(Group::Rotation, 1e-4);
        group_lr.insert(Group::Translation, 1e-3);
        group_lr.insert(Group::Motion, 1e-3);
        group_lr.insert(Group::LogSigma, 1e-2);
        group_lr.insert(Group::Gain, 1e-3);
        group_lr.insert(Group::Bias, 1e-3);
        Self { group_lr, ..Self::default() }
    }

    pub fn lr_for(&self, g: Group) -> f64 {
        self.group_lr.get(&g).copied().unwrap_or(self.lr)
    }

    /// One bias-corrected Adam update; `t` is the 1-based step count.
    #[inline]
    pub fn update(&self, lr: f64, t: u64, x: &mut f64, g: f64, m: &mut f64, v: &mut f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / (1.0 - libm::pow(self.beta1, t as f64));
        let v_hat = *v / (1.0 - libm::pow(self.beta2, t as f64));
        *x -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter() {
        let a = AdamConfig::default();
        let (mut x, mut m, mut v) = (0.7, 0.0, 0.0);
        for t in 1..10 {
            a.update(a.lr, t, &mut x, 0.0, &mut m, &mut v);
        }
        assert_eq!(x, 0.7);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let a = AdamConfig::default();
        for g in [3.5, -0.02] {
            let (mut x, mut m, mut v) = (1.0, 0.0, 0.0);
            a.update(a.lr, 1, &mut x, g, &mut m, &mut v);
            assert!((x - (1.0 - a.lr * f64::signum(g))).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_converges() {
        let a = AdamConfig::default();
        let target = 0.123;
        let (mut x, mut m, mut v) = (target + 0.05, 0.0, 0.0);
        let mut hit = None;
        for t in 1..=5000u64 {
            let g = 2.0 * (x - target);
            a.update(a.lr, t, &mut x, g, &mut m, &mut v);
            if hit.is_none() && (x - target).abs() < 1e-6 {
                hit = Some(t);
            }
        }
        assert!(hit.is_some());
        assert!((x - target).abs() < 1e-6, "{}", x - target);
    }
}
