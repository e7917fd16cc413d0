//! Individual loss terms with their analytic gradients.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::MotionMap;
use crate::grid::{Grid, Image, Mask};
use crate::photometry::{self, ErrorMap, PeKind};

/// Mean absolute motion below which an axis drops out of the sparsity loss.
pub const SPARSITY_MEAN_EPS: f64 = 1e-12;

fn check_aligned(maps: &[ErrorMap]) -> Result<(usize, usize)> {
    let Some(first) = maps.first() else {
        return Err(invalid!("at least one error map is required"));
    };
    let (h, w) = (first.error.height(), first.error.width());
    if maps.iter().any(|m| !m.error.same_shape(&first.error)) {
        return Err(invalid!("error maps are not aligned"));
    }
    Ok((h, w))
}

/// Per-pixel minimum and which map supplied it.
#[derive(Clone, Debug, PartialEq)]
pub struct MinReprojection {
    pub map: ErrorMap,
    /// Index of the winning map; `None` where every map is invalid.
    pub argmin: Grid<Option<usize>>,
}

impl MinReprojection {
    /// Routes `dL/d min` to the winning map only.
    pub fn vjp(&self, upstream: &Grid<f64>, n_maps: usize) -> Vec<Grid<f64>> {
        let (h, w) = (upstream.height(), upstream.width());
        let mut out = alloc::vec![Grid::new(h, w, 0.0); n_maps];
        for (k, a) in self.argmin.data().iter().enumerate() {
            if let Some(a) = a {
                out[*a].data_mut()[k] = upstream.data()[k];
            }
        }
        out
    }
}

/// Per-pixel minimum over the valid candidates of each pixel.
pub fn min_reprojection(errs: &[ErrorMap]) -> Result<MinReprojection> {
    let (h, w) = check_aligned(errs)?;
    let mut error = Grid::new(h, w, 0.0);
    let mut valid = Grid::new(h, w, false);
    let mut argmin = Grid::new(h, w, None);
    for k in 0..h * w {
        let mut best: Option<(usize, f64)> = None;
        for (s, m) in errs.iter().enumerate() {
            if !m.valid.data()[k] {
                continue;
            }
            let e = m.error.data()[k];
            if best.map_or(true, |(_, b)| e < b) {
                best = Some((s, e));
            }
        }
        if let Some((s, e)) = best {
            error.data_mut()[k] = e;
            valid.data_mut()[k] = true;
            argmin.data_mut()[k] = Some(s);
        }
    }
    Ok(MinReprojection { map: ErrorMap { error, valid }, argmin })
}

/// Per-pixel mean over the valid candidates of each pixel.
pub fn average_reprojection(errs: &[ErrorMap]) -> Result<ErrorMap> {
    let (h, w) = check_aligned(errs)?;
    let mut error = Grid::new(h, w, 0.0);
    let mut valid = Grid::new(h, w, false);
    for k in 0..h * w {
        let (mut sum, mut n) = (0.0, 0usize);
        for m in errs.iter().filter(|m| m.valid.data()[k]) {
            sum += m.error.data()[k];
            n += 1;
        }
        if n > 0 {
            error.data_mut()[k] = sum / n as f64;
            valid.data_mut()[k] = true;
        }
    }
    Ok(ErrorMap { error, valid })
}

/// `mu = [min warped error < min unwarped error]` from precomputed error maps.
///
/// Pixels with no valid warped candidate are masked out.
pub fn auto_mask_from_errors(warped: &[ErrorMap], raw: &[Grid<f64>]) -> Result<Mask> {
    let (h, w) = check_aligned(warped)?;
    if raw.len() != warped.len() {
        return Err(invalid!("{} warped maps but {} unwarped maps", warped.len(), raw.len()));
    }
    if raw.iter().any(|r| r.height() != h || r.width() != w) {
        return Err(invalid!("unwarped error maps are not aligned"));
    }
    let min_warped = min_reprojection(warped)?;
    Ok(Grid::from_fn(h, w, |i, j| {
        let k = i * w + j;
        let raw_min = raw.iter().map(|r| r.data()[k]).fold(f64::INFINITY, f64::min);
        min_warped.map.valid.data()[k] && min_warped.map.error.data()[k] < raw_min
    }))
}

/// Auto-mask of a target frame given warped reconstructions and the raw source frames.
///
/// `warped` carries each reconstruction with its validity mask.
pub fn auto_mask(target: &Image, warped: &[(&Image, &Mask)], raw_sources: &[&Image], kind: PeKind) -> Result<Mask> {
    let warped_errs = warped
        .iter()
        .map(|(img, valid)| ErrorMap::new(photometry::pe(target, img, kind)?, (*valid).clone()))
        .collect::<Result<Vec<_>>>()?;
    let raw = raw_sources.iter().map(|img| photometry::pe(target, img, kind)).collect::<Result<Vec<_>>>()?;
    auto_mask_from_errors(&warped_errs, &raw)
}

/// `pe / Sigma + log Sigma` averaged over valid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyTerm {
    pub loss: f64,
    pub d_err: Grid<f64>,
    pub d_log_sigma: Grid<f64>,
    pub valid_count: usize,
}

pub fn uncertainty_weighted(err: &ErrorMap, log_sigma: &Grid<f64>) -> Result<UncertaintyTerm> {
    if !err.error.same_shape(log_sigma) {
        return Err(invalid!("uncertainty map is not aligned with the error map"));
    }
    let (h, w) = (log_sigma.height(), log_sigma.width());
    let n = err.valid_count();
    let mut d_err = Grid::new(h, w, 0.0);
    let mut d_log_sigma = Grid::new(h, w, 0.0);
    if n == 0 {
        return Ok(UncertaintyTerm { loss: 0.0, d_err, d_log_sigma, valid_count: 0 });
    }
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    for k in 0..h * w {
        if !err.valid.data()[k] {
            continue;
        }
        let s = log_sigma.data()[k];
        let inv_sigma = libm::exp(-s);
        let e = err.error.data()[k];
        sum += e * inv_sigma + s;
        d_err.data_mut()[k] = inv_sigma * inv_n;
        d_log_sigma.data_mut()[k] = (1.0 - e * inv_sigma) * inv_n;
    }
    Ok(UncertaintyTerm { loss: sum * inv_n, d_err, d_log_sigma, valid_count: n })
}

/// L1/2 sparsity of a motion map.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityTerm {
    pub loss: f64,
    pub grad: MotionMap,
    /// Per-axis mean absolute motion used as the (constant) scale.
    pub means: [f64; 3],
    /// Axes that dropped out because their mean fell below [`SPARSITY_MEAN_EPS`].
    pub degenerate: [bool; 3],
}

/// `sum_i 2 <|T_i|> mean_p sqrt(1 + |T_i| / <|T_i|>)`, the means held constant in the gradient.
///
/// `frozen_means` replaces the means computed from `t` (used when probing the gradient).
pub fn motion_sparsity(t: &MotionMap, frozen_means: Option<[f64; 3]>) -> SparsityTerm {
    let n = t.len();
    let mut grad = Grid::new(t.height(), t.width(), [0.0; 3]);
    if n == 0 {
        return SparsityTerm { loss: 0.0, grad, means: [0.0; 3], degenerate: [true; 3] };
    }
    let inv_n = 1.0 / n as f64;
    let means = frozen_means.unwrap_or_else(|| {
        let mut m = [0.0; 3];
        for p in t.data() {
            for a in 0..3 {
                m[a] += libm::fabs(p[a]);
            }
        }
        m.map(|s| s * inv_n)
    });
    let mut loss = 0.0;
    let mut degenerate = [false; 3];
    for a in 0..3 {
        let m = means[a];
        if m < SPARSITY_MEAN_EPS {
            degenerate[a] = true;
            continue;
        }
        let mut acc = 0.0;
        for (p, g) in t.data().iter().zip(grad.data_mut()) {
            let v = p[a];
            let root = libm::sqrt(1.0 + libm::fabs(v) / m);
            acc += root;
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            g[a] = sign * inv_n / root;
        }
        loss += 2.0 * m * acc * inv_n;
    }
    SparsityTerm { loss, grad, means, degenerate }
}

/// Pixels whose target point, seen from the source frame, is not behind the source surface.
///
/// `z_transformed` is the target point's depth in the source frame and `z_target` the
/// source depth found where it lands; `tolerance` is a relative slack.
pub fn depth_consistency_mask(
    z_transformed: &Grid<f64>,
    z_target: &Grid<f64>,
    valid: &Mask,
    tolerance: f64,
) -> Result<Mask> {
    if !z_transformed.same_shape(z_target) || !z_transformed.same_shape(valid) {
        return Err(invalid!("depth maps are not aligned"));
    }
    Ok(Grid::from_fn(valid.height(), valid.width(), |i, j| {
        valid.at(i, j) && z_transformed.at(i, j) <= z_target.at(i, j) * (1.0 + tolerance)
    }))
}

/// Keeps `err` only where `z' <= z_t`.
pub fn depth_consistency_gate(z_transformed: &Grid<f64>, z_target: &Grid<f64>, err: &ErrorMap) -> Result<ErrorMap> {
    let valid = depth_consistency_mask(z_transformed, z_target, &err.valid, 0.0)?;
    Ok(ErrorMap { error: err.error.clone(), valid })
}

/// Edge-aware first-order smoothness.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessTerm {
    pub loss: f64,
    pub grad: Grid<f64>,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean |du f| exp(-|du I|) + mean |dv f| exp(-|dv I|)`; an axis with a single sample contributes 0.
pub fn smoothness(field: &Grid<f64>, image: &Image) -> Result<SmoothnessTerm> {
    if !field.same_shape(image) {
        return Err(invalid!("field and image are not aligned"));
    }
    let (h, w) = (field.height(), field.width());
    let mut grad = Grid::new(h, w, 0.0);
    let mut loss = 0.0;
    if w >= 2 {
        let inv = 1.0 / (h * (w - 1)) as f64;
        for i in 0..h {
            for j in 0..w - 1 {
                let df = field.at(i, j + 1) - field.at(i, j);
                let wt = libm::exp(-libm::fabs(image.at(i, j + 1) - image.at(i, j))) * inv;
                loss += libm::fabs(df) * wt;
                let g = sign(df) * wt;
                *grad.get_mut(i, j + 1) += g;
                *grad.get_mut(i, j) -= g;
            }
        }
    }
    if h >= 2 {
        let inv = 1.0 / ((h - 1) * w) as f64;
        for i in 0..h - 1 {
            for j in 0..w {
                let df = field.at(i + 1, j) - field.at(i, j);
                let wt = libm::exp(-libm::fabs(image.at(i + 1, j) - image.at(i, j))) * inv;
                loss += libm::fabs(df) * wt;
                let g = sign(df) * wt;
                *grad.get_mut(i + 1, j) += g;
                *grad.get_mut(i, j) -= g;
            }
        }
    }
    Ok(SmoothnessTerm { loss, grad })
}

/// Smoothness of each motion channel, summed.
pub fn motion_smoothness(t: &MotionMap, image: &Image) -> Result<(f64, MotionMap)> {
    let mut grad = Grid::new(t.height(), t.width(), [0.0; 3]);
    let mut loss = 0.0;
    for a in 0..3 {
        let ch = t.map(|p| p[a]);
        let s = smoothness(&ch, image)?;
        loss += s.loss;
        for (g, v) in grad.data_mut().iter_mut().zip(s.grad.data()) {
            g[a] = *v;
        }
    }
    Ok((loss, grad))
}

/// Smoothness of `d / mean(d)` with the gradient carried through the normalization.
pub fn normalized_depth_smoothness(depth: &Grid<f64>, image: &Image) -> Result<SmoothnessTerm> {
    let n = depth.len();
    if n == 0 {
        return Err(invalid!("empty depth map"));
    }
    let mean = depth.data().iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(invalid!("depth mean must be positive, got {mean}"));
    }
    let normalized = depth.map(|d| d / mean);
    let s = smoothness(&normalized, image)?;
    // d f_k / d d_j = delta_kj / m - d_k / (n m^2)
    let coupling: f64 = s.grad.data().iter().zip(depth.data()).map(|(g, d)| g * d).sum::<f64>() / (n as f64 * mean * mean);
    let grad = s.grad.map(|g| g / mean - coupling);
    Ok(SmoothnessTerm { loss: s.loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid<f64> {
        Grid::from_fn(h, w, |_, _| uniform(rng))
    }

    #[test]
    fn min_of_single_map_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ErrorMap::all_valid(random_grid(&mut rng, 4, 5));
        let r = min_reprojection(core::slice::from_ref(&m)).unwrap();
        assert_eq!(r.map, m);
    }

    #[test]
    fn min_picks_smaller_value() {
        let a = ErrorMap::all_valid(Grid::new(1, 1, 0.3));
        let b = ErrorMap::all_valid(Grid::new(1, 1, 0.5));
        let r = min_reprojection(&[b, a]).unwrap();
        assert_eq!(r.map.error.at(0, 0), 0.3);
        assert_eq!(r.argmin.at(0, 0), Some(1));
    }

    #[test]
    fn min_matches_brute_force_and_routes_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let maps: Vec<ErrorMap> = (0..3)
            .map(|_| {
                let e = random_grid(&mut rng, 6, 7);
                let v = Grid::from_fn(6, 7, |_, _| uniform(&mut rng) > 0.3);
                ErrorMap::new(e, v).unwrap()
            })
            .collect();
        let r = min_reprojection(&maps).unwrap();
        let up = random_grid(&mut rng, 6, 7);
        let grads = r.vjp(&up, 3);
        for k in 0..42 {
            let cands: Vec<(usize, f64)> =
                (0..3).filter(|s| maps[*s].valid.data()[k]).map(|s| (s, maps[s].error.data()[k])).collect();
            if cands.is_empty() {
                assert!(!r.map.valid.data()[k]);
                assert!(grads.iter().all(|g| g.data()[k] == 0.0));
                continue;
            }
            let best = cands.iter().copied().fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            assert_eq!(r.map.error.data()[k], best.1);
            for s in 0..3 {
                let g = grads[s].data()[k];
                if s == best.0 {
                    assert_eq!(g, up.data()[k]);
                } else {
                    assert_eq!(g, 0.0);
                }
            }
        }
    }

    #[test]
    fn average_ignores_invalid_candidates() {
        let a = ErrorMap::new(Grid::new(1, 2, 0.2), Grid::from_vec(1, 2, alloc::vec![true, false]).unwrap()).unwrap();
        let b = ErrorMap::new(Grid::new(1, 2, 0.6), Grid::from_vec(1, 2, alloc::vec![true, false]).unwrap()).unwrap();
        let r = average_reprojection(&[a, b]).unwrap();
        assert!((r.error.at(0, 0) - 0.4).abs() < 1e-15);
        assert!(!r.valid.at(0, 1));
    }

    #[test]
    fn static_scene_masks_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_grid(&mut rng, 8, 8);
        let warped = img.map(|v| v + 0.01);
        let valid = Grid::new(8, 8, true);
        let mu = auto_mask(&img, &[(&warped, &valid)], &[&img], PeKind::SsimL1).unwrap();
        assert_eq!(mu.count(), 0);
    }

    #[test]
    fn auto_mask_keeps_pixel_where_warp_wins() {
        let warped = [ErrorMap::all_valid(Grid::new(1, 1, 0.1))];
        let raw = [Grid::new(1, 1, 0.4)];
        assert!(auto_mask_from_errors(&warped, &raw).unwrap().at(0, 0));
        let raw = [Grid::new(1, 1, 0.1)];
        assert!(!auto_mask_from_errors(&warped, &raw).unwrap().at(0, 0));
    }

    #[test]
    fn uncertainty_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = ErrorMap::all_valid(random_grid(&mut rng, 3, 4));
        let u = uncertainty_weighted(&e, &Grid::new(3, 4, 0.0)).unwrap();
        assert!((u.loss - e.mean().unwrap()).abs() < 1e-15);

        let e = ErrorMap::all_valid(Grid::new(1, 1, 0.2));
        let u = uncertainty_weighted(&e, &Grid::new(1, 1, libm::log(2.0))).unwrap();
        assert!((u.loss - 0.79315).abs() < 1e-5);

        // stationary at Sigma = pe
        let u = uncertainty_weighted(&e, &Grid::new(1, 1, libm::log(0.2))).unwrap();
        assert!(u.d_log_sigma.at(0, 0).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = ErrorMap::new(random_grid(&mut rng, 3, 4), Grid::from_fn(3, 4, |i, j| (i + j) % 3 != 0)).unwrap();
        let s = random_grid(&mut rng, 3, 4).map(|v| v - 0.5);
        let u = uncertainty_weighted(&e, &s).unwrap();
        let h = 1e-6;
        for k in 0..12 {
            let mut sp = s.clone();
            sp.data_mut()[k] += h;
            let mut sm = s.clone();
            sm.data_mut()[k] -= h;
            let fd = (uncertainty_weighted(&e, &sp).unwrap().loss - uncertainty_weighted(&e, &sm).unwrap().loss) / (2.0 * h);
            assert!((fd - u.d_log_sigma.data()[k]).abs() < 1e-8);
            let mut ep = e.clone();
            ep.error.data_mut()[k] += h;
            let mut em = e.clone();
            em.error.data_mut()[k] -= h;
            let fd = (uncertainty_weighted(&ep, &s).unwrap().loss - uncertainty_weighted(&em, &s).unwrap().loss) / (2.0 * h);
            assert!((fd - u.d_err.data()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn sparsity_examples() {
        let zero = Grid::new(4, 4, [0.0; 3]);
        let s = motion_sparsity(&zero, None);
        assert_eq!(s.loss, 0.0);
        assert_eq!(s.degenerate, [true; 3]);

        let c = 0.7;
        let t = Grid::new(4, 5, [c, 0.0, 0.0]);
        let s = motion_sparsity(&t, None);
        assert!((s.loss - 2.0 * c * libm::sqrt(2.0)).abs() < 1e-12);
        assert_eq!(s.degenerate, [false, true, true]);

        let n = 100;
        let mut one_hot = Grid::new(10, 10, [0.0; 3]);
        one_hot.data_mut()[37] = [c, 0.0, 0.0];
        let spread = Grid::new(10, 10, [c / n as f64, 0.0, 0.0]);
        assert!(motion_sparsity(&one_hot, None).loss < motion_sparsity(&spread, None).loss);
    }

    #[test]
    fn sparsity_gradient_with_detached_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t: MotionMap = Grid::from_fn(4, 4, |_, _| [uniform(&mut rng) - 0.5, uniform(&mut rng) - 0.5, 0.3 * uniform(&mut rng)]);
        let s = motion_sparsity(&t, None);
        let h = 1e-7;
        for k in 0..16 {
            for a in 0..3 {
                let mut tp = t.clone();
                tp.data_mut()[k][a] += h;
                let mut tm = t.clone();
                tm.data_mut()[k][a] -= h;
                let fd = (motion_sparsity(&tp, Some(s.means)).loss - motion_sparsity(&tm, Some(s.means)).loss) / (2.0 * h);
                assert!((fd - s.grad.data()[k][a]).abs() < 1e-7, "{fd} vs {}", s.grad.data()[k][a]);
            }
        }
    }

    #[test]
    fn depth_consistency_examples() {
        let err = ErrorMap::all_valid(Grid::new(1, 1, 0.5));
        let kept = depth_consistency_gate(&Grid::new(1, 1, 5.0), &Grid::new(1, 1, 6.0), &err).unwrap();
        assert!(kept.valid.at(0, 0));
        let dropped = depth_consistency_gate(&Grid::new(1, 1, 6.0), &Grid::new(1, 1, 5.0), &err).unwrap();
        assert!(!dropped.valid.at(0, 0));
    }

    #[test]
    fn smoothness_examples() {
        let img = Grid::new(5, 6, 0.4);
        assert_eq!(smoothness(&Grid::new(5, 6, 3.0), &img).unwrap().loss, 0.0);
        let ramp = Grid::from_fn(5, 6, |_, j| -0.25 * j as f64);
        assert!((smoothness(&ramp, &img).unwrap().loss - 0.25).abs() < 1e-15);
    }

    fn check_smoothness_fd(f: impl Fn(&Grid<f64>) -> SmoothnessTerm, field: &Grid<f64>) {
        let s = f(field);
        let h = 1e-6;
        for k in 0..field.len() {
            let mut p = field.clone();
            p.data_mut()[k] += h;
            let mut m = field.clone();
            m.data_mut()[k] -= h;
            let fd = (f(&p).loss - f(&m).loss) / (2.0 * h);
            let an = s.grad.data()[k];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "{k}: {fd} vs {an}");
        }
    }

    #[test]
    fn smoothness_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_grid(&mut rng, 5, 6);
        let field = random_grid(&mut rng, 5, 6).map(|v| 2.0 + 3.0 * v);
        check_smoothness_fd(|f| smoothness(f, &img).unwrap(), &field);
        check_smoothness_fd(|f| normalized_depth_smoothness(f, &img).unwrap(), &field);
    }
}
