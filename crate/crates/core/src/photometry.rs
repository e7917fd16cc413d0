//! Appearance losses: affine brightness, SSIM on 3x3 windows, the blended
//! photometric error and depth-error weights for SSIM.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{DepthMap, Grid, Image, Mask};

/// SSIM stabilizers for unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// SSIM share of the photometric error.
pub const ALPHA: f64 = 0.85;

/// Affine intensity change `I' = a I + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrightnessParams {
    pub a: f64,
    pub b: f64,
}

impl Default for BrightnessParams {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

pub fn brightness_transform(img: &Image, p: BrightnessParams) -> Image {
    img.map(|v| p.a * v + p.b)
}

/// Gradient of `sum(upstream * (a I + b))` w.r.t. `(a, b)`.
pub fn brightness_vjp(img: &Image, upstream: &Grid<f64>) -> (f64, f64) {
    let mut da = 0.0;
    let mut db = 0.0;
    for (v, g) in img.data().iter().zip(upstream.data()) {
        da += g * v;
        db += g;
    }
    (da, db)
}

/// Per-pixel error with a validity mask; invalid pixels never enter reductions.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub error: Grid<f64>,
    pub valid: Mask,
}

impl ErrorMap {
    pub fn new(error: Grid<f64>, valid: Mask) -> Result<Self> {
        if !error.same_shape(&valid) {
            return Err(invalid!("error map and mask shapes differ"));
        }
        Ok(Self { error, valid })
    }

    pub fn all_valid(error: Grid<f64>) -> Self {
        let valid = Grid::new(error.height(), error.width(), true);
        Self { error, valid }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    /// Mean over valid pixels, `None` when nothing is valid.
    pub fn mean(&self) -> Option<f64> {
        let mut n = 0usize;
        let mut s = 0.0;
        for (e, v) in self.error.data().iter().zip(self.valid.data()) {
            if *v {
                n += 1;
                s += e;
            }
        }
        (n > 0).then(|| s / n as f64)
    }
}

/// 3x3 mean filter with edge-replicate padding.
pub fn box3(src: &Grid<f64>) -> Grid<f64> {
    let (h, w) = (src.height(), src.width());
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        let row = &src.data()[i * w..(i + 1) * w];
        for j in 0..w {
            let l = row[j.saturating_sub(1)];
            let r = row[(j + 1).min(w - 1)];
            tmp[i * w + j] = l + row[j] + r;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let up = i.saturating_sub(1) * w;
        let dn = (i + 1).min(h - 1) * w;
        let me = i * w;
        for j in 0..w {
            out[me + j] = (tmp[up + j] + tmp[me + j] + tmp[dn + j]) / 9.0;
        }
    }
    Grid::from_vec(h, w, out).expect("shape preserved")
}

/// Adjoint of [`box3`].
pub fn box3_adjoint(g: &Grid<f64>) -> Grid<f64> {
    let (h, w) = (g.height(), g.width());
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        let up = i.saturating_sub(1) * w;
        let dn = (i + 1).min(h - 1) * w;
        let me = i * w;
        for j in 0..w {
            let v = g.data()[me + j] / 9.0;
            tmp[up + j] += v;
            tmp[me + j] += v;
            tmp[dn + j] += v;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let base = i * w;
        for j in 0..w {
            let v = tmp[base + j];
            out[base + j.saturating_sub(1)] += v;
            out[base + j] += v;
            out[base + (j + 1).min(w - 1)] += v;
        }
    }
    Grid::from_vec(h, w, out).expect("shape preserved")
}

/// Local window statistics of an image pair.
struct WindowStats {
    mu_a: Grid<f64>,
    mu_b: Grid<f64>,
    e_aa: Grid<f64>,
    e_bb: Grid<f64>,
    e_ab: Grid<f64>,
}

impl WindowStats {
    fn new(a: &Image, b: &Image) -> Self {
        let prod = |f: fn(f64, f64) -> f64| {
            let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
            box3(&Grid::from_vec(a.height(), a.width(), data).expect("shape"))
        };
        Self {
            mu_a: box3(a),
            mu_b: box3(b),
            e_aa: prod(|x, _| x * x),
            e_bb: prod(|_, y| y * y),
            e_ab: prod(|x, y| x * y),
        }
    }

    /// SSIM and its partials w.r.t. (mu_a, mu_b, e_aa, e_bb, e_ab) at flat index `k`.
    #[inline]
    fn ssim_at(&self, k: usize) -> (f64, [f64; 5]) {
        let ma = self.mu_a.data()[k];
        let mb = self.mu_b.data()[k];
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * (self.e_ab.data()[k] - ma * mb) + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = (self.e_aa.data()[k] - ma * ma) + (self.e_bb.data()[k] - mb * mb) + SSIM_C2;
        let num = n1 * n2;
        let den = d1 * d2;
        let s = num / den;
        // dS/dv = (dnum/dv - s * dden/dv) / den
        let dnum_ma = 2.0 * mb * n2 - 2.0 * mb * n1;
        let dnum_mb = 2.0 * ma * n2 - 2.0 * ma * n1;
        let dnum_eab = 2.0 * n1;
        let dden_ma = 2.0 * ma * d2 - 2.0 * ma * d1;
        let dden_mb = 2.0 * mb * d2 - 2.0 * mb * d1;
        let dden_eaa = d1;
        let inv = 1.0 / den;
        (
            s,
            [
                (dnum_ma - s * dden_ma) * inv,
                (dnum_mb - s * dden_mb) * inv,
                -s * dden_eaa * inv,
                -s * dden_eaa * inv,
                dnum_eab * inv,
            ],
        )
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(invalid!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ));
    }
    if a.is_empty() {
        return Err(invalid!("empty image"));
    }
    Ok(())
}

/// Per-pixel SSIM over 3x3 windows.
pub fn ssim(a: &Image, b: &Image) -> Result<Grid<f64>> {
    check_pair(a, b)?;
    let stats = WindowStats::new(a, b);
    let data = (0..a.len()).map(|k| stats.ssim_at(k).0).collect();
    Grid::from_vec(a.height(), a.width(), data)
}

/// Gradients of `sum(upstream * ssim(a, b))` w.r.t. `a` and `b`.
pub fn ssim_vjp(a: &Image, b: &Image, upstream: &Grid<f64>) -> Result<(Grid<f64>, Grid<f64>)> {
    check_pair(a, b)?;
    let stats = WindowStats::new(a, b);
    Ok(ssim_backward(&stats, a, b, upstream))
}

fn ssim_backward(stats: &WindowStats, a: &Image, b: &Image, upstream: &Grid<f64>) -> (Grid<f64>, Grid<f64>) {
    let (h, w) = (a.height(), a.width());
    let n = h * w;
    let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..n {
        let up = upstream.data()[k];
        if up == 0.0 {
            continue;
        }
        let (_, partials) = stats.ssim_at(k);
        for (gv, p) in g.iter_mut().zip(partials) {
            gv[k] = up * p;
        }
    }
    let [g_ma, g_mb, g_eaa, g_ebb, g_eab] = g.map(|v| box3_adjoint(&Grid::from_vec(h, w, v).expect("shape")));
    let mut da = g_ma;
    let mut db = g_mb;
    for k in 0..n {
        let x = a.data()[k];
        let y = b.data()[k];
        da.data_mut()[k] += 2.0 * x * g_eaa.data()[k] + y * g_eab.data()[k];
        db.data_mut()[k] += 2.0 * y * g_ebb.data()[k] + x * g_eab.data()[k];
    }
    (da, db)
}

/// Which appearance terms enter the photometric error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeKind {
    /// `|a - b|`
    L1,
    /// `alpha/2 (1 - SSIM) w + (1 - alpha) |a - b|`
    SsimL1,
}

/// Evaluated photometric error of an image pair, kept around for the backward pass.
pub struct PhotometricError<'a> {
    a: &'a Image,
    b: &'a Image,
    kind: PeKind,
    ssim_weights: Option<&'a Grid<f64>>,
    stats: Option<WindowStats>,
    map: Grid<f64>,
}

impl<'a> PhotometricError<'a> {
    pub fn new(a: &'a Image, b: &'a Image, kind: PeKind, ssim_weights: Option<&'a Grid<f64>>) -> Result<Self> {
        check_pair(a, b)?;
        if let Some(wts) = ssim_weights {
            if !wts.same_shape(a) {
                return Err(invalid!("SSIM weight map does not match the images"));
            }
        }
        let stats = (kind == PeKind::SsimL1).then(|| WindowStats::new(a, b));
        let mut map = Grid::new(a.height(), a.width(), 0.0);
        for k in 0..a.len() {
            let l1 = libm::fabs(a.data()[k] - b.data()[k]);
            map.data_mut()[k] = match &stats {
                None => l1,
                Some(st) => {
                    let w = ssim_weights.map_or(1.0, |g| g.data()[k]);
                    0.5 * ALPHA * (1.0 - st.ssim_at(k).0) * w + (1.0 - ALPHA) * l1
                }
            };
        }
        Ok(Self { a, b, kind, ssim_weights, stats, map })
    }

    pub fn map(&self) -> &Grid<f64> {
        &self.map
    }

    pub fn into_map(self) -> Grid<f64> {
        self.map
    }

    pub fn kind(&self) -> PeKind {
        self.kind
    }

    /// Gradients of `sum(upstream * pe)` w.r.t. both images. Weights are constants.
    pub fn vjp(&self, upstream: &Grid<f64>) -> (Grid<f64>, Grid<f64>) {
        let (h, w) = (self.a.height(), self.a.width());
        let l1_scale = match self.kind {
            PeKind::L1 => 1.0,
            PeKind::SsimL1 => 1.0 - ALPHA,
        };
        let mut da = Grid::new(h, w, 0.0);
        let mut db = Grid::new(h, w, 0.0);
        for k in 0..h * w {
            let diff = self.a.data()[k] - self.b.data()[k];
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            let g = upstream.data()[k] * l1_scale * s;
            da.data_mut()[k] = g;
            db.data_mut()[k] = -g;
        }
        if let Some(stats) = &self.stats {
            let ssim_up = Grid::from_fn(h, w, |i, j| {
                let k = i * w + j;
                -0.5 * ALPHA * upstream.data()[k] * self.ssim_weights.map_or(1.0, |g| g.data()[k])
            });
            let (sa, sb) = ssim_backward(stats, self.a, self.b, &ssim_up);
            for k in 0..h * w {
                da.data_mut()[k] += sa.data()[k];
                db.data_mut()[k] += sb.data()[k];
            }
        }
        (da, db)
    }
}

/// Photometric error map of two images.
pub fn pe(a: &Image, b: &Image, kind: PeKind) -> Result<Grid<f64>> {
    Ok(PhotometricError::new(a, b, kind, None)?.into_map())
}

/// Depth-error weights for the SSIM term: `w = s2 / (s2 + e^2)` with
/// `e = d_recon - d_pred` and `s2` the mean squared error over jointly valid
/// pixels. A fully consistent pair (`s2 = 0`) gets `w = 1`.
pub fn dw_ssim_weights(d_pred: &DepthMap, d_recon: &DepthMap, valid: Option<&Mask>) -> Result<Grid<f64>> {
    if !d_pred.same_shape(d_recon) {
        return Err(invalid!("depth maps are not aligned"));
    }
    let is_valid = |k: usize| valid.map_or(true, |m| m.data()[k]);
    let mut n = 0usize;
    let mut ss = 0.0;
    for k in 0..d_pred.len() {
        if is_valid(k) {
            let e = d_recon.data()[k] - d_pred.data()[k];
            ss += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(invalid!("no jointly valid pixels for depth-error weights"));
    }
    let s2 = ss / n as f64;
    let data = (0..d_pred.len())
        .map(|k| {
            if s2 == 0.0 || !is_valid(k) {
                1.0
            } else {
                let e = d_recon.data()[k] - d_pred.data()[k];
                s2 / (s2 + e * e)
            }
        })
        .collect();
    Grid::from_vec(d_pred.height(), d_pred.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(h, w, |_, _| 0.1 + 0.8 * uniform(&mut rng))
    }

    /// SSIM at `(i, j)` evaluated straight from the window definition.
    fn naive_ssim(a: &Image, b: &Image, i: usize, j: usize) -> f64 {
        let mut xs = [0.0; 9];
        let mut ys = [0.0; 9];
        let mut k = 0;
        for di in -1..=1isize {
            for dj in -1..=1isize {
                xs[k] = a.at_clamped(i as isize + di, j as isize + dj);
                ys[k] = b.at_clamped(i as isize + di, j as isize + dj);
                k += 1;
            }
        }
        let mx = xs.iter().sum::<f64>() / 9.0;
        let my = ys.iter().sum::<f64>() / 9.0;
        let vx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / 9.0;
        let vy = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / 9.0;
        let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 9.0;
        (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
    }

    #[test]
    fn brightness_examples() {
        let img = Grid::new(1, 1, 0.4);
        assert_eq!(brightness_transform(&img, BrightnessParams::default()), img);
        let out = brightness_transform(&img, BrightnessParams { a: 2.0, b: 0.1 });
        assert!((out.at(0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn brightness_gradient_matches_finite_differences() {
        let img = random_image(3, 5, 6);
        let up = random_image(4, 5, 6);
        let f = |p: BrightnessParams| -> f64 {
            brightness_transform(&img, p).data().iter().zip(up.data()).map(|(x, g)| x * g).sum()
        };
        let p = BrightnessParams { a: 1.3, b: -0.2 };
        let (da, db) = brightness_vjp(&img, &up);
        let h = 1e-6;
        let fa = (f(BrightnessParams { a: p.a + h, ..p }) - f(BrightnessParams { a: p.a - h, ..p })) / (2.0 * h);
        let fb = (f(BrightnessParams { b: p.b + h, ..p }) - f(BrightnessParams { b: p.b - h, ..p })) / (2.0 * h);
        assert!((fa - da).abs() < 1e-8 * da.abs());
        assert!((fb - db).abs() < 1e-8 * db.abs());
    }

    #[test]
    fn box_adjoint_is_transpose() {
        let x = random_image(1, 6, 7);
        let y = random_image(2, 6, 7);
        let lhs: f64 = box3(&x).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(box3_adjoint(&y).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn ssim_self_similarity_and_constant_patches() {
        let a = random_image(5, 8, 9);
        let s = ssim(&a, &a).unwrap();
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
        let c = Grid::new(4, 4, 0.37);
        assert!(ssim(&c, &c).unwrap().data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ssim_matches_naive_window_evaluation() {
        let a = random_image(6, 7, 11);
        let b = random_image(7, 7, 11);
        let s = ssim(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..11 {
                assert!((s.at(i, j) - naive_ssim(&a, &b, i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ssim_rejects_size_mismatch() {
        assert!(ssim(&Grid::new(2, 3, 0.0), &Grid::new(3, 2, 0.0)).is_err());
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        for seed in 0..5 {
            let a = random_image(seed, 6, 6);
            let b = random_image(seed + 100, 6, 6);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            for (x, y) in ab.data().iter().zip(ba.data()) {
                assert!((x - y).abs() < 1e-12);
                assert!((-1.0..=1.0).contains(x));
            }
        }
    }

    #[test]
    fn pe_examples() {
        let a = random_image(8, 5, 5);
        let z = pe(&a, &a, PeKind::SsimL1).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        // constant images: SSIM term is 1 - SSIM with SSIM from the means only
        let x = Grid::new(3, 3, 0.5);
        let y = Grid::new(3, 3, 0.7);
        let s = ssim(&x, &y).unwrap().at(1, 1);
        let p = pe(&x, &y, PeKind::SsimL1).unwrap().at(1, 1);
        assert!((p - (0.425 * (1.0 - s) + 0.15 * 0.2)).abs() < 1e-15);
        assert!((pe(&x, &y, PeKind::L1).unwrap().at(0, 0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pe_forced_arithmetic_with_unit_ssim() {
        // SSIM = 1 and |diff| = 0.2 gives 0.15 * 0.2
        let ssim_val: f64 = 1.0;
        let l1: f64 = 0.2;
        let val = ALPHA / 2.0 * (1.0 - ssim_val) + (1.0 - ALPHA) * l1;
        assert!((val - 0.03).abs() < 1e-15);
    }

    #[test]
    fn pe_recomposes_from_parts() {
        let a = random_image(9, 6, 8);
        let b = random_image(10, 6, 8);
        let p = pe(&a, &b, PeKind::SsimL1).unwrap();
        let s = ssim(&a, &b).unwrap();
        for k in 0..a.len() {
            let expect = ALPHA / 2.0 * (1.0 - s.data()[k]) + (1.0 - ALPHA) * (a.data()[k] - b.data()[k]).abs();
            assert_eq!(p.data()[k], expect);
            assert!(p.data()[k] >= 0.0);
        }
    }

    fn fd_check(kind: PeKind, weights: Option<&Grid<f64>>) {
        let a = random_image(11, 6, 7);
        let b = random_image(12, 6, 7);
        let up = random_image(13, 6, 7);
        let loss = |a: &Image, b: &Image| -> f64 {
            let p = PhotometricError::new(a, b, kind, weights).unwrap();
            p.map().data().iter().zip(up.data()).map(|(x, g)| x * g).sum()
        };
        let (da, db) = PhotometricError::new(&a, &b, kind, weights).unwrap().vjp(&up);
        let h = 1e-6;
        for k in 0..a.len() {
            for (which, an) in [(0, da.data()[k]), (1, db.data()[k])] {
                let (mut ap, mut am, mut bp, mut bm) = (a.clone(), a.clone(), b.clone(), b.clone());
                if which == 0 {
                    ap.data_mut()[k] += h;
                    am.data_mut()[k] -= h;
                } else {
                    bp.data_mut()[k] += h;
                    bm.data_mut()[k] -= h;
                }
                let fd = (loss(&ap, &bp) - loss(&am, &bm)) / (2.0 * h);
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "{kind:?} k={k} arg={which}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn pe_gradients_match_finite_differences() {
        fd_check(PeKind::SsimL1, None);
        fd_check(PeKind::L1, None);
        let w = random_image(14, 6, 7);
        fd_check(PeKind::SsimL1, Some(&w));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(15, 5, 6);
        let b = random_image(16, 5, 6);
        let up = random_image(17, 5, 6);
        let (da, db) = ssim_vjp(&a, &b, &up).unwrap();
        let f = |a: &Image, b: &Image| -> f64 {
            ssim(a, b).unwrap().data().iter().zip(up.data()).map(|(x, g)| x * g).sum()
        };
        let h = 1e-6;
        for k in 0..a.len() {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp.data_mut()[k] += h;
            bm.data_mut()[k] -= h;
            let fd = (f(&a, &bp) - f(&a, &bm)) / (2.0 * h);
            assert!((fd - db.data()[k]).abs() <= 1e-4 * db.data()[k].abs().max(1e-6));
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data_mut()[k] += h;
            am.data_mut()[k] -= h;
            let fd = (f(&ap, &b) - f(&am, &b)) / (2.0 * h);
            assert!((fd - da.data()[k]).abs() <= 1e-4 * da.data()[k].abs().max(1e-6));
        }
    }

    #[test]
    fn dw_weight_examples() {
        let d = Grid::from_fn(2, 4, |i, j| 5.0 + (i + j) as f64);
        let w = dw_ssim_weights(&d, &d, None).unwrap();
        assert!(w.data().iter().all(|v| *v == 1.0));

        let shifted = d.map(|v| v + 0.3);
        let w = dw_ssim_weights(&d, &shifted, None).unwrap();
        assert!(w.data().iter().all(|v| (v - 0.5).abs() < 1e-15));

        // half the pixels off by e: s2 = e^2 / 2, w = 1/3 there and 1 elsewhere
        let half = Grid::from_fn(2, 4, |i, j| d.at(i, j) + if j < 2 { 0.8 } else { 0.0 });
        let w = dw_ssim_weights(&d, &half, None).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let expect = if j < 2 { 1.0 / 3.0 } else { 1.0 };
                assert!((w.at(i, j) - expect).abs() < 1e-12);
            }
        }

        let none = Grid::new(2, 4, false);
        assert!(dw_ssim_weights(&d, &half, Some(&none)).is_err());
    }

    #[test]
    fn dw_weights_in_unit_interval() {
        let a = random_image(20, 6, 6);
        let b = random_image(21, 6, 6);
        let w = dw_ssim_weights(&a, &b, None).unwrap();
        for (k, v) in w.data().iter().enumerate() {
            assert!(*v > 0.0 && *v <= 1.0);
            if a.data()[k] == b.data()[k] {
                assert_eq!(*v, 1.0);
            }
        }
    }
}
