//! Value-noise textures defined on an integer lattice.

/// How a surface is painted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    /// Value noise with the coarsest cell `cell` (pixels) and `octaves` halvings.
    Noise { cell: f64, octaves: u32 },
    /// A single intensity everywhere.
    Constant(f64),
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Noise { cell: 16.0, octaves: 3 }
    }
}

pub const INTENSITY_MIN: f64 = 0.1;
pub const INTENSITY_MAX: f64 = 0.9;

pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn lattice(key: u64, x: i64, y: i64) -> f64 {
    let h = mix(key ^ mix((x as u64).wrapping_mul(0x9e37_79b9) ^ mix(y as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(key: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (libm::floor(x), libm::floor(y));
    let (fx, fy) = (smoothstep(x - x0), smoothstep(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(key, ix, iy);
    let b = lattice(key, ix + 1, iy);
    let c = lattice(key, ix, iy + 1);
    let d = lattice(key, ix + 1, iy + 1);
    (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
}

impl Texture {
    /// Intensity at integer lattice node `(x, y)`.
    pub fn node(&self, key: u64, x: i64, y: i64) -> f64 {
        match *self {
            Texture::Constant(c) => c,
            Texture::Noise { cell, octaves } => {
                let (mut sum, mut norm, mut amp, mut c) = (0.0, 0.0, 1.0, cell);
                for o in 0..octaves.max(1) {
                    sum += amp * value_noise(mix(key ^ o as u64), x as f64 / c, y as f64 / c);
                    norm += amp;
                    amp *= 0.5;
                    c *= 0.5;
                }
                INTENSITY_MIN + (INTENSITY_MAX - INTENSITY_MIN) * sum / norm
            }
        }
    }

    /// Bilinear interpolation of the lattice nodes at `(x, y)`.
    pub fn sample(&self, key: u64, x: f64, y: f64) -> f64 {
        if let Texture::Constant(c) = *self {
            return c;
        }
        let (x0, y0) = (libm::floor(x), libm::floor(y));
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let top = (1.0 - fx) * self.node(key, ix, iy) + fx * self.node(key, ix + 1, iy);
        let bot = (1.0 - fx) * self.node(key, ix, iy + 1) + fx * self.node(key, ix + 1, iy + 1);
        (1.0 - fy) * top + fy * bot
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        match *self {
            Texture::Noise { cell, octaves } => Texture::Noise { cell: cell * factor, octaves },
            c => c,
        }
    }
}
