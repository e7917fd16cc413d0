use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Row-major `height x width` field. Index `(i, j)` is `(row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Single-channel luminance image, nominally in `[0, 1]`.
pub type Image = Grid<f64>;
/// Metric depth in meters.
pub type DepthMap = Grid<f64>;
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn new(height: usize, width: usize, fill: T) -> Self {
        Self { height, width, data: vec![fill; height * width] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid!(
                "grid data has {} elements, expected {}x{}",
                data.len(),
                height,
                width
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.width + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.width + j]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(f).collect() }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    /// Value at `(i, j)` with indices clamped into the grid (edge replication).
    #[inline]
    pub fn at_clamped(&self, i: isize, j: isize) -> T {
        let i = i.clamp(0, self.height as isize - 1) as usize;
        let j = j.clamp(0, self.width as isize - 1) as usize;
        self.data[i * self.width + j]
    }
}

impl Grid<f64> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2x2 box-filter downsampling. Odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Self {
        let h = self.height / 2;
        let w = self.width / 2;
        Grid::from_fn(h, w, |i, j| {
            0.25 * (self.at(2 * i, 2 * j)
                + self.at(2 * i, 2 * j + 1)
                + self.at(2 * i + 1, 2 * j)
                + self.at(2 * i + 1, 2 * j + 1))
        })
    }

    /// Bilinear resize to `height x width` using pixel-center alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Grid::from_fn(height, width, |i, j| {
            let y = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let x = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let i0 = libm::floor(y) as usize;
            let j0 = libm::floor(x) as usize;
            let i1 = (i0 + 1).min(self.height - 1);
            let j1 = (j0 + 1).min(self.width - 1);
            let fy = y - i0 as f64;
            let fx = x - j0 as f64;
            (1.0 - fy) * ((1.0 - fx) * self.at(i0, j0) + fx * self.at(i0, j1))
                + fy * ((1.0 - fx) * self.at(i1, j0) + fx * self.at(i1, j1))
        })
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// Intersection over union of two masks; 1 when both are empty.
    pub fn iou(&self, other: &Grid<bool>) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}
