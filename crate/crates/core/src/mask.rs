use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::Result;

/// Binary segmentation mask, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!(
                "mask data length {} does not match {}x{}",
                data.len(),
                height,
                width
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(shape_err!("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            data,
        }
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
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    /// Out-of-bounds coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, y: isize, x: isize) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width && self.get(y as usize, x as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(self.height - 1 - y, x))
    }

    /// Shifts contents by (dy, dx); pixels moved past the border are dropped.
    pub fn translate(&self, dy: isize, dx: isize) -> Self {
        Self::from_fn(self.height, self.width, |y, x| {
            self.get_signed(y as isize - dy, x as isize - dx)
        })
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Mean (row, column) of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sy, mut sx, mut n) = (0u64, 0u64, 0u64);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    sy += y as u64;
                    sx += x as u64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sy as f64 / n as f64, sx as f64 / n as f64))
    }
}
