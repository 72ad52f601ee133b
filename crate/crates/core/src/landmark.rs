//! Binary silhouette masks, IoU, and bounding-box alignment.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// A row-major binary raster, packed 64 pixels per word.
///
/// Bits past `width * height` in the last word are always zero, so word-wise
/// equality is pixel equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LandmarkMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

impl LandmarkMask {
    /// An all-background mask.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask("width and height must be positive"));
        }
        let n = width.checked_mul(height).ok_or(Error::InvalidMask("mask too large"))?;
        Ok(Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        let mut m = Self::new(width, height)?;
        if bits.len() != width * height {
            return Err(Error::InvalidMask("bit count does not match dimensions"));
        }
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            m.words[i / 64] |= 1 << (i % 64);
        }
        Ok(m)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let i = y * self.width + x;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        let i = y * self.width + x;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Number of foreground pixels.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.width * self.height)
            .map(|i| self.words[i / 64] >> (i % 64) & 1 == 1)
            .collect()
    }

    /// Tight bounding box of the foreground, or `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let b = bb.get_or_insert(BoundingBox {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
                    b.x0 = b.x0.min(x);
                    b.x1 = b.x1.max(x + 1);
                    b.y1 = y + 1;
                }
            }
        }
        bb
    }

    pub fn crop(&self, bb: BoundingBox) -> Result<Self> {
        if bb.x1 > self.width || bb.y1 > self.height || bb.x0 >= bb.x1 || bb.y0 >= bb.y1 {
            return Err(Error::InvalidMask("crop box outside mask"));
        }
        Self::from_fn(bb.width(), bb.height(), |x, y| self.get(bb.x0 + x, bb.y0 + y))
    }

    /// Nearest-neighbour resample; destination pixel centres map back onto
    /// source pixel centres.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Self> {
        let sx: Vec<usize> = (0..width)
            .map(|x| ((2 * x + 1) * self.width / (2 * width)).min(self.width - 1))
            .collect();
        let sy: Vec<usize> = (0..height)
            .map(|y| ((2 * y + 1) * self.height / (2 * height)).min(self.height - 1))
            .collect();
        Self::from_fn(width, height, |x, y| self.get(sx[x], sy[y]))
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }
}

impl AsRef<LandmarkMask> for LandmarkMask {
    fn as_ref(&self) -> &LandmarkMask {
        self
    }
}

impl fmt::Debug for LandmarkMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LandmarkMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("foreground", &self.count_ones())
            .finish()
    }
}

/// Intersection over union; two empty masks have IoU 1.
pub fn mask_iou(a: &LandmarkMask, b: &LandmarkMask) -> Result<f64> {
    a.check_same_shape(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += u64::from((x & y).count_ones());
        union += u64::from((x | y).count_ones());
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Crops both masks to their foreground bounding boxes and resizes the
/// smaller crop (by box area, `b` on ties) onto the larger crop's grid.
pub fn align_by_bbox(a: &LandmarkMask, b: &LandmarkMask) -> Result<(LandmarkMask, LandmarkMask)> {
    let ba = a.bounding_box().ok_or(Error::EmptyMask)?;
    let bb = b.bounding_box().ok_or(Error::EmptyMask)?;
    let ca = a.crop(ba)?;
    let cb = b.crop(bb)?;
    if ba.area() >= bb.area() {
        let rb = cb.resize_nearest(ca.width, ca.height)?;
        Ok((ca, rb))
    } else {
        let ra = ca.resize_nearest(cb.width, cb.height)?;
        Ok((ra, cb))
    }
}

/// IoU after [`align_by_bbox`].
pub fn aligned_iou(a: &LandmarkMask, b: &LandmarkMask) -> Result<f64> {
    let (x, y) = align_by_bbox(a, b)?;
    mask_iou(&x, &y)
}
