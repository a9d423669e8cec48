//! Raster carriers: spectral cubes, label maps and per-pixel probability stacks.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Hyperspectral cube stored band-sequentially: `data[b * height * width + row * width + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube<T> {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<T>,
}

impl<T: Real> HsiCube<T> {
    /// Builds a cube from band-sequential data, validating shape and finiteness.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Dimension(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: T) -> Result<Self> {
        Self::new(height, width, bands, vec![value; height * width * bands])
    }

    /// Builds a cube from pixel-interleaved data (`data[pixel * bands + b]`).
    pub fn from_pixel_major(
        height: usize,
        width: usize,
        bands: usize,
        pixels: &[T],
    ) -> Result<Self> {
        let n = height * width;
        if pixels.len() != n * bands {
            return Err(Error::SizeMismatch {
                expected: n * bands,
                found: pixels.len(),
            });
        }
        let mut data = vec![T::zero(); n * bands];
        for p in 0..n {
            for b in 0..bands {
                data[b * n + p] = pixels[p * bands + b];
            }
        }
        Self::new(height, width, bands, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> T {
        self.data[band * self.pixels() + row * self.width + col]
    }

    pub fn band(&self, band: usize) -> &[T] {
        let n = self.pixels();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [T] {
        let n = self.pixels();
        &mut self.data[band * n..(band + 1) * n]
    }

    /// Spectrum of one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<T> {
        let p = row * self.width + col;
        let n = self.pixels();
        (0..self.bands).map(|b| self.data[b * n + p]).collect()
    }

    /// Copies the cube into pixel-interleaved order (`out[pixel * bands + b]`).
    pub fn to_pixel_major(&self) -> Vec<T> {
        let n = self.pixels();
        let mut out = vec![T::zero(); n * self.bands];
        for b in 0..self.bands {
            let band = self.band(b);
            for p in 0..n {
                out[p * self.bands + b] = band[p];
            }
        }
        out
    }

    /// Rounds every value through `f32`, the precision of the on-disk format.
    pub fn quantized_f32(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| round_f32(v)).collect(),
            ..self.clone()
        }
    }

    pub fn same_shape<U>(&self, other: &HsiCube<U>) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }
}

#[inline]
pub(crate) fn round_f32<T: Real>(v: T) -> T {
    T::lit(v.as_f64() as f32 as f64)
}

/// Integer class map: 0 = unlabeled, 1..=num_classes = class identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: u32, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if num_classes == 0 {
            return Err(Error::param("num_classes", "must be at least 1"));
        }
        if labels.len() != height * width {
            return Err(Error::SizeMismatch {
                expected: height * width,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::param(
                "labels",
                format!("label {bad} exceeds num_classes {num_classes}"),
            ));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn empty(height: usize, width: usize, num_classes: u32) -> Result<Self> {
        Self::new(height, width, num_classes, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn pixels(&self) -> usize {
        self.labels.len()
    }

    /// Indices of labeled pixels in row-major order.
    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of pixels per class, indexed by `class - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    pub fn matches_cube<T: Real>(&self, cube: &HsiCube<T>) -> bool {
        self.height == cube.height() && self.width == cube.width()
    }
}

/// Per-pixel class probabilities stored pixel-major: `probs[pixel * num_classes + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbStack<T> {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<T>,
}

/// Tolerance on per-pixel sums for a stack to count as lying on the simplex.
pub const SIMPLEX_SUM_TOL: f64 = 1e-5;
/// Slack allowed on individual entries before clamping.
pub const SIMPLEX_ENTRY_TOL: f64 = 1e-6;

impl<T: Real> ProbStack<T> {
    /// Validates the simplex contract, then clamps entries into [0, 1].
    pub fn new(height: usize, width: usize, num_classes: usize, mut probs: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || num_classes == 0 {
            return Err(Error::Dimension(format!(
                "probability stack dimensions must be positive, got {height}x{width}x{num_classes}"
            )));
        }
        let expected = height * width * num_classes;
        if probs.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: probs.len(),
            });
        }
        let lo = -T::lit(SIMPLEX_ENTRY_TOL);
        let hi = T::one() + T::lit(SIMPLEX_ENTRY_TOL);
        for (p, row) in probs.chunks_exact(num_classes).enumerate() {
            let mut sum = T::zero();
            for (t, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        index: p * num_classes + t,
                    });
                }
                if v < lo || v > hi {
                    return Err(Error::Degenerate(format!(
                        "probability {v} at pixel {p}, class {t} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - T::one()).abs() > T::lit(SIMPLEX_SUM_TOL) {
                return Err(Error::Degenerate(format!(
                    "probabilities at pixel {p} sum to {sum}"
                )));
            }
        }
        for v in probs.iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    /// Uniform 1/T stack.
    pub fn uniform(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        let v = T::one() / T::of_usize(num_classes);
        Self::new(
            height,
            width,
            num_classes,
            vec![v; height * width * num_classes],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.probs[p * self.num_classes..(p + 1) * self.num_classes]
    }

    /// Column of class `t` (0-based) across all pixels in row-major order.
    pub fn class_plane(&self, t: usize) -> Vec<T> {
        self.probs
            .chunks_exact(self.num_classes)
            .map(|row| row[t])
            .collect()
    }

    /// Per-pixel argmax, ties to the smallest class index; returns 1-based labels.
    pub fn argmax_labels(&self) -> LabelMap {
        let labels = self
            .probs
            .chunks_exact(self.num_classes)
            .map(|row| argmax(row) as u32 + 1)
            .collect();
        LabelMap::new(self.height, self.width, self.num_classes as u32, labels)
            .expect("argmax labels are within range")
    }

    /// Stores the stack as a cube with one band per class.
    pub fn to_cube(&self) -> HsiCube<T> {
        HsiCube::from_pixel_major(self.height, self.width, self.num_classes, &self.probs)
            .expect("stack shape is valid")
    }

    /// Reads a stack from a cube with one band per class.
    pub fn from_cube(cube: &HsiCube<T>) -> Result<Self> {
        Self::new(
            cube.height(),
            cube.width(),
            cube.bands(),
            cube.to_pixel_major(),
        )
    }

    pub fn quantized_f32(&self) -> Self {
        Self {
            probs: self.probs.iter().map(|&v| round_f32(v)).collect(),
            ..self.clone()
        }
    }
}

/// Index of the largest entry; the first one wins ties.
#[inline]
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
