//! Weighted decision fusion, accuracy metrics and class separability.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::{argmax, LabelMap, ProbStack};
use crate::scalar::{sq_dist, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Weight of the first stack; the second gets `1 − mu`.
    pub mu: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { mu: 0.5 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::param("mu", format!("{} is outside [0, 1]", self.mu)));
        }
        Ok(())
    }
}

/// Per pixel, the class maximizing `mu·c1 + (1 − mu)·c2`; ties go to the
/// smallest class index.
pub fn fuse_labels<T: Real>(c1: &ProbStack<T>, c2: &ProbStack<T>, mu: f64) -> Result<LabelMap> {
    FusionParams { mu }.validate()?;
    if c1.height() != c2.height() || c1.width() != c2.width() || c1.num_classes() != c2.num_classes() {
        return Err(Error::Dimension(format!(
            "cannot fuse {}x{}x{} with {}x{}x{}",
            c1.height(),
            c1.width(),
            c1.num_classes(),
            c2.height(),
            c2.width(),
            c2.num_classes()
        )));
    }
    let (w1, w2) = (T::lit(mu), T::lit(1.0 - mu));
    let t = c1.num_classes();
    let mut fused = vec![T::zero(); t];
    let labels = (0..c1.pixels())
        .map(|p| {
            for ((f, &a), &b) in fused.iter_mut().zip(c1.pixel(p)).zip(c2.pixel(p)) {
                *f = w1 * a + w2 * b;
            }
            argmax(&fused) as u32 + 1
        })
        .collect();
    LabelMap::new(c1.height(), c1.width(), t as u32, labels)
}

/// Counts with rows indexed by reference class and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::SizeMismatch {
                expected: classes * classes,
                found: counts.len(),
            });
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Count for reference class `r` and predicted class `c`, both 0-based.
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.classes + c]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.counts[r * self.classes..(r + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|t| self.get(t, t)).sum()
    }
}

/// Tallies predictions over the labelled pixels of `reference`.
pub fn confusion(reference: &LabelMap, predicted: &LabelMap) -> Result<ConfusionMatrix> {
    if reference.height() != predicted.height() || reference.width() != predicted.width() {
        return Err(Error::Dimension(format!(
            "reference is {}x{}, prediction is {}x{}",
            reference.height(),
            reference.width(),
            predicted.height(),
            predicted.width()
        )));
    }
    let t = reference.num_classes().max(predicted.num_classes()) as usize;
    let mut cm = ConfusionMatrix::new(t);
    for (i, (&r, &p)) in reference.labels().iter().zip(predicted.labels()).enumerate() {
        if r == 0 {
            continue;
        }
        if p == 0 {
            return Err(Error::Degenerate(format!(
                "pixel {i} is labelled in the reference but unlabelled in the prediction"
            )));
        }
        cm.counts[(r as usize - 1) * t + (p as usize - 1)] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub overall: f64,
    pub average: f64,
    pub kappa: f64,
    /// `None` for classes absent from the reference.
    pub per_class: Vec<Option<f64>>,
    /// Set when chance agreement is 1, in which case kappa is reported as 0.
    pub kappa_degenerate: bool,
}

impl Metrics {
    /// Fixed-order text block with four decimals.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "OA {:.4}", self.overall);
        let _ = writeln!(out, "AA {:.4}", self.average);
        let _ = writeln!(out, "Kappa {:.4}", self.kappa);
        for (t, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => {
                    let _ = writeln!(out, "class {} {:.4}", t + 1, a);
                }
                None => {
                    let _ = writeln!(out, "class {} n/a", t + 1);
                }
            }
        }
        out
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Degenerate("confusion matrix is empty".into()));
    }
    let n = total as f64;
    let overall = cm.trace() as f64 / n;
    let per_class: Vec<Option<f64>> = (0..cm.classes())
        .map(|t| match cm.row_sum(t) {
            0 => None,
            rows => Some(cm.get(t, t) as f64 / rows as f64),
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let average = present.iter().sum::<f64>() / present.len() as f64;
    let chance = (0..cm.classes())
        .map(|t| cm.row_sum(t) as f64 * cm.col_sum(t) as f64)
        .sum::<f64>()
        / (n * n);
    let kappa_degenerate = chance >= 1.0;
    let kappa = if kappa_degenerate {
        0.0
    } else {
        (overall - chance) / (1.0 - chance)
    };
    Ok(Metrics {
        overall,
        average,
        kappa,
        per_class,
        kappa_degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separability {
    /// Mean pairwise distance between class centroids.
    pub between: f64,
    /// Mean over classes of the mean sample-to-centroid distance.
    pub within: f64,
    /// `between / within`; infinite when `within` is zero.
    pub ratio: f64,
    pub within_is_zero: bool,
}

/// Separability of labelled samples given as row-major `features`
/// (`labels[i]` belongs to row `i`; label 0 rows are ignored).
pub fn class_separability<T: Real>(features: &[T], dim: usize, labels: &[u32]) -> Result<Separability> {
    if dim == 0 || features.len() != labels.len() * dim {
        return Err(Error::Dimension(format!(
            "{} feature values for {} labels of dimension {dim}",
            features.len(),
            labels.len()
        )));
    }
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut sums = vec![0.0f64; (max_label + 1) * dim];
    let mut counts = vec![0usize; max_label + 1];
    for (row, &l) in features.chunks_exact(dim).zip(labels) {
        counts[l as usize] += 1;
        for (s, v) in sums[l as usize * dim..(l as usize + 1) * dim].iter_mut().zip(row) {
            *s += v.as_f64();
        }
    }
    let classes: Vec<usize> = (1..=max_label).filter(|&c| counts[c] > 0).collect();
    if classes.len() < 2 {
        return Err(Error::Degenerate("separability needs at least two classes".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| counts[c] < 2) {
        return Err(Error::TooFewSamples {
            class: c as u32,
            found: counts[c],
            needed: 2,
        });
    }
    let centroid = |c: usize| -> Vec<f64> {
        sums[c * dim..(c + 1) * dim]
            .iter()
            .map(|s| s / counts[c] as f64)
            .collect()
    };
    let centroids: Vec<Vec<f64>> = (0..=max_label).map(centroid).collect();

    let mut between = 0.0;
    let mut pairs = 0usize;
    for (a, &ca) in classes.iter().enumerate() {
        for &cb in &classes[a + 1..] {
            between += sq_dist(&centroids[ca], &centroids[cb]).sqrt();
            pairs += 1;
        }
    }
    between /= pairs as f64;

    let mut spread = vec![0.0f64; max_label + 1];
    let mut x = vec![0.0f64; dim];
    for (row, &l) in features.chunks_exact(dim).zip(labels) {
        if l == 0 {
            continue;
        }
        for (xi, v) in x.iter_mut().zip(row) {
            *xi = v.as_f64();
        }
        spread[l as usize] += sq_dist(&x, &centroids[l as usize]).sqrt();
    }
    let within = classes
        .iter()
        .map(|&c| spread[c] / counts[c] as f64)
        .sum::<f64>()
        / classes.len() as f64;
    let within_is_zero = within == 0.0;
    Ok(Separability {
        between,
        within,
        ratio: if within_is_zero { f64::INFINITY } else { between / within },
        within_is_zero,
    })
}
