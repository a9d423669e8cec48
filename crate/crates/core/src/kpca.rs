//! Kernel principal component analysis with a Gaussian kernel.
//!
//! The model is fitted on at most `max_anchors` pixels. Queries are projected
//! through the centred kernel against those anchors.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{decode_f32, encode_f32, parse_key_values, raw_path, write_file};
use crate::linalg::top_eigenpairs;
use crate::scalar::{sq_dist, Real};

pub const DEFAULT_COMPONENTS: usize = 20;
pub const DEFAULT_MAX_ANCHORS: usize = 2000;

/// Kernel width `sigma_k` of `exp(-|a-b|^2 / (2 sigma_k^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelWidth {
    /// Median of the positive pairwise anchor distances.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpcaParams {
    pub kernel_width: KernelWidth,
    pub max_anchors: usize,
}

impl Default for KpcaParams {
    fn default() -> Self {
        Self {
            kernel_width: KernelWidth::Auto,
            max_anchors: DEFAULT_MAX_ANCHORS,
        }
    }
}

/// Eigen-decomposed, double-centred kernel matrix.
///
/// Works with any kernel: callers supply the uncentred `n x n` kernel matrix
/// at fit time and uncentred kernel rows at projection time.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredKernelPca<T> {
    n: usize,
    /// `n x K`, row-major; column `c` is the eigenvector scaled by `1/sqrt(eigenvalue)`.
    pub alphas: Vec<T>,
    /// Descending, clamped to be non-negative.
    pub eigenvalues: Vec<T>,
    /// Mean of each kernel-matrix row.
    pub row_means: Vec<T>,
    pub total_mean: T,
    /// Training scores, `n x K` (`sqrt(eigenvalue) * eigenvector`).
    pub fit_scores: Vec<T>,
}

impl<T: Real> CenteredKernelPca<T> {
    pub fn fit(kernel: &[T], n: usize, components: usize) -> Result<Self> {
        if components < 1 || components > n {
            return Err(Error::param(
                "K",
                format!("need 1 <= K <= {n} samples, got {components}"),
            ));
        }
        if kernel.len() != n * n {
            return Err(Error::Dimension(format!(
                "kernel matrix has {} entries, expected {n}x{n}",
                kernel.len()
            )));
        }
        let nn = T::of_usize(n);
        let row_means: Vec<T> = kernel
            .chunks_exact(n)
            .map(|row| row.iter().copied().sum::<T>() / nn)
            .collect();
        let total_mean = row_means.iter().copied().sum::<T>() / nn;
        let mut centered = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                centered[i * n + j] =
                    kernel[i * n + j] - row_means[i] - row_means[j] + total_mean;
            }
        }
        // Enforce exact symmetry before the eigensolver.
        for i in 0..n {
            for j in 0..i {
                let avg = (centered[i * n + j] + centered[j * n + i]) * T::lit(0.5);
                centered[i * n + j] = avg;
                centered[j * n + i] = avg;
            }
        }

        let pairs = top_eigenpairs(&centered, n, components);
        let k = components;
        let lead = pairs.values.first().copied().unwrap_or(T::zero()).max(T::one());
        let cutoff = T::epsilon() * nn * lead;
        let mut alphas = vec![T::zero(); n * k];
        let mut fit_scores = vec![T::zero(); n * k];
        let mut eigenvalues = Vec::with_capacity(k);
        for c in 0..k {
            let value = pairs.values[c].max(T::zero());
            eigenvalues.push(value);
            let mut v = pairs.vector(c);
            let vmax = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
            if let Some(first) = v.iter().find(|x| x.abs() > T::lit(1e-10) * vmax) {
                if *first < T::zero() {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            if value > cutoff {
                let root = value.sqrt();
                for i in 0..n {
                    alphas[i * k + c] = v[i] / root;
                    fit_scores[i * k + c] = v[i] * root;
                }
            }
        }
        Ok(Self {
            n,
            alphas,
            eigenvalues,
            row_means,
            total_mean,
            fit_scores,
        })
    }

    pub fn components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    /// Projects one query given its uncentred kernel values against the `n` fit samples.
    pub fn project(&self, kernel_row: &[T], out: &mut [T]) {
        let k = self.components();
        let mean = kernel_row.iter().copied().sum::<T>() / T::of_usize(self.n);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (j, &kv) in kernel_row.iter().enumerate() {
            let centered = kv - mean - self.row_means[j] + self.total_mean;
            let alpha = &self.alphas[j * k..(j + 1) * k];
            for (o, &a) in out.iter_mut().zip(alpha) {
                *o += centered * a;
            }
        }
    }
}

/// Fitted Gaussian-kernel PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel<T> {
    /// `n x dim` anchor samples, row-major.
    pub anchors: Vec<T>,
    pub dim: usize,
    pub kernel_width: T,
    pub eigen: CenteredKernelPca<T>,
}

impl<T: Real> KpcaModel<T> {
    pub fn components(&self) -> usize {
        self.eigen.components()
    }

    pub fn anchors_len(&self) -> usize {
        self.eigen.samples()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigen.eigenvalues
    }

    /// Anchor scores computed during fitting, `n x K`.
    pub fn fit_scores(&self) -> &[T] {
        &self.eigen.fit_scores
    }

    fn kernel_row(&self, x: &[T], out: &mut [T]) {
        let inv = T::one() / (T::lit(2.0) * self.kernel_width * self.kernel_width);
        for (j, o) in out.iter_mut().enumerate() {
            let a = &self.anchors[j * self.dim..(j + 1) * self.dim];
            *o = (-sq_dist(x, a) * inv).exp();
        }
    }
}

/// Gaussian kernel matrix of row-major samples.
pub fn gaussian_kernel_matrix<T: Real>(samples: &[T], dim: usize, width: T) -> Vec<T> {
    let n = samples.len() / dim;
    let inv = T::one() / (T::lit(2.0) * width * width);
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        k[i * n + i] = T::one();
        let a = &samples[i * dim..(i + 1) * dim];
        for j in 0..i {
            let v = (-sq_dist(a, &samples[j * dim..(j + 1) * dim]) * inv).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Median of the positive pairwise distances; `None` if every sample is identical.
pub fn median_distance<T: Real>(samples: &[T], dim: usize) -> Option<T> {
    let n = samples.len() / dim;
    let mut dists: Vec<T> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = &samples[i * dim..(i + 1) * dim];
        for j in 0..i {
            let d = sq_dist(a, &samples[j * dim..(j + 1) * dim]);
            if d > T::zero() {
                dists.push(d.sqrt());
            }
        }
    }
    if dists.is_empty() {
        return None;
    }
    let mid = dists.len() / 2;
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("finite distances");
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, cmp);
    let median = if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid]
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        (lower + upper) * T::lit(0.5)
    };
    Some(median)
}

/// Fits KPCA on row-major `samples` (`n x dim`), keeping `components` components.
pub fn fit_kpca<T: Real>(
    samples: &[T],
    dim: usize,
    components: usize,
    params: &KpcaParams,
    seed: u64,
) -> Result<KpcaModel<T>> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "{} values do not form rows of {dim}",
            samples.len()
        )));
    }
    if params.max_anchors < 1 {
        return Err(Error::param("max_anchors", "must be at least 1"));
    }
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n = samples.len() / dim;
    let anchors: Vec<T> = if n > params.max_anchors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, params.max_anchors).into_vec();
        picked.sort_unstable();
        picked
            .iter()
            .flat_map(|&i| samples[i * dim..(i + 1) * dim].iter().copied())
            .collect()
    } else {
        samples.to_vec()
    };
    let n_anchors = anchors.len() / dim;
    if components < 1 || components > n_anchors {
        return Err(Error::param(
            "K",
            format!("need 1 <= K <= {n_anchors} anchors, got {components}"),
        ));
    }
    let width = match params.kernel_width {
        KernelWidth::Value(w) if w > 0.0 && w.is_finite() => T::lit(w),
        KernelWidth::Value(w) => {
            return Err(Error::param("kernel_width", format!("{w} is not > 0")))
        }
        KernelWidth::Auto => median_distance(&anchors, dim).ok_or_else(|| {
            Error::Degenerate("all KPCA anchors are identical (zero median distance)".into())
        })?,
    };
    let kernel = gaussian_kernel_matrix(&anchors, dim, width);
    let eigen = CenteredKernelPca::fit(&kernel, n_anchors, components)?;
    Ok(KpcaModel {
        anchors,
        dim,
        kernel_width: width,
        eigen,
    })
}

/// Projects row-major `pixels` (`p x dim`) onto the model components, giving `p x K`.
pub fn transform<T: Real>(model: &KpcaModel<T>, pixels: &[T]) -> Result<Vec<T>> {
    if !pixels.len().is_multiple_of(model.dim) {
        return Err(Error::Dimension(format!(
            "{} values do not form rows of {}",
            pixels.len(),
            model.dim
        )));
    }
    let k = model.components();
    let n = model.anchors_len();
    let mut out = vec![T::zero(); pixels.len() / model.dim * k];
    out.par_chunks_mut(k.max(1))
        .zip(pixels.par_chunks(model.dim))
        .for_each_init(
            || vec![T::zero(); n],
            |row, (o, x)| {
                model.kernel_row(x, row);
                model.eigen.project(row, o);
            },
        );
    Ok(out)
}

/// Persists a model as a `key=value` header plus a raw `float32` blob holding
/// anchors, alphas and eigenvalues in that order.
pub fn save_kpca<T: Real>(model: &KpcaModel<T>, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let header = format!(
        "kind=kpca\nanchors={}\ndim={}\ncomponents={}\nsigma={}\ndtype=float32\nbyteorder=little\n",
        model.anchors_len(),
        model.dim,
        model.components(),
        model.kernel_width.as_f64()
    );
    write_file(header_path, header.as_bytes())?;
    let mut blob = encode_f32(&model.anchors);
    blob.extend(encode_f32(&model.eigen.alphas));
    blob.extend(encode_f32(&model.eigen.eigenvalues));
    write_file(&raw_path(header_path), &blob)
}

pub fn load_kpca<T: Real>(header_path: impl AsRef<Path>) -> Result<KpcaModel<T>> {
    let header_path = header_path.as_ref();
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let kv = parse_key_values(header_path, &text)?;
    let get = |key: &str| {
        kv.get(key)
            .ok_or_else(|| Error::format(header_path, format!("missing key {key}")))
    };
    if get("kind")? != "kpca" {
        return Err(Error::format(header_path, "not a kpca model"));
    }
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::format(header_path, format!("bad {key}")))
    };
    let (n, dim, k) = (num("anchors")?, num("dim")?, num("components")?);
    let sigma: f64 = get("sigma")?
        .parse()
        .map_err(|_| Error::format(header_path, "bad sigma"))?;
    let raw = raw_path(header_path);
    let bytes = std::fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let values: Vec<T> = decode_f32(&bytes)
        .into_iter()
        .map(|v| T::lit(v as f64))
        .collect();
    let expected = n * dim + n * k + k;
    if values.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: values.len(),
        });
    }
    let anchors = values[..n * dim].to_vec();
    let alphas = values[n * dim..n * dim + n * k].to_vec();
    let eigenvalues = values[n * dim + n * k..].to_vec();
    let width = T::lit(sigma);
    let kernel = gaussian_kernel_matrix(&anchors, dim, width);
    let nn = T::of_usize(n);
    let row_means: Vec<T> = kernel
        .chunks_exact(n)
        .map(|row| row.iter().copied().sum::<T>() / nn)
        .collect();
    let total_mean = row_means.iter().copied().sum::<T>() / nn;
    let fit_scores = (0..n * k)
        .map(|idx| alphas[idx] * eigenvalues[idx % k])
        .collect();
    Ok(KpcaModel {
        anchors,
        dim,
        kernel_width: width,
        eigen: CenteredKernelPca {
            n,
            alphas,
            eigenvalues,
            row_means,
            total_mean,
            fit_scores,
        },
    })
}
