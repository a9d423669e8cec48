//! Extended random walker refinement of per-pixel class probabilities.
//!
//! A 4-connected grid graph is weighted by a scalar guidance image,
//! `w_ij = exp(−β (v_i − v_j)²)`, and each class map solves
//! `(L + γI) q_t = γ p_t`. Because `L·1 = 0` and the priors sum to one per
//! pixel, the solutions sum to one as well.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kpca::{fit_kpca, transform, KpcaParams};
use crate::linalg::conjugate_gradient;
use crate::prep::rescale_unit;
use crate::raster::{HsiCube, ProbStack};
use crate::scalar::Real;

/// Graph Laplacian of the weighted 4-neighbour grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLaplacian<T> {
    height: usize,
    width: usize,
    beta: T,
    /// Weight between `(r, c)` and `(r, c + 1)`, `height × (width − 1)`.
    horizontal: Vec<T>,
    /// Weight between `(r, c)` and `(r + 1, c)`, `(height − 1) × width`.
    vertical: Vec<T>,
    degree: Vec<T>,
}

impl<T: Real> GridLaplacian<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Diagonal entries (weighted degrees).
    pub fn degree(&self) -> &[T] {
        &self.degree
    }

    /// `out = L x`.
    pub fn apply(&self, x: &[T], out: &mut [T]) {
        self.apply_shifted(T::zero(), x, out);
    }

    /// `out = (L + shift·I) x`.
    pub fn apply_shifted(&self, shift: T, x: &[T], out: &mut [T]) {
        let (h, w) = (self.height, self.width);
        for (o, (&d, &xi)) in out.iter_mut().zip(self.degree.iter().zip(x)) {
            *o = (d + shift) * xi;
        }
        for r in 0..h {
            for c in 0..w.saturating_sub(1) {
                let wt = self.horizontal[r * (w - 1) + c];
                let (i, j) = (r * w + c, r * w + c + 1);
                out[i] -= wt * x[j];
                out[j] -= wt * x[i];
            }
        }
        for r in 0..h.saturating_sub(1) {
            for c in 0..w {
                let wt = self.vertical[r * w + c];
                let (i, j) = (r * w + c, (r + 1) * w + c);
                out[i] -= wt * x[j];
                out[j] -= wt * x[i];
            }
        }
    }

    /// Dense row-major copy; meant for small grids and checks.
    pub fn to_dense(&self) -> Vec<T> {
        let n = self.len();
        let mut out = vec![T::zero(); n * n];
        let mut e = vec![T::zero(); n];
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            self.apply(&e, &mut col);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
            e[j] = T::zero();
        }
        out
    }
}

/// Builds the Laplacian of a row-major `height × width` guidance image.
pub fn build_laplacian<T: Real>(
    guidance: &[T],
    height: usize,
    width: usize,
    beta: T,
) -> Result<GridLaplacian<T>> {
    if guidance.len() != height * width {
        return Err(Error::SizeMismatch {
            expected: height * width,
            found: guidance.len(),
        });
    }
    if let Some(index) = guidance.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::param("beta", "must be positive and finite"));
    }
    let weight = |a: T, b: T| (-beta * (a - b) * (a - b)).exp();
    let mut horizontal = Vec::with_capacity(height * width.saturating_sub(1));
    for row in guidance.chunks_exact(width) {
        horizontal.extend(row.windows(2).map(|p| weight(p[0], p[1])));
    }
    let mut vertical = Vec::with_capacity(height.saturating_sub(1) * width);
    for r in 0..height.saturating_sub(1) {
        for c in 0..width {
            vertical.push(weight(guidance[r * width + c], guidance[(r + 1) * width + c]));
        }
    }
    let mut degree = vec![T::zero(); height * width];
    for r in 0..height {
        for c in 0..width.saturating_sub(1) {
            let wt = horizontal[r * (width - 1) + c];
            degree[r * width + c] += wt;
            degree[r * width + c + 1] += wt;
        }
    }
    for r in 0..height.saturating_sub(1) {
        for c in 0..width {
            let wt = vertical[r * width + c];
            degree[r * width + c] += wt;
            degree[(r + 1) * width + c] += wt;
        }
    }
    Ok(GridLaplacian {
        height,
        width,
        beta,
        horizontal,
        vertical,
        degree,
    })
}

/// First kernel principal component of `cube`, rescaled to `[0, 1]`.
///
/// A cube whose pixels all share one spectrum has no structure to follow;
/// its guidance is all zeros.
pub fn guidance_image<T: Real>(cube: &HsiCube<T>, params: &KpcaParams, seed: u64) -> Result<Vec<T>> {
    let bands = cube.bands();
    let samples = cube.to_pixel_major();
    let first = &samples[..bands];
    if samples.chunks_exact(bands).all(|s| s == first) {
        return Ok(vec![T::zero(); cube.pixels()]);
    }
    let model = fit_kpca(&samples, bands, 1, params, seed)?;
    let mut v = transform(&model, &samples)?;
    rescale_unit(&mut v);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErwParams {
    /// Edge contrast scale on `[0, 1]` guidance.
    pub beta: f64,
    /// Weight of the prior term.
    pub gamma: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for ErwParams {
    fn default() -> Self {
        Self {
            beta: 90.0,
            gamma: 0.1,
            cg_tol: 1e-6,
            cg_max_iters: 2000,
        }
    }
}

impl ErwParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::param("beta", "must be positive and finite"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::param("gamma", "must be positive and finite"));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::param("cg_tol", "must be positive"));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::param("cg_max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-class solve result before conversion into a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ErwOutput<T> {
    pub probs: ProbStack<T>,
    /// CG iterations used per class.
    pub iterations: Vec<usize>,
    /// Final relative residual per class.
    pub residuals: Vec<f64>,
}

/// Solves `(L + γI) q_t = γ p_t` for every class and returns the refined stack.
pub fn erw_optimize<T: Real>(
    laplacian: &GridLaplacian<T>,
    priors: &ProbStack<T>,
    params: &ErwParams,
) -> Result<ErwOutput<T>> {
    params.validate()?;
    if priors.height() != laplacian.height() || priors.width() != laplacian.width() {
        return Err(Error::Dimension(format!(
            "priors are {}x{}, graph is {}x{}",
            priors.height(),
            priors.width(),
            laplacian.height(),
            laplacian.width()
        )));
    }
    let gamma = T::lit(params.gamma);
    let diag: Vec<T> = laplacian.degree().iter().map(|&d| d + gamma).collect();
    let t = priors.num_classes();
    let solved: Vec<_> = (0..t)
        .into_par_iter()
        .map(|class| {
            let rhs: Vec<T> = priors.class_plane(class).into_iter().map(|p| gamma * p).collect();
            conjugate_gradient(
                |x, out| laplacian.apply_shifted(gamma, x, out),
                &diag,
                &rhs,
                params.cg_tol,
                params.cg_max_iters,
            )
        })
        .collect::<Result<_>>()?;

    let n = laplacian.len();
    let mut probs = vec![T::zero(); n * t];
    for (class, sol) in solved.iter().enumerate() {
        for (p, &q) in sol.x.iter().enumerate() {
            probs[p * t + class] = q;
        }
    }
    Ok(ErwOutput {
        probs: ProbStack::new(laplacian.height(), laplacian.width(), t, probs)?,
        iterations: solved.iter().map(|s| s.iterations).collect(),
        residuals: solved.iter().map(|s| s.relative_residual).collect(),
    })
}
