//! Structural-profile extraction by adaptive texture smoothing.
//!
//! Every pixel `x` gets its own local polynomial `p` of degree `L`, fitted over
//! the `(2r+1)^2` window around `x`. Window samples are weighted by a nonlocal
//! patch similarity `w(x_i, x)`, and the fit carries an anisotropic TV penalty
//! on the gradient of `p`, minimised with split Bregman:
//!
//! 1. solve the weighted least-squares system for the coefficients `c`,
//! 2. shrink `grad p + b` towards zero with threshold `1/lambda` to get `d`,
//! 3. update `b <- b + grad p - d`,
//!
//! until `p` stops changing at the window points. The structural value at `x`
//! is `p(x)`, which is the constant coefficient because the basis is centred
//! on `x`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kpca::{self, KpcaModel, KpcaParams};
use crate::linalg::Cholesky;
use crate::raster::HsiCube;
use crate::scalar::Real;

/// Smoothing model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothParams {
    /// TV weight, also used for the Bregman quadratic term.
    pub lambda: f64,
    /// Window Ω(x) is `(2r+1) x (2r+1)` pixels.
    pub window_radius: usize,
    /// Similarity patch is `(2q+1) x (2q+1)` pixels.
    pub patch_radius: usize,
    /// Polynomial degree `L`.
    pub degree: usize,
    /// Standard deviation of the patch-offset Gaussian, in pixels.
    pub sigma: f64,
    /// Similarity scale.
    pub h0: f64,
    pub max_iters: usize,
    /// Relative change of `p` on the window that ends the iteration.
    pub tol: f64,
}

impl Default for SmoothParams {
    fn default() -> Self {
        Self {
            lambda: 1.2,
            window_radius: 3,
            patch_radius: 1,
            degree: 2,
            sigma: 1.0,
            h0: 1.0,
            max_iters: 20,
            tol: 1e-4,
        }
    }
}

impl SmoothParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", "must be finite and >= 0"));
        }
        if self.window_radius < 1 {
            return Err(Error::param("window_radius", "must be at least 1"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::param("sigma", "must be finite and > 0"));
        }
        if !(self.h0 > 0.0) || !self.h0.is_finite() {
            return Err(Error::param("h0", "must be finite and > 0"));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        Ok(())
    }

    /// Number of window points `N`.
    pub fn window_len(&self) -> usize {
        (2 * self.window_radius + 1).pow(2)
    }
}

/// Dimension of the bivariate polynomial space of degree `<= degree`.
pub fn basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Monomial basis `u^a v^b` (`a + b <= L`) evaluated on the window.
///
/// Local coordinates are `u = dx / r`, `v = dy / r`, so the window spans
/// `[-1, 1]^2`; `dx` runs along columns and `dy` along rows. Rows of the
/// matrices follow the window points in row-major order; columns are ordered by
/// total degree, then by descending power of `u`: `1, u, v, u^2, uv, v^2, ...`.
/// `ex` and `ey` hold the exact partial derivatives per pixel (factor `1/r`).
#[derive(Debug, Clone, PartialEq)]
pub struct Basis<T> {
    pub radius: usize,
    pub degree: usize,
    /// `(dy, dx)` of each window point.
    pub offsets: Vec<(isize, isize)>,
    pub e: Vec<T>,
    pub ex: Vec<T>,
    pub ey: Vec<T>,
}

impl<T: Real> Basis<T> {
    pub fn points(&self) -> usize {
        self.offsets.len()
    }

    pub fn len(&self) -> usize {
        basis_len(self.degree)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row of the window centre.
    pub fn center_index(&self) -> usize {
        self.offsets.len() / 2
    }

    /// Exponents `(a, b)` of each column.
    pub fn exponents(&self) -> Vec<(usize, usize)> {
        monomials(self.degree)
    }
}

fn monomials(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(basis_len(degree));
    for total in 0..=degree {
        for a in (0..=total).rev() {
            out.push((a, total - a));
        }
    }
    out
}

pub fn build_basis<T: Real>(window_radius: usize, degree: usize) -> Basis<T> {
    let r = window_radius as isize;
    let scale = T::one() / T::of_usize(window_radius.max(1));
    let exps = monomials(degree);
    let m = exps.len();
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .collect();
    let n = offsets.len();
    let mut e = vec![T::zero(); n * m];
    let mut ex = vec![T::zero(); n * m];
    let mut ey = vec![T::zero(); n * m];
    for (i, &(dy, dx)) in offsets.iter().enumerate() {
        let u = T::lit(dx as f64) * scale;
        let v = T::lit(dy as f64) * scale;
        for (l, &(a, b)) in exps.iter().enumerate() {
            e[i * m + l] = powi(u, a) * powi(v, b);
            if a > 0 {
                ex[i * m + l] = T::of_usize(a) * powi(u, a - 1) * powi(v, b) * scale;
            }
            if b > 0 {
                ey[i * m + l] = T::of_usize(b) * powi(u, a) * powi(v, b - 1) * scale;
            }
        }
    }
    Basis {
        radius: window_radius,
        degree,
        offsets,
        e,
        ex,
        ey,
    }
}

#[inline]
fn powi<T: Real>(x: T, k: usize) -> T {
    let mut acc = T::one();
    for _ in 0..k {
        acc *= x;
    }
    acc
}

/// Soft thresholding `sign(a) * max(|a| - t, 0)`.
#[inline]
pub fn soft<T: Real>(a: T, threshold: T) -> T {
    let mag = a.abs() - threshold;
    if mag > T::zero() {
        mag.copysign(a)
    } else {
        T::zero()
    }
}

/// Componentwise soft thresholding of a gradient pair.
#[inline]
pub fn shrink<T: Real>(v: [T; 2], threshold: T) -> [T; 2] {
    [soft(v[0], threshold), soft(v[1], threshold)]
}

/// Pixel-interleaved read-only view with replicate-clamped access.
pub(crate) struct Interleaved<'a, T> {
    height: usize,
    width: usize,
    bands: usize,
    data: &'a [T],
}

impl<'a, T: Real> Interleaved<'a, T> {
    pub(crate) fn new(height: usize, width: usize, bands: usize, data: &'a [T]) -> Self {
        Self {
            height,
            width,
            bands,
            data,
        }
    }

    #[inline]
    fn clamped_index(&self, row: isize, col: isize) -> usize {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        r * self.width + c
    }

    #[inline]
    fn spectrum_at(&self, row: isize, col: isize) -> &[T] {
        let p = self.clamped_index(row, col);
        &self.data[p * self.bands..(p + 1) * self.bands]
    }
}

/// Patch offsets with their Gaussian factors `exp(-|y|^2 / (2 sigma^2))`.
fn patch_kernel<T: Real>(params: &SmoothParams) -> Vec<(isize, isize, T)> {
    let q = params.patch_radius as isize;
    let two_s2 = 2.0 * params.sigma * params.sigma;
    (-q..=q)
        .flat_map(|py| (-q..=q).map(move |px| (py, px)))
        .map(|(py, px)| {
            let r2 = (py * py + px * px) as f64;
            (py, px, T::lit((-r2 / two_s2).exp()))
        })
        .collect()
}

fn window_weights<T: Real>(
    img: &Interleaved<T>,
    row: usize,
    col: usize,
    offsets: &[(isize, isize)],
    kernel: &[(isize, isize, T)],
    inv_h2: T,
) -> Vec<T> {
    let (r0, c0) = (row as isize, col as isize);
    offsets
        .iter()
        .map(|&(dy, dx)| {
            // The window point itself is clamped first, then its patch.
            let p = img.clamped_index(r0 + dy, c0 + dx);
            let (ri, ci) = ((p / img.width) as isize, (p % img.width) as isize);
            let mut dist = T::zero();
            for &(py, px, g) in kernel {
                let a = img.spectrum_at(ri + py, ci + px);
                let b = img.spectrum_at(r0 + py, c0 + px);
                let mut s = T::zero();
                for (&x, &y) in a.iter().zip(b) {
                    let d = x - y;
                    s += d * d;
                }
                dist += s * g;
            }
            (-dist * inv_h2).exp().max(T::min_positive_value())
        })
        .collect()
}

/// Similarity weights `w(x_i, x)` of every window point of `center`.
///
/// `w = exp(-sum_y |I(x_i + y) - I(x + y)|^2 G(|y|) / h0^2)`, clamped below at
/// the smallest positive normal value so it stays in `(0, 1]`.
pub fn patch_weights<T: Real>(
    cube: &HsiCube<T>,
    center: (usize, usize),
    params: &SmoothParams,
) -> Result<Vec<T>> {
    params.validate()?;
    if center.0 >= cube.height() || center.1 >= cube.width() {
        return Err(Error::Dimension(format!(
            "pixel {center:?} outside {}x{} image",
            cube.height(),
            cube.width()
        )));
    }
    let pm = cube.to_pixel_major();
    let img = Interleaved::new(cube.height(), cube.width(), cube.bands(), &pm);
    let basis = build_basis::<T>(params.window_radius, params.degree);
    let inv_h2 = T::lit(1.0 / (params.h0 * params.h0));
    Ok(window_weights(
        &img,
        center.0,
        center.1,
        &basis.offsets,
        &patch_kernel(params),
        inv_h2,
    ))
}

/// Per-pixel least-squares state: basis, weights, and Bregman variables per band.
#[derive(Debug, Clone)]
pub struct LocalSystem<'a, T> {
    pub basis: &'a Basis<T>,
    /// Diagonal of `D_w`.
    pub weights: Vec<T>,
    /// `d` per band, `[band][point] -> (x, y)`.
    pub d: Vec<Vec<[T; 2]>>,
    /// `b` per band, same layout as `d`.
    pub b: Vec<Vec<[T; 2]>>,
}

impl<'a, T: Real> LocalSystem<'a, T> {
    /// Fresh system with `d = b = 0`.
    pub fn new(basis: &'a Basis<T>, weights: Vec<T>, bands: usize) -> Self {
        let n = basis.points();
        Self {
            basis,
            weights,
            d: vec![vec![[T::zero(); 2]; n]; bands],
            b: vec![vec![[T::zero(); 2]; n]; bands],
        }
    }
}

/// Factored left-hand side `E'DE + 2 lambda (Ex'DEx + Ey'DEy)`, shared by all bands.
struct NormalMatrix<T> {
    chol: Cholesky<T>,
    m: usize,
    /// Unregularised matrix, kept when a ridge had to be added.
    ridged: Option<Vec<T>>,
}

/// Refinement sweeps applied to ridge-regularised solves.
const RIDGE_REFINEMENTS: usize = 3;

impl<T: Real> NormalMatrix<T> {
    fn assemble(basis: &Basis<T>, weights: &[T], lambda: T) -> Result<Self> {
        let m = basis.len();
        let n = basis.points();
        let two_lambda = T::lit(2.0) * lambda;
        let mut a = vec![T::zero(); m * m];
        for i in 0..n {
            let w = weights[i];
            let (e, ex, ey) = (
                &basis.e[i * m..(i + 1) * m],
                &basis.ex[i * m..(i + 1) * m],
                &basis.ey[i * m..(i + 1) * m],
            );
            for j in 0..m {
                for k in 0..m {
                    a[j * m + k] += w * (e[j] * e[k] + two_lambda * (ex[j] * ex[k] + ey[j] * ey[k]));
                }
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: 0 });
        }
        let trace: T = (0..m).map(|j| a[j * m + j]).sum();
        let scale = trace / T::of_usize(m);
        if let Some(chol) = Cholesky::factor(&a, m, T::lit(1e-12) * scale) {
            return Ok(Self {
                chol,
                m,
                ridged: None,
            });
        }
        // Rank-deficient window: add a small ridge.
        let plain = a.clone();
        let eps = T::lit(1e-8) * scale;
        for j in 0..m {
            a[j * m + j] += eps;
        }
        let chol = Cholesky::factor(&a, m, T::zero()).ok_or_else(|| {
            Error::Degenerate("local normal equations are not positive definite".into())
        })?;
        Ok(Self {
            chol,
            m,
            ridged: Some(plain),
        })
    }

    /// Solves in place. With a ridge, iterated refinement against the
    /// unregularised matrix pulls the solution towards the least-squares one.
    fn solve_in_place(&self, rhs: &mut [T]) {
        let Some(plain) = &self.ridged else {
            self.chol.solve_in_place(rhs);
            return;
        };
        let m = self.m;
        let target = rhs.to_vec();
        self.chol.solve_in_place(rhs);
        for _ in 0..RIDGE_REFINEMENTS {
            let mut resid: Vec<T> = (0..m)
                .map(|j| {
                    let row = &plain[j * m..(j + 1) * m];
                    target[j] - row.iter().zip(rhs.iter()).map(|(&a, &x)| a * x).sum::<T>()
                })
                .collect();
            self.chol.solve_in_place(&mut resid);
            for (x, r) in rhs.iter_mut().zip(resid) {
                *x += r;
            }
        }
    }
}

/// Solves the Step-1 normal equations for every band.
///
/// `window` is `N x bands`, point-major. For each band the coefficients satisfy
/// `(E'DE + 2λ Ex'DEx + 2λ Ey'DEy) c = E'D I + 2λ Ex'D (dx - bx) + 2λ Ey'D (dy - by)`.
/// The system is solved for the deviation from the window-centre value, which
/// the constant coefficient absorbs; constant windows therefore fit exactly.
/// Returns `bands x m` coefficients.
pub fn solve_coefficients<T: Real>(
    sys: &LocalSystem<T>,
    window: &[T],
    lambda: T,
) -> Result<Vec<Vec<T>>> {
    let bands = sys.d.len();
    if window.len() != sys.basis.points() * bands {
        return Err(Error::Dimension(format!(
            "window has {} values, expected {} points x {bands} bands",
            window.len(),
            sys.basis.points()
        )));
    }
    if let Some(index) = window.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let lhs = NormalMatrix::assemble(sys.basis, &sys.weights, lambda)?;
    Ok((0..bands)
        .map(|band| solve_band(sys, &lhs, window, band, bands, lambda))
        .collect())
}

fn solve_band<T: Real>(
    sys: &LocalSystem<T>,
    lhs: &NormalMatrix<T>,
    window: &[T],
    band: usize,
    bands: usize,
    lambda: T,
) -> Vec<T> {
    let basis = sys.basis;
    let m = lhs.m;
    let two_lambda = T::lit(2.0) * lambda;
    let offset = window[basis.center_index() * bands + band];
    let mut rhs = vec![T::zero(); m];
    for i in 0..basis.points() {
        let w = sys.weights[i];
        let fid = w * (window[i * bands + band] - offset);
        let [dx, dy] = sys.d[band][i];
        let [bx, by] = sys.b[band][i];
        let gx = w * two_lambda * (dx - bx);
        let gy = w * two_lambda * (dy - by);
        for l in 0..m {
            rhs[l] += basis.e[i * m + l] * fid + basis.ex[i * m + l] * gx + basis.ey[i * m + l] * gy;
        }
    }
    lhs.solve_in_place(&mut rhs);
    rhs[0] += offset;
    rhs
}

/// Values and gradients of a fitted polynomial at the window points, `N x bands` each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFit<T> {
    pub values: Vec<T>,
    pub grad_x: Vec<T>,
    pub grad_y: Vec<T>,
}

impl<T: Real> WindowFit<T> {
    pub fn evaluate(basis: &Basis<T>, coeffs: &[Vec<T>]) -> Self {
        let bands = coeffs.len();
        let n = basis.points();
        let m = basis.len();
        let mut fit = Self {
            values: vec![T::zero(); n * bands],
            grad_x: vec![T::zero(); n * bands],
            grad_y: vec![T::zero(); n * bands],
        };
        for i in 0..n {
            for (band, c) in coeffs.iter().enumerate() {
                let (mut v, mut gx, mut gy) = (T::zero(), T::zero(), T::zero());
                for l in 0..m {
                    v += basis.e[i * m + l] * c[l];
                    gx += basis.ex[i * m + l] * c[l];
                    gy += basis.ey[i * m + l] * c[l];
                }
                fit.values[i * bands + band] = v;
                fit.grad_x[i * bands + band] = gx;
                fit.grad_y[i * bands + band] = gy;
            }
        }
        fit
    }
}

/// Local smoothing energy `sum_i w_i |p(x_i) - I(x_i)|^2 + lambda sum_i |grad p(x_i)|_1`,
/// summed over bands.
pub fn local_objective<T: Real>(weights: &[T], window: &[T], fit: &WindowFit<T>, lambda: T) -> T {
    let bands = window.len() / weights.len();
    let mut fidelity = T::zero();
    let mut tv = T::zero();
    for (i, &w) in weights.iter().enumerate() {
        for band in 0..bands {
            let k = i * bands + band;
            let r = fit.values[k] - window[k];
            fidelity += w * r * r;
            tv += fit.grad_x[k].abs() + fit.grad_y[k].abs();
        }
    }
    fidelity + lambda * tv
}

/// Result of smoothing one pixel, with the first and last fits for diagnostics.
#[derive(Debug, Clone)]
pub struct PixelSmoothing<T> {
    /// Structural spectrum `p(x)`.
    pub spectrum: Vec<T>,
    pub iterations: usize,
    pub weights: Vec<T>,
    /// Window values, `N x bands`.
    pub window: Vec<T>,
    pub first: WindowFit<T>,
    pub last: WindowFit<T>,
}

/// Precomputed per-image state for the pixel sweep.
pub struct Smoother<'a, T> {
    img: Interleaved<'a, T>,
    basis: Basis<T>,
    kernel: Vec<(isize, isize, T)>,
    params: SmoothParams,
}

impl<'a, T: Real> Smoother<'a, T> {
    pub(crate) fn new(img: Interleaved<'a, T>, params: &SmoothParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            basis: build_basis(params.window_radius, params.degree),
            kernel: patch_kernel(params),
            img,
            params: params.clone(),
        })
    }

    fn window_values(&self, row: usize, col: usize) -> Vec<T> {
        let bands = self.img.bands;
        let mut out = Vec::with_capacity(self.basis.points() * bands);
        for &(dy, dx) in &self.basis.offsets {
            out.extend_from_slice(self.img.spectrum_at(row as isize + dy, col as isize + dx));
        }
        out
    }

    pub fn smooth(&self, row: usize, col: usize) -> Result<PixelSmoothing<T>> {
        let bands = self.img.bands;
        let inv_h2 = T::lit(1.0 / (self.params.h0 * self.params.h0));
        let weights = window_weights(
            &self.img,
            row,
            col,
            &self.basis.offsets,
            &self.kernel,
            inv_h2,
        );
        let window = self.window_values(row, col);
        let lambda = T::lit(self.params.lambda);
        let mut sys = LocalSystem::new(&self.basis, weights, bands);
        let lhs = NormalMatrix::assemble(&self.basis, &sys.weights, lambda)?;
        let solve = |sys: &LocalSystem<T>| -> Vec<Vec<T>> {
            (0..bands)
                .map(|band| solve_band(sys, &lhs, &window, band, bands, lambda))
                .collect()
        };

        let mut coeffs = solve(&sys);
        let mut fit = WindowFit::evaluate(&self.basis, &coeffs);
        let first = fit.clone();
        let mut iterations = 1;
        // Without a TV term the first weighted fit is final.
        if lambda > T::zero() {
            let threshold = T::one() / lambda;
            let tol = T::lit(self.params.tol);
            loop {
                for band in 0..bands {
                    for i in 0..self.basis.points() {
                        let k = i * bands + band;
                        let g = [fit.grad_x[k], fit.grad_y[k]];
                        let b = sys.b[band][i];
                        let d = shrink([g[0] + b[0], g[1] + b[1]], threshold);
                        sys.d[band][i] = d;
                        sys.b[band][i] = [b[0] + g[0] - d[0], b[1] + g[1] - d[1]];
                    }
                }
                if iterations >= self.params.max_iters {
                    break;
                }
                coeffs = solve(&sys);
                let next = WindowFit::evaluate(&self.basis, &coeffs);
                iterations += 1;
                let change = relative_change(&fit.values, &next.values);
                fit = next;
                if change < tol {
                    break;
                }
            }
        }
        Ok(PixelSmoothing {
            spectrum: coeffs.iter().map(|c| c[0]).collect(),
            iterations,
            weights: sys.weights,
            window,
            first,
            last: fit,
        })
    }
}

fn relative_change<T: Real>(prev: &[T], next: &[T]) -> T {
    let mut diff = T::zero();
    let mut norm = T::zero();
    for (&a, &b) in prev.iter().zip(next) {
        diff += (b - a) * (b - a);
        norm += a * a;
    }
    if norm > T::zero() {
        (diff / norm).sqrt()
    } else {
        diff.sqrt()
    }
}

/// Smooths a single pixel and returns its structural spectrum with diagnostics.
pub fn smooth_pixel<T: Real>(
    cube: &HsiCube<T>,
    center: (usize, usize),
    params: &SmoothParams,
) -> Result<PixelSmoothing<T>> {
    if center.0 >= cube.height() || center.1 >= cube.width() {
        return Err(Error::Dimension(format!(
            "pixel {center:?} outside {}x{} image",
            cube.height(),
            cube.width()
        )));
    }
    let pm = cube.to_pixel_major();
    let img = Interleaved::new(cube.height(), cube.width(), cube.bands(), &pm);
    Smoother::new(img, params)?.smooth(center.0, center.1)
}

/// Smooths every pixel, giving the initial structural profile (same shape as the input).
pub fn initial_profile<T: Real>(cube: &HsiCube<T>, params: &SmoothParams) -> Result<HsiCube<T>> {
    let pm = cube.to_pixel_major();
    let img = Interleaved::new(cube.height(), cube.width(), cube.bands(), &pm);
    let smoother = Smoother::new(img, params)?;
    let width = cube.width();
    let spectra: Vec<Vec<T>> = (0..cube.pixels())
        .into_par_iter()
        .map(|p| smoother.smooth(p / width, p % width).map(|s| s.spectrum))
        .collect::<Result<_>>()?;
    let flat: Vec<T> = spectra.into_iter().flatten().collect();
    HsiCube::from_pixel_major(cube.height(), cube.width(), cube.bands(), &flat)
}

/// Initial structural profile together with its KPCA compaction.
#[derive(Debug, Clone)]
pub struct StructuralProfile<T> {
    pub initial: HsiCube<T>,
    /// `K`-band structural profile used as classification features.
    pub features: HsiCube<T>,
    pub model: KpcaModel<T>,
}

/// Smooths every pixel, then keeps `components` kernel principal components.
pub fn extract_sp<T: Real>(
    cube: &HsiCube<T>,
    params: &SmoothParams,
    components: usize,
    kpca_params: &KpcaParams,
    seed: u64,
) -> Result<StructuralProfile<T>> {
    params.validate()?;
    if components > cube.bands() {
        return Err(Error::param(
            "K",
            format!("{components} components exceed {} bands", cube.bands()),
        ));
    }
    if components > cube.pixels() {
        return Err(Error::param(
            "K",
            format!("{components} components exceed {} pixels", cube.pixels()),
        ));
    }
    let initial = initial_profile(cube, params)?;
    let samples = initial.to_pixel_major();
    let model = kpca::fit_kpca(&samples, initial.bands(), components, kpca_params, seed)?;
    let scores = kpca::transform(&model, &samples)?;
    let features =
        HsiCube::from_pixel_major(cube.height(), cube.width(), components, &scores)?;
    Ok(StructuralProfile {
        initial,
        features,
        model,
    })
}
