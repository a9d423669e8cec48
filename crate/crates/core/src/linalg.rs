//! Dense and iterative linear algebra used by the smoothing, KPCA and
//! random-walker stages. Matrices are square, row-major `Vec<T>`.

use crate::error::{Error, Result};
use crate::scalar::{dot, Real};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factors `a`; returns `None` when a pivot falls to `min_pivot` or below.
    pub fn factor(a: &[T], n: usize, min_pivot: T) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > min_pivot) {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Some(Self { n, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
/// `vectors` is row-major `n x k`: column `j` is the eigenvector of `values[j]`.
#[derive(Debug, Clone)]
pub struct EigenPairs<T> {
    pub values: Vec<T>,
    pub vectors: Vec<T>,
    pub n: usize,
}

impl<T: Real> EigenPairs<T> {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, j: usize) -> Vec<T> {
        let k = self.k();
        (0..self.n).map(|i| self.vectors[i * k + j]).collect()
    }
}

/// Full eigendecomposition by Householder tridiagonalisation and implicit QL.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> EigenPairs<T> {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    if n == 0 {
        return EigenPairs {
            values: vec![],
            vectors: vec![],
            n,
        };
    }
    let mut v = a.to_vec();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e, n);
    tridiagonal_ql(&mut d, &mut e, &mut v, n);
    sorted_desc(d, &v, n, n)
}

fn sorted_desc<T: Real>(d: Vec<T>, v: &[T], n: usize, k: usize) -> EigenPairs<T> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(k);
    let cols = d.len();
    let mut vectors = vec![T::zero(); n * k];
    for (jj, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * k + jj] = v[i * cols + j];
        }
    }
    EigenPairs {
        values: order.iter().map(|&j| d[j]).collect(),
        vectors,
        n,
    }
}

/// Householder reduction to tridiagonal form; `v` receives the orthogonal transform.
fn tridiagonalize<T: Real>(v: &mut [T], d: &mut [T], e: &mut [T], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = T::zero();
                v[at(j, i)] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = T::zero();
    }
    v[at(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

/// Implicit QL on a symmetric tridiagonal matrix (diagonal `d`, subdiagonal in
/// `e[1..]`), accumulating rotations into the columns of `v` (row-major `n x n`).
fn tridiagonal_ql<T: Real>(d: &mut [T], e: &mut [T], v: &mut [T], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let two = T::lit(2.0);
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk1 = v[at(k, i + 1)];
                        let vk = v[at(k, i)];
                        v[at(k, i + 1)] = s * vk + c * vk1;
                        v[at(k, i)] = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter >= 60 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
}

/// Matrices up to this order go straight to the dense solver in [`top_eigenpairs`].
pub const DENSE_EIGEN_LIMIT: usize = 512;

/// Leading `k` eigenpairs of a symmetric matrix.
///
/// Small matrices use the full dense decomposition. Larger ones use Lanczos
/// with full reorthogonalisation from a fixed start vector, extending the
/// Krylov basis until the Ritz residuals of the leading `k` pairs drop below
/// `sqrt(eps) / 100` relative to the largest Ritz value.
pub fn top_eigenpairs<T: Real>(a: &[T], n: usize, k: usize) -> EigenPairs<T> {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let k = k.min(n);
    if n <= DENSE_EIGEN_LIMIT {
        let mut full = symmetric_eigen(a, n);
        truncate_pairs(&mut full, k);
        return full;
    }
    lanczos(a, n, k)
}

fn truncate_pairs<T: Real>(pairs: &mut EigenPairs<T>, k: usize) {
    let full_k = pairs.k();
    let n = pairs.n;
    let mut vectors = vec![T::zero(); n * k];
    for i in 0..n {
        vectors[i * k..(i + 1) * k].copy_from_slice(&pairs.vectors[i * full_k..i * full_k + k]);
    }
    pairs.values.truncate(k);
    pairs.vectors = vectors;
}

fn matvec<T: Real>(a: &[T], n: usize, x: &[T], out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = dot(&a[i * n..(i + 1) * n], x);
    }
}

fn lanczos<T: Real>(a: &[T], n: usize, k: usize) -> EigenPairs<T> {
    let tol = T::epsilon().sqrt() * T::lit(1e-2);
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut alphas: Vec<T> = Vec::new();
    let mut betas: Vec<T> = Vec::new();
    let mut target = n.min((2 * k + 20).max(40));
    let mut restart_col = 0usize;

    let mut q: Vec<T> = (0..n)
        .map(|i| T::lit(0.5 + ((i.wrapping_mul(2_654_435_761)) % 1000) as f64 / 1000.0))
        .collect();
    normalize(&mut q);
    let mut w = vec![T::zero(); n];

    loop {
        while basis.len() < target {
            matvec(a, n, &q, &mut w);
            let alpha = dot(&w, &q);
            alphas.push(alpha);
            basis.push(q.clone());
            // Full reorthogonalisation, applied twice for stability.
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    for (wi, &bi) in w.iter_mut().zip(b) {
                        *wi -= c * bi;
                    }
                }
            }
            let mut beta = dot(&w, &w).sqrt();
            if basis.len() == n {
                betas.push(T::zero());
                break;
            }
            if beta <= T::epsilon() * T::lit(n as f64) * alpha.abs().max(T::one()) {
                // Invariant subspace reached: continue from a fresh direction.
                beta = T::zero();
                let mut fresh = vec![T::zero(); n];
                while fresh.iter().all(|&x| x == T::zero()) && restart_col < n {
                    fresh = vec![T::zero(); n];
                    fresh[restart_col] = T::one();
                    restart_col += 1;
                    for _ in 0..2 {
                        for b in &basis {
                            let c = dot(&fresh, b);
                            for (fi, &bi) in fresh.iter_mut().zip(b) {
                                *fi -= c * bi;
                            }
                        }
                    }
                    if dot(&fresh, &fresh).sqrt() < T::lit(1e-8) {
                        fresh = vec![T::zero(); n];
                    }
                }
                normalize(&mut fresh);
                q = fresh;
            } else {
                q = w.iter().map(|&x| x / beta).collect();
            }
            betas.push(beta);
        }

        let m = basis.len();
        let mut d = alphas.clone();
        let mut e = vec![T::zero(); m];
        e[1..m].copy_from_slice(&betas[..m - 1]);
        let mut s = vec![T::zero(); m * m];
        for i in 0..m {
            s[i * m + i] = T::one();
        }
        tridiagonal_ql(&mut d, &mut e, &mut s, m);
        let ritz = sorted_desc(d, &s, m, k.min(m));
        let scale = ritz.values.first().map(|v| v.abs()).unwrap_or(T::zero());
        let last_beta = betas[m - 1];
        let converged = (0..ritz.k())
            .all(|j| (last_beta * ritz.vectors[(m - 1) * ritz.k() + j]).abs() <= tol * scale);
        if converged || m == n {
            let kk = ritz.k();
            let mut vectors = vec![T::zero(); n * kk];
            for j in 0..kk {
                for (r, b) in basis.iter().enumerate() {
                    let coef = ritz.vectors[r * kk + j];
                    for i in 0..n {
                        vectors[i * kk + j] += coef * b[i];
                    }
                }
            }
            return EigenPairs {
                values: ritz.values,
                vectors,
                n,
            };
        }
        target = n.min(target * 2);
    }
}

fn normalize<T: Real>(v: &mut [T]) {
    let norm = dot(v, v).sqrt();
    if norm > T::zero() {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`.
    pub relative_residual: f64,
    /// Preconditioned residual norms `sqrt(r^T M^{-1} r)`, one per iteration.
    pub residual_history: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradient for an SPD operator.
///
/// `apply(x, out)` must write `A x` into `out`; `diag` is the diagonal of `A`.
pub fn conjugate_gradient<T, F>(
    apply: F,
    diag: &[T],
    b: &[T],
    tol: f64,
    max_iters: usize,
) -> Result<CgSolution<T>>
where
    T: Real,
    F: Fn(&[T], &mut [T]),
{
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == T::zero() {
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
            residual_history: vec![],
        });
    }
    let inv_diag: Vec<T> = diag
        .iter()
        .map(|&d| if d > T::zero() { T::one() / d } else { T::one() })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &m)| ri * m).collect();
    let mut p = z.clone();
    let mut ap = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let mut history = vec![rz.as_f64().sqrt()];
    let tol_t = T::lit(tol);

    for iter in 1..=max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::Degenerate(
                "conjugate gradient met a non-positive curvature direction".into(),
            ));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        history.push(rz_next.as_f64().sqrt());
        if rel <= tol_t {
            return Ok(CgSolution {
                x,
                iterations: iter,
                relative_residual: rel.as_f64(),
                residual_history: history,
            });
        }
        let ratio = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + ratio * p[i];
        }
        rz = rz_next;
    }
    let rel = dot(&r, &r).sqrt() / b_norm;
    Err(Error::NoConvergence {
        solver: "conjugate gradient",
        iters: max_iters,
        residual: rel.as_f64(),
    })
}
