//! Gaussian-kernel SVM with Platt-calibrated one-vs-rest probabilities.
//!
//! Binary machines are trained by SMO on the dual
//! `min ½ αᵀQα − Σα  s.t. 0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = y_i y_j k(x_i, x_j)`
//! and `k(a, b) = exp(−γ‖a − b‖²)`. Each step updates the maximal violating
//! pair, so runs are deterministic.
//!
//! Multi-class training selects `(γ, C)` by stratified k-fold cross-validation
//! and fits one sigmoid per task on the out-of-fold decision values.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{parse_key_values, raw_path, write_file};
use crate::raster::argmax;
use crate::scalar::{sq_dist, Real};

/// Probabilities below this are treated as zero when normalizing a pixel.
pub const MIN_PROB_MASS: f64 = 1e-12;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    /// Stop once the maximal KKT violation drops to this value.
    pub tol: f64,
    /// Iteration budget, in multiples of the sample count.
    pub max_passes: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_passes: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    /// Largest KKT violation `max_{I_up} −y G − min_{I_low} −y G` at exit.
    pub max_violation: T,
    pub converged: bool,
}

impl<T: Real> DualSolution<T> {
    /// Dual objective `½ αᵀQα − Σα` for a given kernel matrix.
    pub fn objective(&self, kernel: &[T], labels: &[i8]) -> T {
        let n = self.alpha.len();
        let mut quad = T::zero();
        for i in 0..n {
            if self.alpha[i] == T::zero() {
                continue;
            }
            for j in 0..n {
                let yy = T::lit(f64::from(labels[i] * labels[j]));
                quad += self.alpha[i] * self.alpha[j] * yy * kernel[i * n + j];
            }
        }
        T::lit(0.5) * quad - self.alpha.iter().copied().sum::<T>()
    }
}

pub fn gaussian_kernel<T: Real>(a: &[T], b: &[T], gamma: T) -> T {
    (-gamma * sq_dist(a, b)).exp()
}

fn kernel_matrix<T: Real>(features: &[T], dim: usize, gamma: T) -> Vec<T> {
    let n = features.len() / dim;
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        k[i * n + i] = T::one();
        let xi = &features[i * dim..(i + 1) * dim];
        for j in 0..i {
            let v = gaussian_kernel(xi, &features[j * dim..(j + 1) * dim], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn check_features<T: Real>(features: &[T], dim: usize) -> Result<usize> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "{} feature values do not split into rows of {dim}",
            features.len()
        )));
    }
    if let Some(index) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(features.len() / dim)
}

fn check_binary_labels(labels: &[i8], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::param("labels", "binary labels must be +1 or -1"));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::Degenerate(
            "binary training needs samples of both signs".into(),
        ));
    }
    Ok(())
}

/// Solves the SVM dual for a precomputed `n × n` kernel matrix.
pub fn solve_dual<T: Real>(
    kernel: &[T],
    labels: &[i8],
    c: T,
    params: &SmoParams,
) -> Result<DualSolution<T>> {
    let n = labels.len();
    if kernel.len() != n * n {
        return Err(Error::SizeMismatch {
            expected: n * n,
            found: kernel.len(),
        });
    }
    check_binary_labels(labels, n)?;
    if !(c > T::zero()) || !c.is_finite() {
        return Err(Error::param("penalty", "must be positive and finite"));
    }
    if !(params.tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let y: Vec<T> = labels.iter().map(|&v| T::lit(f64::from(v))).collect();
    let tol = T::lit(params.tol);
    let tau = T::lit(TAU);
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];

    let mut alpha = vec![T::zero(); n];
    let mut grad = vec![-T::one(); n];
    let max_iters = params.max_passes.max(1).saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut violation;
    loop {
        // Maximal violating pair: i maximizes −yG over I_up, j minimizes over I_low.
        let mut up: Option<(usize, T)> = None;
        let mut low: Option<(usize, T)> = None;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > T::zero() && alpha[t] < c) || (y[t] < T::zero() && alpha[t] > T::zero());
            let in_low = (y[t] > T::zero() && alpha[t] > T::zero()) || (y[t] < T::zero() && alpha[t] < c);
            if in_up && up.is_none_or(|(_, best)| v > best) {
                up = Some((t, v));
            }
            if in_low && low.is_none_or(|(_, best)| v < best) {
                low = Some((t, v));
            }
        }
        let (Some((i, m_up)), Some((j, m_low))) = (up, low) else {
            violation = T::zero();
            break;
        };
        violation = m_up - m_low;
        if violation <= tol || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + T::lit(2.0) * q(i, j);
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > T::zero() {
                if aj < T::zero() {
                    aj = T::zero();
                    ai = diff;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = -diff;
            }
            if diff > T::zero() {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - T::lit(2.0) * q(i, j);
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < T::zero() {
                aj = T::zero();
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Bias: average over free vectors, else the midpoint of the feasible interval.
    let mut free_sum = T::zero();
    let mut free = 0usize;
    let mut ub = T::infinity();
    let mut lb = T::neg_infinity();
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= T::zero();
        if at_upper {
            if y[t] < T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / T::of_usize(free)
    } else {
        (ub + lb) * T::lit(0.5)
    };

    Ok(DualSolution {
        alpha,
        bias: -rho,
        iterations,
        max_violation: violation,
        converged: violation <= tol,
    })
}

/// Trains one binary machine on `n × dim` row-major features with ±1 labels.
pub fn smo_train_binary<T: Real>(
    features: &[T],
    dim: usize,
    labels: &[i8],
    c: T,
    gamma: T,
    params: &SmoParams,
) -> Result<DualSolution<T>> {
    let n = check_features(features, dim)?;
    check_binary_labels(labels, n)?;
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(Error::param("kernel_width", "must be positive and finite"));
    }
    solve_dual(&kernel_matrix(features, dim, gamma), labels, c, params)
}

/// Decision value `Σ α_i y_i k(x_i, x) + b` of a dual solution.
pub fn decision_value<T: Real>(
    solution: &DualSolution<T>,
    features: &[T],
    dim: usize,
    labels: &[i8],
    gamma: T,
    x: &[T],
) -> T {
    let mut f = solution.bias;
    for (i, &a) in solution.alpha.iter().enumerate() {
        if a > T::zero() {
            let k = gaussian_kernel(&features[i * dim..(i + 1) * dim], x, gamma);
            f += a * T::lit(f64::from(labels[i])) * k;
        }
    }
    f
}

/// Sigmoid `P(y = +1 | f) = 1 / (1 + exp(A f + B))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PlattFit {
    pub fn probability(&self, f: f64) -> f64 {
        sigmoid_positive(self.a * f + self.b)
    }
}

/// `1 / (1 + exp(z))`, evaluated without overflow.
fn sigmoid_positive(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

const PLATT_MAX_ITERS: usize = 100;

/// Negative log-likelihood of the smoothed targets under `(a, b)`.
pub fn platt_objective(decision: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    decision
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = f * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn platt_targets(positive: &[bool]) -> Vec<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    positive.iter().map(|&p| if p { hi } else { lo }).collect()
}

/// Fits Platt's sigmoid by regularized maximum likelihood (Newton with
/// backtracking). A fit that does not converge in 100 iterations is
/// returned with its last iterate and `converged == false`.
pub fn platt_calibrate(decision: &[f64], positive: &[bool]) -> Result<PlattFit> {
    if decision.len() != positive.len() {
        return Err(Error::SizeMismatch {
            expected: decision.len(),
            found: positive.len(),
        });
    }
    if let Some(index) = decision.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return Err(Error::Degenerate(
            "calibration needs both classes present".into(),
        ));
    }
    let n_neg = positive.len() - n_pos;
    let targets = platt_targets(positive);

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = platt_objective(decision, &targets, a, b);
    let sigma = 1e-12;
    for it in 0..PLATT_MAX_ITERS {
        let (mut h11, mut h22, mut h21) = (sigma, sigma, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &t) in decision.iter().zip(&targets) {
            let p = sigmoid_positive(f * a + b);
            let d2 = p * (1.0 - p);
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            return Ok(PlattFit {
                a,
                b,
                iterations: it,
                converged: true,
            });
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_objective(decision, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            return Ok(PlattFit {
                a,
                b,
                iterations: it + 1,
                converged: false,
            });
        }
    }
    Ok(PlattFit {
        a,
        b,
        iterations: PLATT_MAX_ITERS,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainGrid {
    /// Values of γ in `exp(−γ‖a − b‖²)`.
    pub kernel_widths: Vec<f64>,
    pub penalties: Vec<f64>,
    pub folds: usize,
    pub smo: SmoParams,
}

impl Default for TrainGrid {
    fn default() -> Self {
        Self {
            kernel_widths: (-5..=5).map(|e| 2f64.powi(e)).collect(),
            penalties: (-2..=4).map(|e| 10f64.powi(e)).collect(),
            folds: 5,
            smo: SmoParams::default(),
        }
    }
}

impl TrainGrid {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.kernel_widths) {
            return Err(Error::param("kernel_widths", "need at least one positive value"));
        }
        if !positive(&self.penalties) {
            return Err(Error::param("penalties", "need at least one positive value"));
        }
        if self.folds < 2 {
            return Err(Error::param("folds", "must be at least 2"));
        }
        if !(self.smo.tol > 0.0) || self.smo.max_passes == 0 {
            return Err(Error::param("smo", "tol and max_passes must be positive"));
        }
        Ok(())
    }
}

/// One one-vs-rest machine. `support` indexes rows of the classifier's
/// shared vector pool.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTask<T> {
    pub support: Vec<usize>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<T>,
    pub bias: T,
    pub platt: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier<T> {
    /// Class labels, one per task, in column order of the probabilities.
    pub classes: Vec<u32>,
    pub dim: usize,
    pub gamma: T,
    pub penalty: T,
    /// Row-major pool of support vectors shared by the tasks.
    pub vectors: Vec<T>,
    pub tasks: Vec<BinaryTask<T>>,
    /// Mean fold accuracy of the selected pair.
    pub cv_accuracy: f64,
}

impl<T: Real> TrainedClassifier<T> {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_vectors(&self) -> usize {
        self.vectors.len() / self.dim
    }

    /// Raw decision values of every task for one sample.
    pub fn decision_values(&self, x: &[T], kernel_buf: &mut Vec<T>, out: &mut [T]) {
        kernel_buf.clear();
        kernel_buf.extend(
            self.vectors
                .chunks_exact(self.dim)
                .map(|v| gaussian_kernel(v, x, self.gamma)),
        );
        for (task, o) in self.tasks.iter().zip(out.iter_mut()) {
            let mut f = task.bias;
            for (&s, &cf) in task.support.iter().zip(&task.coef) {
                f += cf * kernel_buf[s];
            }
            *o = f;
        }
    }
}

/// Lexicographic order on feature rows, then on label.
fn canonical_cmp<T: Real>(features: &[T], dim: usize, labels: &[u32], i: usize, j: usize) -> Ordering {
    let a = &features[i * dim..(i + 1) * dim];
    let b = &features[j * dim..(j + 1) * dim];
    a.iter()
        .zip(b)
        .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(labels[i].cmp(&labels[j]))
}

/// Seeded stratified fold assignment.
///
/// Samples are put in a canonical order and identical (features, label)
/// rows are grouped, so the split depends neither on input order nor on
/// exact duplication. The groups are shuffled with the seed, then dealt
/// round-robin within each class.
pub fn assign_folds<T: Real>(
    features: &[T],
    dim: usize,
    labels: &[u32],
    folds: usize,
    seed: u64,
) -> Vec<usize> {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| canonical_cmp(features, dim, labels, i, j));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if canonical_cmp(features, dim, labels, g[0], i).is_eq() => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let mut dealt: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    let mut fold_of = vec![0; n];
    for g in &groups {
        let counter = dealt.entry(labels[g[0]]).or_insert(0);
        for &i in g {
            fold_of[i] = *counter % folds;
        }
        *counter += 1;
    }
    fold_of
}

fn sub_kernel<T: Real>(kernel: &[T], n: usize, rows: &[usize], cols: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        out.extend(cols.iter().map(|&c| kernel[r * n + c]));
    }
    out
}

fn task_labels(labels: &[u32], rows: &[usize], class: u32) -> Vec<i8> {
    rows.iter()
        .map(|&i| if labels[i] == class { 1 } else { -1 })
        .collect()
}

/// Decision values on `test` rows for every class task trained on `train` rows.
#[allow(clippy::too_many_arguments)]
fn fold_decisions<T: Real>(
    kernel: &[T],
    n: usize,
    labels: &[u32],
    classes: &[u32],
    train: &[usize],
    test: &[usize],
    c: T,
    smo: &SmoParams,
) -> Result<Vec<T>> {
    let k_train = sub_kernel(kernel, n, train, train);
    let k_cross = sub_kernel(kernel, n, test, train);
    let t = classes.len();
    let mut out = vec![T::zero(); test.len() * t];
    for (ti, &class) in classes.iter().enumerate() {
        let y = task_labels(labels, train, class);
        let sol = solve_dual(&k_train, &y, c, smo)?;
        for (r, row) in k_cross.chunks_exact(train.len()).enumerate() {
            let mut f = sol.bias;
            for (i, &a) in sol.alpha.iter().enumerate() {
                if a > T::zero() {
                    f += a * T::lit(f64::from(y[i])) * row[i];
                }
            }
            out[r * t + ti] = f;
        }
    }
    Ok(out)
}

struct CellResult<T> {
    accuracy: f64,
    /// Out-of-fold decision values, `n × T`.
    decisions: Vec<T>,
}

/// Trains the one-vs-rest classifier on row-major `features` with labels in
/// `1..=num_classes`; every class must be present.
pub fn train<T: Real>(
    features: &[T],
    dim: usize,
    labels: &[u32],
    num_classes: u32,
    grid: &TrainGrid,
    seed: u64,
) -> Result<TrainedClassifier<T>> {
    grid.validate()?;
    let n = check_features(features, dim)?;
    if labels.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if num_classes < 2 {
        return Err(Error::param("num_classes", "need at least two classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > num_classes) {
        return Err(Error::param(
            "labels",
            format!("training label {bad} outside 1..={num_classes}"),
        ));
    }
    let classes: Vec<u32> = (1..=num_classes).collect();
    for &class in &classes {
        let found = labels.iter().filter(|&&l| l == class).count();
        if found < grid.folds {
            return Err(Error::TooFewSamples {
                class,
                found,
                needed: grid.folds,
            });
        }
    }

    // Work in canonical sample order so the approximate SMO solutions, and
    // hence the model, do not depend on how the caller ordered the samples.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| canonical_cmp(features, dim, labels, i, j));
    let features: Vec<T> = order
        .iter()
        .flat_map(|&i| features[i * dim..(i + 1) * dim].iter().copied())
        .collect();
    let labels: Vec<u32> = order.iter().map(|&i| labels[i]).collect();
    let (features, labels) = (&features[..], &labels[..]);

    // Exact duplicates would act as a larger penalty on their point, so each
    // SVM fit sees one copy of every distinct (features, label) row. Scoring
    // and calibration still use every sample.
    let distinct: Vec<usize> = (0..n)
        .filter(|&i| i == 0 || canonical_cmp(features, dim, labels, i - 1, i).is_ne())
        .collect();
    let fold_of = assign_folds(features, dim, labels, grid.folds, seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..grid.folds)
        .map(|f| {
            let test = (0..n).filter(|&i| fold_of[i] == f).collect();
            let train = distinct.iter().copied().filter(|&i| fold_of[i] != f).collect();
            (train, test)
        })
        .collect();
    for (train_rows, _) in &splits {
        for &class in &classes {
            if !train_rows.iter().any(|&i| labels[i] == class) {
                return Err(Error::Degenerate(format!(
                    "class {class} has too few distinct samples for {} folds",
                    grid.folds
                )));
            }
        }
    }

    let kernels: Vec<Vec<T>> = grid
        .kernel_widths
        .par_iter()
        .map(|&g| kernel_matrix(features, dim, T::lit(g)))
        .collect();

    let t = classes.len();
    let cells: Vec<(usize, usize, usize)> = (0..grid.penalties.len())
        .flat_map(|ci| {
            (0..grid.kernel_widths.len())
                .flat_map(move |gi| (0..grid.folds).map(move |f| (ci, gi, f)))
        })
        .collect();
    let fold_results: Vec<Vec<T>> = cells
        .par_iter()
        .map(|&(ci, gi, f)| {
            let (train_rows, test_rows) = &splits[f];
            fold_decisions(
                &kernels[gi],
                n,
                labels,
                &classes,
                train_rows,
                test_rows,
                T::lit(grid.penalties[ci]),
                &grid.smo,
            )
        })
        .collect::<Result<_>>()?;

    // Fixed-order reduction: C ascending, then γ ascending; only a strictly
    // better accuracy replaces the incumbent.
    let mut best: Option<(usize, usize, CellResult<T>)> = None;
    for ci in 0..grid.penalties.len() {
        for gi in 0..grid.kernel_widths.len() {
            let mut decisions = vec![T::zero(); n * t];
            let mut acc_sum = 0.0;
            for f in 0..grid.folds {
                let idx = (ci * grid.kernel_widths.len() + gi) * grid.folds + f;
                let block = &fold_results[idx];
                let test_rows = &splits[f].1;
                let mut correct = 0usize;
                for (r, &i) in test_rows.iter().enumerate() {
                    let row = &block[r * t..(r + 1) * t];
                    decisions[i * t..(i + 1) * t].copy_from_slice(row);
                    if classes[argmax(row)] == labels[i] {
                        correct += 1;
                    }
                }
                acc_sum += correct as f64 / test_rows.len() as f64;
            }
            let accuracy = acc_sum / grid.folds as f64;
            if best.as_ref().is_none_or(|(_, _, b)| accuracy > b.accuracy) {
                best = Some((ci, gi, CellResult { accuracy, decisions }));
            }
        }
    }
    let (ci, gi, cell) = best.expect("grid is nonempty");
    let gamma = T::lit(grid.kernel_widths[gi]);
    let penalty = T::lit(grid.penalties[ci]);

    // Final refit on all samples with the winning pair.
    let kernel = sub_kernel(&kernels[gi], n, &distinct, &distinct);
    let solutions: Vec<(Vec<i8>, DualSolution<T>)> = classes
        .par_iter()
        .map(|&class| {
            let y = task_labels(labels, &distinct, class);
            solve_dual(&kernel, &y, penalty, &grid.smo).map(|s| (y, s))
        })
        .collect::<Result<_>>()?;

    let mut pool_index = vec![usize::MAX; n];
    let mut vectors = Vec::new();
    let mut pooled = 0;
    let mut tasks = Vec::with_capacity(t);
    for (ti, (y, sol)) in solutions.iter().enumerate() {
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for ((&i, &a), &yi) in distinct.iter().zip(&sol.alpha).zip(y) {
            if a > T::zero() {
                if pool_index[i] == usize::MAX {
                    pool_index[i] = pooled;
                    pooled += 1;
                    vectors.extend_from_slice(&features[i * dim..(i + 1) * dim]);
                }
                support.push(pool_index[i]);
                coef.push(a * T::lit(f64::from(yi)));
            }
        }
        let oof: Vec<f64> = (0..n).map(|i| cell.decisions[i * t + ti].as_f64()).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == classes[ti]).collect();
        let platt = platt_calibrate(&oof, &positive)?;
        tasks.push(BinaryTask {
            support,
            coef,
            bias: sol.bias,
            platt: (platt.a, platt.b),
        });
    }

    Ok(TrainedClassifier {
        classes,
        dim,
        gamma,
        penalty,
        vectors,
        tasks,
        cv_accuracy: cell.accuracy,
    })
}

/// Normalizes raw per-class probabilities in place; all-negligible rows
/// become uniform.
pub fn normalize_row<T: Real>(row: &mut [T]) {
    let floor = T::lit(MIN_PROB_MASS);
    if row.iter().all(|&p| p < floor) {
        let u = T::one() / T::of_usize(row.len());
        row.iter_mut().for_each(|p| *p = u);
        return;
    }
    let sum: T = row.iter().copied().sum();
    row.iter_mut().for_each(|p| *p /= sum);
}

/// Class probabilities for row-major `features`, returned `p × T`.
pub fn predict_proba<T: Real>(model: &TrainedClassifier<T>, features: &[T]) -> Result<Vec<T>> {
    let dim = model.dim;
    if !features.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "model expects {dim} features per sample, got {} values",
            features.len()
        )));
    }
    if let Some(index) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let t = model.num_classes();
    let p = features.len() / dim;
    let mut out = vec![T::zero(); p * t];
    out.par_chunks_mut(t * 64)
        .zip(features.par_chunks(dim * 64))
        .for_each(|(rows, xs)| {
            let mut buf = Vec::with_capacity(model.num_vectors());
            for (row, x) in rows.chunks_exact_mut(t).zip(xs.chunks_exact(dim)) {
                model.decision_values(x, &mut buf, row);
                for (v, task) in row.iter_mut().zip(&model.tasks) {
                    let (a, b) = task.platt;
                    *v = T::lit(sigmoid_positive(a * v.as_f64() + b));
                }
                normalize_row(row);
            }
        });
    Ok(out)
}

fn encode_f64(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes the model as a text header plus a raw little-endian `float64` blob.
pub fn save_classifier<T: Real>(
    model: &TrainedClassifier<T>,
    header_path: impl AsRef<Path>,
) -> Result<()> {
    let header_path = header_path.as_ref();
    let mut header = String::from("kind=svm\n");
    let classes: Vec<String> = model.classes.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(header, "classes={}", classes.join(","));
    let _ = writeln!(header, "dim={}", model.dim);
    let _ = writeln!(header, "gamma={:e}", model.gamma.as_f64());
    let _ = writeln!(header, "penalty={:e}", model.penalty.as_f64());
    let _ = writeln!(header, "cv_accuracy={:e}", model.cv_accuracy);
    let _ = writeln!(header, "vectors={}", model.num_vectors());
    let counts: Vec<String> = model.tasks.iter().map(|t| t.support.len().to_string()).collect();
    let _ = writeln!(header, "support={}", counts.join(","));
    header.push_str("dtype=float64\nbyteorder=little\n");
    write_file(header_path, header.as_bytes())?;

    let mut blob = encode_f64(model.vectors.iter().map(|v| v.as_f64()));
    for task in &model.tasks {
        blob.extend(encode_f64([task.bias.as_f64(), task.platt.0, task.platt.1]));
        blob.extend(encode_f64(task.support.iter().map(|&s| s as f64)));
        blob.extend(encode_f64(task.coef.iter().map(|c| c.as_f64())));
    }
    write_file(&raw_path(header_path), &blob)
}

pub fn load_classifier<T: Real>(header_path: impl AsRef<Path>) -> Result<TrainedClassifier<T>> {
    let header_path = header_path.as_ref();
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let kv = parse_key_values(header_path, &text)?;
    let bad = |key: &str| Error::format(header_path, format!("missing or malformed {key}"));
    let get = |key: &str| kv.get(key).ok_or_else(|| bad(key));
    if get("kind")? != "svm" {
        return Err(Error::format(header_path, "not an svm model"));
    }
    let list = |key: &str| -> Result<Vec<usize>> {
        get(key)?
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad(key)))
            .collect()
    };
    let num = |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| bad(key)) };
    let classes: Vec<u32> = list("classes")?.into_iter().map(|c| c as u32).collect();
    let support_counts = list("support")?;
    if support_counts.len() != classes.len() {
        return Err(bad("support"));
    }
    let dim = num("dim")? as usize;
    let num_vectors = num("vectors")? as usize;
    if dim == 0 {
        return Err(bad("dim"));
    }

    let raw = raw_path(header_path);
    let bytes = std::fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let expected = num_vectors * dim + support_counts.iter().map(|s| 3 + 2 * s).sum::<usize>();
    if !bytes.len().is_multiple_of(8) || values.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: values.len(),
        });
    }
    let mut at = num_vectors * dim;
    let vectors = values[..at].iter().map(|&v| T::lit(v)).collect();
    let mut tasks = Vec::with_capacity(classes.len());
    for &s in &support_counts {
        let (bias, a, b) = (values[at], values[at + 1], values[at + 2]);
        at += 3;
        let support: Vec<usize> = values[at..at + s].iter().map(|&v| v as usize).collect();
        at += s;
        let coef = values[at..at + s].iter().map(|&v| T::lit(v)).collect();
        at += s;
        if support.iter().any(|&i| i >= num_vectors) {
            return Err(Error::format(header_path, "support index out of range"));
        }
        tasks.push(BinaryTask {
            support,
            coef,
            bias: T::lit(bias),
            platt: (a, b),
        });
    }
    Ok(TrainedClassifier {
        classes,
        dim,
        gamma: T::lit(num("gamma")?),
        penalty: T::lit(num("penalty")?),
        vectors,
        tasks,
        cv_accuracy: num("cv_accuracy")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(per_class: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> (Vec<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per_class {
                x.push(c[0] + spread * rng.random_range(-1.0..1.0));
                x.push(c[1] + spread * rng.random_range(-1.0..1.0));
                y.push(k as u32 + 1);
            }
        }
        (x, y)
    }

    #[test]
    fn two_points_split_at_midpoint() {
        let x = [0.0f64, 0.0, 2.0, 0.0];
        let y = [1i8, -1];
        let sol = smo_train_binary(&x, 2, &y, 1e3, 0.5, &SmoParams::default()).unwrap();
        assert!(sol.alpha.iter().all(|&a| a > 0.0));
        let f = decision_value(&sol, &x, 2, &y, 0.5, &[1.0, 0.0]);
        assert!(f.abs() < 1e-6, "{f}");
    }

    #[test]
    fn separable_blobs_have_no_training_errors() {
        let (x, labels) = blobs(30, &[[0.0, 0.0], [3.0, 3.0]], 1.0, 5);
        let y: Vec<i8> = labels.iter().map(|&l| if l == 1 { 1 } else { -1 }).collect();
        let sol = smo_train_binary(&x, 2, &y, 10.0, 0.5, &SmoParams::default()).unwrap();
        assert!(sol.converged);
        let dual: f64 = sol.alpha.iter().zip(&y).map(|(&a, &v)| a * f64::from(v)).sum();
        assert!(dual.abs() < 1e-10);
        for (i, &yi) in y.iter().enumerate() {
            let f = decision_value(&sol, &x, 2, &y, 0.5, &x[2 * i..2 * i + 2]);
            assert!(f * f64::from(yi) > 0.0);
        }
    }

    #[test]
    fn binary_input_errors() {
        let x = [0.0, 1.0];
        let p = SmoParams::default();
        assert!(smo_train_binary(&x, 1, &[1, 1], 1.0, 1.0, &p).is_err());
        assert!(matches!(
            smo_train_binary(&[0.0, f64::NAN], 1, &[1, -1], 1.0, 1.0, &p),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn platt_saturates_on_separated_values() {
        let f: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }).collect();
        let pos: Vec<bool> = f.iter().map(|&v| v > 0.0).collect();
        let fit = platt_calibrate(&f, &pos).unwrap();
        assert!(fit.a <= 0.0);
        assert!(fit.probability(10.0) >= 0.9);
        assert!(fit.probability(-10.0) <= 0.1);
    }

    #[test]
    fn platt_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pos: Vec<bool> = f.iter().map(|&v| v + rng.random_range(-1.0..1.0) > 0.3).collect();
        let a = platt_calibrate(&f, &pos).unwrap();
        let nf: Vec<f64> = f.iter().map(|v| -v).collect();
        let npos: Vec<bool> = pos.iter().map(|p| !p).collect();
        let b = platt_calibrate(&nf, &npos).unwrap();
        assert!((a.a - b.a).abs() < 1e-6 && (a.b + b.b).abs() < 1e-6, "{a:?} {b:?}");
    }

    #[test]
    fn folds_are_stratified_and_order_free() {
        let (x, y) = blobs(12, &[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]], 1.0, 1);
        let folds = assign_folds(&x, 2, &y, 5, 9);
        for class in 1..=3 {
            let mut per = [0usize; 5];
            for (i, &l) in y.iter().enumerate() {
                if l == class {
                    per[folds[i]] += 1;
                }
            }
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        // Reversing the sample order assigns each sample the same fold.
        let n = y.len();
        let rx: Vec<f64> = (0..n).rev().flat_map(|i| [x[2 * i], x[2 * i + 1]]).collect();
        let ry: Vec<u32> = y.iter().rev().copied().collect();
        let rfolds = assign_folds(&rx, 2, &ry, 5, 9);
        for i in 0..n {
            assert_eq!(folds[i], rfolds[n - 1 - i]);
        }
    }

    #[test]
    fn train_and_predict_three_blobs() {
        let (x, y) = blobs(15, &[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]], 1.0, 2);
        let model = train(&x, 2, &y, 3, &TrainGrid::default(), 11).unwrap();
        assert!(model.cv_accuracy >= 0.95);
        let probs = predict_proba(&model, &[0.0, 0.0, 4.0, 0.0, 0.0, 4.0]).unwrap();
        for (k, row) in probs.chunks(3).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row[k] >= 0.9, "{row:?}");
        }
        assert!(model.tasks.iter().all(|t| t.coef.iter().all(|c| c.abs() <= model.penalty.as_f64() + 1e-12)));
    }

    #[test]
    fn two_classes_give_two_tasks_and_class_checks() {
        let (x, y) = blobs(6, &[[0.0, 0.0], [4.0, 4.0]], 0.5, 4);
        let model = train(&x, 2, &y, 2, &TrainGrid::default(), 0).unwrap();
        assert_eq!(model.tasks.len(), 2);
        let (x, y) = blobs(4, &[[0.0, 0.0], [4.0, 4.0]], 0.5, 4);
        assert!(matches!(
            train(&x, 2, &y, 2, &TrainGrid::default(), 0),
            Err(Error::TooFewSamples { found: 4, needed: 5, .. })
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let (x, y) = blobs(8, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 1.0, 6);
        let model = train(&x, 2, &y, 3, &TrainGrid::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hdr");
        save_classifier(&model, &path).unwrap();
        let back: TrainedClassifier<f64> = load_classifier(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (x, y) = blobs(6, &[[0.0, 0.0], [4.0, 4.0]], 0.5, 4);
        let model = train(&x, 2, &y, 2, &TrainGrid::default(), 0).unwrap();
        assert!(matches!(predict_proba(&model, &[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
    }
}
