//! Reference computations shared by the integration and acceptance tests.
//! The references are built with nalgebra; the library is only called to
//! obtain the value under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualspat::erw::{build_laplacian, erw_optimize, ErwParams};
use dualspat::kclassify::{smo_train_binary, SmoParams};
use dualspat::kpca::CenteredKernelPca;
use dualspat::raster::ProbStack;
use dualspat::spfilter::{build_basis, solve_coefficients, LocalSystem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exponents `(a, b)` of `u^a v^b`, by total degree then descending `a`.
pub fn monomial_exponents(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 0..=degree {
        for a in (0..=k).rev() {
            out.push((a, k - a));
        }
    }
    out
}

/// `E`, `Ex`, `Ey` built straight from the monomial definitions.
pub fn reference_basis(radius: usize, degree: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let exps = monomial_exponents(degree);
    let side = 2 * radius + 1;
    let r = radius as f64;
    let n = side * side;
    let m = exps.len();
    let mut e = DMatrix::zeros(n, m);
    let mut ex = DMatrix::zeros(n, m);
    let mut ey = DMatrix::zeros(n, m);
    let pow = |x: f64, k: usize| if k == 0 { 1.0 } else { x.powi(k as i32) };
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            let u = (col as f64 - r) / r;
            let v = (row as f64 - r) / r;
            for (l, &(a, b)) in exps.iter().enumerate() {
                e[(i, l)] = pow(u, a) * pow(v, b);
                if a > 0 {
                    ex[(i, l)] = a as f64 * pow(u, a - 1) * pow(v, b) / r;
                }
                if b > 0 {
                    ey[(i, l)] = b as f64 * pow(u, a) * pow(v, b - 1) / r;
                }
            }
        }
    }
    (e, ex, ey)
}

/// One random Step-1 problem for a single band.
pub struct StepOneCase {
    pub radius: usize,
    pub degree: usize,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    /// `(dx, dy, bx, by)` per window point.
    pub bregman: Vec<[f64; 4]>,
}

impl StepOneCase {
    pub fn random(seed: u64, radius: usize, degree: usize, lambda: f64) -> Self {
        let mut r = rng(seed);
        let n = (2 * radius + 1).pow(2);
        Self {
            radius,
            degree,
            lambda,
            weights: (0..n).map(|_| r.random_range(0.05..=1.0)).collect(),
            values: (0..n).map(|_| r.random_range(0.0..1.0)).collect(),
            bregman: (0..n)
                .map(|_| {
                    [
                        r.random_range(-0.5..0.5),
                        r.random_range(-0.5..0.5),
                        r.random_range(-0.5..0.5),
                        r.random_range(-0.5..0.5),
                    ]
                })
                .collect(),
        }
    }

    /// Step-1 objective
    /// `‖Ec − I‖²_ω + 2λ(‖Ex c − (dx − bx)‖²_ω + ‖Ey c − (dy − by)‖²_ω)`.
    pub fn objective(&self, c: &DVector<f64>) -> f64 {
        let (e, ex, ey) = reference_basis(self.radius, self.degree);
        let (p, gx, gy) = (&e * c, &ex * c, &ey * c);
        let mut f = 0.0;
        for i in 0..self.values.len() {
            let [dx, dy, bx, by] = self.bregman[i];
            let w = self.weights[i];
            f += w * (p[i] - self.values[i]).powi(2);
            f += 2.0 * self.lambda * w * ((gx[i] - (dx - bx)).powi(2) + (gy[i] - (dy - by)).powi(2));
        }
        f
    }

    /// Analytic gradient of [`Self::objective`].
    pub fn gradient(&self, c: &DVector<f64>) -> DVector<f64> {
        let (e, ex, ey) = reference_basis(self.radius, self.degree);
        let w = DMatrix::from_diagonal(&DVector::from_vec(self.weights.clone()));
        let i = DVector::from_vec(self.values.clone());
        let tx = DVector::from_iterator(self.bregman.len(), self.bregman.iter().map(|q| q[0] - q[2]));
        let ty = DVector::from_iterator(self.bregman.len(), self.bregman.iter().map(|q| q[1] - q[3]));
        let two_l = 2.0 * self.lambda;
        (e.transpose() * &w * (&e * c - i)) * 2.0
            + (ex.transpose() * &w * (&ex * c - tx)) * (2.0 * two_l)
            + (ey.transpose() * &w * (&ey * c - ty)) * (2.0 * two_l)
    }

    /// Minimiser of the objective as a stacked weighted least-squares
    /// problem, solved by SVD.
    pub fn oracle(&self) -> DVector<f64> {
        let (e, ex, ey) = reference_basis(self.radius, self.degree);
        let n = self.values.len();
        let m = e.ncols();
        let mut a = DMatrix::zeros(3 * n, m);
        let mut rhs = DVector::zeros(3 * n);
        let s = (2.0 * self.lambda).sqrt();
        for i in 0..n {
            let w = self.weights[i].sqrt();
            let [dx, dy, bx, by] = self.bregman[i];
            for l in 0..m {
                a[(i, l)] = w * e[(i, l)];
                a[(n + i, l)] = s * w * ex[(i, l)];
                a[(2 * n + i, l)] = s * w * ey[(i, l)];
            }
            rhs[i] = w * self.values[i];
            rhs[n + i] = s * w * (dx - bx);
            rhs[2 * n + i] = s * w * (dy - by);
        }
        a.svd(true, true).solve(&rhs, 1e-14).expect("svd solve")
    }

    /// Coefficients from the library solver.
    pub fn library(&self) -> DVector<f64> {
        let basis = build_basis::<f64>(self.radius, self.degree);
        let mut sys = LocalSystem::new(&basis, self.weights.clone(), 1);
        for (i, q) in self.bregman.iter().enumerate() {
            sys.d[0][i] = [q[0], q[1]];
            sys.b[0][i] = [q[2], q[3]];
        }
        let c = solve_coefficients(&sys, &self.values, self.lambda).expect("solve");
        DVector::from_vec(c[0].clone())
    }
}

/// Largest coefficient difference between library and oracle.
pub fn step_one_error(seed: u64) -> f64 {
    let case = StepOneCase::random(seed, 2, 2, 0.5);
    (case.library() - case.oracle()).amax()
}

/// Gradient check on one random window: returns
/// (max relative error of the analytic gradient vs central differences at a
/// random point, FD gradient norm at the solution relative to the norm at 0).
pub fn gradient_check(seed: u64) -> (f64, f64) {
    let case = StepOneCase::random(seed, 2, 2, 1.2);
    let m = monomial_exponents(case.degree).len();
    let fd = |c: &DVector<f64>| -> DVector<f64> {
        let h = 1e-5;
        DVector::from_iterator(
            m,
            (0..m).map(|l| {
                let mut up = c.clone();
                let mut dn = c.clone();
                up[l] += h;
                dn[l] -= h;
                (case.objective(&up) - case.objective(&dn)) / (2.0 * h)
            }),
        )
    };
    let mut r = rng(seed ^ 0xabcd);
    let probe = DVector::from_iterator(m, (0..m).map(|_| r.random_range(-1.0..1.0)));
    let analytic = case.gradient(&probe);
    let numeric = fd(&probe);
    let rel = (&analytic - &numeric).norm() / analytic.norm().max(1e-300);
    let solved = case.library();
    let scale = case.gradient(&DVector::zeros(m)).norm();
    let stationarity = fd(&solved).norm() / scale;
    (rel, stationarity)
}

pub fn gaussian(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Random binary problem with at most six points in the plane.
pub struct QpCase {
    pub x: Vec<f64>,
    pub y: Vec<i8>,
    pub c: f64,
    pub gamma: f64,
}

impl QpCase {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let n = r.random_range(2..=6usize);
        let x: Vec<f64> = (0..2 * n).map(|_| r.random_range(-2.0..2.0)).collect();
        let mut y: Vec<i8> = (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
        y[0] = 1;
        y[1] = -1;
        let c = [0.1, 1.0, 10.0][r.random_range(0..3)];
        let gamma = [0.25, 1.0, 4.0][r.random_range(0..3)];
        Self { x, y, c, gamma }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            f64::from(self.y[i] * self.y[j])
                * gaussian(&self.x[2 * i..2 * i + 2], &self.x[2 * j..2 * j + 2], self.gamma)
        })
    }

    pub fn dual(&self, alpha: &DVector<f64>) -> f64 {
        0.5 * (alpha.transpose() * self.q() * alpha)[(0, 0)] - alpha.sum()
    }

    /// Exact minimiser by enumerating every assignment of each α to
    /// {0, C, free} and solving the KKT system on the free set.
    pub fn brute_force(&self) -> DVector<f64> {
        let n = self.n();
        let q = self.q();
        let yv = DVector::from_iterator(n, self.y.iter().map(|&v| f64::from(v)));
        let mut best: Option<(f64, DVector<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut state = vec![0usize; n];
            let mut rest = code;
            for s in state.iter_mut() {
                *s = rest % 3;
                rest /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            let mut alpha = DVector::zeros(n);
            for i in 0..n {
                if state[i] == 1 {
                    alpha[i] = self.c;
                }
            }
            let fixed_sum: f64 = (0..n).filter(|&i| state[i] == 1).map(|i| yv[i] * self.c).sum();
            if free.is_empty() {
                if fixed_sum.abs() > 1e-12 {
                    continue;
                }
            } else {
                let k = free.len();
                let mut a = DMatrix::zeros(k + 1, k + 1);
                let mut b = DVector::zeros(k + 1);
                for (r, &i) in free.iter().enumerate() {
                    for (s, &j) in free.iter().enumerate() {
                        a[(r, s)] = q[(i, j)];
                    }
                    a[(r, k)] = yv[i];
                    a[(k, r)] = yv[i];
                    let fixed: f64 = (0..n).filter(|&j| state[j] == 1).map(|j| q[(i, j)] * self.c).sum();
                    b[r] = 1.0 - fixed;
                }
                b[k] = -fixed_sum;
                let Some(sol) = a.lu().solve(&b) else { continue };
                let ok = free
                    .iter()
                    .enumerate()
                    .all(|(r, _)| sol[r] >= -1e-12 && sol[r] <= self.c + 1e-12);
                if !ok {
                    continue;
                }
                for (r, &i) in free.iter().enumerate() {
                    alpha[i] = sol[r].clamp(0.0, self.c);
                }
            }
            let obj = self.dual(&alpha);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, alpha));
            }
        }
        best.expect("alpha = 0 is always a candidate").1
    }
}

/// Returns (|dual objective difference|, max difference of the kernel
/// expansion Σ α_i y_i k(x_i, z) over training and probe points).
pub fn smo_vs_qp(seed: u64) -> (f64, f64) {
    let case = QpCase::random(seed);
    let n = case.n();
    let params = SmoParams {
        tol: 1e-8,
        max_passes: 100_000,
    };
    let sol = smo_train_binary(&case.x, 2, &case.y, case.c, case.gamma, &params).expect("smo");
    let smo_alpha = DVector::from_vec(sol.alpha.clone());
    let oracle = case.brute_force();
    let obj_err = (case.dual(&smo_alpha) - case.dual(&oracle)).abs();
    let expansion = |alpha: &DVector<f64>, z: &[f64]| -> f64 {
        (0..n)
            .map(|i| alpha[i] * f64::from(case.y[i]) * gaussian(&case.x[2 * i..2 * i + 2], z, case.gamma))
            .sum()
    };
    let mut probes: Vec<Vec<f64>> = (0..n).map(|i| case.x[2 * i..2 * i + 2].to_vec()).collect();
    let mut r = rng(seed ^ 0x5a5a);
    probes.extend((0..5).map(|_| vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]));
    let dec_err = probes
        .iter()
        .map(|z| (expansion(&smo_alpha, z) - expansion(&oracle, z)).abs())
        .fold(0.0, f64::max);
    (obj_err, dec_err)
}

/// Dense Laplacian of a 4-connected grid, built independently.
pub fn dense_laplacian(guidance: &[f64], h: usize, w: usize, beta: f64) -> DMatrix<f64> {
    let n = h * w;
    let mut l = DMatrix::zeros(n, n);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut link = |j: usize| {
                let wt = (-beta * (guidance[i] - guidance[j]).powi(2)).exp();
                l[(i, j)] -= wt;
                l[(i, i)] += wt;
            };
            if c > 0 {
                link(i - 1);
            }
            if c + 1 < w {
                link(i + 1);
            }
            if r > 0 {
                link(i - w);
            }
            if r + 1 < h {
                link(i + w);
            }
        }
    }
    l
}

/// Random priors on the simplex, pixel-major `n × t`.
pub fn random_priors(r: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * t);
    for _ in 0..n {
        let raw: Vec<f64> = (0..t).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / s));
    }
    out
}

/// Max |Q_library − Q_dense| for one random grid problem.
pub fn erw_vs_dense(seed: u64, h: usize, w: usize) -> f64 {
    let mut r = rng(seed);
    let t = r.random_range(2..=4usize);
    let n = h * w;
    let guidance: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let beta = r.random_range(0.5..20.0);
    let gamma = r.random_range(0.05..2.0);
    let priors = random_priors(&mut r, n, t);
    // The default CG tolerance targets classification, not 1e-8 agreement.
    let params = ErwParams {
        beta,
        gamma,
        cg_tol: 1e-13,
        ..ErwParams::default()
    };
    let lap = build_laplacian(&guidance, h, w, beta).expect("laplacian");
    let stack = ProbStack::new(h, w, t, priors.clone()).expect("priors");
    let q = erw_optimize(&lap, &stack, &params).expect("erw").probs;
    let a = dense_laplacian(&guidance, h, w, beta) + DMatrix::identity(n, n) * gamma;
    let lu = a.lu();
    let mut err: f64 = 0.0;
    for class in 0..t {
        let b = DVector::from_iterator(n, (0..n).map(|p| gamma * priors[p * t + class]));
        let x = lu.solve(&b).expect("dense solve");
        for p in 0..n {
            err = err.max((x[p] - q.pixel(p)[class]).abs());
        }
    }
    err
}

/// Max |KPCA(linear kernel) − PCA| over fit scores and a query, after
/// aligning signs per component.
pub fn linear_kpca_vs_pca(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, d) = (6usize, 2usize);
    let x: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let kernel: Vec<f64> = (0..n * n)
        .map(|t| {
            let (i, j) = (t / n, t % n);
            (0..d).map(|k| x[i * d + k] * x[j * d + k]).sum()
        })
        .collect();
    let model = CenteredKernelPca::fit(&kernel, n, d).expect("fit");

    let xm = DMatrix::from_row_slice(n, d, &x);
    let mean = xm.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| xm[(i, j)] - mean[j]);
    let eig = (centered.transpose() * &centered).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let query: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let qrow: Vec<f64> = (0..n)
        .map(|j| (0..d).map(|k| query[k] * x[j * d + k]).sum())
        .collect();
    let mut projected = vec![0.0; d];
    model.project(&qrow, &mut projected);

    let mut err: f64 = 0.0;
    for (c, &col) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(col);
        let scores: Vec<f64> = (0..n).map(|i| centered.row(i).dot(&v.transpose())).collect();
        let q_score: f64 = (0..d).map(|k| (query[k] - mean[k]) * v[k]).sum();
        let lib: Vec<f64> = (0..n).map(|i| model.fit_scores[i * d + c]).collect();
        let sign = if lib.iter().zip(&scores).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..n {
            err = err.max((lib[i] - sign * scores[i]).abs());
        }
        err = err.max((projected[c] - sign * q_score).abs());
    }
    err
}

/// Seeded 16x16 test image: a 4-class mosaic with noise, band-normalised.
pub fn test_image(seed: u64) -> dualspat::HsiCube {
    use dualspat::synth::{generate_synthetic, SyntheticSpec};
    let scene = generate_synthetic::<f64>(&SyntheticSpec::new(16, 16, 4, 6, 0.05, seed)).expect("scene");
    dualspat::prep::normalize_bands(&scene.cube)
}

/// Runs the smoother at every pixel and returns (pixels where the final
/// local objective exceeds the first-iteration one, worst relative increase).
pub fn objective_nonincrease(cube: &dualspat::HsiCube) -> (usize, f64) {
    use dualspat::spfilter::{local_objective, smooth_pixel, SmoothParams};
    let p = SmoothParams::default();
    let mut bad = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            let s = smooth_pixel(cube, (r, c), &p).expect("smooth");
            let first = local_objective(&s.weights, &s.window, &s.first, p.lambda);
            let last = local_objective(&s.weights, &s.window, &s.last, p.lambda);
            if last > first {
                bad += 1;
            }
            worst = worst.max((last - first) / first.abs().max(f64::MIN_POSITIVE));
        }
    }
    (bad, worst)
}

/// (max |row sum|, max |L - L'|, min x'Lx / x'x over random probes) for a
/// random grid Laplacian.
pub fn laplacian_invariants(seed: u64) -> (f64, f64, f64) {
    let mut r = rng(seed);
    let h = r.random_range(1..=8usize);
    let w = r.random_range(1..=8usize);
    let n = h * w;
    let guidance: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let beta = r.random_range(0.0..200.0);
    let lap = build_laplacian(&guidance, h, w, beta).expect("laplacian");
    let dense = DMatrix::from_row_slice(n, n, &lap.to_dense());
    let row_sum = (0..n).map(|i| dense.row(i).sum().abs()).fold(0.0, f64::max);
    let asym = (&dense - dense.transpose()).amax();
    let mut min_ratio = f64::INFINITY;
    for _ in 0..10 {
        let x = DVector::from_iterator(n, (0..n).map(|_| r.random_range(-1.0..1.0)));
        let mut lx = vec![0.0; n];
        lap.apply(x.as_slice(), &mut lx);
        let q: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
        min_ratio = min_ratio.min(q / x.norm_squared());
    }
    (row_sum, asym, min_ratio)
}

/// Max |Σ_t Q_t − 1| of the random-walker output for random priors.
pub fn erw_sum_deviation(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (h, w, t) = (r.random_range(2..=12usize), r.random_range(2..=12usize), r.random_range(2..=6usize));
    let n = h * w;
    let guidance: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let priors = random_priors(&mut r, n, t);
    let params = ErwParams::default();
    let lap = build_laplacian(&guidance, h, w, params.beta).expect("laplacian");
    let stack = ProbStack::new(h, w, t, priors).expect("priors");
    let q = erw_optimize(&lap, &stack, &params).expect("erw").probs;
    (0..n)
        .map(|p| (q.pixel(p).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}
