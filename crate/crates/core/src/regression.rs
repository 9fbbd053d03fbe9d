//! Weight-space GP regression in the trigonometric basis of a quadrature
//! rule.
//!
//! With `X = X' B D`, where `X'_{jp} = exp(2πi ξ_p x_j)` over the `2m`
//! signed frequencies, `B` the fixed cosine/sine recombination and `D` the
//! diagonal of scalings `γ`, the normal matrix is `XᵀX = D (Bᵀ X'ᵀX' B) D`.
//! The bracket depends only on the data and the nodes, so it is formed once
//! from `2m² + m` exponential sums and reused for every `(ν, ρ, σ²)`.

use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::fourier_gp::{fill_basis_row, gamma_coefficients, standard_normals};
use crate::kernels::{ln_spectral_density_grad, matern_kernel_unchecked, MaternParams};
use crate::linalg::symmetric_eigen_desc;
use crate::nufft::{ExpSumPlan, PlanOptions};
use crate::quadrature::QuadratureRule;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const SUM_TOL: f64 = 1e-13;

/// Observations `y_j` at locations `x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return domain(format!("{} locations but {} observations", xs.len(), ys.len()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return domain("data must be finite");
        }
        Ok(Self { xs, ys })
    }

    /// `y = cos(3 eˣ) + ε` at `n` equispaced points of `[-1, 1]` (endpoints
    /// included), `ε ~ N(0, noise_variance)` from a seeded stream.
    pub fn synthetic(n: usize, noise_variance: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return domain("synthetic data needs at least two points");
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return domain(format!("noise variance must be nonnegative, got {noise_variance}"));
        }
        let sd = noise_variance.sqrt();
        let z = standard_normals(seed, 0, n);
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let ys = xs.iter().zip(&z).map(|(&x, &e)| (3.0 * x.exp()).cos() + sd * e).collect();
        Self::new(xs, ys)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// How exponential sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumStrategy {
    /// Gridding for large problems, direct summation otherwise.
    #[default]
    Auto,
    /// Direct `O(N M)` summation.
    Direct,
    /// Gridding regardless of size.
    Fast,
}

impl SumStrategy {
    fn plan(self, x: &[f64], omega: &[f64]) -> Result<ExpSumPlan> {
        let opts = PlanOptions::with_tol(SUM_TOL);
        match self {
            SumStrategy::Auto => ExpSumPlan::new(x, omega, opts),
            SumStrategy::Fast => ExpSumPlan::new(x, omega, opts.fast()),
            SumStrategy::Direct => ExpSumPlan::direct(x, omega),
        }
    }
}

/// Hyperparameter-free sums of the data: `Bᵀ X'ᵀX' B`, `Bᵀ X'ᵀ y` and
/// `yᵀy`.
#[derive(Debug, Clone)]
pub struct SpectralSums {
    m: usize,
    n: usize,
    gram: DMatrix<f64>,
    moments: DVector<f64>,
    yty: f64,
    imag_residual: f64,
    /// Seconds spent in exponential sums.
    pub sum_seconds: f64,
}

impl SpectralSums {
    /// Runs the `2m² + m` pair sums and the `m` data sums.
    pub fn compute(rule: &QuadratureRule, data: &Dataset, strategy: SumStrategy) -> Result<Self> {
        if data.is_empty() {
            return domain("regression needs at least one observation");
        }
        let start = Instant::now();
        let gram_c = pair_gram(rule, data.xs(), strategy)?;
        let moments = data_moments(rule, data, strategy)?;
        let sum_seconds = start.elapsed().as_secs_f64();

        let m = rule.len();
        let b = recombination(m);
        let g = b.transpose() * gram_c * &b;
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.re.abs())).max(1e-300);
        let imag_residual = g.iter().fold(0.0f64, |a, v| a.max(v.im.abs())) / scale;
        let mut gram = g.map(|v| v.re);
        symmetrize(&mut gram);
        debug!("spectral sums: N={} m={m} in {sum_seconds:.3}s", data.len());
        Ok(Self {
            m,
            n: data.len(),
            gram,
            moments,
            yty: data.ys().iter().map(|y| y * y).sum(),
            imag_residual,
            sum_seconds,
        })
    }

    /// Largest imaginary part of `Bᵀ X'ᵀX' B` relative to its largest real
    /// entry; zero up to rounding.
    pub fn imag_residual(&self) -> f64 {
        self.imag_residual
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `XᵀX` and `Xᵀy` for scalings `gammas`.
    pub fn normal_system(&self, gammas: &[f64]) -> NormalSystem {
        let d = doubled(gammas);
        let xtx = DMatrix::from_fn(2 * self.m, 2 * self.m, |i, j| d[i] * d[j] * self.gram[(i, j)]);
        let xty = DVector::from_fn(2 * self.m, |i, _| d[i] * self.moments[i]);
        NormalSystem {
            xtx,
            xty,
            m: self.m,
            n: self.n,
            imag_residual: self.imag_residual,
        }
    }

    /// Fits `(ν, ρ, σ²)` from these sums without touching the data again.
    pub fn fit(&self, rule: &QuadratureRule, p: &MaternParams, sigma2: f64) -> Result<RegressionFit> {
        check_sigma2(sigma2)?;
        let gammas = gamma_coefficients(rule, p)?;
        let sys = self.normal_system(&gammas);
        let (u, s) = symmetric_eigen_desc(sys.xtx);
        let s = s.map(|v| v.max(0.0));
        let mut fit = RegressionFit {
            rule: rule.clone(),
            params: *p,
            gammas,
            sigma2,
            u,
            s,
            beta_bar: DVector::zeros(2 * self.m),
            xty: sys.xty,
            yty: self.yty,
            n: self.n,
        };
        fit.solve();
        Ok(fit)
    }
}

/// `[γ, γ]`, one scaling per basis column.
fn doubled(gammas: &[f64]) -> Vec<f64> {
    gammas.iter().chain(gammas).copied().collect()
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `B` with `X' B = [cos | sin]` for the signed frequency ordering
/// `(ξ_1..ξ_m, -ξ_1..-ξ_m)`.
fn recombination(m: usize) -> DMatrix<Complex64> {
    let mut b = DMatrix::from_element(2 * m, 2 * m, Complex64::new(0.0, 0.0));
    for i in 0..m {
        b[(i, i)] = Complex64::new(0.5, 0.0);
        b[(m + i, i)] = Complex64::new(0.5, 0.0);
        b[(i, m + i)] = Complex64::new(0.0, -0.5);
        b[(m + i, m + i)] = Complex64::new(0.0, 0.5);
    }
    b
}

/// `X'ᵀX'` from the sums at `2π(ξ_p + ξ_q)`, `q >= p`.
fn pair_gram(rule: &QuadratureRule, xs: &[f64], strategy: SumStrategy) -> Result<DMatrix<Complex64>> {
    let signed: Vec<f64> = rule.nodes().iter().copied().chain(rule.nodes().iter().map(|v| -v)).collect();
    let k = signed.len();
    let mut omega = Vec::with_capacity(k * (k + 1) / 2);
    for p in 0..k {
        for q in p..k {
            omega.push(TWO_PI * (signed[p] + signed[q]));
        }
    }
    let plan = strategy.plan(xs, &omega)?;
    let ones = vec![Complex64::new(1.0, 0.0); xs.len()];
    let sums = plan.execute(&ones)?;
    let mut g = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    let mut it = sums.into_iter();
    for p in 0..k {
        for q in p..k {
            let v = it.next().expect("one sum per pair");
            g[(p, q)] = v;
            g[(q, p)] = v;
        }
    }
    Ok(g)
}

/// `[Σ y cos(2πξ_i x) ; Σ y sin(2πξ_i x)]` from one complex sum per node.
fn data_moments(rule: &QuadratureRule, data: &Dataset, strategy: SumStrategy) -> Result<DVector<f64>> {
    let omega: Vec<f64> = rule.nodes().iter().map(|v| TWO_PI * v).collect();
    let plan = strategy.plan(data.xs(), &omega)?;
    let c: Vec<Complex64> = data.ys().iter().map(|&y| Complex64::new(y, 0.0)).collect();
    let f = plan.execute(&c)?;
    let m = rule.len();
    Ok(DVector::from_fn(2 * m, |i, _| if i < m { f[i].re } else { f[i - m].im }))
}

/// Normal equations `XᵀX β = Xᵀy` of the weight-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub m: usize,
    pub n: usize,
    /// Imaginary residue of the complex assembly, relative.
    pub imag_residual: f64,
}

/// `Xᵀy` through one exponential sum per node.
pub fn form_rhs(
    rule: &QuadratureRule,
    gammas: &[f64],
    data: &Dataset,
    strategy: SumStrategy,
) -> Result<DVector<f64>> {
    if data.is_empty() {
        return domain("regression needs at least one observation");
    }
    let mom = data_moments(rule, data, strategy)?;
    let d = doubled(gammas);
    Ok(DVector::from_fn(mom.len(), |i, _| d[i] * mom[i]))
}

/// `XᵀX` and `Xᵀy` through the factorized assembly.
pub fn form_normal_matrix(
    rule: &QuadratureRule,
    gammas: &[f64],
    data: &Dataset,
    strategy: SumStrategy,
) -> Result<NormalSystem> {
    Ok(SpectralSums::compute(rule, data, strategy)?.normal_system(gammas))
}

/// Explicit `N × 2m` design matrix.
pub fn design_matrix(rule: &QuadratureRule, gammas: &[f64], xs: &[f64]) -> DMatrix<f64> {
    let m2 = 2 * rule.len();
    let mut x = DMatrix::zeros(xs.len(), m2);
    let mut row = vec![0.0; m2];
    for (j, &xj) in xs.iter().enumerate() {
        fill_basis_row(rule.nodes(), gammas, xj, &mut row);
        for (k, v) in row.iter().enumerate() {
            x[(j, k)] = *v;
        }
    }
    x
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        domain(format!("noise variance must be positive, got {sigma2}"))
    }
}

/// Eigendecomposition of `XᵀX` and the posterior mean coefficients.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    rule: QuadratureRule,
    params: MaternParams,
    gammas: Vec<f64>,
    sigma2: f64,
    u: DMatrix<f64>,
    s: DVector<f64>,
    beta_bar: DVector<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

/// Gradient of the log marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodGradient {
    pub d_nu: f64,
    pub d_rho: f64,
    pub d_sigma2: f64,
}

impl LikelihoodGradient {
    pub fn norm(&self) -> f64 {
        (self.d_nu.powi(2) + self.d_rho.powi(2) + self.d_sigma2.powi(2)).sqrt()
    }
}

impl RegressionFit {
    /// The model before any data: `β̄ = 0`, variance `k'(0)`.
    pub fn prior(rule: &QuadratureRule, p: &MaternParams, sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        let gammas = gamma_coefficients(rule, p)?;
        let m2 = 2 * rule.len();
        Ok(Self {
            rule: rule.clone(),
            params: *p,
            gammas,
            sigma2,
            u: DMatrix::identity(m2, m2),
            s: DVector::zeros(m2),
            beta_bar: DVector::zeros(m2),
            xty: DVector::zeros(m2),
            yty: 0.0,
            n: 0,
        })
    }

    fn solve(&mut self) {
        let uty = self.u.transpose() * &self.xty;
        let scaled = DVector::from_fn(uty.len(), |k, _| uty[k] / (self.s[k] + self.sigma2));
        self.beta_bar = &self.u * scaled;
    }

    /// Same data and kernel with a new noise variance; no new sums or
    /// eigendecomposition.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        let mut out = self.clone();
        out.sigma2 = sigma2;
        out.solve();
        Ok(out)
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Orthogonal eigenvectors of `XᵀX`, columns matching
    /// [`eigenvalues`](Self::eigenvalues).
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Eigenvalues of `XᵀX`, descending and nonnegative.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.s
    }

    /// Posterior mean coefficients `β̄ = (XᵀX + σ²I)⁻¹ Xᵀy`.
    pub fn beta_bar(&self) -> &DVector<f64> {
        &self.beta_bar
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    /// Relative residual of `(XᵀX + σ²I) β̄ = Xᵀy` rebuilt from the
    /// eigendecomposition.
    pub fn normal_residual(&self) -> f64 {
        let k = &self.u * DMatrix::from_diagonal(&self.s) * self.u.transpose();
        let r = &k * &self.beta_bar + self.sigma2 * &self.beta_bar - &self.xty;
        r.norm() / self.xty.norm().max(1e-300)
    }

    fn basis(&self, x: f64) -> DVector<f64> {
        let mut row = vec![0.0; 2 * self.rule.len()];
        fill_basis_row(self.rule.nodes(), &self.gammas, x, &mut row);
        DVector::from_vec(row)
    }

    /// Posterior mean `φ(x)ᵀ β̄`.
    pub fn posterior_mean_at(&self, x: f64) -> f64 {
        self.basis(x).dot(&self.beta_bar)
    }

    /// Posterior variance `σ² φ(x)ᵀ U (S + σ²I)⁻¹ Uᵀ φ(x)`.
    pub fn posterior_variance_at(&self, x: f64) -> f64 {
        let proj = self.u.transpose() * self.basis(x);
        self.sigma2
            * proj
                .iter()
                .zip(self.s.iter())
                .map(|(v, s)| v * v / (s + self.sigma2))
                .sum::<f64>()
    }

    /// Mean and variance at many points.
    pub fn predict(&self, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.par_iter()
            .map(|&x| (self.posterior_mean_at(x), self.posterior_variance_at(x)))
            .collect()
    }

    /// `log N(y | 0, XXᵀ + σ²I)` through the inversion and determinant
    /// lemmas.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n as f64;
        let m2 = self.s.len() as f64;
        let quad = (self.yty - self.xty.dot(&self.beta_bar)) / self.sigma2;
        let logdet = self.s.iter().map(|s| (s + self.sigma2).ln()).sum::<f64>()
            + (n - m2) * self.sigma2.ln();
        -0.5 * (quad + logdet + n * TWO_PI.ln())
    }

    /// Gradient of [`log_marginal_likelihood`](Self::log_marginal_likelihood)
    /// in `(ν, ρ, σ²)`.
    pub fn gradient(&self) -> LikelihoodGradient {
        let m = self.rule.len();
        let s2 = self.sigma2;
        // diag of K (K + σ²I)⁻¹
        let shrink: Vec<f64> = self.s.iter().map(|s| s / (s + s2)).collect();
        let hat_diag: Vec<f64> = (0..2 * m)
            .map(|a| (0..2 * m).map(|k| self.u[(a, k)].powi(2) * shrink[k]).sum())
            .collect();
        let mut d_nu = 0.0;
        let mut d_rho = 0.0;
        for (i, &xi) in self.rule.nodes().iter().enumerate() {
            let (gn, gr) = ln_spectral_density_grad(xi, &self.params);
            for a in [i, m + i] {
                let b = self.beta_bar[a];
                d_nu += 0.5 * gn * (b * b - hat_diag[a]);
                d_rho += 0.5 * gr * (b * b - hat_diag[a]);
            }
        }
        let ub = self.u.transpose() * &self.beta_bar;
        let bkb: f64 = ub.iter().zip(self.s.iter()).map(|(v, s)| s * v * v).sum();
        let resid2 = self.yty - 2.0 * self.xty.dot(&self.beta_bar) + bkb;
        let trace = self.s.iter().map(|s| 1.0 / (s + s2)).sum::<f64>()
            + (self.n as f64 - 2.0 * m as f64) / s2;
        let d_sigma2 = 0.5 * resid2 / (s2 * s2) - 0.5 * trace;
        LikelihoodGradient {
            d_nu,
            d_rho,
            d_sigma2,
        }
    }
}

/// Eigendecomposition solve of the weight-space model.
pub fn fit(
    rule: &QuadratureRule,
    p: &MaternParams,
    data: &Dataset,
    sigma2: f64,
    strategy: SumStrategy,
) -> Result<RegressionFit> {
    check_sigma2(sigma2)?;
    rule.hyper_box().check(p)?;
    SpectralSums::compute(rule, data, strategy)?.fit(rule, p, sigma2)
}

pub fn log_marginal_likelihood(
    rule: &QuadratureRule,
    p: &MaternParams,
    data: &Dataset,
    sigma2: f64,
    strategy: SumStrategy,
) -> Result<f64> {
    Ok(fit(rule, p, data, sigma2, strategy)?.log_marginal_likelihood())
}

/// Analytic likelihood gradient; `p` must lie strictly inside the box.
pub fn gradient_log_likelihood(
    rule: &QuadratureRule,
    p: &MaternParams,
    data: &Dataset,
    sigma2: f64,
    strategy: SumStrategy,
) -> Result<LikelihoodGradient> {
    if !rule.hyper_box().contains_strictly(p) {
        return Err(Error::OutOfBox {
            nu: p.nu(),
            rho: p.rho(),
        });
    }
    Ok(fit(rule, p, data, sigma2, strategy)?.gradient())
}

/// Posterior mean and variance of the exact GP at `xstar`, by dense
/// Cholesky of `K + σ²I`.
pub fn exact_gp_oracle(
    p: &MaternParams,
    data: &Dataset,
    sigma2: f64,
    xstar: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_sigma2(sigma2)?;
    let n = data.len();
    if n > 5000 {
        return domain("dense oracle limited to 5000 points");
    }
    let xs = data.xs();
    let k = DMatrix::from_fn(n, n, |i, j| {
        matern_kernel_unchecked((xs[i] - xs[j]).abs(), p) + if i == j { sigma2 } else { 0.0 }
    });
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
    let y = DVector::from_column_slice(data.ys());
    let alpha = chol.solve(&y);
    let mut means = Vec::with_capacity(xstar.len());
    let mut vars = Vec::with_capacity(xstar.len());
    for &x in xstar {
        let kx = DVector::from_fn(n, |j, _| matern_kernel_unchecked((x - xs[j]).abs(), p));
        means.push(kx.dot(&alpha));
        let v = chol.l().solve_lower_triangular(&kx).expect("triangular factor is nonsingular");
        vars.push(1.0 - v.norm_squared());
    }
    Ok((means, vars))
}

/// Symmetric positive definite operator applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()>;
}

/// `XXᵀ + σ²I` applied through an analysis sum (data to frequencies) and a
/// synthesis sum (frequencies to data).
pub struct LowRankOperator {
    analysis: ExpSumPlan,
    synthesis: ExpSumPlan,
    gammas: Vec<f64>,
    sigma2: f64,
    n: usize,
}

impl LowRankOperator {
    pub fn new(
        rule: &QuadratureRule,
        gammas: &[f64],
        xs: &[f64],
        sigma2: f64,
        opts: PlanOptions,
    ) -> Result<Self> {
        check_sigma2(sigma2)?;
        let omega: Vec<f64> = rule.nodes().iter().map(|v| TWO_PI * v).collect();
        Ok(Self {
            analysis: ExpSumPlan::new(xs, &omega, opts)?,
            synthesis: ExpSumPlan::new(&omega, xs, opts)?,
            gammas: gammas.to_vec(),
            sigma2,
            n: xs.len(),
        })
    }
}

impl LinearOperator for LowRankOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let c: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let f = self.analysis.execute(&c)?;
        // Xᵀv = γ (Re f, Im f); X b = Re Σ γ (b_cos - i b_sin) e^{iωx}
        let coeffs: Vec<Complex64> = f
            .iter()
            .zip(&self.gammas)
            .map(|(fi, &g)| Complex64::new(g * g * fi.re, -g * g * fi.im))
            .collect();
        let back = self.synthesis.execute(&coeffs)?;
        for ((o, b), &vi) in out.iter_mut().zip(&back).zip(v) {
            *o = b.re + self.sigma2 * vi;
        }
        Ok(())
    }
}

/// Outcome of [`cg_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    /// Best iterate found (smallest residual).
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖r_k‖ / ‖b‖` for `k = 0, 1, ...`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradients from a zero start until `‖r‖ <= tol ‖b‖`.
pub fn cg_solve<O: LinearOperator>(
    op: &O,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    cg_solve_observed(op, rhs, tol, max_iter, |_, _| {})
}

/// [`cg_solve`] calling `observe(k, x_k)` after every iterate.
pub fn cg_solve_observed<O: LinearOperator>(
    op: &O,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<CgReport> {
    if !(tol > 0.0) {
        return domain(format!("tolerance must be positive, got {tol}"));
    }
    let n = op.dim();
    if rhs.len() != n {
        return domain(format!("right-hand side has {} entries, operator {n}", rhs.len()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    observe(0, &x);
    if bnorm == 0.0 {
        return Ok(CgReport {
            solution: x,
            iterations: 0,
            residual_history: vec![0.0],
            converged: true,
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut history = vec![1.0];
    let mut best = (1.0, x.clone());
    for k in 1..=max_iter {
        op.apply(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical("operator is not positive definite".into()));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        observe(k, &x);
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        history.push(rel);
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= tol {
            return Ok(CgReport {
                solution: x,
                iterations: k,
                residual_history: history,
                converged: true,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(CgReport {
        solution: best.1,
        iterations: max_iter,
        residual_history: history,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> QuadratureRule {
        QuadratureRule::embedded()
    }

    fn params() -> MaternParams {
        MaternParams::new(2.5, 0.3).unwrap()
    }

    #[test]
    fn synthetic_grid_is_equispaced_and_reproducible() {
        let d = Dataset::synthetic(3, 0.5, 1).unwrap();
        assert_eq!(d.xs(), &[-1.0, 0.0, 1.0]);
        assert_eq!(d, Dataset::synthetic(3, 0.5, 1).unwrap());
        assert!(Dataset::synthetic(1, 0.5, 1).is_err());
    }

    #[test]
    fn zero_observations_give_zero_rhs() {
        let rule = rule();
        let g = gamma_coefficients(&rule, &params()).unwrap();
        let d = Dataset::new(vec![0.1, 0.2], vec![0.0, 0.0]).unwrap();
        let b = form_rhs(&rule, &g, &d, SumStrategy::Direct).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_rhs_matches_design_matrix() {
        let rule = rule();
        let g = gamma_coefficients(&rule, &params()).unwrap();
        let d = Dataset::new(vec![-0.7, 0.1, 0.9], vec![1.0, -2.0, 0.5]).unwrap();
        let b = form_rhs(&rule, &g, &d, SumStrategy::Direct).unwrap();
        let x = design_matrix(&rule, &g, d.xs());
        let dense = x.transpose() * DVector::from_column_slice(d.ys());
        assert!((b - &dense).norm() <= 1e-12 * dense.norm());
    }

    #[test]
    fn single_point_at_origin_gives_rank_one_gram() {
        let rule = rule();
        let g = gamma_coefficients(&rule, &params()).unwrap();
        let d = Dataset::new(vec![0.0], vec![1.0]).unwrap();
        let sys = form_normal_matrix(&rule, &g, &d, SumStrategy::Direct).unwrap();
        let row = DVector::from_vec(crate::fourier_gp::basis_row(&rule, &g, 0.0));
        let outer = &row * row.transpose();
        assert!((sys.xtx - outer).amax() < 1e-14);
    }

    #[test]
    fn sigma2_must_be_positive() {
        let d = Dataset::synthetic(10, 0.5, 2).unwrap();
        assert!(fit(&rule(), &params(), &d, 0.0, SumStrategy::Auto).is_err());
    }

    #[test]
    fn scalar_oracle_case() {
        let d = Dataset::new(vec![0.0], vec![1.0]).unwrap();
        let (mean, var) = exact_gp_oracle(&params(), &d, 1.0, &[0.0]).unwrap();
        assert!((mean[0] - 0.5).abs() < 1e-15);
        assert!(var[0] <= 1.0);
    }

    #[test]
    fn prior_variance_is_effective_variance() {
        let rule = rule();
        let fit = RegressionFit::prior(&rule, &params(), 0.3).unwrap();
        let k0 = crate::fourier_gp::effective_kernel(&rule, &params(), 0.0).unwrap();
        assert!((fit.posterior_variance_at(0.4) - k0).abs() < 1e-12);
        assert_eq!(fit.posterior_mean_at(0.4), 0.0);
    }

    #[test]
    fn zero_data_likelihood_is_logdet_only() {
        let rule = rule();
        let d = Dataset::new(vec![-0.5, 0.0, 0.5], vec![0.0; 3]).unwrap();
        let f = fit(&rule, &params(), &d, 0.2, SumStrategy::Direct).unwrap();
        let x = design_matrix(&rule, f.gammas(), d.xs());
        let c = &x * x.transpose() + DMatrix::identity(3, 3) * 0.2;
        let logdet = c.determinant().ln();
        let expect = -0.5 * (logdet + 3.0 * TWO_PI.ln());
        assert!((f.log_marginal_likelihood() - expect).abs() < 1e-10);
    }

    #[test]
    fn cg_on_near_identity_converges_fast() {
        let rule = rule();
        let g = gamma_coefficients(&rule, &params()).unwrap();
        let xs: Vec<f64> = (0..50).map(|i| -1.0 + 0.04 * i as f64).collect();
        let op = LowRankOperator::new(&rule, &g, &xs, 1e8, PlanOptions::default()).unwrap();
        let b: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let rep = cg_solve(&op, &b, 1e-10, 50).unwrap();
        assert!(rep.converged && rep.iterations <= 3, "{}", rep.iterations);
    }
}
