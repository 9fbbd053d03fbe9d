//! Random Fourier expansions built from a quadrature rule: scalings
//! `γ_i = sqrt(2 w_i k̂(ξ_i))`, the effective kernel they realize, prior
//! draws and the `L²` kernel-error metric.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{domain, Result};
use crate::gauss::gauss_legendre_on;
use crate::kernels::{matern_kernel_unchecked, matern_spectral_density, MaternParams};
use crate::quadrature::QuadratureRule;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Per-hyperparameter scalings of a rule's trigonometric basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierExpansion<'a> {
    rule: &'a QuadratureRule,
    params: MaternParams,
    gammas: Vec<f64>,
}

impl<'a> FourierExpansion<'a> {
    pub fn new(rule: &'a QuadratureRule, params: MaternParams) -> Result<Self> {
        let gammas = gamma_coefficients(rule, &params)?;
        Ok(Self {
            rule,
            params,
            gammas,
        })
    }

    pub fn rule(&self) -> &QuadratureRule {
        self.rule
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Number of basis functions, `2m`.
    pub fn basis_len(&self) -> usize {
        2 * self.gammas.len()
    }

    /// `f(x) = Σ γ_i (α_i cos(2πξ_i x) + β_i sin(2πξ_i x))` for given
    /// coefficients.
    pub fn evaluate(&self, alpha: &[f64], beta: &[f64], xs: &[f64]) -> Vec<f64> {
        assert_eq!(alpha.len(), self.gammas.len());
        assert_eq!(beta.len(), self.gammas.len());
        xs.iter()
            .map(|&x| {
                self.rule
                    .nodes()
                    .iter()
                    .zip(&self.gammas)
                    .zip(alpha.iter().zip(beta))
                    .map(|((&xi, &g), (&a, &b))| {
                        let (s, c) = (TWO_PI * xi * x).sin_cos();
                        g * (a * c + b * s)
                    })
                    .sum()
            })
            .collect()
    }
}

/// `γ_i = sqrt(2 w_i k̂(ξ_i))` for parameters inside the rule's box.
pub fn gamma_coefficients(rule: &QuadratureRule, p: &MaternParams) -> Result<Vec<f64>> {
    rule.hyper_box().check(p)?;
    Ok(rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&xi, &w)| (2.0 * w * matern_spectral_density(xi, p)).sqrt())
        .collect())
}

/// `k'(d) = Σ 2 w_i k̂(ξ_i) cos(2π ξ_i d)` for `|d| <= b - a`.
pub fn effective_kernel(rule: &QuadratureRule, p: &MaternParams, d: f64) -> Result<f64> {
    let hb = rule.hyper_box();
    hb.check(p)?;
    if !(d.abs() <= hb.lag_max()) {
        return domain(format!("lag {d} outside the certified range [0, {}]", hb.lag_max()));
    }
    Ok(effective_kernel_unchecked(rule, p, d))
}

fn effective_kernel_unchecked(rule: &QuadratureRule, p: &MaternParams, d: f64) -> f64 {
    rule.nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&xi, &w)| 2.0 * w * matern_spectral_density(xi, p) * (TWO_PI * xi * d).cos())
        .sum()
}

/// One row of the design matrix:
/// `[γ_i cos(2π ξ_i x)]_i ++ [γ_i sin(2π ξ_i x)]_i`.
pub fn basis_row(rule: &QuadratureRule, gammas: &[f64], x: f64) -> Vec<f64> {
    let m = rule.len();
    let mut row = vec![0.0; 2 * m];
    fill_basis_row(rule.nodes(), gammas, x, &mut row);
    row
}

pub(crate) fn fill_basis_row(nodes: &[f64], gammas: &[f64], x: f64, row: &mut [f64]) {
    let m = nodes.len();
    for (i, (&xi, &g)) in nodes.iter().zip(gammas).enumerate() {
        let (s, c) = (TWO_PI * xi * x).sin_cos();
        row[i] = g * c;
        row[m + i] = g * s;
    }
}

/// `L²` norm of `approx(x - y) - k(x - y)` over `[a, b]²` by tensor
/// Gauss–Legendre, starting at 200 points per axis and doubling until the
/// estimate changes by less than 1%.
pub fn l2_kernel_discrepancy<F>(a: f64, b: f64, p: &MaternParams, approx: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    let eval = |n: usize| -> f64 {
        let (x, w) = gauss_legendre_on::<f64>(n, a, b);
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    let d = (x[i] - x[j]).abs();
                    let e = approx(d) - matern_kernel_unchecked(d, p);
                    s += w[j] * e * e;
                }
                w[i] * s
            })
            .collect();
        rows.iter().sum::<f64>().sqrt()
    };
    let mut n = 200;
    let mut prev = eval(n);
    for _ in 0..4 {
        n *= 2;
        let next = eval(n);
        let change = (next - prev).abs();
        prev = next;
        if change < 0.01 * next.abs() || next == 0.0 {
            break;
        }
    }
    prev
}

/// `L²` error of the effective kernel over `[a, b]²`.
pub fn l2_kernel_error(rule: &QuadratureRule, p: &MaternParams) -> Result<f64> {
    let hb = rule.hyper_box();
    hb.check(p)?;
    let v: Vec<f64> = rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&xi, &w)| 2.0 * w * matern_spectral_density(xi, p))
        .collect();
    let nodes = rule.nodes();
    Ok(l2_kernel_discrepancy(hb.a, hb.b, p, |d| {
        nodes.iter().zip(&v).map(|(&xi, &c)| c * (TWO_PI * xi * d).cos()).sum()
    }))
}

/// Standard normal variates from ChaCha20 stream `stream` of `seed`,
/// through the inverse normal CDF.
pub fn standard_normals(seed: u64, stream: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::standard();
    (0..count)
        .map(|_| {
            // midpoint of one of 2^53 equal cells, never 0 or 1
            let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            normal.inverse_cdf(u)
        })
        .collect()
}

/// One prior draw at `xs`, using stream 0 of `seed`.
pub fn sample_prior(expansion: &FourierExpansion<'_>, seed: u64, xs: &[f64]) -> Vec<f64> {
    sample_prior_stream(expansion, seed, 0, xs)
}

/// Prior draw number `draw` of `seed`; each draw has its own stream, so
/// draws are reproducible individually and in any order.
pub fn sample_prior_stream(
    expansion: &FourierExpansion<'_>,
    seed: u64,
    draw: u64,
    xs: &[f64],
) -> Vec<f64> {
    let m = expansion.gammas.len();
    let z = standard_normals(seed, draw, 2 * m);
    expansion.evaluate(&z[..m], &z[m..], xs)
}
