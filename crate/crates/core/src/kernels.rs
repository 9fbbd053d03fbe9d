//! Matérn covariance kernels, their one-dimensional spectral densities and
//! Chebyshev sampling of the hyperparameter box.
//!
//! Frequencies are in cycles per unit of `x`, so the kernel and its density
//! are related by `k(d) = ∫ k̂(ξ) exp(2πiξd) dξ`.

use crate::error::{domain, Error, Result};
use crate::scalar::Real;
use crate::special::bessel_k_scaled;

/// Smoothness `nu` and lengthscale `rho` of a unit-variance Matérn kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams<T = f64> {
    nu: T,
    rho: T,
}

impl<T: Real> MaternParams<T> {
    pub fn new(nu: T, rho: T) -> Result<Self> {
        if !(nu > T::zero() && nu.is_finite()) {
            return domain(format!("smoothness must be positive and finite, got {nu}"));
        }
        if !(rho > T::zero() && rho.is_finite()) {
            return domain(format!("lengthscale must be positive and finite, got {rho}"));
        }
        Ok(Self { nu, rho })
    }

    #[inline]
    pub fn nu(&self) -> T {
        self.nu
    }

    #[inline]
    pub fn rho(&self) -> T {
        self.rho
    }

    /// Log of the spectral-density prefactor
    /// `2√π Γ(ν+½) (2ν)^ν / (Γ(ν) ρ^{2ν})`.
    fn ln_density_prefactor(&self) -> T {
        let (nu, rho) = (self.nu, self.rho);
        let two = T::lit(2.0);
        (two * T::PI().sqrt()).ln() + (nu + T::lit(0.5)).ln_gamma() - nu.ln_gamma()
            + nu * (two * nu).ln()
            - two * nu * rho.ln()
    }
}

/// Hyperparameter ranges and the interval on which the process lives.
///
/// Ranges may be degenerate (`lo == hi`), which pins a single kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBox<T = f64> {
    pub nu_lo: T,
    pub nu_hi: T,
    pub rho_lo: T,
    pub rho_hi: T,
    pub a: T,
    pub b: T,
}

impl<T: Real> HyperBox<T> {
    pub fn new(a: T, b: T, nu_lo: T, nu_hi: T, rho_lo: T, rho_hi: T) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return domain(format!("interval endpoints must satisfy a < b, got [{a}, {b}]"));
        }
        if !(nu_lo > T::zero() && nu_lo <= nu_hi && nu_hi.is_finite()) {
            return domain(format!("invalid smoothness range [{nu_lo}, {nu_hi}]"));
        }
        if !(rho_lo > T::zero() && rho_lo <= rho_hi && rho_hi.is_finite()) {
            return domain(format!("invalid lengthscale range [{rho_lo}, {rho_hi}]"));
        }
        Ok(Self {
            nu_lo,
            nu_hi,
            rho_lo,
            rho_hi,
            a,
            b,
        })
    }

    /// The box used throughout the reference experiments:
    /// `[-1, 1]`, `nu ∈ [1.5, 3.5]`, `rho ∈ [0.1, 0.5]`.
    pub fn reference() -> Self {
        Self {
            nu_lo: T::lit(1.5),
            nu_hi: T::lit(3.5),
            rho_lo: T::lit(0.1),
            rho_hi: T::lit(0.5),
            a: T::lit(-1.0),
            b: T::lit(1.0),
        }
    }

    /// Largest lag `b - a`; the lag domain is `[0, b - a]`.
    #[inline]
    pub fn lag_max(&self) -> T {
        self.b - self.a
    }

    pub fn contains(&self, p: &MaternParams<T>) -> bool {
        p.nu >= self.nu_lo && p.nu <= self.nu_hi && p.rho >= self.rho_lo && p.rho <= self.rho_hi
    }

    /// Strict interior in both hyperparameters.
    pub fn contains_strictly(&self, p: &MaternParams<T>) -> bool {
        p.nu > self.nu_lo && p.nu < self.nu_hi && p.rho > self.rho_lo && p.rho < self.rho_hi
    }

    pub fn contains_x(&self, x: T) -> bool {
        x >= self.a && x <= self.b
    }

    pub fn check(&self, p: &MaternParams<T>) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfBox {
                nu: p.nu.to_f64_lossy(),
                rho: p.rho.to_f64_lossy(),
            })
        }
    }
}

/// Matérn covariance at lag `r >= 0`,
/// `k(r) = 2^{1-ν}/Γ(ν) (√(2ν) r/ρ)^ν K_ν(√(2ν) r/ρ)`, with `k(0) = 1`.
pub fn matern_kernel<T: Real>(r: T, p: &MaternParams<T>) -> Result<T> {
    if r.is_nan() || r < T::zero() {
        return domain(format!("lag must be nonnegative, got {r}"));
    }
    Ok(matern_kernel_unchecked(r, p))
}

/// `matern_kernel` for a lag already known to be nonnegative.
pub(crate) fn matern_kernel_unchecked<T: Real>(r: T, p: &MaternParams<T>) -> T {
    if r == T::zero() {
        return T::one();
    }
    if r.is_infinite() {
        return T::zero();
    }
    let nu = p.nu;
    let z = (T::lit(2.0) * nu).sqrt() * r / p.rho;
    let ln_pref = (T::one() - nu) * T::LN_2() - nu.ln_gamma() + nu * z.ln() - z;
    let scaled = bessel_k_scaled(nu, z);
    ln_pref.exp() * scaled
}

/// Spectral density `k̂(ξ) = C (2ν/ρ² + 4π²ξ²)^{-(ν+½)}`; even and positive.
pub fn matern_spectral_density<T: Real>(xi: T, p: &MaternParams<T>) -> T {
    ln_spectral_density(xi, p).exp()
}

pub fn ln_spectral_density<T: Real>(xi: T, p: &MaternParams<T>) -> T {
    let (nu, rho) = (p.nu, p.rho);
    let two = T::lit(2.0);
    let u = two * nu / (rho * rho) + T::lit(4.0) * T::PI() * T::PI() * xi * xi;
    p.ln_density_prefactor() - (nu + T::lit(0.5)) * u.ln()
}

/// Partial derivatives `(∂/∂ν, ∂/∂ρ)` of `ln k̂(ξ)`.
pub fn ln_spectral_density_grad<T: Real>(xi: T, p: &MaternParams<T>) -> (T, T) {
    let (nu, rho) = (p.nu, p.rho);
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let u = two * nu / (rho * rho) + T::lit(4.0) * T::PI() * T::PI() * xi * xi;
    let d_nu = (nu + half).digamma() + (two * nu).ln() + T::one() - nu.digamma() - two * rho.ln()
        - u.ln()
        - (nu + half) * two / (rho * rho * u);
    let d_rho = -two * nu / rho + (nu + half) * T::lit(4.0) * nu / (rho * rho * rho * u);
    (d_nu, d_rho)
}

/// Upper bound on `∫_{cutoff}^∞ 2 k̂(ξ) dξ` from `u >= 4π²ξ²`.
pub fn spectral_tail_bound<T: Real>(cutoff: T, p: &MaternParams<T>) -> T {
    let nu = p.nu;
    let two = T::lit(2.0);
    let two_pi = two * T::PI();
    let ln_c = p.ln_density_prefactor();
    // 2 C (2π)^{-(2ν+1)} cutoff^{-2ν} / (2ν)
    (ln_c + two.ln() - (two * nu + T::one()) * two_pi.ln() - two * nu * cutoff.ln()).exp()
        / (two * nu)
}

/// First-kind Chebyshev points (roots of `T_p`) mapped to `[lo, hi]`,
/// ascending and exactly symmetric about the midpoint.
pub fn chebyshev_nodes<T: Real>(lo: T, hi: T, p: usize) -> Result<Vec<T>> {
    if p == 0 {
        return domain("Chebyshev order must be at least 1");
    }
    if !(lo < hi) {
        return domain(format!("Chebyshev interval must satisfy lo < hi, got [{lo}, {hi}]"));
    }
    let mid = T::lit(0.5) * (lo + hi);
    let half_width = T::lit(0.5) * (hi - lo);
    let pp = T::from_count(p);
    let mut unit = vec![T::zero(); p];
    for j in 0..p / 2 {
        // largest first, then mirror
        let theta = T::PI() * T::from_count(2 * j + 1) / (T::lit(2.0) * pp);
        let c = theta.cos();
        unit[p - 1 - j] = c;
        unit[j] = -c;
    }
    Ok(unit.into_iter().map(|u| mid + half_width * u).collect())
}

/// Chebyshev points for a range that may be degenerate (a single value).
pub(crate) fn range_nodes(lo: f64, hi: f64, p: usize) -> Result<Vec<f64>> {
    if lo == hi {
        Ok(vec![lo])
    } else {
        chebyshev_nodes(lo, hi, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(nu: f64, rho: f64) -> MaternParams {
        MaternParams::new(nu, rho).unwrap()
    }

    #[test]
    fn unit_variance_at_zero_lag() {
        assert_eq!(matern_kernel(0.0, &params(2.5, 0.3)).unwrap(), 1.0);
    }

    #[test]
    fn half_integer_closed_form() {
        let expect = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        let got = matern_kernel(0.5, &params(1.5, 0.5)).unwrap();
        assert_relative_eq!(got, expect, max_relative = 1e-13);
        assert_relative_eq!(got, 0.483_357_7, epsilon = 1e-7);
        for &r in &[1e-6, 0.01, 0.2, 0.9, 1.7] {
            let s = 5f64.sqrt() * r / 0.3;
            let k25 = (1.0 + s + s * s / 3.0) * (-s).exp();
            assert_relative_eq!(matern_kernel(r, &params(2.5, 0.3)).unwrap(), k25, max_relative = 1e-12);
        }
    }

    #[test]
    fn far_tail_is_negligible() {
        let v = matern_kernel(10.0, &params(1.5, 0.1)).unwrap();
        assert!(v >= 0.0 && v < 1e-10);
    }

    #[test]
    fn negative_lag_is_rejected() {
        assert!(matches!(matern_kernel(-0.1, &params(2.0, 0.2)), Err(Error::Domain(_))));
        assert!(MaternParams::new(0.0, 0.2).is_err());
        assert!(MaternParams::new(1.0, -0.2).is_err());
        assert!(MaternParams::new(f64::NAN, 0.2).is_err());
    }

    #[test]
    fn density_is_even() {
        for &(nu, rho) in &[(1.5, 0.1), (2.7, 0.33), (3.5, 0.5)] {
            let p = params(nu, rho);
            for &xi in &[0.1, 1.0, 10.0] {
                assert_eq!(matern_spectral_density(xi, &p), matern_spectral_density(-xi, &p));
            }
        }
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let (nu, rho, xi) = (2.3, 0.27, 3.1);
        let (gn, gr) = ln_spectral_density_grad(xi, &params(nu, rho));
        let h = 1e-6;
        let fd_nu = (ln_spectral_density(xi, &params(nu + h, rho))
            - ln_spectral_density(xi, &params(nu - h, rho)))
            / (2.0 * h);
        let fd_rho = (ln_spectral_density(xi, &params(nu, rho + h))
            - ln_spectral_density(xi, &params(nu, rho - h)))
            / (2.0 * h);
        assert_relative_eq!(gn, fd_nu, max_relative = 1e-7);
        assert_relative_eq!(gr, fd_rho, max_relative = 1e-7);
    }

    #[test]
    fn tail_bound_dominates_true_tail() {
        let p = params(1.5, 0.1);
        // true tail by Gauss-Legendre on a substituted interval
        let cutoff = 40.0;
        let (x, w) = crate::gauss::gauss_legendre::<f64>(200);
        // ξ = cutoff / s, s ∈ (0, 1]
        let tail: f64 = x
            .iter()
            .zip(&w)
            .map(|(&t, &wt)| {
                let s = 0.5 * (t + 1.0);
                let xi = cutoff / s;
                0.5 * wt * 2.0 * matern_spectral_density(xi, &p) * cutoff / (s * s)
            })
            .sum();
        let bound = spectral_tail_bound(cutoff, &p);
        assert!(bound >= tail && bound < 1.05 * tail, "bound {bound} tail {tail}");
    }

    #[test]
    fn chebyshev_examples() {
        assert_eq!(chebyshev_nodes(0.0, 2.0, 1).unwrap(), vec![1.0]);
        let two = chebyshev_nodes(-1.0, 1.0, 2).unwrap();
        assert_relative_eq!(two[0], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(two[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        let three = chebyshev_nodes(0.1, 0.5, 3).unwrap();
        assert!(three.iter().all(|&v| v > 0.1 && v < 0.5));
        assert_relative_eq!(three[0] + three[2], 0.6, epsilon = 1e-15);
        assert_relative_eq!(three[1], 0.3, epsilon = 1e-15);
        assert!(chebyshev_nodes(0.0, 1.0, 0).is_err());
        assert!(chebyshev_nodes(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn box_validation() {
        assert!(HyperBox::new(1.0, -1.0, 1.5, 3.5, 0.1, 0.5).is_err());
        assert!(HyperBox::new(-1.0, 1.0, 1.5, 3.5, 0.5, 0.1).is_err());
        let b = HyperBox::<f64>::reference();
        assert_eq!(b.lag_max(), 2.0);
        assert!(b.contains(&params(1.5, 0.1)));
        assert!(!b.contains(&params(1.49, 0.1)));
        assert!(!b.contains_strictly(&params(1.5, 0.3)));
    }
}
