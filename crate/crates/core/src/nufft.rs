//! Type-3 nonuniform exponential sums `f_ℓ = Σ_j c_j exp(i ω_ℓ x_j)`.
//!
//! The fast path centers sources and targets, spreads the sources onto a
//! uniform grid with an exponential-of-semicircle window, evaluates the
//! resulting uniform sum at the nonuniform targets through an oversampled
//! FFT and a second window, and divides out both window transforms.
//! Spreading sorts sources and accumulates fixed chunks in a fixed order,
//! so results do not depend on the thread count.

use std::sync::Arc;

use log::debug;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::gauss::gauss_legendre;

/// Sums with `N * M` at or below this are cheaper done directly.
pub const DIRECT_WORK_LIMIT: usize = 20_000_000;

const OVERSAMPLING: f64 = 2.0;
const SPREAD_CHUNK: usize = 4096;

/// Exact `O(N M)` evaluation of `Σ_j c_j exp(i ω_ℓ x_j)`.
pub fn direct_exp_sums(x: &[f64], c: &[Complex64], omega: &[f64]) -> Vec<Complex64> {
    assert_eq!(x.len(), c.len(), "one coefficient per source");
    omega
        .par_iter()
        .map(|&w| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&xj, &cj) in x.iter().zip(c) {
                let (s, co) = (w * xj).sin_cos();
                acc += cj * Complex64::new(co, s);
            }
            acc
        })
        .collect()
}

/// Accuracy and resource settings of an [`ExpSumPlan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    /// Requested accuracy relative to `Σ|c_j|`, in `[1e-14, 1e-4]`.
    pub tol: f64,
    /// Use the gridding path even when direct summation would be cheaper.
    pub force_fast: bool,
    /// Largest admissible FFT length.
    pub max_grid: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            force_fast: false,
            max_grid: 1 << 26,
        }
    }
}

impl PlanOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn fast(mut self) -> Self {
        self.force_fast = true;
        self
    }
}

/// Precomputed geometry for repeated sums with fixed sources and targets.
#[derive(Clone)]
pub struct ExpSumPlan {
    n_sources: usize,
    n_targets: usize,
    tol: f64,
    kind: PlanKind,
}

#[derive(Clone)]
enum PlanKind {
    Direct { x: Vec<f64>, omega: Vec<f64> },
    Fast(Box<FastPlan>),
}

impl std::fmt::Debug for ExpSumPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExpSumPlan")
            .field("n_sources", &self.n_sources)
            .field("n_targets", &self.n_targets)
            .field("tol", &self.tol)
            .field("fast", &self.is_fast())
            .finish()
    }
}

#[derive(Clone)]
struct FastPlan {
    ns: usize,
    beta: f64,
    // stage 1: sources on the x grid, mode q = l - half1
    half1: usize,
    src_coord: Vec<f64>,
    src_phase: Vec<Complex64>,
    order: Vec<usize>,
    // stage 2: oversampled FFT over the modes
    n2: usize,
    fft: Arc<dyn Fft<f64>>,
    deconv: Vec<f64>,
    tgt_coord: Vec<f64>,
    tgt_factor: Vec<Complex64>,
}

/// Exponential-of-semicircle window on `[-1, 1]`.
#[inline]
fn es(beta: f64, z: f64) -> f64 {
    let t = 1.0 - z * z;
    if t <= 0.0 {
        0.0
    } else {
        (beta * (t.sqrt() - 1.0)).exp()
    }
}

/// `∫_{-1}^{1} es(z) cos(k z) dz` for each `k`.
fn es_transform(beta: f64, ns: usize, ks: &[f64]) -> Vec<f64> {
    let (z, w) = gauss_legendre::<f64>(4 * ns + 40);
    let vals: Vec<f64> = z.iter().map(|&t| es(beta, t)).collect();
    ks.par_iter()
        .map(|&k| {
            z.iter()
                .zip(&w)
                .zip(&vals)
                .map(|((&t, &wt), &v)| wt * v * (k * t).cos())
                .sum()
        })
        .collect()
}

fn good_fft_len(min: usize) -> usize {
    let mut n = min.max(8);
    loop {
        let mut r = n;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return n;
        }
        n += 1;
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0.5 * (lo + hi), 0.5 * (hi - lo))
}

impl ExpSumPlan {
    /// Plans sums from sources `x` to frequencies `omega`.
    pub fn new(x: &[f64], omega: &[f64], opts: PlanOptions) -> Result<Self> {
        if !(1e-14..=1e-4).contains(&opts.tol) {
            return Err(Error::Plan(format!("tolerance {} outside [1e-14, 1e-4]", opts.tol)));
        }
        if x.iter().chain(omega).any(|v| !v.is_finite()) {
            return Err(Error::Plan("sources and targets must be finite".into()));
        }
        let work = x.len().saturating_mul(omega.len());
        let direct = !opts.force_fast && work <= DIRECT_WORK_LIMIT
            || x.is_empty()
            || omega.is_empty();
        let kind = if direct {
            debug!("exp sums: direct summation for N={} M={}", x.len(), omega.len());
            PlanKind::Direct {
                x: x.to_vec(),
                omega: omega.to_vec(),
            }
        } else {
            PlanKind::Fast(Box::new(FastPlan::new(x, omega, opts)?))
        };
        Ok(Self {
            n_sources: x.len(),
            n_targets: omega.len(),
            tol: opts.tol,
            kind,
        })
    }

    /// A plan that always sums directly, whatever the size.
    pub fn direct(x: &[f64], omega: &[f64]) -> Result<Self> {
        if x.iter().chain(omega).any(|v| !v.is_finite()) {
            return Err(Error::Plan("sources and targets must be finite".into()));
        }
        Ok(Self {
            n_sources: x.len(),
            n_targets: omega.len(),
            tol: 0.0,
            kind: PlanKind::Direct {
                x: x.to_vec(),
                omega: omega.to_vec(),
            },
        })
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Whether the gridding path is used.
    pub fn is_fast(&self) -> bool {
        matches!(self.kind, PlanKind::Fast(_))
    }

    /// FFT length of the gridding path, zero for direct plans.
    pub fn grid_len(&self) -> usize {
        match &self.kind {
            PlanKind::Direct { .. } => 0,
            PlanKind::Fast(p) => p.n2,
        }
    }

    /// Evaluates the sums for coefficients `c`.
    pub fn execute(&self, c: &[Complex64]) -> Result<Vec<Complex64>> {
        if c.len() != self.n_sources {
            return Err(Error::Plan(format!(
                "expected {} coefficients, got {}",
                self.n_sources,
                c.len()
            )));
        }
        Ok(match &self.kind {
            PlanKind::Direct { x, omega } => direct_exp_sums(x, c, omega),
            PlanKind::Fast(p) => p.execute(c),
        })
    }
}

/// Runs a planned sum; see [`ExpSumPlan::execute`].
pub fn fast_exp_sums(plan: &ExpSumPlan, c: &[Complex64]) -> Result<Vec<Complex64>> {
    plan.execute(c)
}

impl FastPlan {
    fn new(x: &[f64], omega: &[f64], opts: PlanOptions) -> Result<Self> {
        let ns = ((1.0 / opts.tol).log10().ceil() as usize + 2).clamp(4, 16);
        let beta = 2.30 * ns as f64;
        let half_ns = 0.5 * ns as f64;

        let (cx, mut x1) = bounds(x);
        let (cs, mut s1) = bounds(omega);
        if x1 <= 0.0 {
            x1 = 1.0;
        }
        s1 = s1.max(1.0 / x1);

        // stage 1 grid: spacing h, modes q in [-half1, half1]
        let h = std::f64::consts::PI / (OVERSAMPLING * s1);
        let half1 = (x1 / h + half_ns).ceil() as usize + 1;
        let n1 = 2 * half1 + 1;
        let n2 = good_fft_len(((OVERSAMPLING * n1 as f64).ceil() as usize).max(2 * ns));
        if n2 > opts.max_grid {
            return Err(Error::Plan(format!(
                "grid of {n2} points exceeds the cap of {} (space-bandwidth product too large)",
                opts.max_grid
            )));
        }
        debug!("exp sums: fast path N={} M={} ns={ns} n2={n2}", x.len(), omega.len());

        let src_coord: Vec<f64> = x.iter().map(|&v| (v - cx) / h + half1 as f64).collect();
        let src_phase: Vec<Complex64> = x
            .iter()
            .map(|&v| {
                let (s, c) = (cs * (v - cx)).sin_cos();
                Complex64::new(c, s)
            })
            .collect();
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| src_coord[a].total_cmp(&src_coord[b]).then(a.cmp(&b)));

        // stage 2 window transform at each mode
        let dtheta = 2.0 * std::f64::consts::PI / n2 as f64;
        let alpha2 = half_ns * dtheta;
        let modes: Vec<f64> = (0..n1).map(|l| (l as f64 - half1 as f64) * alpha2).collect();
        let deconv: Vec<f64> = es_transform(beta, ns, &modes)
            .into_iter()
            .map(|v| 1.0 / (alpha2 * v))
            .collect();

        // stage 1 window transform at each shifted target
        let alpha1 = half_ns * h;
        let shifted: Vec<f64> = omega.iter().map(|&w| (w - cs) * alpha1).collect();
        let phi_hat = es_transform(beta, ns, &shifted);
        let tgt_factor: Vec<Complex64> = omega
            .iter()
            .zip(&phi_hat)
            .map(|(&w, &ph)| {
                let (s, c) = (w * cx).sin_cos();
                Complex64::new(c, s) * (h * dtheta / (alpha1 * ph))
            })
            .collect();
        let tgt_coord: Vec<f64> = omega
            .iter()
            .map(|&w| ((w - cs) * h / dtheta).rem_euclid(n2 as f64))
            .collect();

        let fft = FftPlanner::new().plan_fft_inverse(n2);
        Ok(Self {
            ns,
            beta,
            half1,
            src_coord,
            src_phase,
            order,
            n2,
            fft,
            deconv,
            tgt_coord,
            tgt_factor,
        })
    }

    fn execute(&self, c: &[Complex64]) -> Vec<Complex64> {
        let n1 = 2 * self.half1 + 1;
        let half_ns = 0.5 * self.ns as f64;
        let inv_half = 1.0 / half_ns;

        // spread: each chunk of sorted sources fills a local window of the grid
        let pieces: Vec<(usize, Vec<Complex64>)> = self
            .order
            .par_chunks(SPREAD_CHUNK)
            .map(|chunk| {
                let lo = (self.src_coord[chunk[0]] - half_ns).ceil().max(0.0) as usize;
                let hi = ((self.src_coord[*chunk.last().unwrap()] + half_ns).floor() as usize)
                    .min(n1 - 1);
                let mut local = vec![Complex64::new(0.0, 0.0); hi + 1 - lo];
                for &j in chunk {
                    let u = self.src_coord[j];
                    let cj = c[j] * self.src_phase[j];
                    let first = (u - half_ns).ceil().max(0.0) as usize;
                    let last = ((u + half_ns).floor() as usize).min(n1 - 1);
                    for l in first..=last {
                        local[l - lo] += cj * es(self.beta, (l as f64 - u) * inv_half);
                    }
                }
                (lo, local)
            })
            .collect();
        let mut grid = vec![Complex64::new(0.0, 0.0); n1];
        for (lo, local) in pieces {
            for (k, v) in local.into_iter().enumerate() {
                grid[lo + k] += v;
            }
        }

        // deconvolve and place modes on the oversampled FFT grid
        let n2 = self.n2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n2];
        for (l, v) in grid.iter().enumerate() {
            let q = l as i64 - self.half1 as i64;
            buf[q.rem_euclid(n2 as i64) as usize] = v * self.deconv[l];
        }
        self.fft.process(&mut buf);

        // interpolate at targets
        self.tgt_coord
            .par_iter()
            .zip(self.tgt_factor.par_iter())
            .map(|(&v, &factor)| {
                let first = (v - half_ns).ceil() as i64;
                let last = (v + half_ns).floor() as i64;
                let mut acc = Complex64::new(0.0, 0.0);
                for k in first..=last {
                    let wgt = es(self.beta, (k as f64 - v) * inv_half);
                    acc += buf[k.rem_euclid(n2 as i64) as usize] * wgt;
                }
                acc * factor
            })
            .collect()
    }
}
