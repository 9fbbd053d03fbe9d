//! Construction of rules over the spectral density.
//!
//! The integrands are `φ(ξ) = 2 k̂_{ν,ρ}(ξ) cos(2π ξ t)` for `(ν, ρ)` on a
//! Chebyshev grid over the box and lags `t` on a Chebyshev grid over
//! `[0, b - a]`. Their exact integrals over `[0, ∞)` are the kernel values
//! `k_{ν,ρ}(t)`. The constructor:
//!
//! 1. truncates the frequency axis where the closed-form tail bound drops
//!    below `ε/10` and tabulates a randomized row sketch of the family on a
//!    composite Gauss–Legendre grid, doubling panels until converged;
//! 2. picks candidate nodes by column-pivoted QR of the sketch scaled by the
//!    square roots of the fine weights;
//! 3. solves for nonnegative weights, exchanging the worst rows of the full
//!    family into the sketch until the residual is small enough;
//! 4. removes nodes one at a time, re-fitting positions and weights by
//!    damped Gauss–Newton after each removal.

use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::QuadratureRule;
use crate::error::{Error, Result};
use crate::gauss::composite_rule;
use crate::kernels::{
    matern_kernel_unchecked, range_nodes, spectral_tail_bound, HyperBox, MaternParams,
};
use crate::linalg::{nnls, pivoted_qr};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const FOUR_PI2: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
const PANEL_ORDER: usize = 24;
const INITIAL_PANELS: usize = 30;

/// Knobs of [`build_rule`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    /// Chebyshev order in each hyperparameter.
    pub p: usize,
    /// Number of Chebyshev lags.
    pub n: usize,
    /// Largest admissible number of candidate nodes.
    pub node_cap: usize,
    /// Rows in the randomized sketch of the family.
    pub sketch_rows: usize,
    /// Seed of the row sketch.
    pub seed: u64,
    /// Certify at `2ε` instead of `ε`.
    pub loose: bool,
    /// Run the node-elimination pass.
    pub refine: bool,
    /// Fail when validation misses the promised tolerance. When false the
    /// rule is returned with its measured error recorded as `epsilon`.
    pub require_certificate: bool,
    /// Validation grid; defaults to four times the construction lag density.
    pub validation: Option<ValidationGrid>,
    /// Maximum number of panel doublings for the fine grid.
    pub max_panel_doublings: usize,
    /// Row-exchange rounds after the first weight solve.
    pub exchange_rounds: usize,
    /// Times the lag sampling may double when validation shows errors
    /// between the sampled lags.
    pub lag_doublings: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            p: 100,
            n: 200,
            node_cap: 400,
            sketch_rows: 4000,
            seed: 0x5eed_5eed,
            loose: false,
            refine: true,
            require_certificate: true,
            validation: None,
            max_panel_doublings: 6,
            exchange_rounds: 6,
            lag_doublings: 1,
        }
    }
}

/// Tabulated family of integrands.
#[derive(Debug, Clone)]
pub struct IntegrandFamily {
    hyper_box: HyperBox<f64>,
    epsilon: f64,
    nus: Vec<f64>,
    rhos: Vec<f64>,
    lags: Vec<f64>,
    pairs: Vec<PairConsts>,
    targets: Vec<f64>,
    xi_max: f64,
    panels: usize,
    fine_nodes: Vec<f64>,
    fine_weights: Vec<f64>,
    sketch: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct PairConsts {
    ln_c: f64,
    power: f64,
    shift: f64,
}

impl PairConsts {
    fn new(nu: f64, rho: f64) -> Self {
        let p = MaternParams::new(nu, rho).expect("grid parameters are valid");
        // ln C recovered from the density at zero
        let shift = 2.0 * nu / (rho * rho);
        let power = nu + 0.5;
        let ln_c = crate::kernels::ln_spectral_density(0.0, &p) + power * shift.ln();
        Self { ln_c, power, shift }
    }

    #[inline]
    fn density(&self, xi: f64) -> f64 {
        (self.ln_c - self.power * (self.shift + FOUR_PI2 * xi * xi).ln()).exp()
    }

    /// `k̂(ξ)` and `dk̂/dξ`.
    #[inline]
    fn density_and_slope(&self, xi: f64) -> (f64, f64) {
        let u = self.shift + FOUR_PI2 * xi * xi;
        let v = (self.ln_c - self.power * u.ln()).exp();
        (v, -v * self.power * 2.0 * FOUR_PI2 * xi / u)
    }
}

impl IntegrandFamily {
    pub fn hyper_box(&self) -> &HyperBox<f64> {
        &self.hyper_box
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nus(&self) -> &[f64] {
        &self.nus
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    /// Truncation point of the frequency axis.
    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn fine_nodes(&self) -> &[f64] {
        &self.fine_nodes
    }

    pub fn fine_weights(&self) -> &[f64] {
        &self.fine_weights
    }

    /// Total number of integrands `p² n`.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Row indices currently in the sketch.
    pub fn sketch_rows(&self) -> &[usize] {
        &self.sketch
    }

    /// `(ν, ρ, t)` of an integrand.
    pub fn row_params(&self, row: usize) -> (f64, f64, f64) {
        let (pair, lag) = self.split(row);
        let nr = self.rhos.len();
        (self.nus[pair / nr], self.rhos[pair % nr], self.lags[lag])
    }

    /// Exact integral `k_{ν,ρ}(t)` of an integrand.
    pub fn target(&self, row: usize) -> f64 {
        self.targets[row]
    }

    /// `φ(ξ)` for one integrand.
    pub fn integrand(&self, row: usize, xi: f64) -> f64 {
        let (pair, lag) = self.split(row);
        2.0 * self.pairs[pair].density(xi) * (TWO_PI * xi * self.lags[lag]).cos()
    }

    /// Integral of one integrand on the fine grid.
    pub fn fine_integral(&self, row: usize) -> f64 {
        self.fine_nodes
            .iter()
            .zip(&self.fine_weights)
            .map(|(&x, &w)| w * self.integrand(row, x))
            .sum()
    }

    #[inline]
    fn split(&self, row: usize) -> (usize, usize) {
        (row / self.lags.len(), row % self.lags.len())
    }

    fn integrand_with_slope(&self, row: usize, xi: f64) -> (f64, f64) {
        let (pair, lag) = self.split(row);
        let t = self.lags[lag];
        let (v, dv) = self.pairs[pair].density_and_slope(xi);
        let (s, c) = (TWO_PI * xi * t).sin_cos();
        (2.0 * v * c, 2.0 * (dv * c - v * TWO_PI * t * s))
    }

    /// Worst absolute residual `|Σ w_i φ(ξ_i) - k(t)|` over every integrand,
    /// with its row.
    pub fn max_residual(&self, nodes: &[f64], weights: &[f64]) -> (f64, usize) {
        let per_pair = self.pair_residuals(nodes, weights);
        let mut best = (0.0, 0);
        for (pair, (err, lag)) in per_pair.into_iter().enumerate() {
            if err > best.0 || err.is_nan() {
                best = (err, pair * self.lags.len() + lag);
            }
        }
        best
    }

    fn pair_residuals(&self, nodes: &[f64], weights: &[f64]) -> Vec<(f64, usize)> {
        let m = nodes.len();
        let n = self.lags.len();
        let mut cos_table = vec![0.0; n * m];
        for (l, &t) in self.lags.iter().enumerate() {
            for (i, &x) in nodes.iter().enumerate() {
                cos_table[l * m + i] = (TWO_PI * x * t).cos();
            }
        }
        self.pairs
            .par_iter()
            .enumerate()
            .map(|(pair, pc)| {
                let v: Vec<f64> =
                    nodes.iter().zip(weights).map(|(&x, &w)| 2.0 * w * pc.density(x)).collect();
                let mut worst = (0.0f64, 0usize);
                for l in 0..n {
                    let row = &cos_table[l * m..(l + 1) * m];
                    let approx: f64 = row.iter().zip(&v).map(|(c, v)| c * v).sum();
                    let err = (approx - self.targets[pair * n + l]).abs();
                    if err > worst.0 || err.is_nan() {
                        worst = (err, l);
                    }
                }
                worst
            })
            .collect()
    }

    /// Rows whose residual exceeds `threshold`, worst first, at most
    /// `limit` of them and one per `(ν, ρ)` pair.
    fn violators(&self, nodes: &[f64], weights: &[f64], threshold: f64, limit: usize) -> Vec<usize> {
        let per_pair = self.pair_residuals(nodes, weights);
        let mut bad: Vec<(f64, usize)> = per_pair
            .into_iter()
            .enumerate()
            .filter(|(_, (e, _))| *e > threshold)
            .map(|(pair, (e, l))| (e, pair * self.lags.len() + l))
            .collect();
        bad.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        bad.into_iter().take(limit).map(|(_, r)| r).collect()
    }

    fn add_rows(&mut self, rows: &[usize]) -> usize {
        let mut added = 0;
        for &r in rows {
            if let Err(pos) = self.sketch.binary_search(&r) {
                self.sketch.insert(pos, r);
                added += 1;
            }
        }
        added
    }

    /// Sketch rows tabulated on the fine grid, scaled by `sqrt(fine weight)`.
    fn weighted_sketch_matrix(&self) -> DMatrix<f64> {
        let rows = self.sketch.len();
        let cols = self.fine_nodes.len();
        let mut data = vec![0.0; rows * cols];
        data.par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
            let x = self.fine_nodes[j];
            let sw = self.fine_weights[j].sqrt();
            for (slot, &r) in col.iter_mut().zip(&self.sketch) {
                *slot = sw * self.integrand(r, x);
            }
        });
        DMatrix::from_vec(rows, cols, data)
    }

    fn matrix_at(&self, rows: &[usize], nodes: &[f64]) -> DMatrix<f64> {
        let mut data = vec![0.0; rows.len() * nodes.len()];
        data.par_chunks_mut(rows.len().max(1)).enumerate().for_each(|(j, col)| {
            for (slot, &r) in col.iter_mut().zip(rows) {
                *slot = self.integrand(r, nodes[j]);
            }
        });
        DMatrix::from_vec(rows.len(), nodes.len(), data)
    }
}

/// Samples the integrand family over `hyper_box`.
///
/// `p` Chebyshev values per hyperparameter (a single value for a degenerate
/// range) and `n` Chebyshev lags on `[0, b - a]`.
pub fn build_integrand_family(
    hyper_box: &HyperBox<f64>,
    p: usize,
    n: usize,
    epsilon: f64,
) -> Result<IntegrandFamily> {
    family_with_sketch(hyper_box, p, n, epsilon, 4000, 0x5eed_5eed, 6)
}

fn family_with_sketch(
    hyper_box: &HyperBox<f64>,
    p: usize,
    n: usize,
    epsilon: f64,
    sketch_rows: usize,
    seed: u64,
    max_doublings: usize,
) -> Result<IntegrandFamily> {
    let stage = "family";
    if p == 0 || n == 0 {
        return Err(Error::Domain("family orders p and n must be positive".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let nus = range_nodes(hyper_box.nu_lo, hyper_box.nu_hi, p)?;
    let rhos = range_nodes(hyper_box.rho_lo, hyper_box.rho_hi, p)?;
    let lags = crate::kernels::chebyshev_nodes(0.0, hyper_box.lag_max(), n)?;

    let params: Vec<MaternParams> = nus
        .iter()
        .flat_map(|&nu| rhos.iter().map(move |&rho| MaternParams::new(nu, rho)))
        .collect::<Result<_>>()?;
    let pairs: Vec<PairConsts> = params.iter().map(|q| PairConsts::new(q.nu(), q.rho())).collect();

    let xi_max = tail_cutoff(&params, epsilon / 10.0).ok_or_else(|| Error::Build {
        stage,
        message: "no finite frequency cutoff meets the tail budget".into(),
    })?;

    let targets: Vec<f64> = params
        .par_iter()
        .flat_map_iter(|q| lags.iter().map(move |&t| matern_kernel_unchecked(t, q)))
        .collect();

    let total = targets.len();
    let sketch = initial_sketch(nus.len(), rhos.len(), lags.len(), sketch_rows, seed);
    debug!("family: {total} integrands, sketch {} rows, xi_max {xi_max:.3}", sketch.len());

    let mut fam = IntegrandFamily {
        hyper_box: *hyper_box,
        epsilon,
        nus,
        rhos,
        lags,
        pairs,
        targets,
        xi_max,
        panels: 0,
        fine_nodes: Vec::new(),
        fine_weights: Vec::new(),
        sketch,
    };

    // panel doubling until the sketch integrals settle
    let mut panels = INITIAL_PANELS;
    let integrals = |fam: &IntegrandFamily, panels: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let edges: Vec<f64> = (0..=panels).map(|k| xi_max * k as f64 / panels as f64).collect();
        let (x, w) = composite_rule(&edges, PANEL_ORDER);
        let vals = fam
            .sketch
            .par_iter()
            .map(|&r| x.iter().zip(&w).map(|(&xi, &wi)| wi * fam.integrand(r, xi)).sum())
            .collect();
        (x, w, vals)
    };
    let (mut x, mut w, mut current) = integrals(&fam, panels);
    let mut converged = false;
    for _ in 0..max_doublings {
        let (x2, w2, next) = integrals(&fam, 2 * panels);
        let change = current
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        debug!("fine grid: {panels} panels, change on doubling {change:.3e}");
        if change <= epsilon / 20.0 {
            converged = true;
            break;
        }
        panels *= 2;
        (x, w, current) = (x2, w2, next);
    }
    if !converged {
        return Err(Error::Build {
            stage,
            message: format!("fine grid did not converge within {max_doublings} panel doublings"),
        });
    }
    fam.panels = panels;
    fam.fine_nodes = x;
    fam.fine_weights = w;
    Ok(fam)
}

/// Smallest frequency at which every tail bound is below `budget`.
fn tail_cutoff(params: &[MaternParams], budget: f64) -> Option<f64> {
    let worst = |xi: f64| params.iter().map(|q| spectral_tail_bound(xi, q)).fold(0.0, f64::max);
    let mut hi = 1.0;
    while worst(hi) > budget {
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if worst(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Seeded random rows plus every lag at the four corners of the parameter
/// grid, sorted.
fn initial_sketch(n_nu: usize, n_rho: usize, n_lag: usize, size: usize, seed: u64) -> Vec<usize> {
    let total = n_nu * n_rho * n_lag;
    if total <= size {
        return (0..total).collect();
    }
    let mut rows: Vec<usize> = Vec::with_capacity(size + 4 * n_lag);
    for &i in &[0, n_nu - 1] {
        for &j in &[0, n_rho - 1] {
            let pair = i * n_rho + j;
            rows.extend((0..n_lag).map(|l| pair * n_lag + l));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let extra = size.saturating_sub(rows.len());
    rows.extend(rand::seq::index::sample(&mut rng, total, extra).into_iter());
    rows.sort_unstable();
    rows.dedup();
    rows
}

/// Candidate nodes as indices into the fine grid, ascending.
///
/// Pivoted QR of the square-root-weighted sketch stops once every residual
/// column norm is at most `epsilon / 10`.
pub fn select_nodes(fam: &IntegrandFamily, epsilon: f64) -> Result<Vec<usize>> {
    select_with_cap(fam, epsilon / 10.0, 200)
}

fn select_with_cap(fam: &IntegrandFamily, tol: f64, cap: usize) -> Result<Vec<usize>> {
    let a = fam.weighted_sketch_matrix();
    let qr = pivoted_qr(a, tol, cap + 1);
    if qr.pivots.len() > cap {
        return Err(Error::Build {
            stage: "select",
            message: format!("numerical rank exceeds the node cap of {cap}"),
        });
    }
    let mut idx = qr.pivots;
    idx.sort_unstable();
    Ok(idx)
}

/// Nonnegative weights for fixed nodes and the worst residual over the
/// whole family.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    /// One weight per node; zero weights mark removable nodes.
    pub weights: Vec<f64>,
    /// `max |Σ w_i φ(ξ_i) - k(t)|` over every integrand.
    pub residual: f64,
    /// `(ν, ρ, t)` of the worst integrand.
    pub worst: (f64, f64, f64),
}

/// Nonnegative least-squares weights on the sketch rows, checked against
/// every integrand.
///
/// Fails when the worst residual exceeds `ε/2`.
pub fn solve_weights(fam: &IntegrandFamily, nodes: &[f64]) -> Result<WeightSolution> {
    let sol = weights_unchecked(fam, &fam.sketch, nodes);
    if !(sol.residual <= fam.epsilon / 2.0) {
        return Err(Error::Build {
            stage: "weights",
            message: format!(
                "residual {:.3e} exceeds {:.3e} at (nu={:.4}, rho={:.4}, t={:.4})",
                sol.residual,
                fam.epsilon / 2.0,
                sol.worst.0,
                sol.worst.1,
                sol.worst.2
            ),
        });
    }
    Ok(sol)
}

fn weights_unchecked(fam: &IntegrandFamily, rows: &[usize], nodes: &[f64]) -> WeightSolution {
    let a = fam.matrix_at(rows, nodes);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&r| fam.targets[r]));
    let w = if a.nrows() > a.ncols() {
        let qr = a.qr();
        let qtb = qr.q().transpose() * &b;
        nnls(&qr.r(), &qtb, 50 * nodes.len() + 100)
    } else {
        nnls(&a, &b, 50 * nodes.len() + 100)
    };
    let weights: Vec<f64> = w.iter().copied().collect();
    let (residual, row) = fam.max_residual(nodes, &weights);
    WeightSolution {
        weights,
        residual,
        worst: fam.row_params(row),
    }
}

/// Result of [`refine_rule`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub residual_before: f64,
    pub residual_after: f64,
    /// False when no node could be removed and the input came back as is.
    pub improved: bool,
}

/// Removes nodes one at a time while the family residual stays below
/// `max(ε/2, entry residual)`, re-fitting positions and log-weights by damped Gauss–Newton after
/// each removal.
///
/// Never fails: a rule that cannot be improved, or that does not meet the
/// `10ε` entry tolerance, is returned unchanged.
pub fn refine_rule(rule: &QuadratureRule, fam: &IntegrandFamily) -> (QuadratureRule, RefineReport) {
    let eps = fam.epsilon;
    let (res0, _) = fam.max_residual(rule.nodes(), rule.weights());
    let unchanged = |res: f64| RefineReport {
        nodes_before: rule.len(),
        nodes_after: rule.len(),
        residual_before: res,
        residual_after: res,
        improved: false,
    };
    if !(res0 <= 10.0 * eps) {
        info!("refine: entry residual {res0:.3e} above 10 eps, skipped");
        return (rule.clone(), unchanged(res0));
    }

    // never trade accuracy for nodes: a rule entering above ε/2 may shrink
    // only while it stays at its entry residual
    let target = (0.5 * eps).max(res0);
    let mut ctx = Refiner::new(fam, rule.nodes(), target);
    let mut xs = rule.nodes().to_vec();
    let mut ws = rule.weights().to_vec();
    let mut removed = 0;

    loop {
        let order = ctx.significance_order(&xs, &ws);
        let mut accepted = false;
        for &drop in order.iter().take(3) {
            let mut cx = xs.clone();
            let mut cw = ws.clone();
            cx.remove(drop);
            cw.remove(drop);
            if let Some((nx, nw)) = ctx.fit_and_check(cx, cw) {
                xs = nx;
                ws = nw;
                removed += 1;
                accepted = true;
                debug!("refine: {} nodes", xs.len());
                break;
            }
        }
        if !accepted || xs.len() <= 1 {
            break;
        }
    }

    if removed == 0 {
        return (rule.clone(), unchanged(res0));
    }
    let (res1, _) = fam.max_residual(&xs, &ws);
    match QuadratureRule::new(xs, ws, *rule.hyper_box(), rule.epsilon()) {
        Ok(out) => {
            let report = RefineReport {
                nodes_before: rule.len(),
                nodes_after: out.len(),
                residual_before: res0,
                residual_after: res1,
                improved: true,
            };
            (out, report)
        }
        Err(_) => (rule.clone(), unchanged(res0)),
    }
}

/// Gauss–Newton node elimination on a row skeleton of the family.
struct Refiner<'a> {
    fam: &'a IntegrandFamily,
    rows: Vec<usize>,
    target: f64,
}

impl<'a> Refiner<'a> {
    fn new(fam: &'a IntegrandFamily, nodes: &[f64], target: f64) -> Self {
        // rows that pin down the initial Jacobian [F | F']
        let sketch = &fam.sketch;
        let m = nodes.len();
        let mut jt = DMatrix::<f64>::zeros(2 * m, sketch.len());
        for (c, &r) in sketch.iter().enumerate() {
            for (i, &x) in nodes.iter().enumerate() {
                let (f, df) = fam.integrand_with_slope(r, x);
                jt[(i, c)] = f;
                jt[(m + i, c)] = df;
            }
        }
        // balance value and slope blocks
        for i in 0..2 * m {
            let norm = jt.row(i).norm();
            if norm > 0.0 {
                jt.row_mut(i).scale_mut(1.0 / norm);
            }
        }
        let qr = pivoted_qr(jt, 1e-10, 2 * m);
        let mut rows: Vec<usize> = qr.pivots.iter().map(|&c| sketch[c]).collect();
        rows.sort_unstable();
        Self { fam, rows, target }
    }

    fn significance_order(&self, xs: &[f64], ws: &[f64]) -> Vec<usize> {
        let mut sig: Vec<(f64, usize)> = xs
            .iter()
            .zip(ws)
            .enumerate()
            .map(|(i, (&x, &w))| {
                let s: f64 = self.rows.iter().map(|&r| self.fam.integrand(r, x).powi(2)).sum();
                (w * s.sqrt(), i)
            })
            .collect();
        sig.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        sig.into_iter().map(|(_, i)| i).collect()
    }

    /// Fits the reduced rule on the skeleton and verifies it on the whole
    /// family, adding violated rows to the skeleton and retrying once.
    fn fit_and_check(&mut self, xs: Vec<f64>, ws: Vec<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
        let (mut xs, mut ws) = (xs, ws);
        for _ in 0..2 {
            let (nx, nw, ok) = self.gauss_newton(xs, ws, 40);
            if !ok {
                return None;
            }
            let bad = self.fam.violators(&nx, &nw, self.target, 50);
            if bad.is_empty() {
                return Some((nx, nw));
            }
            for r in bad {
                if let Err(pos) = self.rows.binary_search(&r) {
                    self.rows.insert(pos, r);
                }
            }
            xs = nx;
            ws = nw;
        }
        None
    }

    fn residual(&self, xs: &[f64], ws: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&r| {
                let s: f64 = xs.iter().zip(ws).map(|(&x, &w)| w * self.fam.integrand(r, x)).sum();
                s - self.fam.targets[r]
            })
            .collect()
    }

    /// Levenberg–Marquardt in `(log w, ξ)` with steps limited to a fraction
    /// of the local node spacing.
    fn gauss_newton(&self, mut xs: Vec<f64>, mut ws: Vec<f64>, iters: usize) -> (Vec<f64>, Vec<f64>, bool) {
        let m = xs.len();
        let nr = self.rows.len();
        let mut r = self.residual(&xs, &ws);
        let inf = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let l2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
        let mut lambda = 1e-3;
        for _ in 0..iters {
            if inf(&r) <= self.target {
                return (xs, ws, true);
            }
            let mut jac = DMatrix::<f64>::zeros(nr, 2 * m);
            for (k, &row) in self.rows.iter().enumerate() {
                for i in 0..m {
                    let (f, df) = self.fam.integrand_with_slope(row, xs[i]);
                    jac[(k, i)] = f * ws[i];
                    jac[(k, m + i)] = df * ws[i];
                }
            }
            let scale: Vec<f64> = (0..2 * m).map(|j| jac.column(j).norm().max(1e-300)).collect();
            for (j, s) in scale.iter().enumerate() {
                jac.column_mut(j).scale_mut(1.0 / s);
            }
            let jtj = jac.transpose() * &jac;
            let rv = DVector::from_column_slice(&r);
            let jtr = jac.transpose() * rv;
            let gaps = spacing(&xs, self.fam.xi_max * 1.5);
            let cur = l2(&r);
            loop {
                let mut sys = jtj.clone();
                for j in 0..2 * m {
                    sys[(j, j)] += lambda;
                }
                let step = match sys.cholesky() {
                    Some(ch) => ch.solve(&(-&jtr)),
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e6 {
                            return (xs, ws, false);
                        }
                        continue;
                    }
                };
                let mut nx = xs.clone();
                let mut nw = ws.clone();
                for i in 0..m {
                    let dl = (step[i] / scale[i]).clamp(-1.0, 1.0);
                    nw[i] = ws[i] * dl.exp();
                    let g = 0.3 * gaps[i];
                    nx[i] = xs[i] + (step[m + i] / scale[m + i]).clamp(-g, g);
                }
                let nr_ = self.residual(&nx, &nw);
                if l2(&nr_) < cur {
                    xs = nx;
                    ws = nw;
                    r = nr_;
                    lambda = (lambda / 3.0).max(1e-12);
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e6 {
                    let ok = inf(&r) <= self.target;
                    return (xs, ws, ok);
                }
            }
        }
        let ok = inf(&r) <= self.target;
        (xs, ws, ok)
    }
}

/// Distance from each node to its nearest neighbour, treating `0` and
/// `upper` as walls.
fn spacing(xs: &[f64], upper: f64) -> Vec<f64> {
    let m = xs.len();
    (0..m)
        .map(|i| {
            let left = if i == 0 { xs[0] } else { xs[i] - xs[i - 1] };
            let right = if i + 1 == m { upper - xs[i] } else { xs[i + 1] - xs[i] };
            left.min(right).max(0.0)
        })
        .collect()
}

/// Sizes of an equispaced `(lag, ν, ρ)` validation grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationGrid {
    pub lags: usize,
    pub nus: usize,
    pub rhos: usize,
}

impl ValidationGrid {
    pub fn new(lags: usize, nus: usize, rhos: usize) -> Self {
        Self { lags, nus, rhos }
    }
}

/// Worst pointwise kernel error found by [`validate_rule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub max_error: f64,
    pub at_lag: f64,
    pub at_nu: f64,
    pub at_rho: f64,
    pub points: usize,
}

fn equispaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

/// Maximum of `|k(d) - Σ 2 w_i k̂(ξ_i) cos(2π ξ_i d)|` over an equispaced
/// grid of lags in `[0, b - a]` and hyperparameters spanning `hyper_box`.
pub fn validate_rule(
    rule: &QuadratureRule,
    hyper_box: &HyperBox<f64>,
    grid: ValidationGrid,
) -> ValidationReport {
    let lags = equispaced(0.0, hyper_box.lag_max(), grid.lags.max(1));
    let nus = equispaced(hyper_box.nu_lo, hyper_box.nu_hi, grid.nus);
    let rhos = equispaced(hyper_box.rho_lo, hyper_box.rho_hi, grid.rhos);
    let m = rule.len();
    let mut cos_table = vec![0.0; lags.len() * m];
    for (l, &d) in lags.iter().enumerate() {
        for (i, &x) in rule.nodes().iter().enumerate() {
            cos_table[l * m + i] = (TWO_PI * x * d).cos();
        }
    }
    let combos: Vec<(f64, f64)> =
        nus.iter().flat_map(|&nu| rhos.iter().map(move |&rho| (nu, rho))).collect();
    let worst: Vec<(f64, f64)> = combos
        .par_iter()
        .map(|&(nu, rho)| {
            let p = MaternParams::new(nu, rho).expect("box parameters are valid");
            let pc = PairConsts::new(nu, rho);
            let v: Vec<f64> = rule
                .nodes()
                .iter()
                .zip(rule.weights())
                .map(|(&x, &w)| 2.0 * w * pc.density(x))
                .collect();
            let mut best = (0.0f64, 0.0);
            for (l, &d) in lags.iter().enumerate() {
                let approx: f64 =
                    cos_table[l * m..(l + 1) * m].iter().zip(&v).map(|(c, v)| c * v).sum();
                let err = (approx - matern_kernel_unchecked(d, &p)).abs();
                if err > best.0 || err.is_nan() {
                    best = (err, d);
                }
            }
            best
        })
        .collect();
    let mut report = ValidationReport {
        max_error: 0.0,
        at_lag: 0.0,
        at_nu: nus[0],
        at_rho: rhos[0],
        points: lags.len() * combos.len(),
    };
    for (k, &(err, d)) in worst.iter().enumerate() {
        if err > report.max_error || err.is_nan() {
            report.max_error = err;
            report.at_lag = d;
            report.at_nu = combos[k].0;
            report.at_rho = combos[k].1;
        }
    }
    report
}

/// Diagnostics of a [`build_rule`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub m: usize,
    pub candidates: usize,
    pub nnls_nodes: usize,
    pub xi_max: f64,
    pub panels: usize,
    /// Lag samples of the final family.
    pub lags: usize,
    pub sketch_rows: usize,
    pub exchange_rounds: usize,
    pub family_residual: f64,
    pub validation: ValidationReport,
    pub certified: bool,
    /// `(stage, seconds)` in execution order.
    pub timings: Vec<(&'static str, f64)>,
}

/// Builds a rule for every Matérn kernel in `hyper_box` at tolerance
/// `epsilon`.
///
/// Certification requires the validation error to be below `epsilon`, or
/// below `2 epsilon` with `opts.loose`.
pub fn build_rule(
    hyper_box: &HyperBox<f64>,
    epsilon: f64,
    opts: &BuildOptions,
) -> Result<(QuadratureRule, BuildReport)> {
    if !(1e-8..=1e-2).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon must lie in [1e-8, 1e-2], got {epsilon}")));
    }
    let bound = if opts.loose { 2.0 * epsilon } else { epsilon };
    let mut n = opts.n;
    let mut attempt = build_at(hyper_box, epsilon, opts, n, bound)?;
    for _ in 0..opts.lag_doublings {
        let (_, rep) = &attempt;
        // errors well above the family residual live between sampled lags
        let lag_limited = rep.validation.max_error > 2.0 * rep.family_residual;
        if rep.certified || !lag_limited {
            break;
        }
        n *= 2;
        info!(
            "validation error {:.3e} exceeds family residual {:.3e}; retrying with {n} lags",
            rep.validation.max_error, rep.family_residual
        );
        match build_at(hyper_box, epsilon, opts, n, bound) {
            Ok(next) if next.1.validation.max_error < attempt.1.validation.max_error => attempt = next,
            Ok(_) => break,
            Err(e) => {
                info!("denser lag sampling failed: {e}");
                break;
            }
        }
    }

    let (rule, report) = attempt;
    let validation = &report.validation;
    if !report.certified && opts.require_certificate {
        return Err(Error::Build {
            stage: "validate",
            message: format!(
                "max error {:.3e} at (d={:.4}, nu={:.4}, rho={:.4}) is not below {bound:.1e} (m={})",
                validation.max_error,
                validation.at_lag,
                validation.at_nu,
                validation.at_rho,
                rule.len()
            ),
        });
    }
    Ok((rule, report))
}

fn build_at(
    hyper_box: &HyperBox<f64>,
    epsilon: f64,
    opts: &BuildOptions,
    n: usize,
    bound: f64,
) -> Result<(QuadratureRule, BuildReport)> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let mut fam = family_with_sketch(
        hyper_box,
        opts.p,
        n,
        epsilon,
        opts.sketch_rows,
        opts.seed,
        opts.max_panel_doublings,
    )?;
    lap("family", &mut timings);
    info!(
        "family: {} integrands, xi_max {:.2}, {} panels",
        fam.len(),
        fam.xi_max,
        fam.panels
    );

    // candidates and weights, exchanging violated rows into the sketch and
    // tightening the selection tolerance while the target is missed
    let mut tol = epsilon / 10.0;
    let mut rounds = 0;
    let mut best: Option<(Vec<f64>, WeightSolution)> = None;
    loop {
        let idx = select_with_cap(&fam, tol, opts.node_cap).or_else(|e| match &best {
            Some(_) => Err(e),
            None => select_with_cap(&fam, 0.0, opts.node_cap.min(fam.sketch.len())),
        });
        let Ok(idx) = idx else { break };
        let nodes: Vec<f64> = idx.iter().map(|&i| fam.fine_nodes[i]).collect();
        let rows = fam.sketch.clone();
        let sol = weights_unchecked(&fam, &rows, &nodes);
        info!("round {rounds}: {} candidates, residual {:.3e}", nodes.len(), sol.residual);
        let done = sol.residual <= epsilon / 2.0;
        if best.as_ref().is_none_or(|b| sol.residual < b.1.residual) {
            best = Some((nodes.clone(), sol.clone()));
        }
        if done || rounds >= opts.exchange_rounds {
            break;
        }
        let bad = fam.violators(&nodes, &sol.weights, epsilon / 2.0, 200);
        fam.add_rows(&bad);
        tol /= 2.0;
        rounds += 1;
    }
    let Some((cand_nodes, sol)) = best else {
        return Err(Error::Build {
            stage: "select",
            message: format!("numerical rank exceeds the node cap of {}", opts.node_cap),
        });
    };
    lap("select+weights", &mut timings);
    if !(sol.residual <= 10.0 * epsilon) {
        return Err(Error::Build {
            stage: "weights",
            message: format!(
                "residual {:.3e} after {rounds} exchange rounds exceeds 10 eps",
                sol.residual
            ),
        });
    }

    let candidates = cand_nodes.len();
    let (nodes, weights): (Vec<f64>, Vec<f64>) = cand_nodes
        .iter()
        .zip(&sol.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&x, &w)| (x, w))
        .unzip();
    let nnls_nodes = nodes.len();
    let mut rule = QuadratureRule::new(nodes, weights, *hyper_box, epsilon).map_err(|e| {
        Error::Build {
            stage: "weights",
            message: e.to_string(),
        }
    })?;

    if opts.refine {
        let (refined, rep) = refine_rule(&rule, &fam);
        info!(
            "refine: {} -> {} nodes, residual {:.3e}",
            rep.nodes_before, rep.nodes_after, rep.residual_after
        );
        rule = refined;
    }
    lap("refine", &mut timings);
    let (family_residual, _) = fam.max_residual(rule.nodes(), rule.weights());

    let grid = opts.validation.unwrap_or(ValidationGrid {
        lags: 4 * n,
        nus: opts.p,
        rhos: opts.p,
    });
    let validation = validate_rule(&rule, hyper_box, grid);
    lap("validate", &mut timings);

    let certified = validation.max_error < bound;
    let recorded = if certified { bound } else { validation.max_error };
    let rule = QuadratureRule::new(rule.nodes().to_vec(), rule.weights().to_vec(), *hyper_box, recorded)?;
    let report = BuildReport {
        m: rule.len(),
        candidates,
        nnls_nodes,
        xi_max: fam.xi_max,
        panels: fam.panels,
        lags: n,
        sketch_rows: fam.sketch.len(),
        exchange_rounds: rounds,
        family_residual,
        validation,
        certified,
        timings,
    };
    Ok((rule, report))
}
