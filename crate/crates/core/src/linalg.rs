//! Dense helpers not provided by nalgebra: column-pivoted Householder QR
//! with a norm threshold, Lawson–Hanson nonnegative least squares and a
//! sorted symmetric eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

/// Outcome of a truncated column-pivoted QR.
#[derive(Debug, Clone)]
pub(crate) struct PivotedQr {
    /// Original column indices in pivot order.
    pub pivots: Vec<usize>,
    /// `|R_kk|` for each accepted pivot.
    #[cfg_attr(not(test), allow(dead_code))]
    pub r_diag: Vec<f64>,
}

/// Householder QR with column pivoting, stopped once the largest residual
/// column norm is `<= tol` or `max_rank` pivots were taken.
///
/// Ties in the pivot choice go to the lowest original column index, and the
/// result does not depend on the number of threads.
pub(crate) fn pivoted_qr(mut a: DMatrix<f64>, tol: f64, max_rank: usize) -> PivotedQr {
    let (rows, cols) = a.shape();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut norms: Vec<f64> = a
        .as_slice()
        .par_chunks(rows.max(1))
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let mut r_diag = Vec::new();
    let steps = rows.min(cols).min(max_rank);

    for k in 0..steps {
        let mut best = k;
        for j in k + 1..cols {
            if norms[j] > norms[best] || (norms[j] == norms[best] && perm[j] < perm[best]) {
                best = j;
            }
        }
        if norms[best].sqrt() <= tol {
            break;
        }
        if best != k {
            a.swap_columns(k, best);
            norms.swap(k, best);
            perm.swap(k, best);
        }

        // reflector for column k, rows k..
        let (v, beta, alpha) = {
            let col = &a.as_slice()[k * rows + k..(k + 1) * rows];
            let sigma: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            let alpha = if col[0] > 0.0 { -sigma } else { sigma };
            let mut v = col.to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            (v, beta, alpha)
        };
        r_diag.push(alpha.abs());
        {
            let s = &mut a.as_mut_slice()[k * rows..(k + 1) * rows];
            s[k] = alpha;
            for x in &mut s[k + 1..] {
                *x = 0.0;
            }
        }

        let trailing = &mut a.as_mut_slice()[(k + 1) * rows..];
        let updated: Vec<f64> = trailing
            .par_chunks_mut(rows)
            .map(|c| {
                let tail = &mut c[k..];
                let dot: f64 = tail.iter().zip(&v).map(|(x, y)| x * y).sum();
                let f = beta * dot;
                for (x, y) in tail.iter_mut().zip(&v) {
                    *x -= f * y;
                }
                tail[1..].iter().map(|x| x * x).sum()
            })
            .collect();
        norms[k + 1..].copy_from_slice(&updated);
    }

    let rank = r_diag.len();
    perm.truncate(rank);
    PivotedQr {
        pivots: perm,
        r_diag,
    }
}

/// Lawson–Hanson active-set solution of `min ||A w - b||` subject to
/// `w >= 0`.
///
/// Tall problems should be reduced to their `R` factor first. Passive
/// subproblems are solved by QR of the passive columns rather than through
/// normal equations, which would square an already large condition number.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let n = a.ncols();
    let atb = a.transpose() * b;
    let tol = 1e-13 * atb.amax().max(1e-300);

    let mut w = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut iter = 0;

    loop {
        let grad = a.transpose() * (b - a * &w);
        let mut pick = None;
        let mut best = tol;
        for j in 0..n {
            if !passive[j] && grad[j] > best {
                best = grad[j];
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        passive[j] = true;

        loop {
            iter += 1;
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_passive(a, b, &idx);
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in idx.iter().zip(z.iter()) {
                    w[i] = v;
                }
                break;
            }
            // step back to the feasible boundary
            let mut alpha = f64::INFINITY;
            for (&i, &zi) in idx.iter().zip(z.iter()) {
                if zi <= 0.0 {
                    let t = w[i] / (w[i] - zi);
                    if t < alpha {
                        alpha = t;
                    }
                }
            }
            for (&i, &zi) in idx.iter().zip(z.iter()) {
                w[i] += alpha * (zi - w[i]);
            }
            let floor = 1e-15 * w.amax();
            for &i in &idx {
                if w[i] <= floor {
                    w[i] = 0.0;
                    passive[i] = false;
                }
            }
            if iter > max_iter {
                return w;
            }
        }
        if iter > max_iter {
            break;
        }
    }
    w
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let k = idx.len();
    let sub = a.select_columns(idx);
    if sub.nrows() >= k {
        let qr = sub.clone().qr();
        let r = qr.r();
        let rmax = r.diagonal().amax();
        if r.diagonal().iter().all(|d| d.abs() > 1e-14 * rmax) {
            let qtb = qr.q().transpose() * b;
            if let Some(z) = r.solve_upper_triangular(&qtb) {
                return z;
            }
        }
    }
    sub.svd(true, true)
        .solve(b, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(k))
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors permuted to match.
pub(crate) fn symmetric_eigen_desc(m: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let s = DVector::from_fn(n, |r, _| eig.eigenvalues[order[r]]);
    (u, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_qr_finds_rank_and_prefers_large_columns() {
        // columns 0 and 2 are multiples of column 1
        let a = DMatrix::from_row_slice(4, 4, &[
            1.0, 2.0, 4.0, 0.0, //
            2.0, 4.0, 8.0, 1.0, //
            0.0, 0.0, 0.0, 1.0, //
            1.0, 2.0, 4.0, 0.0,
        ]);
        let qr = pivoted_qr(a, 1e-12, 10);
        assert_eq!(qr.pivots.len(), 2);
        assert_eq!(qr.pivots[0], 2);
        assert!(qr.r_diag[0] >= qr.r_diag[1]);
    }

    #[test]
    fn pivoted_qr_ties_pick_lowest_index() {
        let a = DMatrix::<f64>::identity(3, 3);
        let qr = pivoted_qr(a, 0.0, 3);
        assert_eq!(qr.pivots, vec![0, 1, 2]);
    }

    #[test]
    fn nnls_matches_unconstrained_solution_when_feasible() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let w_true = DVector::from_vec(vec![0.5, 2.0]);
        let b = &a * &w_true;
        let w = nnls(&a, &b, 100);
        assert!((w - w_true).amax() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_components() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -3.0]);
        let w = nnls(&a, &b, 100);
        assert_eq!(w[1], 0.0);
        assert!((w[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_is_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let (u, s) = symmetric_eigen_desc(m.clone());
        assert!(s[0] >= s[1] && s[1] >= s[2]);
        let recon = &u * DMatrix::from_diagonal(&s) * u.transpose();
        assert!((recon - m).amax() < 1e-12);
    }
}
