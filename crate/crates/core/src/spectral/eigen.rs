//! Eigenvalues of dense symmetric matrices.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! iteration with Wilkinson-style shifts. Only eigenvalues are produced.

use crate::error::{Error, Result};

const MAX_QL_SWEEPS: usize = 64;

/// All eigenvalues of the symmetric `n x n` row-major matrix `a`, unsorted.
///
/// Only the lower triangle is read.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n, "matrix buffer does not match dimension");
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(k) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite entry at ({}, {}) in {n}x{n} matrix",
            k / n,
            k % n
        )));
    }
    let (mut d, mut e) = tridiagonalize(a, n);
    tridiagonal_ql(&mut d, &mut e).map_err(|(l, iters)| {
        Error::Numerical(format!(
            "QL iteration did not converge for eigenvalue {l} after {iters} sweeps; {}",
            diagnostics(a, n)
        ))
    })?;
    Ok(d)
}

fn diagnostics(a: &[f64], n: usize) -> String {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    format!("dim {n}, trace {trace:e}, frobenius {frob:e}, max asymmetry {asym:e}")
}

/// Reduces the lower triangle of `a` to a symmetric tridiagonal matrix.
/// Returns `(diagonal, subdiagonal)` where `subdiagonal[i]` couples `i` and
/// `i + 1` (the last slot is zero).
fn tridiagonalize(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    // Work on a full symmetric copy built from the lower triangle.
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            w[i * n + j] = a[i * n + j];
            w[j * n + i] = a[i * n + j];
        }
    }
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let lo = k + 1;
        let scale: f64 = (lo..n).map(|i| w[i * n + k].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut sigma = 0.0;
        for i in lo..n {
            v[i] = w[i * n + k] / scale;
            sigma += v[i] * v[i];
        }
        let norm = sigma.sqrt();
        let alpha = if v[lo] > 0.0 { -norm } else { norm };
        // H = I - v v^T / h with v = x - alpha e_1
        let h = sigma - v[lo] * alpha;
        v[lo] -= alpha;
        if h == 0.0 {
            continue;
        }
        // p = W v / h
        for i in lo..n {
            let row = &w[i * n..i * n + n];
            p[i] = (lo..n).map(|j| row[j] * v[j]).sum::<f64>() / h;
        }
        let kk = (lo..n).map(|i| v[i] * p[i]).sum::<f64>() / (2.0 * h);
        for i in lo..n {
            p[i] -= kk * v[i];
        }
        for i in lo..n {
            for j in lo..=i {
                let upd = v[i] * p[j] + p[i] * v[j];
                w[i * n + j] -= upd;
                w[j * n + i] = w[i * n + j];
            }
        }
        w[lo * n + k] = alpha * scale;
        w[k * n + lo] = alpha * scale;
        for i in (lo + 1)..n {
            w[i * n + k] = 0.0;
            w[k * n + i] = 0.0;
        }
    }
    let d = (0..n).map(|i| w[i * n + i]).collect();
    let mut e: Vec<f64> = (0..n.saturating_sub(1)).map(|i| w[(i + 1) * n + i]).collect();
    e.push(0.0);
    (d, e)
}

/// Implicit QL on a symmetric tridiagonal matrix; eigenvalues replace `d`.
/// On failure returns the index of the stuck eigenvalue and the sweep count.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> std::result::Result<(), (usize, usize)> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_SWEEPS {
                return Err((l, iter));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                let r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                let r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    #[test]
    fn diagonal_matrix() {
        let a = [3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0];
        assert_eq!(sorted(symmetric_eigenvalues(&a, 3).unwrap()), vec![3.0, 2.0, -1.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] -> 3, 1
        let ev = sorted(symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2).unwrap());
        assert!((ev[0] - 3.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_toeplitz_closed_form() {
        // eigenvalues of tridiag(1, 2, 1) of size n: 2 + 2 cos(k pi / (n + 1))
        let n = 9;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0;
            if i + 1 < n {
                a[i * n + i + 1] = 1.0;
                a[(i + 1) * n + i] = 1.0;
            }
        }
        let got = sorted(symmetric_eigenvalues(&a, n).unwrap());
        let want = sorted(
            (1..=n)
                .map(|k| 2.0 + 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
                .collect(),
        );
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn rejects_nan() {
        assert!(matches!(
            symmetric_eigenvalues(&[f64::NAN], 1),
            Err(Error::Numerical(_))
        ));
    }
}
