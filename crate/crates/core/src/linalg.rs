//! Minimal dense linear algebra for least squares: Householder QR and a
//! Cholesky solve for small Gram systems.

/// Column-major n x p matrix.
#[derive(Debug, Clone)]
pub struct ColMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl ColMatrix {
    pub fn from_columns(columns: &[&[f64]]) -> ColMatrix {
        let n_cols = columns.len();
        let n_rows = columns.first().map(|c| c.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for col in columns {
            assert_eq!(col.len(), n_rows);
            data.extend_from_slice(col);
        }
        ColMatrix {
            n_rows,
            n_cols,
            data,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }

    #[inline]
    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    /// Unscaled coefficient covariance (X'X)^-1; multiply by the residual
    /// variance to get the sampling covariance of the coefficients.
    pub xtx_inverse: Vec<Vec<f64>>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum SolveError {
    RankDeficient,
}

/// Solves min ||X b - y||^2 by Householder QR, without forming X'X.
///
/// Rank deficiency is detected from the R diagonal against a relative
/// tolerance, which is the reason for preferring orthogonalization here.
#[allow(clippy::needless_range_loop)] // triangular solves read clearest indexed
pub fn least_squares(x: &ColMatrix, y: &[f64]) -> Result<LeastSquares, SolveError> {
    let n = x.n_rows;
    let p = x.n_cols;
    assert_eq!(y.len(), n);
    assert!(n >= p && p > 0, "need at least as many rows as columns");

    let mut a = x.clone();
    let mut rhs = y.to_vec();

    // Householder vectors are stored below the diagonal of `a`; the essential
    // part of each reflector is normalized so v[k] = 1 implicitly.
    let mut r_diag = vec![0.0f64; p];
    for k in 0..p {
        // Norm of the k-th column below row k.
        let mut norm2 = 0.0;
        {
            let col = a.col(k);
            for &v in &col[k..] {
                norm2 += v * v;
            }
        }
        let norm = norm2.sqrt();
        let akk = a.col(k)[k];
        let alpha = if akk >= 0.0 { -norm } else { norm };
        r_diag[k] = alpha;

        if norm == 0.0 {
            continue; // zero column; rank check below will reject
        }

        // v = x_k - alpha e_k, applied as H = I - 2 v v^T / (v^T v).
        let v0 = akk - alpha;
        let vtv = norm2 - 2.0 * akk * alpha + alpha * alpha;
        {
            let col = a.col_mut(k);
            col[k] = v0;
        }

        // Apply the reflector to the remaining columns and the RHS.
        for j in (k + 1)..p {
            let mut dot = 0.0;
            {
                let vk = a.col(k);
                let cj = a.col(j);
                for i in k..n {
                    dot += vk[i] * cj[i];
                }
            }
            let scale = 2.0 * dot / vtv;
            // Split borrows: copy the reflector segment once.
            let vseg: Vec<f64> = a.col(k)[k..].to_vec();
            let cj = a.col_mut(j);
            for (off, vi) in vseg.iter().enumerate() {
                cj[k + off] -= scale * vi;
            }
        }
        {
            let mut dot = 0.0;
            let vk = a.col(k);
            for i in k..n {
                dot += vk[i] * rhs[i];
            }
            let scale = 2.0 * dot / vtv;
            let vk: Vec<f64> = a.col(k)[k..].to_vec();
            for (off, vi) in vk.iter().enumerate() {
                rhs[k + off] -= scale * vi;
            }
        }
    }

    // Rank check on |R_kk| relative to the largest diagonal magnitude.
    let max_diag = r_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max_diag * 1e-12 * (n as f64).sqrt().max(1.0);
    if max_diag == 0.0 || r_diag.iter().any(|v| v.abs() <= tol) {
        return Err(SolveError::RankDeficient);
    }

    // Back substitution on R b = Q^T y (upper triangle of `a` holds R above
    // the diagonal, with r_diag on it).
    let mut beta = vec![0.0f64; p];
    for k in (0..p).rev() {
        let mut s = rhs[k];
        for j in (k + 1)..p {
            s -= a.col(j)[k] * beta[j];
        }
        beta[k] = s / r_diag[k];
    }

    // RSS from the tail of the transformed RHS.
    let rss: f64 = rhs[p..].iter().map(|v| v * v).sum();

    // (X'X)^-1 = R^-1 R^-T, built column by column from R z = e_j.
    let mut rinv = vec![vec![0.0f64; p]; p]; // rinv[j] = R^-1 e_j
    for j in 0..p {
        let mut z = vec![0.0f64; p];
        z[j] = 1.0;
        for k in (0..=j).rev() {
            let mut s = z[k];
            for l in (k + 1)..=j {
                s -= a.col(l)[k] * z[l];
            }
            z[k] = s / r_diag[k];
        }
        rinv[j] = z;
    }
    let mut xtx_inverse = vec![vec![0.0f64; p]; p];
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            // (R^-1 R^-T)_{ij} = sum_k R^-1[i,k] R^-1[j,k]
            for (k, rk) in rinv.iter().enumerate() {
                let rik = if i <= k { rk[i] } else { 0.0 };
                let rjk = if j <= k { rk[j] } else { 0.0 };
                s += rik * rjk;
            }
            xtx_inverse[i][j] = s;
        }
    }

    Ok(LeastSquares {
        coefficients: beta,
        rss,
        xtx_inverse,
    })
}

/// Solves the symmetric positive-definite system `G b = v` in place via
/// Cholesky. Returns `None` when a pivot falls below `tol` (rank deficient).
#[allow(clippy::needless_range_loop)] // triangular solves read clearest indexed
pub fn cholesky_solve(g: &[Vec<f64>], v: &[f64], tol: f64) -> Option<Vec<f64>> {
    let p = v.len();
    debug_assert_eq!(g.len(), p);
    let mut l = vec![vec![0.0f64; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = g[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= tol {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0f64; p];
    for i in 0..p {
        let mut s = v[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut b = vec![0.0f64; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[k][i] * b[k];
        }
        b[i] = s / l[i][i];
    }
    Some(b)
}
