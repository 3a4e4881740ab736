//! Dense least squares by Householder QR.

use nalgebra::{DMatrix, DVector};

/// Relative threshold on the diagonal of R (after column equilibration)
/// below which the design matrix is treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub(crate) struct LeastSquares {
    pub coeffs: Vec<f64>,
    pub residual_rms: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct RankDeficient {
    pub column: usize,
    pub rows: usize,
    pub cols: usize,
}

impl std::fmt::Display for RankDeficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "design matrix ({} x {}) is rank deficient at column {}",
            self.rows, self.cols, self.column
        )
    }
}

/// Minimizes `|A x - b|_2`. Columns are equilibrated to unit norm before the
/// factorization so the rank test is scale free.
pub(crate) fn solve(mut design: DMatrix<f64>, rhs: &DVector<f64>) -> Result<LeastSquares, RankDeficient> {
    let (rows, cols) = design.shape();
    let deficient = |column| RankDeficient { column, rows, cols };
    if rows < cols {
        return Err(deficient(rows));
    }
    let original = design.clone();
    let mut norms = Vec::with_capacity(cols);
    for (c, mut column) in design.column_iter_mut().enumerate() {
        let norm = column.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(deficient(c));
        }
        column /= norm;
        norms.push(norm);
    }
    let qr = design.qr();
    let r = qr.r();
    let max_diag = r.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if let Some(c) = r
        .diagonal()
        .iter()
        .position(|d| d.abs() <= RANK_TOLERANCE * max_diag)
    {
        return Err(deficient(c));
    }
    let mut qtb = rhs.clone();
    qr.q_tr_mul(&mut qtb);
    let head = qtb.rows(0, cols).into_owned();
    let scaled = r.solve_upper_triangular(&head).ok_or_else(|| deficient(0))?;
    let coeffs: Vec<f64> = scaled.iter().zip(&norms).map(|(z, n)| z / n).collect();
    let fitted = &original * DVector::from_column_slice(&coeffs);
    let residual_rms = ((rhs - fitted).norm_squared() / rows as f64).sqrt();
    Ok(LeastSquares {
        coeffs,
        residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let a = DMatrix::from_fn(20, 2, |r, c| if c == 0 { 1.0 } else { xs[r] });
        let b = DVector::from_iterator(20, xs.iter().map(|x| 3.0 - 2.0 * x));
        let sol = solve(a, &b).unwrap();
        assert!((sol.coeffs[0] - 3.0).abs() < 1e-12);
        assert!((sol.coeffs[1] + 2.0).abs() < 1e-12);
        assert!(sol.residual_rms < 1e-12);
    }

    #[test]
    fn flags_collinear_columns() {
        let a = DMatrix::from_fn(10, 2, |r, _| r as f64 + 1.0);
        let b = DVector::from_element(10, 1.0);
        assert!(solve(a, &b).is_err());
    }

    #[test]
    fn flags_underdetermined() {
        let a = DMatrix::from_fn(2, 3, |r, c| (r + c) as f64);
        assert!(solve(a, &DVector::zeros(2)).is_err());
    }
}
