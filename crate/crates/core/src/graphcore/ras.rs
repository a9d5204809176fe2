use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result, ScafdsError};

/// Dense row-major exposure matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ExposureMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.values[i * self.cols..(i + 1) * self.cols].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                s[j] += self.values[i * self.cols + j];
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct RasOutcome {
    pub matrix: ExposureMatrix,
    pub iterations: usize,
    /// L1 row-marginal deviation after each row/column sweep.
    pub residuals: Vec<f64>,
}

/// Maximum-entropy bilateral exposures consistent with the given marginals.
pub fn ras_estimate(
    row_marginals: &[f64],
    col_marginals: &[f64],
    forbid_diagonal: bool,
    tol: f64,
    max_iter: usize,
) -> Result<ExposureMatrix> {
    let prior = vec![1.0; row_marginals.len() * col_marginals.len()];
    ras_with_prior(&prior, row_marginals, col_marginals, forbid_diagonal, tol, max_iter).map(|o| o.matrix)
}

/// RAS starting from a nonnegative prior matrix instead of the all-ones
/// matrix. The result is the matrix closest to the prior in relative
/// entropy that meets both marginals.
pub fn ras_with_prior(
    prior: &[f64],
    row_marginals: &[f64],
    col_marginals: &[f64],
    forbid_diagonal: bool,
    tol: f64,
    max_iter: usize,
) -> Result<RasOutcome> {
    let (n, m) = (row_marginals.len(), col_marginals.len());
    if prior.len() != n * m {
        return Err(domain_err!("prior has {} cells for a {n}x{m} matrix", prior.len()));
    }
    if row_marginals.iter().chain(col_marginals).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(domain_err!("marginals must be finite and nonnegative"));
    }
    if prior.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(domain_err!("prior must be finite and nonnegative"));
    }
    let rs: f64 = row_marginals.iter().sum();
    let cs: f64 = col_marginals.iter().sum();
    if (rs - cs).abs() > 1e-6 * rs.max(cs).max(1.0) {
        return Err(ScafdsError::Infeasible(format!(
            "row total {rs} differs from column total {cs}"
        )));
    }
    // bring the column total exactly onto the row total
    let cols: Vec<f64> = if cs > 0.0 {
        col_marginals.iter().map(|c| c * rs / cs).collect()
    } else {
        col_marginals.to_vec()
    };
    let rows = row_marginals;

    let mut x = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let masked = forbid_diagonal && i == j;
            if !masked && rows[i] > 0.0 && cols[j] > 0.0 {
                x[i * m + j] = prior[i * m + j];
            }
        }
    }
    for i in 0..n {
        if rows[i] > 0.0 && x[i * m..(i + 1) * m].iter().all(|&v| v == 0.0) {
            return Err(ScafdsError::Infeasible(format!(
                "row {i} needs {} but has no admissible cell",
                rows[i]
            )));
        }
    }
    for j in 0..m {
        if cols[j] > 0.0 && (0..n).all(|i| x[i * m + j] == 0.0) {
            return Err(ScafdsError::Infeasible(format!(
                "column {j} needs {} but has no admissible cell",
                cols[j]
            )));
        }
    }

    let mut residuals = Vec::new();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            let row = &mut x[i * m..(i + 1) * m];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                let f = rows[i] / s;
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        let mut csum = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                csum[j] += x[i * m + j];
            }
        }
        for j in 0..m {
            if csum[j] > 0.0 {
                let f = cols[j] / csum[j];
                for i in 0..n {
                    x[i * m + j] *= f;
                }
            }
        }
        residual = (0..n)
            .map(|i| (x[i * m..(i + 1) * m].iter().sum::<f64>() - rows[i]).abs())
            .sum();
        residuals.push(residual);
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(ScafdsError::Convergence {
            iterations,
            residual,
        });
    }
    Ok(RasOutcome {
        matrix: ExposureMatrix {
            rows: n,
            cols: m,
            values: x,
        },
        iterations,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_fill() {
        let m = ras_estimate(&[1.0, 1.0], &[1.0, 1.0], false, 1e-12, 100).unwrap();
        for v in m.values {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_marginal_row() {
        let m = ras_estimate(&[2.0, 0.0], &[1.0, 1.0], false, 1e-12, 100).unwrap();
        assert_eq!(m.values, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unreachable_column_is_infeasible() {
        // with the diagonal masked, column 0 can only be fed by row 1
        let r = ras_estimate(&[2.0, 0.0], &[1.0, 1.0], true, 1e-12, 100);
        assert!(matches!(r, Err(ScafdsError::Infeasible(_))));
    }

    #[test]
    fn mismatched_totals_are_infeasible() {
        let r = ras_estimate(&[1.0, 1.0], &[1.0, 2.0], false, 1e-12, 100);
        assert!(matches!(r, Err(ScafdsError::Infeasible(_))));
    }

    #[test]
    fn non_convergence_reports_residual() {
        // Hall's condition fails: rows 0 and 1 both live only in column 2
        let prior = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let r = ras_with_prior(&prior, &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], false, 1e-12, 50);
        match r {
            Err(ScafdsError::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 50);
                assert!(residual > 0.1);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
