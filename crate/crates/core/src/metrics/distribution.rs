//! Feature-distribution metrics: FID, cosine diversity and within-caption spread.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{HaoiError, Result};

/// Ridge added to both covariances when either is rank deficient.
pub const FID_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidResult {
    pub value: f64,
    pub ridge_applied: bool,
}

fn check_rows(name: &str, rows: &[Vec<f64>], min: usize) -> Result<usize> {
    if rows.len() < min {
        return Err(HaoiError::validation(format!(
            "{name}: need at least {min} vectors, got {}",
            rows.len()
        )));
    }
    let f = rows[0].len();
    if f == 0 {
        return Err(HaoiError::validation(format!("{name}: vectors are empty")));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != f {
            return Err(HaoiError::validation(format!("{name}: row {i} has length {}, expected {f}", r.len())));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation(format!("{name}: row {i} is not finite")));
        }
    }
    Ok(f)
}

/// Mean and unbiased covariance of the rows.
pub fn mean_covariance(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let f = rows[0].len();
    let mut mu = DVector::zeros(f);
    for r in rows {
        mu += DVector::from_column_slice(r);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(f, f);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mu;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (n as f64 - 1.0).max(1.0);
    (mu, cov)
}

/// Square root of a symmetric positive semidefinite matrix; negative eigenvalues are clamped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2(Σ_r Σ_g)^{1/2})`.
///
/// The trace of the product root is taken as `Tr((√Σ_r Σ_g √Σ_r)^{1/2})`.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<FidResult> {
    let f = check_rows("fid real", real, 2)?;
    let g = check_rows("fid generated", generated, 2)?;
    if f != g {
        return Err(HaoiError::validation(format!("fid: feature sizes differ ({f} vs {g})")));
    }
    let (mu_r, mut cov_r) = mean_covariance(real);
    let (mu_g, mut cov_g) = mean_covariance(generated);
    let ridge_applied = min_eigenvalue(&cov_r) <= 0.0 || min_eigenvalue(&cov_g) <= 0.0;
    if ridge_applied {
        for i in 0..f {
            cov_r[(i, i)] += FID_RIDGE;
            cov_g[(i, i)] += FID_RIDGE;
        }
    }
    let root_r = psd_sqrt(&cov_r);
    let inner = &root_r * &cov_g * &root_r;
    let cross = SymmetricEigen::new((&inner + inner.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum::<f64>();
    let value = (mu_r - mu_g).norm_squared() + cov_r.trace() + cov_g.trace() - 2.0 * cross;
    Ok(FidResult {
        value: value.max(0.0),
        ridge_applied,
    })
}

/// Mean pairwise cosine distance `1 − cos(f_i, f_j)` over all pairs.
pub fn diversity(rows: &[Vec<f64>]) -> Result<f64> {
    check_rows("diversity", rows, 2)?;
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|n| *n == 0.0) {
        return Err(HaoiError::validation(format!("diversity: row {i} is a zero vector")));
    }
    let n = rows.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            sum += 1.0 - dot / (norms[i] * norms[j]);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Rows standardized per dimension by the mean and deviation of `reference`
/// (dimensions with zero deviation are only centered).
pub fn standardize(rows: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let f = check_rows("standardize reference", reference, 2)?;
    check_rows("standardize", rows, 1)?;
    let (mu, cov) = mean_covariance(reference);
    Ok(rows
        .iter()
        .map(|r| {
            (0..f)
                .map(|k| {
                    let sd = cov[(k, k)].sqrt();
                    let c = r[k] - mu[k];
                    if sd > 0.0 {
                        c / sd
                    } else {
                        c
                    }
                })
                .collect()
        })
        .collect())
}

fn mean_pairwise_distance(group: &[Vec<f64>]) -> f64 {
    let k = group.len();
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += group[i].iter().zip(&group[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    2.0 * sum / (k * (k - 1)) as f64
}

/// Mean over groups of the within-group average pairwise Euclidean distance.
pub fn mmodality(groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(HaoiError::validation("mmodality: no caption group has two or more samples"));
    }
    for (g, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            return Err(HaoiError::validation(format!("mmodality: group {g} has fewer than two samples")));
        }
        let len = group[0].len();
        if group.iter().any(|v| v.len() != len) {
            return Err(HaoiError::Invariant(format!("mmodality: group {g} has vectors of unequal length")));
        }
    }
    Ok(groups.iter().map(|g| mean_pairwise_distance(g)).sum::<f64>() / groups.len() as f64)
}
