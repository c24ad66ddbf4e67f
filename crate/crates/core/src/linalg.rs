// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular values below `RELATIVE_CUTOFF * sigma_max` are treated as zero.
pub const RELATIVE_CUTOFF: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse together with the spectrum it was cut from.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

impl PseudoInverse {
    /// `sigma_max / sigma_min` over the full spectrum; infinite when rank deficient.
    pub fn condition_number(&self) -> f64 {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        let min = self.singular_values.last().copied().unwrap_or(0.0);
        if self.rank < self.singular_values.len() || min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// SVD-based pseudo-inverse with a relative singular-value cutoff.
///
/// The decomposition comes from `faer`; nalgebra's SVD does not converge
/// reliably on rank-deficient input.
pub fn pseudo_inverse(m: &DMatrix<f64>, relative_cutoff: f64) -> Result<PseudoInverse> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::DegenerateLayer);
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateLayer);
    }
    let svd = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)])
        .thin_svd()
        .map_err(|_| Error::DegenerateLayer)?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();

    let mut sigma: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    let sigma_max = sigma.iter().copied().fold(0.0_f64, f64::max);
    if sigma_max.is_nan() || sigma_max <= 0.0 {
        return Err(Error::DegenerateLayer);
    }
    let cutoff = relative_cutoff * sigma_max;

    // pinv = sum over kept i of v_i (1 / s_i) u_i^T
    let mut pinv = DMatrix::<f64>::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in sigma.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        rank += 1;
        for r in 0..cols {
            let vr = v[(r, i)] / s;
            for c in 0..rows {
                pinv[(r, c)] += vr * u[(c, i)];
            }
        }
    }
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(PseudoInverse {
        matrix: pinv,
        singular_values: sigma,
        rank,
    })
}

/// Largest absolute elementwise difference between two equally shaped matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
