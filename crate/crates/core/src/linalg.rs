//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SaeError};

/// Solves the weighted normal equations `(XᵀWX) β = XᵀW y`, returning `β`
/// and the Cholesky factor of `XᵀWX`.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    weights: &[f64],
    y: &[f64],
) -> Result<(DVector<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let p = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for (j, (&w, &yj)) in weights.iter().zip(y).enumerate() {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = x[(j, a)] * w;
            xtwy[a] += xa * yj;
            for b in 0..=a {
                xtwx[(a, b)] += xa * x[(j, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }
    let chol = xtwx
        .cholesky()
        .ok_or_else(|| SaeError::Singular("weighted design matrix is not positive definite".into()))?;
    let beta = chol.solve(&xtwy);
    Ok((beta, chol))
}

/// Ordinary least squares.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let w = vec![1.0; y.len()];
    weighted_least_squares(x, &w, y).map(|(b, _)| b.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let b = ols(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(ols(&x, &[1.0, 2.0, 3.0]), Err(SaeError::Singular(_))));
    }
}
