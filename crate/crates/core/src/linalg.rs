use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for rank and definiteness decisions.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `x * beta ~ y` from a thin SVD.
pub(crate) struct LeastSquares {
    pub beta: DVector<f64>,
    /// `(X'X)^{-1}`, assembled from the same decomposition.
    pub xtx_inv: DMatrix<f64>,
}

/// Solves a least-squares problem through the singular value decomposition.
/// On rank deficiency returns the indices of the columns that load on the
/// near-null right singular vectors.
pub(crate) fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> std::result::Result<LeastSquares, Vec<usize>> {
    let k = x.ncols();
    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let u = svd.u.as_ref().expect("u requested");
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = RANK_TOL * s_max;

    let mut offending = Vec::new();
    for (j, &sj) in s.iter().enumerate() {
        if !(sj > cutoff) || s_max == 0.0 {
            let row = v_t.row(j);
            for c in 0..k {
                if row[c].abs() > 0.1 && !offending.contains(&c) {
                    offending.push(c);
                }
            }
        }
    }
    if !offending.is_empty() || s.len() < k {
        offending.sort_unstable();
        return Err(offending);
    }

    // beta = V S^{-1} U' y
    let uty = u.transpose() * y;
    let mut scaled = uty;
    for j in 0..k {
        scaled[j] /= s[j];
    }
    let beta = v_t.transpose() * scaled;

    let mut vs = v_t.transpose();
    for j in 0..k {
        let inv = 1.0 / s[j];
        vs.column_mut(j).scale_mut(inv);
    }
    let xtx_inv = &vs * vs.transpose();
    Ok(LeastSquares { beta, xtx_inv })
}

/// Inverse of a symmetric positive definite matrix via its eigendecomposition.
/// Eigenvalues below `RANK_TOL * largest` are refused rather than truncated.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = &eig.eigenvalues;
    let (mut i_min, mut i_max) = (0, 0);
    for i in 0..vals.len() {
        if vals[i] < vals[i_min] {
            i_min = i;
        }
        if vals[i] > vals[i_max] {
            i_max = i;
        }
    }
    let largest = vals[i_max];
    let smallest = vals[i_min];
    if !(largest > 0.0) || !(smallest > RANK_TOL * largest) {
        let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
        return Err(Error::SingularInformation {
            ratio,
            direction: eig.eigenvectors.column(i_min).iter().cloned().collect(),
        });
    }
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..vals.len() {
        scaled.column_mut(j).scale_mut(1.0 / vals[j]);
    }
    let inv = &scaled * eig.eigenvectors.transpose();
    // exact symmetry
    Ok((&inv + inv.transpose()) * 0.5)
}

pub(crate) fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let k = v.len();
    let mut acc = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += m[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let k = v.len();
    (0..m.nrows())
        .map(|i| (0..k).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_solution() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let ls = lstsq(&x, &y).unwrap();
        assert!((ls.beta[0] - 1.0).abs() < 1e-12);
        assert!((ls.beta[1] - 2.0).abs() < 1e-12);
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!((ls.xtx_inv - direct).amax() < 1e-12);
    }

    #[test]
    fn lstsq_flags_duplicate_columns() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 5.0, 5.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let cols = lstsq(&x, &y).err().unwrap();
        assert_eq!(cols, vec![1, 2]);
    }

    #[test]
    fn spd_inverse_refuses_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match spd_inverse(&m) {
            Err(Error::SingularInformation { direction, .. }) => {
                assert!((direction[0].abs() - direction[1].abs()).abs() < 1e-12);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = spd_inverse(&m).unwrap();
        assert!((&m * inv - DMatrix::identity(2, 2)).amax() < 1e-14);
    }
}
