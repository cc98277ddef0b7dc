//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix permuted to match).
/// Returns `None` if the input has non-finite entries.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // stable sort keeps the solver's order among exact ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Some((values, vectors))
}

/// Flips column signs so each column's largest-magnitude entry is positive
/// (first such entry on ties).
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > best.abs() {
                best = *v;
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Sine of the largest principal angle between the column spans of two
/// matrices with orthonormal columns and equal column count.
pub fn largest_principal_angle_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let prod = a.transpose() * b;
    let sv = prod.singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    (1.0 - smallest * smallest).max(0.0).sqrt()
}

/// Orthonormal basis of the orthogonal complement of the span of `basis`
/// (n×d with orthonormal columns), as an n×(n−d) matrix.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let projector = DMatrix::identity(n, n) - basis * basis.transpose();
    let (values, vectors) =
        sorted_symmetric_eigen(&projector).expect("projector of a finite basis is finite");
    let k = n - basis.ncols();
    debug_assert!(values[..k].iter().all(|v| (v - 1.0).abs() < 1e-8));
    vectors.columns(0, k).into_owned()
}

pub fn dvec(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_come_out_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (values, vectors) = sorted_symmetric_eigen(&m).unwrap();
        assert_eq!(values, vec![5.0, 3.0, 1.0]);
        assert!((vectors.column(0).abs() - dvec(&[0.0, 1.0, 0.0])).norm() < 1e-14);
        let mut bad = m.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(sorted_symmetric_eigen(&bad).is_none());
    }

    #[test]
    fn principal_angle_of_rotated_line() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let t: f64 = 0.3;
        let b = DMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()]);
        assert!((largest_principal_angle_sine(&a, &b) - t.sin()).abs() < 1e-14);
        assert_eq!(largest_principal_angle_sine(&a, &a), 0.0);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let s = 0.5f64.sqrt();
        let basis = DMatrix::from_column_slice(3, 1, &[s, s, 0.0]);
        let c = orthogonal_complement(&basis);
        assert_eq!(c.ncols(), 2);
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((basis.transpose() * &c).norm() < 1e-12);
    }

    #[test]
    fn column_signs_are_canonical() {
        let mut m = DMatrix::from_column_slice(2, 2, &[-0.6, 0.8, -0.8, 0.6]);
        normalize_column_signs(&mut m);
        assert_eq!(m, DMatrix::from_column_slice(2, 2, &[-0.6, 0.8, 0.8, -0.6]));
    }
}
