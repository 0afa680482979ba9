//! Small dense kernels: in-place QR, orthonormal bases, complements and
//! subspace intersections.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Reorthonormalize the columns of `m` in place (Gram-Schmidt, two passes).
///
/// On return `m` holds Q with orthonormal columns and `r` (k×k) the upper
/// triangular factor with a nonnegative diagonal, so that the input equals Q·R.
pub fn qr_in_place(m: &mut DMatrix<f64>, r: &mut DMatrix<f64>) {
    let (n, k) = m.shape();
    debug_assert_eq!(r.shape(), (k, k));
    r.fill(0.0);
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let mut dot = 0.0;
                for row in 0..n {
                    dot += m[(row, i)] * m[(row, j)];
                }
                for row in 0..n {
                    let qi = m[(row, i)];
                    m[(row, j)] -= dot * qi;
                }
                r[(i, j)] += dot;
            }
        }
        let norm = m.column(j).norm();
        r[(j, j)] = norm;
        if norm > 0.0 {
            m.column_mut(j).unscale_mut(norm);
        }
    }
}

/// Orthonormal basis of the column span of `m`, dropping directions whose
/// singular value falls below `tol` times the largest.
pub fn orthonormal_span(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let mut idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol * smax)
        .collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    DMatrix::from_fn(n, idx.len(), |r, c| u[(r, idx[c])])
}

/// Orthonormal basis of the orthogonal complement of the (orthonormal) columns of `basis`.
pub fn complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    let proj = DMatrix::identity(n, n) - basis * basis.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let cols: Vec<DVector<f64>> = idx[..n - k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let mut q = DMatrix::from_columns(&cols);
    let mut r = DMatrix::zeros(n - k, n - k);
    qr_in_place(&mut q, &mut r);
    q
}

/// Intersection of two subspaces given by orthonormal bases.
///
/// Returns the basis of `A ∩ B` computed as the complement of `A^⊥ + B^⊥`,
/// together with the singular values of the stacked complement bases (their
/// minimum measures how cleanly the expected dimension is attained).
pub fn intersection(a: &DMatrix<f64>, b: &DMatrix<f64>, expected_dim: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.nrows();
    let ca = complement(a);
    let cb = complement(b);
    let mut stacked = DMatrix::zeros(n, ca.ncols() + cb.ncols());
    stacked.columns_mut(0, ca.ncols()).copy_from(&ca);
    stacked.columns_mut(ca.ncols(), cb.ncols()).copy_from(&cb);
    if stacked.ncols() == 0 {
        return (DMatrix::identity(n, n), Vec::new());
    }
    let svd = stacked.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]));
    sv.sort_by(|x, y| y.total_cmp(x));
    let keep = n.saturating_sub(expected_dim).min(idx.len());
    let span = DMatrix::from_fn(n, keep, |r, c| u[(r, idx[c])]);
    (complement(&span), sv)
}

/// Smallest singular value of `m` (0 for an empty matrix).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_reproduces_input() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.0, 1.0, 1.0]);
        let mut q = a.clone();
        let mut r = DMatrix::zeros(3, 3);
        qr_in_place(&mut q, &mut r);
        assert!((&q * &r - &a).norm() < 1e-12);
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).norm() < 1e-12);
        for i in 0..3 {
            assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn complement_is_orthogonal() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = complement(&b);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * &c).norm() < 1e-12);
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn intersection_of_coordinate_planes() {
        // span{e1,e2} ∩ span{e2,e3} = span{e2}
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let (i, sv) = intersection(&a, &b, 1);
        assert_eq!(i.ncols(), 1);
        assert!((i[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(sv.iter().all(|&s| s > 0.5));
    }
}
