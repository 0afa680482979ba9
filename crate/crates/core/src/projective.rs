//! Lines and subspaces of a real inner-product space, and the projective
//! metric `d(x̄, ȳ) = (1 - <x,y>²)^{1/2}` on unit representatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::linalg;

/// Below this norm a projected vector is treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// A line in `V`, stored as a unit vector whose first nonzero coordinate is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectivePoint {
    direction: DVector<f64>,
}

impl ProjectivePoint {
    /// Line through a nonzero vector. Returns `None` for the zero vector.
    pub fn new(v: DVector<f64>) -> Option<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let mut direction = v / n;
        if let Some(first) = direction.iter().copied().find(|c| *c != 0.0) {
            if first < 0.0 {
                direction.neg_mut();
            }
        }
        Some(Self { direction })
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    /// Standard basis line `e_{axis}` in dimension `dim`.
    pub fn axis(dim: usize, axis: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[axis] = 1.0;
        Self { direction: v }
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// Image under the linear map `a`: the line through `a x`.
    pub fn transform(&self, a: &DMatrix<f64>) -> Self {
        Self::new(a * &self.direction).expect("invertible map sends a line to a line")
    }

    /// Sign-normalize again; a no-op for any value built through `new`.
    pub fn renormalized(&self) -> Self {
        Self::new(self.direction.clone()).expect("unit vector")
    }
}

/// A linear subspace described by an orthonormal basis (`dim_v × k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Span of the columns of `m`; numerically dependent columns are dropped.
    pub fn span(m: &DMatrix<f64>) -> Self {
        Self { basis: linalg::orthonormal_span(m, 1e-12) }
    }

    pub fn span_of(vectors: &[DVector<f64>], dim_v: usize) -> Self {
        if vectors.is_empty() {
            return Self::trivial(dim_v);
        }
        Self::span(&DMatrix::from_columns(vectors))
    }

    /// Wrap a basis that is already orthonormal.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        debug_assert!(
            basis.ncols() == 0
                || (basis.transpose() * &basis - DMatrix::identity(basis.ncols(), basis.ncols())).norm() < 1e-8
        );
        Self { basis }
    }

    /// `{0}`; its projective space is empty.
    pub fn trivial(dim_v: usize) -> Self {
        Self { basis: DMatrix::zeros(dim_v, 0) }
    }

    pub fn full(dim_v: usize) -> Self {
        Self { basis: DMatrix::identity(dim_v, dim_v) }
    }

    pub fn line(p: &ProjectivePoint) -> Self {
        Self { basis: DMatrix::from_column_slice(p.dim(), 1, p.direction().as_slice()) }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn orthogonal_complement(&self) -> Self {
        Self { basis: linalg::complement(&self.basis) }
    }

    /// Orthogonal projection `P_W x`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(x.len());
        }
        &self.basis * (self.basis.transpose() * x)
    }

    /// Image `A W`.
    pub fn transform(&self, a: &DMatrix<f64>) -> Self {
        if self.dim() == 0 {
            return self.clone();
        }
        Self::span(&(a * &self.basis))
    }

    /// Direct sum of several subspaces of the same ambient space.
    pub fn sum(parts: &[&Subspace]) -> Self {
        let n = parts.first().map(|p| p.ambient_dim()).unwrap_or(0);
        let cols: usize = parts.iter().map(|p| p.dim()).sum();
        let mut m = DMatrix::zeros(n, cols);
        let mut c = 0;
        for p in parts {
            m.columns_mut(c, p.dim()).copy_from(p.basis());
            c += p.dim();
        }
        Self::span(&m)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (x - self.project(x)).norm() <= tol * x.norm()
    }
}

/// `d(x̄,ȳ) = sin ∠(x,y)`, evaluated as `|x−y|·|x+y|/2` on unit vectors so that
/// distances far below `sqrt(eps)` keep full relative precision.
pub fn proj_distance(x: &ProjectivePoint, y: &ProjectivePoint) -> f64 {
    unit_distance(x.direction.as_slice(), y.direction.as_slice())
}

/// Projective distance between two unit vectors given as slices.
#[inline]
pub fn unit_distance(x: &[f64], y: &[f64]) -> f64 {
    let mut minus = 0.0;
    let mut plus = 0.0;
    for (a, b) in x.iter().zip(y) {
        let m = a - b;
        let p = a + b;
        minus += m * m;
        plus += p * p;
    }
    ((minus * plus).sqrt() * 0.5).min(1.0)
}

/// `‖x∧y‖ = sqrt(|x|²|y|² − <x,y>²)` (Gram determinant), clamped at zero.
pub fn wedge_norm(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let g = x.norm_squared() * y.norm_squared() - x.dot(y).powi(2);
    g.max(0.0).sqrt()
}

/// The line spanned by `P_W x`.
pub fn project_point(w: &Subspace, x: &ProjectivePoint) -> Result<ProjectivePoint> {
    let p = w.project(x.direction());
    let norm = p.norm();
    if norm <= DEGENERACY_TOL {
        return Err(LabError::DegenerateProjection { norm });
    }
    Ok(ProjectivePoint::new(p).expect("nonzero projection"))
}

/// `d(x̄, P(W)) = |P_{W^⊥} x|` for a unit representative `x`.
pub fn dist_to_proj_subspace(x: &ProjectivePoint, w: &Subspace) -> Result<f64> {
    if w.dim() == 0 {
        return Err(LabError::EmptyTarget);
    }
    let v = x.direction();
    Ok((v - w.project(v)).norm().min(1.0))
}

/// Sine of the smallest principal angle between `W1` and `W2`, i.e.
/// `min d(x̄,ȳ)` over nonzero `x ∈ W1`, `y ∈ W2`.
///
/// Computed as the smallest singular value of `P_{W1^⊥}·basis(W2)`, which is
/// accurate for nearly coincident subspaces where the cosine route is not.
pub fn principal_angle_min_sin(w1: &Subspace, w2: &Subspace) -> f64 {
    assert!(w1.dim() >= 1 && w2.dim() >= 1, "principal angles need nonzero subspaces");
    let b2 = w2.basis();
    let resid = b2 - w1.basis() * (w1.basis().transpose() * b2);
    linalg::min_singular_value(&resid).clamp(0.0, 1.0)
}

/// Cosine route (`1 − σ_max(B1ᵀB2)²`), kept as an independent cross-check.
pub fn principal_angle_min_sin_via_cosines(w1: &Subspace, w2: &Subspace) -> f64 {
    let c = w1.basis().transpose() * w2.basis();
    let smax = c.svd(false, false).singular_values.max().min(1.0);
    (1.0 - smax * smax).max(0.0).sqrt()
}

/// Symmetric measure of how far apart two subspaces of equal dimension are:
/// the largest sine over principal angles (0 iff equal).
pub fn subspace_gap(w1: &Subspace, w2: &Subspace) -> f64 {
    assert_eq!(w1.dim(), w2.dim());
    if w1.dim() == 0 {
        return 0.0;
    }
    let b2 = w2.basis();
    let resid = b2 - w1.basis() * (w1.basis().transpose() * b2);
    resid.svd(false, false).singular_values.max().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const R2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn pt(v: &[f64]) -> ProjectivePoint {
        ProjectivePoint::from_slice(v).unwrap()
    }

    #[test]
    fn distance_examples() {
        let e1 = pt(&[1.0, 0.0]);
        let e2 = pt(&[0.0, 1.0]);
        let diag = pt(&[R2, R2]);
        assert_eq!(proj_distance(&e1, &e1), 0.0);
        assert!((proj_distance(&e1, &e2) - 1.0).abs() < 1e-15);
        assert!((proj_distance(&e1, &diag) - R2).abs() < 1e-15);
    }

    #[test]
    fn distance_ignores_sign() {
        let a = pt(&[0.3, -0.4, 0.5]);
        let b = pt(&[-0.3, 0.4, -0.5]);
        assert_eq!(a, b);
        assert_eq!(proj_distance(&a, &b), 0.0);
    }

    #[test]
    fn small_distances_keep_precision() {
        let t = 1e-12_f64;
        let a = pt(&[1.0, 0.0]);
        let b = pt(&[t.cos(), t.sin()]);
        let d = proj_distance(&a, &b);
        assert!((d - t).abs() / t < 1e-6, "d = {d:e}");
    }

    #[test]
    fn wedge_examples() {
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let e2 = DVector::from_column_slice(&[0.0, 1.0]);
        assert!((wedge_norm(&e1, &e2) - 1.0).abs() < 1e-15);
        assert_eq!(wedge_norm(&e1, &e1), 0.0);
        assert!((wedge_norm(&(2.0 * &e1), &(3.0 * &e2)) - 6.0).abs() < 1e-14);
        let x = DVector::from_column_slice(&[0.3, 0.7]);
        assert_eq!(wedge_norm(&x, &x), 0.0);
    }

    #[test]
    fn projection_examples() {
        let w12 = Subspace::span(&DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let e1 = pt(&[1.0, 0.0, 0.0]);
        assert!(proj_distance(&project_point(&w12, &e1).unwrap(), &e1) < 1e-15);

        let w1 = Subspace::line(&pt(&[1.0, 0.0]));
        let p = project_point(&w1, &pt(&[R2, R2])).unwrap();
        assert!(proj_distance(&p, &pt(&[1.0, 0.0])) < 1e-15);

        let err = project_point(&w1, &pt(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, LabError::DegenerateProjection { .. }));
    }

    #[test]
    fn distance_to_subspace_examples() {
        let e1 = pt(&[1.0, 0.0]);
        assert_eq!(dist_to_proj_subspace(&e1, &Subspace::line(&e1)).unwrap(), 0.0);
        let w = Subspace::line(&pt(&[0.0, 1.0]));
        assert!((dist_to_proj_subspace(&e1, &w).unwrap() - 1.0).abs() < 1e-15);
        let w23 = Subspace::span(&DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let x = pt(&[R2, R2, 0.0]);
        assert!((dist_to_proj_subspace(&x, &w23).unwrap() - R2).abs() < 1e-15);
        assert_eq!(dist_to_proj_subspace(&x, &Subspace::trivial(3)), Err(LabError::EmptyTarget));
    }

    #[test]
    fn principal_angle_examples() {
        let l1 = Subspace::line(&pt(&[1.0, 0.0]));
        let l2 = Subspace::line(&pt(&[0.0, 1.0]));
        let ld = Subspace::line(&pt(&[R2, R2]));
        assert!((principal_angle_min_sin(&l1, &l2) - 1.0).abs() < 1e-15);
        assert!(principal_angle_min_sin(&l1, &l1) < 1e-15);
        assert!((principal_angle_min_sin(&l1, &ld) - R2).abs() < 1e-15);
    }

    #[test]
    fn principal_angle_routes_agree() {
        let w1 = Subspace::span(&DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]));
        let w2 = Subspace::span(&DMatrix::from_column_slice(4, 1, &[1.0, 0.5, 0.25, -2.0]));
        let a = principal_angle_min_sin(&w1, &w2);
        let b = principal_angle_min_sin_via_cosines(&w1, &w2);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn nested_subspace_has_zero_angle() {
        let w = Subspace::span(&DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let l = Subspace::line(&pt(&[1.0, 1.0, 0.0]));
        assert!(principal_angle_min_sin(&w, &l) < 1e-15);
        assert!(principal_angle_min_sin(&l, &w) < 1e-15);
    }
}
