//! Random-trial generators for the exact inequalities the estimators rely
//! on. Each trial returns the slack `rhs − lhs`; a violation is a slack
//! below the caller's tolerance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cocycle::{kappa, Chart};
use crate::projective::{dist_to_proj_subspace, proj_distance, project_point, wedge_norm, ProjectivePoint, Subspace};

fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

/// Random subspace of the given dimension (Gaussian spanning set).
pub fn random_subspace<R: Rng + ?Sized>(rng: &mut R, ambient: usize, dim: usize) -> Subspace {
    if dim == 0 {
        return Subspace::trivial(ambient);
    }
    Subspace::span(&gaussian_matrix(rng, ambient, dim))
}

pub fn random_point<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ProjectivePoint {
    loop {
        if let Some(p) = ProjectivePoint::new(gaussian_vector(rng, n)) {
            return p;
        }
    }
}

/// Random splitting `V = E^0 ⊕ … ⊕ E^s` with `dim E^0 = 1`, `dim V ∈ [2, 5]`.
pub fn random_splitting<R: Rng + ?Sized>(rng: &mut R) -> Vec<Subspace> {
    let n = rng.random_range(2..=5);
    let mut blocks = vec![1usize];
    let mut left = n - 1;
    while left > 0 {
        let d = rng.random_range(1..=left);
        blocks.push(d);
        left -= d;
    }
    let basis = gaussian_matrix(rng, n, n);
    let mut start = 0;
    blocks
        .iter()
        .map(|&d| {
            let e = Subspace::span(&basis.columns(start, d).into_owned());
            start += d;
            e
        })
        .collect()
}

/// Projection contraction: for a proper nonzero `W` and `x̄, ȳ` away from
/// `P(W^⊥)`, `d(P_W x̄, P_W ȳ) ≤ d(x̄,P(W^⊥))^{-1} d(ȳ,P(W^⊥))^{-1} d(x̄,ȳ)`.
/// `None` when a point falls within `min_dist` of `P(W^⊥)`.
pub fn projection_contraction_slack<R: Rng + ?Sized>(rng: &mut R, min_dist: f64) -> Option<f64> {
    let n = rng.random_range(2..=5);
    let k = rng.random_range(1..n);
    let w = random_subspace(rng, n, k);
    let perp = w.orthogonal_complement();
    let x = random_point(rng, n);
    let y = random_point(rng, n);
    let dx = dist_to_proj_subspace(&x, &perp).ok()?;
    let dy = dist_to_proj_subspace(&y, &perp).ok()?;
    if dx < min_dist || dy < min_dist {
        return None;
    }
    let px = project_point(&w, &x).ok()?;
    let py = project_point(&w, &y).ok()?;
    Some(proj_distance(&x, &y) / (dx * dy) - proj_distance(&px, &py))
}

/// `‖P_W x ∧ P_W y‖ ≤ ‖x ∧ y‖`.
pub fn wedge_projection_slack<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let n = rng.random_range(2..=6);
    let k = rng.random_range(1..=n);
    let w = random_subspace(rng, n, k);
    let x = gaussian_vector(rng, n);
    let y = gaussian_vector(rng, n);
    wedge_norm(&x, &y) - wedge_norm(&w.project(&x), &w.project(&y))
}

/// Slacks of the three chart inequalities on one random frame and point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichSlack {
    /// `|x| − 2^{−s/2} κ^s ‖L(x)‖_∞`.
    pub norm_bound: f64,
    /// `d(x̄, P(V^0)) − (2s)^{−1} κ ‖g(x̄)‖_∞^{−1}`.
    pub lower: f64,
    /// `s 2^s κ^{−2s} ‖g(x̄)‖_∞^{−1} − d(x̄, P(V^0))`.
    pub upper: f64,
}

impl SandwichSlack {
    pub fn min(&self) -> f64 {
        self.norm_bound.min(self.lower).min(self.upper)
    }
}

pub fn kappa_sandwich_slack<R: Rng + ?Sized>(rng: &mut R) -> SandwichSlack {
    let splitting = random_splitting(rng);
    let k = kappa(&splitting);
    let chart = Chart::new(&splitting, k).expect("dim E^0 = 1");
    let s = chart.s() as i32;
    let n = splitting[0].ambient_dim();
    let x = gaussian_vector(rng, n);
    let norm_bound = x.norm() - 2f64.powf(-s as f64 / 2.0) * k.powi(s) * Chart::sup_norm(&chart.components(&x));
    let p = ProjectivePoint::new(x).expect("nonzero");
    let (lower, upper) = match chart.g(&p) {
        Some(g) => {
            let m = Chart::sup_norm(&g);
            let d = dist_to_proj_subspace(&p, &chart.v0()).expect("V^0 nonzero");
            (d - k / (2.0 * s as f64 * m), s as f64 * 2f64.powi(s) * k.powi(-2 * s) / m - d)
        }
        None => (0.0, 0.0),
    };
    SandwichSlack { norm_bound, lower, upper }
}
