//! Local, projected, sliced and transverse dimensions of empirical measures.

use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::boundary::{boundary_point, sample_forward_word, EmpiricalProjectiveMeasure, Provenance, DEFAULT_ACCEPT_TOL};
use crate::cocycle::OseledetsFrame;
use crate::ensemble::EnsembleSpec;
use crate::error::{LabError, Result};
use crate::projective::{proj_distance, project_point, ProjectivePoint, Subspace};
use crate::rng::{par_indexed, stream_rng};
use crate::stats::{mad, median, weighted_ls_fit};

pub use crate::stats::LineFit;

/// Balls must hold at least this many atoms to enter a fit.
pub const MIN_BALL_ATOMS: usize = 30;

/// Geometric radii `r_k = r_0 ρ^k`, `k = 0..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiiGrid {
    pub r0: f64,
    pub rho: f64,
    pub k_max: usize,
}

impl Default for RadiiGrid {
    fn default() -> Self {
        Self { r0: 0.1, rho: 0.7, k_max: 60 }
    }
}

impl RadiiGrid {
    pub fn new(r0: f64, rho: f64, k_max: usize) -> Result<Self> {
        if !(r0 > 0.0 && r0 <= 1.0) {
            return Err(LabError::Validation(format!("r0 = {r0} outside (0, 1]")));
        }
        if !(0.5..=0.95).contains(&rho) {
            return Err(LabError::Validation(format!("rho = {rho} outside [0.5, 0.95]")));
        }
        Ok(Self { r0, rho, k_max })
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..=self.k_max).map(|k| self.r0 * self.rho.powi(k as i32)).collect()
    }

    pub fn smallest(&self) -> f64 {
        self.r0 * self.rho.powi(self.k_max as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    LocalAtPoint,
    MeasureAverage,
    Transverse,
    Projected,
    Sliced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub value: f64,
    pub stderr: f64,
    pub grid: RadiiGrid,
    /// Radii that passed the atom-count cutoff.
    pub radii_used: Vec<f64>,
    pub fit_r2: f64,
    pub kind: DimensionKind,
    /// Inter-probe spread exceeded three pooled fit errors.
    pub non_exact: bool,
    pub notes: Vec<String>,
}

/// Fit `log mass` against `log r` given sorted distances from the center.
/// `weights` are aligned with `dists`; `total` is the mass being normalized by.
fn fit_from_sorted(dists: &[(f64, f64)], total: f64, grid: &RadiiGrid, kind: DimensionKind) -> Result<(DimensionEstimate, LineFit)> {
    // cumulative weights for binary search
    let mut cum = Vec::with_capacity(dists.len());
    let mut acc = 0.0;
    for &(_, w) in dists {
        acc += w;
        cum.push(acc);
    }
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    let mut used = Vec::new();
    for r in grid.radii() {
        let count = dists.partition_point(|&(d, _)| d <= r);
        if count < MIN_BALL_ATOMS {
            continue;
        }
        let mass = cum[count - 1] / total;
        pts.push((r.ln(), mass.ln()));
        // Var(log count) ≈ 1/count
        wts.push(count as f64);
        used.push(r);
    }
    if pts.len() < 3 {
        return Err(LabError::InsufficientMass(format!(
            "only {} radii hold at least {MIN_BALL_ATOMS} atoms",
            pts.len()
        )));
    }
    let fit = weighted_ls_fit(&pts, &wts);
    let est = DimensionEstimate {
        value: fit.slope.max(0.0),
        stderr: fit.slope_stderr,
        grid: *grid,
        radii_used: used,
        fit_r2: fit.r2,
        kind,
        non_exact: false,
        notes: Vec::new(),
    };
    Ok((est, fit))
}

fn sorted_distances(nu: &EmpiricalProjectiveMeasure, x: &ProjectivePoint, skip: Option<usize>) -> (Vec<(f64, f64)>, f64) {
    let mut d: Vec<(f64, f64)> = nu
        .atoms()
        .iter()
        .zip(nu.weights())
        .enumerate()
        .filter(|(k, _)| Some(*k) != skip)
        .map(|(_, (a, &w))| (proj_distance(a, x), w))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = d.iter().map(|p| p.1).sum();
    (d, total)
}

/// Slope of `log ν(B(x,r))` against `log r` over radii whose ball holds at
/// least [`MIN_BALL_ATOMS`] atoms, each radius weighted by its atom count.
pub fn local_dimension(nu: &EmpiricalProjectiveMeasure, x: &ProjectivePoint, grid: &RadiiGrid) -> Result<DimensionEstimate> {
    if nu.ball_mass(x, grid.r0) <= 0.0 {
        return Err(LabError::InsufficientMass("no mass within r0 of the probe".into()));
    }
    let (d, total) = sorted_distances(nu, x, None);
    Ok(fit_from_sorted(&d, total, grid, DimensionKind::LocalAtPoint)?.0)
}

/// [`local_dimension`] at atom `index`, with the atom itself left out of
/// every ball.
pub fn local_dimension_at_atom(nu: &EmpiricalProjectiveMeasure, index: usize, grid: &RadiiGrid) -> Result<DimensionEstimate> {
    let (d, total) = sorted_distances(nu, &nu.atoms()[index], Some(index));
    if total <= 0.0 {
        return Err(LabError::InsufficientMass("single-atom measure".into()));
    }
    Ok(fit_from_sorted(&d, total, grid, DimensionKind::LocalAtPoint)?.0)
}

/// Median local dimension over `probes` atoms drawn from `nu` itself.
/// `stderr` is the median absolute deviation; probes without enough mass
/// are skipped, and the estimate fails when more than half of them do.
pub fn measure_dimension(nu: &EmpiricalProjectiveMeasure, grid: &RadiiGrid, probes: usize, seed: u64) -> Result<DimensionEstimate> {
    measure_dimension_as(nu, grid, probes, seed, DimensionKind::MeasureAverage)
}

pub fn measure_dimension_as(
    nu: &EmpiricalProjectiveMeasure,
    grid: &RadiiGrid,
    probes: usize,
    seed: u64,
    kind: DimensionKind,
) -> Result<DimensionEstimate> {
    if probes < 30 {
        return Err(LabError::Validation("measure_dimension needs at least 30 probes".into()));
    }
    let mut rng = stream_rng(seed, 0x7072);
    let idx: Vec<usize> = if probes >= nu.len() {
        (0..nu.len()).collect()
    } else {
        let mut v = index::sample(&mut rng, nu.len(), probes).into_vec();
        v.sort_unstable();
        v
    };
    let results = par_indexed(idx.len(), |k| local_dimension_at_atom(nu, idx[k], grid));
    let ok: Vec<&DimensionEstimate> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.len() * 2 < idx.len() || ok.len() < 3 {
        let first_err = results.into_iter().find_map(|r| r.err()).expect("some probe failed");
        return Err(first_err);
    }
    let values: Vec<f64> = ok.iter().map(|e| e.value).collect();
    let value = median(&values);
    let spread = mad(&values);
    let pooled = (ok.iter().map(|e| e.stderr * e.stderr).sum::<f64>() / ok.len() as f64).sqrt();
    let mut radii_used = ok[0].radii_used.clone();
    for e in &ok {
        radii_used.retain(|r| e.radii_used.contains(r));
    }
    let r2 = median(&ok.iter().map(|e| e.fit_r2).collect::<Vec<_>>());
    let mut notes = Vec::new();
    if ok.len() < idx.len() {
        notes.push(format!("{} of {} probes lacked mass", idx.len() - ok.len(), idx.len()));
    }
    let non_exact = spread * 1.4826 > 3.0 * pooled;
    let est = DimensionEstimate { value, stderr: spread, grid: *grid, radii_used, fit_r2: r2, kind, non_exact, notes };
    sanity_note(est, nu.ambient().dim())
}

fn sanity_note(mut est: DimensionEstimate, ambient_dim: usize) -> Result<DimensionEstimate> {
    let bound = ambient_dim.saturating_sub(1) as f64 + 0.5;
    if est.value > bound {
        est.notes.push(format!("value exceeds the sanity band {bound}"));
    }
    Ok(est)
}

/// Source of i.i.d. boundary points `πη` for fresh forward words `η`.
/// Point `k` is the same whichever order or thread requests it.
#[derive(Clone)]
pub struct BoundarySampler<'a> {
    spec: &'a EnsembleSpec,
    seed: u64,
    prefix_len: usize,
    pool: Option<Arc<EmpiricalProjectiveMeasure>>,
}

impl<'a> BoundarySampler<'a> {
    pub fn new(spec: &'a EnsembleSpec, seed: u64, prefix_len: usize) -> Self {
        Self { spec, seed, prefix_len, pool: None }
    }

    /// Draws come from an already sampled equal-weight cloud, in order.
    pub fn from_pool(spec: &'a EnsembleSpec, pool: Arc<EmpiricalProjectiveMeasure>) -> Self {
        let p = &pool.provenance;
        Self { spec, seed: p.seed, prefix_len: p.prefix_len, pool: Some(pool) }
    }

    pub fn spec(&self) -> &EnsembleSpec {
        self.spec
    }

    /// Upper bound on the number of points this sampler can produce.
    pub fn capacity(&self) -> usize {
        self.pool.as_ref().map_or(usize::MAX, |p| p.len())
    }

    pub fn draw(&self, from: usize, to: usize) -> Result<Vec<ProjectivePoint>> {
        if let Some(pool) = &self.pool {
            return Ok(pool.atoms()[from.min(pool.len())..to.min(pool.len())].to_vec());
        }
        let pts = par_indexed(to - from, |k| {
            let w = sample_forward_word(self.spec, self.seed, (from + k) as u64, self.prefix_len);
            boundary_point(self.spec, &w, DEFAULT_ACCEPT_TOL).map(|s| s.point)
        });
        pts.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabKind {
    /// Slice `ζ_W` of `ν`.
    Slice,
    /// Atom of `ξ_i` (negative coordinates fixed).
    Partition,
}

/// `{η : d(P_{W^⊥}πη, anchor) ≤ δ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabCondition {
    pub kind: SlabKind,
    pub target: Subspace,
    pub anchor: ProjectivePoint,
    pub width: f64,
}

impl SlabCondition {
    pub fn new(kind: SlabKind, target: Subspace, anchor: ProjectivePoint, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= 0.2) {
            return Err(LabError::Validation(format!("slab width {width} outside (0, 0.2]")));
        }
        let perp = target.orthogonal_complement();
        if perp.dim() == 0 {
            return Err(LabError::EmptyTarget);
        }
        if !perp.contains(anchor.direction(), 1e-9) {
            return Err(LabError::Validation("anchor must lie in P(W^⊥)".into()));
        }
        Ok(Self { kind, target, anchor, width })
    }

    /// Slab around the image of `x̄` under `P_{W^⊥}`.
    pub fn around(kind: SlabKind, target: Subspace, x: &ProjectivePoint, width: f64) -> Result<Self> {
        let perp = target.orthogonal_complement();
        let anchor = project_point(&perp, x)?;
        Self::new(kind, target, anchor, width)
    }

    /// `d(P_{W^⊥}x̄, anchor)`, or `None` when `x̄ ∈ P(W)`.
    pub fn offset(&self, perp: &Subspace, x: &ProjectivePoint) -> Option<f64> {
        project_point(perp, x).ok().map(|p| proj_distance(&p, &self.anchor))
    }
}

/// Minimum number of draws before a low acceptance rate is declared.
const SLAB_MIN_DRAWS: usize = 100_000;
const SLAB_MIN_RATE: f64 = 1e-5;
const DRAW_BLOCK: usize = 4096;

/// Rejection-samples boundary points until `n_keep` fall in the slab.
pub fn condition_measure(sampler: &BoundarySampler, cond: &SlabCondition, n_keep: usize, max_draws: usize) -> Result<EmpiricalProjectiveMeasure> {
    let perp = cond.target.orthogonal_complement();
    let mut kept = Vec::with_capacity(n_keep);
    let mut drawn = 0usize;
    let limit = max_draws.min(sampler.capacity());
    while kept.len() < n_keep && drawn < limit {
        let to = (drawn + DRAW_BLOCK).min(limit);
        let block = sampler.draw(drawn, to)?;
        if block.is_empty() {
            break;
        }
        for p in block {
            if kept.len() == n_keep {
                break;
            }
            drawn += 1;
            if cond.offset(&perp, &p).is_some_and(|d| d <= cond.width) {
                kept.push(p);
            }
        }
        let rate = kept.len() as f64 / drawn as f64;
        if drawn >= SLAB_MIN_DRAWS && rate < SLAB_MIN_RATE {
            return Err(LabError::SlabTooThin { rate, drawn });
        }
    }
    let rate = kept.len() as f64 / drawn.max(1) as f64;
    if kept.len() < n_keep {
        return Err(LabError::SlabTooThin { rate, drawn });
    }
    let n = kept.len();
    Ok(EmpiricalProjectiveMeasure::uniform(
        kept,
        Provenance { seed: sampler.seed, n_samples: n, prefix_len: sampler.prefix_len, acceptance_rate: Some(rate) },
    ))
}

/// Budget for [`transverse_dimension`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseBudget {
    pub n_keep: usize,
    pub max_draws: usize,
    /// Slab width; `None` ties it to 0.1 × the smallest radius.
    pub width: Option<f64>,
}

impl Default for TransverseBudget {
    fn default() -> Self {
        Self { n_keep: 4000, max_draws: 2_000_000, width: None }
    }
}

/// Boundary point `πω` of a frame's word.
pub fn frame_boundary_point(spec: &EnsembleSpec, frame: &OseledetsFrame) -> Result<ProjectivePoint> {
    Ok(boundary_point(spec, &frame.word.nonnegative, DEFAULT_ACCEPT_TOL)?.point)
}

fn gamma_fit(
    cloud: &[ProjectivePoint],
    offsets_i: &[Option<f64>],
    keep_within: f64,
    slab_offsets: &[f64],
    grid: &RadiiGrid,
) -> Result<(DimensionEstimate, LineFit)> {
    let mut d: Vec<(f64, f64)> = cloud
        .iter()
        .enumerate()
        .filter(|(k, _)| slab_offsets[*k] <= keep_within)
        .filter_map(|(k, _)| offsets_i[k].map(|o| (o, 1.0)))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = d.len() as f64;
    if d.is_empty() {
        return Err(LabError::InsufficientMass("empty slab".into()));
    }
    fit_from_sorted(&d, total, grid, DimensionKind::Transverse)
}

/// `ϑ_{i−1}(ω)`: the slope of `log β_ω^{ξ_{i−1}}(Γ_i(ω,r))` against `log r`.
///
/// Fresh forward words are conditioned on `d(P_{(V^{i−1})^⊥}πη, P_{(V^{i−1})^⊥}πω) ≤ δ`
/// with `δ = 0.1 ×` the smallest radius unless the budget fixes it; `Γ_i` membership is
/// `d(P_{(V^i)^⊥}πη, P_{(V^i)^⊥}πω) ≤ r`. The estimate is repeated at `δ/2`
/// and a note is added when the two differ by more than their combined error.
pub fn transverse_dimension(
    sampler: &BoundarySampler,
    frame: &OseledetsFrame,
    i: usize,
    grid: &RadiiGrid,
    budget: &TransverseBudget,
) -> Result<DimensionEstimate> {
    let s = frame.s();
    if i == 0 || i > s {
        return Err(LabError::Index(format!("transverse index {i} outside 1..={s}")));
    }
    let spec = sampler.spec();
    let x = frame_boundary_point(spec, frame)?;
    let delta = budget.width.unwrap_or(0.1 * grid.smallest()).min(0.2);
    let slab = SlabCondition::around(SlabKind::Partition, frame.v(i as i64 - 1), &x, delta)?;
    let cloud = condition_measure(sampler, &slab, budget.n_keep, budget.max_draws)?;
    let perp_prev = frame.v(i as i64 - 1).orthogonal_complement();
    let perp_i = frame.v(i as i64).orthogonal_complement();
    let center = project_point(&perp_i, &x)?;
    let offsets_i: Vec<Option<f64>> =
        cloud.atoms().iter().map(|p| project_point(&perp_i, p).ok().map(|q| proj_distance(&q, &center))).collect();
    let slab_offsets: Vec<f64> = cloud.atoms().iter().map(|p| slab.offset(&perp_prev, p).unwrap_or(f64::INFINITY)).collect();
    let (mut est, fit) = gamma_fit(cloud.atoms(), &offsets_i, delta, &slab_offsets, grid)?;
    match gamma_fit(cloud.atoms(), &offsets_i, delta / 2.0, &slab_offsets, grid) {
        Ok((half, half_fit)) => {
            let tol = (fit.slope_stderr.powi(2) + half_fit.slope_stderr.powi(2)).sqrt();
            if (half.value - est.value).abs() > tol {
                est.notes.push(format!("delta-halving moved the estimate from {:.4} to {:.4}", est.value, half.value));
            }
        }
        Err(e) => est.notes.push(format!("delta-halving check skipped: {e}")),
    }
    if let Some(rate) = cloud.provenance.acceptance_rate {
        est.notes.push(format!("slab acceptance {rate:.3e}"));
    }
    sanity_note(est, spec.dim())
}

/// Budgets for [`conservation_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationBudget {
    pub grid: RadiiGrid,
    /// Grid for the slice.
    pub slice_grid: RadiiGrid,
    pub probes: usize,
    pub n_keep: usize,
    pub max_draws: usize,
    /// Slice slab width; `None` ties it to 0.1 × the smallest slice radius.
    pub slab_width: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub dim_proj: DimensionEstimate,
    pub dim_slice: DimensionEstimate,
    pub dim_total: DimensionEstimate,
    pub defect: f64,
}

/// `dim P_{(V^i)^⊥}ν + dim ν^{ζ_{V^i}} = dim ν`, each side estimated from
/// the sampler: the projected cloud, a `ζ_{V^i}` slab around `πω`, and `ν`.
pub fn conservation_check(
    sampler: &BoundarySampler,
    nu: &EmpiricalProjectiveMeasure,
    frame: &OseledetsFrame,
    i: usize,
    budget: &ConservationBudget,
) -> Result<ConservationReport> {
    let s = frame.s();
    if i > s {
        return Err(LabError::Index(format!("conservation index {i} outside 0..={s}")));
    }
    let spec = sampler.spec();
    let v = frame.v(i as i64);
    let perp = v.orthogonal_complement();
    let dim_total = measure_dimension(nu, &budget.grid, budget.probes, budget.seed)?;
    let projected = nu.project_onto(&perp)?;
    let dim_proj = if perp.dim() == 1 {
        point_estimate(&budget.grid, DimensionKind::Projected, "projection onto a line is a point mass")
    } else {
        measure_dimension_as(&projected, &budget.grid, budget.probes, budget.seed, DimensionKind::Projected)?
    };
    let dim_slice = if perp.dim() == 1 {
        let mut e = dim_total.clone();
        e.kind = DimensionKind::Sliced;
        e.notes.push("codimension-one slice is the whole measure".into());
        e
    } else {
        let x = frame_boundary_point(spec, frame)?;
        let delta = budget.slab_width.unwrap_or(0.1 * budget.slice_grid.smallest()).min(0.2);
        let slab = SlabCondition::around(SlabKind::Slice, v, &x, delta)?;
        let cloud = condition_measure(sampler, &slab, budget.n_keep, budget.max_draws)?;
        let probes = budget.probes.min(cloud.len());
        measure_dimension_as(&cloud, &budget.slice_grid, probes.max(30), budget.seed, DimensionKind::Sliced)?
    };
    let defect = (dim_proj.value + dim_slice.value - dim_total.value).abs();
    Ok(ConservationReport { dim_proj, dim_slice, dim_total, defect })
}

fn point_estimate(grid: &RadiiGrid, kind: DimensionKind, note: &str) -> DimensionEstimate {
    DimensionEstimate {
        value: 0.0,
        stderr: 0.0,
        grid: *grid,
        radii_used: Vec::new(),
        fit_r2: 1.0,
        kind,
        non_exact: false,
        notes: vec![note.into()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::uniform_circle_measure;
    use crate::ensemble::line;

    fn prov(n: usize) -> Provenance {
        Provenance { seed: 0, n_samples: n, prefix_len: 0, acceptance_rate: None }
    }

    #[test]
    fn grid_validation() {
        assert!(RadiiGrid::new(1.5, 0.5, 10).is_err());
        assert!(RadiiGrid::new(0.1, 0.3, 10).is_err());
        let g = RadiiGrid::new(0.1, 0.5, 3).unwrap();
        assert_eq!(g.radii(), vec![0.1, 0.05, 0.025, 0.0125]);
    }

    #[test]
    fn point_mass_has_dimension_zero() {
        let x = line(&[0.6, 0.8]);
        let nu = EmpiricalProjectiveMeasure::uniform(vec![x.clone(); 100], prov(100));
        let e = local_dimension(&nu, &x, &RadiiGrid::default()).unwrap();
        assert_eq!(e.value, 0.0);
        let m = measure_dimension(&nu, &RadiiGrid::default(), 30, 1).unwrap();
        assert_eq!(m.value, 0.0);
        assert_eq!(m.stderr, 0.0);
    }

    #[test]
    fn uniform_circle_has_dimension_one() {
        let nu = uniform_circle_measure(100_000, &mut stream_rng(2, 0));
        let grid = RadiiGrid::new(0.1, 0.5, 20).unwrap();
        let e = local_dimension(&nu, &nu.atoms()[0].clone(), &grid).unwrap();
        assert!((e.value - 1.0).abs() < 0.05, "{e:?}");
        let m = measure_dimension(&nu, &grid, 40, 3).unwrap();
        assert!((m.value - 1.0).abs() < 0.05, "{m:?}");
    }

    #[test]
    fn too_few_atoms_is_insufficient_mass() {
        let nu = uniform_circle_measure(50, &mut stream_rng(2, 0));
        assert!(matches!(
            local_dimension_at_atom(&nu, 0, &RadiiGrid::default()),
            Err(LabError::InsufficientMass(_))
        ));
    }

    #[test]
    fn slab_width_is_validated() {
        let w = Subspace::line(&line(&[0.0, 1.0]));
        assert!(SlabCondition::around(SlabKind::Slice, w.clone(), &line(&[1.0, 1.0]), 0.3).is_err());
        assert!(SlabCondition::around(SlabKind::Slice, w, &line(&[1.0, 1.0]), 0.1).is_ok());
    }
}
