//! The boundary map `π(ω)` and empirical Furstenberg measures.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::{generic_frame, QrSweep};
use crate::ensemble::{format_decimal, EnsembleSpec};
use crate::error::{LabError, Result};
use crate::linalg::qr_in_place;
use crate::projective::{proj_distance, unit_distance, ProjectivePoint, Subspace};
use crate::rng::{child_seed, par_indexed, random_unit_vector, stream_rng};

pub const DEFAULT_PREFIX_LEN: usize = 100;
pub const MAX_PREFIX_LEN: usize = 10_000;
pub const DEFAULT_ACCEPT_TOL: f64 = 1e-8;
/// `σ_1/σ_2` below this means the product has no attracting direction.
const MIN_PROXIMAL_RATIO: f64 = 10.0;

/// Estimate of `π(ω)` from a finite forward prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySample {
    pub point: ProjectivePoint,
    pub word_prefix_len: usize,
    /// `d(estimate at n, estimate at n/2)`.
    pub convergence_gap: f64,
    pub accepted: bool,
}

/// Top left-singular direction of `A_{ω_0} ⋯ A_{ω_{n-1}}` and `log σ_1/σ_2`.
fn top_direction(spec: &EnsembleSpec, word: &[usize]) -> (DVector<f64>, f64) {
    let cols = 2.min(spec.dim());
    let sweep = QrSweep::run(spec, word.iter().rev().copied(), crate::cocycle::Action::Direct, cols);
    let ratio = if cols > 1 { sweep.logs[0] - sweep.logs[1] } else { f64::INFINITY };
    (sweep.q.column(0).into_owned(), ratio)
}

/// Top direction of a short product by plain vector iteration; no
/// proximality check.
fn top_direction_fast(spec: &EnsembleSpec, word: &[usize], start: &DVector<f64>, buf: &mut DVector<f64>) -> DVector<f64> {
    let mut v = start.clone();
    for &l in word.iter().rev() {
        spec.matrix(l).mul_to(&v, buf);
        let norm = buf.norm();
        v.copy_from(buf);
        v /= norm;
    }
    v
}

fn gap_at(spec: &EnsembleSpec, word: &[usize], n: usize) -> Result<(DVector<f64>, f64)> {
    let (top, log_ratio) = top_direction(spec, &word[..n]);
    if log_ratio < MIN_PROXIMAL_RATIO.ln() {
        return Err(LabError::NonProximal { ratio: log_ratio.exp() });
    }
    let start = generic_frame(spec.dim(), 1).column(0).into_owned();
    let mut buf = DVector::zeros(spec.dim());
    let half = top_direction_fast(spec, &word[..n / 2], &start, &mut buf);
    Ok((top.clone(), unit_distance(top.as_slice(), half.as_slice())))
}

/// `π(ω)` from the forward word: the prefix starts at `min(100, len)` and
/// doubles until the gap to the half-length estimate is at most
/// `accept_tol` (capped at `min(len, 10⁴)`).
pub fn boundary_point(spec: &EnsembleSpec, forward_word: &[usize], accept_tol: f64) -> Result<BoundarySample> {
    if forward_word.len() < 8 {
        return Err(LabError::Validation("forward word must have length >= 8".into()));
    }
    if accept_tol <= 0.0 {
        return Err(LabError::Validation("accept_tol must be positive".into()));
    }
    let cap = forward_word.len().min(MAX_PREFIX_LEN);
    let mut n = DEFAULT_PREFIX_LEN.min(cap);
    loop {
        let (v, gap) = gap_at(spec, forward_word, n)?;
        if gap <= accept_tol || n == cap {
            let point = ProjectivePoint::new(v).expect("unit column");
            return Ok(BoundarySample { point, word_prefix_len: n, convergence_gap: gap, accepted: gap <= accept_tol });
        }
        n = (2 * n).min(cap);
    }
}

/// `π(ω)` estimate at a fixed prefix, with its gap to the half-prefix estimate.
pub fn boundary_point_at(spec: &EnsembleSpec, forward_word: &[usize], n: usize) -> Result<BoundarySample> {
    let (v, gap) = gap_at(spec, forward_word, n)?;
    Ok(BoundarySample {
        point: ProjectivePoint::new(v).expect("unit column"),
        word_prefix_len: n,
        convergence_gap: gap,
        accepted: true,
    })
}

/// Forward labels of sample `index` in a measure drawn with `seed`; this is
/// the nonnegative half of `sample_word(.., child_seed(seed, index))`.
pub fn sample_forward_word(spec: &EnsembleSpec, seed: u64, index: u64, len: usize) -> Vec<usize> {
    let mut rng = stream_rng(child_seed(seed, index), 0);
    (0..len).map(|_| spec.sample_label(&mut rng)).collect()
}

/// Where an empirical measure came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_samples: usize,
    pub prefix_len: usize,
    /// Realized acceptance rate for slab-conditioned clouds.
    pub acceptance_rate: Option<f64>,
}

/// Finite weighted point cloud on `P(ambient)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProjectiveMeasure {
    atoms: Vec<ProjectivePoint>,
    weights: Vec<f64>,
    ambient: Subspace,
    pub provenance: Provenance,
}

impl EmpiricalProjectiveMeasure {
    pub fn new(atoms: Vec<ProjectivePoint>, weights: Vec<f64>, ambient: Subspace, provenance: Provenance) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(LabError::Validation("measure needs one positive weight per atom".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(LabError::Validation("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(LabError::Validation(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights, ambient, provenance })
    }

    /// Equal weights over `V = R^dim`.
    pub fn uniform(atoms: Vec<ProjectivePoint>, provenance: Provenance) -> Self {
        let n = atoms.len();
        let dim = atoms[0].dim();
        Self { atoms, weights: vec![1.0 / n as f64; n], ambient: Subspace::full(dim), provenance }
    }

    pub fn atoms(&self) -> &[ProjectivePoint] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ambient(&self) -> &Subspace {
        &self.ambient
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    /// Pushforward under `x̄ ↦ A x̄`.
    pub fn pushforward(&self, a: &DMatrix<f64>) -> Self {
        Self {
            atoms: self.atoms.iter().map(|x| x.transform(a)).collect(),
            weights: self.weights.clone(),
            ambient: self.ambient.transform(a),
            provenance: self.provenance.clone(),
        }
    }

    /// Pushforward under `P_W`; atoms on `P(W^⊥)` have no image and are dropped
    /// (the remaining weights are renormalized).
    pub fn project_onto(&self, w: &Subspace) -> Result<Self> {
        let mut atoms = Vec::with_capacity(self.len());
        let mut weights = Vec::with_capacity(self.len());
        for (x, &wt) in self.atoms.iter().zip(&self.weights) {
            if let Ok(p) = crate::projective::project_point(w, x) {
                atoms.push(p);
                weights.push(wt);
            }
        }
        if atoms.is_empty() {
            return Err(LabError::DegenerateProjection { norm: 0.0 });
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { atoms, weights, ambient: w.clone(), provenance: self.provenance.clone() })
    }

    /// Mass of `{x̄ : d(x̄, center) ≤ r}`.
    pub fn ball_mass(&self, center: &ProjectivePoint, r: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(x, _)| proj_distance(x, center) <= r)
            .map(|(_, w)| w)
            .sum()
    }

    /// Flat table: provenance header, then one row per atom (components, weight).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        writeln!(out, "# seed\t{}", p.seed).unwrap();
        writeln!(out, "# n_samples\t{}", p.n_samples).unwrap();
        writeln!(out, "# prefix_len\t{}", p.prefix_len).unwrap();
        if let Some(a) = p.acceptance_rate {
            writeln!(out, "# acceptance_rate\t{}", format_decimal(a)).unwrap();
        }
        let b = self.ambient.basis();
        writeln!(out, "# ambient\t{}\t{}", b.nrows(), b.ncols()).unwrap();
        for c in 0..b.ncols() {
            let row: Vec<String> = b.column(c).iter().map(|&x| format_decimal(x)).collect();
            writeln!(out, "# basis\t{}", row.join("\t")).unwrap();
        }
        let header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).chain(["weight".into()]).collect();
        writeln!(out, "{}", header.join("\t")).unwrap();
        for (x, &w) in self.atoms.iter().zip(&self.weights) {
            let row: Vec<String> = x.direction().iter().map(|&v| format_decimal(v)).chain([format_decimal(w)]).collect();
            writeln!(out, "{}", row.join("\t")).unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |m: &str| LabError::Parse(format!("measure table: {m}"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
        let mut seed = None;
        let mut n_samples = None;
        let mut prefix_len = None;
        let mut acceptance_rate = None;
        let mut ambient_dims = None;
        let mut basis_cols: Vec<Vec<f64>> = Vec::new();
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        let mut saw_header = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(rest) = line.strip_prefix("# ") {
                let mut it = rest.split('\t');
                let key = it.next().unwrap_or_default();
                let vals: Vec<&str> = it.collect();
                let first = vals.first().copied().unwrap_or_default();
                match key {
                    "seed" => seed = Some(first.parse::<u64>().map_err(|_| bad("seed"))?),
                    "n_samples" => n_samples = Some(first.parse::<usize>().map_err(|_| bad("n_samples"))?),
                    "prefix_len" => prefix_len = Some(first.parse::<usize>().map_err(|_| bad("prefix_len"))?),
                    "acceptance_rate" => acceptance_rate = Some(num(first)?),
                    "ambient" => {
                        let r = first.parse::<usize>().map_err(|_| bad("ambient"))?;
                        let c = vals.get(1).ok_or_else(|| bad("ambient"))?.parse::<usize>().map_err(|_| bad("ambient"))?;
                        ambient_dims = Some((r, c));
                    }
                    "basis" => basis_cols.push(vals.iter().map(|v| num(v)).collect::<Result<_>>()?),
                    _ => return Err(bad(&format!("unknown header {key:?}"))),
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                continue;
            }
            let vals: Vec<f64> = line.split('\t').map(num).collect::<Result<_>>()?;
            let (w, x) = vals.split_last().ok_or_else(|| bad("empty row"))?;
            atoms.push(ProjectivePoint::from_slice(x).ok_or_else(|| bad("zero direction"))?);
            weights.push(*w);
        }
        let (r, c) = ambient_dims.ok_or_else(|| bad("missing ambient"))?;
        if basis_cols.len() != c || basis_cols.iter().any(|b| b.len() != r) {
            return Err(bad("ambient basis shape"));
        }
        let flat: Vec<f64> = basis_cols.concat();
        let ambient = Subspace::from_orthonormal(DMatrix::from_column_slice(r, c, &flat));
        let provenance = Provenance {
            seed: seed.ok_or_else(|| bad("missing seed"))?,
            n_samples: n_samples.ok_or_else(|| bad("missing n_samples"))?,
            prefix_len: prefix_len.ok_or_else(|| bad("missing prefix_len"))?,
            acceptance_rate,
        };
        Self::new(atoms, weights, ambient, provenance)
    }
}

/// `n_samples` i.i.d. boundary points with equal weights. Sample `i` uses
/// the forward word of `child_seed(seed, i)`, so results do not depend on
/// the worker count.
pub fn sample_measure(spec: &EnsembleSpec, n_samples: usize, prefix_len: usize, seed: u64) -> Result<EmpiricalProjectiveMeasure> {
    sample_measure_with_tol(spec, n_samples, prefix_len, seed, DEFAULT_ACCEPT_TOL)
}

pub fn sample_measure_with_tol(
    spec: &EnsembleSpec,
    n_samples: usize,
    prefix_len: usize,
    seed: u64,
    accept_tol: f64,
) -> Result<EmpiricalProjectiveMeasure> {
    if n_samples == 0 {
        return Err(LabError::Validation("n_samples must be positive".into()));
    }
    let points = par_indexed(n_samples, |i| -> Result<ProjectivePoint> {
        let mut rng = stream_rng(child_seed(seed, i as u64), 0);
        let mut word: Vec<usize> = (0..prefix_len).map(|_| spec.sample_label(&mut rng)).collect();
        loop {
            let s = boundary_point(spec, &word, accept_tol)?;
            if s.accepted || word.len() >= MAX_PREFIX_LEN {
                return Ok(s.point);
            }
            let extra = word.len().min(MAX_PREFIX_LEN - word.len());
            word.extend((0..extra).map(|_| spec.sample_label(&mut rng)));
        }
    });
    let atoms = points.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalProjectiveMeasure::uniform(atoms, Provenance { seed, n_samples, prefix_len, acceptance_rate: None }))
}

/// Angle of a line in `P(R²)`, in `(−π/2, π/2]`.
pub fn line_angle(x: &ProjectivePoint) -> f64 {
    let v = x.direction();
    let mut t = v[1].atan2(v[0]);
    if t > std::f64::consts::FRAC_PI_2 {
        t -= std::f64::consts::PI;
    } else if t <= -std::f64::consts::FRAC_PI_2 {
        t += std::f64::consts::PI;
    }
    t
}

fn kolmogorov_distance(mut a: Vec<(f64, f64)>, mut b: Vec<(f64, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 == t {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == t {
            fb += b[j].1;
            j += 1;
        }
        best = best.max((fa - fb).abs());
    }
    best
}

/// At most `cap` atoms taken at an even stride, with their weights renormalized.
fn thin(points: &[(ProjectivePoint, f64)], cap: usize) -> Vec<(ProjectivePoint, f64)> {
    let stride = points.len().div_ceil(cap).max(1);
    let kept: Vec<_> = points.iter().step_by(stride).cloned().collect();
    let total: f64 = kept.iter().map(|p| p.1).sum();
    kept.into_iter().map(|(x, w)| (x, w / total)).collect()
}

/// Energy distance between weighted clouds on `P(V)` under `d`. `d` is
/// `1/√2` times the Frobenius distance of the projectors `xxᵀ`, so this is
/// a metric on measures.
pub fn energy_distance(a: &[(ProjectivePoint, f64)], b: &[(ProjectivePoint, f64)]) -> f64 {
    let mean = |u: &[(ProjectivePoint, f64)], v: &[(ProjectivePoint, f64)]| -> f64 {
        let rows = par_indexed(u.len(), |i| v.iter().map(|(y, wy)| wy * proj_distance(&u[i].0, y)).sum::<f64>() * u[i].1);
        rows.iter().sum()
    };
    let e = 2.0 * mean(a, b) - mean(a, a) - mean(b, b);
    e.max(0.0).sqrt()
}

/// Maximum atom count per side used by [`stationarity_discrepancy`] in `dim V ≥ 3`.
pub const ENERGY_SUBSAMPLE: usize = 1500;

/// Discrepancy between `ν` and `Σ_l p_l (A_l)_*ν`: angular Kolmogorov distance
/// in `dim V = 2`, energy distance on `d` (over a deterministic subsample)
/// otherwise.
pub fn stationarity_discrepancy(spec: &EnsembleSpec, nu: &EmpiricalProjectiveMeasure) -> f64 {
    let own: Vec<(ProjectivePoint, f64)> = nu.atoms().iter().cloned().zip(nu.weights().iter().copied()).collect();
    if spec.dim() == 2 {
        let a: Vec<(f64, f64)> = own.iter().map(|(x, w)| (line_angle(x), *w)).collect();
        let mut b = Vec::with_capacity(a.len() * spec.len());
        for (l, &p) in spec.probs().iter().enumerate() {
            let m = spec.matrix(l);
            b.extend(own.iter().map(|(x, w)| (line_angle(&x.transform(m)), p * w)));
        }
        return kolmogorov_distance(a, b);
    }
    let base = thin(&own, ENERGY_SUBSAMPLE);
    let per_label = (ENERGY_SUBSAMPLE / spec.len()).max(1);
    let sub = thin(&own, per_label);
    let mut pushed = Vec::with_capacity(sub.len() * spec.len());
    for (l, &p) in spec.probs().iter().enumerate() {
        let m = spec.matrix(l);
        pushed.extend(sub.iter().map(|(x, w)| (x.transform(m), p * w)));
    }
    energy_distance(&base, &pushed)
}

/// The same statistic between two clouds on one space: angular Kolmogorov
/// distance in `dim V = 2`, energy distance otherwise.
pub fn measure_discrepancy(a: &EmpiricalProjectiveMeasure, b: &EmpiricalProjectiveMeasure) -> f64 {
    let pairs = |m: &EmpiricalProjectiveMeasure| -> Vec<(ProjectivePoint, f64)> {
        m.atoms().iter().cloned().zip(m.weights().iter().copied()).collect()
    };
    if a.dim() == 2 {
        let angles = |m: &EmpiricalProjectiveMeasure| m.atoms().iter().map(line_angle).zip(m.weights().iter().copied()).collect();
        return kolmogorov_distance(angles(a), angles(b));
    }
    energy_distance(&thin(&pairs(a), ENERGY_SUBSAMPLE), &thin(&pairs(b), ENERGY_SUBSAMPLE))
}

/// Outcome of [`guivarch_mass_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuivarchFit {
    pub alpha_fit: f64,
    pub c_fit: f64,
    pub violations: usize,
    pub hyperplanes_used: usize,
}

/// Power-law bound `ν{x̄ : d(x̄, P(W)) ≤ r} ≤ C r^α` over random hyperplanes `W`,
/// each through a random atom of `ν`.
///
/// `α` is the smallest least-squares slope of `log mass` against `log r`
/// over the hyperplanes whose neighbourhoods carry mass at every radius. `C` is the envelope of `mass/r^α` on the
/// even-indexed atoms; violations count `(W, r)` pairs where the mass of the
/// odd-indexed atoms exceeds `1.1·C·r^α`.
pub fn guivarch_mass_bound(nu: &EmpiricalProjectiveMeasure, trials: usize, radii: &[f64], seed: u64) -> Result<GuivarchFit> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0 && r < 1.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Validation("radii must be decreasing within (0,1)".into()));
    }
    if nu.is_empty() {
        return Err(LabError::InsufficientMass("empty measure".into()));
    }
    let dim = nu.dim();
    let mut rng = stream_rng(seed, 0x6775);
    // each hyperplane passes through a random atom, so its neighbourhoods
    // meet the support at every scale
    let normals: Vec<DVector<f64>> = (0..trials)
        .map(|_| {
            let x = nu.atoms()[rng.random_range(0..nu.len())].direction();
            loop {
                let v = random_unit_vector(&mut rng, dim);
                let n = &v - x * x.dot(&v);
                if n.norm() > 1e-6 {
                    return n.normalize();
                }
            }
        })
        .collect();
    guivarch_fit_for(nu, &normals, radii)
}

/// [`guivarch_mass_bound`] over the hyperplanes with the given unit normals.
pub fn guivarch_fit_for(nu: &EmpiricalProjectiveMeasure, normals: &[DVector<f64>], radii: &[f64]) -> Result<GuivarchFit> {
    let trials = normals.len();
    // hyperplane distance of a unit vector is |<x, n>|
    let profiles = par_indexed(trials, |t| {
        let n = &normals[t];
        let mut all = vec![0.0; radii.len()];
        let mut even = vec![0.0; radii.len()];
        let mut odd = vec![0.0; radii.len()];
        let (mut we, mut wo) = (0.0, 0.0);
        for (k, (x, &w)) in nu.atoms().iter().zip(nu.weights()).enumerate() {
            let d = x.direction().dot(n).abs();
            if k % 2 == 0 {
                we += w;
            } else {
                wo += w;
            }
            for (j, &r) in radii.iter().enumerate() {
                if d > r {
                    break;
                }
                all[j] += w;
                if k % 2 == 0 {
                    even[j] += w;
                } else {
                    odd[j] += w;
                }
            }
        }
        even.iter_mut().for_each(|m| *m /= we.max(f64::MIN_POSITIVE));
        odd.iter_mut().for_each(|m| *m /= wo.max(f64::MIN_POSITIVE));
        (all, even, odd)
    });
    let mut alpha = f64::INFINITY;
    let mut used = 0;
    for (all, _, _) in &profiles {
        // hyperplanes whose neighbourhood empties before the smallest radius
        // miss the support and say nothing about small scales
        if all.iter().any(|&m| m <= 0.0) || radii.len() < 2 {
            continue;
        }
        let pts: Vec<(f64, f64)> = radii.iter().zip(all).map(|(r, m)| (r.ln(), m.ln())).collect();
        used += 1;
        alpha = alpha.min(crate::stats::ls_fit(&pts).slope);
    }
    if used == 0 {
        return Err(LabError::InsufficientMass("no hyperplane neighbourhood carries mass".into()));
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let mut c: f64 = 1.0;
    for (_, even, _) in &profiles {
        for (j, &r) in radii.iter().enumerate() {
            c = c.max(even[j] / r.powf(alpha));
        }
    }
    let mut violations = 0;
    for (_, _, odd) in &profiles {
        for (j, &r) in radii.iter().enumerate() {
            if odd[j] > c * r.powf(alpha) * 1.1 {
                violations += 1;
            }
        }
    }
    Ok(GuivarchFit { alpha_fit: alpha, c_fit: c, violations, hyperplanes_used: used })
}

/// Fraction of atoms within `tol` of the hyperplane with normal `n`.
pub fn hyperplane_fraction(nu: &EmpiricalProjectiveMeasure, n: &DVector<f64>, tol: f64) -> f64 {
    let n = n.normalize();
    nu.atoms()
        .iter()
        .zip(nu.weights())
        .filter(|(x, _)| x.direction().dot(&n).abs() <= tol)
        .fold(0.0, |acc, (_, w)| acc + w)
}

/// Mean `log d(est_n, est_{n/2})` over `words` forward words for each `n`,
/// skipping gaps below `floor` (already at round-off). Returns `(n, mean log gap, count)`.
pub fn convergence_profile(spec: &EnsembleSpec, prefix_lens: &[usize], words: usize, seed: u64, floor: f64) -> Vec<(usize, f64, usize)> {
    let max_n = prefix_lens.iter().copied().max().unwrap_or(0);
    let start: Vec<DVector<f64>> = {
        let mut rng = stream_rng(seed, 0x7374);
        (0..2).map(|_| random_unit_vector(&mut rng, spec.dim())).collect()
    };
    let per_word = par_indexed(words, |i| {
        let word = sample_forward_word(spec, seed, i as u64, max_n);
        let mut buf = DVector::zeros(spec.dim());
        prefix_lens
            .iter()
            .map(|&n| {
                let a = top_direction_fast(spec, &word[..n], &start[0], &mut buf);
                let b = top_direction_fast(spec, &word[..n / 2], &start[1], &mut buf);
                unit_distance(a.as_slice(), b.as_slice())
            })
            .collect::<Vec<f64>>()
    });
    prefix_lens
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let logs: Vec<f64> = per_word.iter().map(|g| g[k]).filter(|&g| g > floor).map(f64::ln).collect();
            let mean = if logs.is_empty() { f64::NAN } else { logs.iter().sum::<f64>() / logs.len() as f64 };
            (n, mean, logs.len())
        })
        .collect()
}

/// Direction whose fixed point is attracting for `a`; used to build
/// reference measures.
pub fn attracting_direction(a: &DMatrix<f64>) -> ProjectivePoint {
    let mut q = generic_frame(a.nrows(), 1);
    let mut r = DMatrix::zeros(1, 1);
    for _ in 0..200 {
        q = a * q;
        qr_in_place(&mut q, &mut r);
    }
    ProjectivePoint::new(q.column(0).into_owned()).expect("unit")
}

/// Uniform angular measure on `P(R²)` with `n` atoms at jittered angles.
pub fn uniform_circle_measure<R: Rng + ?Sized>(n: usize, rng: &mut R) -> EmpiricalProjectiveMeasure {
    let atoms = (0..n)
        .map(|_| {
            let t = rng.random::<f64>() * std::f64::consts::PI;
            ProjectivePoint::from_slice(&[t.cos(), t.sin()]).expect("unit")
        })
        .collect();
    EmpiricalProjectiveMeasure::uniform(atoms, Provenance { seed: 0, n_samples: n, prefix_len: 0, acceptance_rate: None })
}
