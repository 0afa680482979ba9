//! Conditional entropies `H_i`, the Lyapunov dimension and the
//! Ledrappier–Young partial sums.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::boundary::{boundary_point, line_angle, sample_forward_word, EmpiricalProjectiveMeasure, DEFAULT_ACCEPT_TOL};
use crate::cocycle::{backward_flag, sample_word, LyapunovSpectrum};
use crate::ensemble::{shannon_entropy, EnsembleSpec};
use crate::error::{LabError, Result};
use crate::projective::{proj_distance, ProjectivePoint, Subspace};
use crate::rng::{child_seed, par_indexed};
use crate::stats::{mean, stderr};

/// `H_0 ≥ H_1 ≥ … ≥ H_s` in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyLadder {
    pub h: Vec<f64>,
    pub stderr: Vec<f64>,
    pub bin_width: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    /// Mean Miller–Madow correction added at each level.
    pub correction: Vec<f64>,
    /// Mean number of occupied cells at each level.
    pub cells: Vec<f64>,
}

impl EntropyLadder {
    pub fn s(&self) -> usize {
        self.h.len() - 1
    }

    /// Pooled standard error over all levels.
    pub fn pooled_stderr(&self) -> f64 {
        (self.stderr.iter().map(|s| s * s).sum::<f64>() / self.stderr.len() as f64).sqrt()
    }

    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.h.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Past length used to fix `V^i` for each outer word.
pub const LADDER_PAST_LEN: usize = 200;
/// Forward prefix used for inner boundary points.
pub const LADDER_PREFIX_LEN: usize = 100;

/// Greedy net of radius `r` on `P(W)`: every point joins the nearest
/// existing center within `r`, or becomes a new center. Cells therefore
/// have diameter at most `2r`.
pub struct MetricNet {
    radius: f64,
    basis: nalgebra::DMatrix<f64>,
    centers: Vec<DVector<f64>>,
    grid: HashMap<Vec<i64>, Vec<usize>>,
}

impl MetricNet {
    pub fn new(w: &Subspace, radius: f64) -> Self {
        Self { radius, basis: w.basis().clone(), centers: Vec::new(), grid: HashMap::new() }
    }

    fn key(&self, c: &DVector<f64>) -> Vec<i64> {
        c.iter().map(|v| (v / self.radius).floor() as i64).collect()
    }

    /// Cell index of `x̄`, which must lie in `P(W)` up to round-off.
    pub fn assign(&mut self, x: &DVector<f64>) -> usize {
        let mut c = self.basis.transpose() * x;
        c /= c.norm();
        let mut best: Option<(f64, usize)> = None;
        // |x ∓ c| ≤ √2·d(x̄, c̄) for d ≤ 1/√2, so two grid cells of slack suffice
        for sign in [1.0, -1.0] {
            let probe = &c * sign;
            let key = self.key(&probe);
            let k = key.len();
            let span = 5i64.pow(k as u32);
            for code in 0..span {
                let mut cc = code;
                let mut nb = key.clone();
                for v in nb.iter_mut() {
                    *v += cc % 5 - 2;
                    cc /= 5;
                }
                if let Some(ids) = self.grid.get(&nb) {
                    for &id in ids {
                        let d = crate::projective::unit_distance(self.centers[id].as_slice(), c.as_slice());
                        if d <= self.radius && best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, id));
                        }
                    }
                }
            }
        }
        if let Some((_, id)) = best {
            return id;
        }
        let id = self.centers.len();
        let key = self.key(&c);
        self.centers.push(c);
        self.grid.entry(key).or_default().push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Plug-in `H(S | C)` with the Miller–Madow term `Σ_c (m_c − 1)/(2N)`,
/// `m_c` the number of distinct symbols seen in cell `c`.
/// Returns `(estimate, correction, occupied cells)`.
pub fn conditional_entropy(symbols: &[usize], cells: &[usize]) -> (f64, f64, usize) {
    let n = symbols.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut marg: HashMap<usize, usize> = HashMap::new();
    for (&s, &c) in symbols.iter().zip(cells) {
        *joint.entry((c, s)).or_default() += 1;
        *marg.entry(c).or_default() += 1;
    }
    let mut h = 0.0;
    let mut distinct: HashMap<usize, usize> = HashMap::new();
    let mut keys: Vec<_> = joint.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let cnt = joint[&key] as f64;
        let cell = marg[&key.0] as f64;
        h -= cnt / n * (cnt / cell).ln();
        *distinct.entry(key.0).or_default() += 1;
    }
    let correction: f64 = distinct.values().map(|&m| (m as f64 - 1.0) / (2.0 * n)).sum();
    (h + correction, correction, marg.len())
}

/// Per-outer-word estimates `(H_i, correction_i, cells_i)` for `i = 1..=s`.
fn ladder_for_outer(spec: &EnsembleSpec, spectrum: &LyapunovSpectrum, n_inner: usize, bin_width: f64, seed: u64) -> Result<Vec<(f64, f64, usize)>> {
    let s = spectrum.s();
    let past = sample_word(spec, LADDER_PAST_LEN, 1, seed);
    let flags = backward_flag(spec, &past, spectrum)?;
    let inner_seed = child_seed(seed, 0x696e);
    let samples = par_indexed(n_inner, |k| -> Result<(usize, ProjectivePoint)> {
        let w = sample_forward_word(spec, inner_seed, k as u64, LADDER_PREFIX_LEN);
        Ok((w[0], boundary_point(spec, &w, DEFAULT_ACCEPT_TOL)?.point))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let symbols: Vec<usize> = samples.iter().map(|p| p.0).collect();
    // level cells refine the previous level's cells
    let mut cells = vec![0usize; n_inner];
    let mut out = Vec::with_capacity(s);
    let undefined = usize::MAX;
    for i in 1..=s {
        let perp = if i == s { Subspace::full(spec.dim()) } else { flags[i].orthogonal_complement() };
        let mut net = MetricNet::new(&perp, bin_width / 2.0);
        let mut refined: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, (_, x)) in samples.iter().enumerate() {
            let proj = perp.project(x.direction());
            let cell = if proj.norm() <= crate::projective::DEGENERACY_TOL { undefined } else { net.assign(&proj) };
            let next = refined.len();
            cells[k] = *refined.entry((cells[k], cell)).or_insert(next);
        }
        out.push(conditional_entropy(&symbols, &cells));
    }
    Ok(out)
}

/// `H_i` of the first symbol given `P_{(V^i)^⊥}πη`, averaged over
/// `n_outer` independent pasts; `H_0 = H(p)` exactly.
pub fn conditional_entropy_ladder(
    spec: &EnsembleSpec,
    spectrum: &LyapunovSpectrum,
    n_outer: usize,
    n_inner: usize,
    bin_width: f64,
    seed: u64,
) -> Result<EntropyLadder> {
    if n_outer < 8 {
        return Err(LabError::Validation("at least 8 outer words required".into()));
    }
    if n_inner < 10_000 {
        return Err(LabError::Validation("at least 10^4 inner words required".into()));
    }
    if !(bin_width > 0.0 && bin_width <= 0.2) {
        return Err(LabError::Validation(format!("bin_width {bin_width} outside (0, 0.2]")));
    }
    let s = spectrum.s();
    let hp = shannon_entropy(spec);
    let mut per_outer = Vec::with_capacity(n_outer);
    for o in 0..n_outer {
        per_outer.push(ladder_for_outer(spec, spectrum, n_inner, bin_width, child_seed(seed, o as u64))?);
    }
    let mut h = vec![hp];
    let mut se = vec![0.0];
    let mut correction = vec![0.0];
    let mut cells = vec![1.0];
    for i in 0..s {
        let vals: Vec<f64> = per_outer.iter().map(|v| v[i].0).collect();
        h.push(mean(&vals));
        se.push(stderr(&vals));
        correction.push(mean(&per_outer.iter().map(|v| v[i].1).collect::<Vec<_>>()));
        cells.push(mean(&per_outer.iter().map(|v| v[i].2 as f64).collect::<Vec<_>>()));
    }
    Ok(EntropyLadder { h, stderr: se, bin_width, n_outer, n_inner, correction, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDimensionResult {
    pub l: Vec<f64>,
    pub m: usize,
    pub dim_ly: f64,
    pub delta_max_crosscheck: f64,
}

/// Largest element of `Δ`: pour `hp` into slots `i = 1..=s` of capacity
/// `−λ̃_i d_i`, most valuable rate `−1/λ̃_i` first.
pub fn waterfill(normalized_gaps: &[f64], multiplicities: &[usize], hp: f64) -> f64 {
    let mut order: Vec<usize> = (0..normalized_gaps.len()).collect();
    order.sort_by(|&a, &b| normalized_gaps[b].total_cmp(&normalized_gaps[a]));
    let mut left = hp;
    let mut value = 0.0;
    for i in order {
        let cap = -normalized_gaps[i] * multiplicities[i] as f64;
        let x = left.min(cap);
        value += x / -normalized_gaps[i];
        left -= x;
        if left <= 0.0 {
            break;
        }
    }
    value
}

/// Piecewise `dim_LY` from `λ̃` and `d`, checked against [`waterfill`].
pub fn lyapunov_dimension_from(normalized_gaps: &[f64], multiplicities: &[usize], hp: f64) -> LyapunovDimensionResult {
    assert!(hp >= 0.0, "entropy must be nonnegative");
    // normalized_gaps[j-1] = λ̃_j, multiplicities[j] = d_j (j = 0..=s)
    let s = normalized_gaps.len();
    let mut l = vec![0.0; s + 1];
    for i in 1..=s {
        l[i] = l[i - 1] - normalized_gaps[i - 1] * multiplicities[i] as f64;
    }
    let m = (0..=s).filter(|&i| hp >= l[i]).max().unwrap_or(0);
    let dim_ly = if m < s {
        multiplicities[1..=m].iter().sum::<usize>() as f64 + (hp - l[m]) / -normalized_gaps[m]
    } else {
        multiplicities.iter().sum::<usize>() as f64 - 1.0
    };
    let delta_max_crosscheck = waterfill(normalized_gaps, &multiplicities[1..], hp);
    LyapunovDimensionResult { l, m, dim_ly, delta_max_crosscheck }
}

pub fn lyapunov_dimension(spectrum: &LyapunovSpectrum, hp: f64) -> LyapunovDimensionResult {
    let gaps: Vec<f64> = (1..=spectrum.s()).map(|i| spectrum.normalized_gap(i)).collect();
    let r = lyapunov_dimension_from(&gaps, &spectrum.multiplicities, hp);
    debug_assert!((r.dim_ly - r.delta_max_crosscheck).abs() <= 1e-9);
    r
}

/// `Σ_{j=i}^{k−1} (H_{j+1} − H_j)/λ̃_{j+1}`; `(0, s)` predicts `dim ν`.
pub fn ly_formula_dimension(ladder: &EntropyLadder, spectrum: &LyapunovSpectrum, i: usize, k: usize) -> Result<f64> {
    let s = spectrum.s();
    if !(i < k && k <= s) || ladder.h.len() != s + 1 {
        return Err(LabError::Index(format!("need 0 <= i < k <= s = {s}, got i = {i}, k = {k}")));
    }
    Ok((i..k).map(|j| (ladder.h[j + 1] - ladder.h[j]) / spectrum.normalized_gap(j + 1)).sum())
}

/// `h_F` estimate at bandwidth `h` and `h/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FurstenbergEntropy {
    pub value: f64,
    pub value_half_bandwidth: f64,
    pub bandwidth: f64,
}

/// Wrapped-Gaussian density on the circle of length `π`. Atoms are
/// linearly binned onto a grid of step `h/20` and convolved there;
/// evaluation interpolates linearly between grid nodes.
struct AngularKde {
    density: Vec<f64>,
    step: f64,
}

impl AngularKde {
    fn new(pts: &[(f64, f64)], h: f64) -> Self {
        let bins = ((20.0 * PI / h).ceil() as usize).max(64);
        let step = PI / bins as f64;
        let mut mass = vec![0.0; bins];
        for &(t, w) in pts {
            let u = (t + FRAC_PI_2) / step;
            let k = u.floor();
            let frac = u - k;
            let k = (k as i64).rem_euclid(bins as i64) as usize;
            mass[k] += w * (1.0 - frac);
            mass[(k + 1) % bins] += w * frac;
        }
        let reach = ((8.0 * h / step).ceil() as usize).min((bins - 1) / 2);
        let norm = 1.0 / (h * (2.0 * PI).sqrt());
        let kernel: Vec<f64> = (0..=reach)
            .map(|j| {
                // fold every wrap of the line onto the circle
                (-2..=2).map(|m| {
                    let z = (j as f64 * step + m as f64 * PI) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                    * norm
            })
            .collect();
        let occupied: Vec<usize> = (0..bins).filter(|&k| mass[k] > 0.0).collect();
        let mut density = vec![0.0; bins];
        for &k in &occupied {
            let m = mass[k];
            density[k] += m * kernel[0];
            for (j, &kv) in kernel.iter().enumerate().skip(1) {
                density[(k + j) % bins] += m * kv;
                density[(k + bins - j) % bins] += m * kv;
            }
        }
        Self { density, step }
    }

    fn density(&self, t: f64) -> f64 {
        let bins = self.density.len();
        let u = (t + FRAC_PI_2) / self.step;
        let k = u.floor();
        let frac = u - k;
        let k = (k as i64).rem_euclid(bins as i64) as usize;
        self.density[k] * (1.0 - frac) + self.density[(k + 1) % bins] * frac
    }
}

fn furstenberg_at(spec: &EnsembleSpec, nu: &EmpiricalProjectiveMeasure, h: f64) -> f64 {
    let base: Vec<(f64, f64)> = nu.atoms().iter().map(line_angle).zip(nu.weights().iter().copied()).collect();
    let f_nu = AngularKde::new(&base, h);
    let mut total = 0.0;
    for (l, &p) in spec.probs().iter().enumerate() {
        let pushed: Vec<(f64, f64)> =
            nu.atoms().iter().map(|x| line_angle(&x.transform(spec.matrix(l)))).zip(nu.weights().iter().copied()).collect();
        let f_push = AngularKde::new(&pushed, h);
        let terms = par_indexed(pushed.len(), |k| {
            let (t, w) = pushed[k];
            w * (f_push.density(t) / f_nu.density(t)).ln()
        });
        total += p * terms.iter().sum::<f64>();
    }
    total
}

/// `h_F(ν) = Σ_l p_l ∫ log (d(A_l)_*ν/dν) d(A_l)_*ν` from angular kernel
/// density estimates on `P(R²)`.
pub fn furstenberg_entropy_2d(spec: &EnsembleSpec, nu: &EmpiricalProjectiveMeasure, kde_bandwidth: f64) -> Result<FurstenbergEntropy> {
    if spec.dim() != 2 {
        return Err(LabError::DimensionUnsupported(format!("Furstenberg entropy needs dim V = 2, got {}", spec.dim())));
    }
    if nu.len() < 10_000 {
        return Err(LabError::Validation("Furstenberg entropy needs at least 10^4 atoms".into()));
    }
    if !(kde_bandwidth > 0.0 && kde_bandwidth < FRAC_PI_2) {
        return Err(LabError::Validation(format!("bandwidth {kde_bandwidth} outside (0, π/2)")));
    }
    Ok(FurstenbergEntropy {
        value: furstenberg_at(spec, nu, kde_bandwidth),
        value_half_bandwidth: furstenberg_at(spec, nu, kde_bandwidth / 2.0),
        bandwidth: kde_bandwidth,
    })
}

/// Fraction of samples whose boundary point falls outside the cone
/// `A_{η_0} C` of its own first symbol, or inside another symbol's cone
/// (`C` the closed positive orthant).
pub fn cone_misclassification(spec: &EnsembleSpec, n: usize, seed: u64) -> Result<f64> {
    let inverses: Vec<_> = (0..spec.len()).map(|l| spec.inverse(l).clone()).collect();
    let in_cone = |l: usize, x: &DVector<f64>| {
        let c = &inverses[l] * x;
        let sign = if c.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        c.iter().all(|&v| sign * v >= -1e-12)
    };
    let bad = par_indexed(n, |k| -> Result<bool> {
        let w = sample_forward_word(spec, seed, k as u64, LADDER_PREFIX_LEN);
        let x = boundary_point(spec, &w, DEFAULT_ACCEPT_TOL)?.point;
        let v = x.direction();
        let own = in_cone(w[0], v);
        let other = (0..spec.len()).any(|l| l != w[0] && in_cone(l, v));
        Ok(!own || other)
    });
    let mut count = 0usize;
    for b in bad {
        count += b? as usize;
    }
    Ok(count as f64 / n as f64)
}

/// Smallest distance between boundary points with different first symbols,
/// over a sample (a direct look at cylinder separation).
pub fn cylinder_gap(points: &[(usize, ProjectivePoint)]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, x) in points {
        for (b, y) in points {
            if a != b {
                best = best.min(proj_distance(x, y));
            }
        }
    }
    best
}
