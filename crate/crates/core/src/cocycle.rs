//! Random words, factored matrix products, the Lyapunov spectrum and the
//! Oseledets flags and splitting of the cocycle `ω ↦ A_{ω_{-1}}`.
//!
//! All long products are handled by QR reorthonormalization: the orthogonal
//! factor carries the subspace information and the log-diagonal carries the
//! growth, so products of length 10⁶ never overflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleDiagnostics, EnsembleSpec};
use crate::error::{LabError, Result};
use crate::linalg::{self, qr_in_place};
use crate::projective::{principal_angle_min_sin, ProjectivePoint, Subspace};
use crate::rng::{par_indexed, stream_rng};

/// Stream used for the nonnegative half of a sampled word.
const FORWARD_STREAM: u64 = 0;
/// Stream used for the negative half, drawn outward from `ω_{-1}`.
const BACKWARD_STREAM: u64 = 1;

/// Finite window `ω_{-n_back} … ω_{-1} | ω_0 … ω_{n_fwd-1}` of a two-sided sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoSidedWord {
    /// `(ω_{-n_back}, …, ω_{-1})`.
    pub negative: Vec<usize>,
    /// `(ω_0, …, ω_{n_fwd-1})`.
    pub nonnegative: Vec<usize>,
    pub seed: u64,
}

impl TwoSidedWord {
    pub fn n_back(&self) -> usize {
        self.negative.len()
    }

    pub fn n_fwd(&self) -> usize {
        self.nonnegative.len()
    }

    /// `ω_j` for `-n_back ≤ j < n_fwd`.
    pub fn at(&self, j: i64) -> Option<usize> {
        if j >= 0 {
            self.nonnegative.get(j as usize).copied()
        } else {
            let k = (-j) as usize;
            (k <= self.negative.len()).then(|| self.negative[self.negative.len() - k])
        }
    }

    /// Negative coordinates listed outward: `ω_{-1}, ω_{-2}, …`.
    pub fn past(&self) -> impl Iterator<Item = usize> + '_ {
        self.negative.iter().rev().copied()
    }

    /// `σω`: the window moves one step into the future (keeps both lengths
    /// when `extra` supplies the next future symbol).
    pub fn shift(&self, extra: Option<usize>) -> Self {
        let mut negative = self.negative[1..].to_vec();
        negative.push(self.nonnegative[0]);
        let mut nonnegative = self.nonnegative[1..].to_vec();
        nonnegative.extend(extra);
        Self { negative, nonnegative, seed: self.seed }
    }

    /// `σ^{-1}ω`: the window moves one step into the past.
    pub fn unshift(&self, extra_past: Option<usize>) -> Self {
        let last = *self.negative.last().expect("nonempty past");
        let mut negative: Vec<usize> = extra_past.into_iter().collect();
        negative.extend_from_slice(&self.negative[..self.negative.len() - 1]);
        let mut nonnegative = vec![last];
        nonnegative.extend_from_slice(&self.nonnegative[..self.nonnegative.len() - 1]);
        Self { negative, nonnegative, seed: self.seed }
    }

    /// Subwindow keeping the `n_back` most recent past symbols and the first `n_fwd` future ones.
    pub fn truncated(&self, n_back: usize, n_fwd: usize) -> Self {
        let nb = n_back.min(self.n_back());
        let nf = n_fwd.min(self.n_fwd());
        Self {
            negative: self.negative[self.negative.len() - nb..].to_vec(),
            nonnegative: self.nonnegative[..nf].to_vec(),
            seed: self.seed,
        }
    }
}

/// i.i.d. labels with law `p`. The two halves use separate streams, so a
/// longer request with the same seed extends a shorter one.
pub fn sample_word(spec: &EnsembleSpec, n_back: usize, n_fwd: usize, seed: u64) -> TwoSidedWord {
    assert!(n_back >= 1 && n_fwd >= 1, "word halves must be nonempty");
    let mut fwd = stream_rng(seed, FORWARD_STREAM);
    let mut back = stream_rng(seed, BACKWARD_STREAM);
    let nonnegative = (0..n_fwd).map(|_| spec.sample_label(&mut fwd)).collect();
    let mut negative: Vec<usize> = (0..n_back).map(|_| spec.sample_label(&mut back)).collect();
    negative.reverse();
    TwoSidedWord { negative, nonnegative, seed }
}

/// Labels drawn i.i.d. from `p`.
pub fn sample_labels<R: Rng + ?Sized>(spec: &EnsembleSpec, n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| spec.sample_label(rng)).collect()
}

/// Which matrix of the ensemble a QR sweep multiplies by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Action {
    Direct,
    Transpose,
    InverseTranspose,
}

fn action_matrix(spec: &EnsembleSpec, l: usize, action: Action) -> &DMatrix<f64> {
    match action {
        Action::Direct => spec.matrix(l),
        Action::Transpose => spec.transpose(l),
        Action::InverseTranspose => spec.inverse_transpose(l),
    }
}

/// A fixed orthogonal matrix with no special alignment to coordinate axes;
/// used as the starting frame of every sweep.
pub fn generic_frame(dim: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = stream_rng(0x6765_6e65_7269_63, dim as u64);
    let mut q = DMatrix::from_fn(dim, cols, |_, _| rng.random::<f64>() - 0.5);
    let mut r = DMatrix::zeros(cols, cols);
    qr_in_place(&mut q, &mut r);
    q
}

/// Reusable QR sweep state: `Q ← qr(M Q)` with accumulated `log R_kk`.
pub(crate) struct QrSweep {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    buf: DMatrix<f64>,
    pub logs: Vec<f64>,
}

impl QrSweep {
    pub fn new(start: DMatrix<f64>) -> Self {
        let (n, k) = start.shape();
        Self { q: start, r: DMatrix::zeros(k, k), buf: DMatrix::zeros(n, k), logs: vec![0.0; k] }
    }

    #[inline]
    pub fn apply(&mut self, m: &DMatrix<f64>) {
        m.mul_to(&self.q, &mut self.buf);
        std::mem::swap(&mut self.q, &mut self.buf);
        qr_in_place(&mut self.q, &mut self.r);
        for (k, lg) in self.logs.iter_mut().enumerate() {
            *lg += self.r[(k, k)].ln();
        }
    }

    /// Sweep over `labels` in the given order, multiplying on the left each time.
    pub fn run(spec: &EnsembleSpec, labels: impl Iterator<Item = usize>, action: Action, cols: usize) -> Self {
        let mut s = Self::new(generic_frame(spec.dim(), cols));
        for l in labels {
            s.apply(action_matrix(spec, l, action));
        }
        s
    }
}

/// Product `A_{ω_from} ⋯ A_{ω_{to-1}} = Q · diag(e^{log_diag}) · N` with `Q`
/// orthogonal and `N` unit upper triangular.
#[derive(Debug, Clone)]
pub struct FactoredProduct {
    pub q: DMatrix<f64>,
    pub log_diag: Vec<f64>,
    pub unit_upper: DMatrix<f64>,
}

impl FactoredProduct {
    pub fn identity(dim: usize) -> Self {
        Self { q: DMatrix::identity(dim, dim), log_diag: vec![0.0; dim], unit_upper: DMatrix::identity(dim, dim) }
    }

    /// Dense product; only meaningful while the entries fit in `f64`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.q.nrows();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(n, self.log_diag.iter().map(|l| l.exp())));
        &self.q * d * &self.unit_upper
    }

    /// Left-multiply by `a`.
    pub fn premultiply(&mut self, a: &DMatrix<f64>) {
        let n = self.q.nrows();
        let mut q = a * &self.q;
        let mut r = DMatrix::zeros(n, n);
        qr_in_place(&mut q, &mut r);
        // r = D_r N_r;  r · D N = D_r D (D⁻¹ N_r D) N
        let mut scaled = DMatrix::identity(n, n);
        for i in 0..n {
            for k in i + 1..n {
                scaled[(i, k)] = r[(i, k)] / r[(i, i)] * (self.log_diag[k] - self.log_diag[i]).exp();
            }
        }
        self.unit_upper = scaled * &self.unit_upper;
        for i in 0..n {
            self.log_diag[i] += r[(i, i)].ln();
        }
        self.q = q;
    }
}

/// `A_{ω_from} ⋯ A_{ω_{to-1}}` in factored log-scale form (indices may be negative).
pub fn forward_product(spec: &EnsembleSpec, word: &TwoSidedWord, from: i64, to: i64) -> Result<FactoredProduct> {
    if from > to {
        return Err(LabError::Range(format!("empty-or-reversed range {from}..{to}")));
    }
    if from < -(word.n_back() as i64) || to > word.n_fwd() as i64 {
        return Err(LabError::Range(format!(
            "range {from}..{to} outside word window -{}..{}",
            word.n_back(),
            word.n_fwd()
        )));
    }
    let mut p = FactoredProduct::identity(spec.dim());
    for j in (from..to).rev() {
        p.premultiply(spec.matrix(word.at(j).expect("in range")));
    }
    Ok(p)
}

/// Lyapunov exponents `λ_0 > … > λ_s` with multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// The `dim V` ungrouped QR rates (seed means), decreasing.
    pub raw_exponents: Vec<f64>,
    /// Standard error of each raw rate across seeds.
    pub raw_stderr: Vec<f64>,
    /// Standard error of each grouped exponent.
    pub stderr: Vec<f64>,
    pub steps: usize,
    pub n_seeds: usize,
}

impl LyapunovSpectrum {
    /// Index `s` of the last exponent.
    pub fn s(&self) -> usize {
        self.exponents.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    /// `λ̃_i = λ_i − λ_0` for `1 ≤ i ≤ s`.
    pub fn normalized_gap(&self, i: usize) -> f64 {
        self.exponents[i] - self.exponents[0]
    }

    /// `d_0 + … + d_i`.
    pub fn cumulative_multiplicity(&self, i: usize) -> usize {
        self.multiplicities[..=i].iter().sum()
    }

    /// Build directly from known exponents (used for analytic cases and tests).
    pub fn from_exponents(exponents: Vec<f64>, multiplicities: Vec<usize>) -> Self {
        let raw_exponents = exponents
            .iter()
            .zip(&multiplicities)
            .flat_map(|(&l, &d)| std::iter::repeat_n(l, d))
            .collect::<Vec<_>>();
        let n = raw_exponents.len();
        let s = exponents.len();
        Self {
            exponents,
            multiplicities,
            raw_exponents,
            raw_stderr: vec![0.0; n],
            stderr: vec![0.0; s],
            steps: 0,
            n_seeds: 0,
        }
    }

    /// Weighted sum `Σ λ_i d_i`.
    pub fn trace(&self) -> f64 {
        self.exponents.iter().zip(&self.multiplicities).map(|(l, &d)| l * d as f64).sum()
    }

    /// `d_0 = 1` must hold whenever the diagnostics support irreducibility and proximality.
    pub fn check_top_simple(&self, diagnostics: &EnsembleDiagnostics) -> Result<()> {
        if diagnostics.passed() && self.multiplicities[0] != 1 {
            return Err(LabError::DiagnosticsContradiction(format!(
                "diagnostics passed but top multiplicity is {}",
                self.multiplicities[0]
            )));
        }
        Ok(())
    }
}

/// Raw QR growth rates of one trajectory of `steps` random matrices, sorted decreasing.
/// An extra `max(steps/10, 100)` burn-in steps precede the counted ones.
pub fn raw_rates(spec: &EnsembleSpec, steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, FORWARD_STREAM);
    let n = spec.dim();
    let mut sweep = QrSweep::new(generic_frame(n, n));
    // the frame aligns with the Oseledets directions during burn-in; those
    // steps are excluded so the start-up offset does not bias the rates
    let burn_in = (steps / 10).max(100);
    for _ in 0..burn_in {
        sweep.apply(spec.matrix(spec.sample_label(&mut rng)));
    }
    let start = sweep.logs.clone();
    for _ in 0..steps {
        sweep.apply(spec.matrix(spec.sample_label(&mut rng)));
    }
    let mut rates: Vec<f64> = sweep.logs.iter().zip(&start).map(|(l, s)| (l - s) / steps as f64).collect();
    rates.sort_by(|a, b| b.total_cmp(a));
    rates
}

/// Mean and standard error of raw rates over the given seeds (seed order reduction).
pub fn raw_rate_statistics(spec: &EnsembleSpec, steps: usize, seeds: &[u64]) -> (Vec<f64>, Vec<f64>) {
    let per_seed = par_indexed(seeds.len(), |i| raw_rates(spec, steps, seeds[i]));
    let n = spec.dim();
    let m = seeds.len() as f64;
    let mean: Vec<f64> = (0..n).map(|k| per_seed.iter().map(|r| r[k]).sum::<f64>() / m).collect();
    let se: Vec<f64> = (0..n)
        .map(|k| {
            if seeds.len() < 2 {
                return 0.0;
            }
            let var = per_seed.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    (mean, se)
}

/// Default grouping tolerance: ten times the pooled raw standard error, with a floor.
pub fn default_grouping_tol(raw_stderr: &[f64]) -> f64 {
    let pooled = (raw_stderr.iter().map(|s| s * s).sum::<f64>() / raw_stderr.len().max(1) as f64).sqrt();
    (10.0 * pooled).max(1e-9)
}

/// Merge sorted raw rates whose gaps fall below `tol`.
pub fn group_exponents(raw: &[f64], raw_se: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<usize>, Vec<f64>)> {
    let mut exponents = Vec::new();
    let mut multiplicities = Vec::new();
    let mut stderr = Vec::new();
    let mut start = 0;
    for k in 0..=raw.len() {
        let boundary = k == raw.len() || (k > 0 && raw[k - 1] - raw[k] >= tol);
        if k > 0 && k < raw.len() {
            let gap = raw[k - 1] - raw[k];
            let se = (raw_se[k - 1].powi(2) + raw_se[k].powi(2)).sqrt();
            if se > 0.0 && (gap - tol).abs() <= 2.0 * se {
                return Err(LabError::DegenerateSpectrum(format!(
                    "gap {gap:.3e} between raw rates {} and {k} is within 2 stderr ({se:.3e}) of the grouping tolerance {tol:.3e}; increase steps",
                    k - 1
                )));
            }
        }
        if boundary && k > start {
            let d = k - start;
            exponents.push(raw[start..k].iter().sum::<f64>() / d as f64);
            stderr.push(raw_se[start..k].iter().map(|s| s * s).sum::<f64>().sqrt() / d as f64);
            multiplicities.push(d);
            start = k;
        }
    }
    Ok((exponents, multiplicities, stderr))
}

/// Lyapunov spectrum from QR-reorthonormalized products, averaged over seeds.
pub fn lyapunov_spectrum(spec: &EnsembleSpec, steps: usize, seeds: &[u64], grouping_tol: f64) -> Result<LyapunovSpectrum> {
    assert!(steps >= 1000, "at least 10^3 steps required");
    assert!(grouping_tol > 0.0, "grouping tolerance must be positive");
    assert!(!seeds.is_empty(), "at least one seed required");
    let (raw, raw_se) = raw_rate_statistics(spec, steps, seeds);
    let (exponents, multiplicities, stderr) = group_exponents(&raw, &raw_se, grouping_tol)?;
    Ok(LyapunovSpectrum {
        exponents,
        multiplicities,
        raw_exponents: raw,
        raw_stderr: raw_se,
        stderr,
        steps,
        n_seeds: seeds.len(),
    })
}

/// Same as [`lyapunov_spectrum`] with [`default_grouping_tol`].
pub fn lyapunov_spectrum_auto(spec: &EnsembleSpec, steps: usize, seeds: &[u64]) -> Result<LyapunovSpectrum> {
    let (raw, raw_se) = raw_rate_statistics(spec, steps, seeds);
    let tol = default_grouping_tol(&raw_se);
    let (exponents, multiplicities, stderr) = group_exponents(&raw, &raw_se, tol)?;
    Ok(LyapunovSpectrum {
        exponents,
        multiplicities,
        raw_exponents: raw,
        raw_stderr: raw_se,
        stderr,
        steps,
        n_seeds: seeds.len(),
    })
}

/// Minimum log-gap between singular value groups before a flag is trusted (10³).
const MIN_LOG_GAP: f64 = 6.907_755_278_982_137;
/// Required `gap × length` before a window is considered resolvable.
const RESOLVABILITY: f64 = 20.0;

fn check_resolvable(spectrum: &LyapunovSpectrum, len: usize, side: &str) -> Result<()> {
    let min_gap = spectrum
        .exponents
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    if spectrum.s() > 0 && min_gap * (len as f64) < RESOLVABILITY {
        return Err(LabError::Resolution(format!(
            "{side} length {len} too short: smallest exponent gap {min_gap:.4} × length < {RESOLVABILITY}"
        )));
    }
    Ok(())
}

/// Split the columns of a finished sweep into groups of sizes `sizes` (in
/// column order), checking ordering and the 10³ separation at each boundary.
fn split_columns(sweep: &QrSweep, sizes: &[usize], side: &str) -> Result<Vec<DMatrix<f64>>> {
    let logs = &sweep.logs;
    let mut groups = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (g, &d) in sizes.iter().enumerate() {
        let end = start + d;
        if g + 1 < sizes.len() {
            let lowest_above = logs[start..end].iter().copied().fold(f64::INFINITY, f64::min);
            let highest_below = logs[end..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lowest_above - highest_below < MIN_LOG_GAP {
                return Err(LabError::Resolution(format!(
                    "{side} product singular gap e^{:.3} below 10^3 at group boundary {g}",
                    lowest_above - highest_below
                )));
            }
        }
        groups.push(sweep.q.columns(start, d).into_owned());
        start = end;
    }
    Ok(groups)
}

/// Backward flag `V^0 ⊃ … ⊃ V^{s−1}` (`V^{-1} = V` and `V^s = {0}` implicit).
///
/// `V^i` is spanned by the right-singular vectors of `A_{ω_{-n}} ⋯ A_{ω_{-1}}`
/// belonging to its `dim V − (d_0+…+d_i)` smallest singular values. They are
/// read off a QR sweep of the transposed product, whose leading columns align
/// with the leading right-singular directions.
pub fn backward_flag(spec: &EnsembleSpec, word: &TwoSidedWord, spectrum: &LyapunovSpectrum) -> Result<Vec<Subspace>> {
    check_resolvable(spectrum, word.n_back(), "backward")?;
    let n = spec.dim();
    // Bᵀ = A_{ω_{-1}}ᵀ ⋯ A_{ω_{-n}}ᵀ, applied innermost first.
    let sweep = QrSweep::run(spec, word.negative.iter().copied(), Action::Transpose, n);
    let groups = split_columns(&sweep, &spectrum.multiplicities, "backward")?;
    let mut flags = Vec::with_capacity(spectrum.s());
    for i in 0..spectrum.s() {
        let tail: Vec<&DMatrix<f64>> = groups[i + 1..].iter().collect();
        flags.push(Subspace::from_orthonormal(hstack(&tail, n)));
    }
    Ok(flags)
}

/// Forward subspaces `W^i = E^0 ⊕ … ⊕ E^i` for `0 ≤ i < s`, from the
/// right-singular vectors of `A_{ω_{n−1}}^{-1} ⋯ A_{ω_0}^{-1}` with the
/// `d_0+…+d_i` smallest singular values.
pub fn forward_subspaces(spec: &EnsembleSpec, word: &TwoSidedWord, spectrum: &LyapunovSpectrum) -> Result<Vec<Subspace>> {
    check_resolvable(spectrum, word.n_fwd(), "forward")?;
    let n = spec.dim();
    // Fᵀ = A_{ω_0}^{-T} ⋯ A_{ω_{n-1}}^{-T}; innermost is ω_{n-1}.
    let sweep = QrSweep::run(spec, word.nonnegative.iter().rev().copied(), Action::InverseTranspose, n);
    let sizes: Vec<usize> = spectrum.multiplicities.iter().rev().copied().collect();
    let groups = split_columns(&sweep, &sizes, "forward")?;
    // groups are ordered E^s-side first
    let s = spectrum.s();
    let mut out = Vec::with_capacity(s);
    for i in 0..s {
        let head: Vec<&DMatrix<f64>> = groups[s - i..].iter().collect();
        out.push(Subspace::from_orthonormal(hstack(&head, n)));
    }
    Ok(out)
}

fn hstack(parts: &[&DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut m = DMatrix::zeros(n, cols);
    let mut c = 0;
    for p in parts {
        m.columns_mut(c, p.ncols()).copy_from(p);
        c += p.ncols();
    }
    m
}

/// Oseledets data at one trajectory.
#[derive(Debug, Clone)]
pub struct OseledetsFrame {
    pub word: TwoSidedWord,
    /// `V^0, …, V^{s−1}`.
    pub flags: Vec<Subspace>,
    /// `E^0, …, E^s`.
    pub splitting: Vec<Subspace>,
    pub kappa: f64,
}

impl OseledetsFrame {
    pub fn s(&self) -> usize {
        self.splitting.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.splitting[0].ambient_dim()
    }

    /// `V^i` for `-1 ≤ i ≤ s`, taken from the backward flag.
    pub fn v(&self, i: i64) -> Subspace {
        let n = self.dim();
        if i < 0 {
            Subspace::full(n)
        } else if i as usize >= self.s() {
            Subspace::trivial(n)
        } else {
            self.flags[i as usize].clone()
        }
    }

    /// `E^{i+1} ⊕ … ⊕ E^s` built from the splitting (equals `V^i` up to round-off).
    pub fn v_from_splitting(&self, i: usize) -> Subspace {
        let parts: Vec<&Subspace> = self.splitting[i + 1..].iter().collect();
        if parts.is_empty() {
            return Subspace::trivial(self.dim());
        }
        Subspace::sum(&parts)
    }

    /// Smallest singular value of the concatenated orthonormal bases of all `E^i`.
    pub fn direct_sum_margin(&self) -> f64 {
        let parts: Vec<&DMatrix<f64>> = self.splitting.iter().map(|e| e.basis()).collect();
        linalg::min_singular_value(&hstack(&parts, self.dim()))
    }
}

/// `κ = min` over complementary index sets `I ⊔ J` of the smallest principal
/// angle sine between `⊕_I E^i` and `⊕_J E^j`. Growing either side can only
/// shrink the angle, so complementary pairs attain the minimum over all
/// disjoint pairs.
pub fn kappa(splitting: &[Subspace]) -> f64 {
    let m = splitting.len();
    if m < 2 {
        return 1.0;
    }
    let mut best: f64 = 1.0;
    // mask always contains index 0, which halves the enumeration
    for mask in 1u32..(1u32 << m) - 1 {
        if mask & 1 == 0 {
            continue;
        }
        let a: Vec<&Subspace> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| &splitting[i]).collect();
        let b: Vec<&Subspace> = (0..m).filter(|i| mask & (1 << i) == 0).map(|i| &splitting[i]).collect();
        best = best.min(principal_angle_min_sin(&Subspace::sum(&a), &Subspace::sum(&b)));
    }
    best
}

/// Exhaustive version over all disjoint nonempty pairs; reference for tests.
pub fn kappa_exhaustive(splitting: &[Subspace]) -> f64 {
    let m = splitting.len();
    let mut best: f64 = 1.0;
    let full = 3usize.pow(m as u32);
    for code in 0..full {
        let mut c = code;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for e in splitting {
            match c % 3 {
                1 => a.push(e),
                2 => b.push(e),
                _ => {}
            }
            c /= 3;
        }
        if a.is_empty() || b.is_empty() {
            continue;
        }
        best = best.min(principal_angle_min_sin(&Subspace::sum(&a), &Subspace::sum(&b)));
    }
    best
}

/// Oseledets splitting `E^i = V^{i−1} ∩ W^i` and the angle gap `κ`.
pub fn oseledets_splitting(spec: &EnsembleSpec, word: &TwoSidedWord, spectrum: &LyapunovSpectrum) -> Result<OseledetsFrame> {
    let n = spec.dim();
    let s = spectrum.s();
    let flags = backward_flag(spec, word, spectrum)?;
    let forward = forward_subspaces(spec, word, spectrum)?;
    let mut splitting = Vec::with_capacity(s + 1);
    for i in 0..=s {
        let upper = if i == 0 { Subspace::full(n) } else { flags[i - 1].clone() };
        let lower = if i == s { Subspace::full(n) } else { forward[i].clone() };
        let d = spectrum.multiplicities[i];
        let (basis, sv) = linalg::intersection(upper.basis(), lower.basis(), d);
        if sv.iter().any(|&x| x < 1e-6) || basis.ncols() != d {
            return Err(LabError::Intersection(format!(
                "dim(V^{} ∩ W^{i}) differs from d_{i} = {d} (stacked singular values {sv:?})",
                i as i64 - 1
            )));
        }
        splitting.push(Subspace::from_orthonormal(basis));
    }
    let kappa = kappa(&splitting);
    Ok(OseledetsFrame { word: word.clone(), flags, splitting, kappa })
}

/// Local coordinates `g_ω` on `P(V) ∖ P(V^0)` built from a splitting with `d_0 = 1`.
///
/// `L^i` is the oblique projection onto `E^i` along the other components;
/// `f^0` is the coefficient on the unit vector `u^0` spanning `E^0`.
#[derive(Debug, Clone)]
pub struct Chart {
    blocks: Vec<usize>,
    basis: DMatrix<f64>,
    inverse: DMatrix<f64>,
    kappa: f64,
}

impl Chart {
    pub fn new(splitting: &[Subspace], kappa: f64) -> Result<Self> {
        if splitting.first().map(|e| e.dim()) != Some(1) {
            return Err(LabError::Validation("chart requires a one-dimensional E^0".into()));
        }
        let n = splitting[0].ambient_dim();
        let u0 = ProjectivePoint::new(splitting[0].basis().column(0).into_owned()).expect("unit");
        let mut parts: Vec<DMatrix<f64>> = vec![DMatrix::from_column_slice(n, 1, u0.direction().as_slice())];
        parts.extend(splitting[1..].iter().map(|e| e.basis().clone()));
        let refs: Vec<&DMatrix<f64>> = parts.iter().collect();
        let basis = hstack(&refs, n);
        let inverse = basis
            .clone()
            .try_inverse()
            .ok_or_else(|| LabError::Intersection("splitting does not span V".into()))?;
        Ok(Self { blocks: splitting.iter().map(|e| e.dim()).collect(), basis, inverse, kappa })
    }

    pub fn from_frame(frame: &OseledetsFrame) -> Result<Self> {
        Self::new(&frame.splitting, frame.kappa)
    }

    pub fn s(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn u0(&self) -> DVector<f64> {
        self.basis.column(0).into_owned()
    }

    /// `(L^0 x, …, L^s x)`.
    pub fn components(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let c = &self.inverse * x;
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut start = 0;
        for &d in &self.blocks {
            out.push(self.basis.columns(start, d) * c.rows(start, d));
            start += d;
        }
        out
    }

    /// `f^0(x)`, with `L^0 x = f^0(x) u^0`.
    pub fn f0(&self, x: &DVector<f64>) -> f64 {
        (self.inverse.row(0) * x)[0]
    }

    /// `g_ω(x̄) = L_ω(x)/f^0(x)`; `None` on `P(V^0)`.
    pub fn g(&self, x: &ProjectivePoint) -> Option<Vec<DVector<f64>>> {
        let v = x.direction();
        let f = self.f0(v);
        if f.abs() <= 1e-14 {
            return None;
        }
        Some(self.components(&(v / f)))
    }

    /// `‖v‖_∞ = max_i |v^i|`.
    pub fn sup_norm(v: &[DVector<f64>]) -> f64 {
        v.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `E^1 ⊕ … ⊕ E^s` as a subspace.
    pub fn v0(&self) -> Subspace {
        let n = self.basis.nrows();
        Subspace::span(&self.basis.columns(1, n - 1).into_owned())
    }

    /// Vector `Σ_{k≥1} c_k b_k` in `E^{from} ⊕ … ⊕ E^s` from block coefficients.
    pub fn combine(&self, from: usize, coeffs: &DVector<f64>) -> DVector<f64> {
        let start: usize = self.blocks[..from].iter().sum();
        let n = self.basis.nrows();
        self.basis.columns(start, n - start) * coeffs
    }

    pub fn block_start(&self, i: usize) -> usize {
        self.blocks[..i].iter().sum()
    }

    pub fn block_dim(&self, i: usize) -> usize {
        self.blocks[i]
    }
}

/// Past length beyond the fitted window used to converge the covariant vectors.
pub const CLV_MARGIN: usize = 200;

/// Output of [`chart_rate`].
#[derive(Debug, Clone)]
pub struct ChartRate {
    /// Regression slope of `log d(A_{ω,n}x̄, A_{ω,n}ȳ)` against `n` over `n ∈ [n_max/10, n_max]`.
    pub slope: f64,
    pub r2: f64,
    /// `log d` for `n = 1..=n_max`.
    pub log_distances: Vec<f64>,
    /// Sine between the frame's `E^{i+1}` direction and the covariant vector
    /// recovered by backward iteration.
    pub clv_mismatch: f64,
}

/// Rate at which `x̄` and `ȳ = x̄ + t·w`, `w ∈ E^{i+1}`, approach under
/// `A_{ω_{-n}} ⋯ A_{ω_{-1}}`; `g_ω` of the two points agrees through index
/// `i` and differs at `i+1`.
///
/// A `W`-adapted orthonormal frame is pushed along the past by QR (stable),
/// and the coordinates of the `E^{i+1}` direction in that frame are obtained
/// by iterating the triangular factors backwards from `n_max + CLV_MARGIN`.
/// Pushing `w` forward directly would lose it to round-off within a few
/// dozen steps.
pub fn chart_rate(spec: &EnsembleSpec, frame: &OseledetsFrame, i: usize, x: &DVector<f64>, t: f64, n_max: usize) -> Result<ChartRate> {
    let s = frame.s();
    if i >= s {
        return Err(LabError::Index(format!("chart index {i} must be below s = {s}")));
    }
    if frame.splitting[i + 1].dim() != 1 {
        return Err(LabError::Validation("chart rate needs a one-dimensional E^{i+1}".into()));
    }
    let horizon = n_max + CLV_MARGIN;
    if frame.word.n_back() < horizon {
        return Err(LabError::Range(format!("past of length {} shorter than {horizon}", frame.word.n_back())));
    }
    let chart = Chart::from_frame(frame)?;
    if chart.f0(x).abs() <= 1e-12 {
        return Err(LabError::Validation("x lies in V^0".into()));
    }
    let n = spec.dim();
    // E^{i+1} sits in the span of the first k frame vectors
    let k = chart.block_start(i + 1) + 1;
    let parts: Vec<&DMatrix<f64>> = frame.splitting.iter().map(|e| e.basis()).collect();
    let mut q = hstack(&parts, n);
    let mut r = DMatrix::zeros(n, n);
    qr_in_place(&mut q, &mut r);
    let q0 = q.clone();
    let mut rs = Vec::with_capacity(horizon);
    let mut buf = DMatrix::zeros(n, n);
    for l in frame.word.past().take(horizon) {
        spec.matrix(l).mul_to(&q, &mut buf);
        std::mem::swap(&mut q, &mut buf);
        qr_in_place(&mut q, &mut r);
        rs.push(r.clone());
    }
    let mut chat = vec![DVector::zeros(k); horizon + 1];
    let start = DVector::from_fn(k, |j, _| 1.0 + 0.37 * j as f64);
    chat[horizon] = start.normalize();
    for m in (1..=horizon).rev() {
        let block = rs[m - 1].view((0, 0), (k, k));
        let prev = block.solve_upper_triangular(&chat[m]).expect("nonsingular triangular factor");
        chat[m - 1] = prev.normalize();
    }
    let w = q0.columns(0, k) * &chat[0];
    let w_frame = frame.splitting[i + 1].basis().column(0).into_owned();
    let clv_mismatch = crate::projective::wedge_norm(&w_frame, &w);

    // frame coordinates: A_{ω,m} x = Q_m e^{log_ax} a_m, A_{ω,m} w = Q_m e^{log_aw} ĉ_m
    let a0 = q0.transpose() * x;
    let mut log_ax = a0.norm().ln();
    let mut a = a0.normalize();
    let mut log_aw = 0.0;
    let mut c_full = DVector::zeros(n);
    let mut out = Vec::with_capacity(n_max);
    for m in 1..=n_max {
        let rm = &rs[m - 1];
        let ax = rm * &a;
        let na = ax.norm();
        log_ax += na.ln();
        a = ax / na;
        log_aw += (rm.view((0, 0), (k, k)) * &chat[m - 1]).norm().ln();
        c_full.rows_mut(0, k).copy_from(&chat[m]);
        // d(x̄', ȳ') = |x'∧y'|/(|x'||y'|) with y' = x' + t w'
        let ratio = t * (log_aw - log_ax).exp();
        let y_rel = (&a + &c_full * ratio).norm();
        let wedge = crate::projective::wedge_norm(&a, &c_full);
        out.push(t.abs().ln() + log_aw - log_ax + wedge.ln() - y_rel.ln());
    }
    let lo = (n_max / 10).max(1);
    let pts: Vec<(f64, f64)> = (lo..=n_max).map(|m| (m as f64, out[m - 1])).collect();
    let fit = crate::stats::ls_fit(&pts);
    Ok(ChartRate { slope: fit.slope, r2: fit.r2, log_distances: out, clv_mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(m: [f64; 4]) -> EnsembleSpec {
        EnsembleSpec::new("single", vec!["a".into()], vec![DMatrix::from_row_slice(2, 2, &m)], vec![1.0]).unwrap()
    }

    fn e2() -> EnsembleSpec {
        EnsembleSpec::new(
            "E2",
            vec!["1".into(), "2".into()],
            vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]),
            ],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn word_sampling() {
        let spec = single([2.0, 0.0, 0.0, 0.5]);
        let w = sample_word(&spec, 5, 7, 3);
        assert!(w.negative.iter().chain(&w.nonnegative).all(|&l| l == 0));
        let e2 = e2();
        assert_eq!(sample_word(&e2, 50, 50, 9), sample_word(&e2, 50, 50, 9));
        let long = sample_word(&e2, 80, 90, 9);
        let short = sample_word(&e2, 50, 50, 9);
        assert_eq!(long.truncated(50, 50), short);
    }

    #[test]
    fn symbol_frequencies_concentrate() {
        let w = sample_word(&e2(), 1, 100_000, 11);
        let ones = w.nonnegative.iter().filter(|&&l| l == 0).count() as f64 / 1e5;
        // binomial sd = 0.0016; 0.01 is > 6 sd
        assert!((ones - 0.5).abs() < 0.01, "{ones}");
    }

    #[test]
    fn shifts_are_inverse() {
        let w = sample_word(&e2(), 10, 10, 1);
        let s = w.shift(None);
        assert_eq!(s.at(-1), w.at(0));
        assert_eq!(s.at(0), w.at(1));
        let back = s.unshift(Some(w.at(-10).unwrap()));
        assert_eq!(back.truncated(10, 9), w.truncated(10, 9));
        let u = w.unshift(None);
        assert_eq!(u.at(0), w.at(-1));
        assert_eq!(u.at(-1), w.at(-2));
    }

    #[test]
    fn forward_product_examples() {
        let spec = single([2.0, 0.0, 0.0, 0.5]);
        let w = sample_word(&spec, 10, 10, 0);
        let p = forward_product(&spec, &w, 3, 3).unwrap();
        assert!((p.to_matrix() - DMatrix::identity(2, 2)).norm() < 1e-15);
        let p = forward_product(&spec, &w, 0, 10).unwrap();
        let mut ld = p.log_diag.clone();
        ld.sort_by(|a, b| b.total_cmp(a));
        assert!((ld[0] - 10.0 * 2f64.ln()).abs() < 1e-12);
        assert!((ld[1] + 10.0 * 2f64.ln()).abs() < 1e-12);
        assert!(matches!(forward_product(&spec, &w, 5, 11), Err(LabError::Range(_))));
        assert!(matches!(forward_product(&spec, &w, 5, 4), Err(LabError::Range(_))));
    }

    #[test]
    fn forward_product_matches_naive_multiplication() {
        let spec = e2();
        for seed in 0..20 {
            let w = sample_word(&spec, 5, 5, seed);
            let p = forward_product(&spec, &w, -3, 2).unwrap().to_matrix();
            let mut naive = DMatrix::identity(2, 2);
            for j in -3..2 {
                naive *= spec.matrix(w.at(j).unwrap());
            }
            assert!((&p - &naive).norm() / naive.norm() < 1e-12);
        }
    }

    #[test]
    fn long_products_do_not_overflow() {
        let spec = e2();
        let w = sample_word(&spec, 1, 2000, 3);
        let p = forward_product(&spec, &w, 0, 2000).unwrap();
        assert!(p.log_diag.iter().all(|l| l.is_finite()));
        assert!(p.log_diag.iter().cloned().fold(0.0, f64::max) > 700.0);
    }

    #[test]
    fn deterministic_diagonal_spectrum() {
        let spec = single([2.0, 0.0, 0.0, 0.5]);
        let sp = lyapunov_spectrum(&spec, 1000, &[1], 1e-6).unwrap();
        assert_eq!(sp.multiplicities, vec![1, 1]);
        assert!((sp.exponents[0] - 2f64.ln()).abs() < 1e-12);
        assert!((sp.exponents[1] + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn commuting_diagonals_average_logs() {
        let spec = EnsembleSpec::new(
            "E4",
            vec!["a".into(), "b".into()],
            vec![
                DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0 / 3.0]),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let sp = lyapunov_spectrum_auto(&spec, 20_000, &[1, 2, 3, 4]).unwrap();
        let target = (3f64.ln() + 2f64.ln()) / 2.0;
        assert!((sp.exponents[0] - target).abs() < 5e-3);
        assert!((sp.exponents[1] + target).abs() < 5e-3);
    }

    #[test]
    fn grouping_merges_close_rates() {
        let (e, d, _) = group_exponents(&[1.0, 0.5, 0.499, -1.5], &[0.0; 4], 0.01).unwrap();
        assert_eq!(d, vec![1, 2, 1]);
        assert!((e[1] - 0.4995).abs() < 1e-12);
        let err = group_exponents(&[1.0, 0.99], &[0.01, 0.01], 0.02).unwrap_err();
        assert!(matches!(err, LabError::DegenerateSpectrum(_)));
    }

    #[test]
    fn diagonal_flags_and_splitting_are_axes() {
        let spec = single([2.0, 0.0, 0.0, 0.5]);
        let sp = LyapunovSpectrum::from_exponents(vec![2f64.ln(), -2f64.ln()], vec![1, 1]);
        let w = sample_word(&spec, 200, 200, 0);
        let flags = backward_flag(&spec, &w, &sp).unwrap();
        assert!((flags[0].basis()[(1, 0)].abs() - 1.0).abs() < 1e-12);
        let frame = oseledets_splitting(&spec, &w, &sp).unwrap();
        assert!((frame.splitting[0].basis()[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((frame.splitting[1].basis()[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((frame.kappa - 1.0).abs() < 1e-9);
    }

    #[test]
    fn short_past_is_rejected() {
        let spec = single([2.0, 0.0, 0.0, 0.5]);
        let sp = LyapunovSpectrum::from_exponents(vec![2f64.ln(), -2f64.ln()], vec![1, 1]);
        let w = sample_word(&spec, 5, 200, 0);
        assert!(matches!(backward_flag(&spec, &w, &sp), Err(LabError::Resolution(_))));
    }

    #[test]
    fn kappa_routes_agree() {
        let mk = |v: &[f64]| Subspace::span(&DMatrix::from_column_slice(3, 1, v));
        let parts = vec![mk(&[1.0, 0.2, 0.0]), mk(&[0.3, 1.0, 0.1]), mk(&[0.0, 0.4, 1.0])];
        assert!((kappa(&parts) - kappa_exhaustive(&parts)).abs() < 1e-12);
    }

    #[test]
    fn chart_rate_for_diagonal() {
        // x = e1 + e2, y = x + e2: d(A^n x̄, A^n ȳ) ~ 4^{-n}
        let spec = single([2.0, 0.0, 0.0, 0.5]);
        let sp = LyapunovSpectrum::from_exponents(vec![2f64.ln(), -2f64.ln()], vec![1, 1]);
        let w = sample_word(&spec, 600, 100, 0);
        let frame = oseledets_splitting(&spec, &w, &sp).unwrap();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let rate = chart_rate(&spec, &frame, 0, &x, 1.0, 300).unwrap();
        assert!((rate.slope + 4f64.ln()).abs() < 1e-9, "{}", rate.slope);
        assert!(rate.clv_mismatch < 1e-12);
        // exact: d = |x∧y|/(|x||y|) with x = (2^n, 2^-n), y = (2^n, 2^{1-n})
        let n = 5.0f64;
        let (x1, x2, y2) = (2f64.powf(n), 2f64.powf(-n), 2f64.powf(1.0 - n));
        let exact = (x1 * y2 - x1 * x2).abs() / ((x1 * x1 + x2 * x2).sqrt() * (x1 * x1 + y2 * y2).sqrt());
        assert!((rate.log_distances[4] - exact.ln()).abs() < 1e-12);
    }
}
