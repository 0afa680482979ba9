//! The finitely supported matrix ensemble `μ = Σ p_l δ_{A_l}`: loading,
//! validation, entropy and heuristic irreducibility/proximality diagnostics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::qr_in_place;
use crate::projective::{ProjectivePoint, Subspace};
use crate::rng::{par_indexed, random_unit_vector, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    name: String,
    dim: usize,
    labels: Vec<String>,
    matrices: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
    transposes: Vec<DMatrix<f64>>,
    inverse_transposes: Vec<DMatrix<f64>>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

/// On-disk form. Matrices are row-major arrays of decimal strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleDoc {
    name: String,
    dim: usize,
    labels: Vec<String>,
    probs: Vec<String>,
    matrices: BTreeMap<String, Vec<String>>,
}

fn parse_decimal(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| LabError::Parse(format!("{what}: not a decimal number: {s:?}")))?;
    if !v.is_finite() {
        return Err(LabError::Parse(format!("{what}: non-finite value {s:?}")));
    }
    Ok(v)
}

/// 17 significant digits; parsing the result reproduces the value exactly.
pub fn format_decimal(x: f64) -> String {
    format!("{x:.16e}")
}

impl EnsembleSpec {
    pub fn new(name: &str, labels: Vec<String>, matrices: Vec<DMatrix<f64>>, probs: Vec<f64>) -> Result<Self> {
        let dim = matrices.first().map(|m| m.nrows()).unwrap_or(0);
        if dim < 2 {
            return Err(LabError::Validation(format!("dimension must be at least 2, got {dim}")));
        }
        if labels.is_empty() {
            return Err(LabError::Validation("empty alphabet".into()));
        }
        if labels.len() != matrices.len() || labels.len() != probs.len() {
            return Err(LabError::Validation("labels, matrices and probs differ in length".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(LabError::Validation(format!("duplicate label {l:?}")));
            }
        }
        for (l, m) in labels.iter().zip(&matrices) {
            if m.shape() != (dim, dim) {
                return Err(LabError::Validation(format!("matrix {l:?} is not {dim}x{dim}")));
            }
            if m.determinant().abs() <= 1e-12 {
                return Err(LabError::Validation(format!("singular matrix {l:?}")));
            }
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(LabError::Validation("probabilities must be strictly positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::Validation(format!("probabilities sum ≠ 1 (sum = {total})")));
        }
        for i in 0..matrices.len() {
            for j in 0..i {
                if (&matrices[i] - &matrices[j]).amax() <= 1e-12 {
                    return Err(LabError::Validation(format!(
                        "duplicate matrices for labels {:?} and {:?}",
                        labels[j], labels[i]
                    )));
                }
            }
        }
        let inverses: Vec<DMatrix<f64>> = matrices
            .iter()
            .map(|m| m.clone().try_inverse().expect("nonsingular"))
            .collect();
        let transposes = matrices.iter().map(|m| m.transpose()).collect();
        let inverse_transposes = inverses.iter().map(|m| m.transpose()).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            dim,
            labels,
            matrices,
            inverses,
            transposes,
            inverse_transposes,
            probs,
            cumulative,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn matrix(&self, l: usize) -> &DMatrix<f64> {
        &self.matrices[l]
    }
    pub fn inverse(&self, l: usize) -> &DMatrix<f64> {
        &self.inverses[l]
    }
    pub fn transpose(&self, l: usize) -> &DMatrix<f64> {
        &self.transposes[l]
    }
    pub fn inverse_transpose(&self, l: usize) -> &DMatrix<f64> {
        &self.inverse_transposes[l]
    }
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Draw one label with law `p`.
    pub fn sample_label<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.len() - 1)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Parse and validate an ensemble document (TOML).
pub fn load_spec(source: &str) -> Result<EnsembleSpec> {
    let doc: EnsembleDoc = toml::from_str(source).map_err(|e| LabError::Parse(e.to_string()))?;
    if doc.dim < 2 {
        return Err(LabError::Validation(format!("dimension must be at least 2, got {}", doc.dim)));
    }
    if doc.probs.len() != doc.labels.len() {
        return Err(LabError::Validation("probs and labels differ in length".into()));
    }
    for key in doc.matrices.keys() {
        if !doc.labels.contains(key) {
            return Err(LabError::Validation(format!("matrix given for unknown label {key:?}")));
        }
    }
    let mut matrices = Vec::with_capacity(doc.labels.len());
    for l in &doc.labels {
        let entries = doc
            .matrices
            .get(l)
            .ok_or_else(|| LabError::Validation(format!("missing matrix for label {l:?}")))?;
        if entries.len() != doc.dim * doc.dim {
            return Err(LabError::Validation(format!(
                "matrix {l:?} has {} entries, expected {}",
                entries.len(),
                doc.dim * doc.dim
            )));
        }
        let vals = entries
            .iter()
            .map(|s| parse_decimal(s, &format!("matrix {l:?}")))
            .collect::<Result<Vec<_>>>()?;
        matrices.push(DMatrix::from_row_slice(doc.dim, doc.dim, &vals));
    }
    let probs = doc
        .probs
        .iter()
        .map(|s| parse_decimal(s, "probs"))
        .collect::<Result<Vec<_>>>()?;
    EnsembleSpec::new(&doc.name, doc.labels, matrices, probs)
}

/// Serialize to the document format with 17-significant-digit decimals.
pub fn emit_spec(spec: &EnsembleSpec) -> String {
    let matrices = spec
        .labels
        .iter()
        .zip(&spec.matrices)
        .map(|(l, m)| {
            let row_major = (0..spec.dim)
                .flat_map(|r| (0..spec.dim).map(move |c| (r, c)))
                .map(|(r, c)| format_decimal(m[(r, c)]))
                .collect();
            (l.clone(), row_major)
        })
        .collect();
    let doc = EnsembleDoc {
        name: spec.name.clone(),
        dim: spec.dim,
        labels: spec.labels.clone(),
        probs: spec.probs.iter().map(|&p| format_decimal(p)).collect(),
        matrices,
    };
    toml::to_string(&doc).expect("ensemble document serializes")
}

/// `H(p) = −Σ p_l log p_l` in nats.
pub fn shannon_entropy(spec: &EnsembleSpec) -> f64 {
    entropy_of(spec.probs())
}

pub fn entropy_of(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximalityEvidence {
    /// Largest σ1/σ2 observed (products stop growing once it exceeds 10⁶).
    pub best_gap_ratio: f64,
    /// Shortest product length at which the pass threshold was reached, else the budget.
    pub steps: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrreducibilityEvidence {
    /// Fraction of orbit points farther than the tolerance from the best
    /// union of at most `dim V` hyperplanes.
    pub orbit_spread: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDiagnostics {
    pub proximality_evidence: ProximalityEvidence,
    pub irreducibility_evidence: IrreducibilityEvidence,
    pub shannon_entropy: f64,
}

impl EnsembleDiagnostics {
    pub fn passed(&self) -> bool {
        self.proximality_evidence.verdict == Verdict::Pass && self.irreducibility_evidence.verdict == Verdict::Pass
    }
    pub fn failed(&self) -> bool {
        self.proximality_evidence.verdict == Verdict::Fail || self.irreducibility_evidence.verdict == Verdict::Fail
    }
}

const PROXIMAL_RATIO: f64 = 1e6;
const PROXIMAL_TRIALS: usize = 8;
const ORBIT_POINTS: usize = 256;
const ORBIT_TOL: f64 = 1e-3;
const SPREAD_PASS: f64 = 0.05;

/// Heuristic evidence for the standing assumptions. Never a proof.
pub fn diagnose(spec: &EnsembleSpec, seed: u64, budget: usize) -> EnsembleDiagnostics {
    assert!(budget >= 1000, "diagnostic budget must be at least 10^3");
    EnsembleDiagnostics {
        proximality_evidence: proximality(spec, seed, budget),
        irreducibility_evidence: irreducibility(spec, seed, budget),
        shannon_entropy: shannon_entropy(spec),
    }
}

fn proximality(spec: &EnsembleSpec, seed: u64, budget: usize) -> ProximalityEvidence {
    let n = spec.dim();
    let trials = par_indexed(PROXIMAL_TRIALS, |t| {
        let mut rng = stream_rng(seed, 1_000 + t as u64);
        let mut q = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let mut r = DMatrix::zeros(n, n);
        qr_in_place(&mut q, &mut r);
        let mut buf = DMatrix::zeros(n, n);
        let mut logs = vec![0.0; n];
        let mut best = 0.0_f64;
        for step in 1..=budget {
            let l = spec.sample_label(&mut rng);
            spec.matrix(l).mul_to(&q, &mut buf);
            std::mem::swap(&mut q, &mut buf);
            qr_in_place(&mut q, &mut r);
            for (k, lg) in logs.iter_mut().enumerate() {
                *lg += r[(k, k)].ln();
            }
            let mut sorted = logs.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            best = best.max(sorted[0] - sorted[1]);
            if best > PROXIMAL_RATIO.ln() {
                return (best, step);
            }
        }
        (best, budget)
    });
    let best_log = trials.iter().map(|t| t.0).fold(0.0_f64, f64::max);
    let steps = trials
        .iter()
        .filter(|t| t.0 > PROXIMAL_RATIO.ln())
        .map(|t| t.1)
        .min()
        .unwrap_or(budget);
    let verdict = if best_log > PROXIMAL_RATIO.ln() {
        Verdict::Pass
    } else if best_log < 1e-6 {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    ProximalityEvidence { best_gap_ratio: best_log.exp(), steps, verdict }
}

fn irreducibility(spec: &EnsembleSpec, seed: u64, budget: usize) -> IrreducibilityEvidence {
    let n = spec.dim();
    let points: Vec<DVector<f64>> = par_indexed(ORBIT_POINTS, |i| {
        let mut rng = stream_rng(seed, 2_000 + i as u64);
        let mut v = random_unit_vector(&mut rng, n);
        for _ in 0..budget {
            let l = spec.sample_label(&mut rng);
            v = spec.matrix(l) * v;
            v.unscale_mut(v.norm());
        }
        v
    });
    let spread = uncovered_fraction(&points, n, ORBIT_TOL, seed);
    let verdict = if spread > SPREAD_PASS {
        Verdict::Pass
    } else if spread <= ORBIT_TOL {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    IrreducibilityEvidence { orbit_spread: spread, verdict }
}

/// Greedily cover the points by up to `dim` hyperplanes (each spanned by
/// `dim − 1` of the points) and report the fraction left uncovered.
fn uncovered_fraction(points: &[DVector<f64>], dim: usize, tol: f64, seed: u64) -> f64 {
    let mut remaining: Vec<DVector<f64>> = points.to_vec();
    let mut rng = stream_rng(seed, 3_000);
    for _ in 0..dim {
        if remaining.is_empty() {
            break;
        }
        let candidates = hyperplane_candidates(&remaining, dim, &mut rng);
        let best = candidates
            .iter()
            .map(|normal| {
                let covered = remaining.iter().filter(|p| p.dot(normal).abs() <= tol).count();
                (covered, normal)
            })
            .max_by_key(|(c, _)| *c);
        let Some((_, normal)) = best else { break };
        let normal = normal.clone();
        remaining.retain(|p| p.dot(&normal).abs() > tol);
    }
    remaining.len() as f64 / points.len() as f64
}

/// Unit normals of hyperplanes through `dim − 1` of the points.
fn hyperplane_candidates<R: Rng + ?Sized>(points: &[DVector<f64>], dim: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let m = points.len();
    let tuples: Vec<Vec<usize>> = match dim {
        2 => (0..m).map(|i| vec![i]).collect(),
        3 if m * m <= 70_000 => (0..m).flat_map(|i| (0..i).map(move |j| vec![i, j])).collect(),
        _ => (0..4_000)
            .map(|_| (0..dim - 1).map(|_| rng.random_range(0..m)).collect())
            .collect(),
    };
    tuples
        .into_iter()
        .filter_map(|t| {
            let cols: Vec<DVector<f64>> = t.iter().map(|&i| points[i].clone()).collect();
            let span = Subspace::span_of(&cols, dim);
            if span.dim() != dim - 1 {
                return None;
            }
            let normal = span.orthogonal_complement();
            Some(normal.basis().column(0).into_owned())
        })
        .collect()
}

/// Convenience: the sign-normalized line through `v`.
pub fn line(v: &[f64]) -> ProjectivePoint {
    ProjectivePoint::from_slice(v).expect("nonzero vector")
}
