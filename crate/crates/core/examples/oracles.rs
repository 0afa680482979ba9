//! Reference values for the fixtures, computed by routes that share no code
//! with the library's estimators: fixed-size matrices, plain vector and
//! cofactor iteration, explicit cone membership, histogram entropies.
//!
//! Writes `fixtures/oracles.toml`. Run with
//! `cargo run --release -p furstlab --example oracles`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

const STEPS: usize = 1_000_000;
const SEEDS: u64 = 64;
const DIM_SAMPLES: usize = 10_000_000;
const CONE_SAMPLES: usize = 100_000;
const PREFIX: usize = 60;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x6f72_6163_6c65)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Growth rate of `|A_{ω_n} ⋯ A_{ω_1} v|` for a fixed generic `v`.
fn top_rate<const N: usize>(mats: &[nalgebra::SMatrix<f64, N, N>], seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut v = nalgebra::SVector::<f64, N>::from_fn(|i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut acc = 0.0;
    for _ in 0..STEPS {
        v = mats[r.random_range(0..mats.len())] * v;
        let n = v.norm();
        acc += n.ln();
        v /= n;
    }
    acc / STEPS as f64
}

fn cofactor(a: &Matrix3<f64>) -> Matrix3<f64> {
    // A u × A v = cof(A)(u × v)
    a.try_inverse().expect("invertible").transpose() * a.determinant()
}

fn mean_log_det(dets: &[f64]) -> f64 {
    dets.iter().map(|d| d.abs().ln()).sum::<f64>() / dets.len() as f64
}

/// Boundary point `lim A_{η_0} ⋯ A_{η_{n-1}} v` for positive matrices and a
/// positive start vector, with its first symbol.
fn boundary<const N: usize>(mats: &[nalgebra::SMatrix<f64, N, N>], r: &mut ChaCha20Rng) -> (usize, nalgebra::SVector<f64, N>) {
    let word: Vec<usize> = (0..PREFIX).map(|_| r.random_range(0..mats.len())).collect();
    let mut v = nalgebra::SVector::<f64, N>::repeat(1.0);
    for &l in word.iter().rev() {
        v = mats[l] * v;
        v /= v.norm();
    }
    (word[0], v)
}

fn in_image_cone<const N: usize>(a_inv: &nalgebra::SMatrix<f64, N, N>, v: &nalgebra::SVector<f64, N>) -> bool {
    let c = a_inv * v;
    c.iter().all(|&x| x > 0.0)
}

/// Fraction of boundary points not strictly inside their own cylinder cone
/// `A_{η_0} C`, or also inside another cylinder's cone.
fn misclassification<const N: usize>(mats: &[nalgebra::SMatrix<f64, N, N>], inverses: &[nalgebra::SMatrix<f64, N, N>], seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut bad = 0usize;
    for _ in 0..CONE_SAMPLES {
        let (l, v) = boundary(mats, &mut r);
        let own = in_image_cone(&inverses[l], &v);
        let other = (0..mats.len()).any(|k| k != l && in_image_cone(&inverses[k], &v));
        bad += (!own || other) as usize;
    }
    bad as f64 / CONE_SAMPLES as f64
}

/// Smallest angle between boundary points with different first symbols.
fn cylinder_gap<const N: usize>(mats: &[nalgebra::SMatrix<f64, N, N>], seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    let pts: Vec<_> = (0..n).map(|_| boundary(mats, &mut r)).collect();
    let mut best = f64::INFINITY;
    for (a, x) in &pts {
        for (b, y) in &pts {
            if a < b {
                best = best.min(x.dot(y).abs().min(1.0).acos());
            }
        }
    }
    best
}

/// Information dimension of the angle distribution: slope of the histogram
/// entropy against `log(1/ε)`, averaged over shifted grids.
fn histogram_dimension(mats: &[Matrix2<f64>], seed: u64) -> (f64, Vec<(f64, f64)>) {
    let chunks = 64;
    let per = DIM_SAMPLES / chunks;
    let angles: Vec<f64> = (0..chunks as u64)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng(seed ^ (c << 20));
            (0..per)
                .map(|_| {
                    let (_, v) = boundary(mats, &mut r);
                    v[1].atan2(v[0])
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let n = angles.len() as f64;
    let mut curve = Vec::new();
    for k in 6..=16 {
        let eps = 2f64.powi(-k);
        let shifts = 4;
        let mut h_avg = 0.0;
        for s in 0..shifts {
            let off = eps * s as f64 / shifts as f64;
            let mut counts: HashMap<i64, usize> = HashMap::new();
            for &t in &angles {
                *counts.entry(((t + off) / eps).floor() as i64).or_default() += 1;
            }
            h_avg -= counts.values().map(|&c| c as f64 / n * (c as f64 / n).ln()).sum::<f64>();
        }
        curve.push(((1.0 / eps).ln(), h_avg / shifts as f64));
    }
    // fit over the resolved middle of the range
    let pts: Vec<(f64, f64)> = curve[2..curve.len() - 2].to_vec();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx, curve)
}

fn rates<F: Fn(u64) -> f64 + Sync + Send>(f: F) -> (f64, f64) {
    let v: Vec<f64> = (0..SEEDS).into_par_iter().map(f).collect();
    mean_se(&v)
}

fn main() {
    let e2 = [Matrix2::new(2.0, 1.0, 1.0, 1.0), Matrix2::new(1.0, 1.0, 1.0, 2.0)];
    let e3 = [
        Matrix3::new(2.0, 1.0, 2.0, 1.0, 1.0, 3.0, 3.0, 4.0, 3.0),
        Matrix3::new(4.0, 2.0, 3.0, 3.0, 1.0, 4.0, 2.0, 1.0, 1.0),
    ];
    let hp = 2f64.ln();
    let mut out: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();

    let (l0, l0_se) = rates(|s| top_rate(&e2, s));
    let l1 = mean_log_det(&e2.map(|m| m.determinant())) - l0;
    let gap = l0 - l1;
    let (dim_hist, curve) = histogram_dimension(&e2, 7);
    let e2_out = out.entry("e2").or_default();
    e2_out.insert("lambda_0".into(), l0);
    e2_out.insert("lambda_0_stderr".into(), l0_se);
    e2_out.insert("lambda_1".into(), l1);
    e2_out.insert("dim_nu".into(), hp / gap);
    e2_out.insert("dim_histogram".into(), dim_hist);
    e2_out.insert("misclassification".into(), misclassification(&e2, &e2.map(|m| m.try_inverse().unwrap()), 11));
    e2_out.insert("cylinder_gap".into(), cylinder_gap(&e2, 13, 3000));
    eprintln!("E2 histogram entropy curve (log 1/eps, H): {curve:?}");

    let (l0, l0_se) = rates(|s| top_rate(&e3, s));
    let cof: Vec<Matrix3<f64>> = e3.iter().map(cofactor).collect();
    let (l01, l01_se) = rates(|s| top_rate(&cof, 1000 + s));
    let l1 = l01 - l0;
    let l2 = mean_log_det(&e3.map(|m| m.determinant())) - l01;
    let (t1, t2) = (l1 - l0, l2 - l0);
    // dim_LY with d = (1,1,1): first slot has capacity −λ̃_1
    let dim_ly = if hp <= -t1 { hp / -t1 } else { 1.0 + ((hp + t1) / -t2).min(1.0) };
    let e3_out = out.entry("e3").or_default();
    e3_out.insert("lambda_0".into(), l0);
    e3_out.insert("lambda_0_stderr".into(), l0_se);
    e3_out.insert("lambda_1".into(), l1);
    e3_out.insert("lambda_1_stderr".into(), (l0_se * l0_se + l01_se * l01_se).sqrt());
    e3_out.insert("lambda_2".into(), l2);
    e3_out.insert("normalized_gap_1".into(), t1);
    e3_out.insert("normalized_gap_2".into(), t2);
    e3_out.insert("dim_ly".into(), dim_ly);
    e3_out.insert("misclassification".into(), misclassification(&e3, &e3.map(|m| m.try_inverse().unwrap()), 17));
    e3_out.insert("cylinder_gap".into(), cylinder_gap(&e3, 19, 3000));

    let e4_out = out.entry("e4").or_default();
    e4_out.insert("lambda_0".into(), (3f64.ln() + 2f64.ln()) / 2.0);
    let e1_out = out.entry("e1").or_default();
    e1_out.insert("lambda_0".into(), 2f64.ln());
    e1_out.insert("lambda_1".into(), -2f64.ln());

    let mut text = String::from("# generated by examples/oracles.rs; do not edit by hand\n");
    writeln!(text, "# {STEPS} steps x {SEEDS} seeds, {DIM_SAMPLES} histogram samples, {CONE_SAMPLES} cone samples").unwrap();
    for (name, table) in &out {
        writeln!(text, "\n[{name}]").unwrap();
        for (k, v) in table {
            writeln!(text, "{k} = {v:.16e}").unwrap();
        }
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/oracles.toml");
    std::fs::write(&path, &text).expect("write oracle file");
    print!("{text}");
}
