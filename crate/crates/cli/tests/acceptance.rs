//! Acceptance suite: every criterion at full tolerance, one PASS/FAIL line
//! each. Runs as a plain binary so the lines are always printed.

use std::f64::consts::LN_2;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use furstlab::boundary::{boundary_point, guivarch_mass_bound, sample_forward_word, sample_measure, DEFAULT_ACCEPT_TOL, DEFAULT_PREFIX_LEN};
use furstlab::checks::{kappa_sandwich_slack, projection_contraction_slack};
use furstlab::cocycle::{chart_rate, lyapunov_spectrum_auto, oseledets_splitting, sample_word, LyapunovSpectrum};
use furstlab::dimension::{
    conservation_check, measure_dimension, transverse_dimension, BoundarySampler, ConservationBudget, RadiiGrid, TransverseBudget,
};
use furstlab::ensemble::{shannon_entropy, EnsembleSpec};
use furstlab::entropy::{cone_misclassification, conditional_entropy_ladder, ly_formula_dimension, lyapunov_dimension, lyapunov_dimension_from, EntropyLadder};
use furstlab::fixtures;
use furstlab::projective::{proj_distance, subspace_gap, Subspace};
use furstlab::rng::{child_seed, par_indexed, stream_rng};
use furstlab::stats::{mean, stderr};
use furstlab_cli::config::{Budgets, Command, RunConfig};
use furstlab_cli::report;
use rand::Rng;

const SLACK: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn spectrum(spec: &EnsembleSpec, steps: usize, seeds: u64) -> LyapunovSpectrum {
    lyapunov_spectrum_auto(spec, steps, &(0..seeds).collect::<Vec<_>>()).expect("spectrum")
}

fn ladder(spec: &EnsembleSpec, sp: &LyapunovSpectrum) -> EntropyLadder {
    conditional_entropy_ladder(spec, sp, 8, 10_000, 0.1, 3).expect("ladder")
}

fn slab_grid() -> RadiiGrid {
    RadiiGrid::new(0.1, 0.7, 20).unwrap()
}

fn deterministic_spectrum() -> Outcome {
    let spec = fixtures::e1();
    let sp = spectrum(&spec, 1000, 4);
    let lam_ok = sp.exponents.len() == 2 && (sp.exponents[0] - LN_2).abs() <= 1e-9 && (sp.exponents[1] + LN_2).abs() <= 1e-9;
    let frame = oseledets_splitting(&spec, &sample_word(&spec, 200, 200, 1), &sp).expect("frame");
    let e1 = Subspace::span(&nalgebra::DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
    let e2 = Subspace::span(&nalgebra::DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
    // E^0 carries λ_0 = log 2
    let axes = subspace_gap(&frame.splitting[0], &e1).max(subspace_gap(&frame.splitting[1], &e2));
    outcome(
        lam_ok && axes <= 1e-9 && (frame.kappa - 1.0).abs() <= 1e-9,
        format!("lambda = ({:.12}, {:.12}), axis gap {axes:.1e}, kappa {:.12}", sp.exponents[0], sp.exponents[1], frame.kappa),
    )
}

fn analytic_spectrum() -> Outcome {
    let sp = spectrum(&fixtures::e4(), 100_000, 16);
    let target = (3f64.ln() + 2f64.ln()) / 2.0;
    outcome((sp.exponents[0] - target).abs() <= 1e-3, format!("lambda_0 = {:.6}, target {target:.6}", sp.exponents[0]))
}

fn exact_inequalities() -> Outcome {
    let trials = 10_000;
    let mut rng = stream_rng(41, 0);
    let mut contraction = Vec::with_capacity(trials);
    while contraction.len() < trials {
        if let Some(s) = projection_contraction_slack(&mut rng, 1e-3) {
            contraction.push(s);
        }
    }
    let mut rng = stream_rng(41, 1);
    let sandwich: Vec<_> = (0..trials).map(|_| kappa_sandwich_slack(&mut rng)).collect();
    let bad = |v: &mut dyn Iterator<Item = f64>| v.filter(|&s| s < -SLACK).count();
    let v_proj = bad(&mut contraction.iter().copied());
    let v_norm = bad(&mut sandwich.iter().map(|s| s.norm_bound));
    let v_sand = bad(&mut sandwich.iter().map(|s| s.lower.min(s.upper)));
    outcome(
        v_proj + v_norm + v_sand == 0,
        format!("violations: projection bound {v_proj}, norm bound {v_norm}, kappa sandwich {v_sand} ({trials} trials each)"),
    )
}

fn equivariance() -> Outcome {
    let words = 1000;
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [fixtures::e2(), fixtures::e3()] {
        let sp = spectrum(&spec, 20_000, 4);
        let boundary = par_indexed(words, |k| {
            let w = sample_forward_word(&spec, 17, k as u64, DEFAULT_PREFIX_LEN);
            match (boundary_point(&spec, &w, DEFAULT_ACCEPT_TOL), boundary_point(&spec, &w[1..], DEFAULT_ACCEPT_TOL)) {
                (Ok(a), Ok(b)) => a.accepted && b.accepted && proj_distance(&a.point, &b.point.transform(spec.matrix(w[0]))) <= 2.0 * DEFAULT_ACCEPT_TOL,
                _ => false,
            }
        });
        let flags = par_indexed(words, |k| {
            let word = sample_word(&spec, 201, 201, child_seed(23, k as u64));
            let a = spec.matrix(word.negative[word.n_back() - 1]);
            match (oseledets_splitting(&spec, &word, &sp), oseledets_splitting(&spec, &word.unshift(None), &sp)) {
                (Ok(f), Ok(g)) => f.flags.iter().zip(&g.flags).all(|(v, w)| subspace_gap(&v.transform(a), w) <= 1e-4),
                _ => false,
            }
        });
        let rb = boundary.iter().filter(|&&b| b).count() as f64 / words as f64;
        let rf = flags.iter().filter(|&&b| b).count() as f64 / words as f64;
        pass &= rb >= 0.95 && rf >= 0.95;
        parts.push(format!("{}: boundary {rb:.3}, flags {rf:.3}", spec.name()));
    }
    outcome(pass, parts.join("; "))
}

fn chart_rates() -> Outcome {
    let pairs = 10;
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [fixtures::e2(), fixtures::e3()] {
        let sp = spectrum(&spec, 100_000, 16);
        for i in 0..sp.s() {
            let slopes: Vec<f64> = par_indexed(pairs, |p| {
                let frame = oseledets_splitting(&spec, &sample_word(&spec, 400, 200, 500 + p as u64), &sp).expect("frame");
                let eta = sample_forward_word(&spec, 5, p as u64, DEFAULT_PREFIX_LEN);
                let x = boundary_point(&spec, &eta, 1e-8).expect("boundary point").point;
                chart_rate(&spec, &frame, i, x.direction(), 0.1, 150).expect("chart rate").slope
            });
            let target = sp.normalized_gap(i + 1);
            let slope = mean(&slopes);
            pass &= (slope - target).abs() <= 0.1;
            parts.push(format!("{} i={i}: {slope:.4} (se {:.4}) vs {target:.4}", spec.name(), stderr(&slopes)));
        }
    }
    outcome(pass, parts.join("; "))
}

fn two_dimensional_formula() -> Outcome {
    let spec = fixtures::e2();
    let l0 = fixtures::oracle("E2", "lambda_0").unwrap();
    // det = 1 on both matrices, so λ_1 = −λ_0
    let target = LN_2 / (2.0 * l0);
    let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 61).unwrap();
    let d = measure_dimension(&nu, &RadiiGrid::default(), 100, 62).unwrap();
    let mis = cone_misclassification(&spec, 100_000, 63).unwrap();
    outcome(
        (d.value - target).abs() <= 0.05 && mis < 1e-3,
        format!("dim = {:.4} (spread {:.4}), log2/(l0-l1) = {target:.4}, cone misclassification {mis:.1e}", d.value, d.stderr),
    )
}

fn entropy_ladder() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [fixtures::e2(), fixtures::e3()] {
        let sp = spectrum(&spec, 100_000, 16);
        let l = ladder(&spec, &sp);
        let mut ok = l.h[0] == shannon_entropy(&spec);
        for i in 0..sp.s() {
            let drop = l.h[i] - l.h[i + 1];
            let se = l.stderr[i] + l.stderr[i + 1];
            let cap = -sp.normalized_gap(i + 1) * sp.multiplicities[i + 1] as f64;
            ok &= drop >= -2.0 * se && drop <= cap + 2.0 * se;
        }
        pass &= ok;
        parts.push(format!("{}: H = {:?}", spec.name(), l.h.iter().map(|h| format!("{h:.4}")).collect::<Vec<_>>()));
    }
    outcome(pass, parts.join("; "))
}

fn upper_bound_and_waterfilling() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [fixtures::e1(), fixtures::e2(), fixtures::e3(), fixtures::e4()] {
        let sp = spectrum(&spec, 20_000, 4);
        let dim_ly = lyapunov_dimension(&sp, shannon_entropy(&spec)).dim_ly;
        let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 71).unwrap();
        let d = measure_dimension(&nu, &RadiiGrid::default(), 100, 72).unwrap();
        pass &= d.value <= dim_ly + 0.05;
        parts.push(format!("{} {:.3} <= {:.3} + 0.05", spec.name(), d.value, dim_ly));
    }
    let mut rng = stream_rng(73, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.random_range(1..6);
        let mut gaps = Vec::new();
        let mut g = 0.0;
        for _ in 0..s {
            g -= rng.random_range(0.01..3.0);
            gaps.push(g);
        }
        let mut mults = vec![1];
        mults.extend((0..s).map(|_| rng.random_range(1..4usize)));
        let cap: f64 = gaps.iter().zip(&mults[1..]).map(|(g, &d)| -g * d as f64).sum();
        let r = lyapunov_dimension_from(&gaps, &mults, rng.random_range(0.0..1.5) * cap);
        worst = worst.max((r.dim_ly - r.delta_max_crosscheck).abs());
    }
    pass &= worst <= 1e-9;
    parts.push(format!("waterfilling max diff {worst:.1e}"));
    outcome(pass, parts.join("; "))
}

fn ly_assembly() -> Outcome {
    let spec = fixtures::e3();
    let sp = spectrum(&spec, 100_000, 16);
    let l = ladder(&spec, &sp);
    let predicted = ly_formula_dimension(&l, &sp, 0, sp.s()).unwrap();
    let nu = Arc::new(sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 81).unwrap());
    let measured = measure_dimension(&nu, &RadiiGrid::default(), 100, 82).unwrap();
    let frame = oseledets_splitting(&spec, &sample_word(&spec, 400, 400, 83), &sp).unwrap();
    let sampler = BoundarySampler::new(&spec, 84, DEFAULT_PREFIX_LEN);
    let budget = ConservationBudget {
        grid: RadiiGrid::default(),
        slice_grid: slab_grid(),
        probes: 100,
        n_keep: 4000,
        max_draws: 2_000_000,
        slab_width: None,
        seed: 85,
    };
    let c = conservation_check(&sampler, &nu, &frame, 1, &budget).unwrap();
    outcome(
        (predicted - measured.value).abs() <= 0.15 && c.defect <= 0.15,
        format!(
            "predicted {predicted:.4} vs measured {:.4}; conservation proj {:.4} + slice {:.4} vs {:.4}, defect {:.4}",
            measured.value, c.dim_proj.value, c.dim_slice.value, c.dim_total.value, c.defect
        ),
    )
}

fn guivarch() -> Outcome {
    let radii: Vec<f64> = (2..=10).map(|k| 2f64.powi(-k)).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [fixtures::e2(), fixtures::e3()] {
        let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 91).unwrap();
        let g = guivarch_mass_bound(&nu, 50, &radii, 92).unwrap();
        pass &= g.alpha_fit > 0.0 && g.violations == 0;
        parts.push(format!("{}: alpha {:.3}, C {:.3}, violations {}", spec.name(), g.alpha_fit, g.c_fit, g.violations));
    }
    outcome(pass, parts.join("; "))
}

fn transverse() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [fixtures::e2(), fixtures::e3()] {
        let sp = spectrum(&spec, 100_000, 16);
        let l = ladder(&spec, &sp);
        let frame = oseledets_splitting(&spec, &sample_word(&spec, 400, 400, 101), &sp).unwrap();
        let sampler = BoundarySampler::new(&spec, 102, DEFAULT_PREFIX_LEN);
        for i in 1..=sp.s() {
            let bound = (l.h[i] - l.h[i - 1]) / sp.normalized_gap(i);
            match transverse_dimension(&sampler, &frame, i, &slab_grid(), &TransverseBudget::default()) {
                Ok(e) => {
                    pass &= e.value >= bound - 0.1;
                    parts.push(format!("{} theta_{} = {:.4} >= {:.4} - 0.1", spec.name(), i - 1, e.value, bound + 0.0));
                }
                Err(err) => {
                    pass = false;
                    parts.push(format!("{} i={i}: {err}", spec.name()));
                }
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn reproducibility(overhead: &mut Duration) -> Outcome {
    let cfg = |workers| RunConfig {
        ensemble: "E2".into(),
        command: Command::Verify,
        seed: 2024,
        budgets: Budgets::default(),
        output: std::env::temp_dir(),
        workers,
        assume_irreducible_proximal: false,
    };
    let base = furstlab_cli::execute(&cfg(1)).expect("verify run");
    let reference = report::to_jsonl(&base.rows) + &report::to_tsv(&base.rows);
    let t = Instant::now();
    let again = furstlab_cli::execute(&cfg(1)).expect("rerun");
    let many = furstlab_cli::execute(&cfg(4)).expect("rerun on 4 workers");
    *overhead = t.elapsed();
    let same = |o: &furstlab_cli::RunOutput| report::to_jsonl(&o.rows) + &report::to_tsv(&o.rows) == reference;
    let (a, b) = (same(&again), same(&many));
    outcome(a && b, format!("{} rows; rerun identical: {a}; 4 workers identical: {b}", base.rows.len()))
}

fn main() -> ExitCode {
    type Criterion = (usize, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "deterministic spectrum", Duration::from_secs(1), deterministic_spectrum),
        (2, "analytic spectrum", Duration::from_secs(10), analytic_spectrum),
        (3, "exact inequalities", Duration::from_secs(30), exact_inequalities),
        (4, "equivariance", Duration::from_secs(120), equivariance),
        (5, "chart rates", Duration::from_secs(120), chart_rates),
        (6, "2D dimension formula", Duration::from_secs(300), two_dimensional_formula),
        (7, "entropy ladder", Duration::from_secs(300), entropy_ladder),
        (8, "upper bound and waterfilling", Duration::from_secs(30), upper_bound_and_waterfilling),
        (9, "Ledrappier-Young assembly", Duration::from_secs(900), ly_assembly),
        (10, "Guivarc'h regularity", Duration::from_secs(300), guivarch),
        (11, "transverse dimensions", Duration::from_secs(900), transverse),
    ];
    let mut failed = 0;
    let mut report_line = |n: usize, name: &str, limit: Duration, elapsed: Duration, o: Outcome| {
        let in_time = elapsed <= limit;
        let ok = o.pass && in_time;
        failed += !ok as usize;
        let timing = if in_time { String::new() } else { format!(" (over the {:.0} s limit)", limit.as_secs_f64()) };
        println!("{} {n:>2} {name}: {} [{:.2} s]{timing}", if ok { "PASS" } else { "FAIL" }, o.detail, elapsed.as_secs_f64());
    };
    for (n, name, limit, f) in criteria {
        let t = Instant::now();
        let o = f();
        report_line(n, name, limit, t.elapsed(), o);
    }
    let mut overhead = Duration::ZERO;
    let o = reproducibility(&mut overhead);
    report_line(12, "reproducibility", Duration::from_secs(60), overhead, o);
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
