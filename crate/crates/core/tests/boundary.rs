use furstlab::boundary::*;
use furstlab::cocycle::lyapunov_spectrum_auto;
use furstlab::ensemble::EnsembleSpec;
use furstlab::fixtures;
use furstlab::projective::proj_distance;
use furstlab::rng::{random_unit_vector, stream_rng};
use furstlab::stats::ls_fit;

fn equivariance_rate(spec: &EnsembleSpec, words: u64) -> f64 {
    let tol = DEFAULT_ACCEPT_TOL;
    let mut ok = 0;
    let mut accepted = 0;
    for k in 0..words {
        let w = sample_forward_word(spec, 41, k, 400);
        let a = boundary_point(spec, &w, tol).unwrap();
        let b = boundary_point(spec, &w[1..], tol).unwrap();
        if !(a.accepted && b.accepted) {
            continue;
        }
        accepted += 1;
        if proj_distance(&a.point, &b.point.transform(spec.matrix(w[0]))) <= 2.0 * tol {
            ok += 1;
        }
    }
    ok as f64 / accepted as f64
}

#[test]
fn boundary_map_is_equivariant() {
    for spec in [fixtures::e2(), fixtures::e3()] {
        let rate = equivariance_rate(&spec, 1000);
        assert!(rate >= 0.99, "{}: {rate}", spec.name());
    }
}

#[test]
fn e2_measure_lives_in_positive_quadrant() {
    let nu = sample_measure(&fixtures::e2(), 100_000, DEFAULT_PREFIX_LEN, 3).unwrap();
    assert!(nu.atoms().iter().all(|x| x.direction()[0] * x.direction()[1] >= 0.0));
    let total: f64 = nu.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn disjoint_seeds_agree() {
    let spec = fixtures::e2();
    let a = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 1).unwrap();
    let b = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 2).unwrap();
    assert!(measure_discrepancy(&a, &b) < 0.02);
    assert!(stationarity_discrepancy(&spec, &a) < 0.02);
}

#[test]
fn e3_is_nearly_stationary() {
    let spec = fixtures::e3();
    let nu = sample_measure(&spec, 20_000, DEFAULT_PREFIX_LEN, 1).unwrap();
    let off = EmpiricalProjectiveMeasure::uniform(vec![furstlab::ensemble::line(&[1.0, 0.0, 0.0]); 100], nu.provenance.clone());
    assert!(stationarity_discrepancy(&spec, &nu) < stationarity_discrepancy(&spec, &off) / 5.0);
}

#[test]
fn discrepancy_decreases_with_sample_size() {
    let spec = fixtures::e2();
    let sizes = [500, 1500, 5000, 15_000, 50_000];
    let mut ordered = [0usize; 4];
    for seed in 0..10 {
        let d: Vec<f64> = sizes
            .iter()
            .map(|&n| stationarity_discrepancy(&spec, &sample_measure(&spec, n, DEFAULT_PREFIX_LEN, 100 + seed).unwrap()))
            .collect();
        for k in 0..4 {
            ordered[k] += (d[k + 1] < d[k]) as usize;
        }
    }
    assert!(ordered.iter().all(|&c| c > 5), "{ordered:?}");
}

#[test]
fn convergence_gap_decays_at_normalized_rate() {
    for spec in [fixtures::e2(), fixtures::e3()] {
        let sp = lyapunov_spectrum_auto(&spec, 20_000, &[0, 1, 2, 3]).unwrap();
        let target = sp.normalized_gap(1);
        let lens: Vec<usize> = (2..=12).map(|k| 2 * k).collect();
        let profile = convergence_profile(&spec, &lens, 400, 5, 1e-12);
        let pts: Vec<(f64, f64)> = profile.iter().filter(|p| p.2 >= 200).map(|&(n, g, _)| (n as f64 / 2.0, g)).collect();
        assert!(pts.len() >= 5);
        let slope = ls_fit(&pts).slope;
        assert!((slope - target).abs() <= 0.2 * target.abs(), "{}: {slope} vs {target}", spec.name());
    }
}

#[test]
fn support_avoids_hyperplanes() {
    for spec in [fixtures::e2(), fixtures::e3()] {
        let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 9).unwrap();
        let mut rng = stream_rng(4, 0);
        for k in 0..40 {
            let n = if k < spec.dim() {
                nalgebra::DVector::from_fn(spec.dim(), |i, _| (i == k) as u8 as f64)
            } else {
                random_unit_vector(&mut rng, spec.dim())
            };
            assert!(hyperplane_fraction(&nu, &n, 1e-6) <= 1e-3);
        }
    }
}

#[test]
fn guivarch_regularity_on_fixtures() {
    let radii: Vec<f64> = (2..=10).map(|k| 2f64.powi(-k)).collect();
    for spec in [fixtures::e2(), fixtures::e3()] {
        let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 12).unwrap();
        let fit = guivarch_mass_bound(&nu, 50, &radii, 3).unwrap();
        assert!(fit.alpha_fit > 0.0 && fit.violations == 0, "{}: {fit:?}", spec.name());
    }
}

#[test]
fn guivarch_rejects_bad_radii() {
    let nu = sample_measure(&fixtures::e2(), 100, DEFAULT_PREFIX_LEN, 12).unwrap();
    assert!(guivarch_mass_bound(&nu, 5, &[0.1, 0.2], 1).is_err());
    assert!(guivarch_mass_bound(&nu, 5, &[1.5, 0.2], 1).is_err());
}

#[test]
fn sampling_is_deterministic() {
    let spec = fixtures::e3();
    let a = sample_measure(&spec, 500, DEFAULT_PREFIX_LEN, 8).unwrap();
    let b = sample_measure(&spec, 500, DEFAULT_PREFIX_LEN, 8).unwrap();
    assert_eq!(a.to_tsv(), b.to_tsv());
    let single = sample_measure(&spec, 1, DEFAULT_PREFIX_LEN, 8).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single.weights(), &[1.0]);
}

#[test]
fn rotation_words_are_not_proximal() {
    let r = nalgebra::DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
    let spec = EnsembleSpec::new("rot", vec!["r".into()], vec![r], vec![1.0]).unwrap();
    assert!(matches!(boundary_point(&spec, &[0; 16], 1e-8), Err(furstlab::LabError::NonProximal { .. })));
    assert!(matches!(boundary_point(&spec, &[0; 4], 1e-8), Err(furstlab::LabError::Validation(_))));
}
