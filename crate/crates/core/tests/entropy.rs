use furstlab::boundary::{sample_measure, DEFAULT_PREFIX_LEN};
use furstlab::cocycle::{lyapunov_spectrum_auto, LyapunovSpectrum};
use furstlab::dimension::{measure_dimension, RadiiGrid};
use furstlab::ensemble::shannon_entropy;
use furstlab::entropy::*;
use furstlab::fixtures;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn spectrum(spec: &furstlab::ensemble::EnsembleSpec) -> LyapunovSpectrum {
    lyapunov_spectrum_auto(spec, 20_000, &[0, 1, 2, 3]).unwrap()
}

#[test]
fn lyapunov_dimension_examples() {
    let r = lyapunov_dimension_from(&[-1.0], &[1, 1], LN2);
    assert_eq!(r.m, 0);
    assert!((r.dim_ly - 0.693147).abs() < 1e-6);
    let r = lyapunov_dimension_from(&[-1.0, -2.0], &[1, 1, 2], 0.0);
    assert_eq!((r.m, r.dim_ly), (0, 0.0));
    let r = lyapunov_dimension_from(&[-1.0, -2.0], &[1, 1, 2], 10.0);
    assert_eq!(r.m, 2);
    assert_eq!(r.dim_ly, 3.0);
    assert_eq!(r.l, vec![0.0, 1.0, 5.0]);
    let r = lyapunov_dimension_from(&[-1.0, -2.0], &[1, 1, 2], 3.0);
    assert_eq!(r.m, 1);
    assert!((r.dim_ly - 2.0).abs() < 1e-12);
}

#[test]
fn e3_lyapunov_dimension_matches_oracle() {
    let spec = fixtures::e3();
    let r = lyapunov_dimension(&spectrum(&spec), shannon_entropy(&spec));
    let oracle = fixtures::oracle("E3", "dim_ly").unwrap();
    assert!((r.dim_ly - oracle).abs() < 5e-3, "{r:?}");
}

fn gaps_and_mults() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, f64)> {
    (1usize..6).prop_flat_map(|s| {
        (
            prop::collection::vec(0.01f64..3.0, s),
            prop::collection::vec(1usize..4, s),
            0.0f64..1.5,
        )
            .prop_map(|(steps, d, frac)| {
                let mut gaps = Vec::new();
                let mut g = 0.0;
                for st in steps {
                    g -= st;
                    gaps.push(g);
                }
                let mut mults = vec![1];
                mults.extend(d);
                let total: f64 = gaps.iter().zip(&mults[1..]).map(|(g, &d)| -g * d as f64).sum();
                (gaps, mults, frac * total)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn waterfilling_equals_piecewise((gaps, mults, hp) in gaps_and_mults()) {
        let r = lyapunov_dimension_from(&gaps, &mults, hp);
        prop_assert!((r.dim_ly - r.delta_max_crosscheck).abs() <= 1e-9, "{:?}", r);
        prop_assert!(r.dim_ly <= mults.iter().sum::<usize>() as f64 - 1.0 + 1e-12);
    }
}

#[test]
fn single_matrix_ladder_is_zero() {
    let spec = fixtures::e1();
    let ladder = conditional_entropy_ladder(&spec, &spectrum(&spec), 8, 10_000, 0.1, 1).unwrap();
    assert!(ladder.h.iter().all(|&h| h == 0.0), "{ladder:?}");
}

#[test]
fn ladder_rejects_small_budgets() {
    let spec = fixtures::e2();
    let sp = spectrum(&spec);
    assert!(conditional_entropy_ladder(&spec, &sp, 4, 10_000, 0.1, 1).is_err());
    assert!(conditional_entropy_ladder(&spec, &sp, 8, 100, 0.1, 1).is_err());
    assert!(conditional_entropy_ladder(&spec, &sp, 8, 10_000, 0.3, 1).is_err());
}

fn check_ladder(spec: &furstlab::ensemble::EnsembleSpec) {
    let sp = spectrum(spec);
    let ladder = conditional_entropy_ladder(spec, &sp, 8, 10_000, 0.1, 3).unwrap();
    assert_eq!(ladder.h[0], shannon_entropy(spec));
    assert!(ladder.h.iter().all(|&h| h >= 0.0));
    assert!(ladder.h[sp.s()] < 1e-3, "{ladder:?}");
    for i in 0..sp.s() {
        let drop = ladder.h[i] - ladder.h[i + 1];
        let cap = -sp.normalized_gap(i + 1) * sp.multiplicities[i + 1] as f64;
        let se = ladder.stderr[i] + ladder.stderr[i + 1];
        assert!(drop >= -2.0 * se && drop <= cap + 2.0 * se, "level {i}: {ladder:?}");
    }
    let fine = conditional_entropy_ladder(spec, &sp, 8, 10_000, 0.05, 3).unwrap();
    for i in 0..=sp.s() {
        assert!((fine.h[i] - ladder.h[i]).abs() <= 3.0 * ladder.stderr[i].max(1e-3), "{fine:?}");
    }
    let predicted = ly_formula_dimension(&ladder, &sp, 0, sp.s()).unwrap();
    let dim_ly = lyapunov_dimension(&sp, shannon_entropy(spec)).dim_ly;
    assert!(predicted <= dim_ly + 0.05);
}

#[test]
fn e2_ladder() {
    check_ladder(&fixtures::e2());
}

#[test]
fn e3_ladder() {
    check_ladder(&fixtures::e3());
}

#[test]
fn e2_formula_matches_two_dimensional_value() {
    let spec = fixtures::e2();
    let sp = spectrum(&spec);
    let ladder = conditional_entropy_ladder(&spec, &sp, 8, 10_000, 0.1, 5).unwrap();
    let d = ly_formula_dimension(&ladder, &sp, 0, 1).unwrap();
    assert!((d - LN2 / (sp.exponents[0] - sp.exponents[1])).abs() < 1e-3);
    assert!(ly_formula_dimension(&ladder, &sp, 1, 1).is_err());
    assert!(ly_formula_dimension(&ladder, &sp, 0, 2).is_err());
}

#[test]
fn e3_formula_matches_measured_dimension() {
    let spec = fixtures::e3();
    let sp = spectrum(&spec);
    let ladder = conditional_entropy_ladder(&spec, &sp, 8, 10_000, 0.1, 6).unwrap();
    let predicted = ly_formula_dimension(&ladder, &sp, 0, sp.s()).unwrap();
    // zero increment at the last level
    assert!(ly_formula_dimension(&ladder, &sp, 1, 2).unwrap().abs() < 1e-3);
    let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 2).unwrap();
    let measured = measure_dimension(&nu, &RadiiGrid::default(), 100, 1).unwrap();
    assert!((predicted - measured.value).abs() < 0.15, "{predicted} vs {measured:?}");
    assert!(measured.value <= lyapunov_dimension(&sp, shannon_entropy(&spec)).dim_ly + 0.05);
}

#[test]
fn e2_furstenberg_entropy_is_log_two() {
    let spec = fixtures::e2();
    for seed in 0..3 {
        let nu = sample_measure(&spec, 100_000, DEFAULT_PREFIX_LEN, 30 + seed).unwrap();
        let h = furstenberg_entropy_2d(&spec, &nu, 0.02).unwrap();
        assert!((h.value - LN2).abs() < 0.1, "{h:?}");
        assert!(h.value <= LN2 + 0.05 && h.value_half_bandwidth <= LN2 + 0.05);
    }
}

#[test]
fn invariant_measures_have_zero_furstenberg_entropy() {
    for spec in [fixtures::e1(), fixtures::e4()] {
        let nu = sample_measure(&spec, 10_000, DEFAULT_PREFIX_LEN, 1).unwrap();
        let h = furstenberg_entropy_2d(&spec, &nu, 0.02).unwrap();
        assert!(h.value.abs() < 1e-9, "{}: {h:?}", spec.name());
    }
}

#[test]
fn furstenberg_entropy_is_two_dimensional_only() {
    let spec = fixtures::e3();
    let nu = sample_measure(&spec, 10_000, 20, 1).unwrap();
    assert!(furstenberg_entropy_2d(&spec, &nu, 0.02).is_err());
}

#[test]
fn cylinders_are_separated_on_fixtures() {
    for spec in [fixtures::e2(), fixtures::e3()] {
        assert!(cone_misclassification(&spec, 100_000, 4).unwrap() < 1e-3);
    }
}
