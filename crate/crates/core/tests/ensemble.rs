use furstlab::ensemble::*;
use furstlab::fixtures;
use furstlab::LabError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0f64..10.0, n * n)
        .prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
        .prop_filter("invertible", |m| m.determinant().abs() > 1e-3)
}

fn spec_strategy() -> impl Strategy<Value = EnsembleSpec> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(n, k)| {
        (prop::collection::vec(matrix_strategy(n), k), prop::collection::vec(0.05f64..1.0, k)).prop_filter_map(
            "distinct",
            move |(mats, w)| {
                let total: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
                let labels = (0..k).map(|i| format!("m{i}")).collect();
                EnsembleSpec::new("random", labels, mats, probs).ok()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emit_then_load_is_identity(spec in spec_strategy()) {
        let text = emit_spec(&spec);
        let back = load_spec(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(emit_spec(&back), text);
    }

    #[test]
    fn entropy_is_permutation_invariant(w in prop::collection::vec(0.01f64..1.0, 1..6), rot in 0usize..6) {
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut q = p.clone();
        q.rotate_left(rot % p.len());
        q.reverse();
        prop_assert!((entropy_of(&p) - entropy_of(&q)).abs() < 1e-12);
        prop_assert!(entropy_of(&p) >= 0.0 && entropy_of(&p) <= (p.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn entropy_examples() {
    assert_eq!(entropy_of(&[1.0]), 0.0);
    assert!((entropy_of(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
    assert!((entropy_of(&[0.25, 0.75]) - 0.562335).abs() < 1e-6);
    assert!((shannon_entropy(&fixtures::e2()) - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn rejects_bad_documents() {
    let bad_probs = fixtures::E2.replace("\"0.5\", \"0.5\"", "\"0.5\", \"0.6\"");
    assert!(matches!(load_spec(&bad_probs), Err(LabError::Validation(_))));
    let singular = fixtures::E2.replace("[\"2\", \"1\", \"1\", \"1\"]", "[\"1\", \"1\", \"1\", \"1\"]");
    assert!(matches!(load_spec(&singular), Err(LabError::Validation(_))));
    let duplicate = fixtures::E2.replace("[\"1\", \"1\", \"1\", \"2\"]", "[\"2\", \"1\", \"1\", \"1\"]");
    assert!(matches!(load_spec(&duplicate), Err(LabError::Validation(_))));
    let unknown = format!("{}\ncolour = \"red\"\n", fixtures::E2.replace("[matrices]", "extra = 1\n[matrices]"));
    assert!(matches!(load_spec(&unknown), Err(LabError::Parse(_))));
    assert!(matches!(load_spec("not toml at all ["), Err(LabError::Parse(_))));
    let one_d = "name = \"x\"\ndim = 1\nlabels = [\"a\"]\nprobs = [\"1\"]\n[matrices]\na = [\"2\"]\n";
    assert!(matches!(load_spec(one_d), Err(LabError::Validation(_))));
}

#[test]
fn fixture_diagnostics() {
    let d2 = diagnose(&fixtures::e2(), 1, 1000);
    assert_eq!(d2.proximality_evidence.verdict, Verdict::Pass);
    assert!(d2.passed());
    assert!(diagnose(&fixtures::e3(), 1, 1000).passed());
    assert_eq!(diagnose(&fixtures::e1(), 1, 1000).irreducibility_evidence.verdict, Verdict::Fail);
    assert!(diagnose(&fixtures::e4(), 1, 1000).failed());
    assert_eq!(diagnose(&fixtures::e2(), 9, 2000), diagnose(&fixtures::e2(), 9, 2000));
}

#[test]
fn rotations_are_not_proximal() {
    let (c, s) = (0.6, 0.8);
    let r1 = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let r2 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let spec = EnsembleSpec::new("rot", vec!["a".into(), "b".into()], vec![r1, r2], vec![0.5, 0.5]).unwrap();
    assert_eq!(diagnose(&spec, 3, 1000).proximality_evidence.verdict, Verdict::Fail);
}
