//! The shipped ensembles and their recorded oracle values.

use std::collections::BTreeMap;

use crate::ensemble::{load_spec, EnsembleSpec};

pub const E1: &str = include_str!("../fixtures/e1.toml");
pub const E2: &str = include_str!("../fixtures/e2.toml");
pub const E3: &str = include_str!("../fixtures/e3.toml");
pub const E4: &str = include_str!("../fixtures/e4.toml");
const ORACLES: &str = include_str!("../fixtures/oracles.toml");

pub const NAMES: [&str; 4] = ["E1", "E2", "E3", "E4"];

/// Fixture source by name (case-insensitive).
pub fn source(name: &str) -> Option<&'static str> {
    match name.to_ascii_uppercase().as_str() {
        "E1" => Some(E1),
        "E2" => Some(E2),
        "E3" => Some(E3),
        "E4" => Some(E4),
        _ => None,
    }
}

pub fn load(name: &str) -> Option<EnsembleSpec> {
    source(name).map(|s| load_spec(s).expect("shipped fixture is valid"))
}

pub fn e1() -> EnsembleSpec {
    load_spec(E1).expect("E1")
}

pub fn e2() -> EnsembleSpec {
    load_spec(E2).expect("E2")
}

pub fn e3() -> EnsembleSpec {
    load_spec(E3).expect("E3")
}

pub fn e4() -> EnsembleSpec {
    load_spec(E4).expect("E4")
}

/// Oracle table for a fixture, e.g. `oracle("E2", "lambda_0")`.
pub fn oracle(fixture: &str, key: &str) -> Option<f64> {
    let doc: BTreeMap<String, BTreeMap<String, f64>> = toml::from_str(ORACLES).expect("oracle table parses");
    doc.get(&fixture.to_ascii_lowercase())?.get(key).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_load() {
        assert_eq!(e1().len(), 1);
        assert_eq!(e2().dim(), 2);
        assert_eq!(e3().dim(), 3);
        assert_eq!(e4().len(), 2);
        assert!(load("e2").is_some() && load("E5").is_none());
    }

    #[test]
    fn oracle_lookup() {
        let l0 = oracle("E2", "lambda_0").unwrap();
        assert!((l0 - 0.9155).abs() < 1e-3);
        assert!(oracle("E2", "missing").is_none());
    }
}
