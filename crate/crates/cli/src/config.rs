//! Run configuration: a TOML file, overridden field by field from the
//! command line.

use std::path::{Path, PathBuf};

use furstlab::dimension::RadiiGrid;
use furstlab::ensemble::{emit_spec, load_spec, EnsembleSpec};
use furstlab::fixtures;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Spectrum,
    Measure,
    Dimension,
    Entropy,
    Verify,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Measure => "measure",
            Command::Dimension => "dimension",
            Command::Entropy => "entropy",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// QR steps per spectrum seed.
    pub steps: usize,
    /// Independent spectrum runs.
    pub spectrum_seeds: usize,
    /// Boundary points in the sampled measure.
    pub samples: usize,
    pub prefix_len: usize,
    /// Past length of sampled two-sided words.
    pub n_back: usize,
    pub radii: RadiiGrid,
    /// Grid for slab-conditioned (transverse and sliced) estimates.
    pub slab_radii: RadiiGrid,
    pub bin_width: f64,
    /// Slab width; defaults to 0.1 × the smallest slab radius.
    pub delta: Option<f64>,
    pub n_outer: usize,
    pub n_inner: usize,
    pub probes: usize,
    pub n_keep: usize,
    pub max_draws: usize,
    /// Words for the equivariance checks.
    pub words: usize,
    /// Pairs for the chart-rate check.
    pub pairs: usize,
    /// Random trials per exact-inequality suite.
    pub trials: usize,
    pub hyperplanes: usize,
    pub kde_bandwidth: f64,
    pub diagnostic_budget: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            steps: 100_000,
            spectrum_seeds: 16,
            samples: 100_000,
            prefix_len: 100,
            n_back: 400,
            radii: RadiiGrid::default(),
            slab_radii: RadiiGrid { r0: 0.1, rho: 0.7, k_max: 20 },
            bin_width: 0.1,
            delta: None,
            n_outer: 8,
            n_inner: 10_000,
            probes: 100,
            n_keep: 4000,
            max_draws: 2_000_000,
            words: 1000,
            pairs: 10,
            trials: 10_000,
            hyperplanes: 50,
            kde_bandwidth: 0.02,
            diagnostic_budget: 10_000,
        }
    }
}

impl Budgets {
    /// Every budget scaled by `factor` (at least 1 each, 1000 steps); grids
    /// and widths kept.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self {
            steps: s(self.steps).max(1000),
            spectrum_seeds: s(self.spectrum_seeds),
            samples: s(self.samples),
            n_outer: s(self.n_outer),
            n_inner: s(self.n_inner),
            probes: s(self.probes),
            n_keep: s(self.n_keep),
            max_draws: s(self.max_draws),
            words: s(self.words),
            pairs: s(self.pairs),
            trials: s(self.trials),
            hyperplanes: s(self.hyperplanes),
            diagnostic_budget: self.diagnostic_budget.max(1000),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let counts = [
            ("steps", self.steps),
            ("spectrum_seeds", self.spectrum_seeds),
            ("samples", self.samples),
            ("prefix_len", self.prefix_len),
            ("n_back", self.n_back),
            ("n_outer", self.n_outer),
            ("n_inner", self.n_inner),
            ("probes", self.probes),
            ("n_keep", self.n_keep),
            ("max_draws", self.max_draws),
            ("words", self.words),
            ("pairs", self.pairs),
            ("trials", self.trials),
            ("hyperplanes", self.hyperplanes),
            ("diagnostic_budget", self.diagnostic_budget),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("budget {name} must be positive")));
        }
        if self.steps < 1000 {
            return Err(CliError::Config("steps must be at least 1000".into()));
        }
        if self.diagnostic_budget < 1000 {
            return Err(CliError::Config("diagnostic_budget must be at least 1000".into()));
        }
        for (name, g) in [("radii", &self.radii), ("slab_radii", &self.slab_radii)] {
            RadiiGrid::new(g.r0, g.rho, g.k_max).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        if !(self.bin_width > 0.0 && self.bin_width <= 0.2) {
            return Err(CliError::Config(format!("bin_width {} outside (0, 0.2]", self.bin_width)));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 0.2) {
                return Err(CliError::Config(format!("delta {d} outside (0, 0.2]")));
            }
        }
        if !(self.kde_bandwidth > 0.0 && self.kde_bandwidth < std::f64::consts::FRAC_PI_2) {
            return Err(CliError::Config("kde_bandwidth outside (0, pi/2)".into()));
        }
        Ok(())
    }
}

/// Config file contents; every field may also come from a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub ensemble: Option<String>,
    pub command: Option<Command>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub budgets: Budgets,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub assume_irreducible_proximal: bool,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub ensemble: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub assume_irreducible_proximal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Fixture name (`E1`…`E4`) or path to an ensemble file.
    pub ensemble: String,
    pub command: Command,
    pub seed: u64,
    pub budgets: Budgets,
    pub output: PathBuf,
    pub workers: usize,
    pub assume_irreducible_proximal: bool,
}

pub const DEFAULT_OUTPUT: &str = "furstlab-out";

impl RunConfig {
    pub fn resolve(file: ConfigFile, command: Command, over: Overrides) -> Result<Self, CliError> {
        if let Some(c) = file.command {
            if c != command {
                return Err(CliError::Config(format!("config is for `{}`, invoked as `{}`", c.as_str(), command.as_str())));
            }
        }
        let ensemble = over.ensemble.or(file.ensemble).ok_or_else(|| CliError::Config("no ensemble given".into()))?;
        let seed = over.seed.or(file.seed).ok_or_else(|| CliError::Config("seed is mandatory (--seed or `seed` in the config)".into()))?;
        let workers = over.workers.or(file.workers).unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        file.budgets.validate()?;
        Ok(Self {
            ensemble,
            command,
            seed,
            budgets: file.budgets,
            output: over.output.or(file.output).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
            workers,
            assume_irreducible_proximal: over.assume_irreducible_proximal || file.assume_irreducible_proximal,
        })
    }

    pub fn load_ensemble(&self) -> Result<EnsembleSpec, CliError> {
        if let Some(spec) = fixtures::load(&self.ensemble) {
            return Ok(spec);
        }
        let text = std::fs::read_to_string(&self.ensemble)
            .map_err(|e| CliError::Config(format!("ensemble {}: not a fixture name and unreadable: {e}", self.ensemble)))?;
        load_spec(&text).map_err(|e| CliError::Config(format!("ensemble {}: {e}", self.ensemble)))
    }

    /// SHA-256 over `config <len>\0<canonical json>`, where the JSON holds the
    /// canonical ensemble text and everything that affects the numbers.
    /// Output directory and worker count are left out.
    pub fn content_hash(&self, spec: &EnsembleSpec) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            schema: u32,
            ensemble: String,
            command: Command,
            seed: u64,
            budgets: &'a Budgets,
            assume_irreducible_proximal: bool,
        }
        let body = serde_json::to_string(&Hashed {
            schema: crate::report::SCHEMA_VERSION,
            ensemble: emit_spec(spec),
            command: self.command,
            seed: self.seed,
            budgets: &self.budgets,
            assume_irreducible_proximal: self.assume_irreducible_proximal,
        })
        .expect("config serializes");
        let mut h = Sha256::new();
        h.update(format!("config {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
