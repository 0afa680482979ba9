//! Command pipelines. Each returns rows without run metadata.

use std::sync::Arc;

use furstlab::boundary::{guivarch_mass_bound, sample_measure, stationarity_discrepancy, EmpiricalProjectiveMeasure};
use furstlab::cocycle::{lyapunov_spectrum_auto, oseledets_splitting, sample_word, LyapunovSpectrum, OseledetsFrame};
use furstlab::dimension::{
    conservation_check, measure_dimension, transverse_dimension, BoundarySampler, ConservationBudget, DimensionEstimate, TransverseBudget,
};
use furstlab::ensemble::{diagnose, shannon_entropy, EnsembleDiagnostics, EnsembleSpec, Verdict};
use furstlab::entropy::{conditional_entropy_ladder, furstenberg_entropy_2d, ly_formula_dimension, lyapunov_dimension, EntropyLadder, FurstenbergEntropy};
use furstlab::rng::child_seed;
use furstlab::Result;

use crate::config::{Budgets, RunConfig};
use crate::report::Row;

/// Stream tags so that each stage draws from its own seed.
pub(crate) mod tag {
    pub const DIAGNOSTICS: u64 = 1;
    pub const SPECTRUM: u64 = 100;
    pub const MEASURE: u64 = 2;
    pub const FRAME: u64 = 3;
    pub const SAMPLER: u64 = 4;
    pub const LADDER: u64 = 5;
    pub const PROBES: u64 = 6;
    pub const GUIVARCH: u64 = 7;
    pub const INEQUALITIES: u64 = 8;
    pub const EQUIVARIANCE: u64 = 9;
    pub const CHART: u64 = 10;
    pub const HYPERPLANES: u64 = 11;
    pub const CONVERGENCE: u64 = 12;
    pub const WATERFILL: u64 = 13;
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub spec: EnsembleSpec,
    pub diagnostics: EnsembleDiagnostics,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a RunConfig, spec: EnsembleSpec) -> Self {
        let diagnostics = diagnose(&spec, child_seed(cfg.seed, tag::DIAGNOSTICS), cfg.budgets.diagnostic_budget);
        Self { cfg, spec, diagnostics }
    }

    pub fn budgets(&self) -> &Budgets {
        &self.cfg.budgets
    }

    pub fn seed(&self, t: u64) -> u64 {
        child_seed(self.cfg.seed, t)
    }

    /// Diagnostics passed, or the override is set.
    pub fn measure_defined(&self) -> bool {
        self.diagnostics.passed() || self.cfg.assume_irreducible_proximal
    }

    pub fn spectrum(&self) -> Result<LyapunovSpectrum> {
        let seeds: Vec<u64> = (0..self.budgets().spectrum_seeds as u64).map(|k| self.seed(tag::SPECTRUM + k)).collect();
        lyapunov_spectrum_auto(&self.spec, self.budgets().steps, &seeds)
    }

    pub fn measure(&self) -> Result<EmpiricalProjectiveMeasure> {
        sample_measure(&self.spec, self.budgets().samples, self.budgets().prefix_len, self.seed(tag::MEASURE))
    }

    pub fn frame(&self, spectrum: &LyapunovSpectrum) -> Result<OseledetsFrame> {
        let n = self.budgets().n_back;
        oseledets_splitting(&self.spec, &sample_word(&self.spec, n, n, self.seed(tag::FRAME)), spectrum)
    }

    pub fn sampler(&self) -> BoundarySampler<'_> {
        BoundarySampler::new(&self.spec, self.seed(tag::SAMPLER), self.budgets().prefix_len)
    }

    pub fn ladder(&self, spectrum: &LyapunovSpectrum, bin_width: f64) -> Result<EntropyLadder> {
        let b = self.budgets();
        conditional_entropy_ladder(&self.spec, spectrum, b.n_outer, b.n_inner, bin_width, self.seed(tag::LADDER))
    }

    pub fn dimension(&self, nu: &EmpiricalProjectiveMeasure) -> Result<DimensionEstimate> {
        measure_dimension(nu, &self.budgets().radii, self.budgets().probes, self.seed(tag::PROBES))
    }

    pub fn transverse_budget(&self) -> TransverseBudget {
        TransverseBudget { n_keep: self.budgets().n_keep, max_draws: self.budgets().max_draws, width: self.budgets().delta }
    }

    pub fn conservation_budget(&self) -> ConservationBudget {
        let b = self.budgets();
        ConservationBudget {
            grid: b.radii,
            slice_grid: b.slab_radii,
            probes: b.probes,
            n_keep: b.n_keep,
            max_draws: b.max_draws,
            slab_width: b.delta,
            seed: self.seed(tag::PROBES),
        }
    }

    pub fn furstenberg_entropy(&self, nu: &EmpiricalProjectiveMeasure) -> Result<FurstenbergEntropy> {
        furstenberg_entropy_2d(&self.spec, nu, self.budgets().kde_bandwidth)
    }
}

/// Dyadic radii 2^-2 … 2^-10.
pub fn guivarch_radii() -> Vec<f64> {
    (2..=10).map(|k| 2f64.powi(-k)).collect()
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// Diagnostics are heuristics, so their verdicts go in the note rather than
/// the verdict column.
pub fn diagnostic_rows(d: &EnsembleDiagnostics) -> Vec<Row> {
    vec![
        Row::exact("diag_proximality_gap_ratio", d.proximality_evidence.best_gap_ratio).note(format!(
            "diagnostic {}; steps {}",
            verdict_name(d.proximality_evidence.verdict),
            d.proximality_evidence.steps
        )),
        Row::exact("diag_irreducibility_orbit_spread", d.irreducibility_evidence.orbit_spread)
            .note(format!("diagnostic {}", verdict_name(d.irreducibility_evidence.verdict))),
    ]
}

pub fn spectrum_rows(sp: &LyapunovSpectrum) -> Vec<Row> {
    let mut rows = Vec::new();
    for (i, (&l, &se)) in sp.exponents.iter().zip(&sp.stderr).enumerate() {
        rows.push(Row::value(format!("lambda_{i}"), l, se));
        rows.push(Row::exact(format!("d_{i}"), sp.multiplicities[i] as f64));
    }
    for i in 1..=sp.s() {
        rows.push(Row::value(format!("lambda_tilde_{i}"), sp.normalized_gap(i), (sp.stderr[i].powi(2) + sp.stderr[0].powi(2)).sqrt()));
    }
    rows.push(Row::exact("trace", sp.trace()));
    rows
}

pub fn spectrum(ctx: &Context) -> Result<Vec<Row>> {
    let mut rows = diagnostic_rows(&ctx.diagnostics);
    let sp = ctx.spectrum()?;
    rows.extend(spectrum_rows(&sp));
    let frame = ctx.frame(&sp)?;
    rows.push(Row::exact("kappa", frame.kappa).note("splitting of one sampled word"));
    Ok(rows)
}

pub fn measure(ctx: &Context) -> Result<(Vec<Row>, EmpiricalProjectiveMeasure)> {
    let mut rows = diagnostic_rows(&ctx.diagnostics);
    let nu = ctx.measure()?;
    rows.push(Row::exact("n_samples", nu.len() as f64));
    rows.push(Row::exact("stationarity_discrepancy", stationarity_discrepancy(&ctx.spec, &nu)));
    let g = guivarch_mass_bound(&nu, ctx.budgets().hyperplanes, &guivarch_radii(), ctx.seed(tag::GUIVARCH))?;
    rows.push(Row::exact("alpha_guivarch", g.alpha_fit).note(format!("{} hyperplanes with mass", g.hyperplanes_used)));
    rows.push(Row::exact("C_guivarch", g.c_fit));
    rows.push(Row::exact("guivarch_violations", g.violations as f64));
    if ctx.spec.dim() == 2 {
        let h = ctx.furstenberg_entropy(&nu)?;
        rows.push(Row::exact("h_F", h.value).note(format!("bandwidth {}", h.bandwidth)));
        rows.push(Row::exact("h_F_half_bandwidth", h.value_half_bandwidth));
    }
    Ok((rows, nu))
}

fn estimate_row(name: String, e: &DimensionEstimate) -> Row {
    let mut row = Row::value(name, e.value, e.stderr);
    let mut notes = e.notes.clone();
    if e.non_exact {
        notes.push("probe spread exceeds 3x pooled stderr".into());
    }
    row.note = notes.join("; ");
    row
}

pub fn dimension(ctx: &Context) -> Result<Vec<Row>> {
    let mut rows = diagnostic_rows(&ctx.diagnostics);
    let sp = ctx.spectrum()?;
    let nu = Arc::new(ctx.measure()?);
    let dim = ctx.dimension(&nu)?;
    rows.push(estimate_row("dim_nu".into(), &dim));
    rows.push(Row::exact("dim_LY", lyapunov_dimension(&sp, shannon_entropy(&ctx.spec)).dim_ly));
    let frame = ctx.frame(&sp)?;
    let sampler = ctx.sampler();
    for i in 1..=sp.s() {
        let e = transverse_dimension(&sampler, &frame, i, &ctx.budgets().slab_radii, &ctx.transverse_budget())?;
        rows.push(estimate_row(format!("theta_{}", i - 1), &e));
    }
    for i in 1..sp.s() {
        let c = conservation_check(&sampler, &nu, &frame, i, &ctx.conservation_budget())?;
        rows.push(estimate_row(format!("dim_proj_{i}"), &c.dim_proj));
        rows.push(estimate_row(format!("dim_slice_{i}"), &c.dim_slice));
        rows.push(Row::exact(format!("conservation_defect_{i}"), c.defect));
    }
    Ok(rows)
}

pub fn ladder_rows(ladder: &EntropyLadder, suffix: &str) -> Vec<Row> {
    (0..ladder.h.len())
        .map(|i| {
            Row::value(format!("H_{i}{suffix}"), ladder.h[i], ladder.stderr[i])
                .note(format!("Miller-Madow correction {:.3e}; {:.1} cells", ladder.correction[i], ladder.cells[i]))
        })
        .collect()
}

pub fn entropy(ctx: &Context) -> Result<Vec<Row>> {
    let mut rows = diagnostic_rows(&ctx.diagnostics);
    let sp = ctx.spectrum()?;
    let hp = shannon_entropy(&ctx.spec);
    rows.push(Row::exact("H_p", hp));
    let ladder = ctx.ladder(&sp, ctx.budgets().bin_width)?;
    rows.extend(ladder_rows(&ladder, ""));
    let half = ctx.ladder(&sp, ctx.budgets().bin_width / 2.0)?;
    rows.extend(ladder_rows(&half, "_half_bin"));
    let ly = lyapunov_dimension(&sp, hp);
    for (i, l) in ly.l.iter().enumerate() {
        rows.push(Row::exact(format!("L_{i}"), *l));
    }
    rows.push(Row::exact("m", ly.m as f64));
    rows.push(Row::exact("dim_LY", ly.dim_ly));
    rows.push(Row::exact("dim_LY_waterfill", ly.delta_max_crosscheck));
    rows.push(Row::value("dim_LY_formula", ly_formula_dimension(&ladder, &sp, 0, sp.s())?, 0.0).note("sum of (H_{j+1}-H_j)/lambda_tilde_{j+1}"));
    if ctx.spec.dim() == 2 {
        let nu = ctx.measure()?;
        let h = ctx.furstenberg_entropy(&nu)?;
        rows.push(Row::exact("h_F", h.value));
        rows.push(Row::exact("h_F_half_bandwidth", h.value_half_bandwidth));
    }
    Ok(rows)
}
