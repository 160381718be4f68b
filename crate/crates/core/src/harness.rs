//! Simulation experiments: empirical size, power and collinearity curves.
//!
//! Within a replicate the design is drawn once, row selection runs once per
//! variant, and the `B` permutation draws are shared by every noise law,
//! signal strength and noise draw. Every random quantity comes from a stream
//! keyed by the master seed and its position in the grid. Results do not
//! depend on the worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{
    draw_noise, make_design, Design, DesignKind, DesignSpec, NoiseKind, NoiseSpec,
};
use crate::error::{Error, Result};
use crate::kernel::DesignContext;
use crate::linalg::RankTolerance;
use crate::palm::{PermutationEngine, TieRule};
use crate::perm::{sample_restricted, RestrictedPermutation, RowSet};
use crate::rng::{derive_seed, substream, tag};
use crate::rowselect::{select_rows_seeded, SelectionConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    RowSelected,
    Unrestricted,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::RowSelected => "row_selected",
            Selection::Unrestricted => "unrestricted",
        }
    }
}

/// Greedy budget used unless overridden: 20 for `p ≤ 15`, else 30.
pub fn default_budget(p: usize) -> usize {
    if p <= 15 {
        20
    } else {
        30
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment_id: Option<String>,
    pub design: DesignSpec,
    pub noise: NoiseKind,
    #[serde(default)]
    pub beta: f64,
    pub alpha: f64,
    pub b_perms: usize,
    pub n_noise_draws: usize,
    pub n_replicates: usize,
    pub selection: Selection,
    pub budget_t: usize,
    pub m_mc: usize,
    pub master_seed: u64,
    /// Reuse replicate 0's design for every replicate.
    #[serde(default)]
    pub fixed_design: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        for (name, v) in [
            ("b_perms", self.b_perms),
            ("n_noise_draws", self.n_noise_draws),
            ("n_replicates", self.n_replicates),
            ("m_mc", self.m_mc),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        self.experiment_id.clone().unwrap_or_else(|| {
            format!(
                "{}-p{}-{}-{}-beta{}",
                self.design.kind.name(),
                self.design.p,
                self.noise.name(),
                self.selection.name(),
                self.beta
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// `NaN` when the replicate failed.
    pub rejection_rate: f64,
    pub collinearity_rate: f64,
    pub selected_rows: Option<RowSet>,
    /// Every sampled permutation satisfied `P Z = Z`.
    pub all_perms_fix_z: bool,
    pub runtime_ms: u64,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median_rejection: f64,
    pub iqr: f64,
    /// Binomial standard error at the median rate.
    pub mc_se: f64,
    pub median_collinearity: f64,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Level the p-values were compared against.
    pub level: f64,
    pub per_replicate: Vec<ReplicateResult>,
    pub summary: Summary,
}

impl ExperimentResult {
    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.per_replicate.iter_mut().for_each(|p| p.runtime_ms = 0);
            r
        };
        let (a, b) = (strip(self), strip(other));
        a.config == b.config
            && a.level.to_bits() == b.level.to_bits()
            && a.per_replicate.len() == b.per_replicate.len()
            && a.per_replicate.iter().zip(&b.per_replicate).all(|(x, y)| {
                x.rejection_rate.to_bits() == y.rejection_rate.to_bits()
                    && x.collinearity_rate.to_bits() == y.collinearity_rate.to_bits()
                    && x.selected_rows == y.selected_rows
                    && x.error == y.error
            })
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

fn summarize_replicates(reps: &[ReplicateResult], draws: usize) -> Summary {
    let mut ok: Vec<f64> = reps
        .iter()
        .filter(|r| !r.failed())
        .map(|r| r.rejection_rate)
        .collect();
    ok.sort_by(f64::total_cmp);
    let med = percentile(&ok, 0.5);
    let coll: Vec<f64> = reps
        .iter()
        .filter(|r| !r.failed())
        .map(|r| r.collinearity_rate)
        .collect();
    Summary {
        median_rejection: med,
        iqr: percentile(&ok, 0.75) - percentile(&ok, 0.25),
        mc_se: (med * (1.0 - med) / draws as f64).sqrt(),
        median_collinearity: median(&coll),
        n_failed: reps.len() - ok.len(),
    }
}

/// One design crossed with noise laws, signal strengths, selection variants and levels.
#[derive(Clone, Debug)]
pub struct Grid {
    pub experiment_id: String,
    pub design: DesignSpec,
    pub noises: Vec<NoiseKind>,
    pub betas: Vec<f64>,
    pub selections: Vec<Selection>,
    /// Rejection levels for the p-values.
    pub levels: Vec<f64>,
    pub alpha: f64,
    pub b_perms: usize,
    pub n_noise_draws: usize,
    pub n_replicates: usize,
    pub budget_t: usize,
    pub m_mc: usize,
    pub master_seed: u64,
    pub fixed_design: bool,
}

impl Grid {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            experiment_id: cfg.id(),
            design: cfg.design,
            noises: vec![cfg.noise],
            betas: vec![cfg.beta],
            selections: vec![cfg.selection],
            levels: vec![cfg.alpha],
            alpha: cfg.alpha,
            b_perms: cfg.b_perms,
            n_noise_draws: cfg.n_noise_draws,
            n_replicates: cfg.n_replicates,
            budget_t: cfg.budget_t,
            m_mc: cfg.m_mc,
            master_seed: cfg.master_seed,
            fixed_design: cfg.fixed_design,
        }
    }

    fn config_for(&self, noise: NoiseKind, beta: f64, selection: Selection) -> ExperimentConfig {
        ExperimentConfig {
            experiment_id: Some(self.experiment_id.clone()),
            design: self.design,
            noise,
            beta,
            alpha: self.alpha,
            b_perms: self.b_perms,
            n_noise_draws: self.n_noise_draws,
            n_replicates: self.n_replicates,
            selection,
            budget_t: self.budget_t,
            m_mc: self.m_mc,
            master_seed: self.master_seed,
            fixed_design: self.fixed_design,
        }
    }

    fn design_path(&self) -> [u64; 3] {
        let kind = match self.design.kind {
            DesignKind::Gaussian => 0,
            DesignKind::Paired => 1,
            DesignKind::Mixture => 2,
        };
        [kind, self.design.n as u64, self.design.p as u64]
    }

    fn validate(&self) -> Result<()> {
        for sel in &self.selections {
            for noise in &self.noises {
                self.config_for(*noise, self.betas.first().copied().unwrap_or(0.0), *sel)
                    .validate()?;
            }
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::Config("levels must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

struct Variant {
    rows: Result<RowSet>,
    perms: Vec<RestrictedPermutation>,
    runtime_ms: u64,
}

/// Selected rows, collinearity rate, `P Z = Z` for every draw, runtime and error.
type VariantOutcome = (Option<RowSet>, f64, bool, u64, Option<String>);

/// Rejection counts for one replicate, indexed `[selection][noise][beta][level]`.
struct ReplicateCounts {
    counts: Vec<usize>,
    variants: Vec<VariantOutcome>,
}

fn replicate(g: &Grid, rep: usize) -> ReplicateCounts {
    let n_cells = g.noises.len() * g.betas.len() * g.levels.len();
    let failed = |msg: String| ReplicateCounts {
        counts: vec![0; g.selections.len() * n_cells],
        variants: g
            .selections
            .iter()
            .map(|_| (None, f64::NAN, false, 0, Some(msg.clone())))
            .collect(),
    };
    let design_rep = if g.fixed_design { 0 } else { rep };
    let [kind, n, p] = g.design_path();
    let design: Design = match make_design(
        &g.design,
        &mut substream(g.master_seed, &[tag::DESIGN, kind, n, p, design_rep as u64]),
    ) {
        Ok(d) => d,
        Err(e) => return failed(e.to_string()),
    };
    let ctx = match DesignContext::new(&design.x, &design.z, RankTolerance::default()) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    let n = g.design.n;
    let variants: Vec<Variant> = g
        .selections
        .iter()
        .map(|sel| {
            let start = Instant::now();
            let rows = match sel {
                Selection::Unrestricted => Ok(RowSet::empty(n)),
                Selection::RowSelected => {
                    let cfg = SelectionConfig::new(g.alpha, g.budget_t, g.m_mc);
                    let seed = derive_seed(
                        g.master_seed,
                        &[tag::SELECT, kind, n as u64, p, design_rep as u64],
                    );
                    select_rows_seeded(&design.x, &design.z, &cfg, seed, RankTolerance::default())
                        .map(|t| t.final_row_set)
                }
            };
            let perms = match &rows {
                Ok(r) => (0..g.b_perms)
                    .map(|i| {
                        let mut rng = substream(
                            g.master_seed,
                            &[tag::PERMS, kind, n as u64, p, rep as u64, i as u64],
                        );
                        sample_restricted(n, r, &mut rng).expect("row set matches n")
                    })
                    .collect(),
                Err(_) => Vec::new(),
            };
            Variant {
                rows,
                perms,
                runtime_ms: start.elapsed().as_millis() as u64,
            }
        })
        .collect();
    let engines: Vec<Option<PermutationEngine<'_>>> = variants
        .iter()
        .map(|v| {
            v.rows
                .as_ref()
                .ok()
                .map(|_| PermutationEngine::new(&ctx, &v.perms).expect("perms match n"))
        })
        .collect();
    let start = Instant::now();
    let mut counts = vec![0usize; g.selections.len() * n_cells];
    for (ni, noise) in g.noises.iter().enumerate() {
        let spec = NoiseSpec { kind: *noise, n };
        let per_draw: Vec<Vec<bool>> = (0..g.n_noise_draws)
            .into_par_iter()
            .map(|d| {
                let mut rng = substream(
                    g.master_seed,
                    &[tag::NOISE, noise.index(), rep as u64, d as u64],
                );
                let eps = draw_noise(&spec, &mut rng).expect("positive length");
                let mut out =
                    Vec::with_capacity(g.selections.len() * g.betas.len() * g.levels.len());
                for engine in &engines {
                    for beta in &g.betas {
                        let y: Vec<f64> = design
                            .x
                            .iter()
                            .zip(&eps)
                            .map(|(x, e)| beta * x + e)
                            .collect();
                        let pv = engine.as_ref().map(|e| {
                            e.p_value(&y, TieRule::Exact)
                                .expect("finite response")
                                .p_value
                        });
                        for level in &g.levels {
                            out.push(pv.is_some_and(|p| p <= *level));
                        }
                    }
                }
                out
            })
            .collect();
        for draw in &per_draw {
            let mut idx = 0;
            for si in 0..g.selections.len() {
                for bi in 0..g.betas.len() {
                    for li in 0..g.levels.len() {
                        if draw[idx] {
                            let cell =
                                si * n_cells + (ni * g.betas.len() + bi) * g.levels.len() + li;
                            counts[cell] += 1;
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    let test_ms = start.elapsed().as_millis() as u64;
    let zrows: Vec<Vec<f64>> = design.z.to_rows();
    let variants = variants
        .into_iter()
        .zip(&engines)
        .map(|(v, e)| match v.rows {
            Ok(rows) => {
                let coll = e
                    .as_ref()
                    .map_or(f64::NAN, |e| e.collinear_draws() as f64 / g.b_perms as f64);
                let fix_z = v.perms.iter().all(|p| {
                    p.mapping()
                        .iter()
                        .enumerate()
                        .all(|(i, &s)| zrows[i] == zrows[s])
                });
                (Some(rows), coll, fix_z, v.runtime_ms + test_ms, None)
            }
            Err(err) => (None, f64::NAN, false, v.runtime_ms, Some(err.to_string())),
        })
        .collect();
    ReplicateCounts { counts, variants }
}

/// Runs every cell of a grid; results are ordered by selection, noise, beta, level.
pub fn run_grid(g: &Grid) -> Result<Vec<ExperimentResult>> {
    g.validate()?;
    let reps: Vec<ReplicateCounts> = (0..g.n_replicates)
        .into_par_iter()
        .map(|rep| replicate(g, rep))
        .collect();
    let n_cells = g.noises.len() * g.betas.len() * g.levels.len();
    let mut out = Vec::new();
    for (si, sel) in g.selections.iter().enumerate() {
        for (ni, noise) in g.noises.iter().enumerate() {
            for (bi, beta) in g.betas.iter().enumerate() {
                for (li, level) in g.levels.iter().enumerate() {
                    let cell = si * n_cells + (ni * g.betas.len() + bi) * g.levels.len() + li;
                    let per_replicate: Vec<ReplicateResult> = reps
                        .iter()
                        .enumerate()
                        .map(|(rep, rc)| {
                            let (rows, coll, fix_z, ms, err) = &rc.variants[si];
                            ReplicateResult {
                                replicate: rep,
                                rejection_rate: if err.is_some() {
                                    f64::NAN
                                } else {
                                    rc.counts[cell] as f64 / g.n_noise_draws as f64
                                },
                                collinearity_rate: *coll,
                                selected_rows: rows.clone(),
                                all_perms_fix_z: *fix_z,
                                runtime_ms: *ms,
                                error: err.clone(),
                            }
                        })
                        .collect();
                    out.push(ExperimentResult {
                        config: g.config_for(*noise, *beta, *sel),
                        level: *level,
                        summary: summarize_replicates(&per_replicate, g.n_noise_draws),
                        per_replicate,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Empirical size of one configuration (`cfg.beta` is normally 0).
pub fn run_size_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    Ok(run_grid(&Grid::from_config(cfg))?.remove(0))
}

/// One result per `(β, level)` for levels `α` and `α/2`, both read off the same p-values.
pub fn run_power_experiment(
    cfg: &ExperimentConfig,
    betas: &[f64],
) -> Result<Vec<ExperimentResult>> {
    cfg.validate()?;
    let mut g = Grid::from_config(cfg);
    g.betas = betas.to_vec();
    g.levels = vec![cfg.alpha, cfg.alpha / 2.0];
    run_grid(&g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    pub selection: Selection,
    pub collinearity: f64,
    pub power: f64,
}

/// Collinearity probability and power at `cfg.beta` for each `p`, with and without selection.
pub fn run_collinearity_sweep(
    p_grid: &[usize],
    cfg: &ExperimentConfig,
) -> Result<(Vec<SweepRow>, Vec<ExperimentResult>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &p in p_grid {
        let mut c = cfg.clone();
        c.design.p = p;
        c.validate()?;
        let mut g = Grid::from_config(&c);
        g.selections = vec![Selection::RowSelected, Selection::Unrestricted];
        for r in run_grid(&g)? {
            rows.push(SweepRow {
                p,
                selection: r.config.selection,
                collinearity: r.summary.median_collinearity,
                power: r.summary.median_rejection,
            });
            results.push(r);
        }
    }
    Ok((rows, results))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub design: DesignKind,
    pub p: usize,
    pub noise: NoiseKind,
    pub beta: f64,
    pub level: f64,
    pub selection: Selection,
    pub median: f64,
    pub iqr: f64,
    pub mc_se: f64,
    pub median_collinearity: f64,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
}

pub fn summarize(results: &[ExperimentResult]) -> Report {
    Report {
        rows: results
            .iter()
            .map(|r| SummaryRow {
                experiment_id: r.config.id(),
                design: r.config.design.kind,
                p: r.config.design.p,
                noise: r.config.noise,
                beta: r.config.beta,
                level: r.level,
                selection: r.config.selection,
                median: r.summary.median_rejection,
                iqr: r.summary.iqr,
                mc_se: r.summary.mc_se,
                median_collinearity: r.summary.median_collinearity,
                n_failed: r.summary.n_failed,
            })
            .collect(),
    }
}

impl Report {
    fn find(&self, design: DesignKind, noise: NoiseKind, sel: Selection) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.design == design && r.noise == noise && r.selection == sel)
    }

    /// Median rejection rates in percent, one line per design and noise law.
    pub fn size_table(&self) -> String {
        let mut out = String::from("design     noise              row_selected  unrestricted\n");
        for design in [
            DesignKind::Gaussian,
            DesignKind::Paired,
            DesignKind::Mixture,
        ] {
            for noise in NoiseKind::ALL {
                let cell = |sel| {
                    self.find(design, noise, sel)
                        .map_or("-".to_string(), |r| format!("{:.1}", 100.0 * r.median))
                };
                if self.find(design, noise, Selection::RowSelected).is_none()
                    && self.find(design, noise, Selection::Unrestricted).is_none()
                {
                    continue;
                }
                out.push_str(&format!(
                    "{:<10} {:<18} {:>12}  {:>12}\n",
                    design.name(),
                    noise.name(),
                    cell(Selection::RowSelected),
                    cell(Selection::Unrestricted)
                ));
            }
        }
        out
    }

    /// One line per row with all summary statistics.
    pub fn long_table(&self) -> String {
        let mut out = String::from("experiment_id,design,p,noise,beta,level,selection,median,iqr,mc_se,median_collinearity,n_failed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.experiment_id,
                r.design.name(),
                r.p,
                r.noise.name(),
                r.beta,
                r.level,
                r.selection.name(),
                r.median,
                r.iqr,
                r.mc_se,
                r.median_collinearity,
                r.n_failed
            ));
        }
        out
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    experiment_id: &'a str,
    design: &'a str,
    noise: &'a str,
    beta: f64,
    alpha: f64,
    selection: &'a str,
    replicate: usize,
    rejection_rate: f64,
    collinearity_rate: f64,
    n: usize,
    p: usize,
    b: usize,
    seed: u64,
}

pub fn write_results_csv(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        let id = r.config.id();
        for rep in &r.per_replicate {
            w.serialize(CsvRow {
                experiment_id: &id,
                design: r.config.design.kind.name(),
                noise: r.config.noise.name(),
                beta: r.config.beta,
                alpha: r.level,
                selection: r.config.selection.name(),
                replicate: rep.replicate,
                rejection_rate: rep.rejection_rate,
                collinearity_rate: rep.collinearity_rate,
                n: r.config.design.n,
                p: r.config.design.p,
                b: r.config.b_perms,
                seed: r.config.master_seed,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SidecarReplicate<'a> {
    experiment_id: String,
    selection: &'a str,
    replicate: usize,
    selected_rows: Option<Vec<usize>>,
    runtime_ms: u64,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    experiment: &'a str,
    scale: &'a str,
    master_seed: u64,
    library_version: &'a str,
    configs: Vec<&'a ExperimentConfig>,
    replicates: Vec<SidecarReplicate<'a>>,
    summary: &'a Report,
}

pub fn write_sidecar_json(
    path: &Path,
    experiment: &str,
    scale: &str,
    master_seed: u64,
    results: &[ExperimentResult],
    report: &Report,
) -> Result<()> {
    let mut configs: Vec<&ExperimentConfig> = Vec::new();
    let mut replicates = Vec::new();
    for r in results {
        if !configs.contains(&&r.config) {
            configs.push(&r.config);
        }
        if r.level != r.config.alpha || r.config.noise != results[0].config.noise {
            continue;
        }
        for rep in &r.per_replicate {
            replicates.push(SidecarReplicate {
                experiment_id: r.config.id(),
                selection: r.config.selection.name(),
                replicate: rep.replicate,
                selected_rows: rep.selected_rows.as_ref().map(RowSet::to_one_based),
                runtime_ms: rep.runtime_ms,
                error: rep.error.as_deref(),
            });
        }
    }
    let sidecar = Sidecar {
        experiment,
        scale,
        master_seed,
        library_version: VERSION,
        configs,
        replicates,
        summary: report,
    };
    fs::write(path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Table1,
    Fig1,
    Power,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Table1 => "table1",
            Experiment::Fig1 => "fig1",
            Experiment::Power => "power",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Smoke,
    Desk,
    Paper,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Smoke => "smoke",
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }

    pub fn params(self) -> ScaleParams {
        match self {
            Scale::Smoke => ScaleParams {
                n_replicates: 2,
                n_noise_draws: 40,
                b_perms: 60,
                m_mc: 60,
                budget_t: Some(2),
                fig1_replicates: 2,
                fig1_b_perms: 60,
            },
            Scale::Desk => ScaleParams {
                n_replicates: 10,
                n_noise_draws: 500,
                b_perms: 500,
                m_mc: 1000,
                budget_t: None,
                fig1_replicates: 5,
                fig1_b_perms: FIG1_B_PERMS,
            },
            Scale::Paper => ScaleParams {
                n_replicates: 50,
                n_noise_draws: 2000,
                b_perms: 2000,
                m_mc: 2000,
                budget_t: None,
                fig1_replicates: 50,
                fig1_b_perms: FIG1_B_PERMS,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub n_replicates: usize,
    pub n_noise_draws: usize,
    pub b_perms: usize,
    pub m_mc: usize,
    /// Overrides [`default_budget`] when set.
    pub budget_t: Option<usize>,
    pub fig1_replicates: usize,
    pub fig1_b_perms: usize,
}

pub const ALPHA: f64 = 0.05;
pub const N_OBS: usize = 100;

/// The three simulation designs with their dimensions.
pub fn table1_designs() -> [DesignSpec; 3] {
    [
        DesignSpec {
            kind: DesignKind::Gaussian,
            n: N_OBS,
            p: 15,
        },
        DesignSpec {
            kind: DesignKind::Paired,
            n: N_OBS,
            p: 15,
        },
        DesignSpec {
            kind: DesignKind::Mixture,
            n: N_OBS,
            p: 40,
        },
    ]
}

pub fn power_betas(kind: DesignKind) -> Vec<f64> {
    match kind {
        DesignKind::Gaussian => vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        DesignKind::Paired | DesignKind::Mixture => vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
    }
}

pub const FIG1_P_GRID: [usize; 3] = [5, 10, 15];
pub const FIG1_BETA: f64 = 4.0;
pub const FIG1_B_PERMS: usize = 2000;

fn grid_for(experiment: &str, design: DesignSpec, scale: Scale, seed: u64, reps: usize) -> Grid {
    let sp = scale.params();
    Grid {
        experiment_id: format!("{experiment}-{}-p{}", design.kind.name(), design.p),
        design,
        noises: NoiseKind::ALL.to_vec(),
        betas: vec![0.0],
        selections: vec![Selection::RowSelected, Selection::Unrestricted],
        levels: vec![ALPHA],
        alpha: ALPHA,
        b_perms: sp.b_perms,
        n_noise_draws: sp.n_noise_draws,
        n_replicates: reps,
        budget_t: sp.budget_t.unwrap_or_else(|| default_budget(design.p)),
        m_mc: sp.m_mc,
        master_seed: seed,
        fixed_design: false,
    }
}

pub struct ReproduceOutput {
    pub results: Vec<ExperimentResult>,
    pub sweep: Vec<SweepRow>,
    pub report: Report,
    pub files: Vec<PathBuf>,
}

/// Runs a preset experiment and, when `out_dir` is given, writes
/// `<name>.csv`, `<name>_summary.txt` and `<name>.json` there.
pub fn reproduce(
    experiment: Experiment,
    scale: Scale,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<ReproduceOutput> {
    let sp = scale.params();
    let mut results = Vec::new();
    let mut sweep = Vec::new();
    match experiment {
        Experiment::Table1 => {
            for design in table1_designs() {
                results.extend(run_grid(&grid_for(
                    "table1",
                    design,
                    scale,
                    seed,
                    sp.n_replicates,
                ))?);
            }
        }
        Experiment::Power => {
            for design in table1_designs() {
                let mut g = grid_for("power", design, scale, seed, sp.n_replicates);
                g.betas = power_betas(design.kind);
                g.levels = vec![ALPHA, ALPHA / 2.0];
                results.extend(run_grid(&g)?);
            }
        }
        Experiment::Fig1 => {
            for p in FIG1_P_GRID {
                let design = DesignSpec {
                    kind: DesignKind::Paired,
                    n: N_OBS,
                    p,
                };
                let mut g = grid_for("fig1", design, scale, seed, sp.fig1_replicates);
                g.b_perms = sp.fig1_b_perms;
                g.noises = vec![NoiseKind::Gaussian];
                g.betas = vec![FIG1_BETA];
                for r in run_grid(&g)? {
                    sweep.push(SweepRow {
                        p,
                        selection: r.config.selection,
                        collinearity: r.summary.median_collinearity,
                        power: r.summary.median_rejection,
                    });
                    results.push(r);
                }
            }
        }
    }
    let report = summarize(&results);
    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let name = experiment.name();
        let csv_path = dir.join(format!("{name}.csv"));
        write_results_csv(&csv_path, &results)?;
        let summary_path = dir.join(format!("{name}_summary.txt"));
        let mut text = report.long_table();
        if experiment == Experiment::Table1 {
            text.push('\n');
            text.push_str(&report.size_table());
        }
        fs::write(&summary_path, text)?;
        let json_path = dir.join(format!("{name}.json"));
        write_sidecar_json(&json_path, name, scale.name(), seed, &results, &report)?;
        files = vec![csv_path, summary_path, json_path];
    }
    Ok(ReproduceOutput {
        results,
        sweep,
        report,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            experiment_id: None,
            design: DesignSpec {
                kind: DesignKind::Paired,
                n: 30,
                p: 3,
            },
            noise: NoiseKind::Gaussian,
            beta: 0.0,
            alpha: 0.05,
            b_perms: 40,
            n_noise_draws: 30,
            n_replicates: 3,
            selection: Selection::Unrestricted,
            budget_t: 2,
            m_mc: 60,
            master_seed: 11,
            fixed_design: false,
        }
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = small_cfg();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let bad = format!("{text}\nunexpected = 1\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad),
            Err(Error::Config(_))
        ));
        let mut zero = cfg.clone();
        zero.b_perms = 0;
        assert!(zero.validate().is_err());
    }

    #[test]
    fn unrestricted_paired_size_is_controlled() {
        let res = run_size_experiment(&small_cfg()).unwrap();
        assert_eq!(res.per_replicate.len(), 3);
        assert!(res
            .per_replicate
            .iter()
            .all(|r| r.rejection_rate <= 0.05 + 3.0 * (0.05f64 * 0.95 / 30.0).sqrt()));
        assert!(res.summary.median_collinearity > 0.0);
    }

    #[test]
    fn replay_is_deterministic() {
        let mut cfg = small_cfg();
        cfg.selection = Selection::RowSelected;
        let a = run_power_experiment(&cfg, &[0.0, 2.0]).unwrap();
        let b = run_power_experiment(&cfg, &[0.0, 2.0]).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));
        // the α/2 rejections are a subset of the α rejections
        assert!(a[3].summary.median_rejection <= a[2].summary.median_rejection);
    }

    #[test]
    fn failed_replicates_are_reported() {
        let mut cfg = small_cfg();
        cfg.selection = Selection::RowSelected;
        cfg.design = DesignSpec {
            kind: DesignKind::Paired,
            n: 8,
            p: 5,
        };
        cfg.validate().unwrap();
        let res = run_size_experiment(&cfg).unwrap();
        assert!(res
            .per_replicate
            .iter()
            .all(|r| r.failed() && r.rejection_rate.is_nan()));
        assert_eq!(res.summary.n_failed, 3);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0, f64::NAN]), 2.0);
        assert_eq!(percentile(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(default_budget(15), 20);
        assert_eq!(default_budget(40), 30);
    }

    #[test]
    fn reproduce_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = reproduce(Experiment::Fig1, Scale::Smoke, 3, Some(dir.path())).unwrap();
        assert_eq!(out.sweep.len(), 6);
        let csv = fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
        assert!(csv.starts_with(
            "experiment_id,design,noise,beta,alpha,selection,replicate,rejection_rate,collinearity_rate,n,p,b,seed"
        ));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("fig1.json")).unwrap())
                .unwrap();
        assert_eq!(json["master_seed"], 3);
        assert_eq!(json["library_version"], VERSION);
    }
}
