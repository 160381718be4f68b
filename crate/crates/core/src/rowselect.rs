//! Greedy fixed-row selection and the Monte Carlo estimators it consumes.
//!
//! Stage I adds rows minimizing the expected rank of `Z − P Z` until the
//! probability of `X ∈ C(Z, P Z)` is at most `α`. Stage II then adds, for
//! `T` steps, the row maximizing the lower `α`-quantile of
//! `D_R = ‖(I − H_{PX, Z, PZ}) X‖²`, and returns the iterate with the
//! largest recorded quantile.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{d_value_direct, AugmentBase, DesignContext, RankBase};
use crate::linalg::{in_column_space_with, numerical_rank_with, Matrix, RankTolerance};
use crate::perm::{gather_rows, sample_restricted, sample_unchecked, RowSet};
use crate::rng::{substream, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub mu_rank: f64,
    pub safety_prob: f64,
    pub d_quantile: f64,
    pub m_draws: usize,
    pub seed: u64,
}

/// 1-based rank of the lower empirical `α`-quantile among `m` draws.
pub fn quantile_rank(alpha: f64, m: usize) -> usize {
    let raw = (alpha * m as f64 - 1e-12 * m as f64).ceil();
    (raw.max(1.0) as usize).min(m)
}

/// The `⌈α m⌉`-th order statistic.
pub fn lower_quantile(values: &mut [f64], alpha: f64) -> f64 {
    let k = quantile_rank(alpha, values.len());
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "need at least one Monte Carlo draw".into(),
        ));
    }
    Ok(())
}

fn check_rows(r: &RowSet, n: usize) -> Result<()> {
    if r.n() != n {
        return Err(Error::InvalidRowSet(format!(
            "row set built for n = {}, design has n = {n}",
            r.n()
        )));
    }
    Ok(())
}

/// Mean numerical rank of `Z − P Z` over `m` draws.
pub fn estimate_mu<R: Rng + ?Sized>(z: &Matrix, r: &RowSet, m: usize, rng: &mut R) -> Result<f64> {
    check_m(m)?;
    check_rows(r, z.rows())?;
    let mut total = 0usize;
    for _ in 0..m {
        let perm = sample_restricted(z.rows(), r, rng)?;
        let diff = z.sub(&gather_rows(perm.mapping(), z))?;
        total += numerical_rank_with(&diff, RankTolerance::default())?.numerical_rank;
    }
    Ok(total as f64 / m as f64)
}

/// Fraction of `m` draws with `X ∈ C(Z, P Z)`.
pub fn estimate_safety<R: Rng + ?Sized>(
    x: &[f64],
    z: &Matrix,
    r: &RowSet,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    check_m(m)?;
    check_rows(r, z.rows())?;
    let mut hits = 0usize;
    for _ in 0..m {
        let perm = sample_restricted(z.rows(), r, rng)?;
        let basis = Matrix::hstack(&[z, &gather_rows(perm.mapping(), z)])?;
        if in_column_space_with(x, &basis, RankTolerance::default())? {
            hits += 1;
        }
    }
    Ok(hits as f64 / m as f64)
}

/// Lower empirical `α`-quantile of `D_R` over `m` draws.
pub fn estimate_d_quantile<R: Rng + ?Sized>(
    x: &[f64],
    z: &Matrix,
    r: &RowSet,
    alpha: f64,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_m(m)?;
    check_rows(r, z.rows())?;
    let mut values = Vec::with_capacity(m);
    for _ in 0..m {
        let perm = sample_restricted(z.rows(), r, rng)?;
        values.push(d_value_direct(
            x,
            z,
            perm.mapping(),
            RankTolerance::default(),
        )?);
    }
    Ok(lower_quantile(&mut values, alpha))
}

/// All three estimates for one row set, each from its own stream of `seed`.
pub fn estimate_all(
    x: &[f64],
    z: &Matrix,
    r: &RowSet,
    alpha: f64,
    m: usize,
    seed: u64,
) -> Result<Estimates> {
    Ok(Estimates {
        mu_rank: estimate_mu(z, r, m, &mut substream(seed, &[tag::MU]))?,
        safety_prob: estimate_safety(x, z, r, m, &mut substream(seed, &[tag::SAFETY]))?,
        d_quantile: estimate_d_quantile(x, z, r, alpha, m, &mut substream(seed, &[tag::QUANTILE]))?,
        m_draws: m,
        seed,
    })
}

/// Criteria evaluated by the greedy search. `step` identifies the sweep so
/// implementations can draw fresh, replayable randomness per sweep.
pub trait SelectionCriteria: Sync {
    fn n(&self) -> usize;
    fn p(&self) -> usize;
    fn safety(&self, r: &RowSet, step: usize) -> Result<f64>;
    /// `μ_{R ∪ {k}}` for each candidate `k`.
    fn mu_sweep(&self, r: &RowSet, candidates: &[usize], step: usize) -> Result<Vec<f64>>;
    /// The quantile for `R` itself and for each `R ∪ {k}`.
    fn quantile_sweep(
        &self,
        r: &RowSet,
        candidates: &[usize],
        step: usize,
    ) -> Result<(f64, Vec<f64>)>;
}

/// Monte Carlo criteria with common random numbers across candidates: one
/// set of base draws per sweep, each candidate seeing the base draw with
/// row `k` swapped back into place.
pub struct MonteCarloCriteria {
    ctx: DesignContext,
    alpha: f64,
    m: usize,
    seed: u64,
}

impl MonteCarloCriteria {
    pub fn new(
        x: &[f64],
        z: &Matrix,
        alpha: f64,
        m: usize,
        seed: u64,
        tol: RankTolerance,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        check_m(m)?;
        let ctx = DesignContext::new(x, z, tol)?.with_unit_images();
        Ok(Self {
            ctx,
            alpha,
            m,
            seed,
        })
    }

    fn draws(&self, r: &RowSet, stage: u64, step: usize) -> Vec<Vec<usize>> {
        let free = r.complement();
        (0..self.m)
            .into_par_iter()
            .map(|d| {
                let mut rng = substream(self.seed, &[stage, step as u64, d as u64]);
                sample_unchecked(r, &free, &mut rng).mapping().to_vec()
            })
            .collect()
    }
}

impl SelectionCriteria for MonteCarloCriteria {
    fn n(&self) -> usize {
        self.ctx.n()
    }

    fn p(&self) -> usize {
        self.ctx.p()
    }

    fn safety(&self, r: &RowSet, step: usize) -> Result<f64> {
        check_rows(r, self.ctx.n())?;
        let hits: usize = self
            .draws(r, tag::SAFETY, step)
            .par_iter()
            .map(|m| usize::from(self.ctx.safety_event(m)))
            .sum();
        Ok(hits as f64 / self.m as f64)
    }

    fn mu_sweep(&self, r: &RowSet, candidates: &[usize], step: usize) -> Result<Vec<f64>> {
        check_rows(r, self.ctx.n())?;
        let per_draw: Vec<Vec<usize>> = self
            .draws(r, tag::MU, step)
            .par_iter()
            .map(|m| {
                let base = RankBase::new(&self.ctx, m);
                candidates
                    .iter()
                    .map(|&k| base.candidate(&self.ctx, k))
                    .collect()
            })
            .collect();
        let mut totals = vec![0usize; candidates.len()];
        for row in &per_draw {
            for (t, v) in totals.iter_mut().zip(row) {
                *t += v;
            }
        }
        Ok(totals
            .into_iter()
            .map(|t| t as f64 / self.m as f64)
            .collect())
    }

    fn quantile_sweep(
        &self,
        r: &RowSet,
        candidates: &[usize],
        step: usize,
    ) -> Result<(f64, Vec<f64>)> {
        check_rows(r, self.ctx.n())?;
        let per_draw: Vec<(f64, Vec<f64>)> = self
            .draws(r, tag::QUANTILE, step)
            .par_iter()
            .map(|m| {
                let base = AugmentBase::new(&self.ctx, m);
                let vals = candidates
                    .iter()
                    .map(|&k| base.candidate(&self.ctx, k))
                    .collect();
                (base.d, vals)
            })
            .collect();
        let mut base: Vec<f64> = per_draw.iter().map(|(d, _)| *d).collect();
        let q0 = lower_quantile(&mut base, self.alpha);
        let qs = (0..candidates.len())
            .into_par_iter()
            .map(|c| {
                let mut col: Vec<f64> = per_draw.iter().map(|(_, v)| v[c]).collect();
                lower_quantile(&mut col, self.alpha)
            })
            .collect();
        Ok((q0, qs))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub budget_t: usize,
    pub m: usize,
    /// Stage I stops once `safety + safety_margin ≤ α`.
    #[serde(default)]
    pub safety_margin: f64,
    /// Relative gap below which two criterion values count as tied.
    #[serde(default = "default_q_rel_tol")]
    pub q_rel_tol: f64,
}

fn default_q_rel_tol() -> f64 {
    1e-9
}

impl SelectionConfig {
    pub fn new(alpha: f64, budget_t: usize, m: usize) -> Self {
        Self {
            alpha,
            budget_t,
            m,
            safety_margin: 0.0,
            q_rel_tol: default_q_rel_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShieldStep {
    pub row: usize,
    pub safety_before: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentStep {
    pub row: usize,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub shield_rows: Vec<ShieldStep>,
    pub shield_safety: f64,
    pub augment_rows: Vec<AugmentStep>,
    /// `Q^0, …, Q^T`.
    pub q_values: Vec<f64>,
    pub t_star: usize,
    pub shield_row_set: RowSet,
    pub final_row_set: RowSet,
}

fn better(v: f64, best: f64, tol: f64, maximize: bool) -> bool {
    let gap = tol * v.abs().max(best.abs());
    if maximize {
        v > best + gap
    } else {
        v < best - gap
    }
}

/// Index of the best value; ties within `tol` go to the earliest position.
fn pick(values: &[f64], tol: f64, maximize: bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best], tol, maximize) {
            best = i;
        }
    }
    best
}

pub fn select_rows_with(
    criteria: &dyn SelectionCriteria,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    check_alpha(cfg.alpha)?;
    let n = criteria.n();
    let cap = n.saturating_sub(criteria.p() + 2);
    let mut r = RowSet::empty(n);
    let mut shield_rows = Vec::new();
    let mut step = 0;
    let shield_safety = loop {
        let safety = criteria.safety(&r, step)?;
        if safety + cfg.safety_margin <= cfg.alpha {
            break safety;
        }
        if r.len() >= cap {
            return Err(Error::ShieldNotReached {
                fixed: r.len(),
                cap,
                safety,
                alpha: cfg.alpha,
            });
        }
        let candidates = r.complement();
        let mus = criteria.mu_sweep(&r, &candidates, step)?;
        let best = pick(&mus, cfg.q_rel_tol, false);
        let row = candidates[best];
        shield_rows.push(ShieldStep {
            row,
            safety_before: safety,
            mu: mus[best],
        });
        r = r.with(row)?;
        step += 1;
    };
    let shield_row_set = r.clone();

    let mut q_values = Vec::with_capacity(cfg.budget_t + 1);
    let mut augment_rows = Vec::new();
    for t in 1..=cfg.budget_t.max(1) {
        let candidates = if t <= cfg.budget_t {
            r.complement()
        } else {
            Vec::new()
        };
        let (q_base, qs) = criteria.quantile_sweep(&r, &candidates, t)?;
        if t == 1 {
            q_values.push(q_base);
        }
        if qs.is_empty() {
            break;
        }
        let best = pick(&qs, cfg.q_rel_tol, true);
        let row = candidates[best];
        augment_rows.push(AugmentStep { row, q: qs[best] });
        q_values.push(qs[best]);
        r = r.with(row)?;
    }
    let t_star = pick(&q_values, cfg.q_rel_tol, true);
    let mut final_row_set = shield_row_set.clone();
    for step in &augment_rows[..t_star] {
        final_row_set = final_row_set.with(step.row)?;
    }
    Ok(SelectionTrace {
        shield_rows,
        shield_safety,
        augment_rows,
        q_values,
        t_star,
        shield_row_set,
        final_row_set,
    })
}

/// Monte Carlo selection seeded by `seed`.
pub fn select_rows_seeded(
    x: &[f64],
    z: &Matrix,
    cfg: &SelectionConfig,
    seed: u64,
    tol: RankTolerance,
) -> Result<SelectionTrace> {
    let criteria = MonteCarloCriteria::new(x, z, cfg.alpha, cfg.m, seed, tol)?;
    select_rows_with(&criteria, cfg)
}

pub fn select_rows<R: Rng + ?Sized>(
    x: &[f64],
    z: &Matrix,
    alpha: f64,
    budget_t: usize,
    m: usize,
    rng: &mut R,
) -> Result<SelectionTrace> {
    let seed = rng.random::<u64>();
    select_rows_seeded(
        x,
        z,
        &SelectionConfig::new(alpha, budget_t, m),
        seed,
        RankTolerance::default(),
    )
}
