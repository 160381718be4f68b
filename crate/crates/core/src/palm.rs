//! Paired F-statistics and the conformal permutation p-value.
//!
//! For a permutation `P`, the pair is
//! `T_{i,0} = ‖(I − H_{X,Z,PZ}) Y‖²` and `T_{0,i} = ‖(I − H_{PX,Z,PZ}) Y‖²`,
//! and the p-value over `B` draws is
//! `(1 + #{T_{i,0} > T_{0,i}} + ½ #{T_{i,0} = T_{0,i}}) / (B + 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{snap_sq, DesignContext};
use crate::linalg::{dot, factor, sq_norm, Matrix, PivotedQr, RankTolerance};
use crate::perm::{apply_rows, compose, sample_restricted, RestrictedPermutation, RowSet};
use crate::rng::{substream, tag, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedStat {
    pub t_perm_null: f64,
    pub t_perm_alt: f64,
}

/// How `T_{i,0} = T_{0,i}` is decided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "tau")]
pub enum TieRule {
    /// Bitwise equality of the computed values.
    #[default]
    Exact,
    /// `|a − b| ≤ τ · max(|a|, |b|)`.
    Relative(f64),
}

impl TieRule {
    pub fn is_tie(self, a: f64, b: f64) -> bool {
        match self {
            TieRule::Exact => a == b,
            TieRule::Relative(tau) => (a - b).abs() <= tau * a.abs().max(b.abs()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub p_value: f64,
    pub b: usize,
    pub n_greater: usize,
    pub n_ties: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub p_value: f64,
    pub b: usize,
    pub n_greater: usize,
    pub n_ties: usize,
    pub row_set: RowSet,
    pub seed: u64,
    /// Draws with `X ∈ C(PX, Z, PZ)`.
    pub collinear_draws: usize,
}

pub fn conformal_p_value(stats: &[PairedStat]) -> Result<PValue> {
    conformal_p_value_with(stats, TieRule::Exact)
}

pub fn conformal_p_value_with(stats: &[PairedStat], tie: TieRule) -> Result<PValue> {
    if stats.is_empty() {
        return Err(Error::EmptyStatistics);
    }
    let mut n_greater = 0;
    let mut n_ties = 0;
    for s in stats {
        if tie.is_tie(s.t_perm_null, s.t_perm_alt) {
            n_ties += 1;
        } else if s.t_perm_null > s.t_perm_alt {
            n_greater += 1;
        }
    }
    Ok(p_value_from_counts(stats.len(), n_greater, n_ties))
}

fn p_value_from_counts(b: usize, n_greater: usize, n_ties: usize) -> PValue {
    PValue {
        p_value: (1.0 + n_greater as f64 + 0.5 * n_ties as f64) / (b as f64 + 1.0),
        b,
        n_greater,
        n_ties,
    }
}

/// One permutation, factored against the design once and reused for any response.
#[derive(Clone, Debug)]
pub struct PreparedPerm {
    shield: PivotedQr,
    x_dir: Vec<f64>,
    px_dir: Vec<f64>,
    collinear: bool,
}

impl PreparedPerm {
    pub fn new(ctx: &DesignContext, perm: &RestrictedPermutation) -> Self {
        let mapping = perm.mapping();
        let shield = ctx.shield_qr(mapping);
        let s = shield.rank();
        let tail = |v: &[f64]| -> Vec<f64> {
            let mut w = ctx.complement(v);
            shield.apply_qt(&mut w);
            w.split_off(s)
        };
        let x_t = tail(ctx.x());
        let px: Vec<f64> = mapping.iter().map(|&i| ctx.x()[i]).collect();
        let px_t = tail(&px);
        let x_sq = ctx.x_sq_norm();
        let x_dir = unit_or_zero(&x_t, x_sq);
        let px_dir = unit_or_zero(&px_t, x_sq);
        let along = dot(&px_dir, &x_t);
        let collinear = snap_sq(sq_norm(&x_t) - along * along, x_sq) == 0.0;
        Self {
            shield,
            x_dir,
            px_dir,
            collinear,
        }
    }

    pub fn collinear(&self) -> bool {
        self.collinear
    }

    /// Pair for a response given in complement coordinates.
    fn stat(&self, y_tilde: &[f64], y_sq: f64) -> PairedStat {
        let mut w = y_tilde.to_vec();
        self.shield.apply_qt(&mut w);
        let y_t = &w[self.shield.rank()..];
        let base = sq_norm(y_t);
        let a = dot(&self.x_dir, y_t);
        let b = dot(&self.px_dir, y_t);
        PairedStat {
            t_perm_null: snap_sq((base - a * a).max(0.0), y_sq),
            t_perm_alt: snap_sq((base - b * b).max(0.0), y_sq),
        }
    }
}

fn unit_or_zero(v: &[f64], reference_sq: f64) -> Vec<f64> {
    let sq = sq_norm(v);
    if snap_sq(sq, reference_sq) == 0.0 {
        vec![0.0; v.len()]
    } else {
        let inv = 1.0 / sq.sqrt();
        v.iter().map(|t| t * inv).collect()
    }
}

/// A fixed set of permutation draws prepared against one design.
pub struct PermutationEngine<'a> {
    ctx: &'a DesignContext,
    perms: Vec<PreparedPerm>,
}

impl<'a> PermutationEngine<'a> {
    pub fn new(ctx: &'a DesignContext, perms: &[RestrictedPermutation]) -> Result<Self> {
        if let Some(p) = perms.iter().find(|p| p.n() != ctx.n()) {
            return Err(Error::DimensionMismatch {
                context: "permutation length",
                expected: ctx.n(),
                found: p.n(),
            });
        }
        let perms = perms.iter().map(|p| PreparedPerm::new(ctx, p)).collect();
        Ok(Self { ctx, perms })
    }

    pub fn b(&self) -> usize {
        self.perms.len()
    }

    pub fn collinear_draws(&self) -> usize {
        self.perms.iter().filter(|p| p.collinear).count()
    }

    pub fn stats(&self, y: &[f64]) -> Result<Vec<PairedStat>> {
        check_response(y, self.ctx.n())?;
        let y_tilde = self.ctx.complement(y);
        let y_sq = sq_norm(y);
        Ok(self.perms.iter().map(|p| p.stat(&y_tilde, y_sq)).collect())
    }

    pub fn p_value(&self, y: &[f64], tie: TieRule) -> Result<PValue> {
        conformal_p_value_with(&self.stats(y)?, tie)
    }
}

fn check_response(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "response length",
            expected: n,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    Ok(())
}

/// Paired statistic for one permutation, plus the flag `X ∈ C(PX, Z, PZ)`.
pub fn paired_f_flagged(
    perm: &RestrictedPermutation,
    x: &[f64],
    z: &Matrix,
    y: &[f64],
) -> Result<(PairedStat, bool)> {
    let ctx = DesignContext::new(x, z, RankTolerance::default())?;
    if perm.n() != ctx.n() {
        return Err(Error::DimensionMismatch {
            context: "permutation length",
            expected: ctx.n(),
            found: perm.n(),
        });
    }
    check_response(y, ctx.n())?;
    let prepared = PreparedPerm::new(&ctx, perm);
    let stat = prepared.stat(&ctx.complement(y), sq_norm(y));
    Ok((stat, prepared.collinear))
}

pub fn paired_f(
    perm: &RestrictedPermutation,
    x: &[f64],
    z: &Matrix,
    y: &[f64],
) -> Result<PairedStat> {
    paired_f_flagged(perm, x, z, y).map(|(s, _)| s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub tie: TieRule,
    pub tolerance: RankTolerance,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            tie: TieRule::Exact,
            tolerance: RankTolerance::default(),
        }
    }
}

/// Draw `perm_index` for a test seeded with `seed`.
pub fn test_draw(seed: u64, perm_index: usize, r: &RowSet) -> Result<RestrictedPermutation> {
    let mut rng = substream(seed, &[tag::TEST, perm_index as u64]);
    sample_restricted(r.n(), r, &mut rng)
}

pub fn run_test(
    x: &[f64],
    z: &Matrix,
    y: &[f64],
    r: &RowSet,
    b: usize,
    seed: u64,
) -> Result<TestResult> {
    run_test_with(x, z, y, r, b, seed, TestOptions::default())
}

/// `b` i.i.d. draws from the subgroup fixing `r`, each from its own sub-stream of `seed`.
pub fn run_test_with(
    x: &[f64],
    z: &Matrix,
    y: &[f64],
    r: &RowSet,
    b: usize,
    seed: u64,
    opts: TestOptions,
) -> Result<TestResult> {
    if b == 0 {
        return Err(Error::InvalidArgument(
            "need at least one permutation".into(),
        ));
    }
    let ctx = DesignContext::new(x, z, opts.tolerance)?;
    if r.n() != ctx.n() {
        return Err(Error::InvalidRowSet(format!(
            "row set built for n = {}, design has n = {}",
            r.n(),
            ctx.n()
        )));
    }
    check_response(y, ctx.n())?;
    let perms = (0..b)
        .into_par_iter()
        .map(|i| test_draw(seed, i, r))
        .collect::<Result<Vec<_>>>()?;
    let engine = PermutationEngine::new(&ctx, &perms)?;
    let pv = engine.p_value(y, opts.tie)?;
    Ok(TestResult {
        p_value: pv.p_value,
        b: pv.b,
        n_greater: pv.n_greater,
        n_ties: pv.n_ties,
        row_set: r.clone(),
        seed,
        collinear_draws: engine.collinear_draws(),
    })
}

/// `T(P_a, P_b; X, Z, ε) = ‖(I − H_{P_b X, P_a Z, P_b Z}) ε‖²`; `(P, I)` gives
/// `T_{i,0}` and `(I, P)` gives `T_{0,i}`.
pub fn paired_f_general(
    pa: &RestrictedPermutation,
    pb: &RestrictedPermutation,
    x: &[f64],
    z: &Matrix,
    eps: &[f64],
) -> Result<f64> {
    check_response(eps, z.rows())?;
    let xm = Matrix::column_vector(x)?;
    let basis = Matrix::hstack(&[
        &apply_rows(pb, &xm)?,
        &apply_rows(pa, z)?,
        &apply_rows(pb, z)?,
    ])?;
    Ok(factor(&basis, RankTolerance::default()).residual_sq_norm(eps))
}

/// A paired-statistic candidate `T(P_a, P_b; X, Z, ε)`.
pub type StatFn<'a> = dyn Fn(&RestrictedPermutation, &RestrictedPermutation, &[f64], &Matrix, &[f64]) -> Result<f64>
    + Sync
    + 'a;

/// Checks `T(P_i, P_j; X, Z, P_σ ε) = T(P_σ⁻¹ P_i, P_σ⁻¹ P_j; X, Z, ε)` on
/// random Gaussian designs, row sets and noise, to relative tolerance 1e-8.
pub fn check_transferability(
    stat_fn: &StatFn<'_>,
    trials: usize,
    rng: &mut StreamRng,
) -> Result<bool> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    for _ in 0..trials {
        let n = rng.random_range(5..=12usize);
        let p = rng.random_range(1..=3usize);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z = Matrix::from_column_major(
            n,
            p,
            (0..n * p).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let fixed: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.25).collect();
        let r = RowSet::new(n, fixed)?;
        let pi = sample_restricted(n, &r, rng)?;
        let pj = sample_restricted(n, &r, rng)?;
        let sigma = sample_restricted(n, &r, rng)?;
        let lhs = stat_fn(&pi, &pj, &x, &z, &sigma.apply_vec(&eps)?)?;
        let si = sigma.inverse();
        let rhs = stat_fn(&compose(&si, &pi)?, &compose(&si, &pj)?, &x, &z, &eps)?;
        if (lhs - rhs).abs() > 1e-8 * (1.0 + lhs.abs().max(rhs.abs())) {
            return Ok(false);
        }
    }
    Ok(true)
}
