//! Cross-checks between the fast kernels, the Monte Carlo estimators and
//! exact enumeration. Each check returns a report; none of them panics on a
//! violation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::designs::paired_design;
use crate::error::Result;
use crate::kernel::{d_value_direct, DesignContext};
use crate::linalg::{numerical_rank, Matrix, RankTolerance};
use crate::oracle::{exact_distribution, g_function};
use crate::palm::{check_transferability, paired_f, paired_f_general, StatFn};
use crate::perm::{
    apply_rows, compose, enumerate_subgroup, sample_restricted, RestrictedPermutation, RowSet,
};
use crate::rng::{substream, tag, StreamRng};
use crate::rowselect::estimate_all;

/// Violations kept verbatim in a report; the count is always complete.
const MAX_DETAILS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Group,
    Oracle,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    pub details: Vec<String>,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cases: 0,
            violations: 0,
            details: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.violations += 1;
            if self.details.len() < MAX_DETAILS {
                self.details.push(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.cases > 0
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckReport>> {
    Ok(match suite {
        Suite::Group => vec![check_group_laws(300, seed)?],
        Suite::Oracle => vec![
            check_rank_monotonicity(seed)?,
            check_shield_bound()?,
            check_oracle_equivalence(20, 2000, seed)?,
        ],
        Suite::Identity => vec![
            check_g_identity(1000, seed)?,
            check_transferability_gate(500, seed)?,
        ],
    })
}

fn random_rowset(n: usize, prob: f64, rng: &mut StreamRng) -> RowSet {
    let fixed: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < prob).collect();
    RowSet::new(n, fixed).expect("indices below n")
}

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

/// Closure, associativity, identity, inverses, the row action law and subgroup order.
pub fn check_group_laws(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("group laws");
    let mut rng = substream(seed, &[tag::VERIFY, 1]);
    for t in 0..trials {
        let n = rng.random_range(1..=12usize);
        let r = random_rowset(n, 0.3, &mut rng);
        let a = sample_restricted(n, &r, &mut rng)?;
        let b = sample_restricted(n, &r, &mut rng)?;
        let c = sample_restricted(n, &r, &mut rng)?;
        let ab = compose(&a, &b)?;
        rep.record(r.members().iter().all(|&i| ab.mapping()[i] == i), || {
            format!("trial {t}: composition moves a fixed row")
        });
        let left = compose(&ab, &c)?;
        let right = compose(&a, &compose(&b, &c)?)?;
        rep.record(left.mapping() == right.mapping(), || {
            format!("trial {t}: associativity")
        });
        let id = RestrictedPermutation::identity(r.clone());
        rep.record(
            compose(&id, &a)?.mapping() == a.mapping()
                && compose(&a, &id)?.mapping() == a.mapping(),
            || format!("trial {t}: identity"),
        );
        rep.record(compose(&a, &a.inverse())?.is_identity(), || {
            format!("trial {t}: inverse")
        });
        let data: Vec<f64> = (0..n * 2)
            .map(|_| rng.random_range(-9i32..10) as f64)
            .collect();
        let m = Matrix::from_column_major(n, 2, data)?;
        rep.record(
            apply_rows(&ab, &m)? == apply_rows(&a, &apply_rows(&b, &m)?)?,
            || format!("trial {t}: action law"),
        );
        if n <= 7 {
            let count = enumerate_subgroup(n, &r)?.count();
            let order = factorial(n - r.len());
            rep.record(count == order, || {
                format!("trial {t}: enumerated {count}, expected {order}")
            });
        }
    }
    Ok(rep)
}

fn random_integer_design(n: usize, p: usize, rng: &mut StreamRng) -> Result<(Vec<f64>, Matrix)> {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2i32..=2) as f64).collect();
        let data: Vec<f64> = (0..n * p)
            .map(|_| rng.random_range(-2i32..=2) as f64)
            .collect();
        let z = Matrix::from_column_major(n, p, data)?;
        if numerical_rank(&z)?.numerical_rank == p
            && DesignContext::new(&x, &z, RankTolerance::default()).is_ok()
        {
            return Ok((x, z));
        }
    }
}

fn all_subsets(n: usize) -> impl Iterator<Item = RowSet> {
    (0u32..1 << n).map(move |mask| {
        RowSet::new(n, (0..n).filter(|i| mask >> i & 1 == 1)).expect("indices below n")
    })
}

/// Over every `(R, k)` with `n ≤ 6`: `μ_R ≥ μ_{R∪{k}}`, and safety `≥ α`
/// forces a zero α-quantile.
pub fn check_rank_monotonicity(seed: u64) -> Result<CheckReport> {
    let alpha = 0.05;
    let mut rep = CheckReport::new("rank monotonicity and zero quantile");
    let mut rng = substream(seed, &[tag::VERIFY, 2]);
    let mut designs = Vec::new();
    for _ in 0..10 {
        let n = rng.random_range(5..=6usize);
        let p = rng.random_range(1..=2usize);
        designs.push(random_integer_design(n, p, &mut rng)?);
    }
    for (n, p) in [(5, 2), (6, 2), (6, 3)] {
        let d = paired_design(n, p)?;
        designs.push((d.x, d.z));
    }
    for (di, (x, z)) in designs.iter().enumerate() {
        let n = x.len();
        let dists: Vec<_> = all_subsets(n)
            .map(|r| exact_distribution(x, z, &r))
            .collect::<Result<_>>()?;
        for (mask, dist) in dists.iter().enumerate() {
            let safety = dist.safety();
            if safety >= alpha {
                let q = dist.d_quantile(alpha);
                rep.record(q == 0.0, || {
                    format!("design {di}, mask {mask:#b}: safety {safety} but quantile {q}")
                });
            }
            for k in (0..n).filter(|k| mask >> k & 1 == 0) {
                let (mu, mu_k) = (dist.mu(), dists[mask | 1 << k].mu());
                rep.record(mu >= mu_k - 1e-12, || {
                    format!("design {di}, mask {mask:#b}, k {k}: mu {mu} < {mu_k}")
                });
            }
        }
    }
    Ok(rep)
}

/// Paired designs, `R = {i}` with `i` in the target rows: exact safety at
/// least `(p−1)/(n−1)`, and at least `p/(n−1)` for the last target row.
pub fn check_shield_bound() -> Result<CheckReport> {
    let mut rep = CheckReport::new("single-row shield bound");
    for n in [6, 7, 8] {
        for p in [2, 3] {
            let d = paired_design(n, p)?;
            for i in 1..=p + 1 {
                let safety = exact_distribution(&d.x, &d.z, &RowSet::new(n, [i])?)?.safety();
                let bound = if i == p + 1 { p } else { p - 1 } as f64 / (n - 1) as f64;
                rep.record(safety >= bound - 1e-12, || {
                    format!("n {n}, p {p}, R {{{}}}: safety {safety} < {bound}", i + 1)
                });
            }
        }
    }
    Ok(rep)
}

fn random_float_design(n: usize, p: usize, rng: &mut StreamRng) -> Result<(Vec<f64>, Matrix)> {
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z = Matrix::from_column_major(
        n,
        p,
        (0..n * p).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    Ok((x, z))
}

/// Monte Carlo estimates against exact enumeration on random toy instances.
/// Means and probabilities must sit within three standard errors; the
/// quantile is checked through the exact CDF and must be exact when the
/// CDF jumps across `α` by more than the band.
pub fn check_oracle_equivalence(instances: usize, m: usize, seed: u64) -> Result<CheckReport> {
    let alpha = 0.05;
    let mut rep = CheckReport::new("oracle equivalence");
    let mut rng = substream(seed, &[tag::VERIFY, 3]);
    let band = 3.0 * (alpha * (1.0 - alpha) / m as f64).sqrt();
    for inst in 0..instances {
        let n = rng.random_range(5..=7usize);
        let p = rng.random_range(1..=2usize);
        let (x, z) = match inst % 3 {
            0 => random_float_design(n, p, &mut rng)?,
            1 => random_integer_design(n, p, &mut rng)?,
            _ => {
                let d = paired_design(n, p)?;
                (d.x, d.z)
            }
        };
        let r = random_rowset(n, 0.2, &mut rng);
        let dist = exact_distribution(&x, &z, &r)?;
        let est = estimate_all(&x, &z, &r, alpha, m, rng.random())?;

        let ranks: Vec<f64> = dist.elements.iter().map(|e| e.rank as f64).collect();
        let mu = dist.mu();
        let var = ranks.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / ranks.len() as f64;
        let mu_band = 3.0 * (var / m as f64).sqrt() + 1e-12;
        rep.record((est.mu_rank - mu).abs() <= mu_band, || {
            format!(
                "instance {inst}: mu {} vs exact {mu} (band {mu_band})",
                est.mu_rank
            )
        });

        let s = dist.safety();
        let s_band = 3.0 * (s * (1.0 - s) / m as f64).sqrt() + 1e-12;
        rep.record((est.safety_prob - s).abs() <= s_band, || {
            format!(
                "instance {inst}: safety {} vs exact {s} (band {s_band})",
                est.safety_prob
            )
        });

        let q = est.d_quantile;
        let slack = 1e-9 * (1.0 + q.abs());
        let (upper, lower) = (dist.d_cdf(q + slack), dist.d_cdf_below(q - slack));
        rep.record(upper >= alpha - band && lower <= alpha + band, || {
            format!("instance {inst}: quantile {q} has exact cdf [{lower}, {upper}]")
        });
        let q_exact = dist.d_quantile(alpha);
        let qs = 1e-9 * (1.0 + q_exact.abs());
        if dist.d_cdf_below(q_exact - qs) < alpha - band && dist.d_cdf(q_exact + qs) > alpha + band
        {
            rep.record((q - q_exact).abs() <= qs, || {
                format!("instance {inst}: quantile {q} differs from atom {q_exact}")
            });
        }
    }
    Ok(rep)
}

/// `T_{i,0} − T_{0,i} = g − β² D` at `Y = Xβ + ε` on random tuples.
pub fn check_g_identity(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("g identity");
    let mut rng = substream(seed, &[tag::VERIFY, 4]);
    for t in 0..trials {
        let (x, z) = match t % 4 {
            3 => {
                let p = rng.random_range(1..=4usize);
                let n = rng.random_range(p + 2..=12);
                let d = paired_design(n, p)?;
                (d.x, d.z)
            }
            2 => {
                let n = rng.random_range(5..=12usize);
                random_integer_design(n, rng.random_range(1..=3usize), &mut rng)?
            }
            _ => {
                let n = rng.random_range(5..=20usize);
                random_float_design(n, rng.random_range(1..=4usize), &mut rng)?
            }
        };
        let n = x.len();
        let r = random_rowset(n, 0.25, &mut rng);
        let perm = sample_restricted(n, &r, &mut rng)?;
        let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let beta = 3.0 * rng.sample::<f64, _>(StandardNormal);
        let y: Vec<f64> = x.iter().zip(&eps).map(|(a, e)| beta * a + e).collect();
        let stat = paired_f(&perm, &x, &z, &y)?;
        let g = g_function(&perm, &eps, &x, &z, beta)?;
        let d = d_value_direct(&x, &z, perm.mapping(), RankTolerance::default())?;
        let lhs = stat.t_perm_null - stat.t_perm_alt;
        let rhs = g - beta * beta * d;
        rep.record((lhs - rhs).abs() <= 1e-8 * (1.0 + g.abs()), || {
            format!("trial {t}: lhs {lhs}, g − β²D {rhs}")
        });
    }
    Ok(rep)
}

/// A statistic that ignores the permutations; it breaks transferability.
pub fn broken_statistic(
    _: &RestrictedPermutation,
    _: &RestrictedPermutation,
    _: &[f64],
    _: &Matrix,
    eps: &[f64],
) -> Result<f64> {
    Ok(eps[0] * eps[0])
}

/// The paired F-statistic must pass and [`broken_statistic`] must fail.
pub fn check_transferability_gate(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("transferability gate");
    let paired: &StatFn<'_> = &paired_f_general;
    let broken: &StatFn<'_> = &broken_statistic;
    let pass = check_transferability(paired, trials, &mut substream(seed, &[tag::VERIFY, 5]))?;
    rep.record(pass, || "paired F-statistic failed".to_string());
    let fail = check_transferability(broken, trials, &mut substream(seed, &[tag::VERIFY, 6]))?;
    rep.record(!fail, || "broken statistic passed".to_string());
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_laws_hold() {
        assert!(check_group_laws(50, 4).unwrap().passed());
    }

    #[test]
    fn shield_bound_holds() {
        let rep = check_shield_bound().unwrap();
        assert_eq!(rep.cases, 21);
        assert!(rep.passed(), "{:?}", rep.details);
    }

    #[test]
    fn g_identity_small() {
        let rep = check_g_identity(100, 2).unwrap();
        assert!(rep.passed(), "{:?}", rep.details);
    }

    #[test]
    fn report_counts_violations() {
        let mut rep = CheckReport::new("x");
        for i in 0..20 {
            rep.record(i % 2 == 0, || format!("{i}"));
        }
        assert_eq!(
            (rep.cases, rep.violations, rep.details.len()),
            (20, 10, MAX_DETAILS)
        );
        assert!(!rep.passed());
        assert!(!CheckReport::new("empty").passed());
    }
}
