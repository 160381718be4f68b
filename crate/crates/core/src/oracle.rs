//! Exact reference computations by full subgroup enumeration.
//!
//! Integer-valued designs use fraction-free integer elimination for every
//! rank decision. Other designs use the floating-point kernel with the
//! default tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{d_value_direct, snap_sq};
use crate::linalg::{
    factor, in_column_space_with, numerical_rank_with, sq_norm, Matrix, RankTolerance,
};
use crate::perm::{enumerate_subgroup, gather_rows, RestrictedPermutation, RowSet};
use crate::rowselect::{quantile_rank, SelectionCriteria};

/// Rank by fraction-free elimination over the integers.
pub fn exact_integer_rank(m: &Matrix) -> Result<usize> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a: Vec<Vec<i128>> = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut row = Vec::with_capacity(cols);
        for j in 0..cols {
            let v = m.get(i, j);
            if v.fract() != 0.0 || v.abs() > 1e15 {
                return Err(Error::NonInteger(v));
            }
            row.push(v as i128);
        }
        a.push(row);
    }
    let mut rank = 0;
    let mut prev: i128 = 1;
    for c in 0..cols {
        let Some(piv) = (rank..rows).find(|&r| a[r][c] != 0) else {
            continue;
        };
        a.swap(rank, piv);
        for r in rank + 1..rows {
            for cc in c + 1..cols {
                let lhs = a[rank][c]
                    .checked_mul(a[r][cc])
                    .ok_or(Error::ExactOverflow)?;
                let rhs = a[r][c]
                    .checked_mul(a[rank][cc])
                    .ok_or(Error::ExactOverflow)?;
                a[r][cc] = lhs.checked_sub(rhs).ok_or(Error::ExactOverflow)? / prev;
            }
            a[r][c] = 0;
        }
        prev = a[rank][c];
        rank += 1;
        if rank == rows {
            break;
        }
    }
    Ok(rank)
}

fn is_integer(v: &[f64]) -> bool {
    v.iter().all(|x| x.fract() == 0.0 && x.abs() <= 1e15)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    ExactInteger,
    Float,
}

/// Per-element criteria for one permutation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementValues {
    pub rank: usize,
    pub safety: bool,
    pub d: f64,
}

struct Evaluator<'a> {
    x: &'a [f64],
    z: &'a Matrix,
    xm: Matrix,
    arithmetic: Arithmetic,
    tol: RankTolerance,
}

impl<'a> Evaluator<'a> {
    fn new(x: &'a [f64], z: &'a Matrix) -> Result<Self> {
        if x.len() != z.rows() {
            return Err(Error::DimensionMismatch {
                context: "covariate length",
                expected: z.rows(),
                found: x.len(),
            });
        }
        let xm = Matrix::column_vector(x)?;
        let arithmetic = if is_integer(x) && is_integer(z.data()) {
            Arithmetic::ExactInteger
        } else {
            Arithmetic::Float
        };
        let ev = Self {
            x,
            z,
            xm,
            arithmetic,
            tol: RankTolerance::default(),
        };
        if ev.contains(z, x)? {
            return Err(Error::Unidentifiable);
        }
        Ok(ev)
    }

    fn rank(&self, m: &Matrix) -> Result<usize> {
        match self.arithmetic {
            Arithmetic::ExactInteger => exact_integer_rank(m),
            Arithmetic::Float => Ok(numerical_rank_with(m, self.tol)?.numerical_rank),
        }
    }

    fn contains(&self, basis: &Matrix, v: &[f64]) -> Result<bool> {
        match self.arithmetic {
            Arithmetic::ExactInteger => Ok(self.rank(basis)? == self.rank(&basis.with_column(v)?)?),
            Arithmetic::Float => in_column_space_with(v, basis, self.tol),
        }
    }

    fn element(&self, mapping: &[usize]) -> Result<ElementValues> {
        let pz = gather_rows(mapping, self.z);
        let rank = self.rank(&self.z.sub(&pz)?)?;
        let shield = Matrix::hstack(&[self.z, &pz])?;
        let safety = self.contains(&shield, self.x)?;
        let d = match self.arithmetic {
            Arithmetic::ExactInteger => {
                let px = gather_rows(mapping, &self.xm);
                let basis = Matrix::hstack(&[&px, self.z, &pz])?;
                if self.contains(&basis, self.x)? {
                    0.0
                } else {
                    factor(&basis, self.tol).residual_sq_norm(self.x)
                }
            }
            Arithmetic::Float => d_value_direct(self.x, self.z, mapping, self.tol)?,
        };
        Ok(ElementValues { rank, safety, d })
    }
}

/// Exact law of the criteria over the subgroup fixing `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    pub arithmetic: Arithmetic,
    pub elements: Vec<ElementValues>,
    sorted_d: Vec<f64>,
}

impl ExactDistribution {
    pub fn group_size(&self) -> usize {
        self.elements.len()
    }

    pub fn mu(&self) -> f64 {
        self.elements.iter().map(|e| e.rank as f64).sum::<f64>() / self.group_size() as f64
    }

    pub fn safety(&self) -> f64 {
        self.elements.iter().filter(|e| e.safety).count() as f64 / self.group_size() as f64
    }

    /// Smallest `v` with `pr(D ≤ v) ≥ α`.
    pub fn d_quantile(&self, alpha: f64) -> f64 {
        self.sorted_d[quantile_rank(alpha, self.sorted_d.len()) - 1]
    }

    /// `pr(D ≤ v)`.
    pub fn d_cdf(&self, v: f64) -> f64 {
        self.sorted_d.partition_point(|&d| d <= v) as f64 / self.group_size() as f64
    }

    /// `pr(D < v)`.
    pub fn d_cdf_below(&self, v: f64) -> f64 {
        self.sorted_d.partition_point(|&d| d < v) as f64 / self.group_size() as f64
    }
}

pub fn exact_distribution(x: &[f64], z: &Matrix, r: &RowSet) -> Result<ExactDistribution> {
    let ev = Evaluator::new(x, z)?;
    let elements = enumerate_subgroup(z.rows(), r)?
        .map(|p| ev.element(p.mapping()))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted_d: Vec<f64> = elements.iter().map(|e| e.d).collect();
    sorted_d.sort_by(f64::total_cmp);
    Ok(ExactDistribution {
        arithmetic: ev.arithmetic,
        elements,
        sorted_d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactEstimates {
    pub mu_exact: f64,
    pub safety_exact: f64,
    pub d_quantile_exact: f64,
    pub group_size: usize,
}

pub fn exact_estimates(x: &[f64], z: &Matrix, r: &RowSet, alpha: f64) -> Result<ExactEstimates> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let dist = exact_distribution(x, z, r)?;
    Ok(ExactEstimates {
        mu_exact: dist.mu(),
        safety_exact: dist.safety(),
        d_quantile_exact: dist.d_quantile(alpha),
        group_size: dist.group_size(),
    })
}

/// Enumeration-backed criteria for the greedy search at toy scale.
pub struct ExactCriteria<'a> {
    x: &'a [f64],
    z: &'a Matrix,
    alpha: f64,
}

impl<'a> ExactCriteria<'a> {
    pub fn new(x: &'a [f64], z: &'a Matrix, alpha: f64) -> Result<Self> {
        Evaluator::new(x, z)?;
        Ok(Self { x, z, alpha })
    }
}

impl SelectionCriteria for ExactCriteria<'_> {
    fn n(&self) -> usize {
        self.z.rows()
    }

    fn p(&self) -> usize {
        self.z.cols()
    }

    fn safety(&self, r: &RowSet, _step: usize) -> Result<f64> {
        Ok(exact_distribution(self.x, self.z, r)?.safety())
    }

    fn mu_sweep(&self, r: &RowSet, candidates: &[usize], _step: usize) -> Result<Vec<f64>> {
        candidates
            .iter()
            .map(|&k| Ok(exact_distribution(self.x, self.z, &r.with(k)?)?.mu()))
            .collect()
    }

    fn quantile_sweep(
        &self,
        r: &RowSet,
        candidates: &[usize],
        _step: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let base = exact_distribution(self.x, self.z, r)?.d_quantile(self.alpha);
        let qs = candidates
            .iter()
            .map(|&k| Ok(exact_distribution(self.x, self.z, &r.with(k)?)?.d_quantile(self.alpha)))
            .collect::<Result<Vec<_>>>()?;
        Ok((base, qs))
    }
}

fn residual_vector(basis: &Matrix, v: &[f64]) -> Vec<f64> {
    let qr = factor(basis, RankTolerance::default());
    let mut w = v.to_vec();
    qr.apply_qt(&mut w);
    w[..qr.rank()].iter_mut().for_each(|t| *t = 0.0);
    qr.apply_q(&mut w);
    w
}

/// `g = ‖(I − H_{X,Z,PZ}) ε‖² − ‖(I − H_{PX,Z,PZ}) ε‖² − 2β Xᵀ(I − H_{PX,Z,PZ}) ε`.
pub fn g_function(
    perm: &RestrictedPermutation,
    eps: &[f64],
    x: &[f64],
    z: &Matrix,
    beta: f64,
) -> Result<f64> {
    let n = z.rows();
    for (len, context) in [
        (x.len(), "covariate length"),
        (eps.len(), "noise length"),
        (perm.n(), "permutation length"),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                found: len,
            });
        }
    }
    let xm = Matrix::column_vector(x)?;
    let pz = gather_rows(perm.mapping(), z);
    let px = gather_rows(perm.mapping(), &xm);
    let null_basis = Matrix::hstack(&[&xm, z, &pz])?;
    let alt_basis = Matrix::hstack(&[&px, z, &pz])?;
    let r1 = residual_vector(&null_basis, eps);
    let r2 = residual_vector(&alt_basis, eps);
    let cross: f64 = x.iter().zip(&r2).map(|(a, b)| a * b).sum();
    Ok(sq_norm(&r1) - sq_norm(&r2) - 2.0 * beta * cross)
}

/// Subset of `[n]` with at most `max_size` rows maximizing the exact
/// `α`-quantile of `D_R`; ties go to the lexicographically smallest set.
pub fn exhaustive_rowset_search(
    x: &[f64],
    z: &Matrix,
    alpha: f64,
    max_size: usize,
) -> Result<(RowSet, f64)> {
    let n = z.rows();
    if n > 9 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search is limited to n <= 9, got {n}"
        )));
    }
    Evaluator::new(x, z)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(set) = stack.pop() {
        let r = RowSet::new(n, set.iter().copied())?;
        let q = exact_distribution(x, z, &r)?.d_quantile(alpha);
        let replace = match &best {
            None => true,
            Some((_, bq)) => q > bq + 1e-9 * q.abs().max(bq.abs()),
        };
        if replace {
            best = Some((set.clone(), q));
        }
        if set.len() < max_size {
            let start = set.last().map_or(0, |l| l + 1);
            for next in (start..n).rev() {
                let mut child = set.clone();
                child.push(next);
                stack.push(child);
            }
        }
    }
    let (set, q) = best.expect("the empty set is always visited");
    Ok((RowSet::new(n, set)?, q))
}

/// `pr` of the collinearity event `X ∈ C(PX, Z, PZ)` over the subgroup fixing `r`.
pub fn exact_collinearity(x: &[f64], z: &Matrix, r: &RowSet) -> Result<f64> {
    let dist = exact_distribution(x, z, r)?;
    let zero = dist
        .elements
        .iter()
        .filter(|e| snap_sq(e.d, sq_norm(x)) == 0.0)
        .count();
    Ok(zero as f64 / dist.group_size() as f64)
}
