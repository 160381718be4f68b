//! Restricted permutations: the subgroup of permutations of `0..n` that fix
//! every index in a row set.
//!
//! Indices are 0-based in the API. Text output (CLI, CSV, JSON) uses 1-based
//! row numbers through [`RowSet::to_one_based`] and the `Display` impl.
//!
//! Orientation: a permutation `π` acts on a matrix as `P_π M` with
//! `(P_π)_{ij} = 1` iff `π(i) = j`, so row `i` of the result is row `π(i)`
//! of `M` (a row gather). [`compose`]`(a, b)` is the matrix product
//! `P_a P_b`, whose mapping is `i ↦ b(a(i))`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Default cap on `(n − |R|)!` for exhaustive enumeration (8!).
pub const DEFAULT_ENUMERATION_CAP: u128 = 40_320;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowSet {
    n: usize,
    members: Vec<usize>,
}

impl RowSet {
    /// Members must be distinct and below `n`; order does not matter.
    pub fn new(n: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        if let Some(&bad) = members.iter().find(|&&m| m >= n) {
            return Err(Error::InvalidRowSet(format!(
                "index {bad} out of range for n = {n}"
            )));
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRowSet("duplicate index".into()));
        }
        Ok(Self { n, members })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            members: Vec::new(),
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            members: (0..n).collect(),
        }
    }

    /// From 1-based row numbers.
    pub fn from_one_based(n: usize, rows: &[usize]) -> Result<Self> {
        if rows.contains(&0) {
            return Err(Error::InvalidRowSet("row numbers start at 1".into()));
        }
        Self::new(n, rows.iter().map(|r| r - 1))
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.members.iter().map(|m| m + 1).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    /// Indices not in the set, increasing.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n).filter(|i| !self.contains(*i)).collect()
    }

    /// `self ∪ {k}`.
    pub fn with(&self, k: usize) -> Result<Self> {
        if k >= self.n {
            return Err(Error::InvalidRowSet(format!(
                "index {k} out of range for n = {}",
                self.n
            )));
        }
        let mut members = self.members.clone();
        if let Err(pos) = members.binary_search(&k) {
            members.insert(pos, k);
        }
        Ok(Self { n: self.n, members })
    }

    /// Number of elements of the fixed-row subgroup, `(n − |R|)!`, saturating.
    pub fn group_order(&self) -> u128 {
        let free = (self.n - self.len()) as u128;
        (1..=free)
            .try_fold(1u128, |acc, k| acc.checked_mul(k))
            .unwrap_or(u128::MAX)
    }
}

impl fmt::Display for RowSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, "}}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RestrictedPermutation {
    mapping: Vec<usize>,
    fixed: RowSet,
}

impl RestrictedPermutation {
    pub fn identity(fixed: RowSet) -> Self {
        Self {
            mapping: (0..fixed.n()).collect(),
            fixed,
        }
    }

    /// Validates that `mapping` is a bijection of `0..n` fixing `fixed`.
    pub fn from_mapping(mapping: Vec<usize>, fixed: RowSet) -> Result<Self> {
        let n = mapping.len();
        if n != fixed.n() {
            return Err(Error::DimensionMismatch {
                context: "permutation length",
                expected: fixed.n(),
                found: n,
            });
        }
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(Error::InvalidPermutation(
                    "mapping is not a bijection".into(),
                ));
            }
            seen[m] = true;
        }
        if let Some(&i) = fixed.members().iter().find(|&&i| mapping[i] != i) {
            return Err(Error::InvalidPermutation(format!(
                "row {} is fixed but moved",
                i + 1
            )));
        }
        Ok(Self { mapping, fixed })
    }

    /// Unrestricted permutation (element of the full symmetric group).
    pub fn unrestricted(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        Self::from_mapping(mapping, RowSet::empty(n))
    }

    pub(crate) fn from_parts(mapping: Vec<usize>, fixed: RowSet) -> Self {
        Self { mapping, fixed }
    }

    pub fn n(&self) -> usize {
        self.mapping.len()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn fixed(&self) -> &RowSet {
        &self.fixed
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.n()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self {
            mapping: inv,
            fixed: self.fixed.clone(),
        }
    }

    /// `P_π v`: entry `i` of the result is `v[π(i)]`.
    pub fn apply_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "permuted vector",
                expected: self.n(),
                found: v.len(),
            });
        }
        Ok(self.mapping.iter().map(|&m| v[m]).collect())
    }
}

/// Uniform draw from the subgroup fixing `r`: Fisher–Yates over the free indices.
pub fn sample_restricted<R: Rng + ?Sized>(
    n: usize,
    r: &RowSet,
    rng: &mut R,
) -> Result<RestrictedPermutation> {
    if r.n() != n {
        return Err(Error::InvalidRowSet(format!(
            "row set built for n = {}, sampling for n = {n}",
            r.n()
        )));
    }
    Ok(sample_unchecked(r, &r.complement(), rng))
}

pub(crate) fn sample_unchecked<R: Rng + ?Sized>(
    r: &RowSet,
    free: &[usize],
    rng: &mut R,
) -> RestrictedPermutation {
    let mut images = free.to_vec();
    images.shuffle(rng);
    let mut mapping: Vec<usize> = (0..r.n()).collect();
    for (&src, &dst) in free.iter().zip(&images) {
        mapping[src] = dst;
    }
    RestrictedPermutation::from_parts(mapping, r.clone())
}

/// Matrix product `P_a P_b`: the mapping `i ↦ b(a(i))`.
pub fn compose(
    a: &RestrictedPermutation,
    b: &RestrictedPermutation,
) -> Result<RestrictedPermutation> {
    if a.n() != b.n() || a.fixed != b.fixed {
        return Err(Error::GroupMismatch {
            n_a: a.n(),
            n_b: b.n(),
            fixed_differ: a.fixed != b.fixed,
        });
    }
    let mapping = a.mapping.iter().map(|&ai| b.mapping[ai]).collect();
    Ok(RestrictedPermutation {
        mapping,
        fixed: a.fixed.clone(),
    })
}

/// `P_π m`: a row gather, row `i` of the result is row `π(i)` of `m`.
pub fn apply_rows(p: &RestrictedPermutation, m: &Matrix) -> Result<Matrix> {
    if m.rows() != p.n() {
        return Err(Error::DimensionMismatch {
            context: "permuted matrix rows",
            expected: p.n(),
            found: m.rows(),
        });
    }
    Ok(gather_rows(&p.mapping, m))
}

pub(crate) fn gather_rows(mapping: &[usize], m: &Matrix) -> Matrix {
    let rows = m.rows();
    let mut data = Vec::with_capacity(rows * m.cols());
    for j in 0..m.cols() {
        let col = m.column(j);
        data.extend(mapping.iter().map(|&src| col[src]));
    }
    Matrix::from_parts(rows, m.cols(), data)
}

/// Iterator over every element of the subgroup fixing `r`, in lexicographic
/// order of the images of the free indices.
pub struct SubgroupIter {
    fixed: RowSet,
    free: Vec<usize>,
    images: Vec<usize>,
    done: bool,
}

impl Iterator for SubgroupIter {
    type Item = RestrictedPermutation;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut mapping: Vec<usize> = (0..self.fixed.n()).collect();
        for (&src, &dst) in self.free.iter().zip(&self.images) {
            mapping[src] = dst;
        }
        self.done = !next_permutation(&mut self.images);
        Some(RestrictedPermutation::from_parts(
            mapping,
            self.fixed.clone(),
        ))
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len())
        .rev()
        .find(|&j| v[j] > v[i])
        .expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

pub fn enumerate_subgroup(n: usize, r: &RowSet) -> Result<SubgroupIter> {
    enumerate_subgroup_capped(n, r, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_subgroup_capped(n: usize, r: &RowSet, cap: u128) -> Result<SubgroupIter> {
    if r.n() != n {
        return Err(Error::InvalidRowSet(format!(
            "row set built for n = {}, enumerating for n = {n}",
            r.n()
        )));
    }
    let size = r.group_order();
    if size > cap {
        return Err(Error::EnumerationCap { size, cap });
    }
    let free = r.complement();
    Ok(SubgroupIter {
        fixed: r.clone(),
        images: free.clone(),
        free,
        done: false,
    })
}
