//! Dense linear algebra: column-space projections, residual norms and
//! numerical rank.
//!
//! Matrices are stored column-major. Projections go through a Householder
//! QR with column pivoting that stops as soon as the largest remaining
//! column norm drops below an absolute threshold. Rank-deficient bases
//! project onto the detected rank only.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS: f64 = f64::EPSILON;

/// Rank threshold rule: `factor * max(rows, cols) * eps * scale`, where
/// `scale` is the largest singular value (or, for pivoted QR, the largest
/// column norm of the matrix being factored).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    pub factor: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self { factor: 1.0 }
    }
}

impl RankTolerance {
    pub fn new(factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance factor must be positive, got {factor}"
            )));
        }
        Ok(Self { factor })
    }

    pub fn threshold(&self, rows: usize, cols: usize, scale: f64) -> f64 {
        self.factor * rows.max(cols) as f64 * EPS * scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from column-major data.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidArgument(
                "matrix needs at least one row".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "matrix needs at least one row".into(),
            ));
        }
        let cols = rows[0].len();
        let mut data = vec![0.0; n * cols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row length",
                    expected: cols,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                data[j * n + i] = v;
            }
        }
        Self::from_column_major(n, cols, data)
    }

    pub fn from_columns(rows: usize, columns: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    context: "matrix column length",
                    expected: rows,
                    found: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Self::from_column_major(rows, columns.len(), data)
    }

    pub fn column_vector(v: &[f64]) -> Result<Self> {
        Self::from_column_major(v.len(), 1, v.to_vec())
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates blocks side by side.
    pub fn hstack(parts: &[&Matrix]) -> Result<Self> {
        let rows = parts
            .first()
            .map(|m| m.rows)
            .ok_or_else(|| Error::InvalidArgument("hstack needs at least one block".into()))?;
        let mut data = Vec::with_capacity(rows * parts.iter().map(|m| m.cols).sum::<usize>());
        for m in parts {
            if m.rows != rows {
                return Err(Error::DimensionMismatch {
                    context: "hstack rows",
                    expected: rows,
                    found: m.rows,
                });
            }
            data.extend_from_slice(&m.data);
        }
        let cols = data.len() / rows;
        Ok(Self::from_parts(rows, cols, data))
    }

    /// Copy of `self` with `v` appended as a final column.
    pub fn with_column(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "appended column",
                expected: self.rows,
                found: v.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + self.rows);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(v);
        Ok(Self::from_parts(self.rows, self.cols + 1, data))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix difference",
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    pub fn scale_column(&mut self, j: usize, s: f64) {
        for v in self.column_mut(j) {
            *v *= s;
        }
    }

    pub fn max_column_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| norm(self.column(j)))
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    sq_norm(a).sqrt()
}

/// Outcome of solving `Π Rᵀ g = d` against the leading `rank` rows of a
/// pivoted QR factor: `coeffs` solves the triangular part exactly and
/// `residual` is the norm of the equations left over.
#[derive(Clone, Debug)]
pub struct RowSpaceSolve {
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub scale: f64,
}

/// Householder QR with column pivoting, truncated at the numerical rank.
#[derive(Clone, Debug)]
pub struct PivotedQr {
    rows: usize,
    cols: usize,
    qr: Vec<f64>,
    tau: Vec<f64>,
    pivots: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &Matrix, tol_abs: f64) -> Self {
        Self::from_column_major(a.rows, a.cols, a.data.clone(), tol_abs)
    }

    /// Factors column-major `data` in place. Columns whose remaining norm
    /// is at or below `tol_abs` are treated as linearly dependent.
    pub fn from_column_major(rows: usize, cols: usize, mut qr: Vec<f64>, tol_abs: f64) -> Self {
        debug_assert_eq!(qr.len(), rows * cols);
        let mut pivots: Vec<usize> = (0..cols).collect();
        let mut vn1: Vec<f64> = (0..cols)
            .map(|j| norm(&qr[j * rows..(j + 1) * rows]))
            .collect();
        let mut vn2 = vn1.clone();
        let kmax = rows.min(cols);
        let mut tau = Vec::with_capacity(kmax);
        let recompute_below = EPS.sqrt();

        for k in 0..kmax {
            let mut pvt = k;
            for j in k + 1..cols {
                if vn1[j] > vn1[pvt] {
                    pvt = j;
                }
            }
            if vn1[pvt] <= tol_abs {
                break;
            }
            if pvt != k {
                for i in 0..rows {
                    qr.swap(k * rows + i, pvt * rows + i);
                }
                pivots.swap(k, pvt);
                vn1.swap(k, pvt);
                vn2.swap(k, pvt);
            }

            let (head, tail) = qr.split_at_mut((k + 1) * rows);
            let x = &mut head[k * rows + k..(k + 1) * rows];
            let xnorm = norm(x);
            if xnorm <= tol_abs {
                break;
            }
            let alpha = x[0];
            let beta = if alpha >= 0.0 { -xnorm } else { xnorm };
            let t = (beta - alpha) / beta;
            let inv = 1.0 / (alpha - beta);
            for v in x[1..].iter_mut() {
                *v *= inv;
            }
            x[0] = beta;
            tau.push(t);
            let h = &x[1..];

            for j in k + 1..cols {
                let col = &mut tail[(j - k - 1) * rows..(j - k) * rows];
                let (ck, below) = col[k..].split_first_mut().expect("row k exists");
                let s = t * (*ck + dot(h, below));
                *ck -= s;
                for (b, hv) in below.iter_mut().zip(h) {
                    *b -= s * hv;
                }
            }

            for j in k + 1..cols {
                if vn1[j] != 0.0 {
                    let r = qr[j * rows + k].abs() / vn1[j];
                    let temp = (1.0 - r * r).max(0.0);
                    let ratio = vn1[j] / vn2[j];
                    if temp * ratio * ratio <= recompute_below {
                        vn1[j] = norm(&qr[j * rows + k + 1..(j + 1) * rows]);
                        vn2[j] = vn1[j];
                    } else {
                        vn1[j] *= temp.sqrt();
                    }
                }
            }
        }
        let rank = tau.len();
        Self {
            rows,
            cols,
            qr,
            tau,
            pivots,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column order chosen by pivoting: position `t` holds original column `pivots()[t]`.
    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// Entry of R in pivoted column order; valid for `i < rank`, `i <= j`.
    #[inline]
    pub fn r(&self, i: usize, j: usize) -> f64 {
        self.qr[j * self.rows + i]
    }

    /// Overwrites `v` with `Qᵀ v`. The first `rank` entries are coordinates in
    /// the column space; the rest are coordinates in its orthogonal complement.
    pub fn apply_qt(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        let rows = self.rows;
        for (k, &t) in self.tau.iter().enumerate() {
            let h = &self.qr[k * rows + k + 1..(k + 1) * rows];
            let (vk, below) = v[k..].split_first_mut().expect("row k exists");
            let s = t * (*vk + dot(h, below));
            *vk -= s;
            for (b, hv) in below.iter_mut().zip(h) {
                *b -= s * hv;
            }
        }
    }

    /// Overwrites `v` with `Q v`.
    pub fn apply_q(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        let rows = self.rows;
        for (k, &t) in self.tau.iter().enumerate().rev() {
            let h = &self.qr[k * rows + k + 1..(k + 1) * rows];
            let (vk, below) = v[k..].split_first_mut().expect("row k exists");
            let s = t * (*vk + dot(h, below));
            *vk -= s;
            for (b, hv) in below.iter_mut().zip(h) {
                *b -= s * hv;
            }
        }
    }

    /// Coordinates of `v` in the orthogonal complement of the column space.
    pub fn complement(&self, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        self.apply_qt(&mut w);
        w.split_off(self.rank)
    }

    pub fn residual_sq_norm(&self, v: &[f64]) -> f64 {
        let mut w = v.to_vec();
        self.apply_qt(&mut w);
        sq_norm(&w[self.rank..])
    }

    pub fn projection_sq_norm(&self, v: &[f64]) -> f64 {
        let mut w = v.to_vec();
        self.apply_qt(&mut w);
        sq_norm(&w[..self.rank])
    }

    /// Solves `Π Rᵀ g = d` on the leading triangular block and reports how
    /// far the remaining equations are from being satisfied. `d` is indexed
    /// by original column.
    pub fn solve_rowspace(&self, d: &[f64]) -> RowSpaceSolve {
        debug_assert_eq!(d.len(), self.cols);
        let r = self.rank;
        let t: Vec<f64> = self.pivots.iter().map(|&c| d[c]).collect();
        let mut g = vec![0.0; r];
        let mut rmax: f64 = 0.0;
        for i in 0..r {
            let mut s = t[i];
            for (l, gl) in g.iter().enumerate().take(i) {
                s -= self.r(l, i) * gl;
            }
            g[i] = s / self.r(i, i);
            rmax = rmax.max(self.r(i, i).abs());
        }
        let mut res2 = 0.0;
        for (j, tj) in t.iter().enumerate().skip(r) {
            let mut s = *tj;
            for (l, gl) in g.iter().enumerate() {
                let rl = self.r(l, j);
                rmax = rmax.max(rl.abs());
                s -= rl * gl;
            }
            res2 += s * s;
        }
        RowSpaceSolve {
            scale: norm(&t) + rmax * norm(&g),
            coeffs: g,
            residual: res2.sqrt(),
        }
    }
}

fn check_vector(v: &[f64], rows: usize, context: &'static str) -> Result<()> {
    if v.len() != rows {
        return Err(Error::DimensionMismatch {
            context,
            expected: rows,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(context));
    }
    Ok(())
}

/// Pivoted QR of `basis` with the threshold scaled by its largest column norm.
pub fn factor(basis: &Matrix, tol: RankTolerance) -> PivotedQr {
    let t = tol.threshold(basis.rows, basis.cols, basis.max_column_norm());
    PivotedQr::new(basis, t)
}

/// `‖(I − H_basis) v‖²`.
pub fn residual_sq_norm(basis: &Matrix, v: &[f64]) -> Result<f64> {
    residual_sq_norm_with(basis, v, RankTolerance::default())
}

pub fn residual_sq_norm_with(basis: &Matrix, v: &[f64], tol: RankTolerance) -> Result<f64> {
    check_vector(v, basis.rows, "residual vector")?;
    if !basis.is_finite() {
        return Err(Error::NonFinite("basis"));
    }
    if basis.cols == 0 {
        return Ok(sq_norm(v));
    }
    Ok(factor(basis, tol).residual_sq_norm(v))
}

/// `‖H_basis v‖²`.
pub fn projection_sq_norm(basis: &Matrix, v: &[f64]) -> Result<f64> {
    check_vector(v, basis.rows, "projected vector")?;
    if basis.cols == 0 {
        return Ok(0.0);
    }
    Ok(factor(basis, RankTolerance::default()).projection_sq_norm(v))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub numerical_rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance_used: f64,
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.cols == 0 {
        return Vec::new();
    }
    let dm = DMatrix::from_column_slice(m.rows, m.cols, &m.data);
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Rank as the count of singular values above `max(rows, cols) * eps * σ_max`.
pub fn numerical_rank(m: &Matrix) -> Result<RankReport> {
    numerical_rank_with(m, RankTolerance::default())
}

pub fn numerical_rank_with(m: &Matrix, tol: RankTolerance) -> Result<RankReport> {
    if !m.is_finite() {
        return Err(Error::NonFinite("rank input"));
    }
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let t = tol.threshold(m.rows, m.cols, smax);
    let numerical_rank = sv.iter().filter(|&&s| s > t).count();
    Ok(RankReport {
        numerical_rank,
        singular_values: sv,
        tolerance_used: t,
    })
}

/// Rank equality test `rank(basis) == rank([basis | candidate])`.
pub fn in_column_space(candidate: &[f64], basis: &Matrix) -> Result<bool> {
    in_column_space_with(candidate, basis, RankTolerance::default())
}

pub fn in_column_space_with(candidate: &[f64], basis: &Matrix, tol: RankTolerance) -> Result<bool> {
    check_vector(candidate, basis.rows, "candidate vector")?;
    let augmented = basis.with_column(candidate)?;
    let r0 = numerical_rank_with(basis, tol)?.numerical_rank;
    let r1 = numerical_rank_with(&augmented, tol)?.numerical_rank;
    Ok(r0 == r1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Matrix::from_column_major(rows, cols, data).unwrap()
    }

    #[test]
    fn full_space_basis_leaves_no_residual() {
        let v = [1.0, -2.0, 0.5, 3.0];
        let r = residual_sq_norm(&Matrix::identity(4), &v).unwrap();
        assert!(r.abs() < 1e-24);
    }

    #[test]
    fn empty_basis_returns_squared_norm() {
        let basis = Matrix::zeros(3, 0);
        let r = residual_sq_norm(&basis, &[1.0, 2.0, 2.0]).unwrap();
        assert_eq!(r, 9.0);
    }

    #[test]
    fn coordinate_projection() {
        let basis = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let r = residual_sq_norm(&basis, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(r, 25.0, max_relative = 1e-14);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let basis = Matrix::identity(3);
        assert!(matches!(
            residual_sq_norm(&basis, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            residual_sq_norm(&basis, &[1.0, f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(Matrix::from_rows(&[vec![1.0], vec![f64::INFINITY]]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn rank_of_trivial_matrices() {
        assert_eq!(
            numerical_rank(&Matrix::zeros(4, 3)).unwrap().numerical_rank,
            0
        );
        assert_eq!(
            numerical_rank(&Matrix::identity(3)).unwrap().numerical_rank,
            3
        );
    }

    #[test]
    fn paired_block_rank() {
        // (X, Z) for the paired design with p = 3, n = 8; rational elimination gives rank 4.
        let rows = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0; 4],
            vec![0.0; 4],
            vec![0.0; 4],
        ];
        let m = Matrix::from_rows(&rows).unwrap();
        let rep = numerical_rank(&m).unwrap();
        assert_eq!(rep.numerical_rank, 4);
        assert!(rep.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(factor(&m, RankTolerance::default()).rank(), 4);
    }

    #[test]
    fn column_space_membership() {
        let basis = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(in_column_space(basis.column(0), &basis).unwrap());
        assert!(!in_column_space(&[1.0, -1.0, 1.0], &basis).unwrap());
    }

    #[test]
    fn rank_deficient_basis_projects_on_detected_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = gaussian(10, 3, &mut rng);
        let dup = g.with_column(g.column(1)).unwrap();
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let a = residual_sq_norm(&g, &v).unwrap();
        let b = residual_sq_norm(&dup, &v).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
        assert_eq!(factor(&dup, RankTolerance::default()).rank(), 3);
    }

    #[test]
    fn rowspace_solve_detects_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gaussian(8, 3, &mut rng);
        // fourth column duplicates the first so the row space of R has dimension 3 in R^4
        let a = g.with_column(g.column(0)).unwrap();
        let qr = factor(&a, RankTolerance::default());
        assert_eq!(qr.rank(), 3);
        // d = Aᵀ c lies in the row space
        let c: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let d: Vec<f64> = (0..4).map(|j| dot(a.column(j), &c)).collect();
        let sol = qr.solve_rowspace(&d);
        assert!(sol.residual <= 1e-12 * sol.scale);
        let bad = [1.0, 0.0, 0.0, -1.0];
        let sol = qr.solve_rowspace(&bad);
        assert!(sol.residual > 1e-3);
    }

    fn exact_rank_pm1(m: &Matrix) -> usize {
        // rational elimination with i128 fraction-free pivoting
        let rows = m.rows();
        let cols = m.cols();
        let mut a: Vec<Vec<i128>> = (0..rows)
            .map(|i| (0..cols).map(|j| m.get(i, j) as i128).collect())
            .collect();
        let mut rank = 0;
        let mut prev = 1i128;
        for c in 0..cols {
            let Some(p) = (rank..rows).find(|&r| a[r][c] != 0) else {
                continue;
            };
            a.swap(rank, p);
            for r in rank + 1..rows {
                for cc in c + 1..cols {
                    a[r][cc] = (a[rank][c] * a[r][cc] - a[r][c] * a[rank][cc]) / prev;
                }
                a[r][c] = 0;
            }
            prev = a[rank][c];
            rank += 1;
            if rank == rows {
                break;
            }
        }
        rank
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residual_and_projection_split_norm(seed in any::<u64>(), rows in 3usize..20, cols in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols = cols.min(rows);
            let b = gaussian(rows, cols, &mut rng);
            let v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            let r = residual_sq_norm(&b, &v).unwrap();
            let p = projection_sq_norm(&b, &v).unwrap();
            let total = sq_norm(&v);
            prop_assert!(r >= 0.0);
            prop_assert!(((r + p) - total).abs() <= 1e-10 * total);
        }

        #[test]
        fn residual_invariant_to_column_order_and_scale(seed in any::<u64>(), rows in 4usize..20, cols in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols = cols.min(rows - 1);
            let b = gaussian(rows, cols, &mut rng);
            let v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            let base = residual_sq_norm(&b, &v).unwrap();
            let mut order: Vec<usize> = (0..cols).collect();
            order.reverse();
            let cols_ref: Vec<&[f64]> = order.iter().map(|&j| b.column(j)).collect();
            let mut shuffled = Matrix::from_columns(rows, &cols_ref).unwrap();
            for j in 0..cols {
                let s: f64 = rng.random_range(0.1..10.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                shuffled.scale_column(j, s);
            }
            let other = residual_sq_norm(&shuffled, &v).unwrap();
            prop_assert!((base - other).abs() <= 1e-8 * base.max(1e-12));
        }

        #[test]
        fn numerical_rank_matches_exact_rank_on_sign_matrices(seed in any::<u64>(), rows in 1usize..=12, cols in 1usize..=12, density in 0.1f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| if rng.random::<f64>() < density { if rng.random::<bool>() { 1.0 } else { -1.0 } } else { 0.0 })
                .collect();
            let m = Matrix::from_column_major(rows, cols, data).unwrap();
            let exact = exact_rank_pm1(&m);
            prop_assert_eq!(numerical_rank(&m).unwrap().numerical_rank, exact);
            prop_assert_eq!(factor(&m, RankTolerance::default()).rank(), exact);
        }
    }
}
