//! Shared numerical kernel for permutation-augmented bases.
//!
//! Everything here works in coordinates of the orthogonal complement of
//! `C(Z)`: for a fixed design the QR of `Z` is computed once and every
//! permuted basis `(P X, Z, P Z)` reduces to `complement(P X, P Z)`.
//!
//! Greedy sweeps evaluate every candidate row `k` against common base draws.
//! For a base draw `π` fixing `R`, the candidate draw fixing `R ∪ {k}` swaps
//! the rows `j = π⁻¹(k)` and `k` of `P A`, a rank-one change. Per-candidate
//! work is quadratic in `p`.

use crate::error::{Error, Result};
use crate::linalg::{dot, factor, numerical_rank_with, sq_norm, Matrix, PivotedQr, RankTolerance};

/// Residual norms at or below this fraction of the reference norm count as
/// exact membership in a column space.
pub const COLLINEAR_REL: f64 = 1e-6;

/// Relative gap used by the rank-one update when deciding whether an update
/// direction lies in a column or row space.
const DECISION_REL: f64 = 1e-6;

#[inline]
pub(crate) fn snap_sq(value: f64, reference_sq: f64) -> f64 {
    if value <= COLLINEAR_REL * COLLINEAR_REL * reference_sq {
        0.0
    } else {
        value
    }
}

/// Design-level precomputation shared by every draw.
#[derive(Clone, Debug)]
pub struct DesignContext {
    n: usize,
    p: usize,
    x: Vec<f64>,
    z: Matrix,
    a: Matrix,
    tol: RankTolerance,
    abs_tol: f64,
    x_sq: f64,
    z_qr: PivotedQr,
    x_tilde: Vec<f64>,
    e_tilde: Option<Matrix>,
    gram: Option<Vec<f64>>,
}

impl DesignContext {
    pub fn new(x: &[f64], z: &Matrix, tol: RankTolerance) -> Result<Self> {
        let n = z.rows();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                context: "covariate length",
                expected: n,
                found: x.len(),
            });
        }
        if !z.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        let p = z.cols();
        let a = Matrix::column_vector(x)?;
        let a = Matrix::hstack(&[&a, z])?;
        let abs_tol = tol.threshold(n, 2 * p + 1, a.max_column_norm());
        let z_qr = PivotedQr::new(z, abs_tol);
        let x_tilde = z_qr.complement(x);
        let x_sq = sq_norm(x);
        if snap_sq(sq_norm(&x_tilde), x_sq) == 0.0 {
            return Err(Error::Unidentifiable);
        }
        Ok(Self {
            n,
            p,
            x: x.to_vec(),
            z: z.clone(),
            a,
            tol,
            abs_tol,
            x_sq,
            z_qr,
            x_tilde,
            e_tilde: None,
            gram: None,
        })
    }

    /// Adds the complement images of the unit vectors, needed by augmentation sweeps.
    pub fn with_unit_images(mut self) -> Self {
        if self.e_tilde.is_some() {
            return self;
        }
        let m = self.m();
        let mut e = Matrix::zeros(m, self.n);
        let mut buf = vec![0.0; self.n];
        for i in 0..self.n {
            buf.iter_mut().for_each(|v| *v = 0.0);
            buf[i] = 1.0;
            self.z_qr.apply_qt(&mut buf);
            e.column_mut(i).copy_from_slice(&buf[self.z_qr.rank()..]);
        }
        let mut gram = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in i..self.n {
                let g = dot(e.column(i), e.column(j));
                gram[i * self.n + j] = g;
                gram[j * self.n + i] = g;
            }
        }
        self.e_tilde = Some(e);
        self.gram = Some(gram);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn tolerance(&self) -> RankTolerance {
        self.tol
    }

    /// Dimension of the complement of `C(Z)`.
    pub fn m(&self) -> usize {
        self.n - self.z_qr.rank()
    }

    pub fn z_rank(&self) -> usize {
        self.z_qr.rank()
    }

    pub fn x_sq_norm(&self) -> f64 {
        self.x_sq
    }

    pub fn complement(&self, v: &[f64]) -> Vec<f64> {
        self.z_qr.complement(v)
    }

    fn permuted_complement(&self, col: &[f64], mapping: &[usize]) -> Vec<f64> {
        let mut v: Vec<f64> = mapping.iter().map(|&s| col[s]).collect();
        self.z_qr.apply_qt(&mut v);
        v.split_off(self.z_qr.rank())
    }

    /// QR of `complement(P Z)`, the part of `C(Z, P Z)` outside `C(Z)`.
    pub(crate) fn shield_qr(&self, mapping: &[usize]) -> PivotedQr {
        let m = self.m();
        let mut data = Vec::with_capacity(m * self.p);
        for c in 0..self.p {
            data.extend(self.permuted_complement(self.z.column(c), mapping));
        }
        PivotedQr::from_column_major(m, self.p, data, self.abs_tol)
    }

    /// `X ∈ C(Z, P Z)`.
    pub fn safety_event(&self, mapping: &[usize]) -> bool {
        let qr = self.shield_qr(mapping);
        snap_sq(qr.residual_sq_norm(&self.x_tilde), self.x_sq) == 0.0
    }

    /// `‖(I − H_{PX, Z, PZ}) X‖²`.
    pub fn d_value(&self, mapping: &[usize]) -> f64 {
        let qr = self.augmented_qr(mapping);
        snap_sq(qr.residual_sq_norm(&self.x_tilde), self.x_sq)
    }

    fn augmented_qr(&self, mapping: &[usize]) -> PivotedQr {
        let m = self.m();
        let mut data = Vec::with_capacity(m * (self.p + 1));
        for c in 0..=self.p {
            data.extend(self.permuted_complement(self.a.column(c), mapping));
        }
        PivotedQr::from_column_major(m, self.p + 1, data, self.abs_tol)
    }

    /// `rank(Z − P Z)` by pivoted QR.
    pub fn difference_rank(&self, mapping: &[usize]) -> usize {
        RankBase::new(self, mapping).rank
    }

    pub(crate) fn difference(&self, mapping: &[usize]) -> Matrix {
        let n = self.n;
        let mut data = Vec::with_capacity(n * self.p);
        for c in 0..self.p {
            let col = self.z.column(c);
            data.extend((0..n).map(|i| col[i] - col[mapping[i]]));
        }
        Matrix::from_parts(n, self.p, data)
    }

    /// `rank(Z − P Z)` by SVD, the reference definition.
    pub fn difference_rank_svd(&self, mapping: &[usize]) -> usize {
        numerical_rank_with(&self.difference(mapping), self.tol)
            .map(|r| r.numerical_rank)
            .unwrap_or(0)
    }
}

fn explicit_q1(qr: &PivotedQr) -> Matrix {
    let rows = qr.rows();
    let s = qr.rank();
    let mut q1 = Matrix::zeros(rows, s);
    for t in 0..s {
        let col = q1.column_mut(t);
        col[t] = 1.0;
        qr.apply_q(col);
    }
    q1
}

fn inverse_mapping(mapping: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; mapping.len()];
    for (i, &m) in mapping.iter().enumerate() {
        inv[m] = i;
    }
    inv
}

#[inline]
fn in_row_space(sol: &crate::linalg::RowSpaceSolve) -> bool {
    sol.residual <= DECISION_REL * sol.scale
}

/// Base draw for rank sweeps: factorization of `Z − P Z`.
pub(crate) struct RankBase {
    mapping: Vec<usize>,
    inv: Vec<usize>,
    qr: PivotedQr,
    q1: Matrix,
    pub(crate) rank: usize,
}

impl RankBase {
    pub(crate) fn new(ctx: &DesignContext, mapping: &[usize]) -> Self {
        let b = ctx.difference(mapping);
        let t = ctx.tol.threshold(b.rows(), b.cols(), b.max_column_norm());
        let qr = PivotedQr::new(&b, t);
        let q1 = explicit_q1(&qr);
        Self {
            mapping: mapping.to_vec(),
            inv: inverse_mapping(mapping),
            rank: qr.rank(),
            qr,
            q1,
        }
    }

    /// `rank(Z − P' Z)` for the draw that additionally fixes row `k`.
    pub(crate) fn candidate(&self, ctx: &DesignContext, k: usize) -> usize {
        let j = self.inv[k];
        if j == k {
            return self.rank;
        }
        let r = self.rank;
        let mut a_sq = 0.0;
        let mut a = vec![0.0; r];
        for (t, at) in a.iter_mut().enumerate() {
            let col = self.q1.column(t);
            *at = col[k] - col[j];
            a_sq += *at * *at;
        }
        let tail_sq = (2.0 - a_sq).max(0.0);
        let in_col = tail_sq <= DECISION_REL * DECISION_REL * 2.0;
        let src = self.mapping[k];
        let d: Vec<f64> = (0..ctx.p)
            .map(|c| {
                let col = ctx.z.column(c);
                col[src] - col[k]
            })
            .collect();
        let sol = self.qr.solve_rowspace(&d);
        let in_row = in_row_space(&sol);
        match (in_col, in_row) {
            (false, false) => r + 1,
            (true, true) => {
                let ga = dot(&sol.coeffs, &a);
                let gn = sq_norm(&sol.coeffs).sqrt() * a_sq.sqrt();
                if (1.0 + ga).abs() <= DECISION_REL * (1.0 + gn) {
                    r - 1
                } else {
                    r
                }
            }
            _ => r,
        }
    }
}

/// Base draw for quantile sweeps: factorization of `complement(P X, P Z)`.
pub(crate) struct AugmentBase {
    mapping: Vec<usize>,
    inv: Vec<usize>,
    qr: PivotedQr,
    xi: Vec<f64>,
    rx_sq: f64,
    f: Matrix,
    c: Vec<f64>,
    pub(crate) d: f64,
}

impl AugmentBase {
    /// `ctx` must carry unit images (see [`DesignContext::with_unit_images`]).
    pub(crate) fn new(ctx: &DesignContext, mapping: &[usize]) -> Self {
        let e = ctx.e_tilde.as_ref().expect("unit images prepared");
        let qr = ctx.augmented_qr(mapping);
        let s = qr.rank();
        let m = ctx.m();
        let mut v = ctx.x_tilde.clone();
        qr.apply_qt(&mut v);
        let xi = v[..s].to_vec();
        let rx_sq = sq_norm(&v[s..]);
        let mut rx = v;
        rx[..s].iter_mut().for_each(|t| *t = 0.0);
        qr.apply_q(&mut rx);
        let q1 = explicit_q1(&qr);
        let mut f = Matrix::zeros(s, ctx.n);
        for i in 0..ctx.n {
            let ei = e.column(i);
            for t in 0..s {
                f.set(t, i, dot(q1.column(t), ei));
            }
        }
        let c = (0..ctx.n).map(|i| dot(e.column(i), &rx)).collect();
        debug_assert_eq!(rx.len(), m);
        Self {
            mapping: mapping.to_vec(),
            inv: inverse_mapping(mapping),
            d: snap_sq(rx_sq, ctx.x_sq),
            qr,
            xi,
            rx_sq,
            f,
            c,
        }
    }

    /// `D` for the draw that additionally fixes row `k`.
    pub(crate) fn candidate(&self, ctx: &DesignContext, k: usize) -> f64 {
        let j = self.inv[k];
        if j == k {
            return self.d;
        }
        let gram = ctx.gram.as_ref().expect("unit images prepared");
        let n = ctx.n;
        let w_sq = gram[j * n + j] + gram[k * n + k] - 2.0 * gram[j * n + k];
        if w_sq <= DECISION_REL * DECISION_REL * 2.0 {
            return self.d;
        }
        let s = self.qr.rank();
        let u: Vec<f64> = (0..s)
            .map(|t| self.f.get(t, j) - self.f.get(t, k))
            .collect();
        let rho_sq = (w_sq - sq_norm(&u)).max(0.0);
        let src = self.mapping[k];
        let d: Vec<f64> = (0..=ctx.p)
            .map(|col| {
                let a = ctx.a.column(col);
                a[src] - a[k]
            })
            .collect();
        let sol = self.qr.solve_rowspace(&d);
        let in_row = in_row_space(&sol);
        let value = if rho_sq > DECISION_REL * DECISION_REL * w_sq {
            let rho = rho_sq.sqrt();
            let eta = (self.c[j] - self.c[k]) / rho;
            let e0 = (self.rx_sq - eta * eta).max(0.0);
            if in_row {
                let g1 = &sol.coeffs;
                let g2 = (-1.0 - dot(&u, g1)) / rho;
                let num = dot(g1, &self.xi) + g2 * eta;
                e0 + num * num / (sq_norm(g1) + g2 * g2)
            } else {
                e0
            }
        } else if in_row {
            let g = &sol.coeffs;
            let gu = dot(g, &u);
            let gn = sq_norm(g).sqrt() * sq_norm(&u).sqrt();
            if (1.0 + gu).abs() <= DECISION_REL * (1.0 + gn) {
                let num = dot(g, &self.xi);
                self.rx_sq + num * num / sq_norm(g)
            } else {
                self.rx_sq
            }
        } else {
            self.rx_sq
        };
        snap_sq(value, ctx.x_sq)
    }
}

/// Direct reference for `D`: pivoted QR of the full `(P X, Z, P Z)` basis.
pub fn d_value_direct(x: &[f64], z: &Matrix, mapping: &[usize], tol: RankTolerance) -> Result<f64> {
    let px: Vec<f64> = mapping.iter().map(|&s| x[s]).collect();
    let pz = crate::perm::gather_rows(mapping, z);
    let basis = Matrix::hstack(&[&Matrix::column_vector(&px)?, z, &pz])?;
    let r = factor(&basis, tol).residual_sq_norm(x);
    Ok(snap_sq(r, sq_norm(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::{sample_restricted, RowSet};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn swapped(mapping: &[usize], k: usize) -> Vec<usize> {
        let inv = inverse_mapping(mapping);
        let j = inv[k];
        let mut out = mapping.to_vec();
        out.swap(j, k);
        out
    }

    fn paired(n: usize, p: usize) -> (Vec<f64>, Matrix) {
        let mut x = vec![0.0; n];
        x[0] = 1.0;
        x[p + 1] = 1.0;
        let mut z = Matrix::zeros(n, p);
        for k in 0..p {
            z.set(k + 1, k, 1.0);
            z.set(p + 1, k, 1.0);
        }
        (x, z)
    }

    fn random_design(kind: u8, n: usize, p: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Matrix) {
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            match kind {
                0 => rng.sample(StandardNormal),
                1 => {
                    if rng.random::<f64>() < 0.8 {
                        0.0
                    } else {
                        rng.sample(StandardNormal)
                    }
                }
                _ => rng.random_range(-2i32..=2) as f64,
            }
        };
        let x = (0..n).map(|_| draw(rng)).collect();
        let z = Matrix::from_column_major(n, p, (0..n * p).map(|_| draw(rng)).collect()).unwrap();
        (x, z)
    }

    fn check_design(x: &[f64], z: &Matrix, r: &RowSet, rng: &mut ChaCha8Rng, draws: usize) {
        let Ok(ctx) = DesignContext::new(x, z, RankTolerance::default()) else {
            return;
        };
        let ctx = ctx.with_unit_images();
        let n = ctx.n();
        for _ in 0..draws {
            let pi = sample_restricted(n, r, rng).unwrap();
            let m = pi.mapping();
            let rb = RankBase::new(&ctx, m);
            let ab = AugmentBase::new(&ctx, m);
            assert_eq!(rb.rank, ctx.difference_rank_svd(m));
            let direct = d_value_direct(x, z, m, RankTolerance::default()).unwrap();
            assert!(
                (ab.d - direct).abs() <= 1e-8 * (1.0 + direct),
                "{} vs {direct}",
                ab.d
            );
            for k in r.complement() {
                let mk = swapped(m, k);
                assert_eq!(
                    rb.candidate(&ctx, k),
                    ctx.difference_rank_svd(&mk),
                    "rank k={k}"
                );
                let fast = ab.candidate(&ctx, k);
                let direct = d_value_direct(x, z, &mk, RankTolerance::default()).unwrap();
                assert!(
                    (fast - direct).abs() <= 1e-8 * (1.0 + direct),
                    "k={k}: fast {fast} vs direct {direct}"
                );
            }
        }
    }

    #[test]
    fn unidentifiable_design_is_rejected() {
        let z = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![0.0]]).unwrap();
        assert!(matches!(
            DesignContext::new(&[2.0, 4.0, 0.0], &z, RankTolerance::default()),
            Err(Error::Unidentifiable)
        ));
    }

    #[test]
    fn paired_design_shield_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (n, p) in [(8, 2), (10, 3), (20, 5)] {
            let (x, z) = paired(n, p);
            check_design(&x, &z, &RowSet::empty(n), &mut rng, 20);
            check_design(&x, &z, &RowSet::new(n, [p + 1]).unwrap(), &mut rng, 20);
            check_design(&x, &z, &RowSet::new(n, 1..=p + 1).unwrap(), &mut rng, 5);
        }
    }

    #[test]
    fn paired_collinearity_literal() {
        // swapping rows 1 and k+1 puts X in C(P X, Z, P Z)
        let (x, z) = paired(8, 2);
        let ctx = DesignContext::new(&x, &z, RankTolerance::default()).unwrap();
        let mut m: Vec<usize> = (0..8).collect();
        m.swap(0, 1);
        assert_eq!(ctx.d_value(&m), 0.0);
        assert!(ctx.safety_event(&m));
        let id: Vec<usize> = (0..8).collect();
        assert_eq!(ctx.d_value(&id), 0.0);
        assert!(!ctx.safety_event(&id));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rank_one_updates_match_direct(seed in any::<u64>(), kind in 0u8..3, n in 5usize..14, p in 1usize..4, nfix in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = p.min(n - 3);
            let (x, z) = random_design(kind, n, p, &mut rng);
            let fixed: Vec<usize> = (0..nfix).map(|_| rng.random_range(0..n)).collect();
            let mut fixed = fixed;
            fixed.sort_unstable();
            fixed.dedup();
            let r = RowSet::new(n, fixed).unwrap();
            check_design(&x, &z, &r, &mut rng, 4);
        }
    }
}
