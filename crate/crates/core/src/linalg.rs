//! Small dense linear algebra for two-column problems.
//!
//! Everything the safety QP and the excitation diagnostics need lives on
//! `R²`: constraint normals are 2-vectors, active constraint matrices are
//! `K×2`, and parameter Grams are at most `2×2`. The SVD is therefore done in
//! closed form from the `2×2` Gram matrix rather than with a general solver.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative rank tolerance on `σ₂/σ₁`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the planar cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction, or `None` for (near-)zero input.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-300).then(|| self / n)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn to_dvector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.x, self.y])
    }

    /// Reads the first two entries of a column vector.
    pub fn from_column(v: &DVector<f64>) -> Vec2 {
        Vec2::new(v[0], v[1])
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

/// Counterclockwise quarter turn.
pub fn rot90(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// A `K×2` matrix stored as its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MatK2 {
    rows: Vec<Vec2>,
}

impl MatK2 {
    pub fn from_rows(rows: Vec<Vec2>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DimensionMismatch(
                "K×2 matrix needs at least one row".into(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec2] {
        &self.rows
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(v)).collect()
    }

    /// `Aᵀ y` for `y ∈ R^K`.
    pub fn tr_mul(&self, y: &[f64]) -> Vec2 {
        self.rows
            .iter()
            .zip(y)
            .fold(Vec2::ZERO, |acc, (r, &yi)| acc + *r * yi)
    }

    /// Upper triangle `(p, q, r)` of `AᵀA = [[p, q], [q, r]]`.
    pub fn gram(&self) -> (f64, f64, f64) {
        self.rows.iter().fold((0.0, 0.0, 0.0), |(p, q, r), a| {
            (p + a.x * a.x, q + a.x * a.y, r + a.y * a.y)
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.rows.iter().map(|r| r.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k(), 2, |i, j| {
            if j == 0 {
                self.rows[i].x
            } else {
                self.rows[i].y
            }
        })
    }
}

/// Thin SVD `A = U Σ Vᵀ` of a `K×2` matrix.
///
/// `u_cols` holds the first `min(K, 2)` columns of `U`. For a zero matrix the
/// singular values are `(0, 0)` and `V` is the identity; callers must check
/// `sigma[0]` before trusting `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdK2 {
    pub u_cols: Vec<Vec<f64>>,
    pub sigma: [f64; 2],
    pub v1: Vec2,
    pub v2: Vec2,
}

impl SvdK2 {
    pub fn reconstruct(&self) -> Vec<Vec2> {
        let k = self.u_cols[0].len();
        (0..k)
            .map(|i| {
                let mut row = self.v1 * (self.sigma[0] * self.u_cols[0][i]);
                if let Some(u2) = self.u_cols.get(1) {
                    row += self.v2 * (self.sigma[1] * u2[i]);
                }
                row
            })
            .collect()
    }
}

fn unit_basis(k: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; k];
    e[i] = 1.0;
    e
}

fn norm_k(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A unit vector in `R^K` orthogonal to the unit vector `u`.
fn orthogonal_complement(u: &[f64]) -> Vec<f64> {
    let k = u.len();
    let pivot = (0..k)
        .min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()))
        .unwrap_or(0);
    let mut e = unit_basis(k, pivot);
    let proj = u[pivot];
    for (ei, ui) in e.iter_mut().zip(u) {
        *ei -= proj * ui;
    }
    let n = norm_k(&e);
    e.iter_mut().for_each(|x| *x /= n);
    e
}

pub fn svd_k2(a: &MatK2) -> SvdK2 {
    let k = a.k();
    let (p, q, r) = a.gram();
    if p + r == 0.0 {
        let mut u_cols = vec![unit_basis(k, 0)];
        if k >= 2 {
            u_cols.push(unit_basis(k, 1));
        }
        return SvdK2 {
            u_cols,
            sigma: [0.0, 0.0],
            v1: Vec2::new(1.0, 0.0),
            v2: Vec2::new(0.0, 1.0),
        };
    }

    // Jacobi angle of the dominant eigenvector of AᵀA.
    let angle = 0.5 * (2.0 * q).atan2(p - r);
    let mut v1 = Vec2::new(angle.cos(), angle.sin());
    let mut v2 = rot90(v1);
    let mut av1 = a.mul_vec(v1);
    let mut av2 = a.mul_vec(v2);
    let mut s1 = norm_k(&av1);
    let mut s2 = norm_k(&av2);
    if s2 > s1 {
        std::mem::swap(&mut av1, &mut av2);
        std::mem::swap(&mut s1, &mut s2);
        v1 = v2;
        v2 = rot90(v1);
        // v2 is now -old_v1, flip its image to match
        av2.iter_mut().for_each(|x| *x = -*x);
    }

    let u1: Vec<f64> = av1.iter().map(|x| x / s1).collect();
    let mut u_cols = vec![u1];
    if k >= 2 {
        let u1 = &u_cols[0];
        let u2 = if s2 > f64::EPSILON * s1 {
            let along: f64 = u1.iter().zip(&av2).map(|(a, b)| a * b).sum();
            let mut w: Vec<f64> = av2.iter().zip(u1).map(|(b, a)| b - along * a).collect();
            let n = norm_k(&w);
            if n > 0.0 {
                w.iter_mut().for_each(|x| *x /= n);
                w
            } else {
                orthogonal_complement(u1)
            }
        } else {
            orthogonal_complement(u1)
        };
        u_cols.push(u2);
    } else {
        // a single row has only one singular value
        s2 = 0.0;
    }

    SvdK2 {
        u_cols,
        sigma: [s1, s2],
        v1,
        v2,
    }
}

/// Moore-Penrose pseudoinverse of a `K×2` matrix, stored as its `K` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvK2 {
    cols: Vec<Vec2>,
}

impl PinvK2 {
    pub fn cols(&self) -> &[Vec2] {
        &self.cols
    }

    /// `A† b`.
    pub fn apply(&self, b: &[f64]) -> Vec2 {
        self.cols
            .iter()
            .zip(b)
            .fold(Vec2::ZERO, |acc, (c, &bi)| acc + *c * bi)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2, self.cols.len(), |i, j| {
            if i == 0 {
                self.cols[j].x
            } else {
                self.cols[j].y
            }
        })
    }
}

/// Pseudoinverse with singular values below `rank_tol · σ_max` truncated.
pub fn pinv_k2(a: &MatK2, rank_tol: f64) -> PinvK2 {
    let svd = svd_k2(a);
    let k = a.k();
    let mut cols = vec![Vec2::ZERO; k];
    let cutoff = rank_tol * svd.sigma[0];
    let pairs = [(svd.v1, 0usize), (svd.v2, 1usize)];
    for (v, idx) in pairs {
        let s = svd.sigma[idx];
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let Some(u) = svd.u_cols.get(idx) else {
            continue;
        };
        for (col, &uj) in cols.iter_mut().zip(u) {
            *col += v * (uj / s);
        }
    }
    PinvK2 { cols }
}

/// Symmetric `p×p` matrix for `p ∈ {1, 2}`, upper triangle only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SymP {
    One(f64),
    Two { a11: f64, a12: f64, a22: f64 },
}

impl SymP {
    pub fn zeros(p: usize) -> Result<Self> {
        match p {
            1 => Ok(SymP::One(0.0)),
            2 => Ok(SymP::Two {
                a11: 0.0,
                a12: 0.0,
                a22: 0.0,
            }),
            _ => Err(Error::DimensionMismatch(format!(
                "symmetric matrix dimension {p} not in {{1, 2}}"
            ))),
        }
    }

    pub fn scaled_identity(p: usize, s: f64) -> Result<Self> {
        Ok(match SymP::zeros(p)? {
            SymP::One(_) => SymP::One(s),
            SymP::Two { .. } => SymP::Two {
                a11: s,
                a12: 0.0,
                a22: s,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            SymP::One(_) => 1,
            SymP::Two { .. } => 2,
        }
    }

    /// `WᵀW` for a matrix with `p` columns.
    pub fn gram_of(w: &DMatrix<f64>) -> Result<Self> {
        let p = w.ncols();
        match p {
            1 => Ok(SymP::One(w.column(0).norm_squared())),
            2 => Ok(SymP::Two {
                a11: w.column(0).norm_squared(),
                a12: w.column(0).dot(&w.column(1)),
                a22: w.column(1).norm_squared(),
            }),
            _ => Err(Error::DimensionMismatch(format!(
                "gram of a matrix with {p} columns"
            ))),
        }
    }

    /// `self + s · other`; dimensions must agree.
    pub fn add_scaled(&self, other: &SymP, s: f64) -> Result<Self> {
        match (self, other) {
            (SymP::One(a), SymP::One(b)) => Ok(SymP::One(a + s * b)),
            (
                SymP::Two { a11, a12, a22 },
                SymP::Two {
                    a11: b11,
                    a12: b12,
                    a22: b22,
                },
            ) => Ok(SymP::Two {
                a11: a11 + s * b11,
                a12: a12 + s * b12,
                a22: a22 + s * b22,
            }),
            _ => Err(Error::DimensionMismatch(
                "symmetric matrices of different size".into(),
            )),
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match *self {
            SymP::One(a) => DVector::from_element(1, a * v[0]),
            SymP::Two { a11, a12, a22 } => {
                DVector::from_column_slice(&[a11 * v[0] + a12 * v[1], a12 * v[0] + a22 * v[1]])
            }
        }
    }

    /// `vᵀ S v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.mul_vec(v))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        match *self {
            SymP::One(a) => DMatrix::from_element(1, 1, a),
            SymP::Two { a11, a12, a22 } => DMatrix::from_row_slice(2, 2, &[a11, a12, a12, a22]),
        }
    }

    /// Symmetrizes a square `p×p` matrix into upper-triangle storage.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        match (m.nrows(), m.ncols()) {
            (1, 1) => Ok(SymP::One(m[(0, 0)])),
            (2, 2) => Ok(SymP::Two {
                a11: m[(0, 0)],
                a12: 0.5 * (m[(0, 1)] + m[(1, 0)]),
                a22: m[(1, 1)],
            }),
            (r, c) => Err(Error::DimensionMismatch(format!(
                "{r}×{c} is not a supported symmetric matrix"
            ))),
        }
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            SymP::One(a) => a.is_finite(),
            SymP::Two { a11, a12, a22 } => a11.is_finite() && a12.is_finite() && a22.is_finite(),
        }
    }
}

/// Smallest eigenvalue, `(tr − √(tr² − 4 det)) / 2` in the 2×2 case.
pub fn min_eig_sym(q: &SymP) -> f64 {
    match *q {
        SymP::One(a) => a,
        SymP::Two { a11, a12, a22 } => {
            // hypot form of the discriminant avoids cancellation in tr² − 4det
            0.5 * (a11 + a22) - (0.5 * (a11 - a22)).hypot(a12)
        }
    }
}

/// Largest eigenvalue of a [`SymP`].
pub fn max_eig_sym(q: &SymP) -> f64 {
    match *q {
        SymP::One(a) => a,
        SymP::Two { a11, a12, a22 } => 0.5 * (a11 + a22) + (0.5 * (a11 - a22)).hypot(a12),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, k: usize) -> MatK2 {
        MatK2::from_rows(
            (0..k)
                .map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rot90_examples() {
        assert_eq!(rot90(Vec2::new(1.0, 0.0)), Vec2::new(0.0, 1.0));
        assert_eq!(rot90(Vec2::new(0.0, 1.0)), Vec2::new(-1.0, 0.0));
        let r = rot90(Vec2::new(3.0, 4.0));
        assert_eq!(r, Vec2::new(-4.0, 3.0));
        assert_eq!(r.norm(), 5.0);
    }

    #[test]
    fn svd_single_row_is_diagonal() {
        let a = MatK2::from_rows(vec![Vec2::new(0.5, 0.0)]).unwrap();
        let s = svd_k2(&a);
        assert_eq!(s.sigma, [0.5, 0.0]);
        assert_eq!(s.v1, Vec2::new(1.0, 0.0));
        assert_eq!(s.v2, Vec2::new(0.0, 1.0));
        assert_eq!(s.u_cols, vec![vec![1.0]]);
    }

    #[test]
    fn svd_stacked_rank_one() {
        let a = MatK2::from_rows(vec![Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)]).unwrap();
        let s = svd_k2(&a);
        assert!((s.sigma[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(s.sigma[1].abs() < 1e-15);
        // completed U is still orthonormal
        let dot: f64 = s.u_cols[0].iter().zip(&s.u_cols[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-15);
    }

    #[test]
    fn svd_zero_matrix_convention() {
        let a = MatK2::from_rows(vec![Vec2::ZERO, Vec2::ZERO, Vec2::ZERO]).unwrap();
        let s = svd_k2(&a);
        assert_eq!(s.sigma, [0.0, 0.0]);
        assert_eq!(s.v1, Vec2::new(1.0, 0.0));
        assert_eq!(s.v2, Vec2::new(0.0, 1.0));
    }

    /// Eigenvalues of AᵀA from the characteristic polynomial, independent of
    /// the Jacobi-angle route used by `svd_k2`.
    fn gram_eigs_oracle(a: &MatK2) -> (f64, f64) {
        let (p, q, r) = a.gram();
        let tr = p + r;
        let det = p * r - q * q;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        ((tr + disc) / 2.0, (tr - disc) / 2.0)
    }

    #[test]
    fn svd_random_matches_gram_eigenvalues_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let k = rng.random_range(1..=8);
            let a = random_mat(&mut rng, k);
            let s = svd_k2(&a);
            let (l1, l2) = gram_eigs_oracle(&a);
            let scale = a.frobenius().max(1.0);
            assert!((s.sigma[0] * s.sigma[0] - l1).abs() < 1e-10 * scale * scale);
            if k >= 2 {
                assert!((s.sigma[1] * s.sigma[1] - l2).abs() < 1e-10 * scale * scale);
            }
            let rec = s.reconstruct();
            let err: f64 = rec
                .iter()
                .zip(a.rows())
                .map(|(r, a)| (*r - *a).norm_sq())
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-10 * scale, "reconstruction error {err}");
            assert!(s.v1.dot(s.v2).abs() < 1e-12);
            assert!((s.v1.norm() - 1.0).abs() < 1e-12);
            assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= 0.0);
        }
    }

    #[test]
    fn pinv_identity_and_scalar() {
        let a = MatK2::from_rows(vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]).unwrap();
        let p = pinv_k2(&a, DEFAULT_RANK_TOL);
        let m = p.to_dmatrix();
        assert!((m - DMatrix::<f64>::identity(2, 2)).norm() < 1e-15);

        let a = MatK2::from_rows(vec![Vec2::new(2.0, 0.0)]).unwrap();
        let p = pinv_k2(&a, DEFAULT_RANK_TOL);
        assert_eq!(p.apply(&[3.0]), Vec2::new(1.5, 0.0));
    }

    #[test]
    fn pinv_consistent_overdetermined_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_mat(&mut rng, 3);
            let u_true = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let b = a.mul_vec(u_true);
            // oracle: Cramer's rule on the first two rows
            let (r0, r1) = (a.rows()[0], a.rows()[1]);
            let det = r0.cross(r1);
            if det.abs() < 1e-3 {
                continue;
            }
            let direct = Vec2::new((b[0] * r1.y - b[1] * r0.y) / det, (r0.x * b[1] - r1.x * b[0]) / det);
            let via_pinv = pinv_k2(&a, DEFAULT_RANK_TOL).apply(&b);
            assert!((direct - via_pinv).norm() < 1e-9);
            assert!((direct - u_true).norm() < 1e-9);
        }
    }

    #[test]
    fn min_eig_examples() {
        let d = SymP::Two {
            a11: 2.0,
            a12: 0.0,
            a22: 3.0,
        };
        assert_eq!(min_eig_sym(&d), 2.0);
        let ones = SymP::Two {
            a11: 1.0,
            a12: 1.0,
            a22: 1.0,
        };
        assert!(min_eig_sym(&ones).abs() < 1e-15);
        assert_eq!(min_eig_sym(&SymP::One(0.25)), 0.25);
    }

    /// Power iteration on `σI − Q` yields `σ − λ_min`.
    fn power_iteration_min_eig(q: &DMatrix<f64>) -> f64 {
        let shift = q.norm() + 1.0;
        let m = DMatrix::<f64>::identity(2, 2) * shift - q;
        let mut v = DVector::from_column_slice(&[1.0, 0.3]);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = &m * &v;
            lambda = v.dot(&w) / v.dot(&v);
            v = &w / w.norm();
        }
        shift - lambda
    }

    #[test]
    fn min_eig_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let q = w.transpose() * &w;
            let sym = SymP::from_dmatrix(&q).unwrap();
            let oracle = power_iteration_min_eig(&q);
            assert!((min_eig_sym(&sym) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn symp_dimension_errors() {
        assert!(SymP::zeros(3).is_err());
        assert!(SymP::One(1.0)
            .add_scaled(&SymP::zeros(2).unwrap(), 1.0)
            .is_err());
        assert!(MatK2::from_rows(vec![]).is_err());
    }
}
