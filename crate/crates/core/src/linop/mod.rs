//! Dense complex operators and the linear algebra kernels built on them.
//!
//! Every matrix in this crate is an [`Operator`]: a square `n x n` complex
//! matrix plus optional structural [`Tags`]. Tags are verified on
//! construction and enable cheap paths for diagonal operators (SVD,
//! Hermitian eigendecomposition, inverse), which matter for the large
//! diagonal families used in certification sweeps.

mod mm;

pub use mm::{read_matrix_market, read_vector, write_matrix_market, write_vector};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance for the unitary and self-adjoint tag invariants (max-norm).
pub const TAG_TOL: f64 = 1e-12;

/// Relative invertibility cutoff: `sigma_min > INV_REL_EPS * sigma_max`.
pub const INV_REL_EPS: f64 = 1e-12;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Structural assertions carried by an operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tags {
    pub diagonal: bool,
    pub unitary: bool,
    pub self_adjoint: bool,
}

/// A dense square complex matrix with verified structural tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    entries: CMatrix,
    tags: Tags,
}

/// Singular values `sigma_1 >= ... >= sigma_n >= 0`.
///
/// Indexing through [`SingularSpectrum::sigma`] is 1-based and returns 0 past
/// the dimension, the finite-matrix reading of approximation numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` belongs to `values[i]`.
    pub vectors: CMatrix,
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn is_exactly_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == ZERO))
}

fn self_adjoint_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for j in 0..n {
        for i in 0..=j {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

fn unitary_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let g = m.adjoint() * m;
    max_abs(&(g - CMatrix::identity(n, n)))
}

/// `max |(Q*Q - I)_ij|` for a matrix with orthonormal columns.
pub fn orthonormality_error(q: &CMatrix) -> f64 {
    let k = q.ncols();
    let g = q.adjoint() * q;
    max_abs(&(g - CMatrix::identity(k, k)))
}

/// Inner product linear in the first argument, antilinear in the second.
pub fn inner(x: &CVector, y: &CVector) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a * b.conj()).sum()
}

impl Operator {
    /// Wrap a square matrix; the diagonal and self-adjoint tags are detected,
    /// the unitary tag only for diagonal matrices (use [`Operator::tagged`]
    /// to assert it for dense ones).
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::NonSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(Error::InvalidArgument("operator dimension must be positive".into()));
        }
        let diagonal = is_exactly_diagonal(&entries);
        let self_adjoint = self_adjoint_deviation(&entries) <= TAG_TOL;
        let unitary = diagonal && entries.diagonal().iter().all(|d| (d.norm() - 1.0).abs() <= TAG_TOL);
        Ok(Operator {
            entries,
            tags: Tags {
                diagonal,
                unitary,
                self_adjoint,
            },
        })
    }

    /// Wrap a matrix and assert `tags`; fails with [`Error::TagViolation`] if
    /// any requested tag does not hold.
    pub fn tagged(entries: CMatrix, tags: Tags) -> Result<Self> {
        let mut op = Operator::new(entries)?;
        if tags.diagonal && !op.tags.diagonal {
            return Err(Error::TagViolation {
                tag: "diagonal",
                deviation: f64::NAN,
            });
        }
        if tags.self_adjoint && !op.tags.self_adjoint {
            return Err(Error::TagViolation {
                tag: "selfAdjoint",
                deviation: self_adjoint_deviation(&op.entries),
            });
        }
        if tags.unitary && !op.tags.unitary {
            let dev = unitary_deviation(&op.entries);
            if dev > TAG_TOL {
                return Err(Error::TagViolation {
                    tag: "unitary",
                    deviation: dev,
                });
            }
            op.tags.unitary = true;
        }
        Ok(op)
    }

    pub fn from_diagonal(diag: &[C64]) -> Result<Self> {
        Operator::new(CMatrix::from_diagonal(&CVector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Operator::scaled_identity(n, ONE)
    }

    pub fn scaled_identity(n: usize, c: C64) -> Self {
        Operator::new(CMatrix::from_diagonal_element(n, n, c)).expect("n > 0")
    }

    pub fn zeros(n: usize) -> Self {
        Operator::new(CMatrix::zeros(n, n)).expect("n > 0")
    }

    /// Build from real entries given row by row.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Operator::new(CMatrix::from_fn(n, m, |i, j| C64::new(rows[i][j], 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn tags(&self) -> Tags {
        self.tags
    }

    /// Diagonal entries when the operator is tagged diagonal.
    pub fn diagonal_entries(&self) -> Option<Vec<C64>> {
        self.tags
            .diagonal
            .then(|| self.entries.diagonal().iter().copied().collect())
    }

    /// `Some(c)` if the operator is exactly `c * I`.
    pub fn as_scalar_identity(&self) -> Option<C64> {
        let d = self.diagonal_entries()?;
        let c = d[0];
        d.iter().all(|x| *x == c).then_some(c)
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(&self.entries * v)
    }

    /// Conjugate transpose. All three tags are invariant under the adjoint.
    pub fn adjoint(&self) -> Operator {
        Operator {
            entries: self.entries.adjoint(),
            tags: self.tags,
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        self.check_same_dim(other)?;
        Operator::new(&self.entries + &other.entries)
    }

    pub fn sub(&self, other: &Operator) -> Result<Operator> {
        self.check_same_dim(other)?;
        Operator::new(&self.entries - &other.entries)
    }

    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        self.check_same_dim(other)?;
        Operator::new(&self.entries * &other.entries)
    }

    pub fn scale(&self, c: C64) -> Operator {
        let mut op = Operator::new(&self.entries * c).expect("square");
        op.tags.unitary = self.tags.unitary && (c.norm() - 1.0).abs() <= TAG_TOL;
        op
    }

    /// `I - lambda * self`.
    pub fn identity_minus(&self, lambda: C64) -> Operator {
        let n = self.dim();
        let mut m = &self.entries * (-lambda);
        for i in 0..n {
            m[(i, i)] += ONE;
        }
        Operator::new(m).expect("square")
    }

    fn check_same_dim(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    pub fn singular_values(&self) -> SingularSpectrum {
        match self.diagonal_entries() {
            Some(d) => SingularSpectrum::new(d.iter().map(|z| z.norm()).collect()),
            None => SingularSpectrum::new(self.entries.singular_values().iter().copied().collect()),
        }
    }

    /// Spectral norm `sigma_1`.
    pub fn norm(&self) -> f64 {
        self.singular_values().largest()
    }

    /// Inverse by LU with partial pivoting, guarded by the relative cutoff
    /// `sigma_min > 1e-12 * sigma_max`.
    pub fn inverse(&self) -> Result<Operator> {
        self.inverse_checked(&self.singular_values())
    }

    /// Same as [`Operator::inverse`] with a precomputed spectrum of `self`.
    pub fn inverse_checked(&self, spectrum: &SingularSpectrum) -> Result<Operator> {
        let threshold = INV_REL_EPS * spectrum.largest();
        let sigma_min = spectrum.smallest();
        if !(sigma_min > threshold) {
            return Err(Error::NearSingular {
                sigma_min,
                threshold,
            });
        }
        if let Some(d) = self.diagonal_entries() {
            let inv: Vec<C64> = d.iter().map(|z| z.inv()).collect();
            return Operator::from_diagonal(&inv);
        }
        let inv = self.entries.clone().lu().try_inverse().ok_or(Error::NearSingular {
            sigma_min,
            threshold,
        })?;
        let mut op = Operator::new(inv)?;
        op.tags.unitary = self.tags.unitary;
        Ok(op)
    }

    /// Eigendecomposition of a self-adjoint operator.
    ///
    /// Accepts untagged input whose anti-Hermitian part is below `1e-12`
    /// relative to the largest entry; the Hermitian part is used.
    pub fn hermitian_eigs(&self) -> Result<HermitianEigen> {
        if !self.tags.self_adjoint {
            let dev = self_adjoint_deviation(&self.entries);
            if dev > TAG_TOL * max_abs(&self.entries).max(1.0) {
                return Err(Error::NotSelfAdjoint(dev));
            }
        }
        let n = self.dim();
        if let Some(d) = self.diagonal_entries() {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| d[a].re.total_cmp(&d[b].re));
            let values = idx.iter().map(|&i| d[i].re).collect();
            let mut vectors = CMatrix::zeros(n, n);
            for (col, &i) in idx.iter().enumerate() {
                vectors[(i, col)] = ONE;
            }
            return Ok(HermitianEigen { values, vectors });
        }
        let h = (&self.entries + self.entries.adjoint()) * C64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
        Ok(HermitianEigen { values, vectors })
    }

    /// Largest eigenvalue of the Hermitian part `(O + O*)/2`, without vectors.
    pub fn max_hermitian_part_eigenvalue(&self) -> f64 {
        if let Some(d) = self.diagonal_entries() {
            return d.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        }
        let h = (&self.entries + self.entries.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// All eigenvalues (with algebraic multiplicity) via a complex Schur form.
    pub fn eigenvalues(&self) -> Vec<C64> {
        if let Some(d) = self.diagonal_entries() {
            return d;
        }
        let n = self.dim();
        if n == 1 {
            return vec![self.entries[(0, 0)]];
        }
        let (_, t) = self.entries.clone().schur().unpack();
        (0..n).map(|i| t[(i, i)]).collect()
    }
}

impl SingularSpectrum {
    /// Sorts nonincreasing and clamps roundoff negatives to zero.
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in values.iter_mut() {
            if *v < 0.0 || v.is_nan() {
                *v = 0.0;
            }
        }
        values.sort_by(|a, b| b.total_cmp(a));
        SingularSpectrum { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sigma_j` for `j >= 1`, zero beyond the dimension.
    pub fn sigma(&self, j: usize) -> f64 {
        assert!(j >= 1, "singular values are 1-indexed");
        self.values.get(j - 1).copied().unwrap_or(0.0)
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn smallest(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `(sum sigma_j^p)^(1/p)`.
    pub fn schatten_norm(&self, p: f64) -> Result<f64> {
        schatten_norm(self, p)
    }
}

/// Schatten `p`-norm (quasinorm for `p < 1`) of a spectrum.
pub fn schatten_norm(s: &SingularSpectrum, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidP(p));
    }
    let top = s.largest();
    if top == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = s.values.iter().map(|v| (v / top).powf(p)).sum();
    Ok(top * sum.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn test_matrix(n: usize, seed: u64) -> CMatrix {
        // small LCG, enough for fixed unit-test inputs
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        CMatrix::from_fn(n, n, |_, _| c(next(), next()))
    }

    #[test]
    fn apply_identity_and_diagonal() {
        let v = CVector::from_vec(vec![c(3.0, 0.0), c(0.0, 4.0)]);
        assert_eq!(Operator::identity(2).apply(&v).unwrap(), v);
        let d = Operator::from_diagonal(&[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        let ones = CVector::from_element(2, ONE);
        assert_eq!(d.apply(&ones).unwrap(), CVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)]));
    }

    #[test]
    fn apply_extracts_columns() {
        let op = Operator::new(test_matrix(5, 3)).unwrap();
        for j in 0..5 {
            let mut e = CVector::zeros(5);
            e[j] = ONE;
            let col = op.apply(&e).unwrap();
            assert_eq!(col, op.entries().column(j).into_owned());
        }
    }

    #[test]
    fn apply_dimension_mismatch() {
        let err = Operator::identity(3).apply(&CVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            Operator::new(CMatrix::zeros(2, 3)),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn adjoint_cases() {
        let d = Operator::from_diagonal(&[c(0.0, 1.0)]).unwrap();
        assert_eq!(d.adjoint().entries()[(0, 0)], c(0.0, -1.0));
        let op = Operator::new(test_matrix(4, 1)).unwrap();
        assert_eq!(op.adjoint().adjoint(), op);
    }

    #[test]
    fn adjoint_of_unitary_is_inverse() {
        let q = test_matrix(6, 9).qr().q();
        let u = Operator::tagged(q, Tags { unitary: true, ..Tags::default() }).unwrap();
        let prod = u.adjoint().matmul(&u).unwrap();
        assert!(max_abs(&(prod.entries() - CMatrix::identity(6, 6))) <= 1e-12);
        assert!(u.adjoint().tags().unitary);
    }

    #[test]
    fn tag_violation_detected() {
        let err = Operator::tagged(test_matrix(3, 2), Tags { unitary: true, ..Tags::default() });
        assert!(matches!(err, Err(Error::TagViolation { tag: "unitary", .. })));
    }

    #[test]
    fn inverse_diagonal_and_nilpotent() {
        let d = Operator::from_diagonal(&[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        let inv = d.inverse().unwrap();
        assert_eq!(inv.diagonal_entries().unwrap(), vec![c(1.0, 0.0), c(0.5, 0.0)]);

        // I + N with N strictly upper triangular and N^2 = 0
        let mut n = CMatrix::zeros(3, 3);
        n[(0, 2)] = c(2.0, -1.0);
        let op = Operator::new(CMatrix::identity(3, 3) + &n).unwrap();
        let inv = op.inverse().unwrap();
        let expected = CMatrix::identity(3, 3) - &n;
        assert!(max_abs(&(inv.entries() - expected)) <= 1e-15);
    }

    #[test]
    fn inverse_residual_random() {
        let m = test_matrix(8, 5) + CMatrix::identity(8, 8) * c(3.0, 0.0);
        let op = Operator::new(m).unwrap();
        let s = op.singular_values();
        let kappa = s.largest() / s.smallest();
        let inv = op.inverse().unwrap();
        let resid = max_abs(&(op.entries() * inv.entries() - CMatrix::identity(8, 8)));
        assert!(resid <= 1e-10 * kappa, "resid {resid}");
    }

    #[test]
    fn inverse_near_singular() {
        let op = Operator::from_diagonal(&[ONE, c(1e-14, 0.0)]).unwrap();
        assert!(matches!(op.inverse(), Err(Error::NearSingular { .. })));
        let op = Operator::new(CMatrix::from_element(3, 3, ONE)).unwrap();
        assert!(matches!(op.inverse(), Err(Error::NearSingular { .. })));
    }

    #[test]
    fn singular_value_cases() {
        let d = Operator::from_diagonal(&[c(3.0, 0.0), c(1.0, 0.0), ZERO]).unwrap();
        assert_eq!(d.singular_values().values(), &[3.0, 1.0, 0.0]);

        let q = test_matrix(5, 4).qr().q();
        let s = Operator::new(q).unwrap().singular_values();
        assert!(s.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));

        let u = CVector::from_fn(4, |i, _| c(i as f64 + 1.0, 0.5));
        let v = CVector::from_fn(4, |i, _| c(0.3, -(i as f64)));
        let u = &u / C64::from(u.norm());
        let v = &v / C64::from(v.norm());
        let s = Operator::new(&u * v.adjoint()).unwrap().singular_values();
        assert!((s.sigma(1) - 1.0).abs() <= 1e-12);
        assert!(s.values()[1..].iter().all(|x| x.abs() <= 1e-12));
        assert_eq!(s.sigma(10), 0.0);
    }

    #[test]
    fn spectrum_clamps_and_sorts() {
        let s = SingularSpectrum::new(vec![1.0, -1e-18, 3.0]);
        assert_eq!(s.values(), &[3.0, 1.0, 0.0]);
    }

    #[test]
    fn schatten_cases() {
        let s = SingularSpectrum::new(vec![3.0, 1.0, 0.0]);
        assert!((schatten_norm(&s, 1.0).unwrap() - 4.0).abs() < 1e-15);
        let s = SingularSpectrum::new(vec![3.0, 4.0]);
        assert!((schatten_norm(&s, 2.0).unwrap() - 5.0).abs() < 1e-15);
        for p in [0.5, 1.0, 1.5, 2.0, 7.0] {
            let s = SingularSpectrum::new(vec![1.0; 6]);
            let expected = 6f64.powf(1.0 / p);
            assert!((schatten_norm(&s, p).unwrap() - expected).abs() < 1e-13);
        }
        assert!(matches!(schatten_norm(&s, 0.0), Err(Error::InvalidP(_))));
        assert!(matches!(schatten_norm(&s, -1.0), Err(Error::InvalidP(_))));
    }

    #[test]
    fn hermitian_eig_cases() {
        let d = Operator::from_diagonal(&[c(2.0, 0.0), c(-1.0, 0.0)]).unwrap();
        assert_eq!(d.hermitian_eigs().unwrap().values, vec![-1.0, 2.0]);

        let e = Operator::identity(4).hermitian_eigs().unwrap();
        assert_eq!(e.values, vec![1.0; 4]);
        assert!(orthonormality_error(&e.vectors) <= 1e-14);

        let w = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        let o = Operator::from_diagonal(&[w, w.conj()]).unwrap();
        let herm = Operator::new((o.entries() + o.entries().adjoint()) * c(0.5, 0.0)).unwrap();
        let top = *herm.hermitian_eigs().unwrap().values.last().unwrap();
        assert!((top - 0.7071067812).abs() < 1e-10);
        assert!((o.max_hermitian_part_eigenvalue() - 0.7071067812).abs() < 1e-10);
    }

    #[test]
    fn hermitian_eig_reconstruction() {
        let m = test_matrix(10, 8);
        let h = Operator::new((&m + m.adjoint()) * c(0.5, 0.0)).unwrap();
        let e = h.hermitian_eigs().unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(orthonormality_error(&e.vectors) <= 1e-12);
        let lam = CMatrix::from_diagonal(&CVector::from_iterator(10, e.values.iter().map(|v| c(*v, 0.0))));
        let rec = &e.vectors * lam * e.vectors.adjoint();
        assert!(max_abs(&(rec - h.entries())) <= 1e-10 * h.norm());
    }

    #[test]
    fn hermitian_eig_rejects_non_hermitian() {
        let op = Operator::new(test_matrix(3, 7)).unwrap();
        assert!(matches!(op.hermitian_eigs(), Err(Error::NotSelfAdjoint(_))));
    }

    #[test]
    fn general_eigenvalues_of_triangular() {
        let mut m = CMatrix::zeros(3, 3);
        m[(0, 0)] = c(1.0, 1.0);
        m[(1, 1)] = c(-2.0, 0.0);
        m[(2, 2)] = c(0.5, 0.0);
        m[(0, 1)] = c(4.0, 0.0);
        m[(1, 2)] = c(0.0, 3.0);
        let mut ev = Operator::new(m).unwrap().eigenvalues();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re));
        let expected = [c(-2.0, 0.0), c(0.5, 0.0), c(1.0, 1.0)];
        for (a, b) in ev.iter().zip(expected.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn scalar_identity_detection() {
        assert_eq!(Operator::scaled_identity(3, c(2.0, 0.0)).as_scalar_identity(), Some(c(2.0, 0.0)));
        assert_eq!(Operator::from_diagonal(&[ONE, c(2.0, 0.0)]).unwrap().as_scalar_identity(), None);
    }
}
