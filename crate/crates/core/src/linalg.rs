//! Dense complex operators for small spin systems.
//!
//! Everything here works on square matrices of dimension `2I + 1`; the
//! simulator itself only ever uses dimension 4 (spin 3/2). Energies are
//! angular frequencies with ħ = 1, so `exp(-i H t)` is the propagator for a
//! Hamiltonian `H` in rad/s and a duration `t` in seconds.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance used when an operator is asserted to be Hermitian or unitary.
pub const STRUCTURE_TOL: f64 = 1e-12;

pub(crate) const I: C64 = C64::new(0.0, 1.0);

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Square complex matrix acting on a spin Hilbert space.
#[derive(Clone, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    /// Builds an operator from row-major entries.
    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Ok(Self(DMatrix::from_row_slice(dim, dim, entries)))
    }

    pub fn from_real_rows(dim: usize, entries: &[f64]) -> Result<Self> {
        let entries: Vec<C64> = entries.iter().map(|&x| c(x)).collect();
        Self::from_rows(dim, &entries)
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let n = values.len();
        let mut m = DMatrix::zeros(n, n);
        for (k, v) in values.iter().enumerate() {
            m[(k, k)] = *v;
        }
        Self(m)
    }

    pub fn real_diagonal(values: &[f64]) -> Self {
        let v: Vec<C64> = values.iter().map(|&x| c(x)).collect();
        Self::diagonal(&v)
    }

    pub fn from_matrix(m: DMatrix<C64>) -> Self {
        assert!(m.is_square(), "operator matrix must be square");
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.0[(row, col)] = value;
    }

    /// Row-major copy of the entries.
    pub fn to_rows(&self) -> Vec<C64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    /// `self * other * self†`.
    pub fn conjugate(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0 * self.0.adjoint())
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    /// Largest off-diagonal entry modulus.
    pub fn max_offdiag(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.0[(i, j)].norm());
                }
            }
        }
        m
    }

    pub fn diagonal_entries(&self) -> Vec<C64> {
        (0..self.dim()).map(|k| self.0[(k, k)]).collect()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint()).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn unitarity_error(&self) -> f64 {
        let n = self.dim();
        let prod = &self.0 * self.0.adjoint();
        (prod - DMatrix::<C64>::identity(n, n))
            .iter()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    /// Hermitian part `(A + A†)/2`; used to remove rounding asymmetry.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()).map(|z| z * 0.5))
    }

    /// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian operator.
    pub fn eigh(&self) -> Result<(Vec<f64>, Operator)> {
        let err = self.hermiticity_error();
        let scale = self.max_norm().max(1.0);
        if err > STRUCTURE_TOL * scale {
            return Err(Error::NotHermitian(err));
        }
        let eig = SymmetricEigen::new(self.hermitian_part().0);
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
        Ok((values, Operator(vectors)))
    }

    /// Unitary `exp(-i H t)` for Hermitian `H`.
    pub fn evolve(&self, t: f64) -> Result<Operator> {
        let (values, vectors) = self.eigh()?;
        let phases: Vec<C64> = values.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
        Ok(vectors.conjugate(&Operator::diagonal(&phases)))
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.dim();
        writeln!(f, "Operator({n}x{n})")?;
        for i in 0..n {
            let row: Vec<String> = (0..n)
                .map(|j| {
                    let z = self.0[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator(-&self.0)
    }
}

impl Add for Operator {
    type Output = Operator;
    fn add(self, rhs: Operator) -> Operator {
        Operator(self.0 + rhs.0)
    }
}

impl Sub for Operator {
    type Output = Operator;
    fn sub(self, rhs: Operator) -> Operator {
        Operator(self.0 - rhs.0)
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        Operator(self.0 * rhs.0)
    }
}

/// Angular momentum matrices `(Ix, Iy, Iz)` for spin `two_i / 2`, in the
/// `Iz` eigenbasis ordered `m = +I, ..., -I`.
pub fn spin_operators(two_i: u32) -> Result<(Operator, Operator, Operator)> {
    if two_i < 1 {
        return Err(Error::InvalidSpin(two_i));
    }
    let n = two_i as usize + 1;
    let spin = two_i as f64 / 2.0;
    let m = |k: usize| spin - k as f64;

    // I+ raises m by one, which moves one row up in this ordering.
    let mut raise = DMatrix::<C64>::zeros(n, n);
    for k in 1..n {
        let mk = m(k);
        raise[(k - 1, k)] = c((spin * (spin + 1.0) - mk * (mk + 1.0)).sqrt());
    }
    let lower = raise.adjoint();
    let ix = (&raise + &lower).map(|z| z * 0.5);
    let iy = (&raise - &lower).map(|z| z / (2.0 * I));
    let iz = DMatrix::from_fn(n, n, |i, j| if i == j { c(m(i)) } else { c(0.0) });
    Ok((Operator(ix), Operator(iy), Operator(iz)))
}

/// Magnetic quantum numbers `+I, ..., -I` for the basis used by [`spin_operators`].
pub fn magnetic_numbers(two_i: u32) -> Vec<f64> {
    let spin = two_i as f64 / 2.0;
    (0..=two_i as usize).map(|k| spin - k as f64).collect()
}

/// Hilbert-Schmidt inner product `Tr(A† B)`.
pub fn hs_overlap(a: &Operator, b: &Operator) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.0.iter().zip(b.0.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// Tensor product of two single-qubit operators.
pub fn kron(a: &Operator, b: &Operator) -> Result<Operator> {
    for op in [a, b] {
        if op.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: op.dim(),
            });
        }
    }
    Ok(Operator(a.0.kronecker(&b.0)))
}
