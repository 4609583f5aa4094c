//! Dense complex operator algebra over heterogeneous tensor-product spaces.
//!
//! Sites are ordered most-significant first: for the parity-gate layout
//! `[3, 3, 4]` the flat index of `|c1 c2 t>` is `c1 * 12 + c2 * 4 + t`.
//! Control levels are ordered `0, 1, r`; target levels `A, B, e, R`. The
//! computational subspace of a layout is spanned by the states whose every
//! site sits in one of its first two levels.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix = Array2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Per-site dimensions of a tensor-product space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceLayout {
    local_dims: Vec<usize>,
}

impl SpaceLayout {
    pub fn new(local_dims: Vec<usize>) -> Result<Self> {
        if local_dims.is_empty() || local_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!(
                "layout needs at least one site and nonzero dimensions, got {local_dims:?}"
            )));
        }
        Ok(Self { local_dims })
    }

    /// control 1 (0, 1, r) x control 2 (0, 1, r) x target (A, B, e, R)
    pub fn parity_gate() -> Self {
        Self { local_dims: vec![3, 3, 4] }
    }

    /// control (0, 1, r) x target (A, B, e, R)
    pub fn controlled_gate() -> Self {
        Self { local_dims: vec![3, 4] }
    }

    /// `n` two-level sites.
    pub fn qubits(n: usize) -> Self {
        Self { local_dims: vec![2; n.max(1)] }
    }

    pub fn local_dims(&self) -> &[usize] {
        &self.local_dims
    }

    pub fn n_sites(&self) -> usize {
        self.local_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.local_dims.iter().product()
    }

    /// Flat index of a product basis state given one level per site.
    pub fn index(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites(),
                found: levels.len(),
            });
        }
        let mut idx = 0;
        for (&lvl, &dim) in levels.iter().zip(&self.local_dims) {
            if lvl >= dim {
                return Err(Error::InvalidInput(format!("level {lvl} out of range for site of dimension {dim}")));
            }
            idx = idx * dim + lvl;
        }
        Ok(idx)
    }

    /// Inverse of [`SpaceLayout::index`].
    pub fn levels(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_sites()];
        for (slot, &dim) in out.iter_mut().zip(&self.local_dims).rev() {
            *slot = index % dim;
            index /= dim;
        }
        out
    }

    /// Flat indices of the computational basis, in lexicographic order of the
    /// per-site bits (site 0 most significant).
    pub fn computational_indices(&self) -> Vec<usize> {
        let n = self.n_sites();
        (0..1usize << n)
            .map(|bits| {
                let levels: Vec<usize> = (0..n).map(|s| (bits >> (n - 1 - s)) & 1).collect();
                self.index(&levels).expect("computational levels are in range")
            })
            .collect()
    }

    fn check_computational(&self) -> Result<()> {
        if self.local_dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput("every site needs two computational levels".into()));
        }
        Ok(())
    }
}

/// Square operator on the space described by `layout`.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: SpaceLayout,
    matrix: Matrix,
}

impl Operator {
    pub fn new(layout: SpaceLayout, matrix: Matrix) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: matrix.nrows() });
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self { layout: layout.clone(), matrix: Matrix::zeros((d, d)) }
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self { layout: layout.clone(), matrix: identity(d) }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self { layout: self.layout.clone(), matrix: dagger(&self.matrix) }
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diag().sum()
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self { layout: self.layout.clone(), matrix: self.matrix.mapv(|z| z * factor) }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        Ok(Self { layout: self.layout.clone(), matrix: &self.matrix + &other.matrix })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        Ok(Self { layout: self.layout.clone(), matrix: self.matrix.dot(&other.matrix) })
    }

    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        let ab = self.matrix.dot(&other.matrix);
        let ba = other.matrix.dot(&self.matrix);
        Ok(Self { layout: self.layout.clone(), matrix: ab - ba })
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.layout != self.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(StateVector { layout: self.layout.clone(), amplitudes: self.matrix.dot(&state.amplitudes) })
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_deviation(&self) -> f64 {
        hermiticity_deviation(&self.matrix)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }

    fn same_layout(&self, other: &Operator) -> Result<()> {
        if self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }
}

/// Pure state on a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    layout: SpaceLayout,
    amplitudes: Array1<C64>,
}

impl StateVector {
    pub fn new(layout: SpaceLayout, amplitudes: Array1<C64>) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch { expected: layout.total_dim(), found: amplitudes.len() });
        }
        Ok(Self { layout, amplitudes })
    }

    pub fn basis(layout: &SpaceLayout, index: usize) -> Result<Self> {
        let d = layout.total_dim();
        if index >= d {
            return Err(Error::InvalidInput(format!("basis index {index} out of range for dimension {d}")));
        }
        let mut amplitudes = Array1::zeros(d);
        amplitudes[index] = ONE;
        Ok(Self { layout: layout.clone(), amplitudes })
    }

    pub fn from_levels(layout: &SpaceLayout, levels: &[usize]) -> Result<Self> {
        Self::basis(layout, layout.index(levels)?)
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Array1<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput("cannot normalize a zero or non-finite state".into()));
        }
        Ok(Self { layout: self.layout.clone(), amplitudes: self.amplitudes.mapv(|a| a / n) })
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(self.amplitudes.iter().zip(other.amplitudes.iter()).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn to_density(&self) -> DensityOperator {
        let d = self.amplitudes.len();
        let mut m = Matrix::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                m[[i, j]] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        DensityOperator { layout: self.layout.clone(), matrix: m }
    }
}

/// Density operator on a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    layout: SpaceLayout,
    matrix: Matrix,
}

impl DensityOperator {
    pub fn new(layout: SpaceLayout, matrix: Matrix) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: matrix.nrows() });
        }
        Ok(Self { layout, matrix })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().sum().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diag().iter().map(|z| z.re).collect()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        hermiticity_deviation(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Replaces the matrix by its Hermitian part.
    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.matrix);
    }
}

pub fn identity(d: usize) -> Matrix {
    Matrix::from_diag_elem(d, ONE)
}

/// `|i><j|` on a `d`-dimensional space.
pub fn matrix_unit(d: usize, i: usize, j: usize) -> Matrix {
    let mut m = Matrix::zeros((d, d));
    m[[i, j]] = ONE;
    m
}

pub fn dagger(m: &Matrix) -> Matrix {
    m.t().mapv(|z| z.conj())
}

pub fn trace(m: &Matrix) -> C64 {
    m.diag().sum()
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermiticity_deviation(m: &Matrix) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn symmetrize(m: &mut Matrix) {
    let d = m.nrows();
    for i in 0..d {
        m[[i, i]] = C64::new(m[[i, i]].re, 0.0);
        for j in (i + 1)..d {
            let avg = (m[[i, j]] + m[[j, i]].conj()) * 0.5;
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

/// Standard Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Matrix::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// `identity ⊗ … ⊗ local_op ⊗ … ⊗ identity` with `local_op` on `site`.
pub fn embed(local_op: &Matrix, site: usize, layout: &SpaceLayout) -> Result<Operator> {
    let dims = layout.local_dims();
    if site >= dims.len() {
        return Err(Error::InvalidInput(format!("site {site} out of range for {} sites", dims.len())));
    }
    if local_op.dim() != (dims[site], dims[site]) {
        return Err(Error::DimensionMismatch { expected: dims[site], found: local_op.nrows() });
    }
    let left: usize = dims[..site].iter().product();
    let right: usize = dims[site + 1..].iter().product();
    let m = kron(&kron(&identity(left), local_op), &identity(right));
    Operator::new(layout.clone(), m)
}

/// Product of local operators, one per listed site, identity elsewhere.
pub fn embed_product(factors: &[(usize, &Matrix)], layout: &SpaceLayout) -> Result<Operator> {
    let mut out = Operator::identity(layout);
    for &(site, op) in factors {
        out = out.mul(&embed(op, site, layout)?)?;
    }
    Ok(out)
}

/// Restriction of `op` to the computational subspace of `layout`, ordered as
/// in [`SpaceLayout::computational_indices`].
pub fn project_computational(op: &Operator, layout: &SpaceLayout) -> Result<Matrix> {
    if op.layout() != layout {
        return Err(Error::LayoutMismatch);
    }
    layout.check_computational()?;
    Ok(restrict(op.matrix(), &layout.computational_indices()))
}

/// Submatrix on the listed indices.
pub fn restrict(m: &Matrix, indices: &[usize]) -> Matrix {
    let n = indices.len();
    Matrix::from_shape_fn((n, n), |(a, b)| m[[indices[a], indices[b]]])
}

/// Places `small` into a zero `d × d` matrix at the listed indices.
pub fn lift(small: &Matrix, indices: &[usize], d: usize) -> Matrix {
    let mut out = Matrix::zeros((d, d));
    for (a, &i) in indices.iter().enumerate() {
        for (b, &j) in indices.iter().enumerate() {
            out[[i, j]] = small[[a, b]];
        }
    }
    out
}

/// Eigenvalues of a Hermitian matrix, ascending. (nalgebra's solver returns
/// NaN on exactly rank-one inputs such as the identity channel's Choi matrix.)
pub fn hermitian_eigenvalues(m: &Matrix) -> Vec<f64> {
    let d = m.nrows();
    let mut h = m.clone();
    symmetrize(&mut h);
    let fm = faer::Mat::<faer::complex_native::c64>::from_fn(d, d, |i, j| faer::complex_native::c64::new(h[[i, j]].re, h[[i, j]].im));
    let mut ev: Vec<f64> = fm.selfadjoint_eigenvalues(faer::Side::Lower);
    ev.sort_by(f64::total_cmp);
    ev
}

/// Pauli matrices `I, X, Y, Z`.
pub fn pauli(index: usize) -> Matrix {
    let z = ZERO;
    let o = ONE;
    let v = match index {
        0 => [o, z, z, o],
        1 => [z, o, o, z],
        2 => [z, -I, I, z],
        3 => [o, z, z, -o],
        _ => panic!("pauli index {index} out of range"),
    };
    Matrix::from_shape_vec((2, 2), v.to_vec()).expect("2x2")
}
