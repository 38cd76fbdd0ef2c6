//! Hilbert-space bookkeeping for two qubits sharing one truncated motional
//! mode.
//!
//! Basis order is `(qubit 1, qubit 2, mode)` with qubit 1 most significant.
//! Each qubit uses index 0 for `|↓⟩` and index 1 for `|↑⟩`, so the spin block
//! order is `{↓↓, ↓↑, ↑↓, ↑↑}`. The Pauli convention is `σz|↑⟩ = +|↑⟩`,
//! `σx|↓⟩ = |↑⟩`, `σ+ = |↑⟩⟨↓| = (σx + iσy)/2`.
//!
//! All Hamiltonians are expressed with `ħ = 1` in angular-frequency units.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Tolerance for asserted Hermiticity of builder outputs.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance applied when a state is accepted as normalized.
pub const NORM_TOL: f64 = 1e-6;

pub const DEFAULT_FOCK_DIM: usize = 16;

/// Shape of the composite space: two qubits and `fock_dim` motional levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceDescriptor {
    fock_dim: usize,
}

impl SpaceDescriptor {
    pub fn new(fock_dim: usize) -> Result<Self> {
        if fock_dim < 2 {
            return Err(Error::FockTooSmall(fock_dim));
        }
        Ok(Self { fock_dim })
    }

    pub const fn n_qubits(&self) -> usize {
        2
    }

    pub const fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    /// Total dimension `4 × fock_dim`.
    pub const fn dim(&self) -> usize {
        4 * self.fock_dim
    }

    /// Flat index of spin block `spin` (0..4) and Fock level `n`.
    pub fn index(&self, spin: SpinBasis, n: usize) -> usize {
        spin.index() * self.fock_dim + n
    }

    /// Same space with the Fock truncation doubled.
    pub fn doubled(&self) -> Self {
        Self { fock_dim: 2 * self.fock_dim }
    }
}

impl Default for SpaceDescriptor {
    fn default() -> Self {
        Self { fock_dim: DEFAULT_FOCK_DIM }
    }
}

/// Two-qubit computational basis states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinBasis {
    DownDown,
    DownUp,
    UpDown,
    UpUp,
}

impl SpinBasis {
    pub const ALL: [SpinBasis; 4] = [Self::DownDown, Self::DownUp, Self::UpDown, Self::UpUp];

    pub const fn index(self) -> usize {
        match self {
            Self::DownDown => 0,
            Self::DownUp => 1,
            Self::UpDown => 2,
            Self::UpUp => 3,
        }
    }

    /// Eigenvalue of `S_z = σz,1 + σz,2`.
    pub const fn sz(self) -> f64 {
        match self {
            Self::DownDown => -2.0,
            Self::DownUp | Self::UpDown => 0.0,
            Self::UpUp => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliKind {
    /// `σ₁ + σ₂`
    Symmetric,
    /// `σ₁ − σ₂`
    Antisymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Lower,
    Raise,
}

/// Single-qubit Pauli matrix in the `(↓, ↑)` ordering.
pub fn pauli(axis: Axis) -> Matrix2<C64> {
    match axis {
        Axis::X => Matrix2::new(ZERO, ONE, ONE, ZERO),
        Axis::Y => Matrix2::new(ZERO, I, -I, ZERO),
        Axis::Z => Matrix2::new(-ONE, ZERO, ZERO, ONE),
    }
}

/// Dense operator on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dims: SpaceDescriptor,
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn from_matrix(dims: SpaceDescriptor, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != dims.dim() || matrix.ncols() != dims.dim() {
            return Err(Error::DimensionMismatch {
                expected: dims.dim(),
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { dims, matrix })
    }

    pub fn zeros(dims: SpaceDescriptor) -> Self {
        Self { dims, matrix: DMatrix::zeros(dims.dim(), dims.dim()) }
    }

    pub fn identity(dims: SpaceDescriptor) -> Self {
        Self { dims, matrix: DMatrix::identity(dims.dim(), dims.dim()) }
    }

    pub fn dims(&self) -> SpaceDescriptor {
        self.dims
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self { dims: self.dims, matrix: self.matrix.adjoint() }
    }

    /// `‖A − A†‖_max`
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() < HERMITIAN_TOL
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        let m = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        Self { dims: self.dims, matrix: m }
    }

    pub fn scale(&self, c: C64) -> Operator {
        Self { dims: self.dims, matrix: &self.matrix * c }
    }

    /// Matrix exponential `exp(self)`.
    pub fn exp(&self) -> Operator {
        Self { dims: self.dims, matrix: self.matrix.clone().exp() }
    }

    /// Propagator `exp(−i·self·t)` of a time-independent Hamiltonian.
    pub fn propagator(&self, t: f64) -> Operator {
        self.scale(C64::new(0.0, -t)).exp()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }

    pub fn apply(&self, psi: &StateVector) -> StateVector {
        StateVector { dims: self.dims, amps: &self.matrix * &psi.amps }
    }

    /// `U ρ U†`
    pub fn conjugate(&self, rho: &DensityMatrix) -> DensityMatrix {
        DensityMatrix {
            dims: self.dims,
            matrix: &self.matrix * &rho.matrix * self.matrix.adjoint(),
        }
    }

    pub fn expectation(&self, psi: &StateVector) -> C64 {
        psi.amps.dotc(&(&self.matrix * &psi.amps))
    }

    pub fn to_sparse(&self) -> SparseOperator {
        SparseOperator::from_dense(&self.matrix)
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator { dims: self.dims, matrix: &self.matrix + &rhs.matrix }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator { dims: self.dims, matrix: &self.matrix - &rhs.matrix }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator { dims: self.dims, matrix: &self.matrix * &rhs.matrix }
    }
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Coordinate-list view of an operator, used inside the integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOperator {
    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut entries = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != ZERO {
                    entries.push((r, c, v));
                }
            }
        }
        Self { dim: m.nrows(), entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    /// `out += coef · A · x`
    #[inline]
    pub fn apply_add(&self, coef: C64, x: &[C64], out: &mut [C64]) {
        for &(r, c, v) in &self.entries {
            out[r] += coef * v * x[c];
        }
    }

    /// `out += coef · A · X` for a row-major `dim × dim` matrix `X`.
    pub fn left_mul_add(&self, coef: C64, x: &[C64], out: &mut [C64]) {
        let n = self.dim;
        for &(r, c, v) in &self.entries {
            let w = coef * v;
            let src = &x[c * n..(c + 1) * n];
            let dst = &mut out[r * n..(r + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }

    /// `out += coef · X · A` for a row-major `dim × dim` matrix `X`.
    pub fn right_mul_add(&self, coef: C64, x: &[C64], out: &mut [C64]) {
        let n = self.dim;
        for &(r, c, v) in &self.entries {
            let w = coef * v;
            for i in 0..n {
                out[i * n + c] += w * x[i * n + r];
            }
        }
    }
}

/// One factor of a tensor product in the fixed `(qubit 1, qubit 2, mode)`
/// order.
#[derive(Debug, Clone)]
pub enum Factor {
    Identity,
    Matrix(DMatrix<C64>),
}

impl From<Matrix2<C64>> for Factor {
    fn from(m: Matrix2<C64>) -> Self {
        Factor::Matrix(DMatrix::from_iterator(2, 2, m.iter().copied()))
    }
}

impl From<DMatrix<C64>> for Factor {
    fn from(m: DMatrix<C64>) -> Self {
        Factor::Matrix(m)
    }
}

/// Kronecker embedding `q1 ⊗ q2 ⊗ mode`.
pub fn compose(dims: SpaceDescriptor, factors: [Factor; 3]) -> Result<Operator> {
    let sizes = [2, 2, dims.fock_dim()];
    let mut mats = Vec::with_capacity(3);
    for (f, &n) in factors.into_iter().zip(&sizes) {
        let m = match f {
            Factor::Identity => DMatrix::identity(n, n),
            Factor::Matrix(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: m.nrows() });
                }
                m
            }
        };
        mats.push(m);
    }
    let m = mats[0].kronecker(&mats[1]).kronecker(&mats[2]);
    Operator::from_matrix(dims, m)
}

/// `S_γ = σγ,1 + σγ,2` or, for the z axis only, `S'_z = σz,1 − σz,2`.
pub fn pauli_sum(dims: SpaceDescriptor, axis: Axis, kind: PauliKind) -> Result<Operator> {
    let p = pauli(axis);
    let first = compose(dims, [p.into(), Factor::Identity, Factor::Identity])?;
    let second = compose(dims, [Factor::Identity, p.into(), Factor::Identity])?;
    match kind {
        PauliKind::Symmetric => Ok(&first + &second),
        PauliKind::Antisymmetric if axis == Axis::Z => Ok(&first - &second),
        PauliKind::Antisymmetric => Err(Error::AntisymmetricAxis),
    }
}

/// `σγ,1 − σγ,2` for any axis; appears when the bichromatic frame rotates
/// `S'_z`.
pub(crate) fn pauli_difference(dims: SpaceDescriptor, axis: Axis) -> Operator {
    let p = pauli(axis);
    let first = compose(dims, [p.into(), Factor::Identity, Factor::Identity]).expect("2x2");
    let second = compose(dims, [Factor::Identity, p.into(), Factor::Identity]).expect("2x2");
    &first - &second
}

/// Mode-only ladder matrix of size `fock_dim`; `â†|n_max⟩ = 0`.
pub fn mode_ladder(fock_dim: usize, kind: Ladder) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(fock_dim, fock_dim);
    for n in 1..fock_dim {
        let v = C64::from((n as f64).sqrt());
        match kind {
            Ladder::Lower => m[(n - 1, n)] = v,
            Ladder::Raise => m[(n, n - 1)] = v,
        }
    }
    m
}

/// `â` or `â†` on the full space.
pub fn ladder(dims: SpaceDescriptor, kind: Ladder) -> Operator {
    compose(dims, [Factor::Identity, Factor::Identity, mode_ladder(dims.fock_dim(), kind).into()])
        .expect("mode factor has the descriptor's size")
}

/// `â†â` on the full space.
pub fn number(dims: SpaceDescriptor) -> Operator {
    let n = DMatrix::from_fn(dims.fock_dim(), dims.fock_dim(), |r, c| {
        if r == c { C64::from(r as f64) } else { ZERO }
    });
    compose(dims, [Factor::Identity, Factor::Identity, n.into()]).expect("square")
}

/// Global rotation `exp(−i θ/2 (σ_a,1 + σ_a,2))` about `axis` by `angle`.
pub fn global_rotation(dims: SpaceDescriptor, axis: Axis, angle: f64) -> Operator {
    let r = single_rotation(axis, angle);
    compose(dims, [r.into(), r.into(), Factor::Identity]).expect("2x2")
}

pub(crate) fn single_rotation(axis: Axis, angle: f64) -> Matrix2<C64> {
    let (s, c) = (angle / 2.0).sin_cos();
    Matrix2::identity() * C64::from(c) - pauli(axis) * C64::new(0.0, s)
}

/// Pure state on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    dims: SpaceDescriptor,
    amps: DVector<C64>,
}

impl StateVector {
    pub fn from_amplitudes(dims: SpaceDescriptor, amps: DVector<C64>) -> Result<Self> {
        if amps.len() != dims.dim() {
            return Err(Error::DimensionMismatch { expected: dims.dim(), found: amps.len() });
        }
        Ok(Self { dims, amps })
    }

    /// `|spin⟩ ⊗ |n⟩`
    pub fn basis(dims: SpaceDescriptor, spin: SpinBasis, n: usize) -> Result<Self> {
        if n >= dims.fock_dim() {
            return Err(Error::OutOfRange(format!("Fock level {n} >= {}", dims.fock_dim())));
        }
        let mut amps = DVector::zeros(dims.dim());
        amps[dims.index(spin, n)] = ONE;
        Ok(Self { dims, amps })
    }

    /// `|spin⟩ ⊗ |mode⟩` for arbitrary normalized factors.
    pub fn product(dims: SpaceDescriptor, spin: &Vector4<C64>, mode: &DVector<C64>) -> Result<Self> {
        if mode.len() != dims.fock_dim() {
            return Err(Error::DimensionMismatch { expected: dims.fock_dim(), found: mode.len() });
        }
        let mut amps = DVector::zeros(dims.dim());
        for s in 0..4 {
            for n in 0..dims.fock_dim() {
                amps[s * dims.fock_dim() + n] = spin[s] * mode[n];
            }
        }
        Ok(Self { dims, amps })
    }

    pub fn dims(&self) -> SpaceDescriptor {
        self.dims
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut DVector<C64> {
        &mut self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn overlap(&self, other: &StateVector) -> C64 {
        self.amps.dotc(&other.amps)
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { dims: self.dims, amps: &self.amps * c }
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix { dims: self.dims, matrix: &self.amps * self.amps.adjoint() }
    }

    /// Copy into a larger Fock truncation, padding new levels with zero.
    pub fn embed(&self, dims: SpaceDescriptor) -> Result<Self> {
        if dims.fock_dim() < self.dims.fock_dim() {
            return Err(Error::DimensionMismatch { expected: self.dims.fock_dim(), found: dims.fock_dim() });
        }
        let mut amps = DVector::zeros(dims.dim());
        for s in 0..4 {
            for n in 0..self.dims.fock_dim() {
                amps[s * dims.fock_dim() + n] = self.amps[s * self.dims.fock_dim() + n];
            }
        }
        Ok(Self { dims, amps })
    }
}

/// Mixed state on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: SpaceDescriptor,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn from_matrix(dims: SpaceDescriptor, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != dims.dim() || matrix.ncols() != dims.dim() {
            return Err(Error::DimensionMismatch { expected: dims.dim(), found: matrix.nrows() });
        }
        Ok(Self { dims, matrix })
    }

    pub fn dims(&self) -> SpaceDescriptor {
        self.dims
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::from(0.5);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn expectation(&self, op: &Operator) -> C64 {
        (op.matrix() * &self.matrix).trace()
    }
}

/// Anything that can be reduced to a 4×4 two-qubit density matrix.
pub trait QuantumState {
    fn dims(&self) -> SpaceDescriptor;
    /// Trace (or squared norm) of the state.
    fn weight(&self) -> f64;
    fn spin_density(&self) -> Matrix4<C64>;
}

impl QuantumState for StateVector {
    fn dims(&self) -> SpaceDescriptor {
        self.dims
    }

    fn weight(&self) -> f64 {
        self.amps.norm_squared()
    }

    fn spin_density(&self) -> Matrix4<C64> {
        let f = self.dims.fock_dim();
        Matrix4::from_fn(|r, c| {
            (0..f).map(|n| self.amps[r * f + n] * self.amps[c * f + n].conj()).sum()
        })
    }
}

impl QuantumState for DensityMatrix {
    fn dims(&self) -> SpaceDescriptor {
        self.dims
    }

    fn weight(&self) -> f64 {
        self.matrix.trace().re
    }

    fn spin_density(&self) -> Matrix4<C64> {
        let f = self.dims.fock_dim();
        Matrix4::from_fn(|r, c| (0..f).map(|n| self.matrix[(r * f + n, c * f + n)]).sum())
    }
}

/// Reduced two-qubit state with the motional mode traced out.
pub fn partial_trace_mode<S: QuantumState>(state: &S) -> Matrix4<C64> {
    state.spin_density()
}

/// Target Bell state `(|↓↓⟩ + i|↑↑⟩)/√2`.
pub fn phi_plus() -> Vector4<C64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Vector4::new(C64::from(h), ZERO, ZERO, C64::new(0.0, h))
}

/// `⟨Φ⁺|ρ_spin|Φ⁺⟩` after tracing out the mode.
pub fn bell_overlap<S: QuantumState>(state: &S) -> Result<f64> {
    let deviation = (state.weight() - 1.0).abs();
    if deviation > NORM_TOL {
        return Err(Error::Normalization { deviation });
    }
    Ok(spin_overlap(&state.spin_density(), &phi_plus()))
}

pub(crate) fn spin_overlap(rho: &Matrix4<C64>, target: &Vector4<C64>) -> f64 {
    target.dotc(&(rho * target)).re
}
