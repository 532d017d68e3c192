//! Operator algebra over composite truncated Hilbert spaces.
//!
//! Basis ordering: the leftmost subsystem is the slowest-varying index of the
//! flattened basis, so `|i0 i1 ... ik>` sits at
//! `((i0 * d1 + i1) * d2 + ...) + ik`. This matches the usual Kronecker
//! product `A0 ⊗ A1 ⊗ ... ⊗ Ak`.

mod kernel;

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result, C64};

pub use kernel::{Kernel, StorageKind, SPARSE_FILL_THRESHOLD};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Tensor product of truncated modes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HilbertSpace {
    dims: Vec<usize>,
    total: usize,
}

impl HilbertSpace {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidDimension { dim: 0, reason: "space needs at least one subsystem" });
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension { dim: d, reason: "every subsystem needs at least 2 levels" });
        }
        let total = dims.iter().product();
        Ok(HilbertSpace { dims: dims.to_vec(), total })
    }

    /// Single mode with `dim` levels.
    pub fn single(dim: usize) -> Result<Self> {
        Self::new(&[dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn n_sites(&self) -> usize {
        self.dims.len()
    }

    /// Flattened index of the product basis state with the given levels.
    pub fn index_of(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.dims.len() {
            return Err(Error::DimensionMismatch { expected: self.dims.len(), found: levels.len() });
        }
        let mut idx = 0;
        for (&l, &d) in levels.iter().zip(&self.dims) {
            if l >= d {
                return Err(Error::InvalidParameter(format!("level {l} outside a {d}-level mode")));
            }
            idx = idx * d + l;
        }
        Ok(idx)
    }

    /// Inverse of [`index_of`](Self::index_of).
    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let mut levels = vec![0; self.dims.len()];
        for (slot, &d) in levels.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        levels
    }

    fn check_same(&self, other: &HilbertSpace) -> Result<()> {
        if self != other {
            return Err(Error::SpaceMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

/// Complex matrix tagged with the space it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: DMatrix<C64>,
    label: String,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: DMatrix<C64>, label: impl Into<String>) -> Result<Self> {
        let n = space.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows().max(matrix.ncols()) });
        }
        Ok(Operator { space, matrix, label: label.into() })
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        Operator { space: space.clone(), matrix: DMatrix::zeros(n, n), label: "0".into() }
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        Operator { space: space.clone(), matrix: DMatrix::identity(n, n), label: "I".into() }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
            label: format!("{}^†", self.label),
        }
    }

    /// Largest entry of `|O - O†|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// Storage the integrators would pick for this operator.
    pub fn storage_kind(&self) -> StorageKind {
        self.kernel().kind()
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::from_matrix(&self.matrix)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.matrix.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        self.matrix.singular_values().max()
    }

    pub fn scale(&self, s: C64) -> Operator {
        Operator { space: self.space.clone(), matrix: &self.matrix * s, label: self.label.clone() }
    }

    pub fn scale_re(&self, s: f64) -> Operator {
        self.scale(C64::new(s, 0.0))
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator> {
        self.space.check_same(&other.space)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix + &other.matrix,
            label: format!("{} + {}", self.label, other.label),
        })
    }

    pub fn try_sub(&self, other: &Operator) -> Result<Operator> {
        self.space.check_same(&other.space)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix - &other.matrix,
            label: format!("{} - {}", self.label, other.label),
        })
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        self.space.check_same(&other.space)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix * &other.matrix,
            label: format!("{} {}", self.label, other.label),
        })
    }

    pub fn apply(&self, psi: &PureState) -> Result<DVector<C64>> {
        self.space.check_same(&psi.space)?;
        Ok(&self.matrix * &psi.amplitudes)
    }
}

macro_rules! op_binop {
    ($tr:ident, $method:ident, $inner:ident) => {
        impl std::ops::$tr<&Operator> for &Operator {
            type Output = Operator;
            /// Panics when the spaces differ; use the `try_` form to recover.
            fn $method(self, rhs: &Operator) -> Operator {
                self.$inner(rhs).expect("operator spaces differ")
            }
        }
    };
}

op_binop!(Add, add, try_add);
op_binop!(Sub, sub, try_sub);
op_binop!(Mul, mul, try_mul);

impl std::ops::Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl std::ops::Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale_re(rhs)
    }
}

/// `[A, B] = AB - BA`.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.try_mul(b)?.try_sub(&b.try_mul(a)?)
}

/// `{A, B} = AB + BA`.
pub fn anticommutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.try_mul(b)?.try_add(&b.try_mul(a)?)
}

fn local(dim: usize, label: &str, f: impl Fn(usize, usize) -> C64) -> Result<Operator> {
    let space = HilbertSpace::single(dim)?;
    Operator::new(space, DMatrix::from_fn(dim, dim, f), label)
}

/// Annihilation operator on a `dim`-level mode: `<n-1|a|n> = sqrt(n)`.
pub fn ladder(dim: usize) -> Result<Operator> {
    local(dim, "a", |i, j| if j == i + 1 { C64::new((j as f64).sqrt(), 0.0) } else { ZERO })
}

/// Creation operator, the adjoint of [`ladder`].
pub fn creation(dim: usize) -> Result<Operator> {
    Ok(ladder(dim)?.dagger().with_label("a†"))
}

/// Number operator `a†a`.
pub fn number(dim: usize) -> Result<Operator> {
    local(dim, "n", |i, j| if i == j { C64::new(i as f64, 0.0) } else { ZERO })
}

/// `|a><b|` on a single mode.
pub fn projector(dim: usize, a: usize, b: usize) -> Result<Operator> {
    if a >= dim || b >= dim {
        return Err(Error::InvalidParameter(format!("projector |{a}><{b}| outside a {dim}-level mode")));
    }
    local(dim, &format!("|{a}><{b}|"), |i, j| if i == a && j == b { ONE } else { ZERO })
}

/// Identity on a single mode.
pub fn eye(dim: usize) -> Result<Operator> {
    Ok(Operator::identity(&HilbertSpace::single(dim)?))
}

/// Pauli X on a qubit.
pub fn sigma_x() -> Operator {
    local(2, "σx", |i, j| if i != j { ONE } else { ZERO }).expect("qubit")
}

/// Pauli Y on a qubit.
pub fn sigma_y() -> Operator {
    local(2, "σy", |i, j| match (i, j) {
        (0, 1) => C64::new(0.0, -1.0),
        (1, 0) => C64::new(0.0, 1.0),
        _ => ZERO,
    })
    .expect("qubit")
}

/// Pauli Z with `|1>` as the excited level: `σz = 2n - 1`, so `σz|1> = +|1>`.
pub fn sigma_z() -> Operator {
    local(2, "σz", |i, j| match (i, j) {
        (0, 0) => -ONE,
        (1, 1) => ONE,
        _ => ZERO,
    })
    .expect("qubit")
}

/// Qubit lowering operator `|0><1|`.
pub fn sigma_minus() -> Operator {
    ladder(2).expect("qubit").with_label("σ-")
}

/// Photon-number parity `exp(iπ a†a)`, diagonal `(-1)^n`.
pub fn parity(dim: usize) -> Result<Operator> {
    local(dim, "P", |i, j| {
        if i != j {
            ZERO
        } else if i % 2 == 0 {
            ONE
        } else {
            -ONE
        }
    })
}

/// Kronecker product `A ⊗ B` on the concatenated space.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    let mut dims = a.space.dims.clone();
    dims.extend_from_slice(&b.space.dims);
    let space = HilbertSpace::new(&dims).expect("concatenated dims are valid");
    Operator {
        space,
        matrix: a.matrix.kronecker(&b.matrix),
        label: format!("{}⊗{}", a.label, b.label),
    }
}

/// Place a single-subsystem operator at `site`, identity elsewhere.
pub fn embed(op: &Operator, site: usize, space: &HilbertSpace) -> Result<Operator> {
    let n_sites = space.n_sites();
    if site >= n_sites {
        return Err(Error::SiteOutOfRange { site, n_sites });
    }
    let d = space.dims[site];
    if op.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: op.dim() });
    }
    let left: usize = space.dims[..site].iter().product();
    let right: usize = space.dims[site + 1..].iter().product();
    let n = space.total_dim();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..d {
        for b in 0..d {
            let v = op.matrix[(a, b)];
            if v == ZERO {
                continue;
            }
            for l in 0..left {
                for r in 0..right {
                    let row = (l * d + a) * right + r;
                    let col = (l * d + b) * right + r;
                    m[(row, col)] = v;
                }
            }
        }
    }
    Ok(Operator { space: space.clone(), matrix: m, label: format!("{}_{}", op.label, site) })
}

/// Normalised state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    space: HilbertSpace,
    amplitudes: DVector<C64>,
}

impl PureState {
    /// Normalises `amplitudes`; fails on a zero vector or length mismatch.
    pub fn new(space: HilbertSpace, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != space.total_dim() {
            return Err(Error::DimensionMismatch { expected: space.total_dim(), found: amplitudes.len() });
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidState(format!("cannot normalise a vector of norm {norm}")));
        }
        Ok(PureState { space, amplitudes: amplitudes.unscale(norm) })
    }

    /// Product basis state `|levels>`.
    pub fn basis(space: &HilbertSpace, levels: &[usize]) -> Result<Self> {
        let idx = space.index_of(levels)?;
        let mut v = DVector::zeros(space.total_dim());
        v[idx] = ONE;
        Ok(PureState { space: space.clone(), amplitudes: v })
    }

    /// Tensor product of per-subsystem states, leftmost first.
    pub fn product(factors: &[&PureState]) -> Result<Self> {
        let (first, rest) = factors
            .split_first()
            .ok_or_else(|| Error::InvalidState("empty product".into()))?;
        let mut dims = first.space.dims.clone();
        let mut amps = first.amplitudes.clone();
        for f in rest {
            dims.extend_from_slice(&f.space.dims);
            amps = amps.kronecker(&f.amplitudes);
        }
        PureState::new(HilbertSpace::new(&dims)?, amps)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        self.space.check_same(&other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Normalised `O|psi>`.
    pub fn apply_normalized(&self, op: &Operator) -> Result<PureState> {
        PureState::new(self.space.clone(), op.apply(self)?)
    }

    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix { space: self.space.clone(), matrix: m }
    }
}

/// Trace-one, Hermitian, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: DMatrix<C64>,
}

/// Tolerances checked by [`DensityMatrix::new`].
pub const TRACE_TOL: f64 = 1e-9;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-7;

impl DensityMatrix {
    pub fn new(space: HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self::from_raw(space, matrix)?;
        let tr = rho.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let dev = rho.hermitian_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::NonHermitian { deviation: dev });
        }
        let min_eig = rho.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min_eig:.3e} is negative")));
        }
        Ok(rho)
    }

    /// Wraps a matrix without checking the physical invariants.
    pub fn from_raw(space: HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let n = space.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        Ok(DensityMatrix { space, matrix })
    }

    pub fn maximally_mixed(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        let m = DMatrix::identity(n, n) * C64::new(1.0 / n as f64, 0.0);
        DensityMatrix { space: space.clone(), matrix: m }
    }

    /// Convex combination `λ ρ1 + (1-λ) ρ2`.
    pub fn mix(lambda: f64, a: &DensityMatrix, b: &DensityMatrix) -> Result<Self> {
        a.space.check_same(&b.space)?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("mixing weight {lambda} outside [0, 1]")));
        }
        let m = &a.matrix * C64::new(lambda, 0.0) + &b.matrix * C64::new(1.0 - lambda, 0.0);
        Ok(DensityMatrix { space: a.space.clone(), matrix: m })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρij|² for Hermitian ρ.
        self.matrix.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.min()
    }

    /// `<ψ|ρ|ψ>`.
    pub fn population(&self, psi: &PureState) -> Result<f64> {
        self.space.check_same(&psi.space)?;
        Ok(psi.amplitudes.dotc(&(&self.matrix * &psi.amplitudes)).re)
    }
}

/// States that can produce expectation values.
pub trait Expectation {
    fn expect(&self, op: &Operator) -> Result<C64>;
}

impl Expectation for PureState {
    fn expect(&self, op: &Operator) -> Result<C64> {
        let v = op.apply(self)?;
        Ok(self.amplitudes.dotc(&v))
    }
}

impl Expectation for DensityMatrix {
    fn expect(&self, op: &Operator) -> Result<C64> {
        self.space.check_same(&op.space)?;
        Ok(trace_product(&self.matrix, &op.matrix))
    }
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `<ψ|O|ψ>` or `Tr(ρO)`.
pub fn expectation<S: Expectation + ?Sized>(op: &Operator, state: &S) -> Result<C64> {
    state.expect(op)
}

/// Poisson weight of coherent-state components at `n >= dim`.
pub fn coherent_tail_weight(alpha: C64, dim: usize) -> f64 {
    let x = alpha.norm_sqr();
    if x == 0.0 {
        return 0.0;
    }
    // Head sum is exact near 1; compute the tail directly in log space.
    let ln_x = x.ln();
    let mut ln_term = -x; // n = 0
    for n in 1..=dim {
        ln_term += ln_x - (n as f64).ln();
    }
    let mut tail = 0.0;
    let mut n = dim;
    loop {
        let t = ln_term.exp();
        tail += t;
        if n as f64 > x && t < tail * 1e-17 {
            break;
        }
        n += 1;
        ln_term += ln_x - (n as f64).ln();
        if n > dim + 10_000 {
            break;
        }
    }
    tail
}

/// Default boson truncation for coherent-state work: at least
/// `ceil(|α|² + 5|α| + 10)` and large enough for a tail below 1e-10.
pub fn default_boson_dim(alpha: C64) -> usize {
    let a = alpha.norm();
    let mut dim = (a * a + 5.0 * a + 10.0).ceil() as usize;
    while coherent_tail_weight(alpha, dim) >= COHERENT_TAIL_TOL {
        dim += 1;
    }
    dim
}

/// Maximum truncated weight accepted by [`coherent_state`].
pub const COHERENT_TAIL_TOL: f64 = 1e-10;

/// Coherent state `|α>` renormalised on `dim` levels.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<PureState> {
    let space = HilbertSpace::single(dim)?;
    let tail = coherent_tail_weight(alpha, dim);
    if tail >= COHERENT_TAIL_TOL {
        return Err(Error::Truncation { dim, tail_weight: tail });
    }
    let mut v = DVector::zeros(dim);
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    v[0] = c;
    for n in 1..dim {
        c = c * alpha / (n as f64).sqrt();
        v[n] = c;
    }
    PureState::new(space, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn ladder_matrix_elements() {
        let a2 = ladder(2).unwrap();
        assert_eq!(a2.get(0, 1), ONE);
        assert_eq!(a2.matrix().iter().filter(|v| **v != ZERO).count(), 1);
        let a3 = ladder(3).unwrap();
        assert_eq!(a3.get(0, 1), ONE);
        assert_relative_eq!(a3.get(1, 2).re, std::f64::consts::SQRT_2, epsilon = 1e-15);
        let n = (&a3.dagger() * &a3).matrix().diagonal();
        assert_relative_eq!(n[2].re, 2.0, epsilon = 1e-14);
        assert!(matches!(ladder(1), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn space_validation_and_indexing() {
        assert!(HilbertSpace::new(&[2, 1]).is_err());
        assert!(HilbertSpace::new(&[]).is_err());
        let s = HilbertSpace::new(&[3, 2, 4]).unwrap();
        assert_eq!(s.total_dim(), 24);
        let idx = s.index_of(&[2, 1, 3]).unwrap();
        assert_eq!(idx, (2 * 2 + 1) * 4 + 3);
        assert_eq!(s.levels_of(idx), vec![2, 1, 3]);
    }

    #[test]
    fn embed_uses_first_factor_slowest() {
        let sp = HilbertSpace::new(&[2, 2]).unwrap();
        let x0 = embed(&sigma_x(), 0, &sp).unwrap();
        let psi = PureState::basis(&sp, &[0, 0]).unwrap();
        let out = x0.apply(&psi).unwrap();
        assert_eq!(out[sp.index_of(&[1, 0]).unwrap()], ONE);

        let sp3 = HilbertSpace::new(&[3, 3]).unwrap();
        let n1 = embed(&number(3).unwrap(), 1, &sp3).unwrap();
        let s = PureState::basis(&sp3, &[1, 2]).unwrap();
        assert_relative_eq!(expectation(&n1, &s).unwrap().re, 2.0);

        let x1 = embed(&sigma_x(), 1, &sp).unwrap();
        assert_eq!(commutator(&x0, &x1).unwrap().norm(), 0.0);
        assert!(matches!(embed(&sigma_x(), 2, &sp), Err(Error::SiteOutOfRange { .. })));
        assert!(matches!(embed(&number(3).unwrap(), 0, &sp), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn embed_matches_kron() {
        let sp = HilbertSpace::new(&[2, 3, 2]).unwrap();
        let a = ladder(3).unwrap();
        let k = kron(&kron(&eye(2).unwrap(), &a), &eye(2).unwrap());
        let e = embed(&a, 1, &sp).unwrap();
        assert_eq!(k.matrix(), e.matrix());
    }

    #[test]
    fn coherent_states() {
        let vac = coherent_state(ZERO, 5).unwrap();
        assert_eq!(vac.amplitudes()[0], ONE);
        let one = coherent_state(ONE, 20).unwrap();
        assert_relative_eq!(expectation(&number(20).unwrap(), &one).unwrap().re, 1.0, epsilon = 1e-10);

        let alpha = 1.5;
        let d = default_boson_dim(c(alpha));
        let p = coherent_state(c(alpha), d).unwrap();
        let m = coherent_state(c(-alpha), d).unwrap();
        let overlap = p.inner(&m).unwrap().norm();
        let analytic = (-2.0 * alpha * alpha).exp();
        assert_relative_eq!(overlap, analytic, epsilon = 1e-12);
        assert_relative_eq!(overlap, 0.011109, epsilon = 1e-6);

        match coherent_state(c(3.0), 10) {
            Err(Error::Truncation { tail_weight, .. }) => assert!(tail_weight > 1e-10),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn tail_weight_matches_direct_sum() {
        let alpha = c(2.0);
        let dim = 12;
        let mut head = 0.0;
        let mut term: f64 = (-4.0f64).exp();
        for n in 0..dim {
            if n > 0 {
                term *= 4.0 / n as f64;
            }
            head += term;
        }
        assert_relative_eq!(coherent_tail_weight(alpha, dim), 1.0 - head, epsilon = 1e-14);
    }

    #[test]
    fn parity_properties() {
        let p = parity(4).unwrap();
        let diag: Vec<f64> = p.matrix().diagonal().iter().map(|v| v.re).collect();
        assert_eq!(diag, vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(p.try_mul(&p).unwrap().matrix(), Operator::identity(p.space()).matrix());

        let d = default_boson_dim(ONE);
        let a = coherent_state(ONE, d).unwrap();
        let val = expectation(&parity(d).unwrap(), &a).unwrap().re;
        assert_relative_eq!(val, (-2.0f64).exp(), epsilon = 1e-9);
        assert_relative_eq!(val, 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn expectations() {
        let sp = HilbertSpace::single(2).unwrap();
        let plus = PureState::new(sp.clone(), DVector::from_vec(vec![ONE, ONE])).unwrap();
        assert_relative_eq!(expectation(&sigma_x(), &plus).unwrap().re, 1.0, epsilon = 1e-15);
        let mixed = DensityMatrix::maximally_mixed(&sp);
        assert_eq!(expectation(&sigma_z(), &mixed).unwrap(), ZERO);
        let two = PureState::basis(&HilbertSpace::single(4).unwrap(), &[2]).unwrap();
        assert_eq!(expectation(&number(4).unwrap(), &two).unwrap(), c(2.0));
        assert!(matches!(expectation(&number(3).unwrap(), &plus), Err(Error::SpaceMismatch(_))));
    }

    #[test]
    fn density_matrix_validation() {
        let sp = HilbertSpace::single(2).unwrap();
        let bad_trace = DMatrix::from_diagonal_element(2, 2, c(0.6));
        assert!(DensityMatrix::new(sp.clone(), bad_trace).is_err());
        let negative = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.1), c(-0.1)]));
        assert!(DensityMatrix::new(sp.clone(), negative).is_err());
        let mut nonherm = DMatrix::from_diagonal_element(2, 2, c(0.5));
        nonherm[(0, 1)] = c(0.1);
        assert!(matches!(DensityMatrix::new(sp.clone(), nonherm), Err(Error::NonHermitian { .. })));
        let pure = PureState::basis(&sp, &[1]).unwrap().to_density();
        assert_relative_eq!(pure.purity(), 1.0);
    }

    #[test]
    fn pauli_algebra() {
        let xy = sigma_x().try_mul(&sigma_y()).unwrap();
        // sigma_z() is +1 on |1>, so the usual σxσy = iσz picks up a sign.
        assert_eq!(xy.matrix(), &(sigma_z().matrix() * C64::new(0.0, -1.0)));
        assert_eq!(sigma_minus().matrix(), ladder(2).unwrap().matrix());
    }

    #[test]
    fn storage_kind_of_embedded_operator() {
        let sp = HilbertSpace::new(&[2; 4]).unwrap();
        assert_eq!(embed(&sigma_x(), 2, &sp).unwrap().storage_kind(), StorageKind::Sparse);
        let full = Operator::new(sp.clone(), DMatrix::from_element(16, 16, ONE), "ones").unwrap();
        assert_eq!(full.storage_kind(), StorageKind::Dense);
    }

    proptest! {
        #[test]
        fn number_operator_diagonal(d in 2usize..30) {
            let a = ladder(d).unwrap();
            let n = a.dagger().try_mul(&a).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let expect = if i == j { i as f64 } else { 0.0 };
                    prop_assert!((n.get(i, j) - c(expect)).norm() < 1e-12);
                }
            }
        }

        #[test]
        fn disjoint_embeddings_commute(dims in proptest::collection::vec(2usize..4, 2..4), seed in 0u64..1000) {
            let sp = HilbertSpace::new(&dims).unwrap();
            let s0 = 0;
            let s1 = dims.len() - 1;
            let a = ladder(dims[s0]).unwrap().scale(C64::new(1.0, seed as f64 * 1e-3));
            let b = number(dims[s1]).unwrap().try_add(&ladder(dims[s1]).unwrap()).unwrap();
            let ea = embed(&a, s0, &sp).unwrap();
            let eb = embed(&b, s1, &sp).unwrap();
            prop_assert_eq!(commutator(&ea, &eb).unwrap().norm(), 0.0);
            prop_assert!((ea.op_norm() - a.op_norm()).abs() < 1e-10);
        }

        #[test]
        fn coherent_is_ladder_eigenstate(re in -2.5f64..2.5, im in -2.5f64..2.5) {
            let alpha = C64::new(re, im);
            let d = default_boson_dim(alpha);
            let psi = coherent_state(alpha, d).unwrap();
            let apsi = ladder(d).unwrap().apply(&psi).unwrap();
            for n in 0..d - 2 {
                prop_assert!((apsi[n] - alpha * psi.amplitudes()[n]).norm() < 1e-8);
            }
        }

        #[test]
        fn parity_anticommutes_with_ladder(d in 2usize..25) {
            let p = parity(d).unwrap();
            let a = ladder(d).unwrap();
            let ac = anticommutator(&p, &a).unwrap();
            prop_assert_eq!(ac.norm(), 0.0);
        }
    }
}
