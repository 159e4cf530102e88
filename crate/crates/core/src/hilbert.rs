//! Truncated spin ⊗ phonon product space.
//!
//! Basis ordering: site 0 is the most significant digit. Within a site the
//! local index is `spin · (n_max + 1) + n`, so the spin varies slower than the
//! phonon number. For one site with `n_max = 1` the order is
//! `|g,0⟩, |g,1⟩, |e,0⟩, |e,1⟩`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

pub type CMatrix = DMatrix<Complex64>;

#[inline]
pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Ground,
    Excited,
}

impl Spin {
    fn bit(self) -> usize {
        match self {
            Spin::Ground => 0,
            Spin::Excited => 1,
        }
    }

    fn from_bit(b: usize) -> Self {
        if b == 0 { Spin::Ground } else { Spin::Excited }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceSpec {
    n_sites: usize,
    n_max: usize,
}

impl SpaceSpec {
    pub fn new(n_sites: usize, n_max: usize) -> Result<Self> {
        Self::with_cap(n_sites, n_max, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(n_sites: usize, n_max: usize, cap: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::config("n_sites must be at least 1"));
        }
        if n_max == 0 {
            return Err(Error::config("n_max must be at least 1"));
        }
        let local = 2 * (n_max + 1);
        let dim = (0..n_sites).try_fold(1usize, |acc, _| acc.checked_mul(local));
        match dim {
            Some(d) if d <= cap => Ok(Self { n_sites, n_max }),
            Some(d) => Err(Error::DimensionCap { dim: d, cap }),
            None => Err(Error::DimensionCap { dim: usize::MAX, cap }),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn local_dim(&self) -> usize {
        2 * (self.n_max + 1)
    }

    pub fn dim(&self) -> usize {
        self.local_dim().pow(self.n_sites as u32)
    }

    fn stride(&self, site: usize) -> usize {
        self.local_dim().pow((self.n_sites - 1 - site) as u32)
    }

    pub fn basis_index(&self, spins: &[Spin], phonons: &[usize]) -> Result<usize> {
        if spins.len() != self.n_sites || phonons.len() != self.n_sites {
            return Err(Error::OutOfBounds(format!(
                "expected {} labels per list, got {} spins and {} phonon numbers",
                self.n_sites,
                spins.len(),
                phonons.len()
            )));
        }
        let mut index = 0;
        for (site, (&s, &n)) in spins.iter().zip(phonons).enumerate() {
            if n > self.n_max {
                return Err(Error::OutOfBounds(format!(
                    "phonon number {n} at site {site} exceeds n_max = {}",
                    self.n_max
                )));
            }
            index = index * self.local_dim() + s.bit() * (self.n_max + 1) + n;
        }
        Ok(index)
    }

    pub fn labels(&self, index: usize) -> Result<(Vec<Spin>, Vec<usize>)> {
        if index >= self.dim() {
            return Err(Error::OutOfBounds(format!("basis index {index} >= dimension {}", self.dim())));
        }
        let mut spins = Vec::with_capacity(self.n_sites);
        let mut phonons = Vec::with_capacity(self.n_sites);
        for site in 0..self.n_sites {
            let (s, n) = self.local(index, site);
            spins.push(Spin::from_bit(s));
            phonons.push(n);
        }
        Ok((spins, phonons))
    }

    /// `(spin bit, phonon number)` of `site` within basis state `index`.
    #[inline]
    pub(crate) fn local(&self, index: usize, site: usize) -> (usize, usize) {
        let l = (index / self.stride(site)) % self.local_dim();
        (l / (self.n_max + 1), l % (self.n_max + 1))
    }

    /// Basis index with the local state of `site` replaced.
    #[inline]
    pub(crate) fn replace(&self, index: usize, site: usize, spin: usize, n: usize) -> usize {
        let stride = self.stride(site);
        let old = (index / stride) % self.local_dim();
        index - old * stride + (spin * (self.n_max + 1) + n) * stride
    }

    pub(crate) fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n_sites {
            return Err(Error::OutOfBounds(format!("site {site} >= n_sites {}", self.n_sites)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Annihilate,
    Create,
    Number,
    SigmaPlus,
    SigmaMinus,
    ExcitedProjector,
    SigmaX,
}

impl OperatorKind {
    /// Local matrix element: image of `(spin, n)` as `(spin', n', amplitude)`.
    pub(crate) fn act(self, spin: usize, n: usize, n_max: usize) -> Option<(usize, usize, f64)> {
        match self {
            OperatorKind::Annihilate => (n > 0).then(|| (spin, n - 1, (n as f64).sqrt())),
            OperatorKind::Create => (n < n_max).then(|| (spin, n + 1, ((n + 1) as f64).sqrt())),
            OperatorKind::Number => (n > 0).then_some((spin, n, n as f64)),
            OperatorKind::SigmaPlus => (spin == 0).then_some((1, n, 1.0)),
            OperatorKind::SigmaMinus => (spin == 1).then_some((0, n, 1.0)),
            OperatorKind::ExcitedProjector => (spin == 1).then_some((1, n, 1.0)),
            OperatorKind::SigmaX => Some((1 - spin, n, 1.0)),
        }
    }
}

/// An operator on a [`SpaceSpec`] stored as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub spec: SpaceSpec,
    pub mat: CMatrix,
}

impl OperatorMatrix {
    pub fn new(spec: SpaceSpec, mat: CMatrix) -> Result<Self> {
        let d = spec.dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::contract(format!(
                "operator is {}x{}, space dimension is {d}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { spec, mat })
    }

    pub fn zeros(spec: SpaceSpec) -> Self {
        let d = spec.dim();
        Self { spec, mat: CMatrix::zeros(d, d) }
    }

    pub fn identity(spec: SpaceSpec) -> Self {
        let d = spec.dim();
        Self { spec, mat: CMatrix::identity(d, d) }
    }

    pub fn adjoint(&self) -> Self {
        Self { spec: self.spec, mat: self.mat.adjoint() }
    }

    pub fn dot(&self, other: &Self) -> Result<Self> {
        self.same_space(other.spec)?;
        Ok(Self { spec: self.spec, mat: &self.mat * &other.mat })
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.same_space(other.spec)?;
        Ok(Self { spec: self.spec, mat: &self.mat * &other.mat - &other.mat * &self.mat })
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub(crate) fn same_space(&self, spec: SpaceSpec) -> Result<()> {
        if self.spec != spec {
            return Err(Error::contract(format!("space mismatch: {:?} vs {:?}", self.spec, spec)));
        }
        Ok(())
    }
}

pub(crate) fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            err = err.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    err
}

/// Single-site operator embedded with identities on every other site.
pub fn site_operator(spec: SpaceSpec, site: usize, kind: OperatorKind) -> Result<OperatorMatrix> {
    spec.check_site(site)?;
    let d = spec.dim();
    let mut mat = CMatrix::zeros(d, d);
    for col in 0..d {
        let (s, n) = spec.local(col, site);
        if let Some((s2, n2, amp)) = kind.act(s, n, spec.n_max()) {
            mat[(spec.replace(col, site, s2, n2), col)] += c(amp);
        }
    }
    Ok(OperatorMatrix { spec, mat })
}

/// Density operator on a [`SpaceSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub spec: SpaceSpec,
    pub rho: CMatrix,
}

impl QuantumState {
    pub fn new(spec: SpaceSpec, rho: CMatrix) -> Result<Self> {
        let d = spec.dim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::contract(format!("density matrix is {}x{}, expected {d}x{d}", rho.nrows(), rho.ncols())));
        }
        Ok(Self { spec, rho })
    }

    /// The pure basis state `|index⟩⟨index|`.
    pub fn basis(spec: SpaceSpec, index: usize) -> Result<Self> {
        let d = spec.dim();
        if index >= d {
            return Err(Error::OutOfBounds(format!("basis index {index} >= dimension {d}")));
        }
        let mut rho = CMatrix::zeros(d, d);
        rho[(index, index)] = c(1.0);
        Ok(Self { spec, rho })
    }

    pub fn from_labels(spec: SpaceSpec, spins: &[Spin], phonons: &[usize]) -> Result<Self> {
        Self::basis(spec, spec.basis_index(spins, phonons)?)
    }

    pub fn trace(&self) -> f64 {
        self.rho.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn purity(&self) -> f64 {
        // Tr ρ² = Σ |ρ_ij|² for Hermitian ρ.
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.rho.diagonal().iter().map(|z| z.re).collect()
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-9) and positivity (−1e-9).
    pub fn validate(&self) -> Result<()> {
        let herm = hermiticity_error(&self.rho);
        if herm > 1e-10 {
            return Err(Error::Numerical(format!("density matrix not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("density matrix trace {tr}")));
        }
        let herm_part = (&self.rho + self.rho.adjoint()) * c(0.5);
        let min_eig = herm_part.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-9 {
            return Err(Error::Numerical(format!("density matrix has negative eigenvalue {min_eig:e}")));
        }
        Ok(())
    }
}

/// `Tr(ρ · op)` for Hermitian `op`.
pub fn expectation(state: &QuantumState, op: &OperatorMatrix) -> Result<f64> {
    op.same_space(state.spec)?;
    let scale = op.max_abs().max(1.0);
    let herm = op.hermiticity_error();
    if herm > 1e-12 * scale {
        return Err(Error::contract(format!("expectation requires a Hermitian operator (deviation {herm:e})")));
    }
    let d = state.spec.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += state.rho[(i, j)] * op.mat[(j, i)];
        }
    }
    if acc.im.abs() > 1e-9 * scale {
        return Err(Error::Numerical(format!("expectation has imaginary residue {:e}", acc.im)));
    }
    Ok(acc.re)
}
