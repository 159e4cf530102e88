//! Rotating-frame Hamiltonians and unitary time evolution.
//!
//! The generator is expressed in the frame of the common transverse mode, so
//! the motional energy of site `j` is `ω_j n_j`. A resonant sideband or
//! carrier drive is static in a frame that also rotates the addressed spin;
//! the excited-spin energy of a driven site is therefore
//! `Δ_j + ω_j` (red sideband), `Δ_j − ω_j` (blue sideband) or `Δ_j`
//! (carrier), so that `Δ_j = 0` is resonant with the addressed local mode.
//! A site can carry only one kind of drive at a time.
//!
//! Every Hamiltonian built here is real symmetric. Propagators are formed from
//! a Hermitian eigendecomposition of each connected block of the Hamiltonian,
//! which keeps the cost proportional to the conserved-sector sizes.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::chain::ModeParams;
use crate::error::{Error, Result};
use crate::hilbert::{c, hermiticity_error, CMatrix, OperatorMatrix, QuantumState, SpaceSpec};
use crate::linalg::{mul, Split};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Per-site drive settings in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveParams {
    pub rabi_red: Vec<f64>,
    pub rabi_blue: Vec<f64>,
    pub rabi_carrier: Vec<f64>,
    pub detuning: Vec<f64>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DriveFrame {
    None,
    Red,
    Blue,
    Carrier,
}

impl DriveParams {
    pub fn off(n: usize) -> Self {
        Self {
            rabi_red: vec![0.0; n],
            rabi_blue: vec![0.0; n],
            rabi_carrier: vec![0.0; n],
            detuning: vec![0.0; n],
            active: vec![false; n],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.active.len()
    }

    pub fn red(n: usize, site: usize, rabi: f64) -> Self {
        let mut d = Self::off(n);
        d.rabi_red[site] = rabi;
        d.active[site] = true;
        d
    }

    pub fn blue(n: usize, site: usize, rabi: f64) -> Self {
        let mut d = Self::off(n);
        d.rabi_blue[site] = rabi;
        d.active[site] = true;
        d
    }

    pub fn carrier(n: usize, site: usize, rabi: f64) -> Self {
        let mut d = Self::off(n);
        d.rabi_carrier[site] = rabi;
        d.active[site] = true;
        d
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.active.len();
        for (name, v) in [
            ("rabi_red", &self.rabi_red),
            ("rabi_blue", &self.rabi_blue),
            ("rabi_carrier", &self.rabi_carrier),
            ("detuning", &self.detuning),
        ] {
            if v.len() != n {
                return Err(Error::contract(format!("{name} has {} entries for {n} sites", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::contract(format!("{name} entries must be finite")));
            }
        }
        for (name, v) in [("rabi_red", &self.rabi_red), ("rabi_blue", &self.rabi_blue), ("rabi_carrier", &self.rabi_carrier)] {
            if v.iter().any(|&x| x < 0.0) {
                return Err(Error::contract(format!("{name} entries must be non-negative")));
            }
        }
        for j in 0..n {
            self.frame(j)?;
        }
        Ok(())
    }

    fn frame(&self, j: usize) -> Result<DriveFrame> {
        if !self.active[j] {
            return Ok(DriveFrame::None);
        }
        let kinds = [
            (self.rabi_red[j] > 0.0, DriveFrame::Red),
            (self.rabi_blue[j] > 0.0, DriveFrame::Blue),
            (self.rabi_carrier[j] > 0.0, DriveFrame::Carrier),
        ];
        let mut on = kinds.iter().filter(|(b, _)| *b).map(|(_, f)| *f);
        match (on.next(), on.next()) {
            (None, _) => Ok(DriveFrame::None),
            (Some(f), None) => Ok(f),
            _ => Err(Error::contract(format!("site {j} carries more than one drive kind"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub mode: ModeParams,
    pub drive: DriveParams,
    pub include_hopping: bool,
}

/// Rotating-frame generator of hopping plus drives on `spec`.
pub fn build_hamiltonian(spec: SpaceSpec, h: &HamiltonianSpec) -> Result<OperatorMatrix> {
    let sparse = assemble(spec, h)?;
    let d = spec.dim();
    let mut mat = CMatrix::zeros(d, d);
    for &(r, col, v) in &sparse.entries {
        mat[(r, col)] = c(v);
    }
    OperatorMatrix::new(spec, mat)
}

/// Real symmetric matrix as sorted, duplicate-free `(row, col, value)` entries.
#[derive(Debug, Clone)]
pub(crate) struct SparseSymmetric {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

pub(crate) fn assemble(spec: SpaceSpec, h: &HamiltonianSpec) -> Result<SparseSymmetric> {
    let n = spec.n_sites();
    if h.mode.n_sites() != n || h.drive.n_sites() != n {
        return Err(Error::contract(format!(
            "site count mismatch: space {n}, modes {}, drives {}",
            h.mode.n_sites(),
            h.drive.n_sites()
        )));
    }
    h.mode.validate().map_err(|e| Error::contract(e.to_string()))?;
    h.drive.validate()?;

    let d = spec.dim();
    let n_max = spec.n_max();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();

    let frames: Vec<DriveFrame> = (0..n).map(|j| h.drive.frame(j)).collect::<Result<_>>()?;
    let spin_energy: Vec<f64> = (0..n)
        .map(|j| match frames[j] {
            DriveFrame::None => 0.0,
            DriveFrame::Red => h.drive.detuning[j] + h.mode.omega_shift[j],
            DriveFrame::Blue => h.drive.detuning[j] - h.mode.omega_shift[j],
            DriveFrame::Carrier => h.drive.detuning[j],
        })
        .collect();

    for col in 0..d {
        let mut diag = 0.0;
        for j in 0..n {
            let (s, nj) = spec.local(col, j);
            diag += h.mode.omega_shift[j] * nj as f64;
            if s == 1 {
                diag += spin_energy[j];
            }
        }
        entries.push((col, col, diag));

        if h.include_hopping {
            for j in 0..n {
                for k in 0..n {
                    let kappa = h.mode.kappa[(j, k)];
                    if j == k || kappa == 0.0 {
                        continue;
                    }
                    // a_j† a_k, both orderings over (j, k) cover the Hermitian pair.
                    let (sj, nj) = spec.local(col, j);
                    let (sk, nk) = spec.local(col, k);
                    if nk > 0 && nj < n_max {
                        let row = spec.replace(spec.replace(col, k, sk, nk - 1), j, sj, nj + 1);
                        entries.push((row, col, kappa * ((nk * (nj + 1)) as f64).sqrt()));
                    }
                }
            }
        }

        for j in 0..n {
            let (s, nj) = spec.local(col, j);
            let half = match frames[j] {
                DriveFrame::None => continue,
                DriveFrame::Red => 0.5 * h.drive.rabi_red[j],
                DriveFrame::Blue => 0.5 * h.drive.rabi_blue[j],
                DriveFrame::Carrier => 0.5 * h.drive.rabi_carrier[j],
            };
            let target = match (frames[j], s) {
                // σ⁺a and σ⁻a†
                (DriveFrame::Red, 0) if nj > 0 => Some((1, nj - 1, (nj as f64).sqrt())),
                (DriveFrame::Red, 1) if nj < n_max => Some((0, nj + 1, ((nj + 1) as f64).sqrt())),
                // σ⁺a† and σ⁻a
                (DriveFrame::Blue, 0) if nj < n_max => Some((1, nj + 1, ((nj + 1) as f64).sqrt())),
                (DriveFrame::Blue, 1) if nj > 0 => Some((0, nj - 1, (nj as f64).sqrt())),
                (DriveFrame::Carrier, _) => Some((1 - s, nj, 1.0)),
                _ => None,
            };
            if let Some((s2, n2, amp)) = target {
                entries.push((spec.replace(col, j, s2, n2), col, half * amp));
            }
        }
    }

    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
    for (r, col, v) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == r && last.1 == col => last.2 += v,
            _ => merged.push((r, col, v)),
        }
    }
    merged.retain(|e| e.2 != 0.0);
    let scale = merged.iter().map(|e| e.2.abs()).fold(1.0, f64::max);
    let lookup = |r: usize, col: usize| {
        merged.binary_search_by(|e| (e.0, e.1).cmp(&(r, col))).map_or(0.0, |i| merged[i].2)
    };
    let herm = merged.iter().map(|&(r, col, v)| (v - lookup(col, r)).abs()).fold(0.0, f64::max);
    if herm > 1e-12 * scale {
        return Err(Error::Numerical(format!("assembled Hamiltonian not Hermitian ({herm:e})")));
    }
    Ok(SparseSymmetric { dim: d, entries: merged })
}

/// Per-site thermal populations `P_n = n̄ⁿ/(n̄+1)ⁿ⁺¹`, truncated and renormalized.
pub fn thermal_populations(nbar: f64, n_max: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..=n_max).map(|n| nbar.powi(n as i32) / (nbar + 1.0).powi(n as i32 + 1)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Product of per-site thermal phonon mixtures with every spin in `|g⟩`.
pub fn thermal_state(spec: SpaceSpec, nbar: &[f64]) -> Result<QuantumState> {
    let p = thermal_diagonal(spec, nbar)?;
    let d = spec.dim();
    QuantumState::new(spec, CMatrix::from_fn(d, d, |i, j| if i == j { c(p[i]) } else { c(0.0) }))
}

/// Diagonal of [`thermal_state`].
pub(crate) fn thermal_diagonal(spec: SpaceSpec, nbar: &[f64]) -> Result<Vec<f64>> {
    if nbar.len() != spec.n_sites() {
        return Err(Error::contract(format!("{} nbar values for {} sites", nbar.len(), spec.n_sites())));
    }
    if nbar.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::contract("nbar values must be non-negative"));
    }
    let per_site: Vec<Vec<f64>> = nbar.iter().map(|&x| thermal_populations(x, spec.n_max())).collect();
    Ok((0..spec.dim())
        .map(|i| {
            let mut p = 1.0;
            for (j, pops) in per_site.iter().enumerate() {
                let (s, n) = spec.local(i, j);
                if s == 1 {
                    return 0.0;
                }
                p *= pops[n];
            }
            p
        })
        .collect())
}

/// Total polariton number `N_tot = Σ_j (n_j + |e⟩_j⟨e|)`.
pub fn excitation_operator(spec: SpaceSpec) -> OperatorMatrix {
    let d = spec.dim();
    let diag = (0..d).map(|i| {
        (0..spec.n_sites())
            .map(|j| {
                let (s, n) = spec.local(i, j);
                (s + n) as f64
            })
            .sum::<f64>()
    });
    let v: Vec<Complex64> = diag.map(c).collect();
    OperatorMatrix { spec, mat: CMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)) }
}

/// Partition of basis indices into the connected components of the
/// non-zero pattern of one or more operators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    label: Vec<usize>,
}

impl Partition {
    pub fn from_patterns(dim: usize, mats: &[&CMatrix]) -> Self {
        let mut parent: Vec<usize> = (0..dim).collect();
        for m in mats {
            for j in 0..dim {
                for i in 0..dim {
                    if i != j && m[(i, j)] != Complex64::new(0.0, 0.0) {
                        let (a, b) = (find_root(&mut parent, i), find_root(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
        Self::from_parents(parent)
    }

    /// Coarsest partition in which every group lies inside one block.
    pub fn from_groups<'a>(dim: usize, groups: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut parent: Vec<usize> = (0..dim).collect();
        for g in groups {
            for w in g.windows(2) {
                let (a, b) = (find_root(&mut parent, w[0]), find_root(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        Self::from_parents(parent)
    }

    fn from_parents(mut parent: Vec<usize>) -> Self {
        let dim = parent.len();
        let mut root_block = vec![usize::MAX; dim];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut label = vec![0; dim];
        for i in 0..dim {
            let r = find_root(&mut parent, i);
            if root_block[r] == usize::MAX {
                root_block[r] = blocks.len();
                blocks.push(Vec::new());
            }
            label[i] = root_block[r];
            blocks[root_block[r]].push(i);
        }
        Self { blocks, label }
    }

    pub fn dim(&self) -> usize {
        self.label.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, index: usize) -> usize {
        self.label[index]
    }

    /// Position of each basis index inside its block.
    pub(crate) fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.dim()];
        for b in &self.blocks {
            for (p, &i) in b.iter().enumerate() {
                pos[i] = p;
            }
        }
        pos
    }
}

fn find_root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub(crate) fn submatrix(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

#[derive(Debug, Clone)]
struct EigenBlock {
    indices: Vec<usize>,
    energies: Vec<f64>,
    vectors: CMatrix,
    /// Same eigenvectors when they are purely real.
    real: Option<DMatrix<f64>>,
}

/// Blockwise Hermitian eigendecomposition of a Hamiltonian.
#[derive(Debug, Clone)]
pub struct Spectrum {
    dim: usize,
    partition: Partition,
    blocks: Vec<EigenBlock>,
}

impl Spectrum {
    pub fn new(h: &OperatorMatrix) -> Result<Self> {
        Self::from_matrix(&h.mat)
    }

    pub fn from_matrix(h: &CMatrix) -> Result<Self> {
        let dim = h.nrows();
        let partition = Partition::from_patterns(dim, &[h]);
        let blocks = partition
            .blocks()
            .iter()
            .map(|idx| {
                let sub = submatrix(h, idx);
                let (energies, vectors) = hermitian_eigen(&sub)?;
                let real = vectors.iter().all(|z| z.im == 0.0).then(|| vectors.map(|z| z.re));
                Ok(EigenBlock { indices: idx.clone(), energies, vectors, real })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, partition, blocks })
    }

    pub(crate) fn from_sparse(h: &SparseSymmetric) -> Result<Self> {
        let dim = h.dim;
        let pairs: Vec<[usize; 2]> = h.entries.iter().filter(|e| e.0 != e.1).map(|e| [e.0, e.1]).collect();
        let partition = Partition::from_groups(dim, pairs.iter().map(|p| p.as_slice()));
        let pos = partition.positions();
        let mut subs: Vec<DMatrix<f64>> = partition.blocks().iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        for &(r, col, v) in &h.entries {
            subs[partition.block_of(r)][(pos[r], pos[col])] = v;
        }
        let blocks = partition
            .blocks()
            .iter()
            .zip(subs)
            .map(|(idx, sub)| {
                let (energies, real) = real_symmetric_eigen(sub)?;
                Ok(EigenBlock { indices: idx.clone(), energies, vectors: real.map(c), real: Some(real) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, partition, blocks })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn energies(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.blocks.iter().flat_map(|b| b.energies.iter().cloned()).collect();
        e.sort_by(f64::total_cmp);
        e
    }

    /// `exp(−iHt)`, block by block.
    pub fn propagator(&self, t: f64) -> Propagator {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let u = match &b.real {
                    Some(v) => {
                        let (cos, sin): (Vec<f64>, Vec<f64>) = b.energies.iter().map(|e| ((e * t).cos(), (e * t).sin())).unzip();
                        let vc = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| v[(i, k)] * cos[k]);
                        let vs = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| -v[(i, k)] * sin[k]);
                        let vt = v.transpose();
                        Split { re: vc * &vt, im: vs * &vt }.join()
                    }
                    None => {
                        let phased = CMatrix::from_fn(b.vectors.nrows(), b.vectors.ncols(), |i, k| {
                            b.vectors[(i, k)] * Complex64::from_polar(1.0, -b.energies[k] * t)
                        });
                        mul(&phased, &b.vectors.adjoint())
                    }
                };
                (b.indices.clone(), u)
            })
            .collect();
        Propagator { dim: self.dim, blocks }
    }

    /// Eigenvectors and energies regrouped into the blocks of a coarser
    /// partition. Eigenvector columns keep the fine-block order.
    pub(crate) fn embed(&self, coarse: &Partition) -> Result<Vec<(Vec<f64>, CMatrix)>> {
        let pos = coarse.positions();
        let mut out: Vec<(Vec<f64>, CMatrix)> =
            coarse.blocks().iter().map(|b| (Vec::with_capacity(b.len()), CMatrix::zeros(b.len(), b.len()))).collect();
        for fb in &self.blocks {
            let target = coarse.block_of(fb.indices[0]);
            if fb.indices.iter().any(|&i| coarse.block_of(i) != target) {
                return Err(Error::Numerical("spectrum partition is not a refinement of the target partition".into()));
            }
            let (energies, vectors) = &mut out[target];
            for (k, &e) in fb.energies.iter().enumerate() {
                let col = energies.len();
                energies.push(e);
                for (r, &i) in fb.indices.iter().enumerate() {
                    vectors[(pos[i], col)] = fb.vectors[(r, k)];
                }
            }
        }
        Ok(out)
    }
}

fn real_symmetric_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 1 {
        return Ok((vec![m[(0, 0)]], DMatrix::identity(1, 1)));
    }
    let scale = m.amax();
    let eig = SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numerical(format!("eigendecomposition failed for a {n}x{n} block (max |H_ij| = {scale:e})"))
    })?;
    Ok((eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors))
}

fn hermitian_eigen(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = m.nrows();
    if n == 1 {
        return Ok((vec![m[(0, 0)].re], CMatrix::identity(1, 1)));
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let fail = || Error::Numerical(format!("eigendecomposition failed for a {n}x{n} block (max |H_ij| = {scale:e})"));
    if m.iter().all(|z| z.im == 0.0) {
        let real = m.map(|z| z.re);
        let eig = SymmetricEigen::try_new(real, EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(fail)?;
        Ok((eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors.map(c)))
    } else {
        let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(fail)?;
        Ok((eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors))
    }
}

/// Block-diagonal unitary stored as `(basis indices, dense block)` pairs.
#[derive(Debug, Clone)]
pub struct Propagator {
    dim: usize,
    blocks: Vec<(Vec<usize>, CMatrix)>,
}

impl Propagator {
    pub fn identity(dim: usize) -> Self {
        Self { dim, blocks: (0..dim).map(|i| (vec![i], CMatrix::identity(1, 1))).collect() }
    }

    /// Wraps a dense unitary; blocks follow its own non-zero pattern.
    pub fn from_dense(u: &CMatrix) -> Self {
        let partition = Partition::from_patterns(u.nrows(), &[u]);
        let blocks = partition.blocks().iter().map(|idx| (idx.clone(), submatrix(u, idx))).collect();
        Self { dim: u.nrows(), blocks }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn blocks(&self) -> &[(Vec<usize>, CMatrix)] {
        &self.blocks
    }

    /// Product `U_k ⋯ U_1` of propagators applied in slice order, formed
    /// blockwise on the join of their partitions.
    pub fn compose(dim: usize, steps: &[Propagator]) -> Result<Propagator> {
        if steps.iter().any(|u| u.dim != dim) {
            return Err(Error::contract("propagator dimensions differ"));
        }
        let partition =
            Partition::from_groups(dim, steps.iter().flat_map(|u| u.blocks.iter().map(|(idx, _)| idx.as_slice())));
        let mut acc: Vec<CMatrix> = partition.blocks().iter().map(|b| CMatrix::identity(b.len(), b.len())).collect();
        for u in steps {
            for (a, b) in acc.iter_mut().zip(u.embed(&partition)?) {
                *a = mul(&b, a);
            }
        }
        Ok(Propagator { dim, blocks: partition.blocks().iter().cloned().zip(acc).collect() })
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut u = CMatrix::zeros(self.dim, self.dim);
        for (idx, b) in &self.blocks {
            for (r, &i) in idx.iter().enumerate() {
                for (s, &j) in idx.iter().enumerate() {
                    u[(i, j)] = b[(r, s)];
                }
            }
        }
        u
    }

    /// `max |U†U − I|` over all blocks.
    pub fn unitarity_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for (_, b) in &self.blocks {
            let g = b.adjoint() * b;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let target = if i == j { c(1.0) } else { c(0.0) };
                    err = err.max((g[(i, j)] - target).norm());
                }
            }
        }
        err
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        let d = self.dim;
        let mut left = CMatrix::zeros(d, d);
        for (idx, u) in &self.blocks {
            let rows = CMatrix::from_fn(idx.len(), d, |r, j| rho[(idx[r], j)]);
            let prod = mul(u, &rows);
            for (r, &i) in idx.iter().enumerate() {
                left.row_mut(i).copy_from(&prod.row(r));
            }
        }
        let mut out = CMatrix::zeros(d, d);
        for (idx, u) in &self.blocks {
            let cols = CMatrix::from_fn(d, idx.len(), |i, r| left[(i, idx[r])]);
            let prod = mul(&cols, &u.adjoint());
            for (r, &j) in idx.iter().enumerate() {
                out.column_mut(j).copy_from(&prod.column(r));
            }
        }
        out
    }

    /// Blocks regrouped into a coarser partition as dense sub-matrices.
    pub(crate) fn embed(&self, coarse: &Partition) -> Result<Vec<CMatrix>> {
        embed_blocks(self.blocks.iter().map(|(idx, u)| (idx.as_slice(), u)), coarse)
    }

    /// `U ρ U†` for a block-diagonal `ρ`, staying block-diagonal.
    pub(crate) fn conjugate_blocks(&self, rho: &BlockMatrix) -> Result<BlockMatrix> {
        if rho.partition.dim() != self.dim {
            return Err(Error::contract("state and propagator dimensions differ"));
        }
        let groups = self.blocks.iter().map(|(idx, _)| idx.as_slice()).chain(rho.partition.blocks().iter().map(|b| b.as_slice()));
        let partition = Partition::from_groups(self.dim, groups);
        let u = self.embed(&partition)?;
        let r = embed_blocks(rho.partition.blocks().iter().map(|b| b.as_slice()).zip(&rho.blocks), &partition)?;
        let blocks = u.iter().zip(r).map(|(u, r)| mul(&mul(u, &r), &u.adjoint())).collect();
        Ok(BlockMatrix::new(partition, blocks))
    }
}

fn embed_blocks<'a>(blocks: impl Iterator<Item = (&'a [usize], &'a CMatrix)>, coarse: &Partition) -> Result<Vec<CMatrix>> {
    let pos = coarse.positions();
    let mut out: Vec<CMatrix> = coarse.blocks().iter().map(|b| CMatrix::zeros(b.len(), b.len())).collect();
    for (idx, u) in blocks {
        let target = coarse.block_of(idx[0]);
        if idx.iter().any(|&i| coarse.block_of(i) != target) {
            return Err(Error::Numerical("block partition is not a refinement of the target partition".into()));
        }
        for (r, &i) in idx.iter().enumerate() {
            for (s, &j) in idx.iter().enumerate() {
                out[target][(pos[i], pos[j])] = u[(r, s)];
            }
        }
    }
    Ok(out)
}

/// Block-diagonal matrix on a partition of the basis.
#[derive(Debug, Clone)]
pub(crate) struct BlockMatrix {
    partition: Partition,
    pos: Vec<usize>,
    blocks: Vec<CMatrix>,
}

impl BlockMatrix {
    fn new(partition: Partition, blocks: Vec<CMatrix>) -> Self {
        let pos = partition.positions();
        Self { partition, pos, blocks }
    }

    pub(crate) fn diagonal(values: &[f64]) -> Self {
        let partition = Partition::from_groups(values.len(), std::iter::empty());
        let blocks = values.iter().map(|&v| CMatrix::from_element(1, 1, c(v))).collect();
        Self::new(partition, blocks)
    }

    /// `ρ[idx, idx]` as a dense matrix.
    pub(crate) fn principal(&self, idx: &[usize]) -> CMatrix {
        let p = &self.partition;
        CMatrix::from_fn(idx.len(), idx.len(), |r, s| {
            let (i, j) = (idx[r], idx[s]);
            let b = p.block_of(i);
            if b == p.block_of(j) {
                self.blocks[b][(self.pos[i], self.pos[j])]
            } else {
                c(0.0)
            }
        })
    }

    #[cfg(test)]
    pub(crate) fn to_dense(&self) -> CMatrix {
        let d = self.partition.dim();
        CMatrix::from_fn(d, d, |i, j| {
            let b = self.partition.block_of(i);
            if b == self.partition.block_of(j) {
                self.blocks[b][(self.pos[i], self.pos[j])]
            } else {
                c(0.0)
            }
        })
    }
}

/// `ρ → U ρ U†` with `U = exp(−iH t)`.
pub fn evolve(state: &QuantumState, h: &OperatorMatrix, duration: f64) -> Result<QuantumState> {
    h.same_space(state.spec)?;
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::contract(format!("duration must be finite and non-negative, got {duration}")));
    }
    let herm = hermiticity_error(&h.mat);
    if herm > 1e-10 * h.max_abs().max(1.0) {
        return Err(Error::contract(format!("Hamiltonian is not Hermitian (deviation {herm:e})")));
    }
    let u = Spectrum::new(h)?.propagator(duration);
    evolve_with(state, &u)
}

/// Applies a precomputed propagator, checking unitarity and trace.
pub fn evolve_with(state: &QuantumState, u: &Propagator) -> Result<QuantumState> {
    if u.dim() != state.spec.dim() {
        return Err(Error::contract("propagator dimension does not match state"));
    }
    let unit_err = u.unitarity_error();
    if unit_err > 1e-9 {
        return Err(Error::Numerical(format!("propagator not unitary (|U†U − I| = {unit_err:e})")));
    }
    let before = state.trace();
    let rho = u.conjugate(&state.rho);
    let out = QuantumState { spec: state.spec, rho };
    let after = out.trace();
    if (after - before).abs() > 1e-9 {
        return Err(Error::Numerical(format!("trace drifted from {before} to {after}")));
    }
    Ok(out)
}
