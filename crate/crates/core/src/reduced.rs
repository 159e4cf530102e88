//! Small reference models: the three-level blockade approximation, the
//! Jaynes-Cummings ladder, blockade margins and the second-order 1↔3
//! hopping estimate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::ModeParams;
use crate::error::{Error, Result};
use crate::hilbert::{SpaceSpec, Spin};

/// Parameters of the three-level model, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    pub kappa_12: f64,
    pub omega_12: f64,
    pub omega_r_2: f64,
}

impl ThreeLevelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_12.is_finite() && self.kappa_12 > 0.0) {
            return Err(Error::config(format!("kappa_12 must be positive, got {}", self.kappa_12)));
        }
        if !self.omega_12.is_finite() || !self.omega_r_2.is_finite() {
            return Err(Error::config("omega_12 and omega_r_2 must be finite"));
        }
        Ok(())
    }
}

/// Generator on `{|g,1⟩₁|g,0⟩₂, |g,0⟩₁|g,1⟩₂, |g,0⟩₁|e,0⟩₂}` (site 3 in `|g,0⟩`),
/// with energies measured from the first state.
pub fn three_level_hamiltonian(p: &ThreeLevelParams) -> Result<DMatrix<f64>> {
    p.validate()?;
    let half = 0.5 * p.omega_r_2;
    Ok(DMatrix::from_row_slice(
        3,
        3,
        &[0.0, p.kappa_12, 0.0, p.kappa_12, -p.omega_12, half, 0.0, half, -p.omega_12],
    ))
}

/// Indices of the three model states in a space of at least two sites.
pub fn three_level_basis(space: SpaceSpec) -> Result<[usize; 3]> {
    let n = space.n_sites();
    if n < 2 {
        return Err(Error::contract("the three-level model needs at least two sites"));
    }
    let ground = vec![Spin::Ground; n];
    let mut excited = ground.clone();
    excited[1] = Spin::Excited;
    let mut first = vec![0; n];
    first[0] = 1;
    let mut second = vec![0; n];
    second[1] = 1;
    Ok([
        space.basis_index(&ground, &first)?,
        space.basis_index(&ground, &second)?,
        space.basis_index(&excited, &vec![0; n])?,
    ])
}

/// Dressed doublet of the `n`-th rung.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JcRung {
    pub n: usize,
    pub minus: f64,
    pub plus: f64,
}

/// Resonant ladder `E(|±,n⟩) = n ω_j ± √n Ω^r/2` relative to `|g,0⟩`.
pub fn jc_ladder(omega_j: f64, omega_r: f64, n_levels: usize) -> Result<Vec<JcRung>> {
    if n_levels == 0 {
        return Err(Error::contract("n_levels must be at least 1"));
    }
    Ok((1..=n_levels)
        .map(|n| {
            let base = n as f64 * omega_j;
            let split = (n as f64).sqrt() * omega_r / 2.0;
            JcRung { n, minus: base - split, plus: base + split }
        })
        .collect())
}

/// `(|κ|/|Ω/2 − ω_jk|, |κ|/|Ω/2 + ω_jk|)`; infinite on exact resonance.
pub fn blockade_margin(kappa_jk: f64, omega_jk: f64, omega_r_k: f64) -> (f64, f64) {
    let ratio = |gap: f64| {
        if kappa_jk == 0.0 {
            0.0
        } else if gap == 0.0 {
            f64::INFINITY
        } else {
            kappa_jk.abs() / gap.abs()
        }
    };
    (ratio(omega_r_k / 2.0 - omega_jk), ratio(omega_r_k / 2.0 + omega_jk))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamanEstimate {
    /// Direct plus second-order coupling between sites 1 and 3.
    pub kappa_eff: f64,
    pub direct: f64,
    pub second_order: f64,
    /// `ω_13 = ω_1 − ω_3`.
    pub omega_13: f64,
    /// False when site 2 is within `10κ` of either neighbour.
    pub reliable: bool,
}

/// Effective 1↔3 coupling through the intermediate site:
/// `κ_13 + κ_12 κ_23 (1/ω_12 − 1/ω_23)/2`.
pub fn raman_hopping_rate(mode: &ModeParams) -> Result<RamanEstimate> {
    if mode.n_sites() != 3 {
        return Err(Error::contract(format!("three sites required, got {}", mode.n_sites())));
    }
    mode.validate()?;
    let (k12, k23, k13) = (mode.kappa[(0, 1)], mode.kappa[(1, 2)], mode.kappa[(0, 2)]);
    let (w12, w23) = (mode.omega_diff(0, 1), mode.omega_diff(1, 2));
    let scale = 10.0 * k12.max(k23);
    let reliable = w12.abs() >= scale && w23.abs() >= scale;
    let second_order = if k12 == 0.0 || k23 == 0.0 { 0.0 } else { 0.5 * k12 * k23 * (1.0 / w12 - 1.0 / w23) };
    Ok(RamanEstimate {
        kappa_eff: k13 + second_order,
        direct: k13,
        second_order,
        omega_13: mode.omega_diff(0, 2),
        reliable,
    })
}
