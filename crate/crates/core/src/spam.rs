//! State-preparation and measurement (SPAM) error model.
//!
//! Theoretical spin populations `(P_g, P_e)` are mapped to measured
//! populations by `M = D · Mmap`, where `D = [[1−ε_g, ε_e], [ε_g, 1−ε_e]]` is the
//! fluorescence detection matrix and `Mmap = [[1, ε_e′], [0, 1−ε_e′]]` the
//! phonon-to-spin mapping error. Both are column-stochastic, and so is `M`.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::ModeParams;
use crate::dynamics::{build_hamiltonian, thermal_populations, DriveParams, HamiltonianSpec, Spectrum};
use crate::error::{Error, Result};
use crate::hilbert::{SpaceSpec, Spin};

/// Fock cutoff used by the single-ion plateau model.
const PLATEAU_CUTOFF: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamModel {
    /// Probability that `|g⟩` is detected bright.
    pub eps_g: f64,
    /// Probability that `|e⟩` is detected dark.
    pub eps_e: f64,
    /// Phonon-to-spin mapping error.
    pub eps_e_prime: f64,
    /// Per-site mean thermal phonon number of the initial state.
    pub nbar: Vec<f64>,
}

impl SpamModel {
    pub fn ideal(n_sites: usize) -> Self {
        Self { eps_g: 0.0, eps_e: 0.0, eps_e_prime: 0.0, nbar: vec![0.0; n_sites] }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_g", self.eps_g), ("eps_e", self.eps_e), ("eps_e_prime", self.eps_e_prime)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if let Some(x) = self.nbar.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::config(format!("nbar values must be non-negative, got {x}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> SpamMatrix {
        spam_matrix(self)
    }
}

/// 2×2 matrix acting on `(P_g, P_e)` column vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpamMatrix(pub [[f64; 2]; 2]);

impl SpamMatrix {
    pub fn identity() -> Self {
        SpamMatrix([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn mul(&self, other: &SpamMatrix) -> SpamMatrix {
        let a = &self.0;
        let b = &other.0;
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        SpamMatrix(m)
    }

    pub fn apply(&self, p_g: f64, p_e: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0][0] * p_g + m[0][1] * p_e, m[1][0] * p_g + m[1][1] * p_e)
    }

    /// Measured bright probability for a theoretical `P_e`.
    pub fn bright(&self, p_e: f64) -> f64 {
        self.apply(1.0 - p_e, p_e).1
    }

    /// Largest deviation of a column sum from 1.
    pub fn stochasticity_error(&self) -> f64 {
        let m = &self.0;
        ((m[0][0] + m[1][0]) - 1.0).abs().max(((m[0][1] + m[1][1]) - 1.0).abs())
    }
}

pub fn detection_matrix(eps_g: f64, eps_e: f64) -> SpamMatrix {
    SpamMatrix([[1.0 - eps_g, eps_e], [eps_g, 1.0 - eps_e]])
}

pub fn mapping_matrix(eps_e_prime: f64) -> SpamMatrix {
    SpamMatrix([[1.0, eps_e_prime], [0.0, 1.0 - eps_e_prime]])
}

/// Detection matrix times mapping matrix.
pub fn spam_matrix(spam: &SpamModel) -> SpamMatrix {
    detection_matrix(spam.eps_g, spam.eps_e).mul(&mapping_matrix(spam.eps_e_prime))
}

/// Bright probability after readout of a single ion prepared from `|g,n⟩`,
/// for `n = 0..=PLATEAU_CUTOFF`. Pulses are ideal π-pulses with no hopping:
/// `(prepare_phonon_table, ground_table)`.
struct ReadoutTable {
    phonon: Vec<f64>,
    ground: Vec<f64>,
}

fn readout_table() -> &'static ReadoutTable {
    static TABLE: OnceLock<ReadoutTable> = OnceLock::new();
    TABLE.get_or_init(|| build_readout_table().expect("single-ion readout model is well posed"))
}

fn build_readout_table() -> Result<ReadoutTable> {
    use std::f64::consts::PI;
    let spec = SpaceSpec::new(1, PLATEAU_CUTOFF)?;
    let pulse = |drive: DriveParams| -> Result<nalgebra::DMatrix<Complex64>> {
        let h = build_hamiltonian(spec, &HamiltonianSpec { mode: ModeParams::zeros(1), drive, include_hopping: false })?;
        Ok(Spectrum::new(&h)?.propagator(PI).to_dense())
    };
    let blue = pulse(DriveParams::blue(1, 0, 1.0))?;
    let carrier = pulse(DriveParams::carrier(1, 0, 1.0))?;
    let red = pulse(DriveParams::red(1, 0, 1.0))?;
    let prepared = &red * &carrier * &blue;

    let excited: Vec<usize> =
        (0..=PLATEAU_CUTOFF).map(|n| spec.basis_index(&[Spin::Excited], &[n])).collect::<Result<_>>()?;
    let bright = |u: &nalgebra::DMatrix<Complex64>, col: usize| excited.iter().map(|&r| u[(r, col)].norm_sqr()).sum::<f64>();
    let mut phonon = Vec::with_capacity(PLATEAU_CUTOFF + 1);
    let mut ground = Vec::with_capacity(PLATEAU_CUTOFF + 1);
    for n in 0..=PLATEAU_CUTOFF {
        let col = spec.basis_index(&[Spin::Ground], &[n])?;
        phonon.push(bright(&prepared, col));
        ground.push(bright(&red, col));
    }
    Ok(ReadoutTable { phonon, ground })
}

/// Theoretical bright probabilities `(P_e^th[|g,1⟩], P_e^th[|g,0⟩])` of a single
/// ion with thermal occupation `nbar`, for ideal preparation and readout pulses.
pub fn plateau_readout_model(nbar: f64) -> (f64, f64) {
    let table = readout_table();
    let p = thermal_populations(nbar, PLATEAU_CUTOFF);
    let one = p.iter().zip(&table.phonon).map(|(a, b)| a * b).sum();
    let zero = p.iter().zip(&table.ground).map(|(a, b)| a * b).sum();
    (one, zero)
}

/// Measured plateaus `(P_e[|g,1⟩], P_e[|g,0⟩])` predicted by the SPAM model.
pub fn forward_plateaus(nbar: f64, eps_g: f64, eps_e: f64, eps_e_prime: f64) -> (f64, f64) {
    let m = detection_matrix(eps_g, eps_e).mul(&mapping_matrix(eps_e_prime));
    let (one, zero) = plateau_readout_model(nbar);
    (m.bright(one), m.bright(zero))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauFit {
    /// Time- and ion-averaged mean phonon number.
    pub mean_nbar: f64,
    pub eps_e_prime: f64,
}

/// Solves the two plateau equations for `(n̄, ε_e′)` in the unit square.
///
/// `P_e = ε_g + (1 − ε_e′)(1 − ε_g − ε_e) P_e^th(n̄)` holds for both
/// preparations, so the ratio of the two equations fixes `n̄` alone.
pub fn extract_spam_from_plateaus(p_e_one: f64, p_e_zero: f64, eps_g: f64, eps_e: f64) -> Result<PlateauFit> {
    for (name, v) in [("P_e_one", p_e_one), ("P_e_zero", p_e_zero), ("eps_g", eps_g), ("eps_e", eps_e)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InfeasibleData(format!("{name} = {v} lies outside [0, 1]")));
        }
    }
    if p_e_zero > p_e_one {
        return Err(Error::InfeasibleData(format!(
            "ground plateau {p_e_zero} exceeds phonon plateau {p_e_one}"
        )));
    }
    let contrast = 1.0 - eps_g - eps_e;
    if contrast <= 0.0 {
        return Err(Error::InfeasibleData("detection errors leave no contrast".into()));
    }
    let signal_one = p_e_one - eps_g;
    let signal_zero = p_e_zero - eps_g;
    if signal_one <= 0.0 {
        return Err(Error::InfeasibleData("phonon plateau is at or below the detection floor".into()));
    }
    const FLOOR: f64 = 1e-12;
    let mean_nbar = if signal_zero.abs() <= FLOOR {
        0.0
    } else if signal_zero < 0.0 {
        return Err(Error::InfeasibleData("ground plateau is below the detection floor".into()));
    } else {
        let target = signal_one / signal_zero;
        let ratio = |nbar: f64| {
            let (one, zero) = plateau_readout_model(nbar);
            one / zero
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if ratio(hi) > target {
            return Err(Error::InfeasibleData(format!("plateau ratio {target} requires n̄ > 1")));
        }
        // The ratio falls monotonically from +∞ at n̄ = 0.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let (one, _) = plateau_readout_model(mean_nbar);
    let eps_e_prime = 1.0 - signal_one / (contrast * one);
    if !(-FLOOR..=1.0 + FLOOR).contains(&eps_e_prime) {
        return Err(Error::InfeasibleData(format!("mapping error {eps_e_prime} lies outside [0, 1]")));
    }
    Ok(PlateauFit { mean_nbar, eps_e_prime: eps_e_prime.clamp(0.0, 1.0) })
}
