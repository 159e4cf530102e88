//! Ion-chain geometry and the local-mode parameters derived from it.
//!
//! The axial equilibrium is solved in the dimensionless units of the
//! characteristic length `l = (e²/(4πε₀ M ω_z²))^(1/3)`, where the force on
//! ion `i` is `-u_i + Σ_{j≠i} sgn(u_i - u_j) / (u_i - u_j)²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::units::{coulomb_constant, ELEMENTARY_CHARGE, YB171_ION_MASS};

const MAX_NEWTON_ITERATIONS: usize = 200;
const FORCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_ions: usize,
    /// kg
    pub ion_mass: f64,
    /// C
    pub ion_charge: f64,
    /// Transverse trap frequency along X (rad/s); the hopping direction.
    pub omega_x: f64,
    pub omega_y: f64,
    /// Axial trap frequency (rad/s).
    pub omega_z: f64,
    /// Explicit axial coordinates (m), bypassing the equilibrium solve.
    pub positions_override: Option<Vec<f64>>,
}

impl ChainConfig {
    /// A chain of Yb-171 ions with the given trap frequencies in rad/s.
    pub fn ytterbium(n_ions: usize, omega_x: f64, omega_y: f64, omega_z: f64) -> Self {
        Self {
            n_ions,
            ion_mass: YB171_ION_MASS,
            ion_charge: ELEMENTARY_CHARGE,
            omega_x,
            omega_y,
            omega_z,
            positions_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ions == 0 {
            return Err(Error::config("n_ions must be at least 1"));
        }
        for (name, v) in [
            ("ion_mass", self.ion_mass),
            ("ion_charge", self.ion_charge),
            ("omega_x", self.omega_x),
            ("omega_y", self.omega_y),
            ("omega_z", self.omega_z),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.omega_x <= self.omega_z {
            return Err(Error::config(format!(
                "omega_x ({}) must exceed omega_z ({}) for a linear chain",
                self.omega_x, self.omega_z
            )));
        }
        if let Some(pos) = &self.positions_override {
            if pos.len() != self.n_ions {
                return Err(Error::config(format!(
                    "positions_override has {} entries, expected {}",
                    pos.len(),
                    self.n_ions
                )));
            }
            check_increasing(pos)?;
        }
        Ok(())
    }

    /// Characteristic axial length scale `l` in m.
    pub fn length_scale(&self) -> f64 {
        (coulomb_constant(self.ion_charge) / (self.ion_mass * self.omega_z * self.omega_z)).cbrt()
    }
}

fn check_increasing(pos: &[f64]) -> Result<()> {
    for (i, w) in pos.windows(2).enumerate() {
        if !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::config("positions must be finite"));
        }
        if w[1] == w[0] {
            return Err(Error::DegenerateGeometry(i, i + 1));
        }
        if w[1] < w[0] {
            return Err(Error::config(format!("positions must be strictly increasing (index {})", i + 1)));
        }
    }
    Ok(())
}

/// Rotating-frame parameters of the local transverse modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeParams {
    /// Local mode shifts `ω_j` relative to the common-mode frequency (rad/s).
    pub omega_shift: Vec<f64>,
    /// Symmetric hopping matrix `κ_jk` (rad/s) with zero diagonal.
    pub kappa: DMatrix<f64>,
    /// Inter-ion distances `d_jk` (m), when the parameters came from a geometry.
    pub distances: Option<DMatrix<f64>>,
}

impl ModeParams {
    pub fn new(omega_shift: Vec<f64>, kappa: DMatrix<f64>) -> Result<Self> {
        let m = Self { omega_shift, kappa, distances: None };
        m.validate()?;
        Ok(m)
    }

    /// No shifts and no hopping.
    pub fn zeros(n: usize) -> Self {
        Self { omega_shift: vec![0.0; n], kappa: DMatrix::zeros(n, n), distances: None }
    }

    /// Builds the full hopping matrix from nearest-neighbour couplings,
    /// extending to longer range with the `1/d³` law: the implied spacings
    /// are `d_{j,j+1} ∝ κ_{j,j+1}^{-1/3}` and `κ_jk = (Σ d)^{-3}` in the same units.
    pub fn from_nearest_neighbour(omega_shift: Vec<f64>, kappa_nn: &[f64]) -> Result<Self> {
        let n = omega_shift.len();
        if n == 0 {
            return Err(Error::config("at least one site required"));
        }
        if kappa_nn.len() + 1 != n {
            return Err(Error::config(format!(
                "{} nearest-neighbour couplings given for {n} sites",
                kappa_nn.len()
            )));
        }
        let mut kappa = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in (j + 1)..n {
                let couplings = &kappa_nn[j..k];
                let value = if couplings.iter().any(|&c| c <= 0.0) {
                    // A broken link decouples the segments entirely.
                    if k == j + 1 { couplings[0].max(0.0) } else { 0.0 }
                } else {
                    let span: f64 = couplings.iter().map(|c| c.powf(-1.0 / 3.0)).sum();
                    span.powi(-3)
                };
                kappa[(j, k)] = value;
                kappa[(k, j)] = value;
            }
        }
        Self::new(omega_shift, kappa)
    }

    pub fn n_sites(&self) -> usize {
        self.omega_shift.len()
    }

    /// `ω_jk = ω_j − ω_k`.
    pub fn omega_diff(&self, j: usize, k: usize) -> f64 {
        self.omega_shift[j] - self.omega_shift[k]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.omega_shift.len();
        if self.kappa.nrows() != n || self.kappa.ncols() != n {
            return Err(Error::config(format!(
                "kappa is {}x{}, expected {n}x{n}",
                self.kappa.nrows(),
                self.kappa.ncols()
            )));
        }
        if self.omega_shift.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("omega_shift entries must be finite"));
        }
        for j in 0..n {
            if self.kappa[(j, j)] != 0.0 {
                return Err(Error::config(format!("kappa diagonal entry {j} must be zero")));
            }
            for k in 0..n {
                let v = self.kappa[(j, k)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::config(format!("kappa[{j}][{k}] must be finite and non-negative")));
                }
                if v != self.kappa[(k, j)] {
                    return Err(Error::config(format!("kappa is not symmetric at ({j}, {k})")));
                }
            }
        }
        Ok(())
    }
}

/// Axial equilibrium coordinates (m), centred on zero and sorted ascending.
pub fn equilibrium_positions(config: &ChainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if let Some(pos) = &config.positions_override {
        return Ok(pos.clone());
    }
    let l = config.length_scale();
    let u = solve_dimensionless(config.n_ions)?;
    Ok(u.iter().map(|x| x * l).collect())
}

fn coulomb_force(u: &DVector<f64>) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(n, |i, _| {
        let mut f = -u[i];
        for j in 0..n {
            if j != i {
                let d = u[i] - u[j];
                f += d.signum() / (d * d);
            }
        }
        f
    })
}

fn force_jacobian(u: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = -1.0;
        for j in 0..n {
            if j != i {
                let c = 2.0 / (u[i] - u[j]).abs().powi(3);
                jac[(i, j)] = c;
                diag -= c;
            }
        }
        jac[(i, i)] = diag;
    }
    jac
}

fn ordered(u: &DVector<f64>) -> bool {
    u.as_slice().windows(2).all(|w| w[1] > w[0])
}

/// Damped Newton iteration on the dimensionless force balance.
fn solve_dimensionless(n: usize) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![0.0]);
    }
    // Uniform start using the known scaling of the central spacing.
    let spacing = 2.018 / (n as f64).powf(0.559);
    let mid = (n as f64 - 1.0) / 2.0;
    let mut u = DVector::from_fn(n, |i, _| (i as f64 - mid) * spacing);
    let mut force = coulomb_force(&u);
    let mut residual = force.norm();

    for _ in 0..MAX_NEWTON_ITERATIONS {
        if residual < FORCE_TOLERANCE {
            let mean = u.mean();
            return Ok(u.iter().map(|x| x - mean).collect());
        }
        let step = force_jacobian(&u)
            .lu()
            .solve(&(-&force))
            .ok_or_else(|| Error::Numerical("singular force Jacobian".into()))?;
        let mut damping = 1.0;
        loop {
            let trial = &u + &step * damping;
            if ordered(&trial) {
                let trial_force = coulomb_force(&trial);
                let trial_residual = trial_force.norm();
                if trial_residual < residual || damping < 1e-6 {
                    u = trial;
                    force = trial_force;
                    residual = trial_residual;
                    break;
                }
            }
            damping *= 0.5;
            if damping < 1e-12 {
                return Err(Error::SolverFailure { iterations: MAX_NEWTON_ITERATIONS, residual });
            }
        }
    }
    if residual < FORCE_TOLERANCE {
        let mean = u.mean();
        return Ok(u.iter().map(|x| x - mean).collect());
    }
    Err(Error::SolverFailure { iterations: MAX_NEWTON_ITERATIONS, residual })
}

/// Hopping matrix `κ_jk = e² / (4πε₀ · 2Mω_x · d_jk³)` and distance matrix.
/// `omega_shift` is left at zero; see [`local_mode_shifts`].
pub fn hopping_matrix(config: &ChainConfig, positions: &[f64]) -> Result<ModeParams> {
    let n = positions.len();
    if n != config.n_ions {
        return Err(Error::config(format!("{n} positions given for {} ions", config.n_ions)));
    }
    check_increasing(positions)?;
    let prefactor = coulomb_constant(config.ion_charge) / (2.0 * config.ion_mass * config.omega_x);
    let mut kappa = DMatrix::zeros(n, n);
    let mut distances = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            if j != k {
                let d = (positions[j] - positions[k]).abs();
                distances[(j, k)] = d;
                kappa[(j, k)] = prefactor / (d * d * d);
            }
        }
    }
    Ok(ModeParams { omega_shift: vec![0.0; n], kappa, distances: Some(distances) })
}

/// Default harmonic-approximation shifts `ω_j = −Σ_{k≠j} κ_jk`.
pub fn local_mode_shifts(kappa: &DMatrix<f64>) -> Vec<f64> {
    (0..kappa.nrows())
        .map(|j| -(0..kappa.ncols()).filter(|&k| k != j).map(|k| kappa[(j, k)]).sum::<f64>())
        .collect()
}

/// Geometry, hopping and default shifts in one step.
pub fn derive_mode_params(config: &ChainConfig) -> Result<ModeParams> {
    let positions = equilibrium_positions(config)?;
    let mut mode = hopping_matrix(config, &positions)?;
    mode.omega_shift = local_mode_shifts(&mode.kappa);
    Ok(mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{hz, to_hz};
    use approx::assert_relative_eq;

    fn reference_chain(n: usize) -> ChainConfig {
        ChainConfig::ytterbium(n, hz(3.10e6), hz(2.85e6), hz(0.15e6))
    }

    #[test]
    fn single_ion_sits_at_centre() {
        assert_eq!(equilibrium_positions(&reference_chain(1)).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_ions_match_analytic_solution() {
        // u³ = 1/4 for the force balance of a symmetric pair.
        let cfg = reference_chain(2);
        let l = cfg.length_scale();
        let z = equilibrium_positions(&cfg).unwrap();
        let expected = 0.5f64.powf(2.0 / 3.0) * l;
        assert_relative_eq!(z[1], expected, max_relative = 1e-12);
        assert_relative_eq!(z[0], -expected, max_relative = 1e-12);
    }

    #[test]
    fn three_ions_match_analytic_solution() {
        // Outer ions at ±(5/4)^(1/3) l.
        let cfg = reference_chain(3);
        let z = equilibrium_positions(&cfg).unwrap();
        let expected = 1.25f64.cbrt() * cfg.length_scale();
        assert!(z[1].abs() < 1e-12 * expected);
        assert_relative_eq!(z[2], expected, max_relative = 1e-12);
        assert_relative_eq!(z[2] - z[1], z[1] - z[0], max_relative = 1e-12);
    }

    #[test]
    fn three_ion_spacing_near_reported_value() {
        let z = equilibrium_positions(&reference_chain(3)).unwrap();
        let d = (z[1] - z[0]) * 1e6;
        assert!((d - 10.1).abs() / 10.1 < 0.05, "spacing {d} um");
    }

    #[test]
    fn positions_are_mirror_symmetric_and_balanced() {
        for n in 1..=12 {
            let cfg = reference_chain(n);
            let z = equilibrium_positions(&cfg).unwrap();
            let l = cfg.length_scale();
            for i in 0..n {
                assert!((z[i] + z[n - 1 - i]).abs() < 1e-10 * l, "n={n}");
            }
            let u = DVector::from_iterator(n, z.iter().map(|x| x / l));
            assert!(coulomb_force(&u).norm() < 1e-11);
        }
    }

    #[test]
    fn override_is_returned_unchanged() {
        let mut cfg = reference_chain(3);
        cfg.positions_override = Some(vec![-1e-5, 0.0, 2e-5]);
        assert_eq!(equilibrium_positions(&cfg).unwrap(), vec![-1e-5, 0.0, 2e-5]);
        cfg.positions_override = Some(vec![0.0, 0.0, 1e-5]);
        assert!(matches!(equilibrium_positions(&cfg), Err(Error::DegenerateGeometry(0, 1))));
        cfg.positions_override = Some(vec![0.0, 1e-5]);
        assert!(equilibrium_positions(&cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = reference_chain(3);
        cfg.omega_z = cfg.omega_x * 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = reference_chain(0);
        assert!(cfg.validate().is_err());
        cfg.n_ions = 2;
        cfg.ion_mass = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hopping_scales_as_inverse_cube() {
        let cfg = reference_chain(3);
        let pos = [0.0, 10.1e-6, 20.2e-6];
        let m = hopping_matrix(&cfg, &pos).unwrap();
        assert_relative_eq!(m.kappa[(0, 2)], m.kappa[(0, 1)] / 8.0, max_relative = 1e-15);
        let kappa_khz = to_hz(m.kappa[(0, 1)]) / 1e3;
        assert!((kappa_khz - 3.0).abs() / 3.0 < 0.15, "kappa {kappa_khz} kHz");

        let doubled: Vec<f64> = pos.iter().map(|p| 2.0 * p).collect();
        let m2 = hopping_matrix(&cfg, &doubled).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(m2.kappa[(j, k)], m.kappa[(j, k)] / 8.0);
            }
        }
    }

    #[test]
    fn coincident_positions_are_rejected() {
        let cfg = reference_chain(2);
        assert!(matches!(hopping_matrix(&cfg, &[1e-6, 1e-6]), Err(Error::DegenerateGeometry(0, 1))));
    }

    #[test]
    fn local_shift_examples() {
        assert_eq!(local_mode_shifts(&DMatrix::zeros(1, 1)), vec![0.0]);
        let k = 2.0;
        let two = DMatrix::from_row_slice(2, 2, &[0.0, k, k, 0.0]);
        assert_eq!(local_mode_shifts(&two), vec![-k, -k]);
        let three = DMatrix::from_row_slice(3, 3, &[0.0, k, k / 8.0, k, 0.0, k, k / 8.0, k, 0.0]);
        let w = local_mode_shifts(&three);
        assert_eq!(w[0] - w[2], 0.0);
        // ω_1 = −9κ/8, ω_2 = −2κ
        assert_relative_eq!(w[0] - w[1], 7.0 * k / 8.0, max_relative = 1e-15);
    }

    #[test]
    fn nearest_neighbour_extension_uses_cube_law() {
        let m = ModeParams::from_nearest_neighbour(vec![0.0; 3], &[5.0, 5.0]).unwrap();
        assert_relative_eq!(m.kappa[(0, 2)], 5.0 / 8.0, max_relative = 1e-14);
        let m = ModeParams::from_nearest_neighbour(vec![0.0; 3], &[8.0, 1.0]).unwrap();
        // d12 = 1/2, d23 = 1 -> d13 = 3/2
        assert_relative_eq!(m.kappa[(0, 2)], (1.5f64).powi(-3), max_relative = 1e-14);
    }
}
