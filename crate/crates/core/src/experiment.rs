//! Pulse sequences: phonon preparation, hopping or blockade windows and
//! red-sideband readout, mapped through the SPAM model.
//!
//! A sequence may contain one window without a fixed duration. That window
//! is swept over the requested time grid; everything before it is applied
//! once to the thermal initial state and everything after it is folded into
//! the measured observables, so each time point costs one phase evaluation
//! in the eigenbasis of the window Hamiltonian.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::ModeParams;
use crate::dynamics::{
    assemble, build_hamiltonian, thermal_diagonal, BlockMatrix, DriveParams, HamiltonianSpec, Partition, Propagator, Spectrum,
};
use crate::error::{Error, Result};
use crate::hilbert::{c, CMatrix, QuantumState, SpaceSpec};
use crate::linalg::mul;
use crate::spam::SpamModel;
use crate::units::hz;

pub const DEFAULT_BLUE_RABI_HZ: f64 = 50e3;
pub const DEFAULT_CARRIER_RABI_HZ: f64 = 500e3;
pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    Red,
    Blue,
    Carrier,
}

/// One step of an experimental sequence. Sites are zero-based and durations in s.
#[derive(Debug, Clone, PartialEq)]
pub enum PulseSegment {
    /// Blue-sideband π-pulse followed by a carrier π-pulse: `|g,0⟩ → |g,1⟩`.
    PreparePhonon { site: usize },
    /// Hopping with all drives off. `None` marks the swept window.
    FreeHop { duration: Option<f64> },
    /// Hopping with red-sideband drives on `sites`. Overrides, when given,
    /// align with `sites`.
    Blockade { duration: Option<f64>, sites: Vec<usize>, rabi: Option<Vec<f64>>, detuning: Option<Vec<f64>> },
    /// A single drive on one site; the duration defaults to the π-time.
    Pulse { site: usize, kind: DriveKind, rabi: Option<f64>, duration: Option<f64>, detuning: f64 },
    /// Red-sideband π-pulse on each listed site (all sites when `None`).
    Readout { sites: Option<Vec<usize>> },
}

impl PulseSegment {
    fn swept(&self) -> bool {
        matches!(self, PulseSegment::FreeHop { duration: None } | PulseSegment::Blockade { duration: None, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub segments: Vec<PulseSegment>,
}

/// Per-site drive strengths in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSettings {
    /// `Ω_j^r`, used by blockade windows and by the readout π-pulse.
    pub rabi_red: Vec<f64>,
    pub rabi_blue: Vec<f64>,
    pub rabi_carrier: Vec<f64>,
    /// Red-sideband detuning during blockade windows.
    pub blockade_detuning: Vec<f64>,
}

impl DriveSettings {
    pub fn new(rabi_red: Vec<f64>) -> Self {
        let n = rabi_red.len();
        Self {
            rabi_red,
            rabi_blue: vec![hz(DEFAULT_BLUE_RABI_HZ); n],
            rabi_carrier: vec![hz(DEFAULT_CARRIER_RABI_HZ); n],
            blockade_detuning: vec![0.0; n],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [
            ("rabi_red", &self.rabi_red),
            ("rabi_blue", &self.rabi_blue),
            ("rabi_carrier", &self.rabi_carrier),
            ("blockade_detuning", &self.blockade_detuning),
        ] {
            if v.len() != n {
                return Err(Error::config(format!("{name} has {} entries for {n} sites", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("{name} entries must be finite")));
            }
        }
        for (name, v) in [("rabi_red", &self.rabi_red), ("rabi_blue", &self.rabi_blue), ("rabi_carrier", &self.rabi_carrier)] {
            if v.iter().any(|&x| x < 0.0) {
                return Err(Error::config(format!("{name} entries must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Finite red-sideband π-pulse per site, `t_j = π/Ω_j^r`.
    Physical,
    /// Perfect swap `|g,n⟩ ↔ |e,n−1⟩` on each read site.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    /// Preparation and readout pulses last their π-time with hopping on.
    Finite,
    /// Pulses act with the drive alone, as if infinitely strong.
    Instantaneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub n_max: usize,
    pub readout: ReadoutMode,
    pub pulses: PulseMode,
    /// Top-Fock-level population that triggers a truncation warning.
    pub leakage_threshold: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            n_max: 2,
            readout: ReadoutMode::Physical,
            pulses: PulseMode::Finite,
            leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub mode: ModeParams,
    pub drives: DriveSettings,
    pub spam: SpamModel,
    pub options: SimulationOptions,
}

impl SimulationSetup {
    pub fn n_sites(&self) -> usize {
        self.mode.n_sites()
    }

    pub fn space(&self) -> Result<SpaceSpec> {
        SpaceSpec::new(self.n_sites(), self.options.n_max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        self.mode.validate()?;
        self.drives.validate(n)?;
        self.spam.validate()?;
        if self.spam.nbar.len() != n {
            return Err(Error::config(format!("{} nbar values for {n} sites", self.spam.nbar.len())));
        }
        if !(self.options.leakage_threshold >= 0.0) {
            return Err(Error::config("leakage_threshold must be non-negative"));
        }
        self.space().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub sequence: String,
    pub n_sites: usize,
    pub n_max: usize,
    /// Largest population, at the end of the swept window, of states with
    /// some site in the top Fock level and more than `n_max` excitations in
    /// total. Only these feel the cutoff.
    pub max_leakage: f64,
    pub leakage_warning: Option<String>,
}

/// Measured bright probabilities versus window duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    /// Window durations in s.
    pub times: Vec<f64>,
    /// `p_e[i][j]`: site `j` at `times[i]`.
    pub p_e: Vec<Vec<f64>>,
    pub metadata: TraceMetadata,
}

impl OccupancyTrace {
    pub fn n_sites(&self) -> usize {
        self.metadata.n_sites
    }

    /// Column of one site.
    pub fn site(&self, j: usize) -> Vec<f64> {
        self.p_e.iter().map(|row| row[j]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_times(&self.times)?;
        if self.p_e.len() != self.times.len() {
            return Err(Error::contract(format!("{} rows for {} times", self.p_e.len(), self.times.len())));
        }
        for (i, row) in self.p_e.iter().enumerate() {
            if row.len() != self.metadata.n_sites {
                return Err(Error::contract(format!("row {i} has {} sites, expected {}", row.len(), self.metadata.n_sites)));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::contract(format!("row {i} holds probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::contract("times must be finite and non-negative"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::contract("times must be strictly increasing"));
    }
    Ok(())
}

pub fn drive(n: usize, site: usize, kind: DriveKind, rabi: f64, detuning: f64) -> DriveParams {
    let mut d = match kind {
        DriveKind::Red => DriveParams::red(n, site, rabi),
        DriveKind::Blue => DriveParams::blue(n, site, rabi),
        DriveKind::Carrier => DriveParams::carrier(n, site, rabi),
    };
    d.detuning[site] = detuning;
    d
}

enum Step {
    Evolve { h: HamiltonianSpec, duration: f64 },
    IdealReadout { sites: Vec<usize> },
}

/// Spectra and fixed unitaries keyed by their Hamiltonians, reused across
/// the sequences of one parameter set.
pub struct Simulator<'a> {
    setup: &'a SimulationSetup,
    space: SpaceSpec,
    spectra: HashMap<Vec<u64>, Rc<Spectrum>>,
    unitaries: HashMap<Vec<u64>, Rc<Propagator>>,
    states: HashMap<Vec<u64>, Rc<BlockMatrix>>,
    bases: HashMap<Vec<u64>, Rc<EngineBasis>>,
}

fn key_of(h: &HamiltonianSpec) -> Vec<u64> {
    let mut k: Vec<u64> = Vec::new();
    k.extend(h.mode.omega_shift.iter().map(|x| x.to_bits()));
    k.extend(h.mode.kappa.iter().map(|x| x.to_bits()));
    for v in [&h.drive.rabi_red, &h.drive.rabi_blue, &h.drive.rabi_carrier, &h.drive.detuning] {
        k.extend(v.iter().map(|x| x.to_bits()));
    }
    k.extend(h.drive.active.iter().map(|&b| b as u64));
    k.push(h.include_hopping as u64);
    k
}

fn steps_key(steps: &[Step]) -> Vec<u64> {
    let mut k = Vec::new();
    for s in steps {
        match s {
            Step::Evolve { h, duration } => {
                k.push(0);
                k.extend(key_of(h));
                k.push(duration.to_bits());
            }
            Step::IdealReadout { sites } => {
                k.push(1);
                k.extend(sites.iter().map(|&j| j as u64));
            }
        }
        k.push(u64::MAX);
    }
    k
}

impl<'a> Simulator<'a> {
    pub fn new(setup: &'a SimulationSetup) -> Result<Self> {
        setup.validate()?;
        Ok(Self {
            setup,
            space: setup.space()?,
            spectra: HashMap::new(),
            unitaries: HashMap::new(),
            states: HashMap::new(),
            bases: HashMap::new(),
        })
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    fn n(&self) -> usize {
        self.setup.n_sites()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n() {
            return Err(Error::contract(format!("site {site} out of range for {} sites", self.n())));
        }
        Ok(())
    }

    fn hopping(&self, drive: DriveParams) -> HamiltonianSpec {
        HamiltonianSpec { mode: self.setup.mode.clone(), drive, include_hopping: true }
    }

    fn pulse_spec(&self, drive: DriveParams) -> HamiltonianSpec {
        match self.setup.options.pulses {
            PulseMode::Finite => self.hopping(drive),
            PulseMode::Instantaneous => {
                HamiltonianSpec { mode: ModeParams::zeros(self.n()), drive, include_hopping: false }
            }
        }
    }

    fn pi_pulse(&self, site: usize, kind: DriveKind, rabi: f64, detuning: f64, duration: Option<f64>) -> Result<Step> {
        if !(rabi > 0.0) {
            return Err(Error::contract(format!("{kind:?} pulse on site {site} needs a positive Rabi frequency")));
        }
        let duration = duration.unwrap_or(PI / rabi);
        check_duration(duration)?;
        Ok(Step::Evolve { h: self.pulse_spec(drive(self.n(), site, kind, rabi, detuning)), duration })
    }

    fn blockade_drive(&self, sites: &[usize], rabi: Option<&Vec<f64>>, detuning: Option<&Vec<f64>>) -> Result<DriveParams> {
        let n = self.n();
        for (name, v) in [("rabi", rabi), ("detuning", detuning)] {
            if let Some(v) = v {
                if v.len() != sites.len() {
                    return Err(Error::contract(format!("blockade {name} override has {} entries for {} sites", v.len(), sites.len())));
                }
            }
        }
        let mut d = DriveParams::off(n);
        for (i, &j) in sites.iter().enumerate() {
            self.check_site(j)?;
            if d.active[j] {
                return Err(Error::contract(format!("blockade lists site {j} twice")));
            }
            d.active[j] = true;
            d.rabi_red[j] = rabi.map_or(self.setup.drives.rabi_red[j], |v| v[i]);
            d.detuning[j] = detuning.map_or(self.setup.drives.blockade_detuning[j], |v| v[i]);
        }
        Ok(d)
    }

    fn window_spec(&self, seg: &PulseSegment) -> Result<HamiltonianSpec> {
        match seg {
            PulseSegment::FreeHop { .. } => Ok(self.hopping(DriveParams::off(self.n()))),
            PulseSegment::Blockade { sites, rabi, detuning, .. } => {
                Ok(self.hopping(self.blockade_drive(sites, rabi.as_ref(), detuning.as_ref())?))
            }
            _ => Err(Error::contract("only free-hop and blockade segments can be swept")),
        }
    }

    fn readout_sites(&self, sites: &Option<Vec<usize>>) -> Result<Vec<usize>> {
        let sites = sites.clone().unwrap_or_else(|| (0..self.n()).collect());
        let mut seen = vec![false; self.n()];
        for &j in &sites {
            self.check_site(j)?;
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::contract(format!("readout lists site {j} twice")));
            }
        }
        Ok(sites)
    }

    fn steps(&self, seg: &PulseSegment) -> Result<Vec<Step>> {
        let d = &self.setup.drives;
        Ok(match seg {
            PulseSegment::PreparePhonon { site } => {
                self.check_site(*site)?;
                vec![
                    self.pi_pulse(*site, DriveKind::Blue, d.rabi_blue[*site], 0.0, None)?,
                    self.pi_pulse(*site, DriveKind::Carrier, d.rabi_carrier[*site], 0.0, None)?,
                ]
            }
            PulseSegment::FreeHop { duration } | PulseSegment::Blockade { duration, .. } => {
                let duration = duration.ok_or_else(|| Error::contract("swept window used as a fixed segment"))?;
                check_duration(duration)?;
                vec![Step::Evolve { h: self.window_spec(seg)?, duration }]
            }
            PulseSegment::Pulse { site, kind, rabi, duration, detuning } => {
                self.check_site(*site)?;
                let default = match kind {
                    DriveKind::Red => d.rabi_red[*site],
                    DriveKind::Blue => d.rabi_blue[*site],
                    DriveKind::Carrier => d.rabi_carrier[*site],
                };
                vec![self.pi_pulse(*site, *kind, rabi.unwrap_or(default), *detuning, *duration)?]
            }
            PulseSegment::Readout { sites } => {
                let sites = self.readout_sites(sites)?;
                match self.setup.options.readout {
                    ReadoutMode::Ideal => vec![Step::IdealReadout { sites }],
                    ReadoutMode::Physical => self.physical_readout(&sites)?,
                }
            }
        })
    }

    /// Simultaneous red π-pulses; sites drop out as their π-time elapses.
    fn physical_readout(&self, sites: &[usize]) -> Result<Vec<Step>> {
        let mut timed: Vec<(f64, usize)> = Vec::with_capacity(sites.len());
        for &j in sites {
            let rabi = self.setup.drives.rabi_red[j];
            if !(rabi > 0.0) {
                return Err(Error::contract(format!("readout of site {j} needs a positive red-sideband Rabi frequency")));
            }
            timed.push((PI / rabi, j));
        }
        timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut steps = Vec::new();
        let mut elapsed = 0.0;
        for (i, &(t, _)) in timed.iter().enumerate() {
            if t > elapsed {
                let mut d = DriveParams::off(self.n());
                for &(_, j) in &timed[i..] {
                    d.active[j] = true;
                    d.rabi_red[j] = self.setup.drives.rabi_red[j];
                }
                steps.push(Step::Evolve { h: self.pulse_spec(d), duration: t - elapsed });
                elapsed = t;
            }
        }
        Ok(steps)
    }

    fn spectrum(&mut self, h: &HamiltonianSpec) -> Result<Rc<Spectrum>> {
        let key = key_of(h);
        if let Some(s) = self.spectra.get(&key) {
            return Ok(s.clone());
        }
        let s = Rc::new(Spectrum::from_sparse(&assemble(self.space, h)?)?);
        self.spectra.insert(key, s.clone());
        Ok(s)
    }

    fn step_propagator(&mut self, step: &Step) -> Result<Propagator> {
        match step {
            Step::Evolve { h, duration } => Ok(self.spectrum(h)?.propagator(*duration)),
            Step::IdealReadout { sites } => Ok(Propagator::from_dense(&ideal_readout(self.space, sites))),
        }
    }

    fn unitary(&mut self, steps: &[Step]) -> Result<Rc<Propagator>> {
        let key = steps_key(steps);
        if let Some(u) = self.unitaries.get(&key) {
            return Ok(u.clone());
        }
        let props = steps.iter().map(|s| self.step_propagator(s)).collect::<Result<Vec<_>>>()?;
        let u = Rc::new(Propagator::compose(self.space.dim(), &props)?);
        self.unitaries.insert(key, u.clone());
        Ok(u)
    }

    fn prepared(&mut self, steps: &[Step]) -> Result<Rc<BlockMatrix>> {
        let key = steps_key(steps);
        if let Some(r) = self.states.get(&key) {
            return Ok(r.clone());
        }
        let mut rho = BlockMatrix::diagonal(&thermal_diagonal(self.space, &self.setup.spam.nbar)?);
        for s in steps {
            rho = self.step_propagator(s)?.conjugate_blocks(&rho)?;
        }
        let rho = Rc::new(rho);
        self.states.insert(key, rho.clone());
        Ok(rho)
    }

    /// Simulates `sequence` for every window duration in `times` (s) and
    /// applies the SPAM model.
    pub fn run(&mut self, sequence: &Sequence, times: &[f64]) -> Result<OccupancyTrace> {
        validate_times(times)?;
        let segs = &sequence.segments;
        let swept: Vec<usize> = segs.iter().enumerate().filter(|(_, s)| s.swept()).map(|(i, _)| i).collect();
        if swept.len() > 1 {
            return Err(Error::contract("a sequence may contain at most one swept window"));
        }
        let readouts: Vec<usize> =
            segs.iter().enumerate().filter(|(_, s)| matches!(s, PulseSegment::Readout { .. })).map(|(i, _)| i).collect();
        match readouts.as_slice() {
            [] => {}
            [i] if *i + 1 == segs.len() => {}
            _ => return Err(Error::contract("readout must be the single final segment")),
        }
        let (body, readout) = match segs.split_last() {
            Some((last @ PulseSegment::Readout { .. }, rest)) => (rest, Some(last)),
            _ => (&segs[..], None),
        };
        let (pre, window, post) = match swept.first() {
            Some(&i) => (&body[..i], Some(&body[i]), &body[i + 1..]),
            None => (body, None, &body[..0]),
        };

        let flatten = |sim: &Self, segs: &[PulseSegment]| -> Result<Vec<Step>> {
            let mut v = Vec::new();
            for s in segs {
                v.extend(sim.steps(s)?);
            }
            Ok(v)
        };
        let pre_steps = flatten(self, pre)?;
        let post_steps = flatten(self, post)?;
        let readout_steps = match readout {
            Some(r) => self.steps(r)?,
            None => Vec::new(),
        };

        let rho = self.prepared(&pre_steps)?;
        let window_h = window.map(|w| self.window_spec(w)).transpose()?;
        let mut basis_key = window_h.as_ref().map(key_of).unwrap_or_default();
        basis_key.push(u64::MAX);
        basis_key.extend(steps_key(&post_steps));
        basis_key.push(u64::MAX - 1);
        basis_key.extend(steps_key(&readout_steps));
        let basis = match self.bases.get(&basis_key) {
            Some(b) => b.clone(),
            None => {
                let after_window = self.unitary(&post_steps)?;
                let mut all_post = post_steps;
                all_post.extend(readout_steps);
                let to_detector = self.unitary(&all_post)?;
                let spectrum = window_h.as_ref().map(|h| self.spectrum(h)).transpose()?;
                let b = Rc::new(EngineBasis::new(self.space, spectrum.as_deref(), &to_detector, &after_window)?);
                self.bases.insert(basis_key, b.clone());
                b
            }
        };
        let n = self.space.n_sites();
        let sweep: Vec<f64> = if window.is_some() { times.to_vec() } else { vec![0.0] };
        let values = basis.evaluate(&rho, &sweep);

        let m = self.setup.spam.matrix();
        let mut p_e = Vec::with_capacity(times.len());
        let mut max_leakage: f64 = 0.0;
        for i in 0..times.len() {
            let row = if window.is_some() { &values[i] } else { &values[0] };
            p_e.push(row[..n].iter().map(|&p| m.bright(p.clamp(0.0, 1.0)).clamp(0.0, 1.0)).collect());
            max_leakage = max_leakage.max(row[n]);
        }
        let leakage_warning = (max_leakage > self.setup.options.leakage_threshold).then(|| {
            format!(
                "population {max_leakage:.3e} reaches the Fock cutoff (threshold {:.1e}); consider a larger n_max",
                self.setup.options.leakage_threshold
            )
        });
        let trace = OccupancyTrace {
            times: times.to_vec(),
            p_e,
            metadata: TraceMetadata {
                sequence: sequence.name.clone(),
                n_sites: n,
                n_max: self.space.n_max(),
                max_leakage,
                leakage_warning,
            },
        };
        Ok(trace)
    }
}

fn check_duration(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::contract(format!("durations must be finite and non-negative, got {t}")));
    }
    Ok(())
}

/// Swap `|g,n+1⟩ ↔ |e,n⟩` with phase `−i` on each listed site.
fn ideal_readout(space: SpaceSpec, sites: &[usize]) -> CMatrix {
    let d = space.dim();
    let n_max = space.n_max();
    let mut u = CMatrix::zeros(d, d);
    for col in 0..d {
        let mut row = col;
        let mut amp = c(1.0);
        for &j in sites {
            let (s, nj) = space.local(row, j);
            match s {
                0 if nj > 0 => {
                    row = space.replace(row, j, 1, nj - 1);
                    amp *= Complex64::new(0.0, -1.0);
                }
                1 if nj < n_max => {
                    row = space.replace(row, j, 0, nj + 1);
                    amp *= Complex64::new(0.0, -1.0);
                }
                _ => {}
            }
        }
        u[(row, col)] = amp;
    }
    u
}

struct BasisBlock {
    indices: Vec<usize>,
    energies: Vec<f64>,
    vectors: CMatrix,
    /// `Õ_k = X_k† Π_k X_k` in the window eigenbasis, one per observable.
    observables: Vec<CMatrix>,
}

/// Observables `O_k = T_k† Π_k T_k` in the eigenbasis of the window
/// Hamiltonian, on the coarsest partition compatible with the window and the
/// transforms. The spin projectors of each site are read through the full
/// post-window unitary; the truncation projector, last, through the
/// unitary before readout.
struct EngineBasis {
    blocks: Vec<BasisBlock>,
    n_obs: usize,
}

impl EngineBasis {
    fn new(space: SpaceSpec, window: Option<&Spectrum>, to_detector: &Propagator, after_window: &Propagator) -> Result<Self> {
        let dim = space.dim();
        let mut groups: Vec<&[usize]> = Vec::new();
        if let Some(w) = window {
            groups.extend(w.partition().blocks().iter().map(|b| b.as_slice()));
        }
        for t in [to_detector, after_window] {
            groups.extend(t.blocks().iter().map(|(idx, _)| idx.as_slice()));
        }
        let partition = Partition::from_groups(dim, groups);
        let eigen: Vec<(Vec<f64>, CMatrix)> = match window {
            Some(w) => w.embed(&partition)?,
            None => partition.blocks().iter().map(|b| (vec![0.0; b.len()], CMatrix::identity(b.len(), b.len()))).collect(),
        };
        let detector = to_detector.embed(&partition)?;
        let before = after_window.embed(&partition)?;
        let n = space.n_sites();
        let mut projectors: Vec<(Vec<bool>, bool)> =
            (0..n).map(|j| ((0..dim).map(|i| space.local(i, j).0 == 1).collect(), true)).collect();
        // The cutoff only truncates couplings out of top-level states whose
        // total excitation exceeds n_max.
        let truncated = |i: usize| {
            let (top, total) = (0..n).fold((false, 0), |(top, total), j| {
                let (spin, k) = space.local(i, j);
                (top || k == space.n_max(), total + k + spin)
            });
            top && total > space.n_max()
        };
        projectors.push(((0..dim).map(truncated).collect(), false));

        let blocks = partition
            .blocks()
            .iter()
            .zip(eigen)
            .enumerate()
            .map(|(a, (idx, (energies, v)))| {
                let x_detector = mul(&detector[a], &v);
                let x_before = mul(&before[a], &v);
                let observables = projectors
                    .iter()
                    .map(|(proj, through_readout)| {
                        let x = if *through_readout { &x_detector } else { &x_before };
                        let rows: Vec<usize> = (0..idx.len()).filter(|&r| proj[idx[r]]).collect();
                        let xr = CMatrix::from_fn(rows.len(), idx.len(), |r, s| x[(rows[r], s)]);
                        mul(&xr.adjoint(), &xr)
                    })
                    .collect();
                BasisBlock { indices: idx.clone(), energies, vectors: v, observables }
            })
            .collect();
        Ok(Self { blocks, n_obs: projectors.len() })
    }

    /// `tr(O_k W(t) ρ W(t)†)` for every `t`, using the block-diagonal part of `ρ`.
    fn evaluate(&self, rho: &BlockMatrix, times: &[f64]) -> Vec<Vec<f64>> {
        let k = self.n_obs;
        let nt = times.len();
        let mut out = vec![vec![0.0; k]; nt];
        for b in &self.blocks {
            let d = b.indices.len();
            let sub = rho.principal(&b.indices);
            if sub.iter().all(|z| z.norm() < 1e-300) {
                continue;
            }
            let rho_t = mul(&mul(&b.vectors.adjoint(), &sub), &b.vectors);
            // f_k(t) = Σ_pq φ_p* M_pq φ_q with φ_p = e^{iE_p t} = c_p + i s_p and M_pq = ρ̃_pq Õ_qp.
            let mut mr = DMatrix::<f64>::zeros(k * d, d);
            let mut mi = DMatrix::<f64>::zeros(k * d, d);
            for (o, obs) in b.observables.iter().enumerate() {
                for p in 0..d {
                    for q in 0..d {
                        let m = rho_t[(p, q)] * obs[(q, p)];
                        mr[(o * d + p, q)] = m.re;
                        mi[(o * d + p, q)] = m.im;
                    }
                }
            }
            let mut cos = DMatrix::<f64>::zeros(d, nt);
            let mut sin = DMatrix::<f64>::zeros(d, nt);
            for (t, &time) in times.iter().enumerate() {
                for (q, &e) in b.energies.iter().enumerate() {
                    let (sv, cv) = (e * time).sin_cos();
                    cos[(q, t)] = cv;
                    sin[(q, t)] = sv;
                }
            }
            // M is Hermitian, so f = cᵀ Re(M) c + sᵀ Re(M) s − 2 cᵀ Im(M) s.
            let (rc, rs, is) = (&mr * &cos, &mr * &sin, &mi * &sin);
            for (t, row) in out.iter_mut().enumerate() {
                let (ct, st) = (cos.column(t), sin.column(t));
                let (ct, st) = (ct.as_slice(), st.as_slice());
                let (rct, rst, ist) = (rc.column(t), rs.column(t), is.column(t));
                for (o, v) in row.iter_mut().enumerate() {
                    let w = o * d..(o + 1) * d;
                    let (a, b, m) = (&rct.as_slice()[w.clone()], &rst.as_slice()[w.clone()], &ist.as_slice()[w]);
                    *v += (0..d).map(|p| ct[p] * (a[p] - 2.0 * m[p]) + st[p] * b[p]).sum::<f64>();
                }
            }
        }
        out
    }
}


/// One-shot convenience wrapper around [`Simulator::run`].
pub fn run_sequence(setup: &SimulationSetup, sequence: &Sequence, times: &[f64]) -> Result<OccupancyTrace> {
    Simulator::new(setup)?.run(sequence, times)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidebandKind {
    Red,
    Blue,
}

/// Theoretical `P_e` of `site` after a sideband pulse of length `duration`,
/// for each detuning in `detunings` (rad/s). Detunings are measured from the
/// common-mode sideband, so the line of site `j` sits at `ω_j`.
pub fn sideband_scan(
    setup: &SimulationSetup,
    site: usize,
    kind: SidebandKind,
    initial: &QuantumState,
    detunings: &[f64],
    duration: f64,
) -> Result<Vec<f64>> {
    setup.validate()?;
    let space = setup.space()?;
    if initial.spec != space {
        return Err(Error::contract("initial state does not live in the simulation space"));
    }
    initial.validate()?;
    if site >= space.n_sites() {
        return Err(Error::contract(format!("site {site} out of range")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::contract("scan pulse duration must be positive"));
    }
    if detunings.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("detunings must be finite"));
    }
    let (drive_kind, rabi) = match kind {
        SidebandKind::Red => (DriveKind::Red, setup.drives.rabi_red[site]),
        SidebandKind::Blue => (DriveKind::Blue, setup.drives.rabi_blue[site]),
    };
    if !(rabi > 0.0) {
        return Err(Error::contract(format!("scan on site {site} needs a positive Rabi frequency")));
    }
    let excited: Vec<usize> = (0..space.dim()).filter(|&i| space.local(i, site).0 == 1).collect();
    detunings
        .iter()
        .map(|&delta| {
            let h = HamiltonianSpec {
                mode: setup.mode.clone(),
                drive: drive(space.n_sites(), site, drive_kind, rabi, delta - setup.mode.omega_shift[site]),
                include_hopping: true,
            };
            let u = Spectrum::new(&build_hamiltonian(space, &h)?)?.propagator(duration);
            let rho = u.conjugate(&initial.rho);
            Ok(excited.iter().map(|&i| rho[(i, i)].re).sum::<f64>().clamp(0.0, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve, thermal_state};
    use crate::hilbert::Spin;

    fn three_site_setup() -> SimulationSetup {
        let mode = ModeParams::from_nearest_neighbour(vec![0.0, hz(-11.58e3), hz(-16.0e3)], &[hz(2.9e3), hz(3.1e3)]).unwrap();
        SimulationSetup {
            mode,
            drives: DriveSettings::new(vec![hz(40e3), hz(45.9e3), hz(52e3)]),
            spam: SpamModel { eps_g: 0.0026, eps_e: 0.0091, eps_e_prime: 0.114, nbar: vec![0.09, 0.08, 0.04] },
            options: SimulationOptions::default(),
        }
    }

    fn seq(segments: Vec<PulseSegment>) -> Sequence {
        Sequence { name: "test".into(), segments }
    }

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * step).collect()
    }

    /// Direct evolution of the full density matrix, one time point at a time.
    fn dense_reference(setup: &SimulationSetup, sequence: &Sequence, times: &[f64]) -> Vec<Vec<f64>> {
        let sim = Simulator::new(setup).unwrap();
        let space = sim.space;
        let m = setup.spam.matrix();
        times
            .iter()
            .map(|&t| {
                let mut state = thermal_state(space, &setup.spam.nbar).unwrap();
                for s in &sequence.segments {
                    let fixed;
                    let seg = if s.swept() {
                        fixed = match s {
                            PulseSegment::FreeHop { .. } => PulseSegment::FreeHop { duration: Some(t) },
                            PulseSegment::Blockade { sites, rabi, detuning, .. } => PulseSegment::Blockade {
                                duration: Some(t),
                                sites: sites.clone(),
                                rabi: rabi.clone(),
                                detuning: detuning.clone(),
                            },
                            _ => unreachable!(),
                        };
                        &fixed
                    } else {
                        s
                    };
                    for step in sim.steps(seg).unwrap() {
                        match step {
                            Step::Evolve { h, duration } => {
                                let h = build_hamiltonian(space, &h).unwrap();
                                state = evolve(&state, &h, duration).unwrap();
                            }
                            Step::IdealReadout { sites } => {
                                let u = ideal_readout(space, &sites);
                                state.rho = &u * &state.rho * u.adjoint();
                            }
                        }
                    }
                }
                (0..space.n_sites())
                    .map(|j| {
                        let pe: f64 = (0..space.dim()).filter(|&i| space.local(i, j).0 == 1).map(|i| state.rho[(i, i)].re).sum();
                        m.bright(pe)
                    })
                    .collect()
            })
            .collect()
    }

    fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
    }

    #[test]
    fn engine_matches_dense_evolution() {
        let setup = three_site_setup();
        let times = grid(9, 37e-6);
        for segments in [
            vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::FreeHop { duration: None }, PulseSegment::Readout { sites: None }],
            vec![
                PulseSegment::PreparePhonon { site: 0 },
                PulseSegment::Blockade { duration: None, sites: vec![1], rabi: None, detuning: None },
                PulseSegment::FreeHop { duration: Some(12e-6) },
                PulseSegment::Readout { sites: Some(vec![0, 1]) },
            ],
            vec![PulseSegment::PreparePhonon { site: 2 }, PulseSegment::FreeHop { duration: None }],
        ] {
            let s = seq(segments);
            let fast = run_sequence(&setup, &s, &times).unwrap();
            let slow = dense_reference(&setup, &s, &times);
            let diff = max_diff(&fast.p_e, &slow);
            assert!(diff < 1e-10, "{diff:e}");
        }
    }

    #[test]
    fn engine_matches_dense_with_ideal_readout() {
        let mut setup = three_site_setup();
        setup.options.readout = ReadoutMode::Ideal;
        setup.options.pulses = PulseMode::Instantaneous;
        let times = grid(6, 50e-6);
        let s = seq(vec![
            PulseSegment::PreparePhonon { site: 1 },
            PulseSegment::Blockade { duration: None, sites: vec![0, 2], rabi: None, detuning: Some(vec![hz(3e3), 0.0]) },
            PulseSegment::Readout { sites: None },
        ]);
        let fast = run_sequence(&setup, &s, &times).unwrap();
        assert!(max_diff(&fast.p_e, &dense_reference(&setup, &s, &times)) < 1e-10);
    }

    #[test]
    fn ideal_single_site_prepare_and_read_is_bright() {
        let setup = SimulationSetup {
            mode: ModeParams::zeros(1),
            drives: DriveSettings::new(vec![hz(40e3)]),
            spam: SpamModel::ideal(1),
            options: SimulationOptions { pulses: PulseMode::Instantaneous, ..Default::default() },
        };
        let s = seq(vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::Readout { sites: None }]);
        let trace = run_sequence(&setup, &s, &[0.0]).unwrap();
        assert!((trace.p_e[0][0] - 1.0).abs() < 1e-12);
    }

    /// The SPAM plateaus: `|g,1⟩` and `|g,0⟩` read out after a long wait.
    #[test]
    fn plateau_values_with_reported_spam() {
        let setup = SimulationSetup {
            mode: ModeParams::zeros(1),
            drives: DriveSettings::new(vec![hz(40e3)]),
            spam: SpamModel { eps_g: 0.0026, eps_e: 0.0091, eps_e_prime: 0.114, nbar: vec![0.055] },
            options: SimulationOptions { n_max: 6, ..Default::default() },
        };
        let times = [0.0, 1e-3];
        let one = run_sequence(
            &setup,
            &seq(vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::FreeHop { duration: None }, PulseSegment::Readout { sites: None }]),
            &times,
        )
        .unwrap();
        let zero = run_sequence(&setup, &seq(vec![PulseSegment::FreeHop { duration: None }, PulseSegment::Readout { sites: None }]), &times)
            .unwrap();
        for i in 0..2 {
            assert!((one.p_e[i][0] - 0.836).abs() < 0.005, "{}", one.p_e[i][0]);
            assert!((zero.p_e[i][0] - 0.048).abs() < 0.005, "{}", zero.p_e[i][0]);
        }
    }

    #[test]
    fn zero_window_matches_preparation_only() {
        let setup = three_site_setup();
        let swept = run_sequence(
            &setup,
            &seq(vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::FreeHop { duration: None }, PulseSegment::Readout { sites: None }]),
            &[0.0],
        )
        .unwrap();
        let fixed = run_sequence(&setup, &seq(vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::Readout { sites: None }]), &[0.0, 1e-4])
            .unwrap();
        for row in &fixed.p_e {
            assert!(max_diff(&[row.clone()], &swept.p_e) < 1e-12);
        }
    }

    #[test]
    fn empty_sequence_gives_constant_mapped_ground_state() {
        let setup = three_site_setup();
        let trace = run_sequence(&setup, &seq(vec![]), &grid(4, 1e-4)).unwrap();
        let floor = setup.spam.matrix().bright(0.0);
        for row in &trace.p_e {
            for &p in row {
                assert!((p - floor).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn total_brightness_after_preparation_is_one() {
        let mut setup = three_site_setup();
        setup.spam = SpamModel::ideal(3);
        setup.options.pulses = PulseMode::Instantaneous;
        setup.options.readout = ReadoutMode::Ideal;
        let trace = run_sequence(
            &setup,
            &seq(vec![PulseSegment::PreparePhonon { site: 1 }, PulseSegment::FreeHop { duration: None }, PulseSegment::Readout { sites: None }]),
            &grid(20, 25e-6),
        )
        .unwrap();
        for row in &trace.p_e {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn free_hop_amplitude_near_two_level_estimate() {
        // Site 3 far detuned: just sites 1 and 2 exchange the phonon.
        let (kappa, w12) = (hz(2.9e3), hz(11.58e3));
        let mode = ModeParams::from_nearest_neighbour(vec![0.0, -w12, -w12 - hz(60e3)], &[kappa, kappa]).unwrap();
        let setup = SimulationSetup {
            mode,
            drives: DriveSettings::new(vec![hz(45.9e3); 3]),
            spam: SpamModel::ideal(3),
            options: SimulationOptions { pulses: PulseMode::Instantaneous, readout: ReadoutMode::Ideal, ..Default::default() },
        };
        let trace = run_sequence(
            &setup,
            &seq(vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::FreeHop { duration: None }, PulseSegment::Readout { sites: None }]),
            &grid(801, 0.5e-6),
        )
        .unwrap();
        let peak = trace.site(1).into_iter().fold(0.0, f64::max);
        let estimate = 4.0 * kappa * kappa / (w12 * w12 + 4.0 * kappa * kappa);
        assert!((peak - estimate).abs() < 0.02, "peak {peak}, estimate {estimate}");
    }

    #[test]
    fn blockade_transfer_falls_with_drive_strength() {
        let kappa = hz(3e3);
        let mode = ModeParams::from_nearest_neighbour(vec![0.0, 0.0], &[kappa]).unwrap();
        let times = grid(400, 1e-6);
        let mut last = f64::INFINITY;
        for omega_khz in [0.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0] {
            let setup = SimulationSetup {
                mode: mode.clone(),
                drives: DriveSettings::new(vec![hz(40e3), hz(omega_khz * 1e3).max(1.0)]),
                spam: SpamModel::ideal(2),
                options: SimulationOptions { pulses: PulseMode::Instantaneous, readout: ReadoutMode::Ideal, ..Default::default() },
            };
            let sites = if omega_khz == 0.0 { vec![] } else { vec![1] };
            let trace = run_sequence(
                &setup,
                &seq(vec![
                    PulseSegment::PreparePhonon { site: 0 },
                    PulseSegment::Blockade { duration: None, sites, rabi: None, detuning: None },
                    PulseSegment::Readout { sites: None },
                ]),
                &times,
            )
            .unwrap();
            let peak = trace.site(1).into_iter().fold(0.0, f64::max);
            assert!(peak <= last + 1e-9, "Ω/2π = {omega_khz} kHz: {peak} > {last}");
            last = peak;
        }
        assert!(last < 0.1);
    }

    #[test]
    fn leakage_is_reported() {
        let sequence = seq(vec![PulseSegment::PreparePhonon { site: 0 }, PulseSegment::FreeHop { duration: None }]);
        let mut setup = three_site_setup();
        setup.options.n_max = 1;
        setup.options.leakage_threshold = 1e-6;
        setup.spam.nbar = vec![0.0; 3];
        // A single excitation is exact at any cutoff.
        let exact = run_sequence(&setup, &sequence, &[0.0, 1e-4]).unwrap();
        assert!(exact.metadata.max_leakage < 1e-12);
        assert!(exact.metadata.leakage_warning.is_none());

        setup.spam.nbar = vec![0.5; 3];
        let trace = run_sequence(&setup, &sequence, &[0.0, 1e-4]).unwrap();
        assert!(trace.metadata.max_leakage > 0.05);
        assert!(trace.metadata.leakage_warning.is_some());
    }

    #[test]
    fn invalid_sequences_are_rejected() {
        let setup = three_site_setup();
        let bad = [
            vec![PulseSegment::Readout { sites: None }, PulseSegment::FreeHop { duration: None }],
            vec![PulseSegment::FreeHop { duration: None }, PulseSegment::FreeHop { duration: None }],
            vec![PulseSegment::PreparePhonon { site: 3 }],
            vec![PulseSegment::FreeHop { duration: Some(-1.0) }],
            vec![PulseSegment::Blockade { duration: None, sites: vec![1, 1], rabi: None, detuning: None }],
        ];
        for segments in bad {
            assert!(matches!(run_sequence(&setup, &seq(segments), &[0.0]), Err(Error::Contract(_))));
        }
        assert!(run_sequence(&setup, &seq(vec![]), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn trace_validation() {
        let setup = three_site_setup();
        let mut trace = run_sequence(&setup, &seq(vec![PulseSegment::PreparePhonon { site: 0 }]), &[0.0, 1e-5]).unwrap();
        trace.validate().unwrap();
        trace.p_e[1][2] = 1.5;
        assert!(trace.validate().is_err());
    }

    fn isolated_site() -> SimulationSetup {
        SimulationSetup {
            mode: ModeParams::zeros(1),
            drives: DriveSettings::new(vec![hz(20e3)]),
            spam: SpamModel::ideal(1),
            options: SimulationOptions { n_max: 3, ..Default::default() },
        }
    }

    #[test]
    fn red_scan_follows_rabi_formula() {
        let setup = isolated_site();
        let space = setup.space().unwrap();
        let omega = setup.drives.rabi_red[0];
        let initial = QuantumState::from_labels(space, &[Spin::Ground], &[1]).unwrap();
        let t = PI / omega;
        let detunings: Vec<f64> = (-40..=40).map(|k| k as f64 * omega / 10.0).collect();
        let scan = sideband_scan(&setup, 0, SidebandKind::Red, &initial, &detunings, t).unwrap();
        for (&d, &p) in detunings.iter().zip(&scan) {
            let g = (omega * omega + d * d).sqrt();
            let expected = omega * omega / (g * g) * (g * t / 2.0).sin().powi(2);
            assert!((p - expected).abs() < 1e-10, "Δ = {d}: {p} vs {expected}");
        }
        assert!((scan[40] - 1.0).abs() < 1e-12);
        let null = sideband_scan(&setup, 0, SidebandKind::Red, &initial, &[omega * 3f64.sqrt()], t).unwrap();
        assert!(null[0].abs() < 1e-12);
    }

    #[test]
    fn blue_scan_scaled_by_initial_occupancy() {
        let setup = isolated_site();
        let space = setup.space().unwrap();
        let omega = setup.drives.rabi_blue[0];
        // Half |g,0⟩ and half |e,0⟩: only the ground half can absorb.
        let mut rho = CMatrix::zeros(space.dim(), space.dim());
        rho[(space.basis_index(&[Spin::Ground], &[0]).unwrap(), space.basis_index(&[Spin::Ground], &[0]).unwrap())] = c(0.5);
        rho[(space.basis_index(&[Spin::Excited], &[0]).unwrap(), space.basis_index(&[Spin::Excited], &[0]).unwrap())] = c(0.5);
        let initial = QuantumState::new(space, rho).unwrap();
        let scan = sideband_scan(&setup, 0, SidebandKind::Blue, &initial, &[0.0], PI / omega).unwrap();
        assert!((scan[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scan_peaks_sit_at_local_shifts() {
        let shifts = [0.0, hz(-11.58e3), hz(-25e3)];
        let mode = ModeParams::from_nearest_neighbour(shifts.to_vec(), &[hz(0.5e3), hz(0.5e3)]).unwrap();
        let setup = SimulationSetup {
            mode,
            drives: DriveSettings::new(vec![hz(2e3); 3]),
            spam: SpamModel::ideal(3),
            options: SimulationOptions { n_max: 1, ..Default::default() },
        };
        let space = setup.space().unwrap();
        let step = hz(0.1e3);
        let detunings: Vec<f64> = (-300..=50).map(|k| k as f64 * step).collect();
        for j in 0..3 {
            let mut phonons = [0usize; 3];
            phonons[j] = 1;
            let initial = QuantumState::from_labels(space, &[Spin::Ground; 3], &phonons).unwrap();
            let scan = sideband_scan(&setup, j, SidebandKind::Red, &initial, &detunings, PI / hz(2e3)).unwrap();
            let (best, _) = scan.iter().enumerate().fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
            assert!((detunings[best] - shifts[j]).abs() <= 3.0 * step, "site {j}: {} vs {}", detunings[best], shifts[j]);
        }
    }
}
