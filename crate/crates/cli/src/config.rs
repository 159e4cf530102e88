//! Scenario files. Frequencies are in Hz, durations in μs, positions in m,
//! and sites are numbered from 1.

use std::path::Path;

use ionhop::chain::{derive_mode_params, ChainConfig, ModeParams};
use ionhop::experiment::{
    DriveKind, DriveSettings, PulseMode, PulseSegment, ReadoutMode, Sequence, SidebandKind, SimulationOptions,
    SimulationSetup, DEFAULT_BLUE_RABI_HZ, DEFAULT_CARRIER_RABI_HZ, DEFAULT_LEAKAGE_THRESHOLD,
};
use ionhop::fit::{FitOptions, FreeParam, ParamId, PhysicalParams, Weighting};
use ionhop::spam::SpamModel;
use ionhop::units::{hz, us};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::failure::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub chain: Option<ChainSection>,
    pub modes: ModesSection,
    pub drives: DrivesSection,
    pub spam: Option<SpamSection>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<SequenceSection>,
    #[serde(default)]
    pub output: OutputSection,
    pub fit: Option<FitSection>,
    pub scan: Option<ScanSection>,
    pub plateaus: Option<PlateauSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub n_ions: usize,
    pub omega_x_hz: f64,
    /// Defaults to `omega_x_hz`.
    pub omega_y_hz: Option<f64>,
    pub omega_z_hz: f64,
    /// Defaults to Yb-171.
    pub ion_mass_kg: Option<f64>,
    pub positions_m: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSource {
    Chain,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    pub source: ModeSource,
    /// Local mode shifts `ω_j`.
    pub omega_hz: Option<Vec<f64>>,
    /// Nearest-neighbour couplings; longer range follows `1/d³`.
    pub kappa_nn_hz: Option<Vec<f64>>,
    /// Full symmetric coupling matrix.
    pub kappa_hz: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivesSection {
    pub rabi_red_hz: Vec<f64>,
    pub rabi_blue_hz: Option<Vec<f64>>,
    pub rabi_carrier_hz: Option<Vec<f64>>,
    pub blockade_detuning_hz: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpamSection {
    #[serde(default)]
    pub eps_g: f64,
    #[serde(default)]
    pub eps_e: f64,
    #[serde(default)]
    pub eps_e_prime: f64,
    pub nbar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_readout")]
    pub readout: ReadoutMode,
    #[serde(default = "default_pulses")]
    pub pulses: PulseMode,
    #[serde(default = "default_leakage")]
    pub leakage_threshold: f64,
}

fn default_n_max() -> usize {
    2
}
fn default_readout() -> ReadoutMode {
    ReadoutMode::Physical
}
fn default_pulses() -> PulseMode {
    PulseMode::Finite
}
fn default_leakage() -> f64 {
    DEFAULT_LEAKAGE_THRESHOLD
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { n_max: 2, readout: default_readout(), pulses: default_pulses(), leakage_threshold: default_leakage() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub name: String,
    #[serde(default)]
    pub segments: Vec<SegmentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentSection {
    PreparePhonon {
        site: usize,
    },
    /// Without a duration this is the swept window.
    FreeHop {
        duration_us: Option<f64>,
    },
    Blockade {
        duration_us: Option<f64>,
        sites: Vec<usize>,
        rabi_hz: Option<Vec<f64>>,
        detuning_hz: Option<Vec<f64>>,
    },
    Pulse {
        site: usize,
        drive: DriveKind,
        rabi_hz: Option<f64>,
        duration_us: Option<f64>,
        #[serde(default)]
        detuning_hz: f64,
    },
    Readout {
        sites: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory, relative to the working directory.
    pub dir: Option<String>,
    /// `"start:stop:step"` in μs.
    pub time_grid_us: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Defaults to every parameter within ±50% of its configured value.
    pub free: Option<Vec<FreeSection>>,
    #[serde(default)]
    pub weighting: Option<Weighting>,
    pub restarts: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
    pub simplex_scale: Option<f64>,
    pub jitter: Option<f64>,
    pub stages: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeSection {
    /// `omega_12`, `kappa_23`, `rabi_r_1`, ...
    pub name: String,
    pub lower_hz: f64,
    pub upper_hz: f64,
    /// Defaults to the configured value.
    pub initial_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanInitial {
    /// `|g,1⟩` on the scanned site.
    Phonon,
    /// Every site in `|g,0⟩`.
    Ground,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub site: usize,
    pub kind: SidebandKind,
    pub initial: Option<ScanInitial>,
    /// `"start:stop:step"` in Hz, measured from the common-mode sideband.
    pub detuning_grid_hz: String,
    /// Defaults to the π-time of the scanned drive.
    pub duration_us: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauSection {
    pub p_e_one: f64,
    pub p_e_zero: f64,
}

pub fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|f| Failure::config(format!("{}: {}", path.display(), f.message)))
}

pub fn parse(text: &str) -> Result<ScenarioConfig, Failure> {
    toml::from_str(text).map_err(|e| Failure::config(e.to_string()))
}

/// Evenly spaced `start:stop:step` grid, inclusive of `stop`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::config(format!("grid '{spec}' is not of the form start:stop:step"));
    let parts: Vec<f64> =
        spec.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(start.is_finite() && stop.is_finite() && step.is_finite() && step > 0.0 && stop >= start) {
        return Err(Failure::config(format!("grid '{spec}' needs finite start ≤ stop and a positive step")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(Failure::config(format!("grid '{spec}' has more than a million points")));
    }
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

fn site_index(site: usize, n: usize, what: &str) -> Result<usize, Failure> {
    if site == 0 || site > n {
        return Err(Failure::config(format!("{what}: site {site} is outside 1..={n}")));
    }
    Ok(site - 1)
}

fn per_site(values: Option<&Vec<f64>>, default: f64, n: usize, key: &str) -> Result<Vec<f64>, Failure> {
    match values {
        None => Ok(vec![default; n]),
        Some(v) if v.len() == n => Ok(v.clone()),
        Some(v) => Err(Failure::config(format!("{key} has {} entries for {n} sites", v.len()))),
    }
}

impl ScenarioConfig {
    pub fn chain_config(&self) -> Result<Option<ChainConfig>, Failure> {
        let Some(c) = &self.chain else { return Ok(None) };
        let mut cfg =
            ChainConfig::ytterbium(c.n_ions, hz(c.omega_x_hz), hz(c.omega_y_hz.unwrap_or(c.omega_x_hz)), hz(c.omega_z_hz));
        if let Some(m) = c.ion_mass_kg {
            cfg.ion_mass = m;
        }
        cfg.positions_override = c.positions_m.clone();
        cfg.validate()?;
        Ok(Some(cfg))
    }

    pub fn mode_params(&self) -> Result<ModeParams, Failure> {
        let m = &self.modes;
        match m.source {
            ModeSource::Chain => {
                if m.omega_hz.is_some() || m.kappa_nn_hz.is_some() || m.kappa_hz.is_some() {
                    return Err(Failure::config("modes: source = \"chain\" takes no explicit values"));
                }
                let chain = self.chain_config()?.ok_or_else(|| Failure::config("modes: source = \"chain\" needs [chain]"))?;
                Ok(derive_mode_params(&chain)?)
            }
            ModeSource::Explicit => {
                let omega = m.omega_hz.as_ref().ok_or_else(|| Failure::config("modes: explicit source needs omega_hz"))?;
                let omega: Vec<f64> = omega.iter().map(|&w| hz(w)).collect();
                let n = omega.len();
                match (&m.kappa_nn_hz, &m.kappa_hz) {
                    (Some(nn), None) => {
                        let nn: Vec<f64> = nn.iter().map(|&k| hz(k)).collect();
                        Ok(ModeParams::from_nearest_neighbour(omega, &nn)?)
                    }
                    (None, Some(rows)) => {
                        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                            return Err(Failure::config(format!("modes: kappa_hz must be {n}x{n}")));
                        }
                        let k = DMatrix::from_fn(n, n, |i, j| hz(rows[i][j]));
                        Ok(ModeParams::new(omega, k)?)
                    }
                    _ => Err(Failure::config("modes: give exactly one of kappa_nn_hz and kappa_hz")),
                }
            }
        }
    }

    pub fn setup(&self, n_max_override: Option<usize>) -> Result<SimulationSetup, Failure> {
        let mode = self.mode_params()?;
        let n = mode.n_sites();
        if let Some(c) = &self.chain {
            if c.n_ions != n {
                return Err(Failure::config(format!("chain has {} ions but modes describe {n} sites", c.n_ions)));
            }
        }
        let d = &self.drives;
        let to_rad = |v: Vec<f64>| v.into_iter().map(hz).collect::<Vec<_>>();
        let drives = DriveSettings {
            rabi_red: to_rad(per_site(Some(&d.rabi_red_hz), 0.0, n, "drives.rabi_red_hz")?),
            rabi_blue: to_rad(per_site(d.rabi_blue_hz.as_ref(), DEFAULT_BLUE_RABI_HZ, n, "drives.rabi_blue_hz")?),
            rabi_carrier: to_rad(per_site(d.rabi_carrier_hz.as_ref(), DEFAULT_CARRIER_RABI_HZ, n, "drives.rabi_carrier_hz")?),
            blockade_detuning: to_rad(per_site(d.blockade_detuning_hz.as_ref(), 0.0, n, "drives.blockade_detuning_hz")?),
        };
        let spam = match &self.spam {
            None => SpamModel::ideal(n),
            Some(s) => SpamModel {
                eps_g: s.eps_g,
                eps_e: s.eps_e,
                eps_e_prime: s.eps_e_prime,
                nbar: per_site(s.nbar.as_ref(), 0.0, n, "spam.nbar")?,
            },
        };
        let sim = &self.simulation;
        let options = SimulationOptions {
            n_max: n_max_override.unwrap_or(sim.n_max),
            readout: sim.readout,
            pulses: sim.pulses,
            leakage_threshold: sim.leakage_threshold,
        };
        let setup = SimulationSetup { mode, drives, spam, options };
        setup.validate()?;
        Ok(setup)
    }

    pub fn sequences(&self, n: usize) -> Result<Vec<Sequence>, Failure> {
        let mut names: Vec<&str> = Vec::new();
        self.sequences
            .iter()
            .map(|s| {
                if s.name.is_empty() || s.name.contains(['/', '\\']) {
                    return Err(Failure::config(format!("sequence name '{}' is not a valid file stem", s.name)));
                }
                if names.contains(&s.name.as_str()) {
                    return Err(Failure::config(format!("duplicate sequence name '{}'", s.name)));
                }
                names.push(&s.name);
                let what = format!("sequence '{}'", s.name);
                let segments = s.segments.iter().map(|seg| segment(seg, n, &what)).collect::<Result<_, _>>()?;
                Ok(Sequence { name: s.name.clone(), segments })
            })
            .collect()
    }

    pub fn time_grid(&self, flag: Option<&str>) -> Result<Vec<f64>, Failure> {
        let spec = flag
            .or(self.output.time_grid_us.as_deref())
            .ok_or_else(|| Failure::config("no time grid: set output.time_grid_us or pass --time-grid"))?;
        let grid = parse_grid(spec)?;
        if grid[0] < 0.0 {
            return Err(Failure::config("time grid must start at or after 0 μs"));
        }
        Ok(grid)
    }

    /// Fixed values, free parameters and options of `[fit]`.
    pub fn fit_setup(
        &self,
        setup: &SimulationSetup,
        seed: Option<u64>,
    ) -> Result<(PhysicalParams, Vec<FreeParam>, FitOptions, Weighting), Failure> {
        let section = self.fit.clone().unwrap_or(FitSection {
            free: None,
            weighting: None,
            restarts: None,
            max_iterations: None,
            tolerance: None,
            seed: None,
            simplex_scale: None,
            jitter: None,
            stages: None,
        });
        let fixed = PhysicalParams::from_setup(setup);
        let n = setup.n_sites();
        let free = match &section.free {
            Some(list) => list
                .iter()
                .map(|f| {
                    let id = ParamId::parse(&f.name, n)?;
                    Ok(FreeParam {
                        id,
                        lower: hz(f.lower_hz),
                        upper: hz(f.upper_hz),
                        initial: f.initial_hz.map(hz).unwrap_or(fixed.get(id)),
                    })
                })
                .collect::<Result<Vec<_>, Failure>>()?,
            None => ionhop::fit::all_params(n)
                .into_iter()
                .map(|id| {
                    let v = fixed.get(id);
                    if v == 0.0 {
                        return Err(Failure::config(format!("{} is zero; give explicit bounds in [fit].free", id.name())));
                    }
                    let (a, b) = (0.5 * v, 1.5 * v);
                    Ok(FreeParam { id, lower: a.min(b), upper: a.max(b), initial: v })
                })
                .collect::<Result<Vec<_>, Failure>>()?,
        };
        let d = FitOptions::default();
        let options = FitOptions {
            restarts: section.restarts.unwrap_or(d.restarts),
            max_iterations: section.max_iterations.unwrap_or(d.max_iterations),
            tolerance: section.tolerance.unwrap_or(d.tolerance),
            seed: seed.or(section.seed).unwrap_or(d.seed),
            simplex_scale: section.simplex_scale.unwrap_or(d.simplex_scale),
            jitter: section.jitter.unwrap_or(d.jitter),
            stages: section.stages.unwrap_or(d.stages),
        };
        Ok((fixed, free, options, section.weighting.unwrap_or(Weighting::Uniform)))
    }
}

fn segment(seg: &SegmentSection, n: usize, what: &str) -> Result<PulseSegment, Failure> {
    let duration = |d: Option<f64>| d.map(us);
    let sites = |v: &[usize]| v.iter().map(|&s| site_index(s, n, what)).collect::<Result<Vec<_>, _>>();
    let to_rad = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v.iter().map(|&x| hz(x)).collect::<Vec<_>>());
    Ok(match seg {
        SegmentSection::PreparePhonon { site } => PulseSegment::PreparePhonon { site: site_index(*site, n, what)? },
        SegmentSection::FreeHop { duration_us } => PulseSegment::FreeHop { duration: duration(*duration_us) },
        SegmentSection::Blockade { duration_us, sites: s, rabi_hz, detuning_hz } => PulseSegment::Blockade {
            duration: duration(*duration_us),
            sites: sites(s)?,
            rabi: to_rad(rabi_hz),
            detuning: to_rad(detuning_hz),
        },
        SegmentSection::Pulse { site, drive, rabi_hz, duration_us, detuning_hz } => PulseSegment::Pulse {
            site: site_index(*site, n, what)?,
            kind: *drive,
            rabi: rabi_hz.map(hz),
            duration: duration(*duration_us),
            detuning: hz(*detuning_hz),
        },
        SegmentSection::Readout { sites: s } => PulseSegment::Readout { sites: s.as_deref().map(sites).transpose()? },
    })
}
