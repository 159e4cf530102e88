use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use ionhop::experiment::{sideband_scan, SidebandKind, SimulationSetup, Simulator};
use ionhop::fit::{fit, sensitivity, Dataset, FitProblem, FitResult, Sensitivity};
use ionhop::hilbert::{QuantumState, Spin};
use ionhop::spam::{extract_spam_from_plateaus, SpamModel};
use ionhop::units::{hz, to_hz, us};
use serde::Serialize;

use crate::config::{self, ScanInitial, ScenarioConfig};
use crate::failure::{Failure, EXIT_NOT_CONVERGED};
use crate::output::{self, number};

pub struct Common {
    pub config: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub nmax: Option<usize>,
}

struct Loaded {
    cfg: ScenarioConfig,
    setup: SimulationSetup,
    out_dir: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let cfg = config::load(&common.config)?;
    let setup = cfg.setup(common.nmax)?;
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| Failure::io(&out_dir, e))?;
    Ok(Loaded { cfg, setup, out_dir })
}

#[derive(Serialize)]
struct ResolvedSpam {
    eps_g: f64,
    eps_e: f64,
    eps_e_prime: f64,
    nbar: Vec<f64>,
}

/// Every input of a simulation after defaults and unit conversion, in Hz.
#[derive(Serialize)]
struct ResolvedParameters {
    n_sites: usize,
    n_max: usize,
    omega_hz: Vec<f64>,
    kappa_hz: Vec<Vec<f64>>,
    rabi_red_hz: Vec<f64>,
    rabi_blue_hz: Vec<f64>,
    rabi_carrier_hz: Vec<f64>,
    blockade_detuning_hz: Vec<f64>,
    readout: ionhop::experiment::ReadoutMode,
    pulses: ionhop::experiment::PulseMode,
    spam: ResolvedSpam,
}

fn resolved(setup: &SimulationSetup) -> ResolvedParameters {
    let n = setup.n_sites();
    let hzs = |v: &[f64]| v.iter().map(|&w| to_hz(w)).collect::<Vec<_>>();
    ResolvedParameters {
        n_sites: n,
        n_max: setup.options.n_max,
        omega_hz: hzs(&setup.mode.omega_shift),
        kappa_hz: (0..n).map(|i| (0..n).map(|j| to_hz(setup.mode.kappa[(i, j)])).collect()).collect(),
        rabi_red_hz: hzs(&setup.drives.rabi_red),
        rabi_blue_hz: hzs(&setup.drives.rabi_blue),
        rabi_carrier_hz: hzs(&setup.drives.rabi_carrier),
        blockade_detuning_hz: hzs(&setup.drives.blockade_detuning),
        readout: setup.options.readout,
        pulses: setup.options.pulses,
        spam: ResolvedSpam {
            eps_g: setup.spam.eps_g,
            eps_e: setup.spam.eps_e,
            eps_e_prime: setup.spam.eps_e_prime,
            nbar: setup.spam.nbar.clone(),
        },
    }
}

#[derive(Serialize)]
struct Leakage {
    max_top_level_population: f64,
    threshold: f64,
    warning: Option<String>,
}

#[derive(Serialize)]
struct TraceSidecar {
    sequence: String,
    csv: String,
    points: usize,
    parameters: ResolvedParameters,
    leakage: Leakage,
    determinism: &'static str,
}

const DETERMINISM_NOTE: &str = "outputs depend only on the configuration and flags; no clock or random state is used";

pub fn simulate(common: &Common, time_grid: Option<&str>) -> Result<(), Failure> {
    let Loaded { cfg, setup, out_dir } = load(common)?;
    let sequences = cfg.sequences(setup.n_sites())?;
    if sequences.is_empty() {
        return Err(Failure::config("no [[sequence]] entries to simulate"));
    }
    let grid_us = cfg.time_grid(time_grid)?;
    let times: Vec<f64> = grid_us.iter().map(|&t| us(t)).collect();
    let mut sim = Simulator::new(&setup)?;
    for seq in &sequences {
        let trace = sim.run(seq, &times)?;
        let csv_name = format!("{}.csv", seq.name);
        output::write(&out_dir.join(&csv_name), &output::trace_csv(&grid_us, &trace))?;
        if let Some(w) = &trace.metadata.leakage_warning {
            eprintln!("warning: sequence '{}': {w}", seq.name);
        }
        let sidecar = TraceSidecar {
            sequence: seq.name.clone(),
            csv: csv_name,
            points: times.len(),
            parameters: resolved(&setup),
            leakage: Leakage {
                max_top_level_population: trace.metadata.max_leakage,
                threshold: setup.options.leakage_threshold,
                warning: trace.metadata.leakage_warning.clone(),
            },
            determinism: DETERMINISM_NOTE,
        };
        output::write(&out_dir.join(format!("{}.json", seq.name)), &output::json(&sidecar))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    result: &'a FitResult,
    sensitivity: Vec<Sensitivity>,
    data: BTreeMap<String, String>,
}

pub fn fit_data(common: &Common, data: &[PathBuf], seed: Option<u64>) -> Result<(), Failure> {
    let Loaded { cfg, setup, out_dir } = load(common)?;
    if data.is_empty() {
        return Err(Failure::config("fit needs at least one --data file"));
    }
    let n = setup.n_sites();
    let sequences = cfg.sequences(n)?;
    let (fixed, free, options, weighting) = cfg.fit_setup(&setup, seed)?;
    let mut datasets = Vec::with_capacity(data.len());
    let mut sources = BTreeMap::new();
    for path in data {
        if !path.is_file() {
            return Err(Failure::config(format!("data file {} does not exist", path.display())));
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let seq = sequences.iter().find(|s| s.name == stem).ok_or_else(|| {
            Failure::config(format!("data file {} matches no sequence named '{stem}'", path.display()))
        })?;
        if sources.insert(stem.clone(), path.display().to_string()).is_some() {
            return Err(Failure::config(format!("two data files for sequence '{stem}'")));
        }
        let trace = output::read_trace_csv(path, n)?;
        datasets.push(Dataset::new(seq.clone(), trace, weighting)?);
    }
    let problem = FitProblem { setup, datasets, fixed, free, options };
    let result = fit(&problem)?;
    let best: Vec<f64> = result.estimates.iter().map(|e| e.value).collect();
    let report = FitReport { result: &result, sensitivity: sensitivity(&problem, &best)?, data: sources };
    output::write(&out_dir.join("fit.json"), &output::json(&report))?;
    if !result.converged {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: format!("fit did not converge within {} iterations per run; result written", problem.options.max_iterations),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct SpamReport {
    p_e_one: f64,
    p_e_zero: f64,
    eps_g: f64,
    eps_e: f64,
    eps_e_prime: f64,
    mean_nbar: f64,
}

pub fn characterize_spam(common: &Common, p_one: Option<f64>, p_zero: Option<f64>) -> Result<(), Failure> {
    let Loaded { cfg, setup, out_dir } = load(common)?;
    let (p_e_one, p_e_zero) = match (p_one, p_zero, cfg.plateaus) {
        (Some(a), Some(b), _) => (a, b),
        (None, None, Some(p)) => (p.p_e_one, p.p_e_zero),
        (a, b, Some(p)) => (a.unwrap_or(p.p_e_one), b.unwrap_or(p.p_e_zero)),
        _ => return Err(Failure::config("plateau values missing: pass --p-one and --p-zero or set [plateaus]")),
    };
    let SpamModel { eps_g, eps_e, .. } = setup.spam;
    let fit = extract_spam_from_plateaus(p_e_one, p_e_zero, eps_g, eps_e)?;
    let report = SpamReport { p_e_one, p_e_zero, eps_g, eps_e, eps_e_prime: fit.eps_e_prime, mean_nbar: fit.mean_nbar };
    output::write(&out_dir.join("spam.json"), &output::json(&report))
}

pub fn scan(common: &Common) -> Result<(), Failure> {
    let Loaded { cfg, setup, out_dir } = load(common)?;
    let s = cfg.scan.as_ref().ok_or_else(|| Failure::config("scan needs a [scan] section"))?;
    let n = setup.n_sites();
    if s.site == 0 || s.site > n {
        return Err(Failure::config(format!("scan.site {} is outside 1..={n}", s.site)));
    }
    let site = s.site - 1;
    let space = setup.space()?;
    let initial = s.initial.unwrap_or(match s.kind {
        SidebandKind::Red => ScanInitial::Phonon,
        SidebandKind::Blue => ScanInitial::Ground,
    });
    let mut phonons = vec![0; n];
    if initial == ScanInitial::Phonon {
        phonons[site] = 1;
    }
    let state = QuantumState::from_labels(space, &vec![Spin::Ground; n], &phonons)?;
    let rabi = match s.kind {
        SidebandKind::Red => setup.drives.rabi_red[site],
        SidebandKind::Blue => setup.drives.rabi_blue[site],
    };
    let duration = match s.duration_us {
        Some(t) => us(t),
        None if rabi > 0.0 => PI / rabi,
        None => return Err(Failure::config("scan needs duration_us when the Rabi frequency is zero")),
    };
    let grid_hz = config::parse_grid(&s.detuning_grid_hz)?;
    let detunings: Vec<f64> = grid_hz.iter().map(|&d| hz(d)).collect();
    let p_e = sideband_scan(&setup, site, s.kind, &state, &detunings, duration)?;
    let mut csv = format!("detuning_hz,ion{}_Pe\n", s.site);
    for (d, p) in grid_hz.iter().zip(&p_e) {
        csv.push_str(&format!("{},{}\n", number(*d), number(*p)));
    }
    output::write(&out_dir.join("scan.csv"), &csv)
}
