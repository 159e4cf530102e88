//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ionhop::chain::{derive_mode_params, ChainConfig, ModeParams};
use ionhop::dynamics::{build_hamiltonian, excitation_operator, DriveParams, HamiltonianSpec, Spectrum};
use ionhop::experiment::{
    run_sequence, DriveSettings, PulseSegment, Sequence, SimulationOptions, SimulationSetup,
};
use ionhop::fit::{all_params, fit, sensitivity, Dataset, FitOptions, FitProblem, FreeParam, ParamKind, PhysicalParams, Weighting};
use ionhop::hilbert::{expectation, QuantumState, SpaceSpec, Spin};
use ionhop::reduced::{three_level_basis, three_level_hamiltonian, ThreeLevelParams};
use ionhop::spam::{extract_spam_from_plateaus, SpamModel};
use ionhop::units::hz;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: ionhop::Error) -> String {
    e.to_string()
}

fn geometry() -> Result<String, String> {
    let cfg = ChainConfig::ytterbium(3, hz(3.10e6), hz(3.10e6), hz(0.15e6));
    let mode = derive_mode_params(&cfg).map_err(err)?;
    let d = mode.distances.as_ref().unwrap();
    let k = &mode.kappa;
    let spacing = d[(0, 1)] * 1e6;
    let k12 = k[(0, 1)] / hz(1.0);
    let ratio = k[(0, 2)] / k[(0, 1)];
    ensure((spacing - 10.1).abs() <= 0.05 * 10.1, || format!("spacing {spacing:.3} um"))?;
    ensure((d[(1, 2)] - d[(0, 1)]).abs() < 1e-12 * d[(0, 1)], || "chain not symmetric".into())?;
    ensure((k12 - 3e3).abs() <= 0.15 * 3e3, || format!("kappa_12 {k12:.1} Hz"))?;
    ensure((ratio - 0.125).abs() < 1e-10, || format!("kappa_13/kappa_12 = {ratio}"))?;
    Ok(format!("d = {spacing:.3} um, kappa/2pi = {k12:.1} Hz, kappa_13/kappa_12 = {ratio:.12}"))
}

fn spam_composition() -> Result<String, String> {
    let m = SpamModel { eps_g: 0.0026, eps_e: 0.0091, eps_e_prime: 0.114, nbar: vec![0.0] }.matrix().0;
    let want = [[0.997, 0.122], [0.003, 0.878]];
    let worst = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (m[i][j] - want[i][j]).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.001, || format!("matrix {m:?}, worst deviation {worst:.2e}"))?;
    Ok(format!("[[{:.4}, {:.4}], [{:.4}, {:.4}]], worst deviation {worst:.1e}", m[0][0], m[0][1], m[1][0], m[1][1]))
}

fn spam_extraction() -> Result<String, String> {
    let f = extract_spam_from_plateaus(0.836, 0.048, 0.0026, 0.0091).map_err(err)?;
    ensure((f.mean_nbar - 0.055).abs() <= 0.005, || format!("nbar {}", f.mean_nbar))?;
    ensure((f.eps_e_prime - 0.114).abs() <= 0.005, || format!("eps_e' {}", f.eps_e_prime))?;
    Ok(format!("nbar = {:.4}, eps_e' = {:.4}", f.mean_nbar, f.eps_e_prime))
}

fn two_site_oracle() -> Result<String, String> {
    let space = SpaceSpec::new(2, 2).map_err(err)?;
    let g = [Spin::Ground, Spin::Ground];
    let start = QuantumState::from_labels(space, &g, &[1, 0]).map_err(err)?;
    let target = space.basis_index(&g, &[0, 1]).map_err(err)?;
    let (mut worst, mut unitarity, mut trace) = (0.0f64, 0.0f64, 0.0f64);
    for kappa_khz in [0.5, 1.5, 3.0, 4.5, 6.0] {
        for omega_khz in [-20.0, -8.0, 0.0, 5.0, 15.0] {
            let (k, w) = (hz(kappa_khz * 1e3), hz(omega_khz * 1e3));
            let mode = ModeParams::from_nearest_neighbour(vec![0.0, -w], &[k]).map_err(err)?;
            let h = HamiltonianSpec { mode, drive: DriveParams::off(2), include_hopping: true };
            let spectrum = Spectrum::new(&build_hamiltonian(space, &h).map_err(err)?).map_err(err)?;
            let omega_eff = (w * w + 4.0 * k * k).sqrt();
            for i in 0..=200 {
                let t = i as f64 * 5e-6;
                let u = spectrum.propagator(t);
                let rho = u.conjugate(&start.rho);
                let exact = 4.0 * k * k / (omega_eff * omega_eff) * (0.5 * omega_eff * t).sin().powi(2);
                worst = worst.max((rho[(target, target)].re - exact).abs());
                unitarity = unitarity.max(u.unitarity_error());
                trace = trace.max((rho.trace().re - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("population error {worst:.2e}"))?;
    ensure(unitarity <= 1e-9 && trace <= 1e-9, || format!("unitarity {unitarity:.2e}, trace {trace:.2e}"))?;
    Ok(format!("max error {worst:.1e}, unitarity {unitarity:.1e}, trace {trace:.1e} over 25 grid points"))
}

const K12: f64 = 2.9e3;
const W12: f64 = 11.58e3;
const R2: f64 = 45.9e3;

fn blockade_hamiltonian(space: SpaceSpec, omega_1: f64, omega_12: f64) -> Result<ionhop::hilbert::OperatorMatrix, String> {
    let shifts = vec![omega_1, omega_1 - omega_12, omega_1 - omega_12 - hz(5e3)];
    let mode = ModeParams::from_nearest_neighbour(shifts, &[hz(K12), hz(3.1e3)]).map_err(err)?;
    let h = HamiltonianSpec { mode, drive: DriveParams::red(3, 1, hz(R2)), include_hopping: true };
    build_hamiltonian(space, &h).map_err(err)
}

fn three_level_consistency() -> Result<String, String> {
    let space = SpaceSpec::new(3, 2).map_err(err)?;
    let basis = three_level_basis(space).map_err(err)?;
    let omega_1 = hz(1.7e3);
    let h = blockade_hamiltonian(space, omega_1, hz(W12))?;
    let p = ThreeLevelParams { kappa_12: hz(K12), omega_12: hz(W12), omega_r_2: hz(R2) };
    let reference = three_level_hamiltonian(&p).map_err(err)? + DMatrix::identity(3, 3) * omega_1;
    let scale = hz(R2);
    let mut projection = 0.0f64;
    for (a, &i) in basis.iter().enumerate() {
        for (b, &j) in basis.iter().enumerate() {
            projection = projection.max((h.mat[(i, j)] - reference[(a, b)]).norm() / scale);
        }
    }
    ensure(projection <= 1e-12, || format!("projection mismatch {projection:.2e}"))?;

    let reduced = Spectrum::from_matrix(&reference.map(|x| nalgebra::Complex::new(x, 0.0))).map_err(err)?;
    let full = Spectrum::new(&h).map_err(err)?;
    let start = QuantumState::basis(space, basis[0]).map_err(err)?;
    let mut r0 = ionhop::hilbert::CMatrix::zeros(3, 3);
    r0[(0, 0)] = 1.0.into();
    let mut deviation = 0.0f64;
    for i in 0..=400 {
        let t = i as f64 * 1e-6;
        let rho = full.propagator(t).conjugate(&start.rho);
        let small = reduced.propagator(t).conjugate(&r0);
        for (a, &s) in basis.iter().enumerate() {
            deviation = deviation.max((rho[(s, s)].re - small[(a, a)].re).abs());
        }
    }
    ensure(deviation < 0.05, || format!("three-level deviation {deviation:.3}"))?;

    let peak = |omega_12: f64| -> Result<f64, String> {
        let s = Spectrum::new(&blockade_hamiltonian(space, 0.0, omega_12)?).map_err(err)?;
        Ok((0..=400).map(|i| s.propagator(i as f64 * 1e-6).conjugate(&start.rho)[(basis[1], basis[1])].re).fold(0.0, f64::max))
    };
    let (detuned, resonant) = (peak(hz(W12))?, peak(0.0)?);
    ensure(detuned > resonant, || format!("peak {detuned:.4} at 11.58 kHz vs {resonant:.4} at 0"))?;
    Ok(format!(
        "projection {projection:.1e}, max deviation {deviation:.4}, peak transfer {detuned:.4} (11.58 kHz) > {resonant:.4} (0 kHz)"
    ))
}

fn conservation() -> Result<String, String> {
    let space = SpaceSpec::new(3, 2).map_err(err)?;
    let mode = ModeParams::from_nearest_neighbour(vec![0.0, hz(-11.58e3), hz(-16.58e3)], &[hz(2.9e3), hz(3.1e3)]).map_err(err)?;
    let mut start = ionhop::dynamics::thermal_state(space, &[0.3, 0.2, 0.1]).map_err(err)?;
    let seed = QuantumState::from_labels(space, &[Spin::Excited, Spin::Ground, Spin::Ground], &[0, 1, 0]).map_err(err)?;
    start.rho = (&start.rho + &seed.rho).unscale(2.0);
    let n = excitation_operator(space);
    let n0 = expectation(&start, &n).map_err(err)?;
    let drift = |drive: DriveParams| -> Result<f64, String> {
        let h = HamiltonianSpec { mode: mode.clone(), drive, include_hopping: true };
        let s = Spectrum::new(&build_hamiltonian(space, &h).map_err(err)?).map_err(err)?;
        let mut worst = 0.0f64;
        for i in 0..=100 {
            let rho = s.propagator(i as f64 * 1e-5).conjugate(&start.rho);
            let evolved = QuantumState::new(space, rho).map_err(err)?;
            worst = worst.max((expectation(&evolved, &n).map_err(err)? - n0).abs());
        }
        Ok(worst)
    };
    let mut red = DriveParams::off(3);
    red.rabi_red = vec![hz(40e3), hz(45.9e3), hz(52e3)];
    red.detuning = vec![0.0, hz(2e3), hz(-3e3)];
    red.active = vec![true; 3];
    let conserved = drift(red)?.max(drift(DriveParams::off(3))?);
    let broken = drift(DriveParams::carrier(3, 1, hz(50e3)))?;
    ensure(conserved < 1e-8, || format!("drift {conserved:.2e} without blue/carrier"))?;
    ensure(broken > 1e-3, || format!("carrier drift only {broken:.2e}"))?;
    Ok(format!("drift {conserved:.1e} with red/hopping, {broken:.3} with carrier"))
}

fn truth() -> PhysicalParams {
    PhysicalParams {
        omega_diff: vec![hz(11.58e3), hz(5e3)],
        kappa_nn: vec![hz(2.9e3), hz(3.1e3)],
        rabi_red: vec![hz(40e3), hz(45.9e3), hz(52e3)],
    }
}

fn fit_sequences() -> Vec<Sequence> {
    let mut seqs: Vec<Sequence> = (0..3)
        .map(|s| Sequence {
            name: format!("hop{}", s + 1),
            segments: vec![
                PulseSegment::PreparePhonon { site: s },
                PulseSegment::FreeHop { duration: None },
                PulseSegment::Readout { sites: None },
            ],
        })
        .collect();
    for (p, b) in [(0usize, vec![1usize]), (1, vec![0, 2]), (1, vec![2]), (2, vec![1]), (1, vec![0])] {
        let name = format!("blockade{}_{}", p + 1, b.iter().map(|s| (s + 1).to_string()).collect::<String>());
        seqs.push(Sequence {
            name,
            segments: vec![
                PulseSegment::PreparePhonon { site: p },
                PulseSegment::Blockade { duration: None, sites: b, rabi: None, detuning: None },
                PulseSegment::Readout { sites: None },
            ],
        });
    }
    seqs
}

fn fit_problem(noise: Option<u64>, free_hop_only: bool) -> Result<FitProblem, String> {
    let truth = truth();
    let setup = SimulationSetup {
        mode: truth.mode_params().map_err(err)?,
        drives: DriveSettings::new(truth.rabi_red.clone()),
        spam: SpamModel { eps_g: 0.0026, eps_e: 0.0091, eps_e_prime: 0.114, nbar: vec![0.09, 0.08, 0.04] },
        options: SimulationOptions::default(),
    };
    let times: Vec<f64> = (0..=100).map(|i| i as f64 * 5e-6).collect();
    let mut rng = noise.map(ChaCha8Rng::seed_from_u64);
    let mut datasets = Vec::new();
    for seq in fit_sequences().into_iter().filter(|s| !free_hop_only || s.name.starts_with("hop")) {
        let mut data = run_sequence(&setup, &seq, &times).map_err(err)?;
        if let Some(rng) = rng.as_mut() {
            for p in data.p_e.iter_mut().flatten() {
                *p = (*p + rng.random_range(-0.02..=0.02)).clamp(0.0, 1.0);
            }
        }
        datasets.push(Dataset::new(seq, data, Weighting::Uniform).map_err(err)?);
    }
    let free = all_params(3)
        .into_iter()
        .map(|id| {
            let v = truth.get(id);
            FreeParam { id, lower: 0.5 * v, upper: 1.5 * v, initial: 1.08 * v }
        })
        .collect();
    Ok(FitProblem { setup, datasets, fixed: truth, free, options: FitOptions::default() })
}

fn recovery(problem: &FitProblem) -> Result<f64, String> {
    let r = fit(problem).map_err(err)?;
    let truth = truth();
    Ok(problem
        .free
        .iter()
        .map(|f| {
            let v = r.estimate(&f.id.name()).unwrap();
            ((v - truth.get(f.id)) / truth.get(f.id)).abs()
        })
        .fold(0.0, f64::max))
}

fn fit_round_trip() -> Result<String, String> {
    let clean = recovery(&fit_problem(None, false)?)?;
    ensure(clean <= 0.01, || format!("noiseless worst relative error {clean:.2e}"))?;
    let noisy = recovery(&fit_problem(Some(7), false)?)?;
    ensure(noisy <= 0.05, || format!("noisy worst relative error {noisy:.2e}"))?;

    let free_hop = fit_problem(None, true)?;
    let x: Vec<f64> = free_hop.free.iter().map(|f| free_hop.fixed.get(f.id)).collect();
    let s = sensitivity(&free_hop, &x).map_err(err)?;
    let (mut rabi, mut others) = (0.0f64, f64::INFINITY);
    for (f, v) in free_hop.free.iter().zip(&s) {
        if f.id.kind == ParamKind::RabiRed {
            rabi = rabi.max(v.value);
        } else {
            others = others.min(v.value);
        }
    }
    let margin = others / rabi;
    ensure(margin >= 10.0, || format!("free-hop sensitivity ratio {margin:.2}"))?;
    Ok(format!(
        "worst error {clean:.1e} noiseless, {noisy:.1e} with noise 0.02; free-hop kappa/omega vs Rabi sensitivity x{margin:.0}"
    ))
}

fn cli_determinism() -> Result<String, String> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let runs: [&[&str]; 3] = [&["simulate"], &["scan"], &["characterize-spam"]];
    let mut files = 0;
    for dir in &dirs {
        for config in ["free-hop-3ion", "blockade-site2"] {
            for args in runs {
                if args[0] == "scan" && config != "free-hop-3ion" || args[0] == "characterize-spam" && config != "blockade-site2" {
                    continue;
                }
                let status = Command::new(env!("CARGO_BIN_EXE_ionhop"))
                    .args(args)
                    .arg("--config")
                    .arg(configs.join(format!("{config}.toml")))
                    .arg("--out-dir")
                    .arg(dir.path().join(config))
                    .output()
                    .map_err(|e| e.to_string())?;
                ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
            }
        }
    }
    for config in ["free-hop-3ion", "blockade-site2"] {
        let a = dirs[0].path().join(config);
        let mut names: Vec<_> =
            std::fs::read_dir(&a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let x = std::fs::read(a.join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(dirs[1].path().join(config).join(&name)).map_err(|e| e.to_string())?;
            ensure(x == y, || format!("{config}/{} differs between runs", name.to_string_lossy()))?;
            files += 1;
        }
    }
    Ok(format!("{files} CSV/JSON files byte-identical across two runs"))
}

fn main() {
    let checks: [(&str, Check, Option<Duration>); 8] = [
        ("geometry and coupling", geometry, Some(Duration::from_secs(1))),
        ("SPAM matrix", spam_composition, Some(Duration::from_secs(1))),
        ("SPAM extraction", spam_extraction, Some(Duration::from_secs(1))),
        ("two-site analytic oracle", two_site_oracle, Some(Duration::from_secs(10))),
        ("three-level consistency", three_level_consistency, Some(Duration::from_secs(10))),
        ("excitation conservation", conservation, None),
        ("fit round trip", fit_round_trip, Some(Duration::from_secs(300))),
        ("CLI determinism", cli_determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
