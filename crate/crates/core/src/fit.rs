//! Weighted least-squares estimation of the mode and drive parameters from
//! occupancy traces.
//!
//! For `n` sites the physical parameter vector is
//! `(ω_12, …, ω_{n−1,n}, κ_12, …, κ_{n−1,n}, Ω_1^r, …, Ω_n^r)` in rad/s, with
//! `ω_1 = 0` fixing the frame and longer-range couplings following the
//! `1/d³` law from the nearest-neighbour values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::ModeParams;
use crate::error::{Error, Result};
use crate::experiment::{OccupancyTrace, Sequence, SimulationSetup, Simulator};
use crate::units::to_hz;

pub const SIGMA_MIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    OmegaDiff,
    Kappa,
    RabiRed,
}

/// Position in the physical parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId {
    pub kind: ParamKind,
    /// Zero-based bond (`j, j+1`) or site index.
    pub index: usize,
}

impl ParamId {
    pub fn name(&self) -> String {
        match self.kind {
            ParamKind::OmegaDiff => format!("omega_{}{}", self.index + 1, self.index + 2),
            ParamKind::Kappa => format!("kappa_{}{}", self.index + 1, self.index + 2),
            ParamKind::RabiRed => format!("rabi_r_{}", self.index + 1),
        }
    }

    pub fn parse(name: &str, n_sites: usize) -> Result<Self> {
        all_params(n_sites)
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::config(format!("unknown fit parameter '{name}' for {n_sites} sites")))
    }
}

pub fn all_params(n_sites: usize) -> Vec<ParamId> {
    let bonds = n_sites.saturating_sub(1);
    let mut v: Vec<ParamId> = (0..bonds).map(|index| ParamId { kind: ParamKind::OmegaDiff, index }).collect();
    v.extend((0..bonds).map(|index| ParamId { kind: ParamKind::Kappa, index }));
    v.extend((0..n_sites).map(|index| ParamId { kind: ParamKind::RabiRed, index }));
    v
}

/// Physical parameters in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// `ω_{j,j+1}`.
    pub omega_diff: Vec<f64>,
    /// `κ_{j,j+1}`.
    pub kappa_nn: Vec<f64>,
    /// `Ω_j^r`.
    pub rabi_red: Vec<f64>,
}

impl PhysicalParams {
    /// Nearest-neighbour values read off `setup`. Longer-range couplings are
    /// not represented and follow the `1/d³` law once applied.
    pub fn from_setup(setup: &SimulationSetup) -> Self {
        let n = setup.n_sites();
        let m = &setup.mode;
        Self {
            omega_diff: (0..n.saturating_sub(1)).map(|j| m.omega_diff(j, j + 1)).collect(),
            kappa_nn: (0..n.saturating_sub(1)).map(|j| m.kappa[(j, j + 1)]).collect(),
            rabi_red: setup.drives.rabi_red.clone(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.rabi_red.len()
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id.kind {
            ParamKind::OmegaDiff => self.omega_diff[id.index],
            ParamKind::Kappa => self.kappa_nn[id.index],
            ParamKind::RabiRed => self.rabi_red[id.index],
        }
    }

    pub fn set(&mut self, id: ParamId, value: f64) {
        match id.kind {
            ParamKind::OmegaDiff => self.omega_diff[id.index] = value,
            ParamKind::Kappa => self.kappa_nn[id.index] = value,
            ParamKind::RabiRed => self.rabi_red[id.index] = value,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        all_params(self.n_sites()).into_iter().map(|id| self.get(id)).collect()
    }

    pub fn omega_shift(&self) -> Vec<f64> {
        let mut w = vec![0.0];
        for d in &self.omega_diff {
            w.push(w.last().unwrap() - d);
        }
        w
    }

    pub fn mode_params(&self) -> Result<ModeParams> {
        ModeParams::from_nearest_neighbour(self.omega_shift(), &self.kappa_nn)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        if n == 0 || self.omega_diff.len() + 1 != n || self.kappa_nn.len() + 1 != n {
            return Err(Error::config("parameter vectors do not describe a chain"));
        }
        if self.to_vec().iter().any(|x| !x.is_finite()) {
            return Err(Error::config("parameters must be finite"));
        }
        Ok(())
    }

    /// `setup` with the mode and red-sideband Rabi frequencies replaced.
    pub fn apply(&self, setup: &SimulationSetup) -> Result<SimulationSetup> {
        if setup.n_sites() != self.n_sites() {
            return Err(Error::config(format!(
                "parameters describe {} sites, setup has {}",
                self.n_sites(),
                setup.n_sites()
            )));
        }
        let mut s = setup.clone();
        s.mode = self.mode_params()?;
        s.drives.rabi_red = self.rabi_red.clone();
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum Weighting {
    Uniform,
    /// `1/max(P(1−P)/shots, σ_min²)` with `P` the measured value.
    Binomial { shots: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequence: Sequence,
    pub data: OccupancyTrace,
    /// Same shape as `data.p_e`.
    pub weights: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(sequence: Sequence, data: OccupancyTrace, weighting: Weighting) -> Result<Self> {
        data.validate()?;
        let weights = match weighting {
            Weighting::Uniform => data.p_e.iter().map(|r| vec![1.0; r.len()]).collect(),
            Weighting::Binomial { shots } => {
                if !(shots.is_finite() && shots > 0.0) {
                    return Err(Error::config("shots must be positive"));
                }
                data.p_e
                    .iter()
                    .map(|r| r.iter().map(|&p| 1.0 / (p * (1.0 - p) / shots).max(SIGMA_MIN * SIGMA_MIN)).collect())
                    .collect()
            }
        };
        Ok(Self { sequence, data, weights })
    }

    /// The points with `t ≤ t_max`, keeping at least `min_points`.
    fn truncated(&self, t_max: f64, min_points: usize) -> Dataset {
        let times = &self.data.times;
        let keep = times.iter().filter(|&&t| t <= t_max).count().max(min_points).min(times.len());
        let mut data = self.data.clone();
        data.times.truncate(keep);
        data.p_e.truncate(keep);
        let mut weights = self.weights.clone();
        weights.truncate(keep);
        Dataset { sequence: self.sequence.clone(), data, weights }
    }

    fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let shape_ok = self.weights.len() == self.data.p_e.len()
            && self.weights.iter().zip(&self.data.p_e).all(|(w, p)| w.len() == p.len());
        if !shape_ok {
            return Err(Error::config(format!("weights of dataset '{}' do not match its data", self.sequence.name)));
        }
        if self.weights.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(format!("weights of dataset '{}' must be non-negative", self.sequence.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub id: ParamId,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Extra simplex runs after the first.
    pub restarts: usize,
    pub max_iterations: usize,
    /// Simplex spread `max f − min f` at which a run stops.
    pub tolerance: f64,
    pub seed: u64,
    /// Size of the initial simplex as a fraction of each bound interval.
    pub simplex_scale: f64,
    /// Restart offsets as a fraction of each bound interval.
    pub jitter: f64,
    /// Number of time-window stages. Stage `s` of `S` fits the points up to
    /// `2^(s+1−S)` of each dataset's last time, starting from the previous
    /// stage's best point.
    pub stages: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iterations: 2000, tolerance: 1e-10, seed: 0, simplex_scale: 0.1, jitter: 0.05, stages: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    /// Fixed settings: SPAM, thermal occupations, pulse rates and options.
    pub setup: SimulationSetup,
    pub datasets: Vec<Dataset>,
    /// Values of every parameter; the free ones are overwritten.
    pub fixed: PhysicalParams,
    pub free: Vec<FreeParam>,
    pub options: FitOptions,
}

impl FitProblem {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        self.fixed.validate()?;
        if self.fixed.n_sites() != self.setup.n_sites() {
            return Err(Error::config("parameter and setup site counts differ"));
        }
        for d in &self.datasets {
            d.validate()?;
            if d.data.n_sites() != self.setup.n_sites() {
                return Err(Error::config(format!(
                    "dataset '{}' has {} sites, model has {}",
                    d.sequence.name,
                    d.data.n_sites(),
                    self.setup.n_sites()
                )));
            }
        }
        for (i, f) in self.free.iter().enumerate() {
            if self.free[..i].iter().any(|g| g.id == f.id) {
                return Err(Error::config(format!("parameter {} listed twice", f.id.name())));
            }
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower < f.upper) {
                return Err(Error::config(format!("bounds of {} must be finite with lower < upper", f.id.name())));
            }
            if !(f.lower..=f.upper).contains(&f.initial) {
                return Err(Error::config(format!("initial guess of {} lies outside its bounds", f.id.name())));
            }
            if f.id.kind != ParamKind::OmegaDiff && f.lower < 0.0 {
                return Err(Error::config(format!("{} must be bounded below by zero", f.id.name())));
            }
        }
        let o = &self.options;
        if !(o.tolerance >= 0.0 && o.simplex_scale > 0.0 && o.simplex_scale <= 1.0 && (0.0..=1.0).contains(&o.jitter) && o.stages > 0) {
            return Err(Error::config(
                "tolerance must be non-negative, simplex_scale in (0, 1], jitter in [0, 1] and stages positive",
            ));
        }
        Ok(())
    }

    pub fn initial(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.initial).collect()
    }

    pub fn params_from(&self, x: &[f64]) -> Result<PhysicalParams> {
        if x.len() != self.free.len() {
            return Err(Error::contract(format!("{} values for {} free parameters", x.len(), self.free.len())));
        }
        let mut p = self.fixed.clone();
        for (f, &v) in self.free.iter().zip(x) {
            if !(f.lower..=f.upper).contains(&v) {
                return Err(Error::OutOfBounds(format!("{} = {v} outside [{}, {}]", f.id.name(), f.lower, f.upper)));
            }
            p.set(f.id, v);
        }
        Ok(p)
    }

    /// Simulated traces, one per dataset, at the data time points.
    pub fn simulate(&self, x: &[f64]) -> Result<Vec<OccupancyTrace>> {
        let setup = self.params_from(x)?.apply(&self.setup)?;
        let mut sim = Simulator::new(&setup)?;
        self.datasets
            .iter()
            .map(|d| {
                sim.run(&d.sequence, &d.data.times)
                    .map_err(|e| Error::Dataset { name: d.sequence.name.clone(), source: Box::new(e) })
            })
            .collect()
    }

    /// Weighted residuals `√w (P_sim − P_data)`, dataset by dataset.
    pub fn residuals(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let sims = self.simulate(x)?;
        Ok(self
            .datasets
            .iter()
            .zip(&sims)
            .map(|(d, s)| {
                let mut r = Vec::new();
                for ((sim, data), w) in s.p_e.iter().zip(&d.data.p_e).zip(&d.weights) {
                    for ((a, b), w) in sim.iter().zip(data).zip(w) {
                        r.push(w.sqrt() * (a - b));
                    }
                }
                r
            })
            .collect())
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residuals(x)?.iter().flatten().map(|r| r * r).sum())
    }
}

fn fd_step(x: f64, rel_step: f64) -> f64 {
    rel_step * x.abs().max(1.0)
}

/// Central-difference gradient with step `rel_step · max(|x_i|, 1)`.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], rel_step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i], rel_step);
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

pub fn objective_gradient(problem: &FitProblem, x: &[f64]) -> Result<Vec<f64>> {
    finite_difference_gradient(|p| problem.objective(p), x, 1e-4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub name: String,
    /// `‖∂r/∂ln p_i‖` of the weighted residual vector.
    pub value: f64,
    pub identifiable: bool,
}

/// Norm of each column of the residual Jacobian, scaled by the parameter
/// magnitude so that the entries are comparable. Central differences with
/// relative step `1e−4`, shrunk where a bound would be crossed.
/// Entries below `1e−3` of the largest are flagged unidentifiable.
pub fn sensitivity(problem: &FitProblem, x: &[f64]) -> Result<Vec<Sensitivity>> {
    problem.params_from(x)?;
    let flat = |x: &[f64]| -> Result<Vec<f64>> { Ok(problem.residuals(x)?.into_iter().flatten().collect()) };
    let mut probe = x.to_vec();
    let mut values = Vec::with_capacity(x.len());
    for (i, f) in problem.free.iter().enumerate() {
        let h = fd_step(x[i], 1e-4);
        let up = (x[i] + h).min(f.upper);
        let down = (x[i] - h).max(f.lower);
        probe[i] = up;
        let r_up = flat(&probe)?;
        probe[i] = down;
        let r_down = flat(&probe)?;
        probe[i] = x[i];
        let norm: f64 = r_up.iter().zip(&r_down).map(|(a, b)| ((a - b) / (up - down)).powi(2)).sum::<f64>().sqrt();
        values.push(norm * x[i].abs().max(h));
    }
    let top = values.iter().cloned().fold(0.0, f64::max);
    Ok(problem
        .free
        .iter()
        .zip(values)
        .map(|(f, value)| Sensitivity { name: f.id.name(), value, identifiable: value > 1e-3 * top })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexRun {
    pub start: Vec<f64>,
    pub best: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub spread: f64,
    pub converged: bool,
}

/// Nelder-Mead on the box `[lower, upper]` from the given initial simplex,
/// with every trial point projected onto the box. Coefficients: reflection 1,
/// expansion 2, contraction 0.5, shrink 0.5.
pub fn nelder_mead<F>(
    mut f: F,
    lower: &[f64],
    upper: &[f64],
    simplex: Vec<Vec<f64>>,
    max_iterations: usize,
    tolerance: f64,
) -> Result<SimplexRun>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let k = lower.len();
    if simplex.len() != k + 1 || simplex.iter().any(|v| v.len() != k) {
        return Err(Error::contract("simplex needs n + 1 vertices of dimension n"));
    }
    let project = |v: &mut Vec<f64>| {
        for ((x, lo), hi) in v.iter_mut().zip(lower).zip(upper) {
            *x = x.clamp(*lo, *hi);
        }
    };
    let mut evaluations = 0;
    let mut eval = |v: &[f64], evaluations: &mut usize| -> Result<f64> {
        *evaluations += 1;
        let y = f(v)?;
        if y.is_nan() {
            return Err(Error::Numerical("objective returned NaN".into()));
        }
        Ok(y)
    };
    let start = simplex[0].clone();
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    for mut v in simplex {
        project(&mut v);
        let y = eval(&v, &mut evaluations)?;
        pts.push((v, y));
    }
    let order = |pts: &mut Vec<(Vec<f64>, f64)>| pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut pts);
    let mut iterations = 0;
    let spread = |pts: &[(Vec<f64>, f64)]| pts[k].1 - pts[0].1;
    while spread(&pts) >= tolerance && iterations < max_iterations {
        iterations += 1;
        let centroid: Vec<f64> =
            (0..k).map(|i| pts[..k].iter().map(|(v, _)| v[i]).sum::<f64>() / k as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            let mut v: Vec<f64> = (0..k).map(|i| centroid[i] + t * (pts[k].0[i] - centroid[i])).collect();
            project(&mut v);
            v
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evaluations)?;
        if fr < pts[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evaluations)?;
            pts[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[k - 1].1 {
            pts[k] = (xr, fr);
        } else {
            let (xc, fc) = if fr < pts[k].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evaluations)?;
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evaluations)?;
                (xc, fc)
            };
            if fc < pts[k].1.min(fr) {
                pts[k] = (xc, fc);
            } else {
                let best = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    let mut v: Vec<f64> = (0..k).map(|i| best[i] + 0.5 * (p.0[i] - best[i])).collect();
                    project(&mut v);
                    let y = eval(&v, &mut evaluations)?;
                    *p = (v, y);
                }
            }
        }
        order(&mut pts);
    }
    let spread = spread(&pts);
    Ok(SimplexRun {
        start,
        best: pts[0].0.clone(),
        value: pts[0].1,
        iterations,
        evaluations,
        spread,
        converged: spread < tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    /// rad/s
    pub value: f64,
    pub value_hz: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResidual {
    pub name: String,
    pub rss: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: Vec<ParamEstimate>,
    /// All physical parameters at the optimum, rad/s.
    pub params: PhysicalParams,
    pub rss: f64,
    pub datasets: Vec<DatasetResidual>,
    pub runs: Vec<SimplexRun>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|e| e.name == name).map(|e| e.value)
    }
}

fn axis_simplex(x0: &[f64], lower: &[f64], upper: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let mut s = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        let h = steps[i];
        v[i] = if x0[i] + h <= upper[i] { x0[i] + h } else if x0[i] - h >= lower[i] { x0[i] - h } else { x0[i] + h };
        s.push(v);
    }
    s
}

/// Minimum number of points per dataset in a shortened stage.
const STAGE_MIN_POINTS: usize = 5;

/// First run from the initial guess, then `restarts` runs from initial
/// guesses jittered uniformly by `±jitter` of each bound interval, all on the
/// shortest time window. The best point seeds one run per longer window, and
/// a polishing run on the full data finishes. The RNG is seeded from
/// `options.seed`, so results are reproducible.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    if problem.free.is_empty() {
        return Err(Error::config("no free parameters"));
    }
    let lower: Vec<f64> = problem.free.iter().map(|f| f.lower).collect();
    let upper: Vec<f64> = problem.free.iter().map(|f| f.upper).collect();
    let span: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| u - l).collect();
    let o = &problem.options;
    let steps: Vec<f64> = span.iter().map(|s| o.simplex_scale * s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let initial = problem.initial();
    let mut runs: Vec<SimplexRun> = Vec::with_capacity(o.restarts + o.stages + 1);
    let run_on = |p: &FitProblem, x0: &[f64], steps: &[f64]| {
        nelder_mead(|x| p.objective(x), &lower, &upper, axis_simplex(x0, &lower, &upper, steps), o.max_iterations, o.tolerance)
    };
    let best_of = |runs: &[SimplexRun]| runs.iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("at least one run").best.clone();

    let stage = |s: usize| -> FitProblem {
        let fraction = 0.5f64.powi((o.stages - 1 - s) as i32);
        let mut p = problem.clone();
        for d in &mut p.datasets {
            let t_end = d.data.times.last().copied().unwrap_or(0.0);
            *d = d.truncated(fraction * t_end, STAGE_MIN_POINTS);
        }
        p
    };
    let first = stage(0);
    runs.push(run_on(&first, &initial, &steps)?);
    for _ in 0..o.restarts {
        let x0: Vec<f64> = (0..initial.len())
            .map(|i| (initial[i] + o.jitter * span[i] * rng.random_range(-1.0..=1.0)).clamp(lower[i], upper[i]))
            .collect();
        runs.push(run_on(&first, &x0, &steps)?);
    }
    let mut best = best_of(&runs);
    for s in 1..o.stages {
        let run = run_on(&stage(s), &best, &steps)?;
        best = run.best.clone();
        runs.push(run);
    }
    // Runs on shorter windows are not comparable with the full objective.
    let full_from = if o.stages == 1 { 0 } else { runs.len() - 1 };
    let fine: Vec<f64> = steps.iter().map(|s| 0.1 * s).collect();
    runs.push(run_on(problem, &best_of(&runs[full_from..]), &fine)?);
    let best_run = runs[full_from..].iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("at least one run");
    let x = best_run.best.clone();
    let params = problem.params_from(&x)?;
    let residuals = problem.residuals(&x)?;
    let datasets = problem
        .datasets
        .iter()
        .zip(&residuals)
        .map(|(d, r)| DatasetResidual { name: d.sequence.name.clone(), rss: r.iter().map(|v| v * v).sum(), points: r.len() })
        .collect();
    let estimates = problem
        .free
        .iter()
        .zip(&x)
        .map(|(f, &value)| ParamEstimate { name: f.id.name(), value, value_hz: to_hz(value), lower: f.lower, upper: f.upper })
        .collect();
    Ok(FitResult {
        estimates,
        params,
        rss: best_run.value,
        datasets,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        converged: best_run.converged,
        runs,
        seed: o.seed,
    })
}
