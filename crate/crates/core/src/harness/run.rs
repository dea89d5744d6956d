use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Mode, Profile, RunConfig};
use super::export;
use crate::adapt::{adapt_space, initial_space, mark};
use crate::eigen::principal_eigenvalue;
use crate::error::{Error, Result};
use crate::estimators::{indicators, IndicatorReport};
use crate::fem::assembly::integrate;
use crate::fem::transfer::{prolongate, transfer};
use crate::fem::{FeFunction, FeSpace};
use crate::mesh::{ElementKey, MacroMesh, Mesh};
use crate::noise::{NoiseModel, NoiseStream};
use crate::scheme::{
    derive_hat, potential, step_full, step_linear, transform_y, Forcing, ModelParams, NewtonInfo, StepState,
};

/// `eps ||grad u||^2 + ||F(u)||_{L1} / eps`
pub fn discrete_energy(space: &FeSpace, u: &FeFunction, eps: f64) -> f64 {
    eps * space.grad_norm(u.values()).powi(2) + integrate(space.mesh(), u.values(), potential) / eps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dofs: usize,
    pub mass: f64,
    pub energy: f64,
    /// Eigenvalue sample, present at the configured stride.
    pub lambda: Option<f64>,
    pub newton_iters: usize,
    pub report: IndicatorReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub realization: u64,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Time of the largest `-Lambda` sample.
    pub peak_time: Option<f64>,
    /// Diagnostics of the failure that ended the run early.
    pub failure: Option<String>,
    pub final_state: Option<PathBuf>,
    /// Steps of a deterministic run whose energy rose by more than
    /// [`ENERGY_DRIFT`].
    #[serde(default)]
    pub energy_increases: usize,
}

impl TraceRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    /// `(t, Lambda)` at the sampled levels.
    pub fn lambda_samples(&self) -> Vec<(f64, f64)> {
        self.steps.iter().filter_map(|s| s.lambda.map(|l| (s.t, l))).collect()
    }

    /// Eigenvalue at every level, linearly interpolated between samples and
    /// held constant outside them.
    pub fn lambda_series(&self) -> Vec<f64> {
        let samples = self.lambda_samples();
        self.steps.iter().map(|s| interpolate(&samples, s.t)).collect()
    }
}

/// Per-step energy increase tolerated in deterministic runs.
pub const ENERGY_DRIFT: f64 = 1e-8;

fn interpolate(samples: &[(f64, f64)], t: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let k = samples.partition_point(|s| s.0 < t);
    if k == 0 {
        return samples[0].1;
    }
    if k == samples.len() {
        return samples[k - 1].1;
    }
    let ((t0, a), (t1, b)) = (samples[k - 1], samples[k]);
    if t1 == t0 {
        return b;
    }
    a + (b - a) * (t - t0) / (t1 - t0)
}

fn nan_report(n: usize, t: f64, tau: f64, generation: u64) -> IndicatorReport {
    IndicatorReport {
        step: n,
        generation,
        t,
        tau,
        eta_space: [f64::NAN; 6],
        eta_time: [f64::NAN; 6],
        eta_noise: f64::NAN,
        mu: [f64::NAN; 3],
        muh: [f64::NAN; 3],
    }
}

/// Complete resumable state of a realization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(with = "config_as_toml")]
    pub config: RunConfig,
    pub realization: u64,
    /// Index of the next nominal time level.
    pub nominal: usize,
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub macro_mesh: MacroMesh,
    pub keys: Vec<ElementKey>,
    /// `u, w, ut, wt, uh, wh, y, sigma`
    pub fields: Vec<Vec<f64>>,
    pub newton: NewtonInfo,
    pub noise_sum: Vec<f64>,
    pub warm: Option<Vec<f64>>,
    pub records: Vec<StepRecord>,
}

/// Stores the configuration as its TOML text.
mod config_as_toml {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::RunConfig;

    pub fn serialize<S: Serializer>(cfg: &RunConfig, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&cfg.to_toml())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RunConfig, D::Error> {
        let text = String::deserialize(d)?;
        RunConfig::from_toml(&text).map_err(serde::de::Error::custom)
    }
}

/// Steps one realization through its time levels.
pub struct Runner {
    cfg: RunConfig,
    params: ModelParams,
    realization: u64,
    model: NoiseModel,
    stream: NoiseStream,
    noise_sum: Vec<f64>,
    levels: Vec<f64>,
    nominal: usize,
    state: StepState,
    warm: Option<FeFunction>,
    records: Vec<StepRecord>,
}

impl Runner {
    pub fn new(cfg: &RunConfig, realization: u64) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.params()?;
        let mac = cfg.noise_macro()?;
        let (space, u0) = match cfg.initial.profile(cfg.eps)? {
            Profile::Function(f) => initial_space(&mac, f, &cfg.adapt(), cfg.initial_rounds)?,
            Profile::Checkpoint(path) => {
                let cp = read_checkpoint(&path)?;
                if cp.macro_mesh != *mac {
                    return Err(Error::Config(format!("{} uses a different noise mesh", path.display())));
                }
                let space = Arc::new(FeSpace::new(Arc::new(Mesh::from_keys(mac.clone(), &cp.keys)?)));
                let u = space.function(cp.fields[0].clone())?;
                (space, u)
            }
        };
        if u0.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("initial condition is not finite".into()));
        }
        let state = StepState::initial(space, u0, &params)?;
        let model = NoiseModel::new(Arc::new(mac.mesh()), cfg.effective_sigma())?;
        let mut runner = Runner {
            cfg: cfg.clone(),
            params,
            realization,
            noise_sum: vec![0.0; model.len()],
            model,
            stream: NoiseStream::new(cfg.seed),
            levels: cfg.time_levels()?,
            nominal: 0,
            state,
            warm: None,
            records: Vec::new(),
        };
        let record = runner.record(None)?;
        runner.records.push(record);
        Ok(runner)
    }

    pub fn resume(cp: Checkpoint) -> Result<Self> {
        let cfg = cp.config;
        cfg.validate()?;
        let params = cfg.params()?;
        let mac = Arc::new(cp.macro_mesh);
        let space = Arc::new(FeSpace::new(Arc::new(Mesh::from_keys(mac.clone(), &cp.keys)?)));
        if cp.fields.len() != 8 {
            return Err(Error::Input("checkpoint must hold eight fields".into()));
        }
        let mut f = cp.fields.into_iter().map(|v| space.function(v));
        let mut next = || f.next().expect("eight fields");
        let state = StepState {
            n: cp.n,
            t: cp.t,
            tau: cp.tau,
            u: next()?,
            w: next()?,
            ut: next()?,
            wt: next()?,
            uh: next()?,
            wh: next()?,
            y: next()?,
            sigma: next()?,
            space: space.clone(),
            newton: cp.newton,
        };
        let warm = cp.warm.map(|v| space.function(v)).transpose()?;
        let model = NoiseModel::new(Arc::new(mac.mesh()), cfg.effective_sigma())?;
        if cp.noise_sum.len() != model.len() {
            return Err(Error::Input("checkpoint noise state does not match the noise mesh".into()));
        }
        Ok(Runner {
            params,
            realization: cp.realization,
            model,
            stream: NoiseStream::new(cfg.seed),
            noise_sum: cp.noise_sum,
            levels: cfg.time_levels()?,
            nominal: cp.nominal,
            state,
            warm,
            records: cp.records,
            cfg,
        })
    }

    pub fn state(&self) -> &StepState {
        &self.state
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.nominal >= self.levels.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let s = &self.state;
        Checkpoint {
            config: self.cfg.clone(),
            realization: self.realization,
            nominal: self.nominal,
            n: s.n,
            t: s.t,
            tau: s.tau,
            macro_mesh: MacroMesh::clone(s.mesh().macro_mesh()),
            keys: s.mesh().keys().to_vec(),
            fields: [&s.u, &s.w, &s.ut, &s.wt, &s.uh, &s.wh, &s.y, &s.sigma].iter().map(|f| f.values().to_vec()).collect(),
            newton: s.newton,
            noise_sum: self.noise_sum.clone(),
            warm: self.warm.as_ref().map(|w| w.values().to_vec()),
            records: self.records.clone(),
        }
    }

    fn record(&mut self, report: Option<IndicatorReport>) -> Result<StepRecord> {
        let s = &self.state;
        let space = &s.space;
        let last = self.is_done();
        let lambda = if s.n % self.cfg.eigen_stride == 0 || last {
            match principal_eigenvalue(space, &s.u, self.params.eps, &self.cfg.eigen, self.warm.as_ref()) {
                Ok(r) => {
                    let value = r.lambda;
                    self.warm = Some(r.eigenvector);
                    Some(value)
                }
                Err(e) => {
                    log::warn!("realization {}: eigenvalue at t = {} failed: {e}", self.realization, s.t);
                    None
                }
            }
        } else {
            None
        };
        Ok(StepRecord {
            step: s.n,
            t: s.t,
            dofs: space.dim(),
            mass: space.integral(s.u.values()),
            energy: discrete_energy(space, &s.u, self.params.eps),
            lambda,
            newton_iters: s.newton.iterations,
            report: report.unwrap_or_else(|| nan_report(s.n, s.t, s.tau, s.mesh().generation())),
        })
    }

    /// One level of the scheme on `space` driven by the Brownian increments
    /// `dbeta` over `tau`.
    fn advance(&self, prev: &StepState, space: &Arc<FeSpace>, tau: f64, dbeta: &[f64], sum: &[f64]) -> Result<StepState> {
        let noise_mesh = self.model.mesh();
        let increment = FeFunction::new(noise_mesh, self.model.field(dbeta))?;
        let total = FeFunction::new(noise_mesh, sum.to_vec())?;
        let forcing = Forcing { noise_mesh, increment: &increment, sum: &total };
        let params = &self.params;
        let zero = space.zeros();
        let (u, w, ut, wt, uh, wh, y, newton) = match self.cfg.mode {
            Mode::Stochastic => {
                let (u, w, newton) = step_full(prev, space, tau, &forcing, params, &self.cfg.newton)?;
                let (ut, wt) = step_linear(prev, space, tau, &forcing, params)?;
                let (uh, wh) = derive_hat(&u, &w, &ut, &wt)?;
                let y = transform_y(prev, space, tau, &wt, &forcing)?;
                (u, w, ut, wt, uh, wh, y, newton)
            }
            Mode::Deterministic => {
                let (u, w, newton) = step_full(prev, space, tau, &forcing, params, &self.cfg.newton)?;
                (u.clone(), w.clone(), zero.clone(), zero.clone(), u, w, zero.clone(), newton)
            }
            Mode::LinearOnly => {
                let (ut, wt) = step_linear(prev, space, tau, &forcing, params)?;
                let y = transform_y(prev, space, tau, &wt, &forcing)?;
                (ut.clone(), wt.clone(), ut, wt, zero.clone(), zero.clone(), y, NewtonInfo::default())
            }
        };
        let sigma = prolongate(&total, noise_mesh, space.mesh())?;
        Ok(StepState { n: prev.n + 1, t: prev.t + tau, tau, space: space.clone(), u, w, ut, wt, uh, wh, y, sigma, newton })
    }

    fn report(&self, prev: &StepState, cur: &StepState) -> Result<Option<IndicatorReport>> {
        if !self.cfg.indicators || self.cfg.mode == Mode::LinearOnly {
            return Ok(None);
        }
        let eta_noise = self.model.indicator(cur.tau);
        indicators(prev, cur, self.params.eps, eta_noise, &self.cfg.estimator).map(Some)
    }

    fn accept(&mut self, next: StepState, sum: Vec<f64>) -> Result<()> {
        let report = self.report(&self.state, &next)?;
        self.state = next;
        self.noise_sum = sum;
        let record = self.record(report)?;
        if self.cfg.mode == Mode::Deterministic {
            if let Some(prev) = self.records.last() {
                if record.energy > prev.energy + ENERGY_DRIFT {
                    log::warn!("energy rose by {:.3e} at t = {}", record.energy - prev.energy, record.t);
                }
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Adapts the mesh to the current level and advances one nominal step,
    /// retrying as two bridged half steps if Newton fails.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::Input("trajectory already complete".into()));
        }
        let k = self.nominal;
        let t_next = self.levels[k];
        let tau = t_next - self.state.t;
        if !(tau > 0.0) {
            return Err(Error::Input(format!("time level {t_next} does not follow {}", self.state.t)));
        }

        let marks = mark(&self.state.space, &self.state.u, &self.cfg.adapt())?;
        let carried: Vec<&FeFunction> = self.warm.iter().collect();
        let (space, moved) = adapt_space(&self.state.space, &marks, &self.cfg.adapt(), &carried)?;
        self.warm = moved.into_iter().next();

        let dbeta = if self.model.sigma() > 0.0 {
            self.stream.increments(self.realization, k as u64, tau, self.model.len())?
        } else {
            vec![0.0; self.model.len()]
        };
        let model = self.model.clone();
        let sum_after = |base: &[f64], db: &[f64]| -> Vec<f64> {
            base.iter().zip(model.field(db)).map(|(s, d)| s + d).collect()
        };

        let full_sum = sum_after(&self.noise_sum, &dbeta);
        match self.advance(&self.state, &space, tau, &dbeta, &full_sum) {
            Ok(next) => {
                self.nominal += 1;
                self.accept(next, full_sum)?;
            }
            Err(Error::Newton { iterations, residual }) => {
                log::warn!(
                    "realization {}: Newton failed at t = {t_next} ({iterations} iterations, residual {residual:.3e}); halving",
                    self.realization
                );
                let (first, second) = self.stream.bridge(self.realization, k as u64, tau, &dbeta);
                let half_sum = sum_after(&self.noise_sum, &first);
                let mid = self.advance(&self.state, &space, 0.5 * tau, &first, &half_sum)?;
                self.accept(mid, half_sum.clone())?;
                let end_sum = sum_after(&half_sum, &second);
                let mut end = self.advance(&self.state, &space, t_next - self.state.t, &second, &end_sum)?;
                end.t = t_next;
                self.nominal += 1;
                self.accept(end, end_sum)?;
                return Ok(());
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    pub fn finish(self, failure: Option<String>) -> TraceRecord {
        let samples: Vec<(f64, f64)> =
            self.records.iter().filter_map(|s| s.lambda.map(|l| (s.t, l))).collect();
        let energy_increases = match self.cfg.mode {
            Mode::Deterministic => {
                self.records.windows(2).filter(|w| w[1].energy > w[0].energy + ENERGY_DRIFT).count()
            }
            _ => 0,
        };
        TraceRecord {
            energy_increases,
            realization: self.realization,
            seed: self.cfg.seed,
            peak_time: crate::eigen::instability_peak_time(&samples).ok(),
            steps: self.records,
            failure,
            final_state: None,
        }
    }
}

pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let bytes = bincode::serde::encode_to_vec(cp, bincode::config::standard())
        .map_err(|e| Error::Encoding(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (cp, _) = bincode::serde::decode_from_slice(&bytes, bincode::config::standard())
        .map_err(|e| Error::Encoding(format!("{}: {e}", path.display())))?;
    Ok(cp)
}

/// File name of the checkpoint of realization `r` at level `n`.
pub fn checkpoint_name(r: u64, n: usize) -> String {
    format!("r{r:04}_n{n:07}.ckpt")
}

/// Where one realization writes its files.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    /// Per-step CSV.
    pub steps_csv: Option<PathBuf>,
    /// Directory for VTK snapshots at the configured times.
    pub vtk_dir: Option<PathBuf>,
    /// Directory for checkpoints at the configured interval and at the end.
    pub checkpoint_dir: Option<PathBuf>,
}

impl RunOutput {
    /// Standard layout under `dir`; `tag` distinguishes realizations.
    pub fn under(dir: &Path, tag: &str) -> Self {
        RunOutput {
            steps_csv: Some(dir.join(format!("steps{tag}.csv"))),
            vtk_dir: Some(dir.join("vtk")),
            checkpoint_dir: Some(dir.join("checkpoints")),
        }
    }
}

/// Drives a runner to the end, writing the configured outputs. Failures
/// after the initial level end the trajectory early and are reported in the
/// trace.
pub fn drive(mut runner: Runner, out: &RunOutput) -> Result<TraceRecord> {
    for dir in [&out.vtk_dir, &out.checkpoint_dir].into_iter().flatten() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let r = runner.realization;
    let mut vtk_pending: Vec<f64> = runner.cfg.vtk_times.iter().copied().filter(|&t| t >= runner.state.t).collect();
    vtk_pending.sort_by(f64::total_cmp);
    let write_vtk = |runner: &Runner, pending: &mut Vec<f64>| -> Result<()> {
        let Some(dir) = &out.vtk_dir else { return Ok(()) };
        let s = &runner.state;
        while let Some(&t) = pending.first() {
            if s.t + 1e-12 < t {
                break;
            }
            pending.remove(0);
            let path = dir.join(format!("r{r:04}_t{:.6}.vtk", s.t));
            export::write_state_vtk(&path, s)?;
        }
        Ok(())
    };
    write_vtk(&runner, &mut vtk_pending)?;
    let interval = runner.cfg.checkpoint_interval;
    let mut failure = None;
    while !runner.is_done() {
        if let Err(e) = runner.step() {
            log::error!("realization {r} aborted at t = {}: {e}", runner.state.t);
            failure = Some(format!("t = {}: {e}", runner.state.t));
            break;
        }
        write_vtk(&runner, &mut vtk_pending)?;
        if let Some(dir) = &out.checkpoint_dir {
            if interval > 0 && runner.state.n % interval == 0 {
                write_checkpoint(&dir.join(checkpoint_name(r, runner.state.n)), &runner.checkpoint())?;
            }
        }
    }
    let final_state = match &out.checkpoint_dir {
        Some(dir) => {
            let path = dir.join(format!("r{r:04}_final.ckpt"));
            write_checkpoint(&path, &runner.checkpoint())?;
            Some(path)
        }
        None => None,
    };
    let mut trace = runner.finish(failure);
    trace.final_state = final_state;
    if let Some(path) = &out.steps_csv {
        export::write_steps_csv(path, &trace)?;
    }
    Ok(trace)
}

/// Runs realization `r` of `cfg` from its initial level.
pub fn run_realization(cfg: &RunConfig, r: u64, out: &RunOutput) -> Result<TraceRecord> {
    drive(Runner::new(cfg, r)?, out)
}

/// Eigenvalue trace of stored states, sorted by time.
pub fn eigen_trace(paths: &[PathBuf], cfg: &crate::eigen::EigenConfig) -> Result<Vec<(f64, f64)>> {
    let mut states: Vec<Checkpoint> = paths.iter().map(|p| read_checkpoint(p)).collect::<Result<_>>()?;
    states.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut out = Vec::with_capacity(states.len());
    let mut warm: Option<(Arc<Mesh>, FeFunction)> = None;
    let mut macros: Vec<Arc<MacroMesh>> = Vec::new();
    for cp in states {
        let mac = match macros.iter().find(|m| ***m == cp.macro_mesh) {
            Some(m) => m.clone(),
            None => {
                let m = Arc::new(cp.macro_mesh);
                macros.push(m.clone());
                m
            }
        };
        let space = FeSpace::new(Arc::new(Mesh::from_keys(mac, &cp.keys)?));
        let u = space.function(cp.fields[0].clone())?;
        let guess = match &warm {
            Some((m, v)) if m.shares_roots_with(space.mesh()) => Some(transfer(v, m, &space)?),
            _ => None,
        };
        let r = principal_eigenvalue(&space, &u, cp.config.eps, cfg, guess.as_ref())?;
        out.push((cp.t, r.lambda));
        warm = Some((space.mesh().clone(), r.eigenvector));
    }
    Ok(out)
}

/// Smallest nodal value of `u` within distance `radius` of the origin
/// (`+inf` if no vertex is that close).
pub fn min_within(mesh: &Mesh, u: &FeFunction, radius: f64) -> f64 {
    mesh.vertices()
        .iter()
        .zip(u.values())
        .filter(|(p, _)| p[0].hypot(p[1]) <= radius)
        .fold(f64::INFINITY, |m, (_, &v)| m.min(v))
}
