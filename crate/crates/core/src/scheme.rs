//! Implicit Euler time stepping of the mixed Cahn-Hilliard system with
//! additive noise, together with the linear, nonlinear ("hat") and
//! transformed companions of each step.
//!
//! Given `u^{n-1}` on the previous mesh, one step solves on the current mesh
//!
//! ```text
//! (u^n - u^{n-1}, phi) / tau + (grad w^n, grad phi)            = (dW_n, phi) / tau
//! eps (grad u^n, grad psi) + (f(u^n), psi) / eps - (w^n, psi) = 0
//! ```
//!
//! with Newton's method. The linear part `(ut, wt)` solves the same system
//! with `f` removed and zero initial data, the hat part is the difference
//! `(u - ut, w - wt)`, and the transformed field `y` solves the linear system
//! without noise, so that `y = ut - Sigma` whenever the solver space contains
//! the noise space.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_weighted_mass, nonlinear_load};
use crate::fem::transfer::mixed_mass_action;
use crate::fem::{prolongate, BlockOperator, FeFunction, FeSpace};
use crate::mesh::Mesh;

/// `f(u) = u^3 - u`
pub fn f(u: f64) -> f64 {
    u * u * u - u
}

/// `f'(u) = 3u^2 - 1`
pub fn df(u: f64) -> f64 {
    3.0 * u * u - 1.0
}

/// Double-well potential `F(u) = (u^2 - 1)^2 / 4`.
pub fn potential(u: f64) -> f64 {
    let s = u * u - 1.0;
    0.25 * s * s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Interfacial width.
    pub eps: f64,
}

impl ModelParams {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Input(format!("interfacial width must lie in (0, 1), got {eps}")));
        }
        Ok(ModelParams { eps })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Tolerance relative to the initial residual.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Step-length reduction factor of the backtracking line search.
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { rel_tol: 1e-10, abs_tol: 1e-12, max_iter: 50, backtrack: 0.5, max_backtracks: 8 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Config("newton tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("newton needs at least one iteration".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("backtracking factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonInfo {
    pub iterations: usize,
    /// Final residual `||M^{-1} R||_inf`.
    pub residual: f64,
}

/// All fields of one time level, bound to the level's mesh.
#[derive(Clone, Debug)]
pub struct StepState {
    pub n: usize,
    pub t: f64,
    /// Length of the step that produced this level (0 for the initial level).
    pub tau: f64,
    pub space: Arc<FeSpace>,
    pub u: FeFunction,
    pub w: FeFunction,
    pub ut: FeFunction,
    pub wt: FeFunction,
    pub uh: FeFunction,
    pub wh: FeFunction,
    pub y: FeFunction,
    /// Accumulated noise `Sigma^n`, represented on this level's mesh.
    pub sigma: FeFunction,
    pub newton: NewtonInfo,
}

impl StepState {
    /// Level 0 from the projected initial value: `ut = y = Sigma = 0`, `uh = u`
    /// and `w` the discrete chemical potential of `u`.
    pub fn initial(space: Arc<FeSpace>, u0: FeFunction, params: &ModelParams) -> Result<Self> {
        u0.check_on(space.mesh())?;
        let w0 = chemical_potential(&space, u0.values(), params)?;
        let zero = space.zeros();
        Ok(StepState {
            n: 0,
            t: 0.0,
            tau: 0.0,
            u: u0.clone(),
            w: w0.clone(),
            ut: zero.clone(),
            wt: zero.clone(),
            uh: u0,
            wh: w0,
            y: zero.clone(),
            sigma: zero,
            space,
            newton: NewtonInfo::default(),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    /// Re-expresses every field on another mesh (used after adaptation).
    pub fn transfer_to(&self, space: Arc<FeSpace>) -> Result<StepState> {
        let from = self.mesh().clone();
        let move_fn = |f: &FeFunction| crate::fem::transfer::transfer(f, &from, &space);
        Ok(StepState {
            n: self.n,
            t: self.t,
            tau: self.tau,
            u: move_fn(&self.u)?,
            w: move_fn(&self.w)?,
            ut: move_fn(&self.ut)?,
            wt: move_fn(&self.wt)?,
            uh: move_fn(&self.uh)?,
            wh: move_fn(&self.wh)?,
            y: move_fn(&self.y)?,
            sigma: move_fn(&self.sigma)?,
            space,
            newton: self.newton,
        })
    }
}

/// `w = M^{-1} (eps K u + F(u) / eps)`
pub fn chemical_potential(space: &FeSpace, u: &[f64], params: &ModelParams) -> Result<FeFunction> {
    let eps = params.eps;
    let ku = space.stiffness().apply(u);
    let fu = nonlinear_load(space.mesh(), u, f);
    let rhs: Vec<f64> = ku.iter().zip(&fu).map(|(k, g)| eps * k + g / eps).collect();
    space.function(space.solve_mass(&rhs)?)
}

/// Noise data of one step: the increment `dW_n` and the accumulated sum
/// `Sigma^n`, both on the noise mesh.
#[derive(Clone, Copy, Debug)]
pub struct Forcing<'a> {
    pub noise_mesh: &'a Mesh,
    pub increment: &'a FeFunction,
    pub sum: &'a FeFunction,
}

impl Forcing<'_> {
    fn on(&self, space: &FeSpace, f: &FeFunction) -> Result<FeFunction> {
        if !space.mesh().refines(self.noise_mesh) {
            return Err(Error::Config("solver mesh does not contain the noise mesh space".into()));
        }
        prolongate(f, self.noise_mesh, space.mesh())
    }
}

fn dual_norm(space: &FeSpace, r: &[f64]) -> Result<f64> {
    let n = space.dim();
    let a = space.solve_mass(&r[..n])?;
    let b = space.solve_mass(&r[n..])?;
    Ok(a.iter().chain(&b).fold(0.0f64, |m, v| m.max(v.abs())))
}

fn full_residual(space: &FeSpace, rhs1: &[f64], tau: f64, eps: f64, u: &[f64], w: &[f64]) -> Vec<f64> {
    let (m, k) = (space.mass(), space.stiffness());
    let mu = m.apply(u);
    let kw = k.apply(w);
    let ku = k.apply(u);
    let fu = nonlinear_load(space.mesh(), u, f);
    let mw = m.apply(w);
    let mut r = Vec::with_capacity(2 * u.len());
    r.extend((0..u.len()).map(|i| (mu[i] - rhs1[i]) / tau + kw[i]));
    r.extend((0..u.len()).map(|i| eps * ku[i] + fu[i] / eps - mw[i]));
    r
}

/// Newton solve of the nonlinear system given `rhs1 = (u^{n-1}, phi) + (dW, phi)`.
pub fn solve_full(
    space: &FeSpace,
    rhs1: &[f64],
    tau: f64,
    params: &ModelParams,
    cfg: &NewtonConfig,
    guess: (&[f64], &[f64]),
) -> Result<(FeFunction, FeFunction, NewtonInfo)> {
    if !(tau > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {tau}")));
    }
    let eps = params.eps;
    let n = space.dim();
    let mut u = guess.0.to_vec();
    let mut w = guess.1.to_vec();
    let mut r = full_residual(space, rhs1, tau, eps, &u, &w);
    let mut res = dual_norm(space, &r)?;
    let tol = cfg.abs_tol.max(cfg.rel_tol * res);
    let m_tau = space.mass().scaled(1.0 / tau);
    let eps_k = space.stiffness().scaled(eps);
    let neg_m = space.mass().scaled(-1.0);
    let mut it = 0;
    while res > tol {
        if it == cfg.max_iter {
            return Err(Error::Newton { iterations: it, residual: res });
        }
        it += 1;
        let wf = assemble_weighted_mass(space.mesh(), &u, df);
        let a21 = eps_k.combine(1.0, &wf, 1.0 / eps)?;
        let jac = BlockOperator::new(&m_tau, space.stiffness(), &a21, &neg_m);
        let lu = space.block_factor(&jac)?;
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = lu.solve(&neg_r)?;
        let step_size = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = u.iter().chain(&w).fold(1.0f64, |m, v| m.max(v.abs()));

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let ut: Vec<f64> = (0..n).map(|i| u[i] + lambda * delta[i]).collect();
            let wt: Vec<f64> = (0..n).map(|i| w[i] + lambda * delta[n + i]).collect();
            let rt = full_residual(space, rhs1, tau, eps, &ut, &wt);
            let rest = dual_norm(space, &rt)?;
            if rest < res || rest <= tol {
                accepted = Some((ut, wt, rt, rest));
                break;
            }
            lambda *= cfg.backtrack;
        }
        match accepted {
            Some((ut, wt, rt, rest)) => {
                u = ut;
                w = wt;
                r = rt;
                res = rest;
            }
            None => {
                // no decrease: converged if the update is at rounding level
                if step_size <= 1e-13 * scale {
                    break;
                }
                return Err(Error::Newton { iterations: it, residual: res });
            }
        }
        if step_size <= 1e-14 * scale {
            break;
        }
    }
    Ok((space.function(u)?, space.function(w)?, NewtonInfo { iterations: it, residual: res }))
}

/// Right-hand side loads `(v^{n-1}, phi)` of the previous level on the
/// current mesh, integrated exactly on the common refinement.
fn previous_load(prev: &StepState, space: &FeSpace, v: &FeFunction) -> Result<Vec<f64>> {
    mixed_mass_action(v, prev.mesh(), space.mesh())
}

/// The nonlinear step: returns `(u^n, w^n)` and Newton diagnostics.
pub fn step_full(
    prev: &StepState,
    space: &FeSpace,
    tau: f64,
    forcing: &Forcing<'_>,
    params: &ModelParams,
    cfg: &NewtonConfig,
) -> Result<(FeFunction, FeFunction, NewtonInfo)> {
    let b_prev = previous_load(prev, space, &prev.u)?;
    let dw = forcing.on(space, forcing.increment)?;
    let b_dw = space.mass().apply(dw.values());
    let rhs1: Vec<f64> = b_prev.iter().zip(&b_dw).map(|(a, b)| a + b).collect();
    let from = prev.mesh().clone();
    let guess_u = crate::fem::transfer::transfer(&prev.u, &from, space)?;
    let guess_w = crate::fem::transfer::transfer(&prev.w, &from, space)?;
    solve_full(space, &rhs1, tau, params, cfg, (guess_u.values(), guess_w.values()))
}

fn tau_eps_key(tau: f64, eps: f64) -> u128 {
    ((tau.to_bits() as u128) << 64) | eps.to_bits() as u128
}

/// Solves `[M/tau, K; eps K, -M] (x1, x2) = (rhs1 / tau, rhs2)`.
pub fn solve_linear_block(space: &FeSpace, tau: f64, eps: f64, rhs1: &[f64], rhs2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {tau}")));
    }
    let m_tau = space.mass().scaled(1.0 / tau);
    let eps_k = space.stiffness().scaled(eps);
    let neg_m = space.mass().scaled(-1.0);
    let op = BlockOperator::new(&m_tau, space.stiffness(), &eps_k, &neg_m);
    let lu = space.keyed_factor(tau_eps_key(tau, eps), || space.block_factor(&op))?;
    let rhs: Vec<f64> = rhs1.iter().map(|b| b / tau).chain(rhs2.iter().copied()).collect();
    let mut x = op.solve_refined(&lu, &rhs, 1)?;
    let x2 = x.split_off(space.dim());
    Ok((x, x2))
}

/// The linear step: returns `(ut^n, wt^n)`.
pub fn step_linear(
    prev: &StepState,
    space: &FeSpace,
    tau: f64,
    forcing: &Forcing<'_>,
    params: &ModelParams,
) -> Result<(FeFunction, FeFunction)> {
    let b_prev = previous_load(prev, space, &prev.ut)?;
    let dw = forcing.on(space, forcing.increment)?;
    let b_dw = space.mass().apply(dw.values());
    let rhs1: Vec<f64> = b_prev.iter().zip(&b_dw).map(|(a, b)| a + b).collect();
    let (ut, wt) = solve_linear_block(space, tau, params.eps, &rhs1, &vec![0.0; space.dim()])?;
    Ok((space.function(ut)?, space.function(wt)?))
}

/// `(uh, wh) = (u - ut, w - wt)`.
pub fn derive_hat(
    u: &FeFunction,
    w: &FeFunction,
    ut: &FeFunction,
    wt: &FeFunction,
) -> Result<(FeFunction, FeFunction)> {
    Ok((u.sub(ut)?, w.sub(wt)?))
}

/// Transformed field: `M y^n = (y^{n-1}, phi) - tau K wt^n`.
pub fn transform_y(
    prev: &StepState,
    space: &FeSpace,
    tau: f64,
    wt: &FeFunction,
    forcing: &Forcing<'_>,
) -> Result<FeFunction> {
    wt.check_on(space.mesh())?;
    if !space.mesh().refines(forcing.noise_mesh) {
        return Err(Error::Config("solver mesh does not contain the noise mesh space".into()));
    }
    let b_prev = previous_load(prev, space, &prev.y)?;
    let kw = space.stiffness().apply(wt.values());
    let rhs: Vec<f64> = b_prev.iter().zip(&kw).map(|(b, k)| b - tau * k).collect();
    let mut y = space.solve_mass(&rhs)?;
    let my = space.mass().apply(&y);
    let r: Vec<f64> = rhs.iter().zip(&my).map(|(a, b)| a - b).collect();
    for (yi, d) in y.iter_mut().zip(space.solve_mass(&r)?) {
        *yi += d;
    }
    space.function(y)
}

/// Advances every field by one step onto the mesh of `space`.
pub fn advance(
    prev: &StepState,
    space: Arc<FeSpace>,
    tau: f64,
    forcing: &Forcing<'_>,
    params: &ModelParams,
    cfg: &NewtonConfig,
) -> Result<StepState> {
    let (u, w, newton) = step_full(prev, &space, tau, forcing, params, cfg)?;
    let (ut, wt) = step_linear(prev, &space, tau, forcing, params)?;
    let (uh, wh) = derive_hat(&u, &w, &ut, &wt)?;
    let y = transform_y(prev, &space, tau, &wt, forcing)?;
    let sigma = forcing.on(&space, forcing.sum)?;
    Ok(StepState { n: prev.n + 1, t: prev.t + tau, tau, space, u, w, ut, wt, uh, wh, y, sigma, newton })
}

/// How to evaluate the level sequence between time levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeInterpolation {
    /// Affine blend of the bracketing levels.
    Linear,
    /// Value of the right endpoint on `(t_{n-1}, t_n]`.
    PiecewiseConstant,
}

/// Fields of the time interpolant at one instant, on a mesh that refines
/// both bracketing level meshes.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub mesh: Arc<Mesh>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub ut: Vec<f64>,
    pub wt: Vec<f64>,
    pub uh: Vec<f64>,
    pub wh: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

fn fields(s: &StepState) -> [&FeFunction; 8] {
    [&s.u, &s.w, &s.ut, &s.wt, &s.uh, &s.wh, &s.y, &s.sigma]
}

fn snapshot_from(t: f64, mesh: Arc<Mesh>, v: Vec<Vec<f64>>) -> Snapshot {
    let mut it = v.into_iter();
    let mut next = || it.next().unwrap();
    Snapshot { t, mesh, u: next(), w: next(), ut: next(), wt: next(), uh: next(), wh: next(), y: next(), sigma: next() }
}

/// Evaluates the interpolant of `levels` (ordered by time) at `t`.
pub fn interpolant(levels: &[StepState], t: f64, kind: TimeInterpolation) -> Result<Snapshot> {
    let (first, last) = match (levels.first(), levels.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Input("no time levels".into())),
    };
    if !(t >= first.t && t <= last.t) {
        return Err(Error::Input(format!("time {t} outside [{}, {}]", first.t, last.t)));
    }
    if let Some(s) = levels.iter().find(|s| s.t == t) {
        let v = fields(s).iter().map(|f| f.values().to_vec()).collect();
        return Ok(snapshot_from(t, s.mesh().clone(), v));
    }
    let k = levels.partition_point(|s| s.t < t);
    let (a, b) = (&levels[k - 1], &levels[k]);
    let theta = match kind {
        TimeInterpolation::Linear => (t - a.t) / (b.t - a.t),
        TimeInterpolation::PiecewiseConstant => 1.0,
    };
    let c = Arc::new(Mesh::common_refinement(a.mesh(), b.mesh())?);
    let mut out = Vec::with_capacity(8);
    for (fa, fb) in fields(a).iter().zip(fields(b)) {
        let pa = prolongate(fa, a.mesh(), &c)?;
        let pb = prolongate(fb, b.mesh(), &c)?;
        out.push(pa.values().iter().zip(pb.values()).map(|(x, y)| (1.0 - theta) * x + theta * y).collect());
    }
    Ok(snapshot_from(t, c, out))
}
