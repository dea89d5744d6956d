//! Computable a posteriori indicators for the linear and the nonlinear part
//! of each time step, and their run-level aggregates.
//!
//! Level differences are integrated exactly on the common refinement of the
//! two level meshes; element weights `h_K` always refer to the element of the
//! current mesh that contains the integration cell. Gradient jumps are taken
//! across interior edges of the current mesh, where `[grad v . n_e]` is
//! constant, so `||[grad v . n_e]||^2_{L2(e)} = h_e * jump^2`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_mass, assemble_stiffness, element_integrals};
use crate::fem::quadrature::{degree2, degree6};
use crate::fem::SparseOperator;
use crate::mesh::Mesh;
use crate::scheme::{f, StepState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Interpolation constant multiplying the space indicators in the
    /// aggregates.
    pub c_star: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { c_star: 1.0 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_star > 0.0 && self.c_star.is_finite()) {
            return Err(Error::Config(format!("C* must be positive, got {}", self.c_star)));
        }
        Ok(())
    }
}

/// Indicators of one step. Index `i` of `eta_space`/`eta_time` holds
/// indicator `i + 1`; `mu` is `(mu_-1, mu_0, mu_1)` and `muh` its hat analogue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndicatorReport {
    pub step: usize,
    /// Generation of the mesh the step lives on. Generations are unique only
    /// within one process, so stored reports read back as 0.
    #[serde(skip)]
    pub generation: u64,
    pub t: f64,
    pub tau: f64,
    pub eta_space: [f64; 6],
    pub eta_time: [f64; 6],
    pub eta_noise: f64,
    pub mu: [f64; 3],
    pub muh: [f64; 3],
}

/// Constant normal-derivative jump of `v` across each edge (0 on the
/// boundary).
pub fn edge_jumps(mesh: &Mesh, v: &[f64]) -> Vec<f64> {
    let grad = |e: usize| {
        let g = mesh.grads(e);
        let t = mesh.elements()[e];
        let mut out = [0.0; 2];
        for l in 0..3 {
            out[0] += v[t[l]] * g[l][0];
            out[1] += v[t[l]] * g[l][1];
        }
        out
    };
    mesh.edges()
        .iter()
        .map(|edge| {
            if edge.is_boundary() {
                return 0.0;
            }
            let (g1, g2) = (grad(edge.elements[0]), grad(edge.elements[1]));
            (g1[0] - g2[0]) * edge.normal[0] + (g1[1] - g2[1]) * edge.normal[1]
        })
        .collect()
}

/// `sum_e h_e ||[grad v . n_e]||^2_{L2(e)}`
pub fn jump_sum(mesh: &Mesh, v: &[f64]) -> f64 {
    edge_jumps(mesh, v).iter().zip(mesh.edges()).map(|(j, e)| e.length * e.length * j * j).sum()
}

/// Two consecutive levels represented on their common refinement.
struct LevelPair {
    mesh: Arc<Mesh>,
    mass: SparseOperator,
    stiffness: SparseOperator,
    /// `h_K^2` of the current-mesh element containing each cell.
    h2: Vec<f64>,
    lift_prev: Option<crate::mesh::Prolongation>,
    lift_cur: Option<crate::mesh::Prolongation>,
}

impl LevelPair {
    fn new(prev: &StepState, cur: &StepState) -> Result<Self> {
        let (pm, cm) = (prev.mesh(), cur.mesh());
        if pm.generation() == cm.generation() || pm.keys() == cm.keys() {
            let h2 = (0..cm.element_count()).map(|e| cm.diameter(e).powi(2)).collect();
            return Ok(LevelPair {
                mesh: cm.clone(),
                mass: cur.space.mass().clone(),
                stiffness: cur.space.stiffness().clone(),
                h2,
                lift_prev: None,
                lift_cur: None,
            });
        }
        let c = Arc::new(Mesh::common_refinement(pm, cm)?);
        let anc = c.ancestors_in(cm)?;
        let h2 = anc.iter().map(|&k| cm.diameter(k).powi(2)).collect();
        let lift_prev = Some(c.prolongation_from(pm)?);
        let lift_cur = if c.keys() == cm.keys() { None } else { Some(c.prolongation_from(cm)?) };
        Ok(LevelPair { mass: assemble_mass(&c), stiffness: assemble_stiffness(&c), mesh: c, h2, lift_prev, lift_cur })
    }

    /// `cur - prev` on the pair mesh.
    fn diff(&self, prev: &[f64], cur: &[f64]) -> Vec<f64> {
        let lift = |p: &Option<crate::mesh::Prolongation>, v: &[f64]| match p {
            Some(p) => p.apply(v),
            None => v.to_vec(),
        };
        let a = lift(&self.lift_prev, prev);
        let b = lift(&self.lift_cur, cur);
        b.iter().zip(&a).map(|(x, y)| x - y).collect()
    }

    fn lift_cur(&self, v: &[f64]) -> Vec<f64> {
        match &self.lift_cur {
            Some(p) => p.apply(v),
            None => v.to_vec(),
        }
    }

    fn lift_prev(&self, v: &[f64]) -> Vec<f64> {
        match &self.lift_prev {
            Some(p) => p.apply(v),
            None => v.to_vec(),
        }
    }

    fn l2(&self, d: &[f64]) -> f64 {
        self.mass.bilinear(d, d).max(0.0).sqrt()
    }

    fn grad(&self, d: &[f64]) -> f64 {
        self.stiffness.bilinear(d, d).max(0.0).sqrt()
    }

    /// `(sum_K h_K^2 ||d||^2_K)^{1/2}`
    fn weighted_l2(&self, d: &[f64]) -> f64 {
        element_integrals(&self.mesh, [d], degree2(), |[v]| v * v)
            .iter()
            .zip(&self.h2)
            .map(|(i, h)| h * i)
            .sum::<f64>()
            .sqrt()
    }
}

fn weighted_l2_on(mesh: &Mesh, v: &[f64]) -> f64 {
    element_integrals(mesh, [v], degree2(), |[x]| x * x)
        .iter()
        .enumerate()
        .map(|(e, i)| mesh.diameter(e).powi(2) * i)
        .sum::<f64>()
        .sqrt()
}

fn check_pair(prev: &StepState, cur: &StepState) -> Result<()> {
    if cur.n != prev.n + 1 || !(cur.tau > 0.0) {
        return Err(Error::Input(format!("levels {} and {} are not consecutive", prev.n, cur.n)));
    }
    if !prev.mesh().shares_roots_with(cur.mesh()) {
        return Err(Error::Structure("level meshes have different macro meshes".into()));
    }
    Ok(())
}

/// Indicators 1-3 of the linear scheme and `(mu_-1, mu_0, mu_1)`.
pub fn linear_indicators(
    prev: &StepState,
    cur: &StepState,
    eps: f64,
    cfg: &EstimatorConfig,
) -> Result<([f64; 3], [f64; 3], [f64; 3])> {
    check_pair(prev, cur)?;
    let pair = LevelPair::new(prev, cur)?;
    Ok(linear_from_pair(&pair, prev, cur, eps, cfg))
}

fn linear_from_pair(
    pair: &LevelPair,
    prev: &StepState,
    cur: &StepState,
    eps: f64,
    cfg: &EstimatorConfig,
) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let mesh = cur.mesh();
    let tau = cur.tau;
    let dy: Vec<f64> = pair.diff(prev.y.values(), cur.y.values()).iter().map(|v| v / tau).collect();
    let s1 = pair.weighted_l2(&dy) + jump_sum(mesh, cur.wt.values()).sqrt();
    let s2 = weighted_l2_on(mesh, cur.wt.values());
    let s3 = (eps * jump_sum(mesh, cur.ut.values())).sqrt();
    let dwt = pair.diff(prev.wt.values(), cur.wt.values());
    let dut = pair.diff(prev.ut.values(), cur.ut.values());
    let t1 = pair.grad(&dwt);
    let t2 = pair.l2(&dwt);
    let t3 = eps * pair.grad(&dut);
    let mu = [cfg.c_star * s1 + t1, t2, t3 + s2 + cfg.c_star * s3];
    ([s1, s2, s3], [t1, t2, t3], mu)
}

/// Indicators 4-6 of the nonlinear part and `(muh_-1, muh_0, muh_1)`.
pub fn hat_indicators(
    prev: &StepState,
    cur: &StepState,
    eps: f64,
    cfg: &EstimatorConfig,
) -> Result<([f64; 3], [f64; 3], [f64; 3])> {
    check_pair(prev, cur)?;
    let pair = LevelPair::new(prev, cur)?;
    Ok(hat_from_pair(&pair, prev, cur, eps, cfg))
}

fn hat_from_pair(
    pair: &LevelPair,
    prev: &StepState,
    cur: &StepState,
    eps: f64,
    cfg: &EstimatorConfig,
) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let mesh = cur.mesh();
    let tau = cur.tau;
    let duh: Vec<f64> = pair.diff(prev.uh.values(), cur.uh.values()).iter().map(|v| v / tau).collect();
    let s4 = pair.weighted_l2(&duh) + jump_sum(mesh, cur.wh.values()).sqrt();
    let s5 = element_integrals(mesh, [cur.wh.values(), cur.u.values()], degree6(), |[w, u]| {
        let r = w + f(u) / eps;
        r * r
    })
    .iter()
    .enumerate()
    .map(|(e, i)| mesh.diameter(e).powi(2) * i)
    .sum::<f64>()
    .sqrt();
    let s6 = jump_sum(mesh, cur.uh.values()).sqrt();

    let dwh = pair.diff(prev.wh.values(), cur.wh.values());
    let t4 = pair.grad(&dwh);
    let up = pair.lift_prev(prev.u.values());
    let uc = pair.lift_cur(cur.u.values());
    let df_sq: f64 = element_integrals(&pair.mesh, [&up, &uc], degree6(), |[a, b]| (f(b) - f(a)).powi(2)).iter().sum();
    let t5 = pair.l2(&dwh) + df_sq.max(0.0).sqrt() / eps;
    let t6 = eps * pair.grad(&pair.diff(prev.uh.values(), cur.uh.values()));
    let muh = [cfg.c_star * s4 + t4, t5, t6 + s5 + cfg.c_star * s6];
    ([s4, s5, s6], [t4, t5, t6], muh)
}

/// Full report of step `cur`; `eta_noise` is the noise indicator of the step.
pub fn indicators(
    prev: &StepState,
    cur: &StepState,
    eps: f64,
    eta_noise: f64,
    cfg: &EstimatorConfig,
) -> Result<IndicatorReport> {
    check_pair(prev, cur)?;
    let pair = LevelPair::new(prev, cur)?;
    let (sl, tl, mu) = linear_from_pair(&pair, prev, cur, eps, cfg);
    let (sh, th, muh) = hat_from_pair(&pair, prev, cur, eps, cfg);
    Ok(IndicatorReport {
        step: cur.n,
        generation: cur.mesh().generation(),
        t: cur.t,
        tau: cur.tau,
        eta_space: [sl[0], sl[1], sl[2], sh[0], sh[1], sh[2]],
        eta_time: [tl[0], tl[1], tl[2], th[0], th[1], th[2]],
        eta_noise,
        mu,
        muh,
    })
}

/// Run-level sums of the indicators. Unknown constants are not included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `sum tau (T mu_-1^2 + (T/eps) mu_0^2 + mu_1^2 / eps) + eps sum eta_noise`
    pub s_lin: f64,
    /// `sum tau (muh_-1^2 + muh_0^2 / eps^2 + 2 muh_1^2 / eps^4)`
    pub s_hat: f64,
    /// `sum tau Lambda(t_n)` when eigenvalues are supplied.
    pub eigen_integral: Option<f64>,
    pub c_star: f64,
}

/// Aggregates a trajectory's reports. `noise[i]` is the noise indicator of
/// `reports[i]`; `lambda`, when present, holds the eigenvalue at each report.
pub fn aggregate(
    reports: &[IndicatorReport],
    noise: &[f64],
    lambda: Option<&[f64]>,
    eps: f64,
    t_final: f64,
    cfg: &EstimatorConfig,
) -> Result<RunSummary> {
    if noise.len() != reports.len() || lambda.is_some_and(|l| l.len() != reports.len()) {
        return Err(Error::Input("indicator sequences have different lengths".into()));
    }
    let mut s_lin = 0.0;
    let mut s_hat = 0.0;
    for r in reports {
        let [m1, m0, p1] = r.mu;
        s_lin += r.tau * (t_final * m1 * m1 + t_final / eps * m0 * m0 + p1 * p1 / eps);
        let [h1, h0, q1] = r.muh;
        s_hat += r.tau * (h1 * h1 + h0 * h0 / eps.powi(2) + 2.0 * q1 * q1 / eps.powi(4));
    }
    s_lin += eps * noise.iter().sum::<f64>();
    let eigen_integral = lambda.map(|l| reports.iter().zip(l).map(|(r, v)| r.tau * v).sum());
    Ok(RunSummary { s_lin, s_hat, eigen_integral, c_star: cfg.c_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{FeFunction, FeSpace};
    use crate::mesh::{MacroMesh, Rect};
    use crate::scheme::{advance, Forcing, ModelParams, NewtonConfig};

    #[test]
    fn diagonal_hat_jump_by_hand() {
        let m = MacroMesh::square(Rect::unit_square(), 1).unwrap().mesh();
        let c = m.vertices().iter().position(|p| *p == [0.0, 0.0]).unwrap();
        let mut hat = vec![0.0; 4];
        hat[c] = 1.0;
        // Lower triangle (0,0),(1,0),(1,1): hat = 1 - x, gradient (-1, 0).
        // Upper triangle (0,0),(1,1),(0,1): hat = 1 - y, gradient (0, -1).
        // Diagonal normal (1,-1)/sqrt2: jump = (-1 - 1)/sqrt2 in magnitude,
        // h_e = sqrt2, so h_e * h_e * jump^2 = 2 * 2 = 4.
        assert!((jump_sum(&m, &hat) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nested_representation_keeps_jumps() {
        let mac = MacroMesh::square(Rect::symmetric_square(), 2).unwrap();
        let coarse = mac.uniform(1);
        let fine = coarse.refine(&(0..coarse.element_count()).collect::<Vec<_>>()).unwrap();
        let v: Vec<f64> = coarse.vertices().iter().map(|p| (2.0 * p[0]).sin() + p[1] * p[1]).collect();
        let vf = fine.prolongation_from(&coarse).unwrap().apply(&v);
        let jc = edge_jumps(&coarse, &v);
        let jf = edge_jumps(&fine, &vf);
        let key = |m: &Mesh, e: &crate::mesh::Edge| {
            let (a, b) = (m.vertices()[e.vertices[0]], m.vertices()[e.vertices[1]]);
            ((a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5)
        };
        for (fe, jfv) in fine.edges().iter().zip(&jf) {
            let (mx, my) = key(&fine, fe);
            // fine edge inside an old edge: same direction and midpoint on the old segment
            let parent = coarse.edges().iter().zip(&jc).find(|(ce, _)| {
                let (a, b) = (coarse.vertices()[ce.vertices[0]], coarse.vertices()[ce.vertices[1]]);
                let cross = (b[0] - a[0]) * (my - a[1]) - (b[1] - a[1]) * (mx - a[0]);
                let dot = (mx - a[0]) * (b[0] - a[0]) + (my - a[1]) * (b[1] - a[1]);
                cross.abs() < 1e-14 && dot > 0.0 && dot < ce.length * ce.length
            });
            match parent {
                Some((_, jcv)) => assert!((jfv.abs() - jcv.abs()).abs() < 1e-12),
                None => assert!(jfv.abs() < 1e-12),
            }
        }
    }

    fn two_levels(scale: f64) -> (StepState, StepState) {
        let mac = MacroMesh::square(Rect::symmetric_square(), 2).unwrap();
        let noise = Arc::new(mac.mesh());
        let space = Arc::new(FeSpace::new(Arc::new(mac.uniform(2))));
        let params = ModelParams::new(0.3).unwrap();
        let u0 = FeFunction::interpolate(space.mesh(), |p| scale * (p[0] - 0.3 * p[1] * p[1]));
        let s0 = StepState::initial(space.clone(), u0, &params).unwrap();
        let dw = FeFunction::interpolate(&noise, |p| scale * 1e-2 * p[0] * p[1]);
        let sum = dw.clone();
        let forcing = Forcing { noise_mesh: &noise, increment: &dw, sum: &sum };
        let s1 = advance(&s0, space, 1e-2, &forcing, &params, &NewtonConfig::default()).unwrap();
        (s0, s1)
    }

    #[test]
    fn zero_fields_give_zero_indicators() {
        let (a, b) = two_levels(0.0);
        assert_eq!(b.u.max_abs(), 0.0);
        let r = indicators(&a, &b, 0.3, 0.0, &EstimatorConfig::default()).unwrap();
        assert!(r.eta_space.iter().chain(&r.eta_time).chain(&r.mu).chain(&r.muh).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_indicators_are_one_homogeneous() {
        let (a, b) = two_levels(1.0);
        let (s, t, mu) = linear_indicators(&a, &b, 0.3, &EstimatorConfig::default()).unwrap();
        let scale = |s: &StepState| {
            let mut c = s.clone();
            c.ut = c.ut.scaled(2.5);
            c.wt = c.wt.scaled(2.5);
            c.y = c.y.scaled(2.5);
            c
        };
        let (s2, t2, mu2) = linear_indicators(&scale(&a), &scale(&b), 0.3, &EstimatorConfig::default()).unwrap();
        for i in 0..3 {
            assert!((s2[i] - 2.5 * s[i]).abs() <= 1e-12 * s[i].max(1.0));
            assert!((t2[i] - 2.5 * t[i]).abs() <= 1e-12 * t[i].max(1.0));
            assert!((mu2[i] - 2.5 * mu[i]).abs() <= 1e-12 * mu[i].max(1.0));
        }
        assert!(s.iter().chain(&t).all(|v| *v > 0.0));
    }

    #[test]
    fn equal_levels_give_zero_hat_time_indicators() {
        let (a, _) = two_levels(1.0);
        let mut b = a.clone();
        b.n = 1;
        b.tau = 0.1;
        b.t = 0.1;
        let (_, t, _) = hat_indicators(&a, &b, 0.3, &EstimatorConfig::default()).unwrap();
        assert_eq!(t, [0.0; 3]);
    }

    #[test]
    fn prolongated_level_has_no_time_indicators() {
        let (_, a) = two_levels(1.0);
        let m = a.mesh();
        let fine = Arc::new(m.refine(&[0, 3, 7]).unwrap());
        let mut b = a.transfer_to(Arc::new(FeSpace::new(fine))).unwrap();
        b.n += 1;
        b.tau = 0.1;
        let r = indicators(&a, &b, 0.3, 0.0, &EstimatorConfig::default()).unwrap();
        assert!(r.eta_time.iter().all(|v| v.abs() < 1e-12), "{:?}", r.eta_time);
        assert!(r.eta_space[0] > 0.0);
    }

    #[test]
    fn unit_state_has_no_potential_residual() {
        let (a, _) = two_levels(1.0);
        let mut b = a.clone();
        b.n = 1;
        b.tau = 0.1;
        b.u = FeFunction::constant(a.mesh(), 1.0);
        b.wh = a.space.zeros();
        let (s, _, _) = hat_indicators(&a, &b, 0.3, &EstimatorConfig::default()).unwrap();
        assert!(s[1].abs() < 1e-14);
    }

    #[test]
    fn aggregate_formulas() {
        let cfg = EstimatorConfig::default();
        let zero = IndicatorReport { tau: 0.1, ..Default::default() };
        let s = aggregate(&[zero; 3], &[0.0; 3], None, 0.1, 1.0, &cfg).unwrap();
        assert_eq!((s.s_lin, s.s_hat), (0.0, 0.0));

        let mut r = zero;
        r.mu[1] = 2.0;
        let s = aggregate(&[zero, r], &[0.0, 0.0], None, 0.1, 3.0, &cfg).unwrap();
        assert!((s.s_lin - 0.1 * 3.0 / 0.1 * 4.0).abs() < 1e-12);

        let mut q = zero;
        q.muh[2] = 1.0;
        let a = aggregate(&[q], &[0.0], None, 0.1, 1.0, &cfg).unwrap().s_hat;
        let b = aggregate(&[q], &[0.0], None, 0.2, 1.0, &cfg).unwrap().s_hat;
        assert!((a / b - 16.0).abs() < 1e-9);
        assert!(aggregate(&[q], &[], None, 0.1, 1.0, &cfg).is_err());
        let l = aggregate(&[q, q], &[0.0, 0.0], Some(&[1.0, 3.0]), 0.1, 1.0, &cfg).unwrap();
        assert!((l.eigen_integral.unwrap() - 0.4).abs() < 1e-15);
    }
}
