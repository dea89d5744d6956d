use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::fem::FeSpace;
use crate::mesh::{MacroMesh, Prolongation};
use crate::noise::{NoiseModel, NoiseStream};
use crate::scheme::solve_linear_block;

/// Discretization parameter varied along a ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Time,
    Space,
}

/// Uniform mesh width `h` (leg of the right triangles) and number of steps
/// over `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub h: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub axis: Axis,
    pub rungs: Vec<Rung>,
    pub reference: Rung,
}

impl Ladder {
    /// `tau = T / steps` for each entry of `steps` at the fixed width `h`,
    /// against `ref_steps` steps on the same mesh.
    pub fn time(h: f64, steps: &[usize], ref_steps: usize) -> Self {
        Ladder {
            axis: Axis::Time,
            rungs: steps.iter().map(|&steps| Rung { h, steps }).collect(),
            reference: Rung { h, steps: ref_steps },
        }
    }

    /// Each width in `hs` with `steps` steps, against width `ref_h`.
    pub fn space(hs: &[f64], ref_h: f64, steps: usize) -> Self {
        Ladder {
            axis: Axis::Space,
            rungs: hs.iter().map(|&h| Rung { h, steps }).collect(),
            reference: Rung { h: ref_h, steps },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub h: f64,
    pub tau: f64,
    pub dofs: usize,
    /// Path average of the squared discrete `H^-1` error at `T`.
    pub error: f64,
    pub se: f64,
    /// Observed order against the previous row.
    pub local_order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub axis: Axis,
    pub paths: usize,
    pub reference: Rung,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log error` against `log h` or `log tau`.
    pub order: f64,
}

impl std::fmt::Display for RateTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let axis = match self.axis {
            Axis::Time => "tau",
            Axis::Space => "h",
        };
        writeln!(f, "{:>10} {:>12} {:>8} {:>14} {:>12} {:>7}", "h", "tau", "dofs", "error", "se", "order")?;
        for r in &self.rows {
            let local = r.local_order.map(|o| format!("{o:7.3}")).unwrap_or_else(|| format!("{:>7}", "-"));
            writeln!(f, "{:>10.6} {:>12.4e} {:>8} {:>14.6e} {:>12.4e} {local}", r.h, r.tau, r.dofs, r.error, r.se)?;
        }
        write!(
            f,
            "fitted order in {axis}: {:.4} ({} paths, reference h = {}, {} steps)",
            self.order, self.paths, self.reference.h, self.reference.steps
        )
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input("a rate fit needs at least two matching points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Input("a rate fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("a rate fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Linear scheme on one uniform mesh, stepping with block-summed increments.
struct Track {
    space: FeSpace,
    from_noise: Prolongation,
    to_reference: Option<Prolongation>,
    block: usize,
    tau: f64,
    u: Vec<f64>,
    pending: Vec<f64>,
}

impl Track {
    fn new(mac: &Arc<MacroMesh>, rung: Rung, reference: Option<&FeSpace>, cfg: &RunConfig, ref_steps: usize) -> Result<Self> {
        let levels = bisections(mac, rung.h)?;
        let noise_mesh = mac.mesh();
        let mesh = mac.uniform(levels);
        let from_noise = mesh.prolongation_from(&noise_mesh)?;
        let to_reference = reference.map(|r| r.mesh().prolongation_from(&mesh)).transpose()?;
        if rung.steps == 0 || ref_steps % rung.steps != 0 {
            return Err(Error::Input(format!(
                "{} steps do not divide the {ref_steps} reference steps",
                rung.steps
            )));
        }
        let space = FeSpace::new(Arc::new(mesh));
        let n = space.dim();
        Ok(Track {
            space,
            from_noise,
            to_reference,
            block: ref_steps / rung.steps,
            tau: cfg.t_final / rung.steps as f64,
            u: vec![0.0; n],
            pending: Vec::new(),
        })
    }

    fn reset(&mut self, noise_len: usize) {
        self.u.iter_mut().for_each(|v| *v = 0.0);
        self.pending = vec![0.0; noise_len];
    }

    fn push(&mut self, k: usize, dbeta: &[f64], model: &NoiseModel, eps: f64) -> Result<()> {
        for (p, d) in self.pending.iter_mut().zip(dbeta) {
            *p += d;
        }
        if (k + 1) % self.block != 0 {
            return Ok(());
        }
        let dw = self.from_noise.apply(&model.field(&self.pending));
        let load: Vec<f64> = self.u.iter().zip(&dw).map(|(u, d)| u + d).collect();
        let rhs1 = self.space.mass().apply(&load);
        let (u, _) = solve_linear_block(&self.space, self.tau, eps, &rhs1, &vec![0.0; self.space.dim()])?;
        self.u = u;
        self.pending.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
}

fn bisections(mac: &MacroMesh, h: f64) -> Result<usize> {
    let (hx, hy) = mac.spacing();
    if (hx - hy).abs() > 1e-12 * hx {
        return Err(Error::Config("uniform ladders need square macro cells".into()));
    }
    let ratio = hx / h;
    let k = ratio.log2().round();
    if !(k >= 0.0) || (2f64.powi(k as i32) - ratio).abs() > 1e-9 * ratio {
        return Err(Error::Input(format!("mesh width {h} is not the noise width {hx} over a power of two")));
    }
    Ok(2 * k as usize)
}

/// Coupled-path errors of the linear scheme: every rung and the reference are
/// driven by the same Brownian paths, the rungs by block sums of the
/// reference increments. Uses `cfg.realizations` paths from `cfg.seed` and
/// reports `E ||u_ref(T) - u(T)||^2_{-1,h}` measured on the reference mesh.
pub fn rung_errors(cfg: &RunConfig, ladder: &Ladder) -> Result<Vec<RateRow>> {
    cfg.validate()?;
    let eps = cfg.params()?.eps;
    let mac = cfg.noise_macro()?;
    let model = NoiseModel::new(Arc::new(mac.mesh()), cfg.effective_sigma())?;
    let stream = NoiseStream::new(cfg.seed);
    let ref_steps = ladder.reference.steps;
    let mut reference = Track::new(&mac, ladder.reference, None, cfg, ref_steps)?;
    let mut tracks = ladder
        .rungs
        .iter()
        .map(|&r| Track::new(&mac, r, Some(&reference.space), cfg, ref_steps))
        .collect::<Result<Vec<_>>>()?;
    let tau_ref = cfg.t_final / ref_steps as f64;
    let paths = cfg.realizations;
    let mut samples = vec![Vec::with_capacity(paths); tracks.len()];
    for p in 0..paths as u64 {
        reference.reset(model.len());
        tracks.iter_mut().for_each(|t| t.reset(model.len()));
        for k in 0..ref_steps {
            let dbeta = stream.increments(p, k as u64, tau_ref, model.len())?;
            reference.push(k, &dbeta, &model, eps)?;
            for t in tracks.iter_mut() {
                t.push(k, &dbeta, &model, eps)?;
            }
        }
        let ref_space = &reference.space;
        for (t, s) in tracks.iter().zip(samples.iter_mut()) {
            let lifted = t.to_reference.as_ref().expect("rungs map to the reference").apply(&t.u);
            let diff: Vec<f64> = reference.u.iter().zip(&lifted).map(|(a, b)| a - b).collect();
            s.push(ref_space.h_minus1_norm(&ref_space.function(diff)?)?.powi(2));
        }
        log::debug!("convergence path {p} done");
    }

    let mut rows: Vec<RateRow> = Vec::with_capacity(tracks.len());
    for ((t, rung), s) in tracks.iter().zip(&ladder.rungs).zip(&samples) {
        let m = s.len() as f64;
        let error = s.iter().sum::<f64>() / m;
        let se = if s.len() > 1 {
            (s.iter().map(|v| (v - error).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            0.0
        };
        let local_order = rows.last().map(|prev| {
            let (a, b) = match ladder.axis {
                Axis::Time => (prev.tau, t.tau),
                Axis::Space => (prev.h, rung.h),
            };
            (prev.error / error).ln() / (a / b).ln()
        });
        rows.push(RateRow { h: rung.h, tau: t.tau, dofs: t.space.dim(), error, se, local_order });
    }
    Ok(rows)
}

/// [`rung_errors`] with the fitted order; needs at least three rungs.
pub fn convergence_study(cfg: &RunConfig, ladder: &Ladder) -> Result<RateTable> {
    if ladder.rungs.len() < 3 {
        return Err(Error::Input(format!("a ladder needs at least 3 rungs, got {}", ladder.rungs.len())));
    }
    let rows = rung_errors(cfg, ladder)?;
    let x: Vec<f64> = rows
        .iter()
        .map(|r| match ladder.axis {
            Axis::Time => r.tau,
            Axis::Space => r.h,
        })
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(RateTable { axis: ladder.axis, paths: cfg.realizations, reference: ladder.reference, order: fit_order(&x, &y)?, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.7)).collect();
        assert!((fit_order(&x, &y).unwrap() - 1.7).abs() < 1e-12);
        assert!(fit_order(&[1.0], &[1.0]).is_err());
        assert!(fit_order(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    fn small() -> RunConfig {
        RunConfig { eps: 0.25, h_tilde: 0.5, t_final: 0.01, realizations: 2, ..RunConfig::default() }
    }

    #[test]
    fn short_ladder_is_rejected() {
        let ladder = Ladder::time(0.25, &[2, 4], 8);
        assert!(matches!(convergence_study(&small(), &ladder), Err(Error::Input(_))));
    }

    #[test]
    fn rung_equal_to_reference_has_zero_error() {
        let rows = rung_errors(&small(), &Ladder::time(0.25, &[8, 4], 8)).unwrap();
        assert_eq!(rows[0].error, 0.0);
        assert!(rows[1].error > 0.0);
        let rows = rung_errors(&small(), &Ladder::space(&[0.5, 0.25], 0.25, 4)).unwrap();
        assert!(rows[0].error > 0.0);
        assert_eq!(rows[1].error, 0.0);
    }

    #[test]
    fn errors_decrease_along_a_time_ladder() {
        let ladder = Ladder::time(0.25, &[2, 4, 8], 32);
        let table = convergence_study(&small(), &ladder).unwrap();
        assert!(table.rows.windows(2).all(|w| w[1].error < w[0].error));
        assert!(table.order > 0.0);
    }

    #[test]
    fn rejects_incompatible_rungs() {
        assert!(convergence_study(&small(), &Ladder::time(0.25, &[3, 4, 8], 8)).is_err());
        assert!(convergence_study(&small(), &Ladder::space(&[0.3, 0.25, 0.125], 0.0625, 4)).is_err());
    }
}
