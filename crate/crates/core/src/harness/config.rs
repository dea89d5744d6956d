use std::path::{Path, PathBuf};
use std::sync::Arc;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::eigen::EigenConfig;
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;
use crate::mesh::{MacroMesh, Point, Rect};
use crate::scheme::{ModelParams, NewtonConfig};

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "STOCHCH_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Nonlinear scheme, linear part and nonlinear remainder.
    Stochastic,
    /// Nonlinear scheme without noise.
    Deterministic,
    /// Linear part only.
    LinearOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `-tanh(max(r1 - |x|, |x| - r2) / (sqrt(2) eps))`: an annulus of the
    /// `+1` phase between radii `r1` and `r2`.
    TwoCircle { r1: f64, r2: f64 },
    /// Expression in `x`, `y` and `eps`, e.g. `math::tanh(x / eps)`.
    Expression { expr: String },
    /// Final state of a checkpoint written by an earlier run.
    File { path: PathBuf },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::TwoCircle { r1: 0.2, r2: 0.55 }
    }
}

/// Compiled initial profile.
pub enum Profile {
    Function(Box<dyn Fn(Point) -> f64 + Send + Sync>),
    Checkpoint(PathBuf),
}

impl InitialCondition {
    pub fn profile(&self, eps: f64) -> Result<Profile> {
        match self {
            InitialCondition::TwoCircle { r1, r2 } => {
                let (r1, r2) = (*r1, *r2);
                if !(0.0 < r1 && r1 < r2) {
                    return Err(Error::Config(format!("need 0 < r1 < r2, got {r1} and {r2}")));
                }
                let w = std::f64::consts::SQRT_2 * eps;
                Ok(Profile::Function(Box::new(move |p: Point| {
                    let r = p[0].hypot(p[1]);
                    -((r1 - r).max(r - r2) / w).tanh()
                })))
            }
            InitialCondition::Expression { expr } => {
                let node: Node<DefaultNumericTypes> = evalexpr::build_operator_tree(expr)
                    .map_err(|e| Error::Config(format!("initial expression `{expr}`: {e}")))?;
                let eval = move |p: Point| -> std::result::Result<f64, String> {
                    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
                    for (k, v) in [("x", p[0]), ("y", p[1]), ("eps", eps)] {
                        ctx.set_value(k.into(), Value::Float(v)).map_err(|e| e.to_string())?;
                    }
                    node.eval_number_with_context(&ctx).map_err(|e| e.to_string())
                };
                eval([0.0, 0.0]).map_err(|e| Error::Config(format!("initial expression `{expr}`: {e}")))?;
                Ok(Profile::Function(Box::new(move |p| eval(p).unwrap_or(f64::NAN))))
            }
            InitialCondition::File { path } => Ok(Profile::Checkpoint(path.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eps: f64,
    /// Noise amplitude.
    pub sigma: f64,
    pub t_final: f64,
    /// Uniform time step, used unless `times` is given.
    pub tau: f64,
    /// Explicit time levels `t_1 < ... < t_N` (with `t_0 = 0`).
    pub times: Option<Vec<f64>>,
    /// `[x0, x1, y0, y1]`
    pub domain: [f64; 4],
    /// Noise mesh spacing; also the coarsest admissible element size.
    pub h_tilde: f64,
    pub h_min: f64,
    pub refine_fraction: f64,
    pub coarsen_fraction: f64,
    /// Rounds of mark-and-refine used to resolve the initial profile.
    pub initial_rounds: usize,
    pub initial: InitialCondition,
    pub seed: u64,
    pub realizations: usize,
    /// The eigenvalue is computed every this many levels.
    pub eigen_stride: usize,
    pub eigen: EigenConfig,
    pub newton: NewtonConfig,
    pub estimator: EstimatorConfig,
    /// Compute the indicator suite at every step.
    pub indicators: bool,
    pub output: Option<PathBuf>,
    /// Levels between checkpoints (0 disables checkpoints).
    pub checkpoint_interval: usize,
    pub vtk_times: Vec<f64>,
    pub histogram_bins: usize,
    /// Worker threads for ensembles (0 uses all cores).
    pub workers: usize,
    pub mode: Mode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eps: 1.0 / 32.0,
            sigma: 0.4,
            t_final: 0.012,
            tau: 1e-6,
            times: None,
            domain: [-1.0, 1.0, -1.0, 1.0],
            h_tilde: 1.0 / 16.0,
            h_min: 1.0 / 128.0,
            refine_fraction: 0.25,
            coarsen_fraction: 0.1,
            initial_rounds: 12,
            initial: InitialCondition::default(),
            seed: 0,
            realizations: 1,
            eigen_stride: 10,
            eigen: EigenConfig::default(),
            newton: NewtonConfig::default(),
            estimator: EstimatorConfig::default(),
            indicators: true,
            output: None,
            checkpoint_interval: 0,
            vtk_times: Vec::new(),
            histogram_bins: 40,
            workers: 0,
            mode: Mode::Stochastic,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Noise amplitude actually used: zero in deterministic mode.
    pub fn effective_sigma(&self) -> f64 {
        match self.mode {
            Mode::Deterministic => 0.0,
            _ => self.sigma,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.eps)
    }

    pub fn adapt(&self) -> AdaptConfig {
        AdaptConfig {
            h_min: self.h_min,
            h_tilde: self.h_tilde,
            refine_fraction: self.refine_fraction,
            coarsen_fraction: self.coarsen_fraction,
        }
    }

    pub fn rect(&self) -> Result<Rect> {
        let [x0, x1, y0, y1] = self.domain;
        Rect::new(x0, x1, y0, y1)
    }

    /// Structured macro mesh with spacing `h_tilde`, which is also the noise
    /// mesh.
    pub fn noise_macro(&self) -> Result<Arc<MacroMesh>> {
        let rect = self.rect()?;
        let cells = |len: f64| -> Result<usize> {
            let n = (len / self.h_tilde).round();
            if n < 1.0 || ((n * self.h_tilde) - len).abs() > 1e-9 * len {
                return Err(Error::Config(format!("h_tilde {} does not divide the side {len}", self.h_tilde)));
            }
            Ok(n as usize)
        };
        MacroMesh::structured(rect, cells(rect.x1 - rect.x0)?, cells(rect.y1 - rect.y0)?)
    }

    /// Time levels `t_1, ..., t_N`.
    pub fn time_levels(&self) -> Result<Vec<f64>> {
        match &self.times {
            Some(t) => Ok(t.clone()),
            None => {
                let n = (self.t_final / self.tau).round() as usize;
                Ok((1..=n).map(|k| k as f64 * self.tau).collect())
            }
        }
    }

    /// Output directory: the environment override, then the configured path.
    pub fn output_dir(&self) -> Option<PathBuf> {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).or_else(|| self.output.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps", self.eps),
            ("t_final", self.t_final),
            ("tau", self.tau),
            ("h_tilde", self.h_tilde),
            ("h_min", self.h_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        self.params()?;
        self.adapt().validate()?;
        self.newton.validate()?;
        self.estimator.validate()?;
        self.rect()?;
        if self.realizations == 0 {
            return Err(Error::Config("at least one realization is required".into()));
        }
        if self.eigen_stride == 0 || self.histogram_bins == 0 {
            return Err(Error::Config("eigen_stride and histogram_bins must be positive".into()));
        }
        if let Some(t) = &self.times {
            let mut last = 0.0;
            for &s in t {
                if !(s > last) {
                    return Err(Error::Config("time levels must be positive and increasing".into()));
                }
                last = s;
            }
        } else if self.tau > self.t_final {
            return Err(Error::Config("tau exceeds t_final".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_and_rejections() {
        let c = RunConfig::from_toml("eps = 0.0625\nmode = \"deterministic\"\n[initial]\nkind = \"expression\"\nexpr = \"math::tanh(x / eps)\"\n").unwrap();
        assert_eq!(c.effective_sigma(), 0.0);
        assert_eq!(c.eps, 0.0625);
        let Profile::Function(f) = c.initial.profile(c.eps).unwrap() else { panic!() };
        assert!((f([0.1, 0.3]) - (0.1f64 / 0.0625).tanh()).abs() < 1e-15);
        assert!(RunConfig::from_toml("eps = -1").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("h_tilde = 0.3").unwrap().noise_macro().is_err());
        assert!(RunConfig::from_toml("h_min = 0.5").is_err());
    }

    #[test]
    fn two_circle_profile_phases() {
        let Profile::Function(f) = InitialCondition::default().profile(1.0 / 32.0).unwrap() else { panic!() };
        assert!(f([0.0, 0.0]) < -0.99);
        assert!(f([0.375, 0.0]) > 0.99);
        assert!(f([0.9, 0.0]) < -0.99);
        assert!(f([0.2, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn output_directory_prefers_the_environment() {
        let cfg = RunConfig { output: Some("configured".into()), ..RunConfig::default() };
        assert_eq!(cfg.output_dir(), Some(PathBuf::from("configured")));
        std::env::set_var(OUT_DIR_ENV, "from_env");
        let dir = cfg.output_dir();
        std::env::remove_var(OUT_DIR_ENV);
        assert_eq!(dir, Some(PathBuf::from("from_env")));
    }

    #[test]
    fn uniform_levels() {
        let c = RunConfig { tau: 0.25, t_final: 1.0, ..Default::default() };
        assert_eq!(c.time_levels().unwrap(), vec![0.25, 0.5, 0.75, 1.0]);
    }
}
