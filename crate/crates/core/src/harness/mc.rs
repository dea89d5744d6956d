use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::export;
use super::run::{run_realization, RunOutput, TraceRecord};
use crate::error::{Error, Result};

/// Sample mean and its standard error (absent for a single sample).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let m = values.len();
        if m == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let se = (m > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        });
        Some(Stat { mean, se, count: m })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub t: f64,
    pub energy: Stat,
    pub lambda: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` increasing bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal bins on `[lo, hi]`; the last bin is closed.
    pub fn new(lo: f64, hi: f64, bins: usize, samples: &[f64]) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
        let mut counts = vec![0; bins];
        for &s in samples {
            let k = (((s - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    /// Midpoint of the most populated bin, the earliest on ties.
    pub fn mode(&self) -> Option<f64> {
        let max = *self.counts.iter().max()?;
        if max == 0 {
            return None;
        }
        let k = self.counts.iter().position(|&c| c == max)?;
        Some(0.5 * (self.edges[k] + self.edges[k + 1]))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationMeta {
    pub realization: u64,
    pub seed: u64,
    pub peak_time: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub expectations: Vec<Expectation>,
    pub histogram: Histogram,
    pub realizations: Vec<RealizationMeta>,
    pub failures: usize,
}

/// Statistics over the successful traces at the nominal levels `0, t_1, ...`.
pub fn summarize(cfg: &RunConfig, traces: &[TraceRecord]) -> Result<McSummary> {
    let ok: Vec<&TraceRecord> = traces.iter().filter(|t| t.succeeded()).collect();
    if ok.is_empty() {
        return Err(Error::Solver(format!("all {} realizations failed", traces.len())));
    }
    let mut times = vec![0.0];
    times.extend(cfg.time_levels()?);
    let t_end = *times.last().unwrap();
    let tol = 1e-9 * t_end.max(f64::MIN_POSITIVE);
    let lambdas: Vec<Vec<f64>> = ok.iter().map(|t| t.lambda_series()).collect();
    let mut cursors = vec![0usize; ok.len()];
    let mut expectations = Vec::with_capacity(times.len());
    for &t in &times {
        let mut energy = Vec::with_capacity(ok.len());
        let mut lambda = Vec::with_capacity(ok.len());
        for (j, trace) in ok.iter().enumerate() {
            let steps = &trace.steps;
            while cursors[j] < steps.len() && steps[cursors[j]].t < t - tol {
                cursors[j] += 1;
            }
            if let Some(s) = steps.get(cursors[j]).filter(|s| (s.t - t).abs() <= tol) {
                energy.push(s.energy);
                let l = lambdas[j][cursors[j]];
                if l.is_finite() {
                    lambda.push(l);
                }
            }
        }
        if let Some(e) = Stat::of(&energy) {
            expectations.push(Expectation { t, energy: e, lambda: Stat::of(&lambda) });
        }
    }
    let peaks: Vec<f64> = ok.iter().filter_map(|t| t.peak_time).collect();
    let histogram = Histogram::new(0.0, t_end, cfg.histogram_bins, &peaks);
    let realizations = traces
        .iter()
        .map(|t| RealizationMeta { realization: t.realization, seed: t.seed, peak_time: t.peak_time, failure: t.failure.clone() })
        .collect();
    Ok(McSummary { expectations, histogram, realizations, failures: traces.len() - ok.len() })
}

fn trace_path(dir: &Path, r: u64) -> PathBuf {
    dir.join("traces").join(format!("r{r:04}.trace"))
}

fn load_trace(path: &Path) -> Option<TraceRecord> {
    let bytes = std::fs::read(path).ok()?;
    bincode::serde::decode_from_slice(&bytes, bincode::config::standard()).ok().map(|(t, _)| t)
}

fn store_trace(path: &Path, trace: &TraceRecord) -> Result<()> {
    let bytes = bincode::serde::encode_to_vec(trace, bincode::config::standard())
        .map_err(|e| Error::Encoding(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn one(cfg: &RunConfig, r: u64, dir: Option<&Path>) -> Result<TraceRecord> {
    if let Some(d) = dir {
        if let Some(t) = load_trace(&trace_path(d, r)) {
            log::info!("realization {r}: reusing stored trace");
            return Ok(t);
        }
    }
    let out = match dir {
        Some(d) => RunOutput {
            steps_csv: Some(d.join("steps").join(format!("r{r:04}.csv"))),
            vtk_dir: (!cfg.vtk_times.is_empty()).then(|| d.join("vtk")),
            checkpoint_dir: (cfg.checkpoint_interval > 0).then(|| d.join("checkpoints")),
        },
        None => RunOutput::default(),
    };
    let trace = match run_realization(cfg, r, &out) {
        Ok(t) => t,
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => TraceRecord {
            realization: r,
            seed: cfg.seed,
            steps: Vec::new(),
            peak_time: None,
            failure: Some(format!("setup: {e}")),
            final_state: None,
            energy_increases: 0,
        },
    };
    if let Some(d) = dir {
        store_trace(&trace_path(d, r), &trace)?;
    }
    Ok(trace)
}

/// Runs the ensemble on a pool of `cfg.workers` threads. Completed traces are
/// stored under the output directory as they finish and are reused by a
/// restarted ensemble; results do not depend on the pool size.
pub fn monte_carlo(cfg: &RunConfig) -> Result<(McSummary, Vec<TraceRecord>)> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    if let Some(d) = &dir {
        let traces = d.join("traces");
        std::fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        builder = builder.num_threads(cfg.workers);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let traces: Vec<TraceRecord> = pool.install(|| {
        (0..cfg.realizations as u64)
            .into_par_iter()
            .map(|r| one(cfg, r, dir.as_deref()))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(cfg, &traces)?;
    if let Some(d) = &dir {
        export::write_expect_csv(&d.join("expect.csv"), &summary)?;
        export::write_histogram_csv(&d.join("histogram.csv"), &summary)?;
        let meta = toml::to_string(&MetaFile { realizations: summary.realizations.clone() })
            .map_err(|e| Error::Encoding(e.to_string()))?;
        let path = d.join("realizations.toml");
        std::fs::write(&path, meta).map_err(|e| Error::io(&path, e))?;
    }
    Ok((summary, traces))
}

#[derive(Serialize)]
struct MetaFile {
    realizations: Vec<RealizationMeta>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_binning() {
        let h = Histogram::new(0.0, 1.0, 4, &[0.0, 0.1, 0.3, 0.3, 0.99, 1.0]);
        assert_eq!(h.counts, vec![2, 2, 0, 2]);
        assert_eq!(h.edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(h.mode(), Some(0.125));
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.se.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[5.0]).unwrap().se, None);
        assert!(Stat::of(&[]).is_none());
    }
}
