//! Regularized, mean-free noise built from scaled hat functions on a fixed
//! noise mesh, driven by reproducible Brownian increments.
//!
//! With `phi_l` the P1 hat functions of the noise mesh and `beta_l`
//! independent Brownian motions, one increment over a step of length `tau` is
//!
//! ```text
//! dW = sigma * sum_l s_l (phi_l - m(phi_l)) dbeta_l,   s_l = ((phi_l, 1) / 3)^(-1/2)
//! ```
//!
//! so `(dW, 1) = 0` for every sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, FeFunction, FeSpace};
use crate::mesh::Mesh;

/// Reciprocal of `d + 1` in two space dimensions.
const INV_D_PLUS_1: f64 = 1.0 / 3.0;

/// Hat-function noise basis on the noise mesh.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    mesh: Arc<Mesh>,
    sigma: f64,
    integrals: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    grad_sq: Vec<f64>,
    area: f64,
}

impl NoiseModel {
    pub fn new(noise_mesh: Arc<Mesh>, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Input(format!("noise amplitude must be nonnegative, got {sigma}")));
        }
        noise_mesh.audit()?;
        let space = FeSpace::new(noise_mesh.clone());
        let integrals = space.lumped_mass().to_vec();
        if let Some(l) = integrals.iter().position(|&c| !(c > 0.0)) {
            return Err(Error::Structure(format!("hat function {l} has nonpositive integral")));
        }
        let area = space.area();
        let means = integrals.iter().map(|c| c / area).collect();
        let scales = integrals.iter().map(|c| 1.0 / (INV_D_PLUS_1 * c).sqrt()).collect();
        let grad_sq = assemble_stiffness(&noise_mesh).diagonal();
        Ok(NoiseModel { mesh: noise_mesh, sigma, integrals, means, scales, grad_sq, area })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of basis functions `L` (one per noise-mesh vertex).
    pub fn len(&self) -> usize {
        self.integrals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.integrals.is_empty()
    }

    /// `(phi_l, 1)`
    pub fn integrals(&self) -> &[f64] {
        &self.integrals
    }

    /// `m(phi_l) = (phi_l, 1) / |D|`
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// `s_l = 1 / sqrt((phi_l, 1) / 3)`
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn domain_area(&self) -> f64 {
        self.area
    }

    /// Nodal values on the noise mesh of the increment driven by `dbeta`,
    /// including the amplitude `sigma`.
    pub fn field(&self, dbeta: &[f64]) -> Vec<f64> {
        assert_eq!(dbeta.len(), self.len());
        let shift: f64 = dbeta.iter().zip(&self.scales).zip(&self.means).map(|((b, s), m)| b * s * m).sum();
        dbeta.iter().zip(&self.scales).map(|(b, s)| self.sigma * (s * b - shift)).collect()
    }

    pub fn field_function(&self, dbeta: &[f64]) -> FeFunction {
        FeFunction::new(&self.mesh, self.field(dbeta)).expect("one value per noise vertex")
    }

    /// Noise indicator `tau^2 sum_l ||grad phi_l||^2 / ((phi_l, 1) / 3)`,
    /// for unit amplitude.
    pub fn indicator(&self, tau: f64) -> f64 {
        tau * tau * self.indicator_sum()
    }

    /// `sum_l ||grad phi_l||^2 / ((phi_l, 1) / 3)`
    pub fn indicator_sum(&self) -> f64 {
        self.grad_sq.iter().zip(&self.integrals).map(|(g, c)| g / (INV_D_PLUS_1 * c)).sum()
    }
}

/// Counter-based source of Brownian increments. The draw for basis `l` at
/// step `n` of realization `r` depends only on `(seed, r, n, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `count` standard normals for `(realization, step, sub)`; `sub = 0`
    /// drives regular steps and `sub = 1` the bridge refinement of a step.
    pub fn standard_normals(&self, realization: u64, step: u64, sub: u8, count: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(realization);
        let block = (step as u128 * 2 + sub as u128) * count as u128;
        rng.set_word_pos(block * 2);
        let std = Normal::standard();
        (0..count)
            .map(|_| {
                let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
                std.inverse_cdf(u)
            })
            .collect()
    }

    /// Brownian increments `N(0, tau)` for one step.
    pub fn increments(&self, realization: u64, step: u64, tau: f64, count: usize) -> Result<Vec<f64>> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Input(format!("time step must be positive, got {tau}")));
        }
        let s = tau.sqrt();
        Ok(self.standard_normals(realization, step, 0, count).into_iter().map(|z| s * z).collect())
    }

    /// Splits the increment `dbeta` over a step of length `tau` into two
    /// half-step increments with the Brownian bridge law.
    pub fn bridge(&self, realization: u64, step: u64, tau: f64, dbeta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = self.standard_normals(realization, step, 1, dbeta.len());
        let s = (tau / 4.0).sqrt();
        let first: Vec<f64> = dbeta.iter().zip(&z).map(|(b, z)| 0.5 * b + s * z).collect();
        let second = dbeta.iter().zip(&first).map(|(b, f)| b - f).collect();
        (first, second)
    }
}

/// One realization's noise history: the accumulated sums
/// `Sigma^n = sum_{k<=n} dW_k` on the noise mesh at each time level.
#[derive(Debug, Clone)]
pub struct NoisePath {
    stream: NoiseStream,
    realization: u64,
    times: Vec<f64>,
    sums: Vec<Vec<f64>>,
}

impl NoisePath {
    pub fn new(model: &NoiseModel, stream: NoiseStream, realization: u64) -> Self {
        NoisePath { stream, realization, times: vec![0.0], sums: vec![vec![0.0; model.len()]] }
    }

    /// Restores a path from a checkpointed time level.
    pub fn resume(stream: NoiseStream, realization: u64, t: f64, sum: Vec<f64>) -> Self {
        NoisePath { stream, realization, times: vec![t], sums: vec![sum] }
    }

    pub fn stream(&self) -> NoiseStream {
        self.stream
    }

    pub fn realization(&self) -> u64 {
        self.realization
    }

    /// Draws the Brownian increments of nominal step `step`.
    pub fn draw(&self, model: &NoiseModel, step: u64, tau: f64) -> Result<Vec<f64>> {
        self.stream.increments(self.realization, step, tau, model.len())
    }

    pub fn bridge(&self, step: u64, tau: f64, dbeta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.stream.bridge(self.realization, step, tau, dbeta)
    }

    /// Appends the level reached by applying `dbeta` over `tau` and returns
    /// the increment field on the noise mesh.
    pub fn advance(&mut self, model: &NoiseModel, tau: f64, dbeta: &[f64]) -> Result<FeFunction> {
        if !(tau > 0.0) {
            return Err(Error::Input(format!("time step must be positive, got {tau}")));
        }
        let dw = model.field(dbeta);
        let next: Vec<f64> = self.current().iter().zip(&dw).map(|(s, d)| s + d).collect();
        let t = self.time() + tau;
        self.times.push(t);
        self.sums.push(next);
        FeFunction::new(model.mesh(), dw)
    }

    /// Samples and applies the increment of nominal step `step`.
    pub fn sample_increment(&mut self, model: &NoiseModel, step: u64, tau: f64) -> Result<FeFunction> {
        let dbeta = self.draw(model, step, tau)?;
        self.advance(model, tau, &dbeta)
    }

    pub fn time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// `Sigma` at the latest level.
    pub fn current(&self) -> &[f64] {
        self.sums.last().unwrap()
    }

    pub fn levels(&self) -> usize {
        self.times.len()
    }

    pub fn sum_at_level(&self, n: usize) -> &[f64] {
        &self.sums[n]
    }

    /// Piecewise-linear time interpolant of the sums.
    pub fn sum_at(&self, t: f64) -> Result<Vec<f64>> {
        let (t0, t1) = (self.times[0], self.time());
        if !(t >= t0 - 1e-14 && t <= t1 + 1e-14) {
            return Err(Error::Input(format!("time {t} outside [{t0}, {t1}]")));
        }
        let k = self.times.partition_point(|&s| s < t).clamp(1, self.times.len().max(2) - 1);
        if self.times.len() == 1 {
            return Ok(self.sums[0].clone());
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        let theta = ((t - a) / (b - a)).clamp(0.0, 1.0);
        Ok(self.sums[k - 1].iter().zip(&self.sums[k]).map(|(x, y)| (1.0 - theta) * x + theta * y).collect())
    }
}

/// Increment record for binary replay: header `seed, L, N` (u64), `N` step
/// lengths, then `N * L` increments, all little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementDump {
    pub seed: u64,
    pub basis: usize,
    pub taus: Vec<f64>,
    pub increments: Vec<Vec<f64>>,
}

impl IncrementDump {
    pub fn write(&self, path: &Path) -> Result<()> {
        if self.increments.len() != self.taus.len() || self.increments.iter().any(|r| r.len() != self.basis) {
            return Err(Error::Input("increment table does not match its header".into()));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: [u8; 8]| w.write_all(&bytes).map_err(|e| Error::io(path, e));
        put(self.seed.to_le_bytes())?;
        put((self.basis as u64).to_le_bytes())?;
        put((self.taus.len() as u64).to_le_bytes())?;
        for t in &self.taus {
            put(t.to_le_bytes())?;
        }
        for v in self.increments.iter().flatten() {
            put(v.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut word = || -> Result<[u8; 8]> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
            Ok(b)
        };
        let seed = u64::from_le_bytes(word()?);
        let basis = u64::from_le_bytes(word()?) as usize;
        let n = u64::from_le_bytes(word()?) as usize;
        let taus = (0..n).map(|_| word().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        let increments = (0..n)
            .map(|_| (0..basis).map(|_| word().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(IncrementDump { seed, basis, taus, increments })
    }
}
