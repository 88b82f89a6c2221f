//! Colored noise that is white in time and spatially correlated through the
//! Riesz kernel `k(w,z) = |w − z|^{−α}`.
//!
//! Increments are synthesised spectrally: the discrete transform of grid
//! white noise, drawn directly as Hermitian complex normals, is filtered by
//! `√(λ_m / h^q)`, where `λ_m = c(α,q)|ξ_m|^{α−q}` is the Riesz spectral
//! density. The realised covariance is the periodisation of the
//! kernel on the torus. Each increment is a pure function of the key triple
//! `(seed, stream_id, step_index)`.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Field, TorusGrid};
use crate::special::{riesz_fourier_constant, riesz_periodization_offset};
use crate::stats::{self, LinearFit};

/// How the `m = 0` spectral coefficient is chosen. The Riesz density
/// diverges there for `α < q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroModePolicy {
    /// `λ_0` equals the multiplier of the first nonzero mode.
    ClampToFirstMode,
    /// `λ_0 = 0`: the noise has zero spatial mean.
    Zero,
    /// `λ_0` cancels the constant offset that periodisation introduces, so
    /// that the realised covariance matches `|r|^{−α}` at small lags.
    #[default]
    MatchRiesz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    #[serde(default)]
    pub zero_mode_policy: ZeroModePolicy,
    /// Adds an independent spatially constant Brownian component, the `+1`
    /// part of the kernel bound `|w−z|^{−α} + 1`.
    #[serde(default)]
    pub include_constant_part: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream_id: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64) -> Self {
        NoiseSpec {
            alpha,
            zero_mode_policy: ZeroModePolicy::default(),
            include_constant_part: false,
            seed: 0,
            stream_id: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64, stream_id: u64) -> Self {
        self.seed = seed;
        self.stream_id = stream_id;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        validate_alpha(self.alpha, dim)
    }
}

/// Checks `α ∈ (0, 2 ∧ q)`.
pub fn validate_alpha(alpha: f64, dim: usize) -> Result<()> {
    let upper = (dim as f64).min(2.0);
    if !(alpha > 0.0 && alpha < upper) {
        return Err(Error::param(
            "alpha",
            format!("alpha must lie in (0, 2∧q) = (0, {upper}), got {alpha}"),
        ));
    }
    Ok(())
}

/// One noise increment `W(dt, ·)` over a time slab.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub field: Field,
    pub dt: f64,
}

/// Riesz spectral multipliers `λ_m`, in FFT storage order.
pub fn riesz_spectrum(grid: &TorusGrid, alpha: f64, policy: ZeroModePolicy) -> Result<Vec<f64>> {
    validate_alpha(alpha, grid.dim())?;
    let q = grid.dim();
    let c = riesz_fourier_constant(alpha, q);
    let expo = (alpha - q as f64) / 2.0;
    let mut lambda: Vec<f64> = grid
        .squared_wavenumbers()
        .into_iter()
        .map(|k2| if k2 > 0.0 { c * k2.powf(expo) } else { 0.0 })
        .collect();
    let l = grid.extent();
    lambda[0] = match policy {
        ZeroModePolicy::Zero => 0.0,
        ZeroModePolicy::ClampToFirstMode => {
            let xi1 = 2.0 * std::f64::consts::PI / l;
            c * xi1.powf(alpha - q as f64)
        }
        ZeroModePolicy::MatchRiesz => {
            riesz_periodization_offset(alpha, q) * l.powf(q as f64 - alpha)
        }
    };
    Ok(lambda)
}

/// The periodised kernel `k_per(x) = L^{−q} Σ_m λ_m e^{iξ_m·x}` at the grid
/// sites (lag measured from the origin site).
pub fn periodized_kernel(grid: &TorusGrid, spec: &NoiseSpec) -> Result<Field> {
    let lambda = riesz_spectrum(grid, spec.alpha, spec.zero_mode_policy)?;
    let spec_c: Vec<Complex64> = lambda.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let inv_cell = 1.0 / grid.cell_volume();
    let mut values = grid::inverse_real(grid, spec_c);
    let constant = if spec.include_constant_part { 1.0 } else { 0.0 };
    for v in &mut values {
        *v = *v * inv_cell + constant;
    }
    Field::new(*grid, values)
}

/// Writes `(flat index, |ξ|, λ)` rows for inspection.
pub fn write_spectrum_csv(grid: &TorusGrid, spec: &NoiseSpec, mut out: impl Write) -> Result<()> {
    let lambda = riesz_spectrum(grid, spec.alpha, spec.zero_mode_policy)?;
    writeln!(out, "index,abs_xi,lambda")?;
    for (k, (l, k2)) in lambda.iter().zip(grid.squared_wavenumbers()).enumerate() {
        writeln!(out, "{k},{},{l}", k2.sqrt())?;
    }
    Ok(())
}

/// Deterministic RNG for one increment, keyed by the triple.
fn keyed_rng(seed: u64, stream_id: u64, step_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream_id.to_le_bytes());
    key[16..24].copy_from_slice(&step_index.to_le_bytes());
    key[24..].copy_from_slice(b"rieszinc");
    ChaCha8Rng::from_seed(key)
}

/// Reusable sampler holding the spectral filter for one grid and spec.
#[derive(Debug)]
pub struct NoiseSampler {
    grid: TorusGrid,
    spec: NoiseSpec,
    filter: Vec<f64>,
    /// Flat index of the mode `−m` for each mode `m`.
    partner: Vec<usize>,
    consumed: AtomicU64,
}

impl Clone for NoiseSampler {
    fn clone(&self) -> Self {
        NoiseSampler {
            grid: self.grid,
            spec: self.spec,
            filter: self.filter.clone(),
            partner: self.partner.clone(),
            consumed: AtomicU64::new(self.consumed()),
        }
    }
}

impl NoiseSampler {
    pub fn new(grid: TorusGrid, spec: NoiseSpec) -> Result<Self> {
        let inv_cell = 1.0 / grid.cell_volume();
        let filter = riesz_spectrum(&grid, spec.alpha, spec.zero_mode_policy)?
            .into_iter()
            .map(|l| (l * inv_cell).sqrt())
            .collect();
        let n = grid.points();
        let partner = (0..grid.len())
            .map(|k| {
                let [i, j] = grid.site_index(k);
                grid.flat_index([(n - i) % n, (n - j) % n])
            })
            .collect();
        Ok(NoiseSampler {
            grid,
            spec,
            filter,
            partner,
            consumed: AtomicU64::new(0),
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Number of increments drawn so far through this sampler.
    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::Relaxed)
    }

    pub fn sample(&self, dt: f64, step_index: u64) -> Result<NoiseIncrement> {
        self.sample_block(dt, step_index, 1)
    }

    /// Sum of the `count` consecutive increments of length `dt_fine` keyed
    /// `first, …, first + count − 1`: one increment over `count·dt_fine`
    /// that refines consistently when the step is halved.
    pub fn sample_block(&self, dt_fine: f64, first: u64, count: u64) -> Result<NoiseIncrement> {
        if !(dt_fine.is_finite() && dt_fine > 0.0) {
            return Err(Error::param("dt", format!("time step must be positive, got {dt_fine}")));
        }
        if count == 0 {
            return Err(Error::param("count", "need at least one increment"));
        }
        self.consumed.fetch_add(count, Ordering::Relaxed);
        // the transform of N^q iid standard normals: real N(0, N^q) on
        // self-conjugate modes, otherwise a + ib with a, b ~ N(0, N^q/2)
        let len = self.grid.len();
        let full = (len as f64).sqrt();
        let half = (len as f64 / 2.0).sqrt();
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let mut constant = 0.0;
        for k in first..first + count {
            let mut rng = keyed_rng(self.spec.seed, self.spec.stream_id, k);
            for (m, &p) in self.partner.iter().enumerate() {
                if p == m {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    buf[m].re += full * z;
                } else if m < p {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    buf[m] += Complex64::new(half * a, half * b);
                    buf[p] += Complex64::new(half * a, -half * b);
                }
            }
            if self.spec.include_constant_part {
                let z: f64 = StandardNormal.sample(&mut rng);
                constant += z;
            }
        }
        for (c, &s) in buf.iter_mut().zip(&self.filter) {
            *c *= s;
        }
        let mut values = grid::inverse_real(&self.grid, buf);
        let sqrt_dt = dt_fine.sqrt();
        for v in &mut values {
            *v = (*v + constant) * sqrt_dt;
        }
        Ok(NoiseIncrement {
            field: Field::new(self.grid, values)?,
            dt: dt_fine * count as f64,
        })
    }
}

/// Samples the increment with key `(spec.seed, spec.stream_id, step_index)`.
pub fn sample_increment(
    grid: &TorusGrid,
    spec: &NoiseSpec,
    dt: f64,
    step_index: u64,
) -> Result<NoiseIncrement> {
    NoiseSampler::new(*grid, *spec)?.sample(dt, step_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    /// Lag in grid sites along each axis.
    pub lag_sites: usize,
    pub lag: f64,
    pub covariance: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub estimates: Vec<CovarianceEstimate>,
    /// Log-log fit over the nonzero lags.
    pub fit: Option<LinearFit>,
}

/// Monte Carlo estimate of the spatial covariance per unit time.
///
/// Replica `r` uses stream `spec.stream_id + r` at step 0. Products are
/// averaged over all sites (and both axes when `q = 2`).
pub fn empirical_covariance(
    spec: &NoiseSpec,
    grid: &TorusGrid,
    dt: f64,
    replicas: usize,
    lags: &[usize],
) -> Result<CovarianceReport> {
    if replicas < 100 {
        return Err(Error::param("replicas", "at least 100 replicas are required"));
    }
    let n = grid.points();
    for &lag in lags {
        if lag != 0 && !(4..=n / 8).contains(&lag) {
            return Err(Error::param(
                "lags",
                format!("lag {lag} outside [4h, L/8] (in sites: [4, {}])", n / 8),
            ));
        }
    }
    let base = NoiseSampler::new(*grid, *spec)?;
    let per_replica: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut s = *base.spec();
            s.stream_id = spec.stream_id.wrapping_add(r);
            let sampler = NoiseSampler {
                grid: *grid,
                spec: s,
                filter: base.filter.clone(),
                partner: base.partner.clone(),
                consumed: AtomicU64::new(0),
            };
            let w = sampler.sample(dt, 0)?.field;
            Ok(lags.iter().map(|&lag| lag_product_mean(&w, lag) / dt).collect())
        })
        .collect::<Result<_>>()?;

    let estimates: Vec<CovarianceEstimate> = lags
        .iter()
        .enumerate()
        .map(|(j, &lag)| {
            let samples: Vec<f64> = per_replica.iter().map(|row| row[j]).collect();
            CovarianceEstimate {
                lag_sites: lag,
                lag: lag as f64 * grid.spacing(),
                covariance: stats::mean(&samples),
                std_err: (stats::variance(&samples) / replicas as f64).sqrt(),
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = estimates
        .iter()
        .filter(|e| e.lag_sites > 0)
        .map(|e| (e.lag, e.covariance))
        .unzip();
    let fit = stats::log_log_fit(&xs, &ys);
    Ok(CovarianceReport { estimates, fit })
}

/// Spatial mean of `w(x) w(x + lag e_l)` averaged over the axes.
pub(crate) fn lag_product_mean(w: &Field, lag: usize) -> f64 {
    let grid = w.grid();
    let n = grid.points();
    let v = w.values();
    match grid.dim() {
        1 => (0..n).map(|i| v[i] * v[(i + lag) % n]).sum::<f64>() / n as f64,
        _ => {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let here = v[i * n + j];
                    s += here * (v[((i + lag) % n) * n + j] + v[i * n + (j + lag) % n]);
                }
            }
            s / (2 * n * n) as f64
        }
    }
}
