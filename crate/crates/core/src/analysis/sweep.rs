//! Paired-solve sweep over `(α, γ)` with `σ(u) = |u|^γ`.
//!
//! Every cell runs `replicas` paired solves from `X¹(0) = 0` and
//! `X²(0) ≡ perturbation` on disjoint noise streams, and reports the
//! distribution of `d(T) = ‖X¹(T) − X²(T)‖_∞`. The table is exploratory: a
//! discretised divergence statistic says nothing definite about pathwise
//! uniqueness of the continuum equation.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};
use crate::noise::{validate_alpha, NoiseSpec, ZeroModePolicy};
use crate::solver::{paired_solve, CoefficientSpec, Outcome, SolveConfig};
use crate::stats::median;

pub const SWEEP_DISCLAIMER: &str =
    "exploratory discretised statistic; not evidence for or against pathwise uniqueness";

/// Tolerance for placing a cell on the line `α = 2(2γ − 1)`.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub replicas: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_extent")]
    pub extent: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub zero_mode_policy: ZeroModePolicy,
}

fn default_dim() -> usize {
    1
}
fn default_extent() -> f64 {
    1.0
}
fn default_points() -> usize {
    64
}
fn default_t_end() -> f64 {
    0.5
}
fn default_dt() -> f64 {
    1e-3
}
fn default_perturbation() -> f64 {
    1e-12
}
fn default_threshold() -> f64 {
    1e-6
}

impl SweepConfig {
    pub fn new(alphas: Vec<f64>, gammas: Vec<f64>, replicas: usize) -> Self {
        SweepConfig {
            alphas,
            gammas,
            replicas,
            dim: default_dim(),
            extent: default_extent(),
            points: default_points(),
            t_end: default_t_end(),
            dt: default_dt(),
            perturbation: default_perturbation(),
            threshold: default_threshold(),
            master_seed: 0,
            zero_mode_policy: ZeroModePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.gammas.is_empty() {
            return Err(Error::param("alphas", "sweep needs at least one α and one γ"));
        }
        if self.replicas == 0 {
            return Err(Error::param("replicas", "need at least one replica"));
        }
        for &a in &self.alphas {
            validate_alpha(a, self.dim)?;
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
            return Err(Error::param("gammas", format!("need γ ∈ (0, 1], got {g}")));
        }
        if !(self.perturbation.is_finite() && self.threshold > 0.0) {
            return Err(Error::param("threshold", "threshold must be positive"));
        }
        self.template(self.alphas[0], self.gammas[0], 0)?.validate()
    }

    fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.extent, self.points)
    }

    fn template(&self, alpha: f64, gamma: f64, stream: u64) -> Result<SolveConfig> {
        let grid = self.grid()?;
        let mut noise = NoiseSpec::new(alpha).with_seed(self.master_seed, stream);
        noise.zero_mode_policy = self.zero_mode_policy;
        Ok(SolveConfig::new(grid, noise, CoefficientSpec::power_abs(gamma), self.t_end, self.dt, Field::zeros(grid)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySide {
    /// `α < 2(2γ − 1)`: pathwise uniqueness is known.
    Below,
    On,
    Above,
}

impl BoundarySide {
    pub fn classify(alpha: f64, gamma: f64) -> Self {
        let edge = 2.0 * (2.0 * gamma - 1.0);
        if (alpha - edge).abs() <= BOUNDARY_TOL {
            BoundarySide::On
        } else if alpha < edge {
            BoundarySide::Below
        } else {
            BoundarySide::Above
        }
    }
}

impl fmt::Display for BoundarySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundarySide::Below => "below",
            BoundarySide::On => "on",
            BoundarySide::Above => "above",
        })
    }
}

/// One row of the phase table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseCell {
    pub alpha: f64,
    pub gamma: f64,
    pub boundary_side: BoundarySide,
    pub replicas: usize,
    pub d_median: f64,
    pub d_max: f64,
    pub divergence_fraction: f64,
    pub threshold: f64,
    pub perturbation: f64,
    pub seed: u64,
    /// Replicas whose solve failed; excluded from the statistics.
    pub failures: usize,
    pub disclaimer: &'static str,
}

/// `d(T)` of one replica, or `None` when its solve failed.
fn replica(cfg: &SweepConfig, alpha: f64, gamma: f64, stream: u64) -> Option<f64> {
    let sc = cfg.template(alpha, gamma, stream).ok()?;
    let ic2 = Field::constant(sc.grid, cfg.perturbation);
    let run = paired_solve(&sc, sc.ic.clone(), ic2).ok()?;
    match run.first.outcome {
        Outcome::Completed => run.distance.last().copied(),
        _ => None,
    }
}

/// Runs every `(α, γ)` cell; rows are ordered by α, then γ.
pub fn uniqueness_sweep(cfg: &SweepConfig) -> Result<Vec<PhaseCell>> {
    cfg.validate()?;
    let ng = cfg.gammas.len();
    let reps = cfg.replicas;
    let jobs: Vec<(usize, usize)> = (0..cfg.alphas.len() * ng).flat_map(|c| (0..reps).map(move |r| (c, r))).collect();
    let results: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(c, r)| replica(cfg, cfg.alphas[c / ng], cfg.gammas[c % ng], (c * reps + r) as u64))
        .collect();
    Ok(results
        .chunks(reps)
        .enumerate()
        .map(|(c, chunk)| {
            let (alpha, gamma) = (cfg.alphas[c / ng], cfg.gammas[c % ng]);
            let ds: Vec<f64> = chunk.iter().flatten().copied().collect();
            let failures = reps - ds.len();
            let (d_median, d_max, divergence_fraction) = if ds.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let over = ds.iter().filter(|d| **d > cfg.threshold).count();
                (median(&ds), ds.iter().copied().fold(0.0, f64::max), over as f64 / ds.len() as f64)
            };
            PhaseCell {
                alpha,
                gamma,
                boundary_side: BoundarySide::classify(alpha, gamma),
                replicas: reps,
                d_median,
                d_max,
                divergence_fraction,
                threshold: cfg.threshold,
                perturbation: cfg.perturbation,
                seed: cfg.master_seed,
                failures,
                disclaimer: SWEEP_DISCLAIMER,
            }
        })
        .collect())
}

pub const PHASE_COLUMNS: [&str; 12] = [
    "alpha",
    "gamma",
    "boundary_side",
    "replicas",
    "d_median",
    "d_max",
    "divergence_fraction",
    "threshold",
    "perturbation",
    "seed",
    "failures",
    "disclaimer",
];

pub fn write_phase_csv<W: Write>(cells: &[PhaseCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
