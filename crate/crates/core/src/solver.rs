//! Exponential-Euler integration of the mild formulation
//!
//! ```text
//! X_{k+1} = P_dt [ X_k + b(t_k, ·, X_k) dt + σ(t_k, ·, X_k) ΔW_k ]
//! ```
//!
//! on the torus, with `P_dt` applied exactly in Fourier space. Paired solves
//! advance two initial conditions on one shared noise path.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{apply_multiplier, heat_multiplier, Field, TorusGrid};
use crate::noise::{NoiseIncrement, NoiseSampler, NoiseSpec};

pub type CoefficientFn = dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync;

/// A user-supplied coefficient `(t, x, u) ↦ value`.
#[derive(Clone)]
pub struct CustomCoefficient {
    pub name: String,
    pub f: Arc<CoefficientFn>,
}

impl fmt::Debug for CustomCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomCoefficient({})", self.name)
    }
}

impl PartialEq for CustomCoefficient {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.f, &other.f)
    }
}

/// Built-in coefficient shapes, usable for both `σ` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Zero,
    /// `value`
    Constant { value: f64 },
    /// `slope·u`
    Linear {
        #[serde(default = "one")]
        slope: f64,
    },
    /// `|u|^γ`
    PowerAbs { gamma: f64 },
    /// `sgn(u)|u|^γ`
    SignedPower { gamma: f64 },
    /// `√(u⁺)`
    SqrtPos,
    #[serde(skip)]
    Custom(CustomCoefficient),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinTag {
    Zero,
    Constant,
    Linear,
    PowerAbs,
    SignedPower,
    SqrtPos,
    Custom,
}

impl Coefficient {
    pub fn custom(name: &str, f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Custom(CustomCoefficient {
            name: name.to_string(),
            f: Arc::new(f),
        })
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], u: f64) -> f64 {
        match self {
            Coefficient::Zero => 0.0,
            Coefficient::Constant { value } => *value,
            Coefficient::Linear { slope } => slope * u,
            Coefficient::PowerAbs { gamma } => u.abs().powf(*gamma),
            Coefficient::SignedPower { gamma } => u.signum() * u.abs().powf(*gamma),
            Coefficient::SqrtPos => u.max(0.0).sqrt(),
            Coefficient::Custom(c) => (c.f)(t, x, u),
        }
    }

    pub fn tag(&self) -> BuiltinTag {
        match self {
            Coefficient::Zero => BuiltinTag::Zero,
            Coefficient::Constant { .. } => BuiltinTag::Constant,
            Coefficient::Linear { .. } => BuiltinTag::Linear,
            Coefficient::PowerAbs { .. } => BuiltinTag::PowerAbs,
            Coefficient::SignedPower { .. } => BuiltinTag::SignedPower,
            Coefficient::SqrtPos => BuiltinTag::SqrtPos,
            Coefficient::Custom(_) => BuiltinTag::Custom,
        }
    }

    /// Does not depend on `(t, x)`; site coordinates need not be computed.
    fn is_autonomous(&self) -> bool {
        !matches!(self, Coefficient::Custom(_))
    }

    /// Hölder exponent in `u` implied by the shape (1 for custom).
    pub fn natural_exponent(&self) -> f64 {
        match self {
            Coefficient::PowerAbs { gamma } | Coefficient::SignedPower { gamma } => *gamma,
            Coefficient::SqrtPos => 0.5,
            _ => 1.0,
        }
    }

    /// `c` with `|f(u)| ≤ c(1 + |u|)` for `γ ≤ 1` shapes.
    fn natural_growth(&self) -> f64 {
        match self {
            Coefficient::Zero => 0.0,
            Coefficient::Constant { value } => value.abs(),
            Coefficient::Linear { slope } => slope.abs(),
            Coefficient::PowerAbs { .. } | Coefficient::SignedPower { .. } | Coefficient::SqrtPos => 1.0,
            Coefficient::Custom(_) => 1.0,
        }
    }

    /// Stable identifier used in digests.
    pub fn descriptor(&self) -> String {
        match self {
            Coefficient::Custom(c) => format!("custom:{}", c.name),
            other => serde_json::to_string(other).unwrap_or_default(),
        }
    }
}

/// `σ`, `b` and their declared regularity.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    pub sigma: Coefficient,
    pub b: Coefficient,
    /// Declared Hölder exponent `γ ∈ (0, 1]` of `σ` in `u`.
    pub gamma_meta: f64,
    /// Declared constant in `|σ(u)| + |b(u)| ≤ c(1 + |u|)`.
    pub growth_c: f64,
}

/// Outcome of a sampled coefficient check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleCheck {
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` over the samples.
    pub worst_ratio: f64,
}

impl CoefficientSpec {
    /// Regularity metadata filled from the shapes.
    pub fn new(sigma: Coefficient, b: Coefficient) -> Self {
        let gamma_meta = sigma.natural_exponent().min(1.0);
        let growth_c = (sigma.natural_growth() + b.natural_growth()).max(f64::MIN_POSITIVE);
        CoefficientSpec { sigma, b, gamma_meta, growth_c }
    }

    /// `σ = |u|^γ`, `b = 0`.
    pub fn power_abs(gamma: f64) -> Self {
        Self::new(Coefficient::PowerAbs { gamma }, Coefficient::Zero)
    }

    /// `σ = u`, `b = 0`.
    pub fn linear() -> Self {
        Self::new(Coefficient::Linear { slope: 1.0 }, Coefficient::Zero)
    }

    /// `σ = 1`, `b = 0`.
    pub fn additive() -> Self {
        Self::new(Coefficient::Constant { value: 1.0 }, Coefficient::Zero)
    }

    /// `σ = b = 0`.
    pub fn deterministic() -> Self {
        Self::new(Coefficient::Zero, Coefficient::Zero)
    }

    pub fn tag(&self) -> BuiltinTag {
        self.sigma.tag()
    }

    fn samples(count: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0ef);
        (0..count)
            .map(|k| {
                // a third of the pairs straddle or approach the origin
                let scale: f64 = match k % 3 {
                    0 => 1e-3,
                    1 => 1.0,
                    _ => 50.0,
                };
                let u = rng.random_range(-scale..scale);
                let d = rng.random_range(-1.0..1.0) * rng.random_range(0.0f64..1.0).powi(4);
                (u, u + d)
            })
            .collect()
    }

    /// `|σ(u) − σ(u')| ≤ |u − u'|^γ` on sampled pairs with `|u − u'| ≤ 1`.
    pub fn check_holder(&self, count: usize) -> SampleCheck {
        let mut check = SampleCheck { samples: count, violations: 0, worst_ratio: 0.0 };
        for (u, v) in Self::samples(count) {
            let lhs = (self.sigma.eval(0.0, &[0.0], u) - self.sigma.eval(0.0, &[0.0], v)).abs();
            let rhs = (u - v).abs().powf(self.gamma_meta);
            if lhs > rhs * (1.0 + 1e-12) + 1e-15 {
                check.violations += 1;
            }
            if rhs > 0.0 {
                check.worst_ratio = check.worst_ratio.max(lhs / rhs);
            }
        }
        check
    }

    /// `|σ(u)| + |b(u)| ≤ growth_c (1 + |u|)` on sampled points.
    pub fn check_growth(&self, count: usize) -> SampleCheck {
        let mut check = SampleCheck { samples: count, violations: 0, worst_ratio: 0.0 };
        for (u, _) in Self::samples(count) {
            let lhs = self.sigma.eval(0.0, &[0.0], u).abs() + self.b.eval(0.0, &[0.0], u).abs();
            let rhs = self.growth_c * (1.0 + u.abs());
            if lhs > rhs * (1.0 + 1e-12) {
                check.violations += 1;
            }
            check.worst_ratio = check.worst_ratio.max(lhs / rhs);
        }
        check
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_meta > 0.0 && self.gamma_meta <= 1.0) {
            return Err(Error::param("gamma", format!("need γ ∈ (0, 1], got {}", self.gamma_meta)));
        }
        if !(self.growth_c > 0.0 && self.growth_c.is_finite()) {
            return Err(Error::param("growth_c", "growth constant must be positive"));
        }
        if let Coefficient::PowerAbs { gamma } | Coefficient::SignedPower { gamma } = self.sigma {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::param("gamma", format!("σ exponent must lie in (0, 1], got {gamma}")));
            }
        }
        if self.sigma.is_autonomous() {
            let h = self.check_holder(2000);
            if h.violations > 0 {
                return Err(Error::param(
                    "sigma",
                    format!("Hölder condition with γ = {} fails on {} sampled pairs", self.gamma_meta, h.violations),
                ));
            }
        }
        if self.sigma.is_autonomous() && self.b.is_autonomous() {
            let g = self.check_growth(2000);
            if g.violations > 0 {
                return Err(Error::param(
                    "growth_c",
                    format!("linear growth bound fails on {} samples (worst ratio {})", g.violations, g.worst_ratio),
                ));
            }
        }
        Ok(())
    }

    fn descriptor(&self) -> String {
        format!(
            "sigma={};b={};gamma={};growth={}",
            self.sigma.descriptor(),
            self.b.descriptor(),
            self.gamma_meta,
            self.growth_c
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub grid: TorusGrid,
    pub noise: NoiseSpec,
    pub coeff: CoefficientSpec,
    pub t_end: f64,
    pub dt: f64,
    pub ic: Field,
    /// Fields retained at the most recent steps.
    pub history_depth: usize,
    /// Stop once the sup-norm exceeds this cap.
    pub truncation_k: Option<f64>,
    /// Keep a snapshot every this many steps (0: initial and final only).
    pub snapshot_every: usize,
    /// Each step's increment is the sum of this many finer increments, so
    /// that a run at `dt/2` with half as many sub-increments sees the same
    /// noise path.
    pub noise_substeps: u64,
}

impl SolveConfig {
    pub fn new(grid: TorusGrid, noise: NoiseSpec, coeff: CoefficientSpec, t_end: f64, dt: f64, ic: Field) -> Self {
        SolveConfig {
            grid,
            noise,
            coeff,
            t_end,
            dt,
            ic,
            history_depth: 1,
            truncation_k: None,
            snapshot_every: 0,
            noise_substeps: 1,
        }
    }

    /// Number of steps; `t_end` must be a whole multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_end / self.dt).round();
        if !(n >= 1.0) || (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::param(
                "dt",
                format!("t_end = {} is not a whole multiple of dt = {}", self.t_end, self.dt),
            ));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::param("t_end", format!("horizon must be positive, got {}", self.t_end)));
        }
        self.steps()?;
        if *self.ic.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        if self.noise_substeps == 0 {
            return Err(Error::param("noise_substeps", "must be at least 1"));
        }
        if let Some(k) = self.truncation_k {
            if !(k > 0.0) {
                return Err(Error::param("truncation_K", "cap must be positive"));
            }
        }
        self.noise.validate(self.grid.dim())?;
        self.coeff.validate()
    }

    /// Non-fatal remarks about the configuration.
    pub fn advisories(&self) -> Vec<String> {
        let h = self.grid.spacing();
        let mut out = Vec::new();
        if self.dt > h * h / 2.0 {
            out.push(format!(
                "dt = {} exceeds h²/2 = {}: the nonlinearity is sampled coarsely relative to the grid",
                self.dt,
                h * h / 2.0
            ));
        }
        out
    }

    /// SHA-256 over a canonical description of the configuration.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let desc = serde_json::json!({
            "grid": self.grid,
            "noise": self.noise,
            "coeff": self.coeff.descriptor(),
            "t_end": self.t_end,
            "dt": self.dt,
            "history_depth": self.history_depth,
            "truncation_K": self.truncation_k,
            "snapshot_every": self.snapshot_every,
            "noise_substeps": self.noise_substeps,
        });
        hasher.update(desc.to_string().as_bytes());
        for v in self.ic.values() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Fields at the most recent steps, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    depth: usize,
    entries: VecDeque<(f64, Field)>,
}

impl History {
    pub fn new(depth: usize) -> Self {
        History { depth: depth.max(1), entries: VecDeque::new() }
    }

    pub fn push(&mut self, t: f64, field: Field) {
        if self.entries.len() == self.depth {
            self.entries.pop_front();
        }
        self.entries.push_back((t, field));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &(f64, Field)> {
        self.entries.iter()
    }

    /// The stored field at the latest time `≤ t`.
    pub fn at(&self, t: f64) -> Result<&Field> {
        let oldest = self.entries.front().map(|e| e.0).unwrap_or(f64::INFINITY);
        self.entries
            .iter()
            .rev()
            .find(|(s, _)| *s <= t + 1e-12)
            .map(|(_, f)| f)
            .ok_or(Error::HistoryTooShort { requested: t, oldest })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    #[serde(skip)]
    pub field: Field,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub times: Vec<f64>,
    pub sup_norm: Vec<f64>,
    pub mean: Vec<f64>,
    /// Time at which the sup-norm first exceeded `truncation_K`.
    pub truncation_hit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
    pub stream_id: u64,
    /// First step index of the noise keys (always 0).
    pub first_step_index: u64,
    pub steps_taken: usize,
    pub increments_consumed: u64,
    pub advisories: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Truncated { time: f64 },
    BlewUp { step: usize, time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Snapshots at strictly increasing times; after a blow-up the last one
    /// is the last finite state.
    pub snapshots: Vec<Snapshot>,
    pub history: History,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
    pub outcome: Outcome,
}

impl RunResult {
    pub fn final_field(&self) -> &Field {
        &self.snapshots.last().expect("a run always holds its initial snapshot").field
    }

    pub fn final_time(&self) -> f64 {
        self.snapshots.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Turns a blow-up into an error.
    pub fn check(&self) -> Result<()> {
        match self.outcome {
            Outcome::BlewUp { step, time } => Err(Error::NonFinite { step, time }),
            _ => Ok(()),
        }
    }
}

/// Per-configuration precomputation shared by all steps.
pub struct Stepper<'a> {
    cfg: &'a SolveConfig,
    multiplier: Vec<f64>,
    coords: Option<Vec<[f64; 2]>>,
}

impl<'a> Stepper<'a> {
    pub fn new(cfg: &'a SolveConfig) -> Self {
        let needs_coords = !(cfg.coeff.sigma.is_autonomous() && cfg.coeff.b.is_autonomous());
        let coords = needs_coords.then(|| (0..cfg.grid.len()).map(|k| cfg.grid.coords(k)).collect());
        Stepper { cfg, multiplier: heat_multiplier(&cfg.grid, cfg.dt), coords }
    }

    /// One exponential-Euler step from `(t_k, x_k)`.
    pub fn step(&self, x: &Field, t: f64, step_index: usize, dw: &NoiseIncrement) -> Result<Field> {
        let cfg = self.cfg;
        if (dw.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::param("dW", format!("increment length {} differs from dt = {}", dw.dt, cfg.dt)));
        }
        if *dw.field.grid() != cfg.grid || *x.grid() != cfg.grid {
            return Err(Error::GridMismatch);
        }
        let q = cfg.grid.dim();
        let origin = [0.0; 2];
        let (sigma, b) = (&cfg.coeff.sigma, &cfg.coeff.b);
        let values: Vec<f64> = x
            .values()
            .iter()
            .zip(dw.field.values())
            .enumerate()
            .map(|(k, (&u, &w))| {
                let site = match &self.coords {
                    Some(c) => &c[k][..q],
                    None => &origin[..q],
                };
                u + b.eval(t, site, u) * cfg.dt + sigma.eval(t, site, u) * w
            })
            .collect();
        let next = apply_multiplier(&Field::from_raw(cfg.grid, values), &self.multiplier);
        if !next.is_finite() {
            return Err(Error::NonFinite { step: step_index, time: t + cfg.dt });
        }
        Ok(next)
    }
}

/// One exponential-Euler step; see [`Stepper::step`].
pub fn step(x: &Field, t: f64, step_index: usize, dw: &NoiseIncrement, cfg: &SolveConfig) -> Result<Field> {
    Stepper::new(cfg).step(x, t, step_index, dw)
}

struct Track {
    current: Field,
    snapshots: Vec<Snapshot>,
    history: History,
    diagnostics: Diagnostics,
}

impl Track {
    fn new(cfg: &SolveConfig, ic: Field) -> Self {
        let mut history = History::new(cfg.history_depth);
        history.push(0.0, ic.clone());
        let mut diagnostics = Diagnostics::default();
        diagnostics.times.push(0.0);
        diagnostics.sup_norm.push(ic.sup_norm());
        diagnostics.mean.push(ic.mean());
        Track {
            snapshots: vec![Snapshot { t: 0.0, field: ic.clone() }],
            current: ic,
            history,
            diagnostics,
        }
    }

    fn record(&mut self, t: f64, k: usize, cfg: &SolveConfig, last: bool) {
        self.history.push(t, self.current.clone());
        self.diagnostics.times.push(t);
        self.diagnostics.sup_norm.push(self.current.sup_norm());
        self.diagnostics.mean.push(self.current.mean());
        let cadence = cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0;
        if cadence || last {
            self.snapshots.push(Snapshot { t, field: self.current.clone() });
        }
    }

    fn close(&mut self, t: f64) {
        if self.snapshots.last().map(|s| s.t) != Some(t) {
            self.snapshots.push(Snapshot { t, field: self.current.clone() });
        }
    }

    fn finish(self, provenance: Provenance, outcome: Outcome) -> RunResult {
        RunResult {
            snapshots: self.snapshots,
            history: self.history,
            diagnostics: self.diagnostics,
            provenance,
            outcome,
        }
    }
}

fn increment(sampler: &NoiseSampler, cfg: &SolveConfig, k: usize) -> Result<NoiseIncrement> {
    let sub = cfg.noise_substeps;
    sampler.sample_block(cfg.dt / sub as f64, k as u64 * sub, sub)
}

/// Integrates any number of initial conditions on one shared noise path.
fn run_shared(cfg: &SolveConfig, ics: Vec<Field>) -> Result<(Vec<RunResult>, Vec<f64>)> {
    cfg.validate()?;
    for ic in &ics {
        if *ic.grid() != cfg.grid {
            return Err(Error::GridMismatch);
        }
    }
    let steps = cfg.steps()?;
    let sampler = NoiseSampler::new(cfg.grid, cfg.noise)?;
    let stepper = Stepper::new(cfg);
    let mut tracks: Vec<Track> = ics.into_iter().map(|ic| Track::new(cfg, ic)).collect();
    let mut outcome = Outcome::Completed;
    let mut taken = 0;
    let mut t = 0.0;
    for k in 0..steps {
        let dw = increment(&sampler, cfg, k)?;
        let next: Result<Vec<Field>> = tracks
            .iter()
            .map(|tr| stepper.step(&tr.current, t, k, &dw))
            .collect();
        let next = match next {
            Ok(v) => v,
            Err(Error::NonFinite { step, time }) => {
                outcome = Outcome::BlewUp { step, time };
                break;
            }
            Err(e) => return Err(e),
        };
        taken = k + 1;
        t = taken as f64 * cfg.dt;
        let last = taken == steps;
        for (tr, f) in tracks.iter_mut().zip(next) {
            tr.current = f;
            tr.record(t, taken, cfg, last);
        }
        if let Some(cap) = cfg.truncation_k {
            if tracks.iter().any(|tr| tr.current.sup_norm() > cap) {
                outcome = Outcome::Truncated { time: t };
                for tr in tracks.iter_mut() {
                    tr.diagnostics.truncation_hit = Some(t);
                }
                break;
            }
        }
    }
    let provenance = Provenance {
        config_digest: cfg.digest(),
        seed: cfg.noise.seed,
        stream_id: cfg.noise.stream_id,
        first_step_index: 0,
        steps_taken: taken,
        increments_consumed: sampler.consumed(),
        advisories: cfg.advisories(),
    };
    let mut results = Vec::new();
    for mut tr in tracks {
        tr.close(t);
        results.push(tr.finish(provenance.clone(), outcome));
    }
    let times = results[0].diagnostics.times.clone();
    Ok((results, times))
}

/// Integrates `cfg` to `t_end`, or until truncation or blow-up.
pub fn solve(cfg: &SolveConfig) -> Result<RunResult> {
    let (mut runs, _) = run_shared(cfg, vec![cfg.ic.clone()])?;
    Ok(runs.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub first: RunResult,
    pub second: RunResult,
    /// Step times, starting at 0.
    pub times: Vec<f64>,
    /// `‖X¹(t) − X²(t)‖_∞` at every step.
    pub distance: Vec<f64>,
}

/// Two solves from `ic1` and `ic2` consuming the identical increments.
pub fn paired_solve(cfg: &SolveConfig, ic1: Field, ic2: Field) -> Result<PairedRun> {
    let track_distance = |a: &RunResult, b: &RunResult| -> Vec<f64> {
        a.history_distance(b)
    };
    // distances need every step, so both tracks keep the full history
    let mut full = cfg.clone();
    full.history_depth = cfg.steps()? + 1;
    let (mut runs, times) = run_shared(&full, vec![ic1, ic2])?;
    let second = runs.pop().expect("two tracks");
    let first = runs.pop().expect("two tracks");
    let distance = track_distance(&first, &second);
    let trim = |mut r: RunResult| {
        let depth = cfg.history_depth.max(1);
        while r.history.len() > depth {
            r.history.entries.pop_front();
        }
        r.history.depth = depth;
        r
    };
    Ok(PairedRun { first: trim(first), second: trim(second), times, distance })
}

impl RunResult {
    fn history_distance(&self, other: &RunResult) -> Vec<f64> {
        self.history
            .entries()
            .zip(other.history.entries())
            .map(|((_, a), (_, b))| {
                a.values()
                    .iter()
                    .zip(b.values())
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::heat_semigroup_apply;
    use crate::noise::sample_increment;

    fn grid() -> TorusGrid {
        TorusGrid::new(1, 1.0, 64).unwrap()
    }

    fn bump(g: TorusGrid) -> Field {
        Field::from_fn(g, |x| (-((x[0] - 0.5) / 0.1).powi(2)).exp()).unwrap()
    }

    #[test]
    fn deterministic_step_is_semigroup() {
        let g = grid();
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), CoefficientSpec::deterministic(), 0.01, 0.01, bump(g));
        let dw = sample_increment(&g, &cfg.noise, 0.01, 0).unwrap();
        let next = step(&cfg.ic, 0.0, 0, &dw, &cfg).unwrap();
        assert_eq!(next, heat_semigroup_apply(&cfg.ic, 0.01).unwrap());
    }

    #[test]
    fn constant_drift_adds_linearly() {
        let g = grid();
        let coeff = CoefficientSpec::new(Coefficient::Zero, Coefficient::Constant { value: 3.0 });
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), coeff, 0.01, 0.01, bump(g));
        let dw = sample_increment(&g, &cfg.noise, 0.01, 0).unwrap();
        let next = step(&cfg.ic, 0.0, 0, &dw, &cfg).unwrap();
        let expect = heat_semigroup_apply(&cfg.ic, 0.01).unwrap().map(|v| v + 0.03);
        assert!(next.sup_distance(&expect).unwrap() < 1e-13);
    }

    #[test]
    fn linear_sigma_step_per_mode() {
        // X ≡ 1, σ(u) = u: X_1 = P_dt(1 + dW), mode by mode e^{−ξ²dt/2}(δ_0 + Ŵ)
        let g = grid();
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), CoefficientSpec::linear(), 0.02, 0.02, Field::constant(g, 1.0));
        let dw = sample_increment(&g, &cfg.noise, 0.02, 0).unwrap();
        let next = step(&cfg.ic, 0.0, 0, &dw, &cfg).unwrap();
        let n = g.points();
        for m in [0usize, 1, 5, 17] {
            let xi = g.wavenumber(m);
            let damp = (-0.5 * xi * xi * 0.02).exp();
            let coef = |f: &[f64]| -> (f64, f64) {
                f.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, v)| {
                    let ph = -2.0 * std::f64::consts::PI * (m * j) as f64 / n as f64;
                    (re + v * ph.cos(), im + v * ph.sin())
                })
            };
            let (wr, wi) = coef(dw.field.values());
            let (xr, xi_) = coef(next.values());
            let base = if m == 0 { n as f64 } else { 0.0 };
            assert!((xr - damp * (base + wr)).abs() < 1e-10);
            assert!((xi_ - damp * wi).abs() < 1e-10);
        }
    }

    #[test]
    fn increment_length_checked() {
        let g = grid();
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), CoefficientSpec::additive(), 0.02, 0.01, bump(g));
        let dw = sample_increment(&g, &cfg.noise, 0.02, 0).unwrap();
        assert!(step(&cfg.ic, 0.0, 0, &dw, &cfg).is_err());
    }

    #[test]
    fn solve_is_reproducible_and_counts_noise() {
        let g = grid();
        let mut cfg = SolveConfig::new(g, NoiseSpec::new(0.5).with_seed(3, 9), CoefficientSpec::power_abs(0.75), 0.1, 0.001, bump(g));
        cfg.snapshot_every = 10;
        let a = solve(&cfg).unwrap();
        let b = solve(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance.increments_consumed, 100);
        assert_eq!(a.snapshots.len(), 11);
        assert!(a.snapshots.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(a.outcome, Outcome::Completed);
        assert_eq!(a.provenance.seed, 3);
        assert_eq!(a.provenance.stream_id, 9);
    }

    #[test]
    fn paired_identical_ics_never_separate() {
        let g = grid();
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5).with_seed(1, 2), CoefficientSpec::power_abs(0.5), 0.05, 0.001, bump(g));
        let run = paired_solve(&cfg, cfg.ic.clone(), cfg.ic.clone()).unwrap();
        assert_eq!(run.distance.len(), 51);
        assert!(run.distance.iter().all(|&d| d == 0.0));
        assert_eq!(run.first.provenance.increments_consumed, 50);
        assert_eq!(run.first.history.len(), 1);
    }

    #[test]
    fn truncation_stops_early() {
        let g = grid();
        let mut cfg = SolveConfig::new(g, NoiseSpec::new(0.5).with_seed(4, 0), CoefficientSpec::additive(), 1.0, 0.001, Field::zeros(g));
        cfg.truncation_k = Some(0.05);
        let r = solve(&cfg).unwrap();
        match r.outcome {
            Outcome::Truncated { time } => {
                assert!(time < 1.0);
                assert_eq!(r.diagnostics.truncation_hit, Some(time));
                assert_eq!(r.final_time(), time);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blow_up_keeps_last_good_state() {
        let g = grid();
        let coeff = CoefficientSpec::new(Coefficient::Zero, Coefficient::Linear { slope: 1e100 });
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), coeff, 10.0, 1.0, Field::constant(g, 1.0));
        let r = solve(&cfg).unwrap();
        assert!(matches!(r.outcome, Outcome::BlewUp { .. }));
        assert!(r.final_field().is_finite());
        assert!(matches!(r.check(), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn holder_checks() {
        assert_eq!(CoefficientSpec::power_abs(0.75).check_holder(5000).violations, 0);
        assert_eq!(CoefficientSpec::power_abs(0.5).check_holder(5000).violations, 0);
        let mut wrong = CoefficientSpec::power_abs(0.5);
        wrong.gamma_meta = 1.0;
        assert!(wrong.check_holder(5000).violations > 0);
        assert!(wrong.validate().is_err());
        let mut slow = CoefficientSpec::linear();
        slow.growth_c = 0.5;
        assert!(slow.check_growth(1000).violations > 0);
        assert!(CoefficientSpec::new(Coefficient::SqrtPos, Coefficient::Zero).validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let g = grid();
        let base = SolveConfig::new(g, NoiseSpec::new(0.5), CoefficientSpec::additive(), 0.1, 0.03, bump(g));
        assert!(base.validate().is_err());
        let ok = SolveConfig { dt: 0.025, ..base.clone() };
        assert!(ok.validate().is_ok());
        assert!(!ok.advisories().is_empty());
        let bad_alpha = SolveConfig { noise: NoiseSpec::new(1.2), ..ok.clone() };
        assert!(bad_alpha.validate().is_err());
        assert_ne!(ok.digest(), SolveConfig { t_end: 0.2, ..ok.clone() }.digest());
        assert_eq!(ok.digest(), ok.clone().digest());
    }

    #[test]
    fn history_lookup() {
        let g = grid();
        let mut h = History::new(3);
        for k in 0..5 {
            h.push(k as f64 * 0.1, Field::constant(g, k as f64));
        }
        assert_eq!(h.len(), 3);
        assert_eq!(h.at(0.35).unwrap().values()[0], 3.0);
        assert!(matches!(h.at(0.05), Err(Error::HistoryTooShort { .. })));
    }
}
