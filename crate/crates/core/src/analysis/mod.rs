//! Measurements on the difference `u = X¹ − X²` of two solutions: the
//! splitting `u = u_{1,δ} + u_{2,δ}`, minimiser selection, gradient bins,
//! the `I^n` monitor, Hölder exponents, and the `(α, γ)` sweep.
//!
//! A time series is a slice of `(t, field)` pairs in increasing time.

mod bins;
mod bump;
mod sweep;

pub use bins::*;
pub use bump::*;
pub use sweep::*;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{heat_semigroup_apply, spectral_gradient, Field};
use crate::solver::History;
use crate::stats::linear_fit;

/// Pointwise `a − b` of two histories recorded at the same times.
pub fn difference_series(a: &History, b: &History) -> Result<Vec<(f64, Field)>> {
    if a.len() != b.len() {
        return Err(Error::param("history", "histories hold different numbers of entries"));
    }
    a.entries()
        .zip(b.entries())
        .map(|((s, x), (t, y))| {
            if (s - t).abs() > 1e-12 * s.abs().max(1.0) {
                return Err(Error::param("history", format!("times {s} and {t} do not match")));
            }
            Ok((*s, x.sub(y)?))
        })
        .collect()
}

/// A stored entry chosen for a requested time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snap {
    pub index: usize,
    pub requested: f64,
    pub time: f64,
}

impl Snap {
    pub fn distance(&self) -> f64 {
        (self.time - self.requested).abs()
    }
}

/// The stored entry nearest to `time`. Requests more than half a typical
/// spacing outside the stored range are errors.
pub fn nearest_snapshot(series: &[(f64, Field)], time: f64) -> Result<Snap> {
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return Err(Error::MissingSnapshots("no snapshots stored".into()));
    };
    let spacing = if series.len() > 1 { (last.0 - first.0) / (series.len() - 1) as f64 } else { 0.0 };
    let slack = 0.5 * spacing + 1e-12 * time.abs().max(1.0);
    if time < first.0 - slack {
        return Err(Error::HistoryTooShort { requested: time, oldest: first.0 });
    }
    if time > last.0 + slack {
        return Err(Error::MissingSnapshots(format!("nothing stored after t = {} (requested {time})", last.0)));
    }
    let index = series
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 .0 - time).abs().total_cmp(&(b.1 .0 - time).abs()))
        .map(|(k, _)| k)
        .expect("series is non-empty");
    Ok(Snap { index, requested: time, time: series[index].0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub delta: f64,
    /// Entry used for `u(t)`.
    pub now: Snap,
    /// Entry used for `u((t−δ)⁺)`.
    pub lookback: Snap,
    pub u: Field,
    /// `P_δ u((t−δ)⁺)`.
    pub u1: Field,
    /// `u(t) − u1`.
    pub u2: Field,
    /// `∇u1`, one field per axis.
    pub grad_u1: Vec<Field>,
}

/// `u_{1,δ}(t) = P_δ u((t−δ)⁺)` and `u_{2,δ}(t) = u(t) − u_{1,δ}(t)`.
pub fn split_u(series: &[(f64, Field)], t: f64, delta: f64) -> Result<SplitResult> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("lookback must be nonnegative, got {delta}")));
    }
    let now = nearest_snapshot(series, t)?;
    let u = series[now.index].1.clone();
    let (lookback, u1) = if delta == 0.0 {
        (now, u.clone())
    } else {
        let back = nearest_snapshot(series, (t - delta).max(0.0))?;
        (back, heat_semigroup_apply(&series[back.index].1, delta)?)
    };
    let u2 = u.sub(&u1)?;
    let grad_u1 = spectral_gradient(&u1);
    Ok(SplitResult { delta, now, lookback, u, u1, u2, grad_u1 })
}

/// Among the sites within torus distance `radius` of site `x`, one that
/// minimises `|u|`; ties go to the smallest first, then second, index.
pub fn xhat_select(u: &Field, x: usize, radius: f64) -> usize {
    let grid = u.grid();
    let h = grid.spacing();
    if radius < h {
        return x;
    }
    let n = grid.points() as i64;
    let q = grid.dim();
    let reach = ((radius / h).floor() as i64).min(n / 2);
    let c = grid.site_index(x);
    let lim = radius * (1.0 + 1e-12);
    let mut best: Option<(f64, [usize; 2], usize)> = None;
    let span: Vec<i64> = (-reach..=reach).collect();
    let second: &[i64] = if q == 1 { &[0] } else { &span };
    for &i in &span {
        for &j in second {
            let d = ((i * i + j * j) as f64).sqrt() * h;
            if d > lim {
                continue;
            }
            let idx = [
                (c[0] as i64 + i).rem_euclid(n) as usize,
                if q == 1 { 0 } else { (c[1] as i64 + j).rem_euclid(n) as usize },
            ];
            let flat = grid.flat_index(idx);
            let v = u.values()[flat].abs();
            let better = match &best {
                None => true,
                Some((bv, bidx, _)) => v < *bv || (v == *bv && idx < *bidx),
            };
            if better {
                best = Some((v, idx, flat));
            }
        }
    }
    best.map(|b| b.2).unwrap_or(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderEstimate {
    /// Estimated exponent `ζ`, half the log-log slope of `S₂`.
    pub zeta: f64,
    pub std_err: f64,
    pub lags: Vec<usize>,
    /// `S₂` at each lag.
    pub structure: Vec<f64>,
}

/// `S₂(r)`: mean of `|f(x + r e_l) − f(x)|²` over sites and axes, with the
/// lag `r` in sites.
pub fn structure_function(f: &Field, lag: usize) -> f64 {
    let grid = f.grid();
    let n = grid.points();
    let v = f.values();
    let mut total = 0.0;
    for axis in 0..grid.dim() {
        for flat in 0..grid.len() {
            let mut idx = grid.site_index(flat);
            idx[axis] = (idx[axis] + lag) % n;
            let d = v[grid.flat_index(idx)] - v[flat];
            total += d * d;
        }
    }
    total / (grid.len() * grid.dim()) as f64
}

/// Fits `S₂(r) ∝ r^{2ζ}` over `lags` (in sites, within `[2, N/8]`).
pub fn holder_exponent(f: &Field, lags: &[usize]) -> Result<HolderEstimate> {
    let n = f.grid().points();
    if lags.len() < 2 {
        return Err(Error::NoScalingRange("at least two lags are needed".into()));
    }
    if let Some(bad) = lags.iter().find(|&&l| l < 2 || l > n / 8) {
        return Err(Error::param("lags", format!("lag {bad} lies outside [2, N/8] = [2, {}]", n / 8)));
    }
    let structure: Vec<f64> = lags.iter().map(|&l| structure_function(f, l)).collect();
    if structure.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NoScalingRange("field has zero increments at some lag".into()));
    }
    let lx: Vec<f64> = lags.iter().map(|&l| (l as f64).ln()).collect();
    let ly: Vec<f64> = structure.iter().map(|s| s.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| Error::NoScalingRange("degenerate lags".into()))?;
    Ok(HolderEstimate {
        zeta: fit.slope / 2.0,
        std_err: fit.slope_std_err / 2.0,
        lags: lags.to_vec(),
        structure,
    })
}

/// Lags `2, 3, 4, 6, 8, …` (roughly geometric) up to `N/8`.
pub fn default_lags(points: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut l = 2.0f64;
    while (l.round() as usize) <= points / 8 {
        let v = l.round() as usize;
        if out.last() != Some(&v) {
            out.push(v);
        }
        l *= 2f64.sqrt();
    }
    out
}
