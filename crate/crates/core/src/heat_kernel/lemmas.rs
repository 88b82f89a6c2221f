use rayon::prelude::*;
use serde_json::json;

use super::quadrature::{pair_integral_converged, PairProblem, QuadratureOptions};
use super::{
    check_axis, check_time, deriv_raw, ln_pt_r2, norm2, pt_r2, KernelLemmaReport, LemmaId,
    LemmaRow,
};
use crate::error::{Error, Result};
use crate::noise::validate_alpha;
use crate::quad::{golden_max, CompositeGauss};
use crate::stats;

fn check_dim(x: &[f64], other: &[f64]) -> Result<usize> {
    let q = x.len();
    if !(1..=2).contains(&q) || other.len() != q {
        return Err(Error::param("x", "points must share a dimension of 1 or 2"));
    }
    Ok(q)
}

fn check_ordered(t: f64, t_prime: f64) -> Result<()> {
    check_time(t)?;
    check_time(t_prime)?;
    if t > t_prime {
        return Err(Error::param("t", format!("need t ≤ t', got {t} > {t_prime}")));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Bounding box of cubes of half-width `r` around each centre.
fn hull(centres: &[(&[f64], f64)], q: usize) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (c, r) in centres {
        for a in 0..q {
            lo[a] = lo[a].min(c[a] - r);
            hi[a] = hi[a].max(c[a] + r);
        }
    }
    for a in q..2 {
        lo[a] = 0.0;
        hi[a] = 0.0;
    }
    (lo, hi)
}

fn slope_of(report: &KernelLemmaReport, key: &str) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .rows
        .iter()
        .filter_map(|r| r.params[key].as_f64().map(|x| (x, r.lhs)))
        .unzip();
    stats::log_log_fit(&xs, &ys).map(|f| f.slope)
}

// ---------------------------------------------------------------- A.1

/// Numerical maximum of `a ↦ a·exp(−a^r/u)·u^{−1/r}` over `a ≥ 0`, as
/// `(argmax, max)`.
pub fn algebra_maximum(r: f64, u: f64) -> (f64, f64) {
    let f = |a: f64| a * (-a.powf(r) / u).exp() * u.powf(-1.0 / r);
    let mut b = 1.0;
    while f(2.0 * b) > f(b) && b < 1e300 {
        b *= 2.0;
    }
    golden_max(f, 0.0, 2.0 * b, 1e-13)
}

/// Maximises `a·exp(−a^r/u)·u^{−1/r}` for `r` on a 9-point grid over
/// `[r0, r1]` and every `u`, against `(1/r)^{1/r} e^{−1/r}`.
pub fn verify_algebra_bound(r0: f64, r1: f64, u_grid: &[f64]) -> Result<KernelLemmaReport> {
    if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
        return Err(Error::param("r0", format!("need 0 < r0 ≤ r1, got ({r0}, {r1})")));
    }
    if let Some(u) = u_grid.iter().find(|u| !(**u >= 1.0 && u.is_finite())) {
        return Err(Error::param("u", format!("need u ≥ 1, got {u}")));
    }
    let rs: Vec<f64> = if r0 == r1 {
        vec![r0]
    } else {
        (0..9).map(|k| r0 + (r1 - r0) * k as f64 / 8.0).collect()
    };
    let mut rows = Vec::new();
    for &r in &rs {
        for &u in u_grid {
            let (arg, max) = algebra_maximum(r, u);
            let analytic = (1.0 / r).powf(1.0 / r) * (-1.0 / r).exp();
            rows.push(LemmaRow::new(
                json!({"r": r, "u": u, "argmax": arg, "analytic_argmax": (u / r).powf(1.0 / r)}),
                max,
                analytic,
            ));
        }
    }
    KernelLemmaReport::from_rows(LemmaId::A_1, rows)
}

// ---------------------------------------------------------------- 4.2

/// Tabulates `|p_{t,l}(x)|` against `p_{2t}(x)/√t` for every axis `l`.
pub fn verify_deriv_bound(t_grid: &[f64], x_grid: &[Vec<f64>]) -> Result<KernelLemmaReport> {
    let mut rows = Vec::new();
    for &t in t_grid {
        check_time(t)?;
        for x in x_grid {
            let q = x.len();
            if q == 0 {
                return Err(Error::param("x", "empty point"));
            }
            let r2 = norm2(x);
            for l in 1..=q {
                let lhs = deriv_raw(t, x, l).abs();
                let envelope = pt_r2(2.0 * t, r2, q) / t.sqrt();
                // the ratio in closed form stays finite where both sides underflow
                let ratio = x[l - 1].abs() / t.sqrt()
                    * 2f64.powf(q as f64 / 2.0)
                    * (-r2 / (4.0 * t)).exp();
                rows.push(LemmaRow::with_ratio(
                    json!({"t": t, "x": x, "l": l}),
                    lhs,
                    envelope,
                    ratio,
                ));
            }
        }
    }
    KernelLemmaReport::from_rows(LemmaId::L4_2, rows)
}

// ---------------------------------------------------------------- 4.3

/// Quadrature of
/// `∫∫ |(p_{t,l}(w−x) − p_{t',l}(w−x'))(p_{t,l}(z−x) − p_{t',l}(z−x'))| (|w−z|^{−α}+1)`
/// for every axis `l`, against `t^{−1−α/2}(1 ∧ (|x−x'|² + |t−t'|)/t)`.
pub fn verify_cross_integral(
    t: f64,
    t_prime: f64,
    x: &[f64],
    x_prime: &[f64],
    alpha: f64,
    opts: &QuadratureOptions,
) -> Result<KernelLemmaReport> {
    check_ordered(t, t_prime)?;
    let q = check_dim(x, x_prime)?;
    validate_alpha(alpha, q)?;
    let d = dist(x, x_prime);
    let envelope = t.powf(-1.0 - alpha / 2.0) * (1f64).min((d * d + (t - t_prime).abs()) / t);
    let half = opts.truncation_sds * t_prime.sqrt();
    let (lo, hi) = hull(&[(x, half), (x_prime, half)], q);
    let mut rows = Vec::new();
    for l in 1..=q {
        let diff = |w: &[f64]| {
            let a: Vec<f64> = w.iter().zip(x).map(|(w, c)| w - c).collect();
            let b: Vec<f64> = w.iter().zip(x_prime).map(|(w, c)| w - c).collect();
            (deriv_raw(t, &a, l) - deriv_raw(t_prime, &b, l)).abs()
        };
        let problem = PairProblem {
            dim: q,
            lo,
            hi,
            h: t.sqrt() / opts.cells_per_sd,
            alpha,
            f: &diff,
            g: &diff,
            breakpoints: if q == 1 { vec![x[0], x_prime[0]] } else { vec![] },
        };
        let val = pair_integral_converged(&problem, opts)?;
        rows.push(LemmaRow::new(
            json!({
                "t": t, "t_prime": t_prime, "x": x, "x_prime": x_prime, "alpha": alpha, "l": l,
                "offset": d, "singular": val.singular, "constant": val.constant,
            }),
            val.total(),
            envelope,
        ));
    }
    KernelLemmaReport::from_rows(LemmaId::L4_3, rows)
}

/// One-dimensional sweep over `t = t'` with `x' − x` fixed at `offset`;
/// the slope is the log-log exponent of the left-hand side in `t`.
pub fn cross_integral_time_sweep(
    ts: &[f64],
    offset: f64,
    alpha: f64,
    opts: &QuadratureOptions,
) -> Result<KernelLemmaReport> {
    let reports = ts
        .par_iter()
        .map(|&t| verify_cross_integral(t, t, &[0.0], &[offset], alpha, opts))
        .collect::<Result<Vec<_>>>()?;
    let merged = KernelLemmaReport::merge(reports)?;
    let slope = slope_of(&merged, "t");
    Ok(merged.with_slope(slope))
}

/// One-dimensional sweep over the offset `|x − x'|` at `t = t'`; the slope
/// is the log-log exponent of the left-hand side in the offset.
pub fn cross_integral_offset_sweep(
    t: f64,
    offsets: &[f64],
    alpha: f64,
    opts: &QuadratureOptions,
) -> Result<KernelLemmaReport> {
    let reports = offsets
        .par_iter()
        .map(|&v| verify_cross_integral(t, t, &[0.0], &[v], alpha, opts))
        .collect::<Result<Vec<_>>>()?;
    let merged = KernelLemmaReport::merge(reports)?;
    let slope = slope_of(&merged, "offset");
    Ok(merged.with_slope(slope))
}

// ---------------------------------------------------------------- 4.4

/// Exponents `(r1, r2, r3)` of the weighted integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightExponents {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

/// Quadrature of
/// `∫∫ p_t(x−w) p_{t'}(y−z) |w|^{r1} |z|^{r2} e^{r3(|w|+|z|)} (|w−z|^{−α}+1)`.
///
/// Without `centres` (`x = y = 0`) the envelope is
/// `e^{2r3²t'} t^{r1/2} t'^{r2/2} (t^{−α/2}+1)`; with centres it is
/// `e^{2r3²t'} (t^{r1/2}+1)(t'^{r2/2}+1)(t^{−α/2}+1)` and the row records
/// `K = max |coordinate|`.
pub fn verify_weighted_integral(
    t: f64,
    t_prime: f64,
    r: WeightExponents,
    alpha: f64,
    q: usize,
    centres: Option<(&[f64], &[f64])>,
    opts: &QuadratureOptions,
) -> Result<KernelLemmaReport> {
    check_ordered(t, t_prime)?;
    let zero = [0.0; 2];
    let (x, y) = centres.unwrap_or((&zero[..q.min(2)], &zero[..q.min(2)]));
    if check_dim(x, y)? != q {
        return Err(Error::param("x", "centres must have dimension q"));
    }
    validate_alpha(alpha, q)?;
    for (name, v) in [("r1", r.r1), ("r2", r.r2), ("r3", r.r3)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("exponent must be non-negative, got {v}")));
        }
    }
    let tilt = |s: f64, rp: f64| opts.truncation_sds * s.sqrt() + 2.0 * r.r3 * s + 2.0 * (rp * s).sqrt();
    let (lo, hi) = hull(&[(x, tilt(t, r.r1)), (y, tilt(t_prime, r.r2))], q);
    let f = |w: &[f64]| {
        let d: Vec<f64> = w.iter().zip(x).map(|(w, c)| w - c).collect();
        let n = norm2(w).sqrt();
        pt_r2(t, norm2(&d), q) * n.powf(r.r1) * (r.r3 * n).exp()
    };
    let g = |z: &[f64]| {
        let d: Vec<f64> = z.iter().zip(y).map(|(z, c)| z - c).collect();
        let n = norm2(z).sqrt();
        pt_r2(t_prime, norm2(&d), q) * n.powf(r.r2) * (r.r3 * n).exp()
    };
    let problem = PairProblem {
        dim: q,
        lo,
        hi,
        h: t.sqrt() / opts.cells_per_sd,
        alpha,
        f: &f,
        g: &g,
        breakpoints: vec![0.0],
    };
    let val = pair_integral_converged(&problem, opts)?;
    let growth = (2.0 * r.r3 * r.r3 * t_prime).exp() * (t.powf(-alpha / 2.0) + 1.0);
    let (envelope, k) = match centres {
        None => (growth * t.powf(r.r1 / 2.0) * t_prime.powf(r.r2 / 2.0), None),
        Some(_) => {
            let k = x.iter().chain(y).fold(0.0f64, |m, v| m.max(v.abs()));
            (
                growth * (t.powf(r.r1 / 2.0) + 1.0) * (t_prime.powf(r.r2 / 2.0) + 1.0),
                Some(k),
            )
        }
    };
    let row = LemmaRow::new(
        json!({
            "t": t, "t_prime": t_prime, "r1": r.r1, "r2": r.r2, "r3": r.r3, "alpha": alpha,
            "x": x, "y": y, "K": k, "singular": val.singular, "constant": val.constant,
        }),
        val.total(),
        envelope,
    );
    KernelLemmaReport::from_rows(LemmaId::L4_4, vec![row])
}

// ---------------------------------------------------------------- 4.5

/// Parameters of the restricted integral.
#[derive(Debug, Clone, PartialEq)]
pub struct OutsideTailParams {
    pub s: f64,
    pub t: f64,
    pub t_prime: f64,
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub eta0: f64,
    pub eta1: f64,
    pub p: f64,
    pub r: f64,
    pub alpha: f64,
}

/// Quadrature of the integral of
/// `|w−x|^p |z−x|^p |D(w) D(z)| e^{r|w−x| + r|z−x|} (|w−z|^{−α}+1)`
/// restricted to `|w − x| > (t'−s)^{1/2−η0} ∨ 2|x−x'|`, where
/// `D(w) = p_{t−s,l}(w−x) − p_{t'−s,l}(w−x')`. The envelope is
/// `(t−s)^{−1−α/2} exp(−η1 (t'−s)^{−2η0}/256) [1 ∧ (|x−x'|²+|t−t'|)/(t−s)]^{1−η1/2}`.
pub fn verify_outside_tail(
    params: &OutsideTailParams,
    opts: &QuadratureOptions,
) -> Result<KernelLemmaReport> {
    let OutsideTailParams { s, t, t_prime, eta0, eta1, p, r, alpha, .. } = *params;
    let (x, x_prime) = (&params.x[..], &params.x_prime[..]);
    if !(s >= 0.0 && s < t) {
        return Err(Error::param("s", format!("need 0 ≤ s < t, got s = {s}, t = {t}")));
    }
    check_ordered(t, t_prime)?;
    let q = check_dim(x, x_prime)?;
    validate_alpha(alpha, q)?;
    for (name, v) in [("eta0", eta0), ("eta1", eta1)] {
        if !(v > 0.0 && v < 0.5) {
            return Err(Error::param(name, format!("must lie in (0, 1/2), got {v}")));
        }
    }
    for (name, v) in [("p", p), ("r", r)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be non-negative, got {v}")));
        }
    }
    let (tau, tau_p) = (t - s, t_prime - s);
    let d = dist(x, x_prime);
    let threshold = tau_p.powf(0.5 - eta0).max(2.0 * d);
    let half = opts.truncation_sds * tau_p.sqrt() + 2.0 * r * tau_p + 2.0 * (p * tau_p).sqrt();
    let (lo, hi) = hull(&[(x, half), (x_prime, half)], q);
    let envelope = tau.powf(-1.0 - alpha / 2.0)
        * (-eta1 * tau_p.powf(-2.0 * eta0) / 256.0).exp()
        * (1f64).min((d * d + (t - t_prime).abs()) / tau).powf(1.0 - eta1 / 2.0);
    let mut rows = Vec::new();
    for l in 1..=q {
        let weighted = |w: &[f64]| {
            let a: Vec<f64> = w.iter().zip(x).map(|(w, c)| w - c).collect();
            let b: Vec<f64> = w.iter().zip(x_prime).map(|(w, c)| w - c).collect();
            let ra = norm2(&a).sqrt();
            let diff = deriv_raw(tau, &a, l) - deriv_raw(tau_p, &b, l);
            (ra.powf(p) * (r * ra).exp() * diff.abs(), ra)
        };
        let f = |w: &[f64]| {
            let (v, ra) = weighted(w);
            if ra > threshold { v } else { 0.0 }
        };
        let g = |z: &[f64]| weighted(z).0;
        let breakpoints = if q == 1 {
            vec![x[0] - threshold, x[0], x[0] + threshold, x_prime[0]]
        } else {
            vec![]
        };
        let problem = PairProblem {
            dim: q,
            lo,
            hi,
            h: tau.sqrt() / opts.cells_per_sd,
            alpha,
            f: &f,
            g: &g,
            breakpoints,
        };
        let val = pair_integral_converged(&problem, opts)?;
        rows.push(LemmaRow::new(
            json!({
                "s": s, "t": t, "t_prime": t_prime, "x": x, "x_prime": x_prime,
                "eta0": eta0, "eta1": eta1, "p": p, "r": r, "alpha": alpha, "l": l,
                "threshold": threshold, "X": tau_p.powf(-2.0 * eta0),
            }),
            val.total(),
            envelope,
        ));
    }
    KernelLemmaReport::from_rows(LemmaId::L4_5, rows)
}

/// One-dimensional sweep with `s = 0`, `t = τ`, `t' = t_ratio·τ`, `x = x' = 0`,
/// `p = r = 0`. The slope is that of `ln(lhs · τ^{1+α/2})` against
/// `X = t'^{−2η0}`; a negative value means the left-hand side vanishes
/// faster than any power of `τ`.
pub fn outside_tail_sweep(
    taus: &[f64],
    t_ratio: f64,
    eta0: f64,
    eta1: f64,
    alpha: f64,
    opts: &QuadratureOptions,
) -> Result<KernelLemmaReport> {
    if !(t_ratio > 1.0) {
        return Err(Error::param("t_ratio", "need t' > t so that the difference is nonzero"));
    }
    let reports = taus
        .par_iter()
        .map(|&tau| {
            verify_outside_tail(
                &OutsideTailParams {
                    s: 0.0,
                    t: tau,
                    t_prime: t_ratio * tau,
                    x: vec![0.0],
                    x_prime: vec![0.0],
                    eta0,
                    eta1,
                    p: 0.0,
                    r: 0.0,
                    alpha,
                },
                opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = KernelLemmaReport::merge(reports)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = merged
        .rows
        .iter()
        .filter(|r| r.lhs > 0.0)
        .map(|r| {
            let tau = r.params["t"].as_f64().unwrap_or(f64::NAN);
            let big_x = r.params["X"].as_f64().unwrap_or(f64::NAN);
            (big_x, (r.lhs * tau.powf(1.0 + alpha / 2.0)).ln())
        })
        .unzip();
    let slope = stats::linear_fit(&xs, &ys).map(|f| f.slope);
    Ok(merged.with_slope(slope))
}

// ---------------------------------------------------------------- A.2, A.3

/// `|p_{t,l}(w+v) − p_{t,l}(w)|` against
/// `t^{−1} Σ_i ∫_0^{|v_i|} p_{2t}(w + v̂_{i−1} + r_i sgn(v_i) e_i) dr_i`.
pub fn verify_spatial_difference(t: f64, w: &[f64], v: &[f64], l: usize) -> Result<KernelLemmaReport> {
    check_time(t)?;
    let q = check_dim(w, v)?;
    check_axis(l, q)?;
    let shifted: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + b).collect();
    let lhs = (deriv_raw(t, &shifted, l) - deriv_raw(t, w, l)).abs();
    let g = CompositeGauss::new(8);
    let mut corner = w.to_vec();
    let mut path = 0.0;
    for i in 0..q {
        let len = v[i].abs();
        let sign = v[i].signum();
        let panels = (8.0 + 4.0 * len / t.sqrt()).min(4096.0) as usize;
        let base = corner.clone();
        path += g.integrate(
            |r| {
                let mut p = base.clone();
                p[i] += sign * r;
                pt_r2(2.0 * t, norm2(&p), q)
            },
            0.0,
            len,
            panels,
        );
        corner[i] += v[i];
    }
    let row = LemmaRow::new(json!({"t": t, "w": w, "v": v, "l": l}), lhs, path / t);
    KernelLemmaReport::from_rows(LemmaId::A_2a, vec![row])
}

/// `|p_{t,l}(w) − p_{t',l}(w)|` against
/// `|t−t'|^{1/2} t^{−1/2} (t^{−1/2} p_{2t}(w) + t'^{−1/2} p_{4t'}(w))`.
pub fn verify_temporal_difference(t: f64, t_prime: f64, w: &[f64], l: usize) -> Result<KernelLemmaReport> {
    check_ordered(t, t_prime)?;
    let q = check_dim(w, w)?;
    check_axis(l, q)?;
    let lhs = (deriv_raw(t, w, l) - deriv_raw(t_prime, w, l)).abs();
    let r2 = norm2(w);
    let envelope = (t_prime - t).sqrt()
        / t.sqrt()
        * (pt_r2(2.0 * t, r2, q) / t.sqrt() + pt_r2(4.0 * t_prime, r2, q) / t_prime.sqrt());
    let row = LemmaRow::new(json!({"t": t, "t_prime": t_prime, "w": w, "l": l}), lhs, envelope);
    KernelLemmaReport::from_rows(LemmaId::A_2b, vec![row])
}

/// On `A = {|ỹ| > t'^{1/2−η0} ∨ 2|y−ỹ|}`, `|p_{t,l}(y)|` against
/// (a) `exp(−t^{−2η0}/64) p_{4t}(y)` and (b) `2^q exp(−t^{−2η0}/64) p_{16t}(ỹ)`.
/// Ratios are formed in the log domain.
pub fn verify_tail_indicator(
    t: f64,
    t_prime: f64,
    y: &[f64],
    y_tilde: &[f64],
    eta0: f64,
    l: usize,
) -> Result<KernelLemmaReport> {
    check_ordered(t, t_prime)?;
    let q = check_dim(y, y_tilde)?;
    check_axis(l, q)?;
    if !(eta0 > 0.0 && eta0 < 0.5) {
        return Err(Error::param("eta0", format!("must lie in (0, 1/2), got {eta0}")));
    }
    let on_a = norm2(y_tilde).sqrt() > t_prime.powf(0.5 - eta0).max(2.0 * dist(y, y_tilde));
    let ln_lhs = if on_a && y[l - 1] != 0.0 {
        (y[l - 1].abs() / t).ln() + ln_pt_r2(t, norm2(y), q)
    } else {
        f64::NEG_INFINITY
    };
    let damp = -t.powf(-2.0 * eta0) / 64.0;
    let envelopes = [
        ("a", damp + ln_pt_r2(4.0 * t, norm2(y), q)),
        ("b", q as f64 * 2f64.ln() + damp + ln_pt_r2(16.0 * t, norm2(y_tilde), q)),
    ];
    let rows = envelopes
        .into_iter()
        .map(|(part, ln_env)| {
            LemmaRow::with_ratio(
                json!({"t": t, "t_prime": t_prime, "y": y, "y_tilde": y_tilde, "eta0": eta0, "l": l, "part": part}),
                ln_lhs.exp(),
                ln_env.exp(),
                (ln_lhs - ln_env).exp(),
            )
        })
        .collect();
    KernelLemmaReport::from_rows(LemmaId::A_3, rows)
}

/// Part (a) of [`verify_tail_indicator`] over a one-dimensional scan with
/// `ỹ = y`.
pub fn tail_indicator_scan(t: f64, t_prime: f64, eta0: f64, ys: &[f64]) -> Result<KernelLemmaReport> {
    let mut rows = Vec::new();
    for &y in ys {
        let rep = verify_tail_indicator(t, t_prime, &[y], &[y], eta0, 1)?;
        rows.push(rep.rows[0].clone());
    }
    KernelLemmaReport::from_rows(LemmaId::A_3, rows)
}

/// The three pointwise checks at one parameter point: spatial difference
/// `(w, w+v)`, temporal difference `(t, t')` at `w`, and the tail
/// indicator with `y = w + v`, `ỹ = w`.
pub fn verify_difference_pointwise(
    t: f64,
    t_prime: f64,
    w: &[f64],
    v: &[f64],
    l: usize,
    eta0: f64,
) -> Result<Vec<KernelLemmaReport>> {
    let y: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + b).collect();
    Ok(vec![
        verify_spatial_difference(t, w, v, l)?,
        verify_temporal_difference(t, t_prime, w, l)?,
        verify_tail_indicator(t, t_prime, &y, w, eta0, l)?,
    ])
}
