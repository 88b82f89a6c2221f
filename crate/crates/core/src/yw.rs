//! Scalar constructions of the Yamada–Watanabe argument: the scales `a_n`,
//! `m_n`, the mollifiers `ψ_n`, `φ_n`, the bootstrap sequence `γ_m`, the
//! `ε`/`β`/`λ` grids, and the length scales `l_n`, `l̄_n`, `n_M`, `n_0`.
//!
//! Scales are handled as logarithms wherever they may underflow: `a_35` is
//! already `e^{−630}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, CompositeGauss};

/// `ln a_n = −n(n+1)/2`.
pub fn ln_a(n: u32) -> f64 {
    let n = n as f64;
    -n * (n + 1.0) / 2.0
}

/// `a_n = exp(−n(n+1)/2)`; underflows to zero for `n ≥ 38`.
pub fn a_seq(n: u32) -> f64 {
    ln_a(n).exp()
}

/// `ln m_n = (n−1)n/4`.
pub fn ln_m(n: u32) -> f64 {
    let n = n as f64;
    (n - 1.0) * n / 4.0
}

/// `m_n = a_{n−1}^{−1/2} = exp((n−1)n/4)`, for `n ≥ 1`.
pub fn m_seq(n: u32) -> f64 {
    ln_m(n).exp()
}

// ---------------------------------------------------------------- mollifiers

/// Width of each smooth transition of the bump, in the log variable.
const TRANSITION: f64 = 0.25;

fn smooth_step(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z >= 1.0 {
        1.0
    } else {
        let f = |u: f64| (-1.0 / u).exp();
        f(z) / (f(z) + f(1.0 - z))
    }
}

fn bump_raw(s: f64) -> f64 {
    smooth_step(s / TRANSITION) * smooth_step((1.0 - s) / TRANSITION)
}

/// `ψ_n(x) = B(s)/(n x)` with `s = (ln x − ln a_n)/n ∈ (0, 1)`, where `B` is
/// a C^∞ plateau bump of unit mass on `(0, 1)`. Since
/// `ln a_{n−1} − ln a_n = n`, `dx = n x ds`, so `∫ψ_n = ∫B = 1` and
/// `ψ_n(x)·n·x = B(s) ≤ 4/3`.
///
/// `φ_n(x) = ∫_0^{|x|} Ψ_n` with `Ψ_n(y) = ∫_0^y ψ_n`; both antiderivatives
/// are tabulated on `quad_resolution` panels of the log variable.
#[derive(Debug, Clone)]
pub struct MollifierPair {
    n: u32,
    quad_resolution: usize,
    a_n: f64,
    a_prev: f64,
    norm: f64,
    /// `B` antiderivative at panel edges.
    cum_b: Vec<f64>,
    /// `φ_n(a_n e^{n s})` at panel edges.
    cum_phi: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Shape metadata recorded alongside outputs that use the mollifier.
pub const MOLLIFIER_SHAPE: &str =
    "psi_n(x) = B((ln x - ln a_n)/n)/(n x); B = plateau bump, smooth steps exp(-1/z)/(exp(-1/z)+exp(-1/(1-z))) of width 0.25, unit mass";

pub fn make_mollifier(n: u32, quad_resolution: usize) -> Result<MollifierPair> {
    if n == 0 {
        return Err(Error::param("n", "mollifier index must be ≥ 1"));
    }
    if quad_resolution < 16 {
        return Err(Error::param("quad_resolution", "need at least 16 panels"));
    }
    let a_n = a_seq(n);
    if a_n < f64::MIN_POSITIVE {
        return Err(Error::Unrepresentable {
            n,
            reason: format!("a_n = exp({}) underflows", ln_a(n)),
        });
    }
    let (nodes, weights) = gauss_legendre(8);
    let mut pair = MollifierPair {
        n,
        quad_resolution,
        a_n,
        a_prev: a_seq(n - 1),
        norm: 1.0,
        cum_b: Vec::new(),
        cum_phi: Vec::new(),
        nodes,
        weights,
    };
    let q = quad_resolution;
    let width = 1.0 / q as f64;
    let mut cum_b = vec![0.0; q + 1];
    for k in 0..q {
        let a = k as f64 * width;
        cum_b[k + 1] = cum_b[k] + pair.gauss(a, a + width, bump_raw);
    }
    let mass = cum_b[q];
    // 2/(n x) integrates to 2 over the support, so a unit-mass profile under
    // the cap exists; this bump needs a scale factor of 1/mass ≤ 2.
    assert!(mass > 0.5, "bump mass {mass} too small for the 2/(nx) cap");
    pair.norm = 1.0 / mass;
    pair.cum_b = cum_b.iter().map(|v| v / mass).collect();
    pair.cum_b[q] = 1.0;

    let nf = n as f64;
    let mut cum_phi = vec![0.0; q + 1];
    for k in 0..q {
        let a = k as f64 * width;
        let inc = pair.gauss(a, a + width, |s| pair.big_psi_s(s) * nf * a_n * (nf * s).exp());
        cum_phi[k + 1] = cum_phi[k] + inc;
    }
    pair.cum_phi = cum_phi;
    Ok(pair)
}

impl MollifierPair {
    fn gauss(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    fn panel(&self, s: f64) -> (usize, f64) {
        let q = self.quad_resolution;
        let k = ((s * q as f64).floor() as usize).min(q - 1);
        (k, k as f64 / q as f64)
    }

    fn bump(&self, s: f64) -> f64 {
        self.norm * bump_raw(s)
    }

    /// `Ψ_n` as a function of the log variable.
    fn big_psi_s(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let (k, left) = self.panel(s);
        self.cum_b[k] + self.gauss(left, s, |u| self.bump(u))
    }

    fn log_var(&self, x: f64) -> f64 {
        (x.ln() - self.a_n.ln()) / self.n as f64
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn quad_resolution(&self) -> usize {
        self.quad_resolution
    }

    /// Support `(a_n, a_{n−1})`.
    pub fn support(&self) -> (f64, f64) {
        (self.a_n, self.a_prev)
    }

    pub fn psi(&self, x: f64) -> f64 {
        if x <= self.a_n || x >= self.a_prev {
            return 0.0;
        }
        self.bump(self.log_var(x)) / (self.n as f64 * x)
    }

    /// `Ψ_n(x) = ∫_0^x ψ_n`.
    pub fn big_psi(&self, x: f64) -> f64 {
        if x <= self.a_n {
            0.0
        } else if x >= self.a_prev {
            1.0
        } else {
            self.big_psi_s(self.log_var(x))
        }
    }

    /// `κ_n = ∫_0^{a_{n−1}} (1 − Ψ_n)`, so that `φ_n(x) = |x| − κ_n` beyond the support.
    pub fn kappa(&self) -> f64 {
        self.a_prev - self.cum_phi[self.quad_resolution]
    }

    pub fn phi(&self, x: f64) -> f64 {
        let y = x.abs();
        if y <= self.a_n {
            0.0
        } else if y >= self.a_prev {
            y - self.kappa()
        } else {
            let s = self.log_var(y);
            let (k, left) = self.panel(s);
            let nf = self.n as f64;
            self.cum_phi[k]
                + self.gauss(left, s, |u| self.big_psi_s(u) * nf * self.a_n * (nf * u).exp())
        }
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        x.signum() * self.big_psi(x.abs())
    }

    pub fn phi_second(&self, x: f64) -> f64 {
        self.psi(x.abs())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MollifierReport {
    pub n: u32,
    pub quad_resolution: usize,
    /// `∫ψ_n` by direct quadrature in `x`.
    pub psi_integral: f64,
    pub max_psi_nx: f64,
    pub max_abs_phi_prime: f64,
    pub sup_gap: f64,
    pub kappa: f64,
    pub a_prev: f64,
    pub max_phi_second_nx: f64,
    pub min_psi: f64,
    pub violations: Vec<String>,
}

impl MollifierReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluation grid: log-spaced across the support and linear from 0.
fn dense_grid(pair: &MollifierPair) -> Vec<f64> {
    let (lo, hi) = pair.support();
    let k = 4000;
    let mut xs: Vec<f64> = (0..=k)
        .map(|i| {
            let u = i as f64 / k as f64;
            (lo.ln() - 0.5 + u * (hi.ln() - lo.ln() + 1.0)).exp()
        })
        .collect();
    xs.extend((0..=k).map(|i| 2.0 * hi * i as f64 / k as f64));
    xs
}

/// Checks unit mass, `ψ_n ≤ 2/(nx)`, `|φ_n'| ≤ 1`, `||x| − φ_n(x)| ≤ a_{n−1}`,
/// `|φ_n''|·n·x ≤ 2`, evenness and `φ_n(0) = 0`. Failures are listed in
/// the report.
pub fn phi_props_check(pair: &MollifierPair) -> MollifierReport {
    let n = pair.n as f64;
    let (lo, hi) = pair.support();
    let g = CompositeGauss::new(16);
    // ψ_n(e^u) e^u du, panels uniform in u = ln x
    let psi_integral = g.integrate(|u| pair.psi(u.exp()) * u.exp(), lo.ln(), hi.ln(), 512);
    let xs = dense_grid(pair);
    let mut r = MollifierReport {
        n: pair.n,
        quad_resolution: pair.quad_resolution,
        psi_integral,
        max_psi_nx: 0.0,
        max_abs_phi_prime: 0.0,
        sup_gap: 0.0,
        kappa: pair.kappa(),
        a_prev: hi,
        max_phi_second_nx: 0.0,
        min_psi: f64::INFINITY,
        violations: Vec::new(),
    };
    let mut even = true;
    for &x in &xs {
        let p = pair.psi(x);
        r.min_psi = r.min_psi.min(p);
        if x > 0.0 {
            r.max_psi_nx = r.max_psi_nx.max(p * n * x);
            r.max_phi_second_nx = r.max_phi_second_nx.max(pair.phi_second(x).abs() * n * x);
        }
        r.max_abs_phi_prime = r.max_abs_phi_prime.max(pair.phi_prime(x).abs());
        r.sup_gap = r.sup_gap.max((x.abs() - pair.phi(x)).abs());
        even &= pair.phi(-x) == pair.phi(x);
    }
    // beyond the support the gap is exactly κ_n
    r.sup_gap = r.sup_gap.max(r.kappa);
    let mut fail = |cond: bool, msg: String| {
        if !cond {
            r.violations.push(msg);
        }
    };
    fail((psi_integral - 1.0).abs() <= 1e-9, format!("∫ψ_n = {psi_integral}"));
    fail(r.max_psi_nx <= 2.0 + 1e-9, format!("sup ψ_n·n·x = {}", r.max_psi_nx));
    fail(r.max_abs_phi_prime <= 1.0 + 1e-12, format!("sup |φ'_n| = {}", r.max_abs_phi_prime));
    fail(r.sup_gap <= hi, format!("sup ||x| − φ_n| = {} > a_(n−1) = {hi}", r.sup_gap));
    fail(r.kappa > 0.0 && r.kappa < hi, format!("κ_n = {} outside (0, a_(n−1))", r.kappa));
    fail(
        r.max_phi_second_nx <= 2.0 + 1e-9,
        format!("sup |φ''_n|·n·x = {}", r.max_phi_second_nx),
    );
    fail(r.min_psi >= 0.0, format!("min ψ_n = {}", r.min_psi));
    fail(even && pair.phi(0.0) == 0.0, "φ_n not even or φ_n(0) ≠ 0".to_string());
    fail(pair.psi(lo) == 0.0 && pair.psi(hi) == 0.0, "ψ_n nonzero at the support edge".to_string());
    r
}

// ---------------------------------------------------------------- γ_m

#[derive(Debug, Clone, Serialize)]
pub struct GammaSequence {
    pub gamma: f64,
    pub alpha: f64,
    /// `γ_0, …, γ_{m̄+1}`: iterates up to the first value above 2, or up to
    /// the cap when the sequence does not cross 2.
    pub values: Vec<f64>,
    /// Index with `γ_{m̄} ≤ 2 < γ_{m̄+1}`; `None` when the sequence stays ≤ 2.
    pub m_bar: Option<usize>,
    /// `(1 − α/2)/(1 − γ)`.
    pub gamma_inf: f64,
    /// Largest deviation of the recursion from the explicit formula.
    pub closed_form_error: f64,
}

/// Iteration cap for sequences that do not cross 2.
pub const GAMMA_SEQ_CAP: usize = 10_000;

/// `γ_m = 1 + (γ − α/2)(1 − γ^m)/(1 − γ)`.
pub fn gamma_closed_form(gamma: f64, alpha: f64, m: usize) -> f64 {
    1.0 + (gamma - alpha / 2.0) * (1.0 - gamma.powi(m as i32)) / (1.0 - gamma)
}

pub fn gamma_seq(gamma: f64, alpha: f64) -> Result<GammaSequence> {
    if !(gamma > 0.5 && gamma < 1.0) {
        return Err(Error::param("gamma", format!("need γ ∈ (1/2, 1), got {gamma}")));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::param("alpha", format!("need α ∈ (0, 2), got {alpha}")));
    }
    let mut values = vec![1.0];
    let mut m_bar = None;
    while values.len() <= GAMMA_SEQ_CAP {
        let last = *values.last().unwrap_or(&1.0);
        let next = gamma * last + 1.0 - alpha / 2.0;
        values.push(next);
        if next > 2.0 {
            m_bar = Some(values.len() - 2);
            break;
        }
    }
    let closed_form_error = values
        .iter()
        .enumerate()
        .map(|(m, v)| (v - gamma_closed_form(gamma, alpha, m)).abs())
        .fold(0.0, f64::max);
    Ok(GammaSequence {
        gamma,
        alpha,
        values,
        m_bar,
        gamma_inf: (1.0 - alpha / 2.0) / (1.0 - gamma),
        closed_form_error,
    })
}

// ---------------------------------------------------------------- ε grids

#[derive(Debug, Clone, Serialize)]
pub struct EpsGrid {
    pub gamma: f64,
    pub alpha: f64,
    pub eps0: f64,
    pub eps1: f64,
    #[serde(rename = "L")]
    pub l: usize,
    /// `β_0, …, β_{L+1}`.
    pub betas: Vec<f64>,
    /// `λ_0, …, λ_L`.
    pub lambdas: Vec<f64>,
}

/// Upper bound of `ε_1`: `(2(2γ−1) − α)/32`.
pub fn eps1_bound(gamma: f64, alpha: f64) -> f64 {
    (2.0 * (2.0 * gamma - 1.0) - alpha) / 32.0
}

/// Upper bound of `ε_0`: `(1 − γ)ε_1/4`.
pub fn eps0_bound(gamma: f64, eps1: f64) -> f64 {
    (1.0 - gamma) * eps1 / 4.0
}

pub fn eps_grid(gamma: f64, alpha: f64, eps1: f64, eps0: f64) -> Result<EpsGrid> {
    if !(gamma > 0.5 && gamma < 1.0) {
        return Err(Error::param("gamma", format!("need γ ∈ (1/2, 1), got {gamma}")));
    }
    let b1 = eps1_bound(gamma, alpha);
    if !(eps1 > 0.0 && eps1 < b1) {
        return Err(Error::param(
            "eps1",
            format!("violates ε_1 ∈ (0, 1/32(2(2γ−1)−α)) = (0, {b1}): ε_1 = {eps1}"),
        ));
    }
    let b0 = eps0_bound(gamma, eps1);
    if !(eps0 > 0.0 && eps0 < b0) {
        return Err(Error::param(
            "eps0",
            format!("violates ε_0 ∈ (0, (1−γ)ε_1/4) = (0, {b0}): ε_0 = {eps0}"),
        ));
    }
    // a relative nudge keeps exact quotients such as 0.44/0.0002 from
    // rounding down
    let l = ((0.5 - 6.0 * eps1) / eps0 * (1.0 + 1e-12)).floor() as usize;
    let mut betas: Vec<f64> = (0..=l).map(|i| i as f64 * eps0).collect();
    betas.push(0.5 - eps1);
    let lambdas = betas[..=l].iter().map(|b| 2.0 * (b + eps1)).collect();
    Ok(EpsGrid { gamma, alpha, eps0, eps1, l, betas, lambdas })
}

// ---------------------------------------------------------------- length scales

/// `n_M(ε_1) = inf{n ≥ 1 : a_n^{ε_1} ≤ 2^{−M−8}}`.
pub fn n_m(eps1: f64, m: u32) -> u64 {
    let target = (m as f64 + 8.0) * std::f64::consts::LN_2;
    let mut n = 1u64;
    while eps1 * (n * (n + 1)) as f64 / 2.0 < target {
        n += 1;
    }
    n
}

/// `n_0(ε_0, ε_1) = sup{n : √a_n < 2^{−a_n^{−ε_0ε_1/4}}}`, compared in the
/// log-log domain: with `u = n(n+1)/2` the condition is
/// `ln(u/2) > ln ln 2 + (ε_0ε_1/4)·u`. `None` if no `n` satisfies it.
pub fn n_0(eps0: f64, eps1: f64) -> Option<u64> {
    let c = eps0 * eps1 / 4.0;
    let holds = |n: u64| {
        let u = (n as f64) * (n as f64 + 1.0) / 2.0;
        (u / 2.0).ln() > std::f64::consts::LN_2.ln() + c * u
    };
    // the condition holds on an interval of u; its right end lies past the
    // maximiser u* = 1/c of the concave difference
    let n_star = ((2.0 / c).sqrt().ceil() as u64).max(1);
    if !holds(n_star) {
        return (1..=n_star).rev().find(|&n| holds(n));
    }
    let mut hi = n_star.max(2);
    while holds(hi) {
        hi = hi.checked_mul(2)?;
    }
    let mut lo = n_star;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[derive(Debug, Clone, Serialize)]
pub struct LengthScales {
    pub n: u32,
    pub ln_l_n: f64,
    pub ln_l_bar_n: f64,
    pub ln_sqrt_a_n: f64,
    pub n_m: u64,
    pub n_0: Option<u64>,
    /// `l_n(β_i) < √a_n < ½ l̄_n(β_i)`, compared as exponents.
    pub lemma36_holds: bool,
}

/// Parameters of [`length_scales`].
#[derive(Debug, Clone, Copy)]
pub struct ScaleParams {
    pub beta_i: f64,
    pub beta_next: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub eps1: f64,
    pub eps0: f64,
    pub m: u32,
}

/// `l_n(β_i) = 129 a_n^{1−β_{i+1}} ∨ a_n^{(2/α)(γ−β_{i+1}−ε_1)}` and
/// `l̄_n(β_i) = a_n^{β_i + 5ε_1}`, in the log domain.
pub fn length_scales(n: u32, p: &ScaleParams) -> LengthScales {
    let la = ln_a(n);
    let ln_l_n = (129f64.ln() + (1.0 - p.beta_next) * la)
        .max((2.0 / p.alpha) * (p.gamma - p.beta_next - p.eps1) * la);
    let ln_l_bar_n = (p.beta_i + 5.0 * p.eps1) * la;
    let ln_sqrt_a_n = la / 2.0;
    LengthScales {
        n,
        ln_l_n,
        ln_l_bar_n,
        ln_sqrt_a_n,
        n_m: n_m(p.eps1, p.m),
        n_0: n_0(p.eps0, p.eps1),
        lemma36_holds: ln_l_n < ln_sqrt_a_n && ln_sqrt_a_n < ln_l_bar_n - std::f64::consts::LN_2,
    }
}
