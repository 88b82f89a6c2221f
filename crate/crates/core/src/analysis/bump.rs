//! The test function `Φ(y) = c·exp(−1/(1−|y|²))` on the unit ball, its
//! rescalings `Φ_x^m(y) = m^q Φ(m(y−x))`, and the monitor `I^n(t)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};
use crate::heat_kernel::quadrature::{pair_integral, pair_integral_converged, CellBox, PairIntegral, PairProblem};
use crate::heat_kernel::QuadratureOptions;
use crate::noise::validate_alpha;
use crate::quad::CompositeGauss;
use crate::stats::linear_fit;
use crate::yw::{ln_a, ln_m};

/// The normalised bump in dimension `q`.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    q: usize,
    norm: f64,
}

fn profile(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

impl Bump {
    pub fn new(q: usize) -> Result<Self> {
        let g = CompositeGauss::new(16);
        let mass = match q {
            1 => g.integrate(|y| profile(y * y), -1.0, 1.0, 200),
            2 => 2.0 * std::f64::consts::PI * g.integrate(|r| r * profile(r * r), 0.0, 1.0, 200),
            _ => return Err(Error::param("q", "dimension must be 1 or 2")),
        };
        Ok(Bump { q, norm: 1.0 / mass })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    /// `Φ` at squared radius `r2`.
    #[inline]
    pub fn unit(&self, r2: f64) -> f64 {
        self.norm * profile(r2)
    }

    /// `Φ_0^m(d)`.
    #[inline]
    pub fn scaled(&self, m: f64, d: &[f64]) -> f64 {
        let r2: f64 = d.iter().map(|v| (m * v) * (m * v)).sum();
        m.powi(self.q as i32) * self.unit(r2)
    }
}

fn check_resolution(grid: &TorusGrid, m: f64) -> Result<()> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::param("m", format!("scale must be positive and finite, got {m}")));
    }
    let mh = m * grid.spacing();
    if mh > 1.0 {
        return Err(Error::UnderResolved { mh });
    }
    Ok(())
}

/// `Φ_{x0}^m` sampled on the grid, summed over periodic images.
pub fn bump_test_fn(grid: &TorusGrid, m: f64, x0: &[f64]) -> Result<Field> {
    check_resolution(grid, m)?;
    if x0.len() != grid.dim() {
        return Err(Error::param("x0", "centre must have one coordinate per axis"));
    }
    let bump = Bump::new(grid.dim())?;
    let l = grid.extent();
    let images = (1.0 / (m * l)).ceil() as i64 + 1;
    let shifts: Vec<f64> = (-images..=images).map(|j| j as f64 * l).collect();
    Field::from_fn(*grid, |y| {
        let d0: Vec<f64> = (0..grid.dim()).map(|a| grid.periodic_delta(x0[a], y[a])).collect();
        match grid.dim() {
            1 => shifts.iter().map(|s| bump.scaled(m, &[d0[0] + s])).sum(),
            _ => shifts
                .iter()
                .flat_map(|s| shifts.iter().map(move |t| (s, t)))
                .map(|(s, t)| bump.scaled(m, &[d0[0] + s, d0[1] + t]))
                .sum(),
        }
    })
}

/// `Ψ`: the bump rescaled to the central quarter of the domain.
pub fn default_psi(grid: &TorusGrid) -> Result<Field> {
    let centre = vec![grid.extent() / 2.0; grid.dim()];
    bump_test_fn(grid, 8.0 / grid.extent(), &centre)
}

/// `∫∫ Φ_x^m(w) Φ_x^m(z) (|w−z|^{−α} + 1) dw dz` by cell quadrature on the
/// support, checked against a halved cell size.
pub fn intphi_integral(m: f64, alpha: f64, q: usize) -> Result<PairIntegral> {
    validate_alpha(alpha, q)?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::param("m", format!("scale must be positive and finite, got {m}")));
    }
    let bump = Bump::new(q)?;
    let f = move |y: &[f64]| bump.scaled(m, y);
    let r = 1.0 / m;
    let cells = if q == 1 { 1024.0 } else { 96.0 };
    let problem = PairProblem {
        dim: q,
        lo: [-r, -r],
        hi: [r, r],
        h: 2.0 * r / cells,
        alpha,
        f: &f,
        g: &f,
        breakpoints: Vec::new(),
    };
    let opts = QuadratureOptions { rel_tol: 1e-3, ..QuadratureOptions::default() };
    pair_integral_converged(&problem, &opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct IntPhiRow {
    pub m: f64,
    pub singular: f64,
    pub constant: f64,
    pub integral: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntPhiReport {
    pub alpha: f64,
    pub q: usize,
    pub rows: Vec<IntPhiRow>,
    /// Log-log slope of the full integral against `m`.
    pub slope: f64,
    pub slope_std_err: f64,
    /// `I(m_{k+1}) / I(m_k)` for consecutive sweep points.
    pub step_ratios: Vec<f64>,
}

/// Sweeps [`intphi_integral`] over `ms` and fits the growth exponent.
pub fn intphi_check(ms: &[f64], alpha: f64, q: usize) -> Result<IntPhiReport> {
    let rows = ms
        .par_iter()
        .map(|&m| {
            let p = intphi_integral(m, alpha, q)?;
            Ok(IntPhiRow { m, singular: p.singular, constant: p.constant, integral: p.total() })
        })
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.m.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.integral.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| Error::NoScalingRange("need at least two distinct m".into()))?;
    let step_ratios = rows.windows(2).map(|w| w[1].integral / w[0].integral).collect();
    Ok(IntPhiReport { alpha, q, rows, slope: fit.slope, slope_std_err: fit.slope_std_err, step_ratios })
}

/// Checks that `series` starts at 0 and has no hole wider than 1.5 times
/// the median spacing.
fn check_coverage(series: &[(f64, Field)], t: f64) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::MissingSnapshots("no snapshots stored".into()));
    };
    let tol = 1e-12 * t.abs().max(1.0);
    if first.0 > tol {
        return Err(Error::MissingSnapshots(format!("[0, {}] (first stored snapshot)", first.0)));
    }
    let last = series.last().map(|s| s.0).unwrap_or(0.0);
    if t > last + tol {
        return Err(Error::MissingSnapshots(format!("[{last}, {t}] (after last stored snapshot)")));
    }
    let gaps: Vec<f64> = series.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if gaps.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::param("series", "snapshot times must be strictly increasing"));
    }
    if gaps.is_empty() {
        return Ok(());
    }
    let typical = crate::stats::median(&gaps);
    let holes: Vec<String> = series
        .windows(2)
        .filter(|w| w[1].0 - w[0].0 > 1.5 * typical && w[0].0 < t)
        .map(|w| format!("({}, {})", w[0].0, w[1].0))
        .collect();
    if !holes.is_empty() {
        return Err(Error::MissingSnapshots(holes.join(", ")));
    }
    Ok(())
}

/// Inputs of [`in_monitor`] besides the snapshots.
#[derive(Debug, Clone, Copy)]
pub struct MonitorParams {
    pub n: u32,
    pub gamma: f64,
    pub alpha: f64,
}

/// Space part of the monitor at one snapshot:
/// `∫ 1{|⟨u, Φ_x^m⟩| < a_n} Ψ(x) ∫∫ |u(w)|^γ |u(z)|^γ Φ_x^m(w) Φ_x^m(z) (|w−z|^{−α}+1)`.
fn monitor_density(u: &Field, psi: &Field, p: &MonitorParams, m: f64, a_n: f64, bump: &Bump) -> f64 {
    let grid = u.grid();
    let (h, q, n) = (grid.spacing(), grid.dim(), grid.points() as i64);
    let r = (1.0 / (m * h)).ceil() as i64;
    let width = (2 * r + 1) as usize;
    let offsets: Vec<[i64; 2]> = match q {
        1 => (-r..=r).map(|j| [j, 0]).collect(),
        _ => (-r..=r).flat_map(|i| (-r..=r).map(move |j| [i, j])).collect(),
    };
    let phi: Vec<f64> = offsets
        .iter()
        .map(|o| bump.scaled(m, &[o[0] as f64 * h, o[1] as f64 * h][..q]))
        .collect();
    let vol = h.powi(q as i32);
    let cells = CellBox { dim: q, lo: [0.0, 0.0], h, cells: width };
    let vals = u.values();
    (0..grid.len())
        .into_par_iter()
        .filter(|&x| psi.values()[x] > 0.0)
        .map(|x| {
            let c = grid.site_index(x);
            let site = |o: &[i64; 2]| {
                let i = (c[0] as i64 + o[0]).rem_euclid(n) as usize;
                let j = if q == 1 { 0 } else { (c[1] as i64 + o[1]).rem_euclid(n) as usize };
                vals[grid.flat_index([i, j])]
            };
            let pairing: f64 = offsets.iter().zip(&phi).map(|(o, w)| site(o) * w).sum::<f64>() * vol;
            if pairing.abs() >= a_n {
                return 0.0;
            }
            let f: Vec<f64> = offsets.iter().zip(&phi).map(|(o, w)| site(o).abs().powf(p.gamma) * w).collect();
            psi.values()[x] * pair_integral(&cells, &f, &f, p.alpha).total() * vol
        })
        .sum()
}

/// `I^n` at every stored snapshot time up to `t_max`, by the trapezoid rule
/// over the snapshots.
pub fn in_monitor_path(series: &[(f64, Field)], t_max: f64, p: &MonitorParams, psi: &Field) -> Result<Vec<(f64, f64)>> {
    check_coverage(series, t_max)?;
    let grid = *series[0].1.grid();
    validate_alpha(p.alpha, grid.dim())?;
    if !(p.gamma > 0.0 && p.gamma <= 1.0) {
        return Err(Error::param("gamma", format!("need γ ∈ (0, 1], got {}", p.gamma)));
    }
    if *psi.grid() != grid || series.iter().any(|s| *s.1.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    if psi.values().iter().any(|v| *v < 0.0) {
        return Err(Error::param("psi", "Ψ must be nonnegative"));
    }
    if p.n == 0 {
        return Err(Error::Unrepresentable { n: 0, reason: "the monitor starts at n = 1".into() });
    }
    let a_n = ln_a(p.n).exp();
    let prefactor = (-(1.0 + 2.0 / p.n as f64) * ln_a(p.n)).exp();
    let m = ln_m(p.n + 1).exp();
    if a_n == 0.0 || !prefactor.is_finite() || !m.is_finite() {
        return Err(Error::Unrepresentable { n: p.n, reason: "a_n^{−1−2/n} or m_{n+1} overflows".into() });
    }
    check_resolution(&grid, m)?;
    let bump = Bump::new(grid.dim())?;
    let tol = 1e-12 * t_max.abs().max(1.0);
    let used: Vec<&(f64, Field)> = series.iter().filter(|s| s.0 <= t_max + tol).collect();
    let dens: Vec<f64> = used.iter().map(|(_, u)| monitor_density(u, psi, p, m, a_n, &bump)).collect();
    let mut acc = 0.0;
    let mut out = vec![(used[0].0, 0.0)];
    for k in 1..used.len() {
        acc += 0.5 * (dens[k] + dens[k - 1]) * (used[k].0 - used[k - 1].0);
        out.push((used[k].0, prefactor * acc));
    }
    Ok(out)
}

/// `I^n(t)` from the snapshots of `u = X¹ − X²` on `[0, t]`.
pub fn in_monitor(series: &[(f64, Field)], t: f64, p: &MonitorParams, psi: &Field) -> Result<f64> {
    Ok(in_monitor_path(series, t, p, psi)?.last().map(|v| v.1).unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::yw::a_seq;

    #[test]
    fn bump_normalisation_constants() {
        // ∫_{-1}^{1} e^{−1/(1−y²)} dy
        assert!((1.0 / Bump::new(1).unwrap().norm - 0.443_993_816_168_079_4).abs() < 1e-12);
        assert!(Bump::new(3).is_err());
    }

    #[test]
    fn scaled_bump_keeps_unit_mass() {
        let g = TorusGrid::new(1, 1.0, 4096).unwrap();
        for m in [2.0, 8.0, 64.0] {
            let f = bump_test_fn(&g, m, &[0.3]).unwrap();
            assert!((f.integral() - 1.0).abs() < 1e-9, "m={m}: {}", f.integral());
        }
        let g2 = TorusGrid::new(2, 1.0, 256).unwrap();
        let f = bump_test_fn(&g2, 4.0, &[0.5, 0.9]).unwrap();
        assert!((f.integral() - 1.0).abs() < 1e-9);
        assert!(matches!(bump_test_fn(&g, 8192.0, &[0.0]), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn wide_bump_wraps() {
        // support wider than the torus: the images keep the mass
        let g = TorusGrid::new(1, 1.0, 2048).unwrap();
        let f = bump_test_fn(&g, 1.2, &[0.1]).unwrap();
        assert!((f.integral() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn intphi_constant_part_is_unit_mass() {
        let p = intphi_integral(32.0, 0.5, 1).unwrap();
        assert!((p.constant - 1.0).abs() < 1e-9);
        // exact scaling of the singular part
        let p2 = intphi_integral(64.0, 0.5, 1).unwrap();
        assert!((p2.singular / p.singular - 2f64.sqrt()).abs() < 1e-9);
    }

    fn constant_series(g: TorusGrid, c: f64, times: usize, dt: f64) -> Vec<(f64, Field)> {
        (0..=times).map(|k| (k as f64 * dt, Field::constant(g, c))).collect()
    }

    #[test]
    fn monitor_degenerate_fields() {
        let g = TorusGrid::new(1, 1.0, 128).unwrap();
        let psi = default_psi(&g).unwrap();
        let p = MonitorParams { n: 1, gamma: 0.75, alpha: 0.5 };
        for c in [0.0, 10.0] {
            let s = constant_series(g, c, 4, 0.01);
            assert_eq!(in_monitor(&s, 0.04, &p, &psi).unwrap(), 0.0);
        }
    }

    #[test]
    fn monitor_constant_half_scale_factorises() {
        let g = TorusGrid::new(1, 1.0, 256).unwrap();
        let psi = default_psi(&g).unwrap();
        let p = MonitorParams { n: 1, gamma: 0.75, alpha: 0.5 };
        let a = a_seq(1);
        let s = constant_series(g, a / 2.0, 10, 0.01);
        let got = in_monitor(&s, 0.1, &p, &psi).unwrap();
        let pair = intphi_integral(ln_m(2).exp(), 0.5, 1).unwrap().total();
        let want = a.powf(-3.0) * 0.1 * (a / 2.0).powf(1.5) * pair;
        assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn monitor_reports_gaps() {
        let g = TorusGrid::new(1, 1.0, 64).unwrap();
        let psi = default_psi(&g).unwrap();
        let p = MonitorParams { n: 1, gamma: 0.75, alpha: 0.5 };
        let mut s = constant_series(g, 0.0, 6, 0.01);
        s.remove(3);
        assert!(matches!(in_monitor(&s, 0.06, &p, &psi), Err(Error::MissingSnapshots(_))));
        s.remove(0);
        assert!(matches!(in_monitor(&s, 0.06, &p, &psi), Err(Error::MissingSnapshots(_))));
    }
}
