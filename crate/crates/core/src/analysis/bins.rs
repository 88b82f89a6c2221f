//! Occupancy of the gradient bins `J_{n,i}(s)`.
//!
//! A site `x` with `|x − centre|_∞ ≤ K₀` is admissible when
//! `|⟨u_s, Φ_x^{m_{n+1}}⟩| ≤ a_n`. Admissible sites are binned by
//! `g(x) = |∇u_{1,a_n}(s, x̂_n(s,x))|`, where `x̂_n` minimises `|u_s|` over
//! the ball of radius `√a_n`:
//!
//! ```text
//! bin 0:         g ≥ a_n^{β_1}/4
//! bin i, 0<i<L:  a_n^{β_{i+1}}/4 ≤ g < a_n^{β_i}/4
//! bin L:         g < a_n^{β_L}/4
//! ```

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{bump_test_fn, nearest_snapshot, split_u, xhat_select, Snap};
use crate::error::{Error, Result};
use crate::grid::{forward, gradient_magnitude, inverse_real, Field};
use crate::yw::{length_scales, ln_a, ln_m, EpsGrid, ScaleParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinOccupancy {
    pub n: u32,
    pub i: usize,
    pub beta_i: f64,
    /// Site count times `h^q`.
    pub measure: f64,
    /// `ln(K₀^q l_n(β_i) / l̄_n(β_i))`, the size bound without its constant;
    /// absent for the last bin, which the bound does not cover.
    pub envelope_log: Option<f64>,
    pub admissible_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBins {
    pub n: u32,
    pub snapshot: Snap,
    pub lookback: Snap,
    pub admissible_measure: f64,
    pub bins: Vec<BinOccupancy>,
}

/// `⟨u, Φ_x^m⟩` at every site, by periodic convolution.
pub fn bump_pairing(u: &Field, m: f64) -> Result<Vec<f64>> {
    let grid = u.grid();
    let origin = vec![0.0; grid.dim()];
    let kernel = bump_test_fn(grid, m, &origin)?;
    let mut spec = forward(u);
    for (a, b) in spec.iter_mut().zip(forward(&kernel)) {
        *a *= b;
    }
    let vol = grid.cell_volume();
    Ok(inverse_real(grid, spec).into_iter().map(|v| v * vol).collect())
}

/// Classifies the sites of `u` at time `t` into the bins `J_{n,0..=L}`.
pub fn gradient_bins(series: &[(f64, Field)], t: f64, n: u32, eps: &EpsGrid, k0: f64) -> Result<GradientBins> {
    if n == 0 {
        return Err(Error::Unrepresentable { n, reason: "bins start at n = 1".into() });
    }
    if !(k0 > 0.0) {
        return Err(Error::param("K0", "half-width must be positive"));
    }
    let la = ln_a(n);
    let a_n = la.exp();
    let m = ln_m(n + 1).exp();
    let l = eps.l;
    let thresholds: Vec<f64> = (1..=l).map(|k| (eps.betas[k] * la).exp() / 4.0).collect();
    if a_n == 0.0 || !m.is_finite() || thresholds.last().is_some_and(|v| *v == 0.0) {
        return Err(Error::Unrepresentable { n, reason: "a_n or a_n^{β_L} underflows".into() });
    }
    let snapshot = nearest_snapshot(series, t)?;
    let u = &series[snapshot.index].1;
    let grid = *u.grid();
    let pairing = bump_pairing(u, m)?;
    let split = split_u(series, t, a_n)?;
    let grad = gradient_magnitude(&split.grad_u1);
    let centre = grid.extent() / 2.0;
    let radius = a_n.sqrt();
    let slack = k0 * (1.0 + 1e-12);

    let labels: Vec<Option<usize>> = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let c = grid.coords(x);
            let inside = (0..grid.dim()).all(|a| grid.periodic_delta(centre, c[a]).abs() <= slack);
            if !inside || pairing[x].abs() > a_n {
                return None;
            }
            let g = grad[xhat_select(u, x, radius)];
            Some(thresholds.partition_point(|&th| g < th))
        })
        .collect();

    let vol = grid.cell_volume();
    let mut counts = vec![0usize; l + 1];
    for b in labels.iter().flatten() {
        counts[*b] += 1;
    }
    let admissible_measure = counts.iter().sum::<usize>() as f64 * vol;
    let q = grid.dim() as f64;
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let envelope_log = (i < l).then(|| {
                let s = length_scales(
                    n,
                    &ScaleParams {
                        beta_i: eps.betas[i],
                        beta_next: eps.betas[i + 1],
                        gamma: eps.gamma,
                        alpha: eps.alpha,
                        eps1: eps.eps1,
                        eps0: eps.eps0,
                        m: 1,
                    },
                );
                q * k0.ln() + s.ln_l_n - s.ln_l_bar_n
            });
            BinOccupancy { n, i, beta_i: eps.betas[i], measure: c as f64 * vol, envelope_log, admissible_measure }
        })
        .collect();
    Ok(GradientBins { n, snapshot, lookback: split.lookback, admissible_measure, bins })
}

/// CSV with columns `n, i, beta_i, measure, envelope_log, admissible_measure`.
pub fn write_bins_csv<W: Write>(bins: &[BinOccupancy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
