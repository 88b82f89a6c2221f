//! Tensor-product quadrature for separable double integrals against the
//! Riesz weight,
//!
//! ```text
//! ∫∫ f(w) g(z) (|w − z|^{−α} + 1) dw dz,
//! ```
//!
//! on a uniform cell grid covering a box in `R^q`. `f` and `g` are replaced
//! by their cell averages. In one dimension the weight between two cells is
//! its exact cell-pair average; in two dimensions off-diagonal cells use
//! the point value and the diagonal cell uses the exact cell average of
//! `|r|^{−α}`. The lag sum is a zero-padded FFT convolution.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::fft_nd;
use crate::quad::{gauss_legendre, CompositeGauss};

/// Resolution and truncation controls shared by the kernel verifiers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Cells per standard deviation of the narrowest Gaussian (coarse level).
    pub cells_per_sd: f64,
    /// Half-width of each Gaussian window, in standard deviations.
    pub truncation_sds: f64,
    /// Accepted relative change between the coarse and the refined level.
    pub rel_tol: f64,
    /// Largest number of cells per axis at the refined level.
    pub max_cells_1d: usize,
    pub max_cells_2d: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            cells_per_sd: 16.0,
            truncation_sds: 12.0,
            rel_tol: 5e-3,
            max_cells_1d: 1 << 22,
            max_cells_2d: 1536,
        }
    }
}

/// A cube of `cells^q` square cells of side `h` with lower corner `lo`.
#[derive(Debug, Clone, Copy)]
pub struct CellBox {
    pub dim: usize,
    pub lo: [f64; 2],
    pub h: f64,
    pub cells: usize,
}

impl CellBox {
    /// Smallest cube of side-`h` cells containing `[lo, hi]`.
    pub fn covering(dim: usize, lo: [f64; 2], hi: [f64; 2], h: f64) -> CellBox {
        let span = (0..dim).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let cells = ((span / h).ceil() as usize).max(1);
        CellBox { dim, lo, h, cells }
    }

    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    /// Cell averages of `f`. In one dimension, cells containing one of the
    /// `breakpoints` are split there so that jumps and kinks are integrated
    /// exactly by the per-piece Gauss rule.
    pub fn cell_averages<F>(&self, f: F, breakpoints: &[f64]) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let (nodes, weights) = gauss_legendre(4);
        let h = self.h;
        let piece = |a: f64, b: f64| -> f64 {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * f(&[mid + half * x]))
                .sum::<f64>()
                * half
        };
        match self.dim {
            1 => (0..self.cells)
                .into_par_iter()
                .map(|i| {
                    let a = self.lo[0] + i as f64 * h;
                    let b = a + h;
                    let mut cuts: Vec<f64> = breakpoints
                        .iter()
                        .copied()
                        .filter(|&c| c > a && c < b)
                        .collect();
                    cuts.sort_by(f64::total_cmp);
                    let mut total = 0.0;
                    let mut left = a;
                    for c in cuts.into_iter().chain(std::iter::once(b)) {
                        total += piece(left, c);
                        left = c;
                    }
                    total / h
                })
                .collect(),
            _ => {
                let n = self.cells;
                (0..n * n)
                    .into_par_iter()
                    .map(|k| {
                        let (i, j) = (k / n, k % n);
                        let cx = self.lo[0] + (i as f64 + 0.5) * h;
                        let cy = self.lo[1] + (j as f64 + 0.5) * h;
                        let mut s = 0.0;
                        for (xa, wa) in nodes.iter().zip(&weights) {
                            for (xb, wb) in nodes.iter().zip(&weights) {
                                s += wa * wb * f(&[cx + 0.5 * h * xa, cy + 0.5 * h * xb]);
                            }
                        }
                        s / 4.0
                    })
                    .collect()
            }
        }
    }
}

/// `∫_{[−1/2,1/2]²} |r|^{−α} dr`.
pub fn unit_square_riesz_average(alpha: f64) -> f64 {
    let g = CompositeGauss::new(16);
    let inner = g.integrate(
        |th: f64| (2.0 * th.cos()).powf(alpha - 2.0),
        0.0,
        std::f64::consts::FRAC_PI_4,
        4,
    );
    8.0 * inner / (2.0 - alpha)
}

/// Exact average of `|w − z|^{−α}` over `w ∈ cell i`, `z ∈ cell i + k`
/// (one dimension, cell side `h`, `α < 1`).
pub fn pair_average_weight_1d(k: usize, h: f64, alpha: f64) -> f64 {
    let norm = (1.0 - alpha) * (2.0 - alpha);
    if k == 0 {
        return 2.0 * h.powf(-alpha) / norm;
    }
    if k < 16 {
        let f2 = |m: f64| m.powf(2.0 - alpha) / norm;
        let k = k as f64;
        return (f2(k + 1.0) - 2.0 * f2(k) + f2(k - 1.0)) * h.powf(-alpha);
    }
    // Moments of the triangular lag distribution: Var = h²/6, E u⁴ = h⁴/15.
    let k = k as f64;
    let a = alpha;
    let c2 = a * (a + 1.0) / 12.0;
    let c4 = a * (a + 1.0) * (a + 2.0) * (a + 3.0) / 360.0;
    (k * h).powf(-a) * (1.0 + c2 / (k * k) + c4 / (k * k * k * k))
}

/// Singular and constant parts of the pair integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairIntegral {
    pub singular: f64,
    pub constant: f64,
}

impl PairIntegral {
    pub fn total(&self) -> f64 {
        self.singular + self.constant
    }
}

/// Pair integral of two tables of cell averages on the same box.
pub fn pair_integral(cells: &CellBox, f: &[f64], g: &[f64], alpha: f64) -> PairIntegral {
    let m = cells.cells;
    let h = cells.h;
    let vol = h.powi(cells.dim as i32);
    let constant = f.iter().sum::<f64>() * vol * g.iter().sum::<f64>() * vol;
    if f.iter().all(|&v| v == 0.0) || g.iter().all(|&v| v == 0.0) {
        return PairIntegral { singular: 0.0, constant };
    }
    let p = (2 * m).next_power_of_two();
    let zero = Complex64::new(0.0, 0.0);
    let singular = match cells.dim {
        1 => {
            let mut kern = vec![zero; p];
            for k in 0..m {
                let w = pair_average_weight_1d(k, h, alpha);
                kern[k].re = w;
                if k > 0 {
                    kern[p - k].re = w;
                }
            }
            let mut gp = vec![zero; p];
            for (dst, &v) in gp.iter_mut().zip(g) {
                dst.re = v;
            }
            fft_nd(&mut kern, p, 1, false);
            fft_nd(&mut gp, p, 1, false);
            for (a, b) in gp.iter_mut().zip(&kern) {
                *a *= b;
            }
            fft_nd(&mut gp, p, 1, true);
            let scale = 1.0 / p as f64;
            f.iter()
                .zip(&gp)
                .map(|(fi, c)| fi * c.re * scale)
                .sum::<f64>()
                * vol
                * vol
        }
        _ => {
            let diag = unit_square_riesz_average(alpha) * h.powf(-alpha);
            let mut kern = vec![zero; p * p];
            for a in 0..m {
                for b in 0..m {
                    let w = if a == 0 && b == 0 {
                        diag
                    } else {
                        (((a * a + b * b) as f64).sqrt() * h).powf(-alpha)
                    };
                    for ia in [a, (p - a) % p] {
                        for ib in [b, (p - b) % p] {
                            kern[ia * p + ib].re = w;
                        }
                    }
                }
            }
            let mut gp = vec![zero; p * p];
            for i in 0..m {
                for j in 0..m {
                    gp[i * p + j].re = g[i * m + j];
                }
            }
            fft_nd(&mut kern, p, 2, false);
            fft_nd(&mut gp, p, 2, false);
            for (a, b) in gp.iter_mut().zip(&kern) {
                *a *= b;
            }
            fft_nd(&mut gp, p, 2, true);
            let scale = 1.0 / (p * p) as f64;
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    s += f[i * m + j] * gp[i * p + j].re * scale;
                }
            }
            s * vol * vol
        }
    };
    PairIntegral { singular, constant }
}

/// Description of one separable pair integral for [`pair_integral_converged`].
pub struct PairProblem<'a> {
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Coarse cell size.
    pub h: f64,
    pub alpha: f64,
    pub f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub g: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub breakpoints: Vec<f64>,
}

/// Evaluates the pair integral at cell size `h` and `h/2`; returns the
/// refined value, or a quadrature error if the two disagree by more than
/// `rel_tol`.
pub fn pair_integral_converged(
    problem: &PairProblem<'_>,
    opts: &QuadratureOptions,
) -> Result<PairIntegral> {
    let at = |h: f64| -> Result<PairIntegral> {
        let cells = CellBox::covering(problem.dim, problem.lo, problem.hi, h);
        let cap = if problem.dim == 1 { opts.max_cells_1d } else { opts.max_cells_2d };
        if cells.cells > cap {
            return Err(Error::param(
                "resolution",
                format!("{} cells per axis exceeds the limit {cap}", cells.cells),
            ));
        }
        let f = cells.cell_averages(problem.f, &problem.breakpoints);
        let g = cells.cell_averages(problem.g, &problem.breakpoints);
        Ok(pair_integral(&cells, &f, &g, problem.alpha))
    };
    let coarse = at(problem.h)?;
    let fine = at(problem.h / 2.0)?;
    let est = (fine.total() - coarse.total()).abs();
    if !fine.total().is_finite() || est > opts.rel_tol * fine.total().abs() {
        return Err(Error::Quadrature { estimate: est });
    }
    Ok(fine)
}
