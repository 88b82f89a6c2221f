//! Periodic grids, sampled fields, and the spectral heat semigroup.
//!
//! The spatial domain is the torus `[0,L)^q`, `q ∈ {1,2}`, sampled at `N`
//! points per axis. Values are stored row-major: site `(i, j)` lives at
//! `i * N + j`, axis 0 is the slow index.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    extent: f64,
    points: usize,
    spacing: f64,
}

impl TorusGrid {
    /// Builds a grid on `[0,L)^q` with `N` points per axis.
    ///
    /// `N` must be a power of two and at least 8; `q` must be 1 or 2.
    pub fn new(dim: usize, extent: f64, points: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!("extent must be positive, got {extent}")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {points}"
            )));
        }
        // Division by a power of two is exact, so spacing * points == extent.
        Ok(TorusGrid {
            dim,
            extent,
            points,
            spacing: extent / points as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of sites, `N^q`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one grid cell, `h^q`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Signed mode number for FFT index `k`: `m ∈ {−N/2, …, N/2−1}`.
    pub fn mode(&self, k: usize) -> i64 {
        let n = self.points as i64;
        let k = k as i64;
        if k < n / 2 {
            k
        } else {
            k - n
        }
    }

    /// Angular frequency `ξ_m = 2πm/L` for FFT index `k`.
    pub fn wavenumber(&self, k: usize) -> f64 {
        2.0 * PI * self.mode(k) as f64 / self.extent
    }

    /// Per-axis multi-index of a flat site index.
    pub fn site_index(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            _ => [flat / self.points, flat % self.points],
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.points + idx[1],
        }
    }

    /// Coordinates of a site; unused trailing components are zero.
    pub fn coords(&self, flat: usize) -> [f64; 2] {
        let idx = self.site_index(flat);
        [idx[0] as f64 * self.spacing, idx[1] as f64 * self.spacing]
    }

    /// `|ξ|²` for every spectral index, in storage order.
    pub fn squared_wavenumbers(&self) -> Vec<f64> {
        (0..self.len())
            .map(|flat| {
                let idx = self.site_index(flat);
                (0..self.dim).map(|l| self.wavenumber(idx[l]).powi(2)).sum()
            })
            .collect()
    }

    /// Minimal periodic displacement `b − a` along one axis, in `[−L/2, L/2)`.
    pub fn periodic_delta(&self, a: f64, b: f64) -> f64 {
        let l = self.extent;
        let d = (b - a).rem_euclid(l);
        if d >= l / 2.0 {
            d - l
        } else {
            d
        }
    }

    /// Euclidean distance on the torus between two points.
    pub fn torus_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.dim)
            .map(|l| self.periodic_delta(a[l], b[l]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// A real field sampled on a [`TorusGrid`] at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "values",
                format!("non-finite entry at site {bad}"),
            ));
        }
        Ok(Field { grid, values })
    }

    /// Wraps values without the finiteness check. Callers that can produce
    /// overflow must check [`Field::is_finite`] themselves.
    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Field::from_raw(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Field::from_raw(grid, vec![c; grid.len()])
    }

    /// Samples `f` at every site; `f` receives the site coordinates.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|k| {
                let x = grid.coords(k);
                f(&x[..grid.dim()])
            })
            .collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Grid quadrature `Σ f h^q`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Grid quadrature of the pointwise product with another field.
    pub fn pairing(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|v| c * v).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `‖self − other‖_∞`.
    pub fn sup_distance(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// A space-time point with the parabolic distance
/// `d((t,x),(t',x')) = √|t'−t| + |x'−x|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl ParabolicPoint {
    /// Builds a point with `x` reduced modulo the grid extent.
    pub fn new(grid: &TorusGrid, t: f64, x: &[f64]) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::param("t", format!("time must be finite and >= 0, got {t}")));
        }
        if x.len() != grid.dim() {
            return Err(Error::param("x", format!("expected {} coordinates", grid.dim())));
        }
        let x = x.iter().map(|c| c.rem_euclid(grid.extent())).collect();
        Ok(ParabolicPoint { t, x })
    }

    pub fn distance(&self, other: &ParabolicPoint, grid: &TorusGrid) -> f64 {
        (self.t - other.t).abs().sqrt() + grid.torus_distance(&self.x, &other.x)
    }
}

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> PlanPair {
    static CACHE: OnceLock<Mutex<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// In-place unnormalised FFT over a `dim`-dimensional cube of side `n`.
pub(crate) fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    thread_local! {
        // `Fft::process` allocates and zeroes its scratch on every call
        static SCRATCH: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
    }
    let (fwd, inv) = plans(n);
    let plan = if inverse { inv } else { fwd };
    SCRATCH.with_borrow_mut(|scratch| {
        let need = plan.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        let scratch = &mut scratch[..need];
        match dim {
            1 => plan.process_with_scratch(data, scratch),
            2 => {
                plan.process_with_scratch(data, scratch); // rows, processed back to back
                let mut col = vec![Complex64::new(0.0, 0.0); n];
                for j in 0..n {
                    for i in 0..n {
                        col[i] = data[i * n + j];
                    }
                    plan.process_with_scratch(&mut col, scratch);
                    for i in 0..n {
                        data[i * n + j] = col[i];
                    }
                }
            }
            _ => unreachable!("grids are one- or two-dimensional"),
        }
    })
}

/// Forward transform of a field's values.
pub(crate) fn forward(field: &Field) -> Vec<Complex64> {
    let grid = field.grid();
    let mut buf: Vec<Complex64> = field
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft_nd(&mut buf, grid.points(), grid.dim(), false);
    buf
}

/// Inverse transform, normalised, real part.
pub(crate) fn inverse_real(grid: &TorusGrid, mut spec: Vec<Complex64>) -> Vec<f64> {
    fft_nd(&mut spec, grid.points(), grid.dim(), true);
    let scale = 1.0 / grid.len() as f64;
    spec.into_iter().map(|c| c.re * scale).collect()
}

/// Applies a real, even spectral multiplier to a field.
pub(crate) fn apply_multiplier(field: &Field, multiplier: &[f64]) -> Field {
    let mut spec = forward(field);
    for (c, &m) in spec.iter_mut().zip(multiplier) {
        *c *= m;
    }
    Field::from_raw(*field.grid(), inverse_real(field.grid(), spec))
}

/// Heat-semigroup multipliers `exp(−|ξ|² t / 2)`.
pub fn heat_multiplier(grid: &TorusGrid, t: f64) -> Vec<f64> {
    grid.squared_wavenumbers()
        .into_iter()
        .map(|k2| (-0.5 * k2 * t).exp())
        .collect()
}

/// `P_t f`, the heat semigroup generated by `½Δ` on the torus.
pub fn heat_semigroup_apply(f: &Field, t: f64) -> Result<Field> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::param("t", format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(apply_multiplier(f, &heat_multiplier(f.grid(), t)))
}

/// Spectral partial derivatives `∂_{x_l} f`, one field per axis.
///
/// The Nyquist coefficient along the differentiated axis is zeroed.
pub fn spectral_gradient(f: &Field) -> Vec<Field> {
    let grid = *f.grid();
    let spec = forward(f);
    let n = grid.points();
    (0..grid.dim())
        .map(|axis| {
            let mut d = spec.clone();
            for (flat, c) in d.iter_mut().enumerate() {
                let k = grid.site_index(flat)[axis];
                if k == n / 2 {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    *c *= Complex64::new(0.0, grid.wavenumber(k));
                }
            }
            Field::from_raw(grid, inverse_real(&grid, d))
        })
        .collect()
}

/// Euclidean norm of the gradient at each site.
pub fn gradient_magnitude(grad: &[Field]) -> Vec<f64> {
    let len = grad[0].values().len();
    (0..len)
        .map(|k| grad.iter().map(|g| g.values()[k].powi(2)).sum::<f64>().sqrt())
        .collect()
}
