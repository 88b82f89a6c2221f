//! Numerical laboratory for the stochastic heat equation
//!
//! ```text
//! ∂X/∂t = ½ΔX + σ(t,x,X) Ẇ(t,x) + b(t,x,X)
//! ```
//!
//! driven by Gaussian noise that is white in time and spatially correlated
//! through the Riesz kernel `k(w,z) = |w−z|^{−α}`, on a periodic grid in one
//! or two dimensions.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: torus grids, fields, the spectral heat semigroup and gradients.
//! - [`heat_kernel`]: the Gaussian kernel on `R^q` and numerical checks of the
//!   kernel estimates used in uniqueness proofs.
//! - [`noise`]: spectrally synthesised colored-noise increments.
//! - [`yw`]: Yamada–Watanabe mollifiers, the `γ_m` bootstrap sequence, the
//!   `ε`/`β` grids and the length scales `l_n`, `l̄_n`.
//! - [`solver`]: exponential-Euler integration of the mild formulation,
//!   including paired solves sharing one noise realisation.
//! - [`analysis`]: splitting of the difference of two solutions, Hölder
//!   exponent estimation, gradient bins, the `I^n` monitor and the `(α, γ)`
//!   sweep.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod heat_kernel;
pub mod noise;
pub mod quad;
pub mod snapshot;
pub mod solver;
pub mod special;
pub mod stats;
pub mod yw;

pub use error::{Error, Result};
pub use grid::{Field, ParabolicPoint, TorusGrid};
