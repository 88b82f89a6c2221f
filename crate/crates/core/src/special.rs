//! Special functions needed for the Riesz kernel's spectral density and its
//! periodisation.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

/// Sum of the alternating series `Σ_{k≥0} (−1)^k a_k` by the
/// Cohen–Rodriguez Villegas–Zagier acceleration (error ≈ 5.8^{−n}).
fn alternating_sum(a: impl Fn(usize) -> f64) -> f64 {
    let n = 40usize;
    let mut d = (3.0 + 8f64.sqrt()).powi(n as i32);
    d = 0.5 * (d + 1.0 / d);
    let mut b = -1.0;
    let mut c = -d;
    let mut s = 0.0;
    for k in 0..n {
        c = b - c;
        s += c * a(k);
        let kf = k as f64;
        let nf = n as f64;
        b *= (kf + nf) * (kf - nf) / ((kf + 0.5) * (kf + 1.0));
    }
    s / d
}

/// Riemann zeta function for real `s > 0`, `s ≠ 1`, via the Dirichlet eta
/// function.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 0.0 && s != 1.0, "zeta evaluated outside (0,1)∪(1,∞)");
    let eta = alternating_sum(|k| ((k + 1) as f64).powf(-s));
    eta / (1.0 - 2f64.powf(1.0 - s))
}

/// Dirichlet beta function `β(s) = Σ (−1)^k (2k+1)^{−s}` for `s > 0`.
pub fn dirichlet_beta(s: f64) -> f64 {
    assert!(s > 0.0);
    alternating_sum(|k| ((2 * k + 1) as f64).powf(-s))
}

/// Constant `c(α,q)` in `∫_{R^q} |r|^{−α} e^{−iξ·r} dr = c(α,q) |ξ|^{α−q}`.
pub fn riesz_fourier_constant(alpha: f64, q: usize) -> f64 {
    let qf = q as f64;
    PI.powf(qf / 2.0) * 2f64.powf(qf - alpha) * gamma((qf - alpha) / 2.0) / gamma(alpha / 2.0)
}

/// Offset `c` such that the zero-mode-free periodisation of `|r|^{−α}` on the
/// unit torus equals `|r|^{−α} − c + O(|r|²)` near the origin.
///
/// For `q = 1` this is `−2ζ(α)`; for `q = 2` it is minus the Epstein zeta
/// function of the square lattice, `−4ζ(α/2)β(α/2)`.
pub fn riesz_periodization_offset(alpha: f64, q: usize) -> f64 {
    match q {
        1 => -2.0 * zeta(alpha),
        2 => -4.0 * zeta(alpha / 2.0) * dirichlet_beta(alpha / 2.0),
        _ => panic!("only q ∈ {{1,2}} supported"),
    }
}
