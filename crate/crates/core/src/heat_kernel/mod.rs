//! The Gaussian heat kernel on `R^q`,
//!
//! ```text
//! p_t(x) = (2πt)^{−q/2} exp(−|x|²/2t),   p_{t,l}(x) = ∂_{x_l} p_t(x) = −(x_l/t) p_t(x),
//! ```
//!
//! and numerical verifiers for the kernel estimates that enter the
//! uniqueness argument. Verifiers never assert a constant: each returns a
//! [`KernelLemmaReport`] holding the left-hand side, the envelope without
//! its constant, and their ratio, so that the empirical constant and any
//! scaling exponent can be read off.

mod lemmas;
pub mod quadrature;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::CompositeGauss;

pub use lemmas::*;
pub use quadrature::QuadratureOptions;

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::param("t", format!("time must be positive, got {t}")));
    }
    Ok(())
}

fn check_axis(l: usize, q: usize) -> Result<()> {
    if l == 0 || l > q {
        return Err(Error::param("l", format!("axis must lie in 1..={q}, got {l}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn pt_r2(t: f64, r2: f64, q: usize) -> f64 {
    (2.0 * std::f64::consts::PI * t).powf(-(q as f64) / 2.0) * (-r2 / (2.0 * t)).exp()
}

#[inline]
pub(crate) fn ln_pt_r2(t: f64, r2: f64, q: usize) -> f64 {
    -(q as f64) / 2.0 * (2.0 * std::f64::consts::PI * t).ln() - r2 / (2.0 * t)
}

#[inline]
pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `p_t(x)` with `q = x.len()`.
pub fn pt(t: f64, x: &[f64]) -> Result<f64> {
    check_time(t)?;
    Ok(pt_r2(t, norm2(x), x.len()))
}

/// `p_{t,l}(x) = −(x_l/t) p_t(x)`; the axis `l` is 1-based.
pub fn pt_deriv(t: f64, x: &[f64], l: usize) -> Result<f64> {
    check_time(t)?;
    check_axis(l, x.len())?;
    Ok(deriv_raw(t, x, l))
}

#[inline]
pub(crate) fn deriv_raw(t: f64, x: &[f64], l: usize) -> f64 {
    -(x[l - 1] / t) * pt_r2(t, norm2(x), x.len())
}

/// `∫ p_t` over the cube `[−12√t, 12√t]^q`, by tensor Gauss–Legendre.
pub fn truncated_mass(t: f64, q: usize) -> Result<f64> {
    check_time(t)?;
    if !(1..=2).contains(&q) {
        return Err(Error::param("q", "dimension must be 1 or 2"));
    }
    let r = 12.0 * t.sqrt();
    let g = CompositeGauss::new(16);
    let one_d = |s: f64| pt_r2(t, s * s, 1);
    let m1 = g.integrate(one_d, -r, r, 48);
    Ok(match q {
        1 => m1,
        // the 2-d kernel factorises; integrate the product explicitly anyway
        _ => g.integrate(|x| g.integrate(|y| pt_r2(t, x * x + y * y, 2), -r, r, 48), -r, r, 48),
    })
}

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LemmaId {
    L4_2,
    L4_3,
    L4_4,
    L4_5,
    A_1,
    A_2a,
    A_2b,
    A_3,
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LemmaId::L4_2 => "L4_2",
            LemmaId::L4_3 => "L4_3",
            LemmaId::L4_4 => "L4_4",
            LemmaId::L4_5 => "L4_5",
            LemmaId::A_1 => "A_1",
            LemmaId::A_2a => "A_2a",
            LemmaId::A_2b => "A_2b",
            LemmaId::A_3 => "A_3",
        };
        f.write_str(s)
    }
}

/// One parameter point of a verifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaRow {
    pub params: serde_json::Value,
    pub lhs: f64,
    /// Right-hand side without its unspecified constant.
    pub envelope: f64,
    pub ratio: f64,
}

impl LemmaRow {
    pub fn new(params: serde_json::Value, lhs: f64, envelope: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / envelope };
        LemmaRow { params, lhs, envelope, ratio }
    }

    /// Row whose ratio was computed separately (e.g. in the log domain,
    /// where `lhs` or `envelope` alone under- or overflow).
    pub fn with_ratio(params: serde_json::Value, lhs: f64, envelope: f64, ratio: f64) -> Self {
        LemmaRow { params, lhs, envelope, ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelLemmaReport {
    pub lemma_id: LemmaId,
    pub rows: Vec<LemmaRow>,
    /// Largest ratio over the rows.
    pub empirical_constant: f64,
    pub scaling_slope: Option<f64>,
}

impl KernelLemmaReport {
    pub fn from_rows(lemma_id: LemmaId, rows: Vec<LemmaRow>) -> Result<Self> {
        for r in &rows {
            let ok = [r.lhs, r.envelope, r.ratio]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0);
            if !ok {
                return Err(Error::param(
                    "report",
                    format!("{lemma_id}: row {} has lhs {}, envelope {}, ratio {}", r.params, r.lhs, r.envelope, r.ratio),
                ));
            }
        }
        let empirical_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Ok(KernelLemmaReport {
            lemma_id,
            rows,
            empirical_constant,
            scaling_slope: None,
        })
    }

    pub fn with_slope(mut self, slope: Option<f64>) -> Self {
        self.scaling_slope = slope;
        self
    }

    /// Concatenates reports of the same lemma.
    pub fn merge(reports: Vec<KernelLemmaReport>) -> Result<Self> {
        let Some(first) = reports.first() else {
            return Err(Error::param("reports", "nothing to merge"));
        };
        let id = first.lemma_id;
        if reports.iter().any(|r| r.lemma_id != id) {
            return Err(Error::param("reports", "cannot merge reports of different lemmas"));
        }
        let rows = reports.into_iter().flat_map(|r| r.rows).collect();
        Self::from_rows(id, rows)
    }

    pub fn lhs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lhs).collect()
    }

    /// CSV with columns `lemma_id, param_json, lhs, envelope, ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        write_rows(&mut w, std::slice::from_ref(self), true)?;
        w.flush()?;
        Ok(())
    }
}

/// Writes several reports into one CSV table.
pub fn write_reports_csv<W: Write>(reports: &[KernelLemmaReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_rows(&mut w, reports, true)?;
    w.flush()?;
    Ok(())
}

fn write_rows<W: Write>(w: &mut csv::Writer<W>, reports: &[KernelLemmaReport], header: bool) -> Result<()> {
    let wrap = |e: csv::Error| Error::Format(e.to_string());
    if header {
        w.write_record(["lemma_id", "param_json", "lhs", "envelope", "ratio"])
            .map_err(wrap)?;
    }
    for rep in reports {
        for r in &rep.rows {
            w.write_record([
                rep.lemma_id.to_string(),
                r.params.to_string(),
                format!("{:e}", r.lhs),
                format!("{:e}", r.envelope),
                format!("{:e}", r.ratio),
            ])
            .map_err(wrap)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_origin() {
        let v = pt(1.0, &[0.0]).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(pt(0.0, &[0.0]).is_err());
        assert!(pt(-1.0, &[0.0]).is_err());
        assert_eq!(pt(0.3, &[0.7, -0.2]).unwrap(), pt(0.3, &[-0.7, 0.2]).unwrap());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let (t, h) = (0.37, 1e-5);
        for x in [[0.3, -0.5], [-1.1, 0.2], [0.05, 0.9]] {
            for l in 1..=2 {
                let mut xp = x;
                let mut xm = x;
                xp[l - 1] += h;
                xm[l - 1] -= h;
                let fd = (pt(t, &xp).unwrap() - pt(t, &xm).unwrap()) / (2.0 * h);
                let d = pt_deriv(t, &x, l).unwrap();
                assert!((fd - d).abs() < 1e-6 * d.abs(), "{fd} vs {d}");
            }
        }
        assert_eq!(pt_deriv(1.0, &[0.0], 1).unwrap(), 0.0);
        assert!(pt_deriv(1.0, &[0.5], 1).unwrap() < 0.0);
        assert!(pt_deriv(1.0, &[0.5], 2).is_err());
        assert!(pt_deriv(1.0, &[0.5], 0).is_err());
    }

    #[test]
    fn mass_is_one() {
        for q in [1, 2] {
            for t in [0.01, 0.1, 1.0] {
                assert!((truncated_mass(t, q).unwrap() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn report_csv_quotes_json() {
        let rows = vec![
            LemmaRow::new(serde_json::json!({"t": 1.0, "x": [0.5]}), 0.2, 0.4),
            LemmaRow::new(serde_json::json!({"t": 2.0, "x": [0.5]}), 0.3, 0.4),
        ];
        let rep = KernelLemmaReport::from_rows(LemmaId::L4_2, rows).unwrap();
        assert!((rep.empirical_constant - 0.75).abs() < 1e-15);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[0][0], "L4_2");
        let p: serde_json::Value = serde_json::from_str(&recs[0][1]).unwrap();
        assert_eq!(p["x"][0], 0.5);
    }

    #[test]
    fn report_rejects_negative_rows() {
        let rows = vec![LemmaRow::new(serde_json::json!({}), -1.0, 1.0)];
        assert!(KernelLemmaReport::from_rows(LemmaId::A_1, rows).is_err());
    }
}
