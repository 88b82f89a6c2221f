//! Command dispatch and artifact writing.
//!
//! Each run writes into `<output_dir>/<command>-<digest12>/`: its artifacts,
//! a `manifest.json`, and on failure a `FAILED` marker holding the error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use shelab_core::analysis::{
    default_lags, default_psi, gradient_bins, holder_exponent, in_monitor_path, uniqueness_sweep, write_bins_csv,
    write_phase_csv, MonitorParams,
};
use shelab_core::heat_kernel::{self, KernelLemmaReport, LemmaId, OutsideTailParams, QuadratureOptions, WeightExponents};
use shelab_core::snapshot;
use shelab_core::solver::{paired_solve, solve, Outcome, RunResult};
use shelab_core::yw::{self, ScaleParams};
use shelab_core::Field;

use crate::config::{Command, ConfigError, ExperimentConfig};

#[derive(Debug)]
pub enum RunError {
    /// The configuration was rejected before any work (exit code 1).
    Validation(ConfigError),
    /// The command failed while running (exit code 2).
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(e) => write!(f, "invalid configuration: {e}"),
            RunError::Runtime(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

type Step<T> = std::result::Result<T, String>;

fn rt<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Collects the files a command writes, relative to the run directory.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> Step<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(rt)?;
        }
        self.files.push(name.to_string());
        Ok(p)
    }

    fn create(&mut self, name: &str) -> Step<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name)?).map_err(rt)?))
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Step<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(rt)?;
        w.write_all(b"\n").map_err(rt)?;
        w.flush().map_err(rt)
    }

    fn csv(&mut self, name: &str) -> Step<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name)?))
    }

    fn snapshot(&mut self, name: &str, field: &Field, t: f64) -> Step<()> {
        snapshot::save(&self.path(&format!("{name}.shef"))?, field, t).map_err(rt)?;
        if field.grid().dim() == 1 {
            let w = self.create(&format!("{name}.csv"))?;
            snapshot::write_csv(w, field).map_err(rt)?;
        }
        Ok(())
    }
}

/// Validates `cfg`, runs its command and writes the manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf, RunError> {
    cfg.validate().map_err(RunError::Validation)?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| RunError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let marker = dir.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| RunError::Runtime(e.to_string()))?;
    }
    let start = Instant::now();
    let mut art = Artifacts { dir: dir.clone(), files: Vec::new() };
    let outcome = match cfg.command {
        Command::Simulate => simulate(cfg, &mut art),
        Command::Paired => paired(cfg, &mut art),
        Command::Sweep => sweep(cfg, &mut art),
        Command::VerifyKernels => verify_kernels(cfg, &mut art),
        Command::VerifyYw => verify_yw(cfg, &mut art),
        Command::Analyze => analyze(cfg, &mut art),
    };
    let seed = match (cfg.command, &cfg.sweep) {
        (Command::Sweep, Some(s)) => s.master_seed,
        _ => cfg.master_seed,
    };
    let manifest = json!({
        "command": cfg.command,
        "config_digest": cfg.digest(),
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "status": if outcome.is_ok() { "ok" } else { "failed" },
        "error": outcome.as_ref().err(),
        "artifacts": art.files,
        "config": cfg,
    });
    let write_manifest = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()
    };
    if let Err(e) = outcome {
        // the marker goes first so that a failing manifest write still leaves it
        let _ = fs::write(&marker, format!("{e}\n"));
        let _ = write_manifest();
        return Err(RunError::Runtime(e));
    }
    write_manifest().map_err(|e| RunError::Runtime(format!("cannot write manifest: {e}")))?;
    Ok(dir)
}

fn write_diagnostics(art: &mut Artifacts, name: &str, r: &RunResult) -> Step<()> {
    let mut w = art.csv(name)?;
    w.write_record(["t", "sup_norm", "mean"]).map_err(rt)?;
    let d = &r.diagnostics;
    for k in 0..d.times.len() {
        w.serialize((d.times[k], d.sup_norm[k], d.mean[k])).map_err(rt)?;
    }
    w.flush().map_err(rt)
}

fn blow_up_message(r: &RunResult) -> Option<String> {
    match r.outcome {
        Outcome::BlewUp { step, time } => Some(format!(
            "non-finite value at step {step} (t = {time}); last finite snapshot at t = {}",
            r.final_time()
        )),
        _ => None,
    }
}

fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts) -> Step<()> {
    let sc = cfg.solve_config().map_err(rt)?;
    let r = solve(&sc).map_err(rt)?;
    for (k, s) in r.snapshots.iter().enumerate() {
        art.snapshot(&format!("snapshots/snap_{k:05}"), &s.field, s.t)?;
    }
    write_diagnostics(art, "diagnostics.csv", &r)?;
    art.json(
        "run.json",
        &json!({
            "provenance": r.provenance,
            "outcome": r.outcome,
            "truncation_hit": r.diagnostics.truncation_hit,
            "snapshot_times": r.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(),
        }),
    )?;
    blow_up_message(&r).map_or(Ok(()), Err)
}

fn paired(cfg: &ExperimentConfig, art: &mut Artifacts) -> Step<()> {
    let sc = cfg.solve_config().map_err(rt)?;
    let ic1 = sc.ic.clone();
    let ic2 = match &cfg.paired.ic2 {
        Some(p) => p.build(&sc.grid).map_err(rt)?,
        None => ic1.map(|v| v + cfg.paired.perturbation),
    };
    let run = paired_solve(&sc, ic1, ic2).map_err(rt)?;
    let mut w = art.csv("distance.csv")?;
    w.write_record(["t", "d"]).map_err(rt)?;
    for (t, d) in run.times.iter().zip(&run.distance) {
        w.serialize((t, d)).map_err(rt)?;
    }
    w.flush().map_err(rt)?;
    for (k, (a, b)) in run.first.snapshots.iter().zip(&run.second.snapshots).enumerate() {
        let u = a.field.sub(&b.field).map_err(rt)?;
        art.snapshot(&format!("u/u_{k:05}"), &u, a.t)?;
    }
    art.snapshot("final_1", run.first.final_field(), run.first.final_time())?;
    art.snapshot("final_2", run.second.final_field(), run.second.final_time())?;
    write_diagnostics(art, "diagnostics_1.csv", &run.first)?;
    write_diagnostics(art, "diagnostics_2.csv", &run.second)?;
    art.json(
        "run.json",
        &json!({
            "provenance": run.first.provenance,
            "outcome": run.first.outcome,
            "final_distance": run.distance.last(),
        }),
    )?;
    blow_up_message(&run.first).map_or(Ok(()), Err)
}

fn sweep(cfg: &ExperimentConfig, art: &mut Artifacts) -> Step<()> {
    let s = cfg.sweep.as_ref().ok_or("missing sweep section")?;
    let table = uniqueness_sweep(s).map_err(rt)?;
    let w = art.create("phase_table.csv")?;
    write_phase_csv(&table, w).map_err(rt)
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn kernel_report(id: LemmaId, alpha: f64) -> shelab_core::Result<Vec<KernelLemmaReport>> {
    let opts = QuadratureOptions::default();
    let xs: Vec<Vec<f64>> = (0..=40).map(|k| vec![-3.0 + 0.15 * k as f64]).collect();
    Ok(match id {
        LemmaId::A_1 => vec![heat_kernel::verify_algebra_bound(1.0, 2.0, &[1.0, 3.0, 10.0, 50.0])?],
        LemmaId::L4_2 => vec![heat_kernel::verify_deriv_bound(&[0.01, 0.1, 1.0], &xs)?],
        LemmaId::L4_3 => vec![
            heat_kernel::cross_integral_time_sweep(&geomspace(1e-7, 1e-5, 5), 0.5, alpha, &opts)?,
            heat_kernel::cross_integral_offset_sweep(0.01, &geomspace(1e-4, 1e-3, 4), alpha, &opts)?,
        ],
        LemmaId::L4_4 => vec![heat_kernel::verify_weighted_integral(
            0.1,
            0.3,
            WeightExponents { r1: 0.5, r2: 0.5, r3: 0.5 },
            alpha,
            1,
            None,
            &opts,
        )?],
        LemmaId::L4_5 => vec![heat_kernel::verify_outside_tail(
            &OutsideTailParams {
                s: 0.0,
                t: 0.01,
                t_prime: 0.015,
                x: vec![0.0],
                x_prime: vec![0.05],
                eta0: 0.2,
                eta1: 0.5,
                p: 0.0,
                r: 0.0,
                alpha,
            },
            &opts,
        )?],
        LemmaId::A_2a => vec![heat_kernel::verify_spatial_difference(0.05, &[0.4], &[-0.3], 1)?],
        LemmaId::A_2b => vec![heat_kernel::verify_temporal_difference(0.1, 0.15, &[0.2], 1)?],
        LemmaId::A_3 => {
            let ys: Vec<f64> = (1..=30).map(|k| 0.02 * k as f64).collect();
            vec![heat_kernel::tail_indicator_scan(0.01, 0.01, 0.2, &ys)?]
        }
    })
}

fn verify_kernels(cfg: &ExperimentConfig, art: &mut Artifacts) -> Step<()> {
    let mut reports = Vec::new();
    for &id in &cfg.kernels.lemmas {
        reports.extend(kernel_report(id, cfg.kernels.alpha).map_err(|e| format!("{id}: {e}"))?);
    }
    let w = art.create("kernel_reports.csv")?;
    heat_kernel::write_reports_csv(&reports, w).map_err(rt)?;
    let mut s = art.csv("kernel_summary.csv")?;
    s.write_record(["lemma_id", "rows", "empirical_constant", "scaling_slope"]).map_err(rt)?;
    for r in &reports {
        let slope = r.scaling_slope.map(|v| v.to_string()).unwrap_or_default();
        s.write_record([r.lemma_id.to_string(), r.rows.len().to_string(), r.empirical_constant.to_string(), slope])
            .map_err(rt)?;
    }
    s.flush().map_err(rt)
}

fn verify_yw(cfg: &ExperimentConfig, art: &mut Artifacts) -> Step<()> {
    let section = cfg.yw.clone().unwrap_or_default();
    let mut w = art.csv("mollifier.csv")?;
    w.write_record([
        "n",
        "quad_resolution",
        "psi_integral",
        "max_psi_nx",
        "max_abs_phi_prime",
        "sup_gap",
        "kappa",
        "a_prev",
        "max_phi_second_nx",
        "min_psi",
        "ok",
        "violations",
    ])
    .map_err(rt)?;
    let mut failed = Vec::new();
    for n in 1..=section.n_max {
        let pair = yw::make_mollifier(n, section.quad_resolution).map_err(rt)?;
        let r = yw::phi_props_check(&pair);
        if !r.ok() {
            failed.push(n);
        }
        w.serialize((
            r.n,
            r.quad_resolution,
            r.psi_integral,
            r.max_psi_nx,
            r.max_abs_phi_prime,
            r.sup_gap,
            r.kappa,
            r.a_prev,
            r.max_phi_second_nx,
            r.min_psi,
            r.ok(),
            r.violations.join("; "),
        ))
        .map_err(rt)?;
    }
    w.flush().map_err(rt)?;

    let gamma = section.gamma.unwrap_or_else(|| cfg.coefficient_spec().gamma_meta);
    let alpha = section.alpha.unwrap_or(cfg.noise.alpha);
    if gamma > 0.5 && gamma < 1.0 && alpha > 0.0 && alpha < 2.0 {
        let seq = yw::gamma_seq(gamma, alpha).map_err(rt)?;
        art.json("gamma_sequence.json", &serde_json::to_value(&seq).map_err(rt)?)?;
    }
    if let Some(eps) = cfg.eps_grid().map_err(rt)? {
        art.json("eps_grid.json", &serde_json::to_value(&eps).map_err(rt)?)?;
        let nm = yw::n_m(eps.eps1, 1);
        let mut w = art.csv("length_scales.csv")?;
        w.write_record(["n", "i", "beta_i", "ln_l_n", "ln_sqrt_a_n", "ln_l_bar_n", "lemma36_holds"]).map_err(rt)?;
        for n in [nm + 1, nm + 10, nm + 100] {
            for i in 0..eps.l {
                let p = ScaleParams {
                    beta_i: eps.betas[i],
                    beta_next: eps.betas[i + 1],
                    gamma: eps.gamma,
                    alpha: eps.alpha,
                    eps1: eps.eps1,
                    eps0: eps.eps0,
                    m: 1,
                };
                let s = yw::length_scales(n as u32, &p);
                w.serialize((n, i, eps.betas[i], s.ln_l_n, s.ln_sqrt_a_n, s.ln_l_bar_n, s.lemma36_holds))
                    .map_err(rt)?;
            }
        }
        w.flush().map_err(rt)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("mollifier property checks failed for n = {failed:?}"))
    }
}

fn load_series(paths: &[PathBuf]) -> Step<Vec<(f64, Field, &Path)>> {
    let mut out = Vec::new();
    for p in paths {
        let (f, t) = snapshot::load(p).map_err(|e| format!("{}: {e}", p.display()))?;
        out.push((t, f, p.as_path()));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    if out.windows(2).any(|w| w[0].1.grid() != w[1].1.grid()) {
        return Err("input snapshots live on different grids".into());
    }
    Ok(out)
}

fn analyze(cfg: &ExperimentConfig, art: &mut Artifacts) -> Step<()> {
    let a = &cfg.analyze;
    let loaded = load_series(&a.inputs)?;
    let grid = *loaded[0].1.grid();
    let lags = a.lags.clone().unwrap_or_else(|| default_lags(grid.points()));
    let mut w = art.csv("holder.csv")?;
    w.write_record(["file", "t", "zeta", "std_err", "note"]).map_err(rt)?;
    for (t, f, p) in &loaded {
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match holder_exponent(f, &lags) {
            Ok(h) => w.serialize((name, t, h.zeta, h.std_err, "")).map_err(rt)?,
            Err(e) => w.serialize((name, t, f64::NAN, f64::NAN, e.to_string())).map_err(rt)?,
        }
    }
    w.flush().map_err(rt)?;
    let series: Vec<(f64, Field)> = loaded.iter().map(|(t, f, _)| (*t, f.clone())).collect();
    let t_last = series.last().map(|s| s.0).unwrap_or(0.0);
    if let Some(n) = a.bins_n {
        let eps = cfg.eps_grid().map_err(rt)?.ok_or("gradient bins need yw.eps1 and yw.eps0")?;
        let k0 = a.k0.unwrap_or(grid.extent() / 2.0);
        let bins = gradient_bins(&series, t_last, n, &eps, k0).map_err(rt)?;
        let w = art.create("bins.csv")?;
        write_bins_csv(&bins.bins, w).map_err(rt)?;
    }
    if let Some(n) = a.monitor_n {
        let psi = default_psi(&grid).map_err(rt)?;
        let p = MonitorParams { n, gamma: cfg.coefficient_spec().gamma_meta, alpha: cfg.noise.alpha };
        let path = in_monitor_path(&series, t_last, &p, &psi).map_err(rt)?;
        let mut w = art.csv("monitor.csv")?;
        w.write_record(["t", "I_n"]).map_err(rt)?;
        for (t, v) in path {
            w.serialize((t, v)).map_err(rt)?;
        }
        w.flush().map_err(rt)?;
    }
    Ok(())
}
