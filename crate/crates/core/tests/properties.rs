use std::f64::consts::PI;

use proptest::prelude::*;

use shelab_core::analysis::{default_psi, gradient_bins, in_monitor_path, split_u, MonitorParams};
use shelab_core::grid::{heat_semigroup_apply, spectral_gradient};
use shelab_core::noise::{sample_increment, NoiseSpec};
use shelab_core::solver::{paired_solve, solve, Coefficient, CoefficientSpec, SolveConfig};
use shelab_core::yw::{self, eps_grid, gamma_seq, length_scales, ln_a, n_m, ScaleParams};
use shelab_core::{Field, TorusGrid};

/// Trigonometric polynomial with the given coefficients on modes 1, 2, ….
fn trig_field(g: TorusGrid, coef: &[(f64, f64)]) -> Field {
    Field::from_fn(g, |x| {
        let y = if x.len() > 1 { x[1] } else { 0.0 };
        coef.iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = 2.0 * PI * (k + 1) as f64 / g.extent();
                a * (w * x[0]).cos() + b * (w * (x[0] + 0.5 * y)).sin()
            })
            .sum::<f64>()
            + 0.3
    })
    .unwrap()
}

fn coefs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..6)
}

fn grid(dim: usize) -> TorusGrid {
    TorusGrid::new(dim, 1.0, if dim == 1 { 64 } else { 16 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn semigroup_mass_contraction(c in coefs(), s in 0.001..1.0f64, t in 0.001..1.0f64, dim in 1usize..=2) {
        let g = grid(dim);
        let f = trig_field(g, &c);
        let pst = heat_semigroup_apply(&heat_semigroup_apply(&f, t).unwrap(), s).unwrap();
        let direct = heat_semigroup_apply(&f, s + t).unwrap();
        prop_assert!(pst.sup_distance(&direct).unwrap() < 1e-10);
        prop_assert!((direct.mean() - f.mean()).abs() < 1e-12);
        prop_assert!(direct.sup_norm() <= f.sup_norm() + 1e-12);
    }

    #[test]
    fn gradient_commutes_with_heat_flow(c in coefs(), t in 0.001..0.5f64, dim in 1usize..=2) {
        let g = grid(dim);
        let f = trig_field(g, &c);
        let a = spectral_gradient(&heat_semigroup_apply(&f, t).unwrap());
        let b: Vec<Field> = spectral_gradient(&f).iter().map(|d| heat_semigroup_apply(d, t).unwrap()).collect();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.sup_distance(y).unwrap() < 1e-10);
        }
    }

    #[test]
    fn increments_are_keyed_and_pairings_linear(seed in any::<u64>(), stream in any::<u64>(), step in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let g = TorusGrid::new(1, 1.0, 64).unwrap();
        let spec = NoiseSpec::new(0.5).with_seed(seed, stream);
        let w1 = sample_increment(&g, &spec, 0.01, step).unwrap().field;
        let w2 = sample_increment(&g, &spec, 0.01, step).unwrap().field;
        prop_assert!(w1.values().iter().zip(w2.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let phi = trig_field(g, &[(1.0, 0.5)]);
        let psi = trig_field(g, &[(0.0, 0.0), (0.2, -1.0)]);
        let combo = phi.scale(a).add(&psi.scale(b)).unwrap();
        let lhs = w1.pairing(&combo).unwrap();
        let rhs = a * w1.pairing(&phi).unwrap() + b * w1.pairing(&psi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn a_sequence_recursion(n in 1u32..5000) {
        // a_{n+1}^{-1} = a_n^{-1-2/n}
        let lhs = -ln_a(n + 1);
        let rhs = -ln_a(n) * (1.0 + 2.0 / n as f64);
        prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs);
    }

    #[test]
    fn gamma_sequence_brackets(gamma in 0.51..0.999f64, frac in 0.01..0.99f64) {
        let alpha = frac * (2.0 * (2.0 * gamma - 1.0)).min(1.9);
        let s = gamma_seq(gamma, alpha).unwrap();
        prop_assert!(s.values.windows(2).all(|w| w[1] > w[0]));
        let mb = s.m_bar.unwrap();
        prop_assert!(s.values[mb] <= 2.0 && s.values[mb + 1] > 2.0);
        prop_assert!(s.values.iter().all(|v| *v < s.gamma_inf));
        prop_assert!(s.closed_form_error < 1e-12);
    }

    #[test]
    fn eps_grid_and_lemma36(gamma in 0.55..0.99f64, fa in 0.05..0.95f64, f1 in 0.05..0.95f64, f0 in 0.05..0.95f64, pick in 0.0..1.0f64, extra in 1u64..500) {
        let alpha = fa * (2.0 * (2.0 * gamma - 1.0)).min(1.0);
        let eps1 = f1 * yw::eps1_bound(gamma, alpha);
        let eps0 = f0 * yw::eps0_bound(gamma, eps1);
        let e = eps_grid(gamma, alpha, eps1, eps0).unwrap();
        prop_assert_eq!(e.betas.len(), e.l + 2);
        prop_assert!(e.betas.windows(2).all(|w| w[1] > w[0]));
        prop_assert!((e.betas[e.l + 1] - (0.5 - eps1)).abs() < 1e-15);
        prop_assert!(e.l as f64 * eps0 <= 0.5 - 6.0 * eps1 + 1e-12);
        let i = ((pick * (e.l + 1) as f64) as usize).min(e.l);
        let n = (n_m(eps1, 1) + extra) as u32;
        let p = ScaleParams { beta_i: e.betas[i], beta_next: e.betas[i + 1], gamma, alpha, eps1, eps0, m: 1 };
        prop_assert!(length_scales(n, &p).lemma36_holds);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn deterministic_solve_is_heat_flow(c in coefs(), steps in 1usize..60, dim in 1usize..=2) {
        let g = grid(dim);
        let f = trig_field(g, &c);
        let dt = 2e-3;
        let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), CoefficientSpec::deterministic(), steps as f64 * dt, dt, f.clone());
        let r = solve(&cfg).unwrap();
        let want = heat_semigroup_apply(&f, steps as f64 * dt).unwrap();
        prop_assert!(r.final_field().sup_distance(&want).unwrap() < 1e-10);
    }

    #[test]
    fn linear_drift_solve_is_affine(c1 in coefs(), c2 in coefs(), lam in -2.0..2.0f64, slope in -3.0..3.0f64) {
        let g = grid(1);
        let (f, h) = (trig_field(g, &c1), trig_field(g, &c2));
        let coeff = CoefficientSpec::new(Coefficient::Zero, Coefficient::Linear { slope });
        let run = |ic: Field| {
            let cfg = SolveConfig::new(g, NoiseSpec::new(0.5), coeff.clone(), 0.05, 1e-3, ic);
            solve(&cfg).unwrap().final_field().clone()
        };
        let mix = f.scale(lam).add(&h.scale(1.0 - lam)).unwrap();
        let lhs = run(mix);
        let rhs = run(f).scale(lam).add(&run(h).scale(1.0 - lam)).unwrap();
        prop_assert!(lhs.sup_distance(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn paired_solve_consumes_one_increment_per_step(seed in any::<u64>(), steps in 1usize..40, sub in 1u64..4) {
        let g = grid(1);
        let mut cfg = SolveConfig::new(
            g,
            NoiseSpec::new(0.5).with_seed(seed, 3),
            CoefficientSpec::power_abs(0.75),
            steps as f64 * 1e-3,
            1e-3,
            Field::constant(g, 0.1),
        );
        cfg.noise_substeps = sub;
        let run = paired_solve(&cfg, Field::constant(g, 0.1), Field::constant(g, 0.2)).unwrap();
        prop_assert_eq!(run.first.provenance.increments_consumed, steps as u64 * sub);
        prop_assert_eq!(run.first.provenance.steps_taken, steps);
        // a copy of the first track started alone sees the same noise
        let alone = solve(&cfg).unwrap();
        let bits = |f: &Field| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(alone.final_field()), bits(run.first.final_field()));
    }

    #[test]
    fn split_identity_on_trajectories(seed in any::<u64>(), t_pick in 0.0..1.0f64, d_pick in 0.0..1.0f64) {
        let g = grid(1);
        let mut cfg = SolveConfig::new(
            g,
            NoiseSpec::new(0.5).with_seed(seed, 0),
            CoefficientSpec::power_abs(0.75),
            0.1,
            1e-3,
            Field::zeros(g),
        );
        cfg.snapshot_every = 2;
        let run = paired_solve(&cfg, Field::zeros(g), trig_field(g, &[(0.5, 0.2)])).unwrap();
        let series: Vec<(f64, Field)> = run.first.snapshots.iter().zip(&run.second.snapshots)
            .map(|(a, b)| (a.t, a.field.sub(&b.field).unwrap()))
            .collect();
        let t = series[((series.len() - 1) as f64 * t_pick) as usize].0;
        let delta = 0.05 * d_pick;
        let sp = split_u(&series, t, delta).unwrap();
        prop_assert!(sp.u1.add(&sp.u2).unwrap().sup_distance(&sp.u).unwrap() < 1e-12);
        for (a, b) in sp.grad_u1.iter().zip(spectral_gradient(&sp.u1)) {
            prop_assert!(a.sup_distance(&b).unwrap() < 1e-12);
        }
        let z = split_u(&series, t, 0.0).unwrap();
        prop_assert_eq!(&z.u1, &z.u);
        prop_assert_eq!(z.u2.sup_norm(), 0.0);
    }

    #[test]
    fn bins_partition_admissible_sites(c in coefs(), amp in 0.0..0.2f64, n in 1u32..=2) {
        let g = TorusGrid::new(1, 1.0, 128).unwrap();
        let f = trig_field(g, &c).map(|v| amp * (v - 0.3));
        let series: Vec<(f64, Field)> = (0..=20)
            .map(|k| (k as f64 * 0.01, heat_semigroup_apply(&f, k as f64 * 0.01).unwrap()))
            .collect();
        let e = eps_grid(0.9, 0.5, 0.02, 0.0004).unwrap();
        let r = gradient_bins(&series, 0.2, n, &e, 0.5).unwrap();
        let h = g.spacing();
        let counts: Vec<f64> = r.bins.iter().map(|b| (b.measure / h).round()).collect();
        prop_assert!(r.bins.iter().all(|b| b.measure >= 0.0));
        prop_assert_eq!(counts.iter().sum::<f64>(), (r.admissible_measure / h).round());
    }

    #[test]
    fn monitor_is_nondecreasing(seed in any::<u64>(), n in 1u32..=2) {
        let g = grid(1);
        let mut cfg = SolveConfig::new(
            g,
            NoiseSpec::new(0.5).with_seed(seed, 1),
            CoefficientSpec::power_abs(0.75),
            0.05,
            1e-3,
            Field::zeros(g),
        );
        cfg.snapshot_every = 1;
        let run = paired_solve(&cfg, Field::zeros(g), Field::constant(g, 1e-3)).unwrap();
        let series: Vec<(f64, Field)> = run.first.snapshots.iter().zip(&run.second.snapshots)
            .map(|(a, b)| (a.t, a.field.sub(&b.field).unwrap()))
            .collect();
        let psi = default_psi(&g).unwrap();
        let path = in_monitor_path(&series, 0.05, &MonitorParams { n, gamma: 0.75, alpha: 0.5 }, &psi).unwrap();
        prop_assert!(path.windows(2).all(|w| w[1].1 >= w[0].1));
        prop_assert!(path.iter().all(|p| p.1 >= 0.0));
    }
}
