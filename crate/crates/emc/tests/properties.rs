use std::f64::consts::PI;

use emc::config::{desk_preset, RunConfig, PRESETS};
use emc::driver::Snapshot;
use emc::io::{parse_csv, snapshot_csv};
use emc::linalg::{bicgstab, solve_tridiagonal, CsrMatrix};
use emc::macro_solver::{chi, diffusion_coefficient, weight_theta, CorrectionEquation, ThetaForm};
use emc::mesh::{harmonic_interface_opacity, interface_temperature, Geometry, Mesh, SlabRegion};
use emc::physics::{
    group_fraction, group_opacity, group_planck, group_planck_derivative, FrequencyGroupGrid, OpacityModel,
    PhysicalConstants, PlanckTable,
};
use emc::transport::{allocate, bucket_point, bucket_weights, clamp_slope, sample_tilted, tilted_pdf};
use proptest::prelude::*;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

/// Full-span grid [1e-6, 1e4] keV split at `g - 1` log-spaced interior edges.
fn full_span(groups: usize) -> FrequencyGroupGrid {
    FrequencyGroupGrid::logarithmic(groups, 1e-6, 1e4).unwrap()
}

proptest! {
    #[test]
    fn full_span_fractions_sum_to_one(t in log_uniform(1e-3, 10.0), groups in 1usize..60) {
        let table = PlanckTable::evaluate(&full_span(groups), t).unwrap();
        let b: f64 = table.b.iter().sum();
        let d: f64 = table.dcoef.iter().sum();
        // The exact sum is at most 1; a float sum of G terms may round up by G ulps.
        prop_assert!(b <= 1.0 + groups as f64 * f64::EPSILON && b >= 1.0 - 1e-8, "sum b = {b}");
        prop_assert!((d - 1.0).abs() < 1e-8, "sum dcoef = {d}");
        prop_assert!(table.b.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn group_fraction_is_additive(
        t in log_uniform(1e-3, 10.0),
        e1 in log_uniform(1e-5, 1.0),
        r1 in 1.01f64..50.0,
        r2 in 1.01f64..50.0,
    ) {
        let e2 = e1 * r1;
        let e3 = e2 * r2;
        let whole = group_fraction(&FrequencyGroupGrid::new(vec![e1, e3]).unwrap(), 0, t).unwrap();
        let split = FrequencyGroupGrid::new(vec![e1, e2, e3]).unwrap();
        let parts = group_fraction(&split, 0, t).unwrap() + group_fraction(&split, 1, t).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 + 1e-12 * whole, "{whole} vs {parts}");
    }

    #[test]
    fn planck_derivative_matches_finite_difference(t in log_uniform(1e-2, 10.0), groups in 1usize..30, g in 0usize..30) {
        let grid = FrequencyGroupGrid::logarithmic(groups, 1e-3, 100.0).unwrap();
        let g = g % groups;
        let k = PhysicalConstants::default();
        let h = 1e-5 * t;
        let fd = (group_planck(&grid, g, t + h, &k).unwrap() - group_planck(&grid, g, t - h, &k).unwrap()) / (2.0 * h);
        let an = group_planck_derivative(&grid, g, t, &k).unwrap();
        let scale = 4.0 * k.a * k.c * t.powi(3) / (4.0 * PI);
        prop_assert!((fd - an).abs() <= 1e-6 * scale, "fd {fd} analytic {an}");
    }

    #[test]
    fn group_opacity_lies_between_edge_values(t in log_uniform(1e-3, 10.0), e1 in log_uniform(1e-4, 10.0), r in 1.001f64..100.0) {
        let grid = FrequencyGroupGrid::new(vec![e1, e1 * r]).unwrap();
        for model in [
            OpacityModel::PowThreeSqrtT { sigma0: 10.0 },
            OpacityModel::LarsenType { sigma0: 1000.0 },
        ] {
            let s = group_opacity(&model, &grid, 0, t).unwrap();
            let a = model.spectral(e1, t).unwrap();
            let b = model.spectral(e1 * r, t).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(s >= lo * (1.0 - 1e-9) && s <= hi * (1.0 + 1e-9), "{model:?}: {lo} <= {s} <= {hi}");
        }
        let c = OpacityModel::Constant { sigma0: 3.5 };
        prop_assert_eq!(group_opacity(&c, &grid, 0, t).unwrap(), 3.5);
    }

    #[test]
    fn interface_averages_are_bounded(
        si in log_uniform(1e-3, 1e6),
        sj in log_uniform(1e-3, 1e6),
        di in 1e-3f64..1.0,
        dj in 1e-3f64..1.0,
        ti in 1e-3f64..10.0,
        tj in 1e-3f64..10.0,
    ) {
        let s = harmonic_interface_opacity(si, sj, di, dj).unwrap();
        prop_assert!(s >= si.min(sj) * (1.0 - 1e-12) && s <= si.max(sj) * (1.0 + 1e-12));
        let swapped = harmonic_interface_opacity(sj, si, dj, di).unwrap();
        prop_assert!((s - swapped).abs() <= 1e-12 * s);
        let t = interface_temperature(ti, tj, di, dj);
        prop_assert!(t >= ti.min(tj) * (1.0 - 1e-12) && t <= ti.max(tj) * (1.0 + 1e-12));
    }

    #[test]
    fn allocation_is_proportional_and_complete(
        energies in prop::collection::vec(prop_oneof![Just(0.0), 1e-6f64..1e3], 1..40),
        n in 0usize..5000,
    ) {
        let counts = allocate(&energies, n);
        let total: f64 = energies.iter().sum();
        if total > 0.0 {
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for (c, e) in counts.iter().zip(&energies) {
                prop_assert!((*c as f64 - e / total * n as f64).abs() < 1.0 + 1e-9);
            }
        } else {
            prop_assert!(counts.iter().all(|&c| c == 0));
        }
        let w = bucket_weights(&energies, &counts);
        let carried: f64 = w.iter().zip(&counts).map(|(w, &c)| w * c as f64).sum();
        if counts.iter().any(|&c| c > 0) {
            prop_assert!((carried - total).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn tilted_sampling_inverts_the_cdf(u in 0.0f64..1.0, s in -1e3f64..1e3, mean in 1e-3f64..10.0, dx in 1e-3f64..1.0) {
        let k = clamp_slope(s, mean, dx) * dx / mean;
        prop_assert!(k.abs() <= 2.0 + 1e-12);
        prop_assert!(tilted_pdf(-0.5, k) >= -1e-12 && tilted_pdf(0.5, k) >= -1e-12);
        let r = sample_tilted(u, k);
        prop_assert!((-0.5..=0.5).contains(&r));
        let cdf = (r + 0.5) + 0.5 * k * (r * r - 0.25);
        prop_assert!((cdf - u).abs() < 1e-9, "cdf {cdf} u {u} k {k}");
    }

    #[test]
    fn bucket_points_stay_in_the_unit_cube(shift in prop::array::uniform5(0.0f64..1.0), j in 0usize..1_000_000, dim in 1usize..3) {
        let q = bucket_point(&shift, j, dim);
        prop_assert!(q.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn macro_weights_are_bounded(sigma in log_uniform(1e-6, 1e8), dt in log_uniform(1e-5, 1.0)) {
        let c = 29.98;
        for form in [ThetaForm::Exp, ThetaForm::InvExp] {
            let th = weight_theta(sigma, c, dt, form);
            prop_assert!((0.0..=1.0).contains(&th));
            let d = diffusion_coefficient(th, sigma, c, dt, 1.0);
            prop_assert!(d >= 0.0 && d <= 1.0 / (3.0 * sigma) * (1.0 + 1e-12));
        }
        let x = chi(sigma, c, dt);
        prop_assert!((0.0..1.0).contains(&x));
    }

    #[test]
    fn correction_root_is_bracketed(
        groups in 1usize..12,
        t in log_uniform(1e-3, 5.0),
        chis in prop::collection::vec(0.0f64..1.0, 12),
        kappa in log_uniform(1e-3, 1e3),
    ) {
        let grid = FrequencyGroupGrid::logarithmic(groups, 1e-3, 100.0).unwrap();
        let chi = &chis[..groups];
        let mut table = PlanckTable::new(&grid);
        // Build A from a known root so the answer is exact.
        let eq0 = CorrectionEquation { grid: &grid, kappa, chi, rhs: 0.0 };
        let (f, _) = eq0.eval(t, &mut table).unwrap();
        let eq = CorrectionEquation { rhs: f, ..eq0 };
        let (root, _) = eq.solve(0.5 * t).unwrap();
        prop_assert!(root > 0.0 && root <= eq.rhs);
        prop_assert!((root - t).abs() <= 1e-10 * t.max(1.0), "root {root} expected {t}");
    }

    #[test]
    fn bicgstab_matches_the_tridiagonal_solve(
        n in 2usize..60,
        seed in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0, -1.0f64..1.0), 60),
    ) {
        let mut m = CsrMatrix::with_rows(n);
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let (l, r, b) = seed[i];
            let mut off = 0.0;
            if i > 0 {
                m.push(i - 1, -l);
                off += l;
            }
            if i + 1 < n {
                m.push(i + 1, -r);
                off += r;
            }
            m.diag[i] = off + 0.1;
            m.finish_row();
            rhs[i] = b;
        }
        let direct = solve_tridiagonal(&m, &rhs);
        let iter = bicgstab(&m, &rhs, &vec![0.0; n], 1e-13, 1000).unwrap();
        let scale = direct.iter().fold(1e-12f64, |a, x| a.max(x.abs()));
        for (a, b) in direct.iter().zip(&iter) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
        let mut y = vec![0.0; n];
        m.mul(&direct, &mut y);
        for (a, b) in y.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()) * n as f64);
        }
    }

    #[test]
    fn snapshot_csv_round_trips_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 9)) {
        let mesh = Mesh::build(&Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: 3.0, cells: Some(3), dx: None, material: 0 }],
        })
        .unwrap();
        let snap = Snapshot {
            step: 1,
            time: 0.5,
            groups: 1,
            temperature: values[0..3].to_vec(),
            radiation_temperature: values[3..6].to_vec(),
            rho: values[6..9].to_vec(),
        };
        let table = parse_csv(&snapshot_csv(&mesh, &snap, true)).unwrap();
        prop_assert_eq!(table.column("T_material").unwrap(), snap.temperature);
        prop_assert_eq!(table.column("T_radiation").unwrap(), snap.radiation_temperature);
        prop_assert_eq!(table.column("rho_0").unwrap(), snap.rho);
    }

    #[test]
    fn config_round_trips_field_by_field(
        which in 0usize..PRESETS.len(),
        dt in log_uniform(1e-5, 1.0),
        budget in 0usize..10_000_000,
        seed in 0..=i64::MAX as u64,
        inv in any::<bool>(),
        tilt in any::<bool>(),
        gamma in log_uniform(1e-14, 1e-2),
    ) {
        let mut cfg = desk_preset(PRESETS[which]).unwrap();
        cfg.dt = dt;
        cfg.budget = budget;
        cfg.seed = seed;
        cfg.tilt = tilt;
        cfg.theta_form = if inv { ThetaForm::InvExp } else { ThetaForm::Exp };
        cfg.picard.gamma = gamma;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
