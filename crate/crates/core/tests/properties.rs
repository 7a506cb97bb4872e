//! Property tests over random band-limited fields, states and ensembles.

use euler_align::cli_io::{parse_config, RunConfig};
use euler_align::diagnostics::{bogovskii, entropy_functionals, relative_entropy_bounds};
use euler_align::dynamics::{alignment_operator, convert_formulation, rhs_conservative, FluidState, Formulation};
use euler_align::grid::{convolve, make_grid, sobolev_norm, spectral_derivative, Field, PeriodicGrid, Spectrum, VectorField};
use euler_align::kernel::{build_kernel, Kernel, KernelSpec};
use euler_align::particles::{cs_step, langevin_step, moments, velocity_diameter, ParticleEnsemble};
use proptest::prelude::*;
use rustfft::num_complex::Complex64;

fn band_limited(grid: &PeriodicGrid, raw: &[f64], kmax: i64) -> Field {
    let mut it = raw.iter().cycle();
    let coeffs = (0..grid.len())
        .map(|j| {
            let k = grid.wavevector(j);
            let (a, b) = (*it.next().unwrap(), *it.next().unwrap());
            if k[0].abs() <= kmax && k[1].abs() <= kmax {
                Complex64::new(a, b)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Spectrum::from_coeffs(grid, coeffs).to_field()
}

fn density(grid: &PeriodicGrid, raw: &[f64], amp: f64) -> Field {
    let f = band_limited(grid, raw, 3);
    let s = amp / f.map(|v| v - f.mean()).max_abs().max(1e-12);
    let g = f.map(|v| 1.0 + s * (v - f.mean()));
    g.scale(1.0 / g.mean())
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 32)
}

fn kernel_spec() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.1..3.0f64).prop_map(|a| KernelSpec::Constant { a }),
        (0.5..2.0f64, -0.9..0.9f64).prop_map(|(a, r)| KernelSpec::Cosine { a, b: r * a }),
        (0.2..1.0f64, 0.0..2.0f64, 0.1..0.5f64).prop_map(|(base, amplitude, width)| KernelSpec::Bump {
            base,
            amplitude,
            width
        }),
    ]
}

fn grid(dim: usize) -> PeriodicGrid {
    make_grid(dim, if dim == 1 { 64 } else { 16 }).unwrap()
}

fn max_diff(a: &Field, b: &Field) -> f64 {
    (a - b).max_abs()
}

fn state(g: &PeriodicGrid, raw: &[f64], amp: f64) -> FluidState {
    let rho = density(g, raw, amp);
    let comps = (0..g.dim())
        .map(|a| {
            let shifted: Vec<f64> = raw.iter().rev().skip(a).copied().collect();
            band_limited(g, &shifted, 3).scale(0.2)
        })
        .collect();
    FluidState::from_primitive(Formulation::Conservative, rho, VectorField::new(comps).unwrap(), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_and_round_trip(raw in coeffs(), dim in 1usize..=2) {
        let g = grid(dim);
        let f = band_limited(&g, &raw, 5);
        let quad = (f.values().iter().map(|v| v * v).sum::<f64>() * g.cell_volume()).sqrt();
        prop_assert!((quad - sobolev_norm(&f, 0.0)).abs() <= 1e-12 * quad.max(1.0));
        let back = f.spectrum().to_field();
        prop_assert!(max_diff(&back, &f) <= 1e-12);
        let c = Field::constant(&g, raw[0]);
        prop_assert_eq!(spectral_derivative(&c, dim - 1, 1).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn convolution_commutes(a in coeffs(), b in coeffs(), dim in 1usize..=2) {
        let g = grid(dim);
        let f = band_limited(&g, &a, 6);
        let h = band_limited(&g, &b, 6);
        prop_assert!(max_diff(&convolve(&f, &h).unwrap(), &convolve(&h, &f).unwrap()) <= 1e-12);
    }

    #[test]
    fn kernel_lower_bound_and_real_spectrum(spec in kernel_spec(), raw in coeffs(), dim in 1usize..=2) {
        let g = grid(dim);
        let psi = build_kernel(&spec, &g).unwrap();
        prop_assert!(psi.spectral().iter().all(|c| c.im.abs() <= 1e-12));
        let rho = density(&g, &raw, 0.9);
        let conv = convolve(psi.samples(), &rho).unwrap();
        prop_assert!(conv.min() >= psi.psi_m() * rho.integral() - 1e-10);
    }

    #[test]
    fn fluxes_integrate_to_zero(spec in kernel_spec(), raw in coeffs(), dim in 1usize..=2) {
        let g = grid(dim);
        let psi = build_kernel(&spec, &g).unwrap();
        let s = state(&g, &raw, 0.4);
        let r = rhs_conservative(&s, &psi).unwrap();
        prop_assert!(r.scalar.integral().abs() <= 1e-12);
        for m in r.vector.integral() {
            prop_assert!(m.abs() <= 1e-10);
        }
    }

    #[test]
    fn alignment_vanishes_on_uniform_velocity(spec in kernel_spec(), raw in coeffs(), c in -2.0..2.0f64) {
        let g = grid(1);
        let psi: Kernel = build_kernel(&spec, &g).unwrap();
        let rho = density(&g, &raw, 0.5);
        let l = alignment_operator(&rho, &VectorField::constant(&g, &[c]), &psi).unwrap();
        prop_assert!(l.max_norm() <= 1e-13 * (1.0 + c.abs()));
    }

    #[test]
    fn formulation_round_trip(raw in coeffs()) {
        let g = grid(1);
        let s = state(&g, &raw, 0.8);
        let back = convert_formulation(&convert_formulation(&s, Formulation::Log).unwrap(), Formulation::Conservative)
            .unwrap();
        prop_assert!(max_diff(back.density(), s.density()) <= 1e-14 * 2.0);
    }

    #[test]
    fn bogovskii_is_linear(a in coeffs(), b in coeffs(), al in -3.0..3.0f64, be in -3.0..3.0f64, dim in 1usize..=2) {
        let g = grid(dim);
        let f = band_limited(&g, &a, 6);
        let f = f.map(|v| v - f.mean());
        let h = band_limited(&g, &b, 6);
        let h = h.map(|v| v - h.mean());
        let combo = f.zip_map(&h, |x, y| al * x + be * y);
        let lhs = bogovskii(&combo, false).unwrap();
        let (bf, bh) = (bogovskii(&f, false).unwrap(), bogovskii(&h, false).unwrap());
        for axis in 0..dim {
            let rhs = bf.component(axis).zip_map(bh.component(axis), |x, y| al * x + be * y);
            prop_assert!(max_diff(lhs.component(axis), &rhs) <= 1e-12);
        }
    }

    #[test]
    fn entropy_sandwiches(raw in coeffs(), amp in 0.01..0.95f64, dim in 1usize..=2) {
        let g = grid(dim);
        let s = state(&g, &raw, amp);
        let rho = s.rho();
        let e = entropy_functionals(&s).unwrap();
        let q = rho.map(|r| (r - 1.0) * (r - 1.0)).integral();
        let (c1, c2) = relative_entropy_bounds(rho.min(), rho.max());
        prop_assert!(c1 * q <= e.rel_entropy * (1.0 + 1e-12) + 1e-15);
        prop_assert!(e.rel_entropy <= c2 * q * (1.0 + 1e-12) + 1e-15);
        prop_assert!(e.fluctuation <= e.energy * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn flocking_step_conserves_mean_and_contracts(spec in kernel_spec(), seed in 0u64..1000, n in 2usize..40, dim in 1usize..=2) {
        let g = grid(dim);
        let psi = build_kernel(&spec, &g).unwrap();
        let ens = euler_align::particles::random_ensemble(dim, n, seed).unwrap();
        let dt = 0.1 / psi.sup_norm();
        let next = cs_step(&ens, &psi, dt).unwrap();
        let (m0, m1) = (ens.mean_velocity(), next.mean_velocity());
        prop_assert!((m0[0] - m1[0]).abs() <= 1e-12 && (m0[1] - m1[1]).abs() <= 1e-12);
        let (d0, d1) = (velocity_diameter(&ens), velocity_diameter(&next));
        prop_assert!(d1 <= d0 * (1.0 + 1e-10));
    }

    #[test]
    fn deposit_conserves_mass_and_momentum(seed in 0u64..1000, n in 50usize..400, dim in 1usize..=2) {
        let g = grid(dim);
        let ens = euler_align::particles::random_ensemble(dim, n, seed).unwrap();
        let (rho, u) = moments(&ens, &g).unwrap();
        prop_assert!((rho.integral() - 1.0).abs() <= 1e-13);
        let mv = ens.mean_velocity();
        for (c, m) in u.components().iter().zip(mv) {
            prop_assert!((rho.inner(c) - m).abs() <= 1e-6);
        }
    }

    #[test]
    fn langevin_is_reproducible(seed in 0u64..1000, eps in 0.05..0.5f64) {
        let g = grid(1);
        let psi = build_kernel(&KernelSpec::Cosine { a: 1.0, b: 0.5 }, &g).unwrap();
        let ens = euler_align::particles::random_ensemble(1, 30, seed).unwrap();
        let dt = 0.05 * eps;
        let walk = |e: &ParticleEnsemble| {
            let mut e = e.clone();
            for _ in 0..5 {
                e = langevin_step(&e, &psi, eps, dt, &g).unwrap();
            }
            e
        };
        let (a, b) = (walk(&ens), walk(&ens));
        prop_assert_eq!(a.velocities(), b.velocities());
        prop_assert_eq!(a.positions(), b.positions());
    }

    #[test]
    fn config_round_trips(
        log2n in 3u32..9,
        t_end in 0.0..50.0f64,
        cfl in 0.05..0.9f64,
        sigma in 0.0..0.5f64,
        spec in kernel_spec(),
        seed in any::<u64>(),
        eps in prop::collection::vec(0.01..1.0f64, 1..5),
    ) {
        let eps_text: Vec<String> = eps.iter().map(|e| format!("{e:?}")).collect();
        let text = format!(
            "mode = fluid\nn = {}\nt_end = {t_end:?}\nseed = {seed}\nscenario = small_perturbation\n\
             [numerics]\ncfl = {cfl:?}\n[model]\nkernel = {spec}\n[diagnostics]\nsigma = {sigma:?}\n\
             [kinetic]\neps = {}\n",
            1usize << log2n,
            eps_text.join(", "),
        );
        let cfg: RunConfig = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.eps.clone(), eps);
        prop_assert_eq!(cfg.cfl, cfl);
        let again = parse_config(&cfg.to_text()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
