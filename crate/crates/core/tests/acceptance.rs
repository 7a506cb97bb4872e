//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use euler_align::cli_io::{emit_fluid, parse_config, run_fluid, run_kinetic, run_sweep, FluidOutcome, RunConfig};
use euler_align::diagnostics::{
    bogovskii, bogovskii_h1_constant, dissipation, entropy_equivalence_constants, entropy_ratio,
    equivalence_scan, fit_decay_rate, relative_entropy_bounds,
};
use euler_align::dynamics::{alignment_operator, FluidState, Formulation};
use euler_align::grid::{divergence, gradient, make_grid, sobolev_norm, Field, PeriodicGrid, Spectrum, VectorField};
use euler_align::integrator::Termination;
use euler_align::kernel::{build_kernel, KernelSpec};
use euler_align::particles::{cs_step, random_ensemble, velocity_diameter, ParticleEnsemble};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(extra: &str) -> RunConfig {
    let mut base = String::from("mode = fluid\ndim = 1\nn = 128\nscenario = small_perturbation\n");
    if !extra.contains("kernel") {
        base.push_str("kernel = cosine 1 0.5\n");
    }
    parse_config(&format!("{base}{extra}")).expect("acceptance config")
}

fn fluid(extra: &str) -> FluidOutcome {
    run_fluid(&config(extra)).expect("fluid run")
}

fn criterion_1(run10: &FluidOutcome, secs: f64) -> Outcome {
    let recs = &run10.trajectory.records;
    let mass = recs.iter().map(|r| (r.mass - 1.0).abs()).fold(0.0, f64::max);
    let mom = recs
        .iter()
        .map(|r| (r.m_c[0] - recs[0].m_c[0]).abs())
        .fold(0.0, f64::max);
    outcome(
        mass <= 1e-10 && mom <= 1e-9 && secs < 10.0,
        format!("max |mass-1| = {mass:.2e}, max |m_c-m_c(0)| = {mom:.2e}, runtime {secs:.2} s"),
    )
}

/// Largest `|ΔK/Δt + D|/max(1, D)` over interior records with equal spacing.
fn dissipation_residual(run: &FluidOutcome) -> f64 {
    let r = &run.trajectory.records;
    let mut worst = 0.0f64;
    for i in 1..r.len() - 1 {
        let (h0, h1) = (r[i].t - r[i - 1].t, r[i + 1].t - r[i].t);
        if (h0 - h1).abs() > 1e-9 * h0 {
            continue;
        }
        let rate = (r[i + 1].kinetic_entropy - r[i - 1].kinetic_entropy) / (h0 + h1);
        worst = worst.max((rate + r[i].dissipation).abs() / r[i].dissipation.max(1.0));
    }
    worst
}

fn criterion_2(run10: &FluidOutcome) -> Outcome {
    let coarse = dissipation_residual(run10);
    let half = fluid(&format!("t_end = 10\ndt = {}\n", run10.trajectory.dt / 2.0));
    let fine = dissipation_residual(&half);
    let ratio = coarse / fine;
    outcome(
        coarse <= 1e-5 && (3.5..=4.5).contains(&ratio),
        format!("residual {coarse:.3e} (dt), {fine:.3e} (dt/2), ratio {ratio:.3}"),
    )
}

fn criterion_3(run20: &FluidOutcome) -> Outcome {
    let recs = &run20.trajectory.records;
    let series: Vec<(f64, f64)> = recs.iter().map(|r| (r.t, r.fluctuation)).collect();
    let fit = fit_decay_rate(&series, (2.0, 20.0)).expect("fit");
    let f0 = recs[0].fluctuation;
    let c = fit.c_hat;
    let inside = recs.iter().all(|r| {
        let lo = 0.2 * f0 * (-1.5 * c * r.t).exp();
        let hi = 5.0 * f0 * (-0.6 * c * r.t).exp();
        r.fluctuation >= lo && r.fluctuation <= hi
    });
    outcome(
        c > 0.0 && fit.r_squared >= 0.99 && inside,
        format!(
            "c_hat = {c:.4}, r^2 = {:.5}, envelope {}",
            fit.r_squared,
            if inside { "holds" } else { "violated" }
        ),
    )
}

/// Eigenvalues of the per-mode linearization `[[0, −iκ], [−iκ, −1]]` with
/// `κ = 2πk`, from its trace and determinant.
fn mode_eigenvalues(k: f64) -> [Complex64; 2] {
    let kappa = 2.0 * PI * k;
    let m = [
        [Complex64::new(0.0, 0.0), Complex64::new(0.0, -kappa)],
        [Complex64::new(0.0, -kappa), Complex64::new(-1.0, 0.0)],
    ];
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    [(tr + disc) / 2.0, (tr - disc) / 2.0]
}

fn criterion_4() -> Outcome {
    let predicted = -2.0
        * (1..=3)
            .flat_map(|k| mode_eigenvalues(k as f64))
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max);
    let run = fluid("kernel = constant 1\namplitude = 0.01\nt_end = 20\n");
    let series: Vec<(f64, f64)> = run.trajectory.records.iter().map(|r| (r.t, r.fluctuation)).collect();
    let fit = fit_decay_rate(&series, (2.0, 20.0)).expect("fit");
    outcome(
        (0.8..=1.2).contains(&fit.c_hat) && (predicted - 1.0).abs() < 1e-12,
        format!("eigen-oracle rate {predicted:.6}, fitted c_hat = {:.4}", fit.c_hat),
    )
}

fn random_bandlimited(grid: &PeriodicGrid, rng: &mut ChaCha8Rng, kmax: i64, scale: f64) -> Field {
    let coeffs: Vec<Complex64> = (0..grid.len())
        .map(|j| {
            let k = grid.wavevector(j);
            if k[0].abs() <= kmax && k[1].abs() <= kmax {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    // the real part of the inverse transform keeps only the Hermitian part
    let f = Spectrum::from_coeffs(grid, coeffs).to_field();
    let m = f.max_abs().max(1e-300);
    f.scale(scale / m)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = make_grid(1, 64).unwrap();
    let n = grid.len();
    let dx = grid.dx();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let b = rng.random_range(-0.9..0.9);
        let psi = build_kernel(&KernelSpec::Cosine { a: 1.0, b }, &grid).unwrap();
        let rho = random_bandlimited(&grid, &mut rng, 6, 0.5).map(|v| 1.0 + v);
        let u = VectorField::new(vec![random_bandlimited(&grid, &mut rng, 6, 1.0)]).unwrap();
        let state = FluidState::new(Formulation::Conservative, rho.clone(), u.clone(), 0.0).unwrap();
        let (r, uv, p) = (rho.values(), u.component(0).values(), psi.samples().values());
        let l = alignment_operator(&rho, &u, &psi).unwrap();
        let mut d_sum = 0.0;
        for i in 0..n {
            let mut li = 0.0;
            for j in 0..n {
                let w = p[(i + n - j) % n];
                li += w * (uv[i] - uv[j]) * r[j] * dx;
                d_sum += 0.5 * w * (uv[i] - uv[j]).powi(2) * r[i] * r[j] * dx * dx;
            }
            worst = worst.max((l.component(0).values()[i] - li).abs());
        }
        worst = worst.max((dissipation(&state, &psi).unwrap() - d_sum).abs());
    }
    outcome(worst <= 1e-11, format!("max deviation from double sums {worst:.2e} over 10 trials"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = make_grid(2, 32).unwrap();
    let bound = bogovskii_h1_constant();
    let (mut div_res, mut curl_res, mut mean_res, mut ratio) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let f = random_bandlimited(&grid, &mut rng, 10, 1.0);
        let f = f.map(|v| v - f.mean());
        let v = bogovskii(&f, true).unwrap();
        div_res = div_res.max((&divergence(&v) - &f).max_abs());
        let (gx, gy) = (gradient(v.component(0)), gradient(v.component(1)));
        curl_res = curl_res.max((gy.component(0) - gx.component(1)).max_abs());
        mean_res = mean_res.max(v.integral().iter().fold(0.0, |a: f64, m| a.max(m.abs())));
        let h1 = (sobolev_norm(v.component(0), 1.0).powi(2) + sobolev_norm(v.component(1), 1.0).powi(2)).sqrt();
        ratio = ratio.max(h1 / f.l2_norm());
    }
    outcome(
        div_res <= 1e-10 && curl_res <= 1e-10 && mean_res <= 1e-12 && ratio <= bound,
        format!(
            "div {div_res:.1e}, curl {curl_res:.1e}, mean {mean_res:.1e}, H1/L2 {ratio:.6} <= {bound:.6}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = make_grid(1, 64).unwrap();
    let mut violations = 0;
    for _ in 0..1000 {
        let lo = rng.random_range(0.01..5.0);
        let hi = rng.random_range(lo..=5.0);
        let values = (0..grid.len()).map(|_| rng.random_range(lo..=hi)).collect();
        let rho = Field::new(&grid, values).unwrap();
        let dev = rho.map(|v| v - 1.0);
        let q = dev.inner(&dev);
        let rel = rho.map(|v| v * v.ln() + 1.0 - v).integral();
        let (c1, c2) = relative_entropy_bounds(rho.min(), rho.max());
        let tol = 1e-12 * q + 1e-15;
        if c1 * q > rel + tol || rel > c2 * q + tol {
            violations += 1;
        }
        let (a, b) = (rho.min().min(1.0), rho.max().max(1.0));
        let (ca, cb) = entropy_equivalence_constants(a, b).unwrap();
        let logs = rho.map(|v| v.ln().powi(2)).integral();
        if cb * q > logs + tol || logs > ca * q + tol {
            violations += 1;
        }
    }
    let sane = (entropy_ratio(1.0) - 0.5).abs() < 1e-15;
    outcome(violations == 0 && sane, format!("{violations} violations in 1000 fields"))
}

fn criterion_8(run20: &FluidOutcome) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for sigma in [0.05, 0.01] {
        let c = equivalence_scan(&run20.trajectory.records, sigma).unwrap();
        pass &= c.all_positive();
        parts.push(format!(
            "sigma {sigma}: c3 {:.3e} c4 {:.3e} c5 {:.3e} c6 {:.3e}",
            c.c3, c.c4, c.c5, c.c6
        ));
    }
    outcome(pass, parts.join("; "))
}

fn two_body_error(dt: f64) -> f64 {
    let grid = make_grid(1, 32).unwrap();
    let psi = build_kernel(&KernelSpec::Constant { a: 1.0 }, &grid).unwrap();
    let mut ens = ParticleEnsemble::new(1, vec![[0.1, 0.0], [0.4, 0.0]], vec![[1.0, 0.0], [-0.5, 0.0]], 0).unwrap();
    let steps = (2.0 / dt).round() as usize;
    for _ in 0..steps {
        ens = cs_step(&ens, &psi, dt).unwrap();
    }
    let dv = ens.velocities()[0][0] - ens.velocities()[1][0];
    (dv - 1.5 * (-2.0f64).exp()).abs()
}

fn criterion_9() -> Outcome {
    let grid = make_grid(1, 32).unwrap();
    let psi = build_kernel(&KernelSpec::Cosine { a: 1.0, b: 0.5 }, &grid).unwrap();
    let mut ens = random_ensemble(1, 64, 9).unwrap();
    let d0 = velocity_diameter(&ens);
    let dt = 0.01;
    let mut worst = 0.0f64;
    for k in 1..=1000 {
        ens = cs_step(&ens, &psi, dt).unwrap();
        let t = k as f64 * dt;
        worst = worst.max(velocity_diameter(&ens) / (d0 * (-psi.psi_m() * t).exp()));
    }
    let (e1, e2) = (two_body_error(0.1), two_body_error(0.05));
    let order = (e1 / e2).log2();
    outcome(
        worst <= 1.0 + 1e-4 && order > 3.5,
        format!("max diam/(diam0 e^(-0.5t)) = {worst:.6}; two-body RK4 order {order:.2}"),
    )
}

fn criterion_10() -> Outcome {
    let text = "mode = kinetic\nn = 128\nt_end = 1\nscenario = small_perturbation\namplitude = 0.2\n\
                kernel = cosine 1 0.5\nn_particles = 20000\neps = 0.4, 0.2, 0.1, 0.05\nseeds = 4\n\
                moment_n = 16\nrelax_n = 64\n";
    let cfg = parse_config(text).unwrap();
    let start = Instant::now();
    let out = run_kinetic(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gaps: Vec<f64> = out.means.iter().map(|m| m.1).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let ratio = gaps[3] / gaps[0];
    outcome(
        monotone && ratio <= 0.6 && secs < 300.0,
        format!(
            "mean gaps {:.3e} {:.3e} {:.3e} {:.3e}, ratio {ratio:.3}, runtime {secs:.1} s",
            gaps[0], gaps[1], gaps[2], gaps[3]
        ),
    )
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("t_end = 2\n");
    let write = |sub: &str, threads: usize| {
        let path = dir.path().join(sub);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| emit_fluid(&cfg, &run_fluid(&cfg).unwrap(), &path)).unwrap();
        fs::read(path.join("records.csv")).unwrap()
    };
    let same_run = write("a", 1) == write("b", 4);
    let sweep_text = "mode = sweep\nn = 32\nt_end = 1\nscenario = small_perturbation\nkernel = cosine 1 0.5\n\
                      parameter = amplitude\nvalues = 0.01, 0.05, 0.1, 0.2\n";
    let sweep = |sub: &str, threads: usize| {
        let path = dir.path().join(sub);
        let cfg = parse_config(sweep_text).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_sweep(&cfg, &path)).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut stack = vec![path.clone()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|x| x == "csv") {
                    files.push((p.strip_prefix(&path).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let s1 = sweep("s1", 1);
    let s2 = sweep("s2", 4);
    let same_sweep = s1 == s2 && s1.len() == 9;
    outcome(
        same_run && same_sweep,
        format!("records.csv identical: {same_run}; sweep CSVs identical: {same_sweep} ({} files)", s1.len()),
    )
}

fn criterion_12(run20: &FluidOutcome) -> Outcome {
    let recs = &run20.trajectory.records;
    let h0 = recs[0].hs_norm;
    let sup = recs.iter().map(|r| r.hs_norm).fold(0.0, f64::max);
    let completed = run20.trajectory.termination == Termination::Completed;
    outcome(
        sup <= 5.0 * h0 && completed,
        format!("sup H^3 / initial = {:.4}, termination {}", sup / h0, run20.trajectory.termination.as_str()),
    )
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let start = Instant::now();
    let run10 = fluid("t_end = 10\n");
    let secs10 = start.elapsed().as_secs_f64();
    let run20 = fluid("t_end = 20\n");
    let checks: Vec<Check> = vec![
        ("conservation", Box::new(|| criterion_1(&run10, secs10))),
        ("dissipation identity", Box::new(|| criterion_2(&run10))),
        ("exponential decay", Box::new(|| criterion_3(&run20))),
        ("linearized rate", Box::new(criterion_4)),
        ("double-sum oracles", Box::new(criterion_5)),
        ("Bogovskii solve", Box::new(criterion_6)),
        ("entropy sandwich", Box::new(criterion_7)),
        ("Lyapunov sandwich", Box::new(|| criterion_8(&run20))),
        ("particle flocking", Box::new(criterion_9)),
        ("hydrodynamic-limit trend", Box::new(criterion_10)),
        ("determinism", Box::new(criterion_11)),
        ("bounded H^s norm", Box::new(|| criterion_12(&run20))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<26} {} : {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
