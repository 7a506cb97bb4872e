//! Cucker–Smale agents and the Langevin particle scheme for the kinetic
//! alignment equation, with cloud-in-cell moments and the relative-entropy
//! gap against a fluid state.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::relative_entropy_density;
use crate::dynamics::FluidState;
use crate::grid::{Field, GridError, PeriodicGrid, VectorField};
use crate::kernel::{minimal_image, Kernel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParticleError {
    #[error("dimension {0} unsupported (expected 1 or 2)")]
    Dimension(usize),
    #[error("ensemble needs at least {need} agents, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("eps must be positive, got {0}")]
    Eps(f64),
    #[error("dt = {dt:e} exceeds the stability bound {limit:e}")]
    Step { dt: f64, limit: f64 },
    #[error("fluid density must be positive (min {min:e})")]
    NonPositiveDensity { min: f64 },
    #[error("non-finite particle data")]
    NonFinite,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `N` agents on `T^d`; the second coordinate is unused in 1D.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<[f64; 2]>,
    velocities: Vec<[f64; 2]>,
    time: f64,
    seed: u64,
    steps: u64,
}

fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

impl ParticleEnsemble {
    pub fn new(
        dim: usize,
        positions: Vec<[f64; 2]>,
        velocities: Vec<[f64; 2]>,
        seed: u64,
    ) -> Result<Self, ParticleError> {
        if dim != 1 && dim != 2 {
            return Err(ParticleError::Dimension(dim));
        }
        if positions.len() != velocities.len() {
            return Err(GridError::Length {
                expected: positions.len(),
                got: velocities.len(),
            }
            .into());
        }
        if positions.is_empty() {
            return Err(ParticleError::TooFew { need: 1, got: 0 });
        }
        let finite = |p: &[f64; 2]| p.iter().all(|c| c.is_finite());
        if !positions.iter().all(finite) || !velocities.iter().all(finite) {
            return Err(ParticleError::NonFinite);
        }
        let mut ens = Self {
            dim,
            positions,
            velocities,
            time: 0.0,
            seed,
            steps: 0,
        };
        ens.normalize();
        Ok(ens)
    }

    fn normalize(&mut self) {
        let dim = self.dim;
        for p in &mut self.positions {
            for c in p.iter_mut().take(dim) {
                *c = wrap(*c);
            }
            if dim == 1 {
                p[1] = 0.0;
            }
        }
        if dim == 1 {
            for v in &mut self.velocities {
                v[1] = 0.0;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.velocities
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_velocity(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let mut m = [0.0; 2];
        for v in &self.velocities {
            m[0] += v[0];
            m[1] += v[1];
        }
        [m[0] / n, m[1] / n]
    }

    /// Writes `id,x[,y],vx[,vy]` rows.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        if self.dim == 1 {
            writeln!(out, "id,x,vx")?;
        } else {
            writeln!(out, "id,x,y,vx,vy")?;
        }
        for (i, (p, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
            if self.dim == 1 {
                writeln!(out, "{i},{:.16e},{:.16e}", p[0], v[0])?;
            } else {
                writeln!(out, "{i},{:.16e},{:.16e},{:.16e},{:.16e}", p[0], p[1], v[0], v[1])?;
            }
        }
        Ok(())
    }
}

/// Per-stream Gaussian source: agent `i` at step `k` draws from a ChaCha
/// stream fixed by `(seed, i, k)`, so the order of evaluation is irrelevant.
fn gaussian_pair(seed: u64, agent: usize, step: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng.set_word_pos((step as u128) << 8);
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// `F_i = (1/N) Σ_j ψ(x_i − x_j)(v_j − v_i)`.
pub fn alignment_forces(
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    psi: &Kernel,
    dim: usize,
) -> Vec<[f64; 2]> {
    let modes = psi.spec().and_then(|s| s.cosine_modes(dim));
    match modes {
        Some(modes) => separable_forces(positions, velocities, &modes, dim),
        None => pairwise_forces(positions, velocities, psi, dim),
    }
}

fn pairwise_forces(
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    psi: &Kernel,
    dim: usize,
) -> Vec<[f64; 2]> {
    let n = positions.len() as f64;
    positions
        .par_iter()
        .zip(velocities.par_iter())
        .map(|(xi, vi)| {
            let mut f = [0.0; 2];
            for (xj, vj) in positions.iter().zip(velocities) {
                let d = [minimal_image(xi[0] - xj[0]), minimal_image(xi[1] - xj[1])];
                let w = psi.eval(&d[..dim]);
                f[0] += w * (vj[0] - vi[0]);
                f[1] += w * (vj[1] - vi[1]);
            }
            [f[0] / n, f[1] / n]
        })
        .collect()
}

/// Uses `cos(θ_i − θ_j) = cos θ_i cos θ_j + sin θ_i sin θ_j` to reduce the
/// pairwise sum to a few global moments.
fn separable_forces(
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    modes: &[(f64, [i64; 2])],
    dim: usize,
) -> Vec<[f64; 2]> {
    let n = positions.len() as f64;
    let phase = |x: &[f64; 2], k: &[i64; 2]| {
        2.0 * PI * (0..dim).map(|a| k[a] as f64 * x[a]).sum::<f64>()
    };
    let sums: Vec<[f64; 6]> = modes
        .iter()
        .map(|(_, k)| {
            let mut s = [0.0; 6];
            for (x, v) in positions.iter().zip(velocities) {
                let (sn, cs) = phase(x, k).sin_cos();
                s[0] += cs;
                s[1] += sn;
                s[2] += cs * v[0];
                s[3] += sn * v[0];
                s[4] += cs * v[1];
                s[5] += sn * v[1];
            }
            s
        })
        .collect();
    positions
        .par_iter()
        .zip(velocities.par_iter())
        .map(|(x, v)| {
            let mut f = [0.0; 2];
            for ((c, k), s) in modes.iter().zip(&sums) {
                let (sn, cs) = phase(x, k).sin_cos();
                f[0] += c * (cs * (s[2] - v[0] * s[0]) + sn * (s[3] - v[0] * s[1]));
                f[1] += c * (cs * (s[4] - v[1] * s[0]) + sn * (s[5] - v[1] * s[1]));
            }
            [f[0] / n, f[1] / n]
        })
        .collect()
}

fn axpy(y: &[[f64; 2]], a: f64, x: &[[f64; 2]]) -> Vec<[f64; 2]> {
    y.iter()
        .zip(x)
        .map(|(p, q)| [p[0] + a * q[0], p[1] + a * q[1]])
        .collect()
}

/// One classical RK4 step of the Cucker–Smale system.
pub fn cs_step(ens: &ParticleEnsemble, psi: &Kernel, dt: f64) -> Result<ParticleEnsemble, ParticleError> {
    let limit = 0.1 / psi.sup_norm();
    if !(dt > 0.0) || dt > limit {
        return Err(ParticleError::Step { dt, limit });
    }
    let dim = ens.dim;
    let (x0, v0) = (&ens.positions, &ens.velocities);
    let k1v = alignment_forces(x0, v0, psi, dim);
    let x1 = axpy(x0, 0.5 * dt, v0);
    let v1 = axpy(v0, 0.5 * dt, &k1v);
    let k2v = alignment_forces(&x1, &v1, psi, dim);
    let x2 = axpy(x0, 0.5 * dt, &v1);
    let v2 = axpy(v0, 0.5 * dt, &k2v);
    let k3v = alignment_forces(&x2, &v2, psi, dim);
    let x3 = axpy(x0, dt, &v2);
    let v3 = axpy(v0, dt, &k3v);
    let k4v = alignment_forces(&x3, &v3, psi, dim);
    let combine = |y: &[[f64; 2]], a: &[[f64; 2]], b: &[[f64; 2]], c: &[[f64; 2]], d: &[[f64; 2]]| {
        (0..y.len())
            .map(|i| {
                let mut out = [0.0; 2];
                for ax in 0..2 {
                    out[ax] = y[i][ax] + dt / 6.0 * (a[i][ax] + 2.0 * b[i][ax] + 2.0 * c[i][ax] + d[i][ax]);
                }
                out
            })
            .collect::<Vec<_>>()
    };
    let positions = combine(x0, v0, &v1, &v2, &v3);
    let velocities = combine(v0, &k1v, &k2v, &k3v, &k4v);
    let mut out = ParticleEnsemble {
        dim,
        positions,
        velocities,
        time: ens.time + dt,
        seed: ens.seed,
        steps: ens.steps + 1,
    };
    out.normalize();
    if !out.velocities.iter().all(|v| v[0].is_finite() && v[1].is_finite()) {
        return Err(ParticleError::NonFinite);
    }
    Ok(out)
}

/// `max_{i,j} |v_i − v_j|`.
pub fn velocity_diameter(ens: &ParticleEnsemble) -> f64 {
    let v = &ens.velocities;
    v.par_iter()
        .enumerate()
        .map(|(i, a)| {
            v[i + 1..]
                .iter()
                .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Switches for isolating parts of the Langevin update in tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinOptions {
    pub noise: bool,
    pub alignment: bool,
    /// Relax toward the deposited local velocity, or toward 0.
    pub local_velocity: bool,
    /// Remove the cloud-in-cell average of the increments so that the noise
    /// conserves momentum node by node, as the collision operator does.
    pub centered_noise: bool,
}

impl Default for LangevinOptions {
    fn default() -> Self {
        Self {
            noise: true,
            alignment: true,
            local_velocity: true,
            centered_noise: true,
        }
    }
}

/// `min(0.1 ε, 0.1/‖ψ‖_∞)`.
pub fn langevin_dt_limit(psi: &Kernel, eps: f64) -> f64 {
    (0.1 * eps).min(0.1 / psi.sup_norm())
}

/// Euler–Maruyama step of
/// `dx = v dt`, `dv = [F(x, v) − (v − u^ε(x))/ε] dt + √(2/ε) dW`.
pub fn langevin_step(
    ens: &ParticleEnsemble,
    psi: &Kernel,
    eps: f64,
    dt: f64,
    grid: &PeriodicGrid,
) -> Result<ParticleEnsemble, ParticleError> {
    langevin_step_with(ens, psi, eps, dt, grid, LangevinOptions::default())
}

pub fn langevin_step_with(
    ens: &ParticleEnsemble,
    psi: &Kernel,
    eps: f64,
    dt: f64,
    grid: &PeriodicGrid,
    options: LangevinOptions,
) -> Result<ParticleEnsemble, ParticleError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ParticleError::Eps(eps));
    }
    let limit = langevin_dt_limit(psi, eps);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(ParticleError::Step { dt, limit });
    }
    if grid.dim() != ens.dim {
        return Err(GridError::Mismatch.into());
    }
    let dim = ens.dim;
    let local = if options.local_velocity {
        let (_, u) = moments(ens, grid)?;
        interpolate(&u, &ens.positions)
    } else {
        vec![[0.0; 2]; ens.len()]
    };
    let forces = if options.alignment {
        alignment_forces(&ens.positions, &ens.velocities, psi, dim)
    } else {
        vec![[0.0; 2]; ens.len()]
    };
    let step_index = ens.steps + 1;
    let noise_scale = (2.0 * dt / eps).sqrt();
    let mut noise: Vec<[f64; 2]> = if options.noise {
        (0..ens.len())
            .into_par_iter()
            .map(|i| gaussian_pair(ens.seed, i, step_index))
            .collect()
    } else {
        vec![[0.0; 2]; ens.len()]
    };
    if options.noise && options.centered_noise {
        let mean = node_average(grid, &ens.positions, &noise, dim)?;
        let back = interpolate(&mean, &ens.positions);
        for (xi, b) in noise.iter_mut().zip(&back) {
            xi[0] -= b[0];
            xi[1] -= b[1];
        }
    }
    let updated: Vec<([f64; 2], [f64; 2])> = (0..ens.len())
        .into_par_iter()
        .map(|i| {
            let x = ens.positions[i];
            let v = ens.velocities[i];
            let mut xn = [0.0; 2];
            let mut vn = [0.0; 2];
            for a in 0..dim {
                let drift = forces[i][a] - (v[a] - local[i][a]) / eps;
                vn[a] = v[a] + drift * dt + noise_scale * noise[i][a];
                xn[a] = wrap(x[a] + v[a] * dt);
            }
            (xn, vn)
        })
        .collect();
    let (positions, velocities): (Vec<_>, Vec<_>) = updated.into_iter().unzip();
    if !velocities.iter().all(|v: &[f64; 2]| v[0].is_finite() && v[1].is_finite()) {
        return Err(ParticleError::NonFinite);
    }
    Ok(ParticleEnsemble {
        dim,
        positions,
        velocities,
        time: ens.time + dt,
        seed: ens.seed,
        steps: step_index,
    })
}

/// Cloud-in-cell corner weights of `x` on `grid`: `2^d` (node, weight) pairs.
fn cic_weights(grid: &PeriodicGrid, x: &[f64; 2]) -> [(usize, f64); 4] {
    let n = grid.n();
    let nf = n as f64;
    let split = |c: f64| {
        let s = c * nf;
        let i = s.floor();
        let w = s - i;
        let i = (i as i64).rem_euclid(n as i64) as usize;
        (i, (i + 1) % n, w)
    };
    let (i0, j0, w0) = split(x[0]);
    if grid.dim() == 1 {
        return [(i0, 1.0 - w0), (j0, w0), (0, 0.0), (0, 0.0)];
    }
    let (i1, j1, w1) = split(x[1]);
    let f = |a, b| grid.flat_index([a, b]);
    [
        (f(i0, i1), (1.0 - w0) * (1.0 - w1)),
        (f(j0, i1), w0 * (1.0 - w1)),
        (f(i0, j1), (1.0 - w0) * w1),
        (f(j0, j1), w0 * w1),
    ]
}

/// Deposits unit weights and `values` with cloud-in-cell weights:
/// `(Σ w, Σ w·value per axis)` at every node.
fn deposit(grid: &PeriodicGrid, positions: &[[f64; 2]], values: &[[f64; 2]], dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let len = grid.len();
    let mut mass = vec![0.0; len];
    let mut mom = vec![vec![0.0; len]; dim];
    for (x, v) in positions.iter().zip(values) {
        for (node, w) in cic_weights(grid, x) {
            mass[node] += w;
            for a in 0..dim {
                mom[a][node] += w * v[a];
            }
        }
    }
    (mass, mom)
}

fn ratio_field(grid: &PeriodicGrid, mass: &[f64], mom: Vec<Vec<f64>>, active: impl Fn(usize) -> bool) -> Result<VectorField, GridError> {
    let comps = mom
        .into_iter()
        .map(|p| {
            let vals = p
                .iter()
                .zip(mass)
                .enumerate()
                .map(|(j, (p, m))| if active(j) { p / m } else { 0.0 })
                .collect();
            Field::new(grid, vals)
        })
        .collect::<Result<_, _>>()?;
    VectorField::new(comps)
}

fn node_average(grid: &PeriodicGrid, positions: &[[f64; 2]], values: &[[f64; 2]], dim: usize) -> Result<VectorField, ParticleError> {
    let (mass, sums) = deposit(grid, positions, values, dim);
    Ok(ratio_field(grid, &mass, sums, |j| mass[j] > 0.0)?)
}

/// Nodes where deposited density is below this fraction of the mean get `u = 0`.
pub const MOMENT_FLOOR: f64 = 1e-6;

/// Cloud-in-cell density (unit mass) and velocity `u^ε = momentum/density`.
pub fn moments(ens: &ParticleEnsemble, grid: &PeriodicGrid) -> Result<(Field, VectorField), ParticleError> {
    if grid.dim() != ens.dim {
        return Err(GridError::Mismatch.into());
    }
    let (mass, mom) = deposit(grid, &ens.positions, &ens.velocities, ens.dim);
    let scale = 1.0 / (ens.len() as f64 * grid.cell_volume());
    let rho: Vec<f64> = mass.iter().map(|m| m * scale).collect();
    let u = ratio_field(grid, &mass, mom, |j| rho[j] > MOMENT_FLOOR)?;
    Ok((Field::new(grid, rho)?, u))
}

/// Cloud-in-cell interpolation of a grid velocity back to positions.
fn interpolate(u: &VectorField, positions: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let grid = u.grid();
    positions
        .iter()
        .map(|x| {
            let mut out = [0.0; 2];
            for (node, w) in cic_weights(grid, x) {
                for (a, c) in u.components().iter().enumerate() {
                    out[a] += w * c.values()[node];
                }
            }
            out
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyGap {
    /// `∫ ρ^ε/2 |u^ε − u|²`.
    pub velocity_part: f64,
    /// `∫ ρ^ε ln(ρ^ε/ρ) − (ρ^ε − ρ)`.
    pub density_part: f64,
    /// Nodes with `ρ^ε = 0`, where the integrand takes the value `ρ`.
    pub empty_nodes: usize,
}

impl EntropyGap {
    pub fn total(&self) -> f64 {
        self.velocity_part + self.density_part
    }
}

pub fn relative_entropy_gap(
    rho_eps: &Field,
    u_eps: &VectorField,
    fluid: &FluidState,
) -> Result<EntropyGap, ParticleError> {
    let rho = fluid.rho();
    if rho.grid() != rho_eps.grid() || u_eps.grid() != rho_eps.grid() {
        return Err(GridError::Mismatch.into());
    }
    let min = rho.min();
    if !(min > 0.0) {
        return Err(ParticleError::NonPositiveDensity { min });
    }
    let u = fluid.velocity();
    let mut diff_sq = Field::zeros(rho.grid());
    for (a, b) in u_eps.components().iter().zip(u.components()) {
        let d = a - b;
        diff_sq = &diff_sq + &(&d * &d);
    }
    let velocity_part = 0.5 * rho_eps.inner(&diff_sq);
    let empty_nodes = rho_eps.values().iter().filter(|&&r| r <= 0.0).count();
    let density = rho_eps.zip_map(&rho, |re, r| {
        let re = re.max(0.0);
        r * relative_entropy_density(re / r - 1.0)
    });
    Ok(EntropyGap {
        velocity_part,
        density_part: density.integral().max(0.0),
        empty_nodes,
    })
}

/// Restricts a fluid state to a coarser grid by sampling the coarse nodes.
pub fn restrict(state: &FluidState, coarse: &PeriodicGrid) -> Result<FluidState, ParticleError> {
    let fine = state.grid();
    if fine.dim() != coarse.dim() || !fine.n().is_multiple_of(coarse.n()) {
        return Err(GridError::Mismatch.into());
    }
    let r = fine.n() / coarse.n();
    let pick = |f: &Field| {
        let vals = (0..coarse.len())
            .map(|j| {
                let [a, b] = coarse.multi_index(j);
                let b = if coarse.dim() == 1 { 0 } else { b * r };
                f.values()[fine.flat_index([a * r, b])]
            })
            .collect();
        Field::new(coarse, vals)
    };
    let rho = pick(&state.rho())?;
    let u = state
        .velocity()
        .components()
        .iter()
        .map(pick)
        .collect::<Result<Vec<_>, _>>()?;
    FluidState::new(
        crate::dynamics::Formulation::Conservative,
        rho,
        VectorField::new(u)?,
        state.time(),
    )
    .map_err(|_| ParticleError::NonPositiveDensity { min: state.rho().min() })
}

/// Positions `x_i = F^{-1}((i + ½)/N)` for a 1D density, by bisection on
/// the trapezoidal CDF of `density` evaluated on a fine table.
pub fn stratified_positions(density: impl Fn(f64) -> f64, count: usize) -> Vec<f64> {
    let table = 4096;
    let h = 1.0 / table as f64;
    let mut cdf = vec![0.0; table + 1];
    for i in 0..table {
        let a = density(i as f64 * h);
        let b = density((i + 1) as f64 * h);
        cdf[i + 1] = cdf[i] + 0.5 * (a + b) * h;
    }
    let total = cdf[table];
    (0..count)
        .map(|i| {
            let target = (i as f64 + 0.5) / count as f64 * total;
            let k = cdf.partition_point(|&c| c < target).clamp(1, table);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
            ((k - 1) as f64 + frac) * h
        })
        .collect()
}

/// Independent standard normal pairs, one stream per agent.
pub fn maxwellian_velocities(seed: u64, count: usize) -> Vec<[f64; 2]> {
    (0..count).map(|i| gaussian_pair(seed, i, 0)).collect()
}

/// Uniform positions and velocities in `[-1, 1]^d` from `seed`.
pub fn random_ensemble(dim: usize, count: usize, seed: u64) -> Result<ParticleEnsemble, ParticleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut pos = Vec::with_capacity(count);
    let mut vel = Vec::with_capacity(count);
    for _ in 0..count {
        pos.push([gen(0.0, 1.0), if dim == 2 { gen(0.0, 1.0) } else { 0.0 }]);
        vel.push([gen(-1.0, 1.0), if dim == 2 { gen(-1.0, 1.0) } else { 0.0 }]);
    }
    ParticleEnsemble::new(dim, pos, vel, seed)
}
