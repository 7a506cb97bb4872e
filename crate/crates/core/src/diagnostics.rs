//! Conserved quantities, entropy and Lyapunov functionals, the spectral
//! Bogovskii operator, and exponential decay-rate fitting.
//!
//! All integrals are periodic trapezoidal quadratures on the state grid.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{
    alignment_operator, convert_formulation, rhs_conservative, DynamicsError, Formulation,
    FluidState,
};
use crate::grid::{convolve, gradient, sobolev_norm, Field, GridError, VectorField};
use crate::kernel::Kernel;
use rustfft::num_complex::Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("input to the Bogovskii operator has mean {mean:e}, expected 0")]
    NonZeroMean { mean: f64 },
    #[error("Lyapunov functionals need unit mass, got {mass}")]
    MassNotUnit { mass: f64 },
    #[error("constants need 0 < a <= 1 <= b, got a = {a}, b = {b}")]
    Domain { a: f64, b: f64 },
    #[error("decay fit needs at least 8 samples in the window, got {got}")]
    TooFewSamples { got: usize },
    #[error("nonpositive value {value:e} at t = {t}")]
    NonPositive { t: f64, value: f64 },
    #[error("invalid fit window [{t0}, {t1}]")]
    Window { t0: f64, t1: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `(mass, m_c) = (∫ρ, ∫ρu)`.
pub fn conserved_quantities(state: &FluidState) -> (f64, Vec<f64>) {
    let rho = state.rho();
    let mc = state
        .velocity()
        .components()
        .iter()
        .map(|c| rho.inner(c))
        .collect();
    (rho.integral(), mc)
}

/// `𝓓 = ½∬ψ(x−y)|u(x)−u(y)|²ρ(x)ρ(y)`, through the identity
/// `𝓓 = ∫ρ|u|²(ψ∗ρ) − ∫ρu·(ψ∗(ρu))`.
pub fn dissipation(state: &FluidState, psi: &Kernel) -> Result<f64, DiagnosticsError> {
    let rho = state.rho();
    if psi.grid() != rho.grid() {
        return Err(GridError::Mismatch.into());
    }
    let u = state.velocity();
    let psi_rho = convolve(psi.samples(), &rho)?;
    let mut d = (&rho * &u.norm_sq()).inner(&psi_rho);
    for c in u.components() {
        let rho_u = &rho * c;
        d -= rho_u.inner(&convolve(psi.samples(), &rho_u)?);
    }
    Ok(d.max(0.0))
}

/// `g(ρ) = (ρ ln ρ + 1 − ρ)/(ρ−1)² = ∫₀¹ (1−s)/(1+s(ρ−1)) ds`, decreasing
/// from `g(0) = 1` through `g(1) = ½` to `0` at infinity.
pub fn entropy_ratio(rho: f64) -> f64 {
    let c = rho - 1.0;
    if rho <= 1e-12 {
        return 1.0;
    }
    if c.abs() < 1e-3 {
        // Σ_m (−c)^m / ((m+1)(m+2))
        let mut term = 1.0;
        let mut sum = 0.0;
        for m in 0..8 {
            sum += term / ((m + 1) * (m + 2)) as f64;
            term *= -c;
        }
        return sum;
    }
    (rho * rho.ln() - c) / (c * c)
}

/// Pointwise relative entropy `ρ ln ρ + 1 − ρ`, written as `(ρ−1)² g(ρ)`
/// with the limit value 1 as `ρ → 0⁺`.
pub fn relative_entropy_density(rho_minus_one: f64) -> f64 {
    let rho = 1.0 + rho_minus_one;
    if rho <= 1e-12 {
        return 1.0;
    }
    rho_minus_one * rho_minus_one * entropy_ratio(rho)
}

/// `(c₁, c₂)` with `c₁(ρ−1)² ≤ ρ ln ρ + 1 − ρ ≤ c₂(ρ−1)²` on `[lo, hi]`.
pub fn relative_entropy_bounds(lo: f64, hi: f64) -> (f64, f64) {
    (entropy_ratio(hi), entropy_ratio(lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyFunctionals {
    /// `½∫ρ|u|² + ∫ρ ln ρ`.
    pub kinetic_entropy: f64,
    /// `∫(ρ ln ρ + 1 − ρ)`.
    pub rel_entropy: f64,
    /// `E = ∫ρ|u|² + ∫(ρ−1)²`.
    pub energy: f64,
    /// `𝓕 = ∫ρ|u−m_c|² + ∫(ρ−1)²`.
    pub fluctuation: f64,
}

pub fn entropy_functionals(state: &FluidState) -> Result<EntropyFunctionals, DiagnosticsError> {
    let rho = state.rho();
    let dr = state.rho_minus_one();
    let h = match state.formulation() {
        Formulation::Log => state.density().clone(),
        Formulation::Conservative => {
            let min = rho.min();
            if min <= 0.0 {
                return Err(DynamicsError::NonPositiveDensity { min }.into());
            }
            rho.map(f64::ln)
        }
    };
    let u = state.velocity();
    let (_, mc) = conserved_quantities(state);
    let speed_sq = u.norm_sq();
    let rel_sq = relative_speed_sq(u, &mc);
    let kinetic = (&rho * &speed_sq).integral();
    let density_sq = dr.inner(&dr);
    Ok(EntropyFunctionals {
        kinetic_entropy: 0.5 * kinetic + rho.inner(&h),
        rel_entropy: dr.map(relative_entropy_density).integral(),
        energy: kinetic + density_sq,
        fluctuation: rho.inner(&rel_sq) + density_sq,
    })
}

fn relative_speed_sq(u: &VectorField, mc: &[f64]) -> Field {
    let rel = relative_velocity(u, mc);
    rel.norm_sq()
}

fn relative_velocity(u: &VectorField, mc: &[f64]) -> VectorField {
    let comps: Vec<Field> = u
        .components()
        .iter()
        .zip(mc)
        .map(|(c, &m)| c.map(|v| v - m))
        .collect();
    VectorField::new(comps).expect("same grid")
}

fn log_ratio_sq(x: f64) -> f64 {
    if (x - 1.0).abs() < 1e-8 {
        return 1.0;
    }
    (x.ln() / (x - 1.0)).powi(2)
}

/// `(C(a), C(b))` with `C(b)∫(f−1)² ≤ ∫(ln f)² ≤ C(a)∫(f−1)²` whenever
/// `a ≤ f ≤ b`:
/// `C(a) = max{1, (ln a/(1−a))²}`, `C(b) = min{1, (ln b/(b−1))²}`.
pub fn entropy_equivalence_constants(a: f64, b: f64) -> Result<(f64, f64), DiagnosticsError> {
    if !(a > 0.0 && a <= 1.0 && b >= 1.0 && b.is_finite()) {
        return Err(DiagnosticsError::Domain { a, b });
    }
    Ok((log_ratio_sq(a).max(1.0), log_ratio_sq(b).min(1.0)))
}

/// Spectral solution of `∇·v = f`, `∇×v = 0`, `∫v = 0`:
/// `v̂(k) = −i 2πk f̂(k)/|2πk|²` for `k ≠ 0`.
///
/// With `strict`, inputs whose mean exceeds `1e-10` are rejected; otherwise
/// the zero mode is discarded.
pub fn bogovskii(f: &Field, strict: bool) -> Result<VectorField, DiagnosticsError> {
    let mean = f.mean();
    if strict && mean.abs() > 1e-10 {
        return Err(DiagnosticsError::NonZeroMean { mean });
    }
    let grid = f.grid().clone();
    let fs = f.spectrum();
    let n = grid.n() as i64;
    let comps = (0..grid.dim())
        .map(|axis| {
            let g = grid.clone();
            fs.apply(move |j| {
                let k = g.wavevector(j);
                let norm = g.angular_norm_sq(j);
                if norm == 0.0 || k[axis] == -n / 2 {
                    return Complex64::new(0.0, 0.0);
                }
                Complex64::new(0.0, -2.0 * PI * k[axis] as f64 / norm)
            })
            .to_field()
        })
        .collect();
    Ok(VectorField::new(comps)?)
}

/// Discrete multiplier bound `‖𝓑f‖_{H¹} ≤ C‖f‖_{L²}`,
/// `C² = max_{k≠0} (1+|2πk|²)/|2πk|² = 1 + 1/(4π²)`.
pub fn bogovskii_h1_constant() -> f64 {
    (1.0 + 1.0 / (4.0 * PI * PI)).sqrt()
}

/// Ingredients of the σ-corrected pair, both affine in σ:
/// `𝓔^σ = energy − σ·cross` and `𝓓^σ = dissipation + σ·cross_rate`,
/// where `cross = ∫ρ(u−m_c)·𝓑[ρ−1]` and `cross_rate` is its time
/// derivative assembled term by term from the equations of motion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LyapunovParts {
    /// `𝓔 = ½∫ρ|u−m_c|² + ∫(ρ ln ρ + 1 − ρ)`.
    pub energy: f64,
    pub cross: f64,
    /// `𝓓`.
    pub dissipation: f64,
    pub cross_rate: f64,
}

impl LyapunovParts {
    pub fn e_sigma(&self, sigma: f64) -> f64 {
        self.energy - sigma * self.cross
    }

    pub fn d_sigma(&self, sigma: f64) -> f64 {
        self.dissipation + sigma * self.cross_rate
    }
}

pub fn lyapunov_parts(state: &FluidState, psi: &Kernel) -> Result<LyapunovParts, DiagnosticsError> {
    let cons = convert_formulation(state, Formulation::Conservative)?;
    let rho = cons.rho();
    let mass = rho.integral();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(DiagnosticsError::MassNotUnit { mass });
    }
    let u = cons.velocity();
    let dim = u.dim();
    let (_, mc) = conserved_quantities(&cons);
    let dr = state.rho_minus_one();
    let b = bogovskii(&dr, false)?;
    let rel = relative_velocity(u, &mc);

    let rel_entropy = dr.map(relative_entropy_density).integral();
    let energy = 0.5 * rho.inner(&rel.norm_sq()) + rel_entropy;
    let cross = rho.inner(&rel.dot(&b));

    let drho_dt = rhs_conservative(&cons, psi)?.scalar;
    let b_div = bogovskii(&drho_dt.scale(-1.0), false)?;

    // ∫ (ρu⊗u) : ∇𝓑[ρ−1]
    let mut flux = 0.0;
    for i in 0..dim {
        let grad_bi = gradient(b.component(i));
        let rho_ui = &rho * u.component(i);
        for j in 0..dim {
            flux += (&rho_ui * u.component(j)).inner(grad_bi.component(j));
        }
    }
    let pressure = dr.inner(&dr);
    let transport = rho.inner(&rel.dot(&b_div));
    // ∂_t(ρ m_c) = m_c ∂_t ρ
    let mc_dot_b = b
        .components()
        .iter()
        .zip(&mc)
        .fold(Field::zeros(rho.grid()), |acc, (bi, &m)| &acc + &bi.scale(m));
    let momentum = drho_dt.inner(&mc_dot_b);
    let align = alignment_operator(&rho, u, psi)?;
    let alignment = rho.inner(&b.dot(&align));

    Ok(LyapunovParts {
        energy,
        cross,
        dissipation: dissipation(&cons, psi)?,
        cross_rate: flux + pressure - transport - momentum - alignment,
    })
}

/// `(𝓔^σ, 𝓓^σ)`.
pub fn lyapunov_sigma(
    state: &FluidState,
    psi: &Kernel,
    sigma: f64,
) -> Result<(f64, f64), DiagnosticsError> {
    let p = lyapunov_parts(state, psi)?;
    Ok((p.e_sigma(sigma), p.d_sigma(sigma)))
}

/// One time slice of every monitored functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub m_c: Vec<f64>,
    pub energy: f64,
    pub fluctuation: f64,
    pub dissipation: f64,
    pub kinetic_entropy: f64,
    pub rel_entropy: f64,
    pub e_sigma: f64,
    pub d_sigma: f64,
    pub min_rho: f64,
    pub max_speed: f64,
    pub hs_norm: f64,
    pub lyapunov: LyapunovParts,
}

/// `‖(h, u)‖_{H^s}`.
pub fn hs_norm(state: &FluidState, s: f64) -> Result<f64, DiagnosticsError> {
    let h = state.log_density()?;
    let mut sq = sobolev_norm(&h, s).powi(2);
    for c in state.velocity().components() {
        sq += sobolev_norm(c, s).powi(2);
    }
    Ok(sq.sqrt())
}

/// Evaluates a full record. The Lyapunov pair is reported for `sigma`.
/// When the mass is not 1 the σ-pair is undefined and recorded as NaN.
pub fn record(
    state: &FluidState,
    psi: &Kernel,
    sigma: f64,
    sobolev_s: f64,
) -> Result<DiagnosticsRecord, DiagnosticsError> {
    let (mass, m_c) = conserved_quantities(state);
    let ent = entropy_functionals(state)?;
    let lyapunov = match lyapunov_parts(state, psi) {
        Ok(p) => p,
        Err(DiagnosticsError::MassNotUnit { .. }) => LyapunovParts {
            energy: f64::NAN,
            cross: f64::NAN,
            dissipation: dissipation(state, psi)?,
            cross_rate: f64::NAN,
        },
        Err(e) => return Err(e),
    };
    let rho = state.rho();
    Ok(DiagnosticsRecord {
        t: state.time(),
        mass,
        m_c,
        energy: ent.energy,
        fluctuation: ent.fluctuation,
        dissipation: lyapunov.dissipation,
        kinetic_entropy: ent.kinetic_entropy,
        rel_entropy: ent.rel_entropy,
        e_sigma: lyapunov.e_sigma(sigma),
        d_sigma: lyapunov.d_sigma(sigma),
        min_rho: rho.min(),
        max_speed: state.velocity().max_norm(),
        hs_norm: hs_norm(state, sobolev_s)?,
        lyapunov,
    })
}

/// Empirical sandwich constants over a trajectory:
/// `c₃ ≤ 𝓔^σ/𝓕 ≤ c₄` and `c₅ ≤ 𝓓^σ/𝓕 ≤ c₆`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquivalenceConstants {
    pub sigma: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

impl EquivalenceConstants {
    pub fn all_positive(&self) -> bool {
        self.c3 > 0.0 && self.c4 > 0.0 && self.c5 > 0.0 && self.c6 > 0.0
    }
}

pub fn equivalence_scan(
    records: &[DiagnosticsRecord],
    sigma: f64,
) -> Result<EquivalenceConstants, DiagnosticsError> {
    if records.is_empty() {
        return Err(DiagnosticsError::TooFewSamples { got: 0 });
    }
    let mut out = EquivalenceConstants {
        sigma,
        c3: f64::INFINITY,
        c4: f64::NEG_INFINITY,
        c5: f64::INFINITY,
        c6: f64::NEG_INFINITY,
    };
    for r in records {
        if !(r.fluctuation > 0.0) {
            return Err(DiagnosticsError::NonPositive {
                t: r.t,
                value: r.fluctuation,
            });
        }
        let e = r.lyapunov.e_sigma(sigma) / r.fluctuation;
        let d = r.lyapunov.d_sigma(sigma) / r.fluctuation;
        out.c3 = out.c3.min(e);
        out.c4 = out.c4.max(e);
        out.c5 = out.c5.min(d);
        out.c6 = out.c6.max(d);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Negated least-squares slope of `ln F` against `t`.
    pub c_hat: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fits `F ≈ A e^{−c t}` on `t ∈ [t0, t1]`.
pub fn fit_decay_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit, DiagnosticsError> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(DiagnosticsError::Window { t0, t1 });
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= t0 && *t <= t1)
        .collect();
    if pts.len() < 8 {
        return Err(DiagnosticsError::TooFewSamples { got: pts.len() });
    }
    if let Some(&(t, value)) = pts.iter().find(|(_, f)| !(*f > 0.0)) {
        return Err(DiagnosticsError::NonPositive { t, value });
    }
    let n = pts.len() as f64;
    let ys: Vec<f64> = pts.iter().map(|(_, f)| f.ln()).collect();
    let tm = pts.iter().map(|(t, _)| t).sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for ((t, _), y) in pts.iter().zip(&ys) {
        let dt = t - tm;
        let dy = y - ym;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if syy <= (1e-14 * ym.abs().max(1.0)).powi(2) * n {
        return Ok(DecayFit {
            c_hat: 0.0,
            r_squared: 0.0,
            samples: pts.len(),
        });
    }
    let slope = sty / stt;
    let ss_res: f64 = pts
        .iter()
        .zip(&ys)
        .map(|((t, _), y)| {
            let fit = ym + slope * (t - tm);
            (y - fit).powi(2)
        })
        .sum();
    Ok(DecayFit {
        c_hat: -slope,
        r_squared: 1.0 - ss_res / syy,
        samples: pts.len(),
    })
}

/// Divergence residual and curl of `v`, for checking the Bogovskii solve.
pub fn divergence_curl_residual(v: &VectorField, f: &Field) -> (f64, f64) {
    let div = crate::grid::divergence(v);
    let div_res = (&div - f).max_abs();
    let curl = if v.dim() == 2 {
        let gx = gradient(v.component(0));
        let gy = gradient(v.component(1));
        (gy.component(0) - gx.component(1)).max_abs()
    } else {
        0.0
    };
    (div_res, curl)
}
