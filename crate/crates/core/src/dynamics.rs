//! Right-hand sides of the isothermal Euler-alignment system.
//!
//! Two equivalent formulations are supported:
//!
//! * conservative, unknowns `(ρ, m = ρu)`:
//!   `∂_t ρ = −∇·m`,
//!   `∂_t m = −∇·(m⊗u) − ∇ρ − [(ψ∗ρ) m − ρ (ψ∗m)]`;
//! * logarithmic, unknowns `(h = ln ρ, u)`:
//!   `∂_t h = −∇h·u − ∇·u`,
//!   `∂_t u = −u·∇u − ∇h − L(e^h, u)`,
//!
//! where `L(ρ, u)(x) = ∫ ψ(x−y)(u(x)−u(y)) ρ(y) dy = (ψ∗ρ)u − ψ∗(ρu)`.
//! The pressureless closure drops the `∇ρ` (resp. `∇h`) term.
//!
//! Every nonlinear product is projected with the two-thirds rule before it
//! enters a derivative or a sum, and every returned rate is band-limited.

use thiserror::Error;

use crate::grid::{
    convolve_spectral, dealias, divergence, gradient, Field, GridError, PeriodicGrid, VectorField,
};
use crate::kernel::Kernel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("density must be positive (min {min:e})")]
    NonPositiveDensity { min: f64 },
    #[error("operation expects the {expected:?} formulation")]
    WrongFormulation { expected: Formulation },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// `(ρ, u)` evolved through `(ρ, ρu)`.
    Conservative,
    /// `(h, u)` with `ρ = e^h`.
    Log,
}

impl Formulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::Conservative => "conservative",
            Formulation::Log => "log",
        }
    }
}

/// Whether the isothermal pressure `p(ρ) = ρ` is present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Closure {
    Isothermal,
    /// Mono-kinetic closure: the same system without pressure.
    Pressureless,
}

/// Density and velocity at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    formulation: Formulation,
    /// `ρ` (conservative) or `h = ln ρ` (log).
    density: Field,
    velocity: VectorField,
    time: f64,
}

impl FluidState {
    pub fn new(
        formulation: Formulation,
        density: Field,
        velocity: VectorField,
        time: f64,
    ) -> Result<Self, DynamicsError> {
        if density.grid() != velocity.grid() || velocity.dim() != density.grid().dim() {
            return Err(GridError::Mismatch.into());
        }
        if !density.is_finite() || !velocity.is_finite() {
            return Err(DynamicsError::NonFinite("state"));
        }
        if formulation == Formulation::Conservative {
            let min = density.min();
            if min <= 0.0 {
                return Err(DynamicsError::NonPositiveDensity { min });
            }
        }
        Ok(Self {
            formulation,
            density,
            velocity,
            time,
        })
    }

    /// State from physical `(ρ, u)` in the requested formulation.
    pub fn from_primitive(
        formulation: Formulation,
        rho: Field,
        velocity: VectorField,
        time: f64,
    ) -> Result<Self, DynamicsError> {
        let state = FluidState::new(Formulation::Conservative, rho, velocity, time)?;
        convert_formulation(&state, formulation)
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    /// Stored density variable: `ρ` or `h` depending on the formulation.
    pub fn density(&self) -> &Field {
        &self.density
    }

    pub fn velocity(&self) -> &VectorField {
        &self.velocity
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.density.grid()
    }

    /// Physical density `ρ`.
    pub fn rho(&self) -> Field {
        match self.formulation {
            Formulation::Conservative => self.density.clone(),
            Formulation::Log => self.density.map(f64::exp),
        }
    }

    /// `ρ − 1`, computed with `expm1` in the log formulation.
    pub fn rho_minus_one(&self) -> Field {
        match self.formulation {
            Formulation::Conservative => self.density.map(|r| r - 1.0),
            Formulation::Log => self.density.map(f64::exp_m1),
        }
    }

    /// `h = ln ρ`.
    pub fn log_density(&self) -> Result<Field, DynamicsError> {
        match self.formulation {
            Formulation::Log => Ok(self.density.clone()),
            Formulation::Conservative => {
                let min = self.density.min();
                if min <= 0.0 {
                    return Err(DynamicsError::NonPositiveDensity { min });
                }
                Ok(self.density.map(f64::ln))
            }
        }
    }

    /// Evolved unknowns: `(ρ, ρu)` or `(h, u)`.
    pub fn to_variables(&self) -> StateVector {
        match self.formulation {
            Formulation::Conservative => StateVector {
                scalar: self.density.clone(),
                vector: self.velocity.map(|c| &self.density * c),
            },
            Formulation::Log => StateVector {
                scalar: self.density.clone(),
                vector: self.velocity.clone(),
            },
        }
    }

    /// Inverse of [`to_variables`](Self::to_variables).
    pub fn from_variables(
        formulation: Formulation,
        vars: StateVector,
        time: f64,
    ) -> Result<Self, DynamicsError> {
        let StateVector { scalar, vector } = vars;
        match formulation {
            Formulation::Conservative => {
                let min = scalar.min();
                if min <= 0.0 || min.is_nan() {
                    return Err(DynamicsError::NonPositiveDensity { min });
                }
                let u = vector.map(|m| m.zip_map(&scalar, |a, r| a / r));
                FluidState::new(formulation, scalar, u, time)
            }
            Formulation::Log => FluidState::new(formulation, scalar, vector, time),
        }
    }
}

/// A pair (scalar field, vector field): evolved unknowns or their rates.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub scalar: Field,
    pub vector: VectorField,
}

impl StateVector {
    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &StateVector, b: f64) -> StateVector {
        let f = |x: &Field, y: &Field| x.zip_map(y, |p, q| a * p + b * q);
        StateVector {
            scalar: f(&self.scalar, &other.scalar),
            vector: self.vector.zip_map(&other.vector, f),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.scalar.is_finite() && self.vector.is_finite()
    }
}

fn check_grid(kernel: &Kernel, f: &Field) -> Result<(), DynamicsError> {
    if kernel.grid() != f.grid() {
        Err(GridError::Mismatch.into())
    } else {
        Ok(())
    }
}

fn conv(kernel: &Kernel, f: &Field) -> Field {
    convolve_spectral(kernel.spectral(), &f.spectrum()).to_field()
}

fn dprod(a: &Field, b: &Field) -> Field {
    dealias(&(a * b))
}

/// `L(x) = ∫ ψ(x−y)(u(x)−u(y)) ρ(y) dy`, evaluated as `(ψ∗ρ)u − ψ∗(ρu)`
/// with plain pointwise products, so it coincides with the grid double sum.
pub fn alignment_operator(
    rho: &Field,
    u: &VectorField,
    psi: &Kernel,
) -> Result<VectorField, DynamicsError> {
    check_grid(psi, rho)?;
    if rho.grid() != u.grid() {
        return Err(GridError::Mismatch.into());
    }
    let psi_rho = conv(psi, rho);
    Ok(u.map(|ui| &(&psi_rho * ui) - &conv(psi, &(rho * ui))))
}

/// Same operator with every product projected by the two-thirds rule.
fn alignment_dealiased(rho: &Field, u: &VectorField, psi: &Kernel) -> VectorField {
    let psi_rho = conv(psi, rho);
    u.map(|ui| &dprod(&psi_rho, ui) - &conv(psi, &dprod(rho, ui)))
}

fn band_limit(v: StateVector) -> StateVector {
    StateVector {
        scalar: dealias(&v.scalar),
        vector: v.vector.map(dealias),
    }
}

/// Rates of `(ρ, m)` given the conservative unknowns.
pub(crate) fn conservative_rates(
    rho: &Field,
    m: &VectorField,
    psi: &Kernel,
    closure: Closure,
) -> Result<StateVector, DynamicsError> {
    check_grid(psi, rho)?;
    let min = rho.min();
    if min <= 0.0 || min.is_nan() {
        return Err(DynamicsError::NonPositiveDensity { min });
    }
    let grid = rho.grid().clone();
    let dim = grid.dim();
    let u = m.map(|mi| mi.zip_map(rho, |a, r| a / r));
    let drho = divergence(m).scale(-1.0);
    let grad_rho = gradient(rho);
    let psi_rho = conv(psi, rho);
    let mut dm = Vec::with_capacity(dim);
    for i in 0..dim {
        let mi = m.component(i);
        let flux = VectorField::from_raw((0..dim).map(|j| dprod(mi, u.component(j))).collect());
        let mut rate = divergence(&flux).scale(-1.0);
        if closure == Closure::Isothermal {
            rate = &rate - grad_rho.component(i);
        }
        // antisymmetric form: integrates to zero for symmetric ψ
        let align = &dprod(&psi_rho, mi) - &dprod(rho, &conv(psi, mi));
        rate = &rate - &align;
        dm.push(rate);
    }
    let out = band_limit(StateVector {
        scalar: drho,
        vector: VectorField::from_raw(dm),
    });
    if !out.is_finite() {
        return Err(DynamicsError::NonFinite("conservative rates"));
    }
    Ok(out)
}

/// Rates of `(h, u)` given the log unknowns.
pub(crate) fn log_rates(
    h: &Field,
    u: &VectorField,
    psi: &Kernel,
    closure: Closure,
) -> Result<StateVector, DynamicsError> {
    check_grid(psi, h)?;
    let dim = h.grid().dim();
    let grad_h = gradient(h);
    let rho = dealias(&h.map(f64::exp));
    let mut dh = divergence(u).scale(-1.0);
    for j in 0..dim {
        dh = &dh - &dprod(grad_h.component(j), u.component(j));
    }
    let align = alignment_dealiased(&rho, u, psi);
    let mut du = Vec::with_capacity(dim);
    for i in 0..dim {
        let grad_ui = gradient(u.component(i));
        let mut rate = align.component(i).scale(-1.0);
        for j in 0..dim {
            rate = &rate - &dprod(u.component(j), grad_ui.component(j));
        }
        if closure == Closure::Isothermal {
            rate = &rate - grad_h.component(i);
        }
        du.push(rate);
    }
    let out = band_limit(StateVector {
        scalar: dh,
        vector: VectorField::from_raw(du),
    });
    if !out.is_finite() {
        return Err(DynamicsError::NonFinite("log rates"));
    }
    Ok(out)
}

/// Rates of the evolved unknowns of either formulation.
pub fn rates(
    formulation: Formulation,
    vars: &StateVector,
    psi: &Kernel,
    closure: Closure,
) -> Result<StateVector, DynamicsError> {
    match formulation {
        Formulation::Conservative => conservative_rates(&vars.scalar, &vars.vector, psi, closure),
        Formulation::Log => log_rates(&vars.scalar, &vars.vector, psi, closure),
    }
}

fn require(state: &FluidState, expected: Formulation) -> Result<(), DynamicsError> {
    if state.formulation() == expected {
        Ok(())
    } else {
        Err(DynamicsError::WrongFormulation { expected })
    }
}

/// `(∂_t ρ, ∂_t(ρu))` for a conservative state.
pub fn rhs_conservative(state: &FluidState, psi: &Kernel) -> Result<StateVector, DynamicsError> {
    require(state, Formulation::Conservative)?;
    let vars = state.to_variables();
    conservative_rates(&vars.scalar, &vars.vector, psi, Closure::Isothermal)
}

/// `(∂_t h, ∂_t u)` for a log state.
pub fn rhs_log(state: &FluidState, psi: &Kernel) -> Result<StateVector, DynamicsError> {
    require(state, Formulation::Log)?;
    log_rates(state.density(), state.velocity(), psi, Closure::Isothermal)
}

/// [`rhs_conservative`] without the pressure gradient.
pub fn rhs_pressureless(state: &FluidState, psi: &Kernel) -> Result<StateVector, DynamicsError> {
    require(state, Formulation::Conservative)?;
    let vars = state.to_variables();
    conservative_rates(&vars.scalar, &vars.vector, psi, Closure::Pressureless)
}

/// Pointwise `h = ln ρ` / `ρ = e^h`.
pub fn convert_formulation(
    state: &FluidState,
    target: Formulation,
) -> Result<FluidState, DynamicsError> {
    if state.formulation == target {
        return Ok(state.clone());
    }
    let density = match target {
        Formulation::Log => state.log_density()?,
        Formulation::Conservative => state.rho(),
    };
    FluidState::new(target, density, state.velocity.clone(), state.time)
}

/// `max_x |∇u|` (Frobenius norm of the velocity gradient).
pub fn velocity_gradient_sup(u: &VectorField) -> f64 {
    let grid = u.grid();
    let mut acc = Field::zeros(grid);
    for c in u.components() {
        let g = gradient(c);
        acc = &acc + &g.norm_sq();
    }
    acc.max().max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernel::{build_kernel, KernelSpec};
    use std::f64::consts::PI;

    fn grid1(n: usize) -> PeriodicGrid {
        make_grid(1, n).unwrap()
    }

    fn cosine(g: &PeriodicGrid) -> Kernel {
        build_kernel(&KernelSpec::Cosine { a: 1.0, b: 0.5 }, g).unwrap()
    }

    fn state1(g: &PeriodicGrid, rho: impl Fn(f64) -> f64, u: impl Fn(f64) -> f64) -> FluidState {
        FluidState::new(
            Formulation::Conservative,
            Field::from_fn(g, |x| rho(x[0])),
            VectorField::new(vec![Field::from_fn(g, |x| u(x[0]))]).unwrap(),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn alignment_vanishes_for_constant_velocity() {
        let g = grid1(32);
        let psi = cosine(&g);
        let rho = Field::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
        let u = VectorField::constant(&g, &[0.7]);
        let l = alignment_operator(&rho, &u, &psi).unwrap();
        assert!(l.component(0).max_abs() < 1e-14);
    }

    #[test]
    fn alignment_with_unit_kernel() {
        let g = grid1(32);
        let psi = build_kernel(&KernelSpec::Constant { a: 1.0 }, &g).unwrap();
        let rho = Field::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
        let u = VectorField::new(vec![Field::from_fn(&g, |x| 0.2 + (2.0 * PI * x[0]).sin())]).unwrap();
        let mc = rho.inner(u.component(0));
        let l = alignment_operator(&rho, &u, &psi).unwrap();
        for (lv, uv) in l.component(0).values().iter().zip(u.component(0).values()) {
            assert!((lv - (uv - mc)).abs() < 1e-13);
        }
    }

    #[test]
    fn equilibrium_and_galilean_states_are_steady() {
        let g = grid1(32);
        let psi = cosine(&g);
        for c in [0.0, 0.4] {
            let s = state1(&g, |_| 1.0, |_| c);
            for r in [rhs_conservative(&s, &psi).unwrap(), rhs_pressureless(&s, &psi).unwrap()] {
                assert!(r.scalar.max_abs() < 1e-14);
                assert!(r.vector.component(0).max_abs() < 1e-14);
            }
            let l = convert_formulation(&s, Formulation::Log).unwrap();
            let r = rhs_log(&l, &psi).unwrap();
            assert!(r.scalar.max_abs() < 1e-14);
            assert!(r.vector.component(0).max_abs() < 1e-14);
        }
    }

    #[test]
    fn log_rhs_with_unit_kernel() {
        let g = grid1(64);
        let psi = build_kernel(&KernelSpec::Constant { a: 1.0 }, &g).unwrap();
        let eps = 0.01;
        let s = FluidState::new(
            Formulation::Log,
            Field::zeros(&g),
            VectorField::new(vec![Field::from_fn(&g, |x| eps * (2.0 * PI * x[0]).sin())]).unwrap(),
            0.0,
        )
        .unwrap();
        let r = rhs_log(&s, &psi).unwrap();
        // mean of u is zero, so −u u_x − (u − ∫u)
        for j in 0..g.len() {
            let x = g.node(j)[0];
            let u = eps * (2.0 * PI * x).sin();
            let ux = eps * 2.0 * PI * (2.0 * PI * x).cos();
            assert!((r.vector.component(0).values()[j] - (-u * ux - u)).abs() < 1e-14);
            assert!((r.scalar.values()[j] + ux).abs() < 1e-13);
        }
    }

    #[test]
    fn pressure_difference_is_density_gradient() {
        let g = grid1(32);
        let psi = cosine(&g);
        let s = state1(&g, |x| 1.0 + 0.2 * (2.0 * PI * x).cos(), |x| 0.1 * (4.0 * PI * x).sin());
        let a = rhs_conservative(&s, &psi).unwrap();
        let b = rhs_pressureless(&s, &psi).unwrap();
        let grad = gradient(s.density());
        assert_eq!(a.scalar, b.scalar);
        let diff = &a.vector.component(0).clone() - b.vector.component(0);
        let expect = dealias(grad.component(0)).scale(-1.0);
        for (d, e) in diff.values().iter().zip(expect.values()) {
            assert!((d - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conversion_round_trip_and_errors() {
        let g = grid1(16);
        let s = state1(&g, |_| 2.0, |_| 0.0);
        let l = convert_formulation(&s, Formulation::Log).unwrap();
        for v in l.density().values() {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
        let back = convert_formulation(&l, Formulation::Conservative).unwrap();
        for v in back.density().values() {
            assert!((v - 2.0).abs() < 1e-14);
        }
        let bad = FluidState::new(
            Formulation::Conservative,
            Field::from_fn(&g, |x| x[0] - 0.5),
            VectorField::zeros(&g),
            0.0,
        );
        assert!(matches!(bad, Err(DynamicsError::NonPositiveDensity { .. })));
        assert!(matches!(
            rhs_log(&s, &cosine(&g)),
            Err(DynamicsError::WrongFormulation { expected: Formulation::Log })
        ));
    }

    #[test]
    fn kernel_on_other_grid_is_rejected() {
        let g = grid1(16);
        let psi = cosine(&grid1(32));
        let s = state1(&g, |_| 1.0, |_| 0.0);
        assert!(matches!(
            rhs_conservative(&s, &psi),
            Err(DynamicsError::Grid(GridError::Mismatch))
        ));
    }
}
