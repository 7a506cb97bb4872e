//! SSP-RK3 time stepping with a CFL guard, blow-up monitors and
//! trajectory recording.

use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::{record, DiagnosticsError, DiagnosticsRecord};
use crate::dynamics::{rates, velocity_gradient_sup, Closure, DynamicsError, FluidState, StateVector};
use crate::kernel::Kernel;

pub const DEFAULT_CFL: f64 = 0.4;
const GRADIENT_LIMIT: f64 = 1e3;
const DENSITY_FLOOR: f64 = 1e-8;
const MAX_RESTARTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("dt = {dt:e} exceeds the CFL limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("invalid time step {0}")]
    InvalidDt(f64),
    #[error("invalid final time {0}")]
    InvalidTime(f64),
    #[error("step produced non-finite values")]
    NonFinite,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    BlowupTrigger,
    DensityFloor,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::BlowupTrigger => "blowup_trigger",
            Termination::DensityFloor => "density_floor",
        }
    }
}

/// Largest admissible step: `cfl·dx/(max|u| + 1 + ‖ψ‖_∞)`.
pub fn cfl_limit(state: &FluidState, psi: &Kernel, cfl: f64) -> f64 {
    let speed = state.velocity().max_norm();
    cfl * state.grid().dx() / (speed + 1.0 + psi.sup_norm())
}

/// One Shu–Osher SSP-RK3 step for `y' = f(y)`.
pub fn ssp_rk3<E>(
    y: &StateVector,
    dt: f64,
    mut f: impl FnMut(&StateVector) -> Result<StateVector, E>,
) -> Result<StateVector, E> {
    let k0 = f(y)?;
    let y1 = y.lincomb(1.0, &k0, dt);
    let k1 = f(&y1)?;
    let y2 = y.lincomb(0.75, &y1.lincomb(1.0, &k1, dt), 0.25);
    let k2 = f(&y2)?;
    Ok(y.lincomb(1.0 / 3.0, &y2.lincomb(1.0, &k2, dt), 2.0 / 3.0))
}

/// Advances the isothermal system by `dt` with the default CFL constant.
pub fn step(state: &FluidState, psi: &Kernel, dt: f64) -> Result<FluidState, IntegratorError> {
    step_with(state, psi, dt, Closure::Isothermal, DEFAULT_CFL)
}

pub fn step_with(
    state: &FluidState,
    psi: &Kernel,
    dt: f64,
    closure: Closure,
    cfl: f64,
) -> Result<FluidState, IntegratorError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(IntegratorError::InvalidDt(dt));
    }
    let limit = cfl_limit(state, psi, cfl);
    if dt > limit * (1.0 + 1e-12) {
        return Err(IntegratorError::Cfl { dt, limit });
    }
    let formulation = state.formulation();
    let next = ssp_rk3(&state.to_variables(), dt, |v| rates(formulation, v, psi, closure))?;
    if !next.is_finite() {
        return Err(IntegratorError::NonFinite);
    }
    Ok(FluidState::from_variables(formulation, next, state.time() + dt)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub t_end: f64,
    pub cfl: f64,
    /// Fixed step; derived from the initial data when `None`.
    pub dt: Option<f64>,
    pub closure: Closure,
    pub record_stride: usize,
    pub state_stride: usize,
    /// σ at which `E_sigma`/`D_sigma` are reported.
    pub sigma: f64,
    pub sobolev_s: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            cfl: DEFAULT_CFL,
            dt: None,
            closure: Closure::Isothermal,
            record_stride: 10,
            state_stride: 100,
            sigma: 0.05,
            sobolev_s: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<FluidState>,
    pub records: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub dt: f64,
    pub steps: usize,
    pub restarts: usize,
}

/// Initial fixed step: `cfl·dx/(1.5·max|u₀| + 1 + ‖ψ‖_∞)`, shrunk so that
/// an integer number of steps lands on `t_end`.
pub fn initial_dt(state: &FluidState, psi: &Kernel, cfl: f64, t_end: f64) -> (f64, usize) {
    let speed = state.velocity().max_norm();
    let dt = cfl * state.grid().dx() / (1.5 * speed + 1.0 + psi.sup_norm());
    if t_end <= 0.0 {
        return (dt, 0);
    }
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    (t_end / steps as f64, steps)
}

enum Attempt {
    Done(Trajectory),
    CflTripped,
}

/// Integrates to `spec.t_end` or until a monitor fires.
pub fn run(initial: &FluidState, psi: &Kernel, spec: &RunSpec) -> Result<Trajectory, IntegratorError> {
    if !(spec.t_end >= 0.0 && spec.t_end.is_finite()) {
        return Err(IntegratorError::InvalidTime(spec.t_end));
    }
    let (mut dt, mut steps) = match spec.dt {
        Some(dt) if !(dt > 0.0 && dt.is_finite()) => return Err(IntegratorError::InvalidDt(dt)),
        Some(dt) => {
            let steps = ((spec.t_end / dt) - 1e-9).ceil().max(0.0) as usize;
            (if steps > 0 { spec.t_end / steps as f64 } else { dt }, steps)
        }
        None => initial_dt(initial, psi, spec.cfl, spec.t_end),
    };
    let mut restarts = 0;
    loop {
        match attempt(initial, psi, spec, dt, steps, restarts)? {
            Attempt::Done(t) => return Ok(t),
            Attempt::CflTripped if restarts < MAX_RESTARTS => {
                restarts += 1;
                dt *= 0.5;
                steps *= 2;
            }
            Attempt::CflTripped => {
                return blowup(initial, psi, spec, dt, restarts);
            }
        }
    }
}

fn blowup(
    initial: &FluidState,
    psi: &Kernel,
    spec: &RunSpec,
    dt: f64,
    restarts: usize,
) -> Result<Trajectory, IntegratorError> {
    let start = initial.clone().with_time(0.0);
    Ok(Trajectory {
        records: vec![record(&start, psi, spec.sigma, spec.sobolev_s)?],
        states: vec![start],
        termination: Termination::BlowupTrigger,
        dt,
        steps: 0,
        restarts,
    })
}

fn attempt(
    initial: &FluidState,
    psi: &Kernel,
    spec: &RunSpec,
    dt: f64,
    steps: usize,
    restarts: usize,
) -> Result<Attempt, IntegratorError> {
    let record_stride = spec.record_stride.max(1);
    let state_stride = spec.state_stride.max(1);
    let mut state = initial.clone().with_time(0.0);
    let mut records = vec![record(&state, psi, spec.sigma, spec.sobolev_s)?];
    let mut states = vec![state.clone()];
    let mut termination = Termination::Completed;
    let mut taken = 0;
    for k in 1..=steps {
        let next = match step_with(&state, psi, dt, spec.closure, spec.cfl) {
            Ok(s) => s.with_time(k as f64 * dt),
            Err(IntegratorError::Cfl { .. }) => return Ok(Attempt::CflTripped),
            Err(IntegratorError::NonFinite)
            | Err(IntegratorError::Dynamics(DynamicsError::NonFinite(_))) => {
                termination = Termination::BlowupTrigger;
                break;
            }
            Err(IntegratorError::Dynamics(DynamicsError::NonPositiveDensity { .. })) => {
                termination = Termination::DensityFloor;
                break;
            }
            Err(e) => return Err(e),
        };
        state = next;
        taken = k;
        if state.rho().min() < DENSITY_FLOOR {
            termination = Termination::DensityFloor;
        } else if velocity_gradient_sup(state.velocity()) > GRADIENT_LIMIT {
            termination = Termination::BlowupTrigger;
        }
        let last = k == steps || termination != Termination::Completed;
        if k % record_stride == 0 || last {
            match record(&state, psi, spec.sigma, spec.sobolev_s) {
                Ok(r) => records.push(r),
                Err(_) if termination != Termination::Completed => {}
                Err(e) => return Err(e.into()),
            }
        }
        if k % state_stride == 0 || last {
            states.push(state.clone());
        }
        if termination != Termination::Completed {
            break;
        }
    }
    if termination != Termination::Completed && taken > 0 {
        let t = taken as f64 * dt;
        if records.last().map(|r| r.t) != Some(t) {
            if let Ok(r) = record(&state, psi, spec.sigma, spec.sobolev_s) {
                records.push(r);
            }
        }
    }
    Ok(Attempt::Done(Trajectory {
        states,
        records,
        termination,
        dt,
        steps: taken,
        restarts,
    }))
}
