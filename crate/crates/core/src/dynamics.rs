//! Ground-truth pendulum model and a fixed-step RK4 integrator.
//!
//! The pendulum is actuated by an additive angular acceleration:
//! `θ̈ = −(g/l)·sin θ + u`. The input is held constant over each RK4 step.

use nalgebra::{SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on ‖x‖ beyond which a simulation is declared diverged.
pub const DEFAULT_BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub gravity: f64,
    pub length: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            length: 1.0,
        }
    }
}

impl PendulumParams {
    pub fn new(gravity: f64, length: f64) -> Result<Self> {
        let p = Self { gravity, length };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return Err(Error::Domain(format!("gravity must be > 0, got {}", self.gravity)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::Domain(format!("length must be > 0, got {}", self.length)));
        }
        Ok(())
    }

    /// The ratio g/l, the only combination the dynamics depend on.
    pub fn omega_sq(&self) -> f64 {
        self.gravity / self.length
    }
}

/// Pendulum state `(θ, θ̇)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub theta: f64,
    pub theta_dot: f64,
}

impl State {
    pub const DIM: usize = 2;

    pub const fn new(theta: f64, theta_dot: f64) -> Self {
        Self { theta, theta_dot }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.theta, self.theta_dot)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.theta_dot.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.theta.hypot(self.theta_dot)
    }
}

impl From<[f64; 2]> for State {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// Scalar control input (p = 1 for the pendulum).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput(pub f64);

/// Time derivative of a [`State`].
pub type StateDerivative = Vector2<f64>;

/// Right-hand side of the controlled pendulum, `(θ̇, −(g/l)·sin θ + u)`.
pub fn pendulum_deriv(x: State, u: ControlInput, params: &PendulumParams) -> Result<StateDerivative> {
    if !x.is_finite() || !u.0.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite pendulum input: x = ({}, {}), u = {}",
            x.theta, x.theta_dot, u.0
        )));
    }
    Ok(pendulum_rhs(&x.to_vector(), u.0, params.omega_sq()))
}

#[inline]
fn pendulum_rhs(x: &Vector2<f64>, u: f64, omega_sq: f64) -> Vector2<f64> {
    Vector2::new(x[1], -omega_sq * x[0].sin() + u)
}

/// One classical fourth-order Runge-Kutta step with the input held fixed.
pub fn rk4_step<const D: usize, U, F>(
    deriv: F,
    t: f64,
    x: &SVector<f64, D>,
    u: &U,
    dt: f64,
) -> Result<SVector<f64, D>>
where
    U: ?Sized,
    F: Fn(f64, &SVector<f64, D>, &U) -> SVector<f64, D>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    let half = 0.5 * dt;
    let k1 = deriv(t, x, u);
    let k2 = deriv(t + half, &(x + k1 * half), u);
    let k3 = deriv(t + half, &(x + k2 * half), u);
    let k4 = deriv(t + dt, &(x + k3 * dt), u);
    for k in [&k1, &k2, &k3, &k4] {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t });
        }
    }
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration { t: t + dt });
    }
    Ok(next)
}

/// RK4 step of the pendulum.
pub fn pendulum_step(x: State, u: ControlInput, dt: f64, params: &PendulumParams) -> Result<State> {
    let w2 = params.omega_sq();
    let next = rk4_step(
        |_, x: &Vector2<f64>, u: &f64| pendulum_rhs(x, *u, w2),
        0.0,
        &x.to_vector(),
        &u.0,
        dt,
    )?;
    Ok(State::from_vector(&next))
}

/// Number of integration steps covering `[0, t_final]` at spacing `dt`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::Domain(format!("t_final must be > 0, got {t_final}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    // 2.0 / 0.01 evaluates to 199.99999999999997
    Ok((t_final / dt + 1e-9).floor() as usize)
}

/// Source of the input applied at each step of a simulation.
pub trait ControlLaw {
    fn control(&mut self, step: usize, t: f64, x: &State) -> Result<f64>;
}

impl<F> ControlLaw for F
where
    F: FnMut(usize, f64, &State) -> f64,
{
    fn control(&mut self, step: usize, t: f64, x: &State) -> Result<f64> {
        Ok(self(step, t, x))
    }
}

/// Pre-recorded input sequence; zero once exhausted.
#[derive(Debug, Clone)]
pub struct OpenLoop(pub Vec<f64>);

impl ControlLaw for OpenLoop {
    fn control(&mut self, step: usize, _t: f64, _x: &State) -> Result<f64> {
        Ok(self.0.get(step).copied().unwrap_or(0.0))
    }
}

/// Sampled state/input history of a simulation.
///
/// `states` has one more entry than `inputs`: `inputs[k]` drives
/// `states[k]` to `states[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    pub states: Vec<State>,
    pub inputs: Vec<f64>,
}

impl Trace {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn last(&self) -> State {
        *self.states.last().expect("trace always holds the initial state")
    }
}

pub fn simulate<C: ControlLaw>(
    x0: State,
    control: C,
    t_final: f64,
    dt: f64,
    params: &PendulumParams,
) -> Result<Trace> {
    simulate_with_bound(x0, control, t_final, dt, params, DEFAULT_BLOWUP)
}

pub fn simulate_with_bound<C: ControlLaw>(
    x0: State,
    mut control: C,
    t_final: f64,
    dt: f64,
    params: &PendulumParams,
    blowup: f64,
) -> Result<Trace> {
    params.validate()?;
    if !x0.is_finite() {
        return Err(Error::Domain("non-finite initial state".into()));
    }
    let steps = step_count(t_final, dt)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut x = x0;
    states.push(x);
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = control.control(k, t, &x)?;
        x = pendulum_step(x, ControlInput(u), dt, params)?;
        let norm = x.norm();
        if norm > blowup {
            return Err(Error::Diverged {
                step: k + 1,
                norm,
                bound: blowup,
            });
        }
        inputs.push(u);
        states.push(x);
    }
    Ok(Trace { dt, states, inputs })
}

/// Mechanical energy per unit mass·length², `(g/l)(1 − cos θ) + θ̇²/2`.
pub fn pendulum_energy(x: &State, params: &PendulumParams) -> f64 {
    params.omega_sq() * (1.0 - x.theta.cos()) + 0.5 * x.theta_dot * x.theta_dot
}
