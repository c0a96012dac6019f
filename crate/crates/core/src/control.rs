//! Continuous-time LQR on the lifted model and closed-loop simulation
//! against the true pendulum.
//!
//! The Riccati equation `AᵀP + PA − P B R⁻¹ Bᵀ P + Q = 0` is solved by
//! integrating the Riccati differential equation from `P = 0` to steady
//! state, then polishing with Newton-Kleinman iterations once the iterate's
//! gain is stabilizing. Slow lifted modes can make the integration alone
//! take far more than the step budget to reach full precision.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{pendulum_step, step_count, ControlInput, PendulumParams, State, Trace, DEFAULT_BLOWUP};
use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::lifting::ObservableVector;

/// Actuator bound applied in closed loop unless configured otherwise.
pub const DEFAULT_U_MAX: f64 = 10.0;

const RDE_TOL: f64 = 1e-10;
const RDE_MAX_STEPS: usize = 1_000_000;
/// Relative defect at which the integration hands over to Newton-Kleinman.
const HANDOVER_TOL: f64 = 1e-6;
const NEWTON_MAX_ITERS: usize = 50;
/// Acceptance bound on the final relative CARE residual.
pub const RESIDUAL_TOL: f64 = 1e-7;

/// `A = (K − I)/Δt`, `B_con = B/Δt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel {
    #[serde(with = "crate::matrix_json::row_major")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::matrix_json::row_major")]
    pub b_con: DMatrix<f64>,
    pub dt_source: f64,
}

pub fn to_continuous(model: &KoopmanModel) -> Result<ContinuousModel> {
    let dt = model.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    let d = model.lifted_dim();
    let a = (&model.k - DMatrix::identity(d, d)) / dt;
    let b_con = &model.b / dt;
    Ok(ContinuousModel { a, b_con, dt_source: dt })
}

impl ContinuousModel {
    /// Inverse map, `K = I + A Δt`, `B = B_con Δt`.
    pub fn to_discrete(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.a.nrows();
        (
            DMatrix::identity(d, d) + &self.a * self.dt_source,
            &self.b_con * self.dt_source,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    #[serde(with = "crate::matrix_json::row_major")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::matrix_json::row_major")]
    pub r: DMatrix<f64>,
}

impl LqrWeights {
    /// Identity on the first `n_states` lifted coordinates, zero elsewhere;
    /// `R = I`.
    pub fn state_only(lifted_dim: usize, n_states: usize, n_inputs: usize) -> Self {
        let mut q = DMatrix::zeros(lifted_dim, lifted_dim);
        for i in 0..n_states.min(lifted_dim) {
            q[(i, i)] = 1.0;
        }
        Self {
            q,
            r: DMatrix::identity(n_inputs, n_inputs),
        }
    }

    pub fn for_model(model: &KoopmanModel) -> Self {
        Self::state_only(model.lifted_dim(), model.state_dim(), model.input_dim())
    }

    pub fn scaled(mut self, q_scale: f64, r_scale: f64) -> Self {
        self.q *= q_scale;
        self.r *= r_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sym_tol = |m: &DMatrix<f64>| 1e-12 * (1.0 + m.norm());
        if !self.q.is_square() || (&self.q - self.q.transpose()).norm() > sym_tol(&self.q) {
            return Err(Error::Domain("Q must be square and symmetric".into()));
        }
        let min_eig = self.q.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-12 * (1.0 + self.q.norm()) {
            return Err(Error::Domain(format!("Q is not positive semidefinite (λ_min = {min_eig:e})")));
        }
        if !self.r.is_square() || (&self.r - self.r.transpose()).norm() > sym_tol(&self.r) {
            return Err(Error::Domain("R must be square and symmetric".into()));
        }
        if Cholesky::new(self.r.clone()).is_none() {
            return Err(Error::Domain("R is not positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrGain {
    /// `p × (n + N)`; the control law is `u = −K_lqr Φ`.
    #[serde(with = "crate::matrix_json::row_major")]
    pub k_lqr: DMatrix<f64>,
    #[serde(with = "crate::matrix_json::row_major")]
    pub riccati_solution: DMatrix<f64>,
    /// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_F / (1 + ‖P‖_F)`.
    pub residual: f64,
}

impl LqrGain {
    /// `u = −K_lqr Φ`. Takes a lifted vector, never a raw state.
    pub fn control(&self, phi: &ObservableVector) -> Result<DVector<f64>> {
        if phi.len() != self.k_lqr.ncols() {
            return Err(Error::Shape(format!(
                "gain expects a lifted vector of length {}, got {}",
                self.k_lqr.ncols(),
                phi.len()
            )));
        }
        Ok(-(&self.k_lqr * &phi.0))
    }

    pub fn zeros(n_inputs: usize, lifted_dim: usize) -> Self {
        Self {
            k_lqr: DMatrix::zeros(n_inputs, lifted_dim),
            riccati_solution: DMatrix::zeros(lifted_dim, lifted_dim),
            residual: 0.0,
        }
    }
}

fn care_rhs(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let ap = a.transpose() * p;
    let mut out = &ap + ap.transpose() - p * s * p + q;
    symmetrize(&mut out);
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Relative CARE residual `‖AᵀP + PA − PSP + Q‖_F / (1 + ‖P‖_F)`.
pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &LqrWeights, p: &DMatrix<f64>) -> Result<f64> {
    let s = input_weight(b, &weights.r)?;
    Ok(care_rhs(a, &s, &weights.q, p).norm() / (1.0 + p.norm()))
}

/// `S = B R⁻¹ Bᵀ`.
fn input_weight(b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(r.clone()).ok_or_else(|| Error::Domain("R is not positive definite".into()))?;
    Ok(b * chol.solve(&b.transpose()))
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    max_real_eigenvalue(m) < 0.0
}

pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `Aᵀ X + X A = −C` by vectorisation.
fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(d, d);
    // column-major vec: vec(AᵀX) = (I ⊗ Aᵀ) vec X, vec(XA) = (Aᵀ ⊗ I) vec X
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(d * d, c.iter().map(|v| -v));
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let mut x = DMatrix::from_column_slice(d, d, x.as_slice());
    symmetrize(&mut x);
    Ok(x)
}

fn rde_step(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k1 = care_rhs(a, s, q, p);
    let k2 = care_rhs(a, s, q, &(p + &k1 * (0.5 * h)));
    let k3 = care_rhs(a, s, q, &(p + &k2 * (0.5 * h)));
    let k4 = care_rhs(a, s, q, &(p + &k3 * h));
    let mut next = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    symmetrize(&mut next);
    next
}

fn newton_kleinman(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p0: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = p0;
    for _ in 0..NEWTON_MAX_ITERS {
        let a_cl = a - s * &p;
        if !is_hurwitz(&a_cl) {
            return Err(Error::Riccati {
                residual: care_rhs(a, s, q, &p).norm() / (1.0 + p.norm()),
                reason: "Newton iterate lost closed-loop stability".into(),
            });
        }
        let c = q + &p * s * &p;
        let next = solve_lyapunov(&a_cl, &c)?;
        let step = (&next - &p).norm();
        p = next;
        if step <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
    }
    Ok(p)
}

/// Continuous-time LQR gain for `(A, B_con)` under `weights`.
pub fn lqr_gain(cm: &ContinuousModel, weights: &LqrWeights) -> Result<LqrGain> {
    weights.validate()?;
    let (a, b) = (&cm.a, &cm.b_con);
    let d = a.nrows();
    if a.ncols() != d || b.nrows() != d || weights.q.nrows() != d || weights.r.nrows() != b.ncols() {
        return Err(Error::Shape(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?} are inconsistent",
            a.shape(),
            b.shape(),
            weights.q.shape(),
            weights.r.shape()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite continuous model".into()));
    }
    let q = &weights.q;
    let s = input_weight(b, &weights.r)?;

    let transient = 2.0 * (s.norm() * q.norm()).sqrt();
    let mut p = DMatrix::zeros(d, d);
    let mut converged = false;
    for _ in 0..RDE_MAX_STEPS {
        let f = care_rhs(a, &s, q, &p);
        let f_norm = f.norm();
        if !f_norm.is_finite() {
            return Err(Error::Riccati {
                residual: f64::INFINITY,
                reason: "Riccati integration blew up".into(),
            });
        }
        if f_norm < RDE_TOL {
            converged = true;
            break;
        }
        let a_cl = a - &s * &p;
        if f_norm < HANDOVER_TOL * (1.0 + p.norm()) && is_hurwitz(&a_cl) {
            break;
        }
        // linearised RDE has eigenvalues λᵢ + λⱼ of the closed loop; the
        // second term bounds the quadratic transient out of P = 0
        let h = 1.0 / (2.0 * a_cl.norm() + transient + 1e-3);
        p = rde_step(a, &s, q, &p, h);
    }
    if !converged || !is_hurwitz(&(a - &s * &p)) {
        if !is_hurwitz(&(a - &s * &p)) {
            let residual = care_rhs(a, &s, q, &p).norm() / (1.0 + p.norm());
            return Err(Error::Riccati {
                residual,
                reason: "no stabilizing solution reached; (A, B) may not be stabilizable".into(),
            });
        }
        p = newton_kleinman(a, &s, q, p)?;
    }

    let residual = care_rhs(a, &s, q, &p).norm() / (1.0 + p.norm());
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::Riccati {
            residual,
            reason: "final defect check failed".into(),
        });
    }
    let chol = Cholesky::new(weights.r.clone()).expect("validated above");
    let k_lqr = chol.solve(&(b.transpose() * &p));
    Ok(LqrGain {
        k_lqr,
        riccati_solution: p,
        residual,
    })
}

/// Closed-loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopOptions {
    /// Inputs are clamped to `[−u_max, u_max]`.
    pub u_max: f64,
    /// Lifted operating point subtracted before applying the gain. `None`
    /// uses the lift of the origin, so that `u = 0` at the equilibrium.
    pub setpoint: Option<ObservableVector>,
    pub blowup: f64,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        Self {
            u_max: DEFAULT_U_MAX,
            setpoint: None,
            blowup: DEFAULT_BLOWUP,
        }
    }
}

/// The clamped feedback `−K_lqr (Φ(x) − Φ_ref)` at state `x`.
pub fn feedback_input(model: &KoopmanModel, gain: &LqrGain, x: &State, options: &ClosedLoopOptions) -> Result<f64> {
    let phi = model.lift(x);
    let deviation = match &options.setpoint {
        Some(r) => ObservableVector(&phi.0 - &r.0),
        None => ObservableVector(&phi.0 - &model.lift(&State::default()).0),
    };
    Ok(gain.control(&deviation)?[0].clamp(-options.u_max, options.u_max))
}

/// Regulates the true nonlinear pendulum with `u = −K_lqr (Φ(x) − Φ_ref)`,
/// lifting the measured state with the model's own observables at every
/// step.
pub fn closed_loop_sim(
    model: &KoopmanModel,
    gain: &LqrGain,
    x0: State,
    t_final: f64,
    dt: f64,
    params: &PendulumParams,
    options: &ClosedLoopOptions,
) -> Result<Trace> {
    if gain.k_lqr.shape() != (model.input_dim(), model.lifted_dim()) {
        return Err(Error::Shape(format!(
            "gain is {:?} but the model has {} inputs and lifted dimension {}",
            gain.k_lqr.shape(),
            model.input_dim(),
            model.lifted_dim()
        )));
    }
    if model.input_dim() != 1 {
        return Err(Error::Shape("closed loop supports a scalar input only".into()));
    }
    let steps = step_count(t_final, dt)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut x = x0;
    states.push(x);
    for k in 0..steps {
        let u = feedback_input(model, gain, &x, options)?;
        x = pendulum_step(x, ControlInput(u), dt, params)?;
        let norm = x.norm();
        if norm > options.blowup {
            return Err(Error::Diverged {
                step: k + 1,
                norm,
                bound: options.blowup,
            });
        }
        inputs.push(u);
        states.push(x);
    }
    Ok(Trace { dt, states, inputs })
}
