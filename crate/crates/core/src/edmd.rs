//! Least-squares fit of the lifted linear model `Φ(x⁺) ≈ K Φ(x) + B u`,
//! one-step prediction and multi-step rollout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{State, DEFAULT_BLOWUP};
use crate::error::{Error, Result};
use crate::lifting::{stack_rows, Lifting, ObservableVector};

/// Default relative singular-value cutoff for [`pinv`].
pub const DEFAULT_RCOND: f64 = 1e-10;

/// SVD-based Moore-Penrose pseudo-inverse. Singular values below
/// `rcond · σ_max` are treated as zero.
pub fn pinv(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("pinv of a non-finite matrix".into()));
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let s_max = svd.singular_values.max();
    let cutoff = rcond * s_max;
    let mut out = DMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_i u_iᵀ / s_i
            out.ger(1.0 / s, &v_t.row(i).transpose(), &u.column(i), 1.0);
        }
    }
    Ok(out)
}

/// Solves `[K B] = V Wᵀ (W Wᵀ)†` with `W = [Φ_x; U]`, `V = Φ_y`.
pub fn fit_koopman(
    phi_x: &DMatrix<f64>,
    phi_y: &DMatrix<f64>,
    u: &DMatrix<f64>,
    rcond: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if phi_x.shape() != phi_y.shape() {
        return Err(Error::Shape(format!(
            "Φ(X) is {:?} but Φ(X′) is {:?}",
            phi_x.shape(),
            phi_y.shape()
        )));
    }
    if u.ncols() != phi_x.ncols() {
        return Err(Error::Shape(format!(
            "U has {} columns, Φ(X) has {}",
            u.ncols(),
            phi_x.ncols()
        )));
    }
    let d = phi_x.nrows();
    let w = stack_rows(phi_x, u);
    let gram = &w * w.transpose();
    let cross = phi_y * w.transpose();
    let kb = cross * pinv(&gram, rcond)?;
    let k = kb.columns(0, d).into_owned();
    let b = kb.columns(d, u.nrows()).into_owned();
    Ok((k, b))
}

/// Frobenius norm of `Φ_y − (K Φ_x + B U)`.
pub fn fit_residual(
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    phi_x: &DMatrix<f64>,
    phi_y: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> f64 {
    (phi_y - (k * phi_x + b * u)).norm()
}

/// A fitted lifted linear model together with the lifting that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    #[serde(with = "crate::matrix_json::row_major")]
    pub k: DMatrix<f64>,
    #[serde(with = "crate::matrix_json::row_major")]
    pub b: DMatrix<f64>,
    pub dt: f64,
    pub lifting: Lifting,
}

impl KoopmanModel {
    pub fn new(k: DMatrix<f64>, b: DMatrix<f64>, dt: f64, lifting: Lifting) -> Result<Self> {
        let d = lifting.lifted_dim();
        if k.shape() != (d, d) {
            return Err(Error::Shape(format!("K is {:?}, lifted dimension is {d}", k.shape())));
        }
        if b.nrows() != d {
            return Err(Error::Shape(format!("B has {} rows, lifted dimension is {d}", b.nrows())));
        }
        if k.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("K or B holds non-finite entries".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self { k, b, dt, lifting })
    }

    pub fn lifted_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.lifting.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn lift(&self, x: &State) -> ObservableVector {
        self.lifting.lift(x)
    }

    pub fn extract(&self, phi: &ObservableVector) -> Result<State> {
        self.lifting.extract(phi)
    }
}

/// `Φ̂ = K Φ + B u`.
pub fn predict_step(model: &KoopmanModel, phi: &ObservableVector, u: &[f64]) -> Result<ObservableVector> {
    if phi.len() != model.lifted_dim() {
        return Err(Error::Shape(format!(
            "lifted vector has length {}, model expects {}",
            phi.len(),
            model.lifted_dim()
        )));
    }
    if u.len() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input has length {}, model expects {}",
            u.len(),
            model.input_dim()
        )));
    }
    let u = DVector::from_column_slice(u);
    Ok(ObservableVector(&model.k * &phi.0 + &model.b * u))
}

/// Column-wise one-step prediction from states `X` (`n × m`) and inputs `U`.
pub fn predict_batch(model: &KoopmanModel, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let phi = model.lifting.lift_batch(x)?;
    Ok(&model.k * phi + &model.b * u)
}

/// Rolls the model forward from `x0` under `inputs`, returning
/// `inputs.len() + 1` states.
///
/// With `correct` set, every step extracts the state and lifts it again
/// before the next prediction; otherwise the lifted vector is propagated
/// linearly and states are only read out.
pub fn rollout(model: &KoopmanModel, x0: State, inputs: &[f64], correct: bool) -> Result<Vec<State>> {
    rollout_with_bound(model, x0, inputs, correct, DEFAULT_BLOWUP)
}

pub fn rollout_with_bound(
    model: &KoopmanModel,
    x0: State,
    inputs: &[f64],
    correct: bool,
    blowup: f64,
) -> Result<Vec<State>> {
    if let Some(u) = inputs.iter().find(|u| !u.is_finite()) {
        return Err(Error::Domain(format!("non-finite input {u} in rollout")));
    }
    if model.input_dim() != 1 {
        return Err(Error::Shape(format!(
            "scalar input sequence given to a model with {} inputs",
            model.input_dim()
        )));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0);
    let mut phi = model.lift(&x0);
    for (k, &u) in inputs.iter().enumerate() {
        let next = predict_step(model, &phi, &[u])?;
        let x = model.extract(&next)?;
        let norm = x.norm();
        if !norm.is_finite() || norm > blowup {
            return Err(Error::Diverged {
                step: k + 1,
                norm,
                bound: blowup,
            });
        }
        phi = if correct { model.lift(&x) } else { next };
        states.push(x);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{Activation, Mlp, ObservableNet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn penrose_ok(a: &DMatrix<f64>, p: &DMatrix<f64>) {
        let scale = 1.0 + a.norm() * p.norm();
        assert!((a * p * a - a).norm() / scale < 1e-8);
        assert!((p * a * p - p).norm() / scale < 1e-8);
        assert!(((a * p).transpose() - a * p).norm() / scale < 1e-8);
        assert!(((p * a).transpose() - p * a).norm() / scale < 1e-8);
    }

    #[test]
    fn pinv_identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(2, 2);
        assert_eq!(pinv(&i, DEFAULT_RCOND).unwrap(), i);
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pinv(&d, DEFAULT_RCOND).unwrap();
        assert!((p - DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn pinv_row_vector() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = pinv(&a, DEFAULT_RCOND).unwrap();
        assert_eq!(p.shape(), (2, 1));
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15 && (p[(1, 0)] - 0.5).abs() < 1e-15);
        penrose_ok(&a, &p);
    }

    #[test]
    fn pinv_rank_deficient_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * &b; // rank 3, 6×5
        penrose_ok(&m, &pinv(&m, DEFAULT_RCOND).unwrap());
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(pinv(&m, DEFAULT_RCOND).is_err());
    }

    #[test]
    fn fit_with_identity_data_returns_targets() {
        let phi_x = DMatrix::<f64>::identity(3, 3);
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 4.0, 4.0, -2.0]);
        let u = DMatrix::zeros(1, 3);
        let (k, b) = fit_koopman(&phi_x, &m, &u, DEFAULT_RCOND).unwrap();
        assert!((k - &m).norm() < 1e-14);
        assert_eq!(b.norm(), 0.0);
    }

    #[test]
    fn fit_recovers_scalar_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 50;
        let x = DMatrix::from_fn(1, m, |_, _| rng.gen_range(-1.0..1.0));
        let u = DMatrix::from_fn(1, m, |_, _| rng.gen_range(-1.0..1.0));
        let y = &x * 0.9 + &u * 0.1;
        let (k, b) = fit_koopman(&x, &y, &u, DEFAULT_RCOND).unwrap();
        assert!((k[(0, 0)] - 0.9).abs() < 1e-10);
        assert!((b[(0, 0)] - 0.1).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_mismatched_shapes() {
        let a = DMatrix::zeros(2, 4);
        assert!(fit_koopman(&a, &DMatrix::zeros(2, 5), &DMatrix::zeros(1, 4), 1e-10).is_err());
        assert!(fit_koopman(&a, &a, &DMatrix::zeros(1, 3), 1e-10).is_err());
    }

    #[test]
    fn fit_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi_x = DMatrix::from_fn(9, 200, |_, _| rng.gen_range(-1.0..1.0));
        let u = DMatrix::from_fn(1, 200, |_, _| rng.gen_range(-1.0..1.0));
        let phi_y = DMatrix::from_fn(9, 200, |_, _| rng.gen_range(-1.0..1.0));
        let (k, b) = fit_koopman(&phi_x, &phi_y, &u, DEFAULT_RCOND).unwrap();
        let best = fit_residual(&k, &b, &phi_x, &phi_y, &u);
        for _ in 0..200 {
            let mut dk: DMatrix<f64> = DMatrix::from_fn(9, 9, |_, _| rng.gen_range(-1.0..1.0));
            let mut db: DMatrix<f64> = DMatrix::from_fn(9, 1, |_, _| rng.gen_range(-1.0..1.0));
            let norm = (dk.norm_squared() + db.norm_squared()).sqrt();
            dk *= 1e-3 / norm;
            db *= 1e-3 / norm;
            assert!(fit_residual(&(&k + dk), &(&b + db), &phi_x, &phi_y, &u) >= best);
        }
    }

    fn identity_lifting() -> Lifting {
        // one-observable net with zero output: Φ(x) = [x; 0]
        Lifting::Concatenated(ObservableNet::from_mlp(Mlp::zeros(&[2, 1], Activation::Identity).unwrap()))
    }

    #[test]
    fn predict_step_examples() {
        let model = KoopmanModel::new(
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 1),
            0.01,
            identity_lifting(),
        )
        .unwrap();
        let phi = ObservableVector(DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(predict_step(&model, &phi, &[5.0]).unwrap(), phi);

        let b = DMatrix::from_column_slice(3, 1, &[0.5, -1.0, 2.0]);
        let model = KoopmanModel::new(DMatrix::zeros(3, 3), b.clone(), 0.01, identity_lifting()).unwrap();
        let out = predict_step(&model, &phi, &[1.0]).unwrap();
        assert_eq!(out.0, b.column(0).into_owned());
        assert!(predict_step(&model, &phi, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rollout_edge_cases() {
        let k = DMatrix::from_row_slice(3, 3, &[0.99, 0.01, 0.0, -0.1, 0.98, 0.0, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.01, 0.0]);
        let model = KoopmanModel::new(k, b, 0.01, identity_lifting()).unwrap();
        let x0 = State::new(0.5, -0.3);
        assert_eq!(rollout(&model, x0, &[], true).unwrap(), vec![x0]);

        let one = rollout(&model, x0, &[0.7], true).unwrap();
        let direct = model
            .extract(&predict_step(&model, &model.lift(&x0), &[0.7]).unwrap())
            .unwrap();
        assert_eq!(one[1], direct);

        assert!(rollout(&model, x0, &[f64::NAN], true).is_err());
    }

    #[test]
    fn rollout_divergence_guard() {
        let k = DMatrix::identity(3, 3) * 2.0;
        let model = KoopmanModel::new(k, DMatrix::zeros(3, 1), 0.01, identity_lifting()).unwrap();
        let err = rollout_with_bound(&model, State::new(1.0, 0.0), &[0.0; 100], true, 1e3).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn model_shape_checks() {
        assert!(KoopmanModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1), 0.01, identity_lifting()).is_err());
        assert!(KoopmanModel::new(DMatrix::zeros(3, 3), DMatrix::zeros(2, 1), 0.01, identity_lifting()).is_err());
        assert!(KoopmanModel::new(DMatrix::zeros(3, 3), DMatrix::zeros(3, 1), 0.0, identity_lifting()).is_err());
    }
}
