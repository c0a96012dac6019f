//! Learned observables.
//!
//! [`ObservableNet`] maps a state `x ∈ ℝⁿ` to `Φ(x) = [x; φ₁(x); …; φ_N(x)]`:
//! the raw state is stacked on top of the network outputs, so the state can
//! always be read back from the first `n` entries. The autoencoder baseline
//! uses a plain encoder/decoder pair instead (see [`Lifting`]).

mod adam;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use net::{Activation, ForwardCache, Gradients, Layer, Mlp};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};

/// Lifted vector `Φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableVector(pub DVector<f64>);

impl ObservableVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Feed-forward network defining the observables `φ₁ … φ_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableNet {
    pub net: Mlp,
}

impl ObservableNet {
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(layer_dims, activation, rng)?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Self {
        Self { net }
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Number of learned observables `N`.
    pub fn n_observables(&self) -> usize {
        self.net.output_dim()
    }

    /// Total lifted dimension `n + N`.
    pub fn lifted_dim(&self) -> usize {
        self.state_dim() + self.n_observables()
    }

    pub fn lift(&self, x: &State) -> ObservableVector {
        let xs = DMatrix::from_column_slice(2, 1, &x.as_array());
        let out = self.lift_batch(&xs).expect("state dimension is fixed at 2");
        ObservableVector(out.column(0).into_owned())
    }

    /// Lifts every column of `x` (`n × m`) to an `(n + N) × m` matrix.
    pub fn lift_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let tail = self.net.forward(x)?;
        Ok(stack_rows(x, &tail))
    }

    /// Forward pass that keeps what [`ObservableNet::backprop`] needs.
    pub fn lift_batch_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        let cache = self.net.forward_cached(x)?;
        Ok((stack_rows(x, cache.output()), cache))
    }

    /// Parameter gradients given dL/dΦ restricted to the `N` network rows.
    /// The stacked state rows carry no parameters.
    pub fn backprop(&self, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<Gradients> {
        let cache = self.net.forward_cached(x)?;
        Ok(self.net.backward(&cache, upstream)?.0)
    }
}

/// Vertically stacks `top` over `bottom`.
pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols(), "column counts differ");
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// The map between states and the lifted space used by a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lifting {
    /// `Φ(x) = [x; φ(x)]`, states recovered by projection.
    Concatenated(ObservableNet),
    /// `Φ(x) = encoder(x)`, states recovered by `decoder(Φ)`.
    Autoencoder { encoder: Mlp, decoder: Mlp },
}

impl Lifting {
    pub fn state_dim(&self) -> usize {
        match self {
            Lifting::Concatenated(net) => net.state_dim(),
            Lifting::Autoencoder { encoder, .. } => encoder.input_dim(),
        }
    }

    pub fn lifted_dim(&self) -> usize {
        match self {
            Lifting::Concatenated(net) => net.lifted_dim(),
            Lifting::Autoencoder { encoder, .. } => encoder.output_dim(),
        }
    }

    pub fn lift(&self, x: &State) -> ObservableVector {
        match self {
            Lifting::Concatenated(net) => net.lift(x),
            Lifting::Autoencoder { encoder, .. } => {
                let xs = DMatrix::from_column_slice(2, 1, &x.as_array());
                let z = encoder.forward(&xs).expect("encoder input is the state");
                ObservableVector(z.column(0).into_owned())
            }
        }
    }

    pub fn lift_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Lifting::Concatenated(net) => net.lift_batch(x),
            Lifting::Autoencoder { encoder, .. } => encoder.forward(x),
        }
    }

    /// Recovers the state from a lifted vector.
    pub fn extract(&self, phi: &ObservableVector) -> Result<State> {
        match self {
            Lifting::Concatenated(net) => {
                if phi.len() != net.lifted_dim() {
                    return Err(Error::Shape(format!(
                        "lifted vector has length {}, model expects {}",
                        phi.len(),
                        net.lifted_dim()
                    )));
                }
                extract_state(phi)
            }
            Lifting::Autoencoder { decoder, .. } => {
                let z = DMatrix::from_column_slice(phi.len(), 1, phi.as_slice());
                let x = decoder.forward(&z)?;
                Ok(State::new(x[(0, 0)], x[(1, 0)]))
            }
        }
    }
}

/// Projection `P = [Iₙ 0]`: the first `n` entries of a lifted vector.
pub fn extract_state(phi: &ObservableVector) -> Result<State> {
    if phi.len() < State::DIM {
        return Err(Error::Shape(format!(
            "lifted vector of length {} is shorter than the state",
            phi.len()
        )));
    }
    Ok(State::new(phi.0[0], phi.0[1]))
}
