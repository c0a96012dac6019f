//! Recursive deep-Koopman identification of a forced pendulum and lifted
//! LQR control.
//!
//! The pipeline is: simulate ([`dynamics`]), build datasets ([`datagen`]),
//! learn observables ([`lifting`], [`training`]) with least-squares Koopman
//! fits ([`edmd`]), then design and simulate a controller ([`control`]).

pub mod config;
pub mod control;
pub mod datagen;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod lifting;
mod matrix_json;
pub mod model_io;
pub mod svg;
pub mod table;
pub mod training;

pub use error::{Error, Result};
