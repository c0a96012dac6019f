//! Model files: a JSON document holding the lifted model and, once a
//! controller has been designed for it, the LQR weights and gain.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{LqrGain, LqrWeights};
use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::lifting::Lifting;
use crate::training::TrainingConfig;

pub const MODEL_FORMAT: &str = "rldk-model v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub weights: LqrWeights,
    pub gain: LqrGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub model: KoopmanModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<Controller>,
}

impl ModelFile {
    pub fn new(model: KoopmanModel) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            model,
            training: None,
            controller: None,
        }
    }

    /// Checks what deserialization alone cannot: shapes, finiteness and the
    /// controller's dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Domain(format!(
                "unsupported model format `{}` (expected `{MODEL_FORMAT}`)",
                self.format
            )));
        }
        let m = &self.model;
        KoopmanModel::new(m.k.clone(), m.b.clone(), m.dt, m.lifting.clone())?;
        let finite = match &m.lifting {
            Lifting::Concatenated(net) => net.net.is_finite(),
            Lifting::Autoencoder { encoder, decoder } => encoder.is_finite() && decoder.is_finite(),
        };
        if !finite {
            return Err(Error::Numerical("network parameters are not finite".into()));
        }
        if let Some(c) = &self.controller {
            let d = m.lifted_dim();
            if c.gain.k_lqr.shape() != (m.input_dim(), d) || c.weights.q.shape() != (d, d) {
                return Err(Error::Shape(format!(
                    "controller gain {:?} does not fit a model with lifted dimension {d}",
                    c.gain.k_lqr.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
