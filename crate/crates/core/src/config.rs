//! Run configuration: a flat `key = value` file with `#` comments.
//!
//! Every key has a default, listed in [`KEYS`]. Files and command-line
//! overrides go through the same [`RunConfig::set`].

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::control::DEFAULT_U_MAX;
use crate::datagen::{DatasetConfig, Excitation};
use crate::dynamics::{PendulumParams, State};
use crate::error::{Error, Result};
use crate::lifting::AdamConfig;
use crate::training::{TrainingConfig, Variant};

/// Key, default, description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for data, initialization and batching"),
    ("out", "out", "output directory"),
    ("n_ic", "8000", "number of random initial conditions"),
    ("t_final", "2", "trajectory length in seconds"),
    ("dt", "0.01", "sample and integration step in seconds"),
    ("noise_std", "0.01", "std of the Gaussian noise added to every state"),
    ("ic_range", "2", "initial conditions drawn from U(-ic_range, ic_range)"),
    ("excitation", "uniform", "training input: uniform | bang-bang | zero"),
    ("gravity", "9.81", "gravitational acceleration"),
    ("length", "1", "pendulum length"),
    ("epochs", "20", "training epochs"),
    ("batch_size", "16", "trajectories per batch"),
    ("lr", "0.003", "Adam learning rate"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("adam_eps", "1e-8", "Adam epsilon"),
    ("hidden", "32,32", "hidden layer widths"),
    ("n_observables", "4", "learned observables N (lifted dimension is 2 + N)"),
    ("activation", "tanh", "hidden activation: tanh | relu | identity"),
    ("rcond", "1e-10", "relative singular value cutoff of the least-squares fit"),
    ("variant", "rldk", "model: rldk | autoencoder"),
    ("ae_pred_weight", "1", "autoencoder prediction loss weight"),
    ("ae_recon_weight", "1", "autoencoder reconstruction loss weight"),
    ("x0", "1,0", "initial state theta,theta_dot for rollout and lqr"),
    ("rollout_t_final", "10", "rollout length in seconds"),
    ("rollout_input", "zero", "rollout input: zero | uniform | bang-bang"),
    ("lqr_t_final", "10", "closed-loop simulation length in seconds"),
    ("q_scale", "1", "multiplier on the state weight Q"),
    ("r_scale", "1", "multiplier on the input weight R"),
    ("u_max", "10", "actuator bound on |u|"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    pub x0: State,
    pub rollout_t_final: f64,
    pub rollout_input: Excitation,
    pub lqr_t_final: f64,
    pub q_scale: f64,
    pub r_scale: f64,
    pub u_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            out: PathBuf::new(),
            dataset: DatasetConfig::default(),
            training: TrainingConfig::default(),
            x0: State::new(1.0, 0.0),
            rollout_t_final: 10.0,
            rollout_input: Excitation::Zero,
            lqr_t_final: 10.0,
            q_scale: 1.0,
            r_scale: 1.0,
            u_max: DEFAULT_U_MAX,
        };
        for (k, v, _) in KEYS {
            cfg.set(k, v).expect("built-in defaults parse");
        }
        cfg
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(key, value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be positive, got {value}")))
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.dataset;
        let t = &mut self.training;
        match key {
            "seed" => {
                self.seed = num(key, v)?;
                t.seed = self.seed;
            }
            "out" => self.out = PathBuf::from(v),
            "n_ic" => d.n_ic = num(key, v)?,
            "t_final" => d.t_final = positive(key, v)?,
            "dt" => d.dt = positive(key, v)?,
            "noise_std" => {
                d.noise_std = num(key, v)?;
                if !(d.noise_std >= 0.0) {
                    return Err(Error::Config("`noise_std` must be >= 0".into()));
                }
            }
            "ic_range" => d.ic_range = positive(key, v)?,
            "excitation" => d.excitation = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "gravity" => d.params.gravity = positive(key, v)?,
            "length" => d.params.length = positive(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lr" => t.adam.lr = positive(key, v)?,
            "beta1" => t.adam.beta1 = num(key, v)?,
            "beta2" => t.adam.beta2 = num(key, v)?,
            "adam_eps" => t.adam.eps = positive(key, v)?,
            "hidden" => t.hidden = list(key, v)?,
            "n_observables" => t.n_observables = num(key, v)?,
            "activation" => t.activation = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "rcond" => t.rcond = num(key, v)?,
            "variant" => t.variant = v.parse::<Variant>()?,
            "ae_pred_weight" => t.ae_pred_weight = num(key, v)?,
            "ae_recon_weight" => t.ae_recon_weight = num(key, v)?,
            "x0" => {
                let xs: Vec<f64> = list(key, v)?;
                if xs.len() != 2 {
                    return Err(Error::Config(format!("`x0` needs two values, got `{v}`")));
                }
                self.x0 = State::new(xs[0], xs[1]);
            }
            "rollout_t_final" => self.rollout_t_final = positive(key, v)?,
            "rollout_input" => {
                self.rollout_input = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "lqr_t_final" => self.lqr_t_final = positive(key, v)?,
            "q_scale" => self.q_scale = positive(key, v)?,
            "r_scale" => self.r_scale = positive(key, v)?,
            "u_max" => self.u_max = positive(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of the current values.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            self.set(k.trim(), v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn params(&self) -> PendulumParams {
        self.dataset.params
    }

    pub fn adam(&self) -> AdamConfig {
        self.training.adam
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.dataset
            .params
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.dataset.n_ic < 10 {
            return Err(Error::Config("n_ic must be >= 10 for an 80/10/10 split".into()));
        }
        if !self.x0.is_finite() {
            return Err(Error::Config("x0 must be finite".into()));
        }
        Ok(())
    }

    /// `key = value` listing of every key at its current value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _, _) in KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        out
    }

    pub fn get(&self, key: &str) -> String {
        let d = &self.dataset;
        let t = &self.training;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        match key {
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "n_ic" => d.n_ic.to_string(),
            "t_final" => d.t_final.to_string(),
            "dt" => d.dt.to_string(),
            "noise_std" => d.noise_std.to_string(),
            "ic_range" => d.ic_range.to_string(),
            "excitation" => d.excitation.as_str().to_string(),
            "gravity" => d.params.gravity.to_string(),
            "length" => d.params.length.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.adam.lr.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "hidden" => join(&t.hidden),
            "n_observables" => t.n_observables.to_string(),
            "activation" => t.activation.as_str().to_string(),
            "rcond" => t.rcond.to_string(),
            "variant" => t.variant.as_str().to_string(),
            "ae_pred_weight" => t.ae_pred_weight.to_string(),
            "ae_recon_weight" => t.ae_recon_weight.to_string(),
            "x0" => format!("{},{}", self.x0.theta, self.x0.theta_dot),
            "rollout_t_final" => self.rollout_t_final.to_string(),
            "rollout_input" => self.rollout_input.as_str().to_string(),
            "lqr_t_final" => self.lqr_t_final.to_string(),
            "q_scale" => self.q_scale.to_string(),
            "r_scale" => self.r_scale.to_string(),
            "u_max" => self.u_max.to_string(),
            _ => String::new(),
        }
    }
}

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (file `key = value`, or --set key=value):\n");
    for (k, d, h) in KEYS {
        out.push_str(&format!("  {k:<width$}  {h} [default: {d}]\n"));
    }
    out
}
