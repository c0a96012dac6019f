//! Training loops.
//!
//! Both trainers share [`run_epochs`]: the same seeded batch schedule, Adam
//! settings and validation-based model selection. They differ only in the
//! [`Objective`] plugged into it:
//!
//! * [`RldkObjective`] lifts with `Φ(x) = [x; φ(x)]`, refits `[K B]` by least
//!   squares inside every batch and backpropagates the lifted prediction
//!   loss into the network with `K`, `B` held fixed.
//! * [`AutoencoderObjective`] lifts with an encoder, recovers states with a
//!   decoder and adds a reconstruction term to the prediction loss.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{snapshot_matrices, Dataset, SnapshotSet, Trajectory};
use crate::dynamics::State;
use crate::edmd::{fit_koopman, predict_batch, rollout, KoopmanModel, DEFAULT_RCOND};
use crate::error::{Error, Result};
use crate::lifting::{
    Activation, AdamConfig, AdamState, ForwardCache, Gradients, Lifting, Mlp, ObservableNet, ObservableVector,
};

const INIT_STREAM: u64 = 1 << 40;
const SHUFFLE_STREAM: u64 = (1 << 40) + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Rldk,
    Autoencoder,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rldk => "rldk",
            Variant::Autoencoder => "autoencoder",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rldk" => Ok(Variant::Rldk),
            "autoencoder" | "ae" => Ok(Variant::Autoencoder),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Trajectories per batch.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Learned observables `N`; the lifted dimension is `n + N`.
    pub n_observables: usize,
    pub activation: Activation,
    pub rcond: f64,
    pub variant: Variant,
    /// Autoencoder loss weights (prediction, reconstruction).
    pub ae_pred_weight: f64,
    pub ae_recon_weight: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            seed: 0,
            hidden: vec![32, 32],
            n_observables: 4,
            activation: Activation::Tanh,
            rcond: DEFAULT_RCOND,
            variant: Variant::Rldk,
            ae_pred_weight: 1.0,
            ae_recon_weight: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.n_observables == 0 {
            return Err(Error::Config("n_observables must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if !(self.rcond >= 0.0) {
            return Err(Error::Config("rcond must be >= 0".into()));
        }
        Ok(())
    }

    fn layer_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(output);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub variant: Variant,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub total_seconds: f64,
}

impl TrainingReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.seconds);
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the `epoch,train_loss,val_loss,seconds` table.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<EpochRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "epoch,train_loss,val_loss,seconds" => {}
            _ => return Err(Error::parse(path, 1, "expected report header")),
        }
        let mut out = Vec::new();
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::parse(path, i + 1, "expected 4 fields"));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad number `{s}`")))
            };
            out.push(EpochRecord {
                epoch: f[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, "bad epoch"))?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                seconds: num(f[3])?,
            });
        }
        Ok(out)
    }
}

/// Mean over columns of the squared Euclidean norm of `phi_hat − phi_true`.
pub fn prediction_loss(phi_hat: &DMatrix<f64>, phi_true: &DMatrix<f64>) -> Result<f64> {
    if phi_hat.shape() != phi_true.shape() {
        return Err(Error::Shape(format!(
            "prediction is {:?}, target is {:?}",
            phi_hat.shape(),
            phi_true.shape()
        )));
    }
    if phi_hat.ncols() == 0 {
        return Ok(0.0);
    }
    Ok((phi_hat - phi_true).norm_squared() / phi_hat.ncols() as f64)
}

/// Snapshot columns of a set of trajectories, gatherable per trajectory.
#[derive(Debug, Clone)]
pub struct BatchSource {
    snapshots: SnapshotSet,
    offsets: Vec<usize>,
}

impl BatchSource {
    pub fn new(trajs: &[Trajectory]) -> Result<Self> {
        let snapshots = snapshot_matrices(trajs)?;
        let mut offsets = Vec::with_capacity(trajs.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for t in trajs {
            acc += t.len();
            offsets.push(acc);
        }
        Ok(Self { snapshots, offsets })
    }

    pub fn n_trajectories(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn all(&self) -> &SnapshotSet {
        &self.snapshots
    }

    /// Pools the columns of the listed trajectories.
    pub fn gather(&self, trajs: &[usize]) -> SnapshotSet {
        let total: usize = trajs.iter().map(|&i| self.offsets[i + 1] - self.offsets[i]).sum();
        let s = &self.snapshots;
        let mut x = DMatrix::zeros(s.x.nrows(), total);
        let mut xp = DMatrix::zeros(s.xp.nrows(), total);
        let mut u = DMatrix::zeros(s.u.nrows(), total);
        let mut col = 0;
        for &i in trajs {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            let w = b - a;
            x.columns_mut(col, w).copy_from(&s.x.columns(a, w));
            xp.columns_mut(col, w).copy_from(&s.xp.columns(a, w));
            u.columns_mut(col, w).copy_from(&s.u.columns(a, w));
            col += w;
        }
        SnapshotSet { x, xp, u }
    }
}

/// Seeded shuffle of trajectory indices, chunked into batches.
pub fn epoch_batches(n_trajectories: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_trajectories).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// The part of training that differs between the two variants.
pub trait Objective {
    /// One optimizer step on a batch; returns the batch loss before the step.
    fn step(&mut self, batch: &SnapshotSet) -> Result<f64>;

    /// Model fitted on the full training set with the current parameters,
    /// and its loss on the validation set.
    fn evaluate(&self, train: &SnapshotSet, validation: &SnapshotSet) -> Result<(KoopmanModel, f64)>;

    fn param_norm(&self) -> f64;
}

/// Shared epoch loop. Returns the model from the epoch with the lowest
/// validation loss.
pub fn run_epochs<O: Objective>(
    objective: &mut O,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<(KoopmanModel, TrainingReport)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Domain("training split is empty".into()));
    }
    let train = BatchSource::new(&dataset.train)?;
    let validation = if dataset.validation.is_empty() {
        train.all().clone()
    } else {
        snapshot_matrices(&dataset.validation)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let start = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, KoopmanModel)> = None;
    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        let batches = epoch_batches(train.n_trajectories(), config.batch_size, &mut rng);
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let batch = train.gather(idx);
            let loss = objective.step(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    param_norm: objective.param_norm(),
                });
            }
            total += loss;
        }
        let (model, val_loss) = objective.evaluate(train.all(), &validation)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batches.len(),
                param_norm: objective.param_norm(),
            });
        }
        records.push(EpochRecord {
            epoch,
            train_loss: total / batches.len() as f64,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if best.as_ref().map_or(true, |(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, model));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok((
        model,
        TrainingReport {
            variant: config.variant,
            epochs: records,
            best_epoch,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

pub struct RldkObjective {
    pub net: ObservableNet,
    adam: AdamState,
    rcond: f64,
    dt: f64,
}

impl RldkObjective {
    pub fn new(config: &TrainingConfig, dt: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let dims = config.layer_dims(State::DIM, config.n_observables);
        let net = ObservableNet::new(&dims, config.activation, &mut rng)?;
        let adam = AdamState::for_net(&net.net, config.adam);
        Ok(Self {
            net,
            adam,
            rcond: config.rcond,
            dt,
        })
    }

    /// Batch loss with `[K B]` refitted on the batch, and the parameter
    /// gradient with `K`, `B` held fixed.
    pub fn loss_and_grad(&self, batch: &SnapshotSet) -> Result<(f64, Gradients)> {
        let (phi_x, cache_x) = self.net.lift_batch_cached(&batch.x)?;
        let (phi_y, cache_y) = self.net.lift_batch_cached(&batch.xp)?;
        let (k, b) = fit_koopman(&phi_x, &phi_y, &batch.u, self.rcond)?;
        rldk_grad_from_lifts(&self.net, batch, (&phi_x, &cache_x), (&phi_y, &cache_y), &k, &b)
    }
}

/// Lifted prediction loss of `net` on `batch` under fixed `K`, `B`.
pub fn rldk_loss(net: &ObservableNet, batch: &SnapshotSet, k: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let phi_x = net.lift_batch(&batch.x)?;
    let phi_y = net.lift_batch(&batch.xp)?;
    prediction_loss(&(k * phi_x + b * &batch.u), &phi_y)
}

/// [`rldk_loss`] and its gradient in the network parameters. Both sides of
/// the transition depend on the network, so both contribute.
pub fn rldk_loss_grad(
    net: &ObservableNet,
    batch: &SnapshotSet,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(f64, Gradients)> {
    let (phi_x, cache_x) = net.lift_batch_cached(&batch.x)?;
    let (phi_y, cache_y) = net.lift_batch_cached(&batch.xp)?;
    rldk_grad_from_lifts(net, batch, (&phi_x, &cache_x), (&phi_y, &cache_y), k, b)
}

fn rldk_grad_from_lifts(
    net: &ObservableNet,
    batch: &SnapshotSet,
    (phi_x, cache_x): (&DMatrix<f64>, &ForwardCache),
    (phi_y, cache_y): (&DMatrix<f64>, &ForwardCache),
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(f64, Gradients)> {
    if k.shape() != (phi_x.nrows(), phi_x.nrows()) || b.shape() != (phi_x.nrows(), batch.u.nrows()) {
        return Err(Error::Shape(format!("K {:?} and B {:?} do not fit the lifting", k.shape(), b.shape())));
    }
    let n = State::DIM;
    let m = batch.ncols() as f64;
    let resid = k * phi_x + b * &batch.u - phi_y;
    let loss = resid.norm_squared() / m;

    let g = resid * (2.0 / m);
    let d_phi_x = k.transpose() * &g;
    let n_obs = net.n_observables();
    let up_x = d_phi_x.rows(n, n_obs).into_owned();
    let up_y = -g.rows(n, n_obs);
    let mut grads = net.net.backward(cache_x, &up_x)?.0;
    grads.add_assign(&net.net.backward(cache_y, &up_y)?.0);
    Ok((loss, grads))
}

impl Objective for RldkObjective {
    fn step(&mut self, batch: &SnapshotSet) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        if loss.is_finite() {
            self.adam.step_net(&mut self.net.net, &grads)?;
        }
        Ok(loss)
    }

    fn evaluate(&self, train: &SnapshotSet, validation: &SnapshotSet) -> Result<(KoopmanModel, f64)> {
        let phi_x = self.net.lift_batch(&train.x)?;
        let phi_y = self.net.lift_batch(&train.xp)?;
        let (k, b) = fit_koopman(&phi_x, &phi_y, &train.u, self.rcond)?;
        let model = KoopmanModel::new(k, b, self.dt, Lifting::Concatenated(self.net.clone()))?;
        let pred = predict_batch(&model, &validation.x, &validation.u)?;
        let target = self.net.lift_batch(&validation.xp)?;
        Ok((model, prediction_loss(&pred, &target)?))
    }

    fn param_norm(&self) -> f64 {
        self.net.net.param_norm()
    }
}

pub struct AutoencoderObjective {
    pub encoder: Mlp,
    pub decoder: Mlp,
    enc_adam: AdamState,
    dec_adam: AdamState,
    rcond: f64,
    dt: f64,
    pred_weight: f64,
    recon_weight: f64,
}

impl AutoencoderObjective {
    /// Encoder `n → hidden → n + N`, decoder mirrored back to `n`. The
    /// latent size matches the lifted dimension of the RLDK model.
    pub fn new(config: &TrainingConfig, dt: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let latent = State::DIM + config.n_observables;
        let encoder = Mlp::new(&config.layer_dims(State::DIM, latent), config.activation, &mut rng)?;
        let mut dec_dims = config.layer_dims(State::DIM, latent);
        dec_dims.reverse();
        let decoder = Mlp::new(&dec_dims, config.activation, &mut rng)?;
        Ok(Self {
            enc_adam: AdamState::for_net(&encoder, config.adam),
            dec_adam: AdamState::for_net(&decoder, config.adam),
            encoder,
            decoder,
            rcond: config.rcond,
            dt,
            pred_weight: config.ae_pred_weight,
            recon_weight: config.ae_recon_weight,
        })
    }

    fn reconstruction(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache, ForwardCache)> {
        let enc = self.encoder.forward_cached(x)?;
        let dec = self.decoder.forward_cached(enc.output())?;
        Ok((dec.output().clone(), enc, dec))
    }

    /// Batch loss with `[K B]` refitted on the batch, and the encoder and
    /// decoder gradients with `K`, `B` held fixed.
    pub fn loss_and_grad(&self, batch: &SnapshotSet) -> Result<(f64, Gradients, Gradients)> {
        let z_x = self.encoder.forward(&batch.x)?;
        let z_y = self.encoder.forward(&batch.xp)?;
        let (k, b) = fit_koopman(&z_x, &z_y, &batch.u, self.rcond)?;
        self.frozen_loss_grad(batch, &k, &b)
    }

    /// Weighted prediction plus reconstruction loss under fixed `K`, `B`.
    pub fn frozen_loss(&self, batch: &SnapshotSet, k: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        let m = batch.ncols() as f64;
        let z_x = self.encoder.forward(&batch.x)?;
        let z_y = self.encoder.forward(&batch.xp)?;
        let x_hat = self.decoder.forward(&z_x)?;
        Ok(self.pred_weight * prediction_loss(&(k * z_x + b * &batch.u), &z_y)?
            + self.recon_weight * (x_hat - &batch.x).norm_squared() / m)
    }

    pub fn frozen_loss_grad(&self, batch: &SnapshotSet, k: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, Gradients, Gradients)> {
        let m = batch.ncols() as f64;
        let (x_hat, enc_x, dec_x) = self.reconstruction(&batch.x)?;
        let enc_y = self.encoder.forward_cached(&batch.xp)?;
        let (z_x, z_y) = (enc_x.output(), enc_y.output());
        let resid = k * z_x + b * &batch.u - z_y;
        let recon = &x_hat - &batch.x;
        let loss = self.pred_weight * resid.norm_squared() / m + self.recon_weight * recon.norm_squared() / m;

        let g_pred = resid * (2.0 * self.pred_weight / m);
        let g_recon = recon * (2.0 * self.recon_weight / m);
        let (dec_grads, d_z_from_dec) = self.decoder.backward(&dec_x, &g_recon)?;
        let d_z_x = k.transpose() * &g_pred + d_z_from_dec;
        let d_z_y = -g_pred;
        let mut enc_grads = self.encoder.backward(&enc_x, &d_z_x)?.0;
        enc_grads.add_assign(&self.encoder.backward(&enc_y, &d_z_y)?.0);
        Ok((loss, enc_grads, dec_grads))
    }
}

impl Objective for AutoencoderObjective {
    fn step(&mut self, batch: &SnapshotSet) -> Result<f64> {
        let (loss, enc_grads, dec_grads) = self.loss_and_grad(batch)?;
        if loss.is_finite() {
            self.enc_adam.step_net(&mut self.encoder, &enc_grads)?;
            self.dec_adam.step_net(&mut self.decoder, &dec_grads)?;
        }
        Ok(loss)
    }

    fn evaluate(&self, train: &SnapshotSet, validation: &SnapshotSet) -> Result<(KoopmanModel, f64)> {
        let z_x = self.encoder.forward(&train.x)?;
        let z_y = self.encoder.forward(&train.xp)?;
        let (k, b) = fit_koopman(&z_x, &z_y, &train.u, self.rcond)?;
        let model = KoopmanModel::new(
            k,
            b,
            self.dt,
            Lifting::Autoencoder {
                encoder: self.encoder.clone(),
                decoder: self.decoder.clone(),
            },
        )?;
        let m = validation.ncols().max(1) as f64;
        let pred = predict_batch(&model, &validation.x, &validation.u)?;
        let target = self.encoder.forward(&validation.xp)?;
        let (x_hat, _, _) = self.reconstruction(&validation.x)?;
        let loss = self.pred_weight * prediction_loss(&pred, &target)?
            + self.recon_weight * (x_hat - &validation.x).norm_squared() / m;
        Ok((model, loss))
    }

    fn param_norm(&self) -> f64 {
        self.encoder.param_norm().hypot(self.decoder.param_norm())
    }
}

pub fn train_rldk(dataset: &Dataset, config: &TrainingConfig) -> Result<(KoopmanModel, TrainingReport)> {
    let config = TrainingConfig {
        variant: Variant::Rldk,
        ..config.clone()
    };
    let mut obj = RldkObjective::new(&config, dataset.dt())?;
    run_epochs(&mut obj, dataset, &config)
}

pub fn train_autoencoder(dataset: &Dataset, config: &TrainingConfig) -> Result<(KoopmanModel, TrainingReport)> {
    let config = TrainingConfig {
        variant: Variant::Autoencoder,
        ..config.clone()
    };
    let mut obj = AutoencoderObjective::new(&config, dataset.dt())?;
    run_epochs(&mut obj, dataset, &config)
}

pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<(KoopmanModel, TrainingReport)> {
    match config.variant {
        Variant::Rldk => train_rldk(dataset, config),
        Variant::Autoencoder => train_autoencoder(dataset, config),
    }
}

/// Prediction-quality metrics of a model on a set of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// One-step lifted prediction loss against `Φ(x⁺)` of the data.
    pub one_step_lifted_mse: f64,
    /// One-step state error, mean over samples of `‖x̂⁺ − x⁺‖²`.
    pub one_step_state_mse: f64,
    pub horizon: usize,
    /// `abs_error[k]` is the mean over trajectories of `|x̂_k − x_k|` per
    /// state component, for `k = 0 … horizon`.
    pub abs_error: Vec<[f64; 2]>,
    /// Mean of `abs_error` over time and trajectories, per component.
    pub mean_abs_error: [f64; 2],
    pub max_abs_error: [f64; 2],
}

/// Teacher-forced one-step errors and corrected multi-step rollout errors
/// under the recorded inputs.
pub fn evaluate(model: &KoopmanModel, trajs: &[Trajectory], horizon: usize) -> Result<Metrics> {
    if trajs.is_empty() {
        return Err(Error::Domain("no trajectories to evaluate".into()));
    }
    if let Some(t) = trajs.iter().find(|t| t.len() < horizon) {
        return Err(Error::Domain(format!(
            "horizon {horizon} exceeds trajectory {} of length {}",
            t.id,
            t.len()
        )));
    }
    let snaps = snapshot_matrices(trajs)?;
    let pred = predict_batch(model, &snaps.x, &snaps.u)?;
    let target = model.lifting.lift_batch(&snaps.xp)?;
    let one_step_lifted_mse = prediction_loss(&pred, &target)?;
    let mut state_se = 0.0;
    for j in 0..pred.ncols() {
        let x_hat = model.extract(&ObservableVector(pred.column(j).into_owned()))?;
        state_se += (x_hat.theta - snaps.xp[(0, j)]).powi(2) + (x_hat.theta_dot - snaps.xp[(1, j)]).powi(2);
    }
    let one_step_state_mse = state_se / pred.ncols() as f64;

    let mut abs_error = vec![[0.0; 2]; horizon + 1];
    let mut max_abs_error = [0.0f64; 2];
    for t in trajs {
        let path = t.path();
        let pred = rollout(model, t.initial_state(), &t.inputs[..horizon], true)?;
        for (k, (p, x)) in pred.iter().zip(&path).enumerate() {
            let e = [(p.theta - x.theta).abs(), (p.theta_dot - x.theta_dot).abs()];
            for c in 0..2 {
                abs_error[k][c] += e[c] / trajs.len() as f64;
                max_abs_error[c] = max_abs_error[c].max(e[c]);
            }
        }
    }
    let mut mean_abs_error = [0.0; 2];
    for e in &abs_error {
        for c in 0..2 {
            mean_abs_error[c] += e[c] / abs_error.len() as f64;
        }
    }
    Ok(Metrics {
        one_step_lifted_mse,
        one_step_state_mse,
        horizon,
        abs_error,
        mean_abs_error,
        max_abs_error,
    })
}
