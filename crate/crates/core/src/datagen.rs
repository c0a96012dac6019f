//! Noisy, randomly excited pendulum trajectories and the snapshot matrices
//! built from them.
//!
//! Every trajectory owns a ChaCha stream derived from the dataset seed and
//! its index, so parallel generation reproduces the serial result exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{pendulum_step, step_count, ControlInput, PendulumParams, State, DEFAULT_BLOWUP};
use crate::error::{Error, Result};

const SHUFFLE_STREAM: u64 = 0;
const CSV_MAGIC: &str = "# rldk-dataset v1";
const CSV_COLUMNS: &str = "traj_id,k,x1,x2,u,y1,y2";

/// How the excitation input is drawn at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Excitation {
    /// `u ~ U(−1, 1)`.
    #[default]
    Uniform,
    /// `u ∈ {−1, +1}` with equal probability.
    BangBang,
    /// `u = 0`; unforced data.
    Zero,
}

impl Excitation {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Excitation::Uniform => rng.gen_range(-1.0..=1.0),
            Excitation::BangBang => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Excitation::Zero => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Excitation::Uniform => "uniform",
            Excitation::BangBang => "bang-bang",
            Excitation::Zero => "zero",
        }
    }
}

impl FromStr for Excitation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Excitation::Uniform),
            "bang-bang" | "bangbang" => Ok(Excitation::BangBang),
            "zero" => Ok(Excitation::Zero),
            other => Err(Error::Config(format!("unknown excitation `{other}`"))),
        }
    }
}

/// One sampled trajectory: `states_y[k]` is the recorded successor of
/// `states_x[k]` under `inputs[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub dt: f64,
    pub states_x: Vec<State>,
    pub states_y: Vec<State>,
    pub inputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn initial_state(&self) -> State {
        self.states_x[0]
    }

    /// The full sampled path `x_0 … x_M`.
    pub fn path(&self) -> Vec<State> {
        let mut p = self.states_x.clone();
        if let Some(last) = self.states_y.last() {
            p.push(*last);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_ic: usize,
    pub t_final: f64,
    pub dt: f64,
    pub noise_std: f64,
    /// Initial conditions are drawn uniformly on `[−ic_range, ic_range]²`.
    pub ic_range: f64,
    pub excitation: Excitation,
    pub params: PendulumParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_ic: 8000,
            t_final: 2.0,
            dt: 0.01,
            noise_std: 0.01,
            ic_range: 2.0,
            excitation: Excitation::Uniform,
            params: PendulumParams::default(),
        }
    }
}

/// Generated trajectories split by trajectory into train/validation/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }
}

/// Sizes of the validation and test splits: `⌊n/10⌋` each, the rest train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 10;
    (n - val - test, val, test)
}

/// Seeded RNG for one trajectory; stream 0 is reserved for the split shuffle.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn random_initial_condition<R: Rng + ?Sized>(rng: &mut R, ic_range: f64, noise_std: f64) -> State {
    let mut draw = || {
        let base: f64 = rng.gen_range(-ic_range..=ic_range);
        let n: f64 = StandardNormal.sample(rng);
        base + noise_std * n
    };
    let theta = draw();
    let theta_dot = draw();
    State::new(theta, theta_dot)
}

/// Simulates one randomly excited trajectory, adding measurement noise to
/// every successor and carrying the noisy state forward.
pub fn generate_trajectory<R: Rng + ?Sized>(
    x0: State,
    t_final: f64,
    dt: f64,
    noise_std: f64,
    excitation: Excitation,
    rng: &mut R,
    params: &PendulumParams,
) -> Result<Trajectory> {
    params.validate()?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Domain(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let m = step_count(t_final, dt)?;
    let mut states_x = Vec::with_capacity(m);
    let mut states_y = Vec::with_capacity(m);
    let mut inputs = Vec::with_capacity(m);
    let mut x = x0;
    for k in 0..m {
        let u = excitation.sample(rng);
        states_x.push(x);
        inputs.push(u);
        let mut next = pendulum_step(x, ControlInput(u), dt, params)?;
        if noise_std > 0.0 {
            let n1: f64 = StandardNormal.sample(rng);
            let n2: f64 = StandardNormal.sample(rng);
            next.theta += noise_std * n1;
            next.theta_dot += noise_std * n2;
        }
        let norm = next.norm();
        if norm > DEFAULT_BLOWUP {
            return Err(Error::Diverged {
                step: k + 1,
                norm,
                bound: DEFAULT_BLOWUP,
            });
        }
        states_y.push(next);
        x = next;
    }
    Ok(Trajectory {
        id: 0,
        dt,
        states_x,
        states_y,
        inputs,
    })
}

pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    if config.n_ic < 10 {
        return Err(Error::Domain(format!("n_ic must be >= 10, got {}", config.n_ic)));
    }
    if !(config.ic_range > 0.0 && config.ic_range.is_finite()) {
        return Err(Error::Domain(format!("ic_range must be > 0, got {}", config.ic_range)));
    }
    let trajs = (0..config.n_ic)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            let x0 = random_initial_condition(&mut rng, config.ic_range, config.noise_std);
            let mut tr = generate_trajectory(
                x0,
                config.t_final,
                config.dt,
                config.noise_std,
                config.excitation,
                &mut rng,
                &config.params,
            )?;
            tr.id = i;
            Ok(tr)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..config.n_ic).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    order.shuffle(&mut rng);

    let (n_train, n_val, _) = split_sizes(config.n_ic);
    let mut slots: Vec<Option<Trajectory>> = trajs.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<Trajectory> {
        ids.iter().map(|&i| slots[i].take().expect("each index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let validation = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(Dataset {
        config: config.clone(),
        seed,
        train,
        validation,
        test,
    })
}

/// Stacked snapshot matrices `X`, `X′` (n × T) and `U` (p × T).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub x: DMatrix<f64>,
    pub xp: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl SnapshotSet {
    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }
}

pub fn snapshot_matrices<'a, I>(trajs: I) -> Result<SnapshotSet>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let trajs: Vec<&Trajectory> = trajs.into_iter().collect();
    let first = trajs
        .first()
        .ok_or_else(|| Error::Domain("no trajectories to stack".into()))?;
    if let Some(bad) = trajs.iter().find(|t| t.dt != first.dt) {
        return Err(Error::Domain(format!(
            "trajectory {} has dt = {} but trajectory {} has dt = {}",
            bad.id, bad.dt, first.id, first.dt
        )));
    }
    let total: usize = trajs.iter().map(|t| t.len()).sum();
    let mut x = DMatrix::zeros(State::DIM, total);
    let mut xp = DMatrix::zeros(State::DIM, total);
    let mut u = DMatrix::zeros(1, total);
    let mut col = 0;
    for t in &trajs {
        for k in 0..t.len() {
            x[(0, col)] = t.states_x[k].theta;
            x[(1, col)] = t.states_x[k].theta_dot;
            xp[(0, col)] = t.states_y[k].theta;
            xp[(1, col)] = t.states_y[k].theta_dot;
            u[(0, col)] = t.inputs[k];
            col += 1;
        }
    }
    Ok(SnapshotSet { x, xp, u })
}

fn join_ids(ts: &[Trajectory]) -> String {
    let mut s = String::new();
    for (i, t) in ts.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{}", t.id);
    }
    s
}

/// Renders the dataset CSV. Floats use Rust's shortest round-trip form, so
/// loading reproduces every value bit-exactly.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let c = &ds.config;
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_MAGIC}");
    let _ = writeln!(
        out,
        "# dt={},t_final={},noise_std={},seed={},ic_range={},excitation={},gravity={},length={}",
        c.dt,
        c.t_final,
        c.noise_std,
        ds.seed,
        c.ic_range,
        c.excitation.as_str(),
        c.params.gravity,
        c.params.length
    );
    let _ = writeln!(out, "# train={}", join_ids(&ds.train));
    let _ = writeln!(out, "# validation={}", join_ids(&ds.validation));
    let _ = writeln!(out, "# test={}", join_ids(&ds.test));
    let _ = writeln!(out, "{CSV_COLUMNS}");
    let mut all: Vec<&Trajectory> = ds.train.iter().chain(&ds.validation).chain(&ds.test).collect();
    all.sort_by_key(|t| t.id);
    for t in all {
        for k in 0..t.len() {
            let (x, y) = (t.states_x[k], t.states_y[k]);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.id, k, x.theta, x.theta_dot, t.inputs[k], y.theta, y.theta_dot
            );
        }
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

fn parse_num<T: FromStr>(s: &str, what: &str, path: &Path, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("cannot parse {what} from `{s}`")))
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, magic) = next_line("header")?;
    if magic.trim() != CSV_MAGIC {
        return Err(Error::parse(path, ln, "missing dataset header"));
    }

    let (ln, meta) = next_line("metadata line")?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(path, ln, "expected `#` metadata line"))?;
    let mut config = DatasetConfig::default();
    let mut seed = None;
    for field in meta.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(path, ln, format!("malformed metadata field `{field}`")))?;
        match key.trim() {
            "dt" => config.dt = parse_num(value, "dt", path, ln)?,
            "t_final" => config.t_final = parse_num(value, "t_final", path, ln)?,
            "noise_std" => config.noise_std = parse_num(value, "noise_std", path, ln)?,
            "seed" => seed = Some(parse_num(value, "seed", path, ln)?),
            "ic_range" => config.ic_range = parse_num(value, "ic_range", path, ln)?,
            "excitation" => {
                config.excitation = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, ln, format!("unknown excitation `{value}`")))?
            }
            "gravity" => config.params.gravity = parse_num(value, "gravity", path, ln)?,
            "length" => config.params.length = parse_num(value, "length", path, ln)?,
            other => return Err(Error::parse(path, ln, format!("unknown metadata key `{other}`"))),
        }
    }
    let seed = seed.ok_or_else(|| Error::parse(path, ln, "metadata lacks seed"))?;
    let expected_len = step_count(config.t_final, config.dt)
        .map_err(|e| Error::parse(path, ln, e.to_string()))?;

    let mut split_ids: Vec<Vec<usize>> = Vec::with_capacity(3);
    for name in ["train", "validation", "test"] {
        let (ln, l) = next_line(name)?;
        let body = l
            .strip_prefix('#')
            .and_then(|r| r.trim().strip_prefix(name))
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| Error::parse(path, ln, format!("expected `# {name}=...`")))?;
        let ids = if body.trim().is_empty() {
            Vec::new()
        } else {
            body.split(',')
                .map(|s| parse_num(s, "trajectory id", path, ln))
                .collect::<Result<Vec<usize>>>()?
        };
        split_ids.push(ids);
    }

    let (ln, cols) = next_line("column header")?;
    if cols.trim() != CSV_COLUMNS {
        return Err(Error::parse(path, ln, format!("expected columns `{CSV_COLUMNS}`")));
    }

    let mut trajs: Vec<Trajectory> = Vec::new();
    for (ln, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 7 {
            return Err(Error::parse(path, ln, format!("expected 7 fields, found {}", f.len())));
        }
        let id: usize = parse_num(f[0], "traj_id", path, ln)?;
        let k: usize = parse_num(f[1], "k", path, ln)?;
        let v: Vec<f64> = f[2..]
            .iter()
            .map(|s| parse_num(s, "value", path, ln))
            .collect::<Result<_>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(path, ln, "non-finite value"));
        }
        let start_new = trajs.last().map_or(true, |t| t.id != id);
        if start_new {
            if let Some(prev) = trajs.last() {
                if prev.len() != expected_len {
                    return Err(Error::parse(
                        path,
                        ln - 1,
                        format!(
                            "trajectory {} has {} rows but header dt/t_final imply {}",
                            prev.id,
                            prev.len(),
                            expected_len
                        ),
                    ));
                }
            }
            if trajs.iter().any(|t| t.id == id) {
                return Err(Error::parse(path, ln, format!("trajectory {id} is not contiguous")));
            }
            trajs.push(Trajectory {
                id,
                dt: config.dt,
                states_x: Vec::new(),
                states_y: Vec::new(),
                inputs: Vec::new(),
            });
        }
        let t = trajs.last_mut().expect("pushed above");
        if k != t.len() {
            return Err(Error::parse(path, ln, format!("expected k = {}, found {k}", t.len())));
        }
        let x = State::new(v[0], v[1]);
        if let Some(prev) = t.states_y.last() {
            if *prev != x {
                return Err(Error::parse(path, ln, "state does not match previous successor"));
            }
        }
        t.states_x.push(x);
        t.inputs.push(v[2]);
        t.states_y.push(State::new(v[3], v[4]));
    }
    match trajs.last() {
        None => return Err(Error::parse(path, 0, "dataset holds no trajectories")),
        Some(t) if t.len() != expected_len => {
            return Err(Error::parse(
                path,
                0,
                format!(
                    "trajectory {} has {} rows but header dt/t_final imply {}",
                    t.id,
                    t.len(),
                    expected_len
                ),
            ))
        }
        _ => {}
    }

    let mut slots: Vec<Option<Trajectory>> = Vec::new();
    for t in trajs {
        let id = t.id;
        if slots.len() <= id {
            slots.resize(id + 1, None);
        }
        slots[id] = Some(t);
    }
    let mut take = |ids: &[usize], name: &str| -> Result<Vec<Trajectory>> {
        ids.iter()
            .map(|&i| {
                slots.get_mut(i).and_then(Option::take).ok_or_else(|| {
                    Error::parse(path, 0, format!("{name} split references missing or repeated trajectory {i}"))
                })
            })
            .collect()
    };
    let train = take(&split_ids[0], "train")?;
    let validation = take(&split_ids[1], "validation")?;
    let test = take(&split_ids[2], "test")?;
    if let Some(t) = slots.iter().flatten().next() {
        return Err(Error::parse(path, 0, format!("trajectory {} is in no split", t.id)));
    }
    config.n_ic = train.len() + validation.len() + test.len();
    Ok(Dataset {
        config,
        seed,
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n_ic: usize) -> DatasetConfig {
        DatasetConfig {
            n_ic,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn ic_without_noise_is_in_box_and_deterministic() {
        let mut rng = trajectory_rng(3, 0);
        for _ in 0..1000 {
            let s = random_initial_condition(&mut rng, 2.0, 0.0);
            assert!((-2.0..=2.0).contains(&s.theta) && (-2.0..=2.0).contains(&s.theta_dot));
        }
        let a = random_initial_condition(&mut trajectory_rng(9, 4), 2.0, 0.01);
        let b = random_initial_condition(&mut trajectory_rng(9, 4), 2.0, 0.01);
        assert_eq!(a, b);
    }

    #[test]
    fn ic_moments_match_uniform() {
        let mut rng = trajectory_rng(11, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| random_initial_condition(&mut rng, 2.0, 0.0).theta)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        // U(−2, 2): mean 0, variance 16/12
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 4.0 / 3.0).abs() / (4.0 / 3.0) < 0.02, "var {var}");
    }

    #[test]
    fn zero_input_equilibrium_trajectory() {
        let mut rng = trajectory_rng(0, 0);
        let t = generate_trajectory(
            State::default(),
            2.0,
            0.01,
            0.0,
            Excitation::Zero,
            &mut rng,
            &PendulumParams::default(),
        )
        .unwrap();
        assert_eq!(t.len(), 200);
        assert!(t.states_y.iter().all(|s| *s == State::default()));
    }

    #[test]
    fn noiseless_successor_is_rk4_step() {
        let p = PendulumParams::default();
        let mut rng = trajectory_rng(5, 2);
        let t = generate_trajectory(State::new(1.0, -0.5), 2.0, 0.01, 0.0, Excitation::Uniform, &mut rng, &p)
            .unwrap();
        for k in 0..t.len() {
            let expect = pendulum_step(t.states_x[k], ControlInput(t.inputs[k]), 0.01, &p).unwrap();
            assert_eq!(t.states_y[k], expect);
            assert!((-1.0..=1.0).contains(&t.inputs[k]));
        }
    }

    #[test]
    fn shift_consistency() {
        let mut rng = trajectory_rng(5, 3);
        let t = generate_trajectory(
            State::new(0.3, 0.1),
            2.0,
            0.01,
            0.01,
            Excitation::Uniform,
            &mut rng,
            &PendulumParams::default(),
        )
        .unwrap();
        for k in 0..t.len() - 1 {
            assert_eq!(t.states_y[k], t.states_x[k + 1]);
        }
    }

    #[test]
    fn bang_bang_inputs_are_unit() {
        let mut rng = trajectory_rng(1, 1);
        let mut pos = 0;
        for _ in 0..1000 {
            let u = Excitation::BangBang.sample(&mut rng);
            assert!(u == 1.0 || u == -1.0);
            pos += (u > 0.0) as usize;
        }
        assert!((400..600).contains(&pos));
    }

    #[test]
    fn split_sizes_round_down() {
        assert_eq!(split_sizes(8000), (6400, 800, 800));
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(100), (80, 10, 10));
        assert_eq!(split_sizes(19), (17, 1, 1));
    }

    #[test]
    fn dataset_is_split_by_trajectory_and_deterministic() {
        let cfg = small_config(30);
        let a = build_dataset(&cfg, 42).unwrap();
        let b = build_dataset(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (24, 3, 3));
        let mut ids: Vec<usize> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.test)
            .map(|t| t.id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..30).collect::<Vec<_>>());
        let c = build_dataset(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_ics_rejected() {
        assert!(build_dataset(&small_config(9), 0).is_err());
    }

    #[test]
    fn snapshot_columns_never_cross_trajectories() {
        let ds = build_dataset(&small_config(10), 1).unwrap();
        let s = snapshot_matrices(&ds.train[..2]).unwrap();
        let m1 = ds.train[0].len();
        assert_eq!(s.ncols(), m1 + ds.train[1].len());
        // the column after the first trajectory starts the second one
        assert_eq!(s.x[(0, m1)], ds.train[1].states_x[0].theta);
        assert_eq!(s.xp[(0, m1 - 1)], ds.train[0].states_y[m1 - 1].theta);
    }

    #[test]
    fn noiseless_snapshot_columns_resimulate() {
        let p = PendulumParams::default();
        let cfg = DatasetConfig {
            n_ic: 10,
            noise_std: 0.0,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&cfg, 8).unwrap();
        let s = snapshot_matrices(&ds.train).unwrap();
        for j in 0..s.ncols() {
            let x = State::new(s.x[(0, j)], s.x[(1, j)]);
            let y = pendulum_step(x, ControlInput(s.u[(0, j)]), 0.01, &p).unwrap();
            assert!((y.theta - s.xp[(0, j)]).abs() <= 1e-15);
            assert!((y.theta_dot - s.xp[(1, j)]).abs() <= 1e-15);
        }
    }

    #[test]
    fn snapshot_rejects_mixed_dt_and_empty() {
        let ds = build_dataset(&small_config(10), 1).unwrap();
        let mut other = ds.train[1].clone();
        other.dt = 0.02;
        assert!(snapshot_matrices([&ds.train[0], &other]).is_err());
        assert!(snapshot_matrices(std::iter::empty::<&Trajectory>()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = build_dataset(&small_config(12), 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.csv");
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn csv_rejects_empty_and_dt_mismatch() {
        let ds = build_dataset(&small_config(10), 2).unwrap();
        let text = dataset_to_csv(&ds);
        let p = Path::new("mem.csv");

        let header_only: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        let err = parse_dataset(&header_only, p).unwrap_err();
        assert!(err.to_string().contains("no trajectories"), "{err}");

        let wrong_dt = text.replacen("dt=0.01", "dt=0.02", 1);
        let err = parse_dataset(&wrong_dt, p).unwrap_err();
        assert!(err.to_string().contains("imply"), "{err}");
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let ds = build_dataset(&small_config(10), 2).unwrap();
        let text = dataset_to_csv(&ds);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[9] = "0,3,abc,0,0,0,0".into();
        let err = parse_dataset(&lines.join("\n"), Path::new("bad.csv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 10),
            other => panic!("unexpected {other}"),
        }
    }
}
