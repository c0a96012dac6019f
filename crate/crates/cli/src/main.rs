use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rldk::config::{keys_help, RunConfig};
use rldk::control::{closed_loop_sim, feedback_input, lqr_gain, max_real_eigenvalue, to_continuous, ClosedLoopOptions, LqrWeights};
use rldk::datagen::{build_dataset, load_dataset, save_dataset, split_sizes, Excitation};
use rldk::dynamics::{simulate, step_count, OpenLoop};
use rldk::edmd::rollout;
use rldk::model_io::{Controller, ModelFile};
use rldk::svg::{line_plot, Series};
use rldk::table::Table;
use rldk::training::{evaluate, train, Metrics, Variant};
use rldk::Error;

/// Rollout inputs other than zero come from this stream of the run seed.
const ROLLOUT_INPUT_STREAM: u64 = 1 << 41;

#[derive(Parser)]
#[command(name = "rldk", version, about = "Deep-Koopman identification and LQR control of a pendulum")]
#[command(after_help = keys_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the `seed` key)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the `out` key)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set epochs=5`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write SVG line plots next to the CSV outputs
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy forced trajectories and write a split dataset
    Datagen {
        #[arg(long)]
        n_ic: Option<usize>,
        /// Use ±1 inputs instead of U(−1, 1)
        #[arg(long)]
        bang_bang: bool,
    },
    /// Train a lifted model on a dataset
    Train {
        /// Dataset CSV [default: <out>/dataset.csv]
        #[arg(long)]
        data: Option<PathBuf>,
        /// rldk | autoencoder
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Model JSON [default: <out>/model_<variant>.json]
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Roll a model forward from one initial state and compare with the truth
    Rollout {
        /// Model JSON [default: <out>/model_rldk.json]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Initial state `theta,theta_dot`
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// Horizon in steps (overrides `rollout_t_final`)
        #[arg(long)]
        steps: Option<usize>,
        /// zero | uniform | bang-bang
        #[arg(long)]
        input: Option<String>,
    },
    /// Design an LQR gain on the lifted model and regulate the true pendulum
    Lqr {
        /// Model JSON [default: <out>/model_rldk.json]; the gain is written back into it
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        q_scale: Option<f64>,
        #[arg(long)]
        r_scale: Option<f64>,
    },
    /// Compare two models on the test trajectories of a dataset
    Compare {
        /// [default: <out>/model_rldk.json]
        #[arg(long)]
        rldk: Option<PathBuf>,
        /// [default: <out>/model_autoencoder.json]
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        /// Dataset CSV [default: <out>/dataset.csv]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Horizon in steps [default: full test trajectories]
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Io { .. }) {
        4
    } else {
        2
    }
}

fn run(cli: Cli) -> rldk::Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.global.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.global.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &cli.global.out {
        cfg.out = o.clone();
    }
    let svg = cli.global.svg;
    match cli.command {
        Command::Datagen { n_ic, bang_bang } => {
            if let Some(n) = n_ic {
                cfg.dataset.n_ic = n;
            }
            if bang_bang {
                cfg.dataset.excitation = Excitation::BangBang;
            }
            cmd_datagen(&cfg)
        }
        Command::Train {
            data,
            variant,
            epochs,
            model,
        } => {
            if let Some(v) = variant {
                cfg.set("variant", &v)?;
            }
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let data = data.unwrap_or_else(|| cfg.out.join("dataset.csv"));
            let model = model.unwrap_or_else(|| default_model(&cfg, cfg.training.variant));
            cmd_train(&cfg, &data, &model, svg)
        }
        Command::Rollout {
            model,
            x0,
            steps,
            input,
        } => {
            if let Some(x) = x0 {
                cfg.set("x0", &x)?;
            }
            if let Some(i) = input {
                cfg.set("rollout_input", &i)?;
            }
            let model = model.unwrap_or_else(|| default_model(&cfg, Variant::Rldk));
            cmd_rollout(&cfg, &model, steps, svg)
        }
        Command::Lqr {
            model,
            x0,
            t_final,
            q_scale,
            r_scale,
        } => {
            if let Some(x) = x0 {
                cfg.set("x0", &x)?;
            }
            for (key, v) in [("lqr_t_final", t_final), ("q_scale", q_scale), ("r_scale", r_scale)] {
                if let Some(v) = v {
                    cfg.set(key, &v.to_string())?;
                }
            }
            let model = model.unwrap_or_else(|| default_model(&cfg, Variant::Rldk));
            cmd_lqr(&cfg, &model, svg)
        }
        Command::Compare {
            rldk,
            autoencoder,
            data,
            steps,
        } => {
            let rldk = rldk.unwrap_or_else(|| default_model(&cfg, Variant::Rldk));
            let ae = autoencoder.unwrap_or_else(|| default_model(&cfg, Variant::Autoencoder));
            let data = data.unwrap_or_else(|| cfg.out.join("dataset.csv"));
            cmd_compare(&cfg, &rldk, &ae, &data, steps, svg)
        }
    }
}

fn default_model(cfg: &RunConfig, variant: Variant) -> PathBuf {
    cfg.out.join(format!("model_{}.json", variant.as_str()))
}

fn ensure_out(cfg: &RunConfig) -> rldk::Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn write(path: &Path, text: &str) -> rldk::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_datagen(cfg: &RunConfig) -> rldk::Result<()> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let ds = build_dataset(&cfg.dataset, cfg.seed)?;
    let path = cfg.out.join("dataset.csv");
    save_dataset(&ds, &path)?;
    let (tr, va, te) = split_sizes(ds.len());
    println!(
        "wrote {}: {} trajectories x {} samples (train {tr}, validation {va}, test {te}), noise std {}, excitation {}",
        path.display(),
        ds.len(),
        ds.train.first().map_or(0, |t| t.len() + 1),
        cfg.dataset.noise_std,
        cfg.dataset.excitation.as_str()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &Path, model_path: &Path, svg: bool) -> rldk::Result<()> {
    cfg.training.validate()?;
    ensure_out(cfg)?;
    let ds = load_dataset(data)?;
    let start = Instant::now();
    let (model, report) = train(&ds, &cfg.training)?;
    let secs = start.elapsed().as_secs_f64();
    let mut file = ModelFile::new(model);
    file.training = Some(cfg.training.clone());
    file.save(model_path)?;
    let variant = cfg.training.variant.as_str();
    let report_path = cfg.out.join(format!("report_{variant}.csv"));
    report.save_csv(&report_path)?;
    if svg {
        let pts = |f: fn(&rldk::training::EpochRecord) -> f64| {
            report.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect::<Vec<_>>()
        };
        let plot = line_plot(
            &format!("{variant} loss"),
            "epoch",
            &[
                Series { label: "train", points: pts(|e| e.train_loss) },
                Series { label: "validation", points: pts(|e| e.val_loss) },
            ],
        );
        write(&cfg.out.join(format!("report_{variant}.svg")), &plot)?;
    }
    let last = report.epochs.last().expect("epochs >= 1");
    println!(
        "trained {variant} in {secs:.2} s: {} epochs, final train loss {:.4e}, val loss {:.4e}, best epoch {}",
        report.epochs.len(),
        last.train_loss,
        last.val_loss,
        report.best_epoch
    );
    println!("wrote {} and {}", model_path.display(), report_path.display());
    Ok(())
}

fn rollout_inputs(cfg: &RunConfig, steps: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(ROLLOUT_INPUT_STREAM);
    (0..steps).map(|_| cfg.rollout_input.sample(&mut rng)).collect()
}

fn cmd_rollout(cfg: &RunConfig, model_path: &Path, steps: Option<usize>, svg: bool) -> rldk::Result<()> {
    let file = ModelFile::load(model_path)?;
    let model = &file.model;
    ensure_out(cfg)?;
    let steps = match steps {
        Some(s) => s,
        None => step_count(cfg.rollout_t_final, model.dt)?,
    };
    let inputs = rollout_inputs(cfg, steps);
    let truth = simulate(cfg.x0, OpenLoop(inputs.clone()), steps as f64 * model.dt, model.dt, &cfg.params())?;
    let pred = rollout(model, cfg.x0, &inputs, true)?;
    let mut table = Table::new(&["t", "theta_true", "thetadot_true", "theta_pred", "thetadot_pred", "abs_err_1", "abs_err_2"]);
    let mut max_err = [0.0f64; 2];
    for (k, (x, p)) in truth.states.iter().zip(&pred).enumerate() {
        let e = [(p.theta - x.theta).abs(), (p.theta_dot - x.theta_dot).abs()];
        max_err = [max_err[0].max(e[0]), max_err[1].max(e[1])];
        table.push(vec![k as f64 * model.dt, x.theta, x.theta_dot, p.theta, p.theta_dot, e[0], e[1]]);
    }
    let path = cfg.out.join("rollout.csv");
    table.save(&path)?;
    if svg {
        let t = |k: usize| k as f64 * model.dt;
        let series = [
            Series { label: "theta true", points: truth.states.iter().enumerate().map(|(k, s)| (t(k), s.theta)).collect() },
            Series { label: "theta pred", points: pred.iter().enumerate().map(|(k, s)| (t(k), s.theta)).collect() },
            Series { label: "thetadot true", points: truth.states.iter().enumerate().map(|(k, s)| (t(k), s.theta_dot)).collect() },
            Series { label: "thetadot pred", points: pred.iter().enumerate().map(|(k, s)| (t(k), s.theta_dot)).collect() },
        ];
        write(&cfg.out.join("rollout.svg"), &line_plot("rollout", "t [s]", &series))?;
    }
    println!(
        "wrote {} ({} steps): max |err| theta {:.4}, theta_dot {:.4}",
        path.display(),
        steps,
        max_err[0],
        max_err[1]
    );
    Ok(())
}

fn cmd_lqr(cfg: &RunConfig, model_path: &Path, svg: bool) -> rldk::Result<()> {
    let mut file = ModelFile::load(model_path)?;
    ensure_out(cfg)?;
    let model = file.model.clone();
    let cm = to_continuous(&model)?;
    let weights = LqrWeights::for_model(&model).scaled(cfg.q_scale, cfg.r_scale);
    let gain = lqr_gain(&cm, &weights)?;
    let closed = &cm.a - &cm.b_con * &gain.k_lqr;
    let options = ClosedLoopOptions {
        u_max: cfg.u_max,
        ..ClosedLoopOptions::default()
    };
    let trace = closed_loop_sim(&model, &gain, cfg.x0, cfg.lqr_t_final, model.dt, &cfg.params(), &options)?;
    // the final row carries the input the law would apply next
    let last_u = feedback_input(&model, &gain, &trace.last(), &options)?;
    let mut table = Table::new(&["t", "theta", "theta_dot", "u"]);
    for (k, x) in trace.states.iter().enumerate() {
        let u = trace.inputs.get(k).copied().unwrap_or(last_u);
        table.push(vec![k as f64 * trace.dt, x.theta, x.theta_dot, u]);
    }
    let path = cfg.out.join("lqr.csv");
    table.save(&path)?;
    if svg {
        let t = |k: usize| k as f64 * trace.dt;
        let series = [
            Series { label: "theta", points: trace.states.iter().enumerate().map(|(k, s)| (t(k), s.theta)).collect() },
            Series { label: "theta_dot", points: trace.states.iter().enumerate().map(|(k, s)| (t(k), s.theta_dot)).collect() },
            Series { label: "u", points: trace.inputs.iter().enumerate().map(|(k, u)| (t(k), *u)).collect() },
        ];
        write(&cfg.out.join("lqr.svg"), &line_plot("closed loop", "t [s]", &series))?;
    }
    let last = trace.last();
    println!(
        "LQR gain residual {:.2e}, closed-loop max Re(λ) {:.4e}; final theta {:.4}, theta_dot {:.4}",
        gain.residual,
        max_real_eigenvalue(&closed),
        last.theta,
        last.theta_dot
    );
    file.controller = Some(Controller { weights, gain });
    file.save(model_path)?;
    println!("wrote {} and stored the gain in {}", path.display(), model_path.display());
    Ok(())
}

fn cmd_compare(
    cfg: &RunConfig,
    rldk_path: &Path,
    ae_path: &Path,
    data: &Path,
    steps: Option<usize>,
    svg: bool,
) -> rldk::Result<()> {
    let a = ModelFile::load(rldk_path)?.model;
    let b = ModelFile::load(ae_path)?.model;
    let ds = load_dataset(data)?;
    for m in [&a, &b] {
        if (m.dt - ds.dt()).abs() > 1e-12 * ds.dt() {
            return Err(Error::Shape(format!("model dt {} differs from dataset dt {}", m.dt, ds.dt())));
        }
    }
    if ds.test.is_empty() {
        return Err(Error::Domain("dataset has no test trajectories".into()));
    }
    ensure_out(cfg)?;
    let horizon = steps.unwrap_or_else(|| ds.test.iter().map(|t| t.len()).min().unwrap_or(0));
    let ma = evaluate(&a, &ds.test, horizon)?;
    let mb = evaluate(&b, &ds.test, horizon)?;

    let mut table = Table::new(&["t", "rldk_abs_err_1", "rldk_abs_err_2", "autoencoder_abs_err_1", "autoencoder_abs_err_2"]);
    for (k, (ea, eb)) in ma.abs_error.iter().zip(&mb.abs_error).enumerate() {
        table.push(vec![k as f64 * ds.dt(), ea[0], ea[1], eb[0], eb[1]]);
    }
    let path = cfg.out.join("compare.csv");
    table.save(&path)?;

    let mut summary = Table::new(&[
        "state",
        "rldk_mean_abs_err",
        "rldk_max_abs_err",
        "autoencoder_mean_abs_err",
        "autoencoder_max_abs_err",
    ]);
    for c in 0..2 {
        summary.push(vec![(c + 1) as f64, ma.mean_abs_error[c], ma.max_abs_error[c], mb.mean_abs_error[c], mb.max_abs_error[c]]);
    }
    let summary_path = cfg.out.join("compare_summary.csv");
    summary.save(&summary_path)?;
    if svg {
        let t = |k: usize| k as f64 * ds.dt();
        let col = |m: &Metrics, c: usize| m.abs_error.iter().enumerate().map(|(k, e)| (t(k), e[c])).collect();
        let series = [
            Series { label: "rldk theta", points: col(&ma, 0) },
            Series { label: "ae theta", points: col(&mb, 0) },
            Series { label: "rldk thetadot", points: col(&ma, 1) },
            Series { label: "ae thetadot", points: col(&mb, 1) },
        ];
        write(&cfg.out.join("compare.svg"), &line_plot("mean absolute rollout error", "t [s]", &series))?;
    }
    println!("{:<12} {:<10} {:>14} {:>14} {:>16}", "model", "state", "mean |err|", "max |err|", "one-step mse");
    for (name, m) in [("rldk", &ma), ("autoencoder", &mb)] {
        for (c, state) in ["theta", "theta_dot"].iter().enumerate() {
            println!(
                "{name:<12} {state:<10} {:>14.6e} {:>14.6e} {:>16.6e}",
                m.mean_abs_error[c], m.max_abs_error[c], m.one_step_state_mse
            );
        }
    }
    println!("wrote {} and {}", path.display(), summary_path.display());
    Ok(())
}
