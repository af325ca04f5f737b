use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noisylab_cli::commands::{self, TheoryQuery};
use noisylab_cli::config::KvConfig;
use noisylab_cli::experiment::{plot_runs, run_experiment, ExperimentConfig, NoiseConfig};
use noisylab_cli::report::Report;
use noisylab_cli::{CliError, Result};
use noisylab_core::noise::BinaryNoiseRates;
use noisylab_core::theory::{Capacity, NoiseKind, TheoryParams};

/// Noisy-label experiments at desk scale.
#[derive(Parser)]
#[command(name = "noisylab", version)]
struct Cli {
    /// Base seed; every command derives its streams from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print a single JSON object instead of key=value lines.
    #[arg(long, global = true)]
    json: bool,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set epochs=20 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<KvConfig> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        kv.apply_overrides(&self.set)?;
        Ok(kv)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian mixture to CSV (keys: n, means, variance, priors).
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file (default: <out>/data.csv).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Add a noisy-label column to a clean dataset CSV.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        /// none, symmetric, asymmetric or binary.
        #[arg(long, default_value = "symmetric")]
        kind: String,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        e_plus: Option<f64>,
        #[arg(long)]
        e_minus: Option<f64>,
        /// Balance the noisy classes by down-sampling.
        #[arg(long)]
        downsample: bool,
        /// Output file (default: <out>/noisy.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one run into <out>/<run_id>/.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Keep the randomly initialized encoder fixed.
        #[arg(long)]
        freeze_encoder: bool,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate a closed-form quantity.
    Theory {
        #[command(subcommand)]
        query: TheoryCmd,
    },
    /// Compare the regularizer optimum on Gaussian features with its closed form.
    SimulateT3 {
        /// Single point instead of the default 3x3 grid (needs --e too).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        e: Option<f64>,
        /// Samples per class.
        #[arg(long, default_value_t = 200_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 4)]
        shards: usize,
        /// Largest accepted absolute difference; exit code 2 beyond it.
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
    },
    /// Sweep binary flip rates and tabulate the down-sampling rates.
    DownsampleStudy {
        /// Grid points per axis.
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
}

#[derive(Subcommand)]
enum TheoryCmd {
    /// Consistency constants of symmetric noise.
    Gamma {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
    },
    /// Estimation-error bound.
    Bound {
        #[arg(long)]
        vc: f64,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "symmetric")]
        kind: NoiseKind,
        #[arg(long, default_value_t = 0.0)]
        bias: f64,
    },
    /// Approximation-error bound.
    Approx {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        nodes: f64,
    },
    /// Crossover threshold between a larger and a smaller class.
    Beta {
        #[arg(long)]
        vc1: f64,
        #[arg(long)]
        m1: f64,
        #[arg(long)]
        vc2: f64,
        #[arg(long)]
        m2: f64,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Crossover threshold between end-to-end training and a fixed encoder.
    BetaPrime {
        #[arg(long)]
        vc_gf: f64,
        #[arg(long)]
        m_gf: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        vc_g: f64,
        #[arg(long)]
        m_g: f64,
        #[arg(long)]
        alpha_prime: f64,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Closed-form mislabeled-group predictions and risk.
    T3 {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        e: f64,
    },
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let out = &cli.out;
    match cli.command {
        Command::GenData { cfg, file } => {
            let path = file.unwrap_or_else(|| out.join("data.csv"));
            let ds = commands::gen_data(cfg.load()?, cli.seed, &path)?;
            let r = Report::new().int("rows", ds.len() as u64).text("path", path.display().to_string());
            print!("{}", r.render(cli.json));
        }
        Command::InjectNoise { input, kind, eps, e_plus, e_minus, downsample, output } => {
            let noise = match kind.as_str() {
                "none" => NoiseConfig::None,
                "symmetric" => NoiseConfig::Symmetric(eps.ok_or_else(|| CliError::usage("--eps is required"))?),
                "asymmetric" => NoiseConfig::Asymmetric(eps.ok_or_else(|| CliError::usage("--eps is required"))?),
                "binary" => {
                    let need = |v: Option<f64>, n: &str| v.ok_or_else(|| CliError::usage(format!("--{n} is required")));
                    NoiseConfig::Binary(BinaryNoiseRates::new(need(e_plus, "e-plus")?, need(e_minus, "e-minus")?)?)
                }
                other => return Err(CliError::usage(format!("unknown noise kind {other:?}"))),
            };
            let path = output.unwrap_or_else(|| out.join("noisy.csv"));
            let inj = commands::inject_noise(&input, &noise, cli.seed, downsample, &path)?;
            if cli.json {
                let rows: Vec<String> = inj
                    .empirical
                    .matrix
                    .entries()
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
                    .collect();
                let r = Report::new()
                    .int("rows", inj.dataset.len() as u64)
                    .num("flip_rate", inj.flip_rate)
                    .text("transition", rows.join(";"))
                    .text("path", path.display().to_string());
                print!("{}", r.render(true));
            } else {
                print!("{}", inj.report());
            }
        }
        Command::Train { cfg, freeze_encoder, lambda } => {
            let mut kv = cfg.load()?;
            if freeze_encoder {
                kv.set("freeze_encoder", true);
            }
            if let Some(l) = lambda {
                kv.set("lambda", l);
            }
            let exp = ExperimentConfig::from_kv(kv, cli.seed)?;
            let outcome = run_experiment(&exp, out)?;
            let last = outcome.trace.last().copied().ok_or_else(|| CliError::usage("no epochs were run"))?;
            let mut r = Report::new()
                .text("run_dir", outcome.dir.display().to_string())
                .int("epochs", last.epoch as u64)
                .num("final_clean_test_acc", last.clean_test_acc)
                .num("peak_clean_test_acc", outcome.trace.peak_test_acc())
                .num("final_noisy_train_acc", last.noisy_train_acc)
                .flag("freeze_encoder", exp.train.freeze_encoder);
            if cli.plot {
                r = r.text("plot", plot_runs(out)?.display().to_string());
            }
            print!("{}", r.render(cli.json));
        }
        Command::Theory { query } => {
            let q = match query {
                TheoryCmd::Gamma { k, eps } => TheoryQuery::Gamma { k, eps },
                TheoryCmd::Bound { vc, n, delta, eps, k, kind, bias } => TheoryQuery::Bound {
                    params: TheoryParams { vc_dim: vc, n_samples: n, delta, epsilon: eps, num_classes: k, ..Default::default() },
                    kind,
                    bias,
                },
                TheoryCmd::Approx { alpha, nodes } => TheoryQuery::Approx { alpha, nodes },
                TheoryCmd::Beta { vc1, m1, vc2, m2, n, alpha, k } => {
                    TheoryQuery::Beta { c1: Capacity::new(vc1, m1), c2: Capacity::new(vc2, m2), n, alpha, k }
                }
                TheoryCmd::BetaPrime { vc_gf, m_gf, alpha, vc_g, m_g, alpha_prime, n, k } => TheoryQuery::BetaPrime {
                    composed: Capacity::new(vc_gf, m_gf),
                    alpha,
                    linear: Capacity::new(vc_g, m_g),
                    alpha_prime,
                    n,
                    k,
                },
                TheoryCmd::T3 { delta, e } => TheoryQuery::T3 { delta, e },
            };
            print!("{}", commands::theory(&q)?.render(cli.json));
        }
        Command::SimulateT3 { delta, e, n_mc, shards, tolerance } => {
            let points = match (delta, e) {
                (Some(d), Some(e)) => vec![(d, e)],
                (None, None) => commands::default_t3_grid(),
                _ => return Err(CliError::usage("--delta and --e go together")),
            };
            let study = commands::simulate_t3(&points, n_mc, shards, cli.seed)?;
            let path = out.join("t3.csv");
            write_file(&path, &study.csv)?;
            let max = study.max_diff();
            if cli.json {
                let vacuous = study.rows.iter().filter(|r| r.mc.is_none()).count();
                let r = Report::new()
                    .int("points", study.rows.len() as u64)
                    .int("vacuous", vacuous as u64)
                    .num("max_diff", max)
                    .num("tolerance", tolerance)
                    .flag("within_tolerance", max <= tolerance)
                    .text("path", path.display().to_string());
                print!("{}", r.render(true));
            } else {
                print!("{}", study.report());
                println!("max_diff={max:.4} tolerance={tolerance}");
            }
            if max > tolerance {
                return Err(CliError::Tolerance(format!("max difference {max:.4} exceeds {tolerance}")));
            }
        }
        Command::DownsampleStudy { steps } => {
            let rows = commands::downsample_grid(steps)?;
            let path = out.join("downsample.csv");
            write_file(&path, &commands::downsample_csv(&rows))?;
            let mut r = Report::new().int("rows", rows.len() as u64).text("path", path.display().to_string());
            if cli.plot {
                let svg = out.join("downsample_gap.svg");
                write_file(&svg, &commands::downsample_svg(&rows))?;
                r = r.text("plot", svg.display().to_string());
            }
            print!("{}", r.render(cli.json));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
