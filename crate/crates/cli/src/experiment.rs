//! One training run from a flat config: data, noise, optional balancing,
//! training, and the files it leaves behind.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use noisylab_core::data::{generate_gaussian_mixture, load_csv_dataset, split, Dataset, GaussianMixtureSpec};
use noisylab_core::losses::{Distance, Objective, RegularizerConfig, SupervisedLoss};
use noisylab_core::model::{train_with, OptimizerKind, TraceRecord, TrainConfig, TrainTrace};
use noisylab_core::noise::{
    apply_class_noise, apply_instance_noise, asymmetric_transition, downsample_balance, empirical_transition,
    symmetric_transition, BinaryNoiseRates, InstanceNoiseSpec, TransitionMatrix,
};
use noisylab_core::rng::derive_seed;

use crate::config::{parse_matrix, KvConfig};
use crate::error::{CliError, Result};
use crate::svg::{line_chart, Series};

pub const METRICS_HEADER: &str = "epoch,noisy_train_acc,clean_train_acc,clean_test_acc,loss_sl,loss_info,loss_reg";

const STREAM_DOWNSAMPLE: u64 = 11;
const STREAM_SPLIT: u64 = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Gaussian { spec: GaussianMixtureSpec, test_n: usize, train_seed: u64, test_seed: u64 },
    /// A training CSV with either its own test CSV or a held-out fraction.
    Csv { train: PathBuf, test: Option<PathBuf>, test_fraction: f64, noisy_column: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseConfig {
    None,
    Symmetric(f64),
    Asymmetric(f64),
    Binary(BinaryNoiseRates),
    Instance(InstanceNoiseSpec),
}

impl NoiseConfig {
    /// The class-level transition matrix, when the noise has one.
    pub fn transition(&self, k: usize) -> Result<Option<TransitionMatrix>> {
        Ok(match self {
            NoiseConfig::None => Some(TransitionMatrix::identity(k)?),
            NoiseConfig::Symmetric(e) => Some(symmetric_transition(k, *e)?),
            NoiseConfig::Asymmetric(e) => Some(asymmetric_transition(k, *e)?),
            NoiseConfig::Binary(r) if k == 2 => Some(r.transition()?),
            NoiseConfig::Binary(_) => return Err(CliError::usage("binary noise needs exactly 2 classes")),
            NoiseConfig::Instance(_) => None,
        })
    }

    /// Reads `noise`, `eps`, `e_plus`, `e_minus`, `instance_std`,
    /// `instance_max` and `projection_seed`.
    pub fn from_kv(kv: &mut KvConfig, default_kind: &str, seed: u64) -> Result<Self> {
        let kind = kv.take_str("noise").unwrap_or_else(|| default_kind.to_string());
        let eps: Option<f64> = kv.take("eps")?;
        let need_eps = || eps.ok_or_else(|| CliError::usage(format!("noise={kind} needs eps")));
        Ok(match kind.as_str() {
            "none" => NoiseConfig::None,
            "symmetric" => NoiseConfig::Symmetric(need_eps()?),
            "asymmetric" => NoiseConfig::Asymmetric(need_eps()?),
            "binary" => {
                let e_plus = kv.take("e_plus")?.ok_or_else(|| CliError::usage("noise=binary needs e_plus"))?;
                let e_minus = kv.take("e_minus")?.ok_or_else(|| CliError::usage("noise=binary needs e_minus"))?;
                NoiseConfig::Binary(BinaryNoiseRates::new(e_plus, e_minus)?)
            }
            "instance" => {
                let spec = InstanceNoiseSpec {
                    mean_rate: need_eps()?,
                    rate_std: kv.take_or("instance_std", 0.1)?,
                    max_rate: kv.take_or("instance_max", 0.9)?,
                    projection_seed: kv.take_or("projection_seed", seed)?,
                };
                spec.validate()?;
                NoiseConfig::Instance(spec)
            }
            other => {
                return Err(CliError::usage(format!(
                    "unknown noise {other:?} (none, symmetric, asymmetric, binary or instance)"
                )))
            }
        })
    }

    pub fn apply(&self, ds: &Dataset, seed: u64) -> Result<Dataset> {
        Ok(match self {
            NoiseConfig::Instance(spec) => apply_instance_noise(ds, spec, seed)?,
            other => {
                let t = other.transition(ds.num_classes())?.expect("class-level noise");
                apply_class_noise(ds, &t, seed)?
            }
        })
    }

    pub fn describe(&self) -> String {
        match self {
            NoiseConfig::None => "none".into(),
            NoiseConfig::Symmetric(e) => format!("symmetric eps={e}"),
            NoiseConfig::Asymmetric(e) => format!("asymmetric eps={e}"),
            NoiseConfig::Binary(r) => format!("binary e_plus={} e_minus={}", r.e_plus, r.e_minus),
            NoiseConfig::Instance(s) => {
                format!("instance mean={} std={} max={} projection_seed={}", s.mean_rate, s.rate_std, s.max_rate, s.projection_seed)
            }
        }
    }
}

/// Gaussian mixture from `n`, `means` (rows split by `;`), `variance` and
/// `priors` (uniform when absent).
pub fn gaussian_spec_from_kv(kv: &mut KvConfig, default_n: usize) -> Result<GaussianMixtureSpec> {
    let means = match kv.take_str("means") {
        Some(s) => parse_matrix(&s).map_err(|e| CliError::usage(format!("means: {e}")))?,
        None => vec![vec![1.5, 0.0], vec![-1.5, 0.0]],
    };
    let k = means.len();
    let d = means.first().map_or(0, Vec::len);
    if k == 0 || means.iter().any(|r| r.len() != d) {
        return Err(CliError::usage("means rows must all have the same length"));
    }
    let means = Array2::from_shape_vec((k, d), means.into_iter().flatten().collect())
        .map_err(|e| CliError::usage(format!("means: {e}")))?;
    let spec = GaussianMixtureSpec {
        means,
        shared_cov_scale: kv.take_or("variance", 1.0)?,
        class_priors: kv.take_list("priors")?.unwrap_or_else(|| vec![1.0 / k as f64; k]),
        n_samples: kv.take_or("n", default_n)?,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub noise: NoiseConfig,
    pub noise_seed: u64,
    pub downsample: bool,
    pub train: TrainConfig,
    pub run_id: String,
}

impl ExperimentConfig {
    /// Builds a config from flat keys. `seed` supplies the defaults
    /// `train_seed = 1000 + seed`, `test_seed = 2000 + seed`,
    /// `noise_seed = 3000 + seed` and `init_seed = seed`.
    pub fn from_kv(mut kv: KvConfig, seed: u64) -> Result<Self> {
        let data = if let Some(path) = kv.take_str("train_csv") {
            DataSource::Csv {
                train: path.into(),
                test: kv.take_str("test_csv").map(PathBuf::from),
                test_fraction: kv.take_or("test_fraction", 0.5)?,
                noisy_column: kv.take_or("noisy_column", false)?,
            }
        } else {
            let spec = gaussian_spec_from_kv(&mut kv, 2000)?;
            let test_n = kv.take_or("test_n", spec.n_samples)?;
            DataSource::Gaussian {
                spec,
                test_n,
                train_seed: kv.take_or("train_seed", 1000 + seed)?,
                test_seed: kv.take_or("test_seed", 2000 + seed)?,
            }
        };
        let noise_default = match &data {
            DataSource::Csv { noisy_column: true, .. } => "none",
            _ => "symmetric",
        };
        if !kv.contains("eps") && noise_default == "symmetric" && !kv.contains("noise") {
            kv.set("eps", 0.4);
        }
        let noise = NoiseConfig::from_kv(&mut kv, noise_default, seed)?;
        let noise_seed = kv.take_or("noise_seed", 3000 + seed)?;
        let downsample = kv.take_or("downsample", false)?;

        let lambda: f64 = kv.take_or("lambda", 0.0)?;
        let info_weight = kv.take_or("info_weight", if lambda > 0.0 { 1.0 } else { 0.0 })?;
        let regularizer = RegularizerConfig {
            w_sl: kv.take_or("w_sl", 1)?,
            w_ssl: kv.take_or("w_ssl", 2)?,
            distance: kv.take_or("distance", Distance::SmoothL1)?,
            lambda,
            epsilon_floor: kv.take_or("epsilon_floor", 1e-8)?,
            ssl_grad: kv.take_or("ssl_grad", false)?,
            normalizer_grad: kv.take_or("normalizer_grad", false)?,
        };
        let loss_name = kv.take_str("loss").unwrap_or_else(|| "ce".into());
        let supervised = match loss_name.as_str() {
            "ce" => SupervisedLoss::Ce,
            "mae" => SupervisedLoss::Mae,
            "gce" => SupervisedLoss::Gce { q: kv.take_or("gce_q", 0.7)? },
            "peer" => SupervisedLoss::Peer { alpha: kv.take_or("peer_alpha", 0.5)? },
            "fw" => {
                let k = match &data {
                    DataSource::Gaussian { spec, .. } => spec.means.nrows(),
                    DataSource::Csv { .. } => kv
                        .take("num_classes")?
                        .ok_or_else(|| CliError::usage("loss=fw on CSV data needs num_classes"))?,
                };
                let transition = noise
                    .transition(k)?
                    .ok_or_else(|| CliError::usage("loss=fw needs class-level noise to take its transition matrix from"))?;
                SupervisedLoss::Forward { transition }
            }
            other => return Err(CliError::usage(format!("unknown loss {other:?} (ce, mae, gce, fw or peer)"))),
        };
        let train = TrainConfig {
            epochs: kv.take_or("epochs", 200)?,
            batch_size: kv.take_or("batch_size", 128)?,
            learning_rate: kv.take_or("learning_rate", 3e-3)?,
            optimizer: kv.take_or("optimizer", OptimizerKind::Adam)?,
            freeze_encoder: kv.take_or("freeze_encoder", false)?,
            objective: Objective { supervised, info_weight, temperature: kv.take_or("temperature", 0.5)?, regularizer },
            hidden: kv.take_list("hidden")?.unwrap_or_else(|| vec![64, 64, 64]),
            projection_dim: kv.take_or("projection_dim", 16)?,
            jitter_std: kv.take_or("jitter_std", 0.1)?,
            seed: kv.take_or("init_seed", seed)?,
        };
        train.validate()?;
        let run_id = kv.take_str("run_id").unwrap_or_else(|| format!("run-{seed}"));
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == ".." {
            return Err(CliError::usage(format!("run_id {run_id:?} must be a plain directory name")));
        }
        kv.finish()?;
        Ok(Self { data, noise, noise_seed, downsample, train, run_id })
    }

    fn loss_name(&self) -> String {
        match &self.train.objective.supervised {
            SupervisedLoss::Ce => "ce".into(),
            SupervisedLoss::Mae => "mae".into(),
            SupervisedLoss::Gce { q } => format!("gce q={q}"),
            SupervisedLoss::Forward { .. } => "fw".into(),
            SupervisedLoss::Peer { alpha } => format!("peer alpha={alpha}"),
        }
    }

    /// Resolved settings as `key=value` lines.
    pub fn describe(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let r = &t.objective.regularizer;
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("run_id", self.run_id.clone());
        match &self.data {
            DataSource::Gaussian { spec, test_n, train_seed, test_seed } => {
                put("data", "gaussian".into());
                put("n", spec.n_samples.to_string());
                put("test_n", test_n.to_string());
                put("variance", spec.shared_cov_scale.to_string());
                put("train_seed", train_seed.to_string());
                put("test_seed", test_seed.to_string());
            }
            DataSource::Csv { train, test, test_fraction, noisy_column } => {
                put("train_csv", train.display().to_string());
                put("test_csv", test.as_ref().map_or("-".into(), |p| p.display().to_string()));
                put("test_fraction", test_fraction.to_string());
                put("noisy_column", noisy_column.to_string());
            }
        }
        put("noise", self.noise.describe());
        put("noise_seed", self.noise_seed.to_string());
        put("downsample", self.downsample.to_string());
        put("loss", self.loss_name());
        put("lambda", r.lambda.to_string());
        put("info_weight", t.objective.info_weight.to_string());
        put("temperature", t.objective.temperature.to_string());
        put("w_sl", r.w_sl.to_string());
        put("w_ssl", r.w_ssl.to_string());
        put("distance", r.distance.to_string());
        put("ssl_grad", r.ssl_grad.to_string());
        put("normalizer_grad", r.normalizer_grad.to_string());
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("optimizer", t.optimizer.to_string());
        put("hidden", t.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        put("projection_dim", t.projection_dim.to_string());
        put("jitter_std", t.jitter_std.to_string());
        put("init_seed", t.seed.to_string());
        put("freeze_encoder", t.freeze_encoder.to_string());
        out
    }

    /// Train and test sets, with noise and balancing applied to the
    /// training set.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.data {
            DataSource::Gaussian { spec, test_n, train_seed, test_seed } => {
                let train = generate_gaussian_mixture(spec, *train_seed)?;
                let test_spec = GaussianMixtureSpec { n_samples: *test_n, ..spec.clone() };
                (train, generate_gaussian_mixture(&test_spec, *test_seed)?)
            }
            DataSource::Csv { train, test, test_fraction, noisy_column } => {
                let all = load_csv_dataset(train, *noisy_column, None)?;
                match test {
                    Some(p) => {
                        let test = load_csv_dataset(p, false, Some(all.num_classes()))?;
                        (all, test)
                    }
                    None => split(&all, *test_fraction, derive_seed(self.noise_seed, STREAM_SPLIT, 0))?,
                }
            }
        };
        let train = match (&self.noise, train.noisy_labels()) {
            (NoiseConfig::None, Some(_)) => train,
            (NoiseConfig::None, None) => train.with_noisy_labels(train.clean_labels().to_vec())?,
            (noise, _) => noise.apply(&train, self.noise_seed)?,
        };
        let train = if self.downsample {
            downsample_balance(&train, derive_seed(self.noise_seed, STREAM_DOWNSAMPLE, 0))?
        } else {
            train
        };
        Ok((train, test))
    }
}

pub fn metrics_row(r: &TraceRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch, r.noisy_train_acc, r.clean_train_acc, r.clean_test_acc, r.loss_sl, r.loss_info, r.loss_reg
    )
}

pub fn parse_metrics(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(CliError::usage("metrics file has an unexpected header"));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || CliError::usage(format!("metrics line {}: {line:?}", n + 2));
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(TraceRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                noisy_train_acc: num(1)?,
                clean_train_acc: num(2)?,
                clean_test_acc: num(3)?,
                loss_sl: num(4)?,
                loss_info: num(5)?,
                loss_reg: num(6)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub trace: TrainTrace,
    /// Empirical transition of the training labels actually used.
    pub empirical: TransitionMatrix,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Runs one experiment into `out/<run_id>/`: `metrics.csv` (flushed every
/// epoch), `model.bin` and `meta.txt`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let dir = out.join(&cfg.run_id);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let (train, test) = cfg.datasets()?;
    let noisy = train.require_noisy()?;
    let empirical = empirical_transition(train.clean_labels(), noisy, train.num_classes())?.matrix;

    let metrics_path = dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{METRICS_HEADER}").map_err(|e| CliError::io(&metrics_path, e))?;
    let (params, trace) = train_with(&train, &test, &cfg.train, |r| {
        writeln!(w, "{}", metrics_row(r))
            .and_then(|_| w.flush())
            .map_err(|e| noisylab_core::Error::io(&metrics_path, e))
    })?;
    drop(w);

    params.save(dir.join("model.bin"))?;
    let mut meta = String::new();
    for (k, v) in cfg.describe() {
        meta.push_str(&format!("{k}={v}\n"));
    }
    meta.push_str(&format!("train_rows={}\ntest_rows={}\n", train.len(), test.len()));
    meta.push_str(&format!("realized_flip_rate={}\n", flip_rate(&train)));
    if let Some(last) = trace.last() {
        meta.push_str(&format!("final_clean_test_acc={}\npeak_clean_test_acc={}\n", last.clean_test_acc, trace.peak_test_acc()));
    }
    write_file(&dir.join("meta.txt"), meta.as_bytes())?;
    Ok(RunOutcome { dir, trace, empirical })
}

fn flip_rate(ds: &Dataset) -> f64 {
    let noisy = ds.noisy_labels().unwrap_or(ds.clean_labels());
    let flips = ds.clean_labels().iter().zip(noisy).filter(|(a, b)| a != b).count();
    flips as f64 / ds.len() as f64
}

/// Plots clean test accuracy against epoch for every `*/metrics.csv` under
/// `out`, into `out/clean_test_acc.svg`.
pub fn plot_runs(out: &Path) -> Result<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| CliError::io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    dirs.sort();
    let mut series = Vec::new();
    for d in dirs {
        let path = d.join("metrics.csv");
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let records = parse_metrics(&text)?;
        let name = d.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        series.push(Series { name, points: records.iter().map(|r| (r.epoch as f64, r.clean_test_acc)).collect() });
    }
    let path = out.join("clean_test_acc.svg");
    write_file(&path, line_chart("Clean test accuracy", "epoch", "accuracy", &series).as_bytes())?;
    Ok(path)
}
