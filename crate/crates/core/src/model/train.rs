use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::network::{forward, init_network, predict_logits, ForwardCache, NetworkParams};
use super::optim::{backward_and_step, Optimizer, OptimizerKind};
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::losses::{info_nce, representation_regularizer, total_loss, BatchOutputs, LossReport, Objective, SupervisedLoss};
use crate::rng::{derive_seed, seeded};

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_AUG: u64 = 3;
const STREAM_PEER: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Keep the randomly initialized encoder fixed.
    pub freeze_encoder: bool,
    pub objective: Objective,
    /// Encoder widths after the input layer.
    pub hidden: Vec<usize>,
    pub projection_dim: usize,
    /// Std of the Gaussian jitter producing the augmented view.
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            freeze_encoder: false,
            objective: Objective::default(),
            hidden: vec![64, 64, 64],
            projection_dim: 16,
            jitter_std: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.jitter_std >= 0.0) || !self.jitter_std.is_finite() {
            return Err(Error::invalid(format!("jitter_std must be >= 0, got {}", self.jitter_std)));
        }
        if !(self.objective.temperature > 0.0) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        self.objective.regularizer.validate()
    }
}

/// One row of the training trace. Loss columns are unweighted batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub noisy_train_acc: f64,
    pub clean_train_acc: f64,
    pub clean_test_acc: f64,
    pub loss_sl: f64,
    pub loss_info: f64,
    pub loss_reg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Epoch 0 is the untrained network, then one record per epoch.
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Highest clean-test accuracy over all records.
    pub fn peak_test_acc(&self) -> f64 {
        self.records.iter().map(|r| r.clean_test_acc).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Adds i.i.d. `N(0, jitter_std^2)` noise to every entry.
pub fn augment(x: &Array2<f64>, jitter_std: f64, seed: u64) -> Result<Array2<f64>> {
    if !(jitter_std >= 0.0) || !jitter_std.is_finite() {
        return Err(Error::invalid(format!("jitter_std must be >= 0, got {jitter_std}")));
    }
    if jitter_std == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, jitter_std).expect("std checked above");
    let mut rng = seeded(seed);
    Ok(x.mapv(|v| v + normal.sample(&mut rng)))
}

/// Predicted class per row; ties go to the lowest class id.
pub fn predict(params: &NetworkParams, x: &Array2<f64>) -> Result<Vec<usize>> {
    let logits = predict_logits(params, x)?;
    Ok(logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Fraction of rows whose prediction equals the clean (or noisy) label.
pub fn evaluate(params: &NetworkParams, dataset: &Dataset, use_clean: bool) -> Result<f64> {
    let labels = if use_clean { dataset.clean_labels() } else { dataset.require_noisy()? };
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let pred = predict(params, dataset.features())?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / dataset.len() as f64)
}

struct Step {
    report: LossReport,
    cache: ForwardCache,
    components: [f64; 3],
}

/// Forward pass and loss on one batch. All three components are evaluated
/// for the trace even when their weight is zero.
fn batch_step(
    params: &NetworkParams,
    x: &Array2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
    aug_seed: u64,
    peer_seed: u64,
) -> Result<Step> {
    let xa = augment(x, cfg.jitter_std, aug_seed)?;
    let (outputs, cache) = forward(params, x, Some(&xa), labels)?;
    let perms = peer_permutations(&cfg.objective.supervised, labels.len(), peer_seed);
    let peer = perms.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
    let total = total_loss(&outputs, &cfg.objective, peer)?;
    let info = match total.info {
        Some(v) => v,
        None => info_nce(&outputs, cfg.objective.temperature)?.value,
    };
    let reg = match total.regularizer {
        Some(v) => v,
        None => reg_value(&outputs, cfg)?,
    };
    Ok(Step { report: total.report, cache, components: [total.supervised, info, reg] })
}

fn reg_value(outputs: &BatchOutputs, cfg: &TrainConfig) -> Result<f64> {
    Ok(representation_regularizer(outputs, &cfg.objective.regularizer)?.value)
}

fn peer_permutations(loss: &SupervisedLoss, n: usize, seed: u64) -> Option<(Vec<usize>, Vec<usize>)> {
    if !matches!(loss, SupervisedLoss::Peer { .. }) {
        return None;
    }
    let mut rng = seeded(seed);
    let mut a: Vec<usize> = (0..n).collect();
    let mut b = a.clone();
    a.shuffle(&mut rng);
    b.shuffle(&mut rng);
    Some((a, b))
}

fn gather(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Trains on the noisy labels of `train`, recording accuracies on both label
/// columns of `train` and the clean labels of `test` after every epoch.
pub fn train(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<(NetworkParams, TrainTrace)> {
    train_with(train, test, cfg, |_| Ok(()))
}

/// Like [`train`], calling `on_record` as soon as each trace row exists.
pub fn train_with(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TraceRecord) -> Result<()>,
) -> Result<(NetworkParams, TrainTrace)> {
    cfg.validate()?;
    let noisy = train.require_noisy()?;
    if test.dim() != train.dim() {
        return Err(Error::shape(format!("test dim {} differs from train dim {}", test.dim(), train.dim())));
    }
    if train.len() < 2 {
        return Err(Error::invalid("training set needs at least 2 rows"));
    }
    let batch_size = cfg.batch_size.min(train.len());
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.hidden);
    let mut params = init_network(&dims, train.num_classes(), cfg.projection_dim, derive_seed(cfg.seed, STREAM_INIT, 0))?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let x = train.features();
    let mut trace = TrainTrace::default();

    for epoch in 0..=cfg.epochs {
        let batches = batch_indices(train.len(), batch_size, derive_seed(cfg.seed, STREAM_BATCH, epoch as u64))?;
        let mut sums = [0.0; 3];
        for (i, idx) in batches.iter().enumerate() {
            let tag = ((epoch as u64) << 32) | i as u64;
            let labels: Vec<usize> = idx.iter().map(|&j| noisy[j]).collect();
            let step = batch_step(
                &params,
                &gather(x, idx),
                &labels,
                cfg,
                derive_seed(cfg.seed, STREAM_AUG, tag),
                derive_seed(cfg.seed, STREAM_PEER, tag),
            )?;
            for (s, c) in sums.iter_mut().zip(step.components) {
                *s += c;
            }
            // Epoch 0 only measures the untrained network.
            if epoch > 0 {
                backward_and_step(&mut params, &step.cache, &step.report, &mut optimizer, cfg.freeze_encoder)
                    .map_err(|e| match e {
                        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {i}: {m}")),
                        other => other,
                    })?;
            }
        }
        let nb = batches.len() as f64;
        let record = TraceRecord {
            epoch,
            noisy_train_acc: evaluate(&params, train, false)?,
            clean_train_acc: evaluate(&params, train, true)?,
            clean_test_acc: evaluate(&params, test, true)?,
            loss_sl: sums[0] / nb,
            loss_info: sums[1] / nb,
            loss_reg: sums[2] / nb,
        };
        on_record(&record)?;
        trace.records.push(record);
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian_mixture, GaussianMixtureSpec};
    use crate::losses::RegularizerConfig;
    use ndarray::array;

    fn two_gaussians(n: usize, sep: f64, seed: u64) -> Dataset {
        let spec = GaussianMixtureSpec {
            means: array![[sep, 0.0], [-sep, 0.0]],
            shared_cov_scale: 1.0,
            class_priors: vec![0.5, 0.5],
            n_samples: n,
        };
        let ds = generate_gaussian_mixture(&spec, seed).unwrap();
        let clean = ds.clean_labels().to_vec();
        ds.with_noisy_labels(clean).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 32, hidden: vec![8, 8], projection_dim: 4, ..Default::default() }
    }

    #[test]
    fn augment_contract() {
        let x = Array2::from_shape_fn((200, 500), |(i, j)| (i * j) as f64 * 1e-3);
        assert_eq!(augment(&x, 0.0, 1).unwrap(), x);
        let a = augment(&x, 0.3, 7).unwrap();
        assert_eq!(a, augment(&x, 0.3, 7).unwrap());
        let d = &a - &x;
        let n = d.len() as f64;
        let mean = d.sum() / n;
        let std = (d.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
        assert!((std - 0.3).abs() < 0.05 * 0.3, "std {std}");
        assert!(augment(&x, -1.0, 0).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let mut p = init_network(&[2], 3, 2, 0).unwrap();
        p.classifier.weight.fill(0.0);
        p.classifier.bias = array![1.0, 2.0, 2.0];
        assert_eq!(predict(&p, &array![[0.3, 0.1]]).unwrap(), vec![1]);
    }

    #[test]
    fn accuracy_of_a_fixed_predictor() {
        let mut p = init_network(&[1], 2, 2, 0).unwrap();
        p.classifier.weight = array![[1.0], [-1.0]];
        p.classifier.bias.fill(0.0);
        // class 0 iff x > 0; labels agree on 3 of 4 rows
        let ds = Dataset::new(array![[1.0], [-1.0], [2.0], [-3.0]], vec![0, 1, 0, 0], Some(vec![1, 1, 1, 1]), 2).unwrap();
        let clean = evaluate(&p, &ds, true).unwrap();
        assert_eq!(clean, 0.75);
        assert_eq!(1.0 - clean, 0.25);
        assert_eq!(evaluate(&p, &ds, false).unwrap(), 0.5);
        let no_noisy = Dataset::new(array![[1.0], [2.0]], vec![0, 0], None, 2).unwrap();
        assert!(evaluate(&p, &no_noisy, false).is_err());
    }

    #[test]
    fn random_predictor_near_half() {
        let n = 100_000;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        let mut rng = seeded(3);
        let labels: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..2)).collect();
        let ds = Dataset::new(x, labels, None, 2).unwrap();
        let mut p = init_network(&[1], 2, 2, 0).unwrap();
        p.classifier.weight = array![[1.0], [-1.0]];
        p.classifier.bias.fill(0.0);
        assert!((evaluate(&p, &ds, true).unwrap() - 0.5).abs() < 0.01);
    }

    #[test]
    fn separable_data_is_learned() {
        let tr = two_gaussians(1000, 2.0, 1);
        let te = two_gaussians(1000, 2.0, 2);
        let cfg = TrainConfig {
            epochs: 50,
            hidden: vec![16],
            objective: Objective {
                info_weight: 0.0,
                regularizer: RegularizerConfig { lambda: 0.0, ..Default::default() },
                ..Default::default()
            },
            ..small_config()
        };
        let (_, trace) = train(&tr, &te, &cfg).unwrap();
        assert!(trace.last().unwrap().clean_test_acc > 0.95, "{:?}", trace.last());
    }

    #[test]
    fn epoch_zero_independent_of_lambda() {
        let tr = two_gaussians(200, 1.0, 3);
        let te = two_gaussians(100, 1.0, 4);
        let mut cfg = small_config();
        cfg.objective.regularizer.lambda = 0.0;
        let (_, a) = train(&tr, &te, &cfg).unwrap();
        cfg.objective.regularizer.lambda = 1.0;
        let (_, b) = train(&tr, &te, &cfg).unwrap();
        assert_eq!(a.records[0], b.records[0]);
        assert_ne!(a.records[3], b.records[3]);
        assert_eq!(a.records.len(), 4);
    }

    #[test]
    fn deterministic_and_freezable() {
        let tr = two_gaussians(200, 1.0, 5);
        let te = two_gaussians(100, 1.0, 6);
        let cfg = small_config();
        let (p1, t1) = train(&tr, &te, &cfg).unwrap();
        let (p2, t2) = train(&tr, &te, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);

        let frozen = TrainConfig { freeze_encoder: true, ..cfg.clone() };
        let (pf, tf) = train(&tr, &te, &frozen).unwrap();
        let init = init_network(&[2, 8, 8], 2, 4, derive_seed(cfg.seed, STREAM_INIT, 0)).unwrap();
        assert_eq!(pf.encoder, init.encoder);
        assert_ne!(pf.classifier, init.classifier);
        assert_eq!(tf.records.len(), t1.records.len());
        assert!(tf.records.iter().all(|r| (0.0..=1.0).contains(&r.clean_test_acc)));
    }

    #[test]
    fn requires_noisy_labels() {
        let spec = GaussianMixtureSpec {
            means: array![[1.0, 0.0], [-1.0, 0.0]],
            shared_cov_scale: 1.0,
            class_priors: vec![0.5, 0.5],
            n_samples: 20,
        };
        let ds = generate_gaussian_mixture(&spec, 0).unwrap();
        assert!(train(&ds, &ds, &small_config()).is_err());
    }
}
