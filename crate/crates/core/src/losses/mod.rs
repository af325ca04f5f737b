//! Loss terms of the training objective and their gradients with respect to
//! the network outputs (logits and projection-head embeddings).
//!
//! - supervised: [`cross_entropy`], [`mae_loss`], [`gce_loss`],
//!   [`forward_corrected_ce`], [`peer_loss`]
//! - self-supervised: [`info_nce`]
//! - [`representation_regularizer`], which matches normalized pairwise
//!   distances of classifier outputs to those of the SSL embeddings
//! - [`total_loss`], the weighted sum used for training

mod contrastive;
mod regularizer;
mod supervised;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::noise::TransitionMatrix;

pub use contrastive::info_nce;
pub use regularizer::{
    batch_normalizers, pairwise_normalizer, representation_regularizer, representation_regularizer_frozen, Distance,
    Normalizer, RegularizerConfig,
};
pub use supervised::{cross_entropy, forward_corrected_ce, gce_loss, mae_loss, peer_loss};

/// Outputs of the network on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    pub logits: Array2<f64>,
    pub ssl_embeddings: Option<Array2<f64>>,
    pub ssl_embeddings_aug: Option<Array2<f64>>,
    pub noisy_labels: Vec<usize>,
}

impl BatchOutputs {
    pub fn new(logits: Array2<f64>, noisy_labels: Vec<usize>) -> Result<Self> {
        let out = Self { logits, ssl_embeddings: None, ssl_embeddings_aug: None, noisy_labels };
        out.validate()?;
        Ok(out)
    }

    pub fn with_ssl(mut self, embeddings: Array2<f64>) -> Result<Self> {
        self.ssl_embeddings = Some(embeddings);
        self.validate()?;
        Ok(self)
    }

    pub fn with_ssl_aug(mut self, embeddings: Array2<f64>) -> Result<Self> {
        self.ssl_embeddings_aug = Some(embeddings);
        self.validate()?;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.logits.nrows();
        if b < 2 {
            return Err(Error::invalid(format!("batch needs at least 2 rows, got {b}")));
        }
        if self.noisy_labels.len() != b {
            return Err(Error::shape(format!("{} labels for {b} logit rows", self.noisy_labels.len())));
        }
        let k = self.logits.ncols();
        if let Some(&bad) = self.noisy_labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        if let Some(t) = &self.ssl_embeddings {
            if t.nrows() != b {
                return Err(Error::shape(format!("{} SSL rows for batch of {b}", t.nrows())));
            }
        }
        if let Some(t) = &self.ssl_embeddings_aug {
            if t.nrows() != b {
                return Err(Error::shape(format!("{} augmented SSL rows for batch of {b}", t.nrows())));
            }
            if let Some(s) = &self.ssl_embeddings {
                if s.ncols() != t.ncols() {
                    return Err(Error::shape("SSL and augmented SSL widths differ"));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn ssl(&self) -> Result<&Array2<f64>> {
        self.ssl_embeddings
            .as_ref()
            .ok_or_else(|| Error::invalid("batch has no SSL embeddings"))
    }

    pub(crate) fn ssl_aug(&self) -> Result<&Array2<f64>> {
        self.ssl_embeddings_aug
            .as_ref()
            .ok_or_else(|| Error::invalid("batch has no augmented SSL embeddings"))
    }
}

/// A scalar loss and its gradients with respect to the outputs it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub grad_logits: Array2<f64>,
    pub grad_ssl: Option<Array2<f64>>,
    pub grad_ssl_aug: Option<Array2<f64>>,
    /// Set when a normalizer hit its floor (collapsed batch).
    pub degenerate: bool,
}

impl LossReport {
    pub(crate) fn logits_only(value: f64, grad_logits: Array2<f64>) -> Self {
        Self { value, grad_logits, grad_ssl: None, grad_ssl_aug: None, degenerate: false }
    }

    pub fn zeros_like(outputs: &BatchOutputs) -> Self {
        Self::logits_only(0.0, Array2::zeros(outputs.logits.raw_dim()))
    }

    /// `self += weight * other`, creating missing gradient blocks as needed.
    pub fn add_scaled(&mut self, other: &LossReport, weight: f64) {
        self.value += weight * other.value;
        self.grad_logits.scaled_add(weight, &other.grad_logits);
        accumulate(&mut self.grad_ssl, &other.grad_ssl, weight);
        accumulate(&mut self.grad_ssl_aug, &other.grad_ssl_aug, weight);
        self.degenerate |= other.degenerate;
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_logits.iter().all(|v| v.is_finite())
            && self.grad_ssl.iter().flatten().all(|v| v.is_finite())
            && self.grad_ssl_aug.iter().flatten().all(|v| v.is_finite())
    }
}

fn accumulate(dst: &mut Option<Array2<f64>>, src: &Option<Array2<f64>>, weight: f64) {
    if let Some(src) = src {
        match dst {
            Some(d) => d.scaled_add(weight, src),
            None => *dst = Some(src * weight),
        }
    }
}

/// Config-file names of the supervised losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossSelector {
    Ce,
    Mae,
    Gce,
    Fw,
    Peer,
}

impl LossSelector {
    pub const ALL: [LossSelector; 5] =
        [LossSelector::Ce, LossSelector::Mae, LossSelector::Gce, LossSelector::Fw, LossSelector::Peer];

    pub fn as_str(self) -> &'static str {
        match self {
            LossSelector::Ce => "ce",
            LossSelector::Mae => "mae",
            LossSelector::Gce => "gce",
            LossSelector::Fw => "fw",
            LossSelector::Peer => "peer",
        }
    }
}

impl fmt::Display for LossSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossSelector::ALL
            .into_iter()
            .find(|sel| sel.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss {s:?} (expected ce, mae, gce, fw or peer)")))
    }
}

/// A supervised loss with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SupervisedLoss {
    Ce,
    Mae,
    Gce { q: f64 },
    Forward { transition: TransitionMatrix },
    Peer { alpha: f64 },
}

impl SupervisedLoss {
    pub fn selector(&self) -> LossSelector {
        match self {
            SupervisedLoss::Ce => LossSelector::Ce,
            SupervisedLoss::Mae => LossSelector::Mae,
            SupervisedLoss::Gce { .. } => LossSelector::Gce,
            SupervisedLoss::Forward { .. } => LossSelector::Fw,
            SupervisedLoss::Peer { .. } => LossSelector::Peer,
        }
    }

    /// Evaluates the loss. Peer loss needs the two in-batch permutations.
    pub fn evaluate(&self, outputs: &BatchOutputs, peer: Option<(&[usize], &[usize])>) -> Result<LossReport> {
        match self {
            SupervisedLoss::Ce => cross_entropy(outputs),
            SupervisedLoss::Mae => mae_loss(outputs),
            SupervisedLoss::Gce { q } => gce_loss(outputs, *q),
            SupervisedLoss::Forward { transition } => forward_corrected_ce(outputs, transition),
            SupervisedLoss::Peer { alpha } => {
                let (p1, p2) = peer.ok_or_else(|| Error::invalid("peer loss needs two permutations"))?;
                peer_loss(outputs, p1, p2, *alpha)
            }
        }
    }
}

/// Weights of the three terms of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub supervised: SupervisedLoss,
    /// Weight of the InfoNCE term; 0 disables it.
    pub info_weight: f64,
    pub temperature: f64,
    /// Regularizer shape; its `lambda` weights the term.
    pub regularizer: RegularizerConfig,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            supervised: SupervisedLoss::Ce,
            info_weight: 1.0,
            temperature: 0.5,
            regularizer: RegularizerConfig::default(),
        }
    }
}

/// Combined report plus the unweighted value of each component.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub report: LossReport,
    pub supervised: f64,
    /// `None` when the InfoNCE term is disabled or no augmented view exists.
    pub info: Option<f64>,
    /// `None` when the regularizer is disabled or no SSL embeddings exist.
    pub regularizer: Option<f64>,
}

/// `supervised + info_weight * InfoNCE + lambda * regularizer`.
///
/// A component with weight zero is skipped entirely.
pub fn total_loss(
    outputs: &BatchOutputs,
    objective: &Objective,
    peer: Option<(&[usize], &[usize])>,
) -> Result<TotalLoss> {
    let sl = objective.supervised.evaluate(outputs, peer)?;
    let mut report = LossReport::zeros_like(outputs);
    report.add_scaled(&sl, 1.0);

    let mut info = None;
    if objective.info_weight != 0.0 {
        let r = info_nce(outputs, objective.temperature)?;
        report.add_scaled(&r, objective.info_weight);
        info = Some(r.value);
    }

    let mut reg = None;
    if objective.regularizer.lambda != 0.0 {
        let r = representation_regularizer(outputs, &objective.regularizer)?;
        report.add_scaled(&r, objective.regularizer.lambda);
        reg = Some(r.value);
    }

    Ok(TotalLoss { report, supervised: sl.value, info, regularizer: reg })
}

pub(crate) fn softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = row.mapv(|v| (v - max).exp());
    let s = e.sum();
    e /= s;
    e
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (mut o, row) in out.rows_mut().into_iter().zip(logits.rows()) {
        o.assign(&softmax_row(row));
    }
    out
}

/// Pulls a gradient w.r.t. softmax probabilities back to the logits:
/// `dz_j = p_j (g_j - <g, p>)`.
pub(crate) fn softmax_backward(p: ArrayView1<f64>, grad_p: ArrayView1<f64>) -> Array1<f64> {
    let dot = p.dot(&grad_p);
    Array1::from_shape_fn(p.len(), |j| p[j] * (grad_p[j] - dot))
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::noise::symmetric_transition;

    fn batch(seed: u64) -> BatchOutputs {
        BatchOutputs::new(random_matrix(5, 3, 2.0, seed), random_labels(5, 3, seed + 1))
            .unwrap()
            .with_ssl(random_matrix(5, 4, 1.0, seed + 2))
            .unwrap()
            .with_ssl_aug(random_matrix(5, 4, 1.0, seed + 3))
            .unwrap()
    }

    #[test]
    fn selector_names_are_exact() {
        for s in LossSelector::ALL {
            assert_eq!(s.as_str().parse::<LossSelector>().unwrap(), s);
        }
        assert_eq!(
            LossSelector::ALL.map(LossSelector::as_str),
            ["ce", "mae", "gce", "fw", "peer"]
        );
        assert!("CE".parse::<LossSelector>().is_err());
    }

    #[test]
    fn disabled_terms_reduce_to_supervised() {
        let out = batch(1);
        let mut obj = Objective::default();
        obj.info_weight = 0.0;
        obj.regularizer.lambda = 0.0;
        let total = total_loss(&out, &obj, None).unwrap();
        let ce = cross_entropy(&out).unwrap();
        assert_eq!(total.report.value, ce.value);
        assert_eq!(total.report.grad_logits, ce.grad_logits);
        assert!(total.info.is_none() && total.regularizer.is_none());
    }

    #[test]
    fn default_lambda_is_one() {
        assert_eq!(RegularizerConfig::default().lambda, 1.0);
    }

    #[test]
    fn gradients_add_linearly() {
        let out = batch(7);
        let t = symmetric_transition(3, 0.2).unwrap();
        for sup in [SupervisedLoss::Ce, SupervisedLoss::Forward { transition: t }] {
            let mut obj = Objective { supervised: sup.clone(), ..Objective::default() };
            obj.regularizer.lambda = 0.7;
            obj.regularizer.ssl_grad = true;
            let total = total_loss(&out, &obj, None).unwrap();
            let sl = sup.evaluate(&out, None).unwrap();
            let info = info_nce(&out, obj.temperature).unwrap();
            let reg = representation_regularizer(&out, &obj.regularizer).unwrap();
            let expect = &sl.grad_logits + &info.grad_logits + &(0.7 * &reg.grad_logits);
            for (a, b) in total.report.grad_logits.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            let expect_ssl = info.grad_ssl.unwrap() + 0.7 * reg.grad_ssl.unwrap();
            for (a, b) in total.report.grad_ssl.unwrap().iter().zip(expect_ssl.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            let v = sl.value + info.value + 0.7 * reg.value;
            assert!((total.report.value - v).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_validation() {
        assert!(BatchOutputs::new(Array2::zeros((1, 2)), vec![0]).is_err());
        assert!(BatchOutputs::new(Array2::zeros((2, 2)), vec![0, 2]).is_err());
        let b = BatchOutputs::new(Array2::zeros((2, 2)), vec![0, 1]).unwrap();
        assert!(b.with_ssl(Array2::zeros((3, 2))).is_err());
    }
}
