use std::fmt;
use std::str::FromStr;

use super::network::{ForwardCache, NetworkParams};
use super::backward;
use crate::error::{Error, Result};
use crate::losses::LossReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer {other:?} (sgd or adam)"))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Plain SGD or Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: i32,
    moments: Option<(NetworkParams, NetworkParams)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be > 0, got {learning_rate}")));
        }
        Ok(Self { kind, learning_rate, step: 0, moments: None })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update. With `freeze_encoder` the encoder layers are not
    /// touched at all.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, freeze_encoder: bool) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite parameter gradient".into()));
        }
        let skip = if freeze_encoder { params.encoder.len() } else { 0 };
        let lr = self.learning_rate;
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.layers_mut().into_iter().zip(grads.layers()).skip(skip) {
                    p.weight.scaled_add(-lr, &g.weight);
                    p.bias.scaled_add(-lr, &g.bias);
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self.moments.get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
                let c1 = 1.0 - BETA1.powi(self.step);
                let c2 = 1.0 - BETA2.powi(self.step);
                let layers = params.layers_mut().into_iter().zip(grads.layers()).zip(m.layers_mut()).zip(v.layers_mut());
                for (((p, g), m), v) in layers.skip(skip) {
                    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    };
                    ndarray::Zip::from(&mut p.weight).and(&g.weight).and(&mut m.weight).and(&mut v.weight)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    ndarray::Zip::from(&mut p.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Numerical("parameters became non-finite after an update".into()));
        }
        Ok(())
    }
}

/// Backpropagates `report` and applies one optimizer step.
pub fn backward_and_step(
    params: &mut NetworkParams,
    cache: &ForwardCache,
    report: &LossReport,
    optimizer: &mut Optimizer,
    freeze_encoder: bool,
) -> Result<()> {
    if !report.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss or output gradient (loss = {})", report.value)));
    }
    let grads = backward(params, cache, report)?;
    optimizer.step(params, &grads, freeze_encoder)
}
