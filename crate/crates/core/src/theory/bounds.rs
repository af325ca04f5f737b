use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Inputs to the estimation and approximation bounds. VC dimension and the
/// approximation constant are supplied by the caller, never estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub vc_dim: f64,
    pub n_samples: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub num_classes: usize,
    pub nodes: f64,
    pub alpha_star: f64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        Self { vc_dim: 10.0, n_samples: 10_000.0, delta: 0.05, epsilon: 0.0, num_classes: 10, nodes: 100.0, alpha_star: 1.0 }
    }
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::invalid(format!("{name} must be > 0, got {v}"))) }
        };
        positive(self.vc_dim, "VC dimension")?;
        positive(self.nodes, "node count")?;
        positive(self.alpha_star, "alpha")?;
        if !(self.n_samples >= 1.0) || !self.n_samples.is_finite() {
            return Err(Error::invalid(format!("sample count must be >= 1, got {}", self.n_samples)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("noise rate must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "asymmetric" => Ok(NoiseKind::Asymmetric),
            other => Err(Error::invalid(format!("unknown noise kind {other:?} (symmetric or asymmetric)"))),
        }
    }
}

/// Rate that scales the estimation error: `epsilon K / (K - 1)` for
/// symmetric noise, `epsilon` for asymmetric.
pub fn effective_rate(kind: NoiseKind, epsilon: f64, k: usize) -> f64 {
    match kind {
        NoiseKind::Symmetric => epsilon * k as f64 / (k - 1) as f64,
        NoiseKind::Asymmetric => epsilon,
    }
}

/// `16 sqrt((|C| ln(N e / |C|) + ln(8 / delta)) / (2 N (1 - rate)^2)) + bias`.
///
/// `bias` must be 0 for symmetric noise.
pub fn estimation_bound(params: &TheoryParams, kind: NoiseKind, bias: f64) -> Result<f64> {
    params.validate()?;
    if !bias.is_finite() {
        return Err(Error::invalid(format!("bias must be finite, got {bias}")));
    }
    if kind == NoiseKind::Symmetric && bias != 0.0 {
        return Err(Error::invalid("symmetric noise has no bias term"));
    }
    let rate = effective_rate(kind, params.epsilon, params.num_classes);
    if rate >= 1.0 {
        return Err(Error::invalid(format!("effective noise rate {rate} must be < 1")));
    }
    let n = params.n_samples;
    let c = params.vc_dim;
    let numer = c * (n * E / c).ln() + (8.0 / params.delta).ln();
    if numer < 0.0 {
        return Err(Error::invalid(format!("VC dimension {c} is too large for {n} samples")));
    }
    Ok(16.0 * (numer / (2.0 * n * (1.0 - rate).powi(2))).sqrt() + bias)
}

/// `alpha / sqrt(M)`.
pub fn approximation_bound(params: &TheoryParams) -> Result<f64> {
    params.validate()?;
    Ok(params.alpha_star / params.nodes.sqrt())
}

/// Size of a function class: VC dimension and node count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    pub vc_dim: f64,
    pub nodes: f64,
}

impl Capacity {
    pub fn new(vc_dim: f64, nodes: f64) -> Self {
        Self { vc_dim, nodes }
    }
}

/// Noise rates for which the larger class loses on the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// The inequality holds for every rate, including the clean case.
    Always,
    /// Holds exactly when the rate is at least this value.
    From(f64),
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossover {
    pub beta: f64,
    pub threshold: Threshold,
}

/// True when `1 - epsilon K / (K - 1) <= beta`.
pub fn crossover_holds(beta: f64, k: usize, epsilon: f64) -> bool {
    1.0 - epsilon * k as f64 / (k - 1) as f64 <= beta
}

fn threshold(beta: f64, k: usize) -> Threshold {
    if beta >= 1.0 {
        Threshold::Always
    } else if beta > 0.0 {
        Threshold::From((1.0 - beta) * (k - 1) as f64 / k as f64)
    } else {
        Threshold::Never
    }
}

fn complexity(vc: f64, n: f64) -> f64 {
    (vc * (4.0 * n * E / vc).ln()).sqrt()
}

fn check_capacity(c: &Capacity) -> Result<()> {
    if !(c.vc_dim > 0.0 && c.nodes > 0.0) || !c.vc_dim.is_finite() || !c.nodes.is_finite() {
        return Err(Error::invalid(format!("VC dimension and node count must be > 0, got {c:?}")));
    }
    Ok(())
}

fn beta_from(large: &Capacity, small: &Capacity, n: f64, denom: f64, k: usize) -> Result<Crossover> {
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::invalid(format!("sample count must be >= 1, got {n}")));
    }
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
    }
    let numer = complexity(large.vc_dim, n) - complexity(small.vc_dim, n);
    if !numer.is_finite() {
        return Err(Error::invalid("VC dimensions too large for the sample count"));
    }
    let beta = 16.0 / (2.0 * n).sqrt() * numer / denom;
    Ok(Crossover { beta, threshold: threshold(beta, k) })
}

/// Threshold above which the larger class `c1` has the worse bound than `c2`
/// under symmetric noise over `k` classes.
pub fn crossover_beta(c1: Capacity, c2: Capacity, n: f64, alpha: f64, k: usize) -> Result<Crossover> {
    check_capacity(&c1)?;
    check_capacity(&c2)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if !(c1.vc_dim > c2.vc_dim && c1.nodes > c2.nodes) {
        return Err(Error::invalid("the first class must have both more VC dimension and more nodes"));
    }
    let denom = alpha / c2.nodes.sqrt() - alpha / c1.nodes.sqrt();
    beta_from(&c1, &c2, n, denom, k)
}

/// Same comparison between an end-to-end class `G o F` (constant `alpha`)
/// and a linear head on a fixed encoder `G | f` (constant `alpha_prime`).
pub fn corollary_beta_prime(
    composed: Capacity,
    alpha: f64,
    linear: Capacity,
    alpha_prime: f64,
    n: f64,
    k: usize,
) -> Result<Crossover> {
    check_capacity(&composed)?;
    check_capacity(&linear)?;
    if !(alpha > 0.0 && alpha_prime > 0.0) || !alpha.is_finite() || !alpha_prime.is_finite() {
        return Err(Error::invalid("alpha constants must be > 0"));
    }
    if !(composed.vc_dim > linear.vc_dim) {
        return Err(Error::invalid("the composed class must have the larger VC dimension"));
    }
    let denom = alpha_prime / linear.nodes.sqrt() - alpha / composed.nodes.sqrt();
    if !(denom > 0.0) {
        return Err(Error::invalid("need alpha'/sqrt(M_G) > alpha/sqrt(M_GF)"));
    }
    beta_from(&composed, &linear, n, denom, k)
}
