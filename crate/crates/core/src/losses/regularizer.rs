use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use super::{softmax, softmax_backward, BatchOutputs, LossReport};
use crate::error::{Error, Result};

/// Penalty applied to the difference of two normalized distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    SquaredL2,
    /// Quadratic below 1, linear above.
    SmoothL1,
}

impl Distance {
    fn value(self, x: f64) -> f64 {
        match self {
            Distance::SquaredL2 => x * x,
            Distance::SmoothL1 if x.abs() < 1.0 => 0.5 * x * x,
            Distance::SmoothL1 => x.abs() - 0.5,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Distance::SquaredL2 => 2.0 * x,
            Distance::SmoothL1 if x.abs() < 1.0 => x,
            Distance::SmoothL1 => x.signum(),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::SquaredL2 => "squared-l2",
            Distance::SmoothL1 => "smooth-l1",
        })
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-l2" => Ok(Distance::SquaredL2),
            "smooth-l1" => Ok(Distance::SmoothL1),
            other => Err(Error::invalid(format!("unknown distance {other:?} (squared-l2 or smooth-l1)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    /// Exponent on classifier-output distances (1 or 2).
    pub w_sl: u8,
    /// Exponent on SSL-embedding distances (1 or 2).
    pub w_ssl: u8,
    pub distance: Distance,
    pub lambda: f64,
    pub epsilon_floor: f64,
    /// Also send gradients to the SSL embeddings (detached by default).
    pub ssl_grad: bool,
    /// Differentiate through the batch normalizers instead of holding them
    /// constant.
    pub normalizer_grad: bool,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            w_sl: 1,
            w_ssl: 2,
            distance: Distance::SmoothL1,
            lambda: 1.0,
            epsilon_floor: 1e-8,
            ssl_grad: false,
            normalizer_grad: false,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_sl", self.w_sl), ("w_ssl", self.w_ssl)] {
            if w != 1 && w != 2 {
                return Err(Error::invalid(format!("{name} must be 1 or 2, got {w}")));
            }
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::invalid("epsilon_floor must be > 0"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Mean pairwise distance of a batch, floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub value: f64,
    /// The raw mean was below the floor (collapsed batch).
    pub degenerate: bool,
}

fn powered_distance(a: ArrayView1<f64>, b: ArrayView1<f64>, w: u8) -> f64 {
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    if w == 1 {
        sq.sqrt()
    } else {
        sq
    }
}

/// `m = 1/(M(M-1)) * sum_{n != n'} |x_n - x_n'|^w`, returned as `max(m, floor)`.
pub fn pairwise_normalizer(embeddings: &Array2<f64>, w: u8, epsilon_floor: f64) -> Result<Normalizer> {
    let m = embeddings.nrows();
    if m < 2 {
        return Err(Error::invalid(format!("normalizer needs at least 2 rows, got {m}")));
    }
    if w != 1 && w != 2 {
        return Err(Error::invalid(format!("distance exponent must be 1 or 2, got {w}")));
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            total += 2.0 * powered_distance(embeddings.row(i), embeddings.row(j), w);
        }
    }
    let mean = total / (m * (m - 1)) as f64;
    Ok(if mean < epsilon_floor {
        Normalizer { value: epsilon_floor, degenerate: true }
    } else {
        Normalizer { value: mean, degenerate: false }
    })
}

/// Adds `coef * d|x_i - x_j|^w / dx_i` to row `i` of `grad` and its negative
/// to row `j`.
fn scatter_pair_grad(x: &Array2<f64>, grad: &mut Array2<f64>, i: usize, j: usize, w: u8, coef: f64) {
    let scale = if w == 2 {
        2.0 * coef
    } else {
        let norm = powered_distance(x.row(i), x.row(j), 1);
        if norm == 0.0 {
            return;
        }
        coef / norm
    };
    for k in 0..x.ncols() {
        let g = scale * (x[[i, k]] - x[[j, k]]);
        grad[[i, k]] += g;
        grad[[j, k]] -= g;
    }
}

/// Batch mean of the representation regularizer:
///
/// `1/(B(B-1)) * sum_{n != n'} d( |t_n - t_n'|^{w_ssl} / m_t , |s_n - s_n'|^{w_sl} / m_s )`
///
/// with `s = softmax(logits)`, `t` the SSL embeddings and `m_t`, `m_s` the
/// batch normalizers (held constant for the gradient).
pub fn representation_regularizer(outputs: &BatchOutputs, cfg: &RegularizerConfig) -> Result<LossReport> {
    cfg.validate()?;
    let (m_t, m_s) = batch_normalizers(outputs, cfg)?;
    representation_regularizer_frozen(outputs, cfg, m_t, m_s)
}

/// Normalizers `(m_t, m_s)` of the SSL embeddings and the softmax outputs.
pub fn batch_normalizers(outputs: &BatchOutputs, cfg: &RegularizerConfig) -> Result<(Normalizer, Normalizer)> {
    let m_t = pairwise_normalizer(outputs.ssl()?, cfg.w_ssl, cfg.epsilon_floor)?;
    let m_s = pairwise_normalizer(&softmax(&outputs.logits), cfg.w_sl, cfg.epsilon_floor)?;
    Ok((m_t, m_s))
}

/// The regularizer with externally supplied normalizers, e.g. ones frozen at
/// another point for finite-difference checks.
pub fn representation_regularizer_frozen(
    outputs: &BatchOutputs,
    cfg: &RegularizerConfig,
    m_t: Normalizer,
    m_s: Normalizer,
) -> Result<LossReport> {
    outputs.validate()?;
    cfg.validate()?;
    let t = outputs.ssl()?;
    let s = softmax(&outputs.logits);
    let b = s.nrows();
    if b < 2 {
        return Err(Error::invalid(format!("regularizer needs a batch of at least 2, got {b}")));
    }

    let mut report = LossReport::zeros_like(outputs);
    if cfg.ssl_grad {
        report.grad_ssl = Some(Array2::zeros(t.raw_dim()));
    }
    report.degenerate = m_t.degenerate || m_s.degenerate;
    if m_t.degenerate && m_s.degenerate {
        return Ok(report);
    }

    let pairs = (b * (b - 1)) as f64;
    let mut terms = Vec::with_capacity(b * (b - 1) / 2);
    let mut value = 0.0;
    // Each unordered pair stands for both orderings, hence the factors of 2.
    let (mut shift_s, mut shift_t) = (0.0, 0.0);
    for i in 0..b {
        for j in (i + 1)..b {
            let a = powered_distance(t.row(i), t.row(j), cfg.w_ssl) / m_t.value;
            let c = powered_distance(s.row(i), s.row(j), cfg.w_sl) / m_s.value;
            let diff = a - c;
            value += 2.0 * cfg.distance.value(diff);
            let dd = cfg.distance.derivative(diff);
            shift_s += 2.0 * dd * c / pairs;
            shift_t += 2.0 * dd * a / pairs;
            terms.push((i, j, dd));
        }
    }
    // d(c)/d(m_s) = -c/m_s, and m_s is the mean of the raw distances, so the
    // normalizer contributes a per-pair offset to the distance gradient.
    let exact_s = cfg.normalizer_grad && !m_s.degenerate;
    let exact_t = cfg.normalizer_grad && !m_t.degenerate;
    let mut grad_s = Array2::<f64>::zeros(s.raw_dim());
    for &(i, j, dd) in &terms {
        let coef = 2.0 * (if exact_s { shift_s - dd } else { -dd }) / (pairs * m_s.value);
        scatter_pair_grad(&s, &mut grad_s, i, j, cfg.w_sl, coef);
        if let Some(gt_all) = report.grad_ssl.as_mut() {
            let coef = 2.0 * (if exact_t { dd - shift_t } else { dd }) / (pairs * m_t.value);
            scatter_pair_grad(t, gt_all, i, j, cfg.w_ssl, coef);
        }
    }
    report.value = value / pairs;
    for n in 0..b {
        let g = softmax_backward(s.row(n), grad_s.row(n));
        report.grad_logits.row_mut(n).assign(&g);
    }
    Ok(report)
}
