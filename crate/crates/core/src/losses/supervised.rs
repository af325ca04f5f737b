use ndarray::{Array1, Array2};

use super::{softmax_row, BatchOutputs, LossReport};
use crate::error::{Error, Result};
use crate::noise::TransitionMatrix;

/// Mean `-log softmax(z)[y]`; gradient `(p - onehot(y)) / B`.
pub fn cross_entropy(outputs: &BatchOutputs) -> Result<LossReport> {
    outputs.validate()?;
    let b = outputs.batch_size() as f64;
    let mut grad = Array2::zeros(outputs.logits.raw_dim());
    let mut value = 0.0;
    for ((row, mut g), &y) in outputs.logits.rows().into_iter().zip(grad.rows_mut()).zip(&outputs.noisy_labels) {
        let (nll, p) = log_softmax_at(row, y);
        value += nll;
        g.assign(&p);
        g[y] -= 1.0;
    }
    grad /= b;
    Ok(LossReport::logits_only(value / b, grad))
}

/// `-log softmax(z)[y]` computed stably, plus the softmax row.
fn log_softmax_at(row: ndarray::ArrayView1<f64>, y: usize) -> (f64, Array1<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let p = row.mapv(|v| (v - lse).exp());
    (lse - row[y], p)
}

/// Mean of `sum_k |p_k - onehot_k|`, which equals `2 (1 - p_y)` on the simplex.
pub fn mae_loss(outputs: &BatchOutputs) -> Result<LossReport> {
    outputs.validate()?;
    let b = outputs.batch_size() as f64;
    let mut grad = Array2::zeros(outputs.logits.raw_dim());
    let mut value = 0.0;
    for ((row, mut g), &y) in outputs.logits.rows().into_iter().zip(grad.rows_mut()).zip(&outputs.noisy_labels) {
        let p = softmax_row(row);
        value += p.iter().enumerate().map(|(k, &pk)| (pk - f64::from(k == y)).abs()).sum::<f64>();
        // d/dz_j [2 (1 - p_y)] = -2 p_y (delta_jy - p_j)
        let py = p[y];
        for j in 0..p.len() {
            g[j] = -2.0 * py * (f64::from(j == y) - p[j]) / b;
        }
    }
    Ok(LossReport::logits_only(value / b, grad))
}

/// Generalized cross entropy `(1 - p_y^q) / q`, `q` in `(0, 1]`.
pub fn gce_loss(outputs: &BatchOutputs, q: f64) -> Result<LossReport> {
    outputs.validate()?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("GCE q must lie in (0,1], got {q}")));
    }
    let b = outputs.batch_size() as f64;
    let mut grad = Array2::zeros(outputs.logits.raw_dim());
    let mut value = 0.0;
    for ((row, mut g), &y) in outputs.logits.rows().into_iter().zip(grad.rows_mut()).zip(&outputs.noisy_labels) {
        let p = softmax_row(row);
        let pyq = p[y].powf(q);
        value += (1.0 - pyq) / q;
        for j in 0..p.len() {
            g[j] = -pyq * (f64::from(j == y) - p[j]) / b;
        }
    }
    Ok(LossReport::logits_only(value / b, grad))
}

/// Forward-corrected cross entropy: CE on `T^T softmax(z)`.
pub fn forward_corrected_ce(outputs: &BatchOutputs, t: &TransitionMatrix) -> Result<LossReport> {
    outputs.validate()?;
    if t.num_classes() != outputs.num_classes() {
        return Err(Error::shape(format!(
            "transition matrix is {0}x{0} but logits have {1} classes",
            t.num_classes(),
            outputs.num_classes()
        )));
    }
    let b = outputs.batch_size() as f64;
    let tm = t.entries();
    let mut grad = Array2::zeros(outputs.logits.raw_dim());
    let mut value = 0.0;
    for ((row, mut g), &y) in outputs.logits.rows().into_iter().zip(grad.rows_mut()).zip(&outputs.noisy_labels) {
        let p = softmax_row(row);
        let col = tm.column(y);
        let qy = p.dot(&col);
        if !(qy > 0.0) {
            return Err(Error::Numerical(format!("corrected probability of label {y} is zero")));
        }
        value -= qy.ln();
        // dL/dz_j = p_j (1 - T_jy / q_y)
        for j in 0..p.len() {
            g[j] = p[j] * (1.0 - col[j] / qy) / b;
        }
    }
    Ok(LossReport::logits_only(value / b, grad))
}

/// Peer loss: `CE(z_n, y_n) - alpha * CE(z_{pi1(n)}, y_{pi2(n)})`, averaged.
pub fn peer_loss(outputs: &BatchOutputs, perm1: &[usize], perm2: &[usize], alpha: f64) -> Result<LossReport> {
    outputs.validate()?;
    let bn = outputs.batch_size();
    if perm1.len() != bn || perm2.len() != bn {
        return Err(Error::shape(format!(
            "peer permutations have lengths {} and {} for batch of {bn}",
            perm1.len(),
            perm2.len()
        )));
    }
    if let Some(&bad) = perm1.iter().chain(perm2).find(|&&i| i >= bn) {
        return Err(Error::invalid(format!("peer index {bad} out of range for batch of {bn}")));
    }
    let b = bn as f64;
    let mut grad = Array2::<f64>::zeros(outputs.logits.raw_dim());
    let mut value = 0.0;
    for n in 0..bn {
        let y = outputs.noisy_labels[n];
        let (nll, p) = log_softmax_at(outputs.logits.row(n), y);
        value += nll;
        let mut g = grad.row_mut(n);
        g.scaled_add(1.0 / b, &p);
        g[y] -= 1.0 / b;

        let (i, j) = (perm1[n], perm2[n]);
        let y_peer = outputs.noisy_labels[j];
        let (nll_peer, p_peer) = log_softmax_at(outputs.logits.row(i), y_peer);
        value -= alpha * nll_peer;
        let mut g = grad.row_mut(i);
        g.scaled_add(-alpha / b, &p_peer);
        g[y_peer] += alpha / b;
    }
    Ok(LossReport::logits_only(value / b, grad))
}
