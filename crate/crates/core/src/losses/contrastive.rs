use ndarray::{Array2, ArrayView1};

use super::{BatchOutputs, LossReport};
use crate::error::{Error, Result};

/// InfoNCE over cosine similarities, NT-Xent convention.
///
/// Anchor `t_n` is scored against its positive `t'_n` and, as negatives,
/// every other anchor `t_m` and every other augmented view `t'_m`; the
/// positive also sits in the denominator:
///
/// `l_n = -s(t_n, t'_n)/tau + log( e^{s(t_n,t'_n)/tau} + sum_{m != n} e^{s(t_n,t_m)/tau} + e^{s(t_n,t'_m)/tau} )`
///
/// The reported value is the batch mean. Gradients flow to both embedding sets.
pub fn info_nce(outputs: &BatchOutputs, temperature: f64) -> Result<LossReport> {
    outputs.validate()?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let t = outputs.ssl()?;
    let ta = outputs.ssl_aug()?;
    let (u, u_norms) = normalize_rows(t, "SSL embedding")?;
    let (v, v_norms) = normalize_rows(ta, "augmented SSL embedding")?;
    let b = u.nrows();
    let inv_tau = 1.0 / temperature;

    // Row n of the weight matrices holds the softmax weights of anchor n over
    // its candidates; the positive carries weight w - 1.
    let s_uu = u.dot(&u.t()) * inv_tau;
    let s_uv = u.dot(&v.t()) * inv_tau;
    let mut w_uu = Array2::<f64>::zeros((b, b));
    let mut w_uv = Array2::<f64>::zeros((b, b));
    let mut value = 0.0;
    for n in 0..b {
        let (ruu, ruv) = (s_uu.row(n), s_uv.row(n));
        let max = (0..b)
            .filter(|&m| m != n)
            .map(|m| ruu[m])
            .chain(ruv.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..b).filter(|&m| m != n).map(|m| (ruu[m] - max).exp()).sum::<f64>()
            + ruv.iter().map(|l| (l - max).exp()).sum::<f64>();
        let lse = max + z.ln();
        value += lse - ruv[n];
        for m in 0..b {
            if m != n {
                w_uu[[n, m]] = (ruu[m] - lse).exp();
            }
            w_uv[[n, m]] = (ruv[m] - lse).exp();
        }
        w_uv[[n, n]] -= 1.0;
    }
    let grad_u = (w_uu.dot(&u) + w_uv.dot(&v) + w_uu.t().dot(&u)) * inv_tau;
    let grad_v = w_uv.t().dot(&u) * inv_tau;

    let scale = 1.0 / b as f64;
    let grad_ssl = unnormalize_grad(&u, &u_norms, &grad_u, scale);
    let grad_ssl_aug = unnormalize_grad(&v, &v_norms, &grad_v, scale);
    Ok(LossReport {
        value: value * scale,
        grad_logits: Array2::zeros(outputs.logits.raw_dim()),
        grad_ssl: Some(grad_ssl),
        grad_ssl_aug: Some(grad_ssl_aug),
        degenerate: false,
    })
}

fn normalize_rows(x: &Array2<f64>, what: &str) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for (n, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid(format!("{what} row {n} has zero norm; cosine similarity is undefined")));
        }
        row /= norm;
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Chain rule through `u = t / |t|`: `dL/dt = (g - <g,u> u) / |t|`.
fn unnormalize_grad(u: &Array2<f64>, norms: &[f64], grad_u: &Array2<f64>, scale: f64) -> Array2<f64> {
    let mut out = Array2::zeros(u.raw_dim());
    for n in 0..u.nrows() {
        let (un, gn): (ArrayView1<f64>, ArrayView1<f64>) = (u.row(n), grad_u.row(n));
        let proj = gn.dot(&un);
        let mut o = out.row_mut(n);
        o.assign(&gn);
        o.scaled_add(-proj, &un);
        o *= scale / norms[n];
    }
    out
}
