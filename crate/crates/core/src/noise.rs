//! Label-noise models: transition matrices, noise injection, empirical
//! transition estimates and binary down-sampling analysis.

use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic `K x K` matrix with entry `(i, j) = P(noisy = j | clean = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: Array2<f64>,
}

impl TransitionMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::shape(format!("transition matrix is {rows}x{cols}, not square")));
        }
        if rows < 2 {
            return Err(Error::invalid("transition matrix needs K >= 2"));
        }
        for (i, row) in entries.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("row {i} has an entry outside [0,1]")));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { entries })
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::new(Array2::eye(k))
    }

    pub fn num_classes(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn get(&self, clean: usize, noisy: usize) -> f64 {
        self.entries[[clean, noisy]]
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `K` lines of `K` comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut k = None;
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: i as u64 + 1,
                        message: format!("non-numeric entry {f:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            match k {
                None => k = Some(row.len()),
                Some(k) if k != row.len() => {
                    return Err(Error::Parse {
                        line: i as u64 + 1,
                        message: format!("expected {k} entries, found {}", row.len()),
                    })
                }
                _ => {}
            }
            values.extend(row);
        }
        let k = k.ok_or_else(|| Error::invalid("empty transition matrix"))?;
        let rows = values.len() / k;
        Self::new(Array2::from_shape_vec((rows, k), values).map_err(|e| Error::shape(e.to_string()))?)
    }
}

impl fmt::Display for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.entries.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            writeln!(f, "{}", cells.join("  "))?;
        }
        Ok(())
    }
}

fn check_rate(name: &str, eps: f64, upper_inclusive: bool) -> Result<()> {
    let ok = eps >= 0.0 && if upper_inclusive { eps <= 1.0 } else { eps < 1.0 };
    if !ok || !eps.is_finite() {
        return Err(Error::invalid(format!("{name} rate {eps} out of range")));
    }
    Ok(())
}

/// Uniform flips: diagonal `1 - eps`, every off-diagonal `eps / (K - 1)`.
///
/// Rates at or above `(K-1)/K` are accepted; [`symmetric_is_consistent`]
/// reports whether the affine consistency relation is still informative.
pub fn symmetric_transition(k: usize, epsilon: f64) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::invalid(format!("K must be >= 2, got {k}")));
    }
    check_rate("symmetric noise", epsilon, true)?;
    let off = epsilon / (k - 1) as f64;
    let mut m = Array2::from_elem((k, k), off);
    for i in 0..k {
        m[[i, i]] = 1.0 - epsilon;
    }
    TransitionMatrix::new(m)
}

/// `true` while `eps < (K-1)/K`, i.e. the clean-risk coefficient stays positive.
pub fn symmetric_is_consistent(k: usize, epsilon: f64) -> bool {
    k >= 2 && epsilon * (k as f64) < (k - 1) as f64
}

/// Adjacent-class flips: class `i` goes to `(i + 1) mod K` with probability `eps`.
pub fn asymmetric_transition(k: usize, epsilon: f64) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::invalid(format!("K must be >= 2, got {k}")));
    }
    check_rate("asymmetric noise", epsilon, false)?;
    let mut m = Array2::zeros((k, k));
    for i in 0..k {
        m[[i, i]] = 1.0 - epsilon;
        m[[i, (i + 1) % k]] += epsilon;
    }
    TransitionMatrix::new(m)
}

fn sample_row(t: &TransitionMatrix, clean: usize, u: f64) -> usize {
    let k = t.num_classes();
    let mut acc = 0.0;
    for j in 0..k {
        acc += t.get(clean, j);
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding slack above the row sum; take the last
    // class with non-zero mass.
    (0..k).rev().find(|&j| t.get(clean, j) > 0.0).unwrap_or(clean)
}

/// Draws each noisy label from the row of `t` indexed by the clean label.
pub fn apply_class_noise(dataset: &Dataset, t: &TransitionMatrix, seed: u64) -> Result<Dataset> {
    if dataset.num_classes() != t.num_classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, transition matrix {}",
            dataset.num_classes(),
            t.num_classes()
        )));
    }
    let mut rng = seeded(seed);
    let noisy: Vec<usize> = dataset
        .clean_labels()
        .iter()
        .map(|&y| sample_row(t, y, rng.random()))
        .collect();
    let flips = noisy.iter().zip(dataset.clean_labels()).filter(|(a, b)| a != b).count();
    let mut out = dataset.with_noisy_labels(noisy)?;
    out.metadata.insert("noise".into(), "class_dependent".into());
    out.metadata.insert(
        "realized_flip_rate".into(),
        (flips as f64 / dataset.len() as f64).to_string(),
    );
    Ok(out)
}

/// Parameters of the feature-dependent noise generator.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNoiseSpec {
    pub mean_rate: f64,
    pub rate_std: f64,
    pub max_rate: f64,
    pub projection_seed: u64,
}

impl InstanceNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_rate >= 0.0 && self.mean_rate < self.max_rate && self.max_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= mean_rate < max_rate <= 1, got mean_rate={} max_rate={}",
                self.mean_rate, self.max_rate
            )));
        }
        if !(self.rate_std >= 0.0) || !self.rate_std.is_finite() {
            return Err(Error::invalid(format!("rate_std must be >= 0, got {}", self.rate_std)));
        }
        Ok(())
    }
}

/// Instance-dependent noise.
///
/// Each row gets a flip probability from `N(mean_rate, rate_std^2)` truncated
/// to `[0, max_rate]` (rejection sampling). Its wrong-class target is the
/// argmax of `<x, w_j>` over classes `j` other than the clean one, where the
/// `w_j` are standard-normal projections drawn from `projection_seed`.
pub fn apply_instance_noise(dataset: &Dataset, spec: &InstanceNoiseSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (k, d) = (dataset.num_classes(), dataset.dim());
    let mut proj_rng = seeded(spec.projection_seed);
    let projections = Array2::from_shape_fn((d, k), |_| StandardNormal.sample(&mut proj_rng));
    let scores = dataset.features().dot(&projections);

    let mut rng = seeded(seed);
    let rate_dist = (spec.rate_std > 0.0)
        .then(|| Normal::new(spec.mean_rate, spec.rate_std))
        .transpose()
        .map_err(|e| Error::invalid(e.to_string()))?;

    let mut noisy = Vec::with_capacity(dataset.len());
    let mut prob_sum = 0.0;
    let mut flips = 0usize;
    for (n, &y) in dataset.clean_labels().iter().enumerate() {
        let q = match &rate_dist {
            None => spec.mean_rate,
            Some(dist) => {
                let mut q = None;
                for _ in 0..1000 {
                    let draw: f64 = dist.sample(&mut rng);
                    if (0.0..=spec.max_rate).contains(&draw) {
                        q = Some(draw);
                        break;
                    }
                }
                q.unwrap_or_else(|| spec.mean_rate.clamp(0.0, spec.max_rate))
            }
        };
        prob_sum += q;
        let target = (0..k)
            .filter(|&j| j != y)
            .fold(None::<usize>, |best, j| match best {
                Some(b) if scores[[n, b]] >= scores[[n, j]] => Some(b),
                _ => Some(j),
            })
            .expect("K >= 2 leaves at least one other class");
        let u: f64 = rng.random();
        if u < q {
            noisy.push(target);
            flips += 1;
        } else {
            noisy.push(y);
        }
    }
    let mut out = dataset.with_noisy_labels(noisy)?;
    let n = dataset.len() as f64;
    out.metadata.insert("noise".into(), "instance_dependent".into());
    out.metadata.insert("mean_flip_probability".into(), (prob_sum / n).to_string());
    out.metadata.insert("realized_flip_rate".into(), (flips as f64 / n).to_string());
    Ok(out)
}

/// Row-normalized confusion counts between clean and noisy labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTransition {
    pub matrix: TransitionMatrix,
    /// Clean classes with no rows; their row is set to the identity row.
    pub empty_rows: Vec<usize>,
}

pub fn empirical_transition(clean: &[usize], noisy: &[usize], k: usize) -> Result<EmpiricalTransition> {
    if clean.len() != noisy.len() {
        return Err(Error::shape(format!(
            "{} clean labels vs {} noisy labels",
            clean.len(),
            noisy.len()
        )));
    }
    if k < 2 {
        return Err(Error::invalid("K must be >= 2"));
    }
    let mut counts = Array2::<f64>::zeros((k, k));
    for (&c, &n) in clean.iter().zip(noisy) {
        if c >= k || n >= k {
            return Err(Error::invalid(format!("label pair ({c},{n}) out of range for K={k}")));
        }
        counts[[c, n]] += 1.0;
    }
    let mut empty_rows = Vec::new();
    for (i, mut row) in counts.rows_mut().into_iter().enumerate() {
        let total = row.sum();
        if total == 0.0 {
            row[i] = 1.0;
            empty_rows.push(i);
        } else {
            row.mapv_inplace(|v| v / total);
        }
    }
    Ok(EmpiricalTransition { matrix: TransitionMatrix::new(counts)?, empty_rows })
}

/// Subsamples every noisy class down to the smallest noisy-class count.
/// Surviving rows keep their original relative order.
pub fn downsample_balance(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let noisy = dataset.require_noisy()?;
    let k = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (n, &l) in noisy.iter().enumerate() {
        by_class[l].push(n);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("noisy class {empty} is empty")));
    }
    let target = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = seeded(seed);
    let mut keep = Vec::with_capacity(target * k);
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        keep.extend_from_slice(&rows[..target]);
    }
    keep.sort_unstable();
    let mut out = dataset.select(&keep)?;
    out.metadata.insert("downsampled".into(), "true".into());
    Ok(out)
}

/// Binary flip rates: `e_plus = P(noisy=0 | clean=1)`, `e_minus = P(noisy=1 | clean=0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryNoiseRates {
    pub e_plus: f64,
    pub e_minus: f64,
}

impl BinaryNoiseRates {
    pub fn new(e_plus: f64, e_minus: f64) -> Result<Self> {
        let rates = Self { e_plus, e_minus };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("e_plus", self.e_plus), ("e_minus", self.e_minus)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0,1), got {v}")));
            }
        }
        if self.e_plus + self.e_minus >= 1.0 {
            return Err(Error::invalid(format!(
                "e_plus + e_minus must be < 1, got {}",
                self.e_plus + self.e_minus
            )));
        }
        Ok(())
    }

    pub fn gap(&self) -> f64 {
        self.e_plus - self.e_minus
    }

    /// The transition matrix over labels `{0, 1}`.
    pub fn transition(&self) -> Result<TransitionMatrix> {
        let m = ndarray::array![[1.0 - self.e_minus, self.e_minus], [self.e_plus, 1.0 - self.e_plus]];
        TransitionMatrix::new(m)
    }
}

/// A down-sampling rate together with the noisy class it applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsampleRate {
    pub rate: f64,
    pub subsampled_class: usize,
}

/// Rate that equalizes the post-sampling flip rates.
///
/// With `e_plus > e_minus` (balanced clean classes) noisy class 0 is the
/// larger one and is kept at rate `sqrt(e_minus (1 - e_plus) / (e_plus (1 - e_minus)))`;
/// the mirrored case subsamples class 1 with the roles swapped.
pub fn optimal_downsample_rate(rates: &BinaryNoiseRates) -> Result<DownsampleRate> {
    rates.validate()?;
    let (hi, lo, class) = if rates.e_plus >= rates.e_minus {
        (rates.e_plus, rates.e_minus, 0)
    } else {
        (rates.e_minus, rates.e_plus, 1)
    };
    if hi == lo {
        return Ok(DownsampleRate { rate: 1.0, subsampled_class: class });
    }
    let rate = ((lo * (1.0 - hi)) / (hi * (1.0 - lo))).sqrt();
    Ok(DownsampleRate { rate, subsampled_class: class })
}

/// Rate that equalizes the noisy class sizes, `(1 - e_plus + e_minus) / (1 - e_minus + e_plus)`
/// applied to noisy class 0 when `e_plus >= e_minus`.
pub fn balance_downsample_rate(rates: &BinaryNoiseRates) -> Result<DownsampleRate> {
    rates.validate()?;
    let (hi, lo, class) = if rates.e_plus >= rates.e_minus {
        (rates.e_plus, rates.e_minus, 0)
    } else {
        (rates.e_minus, rates.e_plus, 1)
    };
    Ok(DownsampleRate { rate: (1.0 - hi + lo) / (1.0 - lo + hi), subsampled_class: class })
}

/// Flip rates after keeping a fraction `r` of the rows with noisy label 0:
/// `e_plus* = r e_plus / (1 - e_plus + r e_plus)`, `e_minus* = e_minus / (r (1 - e_minus) + e_minus)`.
pub fn post_downsample_rates(rates: &BinaryNoiseRates, r: f64) -> Result<(f64, f64)> {
    rates.validate()?;
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::invalid(format!("down-sampling rate must lie in (0,1], got {r}")));
    }
    let e_plus = r * rates.e_plus / (1.0 - rates.e_plus + r * rates.e_plus);
    let e_minus = rates.e_minus / (r * (1.0 - rates.e_minus) + rates.e_minus);
    Ok((e_plus, e_minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian_mixture, GaussianMixtureSpec};
    use ndarray::array;

    fn blobs(n: usize, k: usize, seed: u64) -> Dataset {
        let means = Array2::from_shape_fn((k, 2), |(i, j)| if j == 0 { i as f64 } else { 0.0 });
        let spec = GaussianMixtureSpec {
            means,
            shared_cov_scale: 1.0,
            class_priors: vec![1.0 / k as f64; k],
            n_samples: n,
        };
        generate_gaussian_mixture(&spec, seed).unwrap()
    }

    #[test]
    fn symmetric_entries() {
        let t = symmetric_transition(3, 0.3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.7 } else { 0.15 };
                assert!((t.get(i, j) - want).abs() < 1e-15);
            }
        }
        assert_eq!(symmetric_transition(10, 0.0).unwrap().entries(), &Array2::<f64>::eye(10));
        assert!(symmetric_transition(1, 0.1).is_err());
    }

    #[test]
    fn symmetric_above_threshold_is_flagged_not_rejected() {
        assert!(symmetric_transition(2, 0.6).is_ok());
        assert!(!symmetric_is_consistent(2, 0.6));
        assert!(!symmetric_is_consistent(2, 0.5));
        assert!(symmetric_is_consistent(10, 0.6));
    }

    #[test]
    fn asymmetric_wraps_around() {
        let t = asymmetric_transition(4, 0.4).unwrap();
        assert_eq!(t.get(0, 1), 0.4);
        assert_eq!(t.get(3, 0), 0.4);
        assert_eq!(t.get(3, 3), 0.6);
        for row in t.entries().rows() {
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 2);
        }
        assert_eq!(asymmetric_transition(4, 0.0).unwrap().entries(), &Array2::<f64>::eye(4));
        assert!(asymmetric_transition(4, 1.0).is_err());
    }

    #[test]
    fn identity_noise_keeps_labels() {
        let ds = blobs(300, 3, 1);
        let noisy = apply_class_noise(&ds, &TransitionMatrix::identity(3).unwrap(), 4).unwrap();
        assert_eq!(noisy.noisy_labels().unwrap(), ds.clean_labels());
    }

    #[test]
    fn class_noise_flip_rate_concentrates() {
        let ds = blobs(100_000, 2, 2);
        let t = symmetric_transition(2, 0.4).unwrap();
        let noisy = apply_class_noise(&ds, &t, 8).unwrap();
        let flips = noisy
            .noisy_labels()
            .unwrap()
            .iter()
            .zip(ds.clean_labels())
            .filter(|(a, b)| a != b)
            .count() as f64
            / 100_000.0;
        assert!((0.39..=0.41).contains(&flips), "{flips}");
        assert_eq!(noisy, apply_class_noise(&ds, &t, 8).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let ds = blobs(10, 2, 0);
        assert!(apply_class_noise(&ds, &symmetric_transition(3, 0.1).unwrap(), 0).is_err());
    }

    #[test]
    fn instance_noise_rate_matches_mean() {
        let features = Array2::from_elem((100_000, 3), 0.5);
        let clean: Vec<usize> = (0..100_000).map(|i| i % 4).collect();
        let ds = Dataset::new(features, clean, None, 4).unwrap();
        let spec = InstanceNoiseSpec { mean_rate: 0.3, rate_std: 0.0, max_rate: 1.0, projection_seed: 5 };
        let out = apply_instance_noise(&ds, &spec, 6).unwrap();
        let realized: f64 = out.metadata["realized_flip_rate"].parse().unwrap();
        assert!((realized - 0.3).abs() < 0.01, "{realized}");
    }

    #[test]
    fn instance_noise_targets_are_never_clean() {
        let ds = blobs(5_000, 5, 3);
        let spec = InstanceNoiseSpec { mean_rate: 0.4, rate_std: 0.2, max_rate: 0.9, projection_seed: 1 };
        let out = apply_instance_noise(&ds, &spec, 2).unwrap();
        let noisy = out.noisy_labels().unwrap();
        // Any change of label is a flip to some other class; check flips exist
        // and that the truncated rates stay in range.
        assert!(noisy.iter().zip(ds.clean_labels()).any(|(a, b)| a != b));
        let mean_q: f64 = out.metadata["mean_flip_probability"].parse().unwrap();
        assert!(mean_q > 0.0 && mean_q <= 0.9);
        let zero = InstanceNoiseSpec { mean_rate: 0.0, rate_std: 0.0, max_rate: 0.5, projection_seed: 1 };
        let out = apply_instance_noise(&ds, &zero, 2).unwrap();
        assert_eq!(out.noisy_labels().unwrap(), ds.clean_labels());
    }

    #[test]
    fn empirical_transition_hand_count() {
        let e = empirical_transition(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(e.matrix.entries(), &array![[0.5, 0.5], [0.0, 1.0]]);
        assert!(e.empty_rows.is_empty());
        let e = empirical_transition(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(e.empty_rows, vec![1, 2]);
        assert_eq!(e.matrix.entries(), &Array2::<f64>::eye(3));
        assert!(empirical_transition(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn empirical_matches_target() {
        let ds = blobs(100_000, 4, 10);
        let t = asymmetric_transition(4, 0.3).unwrap();
        let noisy = apply_class_noise(&ds, &t, 3).unwrap();
        let e = empirical_transition(ds.clean_labels(), noisy.noisy_labels().unwrap(), 4).unwrap();
        assert!(e.matrix.max_abs_diff(&t) < 0.01);
    }

    #[test]
    fn downsample_min_rule() {
        let features = Array2::zeros((1000, 1));
        let clean = vec![0; 1000];
        let noisy: Vec<usize> = (0..1000).map(|i| usize::from(i >= 600)).collect();
        let ds = Dataset::new(features, clean, Some(noisy), 2).unwrap();
        let out = downsample_balance(&ds, 1).unwrap();
        let ones = out.noisy_labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!((out.len() - ones, ones), (400, 400));
    }

    #[test]
    fn downsample_balanced_is_identity() {
        let features = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        let ds = Dataset::new(features, vec![0, 1, 0, 1, 0, 1], Some(vec![0, 1, 1, 0, 0, 1]), 2).unwrap();
        let mut out = downsample_balance(&ds, 3).unwrap();
        out.metadata.clear();
        assert_eq!(out, ds);
    }

    #[test]
    fn downsample_rejects_empty_class() {
        let ds = Dataset::new(Array2::zeros((3, 1)), vec![0, 0, 1], Some(vec![0, 0, 0]), 2).unwrap();
        let err = downsample_balance(&ds, 0).unwrap_err().to_string();
        assert!(err.contains("class 1"), "{err}");
    }

    #[test]
    fn downsample_formulas() {
        let rates = BinaryNoiseRates::new(0.4, 0.2).unwrap();
        let r = optimal_downsample_rate(&rates).unwrap();
        assert!((r.rate - 0.375f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.subsampled_class, 0);
        let (p, m) = post_downsample_rates(&rates, r.rate).unwrap();
        assert!((p - m).abs() < 1e-12);
        assert!((p - 0.2899).abs() < 1e-4);

        let bal = balance_downsample_rate(&rates).unwrap();
        assert!((bal.rate - 2.0 / 3.0).abs() < 1e-15);
        let (p, m) = post_downsample_rates(&rates, bal.rate).unwrap();
        assert!((p - 0.3077).abs() < 5e-5 && (m - 0.2727).abs() < 5e-5, "{p} {m}");

        assert_eq!(post_downsample_rates(&rates, 1.0).unwrap(), (0.4, 0.2));
        assert!(post_downsample_rates(&rates, 0.0).is_err());
        assert_eq!(optimal_downsample_rate(&BinaryNoiseRates::new(0.3, 0.3).unwrap()).unwrap().rate, 1.0);
        assert!(BinaryNoiseRates::new(0.6, 0.4).is_err());
    }

    #[test]
    fn mirrored_orientation_subsamples_class_one() {
        let r = optimal_downsample_rate(&BinaryNoiseRates::new(0.2, 0.4).unwrap()).unwrap();
        assert_eq!(r.subsampled_class, 1);
        assert!((r.rate - 0.375f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn transition_csv_round_trip() {
        let t = symmetric_transition(3, 0.25).unwrap();
        assert_eq!(TransitionMatrix::from_csv(&t.to_csv()).unwrap(), t);
        assert!(TransitionMatrix::from_csv("0.5,0.5\n1.0\n").is_err());
    }
}
