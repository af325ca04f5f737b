use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use super::gaussian::{draw_into, psd_factor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

const SHARD_STREAM: u64 = 31;

/// Binary SSL-feature model: class 1 features `N(mu1, cov)`, class 0
/// features `N(mu2, cov)`, both classes flipped with probability `flip_rate`.
/// `n_mc` is the Monte-Carlo sample count per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFeatureSpec {
    pub mu1: Array1<f64>,
    pub mu2: Array1<f64>,
    pub cov: Array2<f64>,
    pub flip_rate: f64,
    pub n_mc: usize,
}

impl GaussianFeatureSpec {
    /// Means `(1, 0)` and `(-1, 0)` with covariance `(delta / 4) I`, which
    /// puts the separation ratio at exactly `delta`.
    pub fn planar(delta: f64, flip_rate: f64, n_mc: usize) -> Self {
        Self {
            mu1: ndarray::array![1.0, 0.0],
            mu2: ndarray::array![-1.0, 0.0],
            cov: Array2::eye(2) * (delta / 4.0),
            flip_rate,
            n_mc,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.mu1.len();
        if p == 0 || self.mu2.len() != p || self.cov.dim() != (p, p) {
            return Err(Error::shape(format!(
                "means of length {} and {} with covariance {:?}",
                p,
                self.mu2.len(),
                self.cov.dim()
            )));
        }
        if self.mu1.iter().chain(self.mu2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        psd_factor(&self.cov)?;
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(Error::invalid(format!("flip rate must lie in [0, 0.5), got {}", self.flip_rate)));
        }
        if self.n_mc == 0 {
            return Err(Error::invalid("n_mc must be >= 1"));
        }
        Ok(())
    }
}

/// `8 tr(cov) / ||mu1 - mu2||^2`, infinite when the means coincide.
pub fn theorem3_delta(spec: &GaussianFeatureSpec) -> Result<f64> {
    spec.validate()?;
    let diff = &spec.mu1 - &spec.mu2;
    let gap = diff.dot(&diff);
    if gap == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(8.0 * spec.cov.diag().sum() / gap)
}

/// Expected predictions on the two mislabeled groups and the resulting risk.
/// `plus` is the group labelled 1 whose clean label is 0, `minus` the group
/// labelled 0 whose clean label is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem3Solution {
    pub plus: f64,
    pub minus: f64,
    pub risk: f64,
}

pub fn theorem3_from_delta(delta: f64, flip_rate: f64) -> Result<Theorem3Solution> {
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    if !(0.0..0.5).contains(&flip_rate) {
        return Err(Error::invalid(format!("flip rate must lie in [0, 0.5), got {flip_rate}")));
    }
    let shift = 1.0 / (2.0 + delta);
    Ok(Theorem3Solution { plus: 0.5 - shift, minus: 0.5 + shift, risk: flip_rate * (0.5 - shift) })
}

pub fn theorem3_solutions(spec: &GaussianFeatureSpec) -> Result<Theorem3Solution> {
    theorem3_from_delta(theorem3_delta(spec)?, spec.flip_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Theorem3Simulation {
    /// No label is flipped, so there is nothing to fit.
    Vacuous,
    Solved(Theorem3Estimate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem3Estimate {
    /// Closed-form minimizers of the sampled objective.
    pub plus: f64,
    pub minus: f64,
    /// Sampling standard error of each minimizer over its noisy group.
    pub plus_std_error: f64,
    pub minus_std_error: f64,
    /// Golden-section minimizers of the same objective on [-1, 2].
    pub plus_golden: f64,
    pub minus_golden: f64,
    /// Normalizers at the fixed point.
    pub m_sl: f64,
    pub m_ssl: f64,
    /// Clean class 1, clean class 0, flipped to 1, flipped to 0.
    pub group_sizes: [usize; 4],
}

#[derive(Debug, Clone)]
struct Group {
    n: usize,
    sum: Vec<f64>,
    sq: f64,
    /// Kept only for the noisy groups.
    samples: Vec<f64>,
}

impl Group {
    fn new(p: usize) -> Self {
        Self { n: 0, sum: vec![0.0; p], sq: 0.0, samples: Vec::new() }
    }

    fn push(&mut self, t: &[f64], keep: bool) {
        self.n += 1;
        for (s, v) in self.sum.iter_mut().zip(t) {
            *s += v;
        }
        self.sq += t.iter().map(|v| v * v).sum::<f64>();
        if keep {
            self.samples.extend_from_slice(t);
        }
    }

    fn merge(&mut self, other: Group) {
        self.n += other.n;
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s += v;
        }
        self.sq += other.sq;
        self.samples.extend(other.samples);
    }

    /// Sum of `||a - b||^2` over all pairs from `self x other`.
    fn cross(&self, other: &Group) -> f64 {
        let dot: f64 = self.sum.iter().zip(&other.sum).map(|(a, b)| a * b).sum();
        other.n as f64 * self.sq + self.n as f64 * other.sq - 2.0 * dot
    }

    /// Sum of `||a - t||^2` over `a` in the group.
    fn to_point(&self, t: &[f64]) -> f64 {
        let dot: f64 = self.sum.iter().zip(t).map(|(a, b)| a * b).sum();
        let tt: f64 = t.iter().map(|v| v * v).sum();
        self.sq - 2.0 * dot + self.n as f64 * tt
    }
}

struct Shard {
    clean1: Group,
    clean0: Group,
    plus: Group,
    minus: Group,
}

fn run_shard(spec: &GaussianFeatureSpec, l: &Array2<f64>, seed: u64, per_class: usize) -> Shard {
    let p = spec.dim();
    let mut rng = seeded(seed);
    let mut shard = Shard { clean1: Group::new(p), clean0: Group::new(p), plus: Group::new(p), minus: Group::new(p) };
    let (mut z, mut t) = (vec![0.0; p], vec![0.0; p]);
    for _ in 0..per_class {
        draw_into(&mut rng, spec.mu1.view(), l, &mut z, &mut t);
        if rng.random_range(0.0..1.0) < spec.flip_rate {
            shard.minus.push(&t, true);
        } else {
            shard.clean1.push(&t, false);
        }
        draw_into(&mut rng, spec.mu2.view(), l, &mut z, &mut t);
        if rng.random_range(0.0..1.0) < spec.flip_rate {
            shard.plus.push(&t, true);
        } else {
            shard.clean0.push(&t, false);
        }
    }
    shard
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-10 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Monte-Carlo oracle for the mislabeled-group predictions that minimize
/// the representation regularizer.
///
/// Clean samples predict their own label, each mislabeled group shares one
/// scalar prediction, and the objective is the mean over clean x mislabeled
/// pairs of `(|dp| / m_sl - ||dt||^2 / m_ssl)^2`. The normalizers are the
/// means of `|dp|` and `||dt||^2` over the same pairs. For fixed normalizers
/// the objective is quadratic in each scalar and is solved in closed form;
/// the SL normalizer is then updated and the solve repeated to a fixed point.
///
/// Sampling is split over `shards` independently seeded shards, combined in
/// shard order, so the result depends on `(seed, shards)` only.
pub fn simulate_theorem3(spec: &GaussianFeatureSpec, seed: u64, shards: usize) -> Result<Theorem3Simulation> {
    spec.validate()?;
    if shards == 0 {
        return Err(Error::invalid("need at least one shard"));
    }
    if spec.flip_rate == 0.0 {
        return Ok(Theorem3Simulation::Vacuous);
    }
    let l = psd_factor(&spec.cov)?;
    let p = spec.dim();
    let parts: Vec<Shard> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let per_class = spec.n_mc / shards + usize::from(s < spec.n_mc % shards);
            run_shard(spec, &l, derive_seed(seed, SHARD_STREAM, s as u64), per_class)
        })
        .collect();
    let mut total = Shard { clean1: Group::new(p), clean0: Group::new(p), plus: Group::new(p), minus: Group::new(p) };
    for part in parts {
        total.clean1.merge(part.clean1);
        total.clean0.merge(part.clean0);
        total.plus.merge(part.plus);
        total.minus.merge(part.minus);
    }
    let Shard { clean1, clean0, plus, minus } = total;
    let sizes = [clean1.n, clean0.n, plus.n, minus.n];
    if plus.n == 0 || minus.n == 0 {
        return Err(Error::Numerical(format!("a mislabeled group is empty (sizes {sizes:?}); increase n_mc")));
    }
    if clean1.n == 0 || clean0.n == 0 {
        return Err(Error::Numerical(format!("a clean group is empty (sizes {sizes:?}); increase n_mc")));
    }

    let (n1, n0) = (clean1.n as f64, clean0.n as f64);
    let nt = n1 + n0;
    let (np, nm) = (plus.n as f64, minus.n as f64);
    let pairs = nt * (np + nm);
    let cross = [
        (clean1.cross(&plus), clean0.cross(&plus)),
        (clean1.cross(&minus), clean0.cross(&minus)),
    ];
    let m_ssl = (cross[0].0 + cross[0].1 + cross[1].0 + cross[1].1) / pairs;
    if !(m_ssl > 0.0) {
        return Err(Error::Numerical("all sampled features coincide".into()));
    }
    let m_sl_at = |a: f64, b: f64| (n1 * (np * (1.0 - a).abs() + nm * (1.0 - b).abs()) + n0 * (np * a.abs() + nm * b.abs())) / pairs;
    let solve = |m_sl: f64, group: usize, ng: f64| {
        let (s1, s0) = cross[group];
        (n1 * ng - m_sl / m_ssl * (s1 - s0)) / (nt * ng)
    };

    let (mut a, mut b) = (0.5, 0.5);
    let mut m_sl = m_sl_at(a, b);
    let mut converged = false;
    for _ in 0..500 {
        a = solve(m_sl, 0, np);
        b = solve(m_sl, 1, nm);
        let next = m_sl_at(a, b);
        let done = (next - m_sl).abs() <= 1e-14 * m_sl.max(1.0);
        m_sl = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged || !(m_sl > 0.0) {
        return Err(Error::Numerical("normalizer fixed point did not converge".into()));
    }
    a = solve(m_sl, 0, np);
    b = solve(m_sl, 1, nm);

    let objective = |g: f64, group: usize, ng: f64| {
        let (s1, s0) = cross[group];
        let (u1, u0) = ((1.0 - g).abs() / m_sl, g.abs() / m_sl);
        n1 * ng * u1 * u1 - 2.0 * u1 * s1 / m_ssl + n0 * ng * u0 * u0 - 2.0 * u0 * s0 / m_ssl
    };
    let plus_golden = golden_section(|g| objective(g, 0, np), -1.0, 2.0);
    let minus_golden = golden_section(|g| objective(g, 1, nm), -1.0, 2.0);

    let std_error = |g: &Group| {
        let per: Vec<f64> = g
            .samples
            .chunks_exact(p)
            .map(|t| (n1 - m_sl / m_ssl * (clean1.to_point(t) - clean0.to_point(t))) / nt)
            .collect();
        let n = per.len() as f64;
        if per.len() < 2 {
            return f64::INFINITY;
        }
        let mean = per.iter().sum::<f64>() / n;
        let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };

    Ok(Theorem3Simulation::Solved(Theorem3Estimate {
        plus: a,
        minus: b,
        plus_std_error: std_error(&plus),
        minus_std_error: std_error(&minus),
        plus_golden,
        minus_golden,
        m_sl,
        m_ssl,
        group_sizes: sizes,
    }))
}
