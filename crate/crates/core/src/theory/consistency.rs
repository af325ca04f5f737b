use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::{symmetric_transition, TransitionMatrix};
use crate::rng::seeded;

/// Slope and intercept of the affine map from clean to noisy 0-1 risk under
/// symmetric noise, as stated for the consistency relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Set when `gamma1 <= 0`, i.e. `epsilon >= (K-1)/K`.
    pub degenerate: bool,
}

pub fn consistency_constants(k: usize, epsilon: f64) -> Result<ConsistencyConstants> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("noise rate must lie in [0, 1], got {epsilon}")));
    }
    let km1 = (k - 1) as f64;
    let gamma1 = 1.0 - epsilon * k as f64 / km1;
    Ok(ConsistencyConstants { gamma1, gamma2: epsilon / km1, degenerate: gamma1 <= 1e-12 })
}

/// A finite joint distribution over (X, Y) with a per-point transition
/// matrix and a fixed classifier, small enough to enumerate exactly.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    joint: Array2<f64>,
    transitions: Vec<TransitionMatrix>,
    predictions: Vec<usize>,
}

/// Both sides of the decoupled noisy-risk identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecouplingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub t_min: f64,
}

impl DiscreteProblem {
    /// `joint[[x, i]] = P(X = x, Y = i)`; one transition matrix and one
    /// predicted class per support point.
    pub fn new(joint: Array2<f64>, transitions: Vec<TransitionMatrix>, predictions: Vec<usize>) -> Result<Self> {
        let (n, k) = joint.dim();
        if n == 0 || k < 2 {
            return Err(Error::invalid(format!("joint table must be non-empty with >= 2 classes, got {n}x{k}")));
        }
        if joint.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("joint probabilities must be finite and non-negative"));
        }
        let total: f64 = joint.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("joint probabilities sum to {total}, expected 1")));
        }
        if transitions.len() != n || predictions.len() != n {
            return Err(Error::shape(format!(
                "{n} support points but {} transition matrices and {} predictions",
                transitions.len(),
                predictions.len()
            )));
        }
        if let Some(t) = transitions.iter().find(|t| t.num_classes() != k) {
            return Err(Error::shape(format!("transition matrix has {} classes, joint has {k}", t.num_classes())));
        }
        if let Some(&p) = predictions.iter().find(|&&p| p >= k) {
            return Err(Error::invalid(format!("prediction {p} out of range for {k} classes")));
        }
        Ok(Self { joint, transitions, predictions })
    }

    /// Same transition matrix at every support point.
    pub fn with_constant_noise(joint: Array2<f64>, t: &TransitionMatrix, predictions: Vec<usize>) -> Result<Self> {
        let n = joint.nrows();
        Self::new(joint, vec![t.clone(); n], predictions)
    }

    /// Random joint table, random row-stochastic `T(x)` and random classifier.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_points: usize, k: usize) -> Result<Self> {
        let joint = normalized(Array2::from_shape_fn((n_points, k), |_| rng.random_range(0.01..1.0)));
        let transitions = (0..n_points)
            .map(|_| {
                let mut t = Array2::from_shape_fn((k, k), |_| rng.random_range(0.0..1.0));
                for mut row in t.rows_mut() {
                    let s = row.sum();
                    row /= s;
                }
                TransitionMatrix::new(t)
            })
            .collect::<Result<Vec<_>>>()?;
        let predictions = (0..n_points).map(|_| rng.random_range(0..k)).collect();
        Self::new(joint, transitions, predictions)
    }

    /// Random joint table and classifier under symmetric noise of rate `epsilon`.
    pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, n_points: usize, k: usize, epsilon: f64) -> Result<Self> {
        let joint = normalized(Array2::from_shape_fn((n_points, k), |_| rng.random_range(0.01..1.0)));
        let predictions = (0..n_points).map(|_| rng.random_range(0..k)).collect();
        Self::with_constant_noise(joint, &symmetric_transition(k, epsilon)?, predictions)
    }

    pub fn num_points(&self) -> usize {
        self.joint.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.joint.ncols()
    }

    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    pub fn with_predictions(&self, predictions: Vec<usize>) -> Result<Self> {
        Self::new(self.joint.clone(), self.transitions.clone(), predictions)
    }

    fn loss(&self, x: usize, label: usize) -> f64 {
        if self.predictions[x] == label { 0.0 } else { 1.0 }
    }

    /// `P(C(X) != Y)`.
    pub fn clean_risk(&self) -> f64 {
        let mut r = 0.0;
        for ((x, i), p) in self.joint.indexed_iter() {
            r += p * self.loss(x, i);
        }
        r
    }

    /// `P(C(X) != noisy Y)`, enumerated directly from the joint and `T(x)`.
    pub fn noisy_risk(&self) -> f64 {
        let k = self.num_classes();
        let mut r = 0.0;
        for ((x, i), p) in self.joint.indexed_iter() {
            for j in 0..k {
                r += p * self.transitions[x].get(i, j) * self.loss(x, j);
            }
        }
        r
    }

    /// Samples `n` triples (x, clean, noisy) and returns the empirical noisy
    /// 0-1 risk.
    pub fn monte_carlo_noisy_risk(&self, n: usize, seed: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("need at least one sample"));
        }
        let k = self.num_classes();
        let cells: Vec<f64> = self.joint.iter().copied().collect();
        let mut rng = seeded(seed);
        let mut errors = 0usize;
        for _ in 0..n {
            let cell = sample_index(&cells, rng.random_range(0.0..1.0));
            let (x, i) = (cell / k, cell % k);
            let row: Vec<f64> = (0..k).map(|j| self.transitions[x].get(i, j)).collect();
            let j = sample_index(&row, rng.random_range(0.0..1.0));
            if self.predictions[x] != j {
                errors += 1;
            }
        }
        Ok(errors as f64 / n as f64)
    }
}

fn normalized(mut a: Array2<f64>) -> Array2<f64> {
    let s = a.sum();
    a /= s;
    a
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return idx;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Evaluates the noisy 0-1 risk directly (left side) and through its
/// decomposition into `t_min` times the clean risk plus the `U`-weighted
/// term (right side), where `t_min` is the smallest diagonal entry of any
/// `T(x)`, `U_ij = T_ij` off the diagonal and `U_jj = T_jj - t_min`.
pub fn verify_noise_decoupling(problem: &DiscreteProblem) -> DecouplingCheck {
    let k = problem.num_classes();
    let t_min = problem
        .transitions
        .iter()
        .flat_map(|t| (0..k).map(move |i| t.get(i, i)))
        .fold(f64::INFINITY, f64::min);
    let lhs = problem.noisy_risk();

    let mut u_term = 0.0;
    for j in 0..k {
        for i in 0..k {
            for x in 0..problem.num_points() {
                let t = problem.transitions[x].get(i, j);
                let u = if i == j { t - t_min } else { t };
                u_term += problem.joint[[x, i]] * u * problem.loss(x, j);
            }
        }
    }
    let rhs = t_min * problem.clean_risk() + u_term;
    DecouplingCheck { lhs, rhs, residual: (lhs - rhs).abs(), t_min }
}

/// Measures slope and intercept of noisy risk against clean risk for a
/// problem whose transition matrix does not depend on x, by exact evaluation
/// at two classifiers with well separated clean risks (the problem's own
/// classifier and the constant ones).
pub fn measure_affine_constants(problem: &DiscreteProblem) -> Result<(f64, f64)> {
    let first = &problem.transitions[0];
    if problem.transitions.iter().any(|t| t.max_abs_diff(first) != 0.0) {
        return Err(Error::invalid("affine constants need a transition matrix that is constant in x"));
    }
    let n = problem.num_points();
    let mut candidates = vec![problem.clone()];
    for c in 0..problem.num_classes() {
        candidates.push(problem.with_predictions(vec![c; n])?);
    }
    let points: Vec<(f64, f64)> = candidates.iter().map(|p| (p.clean_risk(), p.noisy_risk())).collect();
    let mut best = (0, 0, 0.0);
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            let gap = (points[a].0 - points[b].0).abs();
            if gap > best.2 {
                best = (a, b, gap);
            }
        }
    }
    if best.2 < 1e-9 {
        return Err(Error::Numerical("all candidate classifiers have the same clean risk".into()));
    }
    let ((ra, na), (rb, nb)) = (points[best.0], points[best.1]);
    let slope = (na - nb) / (ra - rb);
    Ok((slope, na - slope * ra))
}
