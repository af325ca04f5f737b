use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use noisylab_core::data::{generate_gaussian_mixture, load_csv_dataset, Dataset};
use noisylab_core::noise::{
    balance_downsample_rate, downsample_balance, empirical_transition, optimal_downsample_rate, post_downsample_rates,
    BinaryNoiseRates, EmpiricalTransition,
};
use noisylab_core::rng::derive_seed;
use noisylab_core::theory::{
    approximation_bound, consistency_constants, corollary_beta_prime, crossover_beta, estimation_bound, simulate_theorem3,
    theorem3_from_delta, theorem3_solutions, Capacity, Crossover, GaussianFeatureSpec, NoiseKind, Theorem3Simulation,
    TheoryParams, Threshold,
};

use crate::config::KvConfig;
use crate::error::{CliError, Result};
use crate::experiment::{gaussian_spec_from_kv, NoiseConfig};
use crate::report::Report;
use crate::svg::{line_chart, Series};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Samples a Gaussian mixture (`n`, `means`, `variance`, `priors`) and
/// writes it as CSV.
pub fn gen_data(mut kv: KvConfig, seed: u64, path: &Path) -> Result<Dataset> {
    let spec = gaussian_spec_from_kv(&mut kv, 2000)?;
    kv.finish()?;
    let ds = generate_gaussian_mixture(&spec, seed)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    write_text(path, &String::from_utf8_lossy(&buf))?;
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct NoiseInjection {
    pub dataset: Dataset,
    pub empirical: EmpiricalTransition,
    pub flip_rate: f64,
}

impl NoiseInjection {
    pub fn report(&self) -> String {
        let mut out = format!("rows={}\nflip_rate={:.4}\nempirical transition (row = clean, column = noisy):\n", self.dataset.len(), self.flip_rate);
        let m = self.empirical.matrix.entries();
        for row in m.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        if !self.empirical.empty_rows.is_empty() {
            let _ = writeln!(out, "empty clean classes: {:?}", self.empirical.empty_rows);
        }
        out
    }
}

/// Adds a noisy-label column to a clean CSV, optionally balancing the noisy
/// classes afterwards.
pub fn inject_noise(input: &Path, noise: &NoiseConfig, seed: u64, downsample: bool, output: &Path) -> Result<NoiseInjection> {
    let clean = load_csv_dataset(input, false, None)?;
    let mut noisy = noise.apply(&clean, seed)?;
    if downsample {
        noisy = downsample_balance(&noisy, derive_seed(seed, 11, 0))?;
    }
    let labels = noisy.require_noisy()?;
    let empirical = empirical_transition(noisy.clean_labels(), labels, noisy.num_classes())?;
    let flips = noisy.clean_labels().iter().zip(labels).filter(|(a, b)| a != b).count();
    let mut buf = Vec::new();
    noisy.write_csv(&mut buf)?;
    write_text(output, &String::from_utf8_lossy(&buf))?;
    let flip_rate = flips as f64 / noisy.len() as f64;
    Ok(NoiseInjection { dataset: noisy, empirical, flip_rate })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TheoryQuery {
    Gamma { k: usize, eps: f64 },
    Bound { params: TheoryParams, kind: NoiseKind, bias: f64 },
    Approx { alpha: f64, nodes: f64 },
    Beta { c1: Capacity, c2: Capacity, n: f64, alpha: f64, k: usize },
    BetaPrime { composed: Capacity, alpha: f64, linear: Capacity, alpha_prime: f64, n: f64, k: usize },
    T3 { delta: f64, e: f64 },
}

fn crossover_report(c: Crossover) -> Report {
    let r = Report::new().num("beta", c.beta);
    match c.threshold {
        Threshold::Always => r.text("threshold", "always"),
        Threshold::Never => r.text("threshold", "never"),
        Threshold::From(t) => r.text("threshold", "from").num("eps_threshold", t),
    }
}

pub fn theory(q: &TheoryQuery) -> Result<Report> {
    Ok(match q {
        TheoryQuery::Gamma { k, eps } => {
            let c = consistency_constants(*k, *eps)?;
            Report::new().num("gamma1", c.gamma1).num("gamma2", c.gamma2).flag("degenerate", c.degenerate)
        }
        TheoryQuery::Bound { params, kind, bias } => {
            Report::new().num("estimation_bound", estimation_bound(params, *kind, *bias)?).text("noise_kind", kind.to_string())
        }
        TheoryQuery::Approx { alpha, nodes } => {
            let p = TheoryParams { alpha_star: *alpha, nodes: *nodes, ..Default::default() };
            Report::new().num("approximation_bound", approximation_bound(&p)?)
        }
        TheoryQuery::Beta { c1, c2, n, alpha, k } => crossover_report(crossover_beta(*c1, *c2, *n, *alpha, *k)?),
        TheoryQuery::BetaPrime { composed, alpha, linear, alpha_prime, n, k } => {
            crossover_report(corollary_beta_prime(*composed, *alpha, *linear, *alpha_prime, *n, *k)?)
        }
        TheoryQuery::T3 { delta, e } => {
            let s = theorem3_from_delta(*delta, *e)?;
            Report::new().num("exp_gf_plus", s.plus).num("exp_gf_minus", s.minus).num("risk", s.risk)
        }
    })
}

pub const T3_HEADER: &str = "delta,e,closed_plus,closed_minus,closed_risk,mc_plus,mc_minus,se_plus,se_minus,diff_plus,diff_minus,status";

/// The (delta, e) grid {0.5, 2, 8} x {0.1, 0.2, 0.4}.
pub fn default_t3_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for d in [0.5, 2.0, 8.0] {
        for e in [0.1, 0.2, 0.4] {
            g.push((d, e));
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct T3Row {
    pub delta: f64,
    pub e: f64,
    pub closed: (f64, f64, f64),
    /// `None` in the vacuous case.
    pub mc: Option<(f64, f64)>,
    pub std_error: (f64, f64),
}

impl T3Row {
    pub fn max_diff(&self) -> f64 {
        self.mc.map_or(0.0, |(p, m)| (p - self.closed.0).abs().max((m - self.closed.1).abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct T3Study {
    pub rows: Vec<T3Row>,
    pub csv: String,
}

impl T3Study {
    pub fn max_diff(&self) -> f64 {
        self.rows.iter().map(T3Row::max_diff).fold(0.0, f64::max)
    }

    pub fn report(&self) -> String {
        let mut out = String::from("delta      e  closed(+,-)        mc(+,-)            |diff|\n");
        for r in &self.rows {
            match r.mc {
                None => {
                    let _ = writeln!(out, "{:5.2} {:6.3}  vacuous: no label is flipped, nothing to fit", r.delta, r.e);
                }
                Some((p, m)) => {
                    let _ = writeln!(
                        out,
                        "{:5.2} {:6.3}  ({:.4}, {:.4})   ({:.4}, {:.4})   {:.4}",
                        r.delta, r.e, r.closed.0, r.closed.1, p, m, r.max_diff()
                    );
                }
            }
        }
        out
    }
}

/// Compares the closed-form solutions with the Monte-Carlo oracle at each
/// `(delta, e)` on the planar isotropic model. Point `i` uses seed
/// `derive_seed(seed, 40, i)`.
pub fn simulate_t3(points: &[(f64, f64)], n_mc: usize, shards: usize, seed: u64) -> Result<T3Study> {
    let mut csv = format!("{T3_HEADER}\n");
    let mut rows = Vec::new();
    for (i, &(delta, e)) in points.iter().enumerate() {
        let spec = GaussianFeatureSpec::planar(delta, e, n_mc);
        let closed = theorem3_solutions(&spec)?;
        let row = match simulate_theorem3(&spec, derive_seed(seed, 40, i as u64), shards)? {
            Theorem3Simulation::Vacuous => {
                T3Row { delta, e, closed: (closed.plus, closed.minus, closed.risk), mc: None, std_error: (0.0, 0.0) }
            }
            Theorem3Simulation::Solved(est) => T3Row {
                delta,
                e,
                closed: (closed.plus, closed.minus, closed.risk),
                mc: Some((est.plus, est.minus)),
                std_error: (est.plus_std_error, est.minus_std_error),
            },
        };
        match row.mc {
            None => {
                let _ = writeln!(csv, "{delta},{e},{},{},{},,,,,,,vacuous", row.closed.0, row.closed.1, row.closed.2);
            }
            Some((p, m)) => {
                let _ = writeln!(
                    csv,
                    "{delta},{e},{},{},{},{p},{m},{},{},{},{},ok",
                    row.closed.0,
                    row.closed.1,
                    row.closed.2,
                    row.std_error.0,
                    row.std_error.1,
                    (p - row.closed.0).abs(),
                    (m - row.closed.1).abs()
                );
            }
        }
        rows.push(row);
    }
    Ok(T3Study { rows, csv })
}

pub const DOWNSAMPLE_HEADER: &str =
    "e_plus,e_minus,r_balance,r_optimal,balance_e_plus,balance_e_minus,optimal_e_plus,optimal_e_minus,gap_before,gap_balance,gap_optimal";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsampleRow {
    pub rates: BinaryNoiseRates,
    pub r_balance: f64,
    pub r_optimal: f64,
    pub balance_post: (f64, f64),
    pub optimal_post: (f64, f64),
}

impl DownsampleRow {
    pub fn gap_before(&self) -> f64 {
        self.rates.gap()
    }

    pub fn gap_balance(&self) -> f64 {
        self.balance_post.0 - self.balance_post.1
    }

    pub fn gap_optimal(&self) -> f64 {
        self.optimal_post.0 - self.optimal_post.1
    }
}

/// Rates `0.5 (i + 1) / (steps + 1)` for `i < steps`, every pair with
/// `e_plus >= e_minus`.
pub fn downsample_grid(steps: usize) -> Result<Vec<DownsampleRow>> {
    if steps == 0 {
        return Err(CliError::usage("steps must be >= 1"));
    }
    let vals: Vec<f64> = (0..steps).map(|i| 0.5 * (i + 1) as f64 / (steps + 1) as f64).collect();
    let mut rows = Vec::new();
    for &e_plus in &vals {
        for &e_minus in vals.iter().filter(|&&v| v <= e_plus) {
            let rates = BinaryNoiseRates::new(e_plus, e_minus)?;
            let r_balance = balance_downsample_rate(&rates)?.rate;
            let r_optimal = optimal_downsample_rate(&rates)?.rate;
            rows.push(DownsampleRow {
                rates,
                r_balance,
                r_optimal,
                balance_post: post_downsample_rates(&rates, r_balance)?,
                optimal_post: post_downsample_rates(&rates, r_optimal)?,
            });
        }
    }
    Ok(rows)
}

pub fn downsample_csv(rows: &[DownsampleRow]) -> String {
    let mut out = format!("{DOWNSAMPLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.rates.e_plus,
            r.rates.e_minus,
            r.r_balance,
            r.r_optimal,
            r.balance_post.0,
            r.balance_post.1,
            r.optimal_post.0,
            r.optimal_post.1,
            r.gap_before(),
            r.gap_balance(),
            r.gap_optimal()
        );
    }
    out
}

/// Gap before and after balancing against `e_plus`, one pair of curves per
/// `e_minus` among the lowest, middle and highest grid values.
pub fn downsample_svg(rows: &[DownsampleRow]) -> String {
    let mut minus: Vec<f64> = rows.iter().map(|r| r.rates.e_minus).collect();
    minus.sort_by(f64::total_cmp);
    minus.dedup();
    let picks: Vec<f64> = match minus.len() {
        0 => Vec::new(),
        n => {
            let mut p = vec![minus[0], minus[n / 2], minus[n - 1]];
            p.dedup();
            p
        }
    };
    let mut series = Vec::new();
    for em in picks {
        let sel: Vec<&DownsampleRow> = rows.iter().filter(|r| r.rates.e_minus == em).collect();
        series.push(Series { name: format!("before, e-={em:.3}"), points: sel.iter().map(|r| (r.rates.e_plus, r.gap_before())).collect() });
        series.push(Series { name: format!("balanced, e-={em:.3}"), points: sel.iter().map(|r| (r.rates.e_plus, r.gap_balance())).collect() });
    }
    line_chart("Noise-rate gap before and after down-sampling", "e+", "e+ - e-", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_golden_values() {
        let r = theory(&TheoryQuery::Gamma { k: 10, eps: 0.4 }).unwrap();
        assert!(r.to_text().contains("gamma1=0.5556\ngamma2=0.0444\n"));
        let r = theory(&TheoryQuery::Beta {
            c1: Capacity::new(100.0, 100.0),
            c2: Capacity::new(10.0, 10.0),
            n: 1e4,
            alpha: 1.0,
            k: 10,
        })
        .unwrap();
        assert!(r.to_text().contains("beta=8.7907\nthreshold=always"), "{}", r.to_text());
        let r = theory(&TheoryQuery::T3 { delta: 2.0, e: 0.4 }).unwrap();
        assert!(r.to_text().contains("risk=0.1000"));
        let r = theory(&TheoryQuery::Bound { params: TheoryParams::default(), kind: NoiseKind::Symmetric, bias: 0.0 }).unwrap();
        assert!(r.to_text().contains("estimation_bound=1.0379"));
        let r = theory(&TheoryQuery::Approx { alpha: 1.0, nodes: 100.0 }).unwrap();
        assert!(r.to_text().contains("approximation_bound=0.1000"));
    }

    #[test]
    fn theory_reports_threshold_when_beta_below_one() {
        let r = theory(&TheoryQuery::Beta {
            c1: Capacity::new(20.0, 1e4),
            c2: Capacity::new(10.0, 1.0),
            n: 1e6,
            alpha: 1.0,
            k: 10,
        })
        .unwrap();
        let text = r.to_text();
        assert!(text.contains("threshold=from\neps_threshold="), "{text}");
    }

    #[test]
    fn t3_vacuous_and_deterministic() {
        let s = simulate_t3(&[(2.0, 0.0)], 1000, 2, 1).unwrap();
        assert!(s.rows[0].mc.is_none());
        assert!(s.csv.lines().nth(1).unwrap().ends_with("vacuous"));
        assert!(s.report().contains("vacuous"));
        let a = simulate_t3(&[(2.0, 0.4)], 20_000, 2, 5).unwrap();
        let b = simulate_t3(&[(2.0, 0.4)], 20_000, 2, 5).unwrap();
        assert_eq!(a.csv, b.csv);
        assert!(a.max_diff() < 0.03);
    }

    #[test]
    fn downsample_rows_satisfy_the_propositions() {
        let rows = downsample_grid(20).unwrap();
        assert_eq!(rows.len(), 210);
        for r in &rows {
            assert!((r.optimal_post.0 - r.optimal_post.1).abs() < 1e-12);
            if r.rates.e_plus > r.rates.e_minus {
                assert!(0.0 < r.gap_balance() && r.gap_balance() < r.gap_before());
            } else {
                assert_eq!(r.gap_before(), 0.0);
                assert!(r.gap_balance().abs() < 1e-15);
            }
        }
        let csv = downsample_csv(&rows);
        assert_eq!(csv.lines().count(), 211);
        assert!(downsample_svg(&rows).contains("<!-- series before"));
    }

    #[test]
    fn gen_and_inject_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        gen_data(KvConfig::parse("n=100").unwrap(), 1, &data).unwrap();
        let text = fs::read_to_string(&data).unwrap();
        assert_eq!(text.lines().count(), 101);
        gen_data(KvConfig::parse("n=100").unwrap(), 1, &dir.path().join("e.csv")).unwrap();
        assert_eq!(text, fs::read_to_string(dir.path().join("e.csv")).unwrap());
        assert!(gen_data(KvConfig::parse("priors=0.2,0.2").unwrap(), 1, &data).is_err());

        let noisy = dir.path().join("n.csv");
        let inj = inject_noise(&data, &NoiseConfig::Symmetric(0.0), 2, false, &noisy).unwrap();
        assert_eq!(inj.dataset.noisy_labels().unwrap(), inj.dataset.clean_labels());
        assert_eq!(inj.flip_rate, 0.0);
        assert!(inj.report().contains("1.0000 0.0000"));
    }
}
