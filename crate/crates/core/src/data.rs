//! Datasets: synthetic Gaussian mixtures, CSV ingestion, splitting and batching.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Features with clean labels and, once noise has been injected, noisy labels.
///
/// Immutable after construction; every transformation returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    clean_labels: Vec<usize>,
    noisy_labels: Option<Vec<usize>>,
    num_classes: usize,
    /// Free-form provenance (noise kind, realized flip rate, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        clean_labels: Vec<usize>,
        noisy_labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if features.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one feature column"));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if clean_labels.len() != n {
            return Err(Error::shape(format!(
                "{} clean labels for {n} feature rows",
                clean_labels.len()
            )));
        }
        check_labels("clean", &clean_labels, num_classes)?;
        if let Some(noisy) = &noisy_labels {
            if noisy.len() != n {
                return Err(Error::shape(format!(
                    "{} noisy labels for {n} feature rows",
                    noisy.len()
                )));
            }
            check_labels("noisy", noisy, num_classes)?;
        }
        Ok(Self {
            features,
            clean_labels,
            noisy_labels,
            num_classes,
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref()
    }

    pub fn require_noisy(&self) -> Result<&[usize]> {
        self.noisy_labels()
            .ok_or_else(|| Error::invalid("dataset has no noisy_label column"))
    }

    /// Returns a copy carrying the given noisy labels (metadata is kept).
    pub fn with_noisy_labels(&self, noisy: Vec<usize>) -> Result<Self> {
        let mut out = Dataset::new(
            self.features.clone(),
            self.clean_labels.clone(),
            Some(noisy),
            self.num_classes,
        )?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        let features = self.features.select(Axis(0), indices);
        let clean = indices.iter().map(|&i| self.clean_labels[i]).collect();
        let noisy = self
            .noisy_labels
            .as_ref()
            .map(|nl| indices.iter().map(|&i| nl[i]).collect());
        let mut out = Dataset::new(features, clean, noisy, self.num_classes)?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Writes the dataset in the `f0,...,f{D-1},clean_label[,noisy_label]` layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("clean_label".into());
        if self.noisy_labels.is_some() {
            header.push("noisy_label".into());
        }
        w.write_record(&header).map_err(csv_io)?;
        let mut record = Vec::with_capacity(header.len());
        for (n, row) in self.features.rows().into_iter().enumerate() {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(self.clean_labels[n].to_string());
            if let Some(noisy) = &self.noisy_labels {
                record.push(noisy[n].to_string());
            }
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

fn check_labels(which: &str, labels: &[usize], k: usize) -> Result<()> {
    if let Some((n, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::invalid(format!(
            "{which} label {bad} at row {n} is not below num_classes {k}"
        )));
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::io("<csv writer>", std::io::Error::other(e))
}

/// Isotropic Gaussian class-conditional mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    /// One mean per class, `K x D`.
    pub means: Array2<f64>,
    /// Shared isotropic variance sigma^2.
    pub shared_cov_scale: f64,
    pub class_priors: Vec<f64>,
    pub n_samples: usize,
}

impl GaussianMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.means.dim();
        if k < 2 {
            return Err(Error::invalid(format!("means must have at least 2 rows, got {k}")));
        }
        if d == 0 {
            return Err(Error::invalid("means must have at least one column"));
        }
        if self.class_priors.len() != k {
            return Err(Error::invalid(format!(
                "class_priors has {} entries for {k} classes",
                self.class_priors.len()
            )));
        }
        if self.class_priors.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("class_priors entries must be finite and >= 0"));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("class_priors must sum to 1, got {total}")));
        }
        if !(self.shared_cov_scale > 0.0) || !self.shared_cov_scale.is_finite() {
            return Err(Error::invalid(format!(
                "shared_cov_scale must be > 0, got {}",
                self.shared_cov_scale
            )));
        }
        if self.means.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        Ok(())
    }
}

pub fn generate_gaussian_mixture(spec: &GaussianMixtureSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (k, d) = spec.means.dim();
    let sigma = spec.shared_cov_scale.sqrt();
    let mut rng = seeded(seed);

    let class_dist = WeightedIndex::new(&spec.class_priors)
        .map_err(|e| Error::invalid(format!("class_priors: {e}")))?;

    let mut features = Array2::zeros((spec.n_samples, d));
    let mut labels = Vec::with_capacity(spec.n_samples);
    for mut row in features.rows_mut() {
        let class = class_dist.sample(&mut rng);
        for (j, x) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = spec.means[[class, j]] + sigma * z;
        }
        labels.push(class);
    }
    let mut ds = Dataset::new(features, labels, None, k)?;
    ds.metadata.insert("source".into(), "gaussian_mixture".into());
    ds.metadata.insert("seed".into(), seed.to_string());
    Ok(ds)
}

/// Reads a dataset CSV. `num_classes` overrides the inferred `1 + max label`.
pub fn load_csv_dataset(
    path: impl AsRef<Path>,
    has_noisy_column: bool,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_csv_dataset(text.as_bytes(), has_noisy_column, num_classes)
}

pub fn parse_csv_dataset<R: Read>(
    reader: R,
    has_noisy_column: bool,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let label_cols = if has_noisy_column { 2 } else { 1 };
    if cols.len() < label_cols + 1 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected at least {} columns, found {}", label_cols + 1, cols.len()),
        });
    }
    let d = cols.len() - label_cols;
    for (j, name) in cols[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {j} should be named f{j}, found {name:?}"),
            });
        }
    }
    if cols[d] != "clean_label" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected clean_label column, found {:?}", cols[d]),
        });
    }
    if has_noisy_column && cols[d + 1] != "noisy_label" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected noisy_label column, found {:?}", cols[d + 1]),
        });
    }

    let mut values = Vec::new();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", cols.len(), record.len()),
            });
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature f{j}: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite feature f{j}") });
            }
            values.push(v);
        }
        let parse_label = |field: &str, name: &str| -> Result<usize> {
            field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("{name} must be a non-negative integer, found {field:?}"),
            })
        };
        clean.push(parse_label(&record[d], "clean_label")?);
        if has_noisy_column {
            noisy.push(parse_label(&record[d + 1], "noisy_label")?);
        }
        lines.push(line);
    }
    if clean.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }

    let max_label = clean.iter().chain(noisy.iter()).copied().max().unwrap_or(0);
    let k = match num_classes {
        Some(k) => {
            let offending = clean
                .iter()
                .zip(&lines)
                .chain(noisy.iter().zip(&lines))
                .filter(|(&l, _)| l >= k)
                .map(|(&l, &line)| (line, l))
                .min();
            if let Some((line, l)) = offending {
                return Err(Error::Parse {
                    line,
                    message: format!("label {l} out of range for {k} classes"),
                });
            }
            k
        }
        None => (max_label + 1).max(2),
    };
    let n = clean.len();
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::shape(e.to_string()))?;
    Dataset::new(features, clean, has_noisy_column.then_some(noisy), k)
}

/// Shuffled disjoint `(train, test)` partition with `round(N * test_fraction)` test rows.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(dataset.len(), test_fraction, seed)?;
    Ok((dataset.select(&train_idx)?, dataset.select(&test_idx)?))
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction must lie in (0,1), got {test_fraction}")));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// One epoch of shuffled mini-batches. A trailing batch with fewer than two
/// rows is dropped because the pairwise losses need pairs.
pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    batch_indices(dataset.len(), batch_size, seed)
}

pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    Ok(idx
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}
