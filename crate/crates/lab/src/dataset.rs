//! Dataset sources: seeded Gaussian blobs, IDX file pairs and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use prunelab_core::rng::{self, Stream};
use prunelab_core::Dataset;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// `classes` Gaussian clusters in `dim` dimensions with unit noise;
    /// cluster centres are drawn with standard deviation `spread`.
    SyntheticBlobs {
        classes: usize,
        dim: usize,
        samples: usize,
        seed: u64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// Image/label IDX pairs for the training and test split.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
    /// Header row required; the `label` column holds integer classes.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
}

fn default_spread() -> f64 {
    1.0
}

impl DataSource {
    pub fn blobs(classes: usize, dim: usize, samples: usize, seed: u64) -> Self {
        DataSource::SyntheticBlobs {
            classes,
            dim,
            samples,
            seed,
            spread: default_spread(),
        }
    }

    /// Resolve relative file paths against `base`.
    pub fn relative_to(&self, base: &Path) -> Self {
        let fix = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        match self {
            DataSource::SyntheticBlobs { .. } => self.clone(),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => DataSource::Idx {
                train_images: fix(train_images),
                train_labels: fix(train_labels),
                test_images: fix(test_images),
                test_labels: fix(test_labels),
                classes: *classes,
            },
            DataSource::Csv { path, classes } => DataSource::Csv {
                path: fix(path),
                classes: *classes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_dataset(source: &DataSource) -> Result<Split> {
    match source {
        DataSource::SyntheticBlobs {
            classes,
            dim,
            samples,
            seed,
            spread,
        } => synthetic_blobs(*classes, *dim, *samples, *seed, *spread),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
        } => {
            let (xa, ya, shape_a) = crate::idx::read_pair(train_images, train_labels)?;
            let (xb, yb, shape_b) = crate::idx::read_pair(test_images, test_labels)?;
            if shape_a != shape_b {
                return Err(LabError::Schema(format!(
                    "train images are {shape_a:?} but test images are {shape_b:?}"
                )));
            }
            let classes = class_count(&ya, &yb, *classes)?;
            normalized_split(xa, ya, xb, yb, classes, shape_a)
        }
        DataSource::Csv { path, classes } => {
            let (x, y, dim) = read_csv(path)?;
            let n_test = y.len() / 5;
            let n_train = y.len() - n_test;
            let (xa, xb) = x.split_at(n_train * dim);
            let (ya, yb) = y.split_at(n_train);
            let classes = class_count(ya, yb, *classes)?;
            normalized_split(
                xa.to_vec(),
                ya.to_vec(),
                xb.to_vec(),
                yb.to_vec(),
                classes,
                vec![dim],
            )
        }
    }
}

fn class_count(a: &[usize], b: &[usize], declared: Option<usize>) -> Result<usize> {
    let max = a
        .iter()
        .chain(b)
        .copied()
        .max()
        .ok_or_else(|| LabError::Schema("dataset has no samples".into()))?;
    match declared {
        Some(c) if max >= c => Err(LabError::Schema(format!(
            "label {max} out of range for {c} classes"
        ))),
        Some(c) => Ok(c),
        None => Ok(max + 1),
    }
}

/// Train/test split with every feature standardised by training statistics.
fn normalized_split(
    mut xa: Vec<f64>,
    ya: Vec<usize>,
    mut xb: Vec<f64>,
    yb: Vec<usize>,
    classes: usize,
    shape: Vec<usize>,
) -> Result<Split> {
    let dim: usize = shape.iter().product();
    if ya.is_empty() {
        return Err(LabError::Schema("training split is empty".into()));
    }
    let n = ya.len() as f64;
    for j in 0..dim {
        let mean = xa.iter().skip(j).step_by(dim).sum::<f64>() / n;
        let var = xa
            .iter()
            .skip(j)
            .step_by(dim)
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in xa
            .iter_mut()
            .skip(j)
            .step_by(dim)
            .chain(xb.iter_mut().skip(j).step_by(dim))
        {
            *v = (*v - mean) / sd;
        }
    }
    Ok(Split {
        train: Dataset::new(xa, ya, classes, shape.clone())?,
        test: Dataset::new(xb, yb, classes, shape)?,
    })
}

/// Blobs are balanced across classes and shuffled before the 80/20 split.
pub fn synthetic_blobs(
    classes: usize,
    dim: usize,
    samples: usize,
    seed: u64,
    spread: f64,
) -> Result<Split> {
    if classes == 0 || dim == 0 || samples < 5 {
        return Err(LabError::Config(format!(
            "synthetic blobs need classes, dim > 0 and at least 5 samples (got {classes}, {dim}, {samples})"
        )));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(LabError::Config(format!(
            "blob spread must be positive, got {spread}"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Dataset);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for &i in &order {
        let y = i % classes;
        features.extend(
            centres[y]
                .iter()
                .map(|c| c + rng.sample::<f64, _>(StandardNormal)),
        );
        labels.push(y);
    }
    let n_test = samples / 5;
    let n_train = samples - n_test;
    let test_x = features.split_off(n_train * dim);
    let test_y = labels.split_off(n_train);
    Ok(Split {
        train: Dataset::new(features, labels, classes, vec![dim])?,
        test: Dataset::new(test_x, test_y, classes, vec![dim])?,
    })
}

fn read_csv(path: &Path) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let file = path.display().to_string();
    let bytes = fs::read(path).map_err(LabError::io(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let parse_err = |offset: u64, msg: String| LabError::Parse {
        file: file.clone(),
        offset,
        msg,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(0, e.to_string()))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| LabError::Schema(format!("{file}: no `label` column")))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(LabError::Schema(format!("{file}: no feature columns")));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            parse_err(offset, e.to_string())
        })?;
        let offset = record.position().map_or(0, |p| p.byte());
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if j == label_col {
                let label = field.parse::<usize>().map_err(|_| {
                    LabError::Schema(format!(
                        "{file}: byte {offset}: label {field:?} is not a class index"
                    ))
                })?;
                y.push(label);
            } else {
                let v = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(offset, format!("bad number {field:?}")))?;
                x.push(v);
            }
        }
    }
    if y.len() < 2 {
        return Err(LabError::Schema(format!("{file}: need at least 2 rows")));
    }
    Ok((x, y, dim))
}
