//! Labelled covariate sets: synthetic generation and CSV ingestion.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::Vector;
use crate::seed::{derive_seed, rng_from_seed, StreamTag};

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64, theta_star: Vec<f64> },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    labels: Vec<f64>,
    features: Vec<Vector>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(labels: Vec<f64>, features: Vec<Vector>, provenance: Provenance) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("no rows".into()));
        }
        if labels.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: features.len(),
            });
        }
        let d = features[0].len();
        for (row, (y, x)) in labels.iter().zip(&features).enumerate() {
            if *y != 1.0 && *y != -1.0 {
                return Err(Error::InvalidArgument(format!("row {row}: label {y} not in {{-1, 1}}")));
            }
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {row}: non-finite feature")));
            }
        }
        Ok(Dataset {
            labels,
            features,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[Vector] {
        &self.features
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Write in the format read by [`ingest_dataset`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (y, x) in self.labels.iter().zip(&self.features) {
            let mut rec = vec![format!("{}", *y as i64)];
            rec.extend(x.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Layout of synthetic covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticOptions {
    /// First coordinate fixed to 1, the others a unit-norm isotropic direction.
    pub intercept: bool,
    /// Multiplier applied to every covariate vector.
    pub feature_scale: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            intercept: true,
            feature_scale: 1.0,
        }
    }
}

fn unit_gaussian<R: Rng>(rng: &mut R, d: usize) -> Vector {
    loop {
        let g = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

/// Labels drawn from the random-effects logistic model at `θ*`.
pub fn synthesize_dataset(
    n: usize,
    d: usize,
    theta_star: &[f64],
    sigma2: f64,
    seed: u64,
) -> Result<Dataset> {
    synthesize_dataset_with(n, d, theta_star, sigma2, seed, SyntheticOptions::default())
}

pub fn synthesize_dataset_with(
    n: usize,
    d: usize,
    theta_star: &[f64],
    sigma2: f64,
    seed: u64,
    options: SyntheticOptions,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if theta_star.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: theta_star.len(),
        });
    }
    if !(sigma2 >= 0.0) || !(options.feature_scale > 0.0) {
        return Err(Error::InvalidArgument(
            "need sigma2 >= 0 and a positive feature scale".into(),
        ));
    }
    let theta = Vector::from_row_slice(theta_star);
    let sd = sigma2.sqrt();
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, 0, 0, i as u64, StreamTag::Synthetic));
        let mut x = if options.intercept {
            let mut x = Vector::zeros(d);
            x[0] = 1.0;
            if d > 1 {
                x.rows_mut(1, d - 1).copy_from(&unit_gaussian(&mut rng, d - 1));
            }
            x
        } else {
            unit_gaussian(&mut rng, d)
        };
        x *= options.feature_scale;
        let z = Vector::from_fn(d, |j, _| theta[j] + sd * rng.sample::<f64, _>(StandardNormal));
        let p = 1.0 / (1.0 + (-x.dot(&z)).exp());
        labels.push(if rng.random::<f64>() < p { 1.0 } else { -1.0 });
        features.push(x);
    }
    Dataset::new(
        labels,
        features,
        Provenance::Synthetic {
            seed,
            theta_star: theta_star.to_vec(),
        },
    )
}

/// Read a CSV file with header `label,f1,...,fd`.
pub fn ingest_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.is_empty() || header.get(0) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `label`".into(),
        });
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse = |field: &str, what: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} `{field}` is not a number"),
            })
        };
        let y = parse(&record[0], "label")?;
        if y != 1.0 && y != -1.0 {
            return Err(Error::Parse {
                line,
                message: format!("label `{}` not in {{-1, 1}}", &record[0]),
            });
        }
        let x = (1..=d)
            .map(|j| {
                let v = parse(&record[j], "feature")?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse {
                        line,
                        message: "non-finite feature".into(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        labels.push(y);
        features.push(Vector::from_vec(x));
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no rows".into(),
        });
    }
    Dataset::new(
        labels,
        features,
        Provenance::File {
            path: path.to_path_buf(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_two_rows() {
        let f = write("label,f1,f2\n1,0.5,2\n-1,1e-3,-4\n");
        let d = ingest_dataset(f.path()).unwrap();
        assert_eq!((d.n(), d.dim()), (2, 2));
        assert_eq!(d.labels(), &[1.0, -1.0]);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let f = write("label,f1\n1,0.5\n0,2.0\n");
        match ingest_dataset(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("label,f1,f2\n1,0.5,1\n1,2.0\n");
        assert!(matches!(ingest_dataset(f.path()), Err(Error::Parse { line: 3, .. })));
        let f = write("label,f1\n1,abc\n");
        assert!(matches!(ingest_dataset(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rejects_empty() {
        let f = write("");
        assert!(ingest_dataset(f.path()).is_err());
        let f = write("label,f1\n");
        match ingest_dataset(f.path()) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("no rows")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synthetic_replays_and_round_trips() {
        let a = synthesize_dataset(50, 3, &[0.5, -1.0, 2.0], 0.05, 4).unwrap();
        assert_eq!(a, synthesize_dataset(50, 3, &[0.5, -1.0, 2.0], 0.05, 4).unwrap());
        let f = tempfile::NamedTempFile::new().unwrap();
        a.write_csv(f.path()).unwrap();
        let b = ingest_dataset(f.path()).unwrap();
        assert_eq!(a.labels(), b.labels());
        for (x, y) in a.features().iter().zip(b.features()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn intercept_layout() {
        let a = synthesize_dataset(20, 4, &[0.0; 4], 0.05, 1).unwrap();
        for x in a.features() {
            assert_eq!(x[0], 1.0);
            assert!((x.norm_squared() - 2.0).abs() < 1e-12);
        }
        let opts = SyntheticOptions {
            intercept: false,
            feature_scale: 3.0,
        };
        let b = synthesize_dataset_with(20, 4, &[0.0; 4], 0.05, 1, opts).unwrap();
        assert!(b.features().iter().all(|x| (x.norm() - 3.0).abs() < 1e-12));
    }
}
