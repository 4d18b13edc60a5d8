//! Dataset construction, CSV loading, and IID partitioning into client shards.
//!
//! The CSV layout is one example per line, `label,f1,...,fd`. Files ending in
//! `.gz` are read and written gzip-compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::Matrix;

/// Labeled feature rows. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Dataset> {
        if features.rows() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_row(&self, index: usize) -> &[f64] {
        let d = self.features.cols();
        &self.features.values()[index * d..(index + 1) * d]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Disjoint per-client index shards covering a dataset.
#[derive(Debug, Clone)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn shard(&self, client_id: usize) -> &[usize] {
        &self.shards[client_id]
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }
}

/// Standard normal draw via the Marsaglia polar transform.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Distance of class means from the origin, in units of feature space. Means
/// are drawn once per dataset; `spread` is the per-class standard deviation
/// around them.
const MEAN_SCALE: f64 = 4.0;

/// Class-balanced Gaussian clusters around distinct random means.
///
/// Row counts per class differ by at most one: the first `n % classes`
/// classes receive the extra rows. Rows are emitted class by class;
/// [`partition_iid`] shuffles before sharding, so ordering carries no bias
/// into a simulation.
pub fn generate_blobs(
    n: usize,
    dims: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::InvalidConfig(format!(
            "need at least one example per class: n={n}, classes={classes}"
        )));
    }
    if dims == 0 {
        return Err(Error::InvalidConfig("dims must be positive".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "spread must be a non-negative number, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| MEAN_SCALE * gauss(&mut rng)).collect())
        .collect();

    let base = n / classes;
    let extra = n % classes;
    let mut values = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        let count = base + usize::from(k < extra);
        for _ in 0..count {
            for &m in mean {
                values.push(m + spread * gauss(&mut rng));
            }
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_vec(n, dims, values)?, labels, classes)
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn open_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufWriter::new(GzEncoder::new(
            file,
            Compression::default(),
        ))))
    } else {
        Ok(Box::new(BufWriter::new(file)))
    }
}

/// Load `label,f1,...,fd` rows. Feature arity is fixed by the first row and
/// `num_classes` is the largest label plus one.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let reader = open_reader(path)?;
    let path_str = path.display().to_string();
    let csv_err = |line: usize, message: String| Error::Csv {
        path: path_str.clone(),
        line,
        message,
    };

    let mut dims: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if let Some(d) = dims {
            if fields.len() != d + 1 {
                return Err(csv_err(
                    line_no,
                    format!("expected {} fields, found {}", d + 1, fields.len()),
                ));
            }
        } else {
            if fields.len() < 2 {
                return Err(csv_err(
                    line_no,
                    format!(
                        "expected `label,f1,...,fd` with at least one feature, found {} field(s)",
                        fields.len()
                    ),
                ));
            }
            dims = Some(fields.len() - 1);
        }
        let label: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| csv_err(line_no, format!("invalid label `{}`", fields[0])))?;
        if label < 0 {
            return Err(csv_err(line_no, format!("negative label {label}")));
        }
        labels.push(label as usize);
        for field in &fields[1..] {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| csv_err(line_no, format!("invalid feature `{field}`")))?;
            if !v.is_finite() {
                return Err(csv_err(line_no, format!("non-finite feature `{field}`")));
            }
            values.push(v);
        }
    }
    let dims = dims.ok_or(Error::EmptyDataset)?;
    let n = labels.len();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_vec(n, dims, values)?, labels, num_classes)
}

/// Write the CSV layout read by [`load_csv`]. Features use the shortest
/// decimal form that parses back to the same double, so save/load round-trips
/// are exact.
pub fn save_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = open_writer(path)?;
    let d = dataset.dims();
    for i in 0..dataset.len() {
        let mut line = dataset.label(i).to_string();
        for j in 0..d {
            line.push(',');
            line.push_str(&dataset.features().get(i, j).to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffle rows with the seed and split into a `first`-row dataset and the
/// remainder. Both halves inherit the parent's class count, so a class may
/// be absent from a small split.
pub fn split_dataset(dataset: &Dataset, first: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if first == 0 || first >= n {
        return Err(Error::InvalidConfig(format!(
            "split point {first} must leave both halves non-empty (n={n})"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |rows: &[usize]| -> Result<Dataset> {
        let d = dataset.dims();
        let mut values = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            values.extend_from_slice(dataset.feature_row(i));
            labels.push(dataset.label(i));
        }
        Dataset::new(
            Matrix::from_vec(rows.len(), d, values)?,
            labels,
            dataset.num_classes(),
        )
    };
    Ok((take(&indices[..first])?, take(&indices[first..])?))
}

/// Shuffle indices with the seed and split into `clients` near-equal shards.
/// The first `n % clients` shards take one extra row.
pub fn partition_iid(dataset: &Dataset, clients: usize, seed: u64) -> Result<Partition> {
    let n = dataset.len();
    if clients == 0 {
        return Err(Error::InvalidConfig("client count must be positive".into()));
    }
    if n < clients {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n} rows across {clients} clients"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / clients;
    let extra = n % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for j in 0..clients {
        let size = base + usize::from(j < extra);
        shards.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(Partition { shards })
}
