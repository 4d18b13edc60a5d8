//! Dense model parameters: named layer matrices and their elementwise algebra.
//!
//! A [`ParamSet`] is an ordered list of uniquely named [`Matrix`] layers.
//! All values are `f64`; bias vectors are stored as `1 x d` matrices so that
//! masking and aggregation treat every parameter uniformly. Sets are
//! immutable values once built: every combining operation returns a new set.
//!
//! # Checkpoint format
//!
//! [`ParamSet::save`] writes a flat little-endian binary layout, one record
//! per layer, records concatenated until end of file:
//!
//! ```text
//! name_len: u32        length of the layer name in bytes
//! name:     [u8]       UTF-8 layer name
//! rows:     u32
//! cols:     u32
//! values:   [f64]      rows * cols doubles, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major dense matrix of finite doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix. Dimensions must be positive.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major value vector, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                layer: String::from("<literal>"),
            });
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.values[row * self.cols + col] = value;
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub(crate) fn ensure_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Ordered collection of uniquely named layers; the full parameter state of
/// one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<(String, Matrix)>,
}

impl ParamSet {
    /// Build from `(name, matrix)` pairs; names must be unique.
    pub fn new(layers: Vec<(String, Matrix)>) -> Result<ParamSet> {
        for (i, (name, _)) in layers.iter().enumerate() {
            if layers[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate layer name `{name}`"
                )));
            }
        }
        Ok(ParamSet { layers })
    }

    pub fn layers(&self) -> &[(String, Matrix)] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [(String, Matrix)] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Matrix> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total number of scalar parameters across all layers.
    pub fn numel(&self) -> usize {
        self.layers.iter().map(|(_, m)| m.numel()).sum()
    }

    /// Same names, same order, same per-layer dimensions.
    pub fn ensure_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::InvalidConfig(format!(
                "layer count mismatch: {} vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for ((name_a, mat_a), (name_b, mat_b)) in self.layers.iter().zip(&other.layers) {
            if name_a != name_b {
                return Err(Error::LayerMismatch {
                    expected: name_a.clone(),
                    found: name_b.clone(),
                });
            }
            if !mat_a.same_shape(mat_b) {
                return Err(Error::ShapeMismatch {
                    layer: name_a.clone(),
                    left_rows: mat_a.rows,
                    left_cols: mat_a.cols,
                    right_rows: mat_b.rows,
                    right_cols: mat_b.cols,
                });
            }
        }
        Ok(())
    }

    fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<ParamSet> {
        self.ensure_compatible(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|((name, a), (_, b))| {
                let values = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                (
                    name.clone(),
                    Matrix {
                        rows: a.rows,
                        cols: a.cols,
                        values,
                    },
                )
            })
            .collect();
        Ok(ParamSet { layers })
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_map(other, |x, y| x + y)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_map(other, |x, y| x - y)
    }

    /// Elementwise `self + alpha * other`.
    pub fn scale_add(&self, other: &ParamSet, alpha: f64) -> Result<ParamSet> {
        self.zip_map(other, |x, y| x + alpha * y)
    }

    /// Zero-valued set with this set's layer names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|(name, m)| (name.clone(), Matrix::zeros(m.rows, m.cols)))
                .collect(),
        }
    }

    /// In-place `self += alpha * other`. Accumulator for aggregation; the
    /// caller controls summation order.
    pub(crate) fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.ensure_compatible(other)?;
        for ((_, a), (_, b)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.values.iter_mut().zip(&b.values) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    /// Error naming the first layer holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in &self.layers {
            if !m.is_finite() {
                return Err(Error::NonFinite { layer: name.clone() });
            }
        }
        Ok(())
    }

    /// Write the checkpoint layout documented at module level.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (name, m) in &self.layers {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&(m.rows as u32).to_le_bytes())?;
            w.write_all(&(m.cols as u32).to_le_bytes())?;
            for v in &m.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a checkpoint written by [`ParamSet::save`].
    pub fn load(path: &Path) -> Result<ParamSet> {
        let mut r = BufReader::new(File::open(path)?);
        let mut layers = Vec::new();
        loop {
            let mut len_buf = [0u8; 4];
            match r.read_exact(&mut len_buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let name_len = u32::from_le_bytes(len_buf) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)
                .map_err(|_| Error::Checkpoint("truncated layer name".into()))?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Checkpoint("layer name is not UTF-8".into()))?;
            let mut dim_buf = [0u8; 4];
            r.read_exact(&mut dim_buf)
                .map_err(|_| Error::Checkpoint(format!("truncated dims for layer `{name}`")))?;
            let rows = u32::from_le_bytes(dim_buf) as usize;
            r.read_exact(&mut dim_buf)
                .map_err(|_| Error::Checkpoint(format!("truncated dims for layer `{name}`")))?;
            let cols = u32::from_le_bytes(dim_buf) as usize;
            if rows == 0 || cols == 0 {
                return Err(Error::Checkpoint(format!(
                    "layer `{name}` has zero dimension {rows}x{cols}"
                )));
            }
            let mut values = Vec::with_capacity(rows * cols);
            let mut val_buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut val_buf)
                    .map_err(|_| Error::Checkpoint(format!("truncated values in layer `{name}`")))?;
                values.push(f64::from_le_bytes(val_buf));
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "non-finite value in layer `{name}`"
                )));
            }
            layers.push((name, Matrix { rows, cols, values }));
        }
        ParamSet::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pset(pairs: &[(&str, usize, usize, &[f64])]) -> ParamSet {
        ParamSet::new(
            pairs
                .iter()
                .map(|(n, r, c, v)| {
                    (
                        n.to_string(),
                        Matrix::from_vec(*r, *c, v.to_vec()).unwrap(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn add_elementwise() {
        let a = pset(&[("w", 1, 2, &[1.0, 2.0])]);
        let b = pset(&[("w", 1, 2, &[3.0, 4.0])]);
        let sum = a.add(&b).unwrap();
        assert_eq!(sum.layer("w").unwrap().values(), &[4.0, 6.0]);
        // operands untouched
        assert_eq!(a.layer("w").unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn sub_self_is_zero() {
        let x = pset(&[("w", 2, 2, &[1.5, -2.0, 0.25, 9.0])]);
        let d = x.sub(&x).unwrap();
        assert!(d.layer("w").unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_add_zero_alpha_is_identity() {
        let a = pset(&[("w", 1, 3, &[1.0, -2.0, 3.0])]);
        let b = pset(&[("w", 1, 3, &[5.0, 5.0, 5.0])]);
        let out = a.scale_add(&b, 0.0).unwrap();
        assert_eq!(out.layer("w").unwrap().values(), a.layer("w").unwrap().values());
    }

    #[test]
    fn shape_mismatch_names_offending_layer() {
        let a = pset(&[("w", 1, 2, &[1.0, 2.0]), ("b", 1, 2, &[0.0, 0.0])]);
        let b = pset(&[("w", 1, 2, &[1.0, 2.0]), ("b", 2, 1, &[0.0, 0.0])]);
        let err = a.add(&b).unwrap_err();
        match err {
            Error::ShapeMismatch { layer, .. } => assert_eq!(layer, "b"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn numel_counts_all_layers() {
        let p = pset(&[("a", 2, 3, &[0.0; 6])]);
        assert_eq!(p.numel(), 6);
        let q = pset(&[("a", 2, 2, &[0.0; 4]), ("b", 1, 4, &[0.0; 4])]);
        assert_eq!(q.numel(), 8);
        let empty = ParamSet::new(vec![]).unwrap();
        assert_eq!(empty.numel(), 0);
    }

    #[test]
    fn duplicate_layer_names_rejected() {
        let m = Matrix::zeros(1, 1);
        let err = ParamSet::new(vec![("w".into(), m.clone()), ("w".into(), m)]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn check_finite_names_layer() {
        let mut m = Matrix::zeros(1, 2);
        m.values_mut()[1] = f64::NAN;
        let p = ParamSet { layers: vec![("ok".into(), Matrix::zeros(1, 1)), ("bad".into(), m)] };
        match p.check_finite().unwrap_err() {
            Error::NonFinite { layer } => assert_eq!(layer, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = pset(&[
            ("w", 2, 3, &[0.5, -1.25, 3.0, 4.5, -6.0, 7.75]),
            ("b", 1, 3, &[0.0, 1e-12, -2.5]),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        p.save(&path).unwrap();
        let q = ParamSet::load(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn checkpoint_truncation_detected() {
        let p = pset(&[("w", 2, 2, &[1.0, 2.0, 3.0, 4.0])]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        p.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(ParamSet::load(&path), Err(Error::Checkpoint(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_pair() -> impl Strategy<Value = (ParamSet, ParamSet)> {
            (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
                let n = r * c;
                (
                    proptest::collection::vec(-1e6f64..1e6, n),
                    proptest::collection::vec(-1e6f64..1e6, n),
                )
                    .prop_map(move |(a, b)| {
                        (
                            ParamSet::new(vec![(
                                "w".into(),
                                Matrix::from_vec(r, c, a).unwrap(),
                            )])
                            .unwrap(),
                            ParamSet::new(vec![(
                                "w".into(),
                                Matrix::from_vec(r, c, b).unwrap(),
                            )])
                            .unwrap(),
                        )
                    })
            })
        }

        proptest! {
            #[test]
            fn combine_preserves_shape_and_finiteness((a, b) in arb_pair()) {
                for out in [a.add(&b).unwrap(), a.sub(&b).unwrap(), a.scale_add(&b, 0.5).unwrap()] {
                    prop_assert!(a.ensure_compatible(&out).is_ok());
                    prop_assert!(out.check_finite().is_ok());
                }
            }

            #[test]
            fn add_commutes((a, b) in arb_pair()) {
                prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            }
        }
    }
}
