//! Client learners: multinomial logistic regression and a one-hidden-layer
//! MLP, with exact analytic gradients and the local mini-batch SGD loop.
//!
//! Training is plain SGD, `theta <- theta - lr * grad`, no momentum or weight
//! decay. Batches are formed by a seeded shuffle of the shard each epoch and
//! the final short batch is trained on rather than dropped, so no sample is
//! silently ignored.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::{Matrix, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogReg,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation `z` (relu takes the
    /// zero-slope branch at exactly z = 0).
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture description; `hidden_dim` is present exactly for MLPs.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: Option<usize>,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn logreg(input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::LogReg,
            input_dim,
            num_classes,
            hidden_dim: None,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        activation: Activation,
    ) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden_dim: Some(hidden_dim),
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".into(),
            ));
        }
        match (self.kind, self.hidden_dim) {
            (ModelKind::LogReg, None) => Ok(()),
            (ModelKind::LogReg, Some(_)) => Err(Error::InvalidConfig(
                "model.hidden is only valid for model.kind=mlp".into(),
            )),
            (ModelKind::Mlp, Some(h)) if h > 0 => Ok(()),
            (ModelKind::Mlp, _) => Err(Error::InvalidConfig(
                "model.kind=mlp requires a positive model.hidden".into(),
            )),
        }
    }
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.lr must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A validated architecture bound to forward/backward routines.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        Ok(Model { spec })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Glorot-uniform weights (`s = sqrt(6 / (fan_in + fan_out))`), zero
    /// biases, drawn layer by layer from one ChaCha stream.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| -> Matrix {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = Matrix::zeros(rows, cols);
            for v in m.values_mut() {
                *v = rng.gen_range(-s..=s);
            }
            m
        };
        let d = self.spec.input_dim;
        let k = self.spec.num_classes;
        let layers = match self.spec.kind {
            ModelKind::LogReg => vec![
                ("w".to_string(), glorot(d, k)),
                ("b".to_string(), Matrix::zeros(1, k)),
            ],
            ModelKind::Mlp => {
                let h = self.spec.hidden_dim.expect("validated");
                vec![
                    ("w1".to_string(), glorot(d, h)),
                    ("b1".to_string(), Matrix::zeros(1, h)),
                    ("w2".to_string(), glorot(h, k)),
                    ("b2".to_string(), Matrix::zeros(1, k)),
                ]
            }
        };
        ParamSet::new(layers).expect("layer names are unique")
    }

    /// Logits for one feature row, plus hidden pre-activations for MLPs.
    fn forward(&self, params: &ParamSet, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let k = self.spec.num_classes;
        match self.spec.kind {
            ModelKind::LogReg => {
                let w = params.layer("w").expect("logreg layer");
                let b = params.layer("b").expect("logreg layer");
                let mut logits = b.values().to_vec();
                for (j, &xj) in x.iter().enumerate() {
                    let row = &w.values()[j * k..(j + 1) * k];
                    for (l, &wjk) in logits.iter_mut().zip(row) {
                        *l += xj * wjk;
                    }
                }
                (logits, None)
            }
            ModelKind::Mlp => {
                let w1 = params.layer("w1").expect("mlp layer");
                let b1 = params.layer("b1").expect("mlp layer");
                let w2 = params.layer("w2").expect("mlp layer");
                let b2 = params.layer("b2").expect("mlp layer");
                let h = w1.cols();
                let mut z1 = b1.values().to_vec();
                for (j, &xj) in x.iter().enumerate() {
                    let row = &w1.values()[j * h..(j + 1) * h];
                    for (z, &w) in z1.iter_mut().zip(row) {
                        *z += xj * w;
                    }
                }
                let mut logits = b2.values().to_vec();
                for (jh, &zjh) in z1.iter().enumerate() {
                    let a = self.spec.activation.apply(zjh);
                    let row = &w2.values()[jh * k..(jh + 1) * k];
                    for (l, &w) in logits.iter_mut().zip(row) {
                        *l += a * w;
                    }
                }
                (logits, Some(z1))
            }
        }
    }

    /// Mean cross-entropy over the index batch and the matching gradient.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        dataset: &Dataset,
        indices: &[usize],
    ) -> Result<(f64, ParamSet)> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        self.ensure_data_shape(dataset)?;
        let k = self.spec.num_classes;
        let inv_batch = 1.0 / indices.len() as f64;
        let mut grad = params.zeros_like();
        let mut loss = 0.0;

        for &i in indices {
            let x = dataset.feature_row(i);
            let y = dataset.label(i);
            let (logits, z1) = self.forward(params, x);
            let (sample_loss, probs) = softmax_cross_entropy(&logits, y);
            loss += sample_loss;

            // d(loss)/d(logit) with the 1/B factor folded in
            let mut dlogits = probs;
            dlogits[y] -= 1.0;
            for g in dlogits.iter_mut() {
                *g *= inv_batch;
            }

            match self.spec.kind {
                ModelKind::LogReg => match grad.layers_mut() {
                    [(_, gw), (_, gb)] => accumulate_linear(gw, gb, x, &dlogits, k),
                    _ => unreachable!("logreg has two layers"),
                },
                ModelKind::Mlp => {
                    let z1 = z1.expect("mlp forward");
                    let w2 = params.layer("w2").expect("mlp layer");
                    let h = z1.len();
                    let a1: Vec<f64> =
                        z1.iter().map(|&z| self.spec.activation.apply(z)).collect();
                    let mut dz1 = vec![0.0; h];
                    for (jh, dz) in dz1.iter_mut().enumerate() {
                        let mut da = 0.0;
                        let row = &w2.values()[jh * k..(jh + 1) * k];
                        for (g, &w) in dlogits.iter().zip(row) {
                            da += g * w;
                        }
                        *dz = da * self.spec.activation.derivative(z1[jh]);
                    }
                    match grad.layers_mut() {
                        [(_, gw1), (_, gb1), (_, gw2), (_, gb2)] => {
                            accumulate_linear(gw1, gb1, x, &dz1, h);
                            accumulate_linear(gw2, gb2, &a1, &dlogits, k);
                        }
                        _ => unreachable!("mlp has four layers"),
                    }
                }
            }
        }
        Ok((loss * inv_batch, grad))
    }

    /// Mean cross-entropy over the index batch, no gradient.
    pub fn batch_loss(
        &self,
        params: &ParamSet,
        dataset: &Dataset,
        indices: &[usize],
    ) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        self.ensure_data_shape(dataset)?;
        let mut loss = 0.0;
        for &i in indices {
            let (logits, _) = self.forward(params, dataset.feature_row(i));
            loss += softmax_cross_entropy(&logits, dataset.label(i)).0;
        }
        Ok(loss / indices.len() as f64)
    }

    /// Run `cfg.epochs` of mini-batch SGD over the shard. The input set is
    /// untouched; the result is deterministic in `(inputs, seed)`.
    pub fn local_train(
        &self,
        params: &ParamSet,
        dataset: &Dataset,
        shard: &[usize],
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<ParamSet> {
        if shard.is_empty() {
            return Err(Error::EmptyBatch);
        }
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order = shard.to_vec();
        let mut params = params.clone();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let (_, grad) = self.loss_and_grad(&params, dataset, batch)?;
                params = params.scale_add(&grad, -cfg.learning_rate)?;
            }
        }
        Ok(params)
    }

    /// Mean loss and top-1 accuracy over the whole dataset. Argmax ties
    /// resolve to the lowest class index.
    pub fn evaluate(&self, params: &ParamSet, dataset: &Dataset) -> Result<(f64, f64)> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.ensure_data_shape(dataset)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for i in 0..dataset.len() {
            let (logits, _) = self.forward(params, dataset.feature_row(i));
            loss += softmax_cross_entropy(&logits, dataset.label(i)).0;
            let mut best = 0;
            for (j, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = j;
                }
            }
            if best == dataset.label(i) {
                correct += 1;
            }
        }
        let n = dataset.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    pub(crate) fn ensure_data_shape(&self, dataset: &Dataset) -> Result<()> {
        if dataset.dims() != self.spec.input_dim {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} features but model.input_dim is {}",
                dataset.dims(),
                self.spec.input_dim
            )));
        }
        if dataset.num_classes() > self.spec.num_classes {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} classes but model.classes is {}",
                dataset.num_classes(),
                self.spec.num_classes
            )));
        }
        Ok(())
    }
}

/// Numerically stable softmax cross-entropy for one sample: the loss and the
/// full probability vector.
fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let lse = max + sum.ln();
    let loss = lse - logits[label];
    let probs = exp.iter().map(|&e| e / sum).collect();
    (loss, probs)
}

/// Accumulate one sample's contribution to a linear layer: `gw += x^T d`,
/// `gb += d`, where `d` has `width` entries.
fn accumulate_linear(gw: &mut Matrix, gb: &mut Matrix, x: &[f64], d: &[f64], width: usize) {
    let gw_values = gw.values_mut();
    for (j, &xj) in x.iter().enumerate() {
        let row = &mut gw_values[j * width..(j + 1) * width];
        for (g, &dk) in row.iter_mut().zip(d) {
            *g += xj * dk;
        }
    }
    for (g, &dk) in gb.values_mut().iter_mut().zip(d) {
        *g += dk;
    }
}
