//! Minimal feed-forward networks with exact backpropagation, dropout,
//! a two-output heteroscedastic head, and a moment-propagating (ADF)
//! forward mode.
//!
//! The default regression topology is `[2, 16, 32, 32, 2]`: three
//! rectified hidden layers and a linear head whose first output is the
//! predicted target and whose second output is the predicted
//! log-variance. Dropout masks apply to the hidden activations (never
//! the head) and use the mask-then-rescale convention at train time and
//! during Monte-Carlo sampling alike, so the plain forward pass equals
//! the expectation over masks.

pub mod adf;
pub mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Seed;

pub use adf::{forward_adf, forward_adf_dropout, GaussianActivation};
pub use train::{
    train_het_classifier, train_regression, train_regression_adf, train_soft_classifier,
    ClassLoss, Hyper, TrainMode,
};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Purely affine network; used by the moment-propagation tests.
    Identity,
}

/// A fully-connected network.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` has shape `(layer_sizes[l+1], layer_sizes[l])`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
    /// Fraction of hidden units dropped per mask draw.
    pub dropout_rate: f64,
}

impl Mlp {
    /// He-initialized network.
    pub fn new(layer_sizes: &[usize], dropout_rate: f64, seed: Seed) -> Result<Mlp> {
        Self::with_activation(layer_sizes, Activation::Relu, dropout_rate, seed)
    }

    pub fn with_activation(
        layer_sizes: &[usize],
        activation: Activation,
        dropout_rate: f64,
        seed: Seed,
    ) -> Result<Mlp> {
        if layer_sizes.len() < 2 {
            return Err(Error::Parameter("need at least input and output layers".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Parameter(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = seed.rng();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let std = (2.0 / n_in as f64).sqrt();
            let mut mat = Array2::zeros((n_out, n_in));
            for v in mat.iter_mut() {
                *v = std * crate::rng::standard_normal(&mut rng);
            }
            weights.push(mat);
            biases.push(Array1::zeros(n_out));
        }
        Ok(Mlp { layer_sizes: layer_sizes.to_vec(), weights, biases, activation, dropout_rate })
    }

    /// All-zero network, mostly for tests and fixtures.
    pub fn zeros(layer_sizes: &[usize], dropout_rate: f64) -> Result<Mlp> {
        let mut mlp = Self::new(layer_sizes, dropout_rate, Seed(0))?;
        for w in &mut mlp.weights {
            w.fill(0.0);
        }
        Ok(mlp)
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.n_inputs() {
            return Err(Error::Shape(format!(
                "input has dimension {dim}, network expects {}",
                self.n_inputs()
            )));
        }
        Ok(())
    }

    #[inline]
    fn activate(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Deterministic forward pass (no dropout).
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(x.len())?;
        let mut a = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a) + b;
            if l < last {
                z.mapv_inplace(|v| self.activate(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Row-per-sample forward pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| self.activate(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Stochastic forward pass with inverted-dropout masks on the
    /// hidden activations.
    pub fn forward_dropout(&self, x: ArrayView1<f64>, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
        self.check_input(x.len())?;
        let keep = 1.0 - self.dropout_rate;
        let mut a = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a) + b;
            if l < last {
                z.mapv_inplace(|v| self.activate(v));
                if self.dropout_rate > 0.0 {
                    for v in z.iter_mut() {
                        *v = if rng.gen::<f64>() < keep { *v / keep } else { 0.0 };
                    }
                }
            }
            a = z;
        }
        Ok(a)
    }
}

/// Log-likelihood loss for one heteroscedastic prediction:
/// `0.5 * exp(-log_var) * (b_true - b_hat)^2 + 0.5 * log_var`.
/// Batch losses are the mean of this over the samples.
pub fn loss_nll(b_true: f64, b_hat: f64, log_var: f64) -> f64 {
    let r = b_true - b_hat;
    0.5 * (-log_var).exp() * r * r + 0.5 * log_var
}

/// Affine standardization fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>, y: &[f64]) -> Standardizer {
        let n = x.nrows() as f64;
        let x_mean: Vec<f64> = x.mean_axis(Axis(0)).unwrap().to_vec();
        let x_std: Vec<f64> = (0..x.ncols())
            .map(|c| {
                let m = x_mean[c];
                let v = x.column(c).iter().map(|xi| (xi - m) * (xi - m)).sum::<f64>() / n;
                v.sqrt().max(1e-12)
            })
            .collect();
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let y_var = y.iter().map(|yi| (yi - y_mean) * (yi - y_mean)).sum::<f64>() / y.len() as f64;
        Standardizer { x_mean, x_std, y_mean, y_std: y_var.sqrt().max(1e-12) }
    }

    pub fn x_to_std(&self, x: &[f64]) -> Array1<f64> {
        Array1::from_iter(
            x.iter().enumerate().map(|(c, v)| (v - self.x_mean[c]) / self.x_std[c]),
        )
    }

    /// Variances transform by the squared scale.
    pub fn x_var_to_std(&self, x_var: &[f64]) -> Array1<f64> {
        Array1::from_iter(
            x_var.iter().enumerate().map(|(c, v)| v / (self.x_std[c] * self.x_std[c])),
        )
    }

    pub fn y_to_std(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn y_from_std(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }

    /// Standard deviations de-standardize by the target scale alone.
    pub fn sigma_from_std(&self, sigma: f64) -> f64 {
        sigma * self.y_std
    }
}

/// A trained regression network plus its standardization constants.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub mlp: Mlp,
    pub norm: Standardizer,
    pub mode: TrainMode,
}

/// Serializable view of an [`Mlp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(m: &Mlp) -> Self {
        MlpCheckpoint {
            layer_sizes: m.layer_sizes.clone(),
            weights: m.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: m.biases.iter().map(|b| b.to_vec()).collect(),
            activation: m.activation,
            dropout_rate: m.dropout_rate,
        }
    }
}

impl TryFrom<&MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(c: &MlpCheckpoint) -> Result<Mlp> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in c.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let flat = c.weights.get(l).ok_or_else(|| Error::Shape("missing weight layer".into()))?;
            if flat.len() != n_in * n_out {
                return Err(Error::Shape(format!(
                    "layer {l}: {} weights for a {n_out}x{n_in} matrix",
                    flat.len()
                )));
            }
            weights.push(Array2::from_shape_vec((n_out, n_in), flat.clone()).unwrap());
            let b = c.biases.get(l).ok_or_else(|| Error::Shape("missing bias layer".into()))?;
            if b.len() != n_out {
                return Err(Error::Shape(format!("layer {l}: bias length {}", b.len())));
            }
            biases.push(Array1::from_vec(b.clone()));
        }
        Ok(Mlp {
            layer_sizes: c.layer_sizes.clone(),
            weights,
            biases,
            activation: c.activation,
            dropout_rate: c.dropout_rate,
        })
    }
}

/// Serializable view of a [`RegressionModel`] plus its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionCheckpoint {
    pub mlp: MlpCheckpoint,
    pub norm: Standardizer,
    pub mode: TrainMode,
    pub hyper: Hyper,
    pub seed: Seed,
}

impl RegressionModel {
    pub fn save(&self, path: &std::path::Path, hyper: &Hyper, seed: Seed) -> Result<()> {
        let ck = RegressionCheckpoint {
            mlp: MlpCheckpoint::from(&self.mlp),
            norm: self.norm.clone(),
            mode: self.mode,
            hyper: hyper.clone(),
            seed,
        };
        std::fs::write(path, serde_json::to_string(&ck)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<RegressionModel> {
        let ck: RegressionCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(RegressionModel {
            mlp: Mlp::try_from(&ck.mlp)?,
            norm: ck.norm,
            mode: ck.mode,
        })
    }
}
