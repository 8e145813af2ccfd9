//! Assumed-density-filtering forward mode: propagate diagonal Gaussian
//! (mean, variance) pairs through every layer instead of point values.
//!
//! Affine layers map `(mu, v)` to `(W mu + b, (W âˆ˜ W) v)`. The rectifier
//! maps each scalar Gaussian to its exact rectified-Gaussian moments
//! via the standard normal pdf/cdf. Dropout, when enabled, scales the
//! mean by the sampled mask `c = bernoulli/keep` and the variance by
//! `c^2`. The closed-form moment derivatives below make the mode fully
//! trainable:
//!
//! ```text
//! m = mu*Phi(z) + s*phi(z)          dm/dmu = Phi(z)
//! e2 = (mu^2+v)*Phi(z) + mu*s*phi(z) dm/dv  = phi(z) / (2 s)
//! w = e2 - m^2                      dw/dmu = 2 m (1 - Phi(z))
//! z = mu / s, s = sqrt(v)           dw/dv  = Phi(z) - m phi(z) / s
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::Seed;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

#[inline]
fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Exact mean and variance of `max(0, X)` for `X ~ N(mu, v)`.
#[inline]
pub fn relu_moments(mu: f64, v: f64) -> (f64, f64) {
    if v <= 0.0 {
        return (mu.max(0.0), 0.0);
    }
    let s = v.sqrt();
    let z = mu / s;
    let (p, c) = (pdf(z), cdf(z));
    let m = mu * c + s * p;
    let e2 = (mu * mu + v) * c + mu * s * p;
    (m, (e2 - m * m).max(0.0))
}

/// Partial derivatives `(dm/dmu, dm/dv, dw/dmu, dw/dv)`.
#[inline]
fn relu_moment_grads(mu: f64, v: f64) -> (f64, f64, f64, f64) {
    if v <= 0.0 {
        let step = if mu > 0.0 { 1.0 } else { 0.0 };
        return (step, 0.0, 0.0, step);
    }
    let s = v.sqrt();
    let z = mu / s;
    let (p, c) = (pdf(z), cdf(z));
    let m = mu * c + s * p;
    (c, p / (2.0 * s), 2.0 * m * (1.0 - c), c - m * p / s)
}

/// Diagonal Gaussian over a layer's units.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianActivation {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

fn check_var(x_var: ArrayView1<f64>) -> Result<()> {
    if x_var.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("input variance must be non-negative".into()));
    }
    Ok(())
}

/// Moment-propagating forward pass without dropout.
pub fn forward_adf(
    mlp: &Mlp,
    x_mean: ArrayView1<f64>,
    x_var: ArrayView1<f64>,
) -> Result<GaussianActivation> {
    forward_adf_inner(mlp, x_mean, x_var, None)
}

/// Moment-propagating forward pass with one dropout-mask draw on the
/// hidden activations.
pub fn forward_adf_dropout(
    mlp: &Mlp,
    x_mean: ArrayView1<f64>,
    x_var: ArrayView1<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianActivation> {
    forward_adf_inner(mlp, x_mean, x_var, Some(rng))
}

fn forward_adf_inner(
    mlp: &Mlp,
    x_mean: ArrayView1<f64>,
    x_var: ArrayView1<f64>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<GaussianActivation> {
    if x_mean.len() != mlp.n_inputs() || x_var.len() != mlp.n_inputs() {
        return Err(Error::Shape(format!(
            "adf input has dimension {}/{}, network expects {}",
            x_mean.len(),
            x_var.len(),
            mlp.n_inputs()
        )));
    }
    check_var(x_var)?;
    let keep = 1.0 - mlp.dropout_rate;
    let mut mu = x_mean.to_owned();
    let mut var = x_var.to_owned();
    let last = mlp.weights.len() - 1;
    for (l, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        let w2 = w.mapv(|x| x * x);
        let mut zmu = w.dot(&mu) + b;
        let mut zv = w2.dot(&var);
        if l < last {
            for (m, v) in zmu.iter_mut().zip(zv.iter_mut()) {
                let (mm, ww) = match mlp.activation {
                    Activation::Relu => relu_moments(*m, *v),
                    Activation::Identity => (*m, *v),
                };
                *m = mm;
                *v = ww;
            }
            if mlp.dropout_rate > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    for (m, v) in zmu.iter_mut().zip(zv.iter_mut()) {
                        let c = if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                        *m *= c;
                        *v *= c * c;
                    }
                }
            }
        }
        mu = zmu;
        var = zv;
    }
    Ok(GaussianActivation { mean: mu, var })
}

/// Batched ADF forward state kept for the backward pass.
pub(crate) struct AdfCache {
    /// Post-activation (and post-mask) moments, `post_mu[0]` being the
    /// input batch.
    pub post_mu: Vec<Array2<f64>>,
    pub post_v: Vec<Array2<f64>>,
    /// Pre-activation moments for hidden layers.
    pub pre_mu: Vec<Array2<f64>>,
    pub pre_v: Vec<Array2<f64>>,
    pub masks: Vec<Option<Array2<f64>>>,
}

/// Batched moment propagation; `mask_seed` draws one dropout mask per
/// sample and hidden layer.
pub(crate) fn adf_forward_batch(
    mlp: &Mlp,
    x_mu: ArrayView2<f64>,
    x_v: ArrayView2<f64>,
    mask_seed: Option<Seed>,
) -> Result<(Array2<f64>, Array2<f64>, AdfCache)> {
    let keep = 1.0 - mlp.dropout_rate;
    let mut mask_rng = mask_seed.map(|s| s.rng());
    let mut cache = AdfCache {
        post_mu: vec![x_mu.to_owned()],
        post_v: vec![x_v.to_owned()],
        pre_mu: Vec::new(),
        pre_v: Vec::new(),
        masks: Vec::new(),
    };
    let last = mlp.weights.len() - 1;
    for (l, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        let w2 = w.mapv(|x| x * x);
        let prev_mu = cache.post_mu.last().unwrap();
        let prev_v = cache.post_v.last().unwrap();
        let mut zmu = prev_mu.dot(&w.t());
        zmu += b;
        let zv = prev_v.dot(&w2.t());
        if l == last {
            return Ok((zmu, zv, cache));
        }
        cache.pre_mu.push(zmu.clone());
        cache.pre_v.push(zv.clone());
        let mut amu = zmu;
        let mut av = zv;
        for (m, v) in amu.iter_mut().zip(av.iter_mut()) {
            let (mm, ww) = match mlp.activation {
                Activation::Relu => relu_moments(*m, *v),
                Activation::Identity => (*m, *v),
            };
            *m = mm;
            *v = ww;
        }
        let mask = match (&mut mask_rng, mlp.dropout_rate > 0.0) {
            (Some(r), true) => {
                let mut mk = Array2::zeros(amu.raw_dim());
                for x in mk.iter_mut() {
                    *x = if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                amu *= &mk;
                av *= &mk.mapv(|c| c * c);
                Some(mk)
            }
            _ => None,
        };
        cache.masks.push(mask);
        cache.post_mu.push(amu);
        cache.post_v.push(av);
    }
    unreachable!("loop returns at the output layer");
}

/// Exact gradients of a scalar loss through the batched ADF pass.
/// `g_out_mu` / `g_out_v` are the loss gradients with respect to the
/// output-layer moments.
pub(crate) fn adf_backward_batch(
    mlp: &Mlp,
    cache: &AdfCache,
    g_out_mu: Array2<f64>,
    g_out_v: Array2<f64>,
) -> super::train::Grads {
    let mut grads = super::train::Grads::zeros_like(mlp);
    let mut gmu = g_out_mu;
    let mut gv = g_out_v;
    for l in (0..mlp.weights.len()).rev() {
        let w = &mlp.weights[l];
        let w2 = w.mapv(|x| x * x);
        // affine layer l: pre = post_{l} * W^T (+b), pre_v = post_v * (W*W)^T
        grads.dw[l] = gmu.t().dot(&cache.post_mu[l]) + 2.0 * &(&gv.t().dot(&cache.post_v[l]) * w);
        grads.db[l] = gmu.t().dot(&Array1::from_elem(gmu.nrows(), 1.0));
        if l == 0 {
            break;
        }
        let mut nmu = gmu.dot(w);
        let mut nv = gv.dot(&w2);
        // mask: post = c * act_m, post_v = c^2 * act_w
        if let Some(mask) = &cache.masks[l - 1] {
            nmu *= mask;
            nv *= &mask.mapv(|c| c * c);
        }
        // activation moments
        let pre_mu = &cache.pre_mu[l - 1];
        let pre_v = &cache.pre_v[l - 1];
        for ((gm, gw), (m, v)) in
            nmu.iter_mut().zip(nv.iter_mut()).zip(pre_mu.iter().zip(pre_v.iter()))
        {
            let (dm_dmu, dm_dv, dw_dmu, dw_dv) = match mlp.activation {
                Activation::Relu => relu_moment_grads(*m, *v),
                Activation::Identity => (1.0, 0.0, 0.0, 1.0),
            };
            let new_gm = *gm * dm_dmu + *gw * dw_dmu;
            let new_gw = *gm * dm_dv + *gw * dw_dv;
            *gm = new_gm;
            *gw = new_gw;
        }
        gmu = nmu;
        gv = nv;
    }
    grads
}
