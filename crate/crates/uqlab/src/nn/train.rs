//! Exact backpropagation and stochastic-gradient training.
//!
//! Four loss heads share one backward engine:
//!
//! * heteroscedastic Gaussian NLL for the two-output regression head,
//! * the same NLL evaluated on ADF-propagated moments, where the total
//!   predictive variance is the propagated input variance plus the
//!   exponentiated log-variance head,
//! * soft-target classification (cross-entropy or KL against a
//!   probability vector; both share the `softmax - target` gradient),
//! * sampled-logit heteroscedastic classification (`2K` outputs: logit
//!   means and log-variances, trained by averaging the cross-entropy
//!   of Monte-Carlo logit draws).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::biomass::RegressionDataset;
use crate::error::{Error, Result};
use crate::nn::adf::{adf_backward_batch, adf_forward_batch};
use crate::nn::{Activation, Mlp, RegressionModel, Standardizer};
use crate::rng::{standard_normal, Seed};

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyper {
    pub epochs: usize,
    pub batch: usize,
    /// SGD step size.
    pub lr: f64,
    pub momentum: f64,
    /// Dropout rate applied to hidden activations during training and
    /// Monte-Carlo sampling.
    pub dropout: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { epochs: 40, batch: 128, lr: 0.02, momentum: 0.9, dropout: 0.10 }
    }
}

/// Which forward mode a regression model was trained in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Point,
    Adf,
}

/// Loss used by the soft-target classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLoss {
    CrossEntropy,
    Kl,
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct Grads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Grads {
        Grads {
            dw: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            db: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// Cached point-mode forward state.
struct PointCache {
    /// Post-activation, post-mask activations; `acts[0]` is the input.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    zs: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

fn point_forward_batch(
    mlp: &Mlp,
    x: ArrayView2<f64>,
    mask_seed: Option<Seed>,
) -> (Array2<f64>, PointCache) {
    let keep = 1.0 - mlp.dropout_rate;
    let mut mask_rng = mask_seed.map(|s| s.rng());
    let mut cache = PointCache { acts: vec![x.to_owned()], zs: Vec::new(), masks: Vec::new() };
    let last = mlp.weights.len() - 1;
    for (l, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        let mut z = cache.acts.last().unwrap().dot(&w.t());
        z += b;
        if l == last {
            return (z, cache);
        }
        cache.zs.push(z.clone());
        let mut a = z;
        a.mapv_inplace(|v| match mlp.activation {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        });
        let mask = match (&mut mask_rng, mlp.dropout_rate > 0.0) {
            (Some(r), true) => {
                let mut mk = Array2::zeros(a.raw_dim());
                for v in mk.iter_mut() {
                    *v = if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                a *= &mk;
                Some(mk)
            }
            _ => None,
        };
        cache.masks.push(mask);
        cache.acts.push(a);
    }
    unreachable!("loop returns at the output layer");
}

fn point_backward(mlp: &Mlp, cache: &PointCache, dl_dout: Array2<f64>) -> Grads {
    let mut grads = Grads::zeros_like(mlp);
    let mut delta = dl_dout;
    for l in (0..mlp.weights.len()).rev() {
        grads.dw[l] = delta.t().dot(&cache.acts[l]);
        grads.db[l] = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut da = delta.dot(&mlp.weights[l]);
        if let Some(mask) = &cache.masks[l - 1] {
            da *= mask;
        }
        if mlp.activation == Activation::Relu {
            da.zip_mut_with(&cache.zs[l - 1], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        delta = da;
    }
    grads
}

/// Mean heteroscedastic NLL and its gradient w.r.t. the `(b_hat,
/// log_var)` head outputs.
fn gaussian_nll_head(out: &Array2<f64>, y: &[f64]) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let mut dout = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let (m, s) = (out[[i, 0]], out[[i, 1]]);
        let inv_var = (-s).exp();
        let r = yi - m;
        loss += 0.5 * inv_var * r * r + 0.5 * s;
        dout[[i, 0]] = inv_var * (m - yi) / n;
        dout[[i, 1]] = (0.5 - 0.5 * inv_var * r * r) / n;
    }
    (loss / n, dout)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean soft-target loss and gradient w.r.t. the logits. Cross-entropy
/// and KL differ by the target entropy only, so they share gradients.
fn soft_target_head(
    logits: &Array2<f64>,
    targets: ArrayView2<f64>,
    kind: ClassLoss,
) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let p = softmax_rows(logits);
    let mut loss = 0.0;
    for (prow, trow) in p.outer_iter().zip(targets.outer_iter()) {
        for (&pi, &ti) in prow.iter().zip(trow.iter()) {
            if ti > 0.0 {
                loss -= ti * pi.max(1e-300).ln();
                if kind == ClassLoss::Kl {
                    loss += ti * ti.ln();
                }
            }
        }
    }
    let dout = (&p - &targets) / n;
    (loss / n, dout)
}

/// Mean sampled-logit classification loss for a `2K`-output head
/// `(logit means, logit log-variances)` and its gradient.
fn het_class_head(
    out: &Array2<f64>,
    targets: ArrayView2<f64>,
    mc: usize,
    eps_seed: Seed,
) -> (f64, Array2<f64>) {
    let n = out.nrows();
    let k = targets.ncols();
    let mut rng = eps_seed.rng();
    let mut dout = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    let scale = 1.0 / (mc as f64 * n as f64);
    for _ in 0..mc {
        let mut z = Array2::zeros((n, k));
        let mut eps = Array2::zeros((n, k));
        for i in 0..n {
            for j in 0..k {
                let e = standard_normal(&mut rng);
                eps[[i, j]] = e;
                z[[i, j]] = out[[i, j]] + (0.5 * out[[i, k + j]]).exp() * e;
            }
        }
        let p = softmax_rows(&z);
        for i in 0..n {
            for j in 0..k {
                let ti = targets[[i, j]];
                if ti > 0.0 {
                    loss -= ti * p[[i, j]].max(1e-300).ln();
                }
                let g = (p[[i, j]] - ti) * scale;
                dout[[i, j]] += g;
                dout[[i, k + j]] += g * eps[[i, j]] * (0.5 * out[[i, k + j]]).exp() * 0.5;
            }
        }
    }
    (loss * scale, dout)
}

/// Mean Eq.-style NLL on batched inputs plus exact parameter gradients.
pub fn gaussian_nll_loss_grads(
    mlp: &Mlp,
    x: ArrayView2<f64>,
    y: &[f64],
    mask_seed: Option<Seed>,
) -> Result<(f64, Grads)> {
    if mlp.n_outputs() != 2 {
        return Err(Error::Shape("heteroscedastic head needs exactly 2 outputs".into()));
    }
    let (out, cache) = point_forward_batch(mlp, x, mask_seed);
    let (loss, dout) = gaussian_nll_head(&out, y);
    Ok((loss, point_backward(mlp, &cache, dout)))
}

/// NLL over ADF-propagated moments: the predictive variance is the
/// propagated head variance plus `exp(log_var head mean)`.
pub fn adf_nll_loss_grads(
    mlp: &Mlp,
    x_mu: ArrayView2<f64>,
    x_var: ArrayView2<f64>,
    y: &[f64],
    mask_seed: Option<Seed>,
) -> Result<(f64, Grads)> {
    if mlp.n_outputs() != 2 {
        return Err(Error::Shape("heteroscedastic head needs exactly 2 outputs".into()));
    }
    if x_var.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("input variance must be non-negative".into()));
    }
    let (out_mu, out_v, cache) = adf_forward_batch(mlp, x_mu, x_var, mask_seed)?;
    let n = y.len() as f64;
    let mut g_mu = Array2::zeros(out_mu.raw_dim());
    let mut g_v = Array2::zeros(out_v.raw_dim());
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let m0 = out_mu[[i, 0]];
        let v0 = out_v[[i, 0]];
        let s = out_mu[[i, 1]];
        let vt = v0 + s.exp();
        let r = yi - m0;
        loss += 0.5 * r * r / vt + 0.5 * vt.ln();
        let g_vt = (0.5 / vt - 0.5 * r * r / (vt * vt)) / n;
        g_mu[[i, 0]] = (m0 - yi) / vt / n;
        g_mu[[i, 1]] = g_vt * s.exp();
        g_v[[i, 0]] = g_vt;
    }
    Ok((loss / n, adf_backward_batch(mlp, &cache, g_mu, g_v)))
}

/// Soft-target classification loss plus gradients.
pub fn soft_target_loss_grads(
    mlp: &Mlp,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    kind: ClassLoss,
    mask_seed: Option<Seed>,
) -> Result<(f64, Grads)> {
    if mlp.n_outputs() != targets.ncols() {
        return Err(Error::Shape(format!(
            "classifier has {} outputs for {}-class targets",
            mlp.n_outputs(),
            targets.ncols()
        )));
    }
    let (out, cache) = point_forward_batch(mlp, x, mask_seed);
    let (loss, dout) = soft_target_head(&out, targets, kind);
    Ok((loss, point_backward(mlp, &cache, dout)))
}

/// Sampled-logit heteroscedastic classification loss plus gradients.
pub fn het_class_loss_grads(
    mlp: &Mlp,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    mc: usize,
    mask_seed: Option<Seed>,
    eps_seed: Seed,
) -> Result<(f64, Grads)> {
    if mlp.n_outputs() != 2 * targets.ncols() {
        return Err(Error::Shape(format!(
            "heteroscedastic classifier needs {} outputs, has {}",
            2 * targets.ncols(),
            mlp.n_outputs()
        )));
    }
    if mc == 0 {
        return Err(Error::Parameter("need at least one logit sample".into()));
    }
    let (out, cache) = point_forward_batch(mlp, x, mask_seed);
    let (loss, dout) = het_class_head(&out, targets, mc, eps_seed);
    Ok((loss, point_backward(mlp, &cache, dout)))
}

fn shuffle(order: &mut [usize], seed: Seed) {
    let mut rng = seed.rng();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Mini-batch SGD with momentum. `step_fn(mlp, batch_indices,
/// step_seed)` returns the batch loss and gradients; the step seed
/// feeds dropout masks and any sampling inside the loss.
pub(crate) fn train_loop<F>(
    mlp: &mut Mlp,
    n_samples: usize,
    hyper: &Hyper,
    seed: Seed,
    mut step_fn: F,
) -> Result<()>
where
    F: FnMut(&Mlp, &[usize], Seed) -> Result<(f64, Grads)>,
{
    if n_samples == 0 {
        return Err(Error::Parameter("empty training set".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    let mut vel = Grads::zeros_like(mlp);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let shuffle_seed = seed.derive_str("shuffle");
    let step_seed = seed.derive_str("step");
    let mut step = 0usize;
    for epoch in 0..hyper.epochs {
        shuffle(&mut order, shuffle_seed.derive(epoch as u64));
        for chunk in order.chunks(hyper.batch) {
            let (loss, grads) = step_fn(mlp, chunk, step_seed.derive(step as u64))?;
            if !loss.is_finite() {
                return Err(Error::Training { step, detail: format!("loss = {loss}") });
            }
            for l in 0..mlp.weights.len() {
                vel.dw[l].zip_mut_with(&grads.dw[l], |v, &g| {
                    *v = hyper.momentum * *v - hyper.lr * g;
                });
                vel.db[l].zip_mut_with(&grads.db[l], |v, &g| {
                    *v = hyper.momentum * *v - hyper.lr * g;
                });
                mlp.weights[l] += &vel.dw[l];
                mlp.biases[l] += &vel.db[l];
            }
            step += 1;
        }
    }
    Ok(())
}

fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

fn train_matrix(ds: &RegressionDataset) -> (Array2<f64>, Vec<f64>) {
    let train: Vec<_> = ds.train().collect();
    let mut x = Array2::zeros((train.len(), 2));
    let mut y = Vec::with_capacity(train.len());
    for (i, s) in train.iter().enumerate() {
        x[[i, 0]] = s.d_noisy;
        x[[i, 1]] = s.h_noisy;
        y.push(s.b_true);
    }
    (x, y)
}

/// Train the heteroscedastic regression net on the dataset's train
/// split. Inputs and target are standardized by train-split statistics.
pub fn train_regression(
    ds: &RegressionDataset,
    layer_sizes: &[usize],
    hyper: &Hyper,
    seed: Seed,
) -> Result<RegressionModel> {
    let (x_raw, y_raw) = train_matrix(ds);
    if x_raw.nrows() == 0 {
        return Err(Error::Parameter("dataset has no train split".into()));
    }
    let norm = Standardizer::fit(x_raw.view(), &y_raw);
    let mut x = x_raw;
    for (c, mut col) in x.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - norm.x_mean[c]) / norm.x_std[c]);
    }
    let y: Vec<f64> = y_raw.iter().map(|&v| norm.y_to_std(v)).collect();

    let mut mlp = Mlp::new(layer_sizes, hyper.dropout, seed.derive_str("init"))?;
    train_loop(&mut mlp, y.len(), hyper, seed, |mlp, idx, step_seed| {
        let xb = gather_rows(&x, idx);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        gaussian_nll_loss_grads(mlp, xb.view(), &yb, Some(step_seed))
    })?;
    Ok(RegressionModel { mlp, norm, mode: TrainMode::Point })
}

/// Train the input-variance-aware variant: moments propagate through
/// every layer and the loss sees the total predictive variance, so the
/// log-variance head learns the spread not explained by input noise.
pub fn train_regression_adf(
    ds: &RegressionDataset,
    layer_sizes: &[usize],
    hyper: &Hyper,
    seed: Seed,
) -> Result<RegressionModel> {
    let alpha = ds.config.alpha;
    let (x_raw, y_raw) = train_matrix(ds);
    if x_raw.nrows() == 0 {
        return Err(Error::Parameter("dataset has no train split".into()));
    }
    let norm = Standardizer::fit(x_raw.view(), &y_raw);
    let mut x = Array2::zeros(x_raw.raw_dim());
    let mut xv = Array2::zeros(x_raw.raw_dim());
    for i in 0..x_raw.nrows() {
        for c in 0..2 {
            x[[i, c]] = (x_raw[[i, c]] - norm.x_mean[c]) / norm.x_std[c];
            let sd = alpha * x_raw[[i, c]];
            xv[[i, c]] = sd * sd / (norm.x_std[c] * norm.x_std[c]);
        }
    }
    let y: Vec<f64> = y_raw.iter().map(|&v| norm.y_to_std(v)).collect();

    let mut mlp = Mlp::new(layer_sizes, hyper.dropout, seed.derive_str("init"))?;
    train_loop(&mut mlp, y.len(), hyper, seed, |mlp, idx, step_seed| {
        let xb = gather_rows(&x, idx);
        let vb = gather_rows(&xv, idx);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        adf_nll_loss_grads(mlp, xb.view(), vb.view(), &yb, Some(step_seed))
    })?;
    Ok(RegressionModel { mlp, norm, mode: TrainMode::Adf })
}

/// Train a softmax classifier on probability-vector targets.
pub fn train_soft_classifier(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    layer_sizes: &[usize],
    kind: ClassLoss,
    hyper: &Hyper,
    seed: Seed,
) -> Result<Mlp> {
    let x = x.to_owned();
    let targets = targets.to_owned();
    let mut mlp = Mlp::new(layer_sizes, hyper.dropout, seed.derive_str("init"))?;
    train_loop(&mut mlp, x.nrows(), hyper, seed, |mlp, idx, step_seed| {
        let xb = gather_rows(&x, idx);
        let tb = gather_rows(&targets, idx);
        soft_target_loss_grads(mlp, xb.view(), tb.view(), kind, Some(step_seed))
    })?;
    Ok(mlp)
}

/// Train a classifier that also predicts per-class logit variance.
pub fn train_het_classifier(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    layer_sizes: &[usize],
    mc: usize,
    hyper: &Hyper,
    seed: Seed,
) -> Result<Mlp> {
    let x = x.to_owned();
    let targets = targets.to_owned();
    let mut mlp = Mlp::new(layer_sizes, hyper.dropout, seed.derive_str("init"))?;
    let eps_root = seed.derive_str("logit-eps");
    let mut step = 0u64;
    train_loop(&mut mlp, x.nrows(), hyper, seed, |mlp, idx, step_seed| {
        let xb = gather_rows(&x, idx);
        let tb = gather_rows(&targets, idx);
        let r = het_class_loss_grads(mlp, xb.view(), tb.view(), mc, Some(step_seed), eps_root.derive(step));
        step += 1;
        r
    })?;
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomass::{generate_dataset, DatasetConfig, SplitStrategy};
    use approx::assert_relative_eq;
    use ndarray::array;

    /// Compare analytic gradients against central finite differences.
    fn assert_grads_match<F>(mlp: &mut Mlp, analytic: &Grads, loss: F)
    where
        F: Fn(&Mlp) -> f64,
    {
        let h = 1e-5;
        for l in 0..mlp.weights.len() {
            for idx in 0..mlp.weights[l].len() {
                let orig = mlp.weights[l].as_slice().unwrap()[idx];
                mlp.weights[l].as_slice_mut().unwrap()[idx] = orig + h;
                let up = loss(mlp);
                mlp.weights[l].as_slice_mut().unwrap()[idx] = orig - h;
                let down = loss(mlp);
                mlp.weights[l].as_slice_mut().unwrap()[idx] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = analytic.dw[l].as_slice().unwrap()[idx];
                let err = (num - ana).abs();
                assert!(
                    err <= 1e-6 + 1e-4 * num.abs().max(ana.abs()),
                    "layer {l} weight {idx}: analytic {ana} vs numeric {num}"
                );
            }
            for idx in 0..mlp.biases[l].len() {
                let orig = mlp.biases[l][idx];
                mlp.biases[l][idx] = orig + h;
                let up = loss(mlp);
                mlp.biases[l][idx] = orig - h;
                let down = loss(mlp);
                mlp.biases[l][idx] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = analytic.db[l][idx];
                let err = (num - ana).abs();
                assert!(
                    err <= 1e-6 + 1e-4 * num.abs().max(ana.abs()),
                    "layer {l} bias {idx}: analytic {ana} vs numeric {num}"
                );
            }
        }
    }

    fn random_batch(n: usize, dim: usize, seed: Seed) -> Array2<f64> {
        let mut rng = seed.rng();
        let mut x = Array2::zeros((n, dim));
        for v in x.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        x
    }

    #[test]
    fn gaussian_nll_gradients_match_finite_differences() {
        for trial in 0..6u64 {
            let sizes = [[2usize, 5, 4, 2].as_slice(), [3, 6, 2].as_slice()][trial as usize % 2];
            let dropout = if trial % 3 == 0 { 0.2 } else { 0.0 };
            let mut mlp = Mlp::new(sizes, dropout, Seed(trial)).unwrap();
            let x = random_batch(4, sizes[0], Seed(100 + trial));
            let y: Vec<f64> = (0..4).map(|i| (i as f64) * 0.3 - 0.5).collect();
            let mask_seed = Some(Seed(55));
            let (_, grads) = gaussian_nll_loss_grads(&mlp, x.view(), &y, mask_seed).unwrap();
            assert_grads_match(&mut mlp, &grads, |m| {
                gaussian_nll_loss_grads(m, x.view(), &y, mask_seed).unwrap().0
            });
        }
    }

    #[test]
    fn adf_nll_gradients_match_finite_differences() {
        for trial in 0..4u64 {
            let sizes: &[usize] = &[2, 5, 4, 2];
            let dropout = if trial % 2 == 0 { 0.15 } else { 0.0 };
            let mut mlp = Mlp::new(sizes, dropout, Seed(10 + trial)).unwrap();
            let x = random_batch(3, 2, Seed(200 + trial));
            let xv = random_batch(3, 2, Seed(300 + trial)).mapv(|v| v * v * 0.5);
            let y = vec![0.2, -0.4, 1.0];
            let mask_seed = Some(Seed(77));
            let (_, grads) =
                adf_nll_loss_grads(&mlp, x.view(), xv.view(), &y, mask_seed).unwrap();
            assert_grads_match(&mut mlp, &grads, |m| {
                adf_nll_loss_grads(m, x.view(), xv.view(), &y, mask_seed).unwrap().0
            });
        }
    }

    #[test]
    fn soft_target_gradients_match_finite_differences() {
        for (trial, &kind) in [ClassLoss::CrossEntropy, ClassLoss::Kl].iter().enumerate() {
            let sizes: &[usize] = &[3, 6, 4];
            let mut mlp = Mlp::new(sizes, 0.0, Seed(20 + trial as u64)).unwrap();
            let x = random_batch(5, 3, Seed(400 + trial as u64));
            let mut t = random_batch(5, 4, Seed(500 + trial as u64)).mapv(|v| v.abs() + 0.05);
            for mut row in t.outer_iter_mut() {
                let s: f64 = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let (_, grads) =
                soft_target_loss_grads(&mlp, x.view(), t.view(), kind, None).unwrap();
            assert_grads_match(&mut mlp, &grads, |m| {
                soft_target_loss_grads(m, x.view(), t.view(), kind, None).unwrap().0
            });
        }
    }

    #[test]
    fn het_class_gradients_match_finite_differences() {
        let sizes: &[usize] = &[3, 5, 4]; // 2 classes -> 4 outputs
        let mut mlp = Mlp::new(sizes, 0.0, Seed(31)).unwrap();
        let x = random_batch(4, 3, Seed(600));
        let t = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
        let eps_seed = Seed(61);
        let (_, grads) =
            het_class_loss_grads(&mlp, x.view(), t.view(), 8, None, eps_seed).unwrap();
        assert_grads_match(&mut mlp, &grads, |m| {
            het_class_loss_grads(m, x.view(), t.view(), 8, None, eps_seed).unwrap().0
        });
    }

    #[test]
    fn zero_residual_head_gradient_is_zero() {
        let out = array![[1.0, 0.0]];
        let (loss, dout) = gaussian_nll_head(&out, &[1.0]);
        assert_eq!(loss, 0.0);
        assert_eq!(dout[[0, 0]], 0.0);
    }

    #[test]
    fn doubling_residuals_quadruples_residual_term() {
        let s = 0.7;
        let out1 = array![[0.0, s]];
        let out2 = array![[0.0, s]];
        let (l1, _) = gaussian_nll_head(&out1, &[1.0]);
        let (l2, _) = gaussian_nll_head(&out2, &[2.0]);
        let res1 = l1 - 0.5 * s;
        let res2 = l2 - 0.5 * s;
        assert_relative_eq!(res2, 4.0 * res1, max_relative = 1e-12);
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let cfg = DatasetConfig {
            alpha: 0.1,
            n_per_axis: 20,
            strategy: SplitStrategy::Random80_20,
            seed: Seed(2),
        };
        let ds = generate_dataset(&cfg).unwrap();
        let hyper = Hyper { epochs: 0, ..Default::default() };
        let m = train_regression(&ds, &[2, 8, 2], &hyper, Seed(5)).unwrap();
        let fresh = Mlp::new(&[2, 8, 2], hyper.dropout, Seed(5).derive_str("init")).unwrap();
        assert_eq!(m.mlp.weights, fresh.weights);
        assert_eq!(m.mlp.biases, fresh.biases);
    }

    #[test]
    fn first_epoch_reduces_training_loss() {
        let cfg = DatasetConfig {
            alpha: 0.1,
            n_per_axis: 40,
            strategy: SplitStrategy::Random80_20,
            seed: Seed(3),
        };
        let ds = generate_dataset(&cfg).unwrap();
        let eval_loss = |model: &RegressionModel| {
            let (x_raw, y_raw) = train_matrix(&ds);
            let mut x = x_raw;
            for (c, mut col) in x.columns_mut().into_iter().enumerate() {
                col.mapv_inplace(|v| (v - model.norm.x_mean[c]) / model.norm.x_std[c]);
            }
            let y: Vec<f64> = y_raw.iter().map(|&v| model.norm.y_to_std(v)).collect();
            let out = model.mlp.forward_batch(x.view()).unwrap();
            gaussian_nll_head(&out, &y).0
        };
        let h0 = Hyper { epochs: 0, ..Default::default() };
        let h1 = Hyper { epochs: 1, ..Default::default() };
        let before = eval_loss(&train_regression(&ds, &[2, 16, 32, 32, 2], &h0, Seed(6)).unwrap());
        let after = eval_loss(&train_regression(&ds, &[2, 16, 32, 32, 2], &h1, Seed(6)).unwrap());
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let cfg = DatasetConfig {
            alpha: 0.1,
            n_per_axis: 25,
            strategy: SplitStrategy::Random80_20,
            seed: Seed(4),
        };
        let ds = generate_dataset(&cfg).unwrap();
        let hyper = Hyper { epochs: 3, ..Default::default() };
        let a = train_regression(&ds, &[2, 8, 8, 2], &hyper, Seed(9)).unwrap();
        let b = train_regression(&ds, &[2, 8, 8, 2], &hyper, Seed(9)).unwrap();
        assert_eq!(a.mlp.weights, b.mlp.weights);
        assert_eq!(a.mlp.biases, b.mlp.biases);
    }
}
