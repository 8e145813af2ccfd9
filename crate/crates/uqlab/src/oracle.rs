//! Reference aleatoric uncertainty for the regression benchmark.
//!
//! The generating model is known exactly, so the label noise induced by
//! input noise can be measured directly: lay a dense grid of true
//! (diameter, height) points over the variable ranges, perturb each
//! with the benchmark noise model, evaluate the ground-truth equation
//! on the perturbed inputs, and pool the squared deviations of each
//! output from its own true value over the `k` points nearest to every
//! lattice node. The pooled spread mixes the noise distributions of the
//! whole neighborhood, which is what a network trained on pooled data
//! actually sees. A parametric power-law fit smooths the Monte-Carlo
//! noise out of the raw table, and a first-order delta-method oracle
//! provides an independent validation route.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biomass::{biomass, D_RANGE, H_RANGE, RHO};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{standard_normal, Seed};

/// First-order relative spread of the ground-truth model under the
/// benchmark noise: `sigma_B / B = 0.976 * alpha * sqrt(5)`.
pub const DELTA_FACTOR: f64 = 0.976 * 2.236_067_977_499_79;

/// Monte-Carlo oracle settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// True points per axis of the dense grid (`n^2` points total).
    pub n_dense_per_axis: usize,
    /// Neighbors pooled per lattice node.
    pub k_neighbors: usize,
    /// Lattice nodes per axis (cell-centered over the variable ranges).
    pub lattice_per_axis: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { n_dense_per_axis: 4000, k_neighbors: 1600, lattice_per_axis: 50 }
    }
}

/// Power-law fit `sigma = c * (d^2 h)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub p: f64,
}

/// Gridded reference standard deviation of the biomass labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSigmaTable {
    pub alpha: f64,
    pub config: OracleConfig,
    pub seed: Seed,
    /// Lattice node coordinates (cell centers), length `lattice_per_axis`.
    pub d_nodes: Vec<f64>,
    pub h_nodes: Vec<f64>,
    /// Row-major `sigma[i_d * lattice + j_h]`, kg.
    pub sigma_raw: Vec<f64>,
    /// Filled by [`smooth_sigma`]; zeros until then.
    pub sigma_smoothed: Vec<f64>,
    pub fit: Option<PowerLawFit>,
}

/// First-order propagation of `sigma_D = alpha*D`, `sigma_H = alpha*H`
/// through the ground-truth model in log space.
pub fn delta_method_sigma(d: f64, h: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(DELTA_FACTOR * alpha * biomass(d, h, RHO)?)
}

#[inline]
fn norm_u(d: f64) -> f64 {
    (d - D_RANGE.0) / (D_RANGE.1 - D_RANGE.0)
}

#[inline]
fn norm_v(h: f64) -> f64 {
    (h - H_RANGE.0) / (H_RANGE.1 - H_RANGE.0)
}

/// Squared deviation of one grid point's noisy output from its own true
/// value. The per-point stream depends only on (seed, point index), so
/// deviations for different alphas share their underlying draws and the
/// table is monotone in alpha.
#[inline]
fn sq_deviation(i: usize, j: usize, n: usize, alpha: f64, noise_seed: Seed) -> f64 {
    let d = D_RANGE.0 + (D_RANGE.1 - D_RANGE.0) * i as f64 / (n - 1) as f64;
    let h = H_RANGE.0 + (H_RANGE.1 - H_RANGE.0) * j as f64 / (n - 1) as f64;
    let mut rng = noise_seed.derive((i * n + j) as u64).rng();
    let dn = (d + alpha * d * standard_normal(&mut rng)).max(0.0);
    let hn = (h + alpha * h * standard_normal(&mut rng)).max(0.0);
    let b_true = 0.0673 * (RHO * d * d * h).powf(0.976);
    let b_noisy = 0.0673 * (RHO * dn * dn * hn).powf(0.976);
    let dev = b_noisy - b_true;
    dev * dev
}

/// Pooled sigma at an arbitrary query point, using the same machinery
/// as the full table.
pub fn pooled_sigma_at(
    d: f64,
    h: f64,
    alpha: f64,
    config: &OracleConfig,
    seed: Seed,
) -> Result<f64> {
    validate(alpha, config)?;
    Ok(node_sigma(norm_u(d), norm_v(h), alpha, config, seed.derive_str("oracle-noise")))
}

fn validate(alpha: f64, config: &OracleConfig) -> Result<()> {
    if !(alpha >= 0.0) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = config.n_dense_per_axis;
    if n < 2 || config.lattice_per_axis < 2 {
        return Err(Error::Config("need at least 2 grid points per axis".into()));
    }
    if config.k_neighbors == 0 || config.k_neighbors > n * n {
        return Err(Error::Config(format!(
            "k_neighbors = {} exceeds the {} available points",
            config.k_neighbors,
            n * n
        )));
    }
    Ok(())
}

/// Pooled sigma around the node at normalized coordinates `(u0, v0)`.
fn node_sigma(u0: f64, v0: f64, alpha: f64, config: &OracleConfig, noise_seed: Seed) -> f64 {
    let n = config.n_dense_per_axis;
    let k = config.k_neighbors;
    let cell = 1.0 / (n - 1) as f64;
    let ci = ((u0 / cell).round() as i64).clamp(0, n as i64 - 1);
    let cj = ((v0 / cell).round() as i64).clamp(0, n as i64 - 1);

    // Expand a square index window until the k-th nearest candidate is
    // provably inside it: any point outside Chebyshev index radius r is
    // at least (r - 0.5) * cell away in normalized coordinates.
    let mut r = ((k as f64 / std::f64::consts::PI).sqrt().ceil() as i64) + 1;
    let mut nearest: Vec<(f64, usize, usize)>;
    loop {
        let (ilo, ihi) = ((ci - r).max(0) as usize, ((ci + r) as usize).min(n - 1));
        let (jlo, jhi) = ((cj - r).max(0) as usize, ((cj + r) as usize).min(n - 1));
        let mut cand = Vec::with_capacity((ihi - ilo + 1) * (jhi - jlo + 1));
        for i in ilo..=ihi {
            let du = i as f64 * cell - u0;
            for j in jlo..=jhi {
                let dv = j as f64 * cell - v0;
                cand.push((du * du + dv * dv, i, j));
            }
        }
        if cand.len() >= k {
            cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            cand.truncate(k);
            let kth = cand.iter().map(|c| c.0).fold(0.0f64, f64::max).sqrt();
            let covered = (r as f64 - 0.5) * cell;
            let clipped = ci - r < 0
                || cj - r < 0
                || ci + r > n as i64 - 1
                || cj + r > n as i64 - 1;
            // A window clipped by the domain boundary still covers
            // everything within `covered` of the node, because there is
            // nothing beyond the boundary.
            if kth <= covered || (clipped && window_is_whole_side(ci, cj, r, n)) {
                nearest = cand;
                break;
            }
        }
        r *= 2;
        if r as usize >= 2 * n {
            // Window spans the whole grid; candidates are complete.
            let (ilo, ihi) = (0usize, n - 1);
            let mut cand = Vec::with_capacity(n * n);
            for i in ilo..=ihi {
                let du = i as f64 * cell - u0;
                for j in 0..n {
                    let dv = j as f64 * cell - v0;
                    cand.push((du * du + dv * dv, i, j));
                }
            }
            cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            cand.truncate(k);
            nearest = cand;
            break;
        }
    }

    let sum: f64 = nearest.iter().map(|&(_, i, j)| sq_deviation(i, j, n, alpha, noise_seed)).sum();
    (sum / k as f64).sqrt()
}

fn window_is_whole_side(ci: i64, cj: i64, r: i64, n: usize) -> bool {
    // Conservative: only treat the window as complete-by-boundary when
    // it covers the full grid in both axes.
    ci - r < 0 && cj - r < 0 && ci + r > n as i64 - 1 && cj + r > n as i64 - 1
}

/// Build the raw reference table at one noise level.
pub fn pooled_sigma(alpha: f64, config: &OracleConfig, seed: Seed) -> Result<ReferenceSigmaTable> {
    validate(alpha, config)?;
    let l = config.lattice_per_axis;
    let d_nodes: Vec<f64> = (0..l)
        .map(|a| D_RANGE.0 + (D_RANGE.1 - D_RANGE.0) * (a as f64 + 0.5) / l as f64)
        .collect();
    let h_nodes: Vec<f64> = (0..l)
        .map(|a| H_RANGE.0 + (H_RANGE.1 - H_RANGE.0) * (a as f64 + 0.5) / l as f64)
        .collect();
    let noise_seed = seed.derive_str("oracle-noise");
    let cfg = *config;
    let sigma_raw = par::map_indexed(l * l, move |idx| {
        let (i, j) = (idx / l, idx % l);
        let u0 = (i as f64 + 0.5) / l as f64;
        let v0 = (j as f64 + 0.5) / l as f64;
        node_sigma(u0, v0, alpha, &cfg, noise_seed)
    });
    Ok(ReferenceSigmaTable {
        alpha,
        config: cfg,
        seed,
        d_nodes,
        h_nodes,
        sigma_raw,
        sigma_smoothed: vec![0.0; l * l],
        fit: None,
    })
}

/// Least-squares fit of `sigma = c * (d^2 h)^p` in log space, evaluated
/// back on the lattice. A table of all-zero raw sigmas smooths to zero.
pub fn smooth_sigma(mut table: ReferenceSigmaTable) -> ReferenceSigmaTable {
    let l = table.config.lattice_per_axis;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..l {
        for j in 0..l {
            let s = table.sigma_raw[i * l + j];
            if s > 0.0 {
                let g = table.d_nodes[i] * table.d_nodes[i] * table.h_nodes[j];
                xs.push(g.ln());
                ys.push(s.ln());
            }
        }
    }
    if xs.len() < 2 {
        table.sigma_smoothed = vec![0.0; l * l];
        table.fit = None;
        return table;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let p = sxy / sxx;
    let c = (my - p * mx).exp();
    for i in 0..l {
        for j in 0..l {
            let g = table.d_nodes[i] * table.d_nodes[i] * table.h_nodes[j];
            table.sigma_smoothed[i * l + j] = c * g.powf(p);
        }
    }
    table.fit = Some(PowerLawFit { c, p });
    table
}

/// Which field of the table to interpolate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaField {
    Raw,
    Smoothed,
}

impl ReferenceSigmaTable {
    /// Bilinear interpolation at `(d, h)`; queries outside the node
    /// hull clamp to the edge cells.
    pub fn interp(&self, field: SigmaField, d: f64, h: f64) -> f64 {
        let l = self.config.lattice_per_axis;
        let values = match field {
            SigmaField::Raw => &self.sigma_raw,
            SigmaField::Smoothed => &self.sigma_smoothed,
        };
        let a = (norm_u(d) * l as f64 - 0.5).clamp(0.0, (l - 1) as f64);
        let b = (norm_v(h) * l as f64 - 0.5).clamp(0.0, (l - 1) as f64);
        let (i0, j0) = (a.floor() as usize, b.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(l - 1), (j0 + 1).min(l - 1));
        let (ta, tb) = (a - i0 as f64, b - j0 as f64);
        let v00 = values[i0 * l + j0];
        let v01 = values[i0 * l + j1];
        let v10 = values[i1 * l + j0];
        let v11 = values[i1 * l + j1];
        (1.0 - ta) * ((1.0 - tb) * v00 + tb * v01) + ta * ((1.0 - tb) * v10 + tb * v11)
    }

    /// Write `d,h,sigma_raw,sigma_smoothed` rows, one per lattice node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["d", "h", "sigma_raw", "sigma_smoothed"])?;
        let l = self.config.lattice_per_axis;
        for i in 0..l {
            for j in 0..l {
                wtr.write_record([
                    self.d_nodes[i].to_string(),
                    self.h_nodes[j].to_string(),
                    self.sigma_raw[i * l + j].to_string(),
                    self.sigma_smoothed[i * l + j].to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn meta(&self) -> OracleMeta {
        OracleMeta {
            alpha: self.alpha,
            config: self.config,
            seed: self.seed,
            fit: self.fit,
        }
    }

    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let f = std::fs::File::create(csv_path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        std::fs::write(meta_path, serde_json::to_string_pretty(&self.meta())? + "\n")?;
        Ok(())
    }
}

/// Sidecar metadata for a serialized table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleMeta {
    pub alpha: f64,
    pub config: OracleConfig,
    pub seed: Seed,
    pub fit: Option<PowerLawFit>,
}
