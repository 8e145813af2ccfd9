//! Tree-biomass regression benchmark.
//!
//! Samples (diameter, height) pairs from fitted Gamma distributions,
//! labels them through the allometric ground-truth model
//! `B = 0.0673 * (rho * D^2 * H)^0.976`, corrupts the inputs with
//! multiplicative-scale Gaussian noise and splits the result into train
//! and test sets either at random (80/20) or by a checkerboard over the
//! input plane.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_gamma, standard_normal, Seed, DIAMETER_GAMMA, HEIGHT_GAMMA};

/// Fixed wood density, g/cm^3.
pub const RHO: f64 = 0.65;
/// Retained samples must not exceed this biomass (kg); rare huge trees
/// are discarded.
pub const B_THRESHOLD: f64 = 2236.8;
/// Valid diameter range, cm.
pub const D_RANGE: (f64, f64) = (5.0, 150.0);
/// Valid height range, m.
pub const H_RANGE: (f64, f64) = (1.2, 120.0);

/// Ground-truth biomass in kg for diameter `d` (cm), height `h` (m) and
/// wood density `rho` (g/cm^3).
pub fn biomass(d: f64, h: f64, rho: f64) -> Result<f64> {
    if d < 0.0 || h < 0.0 {
        return Err(Error::Domain(format!("negative tree dimensions: d={d}, h={h}")));
    }
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("wood density must be > 0, got {rho}")));
    }
    Ok(0.0673 * (rho * d * d * h).powf(0.976))
}

/// Train/test tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One benchmark record. `b_true` is always computed from the
/// noise-free dimensions; test samples carry noise-free inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeSample {
    pub d_true: f64,
    pub h_true: f64,
    pub d_noisy: f64,
    pub h_noisy: f64,
    pub b_true: f64,
    pub split: Split,
}

/// Split strategy for [`generate_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Random80_20,
    Checkerboard,
}

/// Alternating grid-cell assignment of the input plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerboardGrid {
    pub d_range: (f64, f64),
    pub h_range: (f64, f64),
    pub cells_per_axis: usize,
    /// `true` (default): cells with even `i + j` are train.
    pub parity_train_even: bool,
}

impl Default for CheckerboardGrid {
    fn default() -> Self {
        CheckerboardGrid {
            d_range: D_RANGE,
            h_range: H_RANGE,
            cells_per_axis: 5,
            parity_train_even: true,
        }
    }
}

impl CheckerboardGrid {
    /// Cell index along one axis; half-open cells, last cell closed.
    fn cell(&self, x: f64, lo: f64, hi: f64) -> Result<usize> {
        if x < lo || x > hi {
            return Err(Error::Domain(format!("point {x} outside grid range [{lo}, {hi}]")));
        }
        let w = (hi - lo) / self.cells_per_axis as f64;
        let i = ((x - lo) / w) as usize;
        Ok(i.min(self.cells_per_axis - 1))
    }

    /// Deterministic cell-parity assignment of a noise-free point.
    pub fn assign(&self, d: f64, h: f64) -> Result<Split> {
        let i = self.cell(d, self.d_range.0, self.d_range.1)?;
        let j = self.cell(h, self.h_range.0, self.h_range.1)?;
        let even = (i + j) % 2 == 0;
        Ok(if even == self.parity_train_even { Split::Train } else { Split::Test })
    }
}

/// Generation parameters; a dataset is a pure function of this struct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Relative noise level: input stddev is `alpha * value` (input SNR
    /// `1/alpha^2`).
    pub alpha: f64,
    /// Samples drawn per axis; the grid has `n_per_axis^2` pairs before
    /// the biomass-threshold discard.
    pub n_per_axis: usize,
    pub strategy: SplitStrategy,
    pub seed: Seed,
}

/// A generated dataset plus the config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub config: DatasetConfig,
    pub samples: Vec<TreeSample>,
    /// Pair count before the threshold discard (`n_per_axis^2`).
    pub pre_discard: usize,
}

impl RegressionDataset {
    pub fn train(&self) -> impl Iterator<Item = &TreeSample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &TreeSample> {
        self.samples.iter().filter(|s| s.split == Split::Test)
    }
}

const STREAM_D_AXIS: u64 = 1;
const STREAM_H_AXIS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// Rejection-sample `n` values from `params` restricted to `[lo, hi]`.
fn axis_samples(
    params: &crate::rng::GammaParams,
    n: usize,
    lo: f64,
    hi: f64,
    seed: Seed,
) -> Result<Vec<f64>> {
    let dist = rand_distr::Gamma::new(params.shape, params.scale)
        .map_err(|e| Error::Parameter(format!("gamma: {e}")))?;
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = params.location + rand_distr::Distribution::sample(&dist, &mut rng);
        if (lo..=hi).contains(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Generate the regression benchmark.
///
/// Steps: draw `n_per_axis` diameters and heights from the fitted
/// Gammas (rejected to the variable ranges), form the Cartesian
/// product, add `N(0, (alpha*value)^2)` noise to each input, label each
/// pair from its noise-free dimensions, discard pairs whose true
/// biomass exceeds [`B_THRESHOLD`], and tag splits. Checkerboard
/// assignment uses the noise-free coordinates; test samples keep
/// noise-free inputs under either strategy.
pub fn generate_dataset(config: &DatasetConfig) -> Result<RegressionDataset> {
    if !(config.alpha >= 0.0) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {}", config.alpha)));
    }
    if config.n_per_axis < 2 {
        return Err(Error::Parameter(format!(
            "n_per_axis must be >= 2, got {}",
            config.n_per_axis
        )));
    }
    let n = config.n_per_axis;
    let ds = axis_samples(&DIAMETER_GAMMA, n, D_RANGE.0, D_RANGE.1, config.seed.derive(STREAM_D_AXIS))?;
    let hs = axis_samples(&HEIGHT_GAMMA, n, H_RANGE.0, H_RANGE.1, config.seed.derive(STREAM_H_AXIS))?;

    let mut noise_rng = config.seed.derive(STREAM_NOISE).rng();
    let mut samples = Vec::with_capacity(n * n);
    for &d in &ds {
        for &h in &hs {
            // Noise draws happen for every pair so the stream does not
            // depend on the discard outcome.
            let ed = config.alpha * d * standard_normal(&mut noise_rng);
            let eh = config.alpha * h * standard_normal(&mut noise_rng);
            let b = biomass(d, h, RHO)?;
            if b > B_THRESHOLD {
                continue;
            }
            samples.push(TreeSample {
                d_true: d,
                h_true: h,
                d_noisy: (d + ed).max(0.0),
                h_noisy: (h + eh).max(0.0),
                b_true: b,
                split: Split::Train,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Generation("no samples survived the biomass threshold".into()));
    }

    match config.strategy {
        SplitStrategy::Random80_20 => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = config.seed.derive(STREAM_SPLIT).rng();
            // Fisher-Yates
            for i in (1..order.len()).rev() {
                let j = rand::Rng::gen_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            let n_train = (samples.len() as f64 * 0.8).floor() as usize;
            for &idx in order.iter().skip(n_train) {
                samples[idx].split = Split::Test;
            }
        }
        SplitStrategy::Checkerboard => {
            let grid = CheckerboardGrid::default();
            for s in &mut samples {
                s.split = grid.assign(s.d_true, s.h_true)?;
            }
        }
    }
    for s in &mut samples {
        if s.split == Split::Test {
            s.d_noisy = s.d_true;
            s.h_noisy = s.h_true;
        }
    }

    Ok(RegressionDataset { config: *config, samples, pre_discard: n * n })
}

/// Dataset metadata written next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: DatasetConfig,
    pub pre_discard: usize,
    pub retained: usize,
    pub train: usize,
    pub test: usize,
}

impl RegressionDataset {
    pub fn meta(&self) -> DatasetMeta {
        let train = self.train().count();
        DatasetMeta {
            config: self.config,
            pre_discard: self.pre_discard,
            retained: self.samples.len(),
            train,
            test: self.samples.len() - train,
        }
    }

    /// Write `d_true,h_true,d_noisy,h_noisy,b_true,split` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["d_true", "h_true", "d_noisy", "h_noisy", "b_true", "split"])?;
        for s in &self.samples {
            wtr.write_record([
                s.d_true.to_string(),
                s.h_true.to_string(),
                s.d_noisy.to_string(),
                s.h_noisy.to_string(),
                s.b_true.to_string(),
                match s.split {
                    Split::Train => "train".to_string(),
                    Split::Test => "test".to_string(),
                },
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, meta: &DatasetMeta) -> Result<RegressionDataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parameter(format!("missing csv column {i}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parameter(format!("bad csv number: {e}")))
            };
            let split = match rec.get(5) {
                Some("train") => Split::Train,
                Some("test") => Split::Test,
                other => {
                    return Err(Error::Parameter(format!("bad split tag {other:?}")));
                }
            };
            samples.push(TreeSample {
                d_true: field(0)?,
                h_true: field(1)?,
                d_noisy: field(2)?,
                h_noisy: field(3)?,
                b_true: field(4)?,
                split,
            });
        }
        Ok(RegressionDataset {
            config: meta.config,
            samples,
            pre_discard: meta.pre_discard,
        })
    }

    /// Write the CSV and its companion metadata JSON.
    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let f = std::fs::File::create(csv_path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(meta_path, meta + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn biomass_zero_diameter() {
        assert_eq!(biomass(0.0, 20.0, RHO).unwrap(), 0.0);
    }

    #[test]
    fn biomass_reference_point() {
        let b = biomass(30.0, 20.0, RHO).unwrap();
        assert!((b - 628.9).abs() <= 0.1, "b = {b}");
    }

    #[test]
    fn biomass_rejects_negative_inputs() {
        assert!(biomass(-1.0, 20.0, RHO).is_err());
        assert!(biomass(30.0, -1.0, RHO).is_err());
        assert!(biomass(30.0, 20.0, 0.0).is_err());
    }

    #[test]
    fn checkerboard_hand_cells() {
        let grid = CheckerboardGrid::default();
        // cells are 29 cm x 23.76 m
        assert_eq!(grid.assign(10.0, 5.0).unwrap(), Split::Train); // (0,0)
        assert_eq!(grid.assign(40.0, 5.0).unwrap(), Split::Test); // (1,0)
        assert_eq!(grid.assign(150.0, 120.0).unwrap(), Split::Train); // (4,4), closed
        assert!(grid.assign(4.0, 5.0).is_err());
        assert!(grid.assign(10.0, 121.0).is_err());
    }

    #[test]
    fn checkerboard_parity_flips() {
        let grid = CheckerboardGrid { parity_train_even: false, ..Default::default() };
        assert_eq!(grid.assign(10.0, 5.0).unwrap(), Split::Test);
    }

    fn small_config(alpha: f64, strategy: SplitStrategy) -> DatasetConfig {
        DatasetConfig { alpha, n_per_axis: 60, strategy, seed: Seed(11) }
    }

    #[test]
    fn zero_alpha_keeps_inputs_noise_free() {
        let ds = generate_dataset(&small_config(0.0, SplitStrategy::Random80_20)).unwrap();
        for s in &ds.samples {
            assert_eq!(s.d_noisy, s.d_true);
            assert_eq!(s.h_noisy, s.h_true);
        }
    }

    #[test]
    fn default_scale_counts() {
        let cfg = DatasetConfig {
            alpha: 0.1,
            n_per_axis: 200,
            strategy: SplitStrategy::Random80_20,
            seed: Seed(1),
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.pre_discard, 40_000);
        assert!(ds.samples.len() <= 40_000);
        assert!(!ds.samples.is_empty());
        let train = ds.train().count();
        assert_eq!(train, (ds.samples.len() as f64 * 0.8).floor() as usize);
    }

    #[test]
    fn input_snr_matches_alpha() {
        // (d_noisy - d_true) / (alpha * d_true) pooled over train samples
        // should be standard normal, i.e. input SNR = 1/alpha^2.
        let cfg = small_config(0.1, SplitStrategy::Random80_20);
        let ds = generate_dataset(&cfg).unwrap();
        let zs: Vec<f64> = ds
            .train()
            .map(|s| (s.d_noisy - s.d_true) / (cfg.alpha * s.d_true))
            .collect();
        let n = zs.len() as f64;
        let var = zs.iter().map(|z| z * z).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.05, "normalized noise var {var}");
    }

    #[test]
    fn retention_invariants_hold() {
        let ds = generate_dataset(&small_config(0.2, SplitStrategy::Random80_20)).unwrap();
        for s in &ds.samples {
            assert!(s.d_true >= D_RANGE.0 && s.d_true <= D_RANGE.1);
            assert!(s.h_true >= H_RANGE.0 && s.h_true <= H_RANGE.1);
            assert!(s.b_true <= B_THRESHOLD);
            assert!(s.d_noisy >= 0.0 && s.h_noisy >= 0.0);
            assert_relative_eq!(
                s.b_true,
                biomass(s.d_true, s.h_true, RHO).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn checkerboard_assignment_ignores_noise() {
        let ds = generate_dataset(&small_config(0.2, SplitStrategy::Checkerboard)).unwrap();
        let grid = CheckerboardGrid::default();
        for s in &ds.samples {
            assert_eq!(s.split, grid.assign(s.d_true, s.h_true).unwrap());
            if s.split == Split::Test {
                assert_eq!(s.d_noisy, s.d_true);
            }
        }
        assert!(ds.train().count() > 0);
        assert!(ds.test().count() > 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config(0.1, SplitStrategy::Random80_20);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = generate_dataset(&small_config(0.05, SplitStrategy::Random80_20)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = RegressionDataset::read_csv(&buf[..], &ds.meta()).unwrap();
        assert_eq!(ds.samples, back.samples);
    }

    proptest! {
        #[test]
        fn biomass_monotone_in_each_argument(
            d in 1.0f64..150.0,
            h in 1.2f64..120.0,
            rho in 0.2f64..1.0,
            bump in 0.01f64..5.0,
        ) {
            let b = biomass(d, h, rho).unwrap();
            prop_assert!(biomass(d + bump, h, rho).unwrap() > b);
            prop_assert!(biomass(d, h + bump, rho).unwrap() > b);
            prop_assert!(biomass(d, h, rho + 0.01).unwrap() > b);
        }

        #[test]
        fn biomass_depends_on_d_squared_h_only(
            d in 5.0f64..100.0,
            h in 1.2f64..100.0,
            k in 0.5f64..2.0,
        ) {
            let a = biomass(d, h, RHO).unwrap();
            let b = biomass(k * d, h / (k * k), RHO).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
