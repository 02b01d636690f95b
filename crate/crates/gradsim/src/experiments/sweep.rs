//! Frequency sweep on the circle-embedded sinusoid task.
//!
//! For each frequency and repeat, a fresh network is trained on the toy
//! dataset, its gradient bank is built, and every configured neighbor-count
//! estimator is evaluated on every sample. Cell statistics are reduced to a
//! median over repeats per frequency, and a log-log line is fitted per
//! estimator; the expected behavior is neighbor counts falling roughly like
//! `1/f`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loglog_slope, median};
use crate::data::{gen_toy, ToySpec};
use crate::density::{count_soft_all_fast, GradientBank};
use crate::error::{Error, Result};
use crate::nn::{train, Activation, AdamConfig, Loss, NetworkSpec, TrainConfig};

/// Network and optimizer settings shared by every sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecipe {
    /// Samples on the circle.
    pub n: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Hidden activation. Relu by default: under the short Adam budget below,
    /// tanh networks stay close to their initialization and never fit the
    /// higher frequencies, which leaves neighbor counts saturated at `n`.
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl SweepRecipe {
    /// Reference recipe: 2048 points, five hidden layers of 64 units, Adam at
    /// 1e-4 for 80 epochs.
    pub fn full() -> SweepRecipe {
        SweepRecipe {
            n: 2048,
            hidden_layers: 5,
            hidden_width: 64,
            activation: default_activation(),
            epochs: 80,
            learning_rate: 1e-4,
            batch_size: 64,
        }
    }

    /// Cheaper variant for constrained machines: 512 points, three hidden
    /// layers of 32, 40 epochs. Same optimizer settings as [`full`].
    ///
    /// [`full`]: SweepRecipe::full
    pub fn reduced() -> SweepRecipe {
        SweepRecipe {
            n: 512,
            hidden_layers: 3,
            hidden_width: 32,
            activation: default_activation(),
            epochs: 40,
            learning_rate: 1e-4,
            batch_size: 64,
        }
    }
}

/// Full sweep configuration.
///
/// The training seed of cell `(frequency index, repeat)` is
/// `base_seed + frequency_index * repeats + repeat`, so every cell trains
/// from distinct, reproducible randomness. Inputs are equally spaced on the
/// circle (no jitter), so only training stochasticity varies across repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub frequencies: Vec<f64>,
    /// Trainings per frequency; the reported value per frequency is the
    /// median over repeats.
    pub repeats: usize,
    pub recipe: SweepRecipe,
    /// Thresholds for the hard counts, each in (0, 1].
    pub taus: Vec<f64>,
    /// Exponents for the positive-power counts, each > 0.
    pub alphas: Vec<f64>,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> SweepConfig {
        SweepConfig {
            frequencies: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            repeats: 5,
            recipe: SweepRecipe::full(),
            taus: vec![0.5, 0.8, 0.9, 0.95],
            alphas: vec![1.0, 2.0, 8.0],
            base_seed: 0,
        }
    }
}

/// One neighbor-count estimator of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// Soft count `N_S`, the full correlation sum.
    Soft,
    /// Hard count at a threshold, `N_τ`.
    Hard(f64),
    /// Positive-power count `N_α⁺`.
    PositivePower(f64),
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Soft => write!(f, "N_S"),
            Estimator::Hard(tau) => write!(f, "N_tau_{tau}"),
            Estimator::PositivePower(alpha) => write!(f, "N_plus_{alpha}"),
        }
    }
}

/// Per-cell statistics of one estimator: one row per
/// `(frequency, repeat, estimator)`. Diverged trainings keep their rows,
/// with empty statistics, so the table shape is predictable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCellRow {
    pub frequency: f64,
    pub repeat: usize,
    pub estimator: String,
    /// Mean neighbor count over samples, `None` if the cell diverged.
    pub mean: Option<f64>,
    /// Median neighbor count over samples.
    pub median: Option<f64>,
    pub diverged: bool,
}

/// Median over repeats of the per-cell mean, one row per
/// `(frequency, estimator)`. This is the quantity the slope is fitted on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    pub frequency: f64,
    pub estimator: String,
    pub value: Option<f64>,
}

/// Log-log fit of one estimator across frequencies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub estimator: String,
    /// `None` when fewer than two usable frequency points exist.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCellRow>,
    pub medians: Vec<MedianRow>,
    pub fits: Vec<SlopeFit>,
    pub warnings: Vec<String>,
}

fn estimator_grid(config: &SweepConfig) -> Vec<Estimator> {
    let mut grid = vec![Estimator::Soft];
    grid.extend(config.taus.iter().map(|&t| Estimator::Hard(t)));
    grid.extend(config.alphas.iter().map(|&a| Estimator::PositivePower(a)));
    grid
}

fn validate(config: &SweepConfig) -> Result<()> {
    if config.frequencies.is_empty() {
        return Err(Error::InvalidArgument("no frequencies to sweep".into()));
    }
    for &f in &config.frequencies {
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "frequencies must be positive, got {f}"
            )));
        }
    }
    if config.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    for &t in &config.taus {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "hard-count thresholds must lie in (0, 1], got {t}"
            )));
        }
    }
    for &a in &config.alphas {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "power-count exponents must be positive, got {a}"
            )));
        }
    }
    let r = &config.recipe;
    if r.hidden_layers == 0 || r.hidden_width == 0 || r.epochs == 0 {
        return Err(Error::InvalidArgument(
            "sweep recipe needs at least one hidden layer, unit width and epoch".into(),
        ));
    }
    Ok(())
}

/// Unit-gradient Gram matrix of a bank, row-major `n × n`.
///
/// Undefined samples contribute zero rows, matching the defined-only
/// convention of the counting functions. Uses a blocked matrix multiply, so
/// entries can differ from `bank.correlation` in the last few ULPs.
pub(crate) fn correlation_gram(bank: &GradientBank) -> Vec<f64> {
    let n = bank.len();
    let p = bank.dim();
    let mut unit = vec![0.0f64; n * p];
    for i in 0..n {
        if !bank.is_defined(i) {
            continue;
        }
        let inv = 1.0 / bank.norm(i);
        for (slot, &v) in unit[i * p..(i + 1) * p].iter_mut().zip(bank.gradient(i)) {
            *slot = inv * v;
        }
    }
    let mut gram = vec![0.0f64; n * n];
    // G = U Uᵀ; the same buffer serves as both operands, the second one read
    // with swapped strides. Safety: dimensions and strides describe exactly
    // the allocated `unit` and `gram` buffers.
    unsafe {
        matrixmultiply::dgemm(
            n,
            p,
            n,
            1.0,
            unit.as_ptr(),
            p as isize,
            1,
            unit.as_ptr(),
            1,
            p as isize,
            0.0,
            gram.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    gram
}

struct CellStat {
    mean: f64,
    median: f64,
}

enum CellOutcome {
    Stats(Vec<CellStat>),
    Diverged,
}

fn run_cell(config: &SweepConfig, f_idx: usize, repeat: usize, grid: &[Estimator]) -> Result<CellOutcome> {
    let recipe = &config.recipe;
    let seed = config.base_seed + (f_idx * config.repeats + repeat) as u64;
    let mut toy = ToySpec::new(config.frequencies[f_idx], recipe.n);
    toy.seed = seed;
    let data = gen_toy(&toy)?;

    let mut sizes = vec![2];
    sizes.extend(std::iter::repeat(recipe.hidden_width).take(recipe.hidden_layers));
    sizes.push(1);
    let spec = NetworkSpec::mlp(sizes, recipe.activation)?;
    let train_config = TrainConfig {
        adam: AdamConfig {
            learning_rate: recipe.learning_rate,
            ..Default::default()
        },
        epochs: recipe.epochs,
        batch_size: recipe.batch_size,
        seed,
        loss: Loss::SquaredError,
    };
    let run = match train(&spec, &data, &train_config) {
        Ok(run) => run,
        Err(Error::NonFiniteLoss { .. }) => return Ok(CellOutcome::Diverged),
        Err(e) => return Err(e),
    };

    let bank = GradientBank::from_network(&spec, &run.params, &data.inputs)?;
    let soft = count_soft_all_fast(&bank);
    let gram = correlation_gram(&bank);
    let defined: Vec<bool> = (0..bank.len()).map(|i| bank.is_defined(i)).collect();
    let n = bank.len();
    drop(bank);

    let stats = grid
        .iter()
        .map(|estimator| {
            let mut values: Vec<f64> = Vec::with_capacity(n);
            for i in 0..n {
                if !defined[i] {
                    continue;
                }
                let row = &gram[i * n..(i + 1) * n];
                let value = match *estimator {
                    Estimator::Soft => soft[i].expect("defined sample has a soft count"),
                    // Self term is exactly 1 in both counts; undefined rows
                    // are zero in the gram and fall below any tau > 0.
                    Estimator::Hard(tau) => {
                        let others = row
                            .iter()
                            .enumerate()
                            .filter(|&(j, &k)| j != i && k >= tau)
                            .count();
                        (others + 1) as f64
                    }
                    Estimator::PositivePower(alpha) => {
                        let others: f64 = row
                            .iter()
                            .enumerate()
                            .filter(|&(j, &k)| j != i && k > 0.0)
                            .map(|(_, &k)| k.powf(alpha))
                            .sum();
                        others + 1.0
                    }
                };
                values.push(value);
            }
            CellStat {
                mean: values.iter().sum::<f64>() / values.len() as f64,
                median: median(&mut values),
            }
        })
        .collect();
    Ok(CellOutcome::Stats(stats))
}

/// Run the whole sweep grid. Cells are independent and run on the rayon
/// pool; results are merged in a fixed order so the output is deterministic
/// regardless of thread count.
pub fn run_toy_sweep(config: &SweepConfig) -> Result<SweepResult> {
    validate(config)?;
    let grid = estimator_grid(config);
    let keys: Vec<(usize, usize)> = (0..config.frequencies.len())
        .flat_map(|fi| (0..config.repeats).map(move |rep| (fi, rep)))
        .collect();
    let outcomes: Vec<CellOutcome> = keys
        .par_iter()
        .map(|&(fi, rep)| run_cell(config, fi, rep, &grid))
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(keys.len() * grid.len());
    let mut warnings = Vec::new();
    for (&(fi, rep), outcome) in keys.iter().zip(&outcomes) {
        let frequency = config.frequencies[fi];
        match outcome {
            CellOutcome::Diverged => {
                warnings.push(format!(
                    "training diverged at frequency {frequency} repeat {rep}; cell excluded from fits"
                ));
                for estimator in &grid {
                    cells.push(SweepCellRow {
                        frequency,
                        repeat: rep,
                        estimator: estimator.to_string(),
                        mean: None,
                        median: None,
                        diverged: true,
                    });
                }
            }
            CellOutcome::Stats(stats) => {
                for (estimator, stat) in grid.iter().zip(stats) {
                    cells.push(SweepCellRow {
                        frequency,
                        repeat: rep,
                        estimator: estimator.to_string(),
                        mean: Some(stat.mean),
                        median: Some(stat.median),
                        diverged: false,
                    });
                }
            }
        }
    }

    let mut medians = Vec::new();
    let mut fits = Vec::new();
    for (e_idx, estimator) in grid.iter().enumerate() {
        let label = estimator.to_string();
        let mut points = Vec::new();
        for (fi, &frequency) in config.frequencies.iter().enumerate() {
            let mut repeats_here: Vec<f64> = keys
                .iter()
                .zip(&outcomes)
                .filter(|(&(kfi, _), _)| kfi == fi)
                .filter_map(|(_, outcome)| match outcome {
                    CellOutcome::Stats(stats) => Some(stats[e_idx].mean),
                    CellOutcome::Diverged => None,
                })
                .collect();
            let value = if repeats_here.is_empty() {
                warnings.push(format!(
                    "no surviving repeats at frequency {frequency} for {label}"
                ));
                None
            } else {
                Some(median(&mut repeats_here))
            };
            medians.push(MedianRow {
                frequency,
                estimator: label.clone(),
                value,
            });
            match value {
                Some(v) if v > 0.0 => points.push((frequency, v)),
                Some(v) => warnings.push(format!(
                    "non-positive median {v} at frequency {frequency} for {label} skipped in log fit"
                )),
                None => {}
            }
        }
        let fit = loglog_slope(&points);
        if fit.is_none() {
            warnings.push(format!(
                "slope undefined for {label}: {} usable frequency points",
                points.len()
            ));
        }
        fits.push(SlopeFit {
            estimator: label,
            slope: fit.map(|(s, _)| s),
            intercept: fit.map(|(_, b)| b),
            points: points.len(),
        });
    }

    Ok(SweepResult {
        cells,
        medians,
        fits,
        warnings,
    })
}
