//! Label denoising through the influence kernel, and its diagnostics.
//!
//! Training a network on noisy labels implicitly averages them: the
//! prediction at a sample is pulled by every sample whose gradient overlaps
//! its own. That average is made explicit here. For a target sample `i`,
//! normalize the influence-kernel column `k^I(x_j, x_i)` to weights summing
//! to 1, and `E_k[a](i) = Σ_j w_j a_j` is the mean of any per-sample quantity
//! `a` in the neighborhood of `i`.
//!
//! Three facts make this useful:
//!
//! * At any exact critical point of the squared-error loss,
//!   `E_k[ŷ] = E_k[ỹ]`: the smoothed predictions agree with the smoothed
//!   noisy labels ([`stationarity_residual`]).
//! * The weight column's L2 norm is the factor by which i.i.d. label noise
//!   survives the averaging; it is `1/√N` for uniform weights and 1 when a
//!   single sample dominates ([`denoising_factor`]).
//! * The neighborhood average cannot move faster than the network itself:
//!   the prediction shift is bounded through the gradient-direction metric
//!   `‖u − u′‖ = √2·√(1 − k^C)` ([`lipschitz_bound`]).

use crate::density::GradientBank;
use crate::kernels::KernelMatrix;
use crate::nn::{forward, NetworkSpec, ParamVector};
use crate::{Error, Result};

/// Labels, predictions, and (for synthetic data) ground truth, all aligned
/// with the rows of a gradient bank.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub noisy_labels: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Known only for synthetic experiments.
    pub true_labels: Option<Vec<f64>>,
    /// Standard deviation of the label noise, when known.
    pub noise_std: Option<f64>,
}

impl LabeledState {
    pub fn new(noisy_labels: Vec<f64>, predictions: Vec<f64>) -> Result<LabeledState> {
        if noisy_labels.len() != predictions.len() {
            return Err(Error::ShapeMismatch {
                context: "labels and predictions",
                expected: noisy_labels.len(),
                got: predictions.len(),
            });
        }
        Ok(LabeledState {
            noisy_labels,
            predictions,
            true_labels: None,
            noise_std: None,
        })
    }

    /// Compute predictions by running the network over the inputs.
    pub fn from_network(
        spec: &NetworkSpec,
        params: &ParamVector,
        inputs: &[Vec<f64>],
        noisy_labels: Vec<f64>,
    ) -> Result<LabeledState> {
        if spec.output_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "labeled state holds scalar labels; network has {} outputs",
                spec.output_dim()
            )));
        }
        let predictions = inputs
            .iter()
            .map(|x| forward(spec, params, x).map(|out| out[0]))
            .collect::<Result<Vec<_>>>()?;
        LabeledState::new(noisy_labels, predictions)
    }

    pub fn with_truth(mut self, true_labels: Vec<f64>, noise_std: f64) -> Result<LabeledState> {
        if true_labels.len() != self.noisy_labels.len() {
            return Err(Error::ShapeMismatch {
                context: "true labels",
                expected: self.noisy_labels.len(),
                got: true_labels.len(),
            });
        }
        self.true_labels = Some(true_labels);
        self.noise_std = Some(noise_std);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    /// Residuals `ŷ_j − ỹ_j`.
    pub fn residuals(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .zip(&self.noisy_labels)
            .map(|(p, y)| p - y)
            .collect()
    }
}

/// Influence-kernel column for one target, normalized to sum to 1:
/// `w_j = k^I(x_j, x_i) / Σ_l k^I(x_l, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedColumn {
    pub target: usize,
    pub weights: Vec<f64>,
    /// Normalizer `Σ_j k^I(x_j, x_i)` before division.
    pub column_sum: f64,
    /// Total absolute weight of the negative entries. Negative kernel values
    /// are kept, not clamped; this reports how much of the column they make
    /// up.
    pub negative_mass: f64,
}

impl NormalizedColumn {
    pub fn l2_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

pub fn normalized_column(bank: &GradientBank, target: usize) -> Result<NormalizedColumn> {
    if target >= bank.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for bank of {}",
            bank.len()
        )));
    }
    let g_t = bank.gradient(target);
    let mut raw = Vec::with_capacity(bank.len());
    let mut column_sum = 0.0;
    for j in 0..bank.len() {
        let k: f64 = bank.gradient(j).iter().zip(g_t).map(|(a, b)| a * b).sum();
        raw.push(k);
        column_sum += k;
    }
    if column_sum == 0.0 {
        return Err(Error::ZeroColumnSum {
            target,
            sum: column_sum,
        });
    }
    let weights: Vec<f64> = raw.iter().map(|k| k / column_sum).collect();
    let negative_mass = weights.iter().filter(|w| **w < 0.0).map(|w| -w).sum();
    Ok(NormalizedColumn {
        target,
        weights,
        column_sum,
        negative_mass,
    })
}

/// Weighted neighborhood average `E_k[a](i) = Σ_j w_j a_j`.
pub fn neighborhood_mean(values: &[f64], column: &NormalizedColumn) -> Result<f64> {
    if values.len() != column.weights.len() {
        return Err(Error::ShapeMismatch {
            context: "values for neighborhood mean",
            expected: column.weights.len(),
            got: values.len(),
        });
    }
    Ok(values.iter().zip(&column.weights).map(|(v, w)| v * w).sum())
}

/// L2 norm of the normalized column: the factor multiplying label-noise
/// standard deviation after neighborhood averaging. For nonnegative weights
/// it lies in `[1/√N, 1]`, hitting `1/√N` exactly for uniform weights and 1
/// for a one-hot column.
pub fn denoising_factor(bank: &GradientBank, target: usize) -> Result<f64> {
    Ok(normalized_column(bank, target)?.l2_norm())
}

/// Residual form of the critical-point identity at one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    /// `Σ_j (ŷ_j − ỹ_j)·k^I(x_j, x_i)`; zero at any exact critical point of
    /// the squared-error loss.
    pub raw: f64,
    /// Raw value divided by the column sum; equal to `E_k[ŷ] − E_k[ỹ]`.
    pub normalized: f64,
    pub column_sum: f64,
}

pub fn stationarity_residual(
    bank: &GradientBank,
    state: &LabeledState,
    target: usize,
) -> Result<Stationarity> {
    check_alignment(bank, state)?;
    if target >= bank.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for bank of {}",
            bank.len()
        )));
    }
    let g_t = bank.gradient(target);
    let residuals = state.residuals();
    let mut raw = 0.0;
    let mut column_sum = 0.0;
    for (j, r) in residuals.iter().enumerate() {
        let k: f64 = bank.gradient(j).iter().zip(g_t).map(|(a, b)| a * b).sum();
        raw += r * k;
        column_sum += k;
    }
    if column_sum == 0.0 {
        return Err(Error::ZeroColumnSum {
            target,
            sum: column_sum,
        });
    }
    Ok(Stationarity {
        raw,
        normalized: raw / column_sum,
        column_sum,
    })
}

/// Deviation of a prediction from the average prediction in its
/// neighborhood: `ŷ_i − E_k[ŷ](i)`.
pub fn prediction_shift(bank: &GradientBank, state: &LabeledState, target: usize) -> Result<f64> {
    check_alignment(bank, state)?;
    let column = normalized_column(bank, target)?;
    Ok(state.predictions[target] - neighborhood_mean(&state.predictions, &column)?)
}

/// Smoothness bound on the prediction shift:
/// `√2·C·Σ_j |w_j|·√(1 − k^C(x_i, x_j))`.
///
/// Correlations are clamped at 1 before the square root. Absolute weights
/// are used so the bound survives negative kernel entries; with `C` from
/// [`estimate_lipschitz_constant`] it dominates `|prediction_shift|`.
pub fn lipschitz_bound(bank: &GradientBank, target: usize, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constant must be positive, got {c}"
        )));
    }
    let column = normalized_column(bank, target)?;
    let mut expectation = 0.0;
    for (j, w) in column.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        if !bank.is_defined(j) || !bank.is_defined(target) {
            continue;
        }
        let k = bank.correlation(target, j)?.min(1.0);
        expectation += w.abs() * (1.0 - k).sqrt();
    }
    Ok(std::f64::consts::SQRT_2 * c * expectation)
}

/// Minimum gradient-direction separation below which a pair carries no
/// usable slope information.
pub const LIPSCHITZ_MIN_SEPARATION: f64 = 1e-9;

/// Empirical Lipschitz constant of the predictions with respect to the
/// gradient-direction metric: `max_{i<j} |ŷ_i − ŷ_j| / ‖u_i − u_j‖` with
/// `u = g/‖g‖`, skipping pairs closer than [`LIPSCHITZ_MIN_SEPARATION`].
pub fn estimate_lipschitz_constant(bank: &GradientBank, state: &LabeledState) -> Result<f64> {
    check_alignment(bank, state)?;
    let mut best: Option<f64> = None;
    for i in 0..bank.len() {
        if !bank.is_defined(i) {
            continue;
        }
        for j in (i + 1)..bank.len() {
            if !bank.is_defined(j) {
                continue;
            }
            let k = bank.correlation(i, j)?.min(1.0);
            let sep = std::f64::consts::SQRT_2 * (1.0 - k).sqrt();
            if sep < LIPSCHITZ_MIN_SEPARATION {
                continue;
            }
            let slope = (state.predictions[i] - state.predictions[j]).abs() / sep;
            best = Some(best.map_or(slope, |b: f64| b.max(slope)));
        }
    }
    best.ok_or(Error::DegenerateLipschitz {
        min_sep: LIPSCHITZ_MIN_SEPARATION,
    })
}

/// Multi-output denoising factor, trace form: given the matrix kernel column
/// `K_j = K^I(x_j, x_i)` for a fixed target, normalize by `S = Σ_j K_j` and
/// return `√(Σ_j ‖K_j·S^{-1}‖_F² / d)`. For `d = 1` this is exactly the
/// scalar factor; for identical samples it is `1/√N`.
pub fn multi_output_denoising_factor(kernel_column: &[KernelMatrix]) -> Result<f64> {
    if kernel_column.is_empty() {
        return Err(Error::InvalidArgument(
            "multi-output factor needs at least one kernel block".into(),
        ));
    }
    let d = kernel_column[0].d();
    let mut sum = nalgebra::DMatrix::<f64>::zeros(d, d);
    for block in kernel_column {
        if block.d() != d {
            return Err(Error::ShapeMismatch {
                context: "kernel column blocks",
                expected: d * d,
                got: block.d() * block.d(),
            });
        }
        for i in 0..d {
            for j in 0..d {
                sum[(i, j)] += block.get(i, j);
            }
        }
    }
    let inverse = sum.clone().try_inverse().ok_or(Error::ZeroColumnSum {
        target: 0,
        sum: sum.determinant(),
    })?;
    let mut total = 0.0;
    for block in kernel_column {
        let normalized = nalgebra::DMatrix::from_row_slice(d, d, block.values()) * &inverse;
        total += normalized.iter().map(|v| v * v).sum::<f64>();
    }
    Ok((total / d as f64).sqrt())
}

fn check_alignment(bank: &GradientBank, state: &LabeledState) -> Result<()> {
    if bank.len() != state.len() {
        return Err(Error::ShapeMismatch {
            context: "gradient bank and labeled state",
            expected: bank.len(),
            got: state.len(),
        });
    }
    Ok(())
}

/// Per-sample denoising diagnostics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DenoiseRow {
    pub index: usize,
    pub factor: f64,
    pub shift: f64,
    pub bound: f64,
    /// Normalized stationarity residual `E_k[ŷ] − E_k[ỹ]`.
    pub residual: f64,
    pub negative_mass: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DenoiseReport {
    pub lipschitz_constant: f64,
    pub rows: Vec<DenoiseRow>,
    /// Targets with an undefined (zero-sum) kernel column.
    pub skipped: Vec<usize>,
    pub factor_mean: f64,
    pub factor_std: f64,
    pub shift_mean: f64,
    pub shift_std: f64,
}

/// Full denoising report over every target. `c` overrides the empirical
/// Lipschitz constant when given.
pub fn denoise_report(
    bank: &GradientBank,
    state: &LabeledState,
    c: Option<f64>,
) -> Result<DenoiseReport> {
    check_alignment(bank, state)?;
    let lipschitz_constant = match c {
        Some(c) => c,
        None => estimate_lipschitz_constant(bank, state)?,
    };
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..bank.len() {
        let column = match normalized_column(bank, i) {
            Ok(column) => column,
            Err(Error::ZeroColumnSum { .. }) => {
                skipped.push(i);
                continue;
            }
            Err(e) => return Err(e),
        };
        let shift = state.predictions[i] - neighborhood_mean(&state.predictions, &column)?;
        let residual = neighborhood_mean(&state.residuals(), &column)?;
        rows.push(DenoiseRow {
            index: i,
            factor: column.l2_norm(),
            shift,
            bound: lipschitz_bound(bank, i, lipschitz_constant)?,
            residual,
            negative_mass: column.negative_mass,
        });
    }
    let stats = |pick: fn(&DenoiseRow) -> f64| -> (f64, f64) {
        if rows.is_empty() {
            return (0.0, 0.0);
        }
        let mean = rows.iter().map(pick).sum::<f64>() / rows.len() as f64;
        let var = rows.iter().map(|r| (pick(r) - mean).powi(2)).sum::<f64>() / rows.len() as f64;
        (mean, var.sqrt())
    };
    let (factor_mean, factor_std) = stats(|r| r.factor);
    let (shift_mean, shift_std) = stats(|r| r.shift);
    Ok(DenoiseReport {
        lipschitz_constant,
        rows,
        skipped,
        factor_mean,
        factor_std,
        shift_mean,
        shift_std,
    })
}
