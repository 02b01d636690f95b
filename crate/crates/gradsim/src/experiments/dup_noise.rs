//! Duplicate-noise denoising study.
//!
//! Each trial places sites on the unit circle with clean sinusoid labels,
//! replicates every input `n_dup` times with independent Gaussian label
//! noise, trains to convergence, and measures the prediction error at each
//! site along with the kernel denoising factor. Averaging `n_dup` noisy
//! copies shrinks the label noise like `1/√n_dup`, so doubling `√n_dup`
//! should halve the error spread across trials.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetMeta};
use crate::denoise::denoising_factor;
use crate::density::GradientBank;
use crate::error::{Error, Result};
use crate::nn::rng::{stream, STREAM_DATA};
use crate::nn::{forward, train, Activation, AdamConfig, Loss, NetworkSpec, TrainConfig};

/// Study parameters. Training uses a fixed small recipe: a 2-8-1 tanh
/// network under damped Adam (β₁ = 0, ε = 1) at rate 0.05 for 6000
/// full-batch epochs, enough to settle at the least-squares fit of the small
/// site set (worst fit residual around 5e-3 on noiseless labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuplicateNoiseSpec {
    /// Noisy copies of each site.
    pub n_dup: usize,
    pub n_sites: usize,
    /// Label noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
    pub trials: usize,
}

impl Default for DuplicateNoiseSpec {
    fn default() -> DuplicateNoiseSpec {
        DuplicateNoiseSpec {
            n_dup: 4,
            n_sites: 8,
            sigma: 0.2,
            seed: 0,
            trials: 50,
        }
    }
}

/// Per-site measurement of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DupNoiseRow {
    pub trial: usize,
    pub site: usize,
    /// Prediction minus true (noiseless) label at the site.
    pub error: f64,
    /// Kernel denoising factor at one replica of the site.
    pub factor: f64,
}

#[derive(Debug, Clone)]
pub struct DupNoiseResult {
    pub rows: Vec<DupNoiseRow>,
    /// Sample standard deviation of the errors across all sites and trials.
    pub error_std: f64,
    pub mean_abs_error: f64,
    pub factor_mean: f64,
}

fn validate(spec: &DuplicateNoiseSpec) -> Result<()> {
    if spec.n_dup == 0 {
        return Err(Error::InvalidArgument(
            "need at least one duplicate per site".into(),
        ));
    }
    if spec.n_sites < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sites, got {}",
            spec.n_sites
        )));
    }
    if !(spec.sigma > 0.0) || !spec.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise std must be positive, got {}",
            spec.sigma
        )));
    }
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    Ok(())
}

fn site_inputs(n_sites: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = Vec::with_capacity(n_sites);
    let mut truths = Vec::with_capacity(n_sites);
    for k in 0..n_sites {
        let alpha = k as f64 / n_sites as f64;
        let angle = 2.0 * std::f64::consts::PI * alpha;
        inputs.push(vec![angle.cos(), angle.sin()]);
        truths.push(angle.sin());
    }
    (inputs, truths)
}

fn run_trial(spec: &DuplicateNoiseSpec, trial: usize) -> Result<Vec<DupNoiseRow>> {
    // One stream per (seed, n_dup, trial) drives both the noise draws and
    // the training seed, so trials are independent and reproducible.
    let mut rng = stream(
        spec.seed,
        &[STREAM_DATA, 5, spec.n_dup as u64, trial as u64],
    );
    let train_seed: u64 = rng.gen();

    let (sites, truths) = site_inputs(spec.n_sites);
    let normal = rand_distr::Normal::new(0.0, spec.sigma).expect("validated sigma");
    let mut inputs = Vec::with_capacity(spec.n_sites * spec.n_dup);
    let mut labels = Vec::with_capacity(spec.n_sites * spec.n_dup);
    for (site, truth) in sites.iter().zip(&truths) {
        for _ in 0..spec.n_dup {
            inputs.push(site.clone());
            labels.push(vec![truth + rng.sample(normal)]);
        }
    }
    let data = Dataset::new(
        inputs,
        labels,
        DatasetMeta {
            source: format!(
                "{} circle sites x {} noisy copies, sigma {}",
                spec.n_sites, spec.n_dup, spec.sigma
            ),
            seed: Some(spec.seed),
        },
    )?;

    let net = NetworkSpec::mlp(vec![2, 8, 1], Activation::Tanh)?;
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 0.05,
            beta1: 0.0,
            beta2: 0.999,
            epsilon: 1.0,
        },
        epochs: 6000,
        batch_size: data.len(),
        seed: train_seed,
        loss: Loss::SquaredError,
    };
    let run = train(&net, &data, &config)?;

    let bank = GradientBank::from_network(&net, &run.params, &data.inputs)?;
    let mut rows = Vec::with_capacity(spec.n_sites);
    for (site, (input, truth)) in sites.iter().zip(&truths).enumerate() {
        let prediction = forward(&net, &run.params, input)?[0];
        // Replicas share the input, so any of them carries the site factor.
        let factor = denoising_factor(&bank, site * spec.n_dup)?;
        rows.push(DupNoiseRow {
            trial,
            site,
            error: prediction - truth,
            factor,
        });
    }
    Ok(rows)
}

pub fn run_duplicate_noise(spec: &DuplicateNoiseSpec) -> Result<DupNoiseResult> {
    validate(spec)?;
    let per_trial: Vec<Vec<DupNoiseRow>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| run_trial(spec, trial))
        .collect::<Result<_>>()?;
    let rows: Vec<DupNoiseRow> = per_trial.into_iter().flatten().collect();

    let n = rows.len() as f64;
    let mean_error: f64 = rows.iter().map(|r| r.error).sum::<f64>() / n;
    let var: f64 = rows
        .iter()
        .map(|r| {
            let d = r.error - mean_error;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    let mean_abs_error = rows.iter().map(|r| r.error.abs()).sum::<f64>() / n;
    let factor_mean = rows.iter().map(|r| r.factor).sum::<f64>() / n;
    Ok(DupNoiseResult {
        rows,
        error_std: var.sqrt(),
        mean_abs_error,
        factor_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_specs_are_rejected() {
        let ok = DuplicateNoiseSpec::default();
        for broken in [
            DuplicateNoiseSpec { n_dup: 0, ..ok.clone() },
            DuplicateNoiseSpec { n_sites: 1, ..ok.clone() },
            DuplicateNoiseSpec { sigma: 0.0, ..ok.clone() },
            DuplicateNoiseSpec { sigma: f64::NAN, ..ok.clone() },
            DuplicateNoiseSpec { trials: 0, ..ok.clone() },
        ] {
            assert!(run_duplicate_noise(&broken).is_err(), "{broken:?}");
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let spec = DuplicateNoiseSpec {
            trials: 2,
            n_dup: 2,
            ..Default::default()
        };
        let a = run_duplicate_noise(&spec).unwrap();
        let b = run_duplicate_noise(&spec).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.error_std, b.error_std);
    }

    #[test]
    fn near_noiseless_single_copies_fit_the_truth() {
        let spec = DuplicateNoiseSpec {
            n_dup: 1,
            sigma: 1e-9,
            trials: 1,
            ..Default::default()
        };
        let result = run_duplicate_noise(&spec).unwrap();
        let worst = result
            .rows
            .iter()
            .map(|r| r.error.abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.02, "worst site error {worst}");
    }

    #[test]
    fn factors_stay_in_their_theoretical_band() {
        let spec = DuplicateNoiseSpec {
            trials: 3,
            n_dup: 4,
            ..Default::default()
        };
        let result = run_duplicate_noise(&spec).unwrap();
        let n = (spec.n_sites * spec.n_dup) as f64;
        for row in &result.rows {
            assert!(
                row.factor >= 0.9 / n.sqrt() && row.factor <= 1.1,
                "factor {} outside its band",
                row.factor
            );
        }
        // Duplicated sites must denoise: factors well below 1.
        assert!(result.factor_mean < 0.9, "mean factor {}", result.factor_mean);
    }
}
