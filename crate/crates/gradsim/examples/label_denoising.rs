//! Kernel-weighted label denoising. A fitted network's prediction at a point
//! averages the noisy labels of that point's gradient neighborhood; the
//! denoising factor bounds how much of the label noise survives, and the
//! duplicate-site experiment measures it end to end.
//!
//! Run with `cargo run --example label_denoising`.

use gradsim::data::{gen_toy, ToySpec};
use gradsim::denoise::{
    denoising_factor, normalized_column, stationarity_residual, LabeledState,
};
use gradsim::density::GradientBank;
use gradsim::experiments::{run_duplicate_noise, DuplicateNoiseSpec};
use gradsim::nn::{
    stream_for_tests, train, Activation, AdamConfig, Loss, NetworkSpec, TrainConfig,
};
use rand::Rng;

fn main() {
    // Noisy sine: clean labels plus Gaussian noise.
    let sigma = 0.3;
    let mut data = gen_toy(&ToySpec::new(2.0, 128)).unwrap();
    let clean: Vec<f64> = data.labels.iter().map(|l| l[0]).collect();
    let mut rng = stream_for_tests(17);
    for label in &mut data.labels {
        label[0] += sigma * rng.gen_range(-1.0..1.0) * 1.732; // uniform, same variance
    }

    let spec = NetworkSpec::mlp(vec![2, 24, 1], Activation::Tanh).unwrap();
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 5e-3,
            ..Default::default()
        },
        epochs: 300,
        batch_size: 32,
        seed: 11,
        loss: Loss::SquaredError,
    };
    let run = train(&spec, &data, &config).unwrap();

    let bank = GradientBank::from_network(&spec, &run.params, &data.inputs).unwrap();
    let noisy: Vec<f64> = data.labels.iter().map(|l| l[0]).collect();
    let state = LabeledState::from_network(&spec, &run.params, &data.inputs, noisy).unwrap();

    // The factor is the l2 norm of the kernel-normalized column: 1 means the
    // prediction just echoes one noisy label, 1/sqrt(n) means it averages n
    // of them evenly.
    println!("denoising factors and prediction errors (sample of 8 targets)");
    println!(
        "{:>6} {:>8} {:>10} {:>12} {:>12}",
        "index", "factor", "neg mass", "pred-clean", "noisy-clean"
    );
    for i in (0..bank.len()).step_by(16) {
        let column = normalized_column(&bank, i).unwrap();
        println!(
            "{i:>6} {:>8.3} {:>10.3} {:>12.4} {:>12.4}",
            denoising_factor(&bank, i).unwrap(),
            column.negative_mass,
            state.predictions[i] - clean[i],
            state.noisy_labels[i] - clean[i],
        );
    }

    // At a critical point of the squared-error loss the kernel-weighted
    // residual sum vanishes exactly; after finite training it is merely
    // small relative to its column.
    let mut worst = 0.0f64;
    for i in 0..bank.len() {
        let s = stationarity_residual(&bank, &state, i).unwrap();
        worst = worst.max(s.normalized.abs());
    }
    println!("\nworst normalized stationarity residual: {worst:.2e}");

    // Duplicate-site experiment: r copies of each site with independent
    // label noise. The error of the fit at a site should shrink like
    // 1/sqrt(r), and the predicted factor tracks the measured error.
    println!("\nduplicate-noise experiment (8 sites, noise sd 0.2, 30 trials)");
    println!("{:>6} {:>10} {:>10} {:>10}", "r", "error std", "factor", "0.2/sqrt(r)");
    for n_dup in [1usize, 4, 16] {
        let result = run_duplicate_noise(&DuplicateNoiseSpec {
            n_dup,
            n_sites: 8,
            sigma: 0.2,
            seed: 0,
            trials: 30,
        })
        .unwrap();
        println!(
            "{n_dup:>6} {:>10.4} {:>10.4} {:>10.4}",
            result.error_std,
            result.factor_mean,
            0.2 / (n_dup as f64).sqrt(),
        );
    }
}
