//! A miniature frequency sweep: train on sines of increasing frequency and
//! watch the gradient-space neighbor counts respond. Uses a deliberately
//! small grid so it finishes in seconds; the `sweep-toy` CLI command runs the
//! full recipe and writes CSVs and a plot.
//!
//! Run with `cargo run --example toy_frequency_sweep`.

use gradsim::experiments::{run_toy_sweep, SweepConfig, SweepRecipe};
use gradsim::nn::Activation;

fn main() {
    let config = SweepConfig {
        frequencies: vec![1.0, 2.0, 4.0, 8.0],
        repeats: 2,
        recipe: SweepRecipe {
            n: 256,
            hidden_layers: 3,
            hidden_width: 24,
            activation: Activation::Relu,
            epochs: 400,
            learning_rate: 1e-3,
            batch_size: 64,
        },
        taus: vec![0.9],
        alphas: vec![1.0],
        base_seed: 0,
    };
    let result = run_toy_sweep(&config).unwrap();
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }

    // One row per (frequency, repeat, estimator): mean and median neighbor
    // count over the dataset. Diverged cells would keep their rows with the
    // statistics left empty.
    println!(
        "{:>10} {:>8} {:>10} {:>10} {:>10}",
        "frequency", "repeat", "estimator", "mean", "median"
    );
    for cell in &result.cells {
        println!(
            "{:>10} {:>8} {:>10} {:>10.1} {:>10.1}",
            cell.frequency,
            cell.repeat,
            cell.estimator,
            cell.mean.unwrap_or(f64::NAN),
            cell.median.unwrap_or(f64::NAN),
        );
    }

    // Power-law fits of the per-frequency medians. A negative slope means
    // higher frequencies leave each sample with fewer gradient neighbors.
    println!("\nlog-log slope of the median against frequency");
    for fit in &result.fits {
        match fit.slope {
            Some(slope) => println!(
                "  {:<10} slope {slope:>7.3} over {} points",
                fit.estimator, fit.points
            ),
            None => println!("  {:<10} not enough usable points", fit.estimator),
        }
    }
}
