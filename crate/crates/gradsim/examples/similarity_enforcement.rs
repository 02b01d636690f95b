//! Making gradients agree on purpose. The pair loss is the negative cosine
//! kernel of two inputs, differentiated through both per-sample gradients, so
//! plain gradient descent on it pulls k_corr toward 1. The two-batch
//! criterion does the same for group means, and group statistics report how
//! coherent a set of gradients already is.
//!
//! Run with `cargo run --example similarity_enforcement`.

use gradsim::density::GradientBank;
use gradsim::enforce::{batch_criterion_for_coord, group_stats, pair_loss_for_coord};
use gradsim::nn::{stream_for_tests, Activation, NetworkSpec, ParamVector};
use rand::Rng;

fn main() {
    let spec = NetworkSpec::mlp(vec![2, 12, 8, 1], Activation::Tanh).unwrap();
    let mut params = ParamVector::init(&spec, 2);
    let x = vec![0.9, -0.4];
    let x_other = vec![-0.7, 0.8];

    // Descend the pair loss. Its value is -k_corr, so the printed similarity
    // is just the negated loss.
    println!("pair loss descent (two fixed inputs, learning rate 0.05)");
    println!("{:>6} {:>12} {:>14}", "step", "k_corr", "|grad|");
    let eta = 0.05;
    for step in 0..=60 {
        let pl = pair_loss_for_coord(&spec, &params, &x, &x_other, 0).unwrap();
        if step % 10 == 0 {
            let norm: f64 = pl.gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
            println!("{step:>6} {:>12.5} {:>14.3e}", -pl.value, norm);
        }
        for (theta, g) in params.values_mut().iter_mut().zip(&pl.gradient) {
            *theta -= eta * g;
        }
    }

    // At x' = x the loss sits at its minimum and the gradient vanishes
    // identically, not just approximately.
    let at_min = pair_loss_for_coord(&spec, &params, &x, &x, 0).unwrap();
    let gnorm: f64 = at_min.gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("\nsame input twice: k_corr = {}, |grad| = {gnorm}", -at_min.value);

    // The batch criterion compares mean gradients of two groups; driving it
    // down merges the groups' average update directions.
    let mut params = ParamVector::init(&spec, 4);
    let mut rng = stream_for_tests(31);
    let batch1: Vec<Vec<f64>> = (0..4)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let batch2: Vec<Vec<f64>> = (0..4)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let refs1: Vec<&[f64]> = batch1.iter().map(Vec::as_slice).collect();
    let refs2: Vec<&[f64]> = batch2.iter().map(Vec::as_slice).collect();

    println!("\nbatch criterion descent (4 vs 4 random inputs, learning rate 0.02)");
    println!("{:>6} {:>12}", "step", "criterion");
    for step in 0..=40 {
        let bc = batch_criterion_for_coord(&spec, &params, &refs1, &refs2, 0).unwrap();
        if step % 10 == 0 {
            println!("{step:>6} {:>12.5}", bc.value);
        }
        for (theta, g) in params.values_mut().iter_mut().zip(&bc.gradient) {
            *theta -= 0.02 * g;
        }
    }

    // Group statistics of all eight inputs after the merge. The two reported
    // identities tie the fields together through the mean unit gradient.
    let inputs: Vec<Vec<f64>> = batch1.iter().chain(&batch2).cloned().collect();
    let bank = GradientBank::from_network(&spec, &params, &inputs).unwrap();
    let indices: Vec<usize> = (0..bank.len()).collect();
    let stats = group_stats(&bank, &indices).unwrap();
    let n = indices.len() as f64;
    println!("\ngroup statistics over all 8 inputs");
    println!("  mean pairwise k_corr  {:.4}", stats.mean_pairwise);
    println!("  mean unit grad |mu|^2 {:.4}", stats.mean_norm_sq);
    println!("  variance              {:.4}", stats.variance);
    println!(
        "  identity check: (n|mu|^2 - 1)/(n - 1) = {:.4}, 1 - |mu|^2 = {:.4}",
        (n * stats.mean_norm_sq - 1.0) / (n - 1.0),
        1.0 - stats.mean_norm_sq,
    );
}
