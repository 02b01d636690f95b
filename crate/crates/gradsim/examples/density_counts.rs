//! Neighbor counting in gradient space: hard threshold counts, the smooth
//! count, the positive-part count, and cosine nearest neighbors, all from one
//! gradient bank over a trained toy net.
//!
//! Run with `cargo run --example density_counts`.

use std::time::Instant;

use gradsim::data::{gen_toy, ToySpec};
use gradsim::density::{
    count_hard, count_positive_alpha, count_soft, count_soft_all_fast, count_soft_all_naive,
    k_nearest, GradientBank,
};
use gradsim::nn::{train, Activation, AdamConfig, Loss, NetworkSpec, TrainConfig};

fn main() {
    let data = gen_toy(&ToySpec::new(4.0, 256)).unwrap();
    let spec = NetworkSpec::mlp(vec![2, 32, 32, 1], Activation::Tanh).unwrap();
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..Default::default()
        },
        epochs: 120,
        batch_size: 64,
        seed: 5,
        loss: Loss::SquaredError,
    };
    let run = train(&spec, &data, &config).unwrap();
    let bank = GradientBank::from_network(&spec, &run.params, &data.inputs).unwrap();
    println!(
        "bank: {} gradients of dimension {} (frequency 4 sine on the circle)",
        bank.len(),
        bank.dim()
    );

    // Hard counts sweep a correlation threshold; each sample always counts
    // itself, so tau = 1 gives at least 1 and tau = 0 counts the nonnegative
    // half-space.
    let target = 0;
    println!("\nhard counts around sample {target}");
    for tau in [0.0, 0.25, 0.5, 0.75, 0.9, 1.0] {
        println!("  N_tau({tau:.2}) = {}", count_hard(&bank, target, tau).unwrap());
    }
    println!(
        "  soft count N_S   = {:.2}",
        count_soft(&bank, target).unwrap()
    );
    println!(
        "  positive  N_1^+  = {:.2}",
        count_positive_alpha(&bank, target, 1.0).unwrap()
    );

    // The smooth count for every sample at once: the quadratic-time form
    // accumulates pairwise cosines, the linear-time form rewrites the same
    // sum through two bank-level moments.
    let t = Instant::now();
    let naive = count_soft_all_naive(&bank);
    let naive_time = t.elapsed();
    let t = Instant::now();
    let fast = count_soft_all_fast(&bank);
    let fast_time = t.elapsed();
    let worst = naive
        .iter()
        .zip(&fast)
        .map(|(a, b)| (a.unwrap() - b.unwrap()).abs())
        .fold(0.0f64, f64::max);
    println!(
        "\nall-sample soft counts: naive {:.1?} vs fast {:.1?}, max diff {worst:.1e}",
        naive_time, fast_time
    );

    // Cosine nearest neighbors of the same target. On the circle these are
    // the samples a fraction of a period away.
    let report = k_nearest(&bank, target, 6).unwrap();
    println!("\nnearest neighbors of sample {target} under the cosine kernel");
    println!("{:>6} {:>8} {:>12}", "rank", "index", "similarity");
    for (rank, n) in report.neighbors.iter().enumerate() {
        println!("{:>6} {:>8} {:>12.4}", rank + 1, n.index, n.similarity);
    }
    if report.undefined_skipped > 0 {
        println!("  ({} zero gradients skipped)", report.undefined_skipped);
    }
}
