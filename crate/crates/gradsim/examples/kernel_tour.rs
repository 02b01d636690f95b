//! A tour of the gradient kernels: the scalar forms on a regression net, the
//! matrix form with its normalization on a two-output net, and the layer
//! decomposition that shows where two inputs interact.
//!
//! Run with `cargo run --example kernel_tour`.

use gradsim::data::{gen_toy, ToySpec};
use gradsim::kernels::{
    k_corr, k_influence, k_inner, kernel_matrix, layer_decomposition, normalize_kernel_matrix,
    rot_similarity, trace_similarity,
};
use gradsim::nn::{
    per_sample_gradient, train, Activation, AdamConfig, Loss, NetworkSpec, TrainConfig,
};

fn main() {
    // A sine on the circle, learned well enough that gradients carry
    // structure rather than initialization noise.
    let data = gen_toy(&ToySpec::new(2.0, 96)).unwrap();
    let spec = NetworkSpec::mlp(vec![2, 24, 1], Activation::Tanh).unwrap();
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..Default::default()
        },
        epochs: 200,
        batch_size: 32,
        seed: 3,
        loss: Loss::SquaredError,
    };
    let run = train(&spec, &data, &config).unwrap();
    println!(
        "trained toy net, final loss {:.5}",
        run.epoch_losses.last().unwrap()
    );

    // Three probes: a point, a near neighbor on the circle, and the
    // antipode. The cosine kernel tells near from far at a glance.
    let grads: Vec<_> = [0usize, 1, 48]
        .iter()
        .map(|&i| {
            per_sample_gradient(&spec, &run.params, &data.inputs[i])
                .unwrap()
                .row(0)
                .to_vec()
        })
        .collect();

    println!("\nscalar kernels (sample 0 vs 1 is adjacent, 0 vs 48 is the antipode)");
    println!("{:>12} {:>12} {:>12} {:>12}", "pair", "inner", "cosine", "influence");
    for (label, other) in [("0 vs 1", &grads[1]), ("0 vs 48", &grads[2])] {
        println!(
            "{label:>12} {:>12.4} {:>12.4} {:>12.4}",
            k_inner(&grads[0], other),
            k_corr(&grads[0], other).unwrap().value,
            k_influence(&grads[0], other).unwrap().value,
        );
    }

    // With several outputs the kernel is a d x d block: entry (i, j) is the
    // inner product of grad f^i at one input with grad f^j at the other.
    let spec2 = NetworkSpec::mlp(vec![2, 16, 2], Activation::Tanh).unwrap();
    let params2 = gradsim::nn::ParamVector::init(&spec2, 9);
    let a = [0.6, -0.2];
    let b = [0.5, 0.1];
    let ga = per_sample_gradient(&spec2, &params2, &a).unwrap();
    let gb = per_sample_gradient(&spec2, &params2, &b).unwrap();
    let kab = kernel_matrix(&ga, &gb).unwrap();
    let kaa = kernel_matrix(&ga, &ga).unwrap();
    let kbb = kernel_matrix(&gb, &gb).unwrap();
    let c = normalize_kernel_matrix(&kab, &kaa, &kbb).unwrap();

    println!("\nmatrix kernel for a 2-output net at two nearby inputs");
    for i in 0..2 {
        println!(
            "  raw [{:>9.4} {:>9.4}]   normalized [{:>8.4} {:>8.4}]",
            kab.get(i, 0),
            kab.get(i, 1),
            c.get(i, 0),
            c.get(i, 1),
        );
    }
    println!(
        "  trace similarity {:.4}, rotation similarity {:.4}",
        trace_similarity(&c).unwrap().value,
        rot_similarity(&c).unwrap().value,
    );
    // Rotation similarity maximizes the trace over planar rotations of one
    // frame, so it can only be larger.

    // Which layers carry the inner product? Sum over each weight and bias
    // block separately.
    let layout = spec.layout();
    println!("\nlayer decomposition of k_inner(g_0, g_1) on the toy net");
    for term in layer_decomposition(&grads[0], &grads[1], &layout) {
        println!("  layer {} {:<6?} {:>10.4}", term.layer, term.kind, term.value);
    }
    let total: f64 = layer_decomposition(&grads[0], &grads[1], &layout)
        .iter()
        .map(|t| t.value)
        .sum();
    println!("  sum {total:.4} = k_inner {:.4}", k_inner(&grads[0], &grads[1]));
}
