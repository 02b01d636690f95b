//! Per-sample gradients and Hessian-vector products, checked against finite
//! differences on the spot. Everything downstream (kernels, density counts,
//! enforcement losses) consumes these two primitives, so this is the place to
//! convince yourself they are exact.
//!
//! Run with `cargo run --example gradient_oracles`.

use gradsim::nn::{
    grad_of_inner_product_for_coord, hvp_finite_difference_for_coord, per_sample_gradient,
    stream_for_tests, Activation, NetworkSpec, ParamVector,
};
use rand::Rng;

fn main() {
    let spec = NetworkSpec::mlp(vec![3, 10, 6, 2], Activation::Tanh).unwrap();
    let params = ParamVector::init(&spec, 42);
    let x = vec![0.3, -0.8, 0.5];

    println!(
        "network {:?}, {} parameters, input {:?}",
        spec.layer_sizes,
        spec.param_count(),
        x
    );

    // One backward pass per output coordinate: row `i` is grad_theta f^i(x).
    let g = per_sample_gradient(&spec, &params, &x).unwrap();
    println!("\nper-sample gradient: {} rows of length {}", g.d(), g.p());

    // Spot-check a few coordinates of row 0 against central differences.
    println!("\n{:>6} {:>14} {:>14} {:>10}", "theta", "reverse", "fd", "rel err");
    let mut work = params.clone();
    for k in [0usize, 7, 23, 41] {
        let theta = params.values()[k];
        let h = 1e-5 * (1.0 + theta.abs());
        work.values_mut()[k] = theta + h;
        let up = gradsim::nn::forward(&spec, &work, &x).unwrap()[0];
        work.values_mut()[k] = theta - h;
        let down = gradsim::nn::forward(&spec, &work, &x).unwrap()[0];
        work.values_mut()[k] = theta;
        let fd = (up - down) / (2.0 * h);
        let exact = g.row(0)[k];
        let rel = (exact - fd).abs() / exact.abs().max(1e-12);
        println!("{k:>6} {exact:>14.8} {fd:>14.8} {rel:>10.1e}");
    }

    // The Hessian-vector product H(x) w = grad_theta (grad_theta f(x) . w)
    // comes from one extra reverse pass through the inner product. Compare
    // the analytic path against the gradient-difference fallback.
    let mut rng = stream_for_tests(7);
    let w: Vec<f64> = (0..params.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let exact = grad_of_inner_product_for_coord(&spec, &params, &x, 0, &w).unwrap();
    let fallback = hvp_finite_difference_for_coord(&spec, &params, &x, 0, &w).unwrap();
    let worst = exact
        .iter()
        .zip(&fallback)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-9))
        .fold(0.0f64, f64::max);
    println!("\nhvp against finite-difference fallback: worst rel err {worst:.2e}");

    // Gradients of an identity-activation network depend only on the layer
    // weights, never on x through the nonlinearity, so the Hessian term that
    // the exact path differentiates through is still nonzero (products of
    // weights), while a single linear layer would make it vanish.
    let linear = NetworkSpec::mlp(vec![3, 2], Activation::Identity).unwrap();
    let lin_params = ParamVector::init(&linear, 1);
    let hv = grad_of_inner_product_for_coord(&linear, &lin_params, &x, 0, &w[..lin_params.len()])
        .unwrap();
    let norm: f64 = hv.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("single affine layer: |H w| = {norm:.1e} (zero Hessian, as it must be)");
}
