//! Test oracles, kept deliberately independent of the engine internals.
//!
//! The forward reference walks the layout directly instead of reusing the
//! engine's buffers, and the finite-difference gradient only calls the public
//! `forward`. Unit, integration, and acceptance tests all check the fast
//! paths against these.

use rand::Rng;

use crate::nn::stream_for_tests;
use crate::nn::{forward, Activation, NetworkSpec, ParamKind, ParamVector};

/// Straight-line reimplementation of the forward pass from the layout table.
pub fn forward_reference(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> Vec<f64> {
    let layout = spec.layout();
    let mut a = x.to_vec();
    for layer in 0..spec.num_layers() {
        let w = layout.entry(layer, ParamKind::Weight).unwrap();
        let b = layout.entry(layer, ParamKind::Bias).unwrap();
        let wv = params.block(w);
        let bv = params.block(b);
        let mut next = vec![0.0; w.rows];
        for (o, slot) in next.iter_mut().enumerate() {
            let mut z = bv[o];
            for (i, ai) in a.iter().enumerate() {
                z += wv[o * w.cols + i] * ai;
            }
            let act = spec.layer_activation(layer);
            *slot = match act {
                Activation::Tanh => z.tanh(),
                Activation::Relu => z.max(0.0),
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                Activation::Identity => z,
            };
        }
        a = next;
    }
    a
}

/// Central finite differences of output coordinate `coord` with respect to
/// every parameter, step `1e-5 · (1 + |θ_k|)`.
pub fn fd_gradient(spec: &NetworkSpec, params: &ParamVector, x: &[f64], coord: usize) -> Vec<f64> {
    let p = params.len();
    let mut grad = vec![0.0; p];
    let mut work = params.clone();
    for k in 0..p {
        let theta = params.values()[k];
        let h = 1e-5 * (1.0 + theta.abs());
        work.values_mut()[k] = theta + h;
        let up = forward(spec, &work, x).unwrap()[coord];
        work.values_mut()[k] = theta - h;
        let down = forward(spec, &work, x).unwrap()[coord];
        work.values_mut()[k] = theta;
        grad[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between two vectors.
///
/// Coordinates are compared against `max(|a_k|, |b_k|)`, floored at
/// `1e-4 · (1 + ‖b‖_∞)` so that coordinates far below the vector's own scale
/// are held to a proportional absolute tolerance instead of an ill-posed
/// relative one.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-4 * (1.0 + scale);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn assert_close(actual: f64, expected: f64, abs_tol: f64, rel_tol: f64) {
    let diff = (actual - expected).abs();
    assert!(
        diff <= abs_tol || diff <= rel_tol * expected.abs().max(actual.abs()),
        "actual {actual} vs expected {expected} (diff {diff:.3e}, abs_tol {abs_tol:.1e}, rel_tol {rel_tol:.1e})"
    );
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Random small network, parameters, and input for oracle sweeps.
///
/// Architectures mix every activation; inputs are re-drawn until no relu unit
/// sits within 1e-3 of its kink, so central differences never straddle the
/// non-smooth point.
pub fn random_instance(seed: u64) -> (NetworkSpec, ParamVector, Vec<f64>) {
    let mut rng = stream_for_tests(seed);
    let input_dim = rng.gen_range(1..=4usize);
    let output_dim = rng.gen_range(1..=3usize);
    let hidden_layers = rng.gen_range(1..=3usize);
    let mut layer_sizes = vec![input_dim];
    for _ in 0..hidden_layers {
        layer_sizes.push(rng.gen_range(2..=8usize));
    }
    layer_sizes.push(output_dim);

    let palette = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Identity,
    ];
    let activations = (0..hidden_layers)
        .map(|_| palette[rng.gen_range(0..palette.len())])
        .collect::<Vec<_>>();
    let output_activation = if rng.gen_bool(0.25) {
        Activation::Tanh
    } else {
        Activation::Identity
    };
    let spec = NetworkSpec::new(layer_sizes, activations, output_activation).unwrap();
    let params = ParamVector::init(&spec, seed.wrapping_mul(31).wrapping_add(7));

    let x = draw_input(&spec, &params, &mut rng);
    (spec, params, x)
}

/// Draw an input in `[-1.5, 1.5)^n`, re-drawing until every relu unit clears
/// its kink by more than 1e-3 so finite differences stay on one linear piece.
pub fn draw_input(spec: &NetworkSpec, params: &ParamVector, rng: &mut impl Rng) -> Vec<f64> {
    let has_relu = spec.activations.contains(&Activation::Relu);
    let mut x = vec![0.0; spec.input_dim()];
    for attempt in 0..200 {
        for v in &mut x {
            *v = rng.gen_range(-1.5..1.5);
        }
        if !has_relu || relu_kink_clearance(spec, params, &x) > 1e-3 {
            break;
        }
        assert!(attempt < 199, "could not steer clear of relu kinks");
    }
    x
}

fn relu_kink_clearance(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> f64 {
    let trace = crate::nn::forward_with_trace(spec, params, x).unwrap();
    let mut clearance = f64::INFINITY;
    for layer in 0..spec.num_layers() {
        if spec.layer_activation(layer) == Activation::Relu {
            for &z in &trace.pre_activations[layer] {
                clearance = clearance.min(z.abs());
            }
        }
    }
    clearance
}

/// IDX image-file bytes (magic `0x00000803`) for `count` images of
/// `rows × cols` pixels given in row-major u8 order.
pub fn idx_image_bytes(pixels: &[u8], count: u32, rows: u32, cols: u32) -> Vec<u8> {
    assert_eq!(pixels.len(), (count * rows * cols) as usize);
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    for header in [0x0000_0803u32, count, rows, cols] {
        bytes.extend_from_slice(&header.to_be_bytes());
    }
    bytes.extend_from_slice(pixels);
    bytes
}

/// IDX label-file bytes (magic `0x00000801`).
pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    bytes
}

/// Exhaustive angle sweep for the rotation-invariant similarity of a 2×2
/// normalized kernel block: `max_φ ½·Tr(M·R_φ)` over `angles` grid points.
pub fn rot_similarity_bruteforce(m: &[f64], angles: usize) -> f64 {
    assert_eq!(m.len(), 4);
    let (m11, m12, m21, m22) = (m[0], m[1], m[2], m[3]);
    let mut best = f64::NEG_INFINITY;
    for k in 0..angles {
        let phi = 2.0 * std::f64::consts::PI * (k as f64) / (angles as f64);
        let value = 0.5 * (phi.cos() * (m11 + m22) + phi.sin() * (m12 - m21));
        best = best.max(value);
    }
    best
}
