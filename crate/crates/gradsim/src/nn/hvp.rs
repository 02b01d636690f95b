//! Hessian-vector products: `∇_θ (∇_θ f(x) · w)`.
//!
//! The primary path runs the forward and backward passes on dual numbers with
//! the parameter duals seeded along `w` (forward-over-reverse), which costs a
//! small constant times one gradient and never materializes the Hessian. A
//! central-difference fallback over two gradient evaluations is also provided;
//! it doubles as the oracle the primary path is tested against.

use crate::nn::engine::{backward_accumulate, forward_into, max_width, TraceBuf};
use crate::nn::params::ParamVector;
use crate::nn::scalar::{Dual, Scalar};
use crate::nn::spec::NetworkSpec;
use crate::{Error, Result};

fn check(spec: &NetworkSpec, params: &ParamVector, x: &[f64], w: &[f64], coord: usize) -> Result<()> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(Error::ShapeMismatch {
            context: "parameters for spec",
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    if x.len() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "network input",
            expected: spec.input_dim(),
            got: x.len(),
        });
    }
    if w.len() != params.len() {
        return Err(Error::ShapeMismatch {
            context: "inner-product direction",
            expected: params.len(),
            got: w.len(),
        });
    }
    if coord >= spec.output_dim() {
        return Err(Error::BadCoordinate {
            coord,
            d: spec.output_dim(),
        });
    }
    Ok(())
}

/// `∇_θ (∇_θ f(x) · w)` for a single-output network.
pub fn grad_of_inner_product(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    w: &[f64],
) -> Result<Vec<f64>> {
    if spec.output_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_of_inner_product needs a single-output network (got {} outputs); \
             use grad_of_inner_product_for_coord",
            spec.output_dim()
        )));
    }
    grad_of_inner_product_for_coord(spec, params, x, 0, w)
}

/// Same as [`grad_of_inner_product`] but for one selected output coordinate of
/// a multi-output network.
pub fn grad_of_inner_product_for_coord(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    coord: usize,
    w: &[f64],
) -> Result<Vec<f64>> {
    check(spec, params, x, w, coord)?;
    let p = params.len();

    let dual_params: Vec<Dual> = params
        .values()
        .iter()
        .zip(w)
        .map(|(&v, &d)| Dual::new(v, d))
        .collect();
    let dual_x: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();

    let mut buf = TraceBuf::<Dual>::for_spec(spec);
    forward_into(spec, &dual_params, &dual_x, &mut buf);

    let width = max_width(spec);
    let mut delta = vec![Dual::ZERO; width];
    let mut delta_next = vec![Dual::ZERO; width];
    let mut seed = vec![Dual::ZERO; spec.output_dim()];
    seed[coord] = Dual::ONE;
    let mut acc = vec![Dual::ZERO; p];
    backward_accumulate(
        spec,
        &dual_params,
        &buf,
        &seed,
        Dual::ONE,
        &mut acc,
        &mut delta,
        &mut delta_next,
    );
    // Value parts are ∇_θ f; derivative parts carry the directional change H·w.
    Ok(acc.iter().map(|g| g.d).collect())
}

/// Central-difference fallback: `(∇f(θ + h·w) − ∇f(θ − h·w)) / 2h` with
/// `h = 1e-4 / ‖w‖`. Returns zeros for `w = 0`.
pub fn hvp_finite_difference(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    w: &[f64],
) -> Result<Vec<f64>> {
    if spec.output_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "hvp_finite_difference needs a single-output network (got {} outputs); \
             use hvp_finite_difference_for_coord",
            spec.output_dim()
        )));
    }
    hvp_finite_difference_for_coord(spec, params, x, 0, w)
}

pub fn hvp_finite_difference_for_coord(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    coord: usize,
    w: &[f64],
) -> Result<Vec<f64>> {
    check(spec, params, x, w, coord)?;
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; params.len()]);
    }
    let h = 1e-4 / norm;

    let mut shifted = params.clone();
    shifted.add_scaled(w, h);
    let up = crate::nn::engine::per_sample_gradient(spec, &shifted, x)?;
    let mut shifted = params.clone();
    shifted.add_scaled(w, -h);
    let down = crate::nn::engine::per_sample_gradient(spec, &shifted, x)?;

    Ok(up
        .row(coord)
        .iter()
        .zip(down.row(coord))
        .map(|(u, d)| (u - d) / (2.0 * h))
        .collect())
}
