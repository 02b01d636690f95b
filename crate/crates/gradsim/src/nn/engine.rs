//! Forward evaluation and exact reverse-mode gradients.
//!
//! The internal passes are generic over the scalar type: instantiated at `f64`
//! they are the ordinary forward/backward passes; instantiated at [`Dual`]
//! (with the derivative parts of the parameters seeded along a direction `w`)
//! the same code yields Hessian-vector products, see [`crate::nn::hvp`].

use crate::nn::params::ParamVector;
use crate::nn::scalar::Scalar;
use crate::nn::spec::NetworkSpec;
use crate::{Error, Result};

/// Reusable per-layer buffers for one forward pass.
pub(crate) struct TraceBuf<S> {
    /// `act[0]` is the input; `act[l + 1]` the activation after layer `l`.
    pub act: Vec<Vec<S>>,
    /// `pre[l]` is the pre-activation of layer `l`.
    pub pre: Vec<Vec<S>>,
}

impl<S: Scalar> TraceBuf<S> {
    pub fn for_spec(spec: &NetworkSpec) -> TraceBuf<S> {
        let act = spec
            .layer_sizes
            .iter()
            .map(|&n| vec![S::ZERO; n])
            .collect();
        let pre = spec.layer_sizes[1..]
            .iter()
            .map(|&n| vec![S::ZERO; n])
            .collect();
        TraceBuf { act, pre }
    }

    #[inline]
    pub fn output(&self) -> &[S] {
        self.act.last().unwrap()
    }
}

/// Run the network, filling `buf`. Shapes must already be validated.
pub(crate) fn forward_into<S: Scalar>(
    spec: &NetworkSpec,
    params: &[S],
    x: &[S],
    buf: &mut TraceBuf<S>,
) {
    debug_assert_eq!(x.len(), spec.input_dim());
    buf.act[0].copy_from_slice(x);
    let layout = spec.layout();
    for layer in 0..spec.num_layers() {
        let n_in = spec.layer_sizes[layer];
        let n_out = spec.layer_sizes[layer + 1];
        let w_off = layout.weight_offset(layer);
        let b_off = layout.bias_offset(layer);
        let activation = spec.layer_activation(layer);
        let (lo, hi) = buf.act.split_at_mut(layer + 1);
        let input = lo[layer].as_slice();
        let out = &mut hi[0];
        let pre = &mut buf.pre[layer];
        for o in 0..n_out {
            let row = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
            let mut z = params[b_off + o];
            for (w, a) in row.iter().zip(input) {
                z = z + *w * *a;
            }
            pre[o] = z;
            out[o] = activation.apply(z);
        }
    }
}

/// Accumulate `scale * ∇_θ (seed · f(x))` into `acc`.
///
/// `seed` is a cotangent over the network outputs (after the output
/// activation). `delta` and `delta_next` are scratch buffers at least as wide
/// as the widest layer.
pub(crate) fn backward_accumulate<S: Scalar>(
    spec: &NetworkSpec,
    params: &[S],
    buf: &TraceBuf<S>,
    seed: &[S],
    scale: S,
    acc: &mut [S],
    delta: &mut [S],
    delta_next: &mut [S],
) {
    let layout = spec.layout();
    let num_layers = spec.num_layers();
    let d = spec.output_dim();
    debug_assert_eq!(seed.len(), d);
    debug_assert_eq!(acc.len(), layout.total);

    // Cotangent of the last pre-activation.
    let out_act = spec.layer_activation(num_layers - 1);
    for o in 0..d {
        delta[o] = seed[o] * out_act.derivative(buf.pre[num_layers - 1][o]);
    }

    for layer in (0..num_layers).rev() {
        let n_in = spec.layer_sizes[layer];
        let n_out = spec.layer_sizes[layer + 1];
        let w_off = layout.weight_offset(layer);
        let b_off = layout.bias_offset(layer);
        let input = &buf.act[layer];

        for o in 0..n_out {
            let g = scale * delta[o];
            let row = &mut acc[w_off + o * n_in..w_off + (o + 1) * n_in];
            for (slot, a) in row.iter_mut().zip(input) {
                *slot = *slot + g * *a;
            }
            acc[b_off + o] = acc[b_off + o] + g;
        }

        if layer > 0 {
            let activation = spec.layer_activation(layer - 1);
            let pre_prev = &buf.pre[layer - 1];
            for i in 0..n_in {
                let mut s = S::ZERO;
                for o in 0..n_out {
                    s = s + params[w_off + o * n_in + i] * delta[o];
                }
                delta_next[i] = s * activation.derivative(pre_prev[i]);
            }
            delta[..n_in].copy_from_slice(&delta_next[..n_in]);
        }
    }
}

pub(crate) fn max_width(spec: &NetworkSpec) -> usize {
    *spec.layer_sizes.iter().max().unwrap()
}

fn check_io(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> Result<()> {
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
    Ok(())
}

/// Network output for one input.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_io(spec, params, x)?;
    let mut buf = TraceBuf::for_spec(spec);
    forward_into(spec, params.values(), x, &mut buf);
    Ok(buf.act.pop().unwrap())
}

/// Full forward pass with every intermediate activation exposed.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of
    /// affine layer `l` after its activation.
    pub activations: Vec<Vec<f64>>,
    /// `pre_activations[l]` is the affine output of layer `l` before its
    /// activation.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    #[inline]
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

pub fn forward_with_trace(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
) -> Result<ForwardTrace> {
    check_io(spec, params, x)?;
    let mut buf = TraceBuf::for_spec(spec);
    forward_into(spec, params.values(), x, &mut buf);
    Ok(ForwardTrace {
        activations: buf.act,
        pre_activations: buf.pre,
    })
}

/// Jacobian of the network outputs with respect to the parameters: one row of
/// length `p` per output coordinate, with cached row norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    d: usize,
    p: usize,
    values: Vec<f64>,
    row_norms: Vec<f64>,
}

impl GradientMatrix {
    pub fn from_flat(d: usize, p: usize, values: Vec<f64>) -> GradientMatrix {
        assert_eq!(
            values.len(),
            d * p,
            "gradient matrix values: expected {} entries, got {}",
            d * p,
            values.len()
        );
        let row_norms = (0..d)
            .map(|i| {
                values[i * p..(i + 1) * p]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        GradientMatrix {
            d,
            p,
            values,
            row_norms,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> GradientMatrix {
        assert!(!rows.is_empty(), "gradient matrix needs at least one row");
        let p = rows[0].len();
        let d = rows.len();
        let mut values = Vec::with_capacity(d * p);
        for row in rows {
            assert_eq!(row.len(), p, "gradient rows must have equal length");
            values.extend_from_slice(&row);
        }
        GradientMatrix::from_flat(d, p, values)
    }

    /// Number of output coordinates (rows).
    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of parameters (columns).
    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    /// Cached L2 norm of row `i`.
    #[inline]
    pub fn norm(&self, i: usize) -> f64 {
        self.row_norms[i]
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Exact reverse-mode gradient of every output coordinate: row `i` is
/// `∇_θ f^i(x)`.
pub fn per_sample_gradient(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
) -> Result<GradientMatrix> {
    check_io(spec, params, x)?;
    let mut buf = TraceBuf::for_spec(spec);
    forward_into(spec, params.values(), x, &mut buf);

    let d = spec.output_dim();
    let p = spec.param_count();
    let width = max_width(spec);
    let mut delta = vec![0.0; width];
    let mut delta_next = vec![0.0; width];
    let mut seed = vec![0.0; d];
    let mut values = vec![0.0; d * p];
    for i in 0..d {
        seed[i] = 1.0;
        backward_accumulate(
            spec,
            params.values(),
            &buf,
            &seed,
            1.0,
            &mut values[i * p..(i + 1) * p],
            &mut delta,
            &mut delta_next,
        );
        seed[i] = 0.0;
    }
    Ok(GradientMatrix::from_flat(d, p, values))
}
