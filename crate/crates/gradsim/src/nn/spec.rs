//! Network architecture description and the flat parameter layout derived
//! from it.
//!
//! Parameters are flattened layer-major, weights before bias, weight matrices
//! row-major. The layout table makes every offset explicit so that gradient
//! vectors can be split by parameter group without consulting the engine.

use serde::{Deserialize, Serialize};

use crate::nn::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.relu(),
            Activation::Sigmoid => z.sigmoid(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation, expressed in the same
    /// scalar type so it stays differentiable when evaluated on duals.
    #[inline]
    pub(crate) fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                S::ONE - t * t
            }
            Activation::Relu => z.relu_grad(),
            Activation::Sigmoid => {
                let s = z.sigmoid();
                s * (S::ONE - s)
            }
            Activation::Identity => S::ONE,
        }
    }
}

/// Fully-connected network shape: `layer_sizes[0]` inputs, then one affine
/// layer per consecutive pair of sizes.
///
/// `activations` holds one tag per hidden layer; the output layer uses
/// `output_activation` (identity unless stated otherwise). A spec with
/// `layer_sizes.len() == 2` and no hidden activation is a single affine map,
/// which is what the linear-model baselines in the tests use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(default = "identity_activation")]
    pub output_activation: Activation,
}

fn identity_activation() -> Activation {
    Activation::Identity
}

impl NetworkSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        output_activation: Activation,
    ) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            layer_sizes,
            activations,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Multi-layer perceptron with the same activation on every hidden layer
    /// and an identity output.
    pub fn mlp(layer_sizes: Vec<usize>, hidden: Activation) -> Result<NetworkSpec> {
        let hidden_count = layer_sizes.len().saturating_sub(2);
        NetworkSpec::new(layer_sizes, vec![hidden; hidden_count], Activation::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!(
                "layer_sizes[{pos}] is zero"
            )));
        }
        let hidden = self.layer_sizes.len() - 2;
        if self.activations.len() != hidden {
            return Err(Error::InvalidSpec(format!(
                "{} hidden layer(s) but {} activation tag(s)",
                hidden,
                self.activations.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Activation applied after affine layer `layer` (0-based).
    #[inline]
    pub fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.activations[layer]
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    pub fn layout(&self) -> Layout {
        Layout::of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One contiguous block of the flat parameter vector.
///
/// Weights are `rows × cols` (output × input) stored row-major; biases use
/// `cols == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayoutEntry {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub total: usize,
}

impl Layout {
    pub fn of(spec: &NetworkSpec) -> Layout {
        let mut entries = Vec::with_capacity(2 * spec.num_layers());
        let mut offset = 0;
        for (layer, w) in spec.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Weight,
                rows: n_out,
                cols: n_in,
                offset,
            });
            offset += n_out * n_in;
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Bias,
                rows: n_out,
                cols: 1,
                offset,
            });
            offset += n_out;
        }
        Layout {
            entries,
            total: offset,
        }
    }

    pub fn entry(&self, layer: usize, kind: ParamKind) -> Option<&LayoutEntry> {
        self.entries
            .iter()
            .find(|e| e.layer == layer && e.kind == kind)
    }

    /// Offset of the weight block for `layer`.
    #[inline]
    pub(crate) fn weight_offset(&self, layer: usize) -> usize {
        self.entries[2 * layer].offset
    }

    /// Offset of the bias block for `layer`.
    #[inline]
    pub(crate) fn bias_offset(&self, layer: usize) -> usize {
        self.entries[2 * layer + 1].offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_specs() {
        assert!(NetworkSpec::mlp(vec![3], Activation::Tanh).is_err());
        assert!(NetworkSpec::mlp(vec![3, 0, 1], Activation::Tanh).is_err());
        assert!(NetworkSpec::new(
            vec![3, 4, 1],
            vec![Activation::Tanh, Activation::Tanh],
            Activation::Identity
        )
        .is_err());
        assert!(NetworkSpec::new(vec![3, 4, 1], vec![], Activation::Identity).is_err());
    }

    #[test]
    fn single_affine_layer_is_allowed() {
        let spec = NetworkSpec::mlp(vec![2, 1], Activation::Tanh).unwrap();
        assert_eq!(spec.num_layers(), 1);
        assert_eq!(spec.param_count(), 3);
        assert_eq!(spec.layer_activation(0), Activation::Identity);
    }

    #[test]
    fn layout_is_contiguous_layer_major() {
        let spec = NetworkSpec::mlp(vec![3, 4, 2], Activation::Tanh).unwrap();
        let layout = spec.layout();
        assert_eq!(layout.total, spec.param_count());
        assert_eq!(layout.total, 3 * 4 + 4 + 4 * 2 + 2);

        // Blocks tile the vector without gaps, weights before bias per layer.
        let mut expected_offset = 0;
        for (i, e) in layout.entries.iter().enumerate() {
            assert_eq!(e.offset, expected_offset);
            expected_offset += e.len();
            let expected_kind = if i % 2 == 0 {
                ParamKind::Weight
            } else {
                ParamKind::Bias
            };
            assert_eq!(e.kind, expected_kind);
            assert_eq!(e.layer, i / 2);
        }
        assert_eq!(expected_offset, layout.total);

        let w1 = layout.entry(1, ParamKind::Weight).unwrap();
        assert_eq!((w1.rows, w1.cols), (2, 4));
        assert_eq!(w1.offset, 3 * 4 + 4);
    }

    #[test]
    fn layer_activation_uses_output_tag_on_last_layer() {
        let spec = NetworkSpec::new(
            vec![2, 5, 5, 3],
            vec![Activation::Relu, Activation::Tanh],
            Activation::Sigmoid,
        )
        .unwrap();
        assert_eq!(spec.layer_activation(0), Activation::Relu);
        assert_eq!(spec.layer_activation(1), Activation::Tanh);
        assert_eq!(spec.layer_activation(2), Activation::Sigmoid);
    }
}
