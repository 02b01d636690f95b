//! Flat parameter vector tied to a layout.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::nn::rng::{self, STREAM_INIT};
use crate::nn::spec::{Layout, LayoutEntry, NetworkSpec, ParamKind};
use crate::{Error, Result};

/// All parameters of a network as one contiguous `f64` vector plus the layout
/// describing which slice belongs to which layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<ParamVector> {
        if values.len() != layout.total {
            return Err(Error::ShapeMismatch {
                context: "parameter vector",
                expected: layout.total,
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(spec: &NetworkSpec) -> ParamVector {
        let layout = spec.layout();
        ParamVector {
            values: vec![0.0; layout.total],
            layout,
        }
    }

    /// Seeded initialization: each block is drawn uniformly from
    /// `[-1/√fan_in, +1/√fan_in]` out of a ChaCha8 stream keyed by
    /// `(seed, layer, kind)`, so any one layer's draw is independent of the
    /// sizes of the others.
    pub fn init(spec: &NetworkSpec, seed: u64) -> ParamVector {
        let layout = spec.layout();
        let mut values = vec![0.0; layout.total];
        for entry in &layout.entries {
            let fan_in = spec.layer_sizes[entry.layer];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let kind_tag = match entry.kind {
                ParamKind::Weight => 0,
                ParamKind::Bias => 1,
            };
            let mut rng = rng::stream(seed, &[STREAM_INIT, entry.layer as u64, kind_tag]);
            for v in &mut values[entry.range()] {
                *v = dist.sample(&mut rng);
            }
        }
        ParamVector { values, layout }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn block(&self, entry: &LayoutEntry) -> &[f64] {
        &self.values[entry.range()]
    }

    /// Add `step * direction` in place.
    pub fn add_scaled(&mut self, direction: &[f64], step: f64) {
        assert_eq!(
            direction.len(),
            self.values.len(),
            "direction length {} does not match parameter count {}",
            direction.len(),
            self.values.len()
        );
        for (v, d) in self.values.iter_mut().zip(direction) {
            *v += step * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Activation;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = NetworkSpec::mlp(vec![3, 8, 2], Activation::Tanh).unwrap();
        let a = ParamVector::init(&spec, 42);
        let b = ParamVector::init(&spec, 42);
        let c = ParamVector::init(&spec, 43);
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());

        let layout = spec.layout();
        for entry in &layout.entries {
            let bound = 1.0 / (spec.layer_sizes[entry.layer] as f64).sqrt();
            for &v in a.block(entry) {
                assert!(v.abs() <= bound, "{v} outside ±{bound}");
            }
        }
    }

    #[test]
    fn per_layer_streams_do_not_shift_across_architectures() {
        // Growing a later layer must not change the draw of an earlier one.
        let small = NetworkSpec::mlp(vec![3, 8, 2], Activation::Tanh).unwrap();
        let large = NetworkSpec::mlp(vec![3, 8, 5], Activation::Tanh).unwrap();
        let a = ParamVector::init(&small, 7);
        let b = ParamVector::init(&large, 7);
        let w0 = small.layout().entry(0, ParamKind::Weight).copied().unwrap();
        assert_eq!(a.block(&w0), b.block(&w0));
    }

    #[test]
    fn new_rejects_wrong_length() {
        let spec = NetworkSpec::mlp(vec![2, 2, 1], Activation::Tanh).unwrap();
        assert!(ParamVector::new(vec![0.0; 3], spec.layout()).is_err());
    }
}
