//! Mini-batch Adam training with an optional auxiliary-loss callback.
//!
//! Training is bit-reproducible for a fixed seed: initialization and the
//! shuffle order come from separate labeled streams, and the auxiliary
//! callback draws from a third, so attaching one never perturbs the base run.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::nn::engine::{backward_accumulate, forward_into, max_width, TraceBuf};
use crate::nn::params::ParamVector;
use crate::nn::rng::{stream, STREAM_SHUFFLE};
use crate::nn::spec::NetworkSpec;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    SquaredError,
    /// Softmax cross-entropy over raw network outputs (logits).
    CrossEntropyPresoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 10,
            batch_size: 64,
            seed: 0,
            loss: Loss::SquaredError,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: ParamVector,
    /// Mean per-sample loss over each epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
}

/// Snapshot handed to the auxiliary callback once per optimizer step, after
/// the main batch gradient is formed and before the Adam update.
pub struct AuxContext<'a> {
    pub epoch: usize,
    /// Global step index, counting from 0.
    pub step: usize,
    pub batch: &'a [usize],
    pub main_loss: f64,
    pub params: &'a ParamVector,
}

/// Extra term added to the batch gradient. The gradient must already carry
/// any weighting the caller wants applied.
pub struct AuxTerm {
    pub value: f64,
    pub gradient: Vec<f64>,
}

pub type AuxCallback<'a> = dyn FnMut(&AuxContext) -> Result<Option<AuxTerm>> + 'a;

/// Per-sample loss value and its derivative with respect to the network
/// output.
pub(crate) fn loss_and_seed(loss: Loss, output: &[f64], label: &[f64], seed: &mut [f64]) -> f64 {
    match loss {
        Loss::SquaredError => {
            let mut total = 0.0;
            for ((s, o), y) in seed.iter_mut().zip(output).zip(label) {
                let r = o - y;
                total += r * r;
                *s = 2.0 * r;
            }
            total
        }
        Loss::CrossEntropyPresoftmax => {
            let max = output.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
            let sum_exp: f64 = output.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let label_mass: f64 = label.iter().sum();
            let mut total = 0.0;
            for ((s, &z), &y) in seed.iter_mut().zip(output).zip(label) {
                total -= y * (z - lse);
                *s = label_mass * (z - max).exp() / sum_exp - y;
            }
            total
        }
    }
}

fn check_train_inputs(spec: &NetworkSpec, data: &Dataset, config: &TrainConfig) -> Result<()> {
    spec.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if data.input_dim() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "training inputs",
            expected: spec.input_dim(),
            got: data.input_dim(),
        });
    }
    if data.label_dim() != spec.output_dim() {
        return Err(Error::ShapeMismatch {
            context: "training labels",
            expected: spec.output_dim(),
            got: data.label_dim(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    Ok(())
}

/// Train from the seeded initialization. See [`train_with_callback`] for the
/// auxiliary-loss variant.
pub fn train(spec: &NetworkSpec, data: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    train_with_callback(spec, data, config, None)
}

pub fn train_with_callback(
    spec: &NetworkSpec,
    data: &Dataset,
    config: &TrainConfig,
    mut aux: Option<&mut AuxCallback<'_>>,
) -> Result<TrainRun> {
    check_train_inputs(spec, data, config)?;

    let p = spec.param_count();
    let d = spec.output_dim();
    let n = data.len();
    let mut params = ParamVector::init(spec, config.seed);
    let mut shuffle_rng = stream(config.seed, &[STREAM_SHUFFLE]);

    let mut order: Vec<usize> = (0..n).collect();
    let mut buf = TraceBuf::<f64>::for_spec(spec);
    let width = max_width(spec);
    let mut delta = vec![0.0; width];
    let mut delta_next = vec![0.0; width];
    let mut seed = vec![0.0; d];
    let mut grad = vec![0.0; p];

    // Adam state.
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut t = 0u32;

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &sample in batch {
                forward_into(spec, params.values(), &data.inputs[sample], &mut buf);
                let loss =
                    loss_and_seed(config.loss, buf.output(), &data.labels[sample], &mut seed);
                batch_loss += loss * inv;
                backward_accumulate(
                    spec,
                    params.values(),
                    &buf,
                    &seed,
                    inv,
                    &mut grad,
                    &mut delta,
                    &mut delta_next,
                );
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss_sum += batch_loss * batch.len() as f64;

            if let Some(cb) = aux.as_deref_mut() {
                let ctx = AuxContext {
                    epoch,
                    step,
                    batch,
                    main_loss: batch_loss,
                    params: &params,
                };
                if let Some(term) = cb(&ctx)? {
                    if term.gradient.len() != p {
                        return Err(Error::ShapeMismatch {
                            context: "auxiliary gradient",
                            expected: p,
                            got: term.gradient.len(),
                        });
                    }
                    if !term.value.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            batch: batch_idx,
                        });
                    }
                    for (g, a) in grad.iter_mut().zip(&term.gradient) {
                        *g += a;
                    }
                }
            }

            t += 1;
            let bias1 = 1.0 - config.adam.beta1.powi(t as i32);
            let bias2 = 1.0 - config.adam.beta2.powi(t as i32);
            let values = params.values_mut();
            for k in 0..p {
                m[k] = config.adam.beta1 * m[k] + (1.0 - config.adam.beta1) * grad[k];
                v[k] = config.adam.beta2 * v[k] + (1.0 - config.adam.beta2) * grad[k] * grad[k];
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                values[k] -= config.adam.learning_rate * m_hat / (v_hat.sqrt() + config.adam.epsilon);
            }
            step += 1;
        }
        epoch_losses.push(epoch_loss_sum / n as f64);
    }

    Ok(TrainRun {
        params,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, ToySpec};
    use crate::nn::spec::Activation;

    fn tiny_dataset() -> Dataset {
        crate::data::gen_toy(&ToySpec::new(1.0, 32)).unwrap()
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let spec = NetworkSpec::mlp(vec![2, 8, 1], Activation::Tanh).unwrap();
        let data = tiny_dataset();
        let config = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 11,
            adam: AdamConfig::with_learning_rate(1e-2),
            loss: Loss::SquaredError,
        };
        let a = train(&spec, &data, &config).unwrap();
        let b = train(&spec, &data, &config).unwrap();
        assert_eq!(a.params.values(), b.params.values());
        assert_eq!(a.epoch_losses, b.epoch_losses);

        let c = train(
            &spec,
            &data,
            &TrainConfig {
                seed: 12,
                ..config
            },
        )
        .unwrap();
        assert_ne!(a.params.values(), c.params.values());
    }

    #[test]
    fn one_point_linear_fit_decreases_strictly_to_zero() {
        // With β1 = 0 and a large ε the Adam step is a damped gradient step,
        // so the error contracts geometrically and never crosses zero.
        let spec = NetworkSpec::mlp(vec![1, 1], Activation::Tanh).unwrap();
        let data = Dataset::new(
            vec![vec![0.5]],
            vec![vec![0.3]],
            DatasetMeta::default(),
        )
        .unwrap();
        let config = TrainConfig {
            adam: AdamConfig {
                learning_rate: 0.02,
                beta1: 0.0,
                beta2: 0.999,
                epsilon: 1.0,
            },
            epochs: 4000,
            batch_size: 1,
            seed: 0,
            loss: Loss::SquaredError,
        };
        let run = train(&spec, &data, &config).unwrap();
        let losses = &run.epoch_losses;
        let mut reached = false;
        for w in losses.windows(2) {
            if w[0] < 1e-10 {
                reached = true;
                break;
            }
            assert!(
                w[1] < w[0],
                "loss not strictly decreasing: {} then {}",
                w[0],
                w[1]
            );
        }
        assert!(
            reached || *losses.last().unwrap() < 1e-10,
            "never got below 1e-10: final {}",
            losses.last().unwrap()
        );
    }

    #[test]
    fn diverging_run_aborts_with_location() {
        let spec = NetworkSpec::mlp(vec![2, 8, 1], Activation::Tanh).unwrap();
        let data = tiny_dataset();
        let config = TrainConfig {
            adam: AdamConfig::with_learning_rate(1e300),
            epochs: 10,
            batch_size: 8,
            seed: 0,
            loss: Loss::SquaredError,
        };
        match train(&spec, &data, &config) {
            Err(Error::NonFiniteLoss { epoch, batch }) => {
                assert!(epoch <= 1, "blowup reported at epoch {epoch}, batch {batch}");
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn callback_sees_every_step_and_returning_nothing_changes_nothing() {
        let spec = NetworkSpec::mlp(vec![2, 4, 1], Activation::Tanh).unwrap();
        let data = tiny_dataset();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 10,
            seed: 2,
            adam: AdamConfig::default(),
            loss: Loss::SquaredError,
        };
        let plain = train(&spec, &data, &config).unwrap();

        let mut seen = Vec::new();
        let mut cb = |ctx: &AuxContext| {
            seen.push((ctx.epoch, ctx.step, ctx.batch.len()));
            Ok(None)
        };
        let with_cb = train_with_callback(&spec, &data, &config, Some(&mut cb)).unwrap();
        assert_eq!(plain.params.values(), with_cb.params.values());
        // 32 samples in batches of 10 → 4 steps per epoch, 3 epochs.
        assert_eq!(seen.len(), 12);
        assert_eq!(seen[0], (0, 0, 10));
        assert_eq!(seen[3].2, 2);
        assert_eq!(seen[11].0, 2);
    }

    #[test]
    fn cross_entropy_seed_matches_finite_differences() {
        let logits = vec![0.2, -1.1, 0.7];
        let label = vec![0.0, 1.0, 0.0];
        let mut seed = vec![0.0; 3];
        let base = loss_and_seed(Loss::CrossEntropyPresoftmax, &logits, &label, &mut seed);
        assert!(base > 0.0);
        let h = 1e-6;
        for c in 0..3 {
            let mut up = logits.clone();
            up[c] += h;
            let mut down = logits.clone();
            down[c] -= h;
            let mut scratch = vec![0.0; 3];
            let fd = (loss_and_seed(Loss::CrossEntropyPresoftmax, &up, &label, &mut scratch)
                - loss_and_seed(Loss::CrossEntropyPresoftmax, &down, &label, &mut scratch))
                / (2.0 * h);
            assert!((seed[c] - fd).abs() < 1e-8, "coord {c}: {} vs {}", seed[c], fd);
        }
        // Probabilities minus one-hot sum to zero.
        assert!(seed.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_shapes_and_empty_data() {
        let spec = NetworkSpec::mlp(vec![2, 4, 1], Activation::Tanh).unwrap();
        let empty = Dataset::new(vec![], vec![], DatasetMeta::default()).unwrap();
        assert!(train(&spec, &empty, &TrainConfig::default()).is_err());

        let bad_labels = Dataset::new(
            vec![vec![0.0, 0.0]],
            vec![vec![0.0, 0.0]],
            DatasetMeta::default(),
        )
        .unwrap();
        assert!(train(&spec, &bad_labels, &TrainConfig::default()).is_err());

        let data = tiny_dataset();
        let zero_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&spec, &data, &zero_batch).is_err());
    }
}
