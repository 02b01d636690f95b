//! Similarity-enforcement demo on a small classifier.
//!
//! Trains the same network once without an auxiliary term and once per
//! requested weight, holding the seed fixed so the runs differ only in the
//! similarity pressure. Samples of the same class form the similarity
//! groups, and validation accuracy is recorded at the end of every epoch.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, read_idx_with_labels, BlobSpec, Dataset};
use crate::enforce::{train_with_auxiliary_observed, SimilarityGroup, StepTrace};
use crate::error::{Error, Result};
use crate::nn::{
    forward, Activation, AdamConfig, Loss, NetworkSpec, ParamVector, TrainConfig,
};

/// Data source for the demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemoDataset {
    /// Two Gaussian blobs with labels ±1.
    Blobs { n_per_class: usize, sigma: f64 },
    /// IDX image/label pair, one-hot over 10 classes. `take` keeps only the
    /// first samples when given.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        take: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnforceDemoConfig {
    pub dataset: DemoDataset,
    /// Fraction of each class held out for validation.
    pub val_fraction: f64,
    /// Auxiliary weights to compare. A plain run (weight 0) always comes
    /// first, so the result holds `weights.len() + 1` runs.
    pub weights: Vec<f64>,
    /// Two-batch size for the default per-class groups.
    pub group_batch: usize,
    /// Explicit similarity groups (indices into the training split) instead
    /// of the per-class defaults.
    pub groups: Option<Vec<SimilarityGroup>>,
    /// Hidden layer widths; tanh activations, identity output.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EnforceDemoConfig {
    fn default() -> EnforceDemoConfig {
        EnforceDemoConfig {
            dataset: DemoDataset::Blobs {
                n_per_class: 48,
                sigma: 0.5,
            },
            val_fraction: 0.25,
            weights: vec![1.0],
            group_batch: 4,
            groups: None,
            hidden: vec![8],
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// One trained model of the comparison.
#[derive(Debug, Clone)]
pub struct DemoRun {
    pub aux_weight: f64,
    pub params: ParamVector,
    pub epoch_losses: Vec<f64>,
    pub trace: Vec<StepTrace>,
    /// Validation accuracy at the end of every epoch.
    pub val_accuracy: Vec<f64>,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct EnforceDemoResult {
    pub runs: Vec<DemoRun>,
    pub warnings: Vec<String>,
}

fn validate(config: &EnforceDemoConfig) -> Result<()> {
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in (0, 1), got {}",
            config.val_fraction
        )));
    }
    for &w in &config.weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "auxiliary weights must be finite and non-negative, got {w}"
            )));
        }
    }
    if config.group_batch == 0 {
        return Err(Error::InvalidArgument("group batch must be positive".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be positive".into(),
        ));
    }
    if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    Ok(())
}

fn load_dataset(config: &EnforceDemoConfig) -> Result<Dataset> {
    match &config.dataset {
        DemoDataset::Blobs { n_per_class, sigma } => gen_blobs(&BlobSpec {
            n_per_class: *n_per_class,
            sigma: *sigma,
            seed: config.seed,
            ..Default::default()
        }),
        DemoDataset::Idx {
            images,
            labels,
            take,
        } => read_idx_with_labels(images, labels, *take),
    }
}

fn class_of(label: &[f64]) -> usize {
    if label.len() == 1 {
        usize::from(label[0] > 0.0)
    } else {
        argmax(label)
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty vector")
        .0
}

/// Fraction of correctly classified samples: sign match for scalar labels,
/// argmax match for one-hot labels.
fn accuracy(
    spec: &NetworkSpec,
    params: &ParamVector,
    inputs: &[Vec<f64>],
    labels: &[Vec<f64>],
) -> Result<f64> {
    let mut correct = 0usize;
    for (x, label) in inputs.iter().zip(labels) {
        let out = forward(spec, params, x)?;
        let hit = if label.len() == 1 {
            (out[0] >= 0.0) == (label[0] > 0.0)
        } else {
            argmax(&out) == argmax(label)
        };
        correct += usize::from(hit);
    }
    Ok(correct as f64 / inputs.len() as f64)
}

struct Split {
    train: Dataset,
    val_inputs: Vec<Vec<f64>>,
    val_labels: Vec<Vec<f64>>,
    /// Training indices of each class, keyed by class id.
    class_members: Vec<(usize, Vec<usize>)>,
}

/// Hold out the last `val_fraction` of every class, keeping original order
/// within each split.
fn split_per_class(data: &Dataset, val_fraction: f64) -> Result<Split> {
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, label) in data.labels.iter().enumerate() {
        let class = class_of(label);
        match by_class.iter_mut().find(|(c, _)| *c == class) {
            Some((_, members)) => members.push(i),
            None => by_class.push((class, vec![i])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);

    let mut train_original: Vec<usize> = Vec::new();
    let mut val_original: Vec<usize> = Vec::new();
    for (_, members) in &by_class {
        let n_val = ((members.len() as f64) * val_fraction).round() as usize;
        let n_val = n_val.clamp(usize::from(members.len() >= 2), members.len() - 1);
        let n_train = members.len() - n_val;
        train_original.extend_from_slice(&members[..n_train]);
        val_original.extend_from_slice(&members[n_train..]);
    }
    if val_original.is_empty() {
        return Err(Error::InvalidArgument(
            "validation split is empty; enlarge the dataset".into(),
        ));
    }
    train_original.sort_unstable();
    val_original.sort_unstable();

    let train = Dataset::new(
        train_original
            .iter()
            .map(|&i| data.inputs[i].clone())
            .collect(),
        train_original
            .iter()
            .map(|&i| data.labels[i].clone())
            .collect(),
        data.meta.clone(),
    )?;
    let class_members = by_class
        .iter()
        .map(|(class, _)| {
            let members = train_original
                .iter()
                .enumerate()
                .filter(|(_, &orig)| class_of(&data.labels[orig]) == *class)
                .map(|(new, _)| new)
                .collect();
            (*class, members)
        })
        .collect();
    Ok(Split {
        train,
        val_inputs: val_original
            .iter()
            .map(|&i| data.inputs[i].clone())
            .collect(),
        val_labels: val_original
            .iter()
            .map(|&i| data.labels[i].clone())
            .collect(),
        class_members,
    })
}

/// One two-batch group per class with enough training members; classes that
/// are too small are skipped with a warning.
fn default_groups(
    split: &Split,
    group_batch: usize,
    output_dim: usize,
    warnings: &mut Vec<String>,
) -> Result<Vec<SimilarityGroup>> {
    let mut groups = Vec::new();
    for (class, members) in &split.class_members {
        if members.len() < 2 * group_batch {
            warnings.push(format!(
                "class {class} has {} training samples, fewer than the {} a group needs; skipped",
                members.len(),
                2 * group_batch
            ));
            continue;
        }
        let mut group = SimilarityGroup::two_batch(members.clone(), group_batch)?;
        if output_dim > 1 {
            group = group.with_output_coord(*class);
        }
        groups.push(group);
    }
    Ok(groups)
}

/// Run the weight comparison described by `config`.
pub fn run_enforce_demo(config: &EnforceDemoConfig) -> Result<EnforceDemoResult> {
    validate(config)?;
    let data = load_dataset(config)?;
    let split = split_per_class(&data, config.val_fraction)?;

    let input_dim = data.inputs[0].len();
    let output_dim = data.labels[0].len();
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&config.hidden);
    dims.push(output_dim);
    let spec = NetworkSpec::mlp(dims, Activation::Tanh)?;

    let mut warnings = Vec::new();
    let groups = match &config.groups {
        Some(groups) => groups.clone(),
        None => default_groups(&split, config.group_batch, output_dim, &mut warnings)?,
    };
    if groups.is_empty() && config.weights.iter().any(|&w| w > 0.0) {
        return Err(Error::InvalidArgument(
            "no class has enough training samples to form a similarity group".into(),
        ));
    }

    let train_config = TrainConfig {
        adam: AdamConfig {
            learning_rate: config.learning_rate,
            ..Default::default()
        },
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        loss: Loss::SquaredError,
    };

    let mut runs = Vec::with_capacity(1 + config.weights.len());
    for &weight in std::iter::once(&0.0).chain(&config.weights) {
        let mut val_accuracy = Vec::with_capacity(config.epochs);
        let mut failure = None;
        let mut observer = |_epoch: usize, params: &ParamVector| {
            match accuracy(&spec, params, &split.val_inputs, &split.val_labels) {
                Ok(acc) => val_accuracy.push(acc),
                Err(e) => failure = Some(e),
            }
        };
        let run = train_with_auxiliary_observed(
            &spec,
            &split.train,
            &groups,
            &train_config,
            weight,
            Some(&mut observer),
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        for warning in &run.warnings {
            warnings.push(format!("weight {weight}: {warning}"));
        }
        let final_accuracy = *val_accuracy.last().expect("one accuracy per epoch");
        runs.push(DemoRun {
            aux_weight: weight,
            params: run.params,
            epoch_losses: run.epoch_losses,
            trace: run.trace,
            val_accuracy,
            final_accuracy,
        });
    }
    Ok(EnforceDemoResult { runs, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{idx_image_bytes, idx_label_bytes};

    fn blob_config() -> EnforceDemoConfig {
        EnforceDemoConfig {
            dataset: DemoDataset::Blobs {
                n_per_class: 12,
                sigma: 0.5,
            },
            weights: vec![0.5],
            group_batch: 3,
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let ok = blob_config();
        let broken = [
            EnforceDemoConfig { val_fraction: 0.0, ..ok.clone() },
            EnforceDemoConfig { val_fraction: 1.0, ..ok.clone() },
            EnforceDemoConfig { val_fraction: f64::NAN, ..ok.clone() },
            EnforceDemoConfig { weights: vec![-0.1], ..ok.clone() },
            EnforceDemoConfig { weights: vec![f64::INFINITY], ..ok.clone() },
            EnforceDemoConfig { group_batch: 0, ..ok.clone() },
            EnforceDemoConfig { epochs: 0, ..ok.clone() },
            EnforceDemoConfig { learning_rate: 0.0, ..ok.clone() },
        ];
        for config in broken {
            assert!(run_enforce_demo(&config).is_err(), "{config:?}");
        }
    }

    #[test]
    fn baseline_comes_first_and_reruns_match() {
        let config = blob_config();
        let result = run_enforce_demo(&config).unwrap();
        assert_eq!(result.runs.len(), 2);

        let baseline = &result.runs[0];
        assert_eq!(baseline.aux_weight, 0.0);
        assert!(baseline.trace.iter().all(|t| t.criterion.is_none()));

        let enforced = &result.runs[1];
        assert_eq!(enforced.aux_weight, 0.5);
        assert!(enforced.trace.iter().all(|t| t.criterion.is_some()));
        assert_ne!(baseline.params.values(), enforced.params.values());

        for run in &result.runs {
            assert_eq!(run.val_accuracy.len(), config.epochs);
            assert_eq!(run.final_accuracy, *run.val_accuracy.last().unwrap());
        }

        let again = run_enforce_demo(&config).unwrap();
        for (a, b) in result.runs.iter().zip(&again.runs) {
            assert_eq!(a.params.values(), b.params.values());
            assert_eq!(a.val_accuracy, b.val_accuracy);
        }
    }

    #[test]
    fn well_separated_blobs_are_learned() {
        let config = EnforceDemoConfig {
            dataset: DemoDataset::Blobs {
                n_per_class: 24,
                sigma: 0.3,
            },
            weights: vec![],
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.05,
            ..Default::default()
        };
        let result = run_enforce_demo(&config).unwrap();
        assert_eq!(result.runs.len(), 1);
        assert!(
            result.runs[0].final_accuracy >= 0.9,
            "accuracy {}",
            result.runs[0].final_accuracy
        );
    }

    #[test]
    fn idx_classes_get_their_own_output_coordinate() {
        let dir = tempfile::tempdir().unwrap();
        let n = 16usize;
        // Classes 0 and 1, alternating: dark images for 0, bright for 1,
        // with a small per-sample ramp so inputs are distinct.
        let mut pixels = Vec::with_capacity(n * 4);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 2) as u8;
            let base: u8 = if class == 0 { 40 } else { 200 };
            for p in 0..4 {
                pixels.push(base + (i as u8) + (p as u8) * 3);
            }
            labels.push(class);
        }
        let images_path = dir.path().join("images.idx");
        let labels_path = dir.path().join("labels.idx");
        std::fs::write(&images_path, idx_image_bytes(&pixels, n as u32, 2, 2)).unwrap();
        std::fs::write(&labels_path, idx_label_bytes(&labels)).unwrap();

        let config = EnforceDemoConfig {
            dataset: DemoDataset::Idx {
                images: images_path,
                labels: labels_path,
                take: None,
            },
            weights: vec![0.3],
            group_batch: 2,
            hidden: vec![4],
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let result = run_enforce_demo(&config).unwrap();
        assert_eq!(result.runs.len(), 2);
        assert!(result.warnings.is_empty(), "{:?}", result.warnings);
        assert!(result.runs[1].trace.iter().all(|t| t.criterion.is_some()));
        for run in &result.runs {
            assert_eq!(run.val_accuracy.len(), 2);
            assert!(run.val_accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn too_small_classes_are_skipped_with_a_warning() {
        let config = EnforceDemoConfig {
            dataset: DemoDataset::Blobs {
                n_per_class: 12,
                sigma: 0.5,
            },
            weights: vec![],
            group_batch: 40,
            epochs: 2,
            ..Default::default()
        };
        let result = run_enforce_demo(&config).unwrap();
        assert_eq!(result.warnings.len(), 2);
        assert!(result.warnings[0].contains("skipped"));

        let enforcing = EnforceDemoConfig {
            weights: vec![1.0],
            ..config
        };
        assert!(run_enforce_demo(&enforcing).is_err());
    }
}
