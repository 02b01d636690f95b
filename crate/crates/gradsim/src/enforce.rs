//! Similarity enforcement during training.
//!
//! The correlation kernel of a network is not only something to observe, it
//! can be shaped. Adding a term to the training loss that pulls the
//! per-sample gradients of chosen samples together makes those samples
//! influence each other's updates. This module provides the pieces:
//!
//! * [`pair_loss`], the differentiable loss `-k_corr(x, x')` with its exact
//!   parameter gradient obtained by double backprop (two Hessian-vector
//!   products);
//! * [`batch_criterion`], a cheaper surrogate comparing the mean raw
//!   gradients of two sample batches, also with an exact gradient;
//! * [`group_stats`], summary statistics of a sample group whose closed-form
//!   identities make good consistency checks;
//! * [`density_homogeneity_loss`], an evaluation-only measure of how far a
//!   bank's soft neighbor counts sit from a target density;
//! * [`train_with_auxiliary`], which mixes a group criterion into an
//!   ordinary training run as a weighted auxiliary loss.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::{count_soft_all_fast, GradientBank};
use crate::error::{Error, Result};
use crate::nn::rng::{stream, STREAM_AUX};
use crate::nn::{
    grad_of_inner_product_for_coord, per_sample_gradient, train_with_callback, AuxContext,
    AuxTerm, NetworkSpec, ParamVector, TrainConfig,
};

/// How a group turns its members into a per-step criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Average the pair loss over every unordered pair in the group. Exact
    /// but quadratic in group size; meant for small groups.
    AllPairs,
    /// Draw two disjoint batches from the group and compare their mean raw
    /// gradients. Cost grows linearly with the batch size.
    TwoBatch,
}

/// A set of training samples whose gradients should be pulled together.
///
/// Groups serialize to JSON for use in config files, e.g.
/// `{"indices": [0, 1, 2, 3], "mode": "two_batch", "batch_size": 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGroup {
    /// Dataset indices of the members. At least two, all distinct.
    pub indices: Vec<usize>,
    pub mode: PairingMode,
    /// Per-batch sample count in two-batch mode; must satisfy
    /// `1 <= batch_size <= indices.len() / 2` so two disjoint batches fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Output coordinate whose gradient is used. May be omitted for
    /// single-output networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_coord: Option<usize>,
}

impl SimilarityGroup {
    pub fn all_pairs(indices: Vec<usize>) -> Result<SimilarityGroup> {
        let group = SimilarityGroup {
            indices,
            mode: PairingMode::AllPairs,
            batch_size: None,
            output_coord: None,
        };
        group.check_shape()?;
        Ok(group)
    }

    pub fn two_batch(indices: Vec<usize>, batch_size: usize) -> Result<SimilarityGroup> {
        let group = SimilarityGroup {
            indices,
            mode: PairingMode::TwoBatch,
            batch_size: Some(batch_size),
            output_coord: None,
        };
        group.check_shape()?;
        Ok(group)
    }

    pub fn with_output_coord(mut self, coord: usize) -> SimilarityGroup {
        self.output_coord = Some(coord);
        self
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.indices.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "a similarity group needs at least 2 members, got {n}"
            )));
        }
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "similarity group indices must be distinct".into(),
            ));
        }
        match (self.mode, self.batch_size) {
            (PairingMode::TwoBatch, Some(nb)) if nb >= 1 && 2 * nb <= n => Ok(()),
            (PairingMode::TwoBatch, Some(nb)) => Err(Error::InvalidArgument(format!(
                "two-batch group of {n} members cannot supply two disjoint batches of {nb}"
            ))),
            (PairingMode::TwoBatch, None) => Err(Error::InvalidArgument(
                "two-batch mode needs a batch_size".into(),
            )),
            (PairingMode::AllPairs, None) => Ok(()),
            (PairingMode::AllPairs, Some(_)) => Err(Error::InvalidArgument(
                "batch_size only applies to two-batch mode".into(),
            )),
        }
    }

    /// Check the group against the dataset it will index into.
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        self.check_shape()?;
        for &i in &self.indices {
            if i >= dataset_len {
                return Err(Error::InvalidArgument(format!(
                    "group index {i} out of range for a dataset of {dataset_len} samples"
                )));
            }
        }
        Ok(())
    }
}

fn resolved_coord(group: &SimilarityGroup, spec: &NetworkSpec) -> Result<usize> {
    let d = spec.output_dim();
    match group.output_coord {
        Some(c) if c < d => Ok(c),
        Some(c) => Err(Error::InvalidArgument(format!(
            "output_coord {c} out of range for a network with {d} outputs"
        ))),
        None if d == 1 => Ok(0),
        None => Err(Error::InvalidArgument(format!(
            "similarity groups need an output_coord when the network has {d} outputs"
        ))),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of one output coordinate with respect to the parameters.
fn gradient_row(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    coord: usize,
) -> Result<Vec<f64>> {
    if coord >= spec.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "output coordinate {coord} out of range for {} outputs",
            spec.output_dim()
        )));
    }
    let g = per_sample_gradient(spec, params, x)?;
    Ok(g.row(coord).to_vec())
}

/// Value and parameter gradient of the pair loss `-k_corr(x, x')`.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Pair loss for a single-output network.
///
/// Minimizing the value drives the correlation similarity of the two samples
/// toward its maximum of 1. See [`pair_loss_for_coord`] for the gradient
/// construction.
pub fn pair_loss(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    x_other: &[f64],
) -> Result<PairLoss> {
    if spec.output_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "pair_loss needs a single-output network (got {} outputs); \
             use pair_loss_for_coord",
            spec.output_dim()
        )));
    }
    pair_loss_for_coord(spec, params, x, x_other, 0)
}

/// Pair loss on one output coordinate of the network.
///
/// Writing `g = ∇_θ f(x)`, `g' = ∇_θ f(x')` and `s = g·g'`, the loss is
/// `-s / (‖g‖‖g'‖)`. Differentiating through both gradients gives
///
/// ```text
/// ∇_θ k_corr = H_x w  + H_x' w',
///   w  = (g' - (s/‖g‖²) g)  / (‖g‖‖g'‖)
///   w' = (g  - (s/‖g'‖²) g') / (‖g‖‖g'‖)
/// ```
///
/// so the exact gradient costs two Hessian-vector products on top of the two
/// per-sample gradients. When `x' = x` the directions vanish and the
/// gradient is exactly zero: the loss sits at its minimum of -1.
pub fn pair_loss_for_coord(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    x_other: &[f64],
    coord: usize,
) -> Result<PairLoss> {
    let g = gradient_row(spec, params, x, coord)?;
    let g_other = gradient_row(spec, params, x_other, coord)?;
    let s_xx = dot(&g, &g);
    let s_yy = dot(&g_other, &g_other);
    if s_xx == 0.0 {
        return Err(Error::DegeneratePair { which: "left" });
    }
    if s_yy == 0.0 {
        return Err(Error::DegeneratePair { which: "right" });
    }
    let s_xy = dot(&g, &g_other);
    let denom = (s_xx * s_yy).sqrt();
    let value = -(s_xy / denom);

    // Ratios rather than norms keep w exactly zero when the gradients are
    // bitwise equal, so the x' = x case lands on gradient 0 with no rounding.
    let r_x = s_xy / s_xx;
    let r_y = s_xy / s_yy;
    let w_x: Vec<f64> = g
        .iter()
        .zip(&g_other)
        .map(|(&gi, &hi)| (hi - r_x * gi) / denom)
        .collect();
    let w_y: Vec<f64> = g
        .iter()
        .zip(&g_other)
        .map(|(&gi, &hi)| (gi - r_y * hi) / denom)
        .collect();
    let h_x = grad_of_inner_product_for_coord(spec, params, x, coord, &w_x)?;
    let h_y = grad_of_inner_product_for_coord(spec, params, x_other, coord, &w_y)?;
    let gradient = h_x.iter().zip(&h_y).map(|(&a, &b)| -(a + b)).collect();
    Ok(PairLoss { value, gradient })
}

/// Summary statistics of a sample group's unit gradients.
///
/// With `u_i = g_i / ‖g_i‖` and `μ` their mean, two identities tie the
/// fields together: the mean pairwise correlation equals
/// `(n‖μ‖² - 1) / (n - 1)` and the variance equals `1 - ‖μ‖²`. Each field is
/// computed directly from its own definition, so the identities stay
/// meaningful as a cross-check.
#[derive(Debug, Clone, Copy)]
pub struct GroupStats {
    /// Mean of `k_corr(i, j)` over unordered pairs of distinct members.
    pub mean_pairwise: f64,
    /// Squared norm of the mean unit gradient, `‖μ‖²`.
    pub mean_norm_sq: f64,
    /// Mean squared deviation of the unit gradients from `μ`.
    pub variance: f64,
}

pub fn group_stats(bank: &GradientBank, indices: &[usize]) -> Result<GroupStats> {
    let n = indices.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "group statistics need at least 2 members, got {n}"
        )));
    }
    for &i in indices {
        if i >= bank.len() {
            return Err(Error::InvalidArgument(format!(
                "group index {i} out of range for a bank of {} samples",
                bank.len()
            )));
        }
        if !bank.is_defined(i) {
            return Err(Error::UndefinedSample { index: i });
        }
    }

    let mut pair_sum = 0.0;
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            pair_sum += bank.correlation(i, j)?;
        }
    }
    let mean_pairwise = pair_sum * 2.0 / (n as f64 * (n as f64 - 1.0));

    let p = bank.dim();
    let mut mu = vec![0.0; p];
    for &i in indices {
        let g = bank.gradient(i);
        let norm = bank.norm(i);
        for (m, &v) in mu.iter_mut().zip(g) {
            *m += v / norm;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mean_norm_sq = dot(&mu, &mu);

    let mut variance = 0.0;
    for &i in indices {
        let g = bank.gradient(i);
        let norm = bank.norm(i);
        let dev_sq: f64 = g
            .iter()
            .zip(&mu)
            .map(|(&v, &m)| {
                let d = v / norm - m;
                d * d
            })
            .sum();
        variance += dev_sq;
    }
    variance /= n as f64;

    Ok(GroupStats {
        mean_pairwise,
        mean_norm_sq,
        variance,
    })
}

/// Value and parameter gradient of the two-batch criterion.
#[derive(Debug, Clone)]
pub struct BatchCriterion {
    pub value: f64,
    pub gradient: Vec<f64>,
}

struct BatchMeans {
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    diff: Vec<f64>,
    dist_sq: f64,
    norm1: f64,
    norm2: f64,
    value: f64,
}

fn batch_means(rows1: &[Vec<f64>], rows2: &[Vec<f64>]) -> Result<BatchMeans> {
    if rows1.len() != rows2.len() {
        return Err(Error::InvalidArgument(format!(
            "batches must have equal size, got {} and {}",
            rows1.len(),
            rows2.len()
        )));
    }
    let n_b = rows1.len();
    if n_b == 0 {
        return Err(Error::InvalidArgument("batches must be non-empty".into()));
    }
    let p = rows1[0].len();
    for row in rows1.iter().chain(rows2) {
        if row.len() != p {
            return Err(Error::ShapeMismatch {
                context: "batch gradient row",
                expected: p,
                got: row.len(),
            });
        }
    }
    let mean = |rows: &[Vec<f64>]| -> Vec<f64> {
        let mut mu = vec![0.0; p];
        for row in rows {
            for (m, &v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mu {
            *m /= n_b as f64;
        }
        mu
    };
    let mu1 = mean(rows1);
    let mu2 = mean(rows2);
    let norm1 = dot(&mu1, &mu1).sqrt();
    if norm1 == 0.0 {
        return Err(Error::DegenerateBatch { batch: 1 });
    }
    let norm2 = dot(&mu2, &mu2).sqrt();
    if norm2 == 0.0 {
        return Err(Error::DegenerateBatch { batch: 2 });
    }
    let diff: Vec<f64> = mu1.iter().zip(&mu2).map(|(&a, &b)| a - b).collect();
    let dist_sq = dot(&diff, &diff);
    let value = n_b as f64 * dist_sq / (norm1 * norm2);
    Ok(BatchMeans {
        mu1,
        mu2,
        diff,
        dist_sq,
        norm1,
        norm2,
        value,
    })
}

/// Criterion value from precomputed per-sample gradient rows.
///
/// `n_B ‖μ₁-μ₂‖² / (‖μ₁‖‖μ₂‖)` where `μ_k` is the mean row of batch `k`.
/// The value is invariant to scaling every row by a common positive factor.
pub fn batch_criterion_from_gradients(rows1: &[Vec<f64>], rows2: &[Vec<f64>]) -> Result<f64> {
    Ok(batch_means(rows1, rows2)?.value)
}

/// Two-batch criterion for a single-output network.
pub fn batch_criterion(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch1: &[&[f64]],
    batch2: &[&[f64]],
) -> Result<BatchCriterion> {
    if spec.output_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "batch_criterion needs a single-output network (got {} outputs); \
             use batch_criterion_for_coord",
            spec.output_dim()
        )));
    }
    batch_criterion_for_coord(spec, params, batch1, batch2, 0)
}

/// Two-batch criterion on one output coordinate.
///
/// Compares the mean raw (unnormalized) per-sample gradients `μ₁, μ₂` of two
/// disjoint batches through `n_B ‖μ₁-μ₂‖² / (‖μ₁‖‖μ₂‖)`. The normalizer
/// makes the value degree-0 homogeneous in the gradients, so shrinking all
/// gradients together does not fake progress.
///
/// The parameter gradient needs one Hessian-vector product per batch member:
/// every sample of batch 1 contributes `H_x v₁` with
/// `v₁ = 2(μ₁-μ₂)/(‖μ₁‖‖μ₂‖) - ‖μ₁-μ₂‖²/(‖μ₁‖³‖μ₂‖) μ₁`, and batch 2
/// symmetrically with the difference negated. Batches are the caller's
/// responsibility to keep disjoint.
pub fn batch_criterion_for_coord(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch1: &[&[f64]],
    batch2: &[&[f64]],
    coord: usize,
) -> Result<BatchCriterion> {
    let rows1: Vec<Vec<f64>> = batch1
        .par_iter()
        .map(|x| gradient_row(spec, params, x, coord))
        .collect::<Result<_>>()?;
    let rows2: Vec<Vec<f64>> = batch2
        .par_iter()
        .map(|x| gradient_row(spec, params, x, coord))
        .collect::<Result<_>>()?;
    let m = batch_means(&rows1, &rows2)?;

    let p = params.len();
    let mut gradient = vec![0.0; p];
    // At dist_sq = 0 the criterion sits at its global minimum and both terms
    // of the derivative carry a factor of the difference, so the gradient is
    // exactly zero and the HVPs can be skipped.
    if m.dist_sq > 0.0 {
        let ab = m.norm1 * m.norm2;
        let scale1 = m.dist_sq / (m.norm1 * m.norm1 * ab);
        let scale2 = m.dist_sq / (m.norm2 * m.norm2 * ab);
        let dir1: Vec<f64> = m
            .diff
            .iter()
            .zip(&m.mu1)
            .map(|(&d, &mu)| 2.0 * d / ab - scale1 * mu)
            .collect();
        let dir2: Vec<f64> = m
            .diff
            .iter()
            .zip(&m.mu2)
            .map(|(&d, &mu)| -2.0 * d / ab - scale2 * mu)
            .collect();
        let hvps1: Vec<Vec<f64>> = batch1
            .par_iter()
            .map(|x| grad_of_inner_product_for_coord(spec, params, x, coord, &dir1))
            .collect::<Result<_>>()?;
        let hvps2: Vec<Vec<f64>> = batch2
            .par_iter()
            .map(|x| grad_of_inner_product_for_coord(spec, params, x, coord, &dir2))
            .collect::<Result<_>>()?;
        for h in hvps1.iter().chain(&hvps2) {
            for (g, &v) in gradient.iter_mut().zip(h) {
                *g += v;
            }
        }
    }
    Ok(BatchCriterion {
        value: m.value,
        gradient,
    })
}

/// How far the bank's soft neighbor counts sit from a target density `q`.
///
/// Evaluates `Σ_i (N_S(x_i)/n - q)²` over the defined samples, where `N_S`
/// is the soft neighbor count and `n` the bank size. Zero means every sample
/// sees exactly the fraction `q` of the bank as neighbors. Evaluation-only;
/// no gradient path is provided.
pub fn density_homogeneity_loss(bank: &GradientBank, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target density must lie in (0, 1], got {q}"
        )));
    }
    let n = bank.len() as f64;
    let loss = count_soft_all_fast(bank)
        .iter()
        .flatten()
        .map(|&ns| {
            let dev = ns / n - q;
            dev * dev
        })
        .sum();
    Ok(loss)
}

/// One optimizer step of [`train_with_auxiliary`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub epoch: usize,
    /// Mean main loss of the step's batch, before the auxiliary term.
    pub main_loss: f64,
    /// Raw (unweighted) group criterion, when one was evaluated this step.
    pub criterion: Option<f64>,
}

/// Result of a training run with an auxiliary similarity loss.
#[derive(Debug, Clone)]
pub struct AuxRun {
    pub params: ParamVector,
    pub epoch_losses: Vec<f64>,
    pub trace: Vec<StepTrace>,
    /// Steps where the criterion had to be skipped, with the reason.
    pub warnings: Vec<String>,
}

/// Train while adding `aux_weight` times a group criterion to each step.
///
/// Every optimizer step picks one group uniformly at random (its own RNG
/// stream, independent of the shuffle stream) and evaluates its criterion:
/// two fresh disjoint batches compared via [`batch_criterion_for_coord`] in
/// two-batch mode, or the mean [`pair_loss_for_coord`] over all pairs in
/// all-pairs mode. The weighted gradient is added to the batch gradient
/// before the optimizer update.
///
/// With `aux_weight = 0` no criterion is evaluated and the run reproduces
/// [`crate::nn::train`] bit-exactly for the same config. Degenerate
/// criterion evaluations (zero gradient norms) are skipped with a warning
/// instead of aborting the run.
pub fn train_with_auxiliary(
    spec: &NetworkSpec,
    data: &Dataset,
    groups: &[SimilarityGroup],
    config: &TrainConfig,
    aux_weight: f64,
) -> Result<AuxRun> {
    train_with_auxiliary_observed(spec, data, groups, config, aux_weight, None)
}

/// [`train_with_auxiliary`] with a per-epoch parameter observer.
///
/// The observer receives `(epoch, params)` exactly once per epoch, after the
/// epoch's last optimizer step, in epoch order. It does not consume the
/// criterion RNG stream, so runs with and without an observer produce
/// bit-identical parameters.
pub fn train_with_auxiliary_observed(
    spec: &NetworkSpec,
    data: &Dataset,
    groups: &[SimilarityGroup],
    config: &TrainConfig,
    aux_weight: f64,
    mut observer: Option<&mut dyn FnMut(usize, &ParamVector)>,
) -> Result<AuxRun> {
    if !(aux_weight >= 0.0) || !aux_weight.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "auxiliary weight must be finite and non-negative, got {aux_weight}"
        )));
    }
    if aux_weight > 0.0 && groups.is_empty() {
        return Err(Error::InvalidArgument(
            "auxiliary weight is positive but no similarity groups were given".into(),
        ));
    }
    let mut coords = Vec::with_capacity(groups.len());
    for group in groups {
        group.validate(data.len())?;
        coords.push(resolved_coord(group, spec)?);
    }

    let mut trace: Vec<StepTrace> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut rng = stream(config.seed, &[STREAM_AUX]);
    let mut seen_epoch = 0usize;

    let run = {
        let observer = &mut observer;
        let mut callback = |ctx: &AuxContext<'_>| -> Result<Option<AuxTerm>> {
            if ctx.epoch > seen_epoch {
                // First step of a new epoch: the parameters are exactly the
                // end-of-previous-epoch state.
                if let Some(obs) = observer.as_deref_mut() {
                    for epoch in seen_epoch..ctx.epoch {
                        obs(epoch, ctx.params);
                    }
                }
                seen_epoch = ctx.epoch;
            }
            let mut row = StepTrace {
                step: ctx.step,
                epoch: ctx.epoch,
                main_loss: ctx.main_loss,
                criterion: None,
            };
            if aux_weight == 0.0 {
                trace.push(row);
                return Ok(None);
            }
            let pick = rng.gen_range(0..groups.len());
            let group = &groups[pick];
            let coord = coords[pick];
            match group_term(spec, ctx.params, data, group, coord, &mut rng) {
                Ok(Some((value, gradient))) => {
                    row.criterion = Some(value);
                    trace.push(row);
                    Ok(Some(AuxTerm {
                        value: aux_weight * value,
                        gradient: gradient.iter().map(|g| aux_weight * g).collect(),
                    }))
                }
                Ok(None) => {
                    warnings.push(format!(
                        "step {}: every pair in group {pick} was degenerate, criterion skipped",
                        ctx.step
                    ));
                    trace.push(row);
                    Ok(None)
                }
                Err(e @ (Error::DegeneratePair { .. } | Error::DegenerateBatch { .. })) => {
                    warnings.push(format!("step {}: {e}, criterion skipped", ctx.step));
                    trace.push(row);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        train_with_callback(spec, data, config, Some(&mut callback))?
    };
    if let Some(obs) = observer.as_deref_mut() {
        for epoch in seen_epoch..config.epochs {
            obs(epoch, &run.params);
        }
    }

    Ok(AuxRun {
        params: run.params,
        epoch_losses: run.epoch_losses,
        trace,
        warnings,
    })
}

/// Raw criterion value and gradient for one group draw, or `None` when
/// all-pairs mode found only degenerate pairs.
fn group_term(
    spec: &NetworkSpec,
    params: &ParamVector,
    data: &Dataset,
    group: &SimilarityGroup,
    coord: usize,
    rng: &mut impl Rng,
) -> Result<Option<(f64, Vec<f64>)>> {
    match group.mode {
        PairingMode::TwoBatch => {
            let n_b = group.batch_size.expect("validated two-batch group");
            let picked = index::sample(rng, group.indices.len(), 2 * n_b);
            let chosen: Vec<usize> = picked.iter().map(|i| group.indices[i]).collect();
            let batch1: Vec<&[f64]> = chosen[..n_b]
                .iter()
                .map(|&i| data.inputs[i].as_slice())
                .collect();
            let batch2: Vec<&[f64]> = chosen[n_b..]
                .iter()
                .map(|&i| data.inputs[i].as_slice())
                .collect();
            let c = batch_criterion_for_coord(spec, params, &batch1, &batch2, coord)?;
            Ok(Some((c.value, c.gradient)))
        }
        PairingMode::AllPairs => {
            let mut value = 0.0;
            let mut gradient = vec![0.0; params.len()];
            let mut used = 0usize;
            for (a, &i) in group.indices.iter().enumerate() {
                for &j in &group.indices[a + 1..] {
                    match pair_loss_for_coord(spec, params, &data.inputs[i], &data.inputs[j], coord)
                    {
                        Ok(pl) => {
                            value += pl.value;
                            for (g, &v) in gradient.iter_mut().zip(&pl.gradient) {
                                *g += v;
                            }
                            used += 1;
                        }
                        Err(Error::DegeneratePair { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            if used == 0 {
                return Ok(None);
            }
            let inv = 1.0 / used as f64;
            value *= inv;
            for g in &mut gradient {
                *g *= inv;
            }
            Ok(Some((value, gradient)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobSpec};
    use crate::kernels::k_corr;
    use crate::nn::{stream_for_tests, train, Activation, AdamConfig, Loss};
    use crate::testkit::{assert_close, draw_input, max_rel_err, random_instance};

    fn scalar_value_at(spec: &NetworkSpec, params: &ParamVector, x: &[f64], x2: &[f64]) -> f64 {
        let g = per_sample_gradient(spec, params, x).unwrap();
        let h = per_sample_gradient(spec, params, x2).unwrap();
        let (g, h) = (g.row(0), h.row(0));
        -(dot(g, h) / (dot(g, g) * dot(h, h)).sqrt())
    }

    fn fd_gradient(f: &dyn Fn(&ParamVector) -> f64, params: &ParamVector, h: f64) -> Vec<f64> {
        let mut fd = vec![0.0; params.len()];
        let mut shifted = params.clone();
        for k in 0..params.len() {
            let orig = shifted.values()[k];
            shifted.values_mut()[k] = orig + h;
            let up = f(&shifted);
            shifted.values_mut()[k] = orig - h;
            let down = f(&shifted);
            shifted.values_mut()[k] = orig;
            fd[k] = (up - down) / (2.0 * h);
        }
        fd
    }

    #[test]
    fn pair_loss_matches_negated_correlation() {
        let mut rng = stream_for_tests(401);
        for seed in 0..10 {
            let (spec, params, x) = random_instance(seed);
            let x2 = draw_input(&spec, &params, &mut rng);
            let pl = pair_loss_for_coord(&spec, &params, &x, &x2, 0).unwrap();
            let ga = per_sample_gradient(&spec, &params, &x).unwrap();
            let gb = per_sample_gradient(&spec, &params, &x2).unwrap();
            let k = k_corr(ga.row(0), gb.row(0)).unwrap();
            assert_close(pl.value, -k.value, 1e-12, 1e-12);
        }
    }

    #[test]
    fn identical_inputs_attain_the_maximum() {
        let (spec, params, x) = random_instance(7);
        let pl = pair_loss_for_coord(&spec, &params, &x, &x, 0).unwrap();
        assert!(
            (pl.value + 1.0).abs() <= 1e-15,
            "self pair loss {} should be -1",
            pl.value
        );
        assert!(
            pl.gradient.iter().all(|&g| g == 0.0),
            "self pair gradient should vanish exactly"
        );
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let mut rng = stream_for_tests(402);
        for seed in 100..120 {
            let (spec, params, x) = random_instance(seed);
            let x2 = draw_input(&spec, &params, &mut rng);
            let pl = pair_loss_for_coord(&spec, &params, &x, &x2, 0).unwrap();
            let f = |pv: &ParamVector| scalar_value_at(&spec, pv, &x, &x2);
            let fd = fd_gradient(&f, &params, 1e-5);
            let err = max_rel_err(&pl.gradient, &fd);
            assert!(err <= 1e-4, "seed {seed}: pair gradient vs FD err {err}");
        }
    }

    #[test]
    fn scalar_wrappers_demand_single_output() {
        let spec = NetworkSpec::mlp(vec![2, 5, 1], Activation::Tanh).unwrap();
        let params = ParamVector::init(&spec, 3);
        let mut rng = stream_for_tests(405);
        let x = draw_input(&spec, &params, &mut rng);
        let x2 = draw_input(&spec, &params, &mut rng);
        let a = pair_loss(&spec, &params, &x, &x2).unwrap();
        let b = pair_loss_for_coord(&spec, &params, &x, &x2, 0).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.gradient, b.gradient);

        let wide = NetworkSpec::mlp(vec![2, 4, 2], Activation::Tanh).unwrap();
        let wparams = ParamVector::init(&wide, 4);
        assert!(matches!(
            pair_loss(&wide, &wparams, &x, &x2),
            Err(Error::InvalidArgument(_))
        ));
        let refs: Vec<&[f64]> = [&x, &x2].iter().map(|v| v.as_slice()).collect();
        assert!(matches!(
            batch_criterion(&wide, &wparams, &refs, &refs),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn group_stat_identities_hold_for_random_groups() {
        let (spec, params, _) = random_instance(55);
        let mut rng = stream_for_tests(403);
        let inputs: Vec<Vec<f64>> = (0..40).map(|_| draw_input(&spec, &params, &mut rng)).collect();
        let bank = GradientBank::from_network_reduced(
            &spec,
            &params,
            &inputs,
            crate::density::Reduction::Coord(0),
        )
        .unwrap();
        for n in 2..=32 {
            let picked = index::sample(&mut rng, bank.len(), n);
            let indices: Vec<usize> = picked.iter().collect();
            let stats = group_stats(&bank, &indices).unwrap();
            let nf = n as f64;
            let from_mu = (nf * stats.mean_norm_sq - 1.0) / (nf - 1.0);
            assert!(
                (stats.mean_pairwise - from_mu).abs() <= 1e-10,
                "n={n}: mean pairwise {} vs identity {}",
                stats.mean_pairwise,
                from_mu
            );
            assert!(
                (stats.variance - (1.0 - stats.mean_norm_sq)).abs() <= 1e-10,
                "n={n}: variance {} vs identity {}",
                stats.variance,
                1.0 - stats.mean_norm_sq
            );
        }
    }

    #[test]
    fn extreme_groups_have_closed_form_stats() {
        let bank =
            GradientBank::from_gradients(vec![vec![3.0, 4.0]; 5]).unwrap();
        let stats = group_stats(&bank, &[0, 1, 2, 3, 4]).unwrap();
        assert_close(stats.mean_pairwise, 1.0, 1e-15, 0.0);
        assert_close(stats.mean_norm_sq, 1.0, 1e-15, 0.0);
        assert!(stats.variance.abs() <= 1e-15);

        let bank = GradientBank::from_gradients(vec![vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let stats = group_stats(&bank, &[0, 1]).unwrap();
        assert_eq!(stats.mean_pairwise, 0.0);
        assert_close(stats.mean_norm_sq, 0.5, 1e-15, 0.0);
        assert_close(stats.variance, 0.5, 1e-15, 0.0);
    }

    #[test]
    fn copied_batch_sits_at_the_exact_minimum() {
        let (spec, params, _) = random_instance(9);
        let mut rng = stream_for_tests(404);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| draw_input(&spec, &params, &mut rng)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let c = batch_criterion_for_coord(&spec, &params, &refs, &refs, 0).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let mut rng = stream_for_tests(406);
        for seed in 200..220 {
            let (spec, params, _) = random_instance(seed);
            let xs: Vec<Vec<f64>> = (0..4).map(|_| draw_input(&spec, &params, &mut rng)).collect();
            let (left, right) = xs.split_at(2);
            let b1: Vec<&[f64]> = left.iter().map(|v| v.as_slice()).collect();
            let b2: Vec<&[f64]> = right.iter().map(|v| v.as_slice()).collect();
            let c = batch_criterion_for_coord(&spec, &params, &b1, &b2, 0).unwrap();
            let f = |pv: &ParamVector| {
                let rows = |batch: &[Vec<f64>]| -> Vec<Vec<f64>> {
                    batch
                        .iter()
                        .map(|x| per_sample_gradient(&spec, pv, x).unwrap().row(0).to_vec())
                        .collect()
                };
                batch_criterion_from_gradients(&rows(left), &rows(right)).unwrap()
            };
            let fd = fd_gradient(&f, &params, 1e-5);
            let err = max_rel_err(&c.gradient, &fd);
            assert!(err <= 1e-4, "seed {seed}: batch gradient vs FD err {err}");
        }
    }

    #[test]
    fn rescaled_gradients_leave_criterion_unchanged() {
        let mut rng = stream_for_tests(407);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (r1, r2) = rows.split_at(3);
        let base = batch_criterion_from_gradients(r1, r2).unwrap();
        for c in [3.7, 0.004] {
            let scale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
                rows.iter()
                    .map(|r| r.iter().map(|v| v * c).collect())
                    .collect()
            };
            let scaled = batch_criterion_from_gradients(&scale(r1), &scale(r2)).unwrap();
            assert_close(scaled, base, 1e-14, 1e-12);
        }
    }

    #[test]
    fn degenerate_and_mismatched_batches_are_rejected() {
        let zero = vec![vec![0.0, 0.0]; 2];
        let live = vec![vec![1.0, 0.5], vec![0.3, 2.0]];
        assert!(matches!(
            batch_criterion_from_gradients(&zero, &live),
            Err(Error::DegenerateBatch { batch: 1 })
        ));
        assert!(matches!(
            batch_criterion_from_gradients(&live, &zero),
            Err(Error::DegenerateBatch { batch: 2 })
        ));
        assert!(matches!(
            batch_criterion_from_gradients(&live, &live[..1].to_vec()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            batch_criterion_from_gradients(&[], &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn homogeneity_loss_is_zero_at_its_target() {
        let bank = GradientBank::from_gradients(vec![vec![3.0, 4.0]; 6]).unwrap();
        let loss = density_homogeneity_loss(&bank, 1.0).unwrap();
        assert!(loss <= 1e-20, "identical gradients at q=1 gave {loss}");

        let rows = vec![
            vec![2.0, 0.0, 0.0, 0.0],
            vec![0.0, 5.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 3.0],
        ];
        let bank = GradientBank::from_gradients(rows).unwrap();
        assert_eq!(density_homogeneity_loss(&bank, 0.25).unwrap(), 0.0);

        for bad in [0.0, 1.2, -0.5, f64::NAN] {
            assert!(matches!(
                density_homogeneity_loss(&bank, bad),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn homogeneity_loss_matches_the_direct_formula() {
        let mut rng = stream_for_tests(408);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let bank = GradientBank::from_gradients(rows).unwrap();
        let q = 0.3;
        let n = bank.len() as f64;
        let direct: f64 = (0..bank.len())
            .map(|i| {
                let dev = crate::density::count_soft(&bank, i).unwrap() / n - q;
                dev * dev
            })
            .sum();
        let loss = density_homogeneity_loss(&bank, q).unwrap();
        assert_close(loss, direct, 1e-9, 1e-9);
    }

    #[test]
    fn group_validation_catches_bad_shapes() {
        assert!(matches!(
            SimilarityGroup::all_pairs(vec![3]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            SimilarityGroup::all_pairs(vec![1, 1, 2]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            SimilarityGroup::two_batch(vec![1, 2, 3], 2),
            Err(Error::InvalidArgument(_))
        ));
        let group = SimilarityGroup::two_batch(vec![0, 4, 9, 2], 2).unwrap();
        assert!(group.validate(10).is_ok());
        assert!(matches!(
            group.validate(9),
            Err(Error::InvalidArgument(_))
        ));

        let json = serde_json::to_string(&group).unwrap();
        assert!(json.contains("\"two_batch\""));
        assert!(!json.contains("output_coord"));
        let parsed: SimilarityGroup = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, group);
    }

    fn blob_data_and_groups(
        n_per_class: usize,
        batch: usize,
    ) -> (Dataset, Vec<SimilarityGroup>) {
        let data = gen_blobs(&BlobSpec {
            n_per_class,
            sigma: 0.4,
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        let groups = vec![
            SimilarityGroup::two_batch((0..n_per_class).collect(), batch).unwrap(),
            SimilarityGroup::two_batch((n_per_class..2 * n_per_class).collect(), batch).unwrap(),
        ];
        (data, groups)
    }

    #[test]
    fn zero_aux_weight_reproduces_plain_training() {
        let (data, groups) = blob_data_and_groups(12, 3);
        let spec = NetworkSpec::mlp(vec![2, 8, 1], Activation::Tanh).unwrap();
        let config = TrainConfig {
            epochs: 4,
            batch_size: 8,
            seed: 11,
            ..Default::default()
        };
        let plain = train(&spec, &data, &config).unwrap();
        let aux = train_with_auxiliary(&spec, &data, &groups, &config, 0.0).unwrap();
        assert_eq!(plain.params.values(), aux.params.values());
        assert_eq!(plain.epoch_losses, aux.epoch_losses);
        assert_eq!(aux.trace.len(), 4 * 3);
        assert!(aux.trace.iter().all(|t| t.criterion.is_none()));
        assert!(aux.warnings.is_empty());
    }

    #[test]
    fn observer_sees_every_epoch_without_disturbing_the_run() {
        let (data, groups) = blob_data_and_groups(12, 3);
        let spec = NetworkSpec::mlp(vec![2, 8, 1], Activation::Tanh).unwrap();
        let config = TrainConfig {
            epochs: 4,
            batch_size: 8,
            seed: 11,
            ..Default::default()
        };
        let silent = train_with_auxiliary(&spec, &data, &groups, &config, 0.5).unwrap();
        let mut snapshots: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut observer = |epoch: usize, params: &ParamVector| {
            snapshots.push((epoch, params.values().to_vec()));
        };
        let observed = train_with_auxiliary_observed(
            &spec,
            &data,
            &groups,
            &config,
            0.5,
            Some(&mut observer),
        )
        .unwrap();
        assert_eq!(observed.params.values(), silent.params.values());
        let epochs: Vec<usize> = snapshots.iter().map(|(e, _)| *e).collect();
        assert_eq!(epochs, vec![0, 1, 2, 3]);
        assert_eq!(snapshots.last().unwrap().1, observed.params.values());
        // Consecutive epoch snapshots differ: training actually moved.
        assert_ne!(snapshots[0].1, snapshots[1].1);
    }

    #[test]
    fn auxiliary_training_stays_finite_across_weights() {
        let (data, groups) = blob_data_and_groups(8, 2);
        let spec = NetworkSpec::mlp(vec![2, 6, 1], Activation::Tanh).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        for aux_weight in [0.01, 0.1, 1.0] {
            let run = train_with_auxiliary(&spec, &data, &groups, &config, aux_weight).unwrap();
            assert!(run.epoch_losses.iter().all(|l| l.is_finite()));
            assert!(run
                .trace
                .iter()
                .all(|t| matches!(t.criterion, Some(c) if c.is_finite())));
            assert!(run.warnings.is_empty());
        }
    }

    #[test]
    fn all_pairs_groups_drive_training_too() {
        let (data, _) = blob_data_and_groups(6, 2);
        let groups = vec![
            SimilarityGroup::all_pairs((0..6).collect()).unwrap(),
            SimilarityGroup::all_pairs((6..12).collect()).unwrap(),
        ];
        let spec = NetworkSpec::mlp(vec![2, 6, 1], Activation::Tanh).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 6,
            seed: 3,
            ..Default::default()
        };
        let run = train_with_auxiliary(&spec, &data, &groups, &config, 0.1).unwrap();
        // Pair losses live in [-1, 1]; every step must have recorded one.
        assert!(run
            .trace
            .iter()
            .all(|t| matches!(t.criterion, Some(c) if (-1.0..=1.0).contains(&c))));
    }

    #[test]
    fn multi_output_groups_need_a_coordinate() {
        let (blobs, groups) = blob_data_and_groups(6, 2);
        // Re-label with one-hot targets so a two-output net can train on it.
        let labels: Vec<Vec<f64>> = blobs
            .labels
            .iter()
            .map(|l| if l[0] < 0.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let data = Dataset::new(blobs.inputs.clone(), labels, blobs.meta.clone()).unwrap();
        let spec = NetworkSpec::mlp(vec![2, 5, 2], Activation::Tanh).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 6,
            seed: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_with_auxiliary(&spec, &data, &groups, &config, 0.5),
            Err(Error::InvalidArgument(_))
        ));
        let with_coord: Vec<SimilarityGroup> = groups
            .iter()
            .map(|g| g.clone().with_output_coord(1))
            .collect();
        let run = train_with_auxiliary(&spec, &data, &with_coord, &config, 0.5).unwrap();
        assert!(run.epoch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn criterion_decreases_on_the_two_blob_toy() {
        let (data, groups) = blob_data_and_groups(16, 4);
        let spec = NetworkSpec::mlp(vec![2, 8, 1], Activation::Tanh).unwrap();
        let config = TrainConfig {
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            epochs: 40,
            batch_size: 8,
            seed: 13,
            loss: Loss::SquaredError,
        };
        let run = train_with_auxiliary(&spec, &data, &groups, &config, 1.0).unwrap();
        let values: Vec<f64> = run.trace.iter().filter_map(|t| t.criterion).collect();
        assert!(values.len() >= 120, "expected a dense criterion trace");
        let early: f64 = values[10..30].iter().sum::<f64>() / 20.0;
        let late: f64 = values[values.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(
            late <= 0.5 * early,
            "criterion should at least halve: early {early}, late {late}"
        );
    }
}
