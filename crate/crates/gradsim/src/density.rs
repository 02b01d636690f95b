//! Neighborhood density of dataset points under the correlation kernel.
//!
//! A sample sits in a dense region when many other samples have gradients
//! pointing the same way. Density is measured by counting neighbors, either
//! with a hard threshold (`count_hard`) or softly by summing kernel values
//! (`count_soft`, `count_positive_alpha`).
//!
//! The soft count over a whole dataset naively costs `O(n²p)`. Because
//! `Σ_j k^C(i, j) = (g_i/‖g_i‖)·Σ_j (g_j/‖g_j‖)`, the sum over unit gradients
//! can be formed once and reused for every `i`, giving the same numbers in
//! `O(np)` ([`count_soft_all_fast`]). The multi-output analogue whitens each
//! gradient matrix by its self-kernel and sums Frobenius inner products
//! ([`MatrixBank`], [`count_soft_all_multi`]).
//!
//! Samples with an exactly zero gradient have no direction and therefore no
//! defined correlation to anything; they are excluded from sums and reported
//! separately rather than silently mapped to zero.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::kernels::whiten_gradient;
use crate::nn::{per_sample_gradient, GradientMatrix, NetworkSpec, ParamVector};
use crate::{Error, Result};

/// Per-sample scalar parameter gradients for a dataset, with cached norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBank {
    n: usize,
    p: usize,
    /// Row-major `n×p` gradient rows.
    values: Vec<f64>,
    norms: Vec<f64>,
}

/// How to reduce a multi-output gradient matrix to one row per sample.
#[derive(Debug, Clone, Copy)]
pub enum Reduction<'a> {
    /// Gradient of one fixed output coordinate.
    Coord(usize),
    /// Gradient of each sample's labeled class output.
    RightClass(&'a [usize]),
    /// Gradient of the labeled class minus the runner-up logit's class.
    Margin(&'a [usize]),
}

impl GradientBank {
    /// Build the bank from a single-output network. Multi-output networks
    /// must pick a reduction via [`GradientBank::from_network_reduced`].
    pub fn from_network(
        spec: &NetworkSpec,
        params: &ParamVector,
        inputs: &[Vec<f64>],
    ) -> Result<GradientBank> {
        if spec.output_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "network has {} outputs; pick a reduction with from_network_reduced",
                spec.output_dim()
            )));
        }
        GradientBank::from_network_reduced(spec, params, inputs, Reduction::Coord(0))
    }

    pub fn from_network_reduced(
        spec: &NetworkSpec,
        params: &ParamVector,
        inputs: &[Vec<f64>],
        reduction: Reduction,
    ) -> Result<GradientBank> {
        let d = spec.output_dim();
        match reduction {
            Reduction::Coord(c) if c >= d => {
                return Err(Error::BadCoordinate { coord: c, d });
            }
            Reduction::RightClass(labels) | Reduction::Margin(labels)
                if labels.len() != inputs.len() =>
            {
                return Err(Error::ShapeMismatch {
                    context: "class labels for gradient bank",
                    expected: inputs.len(),
                    got: labels.len(),
                });
            }
            _ => {}
        }

        let p = spec.param_count();
        let mut values = Vec::with_capacity(inputs.len() * p);
        for (i, x) in inputs.iter().enumerate() {
            let g = per_sample_gradient(spec, params, x)?;
            match reduction {
                Reduction::Coord(c) => values.extend_from_slice(g.row(c)),
                Reduction::RightClass(labels) => {
                    let right = labels[i];
                    if right >= d {
                        return Err(Error::BadCoordinate { coord: right, d });
                    }
                    values.extend_from_slice(g.row(right));
                }
                Reduction::Margin(labels) => {
                    let right = labels[i];
                    if right >= d {
                        return Err(Error::BadCoordinate { coord: right, d });
                    }
                    let outputs = crate::nn::forward(spec, params, x)?;
                    let adversary = (0..d)
                        .filter(|&c| c != right)
                        .max_by(|&a, &b| outputs[a].total_cmp(&outputs[b]))
                        .ok_or_else(|| {
                            Error::InvalidArgument(
                                "margin reduction needs at least two outputs".into(),
                            )
                        })?;
                    values.extend(g.row(right).iter().zip(g.row(adversary)).map(|(r, a)| r - a));
                }
            }
        }
        GradientBank::from_flat(inputs.len(), p, values)
    }

    pub fn from_gradients(rows: Vec<Vec<f64>>) -> Result<GradientBank> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("gradient bank needs at least one row".into()));
        }
        let p = rows[0].len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for row in &rows {
            if row.len() != p {
                return Err(Error::ShapeMismatch {
                    context: "gradient bank rows",
                    expected: p,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        GradientBank::from_flat(rows.len(), p, values)
    }

    fn from_flat(n: usize, p: usize, values: Vec<f64>) -> Result<GradientBank> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument("gradient bank must be non-empty".into()));
        }
        debug_assert_eq!(values.len(), n * p);
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gradient bank entry {bad} is not finite"
            )));
        }
        let norms = (0..n)
            .map(|i| values[i * p..(i + 1) * p].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(GradientBank { n, p, values, norms })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Parameter count per gradient row.
    #[inline]
    pub fn dim(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn gradient(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// A sample is defined when its gradient has nonzero norm; only defined
    /// samples have a direction and hence a correlation to others.
    #[inline]
    pub fn is_defined(&self, i: usize) -> bool {
        self.norms[i] > 0.0
    }

    pub fn undefined(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.is_defined(i)).collect()
    }

    /// Correlation `k^C` between two bank rows; exactly 1 on the diagonal.
    pub fn correlation(&self, i: usize, j: usize) -> Result<f64> {
        for (idx, which) in [(i, i), (j, j)] {
            let _ = which;
            if !self.is_defined(idx) {
                return Err(Error::UndefinedSample { index: idx });
            }
        }
        if i == j {
            return Ok(1.0);
        }
        let dot: f64 = self
            .gradient(i)
            .iter()
            .zip(self.gradient(j))
            .map(|(a, b)| a * b)
            .sum();
        Ok(dot / (self.norms[i] * self.norms[j]))
    }

    /// Write the bank as a little-endian binary file:
    /// 8-byte magic, `n` and `p` as u64, then `n·p` f64 gradient entries.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(BANK_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.p as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GradientBank> {
        let fail = |message: String| Error::BankFile {
            path: path.to_path_buf(),
            message,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 24 {
            return Err(fail(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != BANK_MAGIC {
            return Err(fail("bad magic; not a gradient bank".into()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let p = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let expected = 24 + n.checked_mul(p).and_then(|np| np.checked_mul(8)).ok_or_else(
            || fail(format!("header claims impossible size {n}×{p}")),
        )?;
        if bytes.len() != expected {
            return Err(fail(format!(
                "expected {expected} bytes for {n}×{p} entries, found {}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GradientBank::from_flat(n, p, values)
            .map_err(|e| fail(format!("invalid contents: {e}")))
    }
}

const BANK_MAGIC: &[u8; 8] = b"GSBANK\x00\x01";

fn require_defined(bank: &GradientBank, i: usize) -> Result<()> {
    if i >= bank.len() {
        return Err(Error::InvalidArgument(format!(
            "sample index {i} out of range for bank of {}",
            bank.len()
        )));
    }
    if !bank.is_defined(i) {
        return Err(Error::UndefinedSample { index: i });
    }
    Ok(())
}

/// Number of samples with correlation at least `tau` to sample `i`,
/// the sample itself included (its self-correlation is exactly 1).
pub fn count_hard(bank: &GradientBank, i: usize, tau: f64) -> Result<usize> {
    require_defined(bank, i)?;
    let mut count = 0;
    for j in 0..bank.len() {
        if !bank.is_defined(j) {
            continue;
        }
        if bank.correlation(i, j)? >= tau {
            count += 1;
        }
    }
    Ok(count)
}

/// Soft neighbor count `Σ_j k^C(i, j)`, self included as exactly 1.
pub fn count_soft(bank: &GradientBank, i: usize) -> Result<f64> {
    require_defined(bank, i)?;
    let mut total = 1.0;
    for j in 0..bank.len() {
        if j != i && bank.is_defined(j) {
            total += bank.correlation(i, j)?;
        }
    }
    Ok(total)
}

/// Positive-part soft count `Σ_{j: k>0} k^C(i, j)^α` for `α > 0`. Larger `α`
/// sharpens the count toward strict neighbors; `α = 1` equals the integral of
/// the hard count over all thresholds in `[0, 1]`.
pub fn count_positive_alpha(bank: &GradientBank, i: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    require_defined(bank, i)?;
    let mut total = 1.0;
    for j in 0..bank.len() {
        if j == i || !bank.is_defined(j) {
            continue;
        }
        let k = bank.correlation(i, j)?;
        if k > 0.0 {
            total += k.powf(alpha);
        }
    }
    Ok(total)
}

/// Soft counts for every defined sample by the direct `O(n²p)` double loop.
/// Undefined samples get `None`.
pub fn count_soft_all_naive(bank: &GradientBank) -> Vec<Option<f64>> {
    (0..bank.len())
        .map(|i| bank.is_defined(i).then(|| count_soft(bank, i).unwrap()))
        .collect()
}

/// Soft counts for every defined sample in `O(np)`: form the sum of unit
/// gradients once, then take one dot product per sample. The self term is
/// replaced by an exact 1 so the numbers match [`count_soft_all_naive`] up to
/// summation order.
pub fn count_soft_all_fast(bank: &GradientBank) -> Vec<Option<f64>> {
    let p = bank.dim();
    let mut unit_sum = vec![0.0; p];
    for j in 0..bank.len() {
        if !bank.is_defined(j) {
            continue;
        }
        let inv = 1.0 / bank.norm(j);
        for (slot, v) in unit_sum.iter_mut().zip(bank.gradient(j)) {
            *slot += inv * v;
        }
    }
    (0..bank.len())
        .map(|i| {
            if !bank.is_defined(i) {
                return None;
            }
            let g = bank.gradient(i);
            let mut with_self = 0.0;
            let mut self_term = 0.0;
            for (idx, v) in g.iter().enumerate() {
                with_self += v * unit_sum[idx];
                self_term += v * v;
            }
            let inv = 1.0 / bank.norm(i);
            Some(with_self * inv - self_term * inv * inv + 1.0)
        })
        .collect()
}

/// Inverse total influence `‖g_i‖² / (g_i · Σ_j g_j)`: how much sample `i`'s
/// own output moves per unit of accumulated push from the whole dataset.
/// Isolated samples (small denominator relative to their own norm) have a
/// large factor; an exactly vanishing or negative total push is an error.
pub fn uncertainty_factor(bank: &GradientBank, i: usize) -> Result<f64> {
    require_defined(bank, i)?;
    let p = bank.dim();
    let mut total = vec![0.0; p];
    for j in 0..bank.len() {
        if !bank.is_defined(j) {
            continue;
        }
        for (slot, v) in total.iter_mut().zip(bank.gradient(j)) {
            *slot += v;
        }
    }
    let denom: f64 = bank.gradient(i).iter().zip(&total).map(|(a, b)| a * b).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator { index: i, denom });
    }
    Ok(bank.norm(i) * bank.norm(i) / denom)
}

/// One neighbor of a query sample, by correlation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

/// Nearest neighbors of one query under `k^C`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NeighborReport {
    pub query: usize,
    pub neighbors: Vec<Neighbor>,
    /// Samples skipped because their gradient was exactly zero.
    pub undefined_skipped: usize,
}

/// The `k` most similar samples to `i`, descending by correlation, ties
/// broken by ascending index. The query itself is excluded.
pub fn k_nearest(bank: &GradientBank, i: usize, k: usize) -> Result<NeighborReport> {
    require_defined(bank, i)?;
    let mut neighbors = Vec::with_capacity(bank.len().saturating_sub(1));
    let mut undefined_skipped = 0;
    for j in 0..bank.len() {
        if j == i {
            continue;
        }
        if !bank.is_defined(j) {
            undefined_skipped += 1;
            continue;
        }
        neighbors.push(Neighbor {
            index: j,
            similarity: bank.correlation(i, j)?,
        });
    }
    neighbors.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.index.cmp(&b.index))
    });
    neighbors.truncate(k);
    Ok(NeighborReport {
        query: i,
        neighbors,
        undefined_skipped,
    })
}

/// Histogram of pairwise correlations over all `i < j` pairs of defined
/// samples, binned uniformly over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimilarityHistogram {
    pub counts: Vec<u64>,
    pub lo: f64,
    pub hi: f64,
    /// Pairs skipped because at least one side had a zero gradient.
    pub undefined_pairs: u64,
    pub total_pairs: u64,
}

pub fn similarity_histogram(bank: &GradientBank, bins: usize) -> Result<SimilarityHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    let mut undefined_pairs = 0;
    let mut total_pairs = 0;
    for i in 0..bank.len() {
        for j in (i + 1)..bank.len() {
            total_pairs += 1;
            if !bank.is_defined(i) || !bank.is_defined(j) {
                undefined_pairs += 1;
                continue;
            }
            let k = bank.correlation(i, j)?.clamp(-1.0, 1.0);
            let bin = (((k + 1.0) / 2.0) * bins as f64) as usize;
            counts[bin.min(bins - 1)] += 1;
        }
    }
    Ok(SimilarityHistogram {
        counts,
        lo: -1.0,
        hi: 1.0,
        undefined_pairs,
        total_pairs,
    })
}

/// Thresholds and exponents used by the stock density report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DensityConfig {
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for DensityConfig {
    fn default() -> DensityConfig {
        DensityConfig {
            taus: vec![0.5, 0.8, 0.9, 0.95],
            alphas: vec![1.0, 2.0, 8.0],
        }
    }
}

/// Per-sample density summary: hard counts at each `τ`, the soft count, and
/// positive-part counts at each `α`. Undefined samples carry no estimates.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DensityRow {
    pub index: usize,
    pub defined: bool,
    pub hard: Vec<usize>,
    pub soft: f64,
    pub positive: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DensityReport {
    pub config: DensityConfig,
    pub rows: Vec<DensityRow>,
    pub undefined: Vec<usize>,
}

pub fn density_report(bank: &GradientBank, config: &DensityConfig) -> Result<DensityReport> {
    let soft = count_soft_all_fast(bank);
    let mut rows = Vec::with_capacity(bank.len());
    for i in 0..bank.len() {
        if !bank.is_defined(i) {
            rows.push(DensityRow {
                index: i,
                defined: false,
                hard: vec![0; config.taus.len()],
                soft: 0.0,
                positive: vec![0.0; config.alphas.len()],
            });
            continue;
        }
        let hard = config
            .taus
            .iter()
            .map(|&tau| count_hard(bank, i, tau))
            .collect::<Result<Vec<_>>>()?;
        let positive = config
            .alphas
            .iter()
            .map(|&alpha| count_positive_alpha(bank, i, alpha))
            .collect::<Result<Vec<_>>>()?;
        rows.push(DensityRow {
            index: i,
            defined: true,
            hard,
            soft: soft[i].unwrap(),
            positive,
        });
    }
    Ok(DensityReport {
        config: config.clone(),
        rows,
        undefined: bank.undefined(),
    })
}

/// Whitened gradient matrices for a multi-output network: row block `i` holds
/// `W_i = K(x_i,x_i)^{-1/2}·∇f(x_i)`, so `(1/d)·⟨W_i, W_j⟩_F` is the mean
/// diagonal of the normalized kernel between samples `i` and `j`.
#[derive(Debug, Clone)]
pub struct MatrixBank {
    n: usize,
    d: usize,
    p: usize,
    /// `n` consecutive `d×p` whitened blocks; singular samples hold zeros.
    whitened: Vec<f64>,
    /// Samples whose self-kernel had no positive eigenvalue.
    singular: Vec<usize>,
    /// Total eigenvalues lifted to the floor across all samples.
    pub floored_eigenvalues: usize,
}

impl MatrixBank {
    pub fn from_network(
        spec: &NetworkSpec,
        params: &ParamVector,
        inputs: &[Vec<f64>],
    ) -> Result<MatrixBank> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("matrix bank needs at least one sample".into()));
        }
        let d = spec.output_dim();
        let p = spec.param_count();
        let mut whitened = vec![0.0; inputs.len() * d * p];
        let mut singular = Vec::new();
        let mut floored_eigenvalues = 0;
        for (i, x) in inputs.iter().enumerate() {
            let g = per_sample_gradient(spec, params, x)?;
            match whiten_gradient(&g) {
                Ok((w, info)) => {
                    floored_eigenvalues += info.floored;
                    let block = &mut whitened[i * d * p..(i + 1) * d * p];
                    for r in 0..d {
                        block[r * p..(r + 1) * p].copy_from_slice(w.row(r));
                    }
                }
                Err(Error::SingularSelfKernel { .. }) => singular.push(i),
                Err(e) => return Err(e),
            }
        }
        Ok(MatrixBank {
            n: inputs.len(),
            d,
            p,
            whitened,
            singular,
            floored_eigenvalues,
        })
    }

    pub fn from_matrices(matrices: Vec<GradientMatrix>) -> Result<MatrixBank> {
        if matrices.is_empty() {
            return Err(Error::InvalidArgument("matrix bank needs at least one sample".into()));
        }
        let d = matrices[0].d();
        let p = matrices[0].p();
        let mut whitened = vec![0.0; matrices.len() * d * p];
        let mut singular = Vec::new();
        let mut floored_eigenvalues = 0;
        for (i, g) in matrices.iter().enumerate() {
            if g.d() != d || g.p() != p {
                return Err(Error::ShapeMismatch {
                    context: "matrix bank blocks",
                    expected: d * p,
                    got: g.d() * g.p(),
                });
            }
            match whiten_gradient(g) {
                Ok((w, info)) => {
                    floored_eigenvalues += info.floored;
                    let block = &mut whitened[i * d * p..(i + 1) * d * p];
                    for r in 0..d {
                        block[r * p..(r + 1) * p].copy_from_slice(w.row(r));
                    }
                }
                Err(Error::SingularSelfKernel { .. }) => singular.push(i),
                Err(e) => return Err(e),
            }
        }
        Ok(MatrixBank {
            n: matrices.len(),
            d,
            p,
            whitened,
            singular,
            floored_eigenvalues,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.d
    }

    pub fn is_defined(&self, i: usize) -> bool {
        !self.singular.contains(&i)
    }

    pub fn singular(&self) -> &[usize] {
        &self.singular
    }

    #[inline]
    fn block(&self, i: usize) -> &[f64] {
        &self.whitened[i * self.d * self.p..(i + 1) * self.d * self.p]
    }
}

/// Mean-trace soft count per sample for multi-output networks:
/// `N(i) = Σ_j (1/d)·Tr K^C(x_i, x_j)`, computed in `O(n·d·p)` by summing the
/// whitened blocks once. Self terms are exactly 1; singular samples get
/// `None` and are left out of every sum.
pub fn count_soft_all_multi(bank: &MatrixBank) -> Vec<Option<f64>> {
    let block_len = bank.d * bank.p;
    let mut sum = vec![0.0; block_len];
    for i in 0..bank.len() {
        if !bank.is_defined(i) {
            continue;
        }
        for (slot, v) in sum.iter_mut().zip(bank.block(i)) {
            *slot += v;
        }
    }
    let inv_d = 1.0 / bank.d as f64;
    (0..bank.len())
        .map(|i| {
            if !bank.is_defined(i) {
                return None;
            }
            let block = bank.block(i);
            let mut with_self = 0.0;
            let mut self_term = 0.0;
            for (idx, v) in block.iter().enumerate() {
                with_self += v * sum[idx];
                self_term += v * v;
            }
            Some((with_self - self_term) * inv_d + 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use tempfile::tempdir;

    use super::*;
    use crate::kernels::{kernel_matrix, normalize_kernel_matrix, trace_similarity};
    use crate::nn::{stream_for_tests, Activation};
    use crate::testkit;

    fn small_bank(seed: u64, n: usize) -> (NetworkSpec, ParamVector, Vec<Vec<f64>>, GradientBank) {
        let spec = NetworkSpec::mlp(vec![2, 8, 6, 1], Activation::Tanh).unwrap();
        let params = ParamVector::init(&spec, seed);
        let mut rng = stream_for_tests(seed.wrapping_add(100));
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])
            .collect();
        let bank = GradientBank::from_network(&spec, &params, &inputs).unwrap();
        (spec, params, inputs, bank)
    }

    #[test]
    fn bank_rows_match_per_sample_gradients() {
        let (spec, params, inputs, bank) = small_bank(3, 12);
        assert_eq!(bank.len(), 12);
        assert_eq!(bank.dim(), spec.param_count());
        for (i, x) in inputs.iter().enumerate() {
            let g = per_sample_gradient(&spec, &params, x).unwrap();
            assert_eq!(bank.gradient(i), g.row(0));
            testkit::assert_close(bank.norm(i), testkit::l2_norm(g.row(0)), 1e-12, 1e-12);
        }
    }

    #[test]
    fn self_correlation_is_exactly_one() {
        let (_, _, _, bank) = small_bank(4, 6);
        for i in 0..bank.len() {
            assert_eq!(bank.correlation(i, i).unwrap(), 1.0);
        }
    }

    #[test]
    fn hard_count_respects_threshold_and_self() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.1],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
        ];
        let bank = GradientBank::from_gradients(rows).unwrap();
        // cos(0,1) ≈ 0.995, cos(0,2) = 0, cos(0,3) = −1.
        assert_eq!(count_hard(&bank, 0, 0.9).unwrap(), 2);
        assert_eq!(count_hard(&bank, 0, 0.999).unwrap(), 1);
        assert_eq!(count_hard(&bank, 0, -1.0).unwrap(), 4);
        assert_eq!(count_hard(&bank, 0, 1.5).unwrap(), 0);
    }

    #[test]
    fn soft_count_fast_matches_naive() {
        let (_, _, _, bank) = small_bank(7, 40);
        let naive = count_soft_all_naive(&bank);
        let fast = count_soft_all_fast(&bank);
        for (a, b) in naive.iter().zip(&fast) {
            let (a, b) = (a.unwrap(), b.unwrap());
            testkit::assert_close(b, a, 1e-10, 1e-10);
        }
        // And both match the single-sample definition.
        for i in 0..bank.len() {
            testkit::assert_close(
                fast[i].unwrap(),
                count_soft(&bank, i).unwrap(),
                1e-10,
                1e-10,
            );
        }
    }

    #[test]
    fn soft_count_is_invariant_to_per_sample_gradient_scale() {
        let (_, _, _, bank) = small_bank(9, 15);
        let mut rng = stream_for_tests(909);
        let rows: Vec<Vec<f64>> = (0..bank.len())
            .map(|i| {
                let c = rng.gen_range(0.01..100.0f64);
                bank.gradient(i).iter().map(|v| c * v).collect()
            })
            .collect();
        let scaled = GradientBank::from_gradients(rows).unwrap();
        let base = count_soft_all_fast(&bank);
        let re = count_soft_all_fast(&scaled);
        for (a, b) in base.iter().zip(&re) {
            testkit::assert_close(b.unwrap(), a.unwrap(), 1e-9, 1e-9);
        }
    }

    #[test]
    fn hard_count_integral_equals_positive_soft_count() {
        // ∫₀¹ N_τ dτ = Σ_{k>0} k. The threshold count is piecewise constant
        // in τ with breakpoints at the pairwise correlations, so the integral
        // is evaluated exactly: one count_hard call per segment midpoint.
        let (_, _, _, bank) = small_bank(11, 30);
        for i in [0, 7, 29] {
            let mut cuts = vec![0.0, 1.0];
            for j in 0..bank.len() {
                let k = bank.correlation(i, j).unwrap();
                if k > 0.0 && k < 1.0 {
                    cuts.push(k);
                }
            }
            cuts.sort_by(f64::total_cmp);
            let mut integral = 0.0;
            for pair in cuts.windows(2) {
                let mid = 0.5 * (pair[0] + pair[1]);
                integral += count_hard(&bank, i, mid).unwrap() as f64 * (pair[1] - pair[0]);
            }
            let positive = count_positive_alpha(&bank, i, 1.0).unwrap();
            testkit::assert_close(integral, positive, 1e-10, 1e-10);
        }
    }

    #[test]
    fn alpha_sharpening_shrinks_counts() {
        let (_, _, _, bank) = small_bank(13, 25);
        for i in 0..bank.len() {
            let a1 = count_positive_alpha(&bank, i, 1.0).unwrap();
            let a2 = count_positive_alpha(&bank, i, 2.0).unwrap();
            let a8 = count_positive_alpha(&bank, i, 8.0).unwrap();
            assert!(a1 + 1e-12 >= a2 && a2 + 1e-12 >= a8, "sample {i}: {a1} {a2} {a8}");
            assert!(a8 >= 1.0, "self term keeps counts at least 1, got {a8}");
        }
        assert!(matches!(
            count_positive_alpha(&bank, 0, 0.0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn undefined_samples_are_excluded_and_reported() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        ];
        let bank = GradientBank::from_gradients(rows).unwrap();
        assert_eq!(bank.undefined(), vec![1]);
        assert!(matches!(
            count_soft(&bank, 1).unwrap_err(),
            Error::UndefinedSample { index: 1 }
        ));
        let all = count_soft_all_fast(&bank);
        assert!(all[1].is_none());
        // Sample 1 contributes nothing to the others.
        let expected = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
        testkit::assert_close(all[0].unwrap(), expected, 1e-12, 1e-12);

        let report = k_nearest(&bank, 0, 5).unwrap();
        assert_eq!(report.undefined_skipped, 1);
        assert_eq!(report.neighbors.len(), 1);
        assert_eq!(report.neighbors[0].index, 2);
    }

    #[test]
    fn nearest_neighbors_sorted_with_index_ties() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![1.0, 0.0],
        ];
        let bank = GradientBank::from_gradients(rows).unwrap();
        let report = k_nearest(&bank, 0, 3).unwrap();
        // Exact duplicate direction first, then the two diagonal rows which
        // tie and must come in index order.
        assert_eq!(report.neighbors[0].index, 4);
        testkit::assert_close(report.neighbors[0].similarity, 1.0, 1e-12, 0.0);
        assert_eq!(report.neighbors[1].index, 2);
        assert_eq!(report.neighbors[2].index, 3);
        testkit::assert_close(
            report.neighbors[1].similarity,
            report.neighbors[2].similarity,
            1e-15,
            0.0,
        );
    }

    #[test]
    fn histogram_covers_all_defined_pairs() {
        let (_, _, _, bank) = small_bank(17, 20);
        let hist = similarity_histogram(&bank, 16).unwrap();
        assert_eq!(hist.total_pairs, 190);
        assert_eq!(hist.undefined_pairs, 0);
        assert_eq!(hist.counts.iter().sum::<u64>(), 190);
        assert!(matches!(
            similarity_histogram(&bank, 0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn uncertainty_factor_for_identical_gradients_is_inverse_count() {
        let rows = vec![vec![0.4, -0.3, 0.8]; 25];
        let bank = GradientBank::from_gradients(rows).unwrap();
        for i in 0..25 {
            testkit::assert_close(uncertainty_factor(&bank, i).unwrap(), 1.0 / 25.0, 1e-12, 1e-12);
        }

        // Scale invariance: doubling every gradient changes nothing.
        let doubled = GradientBank::from_gradients(vec![vec![0.8, -0.6, 1.6]; 25]).unwrap();
        testkit::assert_close(
            uncertainty_factor(&doubled, 0).unwrap(),
            1.0 / 25.0,
            1e-12,
            1e-12,
        );

        // Antagonistic dataset: the total push on sample 0 cancels.
        let cancel = GradientBank::from_gradients(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(matches!(
            uncertainty_factor(&cancel, 0).unwrap_err(),
            Error::ZeroDenominator { index: 0, .. }
        ));
    }

    #[test]
    fn bank_save_load_round_trips_bit_exact() {
        let (_, _, _, bank) = small_bank(19, 9);
        let dir = tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        bank.save(&path).unwrap();
        let loaded = GradientBank::load(&path).unwrap();
        assert_eq!(bank, loaded);

        // Corrupt the magic and the length.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            GradientBank::load(&path).unwrap_err(),
            Error::BankFile { .. }
        ));
        bytes[0] ^= 0xFF;
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            GradientBank::load(&path).unwrap_err(),
            Error::BankFile { .. }
        ));
    }

    #[test]
    fn density_report_rows_match_primitives() {
        let (_, _, _, bank) = small_bank(23, 14);
        let config = DensityConfig::default();
        let report = density_report(&bank, &config).unwrap();
        assert_eq!(report.rows.len(), 14);
        for row in &report.rows {
            assert!(row.defined);
            assert_eq!(row.hard[1], count_hard(&bank, row.index, 0.8).unwrap());
            testkit::assert_close(row.soft, count_soft(&bank, row.index).unwrap(), 1e-10, 1e-10);
            testkit::assert_close(
                row.positive[2],
                count_positive_alpha(&bank, row.index, 8.0).unwrap(),
                1e-12,
                1e-12,
            );
        }
    }

    #[test]
    fn multi_output_soft_count_matches_pairwise_trace_similarity() {
        let spec = NetworkSpec::mlp(vec![2, 7, 5, 2], Activation::Tanh).unwrap();
        let params = ParamVector::init(&spec, 31);
        let mut rng = stream_for_tests(3131);
        let inputs: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])
            .collect();
        let bank = MatrixBank::from_network(&spec, &params, &inputs).unwrap();
        assert!(bank.singular().is_empty());
        let fast = count_soft_all_multi(&bank);

        let grads: Vec<_> = inputs
            .iter()
            .map(|x| per_sample_gradient(&spec, &params, x).unwrap())
            .collect();
        for i in 0..inputs.len() {
            let mut expected = 1.0;
            let k_ii = kernel_matrix(&grads[i], &grads[i]).unwrap();
            for (j, g_j) in grads.iter().enumerate() {
                if j == i {
                    continue;
                }
                let k_jj = kernel_matrix(g_j, g_j).unwrap();
                let k_ij = kernel_matrix(&grads[i], g_j).unwrap();
                let normalized = normalize_kernel_matrix(&k_ij, &k_ii, &k_jj).unwrap();
                expected += trace_similarity(&normalized).unwrap().value;
            }
            testkit::assert_close(fast[i].unwrap(), expected, 1e-9, 1e-9);
        }
    }

    #[test]
    fn multi_bank_reports_singular_samples() {
        let zero = GradientMatrix::from_rows(vec![vec![0.0; 4], vec![0.0; 4]]);
        let fine = GradientMatrix::from_rows(vec![
            vec![1.0, 0.0, 0.2, -0.1],
            vec![0.0, 1.0, -0.4, 0.3],
        ]);
        let bank = MatrixBank::from_matrices(vec![fine.clone(), zero, fine]).unwrap();
        assert_eq!(bank.singular(), &[1]);
        let counts = count_soft_all_multi(&bank);
        assert!(counts[1].is_none());
        // Identical samples 0 and 2 see each other at trace similarity 1.
        testkit::assert_close(counts[0].unwrap(), 2.0, 1e-9, 1e-9);
        testkit::assert_close(counts[2].unwrap(), 2.0, 1e-9, 1e-9);
    }

    #[test]
    fn reductions_pick_the_right_rows() {
        let spec = NetworkSpec::mlp(vec![2, 5, 3], Activation::Tanh).unwrap();
        let params = ParamVector::init(&spec, 41);
        let inputs = vec![vec![0.3, -0.8], vec![-1.1, 0.4]];
        let labels = vec![2usize, 0];

        let coord = GradientBank::from_network_reduced(
            &spec,
            &params,
            &inputs,
            Reduction::Coord(1),
        )
        .unwrap();
        let right = GradientBank::from_network_reduced(
            &spec,
            &params,
            &inputs,
            Reduction::RightClass(&labels),
        )
        .unwrap();
        let margin = GradientBank::from_network_reduced(
            &spec,
            &params,
            &inputs,
            Reduction::Margin(&labels),
        )
        .unwrap();

        for (i, x) in inputs.iter().enumerate() {
            let g = per_sample_gradient(&spec, &params, x).unwrap();
            assert_eq!(coord.gradient(i), g.row(1));
            assert_eq!(right.gradient(i), g.row(labels[i]));

            let out = crate::nn::forward(&spec, &params, x).unwrap();
            let adversary = (0..3)
                .filter(|&c| c != labels[i])
                .max_by(|&a, &b| out[a].total_cmp(&out[b]))
                .unwrap();
            let expected: Vec<f64> = g
                .row(labels[i])
                .iter()
                .zip(g.row(adversary))
                .map(|(r, a)| r - a)
                .collect();
            assert_eq!(margin.gradient(i), &expected[..]);
        }

        assert!(matches!(
            GradientBank::from_network_reduced(&spec, &params, &inputs, Reduction::Coord(3))
                .unwrap_err(),
            Error::BadCoordinate { coord: 3, d: 3 }
        ));
        assert!(matches!(
            GradientBank::from_network(&spec, &params, &inputs).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }
}
