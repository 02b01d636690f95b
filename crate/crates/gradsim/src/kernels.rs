//! Similarity kernels between inputs, computed from parameter gradients.
//!
//! For a network `f` with parameters θ, the gradient `∇_θ f(x)` describes how
//! the output at `x` responds to parameter motion. Inputs whose gradients
//! align are coupled: a training step on one moves the other. The kernels here
//! quantify that coupling:
//!
//! * `k_inner`   — raw inner product `∇f(x)·∇f(x′)`.
//! * `k_corr`    — cosine of the two gradients, in `[-1, 1]`.
//! * `k_influence` — inner product normalized by the source's squared norm:
//!   the first-order change of `f(x′)` per unit change of `f(x)` under a
//!   gradient step at `x`.
//!
//! For `d`-dimensional outputs the analogue is a `d×d` matrix built from the
//! per-coordinate gradients, normalized on both sides by the inverse square
//! root of the self-kernels. Scalar summaries (`trace_similarity`, and for
//! `d = 2` the rotation-invariant `rot_similarity`) compress it back to one
//! number.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::nn::{GradientMatrix, Layout, ParamKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Inner,
    Correlation,
    Influence,
    Trace,
    Rotation,
}

/// A scalar similarity tagged with the kernel that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityValue {
    pub kind: SimilarityKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Raw,
    Normalized,
}

/// Square `d×d` kernel block between two inputs of a `d`-output network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub kind: KernelKind,
    d: usize,
    /// Row-major entries; `values[i·d + j] = ∇f^i(x)·∇f^j(x′)` for raw kind.
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(kind: KernelKind, d: usize, values: Vec<f64>) -> KernelMatrix {
        assert_eq!(values.len(), d * d, "kernel matrix must be d×d");
        KernelMatrix { kind, d, values }
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transposed(&self) -> KernelMatrix {
        let mut values = vec![0.0; self.d * self.d];
        for i in 0..self.d {
            for j in 0..self.d {
                values[j * self.d + i] = self.get(i, j);
            }
        }
        KernelMatrix::new(self.kind, self.d, values)
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.values)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "gradient vectors must have equal length ({} vs {})",
        a.len(),
        b.len()
    );
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Inner-product kernel `∇f(x)·∇f(x′)`.
pub fn k_inner(g: &[f64], g_other: &[f64]) -> f64 {
    dot(g, g_other)
}

/// Correlation kernel: cosine between the two parameter gradients.
///
/// Undefined when either gradient has zero norm; callers that want to treat
/// such pairs as dissimilar map the error to 0 explicitly.
pub fn k_corr(g: &[f64], g_other: &[f64]) -> Result<SimilarityValue> {
    let na = norm(g);
    let nb = norm(g_other);
    if na == 0.0 {
        return Err(Error::ZeroNormGradient { which: "left" });
    }
    if nb == 0.0 {
        return Err(Error::ZeroNormGradient { which: "right" });
    }
    Ok(SimilarityValue {
        kind: SimilarityKind::Correlation,
        value: dot(g, g_other) / (na * nb),
    })
}

/// Influence kernel `∇f(x)·∇f(x′) / ‖∇f(x)‖²`: the first-order response of
/// `f(x′)` to a unit-sized gradient step taken at the source `x`.
pub fn k_influence(g_source: &[f64], g_target: &[f64]) -> Result<SimilarityValue> {
    let n2 = dot(g_source, g_source);
    if n2 == 0.0 {
        return Err(Error::ZeroSourceGradient);
    }
    Ok(SimilarityValue {
        kind: SimilarityKind::Influence,
        value: dot(g_source, g_target) / n2,
    })
}

/// Raw matrix kernel `K(a, b)[i][j] = ∇f^i(a)·∇f^j(b)` between two gradient
/// matrices of the same network. `K(a, b)ᵀ = K(b, a)`.
pub fn kernel_matrix(ga: &GradientMatrix, gb: &GradientMatrix) -> Result<KernelMatrix> {
    if ga.d() != gb.d() || ga.p() != gb.p() {
        return Err(Error::ShapeMismatch {
            context: "gradient matrices for kernel",
            expected: ga.d() * ga.p(),
            got: gb.d() * gb.p(),
        });
    }
    let d = ga.d();
    let mut values = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            values[i * d + j] = dot(ga.row(i), gb.row(j));
        }
    }
    Ok(KernelMatrix::new(KernelKind::Raw, d, values))
}

/// Diagnostics from the inverse-square-root computation inside
/// [`normalize_kernel_matrix_detailed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeInfo {
    /// Smallest eigenvalue seen across both self-kernels.
    pub min_eigenvalue: f64,
    /// Number of eigenvalues that had to be lifted to the floor.
    pub floored: usize,
}

/// Relative eigenvalue floor used when inverting self-kernels.
pub const EIGENVALUE_FLOOR_REL: f64 = 1e-10;

fn inv_sqrt_psd(k: &KernelMatrix) -> Result<(DMatrix<f64>, f64, usize)> {
    let eig = k.to_dmatrix().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(max_eig > 0.0) {
        return Err(Error::SingularSelfKernel { min_eig, max_eig });
    }
    let floor = EIGENVALUE_FLOOR_REL * max_eig;
    let mut floored = 0;
    let d = k.d();
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..d {
        let lambda = eig.eigenvalues[c];
        let clamped = if lambda < floor {
            floored += 1;
            floor
        } else {
            lambda
        };
        let s = 1.0 / clamped.sqrt();
        for r in 0..d {
            scaled[(r, c)] *= s;
        }
    }
    Ok((&scaled * eig.eigenvectors.transpose(), min_eig, floored))
}

/// Normalized matrix kernel
/// `K^C(a, b) = K(a,a)^{-1/2} · K(a,b) · K(b,b)^{-1/2}`.
///
/// Its entries lie in `[-1, 1]`, the trace is at most `d`, and
/// `K^C(a, a) = I`. Self-kernel eigenvalues below `1e-10` of the largest are
/// floored before inversion; a self-kernel with no positive eigenvalue at all
/// is reported as singular.
pub fn normalize_kernel_matrix(
    k_ab: &KernelMatrix,
    k_aa: &KernelMatrix,
    k_bb: &KernelMatrix,
) -> Result<KernelMatrix> {
    normalize_kernel_matrix_detailed(k_ab, k_aa, k_bb).map(|(m, _)| m)
}

pub fn normalize_kernel_matrix_detailed(
    k_ab: &KernelMatrix,
    k_aa: &KernelMatrix,
    k_bb: &KernelMatrix,
) -> Result<(KernelMatrix, NormalizeInfo)> {
    let d = k_ab.d();
    if k_aa.d() != d || k_bb.d() != d {
        return Err(Error::ShapeMismatch {
            context: "self-kernels for normalization",
            expected: d,
            got: k_aa.d().max(k_bb.d()),
        });
    }
    for (name, k) in [("cross", k_ab), ("left self", k_aa), ("right self", k_bb)] {
        if k.kind != KernelKind::Raw {
            let _ = name;
            return Err(Error::WrongKernelKind {
                expected: KernelKind::Raw,
                got: k.kind,
            });
        }
    }
    let (left, min_a, floored_a) = inv_sqrt_psd(k_aa)?;
    let (right, min_b, floored_b) = inv_sqrt_psd(k_bb)?;
    let normalized = &left * k_ab.to_dmatrix() * &right;
    let mut values = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            values.push(normalized[(i, j)]);
        }
    }
    Ok((
        KernelMatrix::new(KernelKind::Normalized, d, values),
        NormalizeInfo {
            min_eigenvalue: min_a.min(min_b),
            floored: floored_a + floored_b,
        },
    ))
}

/// Whiten a gradient matrix by its own self-kernel:
/// `W = K(x,x)^{-1/2} · G`, so that `W_a · W_bᵀ` is already the normalized
/// kernel between `a` and `b`. Returns the whitened rows plus flooring
/// diagnostics; fails only when the self-kernel has no positive eigenvalue.
pub fn whiten_gradient(g: &GradientMatrix) -> Result<(GradientMatrix, NormalizeInfo)> {
    let k = kernel_matrix(g, g)?;
    let (inv_sqrt, min_eig, floored) = inv_sqrt_psd(&k)?;
    let d = g.d();
    let p = g.p();
    let mut rows = vec![vec![0.0; p]; d];
    for i in 0..d {
        for j in 0..d {
            let c = inv_sqrt[(i, j)];
            if c != 0.0 {
                for (slot, v) in rows[i].iter_mut().zip(g.row(j)) {
                    *slot += c * v;
                }
            }
        }
    }
    Ok((
        GradientMatrix::from_rows(rows),
        NormalizeInfo {
            min_eigenvalue: min_eig,
            floored,
        },
    ))
}

/// Mean diagonal of a normalized kernel: `(1/d)·Tr K^C`, a scalar similarity
/// that is 1 exactly at `K^C(x, x)`.
pub fn trace_similarity(k: &KernelMatrix) -> Result<SimilarityValue> {
    if k.kind != KernelKind::Normalized {
        return Err(Error::WrongKernelKind {
            expected: KernelKind::Normalized,
            got: k.kind,
        });
    }
    Ok(SimilarityValue {
        kind: SimilarityKind::Trace,
        value: k.trace() / k.d() as f64,
    })
}

/// Rotation-invariant similarity for 2-output networks:
/// `½·√(‖M‖_F² + 2·det M)`, the maximum of `½·Tr(M·R_φ)` over all rotations
/// `R_φ`. Unchanged when either output pair is rotated, so it compares e.g.
/// displacement fields regardless of a global rotation between them.
pub fn rot_similarity(k: &KernelMatrix) -> Result<SimilarityValue> {
    if k.kind != KernelKind::Normalized {
        return Err(Error::WrongKernelKind {
            expected: KernelKind::Normalized,
            got: k.kind,
        });
    }
    if k.d() != 2 {
        return Err(Error::InvalidArgument(format!(
            "rot_similarity is defined for 2 outputs, got {}",
            k.d()
        )));
    }
    let (m11, m12, m21, m22) = (k.get(0, 0), k.get(0, 1), k.get(1, 0), k.get(1, 1));
    // ‖M‖_F² + 2·det M = (m11 + m22)² + (m12 − m21)², which is nonnegative in
    // exact arithmetic; this form cannot go negative under rounding either.
    let value = 0.5 * ((m11 + m22).powi(2) + (m12 - m21).powi(2)).sqrt();
    Ok(SimilarityValue {
        kind: SimilarityKind::Rotation,
        value,
    })
}

/// Reduce a classification network's gradient matrix to a single row: the
/// gradient of the correct class's output, optionally minus the gradient of a
/// distinct adversary class.
pub fn binarize_classification_gradient(
    g: &GradientMatrix,
    right: usize,
    adversary: Option<usize>,
) -> Result<GradientMatrix> {
    if right >= g.d() {
        return Err(Error::BadCoordinate {
            coord: right,
            d: g.d(),
        });
    }
    let row = match adversary {
        None => g.row(right).to_vec(),
        Some(adv) => {
            if adv >= g.d() {
                return Err(Error::BadCoordinate { coord: adv, d: g.d() });
            }
            if adv == right {
                return Err(Error::InvalidArgument(
                    "adversary class must differ from the right class".into(),
                ));
            }
            g.row(right)
                .iter()
                .zip(g.row(adv))
                .map(|(r, a)| r - a)
                .collect()
        }
    };
    Ok(GradientMatrix::from_rows(vec![row]))
}

/// One parameter group's share of the inner-product kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerTerm {
    pub layer: usize,
    pub kind: ParamKind,
    pub value: f64,
}

/// Split `k_inner(g, g′)` into per-parameter-group partial sums following the
/// layout. The terms sum to the full inner product; large weight-block terms
/// identify the layers through which two inputs interact.
pub fn layer_decomposition(g: &[f64], g_other: &[f64], layout: &Layout) -> Vec<LayerTerm> {
    assert_eq!(
        g.len(),
        layout.total,
        "gradient length {} does not match layout total {}",
        g.len(),
        layout.total
    );
    assert_eq!(g.len(), g_other.len(), "gradient vectors must have equal length");
    layout
        .entries
        .iter()
        .map(|entry| LayerTerm {
            layer: entry.layer,
            kind: entry.kind,
            value: dot(&g[entry.range()], &g_other[entry.range()]),
        })
        .collect()
}
