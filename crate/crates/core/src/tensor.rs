//! Storage and contractions for the bilinear interaction tensor.
//!
//! The tensor `B` has entries `B[i][j][k]` with `i` the output component,
//! `j` the index of the first (advecting) argument and `k` the index of the
//! second (advected) argument:
//!
//! ```text
//! (B(V, U))_i = sum_{j,k} B[i][j][k] V_j U_k.
//! ```
//!
//! Small systems store the full `N^3` array; larger ones keep a coordinate
//! list, which is the natural output of the spectral generators where almost
//! all interactions vanish.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::Result;

/// Above this state dimension `from_entries` switches to coordinate storage.
pub const DENSE_DIM_LIMIT: usize = 64;

/// Bilinear tensor `B: R^N x R^N -> R^N`.
#[derive(Debug, Clone, PartialEq)]
pub enum BilinearTensor {
    /// Row-major `N^3` array, entry `(i, j, k)` at `i * N^2 + j * N + k`.
    Dense { dim: usize, data: Vec<f64> },
    /// Coordinate list of nonzero entries `(i, j, k, value)`. Duplicate
    /// coordinates are allowed and accumulate.
    Sparse {
        dim: usize,
        entries: Vec<(usize, usize, usize, f64)>,
    },
}

impl BilinearTensor {
    /// Identically zero tensor in dense storage.
    pub fn zeros(dim: usize) -> Self {
        BilinearTensor::Dense {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// Builds a tensor from a coordinate list, choosing dense storage for
    /// `dim <= DENSE_DIM_LIMIT` and coordinate storage above.
    pub fn from_entries(dim: usize, entries: Vec<(usize, usize, usize, f64)>) -> Result<Self> {
        for &(i, j, k, v) in &entries {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::IndexOutOfRange(format!(
                    "tensor entry ({i}, {j}, {k}) outside dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "tensor entry ({i}, {j}, {k}) is not finite"
                )));
            }
        }
        if dim <= DENSE_DIM_LIMIT {
            let mut data = vec![0.0; dim * dim * dim];
            for &(i, j, k, v) in &entries {
                data[(i * dim + j) * dim + k] += v;
            }
            Ok(BilinearTensor::Dense { dim, data })
        } else {
            Ok(BilinearTensor::Sparse { dim, entries })
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BilinearTensor::Dense { dim, .. } | BilinearTensor::Sparse { dim, .. } => *dim,
        }
    }

    /// Number of stored coefficients (coordinate entries, or `N^3` when dense).
    pub fn stored_len(&self) -> usize {
        match self {
            BilinearTensor::Dense { data, .. } => data.len(),
            BilinearTensor::Sparse { entries, .. } => entries.len(),
        }
    }

    /// Accumulated coordinate view: one `(i, j, k, value)` per nonzero, with
    /// duplicates summed and exact zeros dropped.
    pub fn nonzeros(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut acc: HashMap<(usize, usize, usize), f64> = HashMap::new();
        match self {
            BilinearTensor::Dense { dim, data } => {
                let n = *dim;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let v = data[(i * n + j) * n + k];
                            if v != 0.0 {
                                acc.insert((i, j, k), v);
                            }
                        }
                    }
                }
            }
            BilinearTensor::Sparse { entries, .. } => {
                for &(i, j, k, v) in entries {
                    *acc.entry((i, j, k)).or_insert(0.0) += v;
                }
                acc.retain(|_, v| *v != 0.0);
            }
        }
        let mut out: Vec<_> = acc.into_iter().map(|((i, j, k), v)| (i, j, k, v)).collect();
        out.sort_by_key(|&(i, j, k, _)| (i, j, k));
        out
    }

    /// Adds `value` to the coefficient at `(i, j, k)`.
    pub fn add_entry(&mut self, i: usize, j: usize, k: usize, value: f64) {
        match self {
            BilinearTensor::Dense { dim, data } => {
                let n = *dim;
                data[(i * n + j) * n + k] += value;
            }
            BilinearTensor::Sparse { entries, .. } => entries.push((i, j, k, value)),
        }
    }

    /// `B(V, U)`.
    pub fn apply(&self, v: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(u.len(), n);
        let mut out = DVector::zeros(n);
        match self {
            BilinearTensor::Dense { dim, data } => {
                let n = *dim;
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        let vj = v[j];
                        if vj == 0.0 {
                            continue;
                        }
                        let row = &data[(i * n + j) * n..(i * n + j) * n + n];
                        let mut t = 0.0;
                        for k in 0..n {
                            t += row[k] * u[k];
                        }
                        s += vj * t;
                    }
                    out[i] = s;
                }
            }
            BilinearTensor::Sparse { entries, .. } => {
                for &(i, j, k, val) in entries {
                    out[i] += val * v[j] * u[k];
                }
            }
        }
        out
    }

    /// Directional derivative of `U -> B(U, U)` at `u`, applied to `rho`:
    /// `B(u, rho) + B(rho, u)`.
    pub fn grad_apply(&self, u: &DVector<f64>, rho: &DVector<f64>) -> DVector<f64> {
        self.apply(u, rho) + self.apply(rho, u)
    }

    /// Transpose of `grad_apply(u, .)` applied to `eta`:
    /// `m -> sum_{i,k} B[i][m][k] eta_i u_k + sum_{i,j} B[i][j][m] eta_i u_j`.
    pub fn grad_apply_transpose(&self, u: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        match self {
            BilinearTensor::Dense { dim, data } => {
                let n = *dim;
                for i in 0..n {
                    let ei = eta[i];
                    if ei == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        let row = &data[(i * n + j) * n..(i * n + j) * n + n];
                        let mut t = 0.0;
                        for k in 0..n {
                            t += row[k] * u[k];
                        }
                        out[j] += ei * t;
                        for k in 0..n {
                            out[k] += ei * row[k] * u[j];
                        }
                    }
                }
            }
            BilinearTensor::Sparse { entries, .. } => {
                for &(i, j, k, val) in entries {
                    out[j] += val * eta[i] * u[k];
                    out[k] += val * eta[i] * u[j];
                }
            }
        }
        out
    }

    /// Materializes the matrix of `rho -> B(u, rho) + B(rho, u)`.
    pub fn grad_matrix(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        match self {
            BilinearTensor::Dense { dim, data } => {
                let n = *dim;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let val = data[(i * n + j) * n + k];
                            if val != 0.0 {
                                m[(i, k)] += val * u[j];
                                m[(i, j)] += val * u[k];
                            }
                        }
                    }
                }
            }
            BilinearTensor::Sparse { entries, .. } => {
                for &(i, j, k, val) in entries {
                    m[(i, k)] += val * u[j];
                    m[(i, j)] += val * u[k];
                }
            }
        }
        m
    }

    /// Largest absolute violation of the cancellation identity,
    /// `max_{i,j,k} |B[i][j][k] + B[k][j][i]|`.
    pub fn cancellation_max_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        match self {
            BilinearTensor::Dense { dim, data } => {
                let n = *dim;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let s = data[(i * n + j) * n + k] + data[(k * n + j) * n + i];
                            worst = worst.max(s.abs());
                        }
                    }
                }
            }
            BilinearTensor::Sparse { .. } => {
                let mut acc: HashMap<(usize, usize, usize), f64> = HashMap::new();
                for (i, j, k, v) in self.nonzeros() {
                    acc.insert((i, j, k), v);
                }
                for (&(i, j, k), &v) in &acc {
                    let partner = acc.get(&(k, j, i)).copied().unwrap_or(0.0);
                    worst = worst.max((v + partner).abs());
                }
            }
        }
        worst
    }

    /// Frobenius norm, `sqrt(sum B[i][j][k]^2)` over accumulated entries.
    pub fn frobenius_norm(&self) -> f64 {
        match self {
            BilinearTensor::Dense { data, .. } => {
                data.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            BilinearTensor::Sparse { .. } => self
                .nonzeros()
                .iter()
                .map(|&(_, _, _, v)| v * v)
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// True when every stored coefficient vanishes.
    pub fn is_zero(&self) -> bool {
        self.nonzeros().is_empty()
    }
}
