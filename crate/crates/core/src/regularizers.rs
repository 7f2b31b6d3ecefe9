//! Penalties on the factors: the group mixed norm on `S`, the L1 and squared
//! Frobenius norms on `L`, their proximal operators, and the smoothed
//! (max-form) surrogate of the group norm.
//!
//! A "block" is the slice of latent row `k` restricted to the columns of one
//! group, so `S` has `K·G` blocks.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{GroupPartition, GroupWeighting};

/// Group mixed norm `Σ_k Σ_g w_g·‖s_k^g‖₂` over a fixed partition.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    members: Vec<Vec<usize>>,
    weights: Vec<f64>,
    num_tasks: usize,
}

/// Smoothed group norm at a point: value, gradient (the maximising dual
/// blocks) and the smoothing scale used.
#[derive(Debug, Clone)]
pub struct SmoothedPenalty {
    pub value: f64,
    pub gradient: Matrix,
    pub nu: f64,
}

impl GroupNorm {
    pub fn new(partition: &GroupPartition, weighting: GroupWeighting) -> Self {
        let members: Vec<Vec<usize>> = partition
            .groups()
            .iter()
            .map(|g| g.members.clone())
            .collect();
        let weights = members
            .iter()
            .map(|m| match weighting {
                GroupWeighting::Unweighted => 1.0,
                GroupWeighting::SqrtSize => (m.len() as f64).sqrt(),
            })
            .collect();
        Self {
            members,
            weights,
            num_tasks: partition.num_tasks(),
        }
    }

    pub fn unweighted(partition: &GroupPartition) -> Self {
        Self::new(partition, GroupWeighting::Unweighted)
    }

    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn check(&self, s: &Matrix) -> Result<()> {
        if s.cols() != self.num_tasks {
            return Err(Error::Dimension {
                context: "group partition task count",
                expected: self.num_tasks,
                found: s.cols(),
            });
        }
        Ok(())
    }

    /// Euclidean norm of block `(k, g)`.
    pub fn block_norm(&self, s: &Matrix, k: usize, g: usize) -> f64 {
        let row = s.row(k);
        self.members[g]
            .iter()
            .map(|&m| row[m] * row[m])
            .sum::<f64>()
            .sqrt()
    }

    pub fn value(&self, s: &Matrix) -> f64 {
        let mut total = 0.0;
        for k in 0..s.rows() {
            for (g, w) in self.weights.iter().enumerate() {
                total += w * self.block_norm(s, k, g);
            }
        }
        total
    }

    /// Block soft-threshold: every block is scaled by
    /// `max(0, 1 − t·w_g/‖b‖)`, and set exactly to zero when `‖b‖ ≤ t·w_g`.
    pub fn prox(&self, v: &Matrix, t: f64) -> Matrix {
        let mut out = v.clone();
        for k in 0..v.rows() {
            for (g, w) in self.weights.iter().enumerate() {
                let norm = self.block_norm(v, k, g);
                let thresh = t * w;
                let factor = if norm <= thresh {
                    0.0
                } else {
                    1.0 - thresh / norm
                };
                let row = out.row_mut(k);
                for &m in &self.members[g] {
                    row[m] *= factor;
                }
            }
        }
        out
    }

    /// `Ω_ν(S) = Σ_blocks max_{‖a‖≤w_g} ⟨a, b⟩ − ν/2·‖a‖²`.
    pub fn smooth(&self, s: &Matrix, nu: f64) -> SmoothedPenalty {
        assert!(nu > 0.0, "smoothing scale must be positive");
        let mut gradient = Matrix::zeros(s.rows(), s.cols());
        let mut value = 0.0;
        for k in 0..s.rows() {
            for (g, &w) in self.weights.iter().enumerate() {
                let norm = self.block_norm(s, k, g);
                // dual maximiser: b/ν projected onto the ball of radius w
                let scale = if norm <= w * nu { 1.0 / nu } else { w / norm };
                let a_sq = (scale * norm).powi(2);
                value += scale * norm * norm - 0.5 * nu * a_sq;
                let src = s.row(k);
                let mut vals = Vec::with_capacity(self.members[g].len());
                for &m in &self.members[g] {
                    vals.push((m, scale * src[m]));
                }
                let row = gradient.row_mut(k);
                for (m, a) in vals {
                    row[m] = a;
                }
            }
        }
        SmoothedPenalty {
            value,
            gradient,
            nu,
        }
    }

    /// Upper bound `ν·K·Σ_g w_g²/2` on `Ω − Ω_ν` (equal to `ν·K·G/2`
    /// without weighting).
    pub fn smoothing_gap_bound(&self, k: usize, nu: f64) -> f64 {
        0.5 * nu * k as f64 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Norm of each block's part of `m`, for optimality checks.
    pub(crate) fn blocks(&self) -> impl Iterator<Item = (usize, &[usize], f64)> + '_ {
        self.members
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(g, (m, &w))| (g, m.as_slice(), w))
    }
}

/// Unweighted group mixed norm of `s`.
pub fn group_l21_value(s: &Matrix, partition: &GroupPartition) -> Result<f64> {
    let norm = GroupNorm::unweighted(partition);
    norm.check(s)?;
    Ok(norm.value(s))
}

/// Proximal operator of `t·Ω` (unweighted).
pub fn prox_group_l21(v: &Matrix, t: f64, partition: &GroupPartition) -> Result<Matrix> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Argument(format!(
            "prox threshold must be >= 0, got {t}"
        )));
    }
    let norm = GroupNorm::unweighted(partition);
    norm.check(v)?;
    Ok(norm.prox(v, t))
}

/// Smoothed unweighted group norm of `s`.
pub fn smooth_group_l21(
    s: &Matrix,
    partition: &GroupPartition,
    nu: f64,
) -> Result<SmoothedPenalty> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Argument(format!(
            "smoothing scale must be > 0, got {nu}"
        )));
    }
    let norm = GroupNorm::unweighted(partition);
    norm.check(s)?;
    Ok(norm.smooth(s, nu))
}

pub fn l1_value(l: &Matrix) -> f64 {
    l.as_slice().iter().map(|v| v.abs()).sum()
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Entrywise soft-threshold `sign(v)·max(|v| − t, 0)`.
pub fn prox_l1(v: &Matrix, t: f64) -> Matrix {
    assert!(t >= 0.0, "prox threshold must be >= 0");
    v.map(|x| soft_threshold(x, t))
}

pub fn frobenius_sq(l: &Matrix) -> f64 {
    l.frobenius_sq()
}

pub fn frobenius_sq_grad(l: &Matrix) -> Matrix {
    l.scale(2.0)
}
