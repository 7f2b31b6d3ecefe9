//! Squared hinge data term `Σ_m Σ_i ½·max(0, 1 − y_i·(L s^m)ᵀ x_i)²` and its
//! gradients with respect to `S` and `L`.
//!
//! Per-task work may run on the rayon pool, but partial results are always
//! reduced in task order, so every value here is bit-deterministic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Dataset, LatentModel, TaskData};

// below this many feature entries the rayon overhead is not worth it
const PAR_THRESHOLD: usize = 1 << 16;

pub(crate) fn map_tasks<T: Send>(
    dataset: &Dataset,
    f: impl Fn(usize, &TaskData) -> T + Sync + Send,
) -> Vec<T> {
    let work: usize = dataset.tasks.iter().map(|t| t.x.rows() * t.x.cols()).sum();
    if work >= PAR_THRESHOLD && dataset.tasks.len() > 1 {
        dataset
            .tasks
            .par_iter()
            .enumerate()
            .map(|(m, t)| f(m, t))
            .collect()
    } else {
        dataset
            .tasks
            .iter()
            .enumerate()
            .map(|(m, t)| f(m, t))
            .collect()
    }
}

/// Loss of scores `z` against labels and the per-sample derivative
/// `∂loss/∂z_i = −ξ_i·y_i`.
pub(crate) fn hinge_residual(scores: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let r = scores
        .iter()
        .zip(y)
        .map(|(&z, &yi)| {
            let xi = (1.0 - yi * z).max(0.0);
            value += 0.5 * xi * xi;
            -xi * yi
        })
        .collect();
    (value, r)
}

pub(crate) fn hinge_value(scores: &[f64], y: &[f64]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(&z, &yi)| {
            let xi = (1.0 - yi * z).max(0.0);
            0.5 * xi * xi
        })
        .sum()
}

/// Loss of a single classifier `w` on one task pool.
pub fn sqhinge_task_value(w: &[f64], task: &TaskData) -> Result<f64> {
    check_task(w.len(), task)?;
    Ok(hinge_value(&task.x.matvec(w), &task.y))
}

/// Loss and gradient with respect to `w` for one task pool.
pub fn sqhinge_task_grad(w: &[f64], task: &TaskData) -> Result<(f64, Vec<f64>)> {
    check_task(w.len(), task)?;
    let (value, r) = hinge_residual(&task.x.matvec(w), &task.y);
    Ok((value, task.x.t_matvec(&r)))
}

fn check_task(d: usize, task: &TaskData) -> Result<()> {
    if task.x.cols() != d {
        return Err(Error::Dimension {
            context: "classifier vs task features",
            expected: task.x.cols(),
            found: d,
        });
    }
    if task.x.rows() != task.y.len() {
        return Err(Error::Dimension {
            context: "task labels",
            expected: task.x.rows(),
            found: task.y.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_model(model: &LatentModel, dataset: &Dataset) -> Result<()> {
    if model.d() != dataset.d {
        return Err(Error::Dimension {
            context: "model feature dimension",
            expected: dataset.d,
            found: model.d(),
        });
    }
    if model.m() != dataset.num_tasks() {
        return Err(Error::Dimension {
            context: "model task count",
            expected: dataset.num_tasks(),
            found: model.m(),
        });
    }
    Ok(())
}

/// Total loss with `w^m = L·s^m`.
pub fn sqhinge_total(model: &LatentModel, dataset: &Dataset) -> Result<f64> {
    check_model(model, dataset)?;
    Ok(loss_for_weights(&model.l, &model.s, dataset))
}

pub(crate) fn loss_for_weights(l: &Matrix, s: &Matrix, dataset: &Dataset) -> f64 {
    map_tasks(dataset, |m, t| {
        let w = l.matvec(&s.col(m));
        hinge_value(&t.x.matvec(&w), &t.y)
    })
    .into_iter()
    .sum()
}

/// Per task: loss and `X_mᵀ·r_m`, the gradient with respect to `w^m`.
pub(crate) fn weight_gradients(l: &Matrix, s: &Matrix, dataset: &Dataset) -> Vec<(f64, Vec<f64>)> {
    map_tasks(dataset, |m, t| {
        let w = l.matvec(&s.col(m));
        let (value, r) = hinge_residual(&t.x.matvec(&w), &t.y);
        (value, t.x.t_matvec(&r))
    })
}

/// `∂loss/∂S`: column `m` is `Lᵀ·X_mᵀ·r_m`.
pub fn sqhinge_grad_s(model: &LatentModel, dataset: &Dataset) -> Result<Matrix> {
    check_model(model, dataset)?;
    let parts = weight_gradients(&model.l, &model.s, dataset);
    let mut grad = Matrix::zeros(model.k(), model.m());
    for (m, (_, g)) in parts.iter().enumerate() {
        grad.set_col(m, &model.l.t_matvec(g));
    }
    Ok(grad)
}

/// `∂loss/∂L = Σ_m (X_mᵀ·r_m)·(s^m)ᵀ`.
pub fn sqhinge_grad_l(model: &LatentModel, dataset: &Dataset) -> Result<Matrix> {
    check_model(model, dataset)?;
    Ok(loss_and_grad_l(&model.l, &model.s, dataset).1)
}

pub(crate) fn loss_and_grad_l(l: &Matrix, s: &Matrix, dataset: &Dataset) -> (f64, Matrix) {
    let parts = weight_gradients(l, s, dataset);
    let mut grad = Matrix::zeros(l.rows(), l.cols());
    let mut value = 0.0;
    for (m, (v, g)) in parts.iter().enumerate() {
        value += v;
        let sm = s.col(m);
        for (d, &gd) in g.iter().enumerate() {
            if gd == 0.0 {
                continue;
            }
            for (out, &sk) in grad.row_mut(d).iter_mut().zip(&sm) {
                *out += gd * sk;
            }
        }
    }
    (value, grad)
}

/// Task features projected onto the latent basis, `Z_m = X_m·L`, so the
/// loss as a function of `S` costs `O(N·K)` per evaluation. Tasks sharing a
/// feature matrix share their projection.
#[derive(Debug, Clone)]
pub(crate) struct LatentProjection {
    z: Vec<std::sync::Arc<Matrix>>,
    y: Vec<Vec<f64>>,
}

impl LatentProjection {
    pub(crate) fn new(l: &Matrix, dataset: &Dataset) -> Self {
        let mut cache: Vec<(*const Matrix, std::sync::Arc<Matrix>)> = Vec::new();
        let mut z = Vec::with_capacity(dataset.num_tasks());
        for t in &dataset.tasks {
            let key = std::sync::Arc::as_ptr(&t.x);
            if let Some((_, hit)) = cache.iter().find(|(k, _)| *k == key) {
                z.push(std::sync::Arc::clone(hit));
            } else {
                let proj = std::sync::Arc::new(t.x.matmul(l));
                cache.push((key, std::sync::Arc::clone(&proj)));
                z.push(proj);
            }
        }
        let y = dataset.tasks.iter().map(|t| t.y.clone()).collect();
        Self { z, y }
    }

    pub(crate) fn value(&self, s: &Matrix) -> f64 {
        self.z
            .iter()
            .zip(&self.y)
            .enumerate()
            .map(|(m, (z, y))| hinge_value(&z.matvec(&s.col(m)), y))
            .sum()
    }

    pub(crate) fn value_grad(&self, s: &Matrix) -> (f64, Matrix) {
        let mut grad = Matrix::zeros(s.rows(), s.cols());
        let mut value = 0.0;
        for (m, (z, y)) in self.z.iter().zip(&self.y).enumerate() {
            let (v, r) = hinge_residual(&z.matvec(&s.col(m)), y);
            value += v;
            grad.set_col(m, &z.t_matvec(&r));
        }
        (value, grad)
    }

    /// Per-task Lipschitz bound `max_m ‖Z_m‖₂²` of the gradient.
    pub(crate) fn lipschitz(&self) -> f64 {
        let mut seen: Vec<*const Matrix> = Vec::new();
        let mut best = 0.0f64;
        for z in &self.z {
            let key = std::sync::Arc::as_ptr(z);
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            best = best.max(crate::linalg::spectral_norm_sq_bound(z));
        }
        best
    }
}

/// Squared spectral norm bound of every distinct task feature matrix.
pub(crate) fn feature_norms(dataset: &Dataset) -> Vec<f64> {
    let mut cache: Vec<(*const Matrix, f64)> = Vec::new();
    dataset
        .tasks
        .iter()
        .map(|t| {
            let key = std::sync::Arc::as_ptr(&t.x);
            if let Some((_, v)) = cache.iter().find(|(k, _)| *k == key) {
                *v
            } else {
                let v = crate::linalg::spectral_norm_sq_bound(&t.x);
                cache.push((key, v));
                v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;

    fn single(x: Vec<Vec<f64>>, y: Vec<f64>) -> TaskData {
        TaskData::new("t", Matrix::from_rows(&x).unwrap(), y)
    }

    #[test]
    fn zero_weights_give_unit_margins() {
        let t = single(vec![vec![1.0, 2.0]; 4], vec![1.0, -1.0, 1.0, 1.0]);
        assert_eq!(sqhinge_task_value(&[0.0, 0.0], &t).unwrap(), 2.0);
    }

    #[test]
    fn satisfied_and_violated_margins() {
        let t = single(vec![vec![1.0, 0.0]], vec![1.0]);
        assert_eq!(sqhinge_task_value(&[2.0, 0.0], &t).unwrap(), 0.0);
        let t = single(vec![vec![1.0, 0.0]], vec![-1.0]);
        assert_eq!(sqhinge_task_value(&[1.0, 0.0], &t).unwrap(), 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let t = single(vec![vec![1.0, 0.0]], vec![1.0]);
        assert!(sqhinge_task_value(&[1.0], &t).is_err());
    }

    fn two_task_dataset() -> Dataset {
        Dataset::new(vec![
            TaskData::new(
                "a",
                Matrix::from_rows(&[vec![1.0, 2.0, 0.0]]).unwrap(),
                vec![1.0],
            ),
            TaskData::new(
                "b",
                Matrix::from_rows(&[vec![0.0, -1.0, 3.0]]).unwrap(),
                vec![-1.0],
            ),
        ])
        .unwrap()
    }

    #[test]
    fn zero_model_total_is_half_sample_count() {
        let ds = two_task_dataset();
        let model = LatentModel::new(
            Matrix::zeros(3, 2),
            Matrix::from_fn(2, 2, |r, c| (r + 2 * c) as f64 + 0.5),
            ds.names(),
        )
        .unwrap();
        assert_eq!(sqhinge_total(&model, &ds).unwrap(), 1.0);
        // S = 0 makes the L-gradient vanish even though every margin is violated
        let model = LatentModel::new(
            Matrix::identity(3).select_cols(&[0, 1]),
            Matrix::zeros(2, 2),
            ds.names(),
        )
        .unwrap();
        assert_eq!(sqhinge_grad_l(&model, &ds).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn identity_latent_gradient_at_origin_is_minus_yx() {
        let ds = two_task_dataset();
        let model = LatentModel::new(Matrix::identity(3), Matrix::zeros(3, 2), ds.names()).unwrap();
        let g = sqhinge_grad_s(&model, &ds).unwrap();
        assert_eq!(g.col(0), vec![-1.0, -2.0, 0.0]);
        assert_eq!(g.col(1), vec![0.0, -1.0, 3.0]);
    }

    #[test]
    fn satisfied_margins_give_zero_gradient() {
        let ds = two_task_dataset();
        let s = Matrix::from_rows(&[vec![5.0, 0.0], vec![0.0, 0.0], vec![0.0, -5.0]]).unwrap();
        let model = LatentModel::new(Matrix::identity(3), s, ds.names()).unwrap();
        assert_eq!(sqhinge_total(&model, &ds).unwrap(), 0.0);
        assert_eq!(sqhinge_grad_s(&model, &ds).unwrap().max_abs(), 0.0);
        assert_eq!(sqhinge_grad_l(&model, &ds).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn single_task_identity_reduces_to_task_loss() {
        let t = single(
            vec![vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.7, 0.1]],
            vec![1.0, -1.0, 1.0],
        );
        let ds = Dataset::new(vec![t.clone()]).unwrap();
        let s = Matrix::column(&[0.4, -0.2]).unwrap();
        let model = LatentModel::new(Matrix::identity(2), s.clone(), ds.names()).unwrap();
        assert_eq!(
            sqhinge_total(&model, &ds).unwrap(),
            sqhinge_task_value(&s.col(0), &t).unwrap()
        );
        // K = 1, s = 1: the L gradient is the w gradient
        let w = vec![0.4, -0.2];
        let model =
            LatentModel::new(Matrix::column(&w).unwrap(), Matrix::identity(1), ds.names()).unwrap();
        let gl = sqhinge_grad_l(&model, &ds).unwrap();
        let (_, gw) = sqhinge_task_grad(&w, &t).unwrap();
        assert_eq!(gl.col(0), gw);
    }

    #[test]
    fn projection_matches_direct_path() {
        let ds = two_task_dataset();
        let l = Matrix::from_fn(3, 2, |r, c| 0.3 * r as f64 - 0.2 * c as f64 + 0.1);
        let s = Matrix::from_fn(2, 2, |r, c| 0.5 - r as f64 + 0.25 * c as f64);
        let proj = LatentProjection::new(&l, &ds);
        let model = LatentModel::new(l, s.clone(), ds.names()).unwrap();
        let (v, g) = proj.value_grad(&s);
        assert!((v - sqhinge_total(&model, &ds).unwrap()).abs() < 1e-12);
        assert!(g.sub(&sqhinge_grad_s(&model, &ds).unwrap()).max_abs() < 1e-12);
    }
}
