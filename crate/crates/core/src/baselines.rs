//! Comparison models trained directly on `W` (no latent factorisation):
//! independent per-task lasso, L21 all-sharing and ridge regression.
//! They reuse the loss and solver kernels of the latent model so that
//! comparisons isolate the penalty.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Cholesky, Matrix};
use crate::loss::{self, map_tasks, sqhinge_task_grad};
use crate::model::{Dataset, GroupPartition, TaskData};
use crate::optim::{fista, FnProblem, SolverOpts, SolverTrace};
use crate::regularizers::{l1_value, prox_l1, GroupNorm};

const MAX_CONDITION: f64 = 1e12;
const RIDGE_RESIDUAL_TOL: f64 = 1e-8;

/// Lasso on one task pool: squared hinge + `gamma·‖w‖₁`, from `w = 0`.
pub fn train_task_lasso(
    task: &TaskData,
    gamma: f64,
    opts: &SolverOpts,
) -> Result<(Vec<f64>, SolverTrace)> {
    let d = task.x.cols();
    let lipschitz = crate::linalg::spectral_norm_sq_bound(&task.x);
    let problem = FnProblem {
        smooth: |w: &Matrix| {
            let (v, g) = sqhinge_task_grad(w.as_slice(), task).expect("dimensions checked");
            (v, Matrix::new(d, 1, g).expect("finite gradient"))
        },
        penalty: |w: &Matrix| gamma * l1_value(w),
        prox: |v: &Matrix, t: f64| prox_l1(v, t * gamma),
        lipschitz: Some(lipschitz),
    };
    let (w, trace) = fista(&problem, Matrix::zeros(d, 1), opts)?;
    Ok((w.into_vec(), trace))
}

/// One independent lasso per task; column `m` of the result is task `m`.
pub fn train_single_lasso(dataset: &Dataset, gamma: f64, opts: &SolverOpts) -> Result<Matrix> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Argument(format!("gamma must be >= 0, got {gamma}")));
    }
    let columns = map_tasks(dataset, |_, t| {
        train_task_lasso(t, gamma, opts)
            .map(|(w, _)| w)
            .map_err(|e| Error::Task {
                task: t.name.clone(),
                source: Box::new(e),
            })
    });
    let mut w = Matrix::zeros(dataset.d, dataset.num_tasks());
    for (m, col) in columns.into_iter().enumerate() {
        w.set_col(m, &col?);
    }
    Ok(w)
}

/// Joint model with `mu·Σ_d ‖row_d(W)‖₂`: every feature row forms one block
/// shared by all tasks.
pub fn train_l21_all(
    dataset: &Dataset,
    mu: f64,
    opts: &SolverOpts,
) -> Result<(Matrix, SolverTrace)> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::Argument(format!("mu must be >= 0, got {mu}")));
    }
    let m = dataset.num_tasks();
    let rows = GroupNorm::unweighted(&GroupPartition::single(m));
    let lipschitz = loss::feature_norms(dataset).into_iter().fold(0.0, f64::max);
    let ident = Matrix::identity(dataset.d);
    let problem = FnProblem {
        smooth: |w: &Matrix| {
            let parts = loss::weight_gradients(&ident, w, dataset);
            let mut grad = Matrix::zeros(w.rows(), w.cols());
            let mut value = 0.0;
            for (j, (v, g)) in parts.into_iter().enumerate() {
                value += v;
                grad.set_col(j, &g);
            }
            (value, grad)
        },
        penalty: |w: &Matrix| mu * rows.value(w),
        prox: |v: &Matrix, t: f64| rows.prox(v, t * mu),
        lipschitz: Some(lipschitz),
    };
    fista(&problem, Matrix::zeros(dataset.d, m), opts)
}

/// Ridge regression on ±1 targets, per task:
/// `w = (X_mᵀX_m + lambda_r·I)⁻¹ X_mᵀ y_m`.
///
/// Solved in the primal when `N_m ≥ D` and through the `N_m × N_m` dual
/// system otherwise. Tasks sharing a feature matrix share one
/// factorisation.
pub fn train_ridge(dataset: &Dataset, lambda_r: f64) -> Result<Matrix> {
    if !(lambda_r > 0.0 && lambda_r.is_finite()) {
        return Err(Error::Argument(format!(
            "ridge lambda must be > 0, got {lambda_r}"
        )));
    }
    let mut w = Matrix::zeros(dataset.d, dataset.num_tasks());
    let mut cache: Vec<(*const Matrix, Arc<Cholesky>)> = Vec::new();
    for (m, task) in dataset.tasks.iter().enumerate() {
        let col = ridge_task(task, lambda_r, &mut cache).map_err(|e| match e {
            Error::IllConditioned { condition, .. } => Error::IllConditioned {
                task: task.name.clone(),
                condition,
            },
            other => Error::Task {
                task: task.name.clone(),
                source: Box::new(other),
            },
        })?;
        w.set_col(m, &col);
    }
    Ok(w)
}

fn ridge_task(
    task: &TaskData,
    lambda_r: f64,
    cache: &mut Vec<(*const Matrix, Arc<Cholesky>)>,
) -> Result<Vec<f64>> {
    let x = &task.x;
    let (n, d) = x.shape();
    if n == 0 {
        return Ok(vec![0.0; d]);
    }
    let primal = n >= d;
    let key = Arc::as_ptr(x);
    let chol = match cache.iter().find(|(k, _)| *k == key) {
        Some((_, c)) => Arc::clone(c),
        None => {
            let mut gram = if primal {
                x.t_matmul(x)
            } else {
                x.matmul(&x.transpose())
            };
            for i in 0..gram.rows() {
                gram.set(i, i, gram.get(i, i) + lambda_r);
            }
            let c = Cholesky::factor(&gram).ok_or(Error::IllConditioned {
                task: String::new(),
                condition: f64::INFINITY,
            })?;
            let cond = c.condition_estimate();
            if cond > MAX_CONDITION {
                return Err(Error::IllConditioned {
                    task: String::new(),
                    condition: cond,
                });
            }
            let c = Arc::new(c);
            cache.push((key, Arc::clone(&c)));
            c
        }
    };

    let xty = x.t_matvec(&task.y);
    // normal-equation residual (XᵀX + λI)w − Xᵀy
    let residual = |w: &[f64]| -> Vec<f64> {
        let xw = x.matvec(w);
        let mut r = x.t_matvec(&xw);
        for ((ri, &wi), &bi) in r.iter_mut().zip(w).zip(&xty) {
            *ri += lambda_r * wi - bi;
        }
        r
    };
    let solve = |rhs_w: &[f64]| -> Vec<f64> {
        if primal {
            chol.solve(rhs_w)
        } else {
            // Woodbury: (XᵀX + λI)⁻¹b = (b − Xᵀ(XXᵀ + λI)⁻¹Xb)/λ
            let xb = x.matvec(rhs_w);
            let alpha = chol.solve(&xb);
            let xta = x.t_matvec(&alpha);
            rhs_w
                .iter()
                .zip(&xta)
                .map(|(b, v)| (b - v) / lambda_r)
                .collect()
        }
    };

    let mut w = solve(&xty);
    let scale = norm2(&xty).max(1.0);
    let mut r = residual(&w);
    if norm2(&r) > RIDGE_RESIDUAL_TOL * scale {
        // one step of iterative refinement
        let corr = solve(&r);
        for (wi, ci) in w.iter_mut().zip(&corr) {
            *wi -= ci;
        }
        r = residual(&w);
    }
    let rn = norm2(&r);
    if rn > RIDGE_RESIDUAL_TOL * scale || !rn.is_finite() {
        return Err(Error::IllConditioned {
            task: String::new(),
            condition: rn / scale / f64::EPSILON,
        });
    }
    debug_assert!(dot(&w, &w).is_finite());
    Ok(w)
}
