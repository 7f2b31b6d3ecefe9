//! K-fold model selection for the latent model and the lasso baseline.
//!
//! Folds are stratified per task by label and seeded per task name, so a
//! task's split does not depend on which other tasks are present.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::train_single_lasso;
use crate::error::{Error, Result};
use crate::eval::{accuracy, score_weights};
use crate::model::{compose_w, validate, Dataset, GroupPartition, Hyperparams, TaskData};
use crate::optim::SolverOpts;
use crate::trainer::{init_model, rng_for, train_from};

/// Fold index of every sample, per task.
pub type FoldAssignment = Vec<Vec<usize>>;

/// Per-task stratified assignment of samples to `folds` folds.
///
/// Positives and negatives are shuffled separately and dealt round-robin,
/// so each fold receives a near-equal share of both classes. A task with
/// fewer than `folds` samples of either class is split without
/// stratification.
pub fn stratified_folds(dataset: &Dataset, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    Ok(dataset
        .tasks
        .iter()
        .map(|t| task_folds(t, folds, seed))
        .collect())
}

fn task_folds(task: &TaskData, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, &format!("cv:task:{}", task.name));
    let mut pos: Vec<usize> = (0..task.len()).filter(|&i| task.y[i] > 0.0).collect();
    let mut neg: Vec<usize> = (0..task.len()).filter(|&i| task.y[i] <= 0.0).collect();
    let order: Vec<usize> = if pos.len() < folds || neg.len() < folds {
        log::warn!(
            "task '{}' has {} positive and {} negative samples; split without stratification",
            task.name,
            pos.len(),
            neg.len()
        );
        let mut all: Vec<usize> = (0..task.len()).collect();
        all.shuffle(&mut rng);
        all
    } else {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.into_iter().chain(neg).collect()
    };
    let mut assignment = vec![0; task.len()];
    for (slot, &i) in order.iter().enumerate() {
        assignment[i] = slot % folds;
    }
    assignment
}

/// Training and held-out datasets for one fold.
pub fn split_fold(
    dataset: &Dataset,
    assignment: &FoldAssignment,
    fold: usize,
) -> (Dataset, Dataset) {
    let mut train = Vec::with_capacity(dataset.num_tasks());
    let mut held = Vec::with_capacity(dataset.num_tasks());
    for (t, a) in dataset.tasks.iter().zip(assignment) {
        let (out, keep): (Vec<usize>, Vec<usize>) = (0..t.len()).partition(|&i| a[i] == fold);
        train.push(t.subset(&keep));
        held.push(t.subset(&out));
    }
    (
        Dataset {
            tasks: train,
            d: dataset.d,
        },
        Dataset {
            tasks: held,
            d: dataset.d,
        },
    )
}

/// Unweighted mean accuracy over tasks that have held-out samples.
fn held_out_accuracy(w: &crate::linalg::Matrix, held: &Dataset) -> Result<f64> {
    let scores = score_weights(w, held)?;
    let accs: Vec<f64> = scores
        .iter()
        .filter(|s| !s.labels.is_empty())
        .map(|s| accuracy(&s.scores, &s.labels))
        .collect();
    if accs.is_empty() {
        return Err(Error::Argument("fold has no held-out samples".into()));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvCell {
    pub mu: f64,
    pub gamma: f64,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub best_mu: f64,
    pub best_gamma: f64,
    pub table: Vec<CvCell>,
}

/// Highest mean score; ties go to larger `mu`, then larger `gamma`.
fn select(table: &[CvCell]) -> (f64, f64) {
    let best = table
        .iter()
        .reduce(|best, c| {
            let key = |c: &CvCell| (c.mean, c.mu, c.gamma);
            let (a, b) = (key(c), key(best));
            let better =
                a.0.total_cmp(&b.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(a.2.total_cmp(&b.2))
                    .is_gt();
            if better {
                c
            } else {
                best
            }
        })
        .expect("non-empty grid");
    (best.mu, best.gamma)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument(format!("{name} grid is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Argument(format!(
            "{name} grid value {v} must be finite and >= 0"
        )));
    }
    Ok(())
}

fn assemble(cells: &[(f64, f64)], folds: usize, scores: Vec<Result<f64>>) -> Result<Vec<CvCell>> {
    // scores are laid out fold-major
    let mut table: Vec<CvCell> = cells
        .iter()
        .map(|&(mu, gamma)| CvCell {
            mu,
            gamma,
            fold_scores: Vec::with_capacity(folds),
            mean: 0.0,
        })
        .collect();
    for (i, s) in scores.into_iter().enumerate() {
        table[i % cells.len()].fold_scores.push(s?);
    }
    for c in &mut table {
        c.mean = c.fold_scores.iter().sum::<f64>() / folds as f64;
    }
    Ok(table)
}

/// Grid search over `(mu, gamma)` for the latent model, scored by mean
/// held-out accuracy. Other hyperparameters are taken from `hp`. Work is
/// spread over `threads` workers; the result does not depend on the
/// thread count.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    dataset: &Dataset,
    partition: &GroupPartition,
    mu_grid: &[f64],
    gamma_grid: &[f64],
    folds: usize,
    hp: &Hyperparams,
    seed: u64,
    threads: usize,
) -> Result<CvResult> {
    check_grid("mu", mu_grid)?;
    check_grid("gamma", gamma_grid)?;
    hp.check()?;
    validate(dataset, partition).map_err(Error::Invalid)?;
    let assignment = stratified_folds(dataset, folds, seed)?;
    let cells: Vec<(f64, f64)> = mu_grid
        .iter()
        .flat_map(|&mu| gamma_grid.iter().map(move |&g| (mu, g)))
        .collect();
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| split_fold(dataset, &assignment, f))
        .collect();

    let scores = pool(threads)?.install(|| {
        let inits: Vec<Result<_>> = splits
            .par_iter()
            .map(|(train, _)| init_model(train, hp))
            .collect();
        let units: Vec<(usize, usize)> = (0..folds)
            .flat_map(|f| (0..cells.len()).map(move |c| (f, c)))
            .collect();
        units
            .par_iter()
            .map(|&(f, c)| {
                let (train, held) = &splits[f];
                let init = inits[f]
                    .as_ref()
                    .map_err(|e| Error::Argument(e.to_string()))?;
                let mut hp = hp.clone();
                (hp.mu, hp.gamma) = cells[c];
                let (model, _) = train_from(init.clone(), train, partition, &hp, |_| {})?;
                held_out_accuracy(&compose_w(&model), held)
            })
            .collect::<Vec<_>>()
    });
    let table = assemble(&cells, folds, scores)?;
    let (best_mu, best_gamma) = select(&table);
    Ok(CvResult {
        best_mu,
        best_gamma,
        table,
    })
}

/// Grid search over `gamma` for independent per-task lasso models. The
/// returned cells carry `mu = 0`.
pub fn cross_validate_lasso(
    dataset: &Dataset,
    gamma_grid: &[f64],
    folds: usize,
    opts: &SolverOpts,
    seed: u64,
    threads: usize,
) -> Result<CvResult> {
    check_grid("gamma", gamma_grid)?;
    let assignment = stratified_folds(dataset, folds, seed)?;
    let cells: Vec<(f64, f64)> = gamma_grid.iter().map(|&g| (0.0, g)).collect();
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| split_fold(dataset, &assignment, f))
        .collect();
    let scores = pool(threads)?.install(|| {
        let units: Vec<(usize, usize)> = (0..folds)
            .flat_map(|f| (0..cells.len()).map(move |c| (f, c)))
            .collect();
        units
            .par_iter()
            .map(|&(f, c)| {
                let (train, held) = &splits[f];
                let w = train_single_lasso(train, cells[c].1, opts)?;
                held_out_accuracy(&w, held)
            })
            .collect::<Vec<_>>()
    });
    let table = assemble(&cells, folds, scores)?;
    let (best_mu, best_gamma) = select(&table);
    Ok(CvResult {
        best_mu,
        best_gamma,
        table,
    })
}
