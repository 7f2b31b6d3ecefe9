//! Alternating minimisation of
//! `loss(L·S) + mu·Ω(S) + gamma·‖L‖₁ + lambda·‖L‖_F²`:
//! an `S` step with `L` fixed, then an `L` step with `S` fixed, repeated
//! until the objective stops moving.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::train_ridge;
use crate::error::{Error, Result};
use crate::linalg::{svd_thin, Matrix};
use crate::loss::{check_model, loss_for_weights};
use crate::model::{
    validate, Dataset, GroupPartition, Hyperparams, InitMode, LatentModel, ObjectiveTerms,
    OuterRecord, SStepSolver, TrainReport,
};
use crate::optim::{solve_l_apg, solve_s_exact, solve_s_spg_variant, SolverOpts};
use crate::regularizers::{l1_value, GroupNorm};

/// Stable per-purpose seed derived from the user seed and a tag.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then splitmix64 finalisation
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, tag))
}

fn gaussian(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    scale * z
}

pub(crate) fn terms_for(
    l: &Matrix,
    s: &Matrix,
    dataset: &Dataset,
    norm: &GroupNorm,
    hp: &Hyperparams,
) -> ObjectiveTerms {
    let loss = loss_for_weights(l, s, dataset);
    let omega = norm.value(s);
    let group = hp.mu
        * if hp.squared_penalty {
            omega * omega
        } else {
            omega
        };
    let l1 = hp.gamma * l1_value(l);
    let frobenius = hp.lambda * l.frobenius_sq();
    ObjectiveTerms {
        loss,
        group,
        l1,
        frobenius,
        total: loss + group + l1 + frobenius,
    }
}

/// Every term of the training objective at `model`.
pub fn objective(
    model: &LatentModel,
    dataset: &Dataset,
    partition: &GroupPartition,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms> {
    check_model(model, dataset)?;
    let norm = GroupNorm::new(partition, hp.group_weighting);
    norm.check(&model.s)?;
    Ok(terms_for(&model.l, &model.s, dataset, &norm, hp))
}

/// Initial factors from the SVD of a ridge warm start `W₀ = U·Σ·Vᵀ`.
///
/// `L₀` takes the first `K` columns of `U·Σ^{1/2}`; columns beyond the rank
/// of `W₀` are seeded Gaussian noise of scale `init_scale`. `S₀` is seeded
/// Gaussian noise per task (keyed by task name) or, in diagnostic mode,
/// `Σ^{1/2}·Vᵀ` so that `L₀·S₀ = W₀` whenever `K ≥ rank(W₀)`.
pub fn init_model(dataset: &Dataset, hp: &Hyperparams) -> Result<LatentModel> {
    let (d, m) = (dataset.d, dataset.num_tasks());
    let k = hp.latent_k.resolve(d, m);
    let w0 = train_ridge(dataset, hp.ridge_lambda)?;
    init_from_weights(&w0, k, dataset.names(), hp)
}

/// [`init_model`] from an explicit warm start `w0` (`D × M`).
pub fn init_from_weights(
    w0: &Matrix,
    k: usize,
    names: Vec<String>,
    hp: &Hyperparams,
) -> Result<LatentModel> {
    let (d, m) = w0.shape();
    if k == 0 || k > d {
        return Err(Error::Argument(format!(
            "latent dimension {k} must be in 1..={d}"
        )));
    }
    let svd = svd_thin(w0)?;
    let rank = svd.rank(1e-10);
    let used = rank.min(k);

    let mut l = Matrix::zeros(d, k);
    let mut pad = rng_for(hp.seed, "init:latent");
    for j in 0..k {
        if j < used {
            let root = svd.sigma[j].sqrt();
            for r in 0..d {
                l.set(r, j, svd.u.get(r, j) * root);
            }
        } else {
            for r in 0..d {
                l.set(r, j, gaussian(&mut pad, hp.init_scale));
            }
        }
    }

    let mut s = Matrix::zeros(k, m);
    match hp.init_mode {
        InitMode::Random => {
            for (t, name) in names.iter().enumerate() {
                let mut rng = rng_for(hp.seed, &format!("init:task:{name}"));
                for j in 0..k {
                    s.set(j, t, gaussian(&mut rng, hp.init_scale));
                }
            }
        }
        InitMode::Diagnostic => {
            for j in 0..used {
                let root = svd.sigma[j].sqrt();
                for t in 0..m {
                    s.set(j, t, root * svd.v.get(t, j));
                }
            }
        }
    }
    LatentModel::new(l, s, names)
}

/// Smoothing scale used when none is given: the smoothing gap
/// `mu·ν·K·Σw²/2` is held at `inner_tol/2` relative to the objective of the
/// zero model, `Σ_m N_m / 2`.
pub fn default_nu(dataset: &Dataset, norm: &GroupNorm, k: usize, hp: &Hyperparams) -> f64 {
    if hp.mu == 0.0 {
        return 1.0;
    }
    let scale = (dataset.total_samples() as f64 / 2.0).max(1.0);
    let unit_gap = norm.smoothing_gap_bound(k, 1.0);
    hp.inner_tol * scale / (2.0 * hp.mu * unit_gap)
}

/// Alternating minimisation from [`init_model`].
pub fn train(
    dataset: &Dataset,
    partition: &GroupPartition,
    hp: &Hyperparams,
) -> Result<(LatentModel, TrainReport)> {
    train_with(dataset, partition, hp, |_| {})
}

/// [`train`] reporting each finished outer iteration to `on_outer`.
///
/// A solver failure aborts training with [`Error::Aborted`], which carries
/// the report of the iterations completed so far.
pub fn train_with(
    dataset: &Dataset,
    partition: &GroupPartition,
    hp: &Hyperparams,
    on_outer: impl FnMut(&OuterRecord),
) -> Result<(LatentModel, TrainReport)> {
    hp.check()?;
    validate(dataset, partition).map_err(Error::Invalid)?;
    let init = init_model(dataset, hp)?;
    train_from(init, dataset, partition, hp, on_outer)
}

/// Alternating minimisation from an explicit starting model.
pub fn train_from(
    init: LatentModel,
    dataset: &Dataset,
    partition: &GroupPartition,
    hp: &Hyperparams,
    mut on_outer: impl FnMut(&OuterRecord),
) -> Result<(LatentModel, TrainReport)> {
    hp.check()?;
    validate(dataset, partition).map_err(Error::Invalid)?;
    check_model(&init, dataset)?;
    if hp.squared_penalty && hp.s_solver == SStepSolver::ExactProx {
        return Err(Error::Argument(
            "the exact-prox S step does not support the squared penalty".into(),
        ));
    }
    let start = Instant::now();
    let norm = GroupNorm::new(partition, hp.group_weighting);
    let k = init.k();
    let mut nu = hp.nu.unwrap_or_else(|| default_nu(dataset, &norm, k, hp));
    let opts = SolverOpts::new(hp.inner_max, hp.inner_tol);

    let LatentModel {
        mut l,
        mut s,
        names,
    } = init;
    let initial = terms_for(&l, &s, dataset, &norm, hp);
    let mut report = TrainReport {
        initial,
        outer: Vec::new(),
        polished: None,
        converged: false,
        wall_time: start.elapsed(),
    };
    let mut current = initial;

    let abort = |source: Error, mut report: TrainReport| {
        report.wall_time = start.elapsed();
        Error::Aborted {
            report: Box::new(report),
            source: Box::new(source),
        }
    };

    for index in 1..=hp.outer_max {
        let before = current.total;

        let step = match hp.s_solver {
            SStepSolver::Smoothed => {
                solve_s_spg_variant(&l, &s, dataset, &norm, hp.mu, nu, hp.squared_penalty, &opts)
            }
            SStepSolver::ExactProx => solve_s_exact(&l, &s, dataset, &norm, hp.mu, &opts),
        };
        let (s_new, s_trace) = match step {
            Ok(v) => v,
            Err(e) => return Err(abort(e, report)),
        };
        let cand = terms_for(&l, &s_new, dataset, &norm, hp);
        // the smoothed step may overshoot the true objective by the smoothing gap
        let s_accepted = cand.total <= current.total;
        if s_accepted {
            s = s_new;
            current = cand;
        }
        let after_s = current;

        let (l_new, l_trace) = match solve_l_apg(&l, &s, dataset, hp.gamma, hp.lambda, &opts) {
            Ok(v) => v,
            Err(e) => return Err(abort(e, report)),
        };
        l = l_new;
        current = terms_for(&l, &s, dataset, &norm, hp);

        let record = OuterRecord {
            index,
            after_s,
            after_l: current,
            s_iters: s_trace.iterations,
            l_iters: l_trace.iterations,
            s_accepted,
            nu,
        };
        log::debug!(
            "outer {index}: objective {:.10e} (S step {} iters, L step {} iters)",
            current.total,
            record.s_iters,
            record.l_iters
        );
        on_outer(&record);
        report.outer.push(record);

        let change = (before - current.total).abs();
        if change <= hp.outer_tol * current.total.abs() {
            report.converged = true;
            break;
        }
        if let Some(decay) = hp.nu_decay {
            nu *= decay;
        }
    }

    if hp.polish && hp.mu > 0.0 && !hp.squared_penalty && hp.s_solver == SStepSolver::Smoothed {
        let (s_new, _) = match solve_s_exact(&l, &s, dataset, &norm, hp.mu, &opts) {
            Ok(v) => v,
            Err(e) => return Err(abort(e, report)),
        };
        let cand = terms_for(&l, &s_new, dataset, &norm, hp);
        if cand.total <= current.total {
            s = s_new;
            current = cand;
        }
        report.polished = Some(current);
    }

    report.wall_time = start.elapsed();
    Ok((LatentModel::new(l, s, names)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatentK, TaskData};

    fn small_dataset(seed: u64) -> Dataset {
        let mut rng = rng_for(seed, "test");
        let tasks = (0..3)
            .map(|m| {
                let x = Matrix::from_fn(12, 4, |_, _| gaussian(&mut rng, 1.0));
                let y = (0..12)
                    .map(|i| {
                        if (x.get(i, m) + 0.3 * x.get(i, 3)) >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect();
                TaskData::new(format!("t{m}"), x, y)
            })
            .collect();
        Dataset::new(tasks).unwrap()
    }

    #[test]
    fn sub_seeds_differ_by_tag_and_seed() {
        assert_ne!(sub_seed(1, "a"), sub_seed(1, "b"));
        assert_ne!(sub_seed(1, "a"), sub_seed(2, "a"));
        assert_eq!(sub_seed(7, "x"), sub_seed(7, "x"));
    }

    #[test]
    fn zero_model_objective_is_half_sample_count() {
        let ds = small_dataset(1);
        let p = GroupPartition::singletons(3);
        let model = LatentModel::new(Matrix::zeros(4, 2), Matrix::zeros(2, 3), ds.names()).unwrap();
        let t = objective(&model, &ds, &p, &Hyperparams::default()).unwrap();
        assert_eq!(t.total, 18.0);
        assert_eq!(t.group + t.l1 + t.frobenius, 0.0);
    }

    #[test]
    fn unpenalised_objective_is_loss() {
        let ds = small_dataset(2);
        let p = GroupPartition::single(3);
        let hp = Hyperparams {
            mu: 0.0,
            gamma: 0.0,
            lambda: 0.0,
            ..Hyperparams::default()
        };
        let model = init_model(
            &ds,
            &Hyperparams {
                latent_k: LatentK::Fixed(3),
                ..hp.clone()
            },
        )
        .unwrap();
        let t = objective(&model, &ds, &p, &hp).unwrap();
        assert_eq!(t.total, crate::loss::sqhinge_total(&model, &ds).unwrap());
    }

    #[test]
    fn init_is_deterministic_and_sign_fixed() {
        let ds = small_dataset(3);
        let hp = Hyperparams {
            latent_k: LatentK::Fixed(4),
            ..Hyperparams::default()
        };
        let a = init_model(&ds, &hp).unwrap();
        let b = init_model(&ds, &hp).unwrap();
        assert_eq!(a, b);
        let c = init_model(&ds, &Hyperparams { seed: 43, ..hp }).unwrap();
        assert_ne!(a.s, c.s);
    }

    #[test]
    fn init_one_dimensional() {
        let x = Matrix::new(2, 1, vec![1.0, -2.0]).unwrap();
        let ds = Dataset::new(vec![TaskData::new("t", x, vec![-1.0, 1.0])]).unwrap();
        let hp = Hyperparams {
            latent_k: LatentK::Fixed(1),
            ..Hyperparams::default()
        };
        let w0 = train_ridge(&ds, hp.ridge_lambda).unwrap().get(0, 0);
        let model = init_model(&ds, &hp).unwrap();
        assert!(w0 < 0.0);
        assert!((model.l.get(0, 0) - w0.abs().sqrt()).abs() < 1e-14);
    }

    #[test]
    fn diagnostic_init_reconstructs_warm_start() {
        let ds = small_dataset(4);
        let hp = Hyperparams {
            latent_k: LatentK::Fixed(4),
            init_mode: InitMode::Diagnostic,
            ..Hyperparams::default()
        };
        let w0 = train_ridge(&ds, hp.ridge_lambda).unwrap();
        let model = init_model(&ds, &hp).unwrap();
        let err = crate::model::compose_w(&model).sub(&w0).frobenius();
        assert!(err <= 1e-8 * w0.frobenius(), "{err:e}");
    }

    #[test]
    fn init_rejects_oversized_k() {
        let w0 = Matrix::identity(3);
        let names = vec!["a".into(), "b".into(), "c".into()];
        assert!(init_from_weights(&w0, 4, names, &Hyperparams::default()).is_err());
    }

    #[test]
    fn default_nu_matches_gap_target() {
        let ds = small_dataset(5);
        let p = GroupPartition::single(3);
        let norm = GroupNorm::unweighted(&p);
        let hp = Hyperparams {
            mu: 0.5,
            inner_tol: 1e-4,
            ..Hyperparams::default()
        };
        let nu = default_nu(&ds, &norm, 4, &hp);
        let gap = hp.mu * norm.smoothing_gap_bound(4, nu);
        assert!((gap - 0.5 * hp.inner_tol * 18.0).abs() < 1e-12);
    }

    #[test]
    fn training_descends_and_reports() {
        let ds = small_dataset(6);
        let p = GroupPartition::new(
            vec![
                crate::model::Group {
                    name: "a".into(),
                    members: vec![0, 1],
                },
                crate::model::Group {
                    name: "b".into(),
                    members: vec![2],
                },
            ],
            3,
        )
        .unwrap();
        let hp = Hyperparams {
            mu: 0.2,
            gamma: 0.05,
            latent_k: LatentK::Fixed(3),
            outer_max: 10,
            ..Hyperparams::default()
        };
        let mut seen = 0;
        let (model, report) = train_with(&ds, &p, &hp, |_| seen += 1).unwrap();
        assert_eq!(seen, report.outer.len());
        let mut prev = report.initial.total;
        for r in &report.outer {
            assert!(r.after_s.total <= prev);
            assert!(r.after_l.total <= r.after_s.total);
            prev = r.after_l.total;
        }
        let t = objective(&model, &ds, &p, &hp).unwrap();
        assert!((t.total - report.final_objective()).abs() <= 1e-12 * t.total);
    }

    #[test]
    fn squared_penalty_requires_smoothed_solver() {
        let ds = small_dataset(7);
        let hp = Hyperparams {
            squared_penalty: true,
            s_solver: SStepSolver::ExactProx,
            latent_k: LatentK::Fixed(2),
            ..Hyperparams::default()
        };
        assert!(train(&ds, &GroupPartition::single(3), &hp).is_err());
        let hp = Hyperparams {
            s_solver: SStepSolver::Smoothed,
            outer_max: 3,
            ..hp
        };
        let (_, report) = train(&ds, &GroupPartition::single(3), &hp).unwrap();
        assert!(report.final_objective() <= report.initial.total);
    }

    #[test]
    fn zero_features_converge_to_zero_latent() {
        let tasks = (0..2)
            .map(|m| {
                TaskData::new(
                    format!("t{m}"),
                    Matrix::zeros(5, 3),
                    vec![1.0, -1.0, 1.0, 1.0, -1.0],
                )
            })
            .collect();
        let ds = Dataset::new(tasks).unwrap();
        let hp = Hyperparams {
            latent_k: LatentK::Fixed(2),
            ..Hyperparams::default()
        };
        let (model, report) = train(&ds, &GroupPartition::single(2), &hp).unwrap();
        assert_eq!(report.outer[0].after_l.loss, 5.0);
        assert!(
            report.converged && report.outer.len() <= 2,
            "{} iterations",
            report.outer.len()
        );
        assert_eq!(model.l.max_abs(), 0.0);
        assert_eq!(report.final_objective(), 5.0);
    }
}
