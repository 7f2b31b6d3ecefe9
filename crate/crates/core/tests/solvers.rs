mod common;

use mtl_core::optim::{
    l1_subgradient, solve_l_apg, solve_s_exact, solve_s_spg, subgradient_oracle, CompositeProblem,
    ExactCombination, LatentStep, SolverOpts,
};
use mtl_core::regularizers::GroupNorm;
use mtl_core::{GroupWeighting, LatentModel, Matrix};

struct Instance {
    ds: mtl_core::Dataset,
    partition: mtl_core::GroupPartition,
    l: Matrix,
    s: Matrix,
}

fn instance(seed: u64) -> Instance {
    let mut rng = common::rng(seed);
    let ds = common::dataset(&mut rng, 6, 4, 20);
    Instance {
        partition: common::round_robin(4, 2),
        l: common::gaussian(&mut rng, 6, 3, 0.5),
        s: common::gaussian(&mut rng, 3, 4, 0.5),
        ds,
    }
}

#[test]
fn latent_step_matches_subgradient_reference() {
    let (gamma, lambda) = (0.3, 0.4);
    for seed in 0..5 {
        let inst = instance(seed);
        let (l, trace) = solve_l_apg(
            &inst.l,
            &inst.s,
            &inst.ds,
            gamma,
            lambda,
            &SolverOpts::new(5000, 1e-12),
        )
        .unwrap();
        let problem = LatentStep::new(&inst.ds, &inst.s, gamma, lambda);
        let apg = problem.objective(&l);
        assert_eq!(apg, trace.final_objective());

        let lip = problem.lipschitz_hint().unwrap();
        let (_, reference) = subgradient_oracle(
            |x| problem.objective(x),
            |x| {
                let (_, mut g) = problem.smooth_value_grad(x);
                g.axpy(1.0, &l1_subgradient(x, gamma));
                g
            },
            inst.l.clone(),
            100_000,
            |t| 1.0 / (lip * (1.0 + t as f64 / 100.0).sqrt()),
        );
        let rel = (apg - reference).abs() / reference;
        assert!(
            rel <= 1e-3,
            "seed {seed}: accelerated {apg} vs reference {reference}"
        );
        assert!(
            apg <= reference * (1.0 + 1e-9),
            "reference should not beat the solver"
        );
    }
}

#[test]
fn smoothed_step_matches_exact_step() {
    let mu = 0.5;
    for seed in 0..5 {
        let inst = instance(10 + seed);
        let norm = GroupNorm::new(&inst.partition, GroupWeighting::Unweighted);
        let exact_problem = ExactCombination::new(&inst.l, &inst.ds, &norm, mu);
        let (s_exact, _) = solve_s_exact(
            &inst.l,
            &inst.s,
            &inst.ds,
            &norm,
            mu,
            &SolverOpts::new(20_000, 1e-14),
        )
        .unwrap();
        let exact = exact_problem.objective(&s_exact);
        assert!(exact_problem.optimality_residual(&s_exact) < 1e-5);
        for nu in [1e-2, 1e-3, 1e-4] {
            let (s_smooth, _) = solve_s_spg(
                &inst.l,
                &inst.s,
                &inst.ds,
                &norm,
                mu,
                nu,
                &SolverOpts::new(20_000, 1e-14),
            )
            .unwrap();
            let smooth = exact_problem.objective(&s_smooth);
            let slack = (1e-3 * exact).max(mu * norm.smoothing_gap_bound(3, nu));
            assert!(
                smooth - exact <= slack,
                "seed {seed} nu {nu}: {smooth} vs {exact}"
            );
            assert!(
                smooth >= exact - 1e-7 * exact,
                "exact solver should be optimal"
            );
        }
    }
}

#[test]
fn exact_step_zeroes_blocks_with_weak_gradient() {
    let inst = instance(42);
    let norm = GroupNorm::new(&inst.partition, GroupWeighting::Unweighted);
    let model = LatentModel::new(inst.l.clone(), Matrix::zeros(3, 4), inst.ds.names()).unwrap();
    let g0 = mtl_core::loss::sqhinge_grad_s(&model, &inst.ds).unwrap();
    // above the largest block gradient norm the origin is optimal
    let mut mu = 0.0f64;
    for k in 0..3 {
        for g in inst.partition.groups() {
            let n: f64 = g
                .members
                .iter()
                .map(|&m| g0.get(k, m).powi(2))
                .sum::<f64>()
                .sqrt();
            mu = mu.max(n);
        }
    }
    let (s, _) = solve_s_exact(
        &inst.l,
        &inst.s,
        &inst.ds,
        &norm,
        mu * 1.01,
        &SolverOpts::new(5000, 1e-12),
    )
    .unwrap();
    assert_eq!(s.max_abs(), 0.0);
    let (s, _) = solve_s_exact(
        &inst.l,
        &inst.s,
        &inst.ds,
        &norm,
        mu * 0.5,
        &SolverOpts::new(5000, 1e-12),
    )
    .unwrap();
    assert!(s.max_abs() > 0.0);
}
