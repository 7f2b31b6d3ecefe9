//! Accelerated proximal solvers for the two subproblems of alternating
//! training, plus slow reference solvers used to check them.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{self, LatentProjection};
use crate::model::Dataset;
use crate::regularizers::{l1_value, prox_l1, GroupNorm};

const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone)]
pub struct SolverOpts {
    pub max_iter: usize,
    /// Relative objective change, measured over `window` iterations.
    pub tol: f64,
    /// Starting step; `None` uses the problem's Lipschitz estimate.
    pub initial_step: Option<f64>,
    /// Step shrink factor on a failed sufficient-decrease test.
    pub backtrack: f64,
    /// Reject steps that raise the objective and restart momentum.
    pub monotone: bool,
    pub window: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            initial_step: None,
            backtrack: 0.5,
            monotone: true,
            window: 3,
        }
    }
}

impl SolverOpts {
    pub fn new(max_iter: usize, tol: f64) -> Self {
        Self {
            max_iter,
            tol,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Argument("tol must be > 0".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Argument("backtrack factor must be in (0, 1)".into()));
        }
        if let Some(step) = self.initial_step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Argument("initial step must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    /// Composite objective at `x0` followed by one entry per iteration.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_step: f64,
    pub backtracks: usize,
    /// Iterations whose candidate was rejected by the monotone safeguard.
    pub restarts: usize,
}

impl SolverTrace {
    pub fn final_objective(&self) -> f64 {
        *self
            .objectives
            .last()
            .expect("trace always holds the initial objective")
    }
}

/// Composite objective `f(x) + g(x)` with smooth `f` and prox-friendly `g`.
pub trait CompositeProblem {
    fn smooth_value(&self, x: &Matrix) -> f64 {
        self.smooth_value_grad(x).0
    }
    fn smooth_value_grad(&self, x: &Matrix) -> (f64, Matrix);
    fn penalty(&self, x: &Matrix) -> f64;
    /// `argmin_z ½‖z − v‖² + step·g(z)`.
    fn prox(&self, v: &Matrix, step: f64) -> Matrix;
    /// Upper bound on the Lipschitz constant of `∇f`, when known.
    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }

    fn objective(&self, x: &Matrix) -> f64 {
        self.smooth_value(x) + self.penalty(x)
    }
}

/// Adapter turning closures into a [`CompositeProblem`].
pub struct FnProblem<F, G, P> {
    pub smooth: F,
    pub penalty: G,
    pub prox: P,
    pub lipschitz: Option<f64>,
}

impl<F, G, P> CompositeProblem for FnProblem<F, G, P>
where
    F: Fn(&Matrix) -> (f64, Matrix),
    G: Fn(&Matrix) -> f64,
    P: Fn(&Matrix, f64) -> Matrix,
{
    fn smooth_value_grad(&self, x: &Matrix) -> (f64, Matrix) {
        (self.smooth)(x)
    }
    fn penalty(&self, x: &Matrix) -> f64 {
        (self.penalty)(x)
    }
    fn prox(&self, v: &Matrix, step: f64) -> Matrix {
        (self.prox)(v, step)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// Monotone FISTA with backtracking.
///
/// Each iteration takes a proximal gradient step from the extrapolated
/// point `y`, halving the step until
/// `f(x⁺) ≤ f(y) + ⟨∇f(y), x⁺ − y⟩ + ‖x⁺ − y‖²/(2t)` holds. With
/// `opts.monotone`, a candidate that raises the composite objective is
/// discarded and momentum restarts from the current iterate, so the
/// recorded objective sequence never increases.
pub fn fista<P: CompositeProblem + ?Sized>(
    problem: &P,
    x0: Matrix,
    opts: &SolverOpts,
) -> Result<(Matrix, SolverTrace)> {
    opts.check()?;
    let mut step = opts
        .initial_step
        .unwrap_or_else(|| match problem.lipschitz_hint() {
            Some(l) if l > 0.0 && l.is_finite() => 1.0 / l,
            _ => 1.0,
        });
    let mut x = x0;
    let mut f_x = problem.objective(&x);
    if !f_x.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut trace = SolverTrace {
        objectives: vec![f_x],
        ..SolverTrace::default()
    };

    for iter in 1..=opts.max_iter {
        let (f_y, g_y) = problem.smooth_value_grad(&y);
        let slack = 8.0 * f64::EPSILON * f_y.abs().max(1.0);
        let mut backtracks = 0;
        let (z, f_z_smooth) = loop {
            let mut v = y.clone();
            v.axpy(-step, &g_y);
            let z = problem.prox(&v, step);
            let d = z.sub(&y);
            let f_z = problem.smooth_value(&z);
            let bound = f_y + g_y.dot(&d) + d.frobenius_sq() / (2.0 * step);
            if f_z <= bound + slack {
                break (z, f_z);
            }
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                return Err(Error::StepUnderflow {
                    backtracks,
                    objective: f_x,
                });
            }
            step *= opts.backtrack;
        };
        trace.backtracks += backtracks;
        let f_z = f_z_smooth + problem.penalty(&z);
        if !f_z.is_finite() {
            return Err(Error::Diverged { iteration: iter });
        }

        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        if !opts.monotone || f_z <= f_x {
            let beta = (theta - 1.0) / theta_next;
            let mut y_next = z.clone();
            y_next.axpy(beta, &z.sub(&x));
            y = y_next;
            x = z;
            f_x = f_z;
            theta = theta_next;
        } else {
            trace.restarts += 1;
            y = x.clone();
            theta = 1.0;
        }
        trace.objectives.push(f_x);
        trace.iterations = iter;

        let n = trace.objectives.len();
        if n > opts.window {
            let old = trace.objectives[n - 1 - opts.window];
            if (old - f_x).abs() <= opts.tol * f_x.abs() {
                trace.converged = true;
                break;
            }
        }
    }
    trace.final_step = step;
    Ok((x, trace))
}

/// Smooth part of the `L` subproblem: data loss plus `lambda·‖L‖_F²`, with
/// `gamma·‖L‖₁` handled by the prox.
pub struct LatentStep<'a> {
    dataset: &'a Dataset,
    s: &'a Matrix,
    gamma: f64,
    lambda: f64,
    lipschitz: f64,
}

impl<'a> LatentStep<'a> {
    pub fn new(dataset: &'a Dataset, s: &'a Matrix, gamma: f64, lambda: f64) -> Self {
        let norms = loss::feature_norms(dataset);
        let data_term: f64 = norms
            .iter()
            .enumerate()
            .map(|(m, n)| {
                let col = s.col(m);
                n * crate::linalg::dot(&col, &col)
            })
            .sum();
        Self {
            dataset,
            s,
            gamma,
            lambda,
            lipschitz: data_term + 2.0 * lambda,
        }
    }
}

impl CompositeProblem for LatentStep<'_> {
    fn smooth_value(&self, l: &Matrix) -> f64 {
        loss::loss_for_weights(l, self.s, self.dataset) + self.lambda * l.frobenius_sq()
    }
    fn smooth_value_grad(&self, l: &Matrix) -> (f64, Matrix) {
        let (value, mut grad) = loss::loss_and_grad_l(l, self.s, self.dataset);
        grad.axpy(2.0 * self.lambda, l);
        (value + self.lambda * l.frobenius_sq(), grad)
    }
    fn penalty(&self, l: &Matrix) -> f64 {
        self.gamma * l1_value(l)
    }
    fn prox(&self, v: &Matrix, step: f64) -> Matrix {
        prox_l1(v, step * self.gamma)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

fn check_factor_dims(l: &Matrix, s: &Matrix, dataset: &Dataset) -> Result<()> {
    if l.rows() != dataset.d {
        return Err(Error::Dimension {
            context: "latent matrix rows",
            expected: dataset.d,
            found: l.rows(),
        });
    }
    if s.rows() != l.cols() {
        return Err(Error::Dimension {
            context: "combination matrix rows",
            expected: l.cols(),
            found: s.rows(),
        });
    }
    if s.cols() != dataset.num_tasks() {
        return Err(Error::Dimension {
            context: "combination matrix columns",
            expected: dataset.num_tasks(),
            found: s.cols(),
        });
    }
    Ok(())
}

/// Minimises `loss(L·S) + gamma·‖L‖₁ + lambda·‖L‖_F²` over `L` with `S`
/// fixed, starting from `l0`.
pub fn solve_l_apg(
    l0: &Matrix,
    s_fixed: &Matrix,
    dataset: &Dataset,
    gamma: f64,
    lambda: f64,
    opts: &SolverOpts,
) -> Result<(Matrix, SolverTrace)> {
    check_factor_dims(l0, s_fixed, dataset)?;
    if !s_fixed.is_finite() || !l0.is_finite() {
        return Err(Error::Argument(
            "non-finite factor passed to the L step".into(),
        ));
    }
    let problem = LatentStep::new(dataset, s_fixed, gamma, lambda);
    fista(&problem, l0.clone(), opts)
}

/// The `S` subproblem with the group penalty replaced by its smoothed
/// surrogate, solved by accelerated gradient descent.
pub struct SmoothedCombination<'a> {
    proj: LatentProjection,
    norm: &'a GroupNorm,
    mu: f64,
    nu: f64,
    squared: bool,
    lipschitz: f64,
}

impl<'a> SmoothedCombination<'a> {
    pub fn new(
        l: &Matrix,
        dataset: &Dataset,
        norm: &'a GroupNorm,
        mu: f64,
        nu: f64,
        squared: bool,
    ) -> Self {
        let proj = LatentProjection::new(l, dataset);
        let lipschitz = proj.lipschitz() + mu / nu;
        Self {
            proj,
            norm,
            mu,
            nu,
            squared,
            lipschitz,
        }
    }

    /// True (unsmoothed) subproblem objective.
    pub fn exact_objective(&self, s: &Matrix) -> f64 {
        let omega = self.norm.value(s);
        let pen = if self.squared { omega * omega } else { omega };
        self.proj.value(s) + self.mu * pen
    }
}

impl CompositeProblem for SmoothedCombination<'_> {
    fn smooth_value(&self, s: &Matrix) -> f64 {
        if self.mu == 0.0 {
            return self.proj.value(s);
        }
        let sm = self.norm.smooth(s, self.nu);
        let pen = if self.squared {
            sm.value * sm.value
        } else {
            sm.value
        };
        self.proj.value(s) + self.mu * pen
    }
    fn smooth_value_grad(&self, s: &Matrix) -> (f64, Matrix) {
        let (value, mut grad) = self.proj.value_grad(s);
        if self.mu == 0.0 {
            return (value, grad);
        }
        let sm = self.norm.smooth(s, self.nu);
        if self.squared {
            grad.axpy(2.0 * self.mu * sm.value, &sm.gradient);
            (value + self.mu * sm.value * sm.value, grad)
        } else {
            grad.axpy(self.mu, &sm.gradient);
            (value + self.mu * sm.value, grad)
        }
    }
    fn penalty(&self, _: &Matrix) -> f64 {
        0.0
    }
    fn prox(&self, v: &Matrix, _: f64) -> Matrix {
        v.clone()
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

/// Minimises the smoothed `S` subproblem
/// `loss(L·S) + mu·Ω_ν(S)` from `s0` with `L` fixed.
///
/// The true objective of the result exceeds the exact minimum by at most
/// the optimisation error plus `mu·norm.smoothing_gap_bound(K, nu)`.
pub fn solve_s_spg(
    l_fixed: &Matrix,
    s0: &Matrix,
    dataset: &Dataset,
    norm: &GroupNorm,
    mu: f64,
    nu: f64,
    opts: &SolverOpts,
) -> Result<(Matrix, SolverTrace)> {
    solve_s_spg_variant(l_fixed, s0, dataset, norm, mu, nu, false, opts)
}

/// [`solve_s_spg`] with an optional squared penalty `mu·Ω_ν(S)²`.
#[allow(clippy::too_many_arguments)]
pub fn solve_s_spg_variant(
    l_fixed: &Matrix,
    s0: &Matrix,
    dataset: &Dataset,
    norm: &GroupNorm,
    mu: f64,
    nu: f64,
    squared: bool,
    opts: &SolverOpts,
) -> Result<(Matrix, SolverTrace)> {
    check_factor_dims(l_fixed, s0, dataset)?;
    norm.check(s0)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Argument(format!(
            "smoothing scale must be > 0, got {nu}"
        )));
    }
    if !l_fixed.is_finite() || !s0.is_finite() {
        return Err(Error::Argument(
            "non-finite factor passed to the S step".into(),
        ));
    }
    let problem = SmoothedCombination::new(l_fixed, dataset, norm, mu, nu, squared);
    fista(&problem, s0.clone(), opts)
}

/// The `S` subproblem with the exact group penalty, handled by its
/// closed-form block prox.
pub struct ExactCombination<'a> {
    proj: LatentProjection,
    norm: &'a GroupNorm,
    mu: f64,
    lipschitz: f64,
}

impl<'a> ExactCombination<'a> {
    pub fn new(l: &Matrix, dataset: &Dataset, norm: &'a GroupNorm, mu: f64) -> Self {
        let proj = LatentProjection::new(l, dataset);
        let lipschitz = proj.lipschitz();
        Self {
            proj,
            norm,
            mu,
            lipschitz,
        }
    }

    /// Largest violation of the block optimality conditions at `s`:
    /// `‖∇_b f + mu·w·b/‖b‖‖` on non-zero blocks and
    /// `max(0, ‖∇_b f‖ − mu·w)` on zero blocks.
    pub fn optimality_residual(&self, s: &Matrix) -> f64 {
        let (_, grad) = self.proj.value_grad(s);
        let mut worst = 0.0f64;
        for k in 0..s.rows() {
            let (srow, grow) = (s.row(k), grad.row(k));
            for (_, members, w) in self.norm.blocks() {
                let bnorm = members
                    .iter()
                    .map(|&m| srow[m] * srow[m])
                    .sum::<f64>()
                    .sqrt();
                let r = if bnorm > 0.0 {
                    members
                        .iter()
                        .map(|&m| {
                            let v = grow[m] + self.mu * w * srow[m] / bnorm;
                            v * v
                        })
                        .sum::<f64>()
                        .sqrt()
                } else {
                    let gnorm = members
                        .iter()
                        .map(|&m| grow[m] * grow[m])
                        .sum::<f64>()
                        .sqrt();
                    (gnorm - self.mu * w).max(0.0)
                };
                worst = worst.max(r);
            }
        }
        worst
    }
}

impl CompositeProblem for ExactCombination<'_> {
    fn smooth_value(&self, s: &Matrix) -> f64 {
        self.proj.value(s)
    }
    fn smooth_value_grad(&self, s: &Matrix) -> (f64, Matrix) {
        self.proj.value_grad(s)
    }
    fn penalty(&self, s: &Matrix) -> f64 {
        self.mu * self.norm.value(s)
    }
    fn prox(&self, v: &Matrix, step: f64) -> Matrix {
        self.norm.prox(v, step * self.mu)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

/// Minimises `loss(L·S) + mu·Ω(S)` exactly (up to `opts`) with the block
/// soft-threshold prox. Valid because groups never overlap.
pub fn solve_s_exact(
    l_fixed: &Matrix,
    s0: &Matrix,
    dataset: &Dataset,
    norm: &GroupNorm,
    mu: f64,
    opts: &SolverOpts,
) -> Result<(Matrix, SolverTrace)> {
    check_factor_dims(l_fixed, s0, dataset)?;
    norm.check(s0)?;
    let problem = ExactCombination::new(l_fixed, dataset, norm, mu);
    fista(&problem, s0.clone(), opts)
}

/// Diminishing-step subgradient descent `x ← x − step(t)·g(x)`, returning
/// the best iterate and its objective. Slow; meant as a reference.
pub fn subgradient_oracle(
    objective: impl Fn(&Matrix) -> f64,
    subgrad: impl Fn(&Matrix) -> Matrix,
    x0: Matrix,
    iters: usize,
    step: impl Fn(usize) -> f64,
) -> (Matrix, f64) {
    let mut x = x0;
    let mut best_val = objective(&x);
    let mut best = x.clone();
    for t in 1..=iters {
        let g = subgrad(&x);
        x.axpy(-step(t), &g);
        let v = objective(&x);
        if v < best_val {
            best_val = v;
            best = x.clone();
        }
    }
    (best, best_val)
}

/// Subgradient of `c·‖x‖₁` taking `0` at zero entries.
pub fn l1_subgradient(x: &Matrix, c: f64) -> Matrix {
    x.map(|v| if v == 0.0 { 0.0 } else { c * v.signum() })
}
