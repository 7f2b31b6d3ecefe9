//! Datasets, group partitions, the latent model and training settings.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Issue, Result};
use crate::linalg::Matrix;

/// Training pool of one binary attribute: feature rows and ±1 labels.
///
/// Features sit behind an [`Arc`] so that tasks annotated on the same
/// samples can share one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub x: Arc<Matrix>,
    pub y: Vec<f64>,
}

impl TaskData {
    pub fn new(name: impl Into<String>, x: Matrix, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x: Arc::new(x),
            y,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v > 0.0).count()
    }

    /// Copy of the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> TaskData {
        TaskData {
            name: self.name.clone(),
            x: Arc::new(self.x.select_rows(indices)),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    fn issues(&self, d: usize, out: &mut Vec<Issue>) {
        if self.x.cols() != d {
            out.push(Issue::DimensionMismatch {
                task: self.name.clone(),
                expected: d,
                found: self.x.cols(),
            });
        }
        if self.x.rows() != self.y.len() {
            out.push(Issue::LabelCount {
                task: self.name.clone(),
                rows: self.x.rows(),
                labels: self.y.len(),
            });
        }
        if let Some(index) = self.y.iter().position(|&v| v != 1.0 && v != -1.0) {
            out.push(Issue::InvalidLabel {
                task: self.name.clone(),
                index,
            });
        }
        if !self.x.is_finite() {
            out.push(Issue::NonFinite {
                task: self.name.clone(),
            });
        }
    }
}

/// Ordered collection of `M` task pools sharing feature dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<TaskData>,
    pub d: usize,
}

impl Dataset {
    /// Validated constructor; `D` is taken from the first task.
    pub fn new(tasks: Vec<TaskData>) -> Result<Self> {
        let d = tasks.first().map_or(0, |t| t.x.cols());
        let ds = Self { tasks, d };
        let issues = ds.issues();
        if issues.is_empty() {
            Ok(ds)
        } else {
            Err(Error::Invalid(issues))
        }
    }

    /// Every task annotated on the same samples: `x` is `N × D`, `labels`
    /// is `N × M` with one column per name. The feature matrix is shared.
    pub fn shared(names: &[String], x: Matrix, labels: &Matrix) -> Result<Self> {
        if labels.cols() != names.len() {
            return Err(Error::Dimension {
                context: "label columns vs names",
                expected: names.len(),
                found: labels.cols(),
            });
        }
        let x = Arc::new(x);
        let tasks = names
            .iter()
            .enumerate()
            .map(|(m, name)| TaskData {
                name: name.clone(),
                x: Arc::clone(&x),
                y: labels.col(m),
            })
            .collect();
        Self::new(tasks)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(TaskData::len).sum()
    }

    /// Dataset-level invariants (everything except partition checks).
    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.tasks.is_empty() {
            out.push(Issue::NoTasks);
        }
        let mut seen = HashSet::new();
        for t in &self.tasks {
            if !seen.insert(t.name.as_str()) {
                out.push(Issue::DuplicateTaskName(t.name.clone()));
            }
            t.issues(self.d, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub members: Vec<usize>,
}

/// Partition of task indices `0..M` into named, disjoint, covering groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    groups: Vec<Group>,
    assignment: Vec<usize>,
}

impl GroupPartition {
    pub fn new(groups: Vec<Group>, num_tasks: usize) -> Result<Self> {
        let issues = partition_issues(&groups, num_tasks);
        if !issues.is_empty() {
            return Err(Error::Invalid(issues));
        }
        let mut assignment = vec![0; num_tasks];
        for (g, group) in groups.iter().enumerate() {
            for &m in &group.members {
                assignment[m] = g;
            }
        }
        Ok(Self { groups, assignment })
    }

    /// Every task in its own group.
    pub fn singletons(num_tasks: usize) -> Self {
        let groups = (0..num_tasks)
            .map(|m| Group {
                name: format!("task{m}"),
                members: vec![m],
            })
            .collect();
        Self::new(groups, num_tasks).expect("singleton partition is valid")
    }

    /// One group containing every task.
    pub fn single(num_tasks: usize) -> Self {
        Self::new(
            vec![Group {
                name: "all".into(),
                members: (0..num_tasks).collect(),
            }],
            num_tasks,
        )
        .expect("single-group partition is valid")
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.assignment.len()
    }

    /// Group index of task `m`.
    pub fn group_of(&self, m: usize) -> usize {
        self.assignment[m]
    }

    /// Same grouping with tasks renumbered: new task `i` is old task `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let mut members: Vec<usize> = g.members.iter().map(|&m| inverse[m]).collect();
                members.sort_unstable();
                Group {
                    name: g.name.clone(),
                    members,
                }
            })
            .collect();
        Self::new(groups, perm.len())
    }
}

fn partition_issues(groups: &[Group], num_tasks: usize) -> Vec<Issue> {
    let mut out = Vec::new();
    let mut owner: HashMap<usize, &str> = HashMap::new();
    for g in groups {
        if g.members.is_empty() {
            out.push(Issue::EmptyGroup(g.name.clone()));
        }
        for &m in &g.members {
            if m >= num_tasks {
                out.push(Issue::UnknownTask {
                    group: g.name.clone(),
                    index: m,
                });
                continue;
            }
            if let Some(first) = owner.insert(m, &g.name) {
                out.push(Issue::OverlappingGroups {
                    task: m,
                    first: first.to_string(),
                    second: g.name.clone(),
                });
            }
        }
    }
    for m in 0..num_tasks {
        if !owner.contains_key(&m) {
            out.push(Issue::UncoveredTask(m));
        }
    }
    out
}

/// Checks every invariant of a dataset together with its partition and
/// returns all violations at once.
pub fn validate(dataset: &Dataset, partition: &GroupPartition) -> Result<(), Vec<Issue>> {
    let mut issues = dataset.issues();
    issues.extend(partition_issues(&partition.groups, dataset.num_tasks()));
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

/// Classifier weights factored as `W = L·S`: `l` is `D × K` (latent tasks),
/// `s` is `K × M` (per-task combination weights).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub l: Matrix,
    pub s: Matrix,
    pub names: Vec<String>,
}

impl LatentModel {
    pub fn new(l: Matrix, s: Matrix, names: Vec<String>) -> Result<Self> {
        if l.cols() != s.rows() {
            return Err(Error::Dimension {
                context: "latent model inner dimension",
                expected: l.cols(),
                found: s.rows(),
            });
        }
        if s.cols() != names.len() {
            return Err(Error::Dimension {
                context: "latent model task names",
                expected: s.cols(),
                found: names.len(),
            });
        }
        if l.cols() == 0 {
            return Err(Error::Argument(
                "latent dimension must be at least 1".into(),
            ));
        }
        if !l.is_finite() || !s.is_finite() {
            return Err(Error::Argument(
                "latent model has non-finite entries".into(),
            ));
        }
        Ok(Self { l, s, names })
    }

    /// Wraps a plain `D × M` weight matrix as `L = W`, `S = I`.
    pub fn from_weights(w: Matrix, names: Vec<String>) -> Result<Self> {
        let m = w.cols();
        Self::new(w, Matrix::identity(m), names)
    }

    pub fn d(&self) -> usize {
        self.l.rows()
    }

    pub fn k(&self) -> usize {
        self.l.cols()
    }

    pub fn m(&self) -> usize {
        self.s.cols()
    }

    /// `w^m = L·s^m`.
    pub fn task_weights(&self, m: usize) -> Vec<f64> {
        self.l.matvec(&self.s.col(m))
    }
}

/// `W = L·S`, one classifier per column.
pub fn compose_w(model: &LatentModel) -> Matrix {
    model.l.matmul(&model.s)
}

/// How the latent dimension `K` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LatentK {
    /// `min(D, max(2M, 64))`.
    Auto,
    /// `D / 2`, at least 1.
    HalfD,
    Fixed(usize),
}

impl LatentK {
    pub fn resolve(self, d: usize, m: usize) -> usize {
        let k = match self {
            LatentK::Auto => (2 * m).max(64),
            LatentK::HalfD => d / 2,
            LatentK::Fixed(k) => k,
        };
        k.min(d).max(1)
    }
}

/// Per-block weights of the group penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum GroupWeighting {
    #[default]
    Unweighted,
    /// Each block weighted by `sqrt(group size)`.
    SqrtSize,
}

/// Solver used for the combination-matrix step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum SStepSolver {
    /// Accelerated gradient on the smoothed group penalty.
    #[default]
    Smoothed,
    /// Accelerated proximal gradient with the closed-form block prox.
    ExactProx,
}

/// How `S` is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum InitMode {
    /// Seeded Gaussian entries of scale `init_scale`.
    #[default]
    Random,
    /// `S₀ = Σ^{1/2}·Vᵀ` from the warm start SVD, so `L₀·S₀` reproduces it.
    Diagnostic,
}

#[derive(Debug, Clone, Serialize)]
pub struct Hyperparams {
    /// Group penalty weight.
    pub mu: f64,
    /// L1 weight on `L`.
    pub gamma: f64,
    /// Squared Frobenius weight on `L`.
    pub lambda: f64,
    pub latent_k: LatentK,
    /// Smoothing scale; `None` picks the accuracy-matched default.
    pub nu: Option<f64>,
    /// Multiplies `nu` after every outer iteration when set.
    pub nu_decay: Option<f64>,
    pub outer_max: usize,
    pub outer_tol: f64,
    pub inner_max: usize,
    pub inner_tol: f64,
    /// Use `mu·Ω(S)²` instead of `mu·Ω(S)`.
    pub squared_penalty: bool,
    pub group_weighting: GroupWeighting,
    pub s_solver: SStepSolver,
    /// Finish with one exact-prox `S` step so inactive blocks are exactly zero.
    pub polish: bool,
    /// Ridge strength of the warm start used for initialisation.
    pub ridge_lambda: f64,
    pub init_mode: InitMode,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            mu: 0.1,
            gamma: 0.01,
            lambda: 0.4,
            latent_k: LatentK::Auto,
            nu: None,
            nu_decay: None,
            outer_max: 50,
            outer_tol: 1e-5,
            inner_max: 500,
            inner_tol: 1e-6,
            squared_penalty: false,
            group_weighting: GroupWeighting::Unweighted,
            s_solver: SStepSolver::Smoothed,
            polish: true,
            ridge_lambda: 1.0,
            init_mode: InitMode::Random,
            init_scale: 1e-2,
            seed: 42,
        }
    }
}

impl Hyperparams {
    pub fn check(&self) -> Result<()> {
        let weights = [
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let positive = [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("ridge_lambda", self.ridge_lambda),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be > 0, got {v}")));
            }
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::Argument(format!("nu must be > 0, got {nu}")));
            }
        }
        if let Some(decay) = self.nu_decay {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::Argument(format!(
                    "nu_decay must be in (0, 1], got {decay}"
                )));
            }
        }
        if self.outer_max == 0 || self.inner_max == 0 {
            return Err(Error::Argument("iteration caps must be >= 1".into()));
        }
        if let LatentK::Fixed(0) = self.latent_k {
            return Err(Error::Argument("latent dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// Value of each term of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub loss: f64,
    /// `mu·Ω(S)` (or `mu·Ω(S)²`).
    pub group: f64,
    /// `gamma·‖L‖₁`.
    pub l1: f64,
    /// `lambda·‖L‖_F²`.
    pub frobenius: f64,
    pub total: f64,
}

/// One outer iteration of alternating training.
#[derive(Debug, Clone, Serialize)]
pub struct OuterRecord {
    pub index: usize,
    /// Objective after the `S` step.
    pub after_s: ObjectiveTerms,
    /// Objective after the `L` step.
    pub after_l: ObjectiveTerms,
    pub s_iters: usize,
    pub l_iters: usize,
    /// False when the smoothed step raised the true objective and was undone.
    pub s_accepted: bool,
    pub nu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub initial: ObjectiveTerms,
    pub outer: Vec<OuterRecord>,
    /// Objective after the final exact polish step, if it ran.
    pub polished: Option<ObjectiveTerms>,
    pub converged: bool,
    #[serde(serialize_with = "serialize_secs")]
    pub wall_time: Duration,
}

fn serialize_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        self.polished
            .or_else(|| self.outer.last().map(|r| r.after_l))
            .unwrap_or(self.initial)
            .total
    }
}
