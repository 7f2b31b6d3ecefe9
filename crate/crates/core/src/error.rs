use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single violated dataset or partition invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    NoTasks,
    DimensionMismatch {
        task: String,
        expected: usize,
        found: usize,
    },
    LabelCount {
        task: String,
        rows: usize,
        labels: usize,
    },
    InvalidLabel {
        task: String,
        index: usize,
    },
    NonFinite {
        task: String,
    },
    DuplicateTaskName(String),
    EmptyGroup(String),
    UnknownTask {
        group: String,
        index: usize,
    },
    OverlappingGroups {
        task: usize,
        first: String,
        second: String,
    },
    UncoveredTask(usize),
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::NoTasks => write!(f, "dataset has no tasks"),
            Issue::DimensionMismatch {
                task,
                expected,
                found,
            } => write!(
                f,
                "task '{task}' has feature dimension {found}, expected {expected}"
            ),
            Issue::LabelCount { task, rows, labels } => write!(
                f,
                "task '{task}' has {rows} feature rows but {labels} labels"
            ),
            Issue::InvalidLabel { task, index } => {
                write!(f, "task '{task}' label {index} is not -1 or +1")
            }
            Issue::NonFinite { task } => write!(f, "task '{task}' has non-finite features"),
            Issue::DuplicateTaskName(name) => write!(f, "duplicate task name '{name}'"),
            Issue::EmptyGroup(name) => write!(f, "group '{name}' is empty"),
            Issue::UnknownTask { group, index } => {
                write!(f, "group '{group}' references unknown task {index}")
            }
            Issue::OverlappingGroups {
                task,
                first,
                second,
            } => write!(
                f,
                "overlapping groups: task {task} is in both '{first}' and '{second}'"
            ),
            Issue::UncoveredTask(task) => write!(f, "uncovered task {task}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid input: {}", join_issues(.0))]
    Invalid(Vec<Issue>),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("step size underflow after {backtracks} backtracks (objective {objective:e})")]
    StepUnderflow { backtracks: usize, objective: f64 },

    #[error("solver produced a non-finite objective at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("system for task '{task}' is too ill-conditioned (estimate {condition:e})")]
    IllConditioned { task: String, condition: f64 },

    #[error("task '{task}': {source}")]
    Task {
        task: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training aborted after {} outer iterations: {source}", .report.outer.len())]
    Aborted {
        report: Box<crate::model::TrainReport>,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {message}", .path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SvdNoConvergence { .. }
            | Error::StepUnderflow { .. }
            | Error::Diverged { .. }
            | Error::IllConditioned { .. } => true,
            Error::Task { source, .. } | Error::Aborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
