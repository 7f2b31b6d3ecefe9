#![allow(dead_code)]

use mtl_core::{Dataset, Group, GroupPartition, Matrix, TaskData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// `m` tasks with independent Gaussian pools of `n` samples and labels from
/// a random linear rule with 10% flips, so no task is separable.
pub fn dataset(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize) -> Dataset {
    let tasks = (0..m)
        .map(|t| {
            let x = gaussian(rng, n, d, 1.0);
            let w = gaussian(rng, d, 1, 1.0).into_vec();
            let y = x
                .matvec(&w)
                .into_iter()
                .map(|s| {
                    let y = if s >= 0.0 { 1.0 } else { -1.0 };
                    if rng.random::<f64>() < 0.1 {
                        -y
                    } else {
                        y
                    }
                })
                .collect();
            TaskData::new(format!("task{t}"), x, y)
        })
        .collect();
    Dataset::new(tasks).unwrap()
}

/// Tasks dealt round-robin into `g` groups.
pub fn round_robin(m: usize, g: usize) -> GroupPartition {
    let groups = (0..g)
        .map(|i| Group {
            name: format!("g{i}"),
            members: (i..m).step_by(g).collect(),
        })
        .collect();
    GroupPartition::new(groups, m).unwrap()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).max_abs()
}
