use std::path::{Path, PathBuf};

use mtl_core::dataio::{load_features, load_groups, load_labels};
use mtl_core::{Dataset, Error, GroupPartition, Result};

use crate::args::DataArgs;

/// Feature/label file pairs named by the arguments, in order.
pub fn pairs(args: &DataArgs) -> Result<Vec<(PathBuf, PathBuf)>> {
    if let Some(dir) = &args.data_dir {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let mut features: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "mtlf"))
            .collect();
        features.sort();
        if features.is_empty() {
            return Err(Error::Argument(format!(
                "no .mtlf files in {}",
                dir.display()
            )));
        }
        return Ok(features
            .into_iter()
            .map(|f| {
                let labels = f.with_extension("csv");
                (f, labels)
            })
            .collect());
    }
    if args.features.is_empty() || args.features.len() != args.labels.len() {
        return Err(Error::Argument(format!(
            "need matching --features/--labels pairs (got {} and {}) or --data-dir",
            args.features.len(),
            args.labels.len()
        )));
    }
    Ok(args
        .features
        .iter()
        .cloned()
        .zip(args.labels.iter().cloned())
        .collect())
}

/// Every label column becomes a task on its pair's feature rows.
pub fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let mut tasks = Vec::new();
    for (f, l) in pairs(args)? {
        let x = load_features(&f)?;
        let (names, y) = load_labels(&l, args.zero_one)?;
        if y.rows() != x.rows() {
            return Err(Error::Format {
                path: l,
                message: format!(
                    "{} label rows for {} feature rows in {}",
                    y.rows(),
                    x.rows(),
                    f.display()
                ),
            });
        }
        tasks.extend(Dataset::shared(&names, x, &y)?.tasks);
    }
    Dataset::new(tasks)
}

pub fn load_partition(path: &Path, dataset: &Dataset) -> Result<GroupPartition> {
    load_groups(path, &dataset.names())
}
