use std::fs;
use std::io::Write;
use std::path::Path;

use mtl_core::baselines::{train_l21_all, train_ridge, train_single_lasso};
use mtl_core::cv::{cross_validate, cross_validate_lasso, CvResult};
use mtl_core::dataio::{
    format_groups, generate_synthetic, load_features, load_model, save_features, save_labels,
    save_model, synth_task_name, SynthSpec,
};
use mtl_core::eval::{accuracy_table, predict_labels, predict_scores, score_weights, Metric};
use mtl_core::optim::SolverOpts;
use mtl_core::{
    compose_w, train_with, Dataset, Error, GroupPartition, LatentModel, Matrix, Result,
};
use serde_json::json;

use crate::args::{
    parse_undersample, BaselineArgs, BaselineKind, CvArgs, EvalArgs, Format, MetricArg,
    PredictArgs, ReportArgs, SynthArgs, TrainArgs,
};
use crate::data::{load_dataset, load_partition};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(io_err(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let partition = load_partition(&args.groups, &dataset)?;
    let hp = args.hyper.to_hyperparams();
    log::info!(
        "training on {} tasks, {} samples, d = {}, k = {}",
        dataset.num_tasks(),
        dataset.total_samples(),
        dataset.d,
        hp.latent_k.resolve(dataset.d, dataset.num_tasks())
    );

    let mut lines = String::new();
    let result = train_with(&dataset, &partition, &hp, |r| {
        log::info!(
            "outer {}: objective {:.8e} (loss {:.6e}, S {} iters, L {} iters)",
            r.index,
            r.after_l.total,
            r.after_l.loss,
            r.s_iters,
            r.l_iters
        );
        let line = json!({
            "index": r.index,
            "objective": r.after_l.total,
            "loss": r.after_l.loss,
            "group": r.after_l.group,
            "l1": r.after_l.l1,
            "frobenius": r.after_l.frobenius,
            "objective_after_s": r.after_s.total,
            "s_iters": r.s_iters,
            "l_iters": r.l_iters,
            "s_accepted": r.s_accepted,
            "nu": r.nu,
        });
        lines.push_str(&line.to_string());
        lines.push('\n');
    });
    let (model, report) = match result {
        Ok(v) => v,
        Err(e) => {
            // keep whatever iterations finished
            let _ = emit(args.report.as_deref(), &lines);
            return Err(e);
        }
    };
    if let Some(p) = report.polished {
        log::info!("polished objective {:.8e}", p.total);
    }
    log::info!(
        "{} after {} outer iterations in {:.2?}",
        if report.converged {
            "converged"
        } else {
            "stopped"
        },
        report.outer.len(),
        report.wall_time
    );
    save_model(&args.out, &model)?;
    emit(args.report.as_deref(), &lines)
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let x = load_features(&args.features)?;
    let mut scores = predict_scores(&model, &x)?;
    if args.labels_only {
        scores = predict_labels(&scores);
    }
    let mut out = model.names.join(",");
    out.push('\n');
    for r in 0..scores.rows() {
        let row: Vec<String> = scores.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)
}

/// Weight columns of `model` reordered to the dataset's task order.
fn weights_for(model: &LatentModel, dataset: &Dataset) -> Result<Matrix> {
    let w = compose_w(model);
    let mut ordered = Matrix::zeros(w.rows(), dataset.num_tasks());
    for (m, task) in dataset.tasks.iter().enumerate() {
        let j = model
            .names
            .iter()
            .position(|n| *n == task.name)
            .ok_or_else(|| Error::Argument(format!("model has no attribute '{}'", task.name)))?;
        ordered.set_col(m, &w.col(j));
    }
    Ok(ordered)
}

fn render_table(
    w: &Matrix,
    dataset: &Dataset,
    partition: &GroupPartition,
    report: &ReportArgs,
) -> Result<()> {
    let scores = score_weights(w, dataset)?;
    let table = accuracy_table(&scores, &dataset.names(), partition)?;
    let text = match report.format {
        Format::Csv => table.to_csv(),
        Format::Text => table.to_text(match report.metric {
            MetricArg::Acc => Metric::Accuracy,
            MetricArg::Map => Metric::MeanAveragePrecision,
            MetricArg::Both => Metric::Both,
        }),
    };
    emit(report.out.as_deref(), &text)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let partition = load_partition(&args.groups, &dataset)?;
    render_table(
        &weights_for(&model, &dataset)?,
        &dataset,
        &partition,
        &args.report,
    )
}

pub fn baseline(args: &BaselineArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let opts = SolverOpts::new(args.inner_max, args.inner_tol);
    let w = match args.kind {
        BaselineKind::Lasso => train_single_lasso(&dataset, args.gamma, &opts)?,
        BaselineKind::L21 => train_l21_all(&dataset, args.mu, &opts)?.0,
        BaselineKind::Ridge => train_ridge(&dataset, args.ridge_lambda)?,
    };
    let model = LatentModel::from_weights(w, dataset.names())?;
    log::info!(
        "{:?} baseline trained on {} tasks",
        args.kind,
        dataset.num_tasks()
    );
    save_model(&args.out, &model)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::round_robin(
        args.d,
        args.k_true.unwrap_or(args.m),
        args.m,
        args.groups,
        args.n_per_task,
    )?;
    let undersample = match &args.undersample {
        Some(list) => parse_undersample(list).map_err(Error::Argument)?,
        None => Vec::new(),
    };
    for (t, n) in undersample {
        if t >= args.m {
            return Err(Error::Argument(format!(
                "undersampled task {t} out of range"
            )));
        }
        spec.n_per_task[t] = n;
    }
    spec.n_test = args.n_test;
    spec.density = args.density;
    spec.noise = args.noise;
    spec.margin = args.margin;
    let syn = generate_synthetic(&spec, args.seed)?;

    for (split, data) in [("train", &syn.train), ("test", &syn.test)] {
        let dir = args.out_dir.join(split);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for task in &data.tasks {
            save_features(dir.join(format!("{}.mtlf", task.name)), &task.x)?;
            let y = Matrix::new(task.len(), 1, task.y.clone())?;
            save_labels(
                dir.join(format!("{}.csv", task.name)),
                std::slice::from_ref(&task.name),
                &y,
            )?;
        }
    }
    let names: Vec<String> = (0..spec.m).map(synth_task_name).collect();
    let groups = args.out_dir.join("groups.txt");
    fs::write(&groups, format_groups(&spec.partition, &names)).map_err(io_err(&groups))?;
    save_model(
        args.out_dir.join("truth.mtlm"),
        &LatentModel::new(syn.l_star.clone(), syn.s_star.clone(), names)?,
    )?;
    log::info!("wrote synthetic problem to {}", args.out_dir.display());
    Ok(())
}

pub fn cv(args: &CvArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let hp = args.hyper.to_hyperparams();
    let result: CvResult = if args.lasso {
        let opts = SolverOpts::new(hp.inner_max, hp.inner_tol);
        cross_validate_lasso(
            &dataset,
            &args.gamma_grid,
            args.folds,
            &opts,
            hp.seed,
            args.threads,
        )?
    } else {
        let path = args.groups.as_ref().ok_or_else(|| {
            Error::Argument("--groups is required unless --lasso is given".into())
        })?;
        let partition = load_partition(path, &dataset)?;
        cross_validate(
            &dataset,
            &partition,
            &args.mu_grid,
            &args.gamma_grid,
            args.folds,
            &hp,
            hp.seed,
            args.threads,
        )?
    };
    let mut out = String::new();
    for cell in &result.table {
        out.push_str(&serde_json::to_string(cell).expect("plain data"));
        out.push('\n');
    }
    out.push_str(
        &json!({ "best_mu": result.best_mu, "best_gamma": result.best_gamma }).to_string(),
    );
    out.push('\n');
    log::info!(
        "selected mu = {}, gamma = {}",
        result.best_mu,
        result.best_gamma
    );
    emit(None, &out)
}
