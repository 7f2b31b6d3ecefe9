mod common;

use std::fs;

use mtl_core::dataio::{
    generate_synthetic, load_features, load_groups, load_labels, load_model, save_features,
    save_groups, save_labels, save_model, SynthSpec,
};
use mtl_core::{LatentModel, Matrix};
use proptest::prelude::*;

fn f32_exact(x: &Matrix) -> Matrix {
    x.map(|v| f64::from(v as f32))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn feature_files_round_trip_at_single_precision(seed in 0u64..100_000, n in 0usize..6, d in 1usize..5, csv in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if csv { "x.csv" } else { "x.mtlf" });
        let x = common::gaussian(&mut common::rng(seed), n, d, 10.0);
        save_features(&path, &x).unwrap();
        let back = load_features(&path).unwrap();
        if n > 0 || !csv {
            prop_assert_eq!(back, f32_exact(&x));
        }
        if !csv {
            let bytes = fs::read(&path).unwrap();
            save_features(&path, &load_features(&path).unwrap()).unwrap();
            prop_assert_eq!(fs::read(&path).unwrap(), bytes);
        }
    }

    #[test]
    fn model_files_round_trip_bit_exactly(seed in 0u64..100_000, d in 1usize..6, k in 1usize..4, m in 1usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtlm");
        let mut rng = common::rng(seed);
        let model = LatentModel::new(
            common::gaussian(&mut rng, d, k, 1e-3),
            common::gaussian(&mut rng, k, m, 1e5),
            (0..m).map(|i| format!("attr {i} ü")).collect(),
        )
        .unwrap();
        save_model(&path, &model).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = load_model(&path).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(back.k(), back.s.rows());
        save_model(&path, &back).unwrap();
        prop_assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn label_and_group_files_round_trip(m in 1usize..7, n in 1usize..6, g in 1usize..4, seed in 0u64..1000) {
        let g = g.min(m);
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = (0..m).map(|i| format!("a{i}")).collect();
        let labels = Matrix::from_fn(n, m, |r, c| if (seed as usize + r * 7 + c * 3) % 5 < 2 { 1.0 } else { -1.0 });
        save_labels(dir.path().join("y.csv"), &names, &labels).unwrap();
        let (back_names, back) = load_labels(dir.path().join("y.csv"), false).unwrap();
        prop_assert_eq!(back_names, names.clone());
        prop_assert_eq!(back, labels);

        let partition = common::round_robin(m, g);
        save_groups(dir.path().join("g.txt"), &partition, &names).unwrap();
        prop_assert_eq!(load_groups(dir.path().join("g.txt"), &names).unwrap(), partition);
    }
}

#[test]
fn label_flip_rate_matches_noise() {
    let spec = SynthSpec {
        noise: 0.2,
        n_test: 1,
        ..SynthSpec::round_robin(5, 2, 2, 2, 50_000).unwrap()
    };
    let syn = generate_synthetic(&spec, 11).unwrap();
    let w = syn.w_star();
    let (mut flips, mut total) = (0usize, 0usize);
    for (m, t) in syn.train.tasks.iter().enumerate() {
        let clean = t.x.matvec(&w.col(m));
        flips += clean
            .iter()
            .zip(&t.y)
            .filter(|(s, y)| (if **s >= 0.0 { 1.0 } else { -1.0 }) != **y)
            .count();
        total += t.len();
    }
    let rate = flips as f64 / total as f64;
    assert_eq!(total, 100_000);
    assert!((rate - 0.2).abs() <= 0.01, "flip rate {rate}");
}

#[test]
fn loaders_reject_invalid_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("bad.mtlf"), b"MTLX\x01\x00").unwrap();
    assert!(load_features(p.join("bad.mtlf")).is_err());
    fs::write(p.join("y.csv"), "a,b\n1,-1\n1\n").unwrap();
    assert!(load_labels(p.join("y.csv"), false).is_err());
    fs::write(p.join("g.txt"), "G: a\n").unwrap();
    let err = load_groups(p.join("g.txt"), &["a".into(), "b".into()])
        .unwrap_err()
        .to_string();
    assert!(err.contains("'b' is not in any group"), "{err}");
    assert!(load_model(p.join("missing.mtlm")).is_err());
}
