use sscmmd::data::{generate_rings, load_csv, make_ssl_split, save_csv, CsvSchema, GaussianMixtureSpec, RingsSpec};
use sscmmd::model::Activation;
use sscmmd::trainer::{evaluate, train, DataConfig, DataSource, EncoderConfig, RunOptions, TrainConfig};

fn toy_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        mu: 2,
        epochs: 6,
        tau: 0.6,
        encoder: EncoderConfig {
            hidden: vec![16],
            embed_dim: 4,
            activation: Activation::Tanh,
        },
        data: DataConfig {
            source: DataSource::GaussianMixture(GaussianMixtureSpec {
                classes: 2,
                per_class: 60,
                dim: 2,
                separation: 6.0,
                distractor_classes: 0,
            }),
            labels_per_class: 4,
            test_fraction: 0.25,
            seed: None,
        },
        ..Default::default()
    }
}

#[test]
fn csv_round_trip_then_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        ..toy_config()
    };
    let (ds, _) = cfg.prepare_data::<f64>().unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&ds, &path).unwrap();
    let (back, warnings) = load_csv::<f64>(&path, &CsvSchema::default()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(back.labels(), ds.labels());
    assert!(back.features().max_abs_diff(ds.features()) < 1e-12);

    let split = make_ssl_split(&back, 4, 0.25, 1).unwrap();
    let data = split.training_data(&back);
    let run = dir.path().join("run");
    let out = train(
        &cfg,
        &data,
        &RunOptions {
            run_dir: Some(run.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(out.epochs_completed, 20);
    assert_eq!(out.epoch_accuracy.len(), 20);
    let acc = evaluate(&out.model, &data.test.features, &data.test.labels).unwrap();
    assert_eq!(Some(acc), out.final_accuracy);
    assert!(acc > 0.8, "well separated toy data, got {acc}");
    for f in ["config.json", "metrics.csv", "checkpoint.bin", "checkpoint.json", "summary.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
}

#[test]
fn f32_training_runs_and_stays_finite() {
    let cfg = TrainConfig {
        epochs: 2,
        ..toy_config()
    };
    let (ds, split) = cfg.prepare_data::<f32>().unwrap();
    let data = split.training_data(&ds);
    let out = train(&cfg, &data, &RunOptions::default()).unwrap();
    assert!(!out.steps.is_empty());
    assert!(out.steps.iter().all(|s| s.l_total.is_finite() && s.l_mmd >= 0.0));
    assert!(out.model.params().iter().all(|p| p.all_finite()));
}

#[test]
fn rings_with_distractors_keep_distractors_unlabeled() {
    let ds = generate_rings::<f64>(
        5,
        &RingsSpec {
            classes: 2,
            per_class: 30,
            noise: 0.05,
            distractor_classes: 1,
        },
    )
    .unwrap();
    let split = make_ssl_split(&ds, 3, 0.2, 0).unwrap();
    for &r in split.labeled().iter().chain(split.test()) {
        assert!(!ds.is_distractor(r));
    }
    assert!(split.unlabeled().iter().any(|&r| ds.is_distractor(r)));
    let cfg = TrainConfig {
        epochs: 1,
        ..toy_config()
    };
    let out = train(&cfg, &split.training_data(&ds), &RunOptions::default()).unwrap();
    assert_eq!(out.epochs_completed, 1);
}
