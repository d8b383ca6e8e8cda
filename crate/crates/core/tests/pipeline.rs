use pegnn::checkpoint::Checkpoint;
use pegnn::data::{fit_apply_minmax, load_csv, save_csv, synth_generate, train_test_split, CsvSchema};
use pegnn::layers::Backbone;
use pegnn::training::{evaluate, predict_dataset, train, TrainConfig};

#[test]
fn csv_train_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.csv");
    let ds = synth_generate(300, 11, &[1.0, 2.0]).unwrap();
    save_csv(&path, &ds, &CsvSchema::default()).unwrap();
    let (loaded, report) = load_csv(&path, &CsvSchema::default(), true).unwrap();
    assert_eq!(loaded, ds);
    assert_eq!(report.rows_parsed, 300);

    let split = train_test_split(loaded.len(), 0.2, 1).unwrap();
    let norm = fit_apply_minmax(&loaded, &split).unwrap();
    let (tr, te) = (norm.subset(&split.train), norm.subset(&split.test));
    let cfg = TrainConfig {
        tsteps: 40,
        n_batch: 100,
        hidden_dim: 16,
        emb_dim: 16,
        lambda: 0.3,
        ..TrainConfig::default()
    };
    let (model, _) = train(&tr, &cfg).unwrap();

    let ck_path = dir.path().join("model.json");
    Checkpoint::from_model(&model).save(&ck_path).unwrap();
    let restored = Checkpoint::load(&ck_path).unwrap().to_model().unwrap();
    assert_eq!(
        predict_dataset(&model, &te, 5).unwrap(),
        predict_dataset(&restored, &te, 5).unwrap()
    );
    assert_eq!(evaluate(&model, &te, 5).unwrap(), evaluate(&restored, &te, 5).unwrap());
}

#[test]
fn sage_backbone_and_features_train() {
    let mut ds = synth_generate(200, 4, &[1.0]).unwrap();
    for p in &mut ds.points {
        p.features = vec![p.coords.lon * p.coords.lat, 1.0];
    }
    ds.feature_names = vec!["a".into(), "b".into()];
    let split = train_test_split(ds.len(), 0.25, 2).unwrap();
    let norm = fit_apply_minmax(&ds, &split).unwrap();
    for learned_weights in [false, true] {
        let cfg = TrainConfig {
            backbone: Backbone::Sage,
            tsteps: 30,
            n_batch: 64,
            hidden_dim: 8,
            emb_dim: 8,
            learned_weights,
            lambda: 0.5,
            ..TrainConfig::default()
        };
        let (model, report) = train(&norm.subset(&split.train), &cfg).unwrap();
        assert_eq!(report.records.len(), 30);
        assert!(report.records.iter().all(|r| r.total_loss.is_finite()));
        let m = evaluate(&model, &norm.subset(&split.test), 5).unwrap();
        assert!(m.mse.is_finite() && m.mae * m.mae <= m.mse + 1e-15);
    }
}

#[test]
fn pe_model_fits_training_batches() {
    let ds = synth_generate(400, 9, &[1.0, 2.0]).unwrap();
    let split = train_test_split(ds.len(), 0.2, 9).unwrap();
    let norm = fit_apply_minmax(&ds, &split).unwrap();
    let cfg = TrainConfig {
        tsteps: 300,
        n_batch: 128,
        hidden_dim: 32,
        emb_dim: 32,
        ..TrainConfig::default()
    };
    let (_, report) = train(&norm.subset(&split.train), &cfg).unwrap();
    let mean = |r: &[pegnn::training::StepRecord]| r.iter().map(|s| s.total_loss).sum::<f64>() / r.len() as f64;
    assert!(mean(&report.records[250..]) < mean(&report.records[..50]));
}
