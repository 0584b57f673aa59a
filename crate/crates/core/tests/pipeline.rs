use c3gnn::analysis::{analyze, balanced_accuracy, regions, Region};
use c3gnn::encoder::{decode_checkpoint, embed_dataset, encode_checkpoint, predict};
use c3gnn::graphdata::synthetic::{generate, SyntheticConfig};
use c3gnn::graphdata::{
    imbalance_factor, make_imbalanced, parse_tu_dataset, read_dataset_str, stratified_split, write_dataset_string,
    write_tu_dataset, SplitSpec,
};
use c3gnn::subclassing::assign_subclasses;
use c3gnn::trainer::{fit, training_cap, TrainConfig};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        warmup_epochs: 2,
        refresh_interval: 2,
        batch_size: 16,
        learning_rate: 1e-2,
        hidden_dim: 8,
        embed_dim: 8,
        proj_dim: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn tu_files_survive_split_and_imbalance() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate(&SyntheticConfig::default(), &[25, 20, 15, 10], 4).unwrap();
    write_tu_dataset(&data, dir.path(), "SYN").unwrap();
    let parsed = parse_tu_dataset(dir.path(), "SYN").unwrap();
    assert_eq!(parsed.len(), data.len());
    assert_eq!(parsed.class_counts(), data.class_counts());
    for (a, b) in parsed.graphs().iter().zip(data.graphs()) {
        assert_eq!(a.graph.edges(), b.graph.edges());
    }

    let (train, val, test) = stratified_split(&parsed, &SplitSpec::default()).unwrap();
    assert_eq!(train.len() + val.len() + test.len(), parsed.len());
    assert_eq!(train.class_counts(), vec![15, 12, 9, 6]);
    let imb = make_imbalanced(&train, 5.0, 1).unwrap();
    assert_eq!(imb.class_counts()[0], 15);
    assert_eq!(imbalance_factor(&imb).unwrap(), 5.0);

    let text = write_dataset_string(&imb);
    assert_eq!(read_dataset_str(&text).unwrap(), imb);
}

#[test]
fn trained_checkpoint_round_trips_and_analyzes() {
    let graphs = SyntheticConfig::default();
    let (train, _) = generate(&graphs, &[30, 12, 8, 6], 1).unwrap();
    let (val, _) = generate(&graphs, &[6; 4], 2).unwrap();
    let cfg = small_cfg();
    let result = fit(&train, &val, &cfg).unwrap();
    assert_eq!(result.history.len(), cfg.epochs);
    assert_eq!(balanced_accuracy(&result.params, &val).unwrap(), result.best_val);

    let restored = decode_checkpoint(&encode_checkpoint(&result.params)).unwrap();
    assert_eq!(restored, result.params);
    assert_eq!(predict(&restored, &val).unwrap(), predict(&result.params, &val).unwrap());

    let h = embed_dataset(&result.params, &train).unwrap();
    let cap = training_cap(&train, &cfg).unwrap();
    assert_eq!(cap, 6);
    let a = assign_subclasses(&h, &train.labels(), 4, cap, 0, 0).unwrap();
    assert_eq!(a.split_classes(), vec![0, 1, 2]);
    assert!(a.subclass_sizes().iter().flatten().all(|&s| (1..=cap).contains(&s)));
    let report = analyze(&result.params, &a, &val, &train.class_counts()).unwrap();
    assert_eq!(report.samples.len(), val.len());
    assert_eq!(
        regions(&train.class_counts()),
        vec![Region::Many, Region::Many, Region::Medium, Region::Few]
    );
}
