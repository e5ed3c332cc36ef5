use adascale::data::{oriented_bars, BarsConfig, Dataset};
use adascale::elastic::{ArchSpec, ElasticNetwork};
use adascale::tinynn::Parameter;
use adascale::train::{param_digest, pretrain_all, stage_path, train_stage, TrainConfig, UpdateMode};

fn small_data() -> (Dataset, Dataset) {
    let cfg = BarsConfig {
        train: 320,
        eval: 160,
        ..BarsConfig::default()
    };
    oriented_bars(&cfg, 4).unwrap()
}

fn quick(mode: UpdateMode) -> TrainConfig {
    TrainConfig {
        mode,
        max_epochs_per_stage: 2,
        milestones: vec![1],
        distill_epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    }
}

fn prefix_digest(net: &ElasticNetwork, segments: usize) -> [u8; 32] {
    let params: Vec<&Parameter> = net.segments()[..segments]
        .iter()
        .flat_map(|s| s.backbone_params().chain(s.exit().layers().params()))
        .collect();
    param_digest(params)
}

#[test]
fn mode_a_never_touches_prior_partitions() {
    let (train, eval) = small_data();
    let mut net = ElasticNetwork::build(&ArchSpec::toy(), 1).unwrap();
    let cfg = quick(UpdateMode::FreezePrior);
    let mut stored = vec![0.0; 4];
    for i in 1..=4 {
        let before = prefix_digest(&net, i - 1);
        train_stage(i, &mut net, &train, &eval, &cfg, &mut stored).unwrap();
        assert_eq!(prefix_digest(&net, i - 1), before, "stage {i} changed earlier partitions");
    }
}

#[test]
fn mode_b_stored_accuracy_never_drops() {
    let (train, eval) = small_data();
    let mut net = ElasticNetwork::build(&ArchSpec::toy(), 2).unwrap();
    let report = pretrain_all(&mut net, &train, &eval, &quick(UpdateMode::ConditionalUpdate), None, false).unwrap();
    for j in 0..4 {
        let seq: Vec<f64> = report.stages[j..].iter().map(|s| s.stored_acc[j]).collect();
        assert!(seq.windows(2).all(|w| w[1] >= w[0]), "exit {} history {seq:?}", j + 1);
    }
    assert!(report.stages[1..].iter().all(|s| s.prior_updated.is_some()));
}

#[test]
fn same_seed_same_weights_and_resume_matches() {
    let (train, eval) = small_data();
    let cfg = quick(UpdateMode::FreezePrior);
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");

    let mut full = ElasticNetwork::build(&ArchSpec::toy(), 3).unwrap();
    let r_full = pretrain_all(&mut full, &train, &eval, &cfg, Some(&prefix), false).unwrap();

    let mut again = ElasticNetwork::build(&ArchSpec::toy(), 3).unwrap();
    pretrain_all(&mut again, &train, &eval, &cfg, None, false).unwrap();
    assert_eq!(full.checkpoint_bytes(), again.checkpoint_bytes());

    // interrupted after stage 2
    for s in 3..=4 {
        std::fs::remove_file(stage_path(&prefix, s)).unwrap();
    }
    let mut resumed = ElasticNetwork::build(&ArchSpec::toy(), 3).unwrap();
    let r_resumed = pretrain_all(&mut resumed, &train, &eval, &cfg, Some(&prefix), true).unwrap();
    assert_eq!(resumed.checkpoint_bytes(), full.checkpoint_bytes());
    assert_eq!(r_resumed.stages.len(), 4);
    for (a, b) in r_resumed.stages.iter().zip(&r_full.stages) {
        assert_eq!((a.stage, a.epochs, a.acc), (b.stage, b.epochs, b.acc));
    }
}
