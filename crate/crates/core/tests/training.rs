use std::path::Path;

use dermnet_core::backbone::{
    load_pretrained, replace_head, set_trainable, BackboneName, BackboneSpec, ParamGroup, ParamGroups,
};
use dermnet_core::dataset::{parse_ground_truth, stratified_split, Dataset, Fraction, ImageRecord};
use dermnet_core::loss::ClassWeights;
use dermnet_core::synthetic::{make_synthetic, SyntheticSpec};
use dermnet_core::training::{
    run_phase, run_schedule, validation_loss, EpochLog, Schedule, TrainOptions, TrainingPhase,
};

struct Fixture {
    _dir: tempfile::TempDir,
    train: Dataset,
    val: Dataset,
}

fn fixture(images: usize, ratios: Vec<usize>, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        images,
        ratios,
        size: 64,
        seed,
    };
    let out = make_synthetic(dir.path(), &spec).unwrap();
    let ds = parse_ground_truth(
        std::fs::File::open(&out.ground_truth).unwrap(),
        &out.image_dir,
        &out.label_space,
    )
    .unwrap();
    let split = stratified_split(&ds, "0.25".parse::<Fraction>().unwrap(), seed).unwrap();
    Fixture {
        _dir: dir,
        train: split.train,
        val: split.validation,
    }
}

fn stub_model(classes: usize) -> dermnet_core::backbone::AdaptedModel {
    let spec = BackboneSpec::native(BackboneName::Stub);
    let m = load_pretrained(&spec, Path::new("unused")).unwrap();
    replace_head(m, classes, 11).unwrap()
}

fn opts() -> TrainOptions {
    TrainOptions {
        batch_size: 16,
        ..TrainOptions::default()
    }
}

fn head_only(lr: f64, epochs: usize, patience: usize) -> TrainingPhase {
    TrainingPhase::new(
        ParamGroups::from_groups(&[ParamGroup::Head]),
        lr,
        epochs,
        patience,
    )
    .unwrap()
}

fn losses(log: &[EpochLog]) -> Vec<(usize, usize, u64, u64)> {
    log.iter()
        .map(|l| {
            (
                l.phase,
                l.epoch,
                l.train_loss.to_bits(),
                l.validation_loss.to_bits(),
            )
        })
        .collect()
}

#[test]
fn frozen_body_is_untouched_and_head_moves() {
    let f = fixture(96, vec![3, 2, 1], 1);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let m = stub_model(3);
    let body = m.body_checksum().unwrap();
    let head = m.head_checksum().unwrap();
    let (m, log) = run_phase(m, &head_only(0.01, 3, 3), &f.train, &f.val, &w, 5, &opts()).unwrap();
    assert!(!log.is_empty() && log.len() <= 3);
    assert_eq!(m.body_checksum().unwrap(), body);
    assert_ne!(m.head_checksum().unwrap(), head);
}

#[test]
fn all_groups_phase_updates_body_and_head() {
    let f = fixture(64, vec![1, 1], 2);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let m = stub_model(2);
    let body = m.body_checksum().unwrap();
    let head = m.head_checksum().unwrap();
    let phase = TrainingPhase::new(ParamGroups::ALL, 0.01, 1, 1).unwrap();
    let (m, log) = run_phase(m, &phase, &f.train, &f.val, &w, 3, &opts()).unwrap();
    assert_eq!(log.len(), 1);
    assert_ne!(m.body_checksum().unwrap(), body);
    assert_ne!(m.head_checksum().unwrap(), head);
}

#[test]
fn same_seed_gives_identical_logs_and_weights() {
    let f = fixture(80, vec![3, 1], 3);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let schedule = Schedule::new(vec![
        head_only(0.01, 2, 2),
        TrainingPhase::new(ParamGroups::ALL, 0.001, 2, 2).unwrap(),
    ])
    .unwrap();
    let run = || {
        let (m, log) = run_schedule(stub_model(2), &schedule, &f.train, &f.val, &w, 9, &opts()).unwrap();
        (
            m.body_checksum().unwrap(),
            m.head_checksum().unwrap(),
            losses(&log),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_shuffle_differently() {
    let f = fixture(80, vec![3, 1], 3);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let phase = head_only(0.01, 1, 1);
    let (_, a) = run_phase(stub_model(2), &phase, &f.train, &f.val, &w, 1, &opts()).unwrap();
    let (_, b) = run_phase(stub_model(2), &phase, &f.train, &f.val, &w, 2, &opts()).unwrap();
    assert_ne!(losses(&a), losses(&b));
}

/// Validation labels rotated by one class: fitting the training labels can
/// only make validation loss worse.
fn rotated_labels(ds: &Dataset) -> Dataset {
    let k = ds.label_space().len();
    let records = ds
        .records()
        .iter()
        .map(|r| ImageRecord {
            label: r.label.map(|c| (c + 1) % k),
            ..r.clone()
        })
        .collect();
    Dataset::new(records, ds.label_space().clone()).unwrap()
}

#[test]
fn non_improving_phase_stops_after_patience_and_restores_epoch_one() {
    let f = fixture(90, vec![1, 1, 1], 4);
    let w = ClassWeights::uniform(3);
    let adversarial_val = rotated_labels(&f.train);
    let phase = head_only(0.05, 10, 5);
    let (m, log) = run_phase(stub_model(3), &phase, &f.train, &adversarial_val, &w, 7, &opts()).unwrap();
    assert_eq!(log.len(), 6, "{log:?}");
    let first = log[0].validation_loss;
    assert!(log[1..].iter().all(|l| l.validation_loss >= first));

    let (one_epoch, _) = run_phase(
        stub_model(3),
        &head_only(0.05, 1, 1),
        &f.train,
        &adversarial_val,
        &w,
        7,
        &opts(),
    )
    .unwrap();
    assert_eq!(m.head_checksum().unwrap(), one_epoch.head_checksum().unwrap());
    let restored = validation_loss(&m, &adversarial_val, &w, &opts()).unwrap();
    assert!((restored - first).abs() < 1e-9);
}

#[test]
fn balanced_auto_weights_match_uniform_weights() {
    let f = fixture(64, vec![1, 1], 5);
    let auto = ClassWeights::for_dataset(&f.train).unwrap();
    assert!(auto.weights().iter().all(|&w| w == 1.0));
    let phase = head_only(0.01, 2, 2);
    let (_, a) = run_phase(stub_model(2), &phase, &f.train, &f.val, &auto, 4, &opts()).unwrap();
    let (_, b) = run_phase(
        stub_model(2),
        &phase,
        &f.train,
        &f.val,
        &ClassWeights::uniform(2),
        4,
        &opts(),
    )
    .unwrap();
    assert_eq!(losses(&a), losses(&b));
}

#[test]
fn phase_two_starts_from_phase_one_best() {
    let f = fixture(96, vec![3, 2, 1], 6);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let p1 = head_only(0.01, 4, 2);
    let (m, log1) = run_phase(stub_model(3), &p1, &f.train, &f.val, &w, 8, &opts()).unwrap();
    let best1 = log1
        .iter()
        .map(|l| l.validation_loss)
        .fold(f64::INFINITY, f64::min);
    let inherited = validation_loss(&m, &f.val, &w, &opts()).unwrap();
    assert!(
        (inherited - best1).abs() <= 1e-9 * best1.max(1.0),
        "{inherited} vs {best1}"
    );
}

#[test]
fn single_phase_schedule_equals_run_phase() {
    let f = fixture(64, vec![2, 1], 7);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let phase = head_only(0.01, 2, 2);
    let schedule = Schedule::new(vec![phase]).unwrap();
    let (a, la) = run_phase(stub_model(2), &phase, &f.train, &f.val, &w, 3, &opts()).unwrap();
    let (b, lb) = run_schedule(stub_model(2), &schedule, &f.train, &f.val, &w, 3, &opts()).unwrap();
    assert_eq!(losses(&la), losses(&lb));
    assert_eq!(a.head_checksum().unwrap(), b.head_checksum().unwrap());
}

#[test]
fn training_reduces_validation_loss() {
    let f = fixture(120, vec![10, 3, 1], 8);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let m = stub_model(3);
    let before = validation_loss(&m, &f.val, &w, &opts()).unwrap();
    let schedule = Schedule::new(vec![
        head_only(0.01, 5, 5),
        TrainingPhase::new(ParamGroups::ALL, 0.001, 5, 5).unwrap(),
    ])
    .unwrap();
    let (m, _) = run_schedule(m, &schedule, &f.train, &f.val, &w, 2, &opts()).unwrap();
    let after = validation_loss(&m, &f.val, &w, &opts()).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn schedule_writes_phase_checkpoints() {
    let f = fixture(48, vec![1, 1], 9);
    let w = ClassWeights::for_dataset(&f.train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let o = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..opts()
    };
    let schedule = Schedule::new(vec![
        head_only(0.01, 1, 1),
        TrainingPhase::new(ParamGroups::ALL, 0.001, 1, 1).unwrap(),
    ])
    .unwrap();
    let (m, log) = run_schedule(stub_model(2), &schedule, &f.train, &f.val, &w, 1, &o).unwrap();
    assert_eq!(log.iter().map(|l| l.phase).collect::<Vec<_>>(), vec![1, 2]);
    for i in [1, 2] {
        assert!(dir.path().join(format!("phase{i}_best.ckpt")).is_file());
    }
    let reloaded = dermnet_core::backbone::open_checkpoint(&dir.path().join("phase2_best.ckpt")).unwrap();
    assert_eq!(reloaded.body_checksum().unwrap(), m.body_checksum().unwrap());
    assert_eq!(reloaded.head_checksum().unwrap(), m.head_checksum().unwrap());
}

#[test]
fn mismatched_weights_are_a_contract_error() {
    let f = fixture(48, vec![1, 1], 10);
    let err = run_phase(
        stub_model(2),
        &head_only(0.01, 1, 1),
        &f.train,
        &f.val,
        &ClassWeights::uniform(3),
        1,
        &opts(),
    )
    .unwrap_err();
    assert!(matches!(err, dermnet_core::Error::Contract(_)));
}

#[test]
fn head_must_stay_trainable() {
    let body_only = ParamGroups::from_groups(&[ParamGroup::Body]);
    assert!(set_trainable(stub_model(2), body_only).is_err());
}
