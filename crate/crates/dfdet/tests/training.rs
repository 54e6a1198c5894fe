//! Trainer integration tests on the synthetic crop dataset: desk-scale
//! end-to-end training, freeze contracts, determinism, checkpoint restore.

use std::path::Path;

use dfdet::config::{load_config, TrainConfig};
use dfdet::data::manifest::Split;
use dfdet::data::synthetic::{generate_crop_dataset, CropDatasetSpec};
use dfdet::data::VideoManifest;
use dfdet::metrics::PredictionSet;
use dfdet::trainer::{collect_frames, select_best, train, Predictor, Trainer};

fn toy_config(overrides: &[&str]) -> TrainConfig {
    let mut all = vec![
        "encoder=\"toy\"".to_string(),
        "seed=17".to_string(),
        "batch_size=32".to_string(),
        "decay_epochs=40".to_string(),
        "lr_initial=0.02".to_string(),
        "lr_final=0.005".to_string(),
        "augment.enabled=false".to_string(),
    ];
    all.extend(overrides.iter().map(|s| s.to_string()));
    load_config("setup5", &all).unwrap()
}

fn make_data(root: &Path, seed: u64) -> (Vec<VideoManifest>, Vec<VideoManifest>) {
    let train = generate_crop_dataset(
        root,
        &CropDatasetSpec {
            videos_per_class: 24,
            frames_per_video: 6,
            seed,
            methods: vec!["m1".into(), "m2".into()],
            split: Split::Train,
            id_prefix: "tr_".into(),
        },
    )
    .unwrap();
    let val = generate_crop_dataset(
        root,
        &CropDatasetSpec {
            videos_per_class: 8,
            frames_per_video: 4,
            seed: seed ^ 0xabcd,
            methods: vec!["m1".into(), "m2".into()],
            split: Split::Val,
            id_prefix: "val_".into(),
        },
    )
    .unwrap();
    (train, val)
}

#[test]
fn toy_setup5_trains_to_high_auroc_within_200_steps() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, val_m) = make_data(dir.path(), 5);
    let cfg = toy_config(&["max_steps=200"]);

    let out_dir = dir.path().join("run");
    let outcome = train(&cfg, &train_m, &val_m, dir.path(), &out_dir).unwrap();
    let best = &outcome.checkpoints[outcome.best_index];
    assert!(
        best.val_auroc >= 0.99,
        "expected video AUROC >= 0.99 within 200 steps, best was {}",
        best.val_auroc
    );
}

#[test]
fn linear_probe_leaves_every_backbone_parameter_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, _) = make_data(dir.path(), 6);
    let cfg = toy_config(&[
        "setup=\"linear_probe\"",
        "adapter.strategy=\"linear_probe\"",
        "normalize=false",
        "slerp=false",
        "loss_weights.alignment=0.0",
        "loss_weights.uniformity=0.0",
    ]);
    let mut trainer = Trainer::new(cfg, &train_m, dir.path()).unwrap();
    let before = trainer.encoder().tree().frozen_fingerprint();
    for (epoch, batch) in trainer.epoch_batches(0).into_iter().enumerate().take(5) {
        trainer.step(&batch, epoch).unwrap();
    }
    assert_eq!(trainer.encoder().tree().frozen_fingerprint(), before);
}

#[test]
fn ln_tuning_moves_only_norm_and_head_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, _) = make_data(dir.path(), 7);
    let cfg = toy_config(&[]);
    let mut trainer = Trainer::new(cfg, &train_m, dir.path()).unwrap();
    let snapshot: Vec<(String, Option<Vec<f64>>)> = trainer
        .encoder()
        .tree()
        .iter()
        .map(|(n, e)| (n.to_string(), e.data.clone()))
        .collect();
    let batch = trainer.epoch_batches(0)[0].clone();
    trainer.step(&batch, 0).unwrap();

    let mut moved_ln = false;
    let mut moved_head = false;
    for (name, old) in snapshot {
        let new = trainer.encoder().tree().get(&name).unwrap().data.clone();
        let is_ln = name.contains("ln_");
        let is_head = name.starts_with("head.");
        if is_ln || is_head {
            if old != new {
                if is_ln {
                    moved_ln = true;
                } else {
                    moved_head = true;
                }
            }
        } else {
            assert_eq!(old, new, "non-norm parameter `{name}` changed under ln_tuning");
        }
    }
    assert!(moved_ln, "no norm parameter moved");
    assert!(moved_head, "head did not move");
}

#[test]
fn fixed_seed_reproduces_first_step_loss_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, _) = make_data(dir.path(), 8);
    let run = || -> f64 {
        let cfg = toy_config(&[]);
        let mut trainer = Trainer::new(cfg, &train_m, dir.path()).unwrap();
        let batch = trainer.epoch_batches(0)[0].clone();
        trainer.step(&batch, 0).unwrap().loss.total
    };
    let a = run();
    let b = run();
    assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    // Deterministic objective (no slerp resampling) so the descent trend is
    // attributable to the optimizer.
    let dir = tempfile::tempdir().unwrap();
    let (train_m, _) = make_data(dir.path(), 9);
    let cfg = toy_config(&[
        "setup=\"ln_norm\"",
        "slerp=false",
        "loss_weights.alignment=0.0",
        "loss_weights.uniformity=0.0",
        "lr_initial=0.002",
        "lr_final=0.0005",
    ]);
    let mut trainer = Trainer::new(cfg, &train_m, dir.path()).unwrap();
    let batch = trainer.epoch_batches(0)[0].clone();
    let mut losses = Vec::new();
    for _ in 0..20 {
        losses.push(trainer.step(&batch, 0).unwrap().loss.total);
    }
    let non_monotone = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(
        non_monotone <= 3,
        "{non_monotone} non-monotone steps in {losses:?}"
    );
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn checkpoint_restores_into_a_predictor_with_same_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, val_m) = make_data(dir.path(), 10);
    let cfg = toy_config(&["max_steps=40", "decay_epochs=4"]);
    let out_dir = dir.path().join("run");
    let outcome = train(&cfg, &train_m, &val_m, dir.path(), &out_dir).unwrap();
    let best = select_best(&outcome.checkpoints).unwrap();

    let meta = best
        .params_path
        .parent()
        .unwrap()
        .join(format!("epoch_{:04}.meta.json", best.epoch));
    let mut predictor = Predictor::from_checkpoint(&cfg, &meta).unwrap();
    let preds = predictor.predict_manifests(&val_m, dir.path()).unwrap();
    let set = PredictionSet::from_records("val", preds).unwrap();
    let auroc = set.video_auroc().unwrap();
    assert!(
        (auroc - best.val_auroc).abs() < 1e-12,
        "restored predictor disagrees: {auroc} vs {}",
        best.val_auroc
    );
}

#[test]
fn empty_train_split_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(&[]);
    match Trainer::new(cfg, &[], dir.path()) {
        Err(dfdet::Error::Config(_)) => {}
        Err(e) => panic!("expected a config error, got {e}"),
        Ok(_) => panic!("expected a config error"),
    }
}

#[test]
fn items_resolve_against_the_data_root() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, _) = make_data(dir.path(), 11);
    let items = collect_frames(&train_m, dir.path());
    assert_eq!(items.len(), 24 * 2 * 6);
    assert!(items[0].path.starts_with(dir.path()));
    assert!(items[0].path.exists());
}
