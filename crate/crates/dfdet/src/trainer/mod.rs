//! The optimization loop: shuffled batches through the encoder, optional
//! normalization and slerp augmentation, composite loss, Adam with cosine
//! decay, per-epoch video-level validation, and checkpointing of the
//! trainable parameters.

pub mod adam;
pub mod schedule;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::params::ParamTree;
use crate::backbone::vit::GradStore;
use crate::backbone::weights::{self, Dtype};
use crate::backbone::{Encoder, EncoderSpec};
use crate::config::TrainConfig;
use crate::data::augment::augment_for_split;
use crate::data::manifest::{Split, VideoManifest};
use crate::error::{Error, Result};
use crate::losses::{composite_with_grads, LossBreakdown};
use crate::metrics::{CurveSeries, FramePrediction, PredictionSet};
use crate::peft::{apply_adapter, TrainabilityReport};
use crate::sphere::{
    classify, classify_backward, l2_normalize, l2_normalize_backward, slerp_augment_backward,
    slerp_augment_batch, FeatureBatch, HeadParams,
};
use crate::util::stream_rng;

use adam::Adam;
use rand::seq::SliceRandom;
use schedule::lr_at;

/// One frame of one video, resolved to an absolute crop path.
#[derive(Debug, Clone)]
pub struct FrameItem {
    pub video_id: String,
    pub label: u8,
    pub frame_index: u32,
    pub path: PathBuf,
}

pub fn collect_frames(manifests: &[VideoManifest], data_root: &Path) -> Vec<FrameItem> {
    let mut items = Vec::new();
    for m in manifests {
        for f in &m.frames {
            items.push(FrameItem {
                video_id: m.video_id.clone(),
                label: m.label.as_u8(),
                frame_index: f.frame_index,
                path: data_root.join(&f.image_path),
            });
        }
    }
    items
}

/// Builds the encoder named by the config, attaches a fresh classifier head,
/// and applies the PEFT adapter.
pub fn build_model(cfg: &TrainConfig) -> Result<(Encoder, TrainabilityReport)> {
    let spec = EncoderSpec::by_name(&cfg.encoder)?;
    let mut encoder = if spec.name == "toy" {
        Encoder::toy(cfg.seed)
    } else {
        let path = cfg.resolved_weights_path().ok_or_else(|| {
            Error::Config(format!(
                "encoder `{}` needs a weights file (config `weights_path` or DFDET_WEIGHTS)",
                cfg.encoder
            ))
        })?;
        Encoder::from_weights_file(spec, &path)?
    };
    let head = HeadParams::new(encoder.spec().feature_dim, cfg.seed);
    head.attach_to_tree(encoder.tree_mut());
    let report = apply_adapter(encoder.tree_mut(), &cfg.adapter, cfg.seed)?;
    encoder.set_lora_scale(cfg.adapter.lora_scale());
    Ok((encoder, report))
}

pub struct StepStats {
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    encoder: Encoder,
    adam: Adam,
    items: Vec<FrameItem>,
    pub report: TrainabilityReport,
    global_step: usize,
    total_steps: usize,
    /// Preprocessed-pixel cache; usable whenever augmentation cannot change
    /// the pixels (always for validation, for training only when disabled).
    train_cache: BTreeMap<PathBuf, Vec<f64>>,
    val_cache: BTreeMap<PathBuf, Vec<f64>>,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        train_manifests: &[VideoManifest],
        data_root: &Path,
    ) -> Result<Self> {
        cfg.validate()?;
        let items = collect_frames(train_manifests, data_root);
        if items.is_empty() {
            return Err(Error::Config("train split is empty".into()));
        }
        let (encoder, report) = build_model(&cfg)?;
        let steps_per_epoch = items.len().div_ceil(cfg.batch_size);
        let total_steps = cfg.decay_epochs * steps_per_epoch;
        let adam = Adam::new(cfg.betas, cfg.weight_decay);
        Ok(Self {
            cfg,
            encoder,
            adam,
            items,
            report,
            global_step: 0,
            total_steps,
            train_cache: BTreeMap::new(),
            val_cache: BTreeMap::new(),
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.items.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn global_step(&self) -> usize {
        self.global_step
    }

    /// Shuffled batch index lists for one epoch, deterministic in
    /// (seed, epoch).
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        let mut rng = stream_rng(self.cfg.seed, &format!("shuffle:e{epoch}"));
        order.shuffle(&mut rng);
        order.chunks(self.cfg.batch_size).map(|c| c.to_vec()).collect()
    }

    fn load_pixels(&mut self, idx: usize, epoch: usize, augment_rng_tag: &str) -> Result<Vec<f64>> {
        let item = &self.items[idx];
        let cacheable = !self.cfg.augment.enabled;
        if cacheable {
            if let Some(px) = self.train_cache.get(&item.path) {
                return Ok(px.clone());
            }
        }
        let img = image::open(&item.path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", item.path.display())))?
            .to_rgb8();
        let mut rng = stream_rng(
            self.cfg.seed,
            &format!("{augment_rng_tag}:e{epoch}:i{idx}"),
        );
        let img = augment_for_split(&img, Split::Train, &mut rng, &self.cfg.augment)?;
        let px = self.encoder.preprocess(&img);
        if cacheable {
            self.train_cache.insert(self.items[idx].path.clone(), px.clone());
        }
        Ok(px)
    }

    /// One optimizer step over the items at `indices`.
    pub fn step(&mut self, indices: &[usize], epoch: usize) -> Result<StepStats> {
        let lr = lr_at(self.global_step, self.total_steps, self.cfg.lr_initial, self.cfg.lr_final)?;

        let mut pixels = Vec::with_capacity(indices.len());
        for &idx in indices {
            pixels.push(self.load_pixels(idx, epoch, "augment")?);
        }
        let labels: Vec<u8> = indices.iter().map(|&i| self.items[i].label).collect();
        let video_ids: Vec<String> =
            indices.iter().map(|&i| self.items[i].video_id.clone()).collect();

        let (features, caches) = self.encoder.encode_pixels(&pixels, self.cfg.precision, true)?;
        if !features.is_finite() {
            return Err(Error::Numerical("encoder produced non-finite features".into()));
        }

        // Forward through the head path, remembering what backward needs.
        let raw_features = features;
        let normalized = if self.cfg.normalize {
            Some(l2_normalize(&raw_features)?)
        } else {
            None
        };
        let head_input = normalized.as_ref().unwrap_or(&raw_features);

        let (final_batch, pairings) = if self.cfg.slerp {
            let batch = FeatureBatch {
                features: head_input.clone(),
                labels: labels.clone(),
                video_ids,
                normalized: true,
            };
            let mut rng =
                stream_rng(self.cfg.seed, &format!("slerp:s{}", self.global_step));
            let (augmented, pairings) =
                slerp_augment_batch(&batch, &mut rng, self.cfg.slerp_mode)?;
            (augmented, Some(pairings))
        } else {
            (
                FeatureBatch {
                    features: head_input.clone(),
                    labels: labels.clone(),
                    video_ids,
                    normalized: self.cfg.normalize,
                },
                None,
            )
        };

        let head = HeadParams::from_tree(self.encoder.tree())?;
        let logits = classify(&final_batch.features, &head)?;
        let (loss, dlogits, dfeat_metric) = composite_with_grads(
            &logits,
            &final_batch.features,
            &final_batch.labels,
            &self.cfg.loss_weights,
        )?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("loss diverged: {}", loss.total)));
        }

        // Backward: head, then the augmentation chain, then the encoder.
        let (dw_head, db_head, dfeat_ce) = classify_backward(&final_batch.features, &head, &dlogits);
        let mut dfinal = dfeat_ce;
        dfinal.add_assign(&dfeat_metric);

        let d_head_input = match &pairings {
            Some(p) => slerp_augment_backward(head_input, p, &dfinal),
            None => dfinal,
        };
        let d_raw = if self.cfg.normalize {
            l2_normalize_backward(&raw_features, &d_head_input)
        } else {
            d_head_input
        };

        let mut grads = GradStore::default();
        self.encoder.backward(&caches, &d_raw, &mut grads)?;
        grads.acc("head.weight", dw_head.data());
        grads.acc("head.bias", &db_head);

        self.adam.step(self.encoder.tree_mut(), &grads, lr)?;
        self.global_step += 1;
        Ok(StepStats { lr, loss })
    }

    /// Frame predictions for arbitrary items (no augmentation, no slerp).
    pub fn predict_items(&mut self, items: &[FrameItem]) -> Result<Vec<FramePrediction>> {
        let head = HeadParams::from_tree(self.encoder.tree())?;
        predict_with(
            &self.encoder,
            &head,
            self.cfg.normalize,
            self.cfg.precision,
            self.cfg.batch_size,
            items,
            &mut self.val_cache,
        )
    }

    /// Video-level AUROC over a validation set.
    pub fn validate(&mut self, val_items: &[FrameItem]) -> Result<f64> {
        let records = self.predict_items(val_items)?;
        PredictionSet::from_records("val", records)?.video_auroc()
    }
}

fn predict_with(
    encoder: &Encoder,
    head: &HeadParams,
    normalize: bool,
    precision: crate::backbone::Precision,
    batch_size: usize,
    items: &[FrameItem],
    cache: &mut BTreeMap<PathBuf, Vec<f64>>,
) -> Result<Vec<FramePrediction>> {
    let mut records = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let mut pixels = Vec::with_capacity(chunk.len());
        for item in chunk {
            if let Some(px) = cache.get(&item.path) {
                pixels.push(px.clone());
                continue;
            }
            let img = image::open(&item.path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", item.path.display())))?
                .to_rgb8();
            let px = encoder.preprocess(&img);
            cache.insert(item.path.clone(), px.clone());
            pixels.push(px);
        }
        let (features, _) = encoder.encode_pixels(&pixels, precision, false)?;
        let features = if normalize { l2_normalize(&features)? } else { features };
        let logits = classify(&features, head)?;
        let scores = crate::sphere::fake_scores(&logits);
        for (item, score) in chunk.iter().zip(scores) {
            records.push(FramePrediction {
                video_id: item.video_id.clone(),
                frame_index: item.frame_index,
                fake_score: score,
                label: item.label,
            });
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_auroc: f64,
    pub config_hash: String,
    /// Fingerprint of the frozen parameters the snapshot builds on.
    pub frozen_fingerprint: String,
    pub params_path: PathBuf,
}

impl Checkpoint {
    /// Snapshot the trainable parameters only; atomic write.
    pub fn save(
        dir: &Path,
        epoch: usize,
        val_auroc: f64,
        config_hash: &str,
        tree: &ParamTree,
    ) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let params_path = dir.join(format!("epoch_{epoch:04}.ckpt"));
        let tensors: Vec<(&str, &[usize], &[f64])> = tree
            .iter()
            .filter(|(_, e)| e.trainable)
            .filter_map(|(n, e)| e.data.as_deref().map(|d| (n, e.shape.as_slice(), d)))
            .collect();
        weights::save_tensors(
            &params_path,
            tensors.iter().map(|(n, s, d)| (*n, *s, *d)),
            Dtype::F64,
        )?;
        let ckpt = Self {
            epoch,
            val_auroc,
            config_hash: config_hash.to_string(),
            frozen_fingerprint: tree.frozen_fingerprint(),
            params_path,
        };
        let meta = dir.join(format!("epoch_{epoch:04}.meta.json"));
        let tmp = meta.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&ckpt)?)?;
        fs::rename(&tmp, &meta)?;
        Ok(ckpt)
    }

    pub fn load_meta(meta_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(meta_path).map_err(|e| {
            Error::Config(format!("cannot read checkpoint meta {}: {e}", meta_path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Restore the snapshot into a live tree; the frozen parameters must
    /// match the ones this checkpoint was trained on.
    pub fn restore(&self, tree: &mut ParamTree) -> Result<()> {
        if tree.frozen_fingerprint() != self.frozen_fingerprint {
            return Err(Error::Integrity(
                "checkpoint was trained on different frozen weights".into(),
            ));
        }
        weights::restore_into(tree, &self.params_path)?;
        Ok(())
    }
}

/// Highest validation AUROC; ties break toward the earlier epoch.
pub fn select_best(checkpoints: &[Checkpoint]) -> Option<&Checkpoint> {
    checkpoints.iter().min_by(|a, b| {
        b.val_auroc
            .partial_cmp(&a.val_auroc)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.epoch.cmp(&b.epoch))
    })
}

// ---------------------------------------------------------------------------
// full runs

pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub best_index: usize,
    pub metrics_path: PathBuf,
    pub report: TrainabilityReport,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    kind: &'static str,
    step: usize,
    epoch: usize,
    lr: f64,
    total: f64,
    terms: &'a BTreeMap<String, f64>,
    skipped: &'a [String],
}

#[derive(Serialize, Deserialize)]
struct EpochRecord {
    kind: String,
    epoch: usize,
    val_auroc: f64,
    checkpoint: PathBuf,
}

/// Run the full loop: per epoch, shuffled train batches then a validation
/// pass and a checkpoint. Stops at `decay_epochs`, `max_steps`, or early-stop
/// patience. A non-finite loss aborts with a diagnostic snapshot.
pub fn train(
    cfg: &TrainConfig,
    train_manifests: &[VideoManifest],
    val_manifests: &[VideoManifest],
    data_root: &Path,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(cfg.clone(), train_manifests, data_root)?;
    let val_items = collect_frames(val_manifests, data_root);
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut log = BufWriter::new(fs::File::create(&metrics_path)?);
    let config_hash = cfg.hash();
    writeln!(
        log,
        "{}",
        serde_json::json!({
            "kind": "config",
            "setup": cfg.display_name(),
            "hash": config_hash,
            "trainable": trainer.report.trainable_count,
            "total": trainer.report.total_count,
            "steps_per_epoch": trainer.steps_per_epoch(),
            "total_steps": trainer.total_steps(),
        })
    )?;

    let ckpt_dir = out_dir.join("checkpoints");
    let mut checkpoints = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut epochs_since_improvement = 0usize;
    let mut stop = false;

    for epoch in 0..cfg.decay_epochs {
        for batch in trainer.epoch_batches(epoch) {
            let step = trainer.global_step();
            let stats = match trainer.step(&batch, epoch) {
                Ok(s) => s,
                Err(Error::Numerical(msg)) => {
                    // Diagnostic snapshot of the trainable state at failure.
                    let _ = Checkpoint::save(
                        &out_dir.join("diverged"),
                        epoch,
                        f64::NAN,
                        &config_hash,
                        trainer.encoder().tree(),
                    );
                    return Err(Error::Numerical(msg));
                }
                Err(e) => return Err(e),
            };
            let record = StepRecord {
                kind: "step",
                step,
                epoch,
                lr: stats.lr,
                total: stats.loss.total,
                terms: &stats.loss.per_term,
                skipped: &stats.loss.skipped,
            };
            writeln!(log, "{}", serde_json::to_string(&record)?)?;
            if cfg.max_steps.is_some_and(|m| trainer.global_step() >= m) {
                stop = true;
                break;
            }
        }

        let last_epoch = stop || epoch + 1 == cfg.decay_epochs;
        if (epoch + 1) % cfg.val_every_epochs == 0 || last_epoch {
            let val_auroc = trainer.validate(&val_items)?;
            let ckpt = Checkpoint::save(
                &ckpt_dir,
                epoch,
                val_auroc,
                &config_hash,
                trainer.encoder().tree(),
            )?;
            writeln!(
                log,
                "{}",
                serde_json::to_string(&EpochRecord {
                    kind: "epoch".into(),
                    epoch,
                    val_auroc,
                    checkpoint: ckpt.params_path.clone(),
                })?
            )?;
            log.flush()?;
            checkpoints.push(ckpt);
            match best {
                Some((b, _)) if val_auroc <= b => epochs_since_improvement += 1,
                _ => {
                    best = Some((val_auroc, checkpoints.len() - 1));
                    epochs_since_improvement = 0;
                }
            }
            if cfg
                .early_stop_patience
                .is_some_and(|p| epochs_since_improvement >= p)
            {
                stop = true;
            }
        }
        if stop {
            break;
        }
    }
    log.flush()?;

    let best_index = select_best(&checkpoints)
        .and_then(|c| checkpoints.iter().position(|k| k.epoch == c.epoch))
        .ok_or_else(|| Error::Config("training produced no checkpoints".into()))?;
    Ok(TrainOutcome {
        checkpoints,
        best_index,
        metrics_path,
        report: trainer.report.clone(),
    })
}

/// Rebuilds the model for inference and restores a checkpoint.
pub struct Predictor {
    encoder: Encoder,
    head: HeadParams,
    cfg: TrainConfig,
    cache: BTreeMap<PathBuf, Vec<f64>>,
}

impl Predictor {
    pub fn from_checkpoint(cfg: &TrainConfig, meta_path: &Path) -> Result<Self> {
        let (mut encoder, _) = build_model(cfg)?;
        let ckpt = Checkpoint::load_meta(meta_path)?;
        ckpt.restore(encoder.tree_mut())?;
        let head = HeadParams::from_tree(encoder.tree())?;
        Ok(Self { encoder, head, cfg: cfg.clone(), cache: BTreeMap::new() })
    }

    pub fn predict_manifests(
        &mut self,
        manifests: &[VideoManifest],
        data_root: &Path,
    ) -> Result<Vec<FramePrediction>> {
        let items = collect_frames(manifests, data_root);
        predict_with(
            &self.encoder,
            &self.head,
            self.cfg.normalize,
            self.cfg.precision,
            self.cfg.batch_size,
            &items,
            &mut self.cache,
        )
    }
}

/// Pull the (epoch, val AUROC) series out of a metrics log.
pub fn curve_from_metrics(metrics_path: &Path, name: &str) -> Result<CurveSeries> {
    let text = fs::read_to_string(metrics_path)?;
    let mut points = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)?;
        if v.get("kind").and_then(|k| k.as_str()) == Some("epoch") {
            let epoch = v["epoch"].as_u64().unwrap_or(0) as u32;
            let auroc = v["val_auroc"].as_f64().unwrap_or(f64::NAN);
            points.push((epoch, auroc));
        }
    }
    Ok(CurveSeries { name: name.to_string(), points })
}
