//! Three-stage training orchestration (frozen upstream modules), Adam with
//! warmup+cosine schedule, per-epoch checkpointing with resume, and the
//! autolabel pass.

mod model;
mod schedule;

pub use model::{Model, Stage};
pub use schedule::LrSchedule;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::autodiff::{bilinear_sample, load_entries, no_grad, save_entries, Adam, Tensor};
use crate::boxreg::{box_loss, enrich_cloud, EnrichedCloud};
use crate::config::PipelineConfig;
use crate::dataio::{
    build_object_samples, list_scene_ids, load_kitti_scene, save_kitti_label, LabeledBox,
    Manifest, ObjectSample, SampleConfig, SkipRecord,
};
use crate::error::{Error, Result};
use crate::geometry::FrustumCloud;
use crate::pointgen::{generate_points, mask_and_recover_loss, sample_targets, MaskRecover};
use crate::rng::Rng;
use crate::segmentation::{foreground_filter, segment_image, segment_points};

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Which ids of a dataset to operate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSplit {
    All,
    Train,
    /// The seed-shuffled labeled subset used for training.
    Subset,
    Eval,
}

impl std::str::FromStr for DataSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<DataSplit> {
        match s {
            "all" => Ok(DataSplit::All),
            "train" => Ok(DataSplit::Train),
            "subset" => Ok(DataSplit::Subset),
            "eval" => Ok(DataSplit::Eval),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected all|train|subset|eval)"
            ))),
        }
    }
}

/// Resolve the scene ids for a split, falling back to the directory
/// listing when no manifest exists.
pub fn split_ids(root: &Path, split: DataSplit) -> Result<Vec<String>> {
    let manifest_path = root.join("manifest.json");
    if manifest_path.exists() {
        let m = Manifest::load(&manifest_path)?;
        Ok(match split {
            DataSplit::All => m.scene_ids,
            DataSplit::Train => m.train_ids,
            DataSplit::Subset => {
                if m.train_subset.is_empty() {
                    m.train_ids
                } else {
                    m.train_subset
                }
            }
            DataSplit::Eval => m.eval_ids,
        })
    } else {
        list_scene_ids(root)
    }
}

fn sample_config(cfg: &PipelineConfig, training: bool) -> SampleConfig {
    SampleConfig {
        crop_size: cfg.crop_size,
        min_points: cfg.min_points,
        min_fg: cfg.min_fg,
        max_points: cfg.input_points,
        training,
        bilinear_rgb: cfg.bilinear_rgb,
    }
}

/// Load and preprocess every object sample for the given scene ids.
pub fn load_samples(
    root: &Path,
    ids: &[String],
    cfg: &PipelineConfig,
    training: bool,
) -> Result<(Vec<ObjectSample>, Vec<SkipRecord>)> {
    let scfg = sample_config(cfg, training);
    let mut samples = Vec::new();
    let mut skips = Vec::new();
    for id in ids {
        let scene = load_kitti_scene(root, id)?;
        let mut rng = Rng::new(cfg.seed).derive(fnv1a(id));
        let (s, sk) = build_object_samples(&scene, &scfg, &mut rng);
        samples.extend(s);
        skips.extend(sk);
    }
    Ok((samples, skips))
}

// ------------------------------------------------------------ enrichment

/// Output of the frozen seg+gen pipeline for one sample.
pub struct EnrichInfo {
    pub cloud: EnrichedCloud,
    /// [c, hz, wz] pooled-context image features.
    pub z: Tensor,
    pub n_known: usize,
    pub n_generated: usize,
    /// Segmented cloud before enrichment (for visualization).
    pub segmented: FrustumCloud,
}

/// Run segmentation, foreground filtering, target sampling and point
/// generation for one sample (all under no_grad). This is the shared path
/// for stage-3 training, autolabeling, and visualization.
pub fn enrich_sample(model: &Model, sample: &ObjectSample, rng: &mut Rng) -> EnrichInfo {
    no_grad(|| {
        let cfg = &model.cfg;
        let logits = segment_points(&model.point_seg, &sample.frustum, cfg.coord_scale);
        let mut p_prime = foreground_filter(&sample.frustum, &logits, cfg.fg_threshold);
        let img = segment_image(&model.image_seg, &sample.crop);

        let m = cfg.enriched_points;
        if p_prime.len() > m {
            let mut keep = rng.sample_indices(p_prime.len(), m);
            keep.sort_unstable();
            p_prime = p_prime.select(&keep);
        }

        let (decoded, targets) = match &model.gen {
            Some(gen) => {
                // per-pixel foreground probabilities from the image branch
                let lv = img.logits.to_vec();
                let s = cfg.crop_size;
                let mut fg_prob = Vec::with_capacity(s * s);
                for i in 0..s * s {
                    let (l0, l1) = (lv[i * 2], lv[i * 2 + 1]);
                    let mx = l0.max(l1);
                    let e0 = (l0 - mx).exp();
                    let e1 = (l1 - mx).exp();
                    fg_prob.push(e1 / (e0 + e1));
                }
                let targets = sample_targets(&fg_prob, s, p_prime.len(), m, rng);
                let decoded = generate_points(gen, &p_prime, &targets, &img.pixel_features);
                (decoded, targets)
            }
            None => (Vec::new(), Vec::new()),
        };

        let cloud = enrich_cloud(&p_prime, &decoded, &targets, &sample.crop, cfg.crop_size);
        EnrichInfo {
            n_known: p_prime.len(),
            n_generated: decoded.len(),
            cloud,
            z: img.z.detach(),
            segmented: p_prime,
        }
    })
}

// -------------------------------------------------------------- training

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub stage: String,
    pub epochs: usize,
    pub start_epoch: usize,
    pub samples: usize,
    pub skipped_samples: usize,
    pub epoch_losses: Vec<f64>,
    pub wall_seconds: f64,
    pub checkpoint: PathBuf,
}

fn epoch_ckpt_path(out: &Path, epoch: usize) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".epoch{epoch}"));
    out.with_file_name(name)
}

fn opt_path(p: &Path) -> PathBuf {
    let mut name = p.file_name().unwrap_or_default().to_os_string();
    name.push(".opt");
    p.with_file_name(name)
}

enum StageData {
    Seg,
    Gen {
        /// (P' cloud, F_2d rows for it), per sample index.
        cached: Vec<Option<(FrustumCloud, Vec<f64>, usize)>>,
    },
    Box {
        /// (enriched cloud, z values, z shape), per sample index.
        cached: Vec<(EnrichedCloud, Vec<f64>, Vec<usize>)>,
    },
}

/// Train one stage: only that stage's parameters receive gradients, the
/// checkpoint is written every epoch (rolling keep-2) and the run is
/// resumable at epoch granularity.
pub fn run_stage(
    data_root: &Path,
    cfg: &PipelineConfig,
    stage: Stage,
    ckpt_in: Option<&Path>,
    ckpt_out: &Path,
    resume: bool,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    if stage == Stage::Gen && !cfg.generation {
        return Err(Error::Config(
            "stage gen is disabled by generation = false".into(),
        ));
    }
    let model = Model::new(cfg, Some(stage))?;
    match ckpt_in {
        Some(path) => model.load_for_stage(path, stage)?,
        None => {
            if let Some(first) = stage.prerequisites(cfg.generation).first() {
                return Err(Error::StageDependency {
                    stage: stage.name().into(),
                    missing: first.name().into(),
                });
            }
        }
    }

    let ids = split_ids(data_root, DataSplit::Subset)?;
    let (samples, data_skips) = load_samples(data_root, &ids, cfg, true)?;
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "no training samples in {} (after filters)",
            data_root.display()
        )));
    }

    // precompute everything the frozen stages make constant
    let mut skipped = data_skips.len();
    let stage_data = match stage {
        Stage::Seg => StageData::Seg,
        Stage::Gen => {
            let gen_cached: Vec<Option<(FrustumCloud, Vec<f64>, usize)>> = samples
                .iter()
                .map(|s| {
                    no_grad(|| {
                        let logits =
                            segment_points(&model.point_seg, &s.frustum, cfg.coord_scale);
                        let p_prime =
                            foreground_filter(&s.frustum, &logits, cfg.fg_threshold);
                        if p_prime.fg_count() < 2 {
                            return None;
                        }
                        let img = segment_image(&model.image_seg, &s.crop);
                        let rows =
                            bilinear_sample(&img.pixel_features, &p_prime.projections);
                        let c_i = rows.shape()[1];
                        Some((p_prime, rows.to_vec(), c_i))
                    })
                })
                .collect();
            skipped += gen_cached.iter().filter(|c| c.is_none()).count();
            StageData::Gen { cached: gen_cached }
        }
        Stage::Box => {
            let cached = samples
                .iter()
                .map(|s| {
                    let mut rng = Rng::new(cfg.seed)
                        .derive(fnv1a(&s.scene_id))
                        .derive(s.object_index as u64);
                    let info = enrich_sample(&model, s, &mut rng);
                    let zshape = info.z.shape().to_vec();
                    (info.cloud, info.z.to_vec(), zshape)
                })
                .collect();
            StageData::Box { cached }
        }
    };

    let n_batches = samples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * n_batches;
    let schedule = LrSchedule::new(cfg.lr, total_steps, cfg.warmup_frac);
    let mut adam: Adam = Adam::new();

    // resume from the newest complete epoch checkpoint
    let mut start_epoch = 0usize;
    if resume {
        for e in (0..cfg.epochs).rev() {
            let p = epoch_ckpt_path(ckpt_out, e);
            if p.exists() && opt_path(&p).exists() {
                model.load_partial(&p)?;
                adam.import_state(&load_entries(&opt_path(&p))?);
                start_epoch = e + 1;
                break;
            }
        }
    }

    let metrics_path = {
        let mut name = ckpt_out.file_name().unwrap_or_default().to_os_string();
        name.push(".metrics.jsonl");
        ckpt_out.with_file_name(name)
    };
    let mut metrics = String::new();

    let stage_tag = fnv1a(stage.name());
    let mut epoch_losses = Vec::new();
    let params = model.params.borrow();
    for epoch in start_epoch..cfg.epochs {
        let epoch_start = Instant::now();
        let mut rng = Rng::new(cfg.seed).derive(stage_tag).derive(epoch as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);

        let mut epoch_loss_sum = 0.0f64;
        let mut epoch_loss_count = 0usize;
        let mut lr_now = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * n_batches + batch_idx;
            lr_now = schedule.lr_at(step)?;
            params.zero_grads();

            let mut losses: Vec<Tensor> = Vec::new();
            for &si in batch {
                let sample = &samples[si];
                match &stage_data {
                    StageData::Seg => {
                        let pl = segment_points(&model.point_seg, &sample.frustum, cfg.coord_scale);
                        let img = segment_image(&model.image_seg, &sample.crop);
                        losses.push(crate::segmentation::seg_loss(
                            &pl,
                            &img.logits,
                            &sample.frustum,
                            cfg.crop_size,
                        )?);
                    }
                    StageData::Gen { cached } => {
                        let Some((p_prime, rows, c_i)) = &cached[si] else {
                            continue;
                        };
                        let f2d_full =
                            Tensor::from_vec(rows.clone(), &[p_prime.len(), *c_i]);
                        let out: Option<MaskRecover> = mask_and_recover_loss(
                            model.gen.as_ref().expect("gen stage needs the generator"),
                            p_prime,
                            &f2d_full,
                            &mut rng,
                            None,
                            (cfg.mask_ratio_min, cfg.mask_ratio_max),
                        )?;
                        if let Some(mr) = out {
                            if mr.n_masked > 0 {
                                losses.push(mr.loss);
                            }
                        }
                    }
                    StageData::Box { cached } => {
                        let (cloud, zv, zshape) = &cached[si];
                        let z = Tensor::from_vec(zv.clone(), zshape);
                        let pred = model.boxreg.forward(cloud, &z);
                        let gt = sample.gt_box3d.as_ref().expect("training sample has gt");
                        losses.push(box_loss(&pred, gt));
                    }
                }
            }
            if losses.is_empty() {
                continue;
            }
            let count = losses.len();
            let mut total = losses[0].clone();
            for l in &losses[1..] {
                total = &total + l;
            }
            let batch_loss = total.scale(1.0 / count as f64);
            batch_loss.backward()?;
            adam.step(&params, lr_now);
            epoch_loss_sum += batch_loss.item() * count as f64;
            epoch_loss_count += count;
        }

        let epoch_loss = if epoch_loss_count > 0 {
            epoch_loss_sum / epoch_loss_count as f64
        } else {
            f64::NAN
        };
        epoch_losses.push(epoch_loss);

        // per-epoch checkpoint + optimizer sidecar, rolling keep-2
        let prefixes = model.output_prefixes(stage);
        let epath = epoch_ckpt_path(ckpt_out, epoch);
        model.save_prefixes(&epath, &prefixes)?;
        save_entries(&opt_path(&epath), &adam.export_state())?;
        if epoch >= 2 {
            let old = epoch_ckpt_path(ckpt_out, epoch - 2);
            let _ = fs::remove_file(&old);
            let _ = fs::remove_file(opt_path(&old));
        }

        let _ = writeln!(
            metrics,
            "{}",
            serde_json::json!({
                "epoch": epoch,
                "stage": stage.name(),
                "loss": epoch_loss,
                "lr": lr_now,
                "seconds": epoch_start.elapsed().as_secs_f64(),
            })
        );
        fs::write(&metrics_path, &metrics).map_err(Error::io_at(&metrics_path))?;
    }
    drop(params);

    let prefixes = model.output_prefixes(stage);
    model.save_prefixes(ckpt_out, &prefixes)?;

    Ok(TrainReport {
        stage: stage.name().into(),
        epochs: cfg.epochs,
        start_epoch,
        samples: samples.len(),
        skipped_samples: skipped,
        epoch_losses,
        wall_seconds: start.elapsed().as_secs_f64(),
        checkpoint: ckpt_out.to_path_buf(),
    })
}

// ------------------------------------------------------------- autolabel

#[derive(Debug, Clone, Serialize)]
pub struct AutolabelSummary {
    pub scenes: usize,
    pub failed_scenes: usize,
    pub objects_total: usize,
    pub labeled: usize,
    pub skipped: usize,
    pub wall_seconds: f64,
}

/// Verify a checkpoint carries every stage needed for inference, and load.
pub fn load_for_autolabel(model: &Model, path: &Path) -> Result<()> {
    let entries = load_entries(path)?;
    let mut required = vec![Stage::Seg, Stage::Box];
    if model.cfg.generation {
        required.insert(1, Stage::Gen);
    }
    for st in required {
        if !entries.iter().any(|e| e.name.starts_with(st.prefix())) {
            return Err(Error::StageDependency {
                stage: "autolabel".into(),
                missing: st.name().into(),
            });
        }
    }
    model.load_partial(path)?;
    Ok(())
}

/// Label every 2D box of the split with a pseudo 3D box. Writes one KITTI
/// label file per scene into `out_dir`, plus a summary and a skip log.
pub fn autolabel(
    data_root: &Path,
    split: DataSplit,
    cfg: &PipelineConfig,
    ckpt: &Path,
    out_dir: &Path,
) -> Result<(AutolabelSummary, Vec<SkipRecord>)> {
    let start = Instant::now();
    let model = Model::new(cfg, None)?;
    load_for_autolabel(&model, ckpt)?;
    fs::create_dir_all(out_dir).map_err(Error::io_at(out_dir))?;

    let ids = split_ids(data_root, split)?;
    let mut summary = AutolabelSummary {
        scenes: 0,
        failed_scenes: 0,
        objects_total: 0,
        labeled: 0,
        skipped: 0,
        wall_seconds: 0.0,
    };
    let mut skip_log: Vec<SkipRecord> = Vec::new();
    let scfg = sample_config(cfg, false);

    for id in &ids {
        let scene = match load_kitti_scene(data_root, id) {
            Ok(s) => s,
            Err(e) => {
                summary.failed_scenes += 1;
                skip_log.push(SkipRecord {
                    scene_id: id.clone(),
                    object_index: usize::MAX,
                    reason: format!("scene load failed: {e}"),
                });
                continue;
            }
        };
        summary.scenes += 1;
        summary.objects_total += scene.boxes2d.len();

        let mut rng = Rng::new(cfg.seed).derive(fnv1a(id));
        let (samples, skips) = build_object_samples(&scene, &scfg, &mut rng);
        summary.skipped += skips.len();
        skip_log.extend(skips);

        let mut labeled: Vec<LabeledBox> = Vec::new();
        for sample in &samples {
            let mut orng = Rng::new(cfg.seed)
                .derive(fnv1a(&sample.scene_id))
                .derive(sample.object_index as u64);
            let info = enrich_sample(&model, sample, &mut orng);
            let pred = no_grad(|| model.boxreg.forward(&info.cloud, &info.z)).to_box();
            labeled.push(LabeledBox {
                box3d: pred,
                box2d: sample.box2d,
                score: Some(1.0),
                meta: None,
            });
        }
        summary.labeled += labeled.len();
        save_kitti_label(&labeled, &scene.calib, &out_dir.join(format!("{id}.txt")))?;
    }

    summary.wall_seconds = start.elapsed().as_secs_f64();
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(Error::io_at(&summary_path))?;
    let mut log_text = String::new();
    for s in &skip_log {
        let _ = writeln!(log_text, "{}", serde_json::to_string(s)?);
    }
    let log_path = out_dir.join("skips.jsonl");
    fs::write(&log_path, log_text).map_err(Error::io_at(&log_path))?;
    Ok((summary, skip_log))
}

/// Mask-and-recover evaluation over a sample set with a fixed ratio:
/// returns (decoded, truth) pairs in meters for the recovery-error metric.
pub fn recovery_eval(
    model: &Model,
    samples: &[ObjectSample],
    ratio: f64,
    seed: u64,
) -> Result<Vec<([f64; 3], [f64; 3])>> {
    let Some(gen) = &model.gen else {
        return Ok(Vec::new());
    };
    let cfg = &model.cfg;
    let mut pairs = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        no_grad(|| -> Result<()> {
            let logits = segment_points(&model.point_seg, &sample.frustum, cfg.coord_scale);
            let p_prime = foreground_filter(&sample.frustum, &logits, cfg.fg_threshold);
            if p_prime.fg_count() < 2 {
                return Ok(());
            }
            let img = segment_image(&model.image_seg, &sample.crop);
            let f2d_full = bilinear_sample(&img.pixel_features, &p_prime.projections);
            let mut rng = Rng::new(seed).derive(i as u64);
            if let Some(mr) = mask_and_recover_loss(
                gen,
                &p_prime,
                &f2d_full,
                &mut rng,
                Some(ratio),
                (ratio, ratio),
            )? {
                for (d, t) in mr.decoded_m.iter().zip(&mr.truth_m) {
                    pairs.push((*d, *t));
                }
            }
            Ok(())
        })?;
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests;
