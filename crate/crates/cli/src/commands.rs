use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use monobev::bev::{rasterize_grid, render_overlay};
use monobev::eval::{
    align_frames, evaluate_ap_table, frame_hit_rate, iou_hit_rate, prediction_label,
    write_ap_outputs, DetectionRecord, Geometry, GroundTruth,
};
use monobev::image::{write_image, ImageFormat};
use monobev::kitti::{denormalize_bbox, list_label_files, read_label_file, serialize_label_file};
use monobev::model::{Batch, Prediction};
use monobev::nn::checkpoint::Checkpoint;
use monobev::nn::gradcheck::layer_suite;
use monobev::synth::{load_dataset, make_dataset, worker_threads, Dataset, DatasetRecord};
use monobev::train::{
    split_indices, split_samples, train_stage1, train_stage2, SplitData, HISTORY_HEADER,
};
use monobev::{Difficulty, LabelRecord, Model, Sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const PREDICT_BATCH: usize = 256;
const GRAD_TOLERANCE: f64 = 1e-4;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn dataset_dir(cfg: &RunConfig) -> PathBuf {
    cfg.dataset.clone().unwrap_or_else(|| cfg.out.clone())
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let m = make_dataset(&cfg.synth(), &cfg.out, worker_threads())?;
    log::info!(
        "{} samples in {} frames -> {}",
        m.num_samples,
        m.num_frames,
        cfg.out.display()
    );
    Ok(())
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let dir = dataset_dir(cfg);
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(ds.records.into_iter().map(|r| r.sample).collect())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let samples = load_samples(cfg)?;
    let (train, val) = split_samples(&samples, cfg.val_fraction);
    log::info!("{} train / {} val samples", train.len(), val.len());
    let data = SplitData {
        train: &train,
        val: &val,
    };
    let history_path = cfg.out.join("history.csv");
    match cfg.stage {
        Some(1) => {
            let path = cfg.out.join("stage1.ckpt");
            let r = train_stage1(data, &cfg.train(), &cfg.model(), Some(&path))?;
            r.checkpoint(1).save(&path)?;
            r.history.write_csv(&history_path)?;
        }
        Some(2) => {
            let ck_path = cfg
                .ckpt
                .clone()
                .unwrap_or_else(|| cfg.out.join("stage1.ckpt"));
            if !ck_path.is_file() {
                bail!(
                    "stage 2 needs a stage-1 checkpoint; {} does not exist",
                    ck_path.display()
                );
            }
            let ck = Checkpoint::load(&ck_path)?;
            let path = cfg.out.join("stage2.ckpt");
            let r = train_stage2(data, &cfg.train(), &ck, Some(&path))?;
            r.checkpoint(2).save(&path)?;
            write(
                &history_path,
                &merge_history(&history_path, &r.history.to_csv()),
            )?;
        }
        other => bail!("unsupported stage {other:?}"),
    }
    log::info!("history -> {}", history_path.display());
    Ok(())
}

/// Keeps the stage-1 rows of an existing history file and appends the new
/// stage-2 rows.
fn merge_history(existing: &Path, stage2_csv: &str) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    if let Ok(old) = std::fs::read_to_string(existing) {
        for line in old.lines().skip(1).filter(|l| l.starts_with("1,")) {
            out.push_str(line);
            out.push('\n');
        }
    }
    for line in stage2_csv.lines().skip(1) {
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn tiers(cfg: &RunConfig) -> Result<Vec<Difficulty>> {
    match &cfg.tier {
        Some(t) => Ok(vec![t.parse().map_err(anyhow::Error::msg)?]),
        None => Ok(Difficulty::TIERS.to_vec()),
    }
}

fn read_label_dir(dir: &Path) -> Result<Vec<(String, Vec<LabelRecord>)>> {
    let mut out = Vec::new();
    for path in list_label_files(dir)? {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let recs = read_label_file(&path).with_context(|| path.display().to_string())?;
        out.push((id, recs));
    }
    Ok(out)
}

fn eval_label_dirs(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path) -> Result<()> {
    let geometry: Geometry = cfg.geometry.parse()?;
    let mut gts = Vec::new();
    for (id, recs) in read_label_dir(gt_dir)? {
        let boxes = recs
            .iter()
            .map(|r| {
                Ok(GroundTruth {
                    bbox: geometry.label_box(r)?,
                    class_name: r.class_name.clone(),
                    difficulty: r.difficulty(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        gts.push((id, boxes));
    }
    let mut preds = Vec::new();
    for (id, recs) in read_label_dir(pred_dir)? {
        let dets = recs
            .iter()
            .map(|r| {
                Ok(DetectionRecord {
                    bbox: geometry.label_box(r)?,
                    score: r.score.unwrap_or(1.0),
                    class_name: r.class_name.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        preds.push((id, dets));
    }
    let frames = align_frames(preds, gts)?;
    let cells = evaluate_ap_table(&frames, &cfg.iou, &tiers(cfg)?, &cfg.class_name);
    write_ap_outputs(&cells, &cfg.out)?;
    for c in &cells {
        log::info!(
            "AP {} @{}: {:.4} ({} gt, {} det)",
            c.tier,
            c.iou_thr,
            c.ap,
            c.num_gt,
            c.num_det
        );
    }
    let mut hits = String::from("iou_thr,hit_rate\n");
    for &thr in &cfg.iou {
        let h = frame_hit_rate(&frames, thr, &cfg.class_name);
        log::info!("hit rate @{thr}: {h:.4}");
        let _ = writeln!(hits, "{thr},{h:.6}");
    }
    write(&cfg.out.join("hit_rates.csv"), &hits)
}

/// Validation records of a dataset in split order with their predictions.
fn predict_val(
    ds: &Dataset,
    model: &Model,
    val_fraction: f64,
) -> Result<Vec<(DatasetRecord, Prediction)>> {
    let (_, val) = split_indices(ds.len(), val_fraction);
    let mut out = Vec::with_capacity(val.len());
    for chunk in val.chunks(PREDICT_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().map(|&i| &ds.records[i].sample).collect();
        let preds = model.predict(&Batch::from_samples(&refs))?;
        out.extend(chunk.iter().map(|&i| ds.records[i].clone()).zip(preds));
    }
    Ok(out)
}

fn load_model(cfg: &RunConfig) -> Result<(Model, u8)> {
    let Some(path) = &cfg.ckpt else {
        bail!("--ckpt is required");
    };
    let ck = Checkpoint::load(path)?;
    Ok((Model::from_checkpoint(&ck)?, ck.stage))
}

fn gt_label(rec: &DatasetRecord, bbox: monobev::Box2D, class_name: &str) -> LabelRecord {
    let b = rec.box3d;
    LabelRecord {
        class_name: class_name.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha: monobev::geometry::wrap_angle(b.yaw - b.x.atan2(b.z)),
        bbox,
        h: b.h,
        w: b.w,
        l: b.l,
        x: b.x,
        y: b.y,
        z: b.z,
        rotation_y: b.yaw,
        score: None,
    }
}

/// Predicts on the validation split, writes KITTI label directories, then
/// scores them like any other prediction set.
fn eval_checkpoint(cfg: &RunConfig) -> Result<()> {
    let (model, stage) = load_model(cfg)?;
    if stage != 2 {
        bail!("3D evaluation needs a stage-2 checkpoint (got stage {stage})");
    }
    let dir = dataset_dir(cfg);
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let k = ds.intrinsics();
    let (iw, ih) = (k.image_w as f64, k.image_h as f64);
    let pairs = predict_val(&ds, &model, cfg.val_fraction)?;

    let mut pred_frames: BTreeMap<String, Vec<LabelRecord>> = BTreeMap::new();
    let mut gt_frames: BTreeMap<String, Vec<LabelRecord>> = BTreeMap::new();
    for (rec, p) in &pairs {
        let id = format!("{:06}", rec.frame);
        let bbox = denormalize_bbox(&rec.sample.bbox_norm, iw, ih);
        pred_frames
            .entry(id.clone())
            .or_default()
            .push(prediction_label(p, bbox, &cfg.class_name)?);
        gt_frames
            .entry(id)
            .or_default()
            .push(gt_label(rec, bbox, &cfg.class_name));
    }
    let (pred_dir, gt_dir) = (cfg.out.join("pred"), cfg.out.join("gt"));
    for (dir, frames) in [(&pred_dir, &pred_frames), (&gt_dir, &gt_frames)] {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        for (id, recs) in frames {
            write(&dir.join(format!("{id}.txt")), &serialize_label_file(recs))?;
        }
    }

    // BR3 rectangles against their own targets
    let dets: Vec<_> = pairs.iter().map(|(_, p)| p.bev).collect();
    let gts: Vec<_> = pairs.iter().map(|(r, _)| r.sample.bev_rect).collect();
    let mut bev = String::from("iou_thr,hit_rate\n");
    for &thr in &cfg.iou {
        let h = iou_hit_rate(&dets, &gts, thr)?;
        log::info!("BR3 hit rate @{thr}: {h:.4}");
        let _ = writeln!(bev, "{thr},{h:.6}");
    }
    write(&cfg.out.join("bev_hit_rates.csv"), &bev)?;
    eval_label_dirs(cfg, &pred_dir, &gt_dir)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    match (&cfg.pred, &cfg.gt) {
        (Some(p), Some(g)) => eval_label_dirs(cfg, p, g),
        (None, None) if cfg.ckpt.is_some() => eval_checkpoint(cfg),
        _ => bail!("eval needs --pred and --gt, or --ckpt with --dataset"),
    }
}

pub fn render_bev(cfg: &RunConfig) -> Result<()> {
    let (model, _) = load_model(cfg)?;
    let dir = dataset_dir(cfg);
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let pairs = predict_val(&ds, &model, cfg.val_fraction)?;
    let mut frames: BTreeMap<usize, (Vec<_>, Vec<_>)> = BTreeMap::new();
    for (rec, p) in &pairs {
        let e = frames.entry(rec.frame).or_default();
        e.0.push(p.bev);
        e.1.push(rec.sample.bev_rect);
    }
    let grid = cfg.grid();
    for (frame, (pred, gt)) in frames.iter().take(cfg.render_frames) {
        let overlay = cfg.out.join(format!("bev_{frame:06}.ppm"));
        write_image(&render_overlay(pred, gt, &grid), &overlay, ImageFormat::Ppm)?;
        let occupancy = cfg.out.join(format!("grid_{frame:06}.pgm"));
        write_image(
            &rasterize_grid(pred, &grid).to_raster(),
            &occupancy,
            ImageFormat::Pgm,
        )?;
    }
    log::info!("rendered {} frames", frames.len().min(cfg.render_frames));
    Ok(())
}

pub fn inspect_labels(cfg: &RunConfig) -> Result<()> {
    let Some(dir) = &cfg.kitti_dir else {
        bail!("--kitti-dir is required");
    };
    let mut counts: BTreeMap<Difficulty, usize> = BTreeMap::new();
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    let files = list_label_files(dir)?;
    for path in &files {
        for r in read_label_file(path).with_context(|| path.display().to_string())? {
            *counts.entry(r.difficulty()).or_default() += 1;
            *classes.entry(r.class_name.clone()).or_default() += 1;
        }
    }
    let mut csv = String::from("difficulty,count\n");
    for d in Difficulty::TIERS.iter().chain([&Difficulty::Ignored]) {
        let _ = writeln!(csv, "{d},{}", counts.get(d).copied().unwrap_or(0));
    }
    print!("{csv}");
    for (c, n) in &classes {
        log::info!("class {c}: {n}");
    }
    log::info!("{} label files", files.len());
    write(&cfg.out.join("difficulty_histogram.csv"), &csv)
}

pub fn grad_check(cfg: &RunConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = layer_suite(&mut rng)?;
    reports.push(("composite", monobev::model::composite_grad_check(&mut rng)?));
    let mut csv = String::from("case,max_rel_error,checked,total\n");
    let mut worst = 0.0f64;
    for (name, r) in &reports {
        log::info!(
            "{name}: max relative error {:.3e} over {} of {}",
            r.max_rel_error,
            r.checked,
            r.total
        );
        let _ = writeln!(
            csv,
            "{name},{:e},{},{}",
            r.max_rel_error, r.checked, r.total
        );
        worst = worst.max(r.max_rel_error);
    }
    write(&cfg.out.join("grad_check.csv"), &csv)?;
    if worst > GRAD_TOLERANCE {
        bail!("gradient check failed: max relative error {worst:.3e} > {GRAD_TOLERANCE:e}");
    }
    Ok(())
}
