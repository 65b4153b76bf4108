//! Two-stage training. Stage 1 fits BR1..BR3 to the BEV rectangle corners;
//! stage 2 freezes them and fits BR4 to the 3D targets plus a depth
//! consistency penalty against the frozen BEV prediction.

use crate::geometry::{angle_diff, decode_yaw, iou_axis_aligned, BevRect, X_RANGE, Z_RANGE};
use crate::model::{encode_target, Batch, Branch, BranchConfig, Model, ModelError};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{mse_loss, LrSchedule, NnError, SgdMomentum, Tensor};
use crate::synth::{augment, AugmentConfig, Sample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint is from stage {found}, expected stage {expected}")]
    StageMismatch { expected: u8, found: u8 },
    #[error("frozen branches changed during stage 2 ({before} -> {after})")]
    FreezeViolation { before: String, after: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs between tenfold LR decays; `None` uses a quarter of the stage length.
    pub decay_period: Option<usize>,
    pub momentum: f64,
    pub lambda_depth: f64,
    pub seed: u64,
    /// Validation metrics and a rolling checkpoint every this many epochs
    /// (0 disables both until the end of the stage).
    pub eval_every: usize,
    pub val_fraction: f64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 50,
            epochs_stage2: 40,
            batch_size: 64,
            lr0: 0.01,
            decay_period: None,
            momentum: 0.9,
            lambda_depth: 0.1,
            seed: 7,
            eval_every: 1,
            val_fraction: 0.2,
            augment: true,
            augmentation: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs_stage1 == 0 || self.epochs_stage2 == 0 {
            return bad("epoch counts must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lambda_depth >= 0.0) {
            return bad("lambda_depth must be non-negative");
        }
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("lr0 must be positive and momentum in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn schedule(&self, stage: u8) -> LrSchedule {
        let epochs = if stage == 1 {
            self.epochs_stage1
        } else {
            self.epochs_stage2
        };
        let period = self
            .decay_period
            .unwrap_or_else(|| ((epochs as f64) * 0.25).round() as usize)
            .max(1);
        LrSchedule {
            lr0: self.lr0,
            period,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic split: indices are ranked by a hash of the index and the
/// lowest `round(n * val_fraction)` form the validation set. Both lists are
/// returned in ascending index order.
pub fn split_indices(n: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by_key(|&i| (splitmix64(i as u64), i));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let mut val = ranked[..n_val].to_vec();
    let mut train = ranked[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Validation metrics. Errors are in meters / degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalMetrics {
    pub mean_iou: f64,
    pub hit50: f64,
    pub hit75: f64,
    pub hit90: f64,
    /// BR4 depth error in stage 2, BEV-center depth error otherwise.
    pub med_z_err: f64,
    pub med_x_err: f64,
    pub med_dim_err: Option<f64>,
    pub med_yaw_deg: Option<f64>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

const EVAL_BATCH: usize = 256;

/// Eval-mode metrics of `model` on `val`; BR4 metrics when `with_br4`.
pub fn evaluate_epoch(model: &Model, val: &[Sample], with_br4: bool) -> Result<EvalMetrics> {
    let mut ious = Vec::with_capacity(val.len());
    let (mut z_err, mut x_err, mut dim_err, mut yaw_err) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for chunk in val.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let preds = model.predict(&Batch::from_samples(&refs))?;
        for (s, p) in chunk.iter().zip(preds) {
            ious.push(iou_axis_aligned(&p.bev, &s.bev_rect));
            if with_br4 {
                let (t, g) = (p.target, s.target);
                z_err.push(((t.tz - g.tz) * Z_RANGE).abs());
                x_err.push(((t.tx - g.tx) * X_RANGE).abs());
                let dims = ((t.tw - g.tw) * 1.5).abs()
                    + ((t.tl - g.tl) * 3.5).abs()
                    + ((t.th - g.th) * 1.5).abs();
                dim_err.push(dims / 3.0);
                let gy = g.tsin.atan2(g.tcos);
                let py = decode_yaw(t.tsin, t.tcos).unwrap_or(0.0);
                yaw_err.push(angle_diff(py, gy).abs().to_degrees());
            } else {
                z_err.push(((p.bev.center_z() - s.bev_rect.center_z()) * Z_RANGE).abs());
                x_err.push(((p.bev.center_x() - s.bev_rect.center_x()) * X_RANGE).abs());
            }
        }
    }
    let n = ious.len().max(1) as f64;
    let hit = |thr: f64| ious.iter().filter(|&&v| v >= thr).count() as f64 / n;
    Ok(EvalMetrics {
        mean_iou: ious.iter().sum::<f64>() / n,
        hit50: hit(0.5),
        hit75: hit(0.75),
        hit90: hit(0.9),
        med_z_err: median(&mut z_err),
        med_x_err: median(&mut x_err),
        med_dim_err: with_br4.then(|| median(&mut dim_err)),
        med_yaw_deg: with_br4.then(|| median(&mut yaw_err)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub loc: f64,
    pub dim: f64,
    pub yaw: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossParts,
    pub val: Option<EvalMetrics>,
}

pub const HISTORY_HEADER: &str = "stage,epoch,lr,loss_total,loss_loc,loss_dim,loss_yaw,loss_depth,val_mean_iou,val_hit50,val_hit75,val_hit90,val_med_z_err,val_med_yaw_deg";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let stage2 = r.stage == 2;
            let part = |v: f64| if stage2 { v.to_string() } else { String::new() };
            let v = r.val.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.stage,
                r.epoch,
                r.lr,
                r.loss.total,
                part(r.loss.loc),
                part(r.loss.dim),
                part(r.loss.yaw),
                part(r.loss.depth),
                opt(v.map(|m| m.mean_iou)),
                opt(v.map(|m| m.hit50)),
                opt(v.map(|m| m.hit75)),
                opt(v.map(|m| m.hit90)),
                opt(v.map(|m| m.med_z_err)),
                opt(v.and_then(|m| m.med_yaw_deg)),
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Squared gap between BR4's normalized depth and the BEV rectangle's
/// center depth.
pub fn depth_penalty(pred_bev: &BevRect, tz_pred: f64) -> f64 {
    let d = tz_pred - pred_bev.center_z();
    d * d
}

/// Train and validation samples for one run.
#[derive(Debug, Clone, Copy)]
pub struct SplitData<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub model: Model,
    pub history: TrainHistory,
    pub rng: ChaCha8Rng,
    pub epochs_done: usize,
}

impl StageResult {
    pub fn checkpoint(&self, stage: u8) -> Checkpoint {
        self.model.to_checkpoint(self.epochs_done, stage, &self.rng)
    }
}

fn run_rng(seed: u64, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

fn save(ck: &Checkpoint, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        ck.save(p)?;
    }
    Ok(())
}

fn batch_samples(
    data: &[Sample],
    idx: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    idx.iter()
        .map(|&i| {
            if cfg.augment {
                augment(&data[i], rng, &cfg.augmentation)
            } else {
                data[i].clone()
            }
        })
        .collect()
}

fn should_eval(cfg: &TrainConfig, epoch: usize, last: usize) -> bool {
    epoch + 1 == last || (cfg.eval_every > 0 && (epoch + 1).is_multiple_of(cfg.eval_every))
}

/// Fresh stage-1 run.
pub fn train_stage1(
    data: SplitData<'_>,
    cfg: &TrainConfig,
    model_cfg: &BranchConfig,
    ckpt_path: Option<&Path>,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut rng = run_rng(cfg.seed, 1);
    let model = Model::new(model_cfg.clone(), &mut rng)?;
    run_stage1(data, cfg, model, rng, 0, ckpt_path)
}

/// Continues stage 1 from a checkpoint written after `ck.epoch` epochs.
pub fn resume_stage1(
    data: SplitData<'_>,
    cfg: &TrainConfig,
    ck: &Checkpoint,
    ckpt_path: Option<&Path>,
) -> Result<StageResult> {
    cfg.validate()?;
    if ck.stage != 1 {
        return Err(TrainError::StageMismatch {
            expected: 1,
            found: ck.stage,
        });
    }
    let model = Model::from_checkpoint(ck)?;
    let rng = ck.rng.restore()?;
    run_stage1(data, cfg, model, rng, ck.epoch, ckpt_path)
}

fn run_stage1(
    data: SplitData<'_>,
    cfg: &TrainConfig,
    mut model: Model,
    mut rng: ChaCha8Rng,
    start: usize,
    ckpt_path: Option<&Path>,
) -> Result<StageResult> {
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let bt = model.config.backbone_trainable;
    model.set_trainable(Branch::Br1, bt);
    model.set_trainable(Branch::Br2, true);
    model.set_trainable(Branch::Br3, true);
    model.set_trainable(Branch::Br4, false);
    let schedule = cfg.schedule(1);
    let mut opt = SgdMomentum::new(cfg.momentum, schedule.lr(start));
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in start..cfg.epochs_stage1 {
        opt.lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let samples = batch_samples(data.train, idx, cfg, &mut rng);
            let refs: Vec<&Sample> = samples.iter().collect();
            let x = Batch::from_samples(&refs);
            let target = Tensor::new(
                vec![idx.len(), 4],
                samples.iter().flat_map(|s| s.bev_rect.to_array()).collect(),
            )?;
            model.zero_grad();
            let heads = model.forward(&x, true, false, &mut rng)?;
            let (loss, grad) = mse_loss(&heads.bev, &target)?;
            model.backward(Some(grad), None)?;
            opt.step(&mut model.trainable_params_mut())?;
            loss_sum += loss * idx.len() as f64;
        }
        model.clear_cache();
        let val = if should_eval(cfg, epoch, cfg.epochs_stage1) && !data.val.is_empty() {
            Some(evaluate_epoch(&model, data.val, false)?)
        } else {
            None
        };
        let loss_total = loss_sum / data.train.len() as f64;
        log::info!(
            "stage 1 epoch {epoch}: lr {} loss {loss_total:.6}{}",
            opt.lr,
            val.map(|m| format!(" val iou {:.4} hit50 {:.4}", m.mean_iou, m.hit50))
                .unwrap_or_default()
        );
        history.rows.push(HistoryRow {
            stage: 1,
            epoch,
            lr: opt.lr,
            loss: LossParts {
                total: loss_total,
                ..LossParts::default()
            },
            val,
        });
        if should_eval(cfg, epoch, cfg.epochs_stage1) {
            save(&model.to_checkpoint(epoch + 1, 1, &rng), ckpt_path)?;
        }
    }
    Ok(StageResult {
        model,
        history,
        rng,
        epochs_done: cfg.epochs_stage1,
    })
}

fn loss_parts(pred: &Tensor, gt: &Tensor, out_dim: usize) -> (f64, f64, f64) {
    let n = pred.batch().max(1) as f64;
    let (mut loc, mut dim, mut yaw) = (0.0, 0.0, 0.0);
    for (p, g) in pred
        .values
        .chunks_exact(out_dim)
        .zip(gt.values.chunks_exact(out_dim))
    {
        for (k, (a, b)) in p.iter().zip(g).enumerate() {
            let r = (a - b) * (a - b);
            match k {
                0..=2 => loc += r,
                3..=5 => dim += r,
                _ => yaw += r,
            }
        }
    }
    (loc / n, dim / n, yaw / n)
}

/// Stage 2 from a stage-1 checkpoint. BR1..BR3 stay frozen and run in eval
/// mode; their parameter digest is verified after the last epoch.
pub fn train_stage2(
    data: SplitData<'_>,
    cfg: &TrainConfig,
    stage1: &Checkpoint,
    ckpt_path: Option<&Path>,
) -> Result<StageResult> {
    cfg.validate()?;
    if stage1.stage != 1 {
        return Err(TrainError::StageMismatch {
            expected: 1,
            found: stage1.stage,
        });
    }
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = Model::from_checkpoint(stage1)?;
    for b in [Branch::Br1, Branch::Br2, Branch::Br3] {
        model.set_trainable(b, false);
    }
    model.set_trainable(Branch::Br4, true);
    let frozen = [Branch::Br1, Branch::Br2, Branch::Br3];
    let before = model.branches_digest(&frozen);
    let out_dim = model.config.out_dim;
    let mut rng = run_rng(cfg.seed, 2);
    let schedule = cfg.schedule(2);
    let mut opt = SgdMomentum::new(cfg.momentum, schedule.lr(0));
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs_stage2 {
        opt.lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        for idx in order.chunks(cfg.batch_size) {
            let n = idx.len();
            let samples = batch_samples(data.train, idx, cfg, &mut rng);
            let refs: Vec<&Sample> = samples.iter().collect();
            let x = Batch::from_samples(&refs);
            let gt = Tensor::new(
                vec![n, out_dim],
                samples
                    .iter()
                    .flat_map(|s| encode_target(&s.target, out_dim))
                    .collect(),
            )?;
            model.zero_grad();
            let heads = model.forward(&x, true, true, &mut rng)?;
            let pred = heads.target.expect("BR4 requested");
            let (_, mut grad) = mse_loss(&pred, &gt)?;
            let (loc, dim, yaw) = loss_parts(&pred, &gt, out_dim);
            let mut depth = 0.0;
            for i in 0..n {
                let r = heads.bev.row(i);
                let bev = BevRect::new(r[0], r[1], r[2], r[3]);
                let tz = pred.values[i * out_dim + 2];
                depth += depth_penalty(&bev, tz);
                grad.values[i * out_dim + 2] +=
                    cfg.lambda_depth * 2.0 * (tz - bev.center_z()) / n as f64;
            }
            depth /= n as f64;
            model.backward(None, Some(grad))?;
            opt.step(&mut model.trainable_params_mut())?;
            let w = n as f64;
            sums.loc += loc * w;
            sums.dim += dim * w;
            sums.yaw += yaw * w;
            sums.depth += depth * w;
        }
        model.clear_cache();
        let m = data.train.len() as f64;
        let mut loss = LossParts {
            total: 0.0,
            loc: sums.loc / m,
            dim: sums.dim / m,
            yaw: sums.yaw / m,
            depth: sums.depth / m,
        };
        loss.total = loss.loc + loss.dim + loss.yaw + cfg.lambda_depth * loss.depth;
        let val = if should_eval(cfg, epoch, cfg.epochs_stage2) && !data.val.is_empty() {
            Some(evaluate_epoch(&model, data.val, true)?)
        } else {
            None
        };
        log::info!(
            "stage 2 epoch {epoch}: lr {} loss {:.6}{}",
            opt.lr,
            loss.total,
            val.map(|m| format!(
                " val z {:.3} m yaw {:.2} deg",
                m.med_z_err,
                m.med_yaw_deg.unwrap_or(f64::NAN)
            ))
            .unwrap_or_default()
        );
        history.rows.push(HistoryRow {
            stage: 2,
            epoch,
            lr: opt.lr,
            loss,
            val,
        });
        if should_eval(cfg, epoch, cfg.epochs_stage2) {
            save(&model.to_checkpoint(epoch + 1, 2, &rng), ckpt_path)?;
        }
    }
    let after = model.branches_digest(&frozen);
    if before != after {
        return Err(TrainError::FreezeViolation { before, after });
    }
    Ok(StageResult {
        model,
        history,
        rng,
        epochs_done: cfg.epochs_stage2,
    })
}

/// Drops `val_fraction` of `samples` into a validation set.
pub fn split_samples(samples: &[Sample], val_fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let (tr, va) = split_indices(samples.len(), val_fraction);
    (
        tr.iter().map(|&i| samples[i].clone()).collect(),
        va.iter().map(|&i| samples[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::synth::{make_sample, sample_scene, SynthConfig};

    pub(crate) fn tiny_samples(n: usize, seed: u64) -> Vec<Sample> {
        let cfg = SynthConfig {
            crop_size: 16,
            max_objects: 1,
            ..SynthConfig::default()
        };
        let k = CameraIntrinsics::kitti_like();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let scene = sample_scene(&mut rng, &cfg).unwrap();
                make_sample(&k, &scene.objects[0], 16, false, &mut rng)
                    .unwrap()
                    .0
            })
            .collect()
    }

    fn tiny_model() -> BranchConfig {
        BranchConfig {
            feature_dim: 4,
            backbone_channels: [2, 4],
            br2_widths: vec![8, 8, 8, 256],
            br3_widths: vec![16, 16, 8, 8, 8, 8, 8, 4],
            br4_widths: vec![16, 16, 8, 8, 8, 8, 8, 8],
            ..BranchConfig::default()
        }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs_stage1: 3,
            epochs_stage2: 2,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let (tr, va) = split_indices(5000, 0.2);
        assert_eq!((tr.len(), va.len()), (4000, 1000));
        assert_eq!(split_indices(5000, 0.2), (tr.clone(), va.clone()));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..5000).collect::<Vec<_>>());
    }

    #[test]
    fn penalty_examples() {
        let bev = BevRect::new(-0.1, 0.1, 0.1, 0.3);
        assert_eq!(depth_penalty(&bev, 0.2), 0.0);
        assert!((depth_penalty(&bev, 0.4) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn schedule_scales_with_stage_length() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.schedule(1).period, 13);
        assert_eq!(cfg.schedule(2).period, 10);
        let fixed = TrainConfig {
            decay_period: Some(100),
            ..cfg
        };
        assert_eq!(fixed.schedule(1).lr(250), 0.0001);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn perfect_metrics_for_ground_truth() {
        // evaluate the metric code path with a perfect predictor by
        // comparing the ground truth against itself
        let samples = tiny_samples(5, 3);
        let ious: Vec<f64> = samples
            .iter()
            .map(|s| iou_axis_aligned(&s.bev_rect, &s.bev_rect))
            .collect();
        assert!(ious.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn stage_runs_are_reproducible_and_freeze_holds() {
        let samples = tiny_samples(12, 1);
        let (train, val) = split_samples(&samples, 0.25);
        let data = SplitData {
            train: &train,
            val: &val,
        };
        let cfg = quick_cfg();
        let a = train_stage1(data, &cfg, &tiny_model(), None).unwrap();
        let b = train_stage1(data, &cfg, &tiny_model(), None).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        let first = a.history.rows[0].loss.total;
        assert!(first.is_finite() && first > 0.0);
        for (i, r) in a.history.rows.iter().enumerate() {
            assert_eq!(r.lr, cfg.schedule(1).lr(i));
        }
        let ck = a.checkpoint(1);
        let s2 = train_stage2(data, &cfg, &ck, None).unwrap();
        let frozen = [Branch::Br1, Branch::Br2, Branch::Br3];
        assert_eq!(
            s2.model.branches_digest(&frozen),
            a.model.branches_digest(&frozen)
        );
        for r in &s2.history.rows {
            let l = r.loss;
            assert!((l.total - (l.loc + l.dim + l.yaw + cfg.lambda_depth * l.depth)).abs() < 1e-12);
        }
        assert!(matches!(
            train_stage2(data, &cfg, &s2.checkpoint(2), None),
            Err(TrainError::StageMismatch { .. })
        ));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let data = SplitData {
            train: &[],
            val: &[],
        };
        assert!(matches!(
            train_stage1(data, &quick_cfg(), &tiny_model(), None),
            Err(TrainError::EmptyDataset)
        ));
    }
}
