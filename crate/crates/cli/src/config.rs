use monobev::bev::GridConfig;
use monobev::synth::AugmentConfig;
use monobev::{BranchConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Every tunable of every subcommand in one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,

    // dataset generation
    pub n: usize,
    pub crop_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub clamp_targets: bool,

    // training
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_period: Option<usize>,
    pub momentum: f64,
    pub lambda_depth: f64,
    pub eval_every: usize,
    pub val_fraction: f64,
    pub augment: bool,
    pub augment_p: f64,

    // model
    pub feature_dim: usize,
    pub backbone_channels: [usize; 2],
    pub br2_widths: Vec<usize>,
    pub br3_widths: Vec<usize>,
    pub br4_widths: Vec<usize>,
    pub out_dim: usize,
    pub dropout_p: f64,
    pub backbone_trainable: bool,

    // inputs
    pub stage: Option<u8>,
    pub dataset: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub kitti_dir: Option<PathBuf>,

    // evaluation and rendering
    pub iou: Vec<f64>,
    pub tier: Option<String>,
    pub class_name: String,
    pub geometry: String,
    pub grid_resolution: f64,
    pub render_frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let model = BranchConfig::default();
        Self {
            out: PathBuf::from("out"),
            seed: synth.seed,
            n: synth.n_samples,
            crop_size: synth.crop_size,
            min_objects: synth.min_objects,
            max_objects: synth.max_objects,
            clamp_targets: synth.clamp_targets,
            epochs_stage1: train.epochs_stage1,
            epochs_stage2: train.epochs_stage2,
            batch_size: train.batch_size,
            lr0: train.lr0,
            decay_period: train.decay_period,
            momentum: train.momentum,
            lambda_depth: train.lambda_depth,
            eval_every: train.eval_every,
            val_fraction: train.val_fraction,
            augment: train.augment,
            augment_p: train.augmentation.probability,
            feature_dim: model.feature_dim,
            backbone_channels: model.backbone_channels,
            br2_widths: model.br2_widths,
            br3_widths: model.br3_widths,
            br4_widths: model.br4_widths,
            out_dim: model.out_dim,
            dropout_p: model.dropout_p,
            backbone_trainable: model.backbone_trainable,
            stage: None,
            dataset: None,
            ckpt: None,
            pred: None,
            gt: None,
            kitti_dir: None,
            iou: monobev::eval::IOU_THRESHOLDS.to_vec(),
            tier: None,
            class_name: "Car".into(),
            geometry: "bev".into(),
            grid_resolution: GridConfig::default().resolution,
            render_frames: 8,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_samples: self.n,
            seed: self.seed,
            crop_size: self.crop_size,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            clamp_targets: self.clamp_targets,
            ..SynthConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs_stage1: self.epochs_stage1,
            epochs_stage2: self.epochs_stage2,
            batch_size: self.batch_size,
            lr0: self.lr0,
            decay_period: self.decay_period,
            momentum: self.momentum,
            lambda_depth: self.lambda_depth,
            seed: self.seed,
            eval_every: self.eval_every,
            val_fraction: self.val_fraction,
            augment: self.augment,
            augmentation: AugmentConfig {
                probability: self.augment_p,
                ..AugmentConfig::default()
            },
        }
    }

    pub fn model(&self) -> BranchConfig {
        BranchConfig {
            feature_dim: self.feature_dim,
            backbone_channels: self.backbone_channels,
            br2_widths: self.br2_widths.clone(),
            br3_widths: self.br3_widths.clone(),
            br4_widths: self.br4_widths.clone(),
            out_dim: self.out_dim,
            dropout_p: self.dropout_p,
            backbone_trainable: self.backbone_trainable,
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            resolution: self.grid_resolution,
            ..GridConfig::default()
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.synth(), SynthConfig::default());
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.model(), BranchConfig::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"n": 12, "dropout_p": 0.0}"#).unwrap();
        assert_eq!(c.n, 12);
        assert_eq!(c.dropout_p, 0.0);
        assert_eq!(c.batch_size, 64);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
