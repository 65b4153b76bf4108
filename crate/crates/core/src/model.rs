//! The four-branch network: an image backbone (BR1), a bounding-box encoder
//! (BR2), the BEV rectangle head (BR3) and the 3D property head (BR4).

use crate::geometry::{BevRect, TargetVector};
use crate::nn::checkpoint::{copy_params, Checkpoint, RngState};
use crate::nn::gradcheck::{grad_check, Differentiable, GradCheckReport};
use crate::nn::{mse_loss, LayerSpec, NnError, Param, Sequential, Tensor};
use crate::synth::Sample;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown branch `{0}` (expected br1, br2, br3 or br4)")]
    UnknownBranch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint has no `{0}` network")]
    MissingNetwork(&'static str),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Br1,
    Br2,
    Br3,
    Br4,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::Br1, Branch::Br2, Branch::Br3, Branch::Br4];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Br1 => "br1",
            Branch::Br2 => "br2",
            Branch::Br3 => "br3",
            Branch::Br4 => "br4",
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Branch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "br1" | "1" | "backbone" => Ok(Branch::Br1),
            "br2" | "2" => Ok(Branch::Br2),
            "br3" | "3" => Ok(Branch::Br3),
            "br4" | "4" => Ok(Branch::Br4),
            _ => Err(ModelError::UnknownBranch(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchConfig {
    pub feature_dim: usize,
    /// Output channels of the first two conv blocks; the third emits `feature_dim`.
    pub backbone_channels: [usize; 2],
    pub br2_widths: Vec<usize>,
    pub br3_widths: Vec<usize>,
    pub br4_widths: Vec<usize>,
    pub out_dim: usize,
    pub dropout_p: f64,
    pub backbone_trainable: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            backbone_channels: [8, 16],
            br2_widths: vec![64, 128, 256, 256],
            br3_widths: vec![128, 128, 64, 64, 32, 32, 16, 4],
            br4_widths: vec![128, 128, 64, 64, 32, 32, 16, 8],
            out_dim: 8,
            dropout_p: 0.25,
            backbone_trainable: true,
        }
    }
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.feature_dim == 0 || self.backbone_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.br2_widths.len() != 4 || self.br2_widths.last() != Some(&256) {
            return bad("br2_widths must list 4 layers ending in 256".into());
        }
        if self.br3_widths.len() != 8 || self.br3_widths.last() != Some(&4) {
            return bad("br3_widths must list 8 layers ending in 4".into());
        }
        if !matches!(self.out_dim, 7 | 8) {
            return bad(format!("out_dim {} must be 7 or 8", self.out_dim));
        }
        if self.br4_widths.len() != 8 || self.br4_widths.last() != Some(&self.out_dim) {
            return bad(format!(
                "br4_widths must list 8 layers ending in {}",
                self.out_dim
            ));
        }
        if self
            .br2_widths
            .iter()
            .chain(&self.br3_widths)
            .chain(&self.br4_widths)
            .any(|&w| w == 0)
        {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must lie in [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn semantic_dim(&self) -> usize {
        self.feature_dim + 256
    }

    pub fn backbone_specs(&self) -> Vec<LayerSpec> {
        let chans = [
            1,
            self.backbone_channels[0],
            self.backbone_channels[1],
            self.feature_dim,
        ];
        let mut specs = Vec::new();
        for pair in chans.windows(2) {
            specs.push(LayerSpec::Conv3x3 {
                in_channels: pair[0],
                out_channels: pair[1],
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::AvgPool2);
        }
        specs.push(LayerSpec::GlobalAvgPool);
        specs
    }

    pub fn br2_specs(&self) -> Vec<LayerSpec> {
        mlp(4, &self.br2_widths, 0.0, None)
    }

    pub fn br3_specs(&self) -> Vec<LayerSpec> {
        mlp(
            self.semantic_dim(),
            &self.br3_widths,
            self.dropout_p,
            Some(LayerSpec::Tanh),
        )
    }

    pub fn br4_specs(&self) -> Vec<LayerSpec> {
        mlp(
            self.semantic_dim(),
            &self.br4_widths,
            self.dropout_p,
            Some(LayerSpec::Tanh),
        )
    }
}

/// Fully connected stack: ReLU (and dropout when `p > 0`) after every
/// hidden layer, `head` after the last one.
fn mlp(inputs: usize, widths: &[usize], p: f64, head: Option<LayerSpec>) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = inputs;
    for (i, &w) in widths.iter().enumerate() {
        specs.push(LayerSpec::Dense {
            inputs: prev,
            outputs: w,
        });
        if i + 1 < widths.len() {
            specs.push(LayerSpec::Relu);
            if p > 0.0 {
                specs.push(LayerSpec::Dropout { p });
            }
        }
        prev = w;
    }
    specs.extend(head);
    specs
}

/// Batched network input.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 1, S, S]`
    pub crops: Tensor,
    /// `[N, 4]`
    pub bboxes: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Self {
        let n = samples.len();
        let s = samples.first().map_or(0, |x| x.crop.width);
        let mut crops = Vec::with_capacity(n * s * s);
        let mut bboxes = Vec::with_capacity(n * 4);
        for x in samples {
            crops.extend_from_slice(&x.crop.data);
            bboxes.extend_from_slice(&x.bbox_norm.to_array());
        }
        Self {
            crops: Tensor::new(vec![n, 1, s, s], crops).expect("square crops of one size"),
            bboxes: Tensor::new(vec![n, 4], bboxes).expect("4 bbox values"),
        }
    }

    pub fn len(&self) -> usize {
        self.bboxes.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Head outputs: BR3 rectangles `[N, 4]` and BR4 targets `[N, out_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub bev: Tensor,
    pub target: Option<Tensor>,
}

/// One decoded prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Canonicalized BR3 rectangle.
    pub bev: BevRect,
    pub target: TargetVector,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: BranchConfig,
    pub backbone: Sequential,
    pub br2: Sequential,
    pub br3: Sequential,
    pub br4: Sequential,
    trainable: [bool; 4],
}

impl Model {
    pub fn new(config: BranchConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let backbone = Sequential::from_specs(&config.backbone_specs(), rng)?;
        let br2 = Sequential::from_specs(&config.br2_specs(), rng)?;
        let br3 = Sequential::from_specs(&config.br3_specs(), rng)?;
        let br4 = Sequential::from_specs(&config.br4_specs(), rng)?;
        let mut m = Self {
            config,
            backbone,
            br2,
            br3,
            br4,
            trainable: [true; 4],
        };
        let bt = m.config.backbone_trainable;
        m.set_trainable(Branch::Br1, bt);
        Ok(m)
    }

    pub fn branch(&self, b: Branch) -> &Sequential {
        match b {
            Branch::Br1 => &self.backbone,
            Branch::Br2 => &self.br2,
            Branch::Br3 => &self.br3,
            Branch::Br4 => &self.br4,
        }
    }

    pub fn branch_mut(&mut self, b: Branch) -> &mut Sequential {
        match b {
            Branch::Br1 => &mut self.backbone,
            Branch::Br2 => &mut self.br2,
            Branch::Br3 => &mut self.br3,
            Branch::Br4 => &mut self.br4,
        }
    }

    pub fn set_trainable(&mut self, b: Branch, flag: bool) {
        self.trainable[b as usize] = flag;
        self.branch_mut(b).set_frozen(!flag);
    }

    pub fn is_trainable(&self, b: Branch) -> bool {
        self.trainable[b as usize]
    }

    /// Trainable parameters in a fixed branch order.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let t = self.trainable;
        let mut out = Vec::new();
        for (i, net) in [
            &mut self.backbone,
            &mut self.br2,
            &mut self.br3,
            &mut self.br4,
        ]
        .into_iter()
        .enumerate()
        {
            if t[i] {
                out.extend(net.params_mut());
            }
        }
        out
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.backbone.params_mut();
        out.extend(self.br2.params_mut());
        out.extend(self.br3.params_mut());
        out.extend(self.br4.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for b in Branch::ALL {
            self.branch_mut(b).zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        for b in Branch::ALL {
            self.branch_mut(b).clear_cache();
        }
    }

    /// Caching forward pass. A branch runs in train mode only when `train`
    /// is set and the branch is trainable, so frozen branches never draw
    /// dropout masks. BR4 runs only when `with_br4` is set.
    pub fn forward(
        &mut self,
        x: &Batch,
        train: bool,
        with_br4: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Heads> {
        let t = self.trainable;
        let feat = self.backbone.forward(x.crops.clone(), train && t[0], rng)?;
        let enc = self.br2.forward(x.bboxes.clone(), train && t[1], rng)?;
        let sem = semantic_concat(&feat, &enc, self.config.feature_dim)?;
        let bev = self.br3.forward(sem.clone(), train && t[2], rng)?;
        let target = if with_br4 {
            Some(self.br4.forward(sem, train && t[3], rng)?)
        } else {
            None
        };
        Ok(Heads { bev, target })
    }

    /// Backpropagates head gradients from the last [`Model::forward`].
    /// Gradients stop at the semantic vector once neither BR1 nor BR2 trains.
    pub fn backward(
        &mut self,
        grad_bev: Option<Tensor>,
        grad_target: Option<Tensor>,
    ) -> Result<()> {
        let t = self.trainable;
        let upstream = t[0] || t[1];
        let mut g_sem: Option<Tensor> = None;
        if let Some(g) = grad_target {
            g_sem = self.br4.backward(g, upstream)?;
        }
        if let Some(g) = grad_bev {
            if let Some(g3) = self.br3.backward(g, upstream)? {
                g_sem = Some(match g_sem {
                    Some(mut acc) => {
                        acc.values
                            .iter_mut()
                            .zip(&g3.values)
                            .for_each(|(a, b)| *a += b);
                        acc
                    }
                    None => g3,
                });
            }
        }
        if let Some(g) = g_sem {
            let (g_feat, g_enc) = g.split_rows(self.config.feature_dim)?;
            if t[0] {
                self.backbone.backward(g_feat, false)?;
            }
            if t[1] {
                self.br2.backward(g_enc, false)?;
            }
        }
        Ok(())
    }

    /// Eval-mode forward through `&self`.
    pub fn infer(&self, x: &Batch, with_br4: bool) -> Result<Heads> {
        let feat = self.backbone.infer(x.crops.clone())?;
        let enc = self.br2.infer(x.bboxes.clone())?;
        let sem = semantic_concat(&feat, &enc, self.config.feature_dim)?;
        let bev = self.br3.infer(sem.clone())?;
        let target = if with_br4 {
            Some(self.br4.infer(sem)?)
        } else {
            None
        };
        Ok(Heads { bev, target })
    }

    pub fn backbone_forward(&self, crops: &Tensor) -> Result<Tensor> {
        Ok(self.backbone.infer(crops.clone())?)
    }

    pub fn br2_forward(&self, bboxes: &Tensor) -> Result<Tensor> {
        Ok(self.br2.infer(bboxes.clone())?)
    }

    pub fn br3_forward(&self, semantic: &Tensor) -> Result<Tensor> {
        semantic.expect_shape(&[semantic.batch(), self.config.semantic_dim()])?;
        Ok(self.br3.infer(semantic.clone())?)
    }

    pub fn br4_forward(&self, semantic: &Tensor) -> Result<Tensor> {
        semantic.expect_shape(&[semantic.batch(), self.config.semantic_dim()])?;
        Ok(self.br4.infer(semantic.clone())?)
    }

    /// Decoded, canonicalized predictions for every item of `x`.
    pub fn predict(&self, x: &Batch) -> Result<Vec<Prediction>> {
        let heads = self.infer(x, true)?;
        let target = heads.target.expect("BR4 requested");
        let d = self.config.out_dim;
        Ok((0..x.len())
            .map(|i| {
                let r = heads.bev.row(i);
                Prediction {
                    bev: BevRect::new(r[0], r[1], r[2], r[3]).canonical(),
                    target: decode_target(&target.values[i * d..(i + 1) * d]),
                }
            })
            .collect())
    }

    /// Little-endian parameter bytes of one branch.
    pub fn branch_blob(&self, b: Branch) -> Vec<u8> {
        let mut out = Vec::new();
        for p in self.branch(b).params() {
            for v in &p.value.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// SHA-256 over the concatenated blobs of `branches`, hex encoded.
    pub fn branches_digest(&self, branches: &[Branch]) -> String {
        let mut h = Sha256::new();
        for &b in branches {
            h.update(self.branch_blob(b));
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self, epoch: usize, stage: u8, rng: &ChaCha8Rng) -> Checkpoint {
        Checkpoint {
            epoch,
            stage,
            rng: RngState::capture(rng),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            networks: Branch::ALL
                .iter()
                .map(|&b| (b.name().to_string(), self.branch(b).clone()))
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint. The stored config must describe
    /// the stored networks.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: BranchConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let mut scratch = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::new(config, &mut scratch)?;
        m.load_weights(ck)?;
        Ok(m)
    }

    /// Copies all branch weights from `ck`; architectures must match.
    pub fn load_weights(&mut self, ck: &Checkpoint) -> Result<()> {
        for b in Branch::ALL {
            let src = ck
                .network(b.name())
                .ok_or(ModelError::MissingNetwork(b.name()))?;
            copy_params(self.branch_mut(b), src)?;
        }
        Ok(())
    }
}

/// Feature vector followed by the bbox encoding.
pub fn semantic_concat(feature: &Tensor, encoding: &Tensor, feature_dim: usize) -> Result<Tensor> {
    feature.expect_shape(&[feature.batch(), feature_dim])?;
    encoding.expect_shape(&[feature.batch(), 256])?;
    Ok(Tensor::concat_rows(feature, encoding)?)
}

/// Interprets one BR4 output row (7 or 8 values).
pub fn decode_target(row: &[f64]) -> TargetVector {
    match row.len() {
        8 => TargetVector::from_array(row.try_into().expect("8 values")),
        7 => TargetVector::from_array7(row.try_into().expect("7 values")),
        n => panic!("BR4 rows have 7 or 8 values, got {n}"),
    }
}

/// Training target row for BR4 in the configured layout.
pub fn encode_target(t: &TargetVector, out_dim: usize) -> Vec<f64> {
    if out_dim == 7 {
        t.to_array7().to_vec()
    } else {
        t.to_array().to_vec()
    }
}

/// Summed BR3 and BR4 MSE on a fixed batch, for gradient checking the
/// whole network at once.
pub struct CompositeLoss<'a> {
    pub model: &'a mut Model,
    pub x: Batch,
    pub bev: Tensor,
    pub target: Tensor,
}

fn nn_err(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(e) => e,
        other => NnError::Format(other.to_string()),
    }
}

impl Differentiable for CompositeLoss<'_> {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.all_params_mut()
    }

    fn loss(&mut self) -> crate::nn::Result<f64> {
        let h = self.model.infer(&self.x, true).map_err(nn_err)?;
        let target = h.target.as_ref().expect("BR4 requested");
        Ok(mse_loss(&h.bev, &self.bev)?.0 + mse_loss(target, &self.target)?.0)
    }

    fn loss_and_grad(&mut self) -> crate::nn::Result<f64> {
        // eval mode, so the rng is never drawn from
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let h = self
            .model
            .forward(&self.x, false, true, &mut rng)
            .map_err(nn_err)?;
        let (l3, g3) = mse_loss(&h.bev, &self.bev)?;
        let (l4, g4) = mse_loss(h.target.as_ref().expect("BR4 requested"), &self.target)?;
        self.model.backward(Some(g3), Some(g4)).map_err(nn_err)?;
        Ok(l3 + l4)
    }
}

/// Gradient check of the full four-branch model at a reduced size, with
/// random inputs and targets.
pub fn composite_grad_check(rng: &mut dyn RngCore) -> crate::nn::Result<GradCheckReport> {
    let cfg = BranchConfig {
        feature_dim: 4,
        backbone_channels: [2, 3],
        br2_widths: vec![6, 5, 7, 256],
        br3_widths: vec![6, 6, 5, 5, 4, 4, 3, 4],
        br4_widths: vec![6, 6, 5, 5, 4, 4, 3, 8],
        ..BranchConfig::default()
    };
    let mut model = Model::new(cfg, rng).map_err(nn_err)?;
    for p in model.all_params_mut() {
        p.value
            .values
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let (n, s) = (3, 8);
    let mut uniform = |len: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(lo..hi)).collect()
    };
    let x = Batch {
        crops: Tensor::new(vec![n, 1, s, s], uniform(n * s * s, 0.0, 1.0))?,
        bboxes: Tensor::new(vec![n, 4], uniform(n * 4, -1.0, 1.0))?,
    };
    let bev = Tensor::new(vec![n, 4], uniform(n * 4, -0.9, 0.9))?;
    let target = Tensor::new(vec![n, 8], uniform(n * 8, -0.9, 0.9))?;
    let mut prob = CompositeLoss {
        model: &mut model,
        x,
        bev,
        target,
    };
    grad_check(&mut prob, 1e-5, 600, rng)
}
