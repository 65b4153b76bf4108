//! Synthetic scenes standing in for real driving imagery.
//!
//! Vehicles are sampled in the camera frame, projected through a pinhole
//! camera and rendered as small grayscale crops whose shading encodes depth
//! (base intensity falls off linearly with z) and whose wireframe and lit
//! face encode orientation.

use crate::geometry::{
    bev_axis_aligned_normalized, bev_footprint, box_corners_3d, frontal_bbox, iou_rotated,
    normalize_targets, normalize_targets_clamped, project_point, BevRect, Box2D, Box3D,
    CameraIntrinsics, GeometryError, Point3, TargetVector, BOX_EDGES, BOX_FACES,
};
use crate::image::{GrayImage, ImageError, ImageFormat, Raster};
use crate::kitti::{self, difficulty_for, Difficulty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "MONO_BEV3D_THREADS";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place object {object} after {attempts} attempts")]
    CannotPlace { object: usize, attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Kitti(#[from] kitti::KittiError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("index.csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Mean and standard deviation of a normal draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub crop_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub intrinsics: CameraIntrinsics,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub y: Gaussian,
    pub w: Gaussian,
    pub l: Gaussian,
    pub h: Gaussian,
    /// Largest BEV rotated IoU tolerated between two objects of a scene.
    pub max_bev_overlap: f64,
    pub max_attempts: usize,
    /// Clamp out-of-range targets instead of rejecting the draw.
    pub clamp_targets: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            seed: 7,
            crop_size: 32,
            min_objects: 1,
            max_objects: 3,
            intrinsics: CameraIntrinsics::kitti_like(),
            x_max: 40.0,
            z_min: 5.0,
            z_max: 95.0,
            y: Gaussian {
                mean: 1.65,
                std: 0.05,
            },
            w: Gaussian {
                mean: 1.6,
                std: 0.1,
            },
            l: Gaussian {
                mean: 3.9,
                std: 0.4,
            },
            h: Gaussian {
                mean: 1.5,
                std: 0.1,
            },
            max_bev_overlap: 0.05,
            max_attempts: 100,
            clamp_targets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<Box3D>,
    pub seed: u64,
}

/// One training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub crop: GrayImage,
    pub bbox_norm: Box2D,
    pub bev_rect: BevRect,
    pub target: TargetVector,
}

fn normal(g: Gaussian) -> Normal<f64> {
    Normal::new(g.mean, g.std.max(0.0)).expect("finite gaussian parameters")
}

fn draw_object<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> Box3D {
    let k = &cfg.intrinsics;
    let z = rng.random_range(cfg.z_min..=cfg.z_max);
    // lateral extent visible at this depth
    let half_fov = (k.cx.max(k.image_w as f64 - k.cx)) / k.fx;
    let x_lim = (half_fov * z).min(cfg.x_max);
    let x = rng.random_range(-x_lim..=x_lim);
    let clip = |v: f64, hi: f64| v.clamp(0.05, hi);
    let y = normal(cfg.y).sample(rng).clamp(0.0, 4.0);
    let w = clip(normal(cfg.w).sample(rng), 3.0);
    let l = clip(normal(cfg.l).sample(rng), 7.0);
    let h = clip(normal(cfg.h).sample(rng), 3.0);
    let mut yaw = rng.random_range(-PI..PI);
    if yaw == -PI {
        yaw = PI;
    }
    Box3D::new(x, y, z, w, l, h, yaw)
}

/// Accepts a draw only if it is fully visible, has valid targets and does
/// not collide with objects already placed.
fn admissible(b: &Box3D, placed: &[Box3D], cfg: &SynthConfig) -> bool {
    let visible = match frontal_bbox(&cfg.intrinsics, b) {
        Ok(f) => f.truncation == 0.0 && f.clipped.height() >= 1.0,
        Err(_) => false,
    };
    if !visible {
        return false;
    }
    if !cfg.clamp_targets && normalize_targets(b).is_err() {
        return false;
    }
    let q = bev_footprint(b);
    if bev_axis_aligned_normalized(&q).is_err() {
        return false;
    }
    placed
        .iter()
        .all(|o| iou_rotated(&q, &bev_footprint(o)) <= cfg.max_bev_overlap)
}

fn object_count<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> usize {
    let lo = cfg.min_objects.max(1);
    let hi = cfg.max_objects.max(lo);
    rng.random_range(lo..=hi)
}

fn sample_scene_with_count<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SynthConfig,
    count: usize,
    seed: u64,
) -> Result<Scene> {
    let mut objects = Vec::with_capacity(count);
    for object in 0..count {
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            let b = draw_object(rng, cfg);
            if admissible(&b, &objects, cfg) {
                placed = Some(b);
                break;
            }
        }
        match placed {
            Some(b) => objects.push(b),
            None => {
                return Err(SynthError::CannotPlace {
                    object,
                    attempts: cfg.max_attempts,
                })
            }
        }
    }
    Ok(Scene {
        intrinsics: cfg.intrinsics,
        objects,
        seed,
    })
}

/// Draws a scene; the object count comes first from `rng`.
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> Result<Scene> {
    let count = object_count(rng, cfg);
    sample_scene_with_count(rng, cfg, count, cfg.seed)
}

/// Scene `index` of a dataset: its RNG stream is seeded with
/// `base_seed + index`, independent of how work is split across threads.
pub fn scene_rng(cfg: &SynthConfig, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64))
}

pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<(Scene, ChaCha8Rng)> {
    let mut rng = scene_rng(cfg, index);
    let count = object_count(&mut rng, cfg);
    let seed = cfg.seed.wrapping_add(index as u64);
    let scene = sample_scene_with_count(&mut rng, cfg, count, seed)?;
    Ok((scene, rng))
}

type P2 = [f64; 2];

fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns the hull counter-clockwise in a
/// y-up sense (clockwise on screen).
fn convex_hull(points: &[P2]) -> Vec<P2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<P2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross2(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<P2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross2(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[P2], p: P2) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross2(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

fn segment_distance(a: P2, b: P2, p: P2) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Shading constant of a box silhouette at depth `z`.
pub fn base_intensity(z: f64) -> f64 {
    (0.9 * (1.0 - z / 100.0)).clamp(0.0, 1.0)
}

/// Index into [`BOX_FACES`] of the face turned most toward the camera.
pub fn camera_facing_face(b: &Box3D) -> usize {
    let corners = box_corners_3d(b);
    let center = Point3::new(b.x, b.y - 0.5 * b.h, b.z);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, face) in BOX_FACES.iter().enumerate() {
        let mut fc = [0.0; 3];
        for &c in face {
            fc[0] += corners[c].x / 4.0;
            fc[1] += corners[c].y / 4.0;
            fc[2] += corners[c].z / 4.0;
        }
        let n = [fc[0] - center.x, fc[1] - center.y, fc[2] - center.z];
        let n_len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let to_cam_len = (fc[0] * fc[0] + fc[1] * fc[1] + fc[2] * fc[2]).sqrt();
        let score = -(n[0] * fc[0] + n[1] * fc[1] + n[2] * fc[2]) / (n_len * to_cam_len);
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

/// Renders `boxes` as seen through the image-space `window`, resampled to
/// `size` x `size` by point-sampling pixel centers.
pub fn render_window<R: Rng + ?Sized>(
    k: &CameraIntrinsics,
    boxes: &[Box3D],
    window: &Box2D,
    size: usize,
    rng: &mut R,
) -> Result<GrayImage> {
    let mut img = GrayImage::new(size, size);
    for v in img.data.iter_mut() {
        *v = rng.random_range(0.0..0.1);
    }
    let sx = window.width() / size as f64;
    let sy = window.height() / size as f64;
    let to_crop =
        |(u, v): (f64, f64)| -> P2 { [(u - window.x1) / sx - 0.5, (v - window.y1) / sy - 0.5] };

    let mut order: Vec<&Box3D> = boxes.iter().collect();
    order.sort_by(|a, b| b.z.partial_cmp(&a.z).unwrap());
    for b in order {
        let corners = box_corners_3d(b);
        let mut proj = [[0.0; 2]; 8];
        for (i, c) in corners.iter().enumerate() {
            proj[i] = to_crop(project_point(k, c)?);
        }
        let hull = convex_hull(&proj);
        let face = BOX_FACES[camera_facing_face(b)];
        let face_hull = convex_hull(&face.map(|i| proj[i]));
        let base = base_intensity(b.z);
        for row in 0..size {
            for col in 0..size {
                let p = [col as f64, row as f64];
                if !inside_convex(&hull, p) {
                    continue;
                }
                let mut val = base;
                if inside_convex(&face_hull, p) {
                    val = (base + 0.2).min(1.0);
                }
                if BOX_EDGES
                    .iter()
                    .any(|&(a, e)| segment_distance(proj[a], proj[e], p) <= 0.5)
                {
                    val = 1.0;
                }
                img.set(col, row, val);
            }
        }
    }
    Ok(img)
}

/// Crop of a single object through its frontal bounding box.
pub fn render_crop<R: Rng + ?Sized>(
    k: &CameraIntrinsics,
    b: &Box3D,
    crop_size: usize,
    rng: &mut R,
) -> Result<GrayImage> {
    let fb = frontal_bbox(k, b)?;
    render_window(k, std::slice::from_ref(b), &fb.clipped, crop_size, rng)
}

pub fn make_sample<R: Rng + ?Sized>(
    k: &CameraIntrinsics,
    b: &Box3D,
    crop_size: usize,
    clamp_targets: bool,
    rng: &mut R,
) -> Result<(Sample, Difficulty)> {
    let fb = frontal_bbox(k, b)?;
    // stored crops are 8-bit, so in-memory samples carry the same values
    let rendered = render_window(k, std::slice::from_ref(b), &fb.clipped, crop_size, rng)?;
    let crop = GrayImage::from_raster(&rendered.to_raster())?;
    let bbox_norm = kitti::normalize_bbox(&fb.clipped, k.image_w as f64, k.image_h as f64)?;
    let bev_rect = bev_axis_aligned_normalized(&bev_footprint(b))?;
    let target = if clamp_targets {
        normalize_targets_clamped(b)
    } else {
        normalize_targets(b)?
    };
    let difficulty = difficulty_for(fb.clipped.height(), 0, fb.truncation);
    Ok((
        Sample {
            crop,
            bbox_norm,
            bev_rect,
            target,
        },
        difficulty,
    ))
}

/// Probabilities and magnitudes of the photometric/geometric augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub probability: f64,
    pub brightness: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.25,
            brightness: 0.2,
            contrast_min: 0.8,
            contrast_max: 1.25,
            noise_std: 0.02,
        }
    }
}

/// Mirror image of a sample with labels mapped accordingly: x coordinates
/// negate (and swap), yaw becomes `pi - yaw`.
pub fn flip_sample(s: &Sample) -> Sample {
    let t = s.target;
    Sample {
        crop: s.crop.mirrored(),
        bbox_norm: Box2D::new(
            -s.bbox_norm.x2,
            s.bbox_norm.y1,
            -s.bbox_norm.x1,
            s.bbox_norm.y2,
        ),
        bev_rect: BevRect::new(-s.bev_rect.x2, s.bev_rect.z1, -s.bev_rect.x1, s.bev_rect.z2),
        target: TargetVector {
            tx: -t.tx,
            tcos: -t.tcos,
            ..t
        },
    }
}

pub fn augment<R: Rng + ?Sized>(s: &Sample, rng: &mut R, cfg: &AugmentConfig) -> Sample {
    let mut out = if rng.random_bool(cfg.probability) {
        flip_sample(s)
    } else {
        s.clone()
    };
    if rng.random_bool(cfg.probability) {
        let shift = rng.random_range(-cfg.brightness..=cfg.brightness);
        out.crop.data.iter_mut().for_each(|v| *v += shift);
    }
    if rng.random_bool(cfg.probability) {
        let scale = rng.random_range(cfg.contrast_min..=cfg.contrast_max);
        let mean = out.crop.mean();
        out.crop
            .data
            .iter_mut()
            .for_each(|v| *v = mean + (*v - mean) * scale);
    }
    if rng.random_bool(cfg.probability) {
        let noise = Normal::new(0.0, cfg.noise_std).expect("noise std");
        out.crop
            .data
            .iter_mut()
            .for_each(|v| *v += noise.sample(rng));
    }
    out.crop
        .data
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// A dataset row: the sample plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub sample_id: String,
    pub frame: usize,
    pub crop_path: String,
    pub sample: Sample,
    pub box3d: Box3D,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub generator: String,
    pub num_samples: usize,
    pub num_frames: usize,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.manifest.config.intrinsics
    }
}

pub fn sample_id(frame: usize, object: usize) -> String {
    format!("{frame:06}_{object:02}")
}

/// Worker count from `MONO_BEV3D_THREADS`, defaulting to the core count.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Per-frame object counts needed to reach `n_samples` rows.
fn plan_frames(cfg: &SynthConfig) -> Vec<usize> {
    let mut plan = Vec::new();
    let mut total = 0;
    let mut index = 0;
    while total < cfg.n_samples {
        let count = object_count(&mut scene_rng(cfg, index), cfg);
        let take = count.min(cfg.n_samples - total);
        plan.push(take);
        total += take;
        index += 1;
    }
    plan
}

fn generate_frame(cfg: &SynthConfig, frame: usize, take: usize) -> Result<Vec<DatasetRecord>> {
    let (scene, mut rng) = generate_scene(cfg, frame)?;
    let mut out = Vec::with_capacity(take);
    for (i, b) in scene.objects.iter().take(take).enumerate() {
        let (sample, difficulty) = make_sample(
            &scene.intrinsics,
            b,
            cfg.crop_size,
            cfg.clamp_targets,
            &mut rng,
        )?;
        let id = sample_id(frame, i);
        out.push(DatasetRecord {
            crop_path: format!("crops/{id}.pgm"),
            sample_id: id,
            frame,
            sample,
            box3d: *b,
            difficulty,
        });
    }
    Ok(out)
}

/// Generates every record in memory, in frame order.
pub fn generate_records(cfg: &SynthConfig, threads: usize) -> Result<Vec<DatasetRecord>> {
    let plan = plan_frames(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SynthError::Format(e.to_string()))?;
    let frames: Vec<Result<Vec<DatasetRecord>>> = pool.install(|| {
        plan.par_iter()
            .enumerate()
            .map(|(frame, &take)| generate_frame(cfg, frame, take))
            .collect()
    });
    let mut records = Vec::with_capacity(cfg.n_samples);
    for f in frames {
        records.extend(f?);
    }
    Ok(records)
}

pub const INDEX_HEADER: [&str; 26] = [
    "sample_id",
    "crop_path",
    "bbox_x1",
    "bbox_y1",
    "bbox_x2",
    "bbox_y2",
    "bev_x1",
    "bev_z1",
    "bev_x2",
    "bev_z2",
    "t_x",
    "t_y",
    "t_z",
    "t_w",
    "t_l",
    "t_h",
    "t_sin",
    "t_cos",
    "box_x",
    "box_y",
    "box_z",
    "box_w",
    "box_l",
    "box_h",
    "box_yaw",
    "difficulty",
];

fn index_row(r: &DatasetRecord) -> Vec<String> {
    let mut row = vec![r.sample_id.clone(), r.crop_path.clone()];
    let s = &r.sample;
    let b = &r.box3d;
    let nums = s
        .bbox_norm
        .to_array()
        .into_iter()
        .chain(s.bev_rect.to_array())
        .chain(s.target.to_array())
        .chain([b.x, b.y, b.z, b.w, b.l, b.h, b.yaw]);
    row.extend(nums.map(|v| v.to_string()));
    row.push(r.difficulty.as_str().to_string());
    row
}

/// Writes `index.csv`, `manifest.json` and one PGM per crop under `out`.
pub fn make_dataset(cfg: &SynthConfig, out: &Path, threads: usize) -> Result<Manifest> {
    let records = generate_records(cfg, threads)?;
    let crops_dir = out.join("crops");
    std::fs::create_dir_all(&crops_dir).map_err(io_err(&crops_dir))?;
    for r in &records {
        let path = out.join(&r.crop_path);
        let bytes = r.sample.crop.to_raster().encode(ImageFormat::Pgm)?;
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let index_path = out.join("index.csv");
    let mut w = csv::Writer::from_path(&index_path)?;
    w.write_record(INDEX_HEADER)?;
    for r in &records {
        w.write_record(index_row(r))?;
    }
    w.flush().map_err(io_err(&index_path))?;
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        generator: "monobev synthetic vehicles".into(),
        num_samples: records.len(),
        num_frames: records.last().map_or(0, |r| r.frame + 1),
        config: cfg.clone(),
    };
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

fn parse_frame(sample_id: &str) -> Result<usize> {
    sample_id
        .split('_')
        .next()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| SynthError::Format(format!("sample id `{sample_id}` has no frame prefix")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(SynthError::Format(format!(
            "dataset format version {} is not supported (expected {})",
            manifest.format_version, DATASET_FORMAT_VERSION
        )));
    }
    let mut rdr = csv::Reader::from_path(dir.join("index.csv"))?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(INDEX_HEADER.iter().copied()) {
        return Err(SynthError::Format("unexpected index.csv header".into()));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|_| {
                SynthError::Format(format!(
                    "column {} is not a number: `{}`",
                    INDEX_HEADER[i], &row[i]
                ))
            })
        };
        let mut v = [0.0; 23];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = num(i + 2)?;
        }
        let crop_path = row[1].to_string();
        let raster = crate::image::read_image(&dir.join(&crop_path))?;
        let crop = GrayImage::from_raster(&raster)?;
        let sample_id = row[0].to_string();
        records.push(DatasetRecord {
            frame: parse_frame(&sample_id)?,
            sample_id,
            crop_path,
            sample: Sample {
                crop,
                bbox_norm: Box2D::new(v[0], v[1], v[2], v[3]),
                bev_rect: BevRect::new(v[4], v[5], v[6], v[7]),
                target: TargetVector::from_array([
                    v[8], v[9], v[10], v[11], v[12], v[13], v[14], v[15],
                ]),
            },
            box3d: Box3D::new(v[16], v[17], v[18], v[19], v[20], v[21], v[22]),
            difficulty: row[25].parse().map_err(SynthError::Format)?,
        });
    }
    Ok(Dataset { manifest, records })
}

/// Crop as raw 8-bit raster, for writing alongside other outputs.
pub fn crop_raster(s: &Sample) -> Raster {
    s.crop.to_raster()
}
