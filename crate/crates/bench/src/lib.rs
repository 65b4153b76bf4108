//! Seeded workloads shared by the benches.

use monobev::eval::{DetBox, DetectionRecord, Frame, GroundTruth};
use monobev::geometry::bev_footprint;
use monobev::model::Batch;
use monobev::synth::generate_records;
use monobev::{BevQuad, BevRect, Box3D, Difficulty, Sample, SynthConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box<R: Rng>(rng: &mut R) -> Box3D {
    Box3D::new(
        rng.random_range(-20.0..20.0),
        1.6,
        rng.random_range(5.0..80.0),
        rng.random_range(1.4..2.0),
        rng.random_range(3.0..5.0),
        1.5,
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// Footprint pairs that overlap often enough to exercise clipping.
pub fn quad_pairs(n: usize, seed: u64) -> Vec<(BevQuad, BevQuad)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let a = random_box(&mut r);
            let mut b = a;
            b.x += r.random_range(-2.0..2.0);
            b.z += r.random_range(-2.0..2.0);
            b.yaw += r.random_range(-1.0..1.0);
            (bev_footprint(&a), bev_footprint(&b))
        })
        .collect()
}

/// Frames of jittered detections around ground-truth rects.
pub fn ap_frames(frames: usize, per_frame: usize, seed: u64) -> Vec<Frame> {
    let mut r = rng(seed);
    (0..frames)
        .map(|i| {
            let mut f = Frame {
                id: format!("{i:06}"),
                ..Frame::default()
            };
            for _ in 0..per_frame {
                let x = r.random_range(-30.0..30.0);
                let z = r.random_range(5.0..90.0);
                f.gts.push(GroundTruth {
                    bbox: DetBox::Rect(BevRect::from_meters(x - 0.9, z - 2.0, x + 0.9, z + 2.0)),
                    class_name: "Car".into(),
                    difficulty: Difficulty::Easy,
                });
                let (dx, dz) = (r.random_range(-0.8..0.8), r.random_range(-1.5..1.5));
                f.dets.push(DetectionRecord {
                    bbox: DetBox::Rect(BevRect::from_meters(
                        x + dx - 0.9,
                        z + dz - 2.0,
                        x + dx + 0.9,
                        z + dz + 2.0,
                    )),
                    score: r.random(),
                    class_name: "Car".into(),
                });
            }
            f
        })
        .collect()
}

pub fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let cfg = SynthConfig {
        n_samples: n,
        seed,
        ..SynthConfig::default()
    };
    generate_records(&cfg, 1)
        .expect("synthetic records")
        .into_iter()
        .map(|r| r.sample)
        .collect()
}

pub fn batch(samples: &[Sample]) -> Batch {
    Batch::from_samples(&samples.iter().collect::<Vec<_>>())
}
