use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::scene::{MotionProgram, SceneConfig};

/// One entry of the benchmark manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub seed: u64,
    pub config: SceneConfig,
}

const SEEDS: [u64; 20] = [
    9011, 9029, 9041, 9049, 9059, 9067, 9091, 9103, 9109, 9127, 9133, 9137, 9151, 9157, 9161, 9173, 9181, 9187, 9199, 9203,
];

const MOTIONS: [MotionProgram; 5] = [
    MotionProgram::Linear { vx: 4.0, vy: 3.0 },
    MotionProgram::Sinusoidal { ax: 24.0, ay: 20.0, period: 40.0 },
    MotionProgram::RandomWalk { max_step: 4 },
    MotionProgram::Linear { vx: -3.0, vy: 4.0 },
    MotionProgram::Sinusoidal { ax: -22.0, ay: 24.0, period: 38.0 },
];

const CAMERAS: [(f64, f64); 4] = [(-1.0, -0.5), (0.5, -1.0), (-0.5, 1.0), (1.0, 0.5)];

/// Frame side, object side and texture feature size of every suite scene.
/// Fast objects with fine texture are what motion blur can disturb; the
/// background shares the object's texture statistics.
const FRAME: usize = 192;
const OBJECT: usize = 16;
const TEXTURE_SCALE: f64 = 2.0;

/// Offset separating training seeds from the benchmark seeds.
const TRAINING_SEED_OFFSET: u64 = 500_000;

/// The frozen benchmark scenes; the first `n` of a fixed list of 20 (the
/// list repeats with shifted seeds past that).
pub fn suite_manifest(n: usize) -> Vec<SceneSpec> {
    manifest(n, "scene", 0)
}

/// Scenes of the same design as the suite with disjoint seeds, for training
/// the one-step predictor.
pub fn training_manifest(n: usize) -> Vec<SceneSpec> {
    manifest(n, "train", TRAINING_SEED_OFFSET)
}

fn manifest(n: usize, prefix: &str, offset: u64) -> Vec<SceneSpec> {
    (0..n)
        .map(|i| {
            let seed = SEEDS[i % SEEDS.len()] + 10_000 * (i / SEEDS.len()) as u64 + offset;
            SceneSpec {
                name: format!("{prefix}{:02}", i + 1),
                seed,
                config: SceneConfig {
                    width: FRAME,
                    height: FRAME,
                    object_w: OBJECT,
                    object_h: OBJECT,
                    n_frames: 40,
                    motion: MOTIONS[i % MOTIONS.len()],
                    camera: CAMERAS[i % CAMERAS.len()],
                    distractors: i % 3,
                    texture_seed: i as u64,
                    object_scale: TEXTURE_SCALE,
                    background_scale: TEXTURE_SCALE,
                    ..SceneConfig::default()
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate_scene;

    #[test]
    fn manifest_scenes_generate() {
        let m = suite_manifest(20);
        assert_eq!(m.len(), 20);
        for spec in &m {
            generate_scene(&spec.config, spec.seed).unwrap();
        }
        assert_eq!(suite_manifest(3), m[..3].to_vec());
        let t = training_manifest(20);
        assert!(t.iter().all(|a| m.iter().all(|b| a.seed != b.seed)));
    }
}
