//! Procedural scenes: value-noise textures, a rectangular object following a
//! motion program, an optional camera pan, and exact per-pixel motion.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sequence;
use crate::numerics::{FlowField, Frame};
use crate::tracker::BBox;
use crate::{Error, Result};

/// Largest per-axis object displacement between consecutive frames.
pub const MAX_STEP: f64 = 4.0;

/// Range of distances between a distractor and the object position it was
/// placed against.
const DISTRACTOR_GAP: (f64, f64) = (12.0, 18.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionProgram {
    Linear { vx: f64, vy: f64 },
    /// Elliptic sway with the given amplitudes and period (frames).
    Sinusoidal { ax: f64, ay: f64, period: f64 },
    /// Integer random walk; steps bounce off the frame borders.
    RandomWalk { max_step: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub object_w: usize,
    pub object_h: usize,
    pub n_frames: usize,
    pub motion: MotionProgram,
    /// Background displacement per frame.
    pub camera: (f64, f64),
    /// Object-sized patches fixed to the background, each placed a short
    /// distance from some point of the object's path.
    pub distractors: usize,
    /// Share of the object texture blended into every distractor (0 gives
    /// unrelated patches, 1 gives exact copies).
    pub distractor_similarity: f64,
    pub texture_seed: u64,
    /// Coarsest feature size of the object texture, in pixels.
    pub object_scale: f64,
    /// Coarsest feature size of the background texture, in pixels.
    pub background_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 128,
            object_w: 20,
            object_h: 20,
            n_frames: 40,
            motion: MotionProgram::Linear { vx: 2.0, vy: 0.0 },
            camera: (0.0, 0.0),
            distractors: 0,
            distractor_similarity: 0.0,
            texture_seed: 0,
            object_scale: 5.0,
            background_scale: 24.0,
        }
    }
}

/// Smoothly interpolated lattice noise, periodic with `period` cells.
#[derive(Debug, Clone)]
struct ValueNoise {
    period: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, period: usize) -> Self {
        ValueNoise {
            period,
            lattice: (0..period * period).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    fn cell(&self, i: i64, j: i64) -> f64 {
        let p = self.period as i64;
        self.lattice[(j.rem_euclid(p) * p + i.rem_euclid(p)) as usize]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (xf, yf) = (Float::floor(x), Float::floor(y));
        let (i, j) = (xf as i64, yf as i64);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (u, v) = (s(x - xf), s(y - yf));
        let top = self.cell(i, j) * (1.0 - u) + self.cell(i + 1, j) * u;
        let bot = self.cell(i, j + 1) * (1.0 - u) + self.cell(i + 1, j + 1) * u;
        top * (1.0 - v) + bot * v
    }
}

/// Sum of octaves mapped around a mean level with a given contrast.
#[derive(Debug, Clone)]
struct Texture {
    octaves: Vec<(ValueNoise, f64, f64)>,
    mean: f64,
    contrast: f64,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, base_scale: f64, octaves: usize, mean: f64, contrast: f64) -> Self {
        let mut v = Vec::with_capacity(octaves);
        let mut scale = base_scale;
        let mut amp = 1.0;
        for _ in 0..octaves {
            v.push((ValueNoise::new(rng, 32), scale, amp));
            scale *= 0.5;
            amp *= 0.5;
        }
        Texture {
            octaves: v,
            mean,
            contrast,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        let mut total = 0.0;
        for (n, scale, amp) in &self.octaves {
            s += amp * (n.sample(x / scale, y / scale) - 0.5);
            total += amp;
        }
        (self.mean + 2.0 * self.contrast * s / total).clamp(0.0, 1.0)
    }
}

/// Object offsets relative to the start, one per frame.
fn trajectory(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64)>> {
    let n = config.n_frames;
    let mut out = Vec::with_capacity(n);
    match config.motion {
        MotionProgram::Linear { vx, vy } => {
            for t in 0..n {
                out.push((vx * t as f64, vy * t as f64));
            }
        }
        MotionProgram::Sinusoidal { ax, ay, period } => {
            if !(period > 0.0) {
                return Err(Error::InvalidConfig(format!("sinusoid period must be positive, got {period}")));
            }
            let k = 2.0 * core::f64::consts::PI / period;
            for t in 0..n {
                let a = k * t as f64;
                out.push((ax * Float::sin(a), ay * (1.0 - Float::cos(a))));
            }
        }
        MotionProgram::RandomWalk { max_step } => {
            let m = max_step as i64;
            let span_x = (config.width - config.object_w) as f64;
            let span_y = (config.height - config.object_h) as f64;
            // start mid-frame, relative coordinates shift later
            let (mut x, mut y) = (span_x / 2.0, span_y / 2.0);
            let start = (x, y);
            for t in 0..n {
                if t > 0 {
                    let mut dx = rng.gen_range(-m..=m) as f64;
                    let mut dy = rng.gen_range(-m..=m) as f64;
                    if x + dx < 0.0 || x + dx > span_x {
                        dx = -dx;
                    }
                    if y + dy < 0.0 || y + dy > span_y {
                        dy = -dy;
                    }
                    x += dx;
                    y += dy;
                }
                out.push((x - start.0, y - start.1));
            }
        }
    }
    for w in out.windows(2) {
        if (w[1].0 - w[0].0).abs() > MAX_STEP + 1e-9 || (w[1].1 - w[0].1).abs() > MAX_STEP + 1e-9 {
            return Err(Error::InvalidConfig(format!("motion program exceeds {MAX_STEP} px per frame")));
        }
    }
    Ok(out)
}

fn validate(config: &SceneConfig) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidConfig(m));
    if config.n_frames < 10 {
        return bad(format!("scenes need at least 10 frames, got {}", config.n_frames));
    }
    if config.object_w < 4 || config.object_h < 4 || config.object_w * config.object_h < 16 {
        return bad("object must be at least 4x4".into());
    }
    if config.width < 16 || config.height < 16 {
        return bad("frames must be at least 16x16".into());
    }
    if config.object_w >= config.width || config.object_h >= config.height {
        return bad("object does not fit inside the frame".into());
    }
    let (cx, cy) = config.camera;
    if !cx.is_finite() || !cy.is_finite() || cx.abs() > MAX_STEP || cy.abs() > MAX_STEP {
        return bad(format!("camera pan must be within ±{MAX_STEP} px per frame"));
    }
    if !(0.0..=1.0).contains(&config.distractor_similarity) {
        return bad("distractor similarity must lie in [0, 1]".into());
    }
    if !(config.object_scale >= 1.0 && config.background_scale >= 1.0) {
        return bad("texture scales must be at least 1 px".into());
    }
    Ok(())
}

/// Renders a scene. Identical `(config, seed)` pairs give identical output.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Sequence> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ config.texture_seed.rotate_left(17));
    let background = Texture::new(&mut rng, config.background_scale, 4, 0.45, 0.22);
    let object = Texture::new(&mut rng, config.object_scale, 3, 0.55, 0.45);
    let own: Vec<Texture> = (0..config.distractors)
        .map(|_| Texture::new(&mut rng, config.object_scale, 3, 0.55, 0.45))
        .collect();
    let offsets = trajectory(config, &mut rng)?;
    let (ow, oh) = (config.object_w as f64, config.object_h as f64);
    let (w, h) = (config.width as f64, config.height as f64);
    let min_x = offsets.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
    let max_x = offsets.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = offsets.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
    let max_y = offsets.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    if max_x - min_x > w - ow || max_y - min_y > h - oh {
        return Err(Error::InvalidConfig("object leaves the frame during the motion program".into()));
    }
    // center the whole path, snapped to the pixel grid
    let x0 = Float::round((w - ow - (max_x - min_x)) / 2.0) - min_x;
    let y0 = Float::round((h - oh - (max_y - min_y)) / 2.0) - min_y;
    let positions: Vec<(f64, f64)> = offsets.iter().map(|&(dx, dy)| (x0 + dx, y0 + dy)).collect();

    let inside = |px: f64, py: f64, (ox, oy): (f64, f64)| px >= ox && px < ox + ow && py >= oy && py < oy + oh;
    // distractors live in background coordinates, near the path as seen at a random frame
    let mut distractors = Vec::with_capacity(config.distractors);
    for tex in own {
        let t = rng.gen_range(0..config.n_frames);
        let angle = rng.gen_range(0.0..2.0 * core::f64::consts::PI);
        let dist = rng.gen_range(DISTRACTOR_GAP.0..DISTRACTOR_GAP.1);
        let (bx, by) = (config.camera.0 * t as f64, config.camera.1 * t as f64);
        let x = positions[t].0 + dist * Float::cos(angle) - bx;
        let y = positions[t].1 + dist * Float::sin(angle) - by;
        distractors.push((tex, Float::round(x), Float::round(y)));
    }
    let sim = config.distractor_similarity;
    let mut frames = Vec::with_capacity(config.n_frames);
    let mut boxes = Vec::with_capacity(config.n_frames);
    for (t, &pos) in positions.iter().enumerate() {
        let (bx, by) = (config.camera.0 * t as f64, config.camera.1 * t as f64);
        let frame = Frame::from_fn_gray(config.height, config.width, |y, x| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if inside(px, py, pos) {
                return object.sample(px - pos.0, py - pos.1);
            }
            for (tex, dx, dy) in &distractors {
                let at = (dx + bx, dy + by);
                if inside(px, py, at) {
                    let (u, v) = (px - at.0, py - at.1);
                    return sim * object.sample(u, v) + (1.0 - sim) * tex.sample(u, v);
                }
            }
            background.sample(px - bx, py - by)
        });
        frames.push(frame);
        boxes.push(BBox::from_top_left(pos.0, pos.1, ow, oh)?);
    }

    let mut flows = Vec::with_capacity(config.n_frames - 1);
    for t in 1..config.n_frames {
        let (p, q) = (positions[t - 1], positions[t]);
        let (mx, my) = (q.0 - p.0, q.1 - p.1);
        let mut dx = Vec::with_capacity(config.width * config.height);
        let mut dy = Vec::with_capacity(config.width * config.height);
        for y in 0..config.height {
            for x in 0..config.width {
                if inside(x as f64 + 0.5, y as f64 + 0.5, p) {
                    dx.push(mx);
                    dy.push(my);
                } else {
                    dx.push(config.camera.0);
                    dy.push(config.camera.1);
                }
            }
        }
        flows.push(FlowField::new(config.height, config.width, dx, dy)?);
    }

    Sequence::new(format!("scene-{seed:016x}"), seed, frames, boxes, Some(flows))
}
