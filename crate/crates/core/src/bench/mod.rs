//! Synthetic benchmark: scenes, sequences, tracking runs with attacks, and
//! the precision / success metrics.

pub mod metrics;
mod run;
pub mod scene;
mod suite;

pub use metrics::{precision, precision_curve, report_drops, success_auc, success_curve, MetricsReport, PRECISION_THRESHOLD};
pub use run::{run_tracking, AttackKind, BenchConfig, BENCH_STEP, Clock, FlowChoice, FrameRecord, NoClock, RunFailure, Trajectory};
pub use scene::{generate_scene, MotionProgram, SceneConfig};
pub use suite::{suite_manifest, training_manifest, SceneSpec};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::numerics::{FlowField, Frame};
use crate::tracker::BBox;
use crate::Result;

/// Minimum frames per sequence.
pub const MIN_FRAMES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub gt_boxes: Vec<BBox>,
    /// `gt_flow[i]` carries frame `i` to frame `i + 1`.
    pub gt_flow: Option<Vec<FlowField>>,
}

impl Sequence {
    pub fn new(name: String, seed: u64, frames: Vec<Frame>, gt_boxes: Vec<BBox>, gt_flow: Option<Vec<FlowField>>) -> Result<Self> {
        if frames.len() < MIN_FRAMES {
            return Err(invalid!("sequence '{name}' has {} frames, at least {MIN_FRAMES} needed", frames.len()));
        }
        if gt_boxes.len() != frames.len() {
            return Err(invalid!("sequence '{name}' has {} frames but {} boxes", frames.len(), gt_boxes.len()));
        }
        let first = &frames[0];
        if frames.iter().any(|f| !f.same_dims(first)) {
            return Err(invalid!("frames of sequence '{name}' differ in size or channels"));
        }
        let (w, h) = (first.width() as f64, first.height() as f64);
        for (i, b) in gt_boxes.iter().enumerate() {
            if b.left() < -1e-9 || b.top() < -1e-9 || b.left() + b.w > w + 1e-9 || b.top() + b.h > h + 1e-9 {
                return Err(invalid!("box {} of sequence '{name}' leaves the {w}x{h} frame", i + 1));
            }
        }
        if let Some(flows) = &gt_flow {
            if flows.len() + 1 != frames.len() {
                return Err(invalid!("sequence '{name}' needs {} flow fields, got {}", frames.len() - 1, flows.len()));
            }
            if flows.iter().any(|f| f.width != first.width() || f.height != first.height()) {
                return Err(invalid!("flow fields of sequence '{name}' do not match the frame size"));
            }
        }
        Ok(Sequence {
            name,
            seed,
            frames,
            gt_boxes,
            gt_flow,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
