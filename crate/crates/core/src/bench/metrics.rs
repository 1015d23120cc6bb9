//! Precision and success metrics over predicted boxes.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::tracker::BBox;
use crate::Result;

pub const PRECISION_THRESHOLD: f64 = 20.0;
/// Number of IoU thresholds sampled between 0 and 1 inclusive.
pub const SUCCESS_SAMPLES: usize = 101;

fn check_len(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(invalid!("{} predictions for {} ground-truth boxes", pred.len(), gt.len()));
    }
    Ok(())
}

/// Fraction of frames whose center error is at most `threshold` pixels.
pub fn precision(pred: &[BBox], gt: &[BBox], threshold: f64) -> Result<f64> {
    check_len(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p.center_distance(g) <= threshold).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Precision at integer thresholds `0..=max`.
pub fn precision_curve(pred: &[BBox], gt: &[BBox], max: usize) -> Result<Vec<f64>> {
    (0..=max).map(|t| precision(pred, gt, t as f64)).collect()
}

/// A frame succeeds at threshold τ when its IoU reaches τ; at τ = 0 the
/// boxes must overlap at all.
fn succeeds(iou: f64, tau: f64) -> bool {
    if tau == 0.0 {
        iou > 0.0
    } else {
        iou >= tau - 1e-12
    }
}

pub fn success_curve(pred: &[BBox], gt: &[BBox]) -> Result<Vec<f64>> {
    check_len(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    Ok((0..SUCCESS_SAMPLES)
        .map(|k| {
            let tau = k as f64 / (SUCCESS_SAMPLES - 1) as f64;
            ious.iter().filter(|&&i| succeeds(i, tau)).count() as f64 / ious.len() as f64
        })
        .collect())
}

/// Mean of the success curve.
pub fn success_auc(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    let c = success_curve(pred, gt)?;
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Names of the sequences the numbers are averaged over.
    pub sequences: Vec<String>,
    pub precision20: f64,
    pub success_auc: f64,
    pub prec_drop: f64,
    pub succ_drop: f64,
    pub ms_per_frame: f64,
}

impl MetricsReport {
    pub fn single(sequence: String, pred: &[BBox], gt: &[BBox], ms_per_frame: f64) -> Result<Self> {
        Ok(MetricsReport {
            sequences: alloc::vec![sequence],
            precision20: precision(pred, gt, PRECISION_THRESHOLD)?,
            success_auc: success_auc(pred, gt)?,
            prec_drop: 0.0,
            succ_drop: 0.0,
            ms_per_frame,
        })
    }

    /// Unweighted mean over per-sequence reports.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(invalid!("no reports to average"));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut sequences: Vec<String> = reports.iter().flat_map(|r| r.sequences.iter().cloned()).collect();
        sequences.sort();
        Ok(MetricsReport {
            sequences,
            precision20: avg(|r| r.precision20),
            success_auc: avg(|r| r.success_auc),
            prec_drop: avg(|r| r.prec_drop),
            succ_drop: avg(|r| r.succ_drop),
            ms_per_frame: avg(|r| r.ms_per_frame),
        })
    }
}

/// `attacked` with its drop fields set to `baseline − attacked`.
pub fn report_drops(baseline: &MetricsReport, attacked: &MetricsReport) -> Result<MetricsReport> {
    let mut a = baseline.sequences.clone();
    let mut b = attacked.sequences.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(invalid!("reports cover different sequence sets"));
    }
    Ok(MetricsReport {
        prec_drop: baseline.precision20 - attacked.precision20,
        succ_drop: baseline.success_auc - attacked.success_auc,
        ..attacked.clone()
    })
}
