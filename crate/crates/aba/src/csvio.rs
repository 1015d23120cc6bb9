//! CSV outputs of attacks, training and benchmark runs.

use std::fs;
use std::path::Path;

use aba_core::attack_op::OpStats;
use aba_core::attack_os::TrainLog;
use aba_core::bench::{precision_curve, success_curve, Sequence};

use crate::error::{Error, Result};
use crate::runner::BenchResults;

pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_FRAME_FILE: &str = "per_frame.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const OP_STATS_FILE: &str = "op_stats.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Largest center-error threshold of the emitted precision curve, in pixels.
pub const CLE_CURVE_MAX: usize = 50;

pub const METRICS_HEADER: [&str; 7] = ["sequence", "attack", "precision20", "success_auc", "prec_drop", "succ_drop", "ms_per_frame"];

/// Sequence column value of the per-attack mean rows.
pub const MEAN_ROW: &str = "mean";

struct Out {
    path: std::path::PathBuf,
    w: csv::Writer<fs::File>,
}

impl Out {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let w = csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
        Ok(Out { path: path.into(), w })
    }

    fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|source| Error::Csv { path: self.path.clone(), source })
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// `frame_index, iter, loss, argmax_row, argmax_col`, one row per recorded
/// iterate (iteration 0 is the unattacked starting point). `prefix` fields
/// are prepended to every row.
fn stats_rows(out: &mut Out, prefix: &[String], frame_index: usize, stats: &OpStats) -> Result<()> {
    for (it, (loss, (r, c))) in stats.losses.iter().zip(&stats.argmax).enumerate() {
        let mut row = prefix.to_vec();
        row.extend([frame_index.to_string(), it.to_string(), format!("{loss:.9e}"), r.to_string(), c.to_string()]);
        out.row(row)?;
    }
    Ok(())
}

pub fn write_op_stats(path: &Path, frame_index: usize, stats: &OpStats) -> Result<()> {
    let mut out = Out::create(path)?;
    out.row(["frame_index", "iter", "loss", "argmax_row", "argmax_col"])?;
    stats_rows(&mut out, &[], frame_index, stats)?;
    out.finish()
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut out = Out::create(path)?;
    out.row(["step", "L_adv", "L_natural", "total"])?;
    for r in &log.rows {
        out.row([r.step.to_string(), format!("{:.9e}", r.adversarial), format!("{:.9e}", r.natural), format!("{:.9e}", r.total)])?;
    }
    out.finish()
}

/// Writes `metrics.csv`, `per_frame.csv`, `curves.csv` and `op_stats.csv`
/// into `dir`. Latency is left empty unless `timing` is set.
pub fn write_bench(dir: &Path, results: &BenchResults, seqs: &[Sequence], timing: bool) -> Result<()> {
    let ms = |v: f64| if timing { format!("{v:.3}") } else { String::new() };

    let mut m = Out::create(&dir.join(METRICS_FILE))?;
    m.row(METRICS_HEADER)?;
    for run in &results.runs {
        for r in run.reports.iter().chain(std::iter::once(&run.mean)) {
            let name = if r.sequences.len() == 1 { r.sequences[0].clone() } else { MEAN_ROW.to_string() };
            m.row([
                name,
                run.attack.label().to_string(),
                f(r.precision20),
                f(r.success_auc),
                f(r.prec_drop),
                f(r.succ_drop),
                ms(r.ms_per_frame),
            ])?;
        }
    }
    m.finish()?;

    let mut pf = Out::create(&dir.join(PER_FRAME_FILE))?;
    pf.row(["sequence", "attack", "frame", "cle", "iou", "attacked"])?;
    let mut st = Out::create(&dir.join(OP_STATS_FILE))?;
    st.row(["sequence", "attack", "frame_index", "iter", "loss", "argmax_row", "argmax_col"])?;
    let mut cv = Out::create(&dir.join(CURVES_FILE))?;
    cv.row(["attack", "curve", "threshold", "value"])?;
    for run in &results.runs {
        let mut prec = vec![0.0; CLE_CURVE_MAX + 1];
        let mut succ: Vec<f64> = Vec::new();
        for (t, seq) in run.trajectories.iter().zip(seqs) {
            for (i, (rec, gt)) in t.frames.iter().zip(&seq.gt_boxes).enumerate() {
                pf.row([
                    seq.name.clone(),
                    run.attack.label().to_string(),
                    i.to_string(),
                    f(rec.bbox.center_distance(gt)),
                    f(rec.bbox.iou(gt)),
                    u8::from(rec.attacked).to_string(),
                ])?;
                if let Some(stats) = &rec.op {
                    stats_rows(&mut st, &[seq.name.clone(), run.attack.label().to_string()], i, stats)?;
                }
            }
            let boxes = t.boxes();
            for (acc, v) in prec.iter_mut().zip(precision_curve(&boxes, &seq.gt_boxes, CLE_CURVE_MAX)?) {
                *acc += v;
            }
            let s = success_curve(&boxes, &seq.gt_boxes)?;
            succ.resize(s.len(), 0.0);
            for (acc, v) in succ.iter_mut().zip(s) {
                *acc += v;
            }
        }
        let n = seqs.len() as f64;
        for (k, v) in prec.iter().enumerate() {
            cv.row([run.attack.label().to_string(), "precision".into(), k.to_string(), f(v / n)])?;
        }
        let last = succ.len().saturating_sub(1).max(1) as f64;
        for (k, v) in succ.iter().enumerate() {
            cv.row([run.attack.label().to_string(), "success".into(), format!("{:.2}", k as f64 / last), f(v / n)])?;
        }
    }
    pf.finish()?;
    st.finish()?;
    cv.finish()
}
