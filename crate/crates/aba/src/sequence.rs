//! Sequence directories: `000001.png`, `000002.png`, … plus
//! `groundtruth.txt` with one top-left `x,y,w,h` box per frame.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aba_core::bench::Sequence;
use aba_core::tracker::BBox;

use crate::error::{Error, Result};
use crate::formats::write_flow;
use crate::imageio::{read_image, write_image};

pub const GROUNDTRUTH: &str = "groundtruth.txt";

pub fn frame_name(index: usize) -> String {
    format!("{:06}.png", index + 1)
}

/// Parses one box line. Fields may be separated by commas, whitespace or
/// both.
pub fn parse_box_line(line: &str) -> std::result::Result<BBox, String> {
    let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields x,y,w,h, found {}", fields.len()));
    }
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.parse::<f64>().map_err(|_| format!("'{f}' is not a number"))?;
        if !slot.is_finite() {
            return Err(format!("'{f}' is not finite"));
        }
    }
    BBox::from_top_left(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// Reads the boxes of `groundtruth.txt`; blank lines are skipped.
pub fn read_groundtruth(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        boxes.push(parse_box_line(line).map_err(|m| Error::format(path, Some(i + 1), m))?);
    }
    Ok(boxes)
}

/// Loads frames numbered from `000001.png` until the first gap. Sequences
/// read from disk carry no ground-truth flow.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    if !dir.is_dir() {
        return Err(Error::format(dir, None, "not a sequence directory"));
    }
    let gt_path = dir.join(GROUNDTRUTH);
    if !gt_path.is_file() {
        return Err(Error::format(&gt_path, None, "missing ground-truth file"));
    }
    let boxes = read_groundtruth(&gt_path)?;
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_name(frames.len()));
        if !p.is_file() {
            break;
        }
        frames.push(read_image(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::format(&dir.join(frame_name(0)), None, "missing first frame"));
    }
    if boxes.len() != frames.len() {
        return Err(Error::format(
            &gt_path,
            None,
            format!("{} boxes for {} frames", boxes.len(), frames.len()),
        ));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Sequence::new(name, 0, frames, boxes, None).map_err(|e| Error::format(dir, None, e.to_string()))
}

/// Writes a sequence directory that [`load_sequence`] reads back. When the
/// sequence has ground-truth flow it goes to `flow/000001.flo`, … (one per
/// consecutive pair).
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_image(&dir.join(frame_name(i)), f)?;
    }
    let mut gt = String::new();
    for b in &seq.gt_boxes {
        let _ = writeln!(gt, "{},{},{},{}", b.left(), b.top(), b.w, b.h);
    }
    let gt_path = dir.join(GROUNDTRUTH);
    fs::write(&gt_path, gt).map_err(|e| Error::io(&gt_path, e))?;
    if let Some(flows) = &seq.gt_flow {
        for (i, f) in flows.iter().enumerate() {
            write_flow(&flow_path(dir, i), f)?;
        }
    }
    Ok(())
}

pub fn flow_path(dir: &Path, pair: usize) -> PathBuf {
    dir.join("flow").join(format!("{:06}.flo", pair + 1))
}

/// Subdirectories of `root` holding a `groundtruth.txt`, sorted by name.
pub fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.join(GROUNDTRUTH).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lines_tolerate_spacing() {
        let a = parse_box_line("10,20,30,40").unwrap();
        let b = parse_box_line("  10, 20 ,30,\t40 ").unwrap();
        let c = parse_box_line("10 20 30 40").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!((a.cx, a.cy), (25.0, 40.0));
        assert!(parse_box_line("1,2,3").is_err());
        assert!(parse_box_line("1,2,x,4").is_err());
    }
}
