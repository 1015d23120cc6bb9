//! Summary table and precision / success plots of a finished benchmark
//! directory, drawn with a small built-in rasterizer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aba_core::bench::AttackKind;
use image::RgbImage;

use crate::csvio::{CURVES_FILE, MEAN_ROW, METRICS_FILE};
use crate::error::{Error, Result};

pub const TABLE_FILE: &str = "report.txt";
pub const PRECISION_PLOT: &str = "precision.png";
pub const SUCCESS_PLOT: &str = "success.png";

type Rgb = [u8; 3];

const WHITE: Rgb = [255, 255, 255];
const BLACK: Rgb = [0, 0, 0];
const GRID: Rgb = [225, 225, 225];

/// Line colors in table row order.
const PALETTE: [Rgb; 6] = [[0, 0, 0], [120, 120, 120], [31, 119, 180], [44, 160, 44], [214, 39, 40], [255, 127, 14]];

/// 3×5 glyphs, one row per byte with the leftmost pixel in bit 2. Letters
/// are drawn in upper case; anything missing renders as a blank.
const GLYPHS: &[(char, [u8; 5])] = &[
    ('0', [7, 5, 5, 5, 7]),
    ('1', [2, 6, 2, 2, 7]),
    ('2', [7, 1, 7, 4, 7]),
    ('3', [7, 1, 7, 1, 7]),
    ('4', [5, 5, 7, 1, 1]),
    ('5', [7, 4, 7, 1, 7]),
    ('6', [7, 4, 7, 5, 7]),
    ('7', [7, 1, 1, 1, 1]),
    ('8', [7, 5, 7, 5, 7]),
    ('9', [7, 5, 7, 1, 7]),
    ('A', [2, 5, 7, 5, 5]),
    ('B', [6, 5, 6, 5, 6]),
    ('C', [3, 4, 4, 4, 3]),
    ('D', [6, 5, 5, 5, 6]),
    ('E', [7, 4, 6, 4, 7]),
    ('F', [7, 4, 6, 4, 4]),
    ('G', [3, 4, 5, 5, 3]),
    ('H', [5, 5, 7, 5, 5]),
    ('I', [7, 2, 2, 2, 7]),
    ('J', [1, 1, 1, 5, 2]),
    ('K', [5, 5, 6, 5, 5]),
    ('L', [4, 4, 4, 4, 7]),
    ('M', [5, 7, 7, 5, 5]),
    ('N', [6, 5, 5, 5, 5]),
    ('O', [2, 5, 5, 5, 2]),
    ('P', [6, 5, 6, 4, 4]),
    ('Q', [2, 5, 5, 6, 3]),
    ('R', [6, 5, 6, 5, 5]),
    ('S', [3, 4, 2, 1, 6]),
    ('T', [7, 2, 2, 2, 2]),
    ('U', [5, 5, 5, 5, 7]),
    ('V', [5, 5, 5, 5, 2]),
    ('W', [5, 5, 7, 7, 5]),
    ('X', [5, 5, 2, 5, 5]),
    ('Y', [5, 5, 2, 2, 2]),
    ('Z', [7, 1, 2, 4, 7]),
    ('-', [0, 0, 7, 0, 0]),
    ('.', [0, 0, 0, 0, 2]),
    ('/', [1, 1, 2, 4, 4]),
    (':', [0, 2, 0, 2, 0]),
    ('@', [2, 5, 7, 4, 3]),
];

pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, bg: Rgb) -> Self {
        let pixels = bg.iter().copied().cycle().take((width * height * 3) as usize).collect();
        Canvas { width, height, pixels }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    /// Bresenham segment with a square pen of side `thick`.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb, thick: i64) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let off = (thick - 1) / 2;
        loop {
            self.fill_rect(x - off, y - off, thick, thick, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Draws `s` with its top-left corner at `(x, y)`; glyphs are
    /// `3·scale` wide with one scaled pixel of spacing.
    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb, scale: i64) {
        for (k, ch) in s.chars().enumerate() {
            let up = ch.to_ascii_uppercase();
            let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == up) else {
                continue;
            };
            let gx = x + k as i64 * 4 * scale;
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        self.fill_rect(gx + col * scale, y + r as i64 * scale, scale, scale, c);
                    }
                }
            }
        }
    }

    pub fn text_width(s: &str, scale: i64) -> i64 {
        (s.chars().count() as i64 * 4 - 1).max(0) * scale
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = RgbImage::from_raw(self.width, self.height, self.pixels.clone()).expect("buffer size matches");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.into(), source })
    }
}

pub struct Series {
    pub label: String,
    pub color: Rgb,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegendCorner {
    BottomLeft,
    BottomRight,
}

/// Line plot with y in `[0, 1]` and x in `[0, x_max]`.
pub fn plot(title: &str, x_label: &str, x_max: f64, x_ticks: &[f64], series: &[Series], legend: LegendCorner) -> Canvas {
    const W: i64 = 560;
    const H: i64 = 400;
    let (left, right, top, bottom) = (56, W - 16, 36, H - 48);
    let mut c = Canvas::new(W as u32, H as u32, WHITE);
    let sx = |x: f64| left + ((x / x_max) * (right - left) as f64).round() as i64;
    let sy = |y: f64| bottom - (y.clamp(0.0, 1.0) * (bottom - top) as f64).round() as i64;

    for k in 0..=10 {
        let y = sy(k as f64 / 10.0);
        c.line((left, y), (right, y), GRID, 1);
    }
    for &t in x_ticks {
        c.line((sx(t), top), (sx(t), bottom), GRID, 1);
    }
    c.line((left, bottom), (right, bottom), BLACK, 1);
    c.line((left, top), (left, bottom), BLACK, 1);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let label = format!("{v:.1}");
        c.line((left - 4, sy(v)), (left, sy(v)), BLACK, 1);
        c.text(left - 8 - Canvas::text_width(&label, 2), sy(v) - 5, &label, BLACK, 2);
    }
    for &t in x_ticks {
        let label = if t.fract() == 0.0 { format!("{t:.0}") } else { format!("{t:.1}") };
        c.line((sx(t), bottom), (sx(t), bottom + 4), BLACK, 1);
        c.text(sx(t) - Canvas::text_width(&label, 2) / 2, bottom + 8, &label, BLACK, 2);
    }
    c.text((W - Canvas::text_width(title, 3)) / 2, 8, title, BLACK, 3);
    c.text((left + right - Canvas::text_width(x_label, 2)) / 2, H - 18, x_label, BLACK, 2);

    for s in series {
        for pair in s.points.windows(2) {
            c.line((sx(pair[0].0), sy(pair[0].1)), (sx(pair[1].0), sy(pair[1].1)), s.color, 2);
        }
    }

    let widest = series.iter().map(|s| Canvas::text_width(&s.label, 2)).max().unwrap_or(0);
    let lx = match legend {
        LegendCorner::BottomLeft => left + 14,
        LegendCorner::BottomRight => right - widest - 40,
    };
    let ly = bottom - 8 - 16 * series.len() as i64;
    if !series.is_empty() {
        c.fill_rect(lx - 6, ly - 6, widest + 44, 16 * series.len() as i64 + 8, WHITE);
    }
    for (k, s) in series.iter().enumerate() {
        let y = ly + 16 * k as i64;
        c.line((lx, y + 5), (lx + 24, y + 5), s.color, 3);
        c.text(lx + 32, y, &s.label, BLACK, 2);
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub precision20: f64,
    pub success_auc: f64,
    pub prec_drop: f64,
    pub succ_drop: f64,
    pub ms_per_frame: Option<f64>,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    if !path.is_file() {
        return Err(Error::format(path, None, "missing benchmark output"));
    }
    csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })
}

fn parse_field(path: &Path, line: usize, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| Error::format(path, Some(line), format!("'{v}' is not a number")))
}

/// Mean rows of `metrics.csv`, keyed by attack.
pub fn read_summary(dir: &Path) -> Result<BTreeMap<AttackKind, SummaryRow>> {
    let path = dir.join(METRICS_FILE);
    let mut rd = csv_reader(&path)?;
    let mut out = BTreeMap::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|source| Error::Csv { path: path.clone(), source })?;
        if rec.len() != 7 {
            return Err(Error::format(&path, Some(line), format!("expected 7 fields, found {}", rec.len())));
        }
        if &rec[0] != MEAN_ROW {
            continue;
        }
        let attack: AttackKind = rec[1].parse().map_err(|e: aba_core::Error| Error::format(&path, Some(line), e.to_string()))?;
        let ms = if rec[6].trim().is_empty() { None } else { Some(parse_field(&path, line, &rec[6])?) };
        out.insert(
            attack,
            SummaryRow {
                precision20: parse_field(&path, line, &rec[2])?,
                success_auc: parse_field(&path, line, &rec[3])?,
                prec_drop: parse_field(&path, line, &rec[4])?,
                succ_drop: parse_field(&path, line, &rec[5])?,
                ms_per_frame: ms,
            },
        );
    }
    if out.is_empty() {
        return Err(Error::format(&path, None, "no mean rows"));
    }
    Ok(out)
}

type Curves = BTreeMap<(AttackKind, String), Vec<(f64, f64)>>;

fn read_curves(dir: &Path) -> Result<Curves> {
    let path = dir.join(CURVES_FILE);
    let mut rd = csv_reader(&path)?;
    let mut out: Curves = BTreeMap::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|source| Error::Csv { path: path.clone(), source })?;
        if rec.len() != 4 {
            return Err(Error::format(&path, Some(line), format!("expected 4 fields, found {}", rec.len())));
        }
        let attack: AttackKind = rec[0].parse().map_err(|e: aba_core::Error| Error::format(&path, Some(line), e.to_string()))?;
        let point = (parse_field(&path, line, &rec[2])?, parse_field(&path, line, &rec[3])?);
        out.entry((attack, rec[1].to_string())).or_default().push(point);
    }
    Ok(out)
}

/// Fixed-width table with one row per attack in the usual order; attacks
/// that were not run show dashes. Values are percentages.
pub fn format_table(rows: &BTreeMap<AttackKind, SummaryRow>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14}{:>10}{:>11}{:>10}{:>11}{:>10}", "Attack", "Prec@20", "Prec drop", "Succ AUC", "Succ drop", "ms/frame");
    for k in AttackKind::ALL {
        let _ = match rows.get(&k) {
            Some(r) => writeln!(
                s,
                "{:<14}{:>10.1}{:>11.1}{:>10.1}{:>11.1}{:>10}",
                k.title(),
                100.0 * r.precision20,
                100.0 * r.prec_drop,
                100.0 * r.success_auc,
                100.0 * r.succ_drop,
                r.ms_per_frame.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into())
            ),
            None => writeln!(s, "{:<14}{:>10}{:>11}{:>10}{:>11}{:>10}", k.title(), "-", "-", "-", "-", "-"),
        };
    }
    s
}

/// Writes `report.txt`, `precision.png` and `success.png` into `dir` and
/// returns the table text.
pub fn emit_report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::format(dir, None, "results directory does not exist"));
    }
    let rows = read_summary(dir)?;
    let curves = read_curves(dir)?;
    let table = format_table(&rows);
    let table_path = dir.join(TABLE_FILE);
    fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;

    let series = |name: &str| -> Vec<Series> {
        AttackKind::ALL
            .iter()
            .enumerate()
            .filter_map(|(i, k)| {
                curves.get(&(*k, name.to_string())).map(|pts| Series {
                    label: k.title().to_string(),
                    color: PALETTE[i],
                    points: pts.clone(),
                })
            })
            .collect()
    };
    let prec = series("precision");
    let x_max = prec.iter().flat_map(|s| s.points.iter().map(|p| p.0)).fold(1.0_f64, f64::max);
    let ticks: Vec<f64> = (0..=5).map(|k| x_max * k as f64 / 5.0).collect();
    plot("PRECISION PLOT", "LOCATION ERROR THRESHOLD", x_max, &ticks, &prec, LegendCorner::BottomRight).save_png(&dir.join(PRECISION_PLOT))?;
    let ticks: Vec<f64> = (0..=5).map(|k| k as f64 / 5.0).collect();
    plot("SUCCESS PLOT", "OVERLAP THRESHOLD", 1.0, &ticks, &series("success"), LegendCorner::BottomLeft).save_png(&dir.join(SUCCESS_PLOT))?;
    Ok(table)
}
