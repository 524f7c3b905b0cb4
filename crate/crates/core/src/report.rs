//! Image grids (PNG), the ω_l ablation curve (SVG) and Markdown tables.
//! Everything here formats stored results; nothing is aggregated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::arch::ArchId;
use crate::data::{to_byte, IMAGE_SIZE};
use crate::deploy::DistilledDataset;
use crate::error::{Error, Result};
use crate::evalharness::EvalReport;

/// Rows are classes in `class_order`; column `j` shows the `j`-th image of
/// that class. `scale` replicates each pixel (1 = native resolution).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub cols: usize,
    pub scale: usize,
    pub gap: usize,
    pub class_order: Vec<usize>,
}

impl GridLayout {
    /// Every image at native size, classes in label order.
    pub fn full(ds: &DistilledDataset) -> Self {
        Self { cols: ds.ipc(), scale: 1, gap: 2, class_order: (0..ds.num_classes).collect() }
    }

    /// Like [`GridLayout::full`] with at most `max_cols` columns.
    pub fn capped(ds: &DistilledDataset, max_cols: usize) -> Self {
        Self { cols: ds.ipc().min(max_cols), ..Self::full(ds) }
    }

    pub fn cell_px(&self) -> usize {
        IMAGE_SIZE * self.scale
    }
}

/// Rendered grid as interleaved 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl GridImage {
    pub fn at(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

pub fn grid_image(ds: &DistilledDataset, layout: &GridLayout) -> Result<GridImage> {
    ds.validate()?;
    if layout.cols == 0 || layout.cols > ds.ipc() {
        return Err(Error::Layout(format!("{} columns requested but ipc is {}", layout.cols, ds.ipc())));
    }
    if layout.scale == 0 {
        return Err(Error::Layout("scale must be at least 1".into()));
    }
    if layout.class_order.is_empty() || layout.class_order.iter().any(|&k| k >= ds.num_classes) {
        return Err(Error::Layout(format!("class order {:?} with {} classes", layout.class_order, ds.num_classes)));
    }
    let ch = ds.channels();
    let cell = layout.cell_px();
    let width = layout.cols * cell + (layout.cols - 1) * layout.gap;
    let rows = layout.class_order.len();
    let height = rows * cell + (rows - 1) * layout.gap;
    let mut pixels = vec![255u8; width * height * ch];
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    for (r, &k) in layout.class_order.iter().enumerate() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == k).take(layout.cols).collect();
        for (j, &i) in members.iter().enumerate() {
            let img = &ds.images.data()[i * ch * plane..(i + 1) * ch * plane];
            let (x0, y0) = (j * (cell + layout.gap), r * (cell + layout.gap));
            for y in 0..cell {
                for x in 0..cell {
                    let src = (y / layout.scale) * IMAGE_SIZE + x / layout.scale;
                    let dst = ((y0 + y) * width + x0 + x) * ch;
                    for c in 0..ch {
                        pixels[dst + c] = to_byte(img[c * plane + src]);
                    }
                }
            }
        }
    }
    Ok(GridImage { width, height, channels: ch, pixels })
}

pub fn render_grid(ds: &DistilledDataset, layout: &GridLayout, path: &Path) -> Result<()> {
    let img = grid_image(ds, layout)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(if img.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Png(e.to_string());
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&img.pixels).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(())
}

/// One ablation marker. `x` is `log10(ω_l)`, or the sentinel one decade left
/// of the smallest positive value when `ω_l = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub omega_l: f64,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn ablation_points(results: &[(f64, EvalReport)]) -> Result<Vec<PlotPoint>> {
    if results.len() < 2 {
        return Err(Error::Layout(format!("ablation plot needs at least 2 points, got {}", results.len())));
    }
    if let Some((w, _)) = results.iter().find(|(w, _)| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Layout(format!("omega_l {} cannot be placed on a log axis", w)));
    }
    let min_pos = results.iter().map(|(w, _)| *w).filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return Err(Error::Layout("ablation plot needs at least one positive omega_l".into()));
    }
    let sentinel = min_pos.log10().floor() - 1.0;
    let mut pts: Vec<PlotPoint> = results
        .iter()
        .map(|(w, r)| PlotPoint { omega_l: *w, x: if *w == 0.0 { sentinel } else { w.log10() }, mean: r.mean, std: r.std })
        .collect();
    pts.sort_by(|a, b| a.omega_l.total_cmp(&b.omega_l));
    Ok(pts)
}

/// Log-x line plot of mean accuracy (%) with ±std error bars.
pub fn ablation_svg(results: &[(f64, EvalReport)]) -> Result<String> {
    let pts = ablation_points(results)?;
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
    let x_lo = pts.first().unwrap().x - 0.5;
    let x_hi = pts.last().unwrap().x + 0.5;
    let lo = pts.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min) * 100.0;
    let hi = pts.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max) * 100.0;
    let pad = ((hi - lo) * 0.1).max(0.5);
    let (y_lo, y_hi) = (lo - pad, hi + pad);
    let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * (w - left - right);
    let sy = |v: f64| top + (y_hi - v * 100.0) / (y_hi - y_lo) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (ax0, ax1, ay) = (left, w - right, h - bottom);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay}" x2="{ax1}" y2="{ay}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{top}" x2="{ax0}" y2="{ay}" stroke="black"/>"#);
    for p in &pts {
        let x = sx(p.x);
        let label = if p.omega_l == 0.0 { "0".to_string() } else { format!("{:e}", p.omega_l) };
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{ay}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, ay + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, ay + 20.0);
    }
    if pts[0].omega_l == 0.0 {
        let bx = (sx(pts[0].x) + sx(pts[1].x)) / 2.0;
        let _ = writeln!(s, r#"<text x="{bx:.2}" y="{:.2}" text-anchor="middle">//</text>"#, ay + 4.0);
    }
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = sy(v / 100.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, left - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">omega_l</text>"#, (ax0 + ax1) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="15" y="{:.2}" transform="rotate(-90 15 {:.2})" text-anchor="middle">accuracy (%)</text>"#, (top + ay) / 2.0, (top + ay) / 2.0);
    let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.mean))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, line.join(" "));
    for p in &pts {
        let (x, y0, y1) = (sx(p.x), sy(p.mean - p.std), sy(p.mean + p.std));
        let _ = writeln!(s, r#"<line class="errorbar" x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}" stroke="steelblue"/>"#);
        for y in [y0, y1] {
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="steelblue"/>"#, x - 4.0, x + 4.0);
        }
        let _ = writeln!(s, r#"<circle class="marker" cx="{x:.2}" cy="{:.2}" r="4" fill="steelblue"/>"#, sy(p.mean));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_ablation(results: &[(f64, EvalReport)], path: &Path) -> Result<()> {
    let svg = ablation_svg(results)?;
    write_text(path, &svg)
}

/// A fraction as a percentage with one decimal, rounding half to even.
/// Values within 1e-9 of a tie count as ties, so `0.0125` gives `1.2`.
pub fn format_pct(v: f64) -> String {
    let tenths = v * 1000.0;
    let floor = tenths.floor();
    let frac = tenths - floor;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if floor.rem_euclid(2.0) == 0.0 { floor } else { floor + 1.0 }
    } else {
        tenths.round()
    };
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{:.1}", r / 10.0)
}

/// Table cell `mean±std` in percent, e.g. `97.3±0.3`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{}±{}", format_pct(mean), format_pct(std))
}

fn cell(r: Option<&&EvalReport>) -> String {
    r.map(|r| format_cell(r.mean, r.std)).unwrap_or_else(|| "-".into())
}

/// Markdown tables:
///
/// * accuracy with architectures as rows and `dataset / IPC` as columns,
/// * cross-architecture with `dataset / IPC` as rows and architectures as columns,
/// * the ω_l ablation, when any report carries an `omega_l`.
///
/// Architectures without reports are left out. The first report for a key wins.
pub fn tables_markdown(reports: &[EvalReport]) -> String {
    let mut main: BTreeMap<(String, usize, ArchId), &EvalReport> = BTreeMap::new();
    let mut ablation: BTreeMap<(String, usize, ArchId), Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        let key = (r.dataset.clone(), r.ipc, r.arch);
        match r.omega_l {
            None => {
                main.entry(key).or_insert(r);
            }
            Some(_) => ablation.entry(key).or_default().push(r),
        }
    }
    let settings: BTreeSet<(String, usize)> = main.keys().map(|(d, i, _)| (d.clone(), *i)).collect();
    let archs: BTreeSet<ArchId> = main.keys().map(|k| k.2).collect();
    let mut s = String::new();
    if !main.is_empty() {
        s.push_str("## Test accuracy (%)\n\n| Architecture |");
        for (d, i) in &settings {
            let _ = write!(s, " {} IPC={} |", d, i);
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(settings.len()));
        s.push('\n');
        for a in &archs {
            let _ = write!(s, "| {} |", a);
            for (d, i) in &settings {
                let _ = write!(s, " {} |", cell(main.get(&(d.clone(), *i, *a))));
            }
            s.push('\n');
        }
        s.push_str("\n## Cross-architecture accuracy (%)\n\n| Dataset | IPC |");
        for a in &archs {
            let _ = write!(s, " {} |", a);
        }
        s.push_str("\n|---|---|");
        s.push_str(&"---|".repeat(archs.len()));
        s.push('\n');
        for (d, i) in &settings {
            let _ = write!(s, "| {} | {} |", d, i);
            for a in &archs {
                let _ = write!(s, " {} |", cell(main.get(&(d.clone(), *i, *a))));
            }
            s.push('\n');
        }
    }
    for ((d, i, a), mut rows) in ablation {
        rows.sort_by(|x, y| x.omega_l.unwrap().total_cmp(&y.omega_l.unwrap()));
        if !s.is_empty() {
            s.push('\n');
        }
        let _ = write!(s, "## omega_l ablation: {} IPC={} {}\n\n| omega_l | Accuracy (%) |\n|---|---|\n", d, i, a);
        for r in rows {
            let _ = writeln!(s, "| {} | {} |", r.omega_l.unwrap(), format_cell(r.mean, r.std));
        }
    }
    s
}

pub fn render_tables(reports: &[EvalReport], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Usage("no reports to tabulate".into()));
    }
    write_text(path, &tables_markdown(reports))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}
