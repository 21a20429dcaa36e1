//! Evaluation tables and the rate-distortion plot.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;

use dic_core::{compress_image, decompress_image, ms_ssim, Checkpoint, CompressedImage, Image, RatePoint};

/// One image's measurements, one entry per checkpoint.
pub struct ImageRow {
    pub name: String,
    pub points: Vec<RatePoint>,
}

/// Sorted PNG files of a directory, or the file itself.
pub fn png_paths(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
        let p = entry?.path();
        if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_pngs(path: &Path) -> anyhow::Result<Vec<(String, Image)>> {
    let paths = png_paths(path)?;
    if paths.is_empty() {
        return Err(crate::UsageError(format!("no PNG images in {}", path.display())).into());
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let img = Image::load_png(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((name, img))
        })
        .collect()
}

/// Codes every image with every checkpoint through the full file format.
pub fn measure(images: &[(String, Image)], ckpts: &[Checkpoint]) -> anyhow::Result<Vec<ImageRow>> {
    let mut rows = Vec::with_capacity(images.len());
    for (name, img) in images {
        let mut points = Vec::with_capacity(ckpts.len());
        for ckpt in ckpts {
            let bytes = compress_image(img, ckpt)?.to_bytes();
            let cs = CompressedImage::from_bytes(&bytes)?;
            let out = decompress_image(&cs, ckpt)?;
            points.push(RatePoint::new(ckpt.model_id as u32, cs.bpp(), ms_ssim(img, &out)?.clamp(0.0, 1.0))?);
        }
        log::info!("measured {name}");
        rows.push(ImageRow { name: name.clone(), points });
    }
    Ok(rows)
}

/// Per-checkpoint mean over images.
pub fn average(rows: &[ImageRow]) -> anyhow::Result<Vec<RatePoint>> {
    let n = rows.len() as f64;
    let first = rows.first().context("no images measured")?;
    first
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let bpp = rows.iter().map(|r| r.points[k].bpp).sum::<f64>() / n;
            let quality = rows.iter().map(|r| r.points[k].quality).sum::<f64>() / n;
            Ok(RatePoint::new(p.model_id, bpp, quality)?)
        })
        .collect()
}

/// `image,m<id>_bpp,m<id>_ms_ssim,...` with a final `average` row.
pub fn report_csv(rows: &[ImageRow], avg: &[RatePoint]) -> String {
    let mut s = String::from("image");
    for p in avg {
        let _ = write!(s, ",m{:03}_bpp,m{:03}_ms_ssim", p.model_id, p.model_id);
    }
    s.push('\n');
    let mut line = |name: &str, points: &[RatePoint]| {
        s.push_str(name);
        for p in points {
            let _ = write!(s, ",{},{}", p.bpp, p.quality);
        }
        s.push('\n');
    };
    for r in rows {
        line(&r.name, &r.points);
    }
    line("average", avg);
    s
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Quality-vs-bpp line plot of each named curve.
pub fn rd_svg(curves: &[(String, Vec<RatePoint>)]) -> String {
    let all = curves.iter().flat_map(|(_, c)| c.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(p.quality);
        y1 = y1.max(p.quality);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let d = (hi - lo).max(1e-6) * 0.05;
        (lo - d, hi + d)
    };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, "<path d=\"M{l} {t} L{l} {b} L{r} {b}\" stroke=\"black\" fill=\"none\"/>");
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{fx:.3}</text>", px(fx), b + 18.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{fy:.3}</text>", l - 6.0, py(fy) + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">bits per pixel</text>", WIDTH / 2.0, HEIGHT - 16.0);
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">MS-SSIM</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, (name, pts)) in curves.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        let path: Vec<String> = sorted.iter().map(|p| format!("{:.2},{:.2}", px(p.bpp), py(p.quality))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" stroke=\"{colour}\" fill=\"none\" stroke-width=\"2\"/>", path.join(" "));
        for p in &sorted {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{colour}\"/>", px(p.bpp), py(p.quality));
        }
        let ly = t + 16.0 * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{colour}\">{}</text>", r - 140.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
