use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use freqct::geometry::io::write_atomic;
use serde::Serialize;

use crate::manifest::Run;
use crate::{usage, PlotArgs};

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let header = rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
    let rows = rdr.records().map(|r| r.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<Vec<Vec<String>>, _>>()?;
    if header.is_empty() || rows.is_empty() {
        return Err(usage(format!("{} has no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

fn column(t: &Table, name: &str) -> Result<Vec<f64>> {
    let i = t.header.iter().position(|h| h == name).ok_or_else(|| usage(format!("no column {name:?}; have {}", t.header.join(","))))?;
    t.rows
        .iter()
        .map(|r| {
            let s = r.get(i).map(String::as_str).unwrap_or("");
            s.trim().parse::<f64>().map_err(|_| usage(format!("column {name:?}: {s:?} is not a number")))
        })
        .collect()
}

/// Linear interpolation onto `n` evenly spaced x values; input sorted by x first.
pub fn resample(xs: &[f64], ys: &[f64], n: usize) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() <= n || n < 2 {
        return pts;
    }
    let (x0, x1) = (pts[0].0, pts[pts.len() - 1].0);
    let mut j = 0;
    (0..n)
        .map(|i| {
            let x = x0 + (x1 - x0) * i as f64 / (n - 1) as f64;
            while j + 2 < pts.len() && pts[j + 1].0 < x {
                j += 1;
            }
            let (a, b) = (pts[j], pts[j + 1]);
            let y = if b.0 > a.0 { a.1 + (b.1 - a.1) * ((x - a.0) / (b.0 - a.0)).clamp(0.0, 1.0) } else { b.1 };
            (x, y)
        })
        .collect()
}

struct Canvas {
    w: u32,
    h: u32,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Canvas { w, h, px: vec![255; (w * h * 3) as usize] }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.w && (y as u32) < self.h {
            let i = ((y as u32 * self.w + x as u32) * 3) as usize;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    // Bresenham
    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(BufWriter::new(&mut out), self.w, self.h);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header()?.write_image_data(&self.px)?;
        }
        Ok(out)
    }
}

fn span(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

pub fn render(pts: &[(f64, f64)], w: u32, h: u32) -> Result<Vec<u8>> {
    let mut c = Canvas::new(w, h);
    let m = (w.min(h) / 10).max(4) as i64;
    let (l, r, t, b) = (m, w as i64 - 1 - m / 2, m / 2, h as i64 - 1 - m);
    let grey = [200, 200, 200];
    for k in 1..5 {
        let y = t + (b - t) * k / 5;
        c.line((l, y), (r, y), grey);
    }
    c.line((l, b), (r, b), [0; 3]);
    c.line((l, t), (l, b), [0; 3]);
    for k in 0..=5 {
        let x = l + (r - l) * k / 5;
        c.line((x, b), (x, b + 4), [0; 3]);
        let y = t + (b - t) * k / 5;
        c.line((l - 4, y), (l, y), [0; 3]);
    }
    let (x0, x1) = span(pts.iter().map(|p| p.0));
    let (y0, y1) = span(pts.iter().map(|p| p.1));
    let to_px = |(x, y): (f64, f64)| {
        let u = l as f64 + (x - x0) / (x1 - x0) * (r - l) as f64;
        let v = b as f64 - (y - y0) / (y1 - y0) * (b - t) as f64;
        (u.round() as i64, v.round() as i64)
    };
    let blue = [31, 90, 180];
    match pts {
        [] => {}
        [p] => {
            let (u, v) = to_px(*p);
            for d in -2..=2 {
                c.set(u + d, v, blue);
                c.set(u, v + d, blue);
            }
        }
        _ => {
            for s in pts.windows(2) {
                c.line(to_px(s[0]), to_px(s[1]), blue);
            }
        }
    }
    c.png()
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct PlotConfig {
    x: String,
    y: String,
    points: usize,
    width: u32,
    height: u32,
}

pub fn run(a: PlotArgs) -> Result<()> {
    let mut run = Run::start("plot");
    if a.width < 32 || a.height < 32 || a.points == 0 {
        return Err(usage("plot needs width and height >= 32 and points >= 1"));
    }
    let t = read_table(&a.metrics)?;
    run.input(&a.metrics);
    let has = |c: &str| t.header.iter().any(|h| h == c);
    let loss_log = has("step") && has("loss");
    let y_name = a.y.clone().unwrap_or_else(|| if loss_log { "loss" } else { "psnr_db" }.into());
    let x_name = a.x.clone().unwrap_or_else(|| {
        if loss_log {
            "step".into()
        } else if has("views") {
            "views".into()
        } else {
            "index".into()
        }
    });
    let ys = column(&t, &y_name)?;
    let xs = if x_name == "index" && !has("index") { (0..ys.len()).map(|i| i as f64).collect() } else { column(&t, &x_name)? };
    let pts = resample(&xs, &ys, a.points);
    if pts.is_empty() {
        return Err(usage(format!("no finite ({x_name},{y_name}) pairs in {}", a.metrics.display())));
    }

    let png_path = with_suffix(&a.out, ".png");
    let csv_path = with_suffix(&a.out, ".csv");
    if let Some(p) = png_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    let mut text = format!("{x_name},{y_name}\n");
    for (x, y) in &pts {
        text.push_str(&format!("{x},{y}\n"));
    }
    write_atomic(&csv_path, text.as_bytes())?;
    write_atomic(&png_path, &render(&pts, a.width, a.height).context("encoding png")?)?;
    run.output(&png_path);
    run.output(&csv_path);
    run.finish(&a.out, &PlotConfig { x: x_name, y: y_name, points: a.points, width: a.width, height: a.height }, None)?;
    Ok(())
}
