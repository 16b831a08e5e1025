//! Case directories as written by `simulate`: proj.raw, volume.raw and optionally roi.raw.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use freqct::geometry::io::{read_projections, read_volume};
use freqct::geometry::Volume;
use freqct::train::TrainingCase;

use crate::usage;

pub const PROJ: &str = "proj.raw";
pub const VOLUME: &str = "volume.raw";
pub const ROI: &str = "roi.raw";

pub struct Case {
    pub name: String,
    pub data: TrainingCase<f32>,
    pub roi: Option<Volume<f32>>,
}

/// `data` itself if it holds a case, else its case subdirectories in name order.
pub fn case_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    if data.join(PROJ).is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let entries = std::fs::read_dir(data).map_err(|e| usage(format!("cannot read data directory {}: {e}", data.display())))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.join(PROJ).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("{} contains no case directories with {PROJ}", data.display())));
    }
    Ok(dirs)
}

pub fn load_case(dir: &Path) -> Result<Case> {
    let projections = read_projections(&dir.join(PROJ)).with_context(|| format!("case {}", dir.display()))?;
    let volume = read_volume(&dir.join(VOLUME)).with_context(|| format!("case {}", dir.display()))?;
    let (shape, _) = projections.geometry.volume_layout();
    if volume.dims() != shape {
        return Err(usage(format!("{}: volume shape {:?} differs from geometry {:?}", dir.display(), volume.dims(), shape)));
    }
    let roi_path = dir.join(ROI);
    let roi = if roi_path.is_file() { Some(read_volume(&roi_path)?) } else { None };
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Case { name, data: TrainingCase { projections, volume }, roi })
}

/// Every case under `data`; all must share one detector size.
pub fn load_cases(data: &Path) -> Result<Vec<Case>> {
    let cases = case_dirs(data)?.iter().map(|d| load_case(d)).collect::<Result<Vec<_>>>()?;
    let det = cases[0].data.projections.geometry.det_pixels;
    if let Some(c) = cases.iter().find(|c| c.data.projections.geometry.det_pixels != det) {
        return Err(usage(format!("case {} has detector {:?}, expected {:?}", c.name, c.data.projections.geometry.det_pixels, det)));
    }
    Ok(cases)
}
