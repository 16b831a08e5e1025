//! Raw little-endian f32 volumes and projections with JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ConeBeamGeometry, ProjectionSet, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub shape: [usize; 3],
    pub dtype: String,
    pub order: String,
    pub geometry: ConeBeamGeometry,
}

/// `foo.raw` -> `foo.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn encode_f32le<T: Scalar>(values: &[T]) -> Vec<u8> {
    values.iter().flat_map(|v| (v.to_f64_lossy() as f32).to_le_bytes()).collect()
}

pub fn decode_f32le<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Vec<T>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid("read_raw", format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect())
}

/// Writes through a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_atomic(path, (text + "\n").as_bytes())
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn load_geometry(path: &Path) -> Result<ConeBeamGeometry> {
    let g: ConeBeamGeometry = read_json(path)?;
    g.validate()?;
    Ok(g)
}

pub fn save_geometry(path: &Path, geom: &ConeBeamGeometry) -> Result<()> {
    write_json(path, geom)
}

fn read_raw<T: Scalar>(path: &Path, expected: usize) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = decode_f32le(&bytes, path)?;
    if values.len() != expected {
        return Err(Error::shape("read_raw", "element count", expected, values.len()));
    }
    Ok(values)
}

fn check_tags(dtype: &str, order: &str, want_order: &str, path: &Path) -> Result<()> {
    if dtype != "f32le" || order != want_order {
        return Err(Error::invalid(
            "read_sidecar",
            format!("{}: expected dtype f32le and order {want_order}, got {dtype} / {order}", path.display()),
        ));
    }
    Ok(())
}

pub fn write_volume<T: Scalar>(raw: &Path, vol: &Volume<T>) -> Result<()> {
    write_atomic(raw, &encode_f32le(vol.data.data()))?;
    let side = VolumeSidecar {
        shape: vol.dims(),
        spacing_mm: vol.spacing_mm,
        dtype: "f32le".into(),
        order: "DHW".into(),
    };
    write_json(&sidecar_path(raw), &side)
}

pub fn read_volume<T: Scalar>(raw: &Path) -> Result<Volume<T>> {
    let side_path = sidecar_path(raw);
    let side: VolumeSidecar = read_json(&side_path)?;
    check_tags(&side.dtype, &side.order, "DHW", &side_path)?;
    let data = read_raw(raw, side.shape.iter().product())?;
    Volume::centered(Tensor::new(side.shape.to_vec(), data)?, side.spacing_mm)
}

pub fn write_projections<T: Scalar>(raw: &Path, proj: &ProjectionSet<T>) -> Result<()> {
    write_atomic(raw, &encode_f32le(proj.images.data()))?;
    let s = proj.images.shape();
    let side = ProjectionSidecar {
        shape: [s[0], s[1], s[2]],
        dtype: "f32le".into(),
        order: "KHW".into(),
        geometry: proj.geometry.clone(),
    };
    write_json(&sidecar_path(raw), &side)
}

pub fn read_projections<T: Scalar>(raw: &Path) -> Result<ProjectionSet<T>> {
    let side_path = sidecar_path(raw);
    let side: ProjectionSidecar = read_json(&side_path)?;
    check_tags(&side.dtype, &side.order, "KHW", &side_path)?;
    let data = read_raw(raw, side.shape.iter().product())?;
    ProjectionSet::new(Tensor::new(side.shape.to_vec(), data)?, side.geometry)
}
