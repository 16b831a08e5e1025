//! Circular cone-beam geometry, volumes, ray-driven projection and phantoms.
//!
//! World axes: `x` runs along volume columns (W), `y` along rows (H) and `z`
//! along slices (D). The source orbits in the `z = 0` plane around the origin.
//! Detector coordinates are continuous pixel indices `(u, v)` = (column, row)
//! with the detector centre at `((W - 1) / 2, (H - 1) / 2)`.

pub mod io;
pub mod phantom;
pub mod projector;
pub mod volume;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use phantom::{make_phantom, PhantomKind};
pub use projector::{backproject_view, forward_project, project_view, ProjectionSet};
pub use volume::Volume;

pub type Point3 = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeBeamGeometry {
    pub dso_mm: f64,
    pub dsd_mm: f64,
    /// `[H, W]`
    pub det_pixels: [usize; 2],
    /// `[row, col]`
    pub det_spacing_mm: [f64; 2],
    /// `[H, W, D]`
    pub vol_shape: [usize; 3],
    /// `[s_h, s_w, s_d]`
    pub vol_spacing_mm: [f64; 3],
    pub angles_deg: Vec<f64>,
}

impl ConeBeamGeometry {
    /// `K` angles uniformly covering `[0, 180)` degrees.
    pub fn uniform_angles(k: usize) -> Vec<f64> {
        (0..k).map(|i| 180.0 * i as f64 / k as f64).collect()
    }

    /// Desk-scale setup: 64x64 detector, 48^3 volume at 1 mm.
    pub fn desk(views: usize) -> Self {
        ConeBeamGeometry {
            dso_mm: 150.0,
            dsd_mm: 300.0,
            det_pixels: [64, 64],
            det_spacing_mm: [2.0, 2.0],
            vol_shape: [48, 48, 48],
            vol_spacing_mm: [1.0, 1.0, 1.0],
            angles_deg: Self::uniform_angles(views),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let op = "geometry";
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.dso_mm) && self.dsd_mm.is_finite() && self.dsd_mm > self.dso_mm) {
            return Err(Error::invalid(op, format!("need dsd_mm > dso_mm > 0, got dsd {} dso {}", self.dsd_mm, self.dso_mm)));
        }
        if !self.det_spacing_mm.iter().chain(&self.vol_spacing_mm).all(|&s| positive(s)) {
            return Err(Error::invalid(op, "spacings must be positive"));
        }
        if self.det_pixels.contains(&0) || self.vol_shape.contains(&0) {
            return Err(Error::invalid(op, "detector and volume extents must be positive"));
        }
        if self.angles_deg.is_empty() {
            return Err(Error::invalid(op, "at least one angle is required"));
        }
        if let Some(a) = self.angles_deg.iter().find(|a| !(0.0..180.0).contains(*a)) {
            return Err(Error::invalid(op, format!("angle {a} outside [0, 180)")));
        }
        Ok(())
    }

    pub fn views(&self) -> usize {
        self.angles_deg.len()
    }

    /// Source position, unit view direction, and detector axes at `angle_deg`.
    pub fn frame(&self, angle_deg: f64) -> Frame {
        let a = angle_deg.to_radians();
        let (s, c) = a.sin_cos();
        Frame {
            source: [self.dso_mm * c, self.dso_mm * s, 0.0],
            normal: [-c, -s, 0.0],
            u: [-s, c, 0.0],
            v: [0.0, 0.0, 1.0],
        }
    }

    /// Continuous detector pixel coordinates `(u, v)` of world point `x`.
    pub fn project_point(&self, x: Point3, angle_deg: f64) -> Result<(f64, f64)> {
        let f = self.frame(angle_deg);
        let d = sub(x, f.source);
        let depth = dot(d, f.normal);
        if depth <= 1e-9 * self.dso_mm {
            return Err(Error::invalid("project_point", format!("point {x:?} is not in front of the source at {angle_deg} deg")));
        }
        let t = self.dsd_mm / depth;
        let (u_mm, v_mm) = (t * dot(d, f.u), t * dot(d, f.v));
        Ok(self.mm_to_pixel(u_mm, v_mm))
    }

    pub(crate) fn mm_to_pixel(&self, u_mm: f64, v_mm: f64) -> (f64, f64) {
        let [h, w] = self.det_pixels;
        (
            u_mm / self.det_spacing_mm[1] + (w as f64 - 1.0) / 2.0,
            v_mm / self.det_spacing_mm[0] + (h as f64 - 1.0) / 2.0,
        )
    }

    /// World position of the centre of detector pixel `(row, col)`.
    pub fn pixel_center(&self, frame: &Frame, row: usize, col: usize) -> Point3 {
        let [h, w] = self.det_pixels;
        let u_mm = (col as f64 - (w as f64 - 1.0) / 2.0) * self.det_spacing_mm[1];
        let v_mm = (row as f64 - (h as f64 - 1.0) / 2.0) * self.det_spacing_mm[0];
        let mut p = frame.source;
        for i in 0..3 {
            p[i] += self.dsd_mm * frame.normal[i] + u_mm * frame.u[i] + v_mm * frame.v[i];
        }
        p
    }

    /// `[D, H, W]` volume shape and matching DHW spacing.
    pub fn volume_layout(&self) -> ([usize; 3], [f64; 3]) {
        let [h, w, d] = self.vol_shape;
        let [sh, sw, sd] = self.vol_spacing_mm;
        ([d, h, w], [sd, sh, sw])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub source: Point3,
    pub normal: Point3,
    pub u: Point3,
    pub v: Point3,
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
