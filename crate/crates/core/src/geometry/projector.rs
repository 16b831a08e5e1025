use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::volume::trilinear_taps;
use super::{sub, ConeBeamGeometry, Point3, Volume};

/// `K` projections with their acquisition geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet<T> {
    /// `[K, H, W]`
    pub images: Tensor<T>,
    pub angles_deg: Vec<f64>,
    pub geometry: ConeBeamGeometry,
}

impl<T: Scalar> ProjectionSet<T> {
    pub fn new(images: Tensor<T>, geometry: ConeBeamGeometry) -> Result<Self> {
        geometry.validate()?;
        let (k, h, w) = images.dims3("projection_set")?;
        if k != geometry.views() {
            return Err(Error::shape("projection_set", "views", geometry.views(), k));
        }
        if [h, w] != geometry.det_pixels {
            return Err(Error::invalid("projection_set", format!("images are {h}x{w}, detector is {:?}", geometry.det_pixels)));
        }
        Ok(ProjectionSet {
            images,
            angles_deg: geometry.angles_deg.clone(),
            geometry,
        })
    }

    /// Image of view `k` as `[1, H, W]`.
    pub fn view(&self, k: usize) -> Tensor<T> {
        let [h, w] = self.geometry.det_pixels;
        Tensor::from_parts(vec![1, h, w], self.images.data()[k * h * w..(k + 1) * h * w].to_vec())
    }
}

/// Geometry of a voxel grid, independent of its values.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    lo: Point3,
    hi: Point3,
}

impl Grid {
    pub(crate) fn of<T: Scalar>(vol: &Volume<T>) -> Self {
        let (lo, hi) = vol.bounding_box();
        Grid {
            dims: vol.dims(),
            spacing: vol.spacing_mm,
            origin: vol.origin_mm,
            lo,
            hi,
        }
    }

    fn step(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min) / 2.0
    }

    /// Visits every trilinear tap of every ray sample, with weight already scaled by the step.
    fn trace(&self, source: Point3, target: Point3, mut f: impl FnMut(usize, f64)) {
        let d = sub(target, source);
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let dir = [d[0] / len, d[1] / len, d[2] / len];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if source[a] < self.lo[a] || source[a] > self.hi[a] {
                    return;
                }
                continue;
            }
            let ta = (self.lo[a] - source[a]) / dir[a];
            let tb = (self.hi[a] - source[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        if t1 <= t0 {
            return;
        }
        let ds = self.step();
        let n = ((t1 - t0) / ds).ceil() as usize;
        for i in 0..n {
            let t = t0 + (i as f64 + 0.5) * ds;
            let p = [source[0] + t * dir[0], source[1] + t * dir[1], source[2] + t * dir[2]];
            let q = [
                (p[2] - self.origin[0]) / self.spacing[0],
                (p[1] - self.origin[1]) / self.spacing[1],
                (p[0] - self.origin[2]) / self.spacing[2],
            ];
            trilinear_taps(self.dims, q, |idx, w| f(idx, w * ds));
        }
    }
}

/// Line integrals of `values` (laid out on `grid`) for every pixel of view `k`.
pub(crate) fn project_grid(grid: &Grid, values: &[f64], geom: &ConeBeamGeometry, k: usize) -> Vec<f64> {
    let [h, w] = geom.det_pixels;
    let frame = geom.frame(geom.angles_deg[k]);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            grid.trace(frame.source, geom.pixel_center(&frame, r, c), |i, wt| acc += wt * values[i]);
            out[r * w + c] = acc;
        }
    }
    out
}

/// Adjoint of [`project_grid`]: accumulates `image` back along the same rays.
pub(crate) fn backproject_grid(grid: &Grid, image: &[f64], geom: &ConeBeamGeometry, k: usize, out: &mut [f64]) {
    let [h, w] = geom.det_pixels;
    let frame = geom.frame(geom.angles_deg[k]);
    for r in 0..h {
        for c in 0..w {
            let g = image[r * w + c];
            if g == 0.0 {
                continue;
            }
            grid.trace(frame.source, geom.pixel_center(&frame, r, c), |i, wt| out[i] += wt * g);
        }
    }
}

/// Projection of `vol` at view `k` of `geom`, `[H * W]` row-major.
pub fn project_view<T: Scalar>(vol: &Volume<T>, geom: &ConeBeamGeometry, k: usize) -> Vec<f64> {
    let values: Vec<f64> = vol.data.data().iter().map(|v| v.to_f64_lossy()).collect();
    project_grid(&Grid::of(vol), &values, geom, k)
}

/// Exact transpose of [`project_view`], accumulated into `out` (laid out like `vol`).
pub fn backproject_view<T: Scalar>(vol: &Volume<T>, image: &[f64], geom: &ConeBeamGeometry, k: usize, out: &mut [f64]) {
    backproject_grid(&Grid::of(vol), image, geom, k, out)
}

/// Ray-driven projections of `vol` for every angle of `geom`.
pub fn forward_project<T: Scalar>(vol: &Volume<T>, geom: &ConeBeamGeometry) -> Result<ProjectionSet<T>> {
    geom.validate()?;
    let grid = Grid::of(vol);
    let values: Vec<f64> = vol.data.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut images = Vec::with_capacity(geom.views() * geom.det_pixels[0] * geom.det_pixels[1]);
    for k in 0..geom.views() {
        images.extend(project_grid(&grid, &values, geom, k).into_iter().map(T::lit));
    }
    let [h, w] = geom.det_pixels;
    ProjectionSet::new(Tensor::new(vec![geom.views(), h, w], images)?, geom.clone())
}
