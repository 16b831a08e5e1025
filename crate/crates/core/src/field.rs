//! Intensity field: project query points into every view, sample the view
//! features bilinearly, fuse across views and decode with an MLP.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ViewFusion;
use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, Point3, Volume};
use crate::layers::Linear;
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<'t, T: Scalar> Var<'t, T> {
    /// Bilinear samples of a `[C, H, W]` map at `[N, 2]` continuous `(x, y)` = (column, row)
    /// coordinates, giving `[N, C]`. Points outside `[0, W-1] x [0, H-1]` read as zero.
    /// Differentiable with respect to both the map and the coordinates.
    pub fn bilinear_gather(self, coords: Var<'t, T>) -> Result<Var<'t, T>> {
        let fv = self.value();
        let (c, h, w) = fv.dims3("bilinear_sample")?;
        let cv = coords.value();
        let (n, two) = cv.dims2("bilinear_sample")?;
        if two != 2 {
            return Err(Error::shape("bilinear_sample", "coordinate axis", 2, two));
        }
        let taps = bilinear_taps::<T>(cv.data(), n, h, w);
        let fd = fv.data();
        let hw = h * w;
        let mut out = vec![T::zero(); n * c];
        for (i, tap) in taps.iter().enumerate() {
            let Some(tap) = tap else { continue };
            let row = &mut out[i * c..(i + 1) * c];
            for &(idx, wt) in tap.iter() {
                for (ch, o) in row.iter_mut().enumerate() {
                    *o += wt * fd[ch * hw + idx];
                }
            }
        }
        let (i_f, i_c) = (self.id, coords.id);
        self.tape.push("bilinear_sample", Tensor::from_parts(vec![n, c], out), &[self, coords], move |g, sink| {
            if let Some(gf) = sink.grad_mut(i_f) {
                for (i, tap) in taps.iter().enumerate() {
                    let Some(tap) = tap else { continue };
                    for &(idx, wt) in tap.iter() {
                        for ch in 0..c {
                            gf[ch * hw + idx] += wt * g[i * c + ch];
                        }
                    }
                }
            }
            if let Some(gc) = sink.grad_mut(i_c) {
                let fd = fv.data();
                let at = |ch: usize, y: i64, x: i64| {
                    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                        T::zero()
                    } else {
                        fd[ch * hw + y as usize * w + x as usize]
                    }
                };
                for (i, tap) in taps.iter().enumerate() {
                    if tap.is_none() {
                        continue;
                    }
                    let (x, y) = (cv.data()[2 * i], cv.data()[2 * i + 1]);
                    let (x0, y0) = (x.floor(), y.floor());
                    let (fx, fy) = (x - x0, y - y0);
                    let (xi, yi) = (x0.to_i64().unwrap_or(0), y0.to_i64().unwrap_or(0));
                    let (mut dx, mut dy) = (T::zero(), T::zero());
                    for ch in 0..c {
                        let (a, b) = (at(ch, yi, xi), at(ch, yi, xi + 1));
                        let (cc, d) = (at(ch, yi + 1, xi), at(ch, yi + 1, xi + 1));
                        let gi = g[i * c + ch];
                        dx += gi * ((T::one() - fy) * (b - a) + fy * (d - cc));
                        dy += gi * ((T::one() - fx) * (cc - a) + fx * (d - b));
                    }
                    gc[2 * i] += dx;
                    gc[2 * i + 1] += dy;
                }
            }
        })
    }
}

type Taps<T> = Option<Vec<(usize, T)>>;

fn bilinear_taps<T: Scalar>(coords: &[T], n: usize, h: usize, w: usize) -> Vec<Taps<T>> {
    let (wmax, hmax) = (T::lit((w - 1) as f64), T::lit((h - 1) as f64));
    (0..n)
        .map(|i| {
            let (x, y) = (coords[2 * i], coords[2 * i + 1]);
            if !(x >= T::zero() && x <= wmax && y >= T::zero() && y <= hmax) {
                return None;
            }
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (xi, yi) = (x0.to_usize().unwrap_or(0), y0.to_usize().unwrap_or(0));
            let mut taps = Vec::with_capacity(4);
            for (dy, wy) in [(0, T::one() - fy), (1, fy)] {
                for (dx, wx) in [(0, T::one() - fx), (1, fx)] {
                    let (yy, xx) = (yi + dy, xi + dx);
                    let wt = wy * wx;
                    if yy < h && xx < w && wt != T::zero() {
                        taps.push((yy * w + xx, wt));
                    }
                }
            }
            Some(taps)
        })
        .collect()
}

/// Bilinear sample of a `[C, H, W]` tensor at `(x, y)`.
pub fn bilinear_sample<T: Scalar>(feature: &Tensor<T>, x: f64, y: f64) -> Result<Vec<T>> {
    let tape = Tape::new();
    let v = tape.constant(feature.clone()).bilinear_gather(tape.constant(Tensor::new([1, 2], vec![T::lit(x), T::lit(y)])?))?;
    Ok(v.value().data().to_vec())
}

/// Elementwise set function over per-view `[N, C]` features.
pub fn fuse_views<'t, T: Scalar>(per_view: &[Var<'t, T>], mode: ViewFusion) -> Result<Var<'t, T>> {
    match mode {
        ViewFusion::Max => Var::max_of(per_view),
        ViewFusion::Mean => Var::mean_of(per_view),
    }
}

/// Four-layer MLP `C -> C -> C -> C/2 -> 1` with ReLU between layers.
#[derive(Clone, Debug)]
pub struct FieldDecoder {
    pub layers: Vec<Linear>,
    pub fusion: ViewFusion,
    pub width: usize,
}

impl FieldDecoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, width: usize, fusion: ViewFusion, rng: &mut R) -> Result<Self> {
        let half = (width / 2).max(1);
        let dims = [(width, width), (width, width), (width, half), (half, 1)];
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| Linear::new(store, &format!("{name}.fc{i}"), a, b, true, rng))
            .collect::<Result<_>>()?;
        Ok(FieldDecoder { layers, fusion, width })
    }

    /// `[N, C]` fused features to `[N]` intensities.
    pub fn decode<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(b, h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        let n = h.shape()[0];
        h.reshape(&[n])
    }
}

/// Feature-grid coordinates of every point in view `k`, `[N, 2]`.
///
/// A feature map of size `h x w` covers the detector with uniform scale, so
/// detector pixel `u` lands at `(u + 0.5) * w / W_det - 0.5`.
pub fn view_coords<T: Scalar>(geom: &ConeBeamGeometry, points: &[Point3], k: usize, feat_hw: (usize, usize)) -> Result<Tensor<T>> {
    let [dh, dw] = geom.det_pixels;
    let (sx, sy) = (feat_hw.1 as f64 / dw as f64, feat_hw.0 as f64 / dh as f64);
    let mut out = Vec::with_capacity(points.len() * 2);
    for &p in points {
        let (u, v) = geom.project_point(p, geom.angles_deg[k])?;
        out.push(T::lit((u + 0.5) * sx - 0.5));
        out.push(T::lit((v + 0.5) * sy - 0.5));
    }
    Tensor::new(vec![points.len(), 2], out)
}

/// Intensities `[N]` at `points` from the per-view feature maps.
pub fn predict_points<'t, T: Scalar>(
    b: &Bound<'t, T>,
    features: &[Var<'t, T>],
    geom: &ConeBeamGeometry,
    points: &[Point3],
    decoder: &FieldDecoder,
) -> Result<Var<'t, T>> {
    if features.len() != geom.views() {
        return Err(Error::shape("predict_points", "views", geom.views(), features.len()));
    }
    if points.is_empty() {
        return Err(Error::invalid("predict_points", "no query points"));
    }
    let mut sampled = Vec::with_capacity(features.len());
    for (k, &f) in features.iter().enumerate() {
        let shape = f.shape();
        if shape.len() != 3 || shape[0] != decoder.width {
            return Err(Error::invalid("predict_points", format!("view {k} feature shape {shape:?} does not have {} channels", decoder.width)));
        }
        let coords = f.tape().constant(view_coords(geom, points, k, (shape[1], shape[2]))?);
        sampled.push(f.bilinear_gather(coords)?);
    }
    decoder.decode(b, fuse_views(&sampled, decoder.fusion)?)
}

/// World positions of every voxel centre of a centred grid, in storage order.
pub fn voxel_grid(shape: [usize; 3], spacing_mm: [f64; 3]) -> Result<Vec<Point3>> {
    let vol = Volume::<f64>::zeros(shape, spacing_mm)?;
    let [d, h, w] = shape;
    let mut pts = Vec::with_capacity(d * h * w);
    for i in 0..d {
        for j in 0..h {
            for k in 0..w {
                pts.push(vol.voxel_center(i, j, k));
            }
        }
    }
    Ok(pts)
}

/// Evaluates the field on every voxel centre, `chunk` points at a time.
pub fn reconstruct_volume<T: Scalar>(
    params: &ParamStore<T>,
    decoder: &FieldDecoder,
    features: &[Tensor<T>],
    geom: &ConeBeamGeometry,
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    chunk: usize,
) -> Result<Volume<T>> {
    if chunk == 0 {
        return Err(Error::invalid("reconstruct_volume", "chunk must be positive"));
    }
    let points = voxel_grid(shape, spacing_mm)?;
    let mut data = Vec::with_capacity(points.len());
    for part in points.chunks(chunk) {
        let tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let feats: Vec<_> = features.iter().map(|f| tape.constant(f.clone())).collect();
        let pred = predict_points(&b, &feats, geom, part, decoder)?;
        data.extend_from_slice(pred.value().data());
    }
    Volume::centered(Tensor::new(shape.to_vec(), data)?, spacing_mm)
}
