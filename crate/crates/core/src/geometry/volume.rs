use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Point3;

/// Attenuation volume stored `[D, H, W]`; spacing and origin are in DHW order,
/// the origin being the world position of voxel `(0, 0, 0)`'s centre.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub data: Tensor<T>,
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl<T: Scalar> Volume<T> {
    /// Volume centred on the isocentre.
    pub fn centered(data: Tensor<T>, spacing_mm: [f64; 3]) -> Result<Self> {
        let (d, h, w) = data.dims3("volume")?;
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("volume", "spacing must be positive"));
        }
        let origin_mm = [
            -(d as f64 - 1.0) / 2.0 * spacing_mm[0],
            -(h as f64 - 1.0) / 2.0 * spacing_mm[1],
            -(w as f64 - 1.0) / 2.0 * spacing_mm[2],
        ];
        Ok(Volume { data, spacing_mm, origin_mm })
    }

    pub fn zeros(shape: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        Self::centered(Tensor::zeros(shape.to_vec()), spacing_mm)
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    /// World `(x, y, z)` of voxel `(d, h, w)`.
    pub fn voxel_center(&self, d: usize, h: usize, w: usize) -> Point3 {
        [
            self.origin_mm[2] + w as f64 * self.spacing_mm[2],
            self.origin_mm[1] + h as f64 * self.spacing_mm[1],
            self.origin_mm[0] + d as f64 * self.spacing_mm[0],
        ]
    }

    /// Outer faces of the voxel grid as `(min, max)` world corners.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let [d, h, w] = self.dims();
        let lo = [
            self.origin_mm[2] - self.spacing_mm[2] / 2.0,
            self.origin_mm[1] - self.spacing_mm[1] / 2.0,
            self.origin_mm[0] - self.spacing_mm[0] / 2.0,
        ];
        let hi = [
            lo[0] + w as f64 * self.spacing_mm[2],
            lo[1] + h as f64 * self.spacing_mm[1],
            lo[2] + d as f64 * self.spacing_mm[0],
        ];
        (lo, hi)
    }

    /// Continuous voxel index `(d, h, w)` of a world point.
    pub fn to_voxel(&self, p: Point3) -> [f64; 3] {
        [
            (p[2] - self.origin_mm[0]) / self.spacing_mm[0],
            (p[1] - self.origin_mm[1]) / self.spacing_mm[1],
            (p[0] - self.origin_mm[2]) / self.spacing_mm[2],
        ]
    }

    /// Trilinear interpolation; neighbours outside the grid read as zero.
    pub fn trilinear(&self, p: Point3) -> f64 {
        let mut acc = 0.0;
        trilinear_taps(self.dims(), self.to_voxel(p), |i, w| acc += w * self.data.data()[i].to_f64_lossy());
        acc
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            data: self.data.cast(),
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
        }
    }
}

/// Calls `f(flat_index, weight)` for each in-grid neighbour of continuous voxel index `q`.
#[inline]
pub(crate) fn trilinear_taps(dims: [usize; 3], q: [f64; 3], mut f: impl FnMut(usize, f64)) {
    let [nd, nh, nw] = dims;
    let base = [q[0].floor(), q[1].floor(), q[2].floor()];
    if base[0] < -1.0 || base[1] < -1.0 || base[2] < -1.0 || base[0] >= nd as f64 || base[1] >= nh as f64 || base[2] >= nw as f64 {
        return;
    }
    let frac = [q[0] - base[0], q[1] - base[1], q[2] - base[2]];
    let (i0, j0, k0) = (base[0] as i64, base[1] as i64, base[2] as i64);
    for di in 0..2 {
        let i = i0 + di;
        if i < 0 || i >= nd as i64 {
            continue;
        }
        let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
        for dj in 0..2 {
            let j = j0 + dj;
            if j < 0 || j >= nh as i64 {
                continue;
            }
            let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
            for dk in 0..2 {
                let k = k0 + dk;
                if k < 0 || k >= nw as i64 {
                    continue;
                }
                let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                f(((i as usize) * nh + j as usize) * nw + k as usize, wi * wj * wk);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trilinear_at_centers_and_cube_midpoint() {
        let data = Tensor::from_fn([2, 2, 2], |i| i as f64 * 0.5 + 1.0);
        let vol = Volume::centered(data.clone(), [1.0, 2.0, 3.0]).unwrap();
        for d in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    let v = vol.trilinear(vol.voxel_center(d, h, w));
                    assert!((v - data.data()[(d * 2 + h) * 2 + w]).abs() < 1e-12);
                }
            }
        }
        let mean = data.data().iter().sum::<f64>() / 8.0;
        assert!((vol.trilinear([0.0; 3]) - mean).abs() < 1e-12);
        assert_eq!(vol.trilinear([100.0, 0.0, 0.0]), 0.0);
    }
}
