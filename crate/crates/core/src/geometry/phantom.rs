use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Shepp3d,
    RandomEllipsoids,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp3d" => Ok(PhantomKind::Shepp3d),
            "random_ellipsoids" => Ok(PhantomKind::RandomEllipsoids),
            _ => Err(Error::invalid("phantom", format!("unknown phantom kind {s:?}"))),
        }
    }
}

/// Ellipsoid in normalized `[-1, 1]^3` coordinates with ZXZ Euler angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub value: f64,
    pub axes: [f64; 3],
    pub center: [f64; 3],
    pub euler_deg: [f64; 3],
}

impl Ellipsoid {
    /// Rows of the rotation taking world offsets into the ellipsoid frame.
    fn rotation(&self) -> [[f64; 3]; 3] {
        let [phi, theta, psi] = self.euler_deg.map(f64::to_radians);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (ss, cs) = psi.sin_cos();
        [
            [cs * cp - ct * sp * ss, cs * sp + ct * cp * ss, ss * st],
            [-ss * cp - ct * sp * cs, -ss * sp + ct * cp * cs, cs * st],
            [st * sp, -st * cp, ct],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let r = self.rotation();
        let mut s = 0.0;
        for i in 0..3 {
            let q = r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2];
            s += (q / self.axes[i]).powi(2);
        }
        s <= 1.0
    }
}

/// Modified 3D Shepp-Logan ellipsoids.
pub fn shepp_logan_ellipsoids() -> Vec<Ellipsoid> {
    const TABLE: [[f64; 10]; 10] = [
        [1.0, 0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, 0.0, 0.0, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0, 0.0, 10.0],
        [-0.2, 0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0, 0.0, 10.0],
        [0.1, 0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.0, 0.0, 0.0],
        [0.1, 0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0, 0.0, 0.0],
        [0.1, 0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0, 0.0, 0.0],
        [0.1, 0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.0, 0.0, 0.0],
        [0.1, 0.023, 0.023, 0.02, 0.0, -0.606, 0.0, 0.0, 0.0, 0.0],
        [0.1, 0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.0, 0.0, 0.0],
    ];
    TABLE
        .iter()
        .map(|r| Ellipsoid {
            value: r[0],
            axes: [r[1], r[2], r[3]],
            center: [r[4], r[5], r[6]],
            euler_deg: [r[7], r[8], r[9]],
        })
        .collect()
}

/// 5 to 12 seeded ellipsoids, centres within 0.5, semi-axes in [0.1, 0.35], values in [0.1, 1].
pub fn random_ellipsoids(seed: u64) -> Vec<Ellipsoid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..=12);
    (0..n)
        .map(|_| Ellipsoid {
            value: rng.gen_range(0.1..=1.0),
            axes: [0; 3].map(|_| rng.gen_range(0.1..=0.35)),
            center: [0; 3].map(|_| rng.gen_range(-0.5..=0.5)),
            euler_deg: [rng.gen_range(0.0..180.0), rng.gen_range(0.0..180.0), 0.0],
        })
        .collect()
}

/// Sums ellipsoid values at voxel centres of a `size^3` grid spanning `[-1, 1]^3`, clipped to `[0, 1]`.
pub fn rasterize<T: Scalar>(ellipsoids: &[Ellipsoid], size: usize, spacing_mm: [f64; 3]) -> Result<Volume<T>> {
    if size == 0 {
        return Err(Error::invalid("phantom", "size must be positive"));
    }
    let half = (size as f64 - 1.0) / 2.0;
    let coord = |i: usize| if size == 1 { 0.0 } else { (i as f64 - half) / half };
    let mut data = Vec::with_capacity(size * size * size);
    for d in 0..size {
        for h in 0..size {
            for w in 0..size {
                let p = [coord(w), coord(h), coord(d)];
                let v: f64 = ellipsoids.iter().filter(|e| e.contains(p)).map(|e| e.value).sum();
                data.push(T::lit(v.clamp(0.0, 1.0)));
            }
        }
    }
    Volume::centered(Tensor::new(vec![size; 3], data)?, spacing_mm)
}

/// Phantom of edge `size` voxels at 1 mm spacing.
pub fn make_phantom<T: Scalar>(kind: PhantomKind, size: usize, seed: u64) -> Result<Volume<T>> {
    let ellipsoids = match kind {
        PhantomKind::Shepp3d => shepp_logan_ellipsoids(),
        PhantomKind::RandomEllipsoids => random_ellipsoids(seed),
    };
    rasterize(&ellipsoids, size, [1.0; 3])
}
