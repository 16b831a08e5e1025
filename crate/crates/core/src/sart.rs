//! Simultaneous algebraic reconstruction using the projector's own ray model.

use crate::error::{Error, Result};
use crate::geometry::projector::{backproject_grid, project_grid, Grid};
use crate::geometry::{ProjectionSet, Volume};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-8;

/// Reconstruction together with the projection-space residual norm after each iteration.
#[derive(Clone, Debug)]
pub struct SartResult<T> {
    pub volume: Volume<T>,
    pub residual_norms: Vec<f64>,
}

pub fn sart_reconstruct<T: Scalar>(proj: &ProjectionSet<T>, iterations: usize, relaxation: f64) -> Result<Volume<T>> {
    Ok(sart_reconstruct_traced(proj, iterations, relaxation)?.volume)
}

pub fn sart_reconstruct_traced<T: Scalar>(proj: &ProjectionSet<T>, iterations: usize, relaxation: f64) -> Result<SartResult<T>> {
    if !(relaxation > 0.0 && relaxation < 2.0) {
        return Err(Error::invalid("sart_reconstruct", format!("relaxation must lie in (0, 2), got {relaxation}")));
    }
    let geom = &proj.geometry;
    geom.validate()?;
    let (shape, spacing) = geom.volume_layout();
    let template = Volume::<T>::zeros(shape, spacing)?;
    let grid = Grid::of(&template);
    let n_vox = shape.iter().product::<usize>();
    let [h, w] = geom.det_pixels;
    let n_pix = h * w;
    let b: Vec<f64> = proj.images.data().iter().map(|v| v.to_f64_lossy()).collect();

    let ones_vol = vec![1.0; n_vox];
    let ones_img = vec![1.0; n_pix];
    let mut row_sums = Vec::with_capacity(geom.views());
    let mut col_sums = Vec::with_capacity(geom.views());
    for k in 0..geom.views() {
        row_sums.push(project_grid(&grid, &ones_vol, geom, k));
        let mut c = vec![0.0; n_vox];
        backproject_grid(&grid, &ones_img, geom, k, &mut c);
        col_sums.push(c);
    }

    let residual_norm = |x: &[f64]| -> f64 {
        let mut acc = 0.0;
        for k in 0..geom.views() {
            let ax = project_grid(&grid, x, geom, k);
            acc += ax.iter().zip(&b[k * n_pix..(k + 1) * n_pix]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
        }
        acc.sqrt()
    };

    let mut x = vec![0.0; n_vox];
    let mut residual_norms = Vec::with_capacity(iterations);
    let mut corr = vec![0.0; n_vox];
    for _ in 0..iterations {
        for k in 0..geom.views() {
            let ax = project_grid(&grid, &x, geom, k);
            let r: Vec<f64> = ax
                .iter()
                .zip(&b[k * n_pix..(k + 1) * n_pix])
                .zip(&row_sums[k])
                .map(|((a, b), rs)| (b - a) / (rs + NORM_EPS))
                .collect();
            corr.fill(0.0);
            backproject_grid(&grid, &r, geom, k, &mut corr);
            for ((x, c), cs) in x.iter_mut().zip(&corr).zip(&col_sums[k]) {
                *x = (*x + relaxation * c / (cs + NORM_EPS)).max(0.0);
            }
        }
        residual_norms.push(residual_norm(&x));
    }
    let data = Tensor::new(shape.to_vec(), x.into_iter().map(T::lit).collect())?;
    Ok(SartResult {
        volume: Volume::centered(data, spacing)?,
        residual_norms,
    })
}
