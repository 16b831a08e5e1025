//! Volume quality metrics: PSNR, volumetric SSIM and their ROI-weighted forms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Volume;
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn values<T: Scalar>(v: &Volume<T>) -> Vec<f64> {
    v.data.data().iter().map(|x| x.to_f64_lossy()).collect()
}

fn same_shape<T: Scalar>(op: &'static str, a: &Volume<T>, b: &Volume<T>) -> Result<()> {
    for (axis, (x, y)) in ["D", "H", "W"].iter().zip(a.dims().iter().zip(b.dims())) {
        if *x != y {
            return Err(Error::shape(op, *axis, *x, y));
        }
    }
    Ok(())
}

fn weights<T: Scalar>(op: &'static str, mask: &Volume<T>, gt: &Volume<T>) -> Result<Vec<f64>> {
    same_shape(op, mask, gt)?;
    let w = values(mask);
    if w.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid(op, "ROI weights must be non-negative"));
    }
    // both scores are scale-invariant in the weights; dividing by the largest makes a
    // uniform mask exactly 1.0 everywhere, so it reproduces the unweighted sums bit for bit
    let top = w.iter().cloned().fold(0.0, f64::max);
    if top > 0.0 && top.is_finite() {
        return Ok(w.into_iter().map(|x| x / top).collect());
    }
    Ok(w)
}

fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// `10 log10(max^2 / MSE)`; identical volumes give `+inf`.
pub fn psnr<T: Scalar>(pred: &Volume<T>, gt: &Volume<T>, max_val: f64) -> Result<f64> {
    same_shape("psnr", pred, gt)?;
    let (p, g) = (values(pred), values(gt));
    let sse: f64 = p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(psnr_from_mse(sse / p.len() as f64, max_val))
}

pub fn w_psnr<T: Scalar>(pred: &Volume<T>, gt: &Volume<T>, roi: &Volume<T>, max_val: f64) -> Result<f64> {
    same_shape("w_psnr", pred, gt)?;
    let w = weights("w_psnr", roi, gt)?;
    let (p, g) = (values(pred), values(gt));
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::invalid("w_psnr", "ROI mask has zero total weight"));
    }
    let sse: f64 = p.iter().zip(&g).zip(&w).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
    Ok(psnr_from_mse(sse / wsum, max_val))
}

/// 7-wide box sums along one axis of a `[d, h, w]` array; that axis shrinks by 6.
fn box_axis(x: &[f64], dims: [usize; 3], axis: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - SSIM_WINDOW;
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for d in 0..out_dims[0] {
        for h in 0..out_dims[1] {
            for w in 0..out_dims[2] {
                let base = (d * dims[1] + h) * dims[2] + w;
                out.push((0..SSIM_WINDOW).map(|i| x[base + i * stride]).sum());
            }
        }
    }
    (out, out_dims)
}

fn box_sum(x: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let (a, da) = box_axis(x, dims, 2);
    let (b, db) = box_axis(&a, da, 1);
    box_axis(&b, db, 0).0
}

/// Local SSIM at every valid window position, `[D-6, H-6, W-6]`, with data range 1.
pub fn ssim_map<T: Scalar>(pred: &Volume<T>, gt: &Volume<T>) -> Result<(Vec<f64>, [usize; 3])> {
    same_shape("ssim", pred, gt)?;
    let dims = gt.dims();
    if dims.iter().any(|&n| n < SSIM_WINDOW) {
        return Err(Error::invalid("ssim", format!("every axis needs at least {SSIM_WINDOW} voxels, got {dims:?}")));
    }
    let (x, y) = (values(pred), values(gt));
    let n = (SSIM_WINDOW * SSIM_WINDOW * SSIM_WINDOW) as f64;
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(&y).map(|(&a, &b)| f(a, b)).collect() };
    let sx = box_sum(&x, dims);
    let sy = box_sum(&y, dims);
    let sxx = box_sum(&prod(&|a, _| a * a), dims);
    let syy = box_sum(&prod(&|_, b| b * b), dims);
    let sxy = box_sum(&prod(&|a, b| a * b), dims);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let map = (0..sx.len())
        .map(|i| {
            let (mx, my) = (sx[i] / n, sy[i] / n);
            let vx = sxx[i] / n - mx * mx;
            let vy = syy[i] / n - my * my;
            let cxy = sxy[i] / n - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect();
    Ok((map, dims.map(|n| n + 1 - SSIM_WINDOW)))
}

/// Mean local SSIM in percent.
pub fn ssim<T: Scalar>(pred: &Volume<T>, gt: &Volume<T>) -> Result<f64> {
    let (map, _) = ssim_map(pred, gt)?;
    Ok(100.0 * map.iter().sum::<f64>() / map.len() as f64)
}

/// SSIM map averaged with the ROI weight at each window's centre voxel, in percent.
pub fn w_ssim<T: Scalar>(pred: &Volume<T>, gt: &Volume<T>, roi: &Volume<T>) -> Result<f64> {
    let w = weights("w_ssim", roi, gt)?;
    let (map, md) = ssim_map(pred, gt)?;
    let [_, h, wd] = gt.dims();
    let r = SSIM_WINDOW / 2;
    let (mut num, mut den) = (0.0, 0.0);
    let mut i = 0;
    for d in 0..md[0] {
        for y in 0..md[1] {
            for x in 0..md[2] {
                let wt = w[((d + r) * h + y + r) * wd + x + r];
                num += wt * map[i];
                den += wt;
                i += 1;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::invalid("w_ssim", "ROI mask has zero total weight over the SSIM windows"));
    }
    Ok(100.0 * num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub case_id: String,
    pub psnr_db: f64,
    pub ssim_pct: f64,
    pub w_psnr_db: f64,
    pub w_ssim_pct: f64,
}

/// Scores one case; without an ROI the weighted columns use a uniform mask.
pub fn evaluate_case<T: Scalar>(case_id: &str, pred: &Volume<T>, gt: &Volume<T>, roi: Option<&Volume<T>>) -> Result<MetricsRow> {
    let ones;
    let roi = match roi {
        Some(r) => r,
        None => {
            ones = Volume {
                data: crate::tensor::Tensor::full(gt.data.shape().to_vec(), T::one()),
                ..gt.clone()
            };
            &ones
        }
    };
    Ok(MetricsRow {
        case_id: case_id.to_string(),
        psnr_db: psnr(pred, gt, 1.0)?,
        ssim_pct: ssim(pred, gt)?,
        w_psnr_db: w_psnr(pred, gt, roi, 1.0)?,
        w_ssim_pct: w_ssim(pred, gt, roi)?,
    })
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// Metrics CSV with header `case_id,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct`; infinite PSNR is written `inf`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("case_id,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.case_id,
            fmt_metric(r.psnr_db),
            fmt_metric(r.ssim_pct),
            fmt_metric(r.w_psnr_db),
            fmt_metric(r.w_ssim_pct)
        ));
    }
    s
}
