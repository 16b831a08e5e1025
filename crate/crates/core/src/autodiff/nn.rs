//! Convolution, pooling, dense and normalization layers.

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance floor added inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

/// Geometry of one stride-1 convolution.
#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    /// Output-column range `[lo, hi)` whose input column `ox + kx - pad` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }

    #[inline]
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }
}

fn conv2d_forward<T: Scalar>(d: &ConvDims, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ohw, hw, kk) = (d.oh * d.ow, d.h * d.w, d.k * d.k);
    let mut out = vec![T::zero(); d.cout * ohw];
    for co in 0..d.cout {
        let o = &mut out[co * ohw..(co + 1) * ohw];
        if let Some(b) = bias {
            o.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..d.cin {
            let xin = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let wv = wt[(co * d.cin + ci) * kk + ky * d.k + kx];
                    let (lo, hi) = d.col_range(kx);
                    if hi == lo {
                        continue;
                    }
                    for oy in 0..d.oh {
                        let Some(iy) = d.input_row(oy, ky) else { continue };
                        let ix0 = lo + kx - d.pad;
                        axpy(
                            &mut o[oy * d.ow + lo..oy * d.ow + hi],
                            wv,
                            &xin[iy * d.w + ix0..iy * d.w + ix0 + (hi - lo)],
                        );
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward<T: Scalar>(
    d: &ConvDims,
    x: &[T],
    wt: &[T],
    g: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let (ohw, hw, kk) = (d.oh * d.ow, d.h * d.w, d.k * d.k);
    for co in 0..d.cout {
        let go = &g[co * ohw..(co + 1) * ohw];
        for ci in 0..d.cin {
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let widx = (co * d.cin + ci) * kk + ky * d.k + kx;
                    let (lo, hi) = d.col_range(kx);
                    if hi == lo {
                        continue;
                    }
                    let ix0 = lo + kx - d.pad;
                    let mut acc = T::zero();
                    for oy in 0..d.oh {
                        let Some(iy) = d.input_row(oy, ky) else { continue };
                        let grow = &go[oy * d.ow + lo..oy * d.ow + hi];
                        let xoff = ci * hw + iy * d.w + ix0;
                        if let Some(gx) = gx.as_deref_mut() {
                            axpy(&mut gx[xoff..xoff + (hi - lo)], wt[widx], grow);
                        }
                        if gw.is_some() {
                            acc += dot(grow, &x[xoff..xoff + (hi - lo)]);
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Stride-1 2D cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`, zero padded.
    pub fn conv2d(self, kernel: Var<'t, T>, bias: Option<Var<'t, T>>, padding: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let wt = kernel.value();
        let (cin, h, w) = x.dims3("conv2d")?;
        let [cout, kcin, k, k2] = wt.shape()[..] else {
            return Err(Error::shape("conv2d", "kernel rank", 4, wt.ndim()));
        };
        if kcin != cin {
            return Err(Error::shape("conv2d", "input channels (axis 0)", kcin, cin));
        }
        if k != k2 {
            return Err(Error::shape("conv2d", "kernel width (axis 3)", k, k2));
        }
        if k % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel size {k} must be odd")));
        }
        if h + 2 * padding < k {
            return Err(Error::shape("conv2d", "height (axis 1)", k, h + 2 * padding));
        }
        if w + 2 * padding < k {
            return Err(Error::shape("conv2d", "width (axis 2)", k, w + 2 * padding));
        }
        let bval = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.len() != cout {
                    return Err(Error::shape("conv2d", "bias length", cout, bv.len()));
                }
                Some(bv)
            }
            None => None,
        };
        let d = ConvDims {
            cin,
            cout,
            h,
            w,
            k,
            pad: padding,
            oh: h + 2 * padding - k + 1,
            ow: w + 2 * padding - k + 1,
        };
        let out = conv2d_forward(&d, x.data(), wt.data(), bval.as_deref().map(|b| b.data()));
        let out = Tensor::from_parts(vec![cout, d.oh, d.ow], out);
        let (ix, iw, ib) = (self.id, kernel.id, bias.map(|b| b.id));
        let mut inputs = vec![self, kernel];
        inputs.extend(bias);
        self.tape.push("conv2d", out, &inputs, move |g, sink| {
            let mut gw = sink.take(iw);
            conv2d_backward(&d, x.data(), wt.data(), g, sink.grad_mut(ix), gw.as_deref_mut());
            if let Some(gw) = gw {
                sink.restore(iw, gw);
            }
            if let Some(ib) = ib {
                if let Some(gb) = sink.grad_mut(ib) {
                    let ohw = d.oh * d.ow;
                    for (co, gbv) in gb.iter_mut().enumerate() {
                        *gbv += g[co * ohw..(co + 1) * ohw].iter().copied().sum::<T>();
                    }
                }
            }
        })
    }

    /// Stride-2 transposed convolution with a `[C_in, C_out, 2, 2]` kernel; doubles both spatial axes.
    pub fn conv_transpose2d_2x2(self, kernel: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let wt = kernel.value();
        let (cin, h, w) = x.dims3("conv_transpose2d_2x2")?;
        let [kcin, cout, kh, kw] = wt.shape()[..] else {
            return Err(Error::shape("conv_transpose2d_2x2", "kernel rank", 4, wt.ndim()));
        };
        if kcin != cin {
            return Err(Error::shape("conv_transpose2d_2x2", "input channels (axis 0)", kcin, cin));
        }
        if kh != 2 || kw != 2 {
            return Err(Error::shape("conv_transpose2d_2x2", "kernel extent (axes 2, 3)", 2, kh.max(kw)));
        }
        let bval = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.len() != cout {
                    return Err(Error::shape("conv_transpose2d_2x2", "bias length", cout, bv.len()));
                }
                Some(bv)
            }
            None => None,
        };
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); cout * oh * ow];
        if let Some(b) = &bval {
            for co in 0..cout {
                out[co * oh * ow..(co + 1) * oh * ow].iter_mut().for_each(|v| *v = b[co]);
            }
        }
        let xd = x.data();
        let wd = wt.data();
        for ci in 0..cin {
            for co in 0..cout {
                let wb = (ci * cout + co) * 4;
                for y in 0..h {
                    for xx in 0..w {
                        let v = xd[(ci * h + y) * w + xx];
                        let base = co * oh * ow + 2 * y * ow + 2 * xx;
                        out[base] += v * wd[wb];
                        out[base + 1] += v * wd[wb + 1];
                        out[base + ow] += v * wd[wb + 2];
                        out[base + ow + 1] += v * wd[wb + 3];
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![cout, oh, ow], out);
        let (ix, iw, ib) = (self.id, kernel.id, bias.map(|b| b.id));
        let mut inputs = vec![self, kernel];
        inputs.extend(bias);
        self.tape.push("conv_transpose2d_2x2", out, &inputs, move |g, sink| {
            let xd = x.data();
            let wd = wt.data();
            if let Some(gx) = sink.grad_mut(ix) {
                for ci in 0..cin {
                    for co in 0..cout {
                        let wb = (ci * cout + co) * 4;
                        for y in 0..h {
                            for xx in 0..w {
                                let base = co * oh * ow + 2 * y * ow + 2 * xx;
                                gx[(ci * h + y) * w + xx] += g[base] * wd[wb]
                                    + g[base + 1] * wd[wb + 1]
                                    + g[base + ow] * wd[wb + 2]
                                    + g[base + ow + 1] * wd[wb + 3];
                            }
                        }
                    }
                }
            }
            if let Some(gw) = sink.grad_mut(iw) {
                for ci in 0..cin {
                    for co in 0..cout {
                        let wb = (ci * cout + co) * 4;
                        let mut acc = [T::zero(); 4];
                        for y in 0..h {
                            for xx in 0..w {
                                let v = xd[(ci * h + y) * w + xx];
                                let base = co * oh * ow + 2 * y * ow + 2 * xx;
                                acc[0] += v * g[base];
                                acc[1] += v * g[base + 1];
                                acc[2] += v * g[base + ow];
                                acc[3] += v * g[base + ow + 1];
                            }
                        }
                        for (q, a) in acc.iter().enumerate() {
                            gw[wb + q] += *a;
                        }
                    }
                }
            }
            if let Some(ib) = ib {
                if let Some(gb) = sink.grad_mut(ib) {
                    for (co, gbv) in gb.iter_mut().enumerate() {
                        *gbv += g[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum::<T>();
                    }
                }
            }
        })
    }

    /// 2x2 max pooling with stride 2. Ties go to the first window element in row-major order.
    pub fn maxpool_2x2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = x.dims3("maxpool_2x2")?;
        if h % 2 != 0 {
            return Err(Error::invalid("maxpool_2x2", format!("height {h} (axis 1) is odd")));
        }
        if w % 2 != 0 {
            return Err(Error::invalid("maxpool_2x2", format!("width {w} (axis 2) is odd")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut arg = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = (ch * h + 2 * y) * w + 2 * xx;
                    let cand = [base, base + 1, base + w, base + w + 1];
                    let mut best = cand[0];
                    for &i in &cand[1..] {
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        let out = Tensor::from_parts(vec![c, oh, ow], out);
        let ix = self.id;
        self.tape.push("maxpool_2x2", out, &[self], move |g, sink| {
            if let Some(gx) = sink.grad_mut(ix) {
                for (&a, &gv) in arg.iter().zip(g) {
                    gx[a] += gv;
                }
            }
        })
    }

    /// 2x2 average pooling with stride 2.
    pub fn avgpool_2x2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = x.dims3("avgpool_2x2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("avgpool_2x2", format!("spatial dims {h}x{w} must be even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = (ch * h + 2 * y) * w + 2 * xx;
                    out.push((xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]) * quarter);
                }
            }
        }
        let out = Tensor::from_parts(vec![c, oh, ow], out);
        let ix = self.id;
        self.tape.push("avgpool_2x2", out, &[self], move |g, sink| {
            if let Some(gx) = sink.grad_mut(ix) {
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let gv = g[(ch * oh + y) * ow + xx] * quarter;
                            let base = (ch * h + 2 * y) * w + 2 * xx;
                            gx[base] += gv;
                            gx[base + 1] += gv;
                            gx[base + w] += gv;
                            gx[base + w + 1] += gv;
                        }
                    }
                }
            }
        })
    }

    /// Affine map over the trailing axis: `[..., C_in] -> [..., C_out]` with weight `[C_out, C_in]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let wt = weight.value();
        let (cout, cin) = wt.dims2("linear")?;
        let xin = *x.shape().last().ok_or_else(|| Error::invalid("linear", "scalar input"))?;
        if xin != cin {
            return Err(Error::shape("linear", "trailing axis", cin, xin));
        }
        let bval = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.len() != cout {
                    return Err(Error::shape("linear", "bias length", cout, bv.len()));
                }
                Some(bv)
            }
            None => None,
        };
        let rows = x.len() / cin;
        let (xd, wd) = (x.data(), wt.data());
        let mut out = Vec::with_capacity(rows * cout);
        for r in 0..rows {
            let xr = &xd[r * cin..(r + 1) * cin];
            for o in 0..cout {
                let mut v = dot(xr, &wd[o * cin..(o + 1) * cin]);
                if let Some(b) = &bval {
                    v += b.data()[o];
                }
                out.push(v);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let out = Tensor::from_parts(shape, out);
        let (ix, iw, ib) = (self.id, weight.id, bias.map(|b| b.id));
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape.push("linear", out, &inputs, move |g, sink| {
            let (xd, wd) = (x.data(), wt.data());
            if let Some(gx) = sink.grad_mut(ix) {
                for r in 0..rows {
                    let gxr = &mut gx[r * cin..(r + 1) * cin];
                    for o in 0..cout {
                        axpy(gxr, g[r * cout + o], &wd[o * cin..(o + 1) * cin]);
                    }
                }
            }
            if let Some(gw) = sink.grad_mut(iw) {
                for r in 0..rows {
                    let xr = &xd[r * cin..(r + 1) * cin];
                    for o in 0..cout {
                        axpy(&mut gw[o * cin..(o + 1) * cin], g[r * cout + o], xr);
                    }
                }
            }
            if let Some(ib) = ib {
                if let Some(gb) = sink.grad_mut(ib) {
                    for r in 0..rows {
                        for o in 0..cout {
                            gb[o] += g[r * cout + o];
                        }
                    }
                }
            }
        })
    }

    /// Layer normalization over the trailing axis followed by a per-channel affine map.
    pub fn layer_norm(self, gain: Var<'t, T>, offset: Var<'t, T>) -> Result<Var<'t, T>> {
        self.layer_norm_grouped(gain, offset, 1)
    }

    /// Layer normalization applied independently to `groups` equal slices of the trailing axis.
    pub fn layer_norm_grouped(self, gain: Var<'t, T>, offset: Var<'t, T>, groups: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let c = *x.shape().last().ok_or_else(|| Error::invalid("layer_norm", "scalar input"))?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::invalid("layer_norm", format!("{groups} groups do not divide {c} channels")));
        }
        let (gv, ov) = (gain.value(), offset.value());
        if gv.len() != c {
            return Err(Error::shape("layer_norm", "gain length", c, gv.len()));
        }
        if ov.len() != c {
            return Err(Error::shape("layer_norm", "offset length", c, ov.len()));
        }
        let d = c / groups;
        let segs = x.len() / d;
        let inv_d = T::one() / T::lit(d as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(segs);
        for s in x.data().chunks_exact(d) {
            let mean = s.iter().copied().sum::<T>() * inv_d;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(s.iter().map(|&v| (v - mean) * is));
        }
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gv.data()[i % c] + ov.data()[i % c])
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        let (ix, ig, io) = (self.id, gain.id, offset.id);
        self.tape.push("layer_norm", out, &[self, gain, offset], move |g, sink| {
            if let Some(gg) = sink.grad_mut(ig) {
                for (i, (&gvv, &h)) in g.iter().zip(&xhat).enumerate() {
                    gg[i % c] += gvv * h;
                }
            }
            if let Some(go) = sink.grad_mut(io) {
                for (i, &gvv) in g.iter().enumerate() {
                    go[i % c] += gvv;
                }
            }
            if let Some(gx) = sink.grad_mut(ix) {
                let gain = gv.data();
                let mut dh = vec![T::zero(); d];
                for (s, &is) in inv_std.iter().enumerate() {
                    let off = s * d;
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let v = g[off + j] * gain[(off + j) % c];
                        dh[j] = v;
                        m1 += v;
                        m2 += v * xhat[off + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for j in 0..d {
                        gx[off + j] += is * (dh[j] - m1 - xhat[off + j] * m2);
                    }
                }
            }
        })
    }
}
