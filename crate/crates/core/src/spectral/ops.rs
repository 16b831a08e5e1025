//! Differentiable spectral operations on stacked `[2, ...]` complex tensors.

use super::{fft2_planes, gather_planes, scatter_planes, trailing2, ModeMask};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn split_complex<'a, T: Scalar>(op: &'static str, t: &'a Tensor<T>) -> Result<(&'a [T], &'a [T])> {
    if t.shape().first() != Some(&2) {
        return Err(Error::shape(op, "complex axis 0", 2, t.shape().first().copied().unwrap_or(0)));
    }
    Ok(t.data().split_at(t.len() / 2))
}

fn spectrum_dims_t<T: Scalar>(op: &'static str, z: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let s = z.shape();
    if s.len() < 4 || s[0] != 2 {
        return Err(Error::invalid(op, format!("expected a [2, ..., C, M1, M2] spectrum, got {s:?}")));
    }
    let n = s.len();
    Ok((s[1..n - 3].iter().product(), s[n - 3], s[n - 2] * s[n - 1]))
}

/// Returns the product and the intermediate `t = R2 * z` needed for the backward pass.
pub(crate) fn spectral_scf_forward<T: Scalar>(z: &Tensor<T>, r1: &Tensor<T>, r2: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let op = "spectral_apply_scf";
    let (batch, cin, mm) = spectrum_dims_t(op, z)?;
    let [2, cout, r1_in] = r1.shape()[..] else {
        return Err(Error::invalid(op, format!("R1 must be [2, C_out, C_in], got {:?}", r1.shape())));
    };
    if r1_in != cin {
        return Err(Error::shape(op, "R1 input channels", cin, r1_in));
    }
    let zs = z.shape();
    let n = zs.len();
    if r2.shape() != [2, cin, zs[n - 2], zs[n - 1]] {
        return Err(Error::invalid(
            op,
            format!("R2 must be [2, {cin}, {}, {}], got {:?}", zs[n - 2], zs[n - 1], r2.shape()),
        ));
    }
    let (zr, zi) = split_complex(op, z)?;
    let (ar, ai) = split_complex(op, r1)?;
    let (br, bi) = split_complex(op, r2)?;
    let tlen = batch * cin * mm;
    let mut t = vec![T::zero(); 2 * tlen];
    for b in 0..batch {
        for c in 0..cin {
            for uv in 0..mm {
                let zi_ = (b * cin + c) * mm + uv;
                let ri = c * mm + uv;
                t[zi_] = br[ri] * zr[zi_] - bi[ri] * zi[zi_];
                t[tlen + zi_] = br[ri] * zi[zi_] + bi[ri] * zr[zi_];
            }
        }
    }
    let olen = batch * cout * mm;
    let mut out = vec![T::zero(); 2 * olen];
    {
        let (or, oi) = out.split_at_mut(olen);
        let (tr, ti) = t.split_at(tlen);
        for b in 0..batch {
            for o in 0..cout {
                let orow = (b * cout + o) * mm;
                for c in 0..cin {
                    let (wr, wi) = (ar[o * cin + c], ai[o * cin + c]);
                    let trow = (b * cin + c) * mm;
                    for uv in 0..mm {
                        or[orow + uv] += wr * tr[trow + uv] - wi * ti[trow + uv];
                        oi[orow + uv] += wr * ti[trow + uv] + wi * tr[trow + uv];
                    }
                }
            }
        }
    }
    let mut shape = zs.to_vec();
    shape[n - 3] = cout;
    Ok((Tensor::from_parts(shape, out), t))
}

pub(crate) fn spectral_full_forward<T: Scalar>(z: &Tensor<T>, r: &Tensor<T>) -> Result<Tensor<T>> {
    let op = "spectral_apply_full";
    let (batch, cin, mm) = spectrum_dims_t(op, z)?;
    let zs = z.shape();
    let n = zs.len();
    let [2, cout, r_in, rm1, rm2] = r.shape()[..] else {
        return Err(Error::invalid(op, format!("R must be [2, C_out, C_in, M1, M2], got {:?}", r.shape())));
    };
    if r_in != cin {
        return Err(Error::shape(op, "R input channels", cin, r_in));
    }
    if rm1 != zs[n - 2] {
        return Err(Error::shape(op, "modes1", zs[n - 2], rm1));
    }
    if rm2 != zs[n - 1] {
        return Err(Error::shape(op, "modes2", zs[n - 1], rm2));
    }
    let (zr, zi) = split_complex(op, z)?;
    let (wr, wi) = split_complex(op, r)?;
    let olen = batch * cout * mm;
    let mut out = vec![T::zero(); 2 * olen];
    let (or, oi) = out.split_at_mut(olen);
    for b in 0..batch {
        for o in 0..cout {
            let orow = (b * cout + o) * mm;
            for c in 0..cin {
                let zrow = (b * cin + c) * mm;
                let wrow = (o * cin + c) * mm;
                for uv in 0..mm {
                    let (a, bb) = (wr[wrow + uv], wi[wrow + uv]);
                    or[orow + uv] += a * zr[zrow + uv] - bb * zi[zrow + uv];
                    oi[orow + uv] += a * zi[zrow + uv] + bb * zr[zrow + uv];
                }
            }
        }
    }
    let mut shape = zs.to_vec();
    shape[n - 3] = cout;
    Ok(Tensor::from_parts(shape, out))
}

/// Splits `[C, H, W]` into row-major `[N, C, p, p]` patches.
pub fn to_patches_data<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (nh, nw) = (h / p, w / p);
    let mut out = Vec::with_capacity(x.len());
    for py in 0..nh {
        for px in 0..nw {
            for ch in 0..c {
                for y in 0..p {
                    let base = (ch * h + py * p + y) * w + px * p;
                    out.extend_from_slice(&x[base..base + p]);
                }
            }
        }
    }
    out
}

/// Inverse of [`to_patches_data`].
pub fn from_patches_data<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (nh, nw) = (h / p, w / p);
    let mut out = vec![T::zero(); x.len()];
    let mut src = 0;
    for py in 0..nh {
        for px in 0..nw {
            for ch in 0..c {
                for y in 0..p {
                    let base = (ch * h + py * p + y) * w + px * p;
                    out[base..base + p].copy_from_slice(&x[src..src + p]);
                    src += p;
                }
            }
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Forward DFT of the trailing two axes of a real tensor; returns `[2, ..., H, W]`.
    pub fn fft2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (h, w) = trailing2("fft2", x.shape())?;
        let planes = x.len() / (h * w);
        let mut re = x.data().to_vec();
        let mut im = vec![T::zero(); re.len()];
        fft2_planes(&mut re, &mut im, planes, h, w, false)?;
        re.extend_from_slice(&im);
        let mut shape = vec![2];
        shape.extend_from_slice(x.shape());
        let ix = self.id;
        self.tape.push("fft2", Tensor::from_parts(shape, re), &[self], move |g, sink| {
            if let Some(gx) = sink.grad_mut(ix) {
                let half = g.len() / 2;
                let mut gr = g[..half].to_vec();
                let mut gi = g[half..].to_vec();
                fft2_planes(&mut gr, &mut gi, planes, h, w, true).expect("dims validated in forward");
                for (a, &v) in gx.iter_mut().zip(&gr) {
                    *a += v;
                }
            }
        })
    }

    /// Real part of the `1 / (H * W)` scaled inverse DFT of a `[2, ..., H, W]` spectrum.
    pub fn ifft2_real(self) -> Result<Var<'t, T>> {
        let z = self.value();
        let (zr, zi) = split_complex("ifft2", &z)?;
        let (h, w) = trailing2("ifft2", z.shape())?;
        let planes = zr.len() / (h * w);
        let mut re = zr.to_vec();
        let mut im = zi.to_vec();
        fft2_planes(&mut re, &mut im, planes, h, w, true)?;
        let scale = T::one() / T::lit((h * w) as f64);
        re.iter_mut().for_each(|v| *v *= scale);
        let iz = self.id;
        self.tape.push("ifft2", Tensor::from_parts(z.shape()[1..].to_vec(), re), &[self], move |g, sink| {
            if let Some(gz) = sink.grad_mut(iz) {
                let mut gr = g.to_vec();
                let mut gi = vec![T::zero(); g.len()];
                fft2_planes(&mut gr, &mut gi, planes, h, w, false).expect("dims validated in forward");
                let half = gz.len() / 2;
                for (a, &v) in gz[..half].iter_mut().zip(&gr) {
                    *a += v * scale;
                }
                for (a, &v) in gz[half..].iter_mut().zip(&gi) {
                    *a += v * scale;
                }
            }
        })
    }

    /// Gathers the retained modes of a full `[2, ..., H, W]` spectrum.
    pub fn gather_modes(self, mask: &ModeMask) -> Result<Var<'t, T>> {
        let z = self.value();
        let (h, w) = trailing2("gather_modes", z.shape())?;
        mask.check_source("gather_modes", h, w)?;
        let planes = z.len() / (h * w);
        let (hi, wi) = (mask.height_indices.clone(), mask.width_indices.clone());
        let out = gather_planes(z.data(), planes, w, &hi, &wi);
        let mut shape = z.shape().to_vec();
        let n = shape.len();
        (shape[n - 2], shape[n - 1]) = (hi.len(), wi.len());
        let iz = self.id;
        self.tape.push("gather_modes", Tensor::from_parts(shape, out), &[self], move |g, sink| {
            if let Some(gz) = sink.grad_mut(iz) {
                let full = scatter_planes(g, planes, h, w, &hi, &wi);
                for (a, &v) in gz.iter_mut().zip(&full) {
                    *a += v;
                }
            }
        })
    }

    /// Places `[2, ..., M1, M2]` modes into a zero `[2, ..., H, W]` spectrum.
    pub fn scatter_modes(self, mask: &ModeMask) -> Result<Var<'t, T>> {
        let z = self.value();
        let (m1, m2) = trailing2("scatter_modes", z.shape())?;
        if (m1, m2) != mask.modes() {
            return Err(Error::shape("scatter_modes", "modes1", mask.modes().0, m1));
        }
        let (h, w) = mask.dims;
        let planes = z.len() / (m1 * m2);
        let (hi, wi) = (mask.height_indices.clone(), mask.width_indices.clone());
        let out = scatter_planes(z.data(), planes, h, w, &hi, &wi);
        let mut shape = z.shape().to_vec();
        let n = shape.len();
        (shape[n - 2], shape[n - 1]) = (h, w);
        let iz = self.id;
        self.tape.push("scatter_modes", Tensor::from_parts(shape, out), &[self], move |g, sink| {
            if let Some(gz) = sink.grad_mut(iz) {
                let part = gather_planes(g, planes, w, &hi, &wi);
                for (a, &v) in gz.iter_mut().zip(&part) {
                    *a += v;
                }
            }
        })
    }

    /// Factorized spectral mixing of a `[2, B..., C_in, M1, M2]` spectrum with
    /// `R1: [2, C_out, C_in]` and `R2: [2, C_in, M1, M2]`.
    pub fn spectral_scf(self, r1: Var<'t, T>, r2: Var<'t, T>) -> Result<Var<'t, T>> {
        let (z, w1, w2) = (self.value(), r1.value(), r2.value());
        let (out, t) = spectral_scf_forward(&z, &w1, &w2)?;
        let (batch, cin, mm) = spectrum_dims_t("spectral_apply_scf", &z)?;
        let cout = w1.shape()[1];
        let (iz, i1, i2) = (self.id, r1.id, r2.id);
        self.tape.push("spectral_apply_scf", out, &[self, r1, r2], move |g, sink| {
            let olen = batch * cout * mm;
            let tlen = batch * cin * mm;
            let (gr, gi) = g.split_at(olen);
            let (ar, ai) = w1.data().split_at(cout * cin);
            let (tr, ti) = t.split_at(tlen);
            if let Some(g1) = sink.grad_mut(i1) {
                let (g1r, g1i) = g1.split_at_mut(cout * cin);
                for b in 0..batch {
                    for o in 0..cout {
                        let orow = (b * cout + o) * mm;
                        for c in 0..cin {
                            let trow = (b * cin + c) * mm;
                            let (mut sr, mut si) = (T::zero(), T::zero());
                            for uv in 0..mm {
                                // conj(t) * g
                                sr += tr[trow + uv] * gr[orow + uv] + ti[trow + uv] * gi[orow + uv];
                                si += tr[trow + uv] * gi[orow + uv] - ti[trow + uv] * gr[orow + uv];
                            }
                            g1r[o * cin + c] += sr;
                            g1i[o * cin + c] += si;
                        }
                    }
                }
            }
            if !(sink.wants(iz) || sink.wants(i2)) {
                return;
            }
            // gradient at t: conj(R1)^T g
            let mut gt = vec![T::zero(); 2 * tlen];
            {
                let (gtr, gti) = gt.split_at_mut(tlen);
                for b in 0..batch {
                    for o in 0..cout {
                        let orow = (b * cout + o) * mm;
                        for c in 0..cin {
                            let (wr, wi) = (ar[o * cin + c], ai[o * cin + c]);
                            let trow = (b * cin + c) * mm;
                            for uv in 0..mm {
                                gtr[trow + uv] += wr * gr[orow + uv] + wi * gi[orow + uv];
                                gti[trow + uv] += wr * gi[orow + uv] - wi * gr[orow + uv];
                            }
                        }
                    }
                }
            }
            let (gtr, gti) = gt.split_at(tlen);
            let (br, bi) = w2.data().split_at(cin * mm);
            if let Some(g2) = sink.grad_mut(i2) {
                let (zr, zi) = z.data().split_at(tlen);
                let (g2r, g2i) = g2.split_at_mut(cin * mm);
                for b in 0..batch {
                    for c in 0..cin {
                        for uv in 0..mm {
                            let k = (b * cin + c) * mm + uv;
                            g2r[c * mm + uv] += zr[k] * gtr[k] + zi[k] * gti[k];
                            g2i[c * mm + uv] += zr[k] * gti[k] - zi[k] * gtr[k];
                        }
                    }
                }
            }
            if let Some(gz) = sink.grad_mut(iz) {
                let (gzr, gzi) = gz.split_at_mut(tlen);
                for b in 0..batch {
                    for c in 0..cin {
                        for uv in 0..mm {
                            let k = (b * cin + c) * mm + uv;
                            let ri = c * mm + uv;
                            gzr[k] += br[ri] * gtr[k] + bi[ri] * gti[k];
                            gzi[k] += br[ri] * gti[k] - bi[ri] * gtr[k];
                        }
                    }
                }
            }
        })
    }

    /// Full spectral mixing of a `[2, B..., C_in, M1, M2]` spectrum with `R: [2, C_out, C_in, M1, M2]`.
    pub fn spectral_full(self, r: Var<'t, T>) -> Result<Var<'t, T>> {
        let (z, wr) = (self.value(), r.value());
        let out = spectral_full_forward(&z, &wr)?;
        let (batch, cin, mm) = spectrum_dims_t("spectral_apply_full", &z)?;
        let cout = wr.shape()[1];
        let (iz, ir) = (self.id, r.id);
        self.tape.push("spectral_apply_full", out, &[self, r], move |g, sink| {
            let olen = batch * cout * mm;
            let zlen = batch * cin * mm;
            let wlen = cout * cin * mm;
            let (gr, gi) = g.split_at(olen);
            if let Some(gw) = sink.grad_mut(ir) {
                let (zr, zi) = z.data().split_at(zlen);
                let (gwr, gwi) = gw.split_at_mut(wlen);
                for b in 0..batch {
                    for o in 0..cout {
                        for c in 0..cin {
                            for uv in 0..mm {
                                let (zk, ok, wk) = ((b * cin + c) * mm + uv, (b * cout + o) * mm + uv, (o * cin + c) * mm + uv);
                                gwr[wk] += zr[zk] * gr[ok] + zi[zk] * gi[ok];
                                gwi[wk] += zr[zk] * gi[ok] - zi[zk] * gr[ok];
                            }
                        }
                    }
                }
            }
            if let Some(gz) = sink.grad_mut(iz) {
                let (wre, wim) = wr.data().split_at(wlen);
                let (gzr, gzi) = gz.split_at_mut(zlen);
                for b in 0..batch {
                    for o in 0..cout {
                        for c in 0..cin {
                            for uv in 0..mm {
                                let (zk, ok, wk) = ((b * cin + c) * mm + uv, (b * cout + o) * mm + uv, (o * cin + c) * mm + uv);
                                gzr[zk] += wre[wk] * gr[ok] + wim[wk] * gi[ok];
                                gzi[zk] += wre[wk] * gi[ok] - wim[wk] * gr[ok];
                            }
                        }
                    }
                }
            }
        })
    }

    /// `[C, H, W]` to row-major non-overlapping patches `[N, C, p, p]`.
    pub fn to_patches(self, patch: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = x.dims3("to_patches")?;
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::invalid("to_patches", format!("patch {patch} does not divide {h}x{w}")));
        }
        let n = (h / patch) * (w / patch);
        let out = to_patches_data(x.data(), c, h, w, patch);
        let ix = self.id;
        self.tape.push("to_patches", Tensor::from_parts(vec![n, c, patch, patch], out), &[self], move |g, sink| {
            if let Some(gx) = sink.grad_mut(ix) {
                let back = from_patches_data(g, c, h, w, patch);
                for (a, &v) in gx.iter_mut().zip(&back) {
                    *a += v;
                }
            }
        })
    }

    /// Reassembles `[N, C, p, p]` patches into `[C, H, W]` in partition order.
    pub fn from_patches(self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let [n, c, p, p2] = x.shape()[..] else {
            return Err(Error::shape("from_patches", "rank", 4, x.ndim()));
        };
        if p != p2 || p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::invalid("from_patches", format!("patch {p}x{p2} does not tile {h}x{w}")));
        }
        if n != (h / p) * (w / p) {
            return Err(Error::shape("from_patches", "patch count", (h / p) * (w / p), n));
        }
        let out = from_patches_data(x.data(), c, h, w, p);
        let ix = self.id;
        self.tape.push("from_patches", Tensor::from_parts(vec![c, h, w], out), &[self], move |g, sink| {
            if let Some(gx) = sink.grad_mut(ix) {
                let back = to_patches_data(g, c, h, w, p);
                for (a, &v) in gx.iter_mut().zip(&back) {
                    *a += v;
                }
            }
        })
    }
}
