//! Fused multi-head attention kernels over token matrices `[n, C]`.
//!
//! Heads split the channel axis into `heads` contiguous slices of width `C / heads`.

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn head_width(op: &'static str, c: usize, heads: usize) -> Result<usize> {
    if heads == 0 || c % heads != 0 {
        return Err(Error::invalid(op, format!("{heads} heads do not divide {c} channels")));
    }
    Ok(c / heads)
}

/// Columns `[h*d, (h+1)*d)` of a `[n, c]` matrix, transposed to `[d, n]`.
fn head_cols_t<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * n];
    for t in 0..n {
        for a in 0..d {
            out[a * n + t] = x[t * c + h * d + a];
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Softmax-free attention `Q (K^T V) / n` per head, with `self` as the queries.
    pub fn galerkin_attention_core(self, k: Var<'t, T>, v: Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let (n, c) = qv.dims2("galerkin_attention")?;
        for (name, t) in [("keys", &kv), ("values", &vv)] {
            let (n2, c2) = t.dims2("galerkin_attention")?;
            if n2 != n {
                return Err(Error::shape("galerkin_attention", format!("{name} token axis"), n, n2));
            }
            if c2 != c {
                return Err(Error::shape("galerkin_attention", format!("{name} channel axis"), c, c2));
            }
        }
        let d = head_width("galerkin_attention", c, heads)?;
        let inv_n = T::one() / T::lit(n as f64);
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        // a[h][a][b] = sum_t K[t, h*d+a] V[t, h*d+b] / n
        let mut amat = vec![T::zero(); heads * d * d];
        for t in 0..n {
            for h in 0..heads {
                for a in 0..d {
                    let kv_ = kd[t * c + h * d + a];
                    let row = &mut amat[(h * d + a) * d..(h * d + a + 1) * d];
                    for (b, r) in row.iter_mut().enumerate() {
                        *r += kv_ * vd[t * c + h * d + b];
                    }
                }
            }
        }
        amat.iter_mut().for_each(|x| *x *= inv_n);
        let mut out = vec![T::zero(); n * c];
        for t in 0..n {
            for h in 0..heads {
                for a in 0..d {
                    let qa = qd[t * c + h * d + a];
                    let row = &amat[(h * d + a) * d..(h * d + a + 1) * d];
                    for (b, &r) in row.iter().enumerate() {
                        out[t * c + h * d + b] += qa * r;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c], out);
        let (iq, ik, iv) = (self.id, k.id, v.id);
        self.tape.push("galerkin_attention", out, &[self, k, v], move |g, sink| {
            let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
            if let Some(gq) = sink.grad_mut(iq) {
                for t in 0..n {
                    for h in 0..heads {
                        for a in 0..d {
                            let row = &amat[(h * d + a) * d..(h * d + a + 1) * d];
                            let mut acc = T::zero();
                            for (b, &r) in row.iter().enumerate() {
                                acc += g[t * c + h * d + b] * r;
                            }
                            gq[t * c + h * d + a] += acc;
                        }
                    }
                }
            }
            if !(sink.wants(ik) || sink.wants(iv)) {
                return;
            }
            // dA[h][a][b] = sum_t Q[t, h*d+a] dO[t, h*d+b], pre-scaled by 1/n
            let mut da = vec![T::zero(); heads * d * d];
            for t in 0..n {
                for h in 0..heads {
                    for a in 0..d {
                        let qa = qd[t * c + h * d + a] * inv_n;
                        let row = &mut da[(h * d + a) * d..(h * d + a + 1) * d];
                        for (b, r) in row.iter_mut().enumerate() {
                            *r += qa * g[t * c + h * d + b];
                        }
                    }
                }
            }
            if let Some(gk) = sink.grad_mut(ik) {
                for t in 0..n {
                    for h in 0..heads {
                        for a in 0..d {
                            let row = &da[(h * d + a) * d..(h * d + a + 1) * d];
                            let mut acc = T::zero();
                            for (b, &r) in row.iter().enumerate() {
                                acc += vd[t * c + h * d + b] * r;
                            }
                            gk[t * c + h * d + a] += acc;
                        }
                    }
                }
            }
            if let Some(gv) = sink.grad_mut(iv) {
                for t in 0..n {
                    for h in 0..heads {
                        for a in 0..d {
                            let ka = kd[t * c + h * d + a];
                            let row = &da[(h * d + a) * d..(h * d + a + 1) * d];
                            for (b, &r) in row.iter().enumerate() {
                                gv[t * c + h * d + b] += ka * r;
                            }
                        }
                    }
                }
            }
        })
    }

    /// Scaled dot-product attention `softmax(Q K^T / sqrt(d)) V` per head, with `self` as the queries.
    ///
    /// Queries are `[n, C]`; keys and values are `[m, C]`. Attention weights are
    /// recomputed in the backward pass instead of being stored.
    pub fn softmax_attention_core(self, k: Var<'t, T>, v: Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let (n, c) = qv.dims2("softmax_attention")?;
        let (m, ck) = kv.dims2("softmax_attention")?;
        let (mv, cv) = vv.dims2("softmax_attention")?;
        if ck != c {
            return Err(Error::shape("softmax_attention", "keys channel axis", c, ck));
        }
        if cv != c {
            return Err(Error::shape("softmax_attention", "values channel axis", c, cv));
        }
        if mv != m {
            return Err(Error::shape("softmax_attention", "values token axis", m, mv));
        }
        let d = head_width("softmax_attention", c, heads)?;
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut out = vec![T::zero(); n * c];
        let mut lse = vec![T::zero(); heads * n];
        let mut s = vec![T::zero(); m];
        for h in 0..heads {
            let kt = head_cols_t(kv.data(), m, c, h, d);
            let vt = head_cols_t(vv.data(), m, c, h, d);
            for i in 0..n {
                s.iter_mut().for_each(|x| *x = T::zero());
                for a in 0..d {
                    let qa = qv.data()[i * c + h * d + a] * scale;
                    for (sj, &kj) in s.iter_mut().zip(&kt[a * m..(a + 1) * m]) {
                        *sj += qa * kj;
                    }
                }
                let mx = s.iter().copied().fold(T::neg_infinity(), T::max);
                let mut l = T::zero();
                for sj in s.iter_mut() {
                    *sj = (*sj - mx).exp();
                    l += *sj;
                }
                let inv_l = T::one() / l;
                for a in 0..d {
                    let mut acc = T::zero();
                    for (&p, &vj) in s.iter().zip(&vt[a * m..(a + 1) * m]) {
                        acc += p * vj;
                    }
                    out[i * c + h * d + a] = acc * inv_l;
                }
                lse[h * n + i] = mx + l.ln();
            }
        }
        let out = Tensor::from_parts(vec![n, c], out);
        let outv = out.clone();
        let (iq, ik, iv) = (self.id, k.id, v.id);
        self.tape.push("softmax_attention", out, &[self, k, v], move |g, sink| {
            let mut gq = sink.take(iq);
            let mut gk = sink.take(ik);
            let mut gv = sink.take(iv);
            let mut p = vec![T::zero(); m];
            let mut ds = vec![T::zero(); m];
            for h in 0..heads {
                let kt = head_cols_t(kv.data(), m, c, h, d);
                let vt = head_cols_t(vv.data(), m, c, h, d);
                let mut gkt = vec![T::zero(); d * m];
                let mut gvt = vec![T::zero(); d * m];
                for i in 0..n {
                    let go = &g[i * c + h * d..i * c + (h + 1) * d];
                    let o = &outv.data()[i * c + h * d..i * c + (h + 1) * d];
                    let dsum: T = go.iter().zip(o).map(|(&a, &b)| a * b).sum();
                    p.iter_mut().for_each(|x| *x = T::zero());
                    for a in 0..d {
                        let qa = qv.data()[i * c + h * d + a] * scale;
                        for (pj, &kj) in p.iter_mut().zip(&kt[a * m..(a + 1) * m]) {
                            *pj += qa * kj;
                        }
                    }
                    let l = lse[h * n + i];
                    p.iter_mut().for_each(|x| *x = (*x - l).exp());
                    // ds = p * (dO . v_j - D)
                    ds.iter_mut().for_each(|x| *x = T::zero());
                    for a in 0..d {
                        let ga = go[a];
                        for (dj, &vj) in ds.iter_mut().zip(&vt[a * m..(a + 1) * m]) {
                            *dj += ga * vj;
                        }
                    }
                    for (dj, &pj) in ds.iter_mut().zip(&p) {
                        *dj = pj * (*dj - dsum);
                    }
                    if let Some(gq) = gq.as_mut() {
                        for a in 0..d {
                            let mut acc = T::zero();
                            for (&dj, &kj) in ds.iter().zip(&kt[a * m..(a + 1) * m]) {
                                acc += dj * kj;
                            }
                            gq[i * c + h * d + a] += acc * scale;
                        }
                    }
                    if gk.is_some() {
                        for a in 0..d {
                            let qa = qv.data()[i * c + h * d + a] * scale;
                            for (gj, &dj) in gkt[a * m..(a + 1) * m].iter_mut().zip(&ds) {
                                *gj += qa * dj;
                            }
                        }
                    }
                    if gv.is_some() {
                        for a in 0..d {
                            let ga = go[a];
                            for (gj, &pj) in gvt[a * m..(a + 1) * m].iter_mut().zip(&p) {
                                *gj += ga * pj;
                            }
                        }
                    }
                }
                if let Some(gk) = gk.as_mut() {
                    for j in 0..m {
                        for a in 0..d {
                            gk[j * c + h * d + a] += gkt[a * m + j];
                        }
                    }
                }
                if let Some(gv) = gv.as_mut() {
                    for j in 0..m {
                        for a in 0..d {
                            gv[j * c + h * d + a] += gvt[a * m + j];
                        }
                    }
                }
            }
            for (id, gbuf) in [(iq, gq), (ik, gk), (iv, gv)] {
                if let Some(gbuf) = gbuf {
                    sink.restore(id, gbuf);
                }
            }
        })
    }
}
