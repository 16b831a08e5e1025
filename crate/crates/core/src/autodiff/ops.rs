//! Elementwise, reduction and layout operations.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.ndim() != b.ndim() {
        return Err(Error::shape(op, "rank", a.ndim(), b.ndim()));
    }
    for (axis, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(Error::shape(op, format!("axis {axis}"), x, y));
        }
    }
    Ok(())
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("add", &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let (ia, ib) = (self.id, other.id);
        self.tape.push("add", out, &[self, other], move |g, sink| {
            sink.add(ia, g);
            sink.add(ib, g);
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("sub", &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let (ia, ib) = (self.id, other.id);
        self.tape.push("sub", out, &[self, other], move |g, sink| {
            sink.add(ia, g);
            if let Some(acc) = sink.grad_mut(ib) {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a -= v;
                }
            }
        })
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("mul", &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let (ia, ib) = (self.id, other.id);
        self.tape.push("mul", out, &[self, other], move |g, sink| {
            if let Some(acc) = sink.grad_mut(ia) {
                for ((d, &v), &y) in acc.iter_mut().zip(g).zip(b.data()) {
                    *d += v * y;
                }
            }
            if let Some(acc) = sink.grad_mut(ib) {
                for ((d, &v), &x) in acc.iter_mut().zip(g).zip(a.data()) {
                    *d += v * x;
                }
            }
        })
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| v * c);
        let ia = self.id;
        self.tape.push("scale", out, &[self], move |g, sink| {
            if let Some(acc) = sink.grad_mut(ia) {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v * c;
                }
            }
        })
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = x.map(|v| v.max(T::zero()));
        let ia = self.id;
        self.tape.push("relu", out, &[self], move |g, sink| {
            if let Some(acc) = sink.grad_mut(ia) {
                for ((a, &v), &xv) in acc.iter_mut().zip(g).zip(x.data()) {
                    if xv > T::zero() {
                        *a += v;
                    }
                }
            }
        })
    }

    pub fn gelu(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = x.map(gelu_scalar);
        let ia = self.id;
        self.tape.push("gelu", out, &[self], move |g, sink| {
            if let Some(acc) = sink.grad_mut(ia) {
                for ((a, &v), &xv) in acc.iter_mut().zip(g).zip(x.data()) {
                    *a += v * gelu_grad(xv);
                }
            }
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let out = Tensor::scalar(self.value().sum());
        let ia = self.id;
        self.tape.push("sum", out, &[self], move |g, sink| {
            let g0 = g[0];
            if let Some(acc) = sink.grad_mut(ia) {
                acc.iter_mut().for_each(|a| *a += g0);
            }
        })
    }

    /// Sum of `self * weights`, a fixed random projection used by gradient tests.
    pub fn dot_const(self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.len() != weights.len() {
            return Err(Error::shape("dot_const", "element count", x.len(), weights.len()));
        }
        let s = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let w = weights.clone();
        let ia = self.id;
        self.tape.push("dot_const", Tensor::scalar(s), &[self], move |g, sink| {
            let g0 = g[0];
            if let Some(acc) = sink.grad_mut(ia) {
                for (a, &wv) in acc.iter_mut().zip(w.data()) {
                    *a += g0 * wv;
                }
            }
        })
    }

    /// Mean squared error against a constant target, shape `[1]`.
    pub fn mse_loss(self, target: &Tensor<T>) -> Result<Var<'t, T>> {
        let pred = self.value();
        if pred.len() != target.len() {
            return Err(Error::shape("mse_loss", "length", pred.len(), target.len()));
        }
        if pred.is_empty() {
            return Err(Error::invalid("mse_loss", "empty input"));
        }
        let n = T::lit(pred.len() as f64);
        let diff: Vec<T> = pred.data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
        let ia = self.id;
        self.tape.push("mse_loss", Tensor::scalar(loss), &[self], move |g, sink| {
            let c = g[0] * T::lit(2.0) / n;
            if let Some(acc) = sink.grad_mut(ia) {
                for (a, &d) in acc.iter_mut().zip(&diff) {
                    *a += c * d;
                }
            }
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != x.len() {
            return Err(Error::shape("reshape", "element count", x.len(), n));
        }
        let out = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        let ia = self.id;
        self.tape.push("reshape", out, &[self], move |g, sink| sink.add(ia, g))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = x.dims2("transpose")?;
        let out = Tensor::from_parts(vec![c, r], transpose_data(x.data(), r, c));
        let ia = self.id;
        self.tape.push("transpose", out, &[self], move |g, sink| {
            if let Some(acc) = sink.grad_mut(ia) {
                for j in 0..c {
                    for i in 0..r {
                        acc[i * c + j] += g[j * r + i];
                    }
                }
            }
        })
    }

    /// `[C, H, W]` feature map to `[H*W, C]` tokens.
    pub fn to_tokens(self) -> Result<Var<'t, T>> {
        let (c, h, w) = self.value().dims3("to_tokens")?;
        self.reshape(&[c, h * w])?.transpose()
    }

    /// `[H*W, C]` tokens back to a `[C, H, W]` map.
    pub fn from_tokens(self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let (n, c) = self.value().dims2("from_tokens")?;
        if n != h * w {
            return Err(Error::shape("from_tokens", "token count", h * w, n));
        }
        self.transpose()?.reshape(&[c, h, w])
    }

    /// Concatenation along the leading axis.
    pub fn concat(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let tail = values[0].shape()[1..].to_vec();
        let mut lead = 0;
        for v in &values {
            if v.ndim() != tail.len() + 1 {
                return Err(Error::shape("concat", "rank", tail.len() + 1, v.ndim()));
            }
            for (axis, (&a, &b)) in tail.iter().zip(&v.shape()[1..]).enumerate() {
                if a != b {
                    return Err(Error::shape("concat", format!("axis {}", axis + 1), a, b));
                }
            }
            lead += v.shape()[0];
        }
        let mut data = Vec::with_capacity(values.iter().map(|v| v.len()).sum());
        for v in &values {
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let spans: Vec<(usize, usize)> = {
            let mut off = 0;
            values
                .iter()
                .map(|v| {
                    let s = (off, v.len());
                    off += v.len();
                    s
                })
                .collect()
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        first.tape.push("concat", Tensor::from_parts(shape, data), parts, move |g, sink| {
            for (&id, &(off, len)) in ids.iter().zip(&spans) {
                sink.add(id, &g[off..off + len]);
            }
        })
    }

    /// Stacks equally shaped inputs along a new leading axis.
    pub fn stack(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("stack", "no inputs"))?;
        let mut reshaped = Vec::with_capacity(parts.len());
        let shape0 = first.shape();
        for p in parts {
            let s = p.shape();
            if s != shape0 {
                let axis = s.iter().zip(&shape0).position(|(a, b)| a != b).unwrap_or(0);
                return Err(Error::shape(
                    "stack",
                    format!("axis {axis}"),
                    shape0.get(axis).copied().unwrap_or(0),
                    s.get(axis).copied().unwrap_or(0),
                ));
            }
            let mut ns = vec![1];
            ns.extend_from_slice(&s);
            reshaped.push(p.reshape(&ns)?);
        }
        Var::concat(&reshaped)
    }

    /// Slice `index` of the leading axis, dropping that axis.
    pub fn select(self, index: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let lead = *x.shape().first().ok_or_else(|| Error::invalid("select", "scalar input"))?;
        if index >= lead {
            return Err(Error::invalid("select", format!("index {index} out of range for axis 0 of extent {lead}")));
        }
        let inner = x.len() / lead;
        let off = index * inner;
        let out = Tensor::from_parts(x.shape()[1..].to_vec(), x.data()[off..off + inner].to_vec());
        let ia = self.id;
        self.tape.push("select", out, &[self], move |g, sink| {
            if let Some(acc) = sink.grad_mut(ia) {
                for (a, &v) in acc[off..off + inner].iter_mut().zip(g) {
                    *a += v;
                }
            }
        })
    }

    /// Elementwise maximum over equally shaped inputs. Ties route the gradient to the first input.
    pub fn max_of(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("max_of", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for v in &values[1..] {
            check_same_shape("max_of", &values[0], v)?;
        }
        let n = values[0].len();
        let mut out = values[0].data().to_vec();
        let mut arg = vec![0u32; n];
        for (k, v) in values.iter().enumerate().skip(1) {
            for ((o, a), &x) in out.iter_mut().zip(arg.iter_mut()).zip(v.data()) {
                if x > *o {
                    *o = x;
                    *a = k as u32;
                }
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = Tensor::from_parts(values[0].shape().to_vec(), out);
        first.tape.push("max_of", out, parts, move |g, sink| {
            for (k, &id) in ids.iter().enumerate() {
                if let Some(acc) = sink.grad_mut(id) {
                    for ((a, &gv), &am) in acc.iter_mut().zip(g).zip(&arg) {
                        if am as usize == k {
                            *a += gv;
                        }
                    }
                }
            }
        })
    }

    /// Elementwise mean over equally shaped inputs.
    pub fn mean_of(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("mean_of", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for v in &values[1..] {
            check_same_shape("mean_of", &values[0], v)?;
        }
        let inv = T::one() / T::lit(parts.len() as f64);
        // summing in sorted order makes the result independent of input order
        let mut scratch = Vec::with_capacity(values.len());
        let out: Vec<T> = (0..values[0].len())
            .map(|i| {
                scratch.clear();
                scratch.extend(values.iter().map(|v| v.data()[i]));
                scratch.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
                scratch.iter().fold(T::zero(), |acc, &x| acc + x) * inv
            })
            .collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = Tensor::from_parts(values[0].shape().to_vec(), out);
        first.tape.push("mean_of", out, parts, move |g, sink| {
            for &id in &ids {
                if let Some(acc) = sink.grad_mut(id) {
                    for (a, &gv) in acc.iter_mut().zip(g) {
                        *a += gv * inv;
                    }
                }
            }
        })
    }
}

pub(crate) fn transpose_data<T: Copy>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(x[i * c + j]);
        }
    }
    out
}
