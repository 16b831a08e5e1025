//! Iterative radix-2 complex FFT on split real/imaginary buffers.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Precomputed bit reversal and twiddles for one power-of-two length.
pub struct Radix2<T> {
    n: usize,
    bitrev: Vec<usize>,
    tw_re: Vec<T>,
    tw_im: Vec<T>,
}

impl<T: Scalar> Radix2<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::invalid("fft", format!("length {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // Twiddles are evaluated in f64 so both precisions see correctly rounded values.
        let (tw_re, tw_im) = (0..n / 2)
            .map(|k| {
                let ang = -2.0 * PI * k as f64 / n as f64;
                (T::lit(ang.cos()), T::lit(ang.sin()))
            })
            .unzip();
        Ok(Radix2 { n, bitrev, tw_re, tw_im })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized transform in place. `inverse` conjugates the twiddles and does not scale.
    pub fn process(&self, re: &mut [T], im: &mut [T], inverse: bool) {
        let n = self.n;
        debug_assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = if inverse { -T::one() } else { T::one() };
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.tw_re[k * step];
                    let wi = sign * self.tw_im[k * step];
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }
}

/// Unnormalized 2D transform of `batch` consecutive `h x w` planes, in place.
pub fn fft2_planes<T: Scalar>(re: &mut [T], im: &mut [T], batch: usize, h: usize, w: usize, inverse: bool) -> Result<()> {
    let row = Radix2::<T>::new(w)?;
    let col = Radix2::<T>::new(h)?;
    let mut cr = vec![T::zero(); h];
    let mut ci = vec![T::zero(); h];
    for b in 0..batch {
        let plane = b * h * w;
        for y in 0..h {
            let s = plane + y * w;
            row.process(&mut re[s..s + w], &mut im[s..s + w], inverse);
        }
        for x in 0..w {
            for y in 0..h {
                cr[y] = re[plane + y * w + x];
                ci[y] = im[plane + y * w + x];
            }
            col.process(&mut cr, &mut ci, inverse);
            for y in 0..h {
                re[plane + y * w + x] = cr[y];
                im[plane + y * w + x] = ci[y];
            }
        }
    }
    Ok(())
}
