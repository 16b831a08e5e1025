//! 2D Fourier transforms, mode selection and spectral channel mixing.
//!
//! Forward transforms are unnormalized; inverses scale by `1 / (H * W)` and
//! return the real part. Complex values flowing through a [`Tape`](crate::Tape)
//! are stored as one real tensor with a leading axis of extent 2 (real, imaginary).

pub mod count;
pub mod fft;
mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use count::{count_params_full, count_params_scf, saving_ratio};
pub use num_rational::Ratio;
pub use fft::{fft2_planes, Radix2};
pub use ops::{from_patches_data, to_patches_data};

/// Real and imaginary parts of (retained) Fourier coefficients, `[..., M1, M2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
    /// Spatial `(H, W)` of the map the coefficients came from.
    pub source_dims: (usize, usize),
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>, source_dims: (usize, usize)) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::invalid("spectrum", "real and imaginary parts differ in shape"));
        }
        let (m1, m2) = trailing2("spectrum", re.shape())?;
        if m1 > source_dims.0 || m2 > source_dims.1 {
            return Err(Error::invalid("spectrum", "retained modes exceed source dims"));
        }
        Ok(ComplexSpectrum { re, im, source_dims })
    }

    pub fn modes(&self) -> (usize, usize) {
        let s = self.re.shape();
        (s[s.len() - 2], s[s.len() - 1])
    }

    /// Stacked `[2, ...]` representation used on the tape.
    pub fn to_stacked(&self) -> Tensor<T> {
        let mut data = self.re.data().to_vec();
        data.extend_from_slice(self.im.data());
        let mut shape = vec![2];
        shape.extend_from_slice(self.re.shape());
        Tensor::from_parts(shape, data)
    }

    pub fn from_stacked(t: &Tensor<T>, source_dims: (usize, usize)) -> Result<Self> {
        if t.shape().first() != Some(&2) {
            return Err(Error::shape("spectrum", "complex axis 0", 2, t.shape().first().copied().unwrap_or(0)));
        }
        let half = t.len() / 2;
        let shape = t.shape()[1..].to_vec();
        Self::new(
            Tensor::from_parts(shape.clone(), t.data()[..half].to_vec()),
            Tensor::from_parts(shape, t.data()[half..].to_vec()),
            source_dims,
        )
    }
}

pub(crate) fn trailing2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] => Ok((*h, *w)),
        _ => Err(Error::shape(op, "rank", 2, shape.len())),
    }
}

/// Which end of the spectrum a [`ModeMask`] keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeVariant {
    /// Block centred on the Nyquist index: the largest signed frequencies.
    High,
    /// Smallest signed frequencies, wrapping around index 0.
    Low,
}

/// FFT row and column indices retained by a spectral layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeMask {
    pub height_indices: Vec<usize>,
    pub width_indices: Vec<usize>,
    pub variant: ModeVariant,
    pub dims: (usize, usize),
}

fn axis_indices(op: &'static str, n: usize, m: usize, variant: ModeVariant) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::invalid(op, format!("{m} modes out of range for axis of length {n}")));
    }
    match variant {
        ModeVariant::High => {
            if m >= n {
                return Err(Error::invalid(op, format!("high-frequency block of {m} needs fewer modes than {n}")));
            }
            let lo = n / 2 - m.div_ceil(2);
            Ok((lo..lo + m).collect())
        }
        ModeVariant::Low => {
            let signed = |i: usize| if i < n.div_ceil(2) { i as i64 } else { i as i64 - n as i64 };
            let mut idx: Vec<usize> = (0..n).collect();
            // |f| ascending, positive before negative on ties
            idx.sort_by_key(|&i| (signed(i).abs(), signed(i) < 0));
            let mut keep = idx[..m].to_vec();
            keep.sort_unstable();
            Ok(keep)
        }
    }
}

/// Builds the retained-mode index sets for an `h x w` spectrum.
pub fn make_mode_mask(h: usize, w: usize, m1: usize, m2: usize, variant: ModeVariant) -> Result<ModeMask> {
    Ok(ModeMask {
        height_indices: axis_indices("make_mode_mask", h, m1, variant)?,
        width_indices: axis_indices("make_mode_mask", w, m2, variant)?,
        variant,
        dims: (h, w),
    })
}

impl ModeMask {
    /// Mask keeping every coefficient.
    pub fn full(h: usize, w: usize) -> Self {
        ModeMask {
            height_indices: (0..h).collect(),
            width_indices: (0..w).collect(),
            variant: ModeVariant::Low,
            dims: (h, w),
        }
    }

    pub fn modes(&self) -> (usize, usize) {
        (self.height_indices.len(), self.width_indices.len())
    }

    fn check_source(&self, op: &'static str, h: usize, w: usize) -> Result<()> {
        if self.dims.0 != h {
            return Err(Error::shape(op, "height", self.dims.0, h));
        }
        if self.dims.1 != w {
            return Err(Error::shape(op, "width", self.dims.1, w));
        }
        Ok(())
    }
}

/// Unnormalized forward DFT of each `H x W` plane of a real `[..., H, W]` tensor.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (h, w) = trailing2("fft2", x.shape())?;
    let mut re = x.data().to_vec();
    let mut im = vec![T::zero(); re.len()];
    fft2_planes(&mut re, &mut im, x.len() / (h * w), h, w, false)?;
    ComplexSpectrum::new(
        Tensor::from_parts(x.shape().to_vec(), re),
        Tensor::from_parts(x.shape().to_vec(), im),
        (h, w),
    )
}

/// Inverse DFT scaled by `1 / (H * W)`; returns the real part.
pub fn ifft2<T: Scalar>(spectrum: &ComplexSpectrum<T>) -> Result<Tensor<T>> {
    let (h, w) = spectrum.modes();
    if (h, w) != spectrum.source_dims {
        return Err(Error::invalid(
            "ifft2",
            format!("spectrum is {h}x{w} but source dims are {:?}; scatter modes first", spectrum.source_dims),
        ));
    }
    let mut re = spectrum.re.data().to_vec();
    let mut im = spectrum.im.data().to_vec();
    let planes = re.len() / (h * w);
    fft2_planes(&mut re, &mut im, planes, h, w, true)?;
    let scale = T::one() / T::lit((h * w) as f64);
    re.iter_mut().for_each(|v| *v *= scale);
    Ok(Tensor::from_parts(spectrum.re.shape().to_vec(), re))
}

pub(crate) fn gather_planes<T: Scalar>(x: &[T], planes: usize, w: usize, hi: &[usize], wi: &[usize]) -> Vec<T> {
    let h_full = x.len() / planes / w;
    let mut out = Vec::with_capacity(planes * hi.len() * wi.len());
    for p in 0..planes {
        for &r in hi {
            let base = (p * h_full + r) * w;
            out.extend(wi.iter().map(|&c| x[base + c]));
        }
    }
    out
}

pub(crate) fn scatter_planes<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, hi: &[usize], wi: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); planes * h * w];
    let (m1, m2) = (hi.len(), wi.len());
    for p in 0..planes {
        for (a, &r) in hi.iter().enumerate() {
            for (b, &c) in wi.iter().enumerate() {
                out[(p * h + r) * w + c] = x[(p * m1 + a) * m2 + b];
            }
        }
    }
    out
}

/// Gathers the masked block of a full spectrum.
pub fn extract_modes<T: Scalar>(spectrum: &ComplexSpectrum<T>, mask: &ModeMask) -> Result<ComplexSpectrum<T>> {
    let (h, w) = spectrum.modes();
    if (h, w) != spectrum.source_dims {
        return Err(Error::invalid("extract_modes", "input spectrum is already truncated"));
    }
    mask.check_source("extract_modes", h, w)?;
    let planes = spectrum.re.len() / (h * w);
    let mut shape = spectrum.re.shape().to_vec();
    let n = shape.len();
    (shape[n - 2], shape[n - 1]) = mask.modes();
    let g = |t: &Tensor<T>| gather_planes(t.data(), planes, w, &mask.height_indices, &mask.width_indices);
    ComplexSpectrum::new(
        Tensor::from_parts(shape.clone(), g(&spectrum.re)),
        Tensor::from_parts(shape, g(&spectrum.im)),
        spectrum.source_dims,
    )
}

/// Places retained modes back into a zero full spectrum.
pub fn scatter_modes<T: Scalar>(modes: &ComplexSpectrum<T>, mask: &ModeMask) -> Result<ComplexSpectrum<T>> {
    let (m1, m2) = modes.modes();
    if (m1, m2) != mask.modes() {
        return Err(Error::shape("scatter_modes", "retained modes", mask.modes().0 * mask.modes().1, m1 * m2));
    }
    let (h, w) = mask.dims;
    if modes.source_dims != (h, w) {
        return Err(Error::invalid("scatter_modes", "mask and spectrum disagree on source dims"));
    }
    let planes = modes.re.len() / (m1 * m2);
    let mut shape = modes.re.shape().to_vec();
    let n = shape.len();
    (shape[n - 2], shape[n - 1]) = (h, w);
    let s = |t: &Tensor<T>| scatter_planes(t.data(), planes, h, w, &mask.height_indices, &mask.width_indices);
    ComplexSpectrum::new(
        Tensor::from_parts(shape.clone(), s(&modes.re)),
        Tensor::from_parts(shape, s(&modes.im)),
        (h, w),
    )
}

/// Full complex spectral weight `[C_out, C_in, M1, M2]`.
#[derive(Clone, Debug)]
pub struct SpectralWeightsFull<T> {
    pub r_re: Tensor<T>,
    pub r_im: Tensor<T>,
}

/// Factorized spectral weight: channel mixing `[C_out, C_in]` and spectral weighting `[C_in, M1, M2]`.
#[derive(Clone, Debug)]
pub struct SpectralWeightsScf<T> {
    pub r1_re: Tensor<T>,
    pub r1_im: Tensor<T>,
    pub r2_re: Tensor<T>,
    pub r2_im: Tensor<T>,
}

impl<T: Scalar> SpectralWeightsFull<T> {
    pub fn param_count(&self) -> usize {
        self.r_re.len() + self.r_im.len()
    }

    /// Stacked `[2, C_out, C_in, M1, M2]` tensor.
    pub fn stacked(&self) -> Tensor<T> {
        stack2(&self.r_re, &self.r_im)
    }
}

impl<T: Scalar> SpectralWeightsScf<T> {
    pub fn param_count(&self) -> usize {
        self.r1_re.len() + self.r1_im.len() + self.r2_re.len() + self.r2_im.len()
    }

    /// Outer product `R[o, c, u, v] = R1[o, c] * R2[c, u, v]` as a full weight.
    pub fn to_full(&self) -> Result<SpectralWeightsFull<T>> {
        let (co, ci) = self.r1_re.dims2("to_full")?;
        let (ci2, m1, m2) = self.r2_re.dims3("to_full")?;
        if ci != ci2 {
            return Err(Error::shape("to_full", "input channels", ci, ci2));
        }
        let mm = m1 * m2;
        let mut re = Vec::with_capacity(co * ci * mm);
        let mut im = Vec::with_capacity(co * ci * mm);
        for o in 0..co {
            for c in 0..ci {
                let (ar, ai) = (self.r1_re.data()[o * ci + c], self.r1_im.data()[o * ci + c]);
                for uv in 0..mm {
                    let (br, bi) = (self.r2_re.data()[c * mm + uv], self.r2_im.data()[c * mm + uv]);
                    re.push(ar * br - ai * bi);
                    im.push(ar * bi + ai * br);
                }
            }
        }
        Ok(SpectralWeightsFull {
            r_re: Tensor::from_parts(vec![co, ci, m1, m2], re),
            r_im: Tensor::from_parts(vec![co, ci, m1, m2], im),
        })
    }

    pub fn stacked_r1(&self) -> Tensor<T> {
        stack2(&self.r1_re, &self.r1_im)
    }

    pub fn stacked_r2(&self) -> Tensor<T> {
        stack2(&self.r2_re, &self.r2_im)
    }
}

fn stack2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    let mut shape = vec![2];
    shape.extend_from_slice(a.shape());
    Tensor::from_parts(shape, data)
}

/// `z_hat[o, u, v] = sum_c R[o, c, u, v] z[c, u, v]` over retained modes.
pub fn spectral_apply_full<T: Scalar>(z: &ComplexSpectrum<T>, weights: &SpectralWeightsFull<T>) -> Result<ComplexSpectrum<T>> {
    let out = ops::spectral_full_forward(&z.to_stacked(), &weights.stacked())?;
    ComplexSpectrum::from_stacked(&out, z.source_dims)
}

/// `z_hat[o, u, v] = sum_c R1[o, c] R2[c, u, v] z[c, u, v]` over retained modes.
pub fn spectral_apply_scf<T: Scalar>(z: &ComplexSpectrum<T>, weights: &SpectralWeightsScf<T>) -> Result<ComplexSpectrum<T>> {
    let (out, _) = ops::spectral_scf_forward(&z.to_stacked(), &weights.stacked_r1(), &weights.stacked_r2())?;
    ComplexSpectrum::from_stacked(&out, z.source_dims)
}
