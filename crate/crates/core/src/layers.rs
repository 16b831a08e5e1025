//! Parameterized building blocks shared by the encoders, fusion and decoders.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{kaiming_uniform, Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(&[c_out, c_in], c_in, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros([c_out]))?) } else { None };
        Ok(Linear { weight, bias })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(b.get(self.weight), b.opt(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub padding: usize,
}

impl Conv {
    /// Same-padded `k x k` convolution.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(&[c_out, c_in, k, k], c_in * k * k, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros([c_out]))?) } else { None };
        Ok(Conv { weight, bias, padding: k / 2 })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(b.get(self.weight), b.opt(self.bias), self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(&[c_in, c_out, 2, 2], c_in, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([c_out]))?;
        Ok(ConvTranspose { weight, bias })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv_transpose2d_2x2(b.get(self.weight), Some(b.get(self.bias)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
    pub groups: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, groups: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::full([c], T::one()))?;
        let offset = store.add(format!("{name}.offset"), Tensor::zeros([c]))?;
        Ok(LayerNorm { gain, offset, groups })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm_grouped(b.get(self.gain), b.get(self.offset), self.groups)
    }
}
