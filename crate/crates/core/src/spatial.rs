//! UNet-style spatial encoder and feature decoder.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{Conv, ConvTranspose};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
struct DoubleConv {
    a: Conv,
    b: Conv,
}

impl DoubleConv {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        Ok(DoubleConv {
            a: Conv::new(store, &format!("{name}.conv1"), c_in, c_out, 3, true, rng)?,
            b: Conv::new(store, &format!("{name}.conv2"), c_out, c_out, 3, true, rng)?,
        })
    }

    fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.b.forward(b, self.a.forward(b, x)?.relu()?)?.relu()
    }
}

/// Per level: two same-padded 3x3 conv + ReLU, emit, then 2x2 max pooling.
#[derive(Clone, Debug)]
pub struct SpatialEncoder {
    levels: Vec<DoubleConv>,
}

impl SpatialEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c_in: usize, channels: &[usize], rng: &mut R) -> Result<Self> {
        let mut levels = Vec::with_capacity(channels.len());
        let mut prev = c_in;
        for (l, &c) in channels.iter().enumerate() {
            levels.push(DoubleConv::new(store, &format!("{name}.level{l}"), prev, c, rng)?);
            prev = c;
        }
        Ok(SpatialEncoder { levels })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let mut out = Vec::with_capacity(self.levels.len());
        let mut cur = x;
        for (l, level) in self.levels.iter().enumerate() {
            let s = level.forward(b, cur)?;
            out.push(s);
            if l + 1 < self.levels.len() {
                cur = s.maxpool_2x2()?;
            }
        }
        Ok(out)
    }
}

/// Upsampling path with skip connections and a final 1x1 projection.
#[derive(Clone, Debug)]
pub struct FeatureDecoder {
    ups: Vec<ConvTranspose>,
    blocks: Vec<DoubleConv>,
    head: Conv,
}

impl FeatureDecoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: &[usize], out_channels: usize, rng: &mut R) -> Result<Self> {
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for l in (1..channels.len()).rev() {
            let (hi, lo) = (channels[l], channels[l - 1]);
            ups.push(ConvTranspose::new(store, &format!("{name}.up{l}"), hi, lo, rng)?);
            blocks.push(DoubleConv::new(store, &format!("{name}.block{l}"), 2 * lo, lo, rng)?);
        }
        let head = Conv::new(store, &format!("{name}.head"), channels[0], out_channels, 1, true, rng)?;
        Ok(FeatureDecoder { ups, blocks, head })
    }

    /// `fused[l]` is the fused feature of level `l`, finest first.
    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, fused: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if fused.len() != self.ups.len() + 1 {
            return Err(Error::shape("feature_decoder", "levels", self.ups.len() + 1, fused.len()));
        }
        let mut d = *fused.last().expect("at least one level");
        for (i, (up, block)) in self.ups.iter().zip(&self.blocks).enumerate() {
            let skip = fused[fused.len() - 2 - i];
            let u = up.forward(b, d)?;
            let (us, ss) = (u.shape(), skip.shape());
            if us != ss {
                return Err(Error::invalid("feature_decoder", format!("skip shape {ss:?} does not match upsampled {us:?}")));
            }
            d = block.forward(b, Var::concat(&[u, skip])?)?;
        }
        self.head.forward(b, d)
    }
}
