//! Cross-attention fusion of spatial and frequency features, per pyramid level.

use rand::Rng;

use crate::autodiff::Var;
use crate::config::{FusionVariant, QkvRoles};
use crate::error::{Error, Result};
use crate::layers::{Conv, Linear};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;

/// Multi-head scaled dot-product attention over `H * W` tokens of width `C`.
/// Keys carry no bias: it would only shift every score of a query by the same amount.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Self::with_biases(store, name, c, heads, true, true, rng)
    }

    /// `q_bias` for the query projection, `vo_bias` for the value and output projections.
    pub fn with_biases<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        heads: usize,
        q_bias: bool,
        vo_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(Error::invalid("cross_attention", format!("{heads} heads do not divide {c} channels")));
        }
        Ok(CrossAttention {
            q: Linear::new(store, &format!("{name}.q"), c, c, q_bias, rng)?,
            k: Linear::new(store, &format!("{name}.k"), c, c, false, rng)?,
            v: Linear::new(store, &format!("{name}.v"), c, c, vo_bias, rng)?,
            out: Linear::new(store, &format!("{name}.out"), c, c, vo_bias, rng)?,
            heads,
        })
    }

    /// `CA(k, v, q)` on `[C, H, W]` maps of equal shape.
    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, k: Var<'t, T>, v: Var<'t, T>, q: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = q.shape();
        let [_, h, w] = shape[..] else {
            return Err(Error::shape("cross_attention", "rank", 3, shape.len()));
        };
        for (name, other) in [("keys", k.shape()), ("values", v.shape())] {
            if other != shape {
                return Err(Error::invalid("cross_attention", format!("{name} shape {other:?} differs from queries {shape:?}")));
            }
        }
        let qt = self.q.forward(b, q.to_tokens()?)?;
        let kt = self.k.forward(b, k.to_tokens()?)?;
        let vt = self.v.forward(b, v.to_tokens()?)?;
        let mixed = qt.softmax_attention_core(kt, vt, self.heads)?;
        self.out.forward(b, mixed)?.from_tokens(h, w)
    }
}

#[derive(Clone, Debug)]
enum Mixer {
    Caff { re: CrossAttention, im: CrossAttention },
    SpatialCa { ca: CrossAttention },
    Add,
    Concat { proj: Conv },
}

/// Fusion of one level: both inputs pass a 3x3 conv, then the configured mixer.
#[derive(Clone, Debug)]
pub struct CaffFusion {
    conv_s: Conv,
    conv_f: Conv,
    mixer: Mixer,
    roles: QkvRoles,
}

impl CaffFusion {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        heads: usize,
        variant: FusionVariant,
        roles: QkvRoles,
        rng: &mut R,
    ) -> Result<Self> {
        let conv_s = Conv::new(store, &format!("{name}.conv_s"), c, c, 3, true, rng)?;
        let conv_f = Conv::new(store, &format!("{name}.conv_f"), c, c, 3, true, rng)?;
        let mixer = match variant {
            // a bias constant over frequency tokens lands on one pixel (real part) or
            // is odd-symmetric and dropped by the real inverse (imaginary part)
            FusionVariant::Caff => Mixer::Caff {
                re: CrossAttention::with_biases(store, &format!("{name}.ca_re"), c, heads, true, false, rng)?,
                im: CrossAttention::with_biases(store, &format!("{name}.ca_im"), c, heads, false, false, rng)?,
            },
            FusionVariant::SpatialCa => Mixer::SpatialCa {
                ca: CrossAttention::new(store, &format!("{name}.ca"), c, heads, rng)?,
            },
            FusionVariant::Add => Mixer::Add,
            FusionVariant::Concat => Mixer::Concat {
                proj: Conv::new(store, &format!("{name}.proj"), 2 * c, c, 1, true, rng)?,
            },
        };
        Ok(CaffFusion { conv_s, conv_f, mixer, roles })
    }

    /// Attention modules of this level, for tests that need to zero them.
    pub fn attention(&self) -> Vec<&CrossAttention> {
        match &self.mixer {
            Mixer::Caff { re, im } => vec![re, im],
            Mixer::SpatialCa { ca } => vec![ca],
            _ => Vec::new(),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, s: Var<'t, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let (ss, fs) = (s.shape(), f.shape());
        if ss != fs {
            return Err(Error::invalid("caff_fuse", format!("spatial shape {ss:?} differs from frequency shape {fs:?}")));
        }
        let s = self.conv_s.forward(b, s)?;
        let f = self.conv_f.forward(b, f)?;
        // query stream and key/value stream
        let (query, memory) = match self.roles {
            QkvRoles::SpatialQuery => (s, f),
            QkvRoles::FrequencyQuery => (f, s),
        };
        match &self.mixer {
            Mixer::Caff { re, im } => {
                let (h, w) = (ss[1], ss[2]);
                let norm = T::lit(((h * w) as f64).sqrt());
                let zq = query.fft2()?.scale(T::one() / norm)?;
                let zm = memory.fft2()?.scale(T::one() / norm)?;
                let (re_q, im_q) = (zq.select(0)?, zq.select(1)?);
                let (re_m, im_m) = (zm.select(0)?, zm.select(1)?);
                let re_out = re_q.add(re.forward(b, re_m, re_m, re_q)?)?;
                let im_out = im_q.add(im.forward(b, im_m, im_m, im_q)?)?;
                Var::stack(&[re_out, im_out])?.ifft2_real()?.scale(norm)
            }
            Mixer::SpatialCa { ca } => query.add(ca.forward(b, memory, memory, query)?),
            Mixer::Add => s.add(f),
            Mixer::Concat { proj } => proj.forward(b, Var::concat(&[s, f])?),
        }
    }
}
