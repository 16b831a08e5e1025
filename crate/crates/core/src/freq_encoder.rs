//! Frequency encoder: a chain of HiLocFFNO blocks mixing global high-frequency
//! modes, patch-local spectra, a channel bypass and Galerkin attention.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{Conv, LayerNorm, Linear};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::spectral::{make_mode_mask, ModeMask, ModeVariant};
use crate::tensor::Tensor;

/// Complex spectral weights stored as stacked `[2, ...]` parameters.
#[derive(Clone, Debug)]
pub enum SpectralParams {
    /// `r1: [2, C_out, C_in]`, `r2: [2, C_in, M1, M2]`.
    Scf { r1: ParamId, r2: ParamId },
    /// `r: [2, C_out, C_in, M1, M2]`.
    Full { r: ParamId },
}

impl SpectralParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        m1: usize,
        m2: usize,
        factorized: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let s = 1.0 / c_in as f64;
        if factorized {
            let r1 = store.add(format!("{name}.r1"), Tensor::uniform([2, c_out, c_in], -s, s, rng))?;
            let r2 = store.add(format!("{name}.r2"), Tensor::uniform([2, c_in, m1, m2], -s, s, rng))?;
            Ok(SpectralParams::Scf { r1, r2 })
        } else {
            let r = store.add(format!("{name}.r"), Tensor::uniform([2, c_out, c_in, m1, m2], -s, s, rng))?;
            Ok(SpectralParams::Full { r })
        }
    }

    /// Mixes a `[2, B..., C_in, M1, M2]` spectrum.
    pub fn apply<'t, T: Scalar>(&self, b: &Bound<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        match *self {
            SpectralParams::Scf { r1, r2 } => z.spectral_scf(b.get(r1), b.get(r2)),
            SpectralParams::Full { r } => z.spectral_full(b.get(r)),
        }
    }
}

/// Global branch: transform, keep the masked modes, mix, and transform back.
pub fn ghif_forward<'t, T: Scalar>(b: &Bound<'t, T>, x: Var<'t, T>, weights: &SpectralParams, mask: &ModeMask) -> Result<Var<'t, T>> {
    let z = x.fft2()?.gather_modes(mask)?;
    weights.apply(b, z)?.scatter_modes(mask)?.ifft2_real()
}

/// Local branch: the same spectral weights applied to every `patch x patch` tile, all modes kept.
pub fn lhif_forward<'t, T: Scalar>(b: &Bound<'t, T>, x: Var<'t, T>, weights: &SpectralParams, patch: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let [_, h, w] = shape[..] else {
        return Err(Error::shape("lhif_forward", "rank", 3, shape.len()));
    };
    let tiles = x.to_patches(patch)?;
    weights.apply(b, tiles.fft2()?)?.ifft2_real()?.from_patches(h, w)
}

/// `x + W_o(Q (K^T V) / n)` over the `H * W` tokens, keys and values layer-normalized per head.
#[derive(Clone, Debug)]
pub struct GalerkinAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln_k: LayerNorm,
    pub ln_v: LayerNorm,
    pub heads: usize,
}

impl GalerkinAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(Error::invalid("galerkin_attention", format!("{heads} heads do not divide {c} channels")));
        }
        Ok(GalerkinAttention {
            q: Linear::new(store, &format!("{name}.q"), c, c, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), c, c, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), c, c, true, rng)?,
            out: Linear::new(store, &format!("{name}.out"), c, c, true, rng)?,
            ln_k: LayerNorm::new(store, &format!("{name}.ln_k"), c, heads)?,
            ln_v: LayerNorm::new(store, &format!("{name}.ln_v"), c, heads)?,
            heads,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let [_, h, w] = shape[..] else {
            return Err(Error::shape("galerkin_attention", "rank", 3, shape.len()));
        };
        let tokens = x.to_tokens()?;
        self.forward_tokens(b, tokens)?.from_tokens(h, w)
    }

    /// Same map on a `[n, C]` token matrix.
    pub fn forward_tokens<'t, T: Scalar>(&self, b: &Bound<'t, T>, tokens: Var<'t, T>) -> Result<Var<'t, T>> {
        let q = self.q.forward(b, tokens)?;
        let k = self.ln_k.forward(b, self.k.forward(b, tokens)?)?;
        let v = self.ln_v.forward(b, self.v.forward(b, tokens)?)?;
        let mixed = q.galerkin_attention_core(k, v, self.heads)?;
        tokens.add(self.out.forward(b, mixed)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiLocFfnoConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub modes1: usize,
    pub modes2: usize,
    pub patch: usize,
    pub heads: usize,
    pub enable_lhif: bool,
    pub factorized: bool,
}

/// `GA(GeLU(W f + lHiF(f) + gHiF(f)))`.
#[derive(Clone, Debug)]
pub struct HiLocFfno {
    pub bypass: Conv,
    pub ghif: SpectralParams,
    pub mask: ModeMask,
    pub lhif: Option<(SpectralParams, usize)>,
    pub attention: GalerkinAttention,
    pub dims: (usize, usize),
    pub config: HiLocFfnoConfig,
}

impl HiLocFfno {
    /// Block for `dims = (H, W)` inputs.
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &HiLocFfnoConfig, dims: (usize, usize), rng: &mut R) -> Result<Self> {
        let (h, w) = dims;
        if cfg.enable_lhif && (cfg.patch == 0 || h % cfg.patch != 0 || w % cfg.patch != 0) {
            return Err(Error::invalid("hilocffno", format!("patch {} does not divide {h}x{w}", cfg.patch)));
        }
        let mask = make_mode_mask(h, w, cfg.modes1, cfg.modes2, ModeVariant::High)?;
        let bypass = Conv::new(store, &format!("{name}.bypass"), cfg.c_in, cfg.c_out, 1, false, rng)?;
        let ghif = SpectralParams::new(store, &format!("{name}.ghif"), cfg.c_in, cfg.c_out, cfg.modes1, cfg.modes2, cfg.factorized, rng)?;
        let lhif = if cfg.enable_lhif {
            let p = cfg.patch;
            Some((SpectralParams::new(store, &format!("{name}.lhif"), cfg.c_in, cfg.c_out, p, p, cfg.factorized, rng)?, p))
        } else {
            None
        };
        let attention = GalerkinAttention::new(store, &format!("{name}.ga"), cfg.c_out, cfg.heads, rng)?;
        Ok(HiLocFfno {
            bypass,
            ghif,
            mask,
            lhif,
            attention,
            dims,
            config: cfg.clone(),
        })
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || (shape[1], shape[2]) != self.dims {
            return Err(Error::invalid("hilocffno", format!("expected [C, {}, {}] input, got {shape:?}", self.dims.0, self.dims.1)));
        }
        let mut sum = self.bypass.forward(b, x)?.add(ghif_forward(b, x, &self.ghif, &self.mask)?)?;
        if let Some((weights, patch)) = &self.lhif {
            sum = sum.add(lhif_forward(b, x, weights, *patch)?)?;
        }
        self.attention.forward(b, sum.gelu()?)
    }
}

/// `L` HiLocFFNO stages separated by 2x2 average pooling.
#[derive(Clone, Debug)]
pub struct FreqEncoder {
    pub stages: Vec<HiLocFfno>,
}

impl FreqEncoder {
    /// `dims[l]` is the spatial size of stage `l`; per-stage modes and patch are
    /// clamped to what that size supports.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        channels: &[usize],
        dims: &[(usize, usize)],
        modes: (usize, usize),
        patch: usize,
        heads: usize,
        enable_lhif: bool,
        factorized: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if channels.len() != dims.len() {
            return Err(Error::shape("freq_encoder", "levels", channels.len(), dims.len()));
        }
        let mut stages = Vec::with_capacity(channels.len());
        let mut prev = c_in;
        for (l, (&c, &(h, w))) in channels.iter().zip(dims).enumerate() {
            let cfg = HiLocFfnoConfig {
                c_in: prev,
                c_out: c,
                modes1: modes.0.min(h / 2),
                modes2: modes.1.min(w / 2),
                patch: patch.min(h).min(w),
                heads,
                enable_lhif,
                factorized,
            };
            stages.push(HiLocFfno::new(store, &format!("{name}.stage{l}"), &cfg, (h, w), rng)?);
            prev = c;
        }
        Ok(FreqEncoder { stages })
    }

    /// Returns `f_l` for every stage, each taken before pooling.
    pub fn forward<'t, T: Scalar>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut cur = x;
        for (l, stage) in self.stages.iter().enumerate() {
            let f = stage.forward(b, cur)?;
            out.push(f);
            if l + 1 < self.stages.len() {
                cur = f.avgpool_2x2()?;
            }
        }
        Ok(out)
    }
}
