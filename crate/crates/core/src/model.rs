//! Full per-view encoder (spatial + frequency + fusion + decoder) and the intensity field.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::caff::CaffFusion;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::field::{predict_points, reconstruct_volume, FieldDecoder};
use crate::freq_encoder::FreqEncoder;
use crate::geometry::{ConeBeamGeometry, Point3, ProjectionSet, Volume};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::spatial::{FeatureDecoder, SpatialEncoder};
use crate::spectral::{count_params_full, count_params_scf};
use crate::tensor::Tensor;

/// Longest edge of the reconstruction box in mm, the largest chord a unit-attenuation
/// volume can produce up to a factor of sqrt(3).
pub fn input_scale(geom: &ConeBeamGeometry) -> f64 {
    let (shape, spacing) = geom.volume_layout();
    shape.iter().zip(spacing).map(|(&n, s)| n as f64 * s).fold(0.0, f64::max)
}

/// Architecture of the model; parameter values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub det_hw: (usize, usize),
    pub level_dims: Vec<(usize, usize)>,
    pub spatial: SpatialEncoder,
    pub freq: Option<FreqEncoder>,
    pub fusion: Vec<CaffFusion>,
    pub decoder: FeatureDecoder,
    pub field: FieldDecoder,
}

/// One spectral weight of the frequency encoder, for parameter accounting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpectralLayerInfo {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub modes1: usize,
    pub modes2: usize,
    pub full_params: u64,
    pub scf_params: u64,
}

impl Network {
    pub fn new<T: Scalar, R: rand::Rng + ?Sized>(config: &ModelConfig, det_hw: (usize, usize), store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let level_dims = config.level_dims(det_hw.0, det_hw.1)?;
        let spatial = SpatialEncoder::new(store, "spatial", 1, &config.channels, rng)?;
        let (freq, fusion) = if config.enable_caff {
            let freq = FreqEncoder::new(
                store,
                "freq",
                1,
                &config.channels,
                &level_dims,
                (config.modes1, config.modes2),
                config.patch,
                config.heads,
                config.enable_lhif,
                config.factorized,
                rng,
            )?;
            let fusion = config
                .channels
                .iter()
                .enumerate()
                .map(|(l, &c)| CaffFusion::new(store, &format!("fusion{l}"), c, config.heads, config.fusion, config.qkv_roles, rng))
                .collect::<Result<Vec<_>>>()?;
            (Some(freq), fusion)
        } else {
            (None, Vec::new())
        };
        let decoder = FeatureDecoder::new(store, "decoder", &config.channels, config.feature_width, rng)?;
        let field = FieldDecoder::new(store, "field", config.feature_width, config.view_fusion, rng)?;
        Ok(Network {
            config: config.clone(),
            det_hw,
            level_dims,
            spatial,
            freq,
            fusion,
            decoder,
            field,
        })
    }

    /// Projection `[1, H, W]` to its feature map `E_k`.
    pub fn encode_view<'t, T: Scalar>(&self, b: &Bound<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = image.shape();
        if shape != [1, self.det_hw.0, self.det_hw.1] {
            return Err(Error::invalid("encode_view", format!("expected [1, {}, {}] projection, got {shape:?}", self.det_hw.0, self.det_hw.1)));
        }
        let mut x = image;
        let mut pool = self.config.input_pool;
        while pool > 1 {
            x = x.avgpool_2x2()?;
            pool /= 2;
        }
        let s = self.spatial.forward(b, x)?;
        let fused = match &self.freq {
            Some(freq) => {
                let f = freq.forward(b, x)?;
                s.iter()
                    .zip(&f)
                    .zip(&self.fusion)
                    .map(|((&s, &f), fusion)| fusion.forward(b, s, f))
                    .collect::<Result<Vec<_>>>()?
            }
            None => s,
        };
        self.decoder.forward(b, &fused)
    }

    /// Encodes every view after dividing line integrals by [`input_scale`].
    pub fn encode_views<'t, T: Scalar>(&self, b: &Bound<'t, T>, tape: &'t Tape<T>, proj: &ProjectionSet<T>) -> Result<Vec<Var<'t, T>>> {
        let scale = T::lit(1.0 / input_scale(&proj.geometry));
        (0..proj.geometry.views())
            .map(|k| self.encode_view(b, tape.constant(proj.view(k).map(|v| v * scale))))
            .collect()
    }

    pub fn predict<'t, T: Scalar>(&self, b: &Bound<'t, T>, features: &[Var<'t, T>], geom: &ConeBeamGeometry, points: &[Point3]) -> Result<Var<'t, T>> {
        predict_points(b, features, geom, points, &self.field)
    }

    pub fn spectral_layers(&self) -> Vec<SpectralLayerInfo> {
        let Some(freq) = &self.freq else { return Vec::new() };
        let mut out = Vec::new();
        for (l, stage) in freq.stages.iter().enumerate() {
            let c = &stage.config;
            let (m1, m2) = stage.mask.modes();
            let mut push = |name: String, m1: usize, m2: usize| {
                let dims = (c.c_in as u64, c.c_out as u64, m1 as u64, m2 as u64);
                out.push(SpectralLayerInfo {
                    name,
                    c_in: c.c_in,
                    c_out: c.c_out,
                    modes1: m1,
                    modes2: m2,
                    full_params: count_params_full(dims.0, dims.1, dims.2, dims.3).expect("positive dims"),
                    scf_params: count_params_scf(dims.0, dims.1, dims.2, dims.3).expect("positive dims"),
                });
            };
            push(format!("freq.stage{l}.ghif"), m1, m2);
            if let Some((_, p)) = &stage.lhif {
                push(format!("freq.stage{l}.lhif"), *p, *p);
            }
        }
        out
    }
}

/// Network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub network: Network,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Seeded initialization; the same seed gives the same values for every scalar type up to rounding.
    pub fn new(config: &ModelConfig, det_hw: (usize, usize), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let network = Network::new(config, det_hw, &mut params, &mut rng)?;
        Ok(Model { network, params })
    }

    /// Feature maps of every view with parameters frozen.
    pub fn features(&self, proj: &ProjectionSet<T>) -> Result<Vec<Tensor<T>>> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let vars = self.network.encode_views(&b, &tape, proj)?;
        Ok(vars.iter().map(|v| (*v.value()).clone()).collect())
    }

    pub fn reconstruct(&self, proj: &ProjectionSet<T>, chunk: usize) -> Result<Volume<T>> {
        let (shape, spacing) = proj.geometry.volume_layout();
        let features = self.features(proj)?;
        reconstruct_volume(&self.params, &self.network.field, &features, &proj.geometry, shape, spacing, chunk)
    }
}
