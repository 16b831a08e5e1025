use freqct::checkpoint::{load_checkpoint, save_checkpoint};
use freqct::config::{FusionVariant, ModelConfig, QkvRoles, ViewFusion};
use freqct::geometry::{forward_project, make_phantom, ConeBeamGeometry, PhantomKind};
use freqct::gradcheck::check_gradients;
use freqct::model::{Model, Network};
use freqct::params::{Bound, ParamStore};
use freqct::spectral::{count_params_full, count_params_scf};
use freqct::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        levels: 2,
        channels: vec![4, 8],
        modes1: 2,
        modes2: 2,
        patch: 4,
        heads: 2,
        fusion: FusionVariant::Caff,
        qkv_roles: QkvRoles::SpatialQuery,
        enable_lhif: true,
        enable_caff: true,
        feature_width: 4,
        input_pool: 1,
        factorized: true,
        view_fusion: ViewFusion::Max,
    }
}

fn tiny_geometry(views: usize) -> ConeBeamGeometry {
    ConeBeamGeometry {
        dso_mm: 60.0,
        dsd_mm: 120.0,
        det_pixels: [16, 16],
        det_spacing_mm: [1.0, 1.0],
        vol_shape: [8, 8, 8],
        vol_spacing_mm: [0.75, 0.75, 0.75],
        angles_deg: ConeBeamGeometry::uniform_angles(views),
    }
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

fn set_random_biases(store: &mut ParamStore<f64>) {
    let ids: Vec<_> = store.iter().enumerate().filter(|(_, p)| p.name.ends_with(".bias") || p.name.ends_with(".offset")).map(|(i, _)| i).collect();
    for (n, i) in ids.into_iter().enumerate() {
        let id = freqct::params::ParamId(i);
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, rand_t(&shape, 500 + n as u64).map(|v| 0.1 * v)).unwrap();
    }
}

#[test]
fn composed_model_gradients_match_finite_differences() {
    let geom = tiny_geometry(2);
    let mut pts: Vec<[f64; 3]> = vec![[0.4, -1.1, 0.3], [-1.7, 0.9, -0.8], [1.2, 1.4, 1.9], [0.0, 0.1, -2.2]];
    // corners reach the edge of every feature map
    for c in 0..8 {
        pts.push([0, 1, 2].map(|a| if c >> a & 1 == 1 { 2.9 } else { -2.9 }));
    }
    // two-wide layer-norm groups are nearly a sign function, so heads get four channels here
    let base = ModelConfig { channels: vec![8, 8], ..tiny() };
    for cfg in [base.clone(), ModelConfig { fusion: FusionVariant::SpatialCa, qkv_roles: QkvRoles::FrequencyQuery, view_fusion: ViewFusion::Mean, ..base }] {
        let mut store = ParamStore::<f64>::new();
        let net = Network::new(&cfg, (16, 16), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        set_random_biases(&mut store);
        let np = store.len();
        let mut inputs = store.values();
        inputs.push(rand_t(&[1, 16, 16], 2));
        inputs.push(rand_t(&[1, 16, 16], 3));
        // targets near the prediction keep rounding in the difference quotient small
        // next to weakly coupled coordinates
        let target = {
            let tape = Tape::new();
            let v: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let b = Bound::from_vars(v[..np].to_vec());
            let feats = vec![net.encode_view(&b, v[np]).unwrap(), net.encode_view(&b, v[np + 1]).unwrap()];
            let y = net.predict(&b, &feats, &geom, &pts).unwrap().value();
            Tensor::new([12], y.data().iter().zip([2e-2, -1e-2, 1.5e-2, -2e-2].iter().cycle()).map(|(a, d)| a + d).collect()).unwrap()
        };
        let err = check_gradients(
            |v| {
                let b = Bound::from_vars(v[..np].to_vec());
                let feats = vec![net.encode_view(&b, v[np])?, net.encode_view(&b, v[np + 1])?];
                net.predict(&b, &feats, &geom, &pts)?.mse_loss(&target)
            },
            &inputs,
            Some(6),
        )
        .unwrap();
        assert!(err < 1e-4, "{cfg:?}: {err}");
    }
}

#[test]
fn model_shapes_and_seeding() {
    let geom = tiny_geometry(3);
    let vol = make_phantom::<f64>(PhantomKind::RandomEllipsoids, 8, 1).unwrap();
    let vol = freqct::geometry::Volume::centered(vol.data, [0.75; 3]).unwrap();
    let proj = forward_project(&vol, &geom).unwrap();
    let a = Model::<f64>::new(&tiny(), (16, 16), 7).unwrap();
    let b = Model::<f64>::new(&tiny(), (16, 16), 7).unwrap();
    let c = Model::<f32>::new(&tiny(), (16, 16), 7).unwrap();
    assert_eq!(a.params.values(), b.params.values());
    for (x, y) in a.params.values().iter().zip(c.params.values()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| (*p as f32) == *q));
    }
    let feats = a.features(&proj).unwrap();
    assert_eq!(feats.len(), 3);
    assert!(feats.iter().all(|f| f.shape() == [4, 16, 16]));
    let rec = a.reconstruct(&proj, 100).unwrap();
    assert_eq!(rec.dims(), [8, 8, 8]);
    assert_eq!(rec, a.reconstruct(&proj, 33).unwrap());
}

#[test]
fn input_pooling_shrinks_every_level() {
    let cfg = ModelConfig { input_pool: 2, ..tiny() };
    let m = Model::<f64>::new(&cfg, (16, 16), 0).unwrap();
    assert_eq!(m.network.level_dims, vec![(8, 8), (4, 4)]);
    let tape = Tape::new();
    let b = m.params.bind(&tape);
    let e = m.network.encode_view(&b, tape.constant(rand_t(&[1, 16, 16], 1))).unwrap();
    assert_eq!(e.shape(), vec![4, 8, 8]);
    assert!(m.network.encode_view(&b, tape.constant(rand_t(&[1, 8, 8], 1))).is_err());
}

#[test]
fn ablation_switches_change_the_parameter_set() {
    let full = Model::<f64>::new(&tiny(), (16, 16), 0).unwrap();
    let no_lhif = Model::<f64>::new(&ModelConfig { enable_lhif: false, ..tiny() }, (16, 16), 0).unwrap();
    let spatial = Model::<f64>::new(&ModelConfig { enable_caff: false, ..tiny() }, (16, 16), 0).unwrap();
    assert!(no_lhif.params.count() < full.params.count());
    assert!(spatial.params.count() < no_lhif.params.count());
    assert!(spatial.params.iter().all(|p| !p.name.starts_with("freq") && !p.name.starts_with("fusion")));
    assert!(spatial.network.spectral_layers().is_empty());
}

#[test]
fn spectral_layer_accounting_matches_the_store() {
    for factorized in [true, false] {
        let cfg = ModelConfig { factorized, ..tiny() };
        let m = Model::<f64>::new(&cfg, (16, 16), 0).unwrap();
        let layers = m.network.spectral_layers();
        assert_eq!(layers.len(), 4);
        let stored: u64 = m.params.iter().filter(|p| p.name.contains(".ghif.") || p.name.contains(".lhif.")).map(|p| p.value.len() as u64).sum();
        let counted: u64 = layers.iter().map(|l| if factorized { l.scf_params } else { l.full_params }).sum();
        assert_eq!(stored, counted);
        for l in &layers {
            assert_eq!(l.full_params, count_params_full(l.c_in as u64, l.c_out as u64, l.modes1 as u64, l.modes2 as u64).unwrap());
            assert_eq!(l.scf_params, count_params_scf(l.c_in as u64, l.c_out as u64, l.modes1 as u64, l.modes2 as u64).unwrap());
        }
    }
}

#[test]
fn checkpoints_round_trip_through_f32() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::<f64>::new(&tiny(), (16, 16), 3).unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&path, &m, 12).unwrap();
    let (back, manifest) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(manifest.step, 12);
    assert_eq!(manifest.model, tiny());
    let mut offset = 0;
    for e in &manifest.parameters {
        assert_eq!(e.byte_offset, offset);
        offset += e.byte_length;
    }
    assert_eq!(std::fs::metadata(dir.path().join("model.bin")).unwrap().len() as usize, offset);
    for (a, b) in m.params.values().iter().zip(back.params.values()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (*x as f32) as f64 == *y));
    }
    // a truncated blob is reported, not silently accepted
    let blob = dir.path().join("model.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
}

#[test]
fn full_scale_configuration_is_consistent() {
    let cfg = ModelConfig::full_scale();
    cfg.validate().unwrap();
    assert_eq!(cfg.level_dims(256, 256).unwrap().len(), 4);
    let desk = ModelConfig::desk();
    desk.validate().unwrap();
    assert_eq!((desk.levels, desk.channels.clone(), desk.modes1, desk.patch, desk.heads), (3, vec![8, 16, 32], 4, 8, 2));
}
