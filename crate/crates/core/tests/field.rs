use freqct::config::ViewFusion;
use freqct::field::{bilinear_sample, fuse_views, predict_points, reconstruct_volume, view_coords, FieldDecoder};
use freqct::geometry::ConeBeamGeometry;
use freqct::gradcheck::check_gradients;
use freqct::params::ParamStore;
use freqct::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

fn geometry(views: usize) -> ConeBeamGeometry {
    ConeBeamGeometry {
        dso_mm: 80.0,
        dsd_mm: 160.0,
        det_pixels: [16, 16],
        det_spacing_mm: [1.0, 1.0],
        vol_shape: [6, 6, 6],
        vol_spacing_mm: [1.0, 1.0, 1.0],
        angles_deg: ConeBeamGeometry::uniform_angles(views),
    }
}

fn decoder(width: usize, fusion: ViewFusion, seed: u64, random_biases: bool) -> (ParamStore<f64>, FieldDecoder) {
    let mut store = ParamStore::new();
    let dec = FieldDecoder::new(&mut store, "field", width, fusion, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    if random_biases {
        for i in 0..4 {
            let id = store.id_of(&format!("field.fc{i}.bias")).unwrap();
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, rand_t(&shape, 100 + i)).unwrap();
        }
    }
    (store, dec)
}

#[test]
fn bilinear_sample_grid_points_midpoints_and_outside() {
    let f = rand_t(&[3, 4, 5], 1);
    let at = |c: usize, y: usize, x: usize| f.data()[(c * 4 + y) * 5 + x];
    let v = bilinear_sample(&f, 2.0, 1.0).unwrap();
    assert_eq!(v, vec![at(0, 1, 2), at(1, 1, 2), at(2, 1, 2)]);
    let v = bilinear_sample(&f, 2.5, 3.0).unwrap();
    for (c, got) in v.iter().enumerate() {
        assert!((got - 0.5 * (at(c, 3, 2) + at(c, 3, 3))).abs() < 1e-15);
    }
    for (x, y) in [(-0.01, 1.0), (4.01, 1.0), (1.0, -0.5), (1.0, 3.2)] {
        assert!(bilinear_sample(&f, x, y).unwrap().iter().all(|&v| v == 0.0), "{x} {y}");
    }
    // the far edge itself is inside
    let v = bilinear_sample(&f, 4.0, 3.0).unwrap();
    assert_eq!(v[1], at(1, 3, 4));
}

#[test]
fn bilinear_gather_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep clear of integer grid lines, where the sampler has kinks
    let coords: Vec<f64> = (0..12).map(|_| rng.gen_range(0..4) as f64 + rng.gen_range(0.1..0.9)).collect();
    let coords = Tensor::new([6, 2], coords).unwrap();
    let weights = rand_t(&[6, 3], 3);
    let err = check_gradients(|v| v[0].bilinear_gather(v[1])?.dot_const(&weights), &[rand_t(&[3, 5, 5], 4), coords], None).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn view_fusion_is_a_set_function() {
    let tape = Tape::<f64>::new();
    let views: Vec<_> = (0..4).map(|k| tape.constant(rand_t(&[5, 3], 10 + k))).collect();
    for mode in [ViewFusion::Max, ViewFusion::Mean] {
        assert_eq!(*fuse_views(&views[..1], mode).unwrap().value(), *views[0].value());
        let base = fuse_views(&views, mode).unwrap().value();
        for perm in [[3, 1, 0, 2], [1, 0, 3, 2], [2, 3, 1, 0]] {
            let p: Vec<_> = perm.iter().map(|&i| views[i]).collect();
            assert_eq!(*fuse_views(&p, mode).unwrap().value(), *base, "{mode:?}");
        }
    }
    let dup = [views[0], views[1], views[1], views[2], views[3]];
    assert_eq!(*fuse_views(&dup, ViewFusion::Max).unwrap().value(), *fuse_views(&views, ViewFusion::Max).unwrap().value());
    let bad = [views[0], tape.constant(rand_t(&[5, 2], 20))];
    assert!(fuse_views(&bad, ViewFusion::Max).is_err());
}

#[test]
fn decoder_on_a_two_wide_toy() {
    let (mut store, dec) = decoder(2, ViewFusion::Max, 1, false);
    let set = |store: &mut ParamStore<f64>, name: &str, shape: &[usize], v: &[f64]| {
        let id = store.id_of(name).unwrap();
        store.set_value(id, Tensor::new(shape.to_vec(), v.to_vec()).unwrap()).unwrap();
    };
    set(&mut store, "field.fc0.weight", &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    set(&mut store, "field.fc0.bias", &[2], &[0.0, 1.0]);
    set(&mut store, "field.fc1.weight", &[2, 2], &[1.0, 1.0, 0.0, 1.0]);
    set(&mut store, "field.fc1.bias", &[2], &[0.0, 0.25]);
    set(&mut store, "field.fc2.weight", &[1, 2], &[1.0, -2.0]);
    set(&mut store, "field.fc2.bias", &[1], &[1.0]);
    set(&mut store, "field.fc3.weight", &[1, 1], &[3.0]);
    set(&mut store, "field.fc3.bias", &[1], &[-0.5]);
    let tape = Tape::new();
    let b = store.bind(&tape);
    // [0.5, -2] -> relu([0.5, -1]) = [0.5, 0] -> [0.5, 0.25] -> relu(0.5 - 0.5 + 1) = 1 -> 3 - 0.5
    let y = dec.decode(&b, tape.constant(Tensor::new([1, 2], vec![0.5, -2.0]).unwrap())).unwrap();
    assert_eq!(y.value().data(), &[2.5]);
    let zeros = decoder(8, ViewFusion::Max, 2, false);
    let tape = Tape::new();
    let b = zeros.0.bind(&tape);
    let y = zeros.1.decode(&b, tape.constant(Tensor::zeros([3, 8]))).unwrap();
    assert_eq!(y.value().data(), &[0.0; 3]);
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let (store, dec) = decoder(6, ViewFusion::Max, 3, true);
    let weights = rand_t(&[4], 5);
    let err = check_gradients(
        |v| {
            let b = store.bind_frozen(v[0].tape());
            dec.decode(&b, v[0])?.dot_const(&weights)
        },
        &[rand_t(&[4, 6], 6)],
        None,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn points(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-3.0..3.0))).collect()
}

fn relu_linear(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>, relu: bool) -> Vec<f64> {
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    (0..co)
        .map(|o| {
            let v = b.data()[o] + (0..ci).map(|i| w.data()[o * ci + i] * x[i]).sum::<f64>();
            if relu { v.max(0.0) } else { v }
        })
        .collect()
}

#[test]
fn single_point_prediction_matches_manual_composition() {
    let g = geometry(3);
    let (store, dec) = decoder(4, ViewFusion::Max, 7, true);
    let feats: Vec<Tensor<f64>> = (0..3).map(|k| rand_t(&[4, 8, 8], 20 + k)).collect();
    let p = [1.3, -0.7, 2.1];
    let mut fused = vec![f64::NEG_INFINITY; 4];
    for (k, f) in feats.iter().enumerate() {
        let (u, v) = g.project_point(p, g.angles_deg[k]).unwrap();
        // 16 detector pixels onto 8 feature cells
        let (x, y) = ((u + 0.5) * 0.5 - 0.5, (v + 0.5) * 0.5 - 0.5);
        for (a, s) in bilinear_sample(f, x, y).unwrap().into_iter().enumerate() {
            fused[a] = fused[a].max(s);
        }
    }
    let w = |s: &str| store.value(store.id_of(&format!("field.{s}")).unwrap()).clone();
    let mut h = fused;
    for i in 0..4 {
        h = relu_linear(&h, &w(&format!("fc{i}.weight")), &w(&format!("fc{i}.bias")), i < 3);
    }
    let tape = Tape::new();
    let b = store.bind(&tape);
    let fv: Vec<_> = feats.iter().map(|f| tape.constant(f.clone())).collect();
    let got = predict_points(&b, &fv, &g, &[p], &dec).unwrap();
    assert_eq!(got.shape(), vec![1]);
    assert!((got.value().data()[0] - h[0]).abs() < 1e-12);

    let many = predict_points(&b, &fv, &g, &points(9, 1), &dec).unwrap();
    assert_eq!(many.shape(), vec![9]);
    let coords: Tensor<f64> = view_coords(&g, &[[0.0; 3]], 0, (8, 8)).unwrap();
    assert_eq!(coords.data(), &[3.5, 3.5]);
}

#[test]
fn zero_features_and_biases_predict_zero() {
    let g = geometry(2);
    let (store, dec) = decoder(4, ViewFusion::Max, 8, false);
    let feats = vec![Tensor::zeros([4, 8, 8]); 2];
    let vol = reconstruct_volume(&store, &dec, &feats, &g, [4, 4, 4], [1.0; 3], 10).unwrap();
    assert!(vol.data.data().iter().all(|&v| v == 0.0));
}

#[test]
fn predictions_do_not_depend_on_view_order() {
    for mode in [ViewFusion::Max, ViewFusion::Mean] {
        let g = geometry(4);
        let (store, dec) = decoder(4, mode, 9, true);
        let feats: Vec<Tensor<f64>> = (0..4).map(|k| rand_t(&[4, 8, 8], 30 + k)).collect();
        let pts = points(20, 2);
        let run = |order: &[usize]| {
            let mut g2 = g.clone();
            g2.angles_deg = order.iter().map(|&i| g.angles_deg[i]).collect();
            let tape = Tape::new();
            let b = store.bind(&tape);
            let fv: Vec<_> = order.iter().map(|&i| tape.constant(feats[i].clone())).collect();
            (*predict_points(&b, &fv, &g2, &pts, &dec).unwrap().value()).clone()
        };
        let base = run(&[0, 1, 2, 3]);
        assert_eq!(run(&[2, 0, 3, 1]), base);
        assert_eq!(run(&[3, 2, 1, 0]), base);
    }
}

#[test]
fn predictions_are_differentiable_end_to_end() {
    let g = geometry(2);
    let (store, dec) = decoder(4, ViewFusion::Mean, 10, true);
    let pts = points(5, 3);
    let err = check_gradients(
        |v| {
            let b = store.bind_frozen(v[0].tape());
            predict_points(&b, v, &g, &pts, &dec)?.sum()
        },
        &[rand_t(&[4, 8, 8], 40), rand_t(&[4, 8, 8], 41)],
        Some(64),
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn volume_evaluation_matches_pointwise_calls_for_any_chunk() {
    let g = geometry(3);
    let (store, dec) = decoder(4, ViewFusion::Max, 11, true);
    let feats: Vec<Tensor<f64>> = (0..3).map(|k| rand_t(&[4, 8, 8], 50 + k)).collect();
    let (shape, spacing) = ([4, 4, 4], [1.5, 1.0, 0.5]);
    let a = reconstruct_volume(&store, &dec, &feats, &g, shape, spacing, 7).unwrap();
    let b = reconstruct_volume(&store, &dec, &feats, &g, shape, spacing, 64).unwrap();
    assert_eq!(a, b);
    for d in 0..4 {
        for h in 0..4 {
            for w in 0..4 {
                let p = a.voxel_center(d, h, w);
                let tape = Tape::new();
                let bound = store.bind_frozen(&tape);
                let fv: Vec<_> = feats.iter().map(|f| tape.constant(f.clone())).collect();
                let one = predict_points(&bound, &fv, &g, &[p], &dec).unwrap().value().data()[0];
                assert_eq!(one, a.data.data()[(d * 4 + h) * 4 + w]);
            }
        }
    }
    assert!(reconstruct_volume(&store, &dec, &feats, &g, shape, spacing, 0).is_err());
}
