use freqct::caff::{CaffFusion, CrossAttention};
use freqct::config::{FusionVariant, QkvRoles};
use freqct::freq_encoder::{ghif_forward, lhif_forward, FreqEncoder, GalerkinAttention, HiLocFfno, HiLocFfnoConfig, SpectralParams};
use freqct::gradcheck::check_gradients;
use freqct::params::{ParamId, ParamStore};
use freqct::spatial::{FeatureDecoder, SpatialEncoder};
use freqct::spectral::{fft2, ifft2, make_mode_mask, ComplexSpectrum, ModeMask, ModeVariant};
use freqct::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn zero_prefix(store: &mut ParamStore<f64>, prefix: &str) {
    let ids: Vec<(ParamId, Vec<usize>)> = store
        .iter()
        .enumerate()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(i, p)| (ParamId(i), p.value.shape().to_vec()))
        .collect();
    assert!(!ids.is_empty(), "no parameters under {prefix}");
    for (id, shape) in ids {
        store.set_value(id, Tensor::zeros(shape)).unwrap();
    }
}

fn value(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.value(store.id_of(name).unwrap_or_else(|| panic!("missing {name}"))).clone()
}

fn scf(store: &mut ParamStore<f64>, name: &str, r1: Tensor<f64>, r2: Tensor<f64>) -> SpectralParams {
    SpectralParams::Scf {
        r1: store.add(format!("{name}.r1"), r1).unwrap(),
        r2: store.add(format!("{name}.r2"), r2).unwrap(),
    }
}

#[test]
fn ghif_drops_modes_outside_the_block() {
    let mut store = ParamStore::new();
    let w = SpectralParams::new(&mut store, "g", 2, 3, 2, 2, true, &mut rng(1)).unwrap();
    let mask = make_mode_mask(8, 8, 2, 2, ModeVariant::High).unwrap();
    let tape = Tape::<f64>::new();
    let b = store.bind(&tape);
    // a constant map lives entirely in the DC bin
    let y = ghif_forward(&b, tape.constant(Tensor::full([2, 8, 8], 0.7)), &w, &mask).unwrap();
    assert_eq!(y.shape(), vec![3, 8, 8]);
    assert!(y.value().data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn ghif_identity_weights_pass_the_nyquist_checkerboard() {
    let mut store = ParamStore::new();
    let mut r1 = Tensor::zeros([2, 1, 1]);
    r1.data_mut()[0] = 1.0;
    let mut r2 = Tensor::zeros([2, 1, 2, 2]);
    r2.data_mut()[..4].fill(1.0);
    let w = scf(&mut store, "g", r1, r2);
    let mask = make_mode_mask(8, 8, 2, 2, ModeVariant::High).unwrap();
    let x = Tensor::from_fn([1, 8, 8], |i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { -1.0 });
    let tape = Tape::<f64>::new();
    let b = store.bind(&tape);
    let y = ghif_forward(&b, tape.constant(x.clone()), &w, &mask).unwrap();
    assert!(y.value().max_abs_diff(&x) < 1e-12);
}

#[test]
fn lhif_with_one_patch_equals_full_spectrum_global_layer() {
    for case in 0..10u64 {
        let mut store = ParamStore::new();
        let (ci, co, n) = (2 + case as usize % 2, 3, if case < 5 { 8 } else { 16 });
        let w = SpectralParams::new(&mut store, "w", ci, co, n, n, true, &mut rng(case)).unwrap();
        let tape = Tape::<f64>::new();
        let b = store.bind(&tape);
        let x = tape.constant(rand_t(&[ci, n, n], 100 + case));
        let local = lhif_forward(&b, x, &w, n).unwrap();
        let global = ghif_forward(&b, x, &w, &ModeMask::full(n, n)).unwrap();
        let err = local.value().max_abs_diff(&global.value());
        assert!(err < 1e-10, "case {case}: {err}");
    }
}

#[test]
fn lhif_commutes_with_whole_patch_shifts() {
    let mut store = ParamStore::new();
    let w = SpectralParams::new(&mut store, "w", 2, 2, 4, 4, true, &mut rng(3)).unwrap();
    let x = rand_t(&[2, 8, 8], 4);
    // circular shift by one patch along the width
    let shift = |t: &Tensor<f64>| Tensor::from_fn([2, 8, 8], |i| {
        let (c, r, col) = (i / 64, (i / 8) % 8, i % 8);
        t.data()[c * 64 + r * 8 + (col + 4) % 8]
    });
    let tape = Tape::<f64>::new();
    let b = store.bind(&tape);
    let y = lhif_forward(&b, tape.constant(x.clone()), &w, 4).unwrap();
    let ys = lhif_forward(&b, tape.constant(shift(&x)), &w, 4).unwrap();
    assert!(ys.value().max_abs_diff(&shift(&y.value())) < 1e-12);
}

#[test]
fn galerkin_attention_is_permutation_equivariant() {
    let mut store = ParamStore::new();
    let ga = GalerkinAttention::new(&mut store, "ga", 8, 2, &mut rng(5)).unwrap();
    let x = rand_t(&[20, 8], 6);
    let tape = Tape::<f64>::new();
    let b = store.bind(&tape);
    let y = ga.forward_tokens(&b, tape.constant(x.clone())).unwrap().value();
    let mut r = rng(7);
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut r);
        let permute = |t: &Tensor<f64>| Tensor::from_fn([20, 8], |i| t.data()[perm[i / 8] * 8 + i % 8]);
        let yp = ga.forward_tokens(&b, tape.constant(permute(&x))).unwrap().value();
        assert!(yp.max_abs_diff(&permute(&y)) <= 1e-12);
    }
}

fn linear_oracle(x: &[f64], n: usize, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; n * co];
    for t in 0..n {
        for o in 0..co {
            out[t * co + o] = b.data()[o] + (0..ci).map(|i| w.data()[o * ci + i] * x[t * ci + i]).sum::<f64>();
        }
    }
    out
}

fn group_norm_oracle(x: &mut [f64], n: usize, c: usize, groups: usize, gain: &Tensor<f64>, offset: &Tensor<f64>) {
    let d = c / groups;
    for t in 0..n {
        for g in 0..groups {
            let seg = &mut x[t * c + g * d..t * c + (g + 1) * d];
            let mean = seg.iter().sum::<f64>() / d as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            for (a, v) in seg.iter_mut().enumerate() {
                *v = (*v - mean) / (var + 1e-5).sqrt() * gain.data()[g * d + a] + offset.data()[g * d + a];
            }
        }
    }
}

#[test]
fn galerkin_attention_matches_loop_oracle() {
    let mut store = ParamStore::new();
    let ga = GalerkinAttention::new(&mut store, "ga", 4, 2, &mut rng(8)).unwrap();
    for (i, name) in ["ga.q.bias", "ga.k.bias", "ga.v.bias", "ga.out.bias", "ga.ln_k.gain", "ga.ln_v.offset"].iter().enumerate() {
        let id = store.id_of(name).unwrap();
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, rand_t(&shape, 20 + i as u64)).unwrap();
    }
    let (n, c, heads) = (6, 4, 2);
    let x = rand_t(&[n, c], 9);
    let p = |s: &str| value(&store, s);
    let q = linear_oracle(x.data(), n, &p("ga.q.weight"), &p("ga.q.bias"));
    let mut k = linear_oracle(x.data(), n, &p("ga.k.weight"), &p("ga.k.bias"));
    let mut v = linear_oracle(x.data(), n, &p("ga.v.weight"), &p("ga.v.bias"));
    group_norm_oracle(&mut k, n, c, heads, &p("ga.ln_k.gain"), &p("ga.ln_k.offset"));
    group_norm_oracle(&mut v, n, c, heads, &p("ga.ln_v.gain"), &p("ga.ln_v.offset"));
    let d = c / heads;
    let mut mixed = vec![0.0; n * c];
    for h in 0..heads {
        for t in 0..n {
            for bcol in 0..d {
                let mut acc = 0.0;
                for a in 0..d {
                    let kv: f64 = (0..n).map(|s| k[s * c + h * d + a] * v[s * c + h * d + bcol]).sum();
                    acc += q[t * c + h * d + a] * kv / n as f64;
                }
                mixed[t * c + h * d + bcol] = acc;
            }
        }
    }
    let proj = linear_oracle(&mixed, n, &p("ga.out.weight"), &p("ga.out.bias"));
    let want = Tensor::new([n, c], x.data().iter().zip(&proj).map(|(a, b)| a + b).collect()).unwrap();
    let tape = Tape::<f64>::new();
    let b = store.bind(&tape);
    let got = ga.forward_tokens(&b, tape.constant(x)).unwrap().value();
    assert!(got.max_abs_diff(&want) < 1e-12);
}

fn block_config(enable_lhif: bool, factorized: bool) -> HiLocFfnoConfig {
    HiLocFfnoConfig {
        c_in: 4,
        c_out: 4,
        modes1: 2,
        modes2: 2,
        patch: 4,
        heads: 2,
        enable_lhif,
        factorized,
    }
}

#[test]
fn hilocffno_block_gradients_match_finite_differences() {
    for factorized in [true, false] {
        let mut store = ParamStore::new();
        let block = HiLocFfno::new(&mut store, "blk", &block_config(true, factorized), (8, 8), &mut rng(10)).unwrap();
        let weights = rand_t(&[4, 8, 8], 11);
        let err = check_gradients(
            |v| {
                let tape = v[0].tape();
                let b = store.bind_frozen(tape);
                block.forward(&b, v[0])?.dot_const(&weights)
            },
            &[rand_t(&[4, 8, 8], 12)],
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "factorized={factorized}: {err}");
    }
}

#[test]
fn hilocffno_parameter_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let block = HiLocFfno::new(&mut store, "blk", &block_config(true, true), (8, 8), &mut rng(13)).unwrap();
    let x = rand_t(&[4, 8, 8], 14);
    let weights = rand_t(&[4, 8, 8], 15);
    let values = store.values();
    let err = check_gradients(
        |v| {
            let b = freqct::params::Bound::from_vars(v.to_vec());
            block.forward(&b, v[0].tape().constant(x.clone()))?.dot_const(&weights)
        },
        &values,
        Some(12),
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn disabling_lhif_removes_its_weights() {
    let mut on = ParamStore::<f64>::new();
    let mut off = ParamStore::<f64>::new();
    HiLocFfno::new(&mut on, "b", &block_config(true, true), (8, 8), &mut rng(1)).unwrap();
    HiLocFfno::new(&mut off, "b", &block_config(false, true), (8, 8), &mut rng(1)).unwrap();
    assert_eq!(on.count() - off.count(), 2 * (4 * 4 + 4 * 4 * 4));
}

#[test]
fn frequency_encoder_stage_shapes() {
    let mut store = ParamStore::<f64>::new();
    let enc = FreqEncoder::new(&mut store, "f", 1, &[4, 8], &[(16, 16), (8, 8)], (4, 4), 8, 2, true, true, &mut rng(2)).unwrap();
    let tape = Tape::new();
    let b = store.bind(&tape);
    let out = enc.forward(&b, tape.constant(rand_t(&[1, 16, 16], 3))).unwrap();
    assert_eq!(out.iter().map(|v| v.shape()).collect::<Vec<_>>(), vec![vec![4, 16, 16], vec![8, 8, 8]]);
    // modes and patch clamp to the stage size
    let enc = FreqEncoder::new(&mut store, "g", 1, &[4, 8], &[(8, 8), (4, 4)], (4, 4), 8, 2, true, true, &mut rng(2)).unwrap();
    assert_eq!(enc.stages[1].mask.modes(), (2, 2));
    assert_eq!(enc.stages[1].lhif.as_ref().unwrap().1, 4);
}

#[test]
fn spatial_encoder_and_decoder_shapes() {
    let mut store = ParamStore::<f64>::new();
    let enc = SpatialEncoder::new(&mut store, "s", 1, &[4, 8, 16], &mut rng(4)).unwrap();
    let dec = FeatureDecoder::new(&mut store, "d", &[4, 8, 16], 6, &mut rng(5)).unwrap();
    let tape = Tape::new();
    let b = store.bind(&tape);
    let s = enc.forward(&b, tape.constant(rand_t(&[1, 16, 16], 6))).unwrap();
    assert_eq!(s.iter().map(|v| v.shape()).collect::<Vec<_>>(), vec![vec![4, 16, 16], vec![8, 8, 8], vec![16, 4, 4]]);
    assert_eq!(dec.forward(&b, &s).unwrap().shape(), vec![6, 16, 16]);
    // zero input with zero biases stays zero
    let z = enc.forward(&b, tape.constant(Tensor::zeros([1, 16, 16]))).unwrap();
    assert!(z.iter().all(|v| v.value().data().iter().all(|&x| x == 0.0)));
    assert!(dec.forward(&b, &s[..2]).is_err());
}

#[test]
fn spatial_path_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let enc = SpatialEncoder::new(&mut store, "s", 1, &[2, 4], &mut rng(7)).unwrap();
    let dec = FeatureDecoder::new(&mut store, "d", &[2, 4], 3, &mut rng(8)).unwrap();
    let weights = rand_t(&[3, 8, 8], 9);
    let err = check_gradients(
        |v| {
            let b = store.bind_frozen(v[0].tape());
            let s = enc.forward(&b, v[0])?;
            dec.forward(&b, &s)?.dot_const(&weights)
        },
        &[rand_t(&[1, 8, 8], 10)],
        None,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn fusion(variant: FusionVariant, roles: QkvRoles, seed: u64) -> (ParamStore<f64>, CaffFusion) {
    let mut store = ParamStore::new();
    let f = CaffFusion::new(&mut store, "fu", 4, 2, variant, roles, &mut rng(seed)).unwrap();
    let biases: Vec<usize> = store.iter().enumerate().filter(|(_, p)| p.name.ends_with(".bias")).map(|(i, _)| i).collect();
    for (n, i) in biases.into_iter().enumerate() {
        let shape = store.value(ParamId(i)).shape().to_vec();
        store.set_value(ParamId(i), rand_t(&shape, 40 + n as u64)).unwrap();
    }
    (store, f)
}

fn conv_of(store: &ParamStore<f64>, name: &str, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let w = tape.constant(value(store, &format!("{name}.weight")));
    let b = tape.constant(value(store, &format!("{name}.bias")));
    let pad = store.value(store.id_of(&format!("{name}.weight")).unwrap()).shape()[2] / 2;
    (*tape.constant(x.clone()).conv2d(w, Some(b), pad).unwrap().value()).clone()
}

#[test]
fn caff_with_zeroed_attention_reduces_to_the_query_conv() {
    let s = rand_t(&[4, 8, 8], 1);
    let f = rand_t(&[4, 8, 8], 2);
    for (variant, prefixes) in [(FusionVariant::Caff, vec!["fu.ca_re", "fu.ca_im"]), (FusionVariant::SpatialCa, vec!["fu.ca"])] {
        for (roles, conv, input) in [(QkvRoles::SpatialQuery, "fu.conv_s", &s), (QkvRoles::FrequencyQuery, "fu.conv_f", &f)] {
            let (mut store, fu) = fusion(variant, roles, 3);
            for p in &prefixes {
                zero_prefix(&mut store, &format!("{p}."));
            }
            let tape = Tape::new();
            let b = store.bind(&tape);
            let got = fu.forward(&b, tape.constant(s.clone()), tape.constant(f.clone())).unwrap().value();
            let want = conv_of(&store, conv, input);
            let err = got.max_abs_diff(&want);
            assert!(err < 1e-10, "{variant:?} {roles:?}: {err}");
        }
    }
}

fn value_or_zero(store: &ParamStore<f64>, name: &str, len: usize) -> Tensor<f64> {
    store.id_of(name).map(|id| store.value(id).clone()).unwrap_or_else(|| Tensor::zeros(vec![len]))
}

fn softmax_ca_oracle(store: &ParamStore<f64>, name: &str, heads: usize, kv: &[f64], q: &[f64], n: usize, c: usize) -> Vec<f64> {
    let p = |s: &str| if s.ends_with("bias") { value_or_zero(store, &format!("{name}.{s}"), c) } else { value(store, &format!("{name}.{s}")) };
    let qt = linear_oracle(q, n, &p("q.weight"), &p("q.bias"));
    let kt = linear_oracle(kv, n, &p("k.weight"), &p("k.bias"));
    let vt = linear_oracle(kv, n, &p("v.weight"), &p("v.bias"));
    let d = c / heads;
    let mut mixed = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|a| qt[i * c + h * d + a] * kt[j * c + h * d + a]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for a in 0..d {
                mixed[i * c + h * d + a] = (0..n).map(|j| e[j] / z * vt[j * c + h * d + a]).sum();
            }
        }
    }
    linear_oracle(&mixed, n, &p("out.weight"), &p("out.bias"))
}

fn tokens(x: &Tensor<f64>) -> Vec<f64> {
    let [c, h, w] = x.shape()[..] else { panic!() };
    (0..h * w * c).map(|i| x.data()[(i % c) * h * w + i / c]).collect()
}

fn untokens(t: &[f64], c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn([c, h, w], |i| t[(i % (h * w)) * c + i / (h * w)])
}

#[test]
fn caff_matches_straight_line_reference() {
    let (c, h, w) = (4, 4, 4);
    let s = rand_t(&[c, h, w], 11);
    let f = rand_t(&[c, h, w], 12);
    let (store, fu) = fusion(FusionVariant::Caff, QkvRoles::SpatialQuery, 13);
    let cs = conv_of(&store, "fu.conv_s", &s);
    let cf = conv_of(&store, "fu.conv_f", &f);
    let norm = ((h * w) as f64).sqrt();
    let zs = fft2(&cs).unwrap();
    let zf = fft2(&cf).unwrap();
    let mix = |name: &str, mem: &Tensor<f64>, query: &Tensor<f64>| -> Tensor<f64> {
        let m = mem.map(|v| v / norm);
        let q = query.map(|v| v / norm);
        let ca = softmax_ca_oracle(&store, name, 2, &tokens(&m), &tokens(&q), h * w, c);
        let ca = untokens(&ca, c, h, w);
        Tensor::new([c, h, w], q.data().iter().zip(ca.data()).map(|(a, b)| a + b).collect()).unwrap()
    };
    let re = mix("fu.ca_re", &zf.re, &zs.re);
    let im = mix("fu.ca_im", &zf.im, &zs.im);
    let back = ifft2(&ComplexSpectrum::new(re, im, (h, w)).unwrap()).unwrap().map(|v| v * norm);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let got = fu.forward(&b, tape.constant(s), tape.constant(f)).unwrap().value();
    let err = got.max_abs_diff(&back);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn cross_attention_single_token_returns_projected_value() {
    let mut store = ParamStore::new();
    let ca = CrossAttention::new(&mut store, "ca", 4, 2, &mut rng(20)).unwrap();
    let kv = rand_t(&[4, 1, 1], 21);
    let q = rand_t(&[4, 1, 1], 22);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let got = ca.forward(&b, tape.constant(kv.clone()), tape.constant(kv.clone()), tape.constant(q)).unwrap().value();
    let p = |s: &str| value(&store, &format!("ca.{s}"));
    assert!(store.id_of("ca.k.bias").is_none());
    let v = linear_oracle(kv.data(), 1, &p("v.weight"), &p("v.bias"));
    let want = linear_oracle(&v, 1, &p("out.weight"), &p("out.bias"));
    assert!(got.max_abs_diff(&Tensor::new([4, 1, 1], want).unwrap()) < 1e-12);
}

#[test]
fn add_and_concat_fusion_oracles() {
    let s = rand_t(&[4, 4, 4], 30);
    let f = rand_t(&[4, 4, 4], 31);
    let (store, fu) = fusion(FusionVariant::Add, QkvRoles::SpatialQuery, 32);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let got = fu.forward(&b, tape.constant(s.clone()), tape.constant(f.clone())).unwrap().value();
    let (cs, cf) = (conv_of(&store, "fu.conv_s", &s), conv_of(&store, "fu.conv_f", &f));
    let want = Tensor::new([4, 4, 4], cs.data().iter().zip(cf.data()).map(|(a, b)| a + b).collect()).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-12);

    let (store, fu) = fusion(FusionVariant::Concat, QkvRoles::SpatialQuery, 33);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let got = fu.forward(&b, tape.constant(s.clone()), tape.constant(f.clone())).unwrap().value();
    let (cs, cf) = (conv_of(&store, "fu.conv_s", &s), conv_of(&store, "fu.conv_f", &f));
    let both = Tensor::new([8, 4, 4], cs.data().iter().chain(cf.data()).copied().collect()).unwrap();
    let want = conv_of(&store, "fu.proj", &both);
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn fusion_gradients_match_finite_differences() {
    for variant in [FusionVariant::Caff, FusionVariant::SpatialCa, FusionVariant::Add, FusionVariant::Concat] {
        for roles in [QkvRoles::SpatialQuery, QkvRoles::FrequencyQuery] {
            let (store, fu) = fusion(variant, roles, 50);
            let weights = rand_t(&[4, 4, 4], 51);
            let err = check_gradients(
                |v| {
                    let b = store.bind_frozen(v[0].tape());
                    fu.forward(&b, v[0], v[1])?.dot_const(&weights)
                },
                &[rand_t(&[4, 4, 4], 52), rand_t(&[4, 4, 4], 53)],
                None,
            )
            .unwrap();
            assert!(err < 1e-4, "{variant:?} {roles:?}: {err}");
        }
    }
}

#[test]
fn fusion_rejects_mismatched_levels() {
    let (store, fu) = fusion(FusionVariant::Caff, QkvRoles::SpatialQuery, 60);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let err = fu.forward(&b, tape.constant(rand_t(&[4, 4, 4], 1)), tape.constant(rand_t(&[4, 2, 2], 2))).unwrap_err();
    assert!(err.to_string().contains("differs"), "{err}");
}
