use proptest::prelude::*;
use sctnet::model::blocks::{cross_frame_forward, spatial_forward};
use sctnet::model::tokens::take_cols;
use sctnet::model::{ModelConfig, ModelWeights, NetworkInput, Sctnet};
use sctnet::tensor::Tensor;

fn tokens(n: usize, c: usize, seed: u64) -> Tensor<f64> {
    let s = seed as f64 * 0.61 + 0.3;
    Tensor::from_fn([n, c], |i| ((i as f64 + 1.0) * s).sin() * 0.8)
}

fn zero(w: &mut ModelWeights<f64>, names: &[&str]) {
    for n in names {
        let t = w.get_mut(n).unwrap();
        *t = Tensor::zeros(t.shape());
    }
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn spatial_block_with_zero_branches_is_identity() {
    let cfg = ModelConfig::desk();
    let mut w = ModelWeights::<f32>::init(&cfg, 3).unwrap().cast::<f64>();
    zero(
        &mut w,
        &[
            "layers.0.gsab.qkv.weight",
            "layers.0.gsab.qkv.bias",
            "layers.0.gsab.proj.weight",
            "layers.0.gsab.proj.bias",
            "layers.0.gsab.fc2.weight",
            "layers.0.gsab.fc2.bias",
        ],
    );
    let z = tokens(6 * 7, cfg.embed_dim, 1);
    let (out, _) = spatial_forward(&cfg, &w, 0, &z, 6, 7).unwrap();
    assert_eq!(out, z);
}

#[test]
fn spatial_block_is_equivariant_within_a_window() {
    let cfg = ModelConfig::desk();
    let w = ModelWeights::<f32>::init(&cfg, 5).unwrap().cast::<f64>();
    let (h, wd) = (8, 8);
    let c = cfg.embed_dim;
    let z = tokens(h * wd, c, 2);
    // Reverse the pixel order inside the top-left 4×4 window.
    let window: Vec<usize> = (0..4).flat_map(|y| (0..4).map(move |x| y * wd + x)).collect();
    let mut perm: Vec<usize> = (0..h * wd).collect();
    for (a, b) in window.iter().zip(window.iter().rev()) {
        perm[*a] = *b;
    }
    let permute = |t: &Tensor<f64>| {
        Tensor::from_fn([h * wd, c], |i| t.data()[perm[i / c] * c + i % c])
    };
    let (out, _) = spatial_forward(&cfg, &w, 0, &z, h, wd).unwrap();
    let (out_p, _) = spatial_forward(&cfg, &w, 0, &permute(&z), h, wd).unwrap();
    // perm is an involution, so applying it again inverts it.
    assert!(close(&permute(&out_p), &out, 1e-12));
}

#[test]
fn tied_cross_weights_give_matching_pairs() {
    let cfg = ModelConfig::desk();
    let mut w = ModelWeights::<f32>::init(&cfg, 8).unwrap().cast::<f64>();
    for part in ["q", "k", "v", "proj"] {
        for kind in ["weight", "bias"] {
            let src = w.get(&format!("layers.0.scab.cross1.{part}.{kind}")).unwrap().clone();
            let src = src.map(|x| x + 0.05);
            *w.get_mut(&format!("layers.0.scab.cross1.{part}.{kind}")).unwrap() = src.clone();
            *w.get_mut(&format!("layers.0.scab.cross3.{part}.{kind}")).unwrap() = src;
        }
    }
    let g = cfg.group_dim();
    let n = 20;
    let a = tokens(n, g, 4);
    let b = tokens(n, g, 9);
    let z = Tensor::from_fn([n, 3 * g], |i| {
        let (r, col) = (i / (3 * g), i % (3 * g));
        if col / g == 1 { b.data()[r * g + col % g] } else { a.data()[r * g + col % g] }
    });
    let f1 = tokens(n, g, 11);
    let f2 = tokens(n, g, 12);
    let (_, cache) = cross_frame_forward(&cfg, &w, 0, &z, [&f1, &f2, &f1]).unwrap();
    let m = cache.merged();
    let (z12, z32) = (take_cols(m, 0, g), take_cols(m, 2 * g, g));
    assert!(z12.max_abs() > 1e-3);
    assert!(close(&z12, &z32, 1e-12));
}

#[test]
fn zero_value_projection_passes_only_the_reference_group() {
    let cfg = ModelConfig::desk();
    let mut w = ModelWeights::<f32>::init(&cfg, 13).unwrap().cast::<f64>();
    for pair in ["cross1", "cross3"] {
        for kind in ["weight", "bias"] {
            zero(&mut w, &[&format!("layers.0.scab.{pair}.v.{kind}"), &format!("layers.0.scab.{pair}.proj.bias")]);
        }
    }
    let g = cfg.group_dim();
    let n = 12;
    let z = tokens(n, 3 * g, 6);
    let f = [tokens(n, g, 1), tokens(n, g, 2), tokens(n, g, 3)];
    let (_, cache) = cross_frame_forward(&cfg, &w, 0, &z, [&f[0], &f[1], &f[2]]).unwrap();
    let m = cache.merged();
    assert_eq!(take_cols(m, 0, g).max_abs(), 0.0);
    assert_eq!(take_cols(m, 2 * g, g).max_abs(), 0.0);
    assert_eq!(take_cols(m, g, g), take_cols(&z, g, g));
}

#[test]
fn shallow_branch_with_zero_weights_returns_bias_maps() {
    let cfg = ModelConfig::toy();
    let mut w = ModelWeights::<f32>::init(&cfg, 1).unwrap().cast::<f64>();
    let g = cfg.group_dim();
    for i in 0..3 {
        zero(&mut w, &[&format!("shallow.{i}.weight")]);
        *w.get_mut(&format!("shallow.{i}.bias")).unwrap() = Tensor::from_fn([g], |c| (i * 10 + c) as f64);
    }
    let net = Sctnet::new(&cfg, &w).unwrap();
    let frames = std::array::from_fn(|k| Tensor::full([6, 5, 4], 0.1 * k as f64 + 0.2));
    let f = net.shallow_extract(&NetworkInput::new(frames).unwrap()).unwrap();
    for (i, fi) in f.iter().enumerate() {
        assert_eq!(fi.shape(), &[g, 5, 4]);
        for (p, v) in fi.data().iter().enumerate() {
            assert_eq!(*v, (i * 10 + p / 20) as f64);
        }
    }
}

#[test]
fn mismatched_weights_name_the_parameter() {
    let cfg = ModelConfig::desk();
    let mut w = ModelWeights::<f32>::init(&cfg, 0).unwrap();
    *w.get_mut("layers.1.scab.fuse.weight").unwrap() = Tensor::zeros([3, 3]);
    let err = Sctnet::new(&cfg, &w).err().unwrap().to_string();
    assert!(err.contains("layers.1.scab.fuse.weight"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn prediction_keeps_size_and_range(h in 3usize..11, wd in 3usize..11, seed in 0u64..1000) {
        let cfg = ModelConfig::toy();
        let w = ModelWeights::<f32>::init(&cfg, seed).unwrap();
        let net = Sctnet::new(&cfg, &w).unwrap();
        let frames = std::array::from_fn(|k| {
            Tensor::from_fn([6, h, wd], |i| ((i * (k + 3)) as f32 * 0.13 + seed as f32).sin().abs())
        });
        let y = net.forward(&NetworkInput::new(frames).unwrap()).unwrap();
        prop_assert_eq!(y.shape(), &[3, h, wd]);
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let cfg = ModelConfig::toy();
        let w = ModelWeights::<f32>::init(&cfg, seed).unwrap();
        let net = Sctnet::new(&cfg, &w).unwrap();
        let frames = std::array::from_fn(|k| Tensor::full([6, 6, 6], 0.3 + 0.1 * k as f32));
        let input = NetworkInput::new(frames).unwrap();
        prop_assert_eq!(net.forward(&input).unwrap(), net.forward(&input).unwrap());
    }
}
