//! Acceptance suite: one PASS/FAIL line per criterion, then a non-zero exit
//! if any failed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use sctnet::data::synth::{make_sample, synthesize_scene, SyntheticSceneSpec};
use sctnet::data::{build_dataset, read_pfm, write_pfm, DatasetConfig, Light, Motion, Sample};
use sctnet::gradcheck::full_suite;
use sctnet::hdrmath::{
    blend, debevec_merge, gamma_project, mu_law_value, theoretical_max, triangle_weights, HdrImage, LdrImage, GAMMA,
    MU,
};
use sctnet::loss::FeatureExtractor;
use sctnet::metrics::{evaluate, psnr, pu_domain, ssim, ssim_naive, DisplayModel, Domain};
use sctnet::model::blocks::channel_attention;
use sctnet::model::macs::count_macs;
use sctnet::model::{ModelConfig, ModelWeights, NetworkInput, Sctnet};
use sctnet::tensor::{counter, Tensor};
use sctnet::train::augment::Dihedral;
use sctnet::train::{make_patches, train_loop, AdamConfig, TrainConfig, TrainOutput};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random(r: &mut Xoshiro256PlusPlus, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(lo..hi))
}

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let report = full_suite(&ModelConfig::desk(), &[1, 2, 3]).map_err(|e| e.to_string())?;
    let dt = t0.elapsed();
    let worst = report.worst();
    let failures: Vec<_> = report.failures(GRAD_TOL).map(|r| r.name.clone()).collect();
    check(
        failures.is_empty() && dt < GRAD_BUDGET,
        format!("{} checks over seeds 1..=3, worst rel err {worst:.2e} ≤ {GRAD_TOL:e}, {:.1}s", report.results.len(), dt.as_secs_f64()),
        format!("worst {worst:.2e}, {:.1}s, failing: {failures:?}", dt.as_secs_f64()),
    )
}

const ORACLE_TOL: f64 = 1e-6;

fn equation_oracles() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;

    // Gamma projection against a per-pixel oracle.
    let px = random(&mut r, &[3, 3, 4], 0.0, 1.0);
    let t = 0.25;
    let ldr = LdrImage::new(px.clone(), t, -2.0).map_err(|e| e.to_string())?;
    let h = gamma_project(&ldr, GAMMA);
    for (a, l) in h.pixels().data().iter().zip(px.data()) {
        let want = (*l as f64).powf(2.2) / t;
        worst = worst.max((*a as f64 - want).abs() / want.max(1.0));
    }

    // Tone curve endpoints, exactly.
    if mu_law_value(0.0, MU) != 0.0 || mu_law_value(1.0, MU) != 1.0 {
        return Err("mu-law endpoints are not exact".into());
    }

    // Blend stays in the per-pixel convex hull of its inputs.
    let refimg = LdrImage::new(random(&mut r, &[3, 4, 5], 0.0, 1.0), 1.0, 0.0).map_err(|e| e.to_string())?;
    let ins: Vec<HdrImage> = (0..3).map(|_| HdrImage::new(random(&mut r, &[3, 4, 5], 0.0, 4.0)).unwrap()).collect();
    let wts = triangle_weights(&refimg);
    let out = blend([&ins[0], &ins[1], &ins[2]], wts.as_array()).map_err(|e| e.to_string())?;
    for i in 0..out.pixels().len() {
        let vals: Vec<f64> = ins.iter().map(|h| h.pixels().data()[i] as f64).collect();
        let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        let o = out.pixels().data()[i] as f64;
        if o < lo - ORACLE_TOL || o > hi + ORACLE_TOL {
            return Err(format!("blend leaves the hull at {i}: {o} not in [{lo}, {hi}]"));
        }
    }

    // Channel attention on G = 2 channels, N = 4 tokens, against a
    // brute-force softmax(qᵀk/√d) applied to v.
    let (g, n) = (2usize, 4usize);
    let q = Tensor::<f64>::from_fn([n, g], |_| r.gen_range(-1.0..1.0));
    let k = Tensor::<f64>::from_fn([n, g], |_| r.gen_range(-1.0..1.0));
    let v = Tensor::<f64>::from_fn([n, g], |_| r.gen_range(-1.0..1.0));
    let (got, _) = channel_attention(&q, &k, &v, 1).map_err(|e| e.to_string())?;
    let at = |t: &Tensor<f64>, row: usize, col: usize| t.data()[row * g + col];
    for i in 0..g {
        let scores: Vec<f64> = (0..g)
            .map(|j| (0..n).map(|m| at(&q, m, i) * at(&k, m, j)).sum::<f64>() / (g as f64).sqrt())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for m in 0..n {
            let want: f64 = (0..g).map(|j| scores[j].exp() / z * at(&v, m, j)).sum();
            worst = worst.max((at(&got, m, i) - want).abs());
        }
    }
    check(
        worst <= ORACLE_TOL,
        format!("gamma projection, tone-curve endpoints, blend hull and channel attention match; worst {worst:.2e}"),
        format!("worst deviation {worst:.2e} > {ORACLE_TOL:e}"),
    )
}

fn cost_model() -> Outcome {
    let cfg = ModelConfig::desk();
    let g = cfg.embed_dim / 3;
    let mut worst = Vec::new();
    for n in [16usize, 64, 100] {
        let q = Tensor::<f32>::from_fn([n, g], |i| (i as f32 * 0.31).sin());
        let (_, used) = counter::measure(|| channel_attention(&q, &q, &q, 1).unwrap());
        let analytic = (g * g * n * 2) as u64;
        if used != analytic {
            worst.push(format!("N={n}: counted {used}, analytic {analytic}"));
        }
    }
    let (h, w) = (8, 8);
    let report = count_macs(&cfg, h, w).map_err(|e| e.to_string())?;
    let c = cfg.embed_dim as u64;
    let n = report.tokens as u64;
    if report.closed_form_per_application() != c * c * n / 9 {
        worst.push("closed form is not C²N/9".into());
    }
    if report.cmca.score_and_value() != 2 * report.closed_form_per_application() {
        worst.push("score + value is not twice the closed form".into());
    }
    let text = report.to_string();
    for needle in ["C^2 x N / 9", "= 2 x", "= 4 x"] {
        if !text.contains(needle) {
            worst.push(format!("report lacks `{needle}`"));
        }
    }
    let weights = ModelWeights::<f32>::init(&cfg, 1).map_err(|e| e.to_string())?;
    let net = Sctnet::new(&cfg, &weights).map_err(|e| e.to_string())?;
    let input = NetworkInput::new(std::array::from_fn(|i| Tensor::full([6, h, w], 0.2 + 0.3 * i as f32)))
        .map_err(|e| e.to_string())?;
    let (_, used) = counter::measure(|| net.forward(&input).unwrap());
    if used != report.total() {
        worst.push(format!("whole forward counted {used}, analytic {}", report.total()));
    }
    check(
        worst.is_empty(),
        format!(
            "C-MCA (C/3)²·N·2 exact for N ∈ {{16, 64, 100}}; C²N/9 = {} per score product reconciled; forward total {} exact",
            report.closed_form_per_application(),
            report.total()
        ),
        worst.join("; "),
    )
}

const OVERFIT_REDUCTION: f64 = 0.90;
const OVERFIT_MU_PSNR: f64 = 30.0;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);

fn overfit() -> Outcome {
    let dc = DatasetConfig { height: 64, width: 64, seed: 1, ..Default::default() };
    let (manifest, bracket, gt) = make_sample(&dc, 0, Motion::Local, Light::Day).map_err(|e| e.to_string())?;
    let sample = Sample { manifest, bracket, gt };
    let mcfg = ModelConfig::desk();
    let tcfg = TrainConfig {
        adam: AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        patch: 64,
        stride: 64,
        steps: 200,
        augment: false,
        ..Default::default()
    };
    let phi = FeatureExtractor::seeded(tcfg.feature_seed);
    let t0 = Instant::now();
    let out = train_loop(std::slice::from_ref(&sample), &mcfg, &tcfg, &phi, None, &TrainOutput::default())
        .map_err(|e| e.to_string())?;
    let dt = t0.elapsed();
    let (first, last) = (out.trace[0].loss, out.trace.last().unwrap().loss);
    let reduction = 1.0 - last / first;
    let pred = Sctnet::new(&mcfg, &out.weights)
        .and_then(|n| n.predict(&sample.bracket))
        .map_err(|e| e.to_string())?;
    let mu = |x: &HdrImage| x.pixels().map(|v| mu_law_value(v as f64, MU) as f32);
    let p = psnr(&mu(&pred), &mu(&sample.gt), 1.0).map_err(|e| e.to_string())?;
    check(
        reduction >= OVERFIT_REDUCTION && p >= OVERFIT_MU_PSNR && dt < OVERFIT_BUDGET,
        format!(
            "loss {first:.4} → {last:.4} ({:.1}% reduction), μ-PSNR {p:.2} dB, {:.0}s",
            100.0 * reduction,
            dt.as_secs_f64()
        ),
        format!(
            "reduction {:.1}% (need ≥ 90%), μ-PSNR {p:.2} dB (need ≥ 30), {:.0}s",
            100.0 * reduction,
            dt.as_secs_f64()
        ),
    )
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn data_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(5);
    let mut img = random(&mut r, &[3, 7, 9], 0.0, 1000.0);
    img.data_mut()[0] = 0.0;
    img.data_mut()[1] = f32::MIN_POSITIVE;
    img.data_mut()[2] = 3.0e38;
    let p = dir.path().join("x.pfm");
    write_pfm(&p, &img).map_err(|e| e.to_string())?;
    let back = read_pfm(&p).map_err(|e| e.to_string())?;
    let lossless = back.shape() == img.shape()
        && back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !lossless {
        return Err("PFM round trip changed bits".into());
    }

    let step = 1.0 / 65535.0;
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let spec = SyntheticSceneSpec::random(seed, 32, 40, Motion::Static, Light::Day);
        let scene = synthesize_scene(&spec).map_err(|e| e.to_string())?;
        let stack = &scene.stacks[1];
        let scale = 1.0 / theoretical_max(stack).map_err(|e| e.to_string())?;
        let merged = debevec_merge(stack, GAMMA).map_err(|e| e.to_string())?;
        for (m, e) in merged.pixels().data().iter().zip(scene.radiance[1].pixels().data()) {
            worst = worst.max((*m as f64 - *e as f64).abs() * scale);
        }
    }
    if worst > step {
        return Err(format!("static-scene merge deviates by {worst:.3e} > 1/65535 after normalization"));
    }

    let cfg = DatasetConfig { scenes: 4, height: 24, width: 32, seed: 11, ..Default::default() };
    build_dataset(&cfg, &dir.path().join("a")).map_err(|e| e.to_string())?;
    build_dataset(&cfg, &dir.path().join("b")).map_err(|e| e.to_string())?;
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    check(
        a == b && !a.is_empty(),
        format!(
            "PFM bitwise lossless; static merge within {worst:.2e} ≤ 1/65535; {} dataset files byte-identical",
            a.len()
        ),
        "dataset generation is not byte-reproducible".into(),
    )
}

fn metric_oracles() -> Outcome {
    let mut r = rng(6);
    let a = random(&mut r, &[3, 16, 16], 0.0, 0.9);
    let b = a.map(|v| v + 0.1);
    let p = psnr(&a, &b, 1.0).map_err(|e| e.to_string())?;
    if (p - 20.0).abs() > 1e-3 {
        return Err(format!("PSNR of a 0.1 offset is {p:.6}, not 20.0000 ± 1e-3"));
    }
    let mut ssim_worst: f64 = 0.0;
    for (h, w) in [(11, 11), (16, 20), (23, 13)] {
        let x = random(&mut r, &[3, h, w], 0.0, 1.0);
        let y = x.zip_map(&random(&mut r, &[3, h, w], -0.2, 0.2), |a, n| (a + n).clamp(0.0, 1.0)).unwrap();
        let fast = ssim(&x, &y).map_err(|e| e.to_string())?;
        let slow = ssim_naive(&x, &y).map_err(|e| e.to_string())?;
        ssim_worst = ssim_worst.max((fast - slow).abs());
    }
    if ssim_worst > 1e-6 {
        return Err(format!("SSIM differs from the sliding-window oracle by {ssim_worst:.2e}"));
    }
    let mut xs: Vec<f32> = (0..1000).map(|_| r.gen_range(0.0..1.0f32)).collect();
    xs.sort_by(f32::total_cmp);
    xs.dedup();
    let t = Tensor::new([xs.len()], xs.clone()).unwrap();
    let mu: Vec<f64> = xs.iter().map(|&x| mu_law_value(x as f64, MU)).collect();
    let pu = pu_domain(&t, &DisplayModel::default());
    let pu64: Vec<f64> = xs.iter().map(|&x| sctnet::metrics::pu21::encode(DisplayModel::default().luminance(x as f64))).collect();
    let strictly = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let mono = strictly(&mu) && strictly(&pu64) && pu.data().windows(2).all(|w| w[1] >= w[0]);
    check(
        mono,
        format!(
            "PSNR {p:.4} dB; SSIM vs oracle {ssim_worst:.1e}; μ-law and PU strictly increasing over {} radiances",
            xs.len()
        ),
        "μ-law or PU encoding is not strictly monotone".into(),
    )
}

fn protocol_fidelity() -> Outcome {
    let dc = DatasetConfig { height: 256, width: 256, seed: 3, ..Default::default() };
    let (manifest, bracket, gt) = make_sample(&dc, 0, Motion::Local, Light::Day).map_err(|e| e.to_string())?;
    let patches = make_patches(&Sample { manifest, bracket, gt }, 128, 64).map_err(|e| e.to_string())?;
    if patches.len() != 9 || patches.iter().any(|p| p.padded) {
        return Err(format!("{} patches from 256×256 at 128/64, expected 9 unpadded", patches.len()));
    }
    let all = Dihedral::all();
    let x = Tensor::<f32>::from_fn([2, 3, 5], |i| i as f32);
    for a in all {
        if !all.contains(&a.inverse()) || a.compose(a.inverse()) != Dihedral::IDENTITY {
            return Err(format!("element {} has no inverse in the group", a.index()));
        }
        for b in all {
            let ab = a.compose(b);
            if !all.contains(&ab) {
                return Err("composition leaves the group".into());
            }
            let direct = ab.apply(&x).unwrap();
            let stepwise = a.apply(&b.apply(&x).unwrap()).unwrap();
            if direct != stepwise {
                return Err(format!("apply({}∘{}) differs from applying in turn", a.index(), b.index()));
            }
        }
    }
    let images: std::collections::HashSet<Vec<u32>> =
        all.iter().map(|d| d.apply(&x).unwrap().data().iter().map(|v| v.to_bits()).collect()).collect();
    check(
        images.len() == 8,
        "9 patches from 256×256 at patch 128 / stride 64; augmentation closes over 8 distinct elements".into(),
        format!("only {} distinct augmented images", images.len()),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let cfg = DatasetConfig { scenes: 3, height: 20, width: 24, seed: 21, ..Default::default() };
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let d = root.join(tag);
        build_dataset(&cfg, &d.join("data")).map_err(|e| e.to_string())?;
        let samples = sctnet::data::load_dataset(&d.join("data")).map_err(|e| e.to_string())?;
        let mcfg = ModelConfig::toy();
        let tcfg = TrainConfig { patch: 16, stride: 8, steps: 4, batch: 2, checkpoint_every: 2, seed: 4, ..Default::default() };
        let out = TrainOutput { trace: Some(d.join("loss.txt")), checkpoint: Some(d.join("m.ckpt")) };
        let phi = FeatureExtractor::seeded(0);
        let outcome = train_loop(&samples, &mcfg, &tcfg, &phi, None, &out).map_err(|e| e.to_string())?;
        let net = Sctnet::new(&mcfg, &outcome.weights).map_err(|e| e.to_string())?;
        let mut preds = BTreeMap::new();
        let mut gts = BTreeMap::new();
        for s in &samples {
            preds.insert(s.id().to_string(), net.predict(&s.bracket).map_err(|e| e.to_string())?);
            gts.insert(s.id().to_string(), s.gt.clone());
        }
        let report = evaluate(&preds, &gts, &Domain::ALL, &DisplayModel::default()).map_err(|e| e.to_string())?;
        std::fs::write(d.join("report.txt"), report.to_text() + &report.to_kv()).unwrap();
        runs.push(tree(&d));
    }
    let files = runs[0].len();
    check(
        runs[0] == runs[1] && files > 3 * 6 + 3,
        format!("{files} files (dataset, checkpoints, trace, report) bit-identical across two seeded runs"),
        "seeded runs differ".into(),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("equation oracles", equation_oracles),
        ("cost model", cost_model),
        ("overfit", overfit),
        ("data round trips", data_round_trips),
        ("metric oracles", metric_oracles),
        ("protocol fidelity", protocol_fidelity),
        ("determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS [{}] {name}: {msg} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name}: {msg} ({secs:.1}s)", i + 1)
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
