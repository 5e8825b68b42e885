//! Patch sampling, augmentation and the Adam training loop.

mod adam;
pub mod augment;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use augment::Dihedral;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::hdrmath::{HdrImage, LdrBracket, LdrImage};
use crate::loss::{total_loss_with_grad, FeatureExtractor, LossConfig, ALPHA};
use crate::model::checkpoint::save_model;
use crate::model::{make_input, Gradients, ModelConfig, ModelWeights, Sctnet};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub patch: usize,
    pub stride: usize,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub augment: bool,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub alpha: f64,
    /// Seed of the frozen feature stack used by the perceptual term.
    pub feature_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            patch: 128,
            stride: 64,
            steps: 1000,
            batch: 1,
            seed: 0,
            augment: true,
            checkpoint_every: 0,
            alpha: ALPHA,
            feature_seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 13] = [
        "lr",
        "beta1",
        "beta2",
        "eps",
        "patch",
        "stride",
        "steps",
        "batch",
        "seed",
        "augment",
        "checkpoint_every",
        "alpha",
        "feature_seed",
    ];

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", format!("{:?}", self.adam.lr)),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("eps", format!("{:?}", self.adam.eps)),
            ("patch", self.patch.to_string()),
            ("stride", self.stride.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
            ("augment", self.augment.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("feature_seed", self.feature_seed.to_string()),
        ]
    }

    /// Overrides fields from `pairs`; unknown keys are rejected.
    pub fn apply_pairs<'a>(mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")))
        }
        for (k, v) in pairs {
            match k {
                "lr" => self.adam.lr = num(k, v)?,
                "beta1" => self.adam.beta1 = num(k, v)?,
                "beta2" => self.adam.beta2 = num(k, v)?,
                "eps" => self.adam.eps = num(k, v)?,
                "patch" => self.patch = num(k, v)?,
                "stride" => self.stride = num(k, v)?,
                "steps" => self.steps = num(k, v)?,
                "batch" => self.batch = num(k, v)?,
                "seed" => self.seed = num(k, v)?,
                "augment" => self.augment = num(k, v)?,
                "checkpoint_every" => self.checkpoint_every = num(k, v)?,
                "alpha" => self.alpha = num(k, v)?,
                "feature_seed" => self.feature_seed = num(k, v)?,
                other => return Err(Error::Config(format!("unknown training key `{other}`"))),
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let fail = |m: String| Err(Error::Config(m));
        // lr = 0 is allowed: it freezes the weights, which is useful for
        // measuring the loss of a fixed model through the same pipeline.
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return fail(format!("lr must be ≥ 0, got {}", a.lr));
        }
        for (k, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{k} must lie in [0, 1), got {b}"));
            }
        }
        if !(a.eps > 0.0) {
            return fail(format!("eps must be positive, got {}", a.eps));
        }
        if self.patch == 0 || self.stride == 0 || self.batch == 0 {
            return fail("patch, stride and batch must be ≥ 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be ≥ 0, got {}", self.alpha));
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Start offsets along one axis. Extents shorter than the patch give one
/// start at a negative offset that centres the patch.
pub fn axis_starts(extent: usize, patch: usize, stride: usize) -> Vec<i64> {
    if extent < patch {
        return vec![-(((patch - extent) / 2) as i64)];
    }
    let mut starts: Vec<i64> = (0..=extent - patch).step_by(stride).map(|s| s as i64).collect();
    let last = (extent - patch) as i64;
    if *starts.last().expect("at least one start") != last {
        starts.push(last);
    }
    starts
}

/// `[C, H, W]` crop starting at `(y0, x0)`; out-of-range rows and columns
/// repeat the nearest edge.
pub fn crop(x: &Tensor<f32>, y0: i64, x0: i64, ph: usize, pw: usize) -> Tensor<f32> {
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let d = x.data();
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for oy in 0..ph {
            let sy = (y0 + oy as i64).clamp(0, h as i64 - 1) as usize;
            for ox in 0..pw {
                let sx = (x0 + ox as i64).clamp(0, w as i64 - 1) as usize;
                out.push(d[(ch * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new([c, ph, pw], out).expect("shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub bracket: LdrBracket,
    pub gt: HdrImage,
    /// Top-left corner in the source image; negative when padded.
    pub origin: [i64; 2],
    /// The source was smaller than the patch and edge-padded.
    pub padded: bool,
}

impl Patch {
    fn cut(bracket: &LdrBracket, gt: &HdrImage, origin: [i64; 2], size: usize, padded: bool) -> Result<Self> {
        let [y0, x0] = origin;
        let imgs = bracket.images().each_ref().map(|l| {
            LdrImage::new(crop(l.pixels(), y0, x0, size, size), l.exposure_time(), l.ev())
        });
        let [a, b, c] = imgs;
        Ok(Patch {
            bracket: LdrBracket::new(a?, b?, c?)?,
            gt: HdrImage::new(crop(gt.pixels(), y0, x0, size, size))?,
            origin,
            padded,
        })
    }

    /// The same transform applied to all three exposures and the target.
    pub fn transformed(&self, d: Dihedral) -> Result<Self> {
        let imgs = self.bracket.images().each_ref().map(|l| {
            LdrImage::new(d.apply(l.pixels())?, l.exposure_time(), l.ev())
        });
        let [a, b, c] = imgs;
        Ok(Patch {
            bracket: LdrBracket::new(a?, b?, c?)?,
            gt: HdrImage::new(d.apply(self.gt.pixels())?)?,
            origin: self.origin,
            padded: self.padded,
        })
    }
}

fn grid(h: usize, w: usize, patch: usize, stride: usize) -> (Vec<[i64; 2]>, bool) {
    let ys = axis_starts(h, patch, stride);
    let xs = axis_starts(w, patch, stride);
    let origins = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [y, x])).collect();
    (origins, h < patch || w < patch)
}

/// Every patch of the regular grid, row-major.
pub fn make_patches(sample: &Sample, patch: usize, stride: usize) -> Result<Vec<Patch>> {
    if patch == 0 || stride == 0 {
        return Err(Error::Config("patch and stride must be ≥ 1".into()));
    }
    let (origins, padded) = grid(sample.bracket.height(), sample.bracket.width(), patch, stride);
    origins
        .into_iter()
        .map(|o| Patch::cut(&sample.bracket, &sample.gt, o, patch, padded))
        .collect()
}

/// Applies a random dihedral transform drawn from `rng`.
pub fn augment<R: Rng>(patch: &Patch, rng: &mut R) -> Result<Patch> {
    patch.transformed(Dihedral::sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub lr: f64,
}

impl StepRecord {
    /// `step loss l1 lp lr`.
    pub fn line(&self) -> String {
        format!("{} {} {} {} {}", self.step, self.loss, self.l1, self.perceptual, self.lr)
    }
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub trace: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub weights: ModelWeights<f32>,
    pub state: OptimizerState,
    pub trace: Vec<StepRecord>,
    /// Samples smaller than the patch size.
    pub warnings: Vec<String>,
}

/// Checkpoint path for an intermediate step: `dir/name.step000100.ext`.
pub fn step_checkpoint_path(base: &Path, step: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.step{step:06}.{}", ext.to_string_lossy()),
        None => format!("{stem}.step{step:06}"),
    };
    base.with_file_name(name)
}

fn checkpoint_header(cfg: &TrainConfig, step: usize) -> BTreeMap<String, String> {
    let mut h: BTreeMap<String, String> =
        cfg.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)).collect();
    h.insert("train.completed_steps".into(), step.to_string());
    h
}

/// Loss and gradient of one patch.
pub fn patch_gradient(
    cfg: &ModelConfig,
    weights: &ModelWeights<f32>,
    patch: &Patch,
    phi: &FeatureExtractor<f32>,
    loss: LossConfig,
) -> Result<(crate::loss::LossValue, Gradients<f32>)> {
    let net = Sctnet::new(cfg, weights)?;
    let input = make_input(&patch.bracket, cfg.gamma)?;
    let trace = net.forward_trace(&input)?;
    let (value, d_pred) = total_loss_with_grad(trace.output(), patch.gt.pixels(), phi, loss)?;
    Ok((value, net.backward(&trace, &d_pred)?))
}

/// Runs `cfg.steps` Adam updates from `init` (or a fresh seeded
/// initialization). The recorded loss of each step is the batch mean
/// before that step's update.
pub fn train_loop(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    phi: &FeatureExtractor<f32>,
    init: Option<ModelWeights<f32>>,
    out: &TrainOutput,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut pool = Vec::new();
    let mut warnings = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        let shape = s.bracket.reference().pixels().shape();
        if s.gt.pixels().shape() != shape {
            return Err(Error::Sample {
                sample: s.id().to_string(),
                reason: format!("ground truth {:?} does not match inputs {:?}", s.gt.pixels().shape(), shape),
            });
        }
        let (origins, padded) = grid(s.bracket.height(), s.bracket.width(), cfg.patch, cfg.stride);
        if padded {
            warnings.push(format!(
                "sample `{}` ({}×{}) is smaller than the {} patch and was edge-padded",
                s.id(),
                s.bracket.height(),
                s.bracket.width(),
                cfg.patch
            ));
        }
        pool.extend(origins.into_iter().map(|o| (k, o, padded)));
    }

    let mut weights = match init {
        Some(w) => {
            w.validate(model_cfg)?;
            w
        }
        None => ModelWeights::init(model_cfg, cfg.seed)?,
    };
    let mut state = OptimizerState::new(&weights);
    let mut sampling = rng::stream(cfg.seed, Stream::Sampling);
    let mut augmenting = rng::stream(cfg.seed, Stream::Augment);
    let loss_cfg = LossConfig { alpha: cfg.alpha, ..LossConfig::default() };

    let mut trace_file = match &out.trace {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut grads = weights.zeros_like();
        let (mut loss, mut l1, mut lp) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.batch {
            let (k, origin, padded) = pool[sampling.gen_range(0..pool.len())];
            let s = &samples[k];
            let mut patch = Patch::cut(&s.bracket, &s.gt, origin, cfg.patch, padded)?;
            if cfg.augment {
                patch = augment(&patch, &mut augmenting)?;
            }
            let (value, g) = patch_gradient(model_cfg, &weights, &patch, phi, loss_cfg)
                .map_err(|e| match e {
                    Error::NonFiniteGradient(_) | Error::Sample { .. } => e,
                    other => Error::Sample { sample: s.id().to_string(), reason: other.to_string() },
                })?;
            for (name, t) in g.iter() {
                grads.accumulate(name, t)?;
            }
            loss += value.total;
            l1 += value.l1;
            lp += value.perceptual;
        }
        let inv = 1.0 / cfg.batch as f64;
        grads.scale(inv as f32);
        adam_step(&mut weights, &grads, &mut state, &cfg.adam)?;
        let rec = StepRecord {
            step,
            loss: loss * inv,
            l1: l1 * inv,
            perceptual: lp * inv,
            lr: cfg.adam.lr,
        };
        if let (Some(f), Some(p)) = (trace_file.as_mut(), out.trace.as_ref()) {
            writeln!(f, "{}", rec.line()).map_err(|e| Error::io(p, e))?;
        }
        trace.push(rec);
        if let Some(p) = &out.checkpoint {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
                save_model(&step_checkpoint_path(p, step), model_cfg, &weights, &checkpoint_header(cfg, step))?;
            }
        }
    }
    if let Some(p) = &out.checkpoint {
        save_model(p, model_cfg, &weights, &checkpoint_header(cfg, cfg.steps))?;
    }
    Ok(TrainOutcome {
        weights,
        state,
        trace,
        warnings,
    })
}

/// Reads a loss trace written by [`train_loop`].
pub fn read_trace(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::format(path, format!("line {}: bad number `{s}`", n + 1))))
                .collect::<Result<_>>()?;
            if f.len() != 5 {
                return Err(Error::format(path, format!("line {}: expected 5 fields", n + 1)));
            }
            Ok(StepRecord { step: f[0] as usize, loss: f[1], l1: f[2], perceptual: f[3], lr: f[4] })
        })
        .collect()
}
