//! Training objective: L1 between μ-law tone-mapped images plus a weighted
//! perceptual distance measured on a fixed convolutional feature stack.
//!
//! Norms are means rather than sums, so the perceptual weight keeps the same
//! relative size for any patch size.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hdrmath::{mu_law_derivative, mu_law_value, MU};
use crate::model::checkpoint::Container;
use crate::rng::{self, Stream};
use crate::tensor::{conv2d, conv2d_backward, gelu, gelu_backward, Scalar, Tensor};

pub const ALPHA: f64 = 0.01;

/// Channel widths of the default feature stack, input first.
pub const FEATURE_WIDTHS: [usize; 4] = [3, 8, 16, 16];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mu: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { mu: MU, alpha: ALPHA }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub perceptual: f64,
}

/// Frozen feature stack: stride-2 3×3 convolutions, each followed by GELU,
/// with a tap after every stage. It propagates gradients to its input but
/// never trains.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T: Scalar = f32> {
    stages: Vec<(Tensor<T>, Tensor<T>)>,
}

struct StageCache<T: Scalar> {
    input: Tensor<T>,
    pre: Tensor<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Deterministic weights from `seed` (σ = 1/√fan_in, zero bias).
    pub fn seeded(seed: u64) -> Self {
        let mut r = rng::stream(seed, Stream::Features);
        let stages = FEATURE_WIDTHS
            .windows(2)
            .map(|p| {
                let (c_in, c_out) = (p[0], p[1]);
                let sigma = 1.0 / ((c_in * 9) as f64).sqrt();
                let w = Tensor::from_fn([c_out, c_in, 3, 3], |_| {
                    T::of(rng::truncated_normal(&mut r, sigma))
                });
                (w, Tensor::zeros([c_out]))
            })
            .collect();
        Self { stages }
    }

    /// Builds a stack from `stage.{i}.weight` / `stage.{i}.bias` entries.
    pub fn from_params(params: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let mut stages = Vec::new();
        let mut c_in = 3;
        for i in 0.. {
            let (wn, bn) = (format!("stage.{i}.weight"), format!("stage.{i}.bias"));
            let Some(w) = params.get(&wn) else { break };
            let b = params
                .get(&bn)
                .ok_or_else(|| Error::schema(&bn, "missing"))?;
            if w.rank() != 4 || w.dim(1) != c_in || w.dim(2) != 3 || w.dim(3) != 3 {
                return Err(Error::schema(
                    &wn,
                    format!("shape {:?}, expected [_, {c_in}, 3, 3]", w.shape()),
                ));
            }
            if b.shape() != [w.dim(0)] {
                return Err(Error::schema(&bn, format!("shape {:?}", b.shape())));
            }
            c_in = w.dim(0);
            stages.push((w.clone(), b.clone()));
        }
        if stages.is_empty() {
            return Err(Error::schema("stage.0.weight", "missing"));
        }
        if stages.len() * 2 != params.len() {
            return Err(Error::schema("stage.*", "unexpected extra entries"));
        }
        Ok(Self { stages })
    }

    pub fn to_params(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (i, (w, b)) in self.stages.iter().enumerate() {
            out.insert(format!("stage.{i}.weight"), w.clone());
            out.insert(format!("stage.{i}.bias"), b.clone());
        }
        out
    }

    pub fn taps(&self) -> usize {
        self.stages.len()
    }

    pub fn cast<U: Scalar>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            stages: self.stages.iter().map(|(w, b)| (w.cast(), b.cast())).collect(),
        }
    }

    /// Feature maps after every stage for a `3×H×W` image.
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.forward(x)?.0)
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Vec<StageCache<T>>)> {
        let mut taps = Vec::with_capacity(self.stages.len());
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (w, b) in &self.stages {
            let pre = conv2d(&cur, w, b, 2, 1)?;
            let act = gelu(&pre);
            caches.push(StageCache { input: cur, pre });
            taps.push(act.clone());
            cur = act;
        }
        Ok((taps, caches))
    }

    /// Input gradient given gradients for every tap.
    fn backward(&self, caches: &[StageCache<T>], d_taps: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut carry: Option<Tensor<T>> = None;
        for (j, ((w, _), cache)) in self.stages.iter().zip(caches).enumerate().rev() {
            let mut d_act = d_taps[j].clone();
            if let Some(c) = carry.take() {
                d_act.accumulate(&c)?;
            }
            let d_pre = gelu_backward(&cache.pre, &d_act)?;
            let (dx, _) = conv2d_backward(&cache.input, w, &d_pre, 2, 1, false)?;
            carry = Some(dx);
        }
        Ok(carry.expect("at least one stage"))
    }

    /// Loads a stack stored in the checkpoint container format.
    pub fn load(path: &Path) -> Result<FeatureExtractor<f32>> {
        let c = Container::read(path)?;
        FeatureExtractor::from_params(&c.records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = BTreeMap::new();
        header.insert("kind".to_string(), "features".to_string());
        Container {
            header,
            records: self.to_params().into_iter().map(|(k, v)| (k, v.cast())).collect(),
        }
        .write(path)
    }
}

pub(crate) fn tone_map<T: Scalar>(x: &Tensor<T>, mu: f64) -> Tensor<T> {
    x.map(|v| T::of(mu_law_value(v.f64(), mu)))
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn mean_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    Ok(a.sub(b)?.map(|v| v.abs()).mean())
}

/// Mean absolute difference between the μ-law images of `pred` and `gt`.
pub fn l1_tonemapped<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mu: f64) -> Result<T> {
    pred.expect_same_shape(gt)?;
    mean_abs_diff(&tone_map(pred, mu), &tone_map(gt, mu))
}

/// Sum over feature taps of the mean absolute feature difference, measured
/// on μ-law images.
pub fn perceptual<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    phi: &FeatureExtractor<T>,
    mu: f64,
) -> Result<T> {
    pred.expect_same_shape(gt)?;
    let fp = phi.features(&tone_map(pred, mu))?;
    let fg = phi.features(&tone_map(gt, mu))?;
    let mut total = T::zero();
    for (a, b) in fp.iter().zip(&fg) {
        total += mean_abs_diff(a, b)?;
    }
    Ok(total)
}

/// `l1 + α·perceptual`.
pub fn total_loss<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    phi: &FeatureExtractor<T>,
    cfg: LossConfig,
) -> Result<LossValue> {
    Ok(total_loss_with_grad(pred, gt, phi, cfg)?.0)
}

/// Loss value and its gradient with respect to `pred`.
pub fn total_loss_with_grad<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    phi: &FeatureExtractor<T>,
    cfg: LossConfig,
) -> Result<(LossValue, Tensor<T>)> {
    pred.expect_same_shape(gt)?;
    let tp = tone_map(pred, cfg.mu);
    let tg = tone_map(gt, cfg.mu);
    let n = T::of(tp.len() as f64);
    let diff = tp.sub(&tg)?;
    let l1 = diff.map(|v| v.abs()).mean();
    let mut d_tp = diff.map(|v| sign(v) / n);

    let mut lp = T::zero();
    if cfg.alpha != 0.0 {
        let (fp, caches) = phi.forward(&tp)?;
        let fg = phi.features(&tg)?;
        let alpha = T::of(cfg.alpha);
        let mut d_taps = Vec::with_capacity(fp.len());
        for (a, b) in fp.iter().zip(&fg) {
            let d = a.sub(b)?;
            let m = T::of(d.len() as f64);
            lp += d.map(|v| v.abs()).mean();
            d_taps.push(d.map(|v| alpha * sign(v) / m));
        }
        d_tp.accumulate(&phi.backward(&caches, &d_taps)?)?;
    }

    let d_pred = pred.zip_map(&d_tp, |p, g| g * T::of(mu_law_derivative(p.f64(), cfg.mu)))?;
    let value = LossValue {
        total: l1.f64() + cfg.alpha * lp.f64(),
        l1: l1.f64(),
        perceptual: lp.f64(),
    };
    Ok((value, d_pred))
}
