//! Central finite-difference checks of every hand-written backward pass.
//!
//! All checks run in `f64`. Each one builds a scalar objective
//! `L = Σ r ⊙ f(x)` with a random probe `r`, differentiates it analytically,
//! and compares against `(L(x + h) − L(x − h)) / 2h` entry by entry.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hdrmath::{LdrBracket, LdrImage};
use crate::loss::{tone_map, total_loss, total_loss_with_grad, FeatureExtractor, LossConfig};
use crate::model::{make_input, ModelConfig, ModelWeights, NetworkInput, Sctnet};
use crate::rng::{self, StreamRng, Stream};
use crate::tensor::{
    Conv2dOp, GeluOp, LayerNormOp, LinearOp, MatMulOp, MlpOp, Op, SigmoidOp, SoftmaxOp, Tensor,
};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Objectives here are O(1), so
/// central-difference round-off at `STEP` is around 1e-11; below the floor
/// the comparison is effectively absolute.
pub const ABS_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub results: Vec<CheckResult>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.results.iter().all(|r| r.max_rel_error <= tol)
    }

    pub fn failures(&self, tol: f64) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(move |r| r.max_rel_error > tol)
    }

    pub fn extend(&mut self, other: GradReport) {
        self.results.extend(other.results);
    }
}

fn random_tensor(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks one op over every input entry.
fn check_op(
    name: &str,
    mut make: impl FnMut() -> Box<dyn Op<f64>>,
    inputs: Vec<Tensor<f64>>,
    rng: &mut StreamRng,
) -> Result<CheckResult> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let mut op = make();
    let y = op.forward(&refs)?;
    let probe = random_tensor(rng, y.shape(), -1.0, 1.0);
    let grads = op.backward(&probe)?;
    let mut objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        Ok(dot(&make().forward(&refs)?, &probe))
    };
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut xs = inputs.clone();
    for (k, g) in grads.iter().enumerate() {
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + STEP;
            let plus = objective(&xs)?;
            xs[k].data_mut()[i] = orig - STEP;
            let minus = objective(&xs)?;
            xs[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(g.data()[i], numeric));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        entries,
        max_rel_error: worst,
    })
}

/// Every kernel of the tensor engine on random small shapes.
pub fn check_ops(seed: u64) -> Result<GradReport> {
    let mut r = rng::stream(seed, Stream::Sampling);
    let mut report = GradReport::default();
    let dims: Vec<usize> = (0..4).map(|_| r.gen_range(2..5)).collect();
    let (m, k, n, c) = (dims[0], dims[1], dims[2], dims[3]);

    let inputs = vec![random_tensor(&mut r, &[m, k], -1.0, 1.0), random_tensor(&mut r, &[k, n], -1.0, 1.0)];
    report.results.push(check_op("matmul", || Box::new(MatMulOp::default()), inputs, &mut r)?);

    for axis in 0..2 {
        let inputs = vec![random_tensor(&mut r, &[m, n], -3.0, 3.0)];
        report.results.push(check_op(
            &format!("softmax(axis={axis})"),
            || Box::new(SoftmaxOp::new(axis)),
            inputs,
            &mut r,
        )?);
    }

    let inputs = vec![
        random_tensor(&mut r, &[m, c + 2], -2.0, 2.0),
        random_tensor(&mut r, &[c + 2], 0.5, 1.5),
        random_tensor(&mut r, &[c + 2], -0.5, 0.5),
    ];
    report.results.push(check_op("layernorm", || Box::new(LayerNormOp::default()), inputs, &mut r)?);

    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let inputs = vec![
            random_tensor(&mut r, &[c, m + 3, n + 3], -1.0, 1.0),
            random_tensor(&mut r, &[k, c, 3, 3], -0.5, 0.5),
            random_tensor(&mut r, &[k], -0.5, 0.5),
        ];
        report.results.push(check_op(
            &format!("conv2d(stride={stride},pad={pad})"),
            || Box::new(Conv2dOp::new(stride, pad)),
            inputs,
            &mut r,
        )?);
    }

    let inputs = vec![random_tensor(&mut r, &[m, n], -3.0, 3.0)];
    report.results.push(check_op("gelu", || Box::new(GeluOp::default()), inputs, &mut r)?);

    let inputs = vec![random_tensor(&mut r, &[m, n], -3.0, 3.0)];
    report.results.push(check_op("sigmoid", || Box::new(SigmoidOp::default()), inputs, &mut r)?);

    let inputs = vec![
        random_tensor(&mut r, &[m, k], -1.0, 1.0),
        random_tensor(&mut r, &[k, n], -1.0, 1.0),
        random_tensor(&mut r, &[n], -1.0, 1.0),
    ];
    report.results.push(check_op("linear", || Box::new(LinearOp::default()), inputs, &mut r)?);

    let hidden = 4 * k;
    let inputs = vec![
        random_tensor(&mut r, &[m, k], -1.0, 1.0),
        random_tensor(&mut r, &[k, hidden], -0.5, 0.5),
        random_tensor(&mut r, &[hidden], -0.5, 0.5),
        random_tensor(&mut r, &[hidden, k], -0.5, 0.5),
        random_tensor(&mut r, &[k], -0.5, 0.5),
    ];
    report.results.push(check_op("mlp", || Box::new(MlpOp::default()), inputs, &mut r)?);
    Ok(report)
}

/// A random bracket with pixels strictly inside `(0, 1)`.
pub fn random_bracket(seed: u64, height: usize, width: usize) -> Result<LdrBracket> {
    let mut r = rng::stream(seed, Stream::Sampling);
    let mut img = |t: f64| {
        LdrImage::new(
            Tensor::from_fn([3, height, width], |_| r.gen_range(0.05f32..0.95)),
            t,
            t.log2(),
        )
    };
    LdrBracket::new(img(0.25)?, img(1.0)?, img(4.0)?)
}

/// Initialized weights with every entry perturbed, so that no path through
/// the network is degenerate (e.g. near-uniform attention at σ = 0.02).
pub fn perturbed_weights(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights<f64>> {
    let mut w = ModelWeights::<f32>::init(cfg, seed)?.cast::<f64>();
    let mut r = rng::stream(seed, Stream::Sampling);
    for (_, t) in w.iter_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-0.25..0.25);
        }
    }
    Ok(w)
}

/// Indices of up to `k` distinct entries of a tensor of length `len`.
fn sample_indices(r: &mut StreamRng, len: usize, k: usize) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        let i = r.gen_range(0..len);
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

/// Objective used for parameter checks.
enum Objective {
    /// `Σ r ⊙ ŷ` with a random probe.
    Probe(Tensor<f64>),
    /// The training loss against a target image.
    Loss(Tensor<f64>, FeatureExtractor<f64>, LossConfig),
}

impl Objective {
    fn value(&self, y: &Tensor<f64>) -> Result<f64> {
        match self {
            Objective::Probe(p) => Ok(dot(y, p)),
            Objective::Loss(gt, phi, cfg) => Ok(total_loss(y, gt, phi, *cfg)?.total),
        }
    }

    fn grad(&self, y: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            Objective::Probe(p) => Ok(p.clone()),
            Objective::Loss(gt, phi, cfg) => Ok(total_loss_with_grad(y, gt, phi, *cfg)?.1),
        }
    }
}

fn check_network_with(
    label: &str,
    cfg: &ModelConfig,
    weights: &ModelWeights<f64>,
    input: &NetworkInput<f64>,
    objective: &Objective,
    per_param: usize,
    r: &mut StreamRng,
) -> Result<GradReport> {
    let net = Sctnet::new(cfg, weights)?;
    let trace = net.forward_trace(input)?;
    let grads = net.backward(&trace, &objective.grad(trace.output())?)?;
    let mut w = weights.clone();
    let mut report = GradReport::default();
    let names: Vec<String> = weights.names().cloned().collect();
    for name in names {
        let len = weights.get(&name)?.len();
        let mut worst: f64 = 0.0;
        let idx = sample_indices(r, len, per_param);
        for &i in &idx {
            let orig = w.get(&name)?.data()[i];
            let eval = |v: f64, w: &mut ModelWeights<f64>| -> Result<f64> {
                w.get_mut(&name)?.data_mut()[i] = v;
                let y = Sctnet::new(cfg, w)?.forward(input)?;
                objective.value(&y)
            };
            let plus = eval(orig + STEP, &mut w)?;
            let minus = eval(orig - STEP, &mut w)?;
            w.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(grads.get(&name)?.data()[i], numeric));
        }
        report.results.push(CheckResult {
            name: format!("{label}:{name}"),
            entries: idx.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Parameter gradients of the whole network, `per_param` sampled entries per
/// tensor, on a random `height×width` bracket.
pub fn check_network(
    cfg: &ModelConfig,
    seed: u64,
    height: usize,
    width: usize,
    per_param: usize,
) -> Result<GradReport> {
    let weights = perturbed_weights(cfg, seed)?;
    let input = make_input(&random_bracket(seed, height, width)?, cfg.gamma)?.cast::<f64>();
    let mut r = rng::stream(seed, Stream::Augment);
    let probe = random_tensor(&mut r, &[3, height, width], -1.0, 1.0);
    check_network_with("net", cfg, &weights, &input, &Objective::Probe(probe), per_param, &mut r)
}

/// Parameter gradients of the full training objective (network + loss).
pub fn check_training_objective(
    cfg: &ModelConfig,
    seed: u64,
    height: usize,
    width: usize,
    per_param: usize,
) -> Result<GradReport> {
    let weights = perturbed_weights(cfg, seed)?;
    let input = make_input(&random_bracket(seed, height, width)?, cfg.gamma)?.cast::<f64>();
    let mut r = rng::stream(seed, Stream::Augment);
    let gt = random_tensor(&mut r, &[3, height, width], 0.0, 1.0);
    let objective = Objective::Loss(gt, FeatureExtractor::seeded(seed), LossConfig::default());
    check_network_with("objective", cfg, &weights, &input, &objective, per_param, &mut r)
}

/// Signs of every difference the loss takes an absolute value of.
fn kink_signs(pred: &Tensor<f64>, gt: &Tensor<f64>, phi: &FeatureExtractor<f64>, cfg: LossConfig) -> Result<Vec<bool>> {
    let tp = tone_map(pred, cfg.mu);
    let tg = tone_map(gt, cfg.mu);
    let mut out: Vec<bool> = tp.sub(&tg)?.data().iter().map(|v| *v > 0.0).collect();
    if cfg.alpha != 0.0 {
        for (a, b) in phi.features(&tp)?.iter().zip(&phi.features(&tg)?) {
            out.extend(a.sub(b)?.data().iter().map(|v| *v > 0.0));
        }
    }
    Ok(out)
}

/// Gradient of the loss with respect to every prediction entry. Inputs are
/// kept away from the μ-law clamp. The loss is piecewise smooth; entries
/// whose stencil straddles an |·| kink are skipped and not counted.
pub fn check_loss(seed: u64) -> Result<GradReport> {
    let mut r = rng::stream(seed, Stream::Sampling);
    let (h, w) = (r.gen_range(6..10), r.gen_range(6..10));
    let pred = random_tensor(&mut r, &[3, h, w], 0.05, 0.95);
    let gt = pred.map(|p| if p > 0.5 { p - 0.04 } else { p + 0.04 });
    let phi = FeatureExtractor::<f64>::seeded(seed);
    let mut report = GradReport::default();
    for alpha in [0.0, 0.01, 1.0] {
        let cfg = LossConfig { alpha, ..Default::default() };
        let (_, g) = total_loss_with_grad(&pred, &gt, &phi, cfg)?;
        let mut x = pred.clone();
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in 0..x.len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + STEP;
            let plus = total_loss(&x, &gt, &phi, cfg)?.total;
            let signs_plus = kink_signs(&x, &gt, &phi, cfg)?;
            x.data_mut()[i] = orig - STEP;
            let minus = total_loss(&x, &gt, &phi, cfg)?.total;
            let signs_minus = kink_signs(&x, &gt, &phi, cfg)?;
            x.data_mut()[i] = orig;
            // Central differences are meaningless across an |·| kink.
            if signs_plus != signs_minus {
                continue;
            }
            checked += 1;
            worst = worst.max(relative_error(g.data()[i], (plus - minus) / (2.0 * STEP)));
        }
        if checked * 2 < x.len() {
            return Err(Error::Domain(format!(
                "loss check at alpha={alpha}: only {checked} of {} entries away from kinks",
                x.len()
            )));
        }
        report.results.push(CheckResult {
            name: format!("total_loss(alpha={alpha})"),
            entries: checked,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Everything: ops, loss, toy network, and the given network config, for
/// each seed.
pub fn full_suite(cfg: &ModelConfig, seeds: &[u64]) -> Result<GradReport> {
    let mut report = GradReport::default();
    for &seed in seeds {
        let tag = |mut rep: GradReport| {
            for r in &mut rep.results {
                r.name = format!("seed {seed} {}", r.name);
            }
            rep
        };
        report.extend(tag(check_ops(seed)?));
        report.extend(tag(check_loss(seed)?));
        report.extend(tag(check_network(&ModelConfig::toy(), seed, 8, 8, 3)?));
        report.extend(tag(check_network(cfg, seed, 8, 8, 2)?));
        report.extend(tag(check_training_objective(cfg, seed, 8, 8, 1)?));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, -1e-12) < 1e-4);
    }

    #[test]
    fn ops_pass() {
        let rep = check_ops(1).unwrap();
        for r in &rep.results {
            assert!(r.max_rel_error <= TOLERANCE, "{r:?}");
        }
    }

    #[test]
    fn loss_passes() {
        let rep = check_loss(2).unwrap();
        assert!(rep.passed(TOLERANCE), "{rep:?}");
    }
}
