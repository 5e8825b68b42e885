use std::collections::BTreeMap;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Truncated normal, σ = 0.02 (attention and MLP projections).
    Trunc,
    /// Truncated normal with σ = 1/√fan_in (convolutions).
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push(out: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, init: Init) {
    out.push(ParamSpec { name, shape, init });
}

fn push_linear(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_out: usize) {
    push(out, format!("{prefix}.weight"), vec![d_in, d_out], Init::Trunc);
    push(out, format!("{prefix}.bias"), vec![d_out], Init::Zeros);
}

fn push_conv(out: &mut Vec<ParamSpec>, prefix: &str, c_out: usize, c_in: usize, k: usize) {
    push(
        out,
        format!("{prefix}.weight"),
        vec![c_out, c_in, k, k],
        Init::FanIn(c_in * k * k),
    );
    push(out, format!("{prefix}.bias"), vec![c_out], Init::Zeros);
}

fn push_norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    push(out, format!("{prefix}.gamma"), vec![d], Init::Ones);
    push(out, format!("{prefix}.beta"), vec![d], Init::Zeros);
}

/// Every learnable parameter of a configuration, in a fixed order.
pub fn schema(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (c, g, h) = (cfg.embed_dim, cfg.group_dim(), cfg.hidden_dim());
    let mut out = Vec::new();
    let branches = if cfg.shared_shallow { 1 } else { 3 };
    for i in 0..branches {
        push_conv(&mut out, &format!("shallow.{i}"), g, 6, 3);
    }
    for j in 0..cfg.num_layers {
        let p = format!("layers.{j}.gsab");
        push_norm(&mut out, &format!("{p}.norm1"), c);
        push_linear(&mut out, &format!("{p}.qkv"), c, 3 * c);
        push_linear(&mut out, &format!("{p}.proj"), c, c);
        push_norm(&mut out, &format!("{p}.norm2"), c);
        push_linear(&mut out, &format!("{p}.fc1"), c, h);
        push_linear(&mut out, &format!("{p}.fc2"), h, c);

        let p = format!("layers.{j}.scab");
        for pair in ["cross1", "cross3"] {
            for part in ["q", "k", "v", "proj"] {
                push_linear(&mut out, &format!("{p}.{pair}.{part}"), g, g);
            }
        }
        push_linear(&mut out, &format!("{p}.fuse"), c, c);
        push_norm(&mut out, &format!("{p}.norm"), c);
        push_linear(&mut out, &format!("{p}.fc1"), c, h);
        push_linear(&mut out, &format!("{p}.fc2"), h, c);
    }
    push_conv(&mut out, "skip", c, g, 3);
    push_conv(&mut out, "head", 3, c, 3);
    out
}

/// Named parameter set. Also used for gradients, which share names and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T: Scalar = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

pub type Gradients<T = f32> = ModelWeights<T>;

impl<T: Scalar> ModelWeights<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let params = schema(cfg)
            .into_iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::Zeros => Tensor::zeros(spec.shape),
                    Init::Ones => Tensor::full(spec.shape, T::one()),
                    Init::Trunc => Tensor::from_fn(spec.shape, |_| {
                        T::of(rng::truncated_normal(&mut rng, 0.02))
                    }),
                    Init::FanIn(fan_in) => {
                        let sigma = 1.0 / (fan_in as f64).sqrt();
                        Tensor::from_fn(spec.shape, |_| {
                            T::of(rng::truncated_normal(&mut rng, sigma))
                        })
                    }
                };
                (spec.name, t)
            })
            .collect();
        Ok(Self { params })
    }

    /// All-zero set matching `cfg`, the starting point for gradient
    /// accumulation.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            params: schema(cfg)
                .into_iter()
                .map(|s| (s.name, Tensor::zeros(s.shape)))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn from_map(params: BTreeMap<String, Tensor<T>>) -> Self {
        Self { params }
    }

    /// Checks names and shapes against the schema of `cfg`, reporting the
    /// first offending parameter.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = schema(cfg);
        for spec in &expected {
            match self.params.get(&spec.name) {
                None => return Err(Error::schema(&spec.name, "missing")),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::schema(
                        &spec.name,
                        format!("shape {:?}, expected {:?}", t.shape(), spec.shape),
                    ))
                }
                Some(t) if !t.all_finite() => {
                    return Err(Error::schema(&spec.name, "contains non-finite values"))
                }
                _ => {}
            }
        }
        if self.params.len() != expected.len() {
            let known: std::collections::HashSet<_> =
                expected.iter().map(|s| s.name.as_str()).collect();
            let extra = self
                .params
                .keys()
                .find(|k| !known.contains(k.as_str()))
                .expect("more params than schema entries");
            return Err(Error::schema(extra, "not part of this configuration"));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::schema(name, "missing"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::schema(name, "missing"))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    /// Adds `value` into the entry `name` (gradient accumulation).
    pub fn accumulate(&mut self, name: &str, value: &Tensor<T>) -> Result<()> {
        self.get_mut(name)?.accumulate(value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}
