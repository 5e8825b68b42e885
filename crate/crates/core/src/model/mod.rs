//! The deghosting network.
//!
//! ```text
//! Iᵢ = [Lᵢ, Lᵢ^γ/tᵢ]                          6×H×W per exposure
//! fᵢ = conv3×3(Iᵢ)                            C/3 channels each
//! z₀ = [f₁, f₂, f₃]                           one token per pixel
//! zⱼ = cross_frame(spatial(zⱼ₋₁), f)          j = 1..L
//! ŷ  = σ(conv3×3(z_L + conv3×3(f₂)))
//! ```

pub mod blocks;
pub mod checkpoint;
mod config;
pub mod macs;
pub mod tokens;
mod weights;

pub use config::ModelConfig;
pub use weights::{schema, Gradients, Init, ModelWeights, ParamSpec};

use blocks::{CrossFrameCache, SpatialCache};
use tokens::{concat_cols, map_to_tokens, take_cols, tokens_to_map};

use crate::error::{Error, Result};
use crate::hdrmath::{gamma_project, HdrImage, LdrBracket};
use crate::tensor::{conv2d, conv2d_backward, sigmoid, sigmoid_backward, Scalar, Tensor};

/// The three `6×H×W` exposure tensors, short → reference → long.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInput<T: Scalar = f32> {
    frames: [Tensor<T>; 3],
}

impl<T: Scalar> NetworkInput<T> {
    pub fn new(frames: [Tensor<T>; 3]) -> Result<Self> {
        let shape = frames[0].shape().to_vec();
        if shape.len() != 3 || shape[0] != 6 {
            return Err(Error::Dimension(format!(
                "network input frames must be 6×H×W, got {shape:?}"
            )));
        }
        if frames.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(Error::Dimension(format!(
                "network input frames differ: {:?}, {:?}, {:?}",
                frames[0].shape(),
                frames[1].shape(),
                frames[2].shape()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Tensor<T>; 3] {
        &self.frames
    }

    pub fn height(&self) -> usize {
        self.frames[0].dim(1)
    }

    pub fn width(&self) -> usize {
        self.frames[0].dim(2)
    }

    pub fn cast<U: Scalar>(&self) -> NetworkInput<U> {
        NetworkInput {
            frames: std::array::from_fn(|i| self.frames[i].cast()),
        }
    }
}

/// Concatenates each exposure with its gamma projection along channels.
pub fn make_input(bracket: &LdrBracket, gamma: f64) -> Result<NetworkInput<f32>> {
    let frames = bracket.images().each_ref().map(|ldr| {
        let hdr = gamma_project(ldr, gamma);
        let mut data = ldr.pixels().data().to_vec();
        data.extend_from_slice(hdr.pixels().data());
        Tensor::new([6, ldr.height(), ldr.width()], data)
    });
    let [a, b, c] = frames;
    NetworkInput::new([a?, b?, c?])
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace<T: Scalar> {
    input: NetworkInput<T>,
    shallow_maps: [Tensor<T>; 3],
    spatial: Vec<SpatialCache<T>>,
    cross: Vec<CrossFrameCache<T>>,
    features: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

/// A configuration bound to a validated weight set.
pub struct Sctnet<'a, T: Scalar = f32> {
    cfg: &'a ModelConfig,
    weights: &'a ModelWeights<T>,
}

impl<'a, T: Scalar> Sctnet<'a, T> {
    pub fn new(cfg: &'a ModelConfig, weights: &'a ModelWeights<T>) -> Result<Self> {
        cfg.validate()?;
        weights.validate(cfg)?;
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    fn shallow_prefix(&self, branch: usize) -> String {
        let i = if self.cfg.shared_shallow { 0 } else { branch };
        format!("shallow.{i}")
    }

    /// Per-exposure 3×3 convolutions, `C/3×H×W` each.
    pub fn shallow_extract(&self, input: &NetworkInput<T>) -> Result<[Tensor<T>; 3]> {
        let mut out = Vec::with_capacity(3);
        for (i, frame) in input.frames.iter().enumerate() {
            let p = self.shallow_prefix(i);
            out.push(conv2d(
                frame,
                self.weights.get(&format!("{p}.weight"))?,
                self.weights.get(&format!("{p}.bias"))?,
                1,
                1,
            )?);
        }
        Ok(out.try_into().expect("three branches"))
    }

    /// Prediction in `(0, 1)`, `3×H×W`.
    pub fn forward(&self, input: &NetworkInput<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &NetworkInput<T>) -> Result<ForwardTrace<T>> {
        let (h, w) = (input.height(), input.width());
        let w8 = self.weights;
        let shallow_maps = self.shallow_extract(input)?;
        let shallow_tokens: Vec<Tensor<T>> = shallow_maps
            .iter()
            .map(map_to_tokens)
            .collect::<Result<_>>()?;
        let f = [&shallow_tokens[0], &shallow_tokens[1], &shallow_tokens[2]];
        let mut z = concat_cols(&f)?;
        let mut spatial = Vec::with_capacity(self.cfg.num_layers);
        let mut cross = Vec::with_capacity(self.cfg.num_layers);
        for j in 0..self.cfg.num_layers {
            let (zs, sc) = blocks::spatial_forward(self.cfg, w8, j, &z, h, w)?;
            let (zc, cc) = blocks::cross_frame_forward(self.cfg, w8, j, &zs, f)?;
            spatial.push(sc);
            cross.push(cc);
            z = zc;
        }
        let skip = conv2d(&shallow_maps[1], w8.get("skip.weight")?, w8.get("skip.bias")?, 1, 1)?;
        let features = tokens_to_map(&z, h, w)?.add(&skip)?;
        let logits = conv2d(&features, w8.get("head.weight")?, w8.get("head.bias")?, 1, 1)?;
        let output = sigmoid(&logits);
        Ok(ForwardTrace {
            input: input.clone(),
            shallow_maps,
            spatial,
            cross,
            features,
            output,
        })
    }

    /// Gradients of a scalar objective given `d_output = ∂objective/∂ŷ`.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_output: &Tensor<T>) -> Result<Gradients<T>> {
        let (cfg, w8) = (self.cfg, self.weights);
        if trace.spatial.len() != cfg.num_layers || trace.cross.len() != cfg.num_layers {
            return Err(Error::Usage("trace does not belong to this network".into()));
        }
        d_output.expect_same_shape(&trace.output)?;
        let (h, w) = (trace.input.height(), trace.input.width());
        let mut grads = Gradients::zeros(cfg);

        let dlogits = sigmoid_backward(&trace.output, d_output)?;
        let (dfeat, hp) = conv2d_backward(&trace.features, w8.get("head.weight")?, &dlogits, 1, 1, true)?;
        let (dw, db) = hp.expect("weight grads");
        grads.accumulate("head.weight", &dw)?;
        grads.accumulate("head.bias", &db)?;

        let (dskip_in, sp) = conv2d_backward(&trace.shallow_maps[1], w8.get("skip.weight")?, &dfeat, 1, 1, true)?;
        let (dw, db) = sp.expect("weight grads");
        grads.accumulate("skip.weight", &dw)?;
        grads.accumulate("skip.bias", &db)?;

        let g = cfg.group_dim();
        let mut dshallow: [Tensor<T>; 3] = std::array::from_fn(|_| Tensor::zeros([h * w, g]));
        let mut dz = map_to_tokens(&dfeat)?;
        for j in (0..cfg.num_layers).rev() {
            let (dzs, df) = blocks::cross_frame_backward(cfg, w8, j, &trace.cross[j], &dz, &mut grads)?;
            for (acc, d) in dshallow.iter_mut().zip(&df) {
                acc.accumulate(d)?;
            }
            dz = blocks::spatial_backward(cfg, w8, j, &trace.spatial[j], &dzs, &mut grads)?;
        }
        for (i, acc) in dshallow.iter_mut().enumerate() {
            acc.accumulate(&take_cols(&dz, i * g, g))?;
        }

        for (i, dtok) in dshallow.iter().enumerate() {
            let mut dmap = tokens_to_map(dtok, h, w)?;
            if i == 1 {
                dmap.accumulate(&dskip_in)?;
            }
            let p = self.shallow_prefix(i);
            let (_, sp) = conv2d_backward(
                &trace.input.frames[i],
                w8.get(&format!("{p}.weight"))?,
                &dmap,
                1,
                1,
                true,
            )?;
            let (dw, db) = sp.expect("weight grads");
            grads.accumulate(&format!("{p}.weight"), &dw)?;
            grads.accumulate(&format!("{p}.bias"), &db)?;
        }
        Ok(grads)
    }
}

impl Sctnet<'_, f32> {
    /// Runs the network on a bracket and wraps the result as an HDR image.
    pub fn predict(&self, bracket: &LdrBracket) -> Result<HdrImage> {
        let input = make_input(bracket, self.cfg.gamma)?;
        HdrImage::new(self.forward(&input)?)
    }
}
