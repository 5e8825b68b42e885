//! Radiance-domain transfer functions shared by data generation, the network
//! input, the loss and the metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GAMMA: f64 = 2.2;
pub const MU: f64 = 5000.0;

/// Weight floor for the merge hat function.
pub const HAT_FLOOR: f64 = 1e-3;
/// Floor applied to every triangle weight so their sum is never zero.
pub const TRIANGLE_FLOOR: f64 = 1e-6;

/// A display-referred exposure: `3×H×W` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdrImage {
    pixels: Tensor<f32>,
    exposure_time: f64,
    ev: f64,
}

impl LdrImage {
    /// Values are clamped into `[0, 1]`; `exposure_time` must be positive.
    pub fn new(pixels: Tensor<f32>, exposure_time: f64, ev: f64) -> Result<Self> {
        check_rgb(&pixels, "LDR image")?;
        if !(exposure_time > 0.0 && exposure_time.is_finite()) {
            return Err(Error::Domain(format!(
                "exposure time must be positive, got {exposure_time}"
            )));
        }
        let pixels = pixels.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Ok(Self {
            pixels,
            exposure_time,
            ev,
        })
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn exposure_time(&self) -> f64 {
        self.exposure_time
    }

    pub fn ev(&self) -> f64 {
        self.ev
    }

    pub fn height(&self) -> usize {
        self.pixels.dim(1)
    }

    pub fn width(&self) -> usize {
        self.pixels.dim(2)
    }

    /// Mean of the three channels, `H×W`.
    pub fn luminance(&self) -> Tensor<f32> {
        let (h, w) = (self.height(), self.width());
        let plane = h * w;
        let d = self.pixels.data();
        Tensor::from_fn([h, w], |i| (d[i] + d[plane + i] + d[2 * plane + i]) / 3.0)
    }
}

/// Linear scene radiance, `3×H×W`, non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct HdrImage {
    pixels: Tensor<f32>,
}

impl HdrImage {
    pub fn new(pixels: Tensor<f32>) -> Result<Self> {
        check_rgb(&pixels, "HDR image")?;
        if let Some(bad) = pixels.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!(
                "HDR pixels must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<f32> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.dim(1)
    }

    pub fn width(&self) -> usize {
        self.pixels.dim(2)
    }

    pub fn scaled(&self, factor: f64) -> HdrImage {
        HdrImage {
            pixels: self.pixels.map(|v| (v as f64 * factor) as f32),
        }
    }
}

/// Three exposures of one scene ordered short → reference → long.
#[derive(Clone, Debug, PartialEq)]
pub struct LdrBracket {
    images: [LdrImage; 3],
}

impl LdrBracket {
    pub fn new(short: LdrImage, reference: LdrImage, long: LdrImage) -> Result<Self> {
        if short.pixels.shape() != reference.pixels.shape()
            || long.pixels.shape() != reference.pixels.shape()
        {
            return Err(Error::Dimension(format!(
                "bracket shapes differ: {:?}, {:?}, {:?}",
                short.pixels.shape(),
                reference.pixels.shape(),
                long.pixels.shape()
            )));
        }
        if !(short.exposure_time < reference.exposure_time
            && reference.exposure_time < long.exposure_time)
        {
            return Err(Error::Domain(format!(
                "exposure times must strictly increase, got {}, {}, {}",
                short.exposure_time, reference.exposure_time, long.exposure_time
            )));
        }
        Ok(Self {
            images: [short, reference, long],
        })
    }

    pub fn images(&self) -> &[LdrImage; 3] {
        &self.images
    }

    pub fn short(&self) -> &LdrImage {
        &self.images[0]
    }

    pub fn reference(&self) -> &LdrImage {
        &self.images[1]
    }

    pub fn long(&self) -> &LdrImage {
        &self.images[2]
    }

    pub fn height(&self) -> usize {
        self.images[1].height()
    }

    pub fn width(&self) -> usize {
        self.images[1].width()
    }
}

fn check_rgb(t: &Tensor<f32>, what: &str) -> Result<()> {
    if t.rank() != 3 || t.dim(0) != 3 {
        return Err(Error::Dimension(format!(
            "{what} must be 3×H×W, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// `L^γ / t` for a single value.
pub fn gamma_project_value(l: f64, exposure_time: f64, gamma: f64) -> f64 {
    l.powf(gamma) / exposure_time
}

/// Projects an exposure into the linear radiance domain, `H = L^γ / t`.
pub fn gamma_project(ldr: &LdrImage, gamma: f64) -> HdrImage {
    let t = ldr.exposure_time;
    HdrImage {
        pixels: ldr
            .pixels
            .map(|v| gamma_project_value(v as f64, t, gamma) as f32),
    }
}

/// `log(1 + μh) / log(1 + μ)` with `h` clamped into `[0, 1]`.
pub fn mu_law_value(h: f64, mu: f64) -> f64 {
    let h = if h.is_nan() { 0.0 } else { h.clamp(0.0, 1.0) };
    (mu * h).ln_1p() / mu.ln_1p()
}

/// Derivative of [`mu_law_value`]; zero where the input is clamped.
pub fn mu_law_derivative(h: f64, mu: f64) -> f64 {
    if !(0.0..=1.0).contains(&h) {
        return 0.0;
    }
    mu / ((1.0 + mu * h) * mu.ln_1p())
}

/// μ-law tone mapping of a normalized HDR image.
pub fn mu_law(hdr: &HdrImage, mu: f64) -> Tensor<f32> {
    hdr.pixels.map(|v| mu_law_value(v as f64, mu) as f32)
}

/// Per-pixel blending weights for a short/reference/long bracket.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights {
    pub short: Tensor<f32>,
    pub medium: Tensor<f32>,
    pub long: Tensor<f32>,
}

impl BlendWeights {
    pub fn as_array(&self) -> [&Tensor<f32>; 3] {
        [&self.short, &self.medium, &self.long]
    }
}

/// Triangle weights for luminance `z ∈ [0, 1]` of the reference:
/// `(short, medium, long)`, each floored at [`TRIANGLE_FLOOR`].
pub fn triangle_weight_values(z: f64) -> [f64; 3] {
    let short = (2.0 * z - 1.0).clamp(0.0, 1.0);
    let long = (1.0 - 2.0 * z).clamp(0.0, 1.0);
    let medium = 1.0 - (2.0 * z - 1.0).abs();
    [short, medium, long].map(|w| w.max(TRIANGLE_FLOOR))
}

/// Triangle weights over the reference luminance. Over-exposed reference
/// pixels favour the short exposure, under-exposed ones the long exposure.
pub fn triangle_weights(reference: &LdrImage) -> BlendWeights {
    let lum = reference.luminance();
    let per_pixel: Vec<[f64; 3]> = lum
        .data()
        .iter()
        .map(|&z| triangle_weight_values(z as f64))
        .collect();
    let plane = |k: usize| {
        Tensor::new(
            lum.shape(),
            per_pixel.iter().map(|w| w[k] as f32).collect(),
        )
        .expect("same shape as luminance")
    };
    BlendWeights {
        short: plane(0),
        medium: plane(1),
        long: plane(2),
    }
}

/// Weighted per-pixel mean `Σ wₙHₙ / Σ wₙ`; weights are `H×W` and shared by
/// the three channels.
pub fn blend(inputs: [&HdrImage; 3], weights: [&Tensor<f32>; 3]) -> Result<HdrImage> {
    let shape = inputs[0].pixels.shape().to_vec();
    for h in &inputs[1..] {
        if h.pixels.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "blend inputs differ: {:?} vs {:?}",
                shape,
                h.pixels.shape()
            )));
        }
    }
    let (hh, ww) = (shape[1], shape[2]);
    for w in weights {
        if w.shape() != [hh, ww] {
            return Err(Error::Dimension(format!(
                "blend weight {:?} does not match image {hh}×{ww}",
                w.shape()
            )));
        }
    }
    let plane = hh * ww;
    let mut out = vec![0f32; 3 * plane];
    for p in 0..plane {
        let ws = weights.map(|w| w.data()[p] as f64);
        let total: f64 = ws.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain(format!(
                "blend weights sum to {total} at pixel {p}"
            )));
        }
        for c in 0..3 {
            let i = c * plane + p;
            let acc: f64 = (0..3).map(|n| ws[n] * inputs[n].pixels.data()[i] as f64).sum();
            out[i] = (acc / total) as f32;
        }
    }
    HdrImage::new(Tensor::new(shape, out)?)
}

/// Hat weight of a pixel value. Clipped codes carry no radiance information
/// and get zero weight; everything else is floored at [`HAT_FLOOR`].
pub fn hat_weight(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        z.min(1.0 - z).max(HAT_FLOOR)
    }
}

/// Merges a static exposure stack into radiance,
/// `E = Σ ŵ(Lₙ)·Lₙ^γ/tₙ / Σ ŵ(Lₙ)`, per channel.
///
/// Pixels clipped in every exposure take the shortest exposure's projection
/// when saturated high and the longest's when saturated low.
pub fn debevec_merge(stack: &[LdrImage], gamma: f64) -> Result<HdrImage> {
    let first = stack
        .first()
        .ok_or_else(|| Error::Domain("merge needs at least one exposure".into()))?;
    let shape = first.pixels.shape().to_vec();
    for img in stack {
        if img.pixels.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "merge stack shapes differ: {:?} vs {:?}",
                shape,
                img.pixels.shape()
            )));
        }
    }
    let mut order: Vec<usize> = (0..stack.len()).collect();
    order.sort_by(|&a, &b| stack[a].exposure_time.total_cmp(&stack[b].exposure_time));
    if order
        .windows(2)
        .any(|p| stack[p[0]].exposure_time == stack[p[1]].exposure_time)
    {
        return Err(Error::Domain("merge stack has repeated exposure times".into()));
    }
    let shortest = &stack[order[0]];
    let longest = &stack[*order.last().expect("non-empty")];

    let n = first.pixels.len();
    let mut out = vec![0f32; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for img in stack {
            let z = img.pixels.data()[i] as f64;
            let w = hat_weight(z);
            num += w * gamma_project_value(z, img.exposure_time, gamma);
            den += w;
        }
        let e = if den > 0.0 {
            num / den
        } else if shortest.pixels.data()[i] >= 0.5 {
            gamma_project_value(shortest.pixels.data()[i] as f64, shortest.exposure_time, gamma)
        } else {
            gamma_project_value(longest.pixels.data()[i] as f64, longest.exposure_time, gamma)
        };
        *o = e as f32;
    }
    HdrImage::new(Tensor::new(shape, out)?)
}

/// Largest radiance a stack can represent: a saturated shortest exposure.
pub fn theoretical_max(stack: &[LdrImage]) -> Result<f64> {
    stack
        .iter()
        .map(|i| i.exposure_time)
        .min_by(f64::total_cmp)
        .map(|t| 1.0 / t)
        .ok_or_else(|| Error::Domain("empty exposure stack".into()))
}
