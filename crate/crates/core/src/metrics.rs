//! PSNR and SSIM in the linear, μ-law and PU21 domains.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hdrmath::{mu_law_value, HdrImage, MU};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Domain("PSNR of an empty image".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn planes(x: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match x.rank() {
        2 => Ok((1, x.dim(0), x.dim(1))),
        3 => Ok((x.dim(0), x.dim(1), x.dim(2))),
        _ => Err(Error::Dimension(format!("SSIM needs H×W or C×H×W, got {:?}", x.shape()))),
    }
}

/// Valid-mode separable filter of one `h×w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_term(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
}

/// Mean SSIM over all fully-contained windows, averaged over channels.
/// Dynamic range 1.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (c, h, w) = planes(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "image {h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window"
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.data()[ch * h * w..(ch + 1) * h * w].iter().map(|v| *v as f64).collect();
        let pb: Vec<f64> = b.data()[ch * h * w..(ch + 1) * h * w].iter().map(|v| *v as f64).collect();
        let prod = |f: &dyn Fn(usize) -> f64| filter_valid(&(0..h * w).map(f).collect::<Vec<_>>(), h, w, &k);
        let mx = filter_valid(&pa, h, w, &k);
        let my = filter_valid(&pb, h, w, &k);
        let xx = prod(&|i| pa[i] * pa[i]);
        let yy = prod(&|i| pb[i] * pb[i]);
        let xy = prod(&|i| pa[i] * pb[i]);
        let n = mx.len();
        let s: f64 = (0..n)
            .map(|i| {
                ssim_term(
                    mx[i],
                    my[i],
                    xx[i] - mx[i] * mx[i],
                    yy[i] - my[i] * my[i],
                    xy[i] - mx[i] * my[i],
                )
            })
            .sum();
        total += s / n as f64;
    }
    Ok(total / c as f64)
}

/// Direct sliding-window SSIM, one window at a time. Slow; for checking
/// [`ssim`].
pub fn ssim_naive(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (c, h, w) = planes(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain("image smaller than the SSIM window".into()));
    }
    let g = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let n = SSIM_WINDOW;
    let mut total = 0.0;
    for ch in 0..c {
        let at = |d: &[f32], y: usize, x: usize| d[(ch * h + y) * w + x] as f64;
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let wt = g[i] * g[j];
                        mx += wt * at(a.data(), y0 + i, x0 + j);
                        my += wt * at(b.data(), y0 + i, x0 + j);
                    }
                }
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let wt = g[i] * g[j];
                        let dx = at(a.data(), y0 + i, x0 + j) - mx;
                        let dy = at(b.data(), y0 + i, x0 + j) - my;
                        sxx += wt * dx * dx;
                        syy += wt * dy * dy;
                        sxy += wt * dx * dy;
                    }
                }
                sum += ssim_term(mx, my, sxx, syy, sxy);
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    Ok(total / c as f64)
}

/// μ-law image of normalized radiance.
pub fn mu_domain(a: &Tensor<f32>) -> Tensor<f32> {
    a.map(|v| mu_law_value(v as f64, MU) as f32)
}

/// Viewing conditions used to turn normalized radiance into luminance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplayModel {
    /// cd/m².
    pub peak: f64,
    pub contrast: f64,
    /// lux.
    pub ambient: f64,
    pub reflectivity: f64,
}

impl Default for DisplayModel {
    fn default() -> Self {
        Self {
            peak: 100.0,
            contrast: 1000.0,
            ambient: 10.0,
            reflectivity: 0.005,
        }
    }
}

impl DisplayModel {
    pub fn black(&self) -> f64 {
        self.peak / self.contrast
    }

    /// Ambient light reflected off the screen, cd/m².
    pub fn reflected(&self) -> f64 {
        self.reflectivity / std::f64::consts::PI * self.ambient
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak > self.black() && self.black() > 0.0 && self.ambient >= 0.0 && self.reflectivity >= 0.0) {
            return Err(Error::Config(format!("invalid display model {self:?}")));
        }
        Ok(())
    }

    /// Luminance for normalized radiance `a`; negative values sit at black.
    pub fn luminance(&self, a: f64) -> f64 {
        (self.peak - self.black()) * a.max(0.0) + self.black() + self.reflected()
    }
}

/// PU21 encoding, banding + glare fit (Mantiuk and Azimi, 2021).
pub mod pu21 {
    pub const P: [f64; 7] = [
        0.353487901,
        0.3734658629,
        8.277049286e-05,
        0.9062562627,
        0.09150303166,
        0.9099517204,
        596.3148142,
    ];
    pub const L_MIN: f64 = 0.005;
    pub const L_MAX: f64 = 10000.0;

    /// Encoded value of absolute luminance `y` in cd/m².
    pub fn encode(y: f64) -> f64 {
        let y = y.clamp(L_MIN, L_MAX);
        let yp = y.powf(P[3]);
        P[6] * (((P[0] + P[1] * yp) / (1.0 + P[2] * yp)).powf(P[4]) - P[5])
    }
}

/// PU21 image of normalized radiance, rescaled so `0 ↦ 0` and `1 ↦ 1`.
pub fn pu_domain(a: &Tensor<f32>, display: &DisplayModel) -> Tensor<f32> {
    let lo = pu21::encode(display.luminance(0.0));
    let hi = pu21::encode(display.luminance(1.0));
    a.map(|v| ((pu21::encode(display.luminance(v as f64)) - lo) / (hi - lo)) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Linear,
    Mu,
    Pu,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Mu, Domain::Pu, Domain::Linear];

    pub fn prefix(self) -> &'static str {
        match self {
            Domain::Linear => "l",
            Domain::Mu => "mu",
            Domain::Pu => "pu",
        }
    }

    pub fn encode(self, a: &Tensor<f32>, display: &DisplayModel) -> Tensor<f32> {
        match self {
            Domain::Linear => a.clone(),
            Domain::Mu => mu_domain(a),
            Domain::Pu => pu_domain(a, display),
        }
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l" | "linear" => Ok(Domain::Linear),
            "mu" => Ok(Domain::Mu),
            "pu" => Ok(Domain::Pu),
            other => Err(Error::Config(format!("unknown domain `{other}` (expected mu, pu or l)"))),
        }
    }
}

/// Parses a comma-separated domain list, keeping the given order.
pub fn parse_domains(s: &str) -> Result<Vec<Domain>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let d: Domain = part.parse()?;
        if !out.contains(&d) {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no evaluation domains given".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub domains: Vec<Domain>,
    /// Sample id → metric name → value; PSNRs in dB, `+∞` when exact.
    pub per_sample: BTreeMap<String, BTreeMap<String, f64>>,
    /// Ids present on only one side, excluded from the aggregate.
    pub missing: Vec<String>,
}

fn metric_names(domains: &[Domain]) -> Vec<String> {
    domains
        .iter()
        .flat_map(|d| [format!("{}-psnr", d.prefix()), format!("{}-ssim", d.prefix())])
        .collect()
}

fn format_value(metric: &str, v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else if metric.ends_with("psnr") {
        format!("{v:.4}")
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn metrics(&self) -> Vec<String> {
        metric_names(&self.domains)
    }

    /// Arithmetic mean per metric over evaluated samples.
    pub fn aggregate(&self) -> BTreeMap<String, f64> {
        let n = self.per_sample.len() as f64;
        self.metrics()
            .into_iter()
            .map(|m| {
                let s: f64 = self.per_sample.values().map(|v| v[&m]).sum();
                (m, s / n)
            })
            .collect()
    }

    /// Flat `<sample>.<metric> = <value>` lines, then the means.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (id, vals) in &self.per_sample {
            for m in self.metrics() {
                let _ = writeln!(out, "{id}.{m} = {}", format_value(&m, vals[&m]));
            }
        }
        if !self.per_sample.is_empty() {
            for (m, v) in self.aggregate() {
                let _ = writeln!(out, "mean.{m} = {}", format_value(&m, v));
            }
        }
        for id in &self.missing {
            let _ = writeln!(out, "missing.{id} = 1");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let metrics = self.metrics();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# SSIM: per-channel mean, Gaussian window {SSIM_WINDOW}, sigma {SSIM_SIGMA}; HDR-VDP2 not computed"
        );
        let id_w = self.per_sample.keys().map(String::len).chain([6]).max().unwrap_or(6);
        let _ = write!(out, "{:<id_w$}", "sample");
        for m in &metrics {
            let _ = write!(out, " {m:>12}");
        }
        out.push('\n');
        let row = |out: &mut String, id: &str, vals: &BTreeMap<String, f64>| {
            let _ = write!(out, "{id:<id_w$}");
            for m in &metrics {
                let _ = write!(out, " {:>12}", format_value(m, vals[m]));
            }
            out.push('\n');
        };
        for (id, vals) in &self.per_sample {
            row(&mut out, id, vals);
        }
        if !self.per_sample.is_empty() {
            row(&mut out, "mean", &self.aggregate());
        }
        for id in &self.missing {
            let _ = writeln!(out, "missing: {id}");
        }
        out
    }
}

/// Scores predictions against ground truth per sample and domain.
pub fn evaluate(
    preds: &BTreeMap<String, HdrImage>,
    gts: &BTreeMap<String, HdrImage>,
    domains: &[Domain],
    display: &DisplayModel,
) -> Result<EvalReport> {
    display.validate()?;
    let mut per_sample = BTreeMap::new();
    let mut missing = Vec::new();
    for id in gts.keys().chain(preds.keys().filter(|k| !gts.contains_key(*k))) {
        let (Some(p), Some(g)) = (preds.get(id), gts.get(id)) else {
            missing.push(id.clone());
            continue;
        };
        let mut vals = BTreeMap::new();
        for &d in domains {
            let (ep, eg) = (d.encode(p.pixels(), display), d.encode(g.pixels(), display));
            let wrap = |e: Error| Error::Sample { sample: id.clone(), reason: e.to_string() };
            vals.insert(format!("{}-psnr", d.prefix()), psnr(&ep, &eg, 1.0).map_err(wrap)?);
            vals.insert(format!("{}-ssim", d.prefix()), ssim(&ep, &eg).map_err(wrap)?);
        }
        per_sample.insert(id.clone(), vals);
    }
    missing.sort();
    Ok(EvalReport {
        domains: domains.to_vec(),
        per_sample,
        missing,
    })
}
