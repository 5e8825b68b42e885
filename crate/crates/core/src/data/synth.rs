//! Procedural scenes shot as three stop-motion poses of nine exposures each.
//!
//! Radiance is relative: every light class is centred (geometrically) on
//! 0.18 and spans `Light::span()`. Each pose is exposed at `t = 2^k` for
//! `k = −4..=4`; LDR codes are `(E·t)^(1/γ)` clipped and rounded to 16 bits.

use std::path::Path;

use rand::Rng;

use super::manifest::{save_scene, Light, Motion, SceneManifest, GT_FILE, INPUT_FILES};
use crate::error::{Error, Result};
use crate::hdrmath::{
    blend, debevec_merge, gamma_project, mu_law, theoretical_max, triangle_weights, HdrImage,
    LdrBracket, LdrImage, GAMMA, MU,
};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Exposure offsets of one pose, in stops.
pub const STACK_EV: [i32; 9] = [-4, -3, -2, -1, 0, 1, 2, 3, 4];
pub const REFERENCE_INDEX: usize = 4;
pub const MIDDLE_GREY: f64 = 0.18;
pub const DEFAULT_SIZE: (usize, usize) = (128, 192);
/// μ-law MSE differences below this count as ties in bracket selection.
pub const SELECTION_TIE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    /// Cycles per pixel along y and x.
    pub frequency: [f64; 2],
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    /// Level at the image centre, in `[0, 1]` of the scene's log range.
    pub base: f64,
    /// Change in level across the full height and width.
    pub gradient: [f64; 2],
    pub waves: Vec<Wave>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Disc,
    Rect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub shape: Shape,
    /// Half height and half width; a disc uses the first as radius.
    pub half: [f64; 2],
    pub level: f64,
    /// Centre in world coordinates for each pose.
    pub centers: [[f64; 2]; 3],
}

impl Sprite {
    fn covers(&self, pose: usize, y: f64, x: f64) -> bool {
        let [cy, cx] = self.centers[pose];
        match self.shape {
            Shape::Disc => (y - cy).powi(2) + (x - cx).powi(2) <= self.half[0].powi(2),
            Shape::Rect => (y - cy).abs() <= self.half[0] && (x - cx).abs() <= self.half[1],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub motion: Motion,
    pub light: Light,
    pub background: Background,
    /// Painted in order, later sprites on top.
    pub sprites: Vec<Sprite>,
    /// Integer camera translation per pose, `[dy, dx]`; the frame at pose
    /// `s` shows world pixel `(y + dy, x + dx)`.
    pub camera: [[i64; 2]; 3],
    /// Per-channel level offsets.
    pub tint: [f64; 3],
}

impl SyntheticSceneSpec {
    /// A random scene of the given classes.
    pub fn random(seed: u64, height: usize, width: usize, motion: Motion, light: Light) -> Self {
        let mut r = rng::stream(seed, Stream::Scene);
        let (h, w) = (height as f64, width as f64);
        let small = h.min(w);
        let background = Background {
            base: r.gen_range(0.35..0.65),
            gradient: [r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6)],
            waves: (0..3)
                .map(|_| Wave {
                    amplitude: r.gen_range(0.02..0.08),
                    frequency: [r.gen_range(0.01..0.15), r.gen_range(0.01..0.15)],
                    phase: r.gen_range(0.0..std::f64::consts::TAU),
                })
                .collect(),
        };
        let camera = if motion.moves_camera() {
            let reach = (small / 16.0).max(2.0) as i64;
            let mut shift = || [r.gen_range(-reach..=reach), r.gen_range(-reach..=reach)];
            let (a, b) = (shift(), shift());
            [a, [0, 0], b]
        } else {
            [[0, 0]; 3]
        };
        let count = r.gen_range(2..=4);
        let travel = small / 8.0;
        let sprites = (0..count)
            .map(|k| {
                let shape = if r.gen_bool(0.5) { Shape::Disc } else { Shape::Rect };
                let half = [r.gen_range(0.06..0.16) * small, r.gen_range(0.06..0.16) * small];
                let level = match k {
                    0 => r.gen_range(0.9..1.0),
                    1 => r.gen_range(0.0..0.1),
                    _ => r.gen_range(0.0..1.0),
                };
                // Keep the sprite inside every pose's frame.
                let ext = half[0].max(half[1]);
                let margin_y = ext + travel + camera.iter().map(|c| c[0].abs()).max().unwrap_or(0) as f64 + 1.0;
                let margin_x = ext + travel + camera.iter().map(|c| c[1].abs()).max().unwrap_or(0) as f64 + 1.0;
                let pick = |r: &mut rng::StreamRng, lo: f64, hi: f64| {
                    if lo < hi { r.gen_range(lo..hi) } else { (lo + hi) / 2.0 }
                };
                let centre = [pick(&mut r, margin_y, h - margin_y), pick(&mut r, margin_x, w - margin_x)];
                let centers = if motion.moves_sprites() {
                    let mut step = || [r.gen_range(-travel..=travel), r.gen_range(-travel..=travel)];
                    let (a, b) = (step(), step());
                    [[centre[0] + a[0], centre[1] + a[1]], centre, [centre[0] + b[0], centre[1] + b[1]]]
                } else {
                    [centre; 3]
                };
                Sprite { shape, half, level, centers }
            })
            .collect();
        let tint = [r.gen_range(-0.04..0.04), 0.0, r.gen_range(-0.04..0.04)];
        let mut spec = Self {
            seed,
            height,
            width,
            motion,
            light,
            background,
            sprites,
            camera,
            tint,
        };
        // Frames too small for a sprite's travel simply lose that sprite.
        let keep: Vec<bool> = spec.sprites.iter().map(|s| spec.in_frame(s)).collect();
        let mut it = keep.into_iter();
        spec.sprites.retain(|_| it.next().unwrap_or(false));
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(format!("scene {}: {m}", self.seed)));
        if self.height == 0 || self.width == 0 {
            return fail("empty frame".into());
        }
        for (k, s) in self.sprites.iter().enumerate() {
            if !(s.level.is_finite() && s.half.iter().all(|v| *v > 0.0)) {
                return fail(format!("sprite {k} is degenerate"));
            }
            if !self.in_frame(s) {
                return fail(format!("sprite {k} leaves the frame"));
            }
        }
        let still = self.camera.iter().all(|c| *c == [0, 0]);
        let fixed = self.sprites.iter().all(|s| s.centers[0] == s.centers[1] && s.centers[1] == s.centers[2]);
        let ok = match self.motion {
            Motion::Static => still && fixed,
            Motion::Local => still,
            Motion::Ego => fixed,
            Motion::Full => true,
        };
        if !ok {
            return fail(format!("poses contradict motion class {}", self.motion));
        }
        Ok(())
    }

    fn in_frame(&self, s: &Sprite) -> bool {
        let ext = match s.shape {
            Shape::Disc => [s.half[0]; 2],
            Shape::Rect => s.half,
        };
        (0..3).all(|pose| {
            let cy = s.centers[pose][0] - self.camera[pose][0] as f64;
            let cx = s.centers[pose][1] - self.camera[pose][1] as f64;
            cy - ext[0] >= 0.0
                && cy + ext[0] <= self.height as f64 - 1.0
                && cx - ext[1] >= 0.0
                && cx + ext[1] <= self.width as f64 - 1.0
        })
    }

    fn level(&self, pose: usize, y: f64, x: f64) -> f64 {
        if let Some(s) = self.sprites.iter().rev().find(|s| s.covers(pose, y, x)) {
            return s.level;
        }
        let b = &self.background;
        let mut u = b.base
            + b.gradient[0] * (y / self.height as f64 - 0.5)
            + b.gradient[1] * (x / self.width as f64 - 0.5);
        for wv in &b.waves {
            u += wv.amplitude
                * (std::f64::consts::TAU * (wv.frequency[0] * y + wv.frequency[1] * x) + wv.phase).sin();
        }
        u
    }

    /// Radiance seen by the camera at `pose`.
    pub fn render(&self, pose: usize) -> HdrImage {
        let (h, w) = (self.height, self.width);
        let [dy, dx] = self.camera[pose];
        let span = self.light.span();
        let mut data = vec![0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let u = self.level(pose, (y as i64 + dy) as f64, (x as i64 + dx) as f64);
                for c in 0..3 {
                    let uc = (u + self.tint[c]).clamp(0.0, 1.0);
                    data[(c * h + y) * w + x] = (MIDDLE_GREY * span.powf(uc - 0.5)) as f32;
                }
            }
        }
        HdrImage::new(Tensor::new([3, h, w], data).expect("shape")).expect("positive radiance")
    }
}

/// One LDR exposure of a radiance map, quantized to 16 bits.
pub fn expose(radiance: &HdrImage, exposure_time: f64, ev: f64, gamma: f64) -> LdrImage {
    let px = radiance.pixels().map(|e| {
        let l = (e as f64 * exposure_time).powf(1.0 / gamma).clamp(0.0, 1.0);
        ((l * 65535.0).round() / 65535.0) as f32
    });
    LdrImage::new(px, exposure_time, ev).expect("positive exposure")
}

/// The nine-exposure stack of one radiance map, shortest first.
pub fn expose_stack(radiance: &HdrImage, gamma: f64) -> Vec<LdrImage> {
    STACK_EV
        .iter()
        .map(|&k| expose(radiance, (k as f64).exp2(), k as f64, gamma))
        .collect()
}

pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub radiance: [HdrImage; 3],
    pub stacks: [Vec<LdrImage>; 3],
}

pub fn synthesize_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let radiance: [HdrImage; 3] = std::array::from_fn(|p| spec.render(p));
    let stacks = std::array::from_fn(|p| expose_stack(&radiance[p], GAMMA));
    Ok(SyntheticScene {
        spec: spec.clone(),
        radiance,
        stacks,
    })
}

fn mu_mse(a: &HdrImage, b: &HdrImage) -> f64 {
    let (ta, tb) = (mu_law(a, MU), mu_law(b, MU));
    let n = ta.len() as f64;
    ta.data()
        .iter()
        .zip(tb.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / n
}

/// Three-exposure blend of `stack[reference − i]`, `stack[reference]` and
/// `stack[reference + i]`, normalized by its own theoretical maximum.
pub fn blend_three(stack: &[LdrImage], reference: usize, i: usize) -> Result<HdrImage> {
    let trio = [&stack[reference - i], &stack[reference], &stack[reference + i]];
    let proj = trio.map(|l| gamma_project(l, GAMMA));
    let weights = triangle_weights(trio[1]);
    let merged = blend([&proj[0], &proj[1], &proj[2]], weights.as_array())?;
    Ok(merged.scaled(trio[0].exposure_time()))
}

/// Picks the bracket spacing whose three-exposure blend is closest, in the
/// μ-law domain, to the merge of the full stack. Scores within
/// [`SELECTION_TIE`] of the best tie, and ties keep the smaller spacing. Returns the normalized blend and the spacing.
pub fn make_ground_truth(stack: &[LdrImage], reference: usize) -> Result<(HdrImage, u32)> {
    if stack.len() < 9 {
        return Err(Error::Domain(format!(
            "ground truth needs 9 exposures, got {}",
            stack.len()
        )));
    }
    if reference >= stack.len() {
        return Err(Error::Domain(format!("reference index {reference} out of range")));
    }
    let times: Vec<f64> = stack.iter().map(LdrImage::exposure_time).collect();
    if times.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Domain("stack must be sorted by increasing exposure".into()));
    }
    let full_scale = 1.0 / theoretical_max(stack)?;
    let full = debevec_merge(stack, GAMMA)?.scaled(full_scale);
    let reach = reference.min(stack.len() - 1 - reference).min(4);
    if reach == 0 {
        return Err(Error::Domain("reference has no room for a bracket".into()));
    }
    let mut candidates = Vec::with_capacity(reach);
    for i in 1..=reach {
        let gt = blend_three(stack, reference, i)?;
        // Compare both in the full stack's normalization.
        let score = mu_mse(&gt.scaled(full_scale / stack[reference - i].exposure_time()), &full);
        candidates.push((score, gt));
    }
    let best = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let i = candidates
        .iter()
        .position(|c| c.0 <= best + SELECTION_TIE)
        .expect("at least one spacing");
    let gt = candidates.swap_remove(i).1;
    let i = i + 1;
    Ok((gt, i as u32))
}

/// Input bracket for spacing `i`: short from pose 0, reference from pose 1,
/// long from pose 2. Times are rescaled so the short exposure has `t = 1`,
/// which puts the inputs in the ground truth's normalization.
pub fn input_bracket(scene: &SyntheticScene, i: usize) -> Result<LdrBracket> {
    let r = REFERENCE_INDEX;
    let picks = [(0, r - i), (1, r), (2, r + i)];
    let base = scene.stacks[0][r - i].exposure_time();
    let imgs = picks.map(|(pose, k)| {
        let src = &scene.stacks[pose][k];
        LdrImage::new(src.pixels().clone(), src.exposure_time() / base, STACK_EV[k] as f64 - STACK_EV[r] as f64)
    });
    let [a, b, c] = imgs;
    LdrBracket::new(a?, b?, c?)
}

/// Fractions of each motion class in a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMix {
    pub fractions: [f64; 4],
}

impl Default for ClassMix {
    /// Equal thirds of local, ego and full motion.
    fn default() -> Self {
        Self {
            fractions: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
        }
    }
}

impl ClassMix {
    /// Parses `local=0.5,ego=0.25,full=0.25`; unnamed classes get zero.
    pub fn parse(s: &str) -> Result<Self> {
        let mut fractions = [0.0; 4];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("mix entry `{part}` is not class=fraction")))?;
            let m: Motion = k.trim().parse()?;
            let f: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("mix fraction `{v}` is not a number")))?;
            fractions[m as usize] = f;
        }
        let mix = Self { fractions };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config("mix fractions must be non-negative".into()));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mix fractions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Scene count per class by largest remainder, ties to the earlier class.
    pub fn counts(&self, n: usize) -> [usize; 4] {
        let exact = self.fractions.map(|f| f * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut order = [0usize, 1, 2, 3];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = n - counts.iter().sum::<usize>();
        for k in order.into_iter().cycle() {
            if left == 0 {
                break;
            }
            if self.fractions[k] > 0.0 {
                counts[k] += 1;
                left -= 1;
            }
        }
        counts
    }

    /// Motion class of every scene, interleaved round-robin.
    pub fn schedule(&self, n: usize) -> Vec<Motion> {
        let mut left = self.counts(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            for (k, m) in Motion::ALL.iter().enumerate() {
                if left[k] > 0 {
                    left[k] -= 1;
                    out.push(*m);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub mix: ClassMix,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenes: 6,
            mix: ClassMix::default(),
            seed: 0,
            height: DEFAULT_SIZE.0,
            width: DEFAULT_SIZE.1,
        }
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Scene `index` of a dataset: spec, inputs, ground truth and manifest.
pub fn make_sample(cfg: &DatasetConfig, index: usize, motion: Motion, light: Light) -> Result<(SceneManifest, LdrBracket, HdrImage)> {
    let spec = SyntheticSceneSpec::random(rng::derive(cfg.seed, index as u64), cfg.height, cfg.width, motion, light);
    let scene = synthesize_scene(&spec)?;
    let (gt, i) = make_ground_truth(&scene.stacks[1], REFERENCE_INDEX)?;
    let bracket = input_bracket(&scene, i as usize)?;
    let manifest = SceneManifest {
        id: scene_id(index),
        motion,
        light,
        t_ref: bracket.reference().exposure_time(),
        selected_i: i,
        ev: [-(i as f64), 0.0, i as f64],
        inputs: INPUT_FILES.map(String::from),
        gt: GT_FILE.into(),
    };
    Ok((manifest, bracket, gt))
}

/// Writes `cfg.scenes` scene folders under `out`.
pub fn build_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Vec<SceneManifest>> {
    cfg.mix.validate()?;
    if cfg.height < 8 || cfg.width < 8 {
        return Err(Error::Config(format!("scene size {}×{} is below 8×8", cfg.height, cfg.width)));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let motions = cfg.mix.schedule(cfg.scenes);
    let mut seen = [0usize; 4];
    let mut manifests = Vec::with_capacity(cfg.scenes);
    for (j, &motion) in motions.iter().enumerate() {
        let k = seen[motion as usize];
        seen[motion as usize] += 1;
        let light = Light::ALL[(k + motion as usize) % 3];
        let (m, bracket, gt) = make_sample(cfg, j, motion, light)?;
        save_scene(out, &m, &bracket, &gt)?;
        manifests.push(m);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(motion: Motion, light: Light, seed: u64) -> SyntheticScene {
        synthesize_scene(&SyntheticSceneSpec::random(seed, 40, 48, motion, light)).unwrap()
    }

    #[test]
    fn static_poses_are_identical() {
        let s = scene(Motion::Static, Light::Sunset, 3);
        assert_eq!(s.radiance[0], s.radiance[1]);
        assert_eq!(s.radiance[1], s.radiance[2]);
        assert_eq!(s.stacks[0], s.stacks[2]);
    }

    #[test]
    fn ego_poses_are_translations() {
        let s = scene(Motion::Ego, Light::Day, 5);
        let [dy, dx] = s.spec.camera[0];
        assert_ne!([dy, dx], [0, 0]);
        let (h, w) = (40i64, 48i64);
        let (a, b) = (s.radiance[0].pixels(), s.radiance[1].pixels());
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = (y + dy, x + dx);
                    if (0..h).contains(&sy) && (0..w).contains(&sx) {
                        let ia = ((c * h + y) * w + x) as usize;
                        let ib = ((c * h + sy) * w + sx) as usize;
                        assert_eq!(a.data()[ia], b.data()[ib]);
                    }
                }
            }
        }
    }

    #[test]
    fn re_exposure_reproduces_the_stack() {
        let s = scene(Motion::Full, Light::Night, 9);
        for p in 0..3 {
            assert_eq!(expose_stack(&s.radiance[p], GAMMA), s.stacks[p]);
        }
    }

    #[test]
    fn wide_scenes_pick_wider_brackets() {
        let day = scene(Motion::Static, Light::Day, 2);
        let night = scene(Motion::Static, Light::Night, 2);
        let (_, i_day) = make_ground_truth(&day.stacks[1], REFERENCE_INDEX).unwrap();
        let (_, i_night) = make_ground_truth(&night.stacks[1], REFERENCE_INDEX).unwrap();
        assert!(i_night > i_day, "day {i_day}, night {i_night}");
    }

    #[test]
    fn flat_scene_ties_to_the_smallest_spacing() {
        let flat = HdrImage::new(Tensor::full([3, 6, 6], 0.18)).unwrap();
        let (_, i) = make_ground_truth(&expose_stack(&flat, GAMMA), REFERENCE_INDEX).unwrap();
        assert_eq!(i, 1);
    }

    #[test]
    fn ground_truth_lies_in_the_blend_hull() {
        let s = scene(Motion::Local, Light::Sunset, 4);
        let (gt, i) = make_ground_truth(&s.stacks[1], REFERENCE_INDEX).unwrap();
        let i = i as usize;
        let t0 = s.stacks[1][REFERENCE_INDEX - i].exposure_time();
        let proj = [REFERENCE_INDEX - i, REFERENCE_INDEX, REFERENCE_INDEX + i]
            .map(|k| gamma_project(&s.stacks[1][k], GAMMA).scaled(t0));
        for (p, v) in gt.pixels().data().iter().enumerate() {
            let vals = proj.each_ref().map(|h| h.pixels().data()[p]);
            let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6);
        }
        assert!(gt.pixels().data().iter().all(|v| *v <= 1.0));
    }

    #[test]
    fn small_frames_still_validate() {
        for seed in 0..20 {
            for m in Motion::ALL {
                SyntheticSceneSpec::random(seed, 8, 9, m, Light::Day).validate().unwrap();
            }
        }
    }

    #[test]
    fn too_short_stack_is_rejected() {
        let s = scene(Motion::Static, Light::Day, 1);
        assert!(make_ground_truth(&s.stacks[1][..8], 4).is_err());
    }

    #[test]
    fn mix_counts_and_schedule() {
        let mix = ClassMix::default();
        assert_eq!(mix.counts(6), [2, 2, 2, 0]);
        assert_eq!(mix.counts(7), [3, 2, 2, 0]);
        assert_eq!(
            mix.schedule(4),
            vec![Motion::Local, Motion::Ego, Motion::Full, Motion::Local]
        );
        let m = ClassMix::parse("static=1").unwrap();
        assert_eq!(m.counts(3), [0, 0, 0, 3]);
        assert!(ClassMix::parse("local=0.5,ego=0.2").is_err());
        assert!(ClassMix::parse("local=2,ego=-1").is_err());
        assert!(ClassMix::parse("sideways=1").is_err());
    }

    #[test]
    fn input_bracket_is_normalized_to_the_short_exposure() {
        let s = scene(Motion::Local, Light::Night, 6);
        let b = input_bracket(&s, 3).unwrap();
        assert_eq!(b.short().exposure_time(), 1.0);
        assert_eq!(b.reference().exposure_time(), 8.0);
        assert_eq!(b.long().exposure_time(), 64.0);
        assert_eq!(b.short().pixels(), s.stacks[0][1].pixels());
        assert_eq!(b.long().pixels(), s.stacks[2][7].pixels());
    }
}
