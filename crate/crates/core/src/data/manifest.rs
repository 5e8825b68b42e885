//! Scene folders and their manifests.
//!
//! ```text
//! <id>/input_1.png input_2.png input_3.png   16-bit RGB exposures
//!      exposure.txt                           one log2 EV offset per input
//!      gt.pfm                                 normalized ground truth
//!      manifest.txt                           id, motion, light, t_ref, selected_i
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{pfm, pngio};
use crate::error::{Error, Result};
use crate::hdrmath::{HdrImage, LdrBracket, LdrImage};

pub const INPUT_FILES: [&str; 3] = ["input_1.png", "input_2.png", "input_3.png"];
pub const EXPOSURE_FILE: &str = "exposure.txt";
pub const GT_FILE: &str = "gt.pfm";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Motion {
    Local,
    Ego,
    Full,
    Static,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Local, Motion::Ego, Motion::Full, Motion::Static];

    pub fn as_str(self) -> &'static str {
        match self {
            Motion::Local => "local",
            Motion::Ego => "ego",
            Motion::Full => "full",
            Motion::Static => "static",
        }
    }

    pub fn moves_camera(self) -> bool {
        matches!(self, Motion::Ego | Motion::Full)
    }

    pub fn moves_sprites(self) -> bool {
        matches!(self, Motion::Local | Motion::Full)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Light {
    Day,
    Sunset,
    Night,
}

impl Light {
    pub const ALL: [Light; 3] = [Light::Day, Light::Sunset, Light::Night];

    pub fn as_str(self) -> &'static str {
        match self {
            Light::Day => "day",
            Light::Sunset => "sunset",
            Light::Night => "night",
        }
    }

    /// Ratio between the brightest and darkest scene radiance.
    pub fn span(self) -> f64 {
        match self {
            Light::Day => 16.0,
            Light::Sunset => 128.0,
            Light::Night => 1024.0,
        }
    }
}

macro_rules! text_enum {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                <$t>::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::Config(format!(concat!("unknown ", $what, " class `{}`"), s)))
            }
        }
    };
}

text_enum!(Motion, "motion");
text_enum!(Light, "light");

#[derive(Clone, Debug, PartialEq)]
pub struct SceneManifest {
    pub id: String,
    pub motion: Motion,
    pub light: Light,
    /// Exposure time of the reference input.
    pub t_ref: f64,
    /// Bracket spacing `i` chosen for the ground truth (EV offsets `−i, 0, +i`).
    pub selected_i: u32,
    /// Log2 offsets of the three inputs from the reference, ascending.
    pub ev: [f64; 3],
    pub inputs: [String; 3],
    pub gt: String,
}

impl SceneManifest {
    pub fn exposure_times(&self) -> [f64; 3] {
        self.ev.map(|e| self.t_ref * e.exp2())
    }

    pub fn to_text(&self) -> String {
        format!(
            "id = {}\nmotion = {}\nlight = {}\nt_ref = {}\nselected_i = {}\n",
            self.id, self.motion, self.light, self.t_ref, self.selected_i
        )
    }

    pub fn exposure_text(&self) -> String {
        self.ev.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_pairs(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(path, format!("line {}: expected `key = value`", n + 1))
        })?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::format(path, format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One loaded scene.
#[derive(Clone, Debug)]
pub struct Sample {
    pub manifest: SceneManifest,
    pub bracket: LdrBracket,
    pub gt: HdrImage,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.manifest.id
    }
}

fn sample_err(id: &str, reason: impl fmt::Display) -> Error {
    Error::Sample {
        sample: id.to_string(),
        reason: reason.to_string(),
    }
}

/// Reads only the manifest and exposure offsets of a scene folder.
pub fn read_manifest(dir: &Path) -> Result<SceneManifest> {
    let fallback = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let path = dir.join(MANIFEST_FILE);
    let text = read_text(&path).map_err(|e| sample_err(&fallback, e))?;
    let pairs = parse_pairs(&text, &path).map_err(|e| sample_err(&fallback, e))?;
    let get = |k: &str| {
        pairs
            .get(k)
            .ok_or_else(|| sample_err(&fallback, format!("manifest lacks `{k}`")))
    };
    let id = get("id")?.clone();
    let err = |m: String| sample_err(&id, m);
    for k in pairs.keys() {
        if !["id", "motion", "light", "t_ref", "selected_i"].contains(&k.as_str()) {
            return Err(err(format!("unknown manifest key `{k}`")));
        }
    }
    let motion = get("motion")?.parse().map_err(|e| err(format!("{e}")))?;
    let light = get("light")?.parse().map_err(|e| err(format!("{e}")))?;
    let t_ref: f64 = get("t_ref")?
        .parse()
        .map_err(|_| err("t_ref is not a number".into()))?;
    if !(t_ref > 0.0 && t_ref.is_finite()) {
        return Err(err(format!("t_ref must be positive, got {t_ref}")));
    }
    let selected_i = get("selected_i")?
        .parse()
        .map_err(|_| err("selected_i is not an integer".into()))?;

    let epath = dir.join(EXPOSURE_FILE);
    let etext = read_text(&epath).map_err(|e| err(e.to_string()))?;
    let offsets: Vec<f64> = etext
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| err(format!("bad EV offset `{s}`"))))
        .collect::<Result<_>>()?;
    if offsets.len() != 3 {
        return Err(err(format!("expected 3 EV offsets, found {}", offsets.len())));
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| offsets[a].total_cmp(&offsets[b]));
    let ev = order.map(|k| offsets[k]);
    if !(ev[0] < ev[1] && ev[1] < ev[2]) {
        return Err(err(format!("EV offsets {offsets:?} are not distinct")));
    }
    Ok(SceneManifest {
        id,
        motion,
        light,
        t_ref,
        selected_i,
        ev,
        inputs: order.map(|k| INPUT_FILES[k].to_string()),
        gt: GT_FILE.to_string(),
    })
}

/// Loads a scene folder, inputs sorted by exposure.
pub fn load_bracket(dir: &Path) -> Result<(LdrBracket, HdrImage, SceneManifest)> {
    let m = read_manifest(dir)?;
    let err = |e: Error| sample_err(&m.id, e);
    let times = m.exposure_times();
    let mut imgs = Vec::with_capacity(3);
    for k in 0..3 {
        let pixels = pngio::read_png(&dir.join(&m.inputs[k])).map_err(err)?;
        imgs.push(LdrImage::new(pixels, times[k], m.ev[k]).map_err(err)?);
    }
    let [a, b, c]: [LdrImage; 3] = imgs.try_into().expect("three inputs");
    let bracket = LdrBracket::new(a, b, c).map_err(err)?;
    let gt_pixels = pfm::read_pfm(&dir.join(&m.gt)).map_err(err)?;
    if gt_pixels.shape() != bracket.reference().pixels().shape() {
        return Err(sample_err(
            &m.id,
            format!(
                "ground truth {:?} does not match inputs {:?}",
                gt_pixels.shape(),
                bracket.reference().pixels().shape()
            ),
        ));
    }
    let gt = HdrImage::new(gt_pixels).map_err(err)?;
    Ok((bracket, gt, m))
}

/// Scene folders under `root` (those holding a manifest), sorted by name.
pub fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every scene under `root`. Each folder must be named after its id.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for dir in scene_dirs(root)? {
        let (bracket, gt, manifest) = load_bracket(&dir)?;
        let folder = dir.file_name().map(|s| s.to_string_lossy().into_owned());
        if folder.as_deref() != Some(manifest.id.as_str()) {
            return Err(sample_err(
                &manifest.id,
                format!("manifest id does not match folder {}", dir.display()),
            ));
        }
        out.push(Sample { manifest, bracket, gt });
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no scenes found under {}", root.display())));
    }
    Ok(out)
}

/// Writes a scene folder. The bracket must be in ascending exposure order.
pub fn save_scene(root: &Path, manifest: &SceneManifest, bracket: &LdrBracket, gt: &HdrImage) -> Result<PathBuf> {
    let dir = root.join(&manifest.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (k, img) in bracket.images().iter().enumerate() {
        pngio::write_png(&dir.join(INPUT_FILES[k]), img.pixels(), 16)?;
    }
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(EXPOSURE_FILE, manifest.exposure_text())?;
    write(MANIFEST_FILE, manifest.to_text())?;
    pfm::write_pfm(&dir.join(GT_FILE), gt.pixels())?;
    Ok(dir)
}
