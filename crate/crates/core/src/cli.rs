//! Command-line front end.
//!
//! Settings resolve as flag > `SCTNET_<KEY>` environment variable > config
//! file (`key = value`, `#` comments) > built-in default. Every command
//! prints its resolved settings before running. Exit codes: 0 success,
//! 1 runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::data::manifest::{parse_pairs, scene_dirs, GT_FILE};
use crate::data::{build_dataset, load_bracket, load_dataset, read_pfm, write_pfm, ClassMix, DatasetConfig};
use crate::data::pngio::write_png;
use crate::error::{Error, Result};
use crate::gradcheck::{full_suite, TOLERANCE};
use crate::hdrmath::{mu_law, HdrImage, MU};
use crate::loss::FeatureExtractor;
use crate::metrics::{evaluate, parse_domains, DisplayModel};
use crate::model::checkpoint::load_model;
use crate::model::macs::count_macs;
use crate::model::{ModelConfig, ModelWeights, Sctnet};
use crate::train::{train_loop, TrainConfig, TrainOutput};

pub const ENV_PREFIX: &str = "SCTNET_";

#[derive(Parser, Debug)]
#[command(name = "sctnet", version, about = "Multi-exposure HDR deghosting with window and channel attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset of scene folders.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Merge one scene into an HDR image and a preview.
    Merge(MergeArgs),
    /// Run the finite-difference gradient suite.
    GradCheck(GradCheckArgs),
    /// Print multiply-accumulate counts for a model and image size.
    Macs(MacsArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Motion class fractions, e.g. `local=0.5,ego=0.25,full=0.25`.
    #[arg(long)]
    pub mix: Option<String>,
    /// Scene size as `HxW`.
    #[arg(long)]
    pub size: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset: desk, full or toy.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Disable rotation and flip augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Final checkpoint path.
    #[arg(long, default_value = "sctnet.ckpt")]
    pub ckpt_out: PathBuf,
    /// Loss trace path; defaults to `<ckpt-out stem>.loss.txt`.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Feature stack weights for the perceptual term.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory with ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to run on every scene.
    #[arg(long, conflicts_with = "pred")]
    pub ckpt: Option<PathBuf>,
    /// Existing predictions: `<dir>/<id>.pfm`, or `<dir>/<id>/gt.pfm`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of mu, pu, l.
    #[arg(long)]
    pub domains: Option<String>,
    /// Directory for report.txt, metrics.txt and predictions.
    #[arg(long)]
    pub report_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    /// Scene folder.
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoint; without it a freshly initialized model is used.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Output PFM; the preview PNG is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Largest accepted relative error.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MacsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value = "128x128")]
    pub size: String,
}

/// A usage problem (exit 2) or a runtime failure (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

/// Merges settings from file, environment and flags; `allowed` lists the
/// keys this command understands.
pub fn resolve_settings(
    allowed: &[&str],
    file: Option<&Path>,
    flags: &[(&str, Option<String>)],
) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        for (k, v) in parse_pairs(&text, p)? {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}` in {}", p.display())));
            }
            out.insert(k, v);
        }
    }
    for k in allowed {
        if let Ok(v) = std::env::var(format!("{ENV_PREFIX}{}", k.to_uppercase())) {
            out.insert(k.to_string(), v);
        }
    }
    for (k, v) in flags {
        if let Some(v) = v {
            out.insert(k.to_string(), v.clone());
        }
    }
    Ok(out)
}

fn echo(title: &str, pairs: &[(&str, String)]) {
    println!("# {title}");
    for (k, v) in pairs {
        println!("{k} = {v}");
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("size `{s}` is not HxW")))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("size `{s}` is not HxW")));
    Ok((p(h)?, p(w)?))
}

/// Model config from a preset plus key overrides.
fn model_config(settings: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let base = ModelConfig::preset(settings.get("model").map(String::as_str).unwrap_or("desk"))?;
    let cfg = base.apply_pairs(
        settings
            .iter()
            .filter(|(k, _)| ModelConfig::KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.as_str(), v.as_str())),
    )?;
    cfg.validate()?;
    Ok(cfg)
}

fn model_keys() -> Vec<&'static str> {
    let mut k = vec!["model"];
    k.extend(ModelConfig::KEYS);
    k
}

fn gen_data(a: &GenDataArgs) -> std::result::Result<(), Failure> {
    let allowed = ["scenes", "seed", "mix", "height", "width"];
    let (h, w) = match &a.size {
        Some(s) => {
            let (h, w) = usage(parse_size(s))?;
            (Some(h.to_string()), Some(w.to_string()))
        }
        None => (None, None),
    };
    let s = usage(resolve_settings(
        &allowed,
        a.config.as_deref(),
        &[
            ("scenes", a.scenes.map(|v| v.to_string())),
            ("seed", a.seed.map(|v| v.to_string())),
            ("mix", a.mix.clone()),
            ("height", h),
            ("width", w),
        ],
    ))?;
    let mut cfg = DatasetConfig::default();
    let num = |k: &str, v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")));
    for (k, v) in &s {
        match k.as_str() {
            "scenes" => cfg.scenes = usage(num(k, v))?,
            "seed" => cfg.seed = usage(v.parse().map_err(|_| Error::Config(format!("invalid seed `{v}`"))))?,
            "mix" => cfg.mix = usage(ClassMix::parse(v))?,
            "height" => cfg.height = usage(num(k, v))?,
            "width" => cfg.width = usage(num(k, v))?,
            _ => unreachable!("filtered by resolve_settings"),
        }
    }
    usage(cfg.mix.validate())?;
    let mix = ["local", "ego", "full", "static"]
        .iter()
        .zip(cfg.mix.fractions)
        .filter(|(_, f)| *f > 0.0)
        .map(|(k, f)| format!("{k}={f}"))
        .collect::<Vec<_>>()
        .join(",");
    echo(
        "gen-data",
        &[
            ("out", a.out.display().to_string()),
            ("scenes", cfg.scenes.to_string()),
            ("seed", cfg.seed.to_string()),
            ("mix", mix),
            ("height", cfg.height.to_string()),
            ("width", cfg.width.to_string()),
        ],
    );
    let t0 = Instant::now();
    let manifests = build_dataset(&cfg, &a.out).map_err(|e| match e {
        Error::Config(_) => Failure::Usage(e),
        other => Failure::Runtime(other),
    })?;
    println!("# scenes");
    for m in &manifests {
        println!("{} motion={} light={} selected_i={} t_ref={}", m.id, m.motion, m.light, m.selected_i, m.t_ref);
    }
    println!("# wrote {} scenes in {:.2}s", manifests.len(), t0.elapsed().as_secs_f64());
    Ok(())
}

fn train(a: &TrainArgs) -> std::result::Result<(), Failure> {
    let mut allowed = model_keys();
    allowed.extend(TrainConfig::KEYS);
    let s = usage(resolve_settings(
        &allowed,
        a.config.as_deref(),
        &[
            ("model", a.model.clone()),
            ("steps", a.steps.map(|v| v.to_string())),
            ("seed", a.seed.map(|v| v.to_string())),
            ("lr", a.lr.map(|v| v.to_string())),
            ("patch", a.patch.map(|v| v.to_string())),
            ("stride", a.stride.map(|v| v.to_string())),
            ("batch", a.batch.map(|v| v.to_string())),
            ("augment", a.no_augment.then(|| "false".to_string())),
            ("checkpoint_every", a.checkpoint_every.map(|v| v.to_string())),
        ],
    ))?;
    let mut model_cfg = usage(model_config(&s))?;
    let tcfg = usage(TrainConfig::default().apply_pairs(
        s.iter()
            .filter(|(k, _)| TrainConfig::KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.as_str(), v.as_str())),
    ))?;
    usage(tcfg.validate())?;
    let init = match &a.init {
        Some(p) => {
            let (cfg, w, _) = runtime(load_model(p))?;
            model_cfg = cfg;
            Some(w)
        }
        None => None,
    };
    let trace_path = a.trace_out.clone().unwrap_or_else(|| {
        let stem = a.ckpt_out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.ckpt_out.with_file_name(format!("{stem}.loss.txt"))
    });
    let mut pairs: Vec<(&str, String)> = vec![
        ("data", a.data.display().to_string()),
        ("ckpt_out", a.ckpt_out.display().to_string()),
        ("trace_out", trace_path.display().to_string()),
    ];
    pairs.extend(model_cfg.to_pairs());
    pairs.extend(tcfg.to_pairs());
    echo("train", &pairs);

    let samples = runtime(load_dataset(&a.data))?;
    let phi = match &a.features {
        Some(p) => runtime(FeatureExtractor::<f32>::load(p))?,
        None => FeatureExtractor::<f32>::seeded(tcfg.feature_seed),
    };
    let out = TrainOutput {
        trace: Some(trace_path),
        checkpoint: Some(a.ckpt_out.clone()),
    };
    let t0 = Instant::now();
    let outcome = runtime(train_loop(&samples, &model_cfg, &tcfg, &phi, init, &out))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        println!(
            "# steps {}  loss {:.6} -> {:.6}  ({:.2}s)",
            outcome.trace.len(),
            first.loss,
            last.loss,
            t0.elapsed().as_secs_f64()
        );
    } else {
        println!("# no steps run; wrote initial weights");
    }
    Ok(())
}

fn prediction_path(dir: &Path, id: &str) -> PathBuf {
    let flat = dir.join(format!("{id}.pfm"));
    if flat.is_file() {
        flat
    } else {
        dir.join(id).join(GT_FILE)
    }
}

fn eval(a: &EvalArgs) -> std::result::Result<(), Failure> {
    let s = usage(resolve_settings(&["domains"], a.config.as_deref(), &[("domains", a.domains.clone())]))?;
    let domains = usage(parse_domains(s.get("domains").map(String::as_str).unwrap_or("mu,pu,l")))?;
    if a.ckpt.is_none() && a.pred.is_none() {
        return Err(Failure::Usage(Error::Config("eval needs --ckpt or --pred".into())));
    }
    let names: Vec<&str> = domains.iter().map(|d| d.prefix()).collect();
    echo(
        "eval",
        &[
            ("data", a.data.display().to_string()),
            ("source", a.ckpt.as_ref().or(a.pred.as_ref()).expect("checked").display().to_string()),
            ("domains", names.join(",")),
            ("report_out", a.report_out.display().to_string()),
        ],
    );
    let mut gts = BTreeMap::new();
    let mut preds = BTreeMap::new();
    let pred_dir = a.report_out.join("pred");
    runtime(std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e)))?;
    let model = match &a.ckpt {
        Some(p) => Some(runtime(load_model(p))?),
        None => None,
    };
    for dir in runtime(scene_dirs(&a.data))? {
        let (bracket, gt, m) = runtime(load_bracket(&dir))?;
        match (&model, &a.pred) {
            (Some((cfg, w, _)), _) => {
                let net = runtime(Sctnet::new(cfg, w))?;
                let pred = runtime(net.predict(&bracket))?;
                runtime(write_pfm(&pred_dir.join(format!("{}.pfm", m.id)), pred.pixels()))?;
                preds.insert(m.id.clone(), pred);
            }
            (None, Some(pdir)) => {
                let p = prediction_path(pdir, &m.id);
                if p.is_file() {
                    let img = runtime(read_pfm(&p).and_then(HdrImage::new))?;
                    preds.insert(m.id.clone(), img);
                }
            }
            (None, None) => unreachable!("checked above"),
        }
        gts.insert(m.id, gt);
    }
    let report = runtime(evaluate(&preds, &gts, &domains, &DisplayModel::default()))?;
    let text = report.to_text();
    print!("{text}");
    let write = |name: &str, body: String| {
        let p = a.report_out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    runtime(write("report.txt", text))?;
    runtime(write("metrics.txt", report.to_kv()))?;
    if !report.missing.is_empty() {
        return Err(Failure::Runtime(Error::Config(format!(
            "missing predictions for: {}",
            report.missing.join(", ")
        ))));
    }
    Ok(())
}

fn merge(a: &MergeArgs) -> std::result::Result<(), Failure> {
    let mut allowed = model_keys();
    allowed.push("seed");
    let s = usage(resolve_settings(
        &allowed,
        a.config.as_deref(),
        &[("model", a.model.clone()), ("seed", a.seed.map(|v| v.to_string()))],
    ))?;
    let seed: u64 = usage(
        s.get("seed")
            .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid seed `{v}`"))))
            .transpose(),
    )?
    .unwrap_or(0);
    let (cfg, weights) = match &a.ckpt {
        Some(p) => {
            let (c, w, _) = runtime(load_model(p))?;
            (c, w)
        }
        None => {
            let c = usage(model_config(&s))?;
            let w = runtime(ModelWeights::init(&c, seed))?;
            eprintln!("warning: no checkpoint given, using untrained weights (seed {seed})");
            (c, w)
        }
    };
    let preview = a.out.with_extension("png");
    let mut pairs: Vec<(&str, String)> = vec![
        ("scene", a.scene.display().to_string()),
        ("out", a.out.display().to_string()),
        ("preview", preview.display().to_string()),
    ];
    pairs.extend(cfg.to_pairs());
    echo("merge", &pairs);
    let (bracket, _, m) = runtime(load_bracket(&a.scene))?;
    let net = runtime(Sctnet::new(&cfg, &weights))?;
    let pred = runtime(net.predict(&bracket))?;
    runtime(write_pfm(&a.out, pred.pixels()))?;
    runtime(write_png(&preview, &mu_law(&pred, MU), 8))?;
    println!("# merged {} ({}x{})", m.id, pred.height(), pred.width());
    Ok(())
}

fn grad_check(a: &GradCheckArgs) -> std::result::Result<(), Failure> {
    let mut allowed = model_keys();
    allowed.extend(["tol", "seeds"]);
    let s = usage(resolve_settings(
        &allowed,
        a.config.as_deref(),
        &[
            ("model", a.model.clone()),
            ("tol", a.tol.map(|v| v.to_string())),
            ("seeds", a.seeds.map(|v| v.to_string())),
        ],
    ))?;
    let cfg = usage(model_config(&s))?;
    let tol: f64 = usage(
        s.get("tol")
            .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid tol `{v}`"))))
            .transpose(),
    )?
    .unwrap_or(TOLERANCE);
    let seeds: u64 = usage(
        s.get("seeds")
            .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid seeds `{v}`"))))
            .transpose(),
    )?
    .unwrap_or(3);
    if !(tol > 0.0) || seeds == 0 {
        return Err(Failure::Usage(Error::Config("tol must be positive and seeds ≥ 1".into())));
    }
    let mut pairs: Vec<(&str, String)> = vec![("tol", format!("{tol:e}")), ("seeds", seeds.to_string())];
    pairs.extend(cfg.to_pairs());
    echo("grad-check", &pairs);
    let t0 = Instant::now();
    let seed_list: Vec<u64> = (1..=seeds).collect();
    let report = runtime(full_suite(&cfg, &seed_list))?;
    for r in &report.results {
        let mark = if r.max_rel_error <= tol { "ok  " } else { "FAIL" };
        println!("{mark} {:<48} {:>6} entries  max rel err {:.3e}", r.name, r.entries, r.max_rel_error);
    }
    println!(
        "# worst {:.3e} over {} checks in {:.1}s",
        report.worst(),
        report.results.len(),
        t0.elapsed().as_secs_f64()
    );
    if !report.passed(tol) {
        return Err(Failure::Runtime(Error::Domain(format!(
            "{} checks exceed tolerance {tol:e}",
            report.failures(tol).count()
        ))));
    }
    Ok(())
}

fn macs(a: &MacsArgs) -> std::result::Result<(), Failure> {
    let s = usage(resolve_settings(&model_keys(), a.config.as_deref(), &[("model", a.model.clone())]))?;
    let cfg = usage(model_config(&s))?;
    let (h, w) = usage(parse_size(&a.size))?;
    let report = usage(count_macs(&cfg, h, w))?;
    echo("macs", &cfg.to_pairs());
    println!("{report}");
    Ok(())
}

pub fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Merge(a) => merge(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Macs(a) => macs(a),
    }
}

/// Entry point of the `sctnet` binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = run(&cli);
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e}");
            ExitCode::from(f.code())
        }
    }
}
