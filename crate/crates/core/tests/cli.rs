use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sctnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sctnet"))
        .args(args)
        .env_remove("SCTNET_SCENES")
        .env_remove("SCTNET_STEPS")
        .output()
        .expect("spawn sctnet")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn gen(dir: &Path, scenes: &str) {
    let o = sctnet(&["gen-data", "--out", s(dir), "--scenes", scenes, "--size", "16x16", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_is_reproducible() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    gen(&d.join("a"), "3");
    gen(&d.join("b"), "3");
    let (a, b) = (tree(&d.join("a")), tree(&d.join("b")));
    assert_eq!(a.len(), 3 * 6);
    assert_eq!(a, b);
}

#[test]
fn bad_mix_is_a_usage_error() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    let o = sctnet(&["gen-data", "--out", s(d), "--mix", "local=0.5,ego=0.2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sctnet(&["gen-data", "--out", s(d), "--mix", "sideways=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    let cfg = d.join("c.txt");
    std::fs::write(&cfg, "scenes = 2\nlearning_rate = 1\n").unwrap();
    let o = sctnet(&["gen-data", "--out", s(&d.join("o")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flag_beats_env_beats_file() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    let cfg = d.join("c.txt");
    std::fs::write(&cfg, "# file\nscenes = 1\nheight = 16\nwidth = 16\n").unwrap();
    let run = |env: Option<&str>, flag: Option<&str>| {
        let out = d.join("o");
        let _ = std::fs::remove_dir_all(&out);
        let mut c = Command::new(env!("CARGO_BIN_EXE_sctnet"));
        c.args(["gen-data", "--out", s(&out), "--config", s(&cfg)]);
        if let Some(f) = flag {
            c.args(["--scenes", f]);
        }
        match env {
            Some(v) => c.env("SCTNET_SCENES", v),
            None => c.env_remove("SCTNET_SCENES"),
        };
        let o = c.output().unwrap();
        assert!(o.status.success());
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(run(None, None).contains("scenes = 1\n"));
    assert!(run(Some("2"), None).contains("scenes = 2\n"));
    assert!(run(Some("2"), Some("3")).contains("scenes = 3\n"));
}

#[test]
fn train_zero_steps_writes_initial_weights() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    gen(&d.join("data"), "1");
    let ck = d.join("m.ckpt");
    let o = sctnet(&["train", "--data", s(&d.join("data")), "--model", "toy", "--steps", "0", "--ckpt-out", s(&ck)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ck.is_file());
    assert_eq!(std::fs::read_to_string(d.join("m.loss.txt")).unwrap(), "");
}

#[test]
fn training_twice_is_bit_identical() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    gen(&d.join("data"), "2");
    let run = |tag: &str| {
        let ck = d.join(format!("{tag}.ckpt"));
        let o = sctnet(&[
            "train", "--data", s(&d.join("data")), "--model", "toy", "--steps", "3", "--patch", "16", "--batch", "2",
            "--ckpt-out", s(&ck),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(&ck).unwrap(), std::fs::read(d.join(format!("{tag}.loss.txt"))).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a.1).unwrap().lines().count(), 3);
}

#[test]
fn missing_data_dir_is_a_runtime_error() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    let o = sctnet(&["train", "--data", s(&d.join("absent")), "--steps", "1", "--ckpt-out", s(&d.join("m.ckpt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn eval_ground_truth_against_itself() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    gen(&d.join("data"), "2");
    let r = d.join("report");
    let o = sctnet(&["eval", "--data", s(&d.join("data")), "--pred", s(&d.join("data")), "--report-out", s(&r)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv = std::fs::read_to_string(r.join("metrics.txt")).unwrap();
    for line in kv.lines().filter(|l| l.contains("ssim")) {
        assert!(line.ends_with("= 1.000000"), "{line}");
    }
    assert!(kv.contains("mean.mu-psnr = inf"));
    assert!(r.join("report.txt").is_file());
}

#[test]
fn eval_with_missing_prediction_exits_one() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    gen(&d.join("data"), "2");
    let pred = d.join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::copy(d.join("data/scene_0000/gt.pfm"), pred.join("scene_0000.pfm")).unwrap();
    let r = d.join("report");
    let o = sctnet(&["eval", "--data", s(&d.join("data")), "--pred", s(&pred), "--report-out", s(&r)]);
    assert_eq!(o.status.code(), Some(1));
    let kv = std::fs::read_to_string(r.join("metrics.txt")).unwrap();
    assert!(kv.contains("missing.scene_0001 = 1"));
}

#[test]
fn merge_matches_scene_shape() {
    let td = tempfile::tempdir().unwrap();
    let d = td.path();
    gen(&d.join("data"), "1");
    let out = d.join("hdr.pfm");
    let o = sctnet(&["merge", "--scene", s(&d.join("data/scene_0000")), "--model", "toy", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let img = sctnet::data::read_pfm(&out).unwrap();
    assert_eq!(img.shape(), &[3, 16, 16]);
    let png = sctnet::data::read_png(&out.with_extension("png")).unwrap();
    assert_eq!(png.shape(), &[3, 16, 16]);
}

#[test]
fn grad_check_passes() {
    let o = sctnet(&["grad-check", "--model", "toy", "--seeds", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn unknown_subcommand_is_usage() {
    assert_eq!(sctnet(&["frobnicate"]).status.code(), Some(2));
}
