//! End-to-end binary tests: the exit-code contract and command composition.

use nowa_cli::io;
use nowa_core::synth::synthetic_scene;
use nowa_core::SecretKey;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nowa")
}

struct Workdir {
    dir: PathBuf,
}

impl Workdir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("nowa-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_key(&self, name: &str, seed: u8) -> PathBuf {
        let p = self.path(name);
        io::save_key(&SecretKey::from_seed([seed; 32]), &p).unwrap();
        p
    }

    fn write_scene(&self, name: &str, seed: u64) -> PathBuf {
        let p = self.path(name);
        io::save_png(&synthetic_scene(3, 256, 256, seed), &p, 16).unwrap();
        p
    }

    /// Default camera with the shipped design inlined.
    fn write_config(&self, name: &str, extra: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(
            &p,
            format!(
                "[optics]\nzernike = [0.0, 0.0, 0.0, 1.2e-8, 0.0, 7.0e-9, 0.0, -1.0e-9, 0.0, 0.0, 2.64e-7, 2.0e-9]\n{extra}"
            ),
        )
        .unwrap();
        p
    }
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn nowa");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn keygen_writes_32_bytes() {
    let w = Workdir::new("keygen");
    let out = w.path("k.key");
    let (code, stdout, _) = run(&["keygen", "--out", &s(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("fingerprint"));
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 32);
}

#[test]
fn config_errors_exit_2() {
    let w = Workdir::new("cfg");
    let bad = w.path("bad.toml");
    std::fs::write(&bad, "[optics]\nnot_a_key = true\n").unwrap();
    let (code, _, stderr) = run(&[
        "psf",
        "--config",
        &s(&bad),
        "--out",
        &s(&w.path("psf.nwf")),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn wrong_key_length_exits_2() {
    let w = Workdir::new("badkey");
    let cfg = w.write_config("c.toml", "");
    let key = w.path("short.key");
    std::fs::write(&key, [0u8; 31]).unwrap();
    let scene = w.write_scene("scene.png", 1);
    let (code, _, _) = run(&[
        "protect",
        "--config",
        &s(&cfg),
        "--key",
        &s(&key),
        "--in",
        &s(&scene),
        "--out",
        &s(&w.path("p.png")),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn missing_input_exits_5() {
    let w = Workdir::new("noinput");
    let cfg = w.write_config("c.toml", "");
    let key = w.write_key("k.key", 9);
    let (code, _, _) = run(&[
        "protect",
        "--config",
        &s(&cfg),
        "--key",
        &s(&key),
        "--in",
        &s(&w.path("missing.png")),
        "--out",
        &s(&w.path("p.png")),
    ]);
    assert_eq!(code, 5);
}

#[test]
fn psf_clipping_exits_3() {
    let w = Workdir::new("clip");
    // Defocus far beyond the crop guard.
    let cfg = w.path("c.toml");
    std::fs::write(
        &cfg,
        "[optics]\npupil_samples = 128\nmask_width = 1.4175e-3\nkernel_size = 32\nzernike = [0.0, 0.0, 0.0, 3.0e-6]\n",
    )
    .unwrap();
    let (code, _, stderr) = run(&[
        "psf",
        "--config",
        &s(&cfg),
        "--out",
        &s(&w.path("psf.nwf")),
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("psf clipping"));
}

#[test]
fn protect_verify_tamper_cycle() {
    let w = Workdir::new("cycle");
    let cfg = w.write_config("c.toml", "");
    let key = w.write_key("k.key", 5);
    let scene = w.write_scene("scene.png", 2);
    let donor = w.write_scene("donor.png", 3);
    let protected = w.path("protected.png");
    let meta = w.path("bundle.json");

    let (code, _, stderr) = run(&[
        "protect",
        "--config",
        &s(&cfg),
        "--key",
        &s(&key),
        "--in",
        &s(&scene),
        "--out",
        &s(&protected),
        "--meta",
        &s(&meta),
    ]);
    assert_eq!(code, 0, "protect failed: {stderr}");
    let meta_json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&meta).unwrap()).unwrap();
    assert!(meta_json["leakage"].as_f64().unwrap() <= 1e-3);
    assert_eq!(meta_json["format_version"], 1);

    // Authentic verification exits 0 and writes the report.
    let report = w.path("verify.json");
    let (code, _, stderr) = run(&[
        "verify",
        "--config",
        &s(&cfg),
        "--key",
        &s(&key),
        "--in",
        &s(&protected),
        "--map",
        &s(&w.path("map.png")),
        "--report",
        &s(&report),
    ]);
    assert_eq!(code, 0, "verify failed: {stderr}");
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["authentic"], true);
    assert_eq!(rep["schema_version"], 1);

    // Splice through the attack command, then verify -> exit 10.
    let manifest = w.path("attacks.json");
    std::fs::write(
        &manifest,
        format!(
            r#"[{{"kind": "splice", "region": {{"shape": "rect", "top": 60, "left": 60, "height": 120, "width": 120}}, "donor": {:?}}}]"#,
            s(&donor)
        ),
    )
    .unwrap();
    let outdir = w.path("attacked");
    let (code, _, stderr) = run(&[
        "attack",
        "--in",
        &s(&protected),
        "--manifest",
        &s(&manifest),
        "--outdir",
        &s(&outdir),
    ]);
    assert_eq!(code, 0, "attack failed: {stderr}");

    let treport = w.path("tampered.json");
    let (code, _, stderr) = run(&[
        "verify",
        "--config",
        &s(&cfg),
        "--key",
        &s(&key),
        "--in",
        &s(&outdir.join("000_image.png")),
        "--gt",
        &s(&outdir.join("000_mask.png")),
        "--report",
        &s(&treport),
    ]);
    assert_eq!(code, 10, "tampered verify: {stderr}");
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&treport).unwrap()).unwrap();
    assert_eq!(rep["authentic"], false);
    assert!(rep["metrics"]["auc"].as_f64().unwrap() > 0.8);

    // Wrong key -> exit 10.
    let other = w.write_key("other.key", 77);
    let (code, _, _) = run(&[
        "verify",
        "--config",
        &s(&cfg),
        "--key",
        &s(&other),
        "--in",
        &s(&protected),
        "--report",
        &s(&w.path("wrong.json")),
    ]);
    assert_eq!(code, 10);
}

#[test]
fn export_mask_writes_grid_csv() {
    let w = Workdir::new("export");
    let cfg = w.write_config("c.toml", "");
    let out = w.path("height.csv");
    let (code, _, stderr) = run(&[
        "export-mask",
        "--config",
        &s(&cfg),
        "--levels",
        "6",
        "--step",
        "200e-9",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 256);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 256);
}

#[test]
fn export_zero_mask_is_all_zero() {
    let w = Workdir::new("exportzero");
    let cfg = w.path("c.toml");
    std::fs::write(
        &cfg,
        "[optics]\npupil_samples = 128\nmask_width = 1.4175e-3\nkernel_size = 32\n",
    )
    .unwrap();
    let out = w.path("zero.csv");
    let (code, _, _) = run(&[
        "export-mask",
        "--config",
        &s(&cfg),
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    for line in text.lines() {
        for field in line.split(',') {
            assert_eq!(field.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn psf_outputs_are_deterministic() {
    let w = Workdir::new("psfdet");
    let cfg = w.write_config("c.toml", "");
    let out1 = w.path("a.nwf");
    let out2 = w.path("b.nwf");
    assert_eq!(run(&["psf", "--config", &s(&cfg), "--out", &s(&out1)]).0, 0);
    assert_eq!(run(&["psf", "--config", &s(&cfg), "--out", &s(&out2)]).0, 0);
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn saturated_scene_exits_4() {
    let w = Workdir::new("saturate");
    // Aggressive embedding target on an all-white scene exhausts the
    // leakage loop.
    let cfg = w.write_config("c.toml", "[watermark]\ntarget_psnr = 30.0\n");
    let key = w.write_key("k.key", 2);
    let white = w.path("white.png");
    io::save_png(&nowa_core::Image::constant(3, 256, 256, 1.0), &white, 16).unwrap();
    let (code, _, stderr) = run(&[
        "protect",
        "--config",
        &s(&cfg),
        "--key",
        &s(&key),
        "--in",
        &s(&white),
        "--out",
        &s(&w.path("p.png")),
    ]);
    assert_eq!(code, 4, "stderr: {stderr}");
    assert!(stderr.contains("embedding failure"), "stderr: {stderr}");
}

#[test]
fn config_env_var_is_honored() {
    let w = Workdir::new("envcfg");
    let cfg = w.path("env.toml");
    std::fs::write(&cfg, "[optics]\nbroken = true\n").unwrap();
    // The broken config must be picked up through NOWA_CONFIG and rejected.
    let out = Command::new(bin())
        .args(["psf", "--out", &s(&w.path("psf.nwf"))])
        .env("NOWA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn measured_psf_ingestion_runs_the_pipeline() {
    let w = Workdir::new("measured");
    let cfg = w.write_config("c.toml", "");
    let key = w.write_key("k.key", 6);
    let scene = w.write_scene("scene.png", 9);
    let psf_path = w.path("psf.nwf");
    // Export the simulated PSF, then feed it back as a "measured" kernel.
    assert_eq!(
        run(&["psf", "--config", &s(&cfg), "--out", &s(&psf_path)]).0,
        0
    );
    let protected = w.path("p.png");
    let (code, _, stderr) = run(&[
        "protect",
        "--config",
        &s(&cfg),
        "--psf",
        &s(&psf_path),
        "--key",
        &s(&key),
        "--in",
        &s(&scene),
        "--out",
        &s(&protected),
    ]);
    assert_eq!(code, 0, "protect with measured PSF: {stderr}");
    let (code, _, stderr) = run(&[
        "verify",
        "--config",
        &s(&cfg),
        "--psf",
        &s(&psf_path),
        "--key",
        &s(&key),
        "--in",
        &s(&protected),
        "--report",
        &s(&w.path("r.json")),
    ]);
    assert_eq!(code, 0, "verify with measured PSF: {stderr}");
}
