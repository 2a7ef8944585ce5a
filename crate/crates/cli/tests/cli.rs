use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adawarp")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_the_default_file_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(code(&["simulate", "--out", s(&out)]), 0);
    let count = |pat: &str| {
        fs::read_dir(&out)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(pat))
            .count()
    };
    assert_eq!(count("_rs.pfm"), 5);
    assert_eq!(count("_gs.pfm"), 5);
    assert_eq!(count("gt_field_"), 10); // PFM plus sidecar
    assert!(out.join("scene.json").exists());
    assert!(out.join("config.json").exists());
}

#[test]
fn zero_readout_files_match_global_shutter_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(code(&["simulate", "--frames", "2", "--readout-ratio", "0", "--out", s(&out)]), 0);
    for k in 0..2 {
        for ext in ["pfm", "ppm"] {
            let rs = fs::read(out.join(format!("frame_{k:04}_rs.{ext}"))).unwrap();
            let gs = fs::read(out.join(format!("frame_{k:04}_gs.{ext}"))).unwrap();
            assert_eq!(rs, gs);
        }
    }
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(code(&["gradcheck", "--trials", "0"]), 0);
    assert_eq!(code(&["gradcheck", "--trials", "3"]), 0);
    assert_eq!(code(&["gradcheck", "--trials", "3", "--perturb-gradient"]), 1);
}

#[test]
fn invalid_arguments_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["simulate", "--frames", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["simulate", "--suite", "nope", "--out", s(&out)]), 2);
    assert_eq!(code(&["ablate", "--preset", "nope", "--out", s(&out)]), 2);
    assert_eq!(code(&["gradcheck", "--jobs", "0"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"m\": 0}").unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", s(&out)]), 2);
}

#[test]
fn correct_and_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(code(&["simulate", "--frames", "3", "--out", s(&sim)]), 0);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"levels": 2, "iterations": 20, "m": 3}"#).unwrap();
    let out = tmp.path().join("fit");
    assert_eq!(code(&["correct", "--input", s(&sim), "--config", s(&cfg), "--out", s(&out)]), 0);
    for f in ["gs_estimate.pfm", "gs_estimate.ppm", "bundle_0.pfm", "bundle_0.json", "loss_trace.csv", "metrics.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(header.starts_with("psnr,ssim,psnr_interior,ssim_interior\n"));

    let oracle = tmp.path().join("oracle");
    let args = ["correct", "--input", s(&sim), "--mode", "oracle", "--warper", "backward", "--out", s(&oracle)];
    assert_eq!(code(&args), 0);
    let eval = run(&[
        "evaluate",
        "--estimate",
        s(&oracle.join("gs_estimate.pfm")),
        "--truth",
        s(&sim.join("frame_0001_gs.pfm")),
    ]);
    assert!(eval.status.success());
    assert!(String::from_utf8_lossy(&eval.stdout).starts_with("psnr "));

    // self mode needs no truth; fit mode does
    let frames: Vec<String> = (0..3).map(|k| s(&sim.join(format!("frame_{k:04}_rs.pfm"))).to_string()).collect();
    let mut args = vec!["correct", "--config", s(&cfg), "--out", s(&out), "--mode", "fit", "--frames"];
    args.extend(frames.iter().map(String::as_str));
    assert_eq!(code(&args), 2);
}

#[test]
fn ablate_refuses_a_used_directory() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    assert_eq!(code(&["ablate", "--preset", "warpers", "--out", s(tmp.path())]), 2);
}
