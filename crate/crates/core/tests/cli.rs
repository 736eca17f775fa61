//! End-to-end checks of the command-line binary: artifact layout, exit
//! codes, determinism, and the checkpoint-consuming experiment commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use limbrl::config::EnvConfig;
use limbrl::env::{LocoMarl, LocomotionEnv};
use limbrl::marl::{Architecture, PolicyBundle, PpoConfig, Trainer};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_limbrl")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("limbrl-cli-{name}"));
    fs::remove_dir_all(&dir).ok();
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("binary should launch");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// An untrained but correctly-shaped humanoid checkpoint, saved fast by
/// skipping training entirely.
fn save_untrained_humanoid(dir: &Path, arch: Architecture) -> PathBuf {
    let cfg = PpoConfig {
        hidden: vec![16, 16],
        ..PpoConfig::default()
    };
    let envs = vec![LocoMarl::new(LocomotionEnv::with_mini_humanoid(EnvConfig::default()))];
    let trainer = Trainer::new(envs, arch, cfg, 0);
    let path = dir.join("untrained.bin");
    trainer.save(&path).unwrap();
    path
}

#[test]
fn validate_dynamics_passes_and_writes_table() {
    let dir = scratch("validate");
    let (code, stdout, _) = run(&[
        "validate-dynamics",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stdout: {stdout}");
    assert_eq!(stdout.matches("PASS").count(), 6);
    assert!(!stdout.contains("FAIL"));
    let csv = read(&dir.join("validation.csv"));
    assert!(csv.starts_with("check,pass,detail"));
    assert_eq!(csv.lines().count(), 7); // header + six checks
    assert!(dir.join("manifest.txt").exists() && dir.join("config.txt").exists());
}

#[test]
fn toy_coop_writes_layout_and_deterministic_reruns_match() {
    let dir1 = scratch("toy1");
    let dir2 = scratch("toy2");
    for dir in [&dir1, &dir2] {
        let (code, stdout, stderr) = run(&[
            "toy-coop",
            "--arch",
            "ctde",
            "--iters",
            "3",
            "--seed",
            "5",
            "--deterministic",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stdout: {stdout} stderr: {stderr}");
    }
    let metrics = read(&dir1.join("metrics.csv"));
    assert_eq!(metrics.lines().count(), 4); // header + one row per iteration
    assert!(metrics.starts_with("iteration,wall_clock_s,tracking_mean"));
    // Deterministic mode zeroes wall clock, so the whole file is reproducible.
    assert_eq!(metrics, read(&dir2.join("metrics.csv")));
    assert_eq!(
        fs::read(dir1.join("ckpt-final.bin")).unwrap(),
        fs::read(dir2.join("ckpt-final.bin")).unwrap()
    );
    let bundle = PolicyBundle::load(&dir1.join("ckpt-final.bin")).unwrap();
    assert_eq!(bundle.arch, Architecture::Ctde);
    for plot in ["tracking.svg", "adv_variance.svg"] {
        let svg = read(&dir1.join("plots").join(plot));
        assert!(svg.starts_with("<svg"), "{plot} malformed");
    }
    let manifest = read(&dir1.join("manifest.txt"));
    assert!(manifest.contains("checkpoint_sha256 = "));
    assert!(manifest.contains("model_sha256 = "));
    assert!(manifest.contains("seed = 5"));
}

#[test]
fn config_and_checkpoint_errors_exit_2_with_context() {
    let dir = scratch("errors");
    let bad_cfg = dir.join("bad.txt");
    fs::write(&bad_cfg, "kp = not_a_number\n").unwrap();
    let (code, _, stderr) = run(&[
        "validate-dynamics",
        "--config",
        bad_cfg.to_str().unwrap(),
        "--out",
        dir.join("o1").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("kp"), "stderr should name the field: {stderr}");

    let missing = dir.join("nope.bin");
    let (code, _, stderr) = run(&[
        "eval",
        missing.to_str().unwrap(),
        "--out",
        dir.join("o2").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("nope.bin"), "stderr should name the path: {stderr}");

    // A toy-task checkpoint cannot act on the humanoid: both dimension sets
    // must be quoted so the mismatch is diagnosable.
    let toy = {
        let cfg = limbrl::toy::coop_ppo_config();
        let envs = vec![limbrl::toy::CoopCartArm::new()];
        let t = Trainer::new(envs, Architecture::Ctde, cfg, 0);
        let p = dir.join("toy.bin");
        t.save(&p).unwrap();
        p
    };
    let (code, _, stderr) = run(&[
        "eval",
        toy.to_str().unwrap(),
        "--out",
        dir.join("o3").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(
        stderr.contains("[2, 1]") && stderr.contains("[6, 8]"),
        "both dimension sets should appear: {stderr}"
    );
}

#[test]
fn checkpoint_consumers_run_on_a_fresh_humanoid_policy() {
    let dir = scratch("consumers");
    let ckpt = save_untrained_humanoid(&dir, Architecture::Ctde);
    let ckpt = ckpt.to_str().unwrap();
    // Short episodes keep the fixed-policy rollouts cheap.
    let cfg = dir.join("short.txt");
    fs::write(&cfg, "episode_s = 2.0\n").unwrap();

    let eval_dir = dir.join("eval");
    let (code, stdout, stderr) = run(&[
        "eval", ckpt, "--episodes", "1",
        "--config", cfg.to_str().unwrap(),
        "--out", eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "eval: {stdout} {stderr}");
    let eval_csv = read(&eval_dir.join("eval.csv"));
    assert!(eval_csv.starts_with("episodes,mean_return,mean_tracking,mean_len_steps"));
    let row: Vec<f64> = eval_csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|c| c.parse().unwrap())
        .collect();
    assert!(row.iter().all(|v| v.is_finite()));

    let cam_dir = dir.join("cam");
    let (code, stdout, stderr) = run(&[
        "cam-trace", ckpt, "--duration", "0.5", "--command", "0.0,0.0,0.0",
        "--out", cam_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "cam-trace: {stdout} {stderr}");
    let cam = read(&cam_dir.join("cam_trace.csv"));
    let mut lines = cam.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let ref_col = header.iter().position(|h| *h == "kz_ref_kgm2_per_s").unwrap();
    let err_col = header
        .iter()
        .position(|h| *h == "decomposition_err_kgm2_per_s")
        .unwrap();
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        // Standing command: the reference momentum is exactly zero.
        assert_eq!(cells[ref_col].parse::<f64>().unwrap(), 0.0);
        assert!(cells[err_col].parse::<f64>().unwrap() <= 1e-9);
        rows += 1;
    }
    assert_eq!(rows, 51); // initial state + 50 policy steps of 10 ms
    assert!(cam_dir.join("plots/cam_trace.svg").exists());

    let grm_dir = dir.join("grm");
    let (code, stdout, stderr) = run(&[
        "grm-dist", ckpt, "--steps", "1",
        "--config", cfg.to_str().unwrap(),
        "--out", grm_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "grm-dist: {stdout} {stderr}");
    let summary = read(&grm_dir.join("grm_summary.csv"));
    assert!(summary.starts_with("policy,samples,steps_completed"));
    assert_eq!(summary.lines().count(), 2);
    assert!(grm_dir.join("plots/grm_violin.svg").exists());

    let push_dir = dir.join("push");
    let (code, stdout, stderr) = run(&[
        "push-grid", ckpt, "--resolution", "1", "--magnitude", "0",
        "--out", push_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "push-grid: {stdout} {stderr}");
    let grid = read(&push_dir.join("push_grid.csv"));
    assert_eq!(grid.lines().count(), 2); // header + the single zero cell
    assert!(grid.lines().nth(1).unwrap().starts_with("untrained,0.000000,0.000000,"));
    assert!(push_dir.join("plots/push_grid_untrained.svg").exists());
    let summary = read(&push_dir.join("push_summary.csv"));
    assert!(summary.lines().nth(1).unwrap().contains("untrained,1,"));
}

#[test]
fn arch_compare_row_count_is_iters_by_archs_by_seeds() {
    let dir = scratch("compare");
    let (code, stdout, stderr) = run(&[
        "arch-compare",
        "--iters",
        "2",
        "--seeds",
        "7",
        "--deterministic",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout} {stderr}");
    let csv = read(&dir.join("arch_compare.csv"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4 * 1);
    for arch in ["single", "dtde", "ctde", "ctce"] {
        assert!(csv.contains(&format!("\n{arch},7,")), "missing rows for {arch}");
    }
    let table = read(&dir.join("final_table.csv"));
    assert_eq!(table.lines().count(), 5); // header + one row per architecture
    assert!(dir.join("plots/tracking_bands.svg").exists());
    assert!(dir.join("plots/adv_variance_bands.svg").exists());
}
