use std::path::Path;
use std::process::{Command, Output};

use texflow::tensorgrid::{save_image, Image};

fn texflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn csv_rows(out: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    text.lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn summary(rows: &[Vec<String>], mode: &str, metric: &str) -> f64 {
    rows.iter()
        .rev()
        .find(|r| r[1] == mode && r[2].is_empty() && r[3] == metric)
        .unwrap_or_else(|| panic!("no {mode}/{metric}"))[4]
        .parse()
        .unwrap()
}

#[test]
fn collapse_with_config_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"collapse":{"var_ramp":0.0}}"#).unwrap();
    let out = dir.path().join("run");
    let res = texflow(&["collapse", "--config", cfg.to_str().unwrap(), "--mode", "replace"], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(text.starts_with("# toolkit=texflow/0.1.0,config_hash="));
    assert_eq!(text.lines().nth(1), Some("experiment,mode,iteration,metric,value"));
    let rows = csv_rows(&out);
    assert!(rows.iter().all(|r| r[0] == "collapse"));
    assert_eq!(summary(&rows, "baseline", "grad_norm"), 0.0);
    assert_eq!(summary(&rows, "replace", "grad_norm"), 0.0);
}

#[test]
fn config_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed":7}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(texflow(&["collapse"], &a).status.success());
    assert!(texflow(&["collapse", "--config", cfg.to_str().unwrap()], &b).status.success());
    let first = |p: &Path| std::fs::read_to_string(p.join("metrics.csv")).unwrap().lines().next().unwrap().to_string();
    assert_ne!(first(&a), first(&b));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"no_such_key":1}"#).unwrap();
    let res = texflow(&["collapse", "--config", unknown.to_str().unwrap()], &out);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("no_such_key"));

    let invalid = dir.path().join("invalid.json");
    std::fs::write(&invalid, r#"{"lr_flow":-1.0}"#).unwrap();
    assert!(!texflow(&["flow-recover", "--config", invalid.to_str().unwrap()], &out).status.success());

    let missing = dir.path().join("missing.json");
    assert!(!texflow(&["collapse", "--config", missing.to_str().unwrap()], &out).status.success());
    assert!(!texflow(&["collapse", "--mode", "sideways"], &out).status.success());
}

#[test]
fn fid_over_png_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    for k in 0..4 {
        let img = Image::from_fn(16, 16, 3, |y, x, c| ((y * 7 + x * 3 + c * 5 + k * 11) % 17) as f64 / 16.0);
        save_image(&img, a.join(format!("{k}.png"))).unwrap();
        save_image(&img, b.join(format!("{k}.png"))).unwrap();
    }
    std::fs::write(a.join("notes.txt"), "ignored").unwrap();
    let out = dir.path().join("run");
    let res = texflow(&["fid", "--set-a", a.to_str().unwrap(), "--set-b", b.to_str().unwrap()], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out);
    assert!(summary(&rows, "patch-stats", "fid").abs() < 1e-6);
    assert_eq!(summary(&rows, "patch-stats", "ssim_mean"), 1.0);

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(!texflow(&["fid", "--set-a", empty.to_str().unwrap(), "--set-b", b.to_str().unwrap()], &out).status.success());
}

#[test]
fn flow_recover_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"iterations":5}"#).unwrap();
    let out = dir.path().join("run");
    let res = texflow(&["flow-recover", "--config", cfg.to_str().unwrap(), "--seed", "3"], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in [
        "metrics.csv",
        "source.png",
        "target.png",
        "before.png",
        "after-baseline.png",
        "after-gradient-only.png",
        "variance-gradient-only.png",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn silhouette_fit_writes_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"iterations":3,"image_height":24,"image_width":24,"shape":{"fid_views":2,"template_level":1}}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let res = texflow(&["silhouette-fit", "--config", cfg.to_str().unwrap()], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("fitted.obj").is_file());
    assert!(out.join("target.obj").is_file());
    assert!(out.join("fit-view0.png").is_file());
    let rows = csv_rows(&out);
    let iou = summary(&rows, "shape", "mean_mask_iou");
    assert!((0.0..=1.0).contains(&iou));
    assert!(summary(&rows, "shape", "fid_random_views") >= 0.0);
}

#[test]
fn gradcheck_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"iterations":2}"#).unwrap();
    let out = dir.path().join("run");
    let res = texflow(&["gradcheck", "--config", cfg.to_str().unwrap()], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out);
    assert_eq!(summary(&rows, "laplacian", "passed"), 1.0);
}
