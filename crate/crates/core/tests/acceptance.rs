//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use texflow::experiments::{collapse, flow_recover, gradcheck, silhouette_fit, Experiment, ExperimentConfig, Report};
use texflow::losses::iou_loss;
use texflow::meshkit::icosphere;
use texflow::metrics::{feature_stats, frechet_distance, mask_iou, ssim, FeatureStats, SSIM_C1};
use texflow::sampler::{grid_sample, grid_sample_backward, ModulationMode};
use texflow::tensorgrid::{FlowField, Image, VarianceMap};

fn verdict(criterion: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "\n[{tag}] criterion {criterion}: {title} ({detail})");
}

#[test]
fn criterion_1_gradient_oracle_suite() {
    let start = Instant::now();
    let results = gradcheck::run_suite(0, 10).unwrap();
    let elapsed = start.elapsed();
    let failures: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    let worst = results.iter().map(|r| r.max_rel_error / r.tolerance).fold(0.0, f64::max);
    let ok = failures.is_empty() && results.len() == gradcheck::CHECKS.len() * 10 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "every analytic gradient matches central differences at 10 seeds",
        ok,
        &format!("{} checks, worst error/tolerance {worst:.2e}, {elapsed:.2?}", results.len()),
    );
    assert!(failures.is_empty(), "{failures:?}");
    assert!(elapsed < Duration::from_secs(60));
}

#[test]
fn criterion_2_collapse_reproduction() {
    let start = Instant::now();
    let report = collapse::run(&ExperimentConfig::defaults(Experiment::Collapse)).unwrap();
    let elapsed = start.elapsed();
    let base = report.summary("baseline", "grad_norm").unwrap();
    let modulated = report.summary("gradient-only", "grad_norm").unwrap();
    let ok = base <= 1e-12 && modulated >= 1e-3 && elapsed < Duration::from_secs(1);
    verdict(
        2,
        "uniform image at cell centres: baseline gradient vanishes, modulated does not",
        ok,
        &format!("baseline {base:e}, gradient-only {modulated:e}, {elapsed:.2?}"),
    );
    assert!(base <= 1e-12);
    assert!(modulated >= 1e-3);
    assert!(elapsed < Duration::from_secs(1));
}

// First converged run on the shipped scene at seed 0.
const PINNED_BASELINE: (f64, f64) = (4.4346024594551087e-2, 3.5532024476463029e0);
const PINNED_GRADIENT_ONLY: (f64, f64) = (9.0179636762188521e-3, 3.1570641809017239e0);

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs()
}

#[test]
fn criterion_3_adaptive_gradient_benefit() {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::FlowRecover);
    assert_eq!(cfg.seed, 0);
    let report = flow_recover::run(&cfg, None).unwrap();
    let elapsed = start.elapsed();
    let get = |mode: &str| {
        (
            report.summary(mode, "rec_loss").unwrap(),
            report.summary(mode, "epe").unwrap(),
        )
    };
    let (base, modulated) = (get("baseline"), get("gradient-only"));
    let better = modulated.0 < base.0 && modulated.1 < base.1;
    let pinned = close(base.0, PINNED_BASELINE.0)
        && close(base.1, PINNED_BASELINE.1)
        && close(modulated.0, PINNED_GRADIENT_ONLY.0)
        && close(modulated.1, PINNED_GRADIENT_ONLY.1);
    let ok = better && pinned && elapsed < Duration::from_secs(300);
    verdict(
        3,
        "gradient-only beats baseline on rec_loss and endpoint error",
        ok,
        &format!(
            "rec {:.4e} vs {:.4e}, epe {:.4} vs {:.4} px, pinned {pinned}, {elapsed:.2?}",
            modulated.0, base.0, modulated.1, base.1
        ),
    );
    assert!(better, "gradient-only {modulated:?} vs baseline {base:?}");
    assert!(pinned, "gradient-only {modulated:?}, baseline {base:?}");
    assert!(elapsed < Duration::from_secs(300));
}

fn identity_case() -> impl Strategy<Value = (Image, FlowField, Image)> {
    (2usize..7, 2usize..7, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(h, w, c, fh, fw)| {
        let src = proptest::collection::vec(0.0f64..1.0, h * w * c);
        // a third of the coordinates land exactly on pixel centres
        let coords = proptest::collection::vec((-1.2f64..1.2, -1.2f64..1.2, 0u8..3), fh * fw);
        let up = proptest::collection::vec(-1.0f64..1.0, fh * fw * c);
        (src, coords, up).prop_map(move |(s, cs, u)| {
            let coords = cs
                .into_iter()
                .map(|(x, y, snap)| {
                    if snap == 0 {
                        let sx = ((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * (w - 1) as f64).round();
                        let sy = ((y.clamp(-1.0, 1.0) + 1.0) / 2.0 * (h - 1) as f64).round();
                        [2.0 * sx / (w - 1) as f64 - 1.0, 2.0 * sy / (h - 1) as f64 - 1.0]
                    } else {
                        [x, y]
                    }
                })
                .collect();
            (
                Image::new(h, w, c, s).unwrap(),
                FlowField::new(fh, fw, coords).unwrap(),
                Image::new(fh, fw, c, u).unwrap(),
            )
        })
    })
}

fn identity_modes_agree(src: &Image, flow: &FlowField, up: &Image) -> bool {
    let ones = VarianceMap::identity(src.height, src.width);
    let forward: Vec<Image> = ModulationMode::ALL
        .iter()
        .map(|&m| grid_sample(src, flow, Some(&ones), m).unwrap())
        .collect();
    let backward: Vec<_> = ModulationMode::ALL
        .iter()
        .map(|&m| grid_sample_backward(src, flow, up, Some(&ones), m).unwrap())
        .collect();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let coord_bits = |g: &[[f64; 2]]| g.iter().flat_map(|p| [p[0].to_bits(), p[1].to_bits()]).collect::<Vec<_>>();
    forward.iter().all(|f| bits(&f.data) == bits(&forward[0].data))
        && backward.iter().all(|b| coord_bits(&b.d_coords) == coord_bits(&backward[0].d_coords))
        && backward.iter().all(|b| bits(&b.d_image.data) == bits(&backward[0].d_image.data))
}

#[test]
fn criterion_4_unit_variance_equivalence() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        cases: 100,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let outcome = runner.run(&identity_case(), |(src, flow, up)| {
        prop_assert!(identity_modes_agree(&src, &flow, &up));
        Ok(())
    });
    verdict(
        4,
        "with unit variance all three modes agree bit for bit",
        outcome.is_ok(),
        "100 random cases",
    );
    outcome.unwrap();
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose()
}

#[test]
fn criterion_5_fid_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let feats: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let stats = feature_stats(&feats).unwrap();
    let self_fid = frechet_distance(&stats, &stats).unwrap();

    let origin = feature_stats(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let point = feature_stats(&[vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap();
    let point_fid = frechet_distance(&origin, &point).unwrap();

    let mut worst_identity = 0.0f64;
    for _ in 0..50 {
        let d = rng.gen_range(2..7);
        let cov = random_psd(&mut rng, d);
        let ma = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let mb = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let expect = (&ma - &mb).norm_squared();
        let a = FeatureStats {
            mean: ma,
            cov: cov.clone(),
            sample_count: 0,
        };
        let b = FeatureStats {
            mean: mb,
            cov,
            sample_count: 0,
        };
        worst_identity = worst_identity.max((frechet_distance(&a, &b).unwrap() - expect).abs());
    }

    // two unit Gaussians one unit apart
    let draw = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<Vec<f64>> {
        (0..10_000)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal) + shift, rng.sample::<f64, _>(StandardNormal)])
            .collect()
    };
    let a = feature_stats(&draw(&mut rng, 0.0)).unwrap();
    let b = feature_stats(&draw(&mut rng, 1.0)).unwrap();
    let mc = frechet_distance(&a, &b).unwrap();
    let elapsed = start.elapsed();

    let ok = self_fid < 1e-8
        && (point_fid - 25.0).abs() < 1e-10
        && worst_identity < 1e-6
        && (mc - 1.0).abs() < 0.1
        && elapsed < Duration::from_secs(30);
    verdict(
        5,
        "Fréchet distance identities",
        ok,
        &format!(
            "self {self_fid:e}, point masses {point_fid}, equal-covariance worst {worst_identity:e}, Monte-Carlo {mc:.4}, {elapsed:.2?}"
        ),
    );
    assert!(self_fid < 1e-8);
    assert!((point_fid - 25.0).abs() < 1e-10);
    assert!(worst_identity < 1e-6);
    assert!((mc - 1.0).abs() < 0.1, "{mc}");
    assert!(elapsed < Duration::from_secs(30));
}

#[test]
fn criterion_6_shape_fit_convergence() {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::SilhouetteFit);
    assert_eq!(cfg.shape.target_axes, [1.0, 0.7, 0.7]);
    assert_eq!(cfg.shape.views.len(), 4);
    assert!(cfg.iterations <= 2000);
    let mut report = Report::new("silhouette-fit", &cfg.hash());
    let fit = silhouette_fit::run_into(&cfg, None, &mut report).unwrap();
    let elapsed = start.elapsed();
    let ok = fit.mean_iou > 0.95 && elapsed < Duration::from_secs(600);
    verdict(
        6,
        "ellipsoid silhouettes recovered from an icosphere",
        ok,
        &format!("mean mask IoU {:.4} over views {:?}, {elapsed:.2?}", fit.mean_iou, fit.view_ious),
    );
    assert!(fit.mean_iou > 0.95);
    assert!(elapsed < Duration::from_secs(600));
}

#[test]
fn criterion_7_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut iou_ok = true;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let density = rng.gen_range(0.0..1.0);
        let mut mask = || Image::from_fn(h, w, 1, |_, _, _| if rng.gen_bool(density) { 1.0 } else { 0.0 });
        let (a, b) = (mask(), mask());
        let m = mask_iou(&a, &b, 0.5).unwrap();
        let (l, _) = iou_loss(&a, &b).unwrap();
        iou_ok &= l == 1.0 - m;
    }

    let a = Image::from_fn(24, 20, 3, |_, _, _| rng.gen_range(0.0..1.0));
    let self_ssim = ssim(&a, &a).unwrap();

    let mut worst_const = 0.0f64;
    for _ in 0..20 {
        let (m1, m2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let s = ssim(&Image::filled(16, 16, 1, m1), &Image::filled(16, 16, 1, m2)).unwrap();
        let expect = (2.0 * m1 * m2 + SSIM_C1) / (m1 * m1 + m2 * m2 + SSIM_C1);
        worst_const = worst_const.max((s - expect).abs());
    }
    let ok = iou_ok && self_ssim == 1.0 && worst_const < 1e-12;
    verdict(
        7,
        "mask IoU, IoU loss and SSIM identities",
        ok,
        &format!("iou pairs exact {iou_ok}, ssim(a,a) {self_ssim}, constant-image worst {worst_const:e}"),
    );
    assert!(iou_ok);
    assert_eq!(self_ssim, 1.0);
    assert!(worst_const < 1e-12);
}

#[test]
fn criterion_8_icosphere_counts_and_manifold() {
    let mut ok = true;
    let mut sizes = Vec::new();
    for level in 0..=4 {
        let m = icosphere(level).unwrap();
        let (v, f) = (m.vertices.len(), m.faces.len());
        ok &= v == 10 * 4usize.pow(level) + 2 && f == 20 * 4usize.pow(level) && m.is_edge_manifold();
        sizes.push((v, f));
    }
    let level3 = sizes[3];
    ok &= level3 == (642, 1280);
    verdict(8, "icosphere sizes and edge-manifold levels 0-4", ok, &format!("{sizes:?}"));
    assert_eq!(level3, (642, 1280));
    assert!(ok, "{sizes:?}");
}

fn run_cli(args: &[&str], out: &std::path::Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_texflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success(), "{args:?}");
    std::fs::read(out.join("metrics.csv")).unwrap()
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.json");
    std::fs::write(&short, r#"{"iterations": 60, "shape": {"fid_views": 4}}"#).unwrap();
    let short = short.to_str().unwrap();

    // an image set for the fid command
    let set = dir.path().join("set");
    std::fs::create_dir(&set).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..3 {
        let img = Image::from_fn(16, 16, 3, |_, _, _| rng.gen_range(0.0..1.0));
        texflow::tensorgrid::save_image(&img, set.join(format!("{k}.png"))).unwrap();
    }
    let set = set.to_str().unwrap().to_string();

    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("collapse", vec!["collapse", "--seed", "3"]),
        ("flow-recover", vec!["flow-recover", "--seed", "3", "--config", short]),
        ("silhouette-fit", vec!["silhouette-fit", "--seed", "3", "--config", short]),
        ("fid", vec!["fid", "--set-a", &set, "--set-b", &set, "--grid", "2"]),
        ("gradcheck", vec!["gradcheck", "--seed", "3"]),
    ];
    let mut identical = Vec::new();
    for (name, args) in &runs {
        let a = run_cli(args, &dir.path().join(format!("{name}-a")));
        let b = run_cli(args, &dir.path().join(format!("{name}-b")));
        identical.push((*name, a == b && !a.is_empty()));
    }
    let ok = identical.iter().all(|(_, same)| *same);
    verdict(9, "repeated CLI runs give byte-identical metrics.csv", ok, &format!("{identical:?}"));
    assert!(ok, "{identical:?}");
}
