//! Central-difference checks of every analytic gradient in the crate on
//! randomized inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{align_loss, chamfer_2d, iou_loss, part_chamfer, rec_loss, PartLabel2D, RecNorm};
use crate::meshkit::{
    deform_loss, flatness_loss, flatten3, icosphere, laplacian_loss, octant_labels, sphere_uv, texture_from_uv,
    texture_from_uv_backward, to_vec3s, Deformation, Mesh,
};
use crate::optim::{fd_check, DEFAULT_FD_STEP};
use crate::sampler::{grid_sample, grid_sample_backward, ModulationMode};
use crate::softrender::{axis_angle, raster_weights, render_texture, soft_silhouette, Camera, RasterSettings};
use crate::tensorgrid::{FlowField, Image, VarianceMap};

use super::config::{Experiment, ExperimentConfig};
use super::pixel_to_normalized;
use super::report::Report;

pub const TOLERANCE: f64 = 1e-4;
pub const SILHOUETTE_TOLERANCE: f64 = 1e-3;
pub const SILHOUETTE_SIGMA: f64 = 1e-2;

pub const CHECKS: [&str; 20] = [
    "sample-coords-baseline",
    "sample-coords-replace",
    "sample-coords-gradient-only",
    "sample-image-baseline",
    "sample-image-replace",
    "sample-image-gradient-only",
    "sample-variance-replace",
    "sample-variance-gradient-only",
    "laplacian",
    "flatness",
    "deform",
    "iou",
    "rec-l1",
    "rec-l2",
    "align",
    "chamfer",
    "part-chamfer",
    "silhouette",
    "render-texture",
    "texture-from-uv",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen_range(lo..hi))
}

struct SampleCase {
    src: Image,
    flow: FlowField,
    var: VarianceMap,
    upstream: Image,
}

/// Interior coordinates kept at least 0.02 px away from the pixel gridlines.
fn sample_case(rng: &mut ChaCha8Rng) -> SampleCase {
    let (h, w, c) = (6, 7, 2);
    let (fh, fw) = (3, 4);
    let src = random_image(rng, h, w, c, 0.0, 1.0);
    let coords = (0..fh * fw)
        .map(|_| {
            let x = rng.gen_range(0..w - 1) as f64 + rng.gen_range(0.02..0.98);
            let y = rng.gen_range(0..h - 1) as f64 + rng.gen_range(0.02..0.98);
            [pixel_to_normalized(x, w), pixel_to_normalized(y, h)]
        })
        .collect();
    let flow = FlowField::new(fh, fw, coords).expect("sized");
    let var = VarianceMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0.5..2.0)).collect()).expect("positive");
    let upstream = random_image(rng, fh, fw, c, -1.0, 1.0);
    SampleCase {
        src,
        flow,
        var,
        upstream,
    }
}

fn modulated(src: &Image, var: &[f64]) -> Image {
    Image::from_fn(src.height, src.width, src.channels, |y, x, c| src.get(y, x, c) * var[y * src.width + x])
}

fn check_sampler(name: &str, mode: ModulationMode, rng: &mut ChaCha8Rng) -> Result<f64> {
    let s = sample_case(rng);
    let grad = grid_sample_backward(&s.src, &s.flow, &s.upstream, Some(&s.var), mode)?;
    let (h, w) = (s.src.height, s.src.width);
    let up = &s.upstream.data;
    let base = ModulationMode::Baseline;
    let report = if name.starts_with("sample-coords") {
        let analytic: Vec<f64> = grad.d_coords_normalized(w, h).iter().flat_map(|g| [g[0], g[1]]).collect();
        // the modulated mode differentiates the modulated image
        let src = if mode == ModulationMode::GradientOnly {
            modulated(&s.src, &s.var.values)
        } else {
            s.src.clone()
        };
        let f = |x: &[f64]| {
            let flow = FlowField::from_flat(s.flow.height, s.flow.width, x)?;
            Ok(dot(up, &grid_sample(&src, &flow, Some(&s.var), mode)?.data))
        };
        fd_check(f, &analytic, &s.flow.flat(), DEFAULT_FD_STEP)?
    } else if name.starts_with("sample-image") {
        let f = |x: &[f64]| {
            let src = Image::new(h, w, s.src.channels, x.to_vec())?;
            Ok(dot(up, &grid_sample(&src, &s.flow, Some(&s.var), mode)?.data))
        };
        fd_check(f, &grad.d_image.data, &s.src.data, DEFAULT_FD_STEP)?
    } else {
        let analytic = grad.d_var.clone().unwrap_or_default();
        let f = |x: &[f64]| {
            let out = if mode == ModulationMode::Replace {
                grid_sample(&s.src, &s.flow, Some(&VarianceMap::new(h, w, x.to_vec())?), mode)?
            } else {
                grid_sample(&modulated(&s.src, x), &s.flow, None, base)?
            };
            Ok(dot(up, &out.data))
        };
        fd_check(f, &analytic, &s.var.values, DEFAULT_FD_STEP)?
    };
    Ok(report.max_rel_error)
}

fn jittered_sphere(rng: &mut ChaCha8Rng, level: u32, amount: f64) -> Result<Mesh> {
    let m = icosphere(level)?;
    let v = m
        .vertices
        .iter()
        .map(|p| p.map(|c| c + rng.gen_range(-amount..amount)))
        .collect();
    m.with_vertices(v)
}

fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
    Camera::orbit(rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(-0.5..0.5), rng.gen_range(0.6..0.9))
}

fn check_mesh(name: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = jittered_sphere(rng, 1, 0.1)?;
    let point = flatten3(&mesh.vertices);
    let (analytic, f): (Vec<f64>, Box<dyn Fn(&[f64]) -> Result<f64>>) = match name {
        "laplacian" => (
            flatten3(&laplacian_loss(&mesh)?.1),
            Box::new(|x: &[f64]| Ok(laplacian_loss(&mesh.with_vertices(to_vec3s(x))?)?.0)),
        ),
        "flatness" => (
            flatten3(&flatness_loss(&mesh)?.1),
            Box::new(|x: &[f64]| Ok(flatness_loss(&mesh.with_vertices(to_vec3s(x))?)?.0)),
        ),
        _ => (
            flatten3(&deform_loss(&Deformation::from_flat(&point)).1),
            Box::new(|x: &[f64]| Ok(deform_loss(&Deformation::from_flat(x)).0)),
        ),
    };
    Ok(fd_check(f, &analytic, &point, DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_iou(rng: &mut ChaCha8Rng) -> Result<f64> {
    let real = random_image(rng, 8, 8, 1, 0.0, 1.0);
    let pred = random_image(rng, 8, 8, 1, 0.05, 0.95);
    let (_, g) = iou_loss(&real, &pred)?;
    let f = |x: &[f64]| Ok(iou_loss(&real, &Image::new(8, 8, 1, x.to_vec())?)?.0);
    Ok(fd_check(f, &g.data, &pred.data, DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_rec(norm: RecNorm, rng: &mut ChaCha8Rng) -> Result<f64> {
    let target = random_image(rng, 5, 6, 3, 0.0, 1.0);
    // keep the L1 kink well away from the probe
    let mut pred = target.clone();
    for v in pred.data.iter_mut() {
        let d = rng.gen_range(0.01..0.3);
        *v += if rng.gen_bool(0.5) { d } else { -d };
    }
    let (_, g) = rec_loss(&target, &pred, norm)?;
    let f = |x: &[f64]| Ok(rec_loss(&target, &Image::new(5, 6, 3, x.to_vec())?, norm)?.0);
    Ok(fd_check(f, &g.data, &pred.data, DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_align(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = icosphere(1)?;
    let uv = sphere_uv(&mesh)?;
    let cam = random_camera(rng);
    let weights = raster_weights(&mesh, &cam, RasterSettings::new(16, 16, 1e-3)?);
    let (fh, fw) = (12, 12);
    let coords = (0..fh * fw).map(|_| [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]).collect();
    let flow = FlowField::new(fh, fw, coords)?;
    let (_, g) = align_loss(&flow, &weights, &uv, &mesh.faces)?;
    let analytic: Vec<f64> = g.iter().flat_map(|v| [v[0], v[1]]).collect();
    let f = |x: &[f64]| Ok(align_loss(&FlowField::from_flat(fh, fw, x)?, &weights, &uv, &mesh.faces)?.0);
    Ok(fd_check(f, &analytic, &flow.flat(), DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_chamfer(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut pts = |n: usize| -> Vec<[f64; 2]> { (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect() };
    let (a, b) = (pts(7), pts(9));
    let (_, ga, gb) = chamfer_2d(&a, &b)?;
    let flat = |v: &[[f64; 2]]| -> Vec<f64> { v.iter().flat_map(|p| [p[0], p[1]]).collect() };
    let mut point = flat(&a);
    point.extend(flat(&b));
    let mut analytic = flat(&ga);
    analytic.extend(flat(&gb));
    let f = |x: &[f64]| {
        let p: Vec<[f64; 2]> = x.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(chamfer_2d(&p[..7], &p[7..])?.0)
    };
    Ok(fd_check(f, &analytic, &point, DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_part_chamfer(rng: &mut ChaCha8Rng) -> Result<f64> {
    let base = icosphere(1)?;
    let labels = octant_labels(&base);
    let template = base.with_part_labels(labels)?;
    let truth = random_camera(rng);
    let target = PartLabel2D::from_projection(&template, &truth)?.translated([rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)]);
    let mut params = truth.params();
    params[0] *= rng.gen_range(0.8..1.2);
    for p in params.iter_mut().skip(1) {
        *p += rng.gen_range(-0.15..0.15);
    }
    let (_, g) = part_chamfer(&template, &params, &target)?;
    let f = |x: &[f64]| {
        let p: [f64; 7] = x.try_into().expect("seven parameters");
        Ok(part_chamfer(&template, &p, &target)?.0)
    };
    Ok(fd_check(f, &g, &params, DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_silhouette(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut v = vec![[-0.6, -0.5, 0.0], [0.6, -0.6, 0.0], [0.5, 0.6, 0.0], [-0.5, 0.5, 0.0]];
    for p in v.iter_mut() {
        for c in p.iter_mut() {
            *c += rng.gen_range(-0.1..0.1);
        }
    }
    let mesh = Mesh::new(v, vec![[0, 1, 2], [0, 2, 3]])?;
    let q = axis_angle([0.0, 1.0, 0.0], rng.gen_range(-0.4..0.4));
    let cam = Camera::new(rng.gen_range(0.7..1.0), [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)], q)?;
    let settings = RasterSettings::new(12, 12, SILHOUETTE_SIGMA)?;
    let upstream = random_image(rng, 12, 12, 1, -1.0, 1.0);
    let r = soft_silhouette(&mesh, &cam, settings);
    let analytic = flatten3(&r.backward(&upstream)?);
    let f = |x: &[f64]| {
        let m = mesh.with_vertices(to_vec3s(x))?;
        Ok(dot(&upstream.data, &soft_silhouette(&m, &cam, settings).image.data))
    };
    Ok(fd_check(f, &analytic, &flatten3(&mesh.vertices), DEFAULT_FD_STEP)?.max_rel_error)
}

fn check_render_texture(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = icosphere(1)?;
    let colors: Vec<f64> = (0..mesh.vertices.len() * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cam = random_camera(rng);
    let upstream = random_image(rng, 16, 16, 3, -1.0, 1.0);
    let r = render_texture(&mesh, &colors, 3, &cam, 16, 16)?;
    let analytic = r.backward(&upstream)?;
    let f = |x: &[f64]| Ok(dot(&upstream.data, &render_texture(&mesh, x, 3, &cam, 16, 16)?.image.data));
    // linear in the colours, so a unit step is exact
    Ok(fd_check(f, &analytic, &colors, 1.0)?.max_rel_error)
}

fn check_texture_from_uv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = icosphere(1)?;
    let uv = sphere_uv(&mesh)?;
    let img = random_image(rng, 8, 8, 3, 0.0, 1.0);
    let upstream: Vec<f64> = (0..mesh.vertices.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = texture_from_uv_backward(&img, &uv, &upstream)?;
    let f = |x: &[f64]| Ok(dot(&upstream, &texture_from_uv(&Image::new(8, 8, 3, x.to_vec())?, &uv)?));
    Ok(fd_check(f, &analytic.data, &img.data, DEFAULT_FD_STEP)?.max_rel_error)
}

/// Runs one named check at one seed.
pub fn run_check(name: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = if name.ends_with("gradient-only") {
        ModulationMode::GradientOnly
    } else if name.ends_with("replace") {
        ModulationMode::Replace
    } else {
        ModulationMode::Baseline
    };
    let err = match name {
        n if n.starts_with("sample-") => check_sampler(n, mode, &mut rng)?,
        "laplacian" | "flatness" | "deform" => check_mesh(name, &mut rng)?,
        "iou" => check_iou(&mut rng)?,
        "rec-l1" => check_rec(RecNorm::L1, &mut rng)?,
        "rec-l2" => check_rec(RecNorm::L2, &mut rng)?,
        "align" => check_align(&mut rng)?,
        "chamfer" => check_chamfer(&mut rng)?,
        "part-chamfer" => check_part_chamfer(&mut rng)?,
        "silhouette" => check_silhouette(&mut rng)?,
        "render-texture" => check_render_texture(&mut rng)?,
        "texture-from-uv" => check_texture_from_uv(&mut rng)?,
        other => return Err(crate::Error::Input(format!("unknown gradient check {other}"))),
    };
    let tolerance = if name == "silhouette" { SILHOUETTE_TOLERANCE } else { TOLERANCE };
    Ok(CheckResult {
        name: name.to_string(),
        seed,
        max_rel_error: err,
        tolerance,
    })
}

/// Every check at seeds `first_seed .. first_seed + seeds`.
pub fn run_suite(first_seed: u64, seeds: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for name in CHECKS {
        for seed in first_seed..first_seed + seeds {
            out.push(run_check(name, seed)?);
        }
    }
    Ok(out)
}

/// The suite as a report: one row per check and seed (`iteration` holds the
/// seed) plus a `passed` summary per check.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::new(Experiment::Gradcheck.name(), &cfg.hash());
    let results = run_suite(cfg.seed, cfg.iterations.max(1) as u64)?;
    for name in CHECKS {
        let mine: Vec<&CheckResult> = results.iter().filter(|r| r.name == name).collect();
        for r in &mine {
            report.push(name, Some(r.seed as usize), "max_rel_error", r.max_rel_error);
        }
        let worst = mine.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        report.push(name, None, "max_rel_error", worst);
        report.push(name, None, "passed", if mine.iter().all(|r| r.passed()) { 1.0 } else { 0.0 });
    }
    Ok(report)
}
