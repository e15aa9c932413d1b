//! Deform an icosphere until its soft silhouettes match those of a target
//! mesh from a handful of fixed views.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::iou_loss;
use crate::meshkit::{
    apply_deform, deform_loss, flatness_loss, icosphere, laplacian_loss, to_vec3s, Deformation, Mesh,
};
use crate::metrics::{fid_between_sets, mask_iou, PatchStats};
use crate::optim::Adam;
use crate::softrender::{random_view_camera, soft_silhouette, Camera, RasterSettings};
use crate::tensorgrid::{save_image, Image};

use super::config::{Experiment, ExperimentConfig};
use super::report::Report;

const MODE: &str = "shape";

#[derive(Debug, Clone)]
pub struct ShapeFit {
    pub template: Mesh,
    pub target: Mesh,
    pub fitted: Mesh,
    pub deformation: Deformation,
    pub view_ious: Vec<f64>,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    iou: f64,
    deform: f64,
    lap: f64,
    flat: f64,
    total: f64,
}

/// Root-mean-square offset length.
pub fn deformation_norm(d: &Deformation) -> f64 {
    if d.offsets.is_empty() {
        return 0.0;
    }
    let sq: f64 = d.offsets.iter().map(|o| o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sum();
    (sq / d.offsets.len() as f64).sqrt()
}

fn cameras(cfg: &ExperimentConfig) -> Vec<Camera> {
    cfg.shape
        .views
        .iter()
        .map(|v| Camera::orbit(v[0], v[1], cfg.shape.camera_scale))
        .collect()
}

/// Weighted loss and its gradient w.r.t. the flat offsets. The Laplacian acts
/// on the offset field over the template connectivity, so a rigid
/// translation costs nothing but uneven offsets do.
fn objective(
    template: &Mesh,
    offsets: &[f64],
    cams: &[Camera],
    targets: &[Image],
    settings: RasterSettings,
    cfg: &ExperimentConfig,
) -> Result<(Terms, Vec<f64>, Vec<Image>)> {
    let w = &cfg.weights;
    let d = Deformation::from_flat(offsets);
    let mesh = apply_deform(template, &d)?;
    let mut grad = vec![0.0; offsets.len()];
    let mut add = |g: &[[f64; 3]], scale: f64| {
        for (i, v) in g.iter().enumerate() {
            for k in 0..3 {
                grad[3 * i + k] += scale * v[k];
            }
        }
    };
    let mut t = Terms::default();
    let mut renders = Vec::with_capacity(cams.len());
    let per_view = 1.0 / cams.len() as f64;
    for (cam, target) in cams.iter().zip(targets) {
        let r = soft_silhouette(&mesh, cam, settings);
        let (l, g_img) = iou_loss(target, &r.image)?;
        t.iou += l * per_view;
        if w.iou > 0.0 {
            add(&r.backward(&g_img)?, w.iou * per_view);
        }
        renders.push(r.image);
    }
    let (l, g) = deform_loss(&d);
    t.deform = l;
    add(&g, w.deform);
    let (l, g) = laplacian_loss(&template.with_vertices(to_vec3s(offsets))?)?;
    t.lap = l;
    add(&g, w.lap);
    let (l, g) = flatness_loss(&mesh)?;
    t.flat = l;
    add(&g, w.flat);
    t.total = w.iou * t.iou + w.deform * t.deform + w.lap * t.lap + w.flat * t.flat;
    Ok((t, grad, renders))
}

fn log_terms(report: &mut Report, it: Option<usize>, t: &Terms) {
    report.push(MODE, it, "iou_loss", t.iou);
    report.push(MODE, it, "deform_loss", t.deform);
    report.push(MODE, it, "lap_loss", t.lap);
    report.push(MODE, it, "flat_loss", t.flat);
    report.push(MODE, it, "total_loss", t.total);
}

pub fn run_into(cfg: &ExperimentConfig, out: Option<&Path>, report: &mut Report) -> Result<ShapeFit> {
    let p = &cfg.shape;
    let template = icosphere(p.template_level)?;
    let target = icosphere(p.target_level)?.scaled(p.target_axes);
    let settings = RasterSettings::new(cfg.image_height, cfg.image_width, cfg.sigma)?;
    let cams = cameras(cfg);
    let targets: Vec<Image> = cams.iter().map(|c| soft_silhouette(&target, c, settings).image).collect();

    let mut offsets = vec![0.0; 3 * template.vertices.len()];
    let mut opt = Adam::new(offsets.len(), cfg.lr_shape);
    let log_every = p.log_every.max(1);
    for it in 0..cfg.iterations {
        let (terms, grad, renders) = objective(&template, &offsets, &cams, &targets, settings, cfg)?;
        if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            report.push(MODE, Some(it), "total_loss", terms.total);
            return Err(Error::Numeric(format!("shape fit diverged at iteration {it}")));
        }
        if it % log_every == 0 {
            log_terms(report, Some(it), &terms);
            let mut mean = 0.0;
            for (t, r) in targets.iter().zip(&renders) {
                mean += mask_iou(t, r, p.iou_threshold)? / targets.len() as f64;
            }
            report.push(MODE, Some(it), "mean_mask_iou", mean);
        }
        opt.step(&mut offsets, &grad)?;
    }

    let (terms, _, renders) = objective(&template, &offsets, &cams, &targets, settings, cfg)?;
    if !terms.total.is_finite() {
        return Err(Error::Numeric("shape fit ended with a non-finite loss".into()));
    }
    log_terms(report, None, &terms);
    let deformation = Deformation::from_flat(&offsets);
    let fitted = apply_deform(&template, &deformation)?;
    let mut view_ious = Vec::with_capacity(cams.len());
    for (k, (t, r)) in targets.iter().zip(&renders).enumerate() {
        let iou = mask_iou(t, r, p.iou_threshold)?;
        report.push(MODE, None, &format!("mask_iou_view{k}"), iou);
        view_ious.push(iou);
    }
    let mean_iou = view_ious.iter().sum::<f64>() / view_ious.len() as f64;
    report.push(MODE, None, "mean_mask_iou", mean_iou);
    report.push(MODE, None, "deformation_norm", deformation_norm(&deformation));

    if p.fid_views >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..p.fid_views {
            let cam = random_view_camera(&mut rng, p.camera_scale);
            a.push(soft_silhouette(&fitted, &cam, settings).image);
            b.push(soft_silhouette(&target, &cam, settings).image);
        }
        let fid = fid_between_sets(&a, &b, &PatchStats { grid: p.fid_grid })?;
        report.push(MODE, None, "fid_random_views", fid);
    }

    if let Some(dir) = out {
        fitted.write_obj(None, dir.join("fitted.obj"))?;
        target.write_obj(None, dir.join("target.obj"))?;
        for (k, (t, r)) in targets.iter().zip(&renders).enumerate() {
            save_image(t, dir.join(format!("target-view{k}.png")))?;
            save_image(r, dir.join(format!("fit-view{k}.png")))?;
        }
    }
    Ok(ShapeFit {
        template,
        target,
        fitted,
        deformation,
        view_ious,
        mean_iou,
    })
}

pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Report> {
    let mut report = Report::new(Experiment::SilhouetteFit.name(), &cfg.hash());
    run_into(cfg, out, &mut report)?;
    Ok(report)
}
