//! Recover a known warp of a mostly flat image by optimizing the flow field
//! against the reconstruction loss.
//!
//! Inside flat regions the plain coordinate gradient is zero, so cells that
//! start more than a pixel from where they belong never move. The modulated
//! arms also learn a variance map. Its objective asks that one flow step
//! along the modulated gradient lands near the pseudo-labels:
//!
//! `J(V) = mean_c |f_c - a g_c(V) - y_c|^2 + w_var mean (V - 1)^2`
//!
//! where `g_c(V)` is the modulated coordinate gradient of cell `c` (linear in
//! `V`) and `a` is `probe_step`.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_same, Error, Result};
use crate::losses::{align_groups, rec_loss};
use crate::optim::{bound_value, bound_value_grad, bound_variance, unbound_value, Adam};
use crate::sampler::{denormalize, denormalize_scale, grid_sample, grid_sample_backward, ModulationMode, Stencil};
use crate::tensorgrid::{save_image, FlowField, Image, VarianceMap};

use super::config::{Experiment, ExperimentConfig};
use super::pixel_to_normalized;
use super::report::Report;

#[derive(Debug, Clone)]
pub struct FlowScene {
    pub source: Image,
    pub target: Image,
    pub init: FlowField,
    pub truth: FlowField,
    pub pseudo: FlowField,
}

const PALETTE: [[f64; 3]; 4] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.30],
    [0.25, 0.30, 0.85],
    [0.90, 0.80, 0.30],
];

/// Quadrants of flat colour with a few 3x3 landmarks; the flow covers the
/// centred crop of the source and the truth shifts it by a smooth warp.
pub fn build_scene(cfg: &ExperimentConfig) -> Result<FlowScene> {
    let (h, w) = (cfg.image_height, cfg.image_width);
    let (fh, fw) = (cfg.flow_height, cfg.flow_width);
    if fh > h || fw > w {
        return Err(Error::Config(format!("flow {fh}x{fw} larger than image {h}x{w}")));
    }
    let p = &cfg.flow;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut source = Image::from_fn(h, w, 3, |y, x, c| {
        let q = usize::from(x >= w / 2) + 2 * usize::from(y >= h / 2);
        PALETTE[q][c]
    });
    if w > 4 && h > 4 {
        for _ in 0..p.landmarks {
            let y0 = rng.gen_range(1..h - 3);
            let x0 = rng.gen_range(1..w - 3);
            let color: [f64; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            for y in y0..y0 + 3 {
                for x in x0..x0 + 3 {
                    for (c, &v) in color.iter().enumerate() {
                        source.set(y, x, c, v);
                    }
                }
            }
        }
    }

    let (my, mx) = ((h - fh) / 2, (w - fw) / 2);
    let phase: [f64; 4] = [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)];
    let (hi_x, hi_y) = ((w - 1) as f64, (h - 1) as f64);
    let mut init = Vec::with_capacity(fh * fw);
    let mut truth = Vec::with_capacity(fh * fw);
    let mut pseudo = Vec::with_capacity(fh * fw);
    for a in 0..fh {
        for b in 0..fw {
            let (x, y) = ((b + mx) as f64, (a + my) as f64);
            let (ta, tb) = (TAU * a as f64 / fh as f64, TAU * b as f64 / fw as f64);
            let tx = (x + p.displacement[0] + p.wobble * (ta + phase[0]).sin()).clamp(0.0, hi_x);
            let ty = (y + p.displacement[1] + p.wobble * (tb + phase[1]).cos()).clamp(0.0, hi_y);
            let px = tx + p.pseudo_label_error * (ta + tb + phase[2]).sin();
            let py = ty + p.pseudo_label_error * (ta - tb + phase[3]).cos();
            init.push([pixel_to_normalized(x, w), pixel_to_normalized(y, h)]);
            truth.push([pixel_to_normalized(tx, w), pixel_to_normalized(ty, h)]);
            pseudo.push([pixel_to_normalized(px, w), pixel_to_normalized(py, h)]);
        }
    }
    let truth = FlowField::new(fh, fw, truth)?;
    let target = grid_sample(&source, &truth, None, ModulationMode::Baseline)?;
    let init = if p.init_from_truth {
        truth.clone()
    } else {
        FlowField::new(fh, fw, init)?
    };
    Ok(FlowScene {
        source,
        target,
        init,
        truth,
        pseudo: FlowField::new(fh, fw, pseudo)?,
    })
}

/// Mean pixel distance between corresponding cells.
pub fn endpoint_error(flow: &FlowField, truth: &FlowField, src_width: usize, src_height: usize) -> Result<f64> {
    ensure_same("flow dims", (flow.height, flow.width), (truth.height, truth.width))?;
    let total: f64 = flow
        .coords
        .iter()
        .zip(&truth.coords)
        .map(|(f, t)| {
            let dx = denormalize(f[0], src_width) - denormalize(t[0], src_width);
            let dy = denormalize(f[1], src_height) - denormalize(t[1], src_height);
            dx.hypot(dy)
        })
        .sum();
    Ok(total / flow.len() as f64)
}

/// Value and gradient w.r.t. the raw (unbounded) variance parameters of the
/// lookahead objective described in the module docs. `upstream` is the
/// per-element reconstruction gradient without the `1/n` of the mean.
#[allow(clippy::too_many_arguments)]
pub fn variance_objective(
    src: &Image,
    flow: &FlowField,
    upstream: &Image,
    raw: &[f64],
    pseudo: &FlowField,
    probe_step: f64,
    var_reg: f64,
    bounds: (f64, f64),
) -> Result<(f64, Vec<f64>)> {
    ensure_same("variance parameters", raw.len(), src.height * src.width)?;
    ensure_same("pseudo-label dims", (pseudo.height, pseudo.width), (flow.height, flow.width))?;
    ensure_same(
        "upstream dims",
        (upstream.height, upstream.width, upstream.channels),
        (flow.height, flow.width, src.channels),
    )?;
    let (lo, hi) = bounds;
    let var: Vec<f64> = raw.iter().map(|&r| bound_value(r, lo, hi)).collect();
    let jac = [denormalize_scale(src.width), denormalize_scale(src.height)];
    let inv_cells = 1.0 / flow.len() as f64;
    let mut d_var = vec![0.0; var.len()];
    let mut value = 0.0;
    for (c, (&f, &y)) in flow.coords.iter().zip(&pseudo.coords).enumerate() {
        let st = Stencil::at_normalized(f, src.width, src.height);
        let corners = st.weights();
        let slopes = st.weight_grads();
        let mut a = [[0.0; 2]; 4];
        let mut g = [0.0; 2];
        for k in 0..4 {
            let (py, px, _) = corners[k];
            let s: f64 = (0..src.channels)
                .map(|ch| upstream.data[c * src.channels + ch] * src.get(py, px, ch))
                .sum();
            let v = var[py * src.width + px];
            for d in 0..2 {
                a[k][d] = slopes[k][d] * s * jac[d];
                g[d] += v * a[k][d];
            }
        }
        let r = [f[0] - probe_step * g[0] - y[0], f[1] - probe_step * g[1] - y[1]];
        value += (r[0] * r[0] + r[1] * r[1]) * inv_cells;
        for (k, &(py, px, _)) in corners.iter().enumerate() {
            d_var[py * src.width + px] -= 2.0 * probe_step * inv_cells * (r[0] * a[k][0] + r[1] * a[k][1]);
        }
    }
    let inv_pix = 1.0 / var.len() as f64;
    let mut grad = Vec::with_capacity(raw.len());
    for (i, &r) in raw.iter().enumerate() {
        let dv = var[i] - 1.0;
        value += var_reg * dv * dv * inv_pix;
        let total = d_var[i] + 2.0 * var_reg * dv * inv_pix;
        grad.push(total * bound_value_grad(r, lo, hi));
    }
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub mode: ModulationMode,
    pub flow: FlowField,
    pub variance: Option<VarianceMap>,
    pub rendered: Image,
    pub rec_loss: f64,
    pub epe: f64,
}

fn diverged(report: &mut Report, mode: ModulationMode, it: usize, loss: f64) -> Error {
    report.push(mode.as_str(), Some(it), "rec_loss", loss);
    Error::Numeric(format!("{mode} arm diverged at iteration {it} (loss {loss})"))
}

/// Optimizes one arm, logging into `report`.
pub fn run_arm(scene: &FlowScene, cfg: &ExperimentConfig, mode: ModulationMode, report: &mut Report) -> Result<ArmResult> {
    let src = &scene.source;
    let (fh, fw) = (scene.init.height, scene.init.width);
    let (lo, hi) = (cfg.var_lo, cfg.var_hi);
    let learns_var = mode != ModulationMode::Baseline;
    let mut flow_params = scene.init.flat();
    let mut raw = vec![unbound_value(1.0, lo, hi); src.height * src.width];
    let mut flow_opt = Adam::new(flow_params.len(), cfg.lr_flow);
    let mut var_opt = Adam::new(raw.len(), cfg.lr_var);
    let singletons: Vec<Vec<usize>> = (0..fh * fw).map(|c| vec![c]).collect();
    let pseudo_targets: Vec<Option<[f64; 2]>> = scene.pseudo.coords.iter().map(|&p| Some(p)).collect();
    let norm_count = (scene.target.data.len()) as f64;
    let log_every = cfg.flow.log_every.max(1);

    for it in 0..cfg.iterations {
        let flow = FlowField::from_flat(fh, fw, &flow_params)?;
        let var = if learns_var {
            Some(bound_variance(&raw, src.height, src.width, lo, hi)?)
        } else {
            None
        };
        let rendered = grid_sample(src, &flow, var.as_ref(), mode)?;
        let (loss, upstream) = rec_loss(&scene.target, &rendered, cfg.rec_norm)?;
        if !loss.is_finite() {
            return Err(diverged(report, mode, it, loss));
        }
        if it % log_every == 0 {
            report.push(mode.as_str(), Some(it), "rec_loss", loss);
            report.push(mode.as_str(), Some(it), "epe", endpoint_error(&flow, &scene.truth, src.width, src.height)?);
        }

        let var = if learns_var {
            let unscaled = upstream.map(|g| g * norm_count);
            let (_, g_raw) = variance_objective(
                src,
                &flow,
                &unscaled,
                &raw,
                &scene.pseudo,
                cfg.flow.probe_step,
                cfg.weights.var_reg,
                (lo, hi),
            )?;
            var_opt.step(&mut raw, &g_raw)?;
            Some(bound_variance(&raw, src.height, src.width, lo, hi)?)
        } else {
            None
        };

        let sg = grid_sample_backward(src, &flow, &upstream, var.as_ref(), mode)?;
        let mut grad: Vec<f64> = sg
            .d_coords_normalized(src.width, src.height)
            .iter()
            .flat_map(|g| [cfg.weights.rec * g[0], cfg.weights.rec * g[1]])
            .collect();
        if cfg.weights.align > 0.0 {
            let (_, ga) = align_groups(&flow, &singletons, &pseudo_targets)?;
            for (c, g) in ga.iter().enumerate() {
                grad[2 * c] += cfg.weights.align * g[0];
                grad[2 * c + 1] += cfg.weights.align * g[1];
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(report, mode, it, f64::NAN));
        }
        flow_opt.step(&mut flow_params, &grad)?;
    }

    let flow = FlowField::from_flat(fh, fw, &flow_params)?;
    let variance = if learns_var {
        Some(bound_variance(&raw, src.height, src.width, lo, hi)?)
    } else {
        None
    };
    let rendered = grid_sample(src, &flow, variance.as_ref(), mode)?;
    let (loss, _) = rec_loss(&scene.target, &rendered, cfg.rec_norm)?;
    if !loss.is_finite() {
        return Err(diverged(report, mode, cfg.iterations, loss));
    }
    let epe = endpoint_error(&flow, &scene.truth, src.width, src.height)?;
    report.push(mode.as_str(), None, "rec_loss", loss);
    report.push(mode.as_str(), None, "epe", epe);
    Ok(ArmResult {
        mode,
        flow,
        variance,
        rendered,
        rec_loss: loss,
        epe,
    })
}

/// Runs the baseline arm and, unless it is the baseline, the configured mode.
/// Renders are written to `out` when given.
pub fn run_into(cfg: &ExperimentConfig, out: Option<&Path>, report: &mut Report) -> Result<Vec<ArmResult>> {
    let scene = build_scene(cfg)?;
    let before = grid_sample(&scene.source, &scene.init, None, ModulationMode::Baseline)?;
    let (init_loss, _) = rec_loss(&scene.target, &before, cfg.rec_norm)?;
    report.push("init", None, "rec_loss", init_loss);
    report.push(
        "init",
        None,
        "epe",
        endpoint_error(&scene.init, &scene.truth, scene.source.width, scene.source.height)?,
    );
    if let Some(dir) = out {
        save_image(&scene.source, dir.join("source.png"))?;
        save_image(&scene.target, dir.join("target.png"))?;
        save_image(&before, dir.join("before.png"))?;
    }
    let mut modes = vec![ModulationMode::Baseline];
    if cfg.mode != ModulationMode::Baseline {
        modes.push(cfg.mode);
    }
    let mut arms = Vec::new();
    for mode in modes {
        let arm = run_arm(&scene, cfg, mode, report)?;
        if let Some(dir) = out {
            save_image(&arm.rendered, dir.join(format!("after-{mode}.png")))?;
            if let Some(v) = &arm.variance {
                let img = Image::new(v.height, v.width, 1, v.values.iter().map(|x| (x - cfg.var_lo) / (cfg.var_hi - cfg.var_lo)).collect())?;
                save_image(&img, dir.join(format!("variance-{mode}.png")))?;
            }
        }
        arms.push(arm);
    }
    Ok(arms)
}

pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Report> {
    let mut report = Report::new(Experiment::FlowRecover.name(), &cfg.hash());
    run_into(cfg, out, &mut report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::fd_check;
    use crate::sampler::sample_coords_backward;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(Experiment::FlowRecover);
        cfg.image_height = 16;
        cfg.image_width = 16;
        cfg.flow_height = 12;
        cfg.flow_width = 12;
        cfg.flow.landmarks = 2;
        cfg.iterations = 5;
        cfg
    }

    #[test]
    fn truth_init_is_a_fixed_point() {
        let mut cfg = small_cfg();
        cfg.flow.init_from_truth = true;
        let r = run(&cfg, None).unwrap();
        for mode in ["init", "baseline", "gradient-only"] {
            assert_eq!(r.summary(mode, "rec_loss"), Some(0.0), "{mode}");
            assert_eq!(r.summary(mode, "epe"), Some(0.0), "{mode}");
        }
    }

    #[test]
    fn zero_iterations_report_initial_errors() {
        let mut cfg = small_cfg();
        cfg.iterations = 0;
        let r = run(&cfg, None).unwrap();
        let init = (r.summary("init", "rec_loss"), r.summary("init", "epe"));
        assert!(init.0.unwrap() > 0.0);
        assert_eq!((r.summary("baseline", "rec_loss"), r.summary("baseline", "epe")), init);
        assert_eq!((r.summary("gradient-only", "rec_loss"), r.summary("gradient-only", "epe")), init);
    }

    #[test]
    fn scene_truth_is_a_translation_plus_wobble() {
        let cfg = small_cfg();
        let s = build_scene(&cfg).unwrap();
        let epe = endpoint_error(&s.init, &s.truth, 16, 16).unwrap();
        let shift = cfg.flow.displacement[0].hypot(cfg.flow.displacement[1]);
        assert!((epe - shift).abs() < cfg.flow.wobble * 2.0, "{epe}");
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let cfg = small_cfg();
        let s = build_scene(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // coordinates off the pixel gridlines
        let coords: Vec<[f64; 2]> = s
            .init
            .coords
            .iter()
            .map(|c| [c[0] + rng.gen_range(0.02..0.1), c[1] + rng.gen_range(0.02..0.1)])
            .collect();
        let flow = FlowField::new(12, 12, coords).unwrap();
        let upstream = Image::from_fn(12, 12, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let raw: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bounds = (0.25, 4.0);
        let (_, grad) = variance_objective(&s.source, &flow, &upstream, &raw, &s.pseudo, 0.02, 0.1, bounds).unwrap();
        let f = |x: &[f64]| Ok(variance_objective(&s.source, &flow, &upstream, x, &s.pseudo, 0.02, 0.1, bounds)?.0);
        let rep = fd_check(f, &grad, &raw, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");

        // the linear model of the step agrees with the sampler's modulated gradient
        let var = bound_variance(&raw, 16, 16, bounds.0, bounds.1).unwrap();
        let sg = sample_coords_backward(&s.source, &flow.coords, &upstream.data, Some(&var), ModulationMode::GradientOnly).unwrap();
        let g = sg.d_coords_normalized(16, 16);
        let zero_step = variance_objective(&s.source, &flow, &upstream, &raw, &flow, 1.0, 0.0, bounds).unwrap().0;
        let direct: f64 = g.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>() / flow.len() as f64;
        assert!((zero_step - direct).abs() <= 1e-12 * direct.max(1.0));
    }
}
