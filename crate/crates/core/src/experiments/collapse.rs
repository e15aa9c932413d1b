//! Uniform source, flow parked on cell centres: the plain coordinate gradient
//! vanishes, the variance-modulated one does not.

use crate::error::Result;
use crate::sampler::{coord_grad_norm_map, ModulationMode};
use crate::tensorgrid::{FlowField, Image, VarianceMap};

use super::config::{Experiment, ExperimentConfig};
use super::report::Report;

pub struct CollapseSetup {
    pub source: Image,
    pub flow: FlowField,
    pub upstream: Image,
    pub variance: VarianceMap,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<CollapseSetup> {
    let (h, w) = (cfg.image_height, cfg.image_width);
    let p = &cfg.collapse;
    let source = Image::from_fn(h, w, 1, |_, x, _| p.source_level + p.source_slope * x as f64);
    // one cell per source pixel square, sitting on its centre
    let (fh, fw) = (h - 1, w - 1);
    let to_norm = |pix: f64, extent: usize| 2.0 * pix / (extent - 1) as f64 - 1.0;
    let mut coords = Vec::with_capacity(fh * fw);
    for i in 0..fh {
        for j in 0..fw {
            coords.push([to_norm(j as f64 + 0.5, w), to_norm(i as f64 + 0.5, h)]);
        }
    }
    let flow = FlowField::new(fh, fw, coords)?;
    let upstream = Image::filled(fh, fw, 1, 1.0);
    let values = (0..h * w)
        .map(|k| 1.0 + p.var_ramp * (k % w) as f64 / (w - 1) as f64)
        .collect();
    let variance = VarianceMap::new(h, w, values)?;
    Ok(CollapseSetup {
        source,
        flow,
        upstream,
        variance,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and max per-cell coordinate-gradient norm for the baseline and for
/// the configured mode.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let s = setup(cfg)?;
    let mut report = Report::new(Experiment::Collapse.name(), &cfg.hash());
    let mut modes = vec![ModulationMode::Baseline];
    if cfg.mode != ModulationMode::Baseline {
        modes.push(cfg.mode);
    }
    for mode in modes {
        let map = coord_grad_norm_map(&s.source, &s.flow, &s.upstream, Some(&s.variance), mode)?;
        let max = map.data.iter().cloned().fold(0.0, f64::max);
        report.push(mode.as_str(), None, "grad_norm", mean(&map.data));
        report.push(mode.as_str(), None, "grad_norm_max", max);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rows() {
        let cfg = ExperimentConfig::defaults(Experiment::Collapse);
        let r = run(&cfg).unwrap();
        assert_eq!(r.summary("baseline", "grad_norm"), Some(0.0));
        // ramp slope per pixel times the level
        let expect = 0.5 * 1.0 / 7.0;
        let g = r.summary("gradient-only", "grad_norm").unwrap();
        assert!((g - expect).abs() < 1e-15, "{g}");
    }

    #[test]
    fn flat_variance_and_sloped_source() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Collapse);
        cfg.collapse.var_ramp = 0.0;
        let r = run(&cfg).unwrap();
        assert_eq!(r.summary("baseline", "grad_norm"), Some(0.0));
        assert_eq!(r.summary("gradient-only", "grad_norm"), Some(0.0));

        let mut cfg = ExperimentConfig::defaults(Experiment::Collapse);
        cfg.collapse.source_slope = 0.01;
        let r = run(&cfg).unwrap();
        assert!((r.summary("baseline", "grad_norm").unwrap() - 0.01).abs() < 1e-15);
    }
}
