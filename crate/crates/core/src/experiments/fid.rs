//! Fréchet distance between two folders (or lists) of PNG images.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{fid_between_sets, ssim, PatchStats, SSIM_WINDOW};
use crate::tensorgrid::{load_image, Image};

use super::config::{Experiment, ExperimentConfig};
use super::report::Report;

const MODE: &str = "patch-stats";

/// Expands directories to their `.png` files (sorted by name); plain files
/// are kept in the given order.
pub fn collect_pngs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
                let path = entry.map_err(|e| Error::io(p, e))?.path();
                if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    found.push(path);
                }
            }
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn load_set(paths: &[PathBuf], which: &str) -> Result<Vec<Image>> {
    let files = collect_pngs(paths)?;
    if files.len() < 2 {
        return Err(Error::Input(format!("set {which} needs at least 2 images, found {}", files.len())));
    }
    files.iter().map(load_image).collect()
}

/// FID of two in-memory sets; adds mean SSIM when the sets pair up 1:1.
pub fn compare_sets(a: &[Image], b: &[Image], grid: usize, report: &mut Report) -> Result<f64> {
    let fid = fid_between_sets(a, b, &PatchStats { grid })?;
    report.push(MODE, None, "fid", fid);
    let paired = a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.same_shape(y) && x.height >= SSIM_WINDOW && x.width >= SSIM_WINDOW);
    if paired {
        let mut total = 0.0;
        for (x, y) in a.iter().zip(b) {
            total += ssim(x, y)?;
        }
        report.push(MODE, None, "ssim_mean", total / a.len() as f64);
    }
    Ok(fid)
}

pub fn run(cfg: &ExperimentConfig, set_a: &[PathBuf], set_b: &[PathBuf], grid: usize) -> Result<Report> {
    let mut cfg = cfg.clone();
    cfg.shape.fid_grid = grid;
    cfg.validate()?;
    let a = load_set(set_a, "a")?;
    let b = load_set(set_b, "b")?;
    let mut report = Report::new(Experiment::Fid.name(), &cfg.hash());
    compare_sets(&a, &b, grid, &mut report)?;
    Ok(report)
}

/// Convenience for a single directory pair.
pub fn run_dirs(cfg: &ExperimentConfig, a: &Path, b: &Path, grid: usize) -> Result<Report> {
    run(cfg, &[a.to_path_buf()], &[b.to_path_buf()], grid)
}
