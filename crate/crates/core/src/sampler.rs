//! Bilinear grid sampling with analytic gradients and variance modulation.
//!
//! A sample at pixel position `(x, y)` is `sum_ij U_ij * l_ij` with the tent
//! weights `l_ij = max(0, 1 - |x - i|) * max(0, 1 - |y - j|)`. When the four
//! neighbours are equal the coordinate gradient vanishes identically, which
//! freezes optimization of a texture flow over flat image regions. Scaling
//! the sampling image by a positive variance map `V` before taking the
//! coordinate gradient restores a slope there.
//!
//! Three modulation modes are supported:
//!
//! * `Baseline`: `V` is ignored.
//! * `Replace`: the image `U * V` is sampled and differentiated.
//! * `GradientOnly`: forward values come from `U`, coordinate gradients from
//!   `U * V`.
//!
//! Coordinate gradients are reported in pixel units; multiply by
//! `(extent - 1) / 2` per axis to get gradients w.r.t. normalized coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same, Error, Result};
use crate::tensorgrid::{FlowField, Image, VarianceMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationMode {
    Baseline,
    Replace,
    #[default]
    GradientOnly,
}

impl ModulationMode {
    pub const ALL: [ModulationMode; 3] = [
        ModulationMode::Baseline,
        ModulationMode::Replace,
        ModulationMode::GradientOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModulationMode::Baseline => "baseline",
            ModulationMode::Replace => "replace",
            ModulationMode::GradientOnly => "gradient-only",
        }
    }
}

impl std::str::FromStr for ModulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "replace" => Ok(Self::Replace),
            "gradient-only" => Ok(Self::GradientOnly),
            other => Err(Error::Input(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModulationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a normalized coordinate to a pixel coordinate; `-1` and `1` land on
/// the centres of the first and last pixel.
#[inline]
pub fn denormalize(u: f64, extent: usize) -> f64 {
    (u + 1.0) / 2.0 * (extent.saturating_sub(1)) as f64
}

/// Derivative of [`denormalize`] w.r.t. its coordinate.
#[inline]
pub fn denormalize_scale(extent: usize) -> f64 {
    (extent.saturating_sub(1)) as f64 / 2.0
}

/// The (at most) four source pixels touched by one bilinear sample.
///
/// Positions are clamped to the image; an axis that was clamped reports a
/// zero derivative. At an exact integer position the cell to the right (or
/// below) is used, except on the last pixel where the cell to the left is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
    pub x_active: bool,
    pub y_active: bool,
}

fn axis(p: f64, extent: usize) -> (usize, usize, f64, bool) {
    if extent <= 1 {
        return (0, 0, 0.0, false);
    }
    let hi = (extent - 1) as f64;
    let active = (0.0..=hi).contains(&p);
    let pc = p.clamp(0.0, hi);
    let i0 = (pc.floor() as usize).min(extent - 2);
    (i0, i0 + 1, pc - i0 as f64, active)
}

impl Stencil {
    pub fn at_pixel(x: f64, y: f64, width: usize, height: usize) -> Self {
        let (x0, x1, fx, x_active) = axis(x, width);
        let (y0, y1, fy, y_active) = axis(y, height);
        Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
            x_active,
            y_active,
        }
    }

    pub fn at_normalized(coord: [f64; 2], width: usize, height: usize) -> Self {
        Self::at_pixel(denormalize(coord[0], width), denormalize(coord[1], height), width, height)
    }

    /// `(y, x, weight)` for the four corners in the order 00, 10, 01, 11.
    pub fn weights(&self) -> [(usize, usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.y0, self.x0, (1.0 - fx) * (1.0 - fy)),
            (self.y0, self.x1, fx * (1.0 - fy)),
            (self.y1, self.x0, (1.0 - fx) * fy),
            (self.y1, self.x1, fx * fy),
        ]
    }

    /// Pixel-unit derivatives `(d/dx, d/dy)` of the four weights, same order
    /// as [`Stencil::weights`]. Clamped axes give zeros.
    pub fn weight_grads(&self) -> [[f64; 2]; 4] {
        let (fx, fy) = (self.fx, self.fy);
        let ax = if self.x_active { 1.0 } else { 0.0 };
        let ay = if self.y_active { 1.0 } else { 0.0 };
        [
            [-(1.0 - fy) * ax, -(1.0 - fx) * ay],
            [(1.0 - fy) * ax, -fx * ay],
            [-fy * ax, (1.0 - fx) * ay],
            [fy * ax, fx * ay],
        ]
    }

    /// Bilinear value of the four corner values `[u00, u10, u01, u11]`.
    ///
    /// Evaluated as nested interpolations so that equal corners reproduce
    /// their value exactly and the result never leaves the corner range.
    #[inline]
    pub fn interpolate(&self, u: [f64; 4]) -> f64 {
        let top = lerp(u[0], u[1], self.fx);
        let bottom = lerp(u[2], u[3], self.fx);
        lerp(top, bottom, self.fy)
    }

    /// Pixel-unit gradient of [`Stencil::interpolate`] w.r.t. the position.
    #[inline]
    pub fn interpolate_grad(&self, u: [f64; 4]) -> [f64; 2] {
        let (fx, fy) = (self.fx, self.fy);
        let dx = if self.x_active {
            (1.0 - fy) * (u[1] - u[0]) + fy * (u[3] - u[2])
        } else {
            0.0
        };
        let dy = if self.y_active {
            (1.0 - fx) * (u[2] - u[0]) + fx * (u[3] - u[1])
        } else {
            0.0
        };
        [dx, dy]
    }

    fn corners(&self, src: &Image, c: usize, scale: Option<&VarianceMap>) -> [f64; 4] {
        let w = self.weights();
        let mut u = [0.0; 4];
        for (k, &(y, x, _)) in w.iter().enumerate() {
            let s = scale.map_or(1.0, |v| v.get(y, x));
            u[k] = src.get(y, x, c) * s;
        }
        u
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        return a;
    }
    let v = (1.0 - t) * a + t * b;
    v.clamp(a.min(b), a.max(b))
}

/// Gradients of a scalar loss through a sampling call.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    /// Per coordinate `(dL/dx, dL/dy)` in pixel units.
    pub d_coords: Vec<[f64; 2]>,
    /// `dL/dU` for the unmodulated source image.
    pub d_image: Image,
    /// `dL/dV` of the modulated branch, present when a variance map took part.
    pub d_var: Option<Vec<f64>>,
}

impl SampleGrad {
    /// Coordinate gradients w.r.t. normalized coordinates.
    pub fn d_coords_normalized(&self, src_width: usize, src_height: usize) -> Vec<[f64; 2]> {
        let (sx, sy) = (denormalize_scale(src_width), denormalize_scale(src_height));
        self.d_coords.iter().map(|g| [g[0] * sx, g[1] * sy]).collect()
    }
}

fn check_var(src: &Image, var: Option<&VarianceMap>) -> Result<()> {
    if let Some(v) = var {
        ensure_same("variance dims", (v.height, v.width), (src.height, src.width))?;
    }
    Ok(())
}

fn forward_scale(var: Option<&VarianceMap>, mode: ModulationMode) -> Option<&VarianceMap> {
    match mode {
        ModulationMode::Replace => var,
        _ => None,
    }
}

fn gradient_scale(var: Option<&VarianceMap>, mode: ModulationMode) -> Option<&VarianceMap> {
    match mode {
        ModulationMode::Baseline => None,
        _ => var,
    }
}

/// Samples `src` at a list of normalized coordinates; returns `n x C` values.
pub fn sample_coords(
    src: &Image,
    coords: &[[f64; 2]],
    var: Option<&VarianceMap>,
    mode: ModulationMode,
) -> Result<Vec<f64>> {
    check_var(src, var)?;
    let scale = forward_scale(var, mode);
    let mut out = Vec::with_capacity(coords.len() * src.channels);
    for &coord in coords {
        let st = Stencil::at_normalized(coord, src.width, src.height);
        for c in 0..src.channels {
            out.push(st.interpolate(st.corners(src, c, scale)));
        }
    }
    Ok(out)
}

/// Backward of [`sample_coords`] for an upstream gradient of `n x C` values.
pub fn sample_coords_backward(
    src: &Image,
    coords: &[[f64; 2]],
    upstream: &[f64],
    var: Option<&VarianceMap>,
    mode: ModulationMode,
) -> Result<SampleGrad> {
    check_var(src, var)?;
    ensure_same("upstream length", upstream.len(), coords.len() * src.channels)?;
    let grad_scale = gradient_scale(var, mode);
    let image_scale = forward_scale(var, mode);
    let mut d_coords = Vec::with_capacity(coords.len());
    let mut d_image = Image::zeros(src.height, src.width, src.channels);
    let mut d_var = grad_scale.map(|_| vec![0.0; src.pixel_count()]);

    for (n, &coord) in coords.iter().enumerate() {
        let st = Stencil::at_normalized(coord, src.width, src.height);
        let weights = st.weights();
        let mut g = [0.0; 2];
        for c in 0..src.channels {
            let up = upstream[n * src.channels + c];
            let slope = st.interpolate_grad(st.corners(src, c, grad_scale));
            g[0] += up * slope[0];
            g[1] += up * slope[1];
            for &(y, x, w) in &weights {
                let s = image_scale.map_or(1.0, |v| v.get(y, x));
                let i = d_image.index(y, x, c);
                d_image.data[i] += up * w * s;
                if let Some(dv) = d_var.as_mut() {
                    dv[y * src.width + x] += up * w * src.get(y, x, c);
                }
            }
        }
        d_coords.push(g);
    }
    Ok(SampleGrad {
        d_coords,
        d_image,
        d_var,
    })
}

/// Samples `src` at every flow cell. The result has the flow's spatial size
/// and the source's channel count.
pub fn grid_sample(
    src: &Image,
    flow: &FlowField,
    var: Option<&VarianceMap>,
    mode: ModulationMode,
) -> Result<Image> {
    let data = sample_coords(src, &flow.coords, var, mode)?;
    Image::new(flow.height, flow.width, src.channels, data)
}

pub fn grid_sample_backward(
    src: &Image,
    flow: &FlowField,
    upstream: &Image,
    var: Option<&VarianceMap>,
    mode: ModulationMode,
) -> Result<SampleGrad> {
    ensure_same(
        "upstream dims",
        (upstream.height, upstream.width, upstream.channels),
        (flow.height, flow.width, src.channels),
    )?;
    sample_coords_backward(src, &flow.coords, &upstream.data, var, mode)
}

/// Per flow cell, the Euclidean norm of its pixel-unit coordinate gradient.
pub fn coord_grad_norm_map(
    src: &Image,
    flow: &FlowField,
    upstream: &Image,
    var: Option<&VarianceMap>,
    mode: ModulationMode,
) -> Result<Image> {
    let grad = grid_sample_backward(src, flow, upstream, var, mode)?;
    let data = grad.d_coords.iter().map(|g| g[0].hypot(g[1])).collect();
    Image::new(flow.height, flow.width, 1, data)
}
