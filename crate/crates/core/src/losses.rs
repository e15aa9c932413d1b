//! Reconstruction and supervision losses with analytic gradients.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same, Error, Result};
use crate::meshkit::{Mesh, UvMapping};
use crate::softrender::{project, project_backward_params, Camera, RasterWeights};
use crate::tensorgrid::{FlowField, Image};

/// `1 - |R * P|_1 / |R + P - R * P|_1` and its gradient w.r.t. `P`.
///
/// An empty union yields zero loss and zero gradient.
pub fn iou_loss(s_real: &Image, s_pred: &Image) -> Result<(f64, Image)> {
    s_real.ensure_same_shape(s_pred, "iou masks")?;
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&r, &p) in s_real.data.iter().zip(&s_pred.data) {
        inter += r * p;
        union += r + p - r * p;
    }
    let mut grad = Image::zeros(s_pred.height, s_pred.width, s_pred.channels);
    if union == 0.0 {
        return Ok((0.0, grad));
    }
    let u2 = union * union;
    for (g, &r) in grad.data.iter_mut().zip(&s_real.data) {
        // d(I/U)/dp = (r U - I (1 - r)) / U^2
        *g = -(r * union - inter * (1.0 - r)) / u2;
    }
    Ok((1.0 - inter / union, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RecNorm {
    #[default]
    L1,
    L2,
}

/// Mean absolute (or squared) difference and its gradient w.r.t. `rendered`.
/// The L1 subgradient is 0 at exact ties.
pub fn rec_loss(target: &Image, rendered: &Image, norm: RecNorm) -> Result<(f64, Image)> {
    target.ensure_same_shape(rendered, "reconstruction images")?;
    let (loss, grad) = mean_diff(&target.data, &rendered.data, norm);
    Ok((loss, Image::new(rendered.height, rendered.width, rendered.channels, grad)?))
}

fn mean_diff(target: &[f64], pred: &[f64], norm: RecNorm) -> (f64, Vec<f64>) {
    let n = target.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| {
            let d = p - t;
            match norm {
                RecNorm::L1 => {
                    loss += d.abs();
                    if d > 0.0 {
                        inv
                    } else if d < 0.0 {
                        -inv
                    } else {
                        0.0
                    }
                }
                RecNorm::L2 => {
                    loss += d * d;
                    2.0 * d * inv
                }
            }
        })
        .collect();
    (loss * inv, grad)
}

/// Flow cells whose UV centre lies inside the UV triangle of each face.
///
/// Cell `(a, b)` of an `H x W` flow sits at `u = b / (W - 1)`,
/// `v = a / (H - 1)`.
pub fn texels_per_face(flow_height: usize, flow_width: usize, mapping: &UvMapping, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let uv_of = |i: usize, extent: usize| if extent > 1 { i as f64 / (extent - 1) as f64 } else { 0.5 };
    faces
        .iter()
        .map(|f| {
            let tri = f.map(|v| mapping.coords[v]);
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in tri {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            let area = cross2(tri[0], tri[1], tri[2]);
            let mut cells = Vec::new();
            if area == 0.0 {
                return cells;
            }
            for a in 0..flow_height {
                let v = uv_of(a, flow_height);
                if v < lo[1] || v > hi[1] {
                    continue;
                }
                for b in 0..flow_width {
                    let u = uv_of(b, flow_width);
                    if u < lo[0] || u > hi[0] {
                        continue;
                    }
                    let p = [u, v];
                    let w = [
                        cross2(tri[1], tri[2], p) / area,
                        cross2(tri[2], tri[0], p) / area,
                        cross2(tri[0], tri[1], p) / area,
                    ];
                    if w.iter().all(|&x| x >= 0.0) {
                        cells.push(a * flow_width + b);
                    }
                }
            }
            cells
        })
        .collect()
}

fn cross2(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Mean over groups of `|mean(flow[group]) - target|^2`. Empty groups and
/// groups without a target are skipped.
pub fn align_groups(flow: &FlowField, groups: &[Vec<usize>], targets: &[Option<[f64; 2]>]) -> Result<(f64, Vec<[f64; 2]>)> {
    ensure_same("align targets", targets.len(), groups.len())?;
    let included: Vec<usize> = (0..groups.len())
        .filter(|&g| !groups[g].is_empty() && targets[g].is_some())
        .collect();
    if included.is_empty() {
        return Err(Error::DegenerateInput("no face has both texels and raster weight".into()));
    }
    let inv_faces = 1.0 / included.len() as f64;
    let mut grad = vec![[0.0; 2]; flow.len()];
    let mut loss = 0.0;
    for &g in &included {
        let cells = &groups[g];
        let target = targets[g].expect("filtered");
        let inv_n = 1.0 / cells.len() as f64;
        let mut mean = [0.0; 2];
        for &c in cells {
            let p = flow
                .coords
                .get(c)
                .ok_or_else(|| Error::Shape(format!("cell {c} outside flow of {}", flow.len())))?;
            mean[0] += p[0];
            mean[1] += p[1];
        }
        let diff = [mean[0] * inv_n - target[0], mean[1] * inv_n - target[1]];
        loss += diff[0] * diff[0] + diff[1] * diff[1];
        let scale = 2.0 * inv_n * inv_faces;
        for &c in cells {
            grad[c][0] += scale * diff[0];
            grad[c][1] += scale * diff[1];
        }
    }
    Ok((loss * inv_faces, grad))
}

/// Texture-flow alignment against the soft-rasterizer pseudo-label: per face,
/// the mean flow coordinate over the face's texels should match the
/// coverage-weighted mean pixel centre of the face.
pub fn align_loss(
    flow: &FlowField,
    weights: &RasterWeights,
    mapping: &UvMapping,
    faces: &[[usize; 3]],
) -> Result<(f64, Vec<[f64; 2]>)> {
    ensure_same("raster weight faces", weights.face_count, faces.len())?;
    let groups = texels_per_face(flow.height, flow.width, mapping, faces);
    let targets: Vec<Option<[f64; 2]>> = (0..faces.len()).map(|f| weights.weighted_center(f)).collect();
    align_groups(flow, &groups, &targets)
}

/// Index of the nearest point in `set` (squared distance, lowest index on ties).
fn nearest(p: [f64; 2], set: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Symmetric chamfer distance with squared point distances:
/// `mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2`, with gradients for both
/// sets.
pub fn chamfer_2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<(f64, Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput("chamfer of an empty point set".into()));
    }
    let mut ga = vec![[0.0; 2]; a.len()];
    let mut gb = vec![[0.0; 2]; b.len()];
    let one_way = |from: &[[f64; 2]], to: &[[f64; 2]], g_from: &mut [[f64; 2]], g_to: &mut [[f64; 2]]| {
        let inv = 1.0 / from.len() as f64;
        let mut sum = 0.0;
        for (i, &p) in from.iter().enumerate() {
            let (j, d) = nearest(p, to);
            sum += d;
            let diff = [p[0] - to[j][0], p[1] - to[j][1]];
            for k in 0..2 {
                g_from[i][k] += 2.0 * diff[k] * inv;
                g_to[j][k] -= 2.0 * diff[k] * inv;
            }
        }
        sum * inv
    };
    let forward = one_way(a, b, &mut ga, &mut gb);
    let backward = one_way(b, a, &mut gb, &mut ga);
    Ok((forward + backward, ga, gb))
}

/// 2D keypoint sets, one per part id.
#[derive(Debug, Clone, PartialEq)]
pub struct PartLabel2D {
    pub parts: Vec<Vec<[f64; 2]>>,
}

impl PartLabel2D {
    /// Labels obtained by projecting each labelled vertex group of `mesh`.
    pub fn from_projection(mesh: &Mesh, cam: &Camera) -> Result<Self> {
        let labels = mesh
            .part_labels
            .as_ref()
            .ok_or_else(|| Error::DegenerateInput("mesh has no part labels".into()))?;
        let pts = project(cam, &mesh.vertices);
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut parts = vec![Vec::new(); count];
        for (p, &l) in pts.iter().zip(labels) {
            parts[l].push(*p);
        }
        Ok(Self { parts })
    }

    pub fn translated(&self, by: [f64; 2]) -> Self {
        Self {
            parts: self
                .parts
                .iter()
                .map(|ps| ps.iter().map(|p| [p[0] + by[0], p[1] + by[1]]).collect())
                .collect(),
        }
    }
}

/// Mean over parts of `chamfer_2d(project(cam, part vertices), label)`, with
/// the gradient w.r.t. the raw camera parameters `[s, tx, ty, qw, qx, qy, qz]`.
pub fn part_chamfer(template: &Mesh, cam_params: &[f64; 7], labels: &PartLabel2D) -> Result<(f64, [f64; 7])> {
    let vertex_parts = template
        .part_labels
        .as_ref()
        .ok_or_else(|| Error::DegenerateInput("template has no part labels".into()))?;
    let mesh_ids: BTreeSet<usize> = vertex_parts.iter().copied().collect();
    let label_ids: BTreeSet<usize> = (0..labels.parts.len()).filter(|&i| !labels.parts[i].is_empty()).collect();
    if mesh_ids != label_ids {
        return Err(Error::DegenerateInput(format!(
            "part ids differ: mesh {mesh_ids:?}, labels {label_ids:?}"
        )));
    }
    let cam = Camera::from_params(cam_params)?;
    let pts = project(&cam, &template.vertices);
    let mut grad2d = vec![[0.0; 2]; pts.len()];
    let inv = 1.0 / mesh_ids.len() as f64;
    let mut loss = 0.0;
    for &part in &mesh_ids {
        let members: Vec<usize> = (0..pts.len()).filter(|&v| vertex_parts[v] == part).collect();
        let projected: Vec<[f64; 2]> = members.iter().map(|&v| pts[v]).collect();
        let (l, g, _) = chamfer_2d(&projected, &labels.parts[part])?;
        loss += l * inv;
        for (&v, gv) in members.iter().zip(g) {
            grad2d[v][0] += gv[0] * inv;
            grad2d[v][1] += gv[1] * inv;
        }
    }
    let grad = project_backward_params(cam_params, &template.vertices, &grad2d)?;
    Ok((loss, grad))
}

/// K-part probability maps stored as a K-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub maps: Image,
}

impl ProbMap {
    pub fn new(maps: Image) -> Result<Self> {
        if let Some(v) = maps.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { maps })
    }

    pub fn parts(&self) -> usize {
        self.maps.channels
    }
}

/// One-hot per-vertex colors for rendering part probability maps.
pub fn one_hot_colors(labels: &[usize], parts: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * parts];
    for (v, &l) in labels.iter().enumerate() {
        out[v * parts + l] = 1.0;
    }
    out
}

/// Mean absolute difference over parts and pixels; gradient w.r.t. the
/// rendered maps.
pub fn prob_loss(p_r: &ProbMap, rendered_seg: &ProbMap) -> Result<(f64, Image)> {
    rec_loss(&p_r.maps, &rendered_seg.maps, RecNorm::L1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[f64]) -> Image {
        Image::new(1, v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = mask(&[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(iou_loss(&a, &a).unwrap().0, 0.0);
        let b = mask(&[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(iou_loss(&a, &b).unwrap().0, 1.0);
        let c = mask(&[0.0, 1.0, 1.0, 0.0]);
        assert!((iou_loss(&a, &c).unwrap().0 - 2.0 / 3.0).abs() < 1e-15);
        let z = mask(&[0.0; 4]);
        let (l, g) = iou_loss(&z, &z).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&x| x == 0.0));
        assert!(matches!(iou_loss(&a, &mask(&[0.0; 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn rec_examples() {
        let a = Image::filled(2, 3, 3, 0.0);
        let b = Image::filled(2, 3, 3, 1.0);
        assert_eq!(rec_loss(&a, &a, RecNorm::L1).unwrap().0, 0.0);
        assert_eq!(rec_loss(&a, &b, RecNorm::L1).unwrap().0, 1.0);
        assert_eq!(rec_loss(&a, &b, RecNorm::L2).unwrap().0, 1.0);
        let (_, g) = rec_loss(&a, &a, RecNorm::L1).unwrap();
        assert!(g.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chamfer_examples() {
        let a = [[0.0, 0.0]];
        let b = [[3.0, 4.0]];
        assert_eq!(chamfer_2d(&a, &b).unwrap().0, 50.0);
        let s = [[0.1, 0.2], [0.5, -0.3], [1.0, 1.0]];
        assert_eq!(chamfer_2d(&s, &s).unwrap().0, 0.0);
        let t = [[0.0, 0.0], [0.7, 0.1]];
        assert_eq!(chamfer_2d(&s, &t).unwrap().0, chamfer_2d(&t, &s).unwrap().0);
        assert!(matches!(chamfer_2d(&[], &t), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn chamfer_tie_goes_to_lowest_index() {
        let a = [[0.0, 0.0]];
        let b = [[1.0, 0.0], [-1.0, 0.0]];
        let (_, _, gb) = chamfer_2d(&a, &b).unwrap();
        // a's nearest is b[0]; b[1] only receives its own direction term
        assert!(gb[0][0] > gb[1][0].abs());
    }

    #[test]
    fn align_single_texel() {
        let flow = FlowField::filled(1, 1, [0.5, 0.0]);
        let (l, g) = align_groups(&flow, &[vec![0]], &[Some([0.0, 0.0])]).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g, vec![[1.0, 0.0]]);
        assert!(matches!(
            align_groups(&flow, &[vec![]], &[Some([0.0, 0.0])]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn prob_examples() {
        let a = ProbMap::new(Image::from_fn(3, 3, 2, |y, x, c| ((y + x + c) % 2) as f64)).unwrap();
        let b = ProbMap::new(a.maps.map(|v| 1.0 - v)).unwrap();
        assert_eq!(prob_loss(&a, &a).unwrap().0, 0.0);
        assert_eq!(prob_loss(&a, &b).unwrap().0, 1.0);
        assert!(ProbMap::new(Image::filled(1, 1, 1, 1.5)).is_err());
    }
}
