//! Triangle meshes: icosphere template, spherical UV mapping, deformation and
//! the shape regularizers (offset magnitude, Laplacian, dihedral flatness).
//!
//! All regularizers are means rather than sums so that their weights do not
//! depend on mesh resolution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ensure_same, Error, Result};
use crate::sampler::{sample_coords, sample_coords_backward, ModulationMode};
use crate::tensorgrid::{write_atomic, Image};

pub type Vec3 = [f64; 3];

pub const MAX_ICOSPHERE_LEVEL: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise when seen from outside.
    pub faces: Vec<[usize; 3]>,
    pub part_labels: Option<Vec<usize>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Geometry(format!("face {fi} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Geometry(format!("face {fi} repeats a vertex")));
            }
        }
        Ok(Self {
            vertices,
            faces,
            part_labels: None,
        })
    }

    pub fn with_part_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        ensure_same("part label count", labels.len(), self.vertices.len())?;
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Undirected edges mapped to the faces that use them, in face order.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    pub fn is_edge_manifold(&self) -> bool {
        self.edge_faces().values().all(|fs| fs.len() == 2)
    }

    /// Sorted one-ring neighbours of every vertex.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Scales each axis independently.
    pub fn scaled(&self, axes: Vec3) -> Mesh {
        Mesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] * axes[0], v[1] * axes[1], v[2] * axes[2]])
                .collect(),
            ..self.clone()
        }
    }

    /// Same topology with other vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        ensure_same("vertex count", vertices.len(), self.vertices.len())?;
        Ok(Mesh {
            vertices,
            ..self.clone()
        })
    }

    pub fn to_obj(&self, uv: Option<&UvMapping>) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
        }
        if let Some(uv) = uv {
            for t in &uv.coords {
                let _ = writeln!(s, "vt {:.17e} {:.17e}", t[0], t[1]);
            }
        }
        for f in &self.faces {
            let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
            if uv.is_some() {
                let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
            } else {
                let _ = writeln!(s, "f {a} {b} {c}");
            }
        }
        s
    }

    pub fn write_obj(&self, uv: Option<&UvMapping>, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_obj(uv).as_bytes())
    }
}

/// Per-vertex offsets from a template.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    pub offsets: Vec<Vec3>,
}

impl Deformation {
    pub fn zeros(n: usize) -> Self {
        Self {
            offsets: vec![[0.0; 3]; n],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.offsets.iter().flat_map(|o| o.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            offsets: to_vec3s(flat),
        }
    }
}

/// Per-vertex texture coordinates in `[0, 1]^2`; `u` runs along image
/// columns, `v` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct UvMapping {
    pub coords: Vec<[f64; 2]>,
}

impl UvMapping {
    /// The same coordinates in the sampler's `[-1, 1]` convention.
    pub fn normalized(&self) -> Vec<[f64; 2]> {
        self.coords.iter().map(|t| [2.0 * t[0] - 1.0, 2.0 * t[1] - 1.0]).collect()
    }
}

pub fn to_vec3s(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn flatten3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|x| x.iter().copied()).collect()
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Unit icosphere: an icosahedron refined `level` times by 4-way
/// subdivision, with new vertices pushed back onto the sphere.
pub fn icosphere(level: u32) -> Result<Mesh> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(Error::Capacity(format!(
            "icosphere level {level} exceeds {MAX_ICOSPHERE_LEVEL}"
        )));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(normalize(scale(add(verts[a], verts[b]), 0.5)));
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(vertices, faces)
}

/// Spherical UV: `u = (atan2(z, x) + pi) / 2pi`, `v = (asin(y) + pi/2) / pi`.
///
/// Vertices are projected onto the unit sphere first. The seam sits on the
/// negative x half-plane; vertices exactly on it get `u = 0`.
pub fn sphere_uv(mesh: &Mesh) -> Result<UvMapping> {
    use std::f64::consts::PI;
    let mut coords = Vec::with_capacity(mesh.vertices.len());
    for (i, &v) in mesh.vertices.iter().enumerate() {
        let n = norm(v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Geometry(format!("vertex {i} has zero length")));
        }
        let [x, y, z] = scale(v, 1.0 / n);
        let mut u = (z.atan2(x) + PI) / (2.0 * PI);
        if u >= 1.0 {
            u = 0.0;
        }
        let v = (y.clamp(-1.0, 1.0).asin() + PI / 2.0) / PI;
        coords.push([u, v]);
    }
    Ok(UvMapping { coords })
}

pub fn apply_deform(template: &Mesh, d: &Deformation) -> Result<Mesh> {
    ensure_same("deformation size", d.offsets.len(), template.vertices.len())?;
    let vertices = template
        .vertices
        .iter()
        .zip(&d.offsets)
        .map(|(&v, &o)| add(v, o))
        .collect();
    Ok(Mesh {
        vertices,
        ..template.clone()
    })
}

/// Mean squared offset norm and its gradient `2 * offsets / N`.
pub fn deform_loss(d: &Deformation) -> (f64, Vec<Vec3>) {
    let n = d.offsets.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / n as f64;
    let loss = d.offsets.iter().map(|&o| dot(o, o)).sum::<f64>() * inv;
    let grad = d.offsets.iter().map(|&o| scale(o, 2.0 * inv)).collect();
    (loss, grad)
}

/// `mean_p |v_p - mean(N(p))|^2` with its gradient.
pub fn laplacian_loss(mesh: &Mesh) -> Result<(f64, Vec<Vec3>)> {
    let nbrs = mesh.neighbors();
    let n = mesh.vertices.len();
    if let Some(p) = nbrs.iter().position(|nb| nb.is_empty()) {
        return Err(Error::Geometry(format!("vertex {p} has no neighbours")));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let deltas: Vec<Vec3> = nbrs
        .iter()
        .enumerate()
        .map(|(p, nb)| {
            // mean of differences keeps coincident neighbourhoods exactly zero
            let mut acc = [0.0; 3];
            for &q in nb {
                acc = add(acc, sub(mesh.vertices[p], mesh.vertices[q]));
            }
            scale(acc, 1.0 / nb.len() as f64)
        })
        .collect();
    let inv = 1.0 / n as f64;
    let loss = deltas.iter().map(|&d| dot(d, d)).sum::<f64>() * inv;

    let mut grad = vec![[0.0; 3]; n];
    for (p, nb) in nbrs.iter().enumerate() {
        let g = scale(deltas[p], 2.0 * inv);
        grad[p] = add(grad[p], g);
        let share = scale(g, -1.0 / nb.len() as f64);
        for &q in nb {
            grad[q] = add(grad[q], share);
        }
    }
    Ok((loss, grad))
}

struct FaceNormal {
    unit: Vec3,
    len: f64,
    e1: Vec3,
    e2: Vec3,
}

fn face_normal(mesh: &Mesh, fi: usize) -> Result<FaceNormal> {
    let [a, b, c] = mesh.faces[fi];
    let e1 = sub(mesh.vertices[b], mesh.vertices[a]);
    let e2 = sub(mesh.vertices[c], mesh.vertices[a]);
    let cr = cross(e1, e2);
    let len = norm(cr);
    if !(len > 1e-300) {
        return Err(Error::Geometry(format!("face {fi} has zero area")));
    }
    Ok(FaceNormal {
        unit: scale(cr, 1.0 / len),
        len,
        e1,
        e2,
    })
}

/// Pushes a gradient on the unit normal of face `fi` back onto its vertices.
fn backprop_normal(mesh: &Mesh, fi: usize, n: &FaceNormal, g_unit: Vec3, grad: &mut [Vec3]) {
    // d(c/|c|) = (I - n n^T) dc / |c|
    let along = dot(n.unit, g_unit);
    let g_cross = scale(sub(g_unit, scale(n.unit, along)), 1.0 / n.len);
    // c = e1 x e2
    let g_e1 = cross(n.e2, g_cross);
    let g_e2 = cross(g_cross, n.e1);
    let [a, b, c] = mesh.faces[fi];
    grad[b] = add(grad[b], g_e1);
    grad[c] = add(grad[c], g_e2);
    grad[a] = sub(grad[a], add(g_e1, g_e2));
}

/// Mean over interior edges of `|cos(nu) + 1|` with `cos(nu) = -n1 . n2`,
/// zero when the two faces are coplanar.
pub fn flatness_loss(mesh: &Mesh) -> Result<(f64, Vec<Vec3>)> {
    let normals = (0..mesh.faces.len())
        .map(|fi| face_normal(mesh, fi))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = mesh
        .edge_faces()
        .into_values()
        .filter(|fs| fs.len() == 2)
        .map(|fs| (fs[0], fs[1]))
        .collect();
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for &(f1, f2) in &pairs {
        let (n1, n2) = (&normals[f1], &normals[f2]);
        let term = 1.0 - dot(n1.unit, n2.unit);
        loss += term.abs();
        let s = if term >= 0.0 { inv } else { -inv };
        backprop_normal(mesh, f1, n1, scale(n2.unit, -s), &mut grad);
        backprop_normal(mesh, f2, n2, scale(n1.unit, -s), &mut grad);
    }
    Ok((loss * inv, grad))
}

/// Per-vertex colors (`N x C`) bilinearly sampled from a UV image.
pub fn texture_from_uv(uv_image: &Image, mapping: &UvMapping) -> Result<Vec<f64>> {
    sample_coords(uv_image, &mapping.normalized(), None, ModulationMode::Baseline)
}

/// Gradient of `sum(upstream * texture_from_uv(..))` w.r.t. the UV image.
pub fn texture_from_uv_backward(uv_image: &Image, mapping: &UvMapping, upstream: &[f64]) -> Result<Image> {
    Ok(sample_coords_backward(uv_image, &mapping.normalized(), upstream, None, ModulationMode::Baseline)?.d_image)
}

/// Octant id `(x >= 0) + 2 (y >= 0) + 4 (z >= 0)` per vertex; a synthetic
/// stand-in for learned part segmentation.
pub fn octant_labels(mesh: &Mesh) -> Vec<usize> {
    mesh.vertices
        .iter()
        .map(|v| usize::from(v[0] >= 0.0) + 2 * usize::from(v[1] >= 0.0) + 4 * usize::from(v[2] >= 0.0))
        .collect()
}
