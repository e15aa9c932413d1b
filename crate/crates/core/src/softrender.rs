//! Weak-perspective camera and a minimal soft rasterizer.
//!
//! Image plane coordinates are normalized to `[-1, 1]` with the same pixel
//! centre convention as the sampler: pixel `(row i, col j)` sits at
//! `(2j/(W-1) - 1, 2i/(H-1) - 1)`. After rotation the camera looks down the
//! negative z axis, so a larger rotated z is nearer to the viewer.
//!
//! Silhouettes are soft: each face contributes
//! `D = logistic(sign * d^2 / sigma)` where `d` is the distance from the pixel
//! to the projected triangle boundary and `sign` is positive inside, and the
//! faces are combined as `1 - prod(1 - D)`. Textures use hard visibility
//! (nearest face by mean depth) and are linear in the vertex colors.

use rand::Rng;

use crate::error::{ensure_same, Error, Result};
use crate::meshkit::{Mesh, Vec3};
use crate::tensorgrid::{normalized_center, Image};

pub type Quat = [f64; 4];

/// Faces whose logistic argument falls below `-CULL_LOGIT` are skipped; their
/// coverage is below double precision resolution next to 1.
const CULL_LOGIT: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub scale: f64,
    pub translation: [f64; 2],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Quat,
}

impl Default for Camera {
    fn default() -> Self {
        Self::identity()
    }
}

impl Camera {
    pub fn new(scale: f64, translation: [f64; 2], rotation: Quat) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Input(format!("camera scale must be positive, got {scale}")));
        }
        let n = quat_norm(rotation);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("camera quaternion norm {n} is not 1")));
        }
        Ok(Self {
            scale,
            translation,
            rotation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: [0.0, 0.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Orbit camera: rotate the object by `azimuth` about y, then by
    /// `elevation` about x.
    pub fn orbit(azimuth: f64, elevation: f64, scale: f64) -> Self {
        let q = quat_mul(axis_angle([1.0, 0.0, 0.0], elevation), axis_angle([0.0, 1.0, 0.0], azimuth));
        Self {
            scale,
            translation: [0.0, 0.0],
            rotation: q,
        }
    }

    /// Raw parameter vector `[s, tx, ty, qw, qx, qy, qz]`.
    pub fn params(&self) -> [f64; 7] {
        let [w, x, y, z] = self.rotation;
        [self.scale, self.translation[0], self.translation[1], w, x, y, z]
    }

    /// Inverse of [`Camera::params`]; the quaternion is normalized here, which
    /// is part of the differentiated map in [`project_backward_params`].
    pub fn from_params(p: &[f64; 7]) -> Result<Self> {
        let q = [p[3], p[4], p[5], p[6]];
        let n = quat_norm(q);
        if !(n > 0.0) {
            return Err(Error::Input("zero quaternion".into()));
        }
        Self::new(p[0], [p[1], p[2]], q.map(|c| c / n))
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        quat_to_matrix(self.rotation)
    }
}

pub fn quat_norm(q: Quat) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn axis_angle(axis: Vec3, angle: f64) -> Quat {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = (angle / 2.0).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

pub fn quat_to_matrix(q: Quat) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Derivatives of the first two rows of [`quat_to_matrix`] w.r.t. `w, x, y, z`.
fn quat_matrix_grads(q: Quat) -> [[[f64; 3]; 2]; 4] {
    let [w, x, y, z] = q;
    let t = 2.0;
    [
        [[0.0, -t * z, t * y], [t * z, 0.0, -t * x]],
        [[0.0, t * y, t * z], [t * y, -2.0 * t * x, -t * w]],
        [[-2.0 * t * y, t * x, t * w], [t * x, 0.0, t * z]],
        [[-2.0 * t * z, -t * w, t * x], [t * w, -2.0 * t * z, t * y]],
    ]
}

fn rotate(r: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// `p = scale * (R v).xy + translation`.
pub fn project(cam: &Camera, vertices: &[Vec3]) -> Vec<[f64; 2]> {
    project_with_depth(cam, vertices).0
}

/// Projection plus the rotated z of every vertex (larger is nearer).
pub fn project_with_depth(cam: &Camera, vertices: &[Vec3]) -> (Vec<[f64; 2]>, Vec<f64>) {
    let r = cam.rotation_matrix();
    let mut pts = Vec::with_capacity(vertices.len());
    let mut depth = Vec::with_capacity(vertices.len());
    for &v in vertices {
        let rv = rotate(&r, v);
        pts.push([
            cam.scale * rv[0] + cam.translation[0],
            cam.scale * rv[1] + cam.translation[1],
        ]);
        depth.push(rv[2]);
    }
    (pts, depth)
}

/// Pulls 2D point gradients back to 3D vertex gradients.
pub fn project_backward_vertices(cam: &Camera, grad2d: &[[f64; 2]]) -> Vec<Vec3> {
    let r = cam.rotation_matrix();
    let s = cam.scale;
    grad2d
        .iter()
        .map(|g| {
            [
                s * (r[0][0] * g[0] + r[1][0] * g[1]),
                s * (r[0][1] * g[0] + r[1][1] * g[1]),
                s * (r[0][2] * g[0] + r[1][2] * g[1]),
            ]
        })
        .collect()
}

/// Pulls 2D point gradients back to the raw camera parameters
/// `[s, tx, ty, qw, qx, qy, qz]`, including the quaternion normalization.
pub fn project_backward_params(params: &[f64; 7], vertices: &[Vec3], grad2d: &[[f64; 2]]) -> Result<[f64; 7]> {
    ensure_same("gradient count", grad2d.len(), vertices.len())?;
    let cam = Camera::from_params(params)?;
    let q = cam.rotation;
    let raw_norm = quat_norm([params[3], params[4], params[5], params[6]]);
    let r = cam.rotation_matrix();
    let dr = quat_matrix_grads(q);

    let mut out = [0.0; 7];
    let mut g_unit = [0.0; 4];
    for (&v, g) in vertices.iter().zip(grad2d) {
        let rv = rotate(&r, v);
        out[0] += g[0] * rv[0] + g[1] * rv[1];
        out[1] += g[0];
        out[2] += g[1];
        for k in 0..4 {
            let row0 = dr[k][0][0] * v[0] + dr[k][0][1] * v[1] + dr[k][0][2] * v[2];
            let row1 = dr[k][1][0] * v[0] + dr[k][1][1] * v[1] + dr[k][1][2] * v[2];
            g_unit[k] += cam.scale * (g[0] * row0 + g[1] * row1);
        }
    }
    // d(q/|q|)/dq = (I - qhat qhat^T) / |q|
    let along: f64 = (0..4).map(|k| q[k] * g_unit[k]).sum();
    for k in 0..4 {
        out[3 + k] = (g_unit[k] - q[k] * along) / raw_norm;
    }
    Ok(out)
}

/// Camera with uniformly random azimuth and zero elevation.
pub fn random_view_camera(rng: &mut impl Rng, scale: f64) -> Camera {
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    Camera::orbit(azimuth, 0.0, scale)
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Squared distance from `p` to segment `ab` and the gradients of that
/// distance w.r.t. `a` and `b`.
fn segment_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, [f64; 2], [f64; 2]) {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let diff = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    let d2 = diff[0] * diff[0] + diff[1] * diff[1];
    // the closest point is stationary in t, so only its explicit dependence
    // on a and b contributes
    let ga = [-2.0 * diff[0] * (1.0 - t), -2.0 * diff[1] * (1.0 - t)];
    let gb = [-2.0 * diff[0] * t, -2.0 * diff[1] * t];
    (d2, ga, gb)
}

#[inline]
fn edge_fn(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Barycentric coordinates of `p`, or `None` for a degenerate triangle.
fn barycentric(tri: [[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = edge_fn(tri[0], tri[1], tri[2]);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    Some([
        edge_fn(tri[1], tri[2], p) / area,
        edge_fn(tri[2], tri[0], p) / area,
        edge_fn(tri[0], tri[1], p) / area,
    ])
}

fn inside(tri: [[f64; 2]; 3], p: [f64; 2]) -> bool {
    barycentric(tri, p).is_some_and(|b| b.iter().all(|&w| w >= 0.0))
}

/// Soft coverage of one face at one pixel.
struct Coverage {
    d: f64,
    /// dD / d(projected corner)
    grad: [[f64; 2]; 3],
}

fn face_coverage(tri: [[f64; 2]; 3], p: [f64; 2], sigma: f64) -> Coverage {
    let mut best = (f64::INFINITY, 0usize, [0.0; 2], [0.0; 2]);
    for k in 0..3 {
        let (d2, ga, gb) = segment_dist2(p, tri[k], tri[(k + 1) % 3]);
        if d2 < best.0 {
            best = (d2, k, ga, gb);
        }
    }
    let (d2, k, ga, gb) = best;
    let sign = if inside(tri, p) { 1.0 } else { -1.0 };
    let d = logistic(sign * d2 / sigma);
    let dd = d * (1.0 - d) * sign / sigma;
    let mut grad = [[0.0; 2]; 3];
    grad[k] = [dd * ga[0], dd * ga[1]];
    let k1 = (k + 1) % 3;
    grad[k1] = [dd * gb[0], dd * gb[1]];
    Coverage { d, grad }
}

/// Face order nearest first by mean rotated depth; stable on face index.
fn painter_order(mesh: &Mesh, depth: &[f64]) -> Vec<usize> {
    let mean: Vec<f64> = mesh
        .faces
        .iter()
        .map(|f| (depth[f[0]] + depth[f[1]] + depth[f[2]]) / 3.0)
        .collect();
    let mut order: Vec<usize> = (0..mesh.faces.len()).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
    order
}

/// Output resolution and blur of the soft rasterizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSettings {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
}

impl RasterSettings {
    pub fn new(height: usize, width: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
        }
        if height < 2 || width < 2 {
            return Err(Error::Shape(format!("render size {height}x{width} below 2x2")));
        }
        Ok(Self { height, width, sigma })
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [normalized_center(j, self.width), normalized_center(i, self.height)]
    }

    /// Candidate faces per pixel: every face whose blurred footprint can
    /// reach the pixel centre.
    fn buckets(&self, tris: &[[[f64; 2]; 3]], order: impl Iterator<Item = usize>) -> Vec<Vec<u32>> {
        let reach = (self.sigma * CULL_LOGIT).sqrt();
        let mut buckets = vec![Vec::new(); self.height * self.width];
        let to_col = |x: f64| (x + 1.0) / 2.0 * (self.width - 1) as f64;
        let to_row = |y: f64| (y + 1.0) / 2.0 * (self.height - 1) as f64;
        for f in order {
            let t = tris[f];
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in t {
                for a in 0..2 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            if !lo.iter().chain(hi.iter()).all(|v| v.is_finite()) {
                continue;
            }
            let c0 = to_col(lo[0] - reach).ceil().max(0.0);
            let c1 = to_col(hi[0] + reach).floor().min((self.width - 1) as f64);
            let r0 = to_row(lo[1] - reach).ceil().max(0.0);
            let r1 = to_row(hi[1] + reach).floor().min((self.height - 1) as f64);
            if c0 > c1 || r0 > r1 {
                continue;
            }
            for i in r0 as usize..=r1 as usize {
                for j in c0 as usize..=c1 as usize {
                    buckets[i * self.width + j].push(f as u32);
                }
            }
        }
        buckets
    }
}

fn projected_tris(mesh: &Mesh, pts: &[[f64; 2]]) -> Vec<[[f64; 2]; 3]> {
    mesh.faces.iter().map(|f| [pts[f[0]], pts[f[1]], pts[f[2]]]).collect()
}

/// A rendered soft silhouette with what its backward pass needs.
#[derive(Debug, Clone)]
pub struct SilhouetteRender {
    pub image: Image,
    pub settings: RasterSettings,
    camera: Camera,
    tris: Vec<[[f64; 2]; 3]>,
    faces: Vec<[usize; 3]>,
    vertex_count: usize,
    buckets: Vec<Vec<u32>>,
}

/// `silhouette(p) = 1 - prod_j (1 - D_j(p))`.
pub fn soft_silhouette(mesh: &Mesh, cam: &Camera, settings: RasterSettings) -> SilhouetteRender {
    let pts = project(cam, &mesh.vertices);
    let tris = projected_tris(mesh, &pts);
    let buckets = settings.buckets(&tris, 0..tris.len());
    let mut image = Image::zeros(settings.height, settings.width, 1);
    for i in 0..settings.height {
        for j in 0..settings.width {
            let p = settings.pixel_center(i, j);
            let mut keep = 1.0;
            for &f in &buckets[i * settings.width + j] {
                keep *= 1.0 - face_coverage(tris[f as usize], p, settings.sigma).d;
            }
            image.data[i * settings.width + j] = 1.0 - keep;
        }
    }
    SilhouetteRender {
        image,
        settings,
        camera: *cam,
        tris,
        faces: mesh.faces.clone(),
        vertex_count: mesh.vertices.len(),
        buckets,
    }
}

impl SilhouetteRender {
    /// Gradient w.r.t. the projected 2D vertices.
    pub fn backward_2d(&self, upstream: &Image) -> Result<Vec<[f64; 2]>> {
        self.image.ensure_same_shape(upstream, "silhouette upstream")?;
        let s = self.settings;
        let mut grad = vec![[0.0; 2]; self.vertex_count];
        let mut covs = Vec::new();
        let mut suffix = Vec::new();
        for i in 0..s.height {
            for j in 0..s.width {
                let idx = i * s.width + j;
                let up = upstream.data[idx];
                let bucket = &self.buckets[idx];
                if up == 0.0 || bucket.is_empty() {
                    continue;
                }
                let p = s.pixel_center(i, j);
                covs.clear();
                covs.extend(bucket.iter().map(|&f| face_coverage(self.tris[f as usize], p, s.sigma)));
                // dS/dD_k = prod_{m != k} (1 - D_m)
                suffix.clear();
                suffix.resize(covs.len() + 1, 1.0);
                for k in (0..covs.len()).rev() {
                    suffix[k] = suffix[k + 1] * (1.0 - covs[k].d);
                }
                let mut prefix = 1.0;
                for (k, cov) in covs.iter().enumerate() {
                    let ds = up * prefix * suffix[k + 1];
                    prefix *= 1.0 - cov.d;
                    if ds == 0.0 {
                        continue;
                    }
                    let face = self.faces[bucket[k] as usize];
                    for c in 0..3 {
                        let v = face[c];
                        grad[v][0] += ds * cov.grad[c][0];
                        grad[v][1] += ds * cov.grad[c][1];
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Gradient w.r.t. the 3D mesh vertices.
    pub fn backward(&self, upstream: &Image) -> Result<Vec<Vec3>> {
        Ok(project_backward_vertices(&self.camera, &self.backward_2d(upstream)?))
    }
}

/// Per-face soft coverage with front-to-back occlusion, plus the normalized
/// pixel centres.
#[derive(Debug, Clone)]
pub struct RasterWeights {
    pub height: usize,
    pub width: usize,
    pub face_count: usize,
    /// `face_count x height x width`
    pub weights: Vec<f64>,
}

impl RasterWeights {
    #[inline]
    pub fn weight(&self, face: usize, i: usize, j: usize) -> f64 {
        self.weights[(face * self.height + i) * self.width + j]
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [normalized_center(j, self.width), normalized_center(i, self.height)]
    }

    pub fn face_mass(&self, face: usize) -> f64 {
        let n = self.height * self.width;
        self.weights[face * n..(face + 1) * n].iter().sum()
    }

    /// `sum w c / sum w` for one face, `None` when it has no weight.
    pub fn weighted_center(&self, face: usize) -> Option<[f64; 2]> {
        let mut acc = [0.0; 2];
        let mut mass = 0.0;
        for i in 0..self.height {
            for j in 0..self.width {
                let w = self.weight(face, i, j);
                if w > 0.0 {
                    let c = self.pixel_center(i, j);
                    acc[0] += w * c[0];
                    acc[1] += w * c[1];
                    mass += w;
                }
            }
        }
        (mass > 0.0).then(|| [acc[0] / mass, acc[1] / mass])
    }
}

/// `w_f(p) = D_f(p) * prod_{g nearer than f} (1 - D_g(p))`; forward only.
pub fn raster_weights(mesh: &Mesh, cam: &Camera, settings: RasterSettings) -> RasterWeights {
    let (pts, depth) = project_with_depth(cam, &mesh.vertices);
    let tris = projected_tris(mesh, &pts);
    let order = painter_order(mesh, &depth);
    let buckets = settings.buckets(&tris, order.into_iter());
    let (h, w) = (settings.height, settings.width);
    let mut weights = vec![0.0; mesh.faces.len() * h * w];
    for i in 0..h {
        for j in 0..w {
            let p = settings.pixel_center(i, j);
            let mut transmit = 1.0;
            for &f in &buckets[i * w + j] {
                let d = face_coverage(tris[f as usize], p, settings.sigma).d;
                weights[(f as usize * h + i) * w + j] = d * transmit;
                transmit *= 1.0 - d;
            }
        }
    }
    RasterWeights {
        height: h,
        width: w,
        face_count: mesh.faces.len(),
        weights,
    }
}

/// Hard-visibility texture render, linear in the vertex colors.
#[derive(Debug, Clone)]
pub struct TextureRender {
    pub image: Image,
    /// Per pixel: the visible face's vertex indices and barycentric weights.
    pub fragments: Vec<Option<([usize; 3], [f64; 3])>>,
    pub vertex_count: usize,
}

pub fn render_texture(
    mesh: &Mesh,
    vertex_colors: &[f64],
    channels: usize,
    cam: &Camera,
    height: usize,
    width: usize,
) -> Result<TextureRender> {
    if channels == 0 {
        return Err(Error::Shape("zero color channels".into()));
    }
    ensure_same("vertex color count", vertex_colors.len(), mesh.vertices.len() * channels)?;
    let (pts, depth) = project_with_depth(cam, &mesh.vertices);
    let order = painter_order(mesh, &depth);
    let mut fragments = vec![None; height * width];
    let to_col = |x: f64| (x + 1.0) / 2.0 * (width.max(2) - 1) as f64;
    let to_row = |y: f64| (y + 1.0) / 2.0 * (height.max(2) - 1) as f64;
    for &f in &order {
        let face = mesh.faces[f];
        let tri = [pts[face[0]], pts[face[1]], pts[face[2]]];
        let xs = tri.map(|p| to_col(p[0]));
        let ys = tri.map(|p| to_row(p[1]));
        let c0 = xs.iter().cloned().fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let c1 = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor().min(width as f64 - 1.0);
        let r0 = ys.iter().cloned().fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let r1 = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor().min(height as f64 - 1.0);
        if !(c0 <= c1 && r0 <= r1) {
            continue;
        }
        for i in r0 as usize..=r1 as usize {
            for j in c0 as usize..=c1 as usize {
                let slot = &mut fragments[i * width + j];
                if slot.is_some() {
                    continue;
                }
                let p = [normalized_center(j, width), normalized_center(i, height)];
                if let Some(b) = barycentric(tri, p) {
                    if b.iter().all(|&w| w >= 0.0) {
                        *slot = Some((face, b));
                    }
                }
            }
        }
    }
    let mut image = Image::zeros(height, width, channels);
    for (px, frag) in fragments.iter().enumerate() {
        if let Some((face, b)) = frag {
            for c in 0..channels {
                image.data[px * channels + c] = (0..3).map(|k| b[k] * vertex_colors[face[k] * channels + c]).sum();
            }
        }
    }
    Ok(TextureRender {
        image,
        fragments,
        vertex_count: mesh.vertices.len(),
    })
}

impl TextureRender {
    /// Gradient w.r.t. the vertex colors (`N x C`).
    pub fn backward(&self, upstream: &Image) -> Result<Vec<f64>> {
        self.image.ensure_same_shape(upstream, "texture upstream")?;
        let ch = self.image.channels;
        let mut grad = vec![0.0; self.vertex_count * ch];
        for (px, frag) in self.fragments.iter().enumerate() {
            if let Some((face, b)) = frag {
                for c in 0..ch {
                    let up = upstream.data[px * ch + c];
                    for k in 0..3 {
                        grad[face[k] * ch + c] += up * b[k];
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big_triangle() -> Mesh {
        Mesh::new(
            vec![[-0.8, -0.8, 0.0], [0.8, -0.8, 0.0], [0.0, 0.8, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let v = [[1.0, 2.0, 3.0]];
        assert_eq!(project(&Camera::identity(), &v), vec![[1.0, 2.0]]);
        let cam = Camera::new(2.0, [0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(project(&cam, &v), vec![[2.0, 4.0]]);
        let cam = Camera::new(1.0, [0.5, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(project(&cam, &[[0.0; 3]]), vec![[0.5, 0.0]]);
    }

    #[test]
    fn camera_validation() {
        assert!(Camera::new(0.0, [0.0; 2], [1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Camera::new(1.0, [0.0; 2], [1.0, 1.0, 0.0, 0.0]).is_err());
        let c = Camera::from_params(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn orbit_quarter_turn_maps_x_to_minus_z() {
        let r = Camera::orbit(std::f64::consts::FRAC_PI_2, 0.0, 1.0).rotation_matrix();
        let v = rotate(&r, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn silhouette_saturates_inside_and_outside() {
        let s = RasterSettings::new(33, 33, 1e-4).unwrap();
        let r = soft_silhouette(&big_triangle(), &Camera::identity(), s);
        // centroid (0, -0.2667) is close to row 11 col 16
        assert!(r.image.get(11, 16, 0) >= 0.99);
        assert!(r.image.get(0, 0, 0) <= 0.01);
        assert!(r.image.get(32, 32, 0) <= 0.01);
    }

    #[test]
    fn raster_weights_single_and_stacked() {
        let s = RasterSettings::new(17, 17, 1e-4).unwrap();
        let w = raster_weights(&big_triangle(), &Camera::identity(), s);
        assert!(w.weight(0, 8, 8) > 0.999);
        assert!(w.weight(0, 0, 0) < 1e-6);

        let mut stacked = big_triangle();
        stacked.vertices.extend([[-0.8, -0.8, 1.0], [0.8, -0.8, 1.0], [0.0, 0.8, 1.0]]);
        stacked.faces.push([3, 4, 5]);
        let w = raster_weights(&stacked, &Camera::identity(), s);
        let p = s.pixel_center(8, 8);
        let tri = [[-0.8, -0.8], [0.8, -0.8], [0.0, 0.8]];
        let d = face_coverage(tri, p, s.sigma).d;
        assert_eq!(w.weight(1, 8, 8), d);
        assert_eq!(w.weight(0, 8, 8), d * (1.0 - d));
        assert!(w.weight(1, 8, 8) > 0.999 && w.weight(0, 8, 8) < 1e-3);
    }

    #[test]
    fn texture_constant_color_and_background() {
        let m = big_triangle();
        let colors = vec![0.2, 0.4, 0.6, 0.2, 0.4, 0.6, 0.2, 0.4, 0.6];
        let r = render_texture(&m, &colors, 3, &Camera::identity(), 9, 9).unwrap();
        let px = r.image.index(4, 4, 0);
        for c in 0..3 {
            assert!((r.image.data[px + c] - colors[c]).abs() < 1e-15);
        }
        assert_eq!(&r.image.data[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn texture_picks_nearest_face() {
        let mut m = big_triangle();
        m.vertices.extend([[-0.8, -0.8, 1.0], [0.8, -0.8, 1.0], [0.0, 0.8, 1.0]]);
        m.faces.push([3, 4, 5]);
        let colors = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let r = render_texture(&m, &colors, 1, &Camera::identity(), 9, 9).unwrap();
        assert!((r.image.get(4, 4, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_view_has_zero_elevation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let cam = random_view_camera(&mut rng, 1.0);
            let r = cam.rotation_matrix();
            // y axis is preserved by a pure azimuth rotation
            let y = rotate(&r, [0.0, 1.0, 0.0]);
            assert!((y[1] - 1.0).abs() < 1e-12);
        }
    }
}
