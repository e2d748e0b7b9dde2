//! Linear morphable face model and its procedurally generated stand-in data.
//!
//! Geometry is `mean + identity_basis·α + expression_basis·β`; albedo is the
//! smooth squashing of `mean_albedo + albedo_basis·δ`. All per-vertex vectors
//! are flattened as `[x0, y0, z0, x1, ...]` (or `[r0, g0, b0, ...]`).
//!
//! # Model file layout
//!
//! Little-endian throughout:
//!
//! ```text
//! b"LSMM"  u32 version  u32 V  u32 D_id  u32 D_exp  u32 D_alb  u32 F  u32 L
//! f64 mean_vertices[3V]
//! f64 identity_basis[3V * D_id]      (column-major)
//! f64 expression_basis[3V * D_exp]   (column-major)
//! f64 mean_albedo[3V]
//! f64 albedo_basis[3V * D_alb]       (column-major)
//! f64 identity_sigma[D_id]  f64 expression_sigma[D_exp]  f64 albedo_sigma[D_alb]
//! u32 faces[3F]
//! u32 landmark_indices[L]
//! ```

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::brdf::{SpecularMap, DEFAULT_SPEC_MAP_SIZE};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::{apply_pose, compute_vertex_normals, PoseTransform, TriangleMesh, DEFAULT_LIGHT_INTENSITY};

const MAGIC: &[u8; 4] = b"LSMM";
const VERSION: u32 = 1;

/// Coefficient counts `(D_id, D_exp, D_alb)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub identity: usize,
    pub expression: usize,
    pub albedo: usize,
}

impl ModelDims {
    /// Sizes of the statistical face model the method was designed around.
    pub const FULL: ModelDims = ModelDims {
        identity: 80,
        expression: 90,
        albedo: 80,
    };
    /// Reduced sizes used for desk-scale fitting.
    pub const DESK: ModelDims = ModelDims {
        identity: 16,
        expression: 12,
        albedo: 8,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphableModel {
    pub mean_vertices: DVector<f64>,
    pub identity_basis: DMatrix<f64>,
    pub expression_basis: DMatrix<f64>,
    pub mean_albedo: DVector<f64>,
    pub albedo_basis: DMatrix<f64>,
    pub identity_sigma: DVector<f64>,
    pub expression_sigma: DVector<f64>,
    pub albedo_sigma: DVector<f64>,
    pub topology: Vec<[u32; 3]>,
    pub landmark_indices: Vec<u32>,
}

/// Complete optimizable state of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParameters {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub pose: PoseTransform,
    pub spec_map: SpecularMap,
    pub light_intensities: Vec<[f64; 3]>,
}

impl FaceParameters {
    /// Zero coefficients, identity pose, constant specular map and uniform
    /// gray lights.
    pub fn neutral(model: &MorphableModel, n_lights: usize) -> Self {
        let dims = model.dims();
        FaceParameters {
            alpha: vec![0.0; dims.identity],
            beta: vec![0.0; dims.expression],
            delta: vec![0.0; dims.albedo],
            pose: PoseTransform::identity(),
            spec_map: SpecularMap::constant(DEFAULT_SPEC_MAP_SIZE, 0.5).expect("valid constant map"),
            light_intensities: vec![[DEFAULT_LIGHT_INTENSITY; 3]; n_lights],
        }
    }

    pub fn check_dims(&self, model: &MorphableModel, n_lights: usize) -> Result<()> {
        let dims = model.dims();
        for (name, got, want) in [
            ("alpha", self.alpha.len(), dims.identity),
            ("beta", self.beta.len(), dims.expression),
            ("delta", self.delta.len(), dims.albedo),
            ("light_intensities", self.light_intensities.len(), n_lights),
        ] {
            if got != want {
                return Err(Error::invalid(format!("{name} has {got} entries, expected {want}")));
            }
        }
        Ok(())
    }
}

/// Albedo squashing `1 / (1 + exp(-4 (x - 0.5)))`.
pub fn squash_albedo(x: f64) -> f64 {
    1.0 / (1.0 + (-4.0 * (x - 0.5)).exp())
}

fn squash_albedo_derivative(s: f64) -> f64 {
    4.0 * s * (1.0 - s)
}

impl MorphableModel {
    pub fn vertex_count(&self) -> usize {
        self.mean_vertices.len() / 3
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            identity: self.identity_basis.ncols(),
            expression: self.expression_basis.ncols(),
            albedo: self.albedo_basis.ncols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n3 = self.mean_vertices.len();
        if n3 % 3 != 0 || n3 == 0 {
            return Err(Error::invalid("mean vertex vector length must be a positive multiple of 3"));
        }
        for (name, rows) in [
            ("identity_basis", self.identity_basis.nrows()),
            ("expression_basis", self.expression_basis.nrows()),
            ("albedo_basis", self.albedo_basis.nrows()),
            ("mean_albedo", self.mean_albedo.len()),
        ] {
            if rows != n3 {
                return Err(Error::invalid(format!("{name} has {rows} rows, expected {n3}")));
            }
        }
        let dims = self.dims();
        for (name, sig, d) in [
            ("identity_sigma", &self.identity_sigma, dims.identity),
            ("expression_sigma", &self.expression_sigma, dims.expression),
            ("albedo_sigma", &self.albedo_sigma, dims.albedo),
        ] {
            if sig.len() != d {
                return Err(Error::invalid(format!("{name} has {} entries, expected {d}", sig.len())));
            }
            if sig.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::invalid(format!("{name} must be strictly positive")));
            }
        }
        let v = self.vertex_count();
        if self.topology.iter().flatten().any(|&i| i as usize >= v) {
            return Err(Error::invalid("topology references a missing vertex"));
        }
        if self.landmark_indices.iter().any(|&i| i as usize >= v) {
            return Err(Error::invalid("landmark index out of range"));
        }
        Ok(())
    }

    pub fn synthesize_geometry(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<Vec3>> {
        let dims = self.dims();
        if alpha.len() != dims.identity || beta.len() != dims.expression {
            return Err(Error::invalid(format!(
                "coefficient sizes ({}, {}) do not match model ({}, {})",
                alpha.len(),
                beta.len(),
                dims.identity,
                dims.expression
            )));
        }
        let mut flat = self.mean_vertices.clone();
        flat.gemv(1.0, &self.identity_basis, &DVector::from_column_slice(alpha), 1.0);
        flat.gemv(1.0, &self.expression_basis, &DVector::from_column_slice(beta), 1.0);
        Ok(unflatten(&flat))
    }

    pub fn synthesize_albedo(&self, delta: &[f64]) -> Result<Vec<Vec3>> {
        Ok(unflatten(&self.albedo_raw(delta)?.map(squash_albedo)))
    }

    fn albedo_raw(&self, delta: &[f64]) -> Result<DVector<f64>> {
        if delta.len() != self.albedo_basis.ncols() {
            return Err(Error::invalid(format!(
                "delta has {} entries, model expects {}",
                delta.len(),
                self.albedo_basis.ncols()
            )));
        }
        let mut raw = self.mean_albedo.clone();
        raw.gemv(1.0, &self.albedo_basis, &DVector::from_column_slice(delta), 1.0);
        Ok(raw)
    }

    /// Maps per-vertex albedo adjoints onto `δ`.
    pub(crate) fn albedo_backward(&self, delta: &[f64], albedo_adj: &[Vec3]) -> Result<Vec<f64>> {
        let raw = self.albedo_raw(delta)?;
        let raw_adj = DVector::from_iterator(
            raw.len(),
            raw.iter()
                .zip(albedo_adj.iter().flat_map(|a| a.iter().copied()))
                .map(|(r, g)| g * squash_albedo_derivative(squash_albedo(*r))),
        );
        Ok((self.albedo_basis.transpose() * raw_adj).as_slice().to_vec())
    }

    /// Maps unposed per-vertex adjoints onto `(α, β)`.
    pub(crate) fn geometry_backward(&self, vertex_adj: &[Vec3]) -> (Vec<f64>, Vec<f64>) {
        let flat = DVector::from_iterator(vertex_adj.len() * 3, vertex_adj.iter().flat_map(|a| a.iter().copied()));
        (
            (self.identity_basis.transpose() * &flat).as_slice().to_vec(),
            (self.expression_basis.transpose() * &flat).as_slice().to_vec(),
        )
    }

    /// Specular-map coordinates, from the direction of each mean vertex.
    pub fn vertex_uv(&self) -> Vec<[f64; 2]> {
        unflatten(&self.mean_vertices)
            .iter()
            .map(|p| {
                let d = p.normalize();
                [
                    0.5 + d.x.clamp(-1.0, 1.0).asin() / std::f64::consts::PI,
                    0.5 - d.y.clamp(-1.0, 1.0).asin() / std::f64::consts::PI,
                ]
            })
            .collect()
    }

    /// Unposed mesh with synthesized albedo and uv.
    pub fn face_mesh(&self, params: &FaceParameters) -> Result<TriangleMesh> {
        let vertices = self.synthesize_geometry(&params.alpha, &params.beta)?;
        let albedo = self.synthesize_albedo(&params.delta)?;
        let n = vertices.len();
        Ok(TriangleMesh {
            vertices,
            faces: self.topology.clone(),
            vertex_normals: vec![Vec3::z(); n],
            vertex_albedo: albedo,
            vertex_uv: self.vertex_uv(),
        })
    }

    /// Posed mesh; normals are computed from the posed vertices.
    pub fn posed_mesh(&self, params: &FaceParameters) -> Result<TriangleMesh> {
        let mesh = apply_pose(&self.face_mesh(params)?, &params.pose);
        Ok(compute_vertex_normals(&mesh))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dims = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.vertex_count() as u32,
            dims.identity as u32,
            dims.expression as u32,
            dims.albedo as u32,
            self.topology.len() as u32,
            self.landmark_indices.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for arr in [
            self.mean_vertices.as_slice(),
            self.identity_basis.as_slice(),
            self.expression_basis.as_slice(),
            self.mean_albedo.as_slice(),
            self.albedo_basis.as_slice(),
            self.identity_sigma.as_slice(),
            self.expression_sigma.as_slice(),
            self.albedo_sigma.as_slice(),
        ] {
            for x in arr {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for i in self.topology.iter().flatten().chain(&self.landmark_indices) {
            out.extend_from_slice(&i.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io("writing model", path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io("reading model", path, e))?;
        let mut rd = Reader { bytes: &bytes, pos: 0, path };
        if rd.take(4)? != MAGIC {
            return Err(Error::format(path, "not a morphable model file (bad magic)"));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported model version {version}")));
        }
        let v = rd.u32()? as usize;
        let (di, de, da) = (rd.u32()? as usize, rd.u32()? as usize, rd.u32()? as usize);
        let (nf, nl) = (rd.u32()? as usize, rd.u32()? as usize);
        let n3 = 3 * v;
        let model = MorphableModel {
            mean_vertices: DVector::from_vec(rd.f64s(n3)?),
            identity_basis: DMatrix::from_vec(n3, di, rd.f64s(n3 * di)?),
            expression_basis: DMatrix::from_vec(n3, de, rd.f64s(n3 * de)?),
            mean_albedo: DVector::from_vec(rd.f64s(n3)?),
            albedo_basis: DMatrix::from_vec(n3, da, rd.f64s(n3 * da)?),
            identity_sigma: DVector::from_vec(rd.f64s(di)?),
            expression_sigma: DVector::from_vec(rd.f64s(de)?),
            albedo_sigma: DVector::from_vec(rd.f64s(da)?),
            topology: rd.u32s(3 * nf)?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            landmark_indices: rd.u32s(nl)?,
        };
        if rd.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after model data"));
        }
        model.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated model file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        (0..n).map(|_| self.u32()).collect()
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub(crate) fn unflatten(v: &DVector<f64>) -> Vec<Vec3> {
    v.as_slice().chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Unit icosphere subdivided `level` times; faces wound counter-clockwise
/// seen from outside.
pub fn icosphere(level: u32) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
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
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
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
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Real spherical harmonics up to band `lmax` at unit direction `d`
/// (polar axis +z), ordered by band then order.
pub fn real_sh(lmax: usize, d: &Vec3) -> Vec<f64> {
    use std::f64::consts::PI;
    let x = d.z.clamp(-1.0, 1.0);
    let phi = d.y.atan2(d.x);
    let legendre = |l: usize, m: usize| -> f64 {
        let mut pmm = 1.0;
        if m > 0 {
            let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
            let mut fact = 1.0;
            for _ in 0..m {
                pmm *= -fact * somx2;
                fact += 2.0;
            }
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        for ll in m + 2..=l {
            let pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pmmp1
    };
    let factorial = |n: usize| -> f64 { (1..=n).map(|k| k as f64).product() };
    let mut out = Vec::with_capacity((lmax + 1) * (lmax + 1));
    for l in 0..=lmax {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
            let p = legendre(l, am);
            out.push(match m.signum() {
                0 => k * p,
                1 => 2f64.sqrt() * k * (am as f64 * phi).cos() * p,
                _ => 2f64.sqrt() * k * (am as f64 * phi).sin() * p,
            });
        }
    }
    out
}

const SH_BANDS: usize = 6;

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn bump(d: &Vec3, center: Vec3, amplitude: f64, width: f64) -> f64 {
    let c = center.normalize();
    amplitude * (-(d - c).norm_squared() / (2.0 * width * width)).exp()
}

/// Lower-front region of the face, where the expression basis acts.
pub fn jaw_mask(d: &Vec3) -> f64 {
    smoothstep((0.1 - d.y) / 0.3) * smoothstep((d.z + 0.1) / 0.4)
}

/// Orthonormal columns spanning smooth random per-vertex 3-vector fields.
fn smooth_random_basis(
    rng: &mut ChaCha8Rng,
    dirs: &[Vec3],
    sh: &[Vec<f64>],
    dim: usize,
    mask: impl Fn(&Vec3) -> f64,
    exclude: Option<&DMatrix<f64>>,
    what: &str,
) -> Result<DMatrix<f64>> {
    let n3 = dirs.len() * 3;
    if dim > n3 {
        return Err(Error::invalid(format!("{what} basis of {dim} columns exceeds 3V = {n3}")));
    }
    let n_sh = sh[0].len();
    let band_weight: Vec<f64> = (0..=SH_BANDS)
        .flat_map(|l| std::iter::repeat_n(1.0 / (1.0 + l as f64).powi(2), 2 * l + 1))
        .collect();
    let mut raw = DMatrix::<f64>::zeros(n3, dim);
    for col in 0..dim {
        let w: Vec<[f64; 3]> = (0..n_sh)
            .map(|k| {
                std::array::from_fn(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    g * band_weight[k]
                })
            })
            .collect();
        for (v, (d, y)) in dirs.iter().zip(sh).enumerate() {
            let m = mask(d);
            for c in 0..3 {
                let s: f64 = y.iter().zip(&w).map(|(yk, wk)| yk * wk[c]).sum();
                raw[(3 * v + c, col)] = m * s;
            }
        }
    }
    if let Some(q) = exclude {
        raw -= q * (q.transpose() * &raw);
    }
    let qr = raw.qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|x| x.abs() <= 1e-10 * scale) {
        return Err(Error::invalid(format!(
            "{what} basis is rank deficient at this mesh resolution; use a finer subdivision level"
        )));
    }
    Ok(qr.q())
}

const LANDMARK_CAP_POINTS: usize = 24;

/// Orthonormal basis of the infinitesimal similarity motions (three
/// translations, three rotations and a uniform scaling about the centroid)
/// of the face region of `shape`, as 3V-vectors that vanish elsewhere.
fn similarity_modes(shape: &[Vec3], face: &[bool]) -> DMatrix<f64> {
    let n = face.iter().filter(|f| **f).count() as f64;
    let c = shape.iter().zip(face).filter(|(_, f)| **f).map(|(p, _)| p).sum::<Vec3>() / n;
    let mut m = DMatrix::<f64>::zeros(3 * shape.len(), 7);
    for (v, p) in shape.iter().enumerate().filter(|(v, _)| face[*v]) {
        let q = p - c;
        for a in 0..3 {
            m[(3 * v + a, a)] = 1.0;
            let axis = Vec3::ith(a, 1.0);
            let d = axis.cross(&q);
            for k in 0..3 {
                m[(3 * v + k, 3 + a)] = d[k];
            }
            m[(3 * v + a, 6)] = q[a];
        }
    }
    m.qr().q()
}

/// Deterministic synthetic face model: an anisotropically scaled icosphere
/// with a nose and eye sockets, smooth random bases and named landmarks.
pub fn generate_synthetic_model(seed: u64, level: u32, dims: ModelDims) -> Result<MorphableModel> {
    if level < 1 {
        return Err(Error::invalid("subdivision level must be at least 1"));
    }
    if dims.identity == 0 || dims.expression == 0 || dims.albedo == 0 {
        return Err(Error::invalid("model dimensions must be at least 1"));
    }
    let (dirs, faces) = icosphere(level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let nose = Vec3::new(0.0, -0.1, 1.0);
    let eyes = [Vec3::new(0.35, 0.25, 0.9), Vec3::new(-0.35, 0.25, 0.9)];
    let mut shape: Vec<Vec3> = dirs
        .iter()
        .map(|d| {
            let r = 1.0 + bump(d, nose, 0.3, 0.2) + eyes.iter().map(|e| bump(d, *e, -0.1, 0.12)).sum::<f64>();
            let p = d * r;
            Vec3::new(p.x * 1.0, p.y * 1.3, p.z * 1.1)
        })
        .collect();
    let bound = shape.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let face: Vec<bool> = dirs.iter().map(|d| d.z > 0.0).collect();
    // The model origin sits at the centroid of the face region.
    let n_face = face.iter().filter(|f| **f).count() as f64;
    let center = shape.iter().zip(&face).filter(|(_, f)| **f).map(|(p, _)| p).sum::<Vec3>() / n_face;
    for p in &mut shape {
        *p = (*p - center) / bound;
    }

    let albedo: Vec<Vec3> = dirs
        .iter()
        .map(|d| {
            let skin = Vec3::new(0.78, 0.56, 0.45);
            let socket: f64 = eyes.iter().map(|e| bump(d, *e, 1.0, 0.1)).sum::<f64>().min(1.0);
            let lips = bump(d, Vec3::new(0.0, -0.45, 0.9), 1.0, 0.08);
            let c = skin * (1.0 - 0.35 * socket) + Vec3::new(0.08, -0.12, -0.08) * lips;
            c.map(|x| x.clamp(0.0, 1.0))
        })
        .collect();

    let sh: Vec<Vec<f64>> = dirs.iter().map(|d| real_sh(SH_BANDS, d)).collect();
    let similarity = similarity_modes(&shape, &face);
    let identity_basis = smooth_random_basis(&mut rng, &dirs, &sh, dims.identity, |_| 1.0, Some(&similarity), "identity")?;
    let expression_basis = smooth_random_basis(&mut rng, &dirs, &sh, dims.expression, jaw_mask, None, "expression")?;
    let albedo_basis = smooth_random_basis(&mut rng, &dirs, &sh, dims.albedo, |_| 1.0, None, "albedo")?;

    let landmark_dirs = [
        Vec3::new(0.0, -0.1, 1.0),
        Vec3::new(0.0, -0.75, 0.65),
        Vec3::new(0.55, 0.25, 0.8),
        Vec3::new(-0.55, 0.25, 0.8),
        Vec3::new(0.17, 0.25, 0.95),
        Vec3::new(-0.17, 0.25, 0.95),
        Vec3::new(0.3, -0.45, 0.85),
        Vec3::new(-0.3, -0.45, 0.85),
        Vec3::new(0.0, 0.6, 0.8),
        Vec3::new(0.6, -0.2, 0.78),
        Vec3::new(-0.6, -0.2, 0.78),
    ];
    // Contour and cheek points on a spiral over the frontal cap.
    let cap = (0..LANDMARK_CAP_POINTS).map(|i| {
        let z = 0.95 - 0.4 * (i as f64 + 0.5) / LANDMARK_CAP_POINTS as f64;
        let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let r = (1.0 - z * z).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    });
    let mut landmark_indices: Vec<u32> = Vec::new();
    for target in landmark_dirs.into_iter().chain(cap) {
        let t = target.normalize();
        let best = dirs
            .iter()
            .enumerate()
            .filter(|(i, _)| !landmark_indices.contains(&(*i as u32)))
            .max_by(|(ia, a), (ib, b)| a.dot(&t).total_cmp(&b.dot(&t)).then(ib.cmp(ia)))
            .map(|(i, _)| i as u32)
            .expect("icosphere has more vertices than landmarks");
        landmark_indices.push(best);
    }

    let flatten = |v: &[Vec3]| DVector::from_iterator(v.len() * 3, v.iter().flat_map(|p| p.iter().copied()));
    let model = MorphableModel {
        mean_vertices: flatten(&shape),
        identity_basis,
        expression_basis,
        mean_albedo: flatten(&albedo),
        albedo_basis,
        identity_sigma: DVector::repeat(dims.identity, 1.0),
        expression_sigma: DVector::repeat(dims.expression, 1.0),
        albedo_sigma: DVector::repeat(dims.albedo, 1.0),
        topology: faces,
        landmark_indices,
    };
    model.validate()?;
    Ok(model)
}
