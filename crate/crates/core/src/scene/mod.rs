//! Scene primitives: triangle meshes, the virtual light stage, rigid pose and
//! the pinhole camera.

mod obj;

pub use obj::{read_obj, write_obj};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{rotation_log, rotation_matrix, Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Vec3>,
    /// Linear RGB in [0, 1].
    pub vertex_albedo: Vec<Vec3>,
    /// Specular-map coordinates in [0, 1]².
    pub vertex_uv: Vec<[f64; 2]>,
}

impl TriangleMesh {
    /// Mesh with computed normals, gray albedo and zero uv.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mesh = TriangleMesh {
            vertex_normals: vec![Vec3::z(); n],
            vertex_albedo: vec![Vec3::repeat(0.5); n],
            vertex_uv: vec![[0.0, 0.0]; n],
            vertices,
            faces,
        };
        mesh.check_topology()?;
        Ok(compute_vertex_normals(&mesh))
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            vertex_normals: Vec::new(),
            vertex_albedo: Vec::new(),
            vertex_uv: Vec::new(),
        }
    }

    fn check_topology(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::invalid(format!("face {f:?} references a vertex >= {n}")));
        }
        Ok(())
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        self.check_topology()?;
        let n = self.vertices.len();
        if self.vertex_normals.len() != n || self.vertex_albedo.len() != n || self.vertex_uv.len() != n {
            return Err(Error::invalid("per-vertex attribute count differs from vertex count"));
        }
        if let Some(v) = self.vertex_normals.iter().position(|nrm| (nrm.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::invalid(format!("vertex normal {v} is not unit length")));
        }
        if let Some(v) = self
            .vertex_albedo
            .iter()
            .position(|a| a.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::invalid(format!("vertex albedo {v} outside [0,1]")));
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Area-weighted vertex normals of `mesh`; other attributes are copied.
///
/// A vertex whose accumulated normal vanishes gets `+z` and a warning.
pub fn compute_vertex_normals(mesh: &TriangleMesh) -> TriangleMesh {
    let accum = accumulate_face_normals(&mesh.vertices, &mesh.faces);
    let mut degenerate = 0usize;
    let normals = accum
        .iter()
        .map(|u| {
            let len = u.norm();
            if len > 0.0 && len.is_finite() {
                u / len
            } else {
                degenerate += 1;
                Vec3::z()
            }
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} vertices with degenerate normal umbrella, using +z");
    }
    TriangleMesh {
        vertex_normals: normals,
        ..mesh.clone()
    }
}

/// Un-normalized sum of face cross products around each vertex.
pub(crate) fn accumulate_face_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut accum = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| i as usize);
        let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        accum[a] += cross;
        accum[b] += cross;
        accum[c] += cross;
    }
    accum
}

/// Reverse pass of [`compute_vertex_normals`]: maps adjoints of the unit
/// vertex normals onto adjoints of the vertex positions (added to `pos_adj`).
pub(crate) fn vertex_normals_backward(
    vertices: &[Vec3],
    faces: &[[u32; 3]],
    normal_adj: &[Vec3],
    pos_adj: &mut [Vec3],
) {
    let accum = accumulate_face_normals(vertices, faces);
    let accum_adj: Vec<Vec3> = accum
        .iter()
        .zip(normal_adj)
        .map(|(u, g)| {
            let len = u.norm();
            if len > 0.0 && len.is_finite() {
                let n = u / len;
                (g - n * n.dot(g)) / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    for f in faces {
        let [a, b, c] = f.map(|i| i as usize);
        let cross_adj = accum_adj[a] + accum_adj[b] + accum_adj[c];
        if cross_adj == Vec3::zeros() {
            continue;
        }
        let e1 = vertices[b] - vertices[a];
        let e2 = vertices[c] - vertices[a];
        // cross = e1 × e2
        let e1_adj = e2.cross(&cross_adj);
        let e2_adj = cross_adj.cross(&e1);
        pos_adj[b] += e1_adj;
        pos_adj[c] += e2_adj;
        pos_adj[a] -= e1_adj + e2_adj;
    }
}

/// Rigid transform `v ↦ R(rotation)·v + translation`, rotation as axis-angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTransform {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Default for PoseTransform {
    fn default() -> Self {
        PoseTransform::identity()
    }
}

impl PoseTransform {
    pub fn identity() -> Self {
        PoseTransform {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        PoseTransform {
            rotation: rotation.into(),
            translation: translation.into(),
        }
    }

    pub fn rotation_vector(&self) -> Vec3 {
        Vec3::from(self.rotation)
    }

    pub fn translation_vector(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn matrix(&self) -> Mat3 {
        rotation_matrix(&self.rotation_vector())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.matrix() * p + self.translation_vector()
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &PoseTransform) -> PoseTransform {
        let r2 = self.matrix();
        let r = r2 * first.matrix();
        let t = r2 * first.translation_vector() + self.translation_vector();
        PoseTransform::new(rotation_log(&r), t)
    }

    /// Parameter vector `[rx, ry, rz, tx, ty, tz]`.
    pub fn to_array(&self) -> [f64; 6] {
        let [a, b, c] = self.rotation;
        let [d, e, f] = self.translation;
        [a, b, c, d, e, f]
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        PoseTransform {
            rotation: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
        }
    }
}

/// Rigidly transforms vertices and normals; topology, albedo and uv are kept.
pub fn apply_pose(mesh: &TriangleMesh, pose: &PoseTransform) -> TriangleMesh {
    let r = pose.matrix();
    let t = pose.translation_vector();
    TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| r * v + t).collect(),
        vertex_normals: mesh
            .vertex_normals
            .iter()
            .map(|n| if r == Mat3::identity() { *n } else { (r * n).normalize() })
            .collect(),
        ..mesh.clone()
    }
}

/// Square emitter facing the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AreaLight {
    pub center: Vec3,
    pub normal: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
    pub half_extent: f64,
    /// Linear RGB radiance, componentwise ≥ 0.
    pub intensity: Vec3,
}

impl AreaLight {
    pub fn oriented_at_origin(center: Vec3, half_extent: f64, intensity: Vec3) -> Self {
        let normal = (-center).normalize();
        let hint = if normal.y.abs() > 0.99 { Vec3::x() } else { Vec3::y() };
        let tangent = hint.cross(&normal).normalize();
        let bitangent = normal.cross(&tangent);
        AreaLight {
            center,
            normal,
            tangent,
            bitangent,
            half_extent,
            intensity,
        }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_extent * self.half_extent
    }

    pub fn is_off(&self) -> bool {
        self.intensity == Vec3::zeros()
    }
}

/// Which world axis the light-stage dome is centered on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOrientation {
    /// Dome pole on +z, the camera side.
    #[default]
    Front,
    /// Dome pole on +y, above the face.
    Overhead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightStage {
    pub lights: Vec<AreaLight>,
    pub radius: f64,
    pub orientation: StageOrientation,
}

pub const DEFAULT_LIGHT_COUNT: usize = 20;
pub const DEFAULT_LIGHT_INTENSITY: f64 = 0.5;

impl LightStage {
    pub fn len(&self) -> usize {
        self.lights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lights.is_empty()
    }

    pub fn intensities(&self) -> Vec<[f64; 3]> {
        self.lights.iter().map(|l| l.intensity.into()).collect()
    }

    pub fn with_intensities(&self, intensities: &[[f64; 3]]) -> Result<LightStage> {
        if intensities.len() != self.lights.len() {
            return Err(Error::invalid(format!(
                "{} light intensities for a stage of {} lights",
                intensities.len(),
                self.lights.len()
            )));
        }
        let mut out = self.clone();
        for (light, l) in out.lights.iter_mut().zip(intensities) {
            light.intensity = Vec3::from(*l);
        }
        Ok(out)
    }

    /// Light center expressed in the stage frame (pole on +z).
    pub fn stage_frame_point(&self, p: &Vec3) -> Vec3 {
        match self.orientation {
            StageOrientation::Front => *p,
            StageOrientation::Overhead => Vec3::new(p.x, -p.z, p.y),
        }
    }

    /// Inverse of [`LightStage::stage_frame_point`].
    pub fn world_point(&self, p: &Vec3) -> Vec3 {
        match self.orientation {
            StageOrientation::Front => *p,
            StageOrientation::Overhead => Vec3::new(p.x, p.z, -p.y),
        }
    }
}

/// Fibonacci-spiral hemisphere direction `i` of `n`, pole on +z.
pub fn fibonacci_hemisphere(i: usize, n: usize) -> Vec3 {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let z = 1.0 - i as f64 / n as f64;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = i as f64 * golden;
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// `n` lights on a hemisphere of `radius`, all pointing at the origin.
pub fn build_light_stage(n: usize, radius: f64, half_extent: f64) -> Result<LightStage> {
    build_light_stage_with(n, radius, half_extent, DEFAULT_LIGHT_INTENSITY, StageOrientation::Front)
}

pub fn build_light_stage_with(
    n: usize,
    radius: f64,
    half_extent: f64,
    intensity: f64,
    orientation: StageOrientation,
) -> Result<LightStage> {
    if n == 0 {
        return Err(Error::invalid("light stage needs at least one light"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("light stage radius must be positive, got {radius}")));
    }
    if !(half_extent > 0.0 && half_extent.is_finite()) {
        return Err(Error::invalid(format!("light half extent must be positive, got {half_extent}")));
    }
    if !(intensity >= 0.0) {
        return Err(Error::invalid(format!("light intensity must be non-negative, got {intensity}")));
    }
    let lights = (0..n)
        .map(|i| {
            let d = fibonacci_hemisphere(i, n);
            let d = match orientation {
                StageOrientation::Front => d,
                StageOrientation::Overhead => Vec3::new(d.x, d.z, -d.y),
            };
            AreaLight::oriented_at_origin(d * radius, half_extent, Vec3::repeat(intensity))
        })
        .collect();
    Ok(LightStage {
        lights,
        radius,
        orientation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Radians.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
}

pub const DEFAULT_FOV_DEGREES: f64 = 45.0;

impl Camera {
    pub fn new(position: Vec3, look_at: Vec3, up: Vec3, vertical_fov: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Camera {
            position,
            look_at,
            up,
            vertical_fov,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on +z at three bounding radii, looking at the origin.
    pub fn facing(bounding_radius: f64, width: u32, height: u32) -> Result<Self> {
        Camera::new(
            Vec3::new(0.0, 0.0, 3.0 * bounding_radius),
            Vec3::zeros(),
            Vec3::y(),
            DEFAULT_FOV_DEGREES.to_radians(),
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::invalid(format!("field of view {} outside (0, pi)", self.vertical_fov)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "camera resolution {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        let fwd = self.look_at - self.position;
        if fwd.norm() == 0.0 || fwd.normalize().cross(&self.up.normalize()).norm() < 1e-9 {
            return Err(Error::invalid("camera look direction is parallel to up (or degenerate)"));
        }
        Ok(())
    }

    pub fn with_resolution(&self, width: u32, height: u32) -> Camera {
        Camera { width, height, ..*self }
    }

    /// Orthonormal (right, up, forward) frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let fwd = (self.look_at - self.position).normalize();
        let right = fwd.cross(&self.up).normalize();
        let up = right.cross(&fwd);
        (right, up, fwd)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.vertical_fov).tan()
    }

    /// Ray through continuous pixel coordinates (origin top-left, +y down).
    pub fn generate_primary_ray(&self, px: f64, py: f64) -> Ray {
        let (right, up, fwd) = self.basis();
        let f = self.focal();
        let dx = (px - 0.5 * self.width as f64) / f;
        let dy = (py - 0.5 * self.height as f64) / f;
        Ray {
            origin: self.position,
            dir: (fwd + right * dx - up * dy).normalize(),
        }
    }

    /// Ray through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> Ray {
        self.generate_primary_ray(x as f64 + 0.5, y as f64 + 0.5)
    }

    pub fn project_point(&self, p: &Vec3) -> Result<[f64; 2]> {
        let (right, up, fwd) = self.basis();
        let rel = p - self.position;
        let depth = rel.dot(&fwd);
        if !(depth > 0.0) {
            return Err(Error::BehindCamera { depth });
        }
        let f = self.focal();
        Ok([
            0.5 * self.width as f64 + f * rel.dot(&right) / depth,
            0.5 * self.height as f64 - f * rel.dot(&up) / depth,
        ])
    }

    /// Projection together with its 2×3 Jacobian with respect to `p`.
    pub(crate) fn project_with_jacobian(&self, p: &Vec3) -> Result<([f64; 2], [Vec3; 2])> {
        let (right, up, fwd) = self.basis();
        let rel = p - self.position;
        let depth = rel.dot(&fwd);
        if !(depth > 0.0) {
            return Err(Error::BehindCamera { depth });
        }
        let f = self.focal();
        let (xr, yu) = (rel.dot(&right), rel.dot(&up));
        let px = [0.5 * self.width as f64 + f * xr / depth, 0.5 * self.height as f64 - f * yu / depth];
        let jx = (right * depth - fwd * xr) * (f / (depth * depth));
        let jy = -(up * depth - fwd * yu) * (f / (depth * depth));
        Ok((px, [jx, jy]))
    }
}
