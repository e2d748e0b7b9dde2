//! Gradients of the objective with respect to every parameter block, and a
//! finite-difference oracle to check them.
//!
//! The reverse pass replays each pixel with the same random stream as the
//! forward render. Per-sample shading is differentiated locally with
//! forward-mode jets in the shading point and interpolated normal; those
//! adjoints are then pulled back through the ray/triangle intersection, the
//! barycentric interpolation, the vertex normals, the pose and the linear
//! bases. Visibility and the identity of the hit triangle are held fixed.

use std::f64::consts::FRAC_1_PI;
use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf::SpecularMap;
use crate::energy::{
    e_data, e_light, e_light_gradient, e_prior, e_statistical, landmark_term, pixel_sq_err, total_objective,
    EnergyBreakdown, Objective,
};
use crate::error::{Error, Result};
use crate::imageio::ImageBuffer;
use crate::math::{rotation_jacobian, Jet, Vec3};
use crate::morphable::FaceParameters;
use crate::scene::{vertex_normals_backward, Ray, TriangleMesh};
use crate::tracer::{
    clamp_pixel, combine, draw_light_samples, intersect, light_transport, light_weight, pixel_rng, render_with_bvh,
    surface_point, tiles, Bvh, Hit, RenderConfig, RenderOutput, SceneRef,
};

/// Which parameter blocks are optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveSet {
    pub alpha: bool,
    pub beta: bool,
    pub delta: bool,
    pub pose: bool,
    pub spec_map: bool,
    pub lights: bool,
}

impl Default for ActiveSet {
    fn default() -> Self {
        ActiveSet::NONE
    }
}

impl ActiveSet {
    pub const NONE: ActiveSet = ActiveSet {
        alpha: false,
        beta: false,
        delta: false,
        pose: false,
        spec_map: false,
        lights: false,
    };
    pub const ALL: ActiveSet = ActiveSet {
        alpha: true,
        beta: true,
        delta: true,
        pose: true,
        spec_map: true,
        lights: true,
    };

    pub fn any(&self) -> bool {
        self.alpha || self.beta || self.delta || self.pose || self.spec_map || self.lights
    }

    /// True when the geometry (and therefore visibility) can change.
    pub fn moves_geometry(&self) -> bool {
        self.alpha || self.beta || self.pose
    }

    pub fn contains(&self, c: Coordinate) -> bool {
        match c {
            Coordinate::Alpha(_) => self.alpha,
            Coordinate::Beta(_) => self.beta,
            Coordinate::Delta(_) => self.delta,
            Coordinate::Pose(_) => self.pose,
            Coordinate::Spec(_) => self.spec_map,
            Coordinate::Light(..) => self.lights,
        }
    }
}

/// One scalar parameter. `Spec` indexes the unconstrained specular grid,
/// `Light(j, c)` channel `c` of light `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coordinate {
    Alpha(usize),
    Beta(usize),
    Delta(usize),
    Pose(usize),
    Spec(usize),
    Light(usize, usize),
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Alpha(i) => write!(f, "alpha[{i}]"),
            Coordinate::Beta(i) => write!(f, "beta[{i}]"),
            Coordinate::Delta(i) => write!(f, "delta[{i}]"),
            Coordinate::Pose(i) => write!(f, "pose[{i}]"),
            Coordinate::Spec(i) => write!(f, "spec[{i}]"),
            Coordinate::Light(j, c) => write!(f, "light[{j}][{}]", ["r", "g", "b"][*c]),
        }
    }
}

impl Coordinate {
    pub fn get(&self, p: &FaceParameters) -> f64 {
        match *self {
            Coordinate::Alpha(i) => p.alpha[i],
            Coordinate::Beta(i) => p.beta[i],
            Coordinate::Delta(i) => p.delta[i],
            Coordinate::Pose(i) => p.pose.to_array()[i],
            Coordinate::Spec(i) => p.spec_map.raw()[i],
            Coordinate::Light(j, c) => p.light_intensities[j][c],
        }
    }

    pub fn set(&self, p: &mut FaceParameters, v: f64) -> Result<()> {
        match *self {
            Coordinate::Alpha(i) => p.alpha[i] = v,
            Coordinate::Beta(i) => p.beta[i] = v,
            Coordinate::Delta(i) => p.delta[i] = v,
            Coordinate::Pose(i) => {
                let mut a = p.pose.to_array();
                a[i] = v;
                p.pose = crate::scene::PoseTransform::from_array(a);
            }
            Coordinate::Spec(i) => {
                let mut raw = p.spec_map.raw().to_vec();
                raw[i] = v;
                p.spec_map = SpecularMap::from_raw(p.spec_map.size(), raw)?;
            }
            Coordinate::Light(j, c) => p.light_intensities[j][c] = v,
        }
        Ok(())
    }
}

/// Gradient of the total objective, shaped like [`FaceParameters`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGradient {
    pub d_alpha: Vec<f64>,
    pub d_beta: Vec<f64>,
    pub d_delta: Vec<f64>,
    pub d_pose: [f64; 6],
    /// With respect to the unconstrained specular grid.
    pub d_spec_map: Vec<f64>,
    pub d_lights: Vec<[f64; 3]>,
    pub energy: EnergyBreakdown,
}

impl ParamGradient {
    pub fn zeros(params: &FaceParameters) -> Self {
        ParamGradient {
            d_alpha: vec![0.0; params.alpha.len()],
            d_beta: vec![0.0; params.beta.len()],
            d_delta: vec![0.0; params.delta.len()],
            d_pose: [0.0; 6],
            d_spec_map: vec![0.0; params.spec_map.raw().len()],
            d_lights: vec![[0.0; 3]; params.light_intensities.len()],
            energy: EnergyBreakdown::default(),
        }
    }

    pub fn get(&self, c: Coordinate) -> f64 {
        match c {
            Coordinate::Alpha(i) => self.d_alpha[i],
            Coordinate::Beta(i) => self.d_beta[i],
            Coordinate::Delta(i) => self.d_delta[i],
            Coordinate::Pose(i) => self.d_pose[i],
            Coordinate::Spec(i) => self.d_spec_map[i],
            Coordinate::Light(j, k) => self.d_lights[j][k],
        }
    }

    pub fn set(&mut self, c: Coordinate, v: f64) {
        match c {
            Coordinate::Alpha(i) => self.d_alpha[i] = v,
            Coordinate::Beta(i) => self.d_beta[i] = v,
            Coordinate::Delta(i) => self.d_delta[i] = v,
            Coordinate::Pose(i) => self.d_pose[i] = v,
            Coordinate::Spec(i) => self.d_spec_map[i] = v,
            Coordinate::Light(j, k) => self.d_lights[j][k] = v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_alpha
            .iter()
            .chain(&self.d_beta)
            .chain(&self.d_delta)
            .chain(&self.d_pose)
            .chain(&self.d_spec_map)
            .chain(self.d_lights.iter().flatten())
            .all(|v| v.is_finite())
    }
}

/// Every coordinate of the active blocks, in block order.
pub fn active_coordinates(params: &FaceParameters, active: &ActiveSet) -> Vec<Coordinate> {
    let mut out = Vec::new();
    if active.alpha {
        out.extend((0..params.alpha.len()).map(Coordinate::Alpha));
    }
    if active.beta {
        out.extend((0..params.beta.len()).map(Coordinate::Beta));
    }
    if active.delta {
        out.extend((0..params.delta.len()).map(Coordinate::Delta));
    }
    if active.pose {
        out.extend((0..6).map(Coordinate::Pose));
    }
    if active.spec_map {
        out.extend((0..params.spec_map.raw().len()).map(Coordinate::Spec));
    }
    if active.lights {
        for j in 0..params.light_intensities.len() {
            out.extend((0..3).map(|c| Coordinate::Light(j, c)));
        }
    }
    out
}

/// Per-tile accumulators. Vertex buffers are indexed by mesh vertex.
struct TileAccum {
    sq_err: Vec<(usize, f64)>,
    first_bad: Option<(u32, u32)>,
    pos_adj: Vec<Vec3>,
    normal_adj: Vec<Vec3>,
    albedo_adj: Vec<Vec3>,
    spec_adj: Vec<f64>,
    light_adj: Vec<[f64; 3]>,
}

struct PassInputs<'a> {
    scene: SceneRef<'a>,
    target: &'a ImageBuffer,
    matte: Option<&'a [bool]>,
    active: ActiveSet,
    rcfg: &'a RenderConfig,
}

const NX: usize = 6;

fn pixel_backward(inp: &PassInputs<'_>, x: u32, y: u32, acc: &mut TileAccum) {
    let scene = &inp.scene;
    let w = scene.camera.width;
    let idx = (y * w + x) as usize;
    if inp.matte.is_some_and(|m| !m[idx]) {
        return;
    }
    let ray = scene.camera.pixel_ray(x, y);
    let Some(hit) = intersect(scene.bvh, scene.mesh, &ray) else {
        return;
    };
    let sp = surface_point(scene.mesh, scene.spec, &ray, hit);
    let n_lights = scene.stage.len();
    let spp = inp.rcfg.spp;
    let samples = draw_light_samples(&mut pixel_rng(inp.rcfg.seed, x, y), n_lights, spp);
    let geom = inp.active.moves_geometry();
    let include_off = inp.active.lights;
    let wo = -ray.dir;

    // Per-light (g, h) values and, for geometry, their jets in (x, m).
    let (sums, jets): (Vec<Option<(f64, f64)>>, Vec<Option<(Jet<NX>, Jet<NX>)>>) = if geom {
        let xj: [Jet<NX>; 3] = std::array::from_fn(|k| Jet::var(sp.x[k], k));
        let mj: [Jet<NX>; 3] = std::array::from_fn(|k| Jet::var(sp.m[k], 3 + k));
        let lt = light_transport(&xj, &mj, &wo, scene.stage, scene.brdf, Some(scene.occluder()), &samples, spp, include_off);
        (lt.sums.iter().map(|s| s.map(|(g, h)| (g.v, h.v))).collect(), lt.sums)
    } else {
        let lt = light_transport::<f64>(
            &sp.x.into(),
            &sp.m.into(),
            &wo,
            scene.stage,
            scene.brdf,
            Some(scene.occluder()),
            &samples,
            spp,
            include_off,
        );
        (lt.sums, Vec::new())
    };

    let raw = combine(scene.brdf, scene.stage, &sp.albedo, sp.spec.value, &sums, spp);
    let p = clamp_pixel(raw, inp.rcfg.clamp_radiance);
    if !p.iter().all(|v| v.is_finite()) {
        acc.first_bad.get_or_insert((x, y));
        return;
    }
    let t = inp.target.pixels[idx];
    acc.sq_err.push((idx, pixel_sq_err(&p.into(), &t)));

    let mut r = Vec3::from_fn(|c, _| 2.0 * (p[c] - t[c]));
    if let Some(cl) = inp.rcfg.clamp_radiance {
        for c in 0..3 {
            if raw[c] > cl {
                r[c] = 0.0;
            }
        }
    }
    if r == Vec3::zeros() {
        return;
    }

    let brdf = scene.brdf;
    let inv_spp = 1.0 / spp as f64;
    let s = sp.spec.value;
    let mut albedo_bar = Vec3::zeros();
    let mut s_bar = 0.0;
    let mut x_bar = Vec3::zeros();
    let mut m_bar = Vec3::zeros();
    for (j, (light, sum)) in scene.stage.lights.iter().zip(&sums).enumerate() {
        let Some((g, h)) = *sum else { continue };
        let l = light.intensity;
        if inp.active.lights {
            let wj = light_weight(brdf, &sp.albedo, s, g, h);
            for c in 0..3 {
                acc.light_adj[j][c] += r[c] * wj[c] * inv_spp;
            }
        }
        let mut g_bar = 0.0;
        let mut h_bar = 0.0;
        for c in 0..3 {
            let rl = r[c] * l[c] * inv_spp;
            albedo_bar[c] += rl * brdf.kd * FRAC_1_PI * g;
            s_bar += rl * brdf.ks * h;
            g_bar += rl * brdf.kd * sp.albedo[c] * FRAC_1_PI;
            h_bar += rl * brdf.ks * s;
        }
        if geom {
            let (gj, hj) = jets[j].expect("jets follow sums");
            for k in 0..3 {
                x_bar[k] += g_bar * gj.d[k] + h_bar * hj.d[k];
                m_bar[k] += g_bar * gj.d[3 + k] + h_bar * hj.d[3 + k];
            }
        }
    }

    if inp.active.spec_map {
        for k in 0..4 {
            acc.spec_adj[sp.spec.texels[k]] += s_bar * sp.spec.weights[k];
        }
    }
    let vid = scene.mesh.faces[hit.triangle as usize].map(|i| i as usize);
    let b = hit.barycentrics;
    if inp.active.delta {
        for k in 0..3 {
            acc.albedo_adj[vid[k]] += albedo_bar * b[k];
        }
    }
    if geom {
        geometry_backward_at_hit(scene.mesh, &ray, &hit, vid, x_bar, m_bar, albedo_bar, s_bar, sp.spec.d_uv, acc);
    }
}

/// Pulls adjoints of the shading point, interpolated normal, albedo and
/// specular lookup back onto the hit triangle's vertices and normals.
#[allow(clippy::too_many_arguments)]
fn geometry_backward_at_hit(
    mesh: &TriangleMesh,
    ray: &Ray,
    hit: &Hit,
    vid: [usize; 3],
    x_bar: Vec3,
    m_bar: Vec3,
    albedo_bar: Vec3,
    s_bar: f64,
    d_uv: [f64; 2],
    acc: &mut TileAccum,
) {
    let b = hit.barycentrics;
    for k in 0..3 {
        acc.normal_adj[vid[k]] += m_bar * b[k];
    }
    let n = &mesh.vertex_normals;
    let a = &mesh.vertex_albedo;
    let uv = &mesh.vertex_uv;
    let uv_bar = [s_bar * d_uv[0], s_bar * d_uv[1]];
    let interp_bar = |k: usize| -> f64 {
        m_bar.dot(&(n[vid[k]] - n[vid[0]]))
            + albedo_bar.dot(&(a[vid[k]] - a[vid[0]]))
            + uv_bar[0] * (uv[vid[k]][0] - uv[vid[0]][0])
            + uv_bar[1] * (uv[vid[k]][1] - uv[vid[0]][1])
    };
    let z_bar = Vec3::new(x_bar.dot(&ray.dir), interp_bar(1), interp_bar(2));
    // (t, b1, b2) solves [d, -e1, -e2] z = v0 - o, so a vertex move dv_k
    // shifts z by M⁻¹ b_k dv_k.
    let v = vid.map(|i| mesh.vertices[i]);
    let m = crate::math::Mat3::from_columns(&[ray.dir, v[0] - v[1], v[0] - v[2]]);
    let Some(m_inv_t) = m.transpose().try_inverse() else {
        return;
    };
    let y = m_inv_t * z_bar;
    for k in 0..3 {
        acc.pos_adj[vid[k]] += y * b[k];
    }
}

/// Total objective and its gradient over the active blocks (others are
/// zero). The value matches [`Objective::evaluate`] bit for bit.
pub fn objective_with_gradient(
    obj: &Objective,
    params: &FaceParameters,
    active: &ActiveSet,
    rcfg: &RenderConfig,
) -> Result<ParamGradient> {
    rcfg.validate()?;
    obj.camera.validate()?;
    params.check_dims(&obj.model, obj.stage.len())?;
    if obj.target.width != obj.camera.width || obj.target.height != obj.camera.height {
        return Err(Error::invalid("target size does not match the camera"));
    }
    let unposed = obj.model.synthesize_geometry(&params.alpha, &params.beta)?;
    let mesh = obj.model.posed_mesh(params)?;
    let stage = obj.lit_stage(params)?;
    let bvh = Bvh::build(&mesh);
    let nv = mesh.vertices.len();
    let inp = PassInputs {
        scene: SceneRef {
            mesh: &mesh,
            bvh: &bvh,
            stage: &stage,
            brdf: &obj.brdf,
            spec: &params.spec_map,
            camera: &obj.camera,
        },
        target: &obj.target,
        matte: obj.matte.as_deref(),
        active: *active,
        rcfg,
    };
    let geom = active.moves_geometry();
    let (w, h) = (obj.camera.width, obj.camera.height);
    let accs: Vec<TileAccum> = tiles(w, h, rcfg.tile_size)
        .par_iter()
        .map(|&(x0, y0, x1, y1)| {
            let mut acc = TileAccum {
                sq_err: Vec::new(),
                first_bad: None,
                pos_adj: vec![Vec3::zeros(); if geom { nv } else { 0 }],
                normal_adj: vec![Vec3::zeros(); if geom { nv } else { 0 }],
                albedo_adj: vec![Vec3::zeros(); if active.delta { nv } else { 0 }],
                spec_adj: vec![0.0; if active.spec_map { params.spec_map.raw().len() } else { 0 }],
                light_adj: vec![[0.0; 3]; stage.len()],
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    pixel_backward(&inp, x, y, &mut acc);
                }
            }
            acc
        })
        .collect();

    if let Some((x, y)) = accs.iter().filter_map(|a| a.first_bad).min_by_key(|&(x, y)| (y, x)) {
        return Err(Error::NonFinite(format!("rendered pixel ({x}, {y})")));
    }
    let mut per_pixel = vec![None; (w * h) as usize];
    let mut pos_adj = vec![Vec3::zeros(); nv];
    let mut normal_adj = vec![Vec3::zeros(); nv];
    let mut albedo_adj = vec![Vec3::zeros(); nv];
    let mut spec_adj = vec![0.0; params.spec_map.raw().len()];
    let mut light_adj = vec![[0.0; 3]; stage.len()];
    for acc in &accs {
        for &(i, e) in &acc.sq_err {
            per_pixel[i] = Some(e);
        }
        for (dst, src) in pos_adj.iter_mut().zip(&acc.pos_adj) {
            *dst += src;
        }
        for (dst, src) in normal_adj.iter_mut().zip(&acc.normal_adj) {
            *dst += src;
        }
        for (dst, src) in albedo_adj.iter_mut().zip(&acc.albedo_adj) {
            *dst += src;
        }
        for (dst, src) in spec_adj.iter_mut().zip(&acc.spec_adj) {
            *dst += src;
        }
        for (dst, src) in light_adj.iter_mut().zip(&acc.light_adj) {
            for c in 0..3 {
                dst[c] += src[c];
            }
        }
    }
    let mut ed = 0.0;
    for e in per_pixel.into_iter().flatten() {
        ed += e;
    }

    let weights = &obj.weights;
    obj.landmarks.validate(nv)?;
    let (e_lm, lm_adj) = landmark_term(&mesh.vertices, &obj.camera, &obj.landmarks);
    let e_stat = e_statistical(&obj.model, params);
    let e_li = e_light(&params.light_intensities, &obj.regularizer)?;
    let energy = total_objective(ed, e_lm, e_stat, e_li, weights)?;

    let mut grad = ParamGradient::zeros(params);
    grad.energy = energy;
    let prior_scale = weights.w1 * weights.lambda_statistical;

    if geom {
        vertex_normals_backward(&mesh.vertices, &mesh.faces, &normal_adj, &mut pos_adj);
        let lm_scale = weights.w1 * weights.lambda_landmark;
        for (v, g) in lm_adj {
            pos_adj[v] += g * lm_scale;
        }
        let r = params.pose.matrix();
        let rt = r.transpose();
        if active.pose {
            let jac = rotation_jacobian(&params.pose.rotation_vector());
            let mut d_w = [0.0; 3];
            let mut d_t = Vec3::zeros();
            for (u, g) in unposed.iter().zip(&pos_adj) {
                d_t += g;
                for k in 0..3 {
                    d_w[k] += g.dot(&(jac[k] * u));
                }
            }
            grad.d_pose = [d_w[0], d_w[1], d_w[2], d_t.x, d_t.y, d_t.z];
        }
        let unposed_adj: Vec<Vec3> = pos_adj.iter().map(|g| rt * g).collect();
        let (da, db) = obj.model.geometry_backward(&unposed_adj);
        if active.alpha {
            grad.d_alpha = da;
        }
        if active.beta {
            grad.d_beta = db;
        }
    }
    if active.alpha {
        for (i, g) in grad.d_alpha.iter_mut().enumerate() {
            *g += prior_scale * 2.0 * params.alpha[i] / obj.model.identity_sigma[i].powi(2);
        }
    }
    if active.beta {
        for (i, g) in grad.d_beta.iter_mut().enumerate() {
            *g += prior_scale * 2.0 * params.beta[i] / obj.model.expression_sigma[i].powi(2);
        }
    }
    if active.delta {
        grad.d_delta = obj.model.albedo_backward(&params.delta, &albedo_adj)?;
        for (i, g) in grad.d_delta.iter_mut().enumerate() {
            *g += prior_scale * 2.0 * params.delta[i] / obj.model.albedo_sigma[i].powi(2);
        }
    }
    if active.spec_map {
        let ds = params.spec_map.squash_derivative();
        grad.d_spec_map = spec_adj.iter().zip(&ds).map(|(a, d)| a * d).collect();
    }
    if active.lights {
        let reg = e_light_gradient(&params.light_intensities, &obj.regularizer);
        for (j, g) in grad.d_lights.iter_mut().enumerate() {
            for c in 0..3 {
                g[c] = light_adj[j][c] + weights.w2 * reg[j][c];
            }
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("objective gradient".into()));
    }
    Ok(grad)
}

/// Per-pixel primary hits and per-light shading sums of one geometry state,
/// for re-evaluating the objective when only albedo, specular map or light
/// intensities change. Results are bit-identical to a full render.
struct ShadingCache {
    mesh: TriangleMesh,
    pixels: Vec<Option<(Ray, Hit, Vec<Option<(f64, f64)>>)>>,
    hit_mask: Vec<bool>,
}

impl ShadingCache {
    fn build(obj: &Objective, params: &FaceParameters, rcfg: &RenderConfig) -> Result<ShadingCache> {
        let mesh = obj.model.posed_mesh(params)?;
        let stage = obj.lit_stage(params)?;
        let bvh = Bvh::build(&mesh);
        let scene = SceneRef {
            mesh: &mesh,
            bvh: &bvh,
            stage: &stage,
            brdf: &obj.brdf,
            spec: &params.spec_map,
            camera: &obj.camera,
        };
        let (w, h) = (obj.camera.width, obj.camera.height);
        let pixels: Vec<_> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let ray = obj.camera.pixel_ray(x, y);
                let hit = intersect(&bvh, &mesh, &ray)?;
                let sp = surface_point(&mesh, &params.spec_map, &ray, hit);
                let samples = draw_light_samples(&mut pixel_rng(rcfg.seed, x, y), stage.len(), rcfg.spp);
                let lt = light_transport::<f64>(
                    &sp.x.into(),
                    &sp.m.into(),
                    &(-ray.dir),
                    &stage,
                    scene.brdf,
                    Some(scene.occluder()),
                    &samples,
                    rcfg.spp,
                    true,
                );
                Some((ray, hit, lt.sums))
            })
            .collect();
        let hit_mask = pixels.iter().map(|p| p.is_some()).collect();
        Ok(ShadingCache { mesh, pixels, hit_mask })
    }

    fn evaluate(&self, obj: &Objective, params: &FaceParameters, rcfg: &RenderConfig) -> Result<EnergyBreakdown> {
        let mut mesh = self.mesh.clone();
        mesh.vertex_albedo = obj.model.synthesize_albedo(&params.delta)?;
        let stage = obj.lit_stage(params)?;
        let mut image = ImageBuffer::new(obj.camera.width, obj.camera.height);
        for (i, px) in self.pixels.iter().enumerate() {
            if let Some((ray, hit, sums)) = px {
                let sp = surface_point(&mesh, &params.spec_map, ray, *hit);
                let v = combine(&obj.brdf, &stage, &sp.albedo, sp.spec.value, sums, rcfg.spp);
                image.pixels[i] = clamp_pixel(v, rcfg.clamp_radiance).into();
            }
        }
        let mask = crate::energy::data_mask(&self.hit_mask, obj.matte.as_deref());
        let ed = e_data(&image, &obj.target, &mask)?;
        let (el, es) = e_prior(&obj.model, params, &obj.camera, &obj.landmarks)?;
        total_objective(ed, el, es, e_light(&params.light_intensities, &obj.regularizer)?, &obj.weights)
    }

    /// Texels reached by the bilinear footprint of any data pixel.
    fn touched_texels(&self, obj: &Objective, params: &FaceParameters) -> Vec<bool> {
        let mut touched = vec![false; params.spec_map.raw().len()];
        let mask = crate::energy::data_mask(&self.hit_mask, obj.matte.as_deref());
        for (px, m) in self.pixels.iter().zip(mask) {
            if let (Some((ray, hit, _)), true) = (px, m) {
                let sp = surface_point(&self.mesh, &params.spec_map, ray, *hit);
                for (t, w) in sp.spec.texels.iter().zip(sp.spec.weights) {
                    if w != 0.0 {
                        touched[*t] = true;
                    }
                }
            }
        }
        touched
    }
}

/// Step sizes for central differences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdSteps {
    pub coefficient: f64,
    pub pose: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        FdSteps {
            coefficient: 1e-4,
            pose: 1e-5,
        }
    }
}

impl FdSteps {
    pub fn halved(&self) -> FdSteps {
        FdSteps {
            coefficient: self.coefficient * 0.5,
            pose: self.pose * 0.5,
        }
    }

    fn step(&self, c: Coordinate) -> f64 {
        match c {
            Coordinate::Pose(_) => self.pose,
            _ => self.coefficient,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdGradient {
    pub gradient: ParamGradient,
    /// Coordinates whose ± evaluations changed a primary hit triangle or a
    /// shadow-ray outcome.
    pub flagged: Vec<Coordinate>,
    /// Coordinates actually differenced (untouched specular texels are
    /// exactly zero and skipped).
    pub evaluated: Vec<Coordinate>,
}

fn same_discrete_state(a: &RenderOutput, b: &RenderOutput) -> bool {
    a.aux.iter().zip(&b.aux).all(|(p, q)| {
        p.hit.map(|h| h.triangle) == q.hit.map(|h| h.triangle) && p.visibility_signature == q.visibility_signature
    })
}

/// Central differences of the full objective with common random numbers.
pub fn finite_difference_gradient(
    obj: &Objective,
    params: &FaceParameters,
    active: &ActiveSet,
    rcfg: &RenderConfig,
    steps: &FdSteps,
) -> Result<FdGradient> {
    if !(steps.coefficient > 0.0 && steps.pose > 0.0) {
        return Err(Error::invalid("finite-difference steps must be positive"));
    }
    let base = obj.evaluate(params, rcfg)?;
    let cache = ShadingCache::build(obj, params, rcfg)?;
    let touched = cache.touched_texels(obj, params);
    let mut grad = ParamGradient::zeros(params);
    grad.energy = base.energy;
    let mut flagged = Vec::new();
    let mut evaluated = Vec::new();
    for c in active_coordinates(params, active) {
        if let Coordinate::Spec(i) = c {
            if !touched[i] {
                continue;
            }
        }
        let h = steps.step(c);
        let x0 = c.get(params);
        let mut plus = params.clone();
        c.set(&mut plus, x0 + h)?;
        let mut minus = params.clone();
        c.set(&mut minus, x0 - h)?;
        let (ep, em) = match c {
            Coordinate::Alpha(_) | Coordinate::Beta(_) | Coordinate::Pose(_) => {
                let p = obj.evaluate(&plus, rcfg)?;
                let m = obj.evaluate(&minus, rcfg)?;
                if !same_discrete_state(&p.render, &base.render) || !same_discrete_state(&m.render, &base.render) {
                    flagged.push(c);
                }
                (p.energy.total, m.energy.total)
            }
            _ => (cache.evaluate(obj, &plus, rcfg)?.total, cache.evaluate(obj, &minus, rcfg)?.total),
        };
        grad.set(c, (ep - em) / (2.0 * h));
        evaluated.push(c);
    }
    Ok(FdGradient {
        gradient: grad,
        flagged,
        evaluated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub coordinate: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_err: f64,
    pub flagged: bool,
    /// Whether the row takes part in the pass fraction.
    pub compared: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub pass_fraction: f64,
    pub worst_coord: String,
    pub worst_rel_err: f64,
    pub compared: usize,
    pub flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub summary: GradcheckSummary,
}

/// Relative tolerance of the gradient comparison.
pub const GRADCHECK_REL_TOL: f64 = 1e-2;
/// Coordinates with smaller gradients are not compared.
pub const GRADCHECK_MIN_MAGNITUDE: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares analytic and finite-difference gradients coordinate by coordinate.
pub fn compare_gradients(analytic: &ParamGradient, fd: &FdGradient) -> GradcheckReport {
    let mut rows = Vec::new();
    let (mut passed, mut compared) = (0usize, 0usize);
    let (mut worst, mut worst_err) = (String::new(), 0.0);
    for &c in &fd.evaluated {
        let a = analytic.get(c);
        let f = fd.gradient.get(c);
        let rel = relative_error(a, f);
        let flagged = fd.flagged.contains(&c);
        let is_compared = !flagged && a.abs().max(f.abs()) > GRADCHECK_MIN_MAGNITUDE;
        let pass = rel <= GRADCHECK_REL_TOL;
        if is_compared {
            compared += 1;
            if pass {
                passed += 1;
            }
            if rel > worst_err || worst.is_empty() {
                worst_err = rel;
                worst = c.to_string();
            }
        }
        rows.push(GradcheckRow {
            coordinate: c.to_string(),
            analytic: a,
            finite_difference: f,
            rel_err: rel,
            flagged,
            compared: is_compared,
            pass,
        });
    }
    GradcheckReport {
        rows,
        summary: GradcheckSummary {
            pass_fraction: if compared == 0 { 1.0 } else { passed as f64 / compared as f64 },
            worst_coord: worst,
            worst_rel_err: worst_err,
            compared,
            flagged: fd.flagged.len(),
        },
    }
}

impl GradcheckReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<16} {:>15} {:>15} {:>10}  flag\n",
            "coordinate", "analytic", "fd", "rel_err"
        );
        for r in &self.rows {
            let flag = if r.flagged {
                "discontinuity"
            } else if !r.compared {
                "small"
            } else if r.pass {
                "ok"
            } else {
                "FAIL"
            };
            let _ = writeln!(
                out,
                "{:<16} {:>15.8e} {:>15.8e} {:>10.3e}  {flag}",
                r.coordinate, r.analytic, r.finite_difference, r.rel_err
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "pass_fraction {:.4} over {} compared coordinates ({} flagged); worst {} at {:.3e}",
            s.pass_fraction, s.compared, s.flagged, s.worst_coord, s.worst_rel_err
        );
        out
    }
}

/// Renders the current state through the same path as the objective.
pub fn render_state(obj: &Objective, params: &FaceParameters, rcfg: &RenderConfig) -> Result<RenderOutput> {
    let mesh = obj.model.posed_mesh(params)?;
    let stage = obj.lit_stage(params)?;
    let bvh = Bvh::build(&mesh);
    render_with_bvh(
        &SceneRef {
            mesh: &mesh,
            bvh: &bvh,
            stage: &stage,
            brdf: &obj.brdf,
            spec: &params.spec_map,
            camera: &obj.camera,
        },
        rcfg,
    )
}
