//! Deterministic Monte-Carlo direct-lighting renderer.
//!
//! One primary ray per pixel through the pixel center; on a hit, every area
//! light of the stage is sampled `spp` times with a shadow ray per sample.
//! Each pixel owns a ChaCha stream keyed by `(seed, x, y)`, and light samples
//! are always drawn for every light in order, so the output does not depend
//! on thread count, tile schedule or which lights are switched off.

mod bvh;

pub use bvh::{intersect_triangle, Bvh, Hit};

use std::f64::consts::FRAC_1_PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf::{cook_torrance_lobe, BrdfConfig, SpecularMap, SpecularSample};
use crate::error::{Error, Result};
use crate::imageio::ImageBuffer;
use crate::math::{dot3, lift3, scale3, sub3, Real, Vec3, V3};
use crate::scene::{AreaLight, Camera, LightStage, Ray, TriangleMesh};

/// Self-intersection offset for primary and shadow rays.
pub const RAY_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Samples per light per pixel.
    pub spp: u32,
    pub seed: u64,
    pub tile_size: u32,
    pub clamp_radiance: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            spp: 16,
            seed: 0,
            tile_size: 16,
            clamp_radiance: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spp == 0 {
            return Err(Error::invalid("spp must be at least 1"));
        }
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimaryHit {
    pub triangle: u32,
    pub t: f64,
    pub barycentrics: [f64; 3],
    pub point: Vec3,
    /// Interpolated shading normal, unit length.
    pub normal: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelAux {
    pub hit: Option<PrimaryHit>,
    /// Mean shadow-ray visibility per light; `None` for skipped (off) lights
    /// and for misses.
    pub light_visibility: Vec<Option<f64>>,
    /// Hash of every shadow-ray outcome of the pixel, in sampling order.
    pub visibility_signature: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: ImageBuffer,
    pub aux: Vec<PixelAux>,
}

impl RenderOutput {
    pub fn hit_mask(&self) -> Vec<bool> {
        self.aux.iter().map(|a| a.hit.is_some()).collect()
    }
}

/// Point on the light's square for `u ∈ [0,1]²`, with area pdf and normal.
pub fn sample_light_point(light: &AreaLight, u: [f64; 2]) -> (Vec3, f64, Vec3) {
    let h = light.half_extent;
    let p = light.center + light.tangent * ((2.0 * u[0] - 1.0) * h) + light.bitangent * ((2.0 * u[1] - 1.0) * h);
    (p, 1.0 / (4.0 * h * h), light.normal)
}

/// True iff a triangle intersects the open segment between the points,
/// shortened by [`RAY_EPSILON`] at both ends.
pub fn occluded(bvh: &Bvh, mesh: &TriangleMesh, from: &Vec3, to: &Vec3) -> bool {
    let d = to - from;
    let dist = d.norm();
    if !(dist > 2.0 * RAY_EPSILON) {
        return false;
    }
    let ray = Ray { origin: *from, dir: d / dist };
    bvh.any_hit(mesh, &ray, RAY_EPSILON, dist - RAY_EPSILON)
}

/// Nearest hit beyond [`RAY_EPSILON`].
pub fn intersect(bvh: &Bvh, mesh: &TriangleMesh, ray: &Ray) -> Option<Hit> {
    bvh.intersect(mesh, ray, RAY_EPSILON, f64::INFINITY)
}

/// Random stream of pixel `(x, y)` for a render seed.
pub fn pixel_rng(seed: u64, x: u32, y: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((y as u64) << 32) | x as u64);
    rng
}

/// Light-sample coordinates in drawing order: light-major, `spp` per light.
pub fn draw_light_samples(rng: &mut impl RngCore, n_lights: usize, spp: u32) -> Vec<[f64; 2]> {
    (0..n_lights * spp as usize)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect()
}

/// Derives a sub-seed, e.g. a per-iteration render seed from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Geometry term `cos_x · cos_l / (d² · pdf)` and the same times the
/// Cook-Torrance lobe, for one light sample. `m` is the un-normalized
/// interpolated normal at shading point `x`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn sample_terms<T: Real>(
    x: &V3<T>,
    m: &V3<T>,
    wo: &V3<T>,
    y: &Vec3,
    light_normal: &Vec3,
    inv_pdf: f64,
    brdf: &BrdfConfig,
) -> (T, T) {
    let zero = T::cst(0.0);
    let n = scale3(m, T::cst(1.0) / dot3(m, m).sqrt());
    let v = sub3(&lift3(y), x);
    let d2 = dot3(&v, &v);
    let w = scale3(&v, T::cst(1.0) / d2.sqrt());
    let ci = dot3(&n, &w);
    let cl = -dot3(&lift3(light_normal), &w);
    if ci.val() <= 0.0 || cl.val() <= 0.0 {
        return (zero, zero);
    }
    let g = ci * cl * T::cst(inv_pdf) / d2;
    let co = dot3(&n, wo);
    if co.val() <= 0.0 || brdf.ks == 0.0 {
        return (g, zero);
    }
    let lobe = cook_torrance_lobe(&n, &w, wo, ci, co, T::cst(brdf.roughness), T::cst(brdf.f0));
    (g, lobe * g)
}

#[inline]
fn fnv(h: u64, byte: u8) -> u64 {
    (h ^ byte as u64).wrapping_mul(0x0000_0100_0000_01b3)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Occlusion source for shadow rays.
#[derive(Clone, Copy)]
pub struct Occluder<'a> {
    pub bvh: &'a Bvh,
    pub mesh: &'a TriangleMesh,
}

/// Per-light accumulated `(Σ V·G, Σ V·G·CT)`, `None` for skipped lights.
pub(crate) struct LightTransport<T> {
    pub sums: Vec<Option<(T, T)>>,
    pub visible: Vec<Option<u32>>,
    pub signature: u64,
}

/// Traces every light sample from shading point `x` and accumulates the
/// shading terms. Shared by the forward renderer (`T = f64`) and the
/// gradient pass (`T = Jet`), so both see identical values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn light_transport<T: Real>(
    x: &V3<T>,
    m: &V3<T>,
    wo: &Vec3,
    stage: &LightStage,
    brdf: &BrdfConfig,
    occluder: Option<Occluder<'_>>,
    samples: &[[f64; 2]],
    spp: u32,
    include_off_lights: bool,
) -> LightTransport<T> {
    let spp = spp as usize;
    let xv = Vec3::new(x[0].val(), x[1].val(), x[2].val());
    let wo_t = lift3(wo);
    let mut sums = Vec::with_capacity(stage.len());
    let mut visible = Vec::with_capacity(stage.len());
    let mut sig = FNV_OFFSET;
    for (j, light) in stage.lights.iter().enumerate() {
        if light.is_off() && !include_off_lights {
            sums.push(None);
            visible.push(None);
            continue;
        }
        for b in (j as u32).to_le_bytes() {
            sig = fnv(sig, b);
        }
        let inv_pdf = light.area();
        let (mut g_sum, mut h_sum) = (T::cst(0.0), T::cst(0.0));
        let mut count = 0u32;
        for u in &samples[j * spp..(j + 1) * spp] {
            let (y, _, nl) = sample_light_point(light, *u);
            let vis = match occluder {
                Some(o) => !occluded(o.bvh, o.mesh, &xv, &y),
                None => true,
            };
            sig = fnv(sig, vis as u8);
            if vis {
                count += 1;
                let (g, h) = sample_terms(x, m, &wo_t, &y, &nl, inv_pdf, brdf);
                g_sum = g_sum + g;
                h_sum = h_sum + h;
            }
        }
        sums.push(Some((g_sum, h_sum)));
        visible.push(Some(count));
    }
    LightTransport {
        sums,
        visible,
        signature: sig,
    }
}

/// Per-light linear weight `w` with `pixel = Σ_j w_j ⊙ l_j / spp`.
#[inline]
pub(crate) fn light_weight(brdf: &BrdfConfig, albedo: &Vec3, spec: f64, g: f64, h: f64) -> Vec3 {
    Vec3::from_fn(|c, _| brdf.kd * albedo[c] * FRAC_1_PI * g + brdf.ks * spec * h)
}

/// Pixel radiance from the per-light sums.
pub(crate) fn combine(
    brdf: &BrdfConfig,
    stage: &LightStage,
    albedo: &Vec3,
    spec: f64,
    sums: &[Option<(f64, f64)>],
    spp: u32,
) -> Vec3 {
    let inv_spp = 1.0 / spp as f64;
    let mut p = Vec3::zeros();
    for (light, s) in stage.lights.iter().zip(sums) {
        if let Some((g, h)) = s {
            let w = light_weight(brdf, albedo, spec, *g, *h);
            for c in 0..3 {
                p[c] += w[c] * light.intensity[c] * inv_spp;
            }
        }
    }
    p
}

/// Shading inputs at a surface point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadePoint {
    pub point: Vec3,
    /// Unit normal.
    pub normal: Vec3,
    pub albedo: Vec3,
    pub uv: [f64; 2],
}

/// Monte-Carlo estimate of reflected radiance toward `wo` from all lights,
/// drawing `spp` samples per light from `sampler`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_direct(
    shade: &ShadePoint,
    stage: &LightStage,
    cfg: &BrdfConfig,
    spec: &SpecularMap,
    wo: &Vec3,
    sampler: &mut impl RngCore,
    spp: u32,
    occluder: Option<Occluder<'_>>,
) -> Vec3 {
    let samples = draw_light_samples(sampler, stage.len(), spp.max(1));
    let lt = light_transport::<f64>(
        &shade.point.into(),
        &shade.normal.into(),
        wo,
        stage,
        cfg,
        occluder,
        &samples,
        spp.max(1),
        false,
    );
    combine(cfg, stage, &shade.albedo, spec.sample(shade.uv).value, &lt.sums, spp.max(1))
}

/// Interpolated surface attributes at a primary hit.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SurfacePoint {
    pub x: Vec3,
    /// Un-normalized interpolated normal.
    pub m: Vec3,
    pub albedo: Vec3,
    pub spec: SpecularSample,
}

pub(crate) fn surface_point(mesh: &TriangleMesh, spec: &SpecularMap, ray: &Ray, hit: Hit) -> SurfacePoint {
    let [i0, i1, i2] = mesh.faces[hit.triangle as usize].map(|i| i as usize);
    let [b0, b1, b2] = hit.barycentrics;
    let x = ray.origin + ray.dir * hit.t;
    let m = mesh.vertex_normals[i0] * b0 + mesh.vertex_normals[i1] * b1 + mesh.vertex_normals[i2] * b2;
    let albedo = mesh.vertex_albedo[i0] * b0 + mesh.vertex_albedo[i1] * b1 + mesh.vertex_albedo[i2] * b2;
    let (u0, u1, u2) = (mesh.vertex_uv[i0], mesh.vertex_uv[i1], mesh.vertex_uv[i2]);
    let uv = [
        u0[0] * b0 + u1[0] * b1 + u2[0] * b2,
        u0[1] * b0 + u1[1] * b1 + u2[1] * b2,
    ];
    SurfacePoint {
        x,
        m,
        albedo,
        spec: spec.sample(uv),
    }
}

/// Everything the per-pixel passes need, with a prebuilt BVH.
pub(crate) struct SceneRef<'a> {
    pub mesh: &'a TriangleMesh,
    pub bvh: &'a Bvh,
    pub stage: &'a LightStage,
    pub brdf: &'a BrdfConfig,
    pub spec: &'a SpecularMap,
    pub camera: &'a Camera,
}

impl SceneRef<'_> {
    pub fn occluder(&self) -> Occluder<'_> {
        Occluder {
            bvh: self.bvh,
            mesh: self.mesh,
        }
    }
}

/// Rectangles `(x0, y0, x1, y1)` covering the image, row-major.
pub(crate) fn tiles(width: u32, height: u32, tile: u32) -> Vec<(u32, u32, u32, u32)> {
    let mut out = Vec::new();
    for y0 in (0..height).step_by(tile as usize) {
        for x0 in (0..width).step_by(tile as usize) {
            out.push((x0, y0, (x0 + tile).min(width), (y0 + tile).min(height)));
        }
    }
    out
}

pub(crate) fn clamp_pixel(p: Vec3, clamp: Option<f64>) -> Vec3 {
    match clamp {
        Some(c) => p.map(|v| v.min(c)),
        None => p,
    }
}

fn render_pixel(scene: &SceneRef<'_>, rcfg: &RenderConfig, x: u32, y: u32) -> (Vec3, PixelAux) {
    let ray = scene.camera.pixel_ray(x, y);
    let n_lights = scene.stage.len();
    let Some(hit) = intersect(scene.bvh, scene.mesh, &ray) else {
        let aux = PixelAux {
            hit: None,
            light_visibility: vec![None; n_lights],
            visibility_signature: FNV_OFFSET,
        };
        return (Vec3::zeros(), aux);
    };
    let sp = surface_point(scene.mesh, scene.spec, &ray, hit);
    let samples = draw_light_samples(&mut pixel_rng(rcfg.seed, x, y), n_lights, rcfg.spp);
    let lt = light_transport::<f64>(
        &sp.x.into(),
        &sp.m.into(),
        &(-ray.dir),
        scene.stage,
        scene.brdf,
        Some(scene.occluder()),
        &samples,
        rcfg.spp,
        false,
    );
    let value = combine(scene.brdf, scene.stage, &sp.albedo, sp.spec.value, &lt.sums, rcfg.spp);
    let aux = PixelAux {
        hit: Some(PrimaryHit {
            triangle: hit.triangle,
            t: hit.t,
            barycentrics: hit.barycentrics,
            point: sp.x,
            normal: sp.m.normalize(),
        }),
        light_visibility: lt
            .visible
            .iter()
            .map(|v| v.map(|c| c as f64 / rcfg.spp as f64))
            .collect(),
        visibility_signature: lt.signature,
    };
    (clamp_pixel(value, rcfg.clamp_radiance), aux)
}

pub(crate) fn render_with_bvh(scene: &SceneRef<'_>, rcfg: &RenderConfig) -> Result<RenderOutput> {
    rcfg.validate()?;
    scene.camera.validate()?;
    let (w, h) = (scene.camera.width, scene.camera.height);
    let tiles = tiles(w, h, rcfg.tile_size);
    let rendered: Vec<Vec<(u32, u32, Vec3, PixelAux)>> = tiles
        .par_iter()
        .map(|&(x0, y0, x1, y1)| {
            let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (v, a) = render_pixel(scene, rcfg, x, y);
                    out.push((x, y, v, a));
                }
            }
            out
        })
        .collect();
    let mut image = ImageBuffer::new(w, h);
    let mut aux: Vec<Option<PixelAux>> = vec![None; (w * h) as usize];
    for (x, y, v, a) in rendered.into_iter().flatten() {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite(format!("rendered pixel ({x}, {y})")));
        }
        image.set(x, y, v.into());
        aux[(y * w + x) as usize] = Some(a);
    }
    Ok(RenderOutput {
        image,
        aux: aux.into_iter().map(|a| a.expect("every pixel rendered")).collect(),
    })
}

/// Renders a posed mesh under the stage's current light intensities.
pub fn render(
    mesh: &TriangleMesh,
    stage: &LightStage,
    brdf: &BrdfConfig,
    spec: &SpecularMap,
    camera: &Camera,
    rcfg: &RenderConfig,
) -> Result<RenderOutput> {
    let bvh = Bvh::build(mesh);
    render_with_bvh(
        &SceneRef {
            mesh,
            bvh: &bvh,
            stage,
            brdf,
            spec,
            camera,
        },
        rcfg,
    )
}
