#![allow(dead_code)]

use lightstage::brdf::{BrdfConfig, SpecularMap};
use lightstage::math::Vec3;
use lightstage::morphable::FaceParameters;
use lightstage::scene::{AreaLight, Camera, LightStage, Ray, StageOrientation, TriangleMesh};
use lightstage::tracer::{
    draw_light_samples, intersect_triangle, pixel_rng, sample_light_point, RenderConfig, RenderOutput, RAY_EPSILON,
};

pub const PLANE_ALBEDO: [f64; 3] = [0.6, 0.5, 0.4];
pub const PLANE_LIGHT: [f64; 3] = [1.0, 0.8, 0.6];

/// Mean of `cos_x cos_l A / d²` over 10⁶ light samples per pixel of the
/// 4×4 plane scene, from `tests/oracles/plane_reference.py`.
pub const PLANE_REFERENCE_G: [f64; 16] = [
    4.94235450e-02,
    6.91798257e-02,
    8.44231418e-02,
    8.39356186e-02,
    5.29259018e-02,
    7.46689503e-02,
    9.17962373e-02,
    9.17713913e-02,
    4.84004234e-02,
    6.66114257e-02,
    8.03830578e-02,
    8.00913821e-02,
    3.88489713e-02,
    5.10280640e-02,
    5.94588112e-02,
    5.87370753e-02,
];

pub struct PlaneScene {
    pub mesh: TriangleMesh,
    pub stage: LightStage,
    pub brdf: BrdfConfig,
    pub spec: SpecularMap,
    pub camera: Camera,
}

/// Lambertian plane z = 0 seen from (0, 0, 3), lit by one square light.
pub fn plane_scene() -> PlaneScene {
    let vertices = vec![
        Vec3::new(-2.0, -2.0, 0.0),
        Vec3::new(2.0, -2.0, 0.0),
        Vec3::new(2.0, 2.0, 0.0),
        Vec3::new(-2.0, 2.0, 0.0),
    ];
    let mut mesh = TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
    mesh.vertex_albedo = vec![Vec3::from(PLANE_ALBEDO); 4];
    let center = Vec3::new(0.8, 0.5, 2.5);
    let light = AreaLight::oriented_at_origin(center, 0.4, Vec3::from(PLANE_LIGHT));
    PlaneScene {
        mesh,
        stage: LightStage {
            lights: vec![light],
            radius: center.norm(),
            orientation: StageOrientation::Front,
        },
        brdf: BrdfConfig {
            ks: 0.0,
            ..BrdfConfig::default()
        },
        spec: SpecularMap::constant(2, 0.5).unwrap(),
        camera: Camera::facing(1.0, 4, 4).unwrap(),
    }
}

/// Reference radiance of plane pixel `i`, channel `c`.
pub fn plane_reference(i: usize, c: usize) -> f64 {
    PLANE_ALBEDO[c] * PLANE_LIGHT[c] * std::f64::consts::FRAC_1_PI * PLANE_REFERENCE_G[i]
}

pub fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

/// Occlusion by scanning every triangle.
pub fn brute_occluded(mesh: &TriangleMesh, from: &Vec3, to: &Vec3) -> bool {
    let d = to - from;
    let dist = d.norm();
    if !(dist > 2.0 * RAY_EPSILON) {
        return false;
    }
    let ray = Ray {
        origin: *from,
        dir: d / dist,
    };
    (0..mesh.faces.len()).any(|f| {
        let [a, b, c] = mesh.triangle(f);
        intersect_triangle(&ray, &a, &b, &c).is_some_and(|(t, _, _)| t > RAY_EPSILON && t < dist - RAY_EPSILON)
    })
}

/// Per-light visible fraction at `point` for the sample points pixel
/// `(x, y)` draws, by brute force.
pub fn oracle_visibility(
    mesh: &TriangleMesh,
    stage: &LightStage,
    rcfg: &RenderConfig,
    x: u32,
    y: u32,
    point: &Vec3,
) -> Vec<Option<f64>> {
    let spp = rcfg.spp as usize;
    let samples = draw_light_samples(&mut pixel_rng(rcfg.seed, x, y), stage.len(), rcfg.spp);
    stage
        .lights
        .iter()
        .enumerate()
        .map(|(j, light)| {
            if light.is_off() {
                return None;
            }
            let visible = samples[j * spp..(j + 1) * spp]
                .iter()
                .filter(|u| !brute_occluded(mesh, point, &sample_light_point(light, **u).0))
                .count();
            Some(visible as f64 / spp as f64)
        })
        .collect()
}

/// Oracle visibility of every pixel of a render (`None` for misses).
pub fn oracle_visibility_map(
    mesh: &TriangleMesh,
    stage: &LightStage,
    rcfg: &RenderConfig,
    out: &RenderOutput,
    width: u32,
) -> Vec<Option<Vec<Option<f64>>>> {
    out.aux
        .iter()
        .enumerate()
        .map(|(i, a)| {
            a.hit.map(|h| oracle_visibility(mesh, stage, rcfg, i as u32 % width, i as u32 / width, &h.point))
        })
        .collect()
}

/// Bit patterns of every parameter, for exact comparisons.
pub fn param_bits(p: &FaceParameters) -> Vec<u64> {
    p.alpha
        .iter()
        .chain(&p.beta)
        .chain(&p.delta)
        .chain(&p.pose.to_array())
        .chain(p.spec_map.raw())
        .chain(p.light_intensities.iter().flatten())
        .map(|v| v.to_bits())
        .collect()
}

pub fn image_bits(out: &RenderOutput) -> Vec<u64> {
    out.image.pixels.iter().flatten().map(|v| v.to_bits()).collect()
}
