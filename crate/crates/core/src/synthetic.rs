//! Reproducible ground-truth scenes built from the synthetic face model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::brdf::{BrdfConfig, SpecularMap, DEFAULT_SPEC_MAP_SIZE};
use crate::energy::{erode_mask, LandmarkSet, LightRegularizer, Objective, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::grad::render_state;
use crate::imageio::ImageBuffer;
use crate::morphable::{generate_synthetic_model, FaceParameters, ModelDims, MorphableModel};
use crate::scene::{build_light_stage_with, Camera, LightStage, StageOrientation, DEFAULT_LIGHT_COUNT};
use crate::tracer::RenderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub n: usize,
    pub radius: f64,
    pub half_extent: f64,
    pub orientation: StageOrientation,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            n: DEFAULT_LIGHT_COUNT,
            radius: 4.0,
            half_extent: 0.6,
            orientation: StageOrientation::Front,
        }
    }
}

impl StageConfig {
    /// Stage with every light at `intensity` gray.
    pub fn build(&self, intensity: f64) -> Result<LightStage> {
        build_light_stage_with(self.n, self.radius, self.half_extent, intensity, self.orientation)
    }
}

/// Parameters of a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub level: u32,
    pub dims: ModelDims,
    pub width: u32,
    pub height: u32,
    pub stage: StageConfig,
    /// Erosion radius in pixels applied to the rendered silhouette to form
    /// the objective's matte.
    pub matte_erosion: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 7,
            level: 3,
            dims: ModelDims::DESK,
            width: 64,
            height: 64,
            stage: StageConfig::default(),
            matte_erosion: 4,
        }
    }
}

/// Model, rig and ground-truth parameters of a synthetic experiment.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub model: MorphableModel,
    pub stage: LightStage,
    pub camera: Camera,
    pub brdf: BrdfConfig,
    pub truth: FaceParameters,
    pub matte_erosion: usize,
}

/// Smooth specular-strength field in (0.2, 0.8).
fn random_spec_map(rng: &mut impl Rng, size: usize) -> Result<SpecularMap> {
    let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..size * size)
        .map(|i| {
            let u = ((i % size) as f64 + 0.5) / size as f64;
            let v = ((i / size) as f64 + 0.5) / size as f64;
            let tau = std::f64::consts::TAU;
            let f = coeffs[0] * (tau * u).sin()
                + coeffs[1] * (tau * v).cos()
                + coeffs[2] * (tau * (u + v)).sin()
                + coeffs[3] * (0.5 * tau * u).cos() * (0.5 * tau * v).sin()
                + coeffs[4] * (u - 0.5)
                + coeffs[5] * (v - 0.5);
            0.5 + 0.3 * (f / 3.0).tanh()
        })
        .collect();
    SpecularMap::from_values(size, &values)
}

/// Per-light RGB intensities around 0.5 with mild color variation.
pub fn random_light_intensities(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let base = 0.25 + 0.5 * rng.random::<f64>();
            [0; 3].map(|_: i32| base * (1.0 + 0.1 * rng.random_range(-1.0..1.0)))
        })
        .collect()
}

impl SyntheticScene {
    pub fn build(spec: &SceneSpec) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        let model = generate_synthetic_model(spec.seed, spec.level, spec.dims)?;
        let stage = spec.stage.build(crate::scene::DEFAULT_LIGHT_INTENSITY)?;
        let camera = Camera::facing(1.0, spec.width, spec.height)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_7a11);
        let mut normal = |s: f64| -> f64 { s * rng.sample::<f64, _>(StandardNormal) };
        let dims = spec.dims;
        let alpha = (0..dims.identity).map(|_| normal(1.0)).collect();
        let beta = (0..dims.expression).map(|_| normal(1.0)).collect();
        let delta = (0..dims.albedo).map(|_| normal(0.5)).collect();
        let mut truth = FaceParameters::neutral(&model, stage.len());
        truth.alpha = alpha;
        truth.beta = beta;
        truth.delta = delta;
        truth.spec_map = random_spec_map(&mut rng, DEFAULT_SPEC_MAP_SIZE)?;
        truth.light_intensities = random_light_intensities(&mut rng, stage.len());
        Ok(SyntheticScene {
            model,
            stage,
            camera,
            brdf: BrdfConfig::default(),
            truth,
            matte_erosion: spec.matte_erosion,
        })
    }

    /// Objective whose target is a render of `truth` with `target_rcfg`,
    /// matted to the eroded rendered silhouette, and whose landmarks are the exact
    /// projections of the truth. The light regularizer is gray-anchored.
    pub fn objective(
        &self,
        truth: &FaceParameters,
        target_rcfg: &RenderConfig,
        weights: ObjectiveWeights,
    ) -> Result<(Objective, ImageBuffer)> {
        let mut obj = Objective {
            model: self.model.clone(),
            stage: self.stage.clone(),
            camera: self.camera.clone(),
            brdf: self.brdf,
            target: ImageBuffer::new(self.camera.width, self.camera.height),
            matte: None,
            landmarks: LandmarkSet::from_projection(&self.model, truth, &self.camera)?,
            weights,
            regularizer: LightRegularizer::GrayAnchor,
        };
        let render = render_state(&obj, truth, target_rcfg)?;
        obj.target = render.image.clone();
        obj.matte = Some(erode_mask(&render.hit_mask(), self.camera.width as usize, self.matte_erosion));
        Ok((obj, render.image))
    }
}

/// Copy of `truth` with Gaussian noise of `sigma` on α and β and the pose
/// translated by `offset`.
pub fn perturb_geometry(truth: &FaceParameters, seed: u64, sigma: f64, offset: [f64; 3]) -> FaceParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = truth.clone();
    for a in p.alpha.iter_mut().chain(p.beta.iter_mut()) {
        *a += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    for k in 0..3 {
        p.pose.translation[k] += offset[k];
    }
    p
}

/// A generic non-optimal state for gradient checks: every block is moved
/// away from `truth`.
pub fn gradcheck_state(truth: &FaceParameters, seed: u64) -> Result<FaceParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = perturb_geometry(truth, seed.wrapping_add(1), 0.3, [0.02, -0.01, 0.0]);
    p.pose.rotation = [0.02, -0.03, 0.01];
    for d in &mut p.delta {
        *d += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    let raw: Vec<f64> = p.spec_map.raw().iter().map(|r| r + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    p.spec_map = SpecularMap::from_raw(p.spec_map.size(), raw)?;
    for l in &mut p.light_intensities {
        for c in l.iter_mut() {
            *c *= 0.8 + 0.4 * rng.random::<f64>();
        }
    }
    Ok(p)
}
