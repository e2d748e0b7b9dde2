//! Objective terms: photo-consistency, landmark and statistical priors, and
//! the light regularizer, combined as
//! `E = E_data + w1 (λ_lm E_landmark + λ_stat E_statistical) + w2 E_light`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brdf::BrdfConfig;
use crate::error::{Error, Result};
use crate::imageio::ImageBuffer;
use crate::math::Vec3;
use crate::morphable::{FaceParameters, MorphableModel};
use crate::scene::{Camera, LightStage};
use crate::tracer::{render_with_bvh, Bvh, RenderConfig, RenderOutput, SceneRef};

/// Penalty per unit confidence for a landmark at or behind the camera.
pub const BEHIND_CAMERA_PENALTY: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    pub w1: f64,
    pub w2: f64,
    pub lambda_landmark: f64,
    pub lambda_statistical: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            w1: 1e-2,
            w2: 1e-3,
            lambda_landmark: 1.0,
            lambda_statistical: 1e-3,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("lambda_landmark", self.lambda_landmark),
            ("lambda_statistical", self.lambda_statistical),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// How the per-light reference `m_j` of the light regularizer is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerMode {
    /// `m_j` is the channel mean of `l_j`, penalizing color.
    #[default]
    GrayAnchor,
    /// `m_j` is the light's initial intensity, penalizing drift.
    FixedAnchor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LightRegularizer {
    GrayAnchor,
    FixedAnchor(Vec<[f64; 3]>),
}

impl LightRegularizer {
    /// Regularizer of `mode`, anchored at `initial` when fixed.
    pub fn new(mode: RegularizerMode, initial: &[[f64; 3]]) -> Self {
        match mode {
            RegularizerMode::GrayAnchor => LightRegularizer::GrayAnchor,
            RegularizerMode::FixedAnchor => LightRegularizer::FixedAnchor(initial.to_vec()),
        }
    }

    pub fn mode(&self) -> RegularizerMode {
        match self {
            LightRegularizer::GrayAnchor => RegularizerMode::GrayAnchor,
            LightRegularizer::FixedAnchor(_) => RegularizerMode::FixedAnchor,
        }
    }

    fn anchor(&self, j: usize, l: &[f64; 3]) -> [f64; 3] {
        match self {
            LightRegularizer::GrayAnchor => [l[0] + ((l[1] - l[0]) + (l[2] - l[0])) / 3.0; 3],
            LightRegularizer::FixedAnchor(a) => a[j],
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            LightRegularizer::FixedAnchor(a) if a.len() != n => Err(Error::invalid(format!(
                "{} light anchors for {n} lights",
                a.len()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub vertex: u32,
    /// Observed pixel position (x right, y down).
    pub position: [f64; 2],
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        for l in &self.entries {
            if l.vertex as usize >= vertex_count {
                return Err(Error::invalid(format!(
                    "landmark vertex {} out of range for {vertex_count} vertices",
                    l.vertex
                )));
            }
            if !(l.confidence >= 0.0) || !l.position.iter().all(|p| p.is_finite()) {
                return Err(Error::invalid(format!("landmark on vertex {} is not finite/non-negative", l.vertex)));
            }
        }
        Ok(())
    }

    /// Landmarks at the model's landmark vertices, projected from `params`.
    pub fn from_projection(model: &MorphableModel, params: &FaceParameters, camera: &Camera) -> Result<Self> {
        let verts = model.synthesize_geometry(&params.alpha, &params.beta)?;
        let entries = model
            .landmark_indices
            .iter()
            .map(|&i| {
                let p = params.pose.transform_point(&verts[i as usize]);
                Ok(Landmark {
                    vertex: i,
                    position: camera.project_point(&p)?,
                    confidence: 1.0,
                })
            })
            .collect::<Result<_>>()?;
        Ok(LandmarkSet { entries })
    }

    /// Text format: one `vertex_index x y confidence` per line; `#` comments.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io("reading landmarks", path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::format(path, format!("line {}: expected `vertex_index x y confidence`", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            entries.push(Landmark {
                vertex: f[0].parse().map_err(|_| bad())?,
                position: [f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?],
                confidence: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(LandmarkSet { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("# vertex_index x y confidence\n");
        for l in &self.entries {
            let _ = writeln!(out, "{} {} {} {}", l.vertex, l.position[0], l.position[1], l.confidence);
        }
        std::fs::write(path, out).map_err(|e| Error::io("writing landmarks", path, e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_data: f64,
    pub e_landmark: f64,
    pub e_statistical: f64,
    pub e_light: f64,
    pub total: f64,
}

/// Squared color distance of one pixel.
#[inline]
pub(crate) fn pixel_sq_err(p: &[f64; 3], t: &[f64; 3]) -> f64 {
    let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Sum of squared color differences over mask-true pixels, in row-major order.
pub fn e_data(rendered: &ImageBuffer, target: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    if !rendered.same_size(target) {
        return Err(Error::invalid(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    if mask.len() != rendered.pixels.len() {
        return Err(Error::invalid("mask size does not match the images"));
    }
    let mut sum = 0.0;
    for ((p, t), &m) in rendered.pixels.iter().zip(&target.pixels).zip(mask) {
        if m {
            sum += pixel_sq_err(p, t);
        }
    }
    Ok(sum)
}

/// Pixels that hit geometry and, when given, lie inside the matte.
pub fn data_mask(hit: &[bool], matte: Option<&[bool]>) -> Vec<bool> {
    match matte {
        Some(m) => hit.iter().zip(m).map(|(a, b)| *a && *b).collect(),
        None => hit.to_vec(),
    }
}

/// Shrinks a row-major `width`-wide mask: a pixel survives when every pixel
/// within Chebyshev distance `radius` is inside the image and set.
pub fn erode_mask(mask: &[bool], width: usize, radius: usize) -> Vec<bool> {
    if width == 0 || radius == 0 {
        return mask.to_vec();
    }
    let height = mask.len() / width;
    let r = radius as isize;
    (0..mask.len())
        .map(|i| {
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            (-r..=r).all(|dy| {
                (-r..=r).all(|dx| {
                    let (u, v) = (x + dx, y + dy);
                    u >= 0 && v >= 0 && (u as usize) < width && (v as usize) < height && mask[v as usize * width + u as usize]
                })
            })
        })
        .collect()
}

pub fn e_light(intensities: &[[f64; 3]], reg: &LightRegularizer) -> Result<f64> {
    reg.check(intensities.len())?;
    Ok(intensities
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let m = reg.anchor(j, l);
            (0..3).map(|c| (l[c] - m[c]).powi(2)).sum::<f64>()
        })
        .sum())
}

pub(crate) fn e_light_gradient(intensities: &[[f64; 3]], reg: &LightRegularizer) -> Vec<[f64; 3]> {
    // For the gray anchor the mean's own derivative cancels because the
    // residual sums to zero.
    intensities
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let m = reg.anchor(j, l);
            std::array::from_fn(|c| 2.0 * (l[c] - m[c]))
        })
        .collect()
}

pub fn e_statistical(model: &MorphableModel, params: &FaceParameters) -> f64 {
    let sq = |x: &[f64], s: &nalgebra::DVector<f64>| -> f64 { x.iter().zip(s.iter()).map(|(a, s)| (a / s).powi(2)).sum() };
    sq(&params.alpha, &model.identity_sigma) + sq(&params.beta, &model.expression_sigma) + sq(&params.delta, &model.albedo_sigma)
}

/// Gradient of the landmark term with respect to the posed landmark
/// vertices, as `(vertex, adjoint)` pairs, plus the term's value.
pub(crate) fn landmark_term(
    posed: &[Vec3],
    camera: &Camera,
    landmarks: &LandmarkSet,
) -> (f64, Vec<(usize, Vec3)>) {
    let mut e = 0.0;
    let mut adj = Vec::with_capacity(landmarks.len());
    for l in &landmarks.entries {
        let p = posed[l.vertex as usize];
        match camera.project_with_jacobian(&p) {
            Ok((px, [jx, jy])) => {
                let r = [px[0] - l.position[0], px[1] - l.position[1]];
                e += l.confidence * (r[0] * r[0] + r[1] * r[1]);
                adj.push((l.vertex as usize, (jx * r[0] + jy * r[1]) * (2.0 * l.confidence)));
            }
            Err(_) => {
                log::warn!("landmark on vertex {} is behind the camera", l.vertex);
                e += BEHIND_CAMERA_PENALTY * l.confidence;
            }
        }
    }
    (e, adj)
}

/// `(e_landmark, e_statistical)`.
pub fn e_prior(
    model: &MorphableModel,
    params: &FaceParameters,
    camera: &Camera,
    landmarks: &LandmarkSet,
) -> Result<(f64, f64)> {
    landmarks.validate(model.vertex_count())?;
    let verts = model.synthesize_geometry(&params.alpha, &params.beta)?;
    let posed: Vec<Vec3> = verts.iter().map(|v| params.pose.transform_point(v)).collect();
    let (e_lm, _) = landmark_term(&posed, camera, landmarks);
    Ok((e_lm, e_statistical(model, params)))
}

pub fn total_objective(
    e_data: f64,
    e_landmark: f64,
    e_statistical: f64,
    e_light: f64,
    weights: &ObjectiveWeights,
) -> Result<EnergyBreakdown> {
    for (name, v) in [
        ("e_data", e_data),
        ("e_landmark", e_landmark),
        ("e_statistical", e_statistical),
        ("e_light", e_light),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    let total = e_data
        + weights.w1 * (weights.lambda_landmark * e_landmark + weights.lambda_statistical * e_statistical)
        + weights.w2 * e_light;
    Ok(EnergyBreakdown {
        e_data,
        e_landmark,
        e_statistical,
        e_light,
        total,
    })
}

/// Everything that stays fixed while parameters are fitted.
#[derive(Clone, Debug)]
pub struct Objective {
    pub model: MorphableModel,
    /// Light geometry; intensities come from the parameters.
    pub stage: LightStage,
    pub camera: Camera,
    pub brdf: BrdfConfig,
    pub target: ImageBuffer,
    pub matte: Option<Vec<bool>>,
    pub landmarks: LandmarkSet,
    pub weights: ObjectiveWeights,
    pub regularizer: LightRegularizer,
}

/// Forward evaluation of one parameter state.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub energy: EnergyBreakdown,
    pub render: RenderOutput,
    pub mask: Vec<bool>,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.camera.validate()?;
        self.brdf.validate()?;
        self.weights.validate()?;
        self.landmarks.validate(self.model.vertex_count())?;
        self.regularizer.check(self.stage.len())?;
        if self.target.width != self.camera.width || self.target.height != self.camera.height {
            return Err(Error::invalid(format!(
                "target is {}x{} but the camera renders {}x{}",
                self.target.width, self.target.height, self.camera.width, self.camera.height
            )));
        }
        if let Some(m) = &self.matte {
            if m.len() != self.target.pixels.len() {
                return Err(Error::invalid("matte size does not match the target"));
            }
        }
        Ok(())
    }

    pub fn lit_stage(&self, params: &FaceParameters) -> Result<LightStage> {
        self.stage.with_intensities(&params.light_intensities)
    }

    /// Renders `params` and evaluates every term.
    pub fn evaluate(&self, params: &FaceParameters, rcfg: &RenderConfig) -> Result<Evaluation> {
        params.check_dims(&self.model, self.stage.len())?;
        let mesh = self.model.posed_mesh(params)?;
        let stage = self.lit_stage(params)?;
        let bvh = Bvh::build(&mesh);
        let render = render_with_bvh(
            &SceneRef {
                mesh: &mesh,
                bvh: &bvh,
                stage: &stage,
                brdf: &self.brdf,
                spec: &params.spec_map,
                camera: &self.camera,
            },
            rcfg,
        )?;
        let mask = data_mask(&render.hit_mask(), self.matte.as_deref());
        let ed = e_data(&render.image, &self.target, &mask)?;
        let (el, es) = e_prior(&self.model, params, &self.camera, &self.landmarks)?;
        let eli = e_light(&params.light_intensities, &self.regularizer)?;
        let energy = total_objective(ed, el, es, eli, &self.weights)?;
        Ok(Evaluation { energy, render, mask })
    }
}

/// One optimizer iteration in the energy trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: String,
    pub energy: EnergyBreakdown,
    /// Objective before the step, under the same iteration seed.
    pub total_before: f64,
    pub accepted: bool,
}

pub const TRACE_HEADER: &str = "iteration,stage,e_data,e_landmark,e_statistical,e_light,total";

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let e = &r.energy;
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.iteration, r.stage, e.e_data, e.e_landmark, e.e_statistical, e.e_light, e.total
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io("writing trace", path, e))
}
