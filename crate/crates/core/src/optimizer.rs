//! Sequential multi-stage fitting, relighting and expression editing.
//!
//! Each stage runs RMSProp-style steps (per-coordinate scaling by the running
//! RMS of gradients, bias corrected) on its active blocks. Every iteration
//! renders with a fresh seed derived from the run seed; a step is kept only
//! if the objective under that same seed does not grow by more than
//! [`STEP_TOLERANCE`], otherwise the step sizes of the active blocks are
//! halved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brdf::{BrdfConfig, SpecularMap};
use crate::energy::{EnergyBreakdown, Objective, ObjectiveWeights, RegularizerMode, TraceRow};
use crate::error::{Error, Result};
use crate::grad::{objective_with_gradient, render_state, ActiveSet, ParamGradient};
use crate::imageio::ImageBuffer;
use crate::math::{rotation_jacobian, rotation_log, rotation_matrix, skew, Mat3, Vec3};
use crate::morphable::{FaceParameters, MorphableModel};
use crate::scene::{Camera, LightStage, PoseTransform};
use crate::tracer::{derive_seed, render, RenderConfig, RenderOutput};

/// Largest accepted objective increase per step.
pub const STEP_TOLERANCE: f64 = 1e-6;

/// Step-size growth after an accepted step, up to the stage's configured size.
pub const STEP_GROWTH: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub rotation: f64,
    pub translation: f64,
    pub spec_map: f64,
    pub lights: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes {
            alpha: 0.05,
            beta: 0.05,
            delta: 0.03,
            rotation: 0.004,
            translation: 0.004,
            spec_map: 0.05,
            lights: 0.01,
        }
    }
}

impl StepSizes {
    fn scale_capped(&mut self, active: &ActiveSet, cap: &StepSizes, f: impl Fn(f64) -> f64) {
        let upd = |on: bool, x: &mut f64, c: f64| {
            if on {
                *x = f(*x).min(c);
            }
        };
        upd(active.alpha, &mut self.alpha, cap.alpha);
        upd(active.beta, &mut self.beta, cap.beta);
        upd(active.delta, &mut self.delta, cap.delta);
        upd(active.pose, &mut self.rotation, cap.rotation);
        upd(active.pose, &mut self.translation, cap.translation);
        upd(active.spec_map, &mut self.spec_map, cap.spec_map);
        upd(active.lights, &mut self.lights, cap.lights);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub active: ActiveSet,
    pub iterations: usize,
    #[serde(default)]
    pub steps: StepSizes,
    /// Samples per light for this stage; the base render config otherwise.
    #[serde(default)]
    pub spp: Option<u32>,
    /// Objective weights for this stage; the problem's weights otherwise.
    #[serde(default)]
    pub weights: Option<ObjectiveWeights>,
}

impl StageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid(format!("stage {}: iterations must be at least 1", self.name)));
        }
        if !self.active.any() {
            return Err(Error::invalid(format!("stage {}: no active parameter block", self.name)));
        }
        Ok(())
    }
}

/// The default stage sequence: pose from landmarks, identity, expression,
/// albedo with lights, specular map, then everything jointly.
pub fn default_stages() -> Vec<StageSpec> {
    let only = |f: fn(&mut ActiveSet)| {
        let mut a = ActiveSet::NONE;
        f(&mut a);
        a
    };
    let landmark_weights = Some(ObjectiveWeights {
        w1: 1.0,
        ..ObjectiveWeights::default()
    });
    let stage = |name: &str, active, iterations, spp, weights| StageSpec {
        name: name.into(),
        active,
        iterations,
        steps: StepSizes::default(),
        spp: Some(spp),
        weights,
    };
    vec![
        stage("S1-pose", only(|a| a.pose = true), 100, 4, landmark_weights),
        stage("S2-identity", only(|a| a.alpha = true), 60, 4, landmark_weights),
        stage("S3-expression", only(|a| a.beta = true), 40, 4, landmark_weights),
        stage(
            "S4-albedo-lights",
            only(|a| {
                a.delta = true;
                a.lights = true;
            }),
            40,
            16,
            None,
        ),
        stage("S5-specular", only(|a| a.spec_map = true), 20, 16, None),
        StageSpec {
            steps: StepSizes {
                alpha: 0.02,
                beta: 0.02,
                delta: 0.01,
                spec_map: 0.02,
                lights: 0.005,
                ..StepSizes::default()
            },
            ..stage("S6-joint", ActiveSet::ALL, 150, 32, landmark_weights)
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub seed: u64,
    pub decay: f64,
    pub epsilon: f64,
    /// Averaging factor of the gradient itself; 0 scales the raw gradient.
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            seed: 0,
            decay: 0.9,
            epsilon: 1e-8,
            momentum: 0.9,
        }
    }
}

/// Pose coordinates used for steps: a rotation `ω` applied on the left about
/// the posed pivot, and a world translation `τ`. Rotating about a point on
/// the face rather than the model origin decouples pitch and yaw from
/// translation.
#[derive(Clone, Copy, Debug)]
struct PoseFrame {
    pivot: Vec3,
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `J` with `∂R/∂r_m · Rᵀ = [J e_m]×`.
fn left_jacobian(r: &Vec3) -> Mat3 {
    let rt = rotation_matrix(r).transpose();
    let d = rotation_jacobian(r);
    Mat3::from_columns(&[vee(&(d[0] * rt)), vee(&(d[1] * rt)), vee(&(d[2] * rt))])
}

impl PoseFrame {
    fn new(model: &MorphableModel) -> Self {
        let v = &model.mean_vertices;
        let point = |i: usize| Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        let ids: Vec<usize> = if model.landmark_indices.is_empty() {
            (0..v.len() / 3).collect()
        } else {
            model.landmark_indices.iter().map(|&i| i as usize).collect()
        };
        let pivot = ids.iter().map(|&i| point(i)).sum::<Vec3>() / ids.len() as f64;
        PoseFrame { pivot }
    }

    /// Gradient with respect to `(ω, τ)` from the gradient with respect to
    /// the stored `(r, t)`.
    fn local_gradient(&self, pose: &PoseTransform, g: &[f64]) -> [f64; 6] {
        let r = pose.rotation_vector();
        let gr = Vec3::new(g[0], g[1], g[2]);
        let gt = Vec3::new(g[3], g[4], g[5]);
        let jinv_t = left_jacobian(&r).try_inverse().unwrap_or_else(Mat3::identity).transpose();
        let rc = pose.matrix() * self.pivot;
        let gw = jinv_t * gr - skew(&rc) * gt;
        [gw.x, gw.y, gw.z, gt.x, gt.y, gt.z]
    }

    fn step(&self, pose: &PoseTransform, dw: Vec3, dt: Vec3) -> PoseTransform {
        let r = pose.matrix();
        let t = pose.translation_vector();
        let c = r * self.pivot + t;
        let q = rotation_matrix(&dw);
        PoseTransform::new(rotation_log(&(q * r)), q * (t - c) + c + dt)
    }
}

/// Running optimizer state carried across iterations of one stage.
struct Rms {
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
    steps: i32,
}

impl Rms {
    /// Folds in a gradient and returns the bias-corrected step direction
    /// `m̂ / (sqrt(v̂) + ε)`.
    fn update(&mut self, g: &[f64], opt: &OptimizerConfig) -> Vec<f64> {
        if self.mean_sq.is_empty() {
            self.mean = vec![0.0; g.len()];
            self.mean_sq = vec![0.0; g.len()];
        }
        self.steps += 1;
        let mu = opt.momentum;
        let cm = 1.0 - mu.powi(self.steps);
        let cv = 1.0 - opt.decay.powi(self.steps);
        let mut dir = Vec::with_capacity(g.len());
        for ((m, v), x) in self.mean.iter_mut().zip(self.mean_sq.iter_mut()).zip(g) {
            *m = mu * *m + (1.0 - mu) * x;
            *v = opt.decay * *v + (1.0 - opt.decay) * x * x;
            dir.push((*m / cm) / ((*v / cv).sqrt() + opt.epsilon));
        }
        dir
    }
}

fn flatten(g: &ParamGradient) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend(&g.d_alpha);
    v.extend(&g.d_beta);
    v.extend(&g.d_delta);
    v.extend(g.d_pose);
    v.extend(&g.d_spec_map);
    v.extend(g.d_lights.iter().flatten());
    v
}

/// Moves the active blocks by `-step ⊙ direction`; lights are clamped at 0.
fn apply_step(
    params: &FaceParameters,
    scaled: &[f64],
    steps: &StepSizes,
    active: &ActiveSet,
    frame: &PoseFrame,
) -> Result<FaceParameters> {
    let mut p = params.clone();
    let mut k = 0;
    let mut take = |n: usize| {
        let s = &scaled[k..k + n];
        k += n;
        s.to_vec()
    };
    let da = take(p.alpha.len());
    let db = take(p.beta.len());
    let dd = take(p.delta.len());
    let dp = take(6);
    let ds = take(p.spec_map.raw().len());
    let dl = take(3 * p.light_intensities.len());
    if active.alpha {
        for (x, d) in p.alpha.iter_mut().zip(&da) {
            *x -= steps.alpha * d;
        }
    }
    if active.beta {
        for (x, d) in p.beta.iter_mut().zip(&db) {
            *x -= steps.beta * d;
        }
    }
    if active.delta {
        for (x, d) in p.delta.iter_mut().zip(&dd) {
            *x -= steps.delta * d;
        }
    }
    if active.pose {
        let dw = -steps.rotation * Vec3::new(dp[0], dp[1], dp[2]);
        let dt = -steps.translation * Vec3::new(dp[3], dp[4], dp[5]);
        p.pose = frame.step(&p.pose, dw, dt);
    }
    if active.spec_map {
        let raw: Vec<f64> = p.spec_map.raw().iter().zip(&ds).map(|(r, d)| r - steps.spec_map * d).collect();
        p.spec_map = SpecularMap::from_raw(p.spec_map.size(), raw)?;
    }
    if active.lights {
        for (l, d) in p.light_intensities.iter_mut().flatten().zip(&dl) {
            *l = (*l - steps.lights * d).max(0.0);
        }
    }
    Ok(p)
}

/// Outcome of one stage.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub params: FaceParameters,
    pub trace: Vec<TraceRow>,
    /// Set when the stage stopped early on a numerical failure.
    pub error: Option<String>,
}

/// Runs one stage from `params`. `first_iteration` numbers the iterations
/// globally, which also selects their render seeds.
pub fn run_stage(
    obj: &Objective,
    params: &FaceParameters,
    stage: &StageSpec,
    base_rcfg: &RenderConfig,
    opt: &OptimizerConfig,
    first_iteration: usize,
) -> Result<StageOutcome> {
    stage.validate()?;
    let mut obj_stage;
    let obj = match stage.weights {
        Some(w) => {
            obj_stage = obj.clone();
            obj_stage.weights = w;
            &obj_stage
        }
        None => obj,
    };
    let mut p = params.clone();
    let frame = PoseFrame::new(&obj.model);
    let mut steps = stage.steps;
    let mut rms = Rms {
        mean: Vec::new(),
        mean_sq: Vec::new(),
        steps: 0,
    };
    let mut trace = Vec::with_capacity(stage.iterations);
    for it in 0..stage.iterations {
        let iteration = first_iteration + it;
        let rcfg = RenderConfig {
            spp: stage.spp.unwrap_or(base_rcfg.spp),
            seed: derive_seed(opt.seed, iteration as u64),
            ..*base_rcfg
        };
        let step = (|| -> Result<(FaceParameters, EnergyBreakdown, f64, bool)> {
            let g = objective_with_gradient(obj, &p, &stage.active, &rcfg)?;
            let mut gf = flatten(&g);
            let k = p.alpha.len() + p.beta.len() + p.delta.len();
            let local = frame.local_gradient(&p.pose, &gf[k..k + 6]);
            gf[k..k + 6].copy_from_slice(&local);
            let dir = rms.update(&gf, opt);
            let candidate = apply_step(&p, &dir, &steps, &stage.active, &frame)?;
            let after = obj.evaluate(&candidate, &rcfg)?.energy;
            let before = g.energy.total;
            if after.total <= before + STEP_TOLERANCE {
                Ok((candidate, after, before, true))
            } else {
                Ok((p.clone(), g.energy, before, false))
            }
        })();
        match step {
            Ok((next, energy, before, accepted)) => {
                if accepted {
                    steps.scale_capped(&stage.active, &stage.steps, |x| x * STEP_GROWTH);
                } else {
                    steps.scale_capped(&stage.active, &stage.steps, |x| x * 0.5);
                }
                log::debug!(
                    "{} iter {iteration}: total {:.6e} -> {:.6e} ({})",
                    stage.name,
                    before,
                    energy.total,
                    if accepted { "accepted" } else { "rejected" }
                );
                p = next;
                trace.push(TraceRow {
                    iteration,
                    stage: stage.name.clone(),
                    energy,
                    total_before: before,
                    accepted,
                });
            }
            Err(e) if e.is_numerical() => {
                log::error!("{} aborted at iteration {iteration}: {e}", stage.name);
                return Ok(StageOutcome {
                    params: p,
                    trace,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(StageOutcome {
        params: p,
        trace,
        error: None,
    })
}

/// Settings echoed into the fit result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitEcho {
    pub seed: u64,
    pub weights: ObjectiveWeights,
    pub regularizer: RegularizerMode,
    pub stages: Vec<StageSpec>,
    pub render: RenderConfig,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: FaceParameters,
    pub trace: Vec<TraceRow>,
    pub initial_render: ImageBuffer,
    pub final_render: ImageBuffer,
    pub config: FitEcho,
    /// Numerical failure that ended the fit early, if any.
    pub error: Option<String>,
}

/// Runs `stages` in order from `init`. Pose-only stages are skipped (with a
/// warning) when the objective has no landmarks. Initial and final renders
/// use `rcfg` as given.
pub fn fit(
    obj: &Objective,
    init: &FaceParameters,
    stages: &[StageSpec],
    rcfg: &RenderConfig,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    obj.validate()?;
    init.check_dims(&obj.model, obj.stage.len())?;
    for s in stages {
        s.validate()?;
    }
    let initial_render = render_state(obj, init, rcfg)?.image;
    let mut params = init.clone();
    let mut trace = Vec::new();
    let mut error = None;
    let mut iteration = 0;
    for stage in stages {
        let pose_only = stage.active == ActiveSet { pose: true, ..ActiveSet::NONE };
        if pose_only && obj.landmarks.is_empty() {
            log::warn!("no landmarks: skipping stage {}", stage.name);
            continue;
        }
        log::info!("stage {} ({} iterations)", stage.name, stage.iterations);
        let out = run_stage(obj, &params, stage, rcfg, opt, iteration)?;
        iteration += stage.iterations;
        params = out.params;
        trace.extend(out.trace);
        if out.error.is_some() {
            error = out.error;
            break;
        }
    }
    let final_render = render_state(obj, &params, rcfg)?.image;
    Ok(FitResult {
        params,
        trace,
        initial_render,
        final_render,
        config: FitEcho {
            seed: opt.seed,
            weights: obj.weights,
            regularizer: obj.regularizer.mode(),
            stages: stages.to_vec(),
            render: *rcfg,
        },
        error,
    })
}

/// Renders fitted parameters under another stage (intensities taken from
/// `stage`).
pub fn relight(
    model: &MorphableModel,
    fitted: &FaceParameters,
    stage: &LightStage,
    brdf: &BrdfConfig,
    camera: &Camera,
    rcfg: &RenderConfig,
) -> Result<RenderOutput> {
    let mesh = model.posed_mesh(fitted)?;
    render(&mesh, stage, brdf, &fitted.spec_map, camera, rcfg)
}

/// Renders fitted parameters with a new expression under the fitted lights
/// placed on `stage`.
pub fn edit_expression(
    model: &MorphableModel,
    fitted: &FaceParameters,
    beta: &[f64],
    stage: &LightStage,
    brdf: &BrdfConfig,
    camera: &Camera,
    rcfg: &RenderConfig,
) -> Result<RenderOutput> {
    if beta.len() != fitted.beta.len() {
        return Err(Error::invalid(format!(
            "beta has {} entries, model expects {}",
            beta.len(),
            fitted.beta.len()
        )));
    }
    let edited = FaceParameters {
        beta: beta.to_vec(),
        ..fitted.clone()
    };
    let lit = stage.with_intensities(&fitted.light_intensities)?;
    relight(model, &edited, &lit, brdf, camera, rcfg)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRef {
    size: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    delta: Vec<f64>,
    pose: PoseTransform,
    light_intensities: Vec<[f64; 3]>,
    spec_map: SpecRef,
}

/// Sidecar path for the specular grid of a parameter dump.
pub fn spec_sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("spec.f64")
}

/// Writes a JSON dump plus a little-endian f64 sidecar holding the raw
/// specular grid (row-major).
pub fn save_params(path: impl AsRef<Path>, params: &FaceParameters) -> Result<()> {
    let path = path.as_ref();
    let sidecar = spec_sidecar_path(path);
    let file = ParamsFile {
        alpha: params.alpha.clone(),
        beta: params.beta.clone(),
        delta: params.delta.clone(),
        pose: params.pose,
        light_intensities: params.light_intensities.clone(),
        spec_map: SpecRef {
            size: params.spec_map.size(),
            file: sidecar
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::invalid("parameter path has no file name"))?
                .to_string(),
        },
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io("writing parameters", path, e))?;
    let bytes: Vec<u8> = params.spec_map.raw().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(&sidecar, bytes).map_err(|e| Error::io("writing specular grid", &sidecar, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<FaceParameters> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("reading parameters", path, e))?;
    let file: ParamsFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let sidecar = path.with_file_name(&file.spec_map.file);
    let bytes = std::fs::read(&sidecar).map_err(|e| Error::io("reading specular grid", &sidecar, e))?;
    let n = file.spec_map.size * file.spec_map.size;
    if bytes.len() != 8 * n {
        return Err(Error::format(&sidecar, format!("expected {} bytes, found {}", 8 * n, bytes.len())));
    }
    let raw = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Ok(FaceParameters {
        alpha: file.alpha,
        beta: file.beta,
        delta: file.delta,
        pose: file.pose,
        light_intensities: file.light_intensities,
        spec_map: SpecularMap::from_raw(file.spec_map.size, raw).map_err(|e| Error::format(&sidecar, e.to_string()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SceneSpec, SyntheticScene};

    fn small_scene() -> SyntheticScene {
        SyntheticScene::build(&SceneSpec {
            width: 16,
            height: 16,
            level: 2,
            stage: crate::synthetic::StageConfig {
                n: 6,
                ..Default::default()
            },
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn params_round_trip_losslessly() {
        let scene = small_scene();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let mut p = scene.truth.clone();
        p.pose = PoseTransform::new([0.1, -0.2, 1e-17].into(), [0.3, 1.0 / 3.0, -0.05].into());
        save_params(&path, &p).unwrap();
        assert!(spec_sidecar_path(&path).exists());
        assert_eq!(load_params(&path).unwrap(), p);
    }

    #[test]
    fn pivoted_pose_gradient_matches_finite_differences() {
        let frame = PoseFrame {
            pivot: Vec3::new(0.1, -0.2, 0.8),
        };
        let pose = PoseTransform::new(Vec3::new(0.3, -0.2, 0.1), Vec3::new(0.05, 0.1, -0.3));
        let pts = [Vec3::new(0.2, 0.4, 1.0), Vec3::new(-0.5, 0.1, 0.3), Vec3::new(0.0, -0.7, 0.6)];
        let dirs = [Vec3::new(1.0, -2.0, 0.5), Vec3::new(0.3, 0.7, -1.1), Vec3::new(-0.4, 0.2, 0.9)];
        let f = |p: &PoseTransform| -> f64 {
            pts.iter().zip(&dirs).map(|(x, d)| (p.transform_point(x).dot(d)).powi(2)).sum()
        };
        let h = 1e-6;
        let a = pose.to_array();
        let g: Vec<f64> = (0..6)
            .map(|i| {
                let (mut u, mut v) = (a, a);
                u[i] += h;
                v[i] -= h;
                (f(&PoseTransform::from_array(u)) - f(&PoseTransform::from_array(v))) / (2.0 * h)
            })
            .collect();
        let local = frame.local_gradient(&pose, &g);
        for i in 0..6 {
            let e = Vec3::ith(i % 3, h);
            let (zero, plus, minus) = (Vec3::zeros(), e, -e);
            let (up, down) = if i < 3 {
                (frame.step(&pose, plus, zero), frame.step(&pose, minus, zero))
            } else {
                (frame.step(&pose, zero, plus), frame.step(&pose, zero, minus))
            };
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert!((fd - local[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", local[i]);
        }
        assert_eq!(frame.step(&pose, Vec3::zeros(), Vec3::zeros()).to_array().map(|x| (x * 1e12).round()), a.map(|x| (x * 1e12).round()));
    }

    #[test]
    fn zero_iteration_stage_is_rejected() {
        let mut s = default_stages()[0].clone();
        s.iterations = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn stage_leaves_inactive_blocks_untouched_and_descends() {
        let scene = small_scene();
        let rcfg = RenderConfig { spp: 4, seed: 9, ..Default::default() };
        let (obj, _) = scene.objective(&scene.truth, &rcfg, ObjectiveWeights::default()).unwrap();
        let mut init = scene.truth.clone();
        init.beta.iter_mut().for_each(|b| *b += 0.5);
        let stage = StageSpec {
            name: "beta".into(),
            active: ActiveSet { beta: true, ..ActiveSet::NONE },
            iterations: 5,
            steps: StepSizes::default(),
            spp: None,
            weights: None,
        };
        let out = run_stage(&obj, &init, &stage, &rcfg, &OptimizerConfig::default(), 0).unwrap();
        assert_eq!(out.params.alpha, init.alpha);
        assert_eq!(out.params.delta, init.delta);
        assert_eq!(out.params.pose, init.pose);
        assert_eq!(out.params.spec_map, init.spec_map);
        assert_eq!(out.params.light_intensities, init.light_intensities);
        assert_eq!(out.trace.len(), 5);
        for r in &out.trace {
            if r.accepted {
                assert!(r.energy.total <= r.total_before + STEP_TOLERANCE);
            }
        }
    }

    #[test]
    fn ground_truth_is_a_fixed_point_of_the_data_term() {
        let scene = small_scene();
        let rcfg = RenderConfig { spp: 4, seed: 0, ..Default::default() };
        let (obj, _) = scene.objective(&scene.truth, &rcfg, ObjectiveWeights::default()).unwrap();
        let g = objective_with_gradient(&obj, &scene.truth, &ActiveSet::ALL, &rcfg).unwrap();
        assert_eq!(g.energy.e_data, 0.0);
        assert_eq!(g.energy.e_landmark, 0.0);
    }

    #[test]
    fn relight_and_edit_identities() {
        let scene = small_scene();
        let rcfg = RenderConfig { spp: 4, seed: 5, ..Default::default() };
        let lit = scene.stage.with_intensities(&scene.truth.light_intensities).unwrap();
        let a = relight(&scene.model, &scene.truth, &lit, &scene.brdf, &scene.camera, &rcfg).unwrap();
        let b = edit_expression(&scene.model, &scene.truth, &scene.truth.beta, &scene.stage, &scene.brdf, &scene.camera, &rcfg)
            .unwrap();
        assert_eq!(a, b);
        let dark = scene.stage.with_intensities(&vec![[0.0; 3]; scene.stage.len()]).unwrap();
        let black = relight(&scene.model, &scene.truth, &dark, &scene.brdf, &scene.camera, &rcfg).unwrap();
        assert!(black.image.pixels.iter().flatten().all(|&v| v == 0.0));
        assert!(edit_expression(&scene.model, &scene.truth, &[0.0], &scene.stage, &scene.brdf, &scene.camera, &rcfg).is_err());
    }
}
