//! Declarative run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brdf::BrdfConfig;
use crate::energy::{ObjectiveWeights, RegularizerMode};
use crate::error::{Error, Result};
use crate::morphable::{generate_synthetic_model, ModelDims, MorphableModel};
use crate::optimizer::{default_stages, OptimizerConfig, StageSpec};
use crate::scene::{Camera, LightStage, DEFAULT_LIGHT_INTENSITY};
use crate::synthetic::{SceneSpec, StageConfig};
use crate::tracer::RenderConfig;

/// Model source: a saved model file when `path` is set, else the synthetic
/// generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub level: u32,
    pub dims: ModelDims,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = SceneSpec::default();
        ModelConfig {
            path: None,
            seed: s.seed,
            level: s.level,
            dims: s.dims,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { width: 64, height: 64 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Target image (PFM or PNG) for `fit`.
    pub target: Option<PathBuf>,
    /// Gray PNG; pixels above one half are fitted.
    pub matte: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    /// Parameter dump used as the fit initialization and by render, relight
    /// and edit.
    pub params: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub regularizer: RegularizerMode,
    /// Erosion radius in pixels applied to the matte before fitting.
    pub matte_erosion: usize,
    /// Intensity of every light when no parameter dump supplies them.
    pub light_intensity: f64,
    pub model: ModelConfig,
    pub camera: CameraConfig,
    pub stage: StageConfig,
    pub brdf: BrdfConfig,
    pub weights: ObjectiveWeights,
    pub render: RenderConfig,
    pub optimizer: OptimizerConfig,
    pub paths: PathsConfig,
    pub stages: Vec<StageSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            regularizer: RegularizerMode::default(),
            matte_erosion: 0,
            light_intensity: DEFAULT_LIGHT_INTENSITY,
            model: ModelConfig::default(),
            camera: CameraConfig::default(),
            stage: StageConfig::default(),
            brdf: BrdfConfig::default(),
            weights: ObjectiveWeights::default(),
            render: RenderConfig::default(),
            optimizer: OptimizerConfig::default(),
            paths: PathsConfig::default(),
            stages: default_stages(),
        }
    }
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io("reading config", path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.model.path);
        fix(&mut self.paths.target);
        fix(&mut self.paths.matte);
        fix(&mut self.paths.landmarks);
        fix(&mut self.paths.params);
        fix(&mut self.paths.out);
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, e: Error| Error::Config(format!("{k}: {e}"));
        self.brdf.validate().map_err(|e| key("brdf", e))?;
        self.weights.validate().map_err(|e| key("weights", e))?;
        self.render.validate().map_err(|e| key("render", e))?;
        if self.camera.width == 0 || self.camera.height == 0 {
            return Err(Error::Config("camera: width and height must be at least 1".into()));
        }
        if self.stage.n == 0 {
            return Err(Error::Config("stage.n: at least one light is required".into()));
        }
        if !(self.light_intensity >= 0.0 && self.light_intensity.is_finite()) {
            return Err(Error::Config("light_intensity: must be finite and >= 0".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate().map_err(|e| key(&format!("stages[{i}] ({})", s.name), e))?;
        }
        for (k, p) in [
            ("model.path", &self.model.path),
            ("paths.target", &self.paths.target),
            ("paths.matte", &self.paths.matte),
            ("paths.landmarks", &self.paths.landmarks),
            ("paths.params", &self.paths.params),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{k}: no such file {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            seed: self.model.seed,
            level: self.model.level,
            dims: self.model.dims,
            width: self.camera.width,
            height: self.camera.height,
            stage: self.stage.clone(),
            matte_erosion: self.matte_erosion,
        }
    }

    pub fn load_model(&self) -> Result<MorphableModel> {
        match &self.model.path {
            Some(p) => MorphableModel::load(p),
            None => generate_synthetic_model(self.model.seed, self.model.level, self.model.dims),
        }
    }

    pub fn build_camera(&self) -> Result<Camera> {
        Camera::facing(1.0, self.camera.width, self.camera.height)
    }

    pub fn build_stage(&self) -> Result<LightStage> {
        self.stage.build(self.light_intensity)
    }
}
