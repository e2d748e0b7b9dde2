//! Command-line driver: subcommands over a [`RunConfig`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::energy::{erode_mask, write_trace_csv, LandmarkSet, LightRegularizer, Objective};
use crate::error::{Error, Result};
use crate::grad::{compare_gradients, finite_difference_gradient, objective_with_gradient, ActiveSet, FdSteps};
use crate::imageio::{envmap_from_stage, load_image, read_gray_png, save_image, write_gray_png, ImageBuffer};
use crate::morphable::{FaceParameters, MorphableModel};
use crate::optimizer::{edit_expression, fit, load_params, relight, save_params, FitEcho};
use crate::scene::write_obj;
use crate::synthetic::{gradcheck_state, SyntheticScene};
use crate::tracer::{render, RenderConfig, RenderOutput};

/// Environment variable overriding the output directory (below `--out`).
pub const OUT_DIR_ENV: &str = "LIGHTSTAGE_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lightstage", version, about = "Face fitting and relighting with a differentiable ray tracer")]
pub struct Cli {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Monte-Carlo seed of renders and of the optimizer.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; falls back to $LIGHTSTAGE_OUT, then paths.out, then ./out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic model with its ground-truth parameters.
    SynthModel,
    /// Render a parameter dump (the synthetic ground truth by default).
    Render {
        /// Parameter dump; overrides paths.params. Without either, the synthetic truth.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Samples per light per pixel; overrides render.spp.
        #[arg(long)]
        spp: Option<u32>,
        /// Light intensities, one `r g b` (or gray) line per light.
        #[arg(long)]
        lights: Option<PathBuf>,
        /// Also write the projected landmarks of the rendered state.
        #[arg(long)]
        emit_landmarks: bool,
    },
    /// Fit all parameter blocks to a target image.
    Fit {
        /// Target image; overrides paths.target.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Initialization; overrides paths.params.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Samples per light per pixel; overrides render.spp.
        #[arg(long)]
        spp: Option<u32>,
    },
    /// Render fitted parameters under new light intensities.
    Relight {
        /// Parameter dump; overrides paths.params.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Light intensities, one `r g b` (or gray) line per light.
        #[arg(long)]
        lights: PathBuf,
        /// Samples per light per pixel; overrides render.spp.
        #[arg(long)]
        spp: Option<u32>,
    },
    /// Render fitted parameters with a new expression vector.
    Edit {
        /// Parameter dump; overrides paths.params.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Expression coefficients, whitespace separated.
        #[arg(long)]
        beta: PathBuf,
        /// Samples per light per pixel; overrides render.spp.
        #[arg(long)]
        spp: Option<u32>,
    },
    /// Compare analytic gradients with finite differences on the synthetic scene.
    Gradcheck {
        /// Samples per light per pixel [default: 128].
        #[arg(long)]
        spp: Option<u32>,
        /// Image side in pixels.
        #[arg(long, default_value_t = 16)]
        size: u32,
    },
    /// Latitude-longitude image of the light stage.
    Envmap {
        /// Parameter dump; overrides paths.params.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Light intensities, one `r g b` (or gray) line per light.
        #[arg(long)]
        lights: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
    },
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let defaults = RunConfig::default().to_toml().unwrap_or_default();
    let cmd = Cli::command().after_long_help(format!("Default configuration:\n\n{defaults}"));
    let cli = match cmd.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.render.seed = seed;
        cfg.optimizer.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io("creating output directory", &out, e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg, &out))
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &Path) -> Result<i32> {
    match command {
        Command::SynthModel => synth_model(cfg, out),
        Command::Render {
            params,
            spp,
            lights,
            emit_landmarks,
        } => render_cmd(cfg, out, params.as_deref(), *spp, lights.as_deref(), *emit_landmarks),
        Command::Fit { target, params, spp } => fit_cmd(cfg, out, target.as_deref(), params.as_deref(), *spp),
        Command::Relight { params, lights, spp } => {
            let (model, fitted) = fitted_state(cfg, params.as_deref())?;
            let stage = cfg.build_stage()?.with_intensities(&read_lights(lights)?)?;
            let r = relight(&model, &fitted, &stage, &cfg.brdf, &cfg.build_camera()?, &with_spp(cfg, *spp))?;
            write_render(out, "relight", &r.image)?;
            Ok(EXIT_OK)
        }
        Command::Edit { params, beta, spp } => {
            let (model, fitted) = fitted_state(cfg, params.as_deref())?;
            let beta = read_numbers(beta, "expression coefficients")?;
            let r = edit_expression(&model, &fitted, &beta, &cfg.build_stage()?, &cfg.brdf, &cfg.build_camera()?, &with_spp(cfg, *spp))?;
            write_render(out, "edit", &r.image)?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { spp, size } => gradcheck_cmd(cfg, out, *spp, *size),
        Command::Envmap {
            params,
            lights,
            width,
            height,
        } => {
            let mut stage = cfg.build_stage()?;
            if let Some(p) = params.as_deref().or(cfg.paths.params.as_deref()) {
                stage = stage.with_intensities(&load_params(p)?.light_intensities)?;
            }
            if let Some(l) = lights {
                stage = stage.with_intensities(&read_lights(l)?)?;
            }
            let image = envmap_from_stage(&stage, *width, *height)?;
            write_render(out, "envmap", &image)?;
            Ok(EXIT_OK)
        }
    }
}

fn with_spp(cfg: &RunConfig, spp: Option<u32>) -> RenderConfig {
    RenderConfig {
        spp: spp.unwrap_or(cfg.render.spp),
        ..cfg.render
    }
}

fn write_render(out: &Path, name: &str, image: &ImageBuffer) -> Result<()> {
    save_image(out.join(format!("{name}.pfm")), image)?;
    save_image(out.join(format!("{name}.png")), image)?;
    log::info!("wrote {}", out.join(format!("{name}.pfm")).display());
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io("writing report", path, e))
}

/// Whitespace-separated numbers; `#` starts a comment.
pub fn read_numbers(path: &Path, what: &'static str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(what, path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split('#').next().unwrap_or("").split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: `{tok}` is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("line {}: non-finite value", i + 1)));
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// One light per non-empty line: `r g b`, or a single gray value.
pub fn read_lights(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("reading lights", path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected `r g b` or one gray value >= 0", i + 1));
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(bad());
        }
        out.push(match v.len() {
            1 => [v[0]; 3],
            3 => [v[0], v[1], v[2]],
            _ => return Err(bad()),
        });
    }
    Ok(out)
}

pub fn write_lights(path: &Path, lights: &[[f64; 3]]) -> Result<()> {
    let text: String = lights.iter().map(|l| format!("{} {} {}\n", l[0], l[1], l[2])).collect();
    std::fs::write(path, text).map_err(|e| Error::io("writing lights", path, e))
}

fn synthetic_scene(cfg: &RunConfig) -> Result<SyntheticScene> {
    if cfg.model.path.is_some() {
        return Err(Error::Config(
            "model.path: this command needs the synthetic model (remove model.path)".into(),
        ));
    }
    let mut scene = SyntheticScene::build(&cfg.scene_spec())?;
    scene.brdf = cfg.brdf;
    Ok(scene)
}

fn synth_model(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let scene = synthetic_scene(cfg)?;
    scene.model.save(out.join("model.lsmm"))?;
    save_params(out.join("truth.json"), &scene.truth)?;
    write_obj(out.join("truth.obj"), &scene.model.posed_mesh(&scene.truth)?)?;
    write_lights(&out.join("truth_lights.txt"), &scene.truth.light_intensities)?;
    log::info!(
        "model with {} vertices written to {}",
        scene.model.vertex_count(),
        out.join("model.lsmm").display()
    );
    Ok(EXIT_OK)
}

/// Model plus the parameter dump named by `params` or paths.params.
fn fitted_state(cfg: &RunConfig, params: Option<&Path>) -> Result<(MorphableModel, FaceParameters)> {
    let path = params
        .or(cfg.paths.params.as_deref())
        .ok_or_else(|| Error::Config("paths.params: a parameter dump is required (or --params)".into()))?;
    let model = cfg.load_model()?;
    let p = load_params(path)?;
    p.check_dims(&model, cfg.stage.n)?;
    Ok((model, p))
}

fn render_cmd(
    cfg: &RunConfig,
    out: &Path,
    params: Option<&Path>,
    spp: Option<u32>,
    lights: Option<&Path>,
    emit_landmarks: bool,
) -> Result<i32> {
    let (model, mut p) = if params.is_some() || cfg.paths.params.is_some() {
        fitted_state(cfg, params)?
    } else {
        let scene = synthetic_scene(cfg)?;
        (scene.model, scene.truth)
    };
    if let Some(l) = lights {
        p.light_intensities = read_lights(l)?;
    }
    let camera = cfg.build_camera()?;
    let stage = cfg.build_stage()?.with_intensities(&p.light_intensities)?;
    let r: RenderOutput = render(&model.posed_mesh(&p)?, &stage, &cfg.brdf, &p.spec_map, &camera, &with_spp(cfg, spp))?;
    write_render(out, "render", &r.image)?;
    let mask: Vec<f64> = r.hit_mask().iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    write_gray_png(out.join("mask.png"), camera.width, camera.height, &mask)?;
    save_params(out.join("params.json"), &p)?;
    if emit_landmarks {
        LandmarkSet::from_projection(&model, &p, &camera)?.write(out.join("landmarks.txt"))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FitReport<'a> {
    config: &'a FitEcho,
    error: &'a Option<String>,
    final_energy: Option<crate::energy::EnergyBreakdown>,
}

fn fit_cmd(cfg: &RunConfig, out: &Path, target: Option<&Path>, params: Option<&Path>, spp: Option<u32>) -> Result<i32> {
    let target_path = target
        .or(cfg.paths.target.as_deref())
        .ok_or_else(|| Error::Config("paths.target: a target image is required (or --target)".into()))?;
    let model = cfg.load_model()?;
    let camera = cfg.build_camera()?;
    let stage = cfg.build_stage()?;
    let target = load_image(target_path)?;
    if target.width != camera.width || target.height != camera.height {
        return Err(Error::Config(format!(
            "camera: target {} is {}x{} but the camera is {}x{}",
            target_path.display(),
            target.width,
            target.height,
            camera.width,
            camera.height
        )));
    }
    let matte = match &cfg.paths.matte {
        Some(p) => {
            let (w, h, v) = read_gray_png(p)?;
            if (w, h) != (camera.width, camera.height) {
                return Err(Error::Config(format!("paths.matte: {} is {w}x{h}", p.display())));
            }
            let m: Vec<bool> = v.iter().map(|&x| x > 0.5).collect();
            Some(erode_mask(&m, w as usize, cfg.matte_erosion))
        }
        None => None,
    };
    let landmarks = match &cfg.paths.landmarks {
        Some(p) => LandmarkSet::read(p)?,
        None => LandmarkSet::default(),
    };
    let init = match params.or(cfg.paths.params.as_deref()) {
        Some(p) => load_params(p)?,
        None => FaceParameters::neutral(&model, stage.len()),
    };
    let obj = Objective {
        regularizer: LightRegularizer::new(cfg.regularizer, &init.light_intensities),
        model,
        stage,
        camera,
        brdf: cfg.brdf,
        target,
        matte,
        landmarks,
        weights: cfg.weights,
    };
    let rcfg = with_spp(cfg, spp);
    let result = fit(&obj, &init, &cfg.stages, &rcfg, &cfg.optimizer)?;
    save_image(out.join("initial.png"), &result.initial_render)?;
    write_render(out, "final", &result.final_render)?;
    save_params(out.join("params.json"), &result.params)?;
    write_trace_csv(out.join("trace.csv"), &result.trace)?;
    let lit = obj.lit_stage(&result.params)?;
    save_image(out.join("envmap.png"), &envmap_from_stage(&lit, 128, 64)?)?;
    write_json(
        &out.join("fit.json"),
        &FitReport {
            config: &result.config,
            error: &result.error,
            final_energy: result.trace.last().map(|r| r.energy),
        },
    )?;
    if let Some(e) = &result.error {
        eprintln!("error: fit stopped early: {e}");
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn gradcheck_cmd(cfg: &RunConfig, out: &Path, spp: Option<u32>, size: u32) -> Result<i32> {
    let mut cfg = cfg.clone();
    cfg.camera.width = size;
    cfg.camera.height = size;
    let scene = synthetic_scene(&cfg)?;
    let rcfg = RenderConfig {
        spp: spp.unwrap_or(128),
        ..cfg.render
    };
    let target_rcfg = RenderConfig {
        seed: rcfg.seed.wrapping_add(1),
        ..rcfg
    };
    let (obj, _) = scene.objective(&scene.truth, &target_rcfg, cfg.weights)?;
    let params = gradcheck_state(&scene.truth, cfg.model.seed)?;
    let analytic = objective_with_gradient(&obj, &params, &ActiveSet::ALL, &rcfg)?;
    let fd = finite_difference_gradient(&obj, &params, &ActiveSet::ALL, &rcfg, &FdSteps::default())?;
    let report = compare_gradients(&analytic, &fd);
    write_json(&out.join("gradcheck.json"), &report)?;
    let text = report.to_text();
    std::fs::write(out.join("gradcheck.txt"), &text).map_err(|e| Error::io("writing report", out, e))?;
    let s = &report.summary;
    println!(
        "pass_fraction {:.4} over {} coordinates ({} flagged); worst {} at {:.3e}",
        s.pass_fraction, s.compared, s.flagged, s.worst_coord, s.worst_rel_err
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        let mut argv = vec!["lightstage"];
        argv.extend_from_slice(args);
        run_cli(argv)
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
        assert_eq!(run(&[]), EXIT_USAGE);
        assert_eq!(run(&["render", "--spp", "many"]), EXIT_USAGE);
        assert_eq!(run(&["--help"]), EXIT_OK);
    }

    #[test]
    fn config_problems_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "[render]\nsamples = 4\n").unwrap();
        let out = dir.path().join("o");
        assert_eq!(run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "envmap"]), EXIT_USAGE);
        assert_eq!(run(&["--out", out.to_str().unwrap(), "fit"]), EXIT_USAGE);
    }

    #[test]
    fn number_and_light_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        std::fs::write(&p, "# lights\n0.5\n0.1 0.2 0.3 # tinted\n\n").unwrap();
        assert_eq!(read_lights(&p).unwrap(), vec![[0.5; 3], [0.1, 0.2, 0.3]]);
        std::fs::write(&p, "0.1 0.2\n").unwrap();
        assert!(read_lights(&p).is_err());
        std::fs::write(&p, "-1\n").unwrap();
        assert!(read_lights(&p).is_err());
        std::fs::write(&p, "1 2\n3 # x\n").unwrap();
        assert_eq!(read_numbers(&p, "numbers").unwrap(), vec![1.0, 2.0, 3.0]);
        std::fs::write(&p, "1 two\n").unwrap();
        assert!(read_numbers(&p, "numbers").unwrap_err().to_string().contains("line 1"));
        let lights = vec![[0.25, 0.5, 0.125], [1.0; 3]];
        write_lights(&p, &lights).unwrap();
        assert_eq!(read_lights(&p).unwrap(), lights);
    }
}
