mod common;

use std::process::Command;

use common::*;
use lightstage::energy::ObjectiveWeights;
use lightstage::morphable::FaceParameters;
use lightstage::optimizer::{default_stages, edit_expression, fit, load_params, relight, run_stage, OptimizerConfig};
use lightstage::scene::StageOrientation;
use lightstage::synthetic::{SceneSpec, StageConfig, SyntheticScene};
use lightstage::tracer::RenderConfig;

fn rcfg(spp: u32, seed: u64) -> RenderConfig {
    RenderConfig {
        spp,
        seed,
        ..RenderConfig::default()
    }
}

fn translation_error(a: &FaceParameters, b: &FaceParameters) -> f64 {
    (0..3)
        .map(|k| (a.pose.translation[k] - b.pose.translation[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn pose_stage_recovers_a_translated_target() {
    let s = SyntheticScene::build(&SceneSpec::default()).unwrap();
    let (obj, _) = s.objective(&s.truth, &rcfg(32, 1000), ObjectiveWeights::default()).unwrap();
    let mut init = s.truth.clone();
    init.pose.translation[0] += 0.05;
    let stage = default_stages().remove(0);
    assert!(stage.iterations <= 200);
    let out = run_stage(&obj, &init, &stage, &rcfg(4, 0), &OptimizerConfig::default(), 0).unwrap();
    let before = translation_error(&init, &s.truth);
    let after = translation_error(&out.params, &s.truth);
    assert!(after <= 0.2 * before, "translation error {before} -> {after}");
}

#[test]
fn fit_started_at_the_truth_stays_at_the_noise_floor() {
    let s = SyntheticScene::build(&SceneSpec {
        width: 32,
        height: 32,
        ..SceneSpec::default()
    })
    .unwrap();
    let mean = FaceParameters::neutral(&s.model, s.stage.len());
    let (obj, _) = s.objective(&mean, &rcfg(16, 1), ObjectiveWeights::default()).unwrap();
    let stages: Vec<_> = default_stages()
        .into_iter()
        .map(|mut st| {
            st.iterations = 4;
            st
        })
        .collect();
    let eval = rcfg(16, 2);
    let result = fit(&obj, &mean, &stages, &eval, &OptimizerConfig::default()).unwrap();
    assert!(result.error.is_none());
    let floor = obj.evaluate(&mean, &eval).unwrap().energy.e_data;
    let last = obj.evaluate(&result.params, &eval).unwrap().energy.e_data;
    assert!(last <= 1.05 * floor, "E_data {last} vs noise floor {floor}");
    for w in result.trace.windows(2).filter(|w| w[0].stage == w[1].stage) {
        assert!(w[1].energy.total <= w[1].total_before + 1e-6);
    }
}

#[test]
fn side_light_shadows_match_the_oracle() {
    let s = SyntheticScene::build(&SceneSpec {
        width: 24,
        height: 24,
        ..SceneSpec::default()
    })
    .unwrap();
    let side = (0..s.stage.len())
        .max_by(|&a, &b| s.stage.lights[a].center.x.partial_cmp(&s.stage.lights[b].center.x).unwrap())
        .unwrap();
    let mut l = vec![[0.0; 3]; s.stage.len()];
    l[side] = [1.0; 3];
    let stage = s.stage.with_intensities(&l).unwrap();
    let r = rcfg(8, 3);
    let out = relight(&s.model, &s.truth, &stage, &s.brdf, &s.camera, &r).unwrap();
    let mesh = s.model.posed_mesh(&s.truth).unwrap();
    let oracle = oracle_visibility_map(&mesh, &stage, &r, &out, s.camera.width);
    let mut shadowed = 0;
    for (a, o) in out.aux.iter().zip(&oracle) {
        if let Some(v) = o {
            assert_eq!(&a.light_visibility, v);
            shadowed += (v[side] < Some(1.0)) as usize;
        }
    }
    assert!(shadowed > 0);
}

#[test]
fn expression_edit_changes_visibility_exactly_where_the_oracle_does() {
    let s = SyntheticScene::build(&SceneSpec {
        width: 24,
        height: 24,
        stage: StageConfig {
            orientation: StageOrientation::Overhead,
            ..StageConfig::default()
        },
        ..SceneSpec::default()
    })
    .unwrap();
    let r = rcfg(4, 9);
    let mut beta = s.truth.beta.clone();
    beta[0] += 2.5;
    let before = edit_expression(&s.model, &s.truth, &s.truth.beta, &s.stage, &s.brdf, &s.camera, &r).unwrap();
    let after = edit_expression(&s.model, &s.truth, &beta, &s.stage, &s.brdf, &s.camera, &r).unwrap();
    let stage = s.stage.with_intensities(&s.truth.light_intensities).unwrap();
    let edited = FaceParameters {
        beta,
        ..s.truth.clone()
    };
    let o0 = oracle_visibility_map(&s.model.posed_mesh(&s.truth).unwrap(), &stage, &r, &before, 24);
    let o1 = oracle_visibility_map(&s.model.posed_mesh(&edited).unwrap(), &stage, &r, &after, 24);
    let changed: Vec<usize> = (0..before.aux.len())
        .filter(|&i| before.aux[i].light_visibility != after.aux[i].light_visibility)
        .collect();
    let oracle: Vec<usize> = (0..o0.len()).filter(|&i| o0[i] != o1[i]).collect();
    assert_eq!(changed, oracle);
    assert!(!changed.is_empty());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lightstage"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("LIGHTSTAGE_OUT")
        .output()
        .unwrap()
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let out = cli(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let help = cli(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("[weights]"));
}

#[test]
fn cli_render_then_fit_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    std::fs::write(
        dir.path().join("run.toml"),
        "matte_erosion = 1\n[camera]\nwidth = 16\nheight = 16\n[render]\nspp = 8\n\
         [paths]\ntarget = \"t/render.pfm\"\nmatte = \"t/mask.png\"\nlandmarks = \"t/landmarks.txt\"\nparams = \"t/params.json\"\n\
         [[stages]]\nname = \"joint\"\niterations = 3\nactive = { alpha = true, beta = true, pose = true, lights = true }\n",
    )
    .unwrap();
    assert_eq!(cli(&["--out", &d("t"), "synth-model"]).status.code(), Some(0));
    let missing = cli(&["--out", &d("t"), "--config", &d("run.toml"), "render"]);
    assert_eq!(missing.status.code(), Some(1), "config names files that do not exist yet");
    std::fs::write(dir.path().join("pre.toml"), "[camera]\nwidth = 16\nheight = 16\n[render]\nspp = 8\n").unwrap();
    let render = cli(&["--out", &d("t"), "--config", &d("pre.toml"), "render", "--emit-landmarks"]);
    assert_eq!(render.status.code(), Some(0), "{}", String::from_utf8_lossy(&render.stderr));

    let mut bits = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = d(&format!("fit{threads}"));
        let run = cli(&["--config", &d("run.toml"), "--threads", threads, "--seed", "4", "--out", &out_dir, "fit"]);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
        for f in ["final.pfm", "final.png", "initial.png", "params.json", "trace.csv", "envmap.png", "fit.json"] {
            assert!(dir.path().join(format!("fit{threads}")).join(f).is_file(), "missing {f}");
        }
        let params = load_params(dir.path().join(format!("fit{threads}/params.json"))).unwrap();
        bits.push(param_bits(&params));
        let trace = std::fs::read_to_string(dir.path().join(format!("fit{threads}/trace.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 4);
    }
    assert_eq!(bits[0], bits[1]);

    let fitted = d("fit1/params.json");
    std::fs::write(dir.path().join("beta.txt"), "0.5 ".repeat(12)).unwrap();
    let edit = cli(&["--config", &d("run.toml"), "--out", &d("e"), "edit", "--params", &fitted, "--beta", &d("beta.txt")]);
    assert_eq!(edit.status.code(), Some(0), "{}", String::from_utf8_lossy(&edit.stderr));
    std::fs::write(dir.path().join("short.txt"), "0.5\n").unwrap();
    let bad = cli(&["--config", &d("run.toml"), "--out", &d("e"), "edit", "--params", &fitted, "--beta", &d("short.txt")]);
    assert_eq!(bad.status.code(), Some(1));
    let relit = cli(&["--config", &d("run.toml"), "--out", &d("e"), "relight", "--params", &fitted, "--lights", &d("t/truth_lights.txt")]);
    assert_eq!(relit.status.code(), Some(0), "{}", String::from_utf8_lossy(&relit.stderr));
    let env = Command::new(env!("CARGO_BIN_EXE_lightstage"))
        .arg("envmap")
        .env("LIGHTSTAGE_OUT", d("envdir"))
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(0));
    assert!(dir.path().join("envdir/envmap.png").is_file());
}
