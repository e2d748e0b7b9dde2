//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::*;
use lightstage::brdf::{eval_brdf, eval_cook_torrance, BrdfConfig};
use lightstage::energy::ObjectiveWeights;
use lightstage::grad::{compare_gradients, finite_difference_gradient, objective_with_gradient, ActiveSet, FdSteps};
use lightstage::imageio::rmse;
use lightstage::math::Vec3;
use lightstage::morphable::FaceParameters;
use lightstage::optimizer::{default_stages, edit_expression, fit, relight, FitResult, OptimizerConfig, StageSpec, StepSizes};
use lightstage::synthetic::{gradcheck_state, perturb_geometry, random_light_intensities, SceneSpec, SyntheticScene};
use lightstage::tracer::{occluded, render, Bvh, RenderConfig, RenderOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_PASS_FRACTION: f64 = 0.95;
const GRAD_TIME: Duration = Duration::from_secs(5 * 60);
const ESTIMATOR_REL_TOL: f64 = 0.01;
const ESTIMATOR_TIME: Duration = Duration::from_secs(60);
const LINEARITY_REL_TOL: f64 = 1e-6;
const REFLECTANCE_BOUND: f64 = 1.02;
const FIT_DATA_RATIO: f64 = 0.10;
const FIT_TRANSLATION_TOL: f64 = 0.01;
const FIT_TIME: Duration = Duration::from_secs(30 * 60);
const LIGHT_SHARE_MIN: f64 = 0.01;
const LIGHT_REL_TOL: f64 = 0.05;
const RELIGHT_RMSE: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rcfg(spp: u32, seed: u64) -> RenderConfig {
    RenderConfig {
        spp,
        seed,
        ..RenderConfig::default()
    }
}

fn render_params(s: &SyntheticScene, p: &FaceParameters, lights: &[[f64; 3]], r: &RenderConfig) -> RenderOutput {
    let stage = s.stage.with_intensities(lights).unwrap();
    relight(&s.model, p, &stage, &s.brdf, &s.camera, r).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let s = SyntheticScene::build(&SceneSpec {
        width: 16,
        height: 16,
        ..SceneSpec::default()
    })
    .unwrap();
    let (obj, _) = s.objective(&s.truth, &rcfg(128, 1), ObjectiveWeights::default()).unwrap();
    let p = gradcheck_state(&s.truth, 3).unwrap();
    let r = rcfg(128, 2);
    let analytic = objective_with_gradient(&obj, &p, &ActiveSet::ALL, &r).unwrap();
    let fd = finite_difference_gradient(&obj, &p, &ActiveSet::ALL, &r, &FdSteps::default()).unwrap();
    let sm = compare_gradients(&analytic, &fd).summary;
    let el = t.elapsed();
    Outcome {
        pass: sm.pass_fraction >= GRAD_PASS_FRACTION && el <= GRAD_TIME,
        detail: format!(
            "pass fraction {:.4} over {} coordinates ({} flagged), worst {} {:.2e}, {:.1?} (need >= {GRAD_PASS_FRACTION}, <= {:?})",
            sm.pass_fraction, sm.compared, sm.flagged, sm.worst_coord, sm.worst_rel_err, el, GRAD_TIME
        ),
    }
}

fn estimator_correctness() -> Outcome {
    let t = Instant::now();
    let p = plane_scene();
    let out = render(&p.mesh, &p.stage, &p.brdf, &p.spec, &p.camera, &rcfg(4096, 1)).unwrap();
    let mut worst: f64 = 0.0;
    for (i, px) in out.image.pixels.iter().enumerate() {
        for c in 0..3 {
            worst = worst.max((px[c] / plane_reference(i, c) - 1.0).abs());
        }
    }
    let el = t.elapsed();
    Outcome {
        pass: worst <= ESTIMATOR_REL_TOL && el <= ESTIMATOR_TIME,
        detail: format!("worst relative error {worst:.3e} over 16 pixels x 3 channels, {el:.1?} (need <= {ESTIMATOR_REL_TOL})"),
    }
}

fn exact_linearity(s: &SyntheticScene) -> Outcome {
    let r = rcfg(8, 5);
    let base = render_params(s, &s.truth, &s.truth.light_intensities, &r);
    let doubled: Vec<[f64; 3]> = s.truth.light_intensities.iter().map(|l| l.map(|v| 2.0 * v)).collect();
    let twice = render_params(s, &s.truth, &doubled, &r);
    let mut worst: f64 = 0.0;
    for (a, b) in twice.image.pixels.iter().zip(&base.image.pixels) {
        for c in 0..3 {
            if b[c] != 0.0 {
                worst = worst.max((a[c] - 2.0 * b[c]).abs() / (2.0 * b[c]).abs());
            } else if a[c] != 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    Outcome {
        pass: worst <= LINEARITY_REL_TOL,
        detail: format!("max relative deviation {worst:.3e} (need <= {LINEARITY_REL_TOL:e})"),
    }
}

fn shadow_oracle(s: &SyntheticScene) -> Outcome {
    let mesh = s.model.posed_mesh(&s.truth).unwrap();
    let bvh = Bvh::build(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut point = || Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let (mut agree, mut blocked) = (0, 0);
    for _ in 0..1000 {
        let (a, b) = (point(), point());
        let o = occluded(&bvh, &mesh, &a, &b);
        agree += (o == brute_occluded(&mesh, &a, &b)) as usize;
        blocked += o as usize;
    }
    let small = SyntheticScene::build(&SceneSpec {
        width: 32,
        height: 32,
        ..SceneSpec::default()
    })
    .unwrap();
    let r = rcfg(4, 6);
    let stage = small.stage.with_intensities(&small.truth.light_intensities).unwrap();
    let out = render(&mesh, &stage, &small.brdf, &small.truth.spec_map, &small.camera, &r).unwrap();
    let oracle = oracle_visibility_map(&mesh, &stage, &r, &out, 32);
    let mismatched = out
        .aux
        .iter()
        .zip(&oracle)
        .filter(|(a, o)| match o {
            Some(v) => &a.light_visibility != v,
            None => a.hit.is_some(),
        })
        .count();
    Outcome {
        pass: agree == 1000 && mismatched == 0,
        detail: format!("segments agree {agree}/1000 ({blocked} blocked), visibility mismatches {mismatched}/1024 pixels"),
    }
}

fn random_upper(rng: &mut ChaCha8Rng, n: &Vec3) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let l = v.norm();
        if l > 1e-3 && l <= 1.0 && v.dot(n) > 1e-3 {
            return v / l;
        }
    }
}

/// Diffuse part by cosine-weighted samples, lobe by half-vector samples.
fn reflectance(cfg: &BrdfConfig, wo: &Vec3, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let a2 = cfg.roughness.powi(4);
    let (mut diffuse, mut lobe) = (0.0, 0.0);
    for _ in 0..n {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let r = u.sqrt();
        let wi = Vec3::new(r * (2.0 * PI * v).cos(), r * (2.0 * PI * v).sin(), (1.0 - u).max(0.0).sqrt());
        diffuse += eval_brdf(&BrdfConfig { ks: 0.0, ..*cfg }, Vec3::repeat(1.0), 0.0, &Vec3::z(), &wi, wo).x * PI;
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let cos_h = 1.0 / (1.0 + a2 * u / (1.0 - u)).sqrt();
        let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
        let h = Vec3::new(sin_h * (2.0 * PI * v).cos(), sin_h * (2.0 * PI * v).sin(), cos_h);
        let oh = wo.dot(&h);
        let wi = h * (2.0 * oh) - wo;
        if oh > 0.0 && wi.z > 0.0 {
            let dd = cos_h * cos_h * (a2 - 1.0) + 1.0;
            let pdf = a2 / (PI * dd * dd) * cos_h / (4.0 * oh);
            lobe += eval_cook_torrance(&Vec3::z(), &wi, wo, cfg.roughness, cfg.f0) * wi.z / pdf;
        }
    }
    (diffuse + cfg.ks * lobe) / n as f64
}

fn brdf_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut reciprocal, mut non_negative) = (0, 0);
    for _ in 0..10_000 {
        let n = random_upper(&mut rng, &Vec3::z());
        let wi = random_upper(&mut rng, &n);
        let wo = random_upper(&mut rng, &n);
        let cfg = BrdfConfig {
            kd: rng.random(),
            ks: rng.random(),
            roughness: rng.random_range(0.02..1.0),
            f0: rng.random_range(0.01..0.99),
        };
        let albedo = Vec3::new(rng.random(), rng.random(), rng.random());
        let spec: f64 = rng.random();
        let a = eval_brdf(&cfg, albedo, spec, &n, &wi, &wo);
        reciprocal += (a == eval_brdf(&cfg, albedo, spec, &n, &wo, &wi)) as usize;
        non_negative += a.iter().all(|v| *v >= 0.0 && v.is_finite()) as usize;
    }
    let mut worst: f64 = 0.0;
    for roughness in [0.1, 0.3, 0.6, 1.0] {
        for (kd, ks) in [(1.0, 0.0), (0.5, 0.5), (0.0, 1.0)] {
            for theta in [0.0f64, 30.0, 60.0, 85.0] {
                let wo = Vec3::new(theta.to_radians().sin(), 0.0, theta.to_radians().cos());
                let cfg = BrdfConfig { kd, ks, roughness, f0: 0.04 };
                worst = worst.max(reflectance(&cfg, &wo, 100_000, &mut rng));
            }
        }
    }
    Outcome {
        pass: reciprocal == 10_000 && non_negative == 10_000 && worst <= REFLECTANCE_BOUND,
        detail: format!(
            "reciprocal {reciprocal}/10000, non-negative {non_negative}/10000, max reflectance {worst:.4} (need <= {REFLECTANCE_BOUND})"
        ),
    }
}

struct RoundTrip {
    scene: SyntheticScene,
    result: FitResult,
    elapsed: Duration,
    e0: f64,
    e1: f64,
}

fn round_trip_fit() -> RoundTrip {
    let scene = SyntheticScene::build(&SceneSpec::default()).unwrap();
    let (obj, _) = scene.objective(&scene.truth, &rcfg(32, 1000), ObjectiveWeights::default()).unwrap();
    let init = perturb_geometry(&scene.truth, 11, 0.3, [0.05, 0.0, 0.0]);
    let eval = rcfg(32, 2000);
    let t = Instant::now();
    let result = fit(&obj, &init, &default_stages(), &eval, &OptimizerConfig::default()).unwrap();
    let elapsed = t.elapsed();
    let e0 = obj.evaluate(&init, &eval).unwrap().energy.e_data;
    let e1 = obj.evaluate(&result.params, &eval).unwrap().energy.e_data;
    RoundTrip {
        scene,
        result,
        elapsed,
        e0,
        e1,
    }
}

fn round_trip(rt: &RoundTrip) -> Outcome {
    let (a, b) = (rt.result.params.pose.translation, rt.scene.truth.pose.translation);
    let t_err = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
    let ratio = rt.e1 / rt.e0;
    Outcome {
        pass: rt.result.error.is_none() && ratio <= FIT_DATA_RATIO && t_err <= FIT_TRANSLATION_TOL && rt.elapsed <= FIT_TIME,
        detail: format!(
            "E_data {:.4e} -> {:.4e} (ratio {ratio:.4}, need <= {FIT_DATA_RATIO}), translation error {t_err:.5} (need <= {FIT_TRANSLATION_TOL}), {:.1?}",
            rt.e0, rt.e1, rt.elapsed
        ),
    }
}

fn light_disentanglement() -> Outcome {
    let s = SyntheticScene::build(&SceneSpec::default()).unwrap();
    let (obj, _) = s.objective(&s.truth, &rcfg(1024, 1000), ObjectiveWeights::default()).unwrap();
    let n = s.stage.len();
    let mut init = s.truth.clone();
    init.light_intensities = vec![[0.5; 3]; n];
    let lights = ActiveSet { lights: true, ..ActiveSet::NONE };
    let stages = [
        StageSpec {
            name: "lights-coarse".into(),
            active: lights,
            iterations: 150,
            steps: StepSizes { lights: 0.01, ..StepSizes::default() },
            spp: Some(16),
            weights: None,
        },
        StageSpec {
            name: "lights-fine".into(),
            active: lights,
            iterations: 40,
            steps: StepSizes { lights: 0.003, ..StepSizes::default() },
            spp: Some(64),
            weights: None,
        },
    ];
    let result = fit(&obj, &init, &stages, &rcfg(16, 3000), &OptimizerConfig::default()).unwrap();
    let mask = obj.matte.clone().unwrap();
    let energy: Vec<f64> = (0..n)
        .map(|j| {
            let mut only = vec![[0.0; 3]; n];
            only[j] = s.truth.light_intensities[j];
            let img = render_params(&s, &s.truth, &only, &rcfg(32, 7)).image;
            img.pixels.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| p[0] + p[1] + p[2]).sum()
        })
        .collect();
    let total: f64 = energy.iter().sum();
    let (mut worst, mut worst_j, mut counted): (f64, usize, usize) = (0.0, 0, 0);
    for j in 0..n {
        if energy[j] / total < LIGHT_SHARE_MIN {
            continue;
        }
        counted += 1;
        for c in 0..3 {
            let e = (result.params.light_intensities[j][c] / s.truth.light_intensities[j][c] - 1.0).abs();
            if e > worst {
                worst = e;
                worst_j = j;
            }
        }
    }
    Outcome {
        pass: result.error.is_none() && worst <= LIGHT_REL_TOL,
        detail: format!(
            "{counted} lights with >= {LIGHT_SHARE_MIN} of the energy, worst relative error {worst:.4} (light {worst_j}, need <= {LIGHT_REL_TOL})"
        ),
    }
}

fn relighting(rt: &RoundTrip) -> Outcome {
    let s = &rt.scene;
    let held_out = random_light_intensities(&mut ChaCha8Rng::seed_from_u64(4242), s.stage.len());
    let r = rcfg(64, 77);
    let truth = render_params(s, &s.truth, &held_out, &r);
    let relit = render_params(s, &rt.result.params, &held_out, &r);
    let mask = truth.hit_mask();
    let e = rmse(&relit.image, &truth.image, Some(&mask)).unwrap();
    Outcome {
        pass: e <= RELIGHT_RMSE,
        detail: format!(
            "RMSE {e:.5} over {} foreground pixels (need <= {RELIGHT_RMSE})",
            mask.iter().filter(|m| **m).count()
        ),
    }
}

fn edit_shadows(rt: &RoundTrip) -> Outcome {
    let s = &rt.scene;
    let fitted = &rt.result.params;
    let r = rcfg(4, 88);
    let mut beta = fitted.beta.clone();
    beta[0] += 2.5;
    let before = edit_expression(&s.model, fitted, &fitted.beta, &s.stage, &s.brdf, &s.camera, &r).unwrap();
    let after = edit_expression(&s.model, fitted, &beta, &s.stage, &s.brdf, &s.camera, &r).unwrap();
    let stage = s.stage.with_intensities(&fitted.light_intensities).unwrap();
    let edited = FaceParameters {
        beta,
        ..fitted.clone()
    };
    let w = s.camera.width;
    let o0 = oracle_visibility_map(&s.model.posed_mesh(fitted).unwrap(), &stage, &r, &before, w);
    let o1 = oracle_visibility_map(&s.model.posed_mesh(&edited).unwrap(), &stage, &r, &after, w);
    let changed: Vec<usize> = (0..before.aux.len())
        .filter(|&i| before.aux[i].light_visibility != after.aux[i].light_visibility)
        .collect();
    let oracle: Vec<usize> = (0..o0.len()).filter(|&i| o0[i] != o1[i]).collect();
    Outcome {
        pass: changed == oracle && !changed.is_empty(),
        detail: format!("{} pixels changed visibility, oracle {}, sets equal: {}", changed.len(), oracle.len(), changed == oracle),
    }
}

fn determinism() -> Outcome {
    let s = SyntheticScene::build(&SceneSpec {
        width: 32,
        height: 32,
        ..SceneSpec::default()
    })
    .unwrap();
    let (obj, _) = s.objective(&s.truth, &rcfg(8, 1), ObjectiveWeights::default()).unwrap();
    let init = perturb_geometry(&s.truth, 2, 0.3, [0.02, 0.0, 0.0]);
    let stages: Vec<StageSpec> = default_stages()
        .into_iter()
        .map(|mut st| {
            st.iterations = 3;
            st
        })
        .collect();
    let run = |threads: usize| {
        with_threads(threads, || {
            let img = image_bits(&render_params(&s, &s.truth, &s.truth.light_intensities, &rcfg(8, 9)));
            let g = objective_with_gradient(&obj, &init, &ActiveSet::ALL, &rcfg(8, 9)).unwrap();
            let grad: Vec<u64> = g
                .d_alpha
                .iter()
                .chain(&g.d_beta)
                .chain(&g.d_delta)
                .chain(&g.d_pose)
                .chain(&g.d_spec_map)
                .chain(g.d_lights.iter().flatten())
                .map(|v| v.to_bits())
                .collect();
            let f = fit(&obj, &init, &stages, &rcfg(8, 10), &OptimizerConfig { seed: 3, ..OptimizerConfig::default() }).unwrap();
            let trace: Vec<u64> = f.trace.iter().map(|r| r.energy.total.to_bits()).collect();
            (img, grad, param_bits(&f.params), trace, f.final_render.pixels.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>())
        })
    };
    let a = run(1);
    let b = run(1);
    let c = run(8);
    Outcome {
        pass: a == b && a == c,
        detail: format!(
            "render, gradient, fitted parameters, trace and final render identical: repeat {}, 1 vs 8 threads {}",
            a == b,
            a == c
        ),
    }
}

fn main() {
    let started = Instant::now();
    let face = SyntheticScene::build(&SceneSpec::default()).unwrap();
    let mut all = true;
    let mut report = |id: u32, name: &str, o: Outcome| {
        all &= o.pass;
        println!("criterion {id:>2} {name:<26} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "estimator correctness", estimator_correctness());
    report(3, "exact linearity", exact_linearity(&face));
    report(4, "shadow oracle", shadow_oracle(&face));
    report(5, "brdf properties", brdf_properties());
    let rt = round_trip_fit();
    report(6, "round-trip fit", round_trip(&rt));
    report(7, "light disentanglement", light_disentanglement());
    report(8, "relighting", relighting(&rt));
    report(9, "expression-edit shadows", edit_shadows(&rt));
    report(10, "determinism", determinism());
    println!("acceptance finished in {:.1?}", started.elapsed());
    if !all {
        std::process::exit(1);
    }
}
