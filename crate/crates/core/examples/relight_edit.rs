//! Relights the ground-truth face under random held-out intensities and
//! raises its first expression coefficient, writing both results.

use lightstage::imageio::write_png;
use lightstage::optimizer::{edit_expression, relight};
use lightstage::synthetic::{random_light_intensities, SceneSpec, SyntheticScene};
use lightstage::tracer::RenderConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example-relight".into());
    std::fs::create_dir_all(&out)?;
    let scene = SyntheticScene::build(&SceneSpec::default())?;
    let rcfg = RenderConfig { spp: 32, seed: 5, ..RenderConfig::default() };

    let held_out = random_light_intensities(&mut ChaCha8Rng::seed_from_u64(4242), scene.stage.len());
    let stage = scene.stage.with_intensities(&held_out)?;
    let relit = relight(&scene.model, &scene.truth, &stage, &scene.brdf, &scene.camera, &rcfg)?;
    write_png(format!("{out}/relight.png"), &relit.image)?;

    let mut beta = scene.truth.beta.clone();
    beta[0] += 2.5;
    let before = edit_expression(&scene.model, &scene.truth, &scene.truth.beta, &scene.stage, &scene.brdf, &scene.camera, &rcfg)?;
    let after = edit_expression(&scene.model, &scene.truth, &beta, &scene.stage, &scene.brdf, &scene.camera, &rcfg)?;
    write_png(format!("{out}/edit.png"), &after.image)?;
    let changed = before
        .aux
        .iter()
        .zip(&after.aux)
        .filter(|(a, b)| a.light_visibility != b.light_visibility)
        .count();
    println!("expression edit changed light visibility at {changed} pixels");
    println!("wrote {out}/relight.png, edit.png");
    Ok(())
}
