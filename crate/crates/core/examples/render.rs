//! Renders the synthetic ground-truth face and writes the image, the
//! silhouette and the number of lit, shadowed and missed pixels.

use std::time::Instant;

use lightstage::imageio::{write_gray_png, write_pfm, write_png};
use lightstage::synthetic::{SceneSpec, SyntheticScene};
use lightstage::tracer::{render, RenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example-render".into());
    std::fs::create_dir_all(&out)?;
    let scene = SyntheticScene::build(&SceneSpec::default())?;
    let stage = scene.stage.with_intensities(&scene.truth.light_intensities)?;
    let mesh = scene.model.posed_mesh(&scene.truth)?;
    let rcfg = RenderConfig { spp: 64, seed: 1, ..RenderConfig::default() };

    let t = Instant::now();
    let r = render(&mesh, &stage, &scene.brdf, &scene.truth.spec_map, &scene.camera, &rcfg)?;
    println!("{} triangles, {} lights, {} spp: {:.2?}", mesh.faces.len(), stage.len(), rcfg.spp, t.elapsed());

    let hits = r.aux.iter().filter(|a| a.hit.is_some()).count();
    let shadowed = r
        .aux
        .iter()
        .filter(|a| a.light_visibility.iter().flatten().any(|v| *v < 1.0))
        .count();
    println!("{hits} of {} pixels hit the face, {shadowed} see a partially blocked light", r.aux.len());

    write_pfm(format!("{out}/render.pfm"), &r.image)?;
    write_png(format!("{out}/render.png"), &r.image)?;
    let mask: Vec<f64> = r.hit_mask().iter().map(|m| *m as u8 as f64).collect();
    write_gray_png(format!("{out}/mask.png"), r.image.width, r.image.height, &mask)?;
    println!("wrote {out}/render.pfm, render.png, mask.png");
    Ok(())
}
