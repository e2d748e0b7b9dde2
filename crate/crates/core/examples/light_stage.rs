//! Builds the front and overhead light stages, prints their layout and
//! writes the ground-truth lighting as a latitude-longitude map.

use lightstage::imageio::{envmap_from_stage, write_pfm, write_png};
use lightstage::scene::StageOrientation;
use lightstage::synthetic::{SceneSpec, StageConfig, SyntheticScene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example-stage".into());
    std::fs::create_dir_all(&out)?;
    for orientation in [StageOrientation::Front, StageOrientation::Overhead] {
        let stage = StageConfig { orientation, ..StageConfig::default() }.build(0.5)?;
        println!("{orientation:?} stage: {} lights, radius {}", stage.len(), stage.radius);
        for (j, l) in stage.lights.iter().enumerate().take(4) {
            println!("  light {j}: centre ({:+.3}, {:+.3}, {:+.3}), area {:.3}", l.center.x, l.center.y, l.center.z, l.area());
        }
    }
    let scene = SyntheticScene::build(&SceneSpec::default())?;
    let lit = scene.stage.with_intensities(&scene.truth.light_intensities)?;
    let env = envmap_from_stage(&lit, 128, 64)?;
    write_pfm(format!("{out}/envmap.pfm"), &env)?;
    write_png(format!("{out}/envmap.png"), &env)?;
    println!("wrote {out}/envmap.pfm, envmap.png");
    Ok(())
}
