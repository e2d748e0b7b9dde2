//! Compares analytic gradients with central finite differences on a small
//! synthetic scene and prints the report.

use std::time::Instant;

use lightstage::energy::ObjectiveWeights;
use lightstage::grad::{compare_gradients, finite_difference_gradient, objective_with_gradient, ActiveSet, FdSteps};
use lightstage::synthetic::{gradcheck_state, SceneSpec, SyntheticScene};
use lightstage::tracer::RenderConfig;

fn main() -> lightstage::Result<()> {
    let spec = SceneSpec {
        width: 16,
        height: 16,
        ..SceneSpec::default()
    };
    let scene = SyntheticScene::build(&spec)?;
    let target_rcfg = RenderConfig { spp: 128, seed: 1, ..RenderConfig::default() };
    let (obj, _) = scene.objective(&scene.truth, &target_rcfg, ObjectiveWeights::default())?;
    let params = gradcheck_state(&scene.truth, 3)?;
    let rcfg = RenderConfig { spp: 128, seed: 2, ..RenderConfig::default() };

    let t = Instant::now();
    let analytic = objective_with_gradient(&obj, &params, &ActiveSet::ALL, &rcfg)?;
    println!("analytic gradient: {:.2?}", t.elapsed());
    let t = Instant::now();
    let fd = finite_difference_gradient(&obj, &params, &ActiveSet::ALL, &rcfg, &FdSteps::default())?;
    println!("finite differences: {:.2?}", t.elapsed());

    let report = compare_gradients(&analytic, &fd);
    print!("{}", report.to_text());
    Ok(())
}
