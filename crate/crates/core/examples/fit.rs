//! Fits a synthetic face from a perturbed start with the default stage
//! sequence and reports data energy and pose error before and after.

use std::time::Instant;

use lightstage::energy::ObjectiveWeights;
use lightstage::optimizer::{default_stages, fit, OptimizerConfig};
use lightstage::synthetic::{perturb_geometry, SceneSpec, SyntheticScene};
use lightstage::tracer::RenderConfig;

fn main() -> lightstage::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let scene = SyntheticScene::build(&SceneSpec::default())?;
    let target_rcfg = RenderConfig { spp: 32, seed: 1000, ..RenderConfig::default() };
    let (obj, _) = scene.objective(&scene.truth, &target_rcfg, ObjectiveWeights::default())?;
    let init = perturb_geometry(&scene.truth, 11, 0.3, [0.05, 0.0, 0.0]);

    let eval_rcfg = RenderConfig { spp: 32, seed: 2000, ..RenderConfig::default() };
    let data = |p| -> lightstage::Result<f64> { Ok(obj.evaluate(p, &eval_rcfg)?.energy.e_data) };
    let e0 = data(&init)?;

    let t = Instant::now();
    let result = fit(&obj, &init, &default_stages(), &eval_rcfg, &OptimizerConfig::default())?;
    println!("fit: {:.2?}", t.elapsed());

    let e1 = data(&result.params)?;
    let (a, b) = (result.params.pose.translation, scene.truth.pose.translation);
    let t_err = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
    for stage in &result.config.stages {
        let rows: Vec<_> = result.trace.iter().filter(|r| r.stage == stage.name).collect();
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            let acc = rows.iter().filter(|r| r.accepted).count();
            println!(
                "{:<18} total {:.4e} -> {:.4e}  (data {:.4e}, landmark {:.4e}), accepted {acc}/{}",
                stage.name,
                first.total_before,
                last.energy.total,
                last.energy.e_data,
                last.energy.e_landmark,
                rows.len()
            );
        }
    }
    println!("noise floor E_data at truth: {:.5e}", data(&scene.truth)?);
    let accepted = result.trace.iter().filter(|r| r.accepted).count();
    println!("accepted {accepted} of {} steps", result.trace.len());
    println!("E_data: initial {e0:.5e}, final {e1:.5e}, ratio {:.4}", e1 / e0);
    println!("translation error: {t_err:.5}");
    Ok(())
}
