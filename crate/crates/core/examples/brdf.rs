//! Tabulates the shading model in the plane of incidence for a few
//! roughness values and checks reciprocity along the way.

use lightstage::brdf::{eval_brdf, BrdfConfig};
use lightstage::math::Vec3;

fn dir(theta_deg: f64) -> Vec3 {
    let t = theta_deg.to_radians();
    Vec3::new(t.sin(), 0.0, t.cos())
}

fn main() {
    let n = Vec3::z();
    let albedo = Vec3::new(0.7, 0.5, 0.4);
    let wo = dir(30.0);
    let angles = [-80.0, -60.0, -45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 60.0];
    print!("{:>9}", "roughness");
    for a in angles {
        print!("{a:>9.0}");
    }
    println!();
    for roughness in [0.1, 0.3, 0.6, 1.0] {
        let cfg = BrdfConfig { roughness, ..BrdfConfig::default() };
        print!("{roughness:>9.1}");
        for a in angles {
            let wi = dir(a);
            let f = eval_brdf(&cfg, albedo, 0.5, &n, &wi, &wo);
            assert_eq!(f, eval_brdf(&cfg, albedo, 0.5, &n, &wo, &wi));
            print!("{:>9.4}", f.x);
        }
        println!();
    }
    println!("red channel of f(wi, wo) for wo at 30 degrees; mirror direction is -30");
}
