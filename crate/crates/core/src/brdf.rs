//! Skin reflectance: Lambertian diffuse plus a Cook-Torrance microfacet lobe
//! whose strength is modulated by a gray-scale specular map.
//!
//! The microfacet lobe uses the GGX distribution with `alpha = roughness²`,
//! Schlick's Fresnel approximation and the height-correlated Smith
//! masking-shadowing term. The lobe is achromatic.

use std::f64::consts::{FRAC_1_PI, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{add3, div3, dot3, lift3, Jet, Real, Vec3, V3};

pub const DEFAULT_SPEC_MAP_SIZE: usize = 32;
pub const DEFAULT_ROUGHNESS: f64 = 0.34;
pub const DEFAULT_F0: f64 = 0.04;

const DENOM_EPS: f64 = 1e-7;
const LOGIT_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrdfConfig {
    pub kd: f64,
    pub ks: f64,
    pub roughness: f64,
    pub f0: f64,
}

impl Default for BrdfConfig {
    fn default() -> Self {
        BrdfConfig {
            kd: 1.0,
            ks: 1.0,
            roughness: DEFAULT_ROUGHNESS,
            f0: DEFAULT_F0,
        }
    }
}

impl BrdfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kd >= 0.0 && self.ks >= 0.0) {
            return Err(Error::invalid("brdf weights kd, ks must be non-negative"));
        }
        if !(self.roughness > 0.01 && self.roughness <= 1.0) {
            return Err(Error::invalid(format!("roughness {} outside (0.01, 1]", self.roughness)));
        }
        if !(self.f0 > 0.0 && self.f0 < 1.0) {
            return Err(Error::invalid(format!("f0 {} outside (0, 1)", self.f0)));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Square gray-scale map of specular strengths in (0, 1).
///
/// The optimizable state is the unconstrained `raw` grid; `values` is its
/// logistic squashing. Storage is row-major with rows along v.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecularMap {
    size: usize,
    raw: Vec<f64>,
    values: Vec<f64>,
}

/// Bilinear lookup result with the texel weights needed by the reverse pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecularSample {
    pub value: f64,
    pub texels: [usize; 4],
    pub weights: [f64; 4],
    /// Derivative of `value` with respect to (u, v).
    pub d_uv: [f64; 2],
}

impl SpecularMap {
    pub fn from_raw(size: usize, raw: Vec<f64>) -> Result<Self> {
        if size == 0 || raw.len() != size * size {
            return Err(Error::invalid(format!(
                "specular map of size {size} needs {} values, got {}",
                size * size,
                raw.len()
            )));
        }
        if raw.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("specular map raw value".into()));
        }
        let values = raw.iter().map(|&r| logistic(r)).collect();
        Ok(SpecularMap { size, raw, values })
    }

    /// Values are clamped into (0, 1) before inverting the squashing.
    pub fn from_values(size: usize, values: &[f64]) -> Result<Self> {
        let raw = values
            .iter()
            .map(|&v| {
                let v = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                (v / (1.0 - v)).ln()
            })
            .collect();
        SpecularMap::from_raw(size, raw)
    }

    pub fn constant(size: usize, value: f64) -> Result<Self> {
        SpecularMap::from_values(size, &vec![value; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    /// `d value / d raw` per texel.
    pub fn squash_derivative(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * (1.0 - v)).collect()
    }

    pub fn sample(&self, uv: [f64; 2]) -> SpecularSample {
        let s = self.size;
        let axis = |c: f64| -> (usize, f64, f64) {
            // Texel centers sit at (i + 0.5) / size.
            let f = c.clamp(0.0, 1.0) * s as f64 - 0.5;
            if s == 1 {
                return (0, 0.0, 0.0);
            }
            let clamped = f.clamp(0.0, (s - 1) as f64);
            let i0 = (clamped.floor() as usize).min(s - 2);
            let inside = f > 0.0 && f < (s - 1) as f64 && c > 0.0 && c < 1.0;
            (i0, clamped - i0 as f64, if inside { s as f64 } else { 0.0 })
        };
        let (c0, tx, dfx) = axis(uv[0]);
        let (r0, ty, dfy) = axis(uv[1]);
        let (c1, r1) = if s == 1 { (0, 0) } else { (c0 + 1, r0 + 1) };
        let texels = [r0 * s + c0, r0 * s + c1, r1 * s + c0, r1 * s + c1];
        let [a, b, c, d] = texels.map(|i| self.values[i]);
        let weights = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
        let value = (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d);
        let d_tx = (1.0 - ty) * (b - a) + ty * (d - c);
        let d_ty = (1.0 - tx) * (c - a) + tx * (d - b);
        SpecularSample {
            value,
            texels,
            weights,
            d_uv: [d_tx * dfx, d_ty * dfy],
        }
    }
}

pub fn sample_specular_map(map: &SpecularMap, uv: [f64; 2]) -> f64 {
    map.sample(uv).value
}

pub fn eval_lambertian(albedo: Vec3) -> Vec3 {
    albedo * FRAC_1_PI
}

/// Cook-Torrance lobe given precomputed cosines `ci = n·wi`, `co = n·wo`
/// (both must be positive). Symmetric in (wi, ci) ↔ (wo, co) bit for bit.
pub(crate) fn cook_torrance_lobe<T: Real>(n: &V3<T>, wi: &V3<T>, wo: &V3<T>, ci: T, co: T, roughness: T, f0: T) -> T {
    let one = T::cst(1.0);
    let alpha = roughness * roughness;
    let a2 = alpha * alpha;

    let hu = add3(wi, wo);
    let hlen2 = dot3(&hu, &hu);
    if hlen2.val() <= 0.0 {
        return T::cst(0.0);
    }
    let h = div3(&hu, hlen2.sqrt());
    let nh = dot3(n, &h);
    let dd = nh * nh * (a2 - one) + one;
    let d = a2 / (T::cst(PI) * dd * dd);

    // cos of the half angle, computed symmetrically from wi·wo.
    let c2 = T::cst(0.5) + T::cst(0.5) * dot3(wi, wo);
    let cos_d = if c2.val() > 0.0 { c2.sqrt() } else { T::cst(0.0) };
    let m = one - cos_d;
    let m2 = m * m;
    let f = f0 + (one - f0) * (m2 * m2 * m);

    let lambda = |c: T| -> T {
        let c2 = c * c;
        let tan2 = (one - c2) / c2;
        ((one + a2 * tan2).sqrt() - one) * T::cst(0.5)
    };
    let g = one / (one + (lambda(ci) + lambda(co)));

    let denom = T::cst(4.0) * (ci * co);
    let denom = if denom.val() < DENOM_EPS { T::cst(DENOM_EPS) } else { denom };
    d * f * g / denom
}

/// Microfacet lobe value; zero when either direction is below the surface.
pub fn eval_cook_torrance(n: &Vec3, wi: &Vec3, wo: &Vec3, roughness: f64, f0: f64) -> f64 {
    let ci = n.dot(wi);
    let co = n.dot(wo);
    if ci <= 0.0 || co <= 0.0 {
        return 0.0;
    }
    cook_torrance_lobe::<f64>(&(*n).into(), &(*wi).into(), &(*wo).into(), ci, co, roughness, f0)
}

/// `kd·albedo/π + ks·spec_value·CT`, per channel.
pub fn eval_brdf(cfg: &BrdfConfig, albedo: Vec3, spec_value: f64, n: &Vec3, wi: &Vec3, wo: &Vec3) -> Vec3 {
    let spec = cfg.ks * spec_value * eval_cook_torrance(n, wi, wo, cfg.roughness, cfg.f0);
    eval_lambertian(albedo) * cfg.kd + Vec3::repeat(spec)
}

/// Value of [`eval_brdf`] with its derivatives with respect to roughness,
/// f0 and the specular map value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrdfGradient {
    pub value: Vec3,
    pub d_roughness: Vec3,
    pub d_f0: Vec3,
    pub d_spec_value: Vec3,
}

pub fn eval_brdf_gradient(cfg: &BrdfConfig, albedo: Vec3, spec_value: f64, n: &Vec3, wi: &Vec3, wo: &Vec3) -> BrdfGradient {
    type J = Jet<3>;
    let ci = n.dot(wi);
    let co = n.dot(wo);
    let lobe = if ci <= 0.0 || co <= 0.0 {
        J::constant(0.0)
    } else {
        cook_torrance_lobe::<J>(
            &lift3(n),
            &lift3(wi),
            &lift3(wo),
            J::constant(ci),
            J::constant(co),
            J::var(cfg.roughness, 0),
            J::var(cfg.f0, 1),
        )
    };
    let spec = J::constant(cfg.ks) * J::var(spec_value, 2) * lobe;
    let diffuse = eval_lambertian(albedo) * cfg.kd;
    BrdfGradient {
        value: diffuse + Vec3::repeat(spec.v),
        d_roughness: Vec3::repeat(spec.d[0]),
        d_f0: Vec3::repeat(spec.d[1]),
        d_spec_value: Vec3::repeat(spec.d[2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_upper(rng: &mut ChaCha8Rng, n: &Vec3) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let l = v.norm();
            if l > 1e-3 && l <= 1.0 && v.dot(n) > 1e-3 {
                return v / l;
            }
        }
    }

    #[test]
    fn lambertian_is_albedo_over_pi() {
        let v = eval_lambertian(Vec3::repeat(0.6));
        assert!((v.x - 0.6 / PI).abs() < 1e-15);
        assert!((v.x - 0.19099).abs() < 1e-5);
        assert_eq!(eval_lambertian(Vec3::zeros()), Vec3::zeros());
    }

    #[test]
    fn lambertian_white_furnace() {
        // Uniform hemisphere quadrature of f·cosθ.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let albedo = Vec3::new(0.8, 0.5, 0.2);
        let mut acc = Vec3::zeros();
        let n = 100_000;
        for _ in 0..n {
            let z: f64 = rng.random();
            acc += eval_lambertian(albedo) * z * (2.0 * PI);
        }
        let est = acc / n as f64;
        for c in 0..3 {
            assert!((est[c] - albedo[c]).abs() <= 0.01 * albedo[c], "{est:?}");
        }
    }

    #[test]
    fn cook_torrance_below_surface_is_zero() {
        let n = Vec3::z();
        let up = Vec3::new(0.0, 0.6, 0.8);
        let down = Vec3::new(0.0, 0.6, -0.8);
        assert_eq!(eval_cook_torrance(&n, &down, &up, 0.3, 0.04), 0.0);
        assert_eq!(eval_cook_torrance(&n, &up, &down, 0.3, 0.04), 0.0);
    }

    #[test]
    fn cook_torrance_normal_incidence() {
        // alpha = r², D(h = n) = 1 / (pi alpha²), F = f0, G = 1, denominator 4.
        let r: f64 = 0.3;
        let expect = 0.04 / (PI * r.powi(4)) / 4.0;
        assert!((expect - 0.392975).abs() < 1e-6);
        let n = Vec3::z();
        let got = eval_cook_torrance(&n, &n, &n, r, 0.04);
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
    }

    #[test]
    fn cook_torrance_matches_textbook_formula() {
        // Reference written from the textbook form with tan² via sin²/cos².
        fn reference(n: &Vec3, wi: &Vec3, wo: &Vec3, r: f64, f0: f64) -> f64 {
            let a = r * r;
            let h = (wi + wo).normalize();
            let cos_h = n.dot(&h);
            let tan2_h = (1.0 - cos_h * cos_h) / (cos_h * cos_h);
            let d = a * a / (PI * cos_h.powi(4) * (a * a + tan2_h).powi(2));
            let f = f0 + (1.0 - f0) * (1.0 - wi.dot(&h)).powi(5);
            let lam = |w: &Vec3| {
                let c = n.dot(w);
                let t2 = (1.0 - c * c) / (c * c);
                0.5 * (-1.0 + (1.0 + a * a * t2).sqrt())
            };
            let g = 1.0 / (1.0 + lam(wi) + lam(wo));
            d * f * g / (4.0 * n.dot(wi) * n.dot(wo))
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Vec3::z();
        for _ in 0..500 {
            let wi = random_upper(&mut rng, &n);
            let wo = random_upper(&mut rng, &n);
            let r = rng.random_range(0.05..1.0);
            let got = eval_cook_torrance(&n, &wi, &wo, r, 0.04);
            let want = reference(&n, &wi, &wo, r, 0.04);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-6), "{got} {want}");
        }
    }

    #[test]
    fn reciprocity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = BrdfConfig::default();
        for _ in 0..1000 {
            let n = random_upper(&mut rng, &Vec3::z());
            let wi = random_upper(&mut rng, &n);
            let wo = random_upper(&mut rng, &n);
            let a = eval_brdf(&cfg, Vec3::repeat(0.5), 0.7, &n, &wi, &wo);
            let b = eval_brdf(&cfg, Vec3::repeat(0.5), 0.7, &n, &wo, &wi);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn brdf_combination_cases() {
        let n = Vec3::z();
        let wi = Vec3::new(0.3, 0.0, 0.9539392014169456);
        let wo = Vec3::new(-0.2, 0.4, 0.8944271909999159);
        let albedo = Vec3::new(0.7, 0.5, 0.3);
        let no_spec = BrdfConfig { ks: 0.0, ..BrdfConfig::default() };
        assert_eq!(eval_brdf(&no_spec, albedo, 0.9, &n, &wi, &wo), eval_lambertian(albedo));
        let nothing = BrdfConfig { kd: 0.0, ..BrdfConfig::default() };
        assert_eq!(eval_brdf(&nothing, albedo, 0.0, &n, &wi, &wo), Vec3::zeros());

        let both = BrdfConfig { kd: 1.0, ks: 1.0, roughness: 0.3, f0: 0.04 };
        let v = eval_brdf(&both, Vec3::repeat(0.6), 1.0, &n, &n, &n);
        let expect = 0.6 / PI + 0.04 / (PI * 0.3f64.powi(4)) / 4.0;
        assert!((v.x - expect).abs() < 1e-12);
    }

    #[test]
    fn brdf_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let n = random_upper(&mut rng, &Vec3::z());
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let wi = random_upper(&mut rng, &Vec3::new(a, 0.3, 1.0).normalize());
            let wo = random_upper(&mut rng, &Vec3::new(0.2, b, 1.0).normalize());
            let cfg = BrdfConfig {
                kd: rng.random(),
                ks: rng.random(),
                roughness: rng.random_range(0.02..1.0),
                f0: rng.random_range(0.01..0.99),
            };
            let v = eval_brdf(&cfg, Vec3::new(rng.random(), rng.random(), rng.random()), rng.random(), &n, &wi, &wo);
            assert!(v.iter().all(|c| *c >= 0.0 && c.is_finite()));
        }
    }

    #[test]
    fn brdf_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = Vec3::z();
        for _ in 0..100 {
            let wi = random_upper(&mut rng, &n);
            let wo = random_upper(&mut rng, &n);
            let cfg = BrdfConfig {
                kd: 0.8,
                ks: 1.0,
                roughness: rng.random_range(0.1..0.95),
                f0: rng.random_range(0.02..0.9),
            };
            let s: f64 = rng.random_range(0.05..0.95);
            let albedo = Vec3::repeat(0.4);
            let g = eval_brdf_gradient(&cfg, albedo, s, &n, &wi, &wo);
            assert_eq!(g.value, eval_brdf(&cfg, albedo, s, &n, &wi, &wo));
            let h = 1e-6;
            let check = |analytic: f64, plus: Vec3, minus: Vec3| {
                let fd = (plus.x - minus.x) / (2.0 * h);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-12);
                assert!(rel < 1e-4 || (analytic - fd).abs() < 1e-9, "{analytic} vs {fd}");
            };
            let at = |c: BrdfConfig, s: f64| eval_brdf(&c, albedo, s, &n, &wi, &wo);
            check(
                g.d_roughness.x,
                at(BrdfConfig { roughness: cfg.roughness + h, ..cfg }, s),
                at(BrdfConfig { roughness: cfg.roughness - h, ..cfg }, s),
            );
            check(g.d_f0.x, at(BrdfConfig { f0: cfg.f0 + h, ..cfg }, s), at(BrdfConfig { f0: cfg.f0 - h, ..cfg }, s));
            check(g.d_spec_value.x, at(cfg, s + h), at(cfg, s - h));
        }
    }

    #[test]
    fn specular_map_constant_and_nodes() {
        let m = SpecularMap::constant(32, 0.37).unwrap();
        for uv in [[0.0, 0.0], [0.3, 0.9], [1.0, 1.0], [-2.0, 5.0]] {
            assert!((m.sample(uv).value - 0.37).abs() < 1e-12);
        }
        let vals: Vec<f64> = (0..32 * 32).map(|i| ((i * 37) % 101) as f64 / 101.0 * 0.9 + 0.05).collect();
        let m = SpecularMap::from_values(32, &vals).unwrap();
        for (r, c) in [(0, 0), (5, 17), (31, 31), (12, 0)] {
            let uv = [(c as f64 + 0.5) / 32.0, (r as f64 + 0.5) / 32.0];
            assert_eq!(m.sample(uv).value, m.value(r, c));
        }
        let (r, c) = (9, 20);
        let uv = [(c as f64 + 1.0) / 32.0, (r as f64 + 1.0) / 32.0];
        let mean = (m.value(r, c) + m.value(r, c + 1) + m.value(r + 1, c) + m.value(r + 1, c + 1)) / 4.0;
        assert!((m.sample(uv).value - mean).abs() < 1e-15);
    }

    #[test]
    fn specular_map_uv_derivative() {
        let vals: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7).sin() * 0.4 + 0.5).collect();
        let m = SpecularMap::from_values(8, &vals).unwrap();
        let uv = [0.41, 0.63];
        let s = m.sample(uv);
        let h = 1e-7;
        let du = (m.sample([uv[0] + h, uv[1]]).value - m.sample([uv[0] - h, uv[1]]).value) / (2.0 * h);
        let dv = (m.sample([uv[0], uv[1] + h]).value - m.sample([uv[0], uv[1] - h]).value) / (2.0 * h);
        assert!((du - s.d_uv[0]).abs() < 1e-6 && (dv - s.d_uv[1]).abs() < 1e-6);
        let recon: f64 = s.texels.iter().zip(s.weights).map(|(&t, w)| m.values()[t] * w).sum();
        assert!((recon - s.value).abs() < 1e-15);
    }

    #[test]
    fn specular_map_rejects_wrong_size() {
        assert!(SpecularMap::from_raw(32, vec![0.0; 10]).is_err());
    }

    /// Directional-hemispherical reflectance toward `wo` (normal +z). The
    /// lobe is integrated by sampling half vectors from the normal
    /// distribution.
    pub(super) fn reflectance(cfg: &BrdfConfig, albedo: f64, spec: f64, wo: &Vec3, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Vec3::z();
        let a2 = cfg.roughness.powi(4);
        let (mut diffuse, mut lobe) = (0.0, 0.0);
        for _ in 0..n {
            diffuse += eval_lambertian(Vec3::repeat(albedo)).x * PI;
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let cos_h = 1.0 / (1.0 + a2 * u / (1.0 - u)).sqrt();
            let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
            let phi = 2.0 * PI * v;
            let h = Vec3::new(sin_h * phi.cos(), sin_h * phi.sin(), cos_h);
            let oh = wo.dot(&h);
            let wi = h * (2.0 * oh) - wo;
            if oh <= 0.0 || wi.z <= 0.0 {
                continue;
            }
            let dd = cos_h * cos_h * (a2 - 1.0) + 1.0;
            let pdf = a2 / (PI * dd * dd) * cos_h / (4.0 * oh);
            lobe += eval_cook_torrance(&normal, &wi, wo, cfg.roughness, cfg.f0) * wi.z / pdf;
        }
        (cfg.kd * diffuse + cfg.ks * spec * lobe) / n as f64
    }

    #[test]
    fn reflectance_quadrature_agrees_with_cosine_sampling() {
        let cfg = BrdfConfig { kd: 0.5, ks: 0.5, roughness: 0.6, f0: 0.04 };
        let wo = Vec3::new(0.5, 0.0, 0.75f64.sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let r = u.sqrt();
            let wi = Vec3::new(r * (2.0 * PI * v).cos(), r * (2.0 * PI * v).sin(), (1.0 - u).sqrt());
            acc += eval_brdf(&cfg, Vec3::repeat(0.8), 1.0, &Vec3::z(), &wi, &wo).x * PI;
        }
        let plain = acc / n as f64;
        let sampled = reflectance(&cfg, 0.8, 1.0, &wo, 100_000, 3);
        assert!((plain - sampled).abs() < 5e-3, "{plain} vs {sampled}");
    }

    #[test]
    fn reflectance_is_bounded_over_the_roughness_grid() {
        for roughness in [0.1, 0.3, 0.6, 1.0] {
            for (kd, ks) in [(1.0, 0.0), (0.5, 0.5), (0.0, 1.0)] {
                let cfg = BrdfConfig { kd, ks, roughness, f0: 0.04 };
                for theta in [0.0f64, 30.0, 60.0, 85.0] {
                    let t = theta.to_radians();
                    let wo = Vec3::new(t.sin(), 0.0, t.cos());
                    let rho = reflectance(&cfg, 1.0, 1.0, &wo, 100_000, 1);
                    assert!(rho <= 1.02, "roughness {roughness} kd {kd} ks {ks} theta {theta}: {rho}");
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn brdf_is_reciprocal_and_non_negative(
            seed in 0u64..u64::MAX,
            roughness in 0.02f64..1.0,
            kd in 0.0f64..1.0,
            ks in 0.0f64..1.0,
            spec in 0.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = random_upper(&mut rng, &Vec3::z());
            let (wi, wo) = (random_upper(&mut rng, &n), random_upper(&mut rng, &n));
            let cfg = BrdfConfig { kd, ks, roughness, ..BrdfConfig::default() };
            let albedo = Vec3::new(0.8, 0.5, 0.3);
            let f = eval_brdf(&cfg, albedo, spec, &n, &wi, &wo);
            proptest::prop_assert_eq!(f, eval_brdf(&cfg, albedo, spec, &n, &wo, &wi));
            proptest::prop_assert!(f.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }
}
