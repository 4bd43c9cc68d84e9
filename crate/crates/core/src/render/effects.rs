//! Render-time secondary rays for analytic spheres inserted into a SaLF
//! scene: mirror reflection, glass with Schlick-weighted reflection and
//! refraction, and sun shadows cast onto the volume. No gradients flow
//! through this path.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::scene::Scene;
use crate::sensors::Ray;

use super::ray::{integrate_ray, RenderOptions, SceneOctrees};
use super::render_depth;

/// Color multiplier for volume surface points whose sun ray is blocked.
pub const SHADOW_FACTOR: f64 = 0.5;
/// Minimum ray parameter for sphere hits, to step off the surface a
/// secondary ray starts on.
const HIT_EPSILON: f64 = 1e-7;
const AMBIENT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Material {
    Mirror,
    Glass { ior: f64 },
    Opaque { albedo: [f64; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedSphere {
    pub center: Vec3,
    pub radius: f64,
    pub material: Material,
}

impl InjectedSphere {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(SalfError::InvalidConfig(format!(
                "sphere radius {} must be positive",
                self.radius
            )));
        }
        if let Material::Glass { ior } = self.material {
            if !(ior >= 1.0) {
                return Err(SalfError::InvalidConfig(format!(
                    "index of refraction {ior} below 1"
                )));
            }
        }
        Ok(())
    }

    /// Smallest root of the ray/sphere quadratic above `t_min`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<f64> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        [-b - sq, -b + sq].into_iter().find(|&t| t > t_min)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm_squared() < self.radius * self.radius
    }
}

/// Schlick's approximation to the Fresnel reflectance going from index `n1`
/// to `n2` at incidence cosine `cos_i`. Exactly zero for matched indices.
pub fn schlick(cos_i: f64, n1: f64, n2: f64) -> f64 {
    if n1 == n2 {
        return 0.0;
    }
    let r0 = ((n1 - n2) / (n1 + n2)).powi(2);
    r0 + (1.0 - r0) * (1.0 - cos_i).powi(5)
}

pub fn reflect(d: &Vec3, n: &Vec3) -> Vec3 {
    (d - n * (2.0 * d.dot(n))).normalize()
}

/// Snell refraction of unit `d` through a surface with unit normal `n`
/// facing against `d`, with `eta = n1 / n2`. `None` on total internal
/// reflection.
pub fn refract(d: &Vec3, n: &Vec3, eta: f64) -> Option<Vec3> {
    let cos_i = -d.dot(n);
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return None;
    }
    Some((d * eta + n * (eta * cos_i - k.sqrt())).normalize())
}

struct Tracer<'a> {
    scene: &'a Scene,
    octrees: &'a SceneOctrees,
    spheres: &'a [InjectedSphere],
    sun_dir: Vec3,
    opts: RenderOptions,
}

impl Tracer<'_> {
    fn nearest_sphere(&self, origin: &Vec3, dir: &Vec3) -> Option<(usize, f64)> {
        self.spheres
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.intersect(origin, dir, HIT_EPSILON).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn occluded(&self, p: &Vec3) -> bool {
        self.spheres
            .iter()
            .any(|s| s.intersect(p, &self.sun_dir, HIT_EPSILON).is_some())
    }

    /// Options for integrating a sub-path whose contribution is scaled by
    /// `throughput`, so that early termination happens at the same total
    /// opacity as one uninterrupted ray.
    fn sub_options(&self, throughput: f64, t_max: f64, background: Vec3) -> RenderOptions {
        let residual = 1.0 - self.opts.termination;
        RenderOptions {
            termination: if throughput > residual {
                1.0 - residual / throughput
            } else {
                0.0
            },
            t_max,
            background,
            keep_segments: false,
        }
    }

    /// `inside` names the sphere the ray currently travels through; no volume
    /// is integrated inside a sphere.
    fn trace(
        &self,
        ray: &Ray,
        inside: Option<usize>,
        bounces: u32,
        throughput: f64,
    ) -> Result<Vec3> {
        let hit = self.nearest_sphere(&ray.origin, &ray.dir);
        if inside.is_some() {
            let Some((idx, t)) = hit else {
                return Ok(self.opts.background);
            };
            return self.shade_sphere(ray, idx, t, inside, bounces, throughput);
        }
        let Some((idx, t)) = hit else {
            let opts = self.sub_options(throughput, self.opts.t_max, self.opts.background);
            let rec = integrate_ray(self.scene, self.octrees, ray, &opts)?;
            let mut color = rec.color;
            if !self.spheres.is_empty() {
                if let Some(depth) = render_depth(&rec) {
                    if self.occluded(&ray.at(depth)) {
                        color *= SHADOW_FACTOR;
                    }
                }
            }
            return Ok(color);
        };
        let opts = self.sub_options(throughput, t.min(self.opts.t_max), Vec3::zeros());
        let rec = integrate_ray(self.scene, self.octrees, ray, &opts)?;
        if rec.final_transmittance <= 0.0 {
            return Ok(rec.color);
        }
        let sphere_color = self.shade_sphere(
            ray,
            idx,
            t,
            inside,
            bounces,
            throughput * rec.final_transmittance,
        )?;
        Ok(rec.color + sphere_color * rec.final_transmittance)
    }

    #[allow(clippy::too_many_arguments)]
    fn shade_sphere(
        &self,
        ray: &Ray,
        idx: usize,
        t: f64,
        inside: Option<usize>,
        bounces: u32,
        throughput: f64,
    ) -> Result<Vec3> {
        let sphere = &self.spheres[idx];
        let p = ray.at(t);
        let outward = (p - sphere.center) / sphere.radius;
        let entering = inside != Some(idx);
        let n = if entering { outward } else { -outward };
        let spawn = |dir: Vec3| Ray {
            origin: p,
            dir,
            ..*ray
        };
        match sphere.material {
            Material::Opaque { albedo } => {
                let lit = if self.occluded_from(&p, idx) {
                    0.0
                } else {
                    outward.dot(&self.sun_dir).max(0.0)
                };
                Ok(Vec3::from(albedo) * (AMBIENT + (1.0 - AMBIENT) * lit))
            }
            _ if bounces == 0 => Ok(self.opts.background),
            Material::Mirror => self.trace(
                &spawn(reflect(&ray.dir, &n)),
                inside,
                bounces - 1,
                throughput,
            ),
            Material::Glass { ior } => {
                let (n1, n2) = if entering { (1.0, ior) } else { (ior, 1.0) };
                let cos_i = (-ray.dir.dot(&n)).clamp(0.0, 1.0);
                let refracted = refract(&ray.dir, &n, n1 / n2);
                let fresnel = if refracted.is_some() {
                    schlick(cos_i, n1, n2)
                } else {
                    1.0
                };
                let mut color = Vec3::zeros();
                if fresnel > 0.0 {
                    color += self.trace(
                        &spawn(reflect(&ray.dir, &n)),
                        inside,
                        bounces - 1,
                        throughput * fresnel,
                    )? * fresnel;
                }
                if let Some(dir) = refracted {
                    if fresnel < 1.0 {
                        let next_inside = if entering { Some(idx) } else { None };
                        color += self.trace(
                            &spawn(dir),
                            next_inside,
                            bounces - 1,
                            throughput * (1.0 - fresnel),
                        )? * (1.0 - fresnel);
                    }
                }
                Ok(color)
            }
        }
    }

    fn occluded_from(&self, p: &Vec3, skip: usize) -> bool {
        self.spheres
            .iter()
            .enumerate()
            .any(|(i, s)| i != skip && s.intersect(p, &self.sun_dir, HIT_EPSILON).is_some())
    }
}

/// Color of a primary ray through the scene with analytic spheres. The
/// nearest sphere hit occludes the volume behind it; the volume in front is
/// composited over the sphere's shaded color. Each reflection or refraction
/// at a sphere surface consumes one bounce.
pub fn trace_effects(
    scene: &Scene,
    octrees: &SceneOctrees,
    ray: &Ray,
    spheres: &[InjectedSphere],
    sun_dir: &Vec3,
    max_bounces: u32,
    opts: &RenderOptions,
) -> Result<Vec3> {
    if max_bounces == 0 {
        return Err(SalfError::InvalidConfig(
            "max_bounces must be at least 1".into(),
        ));
    }
    for s in spheres {
        s.validate()?;
    }
    let tracer = Tracer {
        scene,
        octrees,
        spheres,
        sun_dir: sun_dir.normalize(),
        opts: RenderOptions {
            keep_segments: false,
            ..*opts
        },
    };
    let inside = spheres.iter().position(|s| s.contains(&ray.origin));
    tracer.trace(ray, inside, max_bounces, 1.0)
}
