//! Independent ground-truth machinery: adaptive quadrature for line
//! integrals, finite-difference derivatives, and (further down) a
//! ray-marching reference renderer and a toy dataset generator.
//!
//! Nothing here shares code with the closed-form paths it validates: the
//! quadrature integrates the pointwise density, the finite differences probe
//! scalar functions as black boxes, and the ray marcher composites sampled
//! sums instead of antiderivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::appearance::sh_eval;
use crate::error::{Error, Result};
use crate::geometry::{self, quat_to_rotation_matrix, Ray, Vec3};
use crate::image_buf::ImageF;
use crate::io::{default_split, Dataset};
use crate::neural_field::NeuralPrimitive;
use crate::renderer::{Camera, RenderConfig};
use crate::scene::Scene;

/// Tolerances for adaptive Simpson integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { abs_tol: 1e-10, rel_tol: 1e-9, max_depth: 40 }
    }
}

/// Adaptive Simpson integration of `f` over [a, b] with Richardson
/// extrapolation. The acceptance test |S_left + S_right − S_whole| ≤ 15·tol
/// bounds the error of the extrapolated value by tol.
pub fn quad_scalar<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64> {
    debug_assert!(cfg.abs_tol > 0.0 && cfg.rel_tol > 0.0);
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = cfg.abs_tol.max(cfg.rel_tol * whole.abs());
    adapt(f, a, fa, m, fm, b, fb, whole, tol, cfg.max_depth)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    m: f64,
    fm: f64,
    b: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureDepth { achieved: delta.abs() / 15.0, requested: tol });
    }
    Ok(adapt(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1)?
        + adapt(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1)?)
}

/// Reference for the closed-form line integral: adaptive quadrature of the
/// pointwise density along the ray.
pub fn quad_integral(
    p: &NeuralPrimitive,
    r: &Ray,
    t_in: f64,
    t_out: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    debug_assert!(t_in <= t_out);
    quad_scalar(&|t| p.density(&r.point_at(t)), t_in, t_out, cfg)
}

/// Central difference (f(θ+h) − f(θ−h)) / 2h with h = step·max(1, |θ|).
pub fn fd_scalar<F: Fn(f64) -> f64>(f: &F, theta: f64, step: f64) -> f64 {
    let h = step * theta.abs().max(1.0);
    (f(theta + h) - f(theta - h)) / (2.0 * h)
}

/// Naive antiderivative difference
/// Σ_k W2_k·(sin(a_k + h_k·t_out) − sin(a_k + h_k·t_in))/h_k + Δt·b2.
/// Exact but singular at h_k = 0; kept as an independent form the stable
/// product implementation is cross-checked against.
pub fn naive_line_integral(p: &NeuralPrimitive, r: &Ray, t_in: f64, t_out: f64) -> f64 {
    let ph = p.phases(r);
    let net = &p.net;
    let mut acc = net.b2 * (t_out - t_in);
    for k in 0..net.hidden() {
        acc += net.w2[k] * ((ph.a[k] + ph.h[k] * t_out).sin() - (ph.a[k] + ph.h[k] * t_in).sin())
            / ph.h[k];
    }
    acc
}

/// Sorted union of possibly overlapping [t_in, t_out] intervals.
fn merge_intervals(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.retain(|(a, b)| b > a);
    intervals.sort_unstable_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (a, b) in intervals {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

/// Reference renderer: quadrature volume rendering with a finite sum of
/// midpoint-stratified samples over the union of a ray's hit segments
/// (empty space contributes nothing and is skipped). Per sample, density is
/// the sum over primitives containing the point and color the
/// density-weighted mix of their view-evaluated SH colors. Static fields
/// only; shares no arithmetic with the closed-form compositor.
pub fn raymarch_render(
    scene: &Scene,
    cam: &Camera,
    cfg: &RenderConfig,
    n_samples: usize,
) -> Result<ImageF> {
    let n_samples = n_samples.max(2);
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * 3];
            for x in 0..w {
                let ray = cam.pixel_ray(x as f64, y as f64, cfg.t_near, cfg.t_far);
                let c = raymarch_ray(scene, &ray, cfg.background, n_samples);
                row[3 * x] = c.x;
                row[3 * x + 1] = c.y;
                row[3 * x + 2] = c.z;
            }
            row
        })
        .collect();
    ImageF::from_data(w, h, rows.concat())
}

fn raymarch_ray(scene: &Scene, ray: &Ray, background: Vec3, n_samples: usize) -> Vec3 {
    // Hit list with per-primitive view colors evaluated once.
    struct Hit {
        t_in: f64,
        t_out: f64,
        prim: usize,
        color: Vec3,
    }
    let mut hits = Vec::new();
    for (i, p) in scene.primitives.iter().enumerate() {
        if let Some(seg) = geometry::intersect(&p.geometry, ray) {
            hits.push(Hit {
                t_in: seg.t_in,
                t_out: seg.t_out,
                prim: i,
                color: sh_eval(&p.sh, &ray.direction),
            });
        }
    }
    let union = merge_intervals(hits.iter().map(|h| (h.t_in, h.t_out)).collect());
    let total: f64 = union.iter().map(|(a, b)| b - a).sum();
    if total == 0.0 {
        return background;
    }

    let delta = total / n_samples as f64;
    let mut color = Vec3::zeros();
    let mut transmittance = 1.0;
    let mut seg_idx = 0;
    let mut seg_start_arc = 0.0; // arc length consumed before union[seg_idx]
    for i in 0..n_samples {
        let s = (i as f64 + 0.5) * delta;
        while s > seg_start_arc + (union[seg_idx].1 - union[seg_idx].0) {
            seg_start_arc += union[seg_idx].1 - union[seg_idx].0;
            seg_idx += 1;
        }
        let t = union[seg_idx].0 + (s - seg_start_arc);
        let point = ray.point_at(t);
        let mut sigma = 0.0;
        let mut weighted = Vec3::zeros();
        for hit in &hits {
            if t >= hit.t_in && t <= hit.t_out {
                let d = scene.primitives[hit.prim].density(&point);
                sigma += d;
                weighted += hit.color * d;
            }
        }
        let alpha = 1.0 - (-sigma * delta).exp();
        if sigma != 0.0 {
            color += weighted / sigma * (alpha * transmittance);
        }
        transmittance *= 1.0 - alpha;
    }
    color + background * transmittance
}

/// Toy-target solid shapes, described by signed distance.
#[derive(Debug, Clone, PartialEq)]
pub enum SolidShape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    /// Ring around the local z axis.
    Torus { major: f64, minor: f64 },
}

impl SolidShape {
    /// Signed distance in the solid's local frame (negative inside).
    fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            SolidShape::Sphere { radius } => p.norm() - radius,
            SolidShape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            SolidShape::Torus { major, minor } => {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
                (ring * ring + p.z * p.z).sqrt() - minor
            }
        }
    }

    /// Radius of a bounding sphere around the local origin.
    fn bounding_radius(&self) -> f64 {
        match self {
            SolidShape::Sphere { radius } => *radius,
            SolidShape::Box { half_extents } => half_extents.norm(),
            SolidShape::Torus { major, minor } => major + minor,
        }
    }
}

/// One posed solid with an interior density, a linear soft edge, and a flat
/// albedo.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSolid {
    pub shape: SolidShape,
    pub center: Vec3,
    /// (w, x, y, z) orientation quaternion.
    pub rotation: [f64; 4],
    /// Interior density value (≥ 0).
    pub density: f64,
    /// Width of the linear density ramp ending at the surface; 0 = hard edge.
    pub edge_width: f64,
    pub albedo: Vec3,
}

impl AnalyticSolid {
    pub fn new(shape: SolidShape, density: f64, albedo: Vec3) -> Self {
        AnalyticSolid {
            shape,
            center: Vec3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            density,
            edge_width: 0.0,
            albedo,
        }
    }

    /// Density contribution at a world point: full inside, ramping linearly
    /// to zero across `edge_width` at the boundary.
    pub fn density_at(&self, x: &Vec3) -> f64 {
        let rot = quat_to_rotation_matrix(&self.rotation).expect("valid quaternion");
        let local = rot.transpose() * (x - self.center);
        let s = self.shape.sdf(&local);
        let weight = if self.edge_width > 0.0 {
            (-s / self.edge_width).clamp(0.0, 1.0)
        } else if s < 0.0 {
            1.0
        } else {
            0.0
        };
        self.density * weight
    }
}

/// Union of analytic solids: a nonnegative density field with per-solid
/// albedos, used as a ray-marched ground-truth target.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticDensity {
    pub solids: Vec<AnalyticSolid>,
}

impl AnalyticDensity {
    pub fn density(&self, x: &Vec3) -> f64 {
        self.solids.iter().map(|s| s.density_at(x)).sum()
    }

    /// Density-weighted albedo mix; zero where density vanishes.
    pub fn color(&self, x: &Vec3) -> Vec3 {
        let mut total = 0.0;
        let mut weighted = Vec3::zeros();
        for s in &self.solids {
            let d = s.density_at(x);
            total += d;
            weighted += s.albedo * d;
        }
        if total > 0.0 {
            weighted / total
        } else {
            Vec3::zeros()
        }
    }

    /// Radius of a world-origin sphere containing every solid's support.
    pub fn bounding_radius(&self) -> f64 {
        self.solids
            .iter()
            .map(|s| s.center.norm() + s.shape.bounding_radius() + s.edge_width)
            .fold(0.0, f64::max)
    }

    /// Soft-edged warm-gray sphere, the default toy target.
    pub fn toy_sphere() -> Self {
        let mut s = AnalyticSolid::new(
            SolidShape::Sphere { radius: 0.8 },
            2.0,
            Vec3::new(0.75, 0.65, 0.55),
        );
        s.edge_width = 0.1;
        AnalyticDensity { solids: vec![s] }
    }

    /// Tilted teal box.
    pub fn toy_box() -> Self {
        let mut s = AnalyticSolid::new(
            SolidShape::Box { half_extents: Vec3::new(0.6, 0.45, 0.3) },
            2.0,
            Vec3::new(0.2, 0.7, 0.65),
        );
        s.rotation = [0.92, 0.25, 0.3, 0.0];
        s.edge_width = 0.08;
        AnalyticDensity { solids: vec![s] }
    }

    /// Violet torus tipped out of the camera ring plane.
    pub fn toy_torus() -> Self {
        let mut s = AnalyticSolid::new(
            SolidShape::Torus { major: 0.6, minor: 0.22 },
            2.5,
            Vec3::new(0.6, 0.3, 0.8),
        );
        s.rotation = [0.9, 0.435, 0.0, 0.0];
        s.edge_width = 0.06;
        AnalyticDensity { solids: vec![s] }
    }

    /// Entry/exit of the ray against each solid's bounding sphere.
    fn hit_intervals(&self, ray: &Ray) -> Vec<(f64, f64)> {
        let mut intervals = Vec::new();
        for s in &self.solids {
            let r = s.shape.bounding_radius() + s.edge_width;
            let oc = ray.origin - s.center;
            let b = oc.dot(&ray.direction);
            let c = oc.norm_squared() - r * r;
            let disc = b * b - c;
            if disc <= 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            let (t0, t1) = (-b - sq, -b + sq);
            let (t0, t1) = (t0.max(ray.t_near), t1.min(ray.t_far));
            if t1 > t0 {
                intervals.push((t0, t1));
            }
        }
        merge_intervals(intervals)
    }
}

/// Ray-marched image of an analytic density field (flat albedos), with
/// bounding-sphere empty-space skipping.
pub fn raymarch_analytic(
    shape: &AnalyticDensity,
    cam: &Camera,
    background: Vec3,
    n_samples: usize,
) -> ImageF {
    let n_samples = n_samples.max(2);
    let far = 10.0 * shape.bounding_radius().max(1.0) + cam.position.norm();
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * 3];
            for x in 0..w {
                let ray = cam.pixel_ray(x as f64, y as f64, 1e-4, far);
                let union = shape.hit_intervals(&ray);
                let total: f64 = union.iter().map(|(a, b)| b - a).sum();
                let mut color = Vec3::zeros();
                let mut transmittance = 1.0;
                if total > 0.0 {
                    let delta = total / n_samples as f64;
                    let mut seg_idx = 0;
                    let mut seg_start_arc = 0.0;
                    for i in 0..n_samples {
                        let s = (i as f64 + 0.5) * delta;
                        while s > seg_start_arc + (union[seg_idx].1 - union[seg_idx].0) {
                            seg_start_arc += union[seg_idx].1 - union[seg_idx].0;
                            seg_idx += 1;
                        }
                        let t = union[seg_idx].0 + (s - seg_start_arc);
                        let point = ray.point_at(t);
                        let sigma = shape.density(&point);
                        if sigma > 0.0 {
                            let alpha = 1.0 - (-sigma * delta).exp();
                            color += shape.color(&point) * (alpha * transmittance);
                            transmittance *= 1.0 - alpha;
                        }
                    }
                }
                let c = color + background * transmittance;
                row[3 * x] = c.x;
                row[3 * x + 1] = c.y;
                row[3 * x + 2] = c.z;
            }
            row
        })
        .collect();
    ImageF::from_data(w, h, rows.concat()).expect("row assembly matches dimensions")
}

/// Number of ray-march samples per pixel when generating toy ground truth.
const TOY_MARCH_SAMPLES: usize = 512;

/// Synthetic dataset: `n_views` cameras on a fibonacci hemisphere of radius
/// 3× the target's extent, all looking at the origin, with ground-truth
/// images ray-marched from the analytic density. Deterministic per seed
/// (the seed rotates the hemisphere's azimuth).
pub fn gen_toy_dataset(
    shape: &AnalyticDensity,
    n_views: usize,
    resolution: usize,
    seed: u64,
    background: Vec3,
) -> Result<Dataset> {
    assert!(n_views >= 2, "toy datasets need at least 2 views");
    assert!(resolution >= 8, "toy datasets need a usable resolution");
    let extent = shape.bounding_radius();
    let radius = 3.0 * extent.max(1e-3);
    let azimuth_offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..std::f64::consts::TAU);
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());

    // Enumerate spiral slots starting from the middle elevation (wrapping
    // around), so that view 0 — the default holdout — is surrounded by
    // training views in both elevation and azimuth instead of sitting at the
    // edge of the covered directions.
    let cameras: Vec<Camera> = (0..n_views)
        .map(|i| (i + n_views / 2) % n_views)
        .map(|i| {
            let z = (i as f64 + 0.5) / n_views as f64;
            let ring = (1.0 - z * z).sqrt();
            let phi = i as f64 * golden_angle + azimuth_offset;
            let position = Vec3::new(ring * phi.cos(), ring * phi.sin(), z) * radius;
            Camera::look_at(
                position,
                Vec3::zeros(),
                Vec3::new(0.0, 0.0, 1.0),
                resolution as f64,
                resolution as f64,
                resolution,
                resolution,
            )
        })
        .collect();
    let images: Vec<ImageF> = cameras
        .iter()
        .map(|cam| raymarch_analytic(shape, cam, background, TOY_MARCH_SAMPLES))
        .collect();
    Dataset::new(cameras, images, default_split(n_views), background)
}
