//! Forward image synthesis and the reverse pass driving all gradients.
//!
//! Per pixel: generate the view ray, intersect it with every (frustum-kept)
//! primitive, sort hits by entry distance, and blend opacity kernels front
//! to back. The backward pass differentiates exactly the truncated blend the
//! forward pass computed, dispatching into the kernel and color backward
//! routines.
//!
//! Determinism: the forward pass writes disjoint pixels. The backward pass
//! reduces per-primitive gradients over fixed row blocks and merges the
//! block partials in block order, so every gradient slot sees the same
//! addition sequence regardless of thread count — results are bit-identical
//! from 1 to N threads.

use rayon::prelude::*;
use std::collections::HashMap;

use crate::appearance::{sh_backward_dc, sh_eval_dc};
use crate::error::{Error, Result};
use crate::geometry::{self, Mat3, Ray, SegmentHit, Vec3};
use crate::image_buf::ImageF;
use crate::neural_field::{accumulate_kernel_gradient, integral_from_phases, kappa};
use crate::scene::{GradientBuffer, Scene};

/// Rows per backward reduction block. Fixed (not thread-count dependent) so
/// the merge order, and therefore every floating-point sum, is reproducible.
const BACKWARD_BLOCK_ROWS: usize = 16;

/// Pinhole camera with a world-from-camera rigid pose; the camera looks
/// along its local +z axis, image x grows right, image y grows down.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-from-camera rotation (columns are the camera axes in world
    /// coordinates).
    pub rotation: Mat3,
    /// Camera center in world coordinates.
    pub position: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Normalized timestamp in [0,1] for dynamic scenes; `None` renders the
    /// static field.
    pub time: Option<f64>,
}

impl Camera {
    /// Camera at `position` looking at `target`, with `up` fixing the roll.
    /// Field of view is set by the intrinsics.
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let z = (target - position).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // Looking along `up`; pick an arbitrary horizontal right vector.
            x = z.cross(&Vec3::new(0.0, 1.0, 0.0));
            if x.norm() < 1e-9 {
                x = z.cross(&Vec3::new(1.0, 0.0, 0.0));
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Camera {
            rotation: Mat3::from_columns(&[x, y, z]),
            position,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            time: None,
        }
    }

    /// Ray through the center of pixel (x, y) (integer pixel indices).
    pub fn pixel_ray(&self, x: f64, y: f64, t_near: f64, t_far: f64) -> Ray {
        let dir_cam = Vec3::new((x + 0.5 - self.cx) / self.fx, (y + 0.5 - self.cy) / self.fy, 1.0);
        let dir = (self.rotation * dir_cam).normalize();
        Ray::new(self.position, dir, t_near, t_far)
    }
}

/// Per-render knobs; `background` is what compositing falls through to.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub background: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    /// Early-stop threshold on remaining transmittance.
    pub transmittance_floor: f64,
    /// Hits beyond this count are dropped (counted, not an error).
    pub max_hits_per_ray: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            background: Vec3::zeros(),
            t_near: 0.01,
            t_far: 1e4,
            transmittance_floor: 1e-4,
            max_hits_per_ray: 256,
        }
    }
}

impl RenderConfig {
    /// Default config with the scene's stored background color.
    pub fn for_scene(scene: &Scene) -> Self {
        RenderConfig { background: scene.background, ..Default::default() }
    }
}

/// One composited hit as the forward pass saw it: opacity, evaluated color,
/// and the transmittance *before* this hit. Hits with zero opacity are not
/// recorded (they influence neither the blend nor any gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct HitRecord {
    pub prim: u32,
    pub kappa: f64,
    pub color: Vec3,
    pub transmittance: f64,
}

/// Forward render result. `records` (pixel-major hit lists) are retained
/// only when requested and feed the backward pass without recomputation.
#[derive(Debug)]
pub struct RenderOutput {
    pub color: ImageF,
    pub records: Option<Vec<Vec<HitRecord>>>,
    /// Total hits dropped across all rays by `max_hits_per_ray`.
    pub truncated_hits: usize,
}

/// All primitives intersecting the ray, sorted ascending by entry distance
/// with ties broken by primitive index. Returns the (possibly truncated)
/// list and the number of dropped hits.
pub fn gather_hits(scene: &Scene, ray: &Ray, max_hits: usize) -> (Vec<(u32, SegmentHit)>, usize) {
    let all: Vec<u32> = (0..scene.len() as u32).collect();
    gather_hits_subset(scene, &all, ray, max_hits)
}

fn gather_hits_subset(
    scene: &Scene,
    candidates: &[u32],
    ray: &Ray,
    max_hits: usize,
) -> (Vec<(u32, SegmentHit)>, usize) {
    let mut hits: Vec<(u32, SegmentHit)> = Vec::new();
    for &idx in candidates {
        if let Some(hit) = geometry::intersect(&scene.primitives[idx as usize].geometry, ray) {
            hits.push((idx, hit));
        }
    }
    hits.sort_unstable_by(|a, b| {
        a.1.t_in.partial_cmp(&b.1.t_in).unwrap().then(a.0.cmp(&b.0))
    });
    let truncated = hits.len().saturating_sub(max_hits);
    hits.truncate(max_hits);
    (hits, truncated)
}

/// Per-(scene, camera) state shared by all pixels: frustum-culled candidate
/// indices and the effective zero-order SH coefficient per primitive.
struct RenderContext {
    candidates: Vec<u32>,
    /// Effective DC coefficient (time-evaluated in dynamic mode).
    dc: Vec<Vec3>,
    xi_t: Option<f64>,
}

impl RenderContext {
    fn new(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<Self> {
        if cam.time.is_some() && !scene.is_temporal() {
            return Err(Error::TemporalNotEnabled);
        }
        let dc = scene
            .primitives
            .iter()
            .map(|p| match (cam.time, &p.temporal_sh) {
                (Some(xi), Some(ts)) => ts.eval(xi),
                _ => p.sh.coeffs[0],
            })
            .collect();
        Ok(RenderContext { candidates: visible_candidates(scene, cam, cfg), dc, xi_t: cam.time })
    }
}

/// Conservative frustum culling on bounding spheres (radius = max scale).
/// Never drops a primitive any pixel ray could hit within [t_near, t_far].
fn visible_candidates(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Vec<u32> {
    // Side planes of the pyramid spanned by the image corners, in the
    // camera frame, normals pointing inward.
    let corner = |px: f64, py: f64| Vec3::new((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
    let (w, h) = (cam.width as f64, cam.height as f64);
    let corners = [corner(0.0, 0.0), corner(w, 0.0), corner(w, h), corner(0.0, h)];
    let center_dir = corner(w / 2.0, h / 2.0);
    let mut planes = Vec::with_capacity(4);
    for i in 0..4 {
        let mut n = corners[i].cross(&corners[(i + 1) % 4]);
        if n.dot(&center_dir) < 0.0 {
            n = -n;
        }
        planes.push(n.normalize());
    }
    let rot_t = cam.rotation.transpose();

    let mut keep = Vec::with_capacity(scene.len());
    'prims: for (i, p) in scene.primitives.iter().enumerate() {
        let r = p.geometry.max_scale();
        let c = rot_t * (p.geometry.center - cam.position);
        if c.z < -r || c.norm() - r > cfg.t_far {
            continue;
        }
        for n in &planes {
            if n.dot(&c) < -r {
                continue 'prims;
            }
        }
        keep.push(i as u32);
    }
    keep
}

/// Front-to-back blend over one ray. Appends hit records when `records` is
/// provided; returns the composited color.
fn shade_pixel(
    scene: &Scene,
    ctx: &RenderContext,
    ray: &Ray,
    cfg: &RenderConfig,
    truncated: &mut usize,
    mut records: Option<&mut Vec<HitRecord>>,
) -> Vec3 {
    let (hits, dropped) = gather_hits_subset(scene, &ctx.candidates, ray, cfg.max_hits_per_ray);
    *truncated += dropped;
    let mut color = Vec3::zeros();
    let mut transmittance = 1.0;
    for (idx, hit) in hits {
        let p = &scene.primitives[idx as usize];
        let ph = p.phases_at(ray, ctx.xi_t).expect("temporal mode validated in RenderContext");
        let integral = integral_from_phases(&p.net, &ph, hit.t_in, hit.t_out);
        let k = kappa(integral);
        if k == 0.0 {
            continue;
        }
        let c = sh_eval_dc(&p.sh, &ray.direction, &ctx.dc[idx as usize]);
        color += c * (k * transmittance);
        if let Some(recs) = records.as_deref_mut() {
            recs.push(HitRecord { prim: idx, kappa: k, color: c, transmittance });
        }
        transmittance *= 1.0 - k;
        if transmittance < cfg.transmittance_floor {
            break;
        }
    }
    color + cfg.background * transmittance
}

/// Renders the scene from `cam`. Forward output is bit-identical across
/// thread counts (pixels are independent).
pub fn render(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<RenderOutput> {
    render_with_records(scene, cam, cfg, false)
}

/// Render that optionally retains per-pixel hit records for the backward
/// pass.
pub fn render_with_records(
    scene: &Scene,
    cam: &Camera,
    cfg: &RenderConfig,
    retain: bool,
) -> Result<RenderOutput> {
    let ctx = RenderContext::new(scene, cam, cfg)?;
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<(Vec<f64>, Vec<Vec<HitRecord>>, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * 3];
            let mut row_records = Vec::with_capacity(if retain { w } else { 0 });
            let mut truncated = 0;
            for x in 0..w {
                let ray = cam.pixel_ray(x as f64, y as f64, cfg.t_near, cfg.t_far);
                let mut pixel_records = Vec::new();
                let c = shade_pixel(
                    scene,
                    &ctx,
                    &ray,
                    cfg,
                    &mut truncated,
                    retain.then_some(&mut pixel_records),
                );
                row[3 * x] = c.x;
                row[3 * x + 1] = c.y;
                row[3 * x + 2] = c.z;
                if retain {
                    row_records.push(pixel_records);
                }
            }
            (row, row_records, truncated)
        })
        .collect();

    let mut data = Vec::with_capacity(w * h * 3);
    let mut records = if retain { Some(Vec::with_capacity(w * h)) } else { None };
    let mut truncated_hits = 0;
    for (row, row_records, truncated) in rows {
        data.extend_from_slice(&row);
        if let Some(recs) = &mut records {
            recs.extend(row_records);
        }
        truncated_hits += truncated;
    }
    Ok(RenderOutput { color: ImageF::from_data(w, h, data)?, records, truncated_hits })
}

/// Reverse pass: propagates a per-pixel color gradient through the blend
/// recurrence into every primitive's parameter slots.
///
/// With hits i front to back, transmittance T_i before hit i and suffix
/// color S_i (everything composited after i under unit transmittance,
/// terminating in the background): ∂C/∂κ_i = (c_i − S_i)·T_i and
/// ∂C/∂c_i = κ_i·T_i. The κ path continues through the closed-form kernel
/// into network and geometry parameters; the c path into SH coefficients.
///
/// `retained` reuses forward hit records; otherwise the per-pixel forward
/// state is recomputed. Both paths execute identical arithmetic.
pub fn render_backward(
    scene: &Scene,
    cam: &Camera,
    cfg: &RenderConfig,
    upstream: &ImageF,
    retained: Option<&[Vec<HitRecord>]>,
) -> Result<GradientBuffer> {
    if upstream.width() != cam.width || upstream.height() != cam.height {
        return Err(Error::ShapeMismatch(
            upstream.width(),
            upstream.height(),
            cam.width,
            cam.height,
        ));
    }
    if let Some(recs) = retained {
        if recs.len() != cam.width * cam.height {
            return Err(Error::ShapeMismatch(recs.len(), 1, cam.width * cam.height, 1));
        }
    }
    let ctx = RenderContext::new(scene, cam, cfg)?;
    let (w, h) = (cam.width, cam.height);
    let n_blocks = h.div_ceil(BACKWARD_BLOCK_ROWS);

    let block_partials: Vec<HashMap<u32, crate::scene::PrimitiveGradient>> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let mut partial: HashMap<u32, crate::scene::PrimitiveGradient> = HashMap::new();
            let y0 = block * BACKWARD_BLOCK_ROWS;
            let y1 = (y0 + BACKWARD_BLOCK_ROWS).min(h);
            let mut scratch = Vec::new();
            for y in y0..y1 {
                for x in 0..w {
                    let up = upstream.get(x, y);
                    if up == Vec3::zeros() {
                        continue;
                    }
                    let ray = cam.pixel_ray(x as f64, y as f64, cfg.t_near, cfg.t_far);
                    let pixel_records: &[HitRecord] = match retained {
                        Some(recs) => &recs[y * w + x],
                        None => {
                            scratch.clear();
                            let mut dropped = 0;
                            shade_pixel(scene, &ctx, &ray, cfg, &mut dropped, Some(&mut scratch));
                            &scratch
                        }
                    };
                    backward_pixel(scene, &ctx, &ray, cfg, &up, pixel_records, &mut partial);
                }
            }
            partial
        })
        .collect();

    // Merge in block order: each gradient slot receives one addition per
    // block, so sums are independent of thread scheduling.
    let mut buffer = GradientBuffer::zeros(scene);
    for partial in block_partials {
        for (idx, grad) in partial {
            buffer.prims[idx as usize].add_assign(&grad);
        }
    }

    // In dynamic mode the accumulated DC gradient also drives the temporal
    // coefficient curve (the camera time is constant across the image, so
    // one chain-rule application per primitive suffices).
    if let Some(xi) = cam.time {
        for (p, g) in scene.primitives.iter().zip(&mut buffer.prims) {
            if let (Some(ts), Some(dts)) = (&p.temporal_sh, &mut g.dtemporal_sh) {
                let g0 = g.dsh[0];
                ts.backward(xi, &g0, dts);
            }
        }
    }
    Ok(buffer)
}

fn backward_pixel(
    scene: &Scene,
    ctx: &RenderContext,
    ray: &Ray,
    cfg: &RenderConfig,
    upstream: &Vec3,
    records: &[HitRecord],
    partial: &mut HashMap<u32, crate::scene::PrimitiveGradient>,
) {
    let mut suffix = cfg.background;
    for rec in records.iter().rev() {
        let idx = rec.prim as usize;
        let p = &scene.primitives[idx];
        let slot = partial
            .entry(rec.prim)
            .or_insert_with(|| crate::scene::PrimitiveGradient::zeros_like(p));

        // Color path: ∂C/∂c_i = κ_i·T_i, through the SH clamp.
        let d_color = upstream * (rec.kappa * rec.transmittance);
        sh_backward_dc(&p.sh, &ray.direction, &ctx.dc[idx], &d_color, &mut slot.dsh);

        // Opacity path: ∂C/∂κ_i = (c_i − S_i)·T_i, through the kernel.
        let d_kappa = upstream.dot(&(rec.color - suffix)) * rec.transmittance;
        if let Some((hit, derivs)) = geometry::intersect_with_derivs(&p.geometry, ray) {
            let ph = p.phases_at(ray, ctx.xi_t).expect("validated in RenderContext");
            let integral = integral_from_phases(&p.net, &ph, hit.t_in, hit.t_out);
            accumulate_kernel_gradient(p, &ph, &hit, &derivs, integral, d_kappa, &mut slot.net);
        }

        suffix = rec.color * rec.kappa + suffix * (1.0 - rec.kappa);
    }
}
