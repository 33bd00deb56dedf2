//! Quaternion, ellipsoid and ray math, plus the analytic line–ellipsoid
//! intersection that bounds every line integral.
//!
//! The intersection transforms the ray into the unit-sphere frame of the
//! ellipsoid and solves the quadratic there. The local direction is *not*
//! renormalized, so the roots stay in the original world ray parameter t.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tangent and near-tangent rays are treated as misses: a zero-length
/// segment contributes zero integral, and downstream derivatives would
/// divide by sqrt(discriminant).
pub const TANGENT_EPS: f64 = 1e-12;

/// A view ray o + t·d with clipping bounds on t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Self {
        debug_assert!((direction.norm() - 1.0).abs() < 1e-9, "ray direction must be unit");
        debug_assert!(0.0 <= t_near && t_near < t_far);
        Ray { origin, direction, t_near, t_far }
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Ellipsoid with per-axis semi-lengths `scale` and orientation `rotation`
/// stored as a (w, x, y, z) quaternion, normalized on every read.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec3,
    /// Per-axis semi-lengths, all > 0.
    pub scale: Vec3,
    /// (w, x, y, z); kept unconstrained during optimization, normalized on read.
    pub rotation: [f64; 4],
}

impl Ellipsoid {
    pub fn new(center: Vec3, scale: Vec3, rotation: [f64; 4]) -> Self {
        debug_assert!(scale.iter().all(|s| *s > 0.0));
        Ellipsoid { center, scale, rotation }
    }

    pub fn unit_sphere() -> Self {
        Ellipsoid::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [1.0, 0.0, 0.0, 0.0])
    }

    /// Largest semi-axis (∞-norm of the scale vector).
    pub fn max_scale(&self) -> f64 {
        self.scale.x.max(self.scale.y).max(self.scale.z)
    }

    /// Index of the largest scale component (first on ties).
    pub fn max_scale_axis(&self) -> usize {
        let s = &self.scale;
        if s.x >= s.y && s.x >= s.z {
            0
        } else if s.y >= s.z {
            1
        } else {
            2
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotation_matrix(&self.rotation)
            .expect("ellipsoid rotation quaternion must be nonzero")
    }

    /// Rᵀ(x − center) ⊘ scale. Surface points map to the unit sphere.
    pub fn world_to_local(&self, x: &Vec3) -> Vec3 {
        let r = self.rotation_matrix();
        let v = r.transpose() * (x - self.center);
        v.component_div(&self.scale)
    }

    /// Implicit value ‖world_to_local(x)‖²; < 1 inside, 1 on the surface.
    pub fn implicit(&self, x: &Vec3) -> f64 {
        self.world_to_local(x).norm_squared()
    }
}

/// Entry/exit distances of a ray segment through an ellipsoid, in world
/// units of the ray parameter, already clipped to [t_near, t_far].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentHit {
    pub t_in: f64,
    pub t_out: f64,
}

impl SegmentHit {
    pub fn length(&self) -> f64 {
        self.t_out - self.t_in
    }
}

/// Rotation matrix of a (possibly unnormalized) quaternion.
///
/// Errors on the zero quaternion; otherwise normalizes internally and
/// returns an orthonormal matrix with det +1.
pub fn quat_to_rotation_matrix(q: &[f64; 4]) -> Result<Mat3> {
    let n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if n2 == 0.0 || !n2.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    let inv = 1.0 / n2.sqrt();
    let (w, x, y, z) = (q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv);
    Ok(rotation_from_unit_quat(w, x, y, z))
}

fn rotation_from_unit_quat(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix plus its partial derivatives with respect to the four
/// raw (unnormalized) quaternion components, chaining through the
/// normalization q̂ = q/‖q‖.
pub fn quat_to_rotation_derivs(q: &[f64; 4]) -> Result<(Mat3, [Mat3; 4])> {
    let n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if n2 == 0.0 || !n2.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    let n = n2.sqrt();
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let r = rotation_from_unit_quat(w, x, y, z);

    // dR/dû for a unit quaternion; R is quadratic in û so these are linear.
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let d_unit = [dw, dx, dy, dz];

    // Chain through normalization: dû_a/dq_b = (δ_ab − û_a û_b)/‖q‖.
    let mut d_raw = [Mat3::zeros(); 4];
    for b in 0..4 {
        let mut acc = Mat3::zeros();
        for a in 0..4 {
            let jac = (if a == b { 1.0 } else { 0.0 } - u[a] * u[b]) / n;
            acc += d_unit[a] * jac;
        }
        d_raw[b] = acc;
    }
    Ok((r, d_raw))
}

/// Partial derivatives of the unclipped hit bounds with respect to the
/// ellipsoid parameters, obtained by implicit differentiation of the
/// intersection quadratic. Clipped bounds carry zero derivatives.
#[derive(Debug, Clone)]
pub struct HitDerivs {
    pub d_tin_center: Vec3,
    pub d_tin_scale: Vec3,
    pub d_tin_quat: [f64; 4],
    pub d_tout_center: Vec3,
    pub d_tout_scale: Vec3,
    pub d_tout_quat: [f64; 4],
    pub tin_clipped: bool,
    pub tout_clipped: bool,
}

impl HitDerivs {
    fn zero() -> Self {
        HitDerivs {
            d_tin_center: Vec3::zeros(),
            d_tin_scale: Vec3::zeros(),
            d_tin_quat: [0.0; 4],
            d_tout_center: Vec3::zeros(),
            d_tout_scale: Vec3::zeros(),
            d_tout_quat: [0.0; 4],
            tin_clipped: false,
            tout_clipped: false,
        }
    }
}

struct QuadraticHit {
    t_in: f64,
    t_out: f64,
    /// Unclipped roots.
    root_lo: f64,
    root_hi: f64,
    sqrt_disc: f64,
    o_local: Vec3,
    d_local: Vec3,
}

fn solve_quadratic(e: &Ellipsoid, r: &Ray, rot: &Mat3) -> Option<QuadraticHit> {
    let o_local = (rot.transpose() * (r.origin - e.center)).component_div(&e.scale);
    let d_local = (rot.transpose() * r.direction).component_div(&e.scale);

    let a = d_local.norm_squared();
    let b = 2.0 * o_local.dot(&d_local);
    let c = o_local.norm_squared() - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc <= TANGENT_EPS {
        return None;
    }
    let sqrt_disc = disc.sqrt();

    // Citardauq for the root that would suffer cancellation in the naive form.
    let sign_b = if b >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (b + sign_b * sqrt_disc);
    let (r0, r1) = (q / a, c / q);
    let (root_lo, root_hi) = if r0 < r1 { (r0, r1) } else { (r1, r0) };

    let t_in = root_lo.max(r.t_near);
    let t_out = root_hi.min(r.t_far);
    if t_out - t_in <= 0.0 {
        return None;
    }
    Some(QuadraticHit { t_in, t_out, root_lo, root_hi, sqrt_disc, o_local, d_local })
}

/// Overlap of the ray segment [t_near, t_far] with the ellipsoid interior.
/// A miss (or degenerate/tangent overlap) is a normal `None`.
pub fn intersect(e: &Ellipsoid, r: &Ray) -> Option<SegmentHit> {
    let rot = e.rotation_matrix();
    solve_quadratic(e, r, &rot).map(|h| SegmentHit { t_in: h.t_in, t_out: h.t_out })
}

/// Intersection plus the derivatives of both bounds with respect to the
/// ellipsoid center, scale and raw quaternion.
pub fn intersect_with_derivs(e: &Ellipsoid, r: &Ray) -> Option<(SegmentHit, HitDerivs)> {
    let (rot, drot) = quat_to_rotation_derivs(&e.rotation)
        .expect("ellipsoid rotation quaternion must be nonzero");
    let h = solve_quadratic(e, r, &rot)?;

    let mut derivs = HitDerivs::zero();
    derivs.tin_clipped = h.t_in > h.root_lo;
    derivs.tout_clipped = h.t_out < h.root_hi;

    let ol = h.o_local;
    let dl = h.d_local;
    let world_off = r.origin - e.center;

    // dt/dθ = −(t²·dA + t·dB + dC) / (2At + B); at the two roots the
    // denominator is ∓sqrt(disc) exactly.
    let root_grad = |t: f64, denom: f64, d_ol: &Vec3, d_dl: &Vec3| -> f64 {
        let da = 2.0 * dl.dot(d_dl);
        let db = 2.0 * (d_ol.dot(&dl) + ol.dot(d_dl));
        let dc = 2.0 * ol.dot(d_ol);
        -(t * t * da + t * db + dc) / denom
    };

    for j in 0..3 {
        // Center: d(o_local)_i/dμ_j = −R_ji/s_i, direction unaffected.
        let d_ol = Vec3::new(-rot[(j, 0)] / e.scale.x, -rot[(j, 1)] / e.scale.y, -rot[(j, 2)] / e.scale.z);
        let d_dl = Vec3::zeros();
        if !derivs.tin_clipped {
            derivs.d_tin_center[j] = root_grad(h.root_lo, -h.sqrt_disc, &d_ol, &d_dl);
        }
        if !derivs.tout_clipped {
            derivs.d_tout_center[j] = root_grad(h.root_hi, h.sqrt_disc, &d_ol, &d_dl);
        }

        // Scale: component j of both local vectors shrinks as s_j grows.
        let mut d_ol_s = Vec3::zeros();
        let mut d_dl_s = Vec3::zeros();
        d_ol_s[j] = -ol[j] / e.scale[j];
        d_dl_s[j] = -dl[j] / e.scale[j];
        if !derivs.tin_clipped {
            derivs.d_tin_scale[j] = root_grad(h.root_lo, -h.sqrt_disc, &d_ol_s, &d_dl_s);
        }
        if !derivs.tout_clipped {
            derivs.d_tout_scale[j] = root_grad(h.root_hi, h.sqrt_disc, &d_ol_s, &d_dl_s);
        }
    }

    for c in 0..4 {
        let drt = drot[c].transpose();
        let d_ol = (drt * world_off).component_div(&e.scale);
        let d_dl = (drt * r.direction).component_div(&e.scale);
        if !derivs.tin_clipped {
            derivs.d_tin_quat[c] = root_grad(h.root_lo, -h.sqrt_disc, &d_ol, &d_dl);
        }
        if !derivs.tout_clipped {
            derivs.d_tout_quat[c] = root_grad(h.root_hi, h.sqrt_disc, &d_ol, &d_dl);
        }
    }

    Some((SegmentHit { t_in: h.t_in, t_out: h.t_out }, derivs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_quat(rng: &mut impl Rng) -> [f64; 4] {
        loop {
            let q: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.1 {
                return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
            }
        }
    }

    fn random_unit_vec(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 {
                return v / n;
            }
        }
    }

    fn random_ellipsoid(rng: &mut impl Rng) -> Ellipsoid {
        Ellipsoid::new(
            Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            Vec3::new(
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
            ),
            random_unit_quat(rng),
        )
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotation_matrix(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let s = 0.5f64.sqrt();
        let r = quat_to_rotation_matrix(&[s, 0.0, 0.0, s]).unwrap();
        let v = r * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(v, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_quaternion_errors() {
        assert!(quat_to_rotation_matrix(&[0.0; 4]).is_err());
    }

    #[test]
    fn random_quats_give_orthonormal_right_handed_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            // Unnormalized on purpose: the op must normalize internally.
            let q = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            if q.iter().map(|x| x * x).sum::<f64>() < 1e-2 {
                continue;
            }
            let r = quat_to_rotation_matrix(&q).unwrap();
            assert_relative_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-7);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn rotation_derivs_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let q = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            if q.iter().map(|x| x * x).sum::<f64>() < 0.25 {
                continue;
            }
            let (_, dr) = quat_to_rotation_derivs(&q).unwrap();
            let h = 1e-6;
            for c in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp[c] += h;
                qm[c] -= h;
                let rp = quat_to_rotation_matrix(&qp).unwrap();
                let rm = quat_to_rotation_matrix(&qm).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                assert_relative_eq!(dr[c], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn world_to_local_center_maps_to_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let e = random_ellipsoid(&mut rng);
        assert_relative_eq!(e.world_to_local(&e.center), Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn world_to_local_identity_on_unit_sphere() {
        let e = Ellipsoid::unit_sphere();
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(e.world_to_local(&x), x, epsilon = 1e-15);
    }

    #[test]
    fn surface_points_map_to_unit_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let e = random_ellipsoid(&mut rng);
            // Sample the surface in the local frame and push to world.
            let u = random_unit_vec(&mut rng);
            let r = e.rotation_matrix();
            let x = e.center + r * u.component_mul(&e.scale);
            assert_relative_eq!(e.world_to_local(&x).norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn unit_sphere_head_on_hit() {
        let e = Ellipsoid::unit_sphere();
        let r = Ray::new(Vec3::new(-2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        let hit = intersect(&e, &r).unwrap();
        assert_relative_eq!(hit.t_in, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hit.t_out, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_sphere_miss() {
        let e = Ellipsoid::unit_sphere();
        let r = Ray::new(Vec3::new(-2.0, 2.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        assert!(intersect(&e, &r).is_none());
    }

    #[test]
    fn rotated_ellipsoid_axis_hit() {
        // Scale (2,1,1) rotated 90° about z puts the semi-axis 2 along y.
        let s = 0.5f64.sqrt();
        let e = Ellipsoid::new(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0), [s, 0.0, 0.0, s]);
        let r = Ray::new(Vec3::new(0.0, -5.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 0.0, 100.0);
        let hit = intersect(&e, &r).unwrap();
        assert_relative_eq!(hit.t_in, 3.0, epsilon = 1e-12);
        assert_relative_eq!(hit.t_out, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn camera_inside_clips_entry() {
        let e = Ellipsoid::unit_sphere();
        let r = Ray::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        let hit = intersect(&e, &r).unwrap();
        assert_relative_eq!(hit.t_in, 0.0, epsilon = 1e-12);
        assert_relative_eq!(hit.t_out, 1.0, epsilon = 1e-12);
    }

    /// Sign-change bisection along the ray as an independent oracle for the
    /// analytic intersection.
    fn bisection_hit(e: &Ellipsoid, r: &Ray, samples: usize) -> Option<(f64, f64)> {
        let f = |t: f64| e.implicit(&r.point_at(t)) - 1.0;
        let mut crossings = Vec::new();
        let mut prev_t = r.t_near;
        let mut prev_f = f(prev_t);
        for i in 1..=samples {
            let t = r.t_near + (r.t_far - r.t_near) * i as f64 / samples as f64;
            let ft = f(t);
            if prev_f.signum() != ft.signum() {
                let (mut lo, mut hi) = (prev_t, t);
                let (mut flo, _) = (prev_f, ft);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = f(mid);
                    if flo.signum() == fm.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                crossings.push(0.5 * (lo + hi));
            }
            prev_t = t;
            prev_f = ft;
        }
        match crossings.len() {
            2 => Some((crossings[0], crossings[1])),
            1 => {
                // Entered inside the segment and never left, or started inside.
                if f(r.t_near) < 0.0 {
                    Some((r.t_near, crossings[0]))
                } else {
                    Some((crossings[0], r.t_far))
                }
            }
            0 => {
                if f(r.t_near) < 0.0 {
                    Some((r.t_near, r.t_far))
                } else {
                    None
                }
            }
            _ => None, // grazing double-crossings; skip in the comparison
        }
    }

    #[test]
    fn random_pairs_agree_with_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut hits = 0;
        for _ in 0..2_000 {
            let e = random_ellipsoid(&mut rng);
            // Aim at a jittered point near the ellipsoid so a good fraction
            // of cases are hits and near-misses rather than far misses.
            let origin = e.center + random_unit_vec(&mut rng) * rng.gen_range(2.5..6.0);
            let target = e.center + random_unit_vec(&mut rng) * rng.gen_range(0.0..2.5);
            let dir = (target - origin).normalize();
            let r = Ray::new(origin, dir, 0.0, 40.0);
            let analytic = intersect(&e, &r);
            let oracle = bisection_hit(&e, &r, 2000);
            match (analytic, oracle) {
                (Some(h), Some((t0, t1))) => {
                    hits += 1;
                    assert!((h.t_in - t0).abs() < 1e-5, "t_in {} vs oracle {}", h.t_in, t0);
                    assert!((h.t_out - t1).abs() < 1e-5, "t_out {} vs oracle {}", h.t_out, t1);
                }
                (None, None) => {}
                (Some(h), None) => {
                    // The coarse scan can miss slivers shorter than its step.
                    assert!(h.length() < 0.05, "oracle missed a hit of length {}", h.length());
                }
                (None, Some((t0, t1))) => {
                    assert!(t1 - t0 < 1e-5, "analytic missed oracle hit [{t0}, {t1}]");
                }
            }
        }
        assert!(hits > 500, "too few hits ({hits}) for the oracle comparison to mean much");
    }

    #[test]
    fn hit_midpoint_lies_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..2000 {
            let e = random_ellipsoid(&mut rng);
            let dir = random_unit_vec(&mut rng);
            let origin = e.center - dir * rng.gen_range(1.0..6.0)
                + random_unit_vec(&mut rng) * rng.gen_range(0.0..1.5);
            let r = Ray::new(origin, dir, 0.0, 50.0);
            if let Some(h) = intersect(&e, &r) {
                let mid = r.point_at(0.5 * (h.t_in + h.t_out));
                assert!(e.implicit(&mid) < 1.0);
            }
        }
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let e = random_ellipsoid(&mut rng);
            let dir = random_unit_vec(&mut rng);
            let origin = e.center - dir * 3.0 + random_unit_vec(&mut rng) * 0.5;
            let r = Ray::new(origin, dir, 0.0, 50.0);
            let shift = Vec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let e2 = Ellipsoid::new(e.center + shift, e.scale, e.rotation);
            let r2 = Ray::new(origin + shift, dir, 0.0, 50.0);
            match (intersect(&e, &r), intersect(&e2, &r2)) {
                (Some(a), Some(b)) => {
                    assert_relative_eq!(a.t_in, b.t_in, epsilon = 1e-9, max_relative = 1e-9);
                    assert_relative_eq!(a.t_out, b.t_out, epsilon = 1e-9, max_relative = 1e-9);
                }
                (None, None) => {}
                _ => panic!("hit/miss disagreement under translation"),
            }
        }
    }

    fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..500 {
            let e = random_ellipsoid(&mut rng);
            let dir = random_unit_vec(&mut rng);
            let origin = e.center - dir * 3.0 + random_unit_vec(&mut rng) * 0.5;
            let r = Ray::new(origin, dir, 0.0, 50.0);

            let g = random_unit_quat(&mut rng);
            let gm = quat_to_rotation_matrix(&g).unwrap();
            let e2 = Ellipsoid::new(gm * e.center, e.scale, quat_mul(&g, &e.rotation));
            let r2 = Ray::new(gm * origin, gm * dir, 0.0, 50.0);
            match (intersect(&e, &r), intersect(&e2, &r2)) {
                (Some(a), Some(b)) => {
                    assert_relative_eq!(a.t_in, b.t_in, epsilon = 1e-7, max_relative = 1e-7);
                    assert_relative_eq!(a.t_out, b.t_out, epsilon = 1e-7, max_relative = 1e-7);
                }
                (None, None) => {}
                _ => panic!("hit/miss disagreement under rotation"),
            }
        }
    }

    #[test]
    fn hit_bound_derivs_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut checked = 0;
        'outer: for _ in 0..400 {
            let e = random_ellipsoid(&mut rng);
            let dir = random_unit_vec(&mut rng);
            let origin = e.center - dir * 3.0 + random_unit_vec(&mut rng) * 0.3;
            let r = Ray::new(origin, dir, 0.0, 50.0);
            let Some((hit, dv)) = intersect_with_derivs(&e, &r) else { continue };
            // Skip grazing hits where finite differences are unreliable.
            if hit.length() < 0.1 {
                continue;
            }
            let h = 1e-6;
            let probe = |e2: &Ellipsoid| intersect(e2, &r);

            let check = |dp: Option<SegmentHit>, dm: Option<SegmentHit>, din: f64, dout: f64| -> bool {
                let (Some(p), Some(m)) = (dp, dm) else { return false };
                let fd_in = (p.t_in - m.t_in) / (2.0 * h);
                let fd_out = (p.t_out - m.t_out) / (2.0 * h);
                let tol = |fd: f64| 1e-4 * (1.0 + fd.abs());
                assert!((fd_in - din).abs() < tol(fd_in), "t_in deriv {} vs fd {}", din, fd_in);
                assert!((fd_out - dout).abs() < tol(fd_out), "t_out deriv {} vs fd {}", dout, fd_out);
                true
            };

            for j in 0..3 {
                let mut ep = e.clone();
                let mut em = e.clone();
                ep.center[j] += h;
                em.center[j] -= h;
                if !check(probe(&ep), probe(&em), dv.d_tin_center[j], dv.d_tout_center[j]) {
                    continue 'outer;
                }
                let mut ep = e.clone();
                let mut em = e.clone();
                ep.scale[j] += h;
                em.scale[j] -= h;
                if !check(probe(&ep), probe(&em), dv.d_tin_scale[j], dv.d_tout_scale[j]) {
                    continue 'outer;
                }
            }
            for c in 0..4 {
                let mut ep = e.clone();
                let mut em = e.clone();
                ep.rotation[c] += h;
                em.rotation[c] -= h;
                if !check(probe(&ep), probe(&em), dv.d_tin_quat[c], dv.d_tout_quat[c]) {
                    continue 'outer;
                }
            }
            checked += 1;
        }
        assert!(checked > 100, "only {checked} configurations exercised the derivative check");
    }

    #[test]
    fn clipped_entry_has_zero_derivative() {
        let e = Ellipsoid::unit_sphere();
        let r = Ray::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        let (_, dv) = intersect_with_derivs(&e, &r).unwrap();
        assert!(dv.tin_clipped);
        assert_eq!(dv.d_tin_center, Vec3::zeros());
        assert!(!dv.tout_clipped);
        assert!(dv.d_tout_center.norm() > 0.0);
    }
}
