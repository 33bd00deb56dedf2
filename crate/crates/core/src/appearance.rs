//! View-dependent color from real spherical harmonics, plus a time-varying
//! replacement for the zero-order coefficient used in dynamic scenes.
//!
//! Colors are evaluated as `max(0, Σ Y_i(dir)·c_i + 0.5)` per channel: the
//! +0.5 offset makes an all-zero coefficient block render mid-gray, and the
//! lower clamp keeps blended colors nonnegative. There is no upper clamp
//! during blending; images are clamped only when written out.

use crate::geometry::Vec3;

/// Bands used by the default configuration (degrees 0–3).
pub const SH_BANDS: usize = 4;
/// Coefficients per channel for the default configuration.
pub const SH_COEFFS: usize = SH_BANDS * SH_BANDS;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Per-primitive spherical-harmonic color coefficients.
///
/// `coeffs[i]` is the RGB vector attached to basis function i, in band-major
/// order (degree 0 first, then the 3 degree-1 functions, and so on). The
/// default configuration uses 16 coefficients (4 bands).
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficients {
    pub coeffs: Vec<Vec3>,
}

impl ShCoefficients {
    pub fn zeros(n_coeffs: usize) -> Self {
        debug_assert!(matches!(n_coeffs, 1 | 4 | 9 | 16));
        ShCoefficients { coeffs: vec![Vec3::zeros(); n_coeffs] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn bands(&self) -> usize {
        (self.coeffs.len() as f64).sqrt().round() as usize
    }
}

/// Real SH basis functions evaluated at a unit direction, band-major, using
/// the normalization constants standard in splatting renderers.
///
/// Fills the first `n_coeffs` slots of a 16-entry array.
pub fn sh_basis(dir: &Vec3, n_coeffs: usize) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; SH_COEFFS];
    b[0] = C0;
    if n_coeffs > 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if n_coeffs > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        if n_coeffs > 9 {
            b[9] = C3[0] * y * (3.0 * xx - yy);
            b[10] = C3[1] * x * y * z;
            b[11] = C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = C3[5] * z * (xx - yy);
            b[15] = C3[6] * x * (xx - yy * 3.0);
        }
    }
    b
}

/// Color for a view direction with the zero-order coefficient overridden
/// (dynamic scenes substitute the time-evaluated coefficient here).
pub fn sh_eval_dc(sh: &ShCoefficients, dir: &Vec3, dc: &Vec3) -> Vec3 {
    let basis = sh_basis(dir, sh.len());
    let mut raw = dc * basis[0];
    for (i, c) in sh.coeffs.iter().enumerate().skip(1) {
        raw += c * basis[i];
    }
    raw.add_scalar(0.5).sup(&Vec3::zeros())
}

/// Color for a view direction: `max(0, Σ Y_i(dir)·c_i + 0.5)` per channel.
pub fn sh_eval(sh: &ShCoefficients, dir: &Vec3) -> Vec3 {
    sh_eval_dc(sh, dir, &sh.coeffs[0])
}

/// Accumulates `upstream · ∂color/∂c_i` into `grad[i]`, with the effective
/// zero-order coefficient `dc` (its gradient lands in `grad[0]`; in dynamic
/// mode the caller routes that slot into [`TemporalSh::backward`]).
///
/// Channels clamped in the forward pass contribute zero gradient.
pub fn sh_backward_dc(
    sh: &ShCoefficients,
    dir: &Vec3,
    dc: &Vec3,
    upstream: &Vec3,
    grad: &mut [Vec3],
) {
    debug_assert_eq!(grad.len(), sh.len());
    let basis = sh_basis(dir, sh.len());
    let mut raw = dc * basis[0];
    for (i, c) in sh.coeffs.iter().enumerate().skip(1) {
        raw += c * basis[i];
    }
    raw = raw.add_scalar(0.5);
    let gated = Vec3::new(
        if raw.x > 0.0 { upstream.x } else { 0.0 },
        if raw.y > 0.0 { upstream.y } else { 0.0 },
        if raw.z > 0.0 { upstream.z } else { 0.0 },
    );
    for (i, g) in grad.iter_mut().enumerate() {
        *g += gated * basis[i];
    }
}

/// Accumulates the static-mode gradient of [`sh_eval`].
pub fn sh_backward(sh: &ShCoefficients, dir: &Vec3, upstream: &Vec3, grad: &mut [Vec3]) {
    sh_backward_dc(sh, dir, &sh.coeffs[0].clone(), upstream, grad);
}

/// Time-varying zero-order coefficient
/// S(ξ) = S0 + Σ_{i=1..n} a_i ξ^i + Σ_{i=1..l} (b_i cos(iξ) + c_i sin(iξ)),
/// one curve per color channel. The Fourier argument is iξ with ξ ∈ [0,1],
/// i.e. less than one period of the lowest harmonic.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSh {
    pub s0: Vec3,
    /// Polynomial coefficients a_1..a_n (the ξ⁰ term lives in `s0`).
    pub poly: Vec<Vec3>,
    /// Fourier cosine coefficients b_1..b_l.
    pub four_cos: Vec<Vec3>,
    /// Fourier sine coefficients c_1..c_l.
    pub four_sin: Vec<Vec3>,
}

/// Default polynomial order n.
pub const TEMPORAL_POLY_ORDER: usize = 4;
/// Default Fourier order l.
pub const TEMPORAL_FOURIER_ORDER: usize = 4;

impl TemporalSh {
    pub fn zeros(n: usize, l: usize) -> Self {
        TemporalSh {
            s0: Vec3::zeros(),
            poly: vec![Vec3::zeros(); n],
            four_cos: vec![Vec3::zeros(); l],
            four_sin: vec![Vec3::zeros(); l],
        }
    }

    /// A constant curve pinned at `s0` (used when enabling dynamic mode on a
    /// primitive so its appearance is initially unchanged).
    pub fn constant(s0: Vec3, n: usize, l: usize) -> Self {
        TemporalSh { s0, ..TemporalSh::zeros(n, l) }
    }

    pub fn param_count(&self) -> usize {
        3 * (1 + self.poly.len() + self.four_cos.len() + self.four_sin.len())
    }

    pub fn eval(&self, xi: f64) -> Vec3 {
        let mut s = self.s0;
        let mut xp = 1.0;
        for a in &self.poly {
            xp *= xi;
            s += a * xp;
        }
        for (i, (b, c)) in self.four_cos.iter().zip(&self.four_sin).enumerate() {
            let arg = (i + 1) as f64 * xi;
            s += b * arg.cos() + c * arg.sin();
        }
        s
    }

    /// Accumulates `g0 · ∂S(ξ)/∂θ` for every curve parameter θ, where `g0`
    /// is the upstream gradient with respect to S(ξ).
    pub fn backward(&self, xi: f64, g0: &Vec3, grad: &mut TemporalShGradient) {
        grad.s0 += g0;
        let mut xp = 1.0;
        for da in grad.poly.iter_mut() {
            xp *= xi;
            *da += g0 * xp;
        }
        for (i, (db, dc)) in grad.four_cos.iter_mut().zip(grad.four_sin.iter_mut()).enumerate() {
            let arg = (i + 1) as f64 * xi;
            *db += g0 * arg.cos();
            *dc += g0 * arg.sin();
        }
    }
}

/// Gradient accumulator mirroring [`TemporalSh`].
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalShGradient {
    pub s0: Vec3,
    pub poly: Vec<Vec3>,
    pub four_cos: Vec<Vec3>,
    pub four_sin: Vec<Vec3>,
}

impl TemporalShGradient {
    pub fn zeros(n: usize, l: usize) -> Self {
        TemporalShGradient {
            s0: Vec3::zeros(),
            poly: vec![Vec3::zeros(); n],
            four_cos: vec![Vec3::zeros(); l],
            four_sin: vec![Vec3::zeros(); l],
        }
    }

    pub fn reset(&mut self) {
        self.s0 = Vec3::zeros();
        for v in self.poly.iter_mut().chain(&mut self.four_cos).chain(&mut self.four_sin) {
            *v = Vec3::zeros();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> Vec3 {
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

    fn random_sh(rng: &mut impl Rng, amp: f64) -> ShCoefficients {
        let coeffs = (0..SH_COEFFS)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-amp..amp),
                    rng.gen_range(-amp..amp),
                    rng.gen_range(-amp..amp),
                )
            })
            .collect();
        ShCoefficients { coeffs }
    }

    #[test]
    fn dc_only_unit_coefficient() {
        let mut sh = ShCoefficients::zeros(SH_COEFFS);
        sh.coeffs[0] = Vec3::new(1.0, 1.0, 1.0);
        let c = sh_eval(&sh, &Vec3::new(0.0, 0.0, 1.0));
        for ch in 0..3 {
            assert_relative_eq!(c[ch], 0.782_094_791_773_878_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_zero_coefficients_render_mid_gray() {
        let sh = ShCoefficients::zeros(SH_COEFFS);
        let c = sh_eval(&sh, &Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(c, Vec3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn degree_one_z_flip_differs_by_twice_the_basis_value() {
        let mut sh = ShCoefficients::zeros(SH_COEFFS);
        let c = 0.3;
        sh.coeffs[2] = Vec3::new(c, c, c); // the z-aligned degree-1 function
        let up = sh_eval(&sh, &Vec3::new(0.0, 0.0, 1.0));
        let down = sh_eval(&sh, &Vec3::new(0.0, 0.0, -1.0));
        for ch in 0..3 {
            assert_relative_eq!(up[ch] - down[ch], 2.0 * C1 * c, epsilon = 1e-12);
        }
    }

    #[test]
    fn dc_only_color_is_view_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut sh = ShCoefficients::zeros(SH_COEFFS);
        sh.coeffs[0] = Vec3::new(0.4, -0.2, 0.9);
        let reference = sh_eval(&sh, &Vec3::new(1.0, 0.0, 0.0));
        for _ in 0..100 {
            let c = sh_eval(&sh, &random_dir(&mut rng));
            assert_relative_eq!(c, reference, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_in_coefficients_before_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut tested = 0;
        while tested < 50 {
            let sh = random_sh(&mut rng, 0.2);
            let alpha = rng.gen_range(0.1..2.0);
            let scaled = ShCoefficients { coeffs: sh.coeffs.iter().map(|c| c * alpha).collect() };
            let dir = random_dir(&mut rng);
            let base = sh_eval(&sh, &dir);
            let big = sh_eval(&scaled, &dir);
            // Superposition only holds where neither evaluation clamped.
            if base.min() <= 1e-6 || big.min() <= 1e-6 {
                continue;
            }
            let base = base - Vec3::new(0.5, 0.5, 0.5);
            let big = big - Vec3::new(0.5, 0.5, 0.5);
            assert_relative_eq!(big, base * alpha, epsilon = 1e-10, max_relative = 1e-10);
            tested += 1;
        }
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sh = random_sh(&mut rng, 0.5);
        let mut grad = vec![Vec3::zeros(); SH_COEFFS];
        sh_backward(&sh, &random_dir(&mut rng), &Vec3::zeros(), &mut grad);
        assert!(grad.iter().all(|g| *g == Vec3::zeros()));
    }

    #[test]
    fn backward_dc_only_unclamped() {
        let mut sh = ShCoefficients::zeros(SH_COEFFS);
        sh.coeffs[0] = Vec3::new(0.3, 0.3, 0.3);
        let up = Vec3::new(1.0, 2.0, -0.5);
        let mut grad = vec![Vec3::zeros(); SH_COEFFS];
        sh_backward(&sh, &Vec3::new(0.0, 0.0, 1.0), &up, &mut grad);
        assert_relative_eq!(grad[0], up * C0, epsilon = 1e-14);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let sh = random_sh(&mut rng, 0.2);
            let dir = random_dir(&mut rng);
            // Probe channel 1 of the output; upstream selects it.
            let up = Vec3::new(0.0, 1.0, 0.0);
            let mut grad = vec![Vec3::zeros(); SH_COEFFS];
            sh_backward(&sh, &dir, &up, &mut grad);
            let h = 1e-5;
            for i in 0..SH_COEFFS {
                let mut plus = sh.clone();
                let mut minus = sh.clone();
                plus.coeffs[i].y += h;
                minus.coeffs[i].y -= h;
                let fd = (sh_eval(&plus, &dir).y - sh_eval(&minus, &dir).y) / (2.0 * h);
                assert!(
                    (grad[i].y - fd).abs() <= 1e-6,
                    "coefficient {i}: analytic {} vs fd {fd}",
                    grad[i].y
                );
            }
        }
    }

    #[test]
    fn clamped_channel_gets_zero_gradient() {
        let mut sh = ShCoefficients::zeros(SH_COEFFS);
        sh.coeffs[0] = Vec3::new(-5.0, 0.3, 0.3); // red channel clamps to 0
        let dir = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(sh_eval(&sh, &dir).x, 0.0);
        let mut grad = vec![Vec3::zeros(); SH_COEFFS];
        sh_backward(&sh, &dir, &Vec3::new(1.0, 1.0, 1.0), &mut grad);
        assert_eq!(grad[0].x, 0.0);
        assert!(grad[0].y > 0.0);
    }

    #[test]
    fn temporal_all_zero_orders_is_constant_s0() {
        let t = TemporalSh::constant(Vec3::new(0.1, 0.2, 0.3), 4, 4);
        for i in 0..=10 {
            let xi = i as f64 / 10.0;
            assert_eq!(t.eval(xi), Vec3::new(0.1, 0.2, 0.3));
        }
    }

    #[test]
    fn temporal_at_zero_is_s0_plus_cosine_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut t = TemporalSh::zeros(4, 4);
        t.s0 = Vec3::new(0.5, -0.1, 0.2);
        let mut sum_b = Vec3::zeros();
        for v in t.poly.iter_mut().chain(&mut t.four_cos).chain(&mut t.four_sin) {
            *v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
        }
        for b in &t.four_cos {
            sum_b += b;
        }
        assert_relative_eq!(t.eval(0.0), t.s0 + sum_b, epsilon = 1e-14);
    }

    #[test]
    fn temporal_matches_direct_series_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..50 {
            let mut t = TemporalSh::zeros(4, 4);
            t.s0 = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3);
            for v in t.poly.iter_mut().chain(&mut t.four_cos).chain(&mut t.four_sin) {
                *v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
            }
            let xi: f64 = rng.gen_range(0.0..1.0);
            // Independent summation with explicit powers instead of the
            // running product.
            let mut expect = t.s0;
            for (i, a) in t.poly.iter().enumerate() {
                expect += a * xi.powi(i as i32 + 1);
            }
            for i in 1..=4usize {
                expect += t.four_cos[i - 1] * (i as f64 * xi).cos()
                    + t.four_sin[i - 1] * (i as f64 * xi).sin();
            }
            assert_relative_eq!(t.eval(xi), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn temporal_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut t = TemporalSh::zeros(4, 4);
        for v in t.poly.iter_mut().chain(&mut t.four_cos).chain(&mut t.four_sin) {
            *v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
        }
        let xi = 0.37;
        let mut grad = TemporalShGradient::zeros(4, 4);
        t.backward(xi, &Vec3::new(1.0, 0.0, 0.0), &mut grad);
        let h = 1e-6;
        let probe = |t2: &TemporalSh| t2.eval(xi).x;
        for i in 0..4 {
            for (field, gfield) in [
                (&t.poly, &grad.poly),
                (&t.four_cos, &grad.four_cos),
                (&t.four_sin, &grad.four_sin),
            ] {
                let mut plus = t.clone();
                let mut minus = t.clone();
                // Identify which vector within the clone corresponds to `field`.
                let (pf, mf) = if std::ptr::eq(field, &t.poly) {
                    (&mut plus.poly, &mut minus.poly)
                } else if std::ptr::eq(field, &t.four_cos) {
                    (&mut plus.four_cos, &mut minus.four_cos)
                } else {
                    (&mut plus.four_sin, &mut minus.four_sin)
                };
                pf[i].x += h;
                mf[i].x -= h;
                let fd = (probe(&plus) - probe(&minus)) / (2.0 * h);
                assert!((gfield[i].x - fd).abs() < 1e-8);
            }
        }
    }
}
