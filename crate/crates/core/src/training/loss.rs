//! Training objective: a weighted sum of L1 and DSSIM photometric terms plus
//! an isotropy regulariser on primitive scales, with analytic gradients for
//! both the rendered image and the scale parameters.

use crate::geometry::Vec3;
use crate::image_buf::ImageF;
use crate::metrics::{l1, l1_backward, ssim_with_backward};
use crate::scene::Scene;
use crate::error::Result;

/// Value and gradients of the training objective for one rendered view.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Combined objective value.
    pub total: f64,
    /// Mean absolute pixel error (unweighted).
    pub l1: f64,
    /// Structural dissimilarity `1 − SSIM` (unweighted).
    pub dssim: f64,
    /// Scale-isotropy regulariser value (unweighted): mean over primitives
    /// of the population standard deviation of the three scale components.
    pub geo_reg: f64,
    /// d total / d rendered-pixel, same shape as the rendered image.
    pub pixel_grad: ImageF,
    /// d total / d scale for every primitive — the regulariser contributes
    /// to scale gradients directly, bypassing the renderer.
    pub scale_grads: Vec<Vec3>,
}

/// Population standard deviation of the three scale components and its
/// gradient. At perfect isotropy the std is zero and the (subgradient) is
/// taken as zero.
fn scale_std_with_grad(scale: &Vec3) -> (f64, Vec3) {
    let mean = (scale.x + scale.y + scale.z) / 3.0;
    let d = Vec3::new(scale.x - mean, scale.y - mean, scale.z - mean);
    let var = d.norm_squared() / 3.0;
    let std = var.sqrt();
    if std == 0.0 {
        (0.0, Vec3::zeros())
    } else {
        (std, d / (3.0 * std))
    }
}

/// Evaluates `(1 − w_ssim)·L1 + w_ssim·(1 − SSIM) + w_geo·mean_p std(scale_p)`
/// together with the pixel gradient and the per-primitive scale gradients.
pub fn loss(
    rendered: &ImageF,
    target: &ImageF,
    scene: &Scene,
    ssim_weight: f64,
    geo_reg_weight: f64,
) -> Result<LossOutput> {
    let l1_val = l1(rendered, target)?;
    let l1_grad = l1_backward(rendered, target)?;
    let (ssim_val, ssim_grad) = ssim_with_backward(rendered, target)?;
    let dssim = 1.0 - ssim_val;

    let mut pixel_grad = ImageF::new(rendered.width(), rendered.height());
    {
        let out = pixel_grad.data_mut();
        let gl = l1_grad.data();
        let gs = ssim_grad.data();
        for i in 0..out.len() {
            out[i] = (1.0 - ssim_weight) * gl[i] - ssim_weight * gs[i];
        }
    }

    let n = scene.len();
    let mut geo = 0.0;
    let mut scale_grads = vec![Vec3::zeros(); n];
    if n > 0 && geo_reg_weight != 0.0 {
        let w = geo_reg_weight / n as f64;
        for (p, g) in scene.primitives.iter().zip(&mut scale_grads) {
            let (std, dstd) = scale_std_with_grad(&p.geometry.scale);
            geo += std;
            *g = w * dstd;
        }
        geo /= n as f64;
    } else if n > 0 {
        for p in &scene.primitives {
            geo += scale_std_with_grad(&p.geometry.scale).0;
        }
        geo /= n as f64;
    }

    let total = (1.0 - ssim_weight) * l1_val + ssim_weight * dssim + geo_reg_weight * geo;
    Ok(LossOutput { total, l1: l1_val, dssim, geo_reg: geo, pixel_grad, scale_grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::ShCoefficients;
    use crate::geometry::Ellipsoid;
    use crate::neural_field::{DensityNet, NeuralPrimitive};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prim_with_scale(scale: Vec3) -> NeuralPrimitive {
        NeuralPrimitive::new(
            Ellipsoid::new(Vec3::zeros(), scale, [1.0, 0.0, 0.0, 0.0]),
            DensityNet::zeros(8, 30.0),
            ShCoefficients::zeros(16),
        )
    }

    fn scene_with_scales(scales: &[Vec3]) -> Scene {
        Scene::new(
            scales.iter().map(|s| prim_with_scale(*s)).collect(),
            1.0,
            Vec3::zeros(),
        )
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> ImageF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageF::new(w, h);
        for v in img.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn identical_images_and_isotropic_scales_give_zero() {
        // 0.5 is exactly representable and so is the mean of three copies,
        // making the isotropy deviation exactly zero.
        let img = noise_image(16, 16, 1);
        let scene = scene_with_scales(&[Vec3::new(0.5, 0.5, 0.5)]);
        let out = loss(&img, &img, &scene, 0.2, 0.01).unwrap();
        assert_eq!(out.total, 0.0);
        assert_eq!(out.l1, 0.0);
        assert_eq!(out.dssim, 0.0);
        assert_eq!(out.geo_reg, 0.0);
        // The SSIM window maps cancel only algebraically at x == y, so the
        // pixel gradient is zero up to rounding (the value is exactly zero).
        assert!(out.pixel_grad.data().iter().all(|&g| g.abs() < 1e-12));
        assert_eq!(out.scale_grads[0], Vec3::zeros());
    }

    #[test]
    fn pure_l1_mode_matches_mean_absolute_error() {
        let a = ImageF::filled(8, 8, Vec3::new(0.5, 0.5, 0.5));
        let b = ImageF::filled(8, 8, Vec3::new(0.4, 0.4, 0.4));
        let scene = scene_with_scales(&[Vec3::new(0.2, 0.2, 0.2)]);
        let out = loss(&a, &b, &scene, 0.0, 0.0).unwrap();
        assert_relative_eq!(out.total, 0.1, max_relative = 1e-12);
        assert_relative_eq!(out.l1, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn regulariser_value_matches_hand_computed_std() {
        // scale (3,1,1): mean 5/3, population variance 8/9, std = 2√2/3.
        let scene = scene_with_scales(&[Vec3::new(3.0, 1.0, 1.0)]);
        let img = ImageF::filled(4, 4, Vec3::zeros());
        let out = loss(&img, &img, &scene, 0.2, 1.0).unwrap();
        let expected = (8.0f64 / 9.0).sqrt();
        assert_relative_eq!(out.geo_reg, expected, max_relative = 1e-12);
        assert_relative_eq!(out.total, expected, max_relative = 1e-12);
    }

    #[test]
    fn scale_gradient_matches_finite_differences() {
        let scales =
            [Vec3::new(0.4, 0.1, 0.25), Vec3::new(0.9, 0.88, 0.91), Vec3::new(0.05, 0.3, 0.2)];
        let img = noise_image(8, 8, 3);
        let target = noise_image(8, 8, 4);
        let w_geo = 0.7;
        let base = loss(&img, &target, &scene_with_scales(&scales), 0.2, w_geo).unwrap();
        let eps = 1e-6;
        for p in 0..scales.len() {
            for c in 0..3 {
                let mut plus = scales;
                plus[p][c] += eps;
                let mut minus = scales;
                minus[p][c] -= eps;
                let lp = loss(&img, &target, &scene_with_scales(&plus), 0.2, w_geo).unwrap();
                let lm = loss(&img, &target, &scene_with_scales(&minus), 0.2, w_geo).unwrap();
                let fd = (lp.total - lm.total) / (2.0 * eps);
                assert_relative_eq!(base.scale_grads[p][c], fd, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        let mut img = noise_image(12, 12, 5);
        let target = noise_image(12, 12, 6);
        let scene = scene_with_scales(&[Vec3::new(0.3, 0.2, 0.1)]);
        let base = loss(&img, &target, &scene, 0.2, 0.01).unwrap();
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let i = rng.gen_range(0..img.data().len());
            let orig = img.data()[i];
            img.data_mut()[i] = orig + eps;
            let lp = loss(&img, &target, &scene, 0.2, 0.01).unwrap().total;
            img.data_mut()[i] = orig - eps;
            let lm = loss(&img, &target, &scene, 0.2, 0.01).unwrap().total;
            img.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert_relative_eq!(base.pixel_grad.data()[i], fd, epsilon = 1e-6, max_relative = 1e-4);
        }
    }

    #[test]
    fn loss_is_non_negative_on_random_pairs() {
        for seed in 0..5 {
            let a = noise_image(10, 10, seed);
            let b = noise_image(10, 10, seed + 100);
            let scene = scene_with_scales(&[Vec3::new(0.4, 0.1, 0.9)]);
            let out = loss(&a, &b, &scene, 0.2, 0.01).unwrap();
            assert!(out.total >= 0.0);
        }
    }
}
