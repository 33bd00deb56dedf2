//! Image comparison metrics: L1, PSNR, and windowed SSIM with an analytic
//! backward pass.
//!
//! SSIM uses the standard 11×11 Gaussian window (σ = 1.5, C1 = 0.01²,
//! C2 = 0.03²) applied per channel with zero padding; border windows are
//! not renormalized. The reported value is the mean over all pixels and
//! channels.

use crate::error::Result;
use crate::image_buf::ImageF;

const SSIM_RADIUS: usize = 5; // 11-tap window
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean absolute difference over all samples.
pub fn l1(a: &ImageF, b: &ImageF) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Gradient of `l1(a, b)` with respect to `a`: sign(a−b)/N per sample.
pub fn l1_backward(a: &ImageF, b: &ImageF) -> Result<ImageF> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    let mut grad = ImageF::new(a.width(), a.height());
    for ((g, x), y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *g = (x - y).signum() * ((x != y) as u8 as f64) / n;
    }
    Ok(grad)
}

/// Peak signal-to-noise ratio in dB against a unit peak, capped at 99.
pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse <= 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

fn gaussian_kernel() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable same-size convolution with zero padding.
fn conv2(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let sx = x as isize + i as isize - r as isize;
                if sx >= 0 && (sx as usize) < w {
                    acc += k * src[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let sy = y as isize + i as isize - r as isize;
                if sy >= 0 && (sy as usize) < h {
                    acc += k * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &ImageF, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM of `x` against reference `y`.
pub fn ssim(x: &ImageF, y: &ImageF) -> Result<f64> {
    Ok(ssim_impl(x, y, false)?.0)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_backward(x: &ImageF, y: &ImageF) -> Result<(f64, ImageF)> {
    let (mean, grad) = ssim_impl(x, y, true)?;
    Ok((mean, grad.expect("gradient requested")))
}

fn ssim_impl(x: &ImageF, y: &ImageF, with_grad: bool) -> Result<(f64, Option<ImageF>)> {
    x.same_shape(y)?;
    let (w, h) = (x.width(), x.height());
    let kernel = gaussian_kernel();
    let n_samples = (w * h * 3) as f64;

    let mut mean = 0.0;
    let mut grad = with_grad.then(|| ImageF::new(w, h));
    for c in 0..3 {
        let xc = channel(x, c);
        let yc = channel(y, c);
        let mu_x = conv2(&xc, w, h, &kernel);
        let mu_y = conv2(&yc, w, h, &kernel);
        let xx = conv2(&xc.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &kernel);
        let yy = conv2(&yc.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &kernel);
        let xy = conv2(
            &xc.iter().zip(&yc).map(|(a, b)| a * b).collect::<Vec<_>>(),
            w,
            h,
            &kernel,
        );

        // Per-window S plus the three backward coefficient maps.
        let mut w1 = with_grad.then(|| vec![0.0; w * h]);
        let mut w2 = with_grad.then(|| vec![0.0; w * h]);
        let mut w3 = with_grad.then(|| vec![0.0; w * h]);
        for i in 0..w * h {
            let sigma_x = xx[i] - mu_x[i] * mu_x[i];
            let sigma_y = yy[i] - mu_y[i] * mu_y[i];
            let sigma_xy = xy[i] - mu_x[i] * mu_y[i];
            let a1 = 2.0 * mu_x[i] * mu_y[i] + SSIM_C1;
            let a2 = 2.0 * sigma_xy + SSIM_C2;
            let b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + SSIM_C1;
            let b2 = sigma_x + sigma_y + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            mean += s;
            if let (Some(w1), Some(w2), Some(w3)) = (w1.as_mut(), w2.as_mut(), w3.as_mut()) {
                // ∂S/∂x factored into window-level maps; the pixel-level
                // gradient is CONV(W1) + 2x·CONV(W2) + y·CONV(W3).
                w1[i] = 2.0 * mu_y[i] * (a2 - a1) / (b1 * b2)
                    + 2.0 * mu_x[i] * s * (1.0 / b2 - 1.0 / b1);
                w2[i] = -s / b2;
                w3[i] = 2.0 * a1 / (b1 * b2);
            }
        }

        if let (Some(grad), Some(w1), Some(w2), Some(w3)) =
            (grad.as_mut(), w1.as_ref(), w2.as_ref(), w3.as_ref())
        {
            let c1 = conv2(w1, w, h, &kernel);
            let c2 = conv2(w2, w, h, &kernel);
            let c3 = conv2(w3, w, h, &kernel);
            let g = grad.data_mut();
            for i in 0..w * h {
                g[3 * i + c] = (c1[i] + 2.0 * xc[i] * c2[i] + yc[i] * c3[i]) / n_samples;
            }
        }
    }
    Ok((mean / n_samples, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::geometry::Vec3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> ImageF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageF::new(w, h);
        for v in img.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn l1_and_backward() {
        let a = random_image(110, 9, 7);
        let mut b = a.clone();
        b.data_mut()[5] += 0.5;
        b.data_mut()[17] -= 0.25;
        let n = (9 * 7 * 3) as f64;
        assert_relative_eq!(l1(&a, &b).unwrap(), 0.75 / n, epsilon = 1e-12);
        let g = l1_backward(&a, &b).unwrap();
        assert_relative_eq!(g.data()[5], -1.0 / n);
        assert_relative_eq!(g.data()[17], 1.0 / n);
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(l1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_uniform_difference_is_twenty_db() {
        let a = ImageF::filled(16, 16, Vec3::new(0.5, 0.5, 0.5));
        let b = ImageF::filled(16, 16, Vec3::new(0.6, 0.6, 0.6));
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = ImageF::new(4, 4);
        let b = ImageF::new(4, 5);
        assert!(matches!(l1(&a, &b), Err(Error::ShapeMismatch(..))));
        assert!(matches!(psnr(&a, &b), Err(Error::ShapeMismatch(..))));
        assert!(matches!(ssim(&a, &b), Err(Error::ShapeMismatch(..))));
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = random_image(111, 20, 14);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_drops_with_noise_and_ranks_degradation() {
        let a = random_image(112, 20, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let mut mild = a.clone();
        let mut harsh = a.clone();
        for (m, h) in mild.data_mut().iter_mut().zip(harsh.data_mut()) {
            let noise = rng.gen_range(-1.0..1.0);
            *m += 0.02 * noise;
            *h += 0.3 * noise;
        }
        let s_mild = ssim(&mild, &a).unwrap();
        let s_harsh = ssim(&harsh, &a).unwrap();
        assert!(s_mild < 1.0);
        assert!(s_harsh < s_mild, "ssim must rank degradation: {s_harsh} vs {s_mild}");
    }

    /// Direct per-window double loop over the 11×11 neighborhood — no
    /// separable passes, no shared code with the production path.
    fn ssim_brute_force(x: &ImageF, y: &ImageF) -> f64 {
        let (w, h) = (x.width(), x.height());
        let kernel = gaussian_kernel();
        let r = SSIM_RADIUS as isize;
        let mut total = 0.0;
        for c in 0..3 {
            for py in 0..h as isize {
                for px in 0..w as isize {
                    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (sx, sy) = (px + dx, py + dy);
                            if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                continue; // zero padding
                            }
                            let weight =
                                kernel[(dy + r) as usize] * kernel[(dx + r) as usize];
                            let xv = x.get(sx as usize, sy as usize)[c];
                            let yv = y.get(sx as usize, sy as usize)[c];
                            mx += weight * xv;
                            my += weight * yv;
                            mxx += weight * xv * xv;
                            myy += weight * yv * yv;
                            mxy += weight * xv * yv;
                        }
                    }
                    let (sx2, sy2, sxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                    let a1 = 2.0 * mx * my + SSIM_C1;
                    let a2 = 2.0 * sxy + SSIM_C2;
                    let b1 = mx * mx + my * my + SSIM_C1;
                    let b2 = sx2 + sy2 + SSIM_C2;
                    total += (a1 * a2) / (b1 * b2);
                }
            }
        }
        total / (w * h * 3) as f64
    }

    #[test]
    fn ssim_matches_independent_sliding_window() {
        for seed in [114, 115] {
            let a = random_image(seed, 16, 12);
            let b = random_image(seed + 50, 16, 12);
            let fast = ssim(&a, &b).unwrap();
            let brute = ssim_brute_force(&a, &b);
            assert!((fast - brute).abs() <= 1e-6, "{fast} vs {brute}");
        }
    }

    #[test]
    fn ssim_backward_matches_finite_differences() {
        let x = random_image(116, 10, 8);
        let y = random_image(117, 10, 8);
        let (_, grad) = ssim_with_backward(&x, &y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(118);
        for _ in 0..25 {
            let i = rng.gen_range(0..x.data().len());
            let h = 1e-5;
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let fd = (ssim(&plus, &y).unwrap() - ssim(&minus, &y).unwrap()) / (2.0 * h);
            let g = grad.data()[i];
            assert!(
                (g - fd).abs() <= 1e-6 * fd.abs().max(1e-3),
                "sample {i}: analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn ssim_gradient_pushes_toward_reference() {
        // One ascent step along the gradient must increase SSIM.
        let x = random_image(119, 12, 12);
        let y = random_image(120, 12, 12);
        let (s0, grad) = ssim_with_backward(&x, &y).unwrap();
        let mut stepped = x.clone();
        for (v, g) in stepped.data_mut().iter_mut().zip(grad.data()) {
            *v += 1.0 * g;
        }
        let s1 = ssim(&stepped, &y).unwrap();
        assert!(s1 > s0, "ascent step must improve SSIM: {s0} -> {s1}");
    }
}
