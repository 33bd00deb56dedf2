//! Adam optimizer over the per-primitive parameter groups.
//!
//! Five groups with independent learning rates: the density network (W1, b1,
//! W2, b2 and the temporal phase weights Wt), centers, scales, orientation
//! quaternions, and appearance coefficients (spherical harmonics plus the
//! temporal series). Moments live per primitive so population events can
//! drop or zero exactly the affected entries; each primitive carries its own
//! step counter for bias correction, reset when the primitive is created.

use crate::scene::{GradientBuffer, PrimitiveGradient, Scene};
use crate::training::TrainConfig;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
/// Scales are clamped to this floor after every update so primitives can
/// shrink arbitrarily slowly but never collapse or go negative.
pub const SCALE_FLOOR: f64 = 1e-6;

/// First and second moment estimates plus the step counter for one
/// primitive. The moment containers reuse the gradient layout, which mirrors
/// every trainable scalar exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimMoments {
    pub m: PrimitiveGradient,
    pub v: PrimitiveGradient,
    pub step: u64,
}

impl PrimMoments {
    pub fn zeros_like(p: &crate::neural_field::NeuralPrimitive) -> Self {
        PrimMoments {
            m: PrimitiveGradient::zeros_like(p),
            v: PrimitiveGradient::zeros_like(p),
            step: 0,
        }
    }
}

/// Optimizer state parallel to `scene.primitives`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub prims: Vec<PrimMoments>,
    /// Running count of gradient scalars skipped for being non-finite.
    pub skipped_non_finite: u64,
}

impl AdamState {
    pub fn zeros(scene: &Scene) -> Self {
        AdamState {
            prims: scene.primitives.iter().map(PrimMoments::zeros_like).collect(),
            skipped_non_finite: 0,
        }
    }
}

/// One scalar Adam update. Non-finite gradients leave the parameter and its
/// moments untouched and are counted instead of poisoning the state.
#[inline]
fn update(
    theta: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
    skipped: &mut u64,
) {
    if !g.is_finite() {
        *skipped += 1;
        return;
    }
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *theta -= lr * m_hat / (v_hat.sqrt() + EPS);
}

/// Applies one Adam step to every primitive from the accumulated gradients.
///
/// Panics (debug assertion) when the state or gradient buffer shape does not
/// match the scene — callers must keep all three synchronized across
/// population events.
pub fn adam_step(scene: &mut Scene, grads: &GradientBuffer, state: &mut AdamState, cfg: &TrainConfig) {
    debug_assert_eq!(scene.primitives.len(), grads.prims.len());
    debug_assert_eq!(scene.primitives.len(), state.prims.len());
    let skipped = &mut state.skipped_non_finite;

    for ((p, g), s) in scene.primitives.iter_mut().zip(&grads.prims).zip(&mut state.prims) {
        s.step += 1;
        let bc1 = 1.0 - BETA1.powi(s.step as i32);
        let bc2 = 1.0 - BETA2.powi(s.step as i32);

        macro_rules! upd {
            ($theta:expr, $g:expr, $m:expr, $v:expr, $lr:expr) => {
                update($theta, $g, $m, $v, $lr, bc1, bc2, skipped)
            };
        }

        // Density network group.
        for k in 0..p.net.hidden() {
            for c in 0..3 {
                upd!(
                    &mut p.net.w1[k][c],
                    g.net.dw1[k][c],
                    &mut s.m.net.dw1[k][c],
                    &mut s.v.net.dw1[k][c],
                    cfg.lr_mlp
                );
            }
            upd!(&mut p.net.b1[k], g.net.db1[k], &mut s.m.net.db1[k], &mut s.v.net.db1[k], cfg.lr_mlp);
            upd!(&mut p.net.w2[k], g.net.dw2[k], &mut s.m.net.dw2[k], &mut s.v.net.dw2[k], cfg.lr_mlp);
        }
        upd!(&mut p.net.b2, g.net.db2, &mut s.m.net.db2, &mut s.v.net.db2, cfg.lr_mlp);
        if let Some(wt) = &mut p.wt {
            for k in 0..wt.len() {
                upd!(&mut wt[k], g.net.dwt[k], &mut s.m.net.dwt[k], &mut s.v.net.dwt[k], cfg.lr_mlp);
            }
        }

        // Geometry groups.
        for c in 0..3 {
            upd!(
                &mut p.geometry.center[c],
                g.net.dcenter[c],
                &mut s.m.net.dcenter[c],
                &mut s.v.net.dcenter[c],
                cfg.lr_means
            );
            upd!(
                &mut p.geometry.scale[c],
                g.net.dscale[c],
                &mut s.m.net.dscale[c],
                &mut s.v.net.dscale[c],
                cfg.lr_scales
            );
            p.geometry.scale[c] = p.geometry.scale[c].max(SCALE_FLOOR);
        }
        for c in 0..4 {
            upd!(
                &mut p.geometry.rotation[c],
                g.net.drotation[c],
                &mut s.m.net.drotation[c],
                &mut s.v.net.drotation[c],
                cfg.lr_quats
            );
        }

        // Appearance group. In temporal mode the zero-order static
        // coefficient is replaced by the temporal series and stays frozen.
        let first_sh = if p.temporal_sh.is_some() { 1 } else { 0 };
        for i in first_sh..p.sh.len() {
            for c in 0..3 {
                upd!(
                    &mut p.sh.coeffs[i][c],
                    g.dsh[i][c],
                    &mut s.m.dsh[i][c],
                    &mut s.v.dsh[i][c],
                    cfg.lr_sh
                );
            }
        }
        if let Some(ts) = &mut p.temporal_sh {
            let (gt, mt, vt) = (
                g.dtemporal_sh.as_ref().expect("temporal gradient slot"),
                s.m.dtemporal_sh.as_mut().expect("temporal moment slot"),
                s.v.dtemporal_sh.as_mut().expect("temporal moment slot"),
            );
            for c in 0..3 {
                upd!(&mut ts.s0[c], gt.s0[c], &mut mt.s0[c], &mut vt.s0[c], cfg.lr_sh);
            }
            for i in 0..ts.poly.len() {
                for c in 0..3 {
                    upd!(
                        &mut ts.poly[i][c],
                        gt.poly[i][c],
                        &mut mt.poly[i][c],
                        &mut vt.poly[i][c],
                        cfg.lr_sh
                    );
                }
            }
            for i in 0..ts.four_cos.len() {
                for c in 0..3 {
                    upd!(
                        &mut ts.four_cos[i][c],
                        gt.four_cos[i][c],
                        &mut mt.four_cos[i][c],
                        &mut vt.four_cos[i][c],
                        cfg.lr_sh
                    );
                    upd!(
                        &mut ts.four_sin[i][c],
                        gt.four_sin[i][c],
                        &mut mt.four_sin[i][c],
                        &mut vt.four_sin[i][c],
                        cfg.lr_sh
                    );
                }
            }
        }
    }
}
