//! Scene container and the per-primitive gradient buffer mirroring every
//! trainable scalar.

use crate::appearance::TemporalShGradient;
use crate::geometry::Vec3;
use crate::neural_field::{NetGradient, NeuralPrimitive};

/// Ordered collection of primitives plus the global quantities training
/// needs: the scene extent (camera bounding-sphere radius) that scale
/// thresholds are relative to, and the compositing background.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<NeuralPrimitive>,
    pub extent: f64,
    pub background: Vec3,
}

impl Scene {
    pub fn new(primitives: Vec<NeuralPrimitive>, extent: f64, background: Vec3) -> Self {
        Scene { primitives, extent, background }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// True when every primitive carries temporal parameters (the only
    /// configuration the renderer accepts for timed cameras).
    pub fn is_temporal(&self) -> bool {
        !self.primitives.is_empty() && self.primitives.iter().all(|p| p.is_temporal())
    }

    pub fn param_count(&self) -> usize {
        self.primitives.iter().map(|p| p.param_count()).sum()
    }
}

/// Gradient slots for one primitive. `dsh[0]` always holds the gradient of
/// the *effective* zero-order coefficient; in temporal mode render_backward
/// additionally routes it into `dtemporal_sh` (and the static `sh.coeffs[0]`
/// is not trained).
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGradient {
    pub net: NetGradient,
    pub dsh: Vec<Vec3>,
    pub dtemporal_sh: Option<TemporalShGradient>,
}

impl PrimitiveGradient {
    pub fn zeros_like(p: &NeuralPrimitive) -> Self {
        PrimitiveGradient {
            net: NetGradient::zeros(p.net.hidden(), p.is_temporal()),
            dsh: vec![Vec3::zeros(); p.sh.len()],
            dtemporal_sh: p
                .temporal_sh
                .as_ref()
                .map(|t| TemporalShGradient::zeros(t.poly.len(), t.four_cos.len())),
        }
    }

    pub fn reset(&mut self) {
        self.net.reset();
        for v in &mut self.dsh {
            *v = Vec3::zeros();
        }
        if let Some(t) = &mut self.dtemporal_sh {
            t.reset();
        }
    }

    pub fn add_assign(&mut self, other: &PrimitiveGradient) {
        self.net.add_assign(&other.net);
        for (a, b) in self.dsh.iter_mut().zip(&other.dsh) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.dtemporal_sh, &other.dtemporal_sh) {
            a.s0 += b.s0;
            for (x, y) in a
                .poly
                .iter_mut()
                .chain(&mut a.four_cos)
                .chain(&mut a.four_sin)
                .zip(b.poly.iter().chain(&b.four_cos).chain(&b.four_sin))
            {
                *x += y;
            }
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self == &PrimitiveGradient {
            net: NetGradient::zeros(self.net.dw1.len(), !self.net.dwt.is_empty()),
            dsh: vec![Vec3::zeros(); self.dsh.len()],
            dtemporal_sh: self
                .dtemporal_sh
                .as_ref()
                .map(|t| TemporalShGradient::zeros(t.poly.len(), t.four_cos.len())),
        }
    }
}

/// Per-primitive gradient accumulator for a whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub prims: Vec<PrimitiveGradient>,
}

impl GradientBuffer {
    pub fn zeros(scene: &Scene) -> Self {
        GradientBuffer {
            prims: scene.primitives.iter().map(PrimitiveGradient::zeros_like).collect(),
        }
    }

    pub fn reset(&mut self) {
        for p in &mut self.prims {
            p.reset();
        }
    }

    pub fn add_assign(&mut self, other: &GradientBuffer) {
        debug_assert_eq!(self.prims.len(), other.prims.len());
        for (a, b) in self.prims.iter_mut().zip(&other.prims) {
            a.add_assign(b);
        }
    }
}
