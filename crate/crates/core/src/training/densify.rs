//! Population control: growing primitives where the density-network
//! gradients stay large and pruning the ones that stopped contributing or
//! ballooned past the scene scale.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{GradientBuffer, Scene};
use crate::training::adam::{AdamState, PrimMoments};
use crate::training::TrainConfig;

/// Children of a split keep the parent's shape at reduced size.
const SPLIT_SCALE_SHRINK: f64 = 1.6;
/// Clone offset magnitude relative to the parent's per-axis scale.
const CLONE_JITTER: f64 = 0.01;

/// Running mean of the per-primitive density-network gradient magnitude
/// (L2 norm over the W1, b1, W2, b2 blocks), accumulated between population
/// events.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyStats {
    sums: Vec<f64>,
    steps: u64,
}

impl DensifyStats {
    pub fn zeros(n_prims: usize) -> Self {
        DensifyStats { sums: vec![0.0; n_prims], steps: 0 }
    }

    pub fn accumulate(&mut self, grads: &GradientBuffer) {
        debug_assert_eq!(self.sums.len(), grads.prims.len());
        for (s, g) in self.sums.iter_mut().zip(&grads.prims) {
            *s += g.net.net_block_norm();
        }
        self.steps += 1;
    }

    /// Mean statistic for one primitive; zero before any accumulation.
    pub fn mean(&self, i: usize) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.sums[i] / self.steps as f64
        }
    }

    pub fn reset(&mut self, n_prims: usize) {
        self.sums.clear();
        self.sums.resize(n_prims, 0.0);
        self.steps = 0;
    }
}

/// What one population event did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

impl DensifyOutcome {
    /// Population after the event given the count before it: every clone
    /// adds one primitive, every split nets one (parent out, two children
    /// in), every prune removes one.
    pub fn expected_count(&self, before: usize) -> usize {
        before + self.cloned + self.split - self.pruned
    }
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Applies one grow/prune pass.
///
/// Per primitive, in index order:
/// - prune when the stat falls below `prune_grad_threshold` or the largest
///   scale exceeds `prune_scale_threshold · extent`;
/// - otherwise grow when the stat exceeds `grow_grad_threshold`: primitives
///   no larger than `grow_scale_threshold · extent` are cloned (copy with
///   the center jittered by `0.01 · scale` along a random unit direction),
///   larger ones are split into two children with scales shrunk by 1.6 and
///   centers offset ±½ of the longest semi-axis along that axis (the parent
///   is removed).
///
/// Survivors keep their order, parameters, and optimizer moments untouched;
/// new primitives append in index order with zeroed moments. Errors with
/// `SceneEmptied` (leaving scene and state untouched) if nothing survives.
pub fn densify_and_prune(
    scene: &mut Scene,
    stats: &DensifyStats,
    state: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<DensifyOutcome> {
    debug_assert_eq!(scene.primitives.len(), stats.sums.len());
    debug_assert_eq!(scene.primitives.len(), state.prims.len());

    #[derive(Clone, Copy, PartialEq)]
    enum Action {
        Keep,
        Prune,
        Clone,
        Split,
    }

    let extent = scene.extent;
    let mut outcome = DensifyOutcome::default();
    let actions: Vec<Action> = scene
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stat = stats.mean(i);
            let max_s = p.geometry.max_scale();
            if stat < cfg.prune_grad_threshold || max_s > cfg.prune_scale_threshold * extent {
                Action::Prune
            } else if stat > cfg.grow_grad_threshold {
                if max_s <= cfg.grow_scale_threshold * extent {
                    Action::Clone
                } else {
                    Action::Split
                }
            } else {
                Action::Keep
            }
        })
        .collect();

    let mut survivors = Vec::new();
    let mut survivor_moments = Vec::new();
    let mut appended = Vec::new();
    for (i, action) in actions.iter().enumerate() {
        let p = &scene.primitives[i];
        match action {
            Action::Prune => outcome.pruned += 1,
            Action::Keep => {
                survivors.push(p.clone());
                survivor_moments.push(state.prims[i].clone());
            }
            Action::Clone => {
                outcome.cloned += 1;
                survivors.push(p.clone());
                survivor_moments.push(state.prims[i].clone());
                let mut child = p.clone();
                let dir = random_unit(rng);
                child.geometry.center +=
                    CLONE_JITTER * child.geometry.scale.component_mul(&dir);
                appended.push(child);
            }
            Action::Split => {
                outcome.split += 1;
                let axis = p.geometry.max_scale_axis();
                let half = 0.5 * p.geometry.max_scale();
                let world_axis = p.geometry.rotation_matrix().column(axis).into_owned();
                for sign in [1.0, -1.0] {
                    let mut child = p.clone();
                    child.geometry.scale /= SPLIT_SCALE_SHRINK;
                    child.geometry.center += sign * half * world_axis;
                    appended.push(child);
                }
            }
        }
    }

    if survivors.is_empty() && appended.is_empty() {
        return Err(Error::SceneEmptied);
    }

    for child in &appended {
        survivor_moments.push(PrimMoments::zeros_like(child));
    }
    survivors.extend(appended);
    scene.primitives = survivors;
    state.prims = survivor_moments;
    Ok(outcome)
}
