//! Optimization loop: point-cloud initialization, the combined photometric
//! objective, Adam updates over five parameter groups, and gradient-driven
//! population control.

pub mod adam;
pub mod densify;
pub mod loss;

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::ShCoefficients;
use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, Vec3};
use crate::io::checkpoint::save_checkpoint;
use crate::io::Dataset;
use crate::metrics::psnr;
use crate::neural_field::{DensityNet, NeuralPrimitive};
use crate::renderer::{render_backward, render_with_records, RenderConfig};
use crate::scene::Scene;

pub use adam::{adam_step, AdamState, PrimMoments, SCALE_FLOOR};
pub use densify::{densify_and_prune, DensifyOutcome, DensifyStats};
pub use loss::{loss, LossOutput};

/// Hidden width of the per-primitive density network.
pub const HIDDEN: usize = 8;
/// Fixed phase frequency of the density network.
pub const OMEGA: f64 = 30.0;
/// Spherical-harmonic coefficient count (bands 0..3).
pub const N_SH: usize = 16;

/// Everything the train loop needs to know. Deserializes from JSON with
/// every field optional, so partial config files override just what they
/// name.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr_mlp: f64,
    pub lr_means: f64,
    pub lr_scales: f64,
    pub lr_quats: f64,
    pub lr_sh: f64,
    /// Weight λ of the DSSIM term; L1 gets 1−λ.
    pub ssim_weight: f64,
    /// Weight of the scale-isotropy regulariser.
    pub geo_reg_weight: f64,
    /// Population events run every this many iterations…
    pub densify_interval: u64,
    /// …within the closed iteration window [start, end].
    pub densify_start: u64,
    pub densify_end: u64,
    pub grow_grad_threshold: f64,
    pub prune_grad_threshold: f64,
    /// Grow rule: clone at or under this fraction of the scene extent,
    /// split above it.
    pub grow_scale_threshold: f64,
    /// Prune any primitive larger than this fraction of the scene extent.
    pub prune_scale_threshold: f64,
    /// When set, the primitive count stays fixed: densification disabled.
    pub fixed_budget: bool,
    pub rng_seed: u64,
    /// Emit a log record every this many iterations (and on the last one).
    pub log_interval: u64,
    /// Write `checkpoint_<iter>.nspl` every this many iterations into the
    /// checkpoint directory, if one was given. Zero disables periodic
    /// checkpoints.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100_000,
            lr_mlp: 1e-3,
            lr_means: 1.6e-4,
            lr_scales: 5e-3,
            lr_quats: 1e-3,
            lr_sh: 2.5e-3,
            ssim_weight: 0.2,
            geo_reg_weight: 0.01,
            densify_interval: 200,
            densify_start: 1_000,
            densify_end: 20_000,
            grow_grad_threshold: 1e-5,
            prune_grad_threshold: 1e-6,
            grow_scale_threshold: 1e-2,
            prune_scale_threshold: 0.5,
            fixed_budget: false,
            rng_seed: 0,
            log_interval: 100,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_mlp", self.lr_mlp),
            ("lr_means", self.lr_means),
            ("lr_scales", self.lr_scales),
            ("lr_quats", self.lr_quats),
            ("lr_sh", self.lr_sh),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config { msg: format!("{name} must be positive, got {v}") });
            }
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::Config {
                msg: format!("ssim_weight must lie in [0, 1], got {}", self.ssim_weight),
            });
        }
        if self.geo_reg_weight < 0.0 {
            return Err(Error::Config {
                msg: format!("geo_reg_weight must be non-negative, got {}", self.geo_reg_weight),
            });
        }
        if !self.fixed_budget {
            if self.densify_interval == 0 {
                return Err(Error::Config { msg: "densify_interval must be positive".into() });
            }
            if self.densify_start >= self.densify_end {
                return Err(Error::Config {
                    msg: format!(
                        "densify window is empty: start {} >= end {}",
                        self.densify_start, self.densify_end
                    ),
                });
            }
            if self.densify_end > self.iterations {
                return Err(Error::Config {
                    msg: format!(
                        "densify_end {} exceeds iterations {}",
                        self.densify_end, self.iterations
                    ),
                });
            }
        }
        if self.log_interval == 0 {
            return Err(Error::Config { msg: "log_interval must be positive".into() });
        }
        Ok(())
    }
}

/// One JSON-lines log record, emitted every `log_interval` iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub loss: f64,
    pub l1: f64,
    pub dssim: f64,
    pub geo_reg: f64,
    pub psnr_train: f64,
    pub n_primitives: usize,
    pub wall_ms: u64,
}

/// Result of a training run: the final scene plus the collected log.
#[derive(Debug)]
pub struct TrainReport {
    pub scene: Scene,
    pub log: Vec<LogRecord>,
    /// Gradient scalars skipped for being non-finite across the whole run.
    pub skipped_non_finite: u64,
}

/// Builds the starting scene from a point cloud.
///
/// One primitive per point: center at the point, isotropic scale equal to
/// the mean nearest-neighbor distance of the cloud clamped to
/// [1e-4, 0.1]·extent (a single point gets the upper clamp), identity
/// orientation. Density nets start near-transparent and smooth: W1 uniform
/// in ±1/3, b1 zero, W2 uniform in ±√(6/8)/ω, b2 = 0.1. Appearance starts
/// at mid-gray (all SH coefficients zero).
pub fn init_scene(
    points: &[Vec3],
    extent: f64,
    background: Vec3,
    seed: u64,
) -> Result<Scene> {
    if points.is_empty() {
        return Err(Error::EmptyPoints);
    }
    let scale = if points.len() == 1 {
        0.1 * extent
    } else {
        let mut sum = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    best = best.min((p - q).norm_squared());
                }
            }
            sum += best.sqrt();
        }
        let mean_nn = sum / points.len() as f64;
        mean_nn.clamp(1e-4 * extent, 0.1 * extent)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1_bound = 1.0 / 3.0;
    let w2_bound = (6.0 / HIDDEN as f64).sqrt() / OMEGA;
    let primitives = points
        .iter()
        .map(|&center| {
            let mut net = DensityNet::zeros(HIDDEN, OMEGA);
            for k in 0..HIDDEN {
                net.w1[k] = Vec3::new(
                    rng.gen_range(-w1_bound..w1_bound),
                    rng.gen_range(-w1_bound..w1_bound),
                    rng.gen_range(-w1_bound..w1_bound),
                );
                net.w2[k] = rng.gen_range(-w2_bound..w2_bound);
            }
            net.b2 = 0.1;
            NeuralPrimitive::new(
                Ellipsoid::new(center, Vec3::new(scale, scale, scale), [1.0, 0.0, 0.0, 0.0]),
                net,
                ShCoefficients::zeros(N_SH),
            )
        })
        .collect();
    Ok(Scene::new(primitives, extent, background))
}

/// Seeded uniform sample of `n` points inside a ball — the initialization
/// source when no point cloud is available (or a smaller budget than the
/// cloud was requested).
pub fn random_points_in_sphere(center: Vec3, radius: f64, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm_squared() <= 1.0 {
                break center + radius * v;
            }
        })
        .collect()
}

fn write_diagnostic_checkpoint(scene: &Scene, dir: Option<&Path>, iter: u64) -> Option<PathBuf> {
    let dir = dir?;
    let path = dir.join(format!("diagnostic_iter{iter}.nspl"));
    match save_checkpoint(scene, &path) {
        Ok(()) => Some(path),
        Err(_) => None,
    }
}

/// Runs the optimization loop.
///
/// Each iteration renders one training view (views are visited in shuffled
/// epochs), evaluates the combined objective, backpropagates to every
/// parameter, applies one Adam step, and — inside the configured window and
/// unless a fixed budget was requested — periodically grows and prunes the
/// population. Log records go to `log_sink` as JSON lines and are also
/// collected in the report. A non-finite loss halts training with
/// `Error::NanLoss` after writing a diagnostic checkpoint (when a checkpoint
/// directory is available). Zero iterations return the initial scene
/// unchanged.
pub fn train(
    dataset: &Dataset,
    init: Scene,
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn IoWrite>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let train_views = &dataset.split.train;
    if train_views.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut scene = init;
    let mut state = AdamState::zeros(&scene);
    let mut stats = DensifyStats::zeros(scene.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut log = Vec::new();
    let start = Instant::now();

    let rcfg = RenderConfig::for_scene(&scene);

    let mut order: Vec<usize> = Vec::new();
    for iter in 1..=cfg.iterations {
        if order.is_empty() {
            order = train_views.to_vec();
            order.shuffle(&mut rng);
        }
        let view = order.pop().expect("order refilled above");
        let cam = &dataset.cameras[view];
        let target = &dataset.images[view];

        let out = render_with_records(&scene, cam, &rcfg, true)?;
        let l = loss::loss(&out.color, target, &scene, cfg.ssim_weight, cfg.geo_reg_weight)?;
        if !l.total.is_finite() {
            write_diagnostic_checkpoint(&scene, checkpoint_dir, iter);
            return Err(Error::NanLoss { iter });
        }

        let mut grads =
            render_backward(&scene, cam, &rcfg, &l.pixel_grad, out.records.as_deref())?;
        for (g, extra) in grads.prims.iter_mut().zip(&l.scale_grads) {
            g.net.dscale += extra;
        }

        stats.accumulate(&grads);
        adam_step(&mut scene, &grads, &mut state, cfg);

        if !cfg.fixed_budget
            && iter >= cfg.densify_start
            && iter <= cfg.densify_end
            && (iter - cfg.densify_start) % cfg.densify_interval == 0
        {
            densify_and_prune(&mut scene, &stats, &mut state, cfg, &mut rng)?;
            stats.reset(scene.len());
        }

        if iter % cfg.log_interval == 0 || iter == cfg.iterations {
            let record = LogRecord {
                iter,
                loss: l.total,
                l1: l.l1,
                dssim: l.dssim,
                geo_reg: l.geo_reg,
                psnr_train: psnr(&out.color, target)?,
                n_primitives: scene.len(),
                wall_ms: start.elapsed().as_millis() as u64,
            };
            if let Some(sink) = log_sink.as_deref_mut() {
                serde_json::to_writer(&mut *sink, &record)
                    .map_err(|e| Error::Config { msg: format!("log sink: {e}") })?;
                writeln!(sink)?;
            }
            log.push(record);
        }

        if cfg.checkpoint_interval > 0 && iter % cfg.checkpoint_interval == 0 {
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&scene, &dir.join(format!("checkpoint_{iter}.nspl")))?;
            }
        }
    }

    Ok(TrainReport { scene, log, skipped_non_finite: state.skipped_non_finite })
}
