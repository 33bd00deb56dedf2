//! `nsplat train`: dataset in, checkpoint + JSON-lines log out.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;
use std::time::Instant;

use nsplat_core::error::{Error, Result};
use nsplat_core::geometry::Vec3;
use nsplat_core::io::checkpoint::{checkpoint_bytes, save_checkpoint};
use nsplat_core::io::points::{load_points, subsample_points};
use nsplat_core::io::{min_enclosing_sphere, Dataset};
use nsplat_core::training::{init_scene, random_points_in_sphere, train, LogRecord, TrainConfig};
use serde::Serialize;

use crate::common::{focus_point, load_any_dataset, parse_background, print_json};
use crate::TrainArgs;

/// Primitive count when neither `--points` nor `--budget` pins one.
const DEFAULT_INIT_POINTS: usize = 256;
/// Default init points are drawn in a ball of this fraction of the camera-rig
/// radius around the joint camera focus.
const INIT_BALL_FRACTION: f64 = 0.2;

/// Forwards JSON-lines records to the log file while echoing a readable
/// progress row per record to stderr.
struct LogTee<W: Write> {
    file: W,
    line: Vec<u8>,
}

impl<W: Write> Write for LogTee<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        for &b in buf {
            if b == b'\n' {
                if let Ok(rec) = serde_json::from_slice::<LogRecord>(&self.line) {
                    eprintln!(
                        "iter {:>7}  loss {:.6}  l1 {:.6}  1-ssim {:.6}  train psnr {:>6.2}  prims {:>6}",
                        rec.iter, rec.loss, rec.l1, rec.dssim, rec.psnr_train, rec.n_primitives
                    );
                }
                self.line.clear();
            } else {
                self.line.push(b);
            }
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()
    }
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config { msg: format!("{}: {e}", path.display()) })?
        }
        None => TrainConfig::default(),
    };
    if let Some(iters) = args.iters {
        cfg.iterations = iters;
    }
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    if args.budget.is_some() || args.no_densify {
        cfg.fixed_budget = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Initial primitive centers: the provided cloud (subsampled or topped up to
/// the budget), or random points around the cameras' joint focus.
fn initial_points(args: &TrainArgs, dataset: &Dataset, seed: u64) -> Result<Vec<Vec3>> {
    if let Some(path) = &args.points {
        let mut pts = load_points(path)?;
        if let Some(budget) = args.budget {
            if pts.len() > budget {
                pts = subsample_points(&pts, budget, seed);
            } else if pts.len() < budget {
                let (center, radius) = min_enclosing_sphere(&pts);
                let radius = radius.max(1e-3 * dataset.scene_extent);
                pts.extend(random_points_in_sphere(center, radius, budget - pts.len(), seed));
            }
        }
        return Ok(pts);
    }
    let n = args.budget.unwrap_or(DEFAULT_INIT_POINTS);
    let center = focus_point(&dataset.cameras);
    Ok(random_points_in_sphere(center, INIT_BALL_FRACTION * dataset.scene_extent, n, seed))
}

#[derive(Serialize)]
struct TrainSummary {
    checkpoint: String,
    log: String,
    iterations: u64,
    n_primitives: usize,
    param_count: usize,
    checkpoint_bytes: usize,
    final_loss: Option<f64>,
    final_psnr_train: Option<f64>,
    skipped_non_finite: u64,
    wall_s: f64,
}

pub fn run(args: TrainArgs) -> Result<ExitCode> {
    let background = parse_background(&args.background)?;
    let dataset = load_any_dataset(&args.data, background, args.downscale)?;
    let cfg = build_config(&args)?;

    if dataset.cameras.iter().any(|c| c.time.is_some()) && !args.temporal {
        eprintln!("note: dataset has timestamped views; pass --temporal to train a dynamic scene");
    }

    let points = initial_points(&args, &dataset, cfg.rng_seed)?;
    let mut scene = init_scene(&points, dataset.scene_extent, background, cfg.rng_seed)?;
    if args.temporal {
        for p in &mut scene.primitives {
            p.enable_temporal(4, 4);
        }
    }
    eprintln!(
        "loaded {} views ({} train / {} test), extent {:.3}; starting from {} primitives",
        dataset.n_views(),
        dataset.split.train.len(),
        dataset.split.test.len(),
        dataset.scene_extent,
        scene.len()
    );

    fs::create_dir_all(&args.out)?;
    let log_path = args.out.join("log.jsonl");
    let mut sink = LogTee { file: BufWriter::new(fs::File::create(&log_path)?), line: Vec::new() };

    let start = Instant::now();
    let report = train(&dataset, scene, &cfg, Some(&mut sink), Some(&args.out))?;
    sink.flush()?;
    let wall_s = start.elapsed().as_secs_f64();

    let ckpt_path = args.out.join("checkpoint.nspl");
    save_checkpoint(&report.scene, &ckpt_path)?;
    let bytes = checkpoint_bytes(&report.scene)?.len();

    print_json(&TrainSummary {
        checkpoint: ckpt_path.display().to_string(),
        log: log_path.display().to_string(),
        iterations: cfg.iterations,
        n_primitives: report.scene.len(),
        param_count: report.scene.param_count(),
        checkpoint_bytes: bytes,
        final_loss: report.log.last().map(|r| r.loss),
        final_psnr_train: report.log.last().map(|r| r.psnr_train),
        skipped_non_finite: report.skipped_non_finite,
        wall_s,
    });
    Ok(ExitCode::SUCCESS)
}
