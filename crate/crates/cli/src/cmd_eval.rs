//! `nsplat eval`: PSNR/SSIM and model statistics for a checkpoint.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use nsplat_core::error::{Error, Result};
use nsplat_core::io::checkpoint::{checkpoint_bytes, load_checkpoint};
use nsplat_core::metrics::{psnr, ssim};
use nsplat_core::renderer::{render, RenderConfig};
use serde::Serialize;

use crate::common::{load_any_dataset, print_json, split_indices};
use crate::EvalArgs;

#[derive(Serialize)]
struct ViewMetrics {
    view: usize,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct MetricsReport {
    checkpoint: String,
    views: Vec<ViewMetrics>,
    mean_psnr: f64,
    mean_ssim: f64,
    n_primitives: usize,
    param_count: usize,
    checkpoint_bytes: usize,
    render_ms_per_frame: f64,
}

pub fn run(args: EvalArgs) -> Result<ExitCode> {
    let scene = load_checkpoint(&args.checkpoint)?;
    let dataset = load_any_dataset(&args.data, scene.background, args.downscale)?;
    let indices = split_indices(&dataset, args.split);
    if indices.is_empty() {
        return Err(Error::EmptyTestSplit);
    }

    let cfg = RenderConfig::for_scene(&scene);
    let mut views = Vec::with_capacity(indices.len());
    let mut total_ms = 0.0;
    for &i in &indices {
        let start = Instant::now();
        let out = render(&scene, &dataset.cameras[i], &cfg)?;
        total_ms += start.elapsed().as_secs_f64() * 1e3;
        views.push(ViewMetrics {
            view: i,
            psnr: psnr(&out.color, &dataset.images[i])?,
            ssim: ssim(&out.color, &dataset.images[i])?,
        });
    }

    let n = views.len() as f64;
    let report = MetricsReport {
        checkpoint: args.checkpoint.display().to_string(),
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
        n_primitives: scene.len(),
        param_count: scene.param_count(),
        checkpoint_bytes: checkpoint_bytes(&scene)?.len(),
        render_ms_per_frame: total_ms / n,
    };

    eprintln!("view     psnr(dB)    ssim");
    for v in &report.views {
        eprintln!("{:<8} {:>8.3} {:>7.4}", v.view, v.psnr, v.ssim);
    }
    eprintln!("mean     {:>8.3} {:>7.4}", report.mean_psnr, report.mean_ssim);
    eprintln!(
        "{} primitives, {} parameters, {} checkpoint bytes, {:.1} ms/frame",
        report.n_primitives, report.param_count, report.checkpoint_bytes, report.render_ms_per_frame
    );

    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&report).expect("report serialization"))?;
    }
    print_json(&report);
    Ok(ExitCode::SUCCESS)
}
