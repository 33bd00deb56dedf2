//! `nsplat render`: checkpoint + cameras in, PNGs out.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use nsplat_core::error::Result;
use nsplat_core::io::camera_text::load_cameras;
use nsplat_core::io::checkpoint::load_checkpoint;
use nsplat_core::io::image::{save_png, save_raw};
use nsplat_core::renderer::{render, Camera, RenderConfig};
use serde::Serialize;

use crate::common::{load_any_dataset, print_json, split_indices};
use crate::RenderArgs;

#[derive(Serialize)]
struct RenderSummary {
    out_dir: String,
    frames: usize,
    ms_per_frame: f64,
}

pub fn run(args: RenderArgs) -> Result<ExitCode> {
    let scene = load_checkpoint(&args.checkpoint)?;
    let cfg = RenderConfig::for_scene(&scene);

    let views: Vec<(String, Camera)> = if let Some(camera_file) = &args.cameras {
        load_cameras(camera_file)?
    } else {
        let data = args.data.as_ref().expect("clap requires --data or --cameras");
        let dataset = load_any_dataset(data, scene.background, args.downscale)?;
        split_indices(&dataset, args.split)
            .into_iter()
            .map(|i| (format!("view{i:03}"), dataset.cameras[i].clone()))
            .collect()
    };

    fs::create_dir_all(&args.out)?;
    let mut total_ms = 0.0;
    for (name, cam) in &views {
        let start = Instant::now();
        let out = render(&scene, cam, &cfg)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        total_ms += ms;

        let mut path = args.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        path.set_extension("png");
        save_png(&out.color, &path)?;
        if args.raw {
            save_raw(&out.color, &path.with_extension("raw"))?;
        }
        eprintln!("{}  {:.1} ms", path.display(), ms);
    }

    print_json(&RenderSummary {
        out_dir: args.out.display().to_string(),
        frames: views.len(),
        ms_per_frame: total_ms / views.len().max(1) as f64,
    });
    Ok(ExitCode::SUCCESS)
}
