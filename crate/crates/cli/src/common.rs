//! Helpers shared by the subcommands.

use std::path::Path;

use nsplat_core::error::{Error, Result};
use nsplat_core::geometry::{Mat3, Vec3};
use nsplat_core::io::{blender, load_text_dataset, min_enclosing_sphere, Dataset};
use nsplat_core::renderer::Camera;
use serde::Serialize;

/// Parses `r,g,b` with components in [0, 1].
pub fn parse_background(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Config { msg: format!("background must be `r,g,b` in [0,1], got `{s}`") };
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut v = Vec3::zeros();
    for (i, p) in parts.iter().enumerate() {
        let x: f64 = p.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&x) {
            return Err(bad());
        }
        v[i] = x;
    }
    Ok(v)
}

/// Loads a dataset directory in either supported layout: a NeRF-style
/// `transforms_train.json` tree or plain-text `cameras*.txt` files.
pub fn load_any_dataset(dir: &Path, background: Vec3, downscale: usize) -> Result<Dataset> {
    if dir.join("transforms_train.json").exists() {
        blender::load_nerf_blender(dir, background, downscale)
    } else {
        load_text_dataset(dir, background, downscale)
    }
}

/// The point jointly closest to all optical axes (least squares), which for
/// an inward-looking rig is where the cameras converge. Falls back to the
/// center of the camera positions when the axes are near-parallel.
pub fn focus_point(cameras: &[Camera]) -> Vec3 {
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for cam in cameras {
        let d: Vec3 = cam.rotation.column(2).into();
        let proj = Mat3::identity() - d * d.transpose();
        a += proj;
        b += proj * cam.position;
    }
    match a.lu().solve(&b) {
        Some(x) => x,
        None => min_enclosing_sphere(&cameras.iter().map(|c| c.position).collect::<Vec<_>>()).0,
    }
}

/// View indices selected by a `--split` flag.
pub fn split_indices(dataset: &Dataset, choice: crate::SplitChoice) -> Vec<usize> {
    match choice {
        crate::SplitChoice::Train => dataset.split.train.clone(),
        crate::SplitChoice::Test => dataset.split.test.clone(),
        crate::SplitChoice::All => (0..dataset.n_views()).collect(),
    }
}

/// Writes one machine-readable JSON document to stdout.
pub fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialization"));
}
