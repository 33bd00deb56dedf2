//! NeRF-synthetic ("Blender") dataset loader.
//!
//! Reads `transforms_train.json` (and `transforms_test.json` when present):
//! a shared horizontal field of view `camera_angle_x` plus per-frame
//! camera-to-world matrices. File matrices use the OpenGL camera convention
//! (camera looks along −z, y up); they are converted to this crate's
//! +z-forward / y-down convention by negating the middle two rotation
//! columns. PNG alpha is composited over the requested background at load.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::image_buf::ImageF;
use crate::io::{image, Dataset, Split};
use crate::renderer::Camera;

/// Loads the train (and optional test) transforms under `dir`. `downscale`
/// is an integer factor applied to images and intrinsics (1 = native).
pub fn load_nerf_blender(dir: &Path, background: Vec3, downscale: usize) -> Result<Dataset> {
    let train = load_transforms(dir, "transforms_train.json", background, downscale)?;
    let test_path = dir.join("transforms_test.json");
    let test = if test_path.exists() {
        load_transforms(dir, "transforms_test.json", background, downscale)?
    } else {
        (Vec::new(), Vec::new())
    };
    let split = Split {
        train: (0..train.0.len()).collect(),
        test: (train.0.len()..train.0.len() + test.0.len()).collect(),
    };
    let mut cameras = train.0;
    let mut images = train.1;
    cameras.extend(test.0);
    images.extend(test.1);
    Dataset::new(cameras, images, split, background)
}

fn load_transforms(
    dir: &Path,
    file: &str,
    background: Vec3,
    downscale: usize,
) -> Result<(Vec<Camera>, Vec<ImageF>)> {
    let path = dir.join(file);
    let fail = |msg: String| Error::Dataset { path: path.clone(), msg };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| fail(format!("cannot read: {e}")))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| fail(format!("invalid JSON: {e}")))?;
    let angle_x = root
        .get("camera_angle_x")
        .and_then(Value::as_f64)
        .ok_or_else(|| fail("missing numeric field `camera_angle_x`".into()))?;
    let frames = root
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("missing array field `frames`".into()))?;
    if frames.is_empty() {
        return Err(fail("`frames` is empty".into()));
    }

    let mut cameras = Vec::with_capacity(frames.len());
    let mut images = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let ffail = |msg: String| fail(format!("frames[{i}]: {msg}"));
        let file_path = frame
            .get("file_path")
            .and_then(Value::as_str)
            .ok_or_else(|| ffail("missing `file_path`".into()))?;
        let matrix = parse_matrix(frame.get("transform_matrix")).map_err(&ffail)?;
        let time = frame.get("time").and_then(Value::as_f64);

        let mut img_path = dir.join(file_path.trim_start_matches("./"));
        if img_path.extension().is_none() {
            img_path.set_extension("png");
        }
        let mut img = image::load_png(&img_path, background)?;
        if downscale > 1 {
            img = image::downscale(&img, downscale);
        }
        let (w, h) = (img.width(), img.height());

        // OpenGL camera axes (x right, y up, z backward) to +z-forward,
        // y-down: negate the y and z columns.
        let rotation = Mat3::from_columns(&[
            Vec3::new(matrix[0][0], matrix[1][0], matrix[2][0]),
            -Vec3::new(matrix[0][1], matrix[1][1], matrix[2][1]),
            -Vec3::new(matrix[0][2], matrix[1][2], matrix[2][2]),
        ]);
        let position = Vec3::new(matrix[0][3], matrix[1][3], matrix[2][3]);
        let fx = 0.5 * w as f64 / (0.5 * angle_x).tan();
        cameras.push(Camera {
            rotation,
            position,
            fx,
            fy: fx,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            time,
        });
        images.push(img);
    }
    Ok((cameras, images))
}

fn parse_matrix(v: Option<&Value>) -> std::result::Result<[[f64; 4]; 4], String> {
    let rows = v
        .and_then(Value::as_array)
        .ok_or_else(|| "missing `transform_matrix`".to_string())?;
    if rows.len() != 4 {
        return Err(format!("transform_matrix has {} rows, expected 4", rows.len()));
    }
    let mut m = [[0.0; 4]; 4];
    for (r, row) in rows.iter().enumerate() {
        let cells = row
            .as_array()
            .ok_or_else(|| format!("transform_matrix row {r} is not an array"))?;
        if cells.len() != 4 {
            return Err(format!("transform_matrix row {r} has {} columns", cells.len()));
        }
        for (c, cell) in cells.iter().enumerate() {
            m[r][c] = cell
                .as_f64()
                .ok_or_else(|| format!("transform_matrix[{r}][{c}] is not a number"))?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::fs;

    fn write_solid_png(path: &Path, w: u32, h: u32, rgba: [u8; 4]) {
        let data: Vec<u8> = (0..w * h).flat_map(|_| rgba).collect();
        let buffer = ::image::RgbaImage::from_raw(w, h, data).unwrap();
        buffer.save(path).unwrap();
    }

    fn write_transforms(path: &Path, angle_x: f64, frames: &[(&str, [[f64; 4]; 4], Option<f64>)]) {
        let frames_json: Vec<serde_json::Value> = frames
            .iter()
            .map(|(fp, m, t)| {
                let mut obj = serde_json::json!({ "file_path": fp, "transform_matrix": m });
                if let Some(t) = t {
                    obj["time"] = serde_json::json!(t);
                }
                obj
            })
            .collect();
        let root = serde_json::json!({ "camera_angle_x": angle_x, "frames": frames_json });
        fs::write(path, serde_json::to_string_pretty(&root).unwrap()).unwrap();
    }

    const IDENTITY_POSE: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.5],
        [0.0, 1.0, 0.0, -1.5],
        [0.0, 0.0, 1.0, 4.0],
        [0.0, 0.0, 0.0, 1.0],
    ];

    #[test]
    fn intrinsics_follow_the_field_of_view_formula() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("train")).unwrap();
        write_solid_png(&dir.path().join("train/r_0.png"), 800, 800, [10, 20, 30, 255]);
        write_transforms(
            &dir.path().join("transforms_train.json"),
            0.6911112,
            &[("./train/r_0", IDENTITY_POSE, None)],
        );
        let ds = load_nerf_blender(dir.path(), Vec3::zeros(), 1).unwrap();
        assert_eq!(ds.n_views(), 1);
        let cam = &ds.cameras[0];
        assert_relative_eq!(cam.fx, 1111.111, epsilon = 0.01);
        assert_eq!(cam.fx, cam.fy);
        assert_eq!(cam.cx, 400.0);
        assert_eq!(cam.cy, 400.0);
    }

    #[test]
    fn downscale_divides_images_and_intrinsics() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("train")).unwrap();
        write_solid_png(&dir.path().join("train/r_0.png"), 800, 800, [0, 0, 0, 255]);
        write_transforms(
            &dir.path().join("transforms_train.json"),
            0.6911112,
            &[("./train/r_0", IDENTITY_POSE, None)],
        );
        let native = load_nerf_blender(dir.path(), Vec3::zeros(), 1).unwrap();
        let eighth = load_nerf_blender(dir.path(), Vec3::zeros(), 8).unwrap();
        assert_eq!(eighth.images[0].width(), 100);
        assert_eq!(eighth.images[0].height(), 100);
        assert_relative_eq!(eighth.cameras[0].fx, native.cameras[0].fx / 8.0, epsilon = 1e-9);
        assert_relative_eq!(eighth.cameras[0].cx, native.cameras[0].cx / 8.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_file_pose_looks_down_negative_z() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("train")).unwrap();
        write_solid_png(&dir.path().join("train/r_0.png"), 16, 16, [0, 0, 0, 255]);
        write_transforms(
            &dir.path().join("transforms_train.json"),
            1.0,
            &[("./train/r_0", IDENTITY_POSE, None)],
        );
        let ds = load_nerf_blender(dir.path(), Vec3::zeros(), 1).unwrap();
        let cam = &ds.cameras[0];
        assert_eq!(cam.position, Vec3::new(0.5, -1.5, 4.0));
        // OpenGL identity pose: forward is world −z, image up is world +y,
        // so our +z column must be (0,0,−1) and y (down) column (0,−1,0).
        let ray = cam.pixel_ray(cam.cx - 0.5, cam.cy - 0.5, 0.01, 100.0);
        assert_relative_eq!(ray.direction, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        let below = cam.pixel_ray(cam.cx - 0.5, cam.cy + 3.5, 0.01, 100.0);
        assert!(below.direction.y < -1e-3, "image-down must map to world −y");
    }

    #[test]
    fn alpha_composites_over_requested_background() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("train")).unwrap();
        // Fully transparent image: loads as pure background.
        write_solid_png(&dir.path().join("train/r_0.png"), 8, 8, [255, 255, 255, 0]);
        write_transforms(
            &dir.path().join("transforms_train.json"),
            1.0,
            &[("./train/r_0", IDENTITY_POSE, None)],
        );
        let bg = Vec3::new(1.0, 1.0, 1.0);
        let ds = load_nerf_blender(dir.path(), bg, 1).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(ds.images[0].get(x, y), bg);
            }
        }
    }

    #[test]
    fn optional_time_field_reaches_cameras() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("train")).unwrap();
        write_solid_png(&dir.path().join("train/r_0.png"), 8, 8, [0, 0, 0, 255]);
        write_solid_png(&dir.path().join("train/r_1.png"), 8, 8, [0, 0, 0, 255]);
        write_transforms(
            &dir.path().join("transforms_train.json"),
            1.0,
            &[
                ("./train/r_0", IDENTITY_POSE, Some(0.25)),
                ("./train/r_1", IDENTITY_POSE, None),
            ],
        );
        let ds = load_nerf_blender(dir.path(), Vec3::zeros(), 1).unwrap();
        assert_eq!(ds.cameras[0].time, Some(0.25));
        assert_eq!(ds.cameras[1].time, None);
    }

    #[test]
    fn missing_and_malformed_files_are_descriptive_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_nerf_blender(dir.path(), Vec3::zeros(), 1),
            Err(Error::Dataset { .. })
        ));
        fs::write(dir.path().join("transforms_train.json"), "{}").unwrap();
        match load_nerf_blender(dir.path(), Vec3::zeros(), 1) {
            Err(Error::Dataset { msg, .. }) => assert!(msg.contains("camera_angle_x")),
            other => panic!("expected Dataset error, got {other:?}"),
        }
        fs::write(
            dir.path().join("transforms_train.json"),
            r#"{"camera_angle_x": 1.0, "frames": []}"#,
        )
        .unwrap();
        match load_nerf_blender(dir.path(), Vec3::zeros(), 1) {
            Err(Error::Dataset { msg, .. }) => assert!(msg.contains("empty")),
            other => panic!("expected Dataset error, got {other:?}"),
        }
    }
}
