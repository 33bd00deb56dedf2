//! Plain-text camera file: one posed view per line.
//!
//! Line format (whitespace separated, `#` starts a comment):
//!
//! ```text
//! name w h fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz [time]
//! ```
//!
//! `r00..r22` is the row-major world-from-camera rotation (+z forward,
//! y down) and `t` the camera position in world coordinates. The optional
//! trailing `time` column (a normalized timestamp in [0,1]) marks a view of
//! a dynamic scene. Names must not contain whitespace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::renderer::Camera;

pub fn save_cameras(path: &Path, entries: &[(String, Camera)]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# name w h fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz [time]\n");
    for (name, cam) in entries {
        write!(out, "{} {} {} {} {} {} {}", name, cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy)
            .unwrap();
        for r in 0..3 {
            for c in 0..3 {
                write!(out, " {}", cam.rotation[(r, c)]).unwrap();
            }
        }
        write!(out, " {} {} {}", cam.position.x, cam.position.y, cam.position.z).unwrap();
        if let Some(t) = cam.time {
            write!(out, " {t}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_cameras(path: &Path) -> Result<Vec<(String, Camera)>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |msg: String| Error::CameraFile {
            path: path.to_path_buf(),
            line: line_no + 1,
            msg,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 19 && tokens.len() != 20 {
            return Err(fail(format!("expected 19 or 20 fields, found {}", tokens.len())));
        }
        let name = tokens[0].to_string();
        let nums: Vec<f64> = tokens[1..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("bad number: {e}")))?;
        let (w, h) = (nums[0], nums[1]);
        if w < 1.0 || h < 1.0 || w.fract() != 0.0 || h.fract() != 0.0 {
            return Err(fail(format!("bad image size {w}x{h}")));
        }
        let rotation = Mat3::new(
            nums[6], nums[7], nums[8], nums[9], nums[10], nums[11], nums[12], nums[13], nums[14],
        );
        let cam = Camera {
            rotation,
            position: Vec3::new(nums[15], nums[16], nums[17]),
            fx: nums[2],
            fy: nums[3],
            cx: nums[4],
            cy: nums[5],
            width: w as usize,
            height: h as usize,
            time: nums.get(18).copied(),
        };
        entries.push((name, cam));
    }
    if entries.is_empty() {
        return Err(Error::CameraFile {
            path: path.to_path_buf(),
            line: 0,
            msg: "no camera entries".to_string(),
        });
    }
    Ok(entries)
}
