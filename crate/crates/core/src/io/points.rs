//! Point-cloud input for scene initialization: ASCII PLY or plain xyz text.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Loads vertex positions from an ASCII PLY file (any property layout that
/// includes x, y, z) or a plain whitespace-separated xyz text file with
/// optional `#` comments.
pub fn load_points(path: &Path) -> Result<Vec<Vec3>> {
    let text = fs::read_to_string(path)?;
    let fail = |msg: String| Error::PointFile { path: path.to_path_buf(), msg };
    let mut lines = text.lines();
    let first = lines.clone().find(|l| !l.trim().is_empty()).unwrap_or("");
    let points = if first.trim() == "ply" {
        parse_ply(&mut lines, fail)?
    } else {
        parse_xyz(&text, fail)?
    };
    if points.is_empty() {
        return Err(Error::EmptyPoints);
    }
    Ok(points)
}

fn parse_ply(
    lines: &mut std::str::Lines,
    fail: impl Fn(String) -> Error,
) -> Result<Vec<Vec3>> {
    // Header: format, element/property declarations, end_header.
    let mut n_vertices: Option<usize> = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut saw_format = false;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line == "ply" || line.starts_with("comment") {
            continue;
        }
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(fail("only ascii PLY is supported".into()));
                }
                saw_format = true;
            }
            Some("element") => {
                let kind = tok.next().unwrap_or("");
                in_vertex_element = kind == "vertex";
                if in_vertex_element {
                    let count = tok
                        .next()
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| fail("bad vertex count".into()))?;
                    n_vertices = Some(count);
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let name = tok
                        .last()
                        .ok_or_else(|| fail("property without a name".into()))?;
                    vertex_props.push(name.to_string());
                }
            }
            Some(other) => return Err(fail(format!("unexpected header line `{other}`"))),
            None => {}
        }
    }
    if !saw_format {
        return Err(fail("missing format declaration".into()));
    }
    let n = n_vertices.ok_or_else(|| fail("missing vertex element".into()))?;
    let idx_of = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| fail(format!("missing vertex property `{name}`")))
    };
    let (ix, iy, iz) = (idx_of("x")?, idx_of("y")?, idx_of("z")?);

    let mut points = Vec::with_capacity(n);
    for line in lines {
        if points.len() == n {
            break; // further elements (faces etc.) are ignored
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("bad vertex line `{line}`: {e}")))?;
        if vals.len() < vertex_props.len() {
            return Err(fail(format!(
                "vertex line has {} values, header declares {}",
                vals.len(),
                vertex_props.len()
            )));
        }
        points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
    }
    if points.len() < n {
        return Err(fail(format!("expected {n} vertices, found {}", points.len())));
    }
    Ok(points)
}

fn parse_xyz(text: &str, fail: impl Fn(String) -> Error) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("bad point line `{line}`: {e}")))?;
        if vals.len() < 3 {
            return Err(fail(format!("point line `{line}` has fewer than 3 values")));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    Ok(points)
}

/// Uniform subsample without replacement to at most `target` points,
/// deterministic per seed. Returns the input unchanged if it already fits.
pub fn subsample_points(points: &[Vec3], target: usize, seed: u64) -> Vec<Vec3> {
    if points.len() <= target {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..points.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(target);
    indices.sort_unstable(); // keep original relative order
    indices.into_iter().map(|i| points[i]).collect()
}
