//! Dataset loading, point-cloud input, checkpoint persistence, and image
//! files.
//!
//! All images live in linear RGB float buffers internally; gamma conversion
//! happens only at the PNG boundary (`image::save_png` / `image::load_png`).

pub mod blender;
pub mod camera_text;
pub mod checkpoint;
pub mod image;
pub mod points;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image_buf::ImageF;
use crate::renderer::Camera;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Train/test partition over view indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Every-8th-view holdout, used when a source provides no explicit
/// partition. Always keeps at least one training view.
pub fn default_split(n_views: usize) -> Split {
    let mut split = Split::default();
    for i in 0..n_views {
        if i % 8 == 0 {
            split.test.push(i);
        } else {
            split.train.push(i);
        }
    }
    if split.train.is_empty() {
        split.train = std::mem::take(&mut split.test);
    }
    split
}

/// A set of posed views with ground-truth images, a train/test partition,
/// and the camera-derived scene extent.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageF>,
    pub split: Split,
    /// Radius of the minimal sphere enclosing all camera positions.
    pub scene_extent: f64,
    /// Background the images were composited over (and renders compare on).
    pub background: Vec3,
}

impl Dataset {
    /// Validates view shapes, computes the extent, and assembles a dataset.
    pub fn new(
        cameras: Vec<Camera>,
        images: Vec<ImageF>,
        split: Split,
        background: Vec3,
    ) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if cameras.len() != images.len() {
            return Err(Error::ShapeMismatch(cameras.len(), 1, images.len(), 1));
        }
        for (cam, img) in cameras.iter().zip(&images) {
            if cam.width != img.width() || cam.height != img.height() {
                return Err(Error::ShapeMismatch(
                    cam.width,
                    cam.height,
                    img.width(),
                    img.height(),
                ));
            }
        }
        for &i in split.train.iter().chain(&split.test) {
            if i >= cameras.len() {
                return Err(Error::ShapeMismatch(i, 1, cameras.len(), 1));
            }
        }
        let positions: Vec<Vec3> = cameras.iter().map(|c| c.position).collect();
        let (_, scene_extent) = min_enclosing_sphere(&positions);
        Ok(Dataset { cameras, images, split, scene_extent, background })
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn train_views(&self) -> Vec<(&Camera, &ImageF)> {
        self.split.train.iter().map(|&i| (&self.cameras[i], &self.images[i])).collect()
    }

    pub fn test_views(&self) -> Vec<(&Camera, &ImageF)> {
        self.split.test.iter().map(|&i| (&self.cameras[i], &self.images[i])).collect()
    }
}

/// Loads a dataset from a directory of text camera files plus images.
///
/// `cameras_train.txt` + `cameras_test.txt` give an explicit partition; a
/// single `cameras.txt` falls back to the every-8th-view holdout. The name
/// column of each entry locates the image file relative to `dir` (`.png`
/// appended when the name has no extension).
pub fn load_text_dataset(dir: &std::path::Path, background: Vec3, downscale: usize) -> Result<Dataset> {
    let train_path = dir.join("cameras_train.txt");
    let test_path = dir.join("cameras_test.txt");
    let (entries, split) = if train_path.exists() && test_path.exists() {
        let train = camera_text::load_cameras(&train_path)?;
        let test = camera_text::load_cameras(&test_path)?;
        let split = Split {
            train: (0..train.len()).collect(),
            test: (train.len()..train.len() + test.len()).collect(),
        };
        (train.into_iter().chain(test).collect::<Vec<_>>(), split)
    } else {
        let entries = camera_text::load_cameras(&dir.join("cameras.txt"))?;
        let split = default_split(entries.len());
        (entries, split)
    };

    let mut cameras = Vec::with_capacity(entries.len());
    let mut images = Vec::with_capacity(entries.len());
    for (name, mut cam) in entries {
        let mut img_path = dir.join(&name);
        if img_path.extension().is_none() {
            img_path.set_extension("png");
        }
        let mut img = image::load_png(&img_path, background)?;
        if downscale > 1 {
            img = image::downscale(&img, downscale);
            cam.fx /= downscale as f64;
            cam.fy /= downscale as f64;
            cam.cx /= downscale as f64;
            cam.cy /= downscale as f64;
            cam.width /= downscale;
            cam.height /= downscale;
        }
        cameras.push(cam);
        images.push(img);
    }
    Dataset::new(cameras, images, split, background)
}

/// Smallest sphere containing all points (center, radius); (origin, 0) for
/// an empty set. Randomized Welzl recursion over support sets of ≤ 4 points.
pub fn min_enclosing_sphere(points: &[Vec3]) -> (Vec3, f64) {
    if points.is_empty() {
        return (Vec3::zeros(), 0.0);
    }
    let mut shuffled = points.to_vec();
    // Fixed seed: extents must be reproducible run to run.
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut support = Vec::with_capacity(4);
    welzl(&shuffled, points.len(), &mut support)
}

fn welzl(points: &[Vec3], n: usize, support: &mut Vec<Vec3>) -> (Vec3, f64) {
    if n == 0 || support.len() == 4 {
        return sphere_through(support);
    }
    let p = points[n - 1];
    let (center, radius) = welzl(points, n - 1, support);
    if (p - center).norm() <= radius * (1.0 + 1e-12) + 1e-12 {
        return (center, radius);
    }
    support.push(p);
    let result = welzl(points, n - 1, support);
    support.pop();
    result
}

/// Smallest sphere with all support points on its boundary (the Welzl base
/// case guarantees supports lie on the optimal sphere's surface).
fn sphere_through(support: &[Vec3]) -> (Vec3, f64) {
    match support {
        [] => (Vec3::zeros(), 0.0),
        [a] => (*a, 0.0),
        [a, b] => {
            let center = (a + b) / 2.0;
            (center, (a - center).norm())
        }
        [a, b, c] => circumcircle(a, b, c),
        [a, b, c, d] => circumsphere(a, b, c, d),
        _ => unreachable!("support sets never exceed 4 points"),
    }
}

fn circumcircle(a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, f64) {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let nn = n.norm_squared();
    if nn < 1e-24 {
        // Collinear: the two farthest points define a diameter sphere.
        let pairs = [(a, b), (a, c), (b, c)];
        let (p, q) = pairs
            .iter()
            .max_by(|x, y| {
                let dx = (x.0 - x.1).norm_squared();
                let dy = (y.0 - y.1).norm_squared();
                dx.partial_cmp(&dy).unwrap()
            })
            .unwrap();
        let center = (*p + *q) / 2.0;
        return (center, (*p - center).norm());
    }
    let center = a + (n.cross(&ab) * ac.norm_squared() + ac.cross(&n) * ab.norm_squared())
        / (2.0 * nn);
    (center, (a - center).norm())
}

fn circumsphere(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> (Vec3, f64) {
    let m = crate::geometry::Mat3::from_rows(&[
        (2.0 * (b - a)).transpose(),
        (2.0 * (c - a)).transpose(),
        (2.0 * (d - a)).transpose(),
    ]);
    let rhs = Vec3::new(
        b.norm_squared() - a.norm_squared(),
        c.norm_squared() - a.norm_squared(),
        d.norm_squared() - a.norm_squared(),
    );
    match m.lu().solve(&rhs) {
        Some(center) => (center, (a - center).norm()),
        None => {
            // Coplanar support: fall back to the best 3-point sphere that
            // contains the fourth point.
            let subsets: [[&Vec3; 3]; 4] = [[a, b, c], [a, b, d], [a, c, d], [b, c, d]];
            let mut best: Option<(Vec3, f64)> = None;
            for s in subsets {
                let (ctr, r) = circumcircle(s[0], s[1], s[2]);
                let covers = [a, b, c, d].iter().all(|p| (*p - ctr).norm() <= r + 1e-9);
                if covers && best.map_or(true, |(_, br)| r < br) {
                    best = Some((ctr, r));
                }
            }
            best.unwrap_or_else(|| {
                let center = (a + b + c + d) / 4.0;
                let r = [a, b, c, d].iter().map(|p| (*p - center).norm()).fold(0.0, f64::max);
                (center, r)
            })
        }
    }
}
