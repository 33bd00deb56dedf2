//! Binary scene checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! preamble  16 B : magic "NSPL", u32 version (=1), u32 header_len (=48), u32 reserved
//! header    48 B : u32 hidden units N      f32 omega
//!                  u32 SH coefficients S   u32 flags (bit0 time weights,
//!                                                     bit1 temporal SH curve)
//!                  u32 poly order P        u32 fourier order L
//!                  f32 scene extent        f32 background r, g, b
//!                  u64 primitive count
//! records        : count × record of f32 scalars in order
//!                  center 3 | scale 3 | quaternion 4
//!                  | W1 3N (unit-major, xyz) | b1 N | W2 N | b2 1
//!                  | SH 3S (coefficient-major, rgb)
//!                  | [Wt N]                          when flags bit0
//!                  | [S0 3 | poly 3P | cos 3L | sin 3L]  when flags bit1
//! ```
//!
//! With defaults (N=8, S=16, static) a record is 99 scalars — 396 bytes.
//! Loading promotes f32 to the in-memory f64; saving truncates to f32, so
//! `save(load(f))` reproduces `f` byte for byte.

use std::fs;
use std::path::Path;

use crate::appearance::{ShCoefficients, TemporalSh};
use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, Vec3};
use crate::neural_field::{DensityNet, NeuralPrimitive, DEFAULT_HIDDEN, DEFAULT_OMEGA};
use crate::scene::Scene;

const MAGIC: &[u8; 4] = b"NSPL";
const VERSION: u32 = 1;
const HEADER_LEN: u32 = 48;
const FLAG_WT: u32 = 1;
const FLAG_TEMPORAL_SH: u32 = 2;

/// Global layout parameters shared by every record in a file.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    hidden: usize,
    omega: f64,
    n_sh: usize,
    has_wt: bool,
    temporal_orders: Option<(usize, usize)>,
}

impl Layout {
    fn of(p: &NeuralPrimitive) -> Layout {
        Layout {
            hidden: p.net.hidden(),
            omega: p.net.omega,
            n_sh: p.sh.len(),
            has_wt: p.wt.is_some(),
            temporal_orders: p.temporal_sh.as_ref().map(|t| (t.poly.len(), t.four_cos.len())),
        }
    }

    fn record_scalars(&self) -> usize {
        let mut n = 10 + 5 * self.hidden + 1 + 3 * self.n_sh;
        if self.has_wt {
            n += self.hidden;
        }
        if let Some((p, l)) = self.temporal_orders {
            n += 3 + 3 * p + 6 * l;
        }
        n
    }
}

pub fn save_checkpoint(scene: &Scene, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(scene)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Scene> {
    scene_from_bytes(&fs::read(path)?)
}

/// Serializes a scene; errors if primitives disagree on layout parameters.
pub fn checkpoint_bytes(scene: &Scene) -> Result<Vec<u8>> {
    let layout = match scene.primitives.first() {
        Some(p) => Layout::of(p),
        None => Layout {
            hidden: DEFAULT_HIDDEN,
            omega: DEFAULT_OMEGA,
            n_sh: 16,
            has_wt: false,
            temporal_orders: None,
        },
    };
    for (i, p) in scene.primitives.iter().enumerate() {
        if Layout::of(p) != layout {
            return Err(Error::Checkpoint {
                offset: 0,
                msg: format!("primitive {i} disagrees with the file-wide layout"),
            });
        }
        if let Some(ts) = &p.temporal_sh {
            if ts.four_sin.len() != ts.four_cos.len() {
                return Err(Error::Checkpoint {
                    offset: 0,
                    msg: format!("primitive {i} has mismatched fourier cos/sin orders"),
                });
            }
        }
    }

    let mut out = Vec::with_capacity(
        16 + HEADER_LEN as usize + scene.len() * layout.record_scalars() * 4,
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&HEADER_LEN.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());

    let flags = if layout.has_wt { FLAG_WT } else { 0 }
        | if layout.temporal_orders.is_some() { FLAG_TEMPORAL_SH } else { 0 };
    let (poly, fourier) = layout.temporal_orders.unwrap_or((0, 0));
    out.extend_from_slice(&(layout.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(layout.omega as f32).to_le_bytes());
    out.extend_from_slice(&(layout.n_sh as u32).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(poly as u32).to_le_bytes());
    out.extend_from_slice(&(fourier as u32).to_le_bytes());
    out.extend_from_slice(&(scene.extent as f32).to_le_bytes());
    for c in 0..3 {
        out.extend_from_slice(&(scene.background[c] as f32).to_le_bytes());
    }
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());

    let mut push = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for p in &scene.primitives {
        for c in 0..3 {
            push(p.geometry.center[c]);
        }
        for c in 0..3 {
            push(p.geometry.scale[c]);
        }
        for q in p.geometry.rotation {
            push(q);
        }
        for w in &p.net.w1 {
            push(w.x);
            push(w.y);
            push(w.z);
        }
        for &b in &p.net.b1 {
            push(b);
        }
        for &w in &p.net.w2 {
            push(w);
        }
        push(p.net.b2);
        for c in &p.sh.coeffs {
            push(c.x);
            push(c.y);
            push(c.z);
        }
        if let Some(wt) = &p.wt {
            for &w in wt {
                push(w);
            }
        }
        if let Some(ts) = &p.temporal_sh {
            for v in std::iter::once(&ts.s0)
                .chain(&ts.poly)
                .chain(&ts.four_cos)
                .chain(&ts.four_sin)
            {
                push(v.x);
                push(v.y);
                push(v.z);
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                offset: self.bytes.len() as u64,
                msg: format!(
                    "unexpected end of file reading {n} bytes at offset {}",
                    self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f32()?, self.f32()?, self.f32()?))
    }
}

/// Parses checkpoint bytes, validating magic, version, and that the file
/// length matches the record layout exactly.
pub fn scene_from_bytes(bytes: &[u8]) -> Result<Scene> {
    let mut cur = Cursor { bytes, pos: 0 };
    let err = |offset: usize, msg: String| Error::Checkpoint { offset: offset as u64, msg };

    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(err(0, format!("bad magic {magic:02x?}, expected \"NSPL\"")));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = cur.u32()?;
    if header_len != HEADER_LEN {
        return Err(err(8, format!("header length {header_len}, expected {HEADER_LEN}")));
    }
    cur.u32()?; // reserved

    let hidden = cur.u32()? as usize;
    if hidden == 0 || hidden > 4096 {
        return Err(err(16, format!("implausible hidden width {hidden}")));
    }
    let omega = cur.f32()?;
    let n_sh = cur.u32()? as usize;
    if n_sh == 0 || n_sh > 64 {
        return Err(err(24, format!("implausible SH coefficient count {n_sh}")));
    }
    let flags = cur.u32()?;
    if flags & !(FLAG_WT | FLAG_TEMPORAL_SH) != 0 {
        return Err(err(28, format!("unknown flag bits {flags:#06b}")));
    }
    let poly = cur.u32()? as usize;
    let fourier = cur.u32()? as usize;
    let extent = cur.f32()?;
    let background = cur.vec3()?;
    let count = cur.u64()? as usize;

    let layout = Layout {
        hidden,
        omega,
        n_sh,
        has_wt: flags & FLAG_WT != 0,
        temporal_orders: (flags & FLAG_TEMPORAL_SH != 0).then_some((poly, fourier)),
    };
    let expect = 16 + HEADER_LEN as usize + count * layout.record_scalars() * 4;
    if bytes.len() != expect {
        return Err(err(
            bytes.len().min(expect),
            format!("file is {} bytes, layout requires {expect}", bytes.len()),
        ));
    }

    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let center = cur.vec3()?;
        let scale = cur.vec3()?;
        let rotation = [cur.f32()?, cur.f32()?, cur.f32()?, cur.f32()?];
        let mut net = DensityNet::zeros(hidden, omega);
        for w in net.w1.iter_mut() {
            *w = cur.vec3()?;
        }
        for b in net.b1.iter_mut() {
            *b = cur.f32()?;
        }
        for w in net.w2.iter_mut() {
            *w = cur.f32()?;
        }
        net.b2 = cur.f32()?;
        let mut sh = ShCoefficients::zeros(n_sh);
        for c in sh.coeffs.iter_mut() {
            *c = cur.vec3()?;
        }
        let mut p = NeuralPrimitive::new(Ellipsoid::new(center, scale, rotation), net, sh);
        if layout.has_wt {
            let mut wt = vec![0.0; hidden];
            for w in wt.iter_mut() {
                *w = cur.f32()?;
            }
            p.wt = Some(wt);
        }
        if layout.temporal_orders.is_some() {
            let mut ts = TemporalSh::zeros(poly, fourier);
            ts.s0 = cur.vec3()?;
            for v in ts.poly.iter_mut() {
                *v = cur.vec3()?;
            }
            for v in ts.four_cos.iter_mut() {
                *v = cur.vec3()?;
            }
            for v in ts.four_sin.iter_mut() {
                *v = cur.vec3()?;
            }
            p.temporal_sh = Some(ts);
        }
        primitives.push(p);
    }
    Ok(Scene::new(primitives, extent, background))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random scene whose scalars are all exactly f32-representable, so
    /// in-memory comparison after a round trip can be exact equality.
    fn f32_exact_scene(seed: u64, n: usize, temporal: bool) -> Scene {
        // All values drawn directly as f32 so every stored scalar survives
        // the f32 disk format bit-exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = move |lo: f32, hi: f32| rng.gen_range(lo..hi) as f64;
        let prims = (0..n)
            .map(|_| {
                let geometry = Ellipsoid::new(
                    Vec3::new(g(-2.0, 2.0), g(-2.0, 2.0), g(-2.0, 2.0)),
                    Vec3::new(g(0.1, 2.0), g(0.1, 2.0), g(0.1, 2.0)),
                    [g(0.5, 2.0), g(-1.0, 1.0), g(-1.0, 1.0), g(-1.0, 1.0)],
                );
                let mut net = DensityNet::zeros(8, 30.0);
                for w in net.w1.iter_mut() {
                    *w = Vec3::new(g(-2.0, 2.0), g(-2.0, 2.0), g(-2.0, 2.0));
                }
                for b in net.b1.iter_mut() {
                    *b = g(-2.0, 2.0);
                }
                for w in net.w2.iter_mut() {
                    *w = g(-2.0, 2.0);
                }
                net.b2 = g(-2.0, 2.0);
                let mut sh = ShCoefficients::zeros(16);
                for c in sh.coeffs.iter_mut() {
                    *c = Vec3::new(g(-2.0, 2.0), g(-2.0, 2.0), g(-2.0, 2.0));
                }
                let mut p = NeuralPrimitive::new(geometry, net, sh);
                if temporal {
                    p.enable_temporal(4, 4);
                    for w in p.wt.as_mut().unwrap() {
                        *w = g(-2.0, 2.0);
                    }
                    let ts = p.temporal_sh.as_mut().unwrap();
                    for v in ts.poly.iter_mut().chain(&mut ts.four_cos).chain(&mut ts.four_sin) {
                        *v = Vec3::new(g(-2.0, 2.0), g(-2.0, 2.0), g(-2.0, 2.0));
                    }
                }
                p
            })
            .collect();
        Scene::new(prims, 1.5, Vec3::new(0.25, 0.5, 0.75))
    }

    #[test]
    fn round_trip_preserves_scene_exactly() {
        for temporal in [false, true] {
            let scene = f32_exact_scene(100, 7, temporal);
            let bytes = checkpoint_bytes(&scene).unwrap();
            let back = scene_from_bytes(&bytes).unwrap();
            assert_eq!(scene.extent, back.extent);
            assert_eq!(scene.background, back.background);
            assert_eq!(scene.primitives, back.primitives);
        }
    }

    #[test]
    fn save_of_load_is_byte_identical() {
        let scene = f32_exact_scene(101, 5, true);
        let bytes = checkpoint_bytes(&scene).unwrap();
        let reloaded = scene_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&reloaded).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.nspl");
        let scene = f32_exact_scene(102, 3, false);
        save_checkpoint(&scene, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(scene.primitives, back.primitives);
    }

    #[test]
    fn static_record_is_99_scalars_and_size_matches_for_100() {
        let scene = f32_exact_scene(103, 100, false);
        let layout = Layout::of(&scene.primitives[0]);
        assert_eq!(layout.record_scalars(), 99);
        let bytes = checkpoint_bytes(&scene).unwrap();
        assert_eq!(bytes.len(), 16 + 48 + 99 * 4 * 100);
    }

    #[test]
    fn temporal_record_adds_wt_and_curve_blocks() {
        let scene = f32_exact_scene(104, 2, true);
        let layout = Layout::of(&scene.primitives[0]);
        // 99 + 8 (Wt) + 3 + 12 + 12 + 12 (temporal SH with orders 4/4).
        assert_eq!(layout.record_scalars(), 146);
        let bytes = checkpoint_bytes(&scene).unwrap();
        assert_eq!(bytes.len(), 16 + 48 + 146 * 4 * 2);
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = Scene::new(Vec::new(), 2.0, Vec3::zeros());
        let bytes = checkpoint_bytes(&scene).unwrap();
        assert_eq!(bytes.len(), 16 + 48);
        let back = scene_from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.extent, 2.0);
    }

    #[test]
    fn corruption_errors_name_the_offset() {
        let scene = f32_exact_scene(105, 2, false);
        let bytes = checkpoint_bytes(&scene).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[1] = b'X';
        match scene_from_bytes(&bad_magic) {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        match scene_from_bytes(&bad_version) {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        let truncated = &bytes[..bytes.len() - 7];
        match scene_from_bytes(truncated) {
            Err(Error::Checkpoint { offset, msg }) => {
                assert_eq!(offset, truncated.len() as u64, "{msg}");
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        let mut overlong = bytes.clone();
        overlong.extend_from_slice(&[0; 12]);
        assert!(matches!(
            scene_from_bytes(&overlong),
            Err(Error::Checkpoint { .. })
        ));

        let mut bad_flags = bytes;
        bad_flags[28] = 0xF0;
        assert!(matches!(
            scene_from_bytes(&bad_flags),
            Err(Error::Checkpoint { .. })
        ));
    }

    #[test]
    fn mixed_layout_scene_is_rejected_on_save() {
        let mut scene = f32_exact_scene(106, 2, false);
        scene.primitives[1].enable_temporal(4, 4);
        assert!(matches!(
            checkpoint_bytes(&scene),
            Err(Error::Checkpoint { .. })
        ));
    }
}
