//! Sequence ingestion, preprocessing, corruption variants and the synthetic
//! ground-truth generators.

mod mesh;
pub mod obj;
pub mod ply;
mod synth;

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RigidTransform, Vec3};
use crate::sampling::stream_rng;

pub use mesh::{load_mesh, sample_surface, Mesh};
pub use synth::{
    bending_sheet_from_uv, sheet_jacobian, sheet_point, synth_bending_sheet, synth_sequence, SheetMap, SynthKind, SynthParams,
    CYLINDER_CURVATURE,
};

/// Points sampled from each frame's surface when a sequence is built from meshes.
pub const DEFAULT_SURFACE_SAMPLES: usize = 2500;
/// Standard deviation of the noisy variant.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.025;

/// `x ↦ scale·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub translation: Vec3,
}

impl Normalization {
    pub const IDENTITY: Self = Self { scale: 1.0, translation: [0.0; 3] };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| self.scale * p[k] + self.translation[k])
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| (p[k] - self.translation[k]) / self.scale)
    }

    /// `other` applied after `self`.
    pub fn then(&self, other: &Normalization) -> Normalization {
        Normalization { scale: other.scale * self.scale, translation: other.apply(self.translation) }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Per-frame point clouds. With `labeled`, point `i` of every frame is the
/// same material point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PointCloud>,
    pub labeled: bool,
    /// Maps original coordinates to the stored ones.
    pub normalization: Normalization,
    /// Free-form provenance echoed into the sidecar (generator settings etc).
    pub source: serde_json::Value,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frames: Vec<PointCloud>, labeled: bool) -> Result<Self> {
        let seq = Self {
            name: name.into(),
            frames,
            labeled,
            normalization: Normalization::IDENTITY,
            source: serde_json::Value::Null,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyInput("sequence has no frames"));
        }
        if let Some(i) = self.frames.iter().position(PointCloud::is_empty) {
            return Err(Error::InvalidArgument(format!("frame {i} has no points")));
        }
        if self.labeled {
            let expected = self.frames[0].len();
            if let Some((frame, f)) = self.frames.iter().enumerate().find(|(_, f)| f.len() != expected) {
                return Err(Error::LabelMismatch { expected, found: f.len(), frame });
            }
        }
        Ok(())
    }

    fn map_frames(&self, mut f: impl FnMut(usize, &PointCloud) -> PointCloud) -> Sequence {
        Sequence { frames: self.frames.iter().enumerate().map(|(k, c)| f(k, c)).collect(), ..self.clone() }
    }
}

/// The on-disk `meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    pub frames: usize,
    /// Point count when every frame has the same number of points.
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub labeled: bool,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub source: serde_json::Value,
    /// Surface samples per frame for mesh frames, and the seed used for them.
    #[serde(default)]
    pub mesh_samples: Option<usize>,
    #[serde(default)]
    pub mesh_seed: Option<u64>,
}

/// Orders names so that embedded numbers compare by value (`f_2 < f_10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, dx), (true, dy)) => {
                let (tx, ty) = (dx.trim_start_matches('0'), dy.trim_start_matches('0'));
                tx.len().cmp(&ty.len()).then_with(|| tx.cmp(ty)).then_with(|| dx.len().cmp(&dy.len()))
            }
            ((_, sx), (_, sy)) => sx.cmp(sy),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len())
}

/// `.obj`/`.ply` files of a directory in natural order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(mesh::extension(p).as_deref(), Some("obj" | "ply")))
        .collect();
    files.sort_by(|a, b| {
        let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        natural_cmp(&name(a), &name(b))
    });
    Ok(files)
}

/// Loads `dir/frames/*` (or `dir/*` when there is no `frames` subdirectory)
/// plus the optional `dir/meta.json`. Frames with triangles are surface
/// sampled; point-only frames are taken as they are.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let meta_path = dir.join("meta.json");
    let meta: Option<SequenceMeta> = if meta_path.exists() {
        Some(serde_json::from_slice(&std::fs::read(&meta_path)?).map_err(|e| Error::parse(&meta_path, format!("line {}", e.line()), e.to_string()))?)
    } else {
        None
    };
    let frames_dir = if dir.join("frames").is_dir() { dir.join("frames") } else { dir.to_path_buf() };
    let files = frame_files(&frames_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyInput("sequence directory contains no frames"));
    }
    let samples = meta.as_ref().and_then(|m| m.mesh_samples).unwrap_or(DEFAULT_SURFACE_SAMPLES);
    let seed = meta.as_ref().and_then(|m| m.mesh_seed).unwrap_or(0);
    let mut frames = Vec::with_capacity(files.len());
    for (k, f) in files.iter().enumerate() {
        let m = load_mesh(f)?;
        frames.push(if m.triangles.is_empty() {
            PointCloud::from_points(m.vertices)
        } else {
            sample_surface(&m, samples, &mut stream_rng(seed, k as u64))?
        });
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut seq = Sequence {
        name,
        frames,
        labeled: false,
        normalization: Normalization::IDENTITY,
        source: serde_json::Value::Null,
    };
    if let Some(meta) = meta {
        if meta.frames != seq.len() {
            return Err(Error::parse(&meta_path, "frames", format!("sidecar lists {} frames, directory has {}", meta.frames, seq.len())));
        }
        seq.name = meta.name;
        seq.labeled = meta.labeled;
        seq.normalization = meta.normalization;
        seq.source = meta.source;
    }
    seq.validate()?;
    Ok(seq)
}

/// Writes `dir/frames/NNN.ply` (binary little endian) and `dir/meta.json`.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    seq.validate()?;
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let width = (seq.len().saturating_sub(1)).to_string().len().max(3);
    for (k, f) in seq.frames.iter().enumerate() {
        let path = frames_dir.join(format!("{k:0width$}.ply"));
        ply::write_ply(&path, &f.to_vec(), &[], &Default::default(), ply::PlyFormat::BinaryLittleEndian)?;
    }
    let n0 = seq.frames[0].len();
    let meta = SequenceMeta {
        name: seq.name.clone(),
        frames: seq.len(),
        points: seq.frames.iter().all(|f| f.len() == n0).then_some(n0),
        labeled: seq.labeled,
        normalization: seq.normalization,
        source: seq.source.clone(),
        mesh_samples: None,
        mesh_seed: None,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Uniform scale and translation fitting frame 0's bounding box into the
/// unit cube (longest side to length 1, minimum corner to the origin),
/// applied to every frame. The returned transform is the one applied here;
/// the sequence records the composition with any earlier normalization.
pub fn normalize_unit_cube(seq: &Sequence) -> Result<(Sequence, Normalization)> {
    let (lo, hi) = seq.frames.first().and_then(PointCloud::bounds).ok_or(Error::EmptyInput("sequence has no points"))?;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::InvalidArgument("first frame has zero extent".into()));
    }
    let scale = 1.0 / extent;
    let t = Normalization { scale, translation: lo.map(|v| -v * scale) };
    let mut out = seq.map_frames(|_, c| PointCloud::from_points(c.iter().map(|p| t.apply(p))));
    out.normalization = seq.normalization.then(&t);
    Ok((out, t))
}

/// Maps every frame back through `t`.
pub fn denormalize(seq: &Sequence, t: &Normalization) -> Sequence {
    seq.map_frames(|_, c| PointCloud::from_points(c.iter().map(|p| t.invert(p))))
}

/// i.i.d. zero-mean Gaussian noise on every coordinate.
pub fn add_noise<R: Rng + ?Sized>(seq: &Sequence, sigma: f64, rng: &mut R) -> Result<Sequence> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
    Ok(seq.map_frames(|_, c| PointCloud::from_points(c.iter().map(|p| p.map(|x| x + normal.sample(rng))))))
}

/// Frame `k` rotated by `k/(K-1)·max_angle` (radians) about `axis` through
/// the centroid of frame 0.
pub fn apply_progressive_rotation(seq: &Sequence, max_angle: f64, axis: Vec3) -> Sequence {
    let center = seq.frames[0].centroid();
    let last = seq.len().saturating_sub(1).max(1) as f64;
    seq.map_frames(|k, c| RigidTransform::about_center(axis, k as f64 / last * max_angle, center).apply_cloud(c))
}

/// Vertical axis used by the rotating variants.
pub const VERTICAL_AXIS: Vec3 = [0.0, 1.0, 0.0];

#[cfg(test)]
mod tests;
