//! Synthetic isometric sequences with exact ground truth: a unit square
//! sheet rolled onto cylinders of growing curvature.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::DualBatch;
use crate::error::{Error, Result};
use crate::geom::{self, PointCloud, RigidTransform, UvPoint, UvSampleSet, Vec3};
use crate::model::SurfaceMap;
use crate::sampling::{sample_uv_uniform, stream_rng};

use super::{apply_progressive_rotation, Sequence, VERTICAL_AXIS};

/// Curvature at which the sheet closes into a full cylinder.
pub const CYLINDER_CURVATURE: f64 = 2.0 * PI;

/// Material point `(u, v)` on the sheet bent with curvature `κ` about the
/// line `x = 0.5, z = 1/κ`. `κ = 0` is the flat sheet `(u, v, 0)`.
pub fn sheet_point(u: f64, v: f64, curvature: f64) -> Vec3 {
    if curvature == 0.0 {
        return [u, v, 0.0];
    }
    let a = curvature * (u - 0.5);
    let h = (0.5 * a).sin();
    [0.5 + a.sin() / curvature, v, 2.0 * h * h / curvature]
}

/// Columns `∂/∂u`, `∂/∂v` of the sheet map; both unit length and orthogonal.
pub fn sheet_jacobian(u: f64, _v: f64, curvature: f64) -> (Vec3, Vec3) {
    let a = curvature * (u - 0.5);
    ([a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0])
}

/// Ground-truth parameterization of one synthetic frame as a one-patch atlas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SheetMap {
    pub curvature: f64,
    pub motion: RigidTransform,
}

impl SheetMap {
    pub fn new(curvature: f64) -> Self {
        Self { curvature, motion: RigidTransform::IDENTITY }
    }

    pub fn point(&self, p: UvPoint) -> Vec3 {
        self.motion.apply(sheet_point(p.u, p.v, self.curvature))
    }
}

impl SurfaceMap for SheetMap {
    fn patch_count(&self) -> usize {
        1
    }

    fn eval_patch(&self, patch: usize, uv: &UvSampleSet) -> Result<DualBatch> {
        if patch != 0 {
            return Err(Error::InvalidArgument(format!("patch {patch} out of range for a one-patch map")));
        }
        uv.check_domain()?;
        let m = uv.len();
        let (mut value, mut du, mut dv) = (Array2::zeros((m, 3)), Array2::zeros((m, 3)), Array2::zeros((m, 3)));
        for (i, p) in uv.points.iter().enumerate() {
            let x = self.point(*p);
            let (ju, jv) = sheet_jacobian(p.u, p.v, self.curvature);
            let (ju, jv) = (geom::mat_vec(&self.motion.rotation, ju), geom::mat_vec(&self.motion.rotation, jv));
            for k in 0..3 {
                value[[i, k]] = x[k];
                du[[i, k]] = ju[k];
                dv[[i, k]] = jv[k];
            }
        }
        Ok(DualBatch { value, du, dv })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Bends from flat to a half cylinder.
    Sheet,
    /// Bends from flat to a closed cylinder.
    Cylinder,
    /// The sheet, progressively rotated about the vertical axis.
    RotatingSheet,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sheet" => Ok(Self::Sheet),
            "cylinder" => Ok(Self::Cylinder),
            "rotating-sheet" => Ok(Self::RotatingSheet),
            _ => Err(Error::Config(format!("unknown sequence kind `{s}` (sheet, cylinder, rotating-sheet)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub frames: usize,
    pub points: usize,
    /// Final-frame curvature; defaults per kind when `None`.
    pub max_curvature: Option<f64>,
    /// Total rotation of the rotating variant, degrees.
    pub rotation_deg: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn new(kind: SynthKind, frames: usize, points: usize, seed: u64) -> Self {
        Self { kind, frames, points, max_curvature: None, rotation_deg: 180.0, seed }
    }

    pub fn curvature(&self) -> f64 {
        self.max_curvature.unwrap_or(match self.kind {
            SynthKind::Sheet | SynthKind::RotatingSheet => PI,
            SynthKind::Cylinder => CYLINDER_CURVATURE,
        })
    }

    fn rotation(&self, k: usize, center: Vec3) -> RigidTransform {
        match self.kind {
            SynthKind::RotatingSheet => {
                let t = k as f64 / (self.frames - 1) as f64;
                RigidTransform::about_center(VERTICAL_AXIS, t * self.rotation_deg.to_radians(), center)
            }
            _ => RigidTransform::IDENTITY,
        }
    }

    /// Ground-truth map of frame `k`; `center` is the centroid of the
    /// generated frame 0 (the rotation pivot).
    pub fn frame_map(&self, k: usize, center: Vec3) -> SheetMap {
        let kappa = frame_curvature(k, self.frames, self.curvature());
        SheetMap { curvature: kappa, motion: self.rotation(k, center) }
    }
}

fn frame_curvature(k: usize, frames: usize, max_curvature: f64) -> f64 {
    max_curvature * k as f64 / (frames - 1) as f64
}

/// Every frame is the image of the same material points, so point `i`
/// corresponds across frames.
pub fn bending_sheet_from_uv(frames: usize, uv: &[UvPoint], max_curvature: f64) -> Result<Sequence> {
    if frames < 5 {
        return Err(Error::InvalidArgument(format!("bending sheet needs at least 5 frames, got {frames}")));
    }
    if uv.is_empty() {
        return Err(Error::EmptyRequest("bending sheet needs at least one point"));
    }
    let clouds = (0..frames)
        .map(|k| {
            let kappa = frame_curvature(k, frames, max_curvature);
            PointCloud::from_points(uv.iter().map(|p| sheet_point(p.u, p.v, kappa)))
        })
        .collect();
    Sequence::new("bending-sheet", clouds, true)
}

/// `n` material points drawn uniformly on the unit square.
pub fn synth_bending_sheet<R: Rng + ?Sized>(frames: usize, n: usize, max_curvature: f64, rng: &mut R) -> Result<Sequence> {
    let uv = sample_uv_uniform(n, rng)?;
    bending_sheet_from_uv(frames, &uv.points, max_curvature)
}

pub fn synth_sequence(params: &SynthParams) -> Result<Sequence> {
    let mut seq = synth_bending_sheet(params.frames, params.points, params.curvature(), &mut stream_rng(params.seed, 0))?;
    if params.kind == SynthKind::RotatingSheet {
        seq = apply_progressive_rotation(&seq, params.rotation_deg.to_radians(), VERTICAL_AXIS);
    }
    seq.name = serde_json::to_value(params.kind)?.as_str().unwrap_or("synthetic").to_string();
    seq.source = serde_json::to_value(params)?;
    Ok(seq)
}
