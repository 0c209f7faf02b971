use crate::autodiff::{DualBatch, Jacobian3x2};
use crate::error::Result;
use crate::geom::{UvSampleSet, Vec3};

use super::{AtlasModel, LatentCode};

/// A collection of patch maps `Ω → R³` with UV Jacobians.
///
/// Implemented by a trained model conditioned on one frame's latent code and
/// by analytic parameterizations used as ground truth.
pub trait SurfaceMap {
    fn patch_count(&self) -> usize;

    /// Values and UV tangents of `patch` at every sample (each m×3).
    fn eval_patch(&self, patch: usize, uv: &UvSampleSet) -> Result<DualBatch>;

    fn points(&self, patch: usize, uv: &UvSampleSet) -> Result<Vec<Vec3>> {
        let d = self.eval_patch(patch, uv)?;
        Ok(d.value.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    fn jacobians(&self, patch: usize, uv: &UvSampleSet) -> Result<Vec<Jacobian3x2>> {
        let d = self.eval_patch(patch, uv)?;
        Ok((0..uv.len())
            .map(|i| {
                Jacobian3x2::from_columns(
                    [d.du[[i, 0]], d.du[[i, 1]], d.du[[i, 2]]],
                    [d.dv[[i, 0]], d.dv[[i, 1]], d.dv[[i, 2]]],
                )
            })
            .collect())
    }
}

/// `φ_k`: the model conditioned on frame `k`'s latent code.
#[derive(Debug, Clone)]
pub struct FrameAtlas<'m> {
    pub model: &'m AtlasModel,
    pub latent: LatentCode,
}

impl<'m> FrameAtlas<'m> {
    pub fn new(model: &'m AtlasModel, latent: LatentCode) -> Self {
        Self { model, latent }
    }
}

impl SurfaceMap for FrameAtlas<'_> {
    fn patch_count(&self) -> usize {
        self.model.patch_count()
    }

    fn eval_patch(&self, patch: usize, uv: &UvSampleSet) -> Result<DualBatch> {
        self.model.decode_dual(patch, uv, &self.latent)
    }

    fn points(&self, patch: usize, uv: &UvSampleSet) -> Result<Vec<Vec3>> {
        let v = self.model.decode(patch, uv, &self.latent)?;
        Ok(v.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }
}
