//! The multi-patch atlas network: a permutation-invariant point-cloud encoder
//! producing a latent code per frame, and one decoder MLP per patch mapping
//! `(u, v, z)` to a 3D point.

pub mod checkpoint;
mod surface;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Activation, DualBatch, DualNodes, Jacobian3x2, Mlp, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, UvPoint, UvSampleSet, Vec3};

pub use surface::{FrameAtlas, SurfaceMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of patches `P`.
    pub patches: usize,
    /// Latent dimension `C`.
    pub latent_dim: usize,
    /// Hidden widths of the shared per-point encoder MLP (input width 3 implied).
    pub encoder_widths: Vec<usize>,
    /// Hidden widths of each decoder (input `2 + C`, output 3 implied).
    pub decoder_widths: Vec<usize>,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            patches: 10,
            latent_dim: 16,
            encoder_widths: vec![32, 64],
            decoder_widths: vec![32, 32],
        }
    }

    pub fn paper() -> Self {
        Self {
            patches: 10,
            latent_dim: 64,
            encoder_widths: vec![64, 128],
            decoder_widths: vec![128, 128, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches == 0 {
            return Err(Error::Config("patch count must be at least 1".into()));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Number of scalar parameters implied by this configuration.
    pub fn parameter_count(&self) -> usize {
        let dense = |widths: &[usize]| widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
        let mut enc = vec![3];
        enc.extend(&self.encoder_widths);
        let last = *enc.last().unwrap();
        let mut dec = vec![2 + self.latent_dim];
        dec.extend(&self.decoder_widths);
        dec.push(3);
        dense(&enc) + dense(&[last, self.latent_dim]) + self.patches * dense(&dec)
    }
}

/// Per-frame latent code `z ∈ R^C`, stored as a 1×C row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Array2<f64>);

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Self {
        let c = z.len();
        Self(Array2::from_shape_vec((1, c), z).unwrap())
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().unwrap()
    }

    pub fn row(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasModel {
    config: ModelConfig,
    params: ParamStore,
    point_mlp: Mlp,
    projection: Mlp,
    decoders: Vec<Mlp>,
}

impl AtlasModel {
    /// Builds a model with weights drawn uniformly in `±1/√fan_in` from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut enc = vec![3];
        enc.extend(&config.encoder_widths);
        let point_mlp = Mlp::register(&mut params, "encoder.points", &enc, Activation::Softplus, true, &mut rng);
        let projection = Mlp::register(
            &mut params,
            "encoder.projection",
            &[*enc.last().unwrap(), config.latent_dim],
            Activation::Identity,
            false,
            &mut rng,
        );
        let mut dec = vec![2 + config.latent_dim];
        dec.extend(&config.decoder_widths);
        dec.push(3);
        let decoders = (0..config.patches)
            .map(|i| Mlp::register(&mut params, &format!("decoder{i}"), &dec, Activation::Softplus, false, &mut rng))
            .collect();
        Ok(Self { config, params, point_mlp, projection, decoders })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn patch_count(&self) -> usize {
        self.decoders.len()
    }

    pub fn decoder(&self, patch: usize) -> &Mlp {
        &self.decoders[patch]
    }

    /// Replaces the hidden activation of every decoder; used to build
    /// analytic test maps such as a pure linear embedding.
    pub fn set_decoder_activation(&mut self, activation: Activation) {
        for d in &mut self.decoders {
            *d = Mlp::from_layers(d.layers().to_vec(), activation, false);
        }
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<LatentCode> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty point cloud"));
        }
        let feats = self.point_mlp.forward(&self.params, cloud.as_array());
        let (pooled, _) = kernels::max_pool_rows(feats.view());
        let z = self.projection.forward(&self.params, &pooled);
        if !kernels::all_finite(z.view()) {
            return Err(Error::NonFiniteValue { location: "encoder output".into() });
        }
        Ok(LatentCode(z))
    }

    pub fn encode_on_tape(&self, tape: &mut Tape<'_>, cloud: &PointCloud) -> Result<NodeId> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty point cloud"));
        }
        let x = tape.constant(cloud.as_array().clone());
        let feats = self.point_mlp.record(tape, x);
        let pooled = tape.max_pool_rows(feats);
        Ok(self.projection.record(tape, pooled))
    }

    fn check_patch(&self, patch: usize) -> Result<()> {
        if patch >= self.decoders.len() {
            return Err(Error::InvalidArgument(format!(
                "patch index {patch} out of range (P = {})",
                self.decoders.len()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &LatentCode) -> Result<()> {
        if z.dim() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent has dimension {}, model expects {}",
                z.dim(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    fn tangent_seeds(m: usize, width: usize) -> (Array2<f64>, Array2<f64>) {
        let mut du = Array2::zeros((m, width));
        let mut dv = Array2::zeros((m, width));
        du.column_mut(0).fill(1.0);
        dv.column_mut(1).fill(1.0);
        (du, dv)
    }

    /// Values and UV tangents of one patch at every sample, each m×3.
    pub fn decode_dual(&self, patch: usize, uv: &UvSampleSet, z: &LatentCode) -> Result<DualBatch> {
        self.check_patch(patch)?;
        self.check_latent(z)?;
        let m = uv.len();
        let zb = z.row().broadcast((m, z.dim())).unwrap();
        let value = ndarray::concatenate(Axis(1), &[uv.to_array().view(), zb]).unwrap();
        let (du, dv) = Self::tangent_seeds(m, value.ncols());
        let out = self.decoders[patch].forward_dual(&self.params, DualBatch { value, du, dv });
        for (name, a) in [("value", &out.value), ("du", &out.du), ("dv", &out.dv)] {
            if !kernels::all_finite(a.view()) {
                return Err(Error::NonFiniteValue { location: format!("decoder{patch} {name}") });
            }
        }
        Ok(out)
    }

    /// Values only, m×3.
    pub fn decode(&self, patch: usize, uv: &UvSampleSet, z: &LatentCode) -> Result<Array2<f64>> {
        self.check_patch(patch)?;
        self.check_latent(z)?;
        let m = uv.len();
        let zb = z.row().broadcast((m, z.dim())).unwrap();
        let x = ndarray::concatenate(Axis(1), &[uv.to_array().view(), zb]).unwrap();
        let out = self.decoders[patch].forward(&self.params, &x);
        if !kernels::all_finite(out.view()) {
            return Err(Error::NonFiniteValue { location: format!("decoder{patch} value") });
        }
        Ok(out)
    }

    fn decoder_input_on_tape(&self, tape: &mut Tape<'_>, uv: &UvSampleSet, z: NodeId) -> NodeId {
        let uv_node = tape.constant(uv.to_array());
        let zb = tape.broadcast_rows(z, uv.len());
        tape.concat_cols(&[uv_node, zb])
    }

    pub fn decode_dual_on_tape(&self, tape: &mut Tape<'_>, patch: usize, uv: &UvSampleSet, z: NodeId) -> DualNodes {
        let value = self.decoder_input_on_tape(tape, uv, z);
        let (du, dv) = Self::tangent_seeds(uv.len(), 2 + self.config.latent_dim);
        let du = tape.constant(du);
        let dv = tape.constant(dv);
        self.decoders[patch].record_dual(tape, DualNodes { value, du, dv })
    }

    pub fn decode_on_tape(&self, tape: &mut Tape<'_>, patch: usize, uv: &UvSampleSet, z: NodeId) -> NodeId {
        let x = self.decoder_input_on_tape(tape, uv, z);
        self.decoders[patch].record(tape, x)
    }

    /// `φ(p)` for one patch and one UV point.
    pub fn forward(&self, patch: usize, p: UvPoint, z: &LatentCode) -> Result<Vec3> {
        let out = self.decode(patch, &UvSampleSet::new(vec![p]), z)?;
        Ok([out[[0, 0]], out[[0, 1]], out[[0, 2]]])
    }

    /// `J_φ(p)` by forward-mode propagation of `e_u`, `e_v`.
    pub fn jacobian_uv(&self, patch: usize, p: UvPoint, z: &LatentCode) -> Result<Jacobian3x2> {
        let out = self.decode_dual(patch, &UvSampleSet::new(vec![p]), z)?;
        Ok(Jacobian3x2::from_columns(
            [out.du[[0, 0]], out.du[[0, 1]], out.du[[0, 2]]],
            [out.dv[[0, 0]], out.dv[[0, 1]], out.dv[[0, 2]]],
        ))
    }

    /// Every UV point mapped through every patch, patch-major.
    pub fn map_points(&self, z: &LatentCode, uv: &UvSampleSet) -> Result<Vec<(usize, Vec3)>> {
        uv.check_domain()?;
        let mut out = Vec::with_capacity(self.patch_count() * uv.len());
        for patch in 0..self.patch_count() {
            let v = self.decode(patch, uv, z)?;
            out.extend(v.rows().into_iter().map(|r| (patch, [r[0], r[1], r[2]])));
        }
        Ok(out)
    }

    pub fn jacobians(&self, z: &LatentCode, uv: &UvSampleSet) -> Result<Vec<(usize, Jacobian3x2)>> {
        uv.check_domain()?;
        let mut out = Vec::with_capacity(self.patch_count() * uv.len());
        for patch in 0..self.patch_count() {
            let d = self.decode_dual(patch, uv, z)?;
            out.extend((0..uv.len()).map(|i| {
                (
                    patch,
                    Jacobian3x2::from_columns(
                        [d.du[[i, 0]], d.du[[i, 1]], d.du[[i, 2]]],
                        [d.dv[[i, 0]], d.dv[[i, 1]], d.dv[[i, 2]]],
                    ),
                )
            }));
        }
        Ok(out)
    }

    pub fn atlas(&self, z: LatentCode) -> FrameAtlas<'_> {
        FrameAtlas::new(self, z)
    }
}
