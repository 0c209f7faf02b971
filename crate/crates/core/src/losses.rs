//! Reconstruction, metric-consistency and rigid-equivariance losses.
//!
//! Each term is available as a plain value computation and, through
//! [`total_loss_with_gradients`], recorded on a tape for exact gradients.
//! Integrals over `Ω` are Monte-Carlo means over the batch's UV samples,
//! which every frame of the batch shares so that metric tensors are
//! compared at identical points.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Jacobian3x2, NodeId, Tape};
use crate::error::{Error, Result};
use crate::geom::{dist2, PointCloud, RigidTransform, UvSampleSet, Vec3};
use crate::model::{AtlasModel, SurfaceMap};
use crate::spatial::NearestNeighbors;

/// Symmetric `g = JᵀJ`, stored as `[[e, f], [f, g]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTensor2x2 {
    pub e: f64,
    pub f: f64,
    pub g: f64,
}

impl MetricTensor2x2 {
    pub fn to_matrix(&self) -> [[f64; 2]; 2] {
        [[self.e, self.f], [self.f, self.g]]
    }

    pub fn det(&self) -> f64 {
        self.e * self.g - self.f * self.f
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.e + self.g);
        let r = (0.25 * (self.e - self.g).powi(2) + self.f * self.f).sqrt();
        [mean - r, mean + r]
    }

    /// `||self - other||_F²`; the off-diagonal entry counts twice.
    pub fn frobenius_dist2(&self, other: &Self) -> f64 {
        let (de, df, dg) = (self.e - other.e, self.f - other.f, self.g - other.g);
        de * de + 2.0 * df * df + dg * dg
    }
}

pub fn metric_tensor(j: &Jacobian3x2) -> MetricTensor2x2 {
    let (a, b) = (j.column(0), j.column(1));
    MetricTensor2x2 {
        e: a[0] * a[0] + a[1] * a[1] + a[2] * a[2],
        f: a[0] * b[0] + a[1] * b[1] + a[2] * b[2],
        g: b[0] * b[0] + b[1] * b[1] + b[2] * b[2],
    }
}

/// Symmetric Chamfer distance: mean squared distance from each mapped point
/// to its nearest target plus the mean from each target to its nearest
/// mapped point.
pub fn chamfer(mapped: &[Vec3], target: &PointCloud) -> Result<f64> {
    if mapped.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("chamfer distance needs two non-empty sets"));
    }
    let target_nn = NearestNeighbors::new(target.to_vec());
    let mapped_nn = NearestNeighbors::new(mapped.to_vec());
    let forward: f64 = mapped.iter().map(|&p| target_nn.nearest(p).1).sum::<f64>() / mapped.len() as f64;
    let backward: f64 = target.iter().map(|q| mapped_nn.nearest(q).1).sum::<f64>() / target.len() as f64;
    Ok(forward + backward)
}

/// Mean over samples of `||g_i - g_j||_F²`; both lists must come from the
/// same UV samples and patch indices.
pub fn metric_consistency(ji: &[Jacobian3x2], jj: &[Jacobian3x2]) -> Result<f64> {
    if ji.len() != jj.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} jacobians", ji.len(), jj.len())));
    }
    if ji.is_empty() {
        return Err(Error::EmptyInput("metric consistency needs at least one sample"));
    }
    let sum: f64 = ji
        .iter()
        .zip(jj)
        .map(|(a, b)| metric_tensor(a).frobenius_dist2(&metric_tensor(b)))
        .sum();
    Ok(sum / ji.len() as f64)
}

/// All patches of `model` at `uv` for one latent, patch-major.
fn mapped_points(model: &AtlasModel, uv: &UvSampleSet, z: &crate::model::LatentCode) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(model.patch_count() * uv.len());
    for patch in 0..model.patch_count() {
        let v = model.decode(patch, uv, z)?;
        out.extend(v.rows().into_iter().map(|r| [r[0], r[1], r[2]]));
    }
    Ok(out)
}

/// Regression targets `R·P_k(φ_k(p)) + T` of the rigid loss.
pub fn rigid_targets(mapped: &[Vec3], cloud: &PointCloud, transform: &RigidTransform) -> Vec<Vec3> {
    let nn = NearestNeighbors::new(cloud.to_vec());
    mapped.iter().map(|&p| transform.apply(cloud.point(nn.nearest(p).0))).collect()
}

/// Rigid-equivariance loss of frame `cloud` under `transforms`: for each
/// transform, the mean over UV samples and patches of
/// `||R·P_k(φ_k(p)) + T - φ_k^o(p)||²`, averaged over transforms.
pub fn rigid_loss(model: &AtlasModel, cloud: &PointCloud, transforms: &[RigidTransform], uv: &UvSampleSet) -> Result<f64> {
    if transforms.is_empty() {
        return Err(Error::EmptyInput("rigid loss needs at least one transform"));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("rigid loss needs a non-empty cloud"));
    }
    let z = model.encode(cloud)?;
    let mapped = mapped_points(model, uv, &z)?;
    let mut total = 0.0;
    for t in transforms {
        let targets = rigid_targets(&mapped, cloud, t);
        let zo = model.encode(&t.apply_cloud(cloud))?;
        let mapped_o = mapped_points(model, uv, &zo)?;
        total += rigid_residual(&targets, &mapped_o);
    }
    Ok(total / transforms.len() as f64)
}

/// Mean squared distance between matching rows.
pub fn rigid_residual(targets: &[Vec3], mapped: &[Vec3]) -> f64 {
    targets.iter().zip(mapped).map(|(&a, &b)| dist2(a, b)).sum::<f64>() / targets.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_mc: f64,
    pub alpha_rg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_mc: 0.1, alpha_rg: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_fit: f64,
    pub l_metric: f64,
    pub l_rigid: f64,
    pub total: f64,
    pub alpha_mc: f64,
    pub alpha_rg: f64,
}

impl LossBreakdown {
    pub fn combine(l_fit: f64, l_metric: f64, l_rigid: f64, w: LossWeights) -> Self {
        Self {
            l_fit,
            l_metric,
            l_rigid,
            total: l_fit + w.alpha_mc * l_metric + w.alpha_rg * l_rigid,
            alpha_mc: w.alpha_mc,
            alpha_rg: w.alpha_rg,
        }
    }
}

/// One frame of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchFrame {
    /// Index of the frame in its sequence.
    pub frame: usize,
    pub cloud: PointCloud,
    /// Augmentation for the rigid loss, if enabled.
    pub transform: Option<RigidTransform>,
}

/// Everything stochastic about one loss evaluation, drawn up front so the
/// loss itself is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    /// Distinct frames.
    pub frames: Vec<BatchFrame>,
    /// Pairs as positions into `frames`.
    pub pairs: Vec<(usize, usize)>,
    /// UV samples mapped through every patch of every frame.
    pub uv: UvSampleSet,
}

impl LossBatch {
    fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyInput("loss batch has no frames"));
        }
        if self.uv.is_empty() {
            return Err(Error::EmptyInput("loss batch has no uv samples"));
        }
        for &(a, b) in &self.pairs {
            if a >= self.frames.len() || b >= self.frames.len() {
                return Err(Error::InvalidArgument(format!("pair ({a}, {b}) refers to a missing frame")));
            }
        }
        Ok(())
    }
}

/// Loss value without a tape.
pub fn total_loss(model: &AtlasModel, batch: &LossBatch, w: LossWeights) -> Result<LossBreakdown> {
    batch.validate()?;
    let mut fit = 0.0;
    let mut jacobians = Vec::with_capacity(batch.frames.len());
    let mut rigid = 0.0;
    let mut rigid_count = 0usize;
    for f in &batch.frames {
        let z = model.encode(&f.cloud)?;
        let mut mapped = Vec::with_capacity(model.patch_count() * batch.uv.len());
        let mut js = Vec::new();
        if batch.pairs.is_empty() {
            mapped = mapped_points(model, &batch.uv, &z)?;
        } else {
            // values come out of the dual pass bit-identical to `decode`
            for patch in 0..model.patch_count() {
                let d = model.decode_dual(patch, &batch.uv, &z)?;
                for i in 0..batch.uv.len() {
                    mapped.push([d.value[[i, 0]], d.value[[i, 1]], d.value[[i, 2]]]);
                    js.push(Jacobian3x2::from_columns(
                        [d.du[[i, 0]], d.du[[i, 1]], d.du[[i, 2]]],
                        [d.dv[[i, 0]], d.dv[[i, 1]], d.dv[[i, 2]]],
                    ));
                }
            }
        }
        jacobians.push(js);
        fit += chamfer(&mapped, &f.cloud)?;
        if let Some(t) = &f.transform {
            let targets = rigid_targets(&mapped, &f.cloud, t);
            let zo = model.encode(&t.apply_cloud(&f.cloud))?;
            rigid += rigid_residual(&targets, &mapped_points(model, &batch.uv, &zo)?);
            rigid_count += 1;
        }
    }
    let l_fit = fit / batch.frames.len() as f64;
    let l_metric = if batch.pairs.is_empty() {
        0.0
    } else {
        let mut s = 0.0;
        for &(a, b) in &batch.pairs {
            s += metric_consistency(&jacobians[a], &jacobians[b])?;
        }
        s / batch.pairs.len() as f64
    };
    let l_rigid = if rigid_count == 0 { 0.0 } else { rigid / rigid_count as f64 };
    let out = LossBreakdown::combine(l_fit, l_metric, l_rigid, w);
    if !out.total.is_finite() {
        return Err(Error::NonFiniteValue { location: "total loss".into() });
    }
    Ok(out)
}

struct FrameNodes {
    points: NodeId,
    /// Row-wise `(E, F, G)` of the metric tensors, each n×1.
    metric: Option<[NodeId; 3]>,
}

fn record_frame(tape: &mut Tape<'_>, model: &AtlasModel, uv: &UvSampleSet, z: NodeId, tangents: bool) -> FrameNodes {
    let patches = model.patch_count();
    if !tangents {
        let parts: Vec<NodeId> = (0..patches).map(|p| model.decode_on_tape(tape, p, uv, z)).collect();
        let points = tape.concat_rows(&parts);
        return FrameNodes { points, metric: None };
    }
    let mut vals = Vec::with_capacity(patches);
    let mut dus = Vec::with_capacity(patches);
    let mut dvs = Vec::with_capacity(patches);
    for p in 0..patches {
        let d = model.decode_dual_on_tape(tape, p, uv, z);
        vals.push(d.value);
        dus.push(d.du);
        dvs.push(d.dv);
    }
    let points = tape.concat_rows(&vals);
    let ju = tape.concat_rows(&dus);
    let jv = tape.concat_rows(&dvs);
    let uu = tape.mul(ju, ju);
    let uv_ = tape.mul(ju, jv);
    let vv = tape.mul(jv, jv);
    let e = tape.row_sums(uu);
    let f = tape.row_sums(uv_);
    let g = tape.row_sums(vv);
    FrameNodes { points, metric: Some([e, f, g]) }
}

fn record_chamfer(tape: &mut Tape<'_>, points: NodeId, cloud: &PointCloud) -> NodeId {
    let mapped: Vec<Vec3> = tape.value(points).rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    let target_nn = NearestNeighbors::new(cloud.to_vec());
    let mapped_nn = NearestNeighbors::new(mapped.clone());
    let idx_fwd: Vec<usize> = mapped.iter().map(|&p| target_nn.nearest(p).0).collect();
    let idx_bwd: Vec<usize> = cloud.iter().map(|q| mapped_nn.nearest(q).0).collect();

    let nearest_targets = tape.constant(cloud.select(&idx_fwd).as_array().clone());
    let d_fwd = tape.sub(points, nearest_targets);
    let sq_fwd = tape.square(d_fwd);
    let s_fwd = tape.sum(sq_fwd);
    let fwd = tape.scale(s_fwd, 1.0 / mapped.len() as f64);

    let gathered = tape.gather_rows(points, idx_bwd);
    let targets = tape.constant(cloud.as_array().clone());
    let d_bwd = tape.sub(gathered, targets);
    let sq_bwd = tape.square(d_bwd);
    let s_bwd = tape.sum(sq_bwd);
    let bwd = tape.scale(s_bwd, 1.0 / cloud.len() as f64);
    tape.add(fwd, bwd)
}

fn record_mean_of(tape: &mut Tape<'_>, terms: &[NodeId]) -> Option<NodeId> {
    let (&first, rest) = terms.split_first()?;
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t);
    }
    Some(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// Loss breakdown and exact gradients with respect to every model parameter.
///
/// Nearest-neighbour assignments (in the Chamfer and rigid terms) are
/// piecewise constant in the parameters and enter as constants; the rigid
/// term's regression target is likewise a constant, so only the augmented
/// branch `φ_k^o` receives its gradient.
pub fn total_loss_with_gradients(model: &AtlasModel, batch: &LossBatch, w: LossWeights) -> Result<(LossBreakdown, Gradients)> {
    batch.validate()?;
    let need_metric = !batch.pairs.is_empty();
    let metric_on_tape = need_metric && w.alpha_mc != 0.0;
    let mut tape = Tape::new(model.params());
    let mut fit_terms = Vec::with_capacity(batch.frames.len());
    let mut frames = Vec::with_capacity(batch.frames.len());
    let mut rigid_terms = Vec::new();
    for f in &batch.frames {
        let z = model.encode_on_tape(&mut tape, &f.cloud)?;
        let nodes = record_frame(&mut tape, model, &batch.uv, z, metric_on_tape);
        fit_terms.push(record_chamfer(&mut tape, nodes.points, &f.cloud));
        if let Some(t) = &f.transform {
            let mapped: Vec<Vec3> = tape.value(nodes.points).rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
            let targets = rigid_targets(&mapped, &f.cloud, t);
            let zo = model.encode_on_tape(&mut tape, &t.apply_cloud(&f.cloud))?;
            let aug = record_frame(&mut tape, model, &batch.uv, zo, false);
            let target_node = tape.constant(Array2::from_shape_fn((targets.len(), 3), |(i, k)| targets[i][k]));
            let d = tape.sub(target_node, aug.points);
            let sq = tape.square(d);
            let s = tape.sum(sq);
            rigid_terms.push(tape.scale(s, 1.0 / targets.len() as f64));
        }
        frames.push(nodes);
    }
    let fit = record_mean_of(&mut tape, &fit_terms).expect("batch has frames");

    let mut l_metric_value = 0.0;
    let metric = if metric_on_tape {
        let mut terms = Vec::with_capacity(batch.pairs.len());
        for &(a, b) in &batch.pairs {
            let [ea, fa, ga] = frames[a].metric.unwrap();
            let [eb, fb, gb] = frames[b].metric.unwrap();
            let de = tape.sub(ea, eb);
            let df = tape.sub(fa, fb);
            let dg = tape.sub(ga, gb);
            let de2 = tape.square(de);
            let df2 = tape.square(df);
            let dg2 = tape.square(dg);
            let df2x2 = tape.scale(df2, 2.0);
            let s = tape.add(de2, df2x2);
            let s = tape.add(s, dg2);
            terms.push(tape.mean(s));
        }
        record_mean_of(&mut tape, &terms)
    } else {
        if need_metric {
            // weight is zero: report the value without recording tangents
            let mut s = 0.0;
            let mut cache: Vec<Option<Vec<Jacobian3x2>>> = vec![None; batch.frames.len()];
            for &(a, b) in &batch.pairs {
                for idx in [a, b] {
                    if cache[idx].is_none() {
                        let z = model.encode(&batch.frames[idx].cloud)?;
                        let atlas = model.atlas(z);
                        let mut js = Vec::new();
                        for patch in 0..model.patch_count() {
                            js.extend(atlas.jacobians(patch, &batch.uv)?);
                        }
                        cache[idx] = Some(js);
                    }
                }
                s += metric_consistency(cache[a].as_ref().unwrap(), cache[b].as_ref().unwrap())?;
            }
            l_metric_value = s / batch.pairs.len() as f64;
        }
        None
    };
    let rigid = record_mean_of(&mut tape, &rigid_terms);

    let mut total = fit;
    if let Some(m) = metric {
        l_metric_value = tape.scalar(m);
        let scaled = tape.scale(m, w.alpha_mc);
        total = tape.add(total, scaled);
    }
    if let Some(r) = rigid {
        let scaled = tape.scale(r, w.alpha_rg);
        total = tape.add(total, scaled);
    }
    tape.check_finite()?;
    let breakdown = LossBreakdown::combine(
        tape.scalar(fit),
        l_metric_value,
        rigid.map(|r| tape.scalar(r)).unwrap_or(0.0),
        w,
    );
    let grads = tape.backprop(total, 1.0)?;
    Ok((breakdown, grads))
}
