//! Correspondence extraction through the atlas and the correspondence
//! metrics (squared distance, normalized rank, PCK area under curve), plus
//! patch-area estimation and collapsed-patch filtering.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::geom::{dist2, PointCloud, UvPoint, UvSampleSet, Vec3};
use crate::losses::{chamfer, metric_tensor};
use crate::model::{AtlasModel, SurfaceMap};
use crate::sampling::{regular_uv_points, stream_rng};
use crate::spatial::NearestNeighbors;

/// Evaluation image points at full scale.
pub const FULL_EVAL_POINTS: usize = 3125;
/// Evaluation image points at desk scale.
pub const DESK_EVAL_POINTS: usize = 1024;
/// Upper end of the PCK threshold range, on squared distance.
pub const PCK_MAX: f64 = 0.02;
pub const PCK_THRESHOLDS: usize = 100;
/// Reporting multiplier for the squared correspondence distance.
pub const SL2_SCALE: f64 = 1e4;
/// A patch is collapsed when its area is below this fraction of the mean.
pub const COLLAPSE_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchAreaReport {
    pub areas: Vec<f64>,
    pub collapsed: Vec<bool>,
}

impl PatchAreaReport {
    pub fn active(&self) -> Vec<usize> {
        (0..self.areas.len()).filter(|&p| !self.collapsed[p]).collect()
    }
}

/// Midpoint grid with at least `m` cells.
fn area_grid(m: usize) -> UvSampleSet {
    let side = (m as f64).sqrt().ceil() as usize;
    let h = 1.0 / side as f64;
    UvSampleSet::new(
        (0..side * side)
            .map(|i| UvPoint::new((i % side) as f64 * h + 0.5 * h, (i / side) as f64 * h + 0.5 * h))
            .collect(),
    )
}

/// Per patch, the mean of the area element `√det g` over a midpoint grid of
/// at least `m_area` samples of the unit square. A patch is collapsed when
/// its area is zero or below 1/1000 of the mean patch area.
pub fn patch_areas(map: &dyn SurfaceMap, m_area: usize) -> Result<PatchAreaReport> {
    if m_area < 16 {
        return Err(Error::InvalidArgument(format!("area estimate needs at least 16 samples, got {m_area}")));
    }
    let grid = area_grid(m_area);
    let mut areas = Vec::with_capacity(map.patch_count());
    for p in 0..map.patch_count() {
        let js = map.jacobians(p, &grid)?;
        let s: f64 = js.iter().map(|j| metric_tensor(j).det().max(0.0).sqrt()).sum();
        areas.push(s / grid.len() as f64);
    }
    let mean = areas.iter().sum::<f64>() / areas.len().max(1) as f64;
    let collapsed = areas.iter().map(|&a| a <= 0.0 || a < COLLAPSE_RATIO * mean).collect();
    Ok(PatchAreaReport { areas, collapsed })
}

/// Splits `total` across `parts` as evenly as possible, remainder to the
/// first parts.
pub fn split_counts(total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Regular UV samples used for evaluation images; depends only on the count.
pub fn eval_uv(count: usize) -> UvSampleSet {
    regular_uv_points(count, &mut stream_rng(0, count as u64))
}

/// The mapped image of the non-collapsed patches, used to invert the atlas
/// by nearest-neighbour projection.
#[derive(Debug, Clone)]
pub struct AtlasImage {
    pub points: Vec<Vec3>,
    /// `(patch, uv)` of every image point, patch-major.
    pub sources: Vec<(usize, UvPoint)>,
    /// UV samples per patch (empty for collapsed patches).
    pub uv: Vec<UvSampleSet>,
    nn: NearestNeighbors,
}

impl AtlasImage {
    /// `n_eval` image points spread over the non-collapsed patches.
    pub fn build(map: &dyn SurfaceMap, n_eval: usize, areas: &PatchAreaReport) -> Result<Self> {
        let active = areas.active();
        if active.is_empty() {
            return Err(Error::DegenerateAtlas);
        }
        if n_eval == 0 {
            return Err(Error::EmptyRequest("evaluation needs at least one image point"));
        }
        let counts = split_counts(n_eval, active.len());
        let mut by_count: BTreeMap<usize, UvSampleSet> = BTreeMap::new();
        let mut uv = vec![UvSampleSet::default(); map.patch_count()];
        let mut points = Vec::with_capacity(n_eval);
        let mut sources = Vec::with_capacity(n_eval);
        for (&p, &c) in active.iter().zip(&counts) {
            if c == 0 {
                continue;
            }
            let set = by_count.entry(c).or_insert_with(|| eval_uv(c)).clone();
            points.extend(map.points(p, &set)?);
            sources.extend(set.points.iter().map(|&q| (p, q)));
            uv[p] = set;
        }
        if let Some(bad) = points.iter().position(|q| q.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFiniteValue { location: format!("atlas image point {bad}") });
        }
        let nn = NearestNeighbors::new(points.clone());
        Ok(Self { points, sources, uv, nn })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest image point; ties go to the lowest index.
    pub fn nearest(&self, query: Vec3) -> usize {
        self.nn.nearest(query).0
    }

    pub fn inverse(&self, query: Vec3) -> (usize, UvPoint) {
        self.sources[self.nearest(query)]
    }

    /// Every image point's `(patch, uv)` pushed through another map.
    pub fn transfer(&self, other: &dyn SurfaceMap) -> Result<Vec<Vec3>> {
        let mut out = Vec::with_capacity(self.len());
        for (p, set) in self.uv.iter().enumerate() {
            if !set.is_empty() {
                out.extend(other.points(p, set)?);
            }
        }
        Ok(out)
    }
}

/// `(patch, uv)` whose image is nearest to `query`.
pub fn inverse_map(map: &dyn SurfaceMap, query: Vec3, n_eval: usize, m_area: usize) -> Result<(usize, UvPoint)> {
    let areas = patch_areas(map, m_area)?;
    Ok(AtlasImage::build(map, n_eval, &areas)?.inverse(query))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub sources: Vec<Vec3>,
    pub predicted: Vec<Vec3>,
    pub truth: Vec<Vec3>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.predicted.len() != self.truth.len() || self.sources.len() != self.truth.len() {
            return Err(Error::ShapeMismatch("correspondence lists differ in length".into()));
        }
        if self.truth.is_empty() {
            return Err(Error::EmptyInput("no correspondences"));
        }
        Ok(())
    }

    pub fn squared_errors(&self) -> Vec<f64> {
        self.predicted.iter().zip(&self.truth).map(|(&f, &q)| dist2(f, q)).collect()
    }
}

/// Points given on the source frame are projected onto the source atlas
/// image, carried to the same `(patch, uv)` of the target atlas and snapped
/// to the nearest point of the target cloud.
pub fn correspond(source_image: &AtlasImage, target_map: &dyn SurfaceMap, target_cloud: &PointCloud, sources: &[Vec3]) -> Result<Vec<Vec3>> {
    let carried = source_image.transfer(target_map)?;
    let nn = NearestNeighbors::new(target_cloud.to_vec());
    Ok(sources
        .iter()
        .map(|&s| target_cloud.point(nn.nearest(carried[source_image.nearest(s)]).0))
        .collect())
}

/// Mean squared correspondence error (raw units).
pub fn metric_sl2(corr: &CorrespondenceSet) -> Result<f64> {
    corr.check()?;
    Ok(corr.squared_errors().iter().sum::<f64>() / corr.len() as f64)
}

/// Percentage of `(i, j)` with `|q_i - q_j|² < |f(p_i) - q_i|²`.
pub fn metric_rank(corr: &CorrespondenceSet) -> Result<f64> {
    corr.check()?;
    let errs = corr.squared_errors();
    let n = corr.len();
    let mut count = 0usize;
    for (i, &e) in errs.iter().enumerate() {
        if e == 0.0 {
            continue;
        }
        let qi = corr.truth[i];
        count += corr.truth.iter().filter(|&&qj| dist2(qi, qj) < e).count();
    }
    Ok(100.0 * count as f64 / (n as f64 * n as f64))
}

/// Area under the fraction-correct curve for squared-error thresholds on a
/// uniform grid over `[0, d_max]`, by the trapezoid rule, normalized by
/// `d_max`, in percent.
pub fn metric_pck_auc(corr: &CorrespondenceSet, d_max: f64, thresholds: usize) -> Result<f64> {
    corr.check()?;
    if thresholds < 2 || !(d_max > 0.0) {
        return Err(Error::InvalidArgument("PCK needs at least two thresholds and a positive range".into()));
    }
    let mut errs = corr.squared_errors();
    errs.sort_by(f64::total_cmp);
    let n = errs.len() as f64;
    let pck: Vec<f64> = (0..thresholds)
        .map(|i| {
            let t = d_max * i as f64 / (thresholds - 1) as f64;
            errs.partition_point(|&e| e <= t) as f64 / n
        })
        .collect();
    // trapezoid rule with the grid step divided out
    let inner: f64 = pck.iter().sum::<f64>() - 0.5 * (pck[0] + pck[thresholds - 1]);
    Ok(100.0 * inner / (thresholds - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Number of random frame pairs `M`.
    pub pairs: usize,
    pub n_eval: usize,
    pub area_samples: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn desk() -> Self {
        Self { pairs: 100, n_eval: DESK_EVAL_POINTS, area_samples: 1024, seed: 0 }
    }

    pub fn paper() -> Self {
        Self { n_eval: FULL_EVAL_POINTS, ..Self::desk() }
    }
}

/// Metrics of one frame pair: points of frame `source` mapped onto frame
/// `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub source: usize,
    pub target: usize,
    pub sl2_raw: f64,
    pub rank: f64,
    pub auc: f64,
}

impl PairMetrics {
    pub fn sl2(&self) -> f64 {
        self.sl2_raw * SL2_SCALE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    pub fn formatted(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairMetrics>,
    /// Chamfer distance of each frame's atlas image to its cloud.
    pub frame_cd: Vec<f64>,
    /// Collapsed patches per frame.
    pub collapsed: Vec<usize>,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn m_sl2(&self) -> MeanStd {
        MeanStd::of(&self.pairs.iter().map(PairMetrics::sl2).collect::<Vec<_>>())
    }

    pub fn m_sl2_raw(&self) -> MeanStd {
        MeanStd::of(&self.pairs.iter().map(|p| p.sl2_raw).collect::<Vec<_>>())
    }

    pub fn m_rank(&self) -> MeanStd {
        MeanStd::of(&self.pairs.iter().map(|p| p.rank).collect::<Vec<_>>())
    }

    pub fn m_auc(&self) -> MeanStd {
        MeanStd::of(&self.pairs.iter().map(|p| p.auc).collect::<Vec<_>>())
    }

    pub fn cd(&self) -> MeanStd {
        MeanStd::of(&self.frame_cd)
    }

    pub fn summary(&self) -> serde_json::Value {
        let entry = |m: MeanStd| serde_json::json!({ "mean": m.mean, "std": m.std, "formatted": m.formatted() });
        serde_json::json!({
            "pairs": self.pairs.len(),
            "n_eval": self.config.n_eval,
            "m_sL2": entry(self.m_sl2()),
            "m_sL2_raw": entry(self.m_sl2_raw()),
            "m_r": entry(self.m_rank()),
            "m_auc": entry(self.m_auc()),
            "cd": entry(self.cd()),
            "collapsed_patches": self.collapsed,
        })
    }

    /// `pair_i,pair_j,m_sL2,m_r,m_auc` with `pair_i` the source frame and
    /// `m_sL2` scaled by 10⁴.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "pair_i,pair_j,m_sL2,m_r,m_auc")?;
        for p in &self.pairs {
            writeln!(f, "{},{},{:?},{:?},{:?}", p.source, p.target, p.sl2(), p.rank, p.auc)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary())? + "\n")?;
        Ok(())
    }
}

/// `M` ordered frame pairs `(source, target)` with `source ≠ target`.
pub fn draw_eval_pairs(frames: usize, m: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if m == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one pair".into()));
    }
    if frames < 2 {
        return Err(Error::InvalidArgument("evaluation needs at least two frames".into()));
    }
    let mut rng = stream_rng(seed, u64::MAX);
    Ok((0..m)
        .map(|_| {
            let s = rng.gen_range(0..frames);
            let t = (s + rng.gen_range(1..frames)) % frames;
            (s, t)
        })
        .collect())
}

/// Evaluates per-frame surface maps against a labeled sequence.
pub fn evaluate_maps(maps: &[&dyn SurfaceMap], seq: &Sequence, cfg: &EvalConfig) -> Result<EvalReport> {
    if !seq.labeled {
        return Err(Error::InvalidArgument("evaluation needs a labeled sequence".into()));
    }
    seq.validate()?;
    if maps.len() != seq.len() {
        return Err(Error::ShapeMismatch(format!("{} maps for {} frames", maps.len(), seq.len())));
    }
    let pairs = draw_eval_pairs(seq.len(), cfg.pairs, cfg.seed)?;
    let mut images = Vec::with_capacity(seq.len());
    let mut collapsed = Vec::with_capacity(seq.len());
    let mut frame_cd = Vec::with_capacity(seq.len());
    for (map, cloud) in maps.iter().zip(&seq.frames) {
        let areas = patch_areas(*map, cfg.area_samples)?;
        collapsed.push(areas.collapsed.iter().filter(|&&c| c).count());
        let image = AtlasImage::build(*map, cfg.n_eval, &areas)?;
        frame_cd.push(chamfer(&image.points, cloud)?);
        images.push(image);
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (s, t) in pairs {
        let sources = seq.frames[s].to_vec();
        let predicted = correspond(&images[s], maps[t], &seq.frames[t], &sources)?;
        let corr = CorrespondenceSet { sources, predicted, truth: seq.frames[t].to_vec() };
        rows.push(PairMetrics {
            source: s,
            target: t,
            sl2_raw: metric_sl2(&corr)?,
            rank: metric_rank(&corr)?,
            auc: metric_pck_auc(&corr, PCK_MAX, PCK_THRESHOLDS)?,
        });
    }
    Ok(EvalReport { pairs: rows, frame_cd, collapsed, config: *cfg })
}

/// Evaluates a trained model, encoding every frame of `seq`.
pub fn evaluate(model: &AtlasModel, seq: &Sequence, cfg: &EvalConfig) -> Result<EvalReport> {
    let atlases = seq.frames.iter().map(|c| Ok(model.atlas(model.encode(c)?))).collect::<Result<Vec<_>>>()?;
    let maps: Vec<&dyn SurfaceMap> = atlases.iter().map(|a| a as &dyn SurfaceMap).collect();
    evaluate_maps(&maps, seq, cfg)
}
