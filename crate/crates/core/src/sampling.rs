//! Stochastic and scheduled selection: UV samples, frame pairs, the
//! progressive frame window and random rigid augmentations.
//!
//! Every run owns one seeded ChaCha generator per training iteration
//! (`seed`, stream = iteration), so any iteration's draws can be reproduced
//! without replaying earlier ones.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{axis_angle, RigidTransform, UvPoint, UvSampleSet, Vec3};

pub type RunRng = ChaCha8Rng;

/// Generator for one `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_uv_uniform<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<UvSampleSet> {
    if m == 0 {
        return Err(Error::EmptyRequest("at least one uv sample is required"));
    }
    Ok(UvSampleSet::new((0..m).map(|_| UvPoint::new(rng.gen(), rng.gen())).collect()))
}

/// Number of relaxation sweeps.
pub const REGULAR_SWEEPS: usize = 250;
/// Per-sweep multiplicative step decay.
pub const REGULAR_DECAY: f64 = 0.994;

/// One accepted relaxation move, reported by [`regular_uv_points_traced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedMove {
    pub sweep: usize,
    pub index: usize,
    pub from: UvPoint,
    pub to: UvPoint,
    pub nn_before: f64,
    pub nn_after: f64,
}

/// As-regular-as-possible points in `[0,1]²`.
pub fn regular_uv_points<R: Rng + ?Sized>(m: usize, rng: &mut R) -> UvSampleSet {
    regular_uv_points_traced(m, rng, |_| {})
}

/// Random initialisation followed by 250 sweeps; each point proposes a move
/// of length `step` in a uniformly random direction (clamped to the unit
/// square) and keeps it only if its nearest-neighbour distance strictly
/// grows. `step` starts at `1/(4√M)` and decays by 0.994 per sweep.
pub fn regular_uv_points_traced<R: Rng + ?Sized>(
    m: usize,
    rng: &mut R,
    mut on_accept: impl FnMut(&AcceptedMove),
) -> UvSampleSet {
    let mut pts: Vec<UvPoint> = (0..m).map(|_| UvPoint::new(rng.gen(), rng.gen())).collect();
    if m == 0 {
        return UvSampleSet::new(pts);
    }
    let mut step = 1.0 / (4.0 * (m as f64).sqrt());
    let mut grid = UvGrid::new(&pts);
    for sweep in 0..REGULAR_SWEEPS {
        for i in 0..m {
            let before = grid.nn_dist2(&pts, i, pts[i]);
            let angle: f64 = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = angle.sin_cos();
            let cand = UvPoint::new((pts[i].u + step * c).clamp(0.0, 1.0), (pts[i].v + step * s).clamp(0.0, 1.0));
            let after = grid.nn_dist2(&pts, i, cand);
            if after > before {
                on_accept(&AcceptedMove {
                    sweep,
                    index: i,
                    from: pts[i],
                    to: cand,
                    nn_before: before.sqrt(),
                    nn_after: after.sqrt(),
                });
                grid.relocate(i, pts[i], cand);
                pts[i] = cand;
            }
        }
        step *= REGULAR_DECAY;
    }
    UvSampleSet::new(pts)
}

/// Uniform bucket grid over the unit square for exact nearest-neighbour
/// distances among points that move.
struct UvGrid {
    side: usize,
    cells: Vec<Vec<usize>>,
}

impl UvGrid {
    fn new(pts: &[UvPoint]) -> Self {
        let side = ((pts.len() as f64).sqrt().floor() as usize).max(1);
        let mut g = Self { side, cells: vec![Vec::new(); side * side] };
        for (i, p) in pts.iter().enumerate() {
            let c = g.cell(*p);
            g.cells[c.1 * side + c.0].push(i);
        }
        g
    }

    fn cell(&self, p: UvPoint) -> (usize, usize) {
        let f = |x: f64| ((x * self.side as f64) as usize).min(self.side - 1);
        (f(p.u), f(p.v))
    }

    fn relocate(&mut self, i: usize, from: UvPoint, to: UvPoint) {
        let (a, b) = (self.cell(from), self.cell(to));
        if a != b {
            let old = &mut self.cells[a.1 * self.side + a.0];
            let k = old.iter().position(|&j| j == i).expect("point is in its cell");
            old.swap_remove(k);
            self.cells[b.1 * self.side + b.0].push(i);
        }
    }

    /// Squared distance from `p` to the nearest point other than `skip`
    /// (infinite when there is none). Rings of cells are scanned outwards
    /// until no unvisited cell can hold a closer point.
    fn nn_dist2(&self, pts: &[UvPoint], skip: usize, p: UvPoint) -> f64 {
        let (cx, cy) = self.cell(p);
        let h = 1.0 / self.side as f64;
        let n = self.side as isize;
        let mut best = f64::INFINITY;
        for r in 0..self.side as isize {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (x, y) = (cx as isize + dx, cy as isize + dy);
                    if x < 0 || y < 0 || x >= n || y >= n {
                        continue;
                    }
                    for &j in &self.cells[(y * n + x) as usize] {
                        if j != skip {
                            best = best.min(p.dist2(&pts[j]));
                        }
                    }
                }
            }
            let reach = r as f64 * h;
            if best <= reach * reach {
                break;
            }
        }
        best
    }
}

/// Smallest distance between any two points of the set.
pub fn min_pairwise_distance(set: &UvSampleSet) -> f64 {
    let p = &set.points;
    let mut best = f64::INFINITY;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            best = best.min(p[i].dist2(&p[j]));
        }
    }
    best.sqrt()
}

/// Inclusive frame range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub start: usize,
    pub end: usize,
}

impl FrameWindow {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "window start after end");
        Self { start, end }
    }

    pub fn full(frames: usize) -> Self {
        Self::new(0, frames.saturating_sub(1))
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &FrameWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSamplerConfig {
    /// Maximum frame distance `δ` of a pair.
    pub delta: usize,
    /// Sequence length `K`.
    pub frames: usize,
    pub batch_pairs: usize,
}

impl PairSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::Config("delta must be at least 1".into()));
        }
        if self.frames >= 2 && self.delta >= self.frames {
            return Err(Error::Config(format!(
                "delta ({}) must be smaller than the sequence length ({})",
                self.delta, self.frames
            )));
        }
        Ok(())
    }
}

/// Uniform draw over the unordered pairs `i < j` of `window` with `j - i ≤ δ`.
pub fn sample_pair<R: Rng + ?Sized>(cfg: &PairSamplerConfig, window: FrameWindow, rng: &mut R) -> Result<(usize, usize)> {
    let len = window.len();
    if len < 2 {
        return Err(Error::WindowTooSmall(len));
    }
    let max_gap = cfg.delta.clamp(1, len - 1);
    // pairs with gap d: len - d of them
    let total: usize = (1..=max_gap).map(|d| len - d).sum();
    let mut k = rng.gen_range(0..total);
    for d in 1..=max_gap {
        let count = len - d;
        if k < count {
            let i = window.start + k;
            return Ok((i, i + d));
        }
        k -= count;
    }
    unreachable!("pair index within total")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressiveSchedule {
    pub init_iters: usize,
    pub end_iters: usize,
    pub frames: usize,
}

impl ProgressiveSchedule {
    pub fn validate(&self, total_iters: usize) -> Result<()> {
        if !(0 < self.init_iters && self.init_iters < self.end_iters && self.end_iters <= total_iters) {
            return Err(Error::Config(format!(
                "progressive schedule needs 0 < I_init ({}) < I_end ({}) <= iterations ({total_iters})",
                self.init_iters, self.end_iters
            )));
        }
        Ok(())
    }

    /// The five middle frames `[⌊K/2⌋-2, ⌊K/2⌋+2]`, clamped to the sequence.
    pub fn initial_window(&self) -> FrameWindow {
        let last = self.frames.saturating_sub(1);
        let mid = self.frames / 2;
        FrameWindow::new(mid.saturating_sub(2), (mid + 2).min(last))
    }

    /// One-frame-per-side expansions needed to reach the full sequence.
    pub fn expansions(&self) -> usize {
        let w = self.initial_window();
        w.start.max(self.frames.saturating_sub(1) - w.end)
    }
}

/// The frame range in use at iteration `iter`.
///
/// Before `I_init` only the middle frames are used; from `I_end` on the whole
/// sequence. In between the window grows by one frame on each side every
/// `⌊(I_end - I_init) / n⌋` iterations, `n` being the number of expansions.
pub fn progressive_window(iter: usize, sched: &ProgressiveSchedule) -> FrameWindow {
    let full = FrameWindow::full(sched.frames);
    if iter >= sched.end_iters {
        return full;
    }
    let init = sched.initial_window();
    if iter < sched.init_iters {
        return init;
    }
    let n = sched.expansions();
    if n == 0 {
        return init;
    }
    let interval = ((sched.end_iters - sched.init_iters) / n).max(1);
    let done = ((iter - sched.init_iters) / interval).min(n);
    FrameWindow::new(init.start.saturating_sub(done), (init.end + done).min(full.end))
}

/// Translation range of random augmentations, per axis.
pub const TRANSLATION_RANGE: f64 = 0.25;

/// Axis uniform on the sphere, angle uniform in `[0, π]`, translation uniform
/// in `[-0.25, 0.25]³`.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    let axis = random_unit_vector(rng);
    let angle = rng.gen_range(0.0..=PI);
    let t: Vec3 = [
        rng.gen_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE),
        rng.gen_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE),
        rng.gen_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE),
    ];
    RigidTransform::new(axis_angle(axis, angle), t)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}
