//! Isoperimetric profile `I(v) = inf { P(E) : V(E) = v }` on a grid.
//!
//! Three estimators are provided:
//!
//! - [`brute_force_profile`]: exact enumeration, capped at 20 cells.
//! - [`lagrangian_cut_profile`]: exact minimizers of `P(E) - lambda V(E)` by a
//!   minimum s-t cut. Every point is a true profile point, but only vertices
//!   of the lower convex envelope are reachable.
//! - [`annealed_profile_point`]: seeded simulated annealing; an upper bound
//!   that can reach nonconvex parts of the profile.
//!
//! Exact volume constraints are often unattainable on a lattice, so targets
//! are met within half a cell volume (oracle) or one cell volume (annealer)
//! and the achieved volume error is reported with every point.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{BoundaryMode, ConformalGrid, GridId};
use crate::mincut::FlowNetwork;
use crate::perimeter::{perimeter, IndicatorSet, PerimeterStencil, StencilKind};

pub const BRUTE_FORCE_MAX_CELLS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileMethod {
    Oracle,
    Lagrangian,
    Anneal,
}

impl ProfileMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileMethod::Oracle => "oracle",
            ProfileMethod::Lagrangian => "lagrangian",
            ProfileMethod::Anneal => "anneal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub v: f64,
    pub i_v: f64,
    pub achiever: Option<IndicatorSet>,
    pub method: ProfileMethod,
    pub achieved: bool,
    pub volume_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    pub points: Vec<ProfilePoint>,
    pub grid_id: GridId,
    pub stencil: StencilKind,
}

impl ProfileCurve {
    pub fn values(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.v, p.i_v)).collect()
    }

    pub fn value_at(&self, v: f64) -> Option<f64> {
        self.points.iter().find(|p| p.v == v).map(|p| p.i_v)
    }

    /// CSV with header `v,I_v,method,achieved,volume_error`; floats use the
    /// shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("v,I_v,method,achieved,volume_error\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.v,
                p.i_v,
                p.method.as_str(),
                p.achieved,
                p.volume_error
            );
        }
        out
    }
}

/// Exact profile by enumerating every subset. For each target `v` the
/// minimum is taken over subsets with `|V(E) - v| <= min cell volume / 2`.
pub fn brute_force_profile(
    grid: &Arc<ConformalGrid>,
    volumes: &[f64],
    stencil: &PerimeterStencil,
) -> Result<ProfileCurve> {
    let n = grid.cell_count();
    if n > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::GridTooLarge {
            cells: n,
            cap: BRUTE_FORCE_MAX_CELLS,
        });
    }
    let targets = sorted_targets(volumes)?;
    let half = 0.5 * grid.min_cell_volume();
    let vols: Vec<f64> = (0..n).map(|i| grid.volume_of(i)).collect();
    let mut pairs = Vec::new();
    let mut walls = vec![0.0; n];
    for c in 0..n {
        for (nb, w) in stencil.pairs(grid, c) {
            match nb {
                Some(nb) if nb > c => pairs.push((c, nb, w)),
                Some(nb) if nb == c => {}
                Some(_) => {}
                None => walls[c] += w,
            }
        }
    }
    let mut best: Vec<Option<(f64, u32)>> = vec![None; targets.len()];
    for mask in 0u32..(1u32 << n) {
        let bit = |i: usize| mask >> i & 1 == 1;
        let v: f64 = (0..n).filter(|&i| bit(i)).map(|i| vols[i]).sum();
        let hits: Vec<usize> = targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| (v - t).abs() <= half)
            .map(|(k, _)| k)
            .collect();
        if hits.is_empty() {
            continue;
        }
        let p: f64 = pairs
            .iter()
            .filter(|(a, b, _)| bit(*a) != bit(*b))
            .map(|(_, _, w)| w)
            .sum::<f64>()
            + (0..n).filter(|&i| bit(i)).map(|i| walls[i]).sum::<f64>();
        for k in hits {
            if best[k].is_none_or(|(bp, _)| p < bp) {
                best[k] = Some((p, mask));
            }
        }
    }
    let points = targets
        .iter()
        .zip(best)
        .map(|(&v, b)| match b {
            Some((_, mask)) => {
                let set =
                    IndicatorSet::from_indices(grid, (0..n).filter(|&i| mask >> i & 1 == 1)).expect("indices in range");
                ProfilePoint {
                    v,
                    i_v: perimeter(&set, stencil),
                    volume_error: (set.volume() - v).abs(),
                    achiever: Some(set),
                    method: ProfileMethod::Oracle,
                    achieved: true,
                }
            }
            None => ProfilePoint {
                v,
                i_v: f64::INFINITY,
                achiever: None,
                method: ProfileMethod::Oracle,
                achieved: false,
                volume_error: f64::INFINITY,
            },
        })
        .collect();
    Ok(ProfileCurve {
        points,
        grid_id: grid.id(),
        stencil: stencil.kind(),
    })
}

fn sorted_targets(volumes: &[f64]) -> Result<Vec<f64>> {
    if volumes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("target volumes must be finite and >= 0".into()));
    }
    let mut t = volumes.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    Ok(t)
}

/// Smallest minimizer of `P(E) - lambda V(E)`.
pub fn lagrangian_minimizer(
    grid: &Arc<ConformalGrid>,
    lambda: f64,
    stencil: &PerimeterStencil,
) -> Result<IndicatorSet> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = grid.cell_count();
    let (s, t) = (n, n + 1);
    let mut net = FlowNetwork::new(n + 2);
    for c in 0..n {
        // c outside E pays lambda * vol(c); c inside E pays its wall faces
        net.add_edge(s, c, lambda * grid.volume_of(c));
        let mut wall = 0.0;
        for (nb, w) in stencil.pairs(grid, c) {
            match nb {
                Some(nb) if nb != c => net.add_edge(c, nb, w),
                Some(_) => {}
                None => wall += w,
            }
        }
        net.add_edge(c, t, wall);
    }
    net.max_flow(s, t);
    let side = net.source_side(s);
    IndicatorSet::new(grid, side[..n].to_vec())
}

/// Profile points from a sweep over `lambda`; repeated minimizers collapse
/// to one point.
pub fn lagrangian_cut_profile(
    grid: &Arc<ConformalGrid>,
    lambdas: &[f64],
    stencil: &PerimeterStencil,
) -> Result<ProfileCurve> {
    let mut points: Vec<ProfilePoint> = Vec::new();
    for &lambda in lambdas {
        let set = lagrangian_minimizer(grid, lambda, stencil)?;
        let v = set.volume();
        if points.iter().any(|p| p.v == v) {
            continue;
        }
        points.push(ProfilePoint {
            v,
            i_v: perimeter(&set, stencil),
            achiever: Some(set),
            method: ProfileMethod::Lagrangian,
            achieved: true,
            volume_error: 0.0,
        });
    }
    points.sort_by(|a, b| a.v.total_cmp(&b.v));
    Ok(ProfileCurve {
        points,
        grid_id: grid.id(),
        stencil: stencil.kind(),
    })
}

/// Lower convex envelope (as hull vertices sorted by `v`) of a point cloud.
pub fn lower_convex_envelope(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|b, a| a.0 == b.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Piecewise-linear interpolation of an envelope; `None` outside its range.
pub fn envelope_value(hull: &[(f64, f64)], v: f64) -> Option<f64> {
    let first = hull.first()?;
    let last = hull.last()?;
    if v < first.0 || v > last.0 {
        return None;
    }
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        if v >= a.0 && v <= b.0 {
            if v == a.0 {
                return Some(a.1);
            }
            if v == b.0 {
                return Some(b.1);
            }
            return Some(a.1 + (b.1 - a.1) * (v - a.0) / (b.0 - a.0));
        }
    }
    Some(first.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    /// Initial temperature; `None` uses the mean pair weight of the grid.
    pub t0: Option<f64>,
    pub cooling: f64,
    pub max_sweeps: usize,
    /// Moves attempted per sweep.
    pub moves_per_sweep: usize,
    /// Annealing stops once `T < t0 * t_min_ratio`.
    pub t_min_ratio: f64,
    /// Width in cells of the wall band that marks a point as not achieved.
    pub guard_band: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t0: None,
            cooling: 0.995,
            max_sweeps: 100_000,
            moves_per_sweep: 100,
            t_min_ratio: 1e-4,
            guard_band: 2,
        }
    }
}

/// Vec-backed set with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone)]
struct IndexedSet {
    items: Vec<usize>,
    pos: Vec<usize>,
}

impl IndexedSet {
    fn new(n: usize) -> Self {
        Self {
            items: Vec::new(),
            pos: vec![usize::MAX; n],
        }
    }

    fn insert(&mut self, x: usize) {
        if self.pos[x] == usize::MAX {
            self.pos[x] = self.items.len();
            self.items.push(x);
        }
    }

    fn remove(&mut self, x: usize) {
        let p = self.pos[x];
        if p != usize::MAX {
            let last = *self.items.last().expect("nonempty");
            self.items.swap_remove(p);
            if last != x {
                self.pos[last] = p;
            }
            self.pos[x] = usize::MAX;
        }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        if self.items.is_empty() {
            None
        } else {
            Some(self.items[rng.gen_range(0..self.items.len())])
        }
    }
}

const AXIS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

struct AnnealState<'a> {
    grid: &'a ConformalGrid,
    pairs: Vec<Vec<(Option<usize>, f64)>>,
    inside: Vec<bool>,
    boundary: IndexedSet,
    frontier: IndexedSet,
    volume: f64,
    perimeter: f64,
}

impl<'a> AnnealState<'a> {
    fn new(grid: &'a ConformalGrid, stencil: &PerimeterStencil) -> Self {
        let n = grid.cell_count();
        let pairs = (0..n).map(|c| stencil.pairs(grid, c).collect()).collect();
        Self {
            grid,
            pairs,
            inside: vec![false; n],
            boundary: IndexedSet::new(n),
            frontier: IndexedSet::new(n),
            volume: 0.0,
            perimeter: 0.0,
        }
    }

    fn toggle_delta(&self, c: usize) -> f64 {
        let adding = !self.inside[c];
        let d: f64 = self.pairs[c]
            .iter()
            .map(|&(nb, w)| match nb {
                Some(nb) if nb != c && self.inside[nb] => -w,
                Some(nb) if nb == c => 0.0,
                _ => w,
            })
            .sum();
        if adding {
            d
        } else {
            -d
        }
    }

    fn refresh(&mut self, c: usize) {
        let mut touches_out = false;
        let mut touches_in = false;
        for &(dx, dy) in &AXIS {
            match self.grid.offset(c, dx, dy) {
                Some(nb) => {
                    if self.inside[nb] {
                        touches_in = true;
                    } else {
                        touches_out = true;
                    }
                }
                None => touches_out = true,
            }
        }
        if self.inside[c] {
            self.frontier.remove(c);
            if touches_out {
                self.boundary.insert(c);
            } else {
                self.boundary.remove(c);
            }
        } else {
            self.boundary.remove(c);
            if touches_in {
                self.frontier.insert(c);
            } else {
                self.frontier.remove(c);
            }
        }
    }

    fn toggle(&mut self, c: usize) {
        self.perimeter += self.toggle_delta(c);
        if self.inside[c] {
            self.volume -= self.grid.volume_of(c);
        } else {
            self.volume += self.grid.volume_of(c);
        }
        self.inside[c] = !self.inside[c];
        self.refresh(c);
        for &(dx, dy) in &AXIS {
            if let Some(nb) = self.grid.offset(c, dx, dy) {
                self.refresh(nb);
            }
        }
    }
}

fn fill_start(grid: &ConformalGrid) -> usize {
    let (cx, cy) = ((grid.width() as f64 - 1.0) / 2.0, (grid.height() as f64 - 1.0) / 2.0);
    let key = |i: usize| {
        let (x, y) = grid.cell_at(i);
        let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        (grid.volume_of(i), d)
    };
    let mut best = 0;
    for i in 1..grid.cell_count() {
        let (vb, db) = key(best);
        let (vi, di) = key(i);
        if vi > vb || (vi == vb && di < db) {
            best = i;
        }
    }
    best
}

fn greedy_fill<'a>(
    grid: &'a ConformalGrid,
    stencil: &PerimeterStencil,
    v: f64,
    weighted: bool,
    rng: &mut ChaCha8Rng,
) -> AnnealState<'a> {
    let mut st = AnnealState::new(grid, stencil);
    st.toggle(fill_start(grid));
    while st.volume < v {
        let mut best: Option<(f64, usize)> = None;
        let mut ties = 0u32;
        let slope = if weighted {
            st.perimeter / (2.0 * st.volume)
        } else {
            0.0
        };
        for &c in &st.frontier.items {
            let d = st.toggle_delta(c) - slope * grid.volume_of(c);
            match best {
                Some((bd, _)) if d > bd + 1e-12 => {}
                Some((bd, _)) if (d - bd).abs() <= 1e-12 => {
                    ties += 1;
                    if rng.gen_range(0..=ties) == 0 {
                        best = Some((bd, c));
                    }
                }
                _ => {
                    best = Some((d, c));
                    ties = 0;
                }
            }
        }
        let Some((_, c)) = best else { break };
        let after = st.volume + grid.volume_of(c);
        if after - v > v - st.volume {
            break;
        }
        st.toggle(c);
    }
    st
}

/// Upper bound on the profile at `v` by seeded simulated annealing.
///
/// Two greedy fills grow the set from the largest cell (ties toward the grid
/// center), one by least added perimeter and one by added perimeter minus the
/// current `P / 2V` slope times the added volume, until the volume
/// is within half a cell of `v`. Annealing starts from the fill with the
/// smaller perimeter: boundary/frontier swaps under
/// geometric cooling with the volume held within one cell volume of `v`.
/// Only states within half the smallest cell volume of `v` (or the greedy start, if
/// farther) are recorded; the best one is returned with its perimeter
/// recomputed exactly.
pub fn annealed_profile_point(
    grid: &Arc<ConformalGrid>,
    v: f64,
    stencil: &PerimeterStencil,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<ProfilePoint> {
    let total = grid.total_volume();
    if !(v > 0.0 && v < total) {
        return Err(Error::UnreachableVolume { target: v, total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plain = greedy_fill(grid, stencil, v, false, &mut rng);
    let weighted = greedy_fill(grid, stencil, v, true, &mut rng);
    let mut st = if weighted.perimeter < plain.perimeter {
        weighted
    } else {
        plain
    };

    let band = grid.max_cell_volume();
    let record_band = (0.5 * grid.min_cell_volume()).max((st.volume - v).abs());
    let mean_weight = {
        let (s, k) = st
            .pairs
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, k), (_, w)| (s + w, k + 1));
        s / k.max(1) as f64
    };
    let t0 = schedule.t0.unwrap_or(mean_weight);
    let t_min = t0 * schedule.t_min_ratio;
    let mut temp = t0;
    let mut best_mask = st.inside.clone();
    let mut best_p = st.perimeter;
    let mut best_err = (st.volume - v).abs();
    for _ in 0..schedule.max_sweeps {
        if temp < t_min {
            break;
        }
        for _ in 0..schedule.moves_per_sweep {
            let (Some(out), Some(inn)) = (st.boundary.pick(&mut rng), st.frontier.pick(&mut rng)) else {
                break;
            };
            let new_volume = st.volume - grid.volume_of(out) + grid.volume_of(inn);
            if (new_volume - v).abs() > band {
                continue;
            }
            let before = st.perimeter;
            st.toggle(out);
            if st.inside[inn] {
                st.toggle(out);
                continue;
            }
            st.toggle(inn);
            let delta = st.perimeter - before;
            let accept = delta <= 0.0 || rng.gen::<f64>() < (-delta / temp).exp();
            if accept {
                let err = (st.volume - v).abs();
                let better = err <= record_band && st.perimeter < best_p - 1e-9
                    || (st.perimeter <= best_p + 1e-9 && err < best_err - 1e-12);
                if better {
                    best_p = st.perimeter;
                    best_err = err;
                    best_mask.copy_from_slice(&st.inside);
                }
            } else {
                st.toggle(inn);
                st.toggle(out);
                st.perimeter = before;
            }
        }
        temp *= schedule.cooling;
    }

    let set = IndicatorSet::new(grid, best_mask)?;
    let achieved = match grid.mode() {
        BoundaryMode::Periodic => true,
        BoundaryMode::Open => !set.indices().any(|i| grid.wall_distance(i) < schedule.guard_band),
    };
    Ok(ProfilePoint {
        v,
        i_v: perimeter(&set, stencil),
        volume_error: (set.volume() - v).abs(),
        achiever: Some(set),
        method: ProfileMethod::Anneal,
        achieved,
    })
}

/// Annealed points at each target; `v = 0` maps to the empty set. Each target
/// gets its own stream derived from `seed`.
pub fn annealed_profile(
    grid: &Arc<ConformalGrid>,
    volumes: &[f64],
    stencil: &PerimeterStencil,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<ProfileCurve> {
    let targets = sorted_targets(volumes)?;
    let points = targets
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if v == 0.0 {
                Ok(ProfilePoint {
                    v,
                    i_v: 0.0,
                    achiever: Some(IndicatorSet::empty(grid)),
                    method: ProfileMethod::Anneal,
                    achieved: true,
                    volume_error: 0.0,
                })
            } else {
                annealed_profile_point(grid, v, stencil, schedule, seed.wrapping_add(k as u64))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileCurve {
        points,
        grid_id: grid.id(),
        stencil: stencil.kind(),
    })
}

/// Lowers points of `curve` using unions of two of its achievers, the second
/// shifted by one of `offsets` (in lattice steps). A union replaces a point
/// when the two sets are disjoint, its volume is no farther from the target
/// than half the smallest cell volume, the current achiever, or the two parts
/// are from their own targets combined, and its exact perimeter is smaller.
/// Passes repeat until no point changes, so unions may themselves be combined. Annealing grows a single
/// region, so this recovers minimizers split across separated regions.
pub fn refine_with_translated_unions(
    grid: &Arc<ConformalGrid>,
    curve: &ProfileCurve,
    stencil: &PerimeterStencil,
    offsets: &[(i64, i64)],
) -> Result<ProfileCurve> {
    let band = grid.max_cell_volume();
    let half_cell = 0.5 * grid.min_cell_volume();
    let shifted = |set: &IndicatorSet, (dx, dy): (i64, i64)| -> Option<Vec<usize>> {
        set.indices().map(|i| grid.offset(i, dx, dy)).collect()
    };
    let mut out = curve.clone();
    let mut changed = true;
    while changed {
        changed = false;
        let source = out.clone();
        for t in 0..out.points.len() {
            let target = out.points[t].v;
            for a in &source.points {
                for b in &source.points {
                    let (Some(sa), Some(sb)) = (&a.achiever, &b.achiever) else {
                        continue;
                    };
                    if sa.is_empty() || sb.is_empty() || (a.v + b.v - target).abs() > band {
                        continue;
                    }
                    for &off in offsets {
                        let Some(moved) = shifted(sb, off) else { continue };
                        if moved.iter().any(|&i| sa.contains(i)) {
                            continue;
                        }
                        let union = IndicatorSet::from_indices(grid, sa.indices().chain(moved))?;
                        let err = (union.volume() - target).abs();
                        let p = perimeter(&union, stencil);
                        let point = &mut out.points[t];
                        let allowed = half_cell.max(point.volume_error).max(a.volume_error + b.volume_error);
                        if err <= allowed && p < point.i_v - 1e-9 {
                            point.i_v = p;
                            point.volume_error = err;
                            point.achieved = a.achieved && b.achieved;
                            point.achiever = Some(union);
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub max_jump: f64,
    /// Index `i` of the worst pair `(i, i + 1)`.
    pub max_jump_at: usize,
    /// Largest `|dI| / sqrt(dv)` over adjacent pairs.
    pub max_ratio: f64,
    pub tolerance: f64,
    pub flagged: Vec<usize>,
}

impl ContinuityReport {
    pub fn passes(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Scans adjacent samples of a curve and flags jumps above `tolerance`.
pub fn profile_continuity_report(points: &[(f64, f64)], tolerance: f64) -> Result<ContinuityReport> {
    if points.len() < 3 {
        return Err(Error::InvalidCurve(format!("need >= 3 points, got {}", points.len())));
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidCurve("volumes are not strictly increasing".into()));
    }
    let mut report = ContinuityReport {
        max_jump: 0.0,
        max_jump_at: 0,
        max_ratio: 0.0,
        tolerance,
        flagged: Vec::new(),
    };
    for (i, w) in points.windows(2).enumerate() {
        let jump = (w[1].1 - w[0].1).abs();
        if jump > report.max_jump {
            report.max_jump = jump;
            report.max_jump_at = i;
        }
        report.max_ratio = report.max_ratio.max(jump / (w[1].0 - w[0].0).sqrt());
        if jump > tolerance {
            report.flagged.push(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(w: usize, h: usize) -> Arc<ConformalGrid> {
        Arc::new(ConformalGrid::flat(w, h, 1.0, BoundaryMode::Periodic).unwrap())
    }

    #[test]
    fn oracle_small_torus() {
        let g = torus(4, 4);
        let c = brute_force_profile(&g, &[0.0, 1.0, 2.0, 8.0, 16.0], &PerimeterStencil::cut4()).unwrap();
        assert_eq!(
            c.values(),
            vec![(0.0, 0.0), (1.0, 4.0), (2.0, 6.0), (8.0, 8.0), (16.0, 0.0)]
        );
        let band = c.points[3].achiever.as_ref().unwrap();
        assert_eq!(band.count(), 8);
    }

    #[test]
    fn oracle_rejects_large_grid() {
        let g = torus(5, 5);
        assert!(matches!(
            brute_force_profile(&g, &[1.0], &PerimeterStencil::cut4()),
            Err(Error::GridTooLarge { cells: 25, .. })
        ));
    }

    #[test]
    fn oracle_unreachable_target() {
        let g = torus(4, 4);
        let c = brute_force_profile(&g, &[17.0], &PerimeterStencil::cut4()).unwrap();
        assert!(!c.points[0].achieved);
        assert!(c.points[0].i_v.is_infinite());
    }

    #[test]
    fn lagrangian_endpoints() {
        let g = torus(4, 4);
        let st = PerimeterStencil::cut4();
        let c = lagrangian_cut_profile(&g, &[0.0], &st).unwrap();
        assert_eq!(c.values(), vec![(0.0, 0.0)]);
        let big = 2.0 * st.max_cell_perimeter(&g) / g.min_cell_volume();
        let c = lagrangian_cut_profile(&g, &[big], &st).unwrap();
        assert_eq!(c.values(), vec![(16.0, 0.0)]);
        assert!(lagrangian_cut_profile(&g, &[-1.0], &st).is_err());
    }

    #[test]
    fn lagrangian_open_grid_matches_oracle_envelope() {
        let g = Arc::new(ConformalGrid::flat(4, 4, 1.0, BoundaryMode::Open).unwrap());
        let st = PerimeterStencil::cut4();
        let vols: Vec<f64> = (0..=16).map(f64::from).collect();
        let oracle = brute_force_profile(&g, &vols, &st).unwrap();
        let hull = lower_convex_envelope(&oracle.values());
        let lambdas: Vec<f64> = (0..=400).map(|k| k as f64 * 0.01).collect();
        let lag = lagrangian_cut_profile(&g, &lambdas, &st).unwrap();
        let lag_pts = lag.values();
        for p in &lag_pts {
            assert_eq!(oracle.value_at(p.0), Some(p.1));
            assert_eq!(envelope_value(&hull, p.0), Some(p.1));
        }
        for h in &hull {
            assert!(lag_pts.contains(h), "hull vertex {h:?} missed");
        }
    }

    #[test]
    fn envelope_helpers() {
        let hull = lower_convex_envelope(&[(0.0, 0.0), (1.0, 4.0), (2.0, 1.0), (4.0, 0.0)]);
        assert_eq!(hull, vec![(0.0, 0.0), (4.0, 0.0)]);
        assert_eq!(envelope_value(&hull, 2.0), Some(0.0));
        assert_eq!(envelope_value(&hull, 5.0), None);
    }

    #[test]
    fn anneal_matches_oracle_domino() {
        let g = torus(4, 4);
        let p = annealed_profile_point(&g, 2.0, &PerimeterStencil::cut4(), &AnnealSchedule::default(), 7).unwrap();
        assert_eq!(p.i_v, 6.0);
        assert_eq!(p.volume_error, 0.0);
    }

    #[test]
    fn anneal_rejects_unreachable() {
        let g = torus(4, 4);
        let st = PerimeterStencil::cut4();
        assert!(matches!(
            annealed_profile_point(&g, 17.0, &st, &AnnealSchedule::default(), 1),
            Err(Error::UnreachableVolume { .. })
        ));
    }

    #[test]
    fn anneal_is_seed_deterministic() {
        let g = Arc::new(ConformalGrid::flat(12, 12, 1.0, BoundaryMode::Open).unwrap());
        let st = PerimeterStencil::crofton16();
        let sched = AnnealSchedule::default();
        let a = annealed_profile_point(&g, 20.0, &st, &sched, 99).unwrap();
        let b = annealed_profile_point(&g, 20.0, &st, &sched, 99).unwrap();
        assert_eq!(a.i_v.to_bits(), b.i_v.to_bits());
        assert_eq!(a.achiever, b.achiever);
    }

    #[test]
    fn continuity_reports() {
        let flat = [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)];
        let r = profile_continuity_report(&flat, 0.5).unwrap();
        assert_eq!(r.max_jump, 0.0);
        assert!(r.passes());
        let broken = [(0.0, 0.0), (1.0, 1.0), (2.0, 9.0), (3.0, 9.5)];
        let r = profile_continuity_report(&broken, 2.0).unwrap();
        assert_eq!(r.flagged, vec![1]);
        assert!(profile_continuity_report(&[(0.0, 0.0), (1.0, 1.0)], 1.0).is_err());
        assert!(profile_continuity_report(&[(0.0, 0.0), (2.0, 1.0), (1.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn csv_format() {
        let g = torus(4, 4);
        let c = brute_force_profile(&g, &[0.0, 1.0], &PerimeterStencil::cut4()).unwrap();
        assert_eq!(
            c.to_csv(),
            "v,I_v,method,achieved,volume_error\n0,0,oracle,true,0\n1,4,oracle,true,0\n"
        );
    }
}
