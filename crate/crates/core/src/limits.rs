//! Limit manifolds along diverging tracks and generalized regions on the
//! disjoint union of the base grid with those limits.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::concentration::{mean_std, Decomposition, SetSequence};
use crate::error::{Error, Result};
use crate::manifold::{recentered_metric_difference, window_steps, Cell, ConformalGrid};
use crate::perimeter::{perimeter, IndicatorSet};
use crate::profile::ProfileCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackKind {
    Bounded,
    Diverging,
}

fn lattice_distance(a: Cell, b: Cell, h: f64) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    dx.hypot(dy) * h
}

/// A track diverges when its distance from the base point strictly grows
/// along the whole tail.
pub fn classify_track(track: &[Cell], origins: &[Cell], h: f64) -> Result<TrackKind> {
    if track.len() != origins.len() {
        return Err(Error::CountMismatch(format!(
            "track of length {} against {} origins",
            track.len(),
            origins.len()
        )));
    }
    let d: Vec<f64> = track
        .iter()
        .zip(origins)
        .map(|(&p, &o)| lattice_distance(p, o, h))
        .collect();
    if d.len() >= 2 && d.windows(2).all(|w| w[1] > w[0]) {
        Ok(TrackKind::Diverging)
    } else {
        Ok(TrackKind::Bounded)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups tracks whose per-index distance stays within `threshold` over the
/// whole tail. Blocks are sorted by their smallest member.
pub fn cluster_diverging_tracks(tracks: &[Vec<Cell>], threshold: f64, h: f64) -> Result<Vec<Vec<usize>>> {
    if let Some(first) = tracks.first() {
        if tracks.iter().any(|t| t.len() != first.len()) {
            return Err(Error::CountMismatch("tracks have different lengths".into()));
        }
    }
    let n = tracks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for a in 0..n {
        for b in a + 1..n {
            let close = tracks[a]
                .iter()
                .zip(&tracks[b])
                .all(|(&p, &q)| lattice_distance(p, q, h) <= threshold);
            if close {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_block: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_block[r] {
            Some(b) => blocks[b].push(i),
            None => {
                root_block[r] = Some(blocks.len());
                blocks.push(vec![i]);
            }
        }
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitManifold {
    pub chart: Arc<ConformalGrid>,
    /// Pieces whose tracks converge to this limit.
    pub pieces: Vec<usize>,
    /// Center vertex of the window at each retained index.
    pub track: Vec<Cell>,
    /// Window half-width in lattice steps; the chart center is `(r, r)`.
    pub window_steps: usize,
    /// `sup |phi_k - phi_{k+1}|` between consecutive recentered windows of
    /// the indices actually used.
    pub c0_residuals: Vec<f64>,
    /// Positions (within the retained tail) used for detection.
    pub positions: Vec<usize>,
    pub tolerance: f64,
}

fn cauchy_residuals(grids: &[&ConformalGrid], track: &[Cell], radius: f64) -> Result<Vec<f64>> {
    (0..grids.len().saturating_sub(1))
        .map(|k| recentered_metric_difference(grids[k], track[k], grids[k + 1], track[k + 1], radius))
        .collect()
}

fn is_cauchy(res: &[f64], tol: f64) -> bool {
    res.windows(2).all(|w| w[1] <= w[0]) && res.last().is_none_or(|&r| r <= tol)
}

/// Recenters every grid at its track vertex and requires the windows of
/// radius `radius` to form a Cauchy sequence in sup norm: residuals
/// nonincreasing and the last one within `tol`. When the full tail fails,
/// the indices whose window is within `tol` of the final one are retried as
/// a subsequence. The chart is the final window.
pub fn detect_limit_manifold(
    grids: &[Arc<ConformalGrid>],
    track: &[Cell],
    radius: f64,
    tol: f64,
) -> Result<LimitManifold> {
    if grids.is_empty() {
        return Err(Error::Empty("track"));
    }
    if grids.len() != track.len() {
        return Err(Error::CountMismatch(format!(
            "{} grids for a track of length {}",
            grids.len(),
            track.len()
        )));
    }
    let all: Vec<&ConformalGrid> = grids.iter().map(|g| g.as_ref()).collect();
    let residuals = cauchy_residuals(&all, track, radius)?;
    let last = grids.len() - 1;
    let positions: Vec<usize> = if is_cauchy(&residuals, tol) {
        (0..grids.len()).collect()
    } else {
        let mut keep = Vec::new();
        for k in 0..grids.len() {
            let e = recentered_metric_difference(all[k], track[k], all[last], track[last], radius)?;
            if e <= tol {
                keep.push(k);
            }
        }
        keep
    };
    let sub_grids: Vec<&ConformalGrid> = positions.iter().map(|&k| all[k]).collect();
    let sub_track: Vec<Cell> = positions.iter().map(|&k| track[k]).collect();
    let c0 = cauchy_residuals(&sub_grids, &sub_track, radius)?;
    if positions.len() < 2 || !is_cauchy(&c0, tol) {
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        return Err(Error::LimitNotCauchy { worst, tol });
    }
    let r = window_steps(radius, grids[last].h());
    Ok(LimitManifold {
        chart: Arc::new(grids[last].extract_window(track[last], r)?),
        pieces: Vec::new(),
        track: track.to_vec(),
        window_steps: r,
        c0_residuals: c0,
        positions,
        tolerance: tol,
    })
}

/// How a piece is carried into the generalized region.
#[derive(Debug, Clone, PartialEq)]
pub enum PieceAssignment {
    Base,
    /// Index into the list of detected limits.
    Limit(usize),
    Unassigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitParams {
    /// Tracks closer than this (in metric units) for the whole tail share a
    /// limit; `None` means twice the decomposition's working radius.
    pub cluster_threshold: Option<f64>,
    /// Chart half-width; `None` fits the traces of each cluster.
    pub window_radius: Option<f64>,
    pub tolerance: f64,
}

impl Default for LimitParams {
    fn default() -> Self {
        Self {
            cluster_threshold: None,
            window_radius: None,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedLimits {
    pub assignments: Vec<PieceAssignment>,
    pub kinds: Vec<TrackKind>,
    pub limits: Vec<LimitManifold>,
    /// Pieces left unassigned and the reason detection failed for them.
    pub failures: Vec<(Vec<usize>, Error)>,
    /// Window used for metric comparisons around bounded tracks.
    pub base_window_radius: f64,
}

/// Lower-left vertex of each piece center; missing centers are an error.
fn piece_track(dec: &Decomposition, piece: usize) -> Result<Vec<Cell>> {
    dec.pieces[piece]
        .centers
        .iter()
        .map(|c| c.ok_or(Error::OrphanPiece(piece)))
        .collect()
}

/// Smallest window half-width (in lattice steps) around the track of
/// `lead` that holds every trace cell of `members` at every index, plus a
/// two-step collar.
fn window_steps_for(dec: &Decomposition, lead: &[Cell], members: &[usize]) -> usize {
    let mut steps = 0i64;
    for &m in members {
        for (k, trace) in dec.pieces[m].trace.iter().enumerate() {
            let grid = trace.grid();
            let (px, py) = (lead[k].0 as i64, lead[k].1 as i64);
            for i in trace.indices() {
                let (x, y) = grid.cell_at(i);
                let (dx, dy) = (x as i64 - px, y as i64 - py);
                steps = steps.max(dx.abs().max(dy.abs()) + 1);
            }
        }
    }
    steps as usize + 2
}

/// Classifies every piece track, clusters the diverging ones, and runs limit
/// detection along the first track of each cluster. Clusters that fail
/// detection leave their pieces unassigned and are listed in `failures`.
pub fn detect_limits(
    seq: &SetSequence,
    dec: &Decomposition,
    working_radius: f64,
    params: &LimitParams,
) -> Result<DetectedLimits> {
    let grids: Vec<Arc<ConformalGrid>> = dec.subsequence.iter().map(|&j| seq.terms()[j].grid().clone()).collect();
    let origins: Vec<Cell> = dec.subsequence.iter().map(|&j| seq.origins()[j]).collect();
    let h = grids[0].h();
    let threshold = params.cluster_threshold.unwrap_or(2.0 * working_radius);
    let mut assignments = vec![PieceAssignment::Unassigned; dec.pieces.len()];
    let mut kinds = Vec::with_capacity(dec.pieces.len());
    let mut diverging = Vec::new();
    let mut tracks = Vec::new();
    let mut base_steps = 0;
    for i in 0..dec.pieces.len() {
        let Ok(track) = piece_track(dec, i) else {
            kinds.push(TrackKind::Bounded);
            continue;
        };
        let kind = classify_track(&track, &origins, h)?;
        kinds.push(kind);
        match kind {
            TrackKind::Bounded => {
                assignments[i] = PieceAssignment::Base;
                base_steps = base_steps.max(window_steps_for(dec, &track, &[i]));
            }
            TrackKind::Diverging => {
                diverging.push(i);
                tracks.push(track);
            }
        }
    }
    let mut limits = Vec::new();
    let mut failures = Vec::new();
    for block in cluster_diverging_tracks(&tracks, threshold, h)? {
        let lead = &tracks[block[0]];
        let members: Vec<usize> = block.iter().map(|&b| diverging[b]).collect();
        let radius = match params.window_radius {
            Some(r) => r,
            None => window_steps_for(dec, lead, &members) as f64 * h,
        };
        match detect_limit_manifold(&grids, lead, radius, params.tolerance) {
            Ok(mut lim) => {
                for &m in &members {
                    assignments[m] = PieceAssignment::Limit(limits.len());
                }
                lim.pieces = members;
                limits.push(lim);
            }
            Err(e) => failures.push((members, e)),
        }
    }
    let base_window_radius = params.window_radius.unwrap_or(base_steps as f64 * h);
    Ok(DetectedLimits {
        assignments,
        kinds,
        limits,
        failures,
        base_window_radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum ManifoldRef {
    Base,
    Limit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub manifold: ManifoldRef,
    pub pieces: Vec<usize>,
    pub set: IndicatorSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedRegion {
    pub components: Vec<Component>,
    pub limits: Vec<LimitManifold>,
    pub base_window_radius: f64,
    pub total_volume: f64,
    pub total_perimeter: f64,
}

impl GeneralizedRegion {
    pub fn component_count(&self) -> usize {
        self.components.len()
    }
}

/// Moves `set` by `-offset` into `target`. Cells landing outside `target`
/// are returned as their total volume on the source grid.
fn recenter(set: &IndicatorSet, offset: (i64, i64), target: &Arc<ConformalGrid>) -> (IndicatorSet, f64) {
    let src = set.grid();
    let mut mask = vec![false; target.cell_count()];
    let mut lost = 0.0;
    for i in set.indices() {
        let (x, y) = src.cell_at(i);
        let (cx, cy) = (x as i64 - offset.0, y as i64 - offset.1);
        if cx >= 0 && cy >= 0 && (cx as usize) < target.width() && (cy as usize) < target.height() {
            mask[target.index((cx as usize, cy as usize))] = true;
        } else {
            lost += src.volume_of(i);
        }
    }
    (IndicatorSet::new(target, mask).expect("mask sized to target"), lost)
}

fn chart_offset(center: Cell, r: usize) -> (i64, i64) {
    (center.0 as i64 - r as i64, center.1 as i64 - r as i64)
}

fn union_all(sets: impl IntoIterator<Item = IndicatorSet>, grid: &Arc<ConformalGrid>) -> Result<IndicatorSet> {
    sets.into_iter()
        .try_fold(IndicatorSet::empty(grid), |acc, s| acc.union(&s))
}

/// Components are the last retained traces: bounded pieces together on the
/// last base grid, diverging pieces recentered into their limit charts.
pub fn assemble_generalized_region(
    seq: &SetSequence,
    dec: &Decomposition,
    detected: &DetectedLimits,
) -> Result<GeneralizedRegion> {
    if detected.assignments.len() != dec.pieces.len() {
        return Err(Error::CountMismatch(format!(
            "{} assignments for {} pieces",
            detected.assignments.len(),
            dec.pieces.len()
        )));
    }
    if let Some(orphan) = detected
        .assignments
        .iter()
        .position(|a| *a == PieceAssignment::Unassigned)
    {
        return Err(Error::OrphanPiece(orphan));
    }
    let last = dec.subsequence.len() - 1;
    let base_grid = seq.terms()[dec.subsequence[last]].grid().clone();
    let stencil = seq.stencil();
    let mut components = Vec::new();
    let base_pieces: Vec<usize> = (0..dec.pieces.len())
        .filter(|&i| detected.assignments[i] == PieceAssignment::Base)
        .collect();
    if !base_pieces.is_empty() {
        let set = union_all(
            base_pieces.iter().map(|&i| dec.pieces[i].trace[last].clone()),
            &base_grid,
        )?;
        components.push(Component {
            manifold: ManifoldRef::Base,
            pieces: base_pieces,
            set,
        });
    }
    for (li, lim) in detected.limits.iter().enumerate() {
        let offset = chart_offset(lim.track[last], lim.window_steps);
        let mut parts = Vec::new();
        for &p in &lim.pieces {
            let (s, lost) = recenter(&dec.pieces[p].trace[last], offset, &lim.chart);
            if lost > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "piece {p} extends beyond its limit chart (lost volume {lost})"
                )));
            }
            parts.push(s);
        }
        components.push(Component {
            manifold: ManifoldRef::Limit(li),
            pieces: lim.pieces.clone(),
            set: union_all(parts, &lim.chart)?,
        });
    }
    let total_volume = components.iter().map(|c| c.set.volume()).sum();
    let total_perimeter = components.iter().map(|c| perimeter(&c.set, stencil)).sum();
    Ok(GeneralizedRegion {
        components,
        limits: detected.limits.clone(),
        base_window_radius: detected.base_window_radius,
        total_volume,
        total_perimeter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackConvergence {
    pub manifold: ManifoldRef,
    pub pieces: Vec<usize>,
    pub l1_residuals: Vec<f64>,
    pub c0_residuals: Vec<f64>,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tracks: Vec<TrackConvergence>,
    pub l1_tolerance: f64,
    pub c0_tolerance: f64,
    /// Number of trailing residuals that must be within tolerance.
    pub tail: usize,
    pub passes: bool,
}

/// Sup difference of the metrics around each bounded track, in the same
/// lattice coordinates on both grids.
fn base_metric_residual(
    grid: &ConformalGrid,
    target: &ConformalGrid,
    dec: &Decomposition,
    pieces: &[usize],
    k: usize,
    radius: f64,
) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for &p in pieces {
        if let Some(c) = dec.pieces[p].centers[k] {
            sup = sup.max(recentered_metric_difference(grid, c, target, c, radius)?);
        }
    }
    Ok(sup)
}

/// Per component, the L1 distance between the recentered traces and the
/// component set, and the C0 distance between recentered metrics, at every
/// retained index. A component passes when its last `tail` residuals are
/// within tolerance.
pub fn check_multipointed_convergence(
    seq: &SetSequence,
    dec: &Decomposition,
    region: &GeneralizedRegion,
    l1_tolerance: f64,
    c0_tolerance: f64,
    tail: usize,
) -> Result<ConvergenceReport> {
    let covered: usize = region.components.iter().map(|c| c.pieces.len()).sum();
    if covered != dec.pieces.len() {
        return Err(Error::CountMismatch(format!(
            "region covers {covered} pieces, decomposition has {}",
            dec.pieces.len()
        )));
    }
    let mut tracks = Vec::new();
    for comp in &region.components {
        let target = comp.set.grid().clone();
        let mut l1 = Vec::new();
        let mut c0 = Vec::new();
        for (k, &j) in dec.subsequence.iter().enumerate() {
            let grid = seq.terms()[j].grid();
            let (offset, metric) = match comp.manifold {
                ManifoldRef::Base => (
                    (0, 0),
                    base_metric_residual(grid, &target, dec, &comp.pieces, k, region.base_window_radius)?,
                ),
                ManifoldRef::Limit(li) => {
                    let lim = &region.limits[li];
                    let r = lim.window_steps;
                    let radius = r as f64 * grid.h();
                    let d = recentered_metric_difference(grid, lim.track[k], &lim.chart, (r, r), radius)?;
                    (chart_offset(lim.track[k], r), d)
                }
            };
            let mut moved = IndicatorSet::empty(&target);
            let mut lost = 0.0;
            for &p in &comp.pieces {
                let (s, l) = recenter(&dec.pieces[p].trace[k], offset, &target);
                moved = moved.union(&s)?;
                lost += l;
            }
            l1.push(moved.symmetric_difference(&comp.set)?.volume() + lost);
            c0.push(metric);
        }
        let skip = l1.len().saturating_sub(tail);
        let passes = l1[skip..].iter().all(|&r| r <= l1_tolerance) && c0[skip..].iter().all(|&r| r <= c0_tolerance);
        tracks.push(TrackConvergence {
            manifold: comp.manifold,
            pieces: comp.pieces.clone(),
            l1_residuals: l1,
            c0_residuals: c0,
            passes,
        });
    }
    let passes = tracks.iter().all(|t| t.passes);
    Ok(ConvergenceReport {
        tracks,
        l1_tolerance,
        c0_tolerance,
        tail,
        passes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceCountReport {
    pub n: usize,
    pub v: f64,
    pub v_star: f64,
    pub bound: usize,
    pub passes: bool,
    /// `v* (N - 1) <= sum_{i < N} v_i`, when piece volumes are supplied.
    pub chain_holds: Option<bool>,
}

/// `N <= floor(v / v*) + 1`, plus the chain audit on the first `N - 1`
/// piece volumes when given.
pub fn check_piece_count_bound(
    n: usize,
    v: f64,
    v_star: f64,
    piece_volumes: Option<&[f64]>,
) -> Result<PieceCountReport> {
    if !(v_star > 0.0) {
        return Err(Error::InvalidArgument(format!("v* must be > 0, got {v_star}")));
    }
    let bound = (v / v_star).floor() as usize + 1;
    let chain_holds = piece_volumes.map(|vols| {
        let m = n.saturating_sub(1).min(vols.len());
        v_star * m as f64 <= vols[..m].iter().sum::<f64>() * (1.0 + 1e-12)
    });
    Ok(PieceCountReport {
        n,
        v,
        v_star,
        bound,
        passes: n <= bound,
        chain_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionProfilePoint {
    pub v: f64,
    pub base: f64,
    pub union: f64,
    /// `(base - union) / union`; zero when both vanish.
    pub relative_gap: f64,
    /// Volume assigned to each curve by the optimal split.
    pub split: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionProfileReport {
    pub points: Vec<UnionProfilePoint>,
    pub tolerance: f64,
    pub passes: bool,
}

fn curve_on_mesh(curve: &ProfileCurve, step: f64, n: usize) -> Result<Vec<f64>> {
    (0..=n)
        .map(|m| {
            let v = m as f64 * step;
            curve
                .points
                .iter()
                .find(|p| (p.v - v).abs() <= 1e-9 * step.max(1.0))
                .map(|p| p.i_v)
                .ok_or_else(|| Error::InvalidCurve(format!("curve has no sample at v = {v}")))
        })
        .collect()
}

/// Compares the base profile with the profile of the disjoint union of the
/// base and the charts, where a volume may be split across components on a
/// mesh of spacing `step`. Every curve must be sampled at `0, step, ..,
/// n step`. Since the base itself is one component, `union <= base`; the
/// check passes when `base <= (1 + tolerance) union` at every mesh point.
pub fn profile_union_equality(
    base: &ProfileCurve,
    charts: &[ProfileCurve],
    step: f64,
    n: usize,
    tolerance: f64,
) -> Result<UnionProfileReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("mesh step must be > 0, got {step}")));
    }
    let base_vals = curve_on_mesh(base, step, n)?;
    let mut best = base_vals.clone();
    let mut splits: Vec<Vec<usize>> = (0..=n).map(|m| vec![m]).collect();
    for chart in charts {
        let vals = curve_on_mesh(chart, step, n)?;
        let mut next = vec![f64::INFINITY; n + 1];
        let mut next_split: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for m in 0..=n {
            for c in 0..=m {
                let total = best[m - c] + vals[c];
                if total < next[m] {
                    next[m] = total;
                    let mut s = splits[m - c].clone();
                    s.push(c);
                    next_split[m] = s;
                }
            }
        }
        best = next;
        splits = next_split;
    }
    let points: Vec<UnionProfilePoint> = (0..=n)
        .map(|m| {
            let (b, u) = (base_vals[m], best[m]);
            let relative_gap = if u == 0.0 {
                if b == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (b - u) / u
            };
            UnionProfilePoint {
                v: m as f64 * step,
                base: b,
                union: u,
                relative_gap,
                split: splits[m].iter().map(|&c| c as f64 * step).collect(),
            }
        })
        .collect();
    let passes = points.iter().all(|p| p.relative_gap <= tolerance);
    Ok(UnionProfileReport {
        points,
        tolerance,
        passes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsIsometryReport {
    pub holds: bool,
    /// Largest `|d_b / d_a - 1|` over sampled pairs.
    pub max_distortion: f64,
    pub eps: f64,
    pub pairs: usize,
}

/// Checks `(1 - eps) d_a(x, y) <= d_b(f(x), f(y)) <= (1 + eps) d_a(x, y)` on
/// the sampled pairs.
pub fn check_eps_isometry(
    map: impl Fn(Cell) -> Option<Cell>,
    a: &ConformalGrid,
    b: &ConformalGrid,
    eps: f64,
    pairs: &[(Cell, Cell)],
) -> Result<EpsIsometryReport> {
    let mut holds = true;
    let mut max_distortion: f64 = 0.0;
    for &(x, y) in pairs {
        let (fx, fy) = match (map(x), map(y)) {
            (Some(fx), Some(fy)) => (fx, fy),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "correspondence undefined at {x:?} or {y:?}"
                )))
            }
        };
        let da = a.geodesic_distance(x, y)?;
        let db = b.geodesic_distance(fx, fy)?;
        if !((1.0 - eps) * da <= db && db <= (1.0 + eps) * da) {
            holds = false;
        }
        if da > 0.0 {
            max_distortion = max_distortion.max((db / da - 1.0).abs());
        } else if db > 0.0 {
            max_distortion = f64::INFINITY;
        }
    }
    Ok(EpsIsometryReport {
        holds,
        max_distortion,
        eps,
        pairs: pairs.len(),
    })
}

/// Tail-mean volume of the sequence against the region's total volume.
pub fn volume_continuity_gap(seq: &SetSequence, dec: &Decomposition, region: &GeneralizedRegion) -> f64 {
    let vols: Vec<f64> = dec.subsequence.iter().map(|&j| seq.terms()[j].volume()).collect();
    (mean_std(&vols).0 - region.total_volume).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::GridId;
    use crate::manifold::{build_plane_with_caps, BoundaryMode, Cap, CapSpec};
    use crate::perimeter::StencilKind;
    use crate::profile::{ProfileMethod, ProfilePoint};

    #[test]
    fn clustering_examples() {
        let a: Vec<Cell> = (0..5).map(|k| (10 + k, 10)).collect();
        let b: Vec<Cell> = (0..5).map(|k| (13 + k, 10)).collect();
        let c: Vec<Cell> = (0..5).map(|k| (10, 10 + 3 * k)).collect();
        assert_eq!(
            cluster_diverging_tracks(&[a.clone(), a.clone()], 0.0, 1.0).unwrap(),
            vec![vec![0, 1]]
        );
        assert_eq!(
            cluster_diverging_tracks(&[a.clone(), b, c.clone()], 3.0, 1.0).unwrap(),
            vec![vec![0, 1], vec![2]]
        );
        let sep: Vec<Cell> = (0..5).map(|k| (10 + 2 * k, 10)).collect();
        assert_eq!(cluster_diverging_tracks(&[a, sep], 3.0, 1.0).unwrap().len(), 2);
    }

    #[test]
    fn classify() {
        let origins = vec![(0, 0); 4];
        let moving: Vec<Cell> = (0..4).map(|k| (5 + k, 0)).collect();
        assert_eq!(classify_track(&moving, &origins, 1.0).unwrap(), TrackKind::Diverging);
        assert_eq!(classify_track(&[(3, 3); 4], &origins, 1.0).unwrap(), TrackKind::Bounded);
    }

    fn caps_term(k: usize, amplitude: f64) -> Arc<ConformalGrid> {
        let caps = (0..=k)
            .map(|m| Cap {
                center: (20 + 30 * m, 20),
                amplitude: if amplitude > 0.0 {
                    amplitude
                } else {
                    1.0 / (m + 1) as f64
                },
                radius: 4.0,
            })
            .collect();
        Arc::new(build_plane_with_caps(40 + 30 * k, 40, 1.0, BoundaryMode::Open, &CapSpec::new(caps)).unwrap())
    }

    #[test]
    fn identical_caps_limit_is_canonical() {
        let grids: Vec<_> = (0..5).map(|k| caps_term(k, 0.5)).collect();
        let track: Vec<Cell> = (0..5).map(|k| (20 + 30 * k, 20)).collect();
        let lim = detect_limit_manifold(&grids, &track, 8.0, 1e-9).unwrap();
        assert!(lim.c0_residuals.iter().all(|&r| r == 0.0));
        let canonical =
            build_plane_with_caps(16, 16, 1.0, BoundaryMode::Open, &CapSpec::single((8, 8), 0.5, 4.0)).unwrap();
        assert_eq!(lim.chart.phi(), canonical.phi());
    }

    #[test]
    fn harmonic_caps_residuals_follow_formula() {
        let grids: Vec<_> = (0..6).map(|k| caps_term(k, 0.0)).collect();
        let track: Vec<Cell> = (0..6).map(|k| (20 + 30 * k, 20)).collect();
        let lim = detect_limit_manifold(&grids, &track, 8.0, 0.05).unwrap();
        for (k, r) in lim.c0_residuals.iter().enumerate() {
            let (a, b) = (1.0 / (k + 1) as f64, 1.0 / (k + 2) as f64);
            assert!((r - (a - b)).abs() < 1e-12, "k = {k}: {r}");
        }
        assert!(matches!(
            detect_limit_manifold(&grids, &track, 8.0, 1e-6),
            Err(Error::LimitNotCauchy { .. })
        ));
    }

    #[test]
    fn piece_count_arithmetic() {
        assert!(check_piece_count_bound(2, 18.0, 10.0, None).unwrap().passes);
        assert!(!check_piece_count_bound(3, 18.0, 10.0, None).unwrap().passes);
        let r = check_piece_count_bound(3, 25.0, 10.0, Some(&[10.0, 10.0, 5.0])).unwrap();
        assert_eq!(r.bound, 3);
        assert_eq!(r.chain_holds, Some(true));
    }

    fn curve(vals: &[f64]) -> ProfileCurve {
        ProfileCurve {
            points: vals
                .iter()
                .enumerate()
                .map(|(m, &i)| ProfilePoint {
                    v: m as f64,
                    i_v: i,
                    achiever: None,
                    method: ProfileMethod::Oracle,
                    achieved: true,
                    volume_error: 0.0,
                })
                .collect(),
            grid_id: GridId(0),
            stencil: StencilKind::Cut4,
        }
    }

    #[test]
    fn union_profile_min_plus() {
        let base = curve(&[0.0, 4.0, 6.0, 8.0]);
        let same = profile_union_equality(&base, std::slice::from_ref(&base), 1.0, 3, 0.0).unwrap();
        assert!(same.passes);
        assert_eq!(same.points[0].union, 0.0);
        let cheaper = curve(&[0.0, 1.0, 9.0, 9.0]);
        let r = profile_union_equality(&base, &[cheaper], 1.0, 3, 0.06).unwrap();
        assert_eq!(r.points[2].union, 5.0);
        assert_eq!(r.points[2].split, vec![1.0, 1.0]);
        assert!(!r.passes);
    }

    #[test]
    fn eps_isometry() {
        let a = caps_term(0, 0.5);
        let pairs = [((2, 2), (30, 30)), ((10, 20), (25, 21))];
        assert!(check_eps_isometry(Some, &a, &a, 0.0, &pairs).unwrap().holds);
        let flat = ConformalGrid::flat(40, 40, 1.0, BoundaryMode::Open).unwrap();
        let through = [((10, 20), (30, 20))];
        let r = check_eps_isometry(Some, &flat, &a, 0.01, &through).unwrap();
        assert!(!r.holds);
        assert!(r.max_distortion > 0.01);
    }
}
