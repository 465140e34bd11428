//! Concentration-compactness decomposition of a sequence of sets with
//! bounded volume and perimeter.
//!
//! Each extraction step centers a ball at the point of largest captured
//! volume (at the working radius), grows the radius with the sequence index,
//! cuts at a radius whose sphere crosses little of the set, and subtracts the
//! ball. Iterating until the residual volume is negligible yields the pieces
//! `Omega_{ik}` with limit volumes `v_i` and perimeters `A_i`.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{BoundaryMode, Cell, ConformalGrid};
use crate::perimeter::{perimeter, IndicatorSet, PerimeterStencil, StencilKind};

/// Volume/perimeter bounds are checked with this relative slack so sums of
/// the same cells in a different order do not trip them.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SetSequence {
    terms: Vec<IndicatorSet>,
    /// Index of each term in the original sequence.
    labels: Vec<usize>,
    /// Base point of each term; pieces whose centers drift away from it are
    /// the diverging ones.
    origins: Vec<Cell>,
    volume_bound: f64,
    perimeter_bound: f64,
    stencil: PerimeterStencil,
}

impl SetSequence {
    /// Sequence with each term's origin at its grid center.
    pub fn new(
        terms: Vec<IndicatorSet>,
        volume_bound: f64,
        perimeter_bound: f64,
        stencil: PerimeterStencil,
    ) -> Result<Self> {
        let origins = terms
            .iter()
            .map(|t| (t.grid().width() / 2, t.grid().height() / 2))
            .collect();
        Self::with_origins(terms, origins, volume_bound, perimeter_bound, stencil)
    }

    pub fn with_origins(
        terms: Vec<IndicatorSet>,
        origins: Vec<Cell>,
        volume_bound: f64,
        perimeter_bound: f64,
        stencil: PerimeterStencil,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Empty("set sequence"));
        }
        if origins.len() != terms.len() {
            return Err(Error::CountMismatch(format!(
                "{} origins for {} terms",
                origins.len(),
                terms.len()
            )));
        }
        for (j, (t, &o)) in terms.iter().zip(&origins).enumerate() {
            t.grid().check_cell(o)?;
            let v = t.volume();
            if v > volume_bound * (1.0 + BOUND_SLACK) {
                return Err(Error::SequenceBounds {
                    index: j,
                    reason: format!("volume {v} exceeds bound {volume_bound}"),
                });
            }
            let p = perimeter(t, &stencil);
            if p > perimeter_bound * (1.0 + BOUND_SLACK) {
                return Err(Error::SequenceBounds {
                    index: j,
                    reason: format!("perimeter {p} exceeds bound {perimeter_bound}"),
                });
            }
        }
        Ok(Self {
            labels: (0..terms.len()).collect(),
            terms,
            origins,
            volume_bound,
            perimeter_bound,
            stencil,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[IndicatorSet] {
        &self.terms
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn origins(&self) -> &[Cell] {
        &self.origins
    }

    pub fn volume_bound(&self) -> f64 {
        self.volume_bound
    }

    pub fn perimeter_bound(&self) -> f64 {
        self.perimeter_bound
    }

    pub fn stencil(&self) -> &PerimeterStencil {
        &self.stencil
    }

    /// Terms at the given positions, keeping their original labels.
    pub fn subsequence(&self, positions: &[usize]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Empty("subsequence"));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(Error::InvalidArgument(format!("position {bad} out of range")));
        }
        Ok(Self {
            terms: positions.iter().map(|&p| self.terms[p].clone()).collect(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            origins: positions.iter().map(|&p| self.origins[p]).collect(),
            volume_bound: self.volume_bound,
            perimeter_bound: self.perimeter_bound,
            stencil: self.stencil.clone(),
        })
    }

    fn with_terms(&self, terms: Vec<IndicatorSet>) -> Self {
        Self {
            terms,
            labels: self.labels.clone(),
            origins: self.origins.clone(),
            volume_bound: self.volume_bound,
            perimeter_bound: self.perimeter_bound,
            stencil: self.stencil.clone(),
        }
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.terms.iter().map(IndicatorSet::volume).collect()
    }

    pub fn perimeters(&self) -> Vec<f64> {
        self.terms.iter().map(|t| perimeter(t, &self.stencil)).collect()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn volume_within(set: &IndicatorSet, center: usize, radius: f64) -> f64 {
    let grid = set.grid();
    let mut cells: Vec<usize> = grid
        .distances_within(center, radius)
        .into_iter()
        .map(|(i, _)| i)
        .filter(|&i| set.contains(i))
        .collect();
    cells.sort_unstable();
    cells.iter().map(|&i| grid.volume_of(i)).fold(0.0, |a, b| a + b)
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Center maximizing `V(set ∩ B(p, radius))`; ties go to the
/// lexicographically smallest `(x, y)`. `None` for an empty set.
pub fn best_center(set: &IndicatorSet, radius: f64) -> Option<(Cell, f64)> {
    if set.is_empty() {
        return None;
    }
    let grid = set.grid();
    let mut candidates: Vec<usize> = {
        let mut seen = HashSet::new();
        for i in set.indices() {
            for (c, _) in grid.distances_within(i, radius) {
                seen.insert(c);
            }
        }
        seen.into_iter().collect()
    };
    candidates.sort_unstable();
    let scored: Vec<(f64, Cell)> = candidates
        .par_iter()
        .map(|&c| (volume_within(set, c, radius), grid.cell_at(c)))
        .collect();
    let mut best = scored[0];
    for &(q, cell) in &scored[1..] {
        if nearly_equal(q, best.0) {
            if cell < best.1 {
                best = (q, cell);
            }
        } else if q > best.0 {
            best = (q, cell);
        }
    }
    Some((best.1, best.0))
}

/// `Q(R) = sup_p V(set ∩ B(p, R))` at each radius.
pub fn concentration_function(set: &IndicatorSet, radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("radii must be sorted ascending".into()));
    }
    Ok(radii
        .iter()
        .map(|&r| (r, best_center(set, r).map_or(0.0, |(_, q)| q)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoareaChoice {
    pub radius: f64,
    /// Weight of pairs joining `set ∩ B` to `set \ B`: the perimeter added by
    /// cutting at this radius.
    pub slack: f64,
}

/// Weight of pairs joining `set ∩ ball` to `set \ ball`.
pub fn crossing_weight(set: &IndicatorSet, ball: &[bool], stencil: &PerimeterStencil) -> f64 {
    let grid = set.grid();
    set.indices()
        .filter(|&i| ball[i])
        .flat_map(|i| stencil.pairs(grid, i))
        .filter(|&(n, _)| n.is_some_and(|n| set.contains(n) && !ball[n]))
        .map(|(_, w)| w)
        .fold(0.0, |a, b| a + b)
}

/// Smallest radius in `[r_lo, r_hi]` (among `r_lo` and the distance values in
/// that range) whose cut adds at most `budget` to the perimeter.
pub fn select_radius_coarea(
    set: &IndicatorSet,
    center: Cell,
    r_lo: f64,
    r_hi: f64,
    budget: f64,
    stencil: &PerimeterStencil,
) -> Result<CoareaChoice> {
    let grid = set.grid();
    let c = grid.check_cell(center)?;
    if !(r_lo >= 0.0 && r_hi - r_lo >= grid.h() * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "radius interval [{r_lo}, {r_hi}] is narrower than one shell"
        )));
    }
    if !(budget > 0.0) {
        return Err(Error::InvalidArgument(format!("budget must be > 0, got {budget}")));
    }
    let dist = grid.distances_within(c, r_hi);
    let mut radii = vec![r_lo];
    for &(_, d) in &dist {
        if d > r_lo && radii.last() != Some(&d) {
            radii.push(d);
        }
    }
    let mut ball = vec![false; grid.cell_count()];
    let mut filled = 0;
    let mut best = CoareaChoice {
        radius: r_lo,
        slack: f64::INFINITY,
    };
    let tol = |r: f64| r + 1e-12 * (1.0 + r);
    for &r in &radii {
        while filled < dist.len() && dist[filled].1 <= tol(r) {
            ball[dist[filled].0] = true;
            filled += 1;
        }
        let slack = crossing_weight(set, &ball, stencil);
        if slack <= budget {
            return Ok(CoareaChoice { radius: r, slack });
        }
        if slack < best.slack {
            best = CoareaChoice { radius: r, slack };
        }
    }
    Err(Error::CoareaBudget {
        r_lo,
        r_hi,
        budget,
        best_slack: best.slack,
        best_radius: best.radius,
    })
}

/// `c * vol^2 / (per^2 + 1)`.
pub fn nonevanescence_lower_bound(vol: f64, per: f64, c_cal: f64) -> f64 {
    c_cal * vol * vol / (per * per + 1.0)
}

/// Largest `c` with `Q(1) >= c * V^2 / (P^2 + 1)` on every nonempty set;
/// `None` if there are none.
pub fn calibrate_c_cal<'a>(
    sets: impl IntoIterator<Item = &'a IndicatorSet>,
    stencil: &PerimeterStencil,
) -> Option<f64> {
    sets.into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let q1 = best_center(s, 1.0).map_or(0.0, |(_, q)| q);
            let (v, p) = (s.volume(), perimeter(s, stencil));
            q1 * (p * p + 1.0) / (v * v)
        })
        .min_by(f64::total_cmp)
}

/// Most frequent set (ties: smallest serialized form) and where it occurs.
pub fn extract_constant_subsequence(sets: &[IndicatorSet]) -> Result<(IndicatorSet, Vec<usize>)> {
    let first = sets.first().ok_or(Error::Empty("set list"))?;
    if sets.iter().any(|s| s.grid_id() != first.grid_id()) {
        return Err(Error::GridMismatch);
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (j, s) in sets.iter().enumerate() {
        let key = s.serialized();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, idx)) => idx.push(j),
            None => groups.push((key, vec![j])),
        }
    }
    let (_, indices) = groups
        .into_iter()
        .min_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)))
        .expect("nonempty");
    Ok((sets[indices[0]].clone(), indices))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BudgetSchedule {
    /// `v / (j + 1)` at original index `j`.
    VolumeOverIndex,
    Constant {
        value: f64,
    },
}

impl BudgetSchedule {
    pub fn budget(&self, volume_bound: f64, label: usize) -> f64 {
        match *self {
            BudgetSchedule::VolumeOverIndex => volume_bound / (label + 1) as f64,
            BudgetSchedule::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeParams {
    /// Radius at which centers are chosen; `None` means `4h`.
    pub working_radius: Option<f64>,
    /// Number of trailing terms retained for limits.
    pub tail: usize,
    pub piece_cap: usize,
    /// `None` means `max(1e-6, 1e-3 * v)`.
    pub stop_threshold: Option<f64>,
    pub budget: BudgetSchedule,
    /// When set, every piece is audited against the non-evanescence floor.
    pub c_cal: Option<f64>,
    /// Reject terms whose cells come within two working radii of an open wall.
    pub wall_guard: bool,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            working_radius: None,
            tail: 5,
            piece_cap: 64,
            stop_threshold: None,
            budget: BudgetSchedule::VolumeOverIndex,
            c_cal: None,
            wall_guard: true,
        }
    }
}

impl DecomposeParams {
    pub fn working_radius_for(&self, grid: &ConformalGrid) -> f64 {
        self.working_radius.unwrap_or(4.0 * grid.h())
    }

    pub fn stop_threshold_for(&self, v: f64) -> f64 {
        self.stop_threshold.unwrap_or((1e-3 * v).max(1e-6))
    }
}

/// Radii `R'_k` over `n` retained terms: `R'_0 = r0`, `R'_{k+1} = R'_k + (k + 1) h`.
pub fn radius_schedule(r0: f64, h: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut r = r0;
    for k in 0..=n {
        out.push(r);
        r += (k + 1) as f64 * h;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    /// Original index of each retained term.
    pub labels: Vec<usize>,
    /// Ball center per term; `None` where the residual was already empty.
    pub centers: Vec<Option<Cell>>,
    pub radii: Vec<f64>,
    pub trace: Vec<IndicatorSet>,
    pub volumes: Vec<f64>,
    pub perimeters: Vec<f64>,
    /// Perimeter added by each cut.
    pub crossings: Vec<f64>,
    pub budgets: Vec<f64>,
    pub v_i: f64,
    pub a_i: f64,
    pub tail_std: f64,
    /// Tail means of the residual this piece was extracted from.
    pub residual_volume: f64,
    pub residual_perimeter: f64,
}

impl Piece {
    pub fn mean_crossing(&self) -> f64 {
        mean_std(&self.crossings).0
    }
}

fn check_wall_guard(seq: &SetSequence, working_radius: f64) -> Result<()> {
    for (t, &label) in seq.terms.iter().zip(&seq.labels) {
        let grid = t.grid();
        if grid.mode() != BoundaryMode::Open {
            continue;
        }
        let margin_cells = (2.0 * working_radius / grid.h()).ceil() as usize;
        if t.indices().any(|i| grid.wall_distance(i) < margin_cells) {
            return Err(Error::WallGuard {
                index: label,
                margin: 2.0 * working_radius,
            });
        }
    }
    Ok(())
}

/// One extraction step over every term of `seq`. Returns the piece and the
/// residual sequence `Omega_k \ B_k`.
pub fn extract_piece(seq: &SetSequence, params: &DecomposeParams) -> Result<(Piece, SetSequence)> {
    let volumes = seq.volumes();
    if volumes.iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("residual sequence has zero volume"));
    }
    let (residual_volume, _) = mean_std(&volumes);
    let (residual_perimeter, _) = mean_std(&seq.perimeters());
    let n = seq.len();
    let mut piece = Piece {
        labels: seq.labels.clone(),
        centers: Vec::with_capacity(n),
        radii: Vec::with_capacity(n),
        trace: Vec::with_capacity(n),
        volumes: Vec::with_capacity(n),
        perimeters: Vec::with_capacity(n),
        crossings: Vec::with_capacity(n),
        budgets: Vec::with_capacity(n),
        v_i: 0.0,
        a_i: 0.0,
        tail_std: 0.0,
        residual_volume,
        residual_perimeter,
    };
    let mut residual = Vec::with_capacity(n);
    for (k, (term, &label)) in seq.terms.iter().zip(&seq.labels).enumerate() {
        let grid = term.grid();
        let rw = params.working_radius_for(grid);
        let schedule = radius_schedule(rw, grid.h(), k + 1);
        let budget = params.budget.budget(seq.volume_bound, label);
        piece.budgets.push(budget);
        let Some((center, _)) = best_center(term, rw) else {
            piece.centers.push(None);
            piece.radii.push(schedule[k]);
            piece.trace.push(term.clone());
            piece.volumes.push(0.0);
            piece.perimeters.push(0.0);
            piece.crossings.push(0.0);
            residual.push(term.clone());
            continue;
        };
        let choice = select_radius_coarea(term, center, schedule[k], schedule[k + 1], budget, &seq.stencil)?;
        let ball = IndicatorSet::from_indices(grid, grid.metric_ball(center, choice.radius)?)?;
        let trace = term.intersection(&ball)?;
        residual.push(term.difference(&ball)?);
        piece.centers.push(Some(center));
        piece.radii.push(choice.radius);
        piece.volumes.push(trace.volume());
        piece.perimeters.push(perimeter(&trace, &seq.stencil));
        piece.crossings.push(choice.slack);
        piece.trace.push(trace);
    }
    let (v_i, tail_std) = mean_std(&piece.volumes);
    piece.v_i = v_i;
    piece.tail_std = tail_std;
    piece.a_i = mean_std(&piece.perimeters).0;
    Ok((piece, seq.with_terms(residual)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub pieces: Vec<Piece>,
    pub leftover: Vec<IndicatorSet>,
    pub v_bar: f64,
    pub a_bar: f64,
    /// Bound on `A_bar - A`: twice the summed mean crossing weight, since each
    /// cut adds its crossing to both sides.
    pub slack: f64,
    pub subsequence: Vec<usize>,
    pub incomplete: bool,
    pub stop_threshold: f64,
    pub leftover_volume: f64,
    pub c_cal: Option<f64>,
}

impl Decomposition {
    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn report(&self, seq: &SetSequence) -> DecompositionReport {
        DecompositionReport {
            pieces: self
                .pieces
                .iter()
                .map(|p| PieceReport {
                    v_i: p.v_i,
                    a_i: p.a_i,
                    tail_std: p.tail_std,
                    centers: p.centers.iter().map(|c| c.map(|(x, y)| [x, y])).collect(),
                    radii: p.radii.clone(),
                    crossing: p.mean_crossing(),
                    nonevanescence_floor: self
                        .c_cal
                        .map(|c| nonevanescence_lower_bound(p.residual_volume, p.residual_perimeter, c)),
                })
                .collect(),
            v_bar: self.v_bar,
            a_bar: self.a_bar,
            slack: self.slack,
            subsequence: self.subsequence.clone(),
            incomplete_flag: self.incomplete,
            stop_threshold: self.stop_threshold,
            leftover_volume: self.leftover_volume,
            volume_bound: seq.volume_bound,
            perimeter_bound: seq.perimeter_bound,
            stencil: seq.stencil.kind(),
            c_cal: self.c_cal,
            c_cal_source: self.c_cal.map(|_| "calibrated on the generated corpus".to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceReport {
    pub v_i: f64,
    pub a_i: f64,
    pub tail_std: f64,
    pub centers: Vec<Option<[usize; 2]>>,
    pub radii: Vec<f64>,
    pub crossing: f64,
    pub nonevanescence_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub pieces: Vec<PieceReport>,
    pub v_bar: f64,
    pub a_bar: f64,
    pub slack: f64,
    pub subsequence: Vec<usize>,
    pub incomplete_flag: bool,
    pub stop_threshold: f64,
    pub leftover_volume: f64,
    pub volume_bound: f64,
    pub perimeter_bound: f64,
    pub stencil: StencilKind,
    pub c_cal: Option<f64>,
    pub c_cal_source: Option<String>,
}

/// Retained positions: the last `tail` terms.
pub fn tail_positions(len: usize, tail: usize) -> Vec<usize> {
    (len.saturating_sub(tail.max(1))..len).collect()
}

/// Greedy extraction over the retained tail until the residual tail-mean
/// volume drops below the stop threshold or the piece cap is reached.
pub fn decompose(seq: &SetSequence, params: &DecomposeParams) -> Result<Decomposition> {
    if params.tail == 0 || params.piece_cap == 0 {
        return Err(Error::InvalidArgument("tail and piece_cap must be >= 1".into()));
    }
    let positions = tail_positions(seq.len(), params.tail);
    let mut current = seq.subsequence(&positions)?;
    if params.wall_guard {
        let rw = params.working_radius_for(current.terms[0].grid());
        check_wall_guard(&current, rw)?;
    }
    let threshold = params.stop_threshold_for(seq.volume_bound);
    let mut pieces: Vec<Piece> = Vec::new();
    let mut incomplete = false;
    loop {
        let (left, _) = mean_std(&current.volumes());
        if left < threshold {
            break;
        }
        if pieces.len() == params.piece_cap {
            incomplete = true;
            break;
        }
        let (piece, next) = extract_piece(&current, params)?;
        if let Some(c) = params.c_cal {
            let floor = nonevanescence_lower_bound(piece.residual_volume, piece.residual_perimeter, c);
            if piece.v_i < floor {
                return Err(Error::Evanescence {
                    piece: pieces.len(),
                    captured: piece.v_i,
                    floor,
                });
            }
        }
        pieces.push(piece);
        current = next;
    }
    let v_bar = pieces.iter().map(|p| p.v_i).sum();
    let a_bar = pieces.iter().map(|p| p.a_i).sum();
    let slack = 2.0 * pieces.iter().map(Piece::mean_crossing).sum::<f64>();
    let leftover_volume = mean_std(&current.volumes()).0;
    Ok(Decomposition {
        pieces,
        leftover: current.terms,
        v_bar,
        a_bar,
        slack,
        subsequence: current.labels,
        incomplete,
        stop_threshold: threshold,
        leftover_volume,
        c_cal: params.c_cal,
    })
}

/// Checks that, at every retained index, the traces and the leftover are
/// pairwise disjoint and union to the original term. Returns the largest
/// volume defect `|V(Omega_k) - sum V(pieces) - V(leftover)|`.
pub fn audit_partition(seq: &SetSequence, dec: &Decomposition) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, &label) in dec.subsequence.iter().enumerate() {
        let original = &seq.terms[label];
        let grid = original.grid();
        let mut covered = vec![false; grid.cell_count()];
        let parts = dec.pieces.iter().map(|p| &p.trace[k]).chain([&dec.leftover[k]]);
        let mut volume_sum = 0.0;
        for part in parts {
            if part.grid_id() != original.grid_id() {
                return Err(Error::GridMismatch);
            }
            for i in part.indices() {
                if covered[i] {
                    return Err(Error::CountMismatch(format!("cell {i} covered twice at index {label}")));
                }
                covered[i] = true;
            }
            volume_sum += part.volume();
        }
        if covered.as_slice() != original.mask() {
            return Err(Error::CountMismatch(format!("parts do not cover term {label}")));
        }
        worst = worst.max((original.volume() - volume_sum).abs());
    }
    Ok(worst)
}

/// Builds a term on its own grid from a closure over cells; convenience for
/// generators and tests.
pub fn term_from_fn(grid: &Arc<ConformalGrid>, f: impl Fn(Cell) -> bool) -> IndicatorSet {
    let cells = (0..grid.cell_count()).map(|i| f(grid.cell_at(i))).collect();
    IndicatorSet::new(grid, cells).expect("mask sized to grid")
}
