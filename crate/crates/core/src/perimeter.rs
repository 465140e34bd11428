//! Finite perimeter sets on a [`ConformalGrid`].
//!
//! Perimeter is a weighted graph cut: every unordered cell pair `(c, c + e)`
//! with exactly one member inside the set contributes
//! `phi_mid * h * w_e`, where `phi_mid` is the mean of the two cell factors
//! and `w_e` the stencil weight of offset `e`. On open grids a pair whose
//! partner falls off the lattice counts as cut (the wall is not part of the
//! manifold interior).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Cell, ConformalGrid, GridId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StencilKind {
    Cut4,
    Cut8,
    Crofton16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerimeterStencil {
    kind: StencilKind,
    /// One representative per undirected offset.
    offsets: Vec<(i64, i64, f64)>,
}

const CROFTON16_DIRS: [(i64, i64); 8] = [(1, 0), (2, 1), (1, 1), (1, 2), (0, 1), (-1, 2), (-1, 1), (-2, 1)];

/// Cauchy-Crofton weights `dtheta_k / (2 |e_k|)` with `dtheta_k` the centered
/// angular gap between neighboring directions (directions sorted in `[0, pi)`).
fn crofton_weights(dirs: &[(i64, i64)]) -> Vec<f64> {
    let angles: Vec<f64> = dirs.iter().map(|&(x, y)| (y as f64).atan2(x as f64)).collect();
    let n = dirs.len();
    (0..n)
        .map(|k| {
            let prev = if k == 0 { angles[n - 1] - PI } else { angles[k - 1] };
            let next = if k == n - 1 { angles[0] + PI } else { angles[k + 1] };
            let gap = 0.5 * (next - prev);
            let (x, y) = dirs[k];
            gap / (2.0 * ((x * x + y * y) as f64).sqrt())
        })
        .collect()
}

/// Measured length per unit length of an infinite straight edge with unit
/// normal at angle `theta`.
fn straight_edge_ratio(offsets: &[(i64, i64, f64)], theta: f64) -> f64 {
    let (nx, ny) = (theta.cos(), theta.sin());
    offsets
        .iter()
        .map(|&(dx, dy, w)| w * (dx as f64 * nx + dy as f64 * ny).abs())
        .sum()
}

const ORIENTATION_SAMPLES: usize = 3600;

fn orientation_extremes(offsets: &[(i64, i64, f64)]) -> (f64, f64) {
    (0..ORIENTATION_SAMPLES)
        .map(|i| straight_edge_ratio(offsets, PI * i as f64 / ORIENTATION_SAMPLES as f64))
        .fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// Scale that centers the crofton16 orientation response on 1.
fn crofton16_calibration() -> f64 {
    static CAL: OnceLock<f64> = OnceLock::new();
    *CAL.get_or_init(|| {
        let raw: Vec<(i64, i64, f64)> = CROFTON16_DIRS
            .iter()
            .zip(crofton_weights(&CROFTON16_DIRS))
            .map(|(&(x, y), w)| (x, y, w))
            .collect();
        let (lo, hi) = orientation_extremes(&raw);
        2.0 / (lo + hi)
    })
}

impl PerimeterStencil {
    /// Plain edge count: every cut face has weight 1.
    pub fn cut4() -> Self {
        Self {
            kind: StencilKind::Cut4,
            offsets: vec![(1, 0, 1.0), (0, 1, 1.0)],
        }
    }

    /// 8-neighborhood Crofton weights.
    pub fn cut8() -> Self {
        let dirs = [(1, 0), (1, 1), (0, 1), (-1, 1)];
        let offsets = dirs
            .iter()
            .zip(crofton_weights(&dirs))
            .map(|(&(x, y), w)| (x, y, w))
            .collect();
        Self {
            kind: StencilKind::Cut8,
            offsets,
        }
    }

    /// 16-neighborhood Crofton weights, calibrated so straight edges of every
    /// orientation are measured within the stencil's anisotropy band.
    pub fn crofton16() -> Self {
        let cal = crofton16_calibration();
        let offsets = CROFTON16_DIRS
            .iter()
            .zip(crofton_weights(&CROFTON16_DIRS))
            .map(|(&(x, y), w)| (x, y, w * cal))
            .collect();
        Self {
            kind: StencilKind::Crofton16,
            offsets,
        }
    }

    pub fn from_kind(kind: StencilKind) -> Self {
        match kind {
            StencilKind::Cut4 => Self::cut4(),
            StencilKind::Cut8 => Self::cut8(),
            StencilKind::Crofton16 => Self::crofton16(),
        }
    }

    pub fn kind(&self) -> StencilKind {
        self.kind
    }

    pub fn offsets(&self) -> &[(i64, i64, f64)] {
        &self.offsets
    }

    /// Worst relative error of the straight-edge response over orientations.
    pub fn anisotropy(&self) -> f64 {
        let (lo, hi) = orientation_extremes(&self.offsets);
        (hi - 1.0).max(1.0 - lo)
    }

    /// Metric weight of every pair touching `idx`, in both directions.
    /// `None` marks a partner beyond an open wall.
    pub fn pairs<'a>(&'a self, grid: &'a ConformalGrid, idx: usize) -> impl Iterator<Item = (Option<usize>, f64)> + 'a {
        let here = grid.cell_phi(idx);
        let h = grid.h();
        self.offsets.iter().flat_map(move |&(dx, dy, w)| {
            [(dx, dy), (-dx, -dy)]
                .into_iter()
                .map(move |(ox, oy)| match grid.offset(idx, ox, oy) {
                    Some(n) => (Some(n), 0.5 * (here + grid.cell_phi(n)) * h * w),
                    None => (None, here * h * w),
                })
        })
    }

    /// Largest total pair weight around any single cell (the perimeter of a
    /// singleton).
    pub fn max_cell_perimeter(&self, grid: &ConformalGrid) -> f64 {
        (0..grid.cell_count())
            .map(|i| self.pairs(grid, i).map(|(_, w)| w).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl Default for PerimeterStencil {
    fn default() -> Self {
        Self::crofton16()
    }
}

/// A cell subset of one grid with its volume cached at construction.
#[derive(Debug, Clone)]
pub struct IndicatorSet {
    grid: Arc<ConformalGrid>,
    cells: Vec<bool>,
    volume: f64,
}

impl PartialEq for IndicatorSet {
    fn eq(&self, other: &Self) -> bool {
        self.grid.id() == other.grid.id() && self.cells == other.cells
    }
}

impl Eq for IndicatorSet {}

fn sum_volume(grid: &ConformalGrid, cells: &[bool]) -> f64 {
    cells
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| grid.volume_of(i))
        .fold(0.0, |a, b| a + b)
}

impl IndicatorSet {
    pub fn new(grid: &Arc<ConformalGrid>, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.cell_count() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for a grid of {} cells",
                cells.len(),
                grid.cell_count()
            )));
        }
        let volume = sum_volume(grid, &cells);
        Ok(Self {
            grid: Arc::clone(grid),
            cells,
            volume,
        })
    }

    pub fn empty(grid: &Arc<ConformalGrid>) -> Self {
        Self::new(grid, vec![false; grid.cell_count()]).expect("mask sized to grid")
    }

    pub fn full(grid: &Arc<ConformalGrid>) -> Self {
        Self::new(grid, vec![true; grid.cell_count()]).expect("mask sized to grid")
    }

    pub fn from_cells(grid: &Arc<ConformalGrid>, cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let mut mask = vec![false; grid.cell_count()];
        for c in cells {
            mask[grid.check_cell(c)?] = true;
        }
        Self::new(grid, mask)
    }

    pub fn from_indices(grid: &Arc<ConformalGrid>, idx: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = vec![false; grid.cell_count()];
        for i in idx {
            if i >= mask.len() {
                return Err(Error::InvalidArgument(format!("cell index {i} out of range")));
            }
            mask[i] = true;
        }
        Self::new(grid, mask)
    }

    /// Axis-aligned block of `w x hgt` cells with lower-left cell `origin`.
    pub fn block(grid: &Arc<ConformalGrid>, origin: Cell, w: usize, hgt: usize) -> Result<Self> {
        let cells = (0..hgt).flat_map(|dy| (0..w).map(move |dx| (origin.0 + dx, origin.1 + dy)));
        Self::from_cells(grid, cells)
    }

    /// Cells whose centers lie within Euclidean lattice distance `r` (in
    /// length units) of the point `center` (in cell-center coordinates).
    pub fn digital_disk(grid: &Arc<ConformalGrid>, center: (f64, f64), r: f64) -> Self {
        let h = grid.h();
        let mask = (0..grid.cell_count())
            .map(|i| {
                let (x, y) = grid.cell_at(i);
                let (dx, dy) = ((x as f64 - center.0) * h, (y as f64 - center.1) * h);
                dx * dx + dy * dy <= r * r
            })
            .collect();
        Self::new(grid, mask).expect("mask sized to grid")
    }

    pub fn grid(&self) -> &Arc<ConformalGrid> {
        &self.grid
    }

    pub fn grid_id(&self) -> GridId {
        self.grid.id()
    }

    pub fn mask(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.cells[idx]
    }

    pub fn contains_cell(&self, c: Cell) -> bool {
        c.0 < self.grid.width() && c.1 < self.grid.height() && self.cells[self.grid.index(c)]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&m| m)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// True when the cached volume equals a fresh summation.
    pub fn volume_is_consistent(&self) -> bool {
        self.volume == sum_volume(&self.grid, &self.cells)
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid.id() != other.grid.id() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.same_grid(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| f(a, b)).collect();
        Self::new(&self.grid, cells)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn symmetric_difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a != b)
    }

    pub fn complement(&self) -> Self {
        Self::new(&self.grid, self.cells.iter().map(|&m| !m).collect()).expect("same size")
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.grid.id() == other.grid.id() && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    /// Run-length rows: for each row, `[start, length]` of every run.
    pub fn run_lengths(&self) -> Vec<Vec<[usize; 2]>> {
        let w = self.grid.width();
        (0..self.grid.height())
            .map(|y| {
                let row = &self.cells[y * w..(y + 1) * w];
                let mut runs = Vec::new();
                let mut x = 0;
                while x < w {
                    if row[x] {
                        let start = x;
                        while x < w && row[x] {
                            x += 1;
                        }
                        runs.push([start, x - start]);
                    } else {
                        x += 1;
                    }
                }
                runs
            })
            .collect()
    }

    pub fn to_document(&self) -> SetDocument {
        SetDocument {
            grid_id: self.grid.id().to_string(),
            width: self.grid.width(),
            height: self.grid.height(),
            rows: self.run_lengths(),
        }
    }

    /// Compact serialization; also the ordering key for deterministic ties.
    pub fn serialized(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("set serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("set serializes")
    }

    pub fn from_document(grid: &Arc<ConformalGrid>, doc: &SetDocument) -> Result<Self> {
        if GridId::parse(&doc.grid_id)? != grid.id()
            || doc.width != grid.width()
            || doc.height != grid.height()
            || doc.rows.len() != grid.height()
        {
            return Err(Error::GridMismatch);
        }
        let w = grid.width();
        let mut mask = vec![false; grid.cell_count()];
        for (y, runs) in doc.rows.iter().enumerate() {
            for &[start, len] in runs {
                if start + len > w {
                    return Err(Error::Serialization(format!("run {start}+{len} overflows row {y}")));
                }
                mask[y * w + start..y * w + start + len].fill(true);
            }
        }
        Self::new(grid, mask)
    }

    pub fn from_json(grid: &Arc<ConformalGrid>, s: &str) -> Result<Self> {
        Self::from_document(grid, &serde_json::from_str(s)?)
    }

    /// Plain PGM (P2, maxval 1), one text row per grid row starting at `y = 0`.
    pub fn to_pgm(&self) -> String {
        let (w, h) = (self.grid.width(), self.grid.height());
        let mut out = format!("P2\n{w} {h}\n1\n");
        for y in 0..h {
            let row: Vec<&str> = (0..w).map(|x| if self.cells[y * w + x] { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetDocument {
    pub grid_id: String,
    pub width: usize,
    pub height: usize,
    pub rows: Vec<Vec<[usize; 2]>>,
}

pub fn volume(set: &IndicatorSet) -> f64 {
    set.volume()
}

pub fn perimeter(set: &IndicatorSet, stencil: &PerimeterStencil) -> f64 {
    let grid = set.grid();
    set.indices()
        .map(|i| {
            stencil
                .pairs(grid, i)
                .filter(|(n, _)| n.is_none_or(|n| !set.contains(n)))
                .map(|(_, w)| w)
                .sum::<f64>()
        })
        .fold(0.0, |a, b| a + b)
}

/// Perimeter counted only over cut pairs with at least one cell in `region`.
pub fn perimeter_in(set: &IndicatorSet, region: &IndicatorSet, stencil: &PerimeterStencil) -> Result<f64> {
    set.same_grid(region)?;
    let grid = set.grid();
    Ok(set
        .indices()
        .map(|i| {
            let inside_region = region.contains(i);
            stencil
                .pairs(grid, i)
                .filter(|(n, _)| match n {
                    None => inside_region,
                    Some(n) => !set.contains(*n) && (inside_region || region.contains(*n)),
                })
                .map(|(_, w)| w)
                .sum::<f64>()
        })
        .fold(0.0, |a, b| a + b))
}

pub fn l1_distance(a: &IndicatorSet, b: &IndicatorSet) -> Result<f64> {
    Ok(a.symmetric_difference(b)?.volume())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LscParams {
    /// The final L1 distance must not exceed this for the sequence to count
    /// as convergent.
    pub l1_tol: f64,
    /// Number of trailing terms over which the liminf is taken.
    pub tail: usize,
    pub perimeter_tol: f64,
}

impl Default for LscParams {
    fn default() -> Self {
        Self {
            l1_tol: 1e-9,
            tail: 3,
            perimeter_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LscReport {
    pub l1_distances: Vec<f64>,
    pub perimeters: Vec<f64>,
    pub limit_perimeter: f64,
    pub liminf: f64,
    /// `perimeter(limit) <= liminf + tol`.
    pub holds: bool,
    /// `perimeter(limit) < liminf - tol`: perimeter was lost in the limit.
    pub strict: bool,
}

/// Lower semicontinuity of perimeter along an L1-convergent sequence. The
/// liminf of a finite sequence is the minimum over its last `tail` terms.
pub fn check_lower_semicontinuity(
    sequence: &[IndicatorSet],
    limit: &IndicatorSet,
    stencil: &PerimeterStencil,
    params: LscParams,
) -> Result<LscReport> {
    if sequence.is_empty() {
        return Err(Error::Empty("sequence"));
    }
    let l1_distances = sequence
        .iter()
        .map(|s| l1_distance(s, limit))
        .collect::<Result<Vec<_>>>()?;
    let tail = params.tail.clamp(1, sequence.len());
    let tail_l1 = &l1_distances[sequence.len() - tail..];
    let last = *tail_l1.last().expect("nonempty");
    let monotone = tail_l1.windows(2).all(|w| w[1] <= w[0]);
    if last > params.l1_tol || !monotone {
        return Err(Error::NotL1Convergent { tail_distance: last });
    }
    let perimeters: Vec<f64> = sequence.iter().map(|s| perimeter(s, stencil)).collect();
    let liminf = perimeters[sequence.len() - tail..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let limit_perimeter = perimeter(limit, stencil);
    Ok(LscReport {
        l1_distances,
        perimeters,
        limit_perimeter,
        liminf,
        holds: limit_perimeter <= liminf + params.perimeter_tol,
        strict: limit_perimeter < liminf - params.perimeter_tol,
    })
}
