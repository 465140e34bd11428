//! Sequence generators used by scenarios, tests and examples.
//!
//! Every generator is deterministic given its parameters (and seed, where it
//! takes one). Grids may grow with the index so that clusters can drift apart
//! without touching a wall.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concentration::{term_from_fn, SetSequence};
use crate::error::{Error, Result};
use crate::manifold::{build_plane_with_caps, BoundaryMode, Cap, CapSpec, Cell, ConformalGrid};
use crate::perimeter::{perimeter, IndicatorSet, PerimeterStencil};

/// A generated sequence plus facts the generator knows by construction.
#[derive(Debug, Clone)]
pub struct Generated {
    pub sequence: SetSequence,
    /// Volume one cap absorbs, for generators built on cap disks.
    pub cap_capacity: Option<f64>,
    /// Number of clusters placed, before any dust.
    pub clusters: usize,
    /// True when every term has the same volume.
    pub constant_volume: bool,
}

/// Volume and perimeter bounds taken as the maxima over the terms.
pub fn bounded_sequence(
    terms: Vec<IndicatorSet>,
    origins: Vec<Cell>,
    stencil: &PerimeterStencil,
) -> Result<SetSequence> {
    let v = terms.iter().map(IndicatorSet::volume).fold(0.0, f64::max);
    let a = terms.iter().map(|t| perimeter(t, stencil)).fold(0.0, f64::max);
    SetSequence::with_origins(terms, origins, v, a, stencil.clone())
}

fn same_volume(terms: &[IndicatorSet]) -> bool {
    terms.windows(2).all(|w| w[0].volume() == w[1].volume())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticBlock {
    pub terms: usize,
    pub side: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for StaticBlock {
    fn default() -> Self {
        Self {
            terms: 6,
            side: 3,
            width: 40,
            height: 40,
        }
    }
}

pub fn static_block(p: &StaticBlock, h: f64, stencil: &PerimeterStencil) -> Result<Generated> {
    let grid = Arc::new(ConformalGrid::flat(p.width, p.height, h, BoundaryMode::Open)?);
    let origin = (
        (p.width - p.side.min(p.width)) / 2,
        (p.height - p.side.min(p.height)) / 2,
    );
    let block = IndicatorSet::block(&grid, origin, p.side, p.side)?;
    let center = (p.width / 2, p.height / 2);
    let terms = vec![block; p.terms.max(1)];
    Ok(Generated {
        sequence: bounded_sequence(terms, vec![center; p.terms.max(1)], stencil)?,
        cap_capacity: None,
        clusters: 1,
        constant_volume: true,
    })
}

/// `count` square blocks on rays at angles `2 pi i / count` from the grid
/// center, at distance `gap + drift k` for term `k`. The grid grows so each
/// block keeps `margin` cells to the wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergingBlocks {
    pub terms: usize,
    pub count: usize,
    pub side: usize,
    pub gap: usize,
    pub drift: usize,
    pub margin: usize,
}

impl Default for DivergingBlocks {
    fn default() -> Self {
        Self {
            terms: 8,
            count: 2,
            side: 3,
            gap: 12,
            drift: 3,
            margin: 12,
        }
    }
}

pub fn diverging_blocks(p: &DivergingBlocks, h: f64, stencil: &PerimeterStencil) -> Result<Generated> {
    if p.count == 0 || p.side == 0 {
        return Err(Error::InvalidArgument("count and side must be >= 1".into()));
    }
    let mut terms = Vec::new();
    let mut origins = Vec::new();
    for k in 0..p.terms.max(1) {
        let d = p.gap + p.drift * k;
        let half = d + p.side + p.margin + 1;
        let grid = Arc::new(ConformalGrid::flat(2 * half, 2 * half, h, BoundaryMode::Open)?);
        let mut set = IndicatorSet::empty(&grid);
        for i in 0..p.count {
            let theta = 2.0 * PI * i as f64 / p.count as f64;
            let x = half as f64 + d as f64 * theta.cos() - p.side as f64 / 2.0;
            let y = half as f64 + d as f64 * theta.sin() - p.side as f64 / 2.0;
            let block = IndicatorSet::block(&grid, (x.round() as usize, y.round() as usize), p.side, p.side)?;
            set = set.union(&block)?;
        }
        terms.push(set);
        origins.push((half, half));
    }
    Ok(Generated {
        constant_volume: same_volume(&terms),
        sequence: bounded_sequence(terms, origins, stencil)?,
        cap_capacity: None,
        clusters: p.count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapDecay {
    /// Every cap has the same amplitude.
    Constant,
    /// Amplitude of cap `m` is `a 2^-m`.
    Geometric,
    /// Amplitude of cap `m` is `a / (m + 1)`.
    Harmonic,
}

impl CapDecay {
    pub fn amplitude(&self, a: f64, m: usize) -> f64 {
        match self {
            CapDecay::Constant => a,
            CapDecay::Geometric => a * 0.5f64.powi(m as i32),
            CapDecay::Harmonic => a / (m + 1) as f64,
        }
    }
}

/// Caps along a horizontal line, `spacing` apart; term `k` carries a disk
/// riding cap `k` and optionally a static block near the left wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapsFamily {
    pub terms: usize,
    pub spacing: usize,
    pub amplitude: f64,
    pub cap_radius: f64,
    pub rider_radius: f64,
    pub decay: CapDecay,
    /// Side of the static block; `0` for none.
    pub base_block: usize,
    pub margin: usize,
    pub height: usize,
}

impl Default for CapsFamily {
    fn default() -> Self {
        Self {
            terms: 8,
            spacing: 40,
            amplitude: 0.5,
            cap_radius: 4.0,
            rider_radius: 2.5,
            decay: CapDecay::Constant,
            base_block: 3,
            margin: 24,
            height: 56,
        }
    }
}

impl CapsFamily {
    /// Vertex address of cap `m`.
    pub fn cap_center(&self, m: usize) -> Cell {
        (self.margin + self.spacing * (m + 1), self.height / 2)
    }

    pub fn grid(&self, k: usize, h: f64) -> Result<ConformalGrid> {
        let caps = (0..=k)
            .map(|m| Cap {
                center: self.cap_center(m),
                amplitude: self.decay.amplitude(self.amplitude, m),
                radius: self.cap_radius,
            })
            .collect();
        let width = self.margin + self.spacing * (k + 1) + self.spacing / 2;
        build_plane_with_caps(width, self.height, h, BoundaryMode::Open, &CapSpec::new(caps))
    }
}

pub fn caps_family(p: &CapsFamily, h: f64, stencil: &PerimeterStencil) -> Result<Generated> {
    let mut terms = Vec::new();
    let mut origins = Vec::new();
    let base_origin = (p.margin, p.height / 2 - p.base_block / 2);
    for k in 0..p.terms.max(1) {
        let grid = Arc::new(p.grid(k, h)?);
        let (cx, cy) = p.cap_center(k);
        let mut set = IndicatorSet::digital_disk(&grid, (cx as f64 - 0.5, cy as f64 - 0.5), p.rider_radius * h);
        if p.base_block > 0 {
            set = set.union(&IndicatorSet::block(&grid, base_origin, p.base_block, p.base_block)?)?;
        }
        terms.push(set);
        origins.push((p.margin, p.height / 2));
    }
    Ok(Generated {
        constant_volume: same_volume(&terms),
        sequence: bounded_sequence(terms, origins, stencil)?,
        cap_capacity: None,
        clusters: 1 + usize::from(p.base_block > 0),
    })
}

/// `full + 1` caps whose spacing grows with the index. Caps `0..full` carry
/// their whole cap disk (the cells whose centers lie inside the support),
/// cap `full` carries the innermost `fraction` of its disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapsSharpness {
    pub terms: usize,
    pub full: usize,
    pub fraction: f64,
    pub amplitude: f64,
    pub cap_radius: f64,
    pub spacing: usize,
    pub spacing_growth: usize,
    pub margin: usize,
}

impl Default for CapsSharpness {
    fn default() -> Self {
        Self {
            terms: 6,
            full: 2,
            fraction: 0.5,
            amplitude: 1.0,
            cap_radius: 4.0,
            spacing: 48,
            spacing_growth: 8,
            margin: 24,
        }
    }
}

/// Cells of a cap disk ordered by distance to the cap vertex, then index.
fn cap_disk(grid: &ConformalGrid, center: Cell, radius: f64) -> Vec<usize> {
    let (vx, vy) = (center.0 as f64, center.1 as f64);
    let h = grid.h();
    let mut cells: Vec<(f64, usize)> = (0..grid.cell_count())
        .filter_map(|i| {
            let (x, y) = grid.cell_at(i);
            let d = ((x as f64 + 0.5 - vx).powi(2) + (y as f64 + 0.5 - vy).powi(2)).sqrt() * h;
            (d < radius).then_some((d, i))
        })
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cells.into_iter().map(|(_, i)| i).collect()
}

pub fn caps_sharpness(p: &CapsSharpness, h: f64, stencil: &PerimeterStencil) -> Result<Generated> {
    if !(0.0..1.0).contains(&p.fraction) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in [0, 1), got {}",
            p.fraction
        )));
    }
    let height = 2 * p.margin + 2 * p.cap_radius.ceil() as usize;
    let mut terms = Vec::new();
    let mut origins = Vec::new();
    let mut capacity = None;
    for k in 0..p.terms.max(1) {
        let spacing = p.spacing + p.spacing_growth * k;
        let centers: Vec<Cell> = (0..=p.full).map(|m| (p.margin + m * spacing, height / 2)).collect();
        let caps = centers
            .iter()
            .map(|&center| Cap {
                center,
                amplitude: p.amplitude,
                radius: p.cap_radius,
            })
            .collect();
        let width = 2 * p.margin + p.full * spacing;
        let grid = Arc::new(build_plane_with_caps(
            width,
            height,
            h,
            BoundaryMode::Open,
            &CapSpec::new(caps),
        )?);
        let mut cells = Vec::new();
        for (m, &c) in centers.iter().enumerate() {
            let disk = cap_disk(&grid, c, p.cap_radius);
            if m == 0 {
                let full = IndicatorSet::from_indices(&grid, disk.iter().copied())?;
                capacity.get_or_insert(full.volume());
            }
            let take = if m < p.full {
                disk.len()
            } else {
                (p.fraction * disk.len() as f64).round() as usize
            };
            cells.extend_from_slice(&disk[..take]);
        }
        terms.push(IndicatorSet::from_indices(&grid, cells)?);
        origins.push(centers[0]);
    }
    Ok(Generated {
        constant_volume: same_volume(&terms),
        sequence: bounded_sequence(terms, origins, stencil)?,
        cap_capacity: capacity,
        clusters: p.full + usize::from(p.fraction > 0.0),
    })
}

/// Random blobs drifting at random velocities, with optional dust: a single
/// cell of volume `2^-j h^2` inside a shallow well at term `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomClusters {
    pub terms: usize,
    pub min_clusters: usize,
    pub max_clusters: usize,
    /// Largest drift speed in cells per index.
    pub max_drift: f64,
    /// Blob cells lie within this lattice radius of the blob seed.
    pub blob_radius: f64,
    pub dust: bool,
}

impl Default for RandomClusters {
    fn default() -> Self {
        Self {
            terms: 8,
            min_clusters: 1,
            max_clusters: 5,
            max_drift: 2.0,
            blob_radius: 2.0,
            dust: false,
        }
    }
}

fn random_blob(rng: &mut ChaCha8Rng, radius: f64) -> Vec<(i64, i64)> {
    let r = radius.floor() as i64;
    let disk: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| (x, y)))
        .filter(|&(x, y)| ((x * x + y * y) as f64) <= radius * radius)
        .collect();
    let target = rng.gen_range(disk.len().min(5)..=disk.len());
    let mut blob = vec![(0i64, 0i64)];
    while blob.len() < target {
        let frontier: Vec<(i64, i64)> = disk
            .iter()
            .copied()
            .filter(|c| !blob.contains(c))
            .filter(|&(x, y)| blob.iter().any(|&(bx, by)| (bx - x).abs() + (by - y).abs() == 1))
            .collect();
        blob.push(frontier[rng.gen_range(0..frontier.len())]);
    }
    blob.sort_unstable();
    blob
}

const CLUSTER_SPACING: f64 = 90.0;
const WELL_SIDE: usize = 3;

pub fn random_clusters(p: &RandomClusters, h: f64, stencil: &PerimeterStencil, seed: u64) -> Result<Generated> {
    if p.min_clusters == 0 || p.max_clusters < p.min_clusters {
        return Err(Error::InvalidArgument("need 1 <= min_clusters <= max_clusters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(p.min_clusters..=p.max_clusters);
    let travel = p.max_drift * p.terms as f64;
    let margin = (travel + p.blob_radius).ceil() as usize + 12;
    let width = (CLUSTER_SPACING as usize) * n + 2 * margin;
    let height = 2 * margin + 40;
    let mut clusters = Vec::new();
    for c in 0..n {
        let blob = random_blob(&mut rng, p.blob_radius);
        let speed = rng.gen_range(0.0..=p.max_drift);
        let angle = rng.gen_range(0.0..2.0 * PI);
        let start = (margin as f64 + CLUSTER_SPACING * (c as f64 + 0.5), margin as f64 + 10.0);
        clusters.push((blob, start, (speed * angle.cos(), speed * angle.sin())));
    }
    let well = (margin / 2 - 1, height - margin / 2 - WELL_SIDE);
    let mut terms = Vec::new();
    for j in 0..p.terms.max(1) {
        let depth = 0.5f64.powf(j as f64 / 2.0);
        let grid = if p.dust {
            ConformalGrid::from_fn(width, height, h, BoundaryMode::Open, |x, y| {
                let inside = (well.0..=well.0 + WELL_SIDE).contains(&x) && (well.1..=well.1 + WELL_SIDE).contains(&y);
                if inside {
                    depth
                } else {
                    1.0
                }
            })?
        } else {
            ConformalGrid::flat(width, height, h, BoundaryMode::Open)?
        };
        let grid = Arc::new(grid);
        let mut cells: Vec<Cell> = Vec::new();
        for (blob, start, vel) in &clusters {
            let cx = (start.0 + vel.0 * j as f64).round() as i64;
            let cy = (start.1 + vel.1 * j as f64).round() as i64;
            cells.extend(blob.iter().map(|&(dx, dy)| ((cx + dx) as usize, (cy + dy) as usize)));
        }
        if p.dust {
            cells.push((well.0 + 1, well.1 + 1));
        }
        terms.push(IndicatorSet::from_cells(&grid, cells)?);
    }
    let origins = vec![(width / 2, height / 2); terms.len()];
    Ok(Generated {
        constant_volume: same_volume(&terms),
        sequence: bounded_sequence(terms, origins, stencil)?,
        cap_capacity: None,
        clusters: n,
    })
}

/// Separate-seed corpus of `count` random sequences; every third carries dust.
pub fn random_corpus(count: usize, seed: u64, stencil: &PerimeterStencil) -> Result<Vec<Generated>> {
    (0..count)
        .map(|i| {
            let p = RandomClusters {
                dust: i % 3 == 2,
                ..RandomClusters::default()
            };
            random_clusters(&p, 1.0, stencil, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
        })
        .collect()
}

/// Term built from an explicit cell predicate on a fresh flat grid.
pub fn flat_term(width: usize, height: usize, h: f64, f: impl Fn(Cell) -> bool) -> Result<IndicatorSet> {
    let grid = Arc::new(ConformalGrid::flat(width, height, h, BoundaryMode::Open)?);
    Ok(term_from_fn(&grid, f))
}
