//! Discrete 2-D Riemannian manifolds with conformal metric `g = phi^2 * flat`.
//!
//! A [`ConformalGrid`] is a `width x height` lattice of square cells of side
//! `h`. The conformal factor `phi` is sampled at the `(width + 1) x (height + 1)`
//! vertices; each cell carries the mean of its four corners. Distances are
//! shortest paths on the 8-neighbor graph of cell centers, so a "point" of the
//! manifold is always a cell address `(x, y)`.
//!
//! In periodic mode the last vertex column/row duplicates the first one and
//! every neighbor lookup wraps.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell (or vertex) address `(x, y)`; `x` runs along the width.
pub type Cell = (usize, usize);

/// 8-neighborhood offsets used by the distance graph.
pub(crate) const NEIGHBORS8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Open,
    Periodic,
}

/// Content-derived identity of a grid. Two grids with identical dimensions,
/// spacing, mode and conformal factor share an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridId(pub u64);

impl fmt::Display for GridId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl GridId {
    pub fn parse(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(GridId)
            .map_err(|e| Error::Serialization(format!("bad grid id {s:?}: {e}")))
    }
}

// FNV-1a over the grid's defining bytes.
fn content_hash(width: usize, height: usize, h: f64, mode: BoundaryMode, phi: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&(width as u64).to_le_bytes());
    feed(&(height as u64).to_le_bytes());
    feed(&h.to_bits().to_le_bytes());
    feed(&[matches!(mode, BoundaryMode::Periodic) as u8]);
    for v in phi {
        feed(&v.to_bits().to_le_bytes());
    }
    hash
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalGrid {
    width: usize,
    height: usize,
    h: f64,
    mode: BoundaryMode,
    phi: Vec<f64>,
    cell_phi: Vec<f64>,
    id: GridId,
}

/// On-disk form of a grid. `phi` is row-major over vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDocument {
    pub width: usize,
    pub height: usize,
    pub h: f64,
    pub boundary_mode: BoundaryMode,
    pub phi: Vec<f64>,
}

impl ConformalGrid {
    pub fn new(width: usize, height: usize, h: f64, mode: BoundaryMode, phi: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGrid(format!(
                "width and height must be >= 2, got {width}x{height}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("h must be positive, got {h}")));
        }
        let expected = (width + 1) * (height + 1);
        if phi.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "phi has {} samples, expected {expected}",
                phi.len()
            )));
        }
        if let Some(bad) = phi.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "phi must be positive at every vertex; vertex {bad} has {}",
                phi[bad]
            )));
        }
        if mode == BoundaryMode::Periodic {
            let stride = width + 1;
            for y in 0..=height {
                if phi[y * stride] != phi[y * stride + width] {
                    return Err(Error::InvalidGrid(format!("periodic phi does not wrap at row {y}")));
                }
            }
            for x in 0..=width {
                if phi[x] != phi[height * stride + x] {
                    return Err(Error::InvalidGrid(format!("periodic phi does not wrap at column {x}")));
                }
            }
        }
        let stride = width + 1;
        let mut cell_phi = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let s = phi[y * stride + x]
                    + phi[y * stride + x + 1]
                    + phi[(y + 1) * stride + x]
                    + phi[(y + 1) * stride + x + 1];
                cell_phi.push(s / 4.0);
            }
        }
        let id = GridId(content_hash(width, height, h, mode, &phi));
        Ok(Self {
            width,
            height,
            h,
            mode,
            phi,
            cell_phi,
            id,
        })
    }

    pub fn flat(width: usize, height: usize, h: f64, mode: BoundaryMode) -> Result<Self> {
        Self::new(width, height, h, mode, vec![1.0; (width + 1) * (height + 1)])
    }

    /// Samples `phi` from a function of the vertex address.
    pub fn from_fn(
        width: usize,
        height: usize,
        h: f64,
        mode: BoundaryMode,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut phi = Vec::with_capacity((width + 1) * (height + 1));
        for y in 0..=height {
            for x in 0..=width {
                phi.push(f(x, y));
            }
        }
        Self::new(width, height, h, mode, phi)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn id(&self) -> GridId {
        self.id
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn vertex_phi(&self, v: Cell) -> Result<f64> {
        if v.0 > self.width || v.1 > self.height {
            return Err(self.out_of_range("vertex", v.0 as i64, v.1 as i64));
        }
        Ok(self.phi[v.1 * (self.width + 1) + v.0])
    }

    pub(crate) fn vphi(&self, x: usize, y: usize) -> f64 {
        self.phi[y * (self.width + 1) + x]
    }

    fn out_of_range(&self, what: &'static str, x: i64, y: i64) -> Error {
        Error::OutOfRange {
            what,
            x,
            y,
            width: self.width,
            height: self.height,
        }
    }

    pub fn check_cell(&self, c: Cell) -> Result<usize> {
        if c.0 >= self.width || c.1 >= self.height {
            return Err(self.out_of_range("cell", c.0 as i64, c.1 as i64));
        }
        Ok(self.index(c))
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    #[inline]
    pub fn cell_at(&self, idx: usize) -> Cell {
        (idx % self.width, idx / self.width)
    }

    /// Mean conformal factor of a cell (average of its four corners).
    #[inline]
    pub fn cell_phi(&self, idx: usize) -> f64 {
        self.cell_phi[idx]
    }

    pub fn cell_volume(&self, c: Cell) -> Result<f64> {
        let idx = self.check_cell(c)?;
        Ok(self.volume_of(idx))
    }

    #[inline]
    pub(crate) fn volume_of(&self, idx: usize) -> f64 {
        let p = self.cell_phi[idx];
        p * p * self.h * self.h
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.cell_count()).map(|i| self.volume_of(i)).sum()
    }

    pub fn min_cell_volume(&self) -> f64 {
        (0..self.cell_count())
            .map(|i| self.volume_of(i))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_cell_volume(&self) -> f64 {
        (0..self.cell_count()).map(|i| self.volume_of(i)).fold(0.0, f64::max)
    }

    /// Cell reached from `idx` by the lattice offset `(dx, dy)`; `None` when
    /// the step leaves an open grid.
    #[inline]
    pub fn offset(&self, idx: usize, dx: i64, dy: i64) -> Option<usize> {
        let (x, y) = self.cell_at(idx);
        let (w, h) = (self.width as i64, self.height as i64);
        let (mut nx, mut ny) = (x as i64 + dx, y as i64 + dy);
        match self.mode {
            BoundaryMode::Open => {
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    return None;
                }
            }
            BoundaryMode::Periodic => {
                nx = nx.rem_euclid(w);
                ny = ny.rem_euclid(h);
            }
        }
        Some(ny as usize * self.width + nx as usize)
    }

    /// Lattice distance (in cells) from a cell to the nearest open wall.
    /// Periodic grids have no walls and report `usize::MAX`.
    pub fn wall_distance(&self, idx: usize) -> usize {
        match self.mode {
            BoundaryMode::Periodic => usize::MAX,
            BoundaryMode::Open => {
                let (x, y) = self.cell_at(idx);
                x.min(y).min(self.width - 1 - x).min(self.height - 1 - y)
            }
        }
    }

    /// Shortest-path distances from `source` to every cell within `max_r`,
    /// sorted by `(distance, index)`.
    pub fn distances_within(&self, source: usize, max_r: f64) -> Vec<(usize, f64)> {
        let limit = max_r + 1e-12 * (1.0 + max_r.abs());
        let mut dist: HashMap<usize, f64> = HashMap::new();
        let mut settled: Vec<(usize, f64)> = Vec::new();
        let mut heap = BinaryHeap::new();
        dist.insert(source, 0.0);
        heap.push(HeapEntry { d: 0.0, idx: source });
        while let Some(HeapEntry { d, idx }) = heap.pop() {
            if d > dist[&idx] {
                continue;
            }
            if d > limit {
                break;
            }
            settled.push((idx, d));
            let phi_here = self.cell_phi[idx];
            for &(dx, dy) in &NEIGHBORS8 {
                let Some(n) = self.offset(idx, dx, dy) else {
                    continue;
                };
                let step = if dx != 0 && dy != 0 { self.h * SQRT_2 } else { self.h };
                let nd = d + 0.5 * (phi_here + self.cell_phi[n]) * step;
                if nd > limit {
                    continue;
                }
                let better = dist.get(&n).is_none_or(|&old| nd < old);
                if better {
                    dist.insert(n, nd);
                    heap.push(HeapEntry { d: nd, idx: n });
                }
            }
        }
        settled.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        settled
    }

    /// Dense distance field from `source` (`INFINITY` is never produced on a
    /// connected grid).
    pub fn distance_field(&self, source: usize) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; self.cell_count()];
        for (idx, d) in self.distances_within(source, f64::INFINITY) {
            out[idx] = d;
        }
        out
    }

    pub fn geodesic_distance(&self, p: Cell, q: Cell) -> Result<f64> {
        let pi = self.check_cell(p)?;
        let qi = self.check_cell(q)?;
        if pi == qi {
            return Ok(0.0);
        }
        // run from the smaller index so d(p, q) and d(q, p) take the same path
        let (src, dst) = if pi < qi { (pi, qi) } else { (qi, pi) };
        Ok(self
            .distances_within(src, f64::INFINITY)
            .into_iter()
            .find(|(i, _)| *i == dst)
            .map(|(_, d)| d)
            .unwrap_or(f64::INFINITY))
    }

    /// Cells whose center lies within geodesic distance `radius` of the
    /// center of `p`, as sorted cell indices.
    pub fn metric_ball(&self, p: Cell, radius: f64) -> Result<Vec<usize>> {
        if radius < 0.0 || radius.is_nan() {
            return Err(Error::InvalidArgument(format!("ball radius {radius} < 0")));
        }
        let pi = self.check_cell(p)?;
        let mut cells: Vec<usize> = self.distances_within(pi, radius).into_iter().map(|(i, _)| i).collect();
        cells.sort_unstable();
        Ok(cells)
    }

    /// Gauss curvature `K = -lap(log phi) / phi^2` at a vertex, 5-point stencil.
    pub fn gauss_curvature(&self, v: Cell) -> Result<Curvature> {
        if v.0 > self.width || v.1 > self.height {
            return Err(self.out_of_range("vertex", v.0 as i64, v.1 as i64));
        }
        let lphi = |x: usize, y: usize| self.vphi(x, y).ln();
        let (x, y) = v;
        let mut one_sided = false;
        let second = |n: usize, at: usize, sample: &dyn Fn(usize) -> f64, one_sided: &mut bool| match self.mode {
            BoundaryMode::Periodic => {
                let prev = if at == 0 { n - 1 } else { at - 1 };
                let next = if at >= n - 1 { (at + 1) % n } else { at + 1 };
                let at = at % n;
                sample(prev) - 2.0 * sample(at) + sample(next)
            }
            BoundaryMode::Open => {
                if at == 0 {
                    *one_sided = true;
                    sample(0) - 2.0 * sample(1) + sample(2)
                } else if at == n {
                    *one_sided = true;
                    sample(n) - 2.0 * sample(n - 1) + sample(n - 2)
                } else {
                    sample(at - 1) - 2.0 * sample(at) + sample(at + 1)
                }
            }
        };
        // periodic lattice has `width` distinct vertex columns; open has `width + 1`
        let dxx = second(self.width, x, &|i| lphi(i, y), &mut one_sided);
        let dyy = second(self.height, y, &|j| lphi(x, j), &mut one_sided);
        let lap = (dxx + dyy) / (self.h * self.h);
        let p = self.vphi(x, y);
        Ok(Curvature {
            value: -lap / (p * p),
            one_sided,
        })
    }

    /// Open `2r x 2r` chart whose vertices are `center - r ..= center + r`.
    pub fn extract_window(&self, center: Cell, r: usize) -> Result<ConformalGrid> {
        let r = r as i64;
        let side = 2 * r as usize;
        let mut phi = Vec::with_capacity((side + 1) * (side + 1));
        for dy in -r..=r {
            for dx in -r..=r {
                phi.push(self.window_phi(center, dx, dy, r as f64 * self.h)?);
            }
        }
        ConformalGrid::new(side, side, self.h, BoundaryMode::Open, phi)
    }

    fn window_phi(&self, center: Cell, dx: i64, dy: i64, radius: f64) -> Result<f64> {
        let (x, y) = (center.0 as i64 + dx, center.1 as i64 + dy);
        match self.mode {
            BoundaryMode::Open => {
                if x < 0 || y < 0 || x > self.width as i64 || y > self.height as i64 {
                    return Err(Error::WindowOutOfGrid {
                        x: center.0 as i64,
                        y: center.1 as i64,
                        radius,
                    });
                }
                Ok(self.vphi(x as usize, y as usize))
            }
            BoundaryMode::Periodic => Ok(self.vphi(
                x.rem_euclid(self.width as i64) as usize,
                y.rem_euclid(self.height as i64) as usize,
            )),
        }
    }

    pub fn to_document(&self) -> GridDocument {
        GridDocument {
            width: self.width,
            height: self.height,
            h: self.h,
            boundary_mode: self.mode,
            phi: self.phi.clone(),
        }
    }

    pub fn from_document(doc: GridDocument) -> Result<Self> {
        Self::new(doc.width, doc.height, doc.h, doc.boundary_mode, doc.phi)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("grid serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    d: f64,
    idx: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Curvature sample; `one_sided` marks an open-boundary vertex where the
/// centered stencil was replaced by a one-sided one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    pub value: f64,
    pub one_sided: bool,
}

/// Polynomial bump `(1 - t^2)^3` on `[0, 1]`, zero outside.
pub fn bump(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t * t;
        s * s * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    /// Vertex address of the bump center.
    pub center: Cell,
    pub amplitude: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapSpec {
    pub caps: Vec<Cap>,
}

impl CapSpec {
    pub fn new(caps: Vec<Cap>) -> Self {
        Self { caps }
    }

    pub fn single(center: Cell, amplitude: f64, radius: f64) -> Self {
        Self::new(vec![Cap {
            center,
            amplitude,
            radius,
        }])
    }
}

fn lattice_delta(a: usize, b: usize, n: usize, mode: BoundaryMode) -> i64 {
    let d = a as i64 - b as i64;
    match mode {
        BoundaryMode::Open => d,
        BoundaryMode::Periodic => {
            let n = n as i64;
            let d = d.rem_euclid(n);
            if d > n / 2 {
                d - n
            } else {
                d
            }
        }
    }
}

/// Plane (or torus) altered by compactly supported caps:
/// `phi(x) = 1 + sum_m a_m * bump(|x - q_m| / rho_m)`.
pub fn build_plane_with_caps(
    width: usize,
    height: usize,
    h: f64,
    mode: BoundaryMode,
    caps: &CapSpec,
) -> Result<ConformalGrid> {
    for (i, cap) in caps.caps.iter().enumerate() {
        if !(cap.amplitude >= 0.0 && cap.amplitude.is_finite()) {
            return Err(Error::InvalidCaps(format!(
                "cap {i}: amplitude must be >= 0, got {}",
                cap.amplitude
            )));
        }
        if !(cap.radius > 0.0 && cap.radius.is_finite()) {
            return Err(Error::InvalidCaps(format!(
                "cap {i}: radius must be > 0, got {}",
                cap.radius
            )));
        }
        let (cx, cy) = (cap.center.0 as f64 * h, cap.center.1 as f64 * h);
        match mode {
            BoundaryMode::Open => {
                let (wx, wy) = (width as f64 * h, height as f64 * h);
                if cx - cap.radius < 0.0 || cy - cap.radius < 0.0 || cx + cap.radius > wx || cy + cap.radius > wy {
                    return Err(Error::InvalidCaps(format!("cap {i}: support leaves the open grid")));
                }
            }
            BoundaryMode::Periodic => {
                if cap.center.0 >= width || cap.center.1 >= height {
                    return Err(Error::InvalidCaps(format!("cap {i}: center out of range")));
                }
                if 2.0 * cap.radius >= width.min(height) as f64 * h {
                    return Err(Error::InvalidCaps(format!("cap {i}: support wraps around the torus")));
                }
            }
        }
        for (j, other) in caps.caps.iter().enumerate().take(i) {
            let dx = lattice_delta(cap.center.0, other.center.0, width, mode) as f64;
            let dy = lattice_delta(cap.center.1, other.center.1, height, mode) as f64;
            if (dx * dx + dy * dy).sqrt() * h < cap.radius + other.radius {
                return Err(Error::InvalidCaps(format!(
                    "caps {j} and {i} have overlapping supports"
                )));
            }
        }
    }
    ConformalGrid::from_fn(width, height, h, mode, |x, y| {
        let mut phi = 1.0;
        for cap in &caps.caps {
            let dx = lattice_delta(x, cap.center.0, width, mode) as f64;
            let dy = lattice_delta(y, cap.center.1, height, mode) as f64;
            let t = (dx * dx + dy * dy).sqrt() * h / cap.radius;
            phi += cap.amplitude * bump(t);
        }
        phi
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryPasses {
    pub curvature: bool,
    pub ball: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub min_curvature: f64,
    pub min_curvature_vertex: Cell,
    pub min_unit_ball_volume: f64,
    pub min_ball_center: Cell,
    pub passes: GeometryPasses,
    pub k: f64,
    pub v0: f64,
    /// Number of open-boundary vertices evaluated with a one-sided stencil.
    pub one_sided_vertices: usize,
}

/// Checks `K >= k` (in 2-D `Ric = K g`, so `Ric >= k (n - 1)` with `n = 2`)
/// and `V(B(p, 1)) >= v0` over every vertex and every cell.
pub fn verify_bounded_geometry(grid: &ConformalGrid, k: f64, v0: f64) -> GeometryReport {
    let (vw, vh) = match grid.mode() {
        BoundaryMode::Open => (grid.width() + 1, grid.height() + 1),
        BoundaryMode::Periodic => (grid.width(), grid.height()),
    };
    let mut min_curvature = f64::INFINITY;
    let mut min_curvature_vertex = (0, 0);
    let mut one_sided_vertices = 0;
    for y in 0..vh {
        for x in 0..vw {
            let c = grid.gauss_curvature((x, y)).expect("vertex in range");
            if c.one_sided {
                one_sided_vertices += 1;
            }
            if c.value < min_curvature {
                min_curvature = c.value;
                min_curvature_vertex = (x, y);
            }
        }
    }
    let mut min_ball = f64::INFINITY;
    let mut min_ball_center = (0, 0);
    for idx in 0..grid.cell_count() {
        let vol: f64 = grid
            .distances_within(idx, 1.0)
            .iter()
            .map(|(i, _)| grid.volume_of(*i))
            .sum();
        if vol < min_ball {
            min_ball = vol;
            min_ball_center = grid.cell_at(idx);
        }
    }
    GeometryReport {
        min_curvature,
        min_curvature_vertex,
        min_unit_ball_volume: min_ball,
        min_ball_center,
        passes: GeometryPasses {
            curvature: min_curvature >= k,
            ball: min_ball >= v0,
        },
        k,
        v0,
        one_sided_vertices,
    }
}

/// Sup over the vertex window `|u|_inf <= ceil(R / h)` of
/// `|phi_a(p_a + u) - phi_b(p_b + u)|`.
pub fn recentered_metric_difference(
    a: &ConformalGrid,
    pa: Cell,
    b: &ConformalGrid,
    pb: Cell,
    radius: f64,
) -> Result<f64> {
    if a.h() != b.h() {
        return Err(Error::InvalidArgument(format!(
            "grid spacings differ ({} vs {})",
            a.h(),
            b.h()
        )));
    }
    if radius < 0.0 || radius.is_nan() {
        return Err(Error::InvalidArgument(format!("window radius {radius} < 0")));
    }
    let r = window_steps(radius, a.h()) as i64;
    let mut sup: f64 = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let fa = a.window_phi(pa, dx, dy, radius)?;
            let fb = b.window_phi(pb, dx, dy, radius)?;
            sup = sup.max((fa - fb).abs());
        }
    }
    Ok(sup)
}

/// Number of lattice steps covering a length `radius`.
pub fn window_steps(radius: f64, h: f64) -> usize {
    (radius / h - 1e-9).ceil().max(0.0) as usize
}
