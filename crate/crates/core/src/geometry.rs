//! Guide-star directions, shifted apertures and overlap geometry.
//!
//! On layer `l` the aperture `Ω_T` seen along direction `α_g` is the disk of
//! radius `T` centered at `h_l α_g`. The overlap function `ω_l(r)` counts how
//! many of those disks contain `r`. Where `ω_l = 1` a single direction sees
//! the layer, and the atmosphere there cannot be pinned down by the data.

use std::f64::consts::{PI, SQRT_2};

use crate::field::Grid2D;
use crate::{Error, Result, Vec2};

/// One arcsecond in radians.
pub const ARCSEC: f64 = PI / (180.0 * 3600.0);

/// Relative slack on the squared radius in disk membership tests, so that
/// nodes lying on a circle up to rounding are counted as inside.
const DISK_SLACK: f64 = 1e-12;

/// Closed-disk membership `‖p − c‖ ≤ r`.
pub fn in_disk(p: Vec2, center: Vec2, radius: f64) -> bool {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    dx * dx + dy * dy <= radius * radius * (1.0 + DISK_SLACK)
}

/// Polar angle of `v` in `[0, 2π)`.
pub fn polar_angle(v: Vec2) -> f64 {
    let t = v[1].atan2(v[0]);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

fn distance(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `count` directions equally spaced on a circle of `radius` radians,
/// starting at polar angle `phase` and ordered by increasing angle.
pub fn ring_directions(count: usize, radius: f64, phase: f64) -> Vec<Vec2> {
    let mut dirs: Vec<Vec2> = (0..count)
        .map(|k| {
            let t = phase + 2.0 * PI * k as f64 / count as f64;
            [radius * t.cos(), radius * t.sin()]
        })
        .collect();
    dirs.sort_by(|a, b| polar_angle(*a).total_cmp(&polar_angle(*b)));
    dirs
}

/// Physical layout of the tomography problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    aperture_radius: f64,
    directions: Vec<Vec2>,
    layer_heights: Vec<f64>,
    layer_weights: Vec<f64>,
}

impl GeometrySpec {
    /// Directions are angular offsets in radians, heights in meters.
    pub fn new(
        aperture_radius: f64,
        directions: Vec<Vec2>,
        layer_heights: Vec<f64>,
        layer_weights: Vec<f64>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidGeometry(msg));
        if !(aperture_radius.is_finite() && aperture_radius > 0.0) {
            return bad(format!("aperture radius must be positive, got {aperture_radius}"));
        }
        if directions.is_empty() {
            return bad("at least one guide-star direction is required".into());
        }
        if layer_heights.is_empty() {
            return bad("at least one layer is required".into());
        }
        if layer_weights.len() != layer_heights.len() {
            return bad(format!(
                "{} layer heights but {} layer weights",
                layer_heights.len(),
                layer_weights.len()
            ));
        }
        if directions.iter().flatten().any(|v| !v.is_finite()) {
            return bad("directions must be finite".into());
        }
        for (i, a) in directions.iter().enumerate() {
            for (j, b) in directions.iter().enumerate().skip(i + 1) {
                if a == b {
                    return bad(format!("directions {i} and {j} coincide"));
                }
            }
        }
        for (g, w) in directions.windows(2).enumerate() {
            if polar_angle(w[0]) >= polar_angle(w[1]) {
                return bad(format!(
                    "directions must be ordered by strictly increasing polar angle (directions {g} and {})",
                    g + 1
                ));
            }
        }
        if layer_heights.iter().any(|h| !h.is_finite()) || layer_heights[0] < 0.0 {
            return bad("layer heights must be finite and non-negative".into());
        }
        if layer_heights.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layer heights must be strictly increasing".into());
        }
        if let Some(w) = layer_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return bad(format!("layer weights must be positive, got {w}"));
        }
        Ok(Self { aperture_radius, directions, layer_heights, layer_weights })
    }

    /// Same as [`GeometrySpec::new`] with directions given in arcseconds and
    /// the aperture given by its diameter.
    pub fn from_arcsec(
        aperture_diameter: f64,
        directions_arcsec: &[Vec2],
        layer_heights: Vec<f64>,
        layer_weights: Vec<f64>,
    ) -> Result<Self> {
        let dirs = directions_arcsec.iter().map(|d| [d[0] * ARCSEC, d[1] * ARCSEC]).collect();
        Self::new(aperture_diameter / 2.0, dirs, layer_heights, layer_weights)
    }

    pub fn aperture_radius(&self) -> f64 {
        self.aperture_radius
    }

    pub fn directions(&self) -> &[Vec2] {
        &self.directions
    }

    pub fn direction(&self, g: usize) -> Vec2 {
        self.directions[g]
    }

    pub fn layer_heights(&self) -> &[f64] {
        &self.layer_heights
    }

    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    pub fn n_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_heights.len()
    }

    pub fn check_layer(&self, l: usize) -> Result<()> {
        if l < self.n_layers() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { what: "layer", index: l, len: self.n_layers() })
        }
    }

    pub fn check_direction(&self, g: usize) -> Result<()> {
        if g < self.n_directions() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { what: "direction", index: g, len: self.n_directions() })
        }
    }

    /// Center `h_l α_g` of the aperture footprint of direction `g` on layer `l`.
    pub fn shift(&self, l: usize, g: usize) -> Vec2 {
        shift_at(self.layer_heights[l], self.directions[g])
    }

    /// Footprint centers of all directions on layer `l`.
    pub fn shifts(&self, l: usize) -> Vec<Vec2> {
        (0..self.n_directions()).map(|g| self.shift(l, g)).collect()
    }

    /// Copy with the weights rescaled to sum to one.
    pub fn with_normalized_weights(&self) -> Self {
        let total: f64 = self.layer_weights.iter().sum();
        let mut out = self.clone();
        out.layer_weights.iter_mut().for_each(|w| *w /= total);
        out
    }

    /// Lowest layer with positive height, the first layer on which a
    /// single-overlap region can exist.
    pub fn first_elevated_layer(&self) -> Option<usize> {
        self.layer_heights.iter().position(|&h| h > 0.0)
    }

    /// Snap the geometry so every footprint shift `h_l α_g` is an integer
    /// multiple of `spacing` along both axes.
    ///
    /// Directions are rounded so that the lowest elevated layer shifts by a
    /// whole number of nodes, and every height is rounded to an integer
    /// multiple of that layer's height.
    pub fn aligned_to_lattice(&self, spacing: f64) -> Result<Self> {
        let Some(base) = self.first_elevated_layer() else {
            return Ok(self.clone());
        };
        let h_ref = self.layer_heights[base];
        let directions = self
            .directions
            .iter()
            .map(|a| {
                [
                    (h_ref * a[0] / spacing).round() * spacing / h_ref,
                    (h_ref * a[1] / spacing).round() * spacing / h_ref,
                ]
            })
            .collect();
        let heights = self
            .layer_heights
            .iter()
            .map(|&h| (h / h_ref).round() * h_ref)
            .collect();
        Self::new(self.aperture_radius, directions, heights, self.layer_weights.clone()).map_err(|e| {
            Error::InvalidGeometry(format!("geometry cannot be aligned to spacing {spacing}: {e}"))
        })
    }
}

fn shift_at(height: f64, direction: Vec2) -> Vec2 {
    [height * direction[0], height * direction[1]]
}

/// Analytic overlap count `ω_l(p)`.
pub fn overlap_count(spec: &GeometrySpec, l: usize, p: Vec2) -> u32 {
    let t = spec.aperture_radius();
    (0..spec.n_directions()).filter(|&g| in_disk(p, spec.shift(l, g), t)).count() as u32
}

/// Bounding box `(lower, upper)` of `Ω_l`, the union of footprints on layer `l`.
pub fn layer_bounds(spec: &GeometrySpec, l: usize) -> (Vec2, Vec2) {
    let t = spec.aperture_radius();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in spec.shifts(l) {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k] - t);
            hi[k] = hi[k].max(c[k] + t);
        }
    }
    (lo, hi)
}

/// Shape of a [`Region`].
#[derive(Debug, Clone, PartialEq)]
pub enum RegionKind {
    /// Closed disk of the given radius around the region center.
    Disk { radius: f64 },
    /// `Ω_T(h_l α_g)`: the aperture shifted to the footprint of direction
    /// `guide` on layer `layer`. The region center is `h_l α_g`.
    ShiftedAperture { layer: usize, guide: usize, radius: f64 },
    /// Rasterized region, one flag per grid node.
    Mask { grid: Grid2D, inside: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub center: Vec2,
    pub kind: RegionKind,
}

impl Region {
    pub fn disk(center: Vec2, radius: f64) -> Self {
        Self { center, kind: RegionKind::Disk { radius } }
    }

    pub fn shifted_aperture(spec: &GeometrySpec, l: usize, g: usize) -> Result<Self> {
        spec.check_layer(l)?;
        spec.check_direction(g)?;
        Ok(Self {
            center: spec.shift(l, g),
            kind: RegionKind::ShiftedAperture { layer: l, guide: g, radius: spec.aperture_radius() },
        })
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match &self.kind {
            RegionKind::Disk { radius } | RegionKind::ShiftedAperture { radius, .. } => {
                in_disk(p, self.center, *radius)
            }
            RegionKind::Mask { grid, inside } => grid.nearest_node(p).is_some_and(|i| inside[i]),
        }
    }

    /// Radius for disk-shaped regions.
    pub fn radius(&self) -> Option<f64> {
        match &self.kind {
            RegionKind::Disk { radius } | RegionKind::ShiftedAperture { radius, .. } => Some(*radius),
            RegionKind::Mask { .. } => None,
        }
    }
}

/// Rasterized overlap function `ω_l` of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMap {
    layer: usize,
    grid: Grid2D,
    values: Vec<u32>,
    centers: Vec<Vec2>,
    aperture_radius: f64,
}

impl OverlapMap {
    /// `ω_l` on a `resolution x resolution` grid covering the bounding square
    /// of `Ω_l`.
    pub fn compute(spec: &GeometrySpec, l: usize, resolution: usize) -> Result<Self> {
        spec.check_layer(l)?;
        if resolution < 2 {
            return Err(Error::InvalidGrid(format!("resolution must be at least 2, got {resolution}")));
        }
        let (lo, hi) = layer_bounds(spec, l);
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let half = (hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0;
        let grid = Grid2D::square(center, half, resolution)?;
        Self::on_grid(spec, l, grid)
    }

    /// `ω_l` evaluated on the nodes of an arbitrary grid.
    pub fn on_grid(spec: &GeometrySpec, l: usize, grid: Grid2D) -> Result<Self> {
        spec.check_layer(l)?;
        let centers = spec.shifts(l);
        let t = spec.aperture_radius();
        let values = grid
            .nodes()
            .map(|p| centers.iter().filter(|&&c| in_disk(p, c, t)).count() as u32)
            .collect();
        Ok(Self { layer: l, grid, values, centers, aperture_radius: t })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn n_directions(&self) -> usize {
        self.centers.len()
    }

    /// Footprint center of direction `g` on this layer.
    pub fn center(&self, g: usize) -> Vec2 {
        self.centers[g]
    }

    pub fn aperture_radius(&self) -> f64 {
        self.aperture_radius
    }

    pub fn max_value(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    /// Number of nodes with `ω = k` for `k = 0..=G`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.centers.len() + 1];
        for &v in &self.values {
            h[v as usize] += 1;
        }
        h
    }
}

/// Height above which the footprints of all directions are pairwise
/// disjoint: `2T / min_{i≠j} ‖α_i − α_j‖`.
pub fn disjoint_height(spec: &GeometrySpec) -> Result<f64> {
    let dirs = spec.directions();
    if dirs.len() < 2 {
        return Err(Error::InvalidGeometry(
            "the disjointness height needs at least two directions".into(),
        ));
    }
    let mut min_sep = f64::INFINITY;
    for (i, a) in dirs.iter().enumerate() {
        for b in &dirs[i + 1..] {
            min_sep = min_sep.min(distance(*a, *b));
        }
    }
    Ok(2.0 * spec.aperture_radius() / min_sep)
}

/// A disk on one layer that is seen by exactly one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallRegion {
    pub layer: usize,
    pub guide: usize,
    pub center: Vec2,
    pub radius: f64,
}

impl BallRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        in_disk(p, self.center, self.radius)
    }
}

/// Locate a ball inside `Ω_T(h_l α_g)` on which `ω_l = 1`.
///
/// The center is the node of the single-overlap set with the largest
/// Euclidean distance to its complement (ties go to the lowest row-major
/// index). The radius is that distance minus one cell diagonal, so the
/// bilinear stencil of every point in the ball also stays inside the set.
pub fn find_single_overlap_ball(map: &OverlapMap, g: usize) -> Result<BallRegion> {
    if g >= map.n_directions() {
        return Err(Error::IndexOutOfRange { what: "direction", index: g, len: map.n_directions() });
    }
    let grid = map.grid();
    let center_g = map.center(g);
    let t = map.aperture_radius();
    let inside: Vec<bool> = grid
        .nodes()
        .zip(map.values())
        .map(|(p, &w)| w == 1 && in_disk(p, center_g, t))
        .collect();
    ball_in_set(&inside, grid, map.layer(), g, SQRT_2 * grid.spacing())
}

/// Largest ball centered on a node of the set `inside` (one flag per node of
/// `grid`): the node farthest from the complement, ties to the lowest
/// row-major index, with radius equal to that distance minus `margin`.
pub fn ball_in_set(inside: &[bool], grid: &Grid2D, layer: usize, guide: usize, margin: f64) -> Result<BallRegion> {
    let none = Error::NoSingleOverlapRegion { layer, guide };
    if inside.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!("{} flags for {} nodes", inside.len(), grid.len())));
    }
    if !inside.iter().any(|&b| b) {
        return Err(none);
    }
    let dist2 = squared_distance_to_complement(inside, grid.nx(), grid.ny());
    let mut best: Option<(usize, f64)> = None;
    for (i, (&d2, &ok)) in dist2.iter().zip(inside).enumerate() {
        if ok && best.is_none_or(|(_, b)| d2 > b) {
            best = Some((i, d2));
        }
    }
    let (index, d2) = best.ok_or(none)?;
    let radius = d2.sqrt() * grid.spacing() - margin;
    if radius <= 0.0 {
        return Err(Error::NoSingleOverlapRegion { layer, guide });
    }
    Ok(BallRegion { layer, guide, center: grid.node_at(index), radius })
}

/// `Ω̄^{g,l}`: the ball translated along its direction from its own layer to
/// layer `l`. Translating to the ball's own layer returns the ball itself.
pub fn shifted_region(ball: &BallRegion, spec: &GeometrySpec, l: usize) -> Result<Region> {
    spec.check_layer(l)?;
    spec.check_direction(ball.guide)?;
    spec.check_layer(ball.layer)?;
    if l == ball.layer {
        return Ok(Region::disk(ball.center, ball.radius));
    }
    let a = spec.direction(ball.guide);
    let dh = spec.layer_heights()[l] - spec.layer_heights()[ball.layer];
    Ok(Region::disk([ball.center[0] + dh * a[0], ball.center[1] + dh * a[1]], ball.radius))
}

/// Squared Euclidean distance (in index units) from every node to the
/// nearest node with `inside == false`. Nodes beyond the grid border count
/// as outside.
fn squared_distance_to_complement(inside: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    // Large enough to exceed any squared distance, small enough that
    // sums with squared indices stay exact.
    const FAR: f64 = 1e12;
    // Pad by one node on each side so the border acts as complement.
    let (px, py) = (nx + 2, ny + 2);
    let mut f = vec![0.0; px * py];
    for iy in 0..ny {
        for ix in 0..nx {
            if inside[iy * nx + ix] {
                f[(iy + 1) * px + ix + 1] = FAR;
            }
        }
    }
    let n = px.max(py);
    let mut scratch = Envelope::new(n);
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    for ix in 0..px {
        for iy in 0..py {
            line[iy] = f[iy * px + ix];
        }
        scratch.transform(&line[..py], &mut out[..py]);
        for iy in 0..py {
            f[iy * px + ix] = out[iy];
        }
    }
    for iy in 0..py {
        line[..px].copy_from_slice(&f[iy * px..(iy + 1) * px]);
        scratch.transform(&line[..px], &mut out[..px]);
        f[iy * px..(iy + 1) * px].copy_from_slice(&out[..px]);
    }
    let mut d = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        d.extend_from_slice(&f[(iy + 1) * px + 1..(iy + 1) * px + 1 + nx]);
    }
    d
}

/// Lower envelope of parabolas for the 1-D squared distance transform
/// (Felzenszwalb and Huttenlocher).
struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self { v: vec![0; n], z: vec![0.0; n + 1] }
    }

    fn transform(&mut self, f: &[f64], d: &mut [f64]) {
        let n = f.len();
        let (v, z) = (&mut self.v, &mut self.z);
        let mut k = 0;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        let meet = |q: usize, p: usize| {
            let (qf, pf) = (q as f64, p as f64);
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        for q in 1..n {
            let mut s = meet(q, v[k]);
            while s <= z[k] {
                k -= 1;
                s = meet(q, v[k]);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for (q, dq) in d.iter_mut().enumerate().take(n) {
            let qf = q as f64;
            while z[k + 1] < qf {
                k += 1;
            }
            let p = v[k] as f64;
            *dq = (qf - p) * (qf - p) + f[v[k]];
        }
    }
}
