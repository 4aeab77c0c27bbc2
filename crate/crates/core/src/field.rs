//! Discretized function spaces.
//!
//! Layers and pupil data live on uniform Cartesian grids that share one
//! spacing. A [`MaskedGrid`] pairs a grid with the boolean support of the
//! field (the aperture for pupil data, the union of shifted apertures for a
//! layer). Field values are optical path length in meters and are zero
//! outside their mask.

use std::sync::Arc;

use arrayvec::ArrayVec;

use crate::{Error, Result, Vec2};

/// Fractional-index distance below which a sample point is treated as lying
/// on a grid line.
const SNAP: f64 = 1e-9;

/// Uniform Cartesian grid. Node `(ix, iy)` sits at
/// `origin + spacing * (ix, iy)` and has row-major index `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    origin: Vec2,
    spacing: f64,
    nx: usize,
    ny: usize,
}

impl Grid2D {
    pub fn new(origin: Vec2, spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2x2 nodes, got {nx}x{ny}")));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { origin, spacing, nx, ny })
    }

    /// Square grid of `n x n` nodes spanning `[center - half, center + half]`
    /// on both axes.
    pub fn square(center: Vec2, half_width: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes per axis, got {n}")));
        }
        let spacing = 2.0 * half_width / (n - 1) as f64;
        Self::new([center[0] - half_width, center[1] - half_width], spacing, n, n)
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Area element of one node.
    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        [
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
        ]
    }

    pub fn node_at(&self, index: usize) -> Vec2 {
        self.node(index % self.nx, index / self.nx)
    }

    /// Coordinates of every node in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.len()).map(move |i| self.node_at(i))
    }

    /// Upper corner of the bounding box.
    pub fn extent(&self) -> Vec2 {
        self.node(self.nx - 1, self.ny - 1)
    }

    /// Position of `p` in index units, with values within [`SNAP`] of an
    /// integer rounded onto it.
    fn fractional_index(&self, p: Vec2) -> Vec2 {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < SNAP {
                r
            } else {
                v
            }
        };
        [
            snap((p[0] - self.origin[0]) / self.spacing),
            snap((p[1] - self.origin[1]) / self.spacing),
        ]
    }

    /// Nearest node to `p`, if `p` lies inside the bounding box.
    pub fn nearest_node(&self, p: Vec2) -> Option<usize> {
        let [fx, fy] = self.fractional_index(p);
        let (ix, iy) = (fx.round(), fy.round());
        if ix < 0.0 || iy < 0.0 || ix > (self.nx - 1) as f64 || iy > (self.ny - 1) as f64 {
            return None;
        }
        Some(self.index(ix as usize, iy as usize))
    }
}

/// Bilinear interpolation weights for one sample point: up to four
/// `(node index, weight)` pairs. Zero weights are omitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stencil {
    entries: ArrayVec<(usize, f64), 4>,
}

impl Stencil {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    /// Interpolated value of `values` at the sample point; an empty stencil
    /// evaluates to exactly zero.
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, w)| w * values[j]).sum()
    }
}

/// Bilinear stencil of `point` on `grid`. Points outside the bounding box
/// get an empty stencil (zero extension).
pub fn sample_stencil(grid: &Grid2D, point: Vec2) -> Stencil {
    let mut stencil = Stencil::default();
    let [fx, fy] = grid.fractional_index(point);
    let (maxx, maxy) = ((grid.nx - 1) as f64, (grid.ny - 1) as f64);
    if !(0.0..=maxx).contains(&fx) || !(0.0..=maxy).contains(&fy) {
        return stencil;
    }
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let (ix, iy) = (x0 + dx, y0 + dy);
            if ix < grid.nx && iy < grid.ny {
                stencil.entries.push((grid.index(ix, iy), w));
            }
        }
    }
    stencil
}

/// A grid together with the support of the fields that live on it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid {
    grid: Grid2D,
    mask: Vec<bool>,
}

impl MaskedGrid {
    pub fn new(grid: Grid2D, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for a grid of {} nodes",
                mask.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, mask })
    }

    /// Mask every node for which `inside` holds.
    pub fn from_predicate(grid: Grid2D, inside: impl Fn(Vec2) -> bool) -> Self {
        let mask = grid.nodes().map(inside).collect();
        Self { grid, mask }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn same_domain(a: &Arc<MaskedGrid>, b: &Arc<MaskedGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Grids, masks and weights `γ_l` of a layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    layers: Vec<MaskedGrid>,
    weights: Vec<f64>,
}

impl LayerLayout {
    pub fn new(layers: Vec<MaskedGrid>, weights: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("a layer stack needs at least one layer".into()));
        }
        if layers.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layers but {} weights",
                layers.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::ShapeMismatch(format!("layer weights must be positive, got {w}")));
        }
        Ok(Self { layers, weights })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &MaskedGrid {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[MaskedGrid] {
        &self.layers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// The discretized atmosphere `Φ = (Φ⁽¹⁾, …, Φ⁽ᴸ⁾)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layout: Arc<LayerLayout>,
    values: Vec<Vec<f64>>,
}

impl LayerStack {
    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        let values = layout.layers.iter().map(|m| vec![0.0; m.grid.len()]).collect();
        Self { layout, values }
    }

    /// Evaluate `f(l, node)` on every masked node of every layer.
    pub fn from_fn(layout: Arc<LayerLayout>, mut f: impl FnMut(usize, Vec2) -> f64) -> Self {
        let values = layout
            .layers
            .iter()
            .enumerate()
            .map(|(l, m)| {
                m.grid
                    .nodes()
                    .zip(&m.mask)
                    .map(|(p, &inside)| if inside { f(l, p) } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { layout, values }
    }

    /// Wrap raw per-layer values; entries outside the masks are cleared.
    pub fn from_values(layout: Arc<LayerLayout>, mut values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != layout.n_layers() {
            return Err(Error::ShapeMismatch(format!(
                "{} value arrays for {} layers",
                values.len(),
                layout.n_layers()
            )));
        }
        for (l, (v, m)) in values.iter_mut().zip(&layout.layers).enumerate() {
            if v.len() != m.grid.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: {} values for {} nodes",
                    v.len(),
                    m.grid.len()
                )));
            }
            for (x, &inside) in v.iter_mut().zip(&m.mask) {
                if !inside {
                    *x = 0.0;
                }
            }
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn n_layers(&self) -> usize {
        self.values.len()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.values[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.values[l]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn check_compatible(&self, other: &LayerStack) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("layer stacks live on different layouts".into()))
        }
    }

    /// `self += a * x`.
    ///
    /// # Panics
    /// If the stacks have different shapes.
    pub fn axpy(&mut self, a: f64, x: &LayerStack) {
        assert_eq!(self.values.len(), x.values.len(), "layer count mismatch");
        for (dst, src) in self.values.iter_mut().zip(&x.values) {
            assert_eq!(dst.len(), src.len(), "layer size mismatch");
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().flatten().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self - other`.
    pub fn difference(&self, other: &LayerStack) -> Result<LayerStack> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.axpy(-1.0, other);
        Ok(out)
    }

    /// Norm induced by [`inner_layers`].
    pub fn norm(&self) -> f64 {
        inner_layers_unchecked(self, self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Subtract the masked mean of every layer.
    pub fn remove_piston(&mut self) {
        for (v, m) in self.values.iter_mut().zip(&self.layout.layers) {
            let n = m.active_count();
            if n == 0 {
                continue;
            }
            let mean = v.iter().zip(&m.mask).filter(|(_, &k)| k).map(|(x, _)| x).sum::<f64>() / n as f64;
            for (x, &inside) in v.iter_mut().zip(&m.mask) {
                if inside {
                    *x -= mean;
                }
            }
        }
    }
}

fn inner_layers_unchecked(a: &LayerStack, b: &LayerStack) -> f64 {
    a.layout
        .layers
        .iter()
        .zip(&a.layout.weights)
        .zip(a.values.iter().zip(&b.values))
        .map(|((m, gamma), (x, y))| {
            let s: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            s * m.grid.cell_area() / gamma
        })
        .sum()
}

/// `⟨a, b⟩ = Σ_l (1/γ_l) Σ_nodes a⁽ˡ⁾ b⁽ˡ⁾ h²`.
pub fn inner_layers(a: &LayerStack, b: &LayerStack) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(inner_layers_unchecked(a, b))
}

/// A wavefront `φ_g` sampled on the pupil grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilField {
    domain: Arc<MaskedGrid>,
    values: Vec<f64>,
}

impl PupilField {
    pub fn zeros(domain: Arc<MaskedGrid>) -> Self {
        let values = vec![0.0; domain.grid.len()];
        Self { domain, values }
    }

    pub fn from_fn(domain: Arc<MaskedGrid>, mut f: impl FnMut(Vec2) -> f64) -> Self {
        let values = domain
            .grid
            .nodes()
            .zip(&domain.mask)
            .map(|(p, &inside)| if inside { f(p) } else { 0.0 })
            .collect();
        Self { domain, values }
    }

    pub fn from_values(domain: Arc<MaskedGrid>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a pupil grid of {} nodes",
                values.len(),
                domain.grid.len()
            )));
        }
        for (x, &inside) in values.iter_mut().zip(&domain.mask) {
            if !inside {
                *x = 0.0;
            }
        }
        Ok(Self { domain, values })
    }

    pub fn domain(&self) -> &Arc<MaskedGrid> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s * self.domain.grid.cell_area()).sqrt()
    }

    pub fn difference(&self, other: &PupilField) -> Result<PupilField> {
        if !same_domain(&self.domain, &other.domain) {
            return Err(Error::ShapeMismatch("pupil fields live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(PupilField { domain: self.domain.clone(), values })
    }

    /// Mean over the aperture mask.
    pub fn masked_mean(&self) -> f64 {
        let n = self.domain.active_count();
        if n == 0 {
            return 0.0;
        }
        self.values.iter().zip(&self.domain.mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>()
            / n as f64
    }
}

/// Pupil data for all `G` directions, `φ = (φ_1, …, φ_G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector {
    fields: Vec<PupilField>,
}

impl DataVector {
    pub fn zeros(domain: Arc<MaskedGrid>, directions: usize) -> Self {
        Self { fields: (0..directions).map(|_| PupilField::zeros(domain.clone())).collect() }
    }

    pub fn new(fields: Vec<PupilField>) -> Result<Self> {
        if let Some(first) = fields.first() {
            if fields.iter().any(|f| !same_domain(&f.domain, &first.domain)) {
                return Err(Error::ShapeMismatch("data entries must share one pupil grid".into()));
            }
        }
        Ok(Self { fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, g: usize) -> &PupilField {
        &self.fields[g]
    }

    pub fn field_mut(&mut self, g: usize) -> &mut PupilField {
        &mut self.fields[g]
    }

    pub fn fields(&self) -> &[PupilField] {
        &self.fields
    }

    pub fn into_fields(self) -> Vec<PupilField> {
        self.fields
    }

    pub fn check_compatible(&self, other: &DataVector) -> Result<()> {
        if self.fields.len() != other.fields.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} vs {} directions",
                self.fields.len(),
                other.fields.len()
            )));
        }
        match (self.fields.first(), other.fields.first()) {
            (Some(a), Some(b)) if !same_domain(&a.domain, &b.domain) => {
                Err(Error::ShapeMismatch("data vectors live on different pupil grids".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.fields.iter().map(|f| f.norm().powi(2)).sum::<f64>().sqrt()
    }

    pub fn difference(&self, other: &DataVector) -> Result<DataVector> {
        self.check_compatible(other)?;
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.difference(b))
            .collect::<Result<_>>()?;
        Ok(DataVector { fields })
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        for f in &mut out.fields {
            f.values.iter_mut().for_each(|v| *v *= a);
        }
        out
    }
}

/// `⟨a, b⟩ = Σ_g Σ_nodes a_g b_g h²`.
pub fn inner_data(a: &DataVector, b: &DataVector) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(a.fields
        .iter()
        .zip(&b.fields)
        .map(|(x, y)| {
            let s: f64 = x.values.iter().zip(&y.values).map(|(p, q)| p * q).sum();
            s * x.domain.grid.cell_area()
        })
        .sum())
}
