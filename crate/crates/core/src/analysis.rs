//! Experiments built on the operator: null-space witnesses, the projected
//! atmosphere `A*AΦ`, overlap-stratified errors and Strehl ratios.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::field::{sample_stencil, DataVector, LayerStack};
use crate::geometry::{ball_in_set, in_disk, overlap_count, shifted_region, BallRegion, OverlapMap, Region};
use crate::operator::TomoOperator;
use crate::{Error, Result, Vec2};

/// Sensing wavelength used for Strehl evaluation unless overridden.
pub const DEFAULT_WAVELENGTH: f64 = 589e-9;

/// Single-overlap ball of direction `g` on the first elevated layer,
/// located on the operator's grid for that layer.
///
/// Candidate nodes must be seen by `g` alone on their own layer and, after
/// translation along `α_g`, on every layer above. For aligned shifts the ball
/// keeps the full node distance to the complement; otherwise two cell
/// diagonals are reserved for the interpolation stencils.
pub fn direction_ball(op: &TomoOperator, g: usize) -> Result<BallRegion> {
    let spec = op.spec();
    spec.check_direction(g)?;
    let base = spec.first_elevated_layer().ok_or(Error::NoSingleOverlapRegion { layer: 0, guide: g })?;
    let grid = op.layout().layer(base).grid();
    let alpha = spec.direction(g);
    let t = spec.aperture_radius();
    let c = spec.shift(base, g);
    let h_b = spec.layer_heights()[base];
    let inside: Vec<bool> = grid
        .nodes()
        .map(|x| {
            in_disk(x, c, t)
                && (base..spec.n_layers()).all(|l| {
                    let dh = spec.layer_heights()[l] - h_b;
                    overlap_count(spec, l, [x[0] + dh * alpha[0], x[1] + dh * alpha[1]]) == 1
                })
        })
        .collect();
    let margin = if op.is_aligned() { 1e-6 } else { 2.0 * std::f64::consts::SQRT_2 } * grid.spacing();
    ball_in_set(&inside, grid, base, g, margin)
}

/// Layers on which the translated ball of direction `g` is seen by `g` alone:
/// the ball's layer and every layer above it.
pub fn single_overlap_layers(op: &TomoOperator, ball: &BallRegion) -> Vec<usize> {
    (ball.layer..op.n_layers()).collect()
}

fn taper(distance: f64, radius: f64, margin: f64) -> f64 {
    let inner = (1.0 - margin) * radius;
    if distance <= inner {
        1.0
    } else if distance >= radius {
        0.0
    } else {
        0.5 * (1.0 + (PI * (distance - inner) / (radius - inner)).cos())
    }
}

/// Two atmospheres with the same data.
#[derive(Debug, Clone)]
pub struct NullspaceWitness {
    pub original: LayerStack,
    pub modified: LayerStack,
    pub data_original: DataVector,
    pub data_modified: DataVector,
    pub directions: Vec<usize>,
    /// Translated balls `Ω̄^{g,l}`, as `(g, l, region)`.
    pub regions: Vec<(usize, usize, Region)>,
    /// `max |AΦ̃ − AΦ|` over all samples.
    pub max_discrepancy: f64,
    /// `‖AΦ̃ − AΦ‖ / ‖AΦ‖`.
    pub relative_discrepancy: f64,
    /// `‖Φ̃ − Φ‖`.
    pub layer_distance: f64,
    /// `‖Φ̃ − Φ‖ / ‖Φ‖`.
    pub relative_distance: f64,
}

/// Perturb the atmosphere inside the single-overlap balls of direction `g`
/// without changing any measurement.
///
/// Every elevated layer below the top receives `p_l`, the value of
/// `perturbation(l, x − c)` at offset `x − c` from the translated-ball center,
/// multiplied by a radial cosine taper that is one on the inner
/// `(1 − smooth_margin)` sub-ball and zero at the ball boundary. The top layer
/// absorbs the change along direction `g`:
/// `Φ̃_top(x) = Φ_top(x) − Σ_l p_l(x − (h_top − h_l) α_g)`.
pub fn build_nullspace_witness(
    op: &TomoOperator,
    phi: &LayerStack,
    g: usize,
    perturbation: impl Fn(usize, Vec2) -> f64,
    smooth_margin: f64,
) -> Result<NullspaceWitness> {
    build_nullspace_witness_for(op, phi, &[g], perturbation, smooth_margin)
}

/// As [`build_nullspace_witness`] for several directions at once. The balls
/// of different directions are disjoint, so the perturbations add up.
pub fn build_nullspace_witness_for(
    op: &TomoOperator,
    phi: &LayerStack,
    directions: &[usize],
    perturbation: impl Fn(usize, Vec2) -> f64,
    smooth_margin: f64,
) -> Result<NullspaceWitness> {
    if !(0.0..1.0).contains(&smooth_margin) {
        return Err(Error::InvalidGeometry(format!("smooth margin must be in [0, 1), got {smooth_margin}")));
    }
    phi.check_compatible(&op.zero_layers())?;
    let mut delta = op.zero_layers();
    let mut regions = Vec::new();
    for &g in directions {
        let ball = direction_ball(op, g)?;
        let layers = single_overlap_layers(op, &ball);
        if layers.len() < 2 {
            return Err(Error::InvalidGeometry(
                "a null-space witness needs at least two elevated layers".into(),
            ));
        }
        let (top, lower) = layers.split_last().expect("two or more layers");
        let spec = op.spec();
        let alpha = spec.direction(g);
        for &l in layers.iter() {
            regions.push((g, l, shifted_region(&ball, spec, l)?));
        }

        let mut parts = Vec::with_capacity(lower.len());
        for &l in lower {
            let region = shifted_region(&ball, spec, l)?;
            let grid = *op.layout().layer(l).grid();
            let c = region.center;
            let mut p = vec![0.0; grid.len()];
            for (i, x) in grid.nodes().enumerate() {
                let offset = [x[0] - c[0], x[1] - c[1]];
                let w = taper(offset[0].hypot(offset[1]), ball.radius, smooth_margin);
                if w > 0.0 {
                    p[i] = w * perturbation(l, offset);
                }
            }
            parts.push((l, grid, p));
        }

        let h_top = spec.layer_heights()[*top];
        let top_grid = *op.layout().layer(*top).grid();
        let top_center = shifted_region(&ball, spec, *top)?.center;
        let reach = ball.radius + top_grid.spacing() * std::f64::consts::SQRT_2;
        let mut top_delta = vec![0.0; top_grid.len()];
        for (i, x) in top_grid.nodes().enumerate() {
            if (x[0] - top_center[0]).hypot(x[1] - top_center[1]) > reach {
                continue;
            }
            for (l, grid, p) in &parts {
                let dh = h_top - spec.layer_heights()[*l];
                let y = [x[0] - dh * alpha[0], x[1] - dh * alpha[1]];
                top_delta[i] -= sample_stencil(grid, y).apply(p);
            }
        }
        for (l, _, p) in parts {
            add_to_layer(&mut delta, l, &p);
        }
        add_to_layer(&mut delta, *top, &top_delta);
    }

    let mut modified = phi.clone();
    modified.axpy(1.0, &delta);
    let data_original = op.forward(phi)?;
    let data_modified = op.forward(&modified)?;
    // A(Φ̃ − Φ) by linearity, free of the cancellation in AΦ̃ − AΦ.
    let diff = op.forward(&delta)?;
    let max_discrepancy =
        diff.fields().iter().flat_map(|f| f.values().iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
    let data_norm = data_original.norm();
    let layer_distance = delta.norm();
    let phi_norm = phi.norm();
    Ok(NullspaceWitness {
        relative_discrepancy: if data_norm > 0.0 { diff.norm() / data_norm } else { diff.norm() },
        relative_distance: if phi_norm > 0.0 { layer_distance / phi_norm } else { f64::INFINITY },
        original: phi.clone(),
        modified,
        data_original,
        data_modified,
        directions: directions.to_vec(),
        regions,
        max_discrepancy,
        layer_distance,
    })
}

fn add_to_layer(stack: &mut LayerStack, l: usize, values: &[f64]) {
    let mask = stack.layout().layer(l).mask().to_vec();
    for ((dst, v), inside) in stack.layer_mut(l).iter_mut().zip(values).zip(mask) {
        if inside {
            *dst += v;
        }
    }
}

/// The projected atmosphere `Φ̂ = A*AΦ`. This is an element of the range of
/// `A*`, not an orthogonal projection.
pub fn project_to_range_of_adjoint(op: &TomoOperator, phi: &LayerStack) -> Result<LayerStack> {
    op.normal_apply(phi)
}

/// Deviation from the range-of-adjoint structure along one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub direction: usize,
    pub base_layer: usize,
    /// `(l, residual)`: max over ball nodes of
    /// `|Φ_l(x + Δh α_g)/γ_l − Φ_b(x)/γ_b|`, divided by `max |Φ_b/γ_b|` on the
    /// ball (absolute when that maximum is zero).
    pub layer_residuals: Vec<(usize, f64)>,
}

impl InvariantCheck {
    pub fn max_residual(&self) -> f64 {
        self.layer_residuals.iter().map(|(_, r)| *r).fold(0.0, f64::max)
    }
}

/// Compare `Φ_l/γ_l` on every translated ball of direction `g` with the base
/// ball. For `Φ = A*φ` the values agree node for node when shifts are
/// aligned with the grid.
pub fn scaling_invariant_check(op: &TomoOperator, phi: &LayerStack, g: usize) -> Result<InvariantCheck> {
    check_ball(op, phi, &direction_ball(op, g)?)
}

fn check_ball(op: &TomoOperator, phi: &LayerStack, ball: &BallRegion) -> Result<InvariantCheck> {
    phi.check_compatible(&op.zero_layers())?;
    let spec = op.spec();
    let (b, g) = (ball.layer, ball.guide);
    let weights = op.layout().weights();
    let base_grid = *op.layout().layer(b).grid();
    let nodes: Vec<(Vec2, f64)> = base_grid
        .nodes()
        .enumerate()
        .filter(|(_, x)| ball.contains(*x))
        .map(|(i, x)| (x, phi.layer(b)[i] / weights[b]))
        .collect();
    let scale = nodes.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
    let alpha = spec.direction(g);
    let layer_residuals = single_overlap_layers(op, ball)
        .into_iter()
        .filter(|&l| l != b)
        .map(|l| {
            let dh = spec.layer_heights()[l] - spec.layer_heights()[b];
            let grid = op.layout().layer(l).grid();
            let worst = nodes.iter().fold(0.0_f64, |m, (x, v)| {
                let y = [x[0] + dh * alpha[0], x[1] + dh * alpha[1]];
                let other = sample_stencil(grid, y).apply(phi.layer(l)) / weights[l];
                m.max((other - v).abs())
            });
            (l, if scale > 0.0 { worst / scale } else { worst })
        })
        .collect();
    Ok(InvariantCheck { direction: g, base_layer: b, layer_residuals })
}

/// [`scaling_invariant_check`] for every direction.
pub fn scaling_invariant_all(op: &TomoOperator, phi: &LayerStack) -> Result<Vec<InvariantCheck>> {
    InvariantChecker::new(op)?.check(op, phi)
}

/// Scaling-invariant checks with the balls located once, for use on every
/// iterate of a solver.
#[derive(Debug, Clone)]
pub struct InvariantChecker {
    balls: Vec<BallRegion>,
}

impl InvariantChecker {
    /// Balls for all directions that have one. Fails only on errors other
    /// than a missing ball.
    pub fn new(op: &TomoOperator) -> Result<Self> {
        let mut balls = Vec::new();
        for g in 0..op.n_directions() {
            match direction_ball(op, g) {
                Ok(b) if single_overlap_layers(op, &b).len() >= 2 => balls.push(b),
                Ok(_) | Err(Error::NoSingleOverlapRegion { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Self { balls })
    }

    pub fn balls(&self) -> &[BallRegion] {
        &self.balls
    }

    pub fn check(&self, op: &TomoOperator, phi: &LayerStack) -> Result<Vec<InvariantCheck>> {
        self.balls.iter().map(|b| check_ball(op, phi, b)).collect()
    }

    /// Largest residual over all directions and layers; zero when no
    /// direction has a ball.
    pub fn max_residual(&self, op: &TomoOperator, phi: &LayerStack) -> Result<f64> {
        Ok(self.check(op, phi)?.iter().map(InvariantCheck::max_residual).fold(0.0, f64::max))
    }
}

/// Error ratios of one overlap stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumError {
    pub overlap: u32,
    pub nodes: usize,
    /// `‖Φ − Φ_rec‖² / ‖Φ_rec‖²` restricted to the stratum; `None` when the
    /// stratum is empty or the denominator vanishes.
    pub error: Option<f64>,
    /// `‖Φ − Φ_rec‖² / ‖Φ‖²` restricted to the stratum.
    pub error_true_normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedError {
    /// Over all layers and nodes.
    pub global: Option<f64>,
    pub global_true_normalized: Option<f64>,
    /// One entry per overlap count `0..=G`.
    pub strata: Vec<StratumError>,
}

impl StratifiedError {
    pub fn stratum(&self, overlap: u32) -> Option<&StratumError> {
        self.strata.iter().find(|s| s.overlap == overlap)
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Relative squared `L2` error, normalized by the reconstruction, overall and
/// per overlap count. `strata` holds overlap maps on the layer grids of the
/// layers to stratify; each node of those layers is assigned the overlap
/// count of its map.
pub fn relative_error(truth: &LayerStack, rec: &LayerStack, strata: &[OverlapMap]) -> Result<StratifiedError> {
    truth.check_compatible(rec)?;
    let layout = truth.layout();
    let g_max = strata.iter().map(|m| m.n_directions()).max().unwrap_or(0);
    let mut diff2 = vec![0.0; g_max + 1];
    let mut rec2 = vec![0.0; g_max + 1];
    let mut true2 = vec![0.0; g_max + 1];
    let mut counts = vec![0usize; g_max + 1];
    for map in strata {
        let l = map.layer();
        if l >= layout.n_layers() {
            return Err(Error::IndexOutOfRange { what: "layer", index: l, len: layout.n_layers() });
        }
        let layer = layout.layer(l);
        if map.grid() != layer.grid() {
            return Err(Error::ShapeMismatch(format!("overlap map of layer {l} is not on the layer grid")));
        }
        let w = layer.grid().cell_area() / layout.weights()[l];
        for (i, (&k, &inside)) in map.values().iter().zip(layer.mask()).enumerate() {
            if !inside {
                continue;
            }
            let k = k as usize;
            let (t, r) = (truth.layer(l)[i], rec.layer(l)[i]);
            diff2[k] += w * (t - r) * (t - r);
            rec2[k] += w * r * r;
            true2[k] += w * t * t;
            counts[k] += 1;
        }
    }
    let d = truth.difference(rec)?.norm().powi(2);
    let strata = (0..=g_max)
        .map(|k| StratumError {
            overlap: k as u32,
            nodes: counts[k],
            error: if counts[k] > 0 { ratio(diff2[k], rec2[k]) } else { None },
            error_true_normalized: if counts[k] > 0 { ratio(diff2[k], true2[k]) } else { None },
        })
        .collect();
    Ok(StratifiedError {
        global: ratio(d, rec.norm().powi(2)),
        global_true_normalized: ratio(d, truth.norm().powi(2)),
        strata,
    })
}

/// Extended Maréchal approximation `exp(−σ²)` for a phase variance in rad².
pub fn strehl_from_variance(phase_variance: f64) -> f64 {
    (-phase_variance.max(0.0)).exp()
}

/// Evaluation directions on concentric rings around the field center: the
/// center itself plus ring `k` (1-based) of radius `k R / rings` holding
/// `per_ring · k` equally spaced directions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    pub directions: Vec<Vec2>,
    pub rings: Vec<usize>,
}

impl EvaluationGrid {
    pub fn rings(radius: f64, rings: usize, per_ring: usize) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) || (rings > 0 && per_ring == 0) {
            return Err(Error::InvalidGeometry(format!(
                "invalid evaluation grid: radius {radius}, {rings} rings of {per_ring}"
            )));
        }
        let mut directions = vec![[0.0, 0.0]];
        let mut ring_of = vec![0];
        for k in 1..=rings {
            let r = radius * k as f64 / rings as f64;
            let n = per_ring * k;
            for j in 0..n {
                let t = 2.0 * PI * j as f64 / n as f64;
                directions.push([r * t.cos(), r * t.sin()]);
                ring_of.push(k);
            }
        }
        Ok(Self { directions, rings: ring_of })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn outer_ring(&self) -> usize {
        self.rings.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionStrehl {
    pub direction: Vec2,
    pub ring: usize,
    /// Overlap count of the direction's footprint center on the top layer.
    pub overlap: u32,
    /// Piston-removed residual phase variance in rad².
    pub phase_variance: f64,
    /// `None` when no guide footprint covers the direction.
    pub strehl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrehlStratum {
    pub overlap: u32,
    pub count: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrehlReport {
    pub wavelength: f64,
    pub directions: Vec<DirectionStrehl>,
    /// Overlap counts `1..=G`.
    pub strata: Vec<StrehlStratum>,
}

impl StrehlReport {
    /// Mean Strehl over the defined directions of one ring.
    pub fn ring_mean(&self, ring: usize) -> Option<f64> {
        let v: Vec<f64> = self.directions.iter().filter(|d| d.ring == ring).filter_map(|d| d.strehl).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Strehl ratio of the residual `Φ_true − Φ_rec` along every evaluation
/// direction.
pub fn strehl_map(
    op: &TomoOperator,
    truth: &LayerStack,
    rec: &LayerStack,
    grid: &EvaluationGrid,
    wavelength: f64,
) -> Result<StrehlReport> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::InvalidGeometry(format!("wavelength must be positive, got {wavelength}")));
    }
    let residual = truth.difference(rec)?;
    let spec = op.spec();
    let top = op.n_layers() - 1;
    let h_top = spec.layer_heights()[top];
    let k = 2.0 * PI / wavelength;
    let directions = grid
        .directions
        .par_iter()
        .zip(&grid.rings)
        .map(|(&d, &ring)| {
            let overlap = overlap_count(spec, top, [h_top * d[0], h_top * d[1]]);
            let w = op.forward_along(d, &residual)?;
            let mean = w.masked_mean();
            let n = op.aperture_nodes().len() as f64;
            let phase_variance =
                op.aperture_nodes().iter().map(|&p| (k * (w.values()[p] - mean)).powi(2)).sum::<f64>() / n;
            let strehl = (overlap > 0).then(|| strehl_from_variance(phase_variance));
            Ok(DirectionStrehl { direction: d, ring, overlap, phase_variance, strehl })
        })
        .collect::<Result<Vec<_>>>()?;
    let strata = (1..=op.n_directions() as u32)
        .map(|o| {
            let v: Vec<f64> = directions.iter().filter(|d| d.overlap == o).filter_map(|d| d.strehl).collect();
            let count = v.len();
            let mean = (count > 0).then(|| v.iter().sum::<f64>() / count as f64);
            let variance = mean.map(|m| v.iter().map(|s| (s - m).powi(2)).sum::<f64>() / count as f64);
            StrehlStratum { overlap: o, count, mean, variance }
        })
        .collect();
    Ok(StrehlReport { wavelength, directions, strata })
}

/// Everything measured about one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconReport {
    pub errors: StratifiedError,
    pub strehl: StrehlReport,
    pub invariants: Vec<InvariantCheck>,
}

impl ReconReport {
    /// Errors stratified on `strata_layers`, Strehl on `grid` and the
    /// scaling-invariant check of the reconstruction for every direction
    /// that has a single-overlap ball.
    pub fn build(
        op: &TomoOperator,
        truth: &LayerStack,
        rec: &LayerStack,
        strata_layers: &[usize],
        grid: &EvaluationGrid,
        wavelength: f64,
    ) -> Result<Self> {
        let maps = strata_layers.iter().map(|&l| op.overlap_map(l)).collect::<Result<Vec<_>>>()?;
        let errors = relative_error(truth, rec, &maps)?;
        let strehl = strehl_map(op, truth, rec, grid, wavelength)?;
        let invariants = InvariantChecker::new(op)?.check(op, rec)?;
        Ok(Self { errors, strehl, invariants })
    }
}
