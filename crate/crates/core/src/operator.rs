//! The atmospheric tomography operator and its adjoint.
//!
//! `A` maps a layer stack to one pupil wavefront per guide-star direction,
//! `φ_g(r) = Σ_l Φ⁽ˡ⁾(r + h_l α_g)`, with the off-grid evaluation done by
//! bilinear stencils. The adjoint scatters `γ_l φ_g` back through the same
//! stencils, which makes it the exact transpose of the discrete forward map
//! with respect to the weighted layer inner product and the plain data inner
//! product.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::field::{sample_stencil, DataVector, Grid2D, LayerLayout, LayerStack, MaskedGrid, PupilField};
use crate::geometry::{in_disk, layer_bounds, GeometrySpec, OverlapMap};
use crate::{Error, Result, Vec2};

const SNAP: f64 = 1e-9;

/// Interpolation rows for one `(direction, layer)` pair: row `k` holds the
/// layer nodes and weights used to evaluate the layer at aperture node `k`.
#[derive(Debug, Clone)]
struct StencilTable {
    offsets: Vec<usize>,
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

impl StencilTable {
    fn row(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[k], self.offsets[k + 1]);
        self.nodes[a..b].iter().copied().zip(self.weights[a..b].iter().copied())
    }
}

/// Matrix-free tomography operator on a fixed discretization.
#[derive(Debug, Clone)]
pub struct TomoOperator {
    spec: GeometrySpec,
    pupil: Arc<MaskedGrid>,
    layout: Arc<LayerLayout>,
    aperture_nodes: Vec<usize>,
    tables: Vec<StencilTable>,
    aligned: bool,
}

impl TomoOperator {
    /// Build the operator with `pupil_nodes` nodes across the aperture
    /// diameter. Layer weights not summing to one are rescaled with a warning,
    /// since `A_g A_g* = I` requires `Σ γ_l = 1`.
    pub fn new(spec: &GeometrySpec, pupil_nodes: usize) -> Result<Self> {
        if pupil_nodes < 2 {
            return Err(Error::InvalidGrid(format!("pupil needs at least 2 nodes, got {pupil_nodes}")));
        }
        let total: f64 = spec.layer_weights().iter().sum();
        let spec = if (total - 1.0).abs() > 1e-12 {
            log::warn!("layer weights sum to {total}; normalizing to one");
            spec.with_normalized_weights()
        } else {
            spec.clone()
        };
        let t = spec.aperture_radius();
        let pupil_grid = Grid2D::square([0.0, 0.0], t, pupil_nodes)?;
        let spacing = pupil_grid.spacing();
        let pupil = Arc::new(MaskedGrid::from_predicate(pupil_grid, |p| in_disk(p, [0.0, 0.0], t)));

        let aperture_nodes: Vec<usize> =
            pupil.mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();

        // Layer grids are windows of the pupil lattice {-T + i h}, so shifts
        // that are whole multiples of h map pupil nodes onto layer nodes.
        let mut layers = Vec::with_capacity(spec.n_layers());
        let mut by_layer = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            let (lo, hi) = layer_bounds(&spec, l);
            let start = |v: f64| ((v + t) / spacing + SNAP).floor() as i64;
            let end = |v: f64| ((v + t) / spacing - SNAP).ceil() as i64;
            let (ix0, iy0) = (start(lo[0]), start(lo[1]));
            let nx = (end(hi[0]) - ix0 + 1).max(2) as usize;
            let ny = (end(hi[1]) - iy0 + 1).max(2) as usize;
            let origin = [-t + ix0 as f64 * spacing, -t + iy0 as f64 * spacing];
            let grid = Grid2D::new(origin, spacing, nx, ny)?;
            let centers = spec.shifts(l);
            let mut mask: Vec<bool> = grid.nodes().map(|p| centers.iter().any(|&c| in_disk(p, c, t))).collect();
            // Bilinear stencils of points near the rim of Ω_l reach up to one
            // cell outside it; those nodes belong to the discrete layer too.
            let tables: Vec<_> = centers
                .iter()
                .map(|&c| build_table(&pupil, &aperture_nodes, &grid, c))
                .collect();
            for table in &tables {
                table.nodes.iter().for_each(|&j| mask[j] = true);
            }
            layers.push(MaskedGrid::new(grid, mask)?);
            by_layer.push(tables);
        }
        let layout = Arc::new(LayerLayout::new(layers, spec.layer_weights().to_vec())?);
        let mut tables = Vec::with_capacity(spec.n_directions() * spec.n_layers());
        for g in 0..spec.n_directions() {
            for layer_tables in &by_layer {
                tables.push(layer_tables[g].clone());
            }
        }
        let on_lattice = |v: f64| ((v / spacing) - (v / spacing).round()).abs() <= SNAP;
        let aligned = (0..spec.n_layers())
            .flat_map(|l| spec.shifts(l))
            .all(|c| on_lattice(c[0]) && on_lattice(c[1]));
        Ok(Self { spec, pupil, layout, aperture_nodes, tables, aligned })
    }

    /// Geometry with the normalized layer weights actually in use.
    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }

    pub fn pupil(&self) -> &Arc<MaskedGrid> {
        &self.pupil
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn spacing(&self) -> f64 {
        self.pupil.grid().spacing()
    }

    pub fn n_directions(&self) -> usize {
        self.spec.n_directions()
    }

    pub fn n_layers(&self) -> usize {
        self.spec.n_layers()
    }

    /// Every footprint shift `h_l α_g` is a whole number of grid cells, so
    /// the stencils degenerate to single nodes.
    pub fn is_aligned(&self) -> bool {
        self.aligned
    }

    /// Row-major indices of the pupil nodes inside the aperture.
    pub fn aperture_nodes(&self) -> &[usize] {
        &self.aperture_nodes
    }

    pub fn zero_layers(&self) -> LayerStack {
        LayerStack::zeros(self.layout.clone())
    }

    pub fn zero_data(&self) -> DataVector {
        DataVector::zeros(self.pupil.clone(), self.n_directions())
    }

    /// Overlap map `ω_l` evaluated on the operator's own layer grid.
    pub fn overlap_map(&self, l: usize) -> Result<OverlapMap> {
        self.spec.check_layer(l)?;
        OverlapMap::on_grid(&self.spec, l, *self.layout.layer(l).grid())
    }

    /// Largest pupil-node distance from `h_l α_g` reached by the stencil
    /// table of `(g, l)`.
    pub fn stencil_reach(&self, g: usize, l: usize) -> f64 {
        let table = self.table(g, l);
        let grid = self.layout.layer(l).grid();
        let c = self.spec.shift(l, g);
        table
            .nodes
            .iter()
            .map(|&j| {
                let p = grid.node_at(j);
                (p[0] - c[0]).hypot(p[1] - c[1])
            })
            .fold(0.0, f64::max)
    }

    fn table(&self, g: usize, l: usize) -> &StencilTable {
        &self.tables[g * self.n_layers() + l]
    }

    fn check_layers(&self, phi: &LayerStack) -> Result<()> {
        if Arc::ptr_eq(phi.layout(), &self.layout) || **phi.layout() == *self.layout {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("layer stack does not match the operator's layer grids".into()))
        }
    }

    fn check_pupil(&self, f: &PupilField) -> Result<()> {
        if Arc::ptr_eq(f.domain(), &self.pupil) || **f.domain() == *self.pupil {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("pupil field does not match the operator's pupil grid".into()))
        }
    }

    fn check_data(&self, data: &DataVector) -> Result<()> {
        if data.len() != self.n_directions() {
            return Err(Error::ShapeMismatch(format!(
                "data has {} directions, operator has {}",
                data.len(),
                self.n_directions()
            )));
        }
        data.fields().iter().try_for_each(|f| self.check_pupil(f))
    }

    fn forward_direction_unchecked(&self, g: usize, phi: &LayerStack) -> PupilField {
        let mut out = PupilField::zeros(self.pupil.clone());
        let values = out.values_mut();
        for l in 0..self.n_layers() {
            let table = self.table(g, l);
            let layer = phi.layer(l);
            for (k, &p) in self.aperture_nodes.iter().enumerate() {
                values[p] += table.row(k).map(|(j, w)| w * layer[j]).sum::<f64>();
            }
        }
        out
    }

    /// `A_g Φ`.
    pub fn forward_direction(&self, g: usize, phi: &LayerStack) -> Result<PupilField> {
        self.spec.check_direction(g)?;
        self.check_layers(phi)?;
        Ok(self.forward_direction_unchecked(g, phi))
    }

    /// `A Φ`.
    pub fn forward(&self, phi: &LayerStack) -> Result<DataVector> {
        self.check_layers(phi)?;
        let fields = (0..self.n_directions())
            .into_par_iter()
            .map(|g| self.forward_direction_unchecked(g, phi))
            .collect();
        DataVector::new(fields)
    }

    /// Wavefront along an arbitrary direction `alpha` (radians), evaluated
    /// with freshly computed stencils. Layer values outside the layer grids
    /// count as zero.
    pub fn forward_along(&self, alpha: Vec2, phi: &LayerStack) -> Result<PupilField> {
        self.check_layers(phi)?;
        let mut out = PupilField::zeros(self.pupil.clone());
        let pupil_grid = *self.pupil.grid();
        let values = out.values_mut();
        for l in 0..self.n_layers() {
            let h = self.spec.layer_heights()[l];
            let grid = self.layout.layer(l).grid();
            let layer = phi.layer(l);
            for &p in &self.aperture_nodes {
                let r = pupil_grid.node_at(p);
                values[p] += sample_stencil(grid, [r[0] + h * alpha[0], r[1] + h * alpha[1]]).apply(layer);
            }
        }
        Ok(out)
    }

    fn adjoint_layer(&self, l: usize, fields: &[(usize, &PupilField)]) -> Vec<f64> {
        let gamma = self.layout.weights()[l];
        let mut out = vec![0.0; self.layout.layer(l).grid().len()];
        for &(g, field) in fields {
            let table = self.table(g, l);
            let values = field.values();
            for (k, &p) in self.aperture_nodes.iter().enumerate() {
                let v = gamma * values[p];
                if v == 0.0 {
                    continue;
                }
                for (j, w) in table.row(k) {
                    out[j] += w * v;
                }
            }
        }
        out
    }

    fn adjoint_of(&self, fields: &[(usize, &PupilField)]) -> Result<LayerStack> {
        // Directions are accumulated in ascending order within each layer,
        // so the result does not depend on thread scheduling.
        let values = (0..self.n_layers())
            .into_par_iter()
            .map(|l| self.adjoint_layer(l, fields))
            .collect();
        LayerStack::from_values(self.layout.clone(), values)
    }

    /// `A* φ = Σ_g A_g* φ_g`.
    pub fn adjoint(&self, data: &DataVector) -> Result<LayerStack> {
        self.check_data(data)?;
        let fields: Vec<_> = data.fields().iter().enumerate().collect();
        self.adjoint_of(&fields)
    }

    /// `A_g* ψ`.
    pub fn adjoint_direction(&self, g: usize, psi: &PupilField) -> Result<LayerStack> {
        self.spec.check_direction(g)?;
        self.check_pupil(psi)?;
        self.adjoint_of(&[(g, psi)])
    }

    /// `A_g A_g* ψ`; the identity when the shifts are aligned with the grid.
    pub fn apply_direction_gram(&self, g: usize, psi: &PupilField) -> Result<PupilField> {
        let back = self.adjoint_direction(g, psi)?;
        Ok(self.forward_direction_unchecked(g, &back))
    }

    /// `A* A Φ`.
    pub fn normal_apply(&self, phi: &LayerStack) -> Result<LayerStack> {
        let data = self.forward(phi)?;
        self.adjoint(&data)
    }

    /// Estimate `λ_max(A*A) = ‖A‖²` by power iteration from a seeded random
    /// start. Returns the final Rayleigh quotient.
    pub fn estimate_normal_norm(&self, iterations: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut v = LayerStack::from_fn(self.layout.clone(), |_, _| normal.sample(&mut rng));
        let n = v.norm();
        v.scale(1.0 / n);
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let w = self.normal_apply(&v)?;
            lambda = crate::field::inner_layers(&v, &w)?;
            let wn = w.norm();
            if wn == 0.0 {
                return Ok(0.0);
            }
            v = w.scaled(1.0 / wn);
        }
        Ok(lambda)
    }
}

fn build_table(pupil: &MaskedGrid, aperture_nodes: &[usize], layer: &Grid2D, shift: Vec2) -> StencilTable {
    let mut offsets = Vec::with_capacity(aperture_nodes.len() + 1);
    let mut nodes = Vec::with_capacity(aperture_nodes.len() * 4);
    let mut weights = Vec::with_capacity(aperture_nodes.len() * 4);
    offsets.push(0);
    for &p in aperture_nodes {
        let r = pupil.grid().node_at(p);
        for &(j, w) in sample_stencil(layer, [r[0] + shift[0], r[1] + shift[1]]).entries() {
            nodes.push(j);
            weights.push(w);
        }
        offsets.push(nodes.len());
    }
    StencilTable { offsets, nodes, weights }
}

/// Gaussian measurement noise with covariance `σ² I`, `σ² = 1/n_photons`.
///
/// `σ` is a phase in radians at the sensing wavelength; it is converted to
/// optical path before being added to the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    variance: f64,
    wavelength: f64,
    seed: u64,
}

impl NoiseModel {
    pub fn new(variance: f64, wavelength: f64, seed: u64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidGeometry(format!("noise variance must be positive, got {variance}")));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::InvalidGeometry(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self { variance, wavelength, seed })
    }

    pub fn from_photons(n_photons: f64, wavelength: f64, seed: u64) -> Result<Self> {
        if !(n_photons.is_finite() && n_photons > 0.0) {
            return Err(Error::InvalidGeometry(format!("photon count must be positive, got {n_photons}")));
        }
        Self::new(1.0 / n_photons, wavelength, seed)
    }

    /// Phase variance `σ²` in rad².
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Phase standard deviation `σ` in radians.
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Standard deviation in optical path (meters).
    pub fn path_sigma(&self) -> f64 {
        self.sigma() * self.wavelength / (2.0 * PI)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Add i.i.d. noise to every in-aperture sample, in direction-major,
    /// row-major node order.
    pub fn add_noise(&self, data: &DataVector) -> DataVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.path_sigma()).expect("positive sigma");
        let mut out = data.clone();
        for g in 0..out.len() {
            let field = out.field_mut(g);
            let mask = field.domain().mask().to_vec();
            for (v, inside) in field.values_mut().iter_mut().zip(mask) {
                if inside {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{inner_data, inner_layers};
    use crate::geometry::ring_directions;

    fn random_stack(op: &TomoOperator, seed: u64) -> LayerStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        LayerStack::from_fn(op.layout().clone(), |_, _| n.sample(&mut rng))
    }

    fn random_data(op: &TomoOperator, seed: u64) -> DataVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let fields = (0..op.n_directions())
            .map(|_| PupilField::from_fn(op.pupil().clone(), |_| n.sample(&mut rng)))
            .collect();
        DataVector::new(fields).unwrap()
    }

    fn six_star() -> GeometrySpec {
        GeometrySpec::new(
            21.0,
            ring_directions(6, 3e-4, 0.2),
            vec![0.0, 4000.0, 12700.0],
            vec![0.75, 0.15, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn ground_layer_forward_is_restriction() {
        let spec = GeometrySpec::new(2.0, ring_directions(3, 1e-3, 0.0), vec![0.0], vec![1.0]).unwrap();
        let op = TomoOperator::new(&spec, 17).unwrap();
        let phi = random_stack(&op, 1);
        let data = op.forward(&phi).unwrap();
        let layer_grid = op.layout().layer(0).grid();
        assert_eq!(layer_grid, op.pupil().grid());
        for g in 0..3 {
            for &p in op.aperture_nodes() {
                assert_eq!(data.field(g).values()[p], phi.layer(0)[p]);
            }
        }
    }

    #[test]
    fn affine_layers_are_reproduced_exactly() {
        let spec = six_star();
        let op = TomoOperator::new(&spec, 33).unwrap();
        let coef = [(0.3, -1.2, 0.4), (-2.0, 0.7, 1.1), (0.9, 0.05, -0.6)];
        let phi = LayerStack::from_fn(op.layout().clone(), |l, p| {
            let (a, b, c) = coef[l];
            a + b * p[0] + c * p[1]
        });
        let data = op.forward(&phi).unwrap();
        let grid = op.pupil().grid();
        for g in 0..6 {
            for &p in op.aperture_nodes() {
                let r = grid.node_at(p);
                let expected: f64 = (0..3)
                    .map(|l| {
                        let s = spec.shift(l, g);
                        let (a, b, c) = coef[l];
                        a + b * (r[0] + s[0]) + c * (r[1] + s[1])
                    })
                    .sum();
                assert!((data.field(g).values()[p] - expected).abs() < 1e-11, "g={g} node={p}");
            }
        }
    }

    #[test]
    fn weights_are_normalized() {
        let spec = GeometrySpec::new(1.0, vec![[0.0, 0.0]], vec![0.0, 100.0], vec![3.0, 1.0]).unwrap();
        let op = TomoOperator::new(&spec, 9).unwrap();
        assert_eq!(op.layout().weights(), &[0.75, 0.25]);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let op = TomoOperator::new(&six_star(), 17).unwrap();
        let z = op.adjoint(&op.zero_data()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert_eq!(op.normal_apply(&op.zero_layers()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn dot_test_six_star() {
        let op = TomoOperator::new(&six_star(), 41).unwrap();
        for seed in 0..20 {
            let phi = random_stack(&op, seed);
            let data = random_data(&op, 1000 + seed);
            let lhs = inner_data(&op.forward(&phi).unwrap(), &data).unwrap();
            let rhs = inner_layers(&phi, &op.adjoint(&data).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * phi.norm() * data.norm());
        }
    }

    #[test]
    fn single_direction_unshifted_adjoint_is_extension() {
        let spec = GeometrySpec::new(1.0, vec![[0.0, 0.0]], vec![0.0], vec![1.0]).unwrap();
        let op = TomoOperator::new(&spec, 21).unwrap();
        let data = random_data(&op, 4);
        let back = op.adjoint(&data).unwrap();
        assert_eq!(back.layer(0), data.field(0).values());
    }

    #[test]
    fn stencils_stay_within_one_diagonal_of_footprint() {
        let op = TomoOperator::new(&six_star(), 47).unwrap();
        let bound = 21.0 + op.spacing() * std::f64::consts::SQRT_2;
        for g in 0..6 {
            for l in 0..3 {
                assert!(op.stencil_reach(g, l) <= bound);
            }
        }
    }

    #[test]
    fn normal_operator_is_self_adjoint_and_psd() {
        let op = TomoOperator::new(&six_star(), 25).unwrap();
        for seed in 0..20 {
            let a = random_stack(&op, seed);
            let b = random_stack(&op, seed + 100);
            let nab = inner_layers(&op.normal_apply(&a).unwrap(), &b).unwrap();
            let anb = inner_layers(&a, &op.normal_apply(&b).unwrap()).unwrap();
            assert!((nab - anb).abs() <= 1e-10 * nab.abs().max(anb.abs()));
            assert!(inner_layers(&op.normal_apply(&a).unwrap(), &a).unwrap() >= 0.0);
        }
    }

    #[test]
    fn forward_is_linear() {
        let op = TomoOperator::new(&six_star(), 25).unwrap();
        let (a, b) = (random_stack(&op, 1), random_stack(&op, 2));
        let mut combo = a.scaled(2.5);
        combo.axpy(-0.75, &b);
        let lhs = op.forward(&combo).unwrap();
        let fa = op.forward(&a).unwrap();
        let fb = op.forward(&b).unwrap();
        for g in 0..6 {
            for (i, v) in lhs.field(g).values().iter().enumerate() {
                let e = 2.5 * fa.field(g).values()[i] - 0.75 * fb.field(g).values()[i];
                assert!((v - e).abs() <= 1e-12 * (1.0 + e.abs()));
            }
        }
    }

    #[test]
    fn aligned_gram_is_identity() {
        let op = TomoOperator::new(&six_star(), 65).unwrap();
        let aligned = six_star().aligned_to_lattice(op.spacing()).unwrap();
        let op = TomoOperator::new(&aligned, 65).unwrap();
        let data = random_data(&op, 9);
        for g in 0..6 {
            let psi = data.field(g);
            let out = op.apply_direction_gram(g, psi).unwrap();
            let err = out.difference(psi).unwrap().norm();
            assert!(err <= 1e-14 * psi.norm(), "g={g} err={err}");
        }
    }

    #[test]
    fn forward_along_guide_direction_matches_table() {
        let op = TomoOperator::new(&six_star(), 33).unwrap();
        let phi = random_stack(&op, 3);
        for g in [0, 4] {
            let a = op.forward_direction(g, &phi).unwrap();
            let b = op.forward_along(op.spec().direction(g), &phi).unwrap();
            assert!(a.difference(&b).unwrap().norm() <= 1e-12 * a.norm());
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let a = TomoOperator::new(&six_star(), 17).unwrap();
        let b = TomoOperator::new(&six_star(), 21).unwrap();
        assert!(a.forward(&b.zero_layers()).is_err());
        assert!(a.adjoint(&b.zero_data()).is_err());
        assert!(a.forward_direction(6, &a.zero_layers()).is_err());
    }

    #[test]
    fn power_iteration_bounds_rayleigh_quotients() {
        let op = TomoOperator::new(&six_star(), 21).unwrap();
        let lambda = op.estimate_normal_norm(30, 5).unwrap();
        // Aligned-shift theory gives ‖A‖² ≤ G max γ_l-ish; just sanity-check
        // against random Rayleigh quotients.
        assert!(lambda > 0.0 && lambda <= 6.0 + 1e-9);
        for seed in 0..5 {
            let v = random_stack(&op, seed);
            let q = inner_layers(&op.normal_apply(&v).unwrap(), &v).unwrap() / v.norm().powi(2);
            assert!(q <= lambda * 1.05);
        }
    }

    #[test]
    fn noise_level_from_photon_count() {
        let m = NoiseModel::from_photons(10000.0, 589e-9, 1).unwrap();
        assert!((m.sigma() - 0.01).abs() < 1e-15);
        assert!(NoiseModel::from_photons(0.0, 589e-9, 1).is_err());
    }

    #[test]
    fn noise_is_deterministic_and_has_the_right_variance() {
        let spec = GeometrySpec::new(21.0, ring_directions(6, 3e-4, 0.0), vec![0.0], vec![1.0]).unwrap();
        let op = TomoOperator::new(&spec, 160).unwrap();
        let clean = op.zero_data();
        let m = NoiseModel::from_photons(10000.0, 589e-9, 42).unwrap();
        let a = m.add_noise(&clean);
        assert_eq!(a, m.add_noise(&clean));
        let samples: Vec<f64> = a
            .fields()
            .iter()
            .flat_map(|f| op.aperture_nodes().iter().map(move |&p| f.values()[p]))
            .collect();
        assert!(samples.len() >= 100_000);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let expected = m.path_sigma().powi(2);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
        // outside the aperture the data stays zero
        assert!(a.field(0).values().iter().zip(op.pupil().mask()).all(|(v, &m)| m || *v == 0.0));
    }
}
