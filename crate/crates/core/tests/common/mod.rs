#![allow(dead_code)]

use layertomo::field::{DataVector, LayerStack, PupilField};
use layertomo::geometry::{ring_directions, GeometrySpec, ARCSEC};
use layertomo::operator::TomoOperator;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Six stars on a ring of `radius_arcsec` in front of a 42 m aperture,
/// with shifts snapped to the pupil lattice when `aligned`.
pub fn six_star(n: usize, radius_arcsec: f64, heights: &[f64], weights: &[f64], aligned: bool) -> TomoOperator {
    let spec = GeometrySpec::new(
        21.0,
        ring_directions(6, radius_arcsec * ARCSEC, 0.0),
        heights.to_vec(),
        weights.to_vec(),
    )
    .unwrap();
    let op = TomoOperator::new(&spec, n).unwrap();
    if !aligned {
        return op;
    }
    let spec = spec.aligned_to_lattice(op.spacing()).unwrap();
    let op = TomoOperator::new(&spec, n).unwrap();
    assert!(op.is_aligned());
    op
}

pub fn random_layers(op: &TomoOperator, rng: &mut ChaCha8Rng) -> LayerStack {
    LayerStack::from_fn(op.layout().clone(), |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_data(op: &TomoOperator, rng: &mut ChaCha8Rng) -> DataVector {
    let fields = (0..op.n_directions())
        .map(|_| PupilField::from_fn(op.pupil().clone(), |_| rng.random_range(-1.0..1.0)))
        .collect();
    DataVector::new(fields).unwrap()
}

/// The operator as a dense matrix over active layer nodes and aperture
/// samples, assembled column by column from unit layer vectors.
pub struct Dense {
    /// `(layer, node)` of every column.
    pub cols: Vec<(usize, usize)>,
    /// `γ_l` of every column.
    pub gamma: DVector<f64>,
    pub a: DMatrix<f64>,
    rows_per_direction: usize,
}

impl Dense {
    pub fn assemble(op: &TomoOperator) -> Self {
        let layout = op.layout();
        let cols: Vec<(usize, usize)> = (0..layout.n_layers())
            .flat_map(|l| {
                layout.layer(l).mask().iter().enumerate().filter(|(_, &m)| m).map(move |(i, _)| (l, i))
            })
            .collect();
        let gamma = DVector::from_iterator(cols.len(), cols.iter().map(|&(l, _)| layout.weights()[l]));
        let rows_per_direction = op.aperture_nodes().len();
        let mut a = DMatrix::zeros(rows_per_direction * op.n_directions(), cols.len());
        for (j, &(l, i)) in cols.iter().enumerate() {
            let mut e = op.zero_layers();
            e.layer_mut(l)[i] = 1.0;
            let column = Self::data_vec(op, &op.forward(&e).unwrap());
            a.set_column(j, &column);
        }
        Self { cols, gamma, a, rows_per_direction }
    }

    pub fn layers_vec(&self, phi: &LayerStack) -> DVector<f64> {
        DVector::from_iterator(self.cols.len(), self.cols.iter().map(|&(l, i)| phi.layer(l)[i]))
    }

    pub fn to_layers(&self, op: &TomoOperator, v: &DVector<f64>) -> LayerStack {
        let mut phi = op.zero_layers();
        for (&(l, i), x) in self.cols.iter().zip(v.iter()) {
            phi.layer_mut(l)[i] = *x;
        }
        phi
    }

    pub fn data_vec(op: &TomoOperator, data: &DataVector) -> DVector<f64> {
        let nodes = op.aperture_nodes();
        DVector::from_iterator(
            nodes.len() * data.len(),
            data.fields().iter().flat_map(|f| nodes.iter().map(move |&i| f.values()[i])),
        )
    }

    /// Rows of direction `g`.
    pub fn direction_rows(&self, g: usize) -> std::ops::Range<usize> {
        g * self.rows_per_direction..(g + 1) * self.rows_per_direction
    }

    /// `A* = ΓAᵀ`: the pupil cell area cancels against the layer one.
    pub fn adjoint(&self, r: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(r).component_mul(&self.gamma)
    }
}
