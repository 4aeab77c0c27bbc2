//! Frozen von Kármán phase screens for test atmospheres.
//!
//! Screens are drawn by FFT synthesis on a zero-padded periodic grid, with
//! Lane-style subharmonics added for the frequencies below the FFT's lowest
//! bin. Values are returned as optical path (meters) using a 500 nm reference
//! wavelength for the Fried parameter.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::field::{Grid2D, LayerLayout, LayerStack};
use crate::geometry::GeometrySpec;
use crate::{Error, Result};

/// Wavelength at which the Fried parameter is quoted.
pub const R0_WAVELENGTH: f64 = 500e-9;

const MIN_SUBHARMONIC_LEVELS: u32 = 3;
const MAX_SUBHARMONIC_LEVELS: u32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceSpec {
    fried_parameter: f64,
    outer_scale: f64,
    layer_strengths: Vec<f64>,
    seed: u64,
}

impl TurbulenceSpec {
    pub fn new(fried_parameter: f64, outer_scale: f64, layer_strengths: Vec<f64>, seed: u64) -> Result<Self> {
        if !(fried_parameter.is_finite() && fried_parameter > 0.0) {
            return Err(Error::InvalidTurbulence(format!("r0 must be positive, got {fried_parameter}")));
        }
        if !(outer_scale.is_finite() && outer_scale > 0.0) {
            return Err(Error::InvalidTurbulence(format!("L0 must be positive, got {outer_scale}")));
        }
        if layer_strengths.is_empty() {
            return Err(Error::InvalidTurbulence("no layer strengths".into()));
        }
        if let Some(c) = layer_strengths.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidTurbulence(format!("layer strength {c} is negative")));
        }
        let total: f64 = layer_strengths.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTurbulence(format!("layer strengths sum to {total}, expected 1")));
        }
        Ok(Self { fried_parameter, outer_scale, layer_strengths, seed })
    }

    pub fn fried_parameter(&self) -> f64 {
        self.fried_parameter
    }

    pub fn outer_scale(&self) -> f64 {
        self.outer_scale
    }

    pub fn layer_strengths(&self) -> &[f64] {
        &self.layer_strengths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Fried parameter of a layer carrying fraction `c` of the turbulence,
    /// `r0 c^{-3/5}`. Infinite for an empty layer.
    pub fn layer_fried_parameter(&self, l: usize) -> f64 {
        let c = self.layer_strengths[l];
        if c == 0.0 {
            f64::INFINITY
        } else {
            self.fried_parameter * c.powf(-0.6)
        }
    }
}

/// von Kármán phase power spectrum in rad² m², `f` in cycles per meter.
pub fn von_karman_psd(f: f64, r0: f64, outer_scale: f64) -> f64 {
    0.023 * r0.powf(-5.0 / 3.0) * (f * f + 1.0 / (outer_scale * outer_scale)).powf(-11.0 / 6.0)
}

/// Draw one screen per layer on the layout's grids.
pub fn generate_atmosphere(
    tspec: &TurbulenceSpec,
    spec: &GeometrySpec,
    layout: &Arc<LayerLayout>,
) -> Result<LayerStack> {
    if tspec.layer_strengths.len() != spec.n_layers() || layout.n_layers() != spec.n_layers() {
        return Err(Error::ShapeMismatch(format!(
            "{} layer strengths, {} geometry layers, {} layer grids",
            tspec.layer_strengths.len(),
            spec.n_layers(),
            layout.n_layers()
        )));
    }
    let values = (0..spec.n_layers())
        .into_par_iter()
        .map(|l| {
            let grid = layout.layer(l).grid();
            let r0 = tspec.layer_fried_parameter(l);
            if r0.is_infinite() {
                return vec![0.0; grid.len()];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(tspec.seed);
            rng.set_stream(l as u64);
            let mut phase = fft_screen(grid, r0, tspec.outer_scale, &mut rng);
            add_subharmonics(&mut phase, grid, r0, tspec.outer_scale, &mut rng);
            let to_path = R0_WAVELENGTH / (2.0 * PI);
            phase.iter_mut().for_each(|v| *v *= to_path);
            phase
        })
        .collect();
    let mut stack = LayerStack::from_values(layout.clone(), values)?;
    stack.remove_piston();
    Ok(stack)
}

fn padded_size(grid: &Grid2D) -> usize {
    (2 * grid.nx().max(grid.ny())).next_power_of_two()
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn fft_screen(grid: &Grid2D, r0: f64, outer_scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = padded_size(grid);
    let df = 1.0 / (n as f64 * grid.spacing());
    let freq = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * df;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n * n];
    for ky in 0..n {
        for kx in 0..n {
            let noise = complex_normal(rng);
            if kx == 0 && ky == 0 {
                continue;
            }
            let f = freq(kx).hypot(freq(ky));
            spectrum[ky * n + kx] = noise * (von_karman_psd(f, r0, outer_scale).sqrt() * df);
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    for row in spectrum.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            column[y] = spectrum[y * n + x];
        }
        fft.process(&mut column);
        for y in 0..n {
            spectrum[y * n + x] = column[y];
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny() {
        for ix in 0..grid.nx() {
            out.push(spectrum[iy * n + ix].re);
        }
    }
    out
}

fn subharmonic_levels(padded_extent: f64, outer_scale: f64) -> u32 {
    let target = 1.0 / (10.0 * outer_scale);
    let mut p = MIN_SUBHARMONIC_LEVELS;
    while p < MAX_SUBHARMONIC_LEVELS && 1.0 / (3f64.powi(p as i32) * padded_extent) >= target {
        p += 1;
    }
    p
}

fn add_subharmonics(phase: &mut [f64], grid: &Grid2D, r0: f64, outer_scale: f64, rng: &mut ChaCha8Rng) {
    let extent = padded_size(grid) as f64 * grid.spacing();
    let origin = grid.origin();
    for p in 1..=subharmonic_levels(extent, outer_scale) {
        let df = 1.0 / (3f64.powi(p as i32) * extent);
        for j in -1i32..=1 {
            for i in -1i32..=1 {
                if i == 0 && j == 0 {
                    continue;
                }
                let (fx, fy) = (i as f64 * df, j as f64 * df);
                let c = complex_normal(rng) * (von_karman_psd(fx.hypot(fy), r0, outer_scale).sqrt() * df);
                for (k, v) in phase.iter_mut().enumerate() {
                    let (ix, iy) = (k % grid.nx(), k / grid.nx());
                    let x = (ix as f64 * grid.spacing(), iy as f64 * grid.spacing());
                    let arg = 2.0 * PI * (fx * (x.0 + origin[0]) + fy * (x.1 + origin[1]));
                    *v += c.re * arg.cos() - c.im * arg.sin();
                }
            }
        }
    }
}
