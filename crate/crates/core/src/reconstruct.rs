//! Iterative solvers for `AΦ = φ`.
//!
//! All solvers record residual histories and accept an observer that sees
//! every iterate, which is how the range-of-adjoint checks in the analysis
//! module are run during a solve.

use crate::field::{inner_layers, DataVector, LayerStack};
use crate::operator::TomoOperator;
use crate::{Error, Result};

/// Residual growth (relative to the initial residual) treated as divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Sweeps inspected by the Kaczmarz oscillation check.
const OSCILLATION_WINDOW: usize = 10;
const OSCILLATION_DECREASE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Landweber,
    Kaczmarz,
    TikhonovCg,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Landweber => "landweber",
            Method::Kaczmarz => "kaczmarz",
            Method::TikhonovCg => "tikhonov-cg",
        }
    }
}

/// Kaczmarz step size `β_g` in sweep `i` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `β0 / i`.
    Harmonic(f64),
    /// A fixed step per direction.
    PerDirection(Vec<f64>),
}

impl StepSchedule {
    pub fn step(&self, sweep: usize, g: usize) -> f64 {
        match self {
            StepSchedule::Constant(b) => *b,
            StepSchedule::Harmonic(b) => *b / sweep as f64,
            StepSchedule::PerDirection(b) => b[g],
        }
    }

    fn validate(&self, directions: usize) -> Result<()> {
        let steps: &[f64] = match self {
            StepSchedule::Constant(b) | StepSchedule::Harmonic(b) => std::slice::from_ref(b),
            StepSchedule::PerDirection(b) => {
                if b.len() != directions {
                    return Err(Error::InvalidSolver(format!(
                        "{} per-direction steps for {directions} directions",
                        b.len()
                    )));
                }
                b
            }
        };
        match steps.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            Some(b) => Err(Error::InvalidSolver(format!("step size must be positive, got {b}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub method: Method,
    /// Landweber step; `None` picks `1/λ_max(A*A)`.
    pub step: Option<f64>,
    pub schedule: StepSchedule,
    pub alpha: f64,
    pub max_iterations: usize,
    /// Relative residual at which to stop. Landweber and Kaczmarz measure the
    /// data residual, CG the normal-equation residual.
    pub tolerance: f64,
    pub initial: Option<LayerStack>,
    pub power_iterations: usize,
    pub power_seed: u64,
}

impl SolveConfig {
    fn base(method: Method) -> Self {
        Self {
            method,
            step: None,
            schedule: StepSchedule::Harmonic(1.0),
            alpha: 0.0,
            max_iterations: 100,
            tolerance: 1e-6,
            initial: None,
            power_iterations: 30,
            power_seed: 0,
        }
    }

    pub fn landweber() -> Self {
        Self::base(Method::Landweber)
    }

    pub fn kaczmarz(schedule: StepSchedule) -> Self {
        Self { schedule, ..Self::base(Method::Kaczmarz) }
    }

    pub fn tikhonov_cg(alpha: f64) -> Self {
        Self { alpha, ..Self::base(Method::TikhonovCg) }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn with_initial(mut self, initial: LayerStack) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn validate(&self, op: &TomoOperator) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidSolver("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::InvalidSolver(format!("tolerance must be non-negative, got {}", self.tolerance)));
        }
        if let Some(b) = self.step {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidSolver(format!("step size must be positive, got {b}")));
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidSolver(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.method == Method::TikhonovCg && self.alpha <= 0.0 {
            return Err(Error::InvalidSolver("tikhonov-cg needs alpha > 0".into()));
        }
        if self.method == Method::Kaczmarz {
            self.schedule.validate(op.n_directions())?;
        }
        if let Some(x0) = &self.initial {
            x0.check_compatible(&op.zero_layers())?;
        }
        Ok(())
    }
}

/// Residuals after one update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Iteration (Landweber, CG) or sweep (Kaczmarz); 0 is the initial guess.
    pub iteration: usize,
    /// Direction updated in this Kaczmarz sub-step.
    pub direction: Option<usize>,
    /// `‖A_gΦ − φ_g‖` for every direction.
    pub direction_residuals: Vec<f64>,
    /// `‖AΦ − φ‖`.
    pub total_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveHistory {
    pub method: Method,
    pub records: Vec<IterationRecord>,
    pub data_norm: f64,
    /// Step actually used by Landweber, or `λ_max` estimate used to derive it.
    pub step: Option<f64>,
    pub lambda_max: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped at `max_iterations` without meeting the tolerance.
    pub max_iterations_reached: bool,
    /// Kaczmarz only: the end-of-sweep residual stopped decreasing while still
    /// above tolerance.
    pub oscillating: bool,
}

impl SolveHistory {
    fn new(method: Method, data_norm: f64) -> Self {
        Self {
            method,
            records: Vec::new(),
            data_norm,
            step: None,
            lambda_max: None,
            iterations: 0,
            converged: false,
            max_iterations_reached: false,
            oscillating: false,
        }
    }

    pub fn initial_residual(&self) -> f64 {
        self.records.first().map_or(0.0, |r| r.total_residual)
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.total_residual)
    }

    /// End-of-sweep (or end-of-iteration) total residuals, starting with the
    /// initial guess.
    pub fn sweep_residuals(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut last = None;
        for r in &self.records {
            if last != Some(r.iteration) {
                out.push(r.total_residual);
                last = Some(r.iteration);
            } else if let Some(v) = out.last_mut() {
                *v = r.total_residual;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub estimate: LayerStack,
    pub history: SolveHistory,
}

fn residual(op: &TomoOperator, phi: &LayerStack, data: &DataVector) -> Result<DataVector> {
    data.difference(&op.forward(phi)?)
}

fn record(iteration: usize, direction: Option<usize>, r: &DataVector) -> IterationRecord {
    let direction_residuals: Vec<f64> = r.fields().iter().map(|f| f.norm()).collect();
    let total_residual = direction_residuals.iter().map(|v| v * v).sum::<f64>().sqrt();
    IterationRecord { iteration, direction, direction_residuals, total_residual }
}

fn relative(value: f64, data_norm: f64) -> f64 {
    if data_norm > 0.0 {
        value / data_norm
    } else {
        value
    }
}

fn check_divergence(history: &SolveHistory, iteration: usize) -> Result<()> {
    let initial = history.initial_residual();
    let current = history.final_residual();
    if !current.is_finite() || (initial > 0.0 && current > DIVERGENCE_FACTOR * initial) {
        return Err(Error::Diverged { iteration, residual: current, initial });
    }
    Ok(())
}

fn starting_point(op: &TomoOperator, cfg: &SolveConfig) -> LayerStack {
    cfg.initial.clone().unwrap_or_else(|| op.zero_layers())
}

/// Run the method selected in `cfg`.
pub fn solve(op: &TomoOperator, data: &DataVector, cfg: &SolveConfig) -> Result<Solution> {
    solve_observed(op, data, cfg, |_, _| {})
}

/// As [`solve`], calling `observer(iteration, iterate)` on the initial guess
/// and after every update (every Kaczmarz sub-step).
pub fn solve_observed(
    op: &TomoOperator,
    data: &DataVector,
    cfg: &SolveConfig,
    observer: impl FnMut(usize, &LayerStack),
) -> Result<Solution> {
    match cfg.method {
        Method::Landweber => landweber_observed(op, data, cfg, observer),
        Method::Kaczmarz => kaczmarz_observed(op, data, cfg, observer),
        Method::TikhonovCg => tikhonov_cg_observed(op, data, cfg, observer),
    }
}

pub fn landweber(op: &TomoOperator, data: &DataVector, cfg: &SolveConfig) -> Result<Solution> {
    landweber_observed(op, data, cfg, |_, _| {})
}

/// `Φ_{k+1} = Φ_k + β A*(φ − AΦ_k)`.
pub fn landweber_observed(
    op: &TomoOperator,
    data: &DataVector,
    cfg: &SolveConfig,
    mut observer: impl FnMut(usize, &LayerStack),
) -> Result<Solution> {
    cfg.validate(op)?;
    let lambda = op.estimate_normal_norm(cfg.power_iterations, cfg.power_seed)?;
    let step = match cfg.step {
        Some(b) => b,
        None if lambda > 0.0 => 1.0 / lambda,
        None => 1.0,
    };
    if lambda > 0.0 && step >= 2.0 / lambda {
        return Err(Error::UnstableStep { step, limit: 2.0 / lambda });
    }
    let mut history = SolveHistory::new(Method::Landweber, data.norm());
    history.step = Some(step);
    history.lambda_max = Some(lambda);

    let mut x = starting_point(op, cfg);
    let mut r = residual(op, &x, data)?;
    history.records.push(record(0, None, &r));
    observer(0, &x);
    if relative(history.final_residual(), history.data_norm) <= cfg.tolerance {
        history.converged = true;
        return Ok(Solution { estimate: x, history });
    }
    for k in 1..=cfg.max_iterations {
        x.axpy(step, &op.adjoint(&r)?);
        r = residual(op, &x, data)?;
        history.records.push(record(k, None, &r));
        history.iterations = k;
        observer(k, &x);
        check_divergence(&history, k)?;
        if relative(history.final_residual(), history.data_norm) <= cfg.tolerance {
            history.converged = true;
            break;
        }
    }
    history.max_iterations_reached = !history.converged;
    Ok(Solution { estimate: x, history })
}

pub fn kaczmarz(op: &TomoOperator, data: &DataVector, cfg: &SolveConfig) -> Result<Solution> {
    kaczmarz_observed(op, data, cfg, |_, _| {})
}

/// Landweber-Kaczmarz: within each sweep `i`, for `g = 1..G`,
/// `Φ ← Φ + β_g(i) A_g*(φ_g − A_gΦ)`. Residuals of all directions are
/// recorded after every sub-step.
pub fn kaczmarz_observed(
    op: &TomoOperator,
    data: &DataVector,
    cfg: &SolveConfig,
    mut observer: impl FnMut(usize, &LayerStack),
) -> Result<Solution> {
    cfg.validate(op)?;
    let mut history = SolveHistory::new(Method::Kaczmarz, data.norm());
    let mut x = starting_point(op, cfg);
    let r = residual(op, &x, data)?;
    history.records.push(record(0, None, &r));
    observer(0, &x);
    if relative(history.final_residual(), history.data_norm) <= cfg.tolerance {
        history.converged = true;
        return Ok(Solution { estimate: x, history });
    }
    let mut sweep_totals = vec![history.final_residual()];
    for sweep in 1..=cfg.max_iterations {
        for g in 0..op.n_directions() {
            let beta = cfg.schedule.step(sweep, g);
            let rg = data.field(g).difference(&op.forward_direction(g, &x)?)?;
            x.axpy(beta, &op.adjoint_direction(g, &rg)?);
            let r = residual(op, &x, data)?;
            history.records.push(record(sweep, Some(g), &r));
            observer(sweep, &x);
        }
        history.iterations = sweep;
        check_divergence(&history, sweep)?;
        sweep_totals.push(history.final_residual());
        if relative(history.final_residual(), history.data_norm) <= cfg.tolerance {
            history.converged = true;
            break;
        }
    }
    history.max_iterations_reached = !history.converged;
    history.oscillating = !history.converged && stalled(&sweep_totals);
    Ok(Solution { estimate: x, history })
}

fn stalled(sweep_totals: &[f64]) -> bool {
    if sweep_totals.len() <= OSCILLATION_WINDOW {
        return false;
    }
    let recent = &sweep_totals[sweep_totals.len() - OSCILLATION_WINDOW - 1..];
    let start = recent[0];
    let best = recent[1..].iter().copied().fold(f64::INFINITY, f64::min);
    best >= start * (1.0 - OSCILLATION_DECREASE)
}

pub fn tikhonov_cg(op: &TomoOperator, data: &DataVector, cfg: &SolveConfig) -> Result<Solution> {
    tikhonov_cg_observed(op, data, cfg, |_, _| {})
}

/// Conjugate gradients on `(A*A + αI)Φ = A*φ` in the weighted layer inner
/// product. Stops when the normal-equation residual relative to `‖A*φ‖`
/// drops below the tolerance; exhausting the iteration budget sets
/// `max_iterations_reached` and returns the last iterate.
pub fn tikhonov_cg_observed(
    op: &TomoOperator,
    data: &DataVector,
    cfg: &SolveConfig,
    mut observer: impl FnMut(usize, &LayerStack),
) -> Result<Solution> {
    cfg.validate(op)?;
    let alpha = cfg.alpha;
    let mut history = SolveHistory::new(Method::TikhonovCg, data.norm());
    let mut x = starting_point(op, cfg);

    let rhs = op.adjoint(data)?;
    let rhs_norm = rhs.norm();
    let mut d = residual(op, &x, data)?;
    // r = A*φ − (A*A + α)x = A*(φ − Ax) − αx
    let mut r = op.adjoint(&d)?;
    r.axpy(-alpha, &x);
    history.records.push(record(0, None, &d));
    observer(0, &x);

    let mut rr = inner_layers(&r, &r)?;
    let done = |rr: f64| relative(rr.sqrt(), rhs_norm) <= cfg.tolerance;
    if done(rr) {
        history.converged = true;
        return Ok(Solution { estimate: x, history });
    }
    let mut p = r.clone();
    for k in 1..=cfg.max_iterations {
        let ap = op.forward(&p)?;
        let mut mp = op.adjoint(&ap)?;
        mp.axpy(alpha, &p);
        let curvature = inner_layers(&p, &mp)?;
        if curvature <= 0.0 {
            break;
        }
        let a = rr / curvature;
        x.axpy(a, &p);
        r.axpy(-a, &mp);
        d = d.difference(&ap.scaled(a))?;
        history.records.push(record(k, None, &d));
        history.iterations = k;
        observer(k, &x);
        let rr_next = inner_layers(&r, &r)?;
        if done(rr_next) {
            history.converged = true;
            break;
        }
        let b = rr_next / rr;
        rr = rr_next;
        let mut next = r.clone();
        next.axpy(b, &p);
        p = next;
    }
    if !history.converged {
        history.max_iterations_reached = true;
        log::warn!(
            "tikhonov-cg stopped after {} iterations without reaching tolerance {}",
            history.iterations,
            cfg.tolerance
        );
    }
    Ok(Solution { estimate: x, history })
}
