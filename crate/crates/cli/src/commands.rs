//! Subcommand implementations. Each `run_*` function does the computation and
//! returns its result; each `cmd_*` function additionally writes the output
//! files and a manifest.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use layertomo::analysis::{
    build_nullspace_witness_for, direction_ball, project_to_range_of_adjoint, relative_error, single_overlap_layers,
    strehl_map, EvaluationGrid, InvariantChecker, NullspaceWitness, StratifiedError, StrehlReport,
};
use layertomo::field::{DataVector, LayerStack};
use layertomo::geometry::{disjoint_height, BallRegion, ARCSEC};
use layertomo::io;
use layertomo::operator::TomoOperator;
use layertomo::reconstruct::{solve_observed, SolveConfig, SolveHistory};
use layertomo::turbulence::generate_atmosphere;

use crate::config::{ExperimentConfig, LoadedConfig, MethodName};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// A loaded configuration and the directory outputs go to.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: LoadedConfig,
    pub output_dir: PathBuf,
}

impl Context {
    /// `output_dir` overrides the directory named in the configuration,
    /// which in turn defaults to `runs`.
    pub fn new(loaded: LoadedConfig, output_dir: Option<PathBuf>) -> Self {
        let output_dir = output_dir
            .or_else(|| loaded.config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        Self { loaded, output_dir }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::io(format!("cannot create {}", self.output_dir.display()), e))
    }

    fn manifest(&self, command: &str) -> Manifest {
        let mut m = Manifest::new(command);
        m.set("config", self.loaded.path.display());
        m.set("config_sha256", &self.loaded.hash);
        m.set("seed", self.config().seed);
        m
    }

    fn write(&self, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<PathBuf> {
        let path = self.path(name);
        io::write_atomic(&path, bytes)?;
        manifest.add_output(name);
        Ok(path)
    }

    fn finish(&self, mut manifest: Manifest, started: Instant) -> Result<PathBuf> {
        manifest.set("elapsed_s", format!("{:.3}", started.elapsed().as_secs_f64()));
        let name = format!("{}.manifest", manifest.command());
        let path = self.path(&name);
        io::write_atomic(&path, manifest.render().as_bytes())?;
        Ok(path)
    }
}

fn csv_bytes<R: serde::Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::io("csv buffer", e.into_error()))
}

fn key_value_csv(pairs: &[(String, String)]) -> Result<Vec<u8>> {
    csv_bytes(&["key", "value"], pairs.iter())
}

fn kv(key: &str, value: impl Display) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn layer_index(op: &TomoOperator, layer: usize) -> Result<usize> {
    if layer == 0 || layer > op.n_layers() {
        return Err(CliError::Usage(format!("--layer must be in 1..={}, got {layer}", op.n_layers())));
    }
    Ok(layer - 1)
}

/// Single-overlap balls of every direction that has one, on the first
/// elevated layer.
pub fn direction_balls(op: &TomoOperator) -> Result<Vec<BallRegion>> {
    let mut out = Vec::new();
    for g in 0..op.n_directions() {
        match direction_ball(op, g) {
            Ok(b) => out.push(b),
            Err(layertomo::Error::NoSingleOverlapRegion { .. }) => {
                log::info!("direction {g} has no single-overlap ball")
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OverlapOutcome {
    /// 0-based layer index.
    pub layer: usize,
    pub height: f64,
    pub disjoint_height: Option<f64>,
    /// Node counts per overlap value `0..=G`.
    pub histogram: Vec<usize>,
    pub balls: Vec<BallRegion>,
    pub files: Vec<PathBuf>,
}

/// Overlap map of one layer (1-based `layer`), `h_disj` and the
/// single-overlap balls of all directions translated to every layer.
pub fn cmd_overlap(ctx: &Context, layer: usize) -> Result<OverlapOutcome> {
    let started = Instant::now();
    let op = ctx.config().operator()?;
    let l = layer_index(&op, layer)?;
    let spec = op.spec();
    let map = op.overlap_map(l)?;
    let grid = *map.grid();
    let h_disj = disjoint_height(spec).ok();
    let balls = direction_balls(&op)?;
    ctx.prepare()?;
    let mut manifest = ctx.manifest("overlap");
    let mut files = Vec::new();

    let values: Vec<f64> = map.values().iter().map(|&w| w as f64).collect();
    let image = io::pgm(grid.nx(), grid.ny(), &values, None, Some((0.0, op.n_directions() as f64)));
    files.push(ctx.write(&format!("overlap_layer{layer}.pgm"), &image, &mut manifest)?);
    let rows = map.values().iter().enumerate().map(|(i, &w)| {
        let p = grid.node_at(i);
        (i % grid.nx(), i / grid.nx(), p[0], p[1], w)
    });
    let table = csv_bytes(&["ix", "iy", "x_m", "y_m", "omega"], rows)?;
    files.push(ctx.write(&format!("overlap_layer{layer}.csv"), &table, &mut manifest)?);

    let mut ball_rows = Vec::new();
    for b in &balls {
        let a = spec.direction(b.guide);
        for (k, h) in spec.layer_heights().iter().enumerate() {
            let dh = h - spec.layer_heights()[b.layer];
            let c = [b.center[0] + dh * a[0], b.center[1] + dh * a[1]];
            ball_rows.push((b.guide + 1, k + 1, c[0], c[1], b.radius, k == b.layer));
        }
    }
    let table = csv_bytes(&["direction", "layer", "center_x_m", "center_y_m", "radius_m", "base"], ball_rows)?;
    files.push(ctx.write("balls.csv", &table, &mut manifest)?);

    let histogram = map.histogram();
    let mut summary = vec![
        kv("layer", layer),
        kv("height_m", spec.layer_heights()[l]),
        kv("disjoint_height_m", opt(h_disj)),
        kv("max_overlap", map.max_value()),
        kv("balls", balls.len()),
    ];
    for (w, n) in histogram.iter().enumerate() {
        summary.push(kv(&format!("nodes_omega_{w}"), n));
    }
    files.push(ctx.write("overlap_summary.csv", &key_value_csv(&summary)?, &mut manifest)?);
    manifest.set("layer", layer);
    manifest.set("disjoint_height_m", opt(h_disj));
    files.push(ctx.finish(manifest, started)?);
    Ok(OverlapOutcome { layer: l, height: spec.layer_heights()[l], disjoint_height: h_disj, histogram, balls, files })
}

#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub atmosphere: LayerStack,
    pub data: DataVector,
    pub noisy: bool,
    pub files: Vec<PathBuf>,
}

fn check_layers(op: &TomoOperator, stack: &LayerStack, what: &Path) -> Result<()> {
    stack.check_compatible(&op.zero_layers()).map_err(|e| {
        CliError::Usage(format!("{} does not match the configured geometry: {e}", what.display()))
    })
}

/// Data of an atmosphere read from `atmosphere`, or of one generated with
/// the master seed when `None`.
pub fn cmd_forward(ctx: &Context, atmosphere: Option<&Path>) -> Result<ForwardOutcome> {
    let started = Instant::now();
    let cfg = ctx.config();
    let op = cfg.operator()?;
    let phi = match atmosphere {
        Some(p) => {
            let s = io::read_layer_stack(p)?;
            check_layers(&op, &s, p)?;
            s
        }
        None => generate_atmosphere(&cfg.turbulence_spec(cfg.seed)?, op.spec(), op.layout())?,
    };
    let clean = op.forward(&phi)?;
    let noise = cfg.noise_model(cfg.seed)?;
    let data = match &noise {
        Some(n) => n.add_noise(&clean),
        None => clean,
    };
    ctx.prepare()?;
    let mut manifest = ctx.manifest("forward");
    let mut files = Vec::new();
    match atmosphere {
        Some(p) => manifest.set("atmosphere", p.display()),
        None => {
            files.push(ctx.write("atmosphere.ltf", &io::encode_layer_stack(&phi), &mut manifest)?);
            manifest.set("atmosphere", "generated");
        }
    }
    files.push(ctx.write("data.ltf", &io::encode_data_vector(&data), &mut manifest)?);
    files.push(ctx.write("data.csv", io::data_vector_csv(&data)?.as_bytes(), &mut manifest)?);
    manifest.set("noise", noise.is_some());
    if let Some(n) = &noise {
        manifest.set("noise_seed", n.seed());
        manifest.set("noise_sigma_m", n.path_sigma());
    }
    manifest.set("data_norm", data.norm());
    manifest.set("aligned", op.is_aligned());
    files.push(ctx.finish(manifest, started)?);
    Ok(ForwardOutcome { atmosphere: phi, data, noisy: noise.is_some(), files })
}

#[derive(Debug, Clone)]
pub struct ReconstructOutcome {
    pub estimate: LayerStack,
    pub history: SolveHistory,
    /// Largest scaling-invariant residual after every recorded update.
    pub invariant_residuals: Vec<f64>,
    pub files: Vec<PathBuf>,
}

/// Solve with the scaling invariant checked on every iterate.
pub fn run_reconstruction(
    op: &TomoOperator,
    data: &DataVector,
    solve: &SolveConfig,
) -> Result<(layertomo::reconstruct::Solution, Vec<f64>)> {
    let checker = InvariantChecker::new(op)?;
    let mut residuals = Vec::new();
    let mut failure = None;
    let sol = solve_observed(op, data, solve, |_, x| match checker.max_residual(op, x) {
        Ok(v) => residuals.push(v),
        Err(e) => failure = Some(e),
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok((sol, residuals))
}

/// Reconstruct from a data file written by `forward`. When `truth` is
/// given, stratified errors and Strehl ratios are written as well.
pub fn cmd_reconstruct(
    ctx: &Context,
    data_path: &Path,
    method: Option<MethodName>,
    truth: Option<&Path>,
) -> Result<ReconstructOutcome> {
    let started = Instant::now();
    let cfg = ctx.config();
    let op = cfg.operator()?;
    let data = io::read_data_vector(data_path)?;
    data.check_compatible(&op.zero_data()).map_err(|e| {
        CliError::Usage(format!("{} does not match the configured geometry: {e}", data_path.display()))
    })?;
    let truth = match truth {
        Some(p) => {
            let s = io::read_layer_stack(p)?;
            check_layers(&op, &s, p)?;
            Some(s)
        }
        None => None,
    };
    let solve = cfg.solve_config(&op, method)?;
    let (sol, invariant_residuals) = run_reconstruction(&op, &data, &solve)?;

    ctx.prepare()?;
    let mut manifest = ctx.manifest("reconstruct");
    let mut files = Vec::new();
    files.push(ctx.write("reconstruction.ltf", &io::encode_layer_stack(&sol.estimate), &mut manifest)?);
    files.push(ctx.write("history.csv", &history_csv(&sol.history, &invariant_residuals)?, &mut manifest)?);
    let checks = InvariantChecker::new(&op)?.check(&op, &sol.estimate)?;
    let mut rows = Vec::new();
    for c in &checks {
        for (l, r) in &c.layer_residuals {
            rows.push((c.direction + 1, c.base_layer + 1, l + 1, *r));
        }
    }
    let table = csv_bytes(&["direction", "base_layer", "layer", "relative_residual"], rows)?;
    files.push(ctx.write("invariants.csv", &table, &mut manifest)?);
    if let Some(t) = &truth {
        let (errors, strehl) = evaluate(cfg, &op, t, &sol.estimate)?;
        files.push(ctx.write("errors.csv", &errors_csv(&[(None, "reconstruction", &errors)])?, &mut manifest)?);
        files.push(ctx.write("strehl.csv", &strehl_csv(&[(None, "reconstruction", &strehl)])?, &mut manifest)?);
        manifest.set("global_error", opt(errors.global));
    }
    let h = &sol.history;
    manifest.set("data", data_path.display());
    manifest.set("method", h.method.name());
    manifest.set("alpha", solve.alpha);
    manifest.set("iterations", h.iterations);
    manifest.set("converged", h.converged);
    manifest.set("max_iterations_reached", h.max_iterations_reached);
    manifest.set("oscillating", h.oscillating);
    manifest.set("final_relative_residual", h.final_residual() / h.data_norm.max(f64::MIN_POSITIVE));
    let worst = invariant_residuals.iter().copied().fold(0.0, f64::max);
    manifest.set("max_invariant_residual", worst);
    files.push(ctx.finish(manifest, started)?);
    Ok(ReconstructOutcome { estimate: sol.estimate, history: sol.history, invariant_residuals, files })
}

fn history_csv(h: &SolveHistory, invariants: &[f64]) -> Result<Vec<u8>> {
    let g = h.records.first().map_or(0, |r| r.direction_residuals.len());
    let mut header = vec!["iteration".to_string(), "direction".to_string()];
    header.extend((1..=g).map(|k| format!("residual_{k}")));
    header.extend(["total_residual", "invariant_residual"].map(String::from));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for (k, r) in h.records.iter().enumerate() {
        let mut row = vec![r.iteration.to_string(), r.direction.map(|d| (d + 1).to_string()).unwrap_or_default()];
        row.extend(r.direction_residuals.iter().map(|v| v.to_string()));
        row.push(r.total_residual.to_string());
        row.push(invariants.get(k).map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::io("csv buffer", e.into_error()))
}

fn evaluate(
    cfg: &ExperimentConfig,
    op: &TomoOperator,
    truth: &LayerStack,
    rec: &LayerStack,
) -> Result<(StratifiedError, StrehlReport)> {
    let top = op.n_layers() - 1;
    let errors = relative_error(truth, rec, &[op.overlap_map(top)?])?;
    let e = &cfg.evaluation;
    let grid = EvaluationGrid::rings(cfg.evaluation_radius(op.spec()), e.rings, e.per_ring)?;
    let strehl = strehl_map(op, truth, rec, &grid, e.wavelength_m)?;
    Ok((errors, strehl))
}

fn errors_csv(rows: &[(Option<u64>, &str, &StratifiedError)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (seed, arm, e) in rows {
        let seed = seed.map(|s| s.to_string()).unwrap_or_default();
        out.push((seed.clone(), arm.to_string(), "all".to_string(), 0usize, opt(e.global), opt(e.global_true_normalized)));
        for s in &e.strata {
            out.push((
                seed.clone(),
                arm.to_string(),
                s.overlap.to_string(),
                s.nodes,
                opt(s.error),
                opt(s.error_true_normalized),
            ));
        }
    }
    csv_bytes(&["seed", "arm", "overlap", "nodes", "error", "error_true_normalized"], out)
}

fn strehl_csv(rows: &[(Option<u64>, &str, &StrehlReport)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (seed, arm, r) in rows {
        let seed = seed.map(|s| s.to_string()).unwrap_or_default();
        for (i, d) in r.directions.iter().enumerate() {
            out.push((
                seed.clone(),
                arm.to_string(),
                i,
                d.direction[0] / ARCSEC,
                d.direction[1] / ARCSEC,
                d.ring,
                d.overlap,
                d.phase_variance,
                opt(d.strehl),
            ));
        }
    }
    csv_bytes(
        &["seed", "arm", "index", "x_arcsec", "y_arcsec", "ring", "overlap", "phase_variance_rad2", "strehl"],
        out,
    )
}

#[derive(Debug, Clone)]
pub struct NullspaceOutcome {
    pub witness: NullspaceWitness,
    /// Perturbation height per layer; zero for untouched layers.
    pub amplitudes: Vec<f64>,
    pub data_equal: bool,
    pub layers_differ: bool,
    pub elapsed_s: f64,
}

impl NullspaceOutcome {
    pub fn passed(&self) -> bool {
        self.data_equal && self.layers_differ
    }
}

fn masked_rms(stack: &LayerStack, l: usize) -> f64 {
    let m = stack.layout().layer(l);
    let (sum, n) = m
        .mask()
        .iter()
        .zip(stack.layer(l))
        .filter(|(&inside, _)| inside)
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Witness over every direction with a single-overlap ball, on an
/// atmosphere generated with the master seed. Each perturbed layer is raised
/// by `amplitude_rms` times its own RMS inside the translated balls.
pub fn run_nullspace(cfg: &ExperimentConfig) -> Result<(TomoOperator, NullspaceOutcome)> {
    let started = Instant::now();
    let op = cfg.operator()?;
    let phi = generate_atmosphere(&cfg.turbulence_spec(cfg.seed)?, op.spec(), op.layout())?;
    let balls: Vec<BallRegion> =
        direction_balls(&op)?.into_iter().filter(|b| single_overlap_layers(&op, b).len() >= 2).collect();
    if balls.is_empty() {
        return Err(CliError::Numerical("no direction has a single-overlap ball on two elevated layers".into()));
    }
    let guides: Vec<usize> = balls.iter().map(|b| b.guide).collect();
    let top = op.n_layers() - 1;
    let w = &cfg.nullspace;
    let amplitudes: Vec<f64> = (0..op.n_layers())
        .map(|l| if l >= balls[0].layer && l < top { w.amplitude_rms * masked_rms(&phi, l) } else { 0.0 })
        .collect();
    let witness = build_nullspace_witness_for(&op, &phi, &guides, |l, _| amplitudes[l], w.smooth_margin)?;
    let data_equal = witness.relative_discrepancy <= w.max_relative_discrepancy;
    let layers_differ = witness.layer_distance > 0.0 && witness.relative_distance >= w.min_relative_distance;
    let elapsed_s = started.elapsed().as_secs_f64();
    Ok((op, NullspaceOutcome { witness, amplitudes, data_equal, layers_differ, elapsed_s }))
}

/// [`run_nullspace`] plus output files. Fails with a numerical error when the
/// witness does not meet the configured thresholds; the files are written
/// either way.
pub fn cmd_nullspace(ctx: &Context) -> Result<NullspaceOutcome> {
    let started = Instant::now();
    let (op, out) = run_nullspace(ctx.config())?;
    let w = &out.witness;
    let cfg = &ctx.config().nullspace;
    ctx.prepare()?;
    let mut manifest = ctx.manifest("nullspace");
    let guides: Vec<String> = w.directions.iter().map(|g| (g + 1).to_string()).collect();
    let summary = vec![
        kv("directions", guides.join(" ")),
        kv("max_data_discrepancy", w.max_discrepancy),
        kv("relative_data_discrepancy", w.relative_discrepancy),
        kv("max_relative_data_discrepancy", cfg.max_relative_discrepancy),
        kv("layer_distance", w.layer_distance),
        kv("relative_layer_distance", w.relative_distance),
        kv("min_relative_layer_distance", cfg.min_relative_distance),
        kv("data_equal", out.data_equal),
        kv("layers_differ", out.layers_differ),
        kv("aligned", op.is_aligned()),
    ];
    ctx.write("witness.csv", &key_value_csv(&summary)?, &mut manifest)?;
    let regions: Vec<_> = w
        .regions
        .iter()
        .map(|(g, l, r)| (g + 1, l + 1, r.center[0], r.center[1], opt(r.radius())))
        .collect();
    let table = csv_bytes(&["direction", "layer", "center_x_m", "center_y_m", "radius_m"], regions)?;
    ctx.write("witness_regions.csv", &table, &mut manifest)?;
    let amps: Vec<_> = out.amplitudes.iter().enumerate().map(|(l, a)| (l + 1, *a)).collect();
    ctx.write("witness_amplitudes.csv", &csv_bytes(&["layer", "amplitude_m"], amps)?, &mut manifest)?;
    ctx.write("witness_original.ltf", &io::encode_layer_stack(&w.original), &mut manifest)?;
    ctx.write("witness_modified.ltf", &io::encode_layer_stack(&w.modified), &mut manifest)?;
    let diff = w.modified.difference(&w.original)?;
    for l in 0..op.n_layers() {
        ctx.write(&format!("witness_difference_layer{}.pgm", l + 1), &io::layer_pgm(&diff, l), &mut manifest)?;
    }
    manifest.set("data_equal", out.data_equal);
    manifest.set("layers_differ", out.layers_differ);
    manifest.set("relative_data_discrepancy", w.relative_discrepancy);
    manifest.set("relative_layer_distance", w.relative_distance);
    ctx.finish(manifest, started)?;
    if !out.passed() {
        return Err(CliError::Numerical(format!(
            "witness failed: relative data discrepancy {:.3e} (limit {:.1e}), relative layer distance {:.3e} (floor {})",
            w.relative_discrepancy, cfg.max_relative_discrepancy, w.relative_distance, cfg.min_relative_distance
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// The generated atmosphere `Φ`.
    Original,
    /// `Φ̂ = A*AΦ`.
    Projected,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::Projected => "projected",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub errors: StratifiedError,
    pub strehl: StrehlReport,
    pub iterations: usize,
    pub converged: bool,
    pub max_invariant_residual: f64,
}

impl ArmResult {
    /// Strehl of the field center.
    pub fn center_strehl(&self) -> Option<f64> {
        self.strehl.ring_mean(0)
    }

    /// Mean Strehl of the outermost ring with at least one defined value.
    pub fn edge_strehl(&self) -> Option<f64> {
        let outer = self.strehl.directions.iter().map(|d| d.ring).max().unwrap_or(0);
        (1..=outer).rev().find_map(|k| self.strehl.ring_mean(k))
    }

    /// Error strictly decreasing from overlap 1 to overlap `g` over the
    /// non-empty strata.
    pub fn strictly_monotone(&self, g: u32) -> bool {
        let v: Vec<f64> = (1..=g)
            .filter_map(|o| self.errors.stratum(o))
            .filter(|s| s.nodes > 0)
            .filter_map(|s| s.error)
            .collect();
        v.windows(2).all(|w| w[0] > w[1])
    }
}

#[derive(Debug, Clone)]
pub struct Realization {
    pub seed: u64,
    pub original: ArmResult,
    pub projected: ArmResult,
}

impl Realization {
    pub fn arm(&self, arm: Arm) -> &ArmResult {
        match arm {
            Arm::Original => &self.original,
            Arm::Projected => &self.projected,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub overlap: u32,
    pub nodes: usize,
    pub original: Option<f64>,
    pub projected: Option<f64>,
    pub original_true_normalized: Option<f64>,
    pub projected_true_normalized: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectionExperiment {
    pub n_directions: u32,
    pub alpha: f64,
    pub realizations: Vec<Realization>,
    pub elapsed_s: f64,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ProjectionExperiment {
    /// Seed-mean stratum error of one arm.
    pub fn mean_error(&self, arm: Arm, overlap: u32) -> Option<f64> {
        mean(self.realizations.iter().map(|r| r.arm(arm).errors.stratum(overlap).and_then(|s| s.error)))
    }

    fn mean_true_normalized(&self, arm: Arm, overlap: u32) -> Option<f64> {
        mean(
            self.realizations
                .iter()
                .map(|r| r.arm(arm).errors.stratum(overlap).and_then(|s| s.error_true_normalized)),
        )
    }

    pub fn monotone_count(&self, arm: Arm) -> usize {
        self.realizations.iter().filter(|r| r.arm(arm).strictly_monotone(self.n_directions)).count()
    }

    /// Seeds whose center Strehl exceeds the edge-ring mean.
    pub fn center_beats_edge_count(&self, arm: Arm) -> usize {
        self.realizations
            .iter()
            .filter(|r| {
                let a = r.arm(arm);
                matches!((a.center_strehl(), a.edge_strehl()), (Some(c), Some(e)) if c > e)
            })
            .count()
    }

    /// Seed-mean errors for overlap `1..=G`, both arms side by side.
    pub fn table(&self) -> Vec<TableRow> {
        (1..=self.n_directions)
            .map(|o| TableRow {
                overlap: o,
                nodes: self
                    .realizations
                    .first()
                    .and_then(|r| r.original.errors.stratum(o))
                    .map_or(0, |s| s.nodes),
                original: self.mean_error(Arm::Original, o),
                projected: self.mean_error(Arm::Projected, o),
                original_true_normalized: self.mean_true_normalized(Arm::Original, o),
                projected_true_normalized: self.mean_true_normalized(Arm::Projected, o),
            })
            .collect()
    }
}

/// Reconstruct `Φ` and `Φ̂ = A*AΦ` for `projection.realizations` atmospheres
/// seeded `seed, seed + 1, …`, with errors stratified by the top-layer
/// overlap count and Strehl ratios on the evaluation grid.
pub fn run_projection_experiment(cfg: &ExperimentConfig) -> Result<ProjectionExperiment> {
    let started = Instant::now();
    let op = cfg.operator()?;
    let solve = cfg.solve_config(&op, None)?;
    let mut realizations = Vec::new();
    for k in 0..cfg.projection.realizations as u64 {
        let seed = cfg.seed.wrapping_add(k);
        let phi = generate_atmosphere(&cfg.turbulence_spec(seed)?, op.spec(), op.layout())?;
        let hat = project_to_range_of_adjoint(&op, &phi)?;
        let noise = cfg.noise_model(seed)?;
        let mut arms = Vec::new();
        for truth in [&phi, &hat] {
            let clean = op.forward(truth)?;
            let data = match &noise {
                Some(n) => n.add_noise(&clean),
                None => clean,
            };
            let (sol, inv) = run_reconstruction(&op, &data, &solve)?;
            let (errors, strehl) = evaluate(cfg, &op, truth, &sol.estimate)?;
            if let Some(s) = errors.strata.iter().find(|s| s.overlap > 0 && s.nodes > 0 && s.error.is_none()) {
                return Err(CliError::Numerical(format!(
                    "seed {seed}: error undefined in overlap stratum {} (reconstruction vanishes there)",
                    s.overlap
                )));
            }
            arms.push(ArmResult {
                errors,
                strehl,
                iterations: sol.history.iterations,
                converged: sol.history.converged,
                max_invariant_residual: inv.iter().copied().fold(0.0, f64::max),
            });
        }
        let projected = arms.pop().expect("two arms");
        let original = arms.pop().expect("two arms");
        log::info!(
            "seed {seed}: {} / {} iterations, global error {:.4} / {:.4}",
            original.iterations,
            projected.iterations,
            original.errors.global.unwrap_or(f64::NAN),
            projected.errors.global.unwrap_or(f64::NAN)
        );
        realizations.push(Realization { seed, original, projected });
    }
    Ok(ProjectionExperiment {
        n_directions: op.n_directions() as u32,
        alpha: solve.alpha,
        realizations,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Rasterize per-direction Strehl ratios: every pixel takes the value of the
/// nearest evaluation direction; pixels beyond the outer ring are black.
fn strehl_image(report: &StrehlReport, size: usize) -> Vec<u8> {
    let radius = report.directions.iter().map(|d| d.direction[0].hypot(d.direction[1])).fold(0.0, f64::max);
    let mut values = vec![f64::NAN; size * size];
    if radius > 0.0 {
        for iy in 0..size {
            for ix in 0..size {
                let p = [
                    radius * (2.0 * ix as f64 / (size - 1) as f64 - 1.0),
                    radius * (2.0 * iy as f64 / (size - 1) as f64 - 1.0),
                ];
                if p[0].hypot(p[1]) > radius {
                    continue;
                }
                let nearest = report.directions.iter().min_by(|a, b| {
                    let da = (a.direction[0] - p[0]).hypot(a.direction[1] - p[1]);
                    let db = (b.direction[0] - p[0]).hypot(b.direction[1] - p[1]);
                    da.total_cmp(&db)
                });
                values[iy * size + ix] = nearest.and_then(|d| d.strehl).unwrap_or(f64::NAN);
            }
        }
    }
    io::pgm(size, size, &values, None, Some((0.0, 1.0)))
}

pub fn cmd_project_experiment(ctx: &Context) -> Result<ProjectionExperiment> {
    let started = Instant::now();
    let exp = run_projection_experiment(ctx.config())?;
    ctx.prepare()?;
    let mut manifest = ctx.manifest("project-experiment");
    let mut err_rows = Vec::new();
    let mut sr_rows = Vec::new();
    for r in &exp.realizations {
        for arm in [Arm::Original, Arm::Projected] {
            err_rows.push((Some(r.seed), arm.name(), &r.arm(arm).errors));
            sr_rows.push((Some(r.seed), arm.name(), &r.arm(arm).strehl));
        }
    }
    ctx.write("projection_errors.csv", &errors_csv(&err_rows)?, &mut manifest)?;
    ctx.write("strehl.csv", &strehl_csv(&sr_rows)?, &mut manifest)?;
    let table: Vec<_> = exp
        .table()
        .into_iter()
        .map(|t| {
            (
                t.overlap,
                t.nodes,
                opt(t.original),
                opt(t.projected),
                opt(t.original_true_normalized),
                opt(t.projected_true_normalized),
            )
        })
        .collect();
    let header = [
        "overlap",
        "nodes",
        "original_error",
        "projected_error",
        "original_error_true_normalized",
        "projected_error_true_normalized",
    ];
    ctx.write("projection_table.csv", &csv_bytes(&header, table)?, &mut manifest)?;
    let seeds: Vec<_> = exp
        .realizations
        .iter()
        .flat_map(|r| {
            [Arm::Original, Arm::Projected].map(|arm| {
                let a = r.arm(arm);
                (
                    r.seed,
                    arm.name(),
                    a.iterations,
                    a.converged,
                    opt(a.errors.global),
                    a.strictly_monotone(exp.n_directions),
                    opt(a.center_strehl()),
                    opt(a.edge_strehl()),
                    a.max_invariant_residual,
                )
            })
        })
        .collect();
    let header = [
        "seed",
        "arm",
        "iterations",
        "converged",
        "global_error",
        "monotone",
        "center_strehl",
        "edge_strehl",
        "max_invariant_residual",
    ];
    ctx.write("projection_seeds.csv", &csv_bytes(&header, seeds)?, &mut manifest)?;
    let mut strata = Vec::new();
    for arm in [Arm::Original, Arm::Projected] {
        for o in 1..=exp.n_directions {
            let v: Vec<f64> = exp
                .realizations
                .iter()
                .flat_map(|r| r.arm(arm).strehl.directions.iter())
                .filter(|d| d.overlap == o)
                .filter_map(|d| d.strehl)
                .collect();
            let m = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let var = m.map(|m| v.iter().map(|s| (s - m).powi(2)).sum::<f64>() / v.len() as f64);
            strata.push((arm.name(), o, v.len(), opt(m), opt(var)));
        }
    }
    let header = ["arm", "overlap", "count", "mean_strehl", "strehl_variance"];
    ctx.write("strehl_strata.csv", &csv_bytes(&header, strata)?, &mut manifest)?;
    if let Some(r) = exp.realizations.first() {
        ctx.write("strehl_map.pgm", &strehl_image(&r.original.strehl, 129), &mut manifest)?;
    }
    manifest.set("realizations", exp.realizations.len());
    manifest.set("alpha", exp.alpha);
    manifest.set("monotone_original", exp.monotone_count(Arm::Original));
    manifest.set("monotone_projected", exp.monotone_count(Arm::Projected));
    manifest.set("center_beats_edge", exp.center_beats_edge_count(Arm::Original));
    ctx.finish(manifest, started)?;
    Ok(exp)
}

/// Collect every manifest and CSV table of a run directory into
/// `summary.md` and `summary.csv` inside that directory.
pub fn cmd_report(run: &Path) -> Result<(PathBuf, PathBuf)> {
    crate::report::write_report(run)
}
