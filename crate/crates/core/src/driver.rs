//! The adaptive loop SOLVE→ESTIMATE→MARK→REFINE with per-iteration
//! telemetry, rate fitting and contraction/complexity diagnostics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{self, EstimatorError};
use crate::fem::{energy_error, FeSpace, FemError};
use crate::marking::{dorfler_mark, MarkingError};
use crate::mesh::{self, MeshError};
use crate::problems::{self, ProblemError, ProblemVariant};
use crate::solver::{
    solve_eigen_problem, solve_linear_problem, solve_nonlinear_problem, EigenConfig,
    NewtonConfig, SolverConfig, SolverError,
};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("solver failed at iteration {k}: {source}")]
    Solver {
        k: usize,
        #[source]
        source: SolverError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rate fit needs at least 3 positive points in the window, got {0}")]
    FitWindow(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_degree() -> usize {
    1
}
fn default_theta() -> f64 {
    0.5
}
fn default_bisections() -> u32 {
    1
}
fn default_max_dofs() -> usize {
    100_000
}

/// Configuration of one adaptive run. JSON-serializable so runs can be
/// scripted; flags in the CLI override file values field by field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfemConfig {
    pub problem: String,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_bisections")]
    pub bisections: u32,
    #[serde(default = "default_max_dofs")]
    pub max_dofs: usize,
    /// Optional stop tolerance on the estimator η.
    #[serde(default)]
    pub tol: Option<f64>,
    /// γ for the contraction diagnostic; default is the fitted C₁ when an
    /// exact solution is available, else 1.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Mark every element (uniform-refinement baseline) instead of Dörfler.
    #[serde(default)]
    pub uniform: bool,
    /// Write per-iteration indicator CSVs next to the trace.
    #[serde(default)]
    pub dump_indicators: bool,
    /// Output directory; nothing is persisted when absent.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Rate-fit window (trailing records); default last half.
    #[serde(default)]
    pub window: Option<usize>,
}

impl AfemConfig {
    pub fn new(problem: &str) -> Self {
        Self {
            problem: problem.into(),
            degree: default_degree(),
            theta: default_theta(),
            bisections: default_bisections(),
            max_dofs: default_max_dofs(),
            tol: None,
            gamma: None,
            uniform: false,
            dump_indicators: false,
            out: None,
            window: None,
        }
    }

    fn validate(&self) -> Result<(), DriverError> {
        if !(self.degree == 1 || self.degree == 2) {
            return Err(DriverError::Config(format!(
                "degree must be 1 or 2, got {}",
                self.degree
            )));
        }
        if !self.uniform && !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(DriverError::Config(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        if self.bisections == 0 {
            return Err(DriverError::Config("bisections must be ≥ 1".into()));
        }
        if self.max_dofs == 0 && self.tol.is_none() {
            return Err(DriverError::Config("no stop criterion set".into()));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(DriverError::Config(format!("tol must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// One row of the trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub elements: usize,
    pub dofs: usize,
    pub eta: f64,
    pub osc: f64,
    pub energy_error: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_error: Option<f64>,
    /// Elements marked at this iteration; 0 on the final row.
    pub marked: usize,
    pub solver_iters: usize,
    pub wall_ms: f64,
}

/// Field selectors for rate fitting over trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Dofs,
    Elements,
    Eta,
    Osc,
    EnergyError,
    LambdaError,
}

impl Field {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dofs" => Self::Dofs,
            "elements" => Self::Elements,
            "eta" => Self::Eta,
            "osc" => Self::Osc,
            "energy_error" => Self::EnergyError,
            "lambda_error" => Self::LambdaError,
            _ => return None,
        })
    }

    fn get(self, r: &IterationRecord) -> Option<f64> {
        match self {
            Self::Dofs => Some(r.dofs as f64),
            Self::Elements => Some(r.elements as f64),
            Self::Eta => Some(r.eta),
            Self::Osc => Some(r.osc),
            Self::EnergyError => r.energy_error,
            Self::LambdaError => r.lambda_error,
        }
    }
}

/// The completed run: records plus fitted diagnostics and the replay data
/// needed to reconstruct any iteration's mesh.
#[derive(Debug)]
pub struct AfemTrace {
    pub config: AfemConfig,
    pub records: Vec<IterationRecord>,
    pub eta_slope: Option<f64>,
    pub error_slope: Option<f64>,
    pub lambda_slope: Option<f64>,
    pub gamma_used: f64,
    pub contraction: Vec<f64>,
    pub complexity: Vec<f64>,
    /// Marked element ids per iteration, in marking order.
    pub marks: Vec<Vec<usize>>,
    pub initial_mesh_text: String,
    pub final_mesh_text: String,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a AfemConfig,
    iterations: usize,
    eta_slope: Option<f64>,
    energy_error_slope: Option<f64>,
    lambda_error_slope: Option<f64>,
    /// γ used in the contraction diagnostic: the fitted C₁ (empirical
    /// surrogate for the theory's non-computable constant) unless overridden.
    gamma_used: f64,
    contraction_geomean: Option<f64>,
    complexity_ratio_max: Option<f64>,
    final_elements: usize,
    final_dofs: usize,
    final_eta: f64,
    final_energy_error: Option<f64>,
    final_lambda: Option<f64>,
}

impl AfemTrace {
    /// Trace CSV in the fixed column order; empty fields for non-applicable
    /// columns.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("k,elements,dofs,eta,osc,energy_error,lambda,lambda_error,marked,solver_iters,wall_ms\n");
        for r in &self.records {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.3}",
                r.k,
                r.elements,
                r.dofs,
                r.eta,
                r.osc,
                opt(r.energy_error),
                opt(r.lambda),
                opt(r.lambda_error),
                r.marked,
                r.solver_iters,
                r.wall_ms,
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let last = self.records.last();
        let s = Summary {
            config: &self.config,
            iterations: self.records.len(),
            eta_slope: self.eta_slope,
            energy_error_slope: self.error_slope,
            lambda_error_slope: self.lambda_slope,
            gamma_used: self.gamma_used,
            contraction_geomean: geometric_mean(&self.contraction),
            complexity_ratio_max: self
                .complexity
                .iter()
                .copied()
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
            final_elements: last.map_or(0, |r| r.elements),
            final_dofs: last.map_or(0, |r| r.dofs),
            final_eta: last.map_or(0.0, |r| r.eta),
            final_energy_error: last.and_then(|r| r.energy_error),
            final_lambda: last.and_then(|r| r.lambda),
        };
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }

    /// Writes trace.csv, summary.json, mesh_initial.txt, mesh_final.txt and
    /// replay.txt (marked ids per iteration) into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<(), DriverError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.csv"), self.to_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        std::fs::write(dir.join("mesh_initial.txt"), &self.initial_mesh_text)?;
        std::fs::write(dir.join("mesh_final.txt"), &self.final_mesh_text)?;
        let mut replay = format!("b {}\n", self.config.bisections);
        for (k, marks) in self.marks.iter().enumerate() {
            let ids: Vec<String> = marks.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(replay, "{} {}", k, ids.join(" "));
        }
        std::fs::write(dir.join("replay.txt"), replay)?;
        Ok(())
    }
}

fn geometric_mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() || v.iter().any(|&x| x <= 0.0) {
        return None;
    }
    Some((v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp())
}

/// Least-squares slope of log y against log x.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<f64, DriverError> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|&(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(DriverError::FitWindow(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(DriverError::FitWindow(0));
    }
    Ok(sxy / sxx)
}

/// Slope of `y` against `x` over the trailing `window` records (default the
/// last half, ≥ 3).
pub fn fit_trace_rate(
    records: &[IterationRecord],
    x: Field,
    y: Field,
    window: Option<usize>,
) -> Result<f64, DriverError> {
    let w = window.unwrap_or_else(|| records.len().div_ceil(2)).max(3).min(records.len());
    let tail = &records[records.len() - w..];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in tail {
        if let (Some(xv), Some(yv)) = (x.get(r), y.get(r)) {
            xs.push(xv);
            ys.push(yv);
        }
    }
    fit_rate(&xs, &ys)
}

/// Contraction ratios ρ_k = (e²_{k+1} + γη²_{k+1}) / (e²_k + γη²_k);
/// truncated at the first converged (zero) composite.
pub fn contraction_ratios(records: &[IterationRecord], gamma: f64) -> Vec<f64> {
    let comp: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            r.energy_error.map(|e| e * e + gamma * r.eta * r.eta)
        })
        .collect();
    let mut out = Vec::new();
    for w in comp.windows(2) {
        if w[0] <= 0.0 {
            break;
        }
        out.push(w[1] / w[0]);
    }
    out
}

/// Fitted C₁ := max_k e²_k / η²_k, the empirical reliability constant.
pub fn fitted_c1(records: &[IterationRecord]) -> Option<f64> {
    records
        .iter()
        .filter_map(|r| {
            let e = r.energy_error?;
            (r.eta > 0.0).then(|| e * e / (r.eta * r.eta))
        })
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}

/// Per-k ratios (#T_k − #T₀)/Σ_{j<k}#M_j; empty when k = 0.
pub fn complexity_report(records: &[IterationRecord]) -> Vec<f64> {
    let mut out = Vec::new();
    let history: Vec<(usize, usize)> =
        records.iter().map(|r| (r.elements, r.marked)).collect();
    for k in 1..history.len() {
        if let Ok(ratio) = mesh::complexity_ratio(&history[..=k]) {
            out.push(ratio);
        }
    }
    out
}

/// Runs Algorithm D: SOLVE→ESTIMATE→MARK→REFINE until a stop criterion
/// fires. On solver failure the partial trace is persisted (when an output
/// directory is configured) before the error is returned.
pub fn run(cfg: &AfemConfig) -> Result<AfemTrace, DriverError> {
    cfg.validate()?;
    let p = problems::catalog(&cfg.problem)?;
    let mut mesh = Arc::new(p.initial_mesh());
    let initial_mesh_text = mesh.to_text();

    let linear_cfg = SolverConfig::default();
    let newton_cfg = NewtonConfig::default();
    let eigen_cfg = EigenConfig::default();

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut marks: Vec<Vec<usize>> = Vec::new();
    let mut prev: Option<crate::fem::FeFunction> = None;

    let mut failure: Option<DriverError> = None;
    for k in 0.. {
        let t0 = Instant::now();
        let space = FeSpace::build(Arc::clone(&mesh), cfg.degree)?;
        let solved = match p.variant {
            ProblemVariant::BoundaryValue | ProblemVariant::Nonsymmetric => {
                solve_linear_problem(&p, &space, prev.as_ref(), &linear_cfg)
                    .map(|(u, s)| (u, None, s.iterations))
            }
            ProblemVariant::Nonlinear => {
                solve_nonlinear_problem(&p, &space, prev.as_ref(), &newton_cfg)
                    .map(|(u, s)| (u, None, s.iterations))
            }
            ProblemVariant::Eigenvalue => {
                solve_eigen_problem(&p, &space, prev.as_ref(), &eigen_cfg)
                    .map(|(l, u, s)| (u, Some(l), s.outer_iterations))
            }
        };
        let (u, lambda, solver_iters) = match solved {
            Ok(v) => v,
            Err(e) => {
                failure = Some(DriverError::Solver { k, source: e });
                break;
            }
        };

        let ind = estimator::indicators(&p, &u, lambda)?;
        let (eta, osc) = ind.global(None);

        let exact = p.exact.as_ref();
        let err = exact.and_then(|ex| ex.grad.as_ref()).map(|g| {
            let g = Arc::clone(g);
            energy_error(move |x, y| g(x, y), &u, &p.coefficients())
        });
        let lambda_exact = exact.and_then(|ex| ex.lambda);
        let lambda_error = match (lambda, lambda_exact) {
            (Some(l), Some(le)) => Some((l - le).abs()),
            _ => None,
        };

        if cfg.dump_indicators {
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                let mut csv = String::from("element,eta2,osc2\n");
                for (&(e, e2), &(_, o2)) in
                    ind.per_element().iter().zip(ind.per_element_osc())
                {
                    let _ = writeln!(csv, "{e},{e2},{o2}");
                }
                std::fs::write(dir.join(format!("indicators_{k}.csv")), csv)?;
            }
        }

        let mut record = IterationRecord {
            k,
            elements: mesh.num_active(),
            dofs: space.ndofs,
            eta,
            osc,
            energy_error: err,
            lambda,
            lambda_error,
            marked: 0,
            solver_iters,
            wall_ms: 0.0,
        };

        let stop = space.ndofs >= cfg.max_dofs
            || cfg.tol.is_some_and(|t| eta <= t)
            || eta == 0.0;
        if stop {
            record.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            records.push(record);
            break;
        }

        let marked: Vec<usize> = if cfg.uniform {
            mesh.active_elements().collect()
        } else {
            match dorfler_mark(&ind, cfg.theta) {
                Ok(m) => m.marked,
                Err(MarkingError::Converged) => {
                    record.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
                    records.push(record);
                    break;
                }
                Err(MarkingError::BadTheta(t)) => {
                    return Err(DriverError::Config(format!("theta {t} out of range")));
                }
            }
        };
        record.marked = marked.len();

        let refined = mesh.refine(&marked, cfg.bisections)?;
        refined.check_conforming()?;
        mesh = Arc::new(refined);
        marks.push(marked);
        prev = Some(u);

        record.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        records.push(record);
    }

    let gamma_used = cfg.gamma.or_else(|| fitted_c1(&records)).unwrap_or(1.0);
    let trace = AfemTrace {
        eta_slope: fit_trace_rate(&records, Field::Dofs, Field::Eta, cfg.window).ok(),
        error_slope: fit_trace_rate(&records, Field::Dofs, Field::EnergyError, cfg.window)
            .ok(),
        lambda_slope: fit_trace_rate(&records, Field::Dofs, Field::LambdaError, cfg.window)
            .ok(),
        gamma_used,
        contraction: contraction_ratios(&records, gamma_used),
        complexity: complexity_report(&records),
        config: cfg.clone(),
        records,
        marks,
        initial_mesh_text,
        final_mesh_text: mesh.to_text(),
    };
    if let Some(dir) = &cfg.out {
        trace.persist(dir)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(trace),
    }
}

/// Reconstructs the iteration-`k` mesh from the persisted replay data.
pub fn replay_mesh(dir: &Path, iteration: usize) -> Result<mesh::Triangulation, DriverError> {
    let initial = std::fs::read_to_string(dir.join("mesh_initial.txt"))?;
    let mut m = mesh::Triangulation::parse(&initial)?;
    if iteration == 0 {
        return Ok(m);
    }
    let replay = std::fs::read_to_string(dir.join("replay.txt"))?;
    let mut lines = replay.lines();
    let header = lines.next().unwrap_or_default();
    let b: u32 = header
        .strip_prefix("b ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DriverError::Config("malformed replay header".into()))?;
    let mut applied = 0usize;
    for line in lines {
        if applied == iteration {
            break;
        }
        let mut toks = line.split_whitespace();
        let _k = toks.next();
        let marked: Vec<usize> = toks.filter_map(|t| t.parse().ok()).collect();
        m = m.refine(&marked, b)?;
        applied += 1;
    }
    if applied < iteration {
        return Err(DriverError::Config(format!(
            "trace has only {applied} refinement steps, iteration {iteration} unavailable"
        )));
    }
    Ok(m)
}
