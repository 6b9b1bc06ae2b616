//! Command dispatch: reads inputs, runs a pipeline, writes the report and CSV series.

use std::path::{Path, PathBuf};

use graphflow::control::{
    approx_controllability, atfm_operator, kalman_matrix, norm_abscissa, rank_with_tolerance, scaled_control,
    x_vs_history_controllability, AnalysisOptions, ControlError, ResolventMethod, Verdict, DEFAULT_OFFSETS,
};
use graphflow::linalg::RANK_THRESHOLD;
use graphflow::solver::{solve, SolverError, TraceKind};
use graphflow::structural::{
    generic_rank, has_form_t, lemma_consistency, structural_controllability, Cell, StructuralError, StructuredMatrix,
    DEFAULT_TRIALS,
};
use num_complex::Complex64;
use thiserror::Error;
use toml::{Table, Value};

use crate::format::{parse_graph_spec, parse_pattern, FormatError, GraphSpec};
use crate::report::{complex, complexes, floats, format_complex, write_csv, Report};
use crate::selftest::{self, Fixtures};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GRAPHFLOW_OUT";
pub const DEFAULT_OUT: &str = "graphflow-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Analyze,
    Structural,
    Atfm,
    Selftest,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Structural => "structural",
            Command::Atfm => "atfm",
            Command::Selftest => "selftest",
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    InputError = 1,
    Negative = 2,
    Inconclusive = 3,
    NumericalFailure = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn from_verdict(v: Verdict) -> Self {
        match v {
            Verdict::Controllable => Exit::Ok,
            Verdict::NotControllable => Exit::Negative,
            Verdict::Inconclusive => Exit::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    /// Input pattern `K` for `structural`.
    pub input_pattern: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dt: Option<f64>,
    pub nx: Option<usize>,
    pub horizon: Option<f64>,
    pub lambda: Vec<Complex64>,
    pub depth: Option<usize>,
    pub threshold: f64,
    pub seed: u64,
    pub trials: usize,
    pub t: Option<usize>,
    pub filter: Option<String>,
    /// Fixture directory for `selftest`; the bundled copies otherwise.
    pub fixtures: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            input: None,
            input_pattern: None,
            out: None,
            dt: None,
            nx: None,
            horizon: None,
            lambda: Vec::new(),
            depth: None,
            threshold: RANK_THRESHOLD,
            seed: 0,
            trials: DEFAULT_TRIALS,
            t: None,
            filter: None,
            fixtures: None,
        }
    }

    pub fn with_input(mut self, p: impl Into<PathBuf>) -> Self {
        self.input = Some(p.into());
        self
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |s: String| Err(RunError::Config(s));
        if self.command != Command::Selftest && self.input.is_none() {
            return bad(format!("`{}` needs an input file", self.command.as_str()));
        }
        for p in self.input.iter().chain(&self.input_pattern).chain(&self.fixtures) {
            if !p.exists() {
                return bad(format!("{}: no such file or directory", p.display()));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("--dt must be positive, got {dt}"));
            }
        }
        if let Some(nx) = self.nx {
            if nx < 2 {
                return bad(format!("--nx must be at least 2, got {nx}"));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("--T must be positive, got {h}"));
            }
        }
        if self.depth == Some(0) {
            return bad("--depth must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("--trials must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("--threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }

    /// Output directory: `--out`, then `$GRAPHFLOW_OUT`, then `graphflow-out`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Canonical description of everything that affects results.
    pub fn canonical(&self) -> String {
        let name = |p: &Option<PathBuf>| {
            p.as_ref()
                .and_then(|p| p.file_name())
                .map_or("-".to_string(), |n| n.to_string_lossy().into_owned())
        };
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let lambdas: Vec<String> = self.lambda.iter().map(|&z| format_complex(z)).collect();
        format!(
            "{} input={} pattern={} dt={} nx={} T={} lambda=[{}] depth={} threshold={} seed={} trials={} t={} filter={}",
            self.command.as_str(),
            name(&self.input),
            name(&self.input_pattern),
            opt(self.dt.map(|v| v.to_string())),
            opt(self.nx.map(|v| v.to_string())),
            opt(self.horizon.map(|v| v.to_string())),
            lambdas.join(","),
            opt(self.depth.map(|v| v.to_string())),
            self.threshold,
            self.seed,
            self.trials,
            opt(self.t.map(|v| v.to_string())),
            opt(self.filter.clone()),
        )
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("simulation failed: {0}")]
    Solver(#[from] SolverError),
    #[error("analysis failed: {0}")]
    Control(#[from] ControlError),
    #[error("structural analysis failed: {0}")]
    Structural(#[from] StructuralError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit(&self) -> Exit {
        match self {
            RunError::Solver(SolverError::NonFiniteState { .. } | SolverError::TailNotNegligible { .. }) => {
                Exit::NumericalFailure
            }
            RunError::Control(ControlError::NoConvergence { .. } | ControlError::SingularResolvent { .. }) => {
                Exit::NumericalFailure
            }
            RunError::Io(_) => Exit::NumericalFailure,
            _ => Exit::InputError,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit: Exit,
    pub report: Report,
    pub artifacts: Vec<PathBuf>,
    /// Text printed to stdout.
    pub stdout: String,
}

pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    match config.command {
        Command::Simulate => simulate(config),
        Command::Analyze => analyze(config),
        Command::Structural => structural(config),
        Command::Atfm => atfm(config),
        Command::Selftest => run_selftest(config),
    }
}

fn input(config: &RunConfig) -> &Path {
    config.input.as_deref().expect("validated")
}

/// Input file names with their bytes, hashed into the provenance block.
type Inputs = Vec<(String, Vec<u8>)>;

fn load_spec(config: &RunConfig) -> Result<(GraphSpec, Inputs), RunError> {
    let path = input(config);
    let spec = parse_graph_spec(path)?;
    let bytes = std::fs::read(path)?;
    Ok((spec, vec![(file_label(path), bytes)]))
}

fn file_label(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn finish(
    config: &RunConfig,
    mut report: Report,
    exit: Exit,
    mut artifacts: Vec<PathBuf>,
) -> Result<RunOutcome, RunError> {
    report.set("exit_code", exit.code() as i64);
    artifacts.extend(report.write(&config.out_dir())?);
    let stdout = report.summary_text();
    Ok(RunOutcome {
        exit,
        report,
        artifacts,
        stdout,
    })
}

fn simulate(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let (spec, inputs) = load_spec(config)?;
    let mut sc = spec.scenario().map_err(RunError::Config)?;
    if let Some(nx) = config.nx {
        sc = sc.with_nx(nx);
    }
    if let Some(dt) = config.dt {
        sc.dt = dt;
    }
    if let Some(h) = config.horizon {
        sc.horizon = h;
    }
    let rec = solve(&sc)?;
    let g = &spec.graph;
    let out = config.out_dir();

    let mut report = Report::new("simulate");
    report.provenance(&config.canonical(), &inputs, None);
    report.claim("result.edges", "edges", g.num_edges() as i64);
    report.claim("result.dt", "time step", rec.dt);
    report.claim("result.nx", "grid points per edge", rec.nx as i64);
    report.claim("result.steps", "steps", rec.steps as i64);
    report.claim("result.horizon", "horizon", rec.horizon());
    let last = rec.norms.last().copied().expect("at least one step");
    report.claim("result.final_mass", "final mass", last.mass);
    report.claim("result.final_l1", "final L1 norm", last.l1);
    report.claim("result.initial_mass", "initial mass", rec.norms[0].mass);
    report.claim(
        "result.boundary_residual",
        "boundary residual at t=0",
        rec.boundary_residual,
    );
    let peak = rec
        .inflow
        .iter()
        .chain(&rec.outflow)
        .flat_map(|t| t.plus.iter().chain(&t.minus))
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    report.claim("result.max_trace", "largest boundary trace", peak);

    let mut header = vec!["t".to_string()];
    header.extend(g.edges().iter().map(|e| format!("inflow_{}", e.name)));
    header.extend(g.edges().iter().map(|e| format!("outflow_{}", e.name)));
    let rows: Vec<Vec<f64>> = (0..=rec.steps)
        .map(|n| {
            let mut r = vec![rec.time(n)];
            for kind in [TraceKind::Inflow, TraceKind::Outflow] {
                r.extend((0..g.num_edges()).map(|j| rec.trace(kind, j).plus[n]));
            }
            r
        })
        .collect();
    let mut artifacts = vec![write_csv(&out.join("traces.csv"), &header, &rows)?];
    let norms: Vec<Vec<f64>> = rec
        .norms
        .iter()
        .enumerate()
        .map(|(n, s)| vec![rec.time(n), s.l1, s.mass])
        .collect();
    artifacts.push(write_csv(
        &out.join("norms.csv"),
        &["t".into(), "l1".into(), "mass".into()],
        &norms,
    )?);
    if !rec.snapshots.is_empty() {
        let rows: Vec<Vec<f64>> = rec
            .snapshots
            .iter()
            .flat_map(|(t, z)| {
                (0..z.num_edges()).flat_map(move |j| (0..z.nx()).map(move |i| vec![*t, j as f64, z.x(i), z.edge(j)[i]]))
            })
            .collect();
        let header = ["t", "edge", "x", "z"].map(String::from);
        artifacts.push(write_csv(&out.join("snapshots.csv"), &header, &rows)?);
    }
    finish(config, report, Exit::Ok, artifacts)
}

fn method_name(m: ResolventMethod) -> &'static str {
    match m {
        ResolventMethod::Neumann => "neumann",
        ResolventMethod::Direct => "direct",
    }
}

fn analyze(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let (spec, inputs) = load_spec(config)?;
    let opts = AnalysisOptions {
        samples: (!config.lambda.is_empty()).then(|| config.lambda.clone()),
        depth: config.depth,
        threshold: config.threshold,
        allow_below_mu0: false,
    };
    let rep = approx_controllability(&spec.graph, &spec.delays, &opts)?;
    let spaces = x_vs_history_controllability(&rep, &spec.delays);

    let mut report = Report::new("analyze");
    report.provenance(&config.canonical(), &inputs, None);
    report.claim("result.verdict", "verdict", rep.verdict.as_str());
    report.claim("result.dim", "edges", rep.dim as i64);
    report.claim("result.depth", "Kalman depth", rep.depth as i64);
    report.claim("result.threshold", "rank threshold", rep.threshold);
    if let Some(mu0) = rep.mu0 {
        report.claim("result.mu0", "mu0", mu0);
    }
    report.set("spaces.state", spaces.state.as_str());
    report.set("spaces.history", spaces.history.as_str());
    report.set("spaces.full", spaces.full.as_str());
    let samples: Vec<Value> = rep
        .samples
        .iter()
        .map(|s| {
            let mut t = Table::new();
            t.insert("lambda".into(), complex(s.lambda));
            t.insert("norm1".into(), s.norm1.into());
            t.insert("rank".into(), (s.rank as i64).into());
            t.insert("method".into(), method_name(s.method).into());
            t.insert("singular_values".into(), floats(s.singular_values.iter().copied()));
            Value::Table(t)
        })
        .collect();
    report.set("samples", Value::Array(samples));
    let ranks: Vec<String> = rep.samples.iter().map(|s| format!("{}", s.rank)).collect();
    report.note(format!("ranks at {} samples: {}", rep.samples.len(), ranks.join(" ")));
    if !rep.skipped.is_empty() {
        report.set("skipped", complexes(rep.skipped.iter().copied()));
    }
    if let Some(w) = &rep.witness {
        report.claim("witness.lambda", "witness lambda", complex(w.lambda));
        report.set("witness.g_star", complexes(w.g_star.iter().copied()));
        report.claim("witness.relative_residual", "witness residual", w.relative_residual);
    }
    if let Some(h) = &spaces.history_witness {
        report.set("history_witness.lambda", complex(h.lambda));
        report.set("history_witness.r", h.r);
        report.set("history_witness.form", "phi(theta) = exp(-lambda theta) g_star");
        let thetas = [-h.r, -0.5 * h.r, 0.0];
        report.set("history_witness.theta", floats(thetas));
        let values: Vec<Value> = thetas.iter().map(|&th| complexes(h.eval(th).iter().copied())).collect();
        report.set("history_witness.values", Value::Array(values));
    }
    if !rep.notes.is_empty() {
        report.set(
            "notes",
            Value::Array(rep.notes.iter().map(|n| Value::from(n.as_str())).collect()),
        );
    }

    let rows: Vec<Vec<f64>> = rep
        .samples
        .iter()
        .map(|s| {
            vec![
                s.lambda.re,
                s.lambda.im,
                s.norm1,
                s.rank as f64,
                s.singular_values.first().copied().unwrap_or(0.0),
                s.singular_values.last().copied().unwrap_or(0.0),
                if s.method == ResolventMethod::Neumann { 0.0 } else { 1.0 },
            ]
        })
        .collect();
    let header = [
        "re_lambda",
        "im_lambda",
        "norm1",
        "rank",
        "sigma_max",
        "sigma_min",
        "direct_solve",
    ]
    .map(String::from);
    let artifacts = vec![write_csv(&config.out_dir().join("samples.csv"), &header, &rows)?];
    finish(config, report, Exit::from_verdict(rep.verdict), artifacts)
}

/// Free pattern of the nonzero entries of a numeric matrix.
fn pattern_of(m: &nalgebra::DMatrix<f64>) -> StructuredMatrix {
    let mut s = StructuredMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                s.set(i, j, Cell::Free);
            }
        }
    }
    s
}

fn set_witness(report: &mut Report, prefix: &str, w: &graphflow::structural::FormWitness) {
    let idx = |v: &[usize]| Value::Array(v.iter().map(|&i| Value::Integer(i as i64 + 1)).collect());
    report.set(&format!("{prefix}.rows"), idx(&w.rows));
    report.set(&format!("{prefix}.cols"), idx(&w.cols));
    report.claim(&format!("{prefix}.k"), "witness k", w.k as i64);
}

fn structural(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let path = input(config);
    let mut inputs = vec![(file_label(path), std::fs::read(path)?)];
    let is_graph = path.extension().is_some_and(|e| e == "graph");
    let (a, k) = if is_graph {
        let spec = parse_graph_spec(path)?;
        (pattern_of(&spec.allocation()), Some(pattern_of(spec.graph.control())))
    } else {
        let a = parse_pattern(path)?;
        let k = match &config.input_pattern {
            Some(p) => {
                inputs.push((file_label(p), std::fs::read(p)?));
                Some(parse_pattern(p)?)
            }
            None => None,
        };
        (a, k)
    };

    let mut report = Report::new("structural");
    report.provenance(&config.canonical(), &inputs, Some(config.seed));
    report.set("pattern.rows", a.nrows() as i64);
    report.set("pattern.cols", a.ncols() as i64);
    report.claim("result.generic_rank", "generic rank", generic_rank(&a) as i64);

    let mut exit = Exit::Ok;
    if config.t.is_some() || k.is_none() {
        let t = config.t.unwrap_or(a.nrows());
        let (form, witness) = has_form_t(&a, t)?;
        report.set("form.t", t as i64);
        report.set("form.holds", form);
        report.note(if form {
            format!("form ({t}): yes")
        } else {
            format!("form ({t}): no")
        });
        if let Some(w) = &witness {
            set_witness(&mut report, "form.witness", w);
            report.note(format!(
                "zero block {} x {} in rows {:?}, cols {:?}",
                w.rows.len(),
                w.k,
                w.rows.iter().map(|i| i + 1).collect::<Vec<_>>(),
                w.cols.iter().map(|i| i + 1).collect::<Vec<_>>()
            ));
        }
        let check = lemma_consistency(&a, t, config.trials, config.seed)?;
        report.set("sampling.trials", config.trials as i64);
        report.claim(
            "sampling.max_sampled_rank",
            "largest sampled rank",
            check.max_sampled_rank as i64,
        );
        report.claim(
            "sampling.consistent",
            "sampling agrees with form test",
            check.consistent,
        );
    }
    if let Some(k) = k {
        let rep = structural_controllability(&a, &k, config.trials, config.seed)?;
        let verdict = if rep.controllable {
            "structurally-controllable"
        } else {
            "not-structurally-controllable"
        };
        report.claim("structural.verdict", "verdict", verdict);
        report.claim(
            "structural.extended_generic_rank",
            "extended matrix generic rank",
            rep.generic_rank as i64,
        );
        report.claim("structural.target", "target rank", rep.target as i64);
        report.claim(
            "structural.monte_carlo_rank",
            "largest sampled Kalman rank",
            rep.monte_carlo_rank as i64,
        );
        report.claim("structural.agrees", "sampling agrees", rep.agrees);
        if let Some(w) = &rep.witness {
            set_witness(&mut report, "structural.witness", w);
        }
        if !rep.controllable {
            exit = Exit::Negative;
        }
    }
    finish(config, report, exit, Vec::new())
}

fn atfm(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let (spec, inputs) = load_spec(config)?;
    let section = spec
        .atfm
        .clone()
        .ok_or_else(|| RunError::Config(format!("{}: no [atfm] section", input(config).display())))?;
    let g = &spec.graph;
    let h = spec.allocation();
    let m = g.num_edges();
    // validates the allocation matrix before the search
    atfm_operator(g, &h, section.r, Complex64::from(1.0))?;
    let mu0 = norm_abscissa(|mu| {
        atfm_operator(g, &h, section.r, Complex64::from(mu))
            .map(|op| op.norm1)
            .unwrap_or(f64::INFINITY)
    })?
    .mu0;
    let samples: Vec<Complex64> = if config.lambda.is_empty() {
        DEFAULT_OFFSETS.iter().map(|&o| Complex64::from(mu0 + o)).collect()
    } else {
        config.lambda.clone()
    };
    if let Some(bad) = samples.iter().find(|s| s.re <= 0.0) {
        return Err(RunError::Config(format!(
            "sample {} must have positive real part",
            format_complex(*bad)
        )));
    }
    let depth = config.depth.unwrap_or(m);
    let k = scaled_control(g);
    let mut ranks = Vec::new();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &mu in &samples {
        let op = atfm_operator(g, &h, section.r, mu)?;
        let (rank, sv) = rank_with_tolerance(&kalman_matrix(&op.matrix, &k, depth), config.threshold);
        ranks.push(rank);
        rows.push(vec![mu.re, mu.im, op.norm1, rank as f64]);
        let mut t = Table::new();
        t.insert("mu".into(), complex(mu));
        t.insert("norm1".into(), op.norm1.into());
        t.insert("rank".into(), (rank as i64).into());
        t.insert("singular_values".into(), floats(sv));
        table.push(Value::Table(t));
    }
    let full = ranks.iter().filter(|&&r| r == m).count();
    let verdict = if full == ranks.len() {
        Verdict::Controllable
    } else if full == 0 {
        Verdict::NotControllable
    } else {
        Verdict::Inconclusive
    };
    let structural = structural_controllability(&pattern_of(&h), &pattern_of(g.control()), config.trials, config.seed)?;

    let mut report = Report::new("atfm");
    report.provenance(&config.canonical(), &inputs, Some(config.seed));
    report.claim("result.verdict", "verdict", verdict.as_str());
    report.claim("result.r", "airborne delay", section.r);
    report.claim("result.mu0", "mu0", mu0);
    report.claim("result.depth", "Kalman depth", depth as i64);
    report.set("samples", Value::Array(table));
    report.note(format!(
        "ranks: {}",
        ranks.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ")
    ));
    report.claim(
        "structural.controllable",
        "structurally controllable",
        structural.controllable,
    );
    report.claim(
        "structural.extended_generic_rank",
        "extended matrix generic rank",
        structural.generic_rank as i64,
    );
    report.claim("structural.target", "target rank", structural.target as i64);
    if let Some(w) = &structural.witness {
        set_witness(&mut report, "structural.witness", w);
    }
    let header = ["re_mu", "im_mu", "norm1", "rank"].map(String::from);
    let artifacts = vec![write_csv(&config.out_dir().join("atfm.csv"), &header, &rows)?];
    finish(config, report, Exit::from_verdict(verdict), artifacts)
}

fn run_selftest(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let fixtures = match &config.fixtures {
        Some(dir) => Fixtures::from_dir(dir)?,
        None => Fixtures::embedded(),
    };
    let results = selftest::run_selftest(&fixtures, config.filter.as_deref());
    let mut report = Report::new("selftest");
    report.provenance(&config.canonical(), &[], None);
    let passed = results.iter().filter(|r| r.passed).count();
    report.set("result.criteria", results.len() as i64);
    report.set("result.passed", passed as i64);
    for r in &results {
        report.set(&format!("criteria.{}.name", r.id), r.name);
        report.set(&format!("criteria.{}.passed", r.id), r.passed);
        report.set(&format!("criteria.{}.detail", r.id), r.detail.as_str());
    }
    let exit = if results.is_empty() {
        Exit::InputError
    } else if passed == results.len() {
        Exit::Ok
    } else {
        Exit::Negative
    };
    report.set("exit_code", exit.code() as i64);
    let mut artifacts = Vec::new();
    if config.out.is_some() || std::env::var_os(OUT_ENV).is_some() {
        artifacts = report.write(&config.out_dir())?;
    }
    let mut stdout = selftest::format_table(&results);
    if results.is_empty() {
        stdout.push_str("no criterion matches the filter\n");
    }
    Ok(RunOutcome {
        exit,
        report,
        artifacts,
        stdout,
    })
}
