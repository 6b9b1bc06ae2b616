//! Graph spec files (`*.graph`) and pattern files (`*.pattern`).
//!
//! Specs are TOML documents; the grammar is described in `docs/formats.md`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use graphflow::delay::DelayMeasure;
use graphflow::graph::{CoefficientProfile, EdgeDescription, PiecewiseConstant};
use graphflow::signal::SampledSignal;
use graphflow::solver::{Control, InitialHistory, Scenario};
use graphflow::structural::{StructuralError, StructuredMatrix};
use graphflow::transport::EdgeProfiles;
use graphflow::{build_graph, GraphDescription, MetricGraph};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("{path}: cannot read: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: validation failed [{rule}]: {message}")]
    Validation {
        path: String,
        rule: String,
        message: String,
    },
}

impl FormatError {
    pub fn rule(&self) -> Option<&str> {
        match self {
            FormatError::Validation { rule, .. } => Some(rule),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawProfile {
    Constant(f64),
    Pieces { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl RawProfile {
    fn from_profile(p: &PiecewiseConstant) -> Self {
        if p.values().len() == 1 && p.start() == 0.0 && p.end() == 1.0 {
            RawProfile::Constant(p.values()[0])
        } else {
            RawProfile::Pieces {
                breakpoints: p.breakpoints().to_vec(),
                values: p.values().to_vec(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    vertices: Vec<String>,
    inputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kirchhoff_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncation_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelay {
    r: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    atoms: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<RawPieces>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPieces {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    name: String,
    tail: String,
    head: String,
    velocity: RawProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    absorption: Option<RawProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delay: Option<RawDelay>,
}

/// Initial profile of one edge: a constant or samples on a uniform grid of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialValue {
    Constant(f64),
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryKind {
    #[default]
    Zero,
    Follow,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSpec {
    #[default]
    Zero,
    Exponential {
        rate: f64,
        amplitudes: Vec<f64>,
    },
    Pulse {
        channel: usize,
        start: f64,
        end: f64,
        amplitude: f64,
    },
    /// One row of samples per channel, spaced `dt` apart from `t = 0`.
    Samples {
        dt: f64,
        values: Vec<Vec<f64>>,
    },
}

impl ControlSpec {
    pub fn to_control(&self) -> Control {
        match self {
            ControlSpec::Zero => Control::Zero,
            ControlSpec::Exponential { rate, amplitudes } => Control::Exponential {
                rate: *rate,
                amplitudes: amplitudes.clone(),
            },
            ControlSpec::Pulse {
                channel,
                start,
                end,
                amplitude,
            } => Control::Pulse {
                channel: *channel,
                start: *start,
                end: *end,
                amplitude: *amplitude,
            },
            ControlSpec::Samples { dt, values } => {
                Control::Signal(Arc::new(SampledSignal::new(0.0, *dt, values.clone())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial: BTreeMap<String, InitialValue>,
    #[serde(default)]
    pub history: HistoryKind,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtfmSpec {
    pub r: f64,
    /// `allocation[j][k]`: share of the flow leaving edge `k` that enters edge `j`.
    /// Defaults to the adjacency matrix of the line graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    graph: RawGraph,
    #[serde(rename = "edge")]
    edges: Vec<RawEdge>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    weights: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atfm: Option<AtfmSpec>,
}

/// A validated spec file.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub graph: MetricGraph,
    pub delays: Vec<DelayMeasure>,
    pub scenario: ScenarioSpec,
    pub atfm: Option<AtfmSpec>,
}

impl GraphSpec {
    /// Simulation scenario with the spec's data; `dt`, `nx` and horizon fall
    /// back to the solver defaults.
    pub fn scenario(&self) -> Result<Scenario, String> {
        let s = &self.scenario;
        let mut sc = Scenario::new(self.graph.clone(), self.delays.clone());
        if let Some(nx) = s.nx {
            sc = sc.with_nx(nx);
        }
        if let Some(dt) = s.dt {
            sc.dt = dt;
        }
        if let Some(h) = s.horizon {
            sc.horizon = h;
        }
        sc.initial = self.initial_profile(sc.nx)?;
        sc.history = match s.history {
            HistoryKind::Zero => InitialHistory::Zero,
            HistoryKind::Follow => InitialHistory::FollowInitial,
        };
        sc.control = s.control.to_control();
        sc.snapshot_times = s.snapshots.clone();
        Ok(sc)
    }

    pub fn initial_profile(&self, nx: usize) -> Result<EdgeProfiles, String> {
        let m = self.graph.num_edges();
        let mut per_edge: Vec<Option<&InitialValue>> = vec![None; m];
        for (name, v) in &self.scenario.initial {
            let j = self
                .graph
                .edge_index(name)
                .ok_or_else(|| format!("initial value for unknown edge `{name}`"))?;
            if let InitialValue::Samples(s) = v {
                if s.len() < 2 {
                    return Err(format!("initial samples for `{name}` need at least two values"));
                }
            }
            per_edge[j] = Some(v);
        }
        Ok(EdgeProfiles::from_fn(m, nx, |j, x| match per_edge[j] {
            None => 0.0,
            Some(InitialValue::Constant(c)) => *c,
            Some(InitialValue::Samples(s)) => {
                let u = x * (s.len() - 1) as f64;
                let i = (u.floor() as usize).min(s.len() - 2);
                let f = u - i as f64;
                (1.0 - f) * s[i] + f * s[i + 1]
            }
        }))
    }

    /// Allocation matrix of the `[atfm]` section, or the line-graph adjacency.
    pub fn allocation(&self) -> DMatrix<f64> {
        match self.atfm.as_ref().and_then(|a| a.allocation.as_ref()) {
            Some(rows) => {
                let m = rows.len();
                DMatrix::from_fn(m, m, |j, k| rows[j].get(k).copied().unwrap_or(f64::NAN))
            }
            None => graphflow::graph::adjacency_b(&self.graph),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.chars().count(), |p| before[p + 1..].chars().count())
        + 1;
    (line, column)
}

/// Line/column of the `name = "<value>"` entry in the `[[edge]]` table with
/// that name, used to locate validation errors.
fn locate_edge(text: &str, name: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{name}\"");
    text.lines().enumerate().find_map(|(i, l)| {
        let t = l.trim_start();
        (t.starts_with("name") && t.contains(&needle)).then(|| (i + 1, l.len() - t.len() + 1))
    })
}

fn profile(raw: &RawProfile) -> Result<CoefficientProfile, graphflow::GraphError> {
    match raw {
        RawProfile::Constant(c) => Ok(CoefficientProfile::constant(*c)),
        RawProfile::Pieces { breakpoints, values } => CoefficientProfile::on_unit(breakpoints.clone(), values.clone()),
    }
}

/// Parses and validates spec text; `path` only labels messages.
pub fn parse_graph_spec_str(text: &str, path: &str) -> Result<GraphSpec, FormatError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        FormatError::Parse {
            path: path.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let invalid = |rule: &str, message: String| FormatError::Validation {
        path: path.to_string(),
        rule: rule.to_string(),
        message,
    };
    let at_edge = |name: &str, msg: String| match locate_edge(text, name) {
        Some((l, c)) => format!("{msg} (edge at line {l}, column {c})"),
        None => msg,
    };

    let inputs = raw.graph.inputs;
    let mut edges = Vec::with_capacity(raw.edges.len());
    let mut control = Vec::with_capacity(raw.edges.len());
    let mut delays = Vec::with_capacity(raw.edges.len());
    for e in &raw.edges {
        let velocity = profile(&e.velocity).map_err(|err| invalid(err.rule(), at_edge(&e.name, err.to_string())))?;
        let absorption = match &e.absorption {
            Some(a) => profile(a).map_err(|err| invalid(err.rule(), at_edge(&e.name, err.to_string())))?,
            None => CoefficientProfile::constant(0.0),
        };
        edges.push(EdgeDescription {
            name: e.name.clone(),
            tail: e.tail.clone(),
            head: e.head.clone(),
            velocity,
            absorption,
        });
        control.push(e.control.clone().unwrap_or_else(|| vec![0.0; inputs]));
        let delay = match &e.delay {
            None => DelayMeasure::zero(),
            Some(d) => {
                let density = match &d.density {
                    Some(p) => Some(
                        PiecewiseConstant::new(p.breakpoints.clone(), p.values.clone())
                            .map_err(|err| invalid("delay measure", at_edge(&e.name, err.to_string())))?,
                    ),
                    None => None,
                };
                let atoms = d.atoms.iter().map(|a| (a[0], a[1])).collect();
                DelayMeasure::new(d.r, atoms, density)
                    .map_err(|err| invalid(err.rule(), at_edge(&e.name, err.to_string())))?
            }
        };
        delays.push(delay);
    }
    let weights = raw
        .weights
        .iter()
        .flat_map(|(v, ws)| ws.iter().map(move |(e, w)| (v.clone(), e.clone(), *w)))
        .collect();
    let desc = GraphDescription {
        vertices: raw.graph.vertices.clone(),
        edges,
        weights,
        control,
        inputs,
        kirchhoff_tol: raw.graph.kirchhoff_tol,
        truncation_depth: raw.graph.truncation_depth,
    };
    let graph = build_graph(&desc).map_err(|err| invalid(err.rule(), err.to_string()))?;
    let spec = GraphSpec {
        graph,
        delays,
        scenario: raw.scenario.unwrap_or_default(),
        atfm: raw.atfm,
    };
    spec.initial_profile(2).map_err(|m| invalid("scenario", m))?;
    if let Some(a) = &spec.atfm {
        let m = spec.graph.num_edges();
        if let Some(rows) = &a.allocation {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(invalid("allocation", format!("allocation matrix must be {m} x {m}")));
            }
        }
    }
    Ok(spec)
}

pub fn parse_graph_spec(path: &Path) -> Result<GraphSpec, FormatError> {
    let text = read(path)?;
    parse_graph_spec_str(&text, &path.display().to_string())
}

fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|e| FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Canonical text of a spec; parsing it back gives an identical graph.
pub fn write_graph_spec(spec: &GraphSpec) -> String {
    let desc = spec.graph.describe();
    let mut weights: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (v, e, w) in &desc.weights {
        weights.entry(v.clone()).or_default().insert(e.clone(), *w);
    }
    let raw = RawSpec {
        graph: RawGraph {
            vertices: desc.vertices.clone(),
            inputs: desc.inputs,
            kirchhoff_tol: desc.kirchhoff_tol,
            truncation_depth: desc.truncation_depth,
        },
        edges: desc
            .edges
            .iter()
            .zip(&desc.control)
            .zip(&spec.delays)
            .map(|((e, k), d)| RawEdge {
                name: e.name.clone(),
                tail: e.tail.clone(),
                head: e.head.clone(),
                velocity: RawProfile::from_profile(&e.velocity),
                absorption: Some(RawProfile::from_profile(&e.absorption)),
                control: Some(k.clone()),
                delay: (!d.is_zero()).then(|| RawDelay {
                    r: d.r(),
                    atoms: d.atoms().iter().map(|&(t, w)| [t, w]).collect(),
                    density: d.density().map(|p| RawPieces {
                        breakpoints: p.breakpoints().to_vec(),
                        values: p.values().to_vec(),
                    }),
                }),
            })
            .collect(),
        weights,
        scenario: (spec.scenario != ScenarioSpec::default()).then(|| spec.scenario.clone()),
        atfm: spec.atfm.clone(),
    };
    toml::to_string(&raw).expect("spec serializes")
}

pub fn parse_pattern_str(text: &str, path: &str) -> Result<StructuredMatrix, FormatError> {
    StructuredMatrix::from_text(text).map_err(|e| match e {
        StructuralError::Parse { line, column, token } => FormatError::Parse {
            path: path.to_string(),
            line,
            column,
            message: format!("unexpected {token:?}; expected x, 0 or 1"),
        },
        other => FormatError::Validation {
            path: path.to_string(),
            rule: "pattern".into(),
            message: other.to_string(),
        },
    })
}

pub fn parse_pattern(path: &Path) -> Result<StructuredMatrix, FormatError> {
    let text = read(path)?;
    parse_pattern_str(&text, &path.display().to_string())
}
