//! Directed metric graphs with normalized edges.
//!
//! Every edge is identified with `[0, 1]` and parameterized against the flow
//! direction: material enters an edge at `x = 1` (its tail vertex) and leaves
//! at `x = 0` (its head vertex).

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::DMatrix;
use thiserror::Error;

pub type VertexId = usize;
pub type EdgeId = usize;

/// Default tolerance on the Kirchhoff weight sums.
pub const DEFAULT_KIRCHHOFF_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("weights leaving vertex `{vertex}` sum to {sum}, expected 1")]
    KirchhoffViolation { vertex: String, sum: f64 },
    #[error("velocity on edge `{edge}` is not bounded away from zero (min {min})")]
    NonPositiveVelocity { edge: String, min: f64 },
    #[error("invalid piecewise profile: {0}")]
    InvalidProfile(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("weight for edge `{edge}` given at vertex `{vertex}`, but the edge does not leave it")]
    WeightNotOutgoing { vertex: String, edge: String },
    #[error("weight w[{vertex}, {edge}] = {value} is negative or not finite")]
    InvalidWeight { vertex: String, edge: String, value: f64 },
    #[error("control matrix has shape {rows}x{cols}, expected {expected_rows} rows of equal length")]
    ControlShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
    },
}

impl GraphError {
    /// Short name of the violated rule, used in user-facing validation messages.
    pub fn rule(&self) -> &'static str {
        match self {
            GraphError::EmptyGraph => "non-empty",
            GraphError::KirchhoffViolation { .. } => "Kirchhoff",
            GraphError::NonPositiveVelocity { .. } => "(A1)",
            GraphError::InvalidProfile(_) => "profile",
            GraphError::UnknownVertex(_) | GraphError::UnknownEdge(_) => "reference",
            GraphError::DuplicateName(_) => "unique-names",
            GraphError::WeightNotOutgoing { .. } | GraphError::InvalidWeight { .. } => "weights",
            GraphError::ControlShape { .. } => "control",
        }
    }
}

/// Piecewise-constant function on an interval `[breakpoints[0], breakpoints[last]]`.
///
/// Values are right-continuous inside the interval; the right end point takes
/// the value of the last piece.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// Velocity `c_j` or absorption `q_j` of an edge, piecewise constant on `[0, 1]`.
pub type CoefficientProfile = PiecewiseConstant;

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, GraphError> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() + 1 {
            return Err(GraphError::InvalidProfile(format!(
                "{} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(GraphError::InvalidProfile("non-finite entry".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GraphError::InvalidProfile(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { breakpoints, values })
    }

    /// Constant `value` on `[0, 1]`.
    pub fn constant(value: f64) -> Self {
        Self {
            breakpoints: vec![0.0, 1.0],
            values: vec![value],
        }
    }

    /// Profile on `[0, 1]`; checks the end points.
    pub fn on_unit(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, GraphError> {
        let p = Self::new(breakpoints, values)?;
        if p.start() != 0.0 || p.end() != 1.0 {
            return Err(GraphError::InvalidProfile(
                "coefficient profiles must start at 0 and end at 1".into(),
            ));
        }
        Ok(p)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    /// Iterator over `(a, b, value)` pieces.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, &v)| (w[0], w[1], v))
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let idx = self.breakpoints[1..].partition_point(|&b| b <= x);
        self.values[idx.min(self.values.len() - 1)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn total_variation_mass(&self) -> f64 {
        self.pieces().map(|(a, b, v)| (b - a) * v.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub name: String,
    /// Vertex at `x = 1`, where material enters the edge.
    pub tail: VertexId,
    /// Vertex at `x = 0`, where material leaves the edge.
    pub head: VertexId,
    pub velocity: CoefficientProfile,
    pub absorption: CoefficientProfile,
}

impl Edge {
    /// Travel time from inflow to outflow, the integral of `1 / c` over `[0, 1]`.
    pub fn transit_time(&self) -> f64 {
        self.velocity.pieces().map(|(a, b, c)| (b - a) / c).sum()
    }
}

/// Name-based description of a graph, as read from a spec file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphDescription {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeDescription>,
    /// `(vertex, edge, w)` triples; `edge` must leave `vertex`.
    pub weights: Vec<(String, String, f64)>,
    /// Input matrix, one row per edge (in edge order), `inputs` columns.
    pub control: Vec<Vec<f64>>,
    pub inputs: usize,
    pub kirchhoff_tol: Option<f64>,
    pub truncation_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDescription {
    pub name: String,
    pub tail: String,
    pub head: String,
    pub velocity: CoefficientProfile,
    pub absorption: CoefficientProfile,
}

/// Validated directed metric graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
    /// `weights[j]` is `w_{tail(j), j}`.
    weights: Vec<f64>,
    control: DMatrix<f64>,
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
    tau0: f64,
    kirchhoff_tol: f64,
    truncation_depth: Option<usize>,
}

/// Validates a description and builds the graph.
///
/// A vertex with exactly one outgoing edge and no listed weight gets weight 1
/// on that edge; branching vertices must list their weights.
pub fn build_graph(desc: &GraphDescription) -> Result<MetricGraph, GraphError> {
    if desc.edges.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let mut vertex_index = HashMap::new();
    for (i, v) in desc.vertices.iter().enumerate() {
        if vertex_index.insert(v.as_str(), i).is_some() {
            return Err(GraphError::DuplicateName(v.clone()));
        }
    }
    let lookup = |name: &str| {
        vertex_index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownVertex(name.to_string()))
    };

    let mut edges = Vec::with_capacity(desc.edges.len());
    let mut edge_index = HashMap::new();
    for (j, e) in desc.edges.iter().enumerate() {
        if edge_index.insert(e.name.as_str(), j).is_some() {
            return Err(GraphError::DuplicateName(e.name.clone()));
        }
        check_unit_profile(&e.velocity)?;
        check_unit_profile(&e.absorption)?;
        let min = e.velocity.min();
        if min <= 0.0 {
            return Err(GraphError::NonPositiveVelocity {
                edge: e.name.clone(),
                min,
            });
        }
        edges.push(Edge {
            name: e.name.clone(),
            tail: lookup(&e.tail)?,
            head: lookup(&e.head)?,
            velocity: e.velocity.clone(),
            absorption: e.absorption.clone(),
        });
    }

    let mut weights = vec![f64::NAN; edges.len()];
    for (v, e, w) in &desc.weights {
        let vi = lookup(v)?;
        let j = *edge_index
            .get(e.as_str())
            .ok_or_else(|| GraphError::UnknownEdge(e.clone()))?;
        if edges[j].tail != vi {
            return Err(GraphError::WeightNotOutgoing {
                vertex: v.clone(),
                edge: e.clone(),
            });
        }
        if !w.is_finite() || *w < 0.0 {
            return Err(GraphError::InvalidWeight {
                vertex: v.clone(),
                edge: e.clone(),
                value: *w,
            });
        }
        weights[j] = *w;
    }

    let mut out: Vec<Vec<EdgeId>> = vec![Vec::new(); desc.vertices.len()];
    for (j, e) in edges.iter().enumerate() {
        out[e.tail].push(j);
    }
    let tol = desc.kirchhoff_tol.unwrap_or(DEFAULT_KIRCHHOFF_TOL);
    for (vi, outgoing) in out.iter().enumerate() {
        if outgoing.len() == 1 && weights[outgoing[0]].is_nan() {
            weights[outgoing[0]] = 1.0;
        }
        if outgoing.is_empty() {
            continue;
        }
        let sum: f64 = outgoing
            .iter()
            .map(|&j| if weights[j].is_nan() { 0.0 } else { weights[j] })
            .sum();
        if (sum - 1.0).abs() > tol {
            return Err(GraphError::KirchhoffViolation {
                vertex: desc.vertices[vi].clone(),
                sum,
            });
        }
    }
    for w in &mut weights {
        if w.is_nan() {
            *w = 0.0;
        }
    }

    let m = edges.len();
    let n_inputs = desc.inputs;
    if desc.control.len() != m || desc.control.iter().any(|row| row.len() != n_inputs) {
        return Err(GraphError::ControlShape {
            rows: desc.control.len(),
            cols: desc.control.first().map_or(0, Vec::len),
            expected_rows: m,
        });
    }
    let control = DMatrix::from_fn(m, n_inputs, |i, l| desc.control[i][l]);

    let gamma1 = edges.iter().map(|e| e.velocity.min()).fold(f64::INFINITY, f64::min);
    let gamma2 = edges
        .iter()
        .map(|e| e.absorption.max())
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma3 = edges.iter().map(|e| e.velocity.max()).fold(0.0, f64::max);
    let tau0 = edges.iter().map(Edge::transit_time).fold(f64::INFINITY, f64::min);

    Ok(MetricGraph {
        vertices: desc.vertices.clone(),
        edges,
        weights,
        control,
        gamma1,
        gamma2,
        gamma3,
        tau0,
        kirchhoff_tol: tol,
        truncation_depth: desc.truncation_depth,
    })
}

fn check_unit_profile(p: &CoefficientProfile) -> Result<(), GraphError> {
    if p.start() != 0.0 || p.end() != 1.0 {
        return Err(GraphError::InvalidProfile(
            "coefficient profiles must start at 0 and end at 1".into(),
        ));
    }
    Ok(())
}

impl MetricGraph {
    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, j: EdgeId) -> &Edge {
        &self.edges[j]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Number of control inputs `N`.
    pub fn num_inputs(&self) -> usize {
        self.control.ncols()
    }

    /// Weight `w_{ij}` for vertex `i`; zero unless `j` leaves `i`.
    pub fn weight(&self, vertex: VertexId, edge: EdgeId) -> f64 {
        if self.edges[edge].tail == vertex {
            self.weights[edge]
        } else {
            0.0
        }
    }

    /// The input matrix `K`, one row per edge.
    pub fn control(&self) -> &DMatrix<f64> {
        &self.control
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn gamma3(&self) -> f64 {
        self.gamma3
    }

    /// Smallest transit time over all edges.
    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn max_transit_time(&self) -> f64 {
        self.edges.iter().map(Edge::transit_time).fold(0.0, f64::max)
    }

    pub fn kirchhoff_tol(&self) -> f64 {
        self.kirchhoff_tol
    }

    pub fn truncation_depth(&self) -> Option<usize> {
        self.truncation_depth
    }

    pub fn outgoing(&self, vertex: VertexId) -> impl Iterator<Item = EdgeId> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.tail == vertex)
            .map(|(j, _)| j)
    }

    pub fn edge_index(&self, name: &str) -> Option<EdgeId> {
        self.edges.iter().position(|e| e.name == name)
    }

    pub fn vertex_index(&self, name: &str) -> Option<VertexId> {
        self.vertices.iter().position(|v| v == name)
    }

    /// Same graph with a different input matrix.
    pub fn with_control(&self, control: DMatrix<f64>) -> Result<Self, GraphError> {
        if control.nrows() != self.num_edges() {
            return Err(GraphError::ControlShape {
                rows: control.nrows(),
                cols: control.ncols(),
                expected_rows: self.num_edges(),
            });
        }
        let mut g = self.clone();
        g.control = control;
        Ok(g)
    }

    /// Name-based description that rebuilds an identical graph.
    pub fn describe(&self) -> GraphDescription {
        let weights = self
            .edges
            .iter()
            .enumerate()
            .map(|(j, e)| (self.vertices[e.tail].clone(), e.name.clone(), self.weights[j]))
            .collect();
        GraphDescription {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDescription {
                    name: e.name.clone(),
                    tail: self.vertices[e.tail].clone(),
                    head: self.vertices[e.head].clone(),
                    velocity: e.velocity.clone(),
                    absorption: e.absorption.clone(),
                })
                .collect(),
            weights,
            control: (0..self.num_edges())
                .map(|i| self.control.row(i).iter().copied().collect())
                .collect(),
            inputs: self.num_inputs(),
            kirchhoff_tol: Some(self.kirchhoff_tol),
            truncation_depth: self.truncation_depth,
        }
    }
}

/// Outgoing and incoming incidence matrices, vertices by edges.
///
/// `outgoing[(i, j)] = 1` iff `v_i` is the tail of `e_j` (its `x = 1` end);
/// `incoming[(i, j)] = 1` iff `v_i` is the head of `e_j`.
pub fn incidence_matrices(g: &MetricGraph) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (g.num_vertices(), g.num_edges());
    let mut outgoing = DMatrix::zeros(n, m);
    let mut incoming = DMatrix::zeros(n, m);
    for (j, e) in g.edges().iter().enumerate() {
        outgoing[(e.tail, j)] = 1.0;
        incoming[(e.head, j)] = 1.0;
    }
    (outgoing, incoming)
}

/// Weighted outgoing incidence matrix: `outgoing` with ones replaced by `w_ij`.
pub fn weighted_outgoing_incidence(g: &MetricGraph) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(g.num_vertices(), g.num_edges());
    for (j, e) in g.edges().iter().enumerate() {
        w[(e.tail, j)] = g.weights[j];
    }
    w
}

/// Transposed weighted adjacency matrix of the line graph, edges by edges.
///
/// Entry `(j, k)` is `w_{ij}` when `e_k` flows into vertex `v_i` and `e_j`
/// leaves it.
pub fn adjacency_b(g: &MetricGraph) -> DMatrix<f64> {
    let m = g.num_edges();
    let mut b = DMatrix::zeros(m, m);
    for (k, ek) in g.edges().iter().enumerate() {
        for (j, ej) in g.edges().iter().enumerate() {
            if ej.tail == ek.head {
                b[(j, k)] = g.weights[j];
            }
        }
    }
    b
}

/// Source of a (possibly infinite) graph explored breadth-first from a root.
pub trait GraphGenerator {
    fn root(&self) -> String;
    /// Outgoing edges of `vertex` with their weights.
    fn outgoing(&self, vertex: &str) -> Vec<(EdgeDescription, f64)>;
    fn inputs(&self) -> usize;
    /// Row of the input matrix for an edge.
    fn control_row(&self, edge: &EdgeDescription) -> Vec<f64>;
}

/// Finite section of a generated graph: all edges whose tail lies within
/// `depth - 1` edge steps of the root. Frontier vertices keep no outgoing
/// edges, so the section drains through them.
pub fn truncate_bfs(gen: &dyn GraphGenerator, depth: usize) -> Result<MetricGraph, GraphError> {
    let mut desc = GraphDescription {
        inputs: gen.inputs(),
        truncation_depth: Some(depth),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    let root = gen.root();
    seen.insert(root.clone());
    desc.vertices.push(root.clone());
    queue.push_back((root, 0usize));
    while let Some((v, level)) = queue.pop_front() {
        if level >= depth {
            continue;
        }
        for (edge, w) in gen.outgoing(&v) {
            if seen.insert(edge.head.clone()) {
                desc.vertices.push(edge.head.clone());
                queue.push_back((edge.head.clone(), level + 1));
            }
            desc.weights.push((v.clone(), edge.name.clone(), w));
            desc.control.push(gen.control_row(&edge));
            desc.edges.push(edge);
        }
    }
    build_graph(&desc)
}

/// Infinite rooted tree: every vertex has `branching` children reached by
/// edges of constant velocity, with equal weights. The input drives the
/// root's outgoing edges.
#[derive(Debug, Clone)]
pub struct UniformTree {
    pub branching: usize,
    pub velocity: f64,
    pub absorption: f64,
}

impl GraphGenerator for UniformTree {
    fn root(&self) -> String {
        "r".into()
    }

    fn outgoing(&self, vertex: &str) -> Vec<(EdgeDescription, f64)> {
        (0..self.branching)
            .map(|c| {
                let head = format!("{vertex}.{c}");
                (
                    EdgeDescription {
                        name: format!("{vertex}>{head}"),
                        tail: vertex.to_string(),
                        head,
                        velocity: CoefficientProfile::constant(self.velocity),
                        absorption: CoefficientProfile::constant(self.absorption),
                    },
                    1.0 / self.branching as f64,
                )
            })
            .collect()
    }

    fn inputs(&self) -> usize {
        1
    }

    fn control_row(&self, edge: &EdgeDescription) -> Vec<f64> {
        vec![if edge.tail == "r" { 1.0 } else { 0.0 }]
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn loop_graph_is_valid() {
        let g = single_loop(1.0, 0.0);
        assert_eq!(g.tau0(), 1.0);
        assert_eq!(adjacency_b(&g), DMatrix::from_element(1, 1, 1.0));
        let (out, inc) = incidence_matrices(&g);
        assert_eq!(out, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(inc, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn two_cycle_matrices() {
        let g = two_cycle();
        let b = adjacency_b(&g);
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let (out, inc) = incidence_matrices(&g);
        assert_eq!(out, DMatrix::identity(2, 2));
        assert_eq!(inc, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    fn star(w1: f64, w2: f64) -> Result<MetricGraph, GraphError> {
        build_graph(&GraphDescription {
            vertices: vec!["s".into(), "c".into(), "a".into(), "b".into()],
            edges: vec![
                edge("in", "s", "c", 1.0, 0.0),
                edge("o1", "c", "a", 1.0, 0.0),
                edge("o2", "c", "b", 1.0, 0.0),
            ],
            weights: vec![("c".into(), "o1".into(), w1), ("c".into(), "o2".into(), w2)],
            control: vec![vec![1.0], vec![0.0], vec![0.0]],
            inputs: 1,
            ..Default::default()
        })
    }

    #[test]
    fn star_column() {
        let g = star(0.3, 0.7).unwrap();
        let b = adjacency_b(&g);
        assert_eq!(b[(1, 0)], 0.3);
        assert_eq!(b[(2, 0)], 0.7);
        assert_eq!(b[(0, 0)], 0.0);
        // heads a, b are sinks: their columns vanish
        assert_eq!(b.column(1).sum(), 0.0);
    }

    #[test]
    fn kirchhoff_violation() {
        let err = star(0.5, 0.4).unwrap_err();
        assert!(matches!(err, GraphError::KirchhoffViolation { .. }));
        assert_eq!(err.rule(), "Kirchhoff");
        assert!(star(0.5, 0.5).is_ok());
    }

    #[test]
    fn missing_weights_at_branching_vertex() {
        let mut desc = star(0.5, 0.5).unwrap().describe();
        desc.weights.retain(|(v, _, _)| v != "c");
        assert!(matches!(build_graph(&desc), Err(GraphError::KirchhoffViolation { .. })));
    }

    #[test]
    fn rejects_nonpositive_velocity_and_empty() {
        let mut desc = two_cycle().describe();
        desc.edges[1].velocity = CoefficientProfile::on_unit(vec![0.0, 0.5, 1.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            build_graph(&desc),
            Err(GraphError::NonPositiveVelocity { .. })
        ));
        assert_eq!(build_graph(&GraphDescription::default()), Err(GraphError::EmptyGraph));
    }

    #[test]
    fn adjacency_matches_incidence_product() {
        for g in [
            single_loop(1.0, 0.0),
            two_cycle(),
            parallel_edges(),
            star(0.3, 0.7).unwrap(),
        ] {
            let (_, inc) = incidence_matrices(&g);
            let product = weighted_outgoing_incidence(&g).transpose() * inc;
            assert_eq!(product, adjacency_b(&g));
        }
    }

    #[test]
    fn column_stochastic_on_closed_graphs() {
        for g in [single_loop(2.0, 0.0), two_cycle(), parallel_edges()] {
            let b = adjacency_b(&g);
            for k in 0..b.ncols() {
                assert!((b.column(k).sum() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn validation_is_idempotent() {
        let g = parallel_edges();
        let again = build_graph(&g.describe()).unwrap();
        assert_eq!(g, again);
        assert_eq!(build_graph(&again.describe()).unwrap(), again);
    }

    #[test]
    fn profile_lookup() {
        let p = CoefficientProfile::on_unit(vec![0.0, 0.5, 1.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(p.value_at(0.0), 1.0);
        assert_eq!(p.value_at(0.5), 2.0);
        assert_eq!(p.value_at(1.0), 2.0);
        assert!(CoefficientProfile::on_unit(vec![0.0, 0.7, 0.6, 1.0], vec![1.0; 3]).is_err());
        assert!(CoefficientProfile::on_unit(vec![0.1, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn tree_truncation() {
        let tree = UniformTree {
            branching: 2,
            velocity: 1.0,
            absorption: 0.0,
        };
        let g = truncate_bfs(&tree, 3).unwrap();
        assert_eq!(g.num_edges(), 2 + 4 + 8);
        assert_eq!(g.num_vertices(), 15);
        assert_eq!(g.truncation_depth(), Some(3));
        assert_eq!(g.control().sum(), 2.0);
        let b = adjacency_b(&g);
        // inner edges pass half of their outflow to each child
        assert_eq!(b.column(0).sum(), 1.0);
    }
}
