//! Linear transport on metric graphs with delayed boundary coupling:
//! simulation, frequency-domain controllability tests and structural rank analysis.

pub mod control;
pub mod delay;
pub mod graph;
pub mod linalg;
pub mod signal;
pub mod solver;
pub mod structural;
pub mod transport;

pub use graph::{build_graph, GraphDescription, GraphError, MetricGraph};
