#![allow(dead_code)]

use graphflow::delay::DelayMeasure;
use graphflow::graph::{CoefficientProfile, EdgeDescription};
use graphflow::{build_graph, GraphDescription, MetricGraph};

pub fn edge(name: &str, tail: &str, head: &str, c: f64, q: f64) -> EdgeDescription {
    EdgeDescription {
        name: name.into(),
        tail: tail.into(),
        head: head.into(),
        velocity: CoefficientProfile::constant(c),
        absorption: CoefficientProfile::constant(q),
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn no_delay(g: &MetricGraph) -> Vec<DelayMeasure> {
    vec![DelayMeasure::zero(); g.num_edges()]
}

pub fn single_loop(c: f64, q: f64) -> MetricGraph {
    build_graph(&GraphDescription {
        vertices: names(&["v"]),
        edges: vec![edge("e", "v", "v", c, q)],
        control: vec![vec![1.0]],
        inputs: 1,
        ..Default::default()
    })
    .unwrap()
}

pub fn two_cycle() -> MetricGraph {
    build_graph(&GraphDescription {
        vertices: names(&["v1", "v2"]),
        edges: vec![edge("e1", "v1", "v2", 1.0, 0.0), edge("e2", "v2", "v1", 1.0, 0.0)],
        control: vec![vec![1.0], vec![0.0]],
        inputs: 1,
        ..Default::default()
    })
    .unwrap()
}

/// Return edge with two speeds and a leak towards a sink.
pub fn branching() -> MetricGraph {
    let mut back = edge("e2", "v2", "v1", 1.0, 0.2);
    back.velocity = CoefficientProfile::on_unit(vec![0.0, 0.5, 1.0], vec![1.0, 2.0]).unwrap();
    build_graph(&GraphDescription {
        vertices: names(&["v1", "v2", "v3"]),
        edges: vec![edge("e1", "v1", "v2", 1.0, 0.1), back, edge("e3", "v2", "v3", 1.5, 0.0)],
        weights: vec![("v2".into(), "e2".into(), 0.6), ("v2".into(), "e3".into(), 0.4)],
        control: vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]],
        inputs: 2,
        ..Default::default()
    })
    .unwrap()
}

/// Junction routing two incoming flows into two outgoing ones, all loss-free.
pub fn atfm_junction() -> MetricGraph {
    build_graph(&GraphDescription {
        vertices: names(&["a", "j"]),
        edges: vec![
            edge("in1", "a", "j", 1.0, 0.0),
            edge("in2", "a", "j", 2.0, 0.0),
            edge("out1", "j", "a", 1.0, 0.0),
            edge("out2", "j", "a", 0.8, 0.0),
        ],
        weights: vec![
            ("a".into(), "in1".into(), 0.5),
            ("a".into(), "in2".into(), 0.5),
            ("j".into(), "out1".into(), 0.7),
            ("j".into(), "out2".into(), 0.3),
        ],
        control: vec![vec![1.0], vec![0.0], vec![0.0], vec![0.0]],
        inputs: 1,
        ..Default::default()
    })
    .unwrap()
}

pub fn atfm_delays(g: &MetricGraph) -> Vec<DelayMeasure> {
    vec![DelayMeasure::point(0.5, 1.0).unwrap(); g.num_edges()]
}

pub fn path() -> MetricGraph {
    build_graph(&GraphDescription {
        vertices: names(&["a", "b", "c", "d"]),
        edges: vec![
            edge("p1", "a", "b", 1.0, 0.0),
            edge("p2", "b", "c", 1.0, 0.3),
            edge("p3", "c", "d", 2.0, 0.0),
        ],
        control: vec![vec![1.0], vec![0.0], vec![0.0]],
        inputs: 1,
        ..Default::default()
    })
    .unwrap()
}

pub fn path_delays() -> Vec<DelayMeasure> {
    let density = CoefficientProfile::new(vec![-0.5, -0.25, 0.0], vec![0.4, 0.2]).unwrap();
    vec![DelayMeasure::new(0.5, vec![(-0.5, 0.2)], Some(density)).unwrap(); 3]
}

pub fn parallel_edges() -> MetricGraph {
    build_graph(&GraphDescription {
        vertices: names(&["v1", "v2"]),
        edges: vec![
            edge("a", "v1", "v2", 1.0, 0.0),
            edge("b", "v1", "v2", 1.0, 0.0),
            edge("ret", "v2", "v1", 1.0, 0.0),
        ],
        weights: vec![("v1".into(), "a".into(), 0.5), ("v1".into(), "b".into(), 0.5)],
        control: vec![vec![1.0], vec![1.0], vec![0.0]],
        inputs: 1,
        ..Default::default()
    })
    .unwrap()
}

/// `(name, graph, delays)` for the Laplace comparison.
pub fn laplace_fixtures() -> Vec<(&'static str, MetricGraph, Vec<DelayMeasure>)> {
    let lp = single_loop(1.0, 0.5);
    let tc = two_cycle();
    let br = branching();
    let at = atfm_junction();
    let pa = path();
    vec![
        ("loop", lp.clone(), vec![DelayMeasure::point(0.5, 0.4).unwrap()]),
        ("two_cycle", tc.clone(), no_delay(&tc)),
        ("branching", br.clone(), no_delay(&br)),
        ("atfm_junction", at.clone(), atfm_delays(&at)),
        ("path_delay", pa, path_delays()),
    ]
}
