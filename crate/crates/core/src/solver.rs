//! Time-domain solution of the controlled delay system by characteristics.
//!
//! The interior state is `z_j(t, x) = e^{xi_j(x,1)} b_j(t - tau_j(x,1))` once the
//! characteristic through `(t, x)` starts at the inflow boundary, and the free
//! evolution of the initial profile before that. Only the inflow traces
//! `b_j(t) = z_j(t, 1)` are stepped; since `dt < tau0`, every outflow value needed
//! at `t` comes from traces strictly before `t - dt`.
//!
//! Traces keep both one-sided limits at each grid time. Between grid times a
//! trace is linear from the right limit at the left node to the left limit at
//! the right node, so jumps that land on grid times are represented exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::delay::{delay_l, max_horizon, DelayError, DelayMeasure, HistoryBuffer};
use crate::graph::{adjacency_b, MetricGraph};
use crate::signal::Signal;
use crate::transport::{kinematics, EdgeKinematics, EdgeProfiles, FlowPosition, DEFAULT_NX};

/// Traces larger than this abort the run.
pub const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("initial profile differs from phi(0) on edge {edge} by {mismatch}")]
    IncompatibleInitialData { edge: usize, mismatch: f64 },
    #[error("history does not cover time {time}")]
    HistoryGap { time: f64 },
    #[error("state left the finite range at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("Laplace tail bound {bound:e} exceeds tolerance {tol:e} (growth estimate {growth})")]
    TailNotNegligible { bound: f64, tol: f64, growth: f64 },
}

impl From<DelayError> for SolverError {
    fn from(e: DelayError) -> Self {
        match e {
            DelayError::HistoryGap { time } | DelayError::SignalTooShort { time } => SolverError::HistoryGap { time },
            other => SolverError::InvalidScenario(other.to_string()),
        }
    }
}

/// History `phi` on `[-r, 0]` paired with the initial profile.
#[derive(Clone, Default)]
pub enum InitialHistory {
    #[default]
    Zero,
    /// `phi(theta, .) = g` for all `theta`.
    FollowInitial,
    /// `(theta, edge, x) -> phi`.
    Function(Arc<dyn Fn(f64, usize, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for InitialHistory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialHistory::Zero => f.write_str("Zero"),
            InitialHistory::FollowInitial => f.write_str("FollowInitial"),
            InitialHistory::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Control signal `u(t)`, zero for `t < 0`.
#[derive(Clone, Default)]
pub enum Control {
    #[default]
    Zero,
    /// `u(t) = e^{rate t} amplitudes` for `t >= 0`.
    Exponential { rate: f64, amplitudes: Vec<f64> },
    /// `amplitude` on `[start, end)` in one channel.
    Pulse {
        channel: usize,
        start: f64,
        end: f64,
        amplitude: f64,
    },
    /// Arbitrary signal; zero where undefined.
    Signal(Arc<dyn Signal>),
}

impl std::fmt::Debug for Control {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Control::Zero => f.write_str("Zero"),
            Control::Exponential { rate, amplitudes } => f
                .debug_struct("Exponential")
                .field("rate", rate)
                .field("amplitudes", amplitudes)
                .finish(),
            Control::Pulse {
                channel,
                start,
                end,
                amplitude,
            } => f
                .debug_struct("Pulse")
                .field("channel", channel)
                .field("start", start)
                .field("end", end)
                .field("amplitude", amplitude)
                .finish(),
            Control::Signal(_) => f.write_str("Signal(..)"),
        }
    }
}

impl Control {
    /// Right limit `u(t+)` in `channel`.
    pub fn value(&self, channel: usize, t: f64) -> f64 {
        match self {
            Control::Zero => 0.0,
            Control::Exponential { rate, amplitudes } => {
                if t >= 0.0 {
                    amplitudes[channel] * (rate * t).exp()
                } else {
                    0.0
                }
            }
            Control::Pulse {
                channel: c,
                start,
                end,
                amplitude,
            } => {
                if *c == channel && t >= *start && t < *end {
                    *amplitude
                } else {
                    0.0
                }
            }
            Control::Signal(s) => s.value(channel, t).unwrap_or(0.0),
        }
    }

    /// Left limit `u(t-)` in `channel`.
    pub fn left_value(&self, channel: usize, t: f64) -> f64 {
        match self {
            Control::Exponential { .. } if t <= 0.0 => 0.0,
            Control::Pulse {
                channel: c,
                start,
                end,
                amplitude,
            } => {
                if *c == channel && t > *start && t <= *end {
                    *amplitude
                } else {
                    0.0
                }
            }
            Control::Signal(s) => s.left_value(channel, t).unwrap_or(0.0),
            _ => self.value(channel, t),
        }
    }

    /// Closed-form Laplace transform per channel, where available.
    pub fn laplace(&self, channels: usize, lambda: Complex64) -> Option<DVector<Complex64>> {
        match self {
            Control::Zero => Some(DVector::zeros(channels)),
            Control::Exponential { rate, amplitudes } => {
                Some(DVector::from_fn(channels, |c, _| amplitudes[c] / (lambda - rate)))
            }
            Control::Pulse {
                channel,
                start,
                end,
                amplitude,
            } => Some(DVector::from_fn(channels, |c, _| {
                if c == *channel {
                    *amplitude * ((-lambda * *start).exp() - (-lambda * *end).exp()) / lambda
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })),
            Control::Signal(_) => None,
        }
    }
}

/// Data of one simulation run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: MetricGraph,
    /// One measure per edge.
    pub delays: Vec<DelayMeasure>,
    pub initial: EdgeProfiles,
    pub history: InitialHistory,
    pub control: Control,
    pub horizon: f64,
    pub dt: f64,
    pub nx: usize,
    /// Times at which full profiles are kept in the record.
    pub snapshot_times: Vec<f64>,
}

/// `min(tau0, r) / 32`, or `tau0 / 32` without delays.
pub fn default_dt(graph: &MetricGraph, delays: &[DelayMeasure]) -> f64 {
    let r = max_horizon(delays);
    let base = if r > 0.0 { graph.tau0().min(r) } else { graph.tau0() };
    base / 32.0
}

impl Scenario {
    /// Zero data, default grid, horizon ten transit times.
    pub fn new(graph: MetricGraph, delays: Vec<DelayMeasure>) -> Self {
        let dt = default_dt(&graph, &delays);
        let horizon = 10.0 * graph.max_transit_time();
        let m = graph.num_edges();
        Self {
            graph,
            delays,
            initial: EdgeProfiles::zeros(m, DEFAULT_NX),
            history: InitialHistory::Zero,
            control: Control::Zero,
            horizon,
            dt,
            nx: DEFAULT_NX,
            snapshot_times: Vec::new(),
        }
    }

    /// Changes the spatial grid, resampling the initial profile.
    pub fn with_nx(mut self, nx: usize) -> Self {
        let old = self.initial.clone();
        self.initial = EdgeProfiles::from_fn(old.num_edges(), nx, |j, x| old.eval(j, x));
        self.nx = nx;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let m = self.graph.num_edges();
        let bad = |s: String| Err(SolverError::InvalidScenario(s));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("time step {} must be positive", self.dt));
        }
        if self.dt >= self.graph.tau0() {
            return bad(format!(
                "time step {} must be below the shortest transit time {}",
                self.dt,
                self.graph.tau0()
            ));
        }
        if self.nx < 2 {
            return bad(format!("grid size {} below 2", self.nx));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if self.delays.len() != m {
            return bad(format!("{} delay measures for {m} edges", self.delays.len()));
        }
        if self.initial.num_edges() != m || self.initial.nx() != self.nx {
            return bad("initial profile does not match graph and grid".into());
        }
        match &self.control {
            Control::Exponential { amplitudes, .. } if amplitudes.len() != self.graph.num_inputs() => {
                return bad("control amplitudes do not match the input count".into());
            }
            Control::Pulse { channel, .. } if *channel >= self.graph.num_inputs() => {
                return bad(format!("pulse channel {channel} out of range"));
            }
            Control::Signal(s) if s.channels() != self.graph.num_inputs() => {
                return bad("control channels do not match the input count".into());
            }
            _ => {}
        }
        if self.delays.iter().all(DelayMeasure::is_zero) {
            // the history is never read without delays
            return Ok(());
        }
        let scale = 1.0 + self.initial.max_abs();
        for j in 0..m {
            let mismatch = (0..self.nx)
                .map(|i| (self.phi(0.0, j, i) - self.initial.edge(j)[i]).abs())
                .fold(0.0, f64::max);
            if mismatch > 1e-9 * scale {
                return Err(SolverError::IncompatibleInitialData { edge: j, mismatch });
            }
        }
        Ok(())
    }

    fn phi(&self, theta: f64, j: usize, i: usize) -> f64 {
        match &self.history {
            InitialHistory::Zero => 0.0,
            InitialHistory::FollowInitial => self.initial.edge(j)[i],
            InitialHistory::Function(f) => f(theta, j, self.initial.x(i)),
        }
    }
}

/// Both one-sided limits of a trace at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl Trace {
    fn with_capacity(n: usize) -> Self {
        Self {
            plus: Vec::with_capacity(n),
            minus: Vec::with_capacity(n),
        }
    }

    /// Value at `s >= 0`; on a grid node the right limit (`left = false`) or
    /// the left limit (`left = true`).
    fn at(&self, s: f64, dt: f64, left: bool) -> f64 {
        let u = s / dt;
        let node = u.round();
        if (u - node).abs() < 1e-9 {
            let n = node as usize;
            return if left { self.minus[n] } else { self.plus[n] };
        }
        let n = u.floor() as usize;
        let f = u - n as f64;
        (1.0 - f) * self.plus[n] + f * self.minus[n + 1]
    }
}

/// Which boundary trace of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// `z_j(t, 1)`.
    Inflow,
    /// `z_j(t, 0)`.
    Outflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNorms {
    pub l1: f64,
    pub mass: f64,
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub dt: f64,
    pub steps: usize,
    pub nx: usize,
    pub inflow: Vec<Trace>,
    pub outflow: Vec<Trace>,
    pub snapshots: Vec<(f64, EdgeProfiles)>,
    pub final_state: EdgeProfiles,
    pub norms: Vec<StepNorms>,
    /// `max_j |z_j(0+, 1) - g_j(1)|`.
    pub boundary_residual: f64,
    /// Longest memory of the system: max transit time or delay horizon.
    pub memory: f64,
}

impl SolutionRecord {
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn trace(&self, kind: TraceKind, edge: usize) -> &Trace {
        match kind {
            TraceKind::Inflow => &self.inflow[edge],
            TraceKind::Outflow => &self.outflow[edge],
        }
    }
}

struct Stepper<'a> {
    sc: &'a Scenario,
    kin: Vec<EdgeKinematics>,
    x: Vec<f64>,
    tau_in: Vec<Vec<f64>>,
    gain_in: Vec<Vec<f64>>,
    free_gain: Vec<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let kin = kinematics(&sc.graph);
        let x: Vec<f64> = (0..sc.nx).map(|i| sc.initial.x(i)).collect();
        let tau_in = kin
            .iter()
            .map(|k| x.iter().map(|&x| k.tau_to_inflow(x)).collect())
            .collect();
        let gain_in = kin
            .iter()
            .map(|k| x.iter().map(|&x| k.xi_to_inflow(x).exp()).collect())
            .collect();
        let free_gain = kin
            .iter()
            .map(|k| x.iter().map(|&x| (-k.xi_to_inflow(x)).exp()).collect())
            .collect();
        Self {
            sc,
            kin,
            x,
            tau_in,
            gain_in,
            free_gain,
        }
    }

    /// Free evolution `(T(t) g)_j(x)` at a grid point, for `t < tau_j(x, 1)`.
    fn free(&self, j: usize, i: usize, t: f64) -> f64 {
        match self.kin[j].flow_position(self.x[i], t) {
            FlowPosition::Inside(s) => {
                // e^{xi(x, s)} = e^{xi(x, 1)} / e^{xi(s, 1)}
                let gain = self.kin[j].xi_to_inflow(s).exp().recip() / self.free_gain[j][i];
                gain * self.sc.initial.eval(j, s)
            }
            FlowPosition::PastOutflow => 0.0,
        }
    }

    /// State at grid time `t_n`; trace values at index `n` must be present.
    fn snapshot(&self, traces: &[Trace], t: f64) -> EdgeProfiles {
        let dt = self.sc.dt;
        let mut p = EdgeProfiles::zeros(traces.len(), self.sc.nx);
        for (j, tr) in traces.iter().enumerate() {
            let row = p.edge_mut(j);
            for (i, v) in row.iter_mut().enumerate() {
                let tau = self.tau_in[j][i];
                *v = if t >= tau - 1e-9 * dt {
                    self.gain_in[j][i] * tr.at((t - tau).max(0.0), dt, false)
                } else {
                    self.free(j, i, t)
                };
            }
        }
        p
    }

    /// Right and left limits of `z_j(t_n, 0)`.
    fn outflow(&self, traces: &[Trace], j: usize, t: f64) -> (f64, f64) {
        let dt = self.sc.dt;
        let tau = self.kin[j].tau_total();
        if t >= tau - 1e-9 * dt {
            let s = (t - tau).max(0.0);
            let g = self.kin[j].xi_total().exp();
            (g * traces[j].at(s, dt, false), g * traces[j].at(s, dt, true))
        } else {
            let v = self.free(j, 0, t);
            (v, v)
        }
    }
}

/// Runs the scenario to its horizon.
pub fn solve(sc: &Scenario) -> Result<SolutionRecord, SolverError> {
    sc.validate()?;
    let g = &sc.graph;
    let m = g.num_edges();
    let n_in = g.num_inputs();
    let dt = sc.dt;
    let steps = (sc.horizon / dt - 1e-9).ceil() as usize;
    let st = Stepper::new(sc);

    let b = adjacency_b(g);
    let c_in: Vec<f64> = g.edges().iter().map(|e| e.velocity.value_at(1.0)).collect();
    let c_out: Vec<f64> = g.edges().iter().map(|e| e.velocity.value_at(0.0)).collect();
    let k = g.control();
    let has_delay = sc.delays.iter().any(|d| !d.is_zero());
    let r = max_horizon(&sc.delays);

    let mut history = HistoryBuffer::new(g, sc.nx, dt, if has_delay { r } else { 0.0 });
    if has_delay {
        let prefill = history.capacity() - 2;
        for n in (1..=prefill).rev() {
            let theta = -(n as f64) * dt;
            let p = EdgeProfiles::from_fn(m, sc.nx, |j, x| {
                let i = ((x * (sc.nx - 1) as f64).round()) as usize;
                sc.phi(theta, j, i)
            });
            history.push(theta, p);
        }
    }
    history.push(0.0, sc.initial.clone());

    let mut inflow: Vec<Trace> = (0..m).map(|_| Trace::with_capacity(steps + 1)).collect();
    let mut outflow: Vec<Trace> = (0..m).map(|_| Trace::with_capacity(steps + 1)).collect();
    let mut norms = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut pending: Vec<f64> = sc.snapshot_times.clone();
    pending.sort_by(|a, b| b.total_cmp(a));

    let input = |t: f64, left: bool| -> DVector<f64> {
        let u = DVector::from_fn(n_in, |c, _| {
            if left {
                sc.control.left_value(c, t)
            } else {
                sc.control.value(c, t)
            }
        });
        k * u
    };
    let boundary = |out: &DVector<f64>, delay: &DVector<f64>, ku: &DVector<f64>| -> DVector<f64> {
        let flux = DVector::from_fn(m, |j, _| c_out[j] * out[j] + delay[j]);
        let rhs: DVector<f64> = &b * flux + ku;
        DVector::from_fn(m, |j, _| rhs[j] / c_in[j])
    };

    let mut state = sc.initial.clone();
    let mut boundary_residual = 0.0;
    for n in 0..=steps {
        let t = n as f64 * dt;
        let (mut out_p, mut out_m) = (DVector::zeros(m), DVector::zeros(m));
        for j in 0..m {
            let (p, l) = st.outflow(&inflow, j, t);
            out_p[j] = p;
            out_m[j] = l;
            outflow[j].plus.push(p);
            outflow[j].minus.push(l);
        }
        if n > 0 && has_delay {
            // provisional state: the newest trace value is not known yet
            for tr in inflow.iter_mut() {
                let last = *tr.plus.last().unwrap();
                tr.plus.push(last);
                tr.minus.push(last);
            }
            history.push(t, st.snapshot(&inflow, t));
            for tr in inflow.iter_mut() {
                tr.plus.pop();
                tr.minus.pop();
            }
        }
        let delay = if has_delay {
            delay_l(&sc.delays, &history, t)?
        } else {
            DVector::zeros(m)
        };
        let b_plus = boundary(&out_p, &delay, &input(t, false));
        let b_minus = if n == 0 {
            DVector::from_fn(m, |j, _| sc.initial.edge(j)[sc.nx - 1])
        } else {
            boundary(&out_m, &delay, &input(t, true))
        };
        if b_plus
            .iter()
            .chain(b_minus.iter())
            .any(|v| !v.is_finite() || v.abs() > BLOW_UP)
        {
            return Err(SolverError::NonFiniteState { time: t });
        }
        if n == 0 {
            boundary_residual = (&b_plus - &b_minus).amax();
        }
        for j in 0..m {
            inflow[j].plus.push(b_plus[j]);
            inflow[j].minus.push(b_minus[j]);
        }
        if n > 0 {
            state = st.snapshot(&inflow, t);
            if has_delay {
                history.patch_last(state.clone());
            }
        }
        norms.push(StepNorms {
            l1: state.l1_norm(),
            mass: state.mass(),
        });
        while pending.last().is_some_and(|&ts| ts <= t + 1e-9 * dt) {
            pending.pop();
            snapshots.push((t, state.clone()));
        }
    }

    let memory = g.max_transit_time().max(r);
    Ok(SolutionRecord {
        dt,
        steps,
        nx: sc.nx,
        inflow,
        outflow,
        snapshots,
        final_state: state,
        norms,
        boundary_residual,
        memory,
    })
}

/// Numerical Laplace transform with its tail estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceEstimate {
    pub values: DVector<Complex64>,
    /// Bound on the neglected `int_T^inf` part.
    pub tail_bound: f64,
    /// Exponential growth rate estimated from the last two windows.
    pub growth: f64,
}

/// `int_0^T e^{-lambda t} trace(t) dt` per edge by the trapezoid rule on the
/// solver grid, with one-sided limits at the interval ends.
///
/// The tail is bounded by `E e^{-Re(lambda) T} / (Re(lambda) - g)`, where `E` is
/// the trace envelope over the last window and `g` the growth rate between the
/// last two windows.
///
/// # Errors
/// `TailNotNegligible` if the bound exceeds `tol` times the largest value, or if
/// `Re(lambda)` does not dominate the growth estimate.
pub fn laplace_of_trace(
    rec: &SolutionRecord,
    lambda: Complex64,
    kind: TraceKind,
    tol: f64,
) -> Result<LaplaceEstimate, SolverError> {
    let m = rec.inflow.len();
    let dt = rec.dt;
    let weights: Vec<Complex64> = (0..=rec.steps).map(|n| (-lambda * rec.time(n)).exp()).collect();
    let values = DVector::from_fn(m, |j, _| {
        let tr = rec.trace(kind, j);
        (0..rec.steps)
            .map(|n| 0.5 * dt * (weights[n] * tr.plus[n] + weights[n + 1] * tr.minus[n + 1]))
            .sum::<Complex64>()
    });

    let t_end = rec.horizon();
    let window = rec.memory.max(10.0 * dt).min(0.5 * t_end);
    let envelope = |lo: f64, hi: f64| -> f64 {
        (0..m)
            .flat_map(|j| {
                let tr = rec.trace(kind, j);
                (0..=rec.steps)
                    .filter(move |&n| {
                        let t = rec.time(n);
                        t >= lo - 1e-9 && t <= hi + 1e-9
                    })
                    .map(move |n| tr.plus[n].abs().max(tr.minus[n].abs()))
            })
            .fold(0.0, f64::max)
    };
    let last = envelope(t_end - window, t_end);
    let prev = envelope(t_end - 2.0 * window, t_end - window);
    let (tail_bound, growth) = if last == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else if prev == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let growth = (last / prev).ln() / window;
        let margin = lambda.re - growth;
        let bound = if margin > 0.0 {
            last * (-lambda.re * t_end).exp() / margin
        } else {
            f64::INFINITY
        };
        (bound, growth)
    };
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if tail_bound > tol * scale.max(f64::MIN_POSITIVE) {
        return Err(SolverError::TailNotNegligible {
            bound: tail_bound,
            tol,
            growth,
        });
    }
    Ok(LaplaceEstimate {
        values,
        tail_bound,
        growth,
    })
}

/// Gram matrices of the states reached from zero data by a set of probe controls.
#[derive(Debug, Clone)]
pub struct Gramian {
    /// `G_pq = <z_p, z_q>` over all edges (probes by probes).
    pub probe: DMatrix<f64>,
    /// `E_jk = sum_p int_0^1 z_pj z_pk dx` (edges by edges).
    pub edge: DMatrix<f64>,
    pub final_states: Vec<EdgeProfiles>,
}

/// Runs each probe from zero data to `t_end` and forms both Gram matrices.
///
/// The initial data of `sc` is replaced by zero.
pub fn reachability_gramian(sc: &Scenario, t_end: f64, probes: &[Control]) -> Result<Gramian, SolverError> {
    let m = sc.graph.num_edges();
    let finals: Vec<EdgeProfiles> = probes
        .par_iter()
        .map(|u| {
            let mut run = sc.clone();
            run.initial = EdgeProfiles::zeros(m, sc.nx);
            run.history = InitialHistory::Zero;
            run.control = u.clone();
            run.horizon = t_end;
            run.snapshot_times.clear();
            solve(&run).map(|rec| rec.final_state)
        })
        .collect::<Result<_, _>>()?;
    let p = finals.len();
    let probe = DMatrix::from_fn(p, p, |a, b| finals[a].inner(&finals[b]));
    let edge = DMatrix::from_fn(m, m, |j, k| {
        finals
            .iter()
            .map(|z| {
                let a = EdgeProfiles::from_values(vec![z.edge(j).to_vec()]);
                let b = EdgeProfiles::from_values(vec![z.edge(k).to_vec()]);
                a.inner(&b)
            })
            .sum()
    });
    Ok(Gramian {
        probe,
        edge,
        final_states: finals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::{build_graph, GraphDescription};
    use crate::linalg::{rank_from_singular_values, real_singular_values};
    use crate::signal::SampledSignal;
    use crate::transport::{control_map_phi, semigroup_apply};
    use approx::assert_abs_diff_eq;

    fn no_delay(g: &MetricGraph) -> Vec<DelayMeasure> {
        vec![DelayMeasure::zero(); g.num_edges()]
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = two_cycle();
        let sc = Scenario::new(g.clone(), no_delay(&g));
        let rec = solve(&sc).unwrap();
        assert!(rec.inflow.iter().all(|t| t.plus.iter().all(|&v| v == 0.0)));
        assert_eq!(rec.final_state.max_abs(), 0.0);
    }

    #[test]
    fn steady_circulation_on_loop() {
        let g = single_loop(1.0, 0.0);
        let mut sc = Scenario::new(g.clone(), no_delay(&g));
        sc.initial = EdgeProfiles::from_fn(1, sc.nx, |_, _| 1.0);
        sc.horizon = 3.0;
        let rec = solve(&sc).unwrap();
        for tr in rec.inflow.iter().chain(&rec.outflow) {
            assert!(tr.plus.iter().chain(&tr.minus).all(|&v| (v - 1.0).abs() < 1e-14));
        }
        assert!(rec.final_state.edge(0).iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert_eq!(rec.boundary_residual, 0.0);
    }

    #[test]
    fn mass_is_conserved_on_closed_graph() {
        let g = build_graph(&GraphDescription {
            vertices: vec!["a".into(), "b".into()],
            edges: vec![
                edge("e1", "a", "b", 1.0, 0.0),
                edge("e2", "b", "a", 2.0, 0.0),
                edge("e3", "b", "a", 0.5, 0.0),
            ],
            weights: vec![("b".into(), "e2".into(), 0.3), ("b".into(), "e3".into(), 0.7)],
            control: vec![vec![0.0]; 3],
            inputs: 1,
            ..Default::default()
        })
        .unwrap();
        let mut sc = Scenario::new(g.clone(), no_delay(&g));
        // stationary fluxes a = (1, 0.3, 0.7) modulated along the edges
        let flux = [1.0, 0.3, 0.7];
        let speed = [1.0, 2.0, 0.5];
        sc.initial = EdgeProfiles::from_fn(3, sc.nx, |j, x| {
            flux[j] / speed[j] * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin())
        });
        let rec = solve(&sc).unwrap();
        let m0 = rec.norms[0].mass;
        let drift = rec.norms.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-3 * m0, "drift {drift}");
    }

    #[test]
    fn incompatible_history_is_rejected() {
        let g = single_loop(1.0, 0.0);
        let mut sc = Scenario::new(g, vec![DelayMeasure::point(1.0, 0.5).unwrap()]);
        sc.initial = EdgeProfiles::from_fn(1, sc.nx, |_, _| 1.0);
        assert!(matches!(solve(&sc), Err(SolverError::IncompatibleInitialData { .. })));
        sc.history = InitialHistory::FollowInitial;
        assert!(solve(&sc).is_ok());
    }

    #[test]
    fn rejects_large_step() {
        let g = single_loop(1.0, 0.0);
        let mut sc = Scenario::new(g.clone(), no_delay(&g));
        sc.dt = 1.0;
        assert!(matches!(solve(&sc), Err(SolverError::InvalidScenario(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let g = single_loop(1.0, 30.0);
        let mut sc = Scenario::new(g.clone(), no_delay(&g));
        sc.control = Control::Exponential {
            rate: 0.0,
            amplitudes: vec![1.0],
        };
        sc.horizon = 5.0;
        assert!(matches!(solve(&sc), Err(SolverError::NonFiniteState { .. })));
    }

    #[test]
    fn delay_free_matches_transport_composition() {
        let g = two_cycle();
        let mut sc = Scenario::new(g.clone(), no_delay(&g));
        // compatible with the boundary condition at t = 0, so traces are continuous
        sc.initial = EdgeProfiles::from_fn(2, sc.nx, |j, x| if j == 0 { 1.0 + x * x } else { 2.0 - x * x });
        sc.control = Control::Signal(Arc::new(crate::signal::FnSignal::new(1, 0.0, 10.0, |_, t| {
            0.7 * t * (-0.3 * t).exp()
        })));
        sc.horizon = 1.5;
        sc.snapshot_times = vec![0.75, 1.5];
        let rec = solve(&sc).unwrap();
        let kin = kinematics(&g);
        let samples: Vec<Vec<f64>> = rec.inflow.iter().map(|t| t.plus.clone()).collect();
        let signal = SampledSignal::new(0.0, rec.dt, samples);
        for (t, z) in &rec.snapshots {
            let free = semigroup_apply(&kin, &sc.initial, *t);
            let forced = control_map_phi(&kin, &signal, *t, sc.nx).unwrap();
            for j in 0..2 {
                for i in 0..sc.nx {
                    let expected = free.edge(j)[i] + forced.edge(j)[i];
                    assert!((z.edge(j)[i] - expected).abs() < 1e-3, "t={t} j={j} i={i}");
                }
            }
        }
    }

    #[test]
    fn causality() {
        let g = single_loop(1.0, 0.0);
        let mut sc = Scenario::new(g.clone(), vec![DelayMeasure::point(0.5, 0.4).unwrap()]);
        sc.horizon = 4.0;
        sc.control = Control::Exponential {
            rate: 0.1,
            amplitudes: vec![1.0],
        };
        let a = solve(&sc).unwrap();
        sc.control = Control::Signal(Arc::new(crate::signal::FnSignal::new(1, 0.0, 10.0, |_, t| {
            if t <= 2.0 {
                (0.1 * t).exp()
            } else {
                -5.0
            }
        })));
        let b = solve(&sc).unwrap();
        let cut = (2.0 / a.dt).round() as usize;
        assert_eq!(a.inflow[0].plus[..=cut], b.inflow[0].plus[..=cut]);
        assert_ne!(a.inflow[0].plus[cut + 1], b.inflow[0].plus[cut + 1]);
    }

    #[test]
    fn laplace_examples() {
        let g = single_loop(1.0, 0.0);
        let mut sc = Scenario::new(g.clone(), no_delay(&g));
        sc.horizon = 20.0;
        let rec = solve(&sc).unwrap();
        let zero = laplace_of_trace(&rec, Complex64::from(1.0), TraceKind::Inflow, 1e-4).unwrap();
        assert_eq!(zero.values[0], Complex64::new(0.0, 0.0));

        let mut rec_one = rec.clone();
        rec_one.inflow[0].plus.iter_mut().for_each(|v| *v = 1.0);
        rec_one.inflow[0].minus.iter_mut().for_each(|v| *v = 1.0);
        let lam = 1.5;
        let est = laplace_of_trace(&rec_one, Complex64::from(lam), TraceKind::Inflow, 1e-4).unwrap();
        let exact = (1.0 - (-lam * 20.0f64).exp()) / lam;
        assert!((est.values[0].re - exact).abs() < 1e-3);

        let mu = 0.4;
        let mut rec_exp = rec.clone();
        for n in 0..=rec.steps {
            let v = (mu * rec.time(n)).exp();
            rec_exp.inflow[0].plus[n] = v;
            rec_exp.inflow[0].minus[n] = v;
        }
        let est = laplace_of_trace(&rec_exp, Complex64::from(2.0), TraceKind::Inflow, 1e-4).unwrap();
        let exact = (1.0 - (-(2.0 - mu) * 20.0f64).exp()) / (2.0 - mu);
        assert!((est.values[0].re - exact).abs() < 1e-3);
        assert!((est.growth - mu).abs() < 1e-9);
        assert!(matches!(
            laplace_of_trace(&rec_exp, Complex64::from(0.3), TraceKind::Inflow, 1e-4),
            Err(SolverError::TailNotNegligible { .. })
        ));
    }

    #[test]
    fn gramian_examples() {
        let g = single_loop(1.0, 0.0);
        let sc = Scenario::new(g.clone(), no_delay(&g));
        let zero = reachability_gramian(&sc, 1.0, &[Control::Zero, Control::Zero]).unwrap();
        assert_eq!(zero.probe.amax(), 0.0);
        let pulse = Control::Pulse {
            channel: 0,
            start: 0.0,
            end: 1.0,
            amplitude: 1.0,
        };
        let one = reachability_gramian(&sc, 1.0, &[pulse]).unwrap();
        assert_abs_diff_eq!(one.probe[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gramian_on_path_has_disjoint_supports() {
        let g = build_graph(&GraphDescription {
            vertices: vec!["a".into(), "b".into(), "c".into()],
            edges: vec![edge("e1", "a", "b", 1.0, 0.0), edge("e2", "b", "c", 1.0, 0.0)],
            control: vec![vec![1.0], vec![0.0]],
            inputs: 1,
            ..Default::default()
        })
        .unwrap();
        let sc = Scenario::new(g.clone(), no_delay(&g));
        let probes: Vec<Control> = (0..3)
            .map(|p| Control::Pulse {
                channel: 0,
                start: 0.5 * p as f64,
                end: 0.5 * p as f64 + 0.25,
                amplitude: 1.0,
            })
            .collect();
        let gram = reachability_gramian(&sc, 1.5, &probes).unwrap();
        for a in 0..3 {
            assert!(gram.probe[(a, a)] > 0.1);
            for b in 0..3 {
                if a != b {
                    assert!(gram.probe[(a, b)].abs() < 1e-2 * gram.probe[(a, a)], "{a} {b}");
                }
            }
        }
        let sv = real_singular_values(&gram.probe);
        assert_eq!(rank_from_singular_values(&sv, 1e-8), 3);
    }
}
