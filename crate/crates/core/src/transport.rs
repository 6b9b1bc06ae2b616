//! Edge kinematics, the free transport semigroup, the Dirichlet operator and
//! the boundary-injection control maps.
//!
//! With piecewise-constant velocity `c_j` and absorption `q_j`, the travel
//! time `tau_j(x1, x2)` and the log-gain `xi_j(x1, x2)` are piecewise linear
//! in their arguments, so everything here is evaluated in closed form. The
//! only discretization is the uniform grid on which edge profiles are stored.

use num_complex::Complex64;
use thiserror::Error;

use crate::graph::{Edge, MetricGraph, PiecewiseConstant};
use crate::signal::Signal;

/// Default number of grid points per edge.
pub const DEFAULT_NX: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("positions ({x1}, {x2}) do not satisfy 0 <= x1 <= x2 <= 1")]
    OutOfRange { x1: f64, x2: f64 },
    #[error("boundary signal for edge {edge} is undefined at time {time}")]
    SignalTooShort { edge: usize, time: f64 },
}

/// Exact travel-time and log-gain tables for one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeKinematics {
    /// Merged breakpoints of velocity and absorption.
    breaks: Vec<f64>,
    velocity: Vec<f64>,
    absorption: Vec<f64>,
    /// `int_0^{breaks[k]} dx / c`.
    time_from_zero: Vec<f64>,
    /// `int_0^{breaks[k]} q / c dx`.
    gain_from_zero: Vec<f64>,
    tau_total: f64,
    xi_total: f64,
}

/// Position reached along the flow, or the marker that the material has left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowPosition {
    Inside(f64),
    PastOutflow,
}

impl EdgeKinematics {
    pub fn new(edge: &Edge) -> Self {
        let mut breaks: Vec<f64> = edge
            .velocity
            .breakpoints()
            .iter()
            .chain(edge.absorption.breakpoints())
            .copied()
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut velocity = Vec::with_capacity(breaks.len() - 1);
        let mut absorption = Vec::with_capacity(breaks.len() - 1);
        let mut time_from_zero = vec![0.0];
        let mut gain_from_zero = vec![0.0];
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let c = edge.velocity.value_at(mid);
            let q = edge.absorption.value_at(mid);
            velocity.push(c);
            absorption.push(q);
            let len = w[1] - w[0];
            time_from_zero.push(time_from_zero.last().unwrap() + len / c);
            gain_from_zero.push(gain_from_zero.last().unwrap() + len * q / c);
        }
        let mut k = Self {
            breaks,
            velocity,
            absorption,
            time_from_zero,
            gain_from_zero,
            tau_total: 0.0,
            xi_total: 0.0,
        };
        k.tau_total = k.time_at(1.0);
        k.xi_total = k.gain_at(1.0);
        k
    }

    fn piece(&self, x: f64) -> usize {
        let idx = self.breaks[1..].partition_point(|&b| b <= x);
        idx.min(self.velocity.len() - 1)
    }

    fn time_at(&self, x: f64) -> f64 {
        let k = self.piece(x);
        self.time_from_zero[k] + (x - self.breaks[k]) / self.velocity[k]
    }

    fn gain_at(&self, x: f64) -> f64 {
        let k = self.piece(x);
        self.gain_from_zero[k] + (x - self.breaks[k]) * self.absorption[k] / self.velocity[k]
    }

    /// `tau_j(0, 1)`.
    pub fn tau_total(&self) -> f64 {
        self.tau_total
    }

    /// `xi_j(0, 1)`.
    pub fn xi_total(&self) -> f64 {
        self.xi_total
    }

    /// Travel time between two positions.
    pub fn tau(&self, x1: f64, x2: f64) -> Result<f64, TransportError> {
        check_range(x1, x2)?;
        Ok(self.time_at(x2) - self.time_at(x1))
    }

    /// Log-gain accumulated between two positions.
    pub fn xi(&self, x1: f64, x2: f64) -> Result<f64, TransportError> {
        check_range(x1, x2)?;
        Ok(self.gain_at(x2) - self.gain_at(x1))
    }

    /// `tau_j(x, 1)`, the remaining time from inflow to `x`. Assumes `x` in `[0, 1]`.
    pub fn tau_to_inflow(&self, x: f64) -> f64 {
        self.tau_total - self.time_at(x)
    }

    /// `xi_j(x, 1)`. Assumes `x` in `[0, 1]`.
    pub fn xi_to_inflow(&self, x: f64) -> f64 {
        self.xi_total - self.gain_at(x)
    }

    /// The position `s` with `tau(x, s) = t`, found by exact piecewise inversion.
    pub fn flow_position(&self, x: f64, t: f64) -> FlowPosition {
        if t <= 0.0 {
            return FlowPosition::Inside(x);
        }
        let target = self.time_at(x) + t;
        if target > self.tau_total {
            return FlowPosition::PastOutflow;
        }
        let k = self.time_from_zero[1..]
            .partition_point(|&tz| tz < target)
            .min(self.velocity.len() - 1);
        let s = self.breaks[k] + (target - self.time_from_zero[k]) * self.velocity[k];
        FlowPosition::Inside(s.clamp(x, 1.0))
    }

    /// Pieces of the Dirichlet profile `x -> exp(xi(x, 1) - lambda tau(x, 1))`.
    pub fn dirichlet_pieces(&self, lambda: Complex64) -> Vec<ExpPiece> {
        (0..self.velocity.len())
            .map(|k| {
                let b = self.breaks[k + 1];
                let at_b = Complex64::from(self.xi_to_inflow(b)) - lambda * self.tau_to_inflow(b);
                ExpPiece {
                    a: self.breaks[k],
                    b,
                    value_at_b: at_b.exp(),
                    rate: (Complex64::from(self.absorption[k]) - lambda) / self.velocity[k],
                }
            })
            .collect()
    }
}

fn check_range(x1: f64, x2: f64) -> Result<(), TransportError> {
    if (0.0..=1.0).contains(&x1) && (0.0..=1.0).contains(&x2) && x1 <= x2 {
        Ok(())
    } else {
        Err(TransportError::OutOfRange { x1, x2 })
    }
}

pub fn kinematics(g: &MetricGraph) -> Vec<EdgeKinematics> {
    g.edges().iter().map(EdgeKinematics::new).collect()
}

/// `(e^z - 1) / z`, accurate near zero.
pub(crate) fn exprel(z: Complex64) -> Complex64 {
    if z.norm() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `x -> value_at_b * exp(rate * (b - x))` on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpPiece {
    pub a: f64,
    pub b: f64,
    pub value_at_b: Complex64,
    pub rate: Complex64,
}

impl ExpPiece {
    pub fn eval(&self, x: f64) -> Complex64 {
        self.value_at_b * (self.rate * (self.b - x)).exp()
    }

    /// Exact integral over `[lo, hi]`, a sub-interval of the piece.
    pub fn integral(&self, lo: f64, hi: f64) -> Complex64 {
        let len = hi - lo;
        if len <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.value_at_b * (self.rate * (self.b - hi)).exp() * len * exprel(self.rate * len)
    }
}

/// A function on the edges that can be integrated against a piecewise-constant weight.
pub trait SpatialProfile {
    fn num_edges(&self) -> usize;
    /// `int_0^1 weight(x) f_j(x) dx`.
    fn weighted_integral(&self, edge: usize, weight: &PiecewiseConstant) -> Complex64;
}

/// The Dirichlet operator `D_lambda` at one frequency: edge `j` maps a
/// boundary value `v_j` to the profile `v_j exp(xi_j(x, 1) - lambda tau_j(x, 1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOperator {
    lambda: Complex64,
    pieces: Vec<Vec<ExpPiece>>,
}

pub fn dirichlet_d_operator(kin: &[EdgeKinematics], lambda: Complex64) -> DirichletOperator {
    DirichletOperator {
        lambda,
        pieces: kin.iter().map(|k| k.dirichlet_pieces(lambda)).collect(),
    }
}

impl DirichletOperator {
    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// Profile of edge `j` at `x` for unit boundary value.
    pub fn eval(&self, edge: usize, x: f64) -> Complex64 {
        let pieces = &self.pieces[edge];
        let k = pieces.partition_point(|p| p.b <= x).min(pieces.len() - 1);
        pieces[k].eval(x)
    }

    /// `diag(exp(xi_j(0, 1) - lambda tau_j(0, 1)))` as a dense matrix.
    pub fn boundary_matrix(&self) -> nalgebra::DMatrix<Complex64> {
        let m = self.pieces.len();
        nalgebra::DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                self.eval(i, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn pieces(&self, edge: usize) -> &[ExpPiece] {
        &self.pieces[edge]
    }
}

impl SpatialProfile for DirichletOperator {
    fn num_edges(&self) -> usize {
        self.pieces.len()
    }

    fn weighted_integral(&self, edge: usize, weight: &PiecewiseConstant) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for piece in &self.pieces[edge] {
            for (wa, wb, w) in weight.pieces() {
                let lo = piece.a.max(wa);
                let hi = piece.b.min(wb);
                if hi > lo && w != 0.0 {
                    total += w * piece.integral(lo, hi);
                }
            }
        }
        total
    }
}

/// Real edge profiles sampled on a uniform grid `x_i = i / (nx - 1)`,
/// linearly interpolated between grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProfiles {
    nx: usize,
    values: Vec<Vec<f64>>,
}

impl EdgeProfiles {
    pub fn zeros(edges: usize, nx: usize) -> Self {
        assert!(nx >= 2, "grid needs at least two points");
        Self {
            nx,
            values: vec![vec![0.0; nx]; edges],
        }
    }

    pub fn from_fn(edges: usize, nx: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut p = Self::zeros(edges, nx);
        for j in 0..edges {
            for i in 0..nx {
                p.values[j][i] = f(j, p.x(i));
            }
        }
        p
    }

    pub fn from_values(values: Vec<Vec<f64>>) -> Self {
        let nx = values.first().map_or(0, Vec::len);
        assert!(nx >= 2, "grid needs at least two points");
        assert!(values.iter().all(|v| v.len() == nx), "ragged profiles");
        Self { nx, values }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn num_edges(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            1.0
        } else {
            i as f64 / (self.nx - 1) as f64
        }
    }

    pub fn edge(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn edge_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j]
    }

    /// Linear interpolation of edge `j` at `x` in `[0, 1]`.
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        let data = &self.values[j];
        let s = (x.clamp(0.0, 1.0)) * (self.nx - 1) as f64;
        let i = (s.floor() as usize).min(self.nx - 2);
        let frac = s - i as f64;
        data[i] * (1.0 - frac) + data[i + 1] * frac
    }

    /// Trapezoid integral of `f` applied pointwise, summed over edges.
    fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let dx = self.dx();
        self.values
            .iter()
            .map(|v| {
                let inner: f64 = v[1..self.nx - 1].iter().map(|&z| f(z)).sum();
                dx * (inner + 0.5 * (f(v[0]) + f(v[self.nx - 1])))
            })
            .sum()
    }

    /// Total mass `sum_j int_0^1 z_j dx`.
    pub fn mass(&self) -> f64 {
        self.integrate(|z| z)
    }

    /// Discrete `sum_j int_0^1 |z_j| dx`.
    pub fn l1_norm(&self) -> f64 {
        self.integrate(f64::abs)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.nx, other.nx);
        let diff = Self {
            nx: self.nx,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        };
        diff.l1_norm()
    }

    /// Discrete L2 inner product (trapezoid), summed over edges.
    pub fn inner(&self, other: &Self) -> f64 {
        let dx = self.dx();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let n = a.len();
                let inner: f64 = (1..n - 1).map(|i| a[i] * b[i]).sum();
                dx * (inner + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
            })
            .sum()
    }

    /// Sum over edges of the total variation of the grid samples.
    pub fn total_variation(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

impl SpatialProfile for EdgeProfiles {
    fn num_edges(&self) -> usize {
        self.values.len()
    }

    fn weighted_integral(&self, edge: usize, weight: &PiecewiseConstant) -> Complex64 {
        let w = quadrature_weights(weight, self.nx);
        Complex64::from(w.iter().zip(&self.values[edge]).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// Weights `W_i` with `sum_i W_i z_i = int_0^1 weight(x) z(x) dx` exactly for
/// the piecewise-linear interpolant of grid samples `z_i`. Reduces to the
/// trapezoid rule when `weight` is constant.
pub fn quadrature_weights(weight: &PiecewiseConstant, nx: usize) -> Vec<f64> {
    let h = 1.0 / (nx - 1) as f64;
    let x = |i: usize| if i + 1 == nx { 1.0 } else { i as f64 * h };
    let mut w = vec![0.0; nx];
    for (wa, wb, val) in weight.pieces() {
        if val == 0.0 {
            continue;
        }
        let first = ((wa / h).floor() as usize).min(nx - 2);
        for i in first..nx - 1 {
            let (xl, xr) = (x(i), x(i + 1));
            if xl >= wb {
                break;
            }
            let lo = xl.max(wa);
            let hi = xr.min(wb);
            if hi <= lo {
                continue;
            }
            let cell = xr - xl;
            w[i] += val * ((xr - lo).powi(2) - (xr - hi).powi(2)) / (2.0 * cell);
            w[i + 1] += val * ((hi - xl).powi(2) - (lo - xl).powi(2)) / (2.0 * cell);
        }
    }
    w
}

/// Free transport `T(t) g`: each point takes the value carried from
/// `s_j(t)` upstream, scaled by the gain `exp(xi_j(x, s_j(t)))`, and
/// vanishes once the material has left through `x = 0`.
pub fn semigroup_apply(kin: &[EdgeKinematics], g: &EdgeProfiles, t: f64) -> EdgeProfiles {
    assert_eq!(kin.len(), g.num_edges());
    let mut out = EdgeProfiles::zeros(g.num_edges(), g.nx());
    for (j, k) in kin.iter().enumerate() {
        for i in 0..g.nx() {
            let x = g.x(i);
            out.values[j][i] = match k.flow_position(x, t) {
                FlowPosition::Inside(s) => (k.gain_at(s) - k.gain_at(x)).exp() * g.eval(j, s),
                FlowPosition::PastOutflow => 0.0,
            };
        }
    }
    out
}

/// Boundary-injection map `Phi_t v`: the profile built up by feeding the
/// boundary signal `v_j` into each edge at `x = 1` during `[0, t]`.
pub fn control_map_phi(
    kin: &[EdgeKinematics],
    v: &dyn Signal,
    t: f64,
    nx: usize,
) -> Result<EdgeProfiles, TransportError> {
    assert_eq!(kin.len(), v.channels());
    let mut out = EdgeProfiles::zeros(kin.len(), nx);
    for (j, k) in kin.iter().enumerate() {
        for i in 0..nx {
            let x = out.x(i);
            let delay = k.tau_to_inflow(x);
            if t >= delay {
                let time = t - delay;
                let value = v
                    .value(j, time)
                    .ok_or(TransportError::SignalTooShort { edge: j, time })?;
                out.values[j][i] = k.xi_to_inflow(x).exp() * value;
            }
        }
    }
    Ok(out)
}
