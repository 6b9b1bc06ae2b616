//! Delay kernels, the vertex delay operator `L` and the history (shift) system.

use std::collections::VecDeque;

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::graph::{MetricGraph, PiecewiseConstant};
use crate::transport::{exprel, quadrature_weights, EdgeProfiles, SpatialProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DelayError {
    #[error("delay measure puts mass {weight} at theta = 0")]
    MassAtZero { weight: f64 },
    #[error("invalid delay measure: {0}")]
    InvalidMeasure(String),
    #[error("history does not cover time {time}")]
    HistoryGap { time: f64 },
    #[error("state trace is undefined at time {time}")]
    SignalTooShort { time: f64 },
}

impl DelayError {
    pub fn rule(&self) -> &'static str {
        match self {
            DelayError::MassAtZero { .. } => "(A4)",
            DelayError::InvalidMeasure(_) => "delay measure",
            DelayError::HistoryGap { .. } => "history",
            DelayError::SignalTooShort { .. } => "trace",
        }
    }
}

/// Kernel `eta_k` on `[-r, 0]`: finitely many atoms plus a piecewise-constant density.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMeasure {
    r: f64,
    atoms: Vec<(f64, f64)>,
    density: Option<PiecewiseConstant>,
}

impl DelayMeasure {
    /// # Errors
    /// `MassAtZero` for an atom at `theta = 0`, `InvalidMeasure` for atoms
    /// outside `[-r, 0]` or a density not defined exactly on `[-r, 0]`.
    pub fn new(r: f64, atoms: Vec<(f64, f64)>, density: Option<PiecewiseConstant>) -> Result<Self, DelayError> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(DelayError::InvalidMeasure(format!("horizon r = {r}")));
        }
        for &(theta, w) in &atoms {
            if !(theta.is_finite() && w.is_finite()) {
                return Err(DelayError::InvalidMeasure("non-finite atom".into()));
            }
            if theta == 0.0 && w != 0.0 {
                return Err(DelayError::MassAtZero { weight: w });
            }
            if theta < -r || theta > 0.0 {
                return Err(DelayError::InvalidMeasure(format!("atom at {theta} outside [-{r}, 0]")));
            }
        }
        if let Some(d) = &density {
            if d.start() != -r || d.end() != 0.0 {
                return Err(DelayError::InvalidMeasure(format!(
                    "density must live on [-{r}, 0], got [{}, {}]",
                    d.start(),
                    d.end()
                )));
            }
        }
        Ok(Self {
            r,
            atoms: atoms.into_iter().filter(|&(_, w)| w != 0.0).collect(),
            density: density.filter(|d| !d.is_zero()),
        })
    }

    pub fn zero() -> Self {
        Self {
            r: 0.0,
            atoms: Vec::new(),
            density: None,
        }
    }

    /// Single atom of weight `weight` at `theta = -r`.
    pub fn point(r: f64, weight: f64) -> Result<Self, DelayError> {
        Self::new(r, vec![(-r, weight)], None)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&PiecewiseConstant> {
        self.density.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.is_none()
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w.abs()).sum::<f64>()
            + self.density.as_ref().map_or(0.0, |d| d.total_variation_mass())
    }

    /// `int e^{lambda theta} d eta(theta)`, closed form over density pieces.
    pub fn laplace(&self, lambda: Complex64) -> Complex64 {
        let atoms: Complex64 = self.atoms.iter().map(|&(theta, w)| w * (lambda * theta).exp()).sum();
        let density: Complex64 = self
            .density
            .iter()
            .flat_map(|d| d.pieces())
            .map(|(a, b, v)| v * (lambda * b).exp() * (b - a) * exprel(-lambda * (b - a)))
            .sum();
        atoms + density
    }
}

/// Largest horizon over a set of per-edge measures.
pub fn max_horizon(measures: &[DelayMeasure]) -> f64 {
    measures.iter().map(DelayMeasure::r).fold(0.0, f64::max)
}

/// `(L d_lambda p)_k = eta_k^(lambda) * int_0^1 c_k(x) p_k(x) dx`.
pub fn l_of_d_lambda(
    graph: &MetricGraph,
    measures: &[DelayMeasure],
    lambda: Complex64,
    profile: &dyn SpatialProfile,
) -> DVector<Complex64> {
    assert_eq!(measures.len(), graph.num_edges());
    DVector::from_fn(graph.num_edges(), |k, _| {
        let m = &measures[k];
        if m.is_zero() {
            Complex64::new(0.0, 0.0)
        } else {
            m.laplace(lambda) * profile.weighted_integral(k, &graph.edge(k).velocity)
        }
    })
}

struct Snapshot {
    time: f64,
    profile: EdgeProfiles,
    /// `int_0^1 c_k z_k dx` per edge.
    integrals: Vec<f64>,
}

/// Ring buffer of state snapshots on a uniform time grid, with the spatial
/// integrals needed by `L` cached per snapshot.
pub struct HistoryBuffer {
    dt: f64,
    capacity: usize,
    weights: Vec<Vec<f64>>,
    snaps: VecDeque<Snapshot>,
}

impl HistoryBuffer {
    /// Snapshots needed to span a horizon `r` with step `dt`.
    pub fn capacity_for(r: f64, dt: f64) -> usize {
        (r / dt - 1e-9).ceil().max(0.0) as usize + 2
    }

    pub fn new(graph: &MetricGraph, nx: usize, dt: f64, r: f64) -> Self {
        assert!(dt > 0.0);
        let weights = graph
            .edges()
            .iter()
            .map(|e| quadrature_weights(&e.velocity, nx))
            .collect();
        let capacity = Self::capacity_for(r, dt);
        Self {
            dt,
            capacity,
            weights,
            snaps: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.snaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snaps.is_empty()
    }

    fn integrals(&self, p: &EdgeProfiles) -> Vec<f64> {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w.iter().zip(p.edge(k)).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Appends the snapshot at `time`, one step after the newest.
    ///
    /// # Panics
    /// If `time` is not on the buffer's time grid.
    pub fn push(&mut self, time: f64, profile: EdgeProfiles) {
        if let Some(last) = self.snaps.back() {
            assert!(
                ((time - last.time) / self.dt - 1.0).abs() < 1e-6,
                "snapshot times must advance by one step"
            );
        }
        let integrals = self.integrals(&profile);
        self.snaps.push_back(Snapshot {
            time,
            profile,
            integrals,
        });
        while self.snaps.len() > self.capacity {
            self.snaps.pop_front();
        }
    }

    /// Replaces the newest snapshot, keeping its time stamp.
    pub fn patch_last(&mut self, profile: EdgeProfiles) {
        let integrals = self.integrals(&profile);
        let last = self.snaps.back_mut().expect("patch on empty history");
        last.profile = profile;
        last.integrals = integrals;
    }

    pub fn oldest_time(&self) -> Option<f64> {
        self.snaps.front().map(|s| s.time)
    }

    pub fn newest_time(&self) -> Option<f64> {
        self.snaps.back().map(|s| s.time)
    }

    pub fn latest(&self) -> Option<&EdgeProfiles> {
        self.snaps.back().map(|s| &s.profile)
    }

    /// Cell index and fraction for `time`, snapping to grid nodes.
    fn locate(&self, time: f64) -> Result<(usize, f64), DelayError> {
        let t0 = self.oldest_time().ok_or(DelayError::HistoryGap { time })?;
        let s = (time - t0) / self.dt;
        let last = (self.snaps.len() - 1) as f64;
        if s < -1e-7 || s > last + 1e-7 {
            return Err(DelayError::HistoryGap { time });
        }
        let s = s.clamp(0.0, last);
        let nearest = s.round();
        let s = if (s - nearest).abs() < 1e-9 { nearest } else { s };
        if self.snaps.len() == 1 {
            return Ok((0, 0.0));
        }
        let i = (s.floor() as usize).min(self.snaps.len() - 2);
        Ok((i, s - i as f64))
    }

    /// `int_0^1 c_k z_k(time, x) dx`, linear in time between snapshots.
    pub fn integral_at(&self, k: usize, time: f64) -> Result<f64, DelayError> {
        let (i, f) = self.locate(time)?;
        if f == 0.0 {
            return Ok(self.snaps[i].integrals[k]);
        }
        Ok((1.0 - f) * self.snaps[i].integrals[k] + f * self.snaps[i + 1].integrals[k])
    }

    /// `int_a^b int_0^1 c_k z_k(s, x) dx ds`, exact for the time interpolant.
    pub fn integral_over(&self, k: usize, a: f64, b: f64) -> Result<f64, DelayError> {
        if b <= a {
            return Ok(0.0);
        }
        let (ia, fa) = self.locate(a)?;
        let (ib, fb) = self.locate(b)?;
        let val = |i: usize| self.snaps[i].integrals[k];
        let at = |i: usize, f: f64| {
            if f == 0.0 {
                val(i)
            } else {
                (1.0 - f) * val(i) + f * val(i + 1)
            }
        };
        if ia == ib {
            return Ok(0.5 * (at(ia, fa) + at(ib, fb)) * (b - a));
        }
        // partial first cell, full middle cells, partial last cell
        let mut total = 0.5 * (at(ia, fa) + val(ia + 1)) * (1.0 - fa) * self.dt;
        for i in ia + 1..ib {
            total += 0.5 * (val(i) + val(i + 1)) * self.dt;
        }
        total += 0.5 * (val(ib) + at(ib, fb)) * fb * self.dt;
        Ok(total)
    }

    /// State at `time`, linearly interpolated between snapshots.
    pub fn snapshot_at(&self, time: f64) -> Result<EdgeProfiles, DelayError> {
        let (i, f) = self.locate(time)?;
        let a = &self.snaps[i].profile;
        if f == 0.0 {
            return Ok(a.clone());
        }
        let b = &self.snaps[i + 1].profile;
        Ok(EdgeProfiles::from_fn(a.num_edges(), a.nx(), |j, x| {
            let ix = ((x * (a.nx() - 1) as f64).round()) as usize;
            (1.0 - f) * a.edge(j)[ix] + f * b.edge(j)[ix]
        }))
    }
}

/// `L z_t` with `z_t(theta) = z(t + theta)` read from the buffer.
pub fn delay_l(measures: &[DelayMeasure], history: &HistoryBuffer, t: f64) -> Result<DVector<f64>, DelayError> {
    let mut out = DVector::zeros(measures.len());
    for (k, m) in measures.iter().enumerate() {
        let mut acc = 0.0;
        for &(theta, w) in m.atoms() {
            acc += w * history.integral_at(k, t + theta)?;
        }
        if let Some(d) = m.density() {
            for (a, b, v) in d.pieces() {
                if v != 0.0 {
                    acc += v * history.integral_over(k, t + a, t + b)?;
                }
            }
        }
        out[k] = acc;
    }
    Ok(out)
}

/// `d_lambda g`: the history `(theta, x) -> e^{lambda theta} g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletHistory {
    lambda: Complex64,
    g: EdgeProfiles,
}

pub fn dirichlet_d(lambda: Complex64, g: EdgeProfiles) -> DirichletHistory {
    DirichletHistory { lambda, g }
}

impl DirichletHistory {
    pub fn eval(&self, theta: f64, edge: usize, x: f64) -> Complex64 {
        (self.lambda * theta).exp() * self.g.eval(edge, x)
    }

    pub fn boundary(&self) -> &EdgeProfiles {
        &self.g
    }
}

/// Edge-profile valued function on `[-r, 0]`, sampled on a uniform `theta` grid
/// and linearly interpolated in `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFunction {
    r: f64,
    nodes: Vec<EdgeProfiles>,
}

impl HistoryFunction {
    /// `n_theta >= 2` nodes `theta_i = -r + i r / (n_theta - 1)`.
    pub fn from_fn(r: f64, n_theta: usize, edges: usize, nx: usize, f: impl Fn(f64, usize, f64) -> f64) -> Self {
        assert!(r > 0.0 && n_theta >= 2);
        let nodes = (0..n_theta)
            .map(|i| {
                let theta = Self::node_theta(r, n_theta, i);
                EdgeProfiles::from_fn(edges, nx, |j, x| f(theta, j, x))
            })
            .collect();
        Self { r, nodes }
    }

    fn node_theta(r: f64, n: usize, i: usize) -> f64 {
        if i + 1 == n {
            0.0
        } else {
            -r + r * i as f64 / (n - 1) as f64
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n_theta(&self) -> usize {
        self.nodes.len()
    }

    pub fn theta(&self, i: usize) -> f64 {
        Self::node_theta(self.r, self.nodes.len(), i)
    }

    pub fn node(&self, i: usize) -> &EdgeProfiles {
        &self.nodes[i]
    }

    /// Value at `theta` in `[-r, 0]` on edge `j`, grid point `i`.
    pub fn eval(&self, theta: f64, j: usize, i: usize) -> f64 {
        let n = self.nodes.len();
        let s = ((theta + self.r) / self.r * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let nearest = s.round();
        let s = if (s - nearest).abs() < 1e-9 { nearest } else { s };
        let k = (s.floor() as usize).min(n - 2);
        let f = s - k as f64;
        let a = self.nodes[k].edge(j)[i];
        if f == 0.0 {
            a
        } else {
            (1.0 - f) * a + f * self.nodes[k + 1].edge(j)[i]
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nodes.iter().all(|p| p.max_abs() == 0.0)
    }
}

/// Left shift `(S(t) phi)(theta) = phi(t + theta)` for `theta < -t`, zero on `[-t, 0]`.
pub fn shift_semigroup(phi: &HistoryFunction, t: f64) -> HistoryFunction {
    let first = &phi.nodes[0];
    let nodes = (0..phi.nodes.len())
        .map(|n| {
            let theta = phi.theta(n);
            if theta >= -t - 1e-12 {
                EdgeProfiles::zeros(first.num_edges(), first.nx())
            } else {
                let mut p = EdgeProfiles::zeros(first.num_edges(), first.nx());
                for j in 0..first.num_edges() {
                    for i in 0..first.nx() {
                        p.edge_mut(j)[i] = phi.eval(t + theta, j, i);
                    }
                }
                p
            }
        })
        .collect();
    HistoryFunction { r: phi.r, nodes }
}

/// Time-stamped state snapshots on an increasing time grid.
pub trait StateTrace {
    fn state_at(&self, time: f64) -> Option<EdgeProfiles>;
}

impl StateTrace for HistoryBuffer {
    fn state_at(&self, time: f64) -> Option<EdgeProfiles> {
        self.snapshot_at(time).ok()
    }
}

/// `theta -> z(t + theta)` for `theta >= -t`, zero below; equals the history
/// function `z_t` once `t >= r`.
pub fn history_control_map(
    trace: &dyn StateTrace,
    t: f64,
    r: f64,
    n_theta: usize,
    edges: usize,
    nx: usize,
) -> Result<HistoryFunction, DelayError> {
    assert!(r > 0.0 && n_theta >= 2);
    let mut nodes = Vec::with_capacity(n_theta);
    for i in 0..n_theta {
        let theta = HistoryFunction::node_theta(r, n_theta, i);
        if t <= 0.0 || theta < -t - 1e-12 {
            nodes.push(EdgeProfiles::zeros(edges, nx));
        } else {
            let time = (t + theta).max(0.0);
            nodes.push(trace.state_at(time).ok_or(DelayError::SignalTooShort { time })?);
        }
    }
    Ok(HistoryFunction { r, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::transport::{dirichlet_d_operator, kinematics};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn constant_history(graph: &MetricGraph, dt: f64, r: f64, f: impl Fn(f64) -> f64) -> HistoryBuffer {
        let nx = 65;
        let mut h = HistoryBuffer::new(graph, nx, dt, r);
        let steps = HistoryBuffer::capacity_for(r, dt) - 1;
        for n in 0..=steps {
            let t = -r + n as f64 * dt;
            let v = f(t);
            h.push(t, EdgeProfiles::from_fn(graph.num_edges(), nx, |_, _| v));
        }
        h
    }

    #[test]
    fn rejects_mass_at_zero() {
        let err = DelayMeasure::new(1.0, vec![(0.0, 0.3)], None).unwrap_err();
        assert_eq!(err.rule(), "(A4)");
        assert!(DelayMeasure::new(1.0, vec![(-1.5, 1.0)], None).is_err());
        let bad = PiecewiseConstant::new(vec![-1.0, -0.2], vec![1.0]).unwrap();
        assert!(DelayMeasure::new(1.0, vec![], Some(bad)).is_err());
    }

    #[test]
    fn delay_l_examples() {
        let g = single_loop(1.0, 0.0);
        let h = constant_history(&g, 0.125, 1.0, |_| 1.0);
        assert_eq!(delay_l(&[DelayMeasure::zero()], &h, 0.0).unwrap()[0], 0.0);
        let atom = DelayMeasure::point(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(delay_l(&[atom], &h, 0.0).unwrap()[0], 1.0, epsilon = 1e-14);
        let avg = DelayMeasure::new(
            1.0,
            vec![],
            Some(PiecewiseConstant::new(vec![-1.0, 0.0], vec![1.0]).unwrap()),
        )
        .unwrap();
        assert_abs_diff_eq!(delay_l(&[avg], &h, 0.0).unwrap()[0], 1.0, epsilon = 1e-14);
        let gap = DelayMeasure::point(2.0, 1.0).unwrap();
        assert!(matches!(delay_l(&[gap], &h, 0.0), Err(DelayError::HistoryGap { .. })));
    }

    #[test]
    fn buffer_keeps_capacity() {
        let g = single_loop(1.0, 0.0);
        let mut h = HistoryBuffer::new(&g, 5, 0.25, 1.0);
        assert_eq!(h.capacity(), 6);
        for n in 0..20 {
            h.push(n as f64 * 0.25, EdgeProfiles::from_fn(1, 5, |_, _| n as f64));
        }
        assert_eq!(h.len(), 6);
        assert_eq!(h.oldest_time(), Some(3.5));
        assert_abs_diff_eq!(h.integral_at(0, 4.125).unwrap(), 16.5, epsilon = 1e-12);
        // exact integral of the linear ramp n(t) = 4 t over [3.6, 4.6]
        assert_abs_diff_eq!(
            h.integral_over(0, 3.6, 4.6).unwrap(),
            2.0 * (4.6f64.powi(2) - 3.6f64.powi(2)),
            epsilon = 1e-12
        );
        h.patch_last(EdgeProfiles::from_fn(1, 5, |_, _| 0.0));
        assert_eq!(h.integral_at(0, 4.75).unwrap(), 0.0);
    }

    #[test]
    fn delay_l_matches_closed_form_on_modes() {
        // history e^{lambda theta} g(x) with g = D_lambda 1 on a loop with c = 1
        let g = single_loop(1.0, 0.0);
        let lambda = 0.8;
        let r = 1.0;
        let dt = 1.0 / 64.0;
        let nx = 257;
        let kin = kinematics(&g);
        let d = dirichlet_d_operator(&kin, Complex64::from(lambda));
        let prof = EdgeProfiles::from_fn(1, nx, |_, x| d.eval(0, x).re);
        let mut h = HistoryBuffer::new(&g, nx, dt, r);
        let steps = HistoryBuffer::capacity_for(r, dt) - 1;
        for n in 0..=steps {
            let t = -r + n as f64 * dt;
            let scale = (lambda * t).exp();
            h.push(t, EdgeProfiles::from_fn(1, nx, |_, x| scale * prof.eval(0, x)));
        }
        let t_now = h.newest_time().unwrap();
        let measures = [DelayMeasure::new(
            r,
            vec![(-r, 1.0), (-0.3, 0.5)],
            Some(PiecewiseConstant::new(vec![-1.0, -0.5, 0.0], vec![0.8, 0.4]).unwrap()),
        )
        .unwrap()];
        let numeric = delay_l(&measures, &h, t_now).unwrap()[0] / (lambda * t_now).exp();
        let exact = l_of_d_lambda(&g, &measures, Complex64::from(lambda), &d)[0];
        assert!((numeric - exact.re).abs() < 1e-4, "{numeric} vs {exact}");
    }

    #[test]
    fn l_of_d_lambda_examples() {
        let g = single_loop(1.0, 0.0);
        let kin = kinematics(&g);
        let lambda = Complex64::new(1.3, 0.4);
        let d = dirichlet_d_operator(&kin, lambda);
        let atom = [DelayMeasure::point(1.0, 1.0).unwrap()];
        let got = l_of_d_lambda(&g, &atom, lambda, &d)[0];
        let expected = (-lambda).exp() * (1.0 - (-lambda).exp()) / lambda;
        assert!((got - expected).norm() < 1e-14);
        let d0 = dirichlet_d_operator(&kin, Complex64::new(0.0, 0.0));
        let one = l_of_d_lambda(&g, &atom, Complex64::new(0.0, 0.0), &d0)[0];
        assert!((one - 1.0).norm() < 1e-14);
        assert_eq!(
            l_of_d_lambda(&g, &[DelayMeasure::zero()], lambda, &d)[0],
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn density_laplace_matches_midpoint_rule() {
        let m = DelayMeasure::new(
            2.0,
            vec![],
            Some(PiecewiseConstant::new(vec![-2.0, -0.5, 0.0], vec![0.3, -1.1]).unwrap()),
        )
        .unwrap();
        let lambda = Complex64::new(0.7, -2.0);
        let n = 100_000;
        let h = 2.0 / n as f64;
        let oracle: Complex64 = (0..n)
            .map(|i| {
                let th = -2.0 + (i as f64 + 0.5) * h;
                m.density().unwrap().value_at(th) * (lambda * th).exp() * h
            })
            .sum();
        assert!((m.laplace(lambda) - oracle).norm() < 1e-8);
    }

    #[test]
    fn dirichlet_d_examples() {
        let g = EdgeProfiles::from_fn(1, 5, |_, x| 1.0 + x);
        let d0 = dirichlet_d(Complex64::new(0.0, 0.0), g.clone());
        assert_eq!(d0.eval(-0.7, 0, 0.5), Complex64::from(1.5));
        let d1 = dirichlet_d(Complex64::new(1.0, 0.0), EdgeProfiles::from_fn(1, 5, |_, _| 1.0));
        assert_eq!(d1.eval(0.0, 0, 0.25), Complex64::from(1.0));
        assert_abs_diff_eq!(d1.eval(-2.0, 0, 0.25).re, (-2.0f64).exp(), epsilon = 1e-15);
    }

    fn ramp_history(r: f64) -> HistoryFunction {
        HistoryFunction::from_fn(r, 9, 1, 3, |theta, _, x| theta + 10.0 * x)
    }

    #[test]
    fn shift_examples() {
        let r = 2.0;
        let phi = ramp_history(r);
        assert_eq!(shift_semigroup(&phi, 0.0).node(0), phi.node(0));
        assert!(shift_semigroup(&phi, r).is_zero());
        let half = shift_semigroup(&phi, r / 2.0);
        assert_abs_diff_eq!(half.eval(-0.75 * r, 0, 0), -0.25 * r, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn shift_law(s in 0usize..9, t in 0usize..9) {
            let r = 2.0;
            let phi = ramp_history(r);
            let step = r / 8.0;
            let lhs = shift_semigroup(&shift_semigroup(&phi, s as f64 * step), t as f64 * step);
            let rhs = shift_semigroup(&phi, (s + t) as f64 * step);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn delay_l_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, w in -1.0..1.0f64) {
            let g = single_loop(1.0, 0.0);
            let h1 = constant_history(&g, 0.25, 1.0, |t| t.sin());
            let h2 = constant_history(&g, 0.25, 1.0, |t| 1.0 + t * t);
            let hs = constant_history(&g, 0.25, 1.0, |t| a * t.sin() + b * (1.0 + t * t));
            let m = [DelayMeasure::new(1.0, vec![(-0.6, w), (-1.0, 0.3)],
                Some(PiecewiseConstant::new(vec![-1.0, -0.1, 0.0], vec![0.5, w]).unwrap())).unwrap()];
            let t = h1.newest_time().unwrap();
            let lhs = delay_l(&m, &hs, t).unwrap()[0];
            let rhs = a * delay_l(&m, &h1, t).unwrap()[0] + b * delay_l(&m, &h2, t).unwrap()[0];
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn history_control_map_examples() {
        let g = single_loop(1.0, 0.0);
        let r = 1.0;
        let mut h = HistoryBuffer::new(&g, 5, 0.125, 4.0);
        for n in 0..=16 {
            let t = n as f64 * 0.125;
            h.push(t, EdgeProfiles::from_fn(1, 5, |_, _| t));
        }
        assert!(history_control_map(&h, 0.0, r, 9, 1, 5).unwrap().is_zero());
        let half = history_control_map(&h, r / 2.0, r, 9, 1, 5).unwrap();
        assert_abs_diff_eq!(half.eval(-r / 4.0, 0, 2), r / 4.0, epsilon = 1e-14);
        assert_eq!(half.eval(-0.75, 0, 2), 0.0);
        let full = history_control_map(&h, 2.0, r, 9, 1, 5).unwrap();
        assert_abs_diff_eq!(full.eval(-1.0, 0, 0), 1.0, epsilon = 1e-14);
        assert!(history_control_map(&h, 3.0, r, 9, 1, 5).is_err());
    }
}
