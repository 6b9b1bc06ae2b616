//! Frequency-domain operator `A_lambda` and the approximate-controllability test.
//!
//! `A_lambda = c(1)^-1 B [c(0) diag(e^{xi_j(0,1) - lambda tau_j(0,1)}) + L d_lambda D_lambda]`
//! and the system is approximately controllable on a finite graph iff
//! `[K~, A K~, ..., A^{m-1} K~]` has rank `m`, with `K~ = c(1)^-1 K`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::delay::{l_of_d_lambda, DelayMeasure};
use crate::graph::{adjacency_b, MetricGraph};
use crate::linalg::{norm1, rank_from_singular_values, singular_values, to_complex, RANK_THRESHOLD};
use crate::transport::{dirichlet_d_operator, exprel, kinematics};

/// Real offsets added to `mu0` for the default samples.
pub const DEFAULT_OFFSETS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

const MU0_TOL: f64 = 1e-9;
const MU0_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("||A_lambda||_1 stays >= 1 up to Re lambda = {upper}")]
    NoConvergence { upper: f64 },
    #[error("1 is an eigenvalue of A_lambda at lambda = {lambda}")]
    SingularResolvent { lambda: Complex64 },
    #[error("sample lambda = {lambda} is not right of mu0 = {mu0}")]
    BelowMu0 { lambda: Complex64, mu0: f64 },
    #[error("allocation matrix rejected: {0}")]
    AllocationViolation(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// `A_lambda` with its two parts kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqOperator {
    pub lambda: Complex64,
    pub matrix: DMatrix<Complex64>,
    pub norm1: f64,
    /// `c(1)^-1 B c(0) D_lambda(0)`.
    pub boundary_part: DMatrix<Complex64>,
    /// `c(1)^-1 B L d_lambda D_lambda`.
    pub delay_part: DMatrix<Complex64>,
}

impl FreqOperator {
    fn from_parts(lambda: Complex64, boundary_part: DMatrix<Complex64>, delay_part: DMatrix<Complex64>) -> Self {
        let matrix = &boundary_part + &delay_part;
        Self {
            lambda,
            norm1: norm1(&matrix),
            matrix,
            boundary_part,
            delay_part,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn inflow_velocity_inverse(g: &MetricGraph) -> DMatrix<Complex64> {
    let m = g.num_edges();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::from(1.0 / g.edge(i).velocity.value_at(1.0))
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Scaled input matrix `c(1)^-1 K`.
pub fn scaled_control(g: &MetricGraph) -> DMatrix<Complex64> {
    inflow_velocity_inverse(g) * to_complex(g.control())
}

pub fn assemble_a(g: &MetricGraph, delays: &[DelayMeasure], lambda: Complex64) -> FreqOperator {
    let m = g.num_edges();
    assert_eq!(delays.len(), m, "one delay measure per edge");
    let kin = kinematics(g);
    let d = dirichlet_d_operator(&kin, lambda);
    let left = inflow_velocity_inverse(g) * to_complex(&adjacency_b(g));
    let out = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            g.edge(i).velocity.value_at(0.0) * d.eval(i, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let delay = DMatrix::from_diagonal(&l_of_d_lambda(g, delays, lambda, &d));
    FreqOperator::from_parts(lambda, &left * out, &left * delay)
}

/// The ATFM operator of a delay-`r` network with allocation matrix `h`:
/// `c(1)^-1 H [c(0) diag(e^{-mu tau_j(0,1)}) + diag(int_0^1 e^{-mu (r + tau_j(x,1))} c_j(x) dx)]`.
///
/// Requires `q = 0`. Columns of `h` must sum to 1 wherever the line graph has an
/// incoming edge, and `h` must vanish where the line-graph adjacency does.
pub fn atfm_operator(g: &MetricGraph, h: &DMatrix<f64>, r: f64, mu: Complex64) -> Result<FreqOperator, ControlError> {
    let m = g.num_edges();
    if h.shape() != (m, m) {
        return Err(ControlError::DimensionMismatch(format!(
            "allocation matrix is {:?}, graph has {m} edges",
            h.shape()
        )));
    }
    if let Some(e) = g.edges().iter().find(|e| !e.absorption.is_zero()) {
        return Err(ControlError::AllocationViolation(format!(
            "edge {} has nonzero absorption",
            e.name
        )));
    }
    let b = adjacency_b(g);
    for k in 0..m {
        let routed = b.column(k).iter().any(|&v| v != 0.0);
        for j in 0..m {
            if b[(j, k)] == 0.0 && h[(j, k)] != 0.0 {
                return Err(ControlError::AllocationViolation(format!(
                    "h[{j}][{k}] = {} where edges are not adjacent",
                    h[(j, k)]
                )));
            }
        }
        let sum: f64 = h.column(k).sum();
        if routed && (sum - 1.0).abs() > 1e-12 {
            return Err(ControlError::AllocationViolation(format!("column {k} sums to {sum}")));
        }
    }

    let mut direct = DMatrix::zeros(m, m);
    let mut delayed = DMatrix::zeros(m, m);
    for (j, e) in g.edges().iter().enumerate() {
        let pieces: Vec<(f64, f64, f64)> = e.velocity.pieces().collect();
        // time from the right end of each piece to x = 1
        let mut to_inflow = vec![0.0; pieces.len()];
        for p in (0..pieces.len().saturating_sub(1)).rev() {
            let (a, b, c) = pieces[p + 1];
            to_inflow[p] = to_inflow[p + 1] + (b - a) / c;
        }
        let tau_total = to_inflow[0] + (pieces[0].1 - pieces[0].0) / pieces[0].2;
        direct[(j, j)] = e.velocity.value_at(0.0) * (-mu * tau_total).exp();
        delayed[(j, j)] = pieces
            .iter()
            .zip(&to_inflow)
            .map(|(&(a, b, c), &tb)| (-mu * (r + tb)).exp() * c * (b - a) * exprel(-mu * (b - a) / c))
            .sum::<Complex64>();
    }
    let left = inflow_velocity_inverse(g) * to_complex(h);
    Ok(FreqOperator::from_parts(mu, &left * direct, &left * delayed))
}

/// Bisection result for the abscissa `mu0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mu0Estimate {
    pub mu0: f64,
    /// `(Re lambda, ||A_lambda||_1)` pairs evaluated during the search.
    pub samples: Vec<(f64, f64)>,
}

/// Abscissa `mu0 >= 0` with `||A_mu||_1 < 1` for real `mu > mu0`, to within `1e-9`.
///
/// The returned value is the last point of the bisection where the norm is still
/// at least one, so every sample strictly to its right is admissible.
pub fn estimate_mu0(g: &MetricGraph, delays: &[DelayMeasure]) -> Result<Mu0Estimate, ControlError> {
    norm_abscissa(|mu| assemble_a(g, delays, Complex64::from(mu)).norm1)
}

/// Bisection for the point past which `norm_at` stays below one, assuming it
/// decreases along the real axis.
pub fn norm_abscissa(mut norm_at: impl FnMut(f64) -> f64) -> Result<Mu0Estimate, ControlError> {
    let mut samples = Vec::new();
    let mut eval = |mu: f64| {
        let n = norm_at(mu);
        samples.push((mu, n));
        n
    };
    if eval(0.0) < 1.0 {
        return Ok(Mu0Estimate { mu0: 0.0, samples });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while eval(hi) >= 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > MU0_MAX {
            return Err(ControlError::NoConvergence { upper: lo });
        }
    }
    while hi - lo > MU0_TOL {
        let mid = 0.5 * (lo + hi);
        if eval(mid) < 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Mu0Estimate { mu0: lo, samples })
}

/// `[K, A K, ..., A^{depth-1} K]`.
pub fn kalman_matrix(a: &DMatrix<Complex64>, k: &DMatrix<Complex64>, depth: usize) -> DMatrix<Complex64> {
    let (m, n) = k.shape();
    let mut out = DMatrix::zeros(m, n * depth);
    let mut block = k.clone();
    for d in 0..depth {
        out.view_mut((0, d * n), (m, n)).copy_from(&block);
        block = a * block;
    }
    out
}

/// Numerical rank (`sigma_k > threshold sigma_1`) and the singular values.
pub fn rank_with_tolerance(mx: &DMatrix<Complex64>, threshold: f64) -> (usize, Vec<f64>) {
    let sv = singular_values(mx);
    (rank_from_singular_values(&sv, threshold), sv)
}

/// `sum_{k <= terms} A^k K` and the a priori error bound `||A||^{terms+1} / (1 - ||A||)` times `||K||_1`.
pub fn neumann_resolvent(op: &FreqOperator, k: &DMatrix<Complex64>, terms: usize) -> (DMatrix<Complex64>, f64) {
    let mut sum = k.clone();
    let mut power = k.clone();
    for _ in 0..terms {
        power = &op.matrix * power;
        sum += &power;
    }
    let q = op.norm1;
    let bound = if q < 1.0 {
        q.powi(terms as i32 + 1) / (1.0 - q) * norm1(k)
    } else {
        f64::INFINITY
    };
    (sum, bound)
}

/// Solves `(I - A) X = K`.
pub fn direct_resolvent(op: &FreqOperator, k: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>, ControlError> {
    let m = op.dim();
    let lhs = DMatrix::identity(m, m) - &op.matrix;
    let sv = singular_values(&lhs);
    let smallest = sv.last().copied().unwrap_or(0.0);
    if smallest <= 1e-12 * sv[0].max(1.0) {
        return Err(ControlError::SingularResolvent { lambda: op.lambda });
    }
    lhs.lu()
        .solve(k)
        .ok_or(ControlError::SingularResolvent { lambda: op.lambda })
}

/// `D_lambda(0) (I - A_lambda)^-1 c(1)^-1 K u_hat`: Laplace transform of the
/// outflow traces under zero initial data.
pub fn outflow_transfer(
    g: &MetricGraph,
    delays: &[DelayMeasure],
    lambda: Complex64,
    u_hat: &DVector<Complex64>,
) -> Result<DVector<Complex64>, ControlError> {
    let inflow = inflow_transfer(g, delays, lambda, u_hat)?;
    let d = dirichlet_d_operator(&kinematics(g), lambda);
    Ok(DVector::from_fn(g.num_edges(), |j, _| d.eval(j, 0.0) * inflow[j]))
}

/// `(I - A_lambda)^-1 c(1)^-1 K u_hat`: Laplace transform of the inflow traces.
pub fn inflow_transfer(
    g: &MetricGraph,
    delays: &[DelayMeasure],
    lambda: Complex64,
    u_hat: &DVector<Complex64>,
) -> Result<DVector<Complex64>, ControlError> {
    if u_hat.len() != g.num_inputs() {
        return Err(ControlError::DimensionMismatch(format!(
            "{} input transforms for {} inputs",
            u_hat.len(),
            g.num_inputs()
        )));
    }
    let op = assemble_a(g, delays, lambda);
    let rhs = scaled_control(g) * u_hat;
    let x = direct_resolvent(&op, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(x.column(0).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Controllable,
    NotControllable,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Controllable => "controllable",
            Verdict::NotControllable => "not-controllable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolventMethod {
    Neumann,
    Direct,
}

/// Left null functional of a rank-deficient Kalman matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWitness {
    pub lambda: Complex64,
    /// Unit vector with `g*^T [K, A K, ...] ~ 0`, largest entry real positive.
    pub g_star: DVector<Complex64>,
    /// `||g*^T M|| / (||g*|| ||M||_2)`.
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub lambda: Complex64,
    pub norm1: f64,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub method: ResolventMethod,
    /// `(I - A)^-1 K~`.
    pub transfer: DMatrix<Complex64>,
    pub witness: Option<DualWitness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub verdict: Verdict,
    pub dim: usize,
    pub depth: usize,
    pub threshold: f64,
    pub mu0: Option<f64>,
    pub samples: Vec<SampleResult>,
    /// Samples dropped because `1` is an eigenvalue of `A_lambda`.
    pub skipped: Vec<Complex64>,
    pub witness: Option<DualWitness>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// Defaults to `mu0 + {0.5, 1, 2, 4, 8}` and `mu0 + 1 +- i`.
    pub samples: Option<Vec<Complex64>>,
    /// Kalman depth; defaults to the number of edges.
    pub depth: Option<usize>,
    pub threshold: f64,
    /// Accept samples left of `mu0`, solving the resolvent directly.
    pub allow_below_mu0: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            samples: None,
            depth: None,
            threshold: RANK_THRESHOLD,
            allow_below_mu0: false,
        }
    }
}

pub fn default_samples(mu0: f64) -> Vec<Complex64> {
    DEFAULT_OFFSETS
        .iter()
        .map(|&o| Complex64::from(mu0 + o))
        .chain([Complex64::new(mu0 + 1.0, 1.0), Complex64::new(mu0 + 1.0, -1.0)])
        .collect()
}

fn dual_witness(lambda: Complex64, kalman: &DMatrix<Complex64>) -> DualWitness {
    let m = kalman.nrows();
    let padded = if kalman.ncols() < m {
        let mut p = DMatrix::zeros(m, m);
        p.view_mut((0, 0), kalman.shape()).copy_from(kalman);
        p
    } else {
        kalman.clone()
    };
    let svd = padded.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let k = (0..svd.singular_values.len())
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    let mut g: DVector<Complex64> = u.column(k).map(|z| z.conj());
    // first entry of (numerically) largest magnitude, so ties resolve by index
    let largest = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pivot = g.iter().copied().find(|z| z.norm() >= largest * (1.0 - 1e-10)).unwrap();
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        g *= phase;
    }
    let g = g.normalize();
    let residual = (g.transpose() * kalman).norm();
    let scale = singular_values(kalman).first().copied().unwrap_or(0.0);
    DualWitness {
        lambda,
        relative_residual: if scale > 0.0 { residual / scale } else { 0.0 },
        g_star: g,
    }
}

fn analyze_sample(
    g: &MetricGraph,
    delays: &[DelayMeasure],
    k: &DMatrix<Complex64>,
    lambda: Complex64,
    depth: usize,
    threshold: f64,
) -> Result<SampleResult, ControlError> {
    let op = assemble_a(g, delays, lambda);
    let (transfer, method) = if op.norm1 < 1.0 {
        let terms = ((1e-14f64).ln() / op.norm1.max(1e-300).ln())
            .ceil()
            .clamp(1.0, 10_000.0) as usize;
        (neumann_resolvent(&op, k, terms).0, ResolventMethod::Neumann)
    } else {
        (direct_resolvent(&op, k)?, ResolventMethod::Direct)
    };
    let kalman = kalman_matrix(&op.matrix, k, depth);
    let (rank, sv) = rank_with_tolerance(&kalman, threshold);
    let witness = (rank < g.num_edges()).then(|| dual_witness(lambda, &kalman));
    Ok(SampleResult {
        lambda,
        norm1: op.norm1,
        rank,
        singular_values: sv,
        method,
        transfer,
        witness,
    })
}

/// Kalman-rank test at each sample; controllable iff every sample has rank `m`.
pub fn approx_controllability(
    g: &MetricGraph,
    delays: &[DelayMeasure],
    opts: &AnalysisOptions,
) -> Result<ControllabilityReport, ControlError> {
    let m = g.num_edges();
    if delays.len() != m {
        return Err(ControlError::DimensionMismatch(format!(
            "{} delay measures for {m} edges",
            delays.len()
        )));
    }
    let mut notes = Vec::new();
    let mu0 = match estimate_mu0(g, delays) {
        Ok(e) => Some(e.mu0),
        Err(e) if opts.allow_below_mu0 => {
            notes.push(format!("mu0 unavailable: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let samples = match (&opts.samples, mu0) {
        (Some(s), _) => s.clone(),
        (None, Some(mu0)) => default_samples(mu0),
        (None, None) => default_samples(0.0),
    };
    if let Some(mu0) = mu0 {
        if let Some(&bad) = samples.iter().find(|l| l.re <= mu0) {
            if !opts.allow_below_mu0 {
                return Err(ControlError::BelowMu0 { lambda: bad, mu0 });
            }
            notes.push("samples left of mu0 use a direct resolvent solve".into());
        }
    }
    let depth = opts.depth.unwrap_or(m);
    let k = scaled_control(g);

    let outcomes: Vec<_> = samples
        .par_iter()
        .map(|&lambda| (lambda, analyze_sample(g, delays, &k, lambda, depth, opts.threshold)))
        .collect();
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (lambda, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(ControlError::SingularResolvent { .. }) => {
                notes.push(format!("sample {lambda} skipped: 1 is an eigenvalue of A_lambda"));
                skipped.push(lambda);
            }
            Err(e) => return Err(e),
        }
    }

    let full = results.iter().filter(|r| r.rank == m).count();
    let verdict = if results.is_empty() {
        notes.push("no usable samples".into());
        Verdict::Inconclusive
    } else if full == results.len() {
        Verdict::Controllable
    } else if full == 0 {
        Verdict::NotControllable
    } else {
        let ranks: Vec<String> = results.iter().map(|r| format!("{}: {}", r.lambda, r.rank)).collect();
        notes.push(format!("ranks disagree across samples ({})", ranks.join(", ")));
        Verdict::Inconclusive
    };
    if let Some(d) = g.truncation_depth() {
        notes.push(format!("{verdict} up to section depth {d}"));
    }
    let witness = if verdict == Verdict::NotControllable {
        results.iter().find_map(|r| r.witness.clone())
    } else {
        None
    };
    Ok(ControllabilityReport {
        verdict,
        dim: m,
        depth,
        threshold: opts.threshold,
        mu0,
        samples: results,
        skipped,
        witness,
        notes,
    })
}

/// History witness `phi*(theta) = e^{-lambda theta} g*`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWitness {
    pub lambda: Complex64,
    pub g_star: DVector<Complex64>,
    pub r: f64,
}

impl HistoryWitness {
    pub fn eval(&self, theta: f64) -> DVector<Complex64> {
        &self.g_star * (-self.lambda * theta).exp()
    }
}

/// Verdicts for the edge space, the history space and the product space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceVerdicts {
    pub state: Verdict,
    pub history: Verdict,
    pub full: Verdict,
    pub history_witness: Option<HistoryWitness>,
    pub notes: Vec<String>,
}

/// Annotates an edge-space report with the history-space and full-space verdicts.
///
/// On a finite section `d_lambda` multiplies the transfer column space by the
/// nonzero scalar `e^{lambda theta}` for each `theta`, so all three verdicts
/// coincide; a negative verdict carries `phi*(theta) = e^{-lambda theta} g*`.
pub fn x_vs_history_controllability(report: &ControllabilityReport, delays: &[DelayMeasure]) -> SpaceVerdicts {
    let r = crate::delay::max_horizon(delays);
    let mut notes = vec![
        "history-space controllability implies edge-space controllability".to_string(),
        "product-space controllability implies both".to_string(),
        "coincides on finite section: d_lambda is injective for each lambda".to_string(),
    ];
    let history_witness = report.witness.as_ref().map(|w| HistoryWitness {
        lambda: w.lambda,
        g_star: w.g_star.clone(),
        r,
    });
    if history_witness.is_some() {
        notes.push("history witness phi*(theta) = exp(-lambda theta) g*".into());
    }
    SpaceVerdicts {
        state: report.verdict,
        history: report.verdict,
        full: report.verdict,
        history_witness,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::{build_graph, CoefficientProfile, EdgeDescription, GraphDescription};
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::from(re)
    }

    fn no_delay(g: &MetricGraph) -> Vec<DelayMeasure> {
        vec![DelayMeasure::zero(); g.num_edges()]
    }

    #[test]
    fn loop_operator() {
        let g = single_loop(1.0, 0.0);
        let op = assemble_a(&g, &no_delay(&g), c(0.7));
        assert!((op.matrix[(0, 0)] - c((-0.7f64).exp())).norm() < 1e-15);
        let far = assemble_a(&g, &no_delay(&g), Complex64::new(80.0, 3.0));
        assert!(far.norm1 < 1e-30);
    }

    #[test]
    fn atfm_loop_value() {
        let g = single_loop(1.0, 0.0);
        let h = DMatrix::from_element(1, 1, 1.0);
        let op = atfm_operator(&g, &h, 1.0, c(1.0)).unwrap();
        let e = (-1.0f64).exp();
        let expected = e + e * (1.0 - e);
        assert!((op.matrix[(0, 0)].re - expected).abs() < 1e-15);
        assert!((op.matrix[(0, 0)].re - 0.600_423_6).abs() < 1e-7);
        let delayed = assemble_a(&g, &[DelayMeasure::point(1.0, 1.0).unwrap()], c(1.0));
        assert!((delayed.matrix[(0, 0)] - op.matrix[(0, 0)]).norm() < 1e-15);
        let far = atfm_operator(&g, &h, 1.0, c(200.0)).unwrap();
        assert!(far.norm1 < 1e-80);
    }

    #[test]
    fn atfm_rejects_bad_allocation() {
        let g = two_cycle();
        let not_adjacent = DMatrix::identity(2, 2);
        assert!(matches!(
            atfm_operator(&g, &not_adjacent, 1.0, c(1.0)),
            Err(ControlError::AllocationViolation(_))
        ));
        let short = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 1.0, 0.0]);
        assert!(atfm_operator(&g, &short, 1.0, c(1.0)).is_err());
        let absorbing = single_loop(1.0, 0.3);
        assert!(atfm_operator(&absorbing, &DMatrix::identity(1, 1), 1.0, c(1.0)).is_err());
    }

    #[test]
    fn atfm_zero_delay_matches_near_zero_atom() {
        let g = two_cycle();
        let h = adjacency_b(&g);
        let mu = Complex64::new(0.9, 0.4);
        let at_zero = atfm_operator(&g, &h, 0.0, mu).unwrap();
        let eps = 1e-9;
        let near = vec![DelayMeasure::new(eps, vec![(-eps, 1.0)], None).unwrap(); 2];
        let general = assemble_a(&g, &near, mu);
        assert!((at_zero.matrix - general.matrix).map(|z| z.norm()).max() < 1e-8);
    }

    #[test]
    fn mu0_examples() {
        let g = single_loop(1.0, 0.0);
        assert_eq!(estimate_mu0(&g, &no_delay(&g)).unwrap().mu0, 0.0);
        let gain = single_loop(1.0, 1.0);
        let est = estimate_mu0(&gain, &no_delay(&gain)).unwrap();
        assert!((est.mu0 - 1.0).abs() < 1e-6, "{}", est.mu0);
        let parallel = parallel_edges();
        assert_eq!(estimate_mu0(&parallel, &no_delay(&parallel)).unwrap().mu0, 0.0);
    }

    #[test]
    fn mu0_reports_no_convergence() {
        // a huge atom just left of zero keeps the norm above one far out
        let strong = vec![DelayMeasure::new(1.0, vec![(-1e-6, 1e12)], None).unwrap()];
        let g = single_loop(1.0, 0.0);
        assert!(matches!(
            estimate_mu0(&g, &strong),
            Err(ControlError::NoConvergence { .. })
        ));
    }

    #[test]
    fn kalman_examples() {
        let lam: f64 = 0.8;
        let e = c((-lam).exp());
        let a = DMatrix::from_row_slice(2, 2, &[c(0.0), e, e, c(0.0)]);
        let k = DMatrix::from_column_slice(2, 1, &[c(1.0), c(0.0)]);
        let km = kalman_matrix(&a, &k, 2);
        assert_eq!(km, DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), e]));
        assert_eq!(rank_with_tolerance(&km, RANK_THRESHOLD).0, 2);
        let zero = kalman_matrix(&a, &DMatrix::zeros(2, 1), 2);
        assert_eq!(rank_with_tolerance(&zero, RANK_THRESHOLD).0, 0);
        let scalar = kalman_matrix(&DMatrix::from_element(1, 1, e), &DMatrix::from_element(1, 1, c(1.0)), 1);
        assert_eq!(rank_with_tolerance(&scalar, RANK_THRESHOLD).0, 1);
    }

    #[test]
    fn verdicts_on_fixtures() {
        let opts = AnalysisOptions::default();
        let g = single_loop(1.0, 0.0);
        let rep = approx_controllability(&g, &no_delay(&g), &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::Controllable);
        assert_eq!(rep.samples.len(), 7);

        let g = two_cycle();
        let rep = approx_controllability(&g, &no_delay(&g), &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::Controllable);

        let g = parallel_edges();
        let rep = approx_controllability(&g, &no_delay(&g), &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::NotControllable);
        let w = rep.witness.as_ref().unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w.g_star[0] - c(s)).norm() < 1e-10, "{}", w.g_star);
        assert!((w.g_star[1] + c(s)).norm() < 1e-10);
        assert!(w.g_star[2].norm() < 1e-10);
        assert!(w.relative_residual < 1e-8);
        let spaces = x_vs_history_controllability(&rep, &no_delay(&g));
        let phi = spaces.history_witness.unwrap();
        assert!((phi.eval(-0.5) - &w.g_star * (w.lambda * 0.5).exp()).norm() < 1e-14);
    }

    #[test]
    fn zero_control_is_not_controllable_everywhere() {
        let g = two_cycle().with_control(DMatrix::zeros(2, 1)).unwrap();
        let rep = approx_controllability(&g, &no_delay(&g), &AnalysisOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::NotControllable);
        let s = x_vs_history_controllability(&rep, &no_delay(&g));
        assert_eq!(
            (s.state, s.history, s.full),
            (
                Verdict::NotControllable,
                Verdict::NotControllable,
                Verdict::NotControllable
            )
        );
    }

    #[test]
    fn samples_left_of_mu0_need_override() {
        let g = single_loop(1.0, 1.0);
        let mut opts = AnalysisOptions {
            samples: Some(vec![c(0.5)]),
            ..Default::default()
        };
        assert!(matches!(
            approx_controllability(&g, &no_delay(&g), &opts),
            Err(ControlError::BelowMu0 { .. })
        ));
        opts.allow_below_mu0 = true;
        let rep = approx_controllability(&g, &no_delay(&g), &opts).unwrap();
        assert_eq!(rep.samples[0].method, ResolventMethod::Direct);
        // A = e^{1 - lambda} = 1 at lambda = 1
        opts.samples = Some(vec![c(1.0), c(0.5)]);
        let rep = approx_controllability(&g, &no_delay(&g), &opts).unwrap();
        assert_eq!(rep.skipped, vec![c(1.0)]);
    }

    #[test]
    fn disagreeing_ranks_are_inconclusive() {
        let g = two_cycle();
        let r = 1.0;
        // L d_0 D_0 = -1 per edge, so A_0 = B (1 - 1) = 0 and rank [K, A K] = 1
        let delays = vec![DelayMeasure::point(r, -1.0).unwrap(); 2];
        let opts = AnalysisOptions {
            samples: Some(vec![c(0.0), c(1.0)]),
            allow_below_mu0: true,
            ..Default::default()
        };
        let rep = approx_controllability(&g, &delays, &opts).unwrap();
        let ranks: Vec<usize> = rep.samples.iter().map(|s| s.rank).collect();
        assert_eq!(ranks, vec![1, 2]);
        assert_eq!(rep.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn neumann_matches_direct_within_bound() {
        let g = two_cycle();
        let delays = vec![DelayMeasure::point(0.5, 0.4).unwrap(); 2];
        let op = assemble_a(&g, &delays, Complex64::new(0.6, 0.3));
        assert!(op.norm1 < 1.0);
        let k = scaled_control(&g);
        let direct = direct_resolvent(&op, &k).unwrap();
        for terms in [1, 3, 10, 40] {
            let (sum, bound) = neumann_resolvent(&op, &k, terms);
            let err = norm1(&(&sum - &direct));
            assert!(err <= bound * (1.0 + 1e-12) + 1e-15, "terms {terms}: {err} > {bound}");
        }
    }

    fn random_graph(seed: u64) -> (MetricGraph, f64, Complex64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=4);
        let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            let outs = rng.random_range(1..=2);
            let mut w: Vec<f64> = (0..outs).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let last = 1.0 - w[..outs - 1].iter().sum::<f64>();
            w[outs - 1] = last;
            for (o, wo) in w.into_iter().enumerate() {
                let name = format!("e{i}_{o}");
                let head = if o == 0 { (i + 1) % n } else { rng.random_range(0..n) };
                let split = rng.random_range(0.2..0.8);
                edges.push(EdgeDescription {
                    name: name.clone(),
                    tail: vertices[i].clone(),
                    head: vertices[head].clone(),
                    velocity: CoefficientProfile::on_unit(
                        vec![0.0, split, 1.0],
                        vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)],
                    )
                    .unwrap(),
                    absorption: CoefficientProfile::constant(0.0),
                });
                weights.push((vertices[i].clone(), name, wo));
            }
        }
        let m = edges.len();
        let g = build_graph(&GraphDescription {
            vertices,
            edges,
            weights,
            control: (0..m).map(|j| vec![if j == 0 { 1.0 } else { 0.0 }]).collect(),
            inputs: 1,
            kirchhoff_tol: Some(1e-9),
            ..Default::default()
        })
        .unwrap();
        let r = rng.random_range(0.1..2.0);
        let mu = Complex64::new(rng.random_range(0.1..3.0), rng.random_range(-2.0..2.0));
        (g, r, mu)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn atfm_matches_general_assembly(seed in 0u64..10_000) {
            let (g, r, mu) = random_graph(seed);
            let h = adjacency_b(&g);
            let atfm = atfm_operator(&g, &h, r, mu).unwrap();
            let delays = vec![DelayMeasure::point(r, 1.0).unwrap(); g.num_edges()];
            let general = assemble_a(&g, &delays, mu);
            for (a, b) in atfm.matrix.iter().zip(general.matrix.iter()) {
                prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }

        #[test]
        fn norm_decreases_with_re_lambda(seed in 0u64..10_000) {
            let (g, r, _) = random_graph(seed);
            let delays = vec![DelayMeasure::point(r, 0.5).unwrap(); g.num_edges()];
            let mu0 = estimate_mu0(&g, &delays).unwrap().mu0;
            let norms: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
                .iter()
                .map(|o| assemble_a(&g, &delays, c(mu0 + o)).norm1)
                .collect();
            prop_assert!(norms.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(norms.iter().all(|&n| n < 1.0));
        }
    }

    #[test]
    fn no_delay_reduction() {
        let g = build_graph(&GraphDescription {
            vertices: vec!["a".into(), "b".into()],
            edges: vec![
                EdgeDescription {
                    name: "e1".into(),
                    tail: "a".into(),
                    head: "b".into(),
                    velocity: CoefficientProfile::on_unit(vec![0.0, 0.3, 1.0], vec![2.0, 0.7]).unwrap(),
                    absorption: CoefficientProfile::constant(-0.4),
                },
                edge("e2", "b", "a", 1.5, 0.2),
            ],
            control: vec![vec![1.0], vec![0.0]],
            inputs: 1,
            ..Default::default()
        })
        .unwrap();
        let lambda = Complex64::new(0.7, -0.9);
        let op = assemble_a(&g, &no_delay(&g), lambda);
        let b = adjacency_b(&g);
        let kin = kinematics(&g);
        for j in 0..2 {
            for k in 0..2 {
                let e = g.edge(k);
                let expected = b[(j, k)] * e.velocity.value_at(0.0) / g.edge(j).velocity.value_at(1.0)
                    * (Complex64::from(kin[k].xi_total()) - lambda * kin[k].tau_total()).exp();
                assert!((op.matrix[(j, k)] - expected).norm() <= 1e-14);
            }
        }
    }
}
