//! Bundled acceptance suite.
//!
//! Each criterion loads its fixtures by name, so a corrupted fixture fails the
//! criteria that use it and names them in the table.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::Instant;

use graphflow::control::{
    approx_controllability, assemble_a, atfm_operator, estimate_mu0, inflow_transfer, kalman_matrix, scaled_control,
    x_vs_history_controllability, AnalysisOptions, Verdict,
};
use graphflow::delay::DelayMeasure;
use graphflow::graph::{adjacency_b, CoefficientProfile, EdgeDescription};
use graphflow::linalg::{rank_from_singular_values, real_singular_values, singular_values, RANK_THRESHOLD};
use graphflow::solver::{laplace_of_trace, reachability_gramian, solve, Control, Scenario, TraceKind};
use graphflow::structural::{generic_rank, has_form_t, lemma_consistency, sampled_ranks, Cell, StructuredMatrix};
use graphflow::transport::{kinematics, semigroup_apply, EdgeProfiles};
use graphflow::{build_graph, GraphDescription, MetricGraph};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::format::{parse_graph_spec_str, parse_pattern_str, GraphSpec};

const BUNDLED: &[(&str, &str)] = &[
    ("loop.graph", include_str!("../../../fixtures/loop.graph")),
    ("loop_gain.graph", include_str!("../../../fixtures/loop_gain.graph")),
    ("two_cycle.graph", include_str!("../../../fixtures/two_cycle.graph")),
    ("branching.graph", include_str!("../../../fixtures/branching.graph")),
    (
        "atfm_junction.graph",
        include_str!("../../../fixtures/atfm_junction.graph"),
    ),
    ("path_delay.graph", include_str!("../../../fixtures/path_delay.graph")),
    ("parallel.graph", include_str!("../../../fixtures/parallel.graph")),
    ("closed.graph", include_str!("../../../fixtures/closed.graph")),
    ("q0.pattern", include_str!("../../../fixtures/q0.pattern")),
    ("q1.pattern", include_str!("../../../fixtures/q1.pattern")),
];

/// Fixtures used by the Laplace comparison.
const LAPLACE_GRAPHS: [&str; 6] = [
    "loop",
    "loop_gain",
    "two_cycle",
    "branching",
    "atfm_junction",
    "path_delay",
];
const ALL_GRAPHS: [&str; 8] = [
    "loop",
    "loop_gain",
    "two_cycle",
    "branching",
    "atfm_junction",
    "path_delay",
    "parallel",
    "closed",
];

/// Fixture texts by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    files: BTreeMap<String, String>,
}

impl Fixtures {
    pub fn embedded() -> Self {
        Self {
            files: BUNDLED.iter().map(|(n, t)| (n.to_string(), t.to_string())).collect(),
        }
    }

    /// Reads every `*.graph` and `*.pattern` file in `dir`.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str());
            if matches!(ext, Some("graph" | "pattern")) {
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                files.insert(name, std::fs::read_to_string(&path)?);
            }
        }
        Ok(Self { files })
    }

    fn text(&self, file: &str) -> Result<&str, String> {
        self.files
            .get(file)
            .map(String::as_str)
            .ok_or_else(|| format!("fixture {file} missing"))
    }

    pub fn graph(&self, name: &str) -> Result<GraphSpec, String> {
        let file = format!("{name}.graph");
        parse_graph_spec_str(self.text(&file)?, &file).map_err(|e| e.to_string())
    }

    pub fn pattern(&self, name: &str) -> Result<StructuredMatrix, String> {
        let file = format!("{name}.pattern");
        parse_pattern_str(self.text(&file)?, &file).map_err(|e| e.to_string())
    }
}

type Check = fn(&Fixtures) -> Result<String, String>;

pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub keywords: &'static [&'static str],
    check: Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: 1,
            name: "laplace-oracle",
            keywords: &["laplace", "transfer", "simulation"],
            check: laplace_oracle,
        },
        Criterion {
            id: 2,
            name: "nilpotent-semigroup",
            keywords: &["semigroup", "nilpotency", "transport"],
            check: nilpotent_semigroup,
        },
        Criterion {
            id: 3,
            name: "assembly-cross-check",
            keywords: &["assembly", "atfm", "operator"],
            check: assembly_cross_check,
        },
        Criterion {
            id: 4,
            name: "kalman-vs-simulation",
            keywords: &["kalman", "gramian", "controllability"],
            check: kalman_vs_simulation,
        },
        Criterion {
            id: 5,
            name: "form-detection",
            keywords: &["structural", "form", "pattern", "rank"],
            check: form_detection,
        },
        Criterion {
            id: 6,
            name: "mu0-behavior",
            keywords: &["mu0", "norm", "abscissa"],
            check: mu0_behavior,
        },
        Criterion {
            id: 7,
            name: "mass-conservation",
            keywords: &["mass", "conservation", "kirchhoff"],
            check: mass_conservation,
        },
        Criterion {
            id: 8,
            name: "witness-construction",
            keywords: &["witness", "dual", "history"],
            check: witness_construction,
        },
    ]
}

impl Criterion {
    pub fn matches(&self, filter: &str) -> bool {
        let f = filter.to_ascii_lowercase();
        f == self.id.to_string() || self.name.contains(&f) || self.keywords.iter().any(|k| k.contains(&f))
    }

    pub fn run(&self, fixtures: &Fixtures) -> CriterionResult {
        let start = Instant::now();
        let outcome =
            std::panic::catch_unwind(|| (self.check)(fixtures)).unwrap_or_else(|_| Err("panicked".to_string()));
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        CriterionResult {
            id: self.id,
            name: self.name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

pub fn run_selftest(fixtures: &Fixtures, filter: Option<&str>) -> Vec<CriterionResult> {
    criteria()
        .iter()
        .filter(|c| filter.is_none_or(|f| c.matches(f)))
        .map(|c| c.run(fixtures))
        .collect()
}

pub fn format_table(results: &[CriterionResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{} [{}] {:<22} {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.seconds,
            r.detail
        ));
    }
    let passed = results.iter().filter(|r| r.passed).count();
    s.push_str(&format!("{passed}/{} criteria passed\n", results.len()));
    s
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Growth rate of the exponential probe control.
const PROBE_RATE: f64 = -0.25;
const LAPLACE_TOL: f64 = 5e-3;
const TAIL_TOL: f64 = 1e-4;
const LAPLACE_HORIZON: f64 = 24.0;

fn laplace_oracle(fx: &Fixtures) -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for name in LAPLACE_GRAPHS {
        let spec = fx.graph(name)?;
        let (g, delays) = (&spec.graph, &spec.delays);
        let mu0 = estimate_mu0(g, delays).map_err(|e| format!("{name}: {e}"))?.mu0;
        let amplitudes: Vec<f64> = (0..g.num_inputs()).map(|i| 1.0 - 0.4 * i as f64).collect();
        let mut sc = Scenario::new(g.clone(), delays.clone());
        sc.control = Control::Exponential {
            rate: PROBE_RATE,
            amplitudes: amplitudes.clone(),
        };
        sc.horizon = LAPLACE_HORIZON;
        let start = Instant::now();
        let rec = solve(&sc).map_err(|e| format!("{name}: {e}"))?;
        let secs = start.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        ensure(secs < 10.0, || format!("{name}: run took {secs:.1}s"))?;
        for offset in [Complex64::from(0.5), Complex64::new(1.0, 1.5), Complex64::from(2.0)] {
            let lambda = mu0.max(PROBE_RATE) + offset;
            let est =
                laplace_of_trace(&rec, lambda, TraceKind::Inflow, TAIL_TOL).map_err(|e| format!("{name}: {e}"))?;
            let u_hat = DVector::from_iterator(
                amplitudes.len(),
                amplitudes.iter().map(|&a| Complex64::from(a) / (lambda - PROBE_RATE)),
            );
            let exact = inflow_transfer(g, delays, lambda, &u_hat).map_err(|e| format!("{name}: {e}"))?;
            let err = (&est.values - &exact).norm() / exact.norm();
            worst = worst.max(err);
            ensure(err <= LAPLACE_TOL, || {
                format!("{name} at lambda = {lambda}: relative error {err:.3e} > {LAPLACE_TOL:e}")
            })?;
        }
    }
    Ok(format!(
        "{} graphs x 3 samples, max relative error {worst:.2e} <= {LAPLACE_TOL:e}, slowest run {slowest:.2}s",
        LAPLACE_GRAPHS.len()
    ))
}

fn random_profile(rng: &mut ChaCha8Rng, edges: usize, nx: usize) -> impl Fn(usize, f64) -> f64 {
    let coef: Vec<[f64; 4]> = (0..edges)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..6.3),
            ]
        })
        .collect();
    let _ = nx;
    move |j, x| {
        let [a, b, f, p] = coef[j];
        a + b * (f * x + p).sin()
    }
}

/// Largest deviation between a fine-grid profile and its linear interpolant on `nx` nodes.
fn interpolation_error(fine: &EdgeProfiles, nx: usize) -> f64 {
    let coarse = EdgeProfiles::from_fn(fine.num_edges(), nx, |j, x| fine.eval(j, x));
    let mut worst = 0.0f64;
    for j in 0..fine.num_edges() {
        for i in 0..fine.nx() {
            worst = worst.max((coarse.eval(j, fine.x(i)) - fine.edge(j)[i]).abs());
        }
    }
    worst
}

const COMPOSITION_DRAWS: usize = 100;
const FINE_NX: usize = 4097;

fn nilpotent_semigroup(fx: &Fixtures) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let graphs: Vec<(String, MetricGraph)> = ALL_GRAPHS
        .iter()
        .map(|n| fx.graph(n).map(|s| (n.to_string(), s.graph)))
        .collect::<Result<_, _>>()?;
    let nx = graphflow::transport::DEFAULT_NX;
    for (name, g) in &graphs {
        let kin = kinematics(g);
        let f = random_profile(&mut rng, g.num_edges(), nx);
        let init = EdgeProfiles::from_fn(g.num_edges(), nx, |j, x| 1.0 + f(j, x).abs());
        let t = g.max_transit_time() * (1.0 + 1e-9);
        let after = semigroup_apply(&kin, &init, t);
        ensure(after.max_abs() == 0.0, || {
            format!(
                "{name}: |T(t) g| = {:e} after the longest transit time",
                after.max_abs()
            )
        })?;
    }
    let mut worst_ratio = 0.0f64;
    for draw in 0..COMPOSITION_DRAWS {
        let (name, g) = &graphs[draw % graphs.len()];
        let kin = kinematics(g);
        let m = g.num_edges();
        let f = random_profile(&mut rng, m, nx);
        let tmax = g.max_transit_time();
        let s = rng.random_range(0.0..tmax);
        let t = rng.random_range(0.0..tmax);
        let coarse = EdgeProfiles::from_fn(m, nx, &f);
        let lhs = semigroup_apply(&kin, &semigroup_apply(&kin, &coarse, t), s);
        let rhs = semigroup_apply(&kin, &coarse, s + t);
        let gap = lhs.l1_distance(&rhs).max(max_gap(&lhs, &rhs));
        let fine = EdgeProfiles::from_fn(m, FINE_NX, &f);
        let interp = [
            interpolation_error(&fine, nx),
            interpolation_error(&semigroup_apply(&kin, &fine, t), nx),
            interpolation_error(&semigroup_apply(&kin, &fine, s + t), nx),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let bound = 2.0 * interp + 1e-12;
        worst_ratio = worst_ratio.max(gap / bound);
        ensure(gap <= bound, || {
            format!("{name} draw {draw} (s = {s:.3}, t = {t:.3}): gap {gap:.3e} > 2 x interpolation error {interp:.3e}")
        })?;
    }
    Ok(format!(
        "zero after max transit on {} graphs; composition gap at most {:.2} of 2 x interpolation error over {COMPOSITION_DRAWS} draws",
        graphs.len(),
        worst_ratio
    ))
}

fn max_gap(a: &EdgeProfiles, b: &EdgeProfiles) -> f64 {
    (0..a.num_edges())
        .flat_map(|j| a.edge(j).iter().zip(b.edge(j)).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Connected random graph: a ring through all vertices plus chords, random
/// Kirchhoff weights, piecewise velocities.
fn random_graph(rng: &mut ChaCha8Rng, absorption: bool) -> MetricGraph {
    let n = rng.random_range(1..=4usize);
    let extra = rng.random_range(0..=3usize);
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    let mut add = |rng: &mut ChaCha8Rng, tail: usize, head: usize| {
        let pieces = rng.random_range(1..=3usize);
        let mut bp = vec![0.0];
        for p in 1..pieces {
            bp.push(p as f64 / pieces as f64 + rng.random_range(-0.1..0.1) / pieces as f64);
        }
        bp.push(1.0);
        let vals: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.5..2.5)).collect();
        let q = if absorption { rng.random_range(-0.5..0.5) } else { 0.0 };
        edges.push(EdgeDescription {
            name: format!("e{}", edges.len()),
            tail: vertices[tail].clone(),
            head: vertices[head].clone(),
            velocity: CoefficientProfile::on_unit(bp, vals).unwrap(),
            absorption: CoefficientProfile::constant(q),
        });
    };
    for i in 0..n {
        add(rng, i, (i + 1) % n);
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        add(rng, a, b);
    }
    let mut weights = Vec::new();
    for v in &vertices {
        let out: Vec<&EdgeDescription> = edges.iter().filter(|e| &e.tail == v).collect();
        let raw: Vec<f64> = out.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (e, w) in out.iter().zip(&raw) {
            weights.push((v.clone(), e.name.clone(), w / total));
        }
    }
    let m = edges.len();
    build_graph(&GraphDescription {
        vertices,
        control: (0..m).map(|j| vec![if j == 0 { 1.0 } else { 0.0 }]).collect(),
        edges,
        weights,
        inputs: 1,
        kirchhoff_tol: Some(1e-9),
        ..Default::default()
    })
    .expect("random graph is valid")
}

const ASSEMBLY_GRAPHS: usize = 20;

fn assembly_cross_check(_fx: &Fixtures) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_atfm = 0.0f64;
    let mut worst_free = 0.0f64;
    for i in 0..ASSEMBLY_GRAPHS {
        let g = random_graph(&mut rng, false);
        let r = rng.random_range(0.2..1.5);
        let mu = Complex64::new(rng.random_range(0.1..3.0), rng.random_range(-3.0..3.0));
        let atfm = atfm_operator(&g, &adjacency_b(&g), r, mu).map_err(|e| format!("graph {i}: {e}"))?;
        let delays = vec![DelayMeasure::point(r, 1.0).unwrap(); g.num_edges()];
        let general = assemble_a(&g, &delays, mu);
        let d = (&atfm.matrix - &general.matrix).map(|z| z.norm()).max();
        worst_atfm = worst_atfm.max(d);
        ensure(d <= 1e-12, || {
            format!("graph {i}: ATFM and general assembly differ by {d:e}")
        })?;

        // delay-free: c(1)^-1 B c(0) diag(exp(xi_j - lambda tau_j)) from the raw coefficients
        let g = random_graph(&mut rng, true);
        let m = g.num_edges();
        let lambda = Complex64::new(rng.random_range(0.1..3.0), rng.random_range(-3.0..3.0));
        let b = adjacency_b(&g);
        let direct = DMatrix::from_fn(m, m, |j, k| {
            let e = g.edge(k);
            let (tau, xi) = e
                .velocity
                .pieces()
                .map(|(a, bb, c)| ((bb - a) / c, (bb - a) * e.absorption.value_at(0.5 * (a + bb)) / c))
                .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            b[(j, k)] / g.edge(j).velocity.value_at(1.0) * e.velocity.value_at(0.0) * (xi - lambda * tau).exp()
        });
        let free = assemble_a(&g, &vec![DelayMeasure::zero(); m], lambda);
        let d = (0..m * m)
            .map(|p| {
                let (j, k) = (p / m, p % m);
                (free.matrix[(j, k)] - direct[(j, k)]).norm() / direct[(j, k)].norm().max(1.0)
            })
            .fold(0.0, f64::max);
        worst_free = worst_free.max(d);
        ensure(d <= 1e-14, || {
            format!("graph {i}: delay-free operator differs by {d:e}")
        })?;
    }
    Ok(format!(
        "{ASSEMBLY_GRAPHS} random graphs: ATFM vs general assembly max {worst_atfm:.1e} <= 1e-12, delay-free max {worst_free:.1e} <= 1e-14"
    ))
}

const GRAMIAN_PROBES: usize = 10;

fn gramian_rank(spec: &GraphSpec) -> Result<usize, String> {
    let sc = Scenario::new(spec.graph.clone(), spec.delays.clone());
    let probes: Vec<Control> = (0..GRAMIAN_PROBES)
        .map(|p| Control::Pulse {
            channel: p % spec.graph.num_inputs(),
            start: 0.2 * p as f64,
            end: 0.2 * p as f64 + 0.15,
            amplitude: 1.0,
        })
        .collect();
    let gram = reachability_gramian(&sc, 3.0, &probes).map_err(|e| e.to_string())?;
    Ok(rank_from_singular_values(
        &real_singular_values(&gram.edge),
        RANK_THRESHOLD,
    ))
}

fn kalman_vs_simulation(fx: &Fixtures) -> Result<String, String> {
    let par = fx.graph("parallel")?;
    let rep =
        approx_controllability(&par.graph, &par.delays, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
    ensure(rep.verdict == Verdict::NotControllable, || {
        format!("parallel edges reported {}", rep.verdict)
    })?;
    let w = rep.witness.as_ref().ok_or("parallel edges: no dual witness")?;
    let (a, b) = (par.graph.edge_index("a").unwrap(), par.graph.edge_index("b").unwrap());
    let g = &w.g_star;
    let others = (0..g.len())
        .filter(|&i| i != a && i != b)
        .map(|i| g[i].norm())
        .fold(0.0, f64::max);
    ensure(
        (g[a] + g[b]).norm() <= 1e-8 && g[a].norm() > 0.5 && others <= 1e-8,
        || format!("witness {:?} is not antisymmetric in the parallel pair", g.as_slice()),
    )?;
    let m = par.graph.num_edges();
    let rank_par = gramian_rank(&par)?;
    ensure(rank_par < m, || {
        format!("parallel edges: Gramian rank {rank_par} reaches {m}")
    })?;

    let cyc = fx.graph("two_cycle")?;
    let rep =
        approx_controllability(&cyc.graph, &cyc.delays, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
    ensure(rep.verdict == Verdict::Controllable, || {
        format!("two-cycle reported {}", rep.verdict)
    })?;
    let rank_cyc = gramian_rank(&cyc)?;
    ensure(rank_cyc == cyc.graph.num_edges(), || {
        format!("two-cycle: Gramian rank {rank_cyc} below {}", cyc.graph.num_edges())
    })?;
    Ok(format!(
        "parallel: not-controllable, antisymmetric witness, Gramian rank {rank_par} < {m}; two-cycle: controllable, Gramian rank {rank_cyc}"
    ))
}

/// Rank from the zero-block characterization: `n + s - max_C (|C| + zero_rows(C))`.
fn brute_rank(s: &StructuredMatrix) -> usize {
    let (n, c) = (s.nrows(), s.ncols());
    let best = (0u32..1 << c)
        .map(|mask| {
            let zr = (0..n)
                .filter(|&i| (0..c).all(|j| mask & (1 << j) == 0 || !s.get(i, j).is_nonzero()))
                .count();
            mask.count_ones() as usize + zr
        })
        .max()
        .unwrap_or(0);
    n + c - best
}

/// Direct search for a zero block of order `(n + s - t - k + 1) x k`, `s - t < k <= s`.
fn brute_form(s: &StructuredMatrix, t: usize) -> bool {
    let (n, c) = (s.nrows(), s.ncols());
    (1u32..1 << c).any(|mask| {
        let k = mask.count_ones() as usize;
        if k + t <= c {
            return false;
        }
        let zr = (0..n)
            .filter(|&i| (0..c).all(|j| mask & (1 << j) == 0 || !s.get(i, j).is_nonzero()))
            .count();
        zr + k > n + c - t
    })
}

const RANDOM_PATTERNS: usize = 50;
const PATTERN_TRIALS: usize = 200;

fn form_detection(fx: &Fixtures) -> Result<String, String> {
    let start = Instant::now();
    for (name, k_expected) in [("q0", 5), ("q1", 4)] {
        let q = fx.pattern(name)?;
        let rank = generic_rank(&q);
        ensure(rank == 3, || format!("{name}: generic rank {rank}, expected 3"))?;
        let (form, w) = has_form_t(&q, 4).map_err(|e| e.to_string())?;
        ensure(form, || format!("{name}: not of form (4)"))?;
        let k = w.map(|w| w.k).unwrap_or(0);
        ensure(k == k_expected, || {
            format!("{name}: witness k = {k}, expected {k_expected}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = 0;
    for p in 0..RANDOM_PATTERNS {
        let n = rng.random_range(1..=6usize);
        let s = rng.random_range(n..=6usize);
        let density = rng.random_range(0.15..0.8);
        let mut pat = StructuredMatrix::zeros(n, s);
        for i in 0..n {
            for j in 0..s {
                if rng.random_bool(density) {
                    pat.set(i, j, Cell::Free);
                }
            }
        }
        let matching = generic_rank(&pat);
        let brute = brute_rank(&pat);
        let sampled = sampled_ranks(&pat, PATTERN_TRIALS, p as u64)
            .into_iter()
            .max()
            .unwrap_or(0);
        ensure(matching == brute && brute == sampled, || {
            format!("pattern {p}: matching {matching}, enumeration {brute}, sampling {sampled}\n{pat}")
        })?;
        for t in 1..=n {
            let (form, _) = has_form_t(&pat, t).map_err(|e| e.to_string())?;
            let check = lemma_consistency(&pat, t, PATTERN_TRIALS, p as u64).map_err(|e| e.to_string())?;
            ensure(form == brute_form(&pat, t) && check.consistent, || {
                format!(
                    "pattern {p}, t = {t}: form {form}, enumeration {}, sampling consistent {}",
                    brute_form(&pat, t),
                    check.consistent
                )
            })?;
            checks += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("structural checks took {secs:.1}s"))?;
    Ok(format!(
        "Q0 form (4) k=5, Q1 form (4) k=4; {RANDOM_PATTERNS} random patterns, {checks} (pattern, t) pairs, 0 mismatches"
    ))
}

fn mu0_behavior(fx: &Fixtures) -> Result<String, String> {
    let mut count = 0;
    for name in ALL_GRAPHS {
        let spec = fx.graph(name)?;
        let est = estimate_mu0(&spec.graph, &spec.delays).map_err(|e| format!("{name}: {e}"))?;
        let norms: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|o| assemble_a(&spec.graph, &spec.delays, Complex64::from(est.mu0 + o)).norm1)
            .collect();
        ensure(
            norms.windows(2).all(|w| w[1] < w[0]) && norms.iter().all(|&n| n < 1.0),
            || format!("{name}: norms {norms:?} right of mu0 = {}", est.mu0),
        )?;
        count += 1;
    }
    let gain = fx.graph("loop_gain")?;
    let mu0 = estimate_mu0(&gain.graph, &gain.delays).map_err(|e| e.to_string())?.mu0;
    ensure((mu0 - 1.0).abs() <= 1e-6, || {
        format!("loop with q = c: mu0 = {mu0}, expected 1")
    })?;
    Ok(format!(
        "norm decreasing and < 1 on {count} graphs; q = c loop mu0 = {mu0:.9}"
    ))
}

/// Relative drift of the total mass over ten transit times.
fn mass_drift(spec: &GraphSpec, refine: usize) -> Result<f64, String> {
    let g = &spec.graph;
    let base = Scenario::new(g.clone(), spec.delays.clone());
    let nx = base.nx * refine;
    let mut sc = base.with_nx(nx);
    sc.dt /= refine as f64;
    sc.horizon = 10.0 * g.max_transit_time();
    // stationary vertex fluxes, modulated along each edge
    let b = adjacency_b(g);
    let m = g.num_edges();
    let mut flux = DVector::from_element(m, 1.0);
    for _ in 0..200 {
        flux = &b * &flux;
        flux /= flux.sum();
    }
    sc.initial = EdgeProfiles::from_fn(m, sc.nx, |j, x| {
        flux[j] * m as f64 / g.edge(j).velocity.value_at(x) * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin())
    });
    let rec = solve(&sc).map_err(|e| e.to_string())?;
    let m0 = rec.norms[0].mass;
    Ok(rec.norms.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max) / m0)
}

fn mass_conservation(fx: &Fixtures) -> Result<String, String> {
    let spec = fx.graph("closed")?;
    let g = &spec.graph;
    ensure(spec.delays.iter().all(DelayMeasure::is_zero), || {
        "closed fixture carries delays".into()
    })?;
    ensure(
        g.edges()
            .iter()
            .all(|e| e.absorption.is_zero() && e.velocity.values().len() == 1),
        || "closed fixture needs q = 0 and constant speeds".into(),
    )?;
    let b = adjacency_b(g);
    ensure(
        (0..g.num_edges()).all(|k| (b.column(k).sum() - 1.0).abs() < 1e-12),
        || "closed fixture loses flow at a vertex".into(),
    )?;
    let coarse = mass_drift(&spec, 1)?;
    ensure(coarse <= 1e-3, || {
        format!("drift {coarse:.3e} > 1e-3 at default resolution")
    })?;
    let fine = mass_drift(&spec, 4)?;
    ensure(fine <= 2.5e-4, || format!("drift {fine:.3e} > 2.5e-4 at 4x resolution"))?;
    Ok(format!("relative drift {coarse:.2e} (default), {fine:.2e} (4x)"))
}

fn witness_construction(fx: &Fixtures) -> Result<String, String> {
    let mut cases = Vec::new();
    for name in ALL_GRAPHS {
        let spec = fx.graph(name)?;
        let m = spec.graph.num_edges();
        let silent = spec
            .graph
            .with_control(DMatrix::zeros(m, spec.graph.num_inputs()))
            .map_err(|e| e.to_string())?;
        cases.push((name.to_string(), spec.graph.clone(), spec.delays.clone()));
        cases.push((format!("{name} without input"), silent, spec.delays));
    }
    let mut negatives = 0;
    let mut worst = 0.0f64;
    for (name, g, delays) in cases {
        let rep =
            approx_controllability(&g, &delays, &AnalysisOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        if rep.verdict != Verdict::NotControllable {
            continue;
        }
        negatives += 1;
        let w = rep
            .witness
            .as_ref()
            .ok_or_else(|| format!("{name}: negative verdict without witness"))?;
        let sample = rep
            .samples
            .iter()
            .find(|s| s.lambda == w.lambda)
            .ok_or_else(|| format!("{name}: witness sample missing"))?;
        // residual against a freshly assembled Kalman matrix
        let op = assemble_a(&g, &delays, w.lambda);
        let kalman = kalman_matrix(&op.matrix, &scaled_control(&g), rep.depth);
        let residual = (w.g_star.transpose() * &kalman).norm();
        let scale = w.g_star.norm() * singular_values(&kalman).first().copied().unwrap_or(0.0);
        ensure(residual <= 1e-8 * scale, || {
            format!(
                "{name}: |g* M| = {residual:e} exceeds 1e-8 |g*| |M| = {:e}",
                1e-8 * scale
            )
        })?;
        worst = worst.max(if scale > 0.0 { residual / scale } else { 0.0 });
        // phi*(theta) annihilates the history component exp(lambda theta) (I - A)^-1 K~ u
        let spaces = x_vs_history_controllability(&rep, &delays);
        let h = spaces
            .history_witness
            .ok_or_else(|| format!("{name}: no history witness"))?;
        let r = if h.r > 0.0 { h.r } else { 1.0 };
        for i in 0..=8 {
            let theta = -r * i as f64 / 8.0;
            let component = &sample.transfer * (w.lambda * theta).exp();
            let pairing = (h.eval(theta).transpose() * &component).norm();
            let bound = 1e-8 * h.eval(theta).norm() * component.norm();
            ensure(pairing <= bound.max(1e-300), || {
                format!("{name}: phi*({theta}) pairs to {pairing:e} with the history component")
            })?;
        }
    }
    ensure(negatives > 0, || "no negative verdict among the cases".into())?;
    Ok(format!(
        "{negatives} negative reports, each with g* (max relative residual {worst:.1e}) and phi*"
    ))
}
