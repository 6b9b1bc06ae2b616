//! Structural controllability: zero/nonzero patterns, generic rank and the
//! form-(t) zero-block certificate.
//!
//! Generic rank is the size of a maximum matching in the bipartite row/column
//! graph of nonzero cells. Fixed nonzero cells count as edges; this is exact as
//! long as the fixed cells form a partial permutation (at most one per row and
//! column), which holds for the extended controllability matrix.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{rank_from_singular_values, real_singular_values, RANK_THRESHOLD};

/// Default Monte-Carlo trial count.
pub const DEFAULT_TRIALS: usize = 200;
/// Samples closer to zero than this are redrawn.
const MIN_MAGNITUDE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructuralError {
    #[error("dimension error: {0}")]
    DimensionError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pattern line {line}, column {column}: unexpected {token:?}")]
    Parse { line: usize, column: usize, token: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Zero,
    Free,
    Fixed(f64),
}

impl Cell {
    pub fn is_nonzero(self) -> bool {
        match self {
            Cell::Zero => false,
            Cell::Free => true,
            Cell::Fixed(v) => v != 0.0,
        }
    }
}

/// Matrix known only through its zero/free/fixed pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl StructuredMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![Cell::Zero; rows * cols],
        }
    }

    /// Free entries at the given `(row, col)` positions.
    pub fn from_free(rows: usize, cols: usize, positions: &[(usize, usize)]) -> Self {
        let mut s = Self::zeros(rows, cols);
        for &(i, j) in positions {
            s.set(i, j, Cell::Free);
        }
        s
    }

    pub fn identity(n: usize) -> Self {
        let mut s = Self::zeros(n, n);
        for i in 0..n {
            s.set(i, i, Cell::Fixed(1.0));
        }
        s
    }

    /// Parses a grid of `x` (free), `0` (zero) and `1` (fixed one) tokens.
    ///
    /// Tokens may be separated by whitespace or written contiguously. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Self, StructuralError> {
        let mut rows: Vec<Vec<Cell>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut row = Vec::new();
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    'x' | 'X' => row.push(Cell::Free),
                    '0' => row.push(Cell::Zero),
                    '1' => row.push(Cell::Fixed(1.0)),
                    c if c.is_whitespace() || c == ',' => {}
                    c => {
                        return Err(StructuralError::Parse {
                            line: ln + 1,
                            column: col + 1,
                            token: c.to_string(),
                        })
                    }
                }
            }
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(StructuralError::Parse {
                        line: ln + 1,
                        column: 1,
                        token: format!("row of length {} (expected {})", row.len(), first.len()),
                    });
                }
            }
            rows.push(row);
        }
        let n = rows.len();
        let s = rows.first().map_or(0, Vec::len);
        Ok(Self {
            rows: n,
            cols: s,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| match self.get(i, j) {
                    Cell::Zero => "0".to_string(),
                    Cell::Free => "x".to_string(),
                    Cell::Fixed(1.0) => "1".to_string(),
                    Cell::Fixed(v) => format!("{v}"),
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, c: Cell) {
        assert!(i < self.rows && j < self.cols, "cell ({i}, {j}) out of bounds");
        self.cells[i * self.cols + j] = c;
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, Cell::Free)).count()
    }

    /// True when no row or column holds two fixed nonzero cells.
    pub fn fixed_is_partial_permutation(&self) -> bool {
        let fixed = |c: Cell| matches!(c, Cell::Fixed(v) if v != 0.0);
        (0..self.rows).all(|i| (0..self.cols).filter(|&j| fixed(self.get(i, j))).count() <= 1)
            && (0..self.cols).all(|j| (0..self.rows).filter(|&i| fixed(self.get(i, j))).count() <= 1)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.rows)
            .map(|i| (0..self.cols).filter(|&j| self.get(i, j).is_nonzero()).collect())
            .collect()
    }

    /// Numeric realization with free cells drawn uniformly from
    /// `(-1, -1e-3] U [1e-3, 1)`.
    pub fn sample(&self, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| match self.get(i, j) {
            Cell::Zero => 0.0,
            Cell::Fixed(v) => v,
            Cell::Free => loop {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v.abs() >= MIN_MAGNITUDE {
                    break v;
                }
            },
        })
    }
}

impl fmt::Display for StructuredMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Maximum bipartite matching by Hopcroft-Karp; `row_match[i]` is the column matched to row `i`.
struct Matching {
    row_match: Vec<Option<usize>>,
    col_match: Vec<Option<usize>>,
    size: usize,
}

fn hopcroft_karp(adj: &[Vec<usize>], cols: usize) -> Matching {
    let rows = adj.len();
    let mut row_match = vec![None; rows];
    let mut col_match: Vec<Option<usize>> = vec![None; cols];
    let mut size = 0;
    loop {
        // layered BFS from free rows
        let mut dist = vec![usize::MAX; rows];
        let mut queue = VecDeque::new();
        for i in 0..rows {
            if row_match[i].is_none() {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        let mut found = false;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                match col_match[j] {
                    None => found = true,
                    Some(i2) if dist[i2] == usize::MAX => {
                        dist[i2] = dist[i] + 1;
                        queue.push_back(i2);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            break;
        }
        fn augment(
            i: usize,
            adj: &[Vec<usize>],
            dist: &mut [usize],
            row_match: &mut [Option<usize>],
            col_match: &mut [Option<usize>],
        ) -> bool {
            for &j in &adj[i] {
                let ok = match col_match[j] {
                    None => true,
                    Some(i2) => dist[i2] == dist[i] + 1 && augment(i2, adj, dist, row_match, col_match),
                };
                if ok {
                    row_match[i] = Some(j);
                    col_match[j] = Some(i);
                    return true;
                }
            }
            dist[i] = usize::MAX;
            false
        }
        for i in 0..rows {
            if row_match[i].is_none() && augment(i, adj, &mut dist, &mut row_match, &mut col_match) {
                size += 1;
            }
        }
    }
    Matching {
        row_match,
        col_match,
        size,
    }
}

/// Minimum vertex cover from a maximum matching (Konig): rows not reachable
/// from free rows by alternating paths, and columns that are reachable.
fn konig_cover(adj: &[Vec<usize>], cols: usize, mt: &Matching) -> (Vec<bool>, Vec<bool>) {
    let rows = adj.len();
    let mut row_seen = vec![false; rows];
    let mut col_seen = vec![false; cols];
    let mut queue: VecDeque<usize> = (0..rows).filter(|&i| mt.row_match[i].is_none()).collect();
    for &i in &queue {
        row_seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if mt.row_match[i] != Some(j) && !col_seen[j] {
                col_seen[j] = true;
                if let Some(i2) = mt.col_match[j] {
                    if !row_seen[i2] {
                        row_seen[i2] = true;
                        queue.push_back(i2);
                    }
                }
            }
        }
    }
    let row_cover = row_seen.iter().map(|s| !s).collect();
    (row_cover, col_seen)
}

/// Rank attained for almost every choice of the free entries.
pub fn generic_rank(s: &StructuredMatrix) -> usize {
    hopcroft_karp(&s.adjacency(), s.cols).size
}

/// Zero block `rows x cols` certifying form (t), with `k = cols.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormWitness {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub k: usize,
}

/// Whether the `n x s` pattern (`s >= n`) contains a zero block of order
/// `(n + s - t - k + 1) x k` for some `s - t < k <= s`.
///
/// Such a block exists iff the generic rank is below `t`. The witness is built
/// from a minimum vertex cover and keeps every uncovered column, so `k` is as
/// large as that cover allows.
pub fn has_form_t(s: &StructuredMatrix, t: usize) -> Result<(bool, Option<FormWitness>), StructuralError> {
    let (n, cols) = (s.rows, s.cols);
    if cols < n {
        return Err(StructuralError::DimensionError(format!(
            "form (t) needs at least as many columns as rows, got {n} x {cols}"
        )));
    }
    if t == 0 || t > n {
        return Err(StructuralError::DimensionError(format!("t = {t} outside 1..={n}")));
    }
    let adj = s.adjacency();
    let mt = hopcroft_karp(&adj, cols);
    if mt.size >= t {
        return Ok((false, None));
    }
    let (row_cover, col_cover) = konig_cover(&adj, cols, &mt);
    let zero_rows: Vec<usize> = (0..n).filter(|&i| !row_cover[i]).collect();
    let zero_cols: Vec<usize> = (0..cols).filter(|&j| !col_cover[j]).collect();
    let k = zero_cols.len();
    let p = n + cols + 1 - t - k;
    debug_assert!(k + t > cols && p >= 1 && p <= zero_rows.len());
    Ok((
        true,
        Some(FormWitness {
            rows: zero_rows[..p].to_vec(),
            cols: zero_cols,
            k,
        }),
    ))
}

/// Outcome of comparing the form-(t) test with random substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheck {
    pub form: bool,
    /// Every sampled rank was below `t`.
    pub all_below: bool,
    pub max_sampled_rank: usize,
    pub consistent: bool,
}

/// Substitutes random values into the free cells `trials` times and checks
/// that (rank < t on every trial) agrees with `has_form_t`.
pub fn lemma_consistency(
    s: &StructuredMatrix,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<LemmaCheck, StructuralError> {
    let (form, _) = has_form_t(s, t)?;
    let max_sampled_rank = sampled_ranks(s, trials, seed).into_iter().max().unwrap_or(0);
    let all_below = max_sampled_rank < t;
    Ok(LemmaCheck {
        form,
        all_below,
        max_sampled_rank,
        consistent: form == all_below,
    })
}

/// Numeric ranks of `trials` independent realizations; trial `i` uses stream `i` of `seed`.
pub fn sampled_ranks(s: &StructuredMatrix, trials: usize, seed: u64) -> Vec<usize> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let sv = real_singular_values(&s.sample(&mut rng));
            rank_from_singular_values(&sv, RANK_THRESHOLD)
        })
        .collect()
}

/// The extended controllability matrix and its block bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedControllabilityMatrix {
    pub matrix: StructuredMatrix,
    /// Number of states `m`.
    pub states: usize,
    /// Number of inputs `N`.
    pub inputs: usize,
    /// Starting column of each block column; even blocks hold `K`, odd ones `I` / `-A`.
    pub block_starts: Vec<usize>,
}

impl ExtendedControllabilityMatrix {
    /// Full row rank `m^2`, equivalent to Kalman rank `m`.
    pub fn target_rank(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Assembles `m` block rows: `[K, I, 0, ...]`, then `[.., -A, K, I, ..]` shifted
/// two block columns per row, the last row ending in `[-A, K]`.
pub fn build_extended_matrix(
    a: &StructuredMatrix,
    k: &StructuredMatrix,
) -> Result<ExtendedControllabilityMatrix, StructuralError> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(StructuralError::DimensionMismatch(format!(
            "A pattern is {} x {}",
            a.nrows(),
            a.ncols()
        )));
    }
    if k.nrows() != m {
        return Err(StructuralError::DimensionMismatch(format!(
            "K pattern has {} rows, A has {m}",
            k.nrows()
        )));
    }
    let n_in = k.ncols();
    let mut block_starts = Vec::with_capacity(2 * m - 1);
    let mut col = 0;
    for b in 0..2 * m - 1 {
        block_starts.push(col);
        col += if b % 2 == 0 { n_in } else { m };
    }
    let mut e = StructuredMatrix::zeros(m * m, col);
    let place = |e: &mut StructuredMatrix, block_row: usize, start: usize, src: &StructuredMatrix, negate: bool| {
        for i in 0..src.nrows() {
            for j in 0..src.ncols() {
                let c = match src.get(i, j) {
                    Cell::Fixed(v) if negate => Cell::Fixed(-v),
                    other => other,
                };
                e.set(block_row * m + i, start + j, c);
            }
        }
    };
    let identity = StructuredMatrix::identity(m);
    for row in 0..m {
        if row > 0 {
            place(&mut e, row, block_starts[2 * row - 1], a, true);
        }
        place(&mut e, row, block_starts[2 * row], k, false);
        if row + 1 < m {
            place(&mut e, row, block_starts[2 * row + 1], &identity, false);
        }
    }
    Ok(ExtendedControllabilityMatrix {
        matrix: e,
        states: m,
        inputs: n_in,
        block_starts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub controllable: bool,
    pub generic_rank: usize,
    pub target: usize,
    pub witness: Option<FormWitness>,
    /// Largest Kalman rank over random realizations of `(A, K)`.
    pub monte_carlo_rank: usize,
    pub trials: usize,
    /// Monte-Carlo verdict matches the form test.
    pub agrees: bool,
}

/// Structural controllability of the pattern pair: the extended matrix must
/// not be of form (m^2). Cross-checked by random Kalman ranks.
pub fn structural_controllability(
    a: &StructuredMatrix,
    k: &StructuredMatrix,
    trials: usize,
    seed: u64,
) -> Result<StructuralReport, StructuralError> {
    let ext = build_extended_matrix(a, k)?;
    let target = ext.target_rank();
    let (form, witness) = has_form_t(&ext.matrix, target)?;
    let m = a.nrows();
    let monte_carlo_rank = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let an = a.sample(&mut rng);
            let kn = k.sample(&mut rng);
            let mut kalman = DMatrix::zeros(m, m * kn.ncols());
            let mut block = kn.clone();
            for d in 0..m {
                kalman.view_mut((0, d * kn.ncols()), kn.shape()).copy_from(&block);
                block = &an * block;
            }
            rank_from_singular_values(&real_singular_values(&kalman), RANK_THRESHOLD)
        })
        .max()
        .unwrap_or(0);
    let controllable = !form;
    Ok(StructuralReport {
        controllable,
        generic_rank: generic_rank(&ext.matrix),
        target,
        witness,
        monte_carlo_rank,
        trials,
        agrees: controllable == (monte_carlo_rank == m),
    })
}

#[cfg(test)]
pub(crate) mod examples {
    use super::StructuredMatrix;

    pub const Q0: &str = "0 0 0 0 0\n0 0 0 0 0\nx x x x x\nx x x x x\nx x x x x\n";
    pub const Q1: &str = "x 0 0 0 0\nx 0 0 0 0\nx 0 0 0 0\nx x x x x\nx x x x x\n";

    pub fn q0() -> StructuredMatrix {
        StructuredMatrix::from_text(Q0).unwrap()
    }

    pub fn q1() -> StructuredMatrix {
        StructuredMatrix::from_text(Q1).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::examples::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// `n + s - max_C (|C| + zero_rows(C))` over all column subsets.
    fn brute_generic_rank(s: &StructuredMatrix) -> usize {
        let (n, c) = (s.nrows(), s.ncols());
        let best = (0u32..1 << c)
            .map(|mask| {
                let zr = (0..n)
                    .filter(|&i| (0..c).all(|j| mask & (1 << j) == 0 || !s.get(i, j).is_nonzero()))
                    .count();
                mask.count_ones() as usize + zr
            })
            .max()
            .unwrap();
        n + c - best
    }

    /// Direct search for a zero block of order `(n + s - t - k + 1) x k`.
    fn brute_form(s: &StructuredMatrix, t: usize) -> bool {
        let (n, c) = (s.nrows(), s.ncols());
        (0u32..1 << c).any(|mask| {
            let k = mask.count_ones() as usize;
            if k + t <= c || k == 0 {
                return false;
            }
            let zr = (0..n)
                .filter(|&i| (0..c).all(|j| mask & (1 << j) == 0 || !s.get(i, j).is_nonzero()))
                .count();
            zr + k > n + c - t
        })
    }

    #[test]
    fn example_ranks() {
        assert_eq!(generic_rank(&q0()), 3);
        assert_eq!(generic_rank(&q1()), 3);
        assert_eq!(generic_rank(&StructuredMatrix::identity(4)), 4);
    }

    #[test]
    fn example_forms() {
        let (f0, w0) = has_form_t(&q0(), 4).unwrap();
        assert!(f0);
        let w0 = w0.unwrap();
        assert_eq!(w0.k, 5);
        assert_eq!(w0.rows, vec![0, 1]);
        let (f1, w1) = has_form_t(&q1(), 4).unwrap();
        assert!(f1);
        let w1 = w1.unwrap();
        assert_eq!(w1.k, 4);
        assert_eq!(w1.rows, vec![0, 1, 2]);
        assert_eq!(w1.cols, vec![1, 2, 3, 4]);
        let full = StructuredMatrix::from_free(3, 4, &(0..12).map(|p| (p / 4, p % 4)).collect::<Vec<_>>());
        for t in 1..=3 {
            assert!(!has_form_t(&full, t).unwrap().0);
        }
        assert!(matches!(
            has_form_t(&StructuredMatrix::zeros(3, 2), 1),
            Err(StructuralError::DimensionError(_))
        ));
    }

    #[test]
    fn consistency_examples() {
        let c = lemma_consistency(&q0(), 4, 100, 7).unwrap();
        assert!(c.form && c.all_below && c.consistent);
        assert_eq!(c.max_sampled_rank, 3);
        let c = lemma_consistency(&StructuredMatrix::identity(3), 3, 20, 7).unwrap();
        assert!(!c.form && !c.all_below && c.consistent);
        let mut freed = q1();
        freed.set(0, 1, Cell::Free);
        assert_eq!(generic_rank(&freed), 4);
        let c = lemma_consistency(&freed, 4, 100, 7).unwrap();
        assert!(!c.form && c.consistent);
    }

    #[test]
    fn text_round_trip() {
        let s = StructuredMatrix::from_text("x0 1\n0x0\n").unwrap();
        assert_eq!(s.get(0, 2), Cell::Fixed(1.0));
        assert_eq!(StructuredMatrix::from_text(&s.to_text()).unwrap(), s);
        let err = StructuredMatrix::from_text("x 0\nx y\n").unwrap_err();
        assert_eq!(
            err,
            StructuralError::Parse {
                line: 2,
                column: 3,
                token: "y".into()
            }
        );
    }

    #[test]
    fn extended_layout() {
        let a = StructuredMatrix::from_free(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let k = StructuredMatrix::from_free(2, 1, &[(0, 0)]);
        let e = build_extended_matrix(&a, &k).unwrap();
        assert_eq!(e.block_starts, vec![0, 1, 3]);
        let expected = "x 1 0 0\n0 0 1 0\n0 x x x\n0 x x 0\n";
        assert_eq!(e.matrix.to_text().replace("-1", "1"), expected);
        assert_eq!(e.matrix.get(2, 1), Cell::Free);

        let one = build_extended_matrix(
            &StructuredMatrix::from_free(1, 1, &[(0, 0)]),
            &StructuredMatrix::from_free(1, 1, &[(0, 0)]),
        )
        .unwrap();
        assert_eq!(one.matrix.to_text(), "x\n");
        assert!(e.matrix.fixed_is_partial_permutation());
    }

    #[test]
    fn structural_examples() {
        let x = StructuredMatrix::from_free(1, 1, &[(0, 0)]);
        assert!(
            structural_controllability(&StructuredMatrix::zeros(1, 1), &x, 50, 1)
                .unwrap()
                .controllable
        );

        let m = 4;
        let chain = StructuredMatrix::from_free(m, m, &(1..m).map(|i| (i, i - 1)).collect::<Vec<_>>());
        let head = StructuredMatrix::from_free(m, 1, &[(0, 0)]);
        let rep = structural_controllability(&chain, &head, 50, 1).unwrap();
        assert!(rep.controllable && rep.agrees);
        assert_eq!(rep.monte_carlo_rank, m);

        // state 2 neither driven nor coupled
        let mut a = StructuredMatrix::from_free(3, 3, &[(1, 0), (0, 1)]);
        a.set(2, 2, Cell::Zero);
        let k = StructuredMatrix::from_free(3, 1, &[(0, 0)]);
        let rep = structural_controllability(&a, &k, 50, 1).unwrap();
        assert!(!rep.controllable && rep.agrees);
        let w = rep.witness.unwrap();
        let cols = build_extended_matrix(&a, &k).unwrap().matrix.ncols();
        assert_eq!(w.rows.len() + w.k, rep.target + cols - rep.target + 1);

        let zero_k = StructuredMatrix::zeros(3, 1);
        let full = StructuredMatrix::from_free(3, 3, &(0..9).map(|p| (p / 3, p % 3)).collect::<Vec<_>>());
        let rep = structural_controllability(&full, &zero_k, 20, 1).unwrap();
        assert!(!rep.controllable);
        assert!(rep.generic_rank < rep.target);
    }

    fn pattern_strategy() -> impl Strategy<Value = StructuredMatrix> {
        (
            1usize..=6,
            0usize..=5,
            proptest::collection::vec(0.0..1.0f64, 36),
            0.2..0.8f64,
        )
            .prop_map(|(n, extra, draws, density)| {
                let s = (n + extra).min(6);
                let mut p = StructuredMatrix::zeros(n, s);
                for i in 0..n {
                    for j in 0..s {
                        if draws[i * 6 + j] < density {
                            p.set(i, j, Cell::Free);
                        }
                    }
                }
                p
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]
        #[test]
        fn matching_matches_brute_force(s in pattern_strategy()) {
            prop_assert_eq!(generic_rank(&s), brute_generic_rank(&s));
            for t in 1..=s.nrows() {
                let (form, w) = has_form_t(&s, t).unwrap();
                prop_assert_eq!(form, brute_form(&s, t));
                if let Some(w) = w {
                    prop_assert!(w.rows.iter().all(|&i| w.cols.iter().all(|&j| !s.get(i, j).is_nonzero())));
                    prop_assert_eq!(w.rows.len() + w.k, s.nrows() + s.ncols() - t + 1);
                    prop_assert!(w.k + t > s.ncols());
                }
            }
        }

        #[test]
        fn sampled_rank_equals_generic(s in pattern_strategy(), seed in 0u64..1000) {
            let max = sampled_ranks(&s, 200, seed).into_iter().max().unwrap();
            prop_assert_eq!(max, generic_rank(&s));
        }

        #[test]
        fn form_is_monotone_in_t(s in pattern_strategy()) {
            // a form-(t) certificate persists for every larger t
            let forms: Vec<bool> = (1..=s.nrows()).map(|t| has_form_t(&s, t).unwrap().0).collect();
            prop_assert!(forms.windows(2).all(|w| !w[0] || w[1]));
        }

        #[test]
        fn extended_rank_matches_kalman(seed in 0u64..500, m in 1usize..=4, density in 0.2..0.7f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = StructuredMatrix::zeros(m, m);
            let mut k = StructuredMatrix::zeros(m, 1);
            for i in 0..m {
                for j in 0..m {
                    if rng.random_bool(density) { a.set(i, j, Cell::Free); }
                }
                if rng.random_bool(density / 2.0) { k.set(i, 0, Cell::Free); }
            }
            let rep = structural_controllability(&a, &k, 60, seed).unwrap();
            prop_assert!(rep.agrees, "{a}\n{k}\n{rep:?}");
        }
    }
}
