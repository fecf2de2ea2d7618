//! Seeded graph matching: align the hidden nodes of an inferred graph with
//! those of a reference graph while observed (seed) nodes stay fixed.
//!
//! The trace objective `J(P) = Tr(A^T (I + P) B (I + P)^T)` (with `I + P` the
//! block-diagonal of the seed identity and the hidden permutation) is relaxed
//! to doubly stochastic `P` and maximised by Frank-Wolfe, then projected back
//! onto permutations.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GinError, Result};
use crate::graph::NodePartition;

/// Two graphs over the same nodes. `hidden` lists the node ids allowed to
/// move; every other node is a seed.
#[derive(Debug, Clone)]
pub struct MatchProblem {
    a: Array2<f64>,
    b: Array2<f64>,
    seeds: Vec<usize>,
    hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Hidden node ids in the order the permutation refers to.
    pub hidden: Vec<usize>,
    /// `permutation[i] = k`: reference hidden node `hidden[i]` corresponds to
    /// inferred hidden node `hidden[k]`.
    pub permutation: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relaxed objective after each Frank-Wolfe iteration, starting value first.
    pub trace: Vec<f64>,
}

impl MatchResult {
    pub fn identity(hidden: Vec<usize>, objective: f64) -> Self {
        MatchResult {
            permutation: (0..hidden.len()).collect(),
            hidden,
            objective,
            iterations: 0,
            converged: true,
            trace: vec![objective],
        }
    }
}

impl MatchProblem {
    /// Seeds occupy the first `n_seeds` indices.
    pub fn new(a: Array2<f64>, b: Array2<f64>, n_seeds: usize) -> Result<Self> {
        let n = a.nrows();
        if n_seeds > n {
            return Err(GinError::Parameter(format!("{n_seeds} seeds for {n} nodes")));
        }
        Self::with_hidden(a, b, (0..n_seeds).collect(), (n_seeds..n).collect())
    }

    /// Hidden nodes taken from a partition, in partition order.
    pub fn from_partition(a: Array2<f64>, b: Array2<f64>, p: &NodePartition) -> Result<Self> {
        if a.nrows() != p.n() {
            return Err(GinError::shape("match", a.shape(), &[p.n(), p.n()]));
        }
        Self::with_hidden(a, b, p.observed().to_vec(), p.hidden().to_vec())
    }

    fn with_hidden(a: Array2<f64>, b: Array2<f64>, seeds: Vec<usize>, hidden: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.dim() != (n, n) {
            return Err(GinError::shape("match", a.shape(), b.shape()));
        }
        Ok(MatchProblem { a, b, seeds, hidden })
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden.len()
    }

    fn block(m: &Array2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[[rows[i], cols[j]]])
    }
}

/// Blocks of the two matrices, seeds `o` and hidden `h`.
struct Blocks {
    seed_term: f64,
    a_oh: Array2<f64>,
    b_oh: Array2<f64>,
    a_ho: Array2<f64>,
    b_ho: Array2<f64>,
    a_hh: Array2<f64>,
    b_hh: Array2<f64>,
}

impl Blocks {
    fn new(pr: &MatchProblem) -> Self {
        let (o, h) = (&pr.seeds, &pr.hidden);
        let blk = MatchProblem::block;
        let a_oo = blk(&pr.a, o, o);
        let b_oo = blk(&pr.b, o, o);
        Blocks {
            seed_term: (&a_oo * &b_oo).sum(),
            a_oh: blk(&pr.a, o, h),
            b_oh: blk(&pr.b, o, h),
            a_ho: blk(&pr.a, h, o),
            b_ho: blk(&pr.b, h, o),
            a_hh: blk(&pr.a, h, h),
            b_hh: blk(&pr.b, h, h),
        }
    }

    /// Part of the gradient that does not depend on `P`.
    fn linear(&self) -> Array2<f64> {
        self.a_oh.t().dot(&self.b_oh) + self.a_ho.dot(&self.b_ho.t())
    }

    fn value(&self, p: ArrayView2<'_, f64>, linear: &Array2<f64>) -> f64 {
        let quad = &self.a_hh * &p.dot(&self.b_hh).dot(&p.t());
        self.seed_term + (linear * &p).sum() + quad.sum()
    }

    fn gradient(&self, p: ArrayView2<'_, f64>, linear: &Array2<f64>) -> Array2<f64> {
        linear + &self.a_hh.dot(&p).dot(&self.b_hh.t()) + self.a_hh.t().dot(&p).dot(&self.b_hh)
    }
}

/// `Tr(A^T (I + P) B (I + P)^T)` for a hidden-block matrix `P`.
pub fn objective(problem: &MatchProblem, p: &Array2<f64>) -> Result<f64> {
    let nu = problem.n_hidden();
    if p.dim() != (nu, nu) {
        return Err(GinError::shape("objective", p.shape(), &[nu, nu]));
    }
    let blocks = Blocks::new(problem);
    Ok(blocks.value(p.view(), &blocks.linear()))
}

pub fn permutation_matrix(perm: &[usize]) -> Array2<f64> {
    let n = perm.len();
    let mut m = Array2::zeros((n, n));
    for (i, &k) in perm.iter().enumerate() {
        m[[i, k]] = 1.0;
    }
    m
}

/// Minimum-cost perfect assignment of a square cost matrix: `result[row] = col`.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_row = vec![0usize; n + 1];
    for row in 1..=n {
        col_row[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if col_row[j] > 0 {
            assign[col_row[j] - 1] = j - 1;
        }
    }
    assign
}

fn maximise_assignment(score: &Array2<f64>) -> Vec<usize> {
    hungarian(&score.mapv(|v| -v))
}

fn frank_wolfe(blocks: &Blocks, linear: &Array2<f64>, start: Array2<f64>, max_iters: usize, tol: f64) -> (Array2<f64>, Vec<f64>, usize, bool) {
    let mut p = start;
    let mut value = blocks.value(p.view(), linear);
    let mut trace = vec![value];
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let grad = blocks.gradient(p.view(), linear);
        let q = permutation_matrix(&maximise_assignment(&grad));
        let d = &q - &p;
        let slope = (&grad * &d).sum();
        let curvature = (&blocks.a_hh * &d.dot(&blocks.b_hh).dot(&d.t())).sum();
        let step = if curvature < 0.0 {
            (-slope / (2.0 * curvature)).clamp(0.0, 1.0)
        } else if slope + curvature > 0.0 {
            1.0
        } else {
            0.0
        };
        let next = &p + &(&d * step);
        let next_value = blocks.value(next.view(), linear);
        let gain = next_value - value;
        if next_value >= value {
            p = next;
            value = next_value;
        }
        trace.push(value);
        if gain.max(0.0) <= tol * value.abs().max(1e-12) {
            converged = true;
            break;
        }
    }
    (p, trace, iters, converged)
}

/// Frank-Wolfe from the flat doubly stochastic matrix.
pub fn match_graphs(problem: &MatchProblem, max_iters: usize, tol: f64) -> Result<MatchResult> {
    match_with_restarts(problem, max_iters, tol, 1, 0)
}

/// Runs `restarts` Frank-Wolfe passes (the first from the flat matrix, the
/// rest from random perturbations of it) and keeps the best permutation.
pub fn match_with_restarts(
    problem: &MatchProblem,
    max_iters: usize,
    tol: f64,
    restarts: usize,
    seed: u64,
) -> Result<MatchResult> {
    let nu = problem.n_hidden();
    let blocks = Blocks::new(problem);
    let linear = blocks.linear();
    if nu == 0 {
        let j = blocks.seed_term;
        return Ok(MatchResult::identity(Vec::new(), j));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = Array2::from_elem((nu, nu), 1.0 / nu as f64);
    let mut best: Option<MatchResult> = None;
    for r in 0..restarts.max(1) {
        let start = if r == 0 {
            flat.clone()
        } else {
            let mut perm: Vec<usize> = (0..nu).collect();
            perm.shuffle(&mut rng);
            (&flat + &permutation_matrix(&perm)) / 2.0
        };
        let (p, trace, iterations, converged) = frank_wolfe(&blocks, &linear, start, max_iters, tol);
        let permutation = maximise_assignment(&p);
        let objective = blocks.value(permutation_matrix(&permutation).view(), &linear);
        let result = MatchResult {
            hidden: problem.hidden.clone(),
            permutation,
            objective,
            iterations,
            converged,
            trace,
        };
        if best.as_ref().is_none_or(|b| result.objective > b.objective) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Reorders hidden rows and columns of `b` so that reference hidden node
/// `hidden[i]` sees inferred node `hidden[permutation[i]]`.
pub fn apply_match(b: &Array2<f64>, result: &MatchResult) -> Result<Array2<f64>> {
    let n = b.nrows();
    if b.ncols() != n || result.hidden.iter().any(|&h| h >= n) || result.permutation.len() != result.hidden.len() {
        return Err(GinError::shape("apply_match", b.shape(), &[result.hidden.len()]));
    }
    let mut source: Vec<usize> = (0..n).collect();
    for (i, &k) in result.permutation.iter().enumerate() {
        source[result.hidden[i]] = result.hidden[k];
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| b[[source[i], source[j]]]))
}

/// Reorders per-hidden-node rows (e.g. recovered initial states) the same way.
pub fn apply_match_rows(rows: &Array2<f64>, result: &MatchResult) -> Result<Array2<f64>> {
    if rows.nrows() != result.permutation.len() {
        return Err(GinError::shape("apply_match_rows", rows.shape(), &[result.permutation.len()]));
    }
    let mut out = rows.clone();
    for (i, &k) in result.permutation.iter().enumerate() {
        out.slice_mut(s![i, ..]).assign(&rows.row(k));
    }
    Ok(out)
}

/// Squared Frobenius distance between `A` and the matched `B`.
pub fn matched_distance(problem: &MatchProblem, perm: &[usize]) -> Result<f64> {
    let result = MatchResult {
        hidden: problem.hidden.clone(),
        permutation: perm.to_vec(),
        objective: 0.0,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    };
    let moved = apply_match(&problem.b, &result)?;
    Ok((&problem.a - &moved).mapv(|v| v * v).sum())
}
