//! Stacked weighted linear least squares, `min sum_b w_b ||A_b x - d_b||^2`.
//!
//! [`solve`] forms the sparse normal matrix `sum_b w_b A_b^T A_b`, reorders it
//! with reverse Cuthill-McKee and factors it with an envelope (skyline)
//! Cholesky. When a pivot shows heavy cancellation the factor is only used as
//! a warm start for CGLS on the whitened stacked system. [`dense_oracle_solve`]
//! is an independent check: it never forms the normal matrix and solves the
//! dense stacked system by Householder QR with column pivoting.

use crate::operators::SparseMatrix;
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;
use thiserror::Error;

/// Pivot-to-diagonal ratio at or below which the normal matrix is treated as
/// singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-14;
/// Pivot-to-diagonal ratio below which the factor is distrusted and CGLS takes
/// over.
pub const NEAR_SINGULAR_PIVOT_RATIO: f64 = 1e-10;
pub const CGLS_TOLERANCE: f64 = 1e-10;
pub const CONDITION_ITERATIONS: usize = 20;
/// Correction steps applied after the Cholesky solve.
pub const REFINEMENT_STEPS: usize = 2;
/// Largest problem the dense oracle accepts.
pub const DENSE_ORACLE_MAX_UNKNOWNS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no blocks or no rows to solve")]
    Empty,
    #[error("block `{block}`: {reason}")]
    Dimension { block: String, reason: String },
    #[error("block `{block}` has invalid weight {weight}")]
    InvalidWeight { block: String, weight: f64 },
    #[error("normal matrix is singular or indefinite (condition estimate {condition:e}, unknown {column})")]
    Singular { condition: f64, column: usize },
    #[error("CGLS stalled after {iterations} iterations at relative residual {relative_residual:e} (condition estimate {condition:e})")]
    NotConverged { iterations: usize, relative_residual: f64, condition: f64 },
    #[error("dense oracle limited to {limit} unknowns, got {got}")]
    TooLarge { got: usize, limit: usize },
    #[error("stacked matrix is rank deficient: rank {rank} of {n}")]
    RankDeficient { rank: usize, n: usize },
}

/// One weighted row block `w ||A x - d||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqBlock {
    pub name: String,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub weight: f64,
}

impl LsqBlock {
    pub fn new(name: impl Into<String>, matrix: SparseMatrix, rhs: Vec<f64>, weight: f64) -> Result<Self, SolveError> {
        let name = name.into();
        if rhs.len() != matrix.rows() {
            return Err(SolveError::Dimension {
                block: name,
                reason: format!("rhs length {} vs {} rows", rhs.len(), matrix.rows()),
            });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(SolveError::InvalidWeight { block: name, weight });
        }
        Ok(Self { name, matrix, rhs, weight })
    }

    /// Unweighted residual `A x - d`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.matrix.mul_vec(x);
        r.iter_mut().zip(&self.rhs).for_each(|(ri, di)| *ri -= di);
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Cholesky,
    Cgls,
    DenseQr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResidual {
    pub name: String,
    pub weight: f64,
    /// Unweighted `||A_b x - d_b||`.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub x: Vec<f64>,
    pub residuals: Vec<BlockResidual>,
    /// Estimate of the 2-norm condition number of the normal matrix.
    pub condition_estimate: f64,
    pub method: SolveMethod,
}

impl LsqSolution {
    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|r| r.name == name).map(|r| r.norm)
    }
}

fn check_blocks(blocks: &[LsqBlock], n: usize) -> Result<(), SolveError> {
    if blocks.is_empty() || n == 0 || blocks.iter().all(|b| b.matrix.rows() == 0) {
        return Err(SolveError::Empty);
    }
    for b in blocks {
        if b.matrix.cols() != n {
            return Err(SolveError::Dimension {
                block: b.name.clone(),
                reason: format!("{} columns, expected {n}", b.matrix.cols()),
            });
        }
        if b.rhs.len() != b.matrix.rows() {
            return Err(SolveError::Dimension {
                block: b.name.clone(),
                reason: format!("rhs length {} vs {} rows", b.rhs.len(), b.matrix.rows()),
            });
        }
        if !(b.weight > 0.0 && b.weight.is_finite()) {
            return Err(SolveError::InvalidWeight { block: b.name.clone(), weight: b.weight });
        }
    }
    Ok(())
}

fn residual_report(blocks: &[LsqBlock], x: &[f64]) -> Vec<BlockResidual> {
    blocks
        .iter()
        .map(|b| BlockResidual { name: b.name.clone(), weight: b.weight, norm: norm(&b.residual(x)) })
        .collect()
}

/// Gradient of the stacked objective, `2 sum_b w_b A_b^T (A_b x - d_b)`.
pub fn objective_gradient(blocks: &[LsqBlock], x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for b in blocks {
        let r = b.residual(x);
        for (gi, ti) in g.iter_mut().zip(b.matrix.tr_mul_vec(&r)) {
            *gi += 2.0 * b.weight * ti;
        }
    }
    g
}

/// Sparse solve of the stacked problem.
pub fn solve(blocks: &[LsqBlock], n_unknowns: usize) -> Result<LsqSolution, SolveError> {
    check_blocks(blocks, n_unknowns)?;
    let normal = NormalMatrix::assemble(blocks, n_unknowns);
    let rhs = normal_rhs(blocks, n_unknowns);
    let factor = EnvelopeCholesky::factor(&normal);

    match factor.status {
        FactorStatus::Singular { column } => {
            let lmax = normal.largest_eigenvalue();
            Err(SolveError::Singular { condition: lmax / factor.min_pivot.max(0.0), column })
        }
        FactorStatus::Ok => {
            let x = refine(blocks, &factor, factor.solve(&rhs));
            let condition = condition_from_factor(&normal, &factor);
            Ok(LsqSolution {
                residuals: residual_report(blocks, &x),
                x,
                condition_estimate: condition,
                method: SolveMethod::Cholesky,
            })
        }
        FactorStatus::NearSingular => {
            let x0 = factor.solve(&rhs);
            let condition = condition_from_factor(&normal, &factor);
            let x0 = if x0.iter().all(|v| v.is_finite()) { refine(blocks, &factor, x0) } else { vec![0.0; n_unknowns] };
            let (x, iterations, rel) = cgls(blocks, n_unknowns, x0, CGLS_TOLERANCE, 10 * n_unknowns);
            if rel > CGLS_TOLERANCE {
                return Err(SolveError::NotConverged { iterations, relative_residual: rel, condition });
            }
            Ok(LsqSolution {
                residuals: residual_report(blocks, &x),
                x,
                condition_estimate: condition,
                method: SolveMethod::Cgls,
            })
        }
    }
}

/// Corrected semi-normal equations: the gradient is recomputed from the
/// blocks rather than from the formed normal matrix, which recovers most of
/// the accuracy lost to squaring the condition number.
fn refine(blocks: &[LsqBlock], factor: &EnvelopeCholesky, mut x: Vec<f64>) -> Vec<f64> {
    for _ in 0..REFINEMENT_STEPS {
        let g: Vec<f64> = objective_gradient(blocks, &x).iter().map(|gi| -0.5 * gi).collect();
        let dx = factor.solve(&g);
        if !dx.iter().all(|v| v.is_finite()) {
            break;
        }
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    x
}

/// Condition estimate of the normal matrix without solving: `inf` when the
/// Cholesky factorization breaks down.
pub fn condition_estimate(blocks: &[LsqBlock], n_unknowns: usize) -> Result<f64, SolveError> {
    check_blocks(blocks, n_unknowns)?;
    let normal = NormalMatrix::assemble(blocks, n_unknowns);
    let factor = EnvelopeCholesky::factor(&normal);
    Ok(match factor.status {
        FactorStatus::Singular { .. } => f64::INFINITY,
        _ => condition_from_factor(&normal, &factor),
    })
}

fn condition_from_factor(normal: &NormalMatrix, factor: &EnvelopeCholesky) -> f64 {
    let lmax = normal.largest_eigenvalue();
    // Inverse iteration for the smallest eigenvalue.
    let n = normal.n;
    let mut v = start_vector(n);
    let mut mu = 0.0;
    for _ in 0..CONDITION_ITERATIONS {
        let w = factor.solve(&v);
        let nw = norm(&w);
        if !(nw > 0.0 && nw.is_finite()) {
            return f64::INFINITY;
        }
        mu = dot(&v, &w);
        v = w.into_iter().map(|x| x / nw).collect();
    }
    if mu > 0.0 {
        lmax * mu
    } else {
        f64::INFINITY
    }
}

fn start_vector(n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_75).fract()).collect();
    let nv = norm(&v);
    v.into_iter().map(|x| x / nv).collect()
}

fn normal_rhs(blocks: &[LsqBlock], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for b in blocks {
        for (o, t) in out.iter_mut().zip(b.matrix.tr_mul_vec(&b.rhs)) {
            *o += b.weight * t;
        }
    }
    out
}

/// Lower triangle (diagonal included) of `sum_b w_b A_b^T A_b`, row-compressed.
struct NormalMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl NormalMatrix {
    fn assemble(blocks: &[LsqBlock], n: usize) -> Self {
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        for b in blocks {
            for r in 0..b.matrix.rows() {
                let (cols, vals) = b.matrix.row(r);
                for (p, (&ci, &vi)) in cols.iter().zip(vals).enumerate() {
                    for (&cj, &vj) in cols[..=p].iter().zip(&vals[..=p]) {
                        trip.push((ci, cj, b.weight * vi * vj));
                    }
                }
            }
        }
        trip.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        let mut col = Vec::with_capacity(trip.len());
        let mut val: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, col, val }
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col[a..b], &self.val[a..b])
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    fn largest_eigenvalue(&self) -> f64 {
        let mut v = start_vector(self.n);
        let mut lambda = 0.0;
        for _ in 0..CONDITION_ITERATIONS {
            let w = self.mul_vec(&v);
            lambda = dot(&v, &w);
            let nw = norm(&w);
            if nw == 0.0 {
                return 0.0;
            }
            v = w.into_iter().map(|x| x / nw).collect();
        }
        lambda
    }

    /// Reverse Cuthill-McKee ordering; returns `order[new] = old`.
    fn rcm_order(&self) -> Vec<usize> {
        let n = self.n;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for &j in self.row(i).0 {
                if j != i {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        for a in adj.iter_mut() {
            a.sort_unstable_by_key(|&k| (degree[k], k));
        }
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for seed in 0..n {
            if visited[seed] {
                continue;
            }
            let root = pseudo_peripheral(&adj, seed);
            let mut queue = VecDeque::from([root]);
            visited[root] = true;
            while let Some(u) = queue.pop_front() {
                order.push(u);
                for &w in &adj[u] {
                    if !visited[w] {
                        visited[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        order.reverse();
        order
    }
}

/// Endpoint of a few rounds of "restart BFS from the farthest, lowest-degree node".
fn pseudo_peripheral(adj: &[Vec<usize>], start: usize) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adj, root);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        let far =
            (0..adj.len()).filter(|&k| levels[k] == Some(max_level)).min_by_key(|&k| (adj[k].len(), k)).unwrap_or(root);
        if max_level <= ecc {
            break;
        }
        ecc = max_level;
        root = far;
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &w in &adj[u] {
            if level[w].is_none() {
                level[w] = Some(lu + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FactorStatus {
    Ok,
    NearSingular,
    Singular { column: usize },
}

/// Envelope Cholesky `P N P^T = L L^T` in the RCM ordering.
struct EnvelopeCholesky {
    order: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    env: Vec<f64>,
    status: FactorStatus,
    min_pivot: f64,
}

impl EnvelopeCholesky {
    fn factor(normal: &NormalMatrix) -> Self {
        let n = normal.n;
        let order = normal.rcm_order();
        let mut inv = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for &j in normal.row(i).0 {
                let (a, b) = (inv[i].max(inv[j]), inv[i].min(inv[j]));
                first[a] = first[a].min(b);
            }
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut env = vec![0.0; start[n]];
        for i in 0..n {
            let (c, v) = normal.row(i);
            for (&j, &a) in c.iter().zip(v) {
                let (r, k) = (inv[i].max(inv[j]), inv[i].min(inv[j]));
                env[start[r] + k - first[r]] = a;
            }
        }

        let mut status = FactorStatus::Ok;
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let (head, tail) = env.split_at_mut(row_i);
                let lj = &head[start[j] + k0 - fj..start[j] + j - fj];
                let li = &tail[k0 - fi..j - fi];
                let s = dot(li, lj);
                let ljj = head[start[j] + j - fj];
                tail[j - fi] = (tail[j - fi] - s) / ljj;
            }
            let diag_idx = row_i + i - fi;
            let a_ii = env[diag_idx];
            let li = &env[row_i..diag_idx];
            let d = a_ii - dot(li, li);
            min_pivot = min_pivot.min(d);
            if !(a_ii > 0.0) || !(d > SINGULAR_PIVOT_RATIO * a_ii) {
                status = FactorStatus::Singular { column: order[i] };
                break;
            }
            if d < NEAR_SINGULAR_PIVOT_RATIO * a_ii {
                status = FactorStatus::NearSingular;
            }
            env[diag_idx] = d.sqrt();
        }
        Self { order, first, start, env, status, min_pivot }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order.len();
        let mut y: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.env[self.start[i]..self.start[i + 1]];
            let s = dot(&row[..i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.env[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (yk, lk) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= lk * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.order.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// CGLS on the whitened stacked system; returns the iterate, the iteration
/// count and the final `||A^T r|| / ||A^T b||`.
fn cgls(blocks: &[LsqBlock], n: usize, x0: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, usize, f64) {
    let sw: Vec<f64> = blocks.iter().map(|b| b.weight.sqrt()).collect();
    let apply = |x: &[f64]| -> Vec<Vec<f64>> {
        blocks.iter().zip(&sw).map(|(b, s)| b.matrix.mul_vec(x).into_iter().map(|v| v * s).collect()).collect()
    };
    let apply_t = |r: &[Vec<f64>]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for ((b, s), rb) in blocks.iter().zip(&sw).zip(r) {
            for (o, t) in out.iter_mut().zip(b.matrix.tr_mul_vec(rb)) {
                *o += s * t;
            }
        }
        out
    };
    let b: Vec<Vec<f64>> = blocks.iter().zip(&sw).map(|(b, s)| b.rhs.iter().map(|v| v * s).collect()).collect();
    let atb = norm(&apply_t(&b));
    if atb == 0.0 {
        return (vec![0.0; n], 0, 0.0);
    }
    let mut x = x0;
    let ax = apply(&x);
    let mut r: Vec<Vec<f64>> =
        b.iter().zip(&ax).map(|(bb, aa)| bb.iter().zip(aa).map(|(u, v)| u - v).collect()).collect();
    let mut s = apply_t(&r);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut rel = gamma.sqrt() / atb;
    let mut it = 0;
    while it < max_iter && rel > tol {
        let q = apply(&p);
        let qq: f64 = q.iter().map(|qb| dot(qb, qb)).sum();
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        for (rb, qb) in r.iter_mut().zip(&q) {
            rb.iter_mut().zip(qb).for_each(|(ri, qi)| *ri -= alpha * qi);
        }
        s = apply_t(&r);
        let gamma_new = dot(&s, &s);
        rel = gamma_new.sqrt() / atb;
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
        it += 1;
    }
    (x, it, rel)
}

/// Dense reference solve: materializes the whitened stacked matrix and solves
/// it by Householder QR with column-norm pivoting.
pub fn dense_oracle_solve(blocks: &[LsqBlock], n_unknowns: usize) -> Result<LsqSolution, SolveError> {
    if n_unknowns > DENSE_ORACLE_MAX_UNKNOWNS {
        return Err(SolveError::TooLarge { got: n_unknowns, limit: DENSE_ORACLE_MAX_UNKNOWNS });
    }
    check_blocks(blocks, n_unknowns)?;
    let m: usize = blocks.iter().map(|b| b.matrix.rows()).sum();
    let n = n_unknowns;
    if m < n {
        return Err(SolveError::RankDeficient { rank: m, n });
    }
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut offset = 0;
    for b in blocks {
        let s = b.weight.sqrt();
        for (r, c, v) in b.matrix.triplets() {
            a[(offset + r, c)] = s * v;
        }
        for (r, d) in b.rhs.iter().enumerate() {
            rhs[offset + r] = s * d;
        }
        offset += b.matrix.rows();
    }

    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag = vec![0.0_f64; n];
    let tol = (m.max(n) as f64) * f64::EPSILON;
    let col_sq = |a: &DMatrix<f64>, k: usize, j: usize| -> f64 { (k..m).map(|i| a[(i, j)] * a[(i, j)]).sum() };
    for k in 0..n {
        let mut p = k;
        let mut pnorm = -1.0;
        for j in k..n {
            let c = col_sq(&a, k, j);
            if c > pnorm {
                pnorm = c;
                p = j;
            }
        }
        if p != k {
            a.swap_columns(k, p);
            perm.swap(k, p);
        }
        let alpha_abs = pnorm.sqrt();
        if alpha_abs == 0.0 || (k > 0 && alpha_abs <= tol * diag[0].abs()) {
            return Err(SolveError::RankDeficient { rank: k, n });
        }
        let akk = a[(k, k)];
        let alpha = if akk >= 0.0 { -alpha_abs } else { alpha_abs };
        // Householder vector v = x - alpha e1, stored in column k.
        a[(k, k)] = akk - alpha;
        let vtv = col_sq(&a, k, k);
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for j in k + 1..n {
                let proj = beta * (k..m).map(|i| a[(i, k)] * a[(i, j)]).sum::<f64>();
                for i in k..m {
                    let vi = a[(i, k)];
                    a[(i, j)] -= proj * vi;
                }
            }
            let proj = beta * (k..m).map(|i| a[(i, k)] * rhs[i]).sum::<f64>();
            for i in k..m {
                rhs[i] -= proj * a[(i, k)];
            }
        }
        diag[k] = alpha;
    }

    let mut y = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in k + 1..n {
            s -= a[(k, j)] * y[j];
        }
        y[k] = s / diag[k];
    }
    let mut x = vec![0.0; n];
    for (k, &col) in perm.iter().enumerate() {
        x[col] = y[k];
    }
    let ratio = diag[0].abs() / diag[n - 1].abs();
    Ok(LsqSolution {
        residuals: residual_report(blocks, &x),
        x,
        condition_estimate: ratio * ratio,
        method: SolveMethod::DenseQr,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
