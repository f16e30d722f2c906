//! Sparse Cholesky factorization of GMRF precision matrices and the
//! primitives built on it: solves, log-determinants, exact sampling and
//! marginal variances by selected inversion.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

/// Seedable stream of standard normal and uniform deviates.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn adjacency(a: &CscMatrix) -> Vec<Vec<usize>> {
    (0..a.ncols())
        .map(|j| a.col(j).0.iter().copied().filter(|&i| i != j).collect())
        .collect()
}

/// Minimum-degree ordering on the graph of a symmetric matrix, eliminating
/// explicitly and breaking ties by lowest index. Returns `perm` with
/// `perm[k]` the original index of the k-th pivot.
pub fn minimum_degree_ordering(a: &CscMatrix) -> Vec<usize> {
    minimum_degree(adjacency(a))
}

/// `adj` holds sorted neighbour lists without self loops.
fn minimum_degree(mut adj: Vec<Vec<usize>>) -> Vec<usize> {
    let n = adj.len();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();

    while let Some((_, v)) = queue.pop_first() {
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            let old = adj[u].len();
            // adj[u] ∪ nbrs \ {u, v}; both sides sorted.
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let x = a.get(i).copied().unwrap_or(usize::MAX);
                let y = b.get(j).copied().unwrap_or(usize::MAX);
                let next = if x <= y {
                    i += 1;
                    if x == y {
                        j += 1;
                    }
                    x
                } else {
                    j += 1;
                    y
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            if !eliminated[u] {
                queue.remove(&(old, u));
                queue.insert((adj[u].len(), u));
            }
        }
    }
    perm
}

/// Parts at or below this size are ordered by minimum degree.
const DISSECTION_LEAF: usize = 200;

/// Nested dissection with breadth-first level-set separators, falling back to
/// minimum degree on small parts. Deterministic: every choice breaks ties by
/// lowest index.
pub fn nested_dissection_ordering(a: &CscMatrix) -> Vec<usize> {
    let adj = adjacency(a);
    let n = adj.len();
    let mut nd = Dissector {
        adj: &adj,
        part: vec![0; n],
        next_id: 1,
        level: vec![usize::MAX; n],
        perm: Vec::with_capacity(n),
    };
    let all: Vec<usize> = (0..n).collect();
    nd.dissect(all);
    nd.perm
}

struct Dissector<'a> {
    adj: &'a [Vec<usize>],
    /// Part id of every node; only nodes sharing an id are traversed.
    part: Vec<usize>,
    next_id: usize,
    level: Vec<usize>,
    perm: Vec<usize>,
}

impl Dissector<'_> {
    fn relabel(&mut self, nodes: &[usize]) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        for &v in nodes {
            self.part[v] = id;
        }
        id
    }

    /// BFS levels from `root` within part `id`; returns the levels.
    fn bfs(&mut self, root: usize, id: usize, nodes: &[usize]) -> Vec<Vec<usize>> {
        for &v in nodes {
            self.level[v] = usize::MAX;
        }
        self.level[root] = 0;
        let mut levels = vec![vec![root]];
        loop {
            let mut next = Vec::new();
            for &v in levels.last().unwrap() {
                for &u in &self.adj[v] {
                    if self.part[u] == id && self.level[u] == usize::MAX {
                        self.level[u] = levels.len();
                        next.push(u);
                    }
                }
            }
            if next.is_empty() {
                return levels;
            }
            next.sort_unstable();
            levels.push(next);
        }
    }

    fn leaf(&mut self, nodes: &[usize], id: usize) {
        let adj: Vec<Vec<usize>> = nodes
            .iter()
            .map(|&v| {
                let mut local: Vec<usize> = self.adj[v]
                    .iter()
                    .filter(|&&u| self.part[u] == id)
                    .map(|u| nodes.binary_search(u).expect("node in part"))
                    .collect();
                local.sort_unstable();
                local
            })
            .collect();
        self.perm.extend(minimum_degree(adj).into_iter().map(|i| nodes[i]));
    }

    /// Orders `nodes` (sorted) and appends them to `perm`.
    fn dissect(&mut self, nodes: Vec<usize>) {
        let id = self.relabel(&nodes);
        if nodes.len() <= DISSECTION_LEAF {
            self.leaf(&nodes, id);
            return;
        }
        // Split into connected components first.
        let levels = self.bfs(nodes[0], id, &nodes);
        let reached: usize = levels.iter().map(Vec::len).sum();
        if reached < nodes.len() {
            let mut comp: Vec<usize> = levels.concat();
            comp.sort_unstable();
            let rest: Vec<usize> = nodes.iter().copied().filter(|&v| self.level[v] == usize::MAX).collect();
            self.dissect(comp);
            self.dissect(rest);
            return;
        }
        // Pseudo-peripheral root.
        let mut levels = levels;
        for _ in 0..8 {
            let last = levels.last().unwrap();
            let cand = *last
                .iter()
                .min_by_key(|&&v| (self.adj[v].iter().filter(|&&u| self.part[u] == id).count(), v))
                .unwrap();
            let trial = self.bfs(cand, id, &nodes);
            if trial.len() <= levels.len() {
                levels = self.bfs(levels[0][0], id, &nodes);
                break;
            }
            levels = trial;
        }
        if levels.len() < 3 {
            self.leaf(&nodes, id);
            return;
        }
        let half = nodes.len() / 2;
        let mut acc = 0;
        let mut m = 1;
        for (i, l) in levels.iter().enumerate() {
            acc += l.len();
            if acc >= half {
                m = i.clamp(1, levels.len() - 2);
                break;
            }
        }
        // Keep only separator nodes adjacent to the far side.
        let mut sep = Vec::new();
        let mut near: Vec<usize> = levels[..m].concat();
        for &v in &levels[m] {
            if self.adj[v]
                .iter()
                .any(|&u| self.part[u] == id && self.level[u] == m + 1)
            {
                sep.push(v);
            } else {
                near.push(v);
            }
        }
        let mut far: Vec<usize> = levels[m + 1..].concat();
        near.sort_unstable();
        far.sort_unstable();
        sep.sort_unstable();
        self.dissect(near);
        self.dissect(far);
        self.perm.extend_from_slice(&sep);
    }
}

/// Cholesky factor `P Q Pᵀ = L Lᵀ` with a fill-reducing permutation.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    /// `perm[k]` = original index of pivot k.
    perm: Vec<usize>,
    /// `pinv[i]` = pivot position of original index i.
    pinv: Vec<usize>,
    /// Lower-triangular factor in CSC; the diagonal is the first entry of
    /// each column, remaining rows ascending.
    l: CscMatrix,
}

/// Strategy for the fill-reducing permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    #[default]
    NestedDissection,
    MinimumDegree,
    Natural,
}

pub fn factorize(q: &CscMatrix) -> Result<Factorization> {
    Factorization::new(q, Ordering::default())
}

impl Factorization {
    pub fn new(q: &CscMatrix, ordering: Ordering) -> Result<Self> {
        let n = q.ncols();
        if q.nrows() != n {
            return Err(Error::Internal(format!("matrix is {}x{}, not square", q.nrows(), n)));
        }
        let perm = match ordering {
            Ordering::NestedDissection => nested_dissection_ordering(q),
            Ordering::MinimumDegree => minimum_degree_ordering(q),
            Ordering::Natural => (0..n).collect(),
        };
        Self::with_permutation(q, perm)
    }

    /// Factorizes with a caller-supplied pivot order, e.g. one computed once
    /// for a fixed sparsity pattern.
    pub fn with_permutation(q: &CscMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = q.ncols();
        if q.nrows() != n || perm.len() != n {
            return Err(Error::Internal(format!(
                "matrix is {}x{} with a permutation of length {}",
                q.nrows(),
                n,
                perm.len()
            )));
        }
        let mut pinv = vec![usize::MAX; n];
        for (k, &i) in perm.iter().enumerate() {
            if i >= n || pinv[i] != usize::MAX {
                return Err(Error::Internal("invalid permutation".into()));
            }
            pinv[i] = k;
        }
        let upper = permuted_upper(q, &pinv);
        let parent = etree(&upper);
        let l = up_looking_cholesky(&upper, &parent).map_err(|k| Error::NotPositiveDefinite { pivot: perm[k] })?;
        Ok(Factorization { n, perm, pinv, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn factor(&self) -> &CscMatrix {
        &self.l
    }

    pub fn nnz_factor(&self) -> usize {
        self.l.nnz()
    }

    /// log |Q| = 2 Σ log L_kk.
    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|k| 2.0 * self.l.values()[self.l.col_ptr()[k]].ln())
            .sum()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        Ok(x)
    }

    /// `x = Pᵀ L⁻ᵀ z`, so that x ~ N(0, Q⁻¹) when z is standard normal.
    pub fn color(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.ltsolve(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }

    /// `z = Lᵀ P x`, the inverse of [`Factorization::color`].
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let px: Vec<f64> = self.perm.iter().map(|&i| x[i]).collect();
        let mut z = vec![0.0; self.n];
        for j in 0..self.n {
            let (rows, vals) = self.l.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                z[j] += v * px[i];
            }
        }
        z
    }

    /// Exact draws from N(0, Q⁻¹); one column per sample.
    pub fn sample(&self, rng: &mut RandomSource, n_samples: usize) -> Vec<Vec<f64>> {
        (0..n_samples).map(|_| self.color(&rng.normals(self.n))).collect()
    }

    fn lsolve(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let (rows, vals) = self.l.col(j);
            x[j] /= vals[0];
            let xj = x[j];
            for (&i, &v) in rows[1..].iter().zip(&vals[1..]) {
                x[i] -= v * xj;
            }
        }
    }

    fn ltsolve(&self, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            let (rows, vals) = self.l.col(j);
            let mut s = x[j];
            for (&i, &v) in rows[1..].iter().zip(&vals[1..]) {
                s -= v * x[i];
            }
            x[j] = s / vals[0];
        }
    }

    /// Entries of Q⁻¹ on the pattern of L (Takahashi recursion), returned
    /// in pivot order aligned with the factor's storage.
    fn selected_inverse_values(&self) -> Vec<f64> {
        let cp = self.l.col_ptr();
        let ri = self.l.row_idx();
        let lv = self.l.values();
        let mut z = vec![0.0; lv.len()];
        let mut acc = Vec::new();
        for j in (0..self.n).rev() {
            let start = cp[j];
            let end = cp[j + 1];
            let ljj = lv[start];
            let rows = &ri[start + 1..end];
            let l = &lv[start + 1..end];
            acc.clear();
            acc.resize(rows.len(), 0.0);
            // acc[a] = Σ_b l[b] Z(rows[a], rows[b]); column rows[b] of Z holds
            // every rows[a] with a ≥ b because the pattern of L is closed.
            for (b, &k) in rows.iter().enumerate() {
                let (mut p, kend) = (cp[k], cp[k + 1]);
                for a in b..rows.len() {
                    while ri[p] < rows[a] {
                        p += 1;
                    }
                    debug_assert!(p < kend && ri[p] == rows[a]);
                    let v = z[p];
                    acc[a] += l[b] * v;
                    if a != b {
                        acc[b] += l[a] * v;
                    }
                }
            }
            let mut d = 0.0;
            for (a, &s) in acc.iter().enumerate() {
                let v = -s / ljj;
                z[start + 1 + a] = v;
                d += l[a] * v;
            }
            z[start] = 1.0 / (ljj * ljj) - d / ljj;
        }
        z
    }

    /// Q⁻¹ restricted to the (symmetrized) pattern of the factor, in the
    /// original index order.
    pub fn selected_inverse(&self) -> CscMatrix {
        let z = self.selected_inverse_values();
        let mut trip = Vec::with_capacity(2 * z.len());
        for j in 0..self.n {
            let (rows, _) = self.l.col(j);
            for (p, &i) in rows.iter().enumerate() {
                let v = z[self.l.col_ptr()[j] + p];
                let (a, b) = (self.perm[i], self.perm[j]);
                trip.push((a, b, v));
                if a != b {
                    trip.push((b, a, v));
                }
            }
        }
        CscMatrix::from_triplets(self.n, self.n, &trip)
    }

    /// diag(Q⁻¹) by selected inversion.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let z = self.selected_inverse_values();
        (0..self.n).map(|i| z[self.l.col_ptr()[self.pinv[i]]]).collect()
    }

    /// diag(Q⁻¹) by one solve per unit vector; reference path for small n.
    pub fn marginal_variances_by_solves(&self, indices: &[usize]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&i| {
                if i >= self.n {
                    return Err(Error::IndexOutOfRange { index: i, len: self.n });
                }
                let mut e = vec![0.0; self.n];
                e[i] = 1.0;
                Ok(self.solve(&e)?[i])
            })
            .collect()
    }

    pub fn marginal_sd(&self) -> Vec<f64> {
        self.marginal_variances().into_iter().map(f64::sqrt).collect()
    }
}

pub fn solve(handle: &Factorization, b: &[f64]) -> Result<Vec<f64>> {
    handle.solve(b)
}

pub fn log_det(handle: &Factorization) -> f64 {
    handle.log_det()
}

pub fn sample(handle: &Factorization, rng: &mut RandomSource, n_samples: usize) -> Vec<Vec<f64>> {
    handle.sample(rng, n_samples)
}

pub fn marginal_sd(handle: &Factorization) -> Vec<f64> {
    handle.marginal_sd()
}

/// Upper triangle of `P Q Pᵀ` in CSC with sorted rows.
fn permuted_upper(q: &CscMatrix, pinv: &[usize]) -> CscMatrix {
    let n = q.ncols();
    let mut trip = Vec::with_capacity(q.nnz() / 2 + n);
    for j in 0..n {
        let (rows, vals) = q.col(j);
        for (&i, &v) in rows.iter().zip(vals) {
            let (pi, pj) = (pinv[i], pinv[j]);
            if pi <= pj {
                trip.push((pi, pj, v));
            }
        }
    }
    CscMatrix::from_triplets(n, n, &trip)
}

/// Elimination tree of a matrix given by its upper triangle.
fn etree(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols();
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for &i0 in upper.col(k).0 {
            let mut i = i0;
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                    break;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row k of L (excluding the diagonal), in topological order
/// written into `stack[top..]`.
fn ereach(upper: &CscMatrix, k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = upper.ncols();
    let mut top = n;
    mark[k] = k;
    let mut path = Vec::new();
    for &i0 in upper.col(k).0 {
        if i0 > k {
            continue;
        }
        let mut i = i0;
        path.clear();
        while mark[i] != k {
            path.push(i);
            mark[i] = k;
            i = parent[i];
        }
        while let Some(p) = path.pop() {
            top -= 1;
            stack[top] = p;
        }
    }
    top
}

/// Up-looking Cholesky. Returns the failing pivot position on breakdown.
fn up_looking_cholesky(upper: &CscMatrix, parent: &[usize]) -> std::result::Result<CscMatrix, usize> {
    let n = upper.ncols();
    let mut stack = vec![0usize; n];
    let mut mark = vec![usize::MAX; n];

    // Column counts from the row patterns.
    let mut counts = vec![1usize; n];
    for k in 0..n {
        let top = ereach(upper, k, parent, &mut stack, &mut mark);
        for &i in &stack[top..] {
            counts[i] += 1;
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for j in 0..n {
        col_ptr[j + 1] = col_ptr[j] + counts[j];
    }
    let nnz = col_ptr[n];
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![0.0f64; nnz];
    let mut next = col_ptr.clone();
    let mut x = vec![0.0f64; n];
    mark.iter_mut().for_each(|m| *m = usize::MAX);

    for k in 0..n {
        let top = ereach(upper, k, parent, &mut stack, &mut mark);
        let (rows, vals) = upper.col(k);
        let mut d = 0.0;
        for (&i, &v) in rows.iter().zip(vals) {
            if i < k {
                x[i] = v;
            } else if i == k {
                d = v;
            }
        }
        for &i in &stack[top..] {
            let lki = x[i] / values[col_ptr[i]];
            x[i] = 0.0;
            for p in col_ptr[i] + 1..next[i] {
                x[row_idx[p]] -= values[p] * lki;
            }
            d -= lki * lki;
            let p = next[i];
            row_idx[p] = k;
            values[p] = lki;
            next[i] += 1;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(k);
        }
        let p = next[k];
        row_idx[p] = k;
        values[p] = d.sqrt();
        next[k] += 1;
    }
    Ok(CscMatrix::from_raw(n, n, col_ptr, row_idx, values))
}
