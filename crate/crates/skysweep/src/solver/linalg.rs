//! Sparse kernels for the conic solver: compressed sparse rows, reverse
//! Cuthill–McKee ordering, and an envelope Cholesky factorization.
//!
//! The normal matrix of the splitting iteration couples each waypoint only
//! with its temporal neighbors and same-time partners, while epigraph
//! variables touch nothing but themselves; a bandwidth-reducing permutation
//! followed by a profile factorization therefore runs in near-linear time
//! without any problem-specific indexing.

use std::collections::{BTreeMap, VecDeque};

/// Compressed sparse row matrix with sorted, duplicate-free columns per row.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            by_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for row in &mut by_row {
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// out = self · x
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[idx] * x[self.col_idx[idx]];
            }
            out[r] = acc;
        }
    }

    /// out = selfᵀ · y
    pub fn matvec_transpose(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_rows);
        debug_assert_eq!(out.len(), self.n_cols);
        out.fill(0.0);
        for r in 0..self.n_rows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[idx]] += self.values[idx] * yr;
            }
        }
    }

    pub fn row_inf_norm(&self, r: usize) -> f64 {
        self.values[self.row_ptr[r]..self.row_ptr[r + 1]]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.n_cols];
        for (c, v) in self.col_idx.iter().zip(&self.values) {
            norms[*c] = norms[*c].max(v.abs());
        }
        norms
    }

    /// self ← diag(e) · self
    pub fn scale_rows(&mut self, e: &[f64]) {
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                self.values[idx] *= e[r];
            }
        }
    }

    /// self ← self · diag(d)
    pub fn scale_cols(&mut self, d: &[f64]) {
        for (c, v) in self.col_idx.iter().zip(self.values.iter_mut()) {
            *v *= d[*c];
        }
    }
}

/// Symmetric-matrix rows used to assemble and factor the normal matrix.
pub type SymRows = Vec<BTreeMap<usize, f64>>;

/// Reverse Cuthill–McKee ordering of an undirected graph given as adjacency
/// lists; returns the old index of each new position. Deterministic: all ties
/// break by vertex index.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&v| (degree[v], v));

    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(seed, adj, &degree, &visited);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Double-sweep heuristic for a low-eccentricity BFS root within the
/// component of `seed` (restricted to unvisited vertices).
fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize], visited: &[bool]) -> usize {
    let mut root = seed;
    let mut depth = bfs_depths(root, adj, visited);
    for _ in 0..4 {
        // Farthest level, minimum-degree candidate.
        let far = depth.1;
        let cand = *far.iter().min_by_key(|&&v| (degree[v], v)).unwrap_or(&root);
        if cand == root {
            break;
        }
        let next = bfs_depths(cand, adj, visited);
        if next.0 > depth.0 {
            root = cand;
            depth = next;
        } else {
            return cand;
        }
    }
    root
}

/// (eccentricity, vertices of the deepest BFS level).
fn bfs_depths(root: usize, adj: &[Vec<usize>], visited: &[bool]) -> (usize, Vec<usize>) {
    let n = adj.len();
    let mut level = vec![usize::MAX; n];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut deepest = 0;
    let mut last = vec![root];
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !visited[u] && level[u] == usize::MAX {
                level[u] = level[v] + 1;
                if level[u] > deepest {
                    deepest = level[u];
                    last.clear();
                }
                if level[u] == deepest {
                    last.push(u);
                }
                queue.push_back(u);
            }
        }
    }
    (deepest, last)
}

/// Envelope (profile) Cholesky factorization of a sparse symmetric positive
/// definite matrix, with an internal bandwidth-reducing permutation. Fill-in
/// stays inside the envelope, so the analysis never needs a symbolic pass.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    /// First stored column of each (permuted) row.
    start: Vec<usize>,
    /// Offset of each row's segment in `data`; row i spans start[i]..=i.
    seg: Vec<usize>,
    data: Vec<f64>,
    /// Old index of each new position.
    order: Vec<usize>,
}

impl EnvelopeCholesky {
    /// Factors the matrix given as symmetric rows (both (i,j) and (j,i)
    /// present). Fails if the matrix is not numerically positive definite.
    pub fn new(rows: &SymRows) -> Result<Self, String> {
        let n = rows.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, row) in rows.iter().enumerate() {
            for (&j, _) in row.iter() {
                if j != i {
                    adj[i].push(j);
                }
            }
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut rank_of = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            rank_of[old] = new;
        }

        let mut start = vec![0usize; n];
        for new_i in 0..n {
            let old_i = order[new_i];
            let mut lo = new_i;
            for (&old_j, _) in rows[old_i].iter() {
                let new_j = rank_of[old_j];
                if new_j < lo {
                    lo = new_j;
                }
            }
            start[new_i] = lo;
        }
        let mut seg = Vec::with_capacity(n + 1);
        seg.push(0);
        for i in 0..n {
            seg.push(seg[i] + (i - start[i] + 1));
        }
        let mut data = vec![0.0; seg[n]];
        for new_i in 0..n {
            let old_i = order[new_i];
            for (&old_j, &v) in rows[old_i].iter() {
                let new_j = rank_of[old_j];
                if new_j <= new_i {
                    data[seg[new_i] + (new_j - start[new_i])] = v;
                }
            }
        }

        let mut chol = Self {
            n,
            start,
            seg,
            data,
            order,
        };
        chol.factor()?;
        Ok(chol)
    }

    /// In-place LLᵀ over the envelope.
    fn factor(&mut self) -> Result<(), String> {
        for i in 0..self.n {
            for j in self.start[i]..i {
                let lo = self.start[i].max(self.start[j]);
                let ai = self.seg[i] + (lo - self.start[i]);
                let aj = self.seg[j] + (lo - self.start[j]);
                let mut dot = 0.0;
                for k in 0..(j - lo) {
                    dot += self.data[ai + k] * self.data[aj + k];
                }
                let djj = self.data[self.seg[j] + (j - self.start[j])];
                let pos = self.seg[i] + (j - self.start[i]);
                self.data[pos] = (self.data[pos] - dot) / djj;
            }
            let base = self.seg[i];
            let mut diag = self.data[base + (i - self.start[i])];
            for k in self.start[i]..i {
                let v = self.data[base + (k - self.start[i])];
                diag -= v * v;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(format!("matrix not positive definite at pivot {i}"));
            }
            self.data[base + (i - self.start[i])] = diag.sqrt();
        }
        Ok(())
    }

    /// Solves M x = rhs for the matrix this factorization was built from.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.n);
        let mut z = vec![0.0; self.n];
        for i in 0..self.n {
            z[i] = rhs[self.order[i]];
        }
        // Forward: L z' = z.
        for i in 0..self.n {
            let base = self.seg[i];
            let mut acc = z[i];
            for j in self.start[i]..i {
                acc -= self.data[base + (j - self.start[i])] * z[j];
            }
            z[i] = acc / self.data[base + (i - self.start[i])];
        }
        // Backward: Lᵀ x' = z' (column sweep over rows of L).
        for i in (0..self.n).rev() {
            let base = self.seg[i];
            z[i] /= self.data[base + (i - self.start[i])];
            let xi = z[i];
            for j in self.start[i]..i {
                z[j] -= self.data[base + (j - self.start[i])] * xi;
            }
        }
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.order[i]] = z[i];
        }
        x
    }
}
