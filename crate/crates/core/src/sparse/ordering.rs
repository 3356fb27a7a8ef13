//! Fill-reducing symmetric orderings.
//!
//! `reorder` compares two deterministic heuristics and keeps the one whose
//! symbolic factor is smaller:
//!
//! * minimum degree on the explicit elimination graph, ties broken by the
//!   smallest original index (identity for diagonal matrices);
//! * reverse Cuthill–McKee with dense rows moved to the end, which wins on
//!   Kronecker space-time patterns where minimum degree fills badly.

use std::collections::{BTreeSet, VecDeque};

use super::SparseSymmetric;

/// Bijective index map. `perm[new] = old` and `inv[old] = new`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            inv: (0..n).collect(),
        }
    }

    /// Builds from `order[new] = old`; returns `None` if not a bijection.
    pub fn from_order(order: Vec<usize>) -> Option<Self> {
        let n = order.len();
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return None;
            }
            inv[old] = new;
        }
        Some(Self { perm: order, inv })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Original index placed at position `new`.
    pub fn old_of(&self, new: usize) -> usize {
        self.perm[new]
    }

    /// Position of original index `old`.
    pub fn new_of(&self, old: usize) -> usize {
        self.inv[old]
    }

    pub fn order(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Self {
        Self {
            perm: self.inv.clone(),
            inv: self.perm.clone(),
        }
    }

    /// `y[new] = x[perm[new]]`.
    pub fn apply<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&o| x[o]).collect()
    }

    /// Inverse of `apply`.
    pub fn apply_inverse<T: Copy>(&self, y: &[T]) -> Vec<T> {
        self.inv.iter().map(|&nw| y[nw]).collect()
    }
}

fn adjacency(q: &SparseSymmetric) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); q.n()];
    for (i, j, _) in q.iter() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Fill-reducing permutation of a structurally symmetric matrix: the better
/// of `minimum_degree` and `reverse_cuthill_mckee` by factor size, preferring
/// minimum degree on ties.
pub fn reorder(q: &SparseSymmetric) -> Permutation {
    let mut candidates = Vec::with_capacity(3);
    if q.n() <= MD_CANDIDATE_LIMIT {
        candidates.push(minimum_degree(q));
    }
    candidates.push(nested_dissection(q));
    candidates.push(reverse_cuthill_mckee(q));
    candidates.push(natural_dense_last(q));
    let mut best: Option<(usize, Permutation)> = None;
    for p in candidates {
        let nnz = factor_nnz(q, &p);
        if best.as_ref().map_or(true, |(b, _)| nnz < *b) {
            best = Some((nnz, p));
        }
    }
    best.expect("at least one candidate").1
}

/// Input order with dense rows moved to the end. Model-generated matrices
/// are laid out time-major, which is already a narrow-profile order.
pub fn natural_dense_last(q: &SparseSymmetric) -> Permutation {
    let adj = adjacency(q);
    let dense = dense_rows(&adj);
    let order = (0..q.n())
        .filter(|&v| !dense[v])
        .chain((0..q.n()).filter(|&v| dense[v]))
        .collect();
    Permutation::from_order(order).expect("bijection")
}

/// Rows whose degree exceeds `max(16, 10 × mean degree)`, typically fixed
/// effects touching every observation.
fn dense_rows(adj: &[Vec<usize>]) -> Vec<bool> {
    let n = adj.len();
    let mean = adj.iter().map(Vec::len).sum::<usize>() as f64 / n.max(1) as f64;
    let cutoff = (10.0 * mean).max(16.0);
    adj.iter().map(|a| a.len() as f64 > cutoff).collect()
}

/// Above this size plain minimum degree (quadratic on the explicit
/// elimination graph) is only used on nested-dissection leaves.
pub const MD_CANDIDATE_LIMIT: usize = 2000;

/// Subgraphs at or below this size are ordered by minimum degree.
const ND_LEAF: usize = 96;

/// Nested dissection with level-structure separators and minimum-degree
/// leaves; dense rows are ordered last.
pub fn nested_dissection(q: &SparseSymmetric) -> Permutation {
    let n = q.n();
    let adj = adjacency(q);
    let dense = dense_rows(&adj);
    let mut order = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).filter(|&v| !dense[v]).collect();
    let mut mark = vec![usize::MAX; n];
    dissect(&adj, all, &mut mark, &mut order);
    order.extend((0..n).filter(|&v| dense[v]));
    Permutation::from_order(order).expect("every vertex is placed once")
}

/// Orders `set` into `out`. `mark[v] == tag` flags membership of the subset
/// currently being split; every split uses a fresh tag.
fn dissect(adj: &[Vec<usize>], set: Vec<usize>, mark: &mut [usize], out: &mut Vec<usize>) {
    // explicit stack of (subset, emit-as-is); separators are emitted as-is
    let mut stack = vec![(set, false)];
    let mut next_tag = 0;
    while let Some((set, emit)) = stack.pop() {
        if emit {
            out.extend_from_slice(&set);
            continue;
        }
        if set.len() <= ND_LEAF {
            out.extend(leaf_order(adj, &set, mark));
            continue;
        }
        let tag = next_tag;
        next_tag += 1;
        for &v in &set {
            mark[v] = tag;
        }
        match split(adj, &set, mark, tag) {
            Some((a, b, sep)) => {
                // processed in reverse: a, then b, then the separator
                stack.push((sep, true));
                stack.push((b, false));
                stack.push((a, false));
            }
            None => out.extend(leaf_order(adj, &set, mark)),
        }
    }
}

fn leaf_order(adj: &[Vec<usize>], set: &[usize], mark: &mut [usize]) -> Vec<usize> {
    let local: std::collections::HashMap<usize, usize> =
        set.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let sub: Vec<Vec<usize>> = set
        .iter()
        .map(|v| adj[*v].iter().filter_map(|u| local.get(u).copied()).collect())
        .collect();
    for &v in set {
        mark[v] = usize::MAX;
    }
    minimum_degree_order(sub).into_iter().map(|k| set[k]).collect()
}

/// Splits a marked subset into `(a, b, separator)`; `None` when no useful
/// separator exists. A disconnected subset is split between components with
/// an empty separator.
fn split(adj: &[Vec<usize>], set: &[usize], mark: &[usize], tag: usize) -> Option<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let inside = |u: usize| mark[u] == tag;
    let bfs = |root: usize| -> Vec<usize> {
        let mut level: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        level.insert(root, 0);
        let mut seq = vec![root];
        let mut k = 0;
        while k < seq.len() {
            let v = seq[k];
            let l = level[&v];
            for &u in &adj[v] {
                if inside(u) && !level.contains_key(&u) {
                    level.insert(u, l + 1);
                    seq.push(u);
                }
            }
            k += 1;
        }
        seq.iter().map(|v| level[v]).zip(seq.iter()).map(|(l, &v)| l * adj.len() + v).collect()
    };
    // level-encoded BFS order: entry = level * N + vertex
    let nn = adj.len();
    let first = bfs(set[0]);
    if first.len() < set.len() {
        let comp: BTreeSet<usize> = first.iter().map(|e| e % nn).collect();
        let a: Vec<usize> = set.iter().copied().filter(|v| comp.contains(v)).collect();
        let b: Vec<usize> = set.iter().copied().filter(|v| !comp.contains(v)).collect();
        return Some((a, b, Vec::new()));
    }
    // pseudo-peripheral root
    let mut levels = first;
    let mut depth = levels.last().expect("nonempty") / nn;
    loop {
        let far = levels.last().expect("nonempty") % nn;
        let cand = bfs(far);
        let d = cand.last().expect("nonempty") / nn;
        if d <= depth {
            break;
        }
        depth = d;
        levels = cand;
    }
    if depth < 2 {
        return None;
    }
    let mut counts = vec![0usize; depth + 1];
    for e in &levels {
        counts[e / nn] += 1;
    }
    // smallest level whose cumulative share before it lies in [0.3, 0.7]
    let total = set.len() as f64;
    let mut before = 0usize;
    let mut best: Option<(usize, usize)> = None;
    for (l, &c) in counts.iter().enumerate() {
        let frac = before as f64 / total;
        let after = (before + c) as f64 / total;
        let interior = l > 0 && l < depth;
        let balanced = frac >= 0.3 && after <= 0.7;
        // fall back to the median level when no level is balanced
        let median = best.is_none() && after > 0.5;
        if interior && (balanced || median) && best.map_or(true, |(_, s)| c < s) {
            best = Some((l, c));
        }
        before += c;
    }
    let (cut, _) = best?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut sep = Vec::new();
    for e in &levels {
        let (l, v) = (e / nn, e % nn);
        match l.cmp(&cut) {
            std::cmp::Ordering::Less => a.push(v),
            std::cmp::Ordering::Equal => sep.push(v),
            std::cmp::Ordering::Greater => b.push(v),
        }
    }
    a.sort_unstable();
    b.sort_unstable();
    sep.sort_unstable();
    Some((a, b, sep))
}

/// Minimum-degree elimination ordering.
pub fn minimum_degree(q: &SparseSymmetric) -> Permutation {
    Permutation::from_order(minimum_degree_order(adjacency(q)))
        .expect("minimum degree visits every vertex once")
}

fn minimum_degree_order(mut adj: Vec<Vec<usize>>) -> Vec<usize> {
    let n = adj.len();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut scratch = Vec::new();

    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            // adj[u] ∪ nbrs \ {u, v}
            scratch.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut p, mut r) = (0, 0);
            while p < a.len() || r < b.len() {
                let next = match (a.get(p), b.get(r)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        r += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        r += 1;
                        y
                    }
                    (Some(&x), None) => {
                        p += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        r += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    scratch.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut scratch);
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

/// Reverse Cuthill–McKee ordering with dense rows ordered last.
pub fn reverse_cuthill_mckee(q: &SparseSymmetric) -> Permutation {
    let n = q.n();
    let adj = adjacency(q);
    let dense = dense_rows(&adj);
    let degree: Vec<usize> = adj
        .iter()
        .map(|a| a.iter().filter(|&&u| !dense[u]).count())
        .collect();

    let mut placed = dense.clone();
    let mut order = Vec::with_capacity(n);
    for seed in 0..n {
        if placed[seed] {
            continue;
        }
        // pseudo-peripheral root: move to the far end of the level structure
        // while its depth keeps growing
        let mut root = seed;
        let (mut depth, mut far) = bfs_levels(&adj, &placed, &degree, root);
        loop {
            let (d, f) = bfs_levels(&adj, &placed, &degree, far);
            if d <= depth {
                break;
            }
            root = far;
            depth = d;
            far = f;
        }
        let start = order.len();
        let mut queue = VecDeque::from([root]);
        placed[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !placed[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                placed[u] = true;
                queue.push_back(u);
            }
        }
        order[start..].reverse();
    }
    order.reverse();
    order.extend((0..n).filter(|&v| dense[v]));
    Permutation::from_order(order).expect("every vertex is placed once")
}

/// Depth of the BFS level structure rooted at `root` and the minimum-degree
/// vertex of its last level.
fn bfs_levels(adj: &[Vec<usize>], blocked: &[bool], degree: &[usize], root: usize) -> (usize, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let (mut depth, mut far) = (0, root);
    while let Some(v) = queue.pop_front() {
        if level[v] > depth || (level[v] == depth && (degree[v], v) < (degree[far], far)) {
            depth = level[v];
            far = v;
        }
        for &u in &adj[v] {
            if !blocked[u] && level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
    }
    (depth, far)
}

/// Number of nonzeros of the Cholesky factor of `P Q Pᵀ` (including the
/// diagonal), from the elimination tree and row subtrees.
pub fn factor_nnz(q: &SparseSymmetric, perm: &Permutation) -> usize {
    super::cholesky::SymbolicCholesky::analyze(q, perm.clone()).exact_nnz()
}
