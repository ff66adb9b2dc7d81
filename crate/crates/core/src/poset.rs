//! Partial orders over masked p-value vectors and the root-set index that
//! drives the reveal order.
//!
//! Nodes are positions in a [`PointSet`]. An edge `parent -> child` means
//! `child ≺ parent` with nothing in between (the transitive reduction), so
//! the roots of the DAG are the maximal elements of the live sub-poset.
//! Removing a root decrements its children's in-degrees and promotes the
//! children that drop to zero, exactly as in Kahn's topological sort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::PointSet;

/// The partial order used to restrict reveal candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartialOrder {
    /// `a ≺ b` iff `max_k a_k < max_k b_k`.
    MaxNorm,
    /// `a ≺ b` iff `a_k <= b_k` for every `k` and `a != b`.
    Product,
    /// No two points are comparable.
    Empty,
}

/// Whether `a ≺ b` under `order`.
pub fn less_than(order: PartialOrder, a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "cannot compare vectors of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(less_than_unchecked(order, a, b))
}

pub(crate) fn less_than_unchecked(order: PartialOrder, a: &[f64], b: &[f64]) -> bool {
    match order {
        PartialOrder::MaxNorm => inf_norm(a) < inf_norm(b),
        PartialOrder::Product => product_less(a, b),
        PartialOrder::Empty => false,
    }
}

fn product_less(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

/// `max_k |t_k|`; masked vectors are non-negative so this is `max_k t_k`.
pub fn inf_norm(t: &[f64]) -> f64 {
    t.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Unordered set of node ids with O(1) insert, remove and membership.
#[derive(Debug, Clone, Default)]
pub struct RootSet {
    members: Vec<usize>,
    pos: Vec<usize>,
}

const ABSENT: usize = usize::MAX;

impl RootSet {
    fn with_universe(n: usize) -> Self {
        Self {
            members: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    fn insert(&mut self, v: usize) {
        if self.pos[v] == ABSENT {
            self.pos[v] = self.members.len();
            self.members.push(v);
        }
    }

    fn remove(&mut self, v: usize) -> bool {
        let p = self.pos[v];
        if p == ABSENT {
            return false;
        }
        self.members.swap_remove(p);
        if let Some(&moved) = self.members.get(p) {
            self.pos[moved] = p;
        }
        self.pos[v] = ABSENT;
        true
    }

    pub fn contains(&self, v: usize) -> bool {
        self.pos.get(v).is_some_and(|&p| p != ABSENT)
    }

    /// Members in unspecified order.
    pub fn as_slice(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members in ascending node order.
    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.members.clone();
        v.sort_unstable();
        v
    }
}

/// Transitively reduced DAG with Kahn-style root maintenance.
#[derive(Debug, Clone)]
pub struct DagIndex {
    children: Vec<Vec<usize>>,
    in_degree: Vec<usize>,
    alive: Vec<bool>,
    roots: RootSet,
}

impl DagIndex {
    /// Builds the index from an already reduced edge list. Edges are
    /// `(parent, child)` pairs over nodes `0..n`.
    pub fn from_reduced_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut children = vec![Vec::new(); n];
        let mut in_degree = vec![0usize; n];
        for &(u, v) in edges {
            children[u].push(v);
            in_degree[v] += 1;
        }
        let mut roots = RootSet::with_universe(n);
        for (v, &d) in in_degree.iter().enumerate() {
            if d == 0 {
                roots.insert(v);
            }
        }
        Self {
            children,
            in_degree,
            alive: vec![true; n],
            roots,
        }
    }

    /// Reduces an arbitrary DAG edge list, then builds the index.
    pub fn from_relation(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let reduced = transitive_reduction(n, edges)?;
        Ok(Self::from_reduced_edges(n, &reduced))
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .children
            .iter()
            .enumerate()
            .flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_degree[v]
    }

    fn remove_root(&mut self, v: usize) -> Result<Vec<usize>> {
        if !self.roots.remove(v) {
            return Err(Error::Contract(format!("node {v} is not a current root")));
        }
        self.alive[v] = false;
        let mut promoted = Vec::new();
        for &c in &self.children[v] {
            self.in_degree[c] -= 1;
            if self.in_degree[c] == 0 {
                self.roots.insert(c);
                promoted.push(c);
            }
        }
        Ok(promoted)
    }
}

/// Strict weak order index for [`PartialOrder::MaxNorm`]: nodes grouped by
/// equal infinity norm, groups visited in descending norm. Observably the
/// same as the reduced DAG (complete bipartite edges between consecutive
/// groups) without materializing any edge.
#[derive(Debug, Clone)]
pub struct LayeredIndex {
    groups: Vec<Vec<usize>>,
    current: usize,
    remaining_in_current: usize,
    alive: Vec<bool>,
    roots: RootSet,
}

impl LayeredIndex {
    pub fn new(points: &PointSet) -> Self {
        let n = points.len();
        let norms: Vec<f64> = points.iter().map(inf_norm).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for v in order {
            match groups.last_mut() {
                Some(g) if norms[g[0]] == norms[v] => g.push(v),
                _ => groups.push(vec![v]),
            }
        }
        let mut roots = RootSet::with_universe(n);
        let remaining = groups.first().map_or(0, Vec::len);
        if let Some(g) = groups.first() {
            for &v in g {
                roots.insert(v);
            }
        }
        Self {
            groups,
            current: 0,
            remaining_in_current: remaining,
            alive: vec![true; n],
            roots,
        }
    }

    fn remove_root(&mut self, v: usize) -> Result<Vec<usize>> {
        if !self.roots.remove(v) {
            return Err(Error::Contract(format!("node {v} is not a current root")));
        }
        self.alive[v] = false;
        self.remaining_in_current -= 1;
        if self.remaining_in_current > 0 {
            return Ok(Vec::new());
        }
        self.current += 1;
        match self.groups.get(self.current) {
            Some(g) => {
                for &u in g {
                    self.roots.insert(u);
                }
                self.remaining_in_current = g.len();
                Ok(g.clone())
            }
            None => Ok(Vec::new()),
        }
    }
}

/// Root-set index over a set of masked points.
#[derive(Debug, Clone)]
pub enum PosetIndex {
    Dag(DagIndex),
    Layered(LayeredIndex),
}

impl PosetIndex {
    /// Current maximal set.
    pub fn roots(&self) -> &RootSet {
        match self {
            PosetIndex::Dag(d) => &d.roots,
            PosetIndex::Layered(l) => &l.roots,
        }
    }

    /// Removes root `v` and returns the nodes promoted to the root set.
    pub fn remove_root(&mut self, v: usize) -> Result<Vec<usize>> {
        match self {
            PosetIndex::Dag(d) => d.remove_root(v),
            PosetIndex::Layered(l) => l.remove_root(v),
        }
    }

    pub fn is_live(&self, v: usize) -> bool {
        match self {
            PosetIndex::Dag(d) => d.alive.get(v).copied().unwrap_or(false),
            PosetIndex::Layered(l) => l.alive.get(v).copied().unwrap_or(false),
        }
    }
}

/// Builds the root-set index for `points` under `order`. `MaxNorm` uses the
/// layered fast path; `Product` reduces the full relation to its covering
/// edges; `Empty` has no edges.
pub fn build_index(points: &PointSet, order: PartialOrder) -> PosetIndex {
    match order {
        PartialOrder::MaxNorm => PosetIndex::Layered(LayeredIndex::new(points)),
        PartialOrder::Product => PosetIndex::Dag(DagIndex::from_reduced_edges(
            points.len(),
            &product_covers(points),
        )),
        PartialOrder::Empty => PosetIndex::Dag(DagIndex::from_reduced_edges(points.len(), &[])),
    }
}

/// Builds the DAG index for any order by enumerating the full relation and
/// reducing it generically. Quadratic in memory for dense orders; intended
/// for small inputs and cross-checks.
pub fn build_index_generic(points: &PointSet, order: PartialOrder) -> Result<DagIndex> {
    let n = points.len();
    let mut edges = Vec::new();
    for b in 0..n {
        for a in 0..n {
            if a != b && less_than_unchecked(order, points.point(a), points.point(b)) {
                edges.push((b, a));
            }
        }
    }
    DagIndex::from_relation(n, &edges)
}

/// Covering edges `(v, u)` of the product order: `u ≺ v` with no `w` such
/// that `u ≺ w ≺ v`.
pub fn product_covers(points: &PointSet) -> Vec<(usize, usize)> {
    let n = points.len();
    // Descending (sum, lexicographic) is a linear extension: u ≺ v forces
    // sum(u) <= sum(v), and on a tie u precedes v lexicographically.
    let sums: Vec<f64> = points.iter().map(|p| p.iter().sum()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sums[b]
            .total_cmp(&sums[a])
            .then_with(|| lex_cmp(points.point(b), points.point(a)))
            .then(a.cmp(&b))
    });

    let mut edges = Vec::new();
    let mut covers: Vec<usize> = Vec::new();
    for (rank, &v) in order.iter().enumerate() {
        let pv = points.point(v);
        covers.clear();
        for &u in &order[rank + 1..] {
            let pu = points.point(u);
            if !product_less(pu, pv) {
                continue;
            }
            // candidates arrive in linear-extension order, so any w with
            // u ≺ w ≺ v has already been examined
            if !covers.iter().any(|&c| product_less(pu, points.point(c))) {
                covers.push(u);
            }
        }
        edges.extend(covers.iter().map(|&u| (v, u)));
    }
    edges
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Transitive reduction of a DAG given as `(from, to)` edges over `0..n`.
/// Duplicate edges are collapsed. Fails on cycles or out-of-range nodes.
pub fn transitive_reduction(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::Domain(format!(
                "edge ({u}, {v}) out of range for {n} nodes"
            )));
        }
        if u == v {
            return Err(Error::Domain(format!("self-loop at node {u}")));
        }
        adj[u].push(v);
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let topo = topological_order(&adj)?;

    let words = n.div_ceil(64);
    let mut reach = vec![vec![0u64; words]; n];
    for &u in topo.iter().rev() {
        let mut r = vec![0u64; words];
        for &v in &adj[u] {
            r[v / 64] |= 1 << (v % 64);
            for (dst, src) in r.iter_mut().zip(&reach[v]) {
                *dst |= src;
            }
        }
        reach[u] = r;
    }

    let mut out = Vec::new();
    for (u, children) in adj.iter().enumerate() {
        for &v in children {
            let redundant = children
                .iter()
                .any(|&w| w != v && reach[w][v / 64] & (1 << (v % 64)) != 0);
            if !redundant {
                out.push((u, v));
            }
        }
    }
    Ok(out)
}

fn topological_order(adj: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = adj.len();
    let mut indeg = vec![0usize; n];
    for cs in adj {
        for &v in cs {
            indeg[v] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = stack.pop() {
        order.push(u);
        for &v in &adj[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                stack.push(v);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Domain("relation contains a cycle".into()));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn points(rows: &[&[f64]]) -> PointSet {
        let pairs: Vec<(usize, Vec<f64>)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.to_vec()))
            .collect();
        PointSet::from_pairs(&pairs).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, k: usize, grid: Option<u32>) -> PointSet {
        let mut set = PointSet::new(k);
        for i in 0..n {
            let p: Vec<f64> = (0..k)
                .map(|_| match grid {
                    Some(g) => rng.random_range(0..g) as f64 / (2 * g) as f64,
                    None => rng.random_range(0.0..0.5),
                })
                .collect();
            set.push(i, &p).unwrap();
        }
        set
    }

    /// Maximal elements of the live nodes, by brute force.
    fn brute_maximal(points: &PointSet, order: PartialOrder, live: &[bool]) -> BTreeSet<usize> {
        (0..points.len())
            .filter(|&a| live[a])
            .filter(|&a| {
                !(0..points.len()).any(|b| {
                    live[b] && less_than_unchecked(order, points.point(a), points.point(b))
                })
            })
            .collect()
    }

    #[test]
    fn less_than_examples() {
        use PartialOrder::*;
        assert!(less_than(Product, &[0.1, 0.3], &[0.2, 0.4]).unwrap());
        assert!(!less_than(Product, &[0.1, 0.5], &[0.4, 0.2]).unwrap());
        assert!(!less_than(Product, &[0.4, 0.2], &[0.1, 0.5]).unwrap());
        assert!(less_than(MaxNorm, &[0.1, 0.3], &[0.2, 0.4]).unwrap());
        assert!(!less_than(Empty, &[0.1, 0.3], &[0.2, 0.4]).unwrap());
        assert!(!less_than(Product, &[0.2, 0.2], &[0.2, 0.2]).unwrap());
        assert!(less_than(Product, &[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn reduction_drops_implied_edge() {
        // a=0, b=1, c=2 with a ≺ b, c ≺ a, c ≺ b
        let reduced = transitive_reduction(3, &[(1, 0), (0, 2), (1, 2)]).unwrap();
        assert_eq!(reduced, vec![(0, 2), (1, 0)]);
    }

    #[test]
    fn reduction_rejects_cycles() {
        assert!(transitive_reduction(2, &[(0, 1), (1, 0)]).is_err());
        assert!(transitive_reduction(2, &[(0, 0)]).is_err());
    }

    #[test]
    fn product_roots_example() {
        let pts = points(&[&[0.1, 0.1], &[0.2, 0.3], &[0.3, 0.2]]);
        let idx = build_index(&pts, PartialOrder::Product);
        assert_eq!(idx.roots().sorted(), vec![1, 2]);
        let live = vec![true; 3];
        assert_eq!(
            brute_maximal(&pts, PartialOrder::Product, &live),
            [1, 2].into_iter().collect()
        );
    }

    #[test]
    fn empty_order_has_all_roots() {
        let pts = points(&[&[0.1], &[0.2], &[0.3], &[0.4], &[0.4]]);
        let idx = build_index(&pts, PartialOrder::Empty);
        assert_eq!(idx.roots().len(), 5);
        match idx {
            PosetIndex::Dag(d) => assert!(d.edges().is_empty()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn chain_removal_promotes_child() {
        // single edge a -> c
        let mut idx = PosetIndex::Dag(DagIndex::from_reduced_edges(2, &[(0, 1)]));
        assert_eq!(idx.roots().sorted(), vec![0]);
        assert_eq!(idx.remove_root(0).unwrap(), vec![1]);
        assert!(idx.remove_root(0).is_err());
    }

    #[test]
    fn removing_non_root_is_a_contract_violation() {
        let pts = points(&[&[0.1, 0.1], &[0.2, 0.3]]);
        let mut idx = build_index(&pts, PartialOrder::Product);
        assert!(matches!(idx.remove_root(0), Err(Error::Contract(_))));
        let mut idx = build_index(&pts, PartialOrder::MaxNorm);
        assert!(matches!(idx.remove_root(0), Err(Error::Contract(_))));
    }

    #[test]
    fn removing_a_root_promotes_its_child() {
        // nodes a, b, c with b ≺ a (edge a -> b) and c
        // incomparable; removing a promotes b
        let pts = points(&[&[0.40, 0.45], &[0.30, 0.35], &[0.10, 0.48]]);
        let mut idx = build_index(&pts, PartialOrder::Product);
        assert_eq!(idx.roots().sorted(), vec![0, 2]);
        assert_eq!(idx.remove_root(0).unwrap(), vec![1]);
        assert_eq!(idx.roots().sorted(), vec![1, 2]);
    }

    #[test]
    fn duplicates_coexist_as_roots() {
        let pts = points(&[&[0.2, 0.2], &[0.2, 0.2], &[0.1, 0.1]]);
        let mut idx = build_index(&pts, PartialOrder::Product);
        assert_eq!(idx.roots().sorted(), vec![0, 1]);
        assert!(idx.remove_root(0).unwrap().is_empty());
        assert_eq!(idx.remove_root(1).unwrap(), vec![2]);
    }

    #[test]
    fn maxnorm_ties_share_the_root_set() {
        let pts = points(&[&[0.3, 0.1], &[0.1, 0.3], &[0.2, 0.2], &[0.05, 0.05]]);
        let mut idx = build_index(&pts, PartialOrder::MaxNorm);
        assert_eq!(idx.roots().sorted(), vec![0, 1]);
        assert!(idx.remove_root(1).unwrap().is_empty());
        assert_eq!(idx.remove_root(0).unwrap(), vec![2]);
        assert_eq!(idx.remove_root(2).unwrap(), vec![3]);
        assert!(idx.remove_root(3).unwrap().is_empty());
        assert!(idx.roots().is_empty());
    }

    #[test]
    fn product_covers_match_generic_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let k = 1 + trial % 3;
            let grid = if trial % 2 == 0 { Some(4) } else { None };
            let pts = random_points(&mut rng, 30, k, grid);
            let mut fast = product_covers(&pts);
            fast.sort_unstable();
            let generic = build_index_generic(&pts, PartialOrder::Product).unwrap();
            assert_eq!(fast, generic.edges(), "trial {trial}");
        }
    }

    #[test]
    fn random_product_poset_root_updates_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 50, 2, None);
        let mut idx = build_index(&pts, PartialOrder::Product);
        let mut live = vec![true; 50];
        let mut prev = brute_maximal(&pts, PartialOrder::Product, &live);
        assert_eq!(
            idx.roots().sorted().into_iter().collect::<BTreeSet<_>>(),
            prev
        );
        while !idx.roots().is_empty() {
            let roots = idx.roots().sorted();
            let v = roots[rng.random_range(0..roots.len())];
            let promoted: BTreeSet<usize> = idx.remove_root(v).unwrap().into_iter().collect();
            live[v] = false;
            let now = brute_maximal(&pts, PartialOrder::Product, &live);
            let mut expected_new: BTreeSet<usize> = now.difference(&prev).copied().collect();
            expected_new.remove(&v);
            assert_eq!(promoted, expected_new);
            prev = now;
        }
        assert!(live.iter().all(|l| !l));
    }

    #[test]
    fn layered_matches_generic_dag_under_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let pts = random_points(&mut rng, 25, 2, Some(5));
            let mut fast = build_index(&pts, PartialOrder::MaxNorm);
            let mut slow =
                PosetIndex::Dag(build_index_generic(&pts, PartialOrder::MaxNorm).unwrap());
            while !fast.roots().is_empty() {
                assert_eq!(fast.roots().sorted(), slow.roots().sorted());
                let roots = fast.roots().sorted();
                let v = roots[rng.random_range(0..roots.len())];
                let mut a = fast.remove_root(v).unwrap();
                let mut b = slow.remove_root(v).unwrap();
                a.sort_unstable();
                b.sort_unstable();
                assert_eq!(a, b);
            }
            assert!(slow.roots().is_empty());
        }
    }
}
