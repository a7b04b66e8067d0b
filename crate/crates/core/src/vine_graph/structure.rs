use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A first-tree vertex `(t, j)`: variable `j` (1-based) observed at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(i32, u32)", into = "(i32, u32)")]
pub struct VertexId {
    pub time: i32,
    pub var: u32,
}

impl VertexId {
    pub const fn new(time: i32, var: u32) -> Self {
        VertexId { time, var }
    }

    pub fn shifted(self, tau: i32) -> Self {
        VertexId {
            time: self.time + tau,
            var: self.var,
        }
    }
}

impl From<(i32, u32)> for VertexId {
    fn from((time, var): (i32, u32)) -> Self {
        VertexId { time, var }
    }
}

impl From<VertexId> for (i32, u32) {
    fn from(v: VertexId) -> Self {
        (v.time, v.var)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.time, self.var)
    }
}

/// Edge label `(a, b | D)`. The conditioned pair is stored with `a < b` in
/// `(time, var)` order and the conditioning set is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeLabel {
    pub a: VertexId,
    pub b: VertexId,
    pub conditioning: Vec<VertexId>,
}

impl EdgeLabel {
    pub fn new(a: VertexId, b: VertexId, mut conditioning: Vec<VertexId>) -> Self {
        conditioning.sort_unstable();
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        EdgeLabel { a, b, conditioning }
    }

    pub fn level(&self) -> usize {
        self.conditioning.len() + 1
    }

    /// Sorted `{a, b} ∪ D`.
    pub fn complete_union(&self) -> Vec<VertexId> {
        let mut cu = self.conditioning.clone();
        cu.push(self.a);
        cu.push(self.b);
        cu.sort_unstable();
        cu
    }

    pub fn shifted(&self, tau: i32) -> Self {
        EdgeLabel {
            a: self.a.shifted(tau),
            b: self.b.shifted(tau),
            conditioning: self.conditioning.iter().map(|v| v.shifted(tau)).collect(),
        }
    }

    fn vertices(&self) -> impl Iterator<Item = &VertexId> {
        [&self.a, &self.b].into_iter().chain(self.conditioning.iter())
    }

    pub fn min_time(&self) -> i32 {
        self.vertices().map(|v| v.time).min().expect("label has vertices")
    }

    pub fn max_time(&self) -> i32 {
        self.vertices().map(|v| v.time).max().expect("label has vertices")
    }

    /// Largest minus smallest time index over the complete union.
    pub fn span(&self) -> i32 {
        self.max_time() - self.min_time()
    }

    /// Time distance between the two conditioned vertices.
    pub fn gap(&self) -> i32 {
        (self.b.time - self.a.time).abs()
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)?;
        if !self.conditioning.is_empty() {
            write!(f, "|")?;
            for (i, v) in self.conditioning.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{v}")?;
            }
        }
        Ok(())
    }
}

fn parse_vertex_list(s: &str) -> Result<Vec<VertexId>> {
    let bad = || Error::domain(format!("cannot parse vertex list '{s}'"));
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        rest = rest.trim_start_matches([',', ' ']);
        if rest.is_empty() {
            break;
        }
        let open = rest.strip_prefix('(').ok_or_else(bad)?;
        let close = open.find(')').ok_or_else(bad)?;
        let (t, v) = open[..close].split_once(',').ok_or_else(bad)?;
        out.push(VertexId::new(
            t.trim().parse().map_err(|_| bad())?,
            v.trim().parse().map_err(|_| bad())?,
        ));
        rest = &open[close + 1..];
    }
    Ok(out)
}

impl FromStr for EdgeLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (pair, cond) = match s.split_once('|') {
            Some((p, c)) => (p, c),
            None => (s, ""),
        };
        let (a, b) = pair
            .split_once(")-(")
            .map(|(a, b)| (format!("{a})"), format!("({b}")))
            .ok_or_else(|| Error::domain(format!("cannot parse edge label '{s}'")))?;
        let a = parse_vertex_list(&a)?;
        let b = parse_vertex_list(&b)?;
        if a.len() != 1 || b.len() != 1 {
            return Err(Error::domain(format!("cannot parse edge label '{s}'")));
        }
        Ok(EdgeLabel::new(a[0], b[0], parse_vertex_list(cond)?))
    }
}

/// An edge at some tree level, joining two items of the level below.
///
/// `children[0]` is the item whose complete union contributes `label.a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VineEdge {
    pub label: EdgeLabel,
    pub children: [usize; 2],
}

impl VineEdge {
    pub fn level(&self) -> usize {
        self.label.level()
    }
}

/// A nested sequence of graphs on first-tree vertices. It is a vine when
/// [`VineStructure::check_vine`] succeeds; restrictions need not be.
#[derive(Debug, Clone)]
pub struct VineStructure {
    vertices: Vec<VertexId>,
    trees: Vec<Vec<VineEdge>>,
    cu_index: Vec<HashMap<Vec<VertexId>, usize>>,
}

impl PartialEq for VineStructure {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.label_sets() == other.label_sets()
    }
}

impl VineStructure {
    /// Empty structure on the given vertex set.
    pub fn empty(mut vertices: Vec<VertexId>) -> Result<Self> {
        vertices.sort_unstable();
        let n = vertices.len();
        vertices.dedup();
        if vertices.len() != n {
            return Err(Error::structure("duplicate first-tree vertex"));
        }
        Ok(VineStructure {
            vertices,
            trees: Vec::new(),
            cu_index: Vec::new(),
        })
    }

    /// Builds a structure from index pairs: level 1 pairs index `vertices`
    /// (after sorting), level k pairs index the edges of level k−1.
    pub fn from_pairs(vertices: Vec<VertexId>, levels: &[Vec<(usize, usize)>]) -> Result<Self> {
        let mut s = Self::empty(vertices)?;
        for (li, pairs) in levels.iter().enumerate() {
            s.trees.push(Vec::new());
            s.cu_index.push(HashMap::new());
            for &(x, y) in pairs {
                s.push_edge(li + 1, x, y)?;
            }
        }
        Ok(s)
    }

    /// Builds a structure from edge labels, resolving endpoints through
    /// complete unions.
    pub fn from_labels(vertices: Vec<VertexId>, levels: &[Vec<EdgeLabel>]) -> Result<Self> {
        let mut s = Self::empty(vertices)?;
        for labels in levels {
            s.push_level_labels(labels)?;
        }
        Ok(s)
    }

    pub(crate) fn push_level_labels(&mut self, labels: &[EdgeLabel]) -> Result<()> {
        let level = self.trees.len() + 1;
        self.trees.push(Vec::new());
        self.cu_index.push(HashMap::new());
        for lab in labels {
            if lab.level() != level {
                return Err(Error::structure(format!(
                    "edge {lab} has conditioning set of size {} at level {level}",
                    lab.conditioning.len()
                )));
            }
            let mut ua = lab.conditioning.clone();
            ua.push(lab.a);
            ua.sort_unstable();
            let mut ub = lab.conditioning.clone();
            ub.push(lab.b);
            ub.sort_unstable();
            let x = self.find_item(level - 1, &ua).ok_or_else(|| {
                Error::Lookup(format!("edge {lab}: no item with complete union {ua:?} at level {}", level - 1))
            })?;
            let y = self.find_item(level - 1, &ub).ok_or_else(|| {
                Error::Lookup(format!("edge {lab}: no item with complete union {ub:?} at level {}", level - 1))
            })?;
            self.push_edge(level, x, y)?;
        }
        Ok(())
    }

    /// Index of the item at `level` (0 = vertices) with complete union `cu`.
    pub(crate) fn find_item(&self, level: usize, cu: &[VertexId]) -> Option<usize> {
        if level == 0 {
            if cu.len() != 1 {
                return None;
            }
            self.vertices.binary_search(&cu[0]).ok()
        } else {
            self.cu_index.get(level - 1)?.get(cu).copied()
        }
    }

    /// Complete union of an item: a vertex at level 0, an edge otherwise.
    pub fn item_cu(&self, level: usize, idx: usize) -> Vec<VertexId> {
        if level == 0 {
            vec![self.vertices[idx]]
        } else {
            self.trees[level - 1][idx].label.complete_union()
        }
    }

    pub(crate) fn push_edge(&mut self, level: usize, x: usize, y: usize) -> Result<usize> {
        let below = if level == 1 {
            self.vertices.len()
        } else {
            self.trees[level - 2].len()
        };
        if x >= below || y >= below || x == y {
            return Err(Error::structure(format!(
                "invalid endpoints ({x}, {y}) at level {level}"
            )));
        }
        if level >= 2 {
            let cx = self.trees[level - 2][x].children;
            let cy = self.trees[level - 2][y].children;
            let shared = cx.iter().filter(|c| cy.contains(c)).count();
            if shared != 1 {
                return Err(Error::structure(format!(
                    "proximity violated at level {level}: {} and {} share {shared} vertices",
                    self.trees[level - 2][x].label,
                    self.trees[level - 2][y].label
                )));
            }
        }
        let ux = self.item_cu(level - 1, x);
        let uy = self.item_cu(level - 1, y);
        let d: Vec<VertexId> = ux.iter().filter(|v| uy.contains(v)).copied().collect();
        let a: Vec<VertexId> = ux.iter().filter(|v| !d.contains(v)).copied().collect();
        let b: Vec<VertexId> = uy.iter().filter(|v| !d.contains(v)).copied().collect();
        if a.len() != 1 || b.len() != 1 || d.len() != level - 1 {
            return Err(Error::structure(format!(
                "edge at level {level} joining {ux:?} and {uy:?} has no valid label"
            )));
        }
        let label = EdgeLabel::new(a[0], b[0], d);
        let children = if label.a == a[0] { [x, y] } else { [y, x] };
        let cu = label.complete_union();
        let tree = &mut self.trees[level - 1];
        let idx = tree.len();
        if self.cu_index[level - 1].insert(cu, idx).is_some() {
            return Err(Error::structure(format!(
                "duplicate complete union for edge {label} at level {level}"
            )));
        }
        tree.push(VineEdge { label, children });
        Ok(idx)
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Number of levels stored (empty levels included).
    pub fn n_levels(&self) -> usize {
        self.trees.len()
    }

    /// Edges of tree level `k` (1-based).
    pub fn tree(&self, k: usize) -> &[VineEdge] {
        &self.trees[k - 1]
    }

    pub fn trees(&self) -> &[Vec<VineEdge>] {
        &self.trees
    }

    pub fn edges(&self) -> impl Iterator<Item = &VineEdge> {
        self.trees.iter().flatten()
    }

    pub fn n_edges(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    pub fn min_time(&self) -> i32 {
        self.vertices.iter().map(|v| v.time).min().unwrap_or(0)
    }

    pub fn max_time(&self) -> i32 {
        self.vertices.iter().map(|v| v.time).max().unwrap_or(0)
    }

    /// Sorted distinct variable indices.
    pub fn vars(&self) -> Vec<u32> {
        let s: BTreeSet<u32> = self.vertices.iter().map(|v| v.var).collect();
        s.into_iter().collect()
    }

    /// Position of the edge with this label, as `(level, index)`.
    pub fn find_edge(&self, label: &EdgeLabel) -> Option<(usize, usize)> {
        let level = label.level();
        let idx = self.find_item(level, &label.complete_union())?;
        (self.trees[level - 1][idx].label == *label).then_some((level, idx))
    }

    /// Complete union of an edge that belongs to this structure.
    pub fn complete_union(&self, label: &EdgeLabel) -> Result<Vec<VertexId>> {
        let (level, idx) = self
            .find_edge(label)
            .ok_or_else(|| Error::Lookup(format!("edge {label} is not part of the structure")))?;
        Ok(self.item_cu(level, idx))
    }

    /// Verifies the tree and proximity conditions. The error names the first
    /// offending level.
    pub fn check_vine(&self) -> std::result::Result<(), String> {
        let n = self.vertices.len();
        if n == 0 {
            return Err("no vertices".into());
        }
        let needed = n - 1;
        for k in 1..=needed {
            let edges = self.trees.get(k - 1).map(Vec::as_slice).unwrap_or(&[]);
            let n_items = n - (k - 1);
            if edges.len() != n_items - 1 {
                return Err(format!(
                    "level {k} has {} edges, a tree on {n_items} vertices needs {}",
                    edges.len(),
                    n_items - 1
                ));
            }
            let mut uf = UnionFind::new(n_items);
            for e in edges {
                if !uf.union(e.children[0], e.children[1]) {
                    return Err(format!("level {k} contains a cycle through edge {}", e.label));
                }
            }
            if uf.components() != 1 {
                return Err(format!("level {k} is disconnected"));
            }
        }
        if self.trees.iter().skip(needed).any(|t| !t.is_empty()) {
            return Err("edges above the last admissible level".into());
        }
        Ok(())
    }

    pub fn is_vine(&self) -> bool {
        self.check_vine().is_ok()
    }

    /// Keeps the items whose complete unions lie in the time window `[t, t + m]`.
    pub fn restrict(&self, t: i32, m: i32) -> Result<VineStructure> {
        let (t0, t_max) = (self.min_time(), self.max_time());
        if t < t0 || t > t_max || m < 0 || t + m > t_max {
            return Err(Error::domain(format!(
                "window ({t}, {m}) outside the time range [{t0}, {t_max}]"
            )));
        }
        let inside = |v: &VertexId| v.time >= t && v.time <= t + m;
        let vertices: Vec<VertexId> = self.vertices.iter().copied().filter(inside).collect();
        let n = vertices.len();
        let mut out = VineStructure::empty(vertices)?;
        // map old item index -> new item index at the level below
        let mut remap: Vec<Option<usize>> = self
            .vertices
            .iter()
            .map(|v| out.vertices.binary_search(v).ok())
            .collect();
        for tree in self.trees.iter().take(n.saturating_sub(1)) {
            let mut next = vec![None; tree.len()];
            let mut level = Vec::new();
            let mut index = HashMap::new();
            for (i, e) in tree.iter().enumerate() {
                if !e.label.complete_union().iter().all(inside) {
                    continue;
                }
                let (Some(x), Some(y)) = (remap[e.children[0]], remap[e.children[1]]) else {
                    continue;
                };
                next[i] = Some(level.len());
                index.insert(e.label.complete_union(), level.len());
                level.push(VineEdge {
                    label: e.label.clone(),
                    children: [x, y],
                });
            }
            out.trees.push(level);
            out.cu_index.push(index);
            remap = next;
        }
        while out.trees.len() < n.saturating_sub(1) {
            out.trees.push(Vec::new());
            out.cu_index.push(HashMap::new());
        }
        Ok(out)
    }

    /// Per-level sets of edge labels.
    pub fn label_sets(&self) -> Vec<BTreeSet<EdgeLabel>> {
        let mut sets: Vec<BTreeSet<EdgeLabel>> = self
            .trees
            .iter()
            .map(|t| t.iter().map(|e| e.label.clone()).collect())
            .collect();
        while sets.last().is_some_and(BTreeSet::is_empty) {
            sets.pop();
        }
        sets
    }

    /// Copy with every time index shifted by `tau`.
    pub fn shifted(&self, tau: i32) -> VineStructure {
        VineStructure {
            vertices: self.vertices.iter().map(|v| v.shifted(tau)).collect(),
            trees: self
                .trees
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|e| VineEdge {
                            label: e.label.shifted(tau),
                            children: e.children,
                        })
                        .collect()
                })
                .collect(),
            cu_index: self
                .cu_index
                .iter()
                .map(|m| {
                    m.iter()
                        .map(|(k, &v)| (k.iter().map(|x| x.shifted(tau)).collect(), v))
                        .collect()
                })
                .collect(),
        }
    }
}

/// True iff one time shift maps every edge of `g2` onto an edge of `g1`
/// level by level, and vice versa.
pub fn is_translation(g1: &VineStructure, g2: &VineStructure) -> bool {
    if g1.n_vertices() != g2.n_vertices() {
        return false;
    }
    let tau = g1.min_time() - g2.min_time();
    let shifted: Vec<VertexId> = g2.vertices().iter().map(|v| v.shifted(tau)).collect();
    if shifted != g1.vertices() {
        return false;
    }
    let s1 = g1.label_sets();
    let s2 = g2.label_sets();
    s1.len() == s2.len()
        && s1.iter().zip(&s2).all(|(a, b)| {
            a.len() == b.len() && b.iter().all(|e| a.contains(&e.shifted(tau)))
        })
}

/// Outcome of a stationarity check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationarityReport {
    pub stationary: bool,
    /// First violating window `(t, m)`, scanning `m` then `t` in increasing order.
    pub witness: Option<(i32, i32)>,
    pub reason: Option<String>,
}

/// Checks that every restriction to a window `[t, t + m]` is a vine and a
/// translation of the restriction to `[1, 1 + m]`.
pub fn is_stationary_vine(vine: &VineStructure) -> StationarityReport {
    let fail = |t, m, reason: String| StationarityReport {
        stationary: false,
        witness: Some((t, m)),
        reason: Some(reason),
    };
    let (t0, t_max) = (vine.min_time(), vine.max_time());
    let vars = vine.vars();
    let full = (t_max - t0 + 1) as usize * vars.len();
    if full != vine.n_vertices() {
        return StationarityReport {
            stationary: false,
            witness: None,
            reason: Some("vertex set is not a full time-by-variable grid".into()),
        };
    }
    if let Err(msg) = vine.check_vine() {
        return StationarityReport {
            stationary: false,
            witness: None,
            reason: Some(format!("not a vine: {msg}")),
        };
    }
    for m in 0..=(t_max - t0) {
        let base = match vine.restrict(t0, m) {
            Ok(r) => r,
            Err(e) => return fail(t0, m, e.to_string()),
        };
        if let Err(msg) = base.check_vine() {
            return fail(t0, m, format!("restriction is not a vine: {msg}"));
        }
        for t in (t0 + 1)..=(t_max - m) {
            let r = match vine.restrict(t, m) {
                Ok(r) => r,
                Err(e) => return fail(t, m, e.to_string()),
            };
            if let Err(msg) = r.check_vine() {
                return fail(t, m, format!("restriction is not a vine: {msg}"));
            }
            if !is_translation(&r, &base) {
                return fail(t, m, "restriction is not a translation of the first window".into());
            }
        }
    }
    StationarityReport {
        stationary: true,
        witness: None,
        reason: None,
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    comps: usize,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            comps: n,
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `x` and `y` were already connected.
    pub(crate) fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        self.parent[rx] = ry;
        self.comps -= 1;
        true
    }

    pub(crate) fn components(&self) -> usize {
        self.comps
    }
}
