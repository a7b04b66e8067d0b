use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::structure::{EdgeLabel, UnionFind, VertexId, VineStructure};
use crate::error::{Error, Result};

/// Translation-equivalence class of edges, represented by the member whose
/// smallest time index is 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeClass(EdgeLabel);

impl EdgeClass {
    pub fn of(label: &EdgeLabel) -> Self {
        EdgeClass(label.shifted(1 - label.min_time()))
    }

    pub fn label(&self) -> &EdgeLabel {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.level()
    }

    pub fn span(&self) -> i32 {
        self.0.span()
    }

    /// Member of the class whose smallest time index is `t`.
    pub fn at_time(&self, t: i32) -> EdgeLabel {
        self.0.shifted(t - 1)
    }
}

impl fmt::Display for EdgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for EdgeClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(EdgeClass::of(&s.parse::<EdgeLabel>()?))
    }
}

impl Serialize for EdgeClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cross-sectional vine, compatible in/out permutations and Markov order.
#[derive(Debug, Clone, PartialEq)]
pub struct SVineSpec {
    cross_section: VineStructure,
    in_perm: Vec<u32>,
    out_perm: Vec<u32>,
    markov_order: usize,
}

impl SVineSpec {
    /// The cross-section may use any constant time index; it is stored at time 0.
    pub fn new(
        cross_section: VineStructure,
        in_perm: Vec<u32>,
        out_perm: Vec<u32>,
        markov_order: usize,
    ) -> Result<Self> {
        let cs = normalize_cross_section(cross_section)?;
        for (name, perm) in [("in_perm", &in_perm), ("out_perm", &out_perm)] {
            if !is_compatible(&cs, perm) {
                return Err(Error::structure(format!(
                    "{name} {perm:?} is not compatible with the cross-sectional vine"
                )));
            }
        }
        Ok(SVineSpec {
            cross_section: cs,
            in_perm,
            out_perm,
            markov_order,
        })
    }

    pub fn d(&self) -> usize {
        self.cross_section.n_vertices()
    }

    pub fn cross_section(&self) -> &VineStructure {
        &self.cross_section
    }

    pub fn in_perm(&self) -> &[u32] {
        &self.in_perm
    }

    pub fn out_perm(&self) -> &[u32] {
        &self.out_perm
    }

    pub fn markov_order(&self) -> usize {
        self.markov_order
    }

    pub fn with_markov_order(&self, p: usize) -> Self {
        SVineSpec {
            markov_order: p,
            ..self.clone()
        }
    }
}

fn normalize_cross_section(cs: VineStructure) -> Result<VineStructure> {
    let d = cs.n_vertices();
    if d == 0 {
        return Err(Error::structure("cross-sectional vine has no vertices"));
    }
    let t = cs.min_time();
    if cs.max_time() != t {
        return Err(Error::structure("cross-sectional vine spans several time points"));
    }
    let cs = cs.shifted(-t);
    let expected: Vec<VertexId> = (1..=d as u32).map(|j| VertexId::new(0, j)).collect();
    if cs.vertices() != expected.as_slice() {
        return Err(Error::structure(format!(
            "cross-sectional variables must be 1..{d}"
        )));
    }
    cs.check_vine()
        .map_err(|m| Error::structure(format!("cross-sectional structure: {m}")))?;
    Ok(cs)
}

type VarKey = (u32, u32, Vec<u32>);

fn var_key(x: u32, y: u32, mut cond: Vec<u32>) -> VarKey {
    cond.sort_unstable();
    (x.min(y), x.max(y), cond)
}

fn cross_section_keys(cs: &VineStructure) -> HashSet<VarKey> {
    cs.edges()
        .map(|e| {
            var_key(
                e.label.a.var,
                e.label.b.var,
                e.label.conditioning.iter().map(|v| v.var).collect(),
            )
        })
        .collect()
}

/// Whether position `k` (0-based, `k ≥ 1`) of `perm` extends its prefix.
fn extends(keys: &HashSet<VarKey>, perm: &[u32], k: usize) -> bool {
    let prefix = &perm[..k];
    (0..k).any(|r| {
        let cond: Vec<u32> = prefix
            .iter()
            .enumerate()
            .filter(|&(s, _)| s != r)
            .map(|(_, &v)| v)
            .collect();
        keys.contains(&var_key(perm[k], perm[r], cond))
    })
}

fn is_permutation(perm: &[u32], d: usize) -> bool {
    let mut seen = vec![false; d + 1];
    perm.len() == d
        && perm.iter().all(|&v| {
            let ok = v >= 1 && (v as usize) <= d && !seen[v as usize];
            if ok {
                seen[v as usize] = true;
            }
            ok
        })
}

/// Checks that each `perm[k]` is joined to some earlier `perm[r]` by an edge of
/// the cross-sectional vine conditioned on the remaining earlier entries.
pub fn is_compatible(cs: &VineStructure, perm: &[u32]) -> bool {
    let d = cs.n_vertices();
    if !is_permutation(perm, d) {
        return false;
    }
    let keys = cross_section_keys(cs);
    (1..d).all(|k| extends(&keys, perm, k))
}

/// Largest dimension accepted by [`enumerate_compatible`].
pub const ENUMERATION_MAX_DIM: usize = 10;

/// All compatible permutations, optionally with a fixed first entry.
pub fn enumerate_compatible(cs: &VineStructure, first: Option<u32>) -> Result<Vec<Vec<u32>>> {
    let d = cs.n_vertices();
    if d > ENUMERATION_MAX_DIM {
        return Err(Error::Guard(format!(
            "enumeration is limited to d <= {ENUMERATION_MAX_DIM} (got {d}); check candidate orders with is_compatible instead"
        )));
    }
    if let Some(f) = first {
        if f == 0 || f as usize > d {
            return Err(Error::domain(format!("first index {f} outside 1..{d}")));
        }
    }
    let keys = cross_section_keys(cs);
    let mut out = Vec::new();
    let starts: Vec<u32> = match first {
        Some(f) => vec![f],
        None => (1..=d as u32).collect(),
    };
    let mut perm = Vec::with_capacity(d);
    for s in starts {
        perm.clear();
        perm.push(s);
        extend_all(&keys, d, &mut perm, &mut out);
    }
    Ok(out)
}

fn extend_all(keys: &HashSet<VarKey>, d: usize, perm: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if perm.len() == d {
        out.push(perm.clone());
        return;
    }
    for v in 1..=d as u32 {
        if perm.contains(&v) {
            continue;
        }
        perm.push(v);
        if extends(keys, perm, perm.len() - 1) {
            extend_all(keys, d, perm, out);
        }
        perm.pop();
    }
}

/// Labels of the cross-time edges at level `k` linking times `t` and `t + 1`.
pub fn linking_edges(spec: &SVineSpec, k: usize, t: i32) -> Vec<EdgeLabel> {
    let (ip, jp) = (&spec.in_perm, &spec.out_perm);
    (1..=k)
        .map(|r| {
            let a = VertexId::new(t, ip[k - r]);
            let b = VertexId::new(t + 1, jp[r - 1]);
            let mut cond: Vec<VertexId> = ip[..k - r].iter().map(|&i| VertexId::new(t, i)).collect();
            cond.extend(jp[..r - 1].iter().map(|&j| VertexId::new(t + 1, j)));
            EdgeLabel::new(a, b, cond)
        })
        .collect()
}

/// The stationary vine on times `1..=t_len` determined by `spec`.
pub fn build_svine(spec: &SVineSpec, t_len: usize) -> Result<VineStructure> {
    if t_len == 0 {
        return Err(Error::domain("build_svine needs at least one time point"));
    }
    let d = spec.d();
    let t_len_i = t_len as i32;
    let vertices: Vec<VertexId> = (1..=t_len_i)
        .flat_map(|t| (1..=d as u32).map(move |j| VertexId::new(t, j)))
        .collect();
    let n = vertices.len();
    let mut vine = VineStructure::empty(vertices)?;
    let explicit_levels = d.min(n - 1);
    for k in 1..=explicit_levels {
        let mut labels = Vec::new();
        if k < d {
            for e in spec.cross_section.tree(k) {
                for t in 1..=t_len_i {
                    labels.push(e.label.shifted(t));
                }
            }
        }
        for t in 1..t_len_i {
            labels.extend(linking_edges(spec, k, t));
        }
        vine.push_level_labels(&labels)?;
    }
    for k in (explicit_levels + 1)..n {
        continue_level(&mut vine, k)?;
    }
    vine.check_vine()
        .map_err(|m| Error::structure(format!("constructed S-vine is invalid: {m}")))?;
    Ok(vine)
}

struct Candidate {
    x: usize,
    y: usize,
    label: EdgeLabel,
}

/// Adds level `k` by growing spanning trees window by window: edges whose
/// complete union spans `m` time steps are chosen after all shorter ones,
/// smaller gaps between the conditioned vertices first, and every
/// translation of a chosen edge is added with it.
fn continue_level(vine: &mut VineStructure, k: usize) -> Result<()> {
    let prev = vine.tree(k - 1).to_vec();
    let (t0, t_max) = (vine.min_time(), vine.max_time());

    let mut parents: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, e) in prev.iter().enumerate() {
        for &c in &e.children {
            parents.entry(c).or_default().push(i);
        }
    }
    let mut seen = HashSet::new();
    let mut cands: Vec<Candidate> = Vec::new();
    for list in parents.values() {
        for (p, &x) in list.iter().enumerate() {
            for &y in &list[p + 1..] {
                let key = (x.min(y), x.max(y));
                if !seen.insert(key) {
                    continue;
                }
                let ux = prev[x].label.complete_union();
                let uy = prev[y].label.complete_union();
                let d: Vec<VertexId> = ux.iter().filter(|v| uy.contains(v)).copied().collect();
                if d.len() != k - 1 {
                    continue;
                }
                let a = *ux.iter().find(|v| !d.contains(v)).expect("distinct unions");
                let b = *uy.iter().find(|v| !d.contains(v)).expect("distinct unions");
                cands.push(Candidate {
                    x: key.0,
                    y: key.1,
                    label: EdgeLabel::new(a, b, d),
                });
            }
        }
    }
    let mut by_class: BTreeMap<EdgeClass, Vec<usize>> = BTreeMap::new();
    for (i, c) in cands.iter().enumerate() {
        by_class.entry(EdgeClass::of(&c.label)).or_default().push(i);
    }

    let prev_cu: Vec<Vec<VertexId>> = prev.iter().map(|e| e.label.complete_union()).collect();
    let mut chosen: Vec<usize> = Vec::new();
    for m in 0..=(t_max - t0) {
        let hi = t0 + m;
        let inside = |cu: &[VertexId]| cu.iter().all(|v| v.time <= hi);
        let window: Vec<usize> = (0..prev.len()).filter(|&i| inside(&prev_cu[i])).collect();
        if window.is_empty() {
            continue;
        }
        let local: HashMap<usize, usize> = window.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let mut uf = UnionFind::new(window.len());
        for &c in &chosen {
            let cand = &cands[c];
            if cand.label.max_time() <= hi {
                uf.union(local[&cand.x], local[&cand.y]);
            }
        }
        let mut fresh: Vec<usize> = (0..cands.len())
            .filter(|&i| cands[i].label.min_time() == t0 && cands[i].label.max_time() == hi)
            .collect();
        fresh.sort_by(|&i, &j| {
            (cands[i].label.gap(), &cands[i].label).cmp(&(cands[j].label.gap(), &cands[j].label))
        });
        let mut g = 0;
        while g < fresh.len() {
            let gap = cands[fresh[g]].label.gap();
            let group: Vec<usize> = fresh[g..]
                .iter()
                .copied()
                .take_while(|&i| cands[i].label.gap() == gap)
                .collect();
            g += group.len();
            let mut useful = Vec::new();
            for &c in &group {
                let (rx, ry) = (uf.find(local[&cands[c].x]), uf.find(local[&cands[c].y]));
                if rx != ry {
                    useful.push(c);
                }
            }
            for &c in &useful {
                if !uf.union(local[&cands[c].x], local[&cands[c].y]) {
                    return Err(Error::structure(format!(
                        "ambiguous continuation at level {k}: edge {} closes a cycle among equally ranked candidates",
                        cands[c].label
                    )));
                }
                let class = EdgeClass::of(&cands[c].label);
                let members = &by_class[&class];
                let expected = (t_max - t0 - m + 1) as usize;
                if members.len() != expected {
                    return Err(Error::structure(format!(
                        "continuation at level {k}: class {class} has {} translates, expected {expected}",
                        members.len()
                    )));
                }
                chosen.extend(members.iter().copied());
            }
        }
        if uf.components() != 1 {
            return Err(Error::structure(format!(
                "continuation at level {k} leaves the window [{t0}, {hi}] disconnected"
            )));
        }
    }
    chosen.sort_by(|&i, &j| {
        (cands[i].label.min_time(), &cands[i].label).cmp(&(cands[j].label.min_time(), &cands[j].label))
    });
    chosen.dedup();
    let labels: Vec<EdgeLabel> = chosen.iter().map(|&c| cands[c].label.clone()).collect();
    vine.push_level_labels(&labels)
}

/// Edge classes and the class of every edge.
#[derive(Debug, Clone)]
pub struct EdgeClasses {
    pub classes: Vec<EdgeClass>,
    /// `members[c]` lists `(level, index)` of each edge in class `c`.
    pub members: Vec<Vec<(usize, usize)>>,
    /// `of_edge[level - 1][index]` is the class index of that edge.
    pub of_edge: Vec<Vec<usize>>,
}

impl EdgeClasses {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Partitions the edges of a vine into translation classes.
pub fn edge_classes(vine: &VineStructure) -> EdgeClasses {
    let mut map: BTreeMap<EdgeClass, Vec<(usize, usize)>> = BTreeMap::new();
    for (li, tree) in vine.trees().iter().enumerate() {
        for (i, e) in tree.iter().enumerate() {
            map.entry(EdgeClass::of(&e.label)).or_default().push((li + 1, i));
        }
    }
    let mut of_edge: Vec<Vec<usize>> = vine.trees().iter().map(|t| vec![0; t.len()]).collect();
    let mut classes = Vec::with_capacity(map.len());
    let mut members = Vec::with_capacity(map.len());
    for (ci, (class, m)) in map.into_iter().enumerate() {
        for &(l, i) in &m {
            of_edge[l - 1][i] = ci;
        }
        classes.push(class);
        members.push(m);
    }
    EdgeClasses {
        classes,
        members,
        of_edge,
    }
}

/// Classes whose lag span exceeds `p`; a Markov(p) model assigns them the
/// independence copula.
pub fn markov_truncate(vine: &VineStructure, p: usize) -> Vec<EdgeClass> {
    edge_classes(vine)
        .classes
        .into_iter()
        .filter(|c| c.span() as usize > p)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    General,
    Stationary,
    Markov(u64),
}

/// Number of distinct pair-copulas in a model on `t_len` time points and
/// `d` variables. Markov orders above `t_len − 1` are treated as `t_len − 1`.
pub fn count_distinct_copulas(t_len: u64, d: u64, mode: CountMode) -> u128 {
    let (t, d) = (t_len as u128, d as u128);
    let cross = d * d.saturating_sub(1) / 2;
    match mode {
        CountMode::General => (t * d) * (t * d).saturating_sub(1) / 2,
        CountMode::Stationary => t.saturating_sub(1) * d * d + cross,
        CountMode::Markov(p) => (p as u128).min(t.saturating_sub(1)) * d * d + cross,
    }
}
