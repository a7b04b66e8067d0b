//! Greedy structure selection.
//!
//! The cross-sectional vine is a maximum spanning tree on absolute Kendall's
//! tau, level by level, using all time points. The in/out orders are then
//! grown one index at a time on a two-period window, each time picking the
//! compatible variable whose new linking edge has the largest absolute tau.

use std::collections::HashMap;

use super::{fit_class, PseudoSample};
use crate::bicop::{FamilyTag, PairData};
use crate::error::{Error, Result};
use crate::stats::kendall_tau;
use crate::vine_graph::{EdgeLabel, SVineSpec, UnionFind, VertexId, VineStructure};

struct Item {
    label: EdgeLabel,
    children: [Vec<VertexId>; 2],
    out: [Vec<f64>; 2],
}

/// Pseudo-observations of edges keyed by complete union.
struct Store<'a> {
    cols: &'a [Vec<f64>],
    /// Row of `cols` holding the first instance of a vertex at time `t` is `t - base`.
    base: i32,
    n: usize,
    items: HashMap<Vec<VertexId>, Item>,
}

impl<'a> Store<'a> {
    fn new(cols: &'a [Vec<f64>], base: i32, n: usize) -> Self {
        Store {
            cols,
            base,
            n,
            items: HashMap::new(),
        }
    }

    /// `C(x | cu \ {x})` for every instance.
    fn value(&self, cu: &[VertexId], x: VertexId) -> Option<&[f64]> {
        if cu.len() == 1 {
            let start = (x.time - self.base) as usize;
            return Some(&self.cols[(x.var - 1) as usize][start..start + self.n]);
        }
        let item = self.items.get(cu)?;
        if item.label.a == x {
            Some(&item.out[0])
        } else if item.label.b == x {
            Some(&item.out[1])
        } else {
            None
        }
    }

    fn args(&self, label: &EdgeLabel) -> Option<(&[f64], &[f64])> {
        let side = |x: VertexId| {
            let mut cu = label.conditioning.clone();
            cu.push(x);
            cu.sort_unstable();
            self.value(&cu, x)
        };
        Some((side(label.a)?, side(label.b)?))
    }

    fn tau(&self, label: &EdgeLabel) -> Option<f64> {
        self.args(label).map(|(a, b)| kendall_tau(a, b).abs())
    }

    fn fit(&mut self, label: EdgeLabel, menu: &[FamilyTag]) -> Result<()> {
        let (a, b) = self
            .args(&label)
            .ok_or_else(|| Error::Lookup(format!("inputs of edge {label} are unavailable")))?;
        let (cop, _, _) = match fit_class(&PairData::new(a, b), menu) {
            Ok(r) => r,
            Err(Error::InsufficientData(_)) => (crate::bicop::BivariateCopula::independence(), 0.0, true),
            Err(e) => return Err(e),
        };
        let ha = a.iter().zip(b).map(|(&x, &y)| cop.h_given_v(x, y)).collect();
        let hb = a.iter().zip(b).map(|(&x, &y)| cop.h_given_u(x, y)).collect();
        let mut ca = label.conditioning.clone();
        ca.push(label.a);
        ca.sort_unstable();
        let mut cb = label.conditioning.clone();
        cb.push(label.b);
        cb.sort_unstable();
        self.items.insert(
            label.complete_union(),
            Item {
                label,
                children: [ca, cb],
                out: [ha, hb],
            },
        );
        Ok(())
    }
}

fn join(x: &[VertexId], y: &[VertexId]) -> Option<EdgeLabel> {
    let d: Vec<VertexId> = x.iter().filter(|v| y.contains(v)).copied().collect();
    let a: Vec<VertexId> = x.iter().filter(|v| !d.contains(v)).copied().collect();
    let b: Vec<VertexId> = y.iter().filter(|v| !d.contains(v)).copied().collect();
    (a.len() == 1 && b.len() == 1).then(|| EdgeLabel::new(a[0], b[0], d))
}

fn cross_section(store: &mut Store<'_>, d: usize, menu: &[FamilyTag]) -> Result<VineStructure> {
    let vertices: Vec<VertexId> = (1..=d as u32).map(|j| VertexId::new(0, j)).collect();
    let mut levels: Vec<Vec<EdgeLabel>> = Vec::new();
    // complete unions of the current level's items, plus their children
    let mut items: Vec<(Vec<VertexId>, [Vec<VertexId>; 2])> =
        vertices.iter().map(|&v| (vec![v], [vec![], vec![]])).collect();
    for level in 1..d {
        let mut cands: Vec<(f64, usize, usize, EdgeLabel)> = Vec::new();
        for x in 0..items.len() {
            for y in (x + 1)..items.len() {
                if level > 1 && !items[x].1.iter().any(|c| items[y].1.contains(c)) {
                    continue;
                }
                let Some(label) = join(&items[x].0, &items[y].0) else {
                    continue;
                };
                if let Some(t) = store.tau(&label) {
                    cands.push((t, x, y, label));
                }
            }
        }
        cands.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
        let mut uf = UnionFind::new(items.len());
        let mut chosen = Vec::new();
        for (_, x, y, label) in cands {
            if uf.union(x, y) {
                chosen.push(label);
            }
        }
        if chosen.len() + 1 != items.len() {
            return Err(Error::structure(format!(
                "no spanning tree at cross-sectional level {level}"
            )));
        }
        for label in &chosen {
            store.fit(label.clone(), menu)?;
        }
        items = chosen
            .iter()
            .map(|l| {
                let cu = l.complete_union();
                let ch = store
                    .items
                    .get(&cu)
                    .map(|it| it.children.clone())
                    .unwrap_or_default();
                (cu, ch)
            })
            .collect();
        levels.push(chosen);
    }
    VineStructure::from_labels(vertices, &levels)
}

fn linking_label(ip: &[u32], jp: &[u32], k: usize, r: usize) -> EdgeLabel {
    let a = VertexId::new(1, ip[k - r]);
    let b = VertexId::new(2, jp[r - 1]);
    let mut cond: Vec<VertexId> = ip[..k - r].iter().map(|&i| VertexId::new(1, i)).collect();
    cond.extend(jp[..r - 1].iter().map(|&j| VertexId::new(2, j)));
    EdgeLabel::new(a, b, cond)
}

fn cu_of(vs: impl IntoIterator<Item = VertexId>) -> Vec<VertexId> {
    let mut v: Vec<VertexId> = vs.into_iter().collect();
    v.sort_unstable();
    v
}

fn argmax(cands: impl IntoIterator<Item = (u32, Option<f64>)>) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (v, t) in cands {
        if let Some(t) = t {
            if best.is_none_or(|(_, bt)| t > bt) {
                best = Some((v, t));
            }
        }
    }
    best.map(|b| b.0)
}

/// Chooses a cross-sectional vine and compatible in/out orders from `u`.
pub fn select_structure(u: &PseudoSample, p: usize, menu: &[FamilyTag]) -> Result<SVineSpec> {
    let d = u.d();
    let t_len = u.t_len();
    if d == 0 {
        return Err(Error::domain("sample has no columns"));
    }
    if menu.is_empty() {
        return Err(Error::domain("empty family menu"));
    }
    if t_len < 3 {
        return Err(Error::InsufficientData(format!("structure selection needs T >= 3, got {t_len}")));
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|j| u.column(j)).collect();

    let mut cs_store = Store::new(&cols, 0, t_len);
    let cs = cross_section(&mut cs_store, d, menu)?;

    // two-period window: instances s = 0..T-2 cover times s+1 and s+2
    let n = t_len - 1;
    let mut w = Store::new(&cols, 1, n);
    for (cu, item) in &cs_store.items {
        for (off, t) in [(0usize, 1i32), (1, 2)] {
            let shift = |v: &VertexId| v.shifted(t);
            w.items.insert(
                cu.iter().map(shift).collect(),
                Item {
                    label: item.label.shifted(t),
                    children: [
                        item.children[0].iter().map(shift).collect(),
                        item.children[1].iter().map(shift).collect(),
                    ],
                    out: [
                        item.out[0][off..off + n].to_vec(),
                        item.out[1][off..off + n].to_vec(),
                    ],
                },
            );
        }
    }

    let vars: Vec<u32> = (1..=d as u32).collect();
    let mut best = (f64::NEG_INFINITY, 1u32, 1u32);
    for &i in &vars {
        for &j in &vars {
            let t = kendall_tau(&cols[(i - 1) as usize][..n], &cols[(j - 1) as usize][1..]).abs();
            if t > best.0 {
                best = (t, i, j);
            }
        }
    }
    let mut ip = vec![best.1];
    let mut jp = vec![best.2];
    for k in 2..=d {
        w.fit(linking_label(&ip, &jp, k - 1, 1), menu)?;
        if k > 2 {
            for r in 2..k {
                w.fit(linking_label(&ip, &jp, k - 1, r), menu)?;
            }
        }
        let j1 = VertexId::new(2, jp[0]);
        let prev_in: Vec<VertexId> = ip.iter().map(|&i| VertexId::new(1, i)).collect();
        let next_i = argmax(vars.iter().filter(|v| !ip.contains(v)).map(|&v| {
            let x = VertexId::new(1, v);
            let a = w.value(&cu_of(prev_in.iter().copied().chain([x])), x);
            let b = w.value(&cu_of(prev_in.iter().copied().chain([j1])), j1);
            (v, a.zip(b).map(|(a, b)| kendall_tau(a, b).abs()))
        }))
        .ok_or_else(|| Error::structure(format!("no compatible in-order index at position {k}")))?;
        let i1 = VertexId::new(1, ip[0]);
        let prev_out: Vec<VertexId> = jp.iter().map(|&j| VertexId::new(2, j)).collect();
        let next_j = argmax(vars.iter().filter(|v| !jp.contains(v)).map(|&v| {
            let y = VertexId::new(2, v);
            let a = w.value(&cu_of(prev_out.iter().copied().chain([i1])), i1);
            let b = w.value(&cu_of(prev_out.iter().copied().chain([y])), y);
            (v, a.zip(b).map(|(a, b)| kendall_tau(a, b).abs()))
        }))
        .ok_or_else(|| Error::structure(format!("no compatible out-order index at position {k}")))?;
        ip.push(next_i);
        jp.push(next_j);
    }
    SVineSpec::new(cs, ip, jp, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bicop::{BivariateCopula, Family};
    use crate::estimation::MarginMode;
    use crate::vine_graph::is_compatible;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn univariate_selection_is_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Array2::from_shape_fn((50, 1), |_| rng.random_range(0.01..0.99));
        let spec = select_structure(&PseudoSample::new(u, MarginMode::Semiparametric).unwrap(), 1, &[
            FamilyTag::plain(Family::Gaussian),
        ])
        .unwrap();
        assert_eq!(spec.in_perm(), &[1]);
        assert_eq!(spec.out_perm(), &[1]);
    }

    #[test]
    fn selected_orders_are_compatible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cop = BivariateCopula::gaussian(0.6).unwrap();
        let t_len = 300;
        let mut u = Array2::zeros((t_len, 4));
        for t in 0..t_len {
            let mut prev: f64 = rng.random();
            u[[t, 0]] = prev;
            for j in 1..4 {
                prev = cop.hinv_given_u(rng.random(), prev).unwrap();
                u[[t, j]] = prev;
            }
        }
        let ps = PseudoSample::new(u, MarginMode::Semiparametric).unwrap();
        let spec = select_structure(&ps, 1, &[FamilyTag::plain(Family::Gaussian)]).unwrap();
        assert!(is_compatible(spec.cross_section(), spec.in_perm()));
        assert!(is_compatible(spec.cross_section(), spec.out_perm()));
        // the chain 1-2-3-4 should be recovered as the first tree
        let first: Vec<(u32, u32)> = spec
            .cross_section()
            .tree(1)
            .iter()
            .map(|e| (e.label.a.var, e.label.b.var))
            .collect();
        for pair in [(1, 2), (2, 3), (3, 4)] {
            assert!(first.contains(&pair), "{first:?}");
        }
    }

    #[test]
    fn lagged_cross_dependence_sets_the_first_linking_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cop = BivariateCopula::gaussian(0.8).unwrap();
        let t_len = 500;
        let mut u = Array2::zeros((t_len, 2));
        for t in 0..t_len {
            u[[t, 0]] = rng.random_range(0.0001..0.9999);
            u[[t, 1]] = if t == 0 {
                rng.random_range(0.0001..0.9999)
            } else {
                cop.hinv_given_u(rng.random(), u[[t - 1, 0]]).unwrap()
            };
        }
        let ps = PseudoSample::new(u, MarginMode::Semiparametric).unwrap();
        let spec = select_structure(&ps, 1, &[FamilyTag::plain(Family::Gaussian)]).unwrap();
        assert_eq!(spec.in_perm()[0], 1);
        assert_eq!(spec.out_perm()[0], 2);
    }
}
