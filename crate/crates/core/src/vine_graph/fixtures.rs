//! Ready-made structures: D-vines, C-vines, random R-vines, the M-vine and
//! long D-vine time-series models, and a COPAR structure that is not stationary.

use rand::seq::SliceRandom;
use rand::Rng;

use super::structure::{EdgeLabel, UnionFind, VertexId, VineStructure};
use super::svine::{build_svine, SVineSpec};
use crate::error::Result;

fn cross_vertices(d: usize) -> Vec<VertexId> {
    (1..=d as u32).map(|j| VertexId::new(0, j)).collect()
}

/// D-vine whose first tree is the path `1 − 2 − … − d` (time index 0).
pub fn d_vine(d: usize) -> VineStructure {
    let levels: Vec<Vec<(usize, usize)>> = (1..d).map(|k| (0..d - k).map(|i| (i, i + 1)).collect()).collect();
    VineStructure::from_pairs(cross_vertices(d), &levels).expect("path D-vine is valid")
}

/// C-vine with root order `order` (a permutation of `1..=d`); the first tree
/// is a star around `order[0]`.
pub fn c_vine(order: &[u32]) -> VineStructure {
    let d = order.len();
    let v = |j: u32| VertexId::new(0, j);
    let levels: Vec<Vec<EdgeLabel>> = (1..d)
        .map(|k| {
            let cond: Vec<VertexId> = order[..k - 1].iter().map(|&j| v(j)).collect();
            order[k..]
                .iter()
                .map(|&j| EdgeLabel::new(v(order[k - 1]), v(j), cond.clone()))
                .collect()
        })
        .collect();
    VineStructure::from_labels(cross_vertices(d), &levels).expect("C-vine is valid")
}

/// C-vine rooted at variable 1 with natural order.
pub fn star_vine(d: usize) -> VineStructure {
    let order: Vec<u32> = (1..=d as u32).collect();
    c_vine(&order)
}

/// Uniformly shuffled spanning trees level by level, subject to proximity.
pub fn random_rvine_on<R: Rng + ?Sized>(vertices: Vec<VertexId>, rng: &mut R) -> VineStructure {
    let mut vine = VineStructure::empty(vertices).expect("distinct vertices");
    let n = vine.n_vertices();
    if n < 2 {
        return vine;
    }
    // random first tree: attach each vertex to a random earlier one
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let first: Vec<(usize, usize)> = (1..n)
        .map(|i| (order[rng.random_range(0..i)], order[i]))
        .collect();
    let mut levels = vec![first];
    let mut partial = VineStructure::from_pairs(vine.vertices().to_vec(), &levels).expect("tree");
    for k in 2..n {
        let prev = partial.tree(k - 1);
        let mut pairs = Vec::new();
        for x in 0..prev.len() {
            for y in (x + 1)..prev.len() {
                let shared = prev[x]
                    .children
                    .iter()
                    .filter(|c| prev[y].children.contains(c))
                    .count();
                if shared == 1 {
                    pairs.push((x, y));
                }
            }
        }
        pairs.shuffle(rng);
        let mut uf = UnionFind::new(prev.len());
        let chosen: Vec<(usize, usize)> = pairs.into_iter().filter(|&(x, y)| uf.union(x, y)).collect();
        levels.push(chosen);
        partial = VineStructure::from_pairs(vine.vertices().to_vec(), &levels).expect("proximity holds");
    }
    vine = partial;
    vine
}

/// Random R-vine on variables `1..=d` at time index 0.
pub fn random_rvine<R: Rng + ?Sized>(d: usize, rng: &mut R) -> VineStructure {
    random_rvine_on(cross_vertices(d), rng)
}

/// M-vine: path cross-section, identical in/out permutations `(1, …, d)`.
pub fn m_vine_spec(d: usize, p: usize) -> SVineSpec {
    let id: Vec<u32> = (1..=d as u32).collect();
    SVineSpec::new(d_vine(d), id.clone(), id, p).expect("identity order is compatible with a path")
}

/// Long D-vine: path cross-section, in-permutation `(d, …, 1)` and
/// out-permutation `(1, …, d)`.
pub fn long_d_vine_spec(d: usize, p: usize) -> SVineSpec {
    let id: Vec<u32> = (1..=d as u32).collect();
    let rev: Vec<u32> = id.iter().rev().copied().collect();
    SVineSpec::new(d_vine(d), rev, id, p).expect("both path orders are compatible")
}

pub fn m_vine(d: usize, t_len: usize) -> Result<VineStructure> {
    build_svine(&m_vine_spec(d, t_len.saturating_sub(1)), t_len)
}

pub fn long_d_vine(d: usize, t_len: usize) -> Result<VineStructure> {
    build_svine(&long_d_vine_spec(d, t_len.saturating_sub(1)), t_len)
}

/// COPAR structure for `d = 2`, `T = 3`: star cross-sections linked through
/// the root variable, with the second tree
/// `(11,12) − (11,21) − (21,22)`, `(11,21) − (21,31) − (31,32)`.
pub fn copar_d2_t3() -> VineStructure {
    let vertices: Vec<VertexId> = (1..=3)
        .flat_map(|t| (1..=2).map(move |j| VertexId::new(t, j)))
        .collect();
    // sorted vertex indices: 0=(1,1) 1=(1,2) 2=(2,1) 3=(2,2) 4=(3,1) 5=(3,2)
    let l1 = vec![(0, 1), (0, 2), (2, 3), (2, 4), (4, 5)];
    // level-1 edges: A=0:(11,12) B=1:(11,21) C=2:(21,22) D=3:(21,31) E=4:(31,32)
    let l2 = vec![(0, 1), (1, 2), (1, 3), (3, 4)];
    // level-2 edges: AB=0 BC=1 BD=2 DE=3
    let l3 = vec![(0, 1), (1, 2), (2, 3)];
    let l4 = vec![(0, 1), (1, 2)];
    let l5 = vec![(0, 1)];
    VineStructure::from_pairs(vertices, &[l1, l2, l3, l4, l5]).expect("COPAR fixture is a vine")
}
