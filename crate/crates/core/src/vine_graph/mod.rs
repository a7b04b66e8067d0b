//! R-vine and stationary vine structure algebra.
//!
//! A [`VineStructure`] stores explicit edge lists per tree level. Every edge
//! carries its label `(a, b | D)` and the indices of the two items it joins
//! on the level below. Stationary vines are produced by [`build_svine`] from
//! an [`SVineSpec`]: the cross-sectional vine is copied to each time point,
//! levels `1..=d` receive the linking edges defined by the in/out
//! permutations, and higher levels are completed window by window.

mod fixtures;
mod json;
mod structure;
mod svine;

pub use fixtures::{
    c_vine, copar_d2_t3, d_vine, long_d_vine, long_d_vine_spec, m_vine, m_vine_spec, random_rvine,
    random_rvine_on, star_vine,
};
pub use json::{EdgeJson, StructureJson};
pub(crate) use structure::UnionFind;
pub use structure::{
    is_stationary_vine, is_translation, EdgeLabel, StationarityReport, VertexId, VineEdge,
    VineStructure,
};
pub use svine::{
    build_svine, count_distinct_copulas, edge_classes, enumerate_compatible, is_compatible,
    linking_edges, markov_truncate, CountMode, EdgeClass, EdgeClasses, SVineSpec,
    ENUMERATION_MAX_DIM,
};
