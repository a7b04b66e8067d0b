use serde::{Deserialize, Serialize};

use super::structure::{EdgeLabel, VertexId, VineStructure};
use super::svine::SVineSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub conditioned: [VertexId; 2],
    #[serde(default)]
    pub conditioning: Vec<VertexId>,
}

impl From<&EdgeLabel> for EdgeJson {
    fn from(l: &EdgeLabel) -> Self {
        EdgeJson {
            conditioned: [l.a, l.b],
            conditioning: l.conditioning.clone(),
        }
    }
}

impl From<&EdgeJson> for EdgeLabel {
    fn from(e: &EdgeJson) -> Self {
        EdgeLabel::new(e.conditioned[0], e.conditioned[1], e.conditioning.clone())
    }
}

/// Explicit structure: edge labels per tree level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<VertexId>>,
    pub trees: Vec<Vec<EdgeJson>>,
}

fn trees_json(v: &VineStructure) -> Vec<Vec<EdgeJson>> {
    v.label_sets()
        .iter()
        .map(|level| level.iter().map(EdgeJson::from).collect())
        .collect()
}

impl VineStructure {
    pub fn to_json(&self) -> StructureJson {
        StructureJson {
            vertices: Some(self.vertices().to_vec()),
            trees: trees_json(self),
        }
    }

    /// Rebuilds a structure and verifies that it is a vine.
    pub fn from_json(j: &StructureJson) -> Result<Self> {
        let vertices = match &j.vertices {
            Some(v) => v.clone(),
            None => {
                let mut v: Vec<VertexId> = j
                    .trees
                    .first()
                    .into_iter()
                    .flatten()
                    .flat_map(|e| e.conditioned)
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let levels: Vec<Vec<EdgeLabel>> = j
            .trees
            .iter()
            .map(|t| t.iter().map(EdgeLabel::from).collect())
            .collect();
        let s = VineStructure::from_labels(vertices, &levels)?;
        s.check_vine().map_err(Error::Structure)?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecJson {
    d: usize,
    markov_order: usize,
    cross_section: Vec<Vec<EdgeJson>>,
    in_perm: Vec<u32>,
    out_perm: Vec<u32>,
}

impl Serialize for SVineSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpecJson {
            d: self.d(),
            markov_order: self.markov_order(),
            cross_section: trees_json(self.cross_section()),
            in_perm: self.in_perm().to_vec(),
            out_perm: self.out_perm().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SVineSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let j = SpecJson::deserialize(de)?;
        spec_from_json(j).map_err(serde::de::Error::custom)
    }
}

fn spec_from_json(j: SpecJson) -> Result<SVineSpec> {
    if j.d == 0 {
        return Err(Error::structure("d must be at least 1"));
    }
    let t = j
        .cross_section
        .first()
        .and_then(|l| l.first())
        .map(|e| e.conditioned[0].time)
        .unwrap_or(0);
    let vertices: Vec<VertexId> = (1..=j.d as u32).map(|v| VertexId::new(t, v)).collect();
    let levels: Vec<Vec<EdgeLabel>> = j
        .cross_section
        .iter()
        .map(|l| l.iter().map(EdgeLabel::from).collect())
        .collect();
    let cs = VineStructure::from_labels(vertices, &levels)?;
    SVineSpec::new(cs, j.in_perm, j.out_perm, j.markov_order)
}
