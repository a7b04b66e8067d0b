use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{MarginMode, VinePlan};
use crate::bicop::BivariateCopula;
use crate::error::{Error, Result};
use crate::margins::Margin;
use crate::vine_graph::{EdgeClass, SVineSpec};

/// Per-class record of a sequential fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDiagnostics {
    pub class: EdgeClass,
    pub level: usize,
    /// Number of pooled instances.
    pub n_obs: usize,
    pub loglik: f64,
    pub family: String,
    /// The optimizer result was replaced by its starting value.
    pub fell_back: bool,
    /// Too few observations; independence was assigned.
    pub insufficient: bool,
    /// Highest tree level whose copulas produced this class's inputs.
    pub source_level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub t_len: usize,
    pub mode: MarginMode,
    pub loglik: f64,
    pub aic: f64,
    /// h-function outputs that hit the clamping bounds.
    pub clamped: usize,
    pub classes: Vec<ClassDiagnostics>,
}

/// A fitted or hand-specified stationary vine copula model.
///
/// Each edge class of the Markov-truncated structure carries one copula.
/// Classes with lag span above the Markov order are independent and not
/// stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct SVineModel {
    spec: SVineSpec,
    plan: Arc<VinePlan>,
    copulas: Vec<BivariateCopula>,
    margins: Option<Vec<Margin>>,
    mode: MarginMode,
    diagnostics: Option<FitDiagnostics>,
}

impl PartialEq for SVineModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.copulas == other.copulas
            && self.margins == other.margins
            && self.mode == other.mode
    }
}

impl SVineModel {
    /// Model with the given class copulas; classes not listed are independent.
    pub fn new(spec: SVineSpec, copulas: BTreeMap<EdgeClass, BivariateCopula>) -> Result<Self> {
        let plan = VinePlan::new(&spec)?;
        let mut list = vec![BivariateCopula::independence(); plan.len()];
        for (class, cop) in copulas {
            let i = plan.class_index(&class).ok_or_else(|| {
                Error::Lookup(format!("class {class} is not part of the Markov order {} structure", plan.markov_order()))
            })?;
            list[i] = cop;
        }
        Self::from_plan(spec, plan, list, None, MarginMode::Semiparametric, None)
    }

    pub(crate) fn from_plan(
        spec: SVineSpec,
        plan: VinePlan,
        copulas: Vec<BivariateCopula>,
        margins: Option<Vec<Margin>>,
        mode: MarginMode,
        diagnostics: Option<FitDiagnostics>,
    ) -> Result<Self> {
        if copulas.len() != plan.len() {
            return Err(Error::domain(format!(
                "{} copulas for {} edge classes",
                copulas.len(),
                plan.len()
            )));
        }
        Ok(SVineModel {
            spec,
            plan: Arc::new(plan),
            copulas,
            margins,
            mode,
            diagnostics,
        })
    }

    /// Attaches marginal models; the stored AIC then counts their parameters.
    pub fn with_margins(mut self, margins: Vec<Margin>, mode: MarginMode) -> Result<Self> {
        if margins.len() != self.spec.d() {
            return Err(Error::domain(format!(
                "{} margins for d = {}",
                margins.len(),
                self.spec.d()
            )));
        }
        self.margins = Some(margins);
        self.mode = mode;
        let k = self.n_params();
        if let Some(d) = &mut self.diagnostics {
            d.mode = mode;
            d.aic = -2.0 * d.loglik + 2.0 * k as f64;
        }
        Ok(self)
    }

    /// Same structure and margins with a new copula per class (plan order).
    pub fn with_copulas(&self, copulas: Vec<BivariateCopula>) -> Result<Self> {
        if copulas.len() != self.plan.len() {
            return Err(Error::domain(format!(
                "{} copulas for {} edge classes",
                copulas.len(),
                self.plan.len()
            )));
        }
        Ok(SVineModel {
            copulas,
            diagnostics: None,
            ..self.clone()
        })
    }

    pub fn spec(&self) -> &SVineSpec {
        &self.spec
    }

    pub fn plan(&self) -> &VinePlan {
        &self.plan
    }

    pub fn d(&self) -> usize {
        self.spec.d()
    }

    pub fn markov_order(&self) -> usize {
        self.spec.markov_order()
    }

    pub fn mode(&self) -> MarginMode {
        self.mode
    }

    pub fn margins(&self) -> Option<&[Margin]> {
        self.margins.as_deref()
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// Copulas in evaluation order.
    pub fn copula_list(&self) -> &[BivariateCopula] {
        &self.copulas
    }

    pub fn copulas(&self) -> impl Iterator<Item = (&EdgeClass, &BivariateCopula)> {
        self.plan.classes().iter().map(|c| &c.class).zip(&self.copulas)
    }

    pub fn copula(&self, class: &EdgeClass) -> Option<&BivariateCopula> {
        self.plan.class_index(class).map(|i| &self.copulas[i])
    }

    /// Copula parameters plus, with parametric margins, marginal parameters.
    pub fn n_params(&self) -> usize {
        let cop: usize = self.copulas.iter().map(|c| c.n_params()).sum();
        let marg: usize = match (&self.margins, self.mode) {
            (Some(m), MarginMode::Parametric) => m.iter().map(|m| m.n_params()).sum(),
            _ => 0,
        };
        cop + marg
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    spec: SVineSpec,
    copulas: BTreeMap<EdgeClass, BivariateCopula>,
    #[serde(default)]
    margins: Option<Vec<Margin>>,
    mode: MarginMode,
    #[serde(default)]
    metadata: Option<FitDiagnostics>,
}

impl From<SVineModel> for ModelJson {
    fn from(m: SVineModel) -> Self {
        let copulas = m
            .plan
            .classes()
            .iter()
            .map(|c| c.class.clone())
            .zip(m.copulas)
            .collect();
        ModelJson {
            spec: m.spec,
            copulas,
            margins: m.margins,
            mode: m.mode,
            metadata: m.diagnostics,
        }
    }
}

impl TryFrom<ModelJson> for SVineModel {
    type Error = Error;
    fn try_from(j: ModelJson) -> Result<Self> {
        let plan = VinePlan::new(&j.spec)?;
        let mut list: Vec<Option<BivariateCopula>> = vec![None; plan.len()];
        for (class, cop) in j.copulas {
            let i = plan
                .class_index(&class)
                .ok_or_else(|| Error::Lookup(format!("model lists unknown edge class {class}")))?;
            list[i] = Some(cop);
        }
        let copulas = list
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| Error::Lookup(format!("no copula for edge class {}", plan.classes()[i].class)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(m) = &j.margins {
            if m.len() != j.spec.d() {
                return Err(Error::domain(format!("{} margins for d = {}", m.len(), j.spec.d())));
            }
        }
        SVineModel::from_plan(j.spec, plan, copulas, j.margins, j.mode, j.metadata)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::SkewTParams;
    use crate::vine_graph::m_vine_spec;

    #[test]
    fn json_round_trip_preserves_everything() {
        let spec = m_vine_spec(2, 1);
        let plan = VinePlan::new(&spec).unwrap();
        let mut map = BTreeMap::new();
        for (i, c) in plan.classes().iter().enumerate() {
            map.insert(c.class.clone(), BivariateCopula::gaussian(0.1 * (i as f64 + 1.0) - 0.3).unwrap());
        }
        let margins = vec![
            Margin::skew_t(SkewTParams::new(0.1, 1.2, 5.0, 0.9).unwrap()),
            Margin::empirical(&[0.3, -1.0, 2.0, 0.5]).unwrap(),
        ];
        let model = SVineModel::new(spec, map)
            .unwrap()
            .with_margins(margins, MarginMode::Parametric)
            .unwrap();
        let s = model.to_json_string().unwrap();
        let back = SVineModel::from_json_str(&s).unwrap();
        assert_eq!(back, model);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v["copulas"]["(1,1)-(1,2)"]["family"].is_string());
    }

    #[test]
    fn unknown_class_is_rejected() {
        let spec = m_vine_spec(2, 0);
        let mut map = BTreeMap::new();
        map.insert("(1,1)-(2,1)".parse().unwrap(), BivariateCopula::gaussian(0.2).unwrap());
        assert!(matches!(SVineModel::new(spec, map), Err(Error::Lookup(_))));
    }

    #[test]
    fn missing_copula_in_json_is_an_error() {
        let model = SVineModel::new(m_vine_spec(2, 1), BTreeMap::new()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&model.to_json_string().unwrap()).unwrap();
        v["copulas"].as_object_mut().unwrap().remove("(1,1)-(1,2)");
        assert!(serde_json::from_value::<SVineModel>(v).is_err());
    }
}
