use std::collections::BTreeMap;

use serde_json::{json, Value};
use svine::bicop::tau_inversion;
use svine::estimation::VinePlan;
use svine::forecast::replicate_rng;
use svine::special::norm_quantile;
use svine::stats::kendall_tau;
use svine::vine_graph::{build_svine, copar_d2_t3, is_stationary_vine, m_vine_spec, StructureJson};
use svine::{simulate_unconditional, BivariateCopula, Error, FamilyTag, SVineModel, SVineSpec, VineStructure};
use wasm_bindgen::prelude::*;

/// Copula of the named family with the requested Kendall's tau. Families
/// that only allow positive dependence are rotated by 90 degrees for
/// negative tau.
pub fn copula_for(family: &str, tau: f64) -> svine::Result<BivariateCopula> {
    if !(-0.95..=0.95).contains(&tau) {
        return Err(Error::Domain(format!("tau = {tau} outside [-0.95, 0.95]")));
    }
    let mut tag = FamilyTag::parse(family)?;
    if tag.family.rotatable() && tau < 0.0 && tag.rotation == 0 {
        tag = FamilyTag::new(tag.family, 90)?;
    }
    BivariateCopula::new(tag, tau_inversion(tag, tau))
}

pub fn pair_sample(family: &str, tau: f64, n: usize, seed: u64) -> svine::Result<Value> {
    let c = copula_for(family, tau)?;
    let (u, v) = c.simulate(n, &mut replicate_rng(seed, 0))?;
    Ok(json!({
        "family": c.tag().to_string(),
        "params": c.params(),
        "tau": c.kendall_tau(),
        "sample_tau": kendall_tau(&u, &v),
        "u": u,
        "v": v,
    }))
}

/// First-order Markov chain whose serial copula is the named family; the
/// path is reported on the normal scale.
pub fn chain_path(family: &str, tau: f64, n: usize, seed: u64) -> svine::Result<Value> {
    let c = copula_for(family, tau)?;
    let spec = m_vine_spec(1, 1);
    let classes = VinePlan::new(&spec)?
        .classes()
        .iter()
        .map(|k| (k.class.clone(), c.clone()))
        .collect::<BTreeMap<_, _>>();
    let model = SVineModel::new(spec, classes)?;
    let u = simulate_unconditional(&model, n, seed)?;
    let u = u.column(0).to_vec();
    let lag_tau = if n > 2 { kendall_tau(&u[..n - 1], &u[1..]) } else { f64::NAN };
    Ok(json!({
        "family": c.tag().to_string(),
        "tau": c.kendall_tau(),
        "lag1_tau": lag_tau,
        "x": u.iter().map(|&p| norm_quantile(p)).collect::<Vec<_>>(),
    }))
}

/// Stationarity check of either an S-vine specification (expanded to
/// `t_len` time points) or an explicit structure.
pub fn structure_report(text: &str, t_len: usize) -> svine::Result<Value> {
    let v: Value = serde_json::from_str(text)?;
    let vine: VineStructure = if v.get("in_perm").is_some() {
        let spec: SVineSpec = serde_json::from_value(v)?;
        build_svine(&spec, t_len)?
    } else {
        let j: StructureJson = serde_json::from_value(v)?;
        VineStructure::from_json(&j)?
    };
    let rep = is_stationary_vine(&vine);
    Ok(json!({
        "stationary": rep.stationary,
        "witness": rep.witness.map(|(t, m)| json!({"t": t, "m": m})),
        "reason": rep.reason,
    }))
}

pub fn fixture_text(name: &str) -> svine::Result<String> {
    let v = match name {
        "m-vine" => serde_json::to_value(m_vine_spec(2, 1))?,
        "copar" => serde_json::to_value(copar_d2_t3().to_json())?,
        other => return Err(Error::Domain(format!("unknown fixture '{other}'"))),
    };
    Ok(serde_json::to_string_pretty(&v)?)
}

fn js(r: svine::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulatePair)]
pub fn simulate_pair(family: &str, tau: f64, n: usize, seed: u32) -> Result<String, JsError> {
    js(pair_sample(family, tau, n, seed as u64))
}

#[wasm_bindgen(js_name = simulateChain)]
pub fn simulate_chain(family: &str, tau: f64, n: usize, seed: u32) -> Result<String, JsError> {
    js(chain_path(family, tau, n, seed as u64))
}

#[wasm_bindgen(js_name = checkStructure)]
pub fn check_structure(text: &str, t_len: usize) -> Result<String, JsError> {
    js(structure_report(text, t_len))
}

#[wasm_bindgen]
pub fn fixture(name: &str) -> Result<String, JsError> {
    fixture_text(name).map_err(|e| JsError::new(&e.to_string()))
}
