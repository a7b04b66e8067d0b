//! Simulation from stationary vine copula models and forecast evaluation.
//!
//! Sampling runs through the window vine on times `1..=p+1`. For each new
//! time point the variables are drawn one at a time by inverting the chain
//! of h-functions that links them to everything drawn before. After a time
//! point is complete the stored h-values are shifted back by one period, so
//! each step costs the same regardless of how long the path already is.

mod score;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::BivariateCopula;
use crate::error::{Error, Result};
use crate::estimation::{transform, SVineModel};
use crate::margins::Margin;
use crate::vine_graph::VineStructure;

pub use score::{
    check_loss, contract, crps, kde_bandwidth, log_score, predict_functional, score_forecasts, Functional,
    Measure, ScoreSummary,
};

/// An input of an edge: a first-tree vertex or the output of a lower edge.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Vertex(usize),
    Edge { id: usize, side: usize },
}

#[derive(Debug, Clone)]
struct Link {
    /// Global edge id.
    edge: usize,
    copula: usize,
    /// The variable being drawn is the edge's `a` argument.
    own_is_a: bool,
    own: Slot,
    partner: Slot,
}

#[derive(Debug, Clone)]
struct VarStep {
    vertex: usize,
    /// Edges conditioning the variable, lowest level first.
    chain: Vec<Link>,
}

/// Precomputed sampling schedule for a fitted model.
#[derive(Debug, Clone)]
pub struct Sampler {
    copulas: Vec<BivariateCopula>,
    edge_names: Vec<String>,
    /// `steps[m]` draws the variables of time `m + 1` given times `1..=m`.
    steps: Vec<Vec<VarStep>>,
    n_vertices: usize,
    n_edges: usize,
    /// Vertex and edge moves applied when the window advances by one period.
    vertex_shift: Vec<(usize, usize)>,
    edge_shift: Vec<(usize, usize)>,
    /// Window vertex of each variable at the newest time point.
    last_vertices: Vec<usize>,
    d: usize,
    p: usize,
}

/// Values held for one path: first-tree values and both h-outputs per edge.
#[derive(Debug, Clone)]
struct State {
    u: Vec<f64>,
    h: Vec<[f64; 2]>,
}

impl State {
    fn get(&self, s: Slot) -> f64 {
        match s {
            Slot::Vertex(i) => self.u[i],
            Slot::Edge { id, side } => self.h[id][side],
        }
    }
}

fn edge_ids(window: &VineStructure) -> Vec<usize> {
    let mut off = Vec::with_capacity(window.n_levels());
    let mut acc = 0;
    for k in 1..=window.n_levels() {
        off.push(acc);
        acc += window.tree(k).len();
    }
    off
}

impl Sampler {
    pub fn new(model: &SVineModel) -> Result<Self> {
        let plan = model.plan();
        let w = plan.window();
        let d = plan.d();
        let p = plan.markov_order();
        let off = edge_ids(w);
        let gid = |level: usize, idx: usize| off[level - 1] + idx;
        let n_edges: usize = (1..=w.n_levels()).map(|k| w.tree(k).len()).sum();
        let mut edge_names = vec![String::new(); n_edges];
        for k in 1..=w.n_levels() {
            for (i, e) in w.tree(k).iter().enumerate() {
                edge_names[gid(k, i)] = e.label.to_string();
            }
        }
        let slot_of = |level: usize, idx: usize, var| -> Slot {
            if level == 1 {
                Slot::Vertex(idx)
            } else {
                let lab = &w.tree(level - 1)[idx].label;
                Slot::Edge {
                    id: gid(level - 1, idx),
                    side: if lab.a == var { 0 } else { 1 },
                }
            }
        };

        let mut steps = Vec::with_capacity(p + 1);
        for m in 0..=p {
            let horizon = (m + 1) as i32;
            // live edges of the sub-vine on times 1..=m+1
            let mut live: Vec<Vec<usize>> = (1..=w.n_levels())
                .map(|k| {
                    (0..w.tree(k).len())
                        .filter(|&i| w.tree(k)[i].label.max_time() <= horizon)
                        .collect()
                })
                .collect();
            let mut peeled = Vec::with_capacity(d);
            for _ in 0..d {
                let top = live.iter().rposition(|l| !l.is_empty());
                let var = match top {
                    None => {
                        // a single remaining vertex at the newest time
                        let v = w
                            .vertices()
                            .iter()
                            .copied()
                            .find(|v| v.time == horizon && !peeled.iter().any(|s: &VarStep| w.vertices()[s.vertex] == *v))
                            .ok_or_else(|| Error::structure("sampling schedule ran out of vertices"))?;
                        v
                    }
                    Some(k) => {
                        if live[k].len() != 1 {
                            return Err(Error::structure(format!(
                                "sub-vine on times 1..={horizon} has {} edges at its top level",
                                live[k].len()
                            )));
                        }
                        let lab = &w.tree(k + 1)[live[k][0]].label;
                        if lab.b.time == horizon {
                            lab.b
                        } else if lab.a.time == horizon {
                            lab.a
                        } else {
                            return Err(Error::structure(format!(
                                "cannot peel time {horizon}: top edge {lab} conditions on it"
                            )));
                        }
                    }
                };
                let mut chain = Vec::new();
                for (li, edges) in live.iter_mut().enumerate() {
                    let level = li + 1;
                    let pos: Vec<usize> = edges
                        .iter()
                        .copied()
                        .filter(|&i| {
                            let l = &w.tree(level)[i].label;
                            l.a == var || l.b == var
                        })
                        .collect();
                    if pos.len() > 1 {
                        return Err(Error::structure(format!(
                            "variable {var} is conditioned in {} edges of level {level}",
                            pos.len()
                        )));
                    }
                    if let Some(&i) = pos.first() {
                        let e = &w.tree(level)[i];
                        let own_is_a = e.label.a == var;
                        let (own_child, partner_child) = if own_is_a {
                            (e.children[0], e.children[1])
                        } else {
                            (e.children[1], e.children[0])
                        };
                        let partner_var = if own_is_a { e.label.b } else { e.label.a };
                        chain.push(Link {
                            edge: gid(level, i),
                            copula: plan.window_class(level, i),
                            own_is_a,
                            own: slot_of(level, own_child, var),
                            partner: slot_of(level, partner_child, partner_var),
                        });
                        edges.retain(|&x| x != i);
                    }
                }
                let vertex = w
                    .vertices()
                    .binary_search(&var)
                    .map_err(|_| Error::structure(format!("vertex {var} missing from window")))?;
                peeled.push(VarStep { vertex, chain });
            }
            let stale = live
                .iter()
                .enumerate()
                .any(|(li, l)| l.iter().any(|&i| w.tree(li + 1)[i].label.max_time() == horizon));
            if stale {
                return Err(Error::structure(format!("edges left after peeling time {horizon}")));
            }
            peeled.reverse();
            steps.push(peeled);
        }

        let mut vertex_shift = Vec::new();
        for (i, v) in w.vertices().iter().enumerate() {
            if v.time >= 2 {
                let j = w.vertices().binary_search(&v.shifted(-1)).expect("window is stationary");
                vertex_shift.push((i, j));
            }
        }
        let mut edge_shift = Vec::new();
        for k in 1..=w.n_levels() {
            for (i, e) in w.tree(k).iter().enumerate() {
                if e.label.min_time() >= 2 {
                    let (lk, j) = w
                        .find_edge(&e.label.shifted(-1))
                        .ok_or_else(|| Error::structure(format!("window lacks the translate of {}", e.label)))?;
                    edge_shift.push((gid(k, i), gid(lk, j)));
                }
            }
        }
        // moves go from later to earlier times; process earlier targets first
        vertex_shift.sort_by_key(|&(from, _)| w.vertices()[from].time);
        let min_time: Vec<i32> = (1..=w.n_levels())
            .flat_map(|k| w.tree(k).iter().map(|e| e.label.min_time()))
            .collect();
        edge_shift.sort_by_key(|&(from, _)| min_time[from]);
        let last_vertices = (1..=d as u32)
            .map(|j| {
                w.vertices()
                    .binary_search(&crate::vine_graph::VertexId::new((p + 1) as i32, j))
                    .expect("window holds the newest time point")
            })
            .collect();
        Ok(Sampler {
            copulas: model.copula_list().to_vec(),
            edge_names,
            steps,
            n_vertices: w.n_vertices(),
            n_edges,
            vertex_shift,
            edge_shift,
            last_vertices,
            d,
            p,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn markov_order(&self) -> usize {
        self.p
    }

    fn empty_state(&self) -> State {
        State {
            u: vec![0.5; self.n_vertices],
            h: vec![[0.5; 2]; self.n_edges],
        }
    }

    fn forward(&self, step: &VarStep, st: &mut State) {
        for link in &step.chain {
            let own = st.get(link.own);
            let partner = st.get(link.partner);
            let (a, b) = if link.own_is_a { (own, partner) } else { (partner, own) };
            let cop = &self.copulas[link.copula];
            st.h[link.edge] = [cop.h_given_v(a, b), cop.h_given_u(a, b)];
        }
    }

    fn draw(&self, step: &VarStep, st: &mut State, w: f64) -> Result<()> {
        let mut x = w;
        for link in step.chain.iter().rev() {
            let partner = st.get(link.partner);
            let cop = &self.copulas[link.copula];
            let r = if link.own_is_a {
                cop.hinv_given_v(x, partner)
            } else {
                cop.hinv_given_u(x, partner)
            };
            x = r.map_err(|e| Error::numerical(format!("inverting edge {}", self.edge_names[link.edge]), e.to_string()))?;
        }
        st.u[step.vertex] = x;
        self.forward(step, st);
        Ok(())
    }

    fn condition(&self, step: &VarStep, st: &mut State, u: f64) {
        st.u[step.vertex] = u;
        self.forward(step, st);
    }

    fn advance(&self, st: &mut State) {
        for &(from, to) in &self.vertex_shift {
            st.u[to] = st.u[from];
        }
        for &(from, to) in &self.edge_shift {
            st.h[to] = st.h[from];
        }
    }


    /// Copula-scale path of length `t_out`, starting from the stationary law.
    pub fn path<R: Rng + ?Sized>(&self, t_out: usize, rng: &mut R) -> Result<Array2<f64>> {
        let d = self.d;
        let mut out = Array2::zeros((t_out, d));
        let mut st = self.empty_state();
        for t in 0..t_out {
            let m = t.min(self.p);
            if t > self.p {
                self.advance(&mut st);
            }
            for step in &self.steps[m] {
                self.draw(step, &mut st, rng.random())?;
            }
            let vertices: Vec<usize> = self.steps[m].iter().map(|s| s.vertex).collect();
            let mut row: Vec<(usize, f64)> = vertices.iter().map(|&v| (v, st.u[v])).collect();
            row.sort_by_key(|r| r.0);
            for (j, (_, x)) in row.into_iter().enumerate() {
                out[[t, j]] = x;
            }
        }
        Ok(out)
    }

    /// State after conditioning on `history` (the last `p` copula-scale rows).
    fn history_state(&self, history: &Array2<f64>) -> Result<State> {
        if history.ncols() != self.d {
            return Err(Error::domain(format!(
                "history has {} columns, model has d = {}",
                history.ncols(),
                self.d
            )));
        }
        if history.nrows() < self.p {
            return Err(Error::domain(format!(
                "history has {} rows, Markov order {} needs {}",
                history.nrows(),
                self.p,
                self.p
            )));
        }
        let start = history.nrows() - self.p;
        let mut st = self.empty_state();
        for m in 0..self.p {
            for step in &self.steps[m] {
                let var = self.var_of(step.vertex, m);
                self.condition(step, &mut st, history[[start + m, var]]);
            }
        }
        Ok(st)
    }

    fn var_of(&self, vertex: usize, m: usize) -> usize {
        // vertices are sorted by (time, var); time m+1 occupies block m
        vertex - m * self.d
    }

    /// One replicate of `k` future rows given a conditioned state.
    fn extend<R: Rng + ?Sized>(&self, base: &State, k: usize, rng: &mut R, out: &mut [f64]) -> Result<()> {
        let mut st = base.clone();
        let d = self.d;
        for step_i in 0..k {
            if self.p > 0 && step_i > 0 {
                self.advance(&mut st);
            }
            for step in &self.steps[self.p] {
                self.draw(step, &mut st, rng.random())?;
            }
            for (j, &v) in self.last_vertices.iter().enumerate() {
                out[step_i * d + j] = st.u[v];
            }
        }
        Ok(())
    }

    /// `n` copula-scale replicates of the next `k` rows given `history`.
    pub fn conditional(&self, history: &Array2<f64>, k: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
        if k == 0 {
            return Err(Error::domain("horizon must be at least 1"));
        }
        let base = self.history_state(history)?;
        let width = k * self.d;
        let mut out = Array2::zeros((n, width));
        let slice = out
            .as_slice_mut()
            .expect("freshly allocated arrays are contiguous");
        slice
            .par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(r, row)| {
                let mut rng = replicate_rng(seed, r as u64);
                self.extend(&base, k, &mut rng, row)
            })?;
        Ok(out)
    }
}

/// Generator for replicate `r`; streams are independent of thread scheduling.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

fn to_data_scale(u: Array2<f64>, margins: Option<&[Margin]>, d: usize) -> Array2<f64> {
    match margins {
        None => u,
        Some(m) => {
            let mut x = u;
            for mut row in x.rows_mut() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = m[i % d].quantile(*v);
                }
            }
            x
        }
    }
}

/// Unconditional path of length `t_out`, on the data scale when the model has
/// margins and on the copula scale otherwise.
pub fn simulate_unconditional(model: &SVineModel, t_out: usize, seed: u64) -> Result<Array2<f64>> {
    let sampler = Sampler::new(model)?;
    let mut rng = replicate_rng(seed, 0);
    let u = sampler.path(t_out, &mut rng)?;
    Ok(to_data_scale(u, model.margins(), model.d()))
}

/// `n` replicates of the next `k` rows (columns ordered time-major) given the
/// last `p` rows of `history`. History and output are on the data scale when
/// the model has margins.
pub fn simulate_conditional(
    model: &SVineModel,
    history: &Array2<f64>,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let sampler = Sampler::new(model)?;
    let hist_u = match model.margins() {
        Some(m) => transform(history, m)?,
        None => history.clone(),
    };
    let u = sampler.conditional(&hist_u, k, n, seed)?;
    Ok(to_data_scale(u, model.margins(), model.d()))
}

/// Inputs of a forecast.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastRequest {
    /// At least `p` rows; only the last `p` are used.
    pub history: Array2<f64>,
    pub horizon: usize,
    pub n_sims: usize,
    pub functionals: Vec<Functional>,
    pub seed: u64,
}

/// A functional evaluated on every output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub functional: Functional,
    pub values: Vec<f64>,
    /// `(level, lower, upper)` per column, filled by bootstrap forecasts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<Vec<(f64, f64, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastResult {
    /// `n_sims × (horizon · d)`; column `s·d + j` is variable `j` at step `s`.
    pub simulations: Array2<f64>,
    pub estimates: Vec<FunctionalEstimate>,
}

/// Simulates the request and evaluates its functionals column by column.
pub fn forecast(model: &SVineModel, req: &ForecastRequest) -> Result<ForecastResult> {
    if req.n_sims == 0 {
        return Err(Error::domain("n_sims must be at least 1"));
    }
    let sims = simulate_conditional(model, &req.history, req.horizon, req.n_sims, req.seed)?;
    let estimates = evaluate_functionals(&sims, &req.functionals)?;
    Ok(ForecastResult {
        simulations: sims,
        estimates,
    })
}

pub(crate) fn evaluate_functionals(sims: &Array2<f64>, fs: &[Functional]) -> Result<Vec<FunctionalEstimate>> {
    fs.iter()
        .map(|&f| {
            let values = sims
                .columns()
                .into_iter()
                .map(|c| predict_functional(&c.to_vec(), f))
                .collect::<Result<Vec<f64>>>()?;
            Ok(FunctionalEstimate {
                functional: f,
                values,
                bands: Vec::new(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bicop::{BivariateCopula, Family};
    use crate::stats::{kendall_tau, ks_critical_1pct, ks_uniform};
    use crate::vine_graph::{
        c_vine, d_vine, enumerate_compatible, long_d_vine_spec, m_vine_spec, star_vine, EdgeClass, SVineSpec,
    };
    use std::collections::BTreeMap;

    fn gaussian_model(spec: SVineSpec, rho: impl Fn(&EdgeClass) -> f64) -> SVineModel {
        let plan = crate::estimation::VinePlan::new(&spec).unwrap();
        let map: BTreeMap<EdgeClass, BivariateCopula> = plan
            .classes()
            .iter()
            .map(|c| (c.class.clone(), BivariateCopula::gaussian(rho(&c.class)).unwrap()))
            .collect();
        SVineModel::new(spec, map).unwrap()
    }

    #[test]
    fn schedules_exist_for_all_small_specs() {
        for cs in [d_vine(3), star_vine(3), c_vine(&[2, 1, 3]), d_vine(4), star_vine(4)] {
            let perms = enumerate_compatible(&cs, None).unwrap();
            for ip in &perms {
                for jp in &perms {
                    for p in 0..=2 {
                        let spec = SVineSpec::new(cs.clone(), ip.clone(), jp.clone(), p).unwrap();
                        let model = SVineModel::new(spec, BTreeMap::new()).unwrap();
                        Sampler::new(&model).unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn independence_paths_are_uniform() {
        let model = SVineModel::new(m_vine_spec(2, 1), BTreeMap::new()).unwrap();
        let x = simulate_unconditional(&model, 2000, 7).unwrap();
        for j in 0..2 {
            assert!(ks_uniform(&x.column(j).to_vec()) < ks_critical_1pct(2000));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model = gaussian_model(long_d_vine_spec(2, 1), |_| 0.3);
        let a = simulate_unconditional(&model, 300, 11).unwrap();
        let b = simulate_unconditional(&model, 300, 11).unwrap();
        assert_eq!(a, b);
        let hist = a.slice(ndarray::s![..5, ..]).to_owned();
        let c = simulate_conditional(&model, &hist, 3, 50, 2).unwrap();
        let d = simulate_conditional(&model, &hist, 3, 50, 2).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn ar1_lag_tau_matches_copula() {
        let model = gaussian_model(m_vine_spec(1, 1), |_| 0.5);
        let x = simulate_unconditional(&model, 20_000, 3).unwrap();
        let c = x.column(0).to_vec();
        let tau = kendall_tau(&c[..c.len() - 1], &c[1..]);
        let truth = BivariateCopula::gaussian(0.5).unwrap().kendall_tau();
        assert!((tau - truth).abs() < 0.03, "{tau} vs {truth}");
    }

    #[test]
    fn persistence_pulls_the_forecast_up() {
        let model = gaussian_model(m_vine_spec(1, 1), |_| 0.9);
        let hist = Array2::from_elem((1, 1), 0.99);
        let sims = simulate_conditional(&model, &hist, 1, 10_000, 5).unwrap();
        let mean = sims.column(0).mean().unwrap();
        assert!(mean > 0.6, "{mean}");
    }

    #[test]
    fn cross_sectional_dependence_is_reproduced() {
        let spec = SVineSpec::new(d_vine(3), vec![1, 2, 3], vec![1, 2, 3], 0).unwrap();
        let model = gaussian_model(spec, |c| if c.level() == 1 { 0.7 } else { 0.0 });
        let x = simulate_unconditional(&model, 5000, 9).unwrap();
        let t12 = kendall_tau(&x.column(0).to_vec(), &x.column(1).to_vec());
        let t13 = kendall_tau(&x.column(0).to_vec(), &x.column(2).to_vec());
        let r13 = 0.49_f64;
        assert!((t12 - BivariateCopula::gaussian(0.7).unwrap().kendall_tau()).abs() < 0.03);
        assert!((t13 - 2.0 / std::f64::consts::PI * r13.asin()).abs() < 0.03);
        let _ = Family::Gaussian;
    }

    #[test]
    fn simulate_then_refit_recovers_each_class() {
        use crate::bicop::FamilyTag;
        use crate::estimation::{fit_sequential, MarginMode, PseudoSample};
        let spec = long_d_vine_spec(2, 1);
        let plan = crate::estimation::VinePlan::new(&spec).unwrap();
        let cops = [
            BivariateCopula::clayton(2.0, 0).unwrap(),
            BivariateCopula::gumbel(1.5, 90).unwrap(),
            BivariateCopula::frank(4.0).unwrap(),
            BivariateCopula::student_t(0.4, 5.0).unwrap(),
            BivariateCopula::clayton(1.0, 270).unwrap(),
        ];
        let map: BTreeMap<EdgeClass, BivariateCopula> = plan
            .classes()
            .iter()
            .zip(cops.iter().cycle())
            .map(|(c, cop)| (c.class.clone(), cop.clone()))
            .collect();
        let model = SVineModel::new(spec.clone(), map).unwrap();
        let u = simulate_unconditional(&model, 2500, 21).unwrap();
        let ps = PseudoSample::new(u, MarginMode::Semiparametric).unwrap();
        let fit = fit_sequential(&ps, &spec, &FamilyTag::default_menu()).unwrap();
        for ((class, truth), (_, est)) in model.copulas().zip(fit.copulas()) {
            assert!(
                (truth.kendall_tau() - est.kendall_tau()).abs() < 0.05,
                "{class}: {truth:?} vs {est:?}"
            );
        }
    }
}
