//! Step-wise maximum likelihood for stationary vine copula models.
//!
//! Every pair-copula is shared by all time translates of its edge, so the
//! model is fitted on the window vine spanning `p + 1` time points. Each
//! edge class is fitted once, level by level, on the concatenation of all
//! its translated instances inside the observed sample.

mod model;
mod select;

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::{fit_pair, select_family, BivariateCopula, FamilyTag, PairData, CLAMP_EPS};
use crate::error::{Error, Result};
use crate::margins::{fit_margin_mle, Margin};
use crate::vine_graph::{build_svine, edge_classes, EdgeClass, SVineSpec, VineStructure};

pub use model::{ClassDiagnostics, FitDiagnostics, SVineModel};
pub use select::select_structure;

/// Source of the marginal pseudo-observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    /// Fitted skew-t margins.
    Parametric,
    /// Rescaled empirical distribution functions.
    Semiparametric,
}

impl std::str::FromStr for MarginMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "par" | "parametric" => Ok(MarginMode::Parametric),
            "semipar" | "semiparametric" | "empirical" => Ok(MarginMode::Semiparametric),
            other => Err(Error::domain(format!("unknown margin mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for MarginMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarginMode::Parametric => "parametric",
            MarginMode::Semiparametric => "semiparametric",
        })
    }
}

/// A `T × d` matrix of pseudo-observations strictly inside the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    data: Array2<f64>,
    mode: MarginMode,
}

impl PseudoSample {
    pub fn new(data: Array2<f64>, mode: MarginMode) -> Result<Self> {
        if let Some(((t, j), x)) = data.indexed_iter().find(|(_, &x)| !(x > 0.0 && x < 1.0)) {
            return Err(Error::domain(format!(
                "pseudo-observation at row {}, column {} is {x}, outside (0, 1)",
                t + 1,
                j + 1
            )));
        }
        Ok(PseudoSample { data, mode })
    }

    /// Fits the margins of `x` and returns the transformed sample with them.
    pub fn from_observations(x: &Array2<f64>, mode: MarginMode) -> Result<(Self, Vec<Margin>)> {
        let margins: Vec<Margin> = x
            .columns()
            .into_iter()
            .enumerate()
            .map(|(j, col)| {
                let col = col.to_vec();
                match mode {
                    MarginMode::Parametric => fit_margin_mle(&col).map(|f| Margin::skew_t(f.params)),
                    MarginMode::Semiparametric => Margin::empirical(&col),
                }
                .map_err(|e| Error::domain(format!("margin of column {}: {e}", j + 1)))
            })
            .collect::<Result<_>>()?;
        let u = transform(x, &margins)?;
        Ok((PseudoSample { data: u, mode }, margins))
    }

    pub fn t_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn mode(&self) -> MarginMode {
        self.mode
    }

    /// Column `j` (0-based) as a contiguous vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).to_vec()
    }
}

/// Applies each margin's clamped PIT to its column.
pub fn transform(x: &Array2<f64>, margins: &[Margin]) -> Result<Array2<f64>> {
    if x.ncols() != margins.len() {
        return Err(Error::domain(format!(
            "{} columns but {} margins",
            x.ncols(),
            margins.len()
        )));
    }
    let mut u = Array2::zeros(x.raw_dim());
    for (j, m) in margins.iter().enumerate() {
        let col = m.pit(&x.column(j).to_vec());
        u.column_mut(j).assign(&ndarray::Array1::from(col));
    }
    Ok(u)
}

/// Where one argument of a class copula comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Column `var` (0-based) at time offset `dt` from the instance start.
    Data { dt: usize, var: usize },
    /// Output `side` (0: `C(a | b, D)`, 1: `C(b | a, D)`) of class `class`,
    /// at instance `shift` positions later.
    Edge { class: usize, shift: usize, side: usize },
}

/// One edge class together with the location of its inputs.
#[derive(Debug, Clone)]
pub struct ClassPlan {
    pub class: EdgeClass,
    pub level: usize,
    pub span: usize,
    pub sources: [Source; 2],
}

/// Evaluation order of the edge classes of a Markov-truncated S-vine.
#[derive(Debug, Clone)]
pub struct VinePlan {
    window: VineStructure,
    classes: Vec<ClassPlan>,
    index: HashMap<EdgeClass, usize>,
    /// Plan class of every window edge, by `[level - 1][index]`.
    window_class: Vec<Vec<usize>>,
    d: usize,
    p: usize,
}

impl VinePlan {
    pub fn new(spec: &SVineSpec) -> Result<Self> {
        let p = spec.markov_order();
        let window = build_svine(spec, p + 1)?;
        let ec = edge_classes(&window);
        let mut order: Vec<usize> = (0..ec.len()).collect();
        order.sort_by(|&x, &y| {
            ec.classes[x]
                .level()
                .cmp(&ec.classes[y].level())
                .then_with(|| ec.classes[x].cmp(&ec.classes[y]))
        });
        let mut plan_of = vec![0; ec.len()];
        for (pi, &ci) in order.iter().enumerate() {
            plan_of[ci] = pi;
        }
        let mut classes = Vec::with_capacity(order.len());
        for &ci in &order {
            let class = ec.classes[ci].clone();
            let &(level, idx) = ec.members[ci]
                .iter()
                .find(|&&(l, i)| window.tree(l)[i].label.min_time() == 1)
                .ok_or_else(|| Error::structure(format!("class {class} has no member starting at time 1")))?;
            let edge = &window.tree(level)[idx];
            let ends = [edge.label.a, edge.label.b];
            let mut sources = [Source::Data { dt: 0, var: 0 }; 2];
            for side in 0..2 {
                let child = edge.children[side];
                sources[side] = if level == 1 {
                    let v = window.vertices()[child];
                    Source::Data {
                        dt: (v.time - 1) as usize,
                        var: (v.var - 1) as usize,
                    }
                } else {
                    let cl = &window.tree(level - 1)[child].label;
                    Source::Edge {
                        class: plan_of[ec.of_edge[level - 2][child]],
                        shift: (cl.min_time() - 1) as usize,
                        side: if cl.a == ends[side] { 0 } else { 1 },
                    }
                };
            }
            classes.push(ClassPlan {
                span: class.span() as usize,
                level,
                sources,
                class,
            });
        }
        let index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.class.clone(), i))
            .collect();
        let window_class = ec
            .of_edge
            .iter()
            .map(|lv| lv.iter().map(|&ci| plan_of[ci]).collect())
            .collect();
        Ok(VinePlan {
            window,
            classes,
            index,
            window_class,
            d: spec.d(),
            p,
        })
    }

    /// The vine on times `1..=p+1`.
    pub fn window(&self) -> &VineStructure {
        &self.window
    }

    pub fn classes(&self) -> &[ClassPlan] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_index(&self, class: &EdgeClass) -> Option<usize> {
        self.index.get(class).copied()
    }

    /// Plan class of the window edge at `(level, index)`.
    pub fn window_class(&self, level: usize, idx: usize) -> usize {
        self.window_class[level - 1][idx]
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn markov_order(&self) -> usize {
        self.p
    }

    pub fn n_levels(&self) -> usize {
        self.classes.last().map_or(0, |c| c.level)
    }

    /// Number of translated instances of class `c` in a sample of length `t_len`.
    pub fn n_instances(&self, c: usize, t_len: usize) -> usize {
        t_len.saturating_sub(self.classes[c].span)
    }

    /// Ranges of plan indices sharing a tree level.
    pub fn level_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out: Vec<std::ops::Range<usize>> = Vec::new();
        for (i, c) in self.classes.iter().enumerate() {
            match out.last_mut() {
                Some(r) if self.classes[r.start].level == c.level => r.end = i + 1,
                _ => out.push(i..i + 1),
            }
        }
        out
    }

    /// Copula arguments of every instance of class `c`.
    pub fn inputs(&self, c: usize, u: &Array2<f64>, h: &[[Vec<f64>; 2]]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_instances(c, u.nrows());
        let fetch = |src: Source| -> Vec<f64> {
            match src {
                Source::Data { dt, var } => (0..n).map(|s| u[[s + dt, var]]).collect(),
                Source::Edge { class, shift, side } => h[class][side][shift..shift + n].to_vec(),
            }
        };
        let [sa, sb] = self.classes[c].sources;
        (fetch(sa), fetch(sb))
    }

    /// Highest level among the classes feeding class `c` (0 for raw data).
    pub fn source_level(&self, c: usize) -> usize {
        self.classes[c]
            .sources
            .iter()
            .map(|s| match *s {
                Source::Data { .. } => 0,
                Source::Edge { class, .. } => self.classes[class].level,
            })
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn check_sample(&self, u: &Array2<f64>) -> Result<()> {
        if u.ncols() != self.d {
            return Err(Error::domain(format!(
                "sample has {} columns, model has d = {}",
                u.ncols(),
                self.d
            )));
        }
        if u.nrows() < self.p + 1 {
            return Err(Error::InsufficientData(format!(
                "{} rows cannot hold a window of {} time points",
                u.nrows(),
                self.p + 1
            )));
        }
        Ok(())
    }
}

/// h-function outputs of every class instance.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `h[c] = [C(a | b, D), C(b | a, D)]` per instance.
    pub h: Vec<[Vec<f64>; 2]>,
    /// Log-density summed over the instances of each class.
    pub class_loglik: Vec<f64>,
    /// Number of outputs that hit the clamping bounds.
    pub clamped: usize,
}

fn outputs(cop: &BivariateCopula, a: &[f64], b: &[f64]) -> ([Vec<f64>; 2], usize) {
    let ha: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| cop.h_given_v(x, y)).collect();
    let hb: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| cop.h_given_u(x, y)).collect();
    let at_bound = |x: &f64| *x <= CLAMP_EPS || *x >= 1.0 - CLAMP_EPS;
    let clamped = ha.iter().filter(|x| at_bound(x)).count() + hb.iter().filter(|x| at_bound(x)).count();
    ([ha, hb], clamped)
}

/// Evaluates all classes in plan order with the given copulas.
pub fn propagate(plan: &VinePlan, copulas: &[BivariateCopula], u: &Array2<f64>) -> Result<Propagation> {
    plan.check_sample(u)?;
    if copulas.len() != plan.len() {
        return Err(Error::domain(format!(
            "{} copulas for {} edge classes",
            copulas.len(),
            plan.len()
        )));
    }
    let mut h: Vec<[Vec<f64>; 2]> = Vec::with_capacity(plan.len());
    let mut class_loglik = Vec::with_capacity(plan.len());
    let mut clamped = 0;
    for (c, cop) in copulas.iter().enumerate() {
        let (a, b) = plan.inputs(c, u, &h);
        let ll = if cop.is_independence() {
            0.0
        } else {
            a.iter().zip(&b).map(|(&x, &y)| cop.ln_pdf(x, y)).sum()
        };
        let (out, k) = outputs(cop, &a, &b);
        clamped += k;
        class_loglik.push(ll);
        h.push(out);
    }
    Ok(Propagation {
        h,
        class_loglik,
        clamped,
    })
}

fn fit_class(data: &PairData<'_>, menu: &[FamilyTag]) -> Result<(BivariateCopula, f64, bool)> {
    if menu.len() == 1 {
        let f = fit_pair(data, menu[0])?;
        Ok((f.copula, f.loglik, f.fell_back))
    } else {
        let s = select_family(data, menu)?;
        Ok((s.fit.copula, s.fit.loglik, s.fit.fell_back))
    }
}

/// Fits every edge class of `spec` to `u`, tree level by tree level.
///
/// The returned model carries no margins; attach them with
/// [`SVineModel::with_margins`].
pub fn fit_sequential(u: &PseudoSample, spec: &SVineSpec, menu: &[FamilyTag]) -> Result<SVineModel> {
    if menu.is_empty() {
        return Err(Error::domain("empty family menu"));
    }
    let d = spec.d();
    let p = spec.markov_order();
    if u.d() != d {
        return Err(Error::domain(format!("sample has {} columns, structure has d = {d}", u.d())));
    }
    let need = (p + 1) * d + 10;
    if u.t_len() <= need {
        return Err(Error::InsufficientData(format!(
            "T = {} but a Markov order {p} model in dimension {d} needs T > {need}",
            u.t_len()
        )));
    }
    let plan = VinePlan::new(spec)?;
    let data = u.data();
    let mut copulas: Vec<BivariateCopula> = Vec::with_capacity(plan.len());
    let mut h: Vec<[Vec<f64>; 2]> = Vec::with_capacity(plan.len());
    let mut diags = Vec::with_capacity(plan.len());
    let mut clamped = 0;
    for range in plan.level_ranges() {
        let results: Vec<(BivariateCopula, [Vec<f64>; 2], usize, ClassDiagnostics)> = range
            .clone()
            .into_par_iter()
            .map(|c| {
                let (a, b) = plan.inputs(c, data, &h);
                let pair = PairData::new(&a, &b);
                let (cop, loglik, fell_back, insufficient) = match fit_class(&pair, menu) {
                    Ok((cop, ll, fb)) => (cop, ll, fb, false),
                    Err(Error::InsufficientData(msg)) => {
                        log::warn!("class {}: {msg}; using independence", plan.classes[c].class);
                        (BivariateCopula::independence(), 0.0, true, true)
                    }
                    Err(e) => {
                        return Err(Error::numerical(
                            format!("fitting class {}", plan.classes[c].class),
                            e.to_string(),
                        ))
                    }
                };
                if fell_back && !insufficient {
                    log::warn!("class {}: optimizer fell back to the tau-inversion start", plan.classes[c].class);
                }
                let (out, k) = outputs(&cop, &a, &b);
                let diag = ClassDiagnostics {
                    class: plan.classes[c].class.clone(),
                    level: plan.classes[c].level,
                    n_obs: a.len(),
                    loglik,
                    family: cop.tag().to_string(),
                    fell_back,
                    insufficient,
                    source_level: plan.source_level(c),
                };
                Ok((cop, out, k, diag))
            })
            .collect::<Result<_>>()?;
        for (cop, out, k, diag) in results {
            copulas.push(cop);
            h.push(out);
            clamped += k;
            diags.push(diag);
        }
    }
    let loglik: f64 = diags.iter().map(|d| d.loglik).sum();
    let n_params: usize = copulas.iter().map(|c| c.n_params()).sum();
    let diagnostics = FitDiagnostics {
        t_len: u.t_len(),
        mode: u.mode(),
        loglik,
        aic: -2.0 * loglik + 2.0 * n_params as f64,
        clamped,
        classes: diags,
    };
    SVineModel::from_plan(spec.clone(), plan, copulas, None, u.mode(), Some(diagnostics))
}

/// Pseudo log-likelihood of `u` under the copula part of `model`.
pub fn loglik(model: &SVineModel, u: &PseudoSample) -> Result<f64> {
    let prop = propagate(model.plan(), model.copula_list(), u.data())?;
    Ok(prop.class_loglik.iter().sum())
}

/// `−2·loglik + 2·k`, where `k` counts copula parameters of non-independence
/// classes plus, for parametric margins, the marginal parameters.
pub fn aic(model: &SVineModel, u: &PseudoSample) -> Result<f64> {
    Ok(-2.0 * loglik(model, u)? + 2.0 * model.n_params() as f64)
}

/// Options for fitting margins, structure and copulas in one call.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub markov_order: usize,
    pub mode: MarginMode,
    /// Fixed structure; selected from the data when `None`.
    pub structure: Option<SVineSpec>,
    pub families: Vec<FamilyTag>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            markov_order: 1,
            mode: MarginMode::Parametric,
            structure: None,
            families: FamilyTag::default_menu(),
        }
    }
}

/// Fits margins, selects the structure if needed, and fits all pair-copulas.
pub fn fit_model(x: &Array2<f64>, opts: &FitOptions) -> Result<SVineModel> {
    let (u, margins) = PseudoSample::from_observations(x, opts.mode)?;
    let spec = match &opts.structure {
        Some(s) => s.with_markov_order(opts.markov_order),
        None => select_structure(&u, opts.markov_order, &opts.families)?,
    };
    let model = fit_sequential(&u, &spec, &opts.families)?;
    model.with_margins(margins, opts.mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bicop::{pair_loglik, Family};
    use crate::vine_graph::{d_vine, m_vine_spec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ar_gaussian(t_len: usize, rho: f64, seed: u64) -> PseudoSample {
        let cop = BivariateCopula::gaussian(rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = Array2::zeros((t_len, 1));
        let mut prev: f64 = rand::Rng::random(&mut rng);
        u[[0, 0]] = prev;
        for t in 1..t_len {
            let w: f64 = rand::Rng::random(&mut rng);
            prev = cop.hinv_given_u(w, prev).unwrap();
            u[[t, 0]] = prev;
        }
        PseudoSample::new(u, MarginMode::Semiparametric).unwrap()
    }

    fn uniform_sample(t_len: usize, d: usize, seed: u64) -> PseudoSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array2::from_shape_fn((t_len, d), |_| rand::Rng::random_range(&mut rng, 0.001..0.999));
        PseudoSample::new(u, MarginMode::Semiparametric).unwrap()
    }

    #[test]
    fn rejects_values_on_the_boundary() {
        let u = Array2::from_elem((3, 1), 0.0);
        assert!(matches!(PseudoSample::new(u, MarginMode::Parametric), Err(Error::Domain(_))));
    }

    #[test]
    fn plan_for_m_vine_has_expected_classes() {
        let plan = VinePlan::new(&m_vine_spec(2, 1)).unwrap();
        assert_eq!(plan.len(), 5);
        assert_eq!(plan.n_levels(), 3);
        for c in 0..plan.len() {
            assert!(plan.source_level(c) < plan.classes()[c].level);
        }
        let spans: Vec<usize> = plan.classes().iter().map(|c| c.span).collect();
        assert_eq!(spans.iter().filter(|&&s| s == 0).count(), 1);
    }

    #[test]
    fn univariate_markov_chain_matches_single_pair_fit() {
        let u = ar_gaussian(400, 0.6, 1);
        let spec = m_vine_spec(1, 1);
        let tag = FamilyTag::plain(Family::Gaussian);
        let model = fit_sequential(&u, &spec, &[tag]).unwrap();
        let x = u.column(0);
        let direct = fit_pair(&PairData::new(&x[..399], &x[1..]), tag).unwrap();
        let (_, cop) = model.copulas().next().unwrap();
        assert_eq!(cop.params(), direct.copula.params());
        let ll = loglik(&model, &u).unwrap();
        let hand: f64 = (0..399).map(|t| direct.copula.ln_pdf(x[t], x[t + 1])).sum();
        assert!((ll - hand).abs() < 1e-9);
        assert!((ll - pair_loglik(&direct.copula, &PairData::new(&x[..399], &x[1..]))).abs() < 1e-9);
    }

    #[test]
    fn independence_model_has_zero_loglik() {
        let u = uniform_sample(200, 3, 2);
        let spec = SVineSpec::new(d_vine(3), vec![1, 2, 3], vec![1, 2, 3], 1).unwrap();
        let model = fit_sequential(&u, &spec, &[FamilyTag::plain(Family::Independence)]).unwrap();
        assert_eq!(loglik(&model, &u).unwrap(), 0.0);
        assert_eq!(aic(&model, &u).unwrap(), 0.0);
    }

    #[test]
    fn pooled_inputs_are_concatenated_translates() {
        let u = uniform_sample(60, 2, 3);
        let spec = m_vine_spec(2, 1);
        let plan = VinePlan::new(&spec).unwrap();
        let c = plan
            .classes()
            .iter()
            .position(|c| c.level == 1 && c.span == 0)
            .unwrap();
        let (a, b) = plan.inputs(c, u.data(), &[]);
        assert_eq!(a, u.column(0));
        assert_eq!(b, u.column(1));
    }

    #[test]
    fn too_short_sample_is_rejected() {
        let u = uniform_sample(14, 2, 4);
        let err = fit_sequential(&u, &m_vine_spec(2, 1), &[FamilyTag::plain(Family::Gaussian)]).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn fitted_classes_improve_on_their_start() {
        let u = ar_gaussian(300, 0.5, 5);
        let model = fit_sequential(&u, &m_vine_spec(1, 1), &FamilyTag::default_menu()).unwrap();
        for c in &model.diagnostics().unwrap().classes {
            assert!(c.source_level < c.level);
        }
        assert!(loglik(&model, &u).unwrap() > 0.0);
    }
}
