use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use svine::backtest::{run_backtest, BacktestConfig, BacktestModel, PortfolioSpec};
use svine::bootstrap::{bootstrap_forecast, default_block};
use svine::forecast::{forecast as run_forecast, Functional, FunctionalEstimate, Measure};
use svine::vine_graph::{
    build_svine, copar_d2_t3, is_stationary_vine, long_d_vine_spec, m_vine_spec, EdgeLabel, StructureJson,
    VineStructure,
};
use svine::{fit_model, simulate_unconditional, FamilyTag, FitOptions, MarginMode, SVineModel, SVineSpec};

use crate::data::{default_columns, write_matrix, Dataset};
use crate::error::CliError;
use crate::{BacktestArgs, CheckArgs, FitArgs, FixtureArgs, ForecastArgs, ModelOptions, SimulateArgs};

// ---- option parsing ---------------------------------------------------------

fn parse_mode(s: &str) -> Result<MarginMode, CliError> {
    s.parse().map_err(|e: svine::Error| CliError::usage(e.to_string()))
}

fn parse_families(s: &str) -> Result<Vec<FamilyTag>, CliError> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("default") || s.eq_ignore_ascii_case("all") {
        return Ok(FamilyTag::default_menu());
    }
    s.split(',')
        .filter(|f| !f.trim().is_empty())
        .map(|f| FamilyTag::parse(f.trim()).map_err(|e| CliError::usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::usage("empty family list"))
            } else {
                Ok(v)
            }
        })
}

fn parse_list<T>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| CliError::usage(format!("bad {what} '{p}': {e}"))))
        .collect()
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(&path.display().to_string(), e.line(), e.to_string()))
}

/// A structure file holds an S-vine specification, or a fitted model whose
/// specification is reused.
fn load_spec(path: &Path) -> Result<SVineSpec, CliError> {
    let mut v = read_json(path)?;
    if let Some(spec) = v.get_mut("spec") {
        v = spec.take();
    }
    serde_json::from_value(v).map_err(|e| CliError::Core(svine::Error::Structure(format!("{}: {e}", path.display()))))
}

fn fit_options(o: &ModelOptions) -> Result<FitOptions, CliError> {
    let structure = if o.structure.trim().eq_ignore_ascii_case("auto") {
        None
    } else {
        Some(load_spec(Path::new(&o.structure))?)
    };
    Ok(FitOptions {
        markov_order: o.markov,
        mode: parse_mode(&o.mode)?,
        structure,
        families: parse_families(&o.families)?,
    })
}

// ---- model files ------------------------------------------------------------

fn write_model(path: &Path, model: &SVineModel, columns: &[String]) -> Result<(), CliError> {
    let mut v: Value = serde_json::from_str(&model.to_json_string()?).map_err(svine::Error::from)?;
    v["columns"] = json!(columns);
    let text = serde_json::to_string_pretty(&v).map_err(svine::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_model(path: &Path) -> Result<(SVineModel, Vec<String>), CliError> {
    let mut v = read_json(path)?;
    let columns: Option<Vec<String>> = v
        .as_object_mut()
        .and_then(|o| o.remove("columns"))
        .and_then(|c| serde_json::from_value(c).ok());
    let model = SVineModel::from_json_str(&v.to_string())?;
    let columns = columns
        .filter(|c| c.len() == model.d())
        .unwrap_or_else(|| default_columns(model.d()));
    Ok((model, columns))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn label_with_names(l: &EdgeLabel, names: &[String]) -> String {
    let name = |v: &svine::vine_graph::VertexId| names[v.var as usize - 1].clone();
    let mut s = format!("{} - {}", name(&l.a), name(&l.b));
    if !l.conditioning.is_empty() {
        let c: Vec<String> = l.conditioning.iter().map(name).collect();
        s.push_str(" | ");
        s.push_str(&c.join(", "));
    }
    s
}

// ---- fit ----------------------------------------------------------------------

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let data = Dataset::read(&a.data)?;
    let opts = fit_options(&a.model)?;
    let model = fit_model(&data.values, &opts)?;
    write_model(&a.out, &model, &data.columns)?;

    let diag = model.diagnostics().expect("fresh fits carry diagnostics");
    let mut out = io::stdout().lock();
    let w = |out: &mut io::StdoutLock, s: String| writeln!(out, "{s}").map_err(|e| CliError::io(Path::new("<stdout>"), e));
    w(&mut out, format!("T = {}", diag.t_len))?;
    w(&mut out, format!("d = {}", model.d()))?;
    w(&mut out, format!("p = {}", model.markov_order()))?;
    w(&mut out, format!("mode = {}", model.mode()))?;
    w(&mut out, format!("loglik = {}", diag.loglik))?;
    w(&mut out, format!("aic = {}", diag.aic))?;
    let spec = model.spec();
    let perm = |p: &[u32]| p.iter().map(|&j| data.columns[j as usize - 1].clone()).collect::<Vec<_>>().join(", ");
    w(&mut out, format!("in_perm = [{}]", perm(spec.in_perm())))?;
    w(&mut out, format!("out_perm = [{}]", perm(spec.out_perm())))?;
    w(&mut out, "cross-section:".into())?;
    for e in spec.cross_section().edges() {
        w(&mut out, format!("  {}", label_with_names(&e.label, &data.columns)))?;
    }
    w(&mut out, "pair-copulas:".into())?;
    for (class, cop) in model.copulas() {
        let params: Vec<String> = cop.params().iter().map(|p| format!("{p:.6}")).collect();
        w(&mut out, format!("  {class}  {}  [{}]", cop.tag(), params.join(", ")))?;
    }
    w(&mut out, format!("model written to {}", a.out.display()))
}

// ---- simulate -------------------------------------------------------------------

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let (model, columns) = read_model(&a.model)?;
    let x = simulate_unconditional(&model, a.n, a.seed)?;
    write_matrix(output(a.out.as_deref())?, &columns, &x)
}

// ---- forecast -------------------------------------------------------------------

fn step_columns(columns: &[String], horizon: usize) -> Vec<String> {
    (1..=horizon)
        .flat_map(|s| columns.iter().map(move |c| format!("{c}@{s}")))
        .collect()
}

pub fn forecast(a: &ForecastArgs) -> Result<(), CliError> {
    let (model, columns) = read_model(&a.model)?;
    let history = Dataset::read(&a.history)?;
    if history.values.ncols() != model.d() {
        return Err(CliError::usage(format!(
            "history has {} columns, the model has {}",
            history.values.ncols(),
            model.d()
        )));
    }
    if a.horizon == 0 {
        return Err(CliError::usage("--horizon must be at least 1"));
    }
    let functionals: Vec<Functional> = parse_list(&a.functionals, "functional")?;
    let levels: Vec<f64> = parse_list(&a.levels, "level")?;
    let n_sims = match a.n {
        Some(0) => return Err(CliError::usage("-n must be at least 1")),
        Some(n) => n,
        None => 10 * model.diagnostics().map_or(history.values.nrows().max(100), |d| d.t_len),
    };
    let req = svine::forecast::ForecastRequest {
        history: history.values.clone(),
        horizon: a.horizon,
        n_sims,
        functionals,
        seed: a.seed,
    };
    let point = run_forecast(&model, &req)?;
    let estimates = if a.bootstrap > 0 {
        let path = a
            .data
            .as_ref()
            .ok_or_else(|| CliError::usage("--bootstrap needs the estimation sample via --data"))?;
        let x = Dataset::read(path)?.values;
        let block = a.block.unwrap_or_else(|| default_block(x.nrows()));
        bootstrap_forecast(&model, &x, &req, a.bootstrap, block, a.seed, &levels)?
    } else {
        point.estimates
    };
    let labels = step_columns(&columns, a.horizon);
    if let Some(p) = &a.sims_out {
        write_matrix(output(Some(p))?, &labels, &point.simulations)?;
    }
    let mut out = output(a.out.as_deref())?;
    match a.format.to_ascii_lowercase().as_str() {
        "json" => {
            let v = forecast_json(&labels, &columns, a.horizon, n_sims, &estimates);
            writeln!(out, "{}", serde_json::to_string_pretty(&v).map_err(svine::Error::from)?)
                .map_err(|e| CliError::io(Path::new("<output>"), e))
        }
        "csv" => forecast_csv(out, &columns, &estimates),
        other => Err(CliError::usage(format!("unknown format '{other}' (json or csv)"))),
    }
}

fn forecast_json(labels: &[String], columns: &[String], horizon: usize, n_sims: usize, est: &[FunctionalEstimate]) -> Value {
    json!({
        "horizon": horizon,
        "n_sims": n_sims,
        "variables": columns,
        "columns": labels,
        "estimates": est.iter().map(|e| json!({
            "functional": e.functional.to_string(),
            "values": e.values,
            "bands": e.bands.iter().map(|b| b.iter().map(|(l, lo, hi)| json!({"level": l, "lower": lo, "upper": hi})).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

fn forecast_csv(out: Box<dyn Write>, columns: &[String], est: &[FunctionalEstimate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["functional", "step", "variable", "value", "level", "lower", "upper"])
        .map_err(CliError::csv)?;
    let d = columns.len();
    for e in est {
        for (col, v) in e.values.iter().enumerate() {
            let (step, var) = (col / d + 1, &columns[col % d]);
            let base = [e.functional.to_string(), step.to_string(), var.clone(), v.to_string()];
            let bands = e.bands.get(col).filter(|b| !b.is_empty());
            match bands {
                None => w
                    .write_record(base.iter().cloned().chain(["".into(), "".into(), "".into()]))
                    .map_err(CliError::csv)?,
                Some(bs) => {
                    for (l, lo, hi) in bs {
                        w.write_record(base.iter().cloned().chain([l.to_string(), lo.to_string(), hi.to_string()]))
                            .map_err(CliError::csv)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(Path::new("<output>"), e))
}

// ---- backtest -------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum HorizonSpec {
    Steps(usize),
    Named(String),
}

fn parse_horizon(h: &HorizonSpec) -> Result<usize, CliError> {
    match h {
        HorizonSpec::Steps(n) => Ok(*n),
        HorizonSpec::Named(s) => match s.trim().to_ascii_lowercase().as_str() {
            "day" | "1d" => Ok(1),
            "week" | "1w" => Ok(5),
            other => other
                .parse()
                .map_err(|_| CliError::usage(format!("horizon '{s}' is not a number, 'day' or 'week'"))),
        },
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PortfolioFile {
    count: Option<usize>,
    lo: Option<f64>,
    hi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BacktestFile {
    window: Option<usize>,
    stride: Option<usize>,
    horizon: Option<HorizonSpec>,
    n_sims: Option<usize>,
    measures: Option<Vec<Measure>>,
    portfolios: Option<PortfolioFile>,
    seed: Option<u64>,
    nw_lags: Option<usize>,
    markov_order: Option<usize>,
    mode: Option<String>,
    structure: Option<String>,
    families: Option<Vec<String>>,
}

fn backtest_setup(a: &BacktestArgs) -> Result<(BacktestConfig, ModelOptions), CliError> {
    let file: BacktestFile = match &a.config {
        Some(p) => serde_json::from_value(read_json(p)?)
            .map_err(|e| CliError::parse(&p.display().to_string(), 1, e.to_string()))?,
        None => BacktestFile::default(),
    };
    let mut cfg = BacktestConfig::default();
    let pf = file.portfolios.unwrap_or_default();
    cfg.window = a.window.or(file.window).unwrap_or(cfg.window);
    cfg.stride = a.stride.or(file.stride).unwrap_or(cfg.stride);
    cfg.horizon = match (&a.horizon, &file.horizon) {
        (Some(h), _) => parse_horizon(&HorizonSpec::Named(h.clone()))?,
        (None, Some(h)) => parse_horizon(h)?,
        (None, None) => cfg.horizon,
    };
    cfg.n_sims = a.n.or(file.n_sims).unwrap_or(cfg.n_sims);
    cfg.measures = match &a.measures {
        Some(m) => parse_list(m, "measure")?,
        None => file.measures.unwrap_or(cfg.measures),
    };
    cfg.portfolios = PortfolioSpec {
        count: a.portfolios.or(pf.count).unwrap_or(cfg.portfolios.count),
        lo: a.weight_lo.or(pf.lo).unwrap_or(cfg.portfolios.lo),
        hi: a.weight_hi.or(pf.hi).unwrap_or(cfg.portfolios.hi),
    };
    cfg.seed = a.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.nw_lags = file.nw_lags.unwrap_or(cfg.nw_lags);
    let model = ModelOptions {
        markov: a.markov.or(file.markov_order).unwrap_or(1),
        mode: a.mode.clone().or(file.mode).unwrap_or_else(|| "semipar".into()),
        structure: a.structure.clone().or(file.structure).unwrap_or_else(|| "auto".into()),
        families: a
            .families
            .clone()
            .or(file.families.map(|f| f.join(",")))
            .unwrap_or_else(|| "default".into()),
    };
    Ok((cfg, model))
}

pub fn backtest(a: &BacktestArgs) -> Result<(), CliError> {
    let data = Dataset::read(&a.data)?;
    let (cfg, model_opts) = backtest_setup(a)?;
    if cfg.portfolios.count == 0 {
        return Err(CliError::usage("at least one portfolio is required"));
    }
    let opts = fit_options(&model_opts)?;
    let mode = opts.mode;
    let models = [
        ("svine".to_string(), BacktestModel::Refit(opts)),
        ("independence".to_string(), BacktestModel::Independence(mode)),
    ];
    let report = run_backtest(&data.values, &cfg, &models)?;
    output(a.out.as_deref())?
        .write_all(report.to_csv().as_bytes())
        .map_err(|e| CliError::io(Path::new("<output>"), e))?;
    if let Some(p) = &a.series_out {
        let mut w = csv::Writer::from_writer(output(Some(p))?);
        w.write_record(["origin", "date", "model", "measure", "score"])
            .map_err(CliError::csv)?;
        for r in &report.results {
            for (i, v) in r.series.iter().enumerate() {
                let t = report.origins[i];
                let date = data.dates.as_ref().map(|d| d[t].clone()).unwrap_or_default();
                w.write_record([t.to_string(), date, r.model.clone(), r.measure.to_string(), v.to_string()])
                    .map_err(CliError::csv)?;
            }
        }
        w.flush().map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

// ---- structures -----------------------------------------------------------------

pub fn check_structure(a: &CheckArgs) -> Result<(), CliError> {
    let mut v = read_json(&a.structure)?;
    if let Some(spec) = v.get_mut("spec") {
        v = spec.take();
    }
    let (vine, what) = if v.get("in_perm").is_some() {
        if a.t_len == 0 {
            return Err(CliError::usage("--T must be at least 1"));
        }
        let spec: SVineSpec = serde_json::from_value(v).map_err(|e| CliError::Core(svine::Error::Structure(e.to_string())))?;
        let vine = build_svine(&spec, a.t_len)?;
        (vine, format!("S-vine specification expanded to T = {} (d = {})", a.t_len, spec.d()))
    } else {
        let j: StructureJson = serde_json::from_value(v).map_err(|e| CliError::Core(svine::Error::Structure(e.to_string())))?;
        let vine = VineStructure::from_json(&j)?;
        let what = format!(
            "explicit structure on {} vertices, times {}..{}",
            vine.n_vertices(),
            vine.min_time(),
            vine.max_time()
        );
        (vine, what)
    };
    let rep = is_stationary_vine(&vine);
    let mut out = io::stdout().lock();
    let res = if rep.stationary {
        writeln!(out, "PASS: stationary vine ({what})")
    } else {
        let (t, m) = rep.witness.unwrap_or_default();
        writeln!(
            out,
            "FAIL: not a stationary vine ({what}); witness window t = {t}, m = {m}: {}",
            rep.reason.unwrap_or_default()
        )
    };
    res.map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

pub fn fixture(a: &FixtureArgs) -> Result<(), CliError> {
    if a.d == 0 {
        return Err(CliError::usage("-d must be at least 1"));
    }
    let v = match a.name.to_ascii_lowercase().as_str() {
        "m-vine" | "mvine" => serde_json::to_value(m_vine_spec(a.d, a.markov)),
        "d-vine" | "dvine" => serde_json::to_value(long_d_vine_spec(a.d, a.markov)),
        "copar" => serde_json::to_value(copar_d2_t3().to_json()),
        other => return Err(CliError::usage(format!("unknown fixture '{other}' (m-vine, d-vine, copar)"))),
    }
    .map_err(svine::Error::from)?;
    println!("{}", serde_json::to_string_pretty(&v).map_err(svine::Error::from)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_lists() {
        assert_eq!(parse_families("default").unwrap(), FamilyTag::default_menu());
        assert_eq!(parse_families("gaussian, clayton_90").unwrap().len(), 2);
        assert!(parse_families("bogus").is_err());
        assert!(parse_families(",").is_err());
    }

    #[test]
    fn horizons() {
        assert_eq!(parse_horizon(&HorizonSpec::Named("week".into())).unwrap(), 5);
        assert_eq!(parse_horizon(&HorizonSpec::Named("3".into())).unwrap(), 3);
        assert_eq!(parse_horizon(&HorizonSpec::Steps(1)).unwrap(), 1);
        assert!(parse_horizon(&HorizonSpec::Named("month".into())).is_err());
    }

    #[test]
    fn step_labels_are_time_major() {
        let c = vec!["a".to_string(), "b".to_string()];
        assert_eq!(step_columns(&c, 2), ["a@1", "b@1", "a@2", "b@2"]);
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        fs::write(&p, r#"{"window": 300, "stride": 20, "horizon": "week", "portfolios": {"count": 7}, "families": ["gaussian"]}"#).unwrap();
        let args = BacktestArgs {
            data: "x.csv".into(),
            config: Some(p),
            window: Some(250),
            stride: None,
            horizon: None,
            n: None,
            measures: Some("crps,var99".into()),
            portfolios: None,
            weight_lo: None,
            weight_hi: None,
            seed: None,
            markov: None,
            mode: None,
            structure: None,
            families: None,
            out: None,
            series_out: None,
        };
        let (cfg, m) = backtest_setup(&args).unwrap();
        assert_eq!((cfg.window, cfg.stride, cfg.horizon), (250, 20, 5));
        assert_eq!(cfg.portfolios.count, 7);
        assert_eq!(cfg.measures, vec![Measure::Crps, Measure::Var99]);
        assert_eq!(m.families, "gaussian");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        fs::write(&p, r#"{"windw": 300}"#).unwrap();
        let args = BacktestArgs {
            data: "x.csv".into(),
            config: Some(p),
            window: None,
            stride: None,
            horizon: None,
            n: None,
            measures: None,
            portfolios: None,
            weight_lo: None,
            weight_hi: None,
            seed: None,
            markov: None,
            mode: None,
            structure: None,
            families: None,
            out: None,
            series_out: None,
        };
        assert!(matches!(backtest_setup(&args), Err(CliError::Parse { .. })));
    }
}
