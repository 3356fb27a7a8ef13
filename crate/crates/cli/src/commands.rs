//! The five batch commands. Each one reads a configuration, runs the
//! engine and writes its artifacts into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use laplgm::assessment;
use laplgm::engine::{emarginal, fit as run_engine, zmarginal, FitResult, MarginalDensity, SimulationSpec, Summary};
use laplgm::likelihood::{Family, Lik};

use crate::config::{RunConfig, SimulateSection};
use crate::data::Dataset;
use crate::error::{io_err, Result};
use crate::model::{build, BuiltModel, PRED_TAG};
use crate::output::{file_stem, num, write_atomic, Table};

/// Command-line values that take precedence over the `[run]` section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub strategy: Option<String>,
    pub int_strategy: Option<String>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let r = &mut cfg.run;
        if let Some(s) = self.seed {
            r.seed = s;
        }
        if let Some(t) = self.threads {
            r.threads = Some(t);
        }
        if let Some(s) = &self.strategy {
            r.strategy = s.clone();
        }
        if let Some(s) = &self.int_strategy {
            r.int_strategy = s.clone();
        }
        if let Some(o) = &self.out {
            r.out = Some(absolute(o));
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    std::env::current_dir().map_or_else(|_| p.to_path_buf(), |d| d.join(p))
}

/// Loads a configuration file and applies command-line overrides.
pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

pub fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg
        .run
        .out
        .as_ref()
        .ok_or_else(|| cfg.error("run.out", "no output directory; set `run.out` or pass --out"))?;
    let dir = cfg.resolve(out);
    std::fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    Ok(dir)
}

fn summary_cells(name: &str, s: &Summary) -> Vec<String> {
    vec![name.to_string(), num(s.mean), num(s.sd), num(s.q025), num(s.q50), num(s.q975), num(s.mode)]
}

const SUMMARY_HEADER: [&str; 7] = ["name", "mean", "sd", "q025", "q50", "q975", "mode"];

fn write_marginal(path: &Path, m: &MarginalDensity) -> Result<()> {
    let mut t = Table::new("marginal", &["x", "density"]);
    for (x, d) in m.grid().iter().zip(m.density()) {
        t.row([num(*x), num(*d)]);
    }
    t.write(path)
}

/// Small key/value log in TOML, hand-written so key order is stable.
struct RunLog(String);

impl RunLog {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut s = String::new();
        let _ = writeln!(s, "command = {command:?}");
        let _ = writeln!(s, "config = {:?}", cfg.path.display().to_string());
        let _ = writeln!(s, "seed = {}", cfg.run.seed);
        match cfg.run.threads {
            Some(t) => {
                let _ = writeln!(s, "threads = {t}");
            }
            None => s.push_str("threads = \"all\"\n"),
        }
        let _ = writeln!(s, "strategy = {:?}", cfg.run.strategy);
        let _ = writeln!(s, "int_strategy = {:?}", cfg.run.int_strategy);
        Self(s)
    }

    fn fit(&mut self, fit: &FitResult) {
        let s = &mut self.0;
        let _ = writeln!(s, "mlik = {}", fit.mlik);
        let _ = writeln!(s, "theta_nodes = {}", fit.nodes.len());
        let _ = writeln!(s, "profile_points = {}", fit.profile.len());
        let _ = writeln!(s, "mode_iterations = {}", fit.diagnostics.iterations);
        let _ = writeln!(s, "mode_evaluations = {}", fit.diagnostics.evaluations);
        let t = fit.timings;
        let _ = writeln!(
            s,
            "\n[timings]\npreprocessing = {}\nsolving = {}\npostprocessing = {}\ntotal = {}",
            t.preprocessing,
            t.solving,
            t.postprocessing,
            t.total()
        );
    }

    fn write(mut self, dir: &Path, elapsed: f64) -> Result<()> {
        let _ = writeln!(self.0, "\n[wall]\nseconds = {elapsed}");
        write_atomic(&dir.join("run_log.toml"), &self.0)
    }
}

fn sim_spec(s: &SimulateSection, cfg: &RunConfig) -> Result<SimulationSpec> {
    let likelihood = match s.family.as_str() {
        "poisson" => Lik::Poisson,
        "gaussian" => Lik::Gaussian {
            precision: s
                .precision
                .ok_or_else(|| cfg.error("simulate.precision", "gaussian simulation needs a precision"))?,
        },
        "nbinomial" => Lik::NBinomial {
            size: s.size.ok_or_else(|| cfg.error("simulate.size", "negative binomial simulation needs a size"))?,
        },
        other => return Err(cfg.error("simulate.family", format!("unknown family {other:?}"))),
    };
    Ok(SimulationSpec {
        n_sites: s.n_sites,
        n_times: s.n_times,
        mesh_cells: s.mesh_cells,
        extent: (s.extent[0], s.extent[1]),
        range: s.range,
        sigma0: s.sigma0,
        rho: s.rho,
        intercept: s.intercept,
        beta1: s.beta1,
        beta2: s.beta2,
        likelihood,
    })
}

/// Writes `data.csv`, `truth.csv` and `sites.csv`.
pub fn simulate(cfg: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    let s = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| cfg.error("simulate", "missing [simulate] section"))?;
    let spec = sim_spec(s, cfg)?;
    let dir = out_dir(cfg)?;
    let sim = laplgm::engine::simulate(&spec, cfg.run.seed)?;

    let mut data = Table::new("data", &["site_x", "site_y", "time", "y", "covar1", "covar2"]);
    for r in &sim.rows {
        let p = sim.sites[r.site];
        data.row([num(p[0]), num(p[1]), r.time.to_string(), num(r.y), num(r.covar1), num(r.covar2)]);
    }
    data.write(&dir.join("data.csv"))?;

    let mut truth = Table::new("truth", &["node", "x", "y", "time", "w"]);
    for t in 0..sim.field.ncols() {
        for (v, p) in sim.mesh.vertices().iter().enumerate() {
            truth.row([v.to_string(), num(p[0]), num(p[1]), (t + 1).to_string(), num(sim.field[(v, t)])]);
        }
    }
    truth.write(&dir.join("truth.csv"))?;

    let mut sites = Table::new("sites", &["site", "x", "y", "node"]);
    for (k, (p, n)) in sim.sites.iter().zip(&sim.site_nodes).enumerate() {
        sites.row([k.to_string(), num(p[0]), num(p[1]), n.to_string()]);
    }
    sites.write(&dir.join("sites.csv"))?;

    let mut log = RunLog::new("simulate", cfg);
    let _ = writeln!(log.0, "rows = {}", sim.rows.len());
    log.write(&dir, start.elapsed().as_secs_f64())?;
    Ok(dir)
}

/// Reads the data, builds the model and runs the engine.
pub fn fit_model(cfg: &RunConfig) -> Result<(Dataset, BuiltModel, FitResult)> {
    let file = &cfg
        .data
        .as_ref()
        .ok_or_else(|| cfg.error("data", "missing [data] section"))?
        .file;
    let data = Dataset::read(&cfg.resolve(file))?;
    if data.y.iter().all(Option::is_none) {
        return Err(cfg.error("data.file", "the response column has no observed values"));
    }
    let built = build(cfg, &data)?;
    log::info!(
        "fitting {} rows, {} latent variables, {} hyperparameters",
        built.graph.n_rows(),
        built.graph.latent().n(),
        built.graph.hypers().dim()
    );
    let fit = run_engine(&built.graph, &built.engine)?;
    Ok((data, built, fit))
}

fn write_fit(dir: &Path, fit: &FitResult) -> Result<()> {
    let marg = dir.join("marginals");
    let mut fixed = Table::new("summary_fixed", &SUMMARY_HEADER);
    for (name, s) in fit.fixed_effects() {
        fixed.row(summary_cells(&name, &s));
        let k = fit.component(&name)?.range.start;
        write_marginal(&marg.join(format!("fixed_{}.csv", file_stem(&name))), &fit.latent_marginal(k))?;
    }
    fixed.write(&dir.join("summary_fixed.csv"))?;

    let mut hyper = Table::new("summary_hyper", &SUMMARY_HEADER);
    for (j, name) in fit.hyper_names().iter().enumerate() {
        let m = fit.hyper_natural_marginal(j)?;
        hyper.row(summary_cells(name, &zmarginal(&m)));
        write_marginal(&marg.join(format!("hyper_{}.csv", file_stem(name))), &m)?;
    }
    for s in &fit.spde {
        if let Some((range, var)) = fit.spde_range_variance(&s.component)? {
            for (what, m) in [("range", range), ("variance", var)] {
                let name = format!("{}_{what}", s.component);
                hyper.row(summary_cells(&name, &zmarginal(&m)));
                write_marginal(&marg.join(format!("hyper_{}.csv", file_stem(&name))), &m)?;
            }
        }
    }
    hyper.write(&dir.join("summary_hyper.csv"))?;

    let names = fit.hyper_names();
    let mut header: Vec<String> = ["node", "weight", "post_weight", "log_post"].map(String::from).to_vec();
    header.extend(names.iter().map(|n| format!("theta_{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut nodes = Table::new("theta_nodes", &header);
    for (k, n) in fit.nodes.iter().enumerate() {
        let mut cells = vec![k.to_string(), num(n.weight), num(n.post_weight), num(n.log_post)];
        cells.extend(n.theta.iter().map(|&t| num(t)));
        nodes.row(cells);
    }
    nodes.write(&dir.join("theta_nodes.csv"))?;

    if !fit.lincomb_names.is_empty() {
        let mut lc = Table::new("summary_lincomb", &SUMMARY_HEADER);
        for (k, name) in fit.lincomb_names.iter().enumerate() {
            lc.row(summary_cells(name, &zmarginal(&fit.lincomb_marginal(k))));
        }
        lc.write(&dir.join("summary_lincomb.csv"))?;
    }
    write_atomic(&dir.join("mlik.txt"), &format!("{}\n", fit.mlik))
}

/// Fits the model and writes summaries, marginals and the run log.
pub fn fit(cfg: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    let (_, _, result) = fit_model(cfg)?;
    write_fit(&dir, &result)?;
    let mut log = RunLog::new("fit", cfg);
    log.fit(&result);
    log.write(&dir, start.elapsed().as_secs_f64())?;
    Ok(dir)
}

/// Posterior mean and sd of the response mean `g⁻¹(η)`.
fn response_moments(family: Family, m: &MarginalDensity) -> (f64, f64) {
    let g = |x: f64| match family {
        Family::Gaussian { .. } => x,
        Family::Poisson | Family::NBinomial { .. } => x.exp(),
    };
    let m1 = emarginal(g, m);
    let m2 = emarginal(|x| g(x) * g(x), m);
    (m1, (m2 - m1 * m1).max(0.0).sqrt())
}

/// Fits with the prediction grid and writes `pred_mean.csv` and
/// `pred_sd.csv`.
pub fn predict(cfg: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    let (_, built, result) = fit_model(cfg)?;
    let rows = result.tag(PRED_TAG)?;
    let grid = built.prediction.as_ref().expect("a pred tag comes from the prediction grid");
    let header = ["x", "y", "eta", "response"];
    let mut mean = Table::new("pred_mean", &header);
    let mut sd = Table::new("pred_sd", &header);
    for (p, row) in grid.points.iter().zip(rows) {
        let (em, ev) = result.predictor_moments(row);
        let (rm, rs) = response_moments(result.family, &result.predictor_marginal(row));
        mean.row([num(p[0]), num(p[1]), num(em), num(rm)]);
        sd.row([num(p[0]), num(p[1]), num(ev.sqrt()), num(rs)]);
    }
    mean.write(&dir.join("pred_mean.csv"))?;
    sd.write(&dir.join("pred_sd.csv"))?;
    let mut log = RunLog::new("predict", cfg);
    log.fit(&result);
    log.write(&dir, start.elapsed().as_secs_f64())?;
    Ok(dir)
}

/// Fits and writes per-observation `cpo.csv` and summary `criteria.csv`.
pub fn assess(cfg: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    let (_, built, result) = fit_model(cfg)?;
    let diag = assessment::assess(&result, &built.graph)?;
    let mut cpo = Table::new("cpo", &["index", "cpo", "pit", "failure"]);
    cpo.extend_lines(&diag.observations_csv());
    cpo.write(&dir.join("cpo.csv"))?;
    let mut crit = Table::new("criteria", &["dic", "p_dic", "waic", "p_waic", "mlik"]);
    crit.extend_lines(&diag.criteria_csv());
    crit.write(&dir.join("criteria.csv"))?;
    let mut log = RunLog::new("assess", cfg);
    log.fit(&result);
    log.write(&dir, start.elapsed().as_secs_f64())?;
    Ok(dir)
}

/// Fits every model listed under `[compare]` and writes `comparison.csv`.
pub fn compare(cfg: &RunConfig, overrides: &Overrides) -> Result<PathBuf> {
    let start = Instant::now();
    let models = &cfg
        .compare
        .as_ref()
        .ok_or_else(|| cfg.error("compare", "missing [compare] section"))?
        .models;
    if models.len() < 2 {
        return Err(cfg.error("compare.models", "list at least two models"));
    }
    let dir = out_dir(cfg)?;
    let mut fits = Vec::with_capacity(models.len());
    for m in models {
        let mut sub = RunConfig::load(&cfg.resolve(&m.config))?;
        sub.run.seed = cfg.run.seed;
        sub.run.threads = cfg.run.threads;
        overrides.apply(&mut sub);
        log::info!("comparison: fitting {}", m.name);
        let (_, built, result) = fit_model(&sub)?;
        fits.push((m.name.as_str(), built, result));
    }
    let refs: Vec<_> = fits.iter().map(|(n, b, f)| (*n, f, &b.graph)).collect();
    let table = assessment::compare(&refs)?;
    let csv = table.to_csv();
    let header: Vec<&str> = csv.lines().next().unwrap_or_default().split(',').collect();
    let mut out = Table::new("comparison", &header);
    out.extend_lines(&csv);
    out.write(&dir.join("comparison.csv"))?;
    let mut log = RunLog::new("compare", cfg);
    for (name, _, f) in &fits {
        let _ = writeln!(log.0, "mlik_{} = {}", file_stem(name), f.mlik);
    }
    log.write(&dir, start.elapsed().as_secs_f64())?;
    Ok(dir)
}
