use std::path::{Path, PathBuf};
use std::process::Command;

use laplgm_cli::commands::{self, Overrides};
use laplgm_cli::config::RunConfig;
use laplgm_cli::data::Dataset;
use laplgm_cli::model;
use nalgebra::{DMatrix, DVector};

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Header and rows of an output CSV, skipping `#` lines.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn row<'a>(rows: &'a [Vec<String>], name: &str) -> &'a [String] {
    rows.iter().find(|r| r[0] == name).unwrap_or_else(|| panic!("no row {name}"))
}

fn load(path: &Path) -> RunConfig {
    commands::load(path, &Overrides::default()).unwrap()
}

fn simulate(dir: &Path, seed: u64, sites: usize, times: usize, cells: usize) -> PathBuf {
    let cfg = write(
        dir,
        "sim.toml",
        &format!(
            "[run]\nseed = {seed}\nout = \"sim\"\n[simulate]\nn_sites = {sites}\nn_times = {times}\nmesh_cells = {cells}\n"
        ),
    );
    commands::simulate(&load(&cfg)).unwrap().join("data.csv")
}

fn desk(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk").join(name)
}

#[test]
fn desk_configs_parse_and_build() {
    let tmp = tempfile::tempdir().unwrap();
    let data = Dataset::read(&simulate(tmp.path(), 3, 30, 20, 20)).unwrap();
    assert_eq!(data.len(), 600);
    for name in ["simulate.toml", "compare.toml"] {
        load(&desk(name));
    }
    let m1 = model::build(&load(&desk("model1.toml")), &data).unwrap();
    assert_eq!(m1.graph.latent().n(), 3 + 15 * 15 * 20);
    assert_eq!(m1.graph.n_rows(), 600);
    let m2 = model::build(&load(&desk("model2.toml")), &data).unwrap();
    assert_eq!(m2.graph.latent().n(), m1.graph.latent().n());
    let m3 = model::build(&load(&desk("model3.toml")), &data).unwrap();
    assert_eq!(m3.graph.latent().n(), 1 + 20);
    let p = model::build(&load(&desk("predict.toml")), &data).unwrap();
    let grid = p.prediction.unwrap();
    assert_eq!(grid.points.len(), 51 * 51);
    assert_eq!(grid.rows.len(), 51 * 51);
    assert_eq!(p.graph.n_rows(), 600 + 51 * 51);
}

#[test]
fn simulation_is_reproducible_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = std::fs::read(simulate(a.path(), 5, 10, 4, 12)).unwrap();
    let db = std::fs::read(simulate(b.path(), 5, 10, 4, 12)).unwrap();
    assert_eq!(da, db);
    let dc = std::fs::read(simulate(b.path(), 6, 10, 4, 12)).unwrap();
    assert_ne!(da, dc);
    let (h, rows) = table(&a.path().join("sim/data.csv"));
    assert_eq!(h, ["site_x", "site_y", "time", "y", "covar1", "covar2"]);
    assert_eq!(rows.len(), 40);
}

/// Intercept, one covariate and an iid effect with every hyperparameter
/// fixed: the posterior is exactly Gaussian.
#[test]
fn gaussian_fixed_effects_match_dense_conjugate_posterior() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 36;
    let levels = 4;
    let mut csv = String::from("site_x,site_y,time,y,x1\n");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let x = ((i * 7) % 11) as f64 / 5.0 - 1.0;
        let t = i % levels + 1;
        let y = 0.3 + 1.2 * x + [0.4, -0.2, 0.1, -0.5][t - 1] + ((i * 13) % 17) as f64 / 17.0 - 0.5;
        csv.push_str(&format!("0,0,{t},{y},{x}\n"));
        xs.push(x);
        ys.push(y);
    }
    write(tmp.path(), "d.csv", &csv);
    let (tau_obs, tau_u, p0) = (2.0f64, 4.0f64, 0.01);
    let cfg = write(
        tmp.path(),
        "m.toml",
        &format!(
            r#"
[run]
out = "fit"
int_strategy = "eb"
[data]
file = "d.csv"
[likelihood]
family = "gaussian"
hyper = "noise"
[[hyper]]
name = "noise"
initial = {}
fixed = true
[[hyper]]
name = "u_prec"
initial = {}
fixed = true
[[component]]
type = "intercept"
name = "b0"
prior_precision = {p0}
[[component]]
type = "fixed"
name = "b1"
covariate = "x1"
prior_precision = {p0}
[[component]]
type = "iid"
name = "u"
index = "time"
precision = "u_prec"
"#,
            tau_obs.ln(),
            tau_u.ln()
        ),
    );
    let dir = commands::fit(&load(&cfg)).unwrap();

    let m = 2 + levels;
    let mut a = DMatrix::zeros(n, m);
    for i in 0..n {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = xs[i];
        a[(i, 2 + i % levels)] = 1.0;
    }
    let mut q = DMatrix::from_diagonal(&DVector::from_iterator(
        m,
        [p0, p0].into_iter().chain(std::iter::repeat(tau_u).take(levels)),
    ));
    q += a.transpose() * &a * tau_obs;
    let cov = q.clone().try_inverse().unwrap();
    let mean = &cov * a.transpose() * DVector::from_vec(ys) * tau_obs;

    let (_, rows) = table(&dir.join("summary_fixed.csv"));
    for (k, name) in ["b0", "b1"].iter().enumerate() {
        let r = row(&rows, name);
        let (mu, sd): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((mu - mean[k]).abs() < 1e-6, "{name} mean {mu} vs {}", mean[k]);
        assert!((sd - cov[(k, k)].sqrt()).abs() < 1e-6, "{name} sd {sd} vs {}", cov[(k, k)].sqrt());
    }
    let (_, nodes) = table(&dir.join("theta_nodes.csv"));
    assert_eq!(nodes.len(), 1);
}

fn small_spatial(tmp: &Path, data: &Path, extra: &str) -> PathBuf {
    write(
        tmp,
        "m.toml",
        &format!(
            r#"
[run]
out = "fit"
int_strategy = "eb"
[data]
file = "{}"
[mesh]
extent = [-0.5, 1.5, -0.5, 1.5]
cells = [8, 8]
[likelihood]
family = "poisson"
[[component]]
type = "intercept"
name = "intercept"
[[component]]
type = "fixed"
name = "covar2"
covariate = "covar2"
[[component]]
type = "spde"
name = "spatial"
group = {{ type = "ar1" }}
{extra}
"#,
            data.display()
        ),
    )
}

#[test]
fn empirical_bayes_uses_one_node_and_logs_it() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), 2, 12, 3, 10);
    let dir = commands::fit(&load(&small_spatial(tmp.path(), &data, ""))).unwrap();
    let (h, nodes) = table(&dir.join("theta_nodes.csv"));
    assert_eq!(nodes.len(), 1);
    assert_eq!(h.len(), 4 + 3);
    let log: toml::Table = std::fs::read_to_string(dir.join("run_log.toml")).unwrap().parse().unwrap();
    assert_eq!(log["theta_nodes"].as_integer(), Some(1));
    assert_eq!(log["int_strategy"].as_str(), Some("eb"));
    assert!(log["timings"]["total"].as_float().unwrap() > 0.0);
    let (_, hyper) = table(&dir.join("summary_hyper.csv"));
    for name in ["spatial_range", "spatial_variance", "spatial_group_rho"] {
        row(&hyper, name);
    }
    assert!(dir.join("marginals/fixed_covar2.csv").exists());
}

#[test]
fn prediction_is_more_certain_near_sites() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), 4, 12, 3, 10);
    let cfg = small_spatial(tmp.path(), &data, "[predict]\ngrid = 21\nextent = [-0.5, 1.5, -0.5, 1.5]\ntime = 3\n");
    let dir = commands::predict(&load(&cfg)).unwrap();
    let sites = Dataset::read(&data).unwrap();
    let (sx, sy) = (sites.column("site_x").unwrap(), sites.column("site_y").unwrap());
    let (_, rows) = table(&dir.join("pred_sd.csv"));
    assert_eq!(rows.len(), 21 * 21);
    let mut by_dist: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let (x, y): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            let d = sx.iter().zip(sy).map(|(a, b)| (a - x).hypot(b - y)).fold(f64::INFINITY, f64::min);
            (d, r[2].parse().unwrap())
        })
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = by_dist.len() / 5;
    let near: f64 = by_dist[..k].iter().map(|p| p.1).sum::<f64>() / k as f64;
    let far: f64 = by_dist[by_dist.len() - k..].iter().map(|p| p.1).sum::<f64>() / k as f64;
    assert!(near < far, "near {near} far {far}");
    let (_, mean) = table(&dir.join("pred_mean.csv"));
    assert!(mean.iter().all(|r| r[3].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn assess_writes_cpo_and_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), 8, 10, 3, 10);
    let dir = commands::assess(&load(&small_spatial(tmp.path(), &data, ""))).unwrap();
    let (h, cpo) = table(&dir.join("cpo.csv"));
    assert_eq!(h, ["index", "cpo", "pit", "failure"]);
    assert_eq!(cpo.len(), 30);
    let (h, crit) = table(&dir.join("criteria.csv"));
    assert_eq!(h, ["dic", "p_dic", "waic", "p_waic", "mlik"]);
    assert!(crit[0].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn missing_responses_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "d.csv", "site_x,site_y,time,y\n0,0,1,NA\n0,0,2,\n");
    let cfg = write(
        tmp.path(),
        "m.toml",
        "[run]\nout = \"o\"\n[data]\nfile = \"d.csv\"\n[likelihood]\nfamily = \"poisson\"\n[[component]]\ntype = \"intercept\"\nname = \"b\"\n",
    );
    let err = commands::fit(&load(&cfg)).unwrap_err().to_string();
    assert!(err.contains("data.file") && err.contains("no observed values"), "{err}");
}

#[test]
fn undeclared_hyperparameter_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), 1, 5, 2, 6);
    let cfg = write(
        tmp.path(),
        "m.toml",
        &format!(
            "[run]\nout = \"o\"\n[data]\nfile = \"{}\"\n[likelihood]\nfamily = \"poisson\"\n[[component]]\ntype = \"iid\"\nname = \"u\"\nindex = \"time\"\nprecision = \"nope\"\n",
            data.display()
        ),
    );
    let err = commands::fit(&load(&cfg)).unwrap_err().to_string();
    assert!(err.contains("nope"), "{err}");
}

#[test]
fn binary_reports_config_errors_with_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[run]\nseeed = 2\n");
    let out = Command::new(env!("CARGO_BIN_EXE_laplgm"))
        .args(["fit", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("seeed") && msg.contains("bad.toml"), "{msg}");
}

#[test]
fn command_line_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[run]\nseed = 2\nthreads = 3\nout = \"x\"\n[simulate]\nn_sites = 4\nn_times = 2\nmesh_cells = 6\n");
    let out = tmp.path().join("elsewhere");
    let o = Overrides { seed: Some(9), threads: Some(1), int_strategy: Some("ccd".into()), out: Some(out.clone()), ..Default::default() };
    let c = commands::load(&cfg, &o).unwrap();
    assert_eq!((c.run.seed, c.run.threads, c.run.int_strategy.as_str()), (9, Some(1), "ccd"));
    assert_eq!(commands::simulate(&c).unwrap(), out);
    let log: toml::Table = std::fs::read_to_string(out.join("run_log.toml")).unwrap().parse().unwrap();
    assert_eq!(log["seed"].as_integer(), Some(9));
}
