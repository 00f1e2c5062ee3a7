//! Run configuration, dispatch and artifact writing for the `plab` binary.
//!
//! A run config is a TOML file with flat keys and one `[model]` table:
//!
//! ```toml
//! seed = 7
//! n = 20
//! alpha_grid = "0.6:0.1:1.4"
//! replicates = 200
//!
//! [model]
//! activation = "symmetric_interval:0.67449"
//! disorder = "gaussian"
//! ```
//!
//! Unknown keys are rejected. Each run writes `results.csv` and
//! `manifest.json` into the output directory, both atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::disorder::DisorderSpec;
use crate::error::{LabError, Result};
use crate::experiments::{
    concentration_scan, rows_for, slow_decrease, temp_truncation_gap, threshold_scan, universality_compare, Model,
};
use crate::partition::{Config, Enumerator, Instance};
use crate::separation::{extract_separated_family, BlockDecomposition, ExtractParams};
use crate::stream::SeededStream;
use crate::verify::{all_fail_frequency, clt_gap, sup_concentration, tail_addone, AddOneModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Enumerate,
    Separation,
    VerifyAddone,
    VerifyAllfail,
    VerifySup,
    VerifyClt,
    Threshold,
    Concentration,
    Universality,
    Slowdec,
    Tempgap,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Enumerate => "enumerate",
            Command::Separation => "separation",
            Command::VerifyAddone => "verify addone",
            Command::VerifyAllfail => "verify allfail",
            Command::VerifySup => "verify sup",
            Command::VerifyClt => "verify clt",
            Command::Threshold => "threshold",
            Command::Concentration => "concentration",
            Command::Universality => "universality",
            Command::Slowdec => "slowdec",
            Command::Tempgap => "tempgap",
        }
    }

    fn needs_seed(self) -> bool {
        self != Command::Enumerate
    }
}

/// A list of reals written either as an array or as `"start:step:stop"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range(String),
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Grid::List(v) => Ok(v.clone()),
            Grid::Range(s) => expand_range(s),
        }
    }
}

/// Expands `"start:step:stop"` inclusively; values are rounded to 12 decimals.
pub fn expand_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| LabError::Config(format!("grid `{s}` is not of the form start:step:stop")))?;
    let [start, step, stop] = parts[..] else {
        return Err(LabError::Config(format!(
            "grid `{s}` is not of the form start:step:stop"
        )));
    };
    if !(step > 0.0) || stop < start {
        return Err(LabError::Config(format!("grid `{s}` needs step > 0 and stop >= start")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderSpec>,
    /// Laws compared by `universality`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disorders: Option<Vec<DisorderSpec>>,
}

/// Every configurable key. After [`parse_config`] all keys used by the
/// command are set, either explicitly or from defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_list: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_grid: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_grid: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_process: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub settings: Settings,
}

fn missing(command: Command, key: &str) -> LabError {
    LabError::Config(format!("`{}` requires key `{key}`", command.name()))
}

fn need<T: Clone>(command: Command, value: &Option<T>, key: &str) -> Result<T> {
    value.clone().ok_or_else(|| missing(command, key))
}

fn default_replicates(command: Command) -> usize {
    match command {
        Command::VerifyAddone | Command::Slowdec => 500,
        Command::VerifyAllfail => 10_000,
        Command::VerifySup => 2_000,
        Command::VerifyClt => 100_000,
        Command::Tempgap => 50,
        _ => 200,
    }
}

/// Parses and validates a TOML run config, filling defaults.
pub fn parse_config(command: Command, text: &str) -> Result<RunConfig> {
    let mut s: Settings = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
    resolve(command, &mut s)?;
    Ok(RunConfig { command, settings: s })
}

/// Validates settings built programmatically (e.g. from command-line flags).
pub fn from_settings(command: Command, mut settings: Settings) -> Result<RunConfig> {
    resolve(command, &mut settings)?;
    Ok(RunConfig { command, settings })
}

pub fn load_config(command: Command, path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(command, &text)
}

fn expand(grid: &mut Option<Grid>) -> Result<()> {
    if let Some(g) = grid {
        *g = Grid::List(g.values()?);
    }
    Ok(())
}

fn resolve(command: Command, s: &mut Settings) -> Result<()> {
    use Command::*;
    if command.needs_seed() && s.seed.is_none() {
        return Err(missing(command, "seed"));
    }
    for g in [
        &mut s.alpha_grid,
        &mut s.a_list,
        &mut s.w_grid,
        &mut s.u_grid,
        &mut s.eps_grid,
    ] {
        expand(g)?;
    }
    s.cap.get_or_insert(30);
    if !matches!(command, VerifyAllfail | VerifySup | VerifyClt | Separation) {
        s.delta.get_or_insert(0.05);
    }
    if command != Enumerate {
        s.replicates.get_or_insert(default_replicates(command));
    }
    let model = s.model.get_or_insert_with(ModelBlock::default);
    match command {
        Enumerate | VerifyAddone | Threshold | Concentration | Slowdec | Tempgap => {
            need(command, &model.activation, "model.activation")?;
            model.disorder.get_or_insert_with(DisorderSpec::gaussian);
        }
        Universality => {
            need(command, &model.activation, "model.activation")?;
            let laws = need(command, &model.disorders, "model.disorders")?;
            if laws.len() < 2 {
                return Err(LabError::Config("`model.disorders` needs at least two laws".into()));
            }
            s.slack.get_or_insert(0.5);
        }
        VerifyClt => {
            model.activation.get_or_insert(Activation::half_space(0.0)?);
            model.disorder.get_or_insert_with(DisorderSpec::rademacher);
            s.p.get_or_insert(1);
        }
        VerifySup => {
            model.disorder.get_or_insert_with(DisorderSpec::gaussian);
            s.source.get_or_insert_with(|| "hadamard".into());
            s.u_grid.get_or_insert(Grid::List(vec![0.25, 0.5, 1.0]));
        }
        Separation => {
            let source = s.source.get_or_insert_with(|| "cube".into()).clone();
            if source == "solutions" {
                need(command, &model.activation, "model.activation")?;
                model.disorder.get_or_insert_with(DisorderSpec::gaussian);
            }
        }
        VerifyAllfail => {}
    }
    if s.model.as_ref().is_some_and(|m| *m == ModelBlock::default()) {
        s.model = None;
    }
    match command {
        Enumerate => {
            need(command, &s.n, "n")?;
            need(command, &s.m, "m")?;
        }
        Separation => {
            let n = need(command, &s.n, "n")?;
            let l = need(command, &s.l, "l")?;
            BlockDecomposition::new(n, l)?;
            s.eps.get_or_insert(0.25);
            s.gamma.get_or_insert(1.0 / l as f64);
            s.delta.get_or_insert(0.05);
            s.max_retries.get_or_insert(32);
            s.min_size.get_or_insert(2);
            s.eta_min.get_or_insert(1e-3);
            match s.source.as_deref() {
                Some("cube") => {}
                Some("solutions") => {
                    if s.m.is_none() && s.alpha.is_none() {
                        return Err(missing(command, "m"));
                    }
                }
                other => {
                    return Err(LabError::Config(format!(
                        "unknown separation source {other:?}; use cube or solutions"
                    )))
                }
            }
        }
        VerifyAddone => {
            need(command, &s.n, "n")?;
            need(command, &s.m, "m")?;
            need(command, &s.w_grid, "w_grid")?;
        }
        VerifyAllfail => {
            need(command, &s.eps_grid, "eps_grid")?;
            need(command, &s.n_process, "n_process")?;
        }
        VerifySup => {
            need(command, &s.n, "n")?;
            match s.source.as_deref() {
                Some("hadamard") | Some("cube") => {}
                Some("random") => {
                    need(command, &s.set_size, "set_size")?;
                }
                other => {
                    return Err(LabError::Config(format!(
                        "unknown sup source {other:?}; use hadamard, cube or random"
                    )))
                }
            }
        }
        VerifyClt => {
            if s.n.is_none() && s.n_list.is_none() {
                return Err(missing(command, "n_list"));
            }
        }
        Threshold => {
            if s.n.is_none() && s.n_list.is_none() {
                return Err(missing(command, "n"));
            }
            need(command, &s.alpha_grid, "alpha_grid")?;
        }
        Concentration => {
            need(command, &s.n_list, "n_list")?;
            need(command, &s.alpha, "alpha")?;
        }
        Universality => {
            need(command, &s.n, "n")?;
            need(command, &s.alpha, "alpha")?;
        }
        Slowdec => {
            if s.n.is_none() && s.n_list.is_none() {
                return Err(missing(command, "n"));
            }
            need(command, &s.m, "m")?;
            need(command, &s.rho, "rho")?;
        }
        Tempgap => {
            need(command, &s.n, "n")?;
            need(command, &s.alpha, "alpha")?;
            s.a_list.get_or_insert(Grid::List(vec![0.5, 1.0, 2.0, 5.0, 10.0, 50.0]));
        }
    }
    Ok(())
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i128),
    Real(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Real)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Reals are written with 9 significant digits in exponent form.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.8e}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Real(v) => format_real(*v),
                    Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
                    Cell::Text(s) => s.clone(),
                    Cell::Empty => String::new(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$(Cell::from($v)),*] };
}

/// Results of one run before anything is written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub table: Table,
    /// Additional files, written next to `results.csv`.
    pub extra: Vec<(String, Vec<u8>)>,
    pub timings: Vec<(String, f64)>,
}

struct Timings(Vec<(String, f64)>);

impl Timings {
    fn time<T>(&mut self, label: impl Into<String>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.0.push((label.into(), start.elapsed().as_secs_f64()));
        Ok(out)
    }
}

fn model_of(s: &Settings) -> Result<Model> {
    let block = s.model.clone().unwrap_or_default();
    Ok(Model::new(
        block
            .activation
            .ok_or_else(|| LabError::Config("missing model.activation".into()))?,
        block.disorder.unwrap_or_else(DisorderSpec::gaussian),
    ))
}

fn grid(g: &Option<Grid>) -> Result<Vec<f64>> {
    g.as_ref().map(Grid::values).transpose().map(Option::unwrap_or_default)
}

fn dims(s: &Settings) -> Vec<usize> {
    s.n_list.clone().unwrap_or_else(|| s.n.into_iter().collect())
}

/// Computes the results of a run without touching the file system.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    let s = &config.settings;
    let seed = s.seed.unwrap_or(0);
    let stream = SeededStream::new(seed);
    let enumerator = Enumerator::with_cap(s.cap.unwrap_or(30));
    let delta = s.delta.unwrap_or(0.05);
    let replicates = s.replicates.unwrap_or(0);
    let mut timings = Timings(Vec::new());
    let mut extra = Vec::new();

    let table = match config.command {
        Command::Enumerate => {
            let (n, m) = (s.n.unwrap_or(0), s.m.unwrap_or(0));
            let model = model_of(s)?;
            let (res, secs) = {
                let start = Instant::now();
                let inst = Instance::sample(&model.spec, model.activation.clone(), n, m, stream)?;
                let res = enumerator.count_exact(&inst, delta)?;
                (res, start.elapsed().as_secs_f64())
            };
            timings.0.push(("count".into(), secs));
            let mut t = Table::new(&["n", "m", "alpha", "z", "log_z", "log_trunc", "seconds"]);
            t.push(row![n, m, m as f64 / n as f64, res.z, res.log_z, res.log_trunc, secs]);
            t
        }
        Command::Separation => {
            let n = s.n.unwrap_or(0);
            let l = s.l.unwrap_or(1);
            let mut params = ExtractParams::new(delta, s.eps.unwrap_or(0.25), s.gamma.unwrap_or(1.0 / l as f64), l);
            params.max_retries = s.max_retries.unwrap_or(params.max_retries);
            params.min_size = s.min_size.unwrap_or(params.min_size);
            params.eta_min = s.eta_min.unwrap_or(params.eta_min);
            let set: Vec<Config> = timings.time("source", || match s.source.as_deref() {
                Some("solutions") => {
                    let model = model_of(s)?;
                    let m = match s.m {
                        Some(m) => m,
                        None => rows_for(n, s.alpha.unwrap_or(0.0))?,
                    };
                    let inst = Instance::sample(&model.spec, model.activation, n, m, stream.fork(1))?;
                    enumerator.solutions(&inst)
                }
                _ => {
                    if n > 20 {
                        return Err(LabError::CapExceeded { n, cap: 20 });
                    }
                    Ok((0..1u64 << n).map(Config).collect())
                }
            })?;
            let family = timings.time("extract", || extract_separated_family(&set, n, &params, stream.fork(2)))?;
            let configurations: Vec<Vec<i8>> = family.omega().iter().map(|c| c.to_spins(n)).collect();
            let cert = serde_json::json!({
                "omega_size": family.omega().len(),
                "j_star": family.j_star(),
                "eps": family.eps(),
                "gamma": family.gamma(),
                "n": n,
                "l": l,
                "source_size": set.len(),
                "verified": true,
                "configurations": configurations,
            });
            extra.push(("certificate.json".to_string(), serde_json::to_vec_pretty(&cert)?));
            let mut t = Table::new(&[
                "n",
                "l",
                "eps",
                "gamma",
                "source_size",
                "omega_size",
                "j_star",
                "verified",
            ]);
            let j_star: Vec<String> = family.j_star().iter().map(|j| j.to_string()).collect();
            t.push(row![
                n,
                l,
                family.eps(),
                family.gamma(),
                set.len(),
                family.omega().len(),
                j_star.join(" "),
                true
            ]);
            t
        }
        Command::VerifyAddone => {
            let model = model_of(s)?;
            let add = AddOneModel {
                spec: model.spec,
                activation: model.activation,
                n: s.n.unwrap_or(0),
                m: s.m.unwrap_or(0),
                delta,
            };
            let w = grid(&s.w_grid)?;
            let est = timings.time("tail_addone", || tail_addone(&add, &w, replicates, stream, &enumerator))?;
            let mut t = Table::new(&[
                "n",
                "m",
                "delta",
                "w",
                "hits",
                "replicates",
                "discarded",
                "p_hat",
                "ci_lo",
                "ci_hi",
                "fitted_slope",
                "fitted_c_delta",
                "slope_lo",
                "slope_hi",
            ]);
            for (i, &wv) in w.iter().enumerate() {
                t.push(row![
                    add.n,
                    add.m,
                    delta,
                    wv,
                    est.hits[i],
                    est.replicates,
                    est.discarded,
                    est.p_hat[i],
                    est.ci[i].0,
                    est.ci[i].1,
                    est.fitted_slope,
                    est.fitted_c_delta,
                    est.slope_ci.map(|c| c.0),
                    est.slope_ci.map(|c| c.1),
                ]);
            }
            t
        }
        Command::VerifyAllfail => {
            let mut t = Table::new(&[
                "eps",
                "n_process",
                "replicates",
                "threshold",
                "p_hat",
                "se",
                "ci_lo",
                "ci_hi",
                "bound",
                "within_bound",
            ]);
            for (i, &eps) in grid(&s.eps_grid)?.iter().enumerate() {
                for &np in s.n_process.as_deref().unwrap_or(&[]) {
                    let sub = stream.fork(i as u64).fork(np as u64);
                    let est = timings.time(format!("eps={eps},n={np}"), || {
                        all_fail_frequency(eps, np, replicates, sub)
                    })?;
                    t.push(row![
                        eps,
                        np,
                        replicates,
                        est.threshold,
                        est.p_hat,
                        est.se,
                        est.ci.0,
                        est.ci.1,
                        est.bound,
                        est.p_hat <= est.bound + 3.0 * est.se,
                    ]);
                }
            }
            t
        }
        Command::VerifySup => {
            let n = s.n.unwrap_or(0);
            let spec = s
                .model
                .as_ref()
                .and_then(|m| m.disorder.clone())
                .unwrap_or_else(DisorderSpec::gaussian);
            let set = sup_source(s.source.as_deref().unwrap_or("hadamard"), n, s.set_size, stream.fork(1))?;
            let eps = certified_eps(&set);
            let u = grid(&s.u_grid)?;
            let rep = timings.time("sup", || {
                sup_concentration(&spec, &set, eps, &u, replicates, stream.fork(2))
            })?;
            let mut t = Table::new(&[
                "n",
                "set_size",
                "eps",
                "replicates",
                "mean_sup",
                "se",
                "sudakov_floor",
                "fitted_c",
                "u",
                "p_hat",
                "ci_lo",
                "ci_hi",
            ]);
            for d in &rep.deviation_tail {
                t.push(row![
                    n,
                    rep.set_size,
                    eps,
                    replicates,
                    rep.mean_sup,
                    rep.se,
                    rep.sudakov_floor,
                    rep.fitted_c,
                    d.u,
                    d.p_hat,
                    d.ci.0,
                    d.ci.1,
                ]);
            }
            t
        }
        Command::VerifyClt => {
            let block = s.model.clone().unwrap_or_default();
            let f = block.activation.unwrap_or(Activation::half_space(0.0)?);
            let spec = block.disorder.unwrap_or_else(DisorderSpec::rademacher);
            let p = s.p.unwrap_or(1);
            let mut t = Table::new(&["n", "p", "replicates", "gap", "signed", "se"]);
            for n in dims(s) {
                let est = timings.time(format!("n={n}"), || {
                    clt_gap(&f, p, n, &spec, replicates, stream.fork(n as u64))
                })?;
                t.push(row![n, p, replicates, est.value, est.signed, est.se]);
            }
            t
        }
        Command::Threshold => {
            let model = model_of(s)?;
            let alphas = grid(&s.alpha_grid)?;
            let mut t = Table::new(&[
                "n",
                "alpha",
                "m",
                "solvable",
                "replicates",
                "p_solvable",
                "ci_lo",
                "ci_hi",
                "alpha_hat",
                "alpha_hat_lo",
                "alpha_hat_hi",
                "width_10_90",
                "width_lo",
                "width_hi",
            ]);
            for n in dims(s) {
                let c = timings.time(format!("n={n}"), || {
                    threshold_scan(&model, n, &alphas, replicates, stream.fork(n as u64), &enumerator)
                })?;
                for (i, &alpha) in alphas.iter().enumerate() {
                    t.push(row![
                        n,
                        alpha,
                        c.m_values[i],
                        c.solvable[i],
                        replicates,
                        c.p_solvable[i],
                        c.ci[i].0,
                        c.ci[i].1,
                        c.alpha_hat,
                        c.alpha_hat_ci.map(|v| v.0),
                        c.alpha_hat_ci.map(|v| v.1),
                        c.width_10_90,
                        c.width_ci.map(|v| v.0),
                        c.width_ci.map(|v| v.1),
                    ]);
                }
            }
            t
        }
        Command::Concentration => {
            let model = model_of(s)?;
            let n_list = s.n_list.clone().unwrap_or_default();
            let alpha = s.alpha.unwrap_or(0.0);
            let rep = timings.time("scan", || {
                concentration_scan(&model, &n_list, alpha, delta, replicates, stream, &enumerator)
            })?;
            let mut t = Table::new(&["n", "m", "alpha", "delta", "replicates", "mean", "std", "se"]);
            for r in &rep.rows {
                t.push(row![r.n, r.m, alpha, delta, replicates, r.mean, r.std, r.se]);
            }
            t
        }
        Command::Universality => {
            let block = s.model.clone().unwrap_or_default();
            let act = block
                .activation
                .ok_or_else(|| LabError::Config("missing model.activation".into()))?;
            let specs = block.disorders.unwrap_or_default();
            let (n, alpha, slack) = (s.n.unwrap_or(0), s.alpha.unwrap_or(0.0), s.slack.unwrap_or(0.5));
            let rep = timings.time("compare", || {
                universality_compare(&act, &specs, n, alpha, delta, slack, replicates, stream, &enumerator)
            })?;
            let mut t = Table::new(&[
                "n",
                "m",
                "alpha",
                "delta",
                "replicates",
                "first",
                "second",
                "mean_first",
                "se_first",
                "mean_second",
                "se_second",
                "difference",
                "combined_se",
                "margin",
                "within_margin",
            ]);
            for p in &rep.pairs {
                let (a, b) = (&rep.entries[p.first], &rep.entries[p.second]);
                t.push(row![
                    n,
                    rep.m,
                    alpha,
                    delta,
                    replicates,
                    a.spec.to_string(),
                    b.spec.to_string(),
                    a.mean,
                    a.se,
                    b.mean,
                    b.se,
                    p.difference,
                    p.combined_se,
                    p.margin,
                    p.within_margin,
                ]);
            }
            t
        }
        Command::Slowdec => {
            let model = model_of(s)?;
            let (m, rho) = (s.m.unwrap_or(0), s.rho.unwrap_or(0.0));
            let mut t = Table::new(&[
                "n",
                "m",
                "extra",
                "delta",
                "conditioned",
                "attempted",
                "events",
                "p_hat",
                "ci_lo",
                "ci_hi",
            ]);
            for n in dims(s) {
                let r = timings.time(format!("n={n}"), || {
                    slow_decrease(&model, n, m, rho, delta, replicates, stream.fork(n as u64), &enumerator)
                })?;
                t.push(row![
                    n,
                    m,
                    r.extra,
                    delta,
                    r.conditioned,
                    r.attempted,
                    r.events,
                    r.p_hat,
                    r.ci.0,
                    r.ci.1
                ]);
            }
            t
        }
        Command::Tempgap => {
            let model = model_of(s)?;
            let (n, alpha) = (s.n.unwrap_or(0), s.alpha.unwrap_or(0.0));
            let a_list = grid(&s.a_list)?;
            let rep = timings.time("gap", || {
                temp_truncation_gap(&model, n, alpha, &a_list, delta, replicates, stream, &enumerator)
            })?;
            let mut t = Table::new(&[
                "n",
                "m",
                "delta",
                "replicates",
                "a",
                "mean_gap",
                "max_gap",
                "monotone_replicates",
            ]);
            for (i, &a) in a_list.iter().enumerate() {
                t.push(row![
                    n,
                    rep.m,
                    delta,
                    replicates,
                    a,
                    rep.mean_gap[i],
                    rep.max_gap[i],
                    rep.monotone
                ]);
            }
            t
        }
    };
    Ok(RunOutput {
        table,
        extra,
        timings: timings.0,
    })
}

/// Point sets for `verify sup`: Sylvester-Hadamard rows with their
/// negatives, the full cube, or distinct uniform random points.
pub fn sup_source(source: &str, n: usize, set_size: Option<usize>, stream: SeededStream) -> Result<Vec<Vec<i8>>> {
    match source {
        "hadamard" => {
            if !n.is_power_of_two() {
                return Err(LabError::Config(format!(
                    "hadamard source needs n a power of two, got {n}"
                )));
            }
            let rows: Vec<Vec<i8>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| if (i & j).count_ones() % 2 == 0 { 1 } else { -1 })
                        .collect()
                })
                .collect();
            let negated: Vec<Vec<i8>> = rows.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
            Ok(rows.into_iter().chain(negated).collect())
        }
        "cube" => {
            if n > 14 {
                return Err(LabError::Config(format!("cube source needs n <= 14, got {n}")));
            }
            Ok((0..1u64 << n).map(|b| Config(b).to_spins(n)).collect())
        }
        "random" => {
            use rand::Rng;
            let k = set_size.unwrap_or(0);
            if n > 64 || k == 0 || (n < 63 && k as u128 > 1u128 << n) {
                return Err(LabError::Config(format!(
                    "cannot draw {k} distinct points of the {n}-cube"
                )));
            }
            let mut rng = stream.rng(0);
            let mut seen = std::collections::BTreeSet::new();
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                let c = Config(rng.random::<u64>() & crate::partition::full_mask(n));
                if seen.insert(c) {
                    out.push(c.to_spins(n));
                }
            }
            Ok(out)
        }
        other => Err(LabError::Config(format!("unknown sup source `{other}`"))),
    }
}

/// `1 - max` signed pairwise overlap (1 for a single point).
pub fn certified_eps(set: &[Vec<i8>]) -> f64 {
    let n = set.first().map_or(1, Vec::len) as f64;
    let mut max_dot = i64::MIN;
    for (i, a) in set.iter().enumerate() {
        for b in &set[i + 1..] {
            let d: i64 = a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum();
            max_dot = max_dot.max(d);
        }
    }
    if max_dot == i64::MIN {
        1.0
    } else {
        (1.0 - max_dot as f64 / n).clamp(f64::MIN_POSITIVE, 1.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Settings,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub subtask_seconds: Vec<(String, f64)>,
    pub files: Vec<FileRecord>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

/// Runs `config` and writes `results.csv`, any extra files, and
/// `manifest.json` into `out_dir`. Nothing is written if the run fails.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    let started = unix_now();
    let clock = Instant::now();
    let output = execute(config)?;
    let csv = output.table.to_csv();
    fs::create_dir_all(out_dir)?;
    let mut files = vec![FileRecord {
        name: "results.csv".into(),
        bytes: csv.len(),
        sha256: sha256_hex(csv.as_bytes()),
    }];
    write_atomic(out_dir, "results.csv", csv.as_bytes())?;
    for (name, bytes) in &output.extra {
        write_atomic(out_dir, name, bytes)?;
        files.push(FileRecord {
            name: name.clone(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = RunManifest {
        tool: "plab",
        version: env!("CARGO_PKG_VERSION"),
        command: config.command.name(),
        config: config.settings.clone(),
        threads: rayon::current_num_threads(),
        started_unix: started,
        finished_unix: unix_now(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        subtask_seconds: output.timings,
        files,
    };
    write_atomic(out_dir, "manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Runs `f` on a dedicated pool with `threads` workers (0: rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Evaluates one closed-form function from `key=value` arguments and
/// returns `name=value` output lines. `first_moment_alpha` takes
/// `activation=<activation>`; every other argument is numeric.
pub fn eval_formula(name: &str, items: &[String]) -> Result<Vec<(String, f64)>> {
    use crate::formulas::*;
    let pairs: Vec<(&str, &str)> = items
        .iter()
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| LabError::Config(format!("expected key=value, got `{item}`")))
        })
        .collect::<Result<_>>()?;
    let raw = |key: &str| {
        pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| LabError::Config(format!("`{name}` needs argument {key}=<value>")))
    };
    let arg = |key: &str| -> Result<f64> {
        let v = raw(key)?;
        v.parse()
            .map_err(|_| LabError::Config(format!("`{key}` has non-numeric value `{v}`")))
    };
    let count = |key: &str| -> Result<usize> {
        let v = arg(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(LabError::Config(format!(
                "{key} must be a nonnegative integer, got {v}"
            )));
        }
        Ok(v as usize)
    };
    let one = |v: f64| vec![(name.to_string(), v)];
    Ok(match name {
        "k2" => one(k2(arg("t")?)?),
        "psi2" => one(psi2(arg("eps")?)?),
        "rel_entropy" => one(rel_entropy(arg("a")?, arg("p")?)?),
        "chernoff_simplified" => one(chernoff_simplified(arg("t")?, arg("p")?)?),
        "truncated_log" => one(truncated_log(arg("log_z")?, count("n")?, arg("delta")?)),
        "sudakov_lower" => one(sudakov_lower(arg("eps")?, count("n")?)?),
        "all_fail_bound" => {
            let b = all_fail_bound(arg("eps")?, count("n")?)?;
            vec![
                ("threshold".into(), b.threshold),
                ("probability_bound".into(), b.probability_bound),
            ]
        }
        "log_gamma_trunc" => one(log_gamma_trunc(arg("z")?, arg("gamma")?)),
        "log_delta_gap" => {
            let g = log_delta_gap(arg("x")?, arg("y")?, arg("gamma")?)?;
            vec![("gap".into(), g.gap), ("lower".into(), g.lower)]
        }
        "gaussian_mass" => one(raw("activation")?.parse::<Activation>()?.gaussian_mass().p),
        "first_moment_alpha" => one(crate::experiments::first_moment_alpha(&raw("activation")?.parse()?)?),
        other => return Err(LabError::Config(format!("unknown formula `{other}`"))),
    })
}

pub fn format_assignments(values: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (k, v) in values {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

/// Default output directory `runs/<command>-<seed>`.
pub fn default_out_dir(config: &RunConfig) -> PathBuf {
    let name = config.command.name().replace(' ', "-");
    PathBuf::from("runs").join(format!("{name}-{}", config.settings.seed.unwrap_or(0)))
}
