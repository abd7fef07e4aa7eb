//! Experiment harness: sampling, single fits and Monte Carlo replication
//! studies, with CSV reports that can be regenerated byte-for-byte from the
//! same configuration and seed.
//!
//! Replication r always uses `RngStream { seed, stream_id: r }`, workers are
//! capped by the `STABLE_TMLE_THREADS` environment variable, and results are
//! gathered in replication order before writing, so the worker count never
//! changes the output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{
    explicit_gmm_fit, preliminary_estimate, tml_fit, FitConfig, FitError, FitResult,
};
use crate::ou_model::{lambda_star, ou_preliminary, path_w, tcml_fit, OUFitConfig, OUFitResult};
use crate::sampling::{sample_ou_path, sample_stable, OUParams, OUPath, RngStream};
use crate::stable_model::StableParams;
use crate::trig_projection::Grid;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("replication {rep} failed: {source}")]
    Replication { rep: u64, source: FitError },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: cannot parse '{text}' as a number")]
    BadDatum { path: PathBuf, line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sample,
    Fit,
    SimOu,
    FitOu,
    MonteCarlo,
    MonteCarloOu,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        Ok(match s {
            "sample" => Mode::Sample,
            "fit" => Mode::Fit,
            "sim-ou" => Mode::SimOu,
            "fit-ou" => Mode::FitOu,
            "montecarlo" => Mode::MonteCarlo,
            "montecarlo-ou" => Mode::MonteCarloOu,
            other => return Err(ExperimentError::Config(format!("unknown mode '{other}'"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Mode::Sample => "sample",
            Mode::Fit => "fit",
            Mode::SimOu => "sim-ou",
            Mode::FitOu => "fit-ou",
            Mode::MonteCarlo => "montecarlo",
            Mode::MonteCarloOu => "montecarlo-ou",
        }
    }

    fn is_ou(self) -> bool {
        matches!(self, Mode::SimOu | Mode::FitOu | Mode::MonteCarloOu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Tmle,
    ExplicitGmm,
    Preliminary,
}

impl Estimator {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        Ok(match s {
            "tmle" => Estimator::Tmle,
            "explicit-gmm" => Estimator::ExplicitGmm,
            "preliminary" => Estimator::Preliminary,
            other => return Err(ExperimentError::Config(format!("unknown estimator '{other}'"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Estimator::Tmle => "tmle",
            Estimator::ExplicitGmm => "explicit-gmm",
            Estimator::Preliminary => "preliminary",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub start: f64,
    pub step: f64,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub theta0: StableParams,
    pub ou: OUParams,
    pub n: usize,
    pub h: f64,
    pub replications: usize,
    pub seed: u64,
    pub grid: Option<GridSpec>,
    pub estimator: Estimator,
    pub out_dir: PathBuf,
    pub data: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            theta0: StableParams { mu: 0.0, sigma: 1.0, alpha: 1.3, beta: 0.0 },
            ou: OUParams { alpha: 1.5, sigma: 1.0, lambda: 1.0 },
            n: 1000,
            h: 0.1,
            replications: 100,
            seed: 42,
            grid: None,
            estimator: Estimator::Tmle,
            out_dir: PathBuf::from("out"),
            data: None,
        }
    }

    /// Parse a key=value config file (blank lines and '#' comments ignored).
    /// Later `set` calls (command-line flags) override file entries.
    pub fn load_file(&mut self, path: &Path) -> Result<(), ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ExperimentError::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        let bad = |what: &str| ExperimentError::Config(format!("invalid {what}: '{value}'"));
        match key {
            "mode" => self.mode = Mode::parse(value)?,
            "theta0" => {
                let v = parse_floats(value, 4).ok_or_else(|| bad("theta0"))?;
                self.theta0 = StableParams::new(v[0], v[1], v[2], v[3])
                    .map_err(|e| ExperimentError::Config(e.to_string()))?;
            }
            "ou" => {
                let v = parse_floats(value, 3).ok_or_else(|| bad("ou"))?;
                if !(v[0] > 0.0 && v[0] <= 2.0 && v[1] > 0.0 && v[2] > 0.0) {
                    return Err(bad("ou"));
                }
                self.ou = OUParams { alpha: v[0], sigma: v[1], lambda: v[2] };
            }
            "n" => self.n = value.parse().map_err(|_| bad("n"))?,
            "h" => {
                self.h = value.parse().map_err(|_| bad("h"))?;
                if !(self.h > 0.0) {
                    return Err(bad("h"));
                }
            }
            "reps" => self.replications = value.parse().map_err(|_| bad("reps"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "grid" => {
                let v = parse_floats(value, 3).ok_or_else(|| bad("grid"))?;
                let k = v[2] as usize;
                if v[1] <= 0.0 || k == 0 || v[2] != k as f64 {
                    return Err(bad("grid"));
                }
                self.grid = Some(GridSpec { start: v[0], step: v[1], k });
            }
            "estimator" => self.estimator = Estimator::parse(value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "data" => self.data = Some(PathBuf::from(value)),
            other => return Err(ExperimentError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replications < 1 {
            return Err(ExperimentError::Config("reps must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(ExperimentError::Config("n must be >= 2".into()));
        }
        if matches!(self.mode, Mode::Fit | Mode::FitOu) && self.data.is_none() {
            return Err(ExperimentError::Config(format!(
                "mode {} requires data=<file>",
                self.mode.name()
            )));
        }
        Ok(())
    }

    /// Grid in effect: the explicit spec if given, else the mode's default
    /// (0.01 + 0.05 j for i.i.d. work, 0.05 + 0.05 j for OU work, k = 101).
    pub fn resolved_grid(&self) -> Result<Grid, ExperimentError> {
        match self.grid {
            Some(g) => Grid::equidistant(g.start, g.step, g.k)
                .map_err(|e| ExperimentError::Config(e.to_string())),
            None if self.mode.is_ou() => Ok(Grid::paper_ou()),
            None => Ok(Grid::paper_iid()),
        }
    }

    fn echo(&self) -> String {
        let g = match self.grid {
            Some(g) => format!("{},{},{}", fmt_f(g.start), fmt_f(g.step), g.k),
            None if self.mode.is_ou() => "0.05,0.05,101".into(),
            None => "0.01,0.05,101".into(),
        };
        let t = self.theta0;
        let o = self.ou;
        let mut s = String::new();
        let _ = writeln!(s, "mode={}", self.mode.name());
        let _ = writeln!(s, "theta0={},{},{},{}", fmt_f(t.mu), fmt_f(t.sigma), fmt_f(t.alpha), fmt_f(t.beta));
        let _ = writeln!(s, "ou={},{},{}", fmt_f(o.alpha), fmt_f(o.sigma), fmt_f(o.lambda));
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "h={}", fmt_f(self.h));
        let _ = writeln!(s, "reps={}", self.replications);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "grid={g}");
        let _ = writeln!(s, "estimator={}", self.estimator.name());
        let _ = writeln!(s, "out={}", self.out_dir.display());
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data={}", d.display());
        }
        s
    }
}

fn parse_floats(s: &str, want: usize) -> Option<Vec<f64>> {
    let v: Option<Vec<f64>> = s.split(',').map(|p| p.trim().parse().ok()).collect();
    v.filter(|v| v.len() == want && v.iter().all(|x| x.is_finite()))
}

/// 17 significant digits: enough to round-trip any f64 exactly.
fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Summary statistics in the table convention: sd uses denominator r-1,
/// skewness and kurtosis use central moments with denominator r, kurtosis is
/// non-excess (Gaussian ~ 3). Skew/kurtosis are NaN for a constant column.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skew: f64,
    pub kurtosis: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let r = values.len();
    assert!(r >= 2, "summarize needs at least 2 values");
    let rf = r as f64;
    let mean = values.iter().sum::<f64>() / rf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let sd = (m2 / (rf - 1.0)).sqrt();
    m2 /= rf;
    m3 /= rf;
    m4 /= rf;
    let (skew, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (f64::NAN, f64::NAN)
    };
    Summary { n: r, mean, sd, skew, kurtosis }
}

/// One Monte Carlo row for the i.i.d. study.
#[derive(Debug, Clone)]
struct IidRow {
    rep: u64,
    converged: bool,
    iterations: usize,
    score_norm: f64,
    ridge_events: usize,
    theta: [f64; 4],
    se: [f64; 4],
}

/// One Monte Carlo row for the OU study. lambda_star is filled in after all
/// replications are gathered (it depends on the cross-replication mean).
#[derive(Debug, Clone)]
struct OuRow {
    rep: u64,
    converged: bool,
    iterations: usize,
    score_norm: f64,
    ridge_events: usize,
    theta: [f64; 3],
    se: [f64; 3],
    w: f64,
    lambda_star: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicationReport {
    pub rows_csv: String,
    pub summary_csv: String,
    pub config_echo: String,
}

const SCHEMA: &str = "stable-tmle/v1";

pub fn run(config: &ExperimentConfig) -> Result<ReplicationReport, ExperimentError> {
    config.validate()?;
    let threads = worker_count(config.replications);
    let report = run_with_threads(config, threads)?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|source| ExperimentError::Io { path: out.clone(), source })?;
    for (name, body) in [
        ("rows.csv", &report.rows_csv),
        ("summary.csv", &report.summary_csv),
        ("config.txt", &report.config_echo),
    ] {
        let path = out.join(name);
        fs::write(&path, body).map_err(|source| ExperimentError::Io { path, source })?;
    }
    Ok(report)
}

fn worker_count(replications: usize) -> usize {
    let cap = std::env::var("STABLE_TMLE_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or_else(rayon::current_num_threads);
    cap.min(replications.max(1))
}

/// Same as [`run`] with an explicit worker count and no file output; the
/// deterministic-output tests drive this directly.
pub fn run_with_threads(
    config: &ExperimentConfig,
    threads: usize,
) -> Result<ReplicationReport, ExperimentError> {
    config.validate()?;
    let grid = config.resolved_grid()?;
    let (rows_csv, summary_csv) = match config.mode {
        Mode::Sample => sample_report(config),
        Mode::SimOu => sim_ou_report(config),
        Mode::Fit => fit_report(config, grid)?,
        Mode::FitOu => fit_ou_report(config, grid)?,
        Mode::MonteCarlo => montecarlo_report(config, grid, threads)?,
        Mode::MonteCarloOu => montecarlo_ou_report(config, grid, threads)?,
    };
    Ok(ReplicationReport { rows_csv, summary_csv, config_echo: config.echo() })
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
}

fn sample_report(config: &ExperimentConfig) -> (String, String) {
    let data = sample_stable(config.n, &config.theta0, &RngStream::new(config.seed, 0));
    let mut rows = format!("# schema={SCHEMA} mode=sample\nindex,value\n");
    for (i, x) in data.iter().enumerate() {
        let _ = writeln!(rows, "{i},{}", fmt_f(*x));
    }
    (rows, column_summary_csv("sample", &[("value", summarize(&data))]))
}

fn sim_ou_report(config: &ExperimentConfig) -> (String, String) {
    let path = sample_ou_path(&config.ou, config.h, config.n, &RngStream::new(config.seed, 0));
    let mut rows = format!("# schema={SCHEMA} mode=sim-ou\nindex,time,value\n");
    for (i, x) in path.values.iter().enumerate() {
        let _ = writeln!(rows, "{i},{},{}", fmt_f(i as f64 * config.h), fmt_f(*x));
    }
    (rows, column_summary_csv("sim-ou", &[("value", summarize(&path.values))]))
}

fn column_summary_csv(mode: &str, cols: &[(&str, Summary)]) -> String {
    let mut s = format!("# schema={SCHEMA} mode={mode}\nparameter,n,mean,sd,skew,kurtosis\n");
    for (name, sum) in cols {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{}",
            sum.n,
            fmt_f(sum.mean),
            fmt_f(sum.sd),
            fmt_f(sum.skew),
            fmt_f(sum.kurtosis)
        );
    }
    s
}

fn read_column(path: &Path) -> Result<Vec<f64>, ExperimentError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    let mut first_row = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // tolerate an index column and a leading header row
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        let was_first = std::mem::take(&mut first_row);
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if was_first => continue,
            Err(_) => {
                return Err(ExperimentError::BadDatum {
                    path: path.to_path_buf(),
                    line: i + 1,
                    text: field.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn fit_one(data: &[f64], cfg: &FitConfig, estimator: Estimator) -> Result<FitResult, FitError> {
    match estimator {
        Estimator::Tmle => tml_fit(data, cfg, None),
        Estimator::ExplicitGmm => {
            let prelim = preliminary_estimate(data)?;
            explicit_gmm_fit(data, cfg, &prelim, Some(prelim))
        }
        Estimator::Preliminary => {
            let prelim = preliminary_estimate(data)?;
            // wrap the closed-form estimate in the common result shape
            Ok(FitResult {
                theta_hat: prelim,
                info: [[f64::NAN; 4]; 4],
                std_errors: [f64::NAN; 4],
                iterations: 0,
                final_score_norm: f64::NAN,
                converged: true,
                status: crate::estimators::FitStatus::Converged,
                trace: Vec::new(),
                ridge_events: 0,
            })
        }
    }
}

const IID_ROW_HEADER: &str =
    "rep,seed,stream,converged,iterations,score_norm,ridge_events,mu,sigma,alpha,beta,se_mu,se_sigma,se_alpha,se_beta";

fn iid_row_line(seed: u64, row: &IidRow) -> String {
    let t = row.theta;
    let e = row.se;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.rep,
        seed,
        row.rep,
        row.converged,
        row.iterations,
        fmt_f(row.score_norm),
        row.ridge_events,
        fmt_f(t[0]),
        fmt_f(t[1]),
        fmt_f(t[2]),
        fmt_f(t[3]),
        fmt_f(e[0]),
        fmt_f(e[1]),
        fmt_f(e[2]),
        fmt_f(e[3])
    )
}

fn iid_row(rep: u64, fit: &FitResult) -> IidRow {
    IidRow {
        rep,
        converged: fit.converged,
        iterations: fit.iterations,
        score_norm: fit.final_score_norm,
        ridge_events: fit.ridge_events,
        theta: fit.theta_hat.as_array(),
        se: fit.std_errors,
    }
}

fn fit_report(config: &ExperimentConfig, grid: Grid) -> Result<(String, String), ExperimentError> {
    let data = read_column(config.data.as_ref().expect("validated"))?;
    let cfg = FitConfig::new(grid);
    let fit = fit_one(&data, &cfg, config.estimator)?;
    let mut rows = format!("# schema={SCHEMA} mode=fit\n{IID_ROW_HEADER}\n");
    rows.push_str(&iid_row_line(config.seed, &iid_row(0, &fit)));
    rows.push('\n');
    let mut summary = format!("# schema={SCHEMA} mode=fit\nparameter,estimate,std_error\n");
    for (name, i) in [("mu", 0), ("sigma", 1), ("alpha", 2), ("beta", 3)] {
        let _ = writeln!(
            summary,
            "{name},{},{}",
            fmt_f(fit.theta_hat.as_array()[i]),
            fmt_f(fit.std_errors[i])
        );
    }
    Ok((rows, summary))
}

const OU_ROW_HEADER: &str =
    "rep,seed,stream,converged,iterations,score_norm,ridge_events,alpha,sigma,lambda,se_alpha,se_sigma,se_lambda,w,lambda_star";

fn ou_row_line(seed: u64, row: &OuRow) -> String {
    let t = row.theta;
    let e = row.se;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.rep,
        seed,
        row.rep,
        row.converged,
        row.iterations,
        fmt_f(row.score_norm),
        row.ridge_events,
        fmt_f(t[0]),
        fmt_f(t[1]),
        fmt_f(t[2]),
        fmt_f(e[0]),
        fmt_f(e[1]),
        fmt_f(e[2]),
        fmt_f(row.w),
        fmt_f(row.lambda_star)
    )
}

fn ou_row(rep: u64, fit: &OUFitResult, w: f64) -> OuRow {
    OuRow {
        rep,
        converged: fit.converged,
        iterations: fit.iterations,
        score_norm: fit.final_score_norm,
        ridge_events: fit.ridge_events,
        theta: fit.theta_hat.as_array(),
        se: fit.std_errors,
        w,
        lambda_star: f64::NAN,
    }
}

fn fit_ou_report(
    config: &ExperimentConfig,
    grid: Grid,
) -> Result<(String, String), ExperimentError> {
    let values = read_column(config.data.as_ref().expect("validated"))?;
    let path = OUPath { h: config.h, values };
    let cfg = OUFitConfig::new(grid);
    let init = ou_preliminary(&path)?;
    let fit = tcml_fit(&path, &cfg, Some(init))?;
    let w = path_w(&path);
    let mut rows = format!("# schema={SCHEMA} mode=fit-ou\n{OU_ROW_HEADER}\n");
    rows.push_str(&ou_row_line(config.seed, &ou_row(0, &fit, w)));
    rows.push('\n');
    let mut summary = format!("# schema={SCHEMA} mode=fit-ou\nparameter,estimate,std_error\n");
    for (name, i) in [("alpha", 0), ("sigma", 1), ("lambda", 2)] {
        let _ = writeln!(
            summary,
            "{name},{},{}",
            fmt_f(fit.theta_hat.as_array()[i]),
            fmt_f(fit.std_errors[i])
        );
    }
    Ok((rows, summary))
}

fn montecarlo_report(
    config: &ExperimentConfig,
    grid: Grid,
    threads: usize,
) -> Result<(String, String), ExperimentError> {
    let cfg = FitConfig::new(grid);
    let reps = config.replications;
    let rows: Result<Vec<IidRow>, ExperimentError> = pool(threads).install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let data = sample_stable(config.n, &config.theta0, &RngStream::new(config.seed, rep));
                let fit = fit_one(&data, &cfg, config.estimator)
                    .map_err(|source| ExperimentError::Replication { rep, source })?;
                Ok(iid_row(rep, &fit))
            })
            .collect()
    });
    let rows = rows?;

    let mut rows_csv = format!("# schema={SCHEMA} mode=montecarlo\n{IID_ROW_HEADER}\n");
    for row in &rows {
        rows_csv.push_str(&iid_row_line(config.seed, row));
        rows_csv.push('\n');
    }
    let kept: Vec<&IidRow> = rows.iter().filter(|r| r.converged).collect();
    let n_conv = kept.len();
    let mut summary = format!(
        "# schema={SCHEMA} mode=montecarlo\n# converged={n_conv}/{reps}\nparameter,n,mean,sd,skew,kurtosis\n"
    );
    if n_conv >= 2 {
        for (name, i) in [("mu", 0), ("sigma", 1), ("alpha", 2), ("beta", 3)] {
            let col: Vec<f64> = kept.iter().map(|r| r.theta[i]).collect();
            let s = summarize(&col);
            let _ = writeln!(
                summary,
                "{name},{},{},{},{},{}",
                s.n,
                fmt_f(s.mean),
                fmt_f(s.sd),
                fmt_f(s.skew),
                fmt_f(s.kurtosis)
            );
        }
    }
    Ok((rows_csv, summary))
}

/// Trimming rule for the lambda* diagnostic: drop values farther than 5
/// interquartile ranges from the median. With a degenerate IQR nothing is
/// dropped.
fn trim_lambda_star(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let (median, iqr) = (q(0.5), q(0.75) - q(0.25));
    if iqr <= 0.0 {
        return values.to_vec();
    }
    values.iter().copied().filter(|v| (v - median).abs() <= 5.0 * iqr).collect()
}

fn montecarlo_ou_report(
    config: &ExperimentConfig,
    grid: Grid,
    threads: usize,
) -> Result<(String, String), ExperimentError> {
    let cfg = OUFitConfig::new(grid);
    let reps = config.replications;
    let rows: Result<Vec<OuRow>, ExperimentError> = pool(threads).install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let path =
                    sample_ou_path(&config.ou, config.h, config.n, &RngStream::new(config.seed, rep));
                let fit = tcml_fit(&path, &cfg, None)
                    .map_err(|source| ExperimentError::Replication { rep, source })?;
                Ok(ou_row(rep, &fit, path_w(&path)))
            })
            .collect()
    });
    let mut rows = rows?;

    // lambda* needs every replication's lambda-hat; restrict to converged rows
    let conv_idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].converged).collect();
    if conv_idx.len() >= 2 {
        let hats: Vec<f64> = conv_idx.iter().map(|&i| rows[i].theta[2]).collect();
        let ws: Vec<f64> = conv_idx.iter().map(|&i| rows[i].w).collect();
        for (j, &i) in conv_idx.iter().enumerate() {
            rows[i].lambda_star = lambda_star(&hats, &ws, j);
        }
    }

    let mut rows_csv = format!("# schema={SCHEMA} mode=montecarlo-ou\n{OU_ROW_HEADER}\n");
    for row in &rows {
        rows_csv.push_str(&ou_row_line(config.seed, row));
        rows_csv.push('\n');
    }

    let kept: Vec<&OuRow> = rows.iter().filter(|r| r.converged).collect();
    let n_conv = kept.len();
    let mut summary = format!(
        "# schema={SCHEMA} mode=montecarlo-ou\n# converged={n_conv}/{reps}\nparameter,n,mean,sd,skew,kurtosis\n"
    );
    if n_conv >= 2 {
        let mut cols: Vec<(&str, Vec<f64>)> = vec![
            ("alpha", kept.iter().map(|r| r.theta[0]).collect()),
            ("sigma", kept.iter().map(|r| r.theta[1]).collect()),
            ("lambda", kept.iter().map(|r| r.theta[2]).collect()),
            ("lambda_star", kept.iter().map(|r| r.lambda_star).collect()),
        ];
        let trimmed = trim_lambda_star(&cols[3].1);
        if trimmed.len() >= 2 {
            cols.push(("lambda_star_trimmed", trimmed));
        }
        for (name, col) in cols {
            let s = summarize(&col);
            let _ = writeln!(
                summary,
                "{name},{},{},{},{},{}",
                s.n,
                fmt_f(s.mean),
                fmt_f(s.sd),
                fmt_f(s.skew),
                fmt_f(s.kurtosis)
            );
        }
    }
    Ok((rows_csv, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summarize_hand_values() {
        let s = summarize(&[-1.0, 0.0, 1.0]);
        assert!(s.mean.abs() < 1e-15);
        assert!((s.sd - 1.0).abs() < 1e-15);
        assert!(s.skew.abs() < 1e-15);
        assert!((s.kurtosis - 1.5).abs() < 1e-15);
    }

    #[test]
    fn summarize_constant_column() {
        let s = summarize(&[2.5, 2.5, 2.5]);
        assert_eq!(s.sd, 0.0);
        assert!(s.skew.is_nan() && s.kurtosis.is_nan());
        assert_eq!(fmt_f(s.skew), "NA");
    }

    #[test]
    fn kurtosis_convention_is_non_excess() {
        // draws from S(0,1,2,0) = N(0,2); kurtosis is scale-free
        let gauss = StableParams { mu: 0.0, sigma: 1.0, alpha: 2.0, beta: 0.0 };
        let data = sample_stable(1_000_000, &gauss, &RngStream::new(7, 0));
        let s = summarize(&data);
        assert!((s.kurtosis - 3.0).abs() < 0.02, "kurtosis {}", s.kurtosis);
        assert!(s.skew.abs() < 0.01);
    }

    #[test]
    fn config_parsing_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("exp.conf");
        fs::write(&file, "# comment\nn=500\nseed=9\ntheta0=0,1,1.6,0.5\n").unwrap();
        let mut cfg = ExperimentConfig::new(Mode::MonteCarlo);
        cfg.load_file(&file).unwrap();
        assert_eq!(cfg.n, 500);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.theta0.alpha, 1.6);
        // flags override the file
        cfg.set("n", "250").unwrap();
        assert_eq!(cfg.n, 250);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("grid", "0.1,-0.05,101").is_err());
        assert!(cfg.set("ou", "2.5,1,1").is_err());

        let mut fit = ExperimentConfig::new(Mode::Fit);
        assert!(fit.validate().is_err(), "fit without data must fail validation");
        fit.data = Some(PathBuf::from("x.csv"));
        fit.validate().unwrap();
    }

    #[test]
    fn grid_defaults_follow_mode() {
        let iid = ExperimentConfig::new(Mode::MonteCarlo).resolved_grid().unwrap();
        assert!((iid.points()[0] - 0.01).abs() < 1e-15);
        let ou = ExperimentConfig::new(Mode::MonteCarloOu).resolved_grid().unwrap();
        assert!((ou.points()[0] - 0.05).abs() < 1e-15);
        assert_eq!(iid.k(), 101);
    }

    #[test]
    fn montecarlo_rows_independent_of_worker_count() {
        let mut cfg = ExperimentConfig::new(Mode::MonteCarlo);
        cfg.n = 200;
        cfg.replications = 4;
        cfg.set("grid", "0.01,0.25,21").unwrap();
        let one = run_with_threads(&cfg, 1).unwrap();
        let two = run_with_threads(&cfg, 2).unwrap();
        assert_eq!(one.rows_csv, two.rows_csv);
        assert_eq!(one.summary_csv, two.summary_csv);
        // and a rerun is byte-identical
        let again = run_with_threads(&cfg, 2).unwrap();
        assert_eq!(one.rows_csv, again.rows_csv);
    }

    #[test]
    fn summary_recomputes_from_rows() {
        let mut cfg = ExperimentConfig::new(Mode::MonteCarlo);
        cfg.n = 200;
        cfg.replications = 4;
        cfg.set("grid", "0.01,0.25,21").unwrap();
        let report = run_with_threads(&cfg, 1).unwrap();
        // re-parse the alpha column from the rows CSV and recompute its line
        let mut alphas = Vec::new();
        for line in report.rows_csv.lines().skip(2) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields[3] == "true" {
                alphas.push(fields[9].parse::<f64>().unwrap());
            }
        }
        let s = summarize(&alphas);
        let want = format!(
            "alpha,{},{},{},{},{}",
            s.n,
            fmt_f(s.mean),
            fmt_f(s.sd),
            fmt_f(s.skew),
            fmt_f(s.kurtosis)
        );
        assert!(report.summary_csv.lines().any(|l| l == want), "missing line: {want}");
    }

    #[test]
    fn sample_mode_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(Mode::Sample);
        cfg.n = 50;
        cfg.out_dir = dir.path().join("artifacts");
        let report = run(&cfg).unwrap();
        for name in ["rows.csv", "summary.csv", "config.txt"] {
            let body = fs::read_to_string(cfg.out_dir.join(name)).unwrap();
            assert!(!body.is_empty());
            if name == "rows.csv" {
                assert_eq!(body, report.rows_csv);
            }
        }
        assert!(report.config_echo.contains("mode=sample"));
        assert_eq!(report.rows_csv.lines().count(), 52);
    }

    #[test]
    fn fit_mode_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let theta = StableParams { mu: 0.0, sigma: 1.0, alpha: 1.6, beta: 0.5 };
        let data = sample_stable(1000, &theta, &RngStream::new(11, 0));
        let data_file = dir.path().join("draws.csv");
        let body: String = data.iter().map(|x| format!("{x}\n")).collect();
        fs::write(&data_file, body).unwrap();

        let mut cfg = ExperimentConfig::new(Mode::Fit);
        cfg.data = Some(data_file);
        cfg.out_dir = dir.path().join("out");
        let report = run(&cfg).unwrap();
        // estimate within 4 reported standard errors of the truth
        let mut got = std::collections::HashMap::new();
        for line in report.summary_csv.lines().skip(2) {
            let f: Vec<&str> = line.split(',').collect();
            got.insert(f[0].to_string(), (f[1].parse::<f64>().unwrap(), f[2].parse::<f64>().unwrap()));
        }
        for (name, truth) in [("mu", 0.0), ("sigma", 1.0), ("alpha", 1.6), ("beta", 0.5)] {
            let (est, se) = got[name];
            assert!((est - truth).abs() < 4.0 * se, "{name}: {est} vs {truth} (se {se})");
        }
    }

    #[test]
    fn read_column_tolerates_header_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("d.csv");
        fs::write(&f, "index,value\n0,1.5\n1,-2.0\n\n# note\n2,0.25\n").unwrap();
        assert_eq!(read_column(&f).unwrap(), vec![1.5, -2.0, 0.25]);
        fs::write(&f, "1.0\nnot-a-number\n").unwrap();
        assert!(matches!(read_column(&f), Err(ExperimentError::BadDatum { line: 2, .. })));
    }
}
