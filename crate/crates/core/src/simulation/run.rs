//! Replications of a setting and their summary table.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{MbiError, Result};
use crate::model::{prepare, PrepareOptions};
use crate::patterns::detect_patterns;
use crate::reduction::build_reduction;
use crate::seed::derive_seed;
use crate::tuning::{default_grid, run_path, PathOptions};

use super::baselines::{cc_scad, si_scad, ScadOptions};
use super::{draw, metrics, SettingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Proposed,
    CcScad,
    SiScad,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::CcScad, Method::SiScad];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::CcScad => "cc",
            Method::SiScad => "si",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = MbiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" | "mbi" => Ok(Method::Proposed),
            "cc" | "cc-scad" => Ok(Method::CcScad),
            "si" | "si-scad" => Ok(Method::SiScad),
            other => Err(MbiError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub method: Method,
    pub fnr: f64,
    pub fpr: f64,
    pub fnr_plus_fpr: f64,
    pub mse: f64,
    pub time_s: f64,
    pub beta_hat: DVector<f64>,
    /// Every fit on the proposed path had a nonincreasing objective trace.
    pub trace_monotone: bool,
    /// Largest `|cov(ḡ_(2), h)| / scale` over groups at the selected fit.
    pub orthogonality: f64,
}

impl MetricRow {
    fn new(method: Method, beta_hat: DVector<f64>, beta0: &DVector<f64>, time_s: f64) -> Self {
        let (fnr, fpr, mse) = metrics(&beta_hat, beta0);
        Self {
            method,
            fnr,
            fpr,
            fnr_plus_fpr: fnr + fpr,
            mse,
            time_s,
            beta_hat,
            trace_monotone: true,
            orthogonality: 0.0,
        }
    }
}

/// Per-method means over the replications that succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setting: usize,
    pub rho: f64,
    pub method: Method,
    pub fnr: f64,
    pub fpr: f64,
    pub fnr_plus_fpr: f64,
    pub mse: f64,
    pub time_s: f64,
    pub reps_used: usize,
    /// The first failure, when any replication failed.
    pub failure: Option<MbiError>,
}

/// Seed of replication `rep`.
pub fn replication_seed(spec: &SettingSpec, rep: usize) -> u64 {
    derive_seed(spec.seed, &[spec.id as u64, rep as u64])
}

fn run_proposed(data: &crate::data::DataSet, beta0: &DVector<f64>, seed: u64) -> Result<MetricRow> {
    let start = Instant::now();
    let prep = prepare(data, &PrepareOptions::with_seed(seed))?;
    let grid = default_grid(&prep)?;
    let path = run_path(&prep, &grid, &PathOptions::with_seed(seed))?;
    let best = path.best();
    let (_, beta_hat) = prep.to_original(&best.beta_hat);
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = MetricRow::new(Method::Proposed, beta_hat, beta0, elapsed);
    row.trace_monotone = path.fits.iter().flatten().all(|f| f.trace_is_monotone());
    let map = build_reduction(&prep.system, &best.beta_raw)?;
    row.orthogonality = prep
        .system
        .groups
        .iter()
        .zip(&map.groups)
        .map(|(gm, red)| {
            let (dev, scale) = red.orthogonality_residual(&gm.moment_matrix(&best.beta_raw));
            dev / scale
        })
        .fold(0.0, f64::max);
    Ok(row)
}

/// Runs each method on replication `rep` of `spec`.
pub fn run_replication(spec: &SettingSpec, rep: usize, methods: &[Method]) -> Result<Vec<(Method, Result<MetricRow>)>> {
    let seed = replication_seed(spec, rep);
    let (_, data, beta0) = draw(spec, seed)?;
    let idx = detect_patterns(&data)?;
    let scad = ScadOptions::with_seed(seed);
    let out = methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let row = match m {
                Method::Proposed => run_proposed(&data, &beta0, seed),
                Method::CcScad => cc_scad(&data, &idx, &scad)
                    .map(|f| MetricRow::new(m, f.beta, &beta0, start.elapsed().as_secs_f64())),
                Method::SiScad => si_scad(&data, &idx, &scad)
                    .map(|f| MetricRow::new(m, f.beta, &beta0, start.elapsed().as_secs_f64())),
            };
            (m, row)
        })
        .collect();
    Ok(out)
}

/// Runs `spec.reps` replications in parallel and averages per method.
/// Failed replications are logged and excluded.
pub fn run_setting(spec: &SettingSpec, methods: &[Method]) -> Result<Vec<SummaryRow>> {
    spec.validate()?;
    let reps: Vec<Vec<(Method, Result<MetricRow>)>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| run_replication(spec, rep, methods))
        .collect::<Result<_>>()?;
    Ok(summarize(spec, methods, &reps))
}

/// Averages replication rows per method, in replication order.
pub fn summarize(spec: &SettingSpec, methods: &[Method], reps: &[Vec<(Method, Result<MetricRow>)>]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&m| {
            let mut ok: Vec<&MetricRow> = Vec::new();
            let mut failure = None;
            for (rep, rows) in reps.iter().enumerate() {
                for (method, row) in rows.iter().filter(|(method, _)| *method == m) {
                    match row {
                        Ok(r) => ok.push(r),
                        Err(e) => {
                            warn!("setting {} rep {rep} {method}: {e}", spec.id);
                            failure.get_or_insert_with(|| e.clone());
                        }
                    }
                }
            }
            let mean = |f: fn(&MetricRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SummaryRow {
                setting: spec.id,
                rho: spec.rho,
                method: m,
                fnr: mean(|r| r.fnr),
                fpr: mean(|r| r.fpr),
                fnr_plus_fpr: mean(|r| r.fnr_plus_fpr),
                mse: mean(|r| r.mse),
                time_s: mean(|r| r.time_s),
                reps_used: ok.len(),
                failure,
            }
        })
        .collect()
}

/// Writes `setting,rho,method,fnr,fpr,fnr_plus_fpr,mse,time_s,reps_used`.
/// Means over zero replications are written as `NA`.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setting", "rho", "method", "fnr", "fpr", "fnr_plus_fpr", "mse", "time_s", "reps_used"])?;
    let num = |v: f64| if v.is_nan() { "NA".to_string() } else { v.to_string() };
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            r.rho.to_string(),
            r.method.to_string(),
            num(r.fnr),
            num(r.fpr),
            num(r.fnr_plus_fpr),
            num(r.mse),
            num(r.time_s),
            r.reps_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
