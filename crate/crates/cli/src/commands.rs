use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mbi_core::imputation::impute as impute_views;
use mbi_core::io::{write_matrix, write_view};
use mbi_core::patterns::{validate_for_fit, Route};
use mbi_core::simulation::{run_setting, write_summary_csv, Covariance, Method, SettingSpec};
use mbi_core::*;

use crate::{CovarianceArg, DataArgs, FitArgs, ImputeArgs, SimulateArgs};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    #[allow(non_snake_case)]
    pub fn Usage(message: String) -> Self {
        Self { code: 2, message }
    }

    fn output(path: &Path, e: impl fmt::Display) -> Self {
        Self {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }

    /// Classifies a library error; `names` labels covariate columns.
    fn core(e: MbiError, names: Option<&[String]>) -> Self {
        let code = match &e {
            MbiError::Parse(_)
            | MbiError::InvalidSpans(_)
            | MbiError::InvalidArgument(_)
            | MbiError::InvalidRho { .. }
            | MbiError::NotImplemented(_)
            | MbiError::MissingResponse { .. }
            | MbiError::Io(_) => 2,
            MbiError::NonBlockRow { .. }
            | MbiError::UnobservedColumn { .. }
            | MbiError::EmptyDonor { .. }
            | MbiError::NoDonorRows { .. }
            | MbiError::NoCompleteGroup => 3,
            _ => 4,
        };
        let column = |j: usize| match names {
            Some(n) if j < n.len() => format!("covariate '{}' (column {})", n[j], j + 1),
            _ => format!("covariate column {}", j + 1),
        };
        let message = match &e {
            MbiError::UnobservedColumn { column: j } => format!("{} is never observed", column(*j)),
            MbiError::NoDonorRows { target } => {
                format!("no rows observe {} together with its imputation predictors", column(*target))
            }
            MbiError::MissingResponse { row } => format!("row {}: response is missing or not finite", row + 1),
            MbiError::EmptyDonor { group } => format!("group {} has no donor group", group + 1),
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load(args: &DataArgs) -> CliResult<DataSet> {
    if !args.data.is_file() {
        return Err(CliError::Usage(format!("data file {} does not exist", args.data.display())));
    }
    read_csv_path(&args.data, &args.response, args.sources.as_deref()).map_err(|e| match e {
        MbiError::NonBlockRow { row, source_index } => {
            let span = args
                .sources
                .as_deref()
                .and_then(|s| s.split(',').nth(source_index))
                .map(|s| format!(" (covariate columns {})", s.trim()))
                .unwrap_or_default();
            CliError {
                code: 3,
                message: format!(
                    "row {}: source {}{span} is only partially observed; a source must be entirely NA or entirely present",
                    row + 1,
                    source_index + 1
                ),
            }
        }
        other => CliError::core(other, None),
    })
}

fn prepare_options(args: &DataArgs, seed: u64) -> PrepareOptions {
    PrepareOptions {
        min_group_size: args.min_group_size,
        ..PrepareOptions::with_seed(seed)
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::output(path, e))
}

/// `"auto"` or a comma-separated list of positive values.
pub fn parse_lambda(text: &str, prep: &Prepared) -> CliResult<Vec<f64>> {
    if text.trim().eq_ignore_ascii_case("auto") {
        return default_grid(prep).map_err(|e| CliError::core(e, None));
    }
    let mut grid = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: f64 = part
            .parse()
            .map_err(|_| CliError::Usage(format!("--lambda: cannot parse '{part}'")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("--lambda: {part} is not a positive number")));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(CliError::Usage("--lambda: empty list".into()));
    }
    Ok(grid)
}

fn set_label(items: &[usize]) -> String {
    let inner: Vec<String> = items.iter().map(|v| (v + 1).to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// Human-readable description of the groups, donors and imputation routes.
fn describe_patterns(prep: &Prepared, out: &mut String) {
    use std::fmt::Write as _;
    let idx = &prep.idx;
    let spans = prep.data.source_spans();
    let _ = writeln!(out, "groups: {} (complete-case group first when present)", idx.n_groups());
    for (r, g) in idx.groups.iter().enumerate() {
        let observed: Vec<usize> = (0..spans.len()).filter(|&s| g.signature[s]).collect();
        let _ = writeln!(
            out,
            "  group {}: {} rows, observed sources {}, G({}) = {}",
            r + 1,
            g.size(),
            set_label(&observed),
            r + 1,
            set_label(&g.donors)
        );
    }
    let report = validate_for_fit(idx, prep.options.min_group_size);
    for c in report.groups.iter().filter(|c| c.below_floor || c.small_relative_to_dim) {
        let _ = writeln!(
            out,
            "  note: group {} has {} rows for {} moments{}",
            c.group + 1,
            c.size,
            c.moment_dim,
            if c.below_floor { "; below the size floor, no moments of its own" } else { "" }
        );
    }
    let mut routes: BTreeMap<(usize, usize), (usize, usize, usize, usize)> = BTreeMap::new();
    for e in &report.routes {
        let entry = routes.entry((e.group, e.donor)).or_insert((0, 0, e.pooled_rows, e.predictors));
        match e.route {
            Route::Glm => entry.0 += 1,
            Route::L1 => entry.1 += 1,
        }
        entry.2 = entry.2.min(e.pooled_rows);
    }
    if routes.is_empty() {
        let _ = writeln!(out, "imputation: none needed");
    } else {
        let _ = writeln!(out, "imputation routes:");
        for ((r, k), (glm, l1, rows, preds)) in routes {
            let _ = writeln!(
                out,
                "  group {} from donor {}: {glm} unpenalized, {l1} lasso ({preds} predictors, at least {rows} pooled rows)",
                r + 1,
                k + 1
            );
        }
    }
}

fn describe_fit(prep: &Prepared, path: &PathResult, out: &mut String) {
    use std::fmt::Write as _;
    let best = path.best();
    let _ = writeln!(out, "principal components kept (t1, t2):");
    for (gm, (t1, t2)) in prep.system.groups.iter().zip(&best.components) {
        let _ = writeln!(out, "  group {}: t1 = {t1}, t2 = {t2}", gm.group + 1);
    }
    let converged = path.fits.iter().filter(|f| matches!(f, Ok(f) if f.converged)).count();
    let _ = writeln!(
        out,
        "lambda: {:.3e} selected ({} of {} on the grid, {converged} converged)",
        best.lambda,
        path.selected + 1,
        path.grid.len()
    );
    let _ = writeln!(out, "bic: {:.3}, df: {}", path.bic[path.selected], best.df());
    let names = prep.data.names();
    let selected: Vec<&str> = best.active_set.iter().map(|&j| names[j].as_str()).collect();
    let _ = writeln!(out, "selected: {}", if selected.is_empty() { "(none)".into() } else { selected.join(", ") });
}

struct FitRun {
    data: DataSet,
    prep: Prepared,
    path: PathResult,
}

fn fit_data(args: &FitArgs, seed: u64) -> CliResult<FitRun> {
    let data = load(&args.data)?;
    let names = data.names().to_vec();
    let prep = prepare(&data, &prepare_options(&args.data, seed)).map_err(|e| CliError::core(e, Some(&names)))?;
    let grid = parse_lambda(&args.lambda, &prep)?;
    let path = run_path(&prep, &grid, &PathOptions::with_seed(seed)).map_err(|e| CliError::core(e, Some(&names)))?;
    Ok(FitRun { data, prep, path })
}

fn header(command: &str, args: &DataArgs, seed: u64, data: &DataSet) -> String {
    format!(
        "mbi {command}\ndata: {}\nseed: {seed}\nrows: {}, covariates: {}, sources: {}\n",
        args.data.display(),
        data.n_rows(),
        data.n_cols(),
        data.n_sources()
    )
}

/// Imputes on the original scale and writes one CSV per (group, donor).
fn dump_imputations(data: &DataSet, dir: &Path, opts: &PrepareOptions) -> CliResult<usize> {
    let names = data.names().to_vec();
    let idx = detect_patterns(data).map_err(|e| CliError::core(e, Some(&names)))?;
    let set = impute_views(data, &idx, &opts.imputation).map_err(|e| CliError::core(e, Some(&names)))?;
    create_dir(dir)?;
    let mut count = 0;
    for views in &set.views {
        for view in views {
            let path = dir.join(format!("group{}_donor{}.csv", view.group + 1, view.donor + 1));
            write_view(view, &names, create(&path)?).map_err(|e| CliError::output(&path, e))?;
            count += 1;
        }
    }
    Ok(count)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

pub fn fit(args: &FitArgs, seed: u64) -> CliResult<()> {
    let run = fit_data(args, seed)?;
    let FitRun { data, prep, path } = &run;
    create_dir(&args.out_dir)?;
    let best = path.best();
    let (intercept, coef) = prep.to_original(&best.beta_hat);
    let rows: Vec<CoefficientRow> = data
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| CoefficientRow {
            name: name.clone(),
            coefficient: coef[j],
            selected: coef[j] != 0.0,
        })
        .collect();
    let coef_path = args.out_dir.join("coefficients.csv");
    write_coefficients(&rows, create(&coef_path)?).map_err(|e| CliError::output(&coef_path, e))?;
    let path_csv = args.out_dir.join("path.csv");
    path.write_csv(create(&path_csv)?).map_err(|e| CliError::output(&path_csv, e))?;

    let mut summary = header("fit", &args.data, seed, data);
    describe_patterns(prep, &mut summary);
    describe_fit(prep, path, &mut summary);
    if intercept != 0.0 {
        summary.push_str(&format!("intercept: {intercept:.3}\n"));
    }
    if args.dump_imputations {
        let dir = args.out_dir.join("imputations");
        let n = dump_imputations(data, &dir, &prepare_options(&args.data, seed))?;
        summary.push_str(&format!("imputations: {n} views written to {}\n", dir.display()));
    }
    summary.push_str(&format!("wrote {} and {}\n", coef_path.display(), path_csv.display()));
    write_text(&args.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn impute(args: &ImputeArgs, seed: u64) -> CliResult<()> {
    let data = load(&args.data)?;
    let names = data.names().to_vec();
    let opts = prepare_options(&args.data, seed);
    let prep = prepare(&data, &opts).map_err(|e| CliError::core(e, Some(&names)))?;
    let n = dump_imputations(&data, &args.out_dir, &opts)?;
    let mut summary = header("impute", &args.data, seed, &data);
    describe_patterns(&prep, &mut summary);
    summary.push_str(&format!("wrote {n} views to {}\n", args.out_dir.display()));
    print!("{summary}");
    Ok(())
}

pub fn diagnose(args: &FitArgs, seed: u64) -> CliResult<()> {
    let run = fit_data(args, seed)?;
    let FitRun { data, prep, path } = &run;
    create_dir(&args.out_dir)?;
    let best = path.best();
    let mut report = header("diagnose", &args.data, seed, data);
    describe_fit(prep, path, &mut report);
    if best.active_set.is_empty() {
        report.push_str("covariance: not available, no covariate selected\n");
    } else {
        let v = empirical_covariance(prep, best).map_err(|e| CliError::core(e, None))?;
        let v_path = args.out_dir.join("v_hat.csv");
        write_matrix(&v, create(&v_path)?).map_err(|e| CliError::output(&v_path, e))?;
        report.push_str(&format!(
            "covariance of the selected coefficients (standardized scale): {} x {}, written to {}\n",
            v.nrows(),
            v.ncols(),
            v_path.display()
        ));
        match efficiency_gap(prep, best) {
            Ok(gap) => {
                let v1_path = args.out_dir.join("v_hat_single.csv");
                write_matrix(&gap.v_hat_single, create(&v1_path)?).map_err(|e| CliError::output(&v1_path, e))?;
                report.push_str(&format!(
                    "efficiency gap: min eigenvalue of V1 - V = {:.6e}, norm of V1 = {:.6e}\n",
                    gap.min_eigenvalue, gap.scale
                ));
                report.push_str(&format!(
                    "psd at tolerance 1e-8 x norm: {}\n",
                    if gap.is_psd() { "yes" } else { "no" }
                ));
            }
            Err(MbiError::NoCompleteGroup) => {
                report.push_str("efficiency gap: not applicable, the data have no complete-case group\n");
            }
            Err(e @ MbiError::UnidentifiedSingle { .. }) => {
                report.push_str(&format!("efficiency gap: not available, {e}\n"));
            }
            Err(e) => return Err(CliError::core(e, None)),
        }
    }
    write_text(&args.out_dir.join("diagnostics.txt"), &report)?;
    print!("{report}");
    Ok(())
}

pub fn parse_methods(text: &str) -> CliResult<Vec<Method>> {
    let mut methods = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Method = part.parse().map_err(|e: MbiError| CliError::Usage(format!("--methods: {e}")))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage("--methods: empty list".into()));
    }
    Ok(methods)
}

pub fn simulate(args: &SimulateArgs, seed: u64) -> CliResult<()> {
    let methods = parse_methods(&args.methods)?;
    let mut spec = SettingSpec::preset(args.setting)
        .map_err(|e| CliError::core(e, None))?
        .with_reps(args.reps)
        .with_seed(seed);
    if let Some(rho) = args.rho {
        spec = spec.with_rho(rho);
    }
    if args.covariance == CovarianceArg::Unstructured {
        spec.covariance = Covariance::Unstructured;
    }
    spec.validate().map_err(|e| CliError::core(e, None))?;
    if spec.p() > 200 {
        log::warn!("setting {} has p = {}; each fit is slow", spec.id, spec.p());
    }
    let rows = run_setting(&spec, &methods).map_err(|e| CliError::core(e, None))?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            create_dir(&args.out_dir)?;
            args.out_dir.join("results.csv")
        }
    };
    write_summary_csv(&rows, create(&out)?).map_err(|e| CliError::output(&out, e))?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "mbi simulate\nsetting: {}, rho: {}, reps: {}, seed: {seed}",
        spec.id, spec.rho, spec.reps
    );
    let _ = writeln!(stdout, "{:<10} {:>7} {:>7} {:>9} {:>9} {:>9} {:>5}", "method", "fnr", "fpr", "fnr+fpr", "mse", "time_s", "reps");
    for r in &rows {
        let _ = writeln!(
            stdout,
            "{:<10} {:>7.3} {:>7.3} {:>9.3} {:>9.3} {:>9.3} {:>5}",
            r.method.name(),
            r.fnr,
            r.fpr,
            r.fnr_plus_fpr,
            r.mse,
            r.time_s,
            r.reps_used
        );
        if let Some(e) = &r.failure {
            let _ = writeln!(stdout, "  {}: {} of {} reps failed, first: {e}", r.method.name(), spec.reps - r.reps_used, spec.reps);
        }
    }
    let _ = writeln!(stdout, "wrote {}", out.display());
    Ok(())
}
