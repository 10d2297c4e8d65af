//! Command-line pipeline: validate, fit, reserve, simulate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use ssmreserve::chainladder::{cl_fit, ChainLadderResult, ClSummary};
use ssmreserve::estimation::{compare, ComparisonReport, FitOptions, FitResult, ModelScore};
use ssmreserve::kalman;
use ssmreserve::models::{recipe, recipe_by_name, BuiltModel, ModelError, ModelName};
use ssmreserve::simsmooth::{
    point_reserve, reserve_distribution, Histogram, ReserveOptions, SimError, Summary, DEFAULT_BINS,
    DEFAULT_PERCENTILES,
};
use ssmreserve::triangle::{
    parse_triangle, reconstruct_incremental, Grid, ParseOptions, ResponseKind, Triangle,
};

pub const THREADS_ENV: &str = "SSMRESERVE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ssmreserve", version, about = "State space claims reserving on runoff triangles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a triangle and report its shape, mask and positivity.
    Validate(CommonArgs),
    /// Fit models, compare them by BIC and write predicted grids.
    Fit(CommonArgs),
    /// Plug-in reserves per model next to the Chain-Ladder benchmark.
    Reserve(CommonArgs),
    /// Monte-Carlo reserve distributions.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Delimited triangle of incremental claims: a header of lag labels, one
    /// row per origin, blanks for unobserved cells.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated recipe names.
    #[arg(long, value_delimiter = ',', default_value = "Hertig,CC,Verrall,BSM")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated probabilities reported in simulation summaries.
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Vec<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Format of tables and summaries; fit files are always JSON and draws CSV.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Add this constant to every incremental value before taking logs.
    #[arg(long, value_name = "V")]
    pub allow_epsilon_shift: Option<f64>,
    /// Report non-positive cells without rejecting the input.
    #[arg(long)]
    pub lenient: bool,
    /// Known true reserve, added as a histogram reference line.
    #[arg(long, value_name = "V")]
    pub true_reserve: Option<f64>,
    /// Directory of fit files to reuse instead of refitting.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

/// Settings recorded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: String,
    pub models: Vec<ModelName>,
    pub n_draws: usize,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    pub format: Format,
    pub strict_positivity: bool,
    pub epsilon_shift: f64,
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

fn input_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        error: e.into(),
    }
}

fn numeric_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_NUMERIC,
        error: e.into(),
    }
}

fn model_err(e: ModelError) -> Failure {
    input_err(e)
}

fn sim_err(e: SimError) -> Failure {
    match e {
        SimError::TooFewDraws { .. } => input_err(e),
        _ => numeric_err(e),
    }
}

fn io_err(e: std::io::Error, path: &Path) -> Failure {
    input_err(anyhow!(e).context(format!("{}", path.display())))
}

type Outcome<T> = Result<T, Failure>;

impl CommonArgs {
    pub fn config(&self) -> Outcome<RunConfig> {
        let models = self
            .models
            .iter()
            .map(|m| recipe_by_name(m.trim()).map(|r| r.name))
            .collect::<Result<Vec<_>, _>>()
            .map_err(model_err)?;
        if models.is_empty() {
            return Err(input_err(anyhow!("no models given")));
        }
        let quantiles = if self.quantiles.is_empty() {
            DEFAULT_PERCENTILES.to_vec()
        } else {
            self.quantiles.clone()
        };
        if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(input_err(anyhow!("quantile {q} is outside (0, 1)")));
        }
        let epsilon_shift = self.allow_epsilon_shift.unwrap_or(0.0);
        if !epsilon_shift.is_finite() || epsilon_shift < 0.0 {
            return Err(input_err(anyhow!("epsilon shift must be a non-negative number")));
        }
        Ok(RunConfig {
            input: self.input.display().to_string(),
            models,
            n_draws: self.draws,
            seed: self.seed,
            quantiles,
            format: self.format,
            strict_positivity: !self.lenient,
            epsilon_shift,
        })
    }
}

pub fn load_triangle(path: &Path, cfg: &RunConfig, strict: bool) -> Outcome<Triangle> {
    let text = fs::read_to_string(path).map_err(|e| io_err(e, path))?;
    let opts = ParseOptions {
        require_positive: strict,
        epsilon_shift: cfg.epsilon_shift,
        ..Default::default()
    };
    parse_triangle(&text, &opts)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input_err)
}

fn write_file(path: &Path, contents: &str) -> Outcome<()> {
    fs::write(path, contents).map_err(|e| io_err(e, path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Runs one command and returns its stdout text.
pub fn run(cli: &Cli) -> Outcome<String> {
    let args = match &cli.command {
        Command::Validate(a) | Command::Fit(a) | Command::Reserve(a) | Command::Simulate(a) => a,
    };
    if let Some(n) = args.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = args.config()?;
    match &cli.command {
        Command::Validate(_) => cmd_validate(args, &cfg),
        Command::Fit(_) => cmd_fit(args, &cfg),
        Command::Reserve(_) => cmd_reserve(args, &cfg),
        Command::Simulate(_) => cmd_simulate(args, &cfg),
    }
}

fn mask_picture(t: &Triangle) -> String {
    let mut s = String::new();
    for i in 0..t.n_origin() {
        let row: String = (0..t.n_dev())
            .map(|j| if t.is_observed(i, j) { '#' } else { '.' })
            .collect();
        let _ = writeln!(s, "  {:>6} {row}", t.origin_labels()[i]);
    }
    s
}

fn nonpositive_cells(t: &Triangle) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..t.n_origin() {
        for j in 0..t.n_dev() {
            if let (true, Some(x)) = (t.is_observed(i, j), t.value(i, j)) {
                if x + t.epsilon_shift() <= 0.0 {
                    out.push(format!(
                        "origin {} lag {}: {x}",
                        t.origin_labels()[i],
                        t.dev_labels()[j]
                    ));
                }
            }
        }
    }
    out
}

pub fn cmd_validate(args: &CommonArgs, cfg: &RunConfig) -> Outcome<String> {
    // parse leniently first so every finding can be listed
    let t = load_triangle(&args.input, cfg, false)?;
    let mut s = String::new();
    let _ = writeln!(s, "shape: {} origins x {} lags", t.n_origin(), t.n_dev());
    let _ = writeln!(s, "{} observed / {} unobserved", t.n_observed(), t.n_unobserved());
    let _ = writeln!(
        s,
        "mask: {}",
        if t.is_regular_runoff() {
            "regular runoff"
        } else if t.check_upper_left().is_ok() {
            "upper-left justified"
        } else {
            "irregular"
        }
    );
    s.push_str(&mask_picture(&t));
    let bad = nonpositive_cells(&t);
    if bad.is_empty() {
        let _ = writeln!(s, "positivity: all observed values > 0");
    } else {
        let _ = writeln!(s, "positivity: {} non-positive cell(s)", bad.len());
        for b in &bad {
            let _ = writeln!(s, "  {b}");
        }
        if cfg.strict_positivity {
            return Err(input_err(anyhow!(
                "non-positive value at {} (use --lenient to report only, or --allow-epsilon-shift)",
                bad[0]
            )));
        }
    }
    Ok(s)
}

/// Saved fit: the estimate plus everything needed to reuse it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub tool_version: String,
    pub model: ModelName,
    pub recipe_version: String,
    pub response: ResponseKind,
    pub config: RunConfig,
    pub fit: FitResult,
}

#[derive(Debug, Serialize)]
struct ComparisonFile<'a> {
    tool_version: &'a str,
    config: &'a RunConfig,
    recipe_versions: Vec<(ModelName, &'static str)>,
    comparison: &'a ComparisonReport,
}

fn fit_path(dir: &Path, name: ModelName) -> PathBuf {
    dir.join(format!("fit_{}.json", name.to_string().to_lowercase()))
}

fn ensure_out(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(e, dir))
}

fn grid_csv(g: &Grid, t: &Triangle, comment: &str) -> String {
    let mut s = String::new();
    for line in comment.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("origin");
    for l in t.dev_labels() {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for i in 0..g.n_rows {
        let _ = write!(s, "{}", t.origin_labels()[i]);
        for j in 0..g.n_cols {
            match g.get(i, j) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

fn header_comment(cfg: &RunConfig, model: &BuiltModel) -> String {
    format!(
        "ssmreserve {}\nmodel {} ({})\nconfig {}",
        env!("CARGO_PKG_VERSION"),
        model.name,
        model.version,
        serde_json::to_string(cfg).expect("serializable")
    )
}

struct Fitted {
    model: BuiltModel,
    fit: FitResult,
}

fn fit_models(t: &Triangle, cfg: &RunConfig) -> Outcome<Vec<Fitted>> {
    let opts = FitOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let mut out = Vec::new();
    for &name in &cfg.models {
        let model = recipe(name).build(t).map_err(model_err)?;
        let fit = model
            .fit(&opts)
            .with_context(|| format!("fitting {name}"))
            .map_err(numeric_err)?;
        out.push(Fitted { model, fit });
    }
    Ok(out)
}

fn load_fits(dir: &Path, t: &Triangle, cfg: &RunConfig) -> Outcome<Vec<Fitted>> {
    let mut out = Vec::new();
    for &name in &cfg.models {
        let path = fit_path(dir, name);
        let text = fs::read_to_string(&path).map_err(|e| io_err(e, &path))?;
        let file: FitFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(input_err)?;
        let model = recipe(name).build(t).map_err(model_err)?;
        if file.recipe_version != model.version {
            return Err(input_err(anyhow!(
                "{} was written by recipe {}, this build has {}",
                path.display(),
                file.recipe_version,
                model.version
            )));
        }
        if file.fit.theta.len() != model.map.q() || file.fit.n_obs != model.series.n_observed() {
            return Err(input_err(anyhow!("{} does not match this triangle", path.display())));
        }
        out.push(Fitted { model, fit: file.fit });
    }
    Ok(out)
}

fn fits_for(args: &CommonArgs, t: &Triangle, cfg: &RunConfig) -> Outcome<Vec<Fitted>> {
    match &args.fits {
        Some(dir) => load_fits(dir, t, cfg),
        None => fit_models(t, cfg),
    }
}

fn comparison_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("response,rank,model,bic,aic,loglik,q,n_eff\n");
    for g in &report.groups {
        for (k, m) in g.ranking.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:?},{},{},{},{},{},{},{}",
                g.response,
                k + 1,
                m.name,
                m.bic,
                m.aic,
                m.loglik,
                m.q,
                m.n_eff
            );
        }
    }
    if let Some(r) = &report.refusal {
        let _ = writeln!(s, "# {r}");
    }
    s
}

pub fn cmd_fit(args: &CommonArgs, cfg: &RunConfig) -> Outcome<String> {
    let t = load_triangle(&args.input, cfg, cfg.strict_positivity)?;
    ensure_out(&args.out)?;
    let opts = FitOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let mut stdout = String::new();
    let mut scores = Vec::new();
    let mut first_failure = None;
    for &name in &cfg.models {
        let model = recipe(name).build(&t).map_err(model_err)?;
        let fit = match model.fit(&opts) {
            Ok(f) => f,
            Err(e) => {
                // keep going so the other models' outputs are still written
                let _ = writeln!(stdout, "model {name}: fit failed: {e}");
                first_failure.get_or_insert(numeric_err(anyhow!(e).context(format!("fitting {name}"))));
                continue;
            }
        };
        stdout.push_str(&fit.report(&name.to_string()));
        scores.push(ModelScore::from_fit(name.to_string(), model.series.response_kind, &fit));

        let spec = model.spec_at(&fit.theta).map_err(numeric_err)?;
        let sm = kalman::smooth(&spec, &model.observations()).map_err(numeric_err)?;
        let predicted = model.series.to_grid(&sm.prediction_means()).map_err(numeric_err)?;
        let comment = header_comment(cfg, &model);
        let stem = name.to_string().to_lowercase();
        write_file(
            &args.out.join(format!("predicted_{stem}.csv")),
            &grid_csv(&predicted.grid, &t, &format!("{comment}\nscale {:?}", predicted.kind)),
        )?;
        let completed = reconstruct_incremental(&predicted, &t).map_err(numeric_err)?;
        write_file(
            &args.out.join(format!("completed_{stem}.csv")),
            &grid_csv(&completed.grid(), &t, &format!("{comment}\nscale incremental")),
        )?;
        let file = FitFile {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            model: name,
            recipe_version: model.version.into(),
            response: model.series.response_kind,
            config: cfg.clone(),
            fit,
        };
        write_file(&fit_path(&args.out, name), &to_json(&file))?;
    }
    let report = compare(&scores);
    stdout.push_str(&comparison_text(&report));
    let path = args.out.join(match cfg.format {
        Format::Json => "comparison.json",
        Format::Csv => "comparison.csv",
    });
    let body = match cfg.format {
        Format::Json => to_json(&ComparisonFile {
            tool_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            recipe_versions: cfg.models.iter().map(|&m| (m, recipe(m).version)).collect(),
            comparison: &report,
        }),
        Format::Csv => comparison_csv(&report),
    };
    write_file(&path, &body)?;
    match first_failure {
        Some(f) => Err(f),
        None => Ok(stdout),
    }
}

fn comparison_text(report: &ComparisonReport) -> String {
    let mut s = String::new();
    for g in &report.groups {
        let _ = writeln!(s, "BIC ranking for response {:?}:", g.response);
        for m in &g.ranking {
            let _ = writeln!(s, "  {:<8} BIC {:>12.3}  loglik {:>10.3}  q {}", m.name, m.bic, m.loglik, m.q);
        }
        if let Some(p) = g.preferred() {
            let _ = writeln!(s, "  preferred: {}", p.name);
        }
    }
    if let Some(r) = &report.refusal {
        let _ = writeln!(s, "note: {r}");
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct ReserveLine {
    method: String,
    recipe_version: Option<&'static str>,
    reserve: f64,
    std_error: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ReserveFile<'a> {
    tool_version: &'a str,
    config: &'a RunConfig,
    reserves: &'a [ReserveLine],
    chain_ladder: Option<ClSummary>,
}

fn chain_ladder(t: &Triangle) -> Outcome<ChainLadderResult> {
    cl_fit(t)
        .context("Chain-Ladder benchmark")
        .map_err(numeric_err)
}

pub fn cmd_reserve(args: &CommonArgs, cfg: &RunConfig) -> Outcome<String> {
    let t = load_triangle(&args.input, cfg, cfg.strict_positivity)?;
    ensure_out(&args.out)?;
    let fits = fits_for(args, &t, cfg)?;
    let mut lines = Vec::new();
    for f in &fits {
        let r = point_reserve(&f.model, &f.fit.theta, &t).map_err(sim_err)?;
        lines.push(ReserveLine {
            method: f.model.name.to_string(),
            recipe_version: Some(f.model.version),
            reserve: r,
            std_error: None,
        });
    }
    let cl = chain_ladder(&t)?;
    let summary = cl.summary();
    lines.push(ReserveLine {
        method: "Chain-Ladder".into(),
        recipe_version: None,
        reserve: cl.total_reserve,
        std_error: summary.as_ref().map(|s| s.std_error),
    });

    let mut stdout = String::from("method        reserve\n");
    for l in &lines {
        let _ = write!(stdout, "{:<12} {:>16.2}", l.method, l.reserve);
        if let Some(se) = l.std_error {
            let _ = write!(stdout, "  (Mack SE {se:.2})");
        }
        stdout.push('\n');
    }
    let body = match cfg.format {
        Format::Json => to_json(&ReserveFile {
            tool_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            reserves: &lines,
            chain_ladder: summary,
        }),
        Format::Csv => {
            let mut s = format!(
                "# ssmreserve {}\n# config {}\nmethod,recipe_version,reserve,std_error\n",
                env!("CARGO_PKG_VERSION"),
                serde_json::to_string(cfg).expect("serializable")
            );
            for l in &lines {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    l.method,
                    l.recipe_version.unwrap_or(""),
                    l.reserve,
                    l.std_error.map(|v| v.to_string()).unwrap_or_default()
                );
            }
            s
        }
    };
    write_file(
        &args.out.join(match cfg.format {
            Format::Json => "reserve.json",
            Format::Csv => "reserve.csv",
        }),
        &body,
    )?;
    Ok(stdout)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceLine {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Serialize)]
struct SimulationFile<'a> {
    tool_version: &'a str,
    model: ModelName,
    recipe_version: &'a str,
    config: &'a RunConfig,
    theta: &'a [f64],
    n_draws: usize,
    n_rejected: usize,
    /// Draws include observation noise on the unobserved cells.
    future_noise: bool,
    point_estimate: f64,
    mc_standard_error: f64,
    suggested_reserve: f64,
    summary: &'a Summary,
}

#[derive(Debug, Serialize)]
struct HistogramFile<'a> {
    tool_version: &'a str,
    model: ModelName,
    recipe_version: &'a str,
    config: &'a RunConfig,
    histogram: &'a Histogram,
    reference_lines: &'a [ReferenceLine],
}

fn summary_csv(comment: &str, s: &Summary, point: f64, mc_se: f64) -> String {
    let mut out = String::new();
    for line in comment.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("statistic,value\n");
    let rows = [
        ("n", s.n as f64),
        ("point_estimate", point),
        ("mean", s.mean),
        ("mc_standard_error", mc_se),
        ("stdev", s.stdev),
        ("cv", s.cv),
        ("min", s.min),
        ("q1", s.q1),
        ("median", s.median),
        ("q3", s.q3),
        ("max", s.max),
        ("qrange", s.qrange),
        ("suggested_reserve", s.suggested_reserve()),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    for (p, v) in &s.percentiles {
        let _ = writeln!(out, "p{p},{v}");
    }
    out
}

fn histogram_csv(comment: &str, h: &Histogram, refs: &[ReferenceLine]) -> String {
    let mut out = String::new();
    for line in comment.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for r in refs {
        let _ = writeln!(out, "# reference {} {}", r.label, r.value);
    }
    out.push_str("lower,upper,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{c}", h.edges[k], h.edges[k + 1]);
    }
    out
}

pub fn cmd_simulate(args: &CommonArgs, cfg: &RunConfig) -> Outcome<String> {
    if cfg.n_draws < 100 {
        return Err(input_err(anyhow!("--draws must be at least 100, got {}", cfg.n_draws)));
    }
    let t = load_triangle(&args.input, cfg, cfg.strict_positivity)?;
    ensure_out(&args.out)?;
    let fits = fits_for(args, &t, cfg)?;
    let cl = chain_ladder(&t)?;
    let mut refs = Vec::new();
    if let Some(r) = args.true_reserve {
        refs.push(ReferenceLine {
            label: "true".into(),
            value: r,
        });
    }
    refs.push(ReferenceLine {
        label: "CL".into(),
        value: cl.total_reserve,
    });
    if let Some(s) = cl.summary() {
        refs.push(ReferenceLine {
            label: "CL+SE".into(),
            value: s.reserve_plus_se,
        });
    }

    let opts = ReserveOptions {
        n_draws: cfg.n_draws,
        seed: cfg.seed,
        future_noise: true,
        percentiles: cfg.quantiles.clone(),
        n_bins: DEFAULT_BINS,
    };
    let mut stdout = String::new();
    for f in &fits {
        let name = f.model.name;
        let dist = reserve_distribution(&f.model, &f.fit.theta, &t, &opts)
            .map_err(|e| {
                let f = sim_err(e);
                Failure {
                    error: f.error.context(format!("simulating {name}")),
                    ..f
                }
            })?;
        let stem = name.to_string().to_lowercase();
        let comment = format!(
            "{}\ntheta {}\nfuture_noise {}\nn_rejected {}",
            header_comment(cfg, &f.model),
            serde_json::to_string(&f.fit.theta).expect("serializable"),
            dist.future_noise,
            dist.n_rejected
        );

        let mut draws = String::new();
        for line in comment.lines() {
            let _ = writeln!(draws, "# {line}");
        }
        draws.push_str("draw,reserve\n");
        for (k, v) in dist.draws.iter().enumerate() {
            let _ = writeln!(draws, "{k},{v}");
        }
        write_file(&args.out.join(format!("draws_{stem}.csv")), &draws)?;

        let s = &dist.summary;
        let mc_se = dist.mc_standard_error();
        let (summary_body, hist_body) = match cfg.format {
            Format::Json => (
                to_json(&SimulationFile {
                    tool_version: env!("CARGO_PKG_VERSION"),
                    model: name,
                    recipe_version: f.model.version,
                    config: cfg,
                    theta: &f.fit.theta,
                    n_draws: dist.n_draws,
                    n_rejected: dist.n_rejected,
                    future_noise: dist.future_noise,
                    point_estimate: dist.point_estimate,
                    mc_standard_error: mc_se,
                    suggested_reserve: s.suggested_reserve(),
                    summary: s,
                }),
                to_json(&HistogramFile {
                    tool_version: env!("CARGO_PKG_VERSION"),
                    model: name,
                    recipe_version: f.model.version,
                    config: cfg,
                    histogram: &s.histogram,
                    reference_lines: &refs,
                }),
            ),
            Format::Csv => (
                summary_csv(&comment, s, dist.point_estimate, mc_se),
                histogram_csv(&comment, &s.histogram, &refs),
            ),
        };
        let ext = match cfg.format {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        write_file(&args.out.join(format!("summary_{stem}.{ext}")), &summary_body)?;
        write_file(&args.out.join(format!("histogram_{stem}.{ext}")), &hist_body)?;

        let _ = writeln!(
            stdout,
            "{name}: plug-in {:.2}, mean {:.2} (MC SE {:.2}), sd {:.2}, median {:.2}, Q3 (suggested reserve) {:.2}, CV {:.2}%",
            dist.point_estimate,
            s.mean,
            mc_se,
            s.stdev,
            s.median,
            s.suggested_reserve(),
            100.0 * s.cv
        );
    }
    for r in &refs {
        let _ = writeln!(stdout, "reference {}: {:.2}", r.label, r.value);
    }
    Ok(stdout)
}
