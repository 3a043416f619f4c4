//! `diffpos` command-line tool.
//!
//! Exit status: 0 on success, 2 when a check fails (NotPositive / NonStrict),
//! 1 on any error. Errors are reported as `{"error": kind, "message": ...}`
//! on stdout.

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffpos::config::{Command, RunConfig};
use diffpos::geometry::hilbert_distance;
use diffpos::integrate::{flow, fmt_f64, Input, DEFAULT_STEP};
use diffpos::limitsets::{classify_limit_set, ClassifySettings};
use diffpos::pffield::{pf_field_on_grid, PfSettings};
use diffpos::positivity::{
    check_pointwise_positivity, check_strict_positivity, CheckSettings, StrictSettings, StrictVerdict, Verdict,
};
use diffpos::sampling::sample_states;
use diffpos::svg::Plot;
use diffpos::{Error, StateBox, SystemDef};
use nalgebra::DVector;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "diffpos", version, about = "Differential positivity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Option<Sub>,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Pointwise differential positivity on a state grid.
    Check,
    /// Strict positivity: Hilbert contraction over a horizon.
    Strict,
    /// Perron-Frobenius vectors on a grid.
    PfField,
    /// Classify the omega-limit set of one initial condition.
    Classify,
    /// Integrate one trajectory.
    Simulate,
    /// Pairwise Hilbert distances between tangent vectors.
    Hilbert,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Check => Command::Check,
            Sub::Strict => Command::Strict,
            Sub::PfField => Command::PfField,
            Sub::Classify => Command::Classify,
            Sub::Simulate => Command::Simulate,
            Sub::Hilbert => Command::Hilbert,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// TOML run configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Model parameter, `key=value`; repeatable.
    #[arg(long = "param", global = true, value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Main output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Hilbert-decay CSV for `strict`.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Phase-portrait SVG for `pf-field`, `classify` and `simulate`.
    #[arg(long, global = true)]
    svg: Option<PathBuf>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    step: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Grid resolution, `21` or `21,31`.
    #[arg(long, global = true, value_parser = parse_usizes)]
    grid: Option<::std::vec::Vec<usize>>,
    #[arg(long, global = true, value_parser = parse_floats, allow_hyphen_values = true)]
    box_lo: Option<::std::vec::Vec<f64>>,
    #[arg(long, global = true, value_parser = parse_floats, allow_hyphen_values = true)]
    box_hi: Option<::std::vec::Vec<f64>>,
    #[arg(long, global = true)]
    per_facet: Option<usize>,
    /// Extra quasi-random sample states.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Constant input, comma separated.
    #[arg(long, global = true, value_parser = parse_floats, allow_hyphen_values = true)]
    input: Option<::std::vec::Vec<f64>>,
    #[arg(long, global = true, value_parser = parse_floats, allow_hyphen_values = true)]
    x0: Option<::std::vec::Vec<f64>>,
    #[arg(long, global = true)]
    t_end: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    tail_fraction: Option<f64>,
    #[arg(long, global = true)]
    window: Option<f64>,
    #[arg(long, global = true)]
    pf_tol: Option<f64>,
    #[arg(long, global = true)]
    max_doublings: Option<u32>,
    #[arg(long, global = true)]
    align_tol: Option<f64>,
    /// Base state for `hilbert`.
    #[arg(long, global = true, value_parser = parse_floats, allow_hyphen_values = true)]
    at: Option<::std::vec::Vec<f64>>,
    /// Tangent vector for `hilbert`; repeatable.
    #[arg(long = "vector", global = true, value_parser = parse_floats, allow_hyphen_values = true)]
    vectors: Vec<Vec<f64>>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

fn parse_usizes(s: &str) -> Result<Vec<usize>, String> {
    s.split([',', 'x'])
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a count")))
        .collect()
}

enum Failure {
    Lib(Error),
    Usage(String),
    Io(String),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Lib(e) => e.kind(),
            Failure::Usage(_) => "UsageError",
            Failure::Io(_) => "IoError",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Lib(e) => e.to_string(),
            Failure::Usage(m) | Failure::Io(m) => m.clone(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Run<T> = Result<T, Failure>;

/// Overlays explicit flags on the config file.
fn merge(cli: &Cli) -> Run<RunConfig> {
    let mut c = match &cli.opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let o = &cli.opts;
    if let Some(cmd) = cli.command {
        c.command = Some(cmd.into());
    }
    if let Some(m) = &o.model {
        c.model = Some(m.clone());
        c.system = None;
    }
    for (k, v) in &o.params {
        c.params.insert(k.clone(), *v);
    }
    let s = &mut c.settings;
    macro_rules! overlay {
        ($($f:ident),*) => { $( if o.$f.is_some() { s.$f = o.$f.clone(); } )* };
    }
    overlay!(
        tolerance, step, horizon, grid, box_lo, box_hi, per_facet, samples, seed, input, x0, t_end, t_max,
        tail_fraction, window, pf_tol, max_doublings, align_tol, at
    );
    if !o.vectors.is_empty() {
        s.vectors = Some(o.vectors.clone());
    }
    if o.out.is_some() {
        c.output.out = o.out.clone();
    }
    if o.csv.is_some() {
        c.output.csv = o.csv.clone();
    }
    if o.svg.is_some() {
        c.output.svg = o.svg.clone();
    }
    Ok(c)
}

struct Outcome {
    body: String,
    failed: bool,
    summary: Option<String>,
}

fn emit(path: Option<&Path>, body: &str) -> Run<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, body)?;
        }
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Run<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn input_of(c: &RunConfig, sys: &SystemDef) -> Vec<f64> {
    c.settings.input.clone().unwrap_or_else(|| sys.nominal_input().to_vec())
}

fn grid_of(c: &RunConfig, n: usize, default: usize) -> Run<Vec<usize>> {
    match &c.settings.grid {
        None => Ok(vec![default; n]),
        Some(g) if g.len() == 1 => Ok(vec![g[0]; n]),
        Some(g) if g.len() == n => Ok(g.clone()),
        Some(g) => Err(Failure::Usage(format!("grid has {} entries for a {n}-dimensional system", g.len()))),
    }
}

fn vector_arg(v: Option<&Vec<f64>>, n: usize, what: &str) -> Run<Option<DVector<f64>>> {
    match v {
        None => Ok(None),
        Some(v) if v.len() == n => Ok(Some(DVector::from_column_slice(v))),
        Some(v) => Err(Failure::Usage(format!("{what} has {} entries, expected {n}", v.len()))),
    }
}

/// Deterministic generic starting point: the first Halton point of the region.
fn default_x0(region: &StateBox) -> DVector<f64> {
    region.halton(1, 0).remove(0)
}

fn summary_row(cols: &[(&str, String)]) -> String {
    let head: Vec<String> = cols.iter().map(|(h, _)| format!("{h:<14}")).collect();
    let vals: Vec<String> = cols.iter().map(|(_, v)| format!("{v:<14}")).collect();
    format!("{}\n{}\n", head.join(" ").trim_end(), vals.join(" ").trim_end())
}

fn dispatch(c: &RunConfig, explicit: Option<Format>) -> Run<Outcome> {
    let cmd = c
        .command
        .ok_or_else(|| Failure::Usage("no command given (check, strict, pf-field, classify, simulate, hilbert)".into()))?;
    let sys = c.build_system()?;
    let n = sys.dim();
    let region = c.region(&sys)?;
    let u = input_of(c, &sys);
    let st = &c.settings;
    let seed = st.seed.unwrap_or(0);
    let step = st.step.unwrap_or(DEFAULT_STEP);
    let format = |default: Format| -> Format {
        if let Some(f) = explicit {
            return f;
        }
        match c.output.out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => default,
        }
    };
    let pf = PfSettings {
        window: st.window.unwrap_or(1.0),
        tol: st.pf_tol.unwrap_or(1e-6),
        step,
        max_doublings: st.max_doublings.unwrap_or(10),
    };

    match cmd {
        Command::Check => {
            let states = sample_states(&sys, &region, &grid_of(c, n, 21)?, st.samples.unwrap_or(64))?;
            let mut s = CheckSettings {
                input: Some(u),
                seed,
                ..CheckSettings::default()
            };
            if let Some(t) = st.tolerance {
                s.tolerance = t;
            }
            if let Some(p) = st.per_facet {
                s.per_facet = p;
            }
            let rep = check_pointwise_positivity(&sys, &states, &s)?;
            let body = match format(Format::Json) {
                Format::Json => to_json(&rep)?,
                Format::Csv => {
                    let mut out = String::new();
                    let mut head: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
                    head.extend((1..=n).map(|i| format!("dx_{i}")));
                    head.extend(["facet".to_string(), "rate".to_string()]);
                    out.push_str(&head.join(","));
                    out.push('\n');
                    for w in &rep.witnesses {
                        let mut row: Vec<String> = w.x.iter().chain(&w.dx).map(|v| fmt_f64(*v)).collect();
                        row.push(w.facet.to_string());
                        row.push(fmt_f64(w.rate));
                        out.push_str(&row.join(","));
                        out.push('\n');
                    }
                    out
                }
            };
            Ok(Outcome {
                body,
                failed: rep.verdict == Verdict::NotPositive,
                summary: Some(summary_row(&[
                    ("verdict", format!("{:?}", rep.verdict)),
                    ("samples", rep.samples_checked.to_string()),
                    ("min_margin", format!("{:.3e}", rep.min_margin)),
                    ("witnesses", rep.witnesses.len().to_string()),
                ])),
            })
        }
        Command::Strict => {
            let states = sample_states(&sys, &region, &grid_of(c, n, 7)?, st.samples.unwrap_or(0))?;
            let mut s = StrictSettings {
                input: Some(u),
                seed,
                step,
                ..StrictSettings::default()
            };
            if let Some(h) = st.horizon {
                s.horizon = h;
            }
            if let Some(p) = st.per_facet {
                s.per_facet = p;
            }
            let rep = check_strict_positivity(&sys, &states, &s)?;
            if let Some(p) = &c.output.csv {
                let mut buf = Vec::new();
                rep.write_decay_csv(&mut buf)?;
                emit(Some(p), &String::from_utf8_lossy(&buf))?;
            }
            let body = match format(Format::Json) {
                Format::Json => to_json(&rep)?,
                Format::Csv => {
                    let mut buf = Vec::new();
                    rep.write_decay_csv(&mut buf)?;
                    String::from_utf8_lossy(&buf).into_owned()
                }
            };
            Ok(Outcome {
                body,
                failed: rep.strict_verdict == StrictVerdict::NonStrict,
                summary: Some(summary_row(&[
                    ("verdict", format!("{:?}", rep.strict_verdict)),
                    ("T", format!("{}", rep.horizon)),
                    ("diameter", format!("{:.3e}", rep.diameter_estimate)),
                    ("mu_T", format!("{:.3e}", rep.mu_t)),
                    ("lambda", rep.fitted_lambda.map_or("-".into(), |l| format!("{l:.4}"))),
                ])),
            })
        }
        Command::PfField => {
            let res = grid_of(c, n, 21)?;
            let grid = pf_field_on_grid(&sys, &u, &region, &res, &pf)?;
            if let Some(p) = &c.output.svg {
                let mut plot = Plot::new(&region)?;
                let coarse = sample_states(&sys, &region, &vec![9; n], 0)?;
                plot.cone_glyphs(&sys, &coarse, 14.0, "#999999");
                if let Some(x0) = vector_arg(st.x0.as_ref(), n, "x0")? {
                    let t1 = st.t_end.unwrap_or(40.0);
                    let traj = flow(&sys, &x0, &Input::Constant(u.clone()), (0.0, t1), step)?;
                    plot.polyline(&traj.states, "#1f77b4");
                }
                plot.pf_arrows(&grid, 16.0, "#d62728");
                emit(Some(p), &plot.render())?;
            }
            let body = match format(Format::Csv) {
                Format::Json => to_json(&grid)?,
                Format::Csv => {
                    let mut buf = Vec::new();
                    grid.write_csv(&mut buf)?;
                    String::from_utf8_lossy(&buf).into_owned()
                }
            };
            Ok(Outcome {
                body,
                failed: false,
                summary: Some(summary_row(&[
                    ("cells", grid.cells.len().to_string()),
                    ("converged", format!("{:.3}", grid.success_fraction())),
                ])),
            })
        }
        Command::Classify => {
            let x0 = vector_arg(st.x0.as_ref(), n, "x0")?.unwrap_or_else(|| default_x0(&region));
            let mut s = ClassifySettings {
                step,
                ..ClassifySettings::default()
            };
            if let Some(v) = st.t_max {
                s.t_max = v;
            }
            if let Some(v) = st.tail_fraction {
                s.tail_fraction = v;
            }
            if let Some(v) = st.align_tol {
                s.align_tol = v;
            }
            if let Some(v) = st.pf_tol {
                s.pf.tol = v;
            }
            if let Some(v) = st.window {
                s.pf.window = v;
            }
            s.pf.step = step;
            let cl = classify_limit_set(&sys, &u, &x0, &s)?;
            if let Some(p) = &c.output.svg {
                let mut plot = Plot::new(&region)?;
                plot.polyline(&cl.omega.points, "#1f77b4");
                emit(Some(p), &plot.render())?;
            }
            let body = match format(Format::Json) {
                Format::Json => to_json(&cl.report)?,
                Format::Csv => {
                    let mut out: String = (1..=n).map(|i| format!("x_{i}")).collect::<Vec<_>>().join(",");
                    out.push('\n');
                    for p in &cl.omega.points {
                        out.push_str(&p.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
                        out.push('\n');
                    }
                    out
                }
            };
            let r = &cl.report;
            Ok(Outcome {
                body,
                failed: false,
                summary: Some(summary_row(&[
                    ("verdict", format!("{:?}", r.verdict)),
                    ("period", r.period.map_or("-".into(), |p| format!("{p:.6}"))),
                    ("alignment", r.alignment_max.map_or("-".into(), |a| format!("{a:.3e}"))),
                    ("diameter", format!("{:.4}", r.cloud_diameter)),
                ])),
            })
        }
        Command::Simulate => {
            let x0 = vector_arg(st.x0.as_ref(), n, "x0")?.unwrap_or_else(|| default_x0(&region));
            let t1 = st.t_end.unwrap_or(20.0);
            let traj = flow(&sys, &x0, &Input::Constant(u), (0.0, t1), step)?;
            if let Some(p) = &c.output.svg {
                let mut plot = Plot::new(&region)?;
                plot.polyline(&traj.states, "#1f77b4");
                emit(Some(p), &plot.render())?;
            }
            let body = match format(Format::Csv) {
                Format::Json => to_json(&traj)?,
                Format::Csv => {
                    let mut buf = Vec::new();
                    traj.write_csv(&mut buf)?;
                    String::from_utf8_lossy(&buf).into_owned()
                }
            };
            Ok(Outcome {
                body,
                failed: false,
                summary: None,
            })
        }
        Command::Hilbert => {
            let at = vector_arg(st.at.as_ref(), n, "at")?.unwrap_or_else(|| {
                DVector::from_iterator(n, region.lo.iter().zip(&region.hi).map(|(a, b)| 0.5 * (a + b)))
            });
            let vs: Vec<DVector<f64>> = st
                .vectors
                .clone()
                .unwrap_or_default()
                .iter()
                .map(|v| vector_arg(Some(v), n, "vector").map(|v| v.unwrap()))
                .collect::<Run<_>>()?;
            if vs.len() < 2 {
                return Err(Failure::Usage("hilbert needs at least two --vector arguments".into()));
            }
            let cone = sys.cone_field().cone_at(&at)?;
            let mut table = vec![vec![0.0; vs.len()]; vs.len()];
            for i in 0..vs.len() {
                for j in i + 1..vs.len() {
                    let d = hilbert_distance(&cone, &vs[i], &vs[j])?.value;
                    table[i][j] = d;
                    table[j][i] = d;
                }
            }
            let cell = |d: f64| if d.is_finite() { json!(d) } else { json!("inf") };
            let body = match format(Format::Json) {
                Format::Json => to_json(&json!({
                    "at": at.as_slice(),
                    "vectors": vs.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
                    "distances": table.iter().map(|r| r.iter().map(|d| cell(*d)).collect::<Vec<Value>>()).collect::<Vec<_>>(),
                }))?,
                Format::Csv => {
                    let mut out = String::from("i,j,distance\n");
                    for (i, row) in table.iter().enumerate() {
                        for (j, d) in row.iter().enumerate() {
                            out.push_str(&format!("{i},{j},{}\n", fmt_f64(*d)));
                        }
                    }
                    out
                }
            };
            Ok(Outcome {
                body,
                failed: false,
                summary: None,
            })
        }
    }
}

fn run(cli: &Cli) -> Run<bool> {
    let c = merge(cli)?;
    let out = dispatch(&c, cli.opts.format)?;
    emit(c.output.out.as_deref(), &out.body)?;
    if let Some(s) = out.summary {
        eprint!("{s}");
    }
    Ok(out.failed)
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let env = json!({ "error": kind, "message": message });
    println!("{env}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("UsageError", e.to_string().lines().next().unwrap_or("invalid arguments"));
        }
    };
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(f) => fail(f.kind(), &f.message()),
    }
}
