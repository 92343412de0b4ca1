//! `vfreg`: norms, coordinate improvement and chart experiments from the
//! command line.
//!
//! Exit codes: 0 ok, 1 numeric failure or failed check, 2 usage or I/O.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use vfreg::charts::{self, CuspFrame, FlowOptions, GridFrame};
use vfreg::exterior::{self, interp};
use vfreg::fields::{read_zygf, write_zygf, Zygf};
use vfreg::pipeline::{self, ComparisonOptions, ImproveConfig, ManufacturedCoframe, RunManifest};
use vfreg::spectral::{fit_exponent_many, norm_dyadic, norm_negative, RegularityReport};
use vfreg::{acceptance, Frame, GridSpec, ScalarField};

use output::{write_csv, write_json};

#[derive(Parser)]
#[command(name = "vfreg", version, about = "Regularity of rough vector fields under changes of coordinates")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recorded in manifests; every command is deterministic given its inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with default values for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dyadic norm and fitted exponent of a ZYGF field.
    Estimate(EstimateArgs),
    /// Scale a coframe to small data and improve its coordinates.
    Improve(ImproveArgs),
    /// Canonical coordinates of a frame and its pulled-back coefficients.
    Canonical(CanonicalArgs),
    /// Canonical profile of the cusp frame, and its canonical/harmonic comparison.
    Example(ExampleArgs),
    /// Run the acceptance criteria.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Order of the norm; negative orders use the divergence witness.
    #[arg(long, allow_negative_numbers = true)]
    s: Option<f64>,
    /// Fit window as `lo,hi`.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `(j, log2 block norm)` pairs.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ImproveArgs {
    /// Frame file; the coframe is its dual.
    #[arg(long, conflicts_with = "manufactured")]
    frame: Option<PathBuf>,
    /// Use the built-in test coframe at this amplitude instead of a file.
    #[arg(long)]
    manufactured: Option<f64>,
    /// With `--manufactured`: the rough control, `dλ` as rough as `λ`.
    #[arg(long)]
    control: bool,
    /// Grid size for `--manufactured`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Smallness to reach before solving.
    #[arg(long)]
    target: Option<f64>,
    /// Initial scale of the search.
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the output coefficients `B` as a ZYGF matrix.
    #[arg(long)]
    output_coefficients: Option<PathBuf>,
}

#[derive(Args)]
struct CanonicalArgs {
    #[arg(long)]
    frame: PathBuf,
    /// Base point as `x,y[,z]`.
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Pulled-back coefficients `Φ^*X_i - ∂_i` as a ZYGF matrix.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid size of the canonical/harmonic comparison.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Only the profile table.
    #[arg(long)]
    no_compare: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Comma-separated criterion numbers.
    #[arg(long)]
    only: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Values a config file may supply.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    threads: Option<usize>,
    seed: Option<u64>,
    s: Option<f64>,
    window: Option<String>,
    n: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    target: Option<f64>,
    mu0: Option<f64>,
    point: Option<String>,
    radius: Option<f64>,
    step: Option<f64>,
    points: Option<usize>,
}

/// A failed check rather than a broken run: exit code 1.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// An error raised after the inputs were accepted.
#[derive(Debug)]
struct StageFailed {
    stage: &'static str,
    source: vfreg::Error,
}

impl std::fmt::Display for StageFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageFailed {}

fn stage(name: &'static str) -> impl Fn(vfreg::Error) -> anyhow::Error {
    move |source| anyhow!(StageFailed { stage: name, source })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<CheckFailed>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<StageFailed>() {
            return if matches!(e.source, vfreg::Error::Io(_) | vfreg::Error::Format(_)) { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<vfreg::Error>() {
            return if e.is_numeric() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg: Config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| anyhow!(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("config {}: {e}", p.display()))))?
        }
        None => Config::default(),
    };
    if let Some(t) = cli.threads.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let seed = cli.seed.or(cfg.seed);
    match cli.command {
        Command::Estimate(a) => estimate(a, &cfg),
        Command::Improve(a) => improve(a, &cfg, seed),
        Command::Canonical(a) => canonical(a, &cfg, seed),
        Command::Example(a) => example(a, &cfg),
        Command::Selftest(a) => selftest(a),
    }
}

fn usage(msg: String) -> anyhow::Error {
    anyhow!(std::io::Error::new(std::io::ErrorKind::InvalidInput, msg))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> anyhow::Result<Vec<T>> {
    text.split(',').map(|p| p.trim().parse().map_err(|_| usage(format!("bad {what}: {text}")))).collect()
}

fn parse_window(text: Option<&str>) -> anyhow::Result<Option<(usize, usize)>> {
    text.map(|w| match parse_list::<usize>(w, "window")?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(usage(format!("window needs two values, got {w}"))),
    })
    .transpose()
}

fn components(obj: &Zygf<f64>) -> Vec<ScalarField> {
    match obj {
        Zygf::Scalar(f) => vec![f.clone()],
        Zygf::Form(w) => w.components().to_vec(),
        Zygf::Frame(fr) => fr.fields().iter().flat_map(|v| v.components().to_vec()).collect(),
        Zygf::Matrix(m) => m.entries().to_vec(),
    }
}

fn read_frame(path: &Path) -> anyhow::Result<Frame> {
    match read_zygf::<f64>(path).with_context(|| format!("reading {}", path.display()))? {
        Zygf::Frame(f) => Ok(f),
        _ => Err(anyhow!(vfreg::Error::Format(format!("{} does not hold a frame", path.display())))),
    }
}

fn estimate(a: EstimateArgs, cfg: &Config) -> anyhow::Result<()> {
    let s = a.s.or(cfg.s).ok_or_else(|| usage("--s is required".into()))?;
    let window = parse_window(a.window.as_deref().or(cfg.window.as_deref()))?;
    let obj = read_zygf::<f64>(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let comps = components(&obj);
    let mut norm = 0.0;
    for c in &comps {
        norm += if s < 0.0 { norm_negative(c, s)?.value } else { norm_dyadic(c, s)? };
    }
    let report: RegularityReport = fit_exponent_many(&comps, window)?;
    let doc = json!({
        "input": a.input.display().to_string(),
        "s": s,
        "norm": norm,
        "exponent": report.exponent,
        "report": report,
    });
    emit_json(&doc, a.out.as_deref())?;
    if let Some(p) = &a.csv {
        let rows: Vec<Vec<String>> = report.block_norms.iter().enumerate().map(|(j, b)| vec![j.to_string(), output::float(b.log2())]).collect();
        write_csv(p, &["j", "log2_block_norm"], &rows)?;
    }
    Ok(())
}

fn emit_json(doc: &serde_json::Value, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => write_json(p, doc),
        None => {
            println!("{}", output::to_json(doc));
            Ok(())
        }
    }
}

fn improve(a: ImproveArgs, cfg: &Config, seed: Option<u64>) -> anyhow::Result<()> {
    let alpha = a.alpha.or(cfg.alpha).unwrap_or(0.6);
    let beta = a.beta.or(cfg.beta).unwrap_or(1.4);
    let mut icfg = ImproveConfig::new(alpha, beta)?;
    if let Some(t) = a.target.or(cfg.target) {
        icfg.target = t;
    }
    let mu0 = a.mu0.or(cfg.mu0);
    let (source, run) = match (&a.frame, a.manufactured) {
        (Some(path), _) => {
            let frame = read_frame(path)?;
            let spec = frame.spec().clone();
            let coframe = exterior::dual_coframe(&frame).map_err(stage("dual coframe"))?;
            let n = spec.ndim();
            let entries: Vec<ScalarField> = (0..n * n).map(|e| coframe[e / n].components()[e % n].clone()).collect();
            let theta = move |x: &[f64]| entries.iter().map(|c| interp(c, x)).collect::<Vec<f64>>();
            (path.display().to_string(), pipeline::improve_scaled(theta, &spec, &icfg, mu0.unwrap_or(1.0)).map_err(stage("improve"))?)
        }
        (None, Some(amp)) => {
            let spec = GridSpec::cube(2, a.n.or(cfg.n).unwrap_or(512), 2.0)?;
            let theta = ManufacturedCoframe::new(amp, a.control);
            let label = format!("manufactured amplitude {amp}{}", if a.control { " (control)" } else { "" });
            (label, pipeline::improve_scaled(move |x: &[f64]| theta.eval(x), &spec, &icfg, mu0.unwrap_or(0.5)).map_err(stage("improve"))?)
        }
        (None, None) => return Err(usage("improve needs --frame or --manufactured".into())),
    };
    let (scaled, out) = run;
    let mut outputs = vec![];
    if let Some(p) = &a.output_coefficients {
        write_zygf(p, &Zygf::Matrix(out.b.clone())).with_context(|| format!("writing {}", p.display()))?;
        outputs.push(p.display().to_string());
    }
    if let Some(p) = &a.out {
        outputs.push(p.display().to_string());
    }
    let manifest = RunManifest {
        command: "improve".into(),
        config: serde_json::to_value(icfg)?,
        seed,
        inputs: vec![source],
        outputs,
        telemetry: json!({
            "kappa": scaled.kappa,
            "scaling_history": scaled.history,
            "stages": out.telemetry,
        }),
        reports: json!({
            "input": out.input_report,
            "output": out.output_report,
            "gain": out.gain(),
            "estimate_lhs": out.estimate_lhs(&icfg)?,
        }),
        passed: Some(out.meets_expected_gain(&icfg)),
    };
    emit_json(&serde_json::to_value(&manifest)?, a.out.as_deref())?;
    if manifest.passed == Some(false) {
        bail!(CheckFailed(format!("stage gain: exponent gain {:?} short of 0.8(β - α) - 0.15 with β - α = {}", out.gain(), beta - alpha)));
    }
    Ok(())
}

fn canonical(a: CanonicalArgs, cfg: &Config, seed: Option<u64>) -> anyhow::Result<()> {
    let frame = read_frame(&a.frame)?;
    let spec = frame.spec().clone();
    let n = spec.ndim();
    let point = match a.point.as_deref().or(cfg.point.as_deref()) {
        Some(p) => parse_list::<f64>(p, "point")?,
        None => vec![0.0; n],
    };
    if point.len() != n {
        bail!(usage(format!("point has {} coordinates in dimension {n}", point.len())));
    }
    let radius = a.radius.or(cfg.radius).unwrap_or(0.5);
    let mut opts = FlowOptions { bound: spec.half_width(), ..FlowOptions::default() };
    if let Some(step) = a.step.or(cfg.step) {
        opts.step = step;
    }
    let rule = GridFrame(&frame);
    let chart = charts::canonical_chart(&rule, &point, radius, &spec, &opts).map_err(stage("chart"))?;
    let coeffs = charts::chart_coefficients(&chart, &rule).map_err(stage("coefficients"))?;
    let window: Vec<ScalarField> = coeffs.entries().iter().map(|c| ScalarField::from_fn(&spec, |i| c.get(i) * pipeline::measurement_window(spec.radius(i), 0.9 * radius))).collect();
    let report = fit_exponent_many(&window, None)?;
    let mut outputs = vec![];
    if let Some(p) = &a.out {
        write_zygf(p, &Zygf::Matrix(coeffs)).with_context(|| format!("writing {}", p.display()))?;
        outputs.push(p.display().to_string());
    }
    let manifest = RunManifest {
        command: "canonical".into(),
        config: json!({ "point": point, "radius": radius, "flow": opts }),
        seed,
        inputs: vec![a.frame.display().to_string()],
        outputs,
        telemetry: json!({}),
        reports: json!({ "coefficients": report }),
        passed: None,
    };
    emit_json(&serde_json::to_value(&manifest)?, a.report.as_deref())
}

fn example(a: ExampleArgs, cfg: &Config) -> anyhow::Result<()> {
    let alpha = a.alpha.or(cfg.alpha).unwrap_or(1.0);
    let points = a.points.or(cfg.points).unwrap_or(100);
    if !(alpha > 0.0) || points == 0 {
        bail!(usage(format!("need α > 0 and at least one point, got α = {alpha}, {points} points")));
    }
    let frame = CuspFrame { alpha };
    let c = charts::canonical_series_coefficient(alpha);
    let mut rows = vec![];
    for k in 1..=points {
        let s = k as f64 / points as f64;
        let flowed = charts::flow(&frame, &[0.0, 0.0], &[1.0, s], &FlowOptions::default()).map_err(stage("flow"))?[0];
        rows.push(vec![output::float(s), output::float(flowed), output::float(charts::canonical_profile(alpha, s)), output::float(1.0 + c * s.powf(alpha))]);
    }
    let header = ["s", "g_flow", "g_closed_form", "series"];
    match &a.out {
        Some(p) => write_csv(p, &header, &rows)?,
        None => print!("{}", output::csv_text(&header, &rows)),
    }
    if !a.no_compare {
        let spec = GridSpec::cube(2, a.n.or(cfg.n).unwrap_or(256), 2.0)?;
        let r = pipeline::canonical_vs_harmonic(alpha, &spec, &ComparisonOptions::default()).map_err(stage("comparison"))?;
        let doc = serde_json::to_value(&r)?;
        match &a.report {
            Some(p) => write_json(p, &doc)?,
            None => eprintln!(
                "canonical exponent {:?}, harmonic exponent {:?}, closed-form error {:.3e}",
                r.canonical.exponent, r.harmonic.exponent, r.closed_form_error
            ),
        }
    }
    Ok(())
}

fn selftest(a: SelftestArgs) -> anyhow::Result<()> {
    let ids: Vec<usize> = match &a.only {
        Some(list) => parse_list(list, "criterion list")?,
        None => (1..=acceptance::COUNT).collect(),
    };
    if let Some(bad) = ids.iter().find(|&&i| !(1..=acceptance::COUNT).contains(&i)) {
        bail!(usage(format!("no criterion {bad}")));
    }
    let outcomes: Vec<_> = ids.iter().map(|&i| {
        let o = acceptance::run(i);
        println!("{}", o.line());
        o
    }).collect();
    if let Some(p) = &a.out {
        write_json(p, &serde_json::to_value(&outcomes)?)?;
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!(CheckFailed(format!("criteria failing: {}", failed.join(", ")))))
    }
}
