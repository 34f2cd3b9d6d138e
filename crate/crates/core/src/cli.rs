//! Command-line surface: policy documents, rendering and the subcommands
//! `simulate`, `fit`, `eval`, `render` and `oracle`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bnp::{exhaustive_optimum, fit, BnPConfig, FitResult};
use crate::data::{load_csv, Dataset, Hyperbox, Label, Policy, DEFAULT_SPAN_GUARD};
use crate::error::{Error, Result};
use crate::eval::{empirical_objective, policy_value_mc_se, regret_se, EvalReport};
use crate::nuisance::{exact_nuisance, NuisanceModel};
use crate::scores::{compute_scores, scale_scores, Method, ScoreVector};
use crate::simgen::{generate, Scenario};

pub const FORMAT_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NO_INCUMBENT: i32 = 3;

/// Largest lattice `render --format grid` will emit.
const GRID_GUARD: usize = 1_000_000;

/// Serialized form of a learned policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub format_version: u32,
    pub d: usize,
    pub method: String,
    pub m_max: usize,
    pub omega: f64,
    pub flipped: bool,
    pub objective: f64,
    pub boxes: Vec<Hyperbox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<String>>,
    /// Bounding box of the training covariates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_range: Option<Hyperbox>,
    /// Nuisance specification used for the scores, e.g. `kernel+logistic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_psi: Option<bool>,
}

impl PolicyDocument {
    pub fn policy(&self) -> Policy {
        Policy::new(self.boxes.clone(), self.flipped)
    }

    pub fn method(&self) -> Result<Method> {
        self.method.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Invalid(format!("unsupported format_version {}", self.format_version)));
        }
        self.method()?;
        if !self.omega.is_finite() || self.omega < 0.0 {
            return Err(Error::Invalid("omega must be finite and non-negative".into()));
        }
        let boxes = self.boxes.iter().chain(self.observed_range.iter());
        for b in boxes {
            if b.lower.len() != self.d || b.upper.len() != self.d {
                return Err(Error::Dimension { expected: self.d, got: b.lower.len().max(b.upper.len()) });
            }
            Hyperbox::new(b.lower.clone(), b.upper.clone())?;
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.d {
                return Err(Error::Dimension { expected: self.d, got: names.len() });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<PolicyDocument> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<PolicyDocument> {
        let text = std::fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        PolicyDocument::from_json(&text)
    }

    fn feature(&self, t: usize) -> String {
        match &self.feature_names {
            Some(names) => names[t].clone(),
            None => format!("x{t}"),
        }
    }

    /// Printed decisions `(inside a box, fallback)`.
    fn decisions(&self) -> (&'static str, &'static str) {
        if self.flipped {
            ("-1", "+1")
        } else {
            ("+1", "-1")
        }
    }

    /// Conjunction for one box; dimensions covering the observed range are
    /// left out.
    fn clause(&self, b: &Hyperbox) -> String {
        let parts: Vec<String> = (0..self.d)
            .filter(|&t| match &self.observed_range {
                Some(r) => !(b.lower[t] <= r.lower[t] && b.upper[t] >= r.upper[t]),
                None => true,
            })
            .map(|t| format!("{} in [{}, {}]", self.feature(t), two_decimals(b.lower[t]), two_decimals(b.upper[t])))
            .collect();
        if parts.is_empty() {
            "TRUE".to_string()
        } else {
            parts.join(" AND ")
        }
    }
}

/// Two decimals without a negative zero.
fn two_decimals(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// IF / ELSE IF rule list, one block per box.
pub fn render_text(doc: &PolicyDocument) -> String {
    let (inside, fallback) = doc.decisions();
    let mut out = String::new();
    if doc.boxes.is_empty() {
        writeln!(out, "ALWAYS: assign {fallback}").unwrap();
        return out;
    }
    for (k, b) in doc.boxes.iter().enumerate() {
        let kw = if k == 0 { "IF" } else { "ELSE IF" };
        writeln!(out, "{kw} {} THEN {inside}", doc.clause(b)).unwrap();
    }
    writeln!(out, "ELSE {fallback}").unwrap();
    out
}

/// Chain graph in DOT syntax: `rule_1 .. rule_k` test the boxes in order,
/// `treat` and `fallback` are the terminal decisions.
pub fn render_dot(doc: &PolicyDocument) -> String {
    let (inside, fallback) = doc.decisions();
    let mut out = String::from("digraph policy {\n  rankdir=TB;\n");
    let k = doc.boxes.len();
    for (j, b) in doc.boxes.iter().enumerate() {
        writeln!(out, "  rule_{} [shape=box, label=\"{}\"];", j + 1, dot_escape(&doc.clause(b))).unwrap();
    }
    if k > 0 {
        writeln!(out, "  treat [shape=ellipse, label=\"{inside}\"];").unwrap();
    }
    writeln!(out, "  fallback [shape=ellipse, label=\"{fallback}\"];").unwrap();
    for j in 1..=k {
        let next = if j == k { "fallback".to_string() } else { format!("rule_{}", j + 1) };
        writeln!(out, "  rule_{j} -> treat [label=\"yes\"];").unwrap();
        writeln!(out, "  rule_{j} -> {next} [label=\"no\"];").unwrap();
    }
    out.push_str("}\n");
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// CSV of decisions on a regular lattice with `resolution` points per axis
/// over the observed range (or `[-1, 1]^d` when unknown).
pub fn render_grid(doc: &PolicyDocument, resolution: usize) -> Result<String> {
    if resolution < 2 {
        return Err(Error::Invalid("grid resolution must be at least 2".into()));
    }
    let total = (resolution as u128).checked_pow(doc.d as u32).unwrap_or(u128::MAX);
    if total > GRID_GUARD as u128 {
        return Err(Error::GuardExceeded { size: total, guard: GRID_GUARD as u128 });
    }
    let (lo, hi) = match &doc.observed_range {
        Some(r) => (r.lower.clone(), r.upper.clone()),
        None => (vec![-1.0; doc.d], vec![1.0; doc.d]),
    };
    let policy = doc.policy();
    let mut out = String::new();
    let header: Vec<String> = (0..doc.d).map(|t| doc.feature(t)).collect();
    writeln!(out, "{},decision", header.join(",")).unwrap();
    let mut idx = vec![0usize; doc.d];
    for _ in 0..total {
        let x: Vec<f64> = (0..doc.d)
            .map(|t| lo[t] + (hi[t] - lo[t]) * idx[t] as f64 / (resolution - 1) as f64)
            .collect();
        for v in &x {
            write!(out, "{v},").unwrap();
        }
        writeln!(out, "{}", policy.decide(&x).as_i8()).unwrap();
        for t in (0..doc.d).rev() {
            idx[t] += 1;
            if idx[t] < resolution {
                break;
            }
            idx[t] = 0;
        }
    }
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(name = "boxpolicy", version, about = "Learn and inspect union-of-boxes treatment policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a named scenario.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a policy by branch-and-price.
    Fit {
        #[command(flatten)]
        input: ScoreArgs,
        #[arg(long, default_value_t = 0.0)]
        penalty: f64,
        #[arg(long)]
        flip: bool,
        #[arg(long, default_value_t = 50)]
        max_bnb_iters: usize,
        #[arg(long, default_value_t = 180.0)]
        pricing_time_limit: f64,
        #[arg(long, default_value_t = 30.0)]
        milp_time_limit: f64,
        #[arg(long, default_value_t = 10_000)]
        milp_node_limit: usize,
        /// Wall-clock budget of the whole fit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        /// Policy document whose boxes seed the search.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Comma-separated covariate names stored in the document.
        #[arg(long, value_delimiter = ',')]
        feature_names: Option<Vec<String>>,
        /// Print per-node records as JSON lines on stderr.
        #[arg(long)]
        progress: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a policy on data and/or a simulated scenario.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        zero_one_labels: bool,
        /// Overrides the nuisance recorded in the document.
        #[arg(long)]
        nuisance: Option<String>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a policy document as rules, a graph, JSON or a decision grid.
    Render {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Lattice points per axis for `--format grid`.
        #[arg(long, default_value_t = 21)]
        resolution: usize,
    },
    /// Exhaustive search over unions of data-spanned boxes (small n only).
    Oracle {
        #[command(flatten)]
        input: ScoreArgs,
        #[arg(long, default_value_t = 0.0)]
        penalty: f64,
        #[arg(long)]
        flip: bool,
    },
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    max_boxes: usize,
    #[arg(long)]
    scale_psi: bool,
    /// `kernel+logistic` or `exact:<scenario>`.
    #[arg(long, default_value = "kernel+logistic")]
    nuisance: String,
    #[arg(long)]
    zero_one_labels: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Dm,
    Ips,
    Dr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Dm => Method::Dm,
            MethodArg::Ips => Method::Ips,
            MethodArg::Dr => Method::Dr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Dot,
    Json,
    Grid,
}

/// Builds the nuisance model named by `spec`.
pub fn nuisance_from_spec(spec: &str, dataset: &Dataset) -> Result<NuisanceModel> {
    match spec.split_once(':') {
        Some(("exact", scenario)) => exact_nuisance(scenario),
        None if spec == "kernel+logistic" => NuisanceModel::fit(dataset),
        _ => Err(Error::Invalid(format!("unknown nuisance `{spec}`"))),
    }
}

/// Scores for `dataset` under the given method and nuisance specification.
pub fn scores_for(dataset: &Dataset, method: Method, nuisance: &str, scale: bool) -> Result<ScoreVector> {
    let model = nuisance_from_spec(nuisance, dataset)?;
    let scores = compute_scores(dataset, &model, method)?;
    if scale {
        scale_scores(&scores)
    } else {
        Ok(scores)
    }
}

/// Document describing a finished fit.
pub fn document_from_fit(
    dataset: &Dataset,
    result: &FitResult,
    method: Method,
    config: &BnPConfig,
    nuisance: &str,
    scale_psi: bool,
    feature_names: Option<Vec<String>>,
) -> PolicyDocument {
    PolicyDocument {
        format_version: FORMAT_VERSION,
        d: dataset.d(),
        method: method.id().to_string(),
        m_max: config.m_max,
        omega: config.omega,
        flipped: result.policy.flipped,
        objective: result.objective,
        boxes: result.policy.boxes.clone(),
        feature_names,
        observed_range: Some(dataset.bounding_box()),
        nuisance: Some(nuisance.to_string()),
        scale_psi: Some(scale_psi),
    }
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    if path.as_os_str() == "-" {
        print!("{text}");
        std::io::stdout().flush().map_err(|source| io_err(path, source))
    } else {
        std::fs::write(path, text).map_err(|source| io_err(path, source))
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoIncumbent => EXIT_NO_INCUMBENT,
        _ => EXIT_DATA,
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main_exit_code() -> i32 {
    run(std::env::args_os())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { scenario, n, seed, out } => {
            let sc: Scenario = scenario.parse()?;
            let ds = generate(sc, n, seed)?;
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).map_err(|source| io_err(&out, source))?;
            write_output(&out, &String::from_utf8(buf).expect("csv is utf-8"))
        }
        Command::Fit {
            input,
            penalty,
            flip,
            max_bnb_iters,
            pricing_time_limit,
            milp_time_limit,
            milp_node_limit,
            time_limit,
            warm_start,
            feature_names,
            progress,
            out,
        } => {
            let dataset = load_csv(&input.data, input.zero_one_labels)?;
            let warm_start = match warm_start {
                Some(path) => {
                    let doc = PolicyDocument::load(&path)?;
                    if doc.flipped != flip {
                        return Err(Error::Invalid("warm start and fit disagree on --flip".into()));
                    }
                    doc.boxes
                }
                None => Vec::new(),
            };
            let method: Method = input.method.into();
            let scores = scores_for(&dataset, method, &input.nuisance, input.scale_psi)?;
            let config = BnPConfig {
                m_max: input.max_boxes,
                omega: penalty,
                max_nodes: max_bnb_iters,
                pricing_time_limit,
                milp_time_limit,
                milp_node_limit,
                flip,
                warm_start,
                time_limit: time_limit.unwrap_or(f64::INFINITY),
                ..BnPConfig::default()
            };
            if let Some(names) = &feature_names {
                if names.len() != dataset.d() {
                    return Err(Error::Dimension { expected: dataset.d(), got: names.len() });
                }
            }
            let result = fit(&dataset, &scores, &config)?;
            if progress {
                for rec in &result.progress {
                    eprintln!("{}", serde_json::to_string(rec)?);
                }
            }
            let doc = document_from_fit(&dataset, &result, method, &config, &input.nuisance, input.scale_psi, feature_names);
            write_output(&out, &doc.to_json())?;
            let summary = serde_json::json!({
                "objective": result.objective,
                "penalized_objective": result.penalized_objective,
                "relaxation_bound": result.relaxation_bound,
                "boxes": result.policy.boxes.len(),
                "nodes": result.nodes_explored,
                "columns": result.columns_generated,
                "status": result.status.id(),
            });
            println!("{summary}");
            Ok(())
        }
        Command::Eval { policy, data, zero_one_labels, nuisance, scenario, mc, seed } => {
            let doc = PolicyDocument::load(&policy)?;
            if data.is_none() && scenario.is_none() {
                return Err(Error::Invalid("eval needs --data and/or --scenario".into()));
            }
            let pol = doc.policy();
            let mut report = EvalReport {
                empirical_objective: None,
                policy_value: None,
                policy_value_se: None,
                regret: None,
                regret_se: None,
                mc_samples: 0,
                seed: None,
            };
            if let Some(path) = data {
                let dataset = load_csv(&path, zero_one_labels)?;
                if dataset.d() != doc.d {
                    return Err(Error::Dimension { expected: doc.d, got: dataset.d() });
                }
                let spec = nuisance.or(doc.nuisance.clone()).unwrap_or_else(|| "kernel+logistic".into());
                let scores = scores_for(&dataset, doc.method()?, &spec, doc.scale_psi.unwrap_or(false))?;
                report.empirical_objective = Some(empirical_objective(&pol, &dataset, &scores)?);
            }
            if let Some(id) = scenario {
                let sc: Scenario = id.parse()?;
                let value = policy_value_mc_se(&pol, sc, mc, seed)?;
                let reg = regret_se(&pol, sc, mc, seed)?;
                report.policy_value = Some(value.mean);
                report.policy_value_se = Some(value.se);
                report.regret = Some(reg.mean);
                report.regret_se = Some(reg.se);
                report.mc_samples = mc;
                report.seed = Some(seed);
            }
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Render { policy, format, resolution } => {
            let doc = PolicyDocument::load(&policy)?;
            let text = match format {
                Format::Text => render_text(&doc),
                Format::Dot => render_dot(&doc),
                Format::Json => doc.to_json(),
                Format::Grid => render_grid(&doc, resolution)?,
            };
            print!("{text}");
            Ok(())
        }
        Command::Oracle { input, penalty, flip } => {
            let dataset = load_csv(&input.data, input.zero_one_labels)?;
            let scores = scores_for(&dataset, input.method.into(), &input.nuisance, input.scale_psi)?;
            let labelled = if flip { dataset.with_flipped_labels() } else { dataset.clone() };
            let (boxes, penalized) =
                exhaustive_optimum(&labelled, &scores, input.max_boxes, penalty, DEFAULT_SPAN_GUARD)?;
            let out = serde_json::json!({
                "objective": penalized - penalty * boxes.len() as f64,
                "penalized_objective": penalized,
                "boxes": boxes,
                "flipped": flip,
            });
            println!("{out}");
            Ok(())
        }
    }
}

/// Decision for `x` read off the rendered rules, for checking renderings.
pub fn decide_from_text(text: &str, x: &[f64]) -> Option<Label> {
    let parse_decision = |s: &str| match s.trim() {
        "+1" => Some(Label::Plus),
        "-1" => Some(Label::Minus),
        _ => None,
    };
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("ALWAYS: assign ") {
            return parse_decision(rest);
        }
        if let Some(rest) = line.strip_prefix("ELSE IF ").or_else(|| line.strip_prefix("IF ")) {
            let (cond, decision) = rest.rsplit_once(" THEN ")?;
            let holds = cond == "TRUE"
                || cond.split(" AND ").all(|atom| {
                    let (name, range) = atom.split_once(" in ").expect("atom has a range");
                    let t: usize = name.trim_start_matches('x').parse().expect("default feature names");
                    let range = range.trim_start_matches('[').trim_end_matches(']');
                    let (lo, hi) = range.split_once(", ").expect("two bounds");
                    let (lo, hi): (f64, f64) = (lo.parse().unwrap(), hi.parse().unwrap());
                    lo <= x[t] && x[t] <= hi
                });
            if holds {
                return parse_decision(decision);
            }
        } else if let Some(rest) = line.strip_prefix("ELSE ") {
            return parse_decision(rest);
        }
    }
    None
}
