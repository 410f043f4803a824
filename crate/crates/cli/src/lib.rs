//! The `grads` command line: offline indexing, demo selection, theory
//! checks, synthetic simulation and prompt assembly.
//!
//! Exit codes: 0 success, 1 property violation, 2 invalid input,
//! 3 dimension mismatch.

use std::ffi::OsString;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use grads_core::baselines::{Bm25Params, MatchField, MmrParams};
use grads_core::lsa::LsaNetwork;
use grads_core::prompt::assemble_prompt;
use grads_core::selector::{
    load_index, load_query, save_index, select, select_indexed, DemoIndex, Method, QueryEncoding,
    Ranker, SelectionResult, SelectionStatus, DEFAULT_K,
};
use grads_core::store::{
    load_network, load_projection, load_store, network_to_json, write_atomic, Projection, Store,
};
use grads_core::synth::{
    boundary_to_csv, config_echo, run_simulation, Preset, SimConfig, Tau,
};

pub mod verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIMENSION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "grads", version, about = "Gradient-flow demonstration selection")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Global {
    /// Demonstration store (JSON Lines).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Projection file; identity when omitted.
    #[arg(long, global = true)]
    pub projection: Option<PathBuf>,
    /// Multi-layer network file.
    #[arg(long, global = true)]
    pub network: Option<PathBuf>,
    /// Query encoding (JSON).
    #[arg(long, global = true)]
    pub query: Option<PathBuf>,
    /// Number of demonstrations to select.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// grads, bm25, cosine or mmr.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Layer index (1-based) within --network.
    #[arg(long, global = true)]
    pub layer: Option<usize>,
    /// Output file (directory for `simulate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Absolute correctness threshold; relative 0.1*|target| + 1e-6 when omitted.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub k1: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Task instruction placed at the top of the prompt.
    #[arg(long, global = true)]
    pub task: Option<String>,
    /// Write the assembled prompt to this file.
    #[arg(long, global = true)]
    pub emit_prompt: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Precompute the per-demo cache for a store and projection.
    Index,
    /// Rank demonstrations for a query.
    Select {
        /// Prebuilt index (grads only).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Text field BM25 matches against: input or input_output.
        #[arg(long, default_value = "input")]
        match_field: String,
    },
    /// Check gradients and amplification on seeded random instances.
    Verify {
        /// Largest embedding size drawn.
        #[arg(long, default_value_t = 4)]
        e: usize,
        /// Largest depth drawn.
        #[arg(long, default_value_t = 5)]
        layers: usize,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        /// Swap in the transposed key-query gradient (negative control).
        #[arg(long)]
        break_transpose: bool,
    },
    /// Train a small network on synthetic tasks and write flow curves and
    /// the relevance/knowledge scatter.
    Simulate {
        #[arg(long, default_value = "condition-passing")]
        preset: String,
        #[arg(long)]
        e: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Build the prompt for a saved selection.
    Assemble {
        #[arg(long)]
        selection: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn violation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VIOLATION,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<grads_core::Error> for CliError {
    fn from(e: grads_core::Error) -> Self {
        let code = match &e {
            e if e.is_dimension() => EXIT_DIMENSION,
            grads_core::Error::Diverged { .. } => EXIT_VIOLATION,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: grads_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::input(format!("--{flag} is required")))
}

fn read_store(g: &Global) -> CliResult<Store> {
    let p = required(&g.store, "store")?;
    with_path(p, load_store(p))
}

fn read_query(g: &Global) -> CliResult<QueryEncoding> {
    let p = required(&g.query, "query")?;
    with_path(p, load_query(p))
}

fn read_network(g: &Global) -> CliResult<Option<LsaNetwork>> {
    g.network
        .as_deref()
        .map(|p| with_path(p, load_network(p)))
        .transpose()
}

/// Projection from `--projection`, layer `--layer` of `--network`, or the
/// identity at dimension `dim`.
fn read_projection(g: &Global, dim: usize) -> CliResult<Projection> {
    if let Some(p) = &g.projection {
        if g.network.is_some() {
            return Err(CliError::input("--projection and --network are mutually exclusive"));
        }
        return with_path(p, load_projection(p));
    }
    if let Some(net) = read_network(g)? {
        let l = g.layer.unwrap_or(net.len());
        if l == 0 || l > net.len() {
            return Err(CliError::input(format!(
                "--layer {l} out of range 1..={}",
                net.len()
            )));
        }
        return Ok(Projection::new(net.layers()[l - 1].clone()));
    }
    Ok(Projection::identity(dim)?)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => with_path(p, write_atomic(p, text.as_bytes())),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|e| CliError::input(format!("stdout: {e}")))
        }
    }
}

pub fn cmd_index(g: &Global) -> CliResult<DemoIndex> {
    let out = required(&g.out, "out")?;
    let store = read_store(g)?;
    let proj = read_projection(g, store.dim())?;
    let index = DemoIndex::build(&store, &proj)?;
    with_path(out, save_index(&index, out))?;
    Ok(index)
}

fn ranker_params(g: &Global, match_field: &str) -> CliResult<(Bm25Params, MatchField, MmrParams)> {
    let d = Bm25Params::default();
    let bm25 = Bm25Params::new(g.k1.unwrap_or(d.k1()), g.b.unwrap_or(d.b()))?;
    let field: MatchField = match_field.parse()?;
    let mmr = MmrParams::new(g.lambda.unwrap_or(MmrParams::default().lambda()))?;
    Ok((bm25, field, mmr))
}

pub fn cmd_select(g: &Global, index: Option<&Path>, match_field: &str) -> CliResult<SelectionResult> {
    let store = read_store(g)?;
    let q = read_query(g)?;
    let k = g.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(CliError::input("--k must be at least 1"));
    }
    let method: Method = g.method.as_deref().unwrap_or("grads").parse()?;
    let (bm25, field, mmr) = ranker_params(g, match_field)?;
    if index.is_some() && method != Method::Grads {
        return Err(CliError::input("--index only applies to --method grads"));
    }
    if q.dim() != store.dim() {
        return Err(grads_core::Error::DimensionMismatch {
            context: "query x".into(),
            expected: store.dim(),
            found: q.dim(),
        }
        .into());
    }

    let res = match method {
        Method::Grads => {
            if let (Some(net), None) = (read_network(g)?, &g.projection) {
                let layer = g.layer.unwrap_or(net.len());
                select(&store, &q, k, Ranker::GradsLayer { net: &net, layer })?
            } else {
                let proj = read_projection(g, store.dim())?;
                match index {
                    Some(p) => {
                        let idx = with_path(p, load_index(p))?;
                        if let Some(e) = idx.entries().iter().find(|e| store.get(e.id()).is_none()) {
                            return Err(CliError::input(format!(
                                "{}: index entry {:?} is not in the store",
                                p.display(),
                                e.id()
                            )));
                        }
                        select_indexed(&idx, &q, k, &proj)?
                    }
                    None => select(&store, &q, k, Ranker::Grads(&proj))?,
                }
            }
        }
        Method::Bm25 => select(&store, &q, k, Ranker::Bm25 { params: bm25, field })?,
        Method::Cosine => select(&store, &q, k, Ranker::Cosine)?,
        Method::Mmr => select(&store, &q, k, Ranker::Mmr(mmr))?,
    };
    if res.status() == SelectionStatus::EmptyPool {
        eprintln!("warning: the store is empty; nothing selected");
    }
    emit(g.out.as_deref(), &(res.to_json() + "\n"))?;
    if let Some(p) = &g.emit_prompt {
        let prompt = build_prompt(g, &store, &q, &res)?;
        with_path(p, write_atomic(p, prompt.as_bytes()))?;
    }
    Ok(res)
}

fn build_prompt(g: &Global, store: &Store, q: &QueryEncoding, sel: &SelectionResult) -> CliResult<String> {
    let task = g
        .task
        .as_deref()
        .ok_or_else(|| CliError::input("--task is required to assemble a prompt"))?;
    let question = q
        .text()
        .ok_or_else(|| CliError::input("the query file has no \"text\" field for the question"))?;
    let demos = sel
        .selected()
        .iter()
        .map(|s| {
            store
                .get(s.id())
                .map(|r| (r.text_input().to_string(), r.text_output().to_string()))
                .ok_or_else(|| CliError::input(format!("selected id {:?} is not in the store", s.id())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(assemble_prompt(task, &demos, question))
}

pub fn cmd_assemble(g: &Global, selection: &Path) -> CliResult<String> {
    let store = read_store(g)?;
    let q = read_query(g)?;
    let text = std::fs::read_to_string(selection)
        .map_err(|e| CliError::input(format!("{}: {e}", selection.display())))?;
    let sel = with_path(selection, SelectionResult::parse(&text))?;
    if sel.query_id() != q.id() {
        return Err(CliError::input(format!(
            "selection is for query {:?}, query file has {:?}",
            sel.query_id(),
            q.id()
        )));
    }
    let prompt = build_prompt(g, &store, &q, &sel)?;
    let out = g.out.as_deref().or(g.emit_prompt.as_deref());
    emit(out, &prompt)?;
    Ok(prompt)
}

pub fn sim_config(g: &Global, preset: &str, e: Option<usize>, layers: Option<usize>) -> CliResult<SimConfig> {
    let preset: Preset = preset.parse()?;
    let mut cfg = SimConfig::preset(preset, g.seed.unwrap_or(0));
    if let Some(e) = e {
        if e == 0 {
            return Err(CliError::input("--e must be at least 1"));
        }
        if preset == Preset::ConditionPassing && e != 1 {
            return Err(CliError::input("the condition-passing preset is one-dimensional"));
        }
        cfg = cfg.with_e(e);
    }
    if let Some(l) = layers {
        if l == 0 {
            return Err(CliError::input("--layers must be at least 1"));
        }
        cfg.layers = l;
    }
    if let Some(t) = g.tau {
        cfg.tau = Tau::Absolute(t).validate()?;
    }
    Ok(cfg)
}

pub fn cmd_simulate(g: &Global, cfg: &SimConfig) -> CliResult<&'static str> {
    let dir = required(&g.out, "out")?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let out = run_simulation(cfg)?;
    let files = [
        ("flow_curve.csv", out.flow.to_csv()),
        ("boundary.csv", boundary_to_csv(&out.scatter)),
        ("config.json", config_echo(cfg, &out)),
        ("network.json", network_to_json(&out.net) + "\n"),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        with_path(&p, write_atomic(&p, body.as_bytes()))?;
    }
    let status = out.status();
    if status != "ok" {
        eprintln!("warning: an effective/ineffective group is empty; see config.json");
    }
    Ok(status)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Index => cmd_index(g).map(|_| ()),
        Command::Select { index, match_field } => {
            cmd_select(g, index.as_deref(), match_field).map(|_| ())
        }
        Command::Verify {
            e,
            layers,
            trials,
            break_transpose,
        } => {
            let cfg = verify::VerifyConfig {
                seed: g.seed.unwrap_or(0),
                max_e: *e,
                max_layers: *layers,
                trials: *trials,
                break_transpose: *break_transpose,
            };
            let report = verify::run(&cfg)?;
            print!("{}", report.summary());
            match report.first_failure() {
                None => Ok(()),
                Some(f) => Err(CliError::violation(f)),
            }
        }
        Command::Simulate { preset, e, layers } => {
            let cfg = sim_config(g, preset, *e, *layers)?;
            cmd_simulate(g, &cfg).map(|_| ())
        }
        Command::Assemble { selection } => cmd_assemble(g, selection).map(|_| ()),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
