//! Command-line runner: validation, simulation to CSV, verification to JSON.
//!
//! Exit codes: 0 success, 1 a verification test failed, 2 the input could not
//! be read or parsed, 3 the input parsed but violates an invariant.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::graph::{validate, GraphError, MetricGraph};
use crate::graphflow::{ExperimentConfig, GraphFlowError, LatticePoint};
use crate::noise::{NoiseConfig, NoiseError, NoiseField};
use crate::sbmflow::{flow, Driver, FlowError, SkewParams};
use crate::starflow::{StarConfig, StarError, StarFlow, StarPoint};
use crate::verify::{run_suite, VerifyError, SUITES};

#[derive(Parser, Debug)]
#[command(name = "graphflow", version, about = "Seeded lattice flows on metric graphs")]
pub struct Cli {
    /// Re-salt one stream namespace (e.g. `w/0`, `sbm-zero/0`, `v/a/side`) before simulating.
    #[arg(long, global = true, value_name = "NAMESPACE")]
    pub corrupt: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a graph spec and print the validation report as JSON.
    Validate {
        /// Graph spec JSON file.
        graph: PathBuf,
    },
    /// Emit the level-`level` increments of the noise as CSV (s, t, channel, increment).
    NoiseAudit {
        /// Noise config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Dyadic level of the audited cells.
        #[arg(long)]
        level: u32,
        /// Number of channels to audit.
        #[arg(long, default_value_t = 1)]
        channels: u32,
        #[command(flatten)]
        out: Output,
    },
    /// Simulate skew Brownian flows from several starts as CSV.
    SimulateSbm(SbmArgs),
    /// Simulate a star-graph flow of kernels as CSV.
    SimulateStar(StarArgs),
    /// Evaluate the global kernel of an experiment config at its queries as CSV.
    SimulateGraph {
        /// Experiment config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Number of realizations, seeds `noise.seed + i`.
        #[arg(long, default_value_t = 1)]
        n: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Run a verification suite and print its JSON report.
    Verify(VerifyArgs),
    /// Alias for `verify --suite sbm`.
    SbmVerify(AliasArgs),
    /// Alias for `verify --suite graph`.
    GraphVerify(AliasArgs),
}

#[derive(Args, Debug)]
pub struct Output {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SbmArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Lattice step, a power of two `2^-m`.
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of realizations, seeds `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub n: u64,
    /// Comma-separated start positions, rounded to the nearest site.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub starts: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Emit rows every this much time after `s`; only at `t` when absent.
    #[arg(long)]
    pub every: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: Output,
}

#[derive(Args, Debug, Serialize)]
pub struct StarArgs {
    /// Star spec JSON file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub n: u64,
    /// Start edge index; the center when absent.
    #[arg(long)]
    pub x_edge: Option<usize>,
    /// Start radius on `x_edge`.
    #[arg(long, default_value_t = 0.0)]
    pub x_r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long)]
    pub every: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: Output,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// One of noise, sbm, star, graph, all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[command(flatten)]
    pub common: AliasArgs,
}

#[derive(Args, Debug)]
pub struct AliasArgs {
    /// Sample size of statistical tests; exact tests use at most 1000 seeds.
    #[arg(long, default_value_t = 100_000)]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Holm-correct the statistical tests.
    #[arg(long)]
    pub strict: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn parse(m: impl Into<String>) -> Self {
        CliError { code: 2, message: m.into() }
    }

    fn invariant(m: impl Into<String>) -> Self {
        CliError { code: 3, message: m.into() }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::parse(e.to_string())
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::OutsideHorizon(..) => CliError::invariant(e.to_string()),
            _ => CliError::parse(e.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::OffGrid(..) | FlowError::OffLattice(..) | FlowError::TooFine(..) | FlowError::BadBeta(_) => {
                CliError::parse(e.to_string())
            }
            _ => CliError::invariant(e.to_string()),
        }
    }
}

impl From<StarError> for CliError {
    fn from(e: StarError) -> Self {
        match e {
            StarError::Json(_) | StarError::Graph(_) => CliError::parse(e.to_string()),
            StarError::Flow(f) => f.into(),
            _ => CliError::invariant(e.to_string()),
        }
    }
}

impl From<GraphFlowError> for CliError {
    fn from(e: GraphFlowError) -> Self {
        match e {
            GraphFlowError::Json(_)
            | GraphFlowError::Graph(_)
            | GraphFlowError::Resolution(_)
            | GraphFlowError::OffLattice(_) => CliError::parse(e.to_string()),
            GraphFlowError::Star(s) => s.into(),
            GraphFlowError::Flow(f) => f.into(),
            GraphFlowError::Noise(n) => n.into(),
            _ => CliError::invariant(e.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::UnknownSuite(_) => CliError::parse(e.to_string()),
            _ => CliError::invariant(e.to_string()),
        }
    }
}

/// Git blob hash of `bytes`: SHA-256 over `blob <len>\0` and the content.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<(String, Vec<u8>), CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    Ok((text, bytes))
}

fn emit(out: &Output, text: &str) -> Result<(), CliError> {
    match &out.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::invariant(format!("{}: {e}", p.display()))),
        None => {
            stdout(text);
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe ends the process quietly.
fn stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: {e}");
        std::process::exit(3);
    }
}

fn footer(csv: &mut String, seed: u64, delta: f64, config: &[u8]) {
    let _ = writeln!(csv, "# seed={seed}, delta={delta}, config_hash={}", content_hash(config));
}

fn with_corruption(field: NoiseField, corrupt: &Option<String>) -> NoiseField {
    match corrupt {
        Some(ns) => field.corrupted(ns, 1),
        None => field,
    }
}

fn level_of(delta: f64) -> Result<u32, CliError> {
    let m = -delta.log2();
    if delta > 0.0 && m.fract() == 0.0 && m >= 0.0 {
        Ok(m as u32)
    } else {
        Err(CliError::parse(format!("delta {delta} is not a power 2^-m")))
    }
}

/// Output tick grid `s + every, s + 2 every, …, t`, always ending at `t`.
fn grid(params: &SkewParams, s: f64, t: f64, every: Option<f64>) -> Result<(i64, Vec<i64>), CliError> {
    let (a, b) = (params.ticks(s)?, params.ticks(t)?);
    if b < a {
        return Err(CliError::parse(format!("t = {t} before s = {s}")));
    }
    let mut out = Vec::new();
    if let Some(e) = every {
        let h = params.ticks(e)?;
        if h <= 0 {
            return Err(CliError::parse("--every must be positive"));
        }
        let mut k = a + h;
        while k < b {
            out.push(k);
            k += h;
        }
    }
    out.push(b);
    Ok((a, out))
}

fn horizon(t: f64) -> (i64, i64) {
    (0, t.ceil().max(1.0) as i64)
}

fn run_validate(path: &Path) -> Result<i32, CliError> {
    let (text, _) = read_text(path)?;
    let g = MetricGraph::from_json(&text).map_err(CliError::parse)?;
    let report = validate(&g);
    stdout(&(serde_json::to_string_pretty(&report).unwrap() + "\n"));
    if report.is_valid() {
        Ok(0)
    } else {
        Err(CliError::invariant(format!("{} invariant violation(s)", report.violations.len())))
    }
}

fn run_noise_audit(config: &Path, level: u32, channels: u32, out: &Output, corrupt: &Option<String>) -> Result<i32, CliError> {
    let (text, bytes) = read_text(config)?;
    let cfg: NoiseConfig = serde_json::from_str(&text).map_err(|e| CliError::parse(e.to_string()))?;
    if level > cfg.n_max {
        return Err(CliError::parse(format!("level {level} above n_max {}", cfg.n_max)));
    }
    let field = with_corruption(NoiseField::from_config(&cfg)?, corrupt);
    let cells = 1i64 << level;
    let step = 1i64 << (cfg.n_max - level);
    let origin = cfg.horizon[0] * (1i64 << cfg.n_max);
    let dt = (-(level as f64)).exp2();
    let mut csv = String::from("s,t,channel,increment\n");
    for c in 0..channels {
        let path = field.channel_path(c);
        let total = (cfg.horizon[1] - cfg.horizon[0]) * cells;
        for k in 0..total {
            let a = origin + k * step;
            let inc = path.increment(a, a + step);
            let s = cfg.horizon[0] as f64 + k as f64 * dt;
            let _ = writeln!(csv, "{s},{},{c},{inc}", s + dt);
        }
    }
    footer(&mut csv, cfg.seed, dt, &bytes);
    emit(out, &csv)?;
    Ok(0)
}

fn run_sbm(a: &SbmArgs, corrupt: &Option<String>) -> Result<i32, CliError> {
    let m = level_of(a.delta)?;
    let params = SkewParams::new(a.beta, m)?;
    let mut sites: Vec<i64> = a.starts.iter().map(|&x| params.site(x)).collect::<Result<_, _>>()?;
    sites.sort_unstable();
    sites.dedup();
    let (s, ticks) = grid(&params, a.s, a.t, a.every)?;
    let end = *ticks.last().unwrap();
    let hz = horizon(a.t);
    let blocks: Vec<Result<String, CliError>> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            let seed = a.seed.wrapping_add(i);
            let field = with_corruption(NoiseField::new(seed, 2 * m, hz)?, corrupt);
            let d = Driver::new(&field, 0, m)?;
            let fl = flow(&params, &d, s, &sites, end)?;
            let mut out = String::new();
            for &k in &ticks {
                for (j, &x) in sites.iter().enumerate() {
                    let y = fl.value(x, k)?;
                    let l = crate::sbmflow::LOCAL_TIME_SCALE * params.delta() * fl.visits[(k - s) as usize][j] as f64;
                    let c = fl.coalesced_with(x, k)?;
                    let _ = writeln!(
                        out,
                        "{seed},{},{},{},{},{},{l},{}",
                        a.beta,
                        params.time(s),
                        params.position(x),
                        params.time(k),
                        params.position(y),
                        params.position(c)
                    );
                }
            }
            Ok(out)
        })
        .collect();
    let mut csv = String::from("seed,beta,s,x,t,Y,L,coalesced_with\n");
    for b in blocks {
        csv += &b?;
    }
    let config = serde_json::to_vec(a).unwrap();
    footer(&mut csv, a.seed, a.delta, &config);
    emit(&a.out, &csv)?;
    Ok(0)
}

fn run_star(a: &StarArgs, corrupt: &Option<String>) -> Result<i32, CliError> {
    let (text, bytes) = read_text(&a.config)?;
    let (spec, labeler) = StarConfig::from_json(&text)?.build()?;
    let m = level_of(a.delta)?;
    let params = SkewParams::new(0.0, m)?;
    let x = match a.x_edge {
        None => StarPoint::Center,
        Some(e) => {
            let r = params.site(a.x_r)?;
            if e >= spec.n() || r < 0 {
                return Err(CliError::parse(format!("no star point at edge {e}, r = {}", a.x_r)));
            }
            if r == 0 {
                StarPoint::Center
            } else {
                StarPoint::Edge { edge: e, r }
            }
        }
    };
    let (s, ticks) = grid(&params, a.s, a.t, a.every)?;
    let hz = horizon(a.t);
    let x_edge = a.x_edge.map_or("center".to_string(), |e| e.to_string());
    let blocks: Vec<Result<String, CliError>> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            let seed = a.seed.wrapping_add(i);
            let field = with_corruption(NoiseField::new(seed, 2 * m, hz)?, corrupt);
            let star = StarFlow::new(&field, spec.clone(), labeler.clone(), m)?;
            let mut out = String::new();
            let mut mu = vec![(x, 1.0)];
            let mut k = s;
            for &t in &ticks {
                mu = star.propagate(&mu, k, t)?;
                k = t;
                for &(p, w) in &mu {
                    let (e, r) = match p {
                        StarPoint::Center => ("center".to_string(), 0.0),
                        StarPoint::Edge { edge, r } => (edge.to_string(), params.position(r)),
                    };
                    let _ = writeln!(out, "{seed},{},{x_edge},{},{},{e},{r},{w}", params.time(s), a.x_r, params.time(t));
                }
            }
            Ok(out)
        })
        .collect();
    let mut csv = String::from("seed,s,x_edge,x_r,t,atom_edge,atom_r,weight\n");
    for b in blocks {
        csv += &b?;
    }
    let mut config = serde_json::to_vec(a).unwrap();
    config.extend_from_slice(&bytes);
    footer(&mut csv, a.seed, a.delta, &config);
    emit(&a.out, &csv)?;
    Ok(0)
}

fn run_graph(path: &Path, n: u64, out: &Output, corrupt: &Option<String>) -> Result<i32, CliError> {
    let (text, bytes) = read_text(path)?;
    let exp = ExperimentConfig::from_json(&text)?;
    let cfg = exp.build()?;
    let mut queries = exp
        .queries
        .iter()
        .map(|q| Ok((cfg.ticks(q.s)?, exp.point(&cfg, &q.x)?, cfg.ticks(q.t)?)))
        .collect::<Result<Vec<(i64, LatticePoint, i64)>, CliError>>()?;
    queries.sort_by_key(|q| (q.2, q.0));
    let g = &cfg.graph;
    let blocks: Vec<Result<String, CliError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = exp.noise.seed.wrapping_add(i);
            let field = with_corruption(NoiseField::from_config(&exp.noise)?.with_seed(seed), corrupt);
            let r = cfg.realize(&field)?;
            let mut out = String::new();
            for &(s, x, t) in &queries {
                for (p, w) in r.k(s, t, x)? {
                    let (id, coord) = match p {
                        LatticePoint::Vertex(v) => (g.vertices()[v].clone(), String::new()),
                        LatticePoint::Interior { edge, site } => (g.edges()[edge].id.clone(), (site as f64 * cfg.delta()).to_string()),
                    };
                    let dt = cfg.delta() * cfg.delta();
                    let _ = writeln!(out, "{seed},{},{},{id},{coord},{w}", s as f64 * dt, t as f64 * dt);
                }
            }
            Ok(out)
        })
        .collect();
    let mut csv = String::from("seed,s,t,atom_edge_or_vertex,atom_coord,weight\n");
    for b in blocks {
        csv += &b?;
    }
    footer(&mut csv, exp.noise.seed, exp.delta, &bytes);
    emit(out, &csv)?;
    Ok(0)
}

fn run_verify(suite: &str, a: &AliasArgs) -> Result<i32, CliError> {
    if !SUITES.contains(&suite) {
        return Err(CliError::parse(format!("unknown suite `{suite}`; expected one of {}", SUITES.join(", "))));
    }
    let report = run_suite(suite, a.n, a.seed, a.strict)?;
    for r in &report.reports {
        eprintln!("{}", r.line());
    }
    stdout(&(serde_json::to_string_pretty(&report).unwrap() + "\n"));
    Ok(if report.pass { 0 } else { 1 })
}

/// Caps rayon's pool from `GRAPHFLOW_THREADS`.
pub fn init_threads() {
    if let Some(k) = std::env::var("GRAPHFLOW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
    }
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let c = &cli.corrupt;
    match &cli.command {
        Command::Validate { graph } => run_validate(graph),
        Command::NoiseAudit { config, level, channels, out } => run_noise_audit(config, *level, *channels, out, c),
        Command::SimulateSbm(a) => run_sbm(a, c),
        Command::SimulateStar(a) => run_star(a, c),
        Command::SimulateGraph { config, n, out } => run_graph(config, *n, out, c),
        Command::Verify(v) => run_verify(&v.suite, &v.common),
        Command::SbmVerify(a) => run_verify("sbm", a),
        Command::GraphVerify(a) => run_verify("graph", a),
    }
}
