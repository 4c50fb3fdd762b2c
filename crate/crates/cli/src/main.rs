//! `barebones` command-line driver.
//!
//! Exit codes: 0 success, 1 assertion or oracle failure, 2 input error,
//! 3 guard refusal.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use barebones::combinat::{self, binomial, FamilyError, FamilyKind, SelectionFamily, DEFAULT_VERIFY_CAP};
use barebones::harness::{self, HarnessError, MetricsRow, Scenario};
use barebones::phys::{self, Name, Network, PhysicalConfig, Placement};

const OK: u8 = 0;
const FAILED: u8 = 1;
const INPUT: u8 = 2;
const GUARD: u8 = 3;

#[derive(Parser)]
#[command(name = "barebones", version, about = "SINR bare-bones network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over its seeds, writing metrics and traces.
    Run(RunArgs),
    /// Build or load a selection family and verify it exhaustively.
    VerifyFamily(FamilyArgs),
    /// Replay a trace through the SINR model and compare deliveries.
    CheckTrace(TraceArgs),
    /// Summarize a metrics CSV.
    Stats(StatsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use seeds `0..K` instead of the scenario's list.
    #[arg(long)]
    seeds: Option<u64>,
    /// Worker threads; runs are independent.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    round_limit: Option<u64>,
    /// Skip writing per-seed traces.
    #[arg(long)]
    no_trace: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["ssf", "selector"]))]
struct FamilyArgs {
    /// Name space size.
    #[arg(long = "N")]
    n: u32,
    /// Strongly selective family for sets of up to X names.
    #[arg(long, value_name = "X")]
    ssf: Option<u32>,
    /// Selector isolating Y of any X names.
    #[arg(long, num_args = 2, value_names = ["X", "Y"])]
    selector: Option<Vec<u32>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Verify this family (JSON list of sets, or a saved family) instead of building one.
    #[arg(long)]
    family_file: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Placement file; defaults to the placements in the trace header.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Physical configuration JSON; defaults to the trace header's.
    #[arg(long)]
    physical: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Round model for the scaling fit.
    #[arg(long, value_enum, default_value_t = Model::NLog2)]
    model: Model,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Model {
    /// `n log2^2 N`
    NLog2,
    /// `Δ`
    Delta,
    /// `log2^2 N`
    Log2,
}

/// An error with its exit code.
struct Fail(u8, String);

impl Fail {
    fn input(msg: impl Into<String>) -> Self {
        Fail(INPUT, msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::VerifyFamily(a) => cmd_verify_family(&a),
        Command::CheckTrace(a) => cmd_check_trace(&a),
        Command::Stats(a) => cmd_stats(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn harness_fail(e: HarnessError) -> Fail {
    match e {
        HarnessError::Scenario(_) | HarnessError::Phys(_) => Fail(INPUT, e.to_string()),
        _ => Fail(FAILED, e.to_string()),
    }
}

fn cmd_run(a: &RunArgs) -> Result<u8, Fail> {
    let text = fs::read_to_string(&a.scenario).map_err(|e| Fail::input(format!("{}: {e}", a.scenario.display())))?;
    let mut sc = Scenario::from_json(&text).map_err(|e| Fail::input(format!("{}: {e}", a.scenario.display())))?;
    if let Some(k) = a.seeds {
        sc.seeds = (0..k).collect();
    }
    if let Some(r) = a.round_limit {
        sc.round_limit = r;
    }
    sc.validate().map_err(|e| Fail::input(e.to_string()))?;
    if a.parallel == 0 {
        return Err(Fail::input("--parallel must be positive"));
    }
    fs::create_dir_all(&a.out).map_err(|e| Fail::input(format!("{}: {e}", a.out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.parallel)
        .build()
        .map_err(|e| Fail(FAILED, e.to_string()))?;
    let results: Vec<Result<MetricsRow, Fail>> =
        pool.install(|| sc.seeds.par_iter().map(|&seed| run_seed(&sc, seed, &a.out, !a.no_trace)).collect());
    let mut rows = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => {
                eprintln!("error: {}", f.1);
                first_err.get_or_insert(f.0);
            }
        }
    }
    rows.sort_by_key(|r| r.seed);
    let path = a.out.join("metrics.csv");
    let file = File::create(&path).map_err(|e| Fail::input(format!("{}: {e}", path.display())))?;
    harness::write_csv(BufWriter::new(file), &rows).map_err(|e| Fail(FAILED, e.to_string()))?;
    let ok = rows.iter().filter(|r| r.success).count();
    println!("{} runs, {ok} successful, metrics in {}", rows.len(), path.display());
    Ok(first_err.unwrap_or(OK))
}

fn run_seed(sc: &Scenario, seed: u64, out: &Path, trace: bool) -> Result<MetricsRow, Fail> {
    let net = harness::generate(&sc.generator, sc.name_space, sc.physical, seed).map_err(harness_fail)?;
    let net_path = out.join(format!("network-{seed}.txt"));
    fs::write(&net_path, phys::format_placements(&net.placements()))
        .map_err(|e| Fail::input(format!("{}: {e}", net_path.display())))?;
    let rec = if trace {
        let path = out.join(format!("trace-{seed}.jsonl"));
        let file = File::create(&path).map_err(|e| Fail::input(format!("{}: {e}", path.display())))?;
        harness::run_on(&net, sc, seed, Some(Box::new(BufWriter::new(file))))
    } else {
        harness::run_on(&net, sc, seed, None)
    };
    rec.map(|r| r.row).map_err(harness_fail)
}

fn cmd_verify_family(a: &FamilyArgs) -> Result<u8, Fail> {
    let kind = match (&a.ssf, &a.selector) {
        (Some(x), None) => FamilyKind::Ssf { x: *x },
        (None, Some(v)) => FamilyKind::Selector { x: v[0], y: v[1] },
        _ => return Err(Fail::input("give exactly one of --ssf and --selector")),
    };
    let (x, y) = match kind {
        FamilyKind::Ssf { x } => (x, None),
        FamilyKind::Selector { x, y } => (x, Some(y)),
    };
    if x == 0 || x > a.n || y.is_some_and(|y| y == 0 || y > x) {
        return Err(Fail::input(format!("require 1 <= y <= x <= N (N={}, x={x})", a.n)));
    }
    let count = binomial(a.n as u64, x as u64);
    if count > DEFAULT_VERIFY_CAP {
        return Err(Fail(GUARD, format!("C({}, {x}) = {count} subsets exceeds the verification cap {DEFAULT_VERIFY_CAP}", a.n)));
    }
    let family = match &a.family_file {
        Some(path) => load_family(path, a.n, kind)?,
        None => combinat::build(a.n, kind, a.seed, default_constant(kind)).map_err(family_fail)?,
    };
    let valid = match kind {
        FamilyKind::Ssf { x } => combinat::verify_ssf(&family, x),
        FamilyKind::Selector { x, y } => combinat::verify_selector(&family, x, y),
    }
    .map_err(family_fail)?;
    println!("length {}", family.len());
    println!("{}", if valid { "valid" } else { "invalid" });
    Ok(if valid { OK } else { FAILED })
}

fn default_constant(kind: FamilyKind) -> f64 {
    match kind {
        FamilyKind::Ssf { .. } => combinat::DEFAULT_C_SSF,
        FamilyKind::Selector { .. } => combinat::DEFAULT_C_SEL,
    }
}

fn family_fail(e: FamilyError) -> Fail {
    match e {
        FamilyError::Guard { .. } => Fail(GUARD, e.to_string()),
        FamilyError::InvalidParams(_) | FamilyError::OutOfRange(_) | FamilyError::Io(_) => Fail(INPUT, e.to_string()),
        _ => Fail(FAILED, e.to_string()),
    }
}

fn load_family(path: &Path, n: u32, kind: FamilyKind) -> Result<SelectionFamily, Fail> {
    let text = fs::read_to_string(path).map_err(|e| Fail::input(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| Fail::input(format!("{}: {e}", path.display()));
    // Either a bare list of sets or a family saved by the library.
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    let family = if value.is_array() {
        let sets: Vec<Vec<Name>> = serde_json::from_value(value).map_err(bad)?;
        SelectionFamily::new(n, kind, sets)
    } else {
        SelectionFamily::from_json(&text)
    }
    .map_err(family_fail)?;
    if family.name_space() != n {
        return Err(Fail::input(format!("family is over {} names, not {n}", family.name_space())));
    }
    Ok(family)
}

#[derive(Deserialize)]
struct Header {
    schema: u32,
    name_space: u32,
    config: PhysicalConfig,
    start: serde_json::Value,
    nodes: Vec<Placement>,
}

#[derive(Deserialize)]
struct RoundLine {
    round: u64,
    tx: Vec<Name>,
    rx: Vec<(Name, Name)>,
    wake: Vec<Name>,
}

fn initially_awake(start: &serde_json::Value, net: &Network) -> Result<BTreeSet<Name>, Fail> {
    let bad = || Fail::input(format!("unrecognized start mode {start}"));
    if start == "synchronized" {
        return Ok(net.names().iter().copied().collect());
    }
    if let Some(s) = start.get("uncoordinated") {
        return Ok(BTreeSet::from([s.as_u64().ok_or_else(bad)? as Name]));
    }
    if let Some(set) = start.get("partly") {
        return serde_json::from_value(set.clone()).map_err(|_| bad());
    }
    Err(bad())
}

fn cmd_check_trace(a: &TraceArgs) -> Result<u8, Fail> {
    let file = File::open(&a.trace).map_err(|e| Fail::input(format!("{}: {e}", a.trace.display())))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse = |no: usize, line: std::io::Result<String>| -> Result<serde_json::Value, Fail> {
        let line = line.map_err(|e| Fail::input(e.to_string()))?;
        serde_json::from_str(&line).map_err(|e| Fail::input(format!("line {}: {e}", no + 1)))
    };
    let Some((no, first)) = lines.next() else {
        println!("empty trace: nothing to replay");
        return Ok(OK);
    };
    let first = parse(no, first)?;
    if first["type"] != "header" {
        return Err(Fail::input("first record is not a header"));
    }
    let header: Header = serde_json::from_value(first).map_err(|e| Fail::input(format!("header: {e}")))?;
    if header.schema != 1 {
        return Err(Fail::input(format!("unsupported trace schema {}", header.schema)));
    }
    let placements = match &a.network {
        Some(p) => phys::read_placements(p).map_err(|e| Fail::input(e.to_string()))?,
        None => header.nodes.clone(),
    };
    let config = match &a.physical {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Fail::input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Fail::input(format!("{}: {e}", p.display())))?
        }
        None => header.config,
    };
    let net = Network::build(&placements, header.name_space, config).map_err(|e| Fail::input(e.to_string()))?;
    let mut awake = initially_awake(&header.start, &net)?;
    let mut rounds = 0u64;
    for (no, line) in lines {
        let value = parse(no, line)?;
        match value["type"].as_str() {
            Some("round") => {}
            Some("status" | "summary") => continue,
            _ => return Err(Fail::input(format!("line {}: unknown record type", no + 1))),
        }
        let r: RoundLine = serde_json::from_value(value).map_err(|e| Fail::input(format!("line {}: {e}", no + 1)))?;
        rounds += 1;
        if let Some(msg) = replay_round(&net, &r, &mut awake)? {
            println!("mismatch in round {}: {msg}", r.round);
            return Ok(FAILED);
        }
    }
    println!("{rounds} rounds replayed, deliveries match");
    Ok(OK)
}

/// Compare one recorded round against the model; `Some` describes a mismatch.
fn replay_round(net: &Network, r: &RoundLine, awake: &mut BTreeSet<Name>) -> Result<Option<String>, Fail> {
    for &v in &r.tx {
        if net.index(v).is_none() {
            return Err(Fail::input(format!("round {}: unknown transmitter {v}", r.round)));
        }
        if !awake.contains(&v) {
            return Ok(Some(format!("asleep node {v} transmitted")));
        }
    }
    let tx: BTreeSet<Name> = r.tx.iter().copied().collect();
    let mut expected = BTreeSet::new();
    for &u in net.names() {
        if tx.contains(&u) {
            continue;
        }
        for &v in &tx {
            if net.receives(v, u, &r.tx).map_err(|e| Fail::input(e.to_string()))? {
                expected.insert((u, v));
            }
        }
    }
    let recorded: BTreeSet<(Name, Name)> = r.rx.iter().copied().collect();
    if recorded != expected {
        let extra: Vec<_> = recorded.difference(&expected).collect();
        let missing: Vec<_> = expected.difference(&recorded).collect();
        return Ok(Some(format!("recorded but not received {extra:?}, received but not recorded {missing:?}")));
    }
    let woke: BTreeSet<Name> = expected.iter().map(|&(u, _)| u).filter(|u| !awake.contains(u)).collect();
    let recorded_wake: BTreeSet<Name> = r.wake.iter().copied().collect();
    if woke != recorded_wake {
        return Ok(Some(format!("wake-ups {recorded_wake:?}, expected {woke:?}")));
    }
    awake.extend(woke);
    Ok(None)
}

fn cmd_stats(a: &StatsArgs) -> Result<u8, Fail> {
    let text = fs::read_to_string(&a.metrics).map_err(|e| Fail::input(format!("{}: {e}", a.metrics.display())))?;
    let rows = harness::read_csv(&text).map_err(|e| Fail::input(e.to_string()))?;
    let mut groups: BTreeMap<(String, usize, u32), Vec<&MetricsRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.protocol.clone(), r.n, r.name_space)).or_default().push(r);
    }
    println!("protocol,n,name_space,runs,success_rate,mean_rounds,max_delta,max_random_bits,max_control_bits");
    let mut points: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((proto, n, ns), rs) in &groups {
        let ok = rs.iter().filter(|r| r.success).count();
        let mean = rs.iter().map(|r| r.rounds as f64).sum::<f64>() / rs.len() as f64;
        println!(
            "{proto},{n},{ns},{},{:.3},{mean:.1},{},{},{}",
            rs.len(),
            ok as f64 / rs.len() as f64,
            rs.iter().map(|r| r.delta).max().unwrap_or(0),
            rs.iter().map(|r| r.max_random_bits).max().unwrap_or(0),
            rs.iter().map(|r| r.max_control_bits).max().unwrap_or(0),
        );
        for r in rs.iter().filter(|r| r.success) {
            let l = (r.name_space.max(2) as f64).log2();
            let f = match a.model {
                Model::NLog2 => r.n as f64 * l * l,
                Model::Delta => r.delta.max(1) as f64,
                Model::Log2 => l * l,
            };
            points.entry(proto.clone()).or_default().push((f, r.rounds as f64));
        }
    }
    for (proto, pts) in points {
        match harness::scaling_fit(&pts) {
            Ok(f) => println!(
                "fit {proto}: C = {:.3}, max residual ratio {:.2}{}",
                f.c,
                f.max_residual_ratio,
                if f.flagged { " (flagged)" } else { "" }
            ),
            Err(e) => println!("fit {proto}: {e}"),
        }
    }
    Ok(OK)
}
