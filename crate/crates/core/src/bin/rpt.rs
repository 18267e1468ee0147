use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rpt::executor::{execute, PlanDocument, SemiJoinMode};
use rpt::harness::{
    class_name, robustness_sweep, verify, write_report, PlanCount, ReportFormat, Shape,
    SweepConfig, Variant, DEFAULT_ORACLE_BUDGET, DEFAULT_TIMEOUT_MULTIPLE,
};
use rpt::joingraph::{
    classify_acyclicity, derive_schedule, find_gamma_triangle, largest_root, small2large_schedule,
};
use rpt::query::{read_query, Instance, Query};
use rpt::synth::SyntheticSpec;

#[derive(Parser)]
#[command(
    name = "rpt",
    version,
    about = "Predicate transfer join engine and robustness harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance (CSVs plus query.json).
    Gen(GenArgs),
    /// Print the join graph, acyclicity class and transfer schedules.
    Analyze { query: PathBuf },
    /// Execute one plan and print its statistics as JSON.
    Run(RunArgs),
    /// Check the executor against the nested-loop oracle.
    Verify {
        query: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: usize,
        #[arg(long)]
        json: bool,
    },
    /// Execute sampled plans under each variant and report robustness factors.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// unsafe3, blowup3, chain, star, triangle or fig2
    generator: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sel: Option<f64>,
    #[arg(long, env = "RPT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    query: PathBuf,
    plan: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SemiJoinMode>,
    /// Comma-separated: skip-trivial, skip-backward
    #[arg(long, value_delimiter = ',')]
    prune: Vec<String>,
    /// Write the join output as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    query: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "baseline,rpt-exact,rpt-bloom"
    )]
    variants: Vec<Variant>,
    /// left_deep, bushy, or both
    #[arg(long, default_value = "both")]
    shape: String,
    /// A number, formula, or all
    #[arg(long, default_value = "formula")]
    plans: PlanCount,
    #[arg(long, env = "RPT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MULTIPLE)]
    timeout_multiple: f64,
    /// Record wall-clock seconds per plan.
    #[arg(long)]
    wall_time: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<SemiJoinMode, String> {
    match s {
        "exact" => Ok(SemiJoinMode::Exact),
        "bloom" => Ok(SemiJoinMode::Bloom),
        _ => Err(format!("unknown mode {s}")),
    }
}

enum Failure {
    Usage(String),
    Property,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<(Query, Instance), Failure> {
    let query = read_query(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let inst = query.load_instance(base)?;
    Ok((query, inst))
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen(a) => {
            let spec = SyntheticSpec::parse(&a.generator, a.k, a.n, a.sel, a.seed)?;
            let (_, inst) = spec.write_to(&a.out)?;
            println!("wrote {} relations to {}", inst.len(), a.out.display());
        }
        Command::Analyze { query } => analyze(&query)?,
        Command::Run(a) => {
            let (query, inst) = load(&a.query)?;
            let text = std::fs::read_to_string(&a.plan)?;
            let doc: PlanDocument = serde_json::from_str(&text)?;
            let mode = a.mode.or(doc.mode).unwrap_or_default();
            let mut prune = doc.prune.unwrap_or_default();
            for p in &a.prune {
                match p.as_str() {
                    "skip-trivial" => prune.skip_trivial = true,
                    "skip-backward" => prune.skip_backward_aligned = true,
                    other => return Err(Failure::Usage(format!("unknown prune flag {other}"))),
                }
            }
            let (out, stats) = execute(&query, &inst, &doc.plan, mode, prune)?;
            if let Some(path) = a.out {
                out.save_csv(path)?;
            }
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Verify {
            query,
            budget,
            json,
        } => {
            let (q, inst) = load(&query)?;
            let report = verify(&q, &inst, budget)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            if !report.passed() {
                return Err(Failure::Property);
            }
        }
        Command::Sweep(a) => {
            let (q, inst) = load(&a.query)?;
            let shapes = match a.shape.as_str() {
                "both" => vec![Shape::LeftDeep, Shape::Bushy],
                s => vec![s.parse::<Shape>().map_err(Failure::Usage)?],
            };
            let cfg = SweepConfig {
                variants: a.variants,
                shapes,
                plans: a.plans,
                seed: a.seed,
                timeout_multiple: a.timeout_multiple,
                wall_time: a.wall_time,
            };
            let report = robustness_sweep(&q, &inst, &cfg)?;
            match a.out {
                Some(path) => {
                    write_report(
                        &report,
                        a.format,
                        std::io::BufWriter::new(std::fs::File::create(&path)?),
                    )?;
                    for s in &report.summary {
                        let rf = s.rf.map_or("undefined".to_string(), |v| format!("{v:.4}"));
                        eprintln!(
                            "{} {}: {} plans, rf {rf}",
                            s.variant.as_str(),
                            s.shape.as_str(),
                            s.plans
                        );
                    }
                }
                None => write_report(&report, a.format, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn analyze(path: &Path) -> Result<(), Failure> {
    let query = read_query(path)?;
    let g = query.join_graph()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cards = match query.load_instance(base) {
        Ok(raw) => query.prepare(&raw)?.cardinalities(&g),
        Err(_) => vec![1; g.len()],
    };
    println!("relations:");
    for (v, c) in g.vertices().iter().zip(&cards) {
        let attrs: Vec<&str> = v.schema.attrs().iter().map(|a| a.as_str()).collect();
        println!("  {}({}) rows={c}", v.name, attrs.join(","));
    }
    println!("edges:");
    for e in g.edges() {
        let shared: Vec<&str> = e.shared.iter().map(|a| a.as_str()).collect();
        println!(
            "  {}-{} on {} (weight {})",
            g.name(e.a),
            g.name(e.b),
            shared.join(","),
            e.weight()
        );
    }
    let class = classify_acyclicity(&g);
    println!("acyclicity: {}", class_name(class));
    if let Some(w) = find_gamma_triangle(&g) {
        let names = |v: &[rpt::relstore::AttributeId]| {
            v.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",")
        };
        println!(
            "gamma pattern: {} {} {} via x={} y={} z={}",
            w.r,
            w.s,
            w.t,
            names(&w.x),
            names(&w.y),
            names(&w.z)
        );
    }
    let tree = largest_root(&g, &cards)?;
    println!("largest-root tree: {tree}");
    println!("{}", derive_schedule(&tree));
    println!("small2large:\n{}", small2large_schedule(&g, &cards)?);
    Ok(())
}
