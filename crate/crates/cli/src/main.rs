use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::info;

use kgtrav::harness::{
    load_dataset, run_ablation, run_dir_for, run_eval, subsample, AppConfig, DatasetFormat,
    EvalOptions, KgSpec, Searcher,
};
use kgtrav::kg::{EntityId, RelationId};
use kgtrav::kgi::transport::purge_cache;
use kgtrav::kgi::{Direction, Federation};
use kgtrav::llm::{HttpBackend, LlmBackend, ScriptedOracle, Transcript};
use kgtrav::search::{run_mode, Mode, SearchConfig, TreeDump};

#[derive(Parser)]
#[command(name = "kgtrav", version, about = "Question answering over knowledge graphs with LLM-guided tree search")]
struct Cli {
    /// TOML config file; environment variables override its values.
    #[arg(long, global = true, env = "KGTRAV_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question.
    Ask(AskArgs),
    /// Evaluate a dataset and write a report.
    Eval(EvalArgs),
    /// Summarize a tree dump, or render it as Graphviz.
    InspectTree {
        dump: PathBuf,
        #[arg(long)]
        dot: bool,
    },
    /// Call one knowledge-graph operation and print the result as JSON.
    KgProbe(ProbeArgs),
    /// Manage the on-disk response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Purge,
}

#[derive(Args, Clone)]
struct LlmArgs {
    /// Replay a scripted transcript instead of calling the HTTP model.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Knowledge graphs: wikidata, musicbrainz or memory:<triples file>. Repeatable.
    #[arg(long = "kg")]
    kgs: Vec<KgSpec>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_expansions: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Tree)]
    mode: ModeArg,
}

#[derive(Args)]
struct AskArgs {
    question: String,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    llm: LlmArgs,
    /// Write the search tree as JSON.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "simple-jsonl")]
    format: DatasetFormat,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    llm: LlmArgs,
    /// Evaluate a uniform random subsample of this size.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 233)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Base directory for run artifacts.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Start over instead of resuming a partial report.
    #[arg(long)]
    fresh: bool,
    /// Run with and without backtracking and report the difference.
    #[arg(long)]
    ablation: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeOp {
    Initialize,
    Relations,
    Edges,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    kg: KgSpec,
    #[arg(long, value_enum)]
    op: ProbeOp,
    /// Relation id for `edges`; prefix with `^` for the inverse direction.
    #[arg(long)]
    relation: Option<String>,
    #[command(flatten)]
    llm: LlmArgs,
    /// The query for `initialize`, entity ids otherwise.
    #[arg(required = true)]
    args: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Tree,
    Chain,
    NoBacktrack,
}

impl From<ModeArg> for Mode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Tree => Mode::Tree,
            ModeArg::Chain => Mode::Chain,
            ModeArg::NoBacktrack => Mode::NoBacktrack,
        }
    }
}

fn search_config(base: &SearchConfig, args: &SearchArgs) -> SearchConfig {
    let mut config = base.clone();
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    if let Some(d) = args.max_depth {
        config.max_depth = d;
    }
    if let Some(e) = args.max_expansions {
        config.max_expansions = e;
    }
    config
}

fn llm(config: &AppConfig, args: &LlmArgs) -> Result<Box<dyn LlmBackend>> {
    Ok(match &args.transcript {
        Some(path) => Box::new(ScriptedOracle::from_transcript(Transcript::load(path)?)),
        None => {
            if config.llm.endpoint.is_empty() {
                bail!("no model endpoint: set TOT_LLM_ENDPOINT, [llm].endpoint, or pass --transcript");
            }
            Box::new(HttpBackend::new(config.llm.clone())?)
        }
    })
}

fn federation(config: &AppConfig, specs: &[KgSpec]) -> Result<Federation> {
    config
        .build_federation(specs)
        .context("cannot set up knowledge graphs")
}

fn ask(config: &AppConfig, args: AskArgs) -> Result<()> {
    let kgs = federation(config, &args.search.kgs)?;
    let llm = llm(config, &args.llm)?;
    let search = search_config(&config.search, &args.search);
    let outcome = run_mode(&args.question, &kgs, llm.as_ref(), &search, args.search.mode.into())?;
    if let Some(path) = &args.dump {
        std::fs::write(path, TreeDump::from_outcome(&outcome).to_json())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    println!("{}", outcome.answer);
    info!(
        nodes = outcome.tree.len(),
        expansions = outcome.tree.expansions_used(),
        value = ?outcome.value,
        stop = ?outcome.stop,
        "search finished"
    );
    Ok(())
}

fn eval(config: &AppConfig, args: EvalArgs) -> Result<()> {
    let mut dataset = load_dataset(&args.dataset, args.format)
        .with_context(|| format!("cannot load {}", args.dataset.display()))?;
    if let Some(n) = args.sample {
        dataset = subsample(&dataset, n, args.seed);
    }
    let kgs = federation(config, &args.search.kgs)?;
    let llm = llm(config, &args.llm)?;
    let search = search_config(&config.search, &args.search);
    let solver = Searcher {
        kgs: &kgs,
        llm: llm.as_ref(),
        config: search.clone(),
    };
    let base = args.run_dir.clone().unwrap_or_else(|| config.eval.run_dir.clone());

    if args.ablation {
        let report = run_ablation(&dataset, &solver, &search, Some(&base))?;
        println!(
            "with backtracking {:.3}  without {:.3}  delta {:+.3}  improved {}  regressed {}",
            report.with_backtracking.mean_em_in,
            report.without_backtracking.mean_em_in,
            report.delta,
            report.improved.len(),
            report.regressed.len()
        );
        return Ok(());
    }

    let mode: Mode = args.search.mode.into();
    let run_dir = run_dir_for(&base, &search, mode);
    if args.fresh && run_dir.exists() {
        std::fs::remove_dir_all(&run_dir)?;
    }
    let options = EvalOptions {
        mode,
        run_dir: Some(run_dir.clone()),
        workers: args.workers.unwrap_or(config.eval.workers),
        resume: !args.fresh,
    };
    let report = run_eval(&dataset, &solver, &search, &options)?;
    let failed = report.results.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} questions  EM-in {:.3}  failed {}  report {}",
        report.results.len(),
        report.mean_em_in,
        failed,
        run_dir.join("report.json").display()
    );
    Ok(())
}

fn inspect(path: &Path, dot: bool) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let dump = TreeDump::from_json(&text).context("not a tree dump")?;
    if dot {
        print!("{}", dump.to_dot());
        return Ok(());
    }
    println!("query: {}", dump.query);
    println!(
        "answer: {}  (node {:?}, value {:?}, stop {:?}, {} expansions, {} nodes)",
        dump.outcome.answer,
        dump.outcome.answer_node,
        dump.outcome.value,
        dump.outcome.stop,
        dump.outcome.expansions,
        dump.nodes.len()
    );
    for node in &dump.nodes {
        let indent = "  ".repeat(node.depth);
        let action = node.action_text.as_deref().unwrap_or("(root)");
        println!("{indent}#{} [{} v={:.2}] {action}", node.id, node.state, node.value);
    }
    Ok(())
}

fn probe(config: &AppConfig, args: ProbeArgs) -> Result<()> {
    let kg = config.build_kg(&args.kg)?;
    let source = kg.source().clone();
    let ids: Vec<EntityId> = args.args.iter().map(|id| EntityId::new(&source, id.as_str())).collect();
    let json = match args.op {
        ProbeOp::Initialize => {
            let llm = llm(config, &args.llm)?;
            let kgs = Federation::new(vec![kg])?;
            let init = kgs.multi_initialize(&args.args.join(" "), llm.as_ref())?;
            for warning in &init.warnings {
                eprintln!("warning: {warning}");
            }
            serde_json::to_string_pretty(&init.entities)?
        }
        ProbeOp::Relations => serde_json::to_string_pretty(&kg.get_relations(&ids)?)?,
        ProbeOp::Edges => {
            let Some(relation) = args.relation.as_deref() else {
                bail!("--op edges needs --relation");
            };
            let (direction, local) = match relation.strip_prefix('^') {
                Some(rest) => (Direction::Inverse, rest),
                None => (Direction::Forward, relation),
            };
            let relation = RelationId::new(&source, local);
            serde_json::to_string_pretty(&kg.get_edges(&ids, &relation, direction)?)?
        }
    };
    println!("{json}");
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let config = AppConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Ask(args) => ask(&config, args),
        Command::Eval(args) => eval(&config, args),
        Command::InspectTree { dump, dot } => inspect(&dump, dot),
        Command::KgProbe(args) => probe(&config, args),
        Command::Cache {
            action: CacheAction::Purge,
        } => {
            let removed = purge_cache(&config.cache.dir)?;
            println!("removed {removed} cached responses from {}", config.cache.dir.display());
            Ok(())
        }
    }
}
