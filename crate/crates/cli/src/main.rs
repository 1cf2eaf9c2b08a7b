use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bilevel_core::editor::{
    aie, apply_edit, causal_trace, checkpoint, init_model, recall, select_edit_layer, synthetic_corpus, train_facts,
    EditConfig, EditRequest, ModelConfig, TrainBudget,
};
use bilevel_core::error::{Error, Result};
use bilevel_core::orchestrator::{
    arm_name, read_records, run_ablation, run_seed, score_map, summary_table, sweep, task_reference, write_outputs,
    RunConfig, RunRecord,
};

#[derive(Parser)]
#[command(
    name = "bilevel",
    version,
    about = "Bi-level optimisation loop with an editable toy knowledge model"
)]
struct Cli {
    /// Log level when RUST_LOG is unset (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seed of a config.
    Run {
        #[command(flatten)]
        target: Target,
        /// Seed to run; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured seed.
    Sweep {
        #[command(flatten)]
        target: Target,
    },
    /// Run the four edit/dynamic-temperature arms over every seed.
    Ablate {
        #[command(flatten)]
        target: Target,
    },
    /// Train a toy model and write its average indirect-effect grid.
    Trace(TraceArgs),
    /// Train a toy model, apply edit batches and report recall and retention.
    EditDemo(DemoArgs),
    /// Summaries, scores and curves from saved records.
    Report {
        /// One or more records.jsonl files.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Target {
    /// TOML run config; relative task paths resolve against its directory.
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir or runs/<config name>.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, default_value_t = 48)]
    facts: usize,
    #[arg(long, default_value_t = 4)]
    relations: usize,
    #[arg(long, default_value_t = 12)]
    objects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the smaller two-layer model.
    #[arg(long)]
    compact: bool,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Load this checkpoint instead of training. The corpus flags must match
    /// the one it was trained on.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Save the trained model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Noise scale in units of the embedding standard deviation.
    #[arg(long, default_value_t = 3.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    window: usize,
    /// Number of facts to trace.
    #[arg(long, default_value_t = 16)]
    traced: usize,
    #[arg(long, short, default_value = "aie.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    batches: usize,
    /// Per-batch CSV of recall and retention.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn load_config(target: &Target) -> Result<(RunConfig, PathBuf, PathBuf)> {
    let config = RunConfig::load(&target.config)?;
    let base = target.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match (&target.out, &config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => {
            let stem = target
                .config
                .file_stem()
                .map_or("run".into(), |s| s.to_string_lossy().into_owned());
            PathBuf::from("runs").join(stem)
        }
    };
    Ok((config, base, out))
}

fn print_records(records: &[RunRecord]) {
    println!(
        "{:<16} {:>5} {:>6} {:>14} {:>7} {:>6}  stop",
        "arm", "seed", "iters", "final", "solved", "steps"
    );
    for r in records {
        let steps = r.steps.map_or("-".to_string(), |s| s.to_string());
        println!(
            "{:<16} {:>5} {:>6} {:>14.6e} {:>7} {:>6}  {:?}",
            arm_name(r),
            r.seed,
            r.rows.len(),
            r.final_objective,
            r.solved,
            steps,
            r.stop
        );
    }
}

fn finish(records: &[RunRecord], out: &Path) -> Result<()> {
    print_records(records);
    write_outputs(out, records)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn train(
    args: &CorpusArgs,
) -> Result<(
    bilevel_core::editor::SyntheticCorpus,
    bilevel_core::editor::ToyTransformer,
)> {
    let corpus = synthetic_corpus(args.facts, args.relations, args.objects, args.seed);
    let mut config = if args.compact {
        ModelConfig::compact()
    } else {
        ModelConfig::default()
    };
    config.vocab_size = corpus.vocab.len();
    let mut model = init_model(config, args.seed)?;
    let report = train_facts(&mut model, &corpus.facts, &TrainBudget::default())?;
    println!(
        "trained on {} facts: recall {:.3} after {} epochs",
        corpus.facts.len(),
        report.recall,
        report.epochs
    );
    Ok((corpus, model))
}

fn trace(args: &TraceArgs) -> Result<()> {
    let (corpus, model) = match &args.checkpoint {
        Some(p) => {
            let corpus = synthetic_corpus(
                args.corpus.facts,
                args.corpus.relations,
                args.corpus.objects,
                args.corpus.seed,
            );
            let model = checkpoint::load_file(p)?;
            if model.config().vocab_size < corpus.vocab.len() {
                return Err(Error::Config("checkpoint vocabulary is smaller than the corpus".into()));
            }
            (corpus, model)
        }
        None => train(&args.corpus)?,
    };
    if let Some(p) = &args.save_model {
        checkpoint::save_file(&model, p)?;
    }
    let n = args.traced.clamp(1, corpus.facts.len().max(1));
    let facts = &corpus.facts[..n];
    let sigma = args.noise * model.embedding_std();
    let grids = facts
        .iter()
        .enumerate()
        .map(|(i, f)| causal_trace(&model, f, sigma, args.window, args.corpus.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let grid = aie(&grids)?;
    let sel = select_edit_layer(&model, facts, sigma, args.window, args.corpus.seed)?;

    let mut w = csv::Writer::from_path(&args.out)?;
    let layers = grid.first().map_or(0, Vec::len);
    let mut header = vec!["position".to_string()];
    header.extend((0..layers).map(|l| format!("layer_{l}")));
    w.write_record(&header)?;
    for (pos, row) in grid.iter().enumerate() {
        let mut rec = vec![pos.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("mean total effect {:.4} over {n} facts", sel.mean_te);
    println!(
        "last-subject profile {:?}",
        sel.profile.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
    );
    println!("edit layer {}; wrote {}", sel.layer, args.out.display());
    Ok(())
}

fn edit_demo(args: &DemoArgs) -> Result<()> {
    let (corpus, mut model) = train(&args.corpus)?;
    let needed = args.batch * args.batches;
    if needed == 0 || needed >= corpus.facts.len() {
        return Err(Error::Config(format!(
            "need fewer edited facts ({needed}) than corpus facts ({})",
            corpus.facts.len()
        )));
    }
    let held = &corpus.facts[needed..];
    let sigma = 3.0 * model.embedding_std();
    let n_trace = held.len().min(16);
    let layer = select_edit_layer(&model, &held[..n_trace], sigma, 1, args.corpus.seed)?.layer;
    let base = recall(&model, held)?;
    println!("edit layer {layer}, held-out recall {base:.3}");

    let mut out = match &args.out {
        Some(p) => {
            let mut f = File::create(p)?;
            writeln!(f, "batch,edited,recalled,held_out_recall")?;
            Some(f)
        }
        None => None,
    };
    for b in 0..args.batches {
        let edits: Vec<EditRequest> = corpus.facts[b * args.batch..(b + 1) * args.batch]
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let pos = corpus.objects.iter().position(|o| *o == f.object).unwrap_or(0);
                EditRequest::new(f.clone(), corpus.objects[(pos + 1 + j) % corpus.objects.len()])
            })
            .collect();
        let outcome = apply_edit(&mut model, &edits, layer, &corpus.facts, &EditConfig::default())?;
        let r = recall(&model, held)?;
        println!(
            "batch {}: {}/{} edits recalled, held-out recall {r:.3}",
            b + 1,
            outcome.recalled,
            edits.len()
        );
        if let Some(f) = out.as_mut() {
            writeln!(f, "{},{},{},{r}", b + 1, edits.len(), outcome.recalled)?;
        }
    }
    Ok(())
}

fn report(paths: &[PathBuf], out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_records(BufReader::new(File::open(p)?))?);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    write_outputs(out, &records)?;
    let mut w = csv::Writer::from_path(out.join("scores.csv"))?;
    w.write_record(["arm", "task", "seed", "metric", "score"])?;
    for r in &records {
        let metric = r.metric.value().map_or("N/A".to_string(), |v| v.to_string());
        let score = score_map(r.metric, task_reference(&records, r.task))?;
        w.write_record([
            arm_name(r),
            &r.task.to_string(),
            &r.seed.to_string(),
            &metric,
            &score.to_string(),
        ])?;
    }
    w.flush()?;
    for row in summary_table(&records)? {
        let mean = row.mean.map_or("N/A".to_string(), |m| format!("{m:.6e}"));
        let se = row.std_error.map_or("N/A".to_string(), |s| format!("{s:.2e}"));
        println!(
            "{:<16} {:<18} runs {:>3}  solved {:>3}  metric {mean} ± {se}  score {:.1}",
            row.arm, row.task, row.runs, row.solved, row.mean_score
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { target, seed } => {
            let (config, base, out) = load_config(target)?;
            let seed = match seed {
                Some(s) => *s,
                None => *config.seeds.first().ok_or(Error::EmptyInput("seeds"))?,
            };
            finish(&[run_seed(&config, seed, &base)?], &out)
        }
        Command::Sweep { target } => {
            let (config, base, out) = load_config(target)?;
            finish(&sweep(&config, &base)?, &out)
        }
        Command::Ablate { target } => {
            let (config, base, out) = load_config(target)?;
            finish(&run_ablation(&config, &base)?, &out)
        }
        Command::Trace(args) => trace(args),
        Command::EditDemo(args) => edit_demo(args),
        Command::Report { records, out } => report(records, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
